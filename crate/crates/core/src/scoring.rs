//! Posterior scoring of model structures.
//!
//! The objective is the (unnormalized) log posterior of a model
//! structure given the data it has incorporated:
//!
//! * a structure prior `P(M) ∝ exp(-λ · DL · ln 2)` where `DL` is the
//!   description length of the structure in bits, and
//! * a marginal likelihood that integrates the multinomial parameters
//!   out against symmetric Dirichlet priors, evaluated per count table
//!   under the tracked usage counts.
//!
//! The data normalizer is constant over structures and omitted.

use std::collections::BTreeSet;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::count::{count_to_f64, Count};
use crate::error::{Error, Result};
use crate::hmm::{Hmm, HmmOp, State};
use crate::scfg::{Scfg, ScfgOp};

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    /// Symmetric Dirichlet concentration for every multinomial.
    pub alpha: f64,
    /// Weight λ on the description-length prior.
    pub prior_weight: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { alpha: 1.0, prior_weight: 1.0 }
    }
}

/// A decomposed log posterior. `log_posterior` is always the exact sum
/// of the prior and marginal terms, and
/// `log_prior = -λ · dl_bits · ln 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PosteriorScore {
    pub dl_bits: f64,
    pub log_prior: f64,
    pub log_marginal: f64,
    pub log_posterior: f64,
}

impl PosteriorScore {
    fn assemble(dl_bits: f64, log_marginal: f64, hyper: &Hyperparams) -> PosteriorScore {
        let log_prior = -hyper.prior_weight * dl_bits * LN_2;
        PosteriorScore { dl_bits, log_prior, log_marginal, log_posterior: log_prior + log_marginal }
    }
}

/// Closed form of the Dirichlet-multinomial marginal for one count
/// vector under a symmetric Dirichlet(α) prior:
/// `lnΓ(Kα) − lnΓ(Kα + n) + Σ_i [lnΓ(α + n_i) − lnΓ(α)]`.
///
/// Counts need not be integers.
pub fn log_dirichlet_multinomial(counts: &[f64], alpha: f64) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidOp("multinomial needs at least one category".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidOp(format!("alpha must be > 0, got {alpha}")));
    }
    if let Some(c) = counts.iter().find(|c| **c < 0.0) {
        return Err(Error::InvalidOp(format!("negative count {c}")));
    }
    let k = counts.len() as f64;
    let n: f64 = counts.iter().sum();
    let mut acc = ln_gamma(k * alpha) - ln_gamma(k * alpha + n);
    for c in counts {
        acc += ln_gamma(alpha + c) - ln_gamma(alpha);
    }
    Ok(acc)
}

fn table_marginal(counts: &[Count], alpha: f64) -> f64 {
    let counts: Vec<f64> = counts.iter().map(count_to_f64).collect();
    log_dirichlet_multinomial(&counts, alpha).expect("structural tables are valid multinomials")
}

/// Bits to encode an HMM structure by listing its entries:
/// `T·log2(Q) + E·log2(max(A,2))` with `T` transition entries, `Q`
/// states (including initial and final), `E` emission entries, and `A`
/// the alphabet size.
pub fn hmm_description_length(hmm: &Hmm) -> f64 {
    let q = hmm.num_states() as f64;
    let t = hmm.num_transition_entries() as f64;
    let e = hmm.num_emission_entries() as f64;
    let a = (hmm.alphabet().len() as f64).max(2.0);
    t * q.log2() + e * a.log2()
}

/// Bits to encode an SCFG structure: every nonterminal occurrence
/// (each LHS once, each RHS nonterminal once) costs `log2(max(N,2))`
/// and every lexical production additionally names its terminal for
/// `log2(max(A,2))`.
pub fn scfg_description_length(g: &Scfg) -> f64 {
    let n = (g.nonterminals().len() as f64).max(2.0);
    let a = (g.terminals().len() as f64).max(2.0);
    (g.nonterminal_occurrences() as f64) * n.log2() + (g.num_lexical() as f64) * a.log2()
}

fn hmm_marginal(hmm: &Hmm, alpha: f64) -> f64 {
    let mut acc = 0.0;
    for (_, table) in hmm.transition_tables() {
        let counts: Vec<Count> = table.values().copied().collect();
        acc += table_marginal(&counts, alpha);
    }
    for (_, table) in hmm.emission_tables() {
        let counts: Vec<Count> = table.values().copied().collect();
        acc += table_marginal(&counts, alpha);
    }
    acc
}

fn scfg_marginal(g: &Scfg, alpha: f64) -> f64 {
    g.lhs_set().iter().map(|lhs| table_marginal(&g.lhs_counts(lhs), alpha)).sum()
}

pub fn log_posterior_hmm(hmm: &Hmm, hyper: &Hyperparams) -> PosteriorScore {
    PosteriorScore::assemble(hmm_description_length(hmm), hmm_marginal(hmm, hyper.alpha), hyper)
}

pub fn log_posterior_scfg(g: &Scfg, hyper: &Hyperparams) -> PosteriorScore {
    PosteriorScore::assemble(scfg_description_length(g), scfg_marginal(g, hyper.alpha), hyper)
}

/// One transition or emission table of an HMM.
fn hmm_table_marginal(hmm: &Hmm, state: StateTable, alpha: f64) -> f64 {
    match state {
        StateTable::Trans(s) => hmm
            .transition_table(s)
            .map(|t| {
                let counts: Vec<Count> = t.values().copied().collect();
                table_marginal(&counts, alpha)
            })
            .unwrap_or(0.0),
        StateTable::Emit(s) => hmm
            .emission_table(s)
            .map(|t| {
                let counts: Vec<Count> = t.values().copied().collect();
                table_marginal(&counts, alpha)
            })
            .unwrap_or(0.0),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum StateTable {
    Trans(State),
    Emit(u32),
}

/// Applies a merge and scores the result by adjusting only the tables
/// the merge touches. Matches a full recomputation to within 1e-9.
pub fn rescore_hmm_op(
    hmm: &Hmm,
    op: &HmmOp,
    base: &PosteriorScore,
    hyper: &Hyperparams,
) -> Result<(Hmm, PosteriorScore)> {
    let HmmOp::Merge { q1, q2 } = *op;
    let merged = hmm.merge_states(State::Emit(q1), State::Emit(q2))?;

    let mut old_tables: BTreeSet<StateTable> = BTreeSet::new();
    old_tables.insert(StateTable::Emit(q1));
    old_tables.insert(StateTable::Emit(q2));
    old_tables.insert(StateTable::Trans(State::Emit(q1)));
    old_tables.insert(StateTable::Trans(State::Emit(q2)));
    for pred in hmm.predecessors(State::Emit(q1)).into_iter().chain(hmm.predecessors(State::Emit(q2))) {
        old_tables.insert(StateTable::Trans(pred));
    }

    let redirect = |s: State| if s == State::Emit(q2) { State::Emit(q1) } else { s };
    let new_tables: BTreeSet<StateTable> = old_tables
        .iter()
        .map(|t| match t {
            StateTable::Emit(s) => StateTable::Emit(if *s == q2 { q1 } else { *s }),
            StateTable::Trans(s) => StateTable::Trans(redirect(*s)),
        })
        .collect();

    let removed: f64 = old_tables.iter().map(|t| hmm_table_marginal(hmm, *t, hyper.alpha)).sum();
    let added: f64 = new_tables.iter().map(|t| hmm_table_marginal(&merged, *t, hyper.alpha)).sum();
    let log_marginal = base.log_marginal - removed + added;
    let score = PosteriorScore::assemble(hmm_description_length(&merged), log_marginal, hyper);
    Ok((merged, score))
}

/// Applies an SCFG operator and scores the result by adjusting only the
/// per-LHS tables it touches. Matches a full recomputation to within
/// 1e-9.
pub fn rescore_scfg_op(
    g: &Scfg,
    op: &ScfgOp,
    base: &PosteriorScore,
    hyper: &Hyperparams,
) -> Result<(Scfg, PosteriorScore)> {
    let (new_g, old_lhs, new_lhs) = match op {
        ScfgOp::Merge { keep, drop } => {
            let merged = g.merge_nonterminals(keep, drop)?;
            let mut old: BTreeSet<String> = g.lhss_mentioning(drop);
            old.insert(keep.clone());
            old.insert(drop.clone());
            let new: BTreeSet<String> = old
                .iter()
                .map(|l| if l == drop { keep.clone() } else { l.clone() })
                .collect();
            (merged, old, new)
        }
        ScfgOp::Chunk { seq } => {
            let (chunked, name) = g.chunk_auto(seq)?;
            let old = g.lhss_containing_seq(seq);
            let mut new = old.clone();
            new.insert(name);
            (chunked, old, new)
        }
    };

    let removed: f64 = old_lhs.iter().map(|l| table_marginal(&g.lhs_counts(l), hyper.alpha)).sum();
    let added: f64 =
        new_lhs.iter().map(|l| table_marginal(&new_g.lhs_counts(l), hyper.alpha)).sum();
    let log_marginal = base.log_marginal - removed + added;
    let score = PosteriorScore::assemble(scfg_description_length(&new_g), log_marginal, hyper);
    Ok((new_g, score))
}
