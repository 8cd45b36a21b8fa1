//! Word-class bigram models as constrained HMM merging.
//!
//! Each class is one emitting state; transition counts are class bigram
//! counts and emission counts are word counts within the class. Merging
//! two classes is exactly an HMM state merge, so induction reuses the
//! HMM machinery with chunk-free, unpruned candidates. Two criteria are
//! offered: the Bayesian posterior with automatic stopping, and a
//! likelihood-driven schedule that merges down to a target class count.

use std::collections::BTreeMap;

use crate::corpus::{Corpus, Tokenization};
use crate::count::Count;
use crate::error::{Error, Result};
use crate::hmm::{Hmm, HmmOp, State};
use crate::scoring::{log_posterior_hmm, Hyperparams};
use crate::search::{greedy_search, SearchConfig, SearchResult, Strategy, TraceOp, TraceStep};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ClassMode {
    /// Greedy search on the log posterior with automatic stopping.
    Bayes,
    /// At each step apply the merge with the least Viterbi
    /// log-likelihood loss; stop at exactly `target_k` classes.
    MlTarget,
}

/// A word-class model: a partition of the vocabulary plus the class
/// bigram HMM carrying its counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassModel {
    hmm: Hmm,
}

impl ClassModel {
    pub fn hmm(&self) -> &Hmm {
        &self.hmm
    }

    /// Class id -> (member words, total count). The partition is the
    /// emission support: every word belongs to exactly one class.
    pub fn classes(&self) -> BTreeMap<u32, (Vec<String>, Count)> {
        self.hmm
            .emission_tables()
            .map(|(state, table)| {
                let words: Vec<String> = table.keys().cloned().collect();
                let total: Count = table.values().copied().sum();
                (state, (words, total))
            })
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.hmm.emitting_states().len()
    }

    /// One line per class: `class <id>: word word ... # <total count>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, (words, total)) in self.classes() {
            out.push_str(&format!("class {id}: {} # {total}\n", words.join(" ")));
        }
        out
    }
}

/// Builds the initial model with one class per word type. Transition
/// counts come from adjacent word pairs (sentence boundaries map to the
/// initial and final states), weighted by sample counts.
pub fn build_class_hmm(corpus: &Corpus) -> Result<ClassModel> {
    if corpus.tokenization() != Tokenization::Words {
        return Err(Error::Config("class induction requires word tokenization".into()));
    }
    let vocab: Vec<&String> = corpus.alphabet().iter().collect();
    let class_of: BTreeMap<&String, u32> =
        vocab.iter().enumerate().map(|(i, w)| (*w, (i + 1) as u32)).collect();

    let mut hmm = Hmm::empty_with_alphabet(corpus.alphabet().clone(), vocab.len() as u32 + 1);
    for (tokens, count) in corpus.samples() {
        let mut prev = State::Initial;
        for word in tokens {
            let state = State::Emit(class_of[word]);
            hmm.bump_emission(class_of[word], word, *count);
            hmm.bump_transition(prev, state, *count);
            prev = state;
        }
        hmm.bump_transition(prev, State::Final, *count);
    }
    hmm.validate()?;
    Ok(ClassModel { hmm })
}

/// Induces word classes by merging. Returns the final model together
/// with the search result over the underlying class HMM.
pub fn induce_classes(
    corpus: &Corpus,
    hyper: &Hyperparams,
    mode: ClassMode,
    target_k: Option<usize>,
    cfg: &SearchConfig,
) -> Result<(ClassModel, SearchResult<Hmm>)> {
    let initial = build_class_hmm(corpus)?;
    let vocab_size = initial.num_classes();
    match mode {
        ClassMode::Bayes => {
            let cfg = SearchConfig {
                strategy: Strategy::Greedy,
                prune_hmm_pairs: false,
                ..cfg.clone()
            };
            let result = greedy_search(initial.hmm.clone(), hyper, &cfg)?;
            let model = ClassModel { hmm: result.final_model.clone() };
            Ok((model, result))
        }
        ClassMode::MlTarget => {
            let k = target_k.ok_or_else(|| Error::Config("ml_target mode needs a class count".into()))?;
            if k < 1 {
                return Err(Error::Config("target class count must be >= 1".into()));
            }
            if k > vocab_size {
                return Err(Error::Config(format!(
                    "target class count {k} exceeds vocabulary size {vocab_size}"
                )));
            }
            let mut hmm = initial.hmm.clone();
            let initial_score = log_posterior_hmm(&hmm, hyper);
            let mut trace: Vec<TraceStep<HmmOp>> = Vec::new();
            let mut step = 0usize;
            while hmm.emitting_states().len() > k {
                let mut best: Option<(u32, u32, Hmm, f64)> = None;
                for (a, b) in hmm.merge_candidates(false) {
                    let merged = hmm.merge_states(State::Emit(a), State::Emit(b))?;
                    let ll = merged.viterbi_log_likelihood();
                    if best.as_ref().is_none_or(|(_, _, _, best_ll)| ll > *best_ll) {
                        best = Some((a, b, merged, ll));
                    }
                }
                let (a, b, merged, _) = best.expect("more classes than target leaves candidates");
                step += 1;
                trace.push(TraceStep {
                    step,
                    op: TraceOp::Apply(HmmOp::Merge { q1: a, q2: b }),
                    score: log_posterior_hmm(&merged, hyper),
                    accepted: true,
                    beam_rank: None,
                });
                hmm = merged;
            }
            let final_score = log_posterior_hmm(&hmm, hyper);
            let result = SearchResult {
                final_model: hmm.clone(),
                initial_score,
                final_score,
                trace,
            };
            Ok((ClassModel { hmm }, result))
        }
    }
}
