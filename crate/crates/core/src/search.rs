//! Search over model structures.
//!
//! Candidates are operator applications; each is scored incrementally
//! against the current model and the strictly best-improving one is
//! taken. Greedy search falls back to short best-child chains when no
//! single step improves, to step over shallow local maxima. Beam search
//! keeps the best few unexpanded models in parallel, never re-expands a
//! canonical form, and stops once a neighborhood has been searched for
//! `patience` rounds without improving the best model found. Both are
//! deterministic: ties break by candidate order, never by evaluation
//! order.

use std::collections::HashSet;

use serde::Serialize;
use serde_json::json;

use crate::corpus::Corpus;
use crate::count::{count_from_int, Count};
use crate::error::{Error, Result};
use crate::hmm::{Hmm, HmmOp, State};
use crate::scfg::{Scfg, ScfgOp};
use crate::scoring::{
    log_posterior_hmm, log_posterior_scfg, rescore_hmm_op, rescore_scfg_op, Hyperparams,
    PosteriorScore,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub strategy: Strategy,
    /// Number of models expanded per beam round (1 behaves like greedy
    /// hill climbing with a rejection frontier).
    pub beam_width: usize,
    /// Greedy only: maximum depth of best-child chains tried when no
    /// single candidate improves.
    pub lookahead: usize,
    /// Beam only: expansion rounds without improvement before stopping.
    /// One round expands up to `beam_width` models.
    pub patience: usize,
    /// Hard cap on accepted steps (greedy) or expansion rounds (beam).
    pub max_steps: usize,
    /// SCFG only: longest subsequence considered for chunking.
    pub max_chunk_len: usize,
    /// SCFG only: minimum weighted occurrence count of a chunk candidate.
    pub min_chunk_occurrences: Count,
    /// HMM only: restrict merge pairs to those sharing an emitted symbol
    /// or a predecessor.
    pub prune_hmm_pairs: bool,
    /// Incorporate samples in batches of this size, searching to
    /// quiescence after each batch.
    pub online_batch: Option<usize>,
    /// Assert every incremental rescore against a full recomputation.
    pub verify_rescore: bool,
    /// Beam only: cap on the pool of unexpanded models.
    pub max_open: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            strategy: Strategy::Greedy,
            beam_width: 1,
            lookahead: 2,
            patience: 4,
            max_steps: 10_000,
            max_chunk_len: 4,
            min_chunk_occurrences: count_from_int(2),
            prune_hmm_pairs: false,
            online_batch: None,
            verify_rescore: false,
            max_open: 5_000,
        }
    }
}

/// What a trace record describes: an operator application or an
/// incorporation round of the on-line schedule.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceOp<O> {
    Apply(O),
    Incorporate { batch: usize, samples: usize },
}

#[derive(Clone, Debug)]
pub struct TraceStep<O> {
    pub step: usize,
    pub op: TraceOp<O>,
    pub score: PosteriorScore,
    pub accepted: bool,
    pub beam_rank: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SearchResult<M: MergeModel> {
    pub final_model: M,
    pub initial_score: PosteriorScore,
    pub final_score: PosteriorScore,
    pub trace: Vec<TraceStep<M::Op>>,
}

impl<M: MergeModel> SearchResult<M> {
    pub fn accepted_ops(&self) -> Vec<&M::Op> {
        self.trace
            .iter()
            .filter(|s| s.accepted)
            .filter_map(|s| match &s.op {
                TraceOp::Apply(op) => Some(op),
                TraceOp::Incorporate { .. } => None,
            })
            .collect()
    }
}

/// One JSON object per trace record, one record per line.
pub fn trace_to_jsonl<O: Serialize>(trace: &[TraceStep<O>]) -> String {
    let mut out = String::new();
    for step in trace {
        let op = match &step.op {
            TraceOp::Apply(op) => serde_json::to_value(op).expect("op serializes"),
            TraceOp::Incorporate { batch, samples } => {
                json!({"type": "incorporate", "args": {"batch": batch, "samples": samples}})
            }
        };
        let record = json!({
            "step": step.step,
            "op": op,
            "dl_bits": step.score.dl_bits,
            "log_prior": step.score.log_prior,
            "log_marginal": step.score.log_marginal,
            "log_posterior": step.score.log_posterior,
            "accepted": step.accepted,
            "beam_rank": step.beam_rank,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}

/// A model family the merging search can drive.
pub trait MergeModel: Clone {
    type Op: Clone + PartialEq + std::fmt::Debug + Serialize;

    fn incorporate(corpus: &Corpus) -> Result<Self>;
    fn add_sample(&mut self, tokens: &[String], count: Count);
    fn candidates(&self, cfg: &SearchConfig) -> Vec<Self::Op>;
    fn apply(&self, op: &Self::Op) -> Result<Self>;
    fn score(&self, hyper: &Hyperparams) -> PosteriorScore;
    fn rescore(
        &self,
        op: &Self::Op,
        base: &PosteriorScore,
        hyper: &Hyperparams,
    ) -> Result<(Self, PosteriorScore)>;
    fn canonical_key(&self) -> String;
}

impl MergeModel for Hmm {
    type Op = HmmOp;

    fn incorporate(corpus: &Corpus) -> Result<Self> {
        Hmm::incorporate(corpus)
    }

    fn add_sample(&mut self, tokens: &[String], count: Count) {
        Hmm::add_sample(self, tokens, count)
    }

    fn candidates(&self, cfg: &SearchConfig) -> Vec<HmmOp> {
        self.merge_candidates(cfg.prune_hmm_pairs)
            .into_iter()
            .map(|(q1, q2)| HmmOp::Merge { q1, q2 })
            .collect()
    }

    fn apply(&self, op: &HmmOp) -> Result<Self> {
        let HmmOp::Merge { q1, q2 } = *op;
        self.merge_states(State::Emit(q1), State::Emit(q2))
    }

    fn score(&self, hyper: &Hyperparams) -> PosteriorScore {
        log_posterior_hmm(self, hyper)
    }

    fn rescore(
        &self,
        op: &HmmOp,
        base: &PosteriorScore,
        hyper: &Hyperparams,
    ) -> Result<(Self, PosteriorScore)> {
        rescore_hmm_op(self, op, base, hyper)
    }

    fn canonical_key(&self) -> String {
        Hmm::canonical_key(self)
    }
}

impl MergeModel for Scfg {
    type Op = ScfgOp;

    fn incorporate(corpus: &Corpus) -> Result<Self> {
        Scfg::incorporate(corpus)
    }

    fn add_sample(&mut self, tokens: &[String], count: Count) {
        Scfg::add_sample(self, tokens, count)
    }

    fn candidates(&self, cfg: &SearchConfig) -> Vec<ScfgOp> {
        Scfg::candidates(self, cfg.max_chunk_len, cfg.min_chunk_occurrences)
    }

    fn apply(&self, op: &ScfgOp) -> Result<Self> {
        Scfg::apply(self, op)
    }

    fn score(&self, hyper: &Hyperparams) -> PosteriorScore {
        log_posterior_scfg(self, hyper)
    }

    fn rescore(
        &self,
        op: &ScfgOp,
        base: &PosteriorScore,
        hyper: &Hyperparams,
    ) -> Result<(Self, PosteriorScore)> {
        rescore_scfg_op(self, op, base, hyper)
    }

    fn canonical_key(&self) -> String {
        Scfg::canonical_key(self)
    }
}

fn evaluate<M: MergeModel>(
    model: &M,
    base: &PosteriorScore,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<Vec<(M::Op, M, PosteriorScore)>> {
    let mut out = Vec::new();
    for op in model.candidates(cfg) {
        let (applied, score) = model.rescore(&op, base, hyper)?;
        if cfg.verify_rescore {
            let full = applied.score(hyper);
            assert!(
                (score.log_posterior - full.log_posterior).abs() < 1e-9,
                "incremental rescore diverged for {op:?}: {} vs {}",
                score.log_posterior,
                full.log_posterior
            );
        }
        out.push((op, applied, score));
    }
    Ok(out)
}

fn best_index(evals: &[(impl Clone, impl Clone, PosteriorScore)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (_, _, score)) in evals.iter().enumerate() {
        if best.is_none_or(|b| score.log_posterior > evals[b].2.log_posterior) {
            best = Some(i);
        }
    }
    best
}

/// Greedy hill climbing: repeatedly applies the best strictly-improving
/// candidate; when none improves, follows the chain of best children up
/// to `lookahead` steps and accepts the whole chain iff its endpoint
/// improves on the current model. The trace ends with the best rejected
/// candidate when the search stops at a maximum.
pub fn greedy_search<M: MergeModel>(
    model: M,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<M>> {
    let initial_score = model.score(hyper);
    let mut current = model;
    let mut current_score = initial_score;
    let mut trace: Vec<TraceStep<M::Op>> = Vec::new();
    let mut step = 0usize;

    'outer: while step < cfg.max_steps {
        let evals = evaluate(&current, &current_score, hyper, cfg)?;
        let Some(best) = best_index(&evals) else { break };
        let (op, applied, score) = evals[best].clone();

        if score.log_posterior > current_score.log_posterior {
            step += 1;
            trace.push(TraceStep { step, op: TraceOp::Apply(op), score, accepted: true, beam_rank: None });
            current = applied;
            current_score = score;
            continue;
        }

        // Chain of best children, accepted as a whole on improvement.
        let mut chain = vec![(op.clone(), applied.clone(), score)];
        for _depth in 2..=cfg.lookahead {
            let (_, last_model, last_score) = chain.last().unwrap();
            let evals = evaluate(last_model, last_score, hyper, cfg)?;
            let Some(b) = best_index(&evals) else { break };
            chain.push(evals[b].clone());
            if chain.last().unwrap().2.log_posterior > current_score.log_posterior {
                for (op, applied, score) in chain {
                    step += 1;
                    trace.push(TraceStep {
                        step,
                        op: TraceOp::Apply(op),
                        score,
                        accepted: true,
                        beam_rank: None,
                    });
                    current = applied;
                    current_score = score;
                }
                continue 'outer;
            }
        }

        // No improvement: record why the search stopped.
        trace.push(TraceStep {
            step: step + 1,
            op: TraceOp::Apply(op),
            score,
            accepted: false,
            beam_rank: None,
        });
        break;
    }

    Ok(SearchResult { final_model: current, initial_score, final_score: current_score, trace })
}

struct BeamNode<M: MergeModel> {
    model: M,
    score: PosteriorScore,
    key: String,
    path: Vec<(M::Op, PosteriorScore, usize)>,
    seq: u64,
}

/// Beam search over unexpanded models. Each round expands the best
/// `beam_width` models not yet expanded (by canonical form), pooling
/// all their candidates; the best model ever seen is returned once
/// `patience` rounds pass without improving it.
pub fn beam_search<M: MergeModel>(
    model: M,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<M>> {
    let width = cfg.beam_width.max(1);
    let initial_score = model.score(hyper);
    let initial_key = model.canonical_key();

    let mut seq = 0u64;
    let mut open: Vec<BeamNode<M>> = vec![BeamNode {
        model: model.clone(),
        score: initial_score,
        key: initial_key.clone(),
        path: Vec::new(),
        seq,
    }];
    let mut open_keys: HashSet<String> = HashSet::from([initial_key]);
    let mut closed: HashSet<String> = HashSet::new();

    let mut best_model = model;
    let mut best_score = initial_score;
    let mut best_path: Vec<(M::Op, PosteriorScore, usize)> = Vec::new();

    let mut stale_rounds = 0usize;
    let mut rounds = 0usize;

    while rounds < cfg.max_steps && !open.is_empty() {
        rounds += 1;
        open.sort_by(|a, b| {
            b.score
                .log_posterior
                .total_cmp(&a.score.log_posterior)
                .then(a.seq.cmp(&b.seq))
        });
        let take = width.min(open.len());
        let batch: Vec<BeamNode<M>> = open.drain(..take).collect();

        let mut improved = false;
        for (rank, node) in batch.into_iter().enumerate() {
            open_keys.remove(&node.key);
            closed.insert(node.key.clone());
            for op in node.model.candidates(cfg) {
                let (child, score) = node.model.rescore(&op, &node.score, hyper)?;
                if cfg.verify_rescore {
                    let full = child.score(hyper);
                    assert!(
                        (score.log_posterior - full.log_posterior).abs() < 1e-9,
                        "incremental rescore diverged for {op:?}"
                    );
                }
                let key = child.canonical_key();
                if closed.contains(&key) || open_keys.contains(&key) {
                    continue;
                }
                seq += 1;
                let mut path = node.path.clone();
                path.push((op, score, rank));
                if score.log_posterior > best_score.log_posterior {
                    best_model = child.clone();
                    best_score = score;
                    best_path = path.clone();
                    improved = true;
                }
                open_keys.insert(key.clone());
                open.push(BeamNode { model: child, score, key, path, seq });
            }
        }

        if open.len() > cfg.max_open {
            open.sort_by(|a, b| {
                b.score
                    .log_posterior
                    .total_cmp(&a.score.log_posterior)
                    .then(a.seq.cmp(&b.seq))
            });
            for dropped in open.drain(cfg.max_open..) {
                open_keys.remove(&dropped.key);
            }
        }

        if improved {
            stale_rounds = 0;
        } else {
            stale_rounds += 1;
            if stale_rounds >= cfg.patience {
                break;
            }
        }
    }

    let trace = best_path
        .into_iter()
        .enumerate()
        .map(|(i, (op, score, rank))| TraceStep {
            step: i + 1,
            op: TraceOp::Apply(op),
            score,
            accepted: true,
            beam_rank: Some(rank),
        })
        .collect();
    Ok(SearchResult { final_model: best_model, initial_score, final_score: best_score, trace })
}

fn run_strategy<M: MergeModel>(
    model: M,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<M>> {
    match cfg.strategy {
        Strategy::Greedy => greedy_search(model, hyper, cfg),
        Strategy::Beam => beam_search(model, hyper, cfg),
    }
}

/// Interleaves incorporation with search: samples are added in batches
/// (corpus order) and the configured search runs to quiescence after
/// each batch. Trace records mark the batch boundaries.
pub fn online_induce<M: MergeModel>(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<M>> {
    let batch = cfg.online_batch.ok_or_else(|| Error::Config("online_batch not set".into()))?;
    if batch == 0 {
        return Err(Error::Config("online_batch must be >= 1".into()));
    }
    let samples = corpus.samples();
    let mut model = M::incorporate(&corpus.slice(0, batch)?)?;
    let initial_score = model.score(hyper);
    let mut trace: Vec<TraceStep<M::Op>> = Vec::new();
    let mut step = 0usize;
    let mut offset = batch.min(samples.len());
    let mut batch_index = 0usize;

    let final_score = loop {
        let result = run_strategy(model, hyper, cfg)?;
        model = result.final_model;
        for mut record in result.trace {
            step += 1;
            record.step = step;
            trace.push(record);
        }
        if offset >= samples.len() {
            break result.final_score;
        }
        batch_index += 1;
        let end = (offset + batch).min(samples.len());
        for (tokens, count) in &samples[offset..end] {
            model.add_sample(tokens, *count);
        }
        step += 1;
        trace.push(TraceStep {
            step,
            op: TraceOp::Incorporate { batch: batch_index, samples: end - offset },
            score: model.score(hyper),
            accepted: true,
            beam_rank: None,
        });
        offset = end;
    };

    Ok(SearchResult { final_model: model, initial_score, final_score, trace })
}

/// End-to-end induction: incorporate the corpus, then run the
/// configured search (or the on-line schedule when a batch size is
/// set). Deterministic for fixed inputs and configuration.
pub fn induce<M: MergeModel>(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<M>> {
    if cfg.online_batch.is_some() {
        online_induce(corpus, hyper, cfg)
    } else {
        run_strategy(M::incorporate(corpus)?, hyper, cfg)
    }
}

pub fn induce_hmm(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<Hmm>> {
    induce::<Hmm>(corpus, hyper, cfg)
}

pub fn induce_scfg(
    corpus: &Corpus,
    hyper: &Hyperparams,
    cfg: &SearchConfig,
) -> Result<SearchResult<Scfg>> {
    induce::<Scfg>(corpus, hyper, cfg)
}
