//! Grammar induction by Bayesian model merging.
//!
//! The toolkit builds probabilistic grammars from weighted corpora of
//! positive samples. Induction starts from a model that memorizes the
//! samples outright, then repeatedly applies merging (and, for
//! context-free grammars, chunking) operators, keeping the variant that
//! maximizes the Bayesian posterior of the model structure: a
//! description-length prior times a Dirichlet-multinomial marginal
//! likelihood over the model's usage counts.
//!
//! Three model families are supported:
//!
//! * [`Hmm`] — hidden Markov models generalized by state merging;
//! * [`Scfg`] — stochastic context-free grammars generalized by
//!   nonterminal merging and chunking;
//! * [`ClassModel`] — word-class bigram models, a constrained form of
//!   HMM merging.
//!
//! Search strategies live in [`search`]: greedy hill climbing with
//! lookahead, beam search, and an on-line variant that interleaves data
//! incorporation with search.

pub mod classes;
pub mod corpus;
pub mod count;
pub mod error;
pub mod hmm;
pub mod scfg;
pub mod scoring;
pub mod search;

pub use classes::{build_class_hmm, induce_classes, ClassMode, ClassModel};
pub use corpus::{Corpus, Tokenization};
pub use count::Count;
pub use error::{Error, Result};
pub use hmm::{Hmm, HmmOp, State};
pub use scfg::{Scfg, ScfgOp};
pub use scoring::{log_dirichlet_multinomial, Hyperparams, PosteriorScore};
pub use search::{
    beam_search, greedy_search, induce_hmm, induce_scfg, online_induce, trace_to_jsonl,
    MergeModel, SearchConfig, SearchResult, Strategy, TraceOp, TraceStep,
};
