//! Cross-lingual in-context example retrieval for temporal question answering.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`corpus`]: JSONL temporal-QA corpora and the month/year arithmetic used
//!   by time-time (L1) questions.
//! * [`embedstore`]: dense embedding stores, cosine similarity and exact top-k.
//! * [`pairgen`]: scored cross-lingual training pairs labelled with
//!   in-language similarity.
//! * [`aligner`]: a linear alignment head trained with the CoSENT ranking loss.
//! * [`retriever`]: K-shot exemplar selection under several strategies.
//! * [`promptkit`]: prompt assembly and answer normalization.
//! * [`llmgate`]: completion endpoint client with record/replay cassettes.
//! * [`evalkit`]: F1/EM, BLEU-3, KL divergence, Mann-Whitney U, histograms.
//! * [`fixture`]: synthetic rotation fixtures for end-to-end testing.

pub mod aligner;
pub mod corpus;
pub mod embedstore;
pub mod evalkit;
pub mod fixture;
pub mod llmgate;
pub mod pairgen;
pub mod promptkit;
pub mod retriever;
pub mod rng;

pub use aligner::{AlignmentHead, TrainConfig, TrainReport};
pub use corpus::{CorpusSplit, MonthYear, QueryRecord, SplitName, TaskLevel};
pub use embedstore::{EmbeddingStore, Hit, SimilarityScore};
pub use pairgen::{Provenance, ScoredPair, TrainingSet};
pub use retriever::{ContextSet, RetrievalStrategy};
