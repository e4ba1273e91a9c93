//! Meta-gradient data rating and shifted-Gaussian coreset pruning.
//!
//! The pipeline has two stages. A small rater network learns per-sample
//! weights from the training dynamics of a proxy model: a reference copy of
//! the proxy is warmed up on the training data, then the main proxy follows
//! validation plus rater-weighted training gradients while the rater is
//! pushed by the per-sample loss gap between the two. The frozen rater then
//! scores the corpus, and the pruner keeps a subset by Gaussian sampling over
//! score percentiles after discarding the top-ranked head.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`, which is what the file formats and
//! acceptance tolerances assume.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod io;
pub mod meta_loop;
pub mod numerics;
pub mod proxy;
pub mod pruner;
pub mod rater;
pub mod sample;
pub mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use analysis::{bin_traces, compare_strategies, tier_report, BinSummary, ComparisonRow, TierReport};
pub use corpus::{generate, read_corpus, write_corpus, CorpusSpec};
pub use meta_loop::{meta_gradient_probe, run_rating, MetaConfig, ProbeResult, TraceRow};
pub use numerics::{fd_check, softmax, Activation, FlatParams, RngStream, StreamId};
pub use proxy::TrainConfig;
pub use pruner::{prune, PruneSpec, Strategy, Subset};
pub use rater::{featurize, score_corpus, ScoreRecord, UpdateRule};
pub use sample::Tier;
pub use schedule::LrSchedule;

pub type Matrix = numerics::Matrix<f64>;
pub type Mlp = numerics::MlpParams<f64>;
pub type GradBuffer = numerics::GradBuffer<f64>;
pub type Sample = sample::Sample<f64>;
pub type ProxyState = proxy::ProxyState<f64>;
pub type Rater = rater::RaterParams<f64>;
pub type RaterGrad = rater::RaterGrad<f64>;
pub type BatchWeights = rater::BatchWeights<f64>;
pub type RatingOutcome = meta_loop::RatingOutcome<f64>;

pub type Matrix32 = numerics::Matrix<f32>;
pub type Mlp32 = numerics::MlpParams<f32>;
pub type Sample32 = sample::Sample<f32>;
pub type Rater32 = rater::RaterParams<f32>;
