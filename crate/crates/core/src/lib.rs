//! Unsupervised speech-to-face identity association for active speaker
//! detection.
//!
//! Speech segments and face tracks each carry an identity embedding. For every
//! speech segment the engine picks one temporally overlapping face track so that
//! the face-side cosine similarity matrix resembles the speech-side one as
//! closely as possible, measured by the mean row-wise Pearson correlation.
//! Optional activity scores from an external model pin confident segments and
//! prune unlikely candidates. Box-level scores derived from the assignment can
//! be fused with the activity scores and evaluated with mAP and related
//! analytics.

pub mod cli;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod guidance;
pub mod ingest;
pub mod matrices;
pub mod optimizer;
pub mod pipeline;
pub mod synth;

pub use domain::{ActivityScores, AssignmentState, CandidateSet, Config, Embedding, FaceBox, FaceTrack, SpeechSegment};
pub use error::{Error, Result};
pub use pipeline::{associate, AssociationResult, Mode};
