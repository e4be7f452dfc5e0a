//! Differentiable temporal alignment of embedding sequences.
//!
//! The crate provides a smooth affine-gap Smith-Waterman alignment with an
//! analytic backward pass, a soft-DTW baseline, the local-alignment
//! contrastive (LAC) objective built on them, alignment-quality metrics, a
//! synthetic paired-sequence generator, and a small self-supervised trainer.
//!
//! Every differentiable operation has a brute-force or finite-difference
//! counterpart in the crate so it can be checked independently; see
//! [`gradcheck`] and [`softsw::sw_enumerate_paths`].

pub mod cli;
pub mod error;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod seqcore;
pub mod smoothops;
pub mod softdtw;
pub mod softsw;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use seqcore::{
    build_similarity, build_similarity_backward, AlignmentParams, EmbeddingSequence, LabeledSequence,
    SimilarityMatrix, SimilarityMode,
};
