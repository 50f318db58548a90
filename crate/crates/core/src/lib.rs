//! Decode dependency trees from transformer self-attention and score them
//! against Universal Dependencies treebanks.
//!
//! The pipeline for one sentence and one attention head:
//!
//! 1. [`matrixprep::prepare`] drops delimiter positions, merges subword
//!    pieces into gold tokens and multiplies the matrix with its transpose;
//! 2. [`mstdecode::decode`] extracts a maximum spanning tree;
//! 3. [`metrics::uuas`] counts recovered gold edges, ignoring direction.
//!
//! [`sweep`] repeats this for every layer/head over a treebank and
//! [`attnstore`] reads and writes the binary archives holding the attention.

pub mod attnstore;
pub mod cli;
pub mod error;
pub mod matrixprep;
pub mod metrics;
pub mod mstdecode;
pub mod sweep;
pub mod treebank;

pub use error::{Error, Result};
