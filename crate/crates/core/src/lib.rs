//! Toolkit for reading book spines from shelf images at the algorithmic
//! level: the CTC loss family with exact gradients and decoders, a small
//! trainable sequence model, spine-segmentation geometry and a tf-idf book
//! retrieval engine.

pub mod ctc;
pub mod decode;
pub mod editdist;
pub mod gradcheck;
pub mod losses;
pub mod mat;
pub mod model;
pub mod par;
pub mod retrieval;
pub mod segment;
pub mod seq;
pub mod synthgen;
pub mod train;

pub use ctc::{LogProbOutcome, LossResult};
pub use mat::Mat;
pub use seq::{Alignment, Alphabet, EmissionMatrix, LabelSequence};
