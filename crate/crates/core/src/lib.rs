//! Visual pattern mining over frozen convolutional filters.
//!
//! A backbone's final-layer responses are global-max pooled and binarised,
//! a sparse logistic head picks small filter sets that separate a positive
//! image set from a reference set, and a deconvolution pass maps each
//! filter set back to a pixel region.

pub mod backbone;
pub mod bbox;
pub mod cli;
pub mod evalkit;
pub mod localizer;
pub mod miner;
pub mod synthdata;
pub mod tensor;
