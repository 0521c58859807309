pub mod atomic;
pub mod bench;
pub mod cache;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod fingerprint;
pub mod inference;
pub mod metrics;
pub mod qrels;
pub mod record;
pub mod rng;
pub mod store;
pub mod synth;
pub mod topk;
