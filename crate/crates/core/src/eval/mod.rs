//! BLEU scoring and the analysis harnesses built on it.

pub mod analysis;
pub mod bleu;

pub use analysis::{
    b_sweep, bucket_bleu, gold_length_outputs, loss_gap_analysis, read_jsonl, reranked_outputs, tercile_buckets,
    to_jsonl, write_jsonl, Bucket, BucketRow, LengthBucketTable, LossGapReport, LossGapRow, LossGapRun, SweepRow,
    SweepSettings, SweepTable,
};
pub use bleu::{corpus_bleu, corpus_bleu_text, BleuOptions, BleuReport, BleuStats, Smoothing, MAX_ORDER};
