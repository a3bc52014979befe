//! Translation metrics: corpus BLEU-4, sign test, length-bucket reports.

mod bleu;
mod report;
mod sign;

pub use bleu::{bleu4, sentence_bleu_smoothed, NgramStats};
pub use report::{length_bucket_report, BleuReport, BucketScore, BUCKET_THRESHOLDS};
pub use sign::{sign_test, sign_test_counts, SignTest};
