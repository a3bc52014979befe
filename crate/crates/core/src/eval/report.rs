use std::io::Write;

use super::bleu::NgramStats;
use crate::error::{Error, Result};

/// Source-length thresholds; bucket `k` holds sentences longer than `k` words.
pub const BUCKET_THRESHOLDS: [usize; 7] = [0, 10, 20, 30, 40, 50, 60];

#[derive(Clone, Debug, PartialEq)]
pub struct BucketScore {
    pub threshold: usize,
    pub n_sentences: usize,
    pub bleu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub overall: f64,
    pub buckets: Vec<BucketScore>,
}

/// BLEU over all sentences and over each nested `> threshold` source-length
/// bucket. Empty buckets score 0.
pub fn length_bucket_report<H, R>(source_lengths: &[usize], hypotheses: &[H], references: &[R]) -> Result<BleuReport>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("BLEU report over zero hypotheses".into()));
    }
    if hypotheses.len() != references.len() || hypotheses.len() != source_lengths.len() {
        return Err(Error::Data(format!(
            "report inputs differ in length: {} sources, {} hypotheses, {} references",
            source_lengths.len(),
            hypotheses.len(),
            references.len()
        )));
    }
    let stats: Vec<NgramStats> = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| NgramStats::sentence(h.as_ref(), r.as_ref()))
        .collect();
    let mut overall = NgramStats::default();
    stats.iter().for_each(|s| overall.add(s));

    let buckets = BUCKET_THRESHOLDS
        .iter()
        .map(|&threshold| {
            let mut acc = NgramStats::default();
            let mut n = 0;
            for (s, &len) in stats.iter().zip(source_lengths) {
                if len > threshold {
                    acc.add(s);
                    n += 1;
                }
            }
            BucketScore {
                threshold,
                n_sentences: n,
                bleu: if n == 0 { 0.0 } else { acc.bleu() },
            }
        })
        .collect();
    Ok(BleuReport {
        overall: overall.bleu(),
        buckets,
    })
}

impl BleuReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "bucket,n_sentences,bleu")?;
        for b in &self.buckets {
            writeln!(out, ">{},{},{:.4}", b.threshold, b.n_sentences, b.bleu)?;
        }
        Ok(())
    }
}
