use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

/// Clipped n-gram match counts and lengths, summable over a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn lowercase<S: AsRef<str>>(s: &[S]) -> Vec<String> {
    s.iter().map(|t| t.as_ref().to_lowercase()).collect()
}

impl NgramStats {
    /// Case-insensitive statistics of one hypothesis against one reference.
    pub fn sentence<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Self {
        let hyp = lowercase(hyp);
        let reference = lowercase(reference);
        let mut stats = Self {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(&hyp, n);
            let r = ngram_counts(&reference, n);
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            stats.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        }
        stats
    }

    pub fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    fn brevity_penalty(&self) -> f64 {
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    /// Unsmoothed BLEU-4 in percent; zero if any order has no match.
    pub fn bleu(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.iter().any(|&m| m == 0) {
            return 0.0;
        }
        let log_precision: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_precision.exp()
    }

    /// Add-one smoothing on orders ≥ 2, for sentence-level comparisons.
    pub fn smoothed_bleu(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let log_precision: f64 = (0..MAX_ORDER)
            .map(|n| {
                let (m, t) = if n == 0 {
                    (self.matches[0] as f64, self.totals[0] as f64)
                } else {
                    (self.matches[n] as f64 + 1.0, self.totals[n] as f64 + 1.0)
                };
                (m / t).ln()
            })
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * self.brevity_penalty() * log_precision.exp()
    }
}

/// Corpus-level, single-reference, case-insensitive BLEU-4 (percent).
pub fn bleu4<H, R>(hypotheses: &[H], references: &[R]) -> Result<f64>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("BLEU over zero hypotheses".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut total = NgramStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&NgramStats::sentence(h.as_ref(), r.as_ref()));
    }
    Ok(total.bleu())
}

pub fn sentence_bleu_smoothed(hyp: &[String], reference: &[String]) -> f64 {
    NgramStats::sentence(hyp, reference).smoothed_bleu()
}
