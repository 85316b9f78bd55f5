//! Corpus-level BLEU over token sequences.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to numerator and denominator of orders 2 and above.
    AddOne,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuOptions {
    pub smoothing: Smoothing,
    /// Lowercase tokens before matching; only meaningful for text input.
    pub lowercase: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Percent, in `[0, 100]`.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram statistics: per order (matches, hypothesis n-grams,
/// reference n-grams), plus total lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub hyp_ngrams: [usize; MAX_ORDER],
    pub ref_ngrams: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add<T: Eq + Hash>(&mut self, hyp: &[T], reference: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.matches[n - 1] += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<usize>();
            self.hyp_ngrams[n - 1] += hyp.len().saturating_sub(n - 1);
            self.ref_ngrams[n - 1] += reference.len().saturating_sub(n - 1);
        }
    }

    pub fn report(&self, smoothing: Smoothing) -> BleuReport {
        let mut precisions = [0.0; MAX_ORDER];
        let mut log_sum = 0.0;
        let mut orders = 0;
        let mut zero = self.hyp_len == 0;
        for i in 0..MAX_ORDER {
            let (mut num, mut den) = (self.matches[i] as f64, self.hyp_ngrams[i] as f64);
            if i > 0 && smoothing == Smoothing::AddOne {
                num += 1.0;
                den += 1.0;
            }
            if den == 0.0 {
                // an order that neither side is long enough to contain is left out
                if self.ref_ngrams[i] > 0 {
                    zero = true;
                }
                continue;
            }
            precisions[i] = num / den;
            if num == 0.0 {
                zero = true;
            } else {
                log_sum += precisions[i].ln();
                orders += 1;
            }
        }
        let bp = if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let bleu = if zero || orders == 0 {
            0.0
        } else {
            (100.0 * bp * (log_sum / orders as f64).exp()).min(100.0)
        };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty: bp,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

/// 4-gram corpus BLEU with clipped counts and brevity penalty.
pub fn corpus_bleu<T: Eq + Hash, H: AsRef<[T]>, R: AsRef<[T]>>(
    hypotheses: &[H],
    references: &[R],
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if references.is_empty() {
        return Err(Error::Empty("reference list"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h.as_ref(), r.as_ref());
    }
    Ok(stats.report(smoothing))
}

/// BLEU over whitespace-tokenized text lines.
pub fn corpus_bleu_text(hypotheses: &[&str], references: &[&str], opts: BleuOptions) -> Result<BleuReport> {
    let tok = |s: &&str| -> Vec<String> {
        s.split_whitespace()
            .map(|t| if opts.lowercase { t.to_lowercase() } else { t.to_string() })
            .collect()
    };
    let h: Vec<Vec<String>> = hypotheses.iter().map(tok).collect();
    let r: Vec<Vec<String>> = references.iter().map(tok).collect();
    corpus_bleu(&h, &r, opts.smoothing)
}
