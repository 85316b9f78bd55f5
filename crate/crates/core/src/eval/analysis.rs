//! Length-bucket BLEU, half-width sweeps and the loss-gap report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu, BleuStats, Smoothing};
use crate::data::Pair;
use crate::distill::dedup_adjacent;
use crate::error::{Error, Result};
use crate::length::{length_parallel_decode_batch, LengthPolicy, RankMode};
use crate::model::ModelParams;
use crate::nar::nar_emit_batch;

/// Inclusive source-length interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: usize,
    pub hi: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    /// Absent for an empty bucket.
    pub bleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBucketTable {
    pub rows: Vec<BucketRow>,
}

impl LengthBucketTable {
    /// BLEU of the last non-empty bucket minus that of the first.
    pub fn degradation(&self) -> Option<f64> {
        let mut scored = self.rows.iter().filter_map(|r| r.bleu);
        let first = scored.next()?;
        Some(first - scored.last().unwrap_or(first))
    }
}

fn check_buckets(buckets: &[Bucket]) -> Result<()> {
    if buckets.is_empty() {
        return Err(Error::Empty("bucket list"));
    }
    let mut sorted = buckets.to_vec();
    sorted.sort_by_key(|b| b.lo);
    for b in &sorted {
        if b.lo > b.hi {
            return Err(Error::invalid(format!("bucket [{}, {}] is inverted", b.lo, b.hi)));
        }
    }
    for w in sorted.windows(2) {
        if w[1].lo <= w[0].hi {
            return Err(Error::invalid(format!(
                "buckets [{}, {}] and [{}, {}] overlap",
                w[0].lo, w[0].hi, w[1].lo, w[1].hi
            )));
        }
    }
    Ok(())
}

/// Three contiguous buckets splitting `lengths` as evenly as integer edges allow.
pub fn tercile_buckets(lengths: &[usize]) -> Result<Vec<Bucket>> {
    if lengths.is_empty() {
        return Err(Error::Empty("length list"));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);
    let cut1 = sorted[(n / 3).min(n - 1)].max(min);
    let cut2 = sorted[(2 * n / 3).min(n - 1)].max(cut1 + 1);
    let edges = [min, cut1.max(min + 1), cut2, max + 1];
    let mut out = Vec::new();
    for w in edges.windows(2) {
        if w[0] < w[1] && w[0] <= max {
            out.push(Bucket {
                lo: w[0],
                hi: (w[1] - 1).min(max),
            });
        }
    }
    Ok(out)
}

/// BLEU per source-length bucket. Every sentence must fall in some bucket.
pub fn bucket_bleu<H: AsRef<[usize]>, R: AsRef<[usize]>, S: AsRef<[usize]>>(
    hypotheses: &[H],
    references: &[R],
    sources: &[S],
    buckets: &[Bucket],
    smoothing: Smoothing,
) -> Result<LengthBucketTable> {
    check_buckets(buckets)?;
    if hypotheses.len() != references.len() || sources.len() != references.len() {
        return Err(Error::invalid("hypotheses, references and sources must align"));
    }
    let mut stats = vec![BleuStats::default(); buckets.len()];
    let mut counts = vec![0; buckets.len()];
    for ((h, r), s) in hypotheses.iter().zip(references).zip(sources) {
        let len = s.as_ref().len();
        let k = buckets
            .iter()
            .position(|b| (b.lo..=b.hi).contains(&len))
            .ok_or_else(|| Error::invalid(format!("source length {len} is outside every bucket")))?;
        stats[k].add(h.as_ref(), r.as_ref());
        counts[k] += 1;
    }
    let rows = buckets
        .iter()
        .zip(stats)
        .zip(counts)
        .map(|((b, st), count)| BucketRow {
            lo: b.lo,
            hi: b.hi,
            count,
            bleu: (count > 0).then(|| st.report(smoothing).bleu),
        })
        .collect();
    Ok(LengthBucketTable { rows })
}

/// One row of the sweep; `half_width == None` is the gold-length row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub half_width: Option<usize>,
    pub bleu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub variants: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn cell(&self, half_width: Option<usize>, variant: &str) -> Option<f64> {
        let col = self.variants.iter().position(|v| v == variant)?;
        self.rows.iter().find(|r| r.half_width == half_width).map(|r| r.bleu[col])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub offset: i64,
    pub rank_mode: RankMode,
    pub dedup: bool,
    pub smoothing: Smoothing,
}

fn finish(out: Vec<Vec<usize>>, dedup: bool) -> Vec<Vec<usize>> {
    if dedup {
        out.iter().map(|s| dedup_adjacent(s)).collect()
    } else {
        out
    }
}

/// Student outputs at the reference length of each test pair.
pub fn gold_length_outputs(student: &ModelParams, test: &[Pair]) -> Result<Vec<Vec<usize>>> {
    let srcs: Vec<&[usize]> = test.iter().map(|p| p.src.as_slice()).collect();
    let lens: Vec<usize> = test.iter().map(|p| p.tgt.len().max(1)).collect();
    nar_emit_batch(student, &srcs, &lens)
}

/// Length-parallel outputs for every test source.
pub fn reranked_outputs(
    student: &ModelParams,
    teacher: &ModelParams,
    test: &[Pair],
    policy: LengthPolicy,
    mode: RankMode,
) -> Result<Vec<Vec<usize>>> {
    let srcs: Vec<&[usize]> = test.iter().map(|p| p.src.as_slice()).collect();
    Ok(length_parallel_decode_batch(student, teacher, &srcs, policy, mode)?
        .into_iter()
        .map(|d| d.output().clone())
        .collect())
}

/// BLEU for every (half-width, student variant) pair plus a gold-length row.
pub fn b_sweep(
    students: &[(String, &ModelParams)],
    teacher: &ModelParams,
    test: &[Pair],
    half_widths: &[usize],
    settings: SweepSettings,
) -> Result<SweepTable> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let refs: Vec<&[usize]> = test.iter().map(|p| p.tgt.as_slice()).collect();
    let mut rows = Vec::new();
    for &b in half_widths {
        let policy = LengthPolicy {
            offset: settings.offset,
            half_width: b,
        };
        let mut bleu = Vec::new();
        for (_, student) in students {
            let out = finish(reranked_outputs(student, teacher, test, policy, settings.rank_mode)?, settings.dedup);
            bleu.push(corpus_bleu(&out, &refs, settings.smoothing)?.bleu);
        }
        rows.push(SweepRow {
            half_width: Some(b),
            bleu,
        });
    }
    let mut gold = Vec::new();
    for (_, student) in students {
        let out = finish(gold_length_outputs(student, test)?, settings.dedup);
        gold.push(corpus_bleu(&out, &refs, settings.smoothing)?.bleu);
    }
    rows.push(SweepRow {
        half_width: None,
        bleu: gold,
    });
    Ok(SweepTable {
        variants: students.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

/// Final losses of one student run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGapRun {
    pub fraction: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

impl LossGapRun {
    /// Uses the last epoch of a curve, taking its validation loss as the
    /// held-out loss.
    pub fn from_curve(fraction: f64, curve: &[crate::train::EpochRecord]) -> Result<Self> {
        let last = curve.last().ok_or(Error::Empty("loss curve"))?;
        let test_loss = last
            .valid_loss
            .ok_or_else(|| Error::invalid("loss curve has no validation losses"))?;
        Ok(LossGapRun {
            fraction,
            train_loss: last.train_loss,
            test_loss,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGapRow {
    pub fraction: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGapReport {
    pub rows: Vec<LossGapRow>,
}

impl LossGapReport {
    pub fn row(&self, fraction: f64) -> Option<&LossGapRow> {
        self.rows.iter().find(|r| r.fraction == fraction)
    }

    /// `fraction train_loss test_loss` per line, for external plotting.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("# fraction train_loss test_loss\n");
        for r in &self.rows {
            writeln!(s, "{} {} {}", r.fraction, r.train_loss, r.test_loss).expect("String write");
        }
        s
    }
}

/// Gap report over runs, in the order of `fractions`. Fails naming every
/// fraction that has no run.
pub fn loss_gap_analysis(runs: &[LossGapRun], fractions: &[f64]) -> Result<LossGapReport> {
    let missing: Vec<String> = fractions
        .iter()
        .filter(|f| !runs.iter().any(|r| r.fraction == **f))
        .map(f64::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("runs for monolingual fractions {}", missing.join(", "))));
    }
    let seen: BTreeSet<u64> = fractions.iter().map(|f| f.to_bits()).collect();
    if seen.len() != fractions.len() {
        return Err(Error::invalid("duplicate fraction in analysis request"));
    }
    let rows = fractions
        .iter()
        .map(|&f| {
            let r = runs.iter().find(|r| r.fraction == f).expect("checked above");
            LossGapRow {
                fraction: f,
                train_loss: r.train_loss,
                test_loss: r.test_loss,
                gap: r.test_loss - r.train_loss,
            }
        })
        .collect();
    Ok(LossGapReport { rows })
}

/// Serializes each item as one JSON line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    std::fs::write(path, to_jsonl(items)?)?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::EpochRecord;

    fn b(lo: usize, hi: usize) -> Bucket {
        Bucket { lo, hi }
    }

    #[test]
    fn one_bucket_equals_corpus_bleu() {
        let h = vec![vec![4, 5, 6, 7, 8], vec![4, 6, 5, 7]];
        let r = vec![vec![4, 5, 6, 7, 9], vec![4, 5, 6, 7]];
        let s = vec![vec![4; 5], vec![4; 4]];
        let t = bucket_bleu(&h, &r, &s, &[b(1, 100)], Smoothing::None).unwrap();
        assert_eq!(t.rows[0].count, 2);
        assert_eq!(t.rows[0].bleu, Some(corpus_bleu(&h, &r, Smoothing::None).unwrap().bleu));
    }

    #[test]
    fn split_buckets_match_independent_halves() {
        let h = vec![vec![4, 5, 6, 7], vec![4, 5, 6, 8], vec![9, 5, 6, 7, 8, 10], vec![4, 5, 6, 7, 8, 9]];
        let r = vec![vec![4, 5, 6, 7], vec![4, 5, 6, 7], vec![4, 5, 6, 7, 8, 10], vec![4, 5, 6, 7, 8, 9]];
        let s = vec![vec![4; 2], vec![4; 3], vec![4; 8], vec![4; 9]];
        let t = bucket_bleu(&h, &r, &s, &[b(1, 5), b(6, 10), b(11, 20)], Smoothing::None).unwrap();
        let first = corpus_bleu(&h[..2], &r[..2], Smoothing::None).unwrap().bleu;
        let second = corpus_bleu(&h[2..], &r[2..], Smoothing::None).unwrap().bleu;
        assert_eq!(t.rows[0].bleu, Some(first));
        assert_eq!(t.rows[1].bleu, Some(second));
        assert_eq!(t.rows[2], BucketRow { lo: 11, hi: 20, count: 0, bleu: None });
        assert_eq!(t.rows.iter().map(|r| r.count).sum::<usize>(), 4);
    }

    #[test]
    fn overlapping_or_uncovering_buckets_are_rejected() {
        let h = vec![vec![4]];
        assert!(bucket_bleu(&h, &h, &h, &[b(1, 5), b(5, 9)], Smoothing::None).is_err());
        assert!(bucket_bleu(&h, &h, &h, &[b(2, 5)], Smoothing::None).is_err());
    }

    #[test]
    fn terciles_cover_all_lengths() {
        let lens: Vec<usize> = (0..300).map(|i| 3 + i % 10).collect();
        let bs = tercile_buckets(&lens).unwrap();
        assert_eq!(bs.len(), 3);
        assert_eq!(bs[0].lo, 3);
        assert_eq!(bs[2].hi, 12);
        check_buckets(&bs).unwrap();
        for l in 3..=12 {
            assert_eq!(bs.iter().filter(|b| (b.lo..=b.hi).contains(&l)).count(), 1);
        }
    }

    #[test]
    fn loss_gap_rows_follow_requested_fractions() {
        let runs = [
            LossGapRun { fraction: 1.0, train_loss: 0.5, test_loss: 0.6 },
            LossGapRun { fraction: 0.0, train_loss: 0.1, test_loss: 0.9 },
        ];
        let rep = loss_gap_analysis(&runs, &[0.0, 1.0]).unwrap();
        assert_eq!(rep.rows.iter().map(|r| r.fraction).collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert!((rep.rows[0].gap - 0.8).abs() < 1e-12);
        assert!(rep.plot_data().lines().nth(1).unwrap().starts_with("0 0.1 0.9"));
        let err = loss_gap_analysis(&runs, &[0.0, 0.25, 0.5, 1.0]).unwrap_err().to_string();
        assert!(err.contains("0.25") && err.contains("0.5"), "{err}");
    }

    #[test]
    fn gap_from_curve_uses_last_epoch() {
        let rec = |e: usize, t: f64, v: f64| EpochRecord { epoch: e, train_loss: t, valid_loss: Some(v), lr: 1e-3, wall_seconds: None };
        let run = LossGapRun::from_curve(0.5, &[rec(1, 2.0, 2.5), rec(2, 1.0, 1.7)]).unwrap();
        assert_eq!((run.train_loss, run.test_loss), (1.0, 1.7));
        assert!(LossGapRun::from_curve(0.5, &[]).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rows.jsonl");
        let rows = vec![b(1, 4), b(5, 9)];
        write_jsonl(&p, &rows).unwrap();
        let back: Vec<Bucket> = read_jsonl(&p).unwrap();
        assert_eq!(back, rows);
    }
}
