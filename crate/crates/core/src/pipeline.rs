//! The experiment pipeline behind the command-line subcommands. Every
//! command reads and writes files under one run directory:
//!
//! ```text
//! data/      {train,valid,test}.{src,tgt}  mono.src  task.json
//! teacher/   model.ckpt  curve.jsonl
//! distill/   {parallel,mono}.{src,tgt}  provenance.json
//! student/mono-<fraction>/  model.ckpt  curve.jsonl  summary.json
//! reports/   loss_gap.jsonl  loss_gap.dat  b_sweep.jsonl  buckets.jsonl
//! ```
//!
//! Each command also leaves `config.resolved.toml` beside its outputs.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{read_pairs, read_sentences, write_pairs, write_sentences, Pair, TokenSequence};
use crate::distill::{dedup_adjacent, distill_corpus, mix_monolingual, DistilledCorpus, DistilledPair, Origin};
use crate::error::{Error, Result};
use crate::eval::{
    b_sweep, bucket_bleu, corpus_bleu, gold_length_outputs, loss_gap_analysis, tercile_buckets, write_jsonl,
    BleuReport, LossGapReport, LossGapRun, SweepSettings,
};
use crate::length::{estimate_c, length_parallel_decode_batch, LengthPolicy, RankMode};
use crate::model::checkpoint;
use crate::model::{Flavor, ModelParams};
use crate::nar::nar_emit_batch;
use crate::synth::{generate_corpus, generate_monolingual};
use crate::train::{corpus_loss, init_student_from_teacher, train, EpochRecord};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
const LOCK_FILE: &str = ".narmt.lock";

/// Exclusive claim on a run directory for the lifetime of a command.
pub struct RunLock {
    path: PathBuf,
    _file: File,
}

impl RunLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let path = root.join(LOCK_FILE);
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::invalid(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    root.display(),
                    path.display()
                ))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(RunLock { path, _file: file })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn of(cfg: &RunConfig) -> Self {
        Layout::new(cfg.resolved_output_dir())
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn split(&self, split: &str) -> (PathBuf, PathBuf) {
        (self.data().join(format!("{split}.src")), self.data().join(format!("{split}.tgt")))
    }

    pub fn mono_sources(&self) -> PathBuf {
        self.data().join("mono.src")
    }

    pub fn teacher(&self) -> PathBuf {
        self.root.join("teacher")
    }

    pub fn teacher_checkpoint(&self) -> PathBuf {
        self.teacher().join("model.ckpt")
    }

    pub fn distill(&self) -> PathBuf {
        self.root.join("distill")
    }

    pub fn distilled(&self, origin: Origin) -> (PathBuf, PathBuf) {
        let stem = match origin {
            Origin::Parallel => "parallel",
            Origin::Monolingual => "mono",
        };
        (self.distill().join(format!("{stem}.src")), self.distill().join(format!("{stem}.tgt")))
    }

    pub fn provenance(&self) -> PathBuf {
        self.distill().join("provenance.json")
    }

    pub fn student(&self, fraction: f64) -> PathBuf {
        self.root.join("student").join(format!("mono-{fraction}"))
    }

    pub fn student_checkpoint(&self, fraction: f64) -> PathBuf {
        self.student(fraction).join("model.ckpt")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn prepare(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml()?)?;
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(format!("{what} ({})", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    require(path, what)?;
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub mono: usize,
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenDataSummary> {
    let layout = Layout::of(cfg);
    let _lock = RunLock::acquire(&layout.root)?;
    let dir = layout.data();
    prepare(&dir, cfg)?;
    let corpus = generate_corpus(&cfg.task, cfg.data.sizes(), cfg.data.seed)?;
    for (name, pairs) in [("train", &corpus.train), ("valid", &corpus.valid), ("test", &corpus.test)] {
        let (s, t) = layout.split(name);
        write_pairs(&s, &t, pairs)?;
    }
    let mono = generate_monolingual(&cfg.task, cfg.data.mono, cfg.data.mono_seed, corpus.sources())?;
    write_sentences(&layout.mono_sources(), &mono)?;
    write_json(&dir.join("task.json"), &cfg.task)?;
    Ok(GenDataSummary {
        train: corpus.train.len(),
        valid: corpus.valid.len(),
        test: corpus.test.len(),
        mono: mono.len(),
    })
}

pub fn load_split(layout: &Layout, split: &str) -> Result<Vec<Pair>> {
    let (s, t) = layout.split(split);
    require(&s, &format!("{split} sources; run gen-data first"))?;
    require(&t, &format!("{split} targets; run gen-data first"))?;
    read_pairs(&s, &t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: usize,
    pub stopped_early: bool,
    /// Unsmoothed loss of the final model on its own training corpus.
    pub train_loss: f64,
    /// Unsmoothed loss of the final model on the gold test pairs.
    pub test_loss: f64,
    pub checkpoint_sha256: String,
}

fn finish_training(
    dir: &Path,
    params: &ModelParams,
    curve: &[EpochRecord],
    stopped_early: bool,
    steps: usize,
    train_pairs: &[Pair],
    test_pairs: &[Pair],
) -> Result<TrainSummary> {
    let ckpt = dir.join("model.ckpt");
    checkpoint::save(params, &ckpt)?;
    write_jsonl_records(&dir.join("curve.jsonl"), curve)?;
    let summary = TrainSummary {
        epochs: curve.len(),
        steps,
        stopped_early,
        train_loss: corpus_loss(params, train_pairs, 0.0)?,
        test_loss: if test_pairs.is_empty() { f64::NAN } else { corpus_loss(params, test_pairs, 0.0)? },
        checkpoint_sha256: checkpoint::file_digest(&ckpt)?,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_jsonl_records(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    write_jsonl(path, curve)
}

/// `on_epoch` is called with each loss-curve record as training proceeds.
pub fn cmd_train_teacher(cfg: &RunConfig, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainSummary> {
    let layout = Layout::of(cfg);
    let train_pairs = load_split(&layout, "train")?;
    let valid = load_split(&layout, "valid")?;
    let test = load_split(&layout, "test")?;
    let _lock = RunLock::acquire(&layout.root)?;
    let dir = layout.teacher();
    prepare(&dir, cfg)?;
    let init = ModelParams::init(cfg.teacher.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.teacher_train.seed))?;
    let out = train(init, &train_pairs, &valid, &cfg.teacher_train, on_epoch)?;
    finish_training(&dir, &out.params, &out.curve, out.stopped_early, out.steps, &train_pairs, &test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginRecord {
    pub origin: Origin,
    pub pairs: usize,
    pub dropped_empty: usize,
}

/// Sidecar of a distilled corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub teacher_sha256: String,
    pub corpora: Vec<OriginRecord>,
}

fn teacher_path(layout: &Layout, teacher: Option<&Path>) -> PathBuf {
    teacher.map(Path::to_path_buf).unwrap_or_else(|| layout.teacher_checkpoint())
}

fn load_model(path: &Path, what: &str, flavor: Flavor) -> Result<ModelParams> {
    require(path, what)?;
    let p = checkpoint::load(path)?;
    if p.config().flavor != flavor {
        return Err(Error::invalid(format!("{} is not a {what}", path.display())));
    }
    Ok(p)
}

/// Decodes the training and monolingual sources with the teacher. When a
/// distilled corpus from the same checkpoint already exists it is kept.
pub fn cmd_distill(cfg: &RunConfig, teacher: Option<&Path>) -> Result<Provenance> {
    let layout = Layout::of(cfg);
    let tpath = teacher_path(&layout, teacher);
    let model = load_model(&tpath, "teacher checkpoint", Flavor::Ar)?;
    let digest = checkpoint::file_digest(&tpath)?;
    let train_pairs = load_split(&layout, "train")?;
    require(&layout.mono_sources(), "monolingual sources; run gen-data first")?;
    let mono_src = read_sentences(&layout.mono_sources())?;
    let _lock = RunLock::acquire(&layout.root)?;
    let dir = layout.distill();
    if layout.provenance().exists() {
        let old: Provenance = read_json(&layout.provenance(), "provenance")?;
        if old.teacher_sha256 != digest {
            return Err(Error::Checkpoint(format!(
                "{} was distilled with teacher {} but {} has digest {}; remove the directory to redistill",
                dir.display(),
                old.teacher_sha256,
                tpath.display(),
                digest
            )));
        }
        let complete = [Origin::Parallel, Origin::Monolingual].iter().all(|&o| {
            let (s, t) = layout.distilled(o);
            s.exists() && t.exists()
        });
        if complete {
            return Ok(old);
        }
    }
    prepare(&dir, cfg)?;
    let sources: Vec<&[usize]> = train_pairs.iter().map(|p| p.src.as_slice()).collect();
    let mut corpora = Vec::new();
    for (origin, srcs) in [(Origin::Parallel, sources), (Origin::Monolingual, mono_src.iter().map(Vec::as_slice).collect())] {
        let d = distill_corpus(&model, &srcs, origin)?;
        let (s, t) = layout.distilled(origin);
        write_pairs(&s, &t, &d.to_pairs())?;
        corpora.push(OriginRecord {
            origin,
            pairs: d.len(),
            dropped_empty: d.dropped_empty,
        });
    }
    let prov = Provenance {
        teacher_sha256: digest,
        corpora,
    };
    write_json(&layout.provenance(), &prov)?;
    Ok(prov)
}

fn load_distilled(layout: &Layout, origin: Origin) -> Result<DistilledCorpus> {
    let (s, t) = layout.distilled(origin);
    require(&s, "distilled corpus; run distill first")?;
    let pairs = read_pairs(&s, &t)?;
    Ok(DistilledCorpus {
        pairs: pairs.into_iter().map(|pair| DistilledPair { pair, origin }).collect(),
        dropped_empty: 0,
    })
}

/// Trains a student on the distilled corpus mixed at `fraction` (the
/// configured one when `None`). The teacher must be named explicitly and
/// must be the checkpoint the corpus was distilled with.
pub fn cmd_train_student(
    cfg: &RunConfig,
    teacher: Option<&Path>,
    fraction: Option<f64>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    let tpath = teacher.ok_or_else(|| Error::Missing("teacher checkpoint (pass --teacher <path>; a student is never trained without one)".into()))?;
    let layout = Layout::of(cfg);
    let fraction = fraction.unwrap_or(cfg.mono.fraction);
    let teacher_model = load_model(tpath, "teacher checkpoint", Flavor::Ar)?;
    let prov: Provenance = read_json(&layout.provenance(), "distillation provenance; run distill first")?;
    let digest = checkpoint::file_digest(tpath)?;
    if prov.teacher_sha256 != digest {
        return Err(Error::Checkpoint(format!(
            "distilled corpus came from teacher {} but {} has digest {digest}",
            prov.teacher_sha256,
            tpath.display()
        )));
    }
    let parallel = load_distilled(&layout, Origin::Parallel)?;
    let mono = load_distilled(&layout, Origin::Monolingual)?;
    let mixed = mix_monolingual(&parallel, &mono, fraction, cfg.mono.seed)?.to_pairs();
    let valid = load_split(&layout, "valid")?;
    let test = load_split(&layout, "test")?;
    let _lock = RunLock::acquire(&layout.root)?;
    let dir = layout.student(fraction);
    let mut resolved = cfg.clone();
    resolved.mono.fraction = fraction;
    prepare(&dir, &resolved)?;
    let fresh = ModelParams::init(cfg.student.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.student_train.seed))?;
    let init = init_student_from_teacher(&teacher_model, fresh)?;
    let out = train(init, &mixed, &valid, &cfg.student_train, on_epoch)?;
    finish_training(&dir, &out.params, &out.curve, out.stopped_early, out.steps, &mixed, &test)
}

#[derive(Clone, Debug, Default)]
pub struct TranslateArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub student: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub half_width: Option<usize>,
    pub offset: Option<i64>,
    pub estimate_c: bool,
    pub rank_mode: Option<RankMode>,
    pub dedup: Option<bool>,
    /// Reference file whose line lengths are used as target lengths.
    pub gold_lengths: Option<PathBuf>,
}

/// Resolves `C`: explicit flag, then `--estimate-c`, then the config, then
/// an estimate from the training pairs.
pub fn resolve_offset(cfg: &RunConfig, layout: &Layout, flag: Option<i64>, estimate: bool) -> Result<i64> {
    match (flag, estimate, cfg.length.offset) {
        (Some(c), _, _) => Ok(c),
        (None, false, Some(c)) => Ok(c),
        _ => estimate_c(&load_split(layout, "train")?),
    }
}

pub fn cmd_translate(cfg: &RunConfig, args: &TranslateArgs) -> Result<usize> {
    let layout = Layout::of(cfg);
    let spath = args.student.clone().unwrap_or_else(|| layout.student_checkpoint(cfg.mono.fraction));
    let student = load_model(&spath, "student checkpoint", Flavor::Nar)?;
    require(&args.input, "input file")?;
    let srcs = read_sentences(&args.input)?;
    if let Some(empty) = srcs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("input line {} is empty", empty + 1)));
    }
    let dedup = args.dedup.unwrap_or(cfg.length.dedup);
    let raw: Vec<TokenSequence> = if let Some(refs) = &args.gold_lengths {
        require(refs, "gold-length reference file")?;
        let refs = read_sentences(refs)?;
        if refs.len() != srcs.len() {
            return Err(Error::invalid(format!(
                "--gold-lengths file has {} lines but the input has {}",
                refs.len(),
                srcs.len()
            )));
        }
        let lens: Vec<usize> = refs.iter().map(|r| r.len().max(1)).collect();
        nar_emit_batch(&student, &srcs, &lens)?
    } else {
        let tpath = teacher_path(&layout, args.teacher.as_deref());
        let teacher = load_model(&tpath, "teacher checkpoint", Flavor::Ar)?;
        let policy = LengthPolicy {
            offset: resolve_offset(cfg, &layout, args.offset, args.estimate_c)?,
            half_width: args.half_width.unwrap_or(cfg.length.half_width),
        };
        let mode = args.rank_mode.unwrap_or(cfg.length.rank_mode);
        length_parallel_decode_batch(&student, &teacher, &srcs, policy, mode)?
            .into_iter()
            .map(|d| d.output().clone())
            .collect()
    };
    let out: Vec<TokenSequence> = if dedup { raw.iter().map(|s| dedup_adjacent(s)).collect() } else { raw };
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_sentences(&args.output, &out)?;
    Ok(out.len())
}

/// BLEU of a hypothesis file against a reference file.
pub fn cmd_evaluate(cfg: &RunConfig, hypotheses: &Path, references: &Path, report: Option<&Path>) -> Result<BleuReport> {
    require(hypotheses, "hypothesis file")?;
    require(references, "reference file")?;
    let h = read_sentences(hypotheses)?;
    let r = read_sentences(references)?;
    let rep = corpus_bleu(&h, &r, cfg.eval.smoothing)?;
    if let Some(path) = report {
        write_json(path, &rep)?;
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalysisKind {
    LossGap,
    BSweep,
    Buckets,
}

impl std::str::FromStr for AnalysisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss-gap" => Ok(AnalysisKind::LossGap),
            "b-sweep" => Ok(AnalysisKind::BSweep),
            "buckets" => Ok(AnalysisKind::Buckets),
            other => Err(Error::invalid(format!(
                "unknown analysis {other:?} (expected loss-gap, b-sweep or buckets)"
            ))),
        }
    }
}

fn student_runs(cfg: &RunConfig, layout: &Layout) -> Result<Vec<(f64, PathBuf)>> {
    let missing: Vec<String> = cfg
        .mono
        .fractions
        .iter()
        .filter(|&&f| !layout.student(f).join("summary.json").exists())
        .map(|f| format!("mono fraction {f} ({})", layout.student(*f).display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("student runs: {}", missing.join("; "))));
    }
    Ok(cfg.mono.fractions.iter().map(|&f| (f, layout.student_checkpoint(f))).collect())
}

pub fn loss_gap_from_runs(cfg: &RunConfig, layout: &Layout) -> Result<LossGapReport> {
    let runs = student_runs(cfg, layout)?
        .into_iter()
        .map(|(f, _)| {
            let s: TrainSummary = read_json(&layout.student(f).join("summary.json"), "student summary")?;
            Ok(LossGapRun {
                fraction: f,
                train_loss: s.train_loss,
                test_loss: s.test_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    loss_gap_analysis(&runs, &cfg.mono.fractions)
}

/// Writes the requested report under `reports/` and returns its path.
pub fn cmd_analyze(cfg: &RunConfig, kind: AnalysisKind, teacher: Option<&Path>) -> Result<PathBuf> {
    let layout = Layout::of(cfg);
    let dir = layout.reports();
    match kind {
        AnalysisKind::LossGap => {
            let rep = loss_gap_from_runs(cfg, &layout)?;
            let _lock = RunLock::acquire(&layout.root)?;
            prepare(&dir, cfg)?;
            std::fs::write(dir.join("loss_gap.dat"), rep.plot_data())?;
            let path = dir.join("loss_gap.jsonl");
            write_jsonl(&path, &rep.rows)?;
            Ok(path)
        }
        AnalysisKind::BSweep => {
            let runs = student_runs(cfg, &layout)?;
            let tpath = teacher_path(&layout, teacher);
            let teacher = load_model(&tpath, "teacher checkpoint", Flavor::Ar)?;
            let test = load_split(&layout, "test")?;
            let students = runs
                .iter()
                .map(|(f, p)| Ok((format!("mono-{f}"), load_model(p, "student checkpoint", Flavor::Nar)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(String, &ModelParams)> = students.iter().map(|(n, p)| (n.clone(), p)).collect();
            let settings = SweepSettings {
                offset: resolve_offset(cfg, &layout, None, false)?,
                rank_mode: cfg.length.rank_mode,
                dedup: cfg.length.dedup,
                smoothing: cfg.eval.smoothing,
            };
            let table = b_sweep(&refs, &teacher, &test, &cfg.eval.half_widths, settings)?;
            let _lock = RunLock::acquire(&layout.root)?;
            prepare(&dir, cfg)?;
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|r| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("half_width".into(), serde_json::json!(r.half_width));
                    for (v, b) in table.variants.iter().zip(&r.bleu) {
                        obj.insert(v.clone(), serde_json::json!(b));
                    }
                    serde_json::Value::Object(obj)
                })
                .collect();
            let path = dir.join("b_sweep.jsonl");
            write_jsonl(&path, &rows)?;
            Ok(path)
        }
        AnalysisKind::Buckets => {
            let runs = student_runs(cfg, &layout)?;
            let test = load_split(&layout, "test")?;
            let src_lens: Vec<usize> = test.iter().map(|p| p.src.len()).collect();
            let buckets = match &cfg.eval.buckets {
                Some(b) => b.clone(),
                None => tercile_buckets(&src_lens)?,
            };
            let refs: Vec<&[usize]> = test.iter().map(|p| p.tgt.as_slice()).collect();
            let srcs: Vec<&[usize]> = test.iter().map(|p| p.src.as_slice()).collect();
            let mut rows = Vec::new();
            for (f, p) in runs {
                let student = load_model(&p, "student checkpoint", Flavor::Nar)?;
                let out = gold_length_outputs(&student, &test)?;
                let out: Vec<TokenSequence> =
                    if cfg.length.dedup { out.iter().map(|s| dedup_adjacent(s)).collect() } else { out };
                let table = bucket_bleu(&out, &refs, &srcs, &buckets, cfg.eval.smoothing)?;
                for r in table.rows {
                    rows.push(serde_json::json!({
                        "variant": format!("mono-{f}"),
                        "lo": r.lo,
                        "hi": r.hi,
                        "count": r.count,
                        "bleu": r.bleu,
                    }));
                }
            }
            let _lock = RunLock::acquire(&layout.root)?;
            prepare(&dir, cfg)?;
            let path = dir.join("buckets.jsonl");
            write_jsonl(&path, &rows)?;
            Ok(path)
        }
    }
}
