//! Run configuration: one TOML document binding the task, both models,
//! both training recipes, the length policy and the monolingual mix.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Bucket, Smoothing};
use crate::length::RankMode;
use crate::model::{Flavor, ModelConfig};
use crate::synth::{SplitSizes, TaskKind, TaskSpec};
use crate::train::TrainConfig;

/// Environment variable naming the directory under which runs without an
/// explicit `output_dir` are placed.
pub const OUTPUT_ROOT_ENV: &str = "NARMT_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Monolingual pool size.
    pub mono: usize,
    pub seed: u64,
    /// Must differ from `seed`.
    pub mono_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: 8000,
            valid: 500,
            test: 1000,
            mono: 32000,
            seed: 1,
            mono_seed: 2,
        }
    }
}

impl DataConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train,
            valid: self.valid,
            test: self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthConfig {
    /// `C`; estimated from the training pairs when absent.
    pub offset: Option<i64>,
    pub half_width: usize,
    pub rank_mode: RankMode,
    pub dedup: bool,
}

impl Default for LengthConfig {
    fn default() -> Self {
        LengthConfig {
            offset: None,
            half_width: 2,
            rank_mode: RankMode::SumLogprob,
            dedup: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonoConfig {
    /// Fraction used by `train-student`.
    pub fraction: f64,
    /// Fractions compared by the loss-gap and sweep analyses.
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for MonoConfig {
    fn default() -> Self {
        MonoConfig {
            fraction: 1.0,
            fractions: vec![0.0, 0.25, 0.5, 1.0],
            seed: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub half_widths: Vec<usize>,
    pub smoothing: Smoothing,
    pub lowercase: bool,
    /// Source-length buckets; terciles of the test set when absent.
    pub buckets: Option<Vec<Bucket>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            half_widths: vec![0, 1, 2, 3, 4, 5],
            smoothing: Smoothing::None,
            lowercase: false,
            buckets: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: Option<PathBuf>,
    pub task: TaskSpec,
    pub data: DataConfig,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub teacher_train: TrainConfig,
    pub student_train: TrainConfig,
    pub length: LengthConfig,
    pub mono: MonoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = TaskSpec::desk(TaskKind::MappedReversal);
        let vocab = task.total_vocab();
        RunConfig {
            name: "run".to_string(),
            output_dir: None,
            task,
            data: DataConfig::default(),
            teacher: ModelConfig::desk(vocab, Flavor::Ar),
            student: ModelConfig::desk(vocab, Flavor::Nar),
            teacher_train: TrainConfig::default(),
            student_train: TrainConfig::default(),
            length: LengthConfig::default(),
            mono: MonoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::invalid(format!("bad key {key:?}")))?;
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("{key}: {p} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of a `key=value` override as a TOML value,
/// falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parses TOML text over the defaults and applies `section.key=value`
    /// overrides. Sections may be partial.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::invalid(format!("config: {e}")))?;
        let mut table: toml::Table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::invalid(format!("config: {e}")))?;
        merge(&mut table, user);
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override {o:?} is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Defaults plus overrides, without a file.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_toml_str("", overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.teacher_train.validate()?;
        self.student_train.validate()?;
        if self.teacher.flavor != Flavor::Ar || self.student.flavor != Flavor::Nar {
            return Err(Error::invalid("teacher must be flavor \"ar\" and student flavor \"nar\""));
        }
        let vocab = self.task.total_vocab();
        if self.teacher.vocab_size != vocab || self.student.vocab_size != vocab {
            return Err(Error::invalid(format!(
                "model vocab_size must equal task vocabulary plus reserved ids ({vocab})"
            )));
        }
        if !self.teacher.encoder_compatible(&self.student) {
            return Err(Error::invalid("student encoder dimensions must match the teacher's"));
        }
        let need = self.task.max_target_len() + 1;
        if self.teacher.max_len < need || self.student.max_len < need {
            return Err(Error::invalid(format!(
                "max_len must be at least {need} for this task"
            )));
        }
        if self.data.train == 0 {
            return Err(Error::invalid("data.train must be positive"));
        }
        if self.data.mono > 0 && self.data.mono_seed == self.data.seed {
            return Err(Error::invalid("data.mono_seed must differ from data.seed"));
        }
        for f in std::iter::once(&self.mono.fraction).chain(&self.mono.fractions) {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::invalid(format!("monolingual fraction {f} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// `output_dir`, or `$NARMT_OUTPUT_ROOT/<name>`, or `runs/<name>`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if let Some(d) = &self.output_dir {
            return d.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.length.offset = Some(2);
        cfg.eval.buckets = Some(vec![Bucket { lo: 1, hi: 5 }, Bucket { lo: 6, hi: 12 }]);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::from_overrides(&[
            "data.train=100".into(),
            "task.kind=even_duplication".into(),
            "length.rank_mode=\"mean_logprob\"".into(),
            "student_train.peak_lr=0.002".into(),
        ])
        .unwrap();
        assert_eq!(cfg.data.train, 100);
        assert_eq!(cfg.task.kind, TaskKind::EvenDuplication);
        assert_eq!(cfg.length.rank_mode, RankMode::MeanLogprob);
        assert_eq!(cfg.student_train.peak_lr, 0.002);
    }

    #[test]
    fn bad_configs_are_explained() {
        let err = RunConfig::from_overrides(&["teacher.flavor=\"nar\"".into()]).unwrap_err().to_string();
        assert!(err.contains("teacher"), "{err}");
        let err = RunConfig::from_toml_str("[data]\ntrian = 3\n", &[]).unwrap_err().to_string();
        assert!(err.contains("trian"), "{err}");
        assert!(RunConfig::from_overrides(&["mono.fraction=1.5".into()]).is_err());
        assert!(RunConfig::from_overrides(&["nonsense".into()]).is_err());
        let err = RunConfig::from_overrides(&["task.kind=even_duplication".into(), "teacher.max_len=20".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("max_len"), "{err}");
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_toml_str("[student]\nmodel_dim = 64\n[task]\nmax_len = 10\n", &[]).unwrap();
        assert_eq!(cfg.student.flavor, Flavor::Nar);
        assert_eq!(cfg.task.min_len, 3);
        assert_eq!(cfg.task.max_len, 10);
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = RunConfig::default();
        cfg.output_dir = Some(PathBuf::from("/tmp/explicit"));
        assert_eq!(cfg.resolved_output_dir(), PathBuf::from("/tmp/explicit"));
    }
}
