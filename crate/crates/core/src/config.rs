//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional; an
//! empty file yields [`Config::default`]. Unknown keys, repeated keys and
//! malformed values are errors that name the offending line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::ProjectionSharing;
use crate::error::{Error, Result};
use crate::model::{DecoderOrder, ModelConfig, Variant};
use crate::signal::{synth_device_fingerprint, synth_multitone, Dataset, FingerprintConfig, MultitoneConfig};
use crate::train::{stream_rng, LossKind, LrSchedule, Stream, Task, TaskSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Multitone,
    Fingerprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub n_examples: usize,
    pub t: usize,
    pub f: usize,
    pub n_labels: usize,
    /// Trailing examples held out for evaluation.
    pub holdout: usize,
    pub noise_std: f64,
    pub activation_prob: f64,
    pub persistence: f64,
    /// Dataset read by train/eval/generate; defaults to `dataset.cxs1` in
    /// the output directory.
    pub data_path: Option<PathBuf>,
    /// Checkpoint read by eval/generate; defaults to `checkpoint.cxck` in
    /// the output directory.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let m = MultitoneConfig::default();
        DataConfig {
            kind: DatasetKind::Multitone,
            n_examples: 600,
            t: 16,
            f: 17,
            n_labels: 4,
            holdout: 100,
            noise_std: m.noise_std,
            activation_prob: m.activation_prob,
            persistence: m.persistence,
            data_path: None,
            checkpoint_path: None,
        }
    }
}

impl DataConfig {
    pub fn multitone(&self) -> MultitoneConfig {
        MultitoneConfig { activation_prob: self.activation_prob, persistence: self.persistence, noise_std: self.noise_std, ..MultitoneConfig::default() }
    }

    pub fn fingerprint(&self) -> FingerprintConfig {
        FingerprintConfig { noise_std: self.noise_std, ..FingerprintConfig::default() }
    }

    /// Draws the configured synthetic dataset from the data stream of `seed`.
    pub fn synthesize(&self, seed: u64) -> Result<Dataset> {
        let mut rng = stream_rng(seed, Stream::Data);
        match self.kind {
            DatasetKind::Multitone => synth_multitone(&mut rng, self.n_examples, self.t, self.f, self.n_labels, &self.multitone()),
            DatasetKind::Fingerprint => synth_device_fingerprint(&mut rng, self.n_examples, self.t, self.f, self.n_labels, &self.fingerprint()),
        }
    }

    /// Splits a dataset into its training part and the trailing holdout.
    pub fn split(&self, data: Dataset) -> Result<(Dataset, Dataset)> {
        if self.holdout > data.len() {
            return Err(Error::Config(format!("holdout {} exceeds the {} examples available", self.holdout, data.len())));
        }
        data.split_tail(self.holdout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub gradcheck_tol: f64,
    pub oracle_cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { gradcheck_tol: 1e-4, oracle_cases: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub verify: VerifyConfig,
}

trait Keyword: Sized + Copy + 'static {
    const WORDS: &'static [(&'static str, Self)];

    fn parse_word(s: &str) -> Option<Self> {
        Self::WORDS.iter().find(|(w, _)| *w == s).map(|&(_, v)| v)
    }

    fn word(self) -> &'static str
    where
        Self: PartialEq,
    {
        Self::WORDS.iter().find(|(_, v)| *v == self).map(|(w, _)| *w).expect("every value has a keyword")
    }

    fn choices() -> String {
        Self::WORDS.iter().map(|(w, _)| *w).collect::<Vec<_>>().join(" | ")
    }
}

impl Keyword for Variant {
    const WORDS: &'static [(&'static str, Self)] = &[("complex", Variant::Complex), ("concatenated", Variant::Concatenated)];
}
impl Keyword for DecoderOrder {
    const WORDS: &'static [(&'static str, Self)] = &[("literal", DecoderOrder::Literal), ("conventional", DecoderOrder::Conventional)];
}
impl Keyword for ProjectionSharing {
    const WORDS: &'static [(&'static str, Self)] = &[("shared", ProjectionSharing::Shared), ("per_term", ProjectionSharing::PerTerm)];
}
impl Keyword for Task {
    const WORDS: &'static [(&'static str, Self)] = &[
        ("classify_frames", Task::ClassifyFrames),
        ("classify_sequence", Task::ClassifySequence),
        ("conditional_generate", Task::ConditionalGenerate),
    ];
}
impl Keyword for LossKind {
    const WORDS: &'static [(&'static str, Self)] = &[("bce", LossKind::Bce), ("ce", LossKind::Ce)];
}
impl Keyword for DatasetKind {
    const WORDS: &'static [(&'static str, Self)] = &[("multitone", DatasetKind::Multitone), ("fingerprint", DatasetKind::Fingerprint)];
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScheduleWord {
    Constant,
    InverseSqrt,
}
impl Keyword for ScheduleWord {
    const WORDS: &'static [(&'static str, Self)] = &[("constant", ScheduleWord::Constant), ("inverse_sqrt", ScheduleWord::InverseSqrt)];
}

struct Line<'a> {
    no: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Config(format!("line {}: {msg}", self.no))
    }

    fn num<T: FromStr>(&self, what: &str) -> Result<T> {
        self.value.parse().map_err(|_| self.err(format_args!("'{}' expects {what}, got '{}'", self.key, self.value)))
    }

    fn int(&self) -> Result<usize> {
        self.num("a non-negative integer")
    }

    fn real(&self) -> Result<f64> {
        let v: f64 = self.num("a real number")?;
        if !v.is_finite() {
            return Err(self.err(format_args!("'{}' must be finite", self.key)));
        }
        Ok(v)
    }

    fn real_in(&self, lo: f64, hi: f64, hi_open: bool) -> Result<f64> {
        let v = self.real()?;
        if v < lo || v > hi || (hi_open && v == hi) {
            let close = if hi_open { ')' } else { ']' };
            return Err(self.err(format_args!("'{}' = {v} is outside [{lo}, {hi}{close}", self.key)));
        }
        Ok(v)
    }

    fn boolean(&self) -> Result<bool> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.err(format_args!("'{}' expects true or false, got '{}'", self.key, self.value))),
        }
    }

    fn word<K: Keyword>(&self) -> Result<K> {
        K::parse_word(self.value).ok_or_else(|| self.err(format_args!("'{}' expects one of {}, got '{}'", self.key, K::choices(), self.value)))
    }

    fn path(&self) -> Option<PathBuf> {
        (!self.value.is_empty()).then(|| PathBuf::from(self.value))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let c = Self::parse_raw(text)?;
        c.validate()?;
        Ok(c)
    }

    fn parse_raw(text: &str) -> Result<Self> {
        let mut c = Config::default();
        let mut seen: Vec<(String, usize)> = Vec::new();
        let mut schedule = ScheduleWord::Constant;
        let mut warmup = 4000u64;
        for (i, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let no = i + 1;
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config(format!("line {no}: expected 'key = value', got '{body}'")))?;
            let l = Line { no, key: key.trim(), value: value.trim() };
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == l.key) {
                return Err(l.err(format_args!("'{}' already set on line {first}", l.key)));
            }
            seen.push((l.key.to_string(), no));
            let (m, t, tr, d, v) = (&mut c.model, &mut c.task, &mut c.train, &mut c.data, &mut c.verify);
            match l.key {
                "n_encoder_layers" => m.n_encoder_layers = l.int()?,
                "n_decoder_layers" => m.n_decoder_layers = l.int()?,
                "d_model" => m.d_model = l.int()?,
                "n_heads" => m.n_heads = l.int()?,
                "d_ff" => m.d_ff = l.int()?,
                "dropout_attn" => m.dropout_attn = l.real_in(0.0, 1.0, true)?,
                "dropout_relu" => m.dropout_relu = l.real_in(0.0, 1.0, true)?,
                "dropout_residual" => m.dropout_residual = l.real_in(0.0, 1.0, true)?,
                "positional_encoding" => m.positional_encoding = l.boolean()?,
                "variant" => m.variant = l.word()?,
                "decoder_order" => m.decoder_order = l.word()?,
                "projection_sharing" => m.projection_sharing = l.word()?,
                "task" => t.task = l.word()?,
                "loss" => t.loss = l.word()?,
                "encoder_fraction" => t.encoder_fraction = l.real_in(0.0, 1.0, true)?,
                "recon_weight" => t.recon_weight = l.real_in(0.0, f64::MAX, false)?,
                "epochs" => tr.epochs = l.int()?,
                "batch_size" => tr.batch_size = l.int()?,
                "lr" => tr.adam.lr = l.real_in(0.0, f64::MAX, false)?,
                "beta1" => tr.adam.beta1 = l.real_in(0.0, 1.0, true)?,
                "beta2" => tr.adam.beta2 = l.real_in(0.0, 1.0, true)?,
                "eps_opt" => tr.adam.eps = l.real()?,
                "lr_schedule" => schedule = l.word()?,
                "warmup_steps" => warmup = l.num("a non-negative integer")?,
                "dataset" => d.kind = l.word()?,
                "n_examples" => d.n_examples = l.int()?,
                "time_steps" => d.t = l.int()?,
                "n_bins" => d.f = l.int()?,
                "n_labels" => d.n_labels = l.int()?,
                "holdout" => d.holdout = l.int()?,
                "noise_std" => d.noise_std = l.real_in(0.0, f64::MAX, false)?,
                "activation_prob" => d.activation_prob = l.real_in(0.0, 1.0, false)?,
                "persistence" => d.persistence = l.real_in(0.0, 1.0, true)?,
                "data_path" => d.data_path = l.path(),
                "checkpoint_path" => d.checkpoint_path = l.path(),
                "gradcheck_tol" => v.gradcheck_tol = l.real_in(0.0, f64::MAX, false)?,
                "oracle_cases" => v.oracle_cases = l.int()?,
                other => return Err(l.err(format_args!("unknown key '{other}'"))),
            }
        }
        c.train.adam.schedule = match schedule {
            ScheduleWord::Constant => LrSchedule::Constant,
            ScheduleWord::InverseSqrt => LrSchedule::InverseSqrt { warmup },
        };
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.holdout > d.n_examples {
            return Err(Error::Config(format!("holdout {} exceeds n_examples {}", d.holdout, d.n_examples)));
        }
        if d.t == 0 || d.f < 2 {
            return Err(Error::Config(format!("time_steps must be ≥ 1 and n_bins ≥ 2, got {} and {}", d.t, d.f)));
        }
        let expected = match d.kind {
            DatasetKind::Multitone => LossKind::Bce,
            DatasetKind::Fingerprint => LossKind::Ce,
        };
        if self.task.loss != expected {
            return Err(Error::Config(format!("dataset '{}' pairs with loss '{}'", d.kind.word(), expected.word())));
        }
        if self.verify.oracle_cases == 0 || self.verify.gradcheck_tol <= 0.0 {
            return Err(Error::Config("oracle_cases and gradcheck_tol must be positive".into()));
        }
        Ok(())
    }

    /// Model and task keys only; stored in checkpoints.
    pub fn model_text(model: &ModelConfig, task: &TaskSpec) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_encoder_layers", model.n_encoder_layers.to_string());
        kv("n_decoder_layers", model.n_decoder_layers.to_string());
        kv("d_model", model.d_model.to_string());
        kv("n_heads", model.n_heads.to_string());
        kv("d_ff", model.d_ff.to_string());
        kv("dropout_attn", model.dropout_attn.to_string());
        kv("dropout_relu", model.dropout_relu.to_string());
        kv("dropout_residual", model.dropout_residual.to_string());
        kv("positional_encoding", model.positional_encoding.to_string());
        kv("variant", model.variant.word().into());
        kv("decoder_order", model.decoder_order.word().into());
        kv("projection_sharing", model.projection_sharing.word().into());
        kv("task", task.task.word().into());
        kv("loss", task.loss.word().into());
        kv("encoder_fraction", task.encoder_fraction.to_string());
        kv("recon_weight", task.recon_weight.to_string());
        s
    }

    /// Every key with its effective value; parsing the result gives back
    /// the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# model and task\n");
        s.push_str(&Self::model_text(&self.model, &self.task));
        let mut kv = |k: &str, v: String| {
            let _ = if k.starts_with('#') { writeln!(s, "{k}") } else { writeln!(s, "{k} = {v}") };
        };
        kv("# training", String::new());
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        let a = &self.train.adam;
        kv("lr", a.lr.to_string());
        kv("beta1", a.beta1.to_string());
        kv("beta2", a.beta2.to_string());
        kv("eps_opt", a.eps.to_string());
        match a.schedule {
            LrSchedule::Constant => kv("lr_schedule", "constant".into()),
            LrSchedule::InverseSqrt { warmup } => {
                kv("lr_schedule", "inverse_sqrt".into());
                kv("warmup_steps", warmup.to_string());
            }
        }
        let d = &self.data;
        kv("# data", String::new());
        kv("dataset", d.kind.word().into());
        kv("n_examples", d.n_examples.to_string());
        kv("time_steps", d.t.to_string());
        kv("n_bins", d.f.to_string());
        kv("n_labels", d.n_labels.to_string());
        kv("holdout", d.holdout.to_string());
        kv("noise_std", d.noise_std.to_string());
        kv("activation_prob", d.activation_prob.to_string());
        kv("persistence", d.persistence.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        kv("data_path", path(&d.data_path));
        kv("checkpoint_path", path(&d.checkpoint_path));
        kv("# verification", String::new());
        kv("gradcheck_tol", self.verify.gradcheck_tol.to_string());
        kv("oracle_cases", self.verify.oracle_cases.to_string());
        s
    }

    /// Parses the text written by [`Config::model_text`].
    pub fn parse_model_text(text: &str) -> Result<(ModelConfig, TaskSpec)> {
        let c = Self::parse_raw(text)?;
        c.model.validate()?;
        c.task.validate()?;
        Ok((c.model, c.task))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!((c.model.n_encoder_layers, c.model.n_decoder_layers, c.model.n_heads), (6, 6, 8));
        assert_eq!(c.train.adam.lr, 1e-3);
        assert_eq!(c.task.encoder_fraction, 0.6);
    }

    #[test]
    fn comments_whitespace_and_values() {
        let c = Config::parse("# header\n  d_model = 32   # inline\n\nn_heads=4\nvariant = concatenated\npositional_encoding = false\n").unwrap();
        assert_eq!((c.model.d_model, c.model.n_heads), (32, 4));
        assert_eq!(c.model.variant, Variant::Concatenated);
        assert!(!c.model.positional_encoding);
    }

    fn config_err(text: &str) -> String {
        match Config::parse(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_are_distinct_and_located() {
        assert!(config_err("d_model = 64\nn_heads = 7").contains("divisible"));
        assert!(config_err("\ndropout_attn = 1.5").starts_with("line 2:"));
        assert!(config_err("\ndropout_attn = 1.5").contains("outside"));
        let unknown = config_err("epochs = 3\nwidth = 9");
        assert!(unknown.starts_with("line 2:") && unknown.contains("unknown key 'width'"));
        let typed = config_err("d_model = big");
        assert!(typed.starts_with("line 1:") && typed.contains("integer"));
        assert!(config_err("variant = quaternion").contains("complex | concatenated"));
        assert!(config_err("epochs = 1\nepochs = 2").contains("already set on line 1"));
        assert!(config_err("just words").contains("key = value"));
        let missing = match Config::from_file("/nonexistent/cfg.txt") {
            Err(Error::Config(m)) => m,
            other => panic!("{other:?}"),
        };
        assert!(missing.contains("cannot read config file"));
    }

    #[test]
    fn echo_roundtrips() {
        let text = "d_model = 32\nn_heads = 4\nlr_schedule = inverse_sqrt\nwarmup_steps = 50\ndataset = fingerprint\nloss = ce\ntask = classify_sequence\ndata_path = /tmp/x.cxs1\nrecon_weight = 0.25\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        let d = Config::default();
        assert_eq!(Config::parse(&d.to_text()).unwrap(), d);
        let (m, t) = Config::parse_model_text(&Config::model_text(&c.model, &c.task)).unwrap();
        assert_eq!((m, t), (c.model, c.task));
    }
}
