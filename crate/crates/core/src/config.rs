//! Run configuration: a flat `key = value` file merged with command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::Lang;
use crate::model::{Ablation, Hyperparams};
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Every tunable of the pipeline. Keys in config files use the field names;
/// flags use the same names with `-` in place of `_`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub vocab_min_freq: usize,
    pub vocab_max_size: Option<usize>,
    pub lambda_cov: f64,
    pub ablation: Option<Ablation>,
    pub max_len: usize,
    pub init_range: f64,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub max_steps: Option<usize>,
    pub log_every: usize,

    pub lang: Option<Lang>,
    pub min_score: i64,
    /// Held-out pair counts; a tenth of the corpus each when unset.
    pub val_count: Option<usize>,
    pub test_count: Option<usize>,

    pub beam: usize,
    pub greedy: bool,
    pub delta: f64,
    pub top: usize,
    pub raw_embeddings: bool,

    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::new(0);
        let t = TrainConfig::default();
        RunConfig {
            embed_dim: h.embed_dim,
            hidden: h.hidden,
            vocab_min_freq: h.vocab_min_freq,
            vocab_max_size: None,
            lambda_cov: h.lambda_cov,
            ablation: None,
            max_len: h.max_decode_len,
            init_range: h.init_range,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            grad_clip_norm: t.grad_clip_norm,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
            max_steps: t.max_steps,
            log_every: t.log_every,
            lang: None,
            min_score: 1,
            val_count: None,
            test_count: None,
            beam: 10,
            greedy: false,
            delta: 0.8,
            top: 3,
            raw_embeddings: false,
            input: None,
            out_dir: None,
            train: None,
            val: None,
            test: None,
            corpus: None,
            vocab: None,
            model: None,
            candidates: None,
            output: None,
            report: None,
            log: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

/// `off` or `none` disables an optional setting.
fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value {
        "off" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value {value:?} for {key}: expected true or false"
        ))),
    }
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "embed_dim",
        "hidden",
        "vocab_min_freq",
        "vocab_max_size",
        "lambda_cov",
        "ablation",
        "max_len",
        "init_range",
        "lr",
        "batch_size",
        "epochs",
        "grad_clip_norm",
        "seed",
        "checkpoint_every",
        "max_steps",
        "log_every",
        "lang",
        "min_score",
        "val_count",
        "test_count",
        "beam",
        "greedy",
        "delta",
        "top",
        "raw_embeddings",
        "input",
        "out_dir",
        "train",
        "val",
        "test",
        "corpus",
        "vocab",
        "model",
        "candidates",
        "output",
        "report",
        "log",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        match key {
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "vocab_min_freq" => self.vocab_min_freq = parse(key, v)?,
            "vocab_max_size" => self.vocab_max_size = optional(key, v)?,
            "lambda_cov" => self.lambda_cov = parse(key, v)?,
            "ablation" => self.ablation = Some(parse(key, v)?),
            "max_len" => self.max_len = parse(key, v)?,
            "init_range" => self.init_range = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "grad_clip_norm" => self.grad_clip_norm = optional(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = optional(key, v)?,
            "max_steps" => self.max_steps = optional(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "lang" => self.lang = Some(parse(key, v)?),
            "min_score" => self.min_score = parse(key, v)?,
            "val_count" => self.val_count = Some(parse(key, v)?),
            "test_count" => self.test_count = Some(parse(key, v)?),
            "beam" => self.beam = parse(key, v)?,
            "greedy" => self.greedy = boolean(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "top" => self.top = parse(key, v)?,
            "raw_embeddings" => self.raw_embeddings = boolean(key, v)?,
            "input" => self.input = path(),
            "out_dir" => self.out_dir = path(),
            "train" => self.train = path(),
            "val" => self.val = path(),
            "test" => self.test = path(),
            "corpus" => self.corpus = path(),
            "vocab" => self.vocab = path(),
            "model" => self.model = path(),
            "candidates" => self.candidates = path(),
            "output" => self.output = path(),
            "report" => self.report = path(),
            "log" => self.log = path(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file. Blank lines and lines starting with `#` are ignored.
    /// Relative paths in the file are resolved against `base`.
    pub fn apply_file_text(&mut self, text: &str, origin: &str, base: Option<&Path>) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{origin}:{}: {msg}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at("expected key = value".into()))?;
            let key = key.trim();
            self.set(key, value).map_err(|e| match e {
                Error::Config(msg) => at(msg),
                other => at(other.to_string()),
            })?;
            if let (Some(base), true) = (base, self.is_path_key(key)) {
                self.rebase(key, base);
            }
        }
        Ok(())
    }

    fn is_path_key(&self, key: &str) -> bool {
        matches!(
            key,
            "input"
                | "out_dir"
                | "train"
                | "val"
                | "test"
                | "corpus"
                | "vocab"
                | "model"
                | "candidates"
                | "output"
                | "report"
                | "log"
        )
    }

    fn rebase(&mut self, key: &str, base: &Path) {
        let slot = match key {
            "input" => &mut self.input,
            "out_dir" => &mut self.out_dir,
            "train" => &mut self.train,
            "val" => &mut self.val,
            "test" => &mut self.test,
            "corpus" => &mut self.corpus,
            "vocab" => &mut self.vocab,
            "model" => &mut self.model,
            "candidates" => &mut self.candidates,
            "output" => &mut self.output,
            "report" => &mut self.report,
            _ => &mut self.log,
        };
        if let Some(p) = slot.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn hyperparams(&self, vocab_size: usize) -> Hyperparams {
        Hyperparams {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            vocab_size,
            vocab_min_freq: self.vocab_min_freq,
            lambda_cov: self.lambda_cov,
            ablation: self.ablation.unwrap_or(Ablation::FULL),
            max_decode_len: self.max_len,
            init_range: self.init_range,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            grad_clip_norm: self.grad_clip_norm,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            max_steps: self.max_steps,
            log_every: self.log_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        let text = "# comment\nembed_dim = 64\nablation=atten+copy\ngrad_clip_norm = off\nvocab = v.txt\n\n";
        c.apply_file_text(text, "cfg", Some(Path::new("/data"))).unwrap();
        assert_eq!(c.embed_dim, 64);
        assert_eq!(c.ablation, Some(Ablation::ATTEN_COPY));
        assert_eq!(c.grad_clip_norm, None);
        assert_eq!(c.vocab.as_deref(), Some(Path::new("/data/v.txt")));
        c.set("embed_dim", "32").unwrap();
        assert_eq!(c.embed_dim, 32);
        assert_eq!(c.hyperparams(50).embed_dim, 32);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::default();
        let err = c
            .apply_file_text("a = 1\nlearning_rate = 3\n", "cfg", None)
            .unwrap_err();
        assert!(err.to_string().contains("cfg:1:"), "{err}");
        assert!(c.set("learning_rate", "3").is_err());
        assert!(c.set("lang", "cobol").is_err());
        assert!(c.set("hidden", "-1").is_err());
        assert!(c.apply_file_text("no equals sign", "cfg", None).is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for key in RunConfig::KEYS {
            let value = match *key {
                "ablation" => "basic",
                "lang" => "sql",
                "greedy" | "raw_embeddings" => "true",
                "lambda_cov" | "lr" | "init_range" | "delta" | "grad_clip_norm" => "0.5",
                _ => "3",
            };
            c.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
