//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! train = data/train.tsv
//! dev = data/dev.tsv
//! checkpoint = out/best.ckpt
//! lr_init = 0.001
//! ```
//!
//! Unknown keys, repeated keys and unparsable values are errors. Relative
//! paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{PanError, Result};
use crate::model::ModelDims;
use crate::training::TrainingConfig;

pub const DEFAULT_MAX_LEN: usize = 50;
pub const DEFAULT_MIN_COUNT: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: Option<PathBuf>,
    /// Without embeddings every row is drawn from the OOV initializer.
    pub embeddings: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Defaults to the checkpoint path with a `.log.tsv` suffix.
    pub log: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub paths: RunPaths,
    pub training: TrainingConfig,
    pub max_len: usize,
    pub min_count: usize,
    pub d_emb: usize,
    pub hidden: usize,
}

/// The part of a run that a checkpoint needs to reproduce preprocessing and
/// to document how it was trained.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSnapshot {
    pub training: TrainingConfig,
    pub max_len: usize,
}

fn parse_value<T: FromStr>(source: &str, line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| PanError::Parse {
        source_name: source.to_string(),
        line,
        message: format!("invalid value `{value}` for `{key}`"),
    })
}

/// Splits into `(line number, key, value)` triples, rejecting duplicates.
fn entries<'a>(text: &'a str, source: &str) -> Result<Vec<(usize, &'a str, &'a str)>> {
    let mut out: Vec<(usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(PanError::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if out.iter().any(|(_, k, _)| *k == key) {
            return Err(PanError::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message: format!("duplicate key `{key}`"),
            });
        }
        out.push((i + 1, key, value));
    }
    Ok(out)
}

/// Applies one training key; returns false if `key` is not a training key.
fn set_training_key(cfg: &mut TrainingConfig, source: &str, line: usize, key: &str, value: &str) -> Result<bool> {
    let p = |v: &str| -> Result<f64> { parse_value(source, line, key, v) };
    let n = |v: &str| -> Result<usize> { parse_value(source, line, key, v) };
    match key {
        "batch_size" => cfg.batch_size = n(value)?,
        "lr_init" => cfg.lr_init = p(value)?,
        "lr_floor" => cfg.lr_floor = p(value)?,
        "lr_halve_patience" => cfg.lr_halve_patience = n(value)?,
        "pos_weight" => cfg.pos_weight = p(value)?,
        "dropout_dense" => cfg.dropout_dense = p(value)?,
        "spatial_dropout" => cfg.spatial_dropout = p(value)?,
        "weight_noise_std" => cfg.weight_noise_std = p(value)?,
        "l2_coeff" => cfg.l2_coeff = p(value)?,
        "early_stop_patience" => cfg.early_stop_patience = n(value)?,
        "max_epochs" => cfg.max_epochs = n(value)?,
        "threshold" => cfg.threshold = p(value)?,
        "seed" => cfg.seed = parse_value(source, line, key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn unknown(source: &str, line: usize, key: &str) -> PanError {
    PanError::Parse {
        source_name: source.to_string(),
        line,
        message: format!("unknown key `{key}`"),
    }
}

impl RunConfig {
    /// Parses config text. `base_dir` anchors relative paths.
    pub fn parse(text: &str, source: &str, base_dir: &Path) -> Result<Self> {
        let mut training = TrainingConfig::default();
        let mut max_len = DEFAULT_MAX_LEN;
        let mut min_count = DEFAULT_MIN_COUNT;
        let mut d_emb = ModelDims::DEFAULT_EMBEDDING_DIM;
        let mut hidden = ModelDims::DEFAULT_HIDDEN;
        let (mut train, mut dev, mut test, mut embeddings, mut checkpoint, mut log) =
            (None, None, None, None, None, None);
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        for (line, key, value) in entries(text, source)? {
            match key {
                "train" => train = Some(resolve(value)),
                "dev" => dev = Some(resolve(value)),
                "test" => test = Some(resolve(value)),
                "embeddings" => embeddings = Some(resolve(value)),
                "checkpoint" => checkpoint = Some(resolve(value)),
                "log" => log = Some(resolve(value)),
                "max_len" => max_len = parse_value(source, line, key, value)?,
                "min_count" => min_count = parse_value(source, line, key, value)?,
                "d_emb" => d_emb = parse_value(source, line, key, value)?,
                "hidden" => hidden = parse_value(source, line, key, value)?,
                _ => {
                    if !set_training_key(&mut training, source, line, key, value)? {
                        return Err(unknown(source, line, key));
                    }
                }
            }
        }

        let require = |p: Option<PathBuf>, key: &str| {
            p.ok_or_else(|| PanError::Config(format!("{source}: missing required key `{key}`")))
        };
        let checkpoint = require(checkpoint, "checkpoint")?;
        let log = log.unwrap_or_else(|| {
            let mut s = checkpoint.clone().into_os_string();
            s.push(".log.tsv");
            PathBuf::from(s)
        });
        let cfg = RunConfig {
            paths: RunPaths {
                train: require(train, "train")?,
                dev: require(dev, "dev")?,
                test,
                embeddings,
                checkpoint,
                log,
            },
            training,
            max_len,
            min_count,
            d_emb,
            hidden,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PanError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        RunConfig::parse(&text, &path.display().to_string(), base)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        for (name, v) in [
            ("max_len", self.max_len),
            ("min_count", self.min_count),
            ("d_emb", self.d_emb),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(PanError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Fails on the first input file that does not exist.
    pub fn check_inputs(&self) -> Result<()> {
        let p = &self.paths;
        let inputs = [Some(&p.train), Some(&p.dev), p.test.as_ref(), p.embeddings.as_ref()];
        for path in inputs.into_iter().flatten() {
            if !path.is_file() {
                return Err(PanError::Config(format!("input file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            training: self.training.clone(),
            max_len: self.max_len,
        }
    }
}

impl ConfigSnapshot {
    /// Renders as config text; `{}` on `f64` is round-trip exact.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        format!(
            "batch_size = {}\nlr_init = {}\nlr_floor = {}\nlr_halve_patience = {}\npos_weight = {}\n\
             dropout_dense = {}\nspatial_dropout = {}\nweight_noise_std = {}\nl2_coeff = {}\n\
             early_stop_patience = {}\nmax_epochs = {}\nthreshold = {}\nseed = {}\nmax_len = {}\n",
            t.batch_size,
            t.lr_init,
            t.lr_floor,
            t.lr_halve_patience,
            t.pos_weight,
            t.dropout_dense,
            t.spatial_dropout,
            t.weight_noise_std,
            t.l2_coeff,
            t.early_stop_patience,
            t.max_epochs,
            t.threshold,
            t.seed,
            self.max_len
        )
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut training = TrainingConfig::default();
        let mut max_len = DEFAULT_MAX_LEN;
        for (line, key, value) in entries(text, source)? {
            if key == "max_len" {
                max_len = parse_value(source, line, key, value)?;
            } else if !set_training_key(&mut training, source, line, key, value)? {
                return Err(unknown(source, line, key));
            }
        }
        Ok(ConfigSnapshot { training, max_len })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "train = a.tsv\ndev = b.tsv\ncheckpoint = out/best.ckpt\n";

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::parse(MINIMAL, "run.cfg", Path::new("/data")).unwrap();
        assert_eq!(cfg.paths.train, PathBuf::from("/data/a.tsv"));
        assert_eq!(cfg.paths.log, PathBuf::from("/data/out/best.ckpt.log.tsv"));
        assert_eq!(cfg.training, TrainingConfig::default());
        assert_eq!((cfg.max_len, cfg.min_count, cfg.d_emb, cfg.hidden), (50, 1, 300, 50));
    }

    #[test]
    fn overrides_and_comments() {
        let text = format!("{MINIMAL}# tuned\nlr_init = 0.002 \n seed=9\nhidden = 8\nl2_coeff = 1e-4\n");
        let cfg = RunConfig::parse(&text, "run.cfg", Path::new(".")).unwrap();
        assert_eq!(cfg.training.lr_init, 0.002);
        assert_eq!(cfg.training.seed, 9);
        assert_eq!(cfg.training.l2_coeff, 1e-4);
        assert_eq!(cfg.hidden, 8);
    }

    #[test]
    fn unknown_key_names_the_line() {
        let text = format!("{MINIMAL}learning_rate = 0.1\n");
        let err = RunConfig::parse(&text, "run.cfg", Path::new(".")).unwrap_err();
        assert_eq!(err.to_string(), "run.cfg:4: unknown key `learning_rate`");
        assert!(err.is_user_error());
    }

    #[test]
    fn malformed_values_and_lines() {
        let bad = [
            format!("{MINIMAL}batch_size = many\n"),
            format!("{MINIMAL}batch_size\n"),
            format!("{MINIMAL}seed = 1\nseed = 2\n"),
            format!("{MINIMAL}dropout_dense = 1.5\n"),
            "train = a.tsv\ncheckpoint = c\n".to_string(),
        ];
        for text in bad {
            assert!(RunConfig::parse(&text, "run.cfg", Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_inputs_are_reported() {
        let cfg = RunConfig::parse(MINIMAL, "run.cfg", Path::new("/nonexistent")).unwrap();
        let err = cfg.check_inputs().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/a.tsv"));
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let snap = ConfigSnapshot {
            training: TrainingConfig {
                lr_init: 0.1 + 0.2,
                l2_coeff: 1e-5,
                seed: u64::MAX,
                ..TrainingConfig::default()
            },
            max_len: 37,
        };
        let back = ConfigSnapshot::parse(&snap.to_text(), "snapshot").unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.training.lr_init.to_bits(), (0.1f64 + 0.2).to_bits());
    }
}
