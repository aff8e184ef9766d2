//! The run-config file: flat `key = value` lines with dotted sections,
//! `#` comments, and comma-separated lists on `sweep.*` keys. Unknown keys
//! are rejected with the offending line number. Resolution order, lowest
//! precedence first: built-in defaults, the GENCO_SEED environment variable,
//! the config file, then repeated `--override key=value` flags.

use std::fmt;

use crate::data::PatternFamily;
use crate::trainer::{DatasetConfig, GenLossModeConfig, TrainConfig};

#[derive(Debug)]
pub struct ConfigError {
    /// 1-based config file line, if the error is anchored to one.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err_at(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

/// Values swept by `sweep`; empty axes fall back to the base value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepAxes {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub k: Vec<usize>,
    pub seed: Vec<u64>,
    pub weco_on: Vec<bool>,
    pub daco_on: Vec<bool>,
    pub r_as_augmentation_only: Vec<bool>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
            && self.lambda.is_empty()
            && self.k.is_empty()
            && self.seed.is_empty()
            && self.weco_on.is_empty()
            && self.daco_on.is_empty()
            && self.r_as_augmentation_only.is_empty()
    }
}

/// A fully resolved config file.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub out_dir: Option<String>,
    pub sweep: SweepAxes,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum DataKind {
    Mixture2d,
    TinyImages,
    File,
}

/// Mutable staging area while keys are applied in order.
struct Builder {
    train: TrainConfig,
    out_dir: Option<String>,
    sweep: SweepAxes,
    seed_set: bool,
    data_kind: DataKind,
    data_modes: usize,
    data_train: usize,
    data_holdout: usize,
    data_size: usize,
    data_family: PatternFamily,
    data_path: Option<String>,
}

impl Builder {
    fn new() -> Builder {
        Builder {
            train: TrainConfig::default(),
            out_dir: None,
            sweep: SweepAxes::default(),
            seed_set: false,
            data_kind: DataKind::Mixture2d,
            data_modes: 8,
            data_train: 32,
            data_holdout: 256,
            data_size: 8,
            data_family: PatternFamily::Mixed,
            data_path: None,
        }
    }

    fn apply(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let bad = |what: &str| err_at(line, format!("key `{key}`: expected {what}, got `{value}`"));
        macro_rules! parse {
            ($ty:ty, $what:expr) => {
                value.trim().parse::<$ty>().map_err(|_| bad($what))?
            };
        }
        let t = &mut self.train;
        match key {
            "seed" => {
                t.seed = parse!(u64, "an unsigned integer");
                self.seed_set = true;
            }
            "steps" => t.steps = parse!(u64, "an unsigned integer"),
            "batch_size" => t.batch_size = parse!(usize, "an unsigned integer"),
            "latent_dim" => t.latent_dim = parse!(usize, "an unsigned integer"),
            "p" | "P" => t.p = parse!(f64, "a number"),
            "n_bands" | "N" => t.n_bands = parse!(usize, "an unsigned integer"),
            "lambda" => t.lambda = parse!(f64, "a number"),
            "ema_decay" => t.ema_decay = parse!(f64, "a number"),
            "lr_g" => t.lr_g = parse!(f64, "a number"),
            "lr_d" => t.lr_d = parse!(f64, "a number"),
            "k" => t.k_discriminators = parse!(usize, "an unsigned integer"),
            "g_loss_mode" => {
                t.g_loss_mode = match value.trim() {
                    "non_saturating" => GenLossModeConfig::NonSaturating,
                    "saturating" => GenLossModeConfig::Saturating,
                    _ => return Err(bad("`non_saturating` or `saturating`")),
                }
            }
            "eval_every" => t.eval_every = parse!(u64, "an unsigned integer"),
            "checkpoint_every" => t.checkpoint_every = parse!(u64, "an unsigned integer"),
            "weco_on" => t.weco_on = parse!(bool, "`true` or `false`"),
            "daco_on" => t.daco_on = parse!(bool, "`true` or `false`"),
            "r_as_augmentation_only" => {
                t.r_as_augmentation_only = parse!(bool, "`true` or `false`")
            }
            "wd_abs" => t.wd_abs = parse!(bool, "`true` or `false`"),
            "adam_beta1" => t.adam_beta1 = parse!(f64, "a number"),
            "adam_beta2" => t.adam_beta2 = parse!(f64, "a number"),
            "adam_eps" => t.adam_eps = parse!(f64, "a number"),
            "eval_samples" => t.eval_samples = parse!(usize, "an unsigned integer"),
            "out_dir" => self.out_dir = Some(value.trim().to_string()),
            "data.kind" => {
                self.data_kind = match value.trim() {
                    "mixture2d" => DataKind::Mixture2d,
                    "tinyimages" => DataKind::TinyImages,
                    "file" => DataKind::File,
                    _ => return Err(bad("`mixture2d`, `tinyimages` or `file`")),
                }
            }
            "data.modes" => self.data_modes = parse!(usize, "an unsigned integer"),
            "data.train" => self.data_train = parse!(usize, "an unsigned integer"),
            "data.holdout" => self.data_holdout = parse!(usize, "an unsigned integer"),
            "data.size" => self.data_size = parse!(usize, "an unsigned integer"),
            "data.family" => {
                self.data_family = value.trim().parse().map_err(|_| {
                    bad("`gratings`, `blobs` or `mixed`")
                })?
            }
            "data.path" => self.data_path = Some(value.trim().to_string()),
            "data.fraction" => t.data_fraction = parse!(f64, "a number"),
            "sweep.p" => self.sweep.p = parse_list(value, line, "a number")?,
            "sweep.lambda" => self.sweep.lambda = parse_list(value, line, "a number")?,
            "sweep.k" => self.sweep.k = parse_list(value, line, "an unsigned integer")?,
            "sweep.seed" => self.sweep.seed = parse_list(value, line, "an unsigned integer")?,
            "sweep.weco_on" => self.sweep.weco_on = parse_list(value, line, "a boolean")?,
            "sweep.daco_on" => self.sweep.daco_on = parse_list(value, line, "a boolean")?,
            "sweep.r_as_augmentation_only" => {
                self.sweep.r_as_augmentation_only = parse_list(value, line, "a boolean")?
            }
            _ => return Err(err_at(line, format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn finish(self) -> Result<ResolvedConfig, ConfigError> {
        if !self.seed_set {
            return Err(err_at(
                None,
                "missing required key `seed` (set it in the config file, via --override seed=N, \
                 or through GENCO_SEED)",
            ));
        }
        let mut train = self.train;
        train.dataset = match self.data_kind {
            DataKind::Mixture2d => DatasetConfig::Mixture2d {
                modes: self.data_modes,
                train: self.data_train,
                holdout: self.data_holdout,
            },
            DataKind::TinyImages => DatasetConfig::TinyImages {
                family: self.data_family,
                size: self.data_size,
                train: self.data_train,
                holdout: self.data_holdout,
            },
            DataKind::File => DatasetConfig::File {
                path: self.data_path.ok_or_else(|| {
                    err_at(None, "data.kind = file requires data.path")
                })?,
            },
        };
        Ok(ResolvedConfig {
            train,
            out_dir: self.out_dir,
            sweep: self.sweep,
        })
    }
}

fn parse_list<T: std::str::FromStr>(
    value: &str,
    line: Option<usize>,
    what: &str,
) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|item| {
            item.trim()
                .parse::<T>()
                .map_err(|_| err_at(line, format!("expected {what}, got `{}`", item.trim())))
        })
        .collect()
}

/// Parses config text and applies overrides; `env_seed` is the GENCO_SEED
/// value, consulted at the lowest precedence.
pub fn parse_config(
    text: &str,
    overrides: &[(String, String)],
    env_seed: Option<u64>,
) -> Result<ResolvedConfig, ConfigError> {
    let mut builder = Builder::new();
    if let Some(seed) = env_seed {
        builder.train.seed = seed;
        builder.seed_set = true;
    }
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            err_at(Some(line), format!("expected `key = value`, got `{content}`"))
        })?;
        builder.apply(key.trim(), value, Some(line))?;
    }
    for (key, value) in overrides {
        builder
            .apply(key.trim(), value, None)
            .map_err(|e| err_at(None, format!("--override {key}={value}: {}", e.message)))?;
    }
    builder.finish()
}

/// Splits a `key=value` override argument.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| err_at(None, format!("--override expects key=value, got `{arg}`")))
}

/// Every (p, λ, k, flags, seed) combination of the sweep axes applied to the
/// base config, with a stable directory-name suffix per cell.
pub fn sweep_cells(base: &TrainConfig, axes: &SweepAxes) -> Vec<(String, TrainConfig)> {
    let or_base = |list: &[f64], base: f64| -> Vec<f64> {
        if list.is_empty() {
            vec![base]
        } else {
            list.to_vec()
        }
    };
    let ps = or_base(&axes.p, base.p);
    let lambdas = or_base(&axes.lambda, base.lambda);
    let ks = if axes.k.is_empty() {
        vec![base.k_discriminators]
    } else {
        axes.k.clone()
    };
    let seeds = if axes.seed.is_empty() {
        vec![base.seed]
    } else {
        axes.seed.clone()
    };
    let wecos = if axes.weco_on.is_empty() {
        vec![base.weco_on]
    } else {
        axes.weco_on.clone()
    };
    let dacos = if axes.daco_on.is_empty() {
        vec![base.daco_on]
    } else {
        axes.daco_on.clone()
    };
    let augs = if axes.r_as_augmentation_only.is_empty() {
        vec![base.r_as_augmentation_only]
    } else {
        axes.r_as_augmentation_only.clone()
    };

    let mut cells = Vec::new();
    for &p in &ps {
        for &lambda in &lambdas {
            for &k in &ks {
                for &weco in &wecos {
                    for &daco in &dacos {
                        for &aug in &augs {
                            for &seed in &seeds {
                                let mut cfg = base.clone();
                                cfg.p = p;
                                cfg.lambda = lambda;
                                cfg.k_discriminators = k;
                                cfg.weco_on = weco;
                                cfg.daco_on = daco;
                                cfg.r_as_augmentation_only = aug;
                                cfg.seed = seed;
                                let name = format!(
                                    "p{p}-lambda{lambda}-k{k}-weco{}-daco{}-aug{}-seed{seed}",
                                    weco as u8, daco as u8, aug as u8
                                );
                                cells.push((name, cfg));
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_plus_seed_parse() {
        let cfg = parse_config("seed = 7\n", &[], None).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.steps, 2000);
        assert!((cfg.train.p - 0.2).abs() < 1e-15);
        assert!(cfg.train.weco_on && cfg.train.daco_on);
        assert!(cfg.sweep.is_empty());
    }

    #[test]
    fn missing_seed_names_the_key() {
        let err = parse_config("steps = 10\n", &[], None).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let err = parse_config("seed = 1\nnot_a_key = 3\n", &[], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("not_a_key"), "{msg}");
    }

    #[test]
    fn bad_value_is_line_anchored() {
        let err = parse_config("seed = 1\n\np = banana\n", &[], None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\nseed = 2  # trailing\n\nsteps = 5\n";
        let cfg = parse_config(text, &[], None).unwrap();
        assert_eq!((cfg.train.seed, cfg.train.steps), (2, 5));
    }

    #[test]
    fn overrides_beat_file_which_beats_env() {
        let cfg = parse_config("steps = 5\n", &[], Some(99)).unwrap();
        assert_eq!(cfg.train.seed, 99); // env supplies the seed
        let cfg = parse_config("seed = 3\n", &[], Some(99)).unwrap();
        assert_eq!(cfg.train.seed, 3); // file beats env
        let over = vec![("seed".to_string(), "11".to_string())];
        let cfg = parse_config("seed = 3\n", &over, Some(99)).unwrap();
        assert_eq!(cfg.train.seed, 11); // override beats file
    }

    #[test]
    fn dataset_section_builds_the_right_variant() {
        let text = "seed=1\ndata.kind = tinyimages\ndata.size = 16\ndata.family = gratings\ndata.train = 64\n";
        let cfg = parse_config(text, &[], None).unwrap();
        assert_eq!(
            cfg.train.dataset,
            DatasetConfig::TinyImages {
                family: PatternFamily::Gratings,
                size: 16,
                train: 64,
                holdout: 256,
            }
        );
        let err = parse_config("seed=1\ndata.kind = file\n", &[], None).unwrap_err();
        assert!(err.to_string().contains("data.path"), "{err}");
    }

    #[test]
    fn sweep_axes_expand_to_cells() {
        let text = "seed=1\nsweep.p = 0.1, 0.2\nsweep.seed = 1,2,3\n";
        let cfg = parse_config(text, &[], None).unwrap();
        let cells = sweep_cells(&cfg.train, &cfg.sweep);
        assert_eq!(cells.len(), 6);
        let names: Vec<&str> = cells.iter().map(|(n, _)| n.as_str()).collect();
        assert!(names[0].contains("p0.1") && names[0].contains("seed1"));
        assert!(names.iter().all(|n| !n.contains(' ')));
    }

    #[test]
    fn empty_axes_give_the_base_cell() {
        let cfg = parse_config("seed=4\n", &[], None).unwrap();
        let cells = sweep_cells(&cfg.train, &cfg.sweep);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].1, cfg.train);
    }

    #[test]
    fn override_requires_key_value_shape() {
        assert!(parse_override("p=0.3").is_ok());
        assert!(parse_override("p").is_err());
    }
}
