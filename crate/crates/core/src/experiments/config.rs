//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later layers override
//! earlier ones: file, then command-line overrides. The seed falls back to
//! `KGE_SPR_SEED` when neither sets it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::RankMode;
use crate::models::ModelKind;
use crate::regularizers::{RegularizerKind, RegularizerSpec};
use crate::sparsifier::ThresholdMode;
use crate::training::{LossOrientation, Optimizer, TrainConfig};

pub const SEED_ENV: &str = "KGE_SPR_SEED";

/// Every accepted key, in the order `docs/schema.md` lists them.
pub const KEYS: &[&str] = &[
    "dataset",
    "out",
    "model",
    "dim",
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "negatives",
    "seed",
    "reg",
    "lambda",
    "delta",
    "delta_mode",
    "eval_every",
    "patience",
    "reciprocal",
    "rank_mode",
    "loss_orientation",
    "init_scale",
    "workers",
    "sweep_delta",
    "sweep_lambda",
    "sweep_dim",
];

const ALIASES: &[(&str, &str)] = &[("lr", "learning_rate"), ("neg", "negatives"), ("regularizer", "reg")];

fn canonical(key: &str) -> Option<&'static str> {
    let key = key.trim();
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map(|(_, k)| *k)
        .or_else(|| KEYS.iter().copied().find(|k| *k == key))
}

/// Parses config text into `(key, value)` pairs in file order.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = canonical(k).ok_or_else(|| Error::Config(format!("line {}: unknown key {:?}", i + 1, k.trim())))?;
        if out.iter().any(|(existing, _)| existing == key) {
            return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Optional grids for `sweep`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepAxes {
    pub delta: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub dim: Option<Vec<usize>>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.delta.is_none() && self.lambda.is_none() && self.dim.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub train: TrainConfig,
    pub sweep: SweepAxes,
    pub workers: usize,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty axis list")));
    }
    items.into_iter().map(|s| parse(key, s)).collect()
}

impl ExperimentConfig {
    /// Reads `file` (if any), applies `overrides`, then the seed fallback.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let file_pairs = match file {
            Some(path) => {
                if !path.is_file() {
                    return Err(Error::MissingFile(path.to_path_buf()));
                }
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        Self::from_layers(&file_pairs, overrides, env_seed.as_deref())
    }

    pub fn from_layers(
        file: &[(String, String)],
        overrides: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Self> {
        let mut map: BTreeMap<&'static str, String> = BTreeMap::new();
        for (k, v) in file.iter().chain(overrides) {
            let key = canonical(k).ok_or_else(|| Error::Config(format!("unknown key {k:?}")))?;
            map.insert(key, v.clone());
        }
        if !map.contains_key("seed") {
            if let Some(s) = env_seed {
                map.insert("seed", s.trim().to_string());
            }
        }
        Self::from_map(&map)
    }

    fn from_map(map: &BTreeMap<&'static str, String>) -> Result<Self> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let mut t = TrainConfig::default();
        if let Some(v) = get("model") {
            t.model = v.parse::<ModelKind>()?;
        }
        if let Some(v) = get("dim") {
            t.dim = parse("dim", v)?;
        }
        if let Some(v) = get("epochs") {
            t.epochs = parse("epochs", v)?;
        }
        if let Some(v) = get("batch_size") {
            t.batch_size = parse("batch_size", v)?;
        }
        if let Some(v) = get("learning_rate") {
            t.learning_rate = parse("learning_rate", v)?;
        }
        if let Some(v) = get("optimizer") {
            t.optimizer = v.parse::<Optimizer>()?;
        }
        if let Some(v) = get("negatives") {
            t.negatives = parse("negatives", v)?;
        }
        if let Some(v) = get("seed") {
            t.seed = parse("seed", v)?;
        }
        if let Some(v) = get("eval_every") {
            t.eval_every = parse("eval_every", v)?;
        }
        if let Some(v) = get("patience") {
            t.patience = parse("patience", v)?;
        }
        if let Some(v) = get("reciprocal") {
            t.reciprocal = parse_bool("reciprocal", v)?;
        }
        if let Some(v) = get("rank_mode") {
            t.rank_mode = match v.to_ascii_lowercase().as_str() {
                "filtered" => RankMode::Filtered,
                "raw" => RankMode::Raw,
                other => return Err(Error::Config(format!("rank_mode: unknown value {other:?}"))),
            };
        }
        if let Some(v) = get("loss_orientation") {
            t.loss_orientation = match v.to_ascii_lowercase().as_str() {
                "standard" => LossOrientation::Standard,
                "literal" => LossOrientation::Literal,
                other => return Err(Error::Config(format!("loss_orientation: unknown value {other:?}"))),
            };
        }
        if let Some(v) = get("init_scale") {
            t.init_scale = Some(parse("init_scale", v)?);
        }

        let kind = match get("reg") {
            Some(v) => v.parse::<RegularizerKind>()?,
            None => RegularizerKind::None,
        };
        let lambda: f64 = match get("lambda") {
            Some(v) => parse("lambda", v)?,
            None => {
                if kind == RegularizerKind::None {
                    0.0
                } else {
                    return Err(Error::Config(format!("reg {kind} needs lambda")));
                }
            }
        };
        let delta: f64 = match get("delta") {
            Some(v) => parse("delta", v)?,
            None => 0.4,
        };
        let relative = match get("delta_mode").map(|s| s.to_ascii_lowercase()) {
            None => true,
            Some(m) if m == "relative" => true,
            Some(m) if m == "absolute" => false,
            Some(m) => return Err(Error::Config(format!("delta_mode: unknown value {m:?}"))),
        };
        let threshold = if relative {
            ThresholdMode::Relative(delta)
        } else {
            ThresholdMode::Absolute(delta)
        };
        t.regularizer = match kind {
            RegularizerKind::None => RegularizerSpec::none(),
            RegularizerKind::F2 => RegularizerSpec::f2(lambda),
            RegularizerKind::N3 => RegularizerSpec::n3(lambda),
            RegularizerKind::Spr => RegularizerSpec::spr(lambda, threshold),
        };
        t.validate()?;

        let sweep = SweepAxes {
            delta: get("sweep_delta").map(|v| parse_list("sweep_delta", v)).transpose()?,
            lambda: get("sweep_lambda").map(|v| parse_list("sweep_lambda", v)).transpose()?,
            dim: get("sweep_dim").map(|v| parse_list("sweep_dim", v)).transpose()?,
        };
        let workers = match get("workers") {
            Some(v) => parse("workers", v)?,
            None => 1,
        };
        if workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(ExperimentConfig {
            dataset: get("dataset").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/umls")),
            out: get("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
            train: t,
            sweep,
            workers,
        })
    }
}
