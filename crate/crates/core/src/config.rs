//! Run configuration: `head.*`, `train.*` and `data.*` keys in a TOML
//! document, starting from a named preset, with `key=value` overrides.
//!
//! ```toml
//! [head]
//! num_layers = 2
//! weighting_mode = "none"
//!
//! [train]
//! steps = 300
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::dataio::SyntheticSpec;
use crate::error::{Result, VictrError};
use crate::eval::TrainConfig;
use crate::head::{presets, HeadConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub head: HeadConfig,
    pub train: TrainConfig,
    /// Synthetic data generated when no bundle file is given.
    pub data: SyntheticSpec,
}

pub const PRESETS: &[&str] = &["synthetic", "toy", "b16-charades", "l14-kinetics"];

fn data_for(head: &HeadConfig, frames: usize, train_per_class: usize, test_per_class: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_classes: head.n_classes,
        train_per_class,
        test_per_class,
        frames,
        dim: head.embed_dim,
        n_aux: head.n_aux,
        n_categories: head.n_categories,
        ..SyntheticSpec::default()
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "synthetic" => {
                let head = presets::synthetic_head();
                Self {
                    data: data_for(&head, 8, 40, 10),
                    head,
                    train: TrainConfig::default(),
                }
            }
            "toy" => {
                let head = presets::toy_head();
                Self {
                    data: data_for(&head, 2, 4, 2),
                    head,
                    train: TrainConfig {
                        steps: 20,
                        batch_size: 4,
                        lr_max: 1e-2,
                        ..TrainConfig::default()
                    },
                }
            }
            // Paper-scale optimisation settings, recorded for reference.
            "b16-charades" | "l14-kinetics" => {
                let (head, frames) = if name == "b16-charades" {
                    (presets::b16_charades_head(), 16)
                } else {
                    (presets::l14_kinetics_head(), 8)
                };
                Self {
                    data: data_for(&head, frames, 2, 1),
                    head,
                    train: TrainConfig {
                        steps: 300,
                        batch_size: 256,
                        lr_max: 8e-5,
                        lr_min: 1e-6,
                        ..TrainConfig::default()
                    },
                }
            }
            other => {
                return Err(VictrError::Config(format!("unknown preset '{other}', expected one of {PRESETS:?}")))
            }
        };
        Ok(cfg)
    }

    /// Preset, then every key of the optional TOML file, then each override.
    pub fn load(preset: &str, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut flat = flatten(&Self::preset(preset)?)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| VictrError::Config(e.to_string()))?;
            let mut from_file = BTreeMap::new();
            flatten_into(&mut from_file, "", &Value::Table(doc));
            for (k, v) in from_file {
                set_key(&mut flat, &k, v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| VictrError::Config(format!("override '{o}' is not key=value")))?;
            set_key(&mut flat, k.trim(), parse_value(v.trim()))?;
        }
        let cfg = unflatten(&flat)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        let pairs = [
            ("embed_dim", self.head.embed_dim, "dim", self.data.dim),
            ("n_classes", self.head.n_classes, "n_classes", self.data.n_classes),
            ("n_aux", self.head.n_aux, "n_aux", self.data.n_aux),
            ("n_categories", self.head.n_categories, "n_categories", self.data.n_categories),
        ];
        for (hk, hv, dk, dv) in pairs {
            if hv != dv && !(hk == "n_categories" && self.head.n_aux == 0) {
                return Err(VictrError::Config(format!("head.{hk} = {hv} but data.{dk} = {dv}")));
            }
        }
        Ok(())
    }

    /// Sorted `key = value` lines.
    pub fn to_flat_text(&self) -> Result<String> {
        Ok(flatten(self)?
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect())
    }

    /// CRC32 of [`RunConfig::to_flat_text`], as 8 hex digits.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:08x}", crc32fast::hash(self.to_flat_text()?.as_bytes())))
    }
}

fn flatten(cfg: &RunConfig) -> Result<BTreeMap<String, Value>> {
    let v = Value::try_from(cfg).map_err(|e| VictrError::Config(e.to_string()))?;
    let mut out = BTreeMap::new();
    flatten_into(&mut out, "", &v);
    Ok(out)
}

fn flatten_into(out: &mut BTreeMap<String, Value>, prefix: &str, v: &Value) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(out, &key, v);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn set_key(flat: &mut BTreeMap<String, Value>, key: &str, value: Value) -> Result<()> {
    let slot = flat
        .get_mut(key)
        .ok_or_else(|| VictrError::Config(format!("unknown configuration key '{key}'")))?;
    // integers are accepted where floats are expected
    *slot = match (&*slot, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    Ok(())
}

fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Result<RunConfig> {
    let mut root = toml::Table::new();
    for (key, v) in flat {
        let mut table = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| VictrError::Config(format!("key '{key}' nests under a value")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| VictrError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::WeightingMode;
    use std::io::Write;

    #[test]
    fn presets_are_consistent() {
        for p in PRESETS {
            RunConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn file_and_overrides() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[head]\nnum_layers = 1\n\n[train]\nlr_max = 1").unwrap();
        let cfg = RunConfig::load(
            "toy",
            Some(f.path()),
            &["head.weighting_mode=none".into(), "train.steps = 7".into()],
        )
        .unwrap();
        assert_eq!(cfg.head.num_layers, 1);
        assert_eq!(cfg.head.weighting_mode, WeightingMode::None);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.lr_max, 1.0);
    }

    #[test]
    fn bad_keys_and_values() {
        for o in ["head.depth=3", "train.steps=-1", "head.weighting_mode=sometimes", "steps"] {
            assert!(
                matches!(RunConfig::load("toy", None, &[o.into()]), Err(VictrError::Config(_))),
                "{o}"
            );
        }
        assert!(RunConfig::load("toy", None, &["head.embed_dim=16".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::preset("toy").unwrap();
        let b = RunConfig::load("toy", None, &["train.seed=1".into()]).unwrap();
        assert_eq!(a.hash().unwrap(), RunConfig::preset("toy").unwrap().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
