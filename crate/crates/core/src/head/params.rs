use std::collections::HashMap;

use super::config::{AttentionMode, ClassifierMode, HeadConfig, WeightingMode, MLP_RATIO};
use crate::error::{Result, VictrError};
use crate::numerics::ops::{AttentionWeights, LayerNormParams, Linear};
use crate::numerics::{DiffTensor, Graph, Rng, Var};

pub const INIT_STD: f64 = 0.02;
pub const INIT_GATE: f64 = 1.0;
pub const INIT_TEMPERATURE: f64 = 1.0 / 0.07;
pub const MAX_TEMPERATURE: f64 = 100.0;
pub const MIN_TEMPERATURE: f64 = 1e-2;
pub const TEMPERATURE: &str = "logit_scale";

/// All learnable tensors of the head, addressed by dotted name.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub config: HeadConfig,
    names: Vec<String>,
    tensors: Vec<DiffTensor>,
    index: HashMap<String, usize>,
}

enum Init {
    Normal,
    Zeros,
    Ones,
    Const(f64),
}

/// Names and shapes of every parameter `config` needs, in a fixed order.
fn layout(config: &HeadConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.embed_dim;
    let p = config.proj_dim;
    let hidden = MLP_RATIO * d;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    let gate_site = |push: &mut dyn FnMut(String, Vec<usize>, Init), site: &str| match config.weighting_mode {
        WeightingMode::SigAffinity => push(format!("{site}.gate"), vec![1, 1], Init::Const(INIT_GATE)),
        WeightingMode::None => {}
        WeightingMode::LearnedScalar => {
            push(format!("{site}.score.weight"), vec![d, 1], Init::Normal);
            push(format!("{site}.score.bias"), vec![1, 1], Init::Zeros);
        }
        WeightingMode::Attention => {
            push(format!("{site}.query"), vec![d, d], Init::Normal);
            push(format!("{site}.key"), vec![d, d], Init::Normal);
        }
    };
    let attention = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        for proj in ["query", "key", "value", "output"] {
            push(format!("{prefix}.{proj}.weight"), vec![d, d], Init::Normal);
            push(format!("{prefix}.{proj}.bias"), vec![1, d], Init::Zeros);
        }
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), prefix: &str| {
        push(format!("{prefix}.gamma"), vec![1, d], Init::Ones);
        push(format!("{prefix}.beta"), vec![1, d], Init::Zeros);
    };

    gate_site(&mut push, "boost");
    for l in 0..config.num_layers {
        let pre = format!("layers.{l}");
        norm(&mut push, &format!("{pre}.norm_cross"));
        attention(&mut push, &format!("{pre}.cross"));
        if config.attention_mode == AttentionMode::Divided {
            norm(&mut push, &format!("{pre}.norm_temporal"));
            attention(&mut push, &format!("{pre}.temporal"));
        }
        gate_site(&mut push, &format!("{pre}.reweight"));
        norm(&mut push, &format!("{pre}.norm_mlp"));
        push(format!("{pre}.mlp.fc1.weight"), vec![d, hidden], Init::Normal);
        push(format!("{pre}.mlp.fc1.bias"), vec![1, hidden], Init::Zeros);
        push(format!("{pre}.mlp.fc2.weight"), vec![hidden, d], Init::Normal);
        push(format!("{pre}.mlp.fc2.bias"), vec![1, d], Init::Zeros);
    }
    push("proj_visual.weight".into(), vec![d, p], Init::Normal);
    push("proj_visual.bias".into(), vec![1, p], Init::Zeros);
    push("proj_text.weight".into(), vec![d, p], Init::Normal);
    push("proj_text.bias".into(), vec![1, p], Init::Zeros);
    push(TEMPERATURE.into(), vec![1, 1], Init::Const(INIT_TEMPERATURE));
    match config.classifier_mode {
        ClassifierMode::Affinity => {}
        ClassifierMode::TextOnly => {
            push("text_classifier.weight".into(), vec![p, 1], Init::Normal);
            push("text_classifier.bias".into(), vec![1, 1], Init::Zeros);
        }
        ClassifierMode::VisualOnly => {
            push("visual_classifier.weight".into(), vec![p, config.n_classes], Init::Normal);
            push("visual_classifier.bias".into(), vec![1, config.n_classes], Init::Zeros);
        }
    }
    out
}

impl HeadParams {
    /// Fresh parameters: truncated-normal weights (std 0.02), unit LayerNorm
    /// gains, zero biases, gates at 1 and temperature at 1/0.07.
    pub fn init(config: &HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed).fork(0x1417);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let values = match init {
                Init::Normal => (0..n).map(|_| rng.truncated_normal(INIT_STD)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Const(c) => vec![c; n],
            };
            names.push(name);
            tensors.push(DiffTensor::new(shape, values)?);
        }
        Ok(Self::from_parts(config.clone(), names, tensors))
    }

    fn from_parts(config: HeadConfig, names: Vec<String>, tensors: Vec<DiffTensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            config,
            names,
            tensors,
            index,
        }
    }

    /// Rebuilds parameters from named tensors, checking them against the
    /// layout `config` requires.
    pub fn from_named(config: HeadConfig, named: Vec<(String, DiffTensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(VictrError::Shape(format!(
                "config needs {} tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(VictrError::Shape(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self::from_parts(config, names, tensors))
    }

    /// The same weights over a vocabulary of `n_classes` classes. Fails when
    /// a parameter's shape depends on the class count.
    pub fn with_classes(&self, n_classes: usize) -> Result<Self> {
        if n_classes == self.config.n_classes {
            return Ok(self.clone());
        }
        if self.config.classifier_mode == ClassifierMode::VisualOnly {
            return Err(VictrError::Shape(format!(
                "visual classifier is tied to {} classes, cannot score {n_classes}",
                self.config.n_classes
            )));
        }
        let config = self.config.with_classes(n_classes);
        config.validate()?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[DiffTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DiffTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&DiffTensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DiffTensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(DiffTensor::numel).sum()
    }

    /// Which tensors receive decoupled weight decay: projection matrices only.
    pub fn decay_mask(&self) -> Vec<bool> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (n.ends_with(".weight") || n.ends_with(".query") || n.ends_with(".key"))
                    && t.shape().iter().all(|&e| e > 1)
            })
            .collect()
    }

    pub fn temperature(&self) -> f64 {
        self.get(TEMPERATURE).map_or(INIT_TEMPERATURE, |t| t.values[0])
    }

    pub fn clamp_temperature(&mut self) {
        if let Some(t) = self.get_mut(TEMPERATURE) {
            t.values[0] = t.values[0].clamp(MIN_TEMPERATURE, MAX_TEMPERATURE);
        }
    }

    /// All values flattened in layout order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(VictrError::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Places every tensor on `g` (as variables when `trainable`).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams<'_> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let m = t.as_mat();
                if trainable {
                    g.variable(m)
                } else {
                    g.constant(m)
                }
            })
            .collect();
        BoundParams {
            vars,
            index: &self.index,
        }
    }
}

/// Graph handles for one [`HeadParams`].
pub struct BoundParams<'a> {
    pub vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl BoundParams<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| VictrError::Config(format!("missing parameter {name}")))
    }

    /// The tensor named `prefix.suffix`.
    pub fn child(&self, prefix: &str, suffix: &str) -> Result<Var> {
        self.var(&dotted(prefix, suffix))
    }

    pub fn linear(&self, prefix: &str) -> Result<Linear> {
        Ok(Linear {
            weight: self.child(prefix, "weight")?,
            bias: self.child(prefix, "bias")?,
        })
    }

    pub fn norm(&self, prefix: &str) -> Result<LayerNormParams> {
        Ok(LayerNormParams {
            gamma: self.child(prefix, "gamma")?,
            beta: self.child(prefix, "beta")?,
        })
    }

    pub fn attention(&self, prefix: &str) -> Result<AttentionWeights> {
        Ok(AttentionWeights {
            query: self.linear(&dotted(prefix, "query"))?,
            key: self.linear(&dotted(prefix, "key"))?,
            value: self.linear(&dotted(prefix, "value"))?,
            output: self.linear(&dotted(prefix, "output"))?,
        })
    }
}

pub(crate) fn dotted(prefix: &str, suffix: &str) -> String {
    let mut s = String::with_capacity(prefix.len() + suffix.len() + 1);
    s.push_str(prefix);
    s.push('.');
    s.push_str(suffix);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::presets;

    #[test]
    fn layout_follows_toggles() {
        let cfg = presets::toy_head();
        let full = HeadParams::init(&cfg, 0).unwrap();
        assert!(full.get("boost.gate").is_some());
        assert!(full.get("layers.1.reweight.gate").is_some());
        assert!(full.get("layers.0.temporal.query.weight").is_some());
        assert_eq!(full.temperature(), INIT_TEMPERATURE);

        let joint = HeadConfig {
            attention_mode: AttentionMode::Joint,
            weighting_mode: WeightingMode::None,
            ..cfg.clone()
        };
        let p = HeadParams::init(&joint, 0).unwrap();
        assert!(p.get("layers.0.temporal.query.weight").is_none());
        assert!(p.get("boost.gate").is_none());

        let vis = HeadConfig {
            classifier_mode: ClassifierMode::VisualOnly,
            ..cfg
        };
        let p = HeadParams::init(&vis, 0).unwrap();
        assert_eq!(p.get("visual_classifier.weight").unwrap().shape(), &[4, 3]);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = presets::toy_head();
        assert_eq!(HeadParams::init(&cfg, 3).unwrap(), HeadParams::init(&cfg, 3).unwrap());
        assert_ne!(
            HeadParams::init(&cfg, 3).unwrap().flatten(),
            HeadParams::init(&cfg, 4).unwrap().flatten()
        );
        let p = HeadParams::init(&cfg, 3).unwrap();
        assert!(p.flatten().iter().all(|v| v.abs() <= 2.0 * INIT_STD || *v == 1.0 || *v == INIT_TEMPERATURE));
    }

    #[test]
    fn from_named_rejects_wrong_layout() {
        let cfg = presets::toy_head();
        let p = HeadParams::init(&cfg, 0).unwrap();
        let mut named: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        assert!(HeadParams::from_named(cfg.clone(), named.clone()).is_ok());
        named.pop();
        assert!(HeadParams::from_named(cfg, named).is_err());
    }
}
