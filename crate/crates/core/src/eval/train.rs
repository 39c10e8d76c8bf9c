use serde::{Deserialize, Serialize};

use super::metrics::{fuse_views, mean_average_precision, top1_accuracy};
use crate::dataio::{multi_view_split, Dataset};
use crate::error::{Result, VictrError};
use crate::head::{loss_and_gradients, predict, HeadParams, Label, LabelMode};
use crate::numerics::{adam_step, AdamWConfig, OptimizerState, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub aux_weight: f64,
    pub seed: u64,
    /// Evaluate on the held-out set every this many steps; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            lr_max: 3e-3,
            lr_min: 1e-5,
            weight_decay: 0.01,
            aux_weight: crate::head::DEFAULT_AUX_WEIGHT,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VictrError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return bad(format!("need lr_max >= lr_min > 0, got {} and {}", self.lr_max, self.lr_min));
        }
        if !(self.weight_decay >= 0.0 && self.aux_weight >= 0.0) {
            return bad("weight_decay and aux_weight must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub videos: usize,
    /// Single-label data only.
    pub top1: Option<f64>,
    /// Multi-label data only.
    pub map: Option<f64>,
}

impl EvalReport {
    /// The headline number: top-1 for single-label data, mAP otherwise.
    pub fn metric(&self) -> (&'static str, f64) {
        match (self.top1, self.map) {
            (Some(t), _) => ("top1", t),
            (None, Some(m)) => ("map", m),
            (None, None) => ("none", f64::NAN),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub steps: Vec<StepRecord>,
    /// `(step, report)` at each evaluation point.
    pub evals: Vec<(usize, EvalReport)>,
}

/// Applies `f` to every item, possibly in parallel, returning results in order.
fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Minibatch AdamW with a cosine schedule. The batch order is drawn from
/// `config.seed`; gradients are averaged in a fixed order so the result is
/// bitwise reproducible whatever the thread count.
pub fn train(config: &TrainConfig, mut params: HeadParams, data: &Dataset, held_out: Option<&Dataset>) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    if data.is_empty() && config.steps > 0 {
        return Err(VictrError::Config("no training videos".into()));
    }
    let mut opt_config = AdamWConfig::new(config.lr_max, config.lr_min, config.steps.max(1));
    opt_config.weight_decay = config.weight_decay;
    let mut state = OptimizerState::new(opt_config, params.tensors()).with_decay_mask(params.decay_mask());
    let mut rng = Rng::new(config.seed).fork(0x7a1);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut steps = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                rng.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let results = map_ordered(&batch, |&i| {
            let b = &data.bundles[i];
            loss_and_gradients(&params, &data.input(b), &b.label, data.label_mode, config.aux_weight)
        });
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for t in params.tensors_mut() {
            t.zero_grad();
        }
        for r in results {
            let (l, grads) = r?;
            loss += l * scale;
            for (t, g) in params.tensors_mut().iter_mut().zip(&grads) {
                let scaled: Vec<f64> = g.data.iter().map(|v| v * scale).collect();
                t.accumulate_grad(&scaled)?;
            }
        }
        if !loss.is_finite() {
            return Err(VictrError::Divergence { step, loss });
        }
        let lr = adam_step(params.tensors_mut(), &mut state)?;
        params.clamp_temperature();
        if let Some(i) = params.tensors().iter().position(|t| t.values.iter().any(|v| !v.is_finite())) {
            return Err(VictrError::NonFinite(format!("parameter {} after step {step}", params.names()[i])));
        }
        steps.push(StepRecord { step, loss, lr });
        if let Some(eval_set) = held_out {
            if config.eval_every > 0 && ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
                evals.push((step + 1, evaluate(&params, eval_set)?));
            }
        }
    }
    for t in params.tensors_mut() {
        t.grad = None;
    }
    Ok(TrainOutcome { params, steps, evals })
}

/// Class logits of every bundle, in order.
pub fn predict_all(params: &HeadParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    map_ordered(&data.bundles, |b| predict(params, &data.input(b)).map(|l| l.class_logits))
        .into_iter()
        .collect()
}

/// Logits fused over `n_views` evenly spaced windows of `frames_per_view` frames.
pub fn predict_all_views(params: &HeadParams, data: &Dataset, n_views: usize, frames_per_view: usize) -> Result<Vec<Vec<f64>>> {
    map_ordered(&data.bundles, |b| {
        let views = multi_view_split(b, n_views, frames_per_view)?;
        let logits = views
            .iter()
            .map(|v| predict(params, &data.input(v)).map(|l| l.class_logits))
            .collect::<Result<Vec<_>>>()?;
        fuse_views(&logits)
    })
    .into_iter()
    .collect()
}

/// Scores precomputed logits against the dataset's labels.
pub fn score(data: &Dataset, logits: &[Vec<f64>]) -> Result<EvalReport> {
    let labels: Vec<Label> = data.bundles.iter().map(|b| b.label.clone()).collect();
    Ok(match data.label_mode {
        LabelMode::SingleLabel => EvalReport {
            videos: labels.len(),
            top1: Some(top1_accuracy(logits, &labels)?),
            map: None,
        },
        LabelMode::MultiLabel => {
            let flags: Vec<Vec<bool>> = labels
                .iter()
                .map(|l| match l {
                    Label::Multi(f) => Ok(f.clone()),
                    Label::Single(_) => Err(VictrError::Label("single label in multi-label data".into())),
                })
                .collect::<Result<_>>()?;
            EvalReport {
                videos: labels.len(),
                top1: None,
                map: Some(mean_average_precision(logits, &flags)?.map),
            }
        }
    })
}

pub fn evaluate(params: &HeadParams, data: &Dataset) -> Result<EvalReport> {
    score(data, &predict_all(params, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec, TRAIN_SPLIT};
    use crate::head::presets;

    fn tiny() -> (Dataset, HeadParams) {
        let data = generate_synthetic(&SyntheticSpec {
            n_classes: 3,
            train_per_class: 4,
            test_per_class: 1,
            frames: 2,
            dim: 8,
            n_aux: 2,
            n_categories: 1,
            ..Default::default()
        })
        .unwrap();
        let params = HeadParams::init(&presets::toy_head(), 0).unwrap();
        (data, params)
    }

    #[test]
    fn zero_steps_keep_initialisation() {
        let (data, params) = tiny();
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let out = train(&cfg, params.clone(), &data.split(TRAIN_SPLIT), None).unwrap();
        assert_eq!(out.params, params);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_lowers_loss() {
        let (data, params) = tiny();
        let cfg = TrainConfig {
            steps: 40,
            batch_size: 4,
            lr_max: 1e-2,
            ..Default::default()
        };
        let train_set = data.split(TRAIN_SPLIT);
        let a = train(&cfg, params.clone(), &train_set, None).unwrap();
        let b = train(&cfg, params, &train_set, None).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        let first: f64 = a.steps[..5].iter().map(|s| s.loss).sum();
        let last: f64 = a.steps[35..].iter().map(|s| s.loss).sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn invalid_config() {
        let (data, params) = tiny();
        let cfg = TrainConfig { lr_min: 0.0, ..Default::default() };
        assert!(matches!(train(&cfg, params, &data, None), Err(VictrError::Config(_))));
    }
}
