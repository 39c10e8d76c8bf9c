use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::mean_std;
use super::train::{evaluate, train, TrainConfig};
use crate::dataio::Dataset;
use crate::error::{Result, VictrError};
use crate::head::{AttentionMode, ClassifierMode, HeadConfig, HeadParams, WeightingMode};

/// One named row of the ablation tables: a single toggle assignment applied
/// to the full model.
#[derive(Clone, Copy, Debug)]
pub struct AblationSpec {
    pub name: &'static str,
    pub key: &'static str,
    apply: fn(&mut HeadConfig),
}

impl AblationSpec {
    pub fn config(&self, full: &HeadConfig) -> HeadConfig {
        let mut c = full.clone();
        (self.apply)(&mut c);
        c
    }
}

pub const FULL_MODEL: &str = "Full";

pub const ABLATIONS: &[AblationSpec] = &[
    AblationSpec {
        name: FULL_MODEL,
        key: "full",
        apply: |_| {},
    },
    AblationSpec {
        name: "No Aux. Text",
        key: "no_aux_text",
        apply: |c| c.use_aux = false,
    },
    AblationSpec {
        name: "w/ CLIP Visual emb.",
        key: "clip_visual",
        apply: |c| c.substitute_backbone_visual = true,
    },
    AblationSpec {
        name: "w/ CLIP Text emb.",
        key: "clip_text",
        apply: |c| c.substitute_backbone_text = true,
    },
    AblationSpec {
        name: "No Affinity weighting",
        key: "no_affinity_weighting",
        apply: |c| c.weighting_mode = WeightingMode::None,
    },
    AblationSpec {
        name: "w/ joint-attention",
        key: "joint_attention",
        apply: |c| c.attention_mode = AttentionMode::Joint,
    },
    AblationSpec {
        name: "Text Classifier",
        key: "text_classifier",
        apply: |c| c.classifier_mode = ClassifierMode::TextOnly,
    },
    AblationSpec {
        name: "Visual Classifier",
        key: "visual_classifier",
        apply: |c| c.classifier_mode = ClassifierMode::VisualOnly,
    },
];

/// Looks a row up by display name or snake_case key.
pub fn ablation(name: &str) -> Result<&'static AblationSpec> {
    ABLATIONS
        .iter()
        .find(|a| a.name.eq_ignore_ascii_case(name) || a.key == name)
        .ok_or_else(|| VictrError::UnknownAblation(name.to_string()))
}

/// The L=0, unweighted model: projections of mean-pooled inputs.
pub fn pooled_baseline(full: &HeadConfig) -> HeadConfig {
    HeadConfig {
        num_layers: 0,
        weighting_mode: WeightingMode::None,
        ..full.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub ablation: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.ablation.len()).max().unwrap_or(0).max(8);
        let mut s = format!("{:<width$}  {:>6}  {:>8}  {:>6}  {:>5}  {:>10}\n", "ablation", "metric", "value", "seed", "steps", "final_loss");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>6}  {:>8.4}  {:>6}  {:>5}  {:>10.4}",
                r.ablation, r.metric, r.value, r.seed, r.steps, r.final_loss
            );
        }
        s
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).map_err(|e| VictrError::Config(e.to_string()))?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Trains and evaluates each named ablation from the same seed.
pub fn run_ablation_suite(
    names: &[&str],
    full: &HeadConfig,
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<AblationTable> {
    let specs = names.iter().map(|n| ablation(n)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let head = spec.config(full);
        let params = HeadParams::init(&head, config.seed)?;
        let outcome = train(config, params, train_set, None)?;
        let (metric, value) = evaluate(&outcome.params, test_set)?.metric();
        rows.push(AblationRow {
            ablation: spec.name.to_string(),
            metric: metric.to_string(),
            value,
            seed: config.seed,
            steps: config.steps,
            final_loss: outcome.steps.last().map_or(f64::NAN, |s| s.loss),
        });
    }
    Ok(AblationTable { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZeroShotReport {
    pub per_split: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Top-1 on each split using that split's own class vocabulary.
pub fn zero_shot_eval(params: &HeadParams, splits: &[Dataset]) -> Result<ZeroShotReport> {
    if splits.is_empty() {
        return Err(VictrError::Range("zero-shot evaluation needs at least one split".into()));
    }
    let mut per_split = Vec::with_capacity(splits.len());
    for split in splits {
        if split.dim() != params.config.embed_dim {
            return Err(VictrError::Shape(format!(
                "split embeddings are {}-d, head expects {}",
                split.dim(),
                params.config.embed_dim
            )));
        }
        let transferred = params.with_classes(split.n_classes())?;
        let report = evaluate(&transferred, split)?;
        per_split.push(report.top1.ok_or_else(|| VictrError::Label("zero-shot needs single-label splits".into()))?);
    }
    let (mean, std) = mean_std(&per_split);
    Ok(ZeroShotReport { per_split, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::presets;

    #[test]
    fn rows_differ_from_full_by_one_toggle() {
        let full = presets::toy_head();
        let no_weight = ablation("No Affinity weighting").unwrap().config(&full);
        assert_eq!(HeadConfig { weighting_mode: full.weighting_mode, ..no_weight }, full);
        let joint = ablation("joint_attention").unwrap().config(&full);
        assert_eq!(HeadConfig { attention_mode: full.attention_mode, ..joint }, full);
        assert_eq!(ablation(FULL_MODEL).unwrap().config(&full), full);
        assert_eq!(ABLATIONS.len(), 8);
        assert!(matches!(ablation("No Gates"), Err(VictrError::UnknownAblation(_))));
    }

    #[test]
    fn empty_suite_is_header_only() {
        let t = AblationTable::default();
        assert_eq!(t.to_text().lines().count(), 1);
        assert!(t.to_json_lines().unwrap().is_empty());
    }
}
