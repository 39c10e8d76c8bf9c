use serde::{Deserialize, Serialize};

use super::config::ClassifierMode;
use super::forward::HeadOutput;
use super::params::{BoundParams, TEMPERATURE};
use crate::error::{shape_err, Result, VictrError};
use crate::numerics::ops::affinity_matrix;
use crate::numerics::{Graph, Mat, Var};

/// Weight of the aux-augmented term in the total loss.
pub const DEFAULT_AUX_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    SingleLabel,
    MultiLabel,
}

/// Ground truth for one video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Single(usize),
    /// One flag per class.
    Multi(Vec<bool>),
}

impl Label {
    pub fn mode(&self) -> LabelMode {
        match self {
            Label::Single(_) => LabelMode::SingleLabel,
            Label::Multi(_) => LabelMode::MultiLabel,
        }
    }

    /// Checks the label against `mode` and a vocabulary of `n` classes.
    pub fn validate(&self, mode: LabelMode, n: usize) -> Result<()> {
        match (self, mode) {
            (Label::Single(c), LabelMode::SingleLabel) if *c < n => Ok(()),
            (Label::Single(c), LabelMode::SingleLabel) => {
                Err(VictrError::Label(format!("class {c} outside 0..{n}")))
            }
            (Label::Multi(v), LabelMode::MultiLabel) if v.len() == n => Ok(()),
            (Label::Multi(v), LabelMode::MultiLabel) => Err(VictrError::Label(format!(
                "{} flags for {n} classes",
                v.len()
            ))),
            (l, m) => Err(VictrError::Label(format!("{:?} label under {m:?}", l.mode()))),
        }
    }

    /// Whether class `c` is a positive.
    pub fn contains(&self, c: usize) -> bool {
        match self {
            Label::Single(x) => *x == c,
            Label::Multi(v) => v.get(c).copied().unwrap_or(false),
        }
    }
}

/// Logits on the graph.
#[derive(Clone, Copy, Debug)]
pub struct LogitVars {
    /// `1 x n`.
    pub class_logits: Var,
    /// `n x k`.
    pub aux_logits: Option<Var>,
    pub temperature: Var,
}

/// Evaluated logits for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitSet {
    pub class_logits: Vec<f64>,
    /// `n x k`, present iff aux tokens were used.
    pub aux_logits: Option<Mat>,
    pub temperature: f64,
}

impl LogitSet {
    pub fn read(g: &Graph, vars: &LogitVars) -> Self {
        Self {
            class_logits: g.value(vars.class_logits).data.clone(),
            aux_logits: vars.aux_logits.map(|a| g.value(a).clone()),
            temperature: g.value(vars.temperature).item(),
        }
    }
}

pub fn classify(g: &mut Graph, params: &BoundParams<'_>, mode: ClassifierMode, out: &HeadOutput) -> Result<LogitVars> {
    let tau = params.var(TEMPERATURE)?;
    let n = g.shape(out.class_text).0;
    let class_logits = match mode {
        ClassifierMode::Affinity => {
            let aff = affinity_matrix(g, out.video, out.class_text)?;
            g.scale_by(aff, tau)?
        }
        ClassifierMode::TextOnly => {
            let s = params.linear("text_classifier")?.forward(g, out.class_text)?;
            g.reshape(s, 1, n)?
        }
        ClassifierMode::VisualOnly => {
            let lin = params.linear("visual_classifier")?;
            if g.shape(lin.weight).1 != n {
                return shape_err(format!(
                    "visual classifier has {} outputs for {n} classes",
                    g.shape(lin.weight).1
                ));
            }
            lin.forward(g, out.video)?
        }
    };
    let aux_logits = match out.aux_categories {
        Some(aux) => {
            let aff = affinity_matrix(g, out.class_text, aux)?;
            Some(g.scale_by(aff, tau)?)
        }
        None => None,
    };
    Ok(LogitVars {
        class_logits,
        aux_logits,
        temperature: tau,
    })
}

fn label_loss(g: &mut Graph, logits: Var, label: &Label) -> Result<Var> {
    match label {
        Label::Single(c) => g.softmax_cross_entropy(logits, *c),
        Label::Multi(flags) => {
            let targets: Vec<f64> = flags.iter().map(|&b| f64::from(u8::from(b))).collect();
            g.sigmoid_cross_entropy(logits, &targets)
        }
    }
}

/// Main cross-entropy plus `aux_weight` times the same loss on class scores
/// augmented by each class's mean aux logit.
pub fn loss(g: &mut Graph, logits: &LogitVars, label: &Label, mode: LabelMode, aux_weight: f64) -> Result<Var> {
    let (_, n) = g.shape(logits.class_logits);
    label.validate(mode, n)?;
    let main = label_loss(g, logits.class_logits, label)?;
    let Some(aux) = logits.aux_logits else {
        return Ok(main);
    };
    let k = g.shape(aux).1;
    let flat = g.reshape(aux, n * k, 1)?;
    let col = g.combine_rows(
        flat,
        (0..n).map(|x| (0..k).map(|y| (x * k + y, 1.0 / k as f64)).collect()).collect(),
    )?;
    let aux_mean = g.reshape(col, 1, n)?;
    let augmented = g.add(logits.class_logits, aux_mean)?;
    let aux_loss = label_loss(g, augmented, label)?;
    let weighted = g.scale(aux_loss, aux_weight)?;
    g.add(main, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ce(logits: Vec<f64>, label: Label, mode: LabelMode) -> Result<f64> {
        let mut g = Graph::new();
        let n = logits.len();
        let class_logits = g.variable(Mat::from_vec(1, n, logits).unwrap());
        let temperature = g.constant(Mat::scalar(1.0));
        let vars = LogitVars {
            class_logits,
            aux_logits: None,
            temperature,
        };
        let l = loss(&mut g, &vars, &label, mode, DEFAULT_AUX_WEIGHT)?;
        Ok(g.value(l).item())
    }

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(
            ce(vec![0.3; 4], Label::Single(2), LabelMode::SingleLabel).unwrap(),
            4f64.ln(),
            epsilon = 1e-12
        );
        // ln(1 + e^-2)
        let oracle = (1.0 + (-2.0f64).exp()).ln();
        assert_abs_diff_eq!(oracle, 0.1269, epsilon = 1e-4);
        assert_abs_diff_eq!(
            ce(vec![1.0, -1.0], Label::Single(0), LabelMode::SingleLabel).unwrap(),
            oracle,
            epsilon = 1e-12
        );
        assert!(ce(vec![60.0, 0.0], Label::Single(0), LabelMode::SingleLabel).unwrap() < 1e-20);
    }

    #[test]
    fn malformed_labels() {
        for (label, mode) in [
            (Label::Single(3), LabelMode::SingleLabel),
            (Label::Multi(vec![true]), LabelMode::MultiLabel),
            (Label::Single(0), LabelMode::MultiLabel),
            (Label::Multi(vec![true, false, false]), LabelMode::SingleLabel),
        ] {
            assert!(matches!(ce(vec![0.0; 3], label, mode), Err(VictrError::Label(_))));
        }
    }

    #[test]
    fn multi_label_is_mean_sigmoid_ce() {
        let got = ce(vec![0.0, 0.0], Label::Multi(vec![true, false]), LabelMode::MultiLabel).unwrap();
        assert_abs_diff_eq!(got, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn aux_term_uses_mean_aux_logit() {
        let mut g = Graph::new();
        let class_logits = g.variable(Mat::from_vec(1, 2, vec![1.0, -1.0]).unwrap());
        let aux = g.variable(Mat::from_rows(&[vec![0.5, 1.5], vec![-1.0, 1.0]]).unwrap());
        let temperature = g.constant(Mat::scalar(1.0));
        let vars = LogitVars {
            class_logits,
            aux_logits: Some(aux),
            temperature,
        };
        let l = loss(&mut g, &vars, &Label::Single(0), LabelMode::SingleLabel, 0.1).unwrap();
        // augmented scores (2, -1): ce = ln(1 + e^-3)
        let expect = (1.0 + (-2.0f64).exp()).ln() + 0.1 * (1.0 + (-3.0f64).exp()).ln();
        assert_abs_diff_eq!(g.value(l).item(), expect, epsilon = 1e-12);
    }
}
