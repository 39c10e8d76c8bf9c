use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VictrError};

/// How text tokens are weighted at token boosting and after every layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// `sigmoid(w * cos(visual, text))`.
    SigAffinity,
    /// Text tokens replicated unweighted; re-weighting is the identity.
    None,
    /// `sigmoid(u . text + b)`: a learned per-token score that ignores the video.
    LearnedScalar,
    /// `sigmoid((visual Wq) . (text Wk) / sqrt(D))`.
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Cross-modal attention per timestep, then temporal attention per token.
    Divided,
    /// One attention over all `T * (1+n+m)` tokens.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Scaled cosine between video and per-class text embeddings.
    Affinity,
    /// Linear score of each video-conditioned class text embedding.
    TextOnly,
    /// Linear map of the video embedding to `n` logits.
    VisualOnly,
}

macro_rules! string_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(<$ty>::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = VictrError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(VictrError::Config(format!(
                        "'{other}' is not one of {:?}",
                        [$($name),+]
                    ))),
                }
            }
        }
    };
}

string_enum!(WeightingMode {
    SigAffinity => "sig_affinity",
    None => "none",
    LearnedScalar => "learned_scalar",
    Attention => "attention",
});

string_enum!(AttentionMode {
    Divided => "divided",
    Joint => "joint",
});

string_enum!(ClassifierMode {
    Affinity => "affinity",
    TextOnly => "text_only",
    VisualOnly => "visual_only",
});

/// Architecture hyper-parameters and ablation toggles of the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub proj_dim: usize,
    pub n_classes: usize,
    pub n_aux: usize,
    pub n_categories: usize,
    pub use_aux: bool,
    pub weighting_mode: WeightingMode,
    pub attention_mode: AttentionMode,
    pub classifier_mode: ClassifierMode,
    pub substitute_backbone_text: bool,
    pub substitute_backbone_visual: bool,
}

/// Hidden width of each layer's MLP relative to `embed_dim`.
pub const MLP_RATIO: usize = 4;

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VictrError::Config(msg));
        if self.embed_dim < 8 {
            return bad(format!("embed_dim {} must be at least 8", self.embed_dim));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.proj_dim < 2 {
            return bad(format!("proj_dim {} must be at least 2", self.proj_dim));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes {} must be at least 2", self.n_classes));
        }
        if self.n_aux > 0 && self.n_categories == 0 {
            return bad("aux classes need at least one category".into());
        }
        if self.n_categories > self.n_aux && self.n_aux > 0 {
            return bad(format!(
                "{} categories cannot all be populated by {} aux classes",
                self.n_categories, self.n_aux
            ));
        }
        Ok(())
    }

    /// Aux tokens actually fed to the head.
    pub fn active_aux(&self) -> usize {
        if self.use_aux {
            self.n_aux
        } else {
            0
        }
    }

    /// Tokens per timestep, `1 + n + m`.
    pub fn tokens_per_step(&self) -> usize {
        1 + self.n_classes + self.active_aux()
    }

    pub fn has_aux_logits(&self) -> bool {
        self.use_aux && self.n_aux > 0
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Same architecture over a different class vocabulary.
    pub fn with_classes(&self, n_classes: usize) -> Self {
        Self {
            n_classes,
            ..self.clone()
        }
    }
}
