//! Analytic cost model of one head forward pass.
//!
//! Every count is multiply-accumulates times two. With `S = 1+n+m` tokens
//! per step, `X = n+m` text tokens, hidden width `4D` and `P = proj_dim`:
//!
//! | block          | MACs                                |
//! |----------------|-------------------------------------|
//! | boost          | `2 T X D`                            |
//! | cross_attn     | `L (4 T S D^2 + 2 T S^2 D)`          |
//! | temporal_attn  | `L (4 T S D^2 + 2 S T^2 D)`          |
//! | joint (instead)| `L (4 T S D^2 + 2 (T S)^2 D)`        |
//! | reweight       | `L 2 T X D`                          |
//! | mlp            | `L 8 T S D^2`                        |
//! | projection     | `S D P`                              |
//! | logits         | `n P`                                |
//!
//! Normalisation, softmax and pooling are not counted.

use serde::Serialize;

use super::config::{AttentionMode, HeadConfig, WeightingMode, MLP_RATIO};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopBreakdown {
    pub boost: u64,
    pub cross_attn: u64,
    pub temporal_attn: u64,
    pub reweight: u64,
    pub mlp: u64,
    pub projection: u64,
    /// All `n` class logits.
    pub logits: u64,
    /// Classes sharing the per-video cost.
    pub n_classes: u64,
}

impl FlopBreakdown {
    /// Whole-video cost; the sum of [`FlopBreakdown::rows`].
    pub fn total(&self) -> u64 {
        self.boost
            + self.cross_attn
            + self.temporal_attn
            + self.reweight
            + self.mlp
            + self.projection
            + self.logits
    }

    /// Cost of one affinity logit: the per-video cost shared over the classes.
    pub fn per_logit(&self) -> u64 {
        self.total() / self.n_classes.max(1)
    }

    pub fn rows(&self) -> [(&'static str, u64); 7] {
        [
            ("boost", self.boost),
            ("cross_attn", self.cross_attn),
            ("temporal_attn", self.temporal_attn),
            ("reweight", self.reweight),
            ("mlp", self.mlp),
            ("projection", self.projection),
            ("logits", self.logits),
        ]
    }
}

/// FLOPs of a forward pass over `frames` frames. Does not validate `config`.
pub fn head_flops(config: &HeadConfig, frames: usize) -> FlopBreakdown {
    let t = frames as u64;
    let d = config.embed_dim as u64;
    let p = config.proj_dim as u64;
    let l = config.num_layers as u64;
    let n = config.n_classes as u64;
    let x = n + config.active_aux() as u64;
    let s = 1 + x;
    let weighted = config.weighting_mode != WeightingMode::None;

    let affinity_site = if weighted { 2 * t * x * d } else { 0 };
    let projections = 4 * t * s * d * d;
    let (cross, temporal) = match config.attention_mode {
        AttentionMode::Divided => (
            projections + 2 * t * s * s * d,
            projections + 2 * s * t * t * d,
        ),
        AttentionMode::Joint => (projections + 2 * (t * s) * (t * s) * d, 0),
    };
    let macs = FlopBreakdown {
        boost: affinity_site,
        cross_attn: l * cross,
        temporal_attn: l * temporal,
        reweight: l * affinity_site,
        mlp: l * 2 * t * s * d * (MLP_RATIO as u64 * d),
        projection: s * d * p,
        logits: n * p,
        n_classes: n,
    };
    FlopBreakdown {
        boost: 2 * macs.boost,
        cross_attn: 2 * macs.cross_attn,
        temporal_attn: 2 * macs.temporal_attn,
        reweight: 2 * macs.reweight,
        mlp: 2 * macs.mlp,
        projection: 2 * macs.projection,
        logits: 2 * macs.logits,
        n_classes: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::presets;

    #[test]
    fn base_case_is_boost_projection_and_logit() {
        let cfg = HeadConfig {
            num_layers: 0,
            n_classes: 1,
            n_aux: 0,
            use_aux: false,
            ..presets::toy_head()
        };
        let f = head_flops(&cfg, 1);
        let (d, p) = (8, 4);
        assert_eq!(f.boost, 2 * 2 * d);
        assert_eq!(f.projection, 2 * 2 * d * p);
        assert_eq!(f.logits, 2 * p);
        assert_eq!(f.cross_attn + f.temporal_attn + f.mlp + f.reweight, 0);
        assert_eq!(f.per_logit(), f.total());
    }

    #[test]
    fn divided_is_cheaper_at_scale() {
        let cfg = presets::b16_charades_head();
        let divided = head_flops(&cfg, 16);
        let joint = head_flops(&HeadConfig { attention_mode: AttentionMode::Joint, ..cfg }, 16);
        assert!(divided.total() < joint.total());
        assert_eq!(divided.rows().iter().map(|r| r.1).sum::<u64>(), divided.total());
    }
}
