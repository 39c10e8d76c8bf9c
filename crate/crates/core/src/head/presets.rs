use super::config::{AttentionMode, ClassifierMode, HeadConfig, WeightingMode};

fn full(embed_dim: usize, num_layers: usize, num_heads: usize, proj_dim: usize) -> HeadConfig {
    HeadConfig {
        embed_dim,
        num_layers,
        num_heads,
        proj_dim,
        n_classes: 2,
        n_aux: 0,
        n_categories: 0,
        use_aux: true,
        weighting_mode: WeightingMode::SigAffinity,
        attention_mode: AttentionMode::Divided,
        classifier_mode: ClassifierMode::Affinity,
        substitute_backbone_text: false,
        substitute_backbone_visual: false,
    }
}

/// `D=8, L=2, h=2`, three classes and two aux prompts in one category.
pub fn toy_head() -> HeadConfig {
    HeadConfig {
        n_classes: 3,
        n_aux: 2,
        n_categories: 1,
        ..full(8, 2, 2, 4)
    }
}

/// Default synthetic benchmark: `D=32`, ten classes, six aux prompts in two categories.
pub fn synthetic_head() -> HeadConfig {
    HeadConfig {
        n_classes: 10,
        n_aux: 6,
        n_categories: 2,
        ..full(32, 2, 4, 16)
    }
}

/// ViT-B/16-sized head over the Charades vocabulary.
pub fn b16_charades_head() -> HeadConfig {
    HeadConfig {
        n_classes: 157,
        n_aux: 97,
        n_categories: 4,
        ..full(512, 4, 8, 256)
    }
}

/// ViT-L/14-sized head over the Kinetics-400 vocabulary.
pub fn l14_kinetics_head() -> HeadConfig {
    HeadConfig {
        n_classes: 400,
        n_aux: 88,
        n_categories: 3,
        ..full(768, 4, 12, 256)
    }
}
