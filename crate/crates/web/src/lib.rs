//! Browser bindings: the affinity gate curve, a small training run on
//! synthetic clips, and the FLOP breakdown of a preset.

use serde_json::json;
use victr::config::RunConfig;
use victr::dataio::{generate_synthetic, TEST_SPLIT, TRAIN_SPLIT};
use victr::eval::{evaluate, train};
use victr::head::{head_flops, sig_affinity, HeadParams};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Gate value for `samples` evenly spaced angles between two unit vectors,
/// from identical (cosine 1) to opposite (cosine -1).
#[wasm_bindgen]
pub fn affinity_curve(w: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    let n = samples.max(2);
    (0..n)
        .map(|i| {
            let angle = std::f64::consts::PI * i as f64 / (n - 1) as f64;
            sig_affinity(&[1.0, 0.0], &[angle.cos(), angle.sin()], w).map_err(js_err)
        })
        .collect()
}

/// Trains the toy head on synthetic clips and returns JSON with the loss
/// curve and held-out top-1 of the trained head.
/// `weighting` is one of sig_affinity, none, learned_scalar or attention.
#[wasm_bindgen]
pub fn train_toy(seed: u64, steps: usize, weighting: &str, noise: f64) -> Result<String, JsError> {
    let overrides = [
        format!("head.weighting_mode=\"{weighting}\""),
        format!("train.steps={steps}"),
        format!("train.seed={seed}"),
        format!("data.seed={seed}"),
        format!("data.noise={noise}"),
        "data.train_per_class=8".to_string(),
        "data.test_per_class=8".to_string(),
    ];
    let cfg = RunConfig::load("toy", None, &overrides).map_err(js_err)?;
    let data = generate_synthetic(&cfg.data).map_err(js_err)?;
    let params = HeadParams::init(&cfg.head, seed).map_err(js_err)?;
    let outcome = train(&cfg.train, params, &data.split(TRAIN_SPLIT), None).map_err(js_err)?;
    let report = evaluate(&outcome.params, &data.split(TEST_SPLIT)).map_err(js_err)?;
    let losses: Vec<f64> = outcome.steps.iter().map(|s| s.loss).collect();
    Ok(json!({
        "losses": losses,
        "top1": report.top1,
        "test_videos": report.videos,
        "classes": cfg.head.n_classes,
    })
    .to_string())
}

/// FLOP breakdown of one forward pass of a preset as JSON rows.
#[wasm_bindgen]
pub fn flop_breakdown(preset: &str, frames: usize) -> Result<String, JsError> {
    let cfg = RunConfig::preset(preset).map_err(js_err)?;
    let f = head_flops(&cfg.head, frames);
    let rows: Vec<_> = f.rows().iter().map(|(k, v)| json!({"name": k, "flops": v})).collect();
    Ok(json!({
        "rows": rows,
        "total": f.total(),
        "per_logit": f.per_logit(),
        "classes": cfg.head.n_classes,
    })
    .to_string())
}
