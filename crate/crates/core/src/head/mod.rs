//! The video head: token boosting, divided attention with affinity
//! re-weighting, pooling, projection and affinity logits.

pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod flops;
pub mod forward;
pub mod grid;
pub mod params;
pub mod presets;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use classify::{classify, loss, Label, LabelMode, LogitSet, LogitVars, DEFAULT_AUX_WEIGHT};
pub use config::{AttentionMode, ClassifierMode, HeadConfig, WeightingMode};
pub use flops::{head_flops, FlopBreakdown};
pub use forward::{head_forward, sig_affinity, HeadInput, HeadOutput};
pub use grid::TokenGrid;
pub use params::HeadParams;

use crate::error::Result;
use crate::numerics::{Graph, Mat};

/// Logits for one video under fixed parameters.
pub fn predict(params: &HeadParams, input: &HeadInput<'_>) -> Result<LogitSet> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let out = head_forward(&mut g, &bound, &params.config, input, false)?;
    let logits = classify(&mut g, &bound, params.config.classifier_mode, &out)?;
    Ok(LogitSet::read(&g, &logits))
}

/// Loss for one video and its gradient with respect to every parameter
/// tensor, in layout order.
pub fn loss_and_gradients(
    params: &HeadParams,
    input: &HeadInput<'_>,
    label: &Label,
    mode: LabelMode,
    aux_weight: f64,
) -> Result<(f64, Vec<Mat>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let out = head_forward(&mut g, &bound, &params.config, input, false)?;
    let logits = classify(&mut g, &bound, params.config.classifier_mode, &out)?;
    let l = loss(&mut g, &logits, label, mode, aux_weight)?;
    let value = g.value(l).item();
    let grads = g.backward(l)?;
    let per_tensor = bound
        .vars
        .iter()
        .map(|&v| {
            let (r, c) = g.shape(v);
            grads.get_or_zeros(v, r, c)
        })
        .collect();
    Ok((value, per_tensor))
}

/// Largest relative disagreement between the analytic gradient of the
/// training loss and central differences with step `h`, over every scalar
/// parameter.
pub fn head_grad_check(
    params: &HeadParams,
    input: &HeadInput<'_>,
    label: &Label,
    mode: LabelMode,
    aux_weight: f64,
    h: f64,
) -> Result<f64> {
    let (_, grads) = loss_and_gradients(params, input, label, mode, aux_weight)?;
    let config = &params.config;
    // Upstream of a perturbed tensor nothing changes, so each probe resumes
    // from the cached grid entering the first stage that reads the tensor.
    let trace = {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        head_forward(&mut g, &bound, config, input, true)?.trace
    };
    let mut probe = params.clone();
    let eval = |probe: &HeadParams, resume: Option<usize>| -> Result<f64> {
        let mut g = Graph::new();
        let bound = probe.bind(&mut g, false);
        let out = match resume {
            Some(layer) => forward::head_forward_resumed(&mut g, &bound, config, input, layer, &trace[layer])?,
            None => head_forward(&mut g, &bound, config, input, false)?,
        };
        let logits = classify(&mut g, &bound, config.classifier_mode, &out)?;
        let l = loss(&mut g, &logits, label, mode, aux_weight)?;
        Ok(g.value(l).item())
    };
    let mut worst = 0.0f64;
    for (ti, grad) in grads.iter().enumerate() {
        let resume = first_stage(&params.names()[ti], config.num_layers);
        for j in 0..grad.data.len() {
            let x = params.tensors()[ti].values[j];
            probe.tensors_mut()[ti].values[j] = x + h;
            let up = eval(&probe, resume)?;
            probe.tensors_mut()[ti].values[j] = x - h;
            let down = eval(&probe, resume)?;
            probe.tensors_mut()[ti].values[j] = x;
            worst = worst.max(crate::numerics::relative_error(grad.data[j], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Layer whose input is the first grid affected by the named tensor, or
/// `None` when token boosting reads it.
fn first_stage(name: &str, num_layers: usize) -> Option<usize> {
    if name.starts_with("boost.") {
        return None;
    }
    let layer = name
        .strip_prefix("layers.")
        .and_then(|rest| rest.split('.').next())
        .and_then(|l| l.parse().ok());
    Some(layer.unwrap_or(num_layers))
}
