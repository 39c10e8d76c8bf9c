//! The head's forward pass: token boosting, L layers of divided attention
//! with affinity re-weighting, temporal pooling and projection.

use super::config::{AttentionMode, HeadConfig, WeightingMode};
use super::grid::TokenGrid;
use super::params::BoundParams;
use crate::error::{shape_err, Result, VictrError};
use crate::numerics::ops::{affinity_matrix, grouped_self_attention, layer_norm, AttentionWeights, LayerNormParams, Linear};
use crate::numerics::{Graph, Mat, Var};
use crate::semantics::category_groups;

/// Frozen backbone embeddings for one video.
#[derive(Clone, Copy, Debug)]
pub struct HeadInput<'a> {
    /// `T x D` frame embeddings.
    pub frames: &'a Mat,
    /// `n x D` class prompt embeddings.
    pub class_text: &'a Mat,
    /// `m x D` aux prompt embeddings.
    pub aux_text: &'a Mat,
    /// Category of each aux prompt.
    pub aux_categories: &'a [usize],
}

/// A token grid living on a [`Graph`].
#[derive(Clone, Copy, Debug)]
pub struct GridVar {
    pub var: Var,
    pub frames: usize,
    pub n_classes: usize,
    pub n_aux: usize,
}

impl GridVar {
    pub fn tokens_per_step(&self) -> usize {
        1 + self.n_classes + self.n_aux
    }

    fn texts(&self) -> usize {
        self.n_classes + self.n_aux
    }

    fn with_var(&self, var: Var) -> Self {
        Self { var, ..*self }
    }

    pub fn snapshot(&self, g: &Graph) -> TokenGrid {
        TokenGrid {
            frames: self.frames,
            n_classes: self.n_classes,
            n_aux: self.n_aux,
            tokens: g.value(self.var).clone(),
        }
    }
}

/// Text-token weighting at one site (token boosting or one layer).
#[derive(Clone, Copy, Debug)]
pub enum Gate {
    SigAffinity { w: Var },
    None,
    LearnedScalar { weight: Var, bias: Var },
    Attention { query: Var, key: Var },
}

impl Gate {
    pub fn bind(params: &BoundParams<'_>, mode: WeightingMode, site: &str) -> Result<Self> {
        Ok(match mode {
            WeightingMode::SigAffinity => Gate::SigAffinity {
                w: params.child(site, "gate")?,
            },
            WeightingMode::None => Gate::None,
            WeightingMode::LearnedScalar => Gate::LearnedScalar {
                weight: params.child(site, "score.weight")?,
                bias: params.child(site, "score.bias")?,
            },
            WeightingMode::Attention => Gate::Attention {
                query: params.child(site, "query")?,
                key: params.child(site, "key")?,
            },
        })
    }
}

/// `sigmoid(w * cos(a, b))` for plain vectors.
pub fn sig_affinity(a: &[f64], b: &[f64], w: f64) -> Result<f64> {
    Ok(crate::numerics::sigmoid(w * crate::numerics::cosine_affinity(a, b)?))
}

/// Weights of each of `X` text rows against each of `T` visual rows, as a
/// `(T*X) x 1` column ordered `t`-major. `None` for unweighted replication.
fn token_weights(g: &mut Graph, gate: &Gate, visual: Var, text: Var) -> Result<Option<Var>> {
    let (t, _) = g.shape(visual);
    let (x, d) = g.shape(text);
    let scores = match *gate {
        Gate::None => return Ok(None),
        Gate::SigAffinity { w } => {
            let aff = affinity_matrix(g, visual, text)?;
            g.scale_by(aff, w)?
        }
        Gate::LearnedScalar { weight, bias } => {
            let s = g.matmul(text, weight)?;
            let s = g.add_row(s, bias)?;
            let s = g.reshape(s, 1, x)?;
            g.gather_rows(s, vec![0; t])?
        }
        Gate::Attention { query, key } => {
            let q = g.matmul(visual, query)?;
            let k = g.matmul(text, key)?;
            let s = g.matmul_nt(q, k)?;
            g.scale(s, 1.0 / (d as f64).sqrt())?
        }
    };
    let w = g.sigmoid(scores)?;
    Ok(Some(g.reshape(w, t * x, 1)?))
}

/// Replicates `text` (`X x D`) once per visual row, scaling copy `(t, x)` by
/// its gate weight; output is `(T*X) x D`, `t`-major.
pub fn weight_text_tokens(g: &mut Graph, gate: &Gate, visual: Var, text: Var) -> Result<Var> {
    let (t, dv) = g.shape(visual);
    let (x, d) = g.shape(text);
    if dv != d {
        return shape_err(format!("visual width {dv} vs text width {d}"));
    }
    let weights = token_weights(g, gate, visual, text)?;
    let expanded = g.gather_rows(text, (0..t).flat_map(|_| 0..x).collect())?;
    match weights {
        Some(w) => g.mul_col(expanded, w),
        None => Ok(expanded),
    }
}

/// Interleaves `T` visual rows with `(T*X)` t-major text rows into grid order.
fn assemble(g: &mut Graph, visual: Var, text: Var, frames: usize, texts: usize) -> Result<Var> {
    let stacked = g.concat_rows(&[visual, text])?;
    let mut order = Vec::with_capacity(frames * (1 + texts));
    for t in 0..frames {
        order.push(t);
        order.extend((0..texts).map(|x| frames + t * texts + x));
    }
    g.gather_rows(stacked, order)
}

/// Builds the initial grid: frame `t` followed by every class and aux text
/// embedding scaled by its gate weight against frame `t`.
pub fn token_boost(g: &mut Graph, gate: &Gate, frames: Var, class_text: Var, aux_text: Option<Var>) -> Result<GridVar> {
    let (t, d) = g.shape(frames);
    let (n, dc) = g.shape(class_text);
    if t == 0 {
        return shape_err("a video needs at least one frame");
    }
    if dc != d {
        return shape_err(format!("class text width {dc} vs frame width {d}"));
    }
    let (text, m) = match aux_text {
        Some(a) if g.shape(a).0 > 0 => {
            let (m, da) = g.shape(a);
            if da != d {
                return shape_err(format!("aux text width {da} vs frame width {d}"));
            }
            (g.concat_rows(&[class_text, a])?, m)
        }
        _ => (class_text, 0),
    };
    let weighted = weight_text_tokens(g, gate, frames, text)?;
    let var = assemble(g, frames, weighted, t, n + m)?;
    Ok(GridVar {
        var,
        frames: t,
        n_classes: n,
        n_aux: m,
    })
}

/// `Z + MSA(LN(Z))` over the token axis, independently per timestep.
pub fn cross_modal_attention(
    g: &mut Graph,
    grid: GridVar,
    norm: &LayerNormParams,
    attn: &AttentionWeights,
    heads: usize,
) -> Result<GridVar> {
    let normed = layer_norm(g, grid.var, norm)?;
    let a = grouped_self_attention(g, normed, attn, heads, grid.tokens_per_step())?;
    Ok(grid.with_var(g.add(grid.var, a)?))
}

/// `Z + MSA(LN(Z))` over the time axis, independently per token index, with
/// one set of weights for visual and text tokens.
pub fn temporal_attention(
    g: &mut Graph,
    grid: GridVar,
    norm: &LayerNormParams,
    attn: &AttentionWeights,
    heads: usize,
) -> Result<GridVar> {
    let (t, s) = (grid.frames, grid.tokens_per_step());
    let normed = layer_norm(g, grid.var, norm)?;
    let token_major: Vec<usize> = (0..s).flat_map(|j| (0..t).map(move |i| i * s + j)).collect();
    let regrouped = g.gather_rows(normed, token_major)?;
    let a = grouped_self_attention(g, regrouped, attn, heads, t)?;
    let time_major: Vec<usize> = (0..t).flat_map(|i| (0..s).map(move |j| j * t + i)).collect();
    let back = g.gather_rows(a, time_major)?;
    Ok(grid.with_var(g.add(grid.var, back)?))
}

/// `Z + MSA(LN(Z))` over all `T * (1+n+m)` tokens at once.
pub fn joint_attention(
    g: &mut Graph,
    grid: GridVar,
    norm: &LayerNormParams,
    attn: &AttentionWeights,
    heads: usize,
) -> Result<GridVar> {
    let normed = layer_norm(g, grid.var, norm)?;
    let rows = grid.frames * grid.tokens_per_step();
    let a = grouped_self_attention(g, normed, attn, heads, rows)?;
    Ok(grid.with_var(g.add(grid.var, a)?))
}

/// Mean-pools every text token over time and overwrites copy `t` with the
/// pooled token scaled by its gate weight against visual token `t`.
/// Visual tokens pass through; `Gate::None` is the identity.
pub fn affinity_reweight(g: &mut Graph, grid: GridVar, gate: &Gate) -> Result<GridVar> {
    if matches!(gate, Gate::None) || grid.texts() == 0 {
        return Ok(grid);
    }
    let (t, s) = (grid.frames, grid.tokens_per_step());
    let visual = g.gather_rows(grid.var, (0..t).map(|i| i * s).collect())?;
    let groups: Vec<Vec<usize>> = (1..s).map(|j| (0..t).map(|i| i * s + j).collect()).collect();
    let pooled = g.mean_rows(grid.var, &groups)?;
    let weighted = weight_text_tokens(g, gate, visual, pooled)?;
    let var = assemble(g, visual, weighted, t, grid.texts())?;
    Ok(grid.with_var(var))
}

/// `Z + fc2(GELU(fc1(LN(Z))))`.
pub fn mlp_block(g: &mut Graph, grid: GridVar, norm: &LayerNormParams, fc1: &Linear, fc2: &Linear) -> Result<GridVar> {
    let h = layer_norm(g, grid.var, norm)?;
    let h = fc1.forward(g, h)?;
    let h = g.gelu(h)?;
    let h = fc2.forward(g, h)?;
    Ok(grid.with_var(g.add(grid.var, h)?))
}

/// Head outputs on the graph.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// `1 x proj_dim`.
    pub video: Var,
    /// `n x proj_dim`.
    pub class_text: Var,
    /// `k x proj_dim`, present when aux tokens are used.
    pub aux_categories: Option<Var>,
    /// Grid after boosting and after each layer, when requested.
    pub trace: Vec<TokenGrid>,
}

fn check_input(config: &HeadConfig, input: &HeadInput<'_>) -> Result<()> {
    let d = config.embed_dim;
    if input.frames.rows == 0 {
        return shape_err("a video needs at least one frame");
    }
    if input.frames.cols != d || input.class_text.cols != d {
        return shape_err(format!(
            "embedding width {} / {} does not match embed_dim {d}",
            input.frames.cols, input.class_text.cols
        ));
    }
    if input.class_text.rows != config.n_classes {
        return shape_err(format!(
            "{} class embeddings for a head configured with {} classes",
            input.class_text.rows, config.n_classes
        ));
    }
    if config.use_aux {
        if input.aux_text.rows != config.n_aux || input.aux_categories.len() != config.n_aux {
            return shape_err(format!(
                "{} aux embeddings ({} categorised) for a head configured with {}",
                input.aux_text.rows,
                input.aux_categories.len(),
                config.n_aux
            ));
        }
        if config.n_aux > 0 && input.aux_text.cols != d {
            return shape_err("aux embedding width does not match embed_dim");
        }
    }
    Ok(())
}

pub fn head_forward(
    g: &mut Graph,
    params: &BoundParams<'_>,
    config: &HeadConfig,
    input: &HeadInput<'_>,
    trace: bool,
) -> Result<HeadOutput> {
    forward_from(g, params, config, input, None, trace)
}

/// Runs the head from the input of layer `layer`, taking `grid` as that input.
/// `layer == num_layers` resumes at pooling.
pub(crate) fn head_forward_resumed(
    g: &mut Graph,
    params: &BoundParams<'_>,
    config: &HeadConfig,
    input: &HeadInput<'_>,
    layer: usize,
    grid: &TokenGrid,
) -> Result<HeadOutput> {
    forward_from(g, params, config, input, Some((layer, grid)), false)
}

fn forward_from(
    g: &mut Graph,
    params: &BoundParams<'_>,
    config: &HeadConfig,
    input: &HeadInput<'_>,
    resume: Option<(usize, &TokenGrid)>,
    trace: bool,
) -> Result<HeadOutput> {
    check_input(config, input)?;
    let frames = g.constant(input.frames.clone());
    let class_text = g.constant(input.class_text.clone());
    let aux_text = if config.active_aux() > 0 {
        Some(g.constant(input.aux_text.clone()))
    } else {
        None
    };

    let (first_layer, mut grid) = match resume {
        Some((layer, saved)) => {
            if layer > config.num_layers {
                return shape_err(format!("cannot resume at layer {layer} of {}", config.num_layers));
            }
            let grid = GridVar {
                var: g.constant(saved.tokens.clone()),
                frames: saved.frames,
                n_classes: saved.n_classes,
                n_aux: saved.n_aux,
            };
            (layer, grid)
        }
        None => {
            let boost_gate = Gate::bind(params, config.weighting_mode, "boost")?;
            (0, token_boost(g, &boost_gate, frames, class_text, aux_text)?)
        }
    };
    let mut grids = Vec::new();
    if trace {
        grids.push(grid.snapshot(g));
    }
    for l in first_layer..config.num_layers {
        let pre = format!("layers.{l}");
        let cross = params.attention(&format!("{pre}.cross"))?;
        let cross_norm = params.norm(&format!("{pre}.norm_cross"))?;
        grid = match config.attention_mode {
            AttentionMode::Divided => {
                grid = cross_modal_attention(g, grid, &cross_norm, &cross, config.num_heads)?;
                let temporal = params.attention(&format!("{pre}.temporal"))?;
                let temporal_norm = params.norm(&format!("{pre}.norm_temporal"))?;
                temporal_attention(g, grid, &temporal_norm, &temporal, config.num_heads)?
            }
            AttentionMode::Joint => joint_attention(g, grid, &cross_norm, &cross, config.num_heads)?,
        };
        let gate = Gate::bind(params, config.weighting_mode, &format!("{pre}.reweight"))?;
        grid = affinity_reweight(g, grid, &gate)?;
        grid = mlp_block(
            g,
            grid,
            &params.norm(&format!("{pre}.norm_mlp"))?,
            &params.linear(&format!("{pre}.mlp.fc1"))?,
            &params.linear(&format!("{pre}.mlp.fc2"))?,
        )?;
        if trace {
            grids.push(grid.snapshot(g));
        }
    }

    let (t, s, n) = (grid.frames, grid.tokens_per_step(), grid.n_classes);
    let time_groups: Vec<Vec<usize>> = (0..s).map(|j| (0..t).map(|i| i * s + j).collect()).collect();
    let pooled = g.mean_rows(grid.var, &time_groups)?;

    let proj_visual = params.linear("proj_visual")?;
    let proj_text = params.linear("proj_text")?;
    let video_in = if config.substitute_backbone_visual {
        g.mean_rows(frames, &[(0..t).collect()])?
    } else {
        g.gather_rows(pooled, vec![0])?
    };
    let video = proj_visual.forward(g, video_in)?;
    let class_in = if config.substitute_backbone_text {
        class_text
    } else {
        g.gather_rows(pooled, (1..=n).collect())?
    };
    let class_out = proj_text.forward(g, class_in)?;
    let aux_categories = if config.has_aux_logits() {
        let aux_tokens = g.gather_rows(pooled, (n + 1..s).collect())?;
        let aux_proj = proj_text.forward(g, aux_tokens)?;
        let groups = category_groups(input.aux_categories, config.n_categories)?;
        Some(g.mean_rows(aux_proj, &groups)?)
    } else {
        None
    };

    for (v, what) in [(video, "video embedding"), (class_out, "class text embeddings")]
        .into_iter()
        .chain(aux_categories.map(|a| (a, "aux category embeddings")))
    {
        if !g.value(v).all_finite() {
            return Err(VictrError::NonFinite(what.into()));
        }
    }
    Ok(HeadOutput {
        video,
        class_text: class_out,
        aux_categories,
        trace: grids,
    })
}
