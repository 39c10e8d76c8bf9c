//! Synthetic stand-in for backbone embeddings.
//!
//! Classes come in pairs `(c, c + ceil(n/2))` sharing a base direction `p`;
//! each class also owns a direction `d_c`, all mutually orthogonal. The class
//! center is `normalize(cos a * p + sin a * d_c)` for separation angle `a`,
//! and its mirror swaps the sign of `d_c`. Frame `t` of a clip sits at
//! `normalize((1 - s_t) * center + s_t * mirror + noise)` with
//! `s_t = drift * t / (T - 1)`. At full drift both members of a pair have
//! the same mean frame and differ only in how their frames spread.

use serde::{Deserialize, Serialize};

use super::bundle::{Dataset, EmbeddingBundle, TEST_SPLIT, TRAIN_SPLIT};
use crate::error::{Result, VictrError};
use crate::head::{Label, LabelMode};
use crate::numerics::tensor::{dot, norm};
use crate::numerics::{Mat, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub dim: usize,
    /// Angle in radians between a class center and its pair's base direction.
    pub separation: f64,
    /// Expected norm of the noise added to each frame before normalising.
    pub noise: f64,
    /// How far frames travel from the center toward its mirror, in `[0, 1]`.
    pub drift: f64,
    pub n_aux: usize,
    pub n_categories: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            train_per_class: 40,
            test_per_class: 10,
            frames: 8,
            dim: 32,
            separation: std::f64::consts::FRAC_PI_4,
            noise: 0.3,
            drift: 1.0,
            n_aux: 6,
            n_categories: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn pairs(&self) -> usize {
        self.n_classes.div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VictrError::Spec(msg));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.frames == 0 || self.train_per_class + self.test_per_class == 0 {
            return bad("clips need frames and at least one clip per class".into());
        }
        let needed = self.pairs() + self.n_classes;
        if self.dim < needed {
            return bad(format!(
                "{} classes need {needed} orthogonal directions but dim is {}",
                self.n_classes, self.dim
            ));
        }
        if !(self.separation > 0.0 && self.separation < std::f64::consts::FRAC_PI_2) {
            return bad(format!("separation {} must lie in (0, pi/2)", self.separation));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return bad(format!("drift {} must lie in [0, 1]", self.drift));
        }
        if self.n_aux > 0 && (self.n_categories == 0 || self.n_categories > self.n_aux) {
            return bad(format!("{} categories for {} aux prompts", self.n_categories, self.n_aux));
        }
        Ok(())
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Rounds to the nearest `f32` so bundle files hold the data exactly.
fn to_f32_grid(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
}

/// `count` orthonormal vectors of length `dim` by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if norm(&v) > 1e-6 {
            normalize(&mut v);
            basis.push(v);
        }
    }
    basis
}

fn combine(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let (n, d, half) = (spec.n_classes, spec.dim, spec.pairs());
    let basis = orthonormal(&mut root.fork(1), half + n, d);
    let (cos, sin) = (spec.separation.cos(), spec.separation.sin());
    let centers: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .map(|c| {
            let (base, own) = (&basis[c % half], &basis[half + c]);
            let mut center = combine(cos, base, sin, own);
            let mut mirror = combine(cos, base, -sin, own);
            normalize(&mut center);
            normalize(&mut mirror);
            (center, mirror)
        })
        .collect();

    let mut class_rows: Vec<f64> = centers.iter().flat_map(|c| c.0.iter().copied()).collect();
    to_f32_grid(&mut class_rows);
    let class_text = Mat::from_vec(n, d, class_rows)?;

    let mut aux_rng = root.fork(3);
    let mut aux_rows = Vec::with_capacity(spec.n_aux * d);
    for y in 0..spec.n_aux {
        let mut v = vec![0.0; d];
        for c in (0..n).filter(|c| c % spec.n_aux.max(1) == y) {
            v.iter_mut().zip(&centers[c].0).for_each(|(a, b)| *a += b);
        }
        v.iter_mut().for_each(|x| *x += 0.1 * aux_rng.normal() / (d as f64).sqrt());
        normalize(&mut v);
        aux_rows.extend(v);
    }
    to_f32_grid(&mut aux_rows);
    let aux_text = Mat::from_vec(spec.n_aux, d, aux_rows)?;

    let mut frame_rng = root.fork(2);
    let noise_std = spec.noise / (d as f64).sqrt();
    let mut bundles = Vec::with_capacity(n * (spec.train_per_class + spec.test_per_class));
    for (split, per_class) in [(TRAIN_SPLIT, spec.train_per_class), (TEST_SPLIT, spec.test_per_class)] {
        for (c, (center, mirror)) in centers.iter().enumerate() {
            for i in 0..per_class {
                let mut data = Vec::with_capacity(spec.frames * d);
                for t in 0..spec.frames {
                    let s = if spec.frames > 1 {
                        spec.drift * t as f64 / (spec.frames - 1) as f64
                    } else {
                        0.0
                    };
                    let mut f = combine(1.0 - s, center, s, mirror);
                    f.iter_mut().for_each(|x| *x += noise_std * frame_rng.normal());
                    if norm(&f) < 1e-6 {
                        f.clone_from(center);
                    }
                    normalize(&mut f);
                    data.extend(f);
                }
                to_f32_grid(&mut data);
                bundles.push(EmbeddingBundle {
                    video_id: format!("c{c:03}-{split}-{i:04}"),
                    frames: Mat::from_vec(spec.frames, d, data)?,
                    label: Label::Single(c),
                    split: split.to_string(),
                });
            }
        }
    }
    let data = Dataset {
        label_mode: LabelMode::SingleLabel,
        class_text,
        aux_text,
        aux_categories: (0..spec.n_aux).map(|y| y % spec.n_categories.max(1)).collect(),
        n_categories: if spec.n_aux > 0 { spec.n_categories } else { 0 },
        bundles,
    };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_affinity;
    use approx::assert_abs_diff_eq;

    #[test]
    fn seeded() {
        let spec = SyntheticSpec {
            train_per_class: 3,
            test_per_class: 1,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = generate_synthetic(&SyntheticSpec { seed: 1, ..spec.clone() }).unwrap();
        assert_ne!(other, generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn noiseless_static_frames_sit_on_the_center() {
        let spec = SyntheticSpec {
            noise: 0.0,
            drift: 0.0,
            train_per_class: 2,
            test_per_class: 0,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        for b in &data.bundles {
            let Label::Single(c) = b.label else { unreachable!() };
            for t in 0..b.frames.rows {
                assert_abs_diff_eq!(
                    cosine_affinity(b.frames.row(t), data.class_text.row(c)).unwrap(),
                    1.0,
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn classes_are_separated() {
        let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let (mut within, mut across) = ((0.0, 0usize), (0.0, 0usize));
        // one clip per class per split keeps the pair count modest
        let clips: Vec<_> = data.bundles.iter().step_by(10).collect();
        for a in &clips {
            for b in &clips {
                if std::ptr::eq(*a, *b) {
                    continue;
                }
                let same = a.label == b.label;
                for t in 0..a.frames.rows {
                    for s in 0..b.frames.rows {
                        let cos = cosine_affinity(a.frames.row(t), b.frames.row(s)).unwrap();
                        let acc = if same { &mut within } else { &mut across };
                        acc.0 += cos;
                        acc.1 += 1;
                    }
                }
            }
        }
        let gap = within.0 / within.1 as f64 - across.0 / across.1 as f64;
        assert!(gap >= 0.2, "gap {gap}");
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(
            generate_synthetic(&SyntheticSpec { dim: 8, ..Default::default() }),
            Err(VictrError::Spec(_))
        ));
        assert!(generate_synthetic(&SyntheticSpec { noise: -1.0, ..Default::default() }).is_err());
    }
}
