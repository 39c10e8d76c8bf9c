use crate::error::{shape_err, Result};
use crate::numerics::Mat;

/// The `T x (1+n+m) x D` token tensor flowing through the head.
///
/// Layout along the token axis: index 0 is the visual token, `1..=n` the
/// class-text tokens and `n+1..=n+m` the aux-text tokens. Stored row-major
/// as `(T * (1+n+m)) x D` with row `t * (1+n+m) + s`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub frames: usize,
    pub n_classes: usize,
    pub n_aux: usize,
    pub tokens: Mat,
}

/// The three slices of a [`TokenGrid`], each `T x count x D` flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridParts {
    pub visual: Mat,
    pub class_text: Mat,
    pub aux_text: Mat,
}

impl TokenGrid {
    pub fn new(frames: usize, n_classes: usize, n_aux: usize, tokens: Mat) -> Result<Self> {
        if tokens.rows != frames * (1 + n_classes + n_aux) {
            return shape_err(format!(
                "grid of {} rows cannot hold {frames} x (1+{n_classes}+{n_aux}) tokens",
                tokens.rows
            ));
        }
        Ok(Self {
            frames,
            n_classes,
            n_aux,
            tokens,
        })
    }

    pub fn tokens_per_step(&self) -> usize {
        1 + self.n_classes + self.n_aux
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols
    }

    pub fn row_index(&self, t: usize, s: usize) -> usize {
        t * self.tokens_per_step() + s
    }

    pub fn token(&self, t: usize, s: usize) -> &[f64] {
        self.tokens.row(self.row_index(t, s))
    }

    pub fn split(&self) -> GridParts {
        let d = self.dim();
        let mut visual = Vec::with_capacity(self.frames * d);
        let mut class_text = Vec::with_capacity(self.frames * self.n_classes * d);
        let mut aux_text = Vec::with_capacity(self.frames * self.n_aux * d);
        for t in 0..self.frames {
            visual.extend_from_slice(self.token(t, 0));
            for x in 0..self.n_classes {
                class_text.extend_from_slice(self.token(t, 1 + x));
            }
            for y in 0..self.n_aux {
                aux_text.extend_from_slice(self.token(t, 1 + self.n_classes + y));
            }
        }
        GridParts {
            visual: Mat { rows: self.frames, cols: d, data: visual },
            class_text: Mat { rows: self.frames * self.n_classes, cols: d, data: class_text },
            aux_text: Mat { rows: self.frames * self.n_aux, cols: d, data: aux_text },
        }
    }

    pub fn join(frames: usize, parts: &GridParts) -> Result<Self> {
        let d = parts.visual.cols;
        if frames == 0 || parts.visual.rows != frames {
            return shape_err("visual slice must hold one token per frame");
        }
        if parts.class_text.rows % frames != 0 || parts.aux_text.rows % frames != 0 {
            return shape_err("text slices must hold a whole number of tokens per frame");
        }
        if parts.class_text.cols != d && parts.class_text.rows > 0
            || parts.aux_text.cols != d && parts.aux_text.rows > 0
        {
            return shape_err("slices disagree on width");
        }
        let n = parts.class_text.rows / frames;
        let m = parts.aux_text.rows / frames;
        let mut data = Vec::with_capacity(frames * (1 + n + m) * d);
        for t in 0..frames {
            data.extend_from_slice(parts.visual.row(t));
            for x in 0..n {
                data.extend_from_slice(parts.class_text.row(t * n + x));
            }
            for y in 0..m {
                data.extend_from_slice(parts.aux_text.row(t * m + y));
            }
        }
        Self::new(frames, n, m, Mat::from_vec(frames * (1 + n + m), d, data)?)
    }
}
