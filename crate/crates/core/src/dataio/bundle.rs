use crate::error::{shape_err, Result, VictrError};
use crate::head::{HeadInput, Label, LabelMode};
use crate::numerics::tensor::norm;
use crate::numerics::{Mat, NORM_EPS};

pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";

/// Frame embeddings and ground truth for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    pub video_id: String,
    /// `T x D`.
    pub frames: Mat,
    pub label: Label,
    pub split: String,
}

/// Bundles sharing one class and aux vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub label_mode: LabelMode,
    /// `n x D`.
    pub class_text: Mat,
    /// `m x D`.
    pub aux_text: Mat,
    /// Category of each aux prompt, each below `n_categories`.
    pub aux_categories: Vec<usize>,
    pub n_categories: usize,
    pub bundles: Vec<EmbeddingBundle>,
}

fn check_rows(m: &Mat, what: &str) -> Result<()> {
    if !m.all_finite() {
        return Err(VictrError::NonFinite(what.into()));
    }
    for r in 0..m.rows {
        let n = norm(m.row(r));
        if !(n > NORM_EPS) {
            return Err(VictrError::ZeroNorm {
                context: format!("{what} row {r}"),
                norm: n,
            });
        }
    }
    Ok(())
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_text.rows
    }

    pub fn n_aux(&self) -> usize {
        self.aux_text.rows
    }

    pub fn dim(&self) -> usize {
        self.class_text.cols
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return shape_err("embedding width must be positive");
        }
        check_rows(&self.class_text, "class text")?;
        if self.n_aux() > 0 {
            if self.aux_text.cols != d {
                return shape_err(format!("aux width {} vs class width {d}", self.aux_text.cols));
            }
            check_rows(&self.aux_text, "aux text")?;
        }
        if self.aux_categories.len() != self.n_aux() {
            return shape_err(format!(
                "{} aux categories for {} aux prompts",
                self.aux_categories.len(),
                self.n_aux()
            ));
        }
        if let Some(&c) = self.aux_categories.iter().find(|&&c| c >= self.n_categories) {
            return Err(VictrError::UnknownCategory(format!("category {c} of {}", self.n_categories)));
        }
        for b in &self.bundles {
            if b.frames.rows == 0 {
                return shape_err(format!("{} has no frames", b.video_id));
            }
            if b.frames.cols != d {
                return shape_err(format!("{} has width {} not {d}", b.video_id, b.frames.cols));
            }
            check_rows(&b.frames, &format!("{} frames", b.video_id))?;
            b.label.validate(self.label_mode, self.n_classes())?;
        }
        Ok(())
    }

    pub fn input<'a>(&'a self, bundle: &'a EmbeddingBundle) -> HeadInput<'a> {
        HeadInput {
            frames: &bundle.frames,
            class_text: &self.class_text,
            aux_text: &self.aux_text,
            aux_categories: &self.aux_categories,
        }
    }

    /// Same vocabulary, only the bundles passing `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&EmbeddingBundle) -> bool) -> Dataset {
        Dataset {
            bundles: self.bundles.iter().filter(|b| keep(b)).cloned().collect(),
            ..self.without_bundles()
        }
    }

    pub fn split(&self, tag: &str) -> Dataset {
        self.filter(|b| b.split == tag)
    }

    fn without_bundles(&self) -> Dataset {
        Dataset {
            label_mode: self.label_mode,
            class_text: self.class_text.clone(),
            aux_text: self.aux_text.clone(),
            aux_categories: self.aux_categories.clone(),
            n_categories: self.n_categories,
            bundles: Vec::new(),
        }
    }

    /// Restricts the class vocabulary to `classes` (renumbered in the given
    /// order). Single-label bundles of other classes are dropped; multi-label
    /// flags are sliced.
    pub fn restrict_classes(&self, classes: &[usize]) -> Result<Dataset> {
        let n = self.n_classes();
        if let Some(&c) = classes.iter().find(|&&c| c >= n) {
            return Err(VictrError::Label(format!("class {c} outside 0..{n}")));
        }
        let rows: Vec<Vec<f64>> = classes.iter().map(|&c| self.class_text.row(c).to_vec()).collect();
        let class_text = Mat::from_vec(classes.len(), self.dim(), rows.concat())?;
        let bundles = self
            .bundles
            .iter()
            .filter_map(|b| {
                let label = match &b.label {
                    Label::Single(c) => Label::Single(classes.iter().position(|x| x == c)?),
                    Label::Multi(flags) => Label::Multi(classes.iter().map(|&c| flags[c]).collect()),
                };
                Some(EmbeddingBundle { label, ..b.clone() })
            })
            .collect();
        Ok(Dataset {
            class_text,
            bundles,
            ..self.without_bundles()
        })
    }

    /// Bundle indices grouped by single-label class.
    pub fn indices_by_class(&self) -> Result<Vec<Vec<usize>>> {
        let mut by_class = vec![Vec::new(); self.n_classes()];
        for (i, b) in self.bundles.iter().enumerate() {
            match b.label {
                Label::Single(c) if c < by_class.len() => by_class[c].push(i),
                _ => {
                    return Err(VictrError::Label(format!(
                        "{} is not a single-label bundle of this vocabulary",
                        b.video_id
                    )))
                }
            }
        }
        Ok(by_class)
    }
}
