//! Auxiliary prompt vocabularies and their semantic categories.
//!
//! Manifest format (UTF-8, line oriented):
//!
//! ```text
//! # comment
//! #category:objects
//! bag
//! bed
//! #category:places
//! kitchen
//! ```
//!
//! Blank lines and `#` comments are ignored; every entry belongs to the most
//! recent `#category:` header.

use std::collections::HashSet;

use crate::error::{shape_err, Result, VictrError};
use crate::numerics::Mat;

const CATEGORY_PREFIX: &str = "#category:";

static CHARADES: &str = include_str!("../data/charades.vocab");
static KINETICS400: &str = include_str!("../data/kinetics400.vocab");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxEntry {
    pub prompt: String,
    pub category: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxVocabulary {
    categories: Vec<String>,
    entries: Vec<AuxEntry>,
}

impl AuxVocabulary {
    pub fn new(categories: Vec<String>, entries: Vec<AuxEntry>) -> Result<Self> {
        if categories.is_empty() {
            return Err(VictrError::Parse {
                line: 0,
                message: "vocabulary declares no category".into(),
            });
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(VictrError::DuplicateEntry(format!("category {c}")));
            }
        }
        let mut prompts = HashSet::new();
        for e in &entries {
            if e.category >= categories.len() {
                return Err(VictrError::UnknownCategory(e.prompt.clone()));
            }
            if !prompts.insert(e.prompt.as_str()) {
                return Err(VictrError::DuplicateEntry(e.prompt.clone()));
            }
        }
        Ok(Self { categories, entries })
    }

    /// Parses a manifest document.
    pub fn parse(text: &str) -> Result<Self> {
        let mut categories: Vec<String> = Vec::new();
        let mut entries = Vec::new();
        let mut prompts = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix(CATEGORY_PREFIX) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(VictrError::Parse {
                        line: i + 1,
                        message: "empty category name".into(),
                    });
                }
                if categories.iter().any(|c| c == name) {
                    return Err(VictrError::DuplicateEntry(format!("category {name}")));
                }
                categories.push(name.to_string());
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            if categories.is_empty() {
                return Err(VictrError::UnknownCategory(line.to_string()));
            }
            if !prompts.insert(line.to_string()) {
                return Err(VictrError::DuplicateEntry(line.to_string()));
            }
            entries.push(AuxEntry {
                prompt: line.to_string(),
                category: categories.len() - 1,
            });
        }
        Self::new(categories, entries)
    }

    /// The shipped Charades vocabulary (objects, places, people, atomic-actions).
    pub fn charades() -> Self {
        Self::parse(CHARADES).expect("shipped Charades manifest is valid")
    }

    /// The shipped Kinetics-400 vocabulary (objects, places, people).
    pub fn kinetics400() -> Self {
        Self::parse(KINETICS400).expect("shipped Kinetics-400 manifest is valid")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "charades" => Some(Self::charades()),
            "kinetics400" | "kinetics-400" | "kinetics" => Some(Self::kinetics400()),
            _ => None,
        }
    }

    /// Renders the manifest; parsing the result gives back an equal vocabulary.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (c, name) in self.categories.iter().enumerate() {
            out.push_str(CATEGORY_PREFIX);
            out.push_str(name);
            out.push('\n');
            for e in self.entries.iter().filter(|e| e.category == c) {
                out.push_str(&e.prompt);
                out.push('\n');
            }
        }
        out
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn entries(&self) -> &[AuxEntry] {
        &self.entries
    }

    /// Number of entries `m`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of categories `k`.
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.category).collect()
    }

    pub fn category_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.categories.len()];
        for e in &self.entries {
            sizes[e.category] += 1;
        }
        sizes
    }
}

/// Member indices of each of `k` categories, in declared order.
pub fn category_groups(category_ids: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); k];
    for (i, &c) in category_ids.iter().enumerate() {
        if c >= k {
            return shape_err(format!("aux entry {i} has category {c} but k = {k}"));
        }
        groups[c].push(i);
    }
    if let Some(empty) = groups.iter().position(Vec::is_empty) {
        return shape_err(format!("category {empty} has no members"));
    }
    Ok(groups)
}

/// Arithmetic mean of the member embeddings of each category (`k x dim`).
pub fn category_pool(aux_embs: &Mat, vocab: &AuxVocabulary) -> Result<Mat> {
    if aux_embs.rows != vocab.len() {
        return shape_err(format!(
            "{} aux embeddings for a vocabulary of {}",
            aux_embs.rows,
            vocab.len()
        ));
    }
    let groups = category_groups(&vocab.category_ids(), vocab.num_categories())?;
    let mut out = Mat::zeros(groups.len(), aux_embs.cols);
    for (c, members) in groups.iter().enumerate() {
        let w = 1.0 / members.len() as f64;
        for &j in members {
            for (o, v) in out.row_mut(c).iter_mut().zip(aux_embs.row(j)) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}
