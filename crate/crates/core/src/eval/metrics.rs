use serde::Serialize;

use crate::error::{Result, VictrError};
use crate::head::Label;

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Fraction of rows whose argmax is the single-label class.
pub fn top1_accuracy(scores: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(VictrError::Label(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(VictrError::Label("accuracy over zero videos".into()));
    }
    let mut correct = 0usize;
    for (row, label) in scores.iter().zip(labels) {
        let Label::Single(c) = *label else {
            return Err(VictrError::Label("top-1 accuracy needs single-label ground truth".into()));
        };
        if c >= row.len() {
            return Err(VictrError::Label(format!("class {c} outside 0..{}", row.len())));
        }
        if argmax(row) == Some(c) {
            correct += 1;
        }
    }
    Ok(correct as f64 / scores.len() as f64)
}

/// Mean precision at the rank of each positive, ranking by descending score
/// with ties kept in input order. `None` without positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapReport {
    pub map: f64,
    /// AP per class; `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Mean over classes of [`average_precision`], skipping classes without
/// positives. `scores` and `labels` are `videos x classes`.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MapReport> {
    if scores.len() != labels.len() {
        return Err(VictrError::Label(format!("{} score rows for {} label rows", scores.len(), labels.len())));
    }
    let n = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != n) || labels.iter().any(|r| r.len() != n) {
        return Err(VictrError::Label("ragged score or label rows".into()));
    }
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            average_precision(&col, &pos)
        })
        .collect();
    let aps: Vec<f64> = per_class.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(VictrError::DegenerateClass);
    }
    Ok(MapReport {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        skipped: (0..n).filter(|&c| per_class[c].is_none()).collect(),
        per_class,
    })
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Element-wise mean of several logit rows (multi-view fusion).
pub fn fuse_views(views: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = views.first().map(Vec::len).ok_or_else(|| VictrError::Range("no views to fuse".into()))?;
    if views.iter().any(|v| v.len() != n) {
        return Err(VictrError::Shape("views disagree on class count".into()));
    }
    Ok((0..n)
        .map(|c| views.iter().map(|v| v[c]).sum::<f64>() / views.len() as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn top1_examples() {
        let rows = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]];
        let right = [Label::Single(0), Label::Single(1), Label::Single(0)];
        assert_eq!(top1_accuracy(&rows, &right).unwrap(), 1.0);
        let wrong = [Label::Single(1), Label::Single(0), Label::Single(1)];
        assert_eq!(top1_accuracy(&rows, &wrong).unwrap(), 0.0);
        let two = [Label::Single(0), Label::Single(1), Label::Single(1)];
        assert_abs_diff_eq!(top1_accuracy(&rows, &two).unwrap(), 2.0 / 3.0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert!(top1_accuracy(&rows, &[Label::Single(5), Label::Single(0), Label::Single(0)]).is_err());
        assert!(top1_accuracy(&rows[..1], &[Label::Multi(vec![true, false])]).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_abs_diff_eq!(
            average_precision(&[0.9, 0.5, 0.1], &[true, false, true]).unwrap(),
            (1.0 + 2.0 / 3.0) / 2.0,
            epsilon = 1e-15
        );
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.7]];
        let labels = vec![vec![true, false], vec![false, true]];
        assert_eq!(mean_average_precision(&scores, &labels).unwrap().map, 1.0);
        let r = mean_average_precision(&scores, &[vec![true, false], vec![true, false]]).unwrap();
        assert_eq!(r.skipped, vec![1]);
        assert!(matches!(
            mean_average_precision(&scores, &[vec![false; 2], vec![false; 2]]),
            Err(VictrError::DegenerateClass)
        ));
    }

    #[test]
    fn mean_std_is_population() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    proptest! {
        #[test]
        fn metrics_ignore_monotone_transforms(
            raw in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..7),
            flags in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 3), 7),
        ) {
            let labels: Vec<Vec<bool>> = flags[..raw.len()].to_vec();
            let squashed: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x.exp() * 2.0 + 1.0).collect()).collect();
            let a = mean_average_precision(&raw, &labels);
            let b = mean_average_precision(&squashed, &labels);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a.map - b.map).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
            let single: Vec<Label> = (0..raw.len()).map(|i| Label::Single(i % 3)).collect();
            prop_assert_eq!(top1_accuracy(&raw, &single).unwrap(), top1_accuracy(&squashed, &single).unwrap());
        }
    }
}
