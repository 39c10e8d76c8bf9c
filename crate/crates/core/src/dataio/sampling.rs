use super::bundle::{Dataset, EmbeddingBundle, TEST_SPLIT};
use crate::error::{Result, VictrError};
use crate::numerics::{Mat, Rng};

/// Exactly `k` clips per class drawn from the non-test bundles.
pub fn few_shot_sample(data: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    let pool = data.filter(|b| b.split != TEST_SPLIT);
    let by_class = pool.indices_by_class()?;
    if let Some((class, idx)) = by_class.iter().enumerate().find(|(_, idx)| idx.len() < k) {
        return Err(VictrError::InsufficientClips {
            class,
            available: idx.len(),
            requested: k,
        });
    }
    let mut rng = Rng::new(seed);
    let mut chosen = Vec::with_capacity(k * by_class.len());
    for mut idx in by_class {
        rng.shuffle(&mut idx);
        idx.truncate(k);
        idx.sort_unstable();
        chosen.extend(idx);
    }
    Ok(Dataset {
        bundles: chosen.into_iter().map(|i| pool.bundles[i].clone()).collect(),
        ..pool
    })
}

/// Start frame of each of `n_views` evenly spaced windows.
pub fn view_starts(frames: usize, n_views: usize, frames_per_view: usize) -> Result<Vec<usize>> {
    if n_views == 0 || frames_per_view == 0 {
        return Err(VictrError::Range("views need at least one frame each".into()));
    }
    if frames_per_view > frames {
        return Err(VictrError::Range(format!(
            "{frames_per_view}-frame view of a {frames}-frame clip"
        )));
    }
    let slack = frames - frames_per_view;
    Ok((0..n_views)
        .map(|i| if n_views == 1 { 0 } else { i * slack / (n_views - 1) })
        .collect())
}

/// Temporal windows of one clip; each view keeps the clip's id, label and split.
pub fn multi_view_split(bundle: &EmbeddingBundle, n_views: usize, frames_per_view: usize) -> Result<Vec<EmbeddingBundle>> {
    let d = bundle.frames.cols;
    view_starts(bundle.frames.rows, n_views, frames_per_view)?
        .into_iter()
        .map(|start| {
            let data = bundle.frames.data[start * d..(start + frames_per_view) * d].to_vec();
            Ok(EmbeddingBundle {
                frames: Mat::from_vec(frames_per_view, d, data)?,
                ..bundle.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};
    use crate::head::Label;

    fn five_by_ten() -> Dataset {
        generate_synthetic(&SyntheticSpec {
            n_classes: 5,
            train_per_class: 10,
            test_per_class: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn two_per_class() {
        let data = five_by_ten();
        let s = few_shot_sample(&data, 2, 7).unwrap();
        assert_eq!(s.len(), 10);
        for idx in s.indices_by_class().unwrap() {
            assert_eq!(idx.len(), 2);
        }
        assert!(s.bundles.iter().all(|b| b.split != TEST_SPLIT));
        assert_eq!(s, few_shot_sample(&data, 2, 7).unwrap());
    }

    #[test]
    fn seeds_give_different_subsets() {
        let data = five_by_ten();
        let subsets: Vec<Vec<String>> = (0..100)
            .map(|seed| {
                few_shot_sample(&data, 4, seed)
                    .unwrap()
                    .bundles
                    .into_iter()
                    .map(|b| b.video_id)
                    .collect()
            })
            .collect();
        let distinct: std::collections::BTreeSet<_> = subsets.iter().collect();
        assert!(distinct.len() >= 99);
    }

    #[test]
    fn deficient_class_is_named() {
        let data = five_by_ten();
        let short = data.filter(|b| !(b.label == Label::Single(3) && b.video_id.ends_with(['3', '4', '5', '6', '7', '8', '9'])));
        let err = few_shot_sample(&short, 4, 0).unwrap_err();
        assert!(matches!(
            err,
            VictrError::InsufficientClips {
                class: 3,
                available: 3,
                requested: 4
            }
        ));
    }

    #[test]
    fn views() {
        assert_eq!(view_starts(32, 4, 8).unwrap(), vec![0, 8, 16, 24]);
        assert!(matches!(view_starts(8, 1, 16), Err(VictrError::Range(_))));
        let data = five_by_ten();
        let b = &data.bundles[0];
        assert_eq!(multi_view_split(b, 1, b.frames.rows).unwrap(), vec![b.clone()]);
        let v = multi_view_split(b, 3, 4).unwrap();
        assert_eq!(v[2].frames.row(0), b.frames.row(4));
    }
}
