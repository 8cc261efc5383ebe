use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, LabeledImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    /// Hold out exactly `n` images from every class.
    FixedPerClass(usize),
    /// Hold out `round(fraction · class size)` images from every class.
    Proportional(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

/// Per-class random holdout. Both halves keep the input's relative order.
pub fn split(
    dataset: &[LabeledImage],
    spec: SplitSpec,
    class_labels: &[String],
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>), DatasetError> {
    if let SplitMode::Proportional(f) = spec.mode {
        if !(f > 0.0 && f < 1.0) {
            return Err(DatasetError::InvalidSplit(format!(
                "fraction {f} must lie in (0, 1)"
            )));
        }
    }
    let num_classes = class_labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, img) in dataset.iter().enumerate() {
        if img.class_index >= num_classes {
            return Err(DatasetError::InvalidSplit(format!(
                "class index {} has no label",
                img.class_index
            )));
        }
        by_class[img.class_index].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut is_val = vec![false; dataset.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let want = match spec.mode {
            SplitMode::FixedPerClass(n) => n,
            SplitMode::Proportional(f) => (f * members.len() as f64).round() as usize,
        };
        if want > members.len() {
            return Err(DatasetError::HoldoutTooLarge {
                label: class_labels[class].clone(),
                available: members.len(),
                requested: want,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..want] {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (img, v) in dataset.iter().zip(is_val) {
        if v {
            val.push(img.clone());
        } else {
            train.push(img.clone());
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn data(per_class: usize) -> Vec<LabeledImage> {
        (0..3 * per_class)
            .map(|i| LabeledImage {
                class_index: i / per_class,
                pixels: Tensor::filled(&[1], i as f32),
                source: None,
            })
            .collect()
    }

    fn labels() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    fn per_class(items: &[LabeledImage]) -> Vec<usize> {
        let mut c = vec![0; 3];
        for i in items {
            c[i.class_index] += 1;
        }
        c
    }

    #[test]
    fn fixed_holdout() {
        let d = data(30);
        let spec = SplitSpec {
            mode: SplitMode::FixedPerClass(3),
            seed: 1,
        };
        let (train, val) = split(&d, spec, &labels()).unwrap();
        assert_eq!(per_class(&train), vec![27; 3]);
        assert_eq!(per_class(&val), vec![3; 3]);
        let mut ids: Vec<f32> = train.iter().chain(&val).map(|i| i.pixels.data()[0]).collect();
        ids.sort_by(f32::total_cmp);
        assert_eq!(ids, (0..90).map(|i| i as f32).collect::<Vec<_>>());
        assert_eq!(split(&d, spec, &labels()).unwrap(), (train, val));
    }

    #[test]
    fn proportional_holdout() {
        let (_, val) = split(
            &data(30),
            SplitSpec {
                mode: SplitMode::Proportional(0.2),
                seed: 0,
            },
            &labels(),
        )
        .unwrap();
        assert_eq!(per_class(&val), vec![6; 3]);
    }

    #[test]
    fn holdout_larger_than_class() {
        let err = split(
            &data(2),
            SplitSpec {
                mode: SplitMode::FixedPerClass(3),
                seed: 0,
            },
            &labels(),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::HoldoutTooLarge { available: 2, requested: 3, .. }));
        assert!(split(&data(2), SplitSpec { mode: SplitMode::Proportional(1.0), seed: 0 }, &labels()).is_err());
    }
}
