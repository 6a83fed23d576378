use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;

const MEAN_SCALE: f64 = 4.0;

/// Class means. With `input_dim >= num_classes` these are the scaled
/// standard basis vectors (vertices of the unit simplex); otherwise they sit
/// on a circle in the first two coordinates with the same neighbour distance.
fn class_means(num_classes: usize, input_dim: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut mean = vec![0.0; input_dim];
            if input_dim >= num_classes {
                mean[c] = MEAN_SCALE;
            } else {
                let side = MEAN_SCALE * 2f64.sqrt();
                let radius = side / (2.0 * (PI / num_classes as f64).sin());
                let angle = 2.0 * PI * c as f64 / num_classes as f64;
                mean[0] = radius * angle.cos();
                if input_dim > 1 {
                    mean[1] = radius * angle.sin();
                }
            }
            mean
        })
        .collect()
}

/// Class-balanced isotropic Gaussian blobs, laid out class by class.
pub fn gen_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 1 || samples_per_class < 1 || input_dim < 1 {
        return Err(Error::InvalidArgument(
            "synthetic data needs at least one class, sample and dimension".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!("spread must be non-negative, got {spread}")));
    }
    let means = class_means(num_classes, input_dim);
    let mut rng = rng_from(seed);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * z);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(features, labels, input_dim, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_construction() {
        let d = gen_synthetic(3, 100, 2, 0.3, 1).unwrap();
        assert_eq!(d.len(), 300);
        assert_eq!(d.class_histogram(), vec![100, 100, 100]);
        assert_eq!(d.input_dim(), 2);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(4, 20, 5, 0.5, 9).unwrap();
        let b = gen_synthetic(4, 20, 5, 0.5, 9).unwrap();
        let c = gen_synthetic(4, 20, 5, 0.5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn neighbour_distance_matches_simplex_layout() {
        let wide = class_means(3, 4);
        let narrow = class_means(3, 2);
        let dist = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let expected = MEAN_SCALE * 2f64.sqrt();
        assert!((dist(&wide[0], &wide[1]) - expected).abs() < 1e-12);
        assert!((dist(&narrow[0], &narrow[1]) - expected).abs() < 1e-9);
        assert!((dist(&narrow[1], &narrow[2]) - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_spread_puts_samples_on_means() {
        let d = gen_synthetic(2, 3, 2, 0.0, 4).unwrap();
        assert_eq!(d.sample(0).0, &[MEAN_SCALE, 0.0]);
        assert_eq!(d.sample(5).0, &[0.0, MEAN_SCALE]);
    }
}
