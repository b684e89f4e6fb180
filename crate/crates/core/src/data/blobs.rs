use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::Dataset;
use crate::error::{ensure, Result};
use crate::nn::Tensor;
use crate::seed::rng_from;

/// One isotropic Gaussian cluster per class; centers pairwise at least
/// `separation` apart. Samples are grouped by class, class 0 first.
pub fn make_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    ensure!(num_classes >= 2, Validation, "need at least two classes");
    ensure!(dim >= 1 && per_class >= 1, Validation, "dim and per_class must be positive");
    ensure!(
        separation > 0.0 && separation.is_finite(),
        Validation,
        "separation must be positive"
    );
    ensure!(
        spread >= 0.0 && spread.is_finite(),
        Validation,
        "spread must be non-negative"
    );
    let mut rng = rng_from(seed);
    let centers = blob_centers(num_classes, dim, separation, &mut rng);
    let noise = Normal::new(0.0, spread).expect("non-negative spread");
    let mut data = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(center.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, dim], data)?,
        labels,
        (0..num_classes).collect(),
    )
}

/// Rejection-samples centers from `N(0, s²I)`, widening `s` whenever a
/// candidate keeps landing too close to an accepted center.
fn blob_centers<R: Rng>(k: usize, dim: usize, separation: f64, rng: &mut R) -> Vec<Vec<f64>> {
    // E‖a − b‖ ≈ s·√(2·dim); start where the typical pair sits at 1.5× separation.
    let mut scale = 1.5 * separation / (2.0 * dim as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while centers.len() < k {
        let cand: Vec<f64> = (0..dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        let ok = centers.iter().all(|c| {
            c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                >= separation * separation
        });
        if ok {
            centers.push(cand);
            failures = 0;
        } else {
            failures += 1;
            if failures >= 64 {
                scale *= 1.25;
                failures = 0;
            }
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center_distance_ok(ds: &Dataset, classes: usize, sep: f64) -> bool {
        // With spread 0 every sample sits on its center.
        let centers: Vec<&[f64]> = (0..classes).map(|c| ds.features().row(ds.indices_of(c)[0])).collect();
        for i in 0..classes {
            for j in i + 1..classes {
                let d: f64 = centers[i]
                    .iter()
                    .zip(centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < sep {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn counts_per_label() {
        let ds = make_blobs(4, 3, 50, 2.0, 0.5, 7).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(ds.histogram().iter().all(|&(_, n)| n == 50));
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(
            make_blobs(3, 5, 10, 1.0, 0.3, 11).unwrap(),
            make_blobs(3, 5, 10, 1.0, 0.3, 11).unwrap()
        );
        assert_ne!(
            make_blobs(3, 5, 10, 1.0, 0.3, 11).unwrap(),
            make_blobs(3, 5, 10, 1.0, 0.3, 12).unwrap()
        );
    }

    #[test]
    fn centers_respect_separation_in_low_dimension() {
        for seed in 0..5 {
            let ds = make_blobs(6, 2, 3, 4.0, 0.0, seed).unwrap();
            assert!(center_distance_ok(&ds, 6, 4.0));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_blobs(1, 2, 3, 1.0, 0.1, 0).is_err());
        assert!(make_blobs(2, 2, 3, 0.0, 0.1, 0).is_err());
        assert!(make_blobs(2, 0, 3, 1.0, 0.1, 0).is_err());
    }
}
