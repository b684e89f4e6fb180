//! Distances between feature tensors, and per-layer parameter change.

use super::network::Network;
use super::params::squared_distance;
use super::tensor::Tensor;
use crate::error::{ensure, Result};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    ensure!(
        a.shape() == b.shape(),
        Dimension,
        "shapes differ: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

/// `Σ |a − b|` over all entries.
pub fn manhattan(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum())
}

pub fn euclidean(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    Ok(squared_distance(a.data(), b.data()).sqrt())
}

/// `1 − a·b / (‖a‖‖b‖)` on the flattened tensors.
pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    ensure!(
        na > 0.0 && nb > 0.0,
        Validation,
        "cosine distance is undefined for an all-zero input"
    );
    if a == b {
        return Ok(0.0);
    }
    Ok((1.0 - dot / (na * nb)).max(0.0))
}

/// Euclidean distance between corresponding layer parameters (weights and
/// bias together), one entry per layer.
pub fn layer_change_profile(a: &Network, b: &Network) -> Result<Vec<f64>> {
    ensure!(
        a.same_architecture(b),
        Validation,
        "networks have different architectures"
    );
    Ok(a.layers()
        .iter()
        .zip(b.layers())
        .map(|(la, lb)| {
            (squared_distance(la.weights().data(), lb.weights().data())
                + squared_distance(la.bias().data(), lb.bias().data()))
            .sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::Error;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identical_inputs_have_zero_distance() {
        let a = t(&[1.0, -2.0, 3.5]);
        assert_eq!(manhattan(&a, &a).unwrap(), 0.0);
        assert_eq!(euclidean(&a, &a).unwrap(), 0.0);
        assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn three_four_five() {
        let (a, b) = (t(&[0.0, 0.0]), t(&[3.0, 4.0]));
        assert_eq!(manhattan(&a, &b).unwrap(), 7.0);
        assert_eq!(euclidean(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn direct_formula_oracle() {
        let a = t(&[0.3, -1.1, 2.4, 0.0]);
        let b = t(&[-0.7, 0.2, 1.9, 1.5]);
        let man = 1.0 + 1.3 + 0.5 + 1.5;
        let euc = (1.0f64 + 1.69 + 0.25 + 2.25).sqrt();
        let dot = 0.3 * -0.7 + -1.1 * 0.2 + 2.4 * 1.9;
        let na = (0.09f64 + 1.21 + 5.76).sqrt();
        let nb = (0.49f64 + 0.04 + 3.61 + 2.25).sqrt();
        assert!((manhattan(&a, &b).unwrap() - man).abs() < 1e-12);
        assert!((euclidean(&a, &b).unwrap() - euc).abs() < 1e-12);
        assert!((cosine_distance(&a, &b).unwrap() - (1.0 - dot / (na * nb))).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            manhattan(&t(&[1.0]), &t(&[1.0, 2.0])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            cosine_distance(&t(&[0.0, 0.0]), &t(&[1.0, 2.0])),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn layer_profile_locality() {
        let a = Network::mlp(&[3, 4, 4, 2], None, &mut rng_from(1)).unwrap();
        assert_eq!(layer_change_profile(&a, &a).unwrap(), vec![0.0; 3]);
        let mut b = a.clone();
        let mut dec = b.decoder_params();
        dec.values_mut()[0] += 0.5;
        dec.values_mut()[9] -= 1.2; // a bias entry of the last layer
        b.set_decoder(&dec).unwrap();
        let profile = layer_change_profile(&a, &b).unwrap();
        assert_eq!(&profile[..2], &[0.0, 0.0]);
        assert!((profile[2] - (0.25f64 + 1.44).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn layer_profile_rejects_other_architectures() {
        let a = Network::mlp(&[3, 4, 2], None, &mut rng_from(1)).unwrap();
        let b = Network::mlp(&[3, 5, 2], None, &mut rng_from(1)).unwrap();
        assert!(matches!(layer_change_profile(&a, &b), Err(Error::Validation(_))));
    }
}
