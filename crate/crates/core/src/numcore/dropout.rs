use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(Tensor::full(shape, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = dropout_mask(&[4, 3], 0.0, &mut rng).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_fraction_concentrates() {
        // 10^5 Bernoulli(0.1) draws: sd of the fraction is ~9.5e-4, so the
        // [0.095, 0.105] window is more than five standard deviations wide.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = dropout_mask(&[100_000], 0.1, &mut rng).unwrap();
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((0.095..=0.105).contains(&zeros), "{zeros}");
        let kept = m.data().iter().find(|&&v| v != 0.0).unwrap();
        assert_eq!(*kept, 1.0 / 0.9);
    }

    #[test]
    fn same_seed_same_mask() {
        let a = dropout_mask(&[50], 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout_mask(&[50], 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rate_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask(&[2], 1.0, &mut rng).is_err());
        assert!(dropout_mask(&[2], -0.1, &mut rng).is_err());
    }
}
