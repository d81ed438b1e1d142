//! Gaussian kernel density estimate with a normal-reference bandwidth.

use crate::kernel::Kernel;

#[derive(Debug, Clone)]
pub struct NormalReferenceKde {
    data: Vec<f64>,
    h: f64,
}

impl NormalReferenceKde {
    /// `None` when fewer than two points or zero spread.
    pub fn new(data: &[f64]) -> Option<Self> {
        let n = data.len();
        if n < 2 {
            return None;
        }
        let mean = data.iter().sum::<f64>() / n as f64;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return None;
        }
        let h = (4.0 / 3.0f64).powf(0.2) * sd * (n as f64).powf(-0.2);
        Some(NormalReferenceKde {
            data: data.to_vec(),
            h,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s: f64 = self
            .data
            .iter()
            .map(|&d| Kernel::Gaussian.eval((x - d) / self.h))
            .sum();
        s / (self.data.len() as f64 * self.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn recovers_standard_normal_density_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..4000).map(|_| d.sample(&mut rng)).collect();
        let kde = NormalReferenceKde::new(&xs).unwrap();
        let truth = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((kde.eval(0.0) - truth).abs() < 0.03);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(NormalReferenceKde::new(&[1.0]).is_none());
        assert!(NormalReferenceKde::new(&[2.0, 2.0, 2.0]).is_none());
    }
}
