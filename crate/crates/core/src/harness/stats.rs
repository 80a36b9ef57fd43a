use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean with min/max spread and a t-based 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub ci95: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ci95 = if n < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("df >= 1")
                .inverse_cdf(0.975);
            t * (var / n as f64).sqrt()
        };
        Some(Summary {
            n,
            mean,
            min,
            max,
            ci95,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_interval() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (3.0, 1.0, 5.0));
        // t(0.975, 4) = 2.776445, sd = sqrt(2.5)
        assert!((s.ci95 - 2.776445 * (2.5f64 / 5.0).sqrt()).abs() < 1e-5);
        assert_eq!(Summary::of(&[7.0]).unwrap().ci95, 0.0);
        assert!(Summary::of(&[]).is_none());
    }
}
