//! Poisson traffic masks and series corruption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::SraError;
use crate::series::{BfiSeries, GAP};

/// Which grid cells received at least one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficMask {
    pub keep: Vec<bool>,
    pub ratio: f64,
}

impl TrafficMask {
    pub fn all(length: usize) -> Self {
        Self {
            keep: vec![true; length],
            ratio: 1.0,
        }
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        self.keep.iter().filter(|&&k| k).count() as f64 / self.keep.len() as f64
    }
}

/// Frame arrivals as a Poisson process of rate `ratio * fs_hz`; a sample is
/// kept when an arrival lands in its grid cell.
pub fn gen_poisson_mask(length: usize, ratio: f64, fs_hz: f64, seed: u64) -> Result<TrafficMask, SraError> {
    if !(ratio > 0.0 && ratio <= 1.0) || !(fs_hz > 0.0) {
        return Err(SraError::BadRatio(ratio));
    }
    let mut mask = poisson_cells(length, ratio, seed);
    mask.ratio = ratio;
    Ok(mask)
}

/// Same process parameterized by the mean number of arrivals per cell
/// (may exceed one).
pub(crate) fn poisson_cells(length: usize, per_cell: f64, seed: u64) -> TrafficMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(per_cell).expect("positive rate");
    let mut keep = vec![false; length];
    let mut t = 0.0;
    loop {
        t += exp.sample(&mut rng);
        let cell = t.floor() as usize;
        if cell >= length {
            break;
        }
        keep[cell] = true;
    }
    TrafficMask { keep, ratio: per_cell }
}

/// Mask whose expected missing fraction is `missing` (0 <= missing < 1).
pub(crate) fn mask_with_missing(length: usize, missing: f64, seed: u64) -> TrafficMask {
    if missing <= 0.0 {
        return TrafficMask::all(length);
    }
    poisson_cells(length, -missing.ln(), seed)
}

/// Replaces masked-out samples with gaps; kept samples are untouched.
pub fn corrupt(series: &BfiSeries, mask: &TrafficMask) -> Result<BfiSeries, SraError> {
    if mask.keep.len() != series.len() {
        return Err(SraError::LengthMismatch {
            expected: series.len(),
            found: mask.keep.len(),
        });
    }
    let mut out = series.clone();
    for (i, &k) in mask.keep.iter().enumerate() {
        if !k {
            out.values[i] = GAP;
            out.gap_mask[i] = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_cell_occupancy() {
        let m = gen_poisson_mask(100_000, 1.0, 40.0, 1).unwrap();
        let want = 1.0 - (-1.0f64).exp();
        assert!((m.kept_fraction() - want).abs() < 0.02, "{}", m.kept_fraction());
    }

    #[test]
    fn small_ratio_keeps_little() {
        let m = gen_poisson_mask(100_000, 1e-4, 40.0, 1).unwrap();
        assert!(m.kept_fraction() < 1e-3);
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(gen_poisson_mask(500, 0.4, 40.0, 9).unwrap(), gen_poisson_mask(500, 0.4, 40.0, 9).unwrap());
        assert!(matches!(gen_poisson_mask(5, 0.0, 40.0, 1), Err(SraError::BadRatio(_))));
        assert!(matches!(gen_poisson_mask(5, 1.5, 40.0, 1), Err(SraError::BadRatio(_))));
    }

    #[test]
    fn missing_fraction_parameterization() {
        let m = mask_with_missing(100_000, 0.6, 3);
        assert!((1.0 - m.kept_fraction() - 0.6).abs() < 0.01);
    }

    #[test]
    fn corrupt_examples() {
        let ramp = BfiSeries::dense(40.0, 0, (0..10).map(|v| v as f64 / 9.0).collect());
        assert_eq!(corrupt(&ramp, &TrafficMask::all(10)).unwrap(), ramp);
        let none = TrafficMask { keep: vec![false; 10], ratio: 0.1 };
        assert!(corrupt(&ramp, &none).unwrap().values.iter().all(|&v| v == GAP));
        let even = TrafficMask { keep: (0..10).map(|i| i % 2 == 0).collect(), ratio: 0.5 };
        let c = corrupt(&ramp, &even).unwrap();
        for i in 0..10 {
            if i % 2 == 0 {
                assert_eq!(c.values[i], ramp.values[i]);
            } else {
                assert_eq!(c.values[i], GAP);
                assert!(c.gap_mask[i]);
            }
        }
        assert!(matches!(corrupt(&ramp, &TrafficMask::all(3)), Err(SraError::LengthMismatch { .. })));
    }
}
