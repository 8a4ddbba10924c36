//! Reconstruction of the beamforming steering matrix V from its Givens
//! angle parameterization:
//!
//! `V = prod_i [ D_i(phi_{i,i} .. phi_{Nr-1,i}, 1) * prod_{l=i+1..Nr} G_{l,i}(psi_{l,i})^T ] * I_{Nr x Nc}`
//!
//! with `i` running over `1..=min(Nc, Nr-1)`.

use num_complex::Complex64;

use crate::frame::{angle_dequantize, AngleKind, BfiFrame};

/// `Nr x Nc` complex matrix with orthonormal columns, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<Complex64>,
}

impl SteeringMatrix {
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.n_cols + c]
    }

    /// Frobenius norm of `V^H V - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err = 0.0;
        for a in 0..self.n_cols {
            for b in 0..self.n_cols {
                let dot: Complex64 = (0..self.n_rows).map(|r| self.at(r, a).conj() * self.at(r, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                err += (dot - target).norm_sqr();
            }
        }
        err.sqrt()
    }
}

/// Builds V from dequantized angles given in the report's per-subcarrier order.
pub fn steering_from_angles(n_rows: usize, n_cols: usize, phi: &[f64], psi: &[f64]) -> SteeringMatrix {
    let mut m = vec![Complex64::new(0.0, 0.0); n_rows * n_cols];
    for c in 0..n_cols.min(n_rows) {
        m[c * n_cols + c] = Complex64::new(1.0, 0.0);
    }
    let stages = n_cols.min(n_rows.saturating_sub(1));
    // offsets of each stage's angles within phi/psi
    let mut starts = Vec::with_capacity(stages);
    let mut k = 0;
    for i in 0..stages {
        starts.push(k);
        k += n_rows - 1 - i;
    }
    for i in (0..stages).rev() {
        let base = starts[i];
        for l in (i + 1..n_rows).rev() {
            let angle = psi[base + (l - i - 1)];
            let (s, c) = angle.sin_cos();
            for col in 0..n_cols {
                let top = m[i * n_cols + col];
                let bot = m[l * n_cols + col];
                m[i * n_cols + col] = top * c - bot * s;
                m[l * n_cols + col] = top * s + bot * c;
            }
        }
        for r in i..n_rows - 1 {
            let rot = Complex64::from_polar(1.0, phi[base + (r - i)]);
            for col in 0..n_cols {
                m[r * n_cols + col] *= rot;
            }
        }
    }
    SteeringMatrix {
        n_rows,
        n_cols,
        entries: m,
    }
}

/// Dequantized (phi, psi) of one subcarrier.
pub fn dequantized_angles(frame: &BfiFrame, subcarrier: usize) -> (Vec<f64>, Vec<f64>) {
    let (pq, sq) = frame.subcarrier_angles(subcarrier);
    let (pb, sb) = (frame.codebook.phi_bits(), frame.codebook.psi_bits());
    let phi = pq
        .iter()
        .map(|&q| angle_dequantize(q as u32, pb, AngleKind::Phi).expect("validated frame"))
        .collect();
    let psi = sq
        .iter()
        .map(|&q| angle_dequantize(q as u32, sb, AngleKind::Psi).expect("validated frame"))
        .collect();
    (phi, psi)
}

/// V of the given subcarrier.
pub fn reconstruct_v_at(frame: &BfiFrame, subcarrier: usize) -> SteeringMatrix {
    let (phi, psi) = dequantized_angles(frame, subcarrier);
    steering_from_angles(frame.n_rows, frame.n_cols, &phi, &psi)
}

/// V of the first reported subcarrier.
pub fn reconstruct_v(frame: &BfiFrame) -> SteeringMatrix {
    reconstruct_v_at(frame, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_by_one_is_identity() {
        let v = steering_from_angles(1, 1, &[], &[]);
        assert_eq!(v.entries, vec![Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn two_by_one_closed_form() {
        let v = steering_from_angles(2, 1, &[PI / 4.0], &[PI / 6.0]);
        let want0 = Complex64::from_polar(1.0, PI / 4.0) * (PI / 6.0).cos();
        assert!((v.at(0, 0) - want0).norm() < 1e-15);
        assert!((v.at(1, 0) - Complex64::new((PI / 6.0).sin(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn square_four_by_four_is_unitary() {
        let phi: Vec<f64> = (0..6).map(|k| 0.3 + k as f64).collect();
        let psi: Vec<f64> = (0..6).map(|k| 0.1 + 0.2 * k as f64).collect();
        assert!(steering_from_angles(4, 4, &phi, &psi).orthonormality_error() < 1e-12);
    }
}
