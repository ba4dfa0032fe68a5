//! d-dimensional FFT on the torus, built from 1-d rustfft plans.
//!
//! Forward transform is unnormalized `Σ_x φ_x e^{-2πi k·x/N}`; the inverse is
//! unnormalized `Σ_k φ̂_k e^{+2πi k·x/N}` and callers divide by `N^d`.
//! Plans are cached per thread keyed by the transform length.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::lattice::LatticeGeometry;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut map = cell.borrow_mut();
        map.entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(n, dir)
            })
            .clone()
    })
}

fn transform_axes(geom: &LatticeGeometry, data: &mut [Complex64], inverse: bool) {
    let n = geom.sites_per_side();
    let fft = plan(n, inverse);
    match geom.dimension() {
        1 => fft.process(data),
        2 => {
            // Rows are contiguous in the row-major layout.
            for row in data.chunks_exact_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex64::default(); n];
            for c in 0..n {
                for r in 0..n {
                    col[r] = data[r * n + c];
                }
                fft.process(&mut col);
                for r in 0..n {
                    data[r * n + c] = col[r];
                }
            }
        }
        _ => unreachable!("geometry construction rejects d > 2"),
    }
}

/// Forward transform of a real field into the mode array (row-major k).
pub fn forward(geom: &LatticeGeometry, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_axes(geom, &mut data, false);
    data
}

/// Unnormalized inverse transform in place.
pub fn inverse_in_place(geom: &LatticeGeometry, data: &mut [Complex64]) {
    transform_axes(geom, data, true);
}

/// Inverse transform, normalize by `1/N^d`, and return the real part together
/// with the largest imaginary residue.
pub fn inverse_to_real(geom: &LatticeGeometry, mut data: Vec<Complex64>) -> (Vec<f64>, f64) {
    transform_axes(geom, &mut data, true);
    let scale = 1.0 / geom.num_sites() as f64;
    let mut max_im: f64 = 0.0;
    let out = data
        .iter()
        .map(|c| {
            max_im = max_im.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    (out, max_im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_geometry;
    use approx::assert_relative_eq;

    #[test]
    fn round_trip_is_identity() {
        for (d, n) in [(1usize, 8usize), (2, 4), (2, 3), (1, 1)] {
            let g = build_geometry(d, n as f64, 1.0).unwrap();
            let values: Vec<f64> = (0..g.num_sites()).map(|i| (i as f64).sin() + 0.5).collect();
            let freq = forward(&g, &values);
            let (back, residue) = inverse_to_real(&g, freq);
            assert!(residue < 1e-12);
            for (a, b) in back.iter().zip(&values) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_direct_dft_2d() {
        let g = build_geometry(2, 3.0, 1.0).unwrap();
        let values: Vec<f64> = (0..9).map(|i| (i * i) as f64 * 0.1 - 0.3).collect();
        let freq = forward(&g, &values);
        let n = 3;
        for k0 in 0..n {
            for k1 in 0..n {
                let mut acc = Complex64::default();
                for x0 in 0..n {
                    for x1 in 0..n {
                        let phase = -2.0 * std::f64::consts::PI
                            * (k0 * x0 + k1 * x1) as f64
                            / n as f64;
                        acc += values[x0 * n + x1] * Complex64::new(phase.cos(), phase.sin());
                    }
                }
                let got = freq[k0 * n + k1];
                assert_relative_eq!(got.re, acc.re, epsilon = 1e-10);
                assert_relative_eq!(got.im, acc.im, epsilon = 1e-10);
            }
        }
    }
}
