//! Torus lattice geometry, field storage, the discrete Laplacian and its
//! Fourier diagonalization.
//!
//! The lattice is the d-dimensional torus of side length `L` with spacing
//! `eps`, so `N = L/eps` sites per side and `N^d` sites in total. Sites are
//! indexed row-major: `x = Σ_j x_j · N^(d-1-j)`, which fixes the layout of
//! every binary field payload written by this crate.
//!
//! All operators in the crate are functions of the positive-definite matrix
//! `A = eps^d (-Δ + m)`, whose plane-wave eigenvalues are
//!
//! ```text
//! a(k) = eps^d ( eps^{-2} Σ_j 2(1 - cos(2π k_j / N)) + m ),   k in {0..N-1}^d.
//! ```
//!
//! The convention for small lattices is the directed-neighbor one: each site
//! has 2d neighbor terms with wrap-around, duplicates counted with
//! multiplicity, so the spectral formula holds verbatim for N = 1 and N = 2.

use crate::error::{FlowError, Result};

/// Relative tolerance for accepting L/eps as an integer.
const INTEGRALITY_TOL: f64 = 1e-9;

/// Torus lattice `Λ` with spacing `eps` and side `L = N·eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeGeometry {
    d: usize,
    n: usize,
    eps: f64,
    side: f64,
    num_sites: usize,
}

impl LatticeGeometry {
    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Sites per side.
    pub fn sites_per_side(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.eps
    }

    pub fn side_length(&self) -> f64 {
        self.side
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    /// eps^d, the volume element of one site.
    pub fn site_volume(&self) -> f64 {
        self.eps.powi(self.d as i32)
    }

    /// Row-major site index of the coordinate tuple (only the first `d`
    /// entries are read).
    pub fn site_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for j in 0..self.d {
            debug_assert!(coords[j] < self.n);
            idx = idx * self.n + coords[j];
        }
        idx
    }

    /// Inverse of [`site_index`]. Coordinates are written into `out[..d]`.
    pub fn site_coords(&self, mut idx: usize, out: &mut [usize]) {
        for j in (0..self.d).rev() {
            out[j] = idx % self.n;
            idx /= self.n;
        }
    }

    /// Index of the site displaced by `step` (±1) along `axis`, wrapping
    /// around the torus.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> usize {
        let mut coords = [0usize; 2];
        self.site_coords(idx, &mut coords);
        let n = self.n as isize;
        let c = coords[axis] as isize + step;
        coords[axis] = c.rem_euclid(n) as usize;
        self.site_index(&coords)
    }

    /// Site index of the componentwise difference `(x - y) mod N`, used to
    /// realize translation-invariant (block-circulant) operators densely.
    pub fn wrapped_difference(&self, x: usize, y: usize) -> usize {
        let mut cx = [0usize; 2];
        let mut cy = [0usize; 2];
        self.site_coords(x, &mut cx);
        self.site_coords(y, &mut cy);
        let mut diff = [0usize; 2];
        for j in 0..self.d {
            diff[j] = (cx[j] + self.n - cy[j]) % self.n;
        }
        self.site_index(&diff)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.num_sites {
            return Err(FlowError::GeometryMismatch {
                found: len,
                expected: self.num_sites,
            });
        }
        Ok(())
    }
}

/// Build the torus geometry, rejecting non-integral `L/eps`.
pub fn build_geometry(d: usize, side: f64, eps: f64) -> Result<LatticeGeometry> {
    if d != 1 && d != 2 {
        return Err(FlowError::UnsupportedDimension(d));
    }
    if !(side > 0.0) || !(eps > 0.0) {
        return Err(FlowError::InvalidParameter(format!(
            "side length and spacing must be positive (got L = {side}, eps = {eps})"
        )));
    }
    let ratio = side / eps;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > INTEGRALITY_TOL * ratio.max(1.0) {
        return Err(FlowError::NonIntegralSpacing { side, eps, ratio });
    }
    let n = n as usize;
    let num_sites = n.pow(d as u32);
    Ok(LatticeGeometry {
        d,
        n,
        eps,
        side,
        num_sites,
    })
}

/// Mass parameter of the free field; enters the covariance as `(-Δ + m)^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassParams {
    m: f64,
}

impl MassParams {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(FlowError::InvalidParameter(format!(
                "mass must be positive and finite (got {m})"
            )));
        }
        Ok(Self { m })
    }

    pub fn m(&self) -> f64 {
        self.m
    }
}

/// A real scalar field on the lattice, one value per site, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    geometry: LatticeGeometry,
    values: Vec<f64>,
}

impl Field {
    pub fn new(geometry: LatticeGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.check_len(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::InvalidParameter(
                "field values must be finite".into(),
            ));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: LatticeGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.num_sites()],
        }
    }

    pub fn geometry(&self) -> LatticeGeometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Apply the discrete Laplacian `(Δφ)_x = eps^{-2} Σ_{y∼x} (φ_y - φ_x)` with
/// periodic boundary, directed neighbors counted with multiplicity.
pub fn laplacian_apply(geom: &LatticeGeometry, phi: &Field) -> Result<Field> {
    if phi.geometry() != *geom {
        return Err(FlowError::GeometryMismatch {
            found: phi.geometry().num_sites(),
            expected: geom.num_sites(),
        });
    }
    let mut out = vec![0.0; geom.num_sites()];
    laplacian_apply_slice(geom, phi.values(), &mut out);
    Ok(Field {
        geometry: *geom,
        values: out,
    })
}

/// Slice version of [`laplacian_apply`] for hot paths; no geometry check.
pub fn laplacian_apply_slice(geom: &LatticeGeometry, phi: &[f64], out: &mut [f64]) {
    let inv_eps2 = 1.0 / (geom.eps * geom.eps);
    let two_d = 2.0 * geom.d as f64;
    for x in 0..geom.num_sites {
        let mut acc = 0.0;
        for axis in 0..geom.d {
            acc += phi[geom.neighbor(x, axis, 1)];
            acc += phi[geom.neighbor(x, axis, -1)];
        }
        out[x] = inv_eps2 * (acc - two_d * phi[x]);
    }
}

/// Apply `A = eps^d (-Δ + m)` by the stencil (no Fourier transform).
pub fn a_apply_slice(geom: &LatticeGeometry, mass: MassParams, phi: &[f64], out: &mut [f64]) {
    laplacian_apply_slice(geom, phi, out);
    let vol = geom.site_volume();
    for (o, p) in out.iter_mut().zip(phi) {
        *o = vol * (-*o + mass.m() * p);
    }
}

/// Eigenvalue `a(k)` of `A` at the momentum index `k`.
pub fn mode_eigenvalue(geom: &LatticeGeometry, mass: MassParams, k: &[usize]) -> f64 {
    let n = geom.n as f64;
    let mut lap = 0.0;
    for j in 0..geom.d {
        lap += 2.0 * (1.0 - (2.0 * std::f64::consts::PI * k[j] as f64 / n).cos());
    }
    geom.site_volume() * (lap / (geom.eps * geom.eps) + mass.m())
}

/// All eigenvalues of `A`, indexed row-major by momentum.
pub fn mode_eigenvalues(geom: &LatticeGeometry, mass: MassParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(geom.num_sites());
    let mut k = [0usize; 2];
    for idx in 0..geom.num_sites() {
        geom.site_coords(idx, &mut k);
        out.push(mode_eigenvalue(geom, mass, &k[..geom.d]));
    }
    out
}

/// Momentum indices with their eigenvalues `a(k)`; `a(0) = eps^d · m` is the
/// minimum, so `|A^{-1}|_op = 1 / a(0)`.
pub fn fourier_modes(geom: &LatticeGeometry, mass: MassParams) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::with_capacity(geom.num_sites());
    let mut k = [0usize; 2];
    for idx in 0..geom.num_sites() {
        geom.site_coords(idx, &mut k);
        let kv = k[..geom.d].to_vec();
        let a = mode_eigenvalue(geom, mass, &kv);
        out.push((kv, a));
    }
    out
}

/// Operator norm of the covariance `A^{-1}`, attained at the zero mode.
pub fn a_inv_op_norm(geom: &LatticeGeometry, mass: MassParams) -> f64 {
    1.0 / (geom.site_volume() * mass.m())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_field(geom: LatticeGeometry, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..geom.num_sites())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        Field::new(geom, values).unwrap()
    }

    #[test]
    fn geometry_examples() {
        let g = build_geometry(2, 1.0, 0.5).unwrap();
        assert_eq!(g.sites_per_side(), 2);
        assert_eq!(g.num_sites(), 4);

        let g = build_geometry(1, 1.0, 1.0).unwrap();
        assert_eq!(g.sites_per_side(), 1);
        assert_eq!(g.num_sites(), 1);

        assert!(matches!(
            build_geometry(2, 1.0, 0.3),
            Err(FlowError::NonIntegralSpacing { .. })
        ));
        assert!(matches!(
            build_geometry(3, 1.0, 0.5),
            Err(FlowError::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn indexing_round_trip() {
        let g = build_geometry(2, 1.5, 0.5).unwrap();
        let mut coords = [0usize; 2];
        for idx in 0..g.num_sites() {
            g.site_coords(idx, &mut coords);
            assert_eq!(g.site_index(&coords), idx);
        }
        // Row-major convention: x = x_0 * N + x_1.
        assert_eq!(g.site_index(&[1, 2]), 5);
    }

    #[test]
    fn laplacian_constant_is_zero() {
        let g = build_geometry(2, 4.0, 1.0).unwrap();
        let phi = Field::new(g, vec![3.25; g.num_sites()]).unwrap();
        let lap = laplacian_apply(&g, &phi).unwrap();
        assert!(lap.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_single_site_is_zero() {
        for d in [1, 2] {
            let g = build_geometry(d, 1.0, 1.0).unwrap();
            let phi = Field::new(g, vec![1.7; 1]).unwrap();
            let lap = laplacian_apply(&g, &phi).unwrap();
            assert_eq!(lap.values(), &[0.0]);
        }
    }

    /// Independent stencil-sum oracle: on d=1, N=4, the mode cos(2πx/4) is an
    /// eigenvector with eigenvalue -2(1 - cos(π/2)) = -2.
    #[test]
    fn laplacian_cosine_mode_d1() {
        let g = build_geometry(1, 4.0, 1.0).unwrap();
        let values: Vec<f64> = (0..4)
            .map(|x| (2.0 * std::f64::consts::PI * x as f64 / 4.0).cos())
            .collect();
        let phi = Field::new(g, values.clone()).unwrap();
        let lap = laplacian_apply(&g, &phi).unwrap();
        // Direct directed-neighbor sum, written out by hand.
        for x in 0..4 {
            let oracle = values[(x + 1) % 4] + values[(x + 3) % 4] - 2.0 * values[x];
            assert_relative_eq!(lap.values()[x], oracle, epsilon = 1e-14);
            assert_relative_eq!(lap.values()[x], -2.0 * values[x], epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_symmetric_and_divergence_free() {
        for (d, side, eps) in [(1usize, 6.0, 1.0), (2, 1.5, 0.5), (2, 2.0, 1.0)] {
            let g = build_geometry(d, side, eps).unwrap();
            let phi = random_field(g, 11);
            let psi = random_field(g, 12);
            let lap_phi = laplacian_apply(&g, &phi).unwrap();
            let lap_psi = laplacian_apply(&g, &psi).unwrap();
            let lhs = phi.dot(&lap_psi);
            let rhs = lap_phi.dot(&psi);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12, epsilon = 1e-12);

            let total: f64 = lap_phi.values().iter().sum();
            assert!(total.abs() <= 1e-10 * phi.norm());
        }
    }

    /// Spectral consistency: the stencil scales the real plane-wave mode by
    /// -eps^{-2} Σ_j 2(1 - cos(2π k_j/N)) for every momentum k.
    #[test]
    fn laplacian_matches_spectrum() {
        for (d, n) in [(1usize, 5usize), (2, 3), (2, 4), (1, 2), (2, 2)] {
            let eps = 0.5;
            let g = build_geometry(d, eps * n as f64, eps).unwrap();
            let mut k = [0usize; 2];
            let mut x = [0usize; 2];
            for kidx in 0..g.num_sites() {
                g.site_coords(kidx, &mut k);
                let mut values = vec![0.0; g.num_sites()];
                for (idx, v) in values.iter_mut().enumerate() {
                    g.site_coords(idx, &mut x);
                    let phase: f64 = (0..d)
                        .map(|j| k[j] as f64 * x[j] as f64 / n as f64)
                        .sum::<f64>()
                        * 2.0
                        * std::f64::consts::PI;
                    *v = phase.cos();
                }
                let phi = Field::new(g, values.clone()).unwrap();
                let lap = laplacian_apply(&g, &phi).unwrap();
                let expected: f64 = -(0..d)
                    .map(|j| {
                        2.0 * (1.0
                            - (2.0 * std::f64::consts::PI * k[j] as f64 / n as f64).cos())
                    })
                    .sum::<f64>()
                    / (eps * eps);
                for (l, v) in lap.values().iter().zip(&values) {
                    assert_relative_eq!(*l, expected * v, epsilon = 1e-10, max_relative = 1e-10);
                }
            }
        }
    }

    /// Dense diagonalization oracle for the eigenvalues a(k): build A by
    /// applying the stencil to basis vectors and compare sorted spectra.
    #[test]
    fn mode_eigenvalues_match_dense_oracle() {
        let mass = MassParams::new(1.0).unwrap();
        for (d, side, eps) in [(1usize, 4.0, 1.0), (2, 1.0, 0.5), (2, 3.0, 1.0)] {
            let g = build_geometry(d, side, eps).unwrap();
            let s = g.num_sites();
            let mut dense = nalgebra::DMatrix::<f64>::zeros(s, s);
            let mut col = vec![0.0; s];
            for j in 0..s {
                let mut basis = vec![0.0; s];
                basis[j] = 1.0;
                a_apply_slice(&g, mass, &basis, &mut col);
                for i in 0..s {
                    dense[(i, j)] = col[i];
                }
            }
            let mut oracle: Vec<f64> = dense
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .collect();
            oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut spectral = mode_eigenvalues(&g, mass);
            spectral.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in oracle.iter().zip(&spectral) {
                assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn mode_eigenvalue_examples() {
        let mass = MassParams::new(1.0).unwrap();
        // d=2, eps=1, m=1: a(0,0) = 1 for any N.
        for n in [2usize, 3, 5] {
            let g = build_geometry(2, n as f64, 1.0).unwrap();
            assert_relative_eq!(mode_eigenvalue(&g, mass, &[0, 0]), 1.0, epsilon = 1e-14);
        }
        // d=2, N=2, eps=1, m=1: a(1,1) = 2·2 + 2·2 + 1 = 9.
        let g = build_geometry(2, 2.0, 1.0).unwrap();
        assert_relative_eq!(mode_eigenvalue(&g, mass, &[1, 1]), 9.0, epsilon = 1e-14);
        // d=2, eps=1/2, m=1: |A^{-1}|_op = 1/(m eps²) = 4.
        let g = build_geometry(2, 1.0, 0.5).unwrap();
        assert_relative_eq!(a_inv_op_norm(&g, mass), 4.0, epsilon = 1e-12);
        let modes = fourier_modes(&g, mass);
        let a_min = modes
            .iter()
            .map(|(_, a)| *a)
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(a_min, g.site_volume() * mass.m(), epsilon = 1e-14);
        assert!(modes.iter().all(|(_, a)| *a > 0.0));
    }
}
