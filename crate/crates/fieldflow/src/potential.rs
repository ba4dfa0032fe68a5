//! Interaction potentials `V_0` with analytic gradient and Hessian.
//!
//! The interacting measure is `ν(dφ) = e^{-V_0(φ)} γ(dφ)`. Three models are
//! built in: the sine-Gordon potential, a Gaussian perturbation used as a
//! closed-form oracle, and the zero potential. Anything else can be plugged
//! in through the [`Potential`] trait.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{FlowError, Result};
use crate::lattice::{Field, LatticeGeometry, MassParams};
use crate::spectral::SpectralMultiplier;

/// Dense path cap (sites) for Hessian realizations.
pub const DENSE_SITE_CAP: usize = 256;

/// Hessian of a potential at a point: diagonal for local models, dense
/// otherwise.
#[derive(Debug, Clone)]
pub enum Hessian {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(d)),
            Hessian::Dense(m) => m.clone(),
        }
    }
}

/// An interaction potential with analytic derivatives.
///
/// Slice-based methods avoid allocation in inner Monte-Carlo loops; `phi`
/// always has `geometry().num_sites()` entries.
pub trait Potential: Send + Sync {
    fn geometry(&self) -> LatticeGeometry;

    fn value(&self, phi: &[f64]) -> f64;

    fn gradient_into(&self, phi: &[f64], out: &mut [f64]);

    /// Fused value + gradient; the default just calls both.
    fn value_and_gradient_into(&self, phi: &[f64], out: &mut [f64]) -> f64 {
        self.gradient_into(phi, out);
        self.value(phi)
    }

    fn hessian(&self, phi: &[f64]) -> Hessian;

    /// Diagonal of the Hessian; only meaningful when [`is_local`] is true.
    fn hessian_diag_into(&self, phi: &[f64], out: &mut [f64]) {
        match self.hessian(phi) {
            Hessian::Diagonal(d) => out.copy_from_slice(&d),
            Hessian::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = m[(i, i)];
                }
            }
        }
    }

    /// Dense Hessian written column-major into `out` (length `sites²`);
    /// inner Monte-Carlo loops use this to avoid per-sample allocation.
    fn hessian_dense_into(&self, phi: &[f64], out: &mut [f64]) {
        let h = self.hessian(phi).to_dense();
        out.copy_from_slice(h.as_slice());
    }

    /// True when the Hessian is diagonal for every `φ`.
    fn is_local(&self) -> bool;

    /// Uniform per-site bound `sup_φ |∂V/∂φ_x|`, when one exists.
    fn gradient_sup(&self) -> Option<f64>;

    fn name(&self) -> &str;
}

pub type PotentialModel = Arc<dyn Potential>;

/// The zero potential; `ν = γ`.
#[derive(Debug, Clone)]
pub struct ZeroPotential {
    geometry: LatticeGeometry,
}

impl ZeroPotential {
    pub fn new(geometry: LatticeGeometry) -> Self {
        Self { geometry }
    }
}

impl Potential for ZeroPotential {
    fn geometry(&self) -> LatticeGeometry {
        self.geometry
    }

    fn value(&self, _phi: &[f64]) -> f64 {
        0.0
    }

    fn gradient_into(&self, _phi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hessian(&self, _phi: &[f64]) -> Hessian {
        Hessian::Diagonal(vec![0.0; self.geometry.num_sites()])
    }

    fn is_local(&self) -> bool {
        true
    }

    fn gradient_sup(&self) -> Option<f64> {
        Some(0.0)
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// Coupling constant `z` and inverse temperature `β` of the sine-Gordon
/// model.
#[derive(Debug, Clone, Copy)]
pub struct SineGordonParams {
    pub z: f64,
    pub beta: f64,
}

impl SineGordonParams {
    pub fn new(z: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() || !z.is_finite() {
            return Err(FlowError::InvalidParameter(format!(
                "sine-Gordon needs finite z and β > 0 (got z = {z}, β = {beta})"
            )));
        }
        Ok(Self { z, beta })
    }

    /// β ≥ 6π lies outside the regime where the curvature profile is
    /// expected to stay bounded.
    pub fn outside_beta_regime(&self) -> bool {
        self.beta >= 6.0 * std::f64::consts::PI
    }
}

/// Sine-Gordon potential `V_0(φ) = -Σ_x 2z eps^{2-β/4π} cos(√β φ_x)`, the
/// proportionality constant fixed to one.
#[derive(Debug, Clone)]
pub struct SineGordon {
    geometry: LatticeGeometry,
    params: SineGordonParams,
    coupling: f64,
    sqrt_beta: f64,
    /// Set when d ≠ 2: the coupling power 2 - β/4π is the two-dimensional
    /// one.
    pub coupling_power_warning: bool,
}

impl SineGordon {
    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn params(&self) -> SineGordonParams {
        self.params
    }
}

/// Build the sine-Gordon model on the given lattice.
pub fn sine_gordon_model(geom: LatticeGeometry, params: SineGordonParams) -> Result<SineGordon> {
    let power = 2.0 - params.beta / (4.0 * std::f64::consts::PI);
    let coupling = 2.0 * params.z * geom.spacing().powf(power);
    Ok(SineGordon {
        geometry: geom,
        params,
        coupling,
        sqrt_beta: params.beta.sqrt(),
        coupling_power_warning: geom.dimension() != 2,
    })
}

impl Potential for SineGordon {
    fn geometry(&self) -> LatticeGeometry {
        self.geometry
    }

    fn value(&self, phi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &p in phi {
            acc += (self.sqrt_beta * p).cos();
        }
        -self.coupling * acc
    }

    fn gradient_into(&self, phi: &[f64], out: &mut [f64]) {
        let g = self.coupling * self.sqrt_beta;
        for (o, &p) in out.iter_mut().zip(phi) {
            *o = g * (self.sqrt_beta * p).sin();
        }
    }

    fn value_and_gradient_into(&self, phi: &[f64], out: &mut [f64]) -> f64 {
        let g = self.coupling * self.sqrt_beta;
        let mut acc = 0.0;
        for (o, &p) in out.iter_mut().zip(phi) {
            let (s, c) = (self.sqrt_beta * p).sin_cos();
            acc += c;
            *o = g * s;
        }
        -self.coupling * acc
    }

    fn hessian(&self, phi: &[f64]) -> Hessian {
        let h = self.coupling * self.params.beta;
        Hessian::Diagonal(
            phi.iter()
                .map(|&p| h * (self.sqrt_beta * p).cos())
                .collect(),
        )
    }

    fn hessian_diag_into(&self, phi: &[f64], out: &mut [f64]) {
        let h = self.coupling * self.params.beta;
        for (o, &p) in out.iter_mut().zip(phi) {
            *o = h * (self.sqrt_beta * p).cos();
        }
    }

    fn is_local(&self) -> bool {
        true
    }

    fn gradient_sup(&self) -> Option<f64> {
        Some((self.coupling * self.sqrt_beta).abs())
    }

    fn name(&self) -> &str {
        "sine-gordon"
    }
}

/// Gaussian perturbation `V_0(φ) = ½ (φ, Bφ)` with `B = b(A)` diagonal in
/// Fourier and positive semidefinite; the closed-form oracle model.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    geometry: LatticeGeometry,
    b: SpectralMultiplier,
    dense: DMatrix<f64>,
}

impl QuadraticPotential {
    pub fn multiplier(&self) -> &SpectralMultiplier {
        &self.b
    }

    pub fn dense_matrix(&self) -> &DMatrix<f64> {
        &self.dense
    }
}

/// Build the quadratic oracle model; `b` must be nonnegative per mode.
pub fn quadratic_model(
    geom: LatticeGeometry,
    _mass: MassParams,
    b: SpectralMultiplier,
) -> Result<QuadraticPotential> {
    b.ensure_nonnegative()?;
    let dense = b.dense(DENSE_SITE_CAP)?;
    Ok(QuadraticPotential {
        geometry: geom,
        b,
        dense,
    })
}

impl Potential for QuadraticPotential {
    fn geometry(&self) -> LatticeGeometry {
        self.geometry
    }

    fn value(&self, phi: &[f64]) -> f64 {
        let mut acc = 0.0;
        let s = self.geometry.num_sites();
        for i in 0..s {
            let mut row = 0.0;
            for j in 0..s {
                row += self.dense[(i, j)] * phi[j];
            }
            acc += phi[i] * row;
        }
        0.5 * acc
    }

    fn gradient_into(&self, phi: &[f64], out: &mut [f64]) {
        let s = self.geometry.num_sites();
        for i in 0..s {
            let mut row = 0.0;
            for j in 0..s {
                row += self.dense[(i, j)] * phi[j];
            }
            out[i] = row;
        }
    }

    fn value_and_gradient_into(&self, phi: &[f64], out: &mut [f64]) -> f64 {
        self.gradient_into(phi, out);
        0.5 * phi.iter().zip(out.iter()).map(|(p, g)| p * g).sum::<f64>()
    }

    fn hessian(&self, _phi: &[f64]) -> Hessian {
        Hessian::Dense(self.dense.clone())
    }

    fn hessian_dense_into(&self, _phi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.dense.as_slice());
    }

    fn is_local(&self) -> bool {
        false
    }

    fn gradient_sup(&self) -> Option<f64> {
        None
    }

    fn name(&self) -> &str {
        "quadratic"
    }
}

/// Max-norm derivative consistency report from central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeReport {
    pub max_gradient_error: f64,
    pub max_hessian_error: f64,
}

/// Compare analytic gradient and Hessian against central differences of the
/// value and gradient with step `h`.
pub fn check_derivatives(model: &dyn Potential, phi: &Field, h: f64) -> Result<DerivativeReport> {
    if !(h > 0.0) {
        return Err(FlowError::InvalidParameter(format!(
            "finite-difference step must be positive (got {h})"
        )));
    }
    let s = model.geometry().num_sites();
    let base = phi.values();
    let mut grad = vec![0.0; s];
    model.gradient_into(base, &mut grad);

    let mut work = base.to_vec();
    let mut max_grad_err: f64 = 0.0;
    let mut gp = vec![0.0; s];
    let mut gm = vec![0.0; s];
    let hess = model.hessian(base).to_dense();
    let mut max_hess_err: f64 = 0.0;
    for x in 0..s {
        work[x] = base[x] + h;
        let vp = model.value(&work);
        model.gradient_into(&work, &mut gp);
        work[x] = base[x] - h;
        let vm = model.value(&work);
        model.gradient_into(&work, &mut gm);
        work[x] = base[x];

        max_grad_err = max_grad_err.max((grad[x] - (vp - vm) / (2.0 * h)).abs());
        for y in 0..s {
            let fd = (gp[y] - gm[y]) / (2.0 * h);
            max_hess_err = max_hess_err.max((hess[(y, x)] - fd).abs());
        }
    }
    Ok(DerivativeReport {
        max_gradient_error: max_grad_err,
        max_hessian_error: max_hess_err,
    })
}
