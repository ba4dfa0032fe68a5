//! Monte-Carlo estimation of the renormalized potential
//! `V_t(φ) = -log E_{C_t}[e^{-V_0(φ+ζ)}]`, its derivatives, the residual of
//! the flow PDE `∂_t V_t = ½ Δ_{Ċ_t} V_t - ½ (∇V_t)²_{Ċ_t}`, and the
//! multiscale curvature (Bakry-Émery) profile
//! `λ̇_t = inf_φ λ_min(Q_t ∇²V_t(φ) Q_t)`.
//!
//! Derivatives come from differentiating under the expectation: with tilt
//! weights `w_i ∝ e^{-V_0(φ+ζ_i)}`,
//!
//! ```text
//! ∇V_t  = ⟨∇V_0⟩_w,
//! ∇²V_t = ⟨∇²V_0⟩_w - ( ⟨∇V_0 ∇V_0ᵀ⟩_w - ⟨∇V_0⟩_w ⟨∇V_0⟩_wᵀ ).
//! ```
//!
//! Both identities are pinned against finite differences in the tests.
//!
//! The inner noise `ζ_i(t)` is a per-mode `sqrt(C_t(a_k))` coloring of a
//! frozen bank of Hermitian unit normals keyed by `(seed, purpose, i)`, so
//! under common random numbers every estimate is a smooth function of `t`
//! and `φ`. Standard errors of nonlinear functionals use contiguous sample
//! blocks; the scalar `V_t` estimate carries the delta-method error.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{FlowError, Result};
use crate::lattice::{Field, LatticeGeometry, MassParams};
use crate::potential::{PotentialModel, DENSE_SITE_CAP};
use crate::rng;
use crate::spectral::{ScaleSchedule, SpectralMultiplier};
use crate::stats::{block_statistic, mean_se, split_ranges, MCEstimate, TiltedAccumulator};

/// Dense Ċ_t realization cap for the PDE residual.
pub const PDE_SITE_CAP: usize = 64;

/// Configuration for all `V_t` estimates.
#[derive(Clone)]
pub struct RenormEstimator {
    pub model: PotentialModel,
    pub geom: LatticeGeometry,
    pub mass: MassParams,
    pub schedule: ScaleSchedule,
    /// Inner-sample count per estimate.
    pub n_inner: usize,
    pub seed: u64,
    /// Common random numbers: reuse one frozen noise bank for all `t` and
    /// `φ`. When false every distinct `t` gets its own bank.
    pub crn: bool,
    /// Contiguous blocks for standard errors.
    pub n_blocks: usize,
}

/// Frozen inner-noise bank at a fixed time: `ζ_i(t)` for `i < rows`.
pub struct ZetaBank {
    n: usize,
    sites: usize,
    data: Vec<f64>,
}

impl ZetaBank {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.sites..(i + 1) * self.sites]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

const PURPOSE_INNER: &str = "renorm-inner";

/// Rows drawn per keyed stream; amortizes stream setup while keeping the
/// bank deterministic and independent of thread scheduling.
const ROWS_PER_STREAM: usize = 16;

impl RenormEstimator {
    pub fn new(
        model: PotentialModel,
        mass: MassParams,
        schedule: ScaleSchedule,
        n_inner: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_inner < 2 {
            return Err(FlowError::InvalidParameter(format!(
                "n_inner must be at least 2 (got {n_inner})"
            )));
        }
        let geom = model.geometry();
        Ok(Self {
            model,
            geom,
            mass,
            schedule,
            n_inner,
            seed,
            crn: true,
            n_blocks: 32,
        })
    }

    fn purpose(&self, t: f64) -> u64 {
        let base = rng::purpose_tag(PURPOSE_INNER);
        if self.crn {
            base
        } else {
            base ^ t.to_bits().rotate_left(17)
        }
    }

    /// Materialize the inner-noise bank at time `t`.
    pub fn zeta_bank(&self, t: f64) -> Result<ZetaBank> {
        self.zeta_bank_sized(t, self.n_inner)
    }

    /// Bank with an explicit row count (the transport integrator oversizes
    /// it for decorrelated trajectory subsampling).
    pub fn zeta_bank_sized(&self, t: f64, rows: usize) -> Result<ZetaBank> {
        self.schedule.check_time(t)?;
        let sites = self.geom.num_sites();
        let scale: Vec<f64> = crate::lattice::mode_eigenvalues(&self.geom, self.mass)
            .into_iter()
            .map(|a| self.schedule.c_of(t, a).max(0.0).sqrt())
            .collect();
        let purpose = self.purpose(t);
        let n_chunks = rows.div_ceil(ROWS_PER_STREAM);
        let mut data = vec![0.0; rows * sites];
        data.par_chunks_mut(ROWS_PER_STREAM * sites)
            .enumerate()
            .for_each(|(chunk, slot)| {
                debug_assert!(chunk < n_chunks);
                let mut r = rng::stream(self.seed, purpose, chunk as u64);
                let mut modes = vec![num_complex::Complex64::default(); sites];
                for row in slot.chunks_exact_mut(sites) {
                    crate::spectral::sample_colored_into(
                        &self.geom,
                        &scale,
                        &mut r,
                        &mut modes,
                        row,
                    );
                }
            });
        Ok(ZetaBank {
            n: rows,
            sites,
            data,
        })
    }

    fn check_field(&self, phi: &Field) -> Result<()> {
        if phi.geometry() != self.geom {
            return Err(FlowError::GeometryMismatch {
                found: phi.geometry().num_sites(),
                expected: self.geom.num_sites(),
            });
        }
        Ok(())
    }

    /// `V_t(φ)` with max-shift stabilized log-mean-exp and delta-method SE.
    pub fn estimate_vt(&self, t: f64, phi: &Field) -> Result<MCEstimate> {
        self.check_field(phi)?;
        let bank = self.zeta_bank(t)?;
        let acc = self.weight_accumulator(&bank, phi.values());
        self.vt_from_acc(&acc)
    }

    fn vt_from_acc(&self, acc: &TiltedAccumulator) -> Result<MCEstimate> {
        if !(acc.sum_weights() > 0.0) || !acc.sum_weights().is_finite() {
            return Err(FlowError::DegenerateEstimate);
        }
        Ok(MCEstimate {
            mean: acc.neg_log_mean_weight(),
            se: acc.neg_log_mean_weight_se(),
            n: acc.n(),
            ess: acc.ess(),
        })
    }

    fn weight_accumulator(&self, bank: &ZetaBank, phi: &[f64]) -> TiltedAccumulator {
        let blocks = self.weight_blocks(bank, phi);
        let mut total = TiltedAccumulator::new(0);
        for p in &blocks {
            total.merge(p);
        }
        total
    }

    fn weight_blocks(&self, bank: &ZetaBank, phi: &[f64]) -> Vec<TiltedAccumulator> {
        let sites = self.geom.num_sites();
        let model = self.model.as_ref();
        split_ranges(bank.len(), self.n_blocks)
            .into_par_iter()
            .map(|(lo, hi)| {
                let mut acc = TiltedAccumulator::new(0);
                let mut x = vec![0.0; sites];
                for i in lo..hi {
                    shift_into(phi, bank.row(i), &mut x);
                    acc.push(-model.value(&x), &[]);
                }
                acc
            })
            .collect()
    }

    /// Blocked tilted accumulation of gradient (and optionally Hessian)
    /// payloads at `φ + ζ_i`.
    fn derivative_accumulators(
        &self,
        bank: &ZetaBank,
        phi: &[f64],
        with_hessian: bool,
    ) -> (TiltedAccumulator, Vec<TiltedAccumulator>, DerivLayout) {
        let sites = self.geom.num_sites();
        let local = self.model.is_local();
        let layout = DerivLayout::new(sites, local, with_hessian);
        let model = self.model.as_ref();
        let per_block: Vec<TiltedAccumulator> = split_ranges(bank.len(), self.n_blocks)
            .into_par_iter()
            .map(|(lo, hi)| accumulate_range_serial(model, bank, phi, &layout, lo, hi))
            .collect();
        let mut total = TiltedAccumulator::new(layout.len);
        for p in &per_block {
            total.merge(p);
        }
        (total, per_block, layout)
    }

    /// Self-normalized estimates of `∇V_t(φ)` and `∇²V_t(φ)` with
    /// block-resampled standard errors.
    pub fn estimate_vt_derivatives(&self, t: f64, phi: &Field) -> Result<VtDerivatives> {
        self.check_field(phi)?;
        let sites = self.geom.num_sites();
        if sites > DENSE_SITE_CAP {
            return Err(FlowError::DenseCapExceeded {
                sites,
                cap: DENSE_SITE_CAP,
            });
        }
        let bank = self.zeta_bank(t)?;
        self.vt_derivatives_with_bank(&bank, phi.values())
    }

    pub(crate) fn vt_derivatives_with_bank(
        &self,
        bank: &ZetaBank,
        phi: &[f64],
    ) -> Result<VtDerivatives> {
        let sites = self.geom.num_sites();
        let (total, blocks, layout) = self.derivative_accumulators(bank, phi, true);
        if !(total.sum_weights() > 0.0) || !total.sum_weights().is_finite() {
            return Err(FlowError::DegenerateEstimate);
        }
        let grad = total.tilted_slice()[..sites].to_vec();
        let mut grad_se = vec![0.0; sites];
        for x in 0..sites {
            grad_se[x] = block_statistic(&blocks, grad[x], |b| b.tilted(x)).se;
        }
        let hess = layout.hessian_from(&total);
        let block_hessians: Vec<DMatrix<f64>> =
            blocks.iter().map(|b| layout.hessian_from(b)).collect();
        let mut hess_se = DMatrix::zeros(sites, sites);
        for a in 0..sites {
            for b in 0..sites {
                let vals: Vec<f64> = block_hessians.iter().map(|h| h[(a, b)]).collect();
                hess_se[(a, b)] = mean_se(&vals).se;
            }
        }
        let ess = total.ess();
        Ok(VtDerivatives {
            grad,
            grad_se,
            hess,
            hess_se,
            block_hessians,
            ess,
            n: total.n(),
            low_ess: ess < 10.0,
        })
    }

    /// Gradient-only tilted estimate (no dense-site cap).
    pub fn estimate_vt_gradient(&self, t: f64, phi: &Field) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.check_field(phi)?;
        let bank = self.zeta_bank(t)?;
        let sites = self.geom.num_sites();
        let (total, blocks, _layout) = self.derivative_accumulators(&bank, phi.values(), false);
        if !(total.sum_weights() > 0.0) || !total.sum_weights().is_finite() {
            return Err(FlowError::DegenerateEstimate);
        }
        let grad = total.tilted_slice()[..sites].to_vec();
        let mut grad_se = vec![0.0; sites];
        for x in 0..sites {
            grad_se[x] = block_statistic(&blocks, grad[x], |b| b.tilted(x)).se;
        }
        Ok((grad, grad_se, total.ess()))
    }

    /// Residual of the flow PDE at `(t, φ)`:
    /// centered difference `∂_t V_t` minus `½ Δ_{Ċ_t} V_t - ½ (∇V_t)²_{Ċ_t}`,
    /// all estimates sharing one noise bank (common random numbers).
    pub fn pde_residual(&self, t: f64, phi: &Field, h_t: f64) -> Result<PdeResidual> {
        self.check_field(phi)?;
        if !(h_t > 0.0) || !(t > h_t) {
            return Err(FlowError::InvalidParameter(format!(
                "need t > h_t > 0 (got t = {t}, h_t = {h_t})"
            )));
        }
        let sites = self.geom.num_sites();
        if sites > PDE_SITE_CAP {
            return Err(FlowError::DenseCapExceeded {
                sites,
                cap: PDE_SITE_CAP,
            });
        }
        let bank_m = self.zeta_bank(t - h_t)?;
        let bank_0 = self.zeta_bank(t)?;
        let bank_p = self.zeta_bank(t + h_t)?;
        let cdot = SpectralMultiplier::from_eigenvalue_fn(self.geom, self.mass, |a| {
            self.schedule.cdot_of(t, a)
        })
        .dense(PDE_SITE_CAP)?;

        let phi_v = phi.values();
        let blocks_m = self.weight_blocks(&bank_m, phi_v);
        let blocks_p = self.weight_blocks(&bank_p, phi_v);
        let (acc_0, blocks_0, layout) = self.derivative_accumulators(&bank_0, phi_v, true);
        let mut acc_m = TiltedAccumulator::new(0);
        let mut acc_p = TiltedAccumulator::new(0);
        for b in &blocks_m {
            acc_m.merge(b);
        }
        for b in &blocks_p {
            acc_p.merge(b);
        }

        let residual_of = |am: &TiltedAccumulator,
                           a0: &TiltedAccumulator,
                           ap: &TiltedAccumulator|
         -> Result<(f64, PdeParts)> {
            let vm = self.vt_from_acc(am)?.mean;
            let vp = self.vt_from_acc(ap)?.mean;
            let dvdt = (vp - vm) / (2.0 * h_t);
            let tilted = a0.tilted_slice();
            let grad = &tilted[..sites];
            let hess = layout.hessian_from(a0);
            let mut lap = 0.0;
            let mut grad_sq = 0.0;
            for i in 0..sites {
                for j in 0..sites {
                    lap += cdot[(i, j)] * hess[(i, j)];
                    grad_sq += cdot[(i, j)] * grad[i] * grad[j];
                }
            }
            let parts = PdeParts {
                dvdt,
                laplace_term: 0.5 * lap,
                gradient_term: 0.5 * grad_sq,
            };
            Ok((dvdt - 0.5 * lap + 0.5 * grad_sq, parts))
        };

        let (pooled, parts) = residual_of(&acc_m, &acc_0, &acc_p)?;
        let mut block_residuals = Vec::with_capacity(blocks_0.len());
        for ((bm, b0), bp) in blocks_m.iter().zip(&blocks_0).zip(&blocks_p) {
            if b0.n() == 0 {
                continue;
            }
            block_residuals.push(residual_of(bm, b0, bp)?.0);
        }
        let se = mean_se(&block_residuals).se;
        let scale = parts
            .dvdt
            .abs()
            .max(parts.laplace_term.abs())
            .max(parts.gradient_term.abs());
        Ok(PdeResidual {
            residual: MCEstimate {
                mean: pooled,
                se,
                n: acc_0.n(),
                ess: acc_0.ess(),
            },
            parts,
            inconclusive: se > 10.0 * scale.max(f64::MIN_POSITIVE),
        })
    }

    /// Estimate the curvature profile over a probe ensemble:
    /// `λ̇(t_i) = min over probes of λ_min(Q_{t_i} ∇²V_{t_i}(φ) Q_{t_i})`,
    /// an empirical (non-rigorous over φ) stand-in for the infimum over all
    /// fields. Optional adversarial refinement descends on the smallest
    /// eigenvalue as a function of the probe field.
    pub fn be_profile(
        &self,
        t_grid: &[f64],
        probes: &crate::ensemble::FieldEnsemble,
        adversarial: bool,
    ) -> Result<BeProfile> {
        if probes.count() == 0 {
            return Err(FlowError::EmptyEnsemble);
        }
        if !matches!(self.schedule, ScaleSchedule::HeatKernel) {
            return Err(FlowError::InvalidParameter(
                "curvature profile requires the heat-kernel schedule".into(),
            ));
        }
        let sites = self.geom.num_sites();
        if sites > DENSE_SITE_CAP {
            return Err(FlowError::DenseCapExceeded {
                sites,
                cap: DENSE_SITE_CAP,
            });
        }
        let mut lambda_dot = Vec::with_capacity(t_grid.len());
        let mut lambda_dot_se = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let bank = self.zeta_bank(t)?;
            let q = SpectralMultiplier::from_eigenvalue_fn(self.geom, self.mass, |a| {
                (-t * a / 2.0).exp()
            });
            let mut best: Option<(f64, usize, VtDerivatives)> = None;
            for p in 0..probes.count() {
                let deriv = self.vt_derivatives_with_bank(&bank, probes.sample(p))?;
                let m = q.conjugate_dense(&deriv.hess)?;
                let lam = smallest_eigenvalue(&m)?;
                if best.as_ref().map_or(true, |(b, _, _)| lam < *b) {
                    best = Some((lam, p, deriv));
                }
            }
            let (mut lam, argmin, deriv) = best.unwrap();
            let mut se_deriv = deriv;
            if adversarial {
                let refined =
                    self.refine_min_eigenvalue(&bank, &q, probes.sample(argmin), lam)?;
                if refined.0 < lam {
                    lam = refined.0;
                    se_deriv = refined.1;
                }
            }
            // SE from the block spread of the minimizing probe.
            let mut block_lams = Vec::with_capacity(se_deriv.block_hessians.len());
            for bh in &se_deriv.block_hessians {
                block_lams.push(smallest_eigenvalue(&q.conjugate_dense(bh)?)?);
            }
            lambda_dot.push(lam);
            lambda_dot_se.push(mean_se(&block_lams).se);
        }

        let a0 = self.geom.site_volume() * self.mass.m();
        let curve = integrate_lambda(t_grid, &lambda_dot, Some(&lambda_dot_se), a0)?;
        Ok(BeProfile {
            t_grid: t_grid.to_vec(),
            lambda_dot,
            lambda_dot_se,
            lambda: curve.lambda,
            lambda_inf: curve.lambda_inf,
            tail_bound: curve.tail_bound,
            lipschitz_bound: (-curve.lambda_inf / 2.0).exp(),
            a0,
            refinement_warning: curve.refinement_warning,
            provenance: ProfileProvenance {
                probe_count: probes.count(),
                probe_tag: probes.describe(),
                adversarial,
                n_inner: self.n_inner,
                seed: self.seed,
            },
        })
    }

    /// Forward-difference descent on `φ ↦ λ_min(Q ∇²V̂(φ) Q)` from the worst
    /// probe, under common random numbers.
    fn refine_min_eigenvalue(
        &self,
        bank: &ZetaBank,
        q: &SpectralMultiplier,
        start: &[f64],
        start_val: f64,
    ) -> Result<(f64, VtDerivatives)> {
        let sites = self.geom.num_sites();
        let mut phi = start.to_vec();
        let mut val = start_val;
        let mut deriv = self.vt_derivatives_with_bank(bank, &phi)?;
        let fd = 1e-4;
        let mut step = 0.25;
        for _ in 0..6 {
            let mut grad = vec![0.0; sites];
            for x in 0..sites {
                let mut shifted = phi.clone();
                shifted[x] += fd;
                let d = self.vt_derivatives_with_bank(bank, &shifted)?;
                let lam = smallest_eigenvalue(&q.conjugate_dense(&d.hess)?)?;
                grad[x] = (lam - val) / fd;
            }
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-12 {
                break;
            }
            let mut trial = phi.clone();
            for (t, g) in trial.iter_mut().zip(&grad) {
                *t -= step * g / gnorm;
            }
            let d = self.vt_derivatives_with_bank(bank, &trial)?;
            let lam = smallest_eigenvalue(&q.conjugate_dense(&d.hess)?)?;
            if lam < val {
                val = lam;
                phi = trial;
                deriv = d;
            } else {
                step *= 0.5;
            }
        }
        Ok((val, deriv))
    }
}

fn shift_into(phi: &[f64], zeta: &[f64], out: &mut [f64]) {
    for ((o, &p), &z) in out.iter_mut().zip(phi).zip(zeta) {
        *o = p + z;
    }
}

/// Sequential tilted accumulation over the sample range `lo..hi`; the
/// transport integrator reuses this per trajectory. `row_of` maps the
/// logical sample index to a bank row.
pub(crate) fn accumulate_mapped_serial<F: Fn(usize) -> usize>(
    model: &dyn crate::potential::Potential,
    bank: &ZetaBank,
    phi: &[f64],
    layout: &DerivLayout,
    lo: usize,
    hi: usize,
    row_of: F,
) -> TiltedAccumulator {
    let sites = layout.sites;
    let mut acc = TiltedAccumulator::new(layout.len);
    let mut x = vec![0.0; sites];
    let mut payload = vec![0.0; layout.len];
    let mut grad = vec![0.0; sites];
    let mut hdiag = vec![0.0; sites];
    for i in lo..hi {
        shift_into(phi, bank.row(row_of(i)), &mut x);
        let v = model.value_and_gradient_into(&x, &mut grad);
        payload[..sites].copy_from_slice(&grad);
        if layout.with_hessian {
            if layout.local {
                model.hessian_diag_into(&x, &mut hdiag);
                payload[layout.hess..layout.hess + sites].copy_from_slice(&hdiag);
            } else {
                model.hessian_dense_into(&x, &mut payload[layout.hess..layout.hess + sites * sites]);
            }
            let gg = &mut payload[layout.outer..layout.outer + sites * sites];
            for a in 0..sites {
                let ga = grad[a];
                for b in 0..sites {
                    gg[a * sites + b] = ga * grad[b];
                }
            }
        }
        acc.push(-v, &payload);
    }
    acc
}

pub(crate) fn accumulate_range_serial(
    model: &dyn crate::potential::Potential,
    bank: &ZetaBank,
    phi: &[f64],
    layout: &DerivLayout,
    lo: usize,
    hi: usize,
) -> TiltedAccumulator {
    accumulate_mapped_serial(model, bank, phi, layout, lo, hi, |i| i)
}

#[derive(Clone, Copy)]
pub(crate) struct DerivLayout {
    sites: usize,
    local: bool,
    with_hessian: bool,
    hess: usize,
    outer: usize,
    pub(crate) len: usize,
}

impl DerivLayout {
    pub(crate) fn new(sites: usize, local: bool, with_hessian: bool) -> Self {
        let hess = sites;
        let hess_len = if with_hessian {
            if local {
                sites
            } else {
                sites * sites
            }
        } else {
            0
        };
        let outer = hess + hess_len;
        let outer_len = if with_hessian { sites * sites } else { 0 };
        Self {
            sites,
            local,
            with_hessian,
            hess,
            outer,
            len: outer + outer_len,
        }
    }

    /// `∇²V_t = ⟨∇²V_0⟩_w - ⟨ggᵀ⟩_w + ⟨g⟩_w⟨g⟩_wᵀ`, symmetrized.
    pub(crate) fn hessian_from(&self, acc: &TiltedAccumulator) -> DMatrix<f64> {
        assert!(self.with_hessian);
        let s = self.sites;
        let tilted = acc.tilted_slice();
        let grad = &tilted[..s];
        let mut h = DMatrix::zeros(s, s);
        if self.local {
            for i in 0..s {
                h[(i, i)] = tilted[self.hess + i];
            }
        } else {
            for j in 0..s {
                for i in 0..s {
                    // nalgebra dense storage is column-major.
                    h[(i, j)] = tilted[self.hess + j * s + i];
                }
            }
        }
        for a in 0..s {
            for b in 0..s {
                h[(a, b)] -= tilted[self.outer + a * s + b] - grad[a] * grad[b];
            }
        }
        for a in 0..s {
            for b in (a + 1)..s {
                let m = 0.5 * (h[(a, b)] + h[(b, a)]);
                h[(a, b)] = m;
                h[(b, a)] = m;
            }
        }
        h
    }
}

/// Gradient and Hessian estimates of `V_t` at one point.
pub struct VtDerivatives {
    pub grad: Vec<f64>,
    pub grad_se: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub hess_se: DMatrix<f64>,
    pub block_hessians: Vec<DMatrix<f64>>,
    pub ess: f64,
    pub n: usize,
    pub low_ess: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PdeParts {
    pub dvdt: f64,
    pub laplace_term: f64,
    pub gradient_term: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PdeResidual {
    pub residual: MCEstimate,
    pub parts: PdeParts,
    pub inconclusive: bool,
}

/// Empirical curvature profile with its integral and the derived transport
/// bound `e^{-λ_∞/2}`.
#[derive(Debug, Clone)]
pub struct BeProfile {
    pub t_grid: Vec<f64>,
    pub lambda_dot: Vec<f64>,
    pub lambda_dot_se: Vec<f64>,
    /// Cumulative `λ_t` on the grid, `λ_0 = 0`.
    pub lambda: Vec<f64>,
    pub lambda_inf: f64,
    pub tail_bound: f64,
    pub lipschitz_bound: f64,
    pub a0: f64,
    pub refinement_warning: bool,
    pub provenance: ProfileProvenance,
}

#[derive(Debug, Clone)]
pub struct ProfileProvenance {
    pub probe_count: usize,
    pub probe_tag: String,
    pub adversarial: bool,
    pub n_inner: usize,
    pub seed: u64,
}

impl BeProfile {
    /// `λ_t` at arbitrary `t`: linear interpolation on the grid, exponential
    /// tail extension beyond it.
    pub fn lambda_at(&self, t: f64) -> f64 {
        let grid = &self.t_grid;
        let last = *grid.last().unwrap();
        let n = self.lambda.len();
        if t >= last {
            let tail = self.lambda_inf - self.lambda[n - 1];
            return self.lambda[n - 1] + tail * (1.0 - (-(t - last) * self.a0).exp());
        }
        if t <= grid[0] {
            if grid[0] == 0.0 {
                return self.lambda[0];
            }
            return self.lambda[0] * t / grid[0];
        }
        let i = grid.partition_point(|&g| g < t).max(1);
        let (t0, t1) = (grid[i - 1], grid[i]);
        let w = (t - t0) / (t1 - t0);
        self.lambda[i - 1] * (1.0 - w) + self.lambda[i] * w
    }

    pub fn sup_abs_lambda(&self) -> f64 {
        self.lambda
            .iter()
            .chain(std::iter::once(&self.lambda_inf))
            .fold(0.0f64, |m, &l| m.max(l.abs()))
    }
}

/// Cumulative integral of a curvature rate with exponential tail
/// extrapolation at the `a(0)` decay rate.
#[derive(Debug, Clone)]
pub struct LambdaCurve {
    pub lambda: Vec<f64>,
    pub lambda_inf: f64,
    pub tail: f64,
    pub tail_bound: f64,
    pub refinement_warning: bool,
}

/// Trapezoid-integrate `λ̇` over the grid; the tail beyond `t_max` is
/// extrapolated as `λ̇(t_max) e^{-(t-t_max) a0}`. Warns when adjacent rate
/// values jump by more than 20% (above the noise floor when SEs are given).
pub fn integrate_lambda(
    t_grid: &[f64],
    lambda_dot: &[f64],
    lambda_dot_se: Option<&[f64]>,
    a0: f64,
) -> Result<LambdaCurve> {
    if t_grid.len() != lambda_dot.len() || t_grid.len() < 2 {
        return Err(FlowError::InvalidParameter(
            "time grid and rate values must match with at least 2 points".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FlowError::InvalidParameter(
            "time grid must be strictly increasing".into(),
        ));
    }
    let t_max = *t_grid.last().unwrap();
    if (-t_max * a0).exp() >= 1e-6 {
        return Err(FlowError::InvalidParameter(format!(
            "grid ends before the decay knee: exp(-t_max a0) = {:.3e} ≥ 1e-6",
            (-t_max * a0).exp()
        )));
    }

    let mut lambda = Vec::with_capacity(t_grid.len());
    // Head segment [0, t_0] integrated as a rectangle when the grid does not
    // start at zero.
    let mut acc = if t_grid[0] > 0.0 {
        lambda_dot[0] * t_grid[0]
    } else {
        0.0
    };
    lambda.push(acc);
    for i in 1..t_grid.len() {
        acc += 0.5 * (t_grid[i] - t_grid[i - 1]) * (lambda_dot[i] + lambda_dot[i - 1]);
        lambda.push(acc);
    }
    let tail = lambda_dot[lambda_dot.len() - 1] / a0;
    let lambda_inf = acc + tail;

    let scale = lambda_dot.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut warn = false;
    for i in 1..lambda_dot.len() {
        let (a, b) = (lambda_dot[i - 1], lambda_dot[i]);
        let mag = a.abs().max(b.abs());
        if mag <= 1e-6 * scale.max(f64::MIN_POSITIVE) {
            continue;
        }
        if let Some(se) = lambda_dot_se {
            let noise = 3.0 * (se[i - 1].max(se[i]));
            if (a - b).abs() <= noise {
                continue;
            }
        }
        if (a - b).abs() > 0.2 * mag {
            warn = true;
        }
    }
    Ok(LambdaCurve {
        lambda,
        lambda_inf,
        tail,
        tail_bound: tail.abs(),
        refinement_warning: warn,
    })
}

/// Default profile/flow time grid: `{0} ∪ geometric(t_min, t_max)` with
/// `t_max = 14/a0` capped at 1e4.
pub fn default_time_grid(a0: f64, n_points: usize) -> Vec<f64> {
    let n_points = n_points.max(4);
    let t_max = (14.0 / a0).min(1e4);
    let t_min: f64 = 1e-3;
    let m = n_points - 1;
    let ratio = (t_max / t_min).powf(1.0 / (m - 1) as f64);
    let mut grid = Vec::with_capacity(n_points);
    grid.push(0.0);
    let mut t = t_min;
    for _ in 0..m {
        grid.push(t.min(t_max));
        t *= ratio;
    }
    let last = grid.len() - 1;
    grid[last] = t_max;
    grid
}

/// Smallest eigenvalue of a dense symmetric matrix.
pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::EigensolveFailure(
            "matrix has non-finite entries".into(),
        ));
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues
        .iter()
        .copied()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .ok_or_else(|| FlowError::EigensolveFailure("empty matrix".into()))
}
