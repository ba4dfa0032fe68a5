//! Flow maps of the relaxation velocity field and the transport map they
//! induce.
//!
//! The velocity field is `∇u_t(φ) = -Q_{2t} ∇V_{2t}(Q_{2t} φ)` and the
//! forward maps solve `∂_t S_t(φ) = -∇u_t(S_t(φ))`, `S_0 = Id`. The
//! transport map `T_τ = S_τ^{-1}` is never inverted numerically: `T_τ(ψ)`
//! integrates the same ODE backward from the terminal value `ψ`, and every
//! evaluation is certified by the forward round trip `S_τ(T_τ(ψ)) ≈ ψ`.
//! `T_τ` pushes the free field forward to the interacting measure once `τ`
//! is past the decay knee of `Q`.
//!
//! Jacobians propagate along `∂_t[∇S_t w] = Q_{2t} ∇²V_{2t}(Q_{2t} S_t) Q_{2t}
//! [∇S_t w]` (the Hessian is evaluated at the flow position). The curvature
//! profile predicts `|∇S_t w| ≥ e^{λ_{2t}/2}`, hence the operative Lipschitz
//! bound `‖∇T_τ‖ ≤ e^{-λ_{2τ}/2}`; reports carry the opposite sign
//! convention `e^{+λ_{2τ}/2}` alongside.
//!
//! The Monte-Carlo velocity field uses one frozen noise bank per evaluation
//! time (a `sqrt(C_t)` coloring of time-independent unit normals), so the
//! integrated vector field is a fixed smooth function of `(t, φ)` for the
//! whole run and is identical across grid refinements.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ensemble::{FieldEnsemble, MeasureTag};
use crate::error::{FlowError, Result};
use crate::lattice::{mode_eigenvalues, Field};
use crate::renorm::{accumulate_mapped_serial, BeProfile, DerivLayout, RenormEstimator};
use crate::spectral::{gff_covariance, sample_gaussian, ScaleSchedule};
use crate::stats::TiltedAccumulator;

/// How trajectories draw their inner Monte-Carlo noise.
#[derive(Debug, Clone, Copy)]
pub enum NoiseMode {
    /// One frozen bank shared by every trajectory: the integrated field is a
    /// single fixed map, appropriate for Jacobian and Lipschitz work.
    Shared,
    /// Each trajectory subsamples its own rows (deterministic offset/stride)
    /// from an oversized shared bank, decorrelating the velocity-field error
    /// across trajectories; appropriate for pushforward ensembles where a
    /// shared error would bias every sample the same way.
    Decorrelated { bank_rows: usize },
}

/// Fixed-step classical Runge-Kutta integrator for the flow maps.
#[derive(Clone)]
pub struct FlowIntegrator {
    pub est: RenormEstimator,
    /// Ascending node times starting at 0 and ending at the horizon.
    pub t_nodes: Vec<f64>,
    /// Tolerance on the truncated velocity norm at the horizon.
    pub truncation_tol: f64,
    /// Expected integration accuracy; round trips are flagged beyond
    /// 10 times this.
    pub integrator_tol: f64,
    pub instability_factor: f64,
    pub noise: NoiseMode,
    eigenvalues: Vec<f64>,
}

/// One transported sample with its certificate.
#[derive(Debug, Clone)]
pub struct TransportResult {
    pub input: Field,
    pub output: Field,
    pub roundtrip_error: f64,
    pub flagged: bool,
}

/// Empirical Lipschitz data for `T_τ` against the profile bound.
#[derive(Debug, Clone)]
pub struct LipschitzReport {
    /// max over probes of `‖∇T_τ‖_op = 1/σ_min(∇S_τ)`.
    pub empirical_sup_grad: f64,
    pub per_probe: Vec<f64>,
    /// `e^{-λ_{2τ}/2}`: the bound produced by the Grönwall argument after
    /// inversion.
    pub bound_operative: f64,
    /// `e^{+λ_{2τ}/2}`: the flat-sign variant, recorded alongside.
    pub bound_paper: f64,
    pub lambda_2tau: f64,
    /// max over probe pairs of `|T(ψ_i) - T(ψ_j)|/|ψ_i - ψ_j|`.
    pub fd_ratio_max: f64,
    pub max_roundtrip_error: f64,
}

/// Outcome of pushing a free-field ensemble through `T_τ`.
pub struct PushforwardRun {
    pub ensemble: FieldEnsemble,
    pub excluded: usize,
    pub max_roundtrip_error: f64,
}

impl FlowIntegrator {
    pub fn new(est: RenormEstimator, t_nodes: Vec<f64>, truncation_tol: f64) -> Result<Self> {
        if !matches!(est.schedule, ScaleSchedule::HeatKernel) {
            return Err(FlowError::InvalidParameter(
                "transport flow requires the heat-kernel schedule".into(),
            ));
        }
        if t_nodes.len() < 2 || t_nodes[0] != 0.0 {
            return Err(FlowError::InvalidParameter(
                "flow grid must start at 0 with at least 2 nodes".into(),
            ));
        }
        if t_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FlowError::InvalidParameter(
                "flow grid must be strictly increasing".into(),
            ));
        }
        let eigenvalues = mode_eigenvalues(&est.geom, est.mass);
        Ok(Self {
            est,
            t_nodes,
            truncation_tol,
            integrator_tol: 1e-6,
            instability_factor: 10.0,
            noise: NoiseMode::Shared,
            eigenvalues,
        })
    }

    /// Switch to decorrelated per-trajectory noise with a bank of
    /// `16 × n_inner` rows (rounded to a power of two).
    pub fn with_decorrelated_noise(mut self) -> Self {
        let rows = (16 * self.est.n_inner)
            .next_power_of_two()
            .clamp(self.est.n_inner.next_power_of_two(), 1 << 17);
        self.noise = NoiseMode::Decorrelated { bank_rows: rows };
        self
    }

    /// Build the grid from the decay rate `a(0)`: the horizon satisfies
    /// `‖∇u_τ‖ ≤ e^{-τ a(0)} G ≤ truncation_tol` for the velocity scale `G`
    /// (the model's uniform gradient bound times √sites when available).
    pub fn auto(
        est: RenormEstimator,
        n_nodes: usize,
        truncation_tol: f64,
        velocity_scale: Option<f64>,
    ) -> Result<Self> {
        let a0 = est.geom.site_volume() * est.mass.m();
        let sites = est.geom.num_sites() as f64;
        let g = velocity_scale
            .or_else(|| est.model.gradient_sup().map(|b| b * sites.sqrt()))
            .unwrap_or(1.0)
            .max(truncation_tol * 10.0);
        let tau = ((g / truncation_tol).ln() / a0).clamp(1.0 / a0, 1e4);
        let nodes = flow_grid(tau, n_nodes);
        Self::new(est, nodes, truncation_tol)
    }

    pub fn tau_max(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }

    fn sites(&self) -> usize {
        self.est.geom.num_sites()
    }

    /// `e^{-t a(k)}` mode values of `Q_{2t}`.
    fn q2t_values(&self, t: f64) -> Vec<f64> {
        self.eigenvalues.iter().map(|a| (-t * a).exp()).collect()
    }

    fn apply_mode_values(&self, values: &[f64], phi: &[f64], out: &mut [f64]) {
        let geom = &self.est.geom;
        let mut freq = crate::fft::forward(geom, phi);
        for (c, &f) in freq.iter_mut().zip(values) {
            *c *= f;
        }
        let (vals, _residue) = crate::fft::inverse_to_real(geom, freq);
        out.copy_from_slice(&vals);
    }

    /// The flow right-hand side `-∇u_t` for a batch of states, and the frame
    /// right-hand side `Q ∇²V̂ Q · J` when frames are given.
    ///
    /// `states` is `n × sites`; `frames` is `n × sites × w` column-major per
    /// trajectory.
    fn rhs_batch(
        &self,
        t: f64,
        states: &[f64],
        frames: Option<(&[f64], usize)>,
        out_v: &mut [f64],
        mut out_f: Option<&mut [f64]>,
    ) -> Result<()> {
        let sites = self.sites();
        let n = states.len() / sites;
        let n_inner = self.est.n_inner;
        let bank = match self.noise {
            NoiseMode::Shared => self.est.zeta_bank_sized(2.0 * t, n_inner)?,
            NoiseMode::Decorrelated { bank_rows } => {
                self.est.zeta_bank_sized(2.0 * t, bank_rows.next_power_of_two())?
            }
        };
        let q = self.q2t_values(t);
        let layout = DerivLayout::new(sites, self.est.model.is_local(), frames.is_some());
        let model = self.est.model.as_ref();

        struct TrajOut {
            v: Vec<f64>,
            f: Option<Vec<f64>>,
        }

        let results: Vec<Result<TrajOut>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let x = &states[j * sites..(j + 1) * sites];
                let mut psi = vec![0.0; sites];
                self.apply_mode_values(&q, x, &mut psi);
                let acc: TiltedAccumulator = match self.noise {
                    NoiseMode::Shared => accumulate_mapped_serial(
                        model, &bank, &psi, &layout, 0, n_inner, |i| i,
                    ),
                    NoiseMode::Decorrelated { .. } => {
                        let mask = bank.len() - 1;
                        let mut h = (j as u64 ^ self.est.seed.rotate_left(29))
                            .wrapping_mul(0x9e3779b97f4a7c15);
                        h ^= h >> 30;
                        h = h.wrapping_mul(0xbf58476d1ce4e5b9);
                        h ^= h >> 27;
                        let offset = (h >> 32) as usize & mask;
                        // Odd stride on the power-of-two bank: i ↦ row is a
                        // bijection, so each trajectory sees distinct rows.
                        let stride = ((h as usize) & mask) | 1;
                        accumulate_mapped_serial(
                            model, &bank, &psi, &layout, 0, n_inner,
                            |i| offset.wrapping_add(i.wrapping_mul(stride)) & mask,
                        )
                    }
                };
                if !(acc.sum_weights() > 0.0) || !acc.sum_weights().is_finite() {
                    return Err(FlowError::DegenerateEstimate);
                }
                let tilted = acc.tilted_slice();
                // -∇u_t(x) = +Q_{2t} ⟨∇V_0⟩_w, applied spectrally.
                let mut v = vec![0.0; sites];
                self.apply_mode_values(&q, &tilted[..sites], &mut v);

                let f = if let Some((frames_flat, w)) = frames {
                    let h = layout.hessian_from(&acc);
                    // M = Q H Q via spectral conjugation.
                    let mut tmp = DMatrix::zeros(sites, sites);
                    let mut buf_in = vec![0.0; sites];
                    let mut buf_out = vec![0.0; sites];
                    for c in 0..sites {
                        for r in 0..sites {
                            buf_in[r] = h[(r, c)];
                        }
                        self.apply_mode_values(&q, &buf_in, &mut buf_out);
                        for r in 0..sites {
                            tmp[(r, c)] = buf_out[r];
                        }
                    }
                    let mut m = DMatrix::zeros(sites, sites);
                    for r in 0..sites {
                        for c in 0..sites {
                            buf_in[c] = tmp[(r, c)];
                        }
                        self.apply_mode_values(&q, &buf_in, &mut buf_out);
                        for c in 0..sites {
                            m[(r, c)] = buf_out[c];
                        }
                    }
                    let jf = &frames_flat[j * sites * w..(j + 1) * sites * w];
                    let jmat = DMatrix::from_column_slice(sites, w, jf);
                    let rhs = m * jmat;
                    Some(rhs.as_slice().to_vec())
                } else {
                    None
                };
                Ok(TrajOut { v, f })
            })
            .collect();

        for (j, r) in results.into_iter().enumerate() {
            let r = r?;
            out_v[j * sites..(j + 1) * sites].copy_from_slice(&r.v);
            if let (Some(of), Some(fv)) = (out_f.as_deref_mut(), r.f) {
                let w = frames.unwrap().1;
                of[j * sites * w..(j + 1) * sites * w].copy_from_slice(&fv);
            }
        }
        Ok(())
    }

    /// One classical Runge-Kutta step for the joint (state, frame) system.
    fn rk4_step(
        &self,
        t0: f64,
        t1: f64,
        states: &mut [f64],
        frames: Option<(&mut Vec<f64>, usize)>,
    ) -> Result<()> {
        let h = t1 - t0;
        let ns = states.len();
        let (frame_snapshot, w) = match &frames {
            Some((f, w)) => (Some((*f).clone()), *w),
            None => (None, 0),
        };
        let nf = frame_snapshot.as_ref().map_or(0, |f| f.len());

        let mut k_v = vec![vec![0.0; ns]; 4];
        let mut k_f = vec![vec![0.0; nf]; 4];
        let mut tmp_s = vec![0.0; ns];
        let mut tmp_f = vec![0.0; nf];

        let stage_times = [t0, t0 + 0.5 * h, t0 + 0.5 * h, t0 + h];
        let stage_coef = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            let (eval_s, eval_f): (&[f64], Option<&[f64]>) = if s == 0 {
                (states, frame_snapshot.as_deref())
            } else {
                for i in 0..ns {
                    tmp_s[i] = states[i] + h * stage_coef[s] * k_v[s - 1][i];
                }
                if let Some(f0) = &frame_snapshot {
                    for i in 0..nf {
                        tmp_f[i] = f0[i] + h * stage_coef[s] * k_f[s - 1][i];
                    }
                }
                (&tmp_s, frame_snapshot.as_ref().map(|_| tmp_f.as_slice()))
            };
            let frames_arg = eval_f.map(|f| (f, w));
            let (kv, kf) = {
                let (a, b) = (&mut k_v[s], &mut k_f[s]);
                (a, b)
            };
            self.rhs_batch(
                stage_times[s],
                eval_s,
                frames_arg,
                kv,
                frame_snapshot.as_ref().map(|_| kf.as_mut_slice()),
            )?;
        }

        let sites = self.sites();
        let n = ns / sites;
        // The blow-up guard compares against max(‖state‖, √sites): states
        // near zero still receive O(noise) increments legitimately.
        let floor = (sites as f64).sqrt();
        for j in 0..n {
            let mut inc_sq = 0.0;
            let mut state_sq = 0.0;
            for i in j * sites..(j + 1) * sites {
                let inc =
                    h / 6.0 * (k_v[0][i] + 2.0 * k_v[1][i] + 2.0 * k_v[2][i] + k_v[3][i]);
                inc_sq += inc * inc;
                state_sq += states[i] * states[i];
                states[i] += inc;
            }
            let limit = self.instability_factor * state_sq.sqrt().max(floor);
            if inc_sq.sqrt() > limit {
                return Err(FlowError::StepRejected {
                    t: t0,
                    increment: inc_sq.sqrt(),
                    limit,
                });
            }
        }
        if let Some((f, _)) = frames {
            for i in 0..nf {
                f[i] += h / 6.0 * (k_f[0][i] + 2.0 * k_f[1][i] + 2.0 * k_f[2][i] + k_f[3][i]);
            }
        }
        Ok(())
    }

    /// Effective node list `{0, ..., t_end}` (truncating and completing the
    /// stored grid).
    fn nodes_until(&self, t_end: f64) -> Result<Vec<f64>> {
        let tau = self.tau_max();
        if !(t_end >= 0.0) || t_end > tau * (1.0 + 1e-12) {
            return Err(FlowError::TimeOutOfRange { t: t_end, tau });
        }
        let mut nodes: Vec<f64> = self
            .t_nodes
            .iter()
            .copied()
            .take_while(|&t| t < t_end * (1.0 - 1e-12))
            .collect();
        nodes.push(t_end);
        Ok(nodes)
    }

    /// The velocity field `∇u_t(φ) = -Q_{2t} ∇V_{2t}(Q_{2t} φ)`.
    pub fn velocity_field(&self, t: f64, phi: &Field) -> Result<Field> {
        let mut rhs = vec![0.0; self.sites()];
        self.rhs_batch(t, phi.values(), None, &mut rhs, None)?;
        // rhs is the flow velocity -∇u.
        for v in rhs.iter_mut() {
            *v = -*v;
        }
        Field::new(self.est.geom, rhs)
    }

    /// Integrate `S_{t_end}(φ0)` forward from the identity.
    pub fn flow_forward(&self, phi0: &Field, t_end: f64) -> Result<Field> {
        let nodes = self.nodes_until(t_end)?;
        let mut states = phi0.values().to_vec();
        for w in nodes.windows(2) {
            self.rk4_step(w[0], w[1], &mut states, None)?;
        }
        Field::new(self.est.geom, states)
    }

    /// Evaluate `T_τ(ψ)` by backward integration, with the forward round
    /// trip as a certificate.
    pub fn transport_evaluate(&self, psi: &Field, tau: f64) -> Result<TransportResult> {
        Ok(self
            .transport_batch(std::slice::from_ref(psi), tau)?
            .pop()
            .unwrap())
    }

    /// Batched `T_τ` evaluation; all trajectories share each stage's frozen
    /// noise bank.
    pub fn transport_batch(&self, psis: &[Field], tau: f64) -> Result<Vec<TransportResult>> {
        Ok(self.transport_batch_impl(psis, tau, None)?.0)
    }

    /// As [`transport_batch`], also recording backward-trajectory states at
    /// every `snapshot_stride`-th node for probe ensembles.
    pub fn transport_batch_with_snapshots(
        &self,
        psis: &[Field],
        tau: f64,
        snapshot_stride: usize,
    ) -> Result<(Vec<TransportResult>, Vec<Field>)> {
        self.transport_batch_impl(psis, tau, Some(snapshot_stride.max(1)))
    }

    fn transport_batch_impl(
        &self,
        psis: &[Field],
        tau: f64,
        snapshot_stride: Option<usize>,
    ) -> Result<(Vec<TransportResult>, Vec<Field>)> {
        let sites = self.sites();
        let nodes = self.nodes_until(tau)?;
        let n = psis.len();
        let mut states = Vec::with_capacity(n * sites);
        for p in psis {
            if p.geometry() != self.est.geom {
                return Err(FlowError::GeometryMismatch {
                    found: p.geometry().num_sites(),
                    expected: sites,
                });
            }
            states.extend_from_slice(p.values());
        }

        let mut snapshots = Vec::new();
        // Backward sweep: X(τ) = ψ down to X(0) = T_τ(ψ).
        for (step, w) in nodes.windows(2).rev().enumerate() {
            self.rk4_step(w[1], w[0], &mut states, None)?;
            if let Some(stride) = snapshot_stride {
                if step % stride == 0 {
                    for j in 0..n {
                        snapshots.push(Field::new(
                            self.est.geom,
                            states[j * sites..(j + 1) * sites].to_vec(),
                        )?);
                    }
                }
            }
        }
        let outputs = states.clone();

        // Forward round trip certifies each sample.
        for w in nodes.windows(2) {
            self.rk4_step(w[0], w[1], &mut states, None)?;
        }
        let mut results = Vec::with_capacity(n);
        for (j, psi) in psis.iter().enumerate() {
            let mut err_sq = 0.0;
            for (i, &target) in psi.values().iter().enumerate() {
                let d = states[j * sites + i] - target;
                err_sq += d * d;
            }
            let roundtrip_error = err_sq.sqrt();
            results.push(TransportResult {
                input: psi.clone(),
                output: Field::new(self.est.geom, outputs[j * sites..(j + 1) * sites].to_vec())?,
                roundtrip_error,
                flagged: roundtrip_error > 10.0 * self.integrator_tol,
            });
        }
        Ok((results, snapshots))
    }

    /// Propagate direction frames along the forward flow:
    /// returns `(S_{t_end}(φ0), ∇S_{t_end}(φ0) · frame)`.
    pub fn jacobian_propagate(
        &self,
        phi0: &Field,
        frame: &DMatrix<f64>,
        t_end: f64,
    ) -> Result<(Field, DMatrix<f64>)> {
        Ok(self
            .jacobian_propagate_batch(std::slice::from_ref(phi0), frame, t_end)?
            .pop()
            .unwrap())
    }

    /// Batched frame propagation: every trajectory starts from the same
    /// `frame` and all of them share each stage's noise bank.
    pub fn jacobian_propagate_batch(
        &self,
        phi0s: &[Field],
        frame: &DMatrix<f64>,
        t_end: f64,
    ) -> Result<Vec<(Field, DMatrix<f64>)>> {
        let sites = self.sites();
        assert_eq!(frame.nrows(), sites);
        let w = frame.ncols();
        let nodes = self.nodes_until(t_end)?;
        let n = phi0s.len();
        let mut states = Vec::with_capacity(n * sites);
        let mut frames: Vec<f64> = Vec::with_capacity(n * sites * w);
        for p in phi0s {
            states.extend_from_slice(p.values());
            frames.extend_from_slice(frame.as_slice());
        }
        for win in nodes.windows(2) {
            self.rk4_step(win[0], win[1], &mut states, Some((&mut frames, w)))?;
        }
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            out.push((
                Field::new(self.est.geom, states[j * sites..(j + 1) * sites].to_vec())?,
                DMatrix::from_column_slice(
                    sites,
                    w,
                    &frames[j * sites * w..(j + 1) * sites * w],
                ),
            ));
        }
        Ok(out)
    }

    /// Empirical Lipschitz constant of `T_τ` over a probe ensemble drawn
    /// from the free field, compared with the profile bounds.
    pub fn lipschitz_report(
        &self,
        probes: &FieldEnsemble,
        tau: f64,
        profile: &BeProfile,
    ) -> Result<LipschitzReport> {
        if probes.count() == 0 {
            return Err(FlowError::EmptyEnsemble);
        }
        let sites = self.sites();
        let psis: Vec<Field> = (0..probes.count()).map(|i| probes.field(i)).collect();
        let transported = self.transport_batch(&psis, tau)?;
        let max_roundtrip_error = transported
            .iter()
            .map(|r| r.roundtrip_error)
            .fold(0.0f64, f64::max);

        // ∇T_τ(ψ) is the inverse of ∇S_τ at φ = T_τ(ψ): propagate a full
        // frame forward from each transported point.
        let id = DMatrix::<f64>::identity(sites, sites);
        let origins: Vec<Field> = transported.iter().map(|r| r.output.clone()).collect();
        let propagated = self.jacobian_propagate_batch(&origins, &id, tau)?;
        let per_probe: Vec<f64> = propagated
            .iter()
            .map(|(_, ds)| {
                let svd = ds.clone().svd(false, false);
                let sigma_min = svd
                    .singular_values
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                if !(sigma_min > 0.0) {
                    return Err(FlowError::EigensolveFailure(
                        "flow Jacobian is singular".into(),
                    ));
                }
                Ok(1.0 / sigma_min)
            })
            .collect::<Result<_>>()?;
        let empirical_sup_grad = per_probe.iter().copied().fold(0.0f64, f64::max);

        let mut fd_ratio_max = 0.0f64;
        for i in 0..transported.len() {
            for j in (i + 1)..transported.len() {
                let din: f64 = psis[i]
                    .values()
                    .iter()
                    .zip(psis[j].values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if din < 1e-12 {
                    continue;
                }
                let dout: f64 = transported[i]
                    .output
                    .values()
                    .iter()
                    .zip(transported[j].output.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                fd_ratio_max = fd_ratio_max.max(dout / din);
            }
        }

        let lambda_2tau = profile.lambda_at(2.0 * tau);
        Ok(LipschitzReport {
            empirical_sup_grad,
            per_probe,
            bound_operative: (-lambda_2tau / 2.0).exp(),
            bound_paper: (lambda_2tau / 2.0).exp(),
            lambda_2tau,
            fd_ratio_max,
            max_roundtrip_error,
        })
    }

    /// Push `n` exact free-field samples through `T_τ`. Samples whose round
    /// trip fails the certificate are excluded and counted. Uses
    /// decorrelated per-trajectory noise so the velocity-field Monte-Carlo
    /// error does not distort every sample the same way.
    pub fn pushforward_ensemble(&self, n: usize, seed: u64, tau: f64) -> Result<PushforwardRun> {
        let cov = gff_covariance(self.est.geom, self.est.mass);
        let psis: Vec<Field> = (0..n)
            .map(|i| sample_gaussian(&cov, seed, i as u64))
            .collect::<Result<_>>()?;
        let integ = match self.noise {
            NoiseMode::Shared => self.clone().with_decorrelated_noise(),
            NoiseMode::Decorrelated { .. } => self.clone(),
        };
        let results = integ.transport_batch(&psis, tau)?;
        let mut ensemble = FieldEnsemble::new(
            self.est.geom,
            MeasureTag::TransportNu,
            seed,
            format!("transport pushforward of {} free-field samples", n),
        );
        ensemble.creation = serde_json::json!({
            "tau": tau,
            "n_inner": self.est.n_inner,
            "truncation_tol": self.truncation_tol,
            "integrator_tol": self.integrator_tol,
            "nodes": self.t_nodes.len(),
        });
        let mut excluded = 0;
        let mut max_rt = 0.0f64;
        for r in &results {
            max_rt = max_rt.max(r.roundtrip_error);
            if r.flagged {
                excluded += 1;
            } else {
                ensemble.push(&r.output);
            }
        }
        Ok(PushforwardRun {
            ensemble,
            excluded,
            max_roundtrip_error: max_rt,
        })
    }
}

/// `{0} ∪ geometric(1e-3, tau)` flow grid with `n_points` nodes.
pub fn flow_grid(tau: f64, n_points: usize) -> Vec<f64> {
    let n_points = n_points.max(4);
    let t_min = 1e-3_f64.min(tau / 2.0);
    let m = n_points - 1;
    let ratio = (tau / t_min).powf(1.0 / (m - 1) as f64);
    let mut grid = Vec::with_capacity(n_points);
    grid.push(0.0);
    let mut t = t_min;
    for _ in 0..m {
        grid.push(t.min(tau));
        t *= ratio;
    }
    let last = grid.len() - 1;
    grid[last] = tau;
    grid
}

/// Insert midpoints into a flow grid (halves every step).
pub fn refine_grid(nodes: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(nodes.len() * 2 - 1);
    for w in nodes.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*nodes.last().unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_geometry, MassParams};
    use crate::oracle;
    use crate::potential::{quadratic_model, sine_gordon_model, SineGordonParams, ZeroPotential};
    use crate::spectral::SpectralMultiplier;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn one_site_quadratic(n_inner: usize, seed: u64) -> FlowIntegrator {
        let g = build_geometry(1, 1.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let model = Arc::new(quadratic_model(g, m, b).unwrap());
        let est = RenormEstimator::new(model, m, ScaleSchedule::HeatKernel, n_inner, seed)
            .unwrap();
        FlowIntegrator::auto(est, 96, 1e-8, Some(4.0)).unwrap()
    }

    #[test]
    fn zero_potential_flow_is_identity() {
        let g = build_geometry(2, 2.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let est = RenormEstimator::new(
            Arc::new(ZeroPotential::new(g)),
            m,
            ScaleSchedule::HeatKernel,
            16,
            3,
        )
        .unwrap();
        let integ = FlowIntegrator::auto(est, 48, 1e-8, None).unwrap();
        let phi = Field::new(g, vec![0.7, -0.2, 1.5, 0.0]).unwrap();
        let tau = integ.tau_max();

        let v = integ.velocity_field(1.0, &phi).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));

        let s = integ.flow_forward(&phi, tau).unwrap();
        for (a, b) in s.values().iter().zip(phi.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }

        let t = integ.transport_evaluate(&phi, tau).unwrap();
        for (a, b) in t.output.values().iter().zip(phi.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(t.roundtrip_error <= 1e-10);
        assert!(!t.flagged);

        let id = DMatrix::<f64>::identity(4, 4);
        let (_, frame) = integ.jacobian_propagate(&phi, &id, tau).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(frame[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sine_gordon_zero_coupling_is_identity() {
        let g = build_geometry(2, 2.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let model = Arc::new(
            sine_gordon_model(g, SineGordonParams::new(0.0, 4.0).unwrap()).unwrap(),
        );
        let est =
            RenormEstimator::new(model, m, ScaleSchedule::HeatKernel, 64, 5).unwrap();
        let integ = FlowIntegrator::auto(est, 48, 1e-8, None).unwrap();
        let phi = Field::new(g, vec![0.3, 0.1, -0.8, 0.5]).unwrap();
        let t = integ.transport_evaluate(&phi, integ.tau_max()).unwrap();
        for (a, b) in t.output.values().iter().zip(phi.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn quadratic_velocity_matches_closed_form() {
        let integ = one_site_quadratic(150_000, 7);
        let g = integ.est.geom;
        let phi = Field::new(g, vec![0.9]).unwrap();
        for t in [0.2, 1.0, 3.0] {
            let v = integ.velocity_field(t, &phi).unwrap();
            let truth = oracle::velocity(1.0, 1.0, t, 0.9);
            // MC error of the tilted mean at n = 150k.
            assert!(
                (v.values()[0] - truth).abs() <= 3e-3 * truth.abs().max(0.1),
                "t = {t}: {} vs {truth}",
                v.values()[0]
            );
        }
    }

    /// Scalar linear-flow oracle: S_t = sqrt(1 + b C_{2t}) φ0 for a = b = 1,
    /// and the transport map contracts by 1/√2. Two error routes are checked
    /// separately: the integrator against a high-accuracy integration of the
    /// same frozen field (1e-4), and the whole estimate against the closed
    /// form at the Monte-Carlo tolerance ~ 3·0.7/√n_inner.
    #[test]
    fn quadratic_flow_and_transport_match_oracle() {
        let n_inner = 20_000;
        let mc_tol = 3.0 * 0.7 / (n_inner as f64).sqrt();
        let integ = one_site_quadratic(n_inner, 11);
        let g = integ.est.geom;
        let phi = Field::new(g, vec![1.0]).unwrap();

        let s5 = integ.flow_forward(&phi, 5.0).unwrap();
        let truth = oracle::flow_jacobian(1.0, 1.0, 5.0);
        assert!(
            (s5.values()[0] - truth).abs() <= mc_tol * truth,
            "{} vs {truth}",
            s5.values()[0]
        );
        // High-accuracy route: the same frozen field on a 4x finer grid.
        let fine = FlowIntegrator::new(
            integ.est.clone(),
            refine_grid(&refine_grid(&integ.t_nodes)),
            1e-8,
        )
        .unwrap();
        let s5_fine = fine.flow_forward(&phi, 5.0).unwrap();
        assert!(
            (s5.values()[0] - s5_fine.values()[0]).abs() <= 1e-4 * truth,
            "integrator error {} vs fine {}",
            s5.values()[0],
            s5_fine.values()[0]
        );

        let tau = integ.tau_max();
        let psi = Field::new(g, vec![1.3]).unwrap();
        let t = integ.transport_evaluate(&psi, tau).unwrap();
        let expect = 1.3 * oracle::transport_contraction(1.0, 1.0);
        assert!(
            (t.output.values()[0] - expect).abs() <= mc_tol * expect.abs(),
            "{} vs {expect}",
            t.output.values()[0]
        );
        assert!(t.roundtrip_error <= 10.0 * integ.integrator_tol);

        let id = DMatrix::<f64>::identity(1, 1);
        let (_, frame) = integ.jacobian_propagate(&phi, &id, tau).unwrap();
        assert!(
            (frame[(0, 0)] - std::f64::consts::SQRT_2).abs() <= mc_tol,
            "∇S_τ = {}",
            frame[(0, 0)]
        );
    }

    /// Fourth-order convergence: halving the grid spacing shrinks the
    /// transport error by at least a factor 8 (nominal 16).
    #[test]
    fn grid_refinement_is_fourth_order() {
        let g = build_geometry(1, 1.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let model = Arc::new(quadratic_model(g, m, b).unwrap());
        let est = RenormEstimator::new(model, m, ScaleSchedule::HeatKernel, 4000, 13)
            .unwrap();
        // Deliberately coarse uniform grid so the RK4 error dominates the
        // (frozen, grid-independent) MC bias.
        let tau = 6.0;
        let coarse: Vec<f64> = (0..=12).map(|i| tau * i as f64 / 12.0).collect();
        let fine = refine_grid(&coarse);
        let finest = refine_grid(&fine);

        let psi = Field::new(g, vec![1.0]).unwrap();
        let run = |nodes: Vec<f64>| {
            let integ =
                FlowIntegrator::new(est.clone(), nodes, 1e-8).unwrap();
            integ.transport_evaluate(&psi, tau).unwrap().output.values()[0]
        };
        let x_c = run(coarse);
        let x_f = run(fine);
        let x_ff = run(finest);
        let err_c = (x_c - x_ff).abs();
        let err_f = (x_f - x_ff).abs();
        assert!(
            err_c >= 8.0 * err_f,
            "refinement ratio {} (coarse {err_c:.3e}, fine {err_f:.3e})",
            err_c / err_f.max(1e-300)
        );
    }

    #[test]
    fn quadratic_pushforward_variance() {
        let g = build_geometry(1, 1.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let model = Arc::new(quadratic_model(g, m, b).unwrap());
        let est = RenormEstimator::new(model, m, ScaleSchedule::HeatKernel, 256, 17)
            .unwrap();
        let integ = FlowIntegrator::auto(est, 32, 1e-8, Some(4.0)).unwrap();
        let run = integ
            .pushforward_ensemble(2000, 99, integ.tau_max())
            .unwrap();
        assert_eq!(run.excluded, 0);
        let est = run.ensemble.observable(|f| f[0] * f[0]);
        // ν = N(0, 1/(a+b)) = N(0, 1/2).
        assert!(
            (est.mean - 0.5).abs() <= 3.0 * est.se,
            "variance {} ± {}",
            est.mean,
            est.se
        );
    }

    #[test]
    fn instability_guard_fires() {
        let g = build_geometry(1, 1.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let model = Arc::new(quadratic_model(g, m, b).unwrap());
        let est =
            RenormEstimator::new(model, m, ScaleSchedule::HeatKernel, 100, 19).unwrap();
        // One giant step over a stiff interval forces a huge increment.
        let integ = FlowIntegrator::new(est, vec![0.0, 4000.0], 1e-8).unwrap();
        let psi = Field::new(g, vec![1.0]).unwrap();
        let r = integ.transport_evaluate(&psi, 4000.0);
        assert!(matches!(r, Err(FlowError::StepRejected { .. })));
    }
}
