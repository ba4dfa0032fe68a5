//! Finite-horizon renormalization SDE
//! `dΦ̃_t = -Ċ_{τ-t} ∇V_{τ-t}(Φ̃_t) dt + Ċ_{τ-t}^{1/2} dB_t`, started at
//! `Φ̃_0 = 0`, whose terminal law is the interacting measure when the
//! schedule is complete (`C_τ = A^{-1}`). The time-reversed clock
//! `Φ_t := Φ̃_{τ-t}` interpolates a point mass to the interacting field
//! through the renormalization scales; `P_{s,t}F(φ) = E[F(Φ_s)|Φ_t = φ]` is
//! estimated by forward simulation of `Φ̃`.
//!
//! The Euler scheme treats the drift explicitly but draws each step's noise
//! with its exact integrated covariance `C_{τ-t_k} - C_{τ-t_{k+1}}`, so the
//! `V ≡ 0` martingale case is exact for any step count and the weak error
//! is pure drift discretization (order one).

use rayon::prelude::*;

use crate::ensemble::{FieldEnsemble, MeasureTag};
use crate::error::{FlowError, Result};
use crate::inequality::TestFunction;
use crate::lattice::{mode_eigenvalues, Field, LatticeGeometry, MassParams};
use crate::renorm::{accumulate_mapped_serial, DerivLayout, RenormEstimator};
use crate::rng;
use crate::spectral::{sample_colored_into, ScaleSchedule};
use crate::stats::{mean_se, MCEstimate};

/// Drift source for the bridge: closed forms for the oracle models, the
/// tilted Monte-Carlo gradient otherwise.
#[derive(Clone)]
pub enum BridgeDrift {
    /// `V ≡ 0`: driftless martingale.
    Zero,
    /// Gaussian perturbation `V_0 = ½(φ, Bφ)`: `∇V_s = B(1 + C_s B)^{-1}φ`
    /// per mode.
    QuadraticClosedForm { b: crate::spectral::SpectralMultiplier },
    /// Tilted-average gradient from the renormalization estimator (frozen
    /// inner streams per time node).
    MonteCarlo { est: RenormEstimator },
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Pair paths antithetically (`ξ, -ξ`): odd moments of linear-drift
    /// models become exact.
    pub antithetic: bool,
    /// Bridge times (in `[0, τ]`) at which to store path checkpoints.
    pub checkpoint_times: Vec<f64>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            n_steps: 128,
            n_paths: 4096,
            seed: 0,
            antithetic: false,
            checkpoint_times: Vec::new(),
        }
    }
}

pub struct BridgeRun {
    pub terminal: FieldEnsemble,
    pub checkpoints: Vec<(f64, FieldEnsemble)>,
    pub n_steps: usize,
    pub seed: u64,
}

const PURPOSE_NOISE: &str = "bridge-noise";
const INSTABILITY_FACTOR: f64 = 10.0;

struct Engine<'a> {
    drift: &'a BridgeDrift,
    schedule: &'a ScaleSchedule,
    geom: LatticeGeometry,
    eigenvalues: Vec<f64>,
    tau: f64,
}

impl<'a> Engine<'a> {
    fn new(
        drift: &'a BridgeDrift,
        schedule: &'a ScaleSchedule,
        geom: LatticeGeometry,
        mass: MassParams,
    ) -> Result<Self> {
        let tau = schedule.horizon();
        if !tau.is_finite() {
            return Err(FlowError::InvalidParameter(
                "bridge simulation needs a finite-horizon schedule".into(),
            ));
        }
        Ok(Self {
            drift,
            schedule,
            geom,
            eigenvalues: mode_eigenvalues(&geom, mass),
            tau,
        })
    }

    fn apply_modes(&self, values: &[f64], phi: &[f64], out: &mut [f64]) {
        let mut freq = crate::fft::forward(&self.geom, phi);
        for (c, &f) in freq.iter_mut().zip(values) {
            *c *= f;
        }
        let (vals, _) = crate::fft::inverse_to_real(&self.geom, freq);
        out.copy_from_slice(&vals);
    }

    /// Advance all paths from bridge time `r0` to `r1` in `n_steps` Euler
    /// steps. `noise_salt` separates the noise streams of independent runs.
    fn evolve(
        &self,
        states: &mut [f64],
        r0: f64,
        r1: f64,
        n_steps: usize,
        seed: u64,
        noise_salt: u64,
        antithetic: bool,
        mut on_step_end: impl FnMut(f64, &[f64]),
    ) -> Result<()> {
        let sites = self.geom.num_sites();
        let dt = (r1 - r0) / n_steps as f64;
        let purpose = rng::purpose_tag(PURPOSE_NOISE) ^ noise_salt;
        let floor = (sites as f64).sqrt();

        for k in 0..n_steps {
            let t_k = r0 + k as f64 * dt;
            let t_k1 = r0 + (k + 1) as f64 * dt;
            let s = self.tau - t_k;
            // Exact integrated noise covariance over the step.
            let noise_scale: Vec<f64> = self
                .eigenvalues
                .iter()
                .map(|&a| {
                    (self.schedule.c_of(self.tau - t_k, a)
                        - self.schedule.c_of(self.tau - t_k1, a))
                    .max(0.0)
                    .sqrt()
                })
                .collect();

            // Drift multiplier or Monte-Carlo bank for this node.
            enum StepDrift<'b> {
                None,
                Modes(Vec<f64>),
                Mc(crate::renorm::ZetaBank, &'b RenormEstimator),
            }
            let step_drift = match self.drift {
                BridgeDrift::Zero => StepDrift::None,
                BridgeDrift::QuadraticClosedForm { b } => {
                    let vals: Vec<f64> = self
                        .eigenvalues
                        .iter()
                        .zip(b.values())
                        .map(|(&a, &bv)| {
                            let c = self.schedule.c_of(s, a);
                            self.schedule.cdot_of(s, a) * bv / (1.0 + bv * c)
                        })
                        .collect();
                    StepDrift::Modes(vals)
                }
                BridgeDrift::MonteCarlo { est } => StepDrift::Mc(est.zeta_bank(s)?, est),
            };
            let cdot_vals: Vec<f64> = self
                .eigenvalues
                .iter()
                .map(|&a| self.schedule.cdot_of(s, a))
                .collect();

            let results: Vec<Result<Vec<f64>>> = states
                .par_chunks(sites)
                .enumerate()
                .map(|(j, x)| {
                    let mut new_state = x.to_vec();
                    // Drift term -Ċ_s ∇V_s(Φ) dt.
                    let mut drift_inc = vec![0.0; sites];
                    match &step_drift {
                        StepDrift::None => {}
                        StepDrift::Modes(vals) => {
                            self.apply_modes(vals, x, &mut drift_inc);
                        }
                        StepDrift::Mc(bank, est) => {
                            let layout = DerivLayout::new(sites, est.model.is_local(), false);
                            let acc = accumulate_mapped_serial(
                                est.model.as_ref(),
                                bank,
                                x,
                                &layout,
                                0,
                                bank.len(),
                                |i| i,
                            );
                            if !(acc.sum_weights() > 0.0) {
                                return Err(FlowError::DegenerateEstimate);
                            }
                            let tilted = acc.tilted_slice();
                            self.apply_modes(&cdot_vals, &tilted[..sites], &mut drift_inc);
                        }
                    }
                    let mut inc_sq = 0.0;
                    let mut state_sq = 0.0;
                    for i in 0..sites {
                        let inc = -drift_inc[i] * dt;
                        inc_sq += inc * inc;
                        state_sq += x[i] * x[i];
                        new_state[i] += inc;
                    }
                    let limit = INSTABILITY_FACTOR * state_sq.sqrt().max(floor);
                    if inc_sq.sqrt() > limit {
                        return Err(FlowError::StepRejected {
                            t: t_k,
                            increment: inc_sq.sqrt(),
                            limit,
                        });
                    }
                    // Exact Gaussian increment; antithetic pairs share the
                    // stream of their even member.
                    let (stream_path, flip) = if antithetic {
                        (j / 2, j % 2 == 1)
                    } else {
                        (j, false)
                    };
                    let mut r = rng::stream(
                        seed,
                        purpose,
                        (stream_path * (n_steps + 1) + k) as u64,
                    );
                    let mut modes = vec![num_complex::Complex64::default(); sites];
                    let mut noise = vec![0.0; sites];
                    sample_colored_into(&self.geom, &noise_scale, &mut r, &mut modes, &mut noise);
                    let sign = if flip { -1.0 } else { 1.0 };
                    for i in 0..sites {
                        new_state[i] += sign * noise[i];
                    }
                    Ok(new_state)
                })
                .collect();
            for (j, r) in results.into_iter().enumerate() {
                let v = r?;
                states[j * sites..(j + 1) * sites].copy_from_slice(&v);
            }
            on_step_end(t_k1, states);
        }
        Ok(())
    }
}

/// Simulate the bridge from `Φ̃_0 = 0` to the horizon; the terminal
/// ensemble approximates the interacting measure.
pub fn simulate_bridge(
    drift: &BridgeDrift,
    schedule: &ScaleSchedule,
    geom: LatticeGeometry,
    mass: MassParams,
    cfg: &BridgeConfig,
) -> Result<BridgeRun> {
    if cfg.n_steps < 10 {
        return Err(FlowError::InvalidParameter(format!(
            "bridge needs at least 10 steps (got {})",
            cfg.n_steps
        )));
    }
    let engine = Engine::new(drift, schedule, geom, mass)?;
    let sites = geom.num_sites();
    let mut states = vec![0.0; cfg.n_paths * sites];
    let mut checkpoints: Vec<(f64, FieldEnsemble)> = Vec::new();
    let mut pending: Vec<f64> = cfg.checkpoint_times.clone();
    pending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dt = engine.tau / cfg.n_steps as f64;

    engine.evolve(
        &mut states,
        0.0,
        engine.tau,
        cfg.n_steps,
        cfg.seed,
        0,
        cfg.antithetic,
        |t, snapshot| {
            while let Some(&next) = pending.first() {
                if next <= t + 0.5 * dt {
                    let mut e = FieldEnsemble::new(
                        geom,
                        MeasureTag::BridgeNu,
                        cfg.seed,
                        format!("bridge checkpoint at t = {next}"),
                    );
                    for chunk in snapshot.chunks_exact(sites) {
                        e.push_values(chunk);
                    }
                    checkpoints.push((t, e));
                    pending.remove(0);
                } else {
                    break;
                }
            }
        },
    )?;

    let mut terminal = FieldEnsemble::new(
        geom,
        MeasureTag::BridgeNu,
        cfg.seed,
        "bridge terminal ensemble",
    );
    for chunk in states.chunks_exact(sites) {
        terminal.push_values(chunk);
    }
    terminal.creation = serde_json::json!({
        "n_steps": cfg.n_steps,
        "n_paths": cfg.n_paths,
        "tau": engine.tau,
        "antithetic": cfg.antithetic,
    });
    Ok(BridgeRun {
        terminal,
        checkpoints,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
    })
}

/// Monte-Carlo estimate of the interpolation semigroup
/// `P_{s,t}F(φ) = E[F(Φ_s) | Φ_t = φ]` for `0 ≤ s ≤ t ≤ τ`, by forward
/// simulation of `Φ̃` from bridge time `τ-t` (state `φ`) to `τ-s`.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_estimate(
    drift: &BridgeDrift,
    schedule: &ScaleSchedule,
    geom: LatticeGeometry,
    mass: MassParams,
    s: f64,
    t: f64,
    f: &TestFunction,
    phi: &Field,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<MCEstimate> {
    semigroup_estimate_impl(
        drift, schedule, geom, mass, s, t, f, phi, n_paths, n_steps, seed, false,
    )
}

/// [`semigroup_estimate`] with antithetic path pairing (exact odd moments
/// for linear drifts; used to isolate the drift discretization error).
#[allow(clippy::too_many_arguments)]
pub fn semigroup_estimate_antithetic(
    drift: &BridgeDrift,
    schedule: &ScaleSchedule,
    geom: LatticeGeometry,
    mass: MassParams,
    s: f64,
    t: f64,
    f: &TestFunction,
    phi: &Field,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<MCEstimate> {
    semigroup_estimate_impl(
        drift, schedule, geom, mass, s, t, f, phi, n_paths, n_steps, seed, true,
    )
}

#[allow(clippy::too_many_arguments)]
fn semigroup_estimate_impl(
    drift: &BridgeDrift,
    schedule: &ScaleSchedule,
    geom: LatticeGeometry,
    mass: MassParams,
    s: f64,
    t: f64,
    f: &TestFunction,
    phi: &Field,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    antithetic: bool,
) -> Result<MCEstimate> {
    let tau = schedule.horizon();
    if !(0.0 <= s && s <= t && t <= tau * (1.0 + 1e-12)) {
        return Err(FlowError::TimeOutOfRange { t, tau });
    }
    if s == t {
        return Ok(MCEstimate::exact(f.eval(phi.values()), 1));
    }
    let engine = Engine::new(drift, schedule, geom, mass)?;
    let sites = geom.num_sites();
    let mut states = Vec::with_capacity(n_paths * sites);
    for _ in 0..n_paths {
        states.extend_from_slice(phi.values());
    }
    engine.evolve(
        &mut states,
        tau - t,
        tau - s,
        n_steps,
        seed,
        0x5eed ^ t.to_bits().rotate_left(11),
        antithetic,
        |_, _| {},
    )?;
    let vals: Vec<f64> = states.chunks_exact(sites).map(|x| f.eval(x)).collect();
    Ok(mean_se(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_geometry;
    use crate::oracle;
    use crate::potential::{quadratic_model, sine_gordon_model, SineGordonParams};
    use crate::spectral::{SpectralMultiplier, TabulatedSchedule};
    use std::sync::Arc;

    fn grid_2x2() -> (LatticeGeometry, MassParams) {
        (
            build_geometry(2, 2.0, 1.0).unwrap(),
            MassParams::new(1.0).unwrap(),
        )
    }

    /// V ≡ 0: terminal law is exactly the free field (the noise increments
    /// are exact), for any complete schedule.
    #[test]
    fn zero_drift_terminal_is_free_field() {
        let (g, m) = grid_2x2();
        let tau = 3.0;
        for sched in [
            ScaleSchedule::Tabulated(
                TabulatedSchedule::truncated_heat_kernel(g, m, tau, 129).unwrap(),
            ),
            ScaleSchedule::Tabulated(TabulatedSchedule::linear(g, m, tau, 129).unwrap()),
        ] {
            let cfg = BridgeConfig {
                n_steps: 64,
                n_paths: 10_000,
                seed: 5,
                ..Default::default()
            };
            let run = simulate_bridge(&BridgeDrift::Zero, &sched, g, m, &cfg).unwrap();
            let eigs = crate::lattice::mode_eigenvalues(&g, m);
            for (k, a) in eigs.iter().enumerate() {
                let est = run.terminal.mode_variance(k);
                assert!(
                    (est.mean - 1.0 / a).abs() <= 3.0 * est.se,
                    "mode {k}: {} ± {} vs {}",
                    est.mean,
                    est.se,
                    1.0 / a
                );
            }
        }
    }

    /// Quadratic model: terminal per-mode variances against the
    /// variance-recursion oracle, and the Gibbs variance 1/(a+b).
    #[test]
    fn quadratic_terminal_matches_recursion_oracle() {
        let (g, m) = grid_2x2();
        let tau = 3.0;
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::truncated_heat_kernel(g, m, tau, 257).unwrap(),
        );
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let drift = BridgeDrift::QuadraticClosedForm { b: b.clone() };
        let cfg = BridgeConfig {
            n_steps: 256,
            n_paths: 10_000,
            seed: 9,
            ..Default::default()
        };
        let run = simulate_bridge(&drift, &sched, g, m, &cfg).unwrap();
        let eigs = crate::lattice::mode_eigenvalues(&g, m);
        for (k, a) in eigs.iter().enumerate() {
            let sched_ref = &sched;
            let oracle_var = oracle::bridge_terminal_variance(
                1.0,
                tau,
                |s| sched_ref.cdot_of(s, *a),
                |s| sched_ref.c_of(s, *a),
                20_000,
            );
            // The complete schedule drives the bridge to the Gibbs variance.
            assert!((oracle_var - 1.0 / (a + 1.0)).abs() < 2e-3);
            let est = run.terminal.mode_variance(k);
            assert!(
                (est.mean - oracle_var).abs() <= 3.0 * est.se + 2.0 / cfg.n_steps as f64,
                "mode {k}: {} ± {} vs {oracle_var}",
                est.mean,
                est.se
            );
        }
    }

    /// Weak order one in the drift discretization: antithetic pairing makes
    /// the linear-drift mean exact in the noise, so the error against the
    /// fine-recursion oracle is pure discretization.
    #[test]
    fn weak_order_one_in_step_count() {
        let g = build_geometry(1, 1.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let tau = 2.0;
        // The constant-rate schedule makes the Euler mean factor telescope
        // exactly (zero discretization error), so the truncated heat kernel
        // is the right probe for the generic order.
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::truncated_heat_kernel(g, m, tau, 257).unwrap(),
        );
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let drift = BridgeDrift::QuadraticClosedForm { b };
        let phi = Field::new(g, vec![1.0]).unwrap();
        let f = TestFunction::new(
            "identity",
            "linear",
            |x: &[f64]| x[0],
            |_x, out| out[0] = 1.0,
            None,
        );

        // Oracle mean: dμ/dt = -ċ(τ-t) h(τ-t) μ via fine RK4.
        let mean_oracle = {
            let rhs = |t: f64, mu: f64| {
                let s = tau - t;
                let c = sched.c_of(s, 1.0);
                -sched.cdot_of(s, 1.0) * (1.0 / (1.0 + c)) * mu
            };
            let n = 20_000;
            let dt = tau / n as f64;
            let mut mu = 1.0;
            for i in 0..n {
                let t = i as f64 * dt;
                let k1 = rhs(t, mu);
                let k2 = rhs(t + 0.5 * dt, mu + 0.5 * dt * k1);
                let k3 = rhs(t + 0.5 * dt, mu + 0.5 * dt * k2);
                let k4 = rhs(t + dt, mu + dt * k3);
                mu += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            mu
        };

        let mut errs = Vec::new();
        let steps = [10usize, 20, 40, 80];
        for &n_steps in &steps {
            let engine = Engine::new(&drift, &sched, g, m).unwrap();
            let n_paths = 512;
            let mut states = vec![0.0; n_paths];
            for s in states.iter_mut() {
                *s = phi.values()[0];
            }
            engine
                .evolve(&mut states, 0.0, tau, n_steps, 3, 0, true, |_, _| {})
                .unwrap();
            let vals: Vec<f64> = states.iter().map(|&x| f.eval(&[x])).collect();
            let est = mean_se(&vals);
            errs.push(((n_steps as f64).ln(), (est.mean - mean_oracle).abs().ln()));
        }
        // Least-squares slope of log err vs log n: weak order 1 means ≈ -1.
        let n = errs.len() as f64;
        let sx: f64 = errs.iter().map(|e| e.0).sum();
        let sy: f64 = errs.iter().map(|e| e.1).sum();
        let sxx: f64 = errs.iter().map(|e| e.0 * e.0).sum();
        let sxy: f64 = errs.iter().map(|e| e.0 * e.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (-1.3..=-0.7).contains(&slope),
            "weak order slope {slope} from {errs:?}"
        );
    }

    #[test]
    fn semigroup_identities() {
        let (g, m) = grid_2x2();
        let tau = 2.0;
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::truncated_heat_kernel(g, m, tau, 129).unwrap(),
        );
        let phi = Field::new(g, vec![0.4, -0.2, 0.7, 0.0]).unwrap();
        let f = TestFunction::new(
            "site sum",
            "linear",
            |x: &[f64]| x.iter().sum(),
            |_x, out| out.fill(1.0),
            None,
        );
        // s = t: exact.
        let est = semigroup_estimate(
            &BridgeDrift::Zero,
            &sched,
            g,
            m,
            0.7,
            0.7,
            &f,
            &phi,
            100,
            10,
            1,
        )
        .unwrap();
        assert_eq!(est.mean, f.eval(phi.values()));
        assert_eq!(est.se, 0.0);

        // V ≡ 0, linear F: martingale, P_{s,t}F(φ) = F(φ).
        let est = semigroup_estimate(
            &BridgeDrift::Zero,
            &sched,
            g,
            m,
            0.3,
            1.6,
            &f,
            &phi,
            20_000,
            64,
            2,
        )
        .unwrap();
        assert!(
            (est.mean - f.eval(phi.values())).abs() <= 3.0 * est.se,
            "{} ± {} vs {}",
            est.mean,
            est.se,
            f.eval(phi.values())
        );
    }

    /// Tower property: P_{s,u}F(φ) agrees with the nested estimator
    /// P_{t,u}(P_{s,t}F)(φ) for s ≤ t ≤ u.
    #[test]
    fn semigroup_tower_property() {
        let (g, m) = grid_2x2();
        let tau = 2.0;
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::truncated_heat_kernel(g, m, tau, 129).unwrap(),
        );
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 0.8);
        let drift = BridgeDrift::QuadraticClosedForm { b };
        let phi = Field::new(g, vec![0.5, 0.1, -0.3, 0.2]).unwrap();
        let f = TestFunction::new(
            "cos site 0",
            "cosine",
            |x: &[f64]| x[0].cos(),
            |x, out| {
                out.fill(0.0);
                out[0] = -x[0].sin();
            },
            Some(1.0),
        );
        let (s, t, u) = (0.2, 0.9, 1.8);

        let direct = semigroup_estimate(
            &drift, &sched, g, m, s, u, &f, &phi, 4000, 96, 11,
        )
        .unwrap();

        // Outer stage: Φ̃ from τ-u to τ-t; inner: P_{s,t}F at each endpoint.
        let engine = Engine::new(&drift, &sched, g, m).unwrap();
        let n_outer = 256;
        let sites = g.num_sites();
        let mut states = Vec::with_capacity(n_outer * sites);
        for _ in 0..n_outer {
            states.extend_from_slice(phi.values());
        }
        engine
            .evolve(&mut states, tau - u, tau - t, 48, 13, 0xabc, false, |_, _| {})
            .unwrap();
        let mut outer_vals = Vec::with_capacity(n_outer);
        for (j, chunk) in states.chunks_exact(sites).enumerate() {
            let mid = Field::new(g, chunk.to_vec()).unwrap();
            let inner = semigroup_estimate(
                &drift,
                &sched,
                g,
                m,
                s,
                t,
                &f,
                &mid,
                64,
                48,
                1000 + j as u64,
            )
            .unwrap();
            outer_vals.push(inner.mean);
        }
        let nested = mean_se(&outer_vals);
        assert!(
            direct.agrees_with(&nested, 3.0),
            "direct {} ± {} vs nested {} ± {}",
            direct.mean,
            direct.se,
            nested.mean,
            nested.se
        );
    }

    /// Terminal law of the small-z sine-Gordon bridge against the MALA
    /// reference on the cosine observable.
    #[test]
    fn sine_gordon_terminal_matches_mala() {
        let (g, m) = grid_2x2();
        let tau = 14.0;
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::truncated_heat_kernel(g, m, tau, 257).unwrap(),
        );
        let params = SineGordonParams::new(0.1, 4.0).unwrap();
        let model = Arc::new(sine_gordon_model(g, params).unwrap());
        let beta_sqrt = 2.0;
        let est = RenormEstimator::new(model.clone(), m, sched.clone(), 512, 21).unwrap();
        let drift = BridgeDrift::MonteCarlo { est };
        let cfg = BridgeConfig {
            n_steps: 128,
            n_paths: 2000,
            seed: 23,
            ..Default::default()
        };
        let run = simulate_bridge(&drift, &sched, g, m, &cfg).unwrap();
        let obs =
            |x: &[f64]| (beta_sqrt * x[0]).cos();
        let bridge_est = run.terminal.observable(obs);

        let mala = crate::mala::mala_sample(
            model.as_ref(),
            g,
            m,
            &crate::mala::MalaConfig {
                n_samples: 40_000,
                burnin: 2_000,
                step: 0.15,
                thin: 2,
                tune: true,
                seed: 29,
            },
        )
        .unwrap();
        let mala_est = mala.ensemble.observable(obs);
        assert!(
            bridge_est.agrees_with(&mala_est, 3.0),
            "bridge {} ± {} vs MALA {} ± {}",
            bridge_est.mean,
            bridge_est.se,
            mala_est.mean,
            mala_est.se
        );
    }

    #[test]
    fn rejects_infinite_horizon_and_few_steps() {
        let (g, m) = grid_2x2();
        let cfg = BridgeConfig::default();
        assert!(matches!(
            simulate_bridge(&BridgeDrift::Zero, &ScaleSchedule::HeatKernel, g, m, &cfg),
            Err(FlowError::InvalidParameter(_))
        ));
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::linear(g, m, 1.0, 65).unwrap(),
        );
        let cfg = BridgeConfig {
            n_steps: 5,
            ..Default::default()
        };
        assert!(simulate_bridge(&BridgeDrift::Zero, &sched, g, m, &cfg).is_err());
    }

    /// Quadratic bridge with the Monte-Carlo drift agrees with the closed
    /// form drift (the estimator path is validated against the exact path).
    #[test]
    fn mc_drift_matches_closed_form_drift() {
        let g = build_geometry(1, 1.0, 1.0).unwrap();
        let m = MassParams::new(1.0).unwrap();
        let tau = 4.0;
        let sched = ScaleSchedule::Tabulated(
            TabulatedSchedule::truncated_heat_kernel(g, m, tau, 129).unwrap(),
        );
        let b = SpectralMultiplier::from_eigenvalue_fn(g, m, |_| 1.0);
        let model = Arc::new(quadratic_model(g, m, b.clone()).unwrap());
        let est = RenormEstimator::new(model, m, sched.clone(), 4096, 31).unwrap();
        let cfg = BridgeConfig {
            n_steps: 64,
            n_paths: 4000,
            seed: 37,
            ..Default::default()
        };
        let run_mc = simulate_bridge(&BridgeDrift::MonteCarlo { est }, &sched, g, m, &cfg)
            .unwrap();
        let run_cf = simulate_bridge(
            &BridgeDrift::QuadraticClosedForm { b },
            &sched,
            g,
            m,
            &cfg,
        )
        .unwrap();
        let v_mc = run_mc.terminal.observable(|x| x[0] * x[0]);
        let v_cf = run_cf.terminal.observable(|x| x[0] * x[0]);
        assert!(
            v_mc.agrees_with(&v_cf, 3.0),
            "MC {} ± {} vs closed form {} ± {}",
            v_mc.mean,
            v_mc.se,
            v_cf.mean,
            v_cf.se
        );
    }
}
