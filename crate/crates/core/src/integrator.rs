//! Fixed-grid integrators for the free-space Langevin system and the
//! overdamped limit equation.
//!
//! The p-equation has relaxation rate 1/mu, so the default scheme
//! integrates the damping exactly: with a = e^{-dt/mu} and the drift
//! frozen at the step start,
//!
//! ```text
//! p' = a p + (1 - a) b(q) + (Sigma/mu) xi
//! q' = q + (p + p') dt/2
//! ```
//!
//! where xi is Gaussian with Var(xi) = (mu/2)(1 - a^2) per component and
//! the exact joint covariance Cov(xi, dW) = mu(1 - a) with the step's
//! Wiener increment. xi is realized conditionally on dW using one
//! auxiliary standard normal per component, so the momentum chain has the
//! exact Ornstein-Uhlenbeck transition law for any dt while the driving
//! increments remain the ones recorded on the path. Explicit
//! Euler-Maruyama is available behind [`Scheme::EulerMaruyama`] for
//! cross-checks; only that scheme carries the dt <= mu/10 guard.

use crate::error::{Error, Result};
use crate::model::{FieldSpec, PhaseState, Scheme, SimParams};
use crate::noise::NoisePath;
use crate::reflector::ReflectionEvent;

/// Per-step coefficients of the exact-OU update. Small dt/mu ratios are
/// handled with expm1 and a series for the conditional variance, which
/// otherwise cancels catastrophically.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OuCoeffs {
    pub h: f64,
    pub a: f64,
    pub one_minus_a: f64,
    /// E[xi | dW] = cond_coef * dW
    pub cond_coef: f64,
    /// sd of xi given dW
    pub cond_sd: f64,
}

impl OuCoeffs {
    pub fn new(mu: f64, h: f64) -> Self {
        let x = h / mu;
        let a = (-x).exp();
        let one_minus_a = -(-x).exp_m1();
        let cov = mu * one_minus_a; // Cov(xi, dW) = mu (1 - a)
        let cond_var = if x < 1e-3 {
            // Var(xi) - Cov^2/h = mu x^3/12 (1 - x + (17/30) x^2 + ...)
            mu * x * x * x * (1.0 - x + 17.0 / 30.0 * x * x) / 12.0
        } else {
            let var_xi = 0.5 * mu * (-(-2.0 * x).exp_m1());
            (var_xi - cov * cov / h).max(0.0)
        };
        Self {
            h,
            a,
            one_minus_a,
            cond_coef: cov / h,
            cond_sd: cond_var.sqrt(),
        }
    }
}

/// The noise consumed by one Langevin step: the Wiener increment plus the
/// auxiliary standard normals realizing the conditional momentum Gaussian.
#[derive(Debug, Clone)]
pub struct StepDraw {
    pub dw: Vec<f64>,
    pub aux: Vec<f64>,
}

impl StepDraw {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dw: vec![0.0; dim],
            aux: vec![0.0; dim],
        }
    }

    /// The draw a [`NoisePath`] assigns to `step`.
    pub fn from_noise(noise: &NoisePath, step: usize) -> Self {
        let mut aux = vec![0.0; noise.dim()];
        noise.aux_draw(step, &mut aux);
        Self {
            dw: noise.increment(step).to_vec(),
            aux,
        }
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub drift: Vec<f64>,
    pub xi: Vec<f64>,
    pub sig: Vec<f64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            xi: vec![0.0; dim],
            sig: vec![0.0; dim],
        }
    }
}

/// One exponential-OU update in place; `drift` holds b frozen at the step
/// start, `dw`/`aux` the step's noise.
pub(crate) fn advance_exponential(
    field: &FieldSpec,
    mu: f64,
    co: &OuCoeffs,
    q: &mut [f64],
    p: &mut [f64],
    drift: &[f64],
    dw: &[f64],
    aux: &[f64],
    ws_xi: &mut [f64],
    ws_sig: &mut [f64],
) {
    for j in 0..q.len() {
        ws_xi[j] = co.cond_coef * dw[j] + co.cond_sd * aux[j];
    }
    field.apply_diffusion(ws_xi, ws_sig);
    for i in 0..q.len() {
        let p_new = co.a * p[i] + co.one_minus_a * drift[i] + ws_sig[i] / mu;
        q[i] += 0.5 * co.h * (p[i] + p_new);
        p[i] = p_new;
    }
}

/// One explicit Euler-Maruyama update in place.
pub(crate) fn advance_euler(
    field: &FieldSpec,
    mu: f64,
    h: f64,
    q: &mut [f64],
    p: &mut [f64],
    drift: &[f64],
    dw: &[f64],
    ws_sig: &mut [f64],
) {
    field.apply_diffusion(dw, ws_sig);
    let hmu = h / mu;
    for i in 0..q.len() {
        let p_new = p[i] + (drift[i] - p[i]) * hmu + ws_sig[i] / mu;
        q[i] += h * p[i];
        p[i] = p_new;
    }
}

/// Advance the free-space Langevin system by one step of length `dt`.
pub fn step_langevin(
    state: &PhaseState,
    field: &FieldSpec,
    mu: f64,
    dt: f64,
    draw: &StepDraw,
    scheme: Scheme,
) -> Result<PhaseState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    if !(mu > 0.0) {
        return Err(Error::NonPositiveMu(mu));
    }
    let r = state.dim();
    if field.dim() != r || draw.dw.len() != r || draw.aux.len() != r {
        return Err(Error::DimensionMismatch(
            "state, field and draw dimensions must agree".into(),
        ));
    }
    let mut q = state.q.clone();
    let mut p = state.p.clone();
    let mut ws = Workspace::new(r);
    field.drift(&state.q, &mut ws.drift);
    match scheme {
        Scheme::ExponentialOu => {
            let co = OuCoeffs::new(mu, dt);
            advance_exponential(
                field, mu, &co, &mut q, &mut p, &ws.drift, &draw.dw, &draw.aux, &mut ws.xi,
                &mut ws.sig,
            );
        }
        Scheme::EulerMaruyama => {
            advance_euler(field, mu, dt, &mut q, &mut p, &ws.drift, &draw.dw, &mut ws.sig);
        }
    }
    PhaseState::new(q, p, state.t + dt)
}

/// Euler-Maruyama step of the overdamped equation q' = q + b(q) dt + Sigma dW.
pub fn step_overdamped(q: &[f64], field: &FieldSpec, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    if field.dim() != q.len() || dw.len() != q.len() {
        return Err(Error::DimensionMismatch(
            "state, field and noise dimensions must agree".into(),
        ));
    }
    let mut drift = vec![0.0; q.len()];
    let mut sig = vec![0.0; q.len()];
    field.drift(q, &mut drift);
    field.apply_diffusion(dw, &mut sig);
    Ok(q.iter()
        .enumerate()
        .map(|(i, &qi)| qi + drift[i] * dt + sig[i])
        .collect())
}

/// A simulated path on a time grid: states per node, reflection events
/// (empty for free-space runs) and the accumulated local time Psi per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    pub events: Vec<ReflectionEvent>,
    pub psi: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn last_state(&self) -> &PhaseState {
        self.states.last().unwrap()
    }
}

pub(crate) fn check_grid(params: &SimParams, noise: &NoisePath, dim: usize) -> Result<()> {
    params.validate()?;
    if noise.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "noise dimension {} vs state dimension {dim}",
            noise.dim()
        )));
    }
    if noise.grid().n_steps() != params.n_steps()
        || (noise.grid().t_end() - params.t_end).abs() > 1e-12 * params.t_end.max(1.0)
    {
        return Err(Error::GridMismatch(format!(
            "noise grid ({} steps to {}) vs params ({} steps to {})",
            noise.grid().n_steps(),
            noise.grid().t_end(),
            params.n_steps(),
            params.t_end
        )));
    }
    Ok(())
}

/// Integrate the free-space system over the whole grid. Deterministic
/// given (init, field, params, noise).
pub fn simulate_free(
    init: &PhaseState,
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
) -> Result<Trajectory> {
    let r = init.dim();
    if field.dim() != r {
        return Err(Error::DimensionMismatch(
            "field and state dimensions must agree".into(),
        ));
    }
    check_grid(params, noise, r)?;
    let grid = noise.grid();
    let n = grid.n_steps();
    let mut q = init.q.clone();
    let mut p = init.p.clone();
    let mut ws = Workspace::new(r);
    let mut aux = vec![0.0; r];
    let mut states = Vec::with_capacity(n + 1);
    states.push(PhaseState {
        q: q.clone(),
        p: p.clone(),
        t: grid.time(0),
    });
    for step in 0..n {
        let h = grid.dt(step);
        field.drift(&q, &mut ws.drift);
        match params.scheme {
            Scheme::ExponentialOu => {
                let co = OuCoeffs::new(params.mu, h);
                noise.aux_draw(step, &mut aux);
                advance_exponential(
                    field,
                    params.mu,
                    &co,
                    &mut q,
                    &mut p,
                    &ws.drift,
                    noise.increment(step),
                    &aux,
                    &mut ws.xi,
                    &mut ws.sig,
                );
            }
            Scheme::EulerMaruyama => {
                advance_euler(
                    field,
                    params.mu,
                    h,
                    &mut q,
                    &mut p,
                    &ws.drift,
                    noise.increment(step),
                    &mut ws.sig,
                );
            }
        }
        states.push(PhaseState {
            q: q.clone(),
            p: p.clone(),
            t: grid.time(step + 1),
        });
    }
    Ok(Trajectory {
        times: grid.times().to_vec(),
        states,
        events: Vec::new(),
        psi: vec![0.0; n + 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_field, FieldParams};
    use crate::noise::{NoiseKey, NoisePath, TimeGrid};

    fn zero_field(dim: usize) -> FieldSpec {
        make_field("zero-drift-identity", dim, &FieldParams::default()).unwrap()
    }

    fn params(mu: f64, dt: f64, t_end: f64) -> SimParams {
        SimParams {
            mu,
            dt,
            t_end,
            seed: 9,
            n_paths: 1,
            scheme: Scheme::ExponentialOu,
        }
    }

    /// Closed-form free flow for b = 0, noise off:
    /// p_t = p0 e^{-t/mu}, q_t = q0 + p0 mu (1 - e^{-t/mu}).
    fn exact_flow(q0: f64, p0: f64, mu: f64, t: f64) -> (f64, f64) {
        let a = (-t / mu).exp();
        (q0 + p0 * mu * (1.0 - a), p0 * a)
    }

    #[test]
    fn homogeneous_decay_is_exact() {
        // dW = 0, b = 0: p' = p e^{-dt/mu} exactly, for any dt
        let field = zero_field(1);
        let state = PhaseState::new(vec![1.0], vec![-4.0], 0.0).unwrap();
        let mu = 0.5;
        for dt in [1e-4, 0.1, 2.5] {
            let next =
                step_langevin(&state, &field, mu, dt, &StepDraw::zeros(1), Scheme::ExponentialOu)
                    .unwrap();
            assert_eq!(next.p[0], (-dt / mu).exp() * -4.0);
        }
    }

    #[test]
    fn deterministic_flow_matches_closed_form() {
        // frozen oracle values (mpmath): mu = 0.5, q0 = 1, p0 = -4 at t = 0.25
        let field = zero_field(1);
        let p = params(0.5, 1e-5, 0.25);
        let noise = NoisePath::zeros(1, p.grid().unwrap());
        let init = PhaseState::new(vec![1.0], vec![-4.0], 0.0).unwrap();
        let traj = simulate_free(&init, &field, &p, &noise).unwrap();
        let end = traj.last_state();
        assert!((end.p[0] - -2.4261226388505337).abs() < 1e-8, "p = {}", end.p[0]);
        assert!((end.q[0] - 0.21306131942526685).abs() < 1e-8, "q = {}", end.q[0]);
        // and against the closed form along the way
        for node in traj.states.iter().step_by(5000) {
            let (qe, pe) = exact_flow(1.0, -4.0, 0.5, node.t);
            assert!((node.q[0] - qe).abs() < 1e-8);
            assert!((node.p[0] - pe).abs() < 1e-8);
        }
    }

    #[test]
    fn single_step_grid_equals_step_langevin() {
        let field = zero_field(2);
        let p = SimParams {
            dt: 0.05,
            t_end: 0.05,
            ..params(0.3, 0.05, 0.05)
        };
        let noise = NoisePath::sample(NoiseKey { seed: 4, path: 0 }, 2, p.grid().unwrap());
        let init = PhaseState::new(vec![1.0, 0.5], vec![-1.0, 2.0], 0.0).unwrap();
        let traj = simulate_free(&init, &field, &p, &noise).unwrap();
        let manual = step_langevin(
            &init,
            &field,
            p.mu,
            p.dt,
            &StepDraw::from_noise(&noise, 0),
            Scheme::ExponentialOu,
        )
        .unwrap();
        assert_eq!(traj.states[1], manual);
    }

    #[test]
    fn determinism_bit_identical() {
        let field = make_field(
            "tanh-drift",
            2,
            &FieldParams {
                gain: Some(1.5),
                ..Default::default()
            },
        )
        .unwrap();
        let p = params(0.2, 1e-3, 0.5);
        let noise = NoisePath::sample(NoiseKey { seed: 77, path: 5 }, 2, p.grid().unwrap());
        let init = PhaseState::new(vec![0.4, -0.2], vec![0.0, 0.0], 0.0).unwrap();
        let a = simulate_free(&init, &field, &p, &noise).unwrap();
        let b = simulate_free(&init, &field, &p, &noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_step_law_moments() {
        // b = 0, Sigma = I: one-step p-law is Gaussian with mean p a and
        // variance (1/(2mu))(1 - a^2); the p-noise has covariance (1 - a)
        // with the step's Wiener increment. 1e6 draws, 4 standard errors.
        let field = zero_field(1);
        let mu = 0.3;
        let dt = 0.2;
        let p0 = 1.7;
        let grid = TimeGrid::uniform(dt, 1).unwrap();
        let n = 1_000_000usize;
        let a = (-dt / mu).exp();
        let mean_want = p0 * a;
        let var_want = (1.0 - a * a) / (2.0 * mu);
        let cov_want = 1.0 - a;

        let (mut sum, mut sumsq, mut sum_cross) = (0.0, 0.0, 0.0);
        for path in 0..n {
            let noise = NoisePath::sample(
                NoiseKey {
                    seed: 2024,
                    path: path as u64,
                },
                1,
                grid.clone(),
            );
            let state = PhaseState::new(vec![0.0], vec![p0], 0.0).unwrap();
            let next = step_langevin(
                &state,
                &field,
                mu,
                dt,
                &StepDraw::from_noise(&noise, 0),
                Scheme::ExponentialOu,
            )
            .unwrap();
            let dev = next.p[0] - mean_want;
            sum += next.p[0];
            sumsq += dev * dev;
            sum_cross += dev * noise.increment(0)[0];
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = sumsq / nf;
        let cov = sum_cross / nf;
        let se_mean = (var_want / nf).sqrt();
        let se_var = var_want * (2.0 / nf).sqrt();
        let se_cov = (var_want * dt / nf).sqrt(); // conservative scale
        assert!((mean - mean_want).abs() < 4.0 * se_mean, "mean {mean} vs {mean_want}");
        assert!((var - var_want).abs() < 4.0 * se_var, "var {var} vs {var_want}");
        assert!((cov - cov_want).abs() < 4.0 * se_cov, "cov {cov} vs {cov_want}");
    }

    #[test]
    fn euler_scheme_and_guard() {
        let field = zero_field(1);
        let state = PhaseState::new(vec![1.0], vec![2.0], 0.0).unwrap();
        let next = step_langevin(&state, &field, 1.0, 0.05, &StepDraw::zeros(1), Scheme::EulerMaruyama)
            .unwrap();
        // q' = q + p dt, p' = p (1 - dt/mu)
        assert_eq!(next.q[0], 1.0 + 2.0 * 0.05);
        assert_eq!(next.p[0], 2.0 * (1.0 - 0.05));
        // the dt guard rejects coarse explicit runs at params level
        let bad = SimParams {
            mu: 0.1,
            dt: 0.05,
            t_end: 1.0,
            seed: 0,
            n_paths: 1,
            scheme: Scheme::EulerMaruyama,
        };
        assert!(matches!(bad.validate(), Err(Error::StiffStep { .. })));
    }

    #[test]
    fn step_overdamped_cases() {
        let field = zero_field(1);
        // pure increment
        let q = step_overdamped(&[1.0], &field, 0.5, &[0.3]).unwrap();
        assert_eq!(q, vec![1.3]);
        // pure drift
        let field = make_field(
            "constant-drift",
            1,
            &FieldParams {
                constant: Some(vec![-1.0]),
                ..Default::default()
            },
        )
        .unwrap();
        let q = step_overdamped(&[1.0], &field, 0.1, &[0.0]).unwrap();
        assert!((q[0] - 0.9).abs() < 1e-15);
        assert!(step_overdamped(&[1.0], &field, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn step_errors() {
        let field = zero_field(1);
        let state = PhaseState::new(vec![1.0], vec![0.0], 0.0).unwrap();
        assert!(matches!(
            step_langevin(&state, &field, 0.5, 0.0, &StepDraw::zeros(1), Scheme::ExponentialOu),
            Err(Error::NonPositiveDt(_))
        ));
        assert!(matches!(
            step_langevin(&state, &field, -1.0, 0.1, &StepDraw::zeros(1), Scheme::ExponentialOu),
            Err(Error::NonPositiveMu(_))
        ));
    }

    #[test]
    fn ou_coeffs_small_ratio_branch() {
        // series and direct branches agree near the crossover x = 1e-3
        let mu = 0.1;
        for h in [9.9e-5, 1.01e-4, 5e-4] {
            let co = OuCoeffs::new(mu, h);
            let x: f64 = h / mu;
            let leading = mu * x * x * x / 12.0;
            assert!(
                (co.cond_sd * co.cond_sd - leading).abs() < 0.05 * leading,
                "h={h}: {} vs leading term {leading}",
                co.cond_sd * co.cond_sd
            );
        }
    }
}
