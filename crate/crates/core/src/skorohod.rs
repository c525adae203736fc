//! The Skorohod reflection problem on the half-space, the limiting
//! reflected SDE, and the semimartingale decomposition of reflected
//! Langevin trajectories.
//!
//! On D = R_+ x R^{r-1} the inward normal is e1 and the Skorohod map has
//! the explicit solution phi1_n = max(phi1_{n-1}, -w1_n) (zero at the
//! start), q = w + phi. The map is applied here in integer-exact
//! recurrence form, so its output satisfies the defining conditions at
//! zero tolerance.

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::model::{FieldSpec, SimParams};
use crate::noise::NoisePath;

/// A discrete r-vector path on a time grid, node-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || times.is_empty() || values.len() != times.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "path with {} nodes of dimension {dim} needs {} values, got {}",
                times.len(),
                times.len() * dim,
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GridMismatch("path times must strictly increase".into()));
        }
        Ok(Self { times, values, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn node(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }
}

/// Solution triple of the Skorohod problem: the input path w, the
/// reflected path q = w + phi, and the pushing process phi (only the
/// first component is nonzero on the half-space, so |phi| = phi1).
#[derive(Debug, Clone, PartialEq)]
pub struct SkorohodSolution {
    times: Vec<f64>,
    dim: usize,
    w: Vec<f64>,
    q: Vec<f64>,
    phi1: Vec<f64>,
}

impl SkorohodSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn w_node(&self, n: usize) -> &[f64] {
        &self.w[n * self.dim..(n + 1) * self.dim]
    }

    pub fn q_node(&self, n: usize) -> &[f64] {
        &self.q[n * self.dim..(n + 1) * self.dim]
    }

    /// The pushing process phi1 per node (phi's other components vanish).
    pub fn phi1(&self) -> &[f64] {
        &self.phi1
    }

    /// Total variation |phi| per node; phi1 is nondecreasing from 0, so
    /// this is phi1 itself.
    pub fn total_variation(&self) -> &[f64] {
        &self.phi1
    }

    /// Final value of q1.
    pub fn q1_end(&self) -> f64 {
        self.q[(self.n_nodes() - 1) * self.dim]
    }
}

/// Solve the Skorohod problem for a discrete path with w(0) in D.
pub fn skorohod_map(w: &DiscretePath) -> Result<SkorohodSolution> {
    if w.node(0)[0] < 0.0 {
        return Err(Error::OutsideDomain(w.node(0)[0]));
    }
    let r = w.dim();
    let n_nodes = w.n_nodes();
    let mut q = Vec::with_capacity(n_nodes * r);
    let mut phi1 = Vec::with_capacity(n_nodes);
    let mut phi = 0.0f64;
    for n in 0..n_nodes {
        let node = w.node(n);
        phi = phi.max(-node[0]);
        phi1.push(phi);
        q.push(node[0] + phi);
        q.extend_from_slice(&node[1..]);
    }
    Ok(SkorohodSolution {
        times: w.times().to_vec(),
        dim: r,
        w: w.values.clone(),
        q,
        phi1,
    })
}

/// Outcome of checking the three defining conditions of a Skorohod
/// solution at a tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub additivity_ok: bool,
    pub monotonicity_ok: bool,
    pub complementarity_ok: bool,
    pub max_additivity_violation: f64,
    pub max_monotonicity_violation: f64,
    pub max_complementarity_violation: f64,
    pub tol: f64,
}

impl VerificationReport {
    pub fn all_ok(&self) -> bool {
        self.additivity_ok && self.monotonicity_ok && self.complementarity_ok
    }
}

/// Check additivity q = w + phi, monotonicity of phi1, and
/// complementarity (phi increases only where q1 <= tol).
pub fn verify_skorohod(sol: &SkorohodSolution, tol: f64) -> VerificationReport {
    let r = sol.dim();
    let mut add: f64 = 0.0;
    for n in 0..sol.n_nodes() {
        let w = sol.w_node(n);
        let q = sol.q_node(n);
        add = add.max((q[0] - (w[0] + sol.phi1[n])).abs());
        for j in 1..r {
            add = add.max((q[j] - (w[j] + 0.0)).abs());
        }
    }
    let mut mono: f64 = 0.0;
    let mut comp: f64 = 0.0;
    if sol.phi1[0] < 0.0 {
        mono = mono.max(-sol.phi1[0]);
    }
    for n in 1..sol.n_nodes() {
        let inc = sol.phi1[n] - sol.phi1[n - 1];
        if inc < 0.0 {
            mono = mono.max(-inc);
        } else if inc > 0.0 {
            comp = comp.max(sol.q_node(n)[0]);
        }
    }
    VerificationReport {
        additivity_ok: add <= tol,
        monotonicity_ok: mono <= tol,
        complementarity_ok: comp <= tol,
        max_additivity_violation: add,
        max_monotonicity_violation: mono,
        max_complementarity_violation: comp,
        tol,
    }
}

/// Streaming Euler + per-step projection driver for the limiting
/// reflected SDE. `on_node(node, t, q, w, phi1)` is called at every grid
/// node. Returns (number of pushing steps, final phi1).
pub(crate) fn drive_limit<F>(
    q0: &[f64],
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
    mut on_node: F,
) -> Result<(u64, f64)>
where
    F: FnMut(usize, f64, &[f64], &[f64], f64),
{
    let r = q0.len();
    if field.dim() != r {
        return Err(Error::DimensionMismatch(
            "field and state dimensions must agree".into(),
        ));
    }
    if !field.diffusion_is_identity() {
        return Err(Error::InvalidParam(
            "the limiting equation is integrated with identity diffusion".into(),
        ));
    }
    if q0[0] < 0.0 {
        return Err(Error::OutsideDomain(q0[0]));
    }
    crate::integrator::check_grid(params, noise, r)?;
    let grid = noise.grid();
    let mut q = q0.to_vec();
    let mut w = q0.to_vec();
    let mut drift = vec![0.0; r];
    let mut phi = 0.0f64;
    let mut pushes = 0u64;
    on_node(0, grid.time(0), &q, &w, phi);
    for step in 0..grid.n_steps() {
        let h = grid.dt(step);
        let dw = noise.increment(step);
        field.drift(&q, &mut drift);
        let prop1 = q[0] + drift[0] * h + dw[0];
        for j in 0..r {
            w[j] += drift[j] * h + dw[j];
        }
        for j in 1..r {
            q[j] += drift[j] * h + dw[j];
        }
        if prop1 < 0.0 {
            phi += -prop1;
            q[0] = 0.0;
            pushes += 1;
        } else {
            q[0] = prop1;
        }
        on_node(step + 1, grid.time(step + 1), &q, &w, phi);
    }
    Ok((pushes, phi))
}

/// Integrate the limiting reflected SDE q' = b(q) dt + dW with the
/// per-step half-space projection, accumulating the pushing process.
pub fn simulate_limit(
    q0: &[f64],
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
) -> Result<SkorohodSolution> {
    let r = q0.len();
    let n_nodes = noise.grid().n_nodes();
    let mut q_out = Vec::with_capacity(n_nodes * r);
    let mut w_out = Vec::with_capacity(n_nodes * r);
    let mut phi1 = Vec::with_capacity(n_nodes);
    drive_limit(q0, field, params, noise, |_, _, q, w, phi| {
        q_out.extend_from_slice(q);
        w_out.extend_from_slice(w);
        phi1.push(phi);
    })?;
    Ok(SkorohodSolution {
        times: noise.grid().times().to_vec(),
        dim: r,
        w: w_out,
        q: q_out,
        phi1,
    })
}

/// Semimartingale decomposition of a reflected Langevin trajectory:
/// H_t = q0 + mu p0 - mu p_t, X_t = left-endpoint drift integral + W_t,
/// Phi from the accumulated psi. The residual sup|q - (H + X + Phi)| is
/// the discrete defect of the exact continuous-time identity.
#[derive(Debug, Clone)]
pub struct Decomposition {
    times: Vec<f64>,
    dim: usize,
    q: Vec<f64>,
    h_path: Vec<f64>,
    x_path: Vec<f64>,
    phi1: Vec<f64>,
    pub residual: f64,
}

impl Decomposition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn h_node(&self, n: usize) -> &[f64] {
        &self.h_path[n * self.dim..(n + 1) * self.dim]
    }

    pub fn x_node(&self, n: usize) -> &[f64] {
        &self.x_path[n * self.dim..(n + 1) * self.dim]
    }

    pub fn phi1(&self) -> &[f64] {
        &self.phi1
    }

    /// Repackage as a Skorohod solution with input path w = H + X, for
    /// [`verify_skorohod`].
    pub fn to_skorohod_solution(&self) -> SkorohodSolution {
        let w: Vec<f64> = self
            .h_path
            .iter()
            .zip(&self.x_path)
            .map(|(h, x)| h + x)
            .collect();
        SkorohodSolution {
            times: self.times.clone(),
            dim: self.dim,
            w,
            q: self.q.clone(),
            phi1: self.phi1.clone(),
        }
    }
}

/// Decompose a reflected trajectory produced with `noise` into H, X and
/// Phi and measure the residual of q = H + X + Phi over the grid.
pub fn decompose(
    traj: &Trajectory,
    field: &FieldSpec,
    mu: f64,
    noise: &NoisePath,
) -> Result<Decomposition> {
    let r = traj.dim();
    if field.dim() != r || noise.dim() != r {
        return Err(Error::DimensionMismatch(
            "trajectory, field and noise dimensions must agree".into(),
        ));
    }
    if traj.times.len() != noise.grid().n_nodes()
        || traj
            .times
            .iter()
            .zip(noise.grid().times())
            .any(|(a, b)| a != b)
    {
        return Err(Error::GridMismatch(
            "trajectory and noise grids differ".into(),
        ));
    }
    if !(mu > 0.0) {
        return Err(Error::NonPositiveMu(mu));
    }
    let n_nodes = traj.times.len();
    let q0 = &traj.states[0].q;
    let p0 = &traj.states[0].p;
    let wiener = noise.cumulative();
    let mut drift = vec![0.0; r];
    let mut drift_integral = vec![0.0; r];
    let mut q = Vec::with_capacity(n_nodes * r);
    let mut h_path = Vec::with_capacity(n_nodes * r);
    let mut x_path = Vec::with_capacity(n_nodes * r);
    let mut residual: f64 = 0.0;
    for n in 0..n_nodes {
        let state = &traj.states[n];
        for j in 0..r {
            let h = q0[j] + mu * p0[j] - mu * state.p[j];
            let x = drift_integral[j] + wiener[n * r + j];
            let phi = if j == 0 { traj.psi[n] } else { 0.0 };
            residual = residual.max((state.q[j] - (h + x + phi)).abs());
            q.push(state.q[j]);
            h_path.push(h);
            x_path.push(x);
        }
        if n + 1 < n_nodes {
            let dt = traj.times[n + 1] - traj.times[n];
            field.drift(&state.q, &mut drift);
            for j in 0..r {
                drift_integral[j] += drift[j] * dt;
            }
        }
    }
    Ok(Decomposition {
        times: traj.times.clone(),
        dim: r,
        q,
        h_path,
        x_path,
        phi1: traj.psi.clone(),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_field, FieldParams, PhaseState, Scheme};
    use crate::noise::{NoiseKey, TimeGrid};

    fn line_path(times: &[f64], q1: &[f64]) -> DiscretePath {
        DiscretePath::new(times.to_vec(), q1.to_vec(), 1).unwrap()
    }

    #[test]
    fn map_piecewise_linear_example() {
        // w1(t) = 1 - 2t at t in {0, .25, .5, .75, 1}
        let w = line_path(&[0.0, 0.25, 0.5, 0.75, 1.0], &[1.0, 0.5, 0.0, -0.5, -1.0]);
        let sol = skorohod_map(&w).unwrap();
        let q: Vec<f64> = (0..5).map(|n| sol.q_node(n)[0]).collect();
        assert_eq!(q, vec![1.0, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(sol.phi1(), &[0.0, 0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn map_interior_path_is_identity() {
        let w = line_path(&[0.0, 1.0, 2.0], &[0.5, 2.0, 0.1]);
        let sol = skorohod_map(&w).unwrap();
        assert_eq!(sol.phi1(), &[0.0, 0.0, 0.0]);
        for n in 0..3 {
            assert_eq!(sol.q_node(n), sol.w_node(n));
        }
    }

    #[test]
    fn map_single_push() {
        let w = line_path(&[0.0, 1.0, 2.0], &[0.0, -1.0, 1.0]);
        let sol = skorohod_map(&w).unwrap();
        assert_eq!(sol.phi1(), &[0.0, 1.0, 1.0]);
        let q: Vec<f64> = (0..3).map(|n| sol.q_node(n)[0]).collect();
        assert_eq!(q, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn map_rejects_start_outside_domain() {
        let w = line_path(&[0.0, 1.0], &[-0.5, 1.0]);
        assert!(matches!(skorohod_map(&w), Err(Error::OutsideDomain(_))));
    }

    #[test]
    fn map_output_verifies_at_zero_tolerance() {
        let w = line_path(
            &[0.0, 0.1, 0.2, 0.3, 0.4],
            &[0.3, -0.7, 0.911, -0.13, -2.25],
        );
        let sol = skorohod_map(&w).unwrap();
        let report = verify_skorohod(&sol, 0.0);
        assert!(report.all_ok(), "{report:?}");
    }

    #[test]
    fn verify_detects_interior_push() {
        // perturbing phi upward in the interior breaks complementarity
        let w = line_path(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        let sol = skorohod_map(&w).unwrap();
        let mut bad = sol.clone();
        bad.phi1[1] += 0.5;
        let report = verify_skorohod(&bad, 1e-12);
        assert!(!report.complementarity_ok);
        assert!(report.max_complementarity_violation >= 2.0);
        assert!(!report.all_ok());
    }

    #[test]
    fn map_is_idempotent() {
        let w = line_path(&[0.0, 0.5, 1.0, 1.5], &[0.2, -1.0, -0.4, 0.9]);
        let sol = skorohod_map(&w).unwrap();
        let q_path = DiscretePath::new(
            sol.times().to_vec(),
            (0..sol.n_nodes()).flat_map(|n| sol.q_node(n).to_vec()).collect(),
            1,
        )
        .unwrap();
        let again = skorohod_map(&q_path).unwrap();
        assert!(again.phi1().iter().all(|&x| x == 0.0));
        for n in 0..sol.n_nodes() {
            assert_eq!(again.q_node(n), sol.q_node(n));
        }
    }

    fn limit_params(dt: f64, t_end: f64) -> SimParams {
        SimParams {
            mu: 1.0,
            dt,
            t_end,
            seed: 5,
            n_paths: 1,
            scheme: Scheme::ExponentialOu,
        }
    }

    #[test]
    fn limit_deterministic_pushing() {
        // noise off, b = -1, q0 = 0.5: q_t = max(0, 0.5 - t) and phi grows
        // at unit rate after t = 0.5
        let field = make_field(
            "constant-drift",
            1,
            &FieldParams {
                constant: Some(vec![-1.0]),
                ..Default::default()
            },
        )
        .unwrap();
        let params = limit_params(0.1, 1.0);
        let noise = NoisePath::zeros(1, params.grid().unwrap());
        let sol = simulate_limit(&[0.5], &field, &params, &noise).unwrap();
        for n in 0..sol.n_nodes() {
            let t = sol.times()[n];
            let want = (0.5 - t).max(0.0);
            assert!((sol.q_node(n)[0] - want).abs() < 1e-12, "q at t={t}");
            let want_phi = (t - 0.5).max(0.0);
            assert!((sol.phi1()[n] - want_phi).abs() < 1e-12, "phi at t={t}");
        }
        let report = verify_skorohod(&sol, 1e-12);
        assert!(report.all_ok(), "{report:?}");
    }

    #[test]
    fn limit_interior_path_equals_input() {
        // no boundary contact: q == w pathwise
        let field = make_field("zero-drift-identity", 1, &FieldParams::default()).unwrap();
        let params = limit_params(0.01, 1.0);
        let noise = NoisePath::sample(NoiseKey { seed: 123, path: 0 }, 1, params.grid().unwrap());
        let sol = simulate_limit(&[100.0], &field, &params, &noise).unwrap();
        assert!(sol.phi1().iter().all(|&x| x == 0.0));
        for n in 0..sol.n_nodes() {
            assert_eq!(sol.q_node(n), sol.w_node(n));
        }
    }

    #[test]
    fn limit_requires_identity_diffusion_and_domain_start() {
        let field = make_field(
            "zero-drift-identity",
            1,
            &FieldParams {
                sigma: Some(vec![vec![2.0]]),
                ..Default::default()
            },
        )
        .unwrap();
        let params = limit_params(0.1, 1.0);
        let noise = NoisePath::zeros(1, params.grid().unwrap());
        assert!(simulate_limit(&[1.0], &field, &params, &noise).is_err());
        let field = make_field("zero-drift-identity", 1, &FieldParams::default()).unwrap();
        assert!(matches!(
            simulate_limit(&[-1.0], &field, &params, &noise),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn decompose_h_formula() {
        // H with mu = 0.1, q0 = 1, p0 = 3, p_t = -2: 1 + 0.3 + 0.2 = 1.5
        let h = 1.0 + 0.1 * 3.0 - 0.1 * (-2.0);
        assert!((h - 1.5).abs() < 1e-15);
    }

    #[test]
    fn decompose_deterministic_reflected_run() {
        // noise off, b = 0: X = 0 and q = H + Phi up to interpolation error
        use crate::reflector::simulate_reflected;
        let field = make_field("zero-drift-identity", 1, &FieldParams::default()).unwrap();
        let params = SimParams {
            mu: 0.5,
            dt: 1e-4,
            t_end: 1.0,
            seed: 0,
            n_paths: 1,
            scheme: Scheme::ExponentialOu,
        };
        let noise = NoisePath::zeros(1, params.grid().unwrap());
        let init = PhaseState::new(vec![1.0], vec![-4.0], 0.0).unwrap();
        let traj = simulate_reflected(&init, &field, &params, &noise).unwrap();
        let dec = decompose(&traj, &field, params.mu, &noise).unwrap();
        assert!(dec.x_node(dec.times().len() - 1)[0].abs() < 1e-15);
        assert!(dec.residual < 10.0 * params.dt * 4.0, "residual {}", dec.residual);
    }

    #[test]
    fn decompose_grid_mismatch_rejected() {
        use crate::reflector::simulate_reflected;
        let field = make_field("zero-drift-identity", 1, &FieldParams::default()).unwrap();
        let params = SimParams {
            mu: 0.5,
            dt: 0.1,
            t_end: 1.0,
            seed: 0,
            n_paths: 1,
            scheme: Scheme::ExponentialOu,
        };
        let noise = NoisePath::zeros(1, params.grid().unwrap());
        let init = PhaseState::new(vec![1.0], vec![-4.0], 0.0).unwrap();
        let traj = simulate_reflected(&init, &field, &params, &noise).unwrap();
        let other = NoisePath::zeros(1, TimeGrid::uniform(1.0, 5).unwrap());
        assert!(matches!(
            decompose(&traj, &field, params.mu, &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn monotone_input_paths_give_monotone_reflections() {
        // if w1 <= v1 nodewise with equal starts, then q1(w) <= q1(v)
        let times = [0.0, 1.0, 2.0, 3.0];
        let w = line_path(&times, &[0.5, -1.0, -0.3, 0.2]);
        let v = line_path(&times, &[0.5, -0.2, 0.4, 0.2]);
        let qw = skorohod_map(&w).unwrap();
        let qv = skorohod_map(&v).unwrap();
        for n in 0..4 {
            assert!(qw.q_node(n)[0] <= qv.q_node(n)[0] + 1e-15);
        }
    }
}
