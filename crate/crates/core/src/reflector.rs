//! The Langevin process with elastic reflection on the half-space
//! boundary q1 = 0.
//!
//! Two constructions are provided. The recursive one integrates the
//! free-space system until the reflected coordinate crosses zero, locates
//! the hit by linear interpolation within the step, splits the step's
//! Wiener increment with a Brownian bridge at the hit fraction, flips the
//! normal momentum component, and rescans the remainder of the step for
//! further crossings. The folded one integrates the sign-folded system
//! (drift and noise row 1 carry sgn(q1), drift arguments are folded to
//! |q1|) without any reflection and folds the result afterwards; events
//! are reconstructed from sign changes.
//!
//! Each momentum flip accumulates local time: Psi increases by
//! mu * (-2 p1_minus) = 2 mu |p1_minus| at every hit.

use crate::error::{Error, Result};
use crate::integrator::{
    advance_euler, advance_exponential, check_grid, OuCoeffs, Trajectory, Workspace,
};
use crate::model::{FieldSpec, PhaseState, Scheme, SimParams};
use crate::noise::NoisePath;

/// Abort threshold for runaway event counts on a single path. Theory says
/// a path has finitely many jumps on [0, T]; hitting this limit indicates
/// a far-too-coarse grid or diverging dynamics.
pub const EVENT_STORM_LIMIT: u64 = 1_000_000;

/// States with |q1| below this are treated as on-boundary for
/// [`reflect`]'s precondition.
pub const BOUNDARY_CLAMP_TOL: f64 = 1e-12;

/// Per-step cap on event-search iterations (events plus boundary-start
/// bisections).
const MAX_SUBSTEPS_PER_STEP: u64 = 10_000;

/// One elastic reflection: the hit time, the momentum on both sides of
/// the flip, and the local-time increment mu * (-2 p1_minus).
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionEvent {
    pub tau: f64,
    pub p_minus: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub psi_increment: f64,
}

/// Local-time increment of a flip at momentum `p1_minus` (negative at a
/// genuine hit): mu * (-2 p1_minus) = 2 mu |p1_minus|.
pub fn psi_increment(mu: f64, p1_minus: f64) -> f64 {
    mu * (-2.0 * p1_minus)
}

/// Fraction theta in (0, 1] at which q1, linearly interpolated between
/// the two states, hits zero; `None` when the step stays inside the
/// domain. Expects `before.q[0] > 0`.
pub fn detect_crossing(before: &PhaseState, after: &PhaseState) -> Option<f64> {
    crossing_fraction(before.q[0], after.q[0])
}

fn crossing_fraction(q1_before: f64, q1_after: f64) -> Option<f64> {
    if q1_after > 0.0 {
        None
    } else if q1_after == 0.0 {
        Some(1.0)
    } else {
        Some(q1_before / (q1_before - q1_after))
    }
}

/// Elastic reflection at the boundary: q1 set to exactly 0, p1 negated,
/// everything else unchanged. Callers are expected to pass states with
/// |q1| within a clamp tolerance of the boundary (see
/// [`BOUNDARY_CLAMP_TOL`]); whatever offset remains is discarded.
pub fn reflect(state: &PhaseState) -> PhaseState {
    let mut q = state.q.clone();
    let mut p = state.p.clone();
    q[0] = 0.0;
    p[0] = -p[0];
    PhaseState { q, p, t: state.t }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DriveMode {
    Free,
    Reflected,
    Folded,
}

#[derive(Debug)]
pub(crate) struct DriveOutcome {
    pub events: Vec<ReflectionEvent>,
    pub event_count: u64,
    pub psi_total: f64,
    /// min over nodes of (q1)^2 + (p1)^2, the origin-avoidance diagnostic
    pub min_origin_sq: f64,
}

/// Integrate one path, calling `on_node(node, t, q, p, psi)` at every grid
/// node (including node 0). For `Folded`, the callback receives the folded
/// coordinates.
pub(crate) fn drive_langevin<F>(
    init: &PhaseState,
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
    mode: DriveMode,
    collect_events: bool,
    mut on_node: F,
) -> Result<DriveOutcome>
where
    F: FnMut(usize, f64, &[f64], &[f64], f64),
{
    let r = init.dim();
    if field.dim() != r {
        return Err(Error::DimensionMismatch(
            "field and state dimensions must agree".into(),
        ));
    }
    check_grid(params, noise, r)?;
    if mode != DriveMode::Free {
        init.validate_reflected_init()?;
    }
    if mode == DriveMode::Folded && !field.diffusion_is_identity() {
        return Err(Error::InvalidParam(
            "the folded construction is defined for identity diffusion".into(),
        ));
    }

    let grid = noise.grid();
    let n = grid.n_steps();
    let mu = params.mu;
    let mut q = init.q.clone();
    let mut p = init.p.clone();
    let mut psi = 0.0f64;
    let mut ws = Workspace::new(r);
    let mut aux = vec![0.0; r];
    let mut dw = vec![0.0; r];
    let mut dw_left = vec![0.0; r];
    let mut q_prop = vec![0.0; r];
    let mut p_prop = vec![0.0; r];
    let mut folded_q = vec![0.0; r];
    let mut folded_p = vec![0.0; r];
    let mut outcome = DriveOutcome {
        events: Vec::new(),
        event_count: 0,
        psi_total: 0.0,
        min_origin_sq: f64::INFINITY,
    };

    macro_rules! emit {
        ($node:expr, $t:expr) => {{
            if mode == DriveMode::Folded {
                folded_q.copy_from_slice(&q);
                folded_p.copy_from_slice(&p);
                let s = if q[0] >= 0.0 { 1.0 } else { -1.0 };
                folded_q[0] = q[0].abs();
                folded_p[0] = s * p[0];
                outcome.min_origin_sq = outcome
                    .min_origin_sq
                    .min(folded_q[0] * folded_q[0] + folded_p[0] * folded_p[0]);
                on_node($node, $t, &folded_q, &folded_p, psi);
            } else {
                if mode == DriveMode::Reflected {
                    outcome.min_origin_sq =
                        outcome.min_origin_sq.min(q[0] * q[0] + p[0] * p[0]);
                }
                on_node($node, $t, &q, &p, psi);
            }
        }};
    }

    emit!(0, grid.time(0));

    // previous raw node, for folded event reconstruction
    let mut prev_q1 = q[0];
    let mut prev_p = p.clone();

    for step in 0..n {
        let h = grid.dt(step);
        let t0 = grid.time(step);
        dw.copy_from_slice(noise.increment(step));
        noise.aux_draw(step, &mut aux);

        match mode {
            DriveMode::Free => {
                advance(field, params, mu, h, &mut q, &mut p, &dw, &aux, &mut ws);
            }
            DriveMode::Folded => {
                let s = if q[0] >= 0.0 { 1.0 } else { -1.0 };
                if s < 0.0 {
                    dw[0] = -dw[0];
                    aux[0] = -aux[0];
                }
                advance_folded(field, params, mu, h, &mut q, &mut p, &dw, &aux, &mut ws, s);
                // reconstruct a reflection from a sign change of raw q1
                let crossed = (prev_q1 >= 0.0) != (q[0] >= 0.0);
                if crossed {
                    let denom = prev_q1 - q[0];
                    let theta = if denom != 0.0 {
                        (prev_q1 / denom).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let tau = t0 + theta * h;
                    let p1_tau = prev_p[0] + theta * (p[0] - prev_p[0]);
                    let inc = psi_increment(mu, -p1_tau.abs());
                    psi += inc;
                    outcome.event_count += 1;
                    if outcome.event_count > EVENT_STORM_LIMIT {
                        return Err(Error::EventStorm {
                            limit: EVENT_STORM_LIMIT,
                        });
                    }
                    if collect_events {
                        let mut p_minus: Vec<f64> = prev_p
                            .iter()
                            .zip(&p)
                            .map(|(a, b)| a + theta * (b - a))
                            .collect();
                        p_minus[0] = -p1_tau.abs();
                        let mut p_plus = p_minus.clone();
                        p_plus[0] = -p_minus[0];
                        outcome.events.push(ReflectionEvent {
                            tau,
                            p_minus,
                            p_plus,
                            psi_increment: inc,
                        });
                    }
                }
                prev_q1 = q[0];
                prev_p.copy_from_slice(&p);
            }
            DriveMode::Reflected => {
                let mut h_rem = h;
                let mut t_sub = t0;
                let mut es = noise.event_stream(step);
                let mut iterations = 0u64;
                loop {
                    iterations += 1;
                    if iterations > MAX_SUBSTEPS_PER_STEP {
                        return Err(Error::EventStorm {
                            limit: EVENT_STORM_LIMIT,
                        });
                    }
                    q_prop.copy_from_slice(&q);
                    p_prop.copy_from_slice(&p);
                    advance(
                        field, params, mu, h_rem, &mut q_prop, &mut p_prop, &dw, &aux, &mut ws,
                    );
                    let on_boundary = q[0] == 0.0;
                    let theta = match crossing_fraction(q[0], q_prop[0]) {
                        None => {
                            q.copy_from_slice(&q_prop);
                            p.copy_from_slice(&p_prop);
                            break;
                        }
                        Some(t) if t >= 1.0 => {
                            // lands exactly on the boundary at the node
                            q.copy_from_slice(&q_prop);
                            p.copy_from_slice(&p_prop);
                            if p[0] < 0.0 {
                                record_event(
                                    t_sub + h_rem,
                                    mu,
                                    &mut q,
                                    &mut p,
                                    &mut psi,
                                    collect_events,
                                    &mut outcome,
                                )?;
                            }
                            break;
                        }
                        // from the boundary the linear fraction is
                        // degenerate; bisect and re-examine
                        Some(_) if on_boundary => 0.5,
                        Some(t) => t,
                    };

                    let h1 = theta * h_rem;
                    if h1 <= 0.0 {
                        // interval exhausted below fp resolution
                        q.copy_from_slice(&q_prop);
                        p.copy_from_slice(&p_prop);
                        break;
                    }
                    // Brownian-bridge split of the remaining increment at theta
                    let bridge_sd = (theta * (1.0 - theta) * h_rem).sqrt();
                    for j in 0..r {
                        dw_left[j] = theta * dw[j] + bridge_sd * es.next_gaussian();
                    }
                    for a in aux.iter_mut() {
                        *a = es.next_gaussian();
                    }
                    advance(field, params, mu, h1, &mut q, &mut p, &dw_left, &aux, &mut ws);
                    t_sub += h1;
                    h_rem -= h1;
                    if on_boundary {
                        // bisection leg: an event only if this half crossed
                        if q[0] <= 0.0 && p[0] < 0.0 {
                            record_event(
                                t_sub,
                                mu,
                                &mut q,
                                &mut p,
                                &mut psi,
                                collect_events,
                                &mut outcome,
                            )?;
                        } else if q[0] < 0.0 {
                            q[0] = 0.0;
                        }
                    } else if p[0] < 0.0 {
                        record_event(
                            t_sub,
                            mu,
                            &mut q,
                            &mut p,
                            &mut psi,
                            collect_events,
                            &mut outcome,
                        )?;
                    } else {
                        // crossed with inward momentum (interpolation
                        // corner case): clamp without a flip
                        q[0] = q[0].max(0.0);
                    }
                    // remainder of the step
                    for j in 0..r {
                        dw[j] -= dw_left[j];
                    }
                    for a in aux.iter_mut() {
                        *a = es.next_gaussian();
                    }
                    if h_rem <= 0.0 {
                        break;
                    }
                }
                debug_assert!(q[0] >= 0.0);
            }
        }
        emit!(step + 1, grid.time(step + 1));
    }
    outcome.psi_total = psi;
    Ok(outcome)
}

fn record_event(
    tau: f64,
    mu: f64,
    q: &mut [f64],
    p: &mut [f64],
    psi: &mut f64,
    collect: bool,
    outcome: &mut DriveOutcome,
) -> Result<()> {
    let inc = psi_increment(mu, p[0]);
    let p_minus = p.to_vec();
    q[0] = 0.0;
    p[0] = -p[0];
    *psi += inc;
    outcome.event_count += 1;
    if outcome.event_count > EVENT_STORM_LIMIT {
        return Err(Error::EventStorm {
            limit: EVENT_STORM_LIMIT,
        });
    }
    if collect {
        outcome.events.push(ReflectionEvent {
            tau,
            p_plus: p.to_vec(),
            p_minus,
            psi_increment: inc,
        });
    }
    Ok(())
}

/// One substep of length `h` of the plain (unfolded) system.
#[allow(clippy::too_many_arguments)]
fn advance(
    field: &FieldSpec,
    params: &SimParams,
    mu: f64,
    h: f64,
    q: &mut [f64],
    p: &mut [f64],
    dw: &[f64],
    aux: &[f64],
    ws: &mut Workspace,
) {
    field.drift(q, &mut ws.drift);
    kernel(field, params, mu, h, q, p, dw, aux, ws);
}

/// One substep of the sign-folded system: the drift is evaluated at the
/// folded position (|q1|, q2, ...) and its first component carries
/// sgn(q1); the caller has already folded the first noise components.
#[allow(clippy::too_many_arguments)]
fn advance_folded(
    field: &FieldSpec,
    params: &SimParams,
    mu: f64,
    h: f64,
    q: &mut [f64],
    p: &mut [f64],
    dw: &[f64],
    aux: &[f64],
    ws: &mut Workspace,
    sgn1: f64,
) {
    let q1 = q[0];
    q[0] = q1.abs();
    field.drift(q, &mut ws.drift);
    q[0] = q1;
    ws.drift[0] *= sgn1;
    kernel(field, params, mu, h, q, p, dw, aux, ws);
}

#[allow(clippy::too_many_arguments)]
fn kernel(
    field: &FieldSpec,
    params: &SimParams,
    mu: f64,
    h: f64,
    q: &mut [f64],
    p: &mut [f64],
    dw: &[f64],
    aux: &[f64],
    ws: &mut Workspace,
) {
    match params.scheme {
        Scheme::ExponentialOu => {
            let co = OuCoeffs::new(mu, h);
            advance_exponential(field, mu, &co, q, p, &ws.drift, dw, aux, &mut ws.xi, &mut ws.sig);
        }
        Scheme::EulerMaruyama => {
            advance_euler(field, mu, h, q, p, &ws.drift, dw, &mut ws.sig);
        }
    }
}

fn collect_trajectory<F>(
    init: &PhaseState,
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
    mode: DriveMode,
    check: F,
) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<()>,
{
    let n = noise.grid().n_steps();
    let mut states = Vec::with_capacity(n + 1);
    let mut psi = Vec::with_capacity(n + 1);
    let mut fail: Option<Error> = None;
    let outcome = drive_langevin(init, field, params, noise, mode, true, |_, t, q, p, ps| {
        if fail.is_none() {
            if let Err(e) = check(q) {
                fail = Some(e);
            }
            states.push(PhaseState {
                q: q.to_vec(),
                p: p.to_vec(),
                t,
            });
            psi.push(ps);
        }
    })?;
    if let Some(e) = fail {
        return Err(e);
    }
    Ok(Trajectory {
        times: noise.grid().times().to_vec(),
        states,
        events: outcome.events,
        psi,
    })
}

/// The recursively constructed Langevin process with elastic reflection.
/// q1 >= 0 at every node; events carry the interpolated hit times and the
/// momentum on both sides of each flip, and psi accumulates
/// mu * (-2 p1_minus) over the events.
pub fn simulate_reflected(
    init: &PhaseState,
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
) -> Result<Trajectory> {
    collect_trajectory(init, field, params, noise, DriveMode::Reflected, |_| Ok(()))
}

/// The sign-folded construction: integrate the folded system without
/// reflection and return the folded trajectory, with events reconstructed
/// from sign changes of the raw first coordinate. sgn(0) = +1.
pub fn simulate_folded(
    init: &PhaseState,
    field: &FieldSpec,
    params: &SimParams,
    noise: &NoisePath,
) -> Result<Trajectory> {
    collect_trajectory(init, field, params, noise, DriveMode::Folded, |_| Ok(()))
}

/// Total grid time (left-endpoint rule) the path spends in the rectangle
/// |q1| <= delta^2/2, |p1| <= delta/2.
pub fn occupation_time(traj: &Trajectory, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    let q_half = 0.5 * delta * delta;
    let p_half = 0.5 * delta;
    let mut total = 0.0;
    for n in 0..traj.times.len() - 1 {
        let s = &traj.states[n];
        if s.q[0].abs() <= q_half && s.p[0].abs() <= p_half {
            total += traj.times[n + 1] - traj.times[n];
        }
    }
    Ok(total)
}
