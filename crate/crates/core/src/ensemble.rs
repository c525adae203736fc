//! Monte Carlo engine: path ensembles, the momentum moment curve and its
//! small-mass trend, and the convergence study of the reflected marginal
//! toward the limiting reflected diffusion.
//!
//! Paths are independent tasks keyed by (master seed, path index); results
//! are always reduced in path-index order, so summaries are byte-identical
//! for any worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FieldSpec, PhaseState, SimParams};
use crate::noise::{NoiseKey, NoisePath};
use crate::reflector::{drive_langevin, occupation_time, simulate_reflected, DriveMode};
use crate::skorohod::drive_limit;
use crate::stats::{
    bootstrap_se, half_normal_cdf, invert_cdf, ks_one_sample, ks_two_sample, log_log_slope,
    wasserstein1, SampleSet,
};

/// Which simulator drives the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Free,
    Reflected,
    Folded,
    Limit,
}

impl SimMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimMode::Free => "free",
            SimMode::Reflected => "reflected",
            SimMode::Folded => "folded",
            SimMode::Limit => "limit",
        }
    }
}

/// Full configuration of an ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub mode: SimMode,
    pub field: FieldSpec,
    pub params: SimParams,
    pub q0: Vec<f64>,
    /// Ignored in `Limit` mode.
    pub p0: Vec<f64>,
    /// Times at which marginals are recorded; must lie on the grid.
    pub sample_times: Vec<f64>,
    /// Worker threads; 0 uses the global default.
    pub threads: usize,
}

/// A point estimate with the standard error of its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_err: f64,
}

/// Reflection-count statistics over the ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventStats {
    pub mean: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

/// Deterministic summary of one ensemble: marginal samples of the
/// reflected coordinate, the momentum moment curve, the running-sup
/// momentum estimate, event statistics and diagnostics.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub mode: SimMode,
    pub mu: f64,
    pub n_paths: u64,
    pub dt: f64,
    pub t_end: f64,
    pub sample_times: Vec<f64>,
    /// q1 samples per sample time, path-index order.
    pub q1_marginals: Vec<Vec<f64>>,
    /// E|p_t|^2 per sample time.
    pub mean_p_sq_curve: Vec<MomentEstimate>,
    /// E[sup_{t<=T} |mu p_t|^2] over grid nodes.
    pub sup_mu_p_sq: MomentEstimate,
    pub event_stats: EventStats,
    pub mean_psi_total: f64,
    /// min over paths and nodes of (q1)^2 + (p1)^2 (reflected modes).
    pub min_origin_sq: f64,
}

struct PathData {
    q1: Vec<f64>,
    p_sq: Vec<f64>,
    sup_mu_p_sq: f64,
    events: u64,
    psi_total: f64,
    min_origin_sq: f64,
}

fn sample_nodes(params: &SimParams, sample_times: &[f64]) -> Result<Vec<usize>> {
    let grid = params.grid()?;
    let mut nodes = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let idx = (t / params.dt).round() as usize;
        if idx >= grid.n_nodes() || (grid.time(idx) - t).abs() > 1e-9 * params.t_end.max(1.0) {
            return Err(Error::InvalidParam(format!(
                "sample time {t} does not lie on the grid"
            )));
        }
        nodes.push(idx);
    }
    Ok(nodes)
}

fn run_one_path(cfg: &EnsembleConfig, nodes: &[usize], path: u64) -> Result<PathData> {
    let grid = cfg.params.grid()?;
    let noise = NoisePath::sample(
        NoiseKey {
            seed: cfg.params.seed,
            path,
        },
        cfg.field.dim(),
        grid,
    );
    let mu = cfg.params.mu;
    let mut q1 = vec![0.0; nodes.len()];
    let mut p_sq = vec![0.0; nodes.len()];
    let mut sup_mu_p_sq = 0.0f64;

    if cfg.mode == SimMode::Limit {
        let (pushes, phi_total) = {
            let q1_ref = &mut q1;
            drive_limit(&cfg.q0, &cfg.field, &cfg.params, &noise, |n, _, q, _, _| {
                for (k, &node) in nodes.iter().enumerate() {
                    if node == n {
                        q1_ref[k] = q[0];
                    }
                }
            })?
        };
        return Ok(PathData {
            q1,
            p_sq,
            sup_mu_p_sq: 0.0,
            events: pushes,
            psi_total: phi_total,
            min_origin_sq: f64::INFINITY,
        });
    }

    let mode = match cfg.mode {
        SimMode::Free => DriveMode::Free,
        SimMode::Reflected => DriveMode::Reflected,
        SimMode::Folded => DriveMode::Folded,
        SimMode::Limit => unreachable!(),
    };
    let init = PhaseState::new(cfg.q0.clone(), cfg.p0.clone(), 0.0)?;
    let outcome = {
        let q1_ref = &mut q1;
        let p_sq_ref = &mut p_sq;
        let sup_ref = &mut sup_mu_p_sq;
        drive_langevin(
            &init,
            &cfg.field,
            &cfg.params,
            &noise,
            mode,
            false,
            |n, _, q, p, _| {
                let norm_sq: f64 = p.iter().map(|x| x * x).sum();
                *sup_ref = sup_ref.max(mu * mu * norm_sq);
                for (k, &node) in nodes.iter().enumerate() {
                    if node == n {
                        q1_ref[k] = q[0];
                        p_sq_ref[k] = norm_sq;
                    }
                }
            },
        )?
    };
    Ok(PathData {
        q1,
        p_sq,
        sup_mu_p_sq,
        events: outcome.event_count,
        psi_total: outcome.psi_total,
        min_origin_sq: outcome.min_origin_sq,
    })
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        Ok(job())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParam(format!("could not build thread pool: {e}")))?;
        Ok(pool.install(job))
    }
}

fn mean_se(values: &[f64]) -> MomentEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MomentEstimate {
        value: mean,
        std_err: (var / n).sqrt(),
    }
}

fn percentile(sorted: &[u64], q: f64) -> u64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Run `n_paths` independent paths and reduce the summaries in path-index
/// order. Deterministic given (config, master seed), independent of the
/// worker count.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleSummary> {
    cfg.params.validate()?;
    let nodes = sample_nodes(&cfg.params, &cfg.sample_times)?;
    let n_paths = cfg.params.n_paths;
    let results: Vec<Result<PathData>> = with_pool(cfg.threads, || {
        (0..n_paths)
            .into_par_iter()
            .map(|path| {
                run_one_path(cfg, &nodes, path).map_err(|e| Error::Path {
                    index: path,
                    source: Box::new(e),
                })
            })
            .collect()
    })?;

    let n = n_paths as usize;
    let mut q1_marginals = vec![Vec::with_capacity(n); nodes.len()];
    let mut p_sq_cols = vec![Vec::with_capacity(n); nodes.len()];
    let mut sups = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut psi_sum = 0.0;
    let mut min_origin_sq = f64::INFINITY;
    for res in results {
        let data = res?;
        for (k, &v) in data.q1.iter().enumerate() {
            q1_marginals[k].push(v);
        }
        for (k, &v) in data.p_sq.iter().enumerate() {
            p_sq_cols[k].push(v);
        }
        sups.push(data.sup_mu_p_sq);
        events.push(data.events);
        psi_sum += data.psi_total;
        min_origin_sq = min_origin_sq.min(data.min_origin_sq);
    }
    let mean_p_sq_curve = p_sq_cols.iter().map(|col| mean_se(col)).collect();
    let sup_mu_p_sq = mean_se(&sups);
    let mut sorted_events = events.clone();
    sorted_events.sort_unstable();
    let event_stats = EventStats {
        mean: events.iter().map(|&e| e as f64).sum::<f64>() / n as f64,
        p50: percentile(&sorted_events, 0.5),
        p90: percentile(&sorted_events, 0.9),
        p99: percentile(&sorted_events, 0.99),
        max: *sorted_events.last().unwrap(),
    };
    Ok(EnsembleSummary {
        mode: cfg.mode,
        mu: cfg.params.mu,
        n_paths,
        dt: cfg.params.dt,
        t_end: cfg.params.t_end,
        sample_times: cfg.sample_times.clone(),
        q1_marginals,
        mean_p_sq_curve,
        sup_mu_p_sq,
        event_stats,
        mean_psi_total: psi_sum / n as f64,
        min_origin_sq,
    })
}

/// Derive per-mu run parameters: the grid is refined so dt <= mu/10,
/// keeping the horizon fixed.
pub fn params_for_mu(base: &SimParams, mu: f64) -> SimParams {
    let target_dt = base.dt.min(mu / 10.0);
    let n_steps = (base.t_end / target_dt).ceil().max(1.0);
    SimParams {
        mu,
        dt: base.t_end / n_steps,
        ..*base
    }
}

/// One row of the small-mass momentum-sup trend.
#[derive(Debug, Clone, Copy)]
pub struct SupMomentRow {
    pub mu: f64,
    pub estimate: MomentEstimate,
}

fn check_mu_list(mu_list: &[f64]) -> Result<()> {
    if mu_list.is_empty() {
        return Err(Error::InvalidParam("mu list must be nonempty".into()));
    }
    if mu_list.iter().any(|&mu| mu <= 0.0) {
        return Err(Error::InvalidParam("mu values must be positive".into()));
    }
    if mu_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParam(
            "mu list must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Estimate E[sup_{t<=T} |mu p_t|^2] over a decreasing mu list, one
/// reflected ensemble per mu.
pub fn sup_momentum_moment(cfg: &EnsembleConfig, mu_list: &[f64]) -> Result<Vec<SupMomentRow>> {
    check_mu_list(mu_list)?;
    let mut rows = Vec::with_capacity(mu_list.len());
    for &mu in mu_list {
        let mut sub = cfg.clone();
        sub.params = params_for_mu(&cfg.params, mu);
        let summary = run_ensemble(&sub)?;
        rows.push(SupMomentRow {
            mu,
            estimate: summary.sup_mu_p_sq,
        });
    }
    Ok(rows)
}

/// One sample time of the moment-curve comparison.
#[derive(Debug, Clone, Copy)]
pub struct MomentRow {
    pub t: f64,
    pub empirical: f64,
    pub std_err: f64,
    pub reference: f64,
    pub z: f64,
}

/// Comparison of the empirical E|p_t|^2 curve against the exact
/// Ornstein-Uhlenbeck value e^{-2t/mu}|p0|^2 + (r/(2mu))(1 - e^{-2t/mu}).
#[derive(Debug, Clone)]
pub struct MomentCurveReport {
    pub rows: Vec<MomentRow>,
    /// True when every sample time is within 4 standard errors.
    pub pass: bool,
}

/// Free-space moment check; requires b = 0 and identity diffusion, the
/// regime where the reference is an equality.
pub fn moment_bound_check(cfg: &EnsembleConfig) -> Result<MomentCurveReport> {
    if !cfg.field.drift_is_zero() || !cfg.field.diffusion_is_identity() {
        return Err(Error::InvalidParam(
            "the moment curve reference requires b = 0 and identity diffusion".into(),
        ));
    }
    let mut sub = cfg.clone();
    sub.mode = SimMode::Free;
    let summary = run_ensemble(&sub)?;
    let r = cfg.field.dim() as f64;
    let mu = cfg.params.mu;
    let p0_sq: f64 = cfg.p0.iter().map(|x| x * x).sum();
    let mut rows = Vec::with_capacity(summary.sample_times.len());
    let mut pass = true;
    for (k, &t) in summary.sample_times.iter().enumerate() {
        let est = summary.mean_p_sq_curve[k];
        let decay = (-2.0 * t / mu).exp();
        let reference = decay * p0_sq + r / (2.0 * mu) * (1.0 - decay);
        let z = if est.std_err > 0.0 {
            (est.value - reference) / est.std_err
        } else {
            0.0
        };
        if z.abs() > 4.0 {
            pass = false;
        }
        rows.push(MomentRow {
            t,
            empirical: est.value,
            std_err: est.std_err,
            reference,
            z,
        });
    }
    Ok(MomentCurveReport { rows, pass })
}

/// Reference law for the convergence study.
#[derive(Debug, Clone)]
pub enum ReferenceLaw {
    /// Analytic folded-normal marginal of reflected Brownian motion
    /// started at `start` (b = 0).
    HalfNormal { start: f64 },
    /// Marginal of a high-resolution `simulate_limit` ensemble (grid one
    /// decade finer than the study grid, disjoint seed stream).
    SimulatedLimit { n_paths: u64 },
}

/// One mu of the convergence table.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub mu: f64,
    pub ks: f64,
    pub ks_se: f64,
    pub w1: f64,
    pub sup_mu_p_sq: f64,
    pub mean_events: f64,
}

const REFERENCE_SEED_XOR: u64 = 0x5bd1e995_9e3779b9;
const BOOTSTRAP_REPLICATES: usize = 200;

/// Per-mu distances of the reflected q1 marginal at the horizon to the
/// reference law, with bootstrap standard errors on the KS statistic.
pub fn convergence_study(
    cfg: &EnsembleConfig,
    mu_list: &[f64],
    reference: &ReferenceLaw,
) -> Result<Vec<ConvergenceRow>> {
    check_mu_list(mu_list)?;
    let t_end = cfg.params.t_end;

    // reference sample, sorted, equal in size to the study ensembles
    let n = cfg.params.n_paths as usize;
    let reference_sample: Vec<f64> = match reference {
        ReferenceLaw::HalfNormal { start } => {
            let hi = start + 10.0 * t_end.sqrt() + 1.0;
            (0..n)
                .map(|i| {
                    let u = (i as f64 + 0.5) / n as f64;
                    invert_cdf(
                        |x| half_normal_cdf(x, t_end, *start).unwrap(),
                        u,
                        0.0,
                        hi,
                    )
                })
                .collect()
        }
        ReferenceLaw::SimulatedLimit { n_paths } => {
            let mut sub = cfg.clone();
            sub.mode = SimMode::Limit;
            sub.params.n_paths = *n_paths;
            sub.params.seed ^= REFERENCE_SEED_XOR;
            // one decade finer than the base grid
            let n_steps = cfg.params.n_steps() * 10;
            sub.params.dt = t_end / n_steps as f64;
            sub.sample_times = vec![t_end];
            let summary = run_ensemble(&sub)?;
            let m = summary.q1_marginals[0].len();
            let mut sorted = summary.q1_marginals[0].clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            // equal-size quantile subsample for the W1 pairing
            (0..n)
                .map(|i| sorted[((i as f64 + 0.5) * m as f64 / n as f64) as usize])
                .collect()
        }
    };
    let reference_set = SampleSet::new(reference_sample)?;

    let mut rows = Vec::with_capacity(mu_list.len());
    for (k, &mu) in mu_list.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.mode = cfg.mode;
        sub.params = params_for_mu(&cfg.params, mu);
        sub.sample_times = vec![t_end];
        let summary = run_ensemble(&sub)?;
        let sample = SampleSet::new(summary.q1_marginals[0].clone())?;
        let (ks, ks_se) = match reference {
            ReferenceLaw::HalfNormal { start } => {
                let cdf = |x: f64| half_normal_cdf(x, t_end, *start).unwrap();
                let ks = ks_one_sample(&sample, cdf);
                let se = bootstrap_se(
                    &sample,
                    BOOTSTRAP_REPLICATES,
                    cfg.params.seed.wrapping_add(k as u64),
                    |s| ks_one_sample(s, cdf),
                );
                (ks, se)
            }
            ReferenceLaw::SimulatedLimit { .. } => {
                let ks = ks_two_sample(&sample, &reference_set);
                let se = bootstrap_se(
                    &sample,
                    BOOTSTRAP_REPLICATES,
                    cfg.params.seed.wrapping_add(k as u64),
                    |s| ks_two_sample(s, &reference_set),
                );
                (ks, se)
            }
        };
        let w1 = wasserstein1(&sample, &reference_set)?;
        rows.push(ConvergenceRow {
            mu,
            ks,
            ks_se,
            w1,
            sup_mu_p_sq: summary.sup_mu_p_sq.value,
            mean_events: summary.event_stats.mean,
        });
    }
    Ok(rows)
}

/// One delta of the occupation-time study.
#[derive(Debug, Clone, Copy)]
pub struct OccupancyRow {
    pub delta: f64,
    pub mean_occupation: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone)]
pub struct OccupancyStudy {
    pub rows: Vec<OccupancyRow>,
    /// OLS slope of ln(mean occupation) against ln(delta).
    pub slope: f64,
}

/// Ensemble mean of the time spent in the shrinking rectangles
/// |q1| <= delta^2/2, |p1| <= delta/2, and the log-log slope across the
/// delta list.
pub fn occupancy_study(cfg: &EnsembleConfig, deltas: &[f64]) -> Result<OccupancyStudy> {
    if deltas.is_empty() {
        return Err(Error::InvalidParam("delta list must be nonempty".into()));
    }
    for &d in deltas {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::InvalidParam(format!(
                "delta must lie in (0,1), got {d}"
            )));
        }
    }
    cfg.params.validate()?;
    let n_paths = cfg.params.n_paths;
    let per_path: Vec<Result<Vec<f64>>> = with_pool(cfg.threads, || {
        (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let grid = cfg.params.grid()?;
                let noise = NoisePath::sample(
                    NoiseKey {
                        seed: cfg.params.seed,
                        path,
                    },
                    cfg.field.dim(),
                    grid,
                );
                let init = PhaseState::new(cfg.q0.clone(), cfg.p0.clone(), 0.0)?;
                let traj = simulate_reflected(&init, &cfg.field, &cfg.params, &noise)?;
                deltas
                    .iter()
                    .map(|&d| occupation_time(&traj, d))
                    .collect::<Result<Vec<f64>>>()
                    .map_err(|e| Error::Path {
                        index: path,
                        source: Box::new(e),
                    })
            })
            .collect()
    })?;

    let mut columns = vec![Vec::with_capacity(n_paths as usize); deltas.len()];
    for res in per_path {
        let occ = res?;
        for (k, &v) in occ.iter().enumerate() {
            columns[k].push(v);
        }
    }
    let rows: Vec<OccupancyRow> = deltas
        .iter()
        .zip(&columns)
        .map(|(&delta, col)| {
            let est = mean_se(col);
            OccupancyRow {
                delta,
                mean_occupation: est.value,
                std_err: est.std_err,
            }
        })
        .collect();
    if rows.iter().any(|r| r.mean_occupation <= 0.0) {
        return Err(Error::InvalidParam(
            "occupation mean vanished for some delta; increase n_paths or the horizon".into(),
        ));
    }
    let slope = log_log_slope(
        &rows.iter().map(|r| r.delta).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.mean_occupation).collect::<Vec<_>>(),
    );
    Ok(OccupancyStudy { rows, slope })
}
