//! Canonical CSV serialization. Column orders are fixed and every float is
//! rendered with 17 significant digits, so identical results produce
//! byte-identical files and round-trip exactly.

use crate::ensemble::{ConvergenceRow, EnsembleSummary, MomentCurveReport, OccupancyStudy};
use crate::integrator::Trajectory;
use crate::reflector::ReflectionEvent;
use crate::skorohod::SkorohodSolution;

/// 17-significant-digit scientific notation; round-trips any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

/// Columns: path_id, t, q1..qr, p1..pr, psi.
pub fn trajectory_csv(entries: &[(u64, &Trajectory)]) -> String {
    let dim = entries.first().map_or(0, |(_, t)| t.dim());
    let mut out = String::new();
    let mut header = vec!["path_id".to_string(), "t".to_string()];
    for j in 1..=dim {
        header.push(format!("q{j}"));
    }
    for j in 1..=dim {
        header.push(format!("p{j}"));
    }
    header.push("psi".to_string());
    push_row(&mut out, &header);
    for (path_id, traj) in entries {
        for (n, state) in traj.states.iter().enumerate() {
            let mut row = vec![path_id.to_string(), fmt_f64(traj.times[n])];
            row.extend(state.q.iter().map(|&x| fmt_f64(x)));
            row.extend(state.p.iter().map(|&x| fmt_f64(x)));
            row.push(fmt_f64(traj.psi[n]));
            push_row(&mut out, &row);
        }
    }
    out
}

/// Columns: path_id, k, tau, p1_minus, psi_increment.
pub fn events_csv(entries: &[(u64, &[ReflectionEvent])]) -> String {
    let mut out = String::from("path_id,k,tau,p1_minus,psi_increment\n");
    for (path_id, events) in entries {
        for (k, ev) in events.iter().enumerate() {
            push_row(
                &mut out,
                &[
                    path_id.to_string(),
                    k.to_string(),
                    fmt_f64(ev.tau),
                    fmt_f64(ev.p_minus[0]),
                    fmt_f64(ev.psi_increment),
                ],
            );
        }
    }
    out
}

/// Columns: t, w1..wr, q1..qr, phi1, tv.
pub fn skorohod_csv(sol: &SkorohodSolution) -> String {
    let dim = sol.dim();
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    for j in 1..=dim {
        header.push(format!("w{j}"));
    }
    for j in 1..=dim {
        header.push(format!("q{j}"));
    }
    header.push("phi1".to_string());
    header.push("tv".to_string());
    push_row(&mut out, &header);
    for n in 0..sol.n_nodes() {
        let mut row = vec![fmt_f64(sol.times()[n])];
        row.extend(sol.w_node(n).iter().map(|&x| fmt_f64(x)));
        row.extend(sol.q_node(n).iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(sol.phi1()[n]));
        row.push(fmt_f64(sol.total_variation()[n]));
        push_row(&mut out, &row);
    }
    out
}

/// Columns: mu, ks, ks_se, w1, sup_mu_p_sq, mean_events.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("mu,ks,ks_se,w1,sup_mu_p_sq,mean_events\n");
    for r in rows {
        push_row(
            &mut out,
            &[
                fmt_f64(r.mu),
                fmt_f64(r.ks),
                fmt_f64(r.ks_se),
                fmt_f64(r.w1),
                fmt_f64(r.sup_mu_p_sq),
                fmt_f64(r.mean_events),
            ],
        );
    }
    out
}

/// Columns: t, mean_p_sq, std_err, reference, z.
pub fn moment_curve_csv(report: &MomentCurveReport) -> String {
    let mut out = String::from("t,mean_p_sq,std_err,reference,z\n");
    for r in &report.rows {
        push_row(
            &mut out,
            &[
                fmt_f64(r.t),
                fmt_f64(r.empirical),
                fmt_f64(r.std_err),
                fmt_f64(r.reference),
                fmt_f64(r.z),
            ],
        );
    }
    out
}

/// Columns: delta, mean_occupation, std_err.
pub fn occupancy_csv(study: &OccupancyStudy) -> String {
    let mut out = String::from("delta,mean_occupation,std_err\n");
    for r in &study.rows {
        push_row(
            &mut out,
            &[
                fmt_f64(r.delta),
                fmt_f64(r.mean_occupation),
                fmt_f64(r.std_err),
            ],
        );
    }
    out
}

/// Key/value summary table of an ensemble.
pub fn summary_csv(s: &EnsembleSummary) -> String {
    let mut out = String::from("metric,value\n");
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push(',');
        out.push_str(&v);
        out.push('\n');
    };
    kv("mode", s.mode.as_str().to_string());
    kv("mu", fmt_f64(s.mu));
    kv("n_paths", s.n_paths.to_string());
    kv("dt", fmt_f64(s.dt));
    kv("t_end", fmt_f64(s.t_end));
    kv("sup_mu_p_sq", fmt_f64(s.sup_mu_p_sq.value));
    kv("sup_mu_p_sq_se", fmt_f64(s.sup_mu_p_sq.std_err));
    kv("events_mean", fmt_f64(s.event_stats.mean));
    kv("events_p50", s.event_stats.p50.to_string());
    kv("events_p90", s.event_stats.p90.to_string());
    kv("events_p99", s.event_stats.p99.to_string());
    kv("events_max", s.event_stats.max.to_string());
    kv("mean_psi_total", fmt_f64(s.mean_psi_total));
    kv("min_origin_sq", fmt_f64(s.min_origin_sq));
    for (k, t) in s.sample_times.iter().enumerate() {
        kv(
            &format!("mean_p_sq[t={}]", fmt_f64(*t)),
            fmt_f64(s.mean_p_sq_curve[k].value),
        );
        kv(
            &format!("mean_p_sq_se[t={}]", fmt_f64(*t)),
            fmt_f64(s.mean_p_sq_curve[k].std_err),
        );
    }
    out
}

/// Columns: sample_time, path_id, q1.
pub fn marginals_csv(s: &EnsembleSummary) -> String {
    let mut out = String::from("sample_time,path_id,q1\n");
    for (k, &t) in s.sample_times.iter().enumerate() {
        for (path_id, &v) in s.q1_marginals[k].iter().enumerate() {
            push_row(
                &mut out,
                &[fmt_f64(t), path_id.to_string(), fmt_f64(v)],
            );
        }
    }
    out
}
