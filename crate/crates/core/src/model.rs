//! Phase-space states, the half-space domain, and the drift/diffusion
//! catalog.
//!
//! The configuration space is the half-space D = R_+ x R^{r-1}: the first
//! coordinate q1 is the reflected one. Drifts come from a fixed catalog of
//! globally Lipschitz fields with known constants; diffusions are constant
//! full-rank matrices (identity in the small-mass limit experiments).

use crate::error::{Error, Result};
use crate::noise::TimeGrid;

/// Position/momentum pair at a time point. q1 is the reflected coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>, t: f64) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "position ({}) and momentum ({}) must have the same positive dimension",
                q.len(),
                p.len()
            )));
        }
        Ok(Self { q, p, t })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Check the standing assumptions of a reflected run: q1 >= 0 and
    /// (q1)^2 + (p1)^2 > 0.
    pub fn validate_reflected_init(&self) -> Result<()> {
        if self.q[0] < 0.0 {
            return Err(Error::OutsideDomain(self.q[0]));
        }
        if self.q[0] * self.q[0] + self.p[0] * self.p[0] == 0.0 {
            return Err(Error::DegenerateInit);
        }
        Ok(())
    }
}

/// Drift forms in the catalog. All are globally Lipschitz with an explicit
/// constant.
#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    Zero,
    Constant(Vec<f64>),
    /// q -> A q + c with a bounded matrix A.
    Linear {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// Componentwise q -> gain * tanh(q).
    Tanh { gain: f64 },
}

/// Diffusion forms: constant matrices only, required full rank.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion {
    Identity,
    Constant(Vec<Vec<f64>>),
}

/// A validated drift/diffusion pair on R^r.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    dim: usize,
    drift: Drift,
    diffusion: Diffusion,
    lipschitz: f64,
}

/// Parameters for [`make_field`]. Unused entries may be left `None`.
#[derive(Debug, Clone, Default)]
pub struct FieldParams {
    /// Gain for the tanh drift.
    pub gain: Option<f64>,
    /// Constant drift vector.
    pub constant: Option<Vec<f64>>,
    /// Matrix of the linear drift.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Offset of the linear drift.
    pub offset: Option<Vec<f64>>,
    /// Constant diffusion matrix; identity when absent.
    pub sigma: Option<Vec<Vec<f64>>>,
}

/// Build a validated field from a catalog name.
///
/// Catalog: `zero-drift-identity`, `constant-drift`, `linear-drift`,
/// `tanh-drift`. Every entry accepts an optional constant `sigma`
/// (full-rank) in place of the identity diffusion.
pub fn make_field(name: &str, dim: usize, params: &FieldParams) -> Result<FieldSpec> {
    if dim == 0 {
        return Err(Error::DimensionMismatch("dimension must be positive".into()));
    }
    let drift = match name {
        "zero-drift-identity" => Drift::Zero,
        "constant-drift" => {
            let c = params
                .constant
                .clone()
                .ok_or_else(|| Error::InvalidParam("constant-drift needs `constant`".into()))?;
            if c.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "constant drift has length {}, dimension is {dim}",
                    c.len()
                )));
            }
            Drift::Constant(c)
        }
        "linear-drift" => {
            let matrix = params
                .matrix
                .clone()
                .ok_or_else(|| Error::InvalidParam("linear-drift needs `matrix`".into()))?;
            let offset = params.offset.clone().unwrap_or_else(|| vec![0.0; dim]);
            check_square(&matrix, dim)?;
            if offset.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "linear offset has length {}, dimension is {dim}",
                    offset.len()
                )));
            }
            Drift::Linear { matrix, offset }
        }
        "tanh-drift" => {
            let gain = params
                .gain
                .ok_or_else(|| Error::InvalidParam("tanh-drift needs `gain`".into()))?;
            if !gain.is_finite() {
                return Err(Error::InvalidParam("tanh gain must be finite".into()));
            }
            Drift::Tanh { gain }
        }
        other => return Err(Error::UnknownCatalog(other.to_string())),
    };

    let diffusion = match &params.sigma {
        None => Diffusion::Identity,
        Some(sigma) => {
            check_square(sigma, dim)?;
            if !full_rank(sigma) {
                return Err(Error::RankDeficientDiffusion);
            }
            Diffusion::Constant(sigma.clone())
        }
    };

    let lipschitz = match &drift {
        Drift::Zero | Drift::Constant(_) => 0.0,
        // Frobenius norm bounds the operator norm, so it is a valid
        // Lipschitz constant for q -> Aq + c.
        Drift::Linear { matrix, .. } => matrix
            .iter()
            .flat_map(|row| row.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt(),
        // sup |d/dx gain*tanh(x)| = |gain|
        Drift::Tanh { gain } => gain.abs(),
    };

    Ok(FieldSpec {
        dim,
        drift,
        diffusion,
        lipschitz,
    })
}

fn check_square(m: &[Vec<f64>], dim: usize) -> Result<()> {
    if m.len() != dim || m.iter().any(|row| row.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "matrix must be {dim}x{dim}"
        )));
    }
    if m.iter().flat_map(|r| r.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParam("matrix entries must be finite".into()));
    }
    Ok(())
}

/// Rank check by Gaussian elimination with partial pivoting.
fn full_rank(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return false;
    }
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pivot <= 1e-12 * scale {
            return false;
        }
        a.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    true
}

impl FieldSpec {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift_form(&self) -> &Drift {
        &self.drift
    }

    pub fn diffusion_form(&self) -> &Diffusion {
        &self.diffusion
    }

    /// Declared global Lipschitz constant of the drift.
    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }

    pub fn drift_is_zero(&self) -> bool {
        matches!(self.drift, Drift::Zero)
    }

    pub fn diffusion_is_identity(&self) -> bool {
        matches!(self.diffusion, Diffusion::Identity)
    }

    /// Evaluate the drift b(q) into `out`.
    pub fn drift(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.drift {
            Drift::Zero => out.fill(0.0),
            Drift::Constant(c) => out.copy_from_slice(c),
            Drift::Linear { matrix, offset } => {
                for (i, row) in matrix.iter().enumerate() {
                    out[i] = offset[i] + row.iter().zip(q).map(|(a, x)| a * x).sum::<f64>();
                }
            }
            Drift::Tanh { gain } => {
                for (o, x) in out.iter_mut().zip(q) {
                    *o = gain * x.tanh();
                }
            }
        }
    }

    /// out = Sigma * v.
    pub fn apply_diffusion(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        match &self.diffusion {
            Diffusion::Identity => out.copy_from_slice(v),
            Diffusion::Constant(sigma) => {
                for (i, row) in sigma.iter().enumerate() {
                    out[i] = row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
                }
            }
        }
    }
}

/// Integrator scheme selector. The exponential scheme integrates the
/// linear damping exactly and tolerates dt independent of mu; explicit
/// Euler-Maruyama is kept for cross-checks and carries the dt <= mu/10
/// stiffness guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    ExponentialOu,
    EulerMaruyama,
}

/// Run parameters shared by all simulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    /// Mass parameter mu > 0.
    pub mu: f64,
    /// Grid step.
    pub dt: f64,
    /// Horizon T.
    pub t_end: f64,
    /// Master seed; all randomness derives from it.
    pub seed: u64,
    /// Ensemble size.
    pub n_paths: u64,
    pub scheme: Scheme,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::NonPositiveMu(self.mu));
        }
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveDt(self.dt));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParam(format!(
                "horizon must be positive, got {}",
                self.t_end
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParam("n_paths must be at least 1".into()));
        }
        let steps = self.t_end / self.dt;
        if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return Err(Error::InvalidParam(format!(
                "dt = {} must divide the horizon {}",
                self.dt, self.t_end
            )));
        }
        if self.scheme == Scheme::EulerMaruyama && self.dt > self.mu / 10.0 {
            return Err(Error::StiffStep {
                dt: self.dt,
                mu: self.mu,
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        self.validate()?;
        TimeGrid::uniform(self.t_end, self.n_steps())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_trivial_cases() {
        let f = make_field("zero-drift-identity", 1, &FieldParams::default()).unwrap();
        let mut out = [9.0];
        f.drift(&[3.0], &mut out);
        assert_eq!(out, [0.0]);
        assert!(f.diffusion_is_identity());
        assert_eq!(f.lipschitz_constant(), 0.0);

        let f = make_field(
            "constant-drift",
            2,
            &FieldParams {
                constant: Some(vec![-1.0, 0.0]),
                ..Default::default()
            },
        )
        .unwrap();
        let mut out = [0.0; 2];
        f.drift(&[5.0, -2.0], &mut out);
        assert_eq!(out, [-1.0, 0.0]);
    }

    #[test]
    fn tanh_drift_and_its_constant() {
        // sup |d/dq 2 tanh(q)| = 2, attained at q = 0
        let f = make_field(
            "tanh-drift",
            1,
            &FieldParams {
                gain: Some(2.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(f.lipschitz_constant(), 2.0);
        let mut out = [0.0];
        f.drift(&[0.7], &mut out);
        assert!((out[0] - 2.0 * 0.7f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(
            make_field("no-such-field", 1, &FieldParams::default()),
            Err(Error::UnknownCatalog(_))
        ));
        assert!(matches!(
            make_field(
                "constant-drift",
                2,
                &FieldParams {
                    constant: Some(vec![1.0]),
                    ..Default::default()
                }
            ),
            Err(Error::DimensionMismatch(_))
        ));
        // rank-deficient sigma
        assert!(matches!(
            make_field(
                "zero-drift-identity",
                2,
                &FieldParams {
                    sigma: Some(vec![vec![1.0, 2.0], vec![2.0, 4.0]]),
                    ..Default::default()
                }
            ),
            Err(Error::RankDeficientDiffusion)
        ));
        // full-rank sigma accepted
        let f = make_field(
            "zero-drift-identity",
            2,
            &FieldParams {
                sigma: Some(vec![vec![2.0, 1.0], vec![0.0, 1.0]]),
                ..Default::default()
            },
        )
        .unwrap();
        let mut out = [0.0; 2];
        f.apply_diffusion(&[1.0, 1.0], &mut out);
        assert_eq!(out, [3.0, 1.0]);
    }

    #[test]
    fn constant_diffusion_is_state_independent() {
        let f = make_field(
            "tanh-drift",
            2,
            &FieldParams {
                gain: Some(1.0),
                sigma: Some(vec![vec![1.0, 0.5], vec![0.0, 2.0]]),
                ..Default::default()
            },
        )
        .unwrap();
        // Sigma(q1) v == Sigma(q2) v exactly: evaluation never touches q
        let v = [0.3, -0.7];
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        f.apply_diffusion(&v, &mut a);
        f.apply_diffusion(&v, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn params_validation() {
        let good = SimParams {
            mu: 0.5,
            dt: 0.01,
            t_end: 1.0,
            seed: 1,
            n_paths: 10,
            scheme: Scheme::ExponentialOu,
        };
        assert!(good.validate().is_ok());
        assert_eq!(good.n_steps(), 100);

        assert!(matches!(
            SimParams { mu: 0.0, ..good }.validate(),
            Err(Error::NonPositiveMu(_))
        ));
        assert!(matches!(
            SimParams { dt: -0.1, ..good }.validate(),
            Err(Error::NonPositiveDt(_))
        ));
        // stiffness guard applies to the explicit scheme only
        let explicit = SimParams {
            mu: 0.05,
            scheme: Scheme::EulerMaruyama,
            ..good
        };
        assert!(matches!(explicit.validate(), Err(Error::StiffStep { .. })));
        let exponential = SimParams { mu: 0.05, ..good };
        assert!(exponential.validate().is_ok());
    }

    #[test]
    fn init_validation() {
        let s = PhaseState::new(vec![0.0], vec![0.0], 0.0).unwrap();
        assert!(matches!(
            s.validate_reflected_init(),
            Err(Error::DegenerateInit)
        ));
        let s = PhaseState::new(vec![-0.1], vec![1.0], 0.0).unwrap();
        assert!(matches!(
            s.validate_reflected_init(),
            Err(Error::OutsideDomain(_))
        ));
        let s = PhaseState::new(vec![0.0], vec![1.0], 0.0).unwrap();
        assert!(s.validate_reflected_init().is_ok());
        assert!(PhaseState::new(vec![1.0], vec![1.0, 2.0], 0.0).is_err());
    }
}
