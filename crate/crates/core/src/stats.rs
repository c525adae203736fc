//! Statistical primitives: empirical CDFs, Kolmogorov-Smirnov and
//! Wasserstein-1 distances, moment estimates with standard errors, and
//! analytic reference CDFs for the reflected-diffusion marginals.

use crate::error::{Error, Result};
use crate::noise::GaussianStream;

/// A finite, sorted sample of reals. NaNs are rejected on construction and
/// the values are kept in ascending order, so distance computations can
/// assume a valid total order.
#[derive(Debug, Clone)]
pub struct SampleSet {
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample);
        }
        values.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sorted values, ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance. Zero for singleton samples.
    pub fn variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    }

    /// Standard error of the sample mean.
    pub fn std_err(&self) -> f64 {
        (self.variance() / self.len() as f64).sqrt()
    }

    /// Nearest-rank quantile, q in [0, 1].
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.len();
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[idx]
    }
}

/// One-sample Kolmogorov-Smirnov statistic: sup over the empirical jump
/// points of |F_emp - F|, evaluated at both one-sided limits of each jump.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &SampleSet, cdf: F) -> f64 {
    let n = samples.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in samples.values().iter().enumerate() {
        let f = cdf(x);
        let lower = (f - i as f64 / n).abs();
        let upper = ((i + 1) as f64 / n - f).abs();
        sup = sup.max(lower).max(upper);
    }
    sup
}

/// Two-sample Kolmogorov-Smirnov statistic: sup over the pooled sample
/// points of |F_a - F_b|. Ties are handled by advancing both empirical
/// CDFs past the tied value before comparing.
pub fn ks_two_sample(a: &SampleSet, b: &SampleSet) -> f64 {
    let xs = a.values();
    let ys = b.values();
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < xs.len() || j < ys.len() {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Exact Wasserstein-1 distance between two equal-size samples: the mean
/// absolute difference of the sorted (quantile-coupled) values.
pub fn wasserstein1(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    let total: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(total / a.len() as f64)
}

/// Classical large-sample two-sample KS null quantile, coeff * sqrt((n+m)/(n m)).
/// coeff = 1.36 for the 5% level, 1.63 for the 1% level.
pub fn ks_two_sample_threshold(n: usize, m: usize, coeff: f64) -> f64 {
    coeff * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Bootstrap standard error of a statistic of one sample. Resampling is
/// driven by the deterministic counter generator, so repeated calls with
/// the same seed reproduce the same estimate.
pub fn bootstrap_se<S: Fn(&SampleSet) -> f64>(
    samples: &SampleSet,
    replicates: usize,
    seed: u64,
    stat: S,
) -> f64 {
    let n = samples.len();
    let vals = samples.values();
    let mut stats = Vec::with_capacity(replicates);
    for b in 0..replicates {
        let mut stream = GaussianStream::for_bootstrap(seed, b as u64);
        let mut resampled = Vec::with_capacity(n);
        for _ in 0..n {
            let idx = (stream.next_uniform() * n as f64) as usize;
            resampled.push(vals[idx.min(n - 1)]);
        }
        let set = SampleSet::new(resampled).expect("resample of a valid sample is valid");
        stats.push(stat(&set));
    }
    let m = stats.iter().sum::<f64>() / replicates as f64;
    let var = stats.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (replicates - 1) as f64;
    var.sqrt()
}

/// Ordinary least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

// --- analytic reference CDFs ------------------------------------------------

/// Complementary error function, Cody's rational Chebyshev approximation
/// (the CALERF scheme: three regimes split at |x| = 0.46875 and 4.0).
/// Absolute error is a few ulps, far below the 1e-12 budget the oracle
/// comparisons assume; accuracy is pinned by tests against externally
/// computed reference values.
fn erfc_cody(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI_INV: f64 = 5.6418958354775628695e-1; // 1/sqrt(pi)
    const THRESH: f64 = 0.46875;
    const XBIG: f64 = 26.543;

    let y = x.abs();
    if y <= THRESH {
        // erfc = 1 - erf on the central band
        let ysq = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut xnum = A[4] * ysq;
        let mut xden = ysq;
        for i in 0..3 {
            xnum = (xnum + A[i]) * ysq;
            xden = (xden + B[i]) * ysq;
        }
        return 1.0 - x * (xnum + A[3]) / (xden + B[3]);
    }

    let result = if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        let r = (xnum + C[7]) / (xden + D[7]);
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < XBIG {
        let ysq = 1.0 / (y * y);
        let mut xnum = P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * ysq;
            xden = (xden + Q[i]) * ysq;
        }
        let mut r = ysq * (xnum + P[4]) / (xden + Q[4]);
        r = (SQRPI_INV - r) / y;
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else {
        0.0
    };

    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_cody(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF, Wichura's AS 241 (PPND16 variant).
/// Relative accuracy is about 1e-16 over the full open unit interval,
/// which makes Gaussian variates a bit-stable pure function of the input
/// uniform.
pub fn normal_inv_cdf(u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "normal_inv_cdf needs u in (0,1), got {u}");
    let q = u - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
            + 6.7265770927008700853e4)
            * r
            + 4.5921953931549871457e4)
            * r
            + 1.3731693765509461125e4)
            * r
            + 1.9715909503065514427e3)
            * r
            + 1.3314166789178437745e2)
            * r
            + 3.3871328727963666080e0)
            * q;
        let den = ((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
            + 3.9307895800092710610e4)
            * r
            + 2.1213794301586595867e4)
            * r
            + 5.3941960214247511077e3)
            * r
            + 6.8718700749205790830e2)
            * r
            + 4.2313330701600911252e1)
            * r
            + 1.0;
        return num / den;
    }
    let mut r = if q < 0.0 { u } else { 1.0 - u };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1)
            * r
            + 1.27045825245236838258e0)
            * r
            + 3.64784832476320460504e0)
            * r
            + 5.76949722146069140550e0)
            * r
            + 4.63033784615654529590e0)
            * r
            + 1.42343711074968357734e0;
        let den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2)
            * r
            + 1.48103976427480074590e-1)
            * r
            + 6.89767334985100004550e-1)
            * r
            + 1.67638483018380384940e0)
            * r
            + 2.05319162663775882187e0)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3)
            * r
            + 2.65321895265761230930e-2)
            * r
            + 2.96560571828504891230e-1)
            * r
            + 1.78482653991729133580e0)
            * r
            + 5.46378491116411436990e0)
            * r
            + 6.65790464350110377720e0;
        let den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
            + 1.84631831751005468180e-5)
            * r
            + 7.86869131145613259100e-4)
            * r
            + 1.48753612908506148525e-2)
            * r
            + 1.36929880922735805310e-1)
            * r
            + 5.99832206555887937690e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Marginal CDF of reflected Brownian motion on the half-line at time `t`,
/// started at `start >= 0`: the folded-normal law |start + W_t|. With
/// start = 0 this reduces to the half-normal CDF 2*Phi(x/sqrt(t)) - 1.
pub fn half_normal_cdf(x: f64, t: f64, start: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "half_normal_cdf needs t > 0, got {t}"
        )));
    }
    if x < 0.0 {
        return Ok(0.0);
    }
    let s = t.sqrt();
    Ok((normal_cdf((x - start) / s) - normal_cdf((-x - start) / s)).clamp(0.0, 1.0))
}

/// Numerical inverse of a nondecreasing CDF by bisection on [lo, hi].
pub fn invert_cdf<F: Fn(f64) -> f64>(cdf: F, u: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}
