//! Reproducible driving noise.
//!
//! All randomness in the crate flows through a counter-based construction:
//! a 64-bit output is a pure hash of (master seed, path index, substream,
//! step index, draw counter), and Gaussian variates are obtained from the
//! single uniform by the inverse normal CDF. Draws are therefore a pure
//! function of their key, independent of evaluation order and thread
//! count, and bit-stable across runs.

use crate::error::{Error, Result};
use crate::stats::normal_inv_cdf;

/// splitmix64 finalizer: full-avalanche 64-bit mixing.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

/// Hash of a (seed, a, b, c, d) key: absorb each word with a mix round.
#[inline]
fn keyed(seed: u64, a: u64, b: u64, c: u64, d: u64) -> u64 {
    let mut h = mix64(seed ^ GOLDEN);
    h = mix64(h ^ a.wrapping_mul(GOLDEN).wrapping_add(1));
    h = mix64(h ^ b.wrapping_mul(GOLDEN).wrapping_add(2));
    h = mix64(h ^ c.wrapping_mul(GOLDEN).wrapping_add(3));
    mix64(h ^ d.wrapping_mul(GOLDEN).wrapping_add(4))
}

/// Map a u64 onto the open interval (0,1); the offset keeps the output
/// away from 0 and 1 exactly so the inverse CDF stays finite.
#[inline]
fn to_uniform(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Substream tags. Distinct tags give independent streams for the same
/// (seed, path, step).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Substream {
    /// Wiener increments of the driving path.
    Increment = 0,
    /// Auxiliary variate for the conditional OU momentum Gaussian.
    Aux = 1,
    /// Brownian-bridge splits at reflection events.
    Bridge = 2,
    /// Brownian-bridge midpoints for grid refinement.
    Refine = 3,
    /// Bootstrap resampling (statistics, not simulation).
    Bootstrap = 4,
}

/// Identifies one path's noise: (master seed, path index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub path: u64,
}

/// A sequential view of one (seed, path, substream, step) stream. Each
/// call advances the draw counter; the values remain a pure function of
/// the key and counter.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    seed: u64,
    path: u64,
    stream_word: u64,
    step: u64,
    counter: u64,
    zero: bool,
}

impl GaussianStream {
    fn new(key: NoiseKey, stream: Substream, level: u32, step: u64, zero: bool) -> Self {
        Self {
            seed: key.seed,
            path: key.path,
            stream_word: stream as u64 | ((level as u64) << 8),
            step,
            counter: 0,
            zero,
        }
    }

    pub(crate) fn for_bootstrap(seed: u64, replicate: u64) -> Self {
        Self::new(
            NoiseKey {
                seed,
                path: replicate,
            },
            Substream::Bootstrap,
            0,
            0,
            false,
        )
    }

    pub fn next_uniform(&mut self) -> f64 {
        let x = keyed(self.seed, self.path, self.stream_word, self.step, self.counter);
        self.counter += 1;
        to_uniform(x)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if self.zero {
            self.counter += 1;
            return 0.0;
        }
        normal_inv_cdf(self.next_uniform())
    }
}

/// Strictly increasing time grid t_0 = 0 < ... < t_N.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n_steps` steps covering [0, t_end].
    pub fn uniform(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::InvalidParam(format!(
                "horizon must be positive, got {t_end}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParam("grid needs at least one step".into()));
        }
        let dt = t_end / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|n| n as f64 * dt).collect();
        times[n_steps] = t_end;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::GridMismatch(
                "grid must start at 0 and contain at least one step".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::GridMismatch("grid times must strictly increase".into()));
        }
        Ok(Self { times })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn time(&self, node: usize) -> f64 {
        self.times[node]
    }

    pub fn dt(&self, step: usize) -> f64 {
        self.times[step + 1] - self.times[step]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Grid with every step halved.
    pub fn halved(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.n_steps() + 1);
        for n in 0..self.n_steps() {
            let (a, b) = (self.times[n], self.times[n + 1]);
            times.push(a);
            times.push(0.5 * (a + b));
        }
        times.push(self.t_end());
        Self { times }
    }
}

/// Wiener increments on a grid, reproducibly keyed by (seed, path index).
///
/// Regenerating with the same key and grid reproduces the increments
/// bit-exactly. `refine` produces the Brownian-bridge midpoint split of
/// every step: summing paired refined increments recovers the coarse
/// increment up to one floating-point rounding.
#[derive(Debug, Clone)]
pub struct NoisePath {
    key: NoiseKey,
    dim: usize,
    level: u32,
    zero: bool,
    grid: TimeGrid,
    increments: Vec<f64>, // n_steps * dim, step-major
}

impl NoisePath {
    /// Draw the increments for `key` on `grid`: dW_n ~ N(0, dt_n I).
    pub fn sample(key: NoiseKey, dim: usize, grid: TimeGrid) -> Self {
        let n = grid.n_steps();
        let mut increments = Vec::with_capacity(n * dim);
        for step in 0..n {
            let sd = grid.dt(step).sqrt();
            let mut s = GaussianStream::new(key, Substream::Increment, 0, step as u64, false);
            for _ in 0..dim {
                increments.push(sd * s.next_gaussian());
            }
        }
        Self {
            key,
            dim,
            level: 0,
            zero: false,
            grid,
            increments,
        }
    }

    /// All-zero noise (and zero auxiliary/bridge streams): deterministic
    /// dynamics on the same code path as stochastic runs.
    pub fn zeros(dim: usize, grid: TimeGrid) -> Self {
        let n = grid.n_steps();
        Self {
            key: NoiseKey { seed: 0, path: 0 },
            dim,
            level: 0,
            zero: true,
            grid,
            increments: vec![0.0; n * dim],
        }
    }

    pub fn key(&self) -> NoiseKey {
        self.key
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dim..(step + 1) * self.dim]
    }

    /// Brownian path at the grid nodes: W_0 = 0, W_{n+1} = W_n + dW_n.
    /// Node-major, n_nodes * dim.
    pub fn cumulative(&self) -> Vec<f64> {
        let n = self.grid.n_steps();
        let mut w = vec![0.0; (n + 1) * self.dim];
        for step in 0..n {
            for j in 0..self.dim {
                w[(step + 1) * self.dim + j] = w[step * self.dim + j] + self.increments[step * self.dim + j];
            }
        }
        w
    }

    /// Bridge refinement: halve every step, drawing the midpoint from the
    /// Refine substream conditioned on the coarse increment.
    pub fn refine(&self) -> Self {
        let n = self.grid.n_steps();
        let grid = self.grid.halved();
        let mut increments = Vec::with_capacity(2 * n * self.dim);
        for step in 0..n {
            let h = self.grid.dt(step);
            let half_sd = 0.5 * h.sqrt();
            let mut s = GaussianStream::new(
                self.key,
                Substream::Refine,
                self.level,
                step as u64,
                self.zero,
            );
            let coarse = self.increment(step);
            let mut left = Vec::with_capacity(self.dim);
            for &dw in coarse {
                left.push(0.5 * dw + half_sd * s.next_gaussian());
            }
            increments.extend_from_slice(&left);
            for (j, &dw) in coarse.iter().enumerate() {
                increments.push(dw - left[j]);
            }
        }
        Self {
            key: self.key,
            dim: self.dim,
            level: self.level + 1,
            zero: self.zero,
            grid,
            increments,
        }
    }

    /// Auxiliary standard normals for the step's conditional OU draw (one
    /// per component, tied to the step index).
    pub(crate) fn aux_draw(&self, step: usize, out: &mut [f64]) {
        let mut s = GaussianStream::new(self.key, Substream::Aux, self.level, step as u64, self.zero);
        for o in out.iter_mut() {
            *o = s.next_gaussian();
        }
    }

    /// Sequential stream for within-step event handling (bridge splits and
    /// substep auxiliaries at reflections).
    pub(crate) fn event_stream(&self, step: usize) -> GaussianStream {
        GaussianStream::new(self.key, Substream::Bridge, self.level, step as u64, self.zero)
    }
}
