//! Kingman's block-count process, its generator on `S = {1, 1/2, 1/3, ..., 0}`,
//! martingale residuals and the carré du champ.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::KingmanError;

/// Default tail tolerance for the entrance from infinity.
pub const DEFAULT_EPS_TAIL: f64 = 1e-4;

/// Death rate at `n` blocks, `n (n - 1) / 2`.
#[inline]
pub fn lambda(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        (n as f64) * ((n - 1) as f64) / 2.0
    }
}

/// Holding time at level `n`: exponential with mean `2 / (n (n - 1))`.
pub fn sample_hold<R: Rng + ?Sized>(n: u64, rng: &mut R) -> Result<f64, KingmanError> {
    if n < 2 {
        return Err(KingmanError::Level(n));
    }
    let e: f64 = rng.sample(Exp1);
    Ok(e / lambda(n))
}

/// A point of `S`: `1/n` for a finite block count `n >= 1`, or `0` for
/// infinitely many blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SValue {
    blocks: Option<u64>,
}

impl SValue {
    pub const ZERO: SValue = SValue { blocks: None };

    /// `1/n`; `n` must be at least one.
    pub fn inverse(n: u64) -> Self {
        assert!(n >= 1, "block count must be positive");
        SValue { blocks: Some(n) }
    }

    pub fn blocks(&self) -> Option<u64> {
        self.blocks
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.is_none()
    }

    pub fn value(&self) -> f64 {
        self.blocks.map_or(0.0, |n| 1.0 / n as f64)
    }
}

impl fmt::Display for SValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.blocks {
            None => write!(f, "0"),
            Some(1) => write!(f, "1"),
            Some(n) => write!(f, "1/{n}"),
        }
    }
}

/// One path of the block-count process started from `start_level` blocks.
///
/// `jump_times[i]` is the time at which the count drops from
/// `start_level - i` to `start_level - i - 1`. Paths sampled from the
/// entrance at infinity start from a truncation level and are meaningful
/// from `burn_in` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KingmanPath {
    pub start_level: u64,
    pub jump_times: Vec<f64>,
    pub burn_in: f64,
}

impl KingmanPath {
    /// Number of blocks at time `t`.
    pub fn level_at(&self, t: f64) -> u64 {
        let dropped = self.jump_times.partition_point(|&s| s <= t);
        self.start_level - dropped as u64
    }

    pub fn value_at(&self, t: f64) -> f64 {
        1.0 / self.level_at(t) as f64
    }

    /// Time the path reaches a single block.
    pub fn absorption_time(&self) -> f64 {
        self.jump_times.last().copied().unwrap_or(0.0)
    }

    /// Piecewise-constant segments `(level, from, to)` covering `[s, t]`.
    pub fn segments(&self, s: f64, t: f64) -> impl Iterator<Item = (u64, f64, f64)> + '_ {
        let first = self.jump_times.partition_point(|&u| u <= s);
        let mut from = s;
        let mut level = self.start_level - first as u64;
        let mut idx = first;
        std::iter::from_fn(move || {
            if from >= t {
                return None;
            }
            let next = self.jump_times.get(idx).copied().unwrap_or(f64::INFINITY);
            let to = next.min(t);
            let seg = (level, from, to);
            from = to;
            if next <= t {
                idx += 1;
                level -= 1;
            }
            Some(seg)
        })
    }

    /// Serialized form: `[[level, jump_time], ...]`, one pair per drop,
    /// `level` being the count just after the drop.
    pub fn to_pairs(&self) -> Vec<(u64, f64)> {
        self.jump_times
            .iter()
            .enumerate()
            .map(|(i, &t)| (self.start_level - i as u64 - 1, t))
            .collect()
    }
}

/// Truncation level `ceil(2 / eps_tail)` for the entrance from infinity.
pub fn truncation_level(eps_tail: f64) -> u64 {
    (2.0 / eps_tail).ceil().max(2.0) as u64
}

/// Samples a block-count path.
///
/// From `1/k` the path is exact. From `0` the chain starts at
/// `k_max = ceil(2 / eps_tail)` blocks; the discarded tail
/// `sum_{n > k_max} T_n` has mean `2 / k_max <= eps_tail`, and the path is
/// flagged as valid from `burn_in = eps_tail`.
///
/// All holding times are drawn, so `horizon` only validates the request.
pub fn sample_path<R: Rng + ?Sized>(
    start: SValue,
    horizon: f64,
    eps_tail: f64,
    rng: &mut R,
) -> Result<KingmanPath, KingmanError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(KingmanError::Horizon(horizon));
    }
    let (start_level, burn_in) = match start.blocks() {
        Some(k) => (k, 0.0),
        None => {
            if !(eps_tail > 0.0 && eps_tail.is_finite()) {
                return Err(KingmanError::TailTolerance(eps_tail));
            }
            (truncation_level(eps_tail), eps_tail)
        }
    };
    let mut jump_times = Vec::with_capacity(start_level.saturating_sub(1) as usize);
    let mut time = 0.0;
    for n in (2..=start_level).rev() {
        time += sample_hold(n, rng)?;
        jump_times.push(time);
    }
    Ok(KingmanPath {
        start_level,
        jump_times,
        burn_in,
    })
}

/// Absorption time `sum_{k=2}^{k_max} T_k` without materializing the path.
pub fn sample_absorption_time<R: Rng + ?Sized>(start_level: u64, rng: &mut R) -> f64 {
    (2..=start_level)
        .map(|n| {
            let e: f64 = rng.sample(Exp1);
            e / lambda(n)
        })
        .sum()
}

/// A `C^1` function on `S` with its derivative at zero supplied
/// explicitly. Functions constant on a neighbourhood of zero carry the
/// index `cutoff` from which `f(1/n) = f(0)`.
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative_at_zero: f64,
    cutoff: Option<u64>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("derivative_at_zero", &self.derivative_at_zero)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

impl TestFunction {
    pub fn new(
        name: impl Into<String>,
        derivative_at_zero: f64,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TestFunction {
            name: name.into(),
            eval: Arc::new(eval),
            derivative_at_zero,
            cutoff: None,
        }
    }

    /// Marks the function as constant on `{1/n : n >= cutoff} ∪ {0}`.
    pub fn with_cutoff(mut self, cutoff: u64) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn derivative_at_zero(&self) -> f64 {
        self.derivative_at_zero
    }

    pub fn cutoff(&self) -> Option<u64> {
        self.cutoff
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn at(&self, y: SValue) -> f64 {
        self.eval(y.value())
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(format!("const({c})"), 0.0, move |_| c).with_cutoff(1)
    }

    pub fn identity() -> Self {
        TestFunction::new("identity", 1.0, |x| x)
    }

    /// Pointwise product; derivative by the product rule.
    pub fn product(f: &TestFunction, g: &TestFunction) -> Self {
        let (fe, ge) = (Arc::clone(&f.eval), Arc::clone(&g.eval));
        let derivative = f.derivative_at_zero * g.eval(0.0) + f.eval(0.0) * g.derivative_at_zero;
        let mut out = TestFunction::new(format!("({})*({})", f.name, g.name), derivative, move |x| fe(x) * ge(x));
        out.cutoff = f.cutoff.zip(g.cutoff).map(|(a, b)| a.max(b));
        out
    }

    /// `a f + b g`.
    pub fn linear_combination(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        let (fe, ge) = (Arc::clone(&f.eval), Arc::clone(&g.eval));
        let derivative = a * f.derivative_at_zero + b * g.derivative_at_zero;
        let mut out = TestFunction::new(format!("{a}*({})+{b}*({})", f.name, g.name), derivative, move |x| {
            a * fe(x) + b * ge(x)
        });
        out.cutoff = f.cutoff.zip(g.cutoff).map(|(p, q)| p.max(q));
        out
    }

    /// `|n (f(1/n) - f(0)) - f'(0)|` at a large `n`, the finite-difference
    /// check of the supplied derivative along `1/n`.
    pub fn derivative_defect(&self, n: u64) -> f64 {
        let h = 1.0 / n as f64;
        ((self.eval(h) - self.eval(0.0)) / h - self.derivative_at_zero).abs()
    }
}

/// `C^1` ramp equal to `c` on `[0, lo]` and to `x` on `[hi, 1]`, joined by
/// the cubic Hermite segment matching values and slopes at both ends.
pub fn smoothed_ramp(lo: f64, hi: f64, c: f64) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
    move |x| {
        if x <= lo {
            c
        } else if x >= hi {
            x
        } else {
            let w = hi - lo;
            let s = (x - lo) / w;
            let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
            let h01 = -2.0 * s * s * s + 3.0 * s * s;
            let h11 = s * s * s - s * s;
            h00 * c + h01 * hi + h11 * w
        }
    }
}

/// The built-in suite of ten test functions: full `C^1(S)` members and
/// members constant near zero.
pub fn builtin_test_functions() -> Vec<TestFunction> {
    vec![
        TestFunction::identity(),
        TestFunction::constant(1.5),
        TestFunction::new("x^2", 0.0, |x| x * x),
        TestFunction::new("sin(3x)", 3.0, |x| (3.0 * x).sin()),
        TestFunction::new("exp(-x)", -1.0, |x| (-x).exp()),
        TestFunction::new("1/(1+x)", -1.0, |x| 1.0 / (1.0 + x)),
        TestFunction::new("cos(x)+2x", 2.0, |x| x.cos() + 2.0 * x),
        // f(x) = x for x >= 1/5, constant 0.1 below 1/8
        TestFunction::new("ramp(1/8,1/5)", 0.0, smoothed_ramp(0.125, 0.2, 0.1)).with_cutoff(8),
        TestFunction::new("ramp(1/20,1/10)", 0.0, smoothed_ramp(0.05, 0.1, 0.06)).with_cutoff(20),
        TestFunction::new("ramp(1/3,1/2)", 0.0, smoothed_ramp(1.0 / 3.0, 0.5, 1.0 / 3.0)).with_cutoff(3),
    ]
}

/// Generator of the block-count process acting on `f` at `y`.
pub fn generator(f: &TestFunction, y: SValue) -> f64 {
    match y.blocks() {
        None => 0.5 * f.derivative_at_zero(),
        Some(1) => 0.0,
        Some(n) => lambda(n) * (f.eval(1.0 / (n - 1) as f64) - f.eval(1.0 / n as f64)),
    }
}

/// `Γ(f, g)(y) = L(fg)(y) - g(y) Lf(y) - f(y) Lg(y)`.
pub fn carre_du_champ(f: &TestFunction, g: &TestFunction, y: SValue) -> f64 {
    let fg = TestFunction::product(f, g);
    generator(&fg, y) - g.at(y) * generator(f, y) - f.at(y) * generator(g, y)
}

/// `f(X_t) - f(X_s) - int_s^t (Lf)(X_u) du` along one path, the integral
/// evaluated exactly over the constant segments.
pub fn martingale_increment(path: &KingmanPath, f: &TestFunction, s: f64, t: f64) -> f64 {
    let integral: f64 = path
        .segments(s, t)
        .map(|(level, from, to)| generator(f, SValue::inverse(level)) * (to - from))
        .sum();
    f.eval(path.value_at(t)) - f.eval(path.value_at(s)) - integral
}

/// Monte Carlo mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean,
            standard_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// `|mean - target| <= k * standard_error`, with exact equality
    /// accepted when the standard error vanishes.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.standard_error
    }
}

/// Estimates `E[B (M_t - M_s)]` over a set of paths. `conditioning` must
/// only look at the path on `[0, s]`.
pub fn martingale_residual(
    paths: &[KingmanPath],
    f: &TestFunction,
    s: f64,
    t: f64,
    conditioning: &dyn Fn(&KingmanPath) -> f64,
) -> Result<Estimate, KingmanError> {
    if paths.is_empty() {
        return Err(KingmanError::NoPaths);
    }
    if !(s >= 0.0 && t > s && t.is_finite()) {
        return Err(KingmanError::Window { s, t });
    }
    let values: Vec<f64> = paths
        .iter()
        .map(|p| conditioning(p) * martingale_increment(p, f, s, t))
        .collect();
    Ok(Estimate::from_samples(&values))
}
