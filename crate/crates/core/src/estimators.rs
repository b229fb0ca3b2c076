//! Scale constants: the meeting time θ_N, the escape probability v_d, and
//! the intermediate scales γ_N and a_N used to build experiments.
//!
//! θ_N is the mean meeting time of two independent stationary rate-one
//! walks. Their difference is a walk at total rate 2, so θ_N is the mean
//! hitting time of the origin by the speed-two walk from a uniform start.
//! Reports carry that convention in their `note` field.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{sample_pair, simulate, Lattice, StopRule, DEFAULT_EVENT_CAP};
use crate::error::{EstimateError, OracleError};
use crate::kingman::Estimate;
use crate::lattice::TorusGeometry;
use crate::oracle::{mean_hitting_time_from_uniform, STATE_CAP};
use crate::seeding::replica_rng;

pub const SPEED_NOTE: &str =
    "theta is the meeting time of two rate-1 walks, i.e. the hitting time of 0 by their speed-2 difference walk";

/// Escape probability of the simple random walk on Z^3 from the lattice
/// Green function at the origin, `1 / 1.516386059...`. Used only as an
/// independent reference for the Monte Carlo estimator.
pub const WATSON_V3: f64 = 0.659_462_670_7;

/// Largest torus handled by the spectral sum.
pub const SPECTRAL_SITE_CAP: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMethod {
    /// Dense solve of the hitting-time system, through the oracle.
    ExactSolve,
    /// Closed-form eigenvalue sum of the same quantity; reaches tori
    /// too large for the dense solve.
    Spectral,
    /// Mean meeting time of uniformly started pairs.
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub d: usize,
    #[serde(rename = "N")]
    pub side: usize,
    pub theta: f64,
    pub method: ThetaMethod,
    /// Large-N prediction at this `N`: `N^d / (2 v_d)` for `d >= 3` (when
    /// `v_d` is supplied), `N^2 log N / π` for `d = 2`.
    pub asymptote: Option<f64>,
    pub relative_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    pub note: String,
}

impl ScaleReport {
    /// θ_N divided by its normalization (`N^d`, or `N^2 log N` in d = 2).
    pub fn normalized(&self) -> f64 {
        self.theta / theta_normalization(self.d, self.side)
    }
}

pub fn theta_normalization(d: usize, side: usize) -> f64 {
    let n = side as f64;
    if d == 2 {
        n * n * n.ln()
    } else {
        n.powi(d as i32)
    }
}

/// Predicted θ_N for large N.
pub fn theta_asymptote(d: usize, side: usize, v_d: Option<f64>) -> Option<f64> {
    if d == 2 {
        Some(theta_normalization(2, side) / PI)
    } else {
        v_d.map(|v| theta_normalization(d, side) / (2.0 * v))
    }
}

/// θ_N by the chosen method. `v_d` feeds the asymptote for `d >= 3`;
/// `seed` and `replicas` are used only by the Monte Carlo method.
pub fn estimate_theta(
    g: &TorusGeometry,
    method: ThetaMethod,
    v_d: Option<f64>,
    seed: u64,
    replicas: u64,
) -> Result<ScaleReport, EstimateError> {
    let (theta, se, reps) = match method {
        ThetaMethod::ExactSolve => (mean_hitting_time_from_uniform(g, 2.0)?.0, None, None),
        ThetaMethod::Spectral => (theta_spectral(g, 2.0)?, None, None),
        ThetaMethod::MonteCarlo => {
            let est = theta_monte_carlo(g, seed, replicas)?;
            (est.mean, Some(est.standard_error), Some(replicas))
        }
    };
    let asymptote = theta_asymptote(g.dim(), g.side(), v_d);
    Ok(ScaleReport {
        d: g.dim(),
        side: g.side(),
        theta,
        method,
        asymptote,
        relative_gap: asymptote.map(|a| (theta - a).abs() / a),
        se,
        replicas: reps,
        note: SPEED_NOTE.to_string(),
    })
}

/// Uniform-start mean hitting time of the origin for the walk at total
/// rate `speed`, as `sum_{k != 0} 1 / (speed (1 - φ(k)))` with
/// `φ(k) = (1/d) sum_j cos(2π k_j / N)`.
pub fn theta_spectral(g: &TorusGeometry, speed: f64) -> Result<f64, EstimateError> {
    let sites = g.num_sites();
    if sites > SPECTRAL_SITE_CAP {
        return Err(OracleError::Capacity {
            states: sites,
            cap: SPECTRAL_SITE_CAP,
        }
        .into());
    }
    let (d, n) = (g.dim(), g.side());
    let cosines: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
    let mut total = 0.0;
    let mut k = vec![0usize; d];
    for _ in 1..sites {
        // odometer over the non-zero modes
        for digit in k.iter_mut().rev() {
            *digit += 1;
            if *digit < n {
                break;
            }
            *digit = 0;
        }
        let phi: f64 = k.iter().map(|&kj| cosines[kj]).sum::<f64>() / d as f64;
        total += 1.0 / (1.0 - phi);
    }
    Ok(total / speed)
}

/// Mean meeting time of two walks started at independent uniform sites;
/// equal starts contribute zero.
pub fn theta_monte_carlo(g: &TorusGeometry, seed: u64, replicas: u64) -> Result<Estimate, EstimateError> {
    if replicas == 0 {
        return Err(EstimateError::NoReplicas);
    }
    let lattice = Lattice::new(*g);
    let sites = g.num_sites();
    let times: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            if rng.gen_range(0..sites) == 0 {
                // second walker starts on the first one
                return Ok(0.0);
            }
            let pair = sample_pair(&lattice, &mut rng);
            let record = simulate(&pair, StopRule::ReachCount(1), &mut rng, DEFAULT_EVENT_CAP)?;
            Ok(record.final_time)
        })
        .collect::<Result<_, EstimateError>>()?;
    Ok(Estimate::from_samples(&times))
}

/// Monte Carlo escape probability at one truncation radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub d: usize,
    pub radius: f64,
    pub v: f64,
    pub se: f64,
    pub walks: u64,
}

/// Fraction of simple random walks on Z^d that leave the Euclidean ball
/// of radius `radius` before returning to the origin. Biased upward by
/// roughly `(1 - v_d)^2 / (G R)`-sized terms that vanish as R grows.
pub fn estimate_escape(d: usize, radius: f64, walks: u64, seed: u64) -> Result<EscapeEstimate, EstimateError> {
    Ok(estimate_escape_radii(d, &[radius], walks, seed)?[0])
}

/// Escape estimates at several radii from one set of walks. Each walk
/// runs until it returns to the origin or leaves the largest ball, and
/// records how many of the (sorted) radii it got beyond first. Estimates
/// are therefore non-increasing in `R`.
pub fn estimate_escape_radii(
    d: usize,
    radii: &[f64],
    walks: u64,
    seed: u64,
) -> Result<Vec<EscapeEstimate>, EstimateError> {
    if d < 3 {
        return Err(EstimateError::Recurrent(d));
    }
    if walks == 0 {
        return Err(EstimateError::NoReplicas);
    }
    if let Some(&r) = radii.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(EstimateError::Radius(r));
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let levels: Vec<usize> = (0..walks)
        .into_par_iter()
        .map(|i| radii_passed(d, &sorted, &mut replica_rng(seed, i)))
        .collect();
    Ok(radii
        .iter()
        .map(|&r| {
            let rank = sorted.partition_point(|&s| s < r);
            let escaped = levels.iter().filter(|&&l| l > rank).count() as f64;
            let v = escaped / walks as f64;
            EscapeEstimate {
                d,
                radius: r,
                v,
                se: (v * (1.0 - v) / walks as f64).sqrt(),
                walks,
            }
        })
        .collect())
}

/// Shortest block worth sampling as one multinomial draw.
const MIN_BLOCK: u64 = 16;

/// Number of radii in `sorted` whose ball the walk leaves (reaches
/// `|x| > R`) before returning to the origin.
///
/// Far from both the origin and the next radius the walk advances in
/// blocks of `m` steps, with `m` below the L1 distance to the origin and
/// below the Euclidean gap to that radius, so no step inside the block can
/// reach either. The block displacement is drawn exactly as the
/// multinomial count of each direction.
fn radii_passed<R: Rng + ?Sized>(d: usize, sorted: &[f64], rng: &mut R) -> usize {
    let mut x = vec![0i64; d];
    let mut r2: i64 = 0;
    let mut passed = 0;
    let directions = 2 * d;
    let mut counts = vec![0u64; directions];
    loop {
        let next = sorted[passed];
        let r = (r2 as f64).sqrt();
        let l1: i64 = x.iter().map(|v| v.abs()).sum();
        let block = ((next - r).floor() as i64).min(l1 - 1);
        if block >= MIN_BLOCK as i64 {
            multinomial_equal(block as u64, &mut counts, rng);
            for (j, xj) in x.iter_mut().enumerate() {
                *xj += counts[2 * j] as i64 - counts[2 * j + 1] as i64;
            }
            r2 = x.iter().map(|v| v * v).sum();
        } else {
            let dir = rng.gen_range(0..directions);
            let j = dir / 2;
            if dir % 2 == 0 {
                r2 += 2 * x[j] + 1;
                x[j] += 1;
            } else {
                r2 += 1 - 2 * x[j];
                x[j] -= 1;
            }
            if r2 == 0 {
                return passed;
            }
        }
        while passed < sorted.len() && r2 as f64 > sorted[passed] * sorted[passed] {
            passed += 1;
        }
        if passed == sorted.len() {
            return passed;
        }
    }
}

/// Counts of `n` uniform draws over `counts.len()` cells.
fn multinomial_equal<R: Rng + ?Sized>(n: u64, counts: &mut [u64], rng: &mut R) {
    let cells = counts.len();
    let mut left = n;
    for (i, c) in counts.iter_mut().enumerate() {
        if i + 1 == cells {
            *c = left;
        } else {
            let p = 1.0 / (cells - i) as f64;
            *c = Binomial::new(left, p).expect("valid binomial").sample(rng);
            left -= *c;
        }
    }
}

/// Mixing-to-meeting intermediate time scale: `N^2 sqrt(log N)` in d = 2
/// and `N^2 log N` in d >= 3.
pub fn choose_gamma(g: &TorusGeometry) -> f64 {
    let n = g.side() as f64;
    if g.dim() == 2 {
        n * n * n.ln().sqrt()
    } else {
        n * n * n.ln()
    }
}

/// Separation used for scattered configurations: `floor(sqrt N)` in
/// d >= 3 and `floor(N / (log N)^{1/4})` in d = 2, at least 2.
pub fn choose_a_n(g: &TorusGeometry) -> usize {
    let n = g.side() as f64;
    let a = if g.dim() == 2 {
        (n / n.ln().max(1.0).powf(0.25)).floor()
    } else {
        n.sqrt().floor()
    };
    (a as usize).max(2)
}

/// Whether the oracle's dense solve can take this torus.
pub fn exact_solve_feasible(g: &TorusGeometry) -> bool {
    g.num_sites() <= STATE_CAP
}
