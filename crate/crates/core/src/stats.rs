//! Goodness-of-fit tests, moment checks and count-decay tables, plus the
//! single record holding every acceptance threshold.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::TrajectoryRecord;
use crate::error::StatsError;
use crate::kingman::Estimate;

/// Minimum sample size for the asymptotic Kolmogorov p-values.
pub const KS_MIN_SAMPLES: usize = 100;

/// Environment variable naming a JSON thresholds file.
pub const THRESHOLDS_ENV: &str = "CRW_THRESHOLDS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n_samples: usize,
    pub alpha: f64,
    pub passed: bool,
}

impl TestReport {
    fn new(statistic: f64, p_value: f64, n_samples: usize, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestReport {
            statistic,
            p_value,
            n_samples,
            alpha,
            passed: p_value > alpha,
        }
    }
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Jacobi-transformed series converges fast for small x
        let s: f64 = (1..=6)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (-odd * odd * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0);
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

fn validate(samples: &[f64], needed: usize) -> Result<(), StatsError> {
    if samples.len() < needed {
        return Err(StatsError::TooFewSamples {
            needed,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(StatsError::InvalidSample);
    }
    Ok(())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Kolmogorov distance between the empirical law of `samples` and a
/// continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

/// One-sample KS test of `samples` against Exp(`rate`).
pub fn ks_exponential(samples: &[f64], rate: f64, alpha: f64) -> Result<TestReport, StatsError> {
    validate(samples, KS_MIN_SAMPLES)?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(StatsError::Rate(rate));
    }
    let d = ks_distance(samples, |x| -(-rate * x).exp_m1());
    let n = samples.len();
    Ok(TestReport::new(d, kolmogorov_survival((n as f64).sqrt() * d), n, alpha))
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TestReport, StatsError> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLES {
            return Err(StatsError::TooFewSamples {
                needed: KS_MIN_SAMPLES,
                got: s.len(),
            });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::InvalidSample);
        }
    }
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    Ok(TestReport::new(
        d,
        kolmogorov_survival(en * d),
        a.len() + b.len(),
        alpha,
    ))
}

/// Sample mean of `x^m` with its standard error.
pub fn empirical_moment(samples: &[f64], m: u32) -> Result<Estimate, StatsError> {
    if !(1..=3).contains(&m) {
        return Err(StatsError::MomentOrder(m));
    }
    validate(samples, 2)?;
    let powers: Vec<f64> = samples.iter().map(|x| x.powi(m as i32)).collect();
    Ok(Estimate::from_samples(&powers))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundReport {
    pub order: u32,
    /// `(N, m-th moment)` per grid point.
    pub moments: Vec<(usize, Estimate)>,
    /// Largest over smallest moment across the grid.
    pub spread: f64,
    pub stable: bool,
}

/// `m`-th moments of `τ/θ_N` samples from one experiment at several `N`;
/// `stable` when the largest is at most `max_ratio` times the smallest.
pub fn moment_bound_check(grid: &[(usize, Vec<f64>)], m: u32, max_ratio: f64) -> Result<MomentBoundReport, StatsError> {
    let moments = grid
        .iter()
        .map(|(n, samples)| Ok((*n, empirical_moment(samples, m)?)))
        .collect::<Result<Vec<_>, StatsError>>()?;
    let hi = moments.iter().map(|(_, e)| e.mean).fold(f64::NEG_INFINITY, f64::max);
    let lo = moments.iter().map(|(_, e)| e.mean).fold(f64::INFINITY, f64::min);
    let spread = if moments.is_empty() { 1.0 } else { hi / lo };
    Ok(MomentBoundReport {
        order: m,
        moments,
        spread,
        stable: spread.is_finite() && spread <= max_ratio,
    })
}

/// The decay profile `g_N(t)`: `N^d / t` in d >= 3 and
/// `N^2 log(1 + t) / t` in d = 2.
pub fn decay_profile(d: usize, side: usize, t: f64) -> f64 {
    let n = side as f64;
    if d == 2 {
        n * n * t.ln_1p() / t
    } else {
        n.powi(d as i32) / t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountDecayRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    /// `mean / max(1, g_N(t))`.
    pub scaled: f64,
    pub in_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDecayTable {
    pub d: usize,
    #[serde(rename = "N")]
    pub side: usize,
    pub rows: Vec<CountDecayRow>,
    /// Smallest `c` with `mean <= c max(1, g_N)` on the window.
    pub fitted_c: f64,
    /// Largest over smallest scaled value on the window.
    pub spread: f64,
}

impl CountDecayTable {
    pub fn stable_within(&self, factor: f64) -> bool {
        self.spread.is_finite() && self.spread <= factor
    }
}

/// Mean particle count at each grid time over full-torus records, scaled
/// by the decay profile. `window` selects the rows used for the fit.
pub fn count_decay_check(
    records: &[TrajectoryRecord],
    t_grid: &[f64],
    window: (f64, f64),
) -> Result<CountDecayTable, StatsError> {
    let first = records.first().ok_or(StatsError::TooFewSamples { needed: 1, got: 0 })?;
    let (d, side) = (first.d, first.side);
    let sites = side.pow(d as u32);
    for r in records {
        if r.d != d || r.side != side || r.initial_count() != sites {
            return Err(StatsError::NotFullTorus);
        }
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let counts = records
            .iter()
            .map(|r| {
                if t > r.final_time && r.coalescence_time().is_none() {
                    Err(StatsError::Horizon { end: r.final_time, t })
                } else {
                    Ok(r.count_at(t) as f64)
                }
            })
            .collect::<Result<Vec<f64>, StatsError>>()?;
        let est = Estimate::from_samples(&counts);
        let profile = if t > 0.0 {
            decay_profile(d, side, t).max(1.0)
        } else {
            sites as f64
        };
        rows.push(CountDecayRow {
            t,
            mean: est.mean,
            se: est.standard_error,
            scaled: est.mean / profile,
            in_window: t >= window.0 && t <= window.1,
        });
    }
    let inside: Vec<f64> = rows.iter().filter(|r| r.in_window).map(|r| r.scaled).collect();
    if inside.is_empty() {
        return Err(StatsError::EmptyWindow);
    }
    let hi = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = inside.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CountDecayTable {
        d,
        side,
        rows,
        fitted_c: hi,
        spread: hi / lo,
    })
}

/// Every pass/fail threshold of the acceptance suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub ks_alpha: f64,
    pub se_multiplier: f64,
    pub occupation_tol: f64,
    /// Float tolerance for the generator identities.
    pub generator_tol: f64,
    pub lem9_max_gap: f64,
    pub theta_max_gap: f64,
    pub escape_stability: f64,
    pub pair_law_max_gap: f64,
    pub moment_max_ratio: f64,
    pub decay_max_factor: f64,
    /// Slack for "decreasing" comparisons of exact values, absorbing
    /// solver round-off.
    pub monotone_slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks_alpha: 0.01,
            se_multiplier: 3.0,
            occupation_tol: 1e-9,
            generator_tol: 1e-12,
            lem9_max_gap: 0.25,
            theta_max_gap: 0.15,
            escape_stability: 0.01,
            pair_law_max_gap: 0.10,
            moment_max_ratio: 2.0,
            decay_max_factor: 2.0,
            monotone_slack: 1e-10,
        }
    }
}

impl Thresholds {
    pub fn from_file(path: &Path) -> Result<Self, StatsError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| StatsError::Thresholds(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| StatsError::Thresholds(e.to_string()))
    }

    /// Defaults, or the file named by `CRW_THRESHOLDS` when set.
    pub fn from_env() -> Result<Self, StatsError> {
        match std::env::var_os(THRESHOLDS_ENV) {
            Some(path) => Self::from_file(Path::new(&path)),
            None => Ok(Self::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Exp};
    use std::collections::BTreeMap;

    fn exp_samples(rate: f64, n: usize, seed: u64, stream: u64) -> Vec<f64> {
        let mut rng = replica_rng(seed, stream);
        let e = Exp::new(rate).unwrap();
        (0..n).map(|_| e.sample(&mut rng)).collect()
    }

    #[test]
    fn kolmogorov_survival_reference_points() {
        // standard critical values of the limiting distribution
        assert!((kolmogorov_survival(1.358_098_8) - 0.05).abs() < 1e-6);
        assert!((kolmogorov_survival(1.627_624_1) - 0.01).abs() < 1e-6);
        assert!((kolmogorov_survival(1.223_847_9) - 0.10).abs() < 1e-6);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        // both series agree where they meet
        let below = kolmogorov_survival(1.0 - 1e-12);
        let above = kolmogorov_survival(1.0);
        assert!((below - above).abs() < 1e-10);
    }

    #[test]
    fn exponential_self_test_and_power() {
        let (mut kept, mut rejected) = (0, 0);
        for rep in 0..100 {
            let s = exp_samples(3.0, 10_000, 1, rep);
            if ks_exponential(&s, 3.0, 0.01).unwrap().p_value > 0.01 {
                kept += 1;
            }
            if ks_exponential(&s, 6.0, 0.01).unwrap().p_value < 0.01 {
                rejected += 1;
            }
        }
        assert!(kept >= 98, "{kept}");
        assert!(rejected >= 99, "{rejected}");
    }

    #[test]
    fn degenerate_samples_are_not_exponential() {
        let r = ks_exponential(&[1.0; 200], 1.0, 0.01).unwrap();
        assert!(r.p_value < 1e-10 && !r.passed);
    }

    #[test]
    fn preconditions() {
        assert_eq!(
            ks_exponential(&[1.0; 99], 1.0, 0.01),
            Err(StatsError::TooFewSamples { needed: 100, got: 99 })
        );
        let mut bad = vec![1.0; 150];
        bad[3] = -0.5;
        assert_eq!(ks_exponential(&bad, 1.0, 0.01), Err(StatsError::InvalidSample));
        assert_eq!(ks_exponential(&[1.0; 150], 0.0, 0.01), Err(StatsError::Rate(0.0)));
        assert!(ks_two_sample(&[1.0; 150], &[1.0; 10], 0.01).is_err());
        assert_eq!(empirical_moment(&[1.0, 2.0], 4), Err(StatsError::MomentOrder(4)));
    }

    #[test]
    fn two_sample_identity_self_test_and_power() {
        let a = exp_samples(1.0, 500, 2, 0);
        let same = ks_two_sample(&a, &a, 0.01).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        let (mut kept, mut rejected) = (0, 0);
        for rep in 0..100 {
            let a = exp_samples(1.0, 10_000, 3, 2 * rep);
            let b = exp_samples(1.0, 10_000, 3, 2 * rep + 1);
            let c = exp_samples(2.0, 10_000, 4, rep);
            if ks_two_sample(&a, &b, 0.01).unwrap().p_value > 0.01 {
                kept += 1;
            }
            if ks_two_sample(&a, &c, 0.01).unwrap().p_value < 0.01 {
                rejected += 1;
            }
        }
        assert!(kept >= 98, "{kept}");
        assert!(rejected >= 99, "{rejected}");
    }

    #[test]
    fn two_sample_handles_ties() {
        let a: Vec<f64> = (0..200).map(|i| (i % 5) as f64).collect();
        let b: Vec<f64> = (0..300).map(|i| (i % 5) as f64).collect();
        assert_eq!(ks_two_sample(&a, &b, 0.01).unwrap().statistic, 0.0);
    }

    #[test]
    fn exponential_moments() {
        let s = exp_samples(2.0, 50_000, 5, 0);
        let m1 = empirical_moment(&s, 1).unwrap();
        let m2 = empirical_moment(&s, 2).unwrap();
        assert!(m1.within(0.5, 3.0), "{m1:?}");
        assert!(m2.within(0.5, 3.0), "{m2:?}");
    }

    #[test]
    fn moment_bound_flags_spread() {
        let grid = vec![(8, exp_samples(1.0, 2000, 6, 0)), (16, exp_samples(1.0, 2000, 6, 1))];
        assert!(moment_bound_check(&grid, 2, 2.0).unwrap().stable);
        let skewed = vec![(8, exp_samples(1.0, 2000, 6, 0)), (16, exp_samples(0.3, 2000, 6, 1))];
        let r = moment_bound_check(&skewed, 1, 2.0).unwrap();
        assert!(!r.stable && r.spread > 2.0);
    }

    fn record(side: usize, d: usize, taus: &[(usize, f64)], final_time: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            seed: 0,
            replica: 0,
            side,
            d,
            tau: taus.iter().copied().collect::<BTreeMap<_, _>>(),
            final_time,
            jump_count: 0,
        }
    }

    #[test]
    fn count_decay_rows() {
        let r = record(2, 2, &[(4, 0.0), (3, 1.0), (2, 2.0), (1, 5.0)], 5.0);
        let table = count_decay_check(&[r.clone(), r], &[0.0, 1.5, 3.0, 10.0], (1.0, 10.0)).unwrap();
        assert_eq!(table.rows[0].mean, 4.0);
        assert_eq!(table.rows[1].mean, 3.0);
        assert_eq!(table.rows[3].mean, 1.0);
        assert!(!table.rows[0].in_window && table.rows[1].in_window);
        assert!(table.spread >= 1.0);
    }

    #[test]
    fn count_decay_errors() {
        let partial = record(2, 2, &[(3, 0.0), (1, 5.0)], 5.0);
        assert_eq!(
            count_decay_check(&[partial], &[1.0], (0.0, 2.0)),
            Err(StatsError::NotFullTorus)
        );
        let short = record(2, 2, &[(4, 0.0), (3, 1.0)], 2.0);
        assert!(matches!(
            count_decay_check(std::slice::from_ref(&short), &[3.0], (0.0, 4.0)),
            Err(StatsError::Horizon { .. })
        ));
        assert_eq!(
            count_decay_check(&[short], &[1.0], (5.0, 6.0)),
            Err(StatsError::EmptyWindow)
        );
    }

    #[test]
    fn thresholds_round_trip_and_partial_files() {
        let dir = std::env::temp_dir().join(format!("crw-thresholds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.json");
        std::fs::write(&path, r#"{"ks_alpha": 0.05}"#).unwrap();
        let t = Thresholds::from_file(&path).unwrap();
        assert_eq!(t.ks_alpha, 0.05);
        assert_eq!(t.se_multiplier, 3.0);
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(Thresholds::from_file(&path), Err(StatsError::Thresholds(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn reports_are_deterministic() {
        let s = exp_samples(1.0, 500, 9, 0);
        assert_eq!(ks_exponential(&s, 1.0, 0.01), ks_exponential(&s, 1.0, 0.01));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn p_values_and_statistics_in_unit_interval(seed in 0u64..10_000, rate in 0.1f64..10.0) {
            let s = exp_samples(1.0, 150, seed, 0);
            let r = ks_exponential(&s, rate, 0.01).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!((0.0..=1.0).contains(&r.statistic));
            let t = exp_samples(rate, 120, seed, 1);
            let r2 = ks_two_sample(&s, &t, 0.01).unwrap();
            prop_assert!((0.0..=1.0).contains(&r2.p_value));
            prop_assert!((0.0..=1.0).contains(&r2.statistic));
            prop_assert_eq!(r.passed, r.p_value > 0.01);
        }

        #[test]
        fn scale_consistency_for_binary_factors(seed in 0u64..10_000, shift in -6i32..6, rate in 0.1f64..10.0) {
            let c = 2f64.powi(shift);
            let s = exp_samples(rate, 200, seed, 0);
            let scaled: Vec<f64> = s.iter().map(|x| x * c).collect();
            let a = ks_exponential(&s, rate, 0.01).unwrap();
            let b = ks_exponential(&scaled, rate / c, 0.01).unwrap();
            prop_assert_eq!(a.statistic, b.statistic);
        }

        #[test]
        fn scale_consistency_within_rounding(seed in 0u64..10_000, c in 0.01f64..100.0) {
            let s = exp_samples(1.0, 200, seed, 0);
            let scaled: Vec<f64> = s.iter().map(|x| x * c).collect();
            let a = ks_exponential(&s, 1.0, 0.01).unwrap();
            let b = ks_exponential(&scaled, 1.0 / c, 0.01).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
        }

        #[test]
        fn kolmogorov_survival_is_monotone(x in 0.01f64..3.0, dx in 0.0f64..0.5) {
            prop_assert!(kolmogorov_survival(x + dx) <= kolmogorov_survival(x) + 1e-15);
        }
    }
}
