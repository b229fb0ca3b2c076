//! The six verification suites. Each runs a fixed experiment and returns
//! one row per check; rows carry the criterion number they belong to.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    replacement_statistic, sample_scattered, simulate_replicas, CountWeight, Lattice, ParticleConfig, StopRule,
    TrajectoryRecord, DEFAULT_EVENT_CAP,
};
use crate::error::SuiteError;
use crate::estimators::{choose_a_n, estimate_escape_radii, estimate_theta, theta_spectral, ThetaMethod};
use crate::kingman::{
    builtin_test_functions, carre_du_champ, generator, lambda, martingale_increment, sample_absorption_time,
    sample_path, truncation_level, Estimate, KingmanPath, SValue, TestFunction, DEFAULT_EPS_TAIL,
};
use crate::lattice::TorusGeometry;
use crate::oracle::{lem9_sum, occupation_identity_check, pair_coalescence_law, random_reversible_chain};
use crate::seeding::{derive_seed, replica_rng};
use crate::stats::{count_decay_check, ks_exponential, ks_two_sample, Thresholds};

pub const DEFAULT_SEED: u64 = 20_240_611;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Exactness,
    Exponentiality,
    KingmanLimit,
    Scales,
    Replacement,
    Martingale,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Exactness,
        Suite::Exponentiality,
        Suite::KingmanLimit,
        Suite::Scales,
        Suite::Replacement,
        Suite::Martingale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Exactness => "exactness",
            Suite::Exponentiality => "exponentiality",
            Suite::KingmanLimit => "kingman_limit",
            Suite::Scales => "scales",
            Suite::Replacement => "replacement",
            Suite::Martingale => "martingale",
        }
    }

    /// Criteria covered by the suite.
    pub fn criteria(self) -> &'static [u32] {
        match self {
            Suite::Exactness => &[1, 2, 3],
            Suite::Exponentiality => &[4, 5],
            Suite::KingmanLimit => &[6, 11],
            Suite::Scales => &[7, 8],
            Suite::Replacement => &[9],
            Suite::Martingale => &[10],
        }
    }

    /// Replica count used when the configuration does not set one.
    pub fn default_replicas(self) -> u64 {
        match self {
            Suite::Exactness => 100,
            Suite::Exponentiality => 1000,
            Suite::KingmanLimit => 500,
            Suite::Scales => 10_000,
            Suite::Replacement => 1000,
            Suite::Martingale => 10_000,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = SuiteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| SuiteError::UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Overrides the suite's replica count (walks for `scales`, paths for
    /// `martingale`; ignored by `exactness`).
    pub replicas: Option<u64>,
    pub thresholds: Thresholds,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: DEFAULT_SEED,
            replicas: None,
            thresholds: Thresholds::default(),
        }
    }
}

impl SuiteConfig {
    fn replicas_for(&self, suite: Suite) -> u64 {
        self.replicas.unwrap_or_else(|| suite.default_replicas())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub suite: String,
    pub criterion: u32,
    pub check: String,
    pub value: f64,
    pub target: String,
    pub passed: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub rows: Vec<SuiteRow>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn criterion_passed(&self, criterion: u32) -> Option<bool> {
        let rows: Vec<&SuiteRow> = self.rows.iter().filter(|r| r.criterion == criterion).collect();
        (!rows.is_empty()).then(|| rows.iter().all(|r| r.passed))
    }

    pub fn to_csv(&self) -> Result<String, SuiteError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| SuiteError::Output(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| SuiteError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| SuiteError::Output(e.to_string()))
    }
}

struct Rows {
    suite: Suite,
    rows: Vec<SuiteRow>,
}

impl Rows {
    fn new(suite: Suite) -> Self {
        Rows {
            suite,
            rows: Vec::new(),
        }
    }

    fn push(
        &mut self,
        criterion: u32,
        check: impl Into<String>,
        value: f64,
        target: impl Into<String>,
        passed: bool,
        note: impl Into<String>,
    ) {
        self.rows.push(SuiteRow {
            suite: self.suite.name().to_string(),
            criterion,
            check: check.into(),
            value,
            target: target.into(),
            passed,
            note: note.into(),
        });
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.suite,
            rows: self.rows,
        }
    }
}

pub fn run_suite(suite: Suite, config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    match suite {
        Suite::Exactness => exactness(config),
        Suite::Exponentiality => exponentiality(config),
        Suite::KingmanLimit => kingman_limit(config),
        Suite::Scales => scales(config),
        Suite::Replacement => replacement(config),
        Suite::Martingale => martingale(config),
    }
}

fn geom(d: usize, n: usize) -> Result<TorusGeometry, SuiteError> {
    Ok(TorusGeometry::new(d, n)?)
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn tol(x: f64) -> String {
    if x < 1e-3 {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

/// Occupation identity on random reversible chains, generator algebra,
/// and the exact neighbour-weighted pair sum.
pub fn exactness(config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    let th = &config.thresholds;
    let mut rows = Rows::new(Suite::Exactness);

    let seed = derive_seed(config.seed, "exactness/chains");
    let mut worst = 0.0f64;
    let chains = Suite::Exactness.default_replicas();
    for i in 0..chains {
        let mut rng = replica_rng(seed, i);
        let size = rng.gen_range(5..=50);
        let chain = random_reversible_chain(size, &mut rng);
        let targets = rng.gen_range(1..=3.min(size - 1));
        let mut target: Vec<usize> = Vec::new();
        while target.len() < targets {
            let b = rng.gen_range(0..size);
            if !target.contains(&b) {
                target.push(b);
            }
        }
        let f: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(occupation_identity_check(&chain, &target, &f)?.abs_diff);
    }
    rows.push(
        1,
        "occupation identity, max abs diff over random reversible chains",
        worst,
        format!("<= {}", tol(th.occupation_tol)),
        worst <= th.occupation_tol,
        format!("{chains} chains, 5 to 50 states"),
    );

    let id = TestFunction::identity();
    let points: Vec<SValue> = (2..=1000).map(SValue::inverse).chain([SValue::ZERO]).collect();
    let gen_dev = points
        .iter()
        .map(|&y| (generator(&id, y) - 0.5).abs())
        .fold(0.0f64, f64::max);
    rows.push(
        2,
        "generator of identity equals 1/2 on {1/n} and 0",
        gen_dev,
        format!("<= {}", tol(th.generator_tol)),
        gen_dev <= th.generator_tol,
        "max deviation in floating point",
    );
    let fs = builtin_test_functions();
    let gamma_dev = fs
        .iter()
        .flat_map(|f| fs.iter().map(move |g| carre_du_champ(f, g, SValue::ZERO).abs()))
        .fold(0.0f64, f64::max);
    rows.push(
        2,
        "carre du champ vanishes at 0 on the built-in suite",
        gamma_dev,
        format!("<= {}", tol(th.generator_tol)),
        gamma_dev <= th.generator_tol,
        format!("{} functions, all ordered pairs", fs.len()),
    );

    let mut gaps = Vec::new();
    for n in [4, 8, 16] {
        let s = lem9_sum(&geom(2, n)?, 2)?;
        let gap = (s.value - 1.0).abs();
        gaps.push(gap);
        rows.push(
            3,
            format!("pair sum, d=2 N={n}: |sum - 1|"),
            gap,
            format!("<= {}", tol(th.lem9_max_gap)),
            gap <= th.lem9_max_gap,
            format!("sum {} residual {}", s.value, sci(s.residual)),
        );
    }
    let trend = gaps.windows(2).all(|w| w[1] <= w[0] + th.monotone_slack);
    rows.push(
        3,
        "pair sum gap non-increasing over N = 4, 8, 16",
        gaps[2],
        format!("non-increasing within {}", tol(th.monotone_slack)),
        trend,
        gaps.iter().map(|g| sci(*g)).collect::<Vec<_>>().join(" "),
    );
    let three = lem9_sum(&geom(2, 4)?, 3)?;
    rows.push(
        3,
        "three-particle sum, d=2 N=4 (recorded)",
        three.value,
        "finite",
        three.value.is_finite(),
        format!("{} states", three.states),
    );
    Ok(rows.finish())
}

/// `τ_{n-1}/θ_N` from scattered starts, for `n` in {2, 3, 4}.
pub fn exponential_samples(
    g: &TorusGeometry,
    n: usize,
    theta: f64,
    seed: u64,
    replicas: u64,
) -> Result<Vec<f64>, SuiteError> {
    let lattice = Lattice::new(*g);
    let a = choose_a_n(g) as f64;
    let records = simulate_replicas(
        |rng| sample_scattered(&lattice, n, a, rng),
        StopRule::ReachCount(n - 1),
        seed,
        replicas,
        DEFAULT_EVENT_CAP,
    )?;
    Ok(records.iter().map(|r| r.final_time / theta).collect())
}

pub fn exponentiality(config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    let th = &config.thresholds;
    let replicas = config.replicas_for(Suite::Exponentiality);
    if replicas < crate::stats::KS_MIN_SAMPLES as u64 {
        return Err(SuiteError::Precondition(format!(
            "exponentiality needs at least {} replicas for the KS test, got {replicas}",
            crate::stats::KS_MIN_SAMPLES
        )));
    }
    let g = geom(3, 16)?;
    let theta = estimate_theta(&g, ThetaMethod::ExactSolve, None, 0, 0)?.theta;
    let mut rows = Rows::new(Suite::Exponentiality);
    for n in [2usize, 3, 4] {
        let seed = derive_seed(config.seed, &format!("exponentiality/n={n}"));
        let samples = exponential_samples(&g, n, theta, seed, replicas)?;
        let rate = lambda(n as u64);
        let ks = ks_exponential(&samples, rate, th.ks_alpha)?;
        rows.push(
            4,
            format!("KS of tau_{}/theta against Exp({rate}), d=3 N=16", n - 1),
            ks.p_value,
            format!("p > {}", th.ks_alpha),
            ks.passed,
            format!("D = {:.5}, a_N = {}, {replicas} replicas", ks.statistic, choose_a_n(&g)),
        );
        let mean = Estimate::from_samples(&samples);
        rows.push(
            5,
            format!("mean of tau_{}/theta against 1/{rate}", n - 1),
            mean.mean,
            format!("within {} SE of {:.6}", th.se_multiplier, 1.0 / rate),
            mean.within(1.0 / rate, th.se_multiplier),
            format!("SE {:.5}", mean.standard_error),
        );
    }
    Ok(rows.finish())
}

/// Full-torus runs to complete coalescence.
pub fn full_torus_records(g: &TorusGeometry, seed: u64, replicas: u64) -> Result<Vec<TrajectoryRecord>, SuiteError> {
    let lattice = Lattice::new(*g);
    Ok(simulate_replicas(
        |_| Ok(ParticleConfig::full(&lattice)),
        StopRule::FullCoalescence,
        seed,
        replicas,
        DEFAULT_EVENT_CAP,
    )?)
}

/// `sum_{k=2}^{K} T_k` with `K` the truncation level for `eps_tail`.
pub fn kingman_absorption_samples(seed: u64, samples: u64, eps_tail: f64) -> Vec<f64> {
    let level = truncation_level(eps_tail);
    (0..samples)
        .into_par_iter()
        .map(|i| sample_absorption_time(level, &mut replica_rng(seed, i)))
        .collect()
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo * (hi / lo).powf(i as f64 / (points - 1) as f64)
            }
        })
        .collect()
}

pub fn kingman_limit(config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    let th = &config.thresholds;
    let replicas = config.replicas_for(Suite::KingmanLimit);
    if replicas < crate::stats::KS_MIN_SAMPLES as u64 {
        return Err(SuiteError::Precondition(format!(
            "kingman_limit needs at least {} replicas for the KS test, got {replicas}",
            crate::stats::KS_MIN_SAMPLES
        )));
    }
    let mut rows = Rows::new(Suite::KingmanLimit);
    let g3 = geom(3, 16)?;
    let theta3 = estimate_theta(&g3, ThetaMethod::ExactSolve, None, 0, 0)?.theta;
    let records3 = full_torus_records(&g3, derive_seed(config.seed, "kingman_limit/d=3"), replicas)?;
    let scaled: Vec<f64> = records3
        .iter()
        .map(|r| r.coalescence_time().unwrap_or(r.final_time) / theta3)
        .collect();
    let kingman = kingman_absorption_samples(derive_seed(config.seed, "kingman_limit/tau"), 10_000, DEFAULT_EPS_TAIL);
    let ks = ks_two_sample(&scaled, &kingman, th.ks_alpha)?;
    let (m_sim, m_king) = (Estimate::from_samples(&scaled), Estimate::from_samples(&kingman));
    rows.push(
        6,
        "KS of C_N/theta (d=3 N=16, full torus) against the Kingman absorption time",
        ks.p_value,
        format!("p > {}", th.ks_alpha),
        ks.passed,
        format!(
            "D = {:.5}; means {:.4} +- {:.4} vs {:.4} +- {:.4}",
            ks.statistic, m_sim.mean, m_sim.standard_error, m_king.mean, m_king.standard_error
        ),
    );

    let cases = [(g3, theta3, records3)];
    let g2 = geom(2, 32)?;
    let theta2 = estimate_theta(&g2, ThetaMethod::ExactSolve, None, 0, 0)?.theta;
    let records2 = full_torus_records(&g2, derive_seed(config.seed, "kingman_limit/d=2"), replicas)?;
    for (g, theta, records) in cases.iter().chain([(g2, theta2, records2)].iter()) {
        let n = g.side();
        let lo = (n * n) as f64;
        let mut grid = vec![0.0];
        grid.extend(log_grid(lo, *theta, 8));
        let table = count_decay_check(records, &grid, (lo, *theta))?;
        let sites = g.num_sites() as f64;
        rows.push(
            11,
            format!("mean count at t=0, d={} N={n}", g.dim()),
            table.rows[0].mean,
            format!("= {sites}"),
            table.rows[0].mean == sites,
            "",
        );
        rows.push(
            11,
            format!("count decay spread on [N^2, theta], d={} N={n}", g.dim()),
            table.spread,
            format!("<= {}", tol(th.decay_max_factor)),
            table.stable_within(th.decay_max_factor),
            format!(
                "fitted c {:.4}; scaled {}",
                table.fitted_c,
                table
                    .rows
                    .iter()
                    .filter(|r| r.in_window)
                    .map(|r| format!("{:.3}", r.scaled))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
        );
    }
    Ok(rows.finish())
}

/// Escape radii used for the v_3 estimate.
pub const ESCAPE_RADII: [f64; 3] = [100.0, 500.0, 1000.0];

pub fn scales(config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    let th = &config.thresholds;
    let walks = config.replicas_for(Suite::Scales);
    let mut rows = Rows::new(Suite::Scales);

    let esc = estimate_escape_radii(3, &ESCAPE_RADII, walks, derive_seed(config.seed, "scales/escape"))?;
    let (v100, v500, v1000) = (esc[0].v, esc[1].v, esc[2].v);
    let stability = (v500 - v1000).abs() / v1000;
    rows.push(
        7,
        "escape estimate v3, R=500 vs R=1000 relative change",
        stability,
        format!("<= {}", tol(th.escape_stability)),
        stability <= th.escape_stability,
        format!(
            "v(100) {v100:.5} v(500) {v500:.5} v(1000) {v1000:.5} SE {:.5}, {walks} walks",
            esc[2].se
        ),
    );
    let ordering = (v100 - v1000).abs() - (v500 - v1000).abs();
    rows.push(
        7,
        "escape truncation bias shrinks with radius",
        ordering,
        "> 0",
        ordering > 0.0,
        "|v(100) - v(1000)| - |v(500) - v(1000)|",
    );

    let v3 = v1000;
    let report = estimate_theta(&geom(3, 16)?, ThetaMethod::ExactSolve, Some(v3), 0, 0)?;
    let gap = report.relative_gap.unwrap_or(f64::INFINITY);
    rows.push(
        7,
        "theta/N^3 at d=3 N=16 against 1/(2 v3)",
        gap,
        format!("<= {}", tol(th.theta_max_gap)),
        gap <= th.theta_max_gap,
        format!("theta/N^3 {:.5} vs {:.5}", report.normalized(), 1.0 / (2.0 * v3)),
    );
    let ratios: Vec<f64> = [8, 12, 16]
        .iter()
        .map(|&n| Ok(estimate_theta(&geom(3, n)?, ThetaMethod::ExactSolve, None, 0, 0)?.normalized()))
        .collect::<Result<_, SuiteError>>()?;
    let spread =
        ratios.iter().copied().fold(f64::MIN, f64::max) / ratios.iter().copied().fold(f64::MAX, f64::min) - 1.0;
    rows.push(
        7,
        "theta/N^3 variation over N = 8, 12, 16",
        spread,
        "< 0.1",
        spread < 0.1,
        ratios.iter().map(|r| format!("{r:.5}")).collect::<Vec<_>>().join(" "),
    );
    let d2: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| Ok(estimate_theta(&geom(2, n)?, ThetaMethod::ExactSolve, None, 0, 0)?.normalized()))
        .collect::<Result<_, SuiteError>>()?;
    let pi_gaps: Vec<f64> = d2.iter().map(|r| (r - std::f64::consts::FRAC_1_PI).abs()).collect();
    rows.push(
        7,
        "d=2 theta/(N^2 log N) approaching 1/pi over N = 16, 32, 64",
        pi_gaps[2],
        "gap strictly decreasing",
        strictly_decreasing(&pi_gaps),
        d2.iter().map(|r| format!("{r:.5}")).collect::<Vec<_>>().join(" "),
    );

    let target = v3 * (-1.0f64).exp();
    let mut gaps = Vec::new();
    for n in [6, 8, 12] {
        let g = geom(3, n)?;
        let theta = theta_spectral(&g, 2.0)?;
        let survival = pair_coalescence_law(&g, &g.origin(), &g.unit(0), &[theta])?[0];
        let gap = (survival - target).abs() / target;
        gaps.push(gap);
        rows.push(
            8,
            format!("adjacent pair survival at theta, d=3 N={n}"),
            survival,
            format!("v3/e = {target:.5}"),
            true,
            format!("relative gap {gap:.5}"),
        );
    }
    rows.push(
        8,
        "adjacent pair survival gap decreasing, final gap",
        gaps[2],
        format!("decreasing and <= {}", th.pair_law_max_gap),
        strictly_decreasing(&gaps) && gaps[2] <= th.pair_law_max_gap,
        gaps.iter().map(|g| format!("{g:.5}")).collect::<Vec<_>>().join(" "),
    );
    Ok(rows.finish())
}

/// Replacement statistic with `F = 1{2,3}` from full-torus starts.
pub fn replacement_samples(
    g: &TorusGeometry,
    theta: f64,
    seed: u64,
    replicas: u64,
    window: (f64, f64),
) -> Result<Vec<f64>, SuiteError> {
    let lattice = Lattice::new(*g);
    let initial = ParticleConfig::full(&lattice);
    let weight = CountWeight::indicator(&[2, 3]);
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            Ok(replacement_statistic(
                &initial,
                window.0,
                window.1,
                &weight,
                theta,
                &mut rng,
                DEFAULT_EVENT_CAP,
            )?
            .value)
        })
        .collect()
}

pub fn replacement(config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    let th = &config.thresholds;
    let replicas = config.replicas_for(Suite::Replacement);
    if replicas < 2 {
        return Err(SuiteError::Precondition("replacement needs at least 2 replicas".into()));
    }
    let mut rows = Rows::new(Suite::Replacement);
    let mut means = Vec::new();
    let mut last = None;
    for n in [8usize, 16, 32] {
        let g = geom(3, n)?;
        let theta = theta_spectral(&g, 2.0)?;
        let seed = derive_seed(config.seed, &format!("replacement/N={n}"));
        let est = Estimate::from_samples(&replacement_samples(&g, theta, seed, replicas, (0.1, 1.0))?);
        means.push(est.mean.abs());
        rows.push(
            9,
            format!("replacement statistic mean, d=3 N={n}"),
            est.mean,
            "recorded",
            true,
            format!("SE {:.5}, {replicas} replicas", est.standard_error),
        );
        last = Some(est);
    }
    let last = last.expect("three grid points");
    rows.push(
        9,
        "|mean| decreasing over N = 8, 16, 32",
        means[2],
        "strictly decreasing",
        strictly_decreasing(&means),
        means.iter().map(|m| format!("{m:.5}")).collect::<Vec<_>>().join(" "),
    );
    rows.push(
        9,
        "mean at N=32 against 0",
        last.mean,
        format!("within {} SE of 0", th.se_multiplier),
        last.within(0.0, th.se_multiplier),
        format!("SE {:.5}", last.standard_error),
    );
    Ok(rows.finish())
}

/// Names of the five test functions used by the martingale suite.
pub const MARTINGALE_FUNCTIONS: [&str; 5] = ["identity", "x^2", "sin(3x)", "exp(-x)", "ramp(1/8,1/5)"];

/// Window `[s, t]` of the martingale check.
pub const MARTINGALE_WINDOW: (f64, f64) = (0.5, 1.5);

type Conditioning = (&'static str, fn(&KingmanPath, f64) -> f64);

fn conditioning_functionals() -> [Conditioning; 3] {
    [
        ("B = 1", |_, _| 1.0),
        ("B = X(s/2)", |p, s| p.value_at(s / 2.0)),
        ("B = 1{N(s) <= 4}", |p, s| if p.level_at(s) <= 4 { 1.0 } else { 0.0 }),
    ]
}

pub fn martingale(config: &SuiteConfig) -> Result<SuiteReport, SuiteError> {
    let th = &config.thresholds;
    let paths = config.replicas_for(Suite::Martingale);
    if paths < 2 {
        return Err(SuiteError::Precondition("martingale needs at least 2 paths".into()));
    }
    let all = builtin_test_functions();
    let fs: Vec<&TestFunction> = MARTINGALE_FUNCTIONS
        .iter()
        .map(|name| all.iter().find(|f| f.name() == *name).expect("built-in function"))
        .collect();
    let bs = conditioning_functionals();
    let (s, t) = MARTINGALE_WINDOW;
    let seed = derive_seed(config.seed, "martingale/paths");
    // one row of B * (M_t - M_s) values per path, paths dropped after use
    let values: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| {
            let path = sample_path(SValue::ZERO, t, DEFAULT_EPS_TAIL, &mut replica_rng(seed, i))?;
            let weights: Vec<f64> = bs.iter().map(|(_, b)| b(&path, s)).collect();
            Ok(fs
                .iter()
                .flat_map(|f| {
                    let inc = martingale_increment(&path, f, s, t);
                    weights.iter().map(move |w| w * inc)
                })
                .collect())
        })
        .collect::<Result<_, SuiteError>>()?;
    let mut rows = Rows::new(Suite::Martingale);
    for (fi, f) in fs.iter().enumerate() {
        for (bi, (bname, _)) in bs.iter().enumerate() {
            let column: Vec<f64> = values.iter().map(|v| v[fi * bs.len() + bi]).collect();
            let est = Estimate::from_samples(&column);
            rows.push(
                10,
                format!("residual of {} with {bname} on [{s}, {t}]", f.name()),
                est.mean,
                format!("within {} SE of 0", th.se_multiplier),
                est.within(0.0, th.se_multiplier),
                format!("SE {}, {paths} paths from 0", sci(est.standard_error)),
            );
        }
    }
    Ok(rows.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert_eq!("nope".parse::<Suite>(), Err(SuiteError::UnknownSuite("nope".into())));
        let covered: Vec<u32> = Suite::ALL.iter().flat_map(|s| s.criteria().iter().copied()).collect();
        assert_eq!(covered.len(), 11);
    }

    #[test]
    fn exponentiality_refuses_small_runs() {
        let config = SuiteConfig {
            replicas: Some(10),
            ..SuiteConfig::default()
        };
        assert!(matches!(exponentiality(&config), Err(SuiteError::Precondition(_))));
        assert!(matches!(kingman_limit(&config), Err(SuiteError::Precondition(_))));
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let report = SuiteReport {
            suite: Suite::Martingale,
            rows: vec![SuiteRow {
                suite: "martingale".into(),
                criterion: 10,
                check: "a, quoted \"check\"".into(),
                value: 0.5,
                target: "x".into(),
                passed: true,
                note: String::new(),
            }],
        };
        let csv = report.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "suite,criterion,check,value,target,passed,note");
        assert_eq!(lines.len(), 2);
        assert_eq!(report.criterion_passed(10), Some(true));
        assert_eq!(report.criterion_passed(9), None);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 50.0, 5);
        assert_eq!(g[0], 2.0);
        assert_eq!(g[4], 50.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
