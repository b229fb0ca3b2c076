//! Exact linear algebra on small finite chains: hitting times, occupation
//! integrals, the neighbour-weighted hitting-time sum, and survival laws by
//! uniformization. These are the ground truth the Monte Carlo paths are
//! checked against.

use std::collections::{HashMap, VecDeque};

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::lattice::{jump_kernel, TorusGeometry, TorusPoint};

/// Largest number of states solved densely.
pub const STATE_CAP: usize = 20_000;

/// Residual above which a solve is reported as failed.
const RESIDUAL_LIMIT: f64 = 1e-8;

/// Poisson tail mass dropped by uniformization.
const POISSON_TAIL: f64 = 1e-12;

/// A finite continuous-time chain given by its off-diagonal rates, with
/// optional stationary weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    rates: Vec<Vec<(usize, f64)>>,
    pi: Option<Vec<f64>>,
}

impl ChainSpec {
    /// Builds a chain from `(from, to, rate)` triples. Repeated pairs add
    /// up; self-loops are dropped.
    pub fn new(states: usize, transitions: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self, OracleError> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); states];
        for (from, to, rate) in transitions {
            if from >= states {
                return Err(OracleError::State(from));
            }
            if to >= states {
                return Err(OracleError::State(to));
            }
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(OracleError::Rate { from, to, rate });
            }
            if from != to && rate > 0.0 {
                rows[from].push((to, rate));
            }
        }
        for row in rows.iter_mut() {
            row.sort_by_key(|&(to, _)| to);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(to, rate) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == to => last.1 += rate,
                    _ => merged.push((to, rate)),
                }
            }
            *row = merged;
        }
        Ok(ChainSpec { rates: rows, pi: None })
    }

    pub fn with_stationary(mut self, pi: Vec<f64>) -> Result<Self, OracleError> {
        if pi.len() != self.len() {
            return Err(OracleError::Length {
                expected: self.len(),
                got: pi.len(),
            });
        }
        self.pi = Some(pi);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn rates_from(&self, state: usize) -> &[(usize, f64)] {
        &self.rates[state]
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rates[from]
            .binary_search_by_key(&to, |&(s, _)| s)
            .map_or(0.0, |i| self.rates[from][i].1)
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        self.rates[state].iter().map(|&(_, r)| r).sum()
    }

    pub fn stationary(&self) -> Option<&[f64]> {
        self.pi.as_deref()
    }

    /// Multiplies every rate by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        ChainSpec {
            rates: self
                .rates
                .iter()
                .map(|row| row.iter().map(|&(to, r)| (to, r * c)).collect())
                .collect(),
            pi: self.pi.clone(),
        }
    }

    /// `max |pi(a) r(a, b) - pi(b) r(b, a)|`.
    pub fn reversibility_defect(&self) -> Result<f64, OracleError> {
        let pi = self.pi.as_ref().ok_or(OracleError::MissingStationary)?;
        let mut worst = 0.0f64;
        for (a, row) in self.rates.iter().enumerate() {
            for &(b, r) in row {
                worst = worst.max((pi[a] * r - pi[b] * self.rate(b, a)).abs());
            }
        }
        Ok(worst)
    }

    pub fn check_reversible(&self, tol: f64) -> Result<(), OracleError> {
        let defect = self.reversibility_defect()?;
        if defect > tol {
            return Err(OracleError::NotReversible(defect));
        }
        Ok(())
    }
}

/// `-L` restricted to the complement of a target set, factorized once.
struct AbsorbedSystem<'a> {
    chain: &'a ChainSpec,
    free: Vec<usize>,
    position: Vec<Option<usize>>,
    lu: PartialPivLu<f64>,
}

impl<'a> AbsorbedSystem<'a> {
    fn new(chain: &'a ChainSpec, target: &[usize]) -> Result<Self, OracleError> {
        let n = chain.len();
        if n > STATE_CAP {
            return Err(OracleError::Capacity {
                states: n,
                cap: STATE_CAP,
            });
        }
        if target.is_empty() {
            return Err(OracleError::EmptyTarget);
        }
        let mut in_target = vec![false; n];
        for &b in target {
            if b >= n {
                return Err(OracleError::State(b));
            }
            in_target[b] = true;
        }
        // every state must be able to reach the target
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, row) in chain.rates.iter().enumerate() {
            for &(b, _) in row {
                reverse[b].push(a);
            }
        }
        let mut seen = in_target.clone();
        let mut queue: VecDeque<usize> = target.iter().copied().collect();
        while let Some(b) = queue.pop_front() {
            for &a in &reverse[b] {
                if !seen[a] {
                    seen[a] = true;
                    queue.push_back(a);
                }
            }
        }
        let unreachable = seen.iter().filter(|&&s| !s).count();
        if unreachable > 0 {
            return Err(OracleError::Unreachable(unreachable));
        }

        let free: Vec<usize> = (0..n).filter(|&s| !in_target[s]).collect();
        let mut position = vec![None; n];
        for (i, &s) in free.iter().enumerate() {
            position[s] = Some(i);
        }
        let m = free.len();
        let mut a = Mat::<f64>::zeros(m, m);
        for (i, &s) in free.iter().enumerate() {
            a[(i, i)] = chain.exit_rate(s);
            for &(to, r) in chain.rates_from(s) {
                if let Some(j) = position[to] {
                    a[(i, j)] -= r;
                }
            }
        }
        let lu = a.partial_piv_lu();
        Ok(AbsorbedSystem {
            chain,
            free,
            position,
            lu,
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let off: f64 = self
                    .chain
                    .rates_from(s)
                    .iter()
                    .filter_map(|&(to, r)| self.position[to].map(|j| r * x[j]))
                    .sum();
                self.chain.exit_rate(s) * x[i] - off
            })
            .collect()
    }

    fn lu_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves with two rounds of iterative refinement; returns the
    /// solution and the scaled residual `max|b - Ax| / max(1, max|b|)`.
    fn solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64), OracleError> {
        if rhs.is_empty() {
            return Ok((Vec::new(), 0.0));
        }
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut x = self.lu_solve(rhs);
        let residual_of = |x: &[f64]| -> Vec<f64> { self.apply(x).iter().zip(rhs).map(|(ax, b)| b - ax).collect() };
        let mut r = residual_of(&x);
        for _ in 0..2 {
            let dx = self.lu_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            r = residual_of(&x);
        }
        let residual = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        if residual.is_nan() || residual > RESIDUAL_LIMIT {
            return Err(OracleError::Residual(residual));
        }
        Ok((x, residual))
    }

    fn expand(&self, free_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.chain.len()];
        for (i, &s) in self.free.iter().enumerate() {
            out[s] = free_values[i];
        }
        out
    }
}

/// Expected hitting times of a target set from every state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingTimes {
    pub times: Vec<f64>,
    pub residual: f64,
}

impl HittingTimes {
    /// Average under a weight vector (usually the stationary law).
    pub fn average(&self, weights: &[f64]) -> f64 {
        self.times.iter().zip(weights).map(|(h, w)| h * w).sum()
    }
}

/// Solves `-L h = 1` off `target`, `h = 0` on it.
pub fn expected_hitting_time(chain: &ChainSpec, target: &[usize]) -> Result<HittingTimes, OracleError> {
    let system = AbsorbedSystem::new(chain, target)?;
    let (h, residual) = system.solve(&vec![1.0; system.free.len()])?;
    Ok(HittingTimes {
        times: system.expand(&h),
        residual,
    })
}

/// Both sides of the occupation identity
/// `E_pi[int_0^{H_B} f(X_s) ds] = sum_x pi(x) f(x) E_x[H_B]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupationCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_diff: f64,
    pub residual: f64,
}

/// Evaluates both sides of the occupation identity on a reversible chain.
/// The left side solves the occupation system `-L u = f` off `target`;
/// the right side weights the hitting times `-L h = 1`.
pub fn occupation_identity_check(
    chain: &ChainSpec,
    target: &[usize],
    f: &[f64],
) -> Result<OccupationCheck, OracleError> {
    if f.len() != chain.len() {
        return Err(OracleError::Length {
            expected: chain.len(),
            got: f.len(),
        });
    }
    chain.check_reversible(1e-12)?;
    let pi = chain.stationary().ok_or(OracleError::MissingStationary)?;
    let system = AbsorbedSystem::new(chain, target)?;
    let f_free: Vec<f64> = system.free.iter().map(|&s| f[s]).collect();
    let (u, r1) = system.solve(&f_free)?;
    let (h, r2) = system.solve(&vec![1.0; system.free.len()])?;
    let u = system.expand(&u);
    let h = system.expand(&h);
    let lhs: f64 = pi.iter().zip(&u).map(|(p, v)| p * v).sum();
    let rhs: f64 = (0..chain.len()).map(|x| pi[x] * f[x] * h[x]).sum();
    Ok(OccupationCheck {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
        residual: r1.max(r2),
    })
}

/// Nearest-neighbour walk on the torus at total jump rate `speed`, with
/// the uniform stationary law. At `speed = 2` this is the law of the
/// difference of two independent rate-one walks.
pub fn difference_walk_chain(g: &TorusGeometry, speed: f64) -> Result<ChainSpec, OracleError> {
    let m = g.num_sites();
    if m > STATE_CAP {
        return Err(OracleError::Capacity {
            states: m,
            cap: STATE_CAP,
        });
    }
    let k = g.num_directions();
    let rate = speed / k as f64;
    let transitions = (0..m).flat_map(move |x| (0..k).map(move |dir| (x, g.neighbor(x, dir), rate)));
    ChainSpec::new(m, transitions)?.with_stationary(vec![1.0 / m as f64; m])
}

/// Hitting times of the origin for the walk at `speed`, from every site.
pub fn origin_hitting_times(g: &TorusGeometry, speed: f64) -> Result<HittingTimes, OracleError> {
    let chain = difference_walk_chain(g, speed)?;
    expected_hitting_time(&chain, &[0])
}

/// Mean hitting time of the origin from the uniform law, by dense solve.
/// At `speed = 2` this is the mean meeting time of two independent
/// stationary walks.
pub fn mean_hitting_time_from_uniform(g: &TorusGeometry, speed: f64) -> Result<(f64, f64), OracleError> {
    let h = origin_hitting_times(g, speed)?;
    let m = g.num_sites() as f64;
    Ok((h.times.iter().sum::<f64>() / m, h.residual))
}

/// Value of `sum_{A, |A| = n} pi^n(A) E_A[tau_{n-1}] R(A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborSum {
    pub value: f64,
    pub residual: f64,
    pub states: usize,
}

/// All `n`-subsets of the torus as a chain run until the first
/// coalescence, plus one absorbing state (the last index). Returns the
/// chain and the subsets in index order.
pub fn subset_chain(g: &TorusGeometry, n: usize) -> Result<(ChainSpec, Vec<Vec<usize>>), OracleError> {
    let m = g.num_sites();
    let count = binomial(m, n);
    if count.is_none_or(|c| c + 1 > STATE_CAP) {
        return Err(OracleError::Capacity {
            states: count.unwrap_or(usize::MAX),
            cap: STATE_CAP,
        });
    }
    let subsets = combinations(m, n);
    let index: HashMap<&[usize], usize> = subsets.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let absorbing = subsets.len();
    let k = g.num_directions();
    let rate = 1.0 / k as f64;
    let mut transitions = Vec::with_capacity(subsets.len() * n * k);
    for (i, subset) in subsets.iter().enumerate() {
        for (slot, &x) in subset.iter().enumerate() {
            for dir in 0..k {
                let y = g.neighbor(x, dir);
                if subset.contains(&y) {
                    transitions.push((i, absorbing, rate));
                } else {
                    let mut moved = subset.clone();
                    moved[slot] = y;
                    moved.sort_unstable();
                    transitions.push((i, index[moved.as_slice()], rate));
                }
            }
        }
    }
    let chain = ChainSpec::new(absorbing + 1, transitions)?;
    Ok((chain, subsets))
}

fn binomial(m: usize, n: usize) -> Option<usize> {
    if n > m {
        return Some(0);
    }
    let mut c: usize = 1;
    for i in 0..n {
        c = c.checked_mul(m - i)? / (i + 1);
    }
    Some(c)
}

fn combinations(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    if n > m {
        return out;
    }
    loop {
        out.push(current.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if current[i] < m - n + i {
                break;
            }
        }
        current[i] += 1;
        for j in i + 1..n {
            current[j] = current[j - 1] + 1;
        }
    }
}

/// `R(A)` for a set of site indices, evaluated from the kernel.
pub fn pair_rate(g: &TorusGeometry, sites: &[usize]) -> f64 {
    let pts: Vec<TorusPoint> = sites.iter().map(|&s| g.point_of(s)).collect();
    let mut r = 0.0;
    for (i, x) in pts.iter().enumerate() {
        for (j, y) in pts.iter().enumerate() {
            if i != j {
                r += jump_kernel(g, &g.sub(y, x));
            }
        }
    }
    r
}

/// Exact `sum_{|A| = n} pi^n(A) E_A[tau_{n-1}] R(A)` for `n` in `{2, 3}`.
///
/// For `n = 2` the pair meeting time depends only on the displacement, so
/// the sum reduces to `(2 / (N^d - 1)) sum_delta p(delta) h(delta)` with
/// `h` the hitting time of the origin by the speed-two walk. For `n = 3`
/// the three-particle chain is solved directly.
pub fn lem9_sum(g: &TorusGeometry, n: usize) -> Result<NeighborSum, OracleError> {
    match n {
        2 => {
            let h = origin_hitting_times(g, 2.0)?;
            let m = g.num_sites();
            let weighted: f64 = (0..m).map(|s| jump_kernel(g, &g.point_of(s)) * h.times[s]).sum();
            Ok(NeighborSum {
                value: 2.0 * weighted / (m - 1) as f64,
                residual: h.residual,
                states: m,
            })
        }
        3 => subset_sum(g, 3),
        other => Err(OracleError::ParticleCount(other)),
    }
}

/// The same sum by brute force over the `n`-subset chain.
pub fn subset_sum(g: &TorusGeometry, n: usize) -> Result<NeighborSum, OracleError> {
    let (chain, subsets) = subset_chain(g, n)?;
    let absorbing = subsets.len();
    let h = expected_hitting_time(&chain, &[absorbing])?;
    let weight = 1.0 / subsets.len() as f64;
    let value = subsets
        .iter()
        .enumerate()
        .map(|(i, s)| weight * h.times[i] * pair_rate(g, s))
        .sum();
    Ok(NeighborSum {
        value,
        residual: h.residual,
        states: subsets.len(),
    })
}

/// `P_start[H_target > t]` for each `t`, by uniformization: with
/// `Λ = max exit rate` and `P = I + Q/Λ` killed on the target,
/// `P[H > t] = sum_k Poisson(k; Λt) (P^k 1)(start)`. The series is cut
/// once the remaining Poisson mass is below `1e-12`.
pub fn survival_probability(
    chain: &ChainSpec,
    target: &[usize],
    start: usize,
    t_grid: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let n = chain.len();
    if n > STATE_CAP {
        return Err(OracleError::Capacity {
            states: n,
            cap: STATE_CAP,
        });
    }
    if target.is_empty() {
        return Err(OracleError::EmptyTarget);
    }
    if start >= n {
        return Err(OracleError::State(start));
    }
    if let Some(&t) = t_grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(OracleError::Time(t));
    }
    let mut alive = vec![true; n];
    for &b in target {
        if b >= n {
            return Err(OracleError::State(b));
        }
        alive[b] = false;
    }
    if !alive[start] {
        return Ok(vec![0.0; t_grid.len()]);
    }
    let big_lambda = (0..n)
        .filter(|&s| alive[s])
        .map(|s| chain.exit_rate(s))
        .fold(0.0f64, f64::max);
    if big_lambda == 0.0 {
        return Ok(vec![1.0; t_grid.len()]);
    }
    // s_k = (P^k 1)(start), generated lazily
    let mut v: Vec<f64> = alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut series = vec![1.0];
    let advance = |v: &mut Vec<f64>| -> f64 {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if !alive[s] {
                    return 0.0;
                }
                let stay = 1.0 - chain.exit_rate(s) / big_lambda;
                let moved: f64 = chain.rates_from(s).iter().map(|&(to, r)| r / big_lambda * v[to]).sum();
                stay * v[s] + moved
            })
            .collect();
        *v = next;
        v[start]
    };
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mean = big_lambda * t;
        if mean == 0.0 {
            out.push(1.0);
            continue;
        }
        let mut log_w = -mean;
        let mut total = 0.0;
        let mut k = 0usize;
        loop {
            while series.len() <= k {
                let s = advance(&mut v);
                series.push(s);
            }
            let w = log_w.exp();
            total += w * series[k];
            let ratio = mean / (k + 1) as f64;
            if (k as f64) > mean && ratio < 1.0 && w * ratio / (1.0 - ratio) < POISSON_TAIL {
                break;
            }
            log_w += mean.ln() - ((k + 1) as f64).ln();
            k += 1;
        }
        out.push(total.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// `P[tau_1 > t]` for two coalescing walks started at `x` and `y`, from
/// the speed-two difference walk killed at the origin.
pub fn pair_coalescence_law(
    g: &TorusGeometry,
    x: &TorusPoint,
    y: &TorusPoint,
    t_grid: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let chain = difference_walk_chain(g, 2.0)?;
    let start = g.index_of(&g.sub(y, x));
    survival_probability(&chain, &[0], start, t_grid)
}

/// Random irreducible reversible chain: a ring of random conductances
/// with extra random chords, and random stationary weights.
pub fn random_reversible_chain<R: Rng + ?Sized>(states: usize, rng: &mut R) -> ChainSpec {
    let raw: Vec<f64> = (0..states).map(|_| rng.gen_range(0.2..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..states {
        if states > 1 {
            edges.push((a, (a + 1) % states, rng.gen_range(0.1..1.0)));
        }
        for b in a + 2..states {
            if rng.gen_bool(0.15) {
                edges.push((a, b, rng.gen_range(0.01..1.0)));
            }
        }
    }
    let transitions: Vec<(usize, usize, f64)> = edges
        .iter()
        .flat_map(|&(a, b, c)| [(a, b, c / pi[a]), (b, a, c / pi[b])])
        .collect();
    ChainSpec::new(states, transitions)
        .and_then(|c| c.with_stationary(pi))
        .expect("well-formed random chain")
}

/// JSON record emitted for direct oracle queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub operation: String,
    pub parameters: serde_json::Value,
    pub value: serde_json::Value,
    pub residual: f64,
}
