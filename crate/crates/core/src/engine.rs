//! Event-driven simulation of coalescing random walks on the torus.
//!
//! The chain lives on nonempty subsets `A` of the torus. Every particle
//! jumps at rate one to a uniformly chosen nearest neighbour; a particle
//! landing on an occupied site is removed. The simulator runs a single
//! exponential clock at rate `|A|` and picks the mover uniformly, which
//! has the same law as independent per-particle clocks.
//!
//! Time inside this module is always the natural (unrescaled) time.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::kingman::lambda;
use crate::lattice::{torus_distance, TorusGeometry, TorusPoint};
use crate::seeding::replica_rng;

/// Default hard cap on the number of events in a single replica.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000_000;

const EMPTY: u32 = u32::MAX;

/// Torus geometry together with its precomputed neighbour table. Shared
/// read-only between replicas.
#[derive(Debug)]
pub struct Lattice {
    geometry: TorusGeometry,
    neighbors: Vec<u32>,
}

impl Lattice {
    pub fn new(geometry: TorusGeometry) -> Arc<Self> {
        Arc::new(Lattice {
            neighbors: geometry.neighbor_table(),
            geometry,
        })
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    #[inline]
    fn neighbor(&self, site: usize, dir: usize) -> usize {
        self.neighbors[site * self.geometry.num_directions() + dir] as usize
    }
}

/// A nonempty set of occupied sites.
///
/// Occupancy is a dense site-to-slot array plus a packed vector of
/// occupied sites, giving O(1) membership, uniform sampling and
/// swap-removal. The ordered count of occupied nearest-neighbour
/// (site, direction) pairs is maintained incrementally so that the
/// coalescence intensity [`rate_r`] is O(1).
#[derive(Debug, Clone)]
pub struct ParticleConfig {
    lattice: Arc<Lattice>,
    slot_of: Vec<u32>,
    sites: Vec<u32>,
    adjacent: usize,
}

impl ParticleConfig {
    /// Builds a configuration from site indices; repeated sites collapse.
    pub fn from_sites(lattice: &Arc<Lattice>, sites: &[usize]) -> Result<Self, EngineError> {
        if sites.is_empty() {
            return Err(EngineError::EmptyConfig);
        }
        let total = lattice.geometry.num_sites();
        let mut config = ParticleConfig {
            lattice: Arc::clone(lattice),
            slot_of: vec![EMPTY; total],
            sites: Vec::with_capacity(sites.len()),
            adjacent: 0,
        };
        for &site in sites {
            if site >= total {
                return Err(EngineError::SiteOutOfRange { site, sites: total });
            }
            if config.slot_of[site] == EMPTY {
                config.insert(site);
            }
        }
        Ok(config)
    }

    pub fn from_points(lattice: &Arc<Lattice>, points: &[TorusPoint]) -> Result<Self, EngineError> {
        let g = lattice.geometry;
        let sites: Vec<usize> = points.iter().map(|p| g.index_of(p)).collect();
        Self::from_sites(lattice, &sites)
    }

    /// Every site of the torus occupied.
    pub fn full(lattice: &Arc<Lattice>) -> Self {
        let sites: Vec<usize> = (0..lattice.geometry.num_sites()).collect();
        Self::from_sites(lattice, &sites).expect("torus is nonempty")
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.lattice.geometry
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.sites.len()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.slot_of.get(site).is_some_and(|&s| s != EMPTY)
    }

    /// Occupied sites in slot order.
    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        self.sites.iter().map(|&s| s as usize)
    }

    pub fn points(&self) -> Vec<TorusPoint> {
        self.sites().map(|s| self.geometry().point_of(s)).collect()
    }

    /// Ordered count of (occupied site, direction) pairs whose neighbour is
    /// occupied.
    pub fn adjacent_pairs(&self) -> usize {
        self.adjacent
    }

    fn occupied_directions(&self, site: usize) -> usize {
        (0..self.geometry().num_directions())
            .filter(|&dir| self.slot_of[self.lattice.neighbor(site, dir)] != EMPTY)
            .count()
    }

    fn insert(&mut self, site: usize) {
        self.adjacent += 2 * self.occupied_directions(site);
        self.slot_of[site] = self.sites.len() as u32;
        self.sites.push(site as u32);
    }

    fn remove_slot(&mut self, slot: usize) -> usize {
        let site = self.sites[slot] as usize;
        self.slot_of[site] = EMPTY;
        self.adjacent -= 2 * self.occupied_directions(site);
        self.sites.swap_remove(slot);
        if slot < self.sites.len() {
            self.slot_of[self.sites[slot] as usize] = slot as u32;
        }
        site
    }

    /// Moves the particle in `slot` one step in direction `dir`; returns
    /// `true` if it landed on an occupied site and was absorbed.
    fn jump(&mut self, slot: usize, dir: usize) -> bool {
        let from = self.sites[slot] as usize;
        let to = self.lattice.neighbor(from, dir);
        if self.slot_of[to] != EMPTY {
            self.remove_slot(slot);
            return true;
        }
        self.slot_of[from] = EMPTY;
        self.adjacent -= 2 * self.occupied_directions(from);
        self.adjacent += 2 * self.occupied_directions(to);
        self.slot_of[to] = slot as u32;
        self.sites[slot] = to as u32;
        false
    }
}

/// Outcome of one event of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub holding_time: f64,
    pub coalesced: bool,
}

#[inline]
fn holding_time<R: Rng + ?Sized>(count: usize, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / count as f64
}

#[inline]
fn random_jump<R: Rng + ?Sized>(config: &mut ParticleConfig, rng: &mut R) -> bool {
    let k = config.geometry().num_directions();
    let draw = rng.gen_range(0..config.count() * k);
    config.jump(draw / k, draw % k)
}

/// One event: an `Exp(|A|)` holding time, then a uniformly chosen particle
/// takes a kernel step and coalesces if its target is occupied.
pub fn step<R: Rng + ?Sized>(config: &mut ParticleConfig, rng: &mut R) -> StepOutcome {
    let holding_time = holding_time(config.count(), rng);
    let coalesced = random_jump(config, rng);
    StepOutcome {
        holding_time,
        coalesced,
    }
}

/// When a simulation stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop the first time `|A| <= j`.
    ReachCount(usize),
    /// Stop at natural time `T`.
    ReachTime(f64),
    /// Stop when a single particle is left.
    FullCoalescence,
}

/// Coalescence times and bookkeeping of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub replica: u64,
    #[serde(rename = "N")]
    pub side: usize,
    pub d: usize,
    /// `tau[j]` is the first time the configuration has `j` particles.
    pub tau: BTreeMap<usize, f64>,
    pub final_time: f64,
    pub jump_count: u64,
}

impl TrajectoryRecord {
    pub fn initial_count(&self) -> usize {
        self.tau.keys().next_back().copied().unwrap_or(0)
    }

    /// `tau_j`, if the run got that far.
    pub fn tau(&self, j: usize) -> Option<f64> {
        self.tau.get(&j).copied()
    }

    /// Full coalescence time `tau_1`.
    pub fn coalescence_time(&self) -> Option<f64> {
        self.tau(1)
    }

    /// Number of particles at time `t <= final_time`.
    pub fn count_at(&self, t: f64) -> usize {
        self.tau
            .iter()
            .find(|(_, &time)| time <= t)
            .map(|(&j, _)| j)
            .unwrap_or_else(|| self.initial_count())
    }
}

/// Runs the chain from `initial` until `stop` fires.
pub fn simulate<R: Rng + ?Sized>(
    initial: &ParticleConfig,
    stop: StopRule,
    rng: &mut R,
    event_cap: u64,
) -> Result<TrajectoryRecord, EngineError> {
    let initial_count = initial.count();
    if let StopRule::ReachCount(target) = stop {
        if target == 0 || target > initial_count {
            return Err(EngineError::StopRule {
                target,
                initial: initial_count,
            });
        }
    }
    let g = *initial.geometry();
    let mut config = initial.clone();
    let mut tau = BTreeMap::new();
    tau.insert(initial_count, 0.0);
    let mut time = 0.0;
    let mut jumps = 0u64;
    loop {
        match stop {
            StopRule::FullCoalescence if config.count() == 1 => break,
            StopRule::ReachCount(target) if config.count() <= target => break,
            _ => {}
        }
        let hold = holding_time(config.count(), rng);
        if let StopRule::ReachTime(horizon) = stop {
            if time + hold > horizon {
                time = horizon;
                break;
            }
        }
        if jumps >= event_cap {
            return Err(EngineError::EventCap {
                cap: event_cap,
                time,
                count: config.count(),
            });
        }
        jumps += 1;
        time += hold;
        if random_jump(&mut config, rng) {
            tau.insert(config.count(), time);
        }
    }
    Ok(TrajectoryRecord {
        seed: 0,
        replica: 0,
        side: g.side(),
        d: g.dim(),
        tau,
        final_time: time,
        jump_count: jumps,
    })
}

/// Runs replicas `0..replicas` in parallel; replica `i` draws from
/// `replica_rng(seed, i)`, first to build its initial configuration and
/// then to drive the chain. Output is ordered by replica index.
pub fn simulate_replicas<F>(
    make_initial: F,
    stop: StopRule,
    seed: u64,
    replicas: u64,
    event_cap: u64,
) -> Result<Vec<TrajectoryRecord>, EngineError>
where
    F: Fn(&mut crate::seeding::ReplicaRng) -> Result<ParticleConfig, EngineError> + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            let initial = make_initial(&mut rng)?;
            let mut record = simulate(&initial, stop, &mut rng, event_cap)?;
            record.seed = seed;
            record.replica = i;
            Ok(record)
        })
        .collect()
}

/// `R(A) = sum_{x in A} sum_{y in A, y != x} p(y - x)`: the instantaneous
/// rate at which some particle jumps onto another.
pub fn rate_r(config: &ParticleConfig) -> f64 {
    config.adjacent_pairs() as f64 / config.geometry().num_directions() as f64
}

/// True iff all pairwise wrapped distances are at least `a`.
pub fn is_scattered(config: &ParticleConfig, a: f64) -> bool {
    let points = config.points();
    let g = config.geometry();
    points
        .iter()
        .enumerate()
        .all(|(i, x)| points[i + 1..].iter().all(|y| torus_distance(g, x, y) >= a))
}

fn ball_volume(dim: usize, radius: f64) -> f64 {
    // pi^{d/2} r^d / Gamma(d/2 + 1), Gamma at integers and half-integers
    let half = dim as f64 / 2.0;
    let mut gamma = if dim.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut x = if dim.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < half + 1.0 - 1e-9 {
        gamma *= x;
        x += 1.0;
    }
    std::f64::consts::PI.powf(half) * radius.powi(dim as i32) / gamma
}

/// Whether `count` disjoint balls of radius `a/2` fit in the torus volume.
pub fn packing_feasible(g: &TorusGeometry, count: usize, a: f64) -> bool {
    count as f64 * ball_volume(g.dim(), a / 2.0) <= g.num_sites() as f64
}

/// Draws `count` sites with all pairwise wrapped distances at least `a`.
/// Points are placed one at a time, each uniform among the sites far
/// enough from those already placed; a dead end restarts the draw.
pub fn sample_scattered<R: Rng + ?Sized>(
    lattice: &Arc<Lattice>,
    count: usize,
    a: f64,
    rng: &mut R,
) -> Result<ParticleConfig, EngineError> {
    let g = lattice.geometry;
    let infeasible = EngineError::InfeasiblePacking { count, distance: a };
    if count == 0 {
        return Err(EngineError::EmptyConfig);
    }
    if !packing_feasible(&g, count, a) {
        return Err(infeasible);
    }
    let sites = g.num_sites();
    for _ in 0..1_000 {
        let mut chosen: Vec<TorusPoint> = Vec::with_capacity(count);
        'place: for _ in 0..count {
            for _ in 0..10_000 {
                let candidate = g.point_of(rng.gen_range(0..sites));
                if chosen.iter().all(|p| torus_distance(&g, p, &candidate) >= a) {
                    chosen.push(candidate);
                    continue 'place;
                }
            }
            break;
        }
        if chosen.len() == count {
            return ParticleConfig::from_points(lattice, &chosen);
        }
    }
    Err(infeasible)
}

/// Two distinct sites chosen uniformly.
pub fn sample_pair<R: Rng + ?Sized>(lattice: &Arc<Lattice>, rng: &mut R) -> ParticleConfig {
    let sites = lattice.geometry.num_sites();
    let x = rng.gen_range(0..sites);
    let mut y = rng.gen_range(0..sites - 1);
    if y >= x {
        y += 1;
    }
    ParticleConfig::from_sites(lattice, &[x, y]).expect("sites are in range")
}

/// A function of the particle count that vanishes from a declared cutoff on.
#[derive(Debug, Clone, PartialEq)]
pub struct CountWeight {
    values: Vec<f64>,
}

impl CountWeight {
    /// `F(k) = f(k)` for `k < cutoff` and `0` beyond. A missing cutoff is
    /// rejected.
    pub fn new(cutoff: Option<usize>, f: impl Fn(usize) -> f64) -> Result<Self, EngineError> {
        let cutoff = cutoff.ok_or(EngineError::MissingCutoff)?;
        Ok(CountWeight {
            values: (0..cutoff).map(f).collect(),
        })
    }

    /// Indicator of a finite set of counts.
    pub fn indicator(counts: &[usize]) -> Self {
        let cutoff = counts.iter().max().map_or(0, |m| m + 1);
        CountWeight {
            values: (0..cutoff)
                .map(|k| if counts.contains(&k) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn zero() -> Self {
        CountWeight { values: Vec::new() }
    }

    pub fn cutoff(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn eval(&self, count: usize) -> f64 {
        self.values.get(count).copied().unwrap_or(0.0)
    }
}

/// One replica of the replacement statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementSample {
    /// `int_{t0}^{t} {theta R(A(s theta)) - lambda(|A(s theta)|)} F(|A(s theta)|) ds`
    pub value: f64,
    /// `|A(t0 theta)|`, for conditioning functionals measurable at `t0`.
    pub count_at_t0: usize,
}

/// Integrates `{theta R - lambda(|A|)} F(|A|)` over rescaled time
/// `[t0, t]` along one trajectory.
///
/// The configuration is piecewise constant between events, so the
/// integral is an exact finite sum. In natural time `u = s theta` the
/// integrand is `{R(A(u)) - lambda(|A(u)|)/theta} F(|A(u)|) du`.
pub fn replacement_statistic<R: Rng + ?Sized>(
    initial: &ParticleConfig,
    t0: f64,
    t: f64,
    weight: &CountWeight,
    theta: f64,
    rng: &mut R,
    event_cap: u64,
) -> Result<ReplacementSample, EngineError> {
    if !(t0 > 0.0 && t > t0 && theta > 0.0 && t.is_finite() && theta.is_finite()) {
        return Err(EngineError::Window { t0, t, theta });
    }
    let (start, end) = (t0 * theta, t * theta);
    let mut config = initial.clone();
    let mut time = 0.0;
    let mut value = 0.0;
    let mut count_at_t0 = None;
    let mut jumps = 0u64;
    loop {
        let n = config.count();
        if n == 1 {
            // R and lambda both vanish on singletons
            break;
        }
        let hold = holding_time(n, rng);
        let next = time + hold;
        if count_at_t0.is_none() && next > start {
            count_at_t0 = Some(n);
        }
        let f = weight.eval(n);
        if f != 0.0 {
            let overlap = next.min(end) - time.max(start);
            if overlap > 0.0 {
                value += (rate_r(&config) - lambda(n as u64) / theta) * f * overlap;
            }
        }
        if next >= end {
            break;
        }
        if jumps >= event_cap {
            return Err(EngineError::EventCap {
                cap: event_cap,
                time,
                count: n,
            });
        }
        jumps += 1;
        time = next;
        random_jump(&mut config, rng);
    }
    Ok(ReplacementSample {
        value,
        count_at_t0: count_at_t0.unwrap_or(config.count()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::jump_kernel;
    use crate::seeding::replica_rng;

    fn lattice(d: usize, n: usize) -> Arc<Lattice> {
        Lattice::new(TorusGeometry::new(d, n).unwrap())
    }

    fn brute_rate(config: &ParticleConfig) -> f64 {
        let g = config.geometry();
        let pts = config.points();
        let mut r = 0.0;
        for x in &pts {
            for y in &pts {
                if x != y {
                    r += jump_kernel(g, &g.sub(y, x));
                }
            }
        }
        r
    }

    fn check_consistency(config: &ParticleConfig) {
        let occupied = config.slot_of.iter().filter(|&&s| s != EMPTY).count();
        assert_eq!(occupied, config.count());
        for (slot, &site) in config.sites.iter().enumerate() {
            assert_eq!(config.slot_of[site as usize] as usize, slot);
        }
        assert!((rate_r(config) - brute_rate(config)).abs() < 1e-12);
    }

    #[test]
    fn empty_and_out_of_range_configs_are_rejected() {
        let l = lattice(2, 4);
        assert_eq!(
            ParticleConfig::from_sites(&l, &[]).unwrap_err(),
            EngineError::EmptyConfig
        );
        assert!(ParticleConfig::from_sites(&l, &[16]).is_err());
        assert_eq!(ParticleConfig::from_sites(&l, &[3, 3, 5]).unwrap().count(), 2);
    }

    #[test]
    fn singleton_never_coalesces() {
        let l = lattice(2, 5);
        let mut c = ParticleConfig::from_sites(&l, &[7]).unwrap();
        let mut rng = replica_rng(1, 0);
        for _ in 0..1000 {
            let out = step(&mut c, &mut rng);
            assert!(!out.coalesced);
            assert_eq!(c.count(), 1);
        }
    }

    #[test]
    fn adjacent_pair_coalesces_with_probability_one_quarter() {
        let l = lattice(2, 8);
        let g = *l.geometry();
        let pair = ParticleConfig::from_points(&l, &[g.origin(), g.unit(0)]).unwrap();
        // exact: R(A) / |A|
        assert_eq!(rate_r(&pair) / pair.count() as f64, 0.25);
        let mut rng = replica_rng(2, 0);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| step(&mut pair.clone(), &mut rng).coalesced)
            .count();
        let p = hits as f64 / trials as f64;
        let se = (0.25f64 * 0.75 / trials as f64).sqrt();
        assert!((p - 0.25).abs() < 3.0 * se, "p = {p}");
    }

    #[test]
    fn l_shape_coalescence_intensity_matches_rate() {
        let l = lattice(2, 8);
        let g = *l.geometry();
        let config = ParticleConfig::from_points(&l, &[g.origin(), g.unit(0), g.unit(1)]).unwrap();
        assert_eq!(rate_r(&config), 1.0);
        let mut rng = replica_rng(3, 0);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| step(&mut config.clone(), &mut rng).coalesced)
            .count();
        let fraction = hits as f64 / trials as f64;
        let expected = rate_r(&config) / 3.0;
        let se = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!((fraction - expected).abs() < 3.0 * se);
    }

    #[test]
    fn mean_holding_time_at_one_hundred_particles() {
        let l = lattice(2, 10);
        let config = ParticleConfig::full(&l);
        assert_eq!(config.count(), 100);
        let mut rng = replica_rng(4, 0);
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| step(&mut config.clone(), &mut rng).holding_time)
            .sum::<f64>()
            / draws as f64;
        let se = 0.01 / (draws as f64).sqrt();
        assert!((mean - 0.01).abs() < 3.0 * se);
    }

    #[test]
    fn full_torus_records_every_level() {
        let l = lattice(2, 4);
        let mut rng = replica_rng(5, 0);
        let rec = simulate(
            &ParticleConfig::full(&l),
            StopRule::FullCoalescence,
            &mut rng,
            DEFAULT_EVENT_CAP,
        )
        .unwrap();
        assert_eq!(rec.tau(16), Some(0.0));
        for j in 1..=15 {
            assert!(rec.tau(j).is_some(), "missing tau_{j}");
        }
        for j in 2..=16 {
            assert!(rec.tau(j).unwrap() <= rec.tau(j - 1).unwrap());
        }
        assert_eq!(rec.coalescence_time(), Some(rec.final_time));
        assert_eq!(rec.count_at(0.0), 16);
        assert_eq!(rec.count_at(rec.final_time), 1);
    }

    #[test]
    fn singleton_start_is_already_coalesced() {
        let l = lattice(3, 4);
        let mut rng = replica_rng(6, 0);
        let c = ParticleConfig::from_sites(&l, &[9]).unwrap();
        let rec = simulate(&c, StopRule::FullCoalescence, &mut rng, 10).unwrap();
        assert_eq!(rec.tau(1), Some(0.0));
        assert_eq!(rec.jump_count, 0);
    }

    #[test]
    fn stop_rules() {
        let l = lattice(2, 6);
        let full = ParticleConfig::full(&l);
        let mut rng = replica_rng(7, 0);
        let rec = simulate(&full, StopRule::ReachCount(10), &mut rng, DEFAULT_EVENT_CAP).unwrap();
        assert_eq!(*rec.tau.keys().next().unwrap(), 10);
        assert_eq!(rec.final_time, rec.tau(10).unwrap());
        let rec = simulate(&full, StopRule::ReachTime(3.5), &mut rng, DEFAULT_EVENT_CAP).unwrap();
        assert_eq!(rec.final_time, 3.5);
        assert!(rec.tau.values().all(|&t| t <= 3.5));
        assert!(simulate(&full, StopRule::ReachCount(0), &mut rng, 10).is_err());
        assert!(simulate(&full, StopRule::ReachCount(37), &mut rng, 10).is_err());
        assert!(matches!(
            simulate(&full, StopRule::FullCoalescence, &mut rng, 100),
            Err(EngineError::EventCap { cap: 100, .. })
        ));
    }

    #[test]
    fn occupancy_and_rate_stay_consistent() {
        for (d, n) in [(2, 2), (2, 3), (2, 5), (3, 4)] {
            let l = lattice(d, n);
            let mut c = ParticleConfig::full(&l);
            let mut rng = replica_rng(8, d as u64 * 100 + n as u64);
            check_consistency(&c);
            let mut last = c.count();
            while c.count() > 1 {
                let out = step(&mut c, &mut rng);
                check_consistency(&c);
                assert_eq!(last - c.count(), out.coalesced as usize);
                last = c.count();
            }
        }
    }

    #[test]
    fn rate_examples() {
        let l = lattice(3, 10);
        let g = *l.geometry();
        let x = g.point(&[2, 3, 4]).unwrap();
        let pair = ParticleConfig::from_points(&l, &[x.clone(), g.add(&x, &g.unit(2))]).unwrap();
        assert!((rate_r(&pair) - 1.0 / 3.0).abs() < 1e-15);
        let single = ParticleConfig::from_points(&l, std::slice::from_ref(&x)).unwrap();
        assert_eq!(rate_r(&single), 0.0);
        let far = g.point(&[7, 8, 9]).unwrap();
        let two_pairs = ParticleConfig::from_points(
            &l,
            &[x.clone(), g.add(&x, &g.unit(0)), far.clone(), g.add(&far, &g.unit(1))],
        )
        .unwrap();
        assert!((rate_r(&two_pairs) - 2.0 / 3.0).abs() < 1e-15);
        assert!((brute_rate(&two_pairs) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn scatteredness_examples() {
        let l = lattice(2, 16);
        let g = *l.geometry();
        let single = ParticleConfig::from_sites(&l, &[0]).unwrap();
        assert!(is_scattered(&single, 1e9));
        let pair = ParticleConfig::from_points(&l, &[g.origin(), g.unit(0)]).unwrap();
        assert!(!is_scattered(&pair, 2.0));
        let far = ParticleConfig::from_points(&l, &[g.origin(), g.point(&[8, 8]).unwrap()]).unwrap();
        assert!(is_scattered(&far, 8.0));
    }

    #[test]
    fn scattered_sampler_respects_distance() {
        let l = lattice(3, 16);
        let mut rng = replica_rng(9, 0);
        for _ in 0..50 {
            let c = sample_scattered(&l, 4, 4.0, &mut rng).unwrap();
            assert_eq!(c.count(), 4);
            assert!(is_scattered(&c, 4.0));
        }
        assert!(matches!(
            sample_scattered(&l, 5000, 4.0, &mut rng),
            Err(EngineError::InfeasiblePacking { .. })
        ));
    }

    #[test]
    fn identical_seed_gives_identical_record() {
        let l = lattice(2, 6);
        let run = || {
            simulate_replicas(
                |_| Ok(ParticleConfig::full(&l)),
                StopRule::FullCoalescence,
                99,
                4,
                DEFAULT_EVENT_CAP,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a[2]).unwrap(),
            serde_json::to_string(&b[2]).unwrap()
        );
        assert_eq!(a[3].replica, 3);
    }

    #[test]
    fn translation_with_same_stream_gives_same_times() {
        let l = lattice(2, 8);
        let g = *l.geometry();
        let base = [g.origin(), g.point(&[2, 3]).unwrap(), g.point(&[5, 1]).unwrap()];
        let shift = g.point(&[3, 6]).unwrap();
        let moved: Vec<TorusPoint> = base.iter().map(|p| g.add(p, &shift)).collect();
        let a = ParticleConfig::from_points(&l, &base).unwrap();
        let b = ParticleConfig::from_points(&l, &moved).unwrap();
        for r in 0..20 {
            let ra = simulate(
                &a,
                StopRule::FullCoalescence,
                &mut replica_rng(10, r),
                DEFAULT_EVENT_CAP,
            )
            .unwrap();
            let rb = simulate(
                &b,
                StopRule::FullCoalescence,
                &mut replica_rng(10, r),
                DEFAULT_EVENT_CAP,
            )
            .unwrap();
            assert_eq!(ra.tau, rb.tau);
        }
    }

    #[test]
    fn count_weight_requires_cutoff() {
        assert_eq!(CountWeight::new(None, |_| 1.0).unwrap_err(), EngineError::MissingCutoff);
        let w = CountWeight::new(Some(4), |k| k as f64).unwrap();
        assert_eq!(w.eval(3), 3.0);
        assert_eq!(w.eval(4), 0.0);
        let ind = CountWeight::indicator(&[2, 3]);
        assert_eq!(
            (ind.eval(1), ind.eval(2), ind.eval(3), ind.eval(4)),
            (0.0, 1.0, 1.0, 0.0)
        );
    }

    #[test]
    fn replacement_statistic_trivial_cases() {
        let l = lattice(3, 6);
        let full = ParticleConfig::full(&l);
        let mut rng = replica_rng(11, 0);
        let zero = replacement_statistic(
            &full,
            0.1,
            1.0,
            &CountWeight::zero(),
            100.0,
            &mut rng,
            DEFAULT_EVENT_CAP,
        )
        .unwrap();
        assert_eq!(zero.value, 0.0);
        let only_one = CountWeight::indicator(&[1]);
        for r in 0..20 {
            let s = replacement_statistic(
                &full,
                0.1,
                2.0,
                &only_one,
                100.0,
                &mut replica_rng(12, r),
                DEFAULT_EVENT_CAP,
            )
            .unwrap();
            assert_eq!(s.value, 0.0);
        }
        assert!(replacement_statistic(&full, 1.0, 0.5, &only_one, 1.0, &mut rng, 10).is_err());
        assert!(replacement_statistic(&full, 0.0, 0.5, &only_one, 1.0, &mut rng, 10).is_err());
    }

    #[test]
    fn replacement_statistic_on_a_pair_uses_exact_intervals() {
        // With two particles the window integral of R alone has mean equal
        // to the probability of coalescing inside the window (R is the
        // coalescence intensity); the lambda part is the expected time
        // spent paired. Check the identity on an adjacent start.
        let l = lattice(2, 4);
        let g = *l.geometry();
        let pair = ParticleConfig::from_points(&l, &[g.origin(), g.unit(0)]).unwrap();
        let theta = 1e12; // makes the lambda term negligible
        let weight = CountWeight::indicator(&[2]);
        let reps = 20_000;
        let (t0, t) = (1e-20, 2.0 / theta);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut hits = 0.0;
        for r in 0..reps {
            let mut rng = replica_rng(13, r);
            let s = replacement_statistic(&pair, t0, t, &weight, theta, &mut rng, DEFAULT_EVENT_CAP).unwrap();
            sum += s.value;
            sum2 += s.value * s.value;
            let mut rng = replica_rng(13, r);
            let rec = simulate(&pair, StopRule::ReachTime(2.0), &mut rng, DEFAULT_EVENT_CAP).unwrap();
            if rec.tau(1).is_some() {
                hits += 1.0;
            }
        }
        let mean = sum / reps as f64;
        let var = sum2 / reps as f64 - mean * mean;
        let p = hits / reps as f64;
        let se = ((var + p * (1.0 - p)) / reps as f64).sqrt();
        assert!((mean - p).abs() < 4.0 * se, "mean {mean} vs p {p}");
    }
}
