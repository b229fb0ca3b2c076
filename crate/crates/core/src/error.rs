use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("side length must be at least 2, got {0}")]
    Side(usize),
    #[error("torus with d = {dim}, N = {side} does not fit a 32-bit site index")]
    TooLarge { dim: usize, side: usize },
    #[error("expected {expected} coordinates, got {got}")]
    CoordinateCount { expected: usize, got: usize },
    #[error("time must be finite and non-negative, got {0}")]
    Time(f64),
    #[error("speed must be finite and positive, got {0}")]
    Speed(f64),
    #[error("{sites} sites exceed the exact-summation cap of {cap}")]
    Capacity { sites: usize, cap: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("a particle configuration must be nonempty")]
    EmptyConfig,
    #[error("site index {site} out of range for a torus with {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },
    #[error("stop rule reach_count({target}) needs 1 <= target <= {initial}")]
    StopRule { target: usize, initial: usize },
    #[error("event cap of {cap} reached at time {time} with {count} particles left")]
    EventCap { cap: u64, time: f64, count: usize },
    #[error("count weight must declare a cutoff beyond which it vanishes")]
    MissingCutoff,
    #[error("integration window needs 0 < t0 < t and theta > 0 (t0 = {t0}, t = {t}, theta = {theta})")]
    Window { t0: f64, t: f64, theta: f64 },
    #[error("cannot place {count} points at mutual distance >= {distance} on the torus")]
    InfeasiblePacking { count: usize, distance: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KingmanError {
    #[error("holding times exist only at level n >= 2, got {0}")]
    Level(u64),
    #[error("entrance from infinity needs a positive tail tolerance, got {0}")]
    TailTolerance(f64),
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("need 0 <= s < t <= horizon, got s = {s}, t = {t}")]
    Window { s: f64, t: f64 },
    #[error("no paths supplied")]
    NoPaths,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("chain has {states} states, above the cap of {cap}")]
    Capacity { states: usize, cap: usize },
    #[error("target set is empty")]
    EmptyTarget,
    #[error("state {0} out of range")]
    State(usize),
    #[error("{0} states cannot reach the target set")]
    Unreachable(usize),
    #[error("invalid rate {rate} from {from} to {to}")]
    Rate { from: usize, to: usize, rate: f64 },
    #[error("operation needs stationary weights")]
    MissingStationary,
    #[error("chain is not reversible: detailed-balance defect {0:e}")]
    NotReversible(f64),
    #[error("function has {got} values for {expected} states")]
    Length { expected: usize, got: usize },
    #[error("linear solve residual {0:e} above tolerance")]
    Residual(f64),
    #[error("unsupported particle count {0}; only 2 and 3 are enumerated")]
    ParticleCount(usize),
    #[error("time must be finite and non-negative, got {0}")]
    Time(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("escape probability is only defined for transient dimensions d >= 3, got d = {0}")]
    Recurrent(usize),
    #[error("Monte Carlo estimate needs at least one replica")]
    NoReplicas,
    #[error("truncation radius must be positive, got {0}")]
    Radius(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples must be finite and non-negative")]
    InvalidSample,
    #[error("rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error("moment order must be 1, 2 or 3, got {0}")]
    MomentOrder(u32),
    #[error("count-decay check needs full-torus records")]
    NotFullTorus,
    #[error("no grid times fall inside the window")]
    EmptyWindow,
    #[error("record ends at time {end} with particles left, before grid time {t}")]
    Horizon { end: f64, t: f64 },
    #[error("cannot read thresholds: {0}")]
    Thresholds(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("unknown suite {0:?}")]
    UnknownSuite(String),
    #[error("{0}")]
    Precondition(String),
    #[error("cannot write suite report: {0}")]
    Output(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kingman(#[from] KingmanError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}
