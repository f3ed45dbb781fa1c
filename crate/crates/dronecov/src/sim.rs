//! Event-driven continuous-time delivery simulation.
//!
//! One run plays out a package workload on a fleet of drones under a chosen
//! motion policy and collects delivery-time and coverage statistics. Motion
//! between events is closed-form (circular scenarios) or constant-speed
//! along a precomputed path (general scenarios), so the engine only
//! processes instants where something changes: take-offs, cell-boundary
//! crossings, deliveries, returns, and snapshot ticks. Runs are
//! deterministic given the seed; simultaneous events resolve in drone-id
//! order with snapshots last.

use crate::coverage::{
    adaptive_speed, estimate_interval_bounds, minmax_speed, CellCoverageState, CoverageTarget,
    VelocityBounds,
};
use crate::geometry::{locate_cell, CellGrid, GridLayout, Point2};
use crate::ideal::{
    lower_bound_time, radius_at, sample_takeoffs, upper_bound_time, IdealParams, PackageStream,
};
use crate::trajectory::PathSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("event cap of {0} exceeded; simulation did not terminate")]
    NonTermination(u64),
}

/// Motion policy for the fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Closed-form variable-speed radial profile (circular scenarios only).
    Ideal,
    /// Straight lines at constant average speed; the efficiency-optimal,
    /// coverage-non-uniform baseline.
    Benchmark,
    /// Per-cell speed from the coverage deficit on every cell entry.
    Adaptive,
    /// Two-level speed rule: v_min at or below target, v_max above.
    MinMax,
}

/// How returning drones pick their next package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    /// Next undispatched package to the first free drone.
    Fifo,
    /// Package (j−1)·D + i is reserved for drone i.
    RoundRobin,
}

/// Package arrival process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// The post office backlog never runs dry; arrival time equals
    /// dispatch time.
    Saturated,
    /// Exponential inter-arrival gaps.
    Poisson { rate_per_s: f64 },
}

/// Everything one run needs. Built directly in tests or resolved from a
/// scenario file via [`crate::scenario`].
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: Arc<CellGrid>,
    pub houses: Vec<Point2>,
    pub drones: usize,
    pub packages: usize,
    pub policy: Policy,
    pub dispatch: DispatchMode,
    pub arrivals: ArrivalModel,
    pub destination_weights: Option<Vec<f64>>,
    pub bounds: VelocityBounds,
    pub target: CoverageTarget,
    pub kappa_s: f64,
    pub v_avg_mps: f64,
    /// Cruise altitude; recorded for completeness, never used in the 2D
    /// coverage math.
    pub altitude_m: f64,
    pub seed: u64,
    pub snapshot_interval_s: f64,
    pub late_threshold_s: f64,
    pub event_cap: u64,
    /// Keep per-cell (t, p_l) series; disable for large ensembles.
    pub record_series: bool,
    /// Closed-form parameters; required for `Policy::Ideal` and for
    /// benchmark runs on circular scenarios.
    pub ideal: Option<IdealParams>,
    /// Coverage-complete paths; required for Adaptive and MinMax.
    pub paths: Option<Arc<PathSet>>,
    /// Straight paths; required for Benchmark on polygonal scenarios.
    pub straight: Option<Arc<PathSet>>,
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.drones < 1 {
            return fail("drones: need at least 1".into());
        }
        if self.packages < 1 {
            return fail("packages: need at least 1".into());
        }
        if self.houses.is_empty() {
            return fail("houses: need at least 1".into());
        }
        if !(self.snapshot_interval_s > 0.0) {
            return fail("snapshot_interval_s: must be positive".into());
        }
        if !(self.v_avg_mps > 0.0) {
            return fail("v_avg_mps: must be positive".into());
        }
        if !(self.kappa_s > 0.0) {
            return fail("kappa_s: must be positive".into());
        }
        if let Some(w) = &self.destination_weights {
            if w.len() != self.houses.len() {
                return fail(format!(
                    "destination_weights: {} entries for {} houses",
                    w.len(),
                    self.houses.len()
                ));
            }
        }
        if let ArrivalModel::Poisson { rate_per_s } = self.arrivals {
            if !(rate_per_s > 0.0) {
                return fail("arrivals.poisson.rate_per_s: must be positive".into());
            }
        }
        if let Some(params) = &self.ideal {
            if params.drones != self.drones {
                return fail(format!(
                    "ideal: parameter set built for {} drones, fleet has {}",
                    params.drones, self.drones
                ));
            }
        }
        match self.policy {
            Policy::Ideal => {
                if self.ideal.is_none() {
                    return fail("policy ideal: requires a circular (sector) scenario".into());
                }
                if !matches!(self.grid.layout, GridLayout::Wedge) {
                    return fail("policy ideal: requires equal sector cells".into());
                }
            }
            Policy::Benchmark => {
                if self.ideal.is_none() && self.straight.is_none() {
                    return fail(
                        "policy benchmark: requires sector parameters or straight paths".into(),
                    );
                }
            }
            Policy::Adaptive | Policy::MinMax => {
                if self.paths.is_none() {
                    return fail(
                        "policy adaptive/minmax: requires a coverage-complete path set".into(),
                    );
                }
            }
        }
        Ok(())
    }

    /// Reference one-way travel time used to stagger the first take-offs:
    /// τ for circular scenarios, the longest straight flight otherwise.
    fn stagger_span_s(&self) -> f64 {
        match &self.ideal {
            Some(p) => p.tau_s,
            None => {
                let depot = self.grid.region.depot();
                let max_dist = self
                    .houses
                    .iter()
                    .map(|h| depot.dist(*h))
                    .fold(0.0, f64::max);
                max_dist / self.v_avg_mps
            }
        }
    }
}

/// Per-package timeline; arrival equals dispatch under saturated arrivals.
/// A delivery completes when the drone is back at the depot: the round trip
/// is what the distance-based delivery bounds count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackageRecord {
    pub index: usize,
    pub destination: usize,
    pub drone: usize,
    pub arrival_s: f64,
    pub dispatch_s: f64,
    pub delivery_s: f64,
}

/// Per-cell aggregate over a run (or merged ensemble).
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub index: usize,
    pub area_m2: f64,
    pub restricted_length_m: f64,
    pub mean_occupancy: f64,
    pub p_final: f64,
    pub delta_min_s: Option<f64>,
    pub delta_max_s: Option<f64>,
}

/// Outcome of one run, with an associative commutative merge for
/// replica ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Completion time of the m-th delivery (ensemble mean when merged).
    pub t_m_s: f64,
    /// lower_bound_s / t_m_s.
    pub eta: f64,
    pub lower_bound_s: f64,
    pub upper_bound_s: f64,
    /// Sorted delivery durations, pooled across replicas.
    pub delivery_times_s: Vec<f64>,
    pub late_fraction: f64,
    pub late_threshold_s: f64,
    pub cells: Vec<CellMetrics>,
    pub runs: u32,
    pub snapshots: u64,
    /// Times the one-drone-per-cell assumption was observed violated.
    pub violations: u64,
    /// Largest position discontinuity across processed events.
    pub max_position_jump_m: f64,
    /// Per-package timelines; kept for single runs, dropped on merge.
    pub package_log: Vec<PackageRecord>,
    /// Per-cell (t, p_l) series on the snapshot grid, when recorded.
    pub series: Option<Vec<Vec<(f64, f64)>>>,
}

impl RunMetrics {
    pub fn merge(mut self, mut other: RunMetrics) -> RunMetrics {
        assert_eq!(
            self.late_threshold_s, other.late_threshold_s,
            "merging runs with different late thresholds"
        );
        let w1 = self.runs as f64;
        let w2 = other.runs as f64;
        let wsum = w1 + w2;
        let t_m_s = (self.t_m_s * w1 + other.t_m_s * w2) / wsum;
        let lower_bound_s = (self.lower_bound_s * w1 + other.lower_bound_s * w2) / wsum;
        let upper_bound_s = (self.upper_bound_s * w1 + other.upper_bound_s * w2) / wsum;
        let mut delivery_times_s =
            Vec::with_capacity(self.delivery_times_s.len() + other.delivery_times_s.len());
        {
            let (mut a, mut b) = (
                self.delivery_times_s.iter().peekable(),
                other.delivery_times_s.iter().peekable(),
            );
            loop {
                match (a.peek(), b.peek()) {
                    (Some(x), Some(y)) => {
                        if x <= y {
                            delivery_times_s.push(**x);
                            a.next();
                        } else {
                            delivery_times_s.push(**y);
                            b.next();
                        }
                    }
                    (Some(x), None) => {
                        delivery_times_s.push(**x);
                        a.next();
                    }
                    (None, Some(y)) => {
                        delivery_times_s.push(**y);
                        b.next();
                    }
                    (None, None) => break,
                }
            }
        }
        let late = delivery_times_s
            .iter()
            .filter(|t| **t > self.late_threshold_s)
            .count();
        let late_fraction = late as f64 / delivery_times_s.len() as f64;
        let s1 = self.snapshots as f64;
        let s2 = other.snapshots as f64;
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| {
                assert_eq!(a.index, b.index);
                CellMetrics {
                    index: a.index,
                    area_m2: a.area_m2,
                    restricted_length_m: (a.restricted_length_m * w1 + b.restricted_length_m * w2)
                        / wsum,
                    mean_occupancy: if s1 + s2 > 0.0 {
                        (a.mean_occupancy * s1 + b.mean_occupancy * s2) / (s1 + s2)
                    } else {
                        0.0
                    },
                    p_final: (a.p_final * w1 + b.p_final * w2) / wsum,
                    delta_min_s: match (a.delta_min_s, b.delta_min_s) {
                        (Some(x), Some(y)) => Some(x.min(y)),
                        (x, y) => x.or(y),
                    },
                    delta_max_s: match (a.delta_max_s, b.delta_max_s) {
                        (Some(x), Some(y)) => Some(x.max(y)),
                        (x, y) => x.or(y),
                    },
                }
            })
            .collect();
        let series = match (self.series.take(), other.series.take()) {
            (Some(sa), Some(sb)) => Some(
                sa.into_iter()
                    .zip(sb)
                    .map(|(ca, cb)| {
                        let n = ca.len().min(cb.len());
                        (0..n)
                            .map(|i| {
                                debug_assert_eq!(ca[i].0, cb[i].0, "snapshot grids must align");
                                (ca[i].0, (ca[i].1 * w1 + cb[i].1 * w2) / wsum)
                            })
                            .collect()
                    })
                    .collect(),
            ),
            _ => None,
        };
        RunMetrics {
            t_m_s,
            eta: lower_bound_s / t_m_s,
            lower_bound_s,
            upper_bound_s,
            delivery_times_s,
            late_fraction,
            late_threshold_s: self.late_threshold_s,
            cells,
            runs: self.runs + other.runs,
            snapshots: self.snapshots + other.snapshots,
            violations: self.violations + other.violations,
            max_position_jump_m: self.max_position_jump_m.max(other.max_position_jump_m),
            package_log: Vec::new(),
            series,
        }
    }

    pub fn to_doc(&self) -> MetricsDoc {
        MetricsDoc {
            t_m_s: self.t_m_s,
            eta: self.eta,
            lower_bound_s: self.lower_bound_s,
            upper_bound_s: self.upper_bound_s,
            delivery_times_s: self.delivery_times_s.clone(),
            late_fraction: self.late_fraction,
            cells: self
                .cells
                .iter()
                .map(|c| CellDoc {
                    index: c.index,
                    mean_occupancy: c.mean_occupancy,
                    p_final: c.p_final,
                    delta_min_s: c.delta_min_s,
                    delta_max_s: c.delta_max_s,
                })
                .collect(),
        }
    }
}

/// The metrics document emitted as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub t_m_s: f64,
    pub eta: f64,
    pub lower_bound_s: f64,
    pub upper_bound_s: f64,
    pub delivery_times_s: Vec<f64>,
    pub late_fraction: f64,
    pub cells: Vec<CellDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDoc {
    pub index: usize,
    pub mean_occupancy: f64,
    pub p_final: f64,
    pub delta_min_s: Option<f64>,
    pub delta_max_s: Option<f64>,
}

/// Tracks multi-drone occupancy per cell; the coverage state sees the
/// union of the per-drone presence intervals.
struct CoverageLedger {
    counts: Vec<u32>,
    states: Vec<CellCoverageState>,
    violations: u64,
}

impl CoverageLedger {
    fn new(grid: &CellGrid, restricted: &[f64]) -> Self {
        Self {
            counts: vec![0; grid.cell_count()],
            states: grid
                .cells
                .iter()
                .map(|c| CellCoverageState::new(c.index, restricted[c.index - 1]))
                .collect(),
            violations: 0,
        }
    }

    fn enter(&mut self, cell: usize, t: f64) {
        let i = cell - 1;
        self.counts[i] += 1;
        if self.counts[i] == 1 {
            self.states[i]
                .record_entry(t)
                .expect("ledger keeps protocol");
        } else {
            self.violations += 1;
        }
    }

    fn exit(&mut self, cell: usize, t: f64) {
        let i = cell - 1;
        debug_assert!(self.counts[i] > 0);
        self.counts[i] -= 1;
        if self.counts[i] == 0 {
            self.states[i]
                .record_exit(t)
                .expect("ledger keeps protocol");
        }
    }

    fn ratio(&self, cell: usize, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            self.states[cell - 1].coverage_ratio(t).expect("t > 0")
        }
    }
}

/// One arc-length station of a path where crossings begin or end.
#[derive(Debug, Clone)]
struct Breakpoint {
    s: f64,
    starts: Vec<usize>,
    ends: Vec<usize>,
}

fn breakpoints_of(paths: &PathSet) -> Vec<Vec<Breakpoint>> {
    paths
        .paths
        .iter()
        .map(|p| {
            let mut stations: Vec<f64> = p
                .crossings
                .iter()
                .flat_map(|c| [c.s_in_m, c.s_out_m])
                .collect();
            stations.sort_by(|a, b| a.partial_cmp(b).unwrap());
            stations.dedup();
            stations
                .into_iter()
                .map(|s| Breakpoint {
                    s,
                    starts: p
                        .crossings
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.s_in_m == s)
                        .map(|(i, _)| i)
                        .collect(),
                    ends: p
                        .crossings
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.s_out_m == s)
                        .map(|(i, _)| i)
                        .collect(),
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
struct RadialSortie {
    package: usize,
    theta: f64,
    takeoff_s: f64,
    outbound: bool,
    wedge: Option<usize>,
}

#[derive(Debug, Clone)]
struct PathSortie {
    package: usize,
    path: usize,
    outbound: bool,
    s: f64,
    t_at_s: f64,
    speed: f64,
    /// Next breakpoint index: ascending outbound, descending inbound
    /// (`cursor == len` outbound or `cursor == None` inbound means only the
    /// endpoint remains).
    cursor: usize,
    /// Crossings currently containing the drone, with their entry speeds.
    active: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
enum DroneState {
    Idle { next_takeoff: Option<(f64, usize)> },
    Radial(RadialSortie),
    Path(PathSortie),
}

struct Drone {
    state: DroneState,
    rr_next: usize,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    tau_leg_s: f64,
    drones: Vec<Drone>,
    ledger: CoverageLedger,
    breakpoints: Option<Vec<Vec<Breakpoint>>>,
    active_paths: Option<Arc<PathSet>>,
    destinations: Vec<usize>,
    arrivals: Vec<f64>,
    next_package: usize,
    package_log: Vec<PackageRecord>,
    delivered: usize,
    t_m: f64,
    snapshot_due: f64,
    occupancy_sums: Vec<f64>,
    snapshots: u64,
    series: Option<Vec<Vec<(f64, f64)>>>,
    max_jump_m: f64,
    events: u64,
}

/// Simulate until the m-th delivery completes.
pub fn run(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // Draw order is fixed: take-offs, destinations, then arrival gaps.
    let stagger = cfg.stagger_span_s();
    let takeoffs: Vec<f64> = match &cfg.ideal {
        Some(p) => sample_takeoffs(p, &mut rng).times_s,
        None => (0..cfg.drones)
            .map(|_| loop {
                let t = rng.random_range(0.0..stagger);
                if t > 0.0 {
                    break t;
                }
            })
            .collect(),
    };
    let stream = match &cfg.destination_weights {
        Some(w) => PackageStream::weighted(w)
            .map_err(|e| SimError::Config(format!("destination_weights: {e}")))?,
        None => PackageStream::uniform(cfg.houses.len()),
    };
    let destinations: Vec<usize> = (0..cfg.packages).map(|_| stream.next(&mut rng)).collect();
    let arrivals: Vec<f64> = match cfg.arrivals {
        ArrivalModel::Saturated => Vec::new(),
        ArrivalModel::Poisson { rate_per_s } => {
            let mut t = 0.0;
            (0..cfg.packages)
                .map(|_| {
                    let u: f64 = loop {
                        let u = rng.random::<f64>();
                        if u > 0.0 {
                            break u;
                        }
                    };
                    t += -u.ln() / rate_per_s;
                    t
                })
                .collect()
        }
    };

    let active_paths = match cfg.policy {
        Policy::Adaptive | Policy::MinMax => cfg.paths.clone(),
        Policy::Benchmark if cfg.ideal.is_none() => cfg.straight.clone(),
        _ => None,
    };
    let restricted = restricted_lengths(cfg, active_paths.as_deref());
    let breakpoints = active_paths.as_deref().map(breakpoints_of);

    let mut engine = Engine {
        cfg,
        tau_leg_s: cfg.ideal.map(|p| p.tau_s).unwrap_or(0.0),
        drones: (0..cfg.drones)
            .map(|d| Drone {
                state: DroneState::Idle { next_takeoff: None },
                rr_next: d,
            })
            .collect(),
        ledger: CoverageLedger::new(&cfg.grid, &restricted),
        breakpoints,
        active_paths,
        destinations,
        arrivals,
        next_package: 0,
        package_log: Vec::with_capacity(cfg.packages),
        delivered: 0,
        t_m: 0.0,
        snapshot_due: cfg.snapshot_interval_s,
        occupancy_sums: vec![0.0; cfg.grid.cell_count()],
        snapshots: 0,
        series: cfg
            .record_series
            .then(|| vec![Vec::new(); cfg.grid.cell_count()]),
        max_jump_m: 0.0,
        events: 0,
    };

    // First dispatches: package d to drone d at its staggered take-off.
    for d in 0..cfg.drones {
        if let Some(pkg) = engine.claim_package(d) {
            let ready = match cfg.arrivals {
                ArrivalModel::Saturated => takeoffs[d],
                ArrivalModel::Poisson { .. } => takeoffs[d].max(engine.arrivals[pkg]),
            };
            engine.drones[d].state = DroneState::Idle {
                next_takeoff: Some((ready, pkg)),
            };
        }
    }

    engine.run_loop()?;
    Ok(engine.finish())
}

/// Union trajectory length per cell for the paths a policy actually flies:
/// what the speed rules and feasibility checks call L.
pub fn restricted_lengths_for(cfg: &SimConfig) -> Vec<f64> {
    let paths = match cfg.policy {
        Policy::Adaptive | Policy::MinMax => cfg.paths.clone(),
        Policy::Benchmark if cfg.ideal.is_none() => cfg.straight.clone(),
        _ => None,
    };
    restricted_lengths(cfg, paths.as_deref())
}

/// Union trajectory length per cell: what the speed rules and feasibility
/// checks call L. Radial scenarios count one γ→ρ ray per house in the
/// wedge.
fn restricted_lengths(cfg: &SimConfig, paths: Option<&PathSet>) -> Vec<f64> {
    match paths {
        Some(set) => cfg
            .grid
            .cells
            .iter()
            .map(|c| set.cell_crossing_length(c.index))
            .collect(),
        None => {
            let mut lengths = vec![0.0; cfg.grid.cell_count()];
            if let Some(params) = &cfg.ideal {
                let leg = params.sector.rho_m - params.sector.gamma_m;
                let r_mid = 0.5 * (params.sector.gamma_m + params.sector.rho_m);
                for h in &cfg.houses {
                    let theta = h.angle();
                    let probe = Point2::new(r_mid * theta.cos(), r_mid * theta.sin());
                    if let Some(cell) = locate_cell(&cfg.grid, probe) {
                        lengths[cell - 1] += leg;
                    }
                }
            }
            lengths
        }
    }
}

impl Engine<'_> {
    fn claim_package(&mut self, drone: usize) -> Option<usize> {
        match self.cfg.dispatch {
            DispatchMode::Fifo => {
                if self.next_package < self.cfg.packages {
                    let p = self.next_package;
                    self.next_package += 1;
                    Some(p)
                } else {
                    None
                }
            }
            DispatchMode::RoundRobin => {
                let p = self.drones[drone].rr_next;
                if p < self.cfg.packages {
                    self.drones[drone].rr_next = p + self.cfg.drones;
                    Some(p)
                } else {
                    None
                }
            }
        }
    }

    fn next_drone_event(&self, d: usize) -> Option<f64> {
        match &self.drones[d].state {
            DroneState::Idle { next_takeoff } => next_takeoff.map(|(t, _)| t),
            DroneState::Radial(s) => Some(if s.outbound {
                s.takeoff_s + self.tau_leg_s
            } else {
                s.takeoff_s + 2.0 * self.tau_leg_s
            }),
            DroneState::Path(s) => {
                let bps = &self.breakpoints.as_ref().expect("path policy")[s.path];
                let len = self.path_len(s.path);
                let target = if s.outbound {
                    if s.cursor < bps.len() {
                        bps[s.cursor].s
                    } else {
                        len
                    }
                } else if s.cursor > 0 {
                    bps[s.cursor - 1].s
                } else {
                    0.0
                };
                let dist = (target - s.s).abs();
                Some(s.t_at_s + dist / s.speed)
            }
        }
    }

    fn path_len(&self, path: usize) -> f64 {
        self.active_paths.as_ref().expect("path policy").paths[path].total_length_m
    }

    fn position_of(&self, d: usize, t: f64) -> Option<Point2> {
        match &self.drones[d].state {
            DroneState::Idle { .. } => None,
            DroneState::Radial(s) => {
                let params = self.cfg.ideal.as_ref().expect("radial needs sector");
                let r = match self.cfg.policy {
                    Policy::Ideal => radius_at(t, s.takeoff_s, params),
                    _ => {
                        let dt = t - s.takeoff_s;
                        if s.outbound {
                            params.sector.gamma_m + self.cfg.v_avg_mps * dt
                        } else {
                            params.sector.rho_m - self.cfg.v_avg_mps * (dt - self.tau_leg_s)
                        }
                    }
                };
                Some(Point2::new(r * s.theta.cos(), r * s.theta.sin()))
            }
            DroneState::Path(s) => {
                let dir = if s.outbound { 1.0 } else { -1.0 };
                let s_now =
                    (s.s + dir * s.speed * (t - s.t_at_s)).clamp(0.0, self.path_len(s.path));
                self.active_paths.as_ref().expect("path policy").paths[s.path]
                    .point_at_arclength(s_now)
                    .ok()
            }
        }
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        while self.delivered < self.cfg.packages {
            let mut best: Option<(f64, usize)> = None;
            for d in 0..self.drones.len() {
                if let Some(t) = self.next_drone_event(d) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, d));
                    }
                }
            }
            let (t_drone, d) = best
                .ok_or_else(|| SimError::Config("no pending events but packages remain".into()))?;
            if self.snapshot_due < t_drone {
                let t = self.snapshot_due;
                self.take_snapshot(t);
                self.snapshot_due = t + self.cfg.snapshot_interval_s;
            } else {
                self.process_drone(d, t_drone);
            }
            self.events += 1;
            if self.events > self.cfg.event_cap {
                return Err(SimError::NonTermination(self.cfg.event_cap));
            }
        }
        Ok(())
    }

    fn take_snapshot(&mut self, t: f64) {
        let mut counts = vec![0u32; self.cfg.grid.cell_count()];
        for d in 0..self.drones.len() {
            if let Some(p) = self.position_of(d, t) {
                if let Some(cell) = locate_cell(&self.cfg.grid, p) {
                    counts[cell - 1] += 1;
                }
            }
        }
        for (sum, c) in self.occupancy_sums.iter_mut().zip(&counts) {
            *sum += *c as f64;
        }
        self.snapshots += 1;
        if let Some(series) = &mut self.series {
            for (i, cell_series) in series.iter_mut().enumerate() {
                cell_series.push((t, self.ledger.ratio(i + 1, t)));
            }
        }
    }

    fn process_drone(&mut self, d: usize, t: f64) {
        let before = self.position_of(d, t);
        let state = self.drones[d].state.clone();
        match state {
            DroneState::Idle { next_takeoff } => {
                let (_, pkg) = next_takeoff.expect("idle events require a scheduled takeoff");
                self.begin_sortie(d, pkg, t);
            }
            DroneState::Radial(s) => self.process_radial(d, s, t),
            DroneState::Path(s) => self.process_path(d, s, t),
        }
        if let (Some(a), Some(b)) = (before, self.position_of(d, t)) {
            self.max_jump_m = self.max_jump_m.max(a.dist(b));
        }
    }

    fn begin_sortie(&mut self, d: usize, pkg: usize, t: f64) {
        let dest = self.destinations[pkg];
        let arrival = match self.cfg.arrivals {
            ArrivalModel::Saturated => t,
            ArrivalModel::Poisson { .. } => self.arrivals[pkg],
        };
        self.package_log.push(PackageRecord {
            index: pkg + 1,
            destination: dest + 1,
            drone: d + 1,
            arrival_s: arrival,
            dispatch_s: t,
            delivery_s: f64::NAN,
        });
        if self.active_paths.is_some() {
            let mut sortie = PathSortie {
                package: pkg,
                path: dest,
                outbound: true,
                s: 0.0,
                t_at_s: t,
                speed: self.default_speed(),
                cursor: 0,
                active: Vec::new(),
            };
            self.cross_breakpoints_at(&mut sortie, 0.0, t);
            self.drones[d].state = DroneState::Path(sortie);
        } else {
            let theta = self.cfg.houses[dest].angle();
            let wedge = self.wedge_of(theta);
            if let Some(cell) = wedge {
                self.ledger.enter(cell, t);
            }
            self.drones[d].state = DroneState::Radial(RadialSortie {
                package: pkg,
                theta,
                takeoff_s: t,
                outbound: true,
                wedge,
            });
        }
    }

    fn wedge_of(&self, theta: f64) -> Option<usize> {
        let params = self.cfg.ideal.as_ref().expect("radial needs sector");
        let r_mid = 0.5 * (params.sector.gamma_m + params.sector.rho_m);
        locate_cell(
            &self.cfg.grid,
            Point2::new(r_mid * theta.cos(), r_mid * theta.sin()),
        )
    }

    fn default_speed(&self) -> f64 {
        match self.cfg.policy {
            Policy::Benchmark => self.cfg.v_avg_mps,
            _ => self
                .cfg
                .v_avg_mps
                .clamp(self.cfg.bounds.v_min_mps, self.cfg.bounds.v_max_mps),
        }
    }

    /// Entry speed for a crossing, decided causally at the entry instant.
    fn entry_speed(&self, cell: usize, length_m: f64, t: f64) -> f64 {
        match self.cfg.policy {
            Policy::Benchmark => self.cfg.v_avg_mps,
            Policy::Adaptive => adaptive_speed(
                self.ledger.ratio(cell, t),
                &self.cfg.target,
                length_m.max(f64::MIN_POSITIVE),
                &self.cfg.bounds,
                self.cfg.kappa_s,
            ),
            Policy::MinMax => minmax_speed(
                self.ledger.ratio(cell, t),
                &self.cfg.target,
                &self.cfg.bounds,
            ),
            Policy::Ideal => unreachable!("ideal policy uses radial sorties"),
        }
    }

    /// Process every breakpoint at station `s_at` for the sortie's current
    /// direction: exits first, then entries.
    fn cross_breakpoints_at(&mut self, sortie: &mut PathSortie, s_at: f64, t: f64) {
        let path = sortie.path;
        loop {
            let bps = &self.breakpoints.as_ref().expect("path policy")[path];
            let idx = if sortie.outbound {
                if sortie.cursor < bps.len() && bps[sortie.cursor].s == s_at {
                    let i = sortie.cursor;
                    sortie.cursor += 1;
                    i
                } else {
                    break;
                }
            } else if sortie.cursor > 0 && bps[sortie.cursor - 1].s == s_at {
                sortie.cursor -= 1;
                sortie.cursor
            } else {
                break;
            };
            let (exits, entries): (Vec<(usize, usize)>, Vec<(usize, usize, f64)>) = {
                let crossings =
                    &self.active_paths.as_ref().expect("path policy").paths[path].crossings;
                let bp = &bps[idx];
                let (ex, en) = if sortie.outbound {
                    (&bp.ends, &bp.starts)
                } else {
                    (&bp.starts, &bp.ends)
                };
                (
                    ex.iter()
                        .map(|&ci| (ci, crossings[ci].cell_index))
                        .collect(),
                    en.iter()
                        .map(|&ci| (ci, crossings[ci].cell_index, crossings[ci].length_m()))
                        .collect(),
                )
            };
            for (ci, cell) in exits {
                if let Some(pos) = sortie.active.iter().position(|(c, _)| *c == ci) {
                    sortie.active.remove(pos);
                    self.ledger.exit(cell, t);
                }
            }
            for (ci, cell, length_m) in entries {
                let speed = self.entry_speed(cell, length_m, t);
                self.ledger.enter(cell, t);
                sortie.active.push((ci, speed));
            }
        }
        sortie.speed = sortie
            .active
            .last()
            .map(|(_, v)| *v)
            .unwrap_or_else(|| self.default_speed());
        sortie.s = s_at;
        sortie.t_at_s = t;
    }

    fn process_path(&mut self, d: usize, mut sortie: PathSortie, t: f64) {
        let len = self.path_len(sortie.path);
        let n_bps = self.breakpoints.as_ref().expect("path policy")[sortie.path].len();
        if sortie.outbound {
            let target = if sortie.cursor < n_bps {
                self.breakpoints.as_ref().unwrap()[sortie.path][sortie.cursor].s
            } else {
                len
            };
            if target < len {
                self.cross_breakpoints_at(&mut sortie, target, t);
            } else {
                // at the house: hand over the package and turn around
                self.cross_breakpoints_at(&mut sortie, len, t);
                sortie.outbound = false;
                sortie.cursor = n_bps;
                self.cross_breakpoints_at(&mut sortie, len, t);
            }
            self.drones[d].state = DroneState::Path(sortie);
        } else {
            let target = if sortie.cursor > 0 {
                self.breakpoints.as_ref().unwrap()[sortie.path][sortie.cursor - 1].s
            } else {
                0.0
            };
            if target > 0.0 {
                self.cross_breakpoints_at(&mut sortie, target, t);
                self.drones[d].state = DroneState::Path(sortie);
            } else {
                // back at the depot: the delivery is complete
                self.cross_breakpoints_at(&mut sortie, 0.0, t);
                self.drones[d].state = DroneState::Idle { next_takeoff: None };
                self.record_delivery(sortie.package, t);
                if self.delivered < self.cfg.packages {
                    self.finish_sortie(d, t);
                }
            }
        }
    }

    fn process_radial(&mut self, d: usize, mut sortie: RadialSortie, t: f64) {
        if sortie.outbound {
            sortie.outbound = false;
            self.drones[d].state = DroneState::Radial(sortie);
        } else {
            if let Some(cell) = sortie.wedge {
                self.ledger.exit(cell, t);
            }
            self.drones[d].state = DroneState::Idle { next_takeoff: None };
            self.record_delivery(sortie.package, t);
            if self.delivered < self.cfg.packages {
                self.finish_sortie(d, t);
            }
        }
    }

    fn record_delivery(&mut self, pkg: usize, t: f64) {
        let rec = self
            .package_log
            .iter_mut()
            .find(|r| r.index == pkg + 1)
            .expect("delivered package was dispatched");
        rec.delivery_s = t;
        self.delivered += 1;
        if self.delivered == self.cfg.packages {
            self.t_m = t;
        }
    }

    fn finish_sortie(&mut self, d: usize, t: f64) {
        match self.claim_package(d) {
            Some(pkg) => {
                let ready = match self.cfg.arrivals {
                    ArrivalModel::Saturated => t,
                    ArrivalModel::Poisson { .. } => t.max(self.arrivals[pkg]),
                };
                self.drones[d].state = DroneState::Idle {
                    next_takeoff: Some((ready, pkg)),
                };
            }
            None => {
                self.drones[d].state = DroneState::Idle { next_takeoff: None };
            }
        }
    }

    fn finish(self) -> RunMetrics {
        let cfg = self.cfg;
        let m = cfg.packages;
        let depot = cfg.grid.region.depot();
        let (lower, upper) = match &cfg.ideal {
            Some(params) => (lower_bound_time(m, params), upper_bound_time(m, params)),
            None => {
                let total: f64 = self
                    .destinations
                    .iter()
                    .map(|&k| depot.dist(cfg.houses[k]))
                    .sum();
                let lower = 2.0 * total / (cfg.drones as f64 * cfg.v_avg_mps);
                (lower, lower + cfg.stagger_span_s())
            }
        };
        // The randomized schedule guarantees the efficiency floor when the
        // workload splits into whole rounds (D divides m); a partial last
        // round can add up to one extra cycle beyond the nominal bound.
        if cfg.policy == Policy::Ideal && m % cfg.drones == 0 {
            debug_assert!(
                lower / self.t_m >= 1.0 / (1.0 + cfg.drones as f64 / (2.0 * m as f64)) - 1e-12,
                "ideal run broke the efficiency floor"
            );
        }
        let mut delivery_times: Vec<f64> = self
            .package_log
            .iter()
            .map(|r| r.delivery_s - r.arrival_s)
            .collect();
        delivery_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let late = delivery_times
            .iter()
            .filter(|dt| **dt > cfg.late_threshold_s)
            .count();
        let cells = cfg
            .grid
            .cells
            .iter()
            .map(|c| {
                let i = c.index - 1;
                let state = &self.ledger.states[i];
                let (delta_min_s, delta_max_s) = match estimate_interval_bounds(state) {
                    Ok((dmin, dmax, _, _)) => (Some(dmin), Some(dmax)),
                    Err(_) => (None, None),
                };
                CellMetrics {
                    index: c.index,
                    area_m2: c.area_m2,
                    restricted_length_m: state.restricted_length_m,
                    mean_occupancy: if self.snapshots > 0 {
                        self.occupancy_sums[i] / self.snapshots as f64
                    } else {
                        0.0
                    },
                    p_final: self.ledger.ratio(c.index, self.t_m),
                    delta_min_s,
                    delta_max_s,
                }
            })
            .collect();
        RunMetrics {
            t_m_s: self.t_m,
            eta: lower / self.t_m,
            lower_bound_s: lower,
            upper_bound_s: upper,
            delivery_times_s: delivery_times,
            late_fraction: late as f64 / m as f64,
            late_threshold_s: cfg.late_threshold_s,
            cells,
            runs: 1,
            snapshots: self.snapshots,
            violations: self.ledger.violations,
            max_position_jump_m: self.max_jump_m,
            package_log: self.package_log,
            series: self.series,
        }
    }
}
