//! Mission loop: plan on the known map, fly the chosen trajectory, sense the truth,
//! repeat until every reachable voxel has been observed.

use std::time::Duration;

use rand_distr::{Distribution, Normal};

use crate::cost::{CostBreakdown, Preset};
use crate::dynamics::UavState;
use crate::pipeline::{self, PlanError, PlannerInputs, StageTimings};
use crate::rrt::Trajectory;
use crate::seed;
use crate::sensor::SensorModel;
use crate::sim::worldgen::{flood_fill, generate_world, GeneratedWorld, WorldGenError, WorldSpec};
use crate::world::{BlockSet, Label, Point, VoxelIndex, VoxelWorld};

#[derive(Clone, Debug, PartialEq)]
pub struct MissionConfig {
    pub world: WorldSpec,
    /// Planner template; the state and seed are set per replan.
    pub planner: PlannerInputs,
    pub preset: Preset,
    pub seed: u64,
    /// Vehicle speed along the trajectory, m/s.
    pub speed: f64,
    /// Standard deviation of the reported position, m.
    pub noise_sigma: f64,
    /// Pose sampling interval, s.
    pub sample_dt: f64,
    /// Extra sensing range used for discovery, m.
    pub discovery_margin: f64,
    /// Abort after this many consecutive replans without coverage gain.
    pub stall_replans: usize,
    pub max_replans: usize,
}

impl Default for MissionConfig {
    fn default() -> Self {
        let world = WorldSpec::default();
        Self {
            planner: PlannerInputs::defaults(UavState::hover_at(Point::zeros()), world.resolution, 0),
            world,
            preset: Preset::Greedy,
            seed: 1,
            speed: 1.2,
            noise_sigma: 0.05,
            sample_dt: 0.25,
            discovery_margin: 1.0,
            stall_replans: 5,
            max_replans: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// No coverage gain over `stall_replans` consecutive replans.
    Stalled,
    ReplanCap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverageSample {
    pub t: f64,
    pub coverage: f64,
    pub distance: f64,
    /// Known (non-Unknown) volume, m³.
    pub volume: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplanLog {
    pub index: usize,
    pub t: f64,
    pub distance: f64,
    pub coverage: f64,
    /// `None` when the planner failed; the error is in `failure`.
    pub cost: Option<CostBreakdown>,
    pub failure: Option<PlanError>,
    pub chosen: Option<usize>,
    pub goals: usize,
    pub priced: usize,
    pub tree_size: usize,
    pub iterations: usize,
    pub traj_points: usize,
    pub traj_length: f64,
    pub timings: StageTimings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionMetrics {
    pub seed: u64,
    pub preset: Preset,
    pub outcome: Outcome,
    pub replans: Vec<ReplanLog>,
    pub coverage: Vec<CoverageSample>,
    pub distance: f64,
    pub elapsed: f64,
    pub t_90: Option<f64>,
    pub d_90: Option<f64>,
    pub t_100: Option<f64>,
    pub d_100: Option<f64>,
    /// Every flown polyline, in order.
    pub executed: Vec<Vec<Point>>,
    /// Voxels counted by coverage.
    pub feasible: usize,
}

impl MissionMetrics {
    pub fn final_coverage(&self) -> f64 {
        self.coverage.last().map_or(0.0, |c| c.coverage)
    }

    /// Mean wall-clock planning time over successful replans.
    pub fn mean_plan_time(&self) -> Option<Duration> {
        let planned: Vec<_> = self.replans.iter().filter(|r| r.failure.is_none()).collect();
        (!planned.is_empty()).then(|| planned.iter().map(|r| r.timings.total()).sum::<Duration>() / planned.len() as u32)
    }

    pub fn mean_speed(&self) -> f64 {
        if self.elapsed > 0.0 { self.distance / self.elapsed } else { 0.0 }
    }
}

/// Points inside a voxel used as candidate viewpoints.
const VIEW_OFFSETS: [f64; 3] = [0.25, 0.5, 0.75];

/// Voxels an ideal planner of this model could ever map. Starting from the initial known
/// map, every viewpoint in known Free space reachable from `start` that certifies some
/// Unknown voxel (line of sight clear of Occupied and Unknown) gets a truth discovery at
/// range `range + margin`, until nothing changes.
pub fn feasible_set(truth: &VoxelWorld, start: &Point, model: &SensorModel, margin: f64) -> Vec<bool> {
    let Some(s) = truth.locate(start) else { return vec![false; truth.len()] };
    let mut known = initial_known(truth, start, model.range);
    let discovery = model.with_range(model.range + margin);
    let reach = Point::new(model.range, model.range, model.max_vertical_reach());
    let res = truth.resolution();
    let n_off = VIEW_OFFSETS.len().pow(3);
    let mut spent = vec![false; truth.len() * n_off];
    loop {
        let reachable = flood_fill(&known, s);
        let mut changed = false;
        for v in truth.indices().filter(|&v| reachable[truth.flat(v)]) {
            let corner = truth.center(v) - Point::repeat(res / 2.0);
            for (o, off) in view_offsets().enumerate() {
                let slot = truth.flat(v) * n_off + o;
                if spent[slot] {
                    continue;
                }
                let p = corner + off * res;
                let (lo, hi) = known.index_box(&p, reach);
                let any_unknown = (lo[0]..=hi[0]).any(|i| {
                    (lo[1]..=hi[1]).any(|j| (lo[2]..=hi[2]).any(|k| known.label(VoxelIndex::new(i, j, k)) == Label::Unknown))
                });
                if !any_unknown {
                    spent[slot] = true;
                    continue;
                }
                if model.visible_unknowns(&p, &known).map(|u| u.is_empty()).unwrap_or(true) {
                    continue;
                }
                spent[slot] = true;
                changed |= !discover(truth, &mut known, &p, &discovery).is_empty();
            }
        }
        if !changed {
            break;
        }
    }
    known.indices().map(|v| known.label(v) != Label::Unknown).collect()
}

fn view_offsets() -> impl Iterator<Item = Point> {
    VIEW_OFFSETS
        .into_iter()
        .flat_map(|x| VIEW_OFFSETS.into_iter().flat_map(move |y| VIEW_OFFSETS.into_iter().map(move |z| Point::new(x, y, z))))
}

/// Known map at mission start: all Unknown except truth labels within `radius` of `start`.
pub fn initial_known(truth: &VoxelWorld, start: &Point, radius: f64) -> VoxelWorld {
    let mut known =
        VoxelWorld::new(truth.origin(), truth.resolution(), truth.dims(), Label::Unknown).expect("truth geometry is valid");
    let (lo, hi) = truth.index_box(start, Point::repeat(radius));
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let v = VoxelIndex::new(i, j, k);
                if (truth.center(v) - start).norm() <= radius {
                    known.set(v, truth.label(v));
                }
            }
        }
    }
    known
}

/// Copy the truth label of every voxel the sensor sees from `pose` into `known`. The line
/// of sight is blocked by truth-Occupied voxels only. Returns the voxels newly labelled.
pub fn discover(truth: &VoxelWorld, known: &mut VoxelWorld, pose: &Point, model: &SensorModel) -> Vec<VoxelIndex> {
    let mut found = Vec::new();
    if !truth.in_bounds(pose) {
        return found;
    }
    let reach = Point::new(model.range, model.range, model.max_vertical_reach());
    let (lo, hi) = truth.index_box(pose, reach);
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let v = VoxelIndex::new(i, j, k);
                if known.label(v) != Label::Unknown {
                    continue;
                }
                let c = truth.center(v);
                if model.in_view(pose, &c) && truth.segment_free_except(pose, &c, BlockSet::OCCUPIED, v).unwrap_or(false) {
                    known.set(v, truth.label(v));
                    found.push(v);
                }
            }
        }
    }
    found
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    /// Time since the start of this track, s.
    pub t: f64,
    /// Distance flown since the start of this track, m.
    pub s: f64,
    pub truth: Point,
    pub reported: Point,
}

/// Follow `path` at constant `speed`, sampling the pose every `dt` seconds and at the
/// end. Reported poses carry isotropic Gaussian noise.
pub fn track(path: &[Point], speed: f64, dt: f64, noise: &Normal<f64>, rng: &mut seed::Rng) -> Vec<PoseSample> {
    let mut out = Vec::new();
    let Some(&first) = path.first() else { return out };
    let total: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let step = speed * dt;
    let sample = |t: f64, s: f64, p: Point, rng: &mut seed::Rng| {
        let n = Point::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        PoseSample { t, s, truth: p, reported: p + n }
    };
    out.push(sample(0.0, 0.0, first, rng));
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut n = 1;
    while (n as f64) * step < total {
        let s = n as f64 * step;
        while seg + 1 < path.len() - 1 && seg_start + (path[seg + 1] - path[seg]).norm() < s {
            seg_start += (path[seg + 1] - path[seg]).norm();
            seg += 1;
        }
        let len = (path[seg + 1] - path[seg]).norm();
        let f = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        let p = path[seg] + (path[seg + 1] - path[seg]) * f;
        out.push(sample(n as f64 * dt, s, p, rng));
        n += 1;
    }
    if path.len() > 1 && total > 0.0 {
        out.push(sample(total / speed, total, *path.last().unwrap(), rng));
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum MissionError {
    #[error(transparent)]
    World(#[from] WorldGenError),
}

/// Generate the world for `config.seed` and run the mission on it.
pub fn run_mission(config: &MissionConfig) -> Result<MissionMetrics, MissionError> {
    let world = generate_world(&config.world, config.seed)?;
    let feasible = feasible_set(&world.truth, &world.start, &config.planner.sensor, config.discovery_margin);
    Ok(run_mission_on(config, &world, &feasible))
}

/// Run several missions in parallel. Worlds and feasible sets are built once per
/// distinct world spec and seed; results keep the input order.
pub fn run_batch(configs: &[MissionConfig]) -> Result<Vec<MissionMetrics>, MissionError> {
    use rayon::prelude::*;
    let mut keys: Vec<(u64, &MissionConfig)> = Vec::new();
    for c in configs {
        if !keys.iter().any(|(s, k)| *s == c.seed && same_world(k, c)) {
            keys.push((c.seed, c));
        }
    }
    let worlds: Vec<(GeneratedWorld, Vec<bool>)> = keys
        .par_iter()
        .map(|(seed, c)| {
            let w = generate_world(&c.world, *seed)?;
            let f = feasible_set(&w.truth, &w.start, &c.planner.sensor, c.discovery_margin);
            Ok((w, f))
        })
        .collect::<Result<_, MissionError>>()?;
    Ok(configs
        .par_iter()
        .map(|c| {
            let n = keys.iter().position(|(s, k)| *s == c.seed && same_world(k, c)).expect("world built");
            run_mission_on(c, &worlds[n].0, &worlds[n].1)
        })
        .collect())
}

fn same_world(a: &MissionConfig, b: &MissionConfig) -> bool {
    a.world == b.world && a.planner.sensor == b.planner.sensor && a.discovery_margin == b.discovery_margin
}

/// Run one mission on a given ground truth with a precomputed [`feasible_set`].
pub fn run_mission_on(config: &MissionConfig, world: &GeneratedWorld, feasible: &[bool]) -> MissionMetrics {
    let mut mission = Mission::new(config, world, feasible);
    while mission.step() {}
    mission.finish()
}

/// A mission in progress; [`Mission::step`] runs one replan cycle.
pub struct Mission<'a> {
    config: &'a MissionConfig,
    truth: &'a VoxelWorld,
    feasible: &'a [bool],
    discovery: SensorModel,
    known: VoxelWorld,
    remaining: usize,
    denominator: usize,
    known_count: usize,
    noise: Normal<f64>,
    noise_rng: seed::Rng,
    pos: Point,
    reported: Point,
    idle: usize,
    done: bool,
    metrics: MissionMetrics,
}

impl<'a> Mission<'a> {
    pub fn new(config: &'a MissionConfig, world: &'a GeneratedWorld, feasible: &'a [bool]) -> Self {
        let truth = &world.truth;
        let sensor = config.planner.sensor;
        let known = initial_known(truth, &world.start, sensor.range);
        let remaining = known.indices().filter(|&v| feasible[known.flat(v)] && known.label(v) == Label::Unknown).count();
        let known_count = known.len() - known.count(Label::Unknown);
        let metrics = MissionMetrics {
            seed: config.seed,
            preset: config.preset,
            outcome: Outcome::ReplanCap,
            replans: Vec::new(),
            coverage: Vec::new(),
            distance: 0.0,
            elapsed: 0.0,
            t_90: None,
            d_90: None,
            t_100: None,
            d_100: None,
            executed: Vec::new(),
            feasible: remaining,
        };
        let mut m = Self {
            config,
            truth,
            feasible,
            discovery: sensor.with_range(sensor.range + config.discovery_margin),
            known,
            remaining,
            denominator: remaining,
            known_count,
            noise: Normal::new(0.0, config.noise_sigma.max(0.0)).expect("finite noise"),
            noise_rng: seed::stream(config.seed, "noise"),
            pos: world.start,
            reported: world.start,
            idle: 0,
            done: false,
            metrics,
        };
        m.sense(&world.start);
        m.record();
        m
    }

    pub fn known(&self) -> &VoxelWorld {
        &self.known
    }

    pub fn position(&self) -> Point {
        self.pos
    }

    pub fn coverage(&self) -> f64 {
        if self.denominator == 0 { 1.0 } else { 1.0 - self.remaining as f64 / self.denominator as f64 }
    }

    pub fn metrics(&self) -> &MissionMetrics {
        &self.metrics
    }

    pub fn finish(self) -> MissionMetrics {
        self.metrics
    }

    fn sense(&mut self, pose: &Point) {
        for v in discover(self.truth, &mut self.known, pose, &self.discovery) {
            self.known_count += 1;
            if self.feasible[self.known.flat(v)] {
                self.remaining -= 1;
            }
        }
    }

    fn record(&mut self) {
        let coverage = self.coverage();
        let m = &mut self.metrics;
        let (t, d) = (m.elapsed, m.distance);
        let volume = self.known_count as f64 * self.truth.resolution().powi(3);
        m.coverage.push(CoverageSample { t, coverage, distance: d, volume });
        if coverage >= 0.9 && m.t_90.is_none() {
            m.t_90 = Some(t);
            m.d_90 = Some(d);
        }
        if self.remaining == 0 && m.t_100.is_none() {
            m.t_100 = Some(t);
            m.d_100 = Some(d);
        }
    }

    /// Planner inputs for the next replan.
    pub fn next_inputs(&self) -> PlannerInputs {
        // Plan from the reported pose when it is usable, otherwise from the true pose.
        let root = if self.known.is_free(&self.reported)
            && self.known.segment_free(&self.pos, &self.reported, BlockSet::OCCUPIED_OR_UNKNOWN).unwrap_or(false)
        {
            self.reported
        } else {
            self.pos
        };
        let mut inputs = self.config.planner.clone();
        inputs.state = UavState::hover_at(root);
        inputs.seed = seed::derive(self.config.seed, &format!("plan/{}", self.metrics.replans.len()));
        inputs
    }

    /// One plan, fly, sense cycle. Returns false once the mission has ended.
    pub fn step(&mut self) -> bool {
        if self.done {
            return false;
        }
        let r = self.metrics.replans.len();
        if self.remaining == 0 {
            return self.end(Outcome::Complete);
        }
        if r >= self.config.max_replans {
            return self.end(Outcome::ReplanCap);
        }
        let inputs = self.next_inputs();
        let before = self.remaining;
        let result = pipeline::plan_with_retry(&self.known, &inputs);

        let mut log = ReplanLog {
            index: r,
            t: self.metrics.elapsed,
            distance: self.metrics.distance,
            coverage: self.coverage(),
            cost: None,
            failure: None,
            chosen: None,
            goals: 0,
            priced: 0,
            tree_size: 0,
            iterations: inputs.rrt.iterations,
            traj_points: 0,
            traj_length: 0.0,
            timings: StageTimings::default(),
        };
        match result {
            Ok(plan) => {
                log.cost = Some(plan.chosen_cost());
                log.chosen = Some(plan.chosen);
                log.goals = plan.candidates.len();
                log.priced = plan.candidates.iter().filter(|c| c.cost.is_some()).count();
                log.tree_size = plan.tree_size;
                log.iterations = plan.iterations;
                log.traj_points = plan.x_min.len();
                log.traj_length = plan.x_min.length();
                log.timings = plan.timings;
                self.metrics.replans.push(log);

                let path = flown_path(&self.pos, &plan.x_min);
                let (t0, d0) = (self.metrics.elapsed, self.metrics.distance);
                let samples = track(&path, self.config.speed, self.config.sample_dt, &self.noise, &mut self.noise_rng);
                for sample in samples.iter().skip(1) {
                    self.metrics.elapsed = t0 + sample.t;
                    self.metrics.distance = d0 + sample.s;
                    self.sense(&sample.truth);
                    self.record();
                    self.pos = sample.truth;
                    self.reported = sample.reported;
                    if self.remaining == 0 {
                        break;
                    }
                }
                self.metrics.executed.push(path);
            }
            Err(PlanError::ExplorationExhausted) => {
                log.failure = Some(PlanError::ExplorationExhausted);
                self.metrics.replans.push(log);
                return self.end(Outcome::Complete);
            }
            Err(e) => {
                log::warn!("seed {} replan {r}: {e}", self.config.seed);
                log.failure = Some(e);
                self.metrics.replans.push(log);
            }
        }
        if self.remaining == 0 {
            return self.end(Outcome::Complete);
        }
        self.idle = if self.remaining < before { 0 } else { self.idle + 1 };
        if self.idle >= self.config.stall_replans {
            log::warn!("seed {}: no coverage gain over {} replans, aborting", self.config.seed, self.idle);
            return self.end(Outcome::Stalled);
        }
        true
    }

    fn end(&mut self, outcome: Outcome) -> bool {
        self.metrics.outcome = outcome;
        self.done = true;
        false
    }
}

/// The polyline the vehicle flies: from its true position to the trajectory start, then
/// along the trajectory.
fn flown_path(pos: &Point, traj: &Trajectory) -> Vec<Point> {
    let mut path = Vec::with_capacity(traj.len() + 1);
    if traj.points.first() != Some(pos) {
        path.push(*pos);
    }
    path.extend_from_slice(&traj.points);
    path
}
