//! One planning cycle: goals, tree, path improvement, predicted actuation, pricing,
//! selection.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::cost::{self, CostBreakdown, CostGains};
use crate::dynamics::{InputVec, UavModel, UavState};
use crate::goals::{self, Goal, GoalError};
use crate::nmpc::{self, Nmpc, NmpcError, NmpcWeights, SolverSettings};
use crate::rrt::{self, RrtError, RrtParams, Trajectory};
use crate::seed;
use crate::sensor::SensorModel;
use crate::world::VoxelWorld;

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerInputs {
    pub state: UavState,
    pub n_goal: usize,
    pub goal_attempts: usize,
    pub sensor: SensorModel,
    pub gains: CostGains,
    pub weights: NmpcWeights,
    pub model: UavModel,
    pub solver: SolverSettings,
    pub rrt: RrtParams,
    pub interp_spacing: f64,
    pub seed: u64,
}

impl PlannerInputs {
    /// Evaluation defaults for a world of the given resolution.
    pub fn defaults(state: UavState, resolution: f64, seed: u64) -> Self {
        Self {
            state,
            n_goal: 40,
            goal_attempts: 200 * 40,
            sensor: SensorModel::default(),
            gains: CostGains::GREEDY,
            weights: NmpcWeights::default(),
            model: UavModel::default(),
            solver: SolverSettings::default(),
            rrt: RrtParams::for_resolution(resolution, 1500),
            interp_spacing: 0.75,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverStats {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CandidateStatus {
    /// The tree did not reach the goal.
    Unreached,
    /// The actuation solve failed; the candidate is dropped.
    SolverFault(NmpcError),
    Priced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub goal: Goal,
    pub status: CandidateStatus,
    pub trajectory: Option<Trajectory>,
    pub cost: Option<CostBreakdown>,
    pub solver: Option<SolverStats>,
    pub u_seq: Vec<InputVec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub goals: Duration,
    pub tree: Duration,
    pub improve: Duration,
    pub actuation: Duration,
    pub cost: Duration,
    pub select: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.goals + self.tree + self.improve + self.actuation + self.cost + self.select
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub x_min: Trajectory,
    /// Index into `candidates` of the chosen one.
    pub chosen: usize,
    pub candidates: Vec<Candidate>,
    pub goal_attempts: usize,
    pub tree_size: usize,
    pub iterations: usize,
    pub timings: StageTimings,
}

impl PlanResult {
    pub fn chosen_cost(&self) -> CostBreakdown {
        self.candidates[self.chosen].cost.expect("chosen candidate is priced")
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_plan(&self, other: &PlanResult) -> bool {
        PlanResult { timings: StageTimings::default(), ..self.clone() }
            == PlanResult { timings: StageTimings::default(), ..other.clone() }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("no unknown voxels remain")]
    ExplorationExhausted,
    #[error("no goal was reached by the tree")]
    NoCandidates,
    #[error("vehicle position is not in a free voxel")]
    StartBlocked,
}

/// Run one planning cycle on an immutable snapshot of the known map.
pub fn plan(world: &VoxelWorld, inputs: &PlannerInputs) -> Result<PlanResult, PlanError> {
    let mut timings = StageTimings::default();
    let start = inputs.state.p;
    if !world.is_free(&start) {
        return Err(PlanError::StartBlocked);
    }

    let t = Instant::now();
    let mut goal_rng = seed::stream(inputs.seed, "goals");
    let goal_set = goals::generate_goals(world, &inputs.sensor, inputs.n_goal, &mut goal_rng, inputs.goal_attempts)
        .map_err(|e| match e {
            GoalError::ExplorationExhausted => PlanError::ExplorationExhausted,
        })?;
    timings.goals = t.elapsed();

    let t = Instant::now();
    let positions: Vec<_> = goal_set.positions().collect();
    let mut tree_rng = seed::stream(inputs.seed, "tree");
    let grown = rrt::grow_tree(world, start, &positions, &inputs.rrt, &mut tree_rng).map_err(|e| match e {
        RrtError::StartBlocked => PlanError::StartBlocked,
    })?;
    timings.tree = t.elapsed();

    let t = Instant::now();
    let trajectories: Vec<Option<Trajectory>> = goal_set
        .goals
        .par_iter()
        .enumerate()
        .map(|(g, goal)| {
            let chain = grown.goal_chain(g, &goal.position)?;
            let improved = rrt::improve_path(&chain, world);
            let mut traj = rrt::interpolate(&improved, inputs.interp_spacing);
            traj.goal_index = Some(g);
            Some(traj)
        })
        .collect();
    timings.improve = t.elapsed();

    let t = Instant::now();
    let solver = Nmpc::new(inputs.model, inputs.weights.clone(), inputs.solver);
    let solutions: Vec<Option<Result<nmpc::ActuationSolution, NmpcError>>> = trajectories
        .par_iter()
        .map(|traj| {
            let traj = traj.as_ref()?;
            Some(nmpc::build_reference(traj, inputs.weights.horizon).and_then(|refs| solver.solve(&inputs.state, &refs)))
        })
        .collect();
    timings.actuation = t.elapsed();

    let t = Instant::now();
    let mut candidates: Vec<Candidate> = goal_set
        .goals
        .par_iter()
        .zip(trajectories.into_par_iter())
        .zip(solutions.into_par_iter())
        .map(|((goal, trajectory), solution)| match (trajectory, solution) {
            (Some(traj), Some(Ok(sol))) => {
                let u_seq: Vec<InputVec> = sol.u_seq.iter().map(|u| u.to_vec()).collect();
                let j_d = cost::distance_cost(&traj, inputs.gains.k_d);
                let j_a = cost::actuation_cost(&u_seq, &inputs.weights);
                let nu = cost::information_gain(&traj.points, world, &inputs.sensor);
                Candidate {
                    goal: *goal,
                    status: CandidateStatus::Priced,
                    cost: Some(CostBreakdown::new(j_d, j_a, nu, &inputs.gains)),
                    solver: Some(SolverStats {
                        objective: sol.objective,
                        iterations: sol.iterations,
                        converged: sol.converged,
                        stationarity: sol.stationarity,
                    }),
                    trajectory: Some(traj),
                    u_seq,
                }
            }
            (Some(traj), Some(Err(e))) => {
                log::debug!("dropping candidate: {e}");
                Candidate {
                    goal: *goal,
                    status: CandidateStatus::SolverFault(e),
                    trajectory: Some(traj),
                    cost: None,
                    solver: None,
                    u_seq: Vec::new(),
                }
            }
            _ => Candidate {
                goal: *goal,
                status: CandidateStatus::Unreached,
                trajectory: None,
                cost: None,
                solver: None,
                u_seq: Vec::new(),
            },
        })
        .collect();
    timings.cost = t.elapsed();

    let t = Instant::now();
    let costs: Vec<Option<CostBreakdown>> = candidates.iter().map(|c| c.cost).collect();
    let chosen = cost::select_min(&costs).map_err(|_| PlanError::NoCandidates)?;
    let x_min = candidates[chosen].trajectory.clone().expect("priced candidates carry a trajectory");
    timings.select = t.elapsed();

    candidates.shrink_to_fit();
    Ok(PlanResult {
        x_min,
        chosen,
        candidates,
        goal_attempts: goal_set.attempts,
        tree_size: grown.tree.len(),
        iterations: inputs.rrt.iterations,
        timings,
    })
}

/// [`plan`], retrying once with twice the tree iterations when no goal is reached.
pub fn plan_with_retry(world: &VoxelWorld, inputs: &PlannerInputs) -> Result<PlanResult, PlanError> {
    match plan(world, inputs) {
        Err(PlanError::NoCandidates) => {
            log::info!("no candidates after {} iterations; retrying with {}", inputs.rrt.iterations, 2 * inputs.rrt.iterations);
            let mut doubled = inputs.clone();
            doubled.rrt.iterations *= 2;
            plan(world, &doubled)
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{BlockSet, Label, Point, VoxelIndex};

    /// Known free room in the middle of an otherwise unknown box.
    fn partially_known() -> VoxelWorld {
        let mut w = VoxelWorld::new(Point::zeros(), 1.0, [16, 16, 4], Label::Unknown).unwrap();
        for i in 3..13 {
            for j in 3..13 {
                for k in 0..4 {
                    w.set(VoxelIndex::new(i, j, k), Label::Free);
                }
            }
        }
        for k in 0..4 {
            w.set(VoxelIndex::new(8, 8, k), Label::Occupied);
        }
        w
    }

    fn inputs(seed: u64) -> PlannerInputs {
        let mut p = PlannerInputs::defaults(UavState::hover_at(Point::new(4.5, 4.5, 1.5)), 1.0, seed);
        p.rrt.iterations = 600;
        p.n_goal = 12;
        p
    }

    #[test]
    fn exhausted_world() {
        let w = VoxelWorld::new(Point::zeros(), 1.0, [8, 8, 4], Label::Free).unwrap();
        let p = PlannerInputs::defaults(UavState::hover_at(Point::new(2.5, 2.5, 1.5)), 1.0, 1);
        assert_eq!(plan(&w, &p), Err(PlanError::ExplorationExhausted));
    }

    #[test]
    fn blocked_start() {
        let w = partially_known();
        let mut p = inputs(1);
        p.state.p = Point::new(8.5, 8.5, 1.5);
        assert_eq!(plan(&w, &p), Err(PlanError::StartBlocked));
    }

    #[test]
    fn plan_invariants_hold() {
        let w = partially_known();
        for s in 0..4 {
            let p = inputs(s);
            let r = plan(&w, &p).unwrap();
            assert_eq!(r.candidates.len(), r.candidates.iter().filter(|c| c.goal.position.x.is_finite()).count());
            assert!((r.x_min.points[0] - p.state.p).norm() <= p.rrt.goal_radius);
            let min = r.candidates.iter().filter_map(|c| c.cost).filter(|c| c.nu > 0).map(|c| c.total).fold(f64::INFINITY, f64::min);
            assert_eq!(r.chosen_cost().total, min);
            for c in &r.candidates {
                let Some(t) = &c.trajectory else { continue };
                for seg in t.points.windows(2) {
                    assert!((seg[1] - seg[0]).norm() <= 0.75 + 1e-9);
                    assert!(w.segment_free(&seg[0], &seg[1], BlockSet::OCCUPIED_OR_UNKNOWN).unwrap());
                }
                if let Some(sol) = &c.solver {
                    assert!(sol.objective.is_finite());
                }
            }
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let w = partially_known();
        let a = plan(&w, &inputs(9)).unwrap();
        let b = plan(&w, &inputs(9)).unwrap();
        assert!(a.same_plan(&b));
        assert_eq!(format!("{:?}", a.x_min), format!("{:?}", b.x_min));
    }

    #[test]
    fn unreachable_unknowns_give_no_candidates() {
        // The only unknown voxel is visible from the start room but every goal that sees it
        // is sealed off by a full occupied wall, so the tree cannot reach any of them.
        let mut w = VoxelWorld::new(Point::zeros(), 1.0, [12, 5, 3], Label::Free).unwrap();
        for j in 0..5 {
            for k in 0..3 {
                w.set(VoxelIndex::new(5, j, k), Label::Occupied);
            }
        }
        w.set(VoxelIndex::new(10, 2, 1), Label::Unknown);
        let mut p = PlannerInputs::defaults(UavState::hover_at(Point::new(1.5, 2.5, 1.5)), 1.0, 3);
        p.rrt.iterations = 300;
        p.n_goal = 5;
        assert_eq!(plan_with_retry(&w, &p), Err(PlanError::NoCandidates));
    }
}
