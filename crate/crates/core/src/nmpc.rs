//! Single-shooting NMPC for predicting the actuation needed to follow a trajectory.
//!
//! The decision variables are the `n_p` inputs; states are eliminated by rolling the
//! model forward from the measured state. Each iteration builds a Gauss-Newton model
//! of the reduced objective, solves it with a backward Riccati sweep whose per-step
//! input QPs respect the box bounds, and line-searches the feedback rollout with an
//! Armijo test. Stationarity is the projected-gradient norm, with the gradient from
//! an adjoint sweep through the RK4 steps.

use std::ops::AddAssign;

use nalgebra::{Matrix3, SMatrix, SVector};
use thiserror::Error;

use crate::dynamics::{ControlInput, InputVec, StateVec, Stages, UavModel, UavState};
use crate::rrt::Trajectory;

pub type Matrix8 = SMatrix<f64, 8, 8>;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum NmpcError {
    #[error("trajectory has no points")]
    EmptyTrajectory,
    #[error("model rollout produced a non-finite state")]
    NonFinite,
    #[error("reference length {got} does not match horizon {expected}")]
    HorizonMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmpcWeights {
    pub q_x: Matrix8,
    pub q_u: Matrix3<f64>,
    pub q_du: Matrix3<f64>,
    pub u_ref: ControlInput,
    pub horizon: usize,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            q_x: Matrix8::from_diagonal(&SMatrix::<f64, 8, 1>::from_column_slice(&[5.0, 5.0, 5.0, 1.0, 1.0, 1.0, 2.0, 2.0])),
            q_u: Matrix3::from_diagonal(&InputVec::new(1.0, 5.0, 5.0)),
            q_du: Matrix3::from_diagonal(&InputVec::new(1.0, 10.0, 10.0)),
            u_ref: ControlInput::REFERENCE,
            horizon: 50,
        }
    }
}

impl NmpcWeights {
    /// All weights multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { q_x: self.q_x * k, q_u: self.q_u * k, q_du: self.q_du * k, ..self.clone() }
    }

    /// Symmetric positive semidefinite weights and a non-empty horizon.
    pub fn is_valid(&self) -> bool {
        fn psd<const N: usize>(m: &SMatrix<f64, N, N>) -> bool {
            let sym = (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
            if !sym || !m.iter().all(|v| v.is_finite()) {
                return false;
            }
            let d = nalgebra::DMatrix::from_iterator(N, N, m.iter().copied());
            d.symmetric_eigenvalues().iter().all(|&l| l >= -1e-12)
        }
        self.horizon >= 1 && psd(&self.q_x) && psd(&self.q_u) && psd(&self.q_du)
    }

    /// Input and input-rate penalties of a sequence; the predecessor of the first
    /// input is `u_ref`.
    pub fn input_cost(&self, u_seq: &[InputVec]) -> f64 {
        let u_ref = self.u_ref.to_vec();
        let mut prev = u_ref;
        let mut total = 0.0;
        for u in u_seq {
            let e = u_ref - u;
            let du = u - prev;
            total += e.dot(&(self.q_u * e)) + du.dot(&(self.q_du * du));
            prev = *u;
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// Stop when the projected-gradient norm falls to this value.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tolerance: 1e-4, max_iters: 300 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActuationSolution {
    pub u_seq: Vec<ControlInput>,
    /// `n_p + 1` predicted states, starting at the measured state.
    pub x_pred: Vec<UavState>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Projected-gradient norm at the returned point.
    pub stationarity: f64,
}

/// Lift the first `horizon` trajectory points to hover states; the last point is
/// repeated when the trajectory is shorter than the horizon.
pub fn build_reference(traj: &Trajectory, horizon: usize) -> Result<Vec<StateVec>, NmpcError> {
    let last = *traj.points.last().ok_or(NmpcError::EmptyTrajectory)?;
    Ok((0..horizon)
        .map(|j| UavState::hover_at(traj.points.get(j).copied().unwrap_or(last)).to_vec())
        .collect())
}

#[derive(Clone, Debug)]
pub struct Nmpc {
    pub model: UavModel,
    pub weights: NmpcWeights,
    pub settings: SolverSettings,
}

/// Scratch buffers for one rollout.
struct Rollout {
    states: Vec<StateVec>,
    stages: Vec<Stages>,
}

impl Nmpc {
    pub fn new(model: UavModel, weights: NmpcWeights, settings: SolverSettings) -> Self {
        Self { model, weights, settings }
    }

    fn rollout(&self, x0: &StateVec, u: &[InputVec], out: &mut Rollout) -> bool {
        out.states.clear();
        out.stages.clear();
        out.states.push(*x0);
        let mut x = *x0;
        for uj in u {
            let (next, st) = self.model.step_stages(&x, uj, self.model.ts);
            if !next.iter().all(|c| c.is_finite()) {
                return false;
            }
            out.stages.push(st);
            out.states.push(next);
            x = next;
        }
        true
    }

    fn state_cost(&self, states: &[StateVec], refs: &[StateVec]) -> f64 {
        refs.iter()
            .zip(states)
            .map(|(r, x)| {
                let e = x - r;
                e.dot(&(self.weights.q_x * e))
            })
            .sum()
    }

    /// Reduced objective at `u`, or `None` if the rollout blows up.
    pub fn objective(&self, x0: &UavState, refs: &[StateVec], u: &[InputVec]) -> Option<f64> {
        let mut ro = Rollout { states: Vec::with_capacity(u.len() + 1), stages: Vec::with_capacity(u.len()) };
        self.rollout(&x0.to_vec(), u, &mut ro).then(|| self.state_cost(&ro.states, refs) + self.weights.input_cost(u))
    }

    /// Objective and its gradient with respect to every input.
    pub fn objective_and_gradient(&self, x0: &UavState, refs: &[StateVec], u: &[InputVec]) -> Option<(f64, Vec<InputVec>)> {
        let mut ro = Rollout { states: Vec::with_capacity(u.len() + 1), stages: Vec::with_capacity(u.len()) };
        if !self.rollout(&x0.to_vec(), u, &mut ro) {
            return None;
        }
        let mut grad = vec![InputVec::zeros(); u.len()];
        let j = self.gradient_into(&ro, refs, u, &mut grad);
        Some((j, grad))
    }

    fn gradient_into(&self, ro: &Rollout, refs: &[StateVec], u: &[InputVec], grad: &mut [InputVec]) -> f64 {
        let n = u.len();
        let w = &self.weights;
        let u_ref = w.u_ref.to_vec();
        let ts = self.model.ts;
        let mut lambda = StateVec::zeros();
        for j in (0..n).rev() {
            let (gx, gu) = self.model.step_vjp(&ro.stages[j], &u[j], ts, &lambda);
            let prev = if j == 0 { u_ref } else { u[j - 1] };
            let mut g = gu + w.q_u * (u[j] - u_ref) * 2.0 + w.q_du * (u[j] - prev) * 2.0;
            if j + 1 < n {
                g -= w.q_du * (u[j + 1] - u[j]) * 2.0;
            }
            grad[j] = g;
            lambda = gx;
            if j < refs.len() {
                lambda += w.q_x * (ro.states[j] - refs[j]) * 2.0;
            }
        }
        self.state_cost(&ro.states, refs) + w.input_cost(u)
    }

    fn project(&self, u: &InputVec) -> InputVec {
        self.model.clamp(u)
    }

    fn projected_gradient_norm(&self, u: &[InputVec], g: &[InputVec]) -> f64 {
        u.iter()
            .zip(g)
            .map(|(uj, gj)| (self.project(&(uj - gj)) - uj).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Minimise the tracking objective from the measured state `x0` against `refs`.
    pub fn solve(&self, x0: &UavState, refs: &[StateVec]) -> Result<ActuationSolution, NmpcError> {
        self.solve_observed(x0, refs, |_, _| {})
    }

    /// [`Nmpc::solve`], calling `observe(objective, inputs)` at the warm start and after
    /// every accepted iteration.
    pub fn solve_observed(
        &self,
        x0: &UavState,
        refs: &[StateVec],
        mut observe: impl FnMut(f64, &[InputVec]),
    ) -> Result<ActuationSolution, NmpcError> {
        let n = self.weights.horizon;
        if refs.len() != n {
            return Err(NmpcError::HorizonMismatch { expected: n, got: refs.len() });
        }
        let x0v = x0.to_vec();
        if !x0v.iter().all(|c| c.is_finite()) {
            return Err(NmpcError::NonFinite);
        }
        let w = &self.weights;
        let u_ref = w.u_ref.to_vec();
        let lo = self.model.u_min.to_vec();
        let hi = self.model.u_max.to_vec();

        let mut u: Vec<InputVec> = vec![self.project(&u_ref); n];
        let mut ro = Rollout { states: Vec::with_capacity(n + 1), stages: Vec::with_capacity(n) };
        let mut trial_ro = Rollout { states: Vec::with_capacity(n + 1), stages: Vec::with_capacity(n) };
        if !self.rollout(&x0v, &u, &mut ro) {
            return Err(NmpcError::NonFinite);
        }
        let mut g = vec![InputVec::zeros(); n];
        let mut obj = self.gradient_into(&ro, refs, &u, &mut g);
        let mut stationarity = self.projected_gradient_norm(&u, &g);
        let mut converged = stationarity <= self.settings.tolerance;
        observe(obj, &u);

        // Constant second-order terms of the stage cost in z = [x, u_prev].
        let mut lzz = AugMat::zeros();
        lzz.fixed_view_mut::<8, 8>(0, 0).copy_from(&(w.q_x * 2.0));
        lzz.fixed_view_mut::<3, 3>(8, 8).copy_from(&(w.q_du * 2.0));
        let luu = (w.q_u + w.q_du) * 2.0;
        let mut luz = AugGain::zeros();
        luz.fixed_view_mut::<3, 3>(0, 8).copy_from(&(w.q_du * -2.0));
        let reg_scale = luu.trace() / 3.0 + f64::MIN_POSITIVE;

        let mut ff = vec![InputVec::zeros(); n];
        let mut fb = vec![AugGain::zeros(); n];
        let mut trial = u.clone();
        let mut mu = 0.0;
        let mut iterations = 0;

        const ARMIJO: f64 = 1e-4;
        // After the tolerance is met, Newton-type steps continue until they stop moving the
        // inputs, so the result does not depend on the scale of the weights.
        let mut settled = converged;
        while !settled && iterations < self.settings.max_iters {
            iterations += 1;

            // Backward Riccati sweep of the Gauss-Newton model with box-constrained steps.
            let mut vv = AugMat::zeros();
            let mut v = AugVec::zeros();
            let (mut dv1, mut dv2) = (0.0, 0.0);
            let mut ok = true;
            for j in (0..n).rev() {
                let (a, b) = self.model.step_jacobians(&ro.stages[j], &u[j], self.model.ts);
                let prev = if j == 0 { u_ref } else { u[j - 1] };
                let e = ro.states[j] - refs[j];
                let du = u[j] - prev;
                let mut lz = AugVec::zeros();
                lz.fixed_rows_mut::<8>(0).copy_from(&(w.q_x * e * 2.0));
                lz.fixed_rows_mut::<3>(8).copy_from(&(w.q_du * du * -2.0));
                let lu = w.q_u * (u[j] - u_ref) * 2.0 + w.q_du * du * 2.0;

                let vxx = vv.fixed_view::<8, 8>(0, 0);
                let vxp = vv.fixed_view::<8, 3>(0, 8);
                let vpp = vv.fixed_view::<3, 3>(8, 8);
                let vx = v.fixed_rows::<8>(0);
                let vp = v.fixed_rows::<3>(8);

                // z' = [A x + B u, u]: only the x block of z propagates.
                let mut qz = lz;
                qz.fixed_rows_mut::<8>(0).add_assign(a.transpose() * vx);
                let qu = lu + b.transpose() * vx + vp;
                let mut qzz = lzz;
                qzz.fixed_view_mut::<8, 8>(0, 0).add_assign(a.transpose() * vxx * a);
                let vb = vxx * b + vxp;
                let quu_raw = luu + b.transpose() * vb + vxp.transpose() * b + vpp;
                let quu = (quu_raw + quu_raw.transpose()) * 0.5 + Matrix3::identity() * (mu * reg_scale);
                let mut quz = luz;
                quz.fixed_view_mut::<3, 8>(0, 0).add_assign(vb.transpose() * a);

                let Some((k, free)) = box_qp3(&quu, &qu, &(lo - u[j]), &(hi - u[j])) else {
                    ok = false;
                    break;
                };
                let Some(gain) = free_gain(&quu, &quz, &free) else {
                    ok = false;
                    break;
                };
                ff[j] = k;
                fb[j] = gain;
                dv1 += k.dot(&qu);
                dv2 += 0.5 * k.dot(&(quu * k));
                v = qz + gain.transpose() * (quu * k) + gain.transpose() * qu + quz.transpose() * k;
                let nv = qzz + gain.transpose() * quu * gain + gain.transpose() * quz + quz.transpose() * gain;
                vv = (nv + nv.transpose()) * 0.5;
            }
            if !ok {
                mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
                if mu > 1e8 {
                    break;
                }
                continue;
            }

            // Forward line search on the true objective.
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha >= 1e-6 {
                let mut x = x0v;
                let mut prev_new = u_ref;
                let mut prev_old = u_ref;
                trial_ro.states.clear();
                trial_ro.stages.clear();
                trial_ro.states.push(x);
                let mut finite = true;
                for j in 0..n {
                    let mut dz = AugVec::zeros();
                    dz.fixed_rows_mut::<8>(0).copy_from(&(x - ro.states[j]));
                    dz.fixed_rows_mut::<3>(8).copy_from(&(prev_new - prev_old));
                    trial[j] = self.project(&(u[j] + ff[j] * alpha + fb[j] * dz));
                    let (next, st) = self.model.step_stages(&x, &trial[j], self.model.ts);
                    if !next.iter().all(|c| c.is_finite()) {
                        finite = false;
                        break;
                    }
                    trial_ro.stages.push(st);
                    trial_ro.states.push(next);
                    x = next;
                    prev_new = trial[j];
                    prev_old = u[j];
                }
                if finite {
                    let cand = self.state_cost(&trial_ro.states, refs) + w.input_cost(&trial);
                    let expected = -(alpha * dv1 + alpha * alpha * dv2);
                    if cand < obj && obj - cand >= ARMIJO * expected {
                        accepted = Some(cand);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            match accepted {
                Some(_) => {
                    let moved = u.iter().zip(&trial).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
                    std::mem::swap(&mut u, &mut trial);
                    std::mem::swap(&mut ro, &mut trial_ro);
                    obj = self.gradient_into(&ro, refs, &u, &mut g);
                    stationarity = self.projected_gradient_norm(&u, &g);
                    converged = stationarity <= self.settings.tolerance;
                    settled = converged && (moved <= 1e-10 || stationarity == 0.0);
                    observe(obj, &u);
                    mu = if mu <= 1e-6 { 0.0 } else { mu / 10.0 };
                }
                None => {
                    // No descent along the model step: stiffen it, or stop at a numerical floor.
                    if converged {
                        break;
                    }
                    mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
                    if mu > 1e8 {
                        break;
                    }
                }
            }
        }

        Ok(ActuationSolution {
            u_seq: u.iter().map(ControlInput::from_vec).collect(),
            x_pred: ro.states.iter().map(UavState::from_vec).collect(),
            objective: obj,
            iterations,
            converged,
            stationarity,
        })
    }
}

type AugVec = SVector<f64, 11>;
type AugMat = SMatrix<f64, 11, 11>;
type AugGain = SMatrix<f64, 3, 11>;

/// `Hf` with clamped rows and columns replaced by identity.
fn restrict(h: &Matrix3<f64>, free: &[bool; 3]) -> Matrix3<f64> {
    let mut m = *h;
    for i in 0..3 {
        if !free[i] {
            for c in 0..3 {
                m[(i, c)] = 0.0;
                m[(c, i)] = 0.0;
            }
            m[(i, i)] = 1.0;
        }
    }
    m
}

/// Minimise `½δᵀHδ + gᵀδ` over the box `lo ≤ δ ≤ hi` (with `lo ≤ 0 ≤ hi`) by
/// enumerating which coordinates sit on a bound. Returns the step and its free mask.
fn box_qp3(h: &Matrix3<f64>, g: &InputVec, lo: &InputVec, hi: &InputVec) -> Option<(InputVec, [bool; 3])> {
    let eval = |d: &InputVec| 0.5 * d.dot(&(h * d)) + g.dot(d);
    let within = |d: &InputVec| (0..3).all(|i| d[i] >= lo[i] - 1e-12 && d[i] <= hi[i] + 1e-12);
    let mut best: Option<(f64, InputVec, [bool; 3])> = None;
    for pattern in 0..27usize {
        // Per coordinate: 0 free, 1 at lower bound, 2 at upper bound.
        let state = [pattern % 3, (pattern / 3) % 3, pattern / 9];
        let free = [state[0] == 0, state[1] == 0, state[2] == 0];
        let mut fixed = InputVec::zeros();
        for i in 0..3 {
            fixed[i] = match state[i] {
                1 => lo[i],
                2 => hi[i],
                _ => 0.0,
            };
        }
        let mut rhs = InputVec::zeros();
        for i in 0..3 {
            rhs[i] = if free[i] { -(g[i] + (0..3).filter(|&c| !free[c]).map(|c| h[(i, c)] * fixed[c]).sum::<f64>()) } else { fixed[i] };
        }
        let Some(ch) = restrict(h, &free).cholesky() else { continue };
        let d = ch.solve(&rhs);
        if !within(&d) || !d.iter().all(|c| c.is_finite()) {
            continue;
        }
        let d = InputVec::from_fn(|i, _| d[i].clamp(lo[i], hi[i]));
        if pattern == 0 {
            return Some((d, free));
        }
        let val = eval(&d);
        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, d, free));
        }
    }
    best.map(|(_, d, f)| (d, f))
}

/// Feedback gain on the free coordinates, zero on clamped ones.
fn free_gain(quu: &Matrix3<f64>, quz: &AugGain, free: &[bool; 3]) -> Option<AugGain> {
    let ch = restrict(quu, free).cholesky()?;
    let mut rhs = -quz;
    for (i, &f) in free.iter().enumerate() {
        if !f {
            rhs.row_mut(i).fill(0.0);
        }
    }
    Some(ch.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rrt::interpolate;
    use crate::world::Point;

    fn nmpc() -> Nmpc {
        Nmpc::new(UavModel::default(), NmpcWeights::default(), SolverSettings::default())
    }

    #[test]
    fn reference_padding() {
        let pts: Vec<Point> = (0..60).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        let t = Trajectory { points: pts.clone(), spacing: 1.0, goal_index: None };
        let r = build_reference(&t, 50).unwrap();
        assert_eq!(r.len(), 50);
        for (j, x) in r.iter().enumerate() {
            assert_eq!(x[0], j as f64);
            assert!(x.rows(3, 5).iter().all(|&v| v == 0.0));
        }

        let t = Trajectory { points: pts[..3].to_vec(), spacing: 1.0, goal_index: None };
        let r = build_reference(&t, 50).unwrap();
        assert_eq!((r[0][0], r[1][0], r[2][0]), (0.0, 1.0, 2.0));
        assert!(r[3..].iter().all(|x| x[0] == 2.0));

        let t = Trajectory { points: vec![Point::new(1.0, 2.0, 3.0)], spacing: 1.0, goal_index: None };
        assert!(build_reference(&t, 50).unwrap().iter().all(|x| x[0] == 1.0 && x[2] == 3.0));

        let t = Trajectory { points: vec![], spacing: 1.0, goal_index: None };
        assert_eq!(build_reference(&t, 50), Err(NmpcError::EmptyTrajectory));
    }

    #[test]
    fn hover_instance_is_exact() {
        let s = nmpc();
        let x0 = UavState::hover_at(Point::new(2.0, 3.0, 1.5));
        let refs = vec![x0.to_vec(); 50];
        let sol = s.solve(&x0, &refs).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert!(sol.converged);
        for u in &sol.u_seq {
            assert!((u.to_vec() - ControlInput::REFERENCE.to_vec()).amax() <= 1e-9);
        }
    }

    #[test]
    fn straight_line_beats_holding_hover() {
        let s = nmpc();
        let x0 = UavState::hover_at(Point::new(1.0, 1.0, 2.0));
        let t = interpolate(&[x0.p, Point::new(16.0, 1.0, 2.0)], 0.75);
        let refs = build_reference(&t, 50).unwrap();
        let sol = s.solve(&x0, &refs).unwrap();
        let hold = s.objective(&x0, &refs, &vec![ControlInput::REFERENCE.to_vec(); 50]).unwrap();
        assert!(sol.objective < hold, "{} vs {}", sol.objective, hold);
        assert!(sol.converged, "stationarity {} after {}", sol.stationarity, sol.iterations);
    }

    #[test]
    fn prediction_replays_from_inputs() {
        let s = nmpc();
        let x0 = UavState::hover_at(Point::new(0.0, 0.0, 2.0));
        let t = interpolate(&[x0.p, Point::new(3.0, 4.0, 2.5)], 0.75);
        let sol = s.solve(&x0, &build_reference(&t, 50).unwrap()).unwrap();
        assert_eq!(sol.x_pred.len(), 51);
        assert_eq!(sol.x_pred[0], x0);
        let mut x = x0;
        for (j, u) in sol.u_seq.iter().enumerate() {
            x = s.model.step(&x, u, s.model.ts);
            assert_eq!(x, sol.x_pred[j + 1]);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(NmpcWeights::default().is_valid());
        let mut w = NmpcWeights::default();
        w.q_u[(0, 0)] = -1.0;
        assert!(!w.is_valid());
        let mut w = NmpcWeights::default();
        w.q_du[(0, 1)] = 0.5;
        assert!(!w.is_valid());
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let s = nmpc();
        let x0 = UavState::hover_at(Point::zeros());
        assert!(matches!(s.solve(&x0, &[x0.to_vec(); 3]), Err(NmpcError::HorizonMismatch { .. })));
    }
    fn random_instance(rng: &mut crate::seed::Rng) -> (UavState, Vec<StateVec>, Vec<InputVec>) {
        use rand::Rng as _;
        let mut r = |a: f64| rng.random_range(-a..=a);
        let x0 = UavState {
            p: Point::new(r(3.0), r(3.0), 2.0 + r(1.0)),
            v: Point::new(r(1.0), r(1.0), r(0.5)),
            phi: r(0.2),
            theta: r(0.2),
        };
        let end = x0.p + Point::new(r(6.0), r(6.0), r(1.0));
        let refs = build_reference(&interpolate(&[x0.p, end], 0.75), 50).unwrap();
        let u = (0..50).map(|_| InputVec::new(9.81 + r(3.0), r(0.3), r(0.3))).collect();
        (x0, refs, u)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = nmpc();
        let mut rng = crate::seed::stream(5, "nmpc-fd");
        let h = 1e-6;
        for _ in 0..10 {
            let (x0, refs, u) = random_instance(&mut rng);
            let (_, g) = s.objective_and_gradient(&x0, &refs, &u).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..u.len() {
                for c in 0..3 {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[j][c] += h;
                    um[j][c] -= h;
                    let fd = (s.objective(&x0, &refs, &up).unwrap() - s.objective(&x0, &refs, &um).unwrap()) / (2.0 * h);
                    num += (fd - g[j][c]).powi(2);
                    den += fd * fd;
                }
            }
            assert!((num / den).sqrt() < 1e-4, "relative error {}", (num / den).sqrt());
        }
    }

    #[test]
    fn descent_is_monotone_and_bounded() {
        let s = nmpc();
        let mut rng = crate::seed::stream(6, "nmpc-mono");
        for _ in 0..10 {
            let (x0, refs, _) = random_instance(&mut rng);
            let mut trace = Vec::new();
            let lo = s.model.u_min.to_vec();
            let hi = s.model.u_max.to_vec();
            let sol = s
                .solve_observed(&x0, &refs, |obj, u| {
                    assert!(u.iter().all(|v| (0..3).all(|c| v[c] >= lo[c] && v[c] <= hi[c])));
                    trace.push(obj);
                })
                .unwrap();
            assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{trace:?}");
            assert_eq!(*trace.last().unwrap(), sol.objective);
            assert!(sol.converged);
        }
    }

    #[test]
    fn weight_scaling_leaves_inputs_unchanged() {
        let base = nmpc();
        let mut rng = crate::seed::stream(7, "nmpc-scale");
        for k in [0.5, 3.0, 10.0] {
            let (x0, refs, _) = random_instance(&mut rng);
            let scaled = Nmpc::new(base.model, base.weights.scaled(k), base.settings);
            let a = base.solve(&x0, &refs).unwrap();
            let b = scaled.solve(&x0, &refs).unwrap();
            for (ua, ub) in a.u_seq.iter().zip(&b.u_seq) {
                assert!((ua.to_vec() - ub.to_vec()).amax() < 1e-6);
            }
            assert!((b.objective - k * a.objective).abs() <= 1e-6 * (1.0 + b.objective.abs()));
        }
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let s = nmpc();
        let mut x0 = UavState::hover_at(Point::zeros());
        x0.v.x = f64::NAN;
        assert_eq!(s.solve(&x0, &[UavState::hover_at(Point::zeros()).to_vec(); 50]), Err(NmpcError::NonFinite));
    }
}
