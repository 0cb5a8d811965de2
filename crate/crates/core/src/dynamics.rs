//! Near-hover UAV model with first-order attitude response.
//!
//! State `[p, v, φ, θ]`, input `[T, θ_ref, φ_ref]`:
//!
//! ```text
//! ṗ = v
//! v̇ = T·[cosφ·sinθ, −sinφ, cosφ·cosθ] − [0, 0, g] − diag(A)·v
//! φ̇ = (K_φ·φ_ref − φ) / τ_φ
//! θ̇ = (K_θ·θ_ref − θ) / τ_θ
//! ```
//!
//! Discretised with one explicit RK4 step per sampling interval. There is no yaw.

use nalgebra::{SMatrix, SVector, Vector3};

pub const GRAVITY: f64 = 9.81;

pub type StateVec = SVector<f64, 8>;
pub type InputVec = Vector3<f64>;
pub type StateMat = SMatrix<f64, 8, 8>;
pub type InputMat = SMatrix<f64, 8, 3>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UavState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub phi: f64,
    pub theta: f64,
}

impl UavState {
    pub fn hover_at(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros(), phi: 0.0, theta: 0.0 }
    }

    pub fn to_vec(&self) -> StateVec {
        StateVec::from_column_slice(&[self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z, self.phi, self.theta])
    }

    pub fn from_vec(x: &StateVec) -> Self {
        Self { p: Vector3::new(x[0], x[1], x[2]), v: Vector3::new(x[3], x[4], x[5]), phi: x[6], theta: x[7] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput {
    /// Mass-normalised thrust, m/s².
    pub thrust: f64,
    pub theta_ref: f64,
    pub phi_ref: f64,
}

impl ControlInput {
    /// Hover input.
    pub const REFERENCE: ControlInput = ControlInput { thrust: GRAVITY, theta_ref: 0.0, phi_ref: 0.0 };

    pub fn to_vec(&self) -> InputVec {
        InputVec::new(self.thrust, self.theta_ref, self.phi_ref)
    }

    pub fn from_vec(u: &InputVec) -> Self {
        Self { thrust: u[0], theta_ref: u[1], phi_ref: u[2] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UavModel {
    /// Linear drag per axis, 1/s.
    pub drag: Vector3<f64>,
    pub tau_phi: f64,
    pub tau_theta: f64,
    pub gain_phi: f64,
    pub gain_theta: f64,
    /// Sampling time, s.
    pub ts: f64,
    pub u_min: ControlInput,
    pub u_max: ControlInput,
}

impl Default for UavModel {
    fn default() -> Self {
        Self {
            drag: Vector3::new(0.1, 0.1, 0.2),
            tau_phi: 0.5,
            tau_theta: 0.5,
            gain_phi: 1.0,
            gain_theta: 1.0,
            ts: 0.5,
            u_min: ControlInput { thrust: 5.0, theta_ref: -0.35, phi_ref: -0.35 },
            u_max: ControlInput { thrust: 15.0, theta_ref: 0.35, phi_ref: 0.35 },
        }
    }
}

/// RK4 stage evaluation points of one step, kept for the adjoint pass.
#[derive(Clone, Copy, Debug)]
pub struct Stages {
    pub y: [StateVec; 4],
}

impl UavModel {
    #[inline]
    pub fn derivative(&self, x: &StateVec, u: &InputVec) -> StateVec {
        let (sphi, cphi) = x[6].sin_cos();
        let (sth, cth) = x[7].sin_cos();
        let t = u[0];
        let mut dx = StateVec::zeros();
        dx[0] = x[3];
        dx[1] = x[4];
        dx[2] = x[5];
        dx[3] = t * cphi * sth - self.drag[0] * x[3];
        dx[4] = -t * sphi - self.drag[1] * x[4];
        dx[5] = t * cphi * cth - GRAVITY - self.drag[2] * x[5];
        dx[6] = (self.gain_phi * u[2] - x[6]) / self.tau_phi;
        dx[7] = (self.gain_theta * u[1] - x[7]) / self.tau_theta;
        dx
    }

    /// One RK4 step of length `ts`.
    pub fn step_vec(&self, x: &StateVec, u: &InputVec, ts: f64) -> StateVec {
        self.step_stages(x, u, ts).0
    }

    pub fn step_stages(&self, x: &StateVec, u: &InputVec, ts: f64) -> (StateVec, Stages) {
        let y1 = *x;
        let k1 = self.derivative(&y1, u);
        let y2 = x + k1 * (ts / 2.0);
        let k2 = self.derivative(&y2, u);
        let y3 = x + k2 * (ts / 2.0);
        let k3 = self.derivative(&y3, u);
        let y4 = x + k3 * ts;
        let k4 = self.derivative(&y4, u);
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0);
        (next, Stages { y: [y1, y2, y3, y4] })
    }

    pub fn step(&self, x: &UavState, u: &ControlInput, ts: f64) -> UavState {
        UavState::from_vec(&self.step_vec(&x.to_vec(), &u.to_vec(), ts))
    }

    /// Transposed Jacobian products of the continuous dynamics at `x`:
    /// returns `(f_xᵀ·μ, f_uᵀ·μ)`.
    #[inline]
    fn derivative_vjp(&self, x: &StateVec, u: &InputVec, mu: &StateVec) -> (StateVec, InputVec) {
        let (sphi, cphi) = x[6].sin_cos();
        let (sth, cth) = x[7].sin_cos();
        let t = u[0];
        let mut gx = StateVec::zeros();
        // ṗ = v
        gx[3] = mu[0] - self.drag[0] * mu[3];
        gx[4] = mu[1] - self.drag[1] * mu[4];
        gx[5] = mu[2] - self.drag[2] * mu[5];
        // ∂v̇/∂φ and ∂v̇/∂θ
        gx[6] = t * (-sphi * sth * mu[3] - cphi * mu[4] - sphi * cth * mu[5]) - mu[6] / self.tau_phi;
        gx[7] = t * (cphi * cth * mu[3] - cphi * sth * mu[5]) - mu[7] / self.tau_theta;
        let gu = InputVec::new(
            cphi * sth * mu[3] - sphi * mu[4] + cphi * cth * mu[5],
            self.gain_theta / self.tau_theta * mu[7],
            self.gain_phi / self.tau_phi * mu[6],
        );
        (gx, gu)
    }

    /// Reverse-mode sensitivity of one RK4 step: given `λ = ∂J/∂x_next`, returns
    /// `(∂J/∂x, ∂J/∂u)` through this step.
    pub fn step_vjp(&self, stages: &Stages, u: &InputVec, ts: f64, lambda: &StateVec) -> (StateVec, InputVec) {
        let [y1, y2, y3, y4] = &stages.y;
        let mut gx = *lambda;
        let mut gu = InputVec::zeros();
        let k4_bar = lambda * (ts / 6.0);
        let mut k3_bar = lambda * (ts / 3.0);
        let mut k2_bar = lambda * (ts / 3.0);
        let mut k1_bar = lambda * (ts / 6.0);

        let (y4_bar, u4) = self.derivative_vjp(y4, u, &k4_bar);
        gx += y4_bar;
        gu += u4;
        k3_bar += y4_bar * ts;

        let (y3_bar, u3) = self.derivative_vjp(y3, u, &k3_bar);
        gx += y3_bar;
        gu += u3;
        k2_bar += y3_bar * (ts / 2.0);

        let (y2_bar, u2) = self.derivative_vjp(y2, u, &k2_bar);
        gx += y2_bar;
        gu += u2;
        k1_bar += y2_bar * (ts / 2.0);

        let (y1_bar, u1) = self.derivative_vjp(y1, u, &k1_bar);
        gx += y1_bar;
        gu += u1;
        (gx, gu)
    }

    /// Continuous Jacobians `(∂f/∂x, ∂f/∂u)` at `(x, u)`.
    fn derivative_jacobians(&self, x: &StateVec, u: &InputVec) -> (StateMat, InputMat) {
        let (sphi, cphi) = x[6].sin_cos();
        let (sth, cth) = x[7].sin_cos();
        let t = u[0];
        let mut fx = StateMat::zeros();
        for ax in 0..3 {
            fx[(ax, 3 + ax)] = 1.0;
            fx[(3 + ax, 3 + ax)] = -self.drag[ax];
        }
        fx[(3, 6)] = -t * sphi * sth;
        fx[(4, 6)] = -t * cphi;
        fx[(5, 6)] = -t * sphi * cth;
        fx[(3, 7)] = t * cphi * cth;
        fx[(5, 7)] = -t * cphi * sth;
        fx[(6, 6)] = -1.0 / self.tau_phi;
        fx[(7, 7)] = -1.0 / self.tau_theta;
        let mut fu = InputMat::zeros();
        fu[(3, 0)] = cphi * sth;
        fu[(4, 0)] = -sphi;
        fu[(5, 0)] = cphi * cth;
        fu[(7, 1)] = self.gain_theta / self.tau_theta;
        fu[(6, 2)] = self.gain_phi / self.tau_phi;
        (fx, fu)
    }

    /// Jacobians `(∂x_next/∂x, ∂x_next/∂u)` of one RK4 step, from its stage points.
    pub fn step_jacobians(&self, stages: &Stages, u: &InputVec, ts: f64) -> (StateMat, InputMat) {
        let eye = StateMat::identity();
        let [y1, y2, y3, y4] = &stages.y;
        let (f1, g1) = self.derivative_jacobians(y1, u);
        let (f2, g2) = self.derivative_jacobians(y2, u);
        let (f3, g3) = self.derivative_jacobians(y3, u);
        let (f4, g4) = self.derivative_jacobians(y4, u);
        let k1x = f1;
        let k1u = g1;
        let k2x = f2 * (eye + k1x * (ts / 2.0));
        let k2u = f2 * k1u * (ts / 2.0) + g2;
        let k3x = f3 * (eye + k2x * (ts / 2.0));
        let k3u = f3 * k2u * (ts / 2.0) + g3;
        let k4x = f4 * (eye + k3x * ts);
        let k4u = f4 * k3u * ts + g4;
        let a = eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (ts / 6.0);
        let b = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (ts / 6.0);
        (a, b)
    }

    pub fn clamp(&self, u: &InputVec) -> InputVec {
        let lo = self.u_min.to_vec();
        let hi = self.u_max.to_vec();
        InputVec::new(u[0].clamp(lo[0], hi[0]), u[1].clamp(lo[1], hi[1]), u[2].clamp(lo[2], hi[2]))
    }
}
