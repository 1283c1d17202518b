//! Nominal Cartesian controller.
//!
//! Per control step:
//! 1. tracking errors against the active reference point, with a clamped
//!    error integral;
//! 2. a pendulum-aware acceleration that places the swing poles at
//!    (ζ, ω_n), applied to low-pass filtered swing estimates;
//! 3. a virtual force combining both, fed through an admittance model
//!    `M v̇ + D v + K (x_d − x_ref) = F` to obtain a saturated desired TCP
//!    velocity;
//! 4. damped least-squares IK with a nullspace pull towards a comfort
//!    posture.

use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::kinematics::{Jacobian, KinematicChain, Vector7, N_JOINTS};
use crate::plant::{SimState, GRAVITY};

/// Per-axis gains; each `[f64; 3]` is the diagonal of a 3×3 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmittanceGains {
    pub kp: [f64; 3],
    pub kv: [f64; 3],
    pub ki: [f64; 3],
    pub md: [f64; 3],
    pub dd: [f64; 3],
    pub kd: [f64; 3],
    pub v_max: f64,
    /// Anti-windup bound on each integral component.
    pub ei_max: f64,
    /// Randomized multiplier on the tracking gains (Kp, Kv, Ki).
    #[serde(default = "one")]
    pub gain_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for AdmittanceGains {
    fn default() -> Self {
        Self {
            kp: [80.0; 3],
            kv: [40.0; 3],
            ki: [5.0; 3],
            md: [10.0; 3],
            dd: [60.0; 3],
            kd: [20.0; 3],
            v_max: 1.0,
            ei_max: 0.5,
            gain_scale: 1.0,
        }
    }
}

impl AdmittanceGains {
    pub fn validate(&self) -> Result<()> {
        let diag_ok = [self.kp, self.kv, self.md, self.dd, self.kd].iter().flatten().all(|&v| v > 0.0)
            && self.ki.iter().all(|&v| v >= 0.0);
        if !diag_ok || !(self.v_max > 0.0) || !(self.ei_max >= 0.0) || !(self.gain_scale > 0.0) {
            return Err(CoreError::InvalidConfig("admittance gains must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceState {
    pub x_d: Vector3<f64>,
    pub v_d: Vector3<f64>,
    pub e_i: Vector3<f64>,
}

impl AdmittanceState {
    pub fn at(x: Vector3<f64>) -> Self {
        Self { x_d: x, v_d: Vector3::zeros(), e_i: Vector3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AntiSwingParams {
    pub zeta: f64,
    pub omega_n: f64,
    pub w_s: f64,
    /// Low-pass coefficient in (0, 1]; 1 passes measurements through.
    pub alpha: f64,
    #[serde(default)]
    pub theta_hat: [f64; 2],
    #[serde(default)]
    pub dtheta_hat: [f64; 2],
}

impl Default for AntiSwingParams {
    fn default() -> Self {
        Self { zeta: 0.7, omega_n: 3.0, w_s: 1.0, alpha: 0.2, theta_hat: [0.0; 2], dtheta_hat: [0.0; 2] }
    }
}

impl AntiSwingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.zeta > 0.0) || !(self.omega_n > 0.0) {
            return Err(CoreError::InvalidConfig("anti-swing requires 0 < alpha <= 1, zeta > 0, omega_n > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    pub lambda_d: f64,
    pub k_ns: f64,
    pub q_c: Vector7,
}

pub fn tracking_errors(
    x: &Vector3<f64>,
    v: &Vector3<f64>,
    x_ref: &Vector3<f64>,
    v_ref: &Vector3<f64>,
    e_i_prev: &Vector3<f64>,
    dt: f64,
    e_i_max: f64,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let e_p = x_ref - x;
    let e_v = v_ref - v;
    let e_i = (e_i_prev + dt * e_p).map(|e| e.clamp(-e_i_max, e_i_max));
    (e_p, e_v, e_i)
}

pub fn virtual_force(
    e_p: &Vector3<f64>,
    e_v: &Vector3<f64>,
    e_i: &Vector3<f64>,
    a_xy: &Vector3<f64>,
    gains: &AdmittanceGains,
) -> Vector3<f64> {
    let d = |g: [f64; 3]| Matrix3::from_diagonal(&Vector3::from(g));
    (d(gains.kp) * e_p + d(gains.kv) * e_v + d(gains.ki) * e_i) * gains.gain_scale + d(gains.md) * a_xy
}

/// One explicit step of the admittance model with per-axis saturation of
/// the desired velocity.
pub fn integrate_admittance(
    state: &AdmittanceState,
    f_cmd: &Vector3<f64>,
    x_ref: &Vector3<f64>,
    dt: f64,
    gains: &AdmittanceGains,
) -> AdmittanceState {
    let mut next = *state;
    for i in 0..3 {
        let acc = (f_cmd[i] - gains.dd[i] * state.v_d[i] - gains.kd[i] * (state.x_d[i] - x_ref[i])) / gains.md[i];
        next.v_d[i] = (state.v_d[i] + dt * acc).clamp(-gains.v_max, gains.v_max);
        next.x_d[i] = state.x_d[i] + dt * next.v_d[i];
    }
    next
}

/// Feedback gains placing the closed-loop swing poles at (ζ, ω_n):
/// `k_θ = L ω_n² − g`, `k_ω = 2 ζ L ω_n`.
pub fn anti_swing_gains(length: f64, zeta: f64, omega_n: f64) -> Result<(f64, f64)> {
    if !(length > 0.0) {
        return Err(CoreError::InvalidLength(length));
    }
    Ok((length * omega_n * omega_n - GRAVITY, 2.0 * zeta * length * omega_n))
}

/// Updates the filtered swing estimates, then returns the horizontal
/// anti-swing acceleration (z component zero).
pub fn anti_swing_accel(params: &mut AntiSwingParams, theta: [f64; 2], dtheta: [f64; 2], length: f64) -> Result<Vector3<f64>> {
    let (k_theta, k_omega) = anti_swing_gains(length, params.zeta, params.omega_n)?;
    let a = params.alpha;
    for i in 0..2 {
        params.theta_hat[i] = (1.0 - a) * params.theta_hat[i] + a * theta[i];
        params.dtheta_hat[i] = (1.0 - a) * params.dtheta_hat[i] + a * dtheta[i];
    }
    let axis = |i: usize| params.w_s * (k_theta * params.theta_hat[i] + k_omega * params.dtheta_hat[i]);
    Ok(Vector3::new(axis(0), axis(1), 0.0))
}

/// Damped pseudo-inverse `Jᵀ (J Jᵀ + λ² I)⁻¹`.
pub fn damped_pseudo_inverse(jac: &Jacobian, lambda_d: f64) -> Result<SMatrix<f64, N_JOINTS, 3>> {
    let m = jac * jac.transpose() + Matrix3::identity() * (lambda_d * lambda_d);
    let chol = m.cholesky().ok_or(CoreError::SingularIk)?;
    let l = chol.l();
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    if (0..3).any(|i| l[(i, i)] * l[(i, i)] < 1e-12 * scale) {
        return Err(CoreError::SingularIk);
    }
    Ok(jac.transpose() * chol.inverse())
}

/// `u = J⁺_λ v_d + (I − J⁺_λ J) k_ns (q_c − q)`, clamped per joint to
/// `vel_limits`.
pub fn dls_ik(jac: &Jacobian, v_d: &Vector3<f64>, params: &IkParams, q: &Vector7, vel_limits: &Vector7) -> Result<Vector7> {
    if !jac.iter().all(|v| v.is_finite()) {
        return Err(CoreError::InvalidJointState);
    }
    let pinv = damped_pseudo_inverse(jac, params.lambda_d)?;
    let null = SMatrix::<f64, N_JOINTS, N_JOINTS>::identity() - pinv * jac;
    let u = pinv * v_d + null * ((params.q_c - q) * params.k_ns);
    Ok(u.zip_map(vel_limits, |u, lim| u.clamp(-lim, lim)))
}

/// Controller configuration as it appears in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub admittance: AdmittanceGains,
    pub anti_swing: AntiSwingParams,
    pub lambda_d: f64,
    pub k_ns: f64,
    /// Comfort posture; mid-range of the joint limits when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_c: Option<[f64; N_JOINTS]>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            admittance: AdmittanceGains::default(),
            anti_swing: AntiSwingParams::default(),
            lambda_d: 0.05,
            k_ns: 0.5,
            q_c: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.admittance.validate()?;
        self.anti_swing.validate()?;
        if !(self.lambda_d >= 0.0) || !(self.k_ns >= 0.0) {
            return Err(CoreError::InvalidConfig("lambda_d and k_ns must be non-negative".into()));
        }
        Ok(())
    }
}

/// A reference point handed to the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Per-episode mutable controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalController {
    pub gains: AdmittanceGains,
    pub anti_swing: AntiSwingParams,
    pub ik: IkParams,
    pub admittance: AdmittanceState,
    theta_prev: Option<[f64; 2]>,
}

impl NominalController {
    pub fn new(config: &ControllerConfig, chain: &KinematicChain, gain_scale: f64, start_tcp: Vector3<f64>) -> Self {
        let mut gains = config.admittance.clone();
        gains.gain_scale *= gain_scale;
        let q_c = config.q_c.map(|q| Vector7::from_column_slice(&q)).unwrap_or_else(|| chain.comfort_posture());
        Self {
            gains,
            anti_swing: AntiSwingParams { theta_hat: [0.0; 2], dtheta_hat: [0.0; 2], ..config.anti_swing.clone() },
            ik: IkParams { lambda_d: config.lambda_d, k_ns: config.k_ns, q_c },
            admittance: AdmittanceState::at(start_tcp),
            theta_prev: None,
        }
    }

    /// Swing rate from successive angle measurements.
    fn swing_rate(&mut self, theta: [f64; 2], dt: f64) -> [f64; 2] {
        let prev = self.theta_prev.replace(theta).unwrap_or(theta);
        [(theta[0] - prev[0]) / dt, (theta[1] - prev[1]) / dt]
    }

    /// Joint-velocity command for the current plant state.
    pub fn act(&mut self, chain: &KinematicChain, state: &SimState, reference: &ReferencePoint) -> Result<Vector7> {
        let dt = state.dt;
        let (e_p, e_v, e_i) = tracking_errors(
            &state.tcp(),
            &state.tcp_vel,
            &reference.position,
            &reference.velocity,
            &self.admittance.e_i,
            dt,
            self.gains.ei_max,
        );
        let theta = state.pendulum.theta;
        let dtheta = self.swing_rate(theta, dt);
        let a_xy = anti_swing_accel(&mut self.anti_swing, theta, dtheta, state.pendulum.length)?;
        let force = virtual_force(&e_p, &e_v, &e_i, &a_xy, &self.gains);
        let mut next = integrate_admittance(&self.admittance, &force, &reference.position, dt, &self.gains);
        next.e_i = e_i;
        self.admittance = next;
        let jac = chain.positional_jacobian(&state.joints.q)?;
        dls_ik(&jac, &self.admittance.v_d, &self.ik, &state.joints.q, &chain.vel_limits())
    }
}
