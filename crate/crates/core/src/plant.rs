//! Time-stepped crane plant.
//!
//! Joint velocities follow the commanded velocities through a first-order
//! lag whose bandwidth is randomized per episode; the discharge unit is a
//! pair of decoupled small-angle pendulums forced by the horizontal TCP
//! acceleration:
//!
//! ```text
//! L θ̈ + g (θ − θ_off) + friction · L · θ̇ = −a_tcp
//! ```
//!
//! integrated with semi-implicit Euler.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::kinematics::{KinematicChain, Pose, Vector7, N_JOINTS};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vector7,
    pub dq: Vector7,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    /// Swing about the two world-horizontal axes; `theta[0]` displaces the
    /// tip along +x, `theta[1]` along +y.
    pub theta: [f64; 2],
    pub dtheta: [f64; 2],
    /// Effective pendulum length in m.
    pub length: f64,
    /// Viscous friction in 1/s.
    pub friction: f64,
    /// Equilibrium offset from an off-centre payload (zero while detached).
    pub offset: [f64; 2],
}

impl PendulumState {
    pub fn at_rest(length: f64, friction: f64) -> Self {
        Self { theta: [0.0; 2], dtheta: [0.0; 2], length, friction, offset: [0.0; 2] }
    }

    /// E = ½L²θ̇² + ½gLθ², summed over both axes.
    pub fn energy(&self, gravity: f64) -> f64 {
        (0..2)
            .map(|i| {
                let th = self.theta[i] - self.offset[i];
                0.5 * self.length * self.length * self.dtheta[i].powi(2) + 0.5 * gravity * self.length * th * th
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadState {
    /// Pose of the container's base centre.
    pub container_pose: Pose,
    pub mass: f64,
    pub com_offset: Vector3<f64>,
    pub yaw: f64,
    pub attached: bool,
    pub ring_positions: [Vector3<f64>; 2],
    /// Container position minus discharge-unit tip, frozen at attachment.
    pub attach_offset: Vector3<f64>,
}

/// Container footprint and ring layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContainerGeometry {
    /// Width, depth, height in m.
    pub size: [f64; 3],
    /// Height of the hooking rings above the container base.
    pub ring_height: f64,
    /// Lateral distance between the two rings.
    pub ring_spacing: f64,
}

impl Default for ContainerGeometry {
    fn default() -> Self {
        Self { size: [1.6, 1.6, 1.8], ring_height: 1.8, ring_spacing: 1.0 }
    }
}

impl PayloadState {
    /// Container resting on the ground at `position` (base centre). `yaw` is
    /// the direction the hooks travel when engaging; the rings sit on the top
    /// edge of the face the hooks approach from.
    pub fn on_ground(position: Vector3<f64>, yaw: f64, mass: f64, com_offset: Vector3<f64>, geo: &ContainerGeometry) -> Self {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        let front = rot * Vector3::x();
        let side = rot * Vector3::y();
        let mid = position - front * (0.5 * geo.size[0]) + Vector3::new(0.0, 0.0, geo.ring_height);
        let half = 0.5 * geo.ring_spacing;
        Self {
            container_pose: Pose { position, orientation: rot },
            mass,
            com_offset,
            yaw,
            attached: false,
            ring_positions: [mid + side * half, mid - side * half],
            attach_offset: Vector3::zeros(),
        }
    }

    pub fn ring_midpoint(&self) -> Vector3<f64> {
        0.5 * (self.ring_positions[0] + self.ring_positions[1])
    }

    /// Horizontal unit vector the hooks travel along while engaging.
    pub fn facing(&self) -> Vector3<f64> {
        self.container_pose.orientation * Vector3::x()
    }
}

/// Joint-level actuators: first-order velocity tracking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    /// Per-joint tracking bandwidth in 1/s.
    pub gain: Vector7,
    /// Randomized multiplier on `gain`.
    pub gain_scale: f64,
    pub vel_limit: Vector7,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub dt: f64,
    pub gravity: f64,
    /// Nominal actuator bandwidth per joint, 1/s.
    pub actuator_gain: [f64; N_JOINTS],
    /// Nominal passive-joint friction, 1/s.
    pub pendulum_friction: f64,
    /// Added to the pendulum length while the container hangs from the tool.
    pub attached_length_extra: f64,
    /// Attached payload mass at which actuator bandwidth halves.
    pub load_ref_mass: f64,
    pub container: ContainerGeometry,
    /// Constant states of the discharge unit's own joints (rotation, hook).
    pub discharge_unit_joints: [f64; 2],
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            gravity: GRAVITY,
            actuator_gain: [4.0, 4.0, 6.0, 6.0, 6.0, 6.0, 8.0],
            pendulum_friction: 0.3,
            attached_length_extra: 0.9,
            load_ref_mass: 2000.0,
            container: ContainerGeometry::default(),
            discharge_unit_joints: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    /// Multiplicative band for actuator gains, passive friction and
    /// admittance gains.
    pub scale_range: [f64; 2],
    pub mass_range: [f64; 2],
    /// Half-width of the cube the payload centre of mass is jittered in.
    pub com_jitter: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self { scale_range: [0.5, 1.5], mass_range: [100.0, 700.0], com_jitter: 0.05 }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(CoreError::InvalidConfig(format!("scale_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        let [m0, m1] = self.mass_range;
        if !(m0 >= 100.0 && m0 <= m1 && m1 <= 700.0) {
            return Err(CoreError::InvalidConfig(format!("mass_range must lie within [100, 700] kg, got [{m0}, {m1}]")));
        }
        if !(self.com_jitter >= 0.0) {
            return Err(CoreError::InvalidConfig("com_jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// One draw of the domain-randomized parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledParams {
    pub mass: f64,
    pub com_offset: Vector3<f64>,
    pub actuator_scale: f64,
    pub friction_scale: f64,
    pub admittance_scale: f64,
}

impl SampledParams {
    pub fn nominal(mass: f64) -> Self {
        Self { mass, com_offset: Vector3::zeros(), actuator_scale: 1.0, friction_scale: 1.0, admittance_scale: 1.0 }
    }
}

/// Always consumes exactly one draw, so that streams stay aligned across
/// configurations that differ only in their bands.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn randomize<R: Rng + ?Sized>(config: &RandomizationConfig, rng: &mut R) -> SampledParams {
    let mass = uniform(rng, config.mass_range);
    let j = config.com_jitter;
    let com_offset = Vector3::new(uniform(rng, [-j, j]), uniform(rng, [-j, j]), uniform(rng, [-j, j]));
    SampledParams {
        mass,
        com_offset,
        actuator_scale: uniform(rng, config.scale_range),
        friction_scale: uniform(rng, config.scale_range),
        admittance_scale: uniform(rng, config.scale_range),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub joints: JointState,
    pub pendulum: PendulumState,
    pub payload: PayloadState,
    pub tcp_pose: Pose,
    pub tcp_vel: Vector3<f64>,
    pub tcp_acc: Vector3<f64>,
    /// Discharge-unit tip position.
    pub tip: Vector3<f64>,
    /// Rotation and hook joints of the discharge unit (held fixed).
    pub du_joints: [f64; 2],
    pub step_index: u64,
    pub dt: f64,
}

impl SimState {
    pub fn tcp(&self) -> Vector3<f64> {
        self.tcp_pose.position
    }

    pub fn container_position(&self) -> Vector3<f64> {
        self.payload.container_pose.position
    }

    fn is_finite(&self) -> bool {
        self.joints.q.iter().chain(self.joints.dq.iter()).all(|v| v.is_finite())
            && self.pendulum.theta.iter().chain(&self.pendulum.dtheta).all(|v| v.is_finite())
            && self.tcp_vel.iter().chain(self.tcp_acc.iter()).all(|v| v.is_finite())
    }
}

/// Angle between the TCP→tip vector and gravity, in [0, π].
pub fn swing_angle(state: &SimState) -> Result<f64> {
    angle_to_gravity(&(state.tip - state.tcp()))
}

pub fn angle_to_gravity(v: &Vector3<f64>) -> Result<f64> {
    let n = v.norm();
    if !(n > 0.0) {
        return Err(CoreError::ZeroLengthSwing);
    }
    let g = Vector3::new(0.0, 0.0, -1.0);
    Ok((v.dot(&g) / n).clamp(-1.0, 1.0).acos())
}

/// The crane plant for one episode: chain plus per-episode parameters.
#[derive(Debug, Clone)]
pub struct Plant {
    pub chain: KinematicChain,
    pub config: PlantConfig,
    pub actuator: ActuatorParams,
    pub rod_length: f64,
}

impl Plant {
    pub fn new(chain: KinematicChain, config: PlantConfig, actuator_scale: f64) -> Self {
        let actuator = ActuatorParams {
            gain: Vector7::from_column_slice(&config.actuator_gain),
            gain_scale: actuator_scale,
            vel_limit: chain.vel_limits(),
        };
        let rod_length = chain.rod_length();
        Self { chain, config, actuator, rod_length }
    }

    /// A state at rest at joint configuration `q`.
    pub fn initial_state(&self, q: Vector7, payload: PayloadState, friction: f64) -> Result<SimState> {
        let q = self.chain.clamp_positions(&q);
        let tcp_pose = self.chain.forward_kinematics(&q)?;
        let pendulum = PendulumState::at_rest(self.rod_length, friction);
        let tip = self.chain.discharge_tip(&tcp_pose.position, pendulum.theta);
        Ok(SimState {
            joints: JointState { q, dq: Vector7::zeros() },
            pendulum,
            payload,
            tcp_pose,
            tcp_vel: Vector3::zeros(),
            tcp_acc: Vector3::zeros(),
            tip,
            du_joints: self.config.discharge_unit_joints,
            step_index: 0,
            dt: self.config.dt,
        })
    }

    fn bandwidth(&self, payload: &PayloadState) -> Vector7 {
        let load = if payload.attached { 1.0 + payload.mass / self.config.load_ref_mass } else { 1.0 };
        self.actuator.gain * (self.actuator.gain_scale / load)
    }

    /// Advance the plant by one step under joint-velocity command `u`.
    pub fn step(&self, state: &SimState, u: &Vector7) -> Result<SimState> {
        if !u.iter().all(|v| v.is_finite()) {
            return Err(CoreError::SimulationDiverged);
        }
        let dt = state.dt;
        let limits = &self.actuator.vel_limit;
        let k = self.bandwidth(&state.payload);
        let mut q = state.joints.q;
        let mut dq = state.joints.dq;
        for i in 0..N_JOINTS {
            let cmd = u[i].clamp(-limits[i], limits[i]);
            let v = (dq[i] + dt * k[i] * (cmd - dq[i])).clamp(-limits[i], limits[i]);
            let spec = &self.chain.joints[i];
            let raw = q[i] + dt * v;
            q[i] = spec.clamp(raw);
            // stop at the limit instead of winding against it
            dq[i] = if q[i] != raw { 0.0 } else { v };
        }

        let tcp_pose = self.chain.forward_kinematics(&q)?;
        let tcp_vel = self.chain.positional_jacobian(&q)? * dq;
        let tcp_acc = (tcp_vel - state.tcp_vel) / dt;

        let mut pendulum = state.pendulum.clone();
        let g = self.config.gravity;
        let l = pendulum.length;
        for (axis, acc) in [tcp_acc.x, tcp_acc.y].into_iter().enumerate() {
            let th = pendulum.theta[axis] - pendulum.offset[axis];
            let ddth = (-acc - g * th - pendulum.friction * l * pendulum.dtheta[axis]) / l;
            pendulum.dtheta[axis] += dt * ddth;
            pendulum.theta[axis] += dt * pendulum.dtheta[axis];
        }

        let tip = self.chain.discharge_tip(&tcp_pose.position, pendulum.theta);
        let mut payload = state.payload.clone();
        if payload.attached {
            payload.container_pose.position = tip + payload.attach_offset;
        }

        let next = SimState {
            joints: JointState { q, dq },
            pendulum,
            payload,
            tcp_pose,
            tcp_vel,
            tcp_acc,
            tip,
            du_joints: state.du_joints,
            step_index: state.step_index + 1,
            dt,
        };
        if next.is_finite() && next.pendulum.theta.iter().all(|t| t.abs() < std::f64::consts::FRAC_PI_2) {
            Ok(next)
        } else {
            Err(CoreError::SimulationDiverged)
        }
    }

    /// Hook engagement at the end of the alignment segment. The container is
    /// picked up iff the TCP is within `eps_hook` of the lift waypoint and the
    /// swing angle is at most `theta_hook` (both bounds inclusive).
    pub fn try_attach(&self, state: &SimState, lift_waypoint: &Vector3<f64>, eps_hook: f64, theta_hook: f64) -> Result<SimState> {
        let mut next = state.clone();
        if state.payload.attached {
            return Ok(next);
        }
        let err = (state.tcp() - lift_waypoint).norm();
        let swing = swing_angle(state)?;
        if err <= eps_hook && swing <= theta_hook {
            let payload = &mut next.payload;
            payload.attached = true;
            payload.attach_offset = payload.container_pose.position - state.tip;
            let p = &mut next.pendulum;
            p.length = self.rod_length + self.config.attached_length_extra;
            let com = payload.com_offset;
            p.offset = [(com.x / p.length).atan(), (com.y / p.length).atan()];
        }
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_plant() -> (Plant, SimState) {
        let chain = KinematicChain::default();
        let plant = Plant::new(chain.clone(), PlantConfig::default(), 1.0);
        let payload = PayloadState::on_ground(Vector3::new(0.0, 7.0, 0.0), 0.0, 300.0, Vector3::zeros(), &ContainerGeometry::default());
        let state = plant.initial_state(chain.comfort_posture(), payload, 0.3).unwrap();
        (plant, state)
    }

    #[test]
    fn zero_command_is_a_fixed_point() {
        let (plant, state) = test_plant();
        let next = plant.step(&state, &Vector7::zeros()).unwrap();
        let mut expect = state.clone();
        expect.step_index += 1;
        assert_eq!(next, expect);
    }

    #[test]
    fn velocity_limits_are_respected() {
        let (plant, mut state) = test_plant();
        let u = Vector7::repeat(100.0);
        for _ in 0..300 {
            state = plant.step(&state, &u).unwrap();
            for i in 0..N_JOINTS {
                assert!(state.joints.dq[i].abs() <= plant.actuator.vel_limit[i]);
                let lim = plant.chain.joints[i].pos_limits;
                assert!(state.joints.q[i] >= lim[0] && state.joints.q[i] <= lim[1]);
            }
        }
    }

    #[test]
    fn actuator_lag_is_first_order() {
        let (plant, mut state) = test_plant();
        let mut u = Vector7::zeros();
        u[0] = 0.1;
        state = plant.step(&state, &u).unwrap();
        let k = plant.actuator.gain[0];
        assert_relative_eq!(state.joints.dq[0], 0.01 * k * 0.1, epsilon = 1e-15);
    }

    fn free_pendulum(length: f64, friction: f64, theta0: f64) -> (Plant, SimState) {
        let (plant, mut state) = test_plant();
        state.pendulum = PendulumState::at_rest(length, friction);
        state.pendulum.theta[0] = theta0;
        (plant, state)
    }

    #[test]
    fn stationary_tcp_swings_at_natural_period() {
        // L = g gives ω = 1 rad/s, period 2π.
        let (plant, mut state) = free_pendulum(9.81, 0.0, 0.05);
        let mut crossings = Vec::new();
        let mut prev = state.pendulum.theta[0];
        let mut t = 0.0;
        while crossings.len() < 21 {
            state = plant.step(&state, &Vector7::zeros()).unwrap();
            t += 0.01;
            let th = state.pendulum.theta[0];
            if prev.signum() != th.signum() {
                // linear interpolation of the zero crossing
                crossings.push(t - 0.01 * th / (th - prev));
            }
            prev = th;
        }
        let period = 2.0 * (crossings[20] - crossings[0]) / 20.0;
        let expect = 2.0 * std::f64::consts::PI;
        assert!((period - expect).abs() / expect < 0.01, "period {period}");
    }

    #[test]
    fn damped_swing_energy_is_non_increasing() {
        let (plant, mut state) = free_pendulum(1.5, 0.3, 0.1);
        state.pendulum.theta[1] = -0.05;
        let mut e = state.pendulum.energy(GRAVITY);
        for _ in 0..2000 {
            state = plant.step(&state, &Vector7::zeros()).unwrap();
            let e2 = state.pendulum.energy(GRAVITY);
            assert!(e2 <= e + 1e-15, "energy rose from {e} to {e2}");
            e = e2;
        }
    }

    #[test]
    fn damped_swing_peaks_decrease() {
        let (plant, mut state) = free_pendulum(1.5, 0.2, 0.2);
        let mut peaks = Vec::new();
        let mut prev_dth = state.pendulum.dtheta[0];
        for _ in 0..3000 {
            state = plant.step(&state, &Vector7::zeros()).unwrap();
            let dth = state.pendulum.dtheta[0];
            if prev_dth.signum() != dth.signum() {
                peaks.push(state.pendulum.theta[0].abs());
            }
            prev_dth = dth;
        }
        assert!(peaks.len() > 5);
        assert!(peaks.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn swing_angle_cases() {
        let (plant, mut state) = test_plant();
        assert_eq!(swing_angle(&state).unwrap(), 0.0);

        state.pendulum.theta = [0.1, 0.0];
        state.tip = plant.chain.discharge_tip(&state.tcp(), state.pendulum.theta);
        assert!((swing_angle(&state).unwrap() - 0.1).abs() < 1e-3);

        state.tip = state.tcp() + Vector3::new(1.0, 1.0, 0.0);
        assert_relative_eq!(swing_angle(&state).unwrap(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);

        state.tip = state.tcp();
        assert!(matches!(swing_angle(&state), Err(CoreError::ZeroLengthSwing)));
    }

    #[test]
    fn attach_tolerances() {
        let (plant, state) = test_plant();
        let p = state.tcp();
        let eps = 0.05;
        let theta_hook = 5f64.to_radians();
        assert!(plant.try_attach(&state, &p, eps, theta_hook).unwrap().payload.attached);

        let off = p + Vector3::new(2.0 * eps, 0.0, 0.0);
        assert!(!plant.try_attach(&state, &off, eps, theta_hook).unwrap().payload.attached);

        // both tolerances met with equality
        let mut edge = state.clone();
        edge.tip = edge.tcp() + 1.5 * Vector3::new(theta_hook.sin(), 0.0, -theta_hook.cos());
        let theta = swing_angle(&edge).unwrap();
        let at_eps = p + Vector3::new(0.0, eps, 0.0);
        let err = (edge.tcp() - at_eps).norm();
        assert!(plant.try_attach(&edge, &at_eps, err, theta).unwrap().payload.attached);
    }

    #[test]
    fn attached_container_follows_tip_rigidly() {
        let (plant, state) = test_plant();
        let mut state = plant.try_attach(&state, &state.tcp(), 0.05, 0.1).unwrap();
        assert!(state.payload.attached);
        assert_relative_eq!(state.pendulum.length, 2.4);
        let dz = state.container_position().z - state.tip.z;
        let mut u = Vector7::zeros();
        u[1] = 0.1;
        u[0] = 0.05;
        for _ in 0..500 {
            state = plant.step(&state, &u).unwrap();
            assert!((state.container_position().z - state.tip.z - dz).abs() < 1e-9);
        }
    }

    #[test]
    fn randomize_degenerate_band_is_nominal() {
        let cfg = RandomizationConfig { scale_range: [1.0, 1.0], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = randomize(&cfg, &mut rng);
            assert_eq!((s.actuator_scale, s.friction_scale, s.admittance_scale), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn randomize_is_seeded() {
        let cfg = RandomizationConfig::default();
        let a = randomize(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = randomize(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn randomize_band_mean_and_mass_bounds() {
        let cfg = RandomizationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = randomize(&cfg, &mut rng);
            for v in [s.actuator_scale, s.friction_scale, s.admittance_scale] {
                assert!((0.5..=1.5).contains(&v));
            }
            assert!((100.0..=700.0).contains(&s.mass));
            assert!(s.com_offset.amax() <= cfg.com_jitter);
            sum += s.actuator_scale;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn stepping_is_deterministic() {
        let (plant, s0) = test_plant();
        let run = || {
            let mut s = s0.clone();
            for k in 0..200 {
                let u = Vector7::from_fn(|i, _| ((k * (i + 1)) as f64 * 0.013).sin() * 0.3);
                s = plant.step(&s, &u).unwrap();
            }
            s
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_command_diverges() {
        let (plant, state) = test_plant();
        let mut u = Vector7::zeros();
        u[2] = f64::INFINITY;
        assert!(matches!(plant.step(&state, &u), Err(CoreError::SimulationDiverged)));
    }
}
