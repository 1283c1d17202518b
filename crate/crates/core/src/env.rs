//! The lifting task as a learning environment.
//!
//! Each step the nominal controller tracks the active control point; the
//! residual action is added on top while the active point belongs to the
//! alignment segment and ignored elsewhere.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{damped_pseudo_inverse, ControllerConfig, NominalController, ReferencePoint};
use crate::error::{CoreError, Result};
use crate::kinematics::{CraneGeometry, KinematicChain, Vector7, N_JOINTS};
use crate::log::{EpisodeHeader, EpisodeLog, EpisodeSummary, LogRecord, StepRecord};
use crate::plant::{
    angle_to_gravity, randomize, swing_angle, uniform, PayloadState, Plant, PlantConfig, RandomizationConfig, SampledParams, SimState,
};
use crate::trajectory::{trajectory_from_poses, tube_delta, LiftWaypoints, Segment, TrajectoryConfig, TrajectorySpec};

pub const FRAME_DIM: usize = N_JOINTS * 2 + 2 * 2 + 3;
pub const HISTORY: usize = 3;
pub const OBS_DIM: usize = HISTORY * FRAME_DIM + 1 + 2 * N_JOINTS;
pub const ACT_DIM: usize = N_JOINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    #[default]
    Additive,
    Blend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationEvent {
    None,
    DistanceExceeded,
    TubeViolations,
    TiltExceeded,
    Horizon,
    SuccessEnd,
    /// The plant state became non-finite or the swing left the modelled range.
    Diverged,
}

impl TerminationEvent {
    pub fn is_terminal(self) -> bool {
        self != TerminationEvent::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weights of the coarse, fine, tube, progress, oscillation, lifting and
    /// smoothness terms, in that order.
    pub weights: [f64; 7],
    pub sigma: f64,
    pub theta_max: f64,
    pub z_min: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { weights: [0.5, 1.0, 0.5, 0.3, 0.5, 2.0, 0.01], sigma: 0.5, theta_max: 20f64.to_radians(), z_min: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    pub d_max: f64,
    pub n_tube_violations: u32,
    pub theta_max: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self { d_max: 1.5, n_tube_violations: 50, theta_max: 20f64.to_radians() }
    }
}

/// Switches for the ablation variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub anti_sway: bool,
    pub integral: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { anti_sway: true, integral: true }
    }
}

/// Episode initialization, action handling and success criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    /// Horizontal distance of the container from the slew axis.
    pub radius_range: [f64; 2],
    /// Half-width of the azimuth band around each side of the truck.
    pub azimuth_spread: f64,
    pub yaw_spread: f64,
    /// Half-width of the horizontal start region around the container.
    pub start_horizontal: f64,
    /// Start height above the hook pose.
    pub start_height: [f64; 2],
    pub ik_tolerance: f64,
    pub ik_max_iters: usize,
    pub reset_attempts: usize,
    pub horizon: u64,
    pub u_res_max: f64,
    pub residual_mode: ResidualMode,
    pub blend_scale: f64,
    pub blend_max: f64,
    /// Capture radius at the lift waypoint and hook engagement tolerance.
    pub eps_hook: f64,
    pub theta_hook: f64,
    pub success_height: f64,
    /// Observe the swing joints in the discharge-unit slots instead of the
    /// (fixed) rotation and hook joints.
    pub observe_swing: bool,
    /// Attach the observation vector to logged step records.
    pub log_observations: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            radius_range: [5.0, 9.0],
            azimuth_spread: 30f64.to_radians(),
            yaw_spread: 15f64.to_radians(),
            start_horizontal: 1.0,
            start_height: [1.0, 3.0],
            ik_tolerance: 1e-3,
            ik_max_iters: 200,
            reset_attempts: 10,
            horizon: 1500,
            u_res_max: 0.2,
            residual_mode: ResidualMode::Additive,
            blend_scale: 0.5,
            blend_max: 0.5,
            eps_hook: 0.05,
            theta_hook: 5f64.to_radians(),
            success_height: 0.5,
            observe_swing: true,
            log_observations: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub chain: CraneGeometry,
    pub plant: PlantConfig,
    pub randomization: RandomizationConfig,
    pub controller: ControllerConfig,
    pub ablation: AblationConfig,
    pub task: TaskConfig,
    pub trajectory: TrajectoryConfig,
    pub reward: RewardConfig,
    pub termination: TerminationConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CoreError::InvalidConfig(msg.to_string()));
        self.randomization.validate()?;
        self.controller.validate()?;
        KinematicChain::loader_crane(self.chain).validate()?;
        let t = &self.task;
        if !(t.radius_range[0] > 0.0 && t.radius_range[0] <= t.radius_range[1]) {
            return bad("task.radius_range must satisfy 0 < lo <= hi");
        }
        if !(t.start_height[0] > 0.0 && t.start_height[0] <= t.start_height[1]) {
            return bad("task.start_height must satisfy 0 < lo <= hi (start above the container)");
        }
        if !(t.u_res_max >= 0.0 && t.eps_hook > 0.0 && t.blend_scale > 0.0) {
            return bad("task.u_res_max, eps_hook and blend_scale must be positive");
        }
        if t.horizon == 0 || t.reset_attempts == 0 {
            return bad("task.horizon and task.reset_attempts must be positive");
        }
        if self.trajectory.control_points < 4 || !(self.trajectory.tube_radius > 0.0) || !(self.trajectory.lift_height >= 1.0) {
            return bad("trajectory needs >= 4 control points, a positive tube radius and a lift of at least 1 m");
        }
        if !(self.reward.sigma > 0.0 && self.reward.z_min > 0.0 && self.reward.theta_max > 0.0) {
            return bad("reward.sigma, z_min and theta_max must be positive");
        }
        let term = &self.termination;
        if !(term.d_max > 0.0 && term.n_tube_violations > 0 && term.theta_max > 0.0) {
            return bad("termination thresholds must be positive");
        }
        Ok(())
    }

    /// Controller settings with the ablation switches applied.
    pub fn effective_controller(&self) -> ControllerConfig {
        let mut c = self.controller.clone();
        if !self.ablation.anti_sway {
            c.anti_swing.w_s = 0.0;
        }
        if !self.ablation.integral {
            c.admittance.ki = [0.0; 3];
        }
        c
    }
}

/// One time step of proprioceptive and reference information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub q_crane: [f64; N_JOINTS],
    pub dq_crane: [f64; N_JOINTS],
    pub q_du: [f64; 2],
    pub dq_du: [f64; 2],
    /// Active control point relative to the TCP, in the slewing column frame.
    pub ref_point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Most recent first: t, t−1, t−2.
    pub frames: [ObservationFrame; HISTORY],
    pub tube_delta: f64,
    pub prev_nominal: [f64; N_JOINTS],
    pub prev_residual: [f64; N_JOINTS],
}

impl Observation {
    /// Flat layout: each quantity's history block (t, t−1, t−2) in turn,
    /// then tube delta and the previous nominal and residual actions.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        for f in &self.frames {
            v.extend_from_slice(&f.q_crane);
        }
        for f in &self.frames {
            v.extend_from_slice(&f.dq_crane);
        }
        for f in &self.frames {
            v.extend_from_slice(&f.q_du);
        }
        for f in &self.frames {
            v.extend_from_slice(&f.dq_du);
        }
        for f in &self.frames {
            v.extend_from_slice(&f.ref_point);
        }
        v.push(self.tube_delta);
        v.extend_from_slice(&self.prev_nominal);
        v.extend_from_slice(&self.prev_residual);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != OBS_DIM {
            return Err(CoreError::InvalidConfig(format!("observation length {} != {OBS_DIM}", v.len())));
        }
        let mut it = v.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let mut frames = [ObservationFrame::zeroed(); HISTORY];
        for f in frames.iter_mut() {
            f.q_crane.copy_from_slice(&take(N_JOINTS));
        }
        for f in frames.iter_mut() {
            f.dq_crane.copy_from_slice(&take(N_JOINTS));
        }
        for f in frames.iter_mut() {
            f.q_du.copy_from_slice(&take(2));
        }
        for f in frames.iter_mut() {
            f.dq_du.copy_from_slice(&take(2));
        }
        for f in frames.iter_mut() {
            f.ref_point.copy_from_slice(&take(3));
        }
        let tube_delta = take(1)[0];
        let mut prev_nominal = [0.0; N_JOINTS];
        prev_nominal.copy_from_slice(&take(N_JOINTS));
        let mut prev_residual = [0.0; N_JOINTS];
        prev_residual.copy_from_slice(&take(N_JOINTS));
        Ok(Self { frames, tube_delta, prev_nominal, prev_residual })
    }
}

impl ObservationFrame {
    fn zeroed() -> Self {
        Self { q_crane: [0.0; N_JOINTS], dq_crane: [0.0; N_JOINTS], q_du: [0.0; 2], dq_du: [0.0; 2], ref_point: [0.0; 3] }
    }

    pub fn is_finite(&self) -> bool {
        self.q_crane.iter().chain(&self.dq_crane).chain(&self.q_du).chain(&self.dq_du).chain(&self.ref_point).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub target_coarse: f64,
    pub target_fine: f64,
    pub tube: f64,
    pub progress: f64,
    pub oscillation: f64,
    pub lifting: f64,
    pub smooth: f64,
    pub total: f64,
}

impl RewardComponents {
    pub fn terms(&self) -> [f64; 7] {
        [self.target_coarse, self.target_fine, self.tube, self.progress, self.oscillation, self.lifting, self.smooth]
    }
}

/// True iff the TCP is inside the tube and between the planes through both
/// ends of the active segment, perpendicular to it.
pub fn tube_indicator(delta: f64, p_tcp: &Vector3<f64>, p_prev: &Vector3<f64>, p_ref: &Vector3<f64>) -> bool {
    let dir = p_ref - p_prev;
    delta >= 0.0 && (p_tcp - p_prev).dot(&dir) >= 0.0 && (p_tcp - p_ref).dot(&dir) <= 0.0
}

/// Geometric quantities the reward is computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub p_tcp: Vector3<f64>,
    pub p_tip: Vector3<f64>,
    pub container_z: f64,
    pub p_prev: Vector3<f64>,
    pub p_ref: Vector3<f64>,
    pub tube_delta: f64,
    /// Control points reached so far, counting the active one (1..=M).
    pub m: usize,
    pub n_points: usize,
}

/// The oscillation term is `1 − tanh((α − θ_max)/θ_max)` with α the angle
/// between the discharge unit and gravity, divided by its value at α = 0 so
/// that it stays within (0, 1].
pub fn reward(cfg: &RewardConfig, x: &RewardInputs, u_res: &[f64]) -> RewardComponents {
    let d = (x.p_ref - x.p_tcp).norm();
    let s = cfg.sigma;
    let alpha = angle_to_gravity(&(x.p_tip - x.p_tcp)).unwrap_or(0.0);
    let osc_peak = 1.0 + 1f64.tanh();
    let mut r = RewardComponents {
        target_coarse: -(d - s).max(0.0) / s,
        // 1 − tanh(d/σ), written so it stays positive far from the target
        target_fine: 2.0 / ((2.0 * d / s).exp() + 1.0),
        tube: if tube_indicator(x.tube_delta, &x.p_tcp, &x.p_prev, &x.p_ref) { 1.0 } else { 0.0 },
        progress: x.m as f64 / x.n_points as f64,
        oscillation: (1.0 - ((alpha - cfg.theta_max) / cfg.theta_max).tanh()) / osc_peak,
        lifting: if x.container_z > cfg.z_min { 1.0 } else { 0.0 },
        smooth: -u_res.iter().map(|a| a * a).sum::<f64>(),
        total: 0.0,
    };
    r.total = r.terms().iter().zip(cfg.weights).map(|(t, w)| t * w).sum();
    r
}

pub fn distance_exceeded(p_ref: &Vector3<f64>, p_tcp: &Vector3<f64>, d_max: f64) -> bool {
    (p_ref - p_tcp).norm() > d_max
}

pub fn tilt_exceeded(p_tip: &Vector3<f64>, p_tcp: &Vector3<f64>, theta_max: f64) -> bool {
    angle_to_gravity(&(p_tip - p_tcp)).map(|a| a > theta_max).unwrap_or(false)
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn distance_to_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Cross-track error: distance from `p` to the reference polyline around the
/// active point `m` (the segment into it and the two before).
pub fn path_error(points: &[Vector3<f64>], m: usize, p: &Vector3<f64>) -> f64 {
    (m.saturating_sub(2).max(1)..=m).map(|k| distance_to_segment(p, &points[k - 1], &points[k])).fold(f64::INFINITY, f64::min)
}

/// Iterative damped-least-squares position IK from `seed`.
pub fn solve_position_ik(chain: &KinematicChain, target: &Vector3<f64>, seed: Vector7, tol: f64, max_iters: usize) -> Result<Option<Vector7>> {
    let mut q = chain.clamp_positions(&seed);
    for _ in 0..max_iters {
        let err = target - chain.forward_kinematics(&q)?.position;
        if err.norm() < tol {
            return Ok(Some(q));
        }
        let step = if err.norm() > 0.5 { err * (0.5 / err.norm()) } else { err };
        let jp = damped_pseudo_inverse(&chain.positional_jacobian(&q)?, 0.05)?;
        q = chain.clamp_positions(&(q + jp * step));
    }
    let err = target - chain.forward_kinematics(&q)?.position;
    Ok((err.norm() < tol).then_some(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftInfo {
    pub step: u64,
    pub error: f64,
    pub swing: f64,
    pub attached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub event: TerminationEvent,
    pub success: bool,
    /// Segment of the control point that was active when the action applied.
    pub segment: Segment,
    pub m: usize,
    pub tube_delta: f64,
    pub tracking_error: f64,
    pub swing: f64,
    pub reward: RewardComponents,
    pub u_nor: Vector7,
    pub u_res: Vector7,
    /// Set on the step that passed the lift waypoint.
    pub lift: Option<LiftInfo>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

struct Episode {
    seed: u64,
    side: Side,
    params: SampledParams,
    plant: Plant,
    controller: NominalController,
    state: SimState,
    trajectory: TrajectorySpec,
    lift_index: usize,
    hook: Vector3<f64>,
    m: usize,
    steps: u64,
    tube_violations: u32,
    /// The final control point has been reached; the controller holds it
    /// until the horizon.
    reached_end: bool,
    done: bool,
    event: TerminationEvent,
    lift: Option<LiftInfo>,
    frames: [ObservationFrame; HISTORY],
    tube_delta: f64,
    prev_nominal: Vector7,
    prev_residual: Vector7,
    log: Option<EpisodeLog>,
}

impl Episode {
    fn summary(&self, success_height: f64) -> EpisodeSummary {
        let z = self.state.container_position().z;
        EpisodeSummary {
            seed: self.seed,
            side: self.side,
            success: z > success_height,
            steps: self.steps,
            event: self.event,
            attached: self.state.payload.attached,
            lift_step: self.lift.map(|l| l.step),
            lift_error: self.lift.map(|l| l.error),
            lift_swing: self.lift.map(|l| l.swing),
            container_z: z,
        }
    }
}

/// Container lifting environment. A single instance is stepped
/// sequentially; run several for parallel rollouts.
pub struct CraneEnv {
    config: EnvConfig,
    controller_config: ControllerConfig,
    chain: KinematicChain,
    record: bool,
    episode: Option<Episode>,
}

impl CraneEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let chain = KinematicChain::loader_crane(config.chain);
        let controller_config = config.effective_controller();
        Ok(Self { config, controller_config, chain, record: false, episode: None })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    /// Keep an episode log from the next reset on.
    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.reset_with_side(seed, None)
    }

    /// Reset with the workspace side drawn from the seed unless given.
    pub fn reset_with_side(&mut self, seed: u64, side: Option<Side>) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coin = rng.random::<bool>();
        let side = side.unwrap_or(if coin { Side::Left } else { Side::Right });
        let task = &self.config.task;
        let geo = &self.config.plant.container;

        let r = uniform(&mut rng, [task.radius_range[0].powi(2), task.radius_range[1].powi(2)]).sqrt();
        let azimuth = side.sign() * (std::f64::consts::FRAC_PI_2 + uniform(&mut rng, [-task.azimuth_spread, task.azimuth_spread]));
        let yaw = azimuth + side.sign() * uniform(&mut rng, [-task.yaw_spread, task.yaw_spread]);
        let position = Vector3::new(r * azimuth.cos(), r * azimuth.sin(), 0.0);
        let params = randomize(&self.config.randomization, &mut rng);
        let payload = PayloadState::on_ground(position, yaw, params.mass, params.com_offset, geo);
        let plant = Plant::new(self.chain.clone(), self.config.plant.clone(), params.actuator_scale);
        let waypoints = LiftWaypoints::new(&payload, plant.rod_length, &self.config.trajectory);

        let mut start = None;
        for _ in 0..task.reset_attempts {
            let h = task.start_horizontal;
            let tcp0 = Vector3::new(
                position.x + uniform(&mut rng, [-h, h]),
                position.y + uniform(&mut rng, [-h, h]),
                waypoints.hook.z + uniform(&mut rng, task.start_height),
            );
            let mut seed_q = self.controller_config.q_c.map(|q| Vector7::from_column_slice(&q)).unwrap_or_else(|| self.chain.comfort_posture());
            seed_q[0] = tcp0.y.atan2(tcp0.x);
            if let Some(q) = solve_position_ik(&self.chain, &tcp0, seed_q, task.ik_tolerance, task.ik_max_iters)? {
                let trajectory = trajectory_from_poses(&tcp0, &payload, plant.rod_length, &self.config.trajectory);
                if trajectory.validate().is_ok() {
                    start = Some((q, trajectory));
                    break;
                }
            }
        }
        let (q, trajectory) = start.ok_or(CoreError::ResetFailed { attempts: task.reset_attempts })?;

        let friction = self.config.plant.pendulum_friction * params.friction_scale;
        let state = plant.initial_state(q, payload, friction)?;
        let controller = NominalController::new(&self.controller_config, &self.chain, params.admittance_scale, state.tcp());
        let lift_index = trajectory.lift_index().expect("validated trajectory has a B segment");
        let tube_delta = tube_delta(&state.tcp(), &trajectory.points[0], &trajectory.points[1], trajectory.tube_radius)?;
        let log = self.record.then(|| {
            let mut log = EpisodeLog::default();
            log.push(LogRecord::Header(EpisodeHeader {
                schema: crate::log::LOG_SCHEMA_VERSION,
                seed,
                side,
                params,
                trajectory: trajectory.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
                segments: trajectory.segments.clone(),
            }));
            log
        });
        let mut episode = Episode {
            seed,
            side,
            params,
            plant,
            controller,
            state,
            trajectory,
            lift_index,
            hook: waypoints.hook,
            m: 1,
            steps: 0,
            tube_violations: 0,
            reached_end: false,
            done: false,
            event: TerminationEvent::None,
            lift: None,
            frames: [ObservationFrame::zeroed(); HISTORY],
            tube_delta,
            prev_nominal: Vector7::zeros(),
            prev_residual: Vector7::zeros(),
            log,
        };
        let frame = self.frame(&episode);
        episode.frames = [frame; HISTORY];
        self.episode = Some(episode);
        Ok(self.observe())
    }

    fn episode(&self) -> &Episode {
        self.episode.as_ref().expect("reset must be called first")
    }

    fn frame(&self, ep: &Episode) -> ObservationFrame {
        let s = &ep.state;
        let mut f = ObservationFrame::zeroed();
        f.q_crane.copy_from_slice(s.joints.q.as_slice());
        f.dq_crane.copy_from_slice(s.joints.dq.as_slice());
        if self.config.task.observe_swing {
            f.q_du = s.pendulum.theta;
            f.dq_du = s.pendulum.dtheta;
        } else {
            f.q_du = s.du_joints;
        }
        let column = Rotation3::from_axis_angle(&Vector3::z_axis(), s.joints.q[0]);
        let rel = column.inverse() * (ep.trajectory.points[ep.m] - s.tcp());
        f.ref_point = [rel.x, rel.y, rel.z];
        f
    }

    /// Observation for the current state. Panics before the first reset.
    pub fn observe(&self) -> Observation {
        let ep = self.episode();
        let mut prev_nominal = [0.0; N_JOINTS];
        prev_nominal.copy_from_slice(ep.prev_nominal.as_slice());
        let mut prev_residual = [0.0; N_JOINTS];
        prev_residual.copy_from_slice(ep.prev_residual.as_slice());
        Observation { frames: ep.frames, tube_delta: ep.tube_delta, prev_nominal, prev_residual }
    }

    pub fn state(&self) -> &SimState {
        &self.episode().state
    }

    pub fn trajectory(&self) -> &TrajectorySpec {
        &self.episode().trajectory
    }

    /// Index of the active control point.
    pub fn control_index(&self) -> usize {
        self.episode().m
    }

    pub fn segment(&self) -> Segment {
        let ep = self.episode();
        ep.trajectory.segments[ep.m]
    }

    /// Whether a residual action passed to the next `step` takes effect.
    pub fn residual_active(&self) -> bool {
        self.segment() == Segment::B
    }

    pub fn side(&self) -> Side {
        self.episode().side
    }

    pub fn params(&self) -> &SampledParams {
        &self.episode().params
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    pub fn take_log(&mut self) -> Option<EpisodeLog> {
        self.episode.as_mut().and_then(|e| e.log.take())
    }

    fn reference(&self, ep: &Episode) -> ReferencePoint {
        let pts = &ep.trajectory.points;
        let m = ep.m;
        let seg = ep.trajectory.segments[m];
        let speed = self.config.trajectory.speeds[seg as usize];
        let velocity = if m == ep.lift_index || m + 1 == pts.len() {
            Vector3::zeros()
        } else {
            (pts[m] - pts[m - 1]).normalize() * speed
        };
        ReferencePoint { position: pts[m], velocity }
    }

    pub fn summary(&self) -> EpisodeSummary {
        self.episode().summary(self.config.task.success_height)
    }

    /// Combine the nominal command with the residual for the active segment.
    fn combine(&self, segment: Segment, u_nor: &Vector7, u_res: &Vector7, e_p: f64) -> (Vector7, Vector7) {
        if segment != Segment::B {
            return (*u_nor, Vector7::zeros());
        }
        let task = &self.config.task;
        match task.residual_mode {
            ResidualMode::Additive => (u_nor + u_res, *u_res),
            ResidualMode::Blend => {
                let lambda = (e_p / task.blend_scale).clamp(0.0, task.blend_max);
                (u_nor * (1.0 - lambda) + u_res * lambda, *u_res)
            }
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != ACT_DIM || !action.iter().all(|a| a.is_finite()) {
            return Err(CoreError::InvalidAction(format!("expected {ACT_DIM} finite values")));
        }
        let mut ep = self.episode.take().ok_or(CoreError::EpisodeFinished)?;
        if ep.done {
            self.episode = Some(ep);
            return Err(CoreError::EpisodeFinished);
        }
        let outcome = self.advance(&mut ep, action);
        self.episode = Some(ep);
        outcome
    }

    fn advance(&self, ep: &mut Episode, action: &[f64]) -> Result<StepOutcome> {
        let task = &self.config.task;
        let lim = task.u_res_max;
        let u_res_raw = Vector7::from_iterator(action.iter().map(|a| a.clamp(-lim, lim)));
        let segment = ep.trajectory.segments[ep.m];
        let reference = self.reference(ep);
        let u_nor = ep.controller.act(&self.chain, &ep.state, &reference)?;
        let e_p = (reference.position - ep.state.tcp()).norm();
        let (u, u_res) = self.combine(segment, &u_nor, &u_res_raw, e_p);

        ep.steps += 1;
        let mut event = TerminationEvent::None;
        match ep.plant.step(&ep.state, &u) {
            Ok(next) => ep.state = next,
            Err(CoreError::SimulationDiverged) => event = TerminationEvent::Diverged,
            Err(e) => return Err(e),
        }

        let mut lift_now = None;
        if event == TerminationEvent::None {
            let pts = &ep.trajectory.points;
            let tcp = ep.state.tcp();
            let (prev, cur) = (pts[ep.m - 1], pts[ep.m]);
            let dist = (cur - tcp).norm();
            let passed = (tcp - cur).dot(&(cur - prev)) > 0.0;
            let radius = if ep.m == ep.lift_index { task.eps_hook } else { ep.trajectory.advance_radius };
            if dist < radius || passed {
                if ep.m == ep.lift_index {
                    let swing = swing_angle(&ep.state)?;
                    ep.state = ep.plant.try_attach(&ep.state, &ep.hook, task.eps_hook, task.theta_hook)?;
                    let info = LiftInfo { step: ep.steps, error: (tcp - ep.hook).norm(), swing, attached: ep.state.payload.attached };
                    ep.lift = Some(info);
                    lift_now = Some(info);
                }
                if ep.m + 1 < pts.len() {
                    ep.m += 1;
                } else {
                    ep.reached_end = true;
                }
            }
        }

        let pts = &ep.trajectory.points;
        let (p_prev, p_ref) = (pts[ep.m - 1], pts[ep.m]);
        let tcp = ep.state.tcp();
        ep.tube_delta = tube_delta(&tcp, &p_prev, &p_ref, ep.trajectory.tube_radius)?;
        if ep.tube_delta < 0.0 {
            ep.tube_violations += 1;
        }
        let swing = swing_angle(&ep.state).unwrap_or(0.0);
        let rewards = if event == TerminationEvent::Diverged {
            RewardComponents::default()
        } else {
            let inputs = RewardInputs {
                p_tcp: tcp,
                p_tip: ep.state.tip,
                container_z: ep.state.container_position().z,
                p_prev,
                p_ref,
                tube_delta: ep.tube_delta,
                m: ep.m + 1,
                n_points: pts.len(),
            };
            reward(&self.config.reward, &inputs, u_res.as_slice())
        };

        if event == TerminationEvent::None {
            let term = &self.config.termination;
            event = if distance_exceeded(&p_ref, &tcp, term.d_max) {
                TerminationEvent::DistanceExceeded
            } else if ep.tube_violations >= term.n_tube_violations {
                TerminationEvent::TubeViolations
            } else if tilt_exceeded(&ep.state.tip, &tcp, term.theta_max) {
                TerminationEvent::TiltExceeded
            } else if ep.steps >= task.horizon {
                if ep.reached_end {
                    TerminationEvent::SuccessEnd
                } else {
                    TerminationEvent::Horizon
                }
            } else {
                TerminationEvent::None
            };
        }
        ep.done = event.is_terminal();
        ep.event = event;

        ep.prev_nominal = u_nor;
        ep.prev_residual = u_res;
        let frame = self.frame(ep);
        ep.frames = [frame, ep.frames[0], ep.frames[1]];

        let success = ep.state.container_position().z > task.success_height;
        let tracking_error = path_error(&ep.trajectory.points, ep.m, &tcp);
        let observation = {
            let mut prev_nominal = [0.0; N_JOINTS];
            prev_nominal.copy_from_slice(u_nor.as_slice());
            let mut prev_residual = [0.0; N_JOINTS];
            prev_residual.copy_from_slice(u_res.as_slice());
            Observation { frames: ep.frames, tube_delta: ep.tube_delta, prev_nominal, prev_residual }
        };
        let info = StepInfo {
            event,
            success,
            segment,
            m: ep.m,
            tube_delta: ep.tube_delta,
            tracking_error,
            swing,
            reward: rewards,
            u_nor,
            u_res,
            lift: lift_now,
        };

        if let Some(log) = ep.log.as_mut() {
            let arr3 = |v: Vector3<f64>| [v.x, v.y, v.z];
            let arr7 = |v: &Vector7| {
                let mut a = [0.0; N_JOINTS];
                a.copy_from_slice(v.as_slice());
                a
            };
            let record = StepRecord {
                step: ep.steps,
                p_tcp: arr3(tcp),
                p_ref: arr3(p_ref),
                m: ep.m,
                segment,
                tube_delta: ep.tube_delta,
                tracking_error,
                swing_angle: swing,
                p_container: arr3(ep.state.container_position()),
                reward: rewards,
                u_nor: arr7(&u_nor),
                u_res: arr7(&u_res),
                event,
                obs: task.log_observations.then(|| observation.to_vec()),
            };
            log.push(LogRecord::Step(record));
        }
        if ep.done {
            let summary = ep.summary(task.success_height);
            if let Some(log) = ep.log.as_mut() {
                log.push(LogRecord::Summary(summary));
            }
        }

        Ok(StepOutcome { observation, reward: rewards.total, done: ep.done, info })
    }
}

/// Runs one episode with zero residual and returns the per-step infos.
pub fn run_nominal_episode(env: &mut CraneEnv, seed: u64, side: Option<Side>) -> Result<Vec<StepInfo>> {
    env.reset_with_side(seed, side)?;
    let zero = [0.0; ACT_DIM];
    let mut infos = Vec::new();
    loop {
        let out = env.step(&zero)?;
        infos.push(out.info);
        if out.done {
            return Ok(infos);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v3() -> impl Strategy<Value = Vector3<f64>> {
        (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn inputs(p_tcp: Vector3<f64>, p_ref: Vector3<f64>) -> RewardInputs {
        RewardInputs {
            p_tcp,
            p_tip: p_tcp - Vector3::new(0.0, 0.0, 1.5),
            container_z: 0.0,
            p_prev: p_ref - Vector3::new(1.0, 0.0, 0.0),
            p_ref,
            tube_delta: 0.2,
            m: 1,
            n_points: 60,
        }
    }

    #[test]
    fn observation_layout_and_round_trip() {
        let mut frames = [ObservationFrame::zeroed(); HISTORY];
        for (k, f) in frames.iter_mut().enumerate() {
            let b = 100.0 * k as f64;
            f.q_crane = std::array::from_fn(|i| b + i as f64);
            f.dq_crane = std::array::from_fn(|i| b + 10.0 + i as f64);
            f.q_du = [b + 20.0, b + 21.0];
            f.dq_du = [b + 30.0, b + 31.0];
            f.ref_point = [b + 40.0, b + 41.0, b + 42.0];
        }
        let obs = Observation { frames, tube_delta: -7.0, prev_nominal: [8.0; 7], prev_residual: [9.0; 7] };
        let v = obs.to_vec();
        assert_eq!(v.len(), 78);
        assert_eq!(OBS_DIM, 78);
        // q block: t, t-1, t-2
        assert_eq!(v[0], 0.0);
        assert_eq!(v[7], 100.0);
        assert_eq!(v[14], 200.0);
        assert_eq!(v[21], 10.0);
        assert_eq!(v[42], 20.0);
        assert_eq!(v[44], 120.0);
        assert_eq!(v[48], 30.0);
        assert_eq!(v[54], 40.0);
        assert_eq!(v[57], 140.0);
        assert_eq!(v[63], -7.0);
        assert_eq!(&v[64..71], &[8.0; 7]);
        assert_eq!(&v[71..78], &[9.0; 7]);
        assert_eq!(Observation::from_slice(&v).unwrap(), obs);
        assert!(Observation::from_slice(&v[1..]).is_err());
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let p = Vector3::new(1.0, 2.0, 3.0);
        let on = reward(&cfg, &inputs(p, p), &[0.0; 7]);
        assert_eq!((on.target_fine, on.target_coarse, on.smooth), (1.0, 0.0, 0.0));
        let at_sigma = reward(&cfg, &inputs(p + Vector3::new(0.0, cfg.sigma, 0.0), p), &[0.0; 7]);
        assert_eq!(at_sigma.target_coarse, 0.0);
        assert!((at_sigma.target_fine - (1.0 - 1f64.tanh())).abs() < 1e-15);
        let mut last = inputs(p, p);
        last.m = 60;
        assert_eq!(reward(&cfg, &last, &[0.0; 7]).progress, 1.0);
        // hanging straight down gives the oscillation maximum
        assert!((on.oscillation - 1.0).abs() < 1e-15);
        let total: f64 = on.terms().iter().zip(cfg.weights).map(|(t, w)| t * w).sum();
        assert_eq!(on.total, total);
    }

    #[test]
    fn termination_predicates_at_thresholds() {
        let o = Vector3::zeros();
        assert!(!distance_exceeded(&Vector3::new(1.5, 0.0, 0.0), &o, 1.5));
        assert!(distance_exceeded(&Vector3::new(1.5 + 1e-9, 0.0, 0.0), &o, 1.5));
        let th = 20f64.to_radians();
        let tip = |a: f64| Vector3::new(a.sin(), 0.0, -a.cos());
        assert!(tilt_exceeded(&tip(th + 0.01), &o, th));
        assert!(!tilt_exceeded(&tip(th - 0.01), &o, th));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn reward_components_respect_bounds(
            tcp in v3(), rf in v3(), tip_off in v3(), prev_off in v3(),
            cz in -1.0f64..3.0, delta in -0.1f64..0.2, m in 1usize..=60,
            u in prop::collection::vec(-0.2f64..0.2, 7),
        ) {
            prop_assume!(tip_off.norm() > 1e-6);
            let x = RewardInputs { p_tcp: tcp, p_tip: tcp + tip_off, container_z: cz, p_prev: rf + prev_off, p_ref: rf, tube_delta: delta, m, n_points: 60 };
            let cfg = RewardConfig::default();
            let r = reward(&cfg, &x, &u);
            prop_assert!(r.target_fine > 0.0 && r.target_fine <= 1.0);
            prop_assert!(r.target_coarse <= 0.0);
            prop_assert!(r.tube == 0.0 || r.tube == 1.0);
            prop_assert!((0.0..=1.0).contains(&r.progress));
            prop_assert!(r.lifting == 0.0 || r.lifting == 1.0);
            prop_assert!(r.smooth <= 0.0);
            prop_assert!(r.oscillation <= 1.0 && r.oscillation > 0.0);
        }

        #[test]
        fn tube_indicator_matches_brute_force(tcp in v3(), a in v3(), b in v3(), r in 0.05f64..2.0) {
            prop_assume!((b - a).norm() > 1e-3);
            let delta = crate::trajectory::tube_delta(&tcp, &a, &b, r).unwrap();
            // parameter of the projection onto the line through a, b
            let t = (tcp - a).dot(&(b - a)) / (b - a).norm_squared();
            let want = delta >= 0.0 && (0.0..=1.0).contains(&t);
            let got = tube_indicator(delta, &tcp, &a, &b);
            // tolerate rounding exactly on a bounding plane
            if (t.abs() > 1e-12) && ((t - 1.0).abs() > 1e-12) {
                prop_assert_eq!(got, want);
            }
        }

        #[test]
        fn termination_predicates_match_definitions(p in v3(), q in v3(), d in 0.1f64..5.0, th in 0.05f64..1.5) {
            prop_assert_eq!(distance_exceeded(&p, &q, d), (p - q).norm() > d);
            let v = p - q;
            prop_assume!(v.norm() > 1e-6);
            let ang = (v.dot(&Vector3::new(0.0, 0.0, -1.0)) / v.norm()).clamp(-1.0, 1.0).acos();
            prop_assume!((ang - th).abs() > 1e-9);
            prop_assert_eq!(tilt_exceeded(&p, &q, th), ang > th);
        }

        #[test]
        fn distance_to_segment_matches_sampling(p in v3(), a in v3(), b in v3()) {
            let n = 2000;
            let sampled = (0..=n).map(|i| (p - (a + (b - a) * (i as f64 / n as f64))).norm()).fold(f64::INFINITY, f64::min);
            let exact = distance_to_segment(&p, &a, &b);
            prop_assert!(exact <= sampled + 1e-12);
            prop_assert!(sampled - exact <= (b - a).norm() / n as f64 + 1e-9);
        }
    }
}
