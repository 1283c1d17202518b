//! Kinematic description of the loader crane.
//!
//! The crane is a serial chain of seven actuated joints (slew, boom pitch,
//! four telescope stages, wrist). Below the TCP hangs the discharge unit on
//! two passive revolute joints whose axes stay world-horizontal, so its tip
//! is a spherical pendulum about the TCP.

use nalgebra::{Isometry3, SMatrix, SVector, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const N_JOINTS: usize = 7;
pub const N_PASSIVE: usize = 2;

pub type Vector7 = SVector<f64, N_JOINTS>;
pub type Jacobian = SMatrix<f64, 3, N_JOINTS>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint of the chain. `parent_offset` maps the previous joint frame
/// (after its motion) to this joint's frame; the joint then rotates about or
/// translates along `axis`, expressed in its own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub parent_offset: Isometry3<f64>,
    /// `[lower, upper]` in rad or m.
    pub pos_limits: [f64; 2],
    /// rad/s or m/s.
    pub vel_limit: f64,
}

impl JointSpec {
    pub fn revolute(name: &str, axis: Vector3<f64>, offset: Isometry3<f64>, limits: [f64; 2], vel: f64) -> Self {
        Self { name: name.into(), kind: JointKind::Revolute, axis, parent_offset: offset, pos_limits: limits, vel_limit: vel }
    }

    pub fn prismatic(name: &str, axis: Vector3<f64>, offset: Isometry3<f64>, limits: [f64; 2], vel: f64) -> Self {
        Self { name: name.into(), kind: JointKind::Prismatic, axis, parent_offset: offset, pos_limits: limits, vel_limit: vel }
    }

    /// Transform contributed by the joint displacement `q` alone.
    pub fn motion(&self, q: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Revolute => {
                let axis = Unit::new_unchecked(self.axis);
                Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&axis, q))
            }
            JointKind::Prismatic => Isometry3::translation(self.axis.x * q, self.axis.y * q, self.axis.z * q),
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.pos_limits[0], self.pos_limits[1])
    }

    pub fn mid_range(&self) -> f64 {
        0.5 * (self.pos_limits[0] + self.pos_limits[1])
    }

    fn validate(&self) -> Result<()> {
        if (self.axis.norm() - 1.0).abs() > 1e-12 {
            return Err(CoreError::InvalidChain(format!("joint {}: axis is not unit length", self.name)));
        }
        if !(self.pos_limits[0] < self.pos_limits[1]) {
            return Err(CoreError::InvalidChain(format!("joint {}: lower limit must be below upper", self.name)));
        }
        if !(self.vel_limit > 0.0) {
            return Err(CoreError::InvalidChain(format!("joint {}: velocity limit must be positive", self.name)));
        }
        Ok(())
    }
}

/// Position and orientation of a frame in the world (crane base) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self { position: iso.translation.vector, orientation: iso.rotation }
    }
}

/// The seven actuated crane joints, the two passive discharge-unit joints
/// and the rigid offset from the last passive joint to the hook tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub joints: Vec<JointSpec>,
    pub passive: Vec<JointSpec>,
    pub tool_offset: Isometry3<f64>,
    /// Nominal horizontal outreach in m.
    pub outreach: f64,
}

/// Geometry parameters for the default loader-crane layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CraneGeometry {
    pub base_height: f64,
    pub boom_length: f64,
    pub stage_stroke: f64,
    pub rod_length: f64,
    pub outreach: f64,
}

impl Default for CraneGeometry {
    fn default() -> Self {
        Self { base_height: 2.0, boom_length: 4.0, stage_stroke: 2.25, rod_length: 1.5, outreach: 13.0 }
    }
}

impl KinematicChain {
    pub fn loader_crane(geo: CraneGeometry) -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        let id = Isometry3::identity();
        let x = Vector3::x();
        let joints = vec![
            JointSpec::revolute("slew", Vector3::z(), Isometry3::translation(0.0, 0.0, geo.base_height), [-PI, PI], 0.5),
            // about -y so that a positive angle raises the boom tip
            JointSpec::revolute("boom_pitch", -Vector3::y(), id, [-0.6, 1.2], 0.4),
            JointSpec::prismatic("telescope_1", x, Isometry3::translation(geo.boom_length, 0.0, 0.0), [0.0, geo.stage_stroke], 0.4),
            JointSpec::prismatic("telescope_2", x, id, [0.0, geo.stage_stroke], 0.4),
            JointSpec::prismatic("telescope_3", x, id, [0.0, geo.stage_stroke], 0.4),
            JointSpec::prismatic("telescope_4", x, id, [0.0, geo.stage_stroke], 0.4),
            JointSpec::revolute("wrist", Vector3::z(), id, [-PI, PI], 1.0),
        ];
        let passive = vec![
            JointSpec::revolute("swing_x", -Vector3::y(), id, [-FRAC_PI_2, FRAC_PI_2], 10.0),
            JointSpec::revolute("swing_y", Vector3::x(), id, [-FRAC_PI_2, FRAC_PI_2], 10.0),
        ];
        Self { joints, passive, tool_offset: Isometry3::translation(0.0, 0.0, -geo.rod_length), outreach: geo.outreach }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != N_JOINTS {
            return Err(CoreError::InvalidChain(format!("expected {N_JOINTS} actuated joints, got {}", self.joints.len())));
        }
        if self.passive.len() != N_PASSIVE {
            return Err(CoreError::InvalidChain(format!("expected {N_PASSIVE} passive joints, got {}", self.passive.len())));
        }
        let revolute = self.joints.iter().filter(|j| j.kind == JointKind::Revolute).count();
        if revolute != 3 {
            return Err(CoreError::InvalidChain(format!("expected 3 revolute and 4 prismatic joints, got {revolute} revolute")));
        }
        for j in self.joints.iter().chain(&self.passive) {
            j.validate()?;
        }
        if self.rod_length() <= 0.0 {
            return Err(CoreError::InvalidChain("tool offset must be non-zero".into()));
        }
        let reach = self.full_extension_reach();
        if reach > self.outreach + 1e-9 {
            return Err(CoreError::InvalidChain(format!("fully extended reach {reach:.3} m exceeds outreach {:.3} m", self.outreach)));
        }
        Ok(())
    }

    /// Horizontal TCP distance from the base axis with every prismatic joint
    /// at its upper limit and every revolute joint at zero.
    pub fn full_extension_reach(&self) -> f64 {
        let q = Vector7::from_iterator(self.joints.iter().map(|j| match j.kind {
            JointKind::Prismatic => j.pos_limits[1],
            JointKind::Revolute => 0.0,
        }));
        let tcp = self.tcp_frame(&q);
        tcp.translation.vector.xy().norm()
    }

    /// Distance from the TCP to the discharge-unit tip.
    pub fn rod_length(&self) -> f64 {
        self.tool_offset.translation.vector.norm()
    }

    /// Mid-range of every joint's limits.
    pub fn comfort_posture(&self) -> Vector7 {
        Vector7::from_iterator(self.joints.iter().map(JointSpec::mid_range))
    }

    pub fn vel_limits(&self) -> Vector7 {
        Vector7::from_iterator(self.joints.iter().map(|j| j.vel_limit))
    }

    pub fn clamp_positions(&self, q: &Vector7) -> Vector7 {
        Vector7::from_iterator(self.joints.iter().zip(q.iter()).map(|(j, &v)| j.clamp(v)))
    }

    fn tcp_frame(&self, q: &Vector7) -> Isometry3<f64> {
        self.joints
            .iter()
            .zip(q.iter())
            .fold(Isometry3::identity(), |acc, (j, &qi)| acc * j.parent_offset * j.motion(qi))
    }

    pub fn forward_kinematics(&self, q: &Vector7) -> Result<Pose> {
        check_finite(q)?;
        Ok(Pose::from_isometry(&self.tcp_frame(q)))
    }

    /// Position of the discharge-unit tip for swing angles `theta`
    /// (passive joint displacements) hanging from `tcp`.
    pub fn discharge_tip(&self, tcp: &Vector3<f64>, theta: [f64; N_PASSIVE]) -> Vector3<f64> {
        let frame = self
            .passive
            .iter()
            .zip(theta)
            .fold(Isometry3::translation(tcp.x, tcp.y, tcp.z), |acc, (j, t)| acc * j.parent_offset * j.motion(t));
        (frame * self.tool_offset).translation.vector
    }

    /// Positional Jacobian of the TCP: column i is d(p_tcp)/d(q_i).
    pub fn positional_jacobian(&self, q: &Vector7) -> Result<Jacobian> {
        check_finite(q)?;
        let mut frames = [(Vector3::zeros(), Vector3::zeros()); N_JOINTS];
        let mut acc = Isometry3::identity();
        for (i, (j, &qi)) in self.joints.iter().zip(q.iter()).enumerate() {
            acc *= j.parent_offset;
            frames[i] = (acc.translation.vector, acc.rotation * j.axis);
            acc *= j.motion(qi);
        }
        let p_tcp = acc.translation.vector;
        let mut jac = Jacobian::zeros();
        for (i, (j, (origin, axis))) in self.joints.iter().zip(frames).enumerate() {
            let col = match j.kind {
                JointKind::Revolute => axis.cross(&(p_tcp - origin)),
                JointKind::Prismatic => axis,
            };
            jac.set_column(i, &col);
        }
        Ok(jac)
    }
}

impl Default for KinematicChain {
    fn default() -> Self {
        Self::loader_crane(CraneGeometry::default())
    }
}

pub(crate) fn check_finite(q: &Vector7) -> Result<()> {
    if q.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::InvalidJointState)
    }
}

/// Slice-based FK entry point with length checking.
pub fn forward_kinematics(chain: &KinematicChain, q: &[f64]) -> Result<Pose> {
    if q.len() != N_JOINTS {
        return Err(CoreError::InvalidJointState);
    }
    chain.forward_kinematics(&Vector7::from_column_slice(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    // Homogeneous-matrix oracle built from Rodrigues' formula, sharing
    // nothing with the quaternion path above.
    fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix4<f64> {
        let (s, c) = angle.sin_cos();
        let (x, y, z) = (axis.x, axis.y, axis.z);
        let t = 1.0 - c;
        Matrix4::new(
            t * x * x + c, t * x * y - s * z, t * x * z + s * y, 0.0,
            t * x * y + s * z, t * y * y + c, t * y * z - s * x, 0.0,
            t * x * z - s * y, t * y * z + s * x, t * z * z + c, 0.0,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn offset_matrix(iso: &Isometry3<f64>) -> Matrix4<f64> {
        let q = iso.rotation.quaternion();
        let v = q.imag();
        let angle = 2.0 * v.norm().atan2(q.w);
        let mut m = if v.norm() > 0.0 { rodrigues(&v.normalize(), angle) } else { Matrix4::identity() };
        m[(0, 3)] = iso.translation.x;
        m[(1, 3)] = iso.translation.y;
        m[(2, 3)] = iso.translation.z;
        m
    }

    fn fk_oracle(chain: &KinematicChain, q: &Vector7) -> Vector3<f64> {
        let mut m = Matrix4::identity();
        for (j, &qi) in chain.joints.iter().zip(q.iter()) {
            m *= offset_matrix(&j.parent_offset);
            m *= match j.kind {
                JointKind::Revolute => rodrigues(&j.axis, qi),
                JointKind::Prismatic => {
                    let mut t = Matrix4::identity();
                    t[(0, 3)] = j.axis.x * qi;
                    t[(1, 3)] = j.axis.y * qi;
                    t[(2, 3)] = j.axis.z * qi;
                    t
                }
            };
        }
        Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
    }

    fn random_q(chain: &KinematicChain, rng: &mut impl Rng) -> Vector7 {
        Vector7::from_iterator(chain.joints.iter().map(|j| rng.random_range(j.pos_limits[0]..j.pos_limits[1])))
    }

    #[test]
    fn default_chain_is_valid() {
        let chain = KinematicChain::default();
        chain.validate().unwrap();
        assert_relative_eq!(chain.full_extension_reach(), 13.0, epsilon = 1e-12);
        assert_relative_eq!(chain.rod_length(), 1.5);
    }

    #[test]
    fn home_pose_is_composed_offsets() {
        let chain = KinematicChain::default();
        let pose = chain.forward_kinematics(&Vector7::zeros()).unwrap();
        assert_relative_eq!(pose.position, Vector3::new(4.0, 0.0, 2.0), epsilon = 1e-12);
        assert_relative_eq!(pose.orientation.norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn slew_by_pi_mirrors_home() {
        let chain = KinematicChain::default();
        let home = chain.forward_kinematics(&Vector7::zeros()).unwrap().position;
        let mut q = Vector7::zeros();
        q[0] = PI;
        let p = chain.forward_kinematics(&q).unwrap().position;
        assert_relative_eq!(p.z, home.z, epsilon = 1e-12);
        assert_relative_eq!(p.xy().norm(), home.xy().norm(), epsilon = 1e-12);
        assert_relative_eq!(p.x, -home.x, epsilon = 1e-12);
    }

    #[test]
    fn fk_matches_matrix_oracle() {
        let chain = KinematicChain::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q = random_q(&chain, &mut rng);
            let p = chain.forward_kinematics(&q).unwrap().position;
            assert_relative_eq!(p, fk_oracle(&chain, &q), epsilon = 1e-10);
        }
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let chain = KinematicChain::default();
        let mut q = Vector7::zeros();
        q[3] = f64::NAN;
        assert!(matches!(chain.forward_kinematics(&q), Err(CoreError::InvalidJointState)));
        assert!(matches!(chain.positional_jacobian(&q), Err(CoreError::InvalidJointState)));
        assert!(forward_kinematics(&chain, &[0.0; 6]).is_err());
    }

    #[test]
    fn jacobian_special_columns() {
        let chain = KinematicChain::default();
        let jac = chain.positional_jacobian(&Vector7::zeros()).unwrap();
        // telescope aligned with world x at home
        assert_relative_eq!(jac.column(2).into_owned(), Vector3::x(), epsilon = 1e-15);
        // the wrist axis passes through the TCP
        assert_relative_eq!(jac.column(6).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let chain = KinematicChain::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let q = random_q(&chain, &mut rng);
            let jac = chain.positional_jacobian(&q).unwrap();
            for i in 0..N_JOINTS {
                let mut qp = q;
                let mut qm = q;
                qp[i] += h;
                qm[i] -= h;
                let fd = (fk_oracle(&chain, &qp) - fk_oracle(&chain, &qm)) / (2.0 * h);
                worst = worst.max((jac.column(i) - fd).amax());
            }
        }
        assert!(worst < 1e-5, "max |J - J_fd| = {worst}");
    }

    #[test]
    fn discharge_tip_hangs_below_tcp() {
        let chain = KinematicChain::default();
        let tcp = Vector3::new(3.0, 1.0, 4.0);
        assert_relative_eq!(chain.discharge_tip(&tcp, [0.0, 0.0]), tcp - Vector3::new(0.0, 0.0, 1.5), epsilon = 1e-12);
        // positive swing about the first passive axis displaces the tip along +x
        let tip = chain.discharge_tip(&tcp, [0.2, 0.0]);
        assert!(tip.x > tcp.x);
        assert_relative_eq!((tip - tcp).norm(), 1.5, epsilon = 1e-12);
        let tip = chain.discharge_tip(&tcp, [0.0, 0.2]);
        assert!(tip.y > tcp.y);
    }

    #[test]
    fn validation_rejects_bad_chains() {
        let mut chain = KinematicChain::default();
        chain.joints[1].kind = JointKind::Prismatic;
        assert!(chain.validate().is_err());

        let mut chain = KinematicChain::default();
        chain.joints[0].axis = Vector3::new(0.0, 0.0, 1.0 + 1e-9);
        assert!(chain.validate().is_err());

        let chain = KinematicChain { outreach: 12.0, ..Default::default() };
        assert!(chain.validate().is_err());

        let mut chain = KinematicChain::default();
        chain.joints[3].pos_limits = [1.0, 1.0];
        assert!(chain.validate().is_err());
    }

    #[test]
    fn toml_round_trip_is_bit_exact() {
        let chain = KinematicChain::default();
        let text = toml::to_string(&chain).unwrap();
        let back: KinematicChain = toml::from_str(&text).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = random_q(&chain, &mut rng);
            let a = chain.forward_kinematics(&q).unwrap().position;
            let b = back.forward_kinematics(&q).unwrap().position;
            assert_eq!(a, b);
        }
    }
}
