//! Reference trajectory for one lift: approach (A), horizontal alignment
//! into the rings (B) and vertical lift (C), discretized into control points
//! spaced evenly in arc length.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::PayloadState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    A,
    B,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Number of control points M.
    pub control_points: usize,
    pub tube_radius: f64,
    pub advance_radius: f64,
    /// Horizontal distance in front of the rings where alignment starts.
    pub standoff: f64,
    /// Height of the via point above the approach point.
    pub clearance: f64,
    pub lift_height: f64,
    /// Reference TCP speed per segment (A, B, C) in m/s.
    pub speeds: [f64; 3],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            control_points: 60,
            tube_radius: 0.2,
            advance_radius: 0.15,
            standoff: 1.0,
            clearance: 0.5,
            lift_height: 1.0,
            speeds: [0.8, 0.3, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub points: Vec<Vector3<f64>>,
    pub segments: Vec<Segment>,
    pub tube_radius: f64,
    pub advance_radius: f64,
}

impl TrajectorySpec {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the last B point, where the hooks engage.
    pub fn lift_index(&self) -> Option<usize> {
        self.segments.iter().rposition(|&s| s == Segment::B)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CoreError::InvalidConfig(format!("trajectory: {msg}")));
        if self.points.len() < 3 || self.points.len() != self.segments.len() {
            return bad("need at least three labelled points");
        }
        if self.points.windows(2).any(|w| w[0] == w[1]) {
            return bad("consecutive points coincide");
        }
        let mut runs: Vec<Segment> = self.segments.clone();
        runs.dedup();
        if runs != [Segment::A, Segment::B, Segment::C] {
            return bad("labels must form contiguous A, B, C runs");
        }
        Ok(())
    }
}

/// Waypoints the trajectory is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftWaypoints {
    pub approach: Vector3<f64>,
    /// TCP position with the hooks seated in the rings.
    pub hook: Vector3<f64>,
    pub lift: Vector3<f64>,
}

impl LiftWaypoints {
    pub fn new(container: &PayloadState, rod_length: f64, cfg: &TrajectoryConfig) -> Self {
        let hook = container.ring_midpoint() + Vector3::new(0.0, 0.0, rod_length);
        let approach = hook - container.facing() * cfg.standoff;
        let lift = hook + Vector3::new(0.0, 0.0, cfg.lift_height);
        Self { approach, hook, lift }
    }
}

/// Point on the centripetal Catmull-Rom span between `p1` and `p2`.
pub fn catmull_rom(p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>, p3: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let knot = |a: &Vector3<f64>, b: &Vector3<f64>| (b - a).norm().sqrt().max(1e-9);
    let t0 = 0.0;
    let t1 = t0 + knot(p0, p1);
    let t2 = t1 + knot(p1, p2);
    let t3 = t2 + knot(p2, p3);
    let u = t1 + (t2 - t1) * t;
    let lerp = |a: &Vector3<f64>, b: &Vector3<f64>, ta: f64, tb: f64| a * ((tb - u) / (tb - ta)) + b * ((u - ta) / (tb - ta));
    let a1 = lerp(p0, p1, t0, t1);
    let a2 = lerp(p1, p2, t1, t2);
    let a3 = lerp(p2, p3, t2, t3);
    let b1 = lerp(&a1, &a2, t0, t2);
    let b2 = lerp(&a2, &a3, t1, t3);
    lerp(&b1, &b2, t1, t2)
}

/// Dense polyline through `waypoints` with Catmull-Rom spans; the phantom
/// end points set the boundary tangents.
fn spline_polyline(start_phantom: Vector3<f64>, waypoints: &[Vector3<f64>], end_phantom: Vector3<f64>, per_span: usize) -> Vec<Vector3<f64>> {
    let mut ctrl = Vec::with_capacity(waypoints.len() + 2);
    ctrl.push(start_phantom);
    ctrl.extend_from_slice(waypoints);
    ctrl.push(end_phantom);
    let mut out = vec![waypoints[0]];
    for w in ctrl.windows(4) {
        for k in 1..=per_span {
            out.push(catmull_rom(&w[0], &w[1], &w[2], &w[3], k as f64 / per_span as f64));
        }
    }
    out
}

/// `n` points evenly spaced in arc length along `poly`, excluding the start
/// and including the end.
fn resample(poly: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    let mut cum = vec![0.0];
    for w in poly.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 1..=n {
        let s = total * k as f64 / n as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let f = if span > 0.0 { ((s - cum[seg]) / span).clamp(0.0, 1.0) } else { 1.0 };
        out.push(poly[seg] + (poly[seg + 1] - poly[seg]) * f);
    }
    *out.last_mut().unwrap() = *poly.last().unwrap();
    out
}

fn polyline_length(poly: &[Vector3<f64>]) -> f64 {
    poly.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Split `total` points among segments proportionally to `lengths`, at
/// least one each (largest-remainder rounding).
fn allocate(total: usize, lengths: &[f64]) -> Vec<usize> {
    let sum: f64 = lengths.iter().sum();
    let spare = total - lengths.len();
    let exact: Vec<f64> = lengths.iter().map(|l| l / sum * spare as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

pub fn trajectory_from_poses(tcp0: &Vector3<f64>, container: &PayloadState, rod_length: f64, cfg: &TrajectoryConfig) -> TrajectorySpec {
    let wp = LiftWaypoints::new(container, rod_length, cfg);
    let make = |points, segments| TrajectorySpec { points, segments, tube_radius: cfg.tube_radius, advance_radius: cfg.advance_radius };
    if (tcp0 - wp.hook).norm() < 1e-9 {
        return make(vec![*tcp0, wp.lift], vec![Segment::B, Segment::C]);
    }

    let via = wp.approach + Vector3::new(0.0, 0.0, cfg.clearance);
    // leave tcp0 heading at the via point and arrive heading into the rings
    let poly_a = spline_polyline(tcp0 * 2.0 - via, &[*tcp0, via, wp.approach], wp.hook, 200);
    let lengths = [polyline_length(&poly_a), (wp.hook - wp.approach).norm(), cfg.lift_height];
    let counts = allocate(cfg.control_points.max(4) - 1, &lengths);

    let mut points = vec![*tcp0];
    let mut segments = vec![Segment::A];
    points.extend(resample(&poly_a, counts[0]));
    segments.extend(std::iter::repeat_n(Segment::A, counts[0]));
    points.extend(resample(&[wp.approach, wp.hook], counts[1]));
    segments.extend(std::iter::repeat_n(Segment::B, counts[1]));
    points.extend(resample(&[wp.hook, wp.lift], counts[2]));
    segments.extend(std::iter::repeat_n(Segment::C, counts[2]));
    make(points, segments)
}

/// Signed tube margin: `r` on the segment's line, zero at distance `r`,
/// floored at `−r/2`. Positive means inside the tube.
pub fn tube_delta(p_tcp: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>, r: f64) -> Result<f64> {
    let dir = p2 - p1;
    let len = dir.norm();
    if !(len > 0.0) {
        return Err(CoreError::DegenerateSegment);
    }
    let dist = (p_tcp - p1).cross(&dir).norm() / len;
    Ok((-r / 2.0).max(r - dist))
}
