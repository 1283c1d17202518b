//! Reference computations the acceptance checks compare against. They are
//! written independently of the crates under test.

use nalgebra::{DMatrix, DVector, Vector3};

/// Damped oscillator `θ̈ + a1 θ̇ + a0 θ = 0` integrated with RK4 from
/// `(θ0, 0)`; returns samples of θ at spacing `dt`.
pub fn simulate_oscillator(a1: f64, a0: f64, theta0: f64, dt: f64, duration: f64) -> Vec<f64> {
    let f = |th: f64, w: f64| (w, -a1 * w - a0 * th);
    let (mut th, mut w) = (theta0, 0.0);
    let n = (duration / dt).ceil() as usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push(th);
    for _ in 0..n {
        let k1 = f(th, w);
        let k2 = f(th + 0.5 * dt * k1.0, w + 0.5 * dt * k1.1);
        let k3 = f(th + 0.5 * dt * k2.0, w + 0.5 * dt * k2.1);
        let k4 = f(th + dt * k3.0, w + dt * k3.1);
        th += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        w += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        out.push(th);
    }
    out
}

/// Damping ratio from the logarithmic decrement between same-sign peaks
/// and natural frequency from zero-crossing spacing. `None` if the signal
/// has too few oscillations.
pub fn fit_underdamped(theta: &[f64], dt: f64) -> Option<(f64, f64)> {
    let mut peaks = Vec::new();
    let mut crossings = Vec::new();
    for k in 1..theta.len() - 1 {
        let (a, b, c) = (theta[k - 1], theta[k], theta[k + 1]);
        if (b - a) * (c - b) < 0.0 {
            // parabola through three samples
            let denom = a - 2.0 * b + c;
            peaks.push((b - (a - c).powi(2) / (8.0 * denom)).abs());
        }
        if a.signum() != b.signum() && a != 0.0 {
            crossings.push(dt * ((k - 1) as f64 + a / (a - b)));
        }
    }
    if peaks.len() < 3 || crossings.len() < 3 {
        return None;
    }
    let wd = std::f64::consts::PI / ((crossings[2] - crossings[0]) / 2.0);
    let delta = (peaks[0] / peaks[2]).ln();
    let zeta = delta / (4.0 * std::f64::consts::PI.powi(2) + delta * delta).sqrt();
    Some((zeta, wd / (1.0 - zeta * zeta).sqrt()))
}

/// Least-squares fit of `θ̈ = −a1 θ̇ − a0 θ` on finite differences of the
/// samples; returns `(ζ, ω_n)`. Works for any damping.
pub fn fit_second_order(theta: &[f64], dt: f64) -> (f64, f64) {
    let n = theta.len() - 2;
    let mut a = DMatrix::zeros(n, 2);
    let mut b = DVector::zeros(n);
    for k in 0..n {
        let (p, c, q) = (theta[k], theta[k + 1], theta[k + 2]);
        a[(k, 0)] = (q - p) / (2.0 * dt);
        a[(k, 1)] = c;
        b[k] = -(q - 2.0 * c + p) / (dt * dt);
    }
    let x = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).expect("regressors are independent");
    let (a1, a0) = (x[0], x[1]);
    (a1 / (2.0 * a0.sqrt()), a0.sqrt())
}

/// `argmin_v ‖J v − v_d‖² + λ²‖v‖²` from the normal equations.
pub fn regularized_least_squares(jac: &DMatrix<f64>, v_d: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = jac.ncols();
    let lhs = jac.transpose() * jac + DMatrix::identity(n, n) * (lambda * lambda);
    lhs.lu().solve(&(jac.transpose() * v_d)).expect("regularized system is nonsingular")
}

/// Tube margin via orthogonal projection onto the infinite line.
pub fn tube_margin(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> f64 {
    let d = b - a;
    let t = (p - a).dot(&d) / d.dot(&d);
    let foot = a + d * t;
    (r - (p - foot).norm()).max(-r / 2.0)
}

/// Angle between `v` and straight down, via `atan2` of the horizontal and
/// downward components.
pub fn tilt_from_vertical(v: &Vector3<f64>) -> f64 {
    (v.x.hypot(v.y)).atan2(-v.z)
}
