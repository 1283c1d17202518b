//! Aggregation of episode logs into metric tables. Every number is a pure
//! function of the logs.

use crane_core::log::EpisodeLog;
use crane_core::Side;
use serde::{Deserialize, Serialize};

use crate::output::f6;

/// Mean and population standard deviation; NaN for an empty sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, n: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), n: v.len() }
    }
}

/// One condition of a metrics table. Step-level statistics pool all steps
/// of all episodes; `@lift` statistics use one value per episode that
/// reached the lift waypoint. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub episodes: usize,
    pub left: usize,
    pub right: usize,
    pub tracking: Stat,
    pub tracking_window: Stat,
    pub swing_lift: Stat,
    pub swing_window: Stat,
    pub tube: Stat,
    pub tube_window: Stat,
    pub success_rate: f64,
}

pub const CSV_HEADER: [&str; 17] = [
    "label",
    "episodes",
    "left",
    "right",
    "tracking_error_mean",
    "tracking_error_std",
    "tracking_error_window_mean",
    "tracking_error_window_std",
    "swing_lift_mean_deg",
    "swing_lift_std_deg",
    "swing_window_mean_deg",
    "swing_window_std_deg",
    "tube_delta_mean",
    "tube_delta_std",
    "tube_delta_window_mean",
    "tube_delta_window_std",
    "success_rate",
];

impl MetricsRow {
    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![self.label.clone(), self.episodes.to_string(), self.left.to_string(), self.right.to_string()];
        for s in [self.tracking, self.tracking_window, self.swing_lift, self.swing_window, self.tube, self.tube_window] {
            r.push(f6(s.mean));
            r.push(f6(s.std));
        }
        r.push(f6(self.success_rate));
        r
    }
}

/// Horizon the default window was chosen for.
pub const REFERENCE_HORIZON: u64 = 1500;

/// The configured window, or for horizons shorter than its end the window
/// scaled by `horizon / 1500`.
pub fn effective_window(window: [u64; 2], horizon: u64) -> [u64; 2] {
    if window[1] <= horizon {
        return window;
    }
    let scale = |s: u64| ((s as f64) * horizon as f64 / REFERENCE_HORIZON as f64).round() as u64;
    [scale(window[0]), scale(window[1]).max(scale(window[0]) + 1)]
}

/// Zero-based step index of a logged step (records count from 1).
fn index(step: u64) -> u64 {
    step - 1
}

pub fn aggregate(label: &str, logs: &[EpisodeLog], window: [u64; 2]) -> MetricsRow {
    let in_window = |step: u64| (window[0]..window[1]).contains(&index(step));
    let steps = || logs.iter().flat_map(|l| l.steps());
    let windowed = || steps().filter(|s| in_window(s.step));
    let summaries: Vec<_> = logs.iter().filter_map(|l| l.summary()).collect();
    let n = summaries.len();
    MetricsRow {
        label: label.to_string(),
        episodes: n,
        left: summaries.iter().filter(|s| s.side == Side::Left).count(),
        right: summaries.iter().filter(|s| s.side == Side::Right).count(),
        tracking: Stat::of(steps().map(|s| s.tracking_error)),
        tracking_window: Stat::of(windowed().map(|s| s.tracking_error)),
        swing_lift: Stat::of(summaries.iter().filter_map(|s| s.lift_swing).map(f64::to_degrees)),
        swing_window: Stat::of(windowed().map(|s| s.swing_angle.to_degrees())),
        tube: Stat::of(steps().map(|s| s.tube_delta)),
        tube_window: Stat::of(windowed().map(|s| s.tube_delta)),
        success_rate: if n > 0 { summaries.iter().filter(|s| s.success).count() as f64 / n as f64 } else { f64::NAN },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    /// Conditions that could not be evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl MetricsTable {
    pub fn row(&self, label: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}
