//! Published reference numbers printed next to reproduced results.

/// Final trajectory-model loss per optimizer row, keyed by sweep config name.
pub const FINAL_LOSS: [(&str, f64); 6] = [("1", 0.084), ("2", 0.170), ("3", 0.040), ("4", 0.017), ("5", 0.034), ("6", 0.048)];

/// Mean and std of init dist, final dist, avg spacing, max spacing deviation
/// and avg angle, per optimizer row.
pub const TRAJECTORY_METRICS: [(&str, [(f64, f64); 5]); 6] = [
    ("1", [(0.429, 0.064), (0.247, 0.066), (0.078, 0.014), (0.352, 0.054), (153.4, 7.4)]),
    ("2", [(0.632, 0.129), (0.296, 0.083), (0.110, 0.027), (0.522, 0.104), (150.3, 4.3)]),
    ("3", [(0.265, 0.039), (0.202, 0.081), (0.064, 0.013), (0.214, 0.037), (142.3, 8.3)]),
    ("4", [(0.134, 0.108), (0.139, 0.051), (0.061, 0.014), (0.127, 0.083), (153.0, 8.8)]),
    ("5", [(0.183, 0.071), (0.239, 0.084), (0.063, 0.012), (0.194, 0.075), (157.5, 9.3)]),
    ("6", [(0.311, 0.052), (0.197, 0.062), (0.069, 0.012), (0.244, 0.051), (156.2, 8.3)]),
];

/// Fraction of trajectories of the best row with a turn sharper than the
/// corpus-mean minimum angle.
pub const SHARP_TURN_FRACTION: (&str, f64) = ("4", 0.54);

/// Single-trajectory inference latency, mean and std in microseconds (GPU).
pub const LATENCY_US: (f64, f64) = (993.0, 277.0);

pub fn final_loss(name: &str) -> Option<f64> {
    FINAL_LOSS.iter().find(|(n, _)| *n == name).map(|r| r.1)
}

pub fn trajectory_metrics(name: &str) -> Option<[(f64, f64); 5]> {
    TRAJECTORY_METRICS.iter().find(|(n, _)| *n == name).map(|r| r.1)
}
