//! Pen-tip trajectories and the sensor readings they produce.

use nalgebra::{UnitQuaternion, Vector3};

use super::template::Point;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;
pub const DT: f64 = 0.01;

/// One 100 Hz step of the simulated pen.
#[derive(Debug, Clone, Copy)]
pub struct PenState {
    /// Tip position in mm, world frame (x right, y away from writer, z up).
    pub tip_mm: Vector3<f64>,
    pub contact: bool,
}

/// Minimum-jerk position profile on `[0, 1]`.
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Splits a polyline at vertices that turn by more than `max_turn` radians.
pub fn split_at_corners(points: &[Point], max_turn: f64) -> Vec<Vec<Point>> {
    let mut parts = Vec::new();
    let mut current = vec![points[0]];
    for i in 1..points.len() {
        current.push(points[i]);
        if i + 1 < points.len() {
            let a = [points[i][0] - points[i - 1][0], points[i][1] - points[i - 1][1]];
            let b = [points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1]];
            let na = a[0].hypot(a[1]);
            let nb = b[0].hypot(b[1]);
            if na > 0.0 && nb > 0.0 {
                let cos = ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0);
                if cos.acos() > max_turn {
                    parts.push(std::mem::replace(&mut current, vec![points[i]]));
                }
            }
        }
    }
    parts.push(current);
    parts
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Point at arc length `s` along the polyline.
pub fn point_at(points: &[Point], s: f64) -> Point {
    let mut remaining = s.max(0.0);
    for w in points.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if remaining <= seg && seg > 0.0 {
            let f = remaining / seg;
            return [w[0][0] + (w[1][0] - w[0][0]) * f, w[0][1] + (w[1][1] - w[0][1]) * f];
        }
        remaining -= seg;
    }
    *points.last().expect("non-empty polyline")
}

/// Appends `frames` samples of a minimum-jerk traversal of `points` (in mm).
/// The first appended sample is one step past the start, so consecutive
/// segments chain without repeating a position.
pub fn traverse(
    out: &mut Vec<PenState>,
    points: &[Point],
    frames: usize,
    contact: bool,
    lift_mm: f64,
) {
    let length = polyline_length(points);
    for j in 1..=frames {
        let tau = j as f64 / frames as f64;
        let p = point_at(points, length * min_jerk(tau));
        let z = lift_mm * (std::f64::consts::PI * tau).sin();
        out.push(PenState {
            tip_mm: Vector3::new(p[0], p[1], z),
            contact,
        });
    }
}

/// Second central difference of a sampled trajectory. Endpoints are padded by
/// repetition, i.e. the pen is at rest before and after the recording.
pub fn acceleration(positions: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            let prev = positions[i.saturating_sub(1)];
            let next = positions[(i + 1).min(n - 1)];
            (next - 2.0 * positions[i] + prev) / (DT * DT)
        })
        .collect()
}

/// Body-frame angular velocity (rad/s) from consecutive orientations, by
/// central difference.
pub fn angular_velocity(orientations: &[UnitQuaternion<f64>]) -> Vec<Vector3<f64>> {
    let n = orientations.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            if lo == hi {
                return Vector3::zeros();
            }
            let delta = orientations[lo].inverse() * orientations[hi];
            delta.scaled_axis() / (DT * (hi - lo) as f64)
        })
        .collect()
}
