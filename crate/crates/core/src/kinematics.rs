//! Planar pose integration and trajectory characterization.
//!
//! The forward model integrates body-frame velocities into a world pose. The
//! inverse path turns pairs of tracking marks into poses and decomposes
//! finite-difference velocities into translational and lateral parts using
//! the heading at the start of each window.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resonance::BodyVelocity;

/// Below this angular rate the straight-line update is used.
const STRAIGHT_LINE_OMEGA: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("non-finite input to pose integration")]
    NonFinite,
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("tracking marks coincide at ({0}, {1})")]
    CoincidentMarks(f64, f64),
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamps are not strictly increasing at sample {0}")]
    NonMonotonic(usize),
    #[error("window {delta_t} s is incompatible with sample spacing {spacing} s over {samples} samples")]
    IncompatibleWindow { delta_t: f64, spacing: f64, samples: usize },
    #[error("trajectory csv")]
    Csv(#[from] csv::Error),
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Robot pose in the world frame: center in cm, heading in rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x_c: f64,
    pub y_c: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x_c: f64, y_c: f64, theta: f64) -> Self {
        Self {
            x_c,
            y_c,
            theta: wrap_angle(theta),
        }
    }

    pub fn heading(&self) -> [f64; 2] {
        [self.theta.cos(), self.theta.sin()]
    }

    /// Unit vector 90 degrees counter-clockwise of the heading.
    pub fn left(&self) -> [f64; 2] {
        [-self.theta.sin(), self.theta.cos()]
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.x_c).hypot(p[1] - self.y_c)
    }

    /// Signed angle from the heading to `p`, CCW positive, in `(-pi, pi]`.
    pub fn bearing_to(&self, p: [f64; 2]) -> f64 {
        wrap_angle((p[1] - self.y_c).atan2(p[0] - self.x_c) - self.theta)
    }

    /// Tracking marks on either side of the center, `half_width` cm apart from it.
    pub fn marks(&self, half_width: f64) -> ([f64; 2], [f64; 2]) {
        let l = self.left();
        (
            [self.x_c + half_width * l[0], self.y_c + half_width * l[1]],
            [self.x_c - half_width * l[0], self.y_c - half_width * l[1]],
        )
    }
}

/// Raw tracking data for one video frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub mark_left: [f64; 2],
    pub mark_right: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityDecomposition {
    /// Linear speed of the center, cm/s.
    pub v: f64,
    pub v_t: f64,
    pub v_l: f64,
    pub omega: f64,
}

/// Advance `p` by the body velocity `u` held constant for `dt` seconds.
///
/// Uses the exact solution: straight line when the turn rate is negligible,
/// otherwise the closed-form arc of a body translating and rotating at once.
pub fn integrate_pose(p: Pose, u: BodyVelocity, dt: f64) -> Result<Pose, KinematicsError> {
    let finite = [p.x_c, p.y_c, p.theta, u.v_t, u.v_l, u.omega, dt];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    if dt <= 0.0 {
        return Err(KinematicsError::NonPositiveDt(dt));
    }
    let (s0, c0) = p.theta.sin_cos();
    if u.omega.abs() < STRAIGHT_LINE_OMEGA {
        return Ok(Pose::new(
            p.x_c + (u.v_t * c0 - u.v_l * s0) * dt,
            p.y_c + (u.v_t * s0 + u.v_l * c0) * dt,
            p.theta,
        ));
    }
    let theta1 = p.theta + u.omega * dt;
    let (s1, c1) = theta1.sin_cos();
    let dx = (u.v_t * (s1 - s0) + u.v_l * (c1 - c0)) / u.omega;
    let dy = (-u.v_t * (c1 - c0) + u.v_l * (s1 - s0)) / u.omega;
    Ok(Pose::new(p.x_c + dx, p.y_c + dy, theta1))
}

/// Pose from a pair of rear tracking marks.
///
/// The center is the midpoint; the heading is the left-to-right direction
/// rotated by +90 degrees, so the left mark sits on the robot's left.
pub fn marks_to_pose(s: &TrajectorySample) -> Result<Pose, KinematicsError> {
    let dx = s.mark_right[0] - s.mark_left[0];
    let dy = s.mark_right[1] - s.mark_left[1];
    if dx.hypot(dy) < 1e-12 {
        return Err(KinematicsError::CoincidentMarks(s.mark_left[0], s.mark_left[1]));
    }
    Ok(Pose::new(
        0.5 * (s.mark_left[0] + s.mark_right[0]),
        0.5 * (s.mark_left[1] + s.mark_right[1]),
        dy.atan2(dx) + FRAC_PI_2,
    ))
}

/// Finite-difference velocity over one window, projected on the heading at
/// the window start.
pub fn decompose_window(p0: Pose, p1: Pose, dt: f64) -> Result<VelocityDecomposition, KinematicsError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(KinematicsError::NonPositiveDt(dt));
    }
    let xdot = (p1.x_c - p0.x_c) / dt;
    let ydot = (p1.y_c - p0.y_c) / dt;
    let omega = wrap_angle(p1.theta - p0.theta) / dt;
    let n_t = [p0.theta.cos(), p0.theta.sin()];
    // (cos(θ + π/2), sin(θ + π/2)) without the rounding of the shifted angle
    let n_l = [-n_t[1], n_t[0]];
    Ok(VelocityDecomposition {
        v: xdot.hypot(ydot),
        v_t: xdot * n_t[0] + ydot * n_t[1],
        v_l: xdot * n_l[0] + ydot * n_l[1],
        omega,
    })
}

/// Average per-window decompositions over a whole track.
///
/// Each component is averaged on its own, so the mean `v` generally differs
/// from the norm of the mean `(v_t, v_l)`. The window spans
/// `round(delta_t / spacing)` samples, where `spacing` is the mean sample
/// interval.
pub fn characterize_trajectory(
    samples: &[TrajectorySample],
    delta_t: f64,
) -> Result<VelocityDecomposition, KinematicsError> {
    if samples.len() < 2 {
        return Err(KinematicsError::TooFewSamples(samples.len()));
    }
    if let Some(i) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
        return Err(KinematicsError::NonMonotonic(i + 1));
    }
    let n = samples.len();
    let spacing = (samples[n - 1].t - samples[0].t) / (n - 1) as f64;
    let lag = (delta_t / spacing).round();
    if !delta_t.is_finite() || lag < 1.0 || lag as usize >= n {
        return Err(KinematicsError::IncompatibleWindow {
            delta_t,
            spacing,
            samples: n,
        });
    }
    let lag = lag as usize;
    let poses = samples
        .iter()
        .map(marks_to_pose)
        .collect::<Result<Vec<_>, _>>()?;

    let mut sum = VelocityDecomposition::default();
    let frames = n - lag;
    for i in 0..frames {
        let d = decompose_window(poses[i], poses[i + lag], samples[i + lag].t - samples[i].t)?;
        sum.v += d.v;
        sum.v_t += d.v_t;
        sum.v_l += d.v_l;
        sum.omega += d.omega;
    }
    let k = frames as f64;
    Ok(VelocityDecomposition {
        v: sum.v / k,
        v_t: sum.v_t / k,
        v_l: sum.v_l / k,
        omega: sum.omega / k,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    mark_left_x: f64,
    mark_left_y: f64,
    mark_right_x: f64,
    mark_right_y: f64,
}

/// Write `t,mark_left_x,mark_left_y,mark_right_x,mark_right_y` rows.
pub fn write_trajectory_csv<W: Write>(w: W, samples: &[TrajectorySample]) -> Result<(), KinematicsError> {
    let mut out = csv::Writer::from_writer(w);
    for s in samples {
        out.serialize(TrajectoryRow {
            t: s.t,
            mark_left_x: s.mark_left[0],
            mark_left_y: s.mark_left[1],
            mark_right_x: s.mark_right[0],
            mark_right_y: s.mark_right[1],
        })?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<TrajectorySample>, KinematicsError> {
    let mut input = csv::Reader::from_reader(r);
    let mut samples = Vec::new();
    for row in input.deserialize::<TrajectoryRow>() {
        let row = row?;
        samples.push(TrajectorySample {
            t: row.t,
            mark_left: [row.mark_left_x, row.mark_left_y],
            mark_right: [row.mark_right_x, row.mark_right_y],
        });
    }
    Ok(samples)
}

/// One row of a frequency sweep summary: `freq_khz,v,v_t,v_l,omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationRow {
    pub freq_khz: u32,
    pub v: f64,
    pub v_t: f64,
    pub v_l: f64,
    pub omega: f64,
}

impl CharacterizationRow {
    pub fn new(freq_khz: u32, d: VelocityDecomposition) -> Self {
        Self {
            freq_khz,
            v: d.v,
            v_t: d.v_t,
            v_l: d.v_l,
            omega: d.omega,
        }
    }
}

pub fn write_characterization_csv<W: Write>(w: W, rows: &[CharacterizationRow]) -> Result<(), KinematicsError> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_characterization_csv<R: Read>(r: R) -> Result<Vec<CharacterizationRow>, KinematicsError> {
    let mut input = csv::Reader::from_reader(r);
    input
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(KinematicsError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vel(v_t: f64, v_l: f64, omega: f64) -> BodyVelocity {
        BodyVelocity { v_t, v_l, omega }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!(close(wrap_angle(3.0 * PI), PI, 1e-12));
        assert!(close(wrap_angle(-FRAC_PI_2), -FRAC_PI_2, 1e-15));
        assert!(close(wrap_angle(TAU + 0.1), 0.1, 1e-12));
    }

    #[test]
    fn pure_translation() {
        let p = integrate_pose(Pose::new(0.0, 0.0, 0.0), vel(1.0, 0.0, 0.0), 2.0).unwrap();
        assert_eq!(p, Pose::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn pure_rotation() {
        let p = integrate_pose(Pose::new(0.0, 0.0, 0.0), vel(0.0, 0.0, FRAC_PI_2), 1.0).unwrap();
        assert!(close(p.x_c, 0.0, 1e-15) && close(p.y_c, 0.0, 1e-15));
        assert!(close(p.theta, FRAC_PI_2, 1e-15));
    }

    #[test]
    fn semicircle_matches_closed_form_arc() {
        let p = integrate_pose(Pose::new(0.0, 0.0, 0.0), vel(1.0, 0.0, 1.0), PI).unwrap();
        // x = R sin(wt), y = R (1 - cos(wt)) with R = 1
        assert!(close(p.x_c, PI.sin(), 1e-12));
        assert!(close(p.y_c, 1.0 - PI.cos(), 1e-12));
        assert!(close(p.theta, PI, 1e-12));
    }

    #[test]
    fn lateral_velocity_moves_left() {
        let p = integrate_pose(Pose::new(0.0, 0.0, 0.0), vel(0.0, 1.0, 0.0), 1.0).unwrap();
        assert!(close(p.y_c, 1.0, 1e-15) && close(p.x_c, 0.0, 1e-15));
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let p = Pose::new(0.0, 0.0, 0.0);
        assert!(matches!(integrate_pose(p, vel(f64::NAN, 0.0, 0.0), 1.0), Err(KinematicsError::NonFinite)));
        assert!(matches!(integrate_pose(p, vel(1.0, 0.0, 0.0), 0.0), Err(KinematicsError::NonPositiveDt(_))));
        assert!(matches!(
            integrate_pose(p, vel(1.0, 0.0, 0.0), f64::INFINITY),
            Err(KinematicsError::NonFinite)
        ));
    }

    fn sample(l: [f64; 2], r: [f64; 2]) -> TrajectorySample {
        TrajectorySample {
            t: 0.0,
            mark_left: l,
            mark_right: r,
        }
    }

    #[test]
    fn marks_examples() {
        let p = marks_to_pose(&sample([-1.0, 0.0], [1.0, 0.0])).unwrap();
        assert_eq!((p.x_c, p.y_c), (0.0, 0.0));
        assert!(close(p.theta, FRAC_PI_2, 1e-15));
        let p = marks_to_pose(&sample([0.0, 1.0], [0.0, -1.0])).unwrap();
        assert!(close(p.theta, 0.0, 1e-15));
        let p = marks_to_pose(&sample([1.0, 1.0], [3.0, 1.0])).unwrap();
        assert_eq!((p.x_c, p.y_c), (2.0, 1.0));
        assert!(close(p.theta, FRAC_PI_2, 1e-15));
        assert!(matches!(
            marks_to_pose(&sample([1.0, 1.0], [1.0, 1.0])),
            Err(KinematicsError::CoincidentMarks(..))
        ));
    }

    #[test]
    fn pose_marks_round_trip() {
        let p = Pose::new(3.0, -2.0, 0.7);
        let (l, r) = p.marks(1.5);
        let q = marks_to_pose(&sample(l, r)).unwrap();
        assert!(close(q.x_c, 3.0, 1e-12) && close(q.y_c, -2.0, 1e-12) && close(q.theta, 0.7, 1e-12));
    }

    #[test]
    fn decompose_examples() {
        let d = decompose_window(Pose::new(0.0, 0.0, 0.0), Pose::new(1.0, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(d, VelocityDecomposition { v: 1.0, v_t: 1.0, v_l: 0.0, omega: 0.0 });
        let d = decompose_window(Pose::new(0.0, 0.0, 0.0), Pose::new(0.0, 1.0, 0.0), 1.0).unwrap();
        assert!(close(d.v, 1.0, 1e-15) && close(d.v_t, 0.0, 1e-15) && close(d.v_l, 1.0, 1e-15));
        assert!(decompose_window(Pose::new(0.0, 0.0, 0.0), Pose::new(0.0, 1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn decompose_wraps_heading_difference() {
        let d = decompose_window(Pose::new(0.0, 0.0, 3.1), Pose::new(0.0, 0.0, -3.1), 1.0).unwrap();
        assert!(close(d.omega, TAU - 6.2, 1e-12));
    }

    /// Analytic oracle: a body on a circle of radius R with the heading
    /// tangent, sampled at t and t + dt.
    #[test]
    fn circular_motion_converges_as_dt_shrinks() {
        let (r, w) = (2.0, 0.1);
        let at = |t: f64| {
            let phi = w * t;
            Pose::new(r * phi.sin(), r * (1.0 - phi.cos()), phi)
        };
        for dt in [0.1, 0.01] {
            let d = decompose_window(at(1.0), at(1.0 + dt), dt).unwrap();
            assert!(close(d.v_t, r * w, 2.0 * dt * r * w), "v_t {}", d.v_t);
            assert!(d.v_l.abs() <= r * w * w * dt, "v_l {}", d.v_l);
            assert!(close(d.omega, w, 1e-12));
        }
    }

    #[test]
    fn characterize_constant_velocity_track() {
        let samples: Vec<_> = (0..50)
            .map(|i| {
                let t = i as f64 / 30.0;
                let p = Pose::new(2.0 * t, 1.0, 0.0);
                let (l, r) = p.marks(1.5);
                TrajectorySample { t, mark_left: l, mark_right: r }
            })
            .collect();
        let d = characterize_trajectory(&samples, 1.0 / 30.0).unwrap();
        assert!(close(d.v, 2.0, 1e-9) && close(d.v_t, 2.0, 1e-9));
        assert!(close(d.v_l, 0.0, 1e-9) && close(d.omega, 0.0, 1e-12));
        // Longer window over the same data gives the same means.
        let d2 = characterize_trajectory(&samples, 5.0 / 30.0).unwrap();
        assert!(close(d2.v_t, 2.0, 1e-9));
    }

    #[test]
    fn characterize_errors() {
        let one = [sample([0.0, 0.0], [1.0, 0.0])];
        assert!(matches!(characterize_trajectory(&one, 0.1), Err(KinematicsError::TooFewSamples(1))));
        let mut two = [sample([0.0, 0.0], [1.0, 0.0]), sample([0.0, 0.0], [1.0, 0.0])];
        two[1].t = 0.0;
        assert!(matches!(characterize_trajectory(&two, 0.1), Err(KinematicsError::NonMonotonic(1))));
        two[1].t = 0.1;
        assert!(matches!(
            characterize_trajectory(&two, 1.0),
            Err(KinematicsError::IncompatibleWindow { .. })
        ));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let samples = vec![
            TrajectorySample { t: 0.0, mark_left: [0.0, 1.5], mark_right: [0.0, -1.5] },
            TrajectorySample { t: 1.0 / 30.0, mark_left: [0.1, 1.5], mark_right: [0.1, -1.5] },
        ];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,mark_left_x,mark_left_y,mark_right_x,mark_right_y\n"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), samples);
    }

    proptest! {
        #[test]
        fn decomposition_preserves_speed(
            x0 in -50.0..50.0f64, y0 in -50.0..50.0f64, th0 in -3.2..3.2f64,
            x1 in -50.0..50.0f64, y1 in -50.0..50.0f64, th1 in -3.2..3.2f64,
            dt in 0.001..2.0f64,
        ) {
            let d = decompose_window(Pose::new(x0, y0, th0), Pose::new(x1, y1, th1), dt).unwrap();
            let lhs = d.v_t * d.v_t + d.v_l * d.v_l;
            let rhs = d.v * d.v;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300));
        }

        #[test]
        fn integrate_then_decompose_recovers_velocity(
            x in -20.0..20.0f64, y in -20.0..20.0f64, th in -3.1..3.1f64,
            v_t in -7.0..7.0f64, v_l in -3.0..3.0f64, omega in -0.2..0.2f64,
        ) {
            let dt = 1e-4;
            let p0 = Pose::new(x, y, th);
            let p1 = integrate_pose(p0, vel(v_t, v_l, omega), dt).unwrap();
            let d = decompose_window(p0, p1, dt).unwrap();
            let scale = v_t.abs().max(v_l.abs()).max(1.0);
            prop_assert!((d.v_t - v_t).abs() <= 1e-2 * scale);
            prop_assert!((d.v_l - v_l).abs() <= 1e-2 * scale);
            prop_assert!((d.omega - omega).abs() <= 1e-2 * omega.abs().max(1e-3));
        }

        #[test]
        fn marks_to_pose_is_translation_invariant_and_rotation_equivariant(
            lx in -10.0..10.0f64, ly in -10.0..10.0f64, ang in 0.0..std::f64::consts::TAU, len in 0.5..5.0f64,
            tx in -30.0..30.0f64, ty in -30.0..30.0f64, rot in -3.1..3.1f64,
        ) {
            let r = [lx + len * ang.cos(), ly + len * ang.sin()];
            let base = marks_to_pose(&sample([lx, ly], r)).unwrap();

            let shifted = marks_to_pose(&sample([lx + tx, ly + ty], [r[0] + tx, r[1] + ty])).unwrap();
            prop_assert!((shifted.x_c - base.x_c - tx).abs() < 1e-9);
            prop_assert!((shifted.y_c - base.y_c - ty).abs() < 1e-9);
            prop_assert!(wrap_angle(shifted.theta - base.theta).abs() < 1e-9);

            let (s, c) = rot.sin_cos();
            let rotp = |p: [f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            let turned = marks_to_pose(&sample(rotp([lx, ly]), rotp(r))).unwrap();
            let center = rotp([base.x_c, base.y_c]);
            prop_assert!((turned.x_c - center[0]).abs() < 1e-9);
            prop_assert!((turned.y_c - center[1]).abs() < 1e-9);
            prop_assert!(wrap_angle(turned.theta - base.theta - rot).abs() < 1e-9);
        }
    }
}
