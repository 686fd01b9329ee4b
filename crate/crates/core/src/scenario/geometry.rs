//! Angle conventions and analytic derivatives of local-frame directions.
//!
//! Directions use azimuth in `(-pi, pi]` and elevation in `[-pi/2, pi/2]` with
//! `u = (cos el cos az, cos el sin az, sin el)` in the array's local frame.

use nalgebra::{Matrix2x3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::linalg::skew;

/// Azimuth/elevation pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub const fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    /// Direction in the horizontal plane of the local frame.
    pub const fn azimuth_only(azimuth: f64) -> Self {
        Self { azimuth, elevation: 0.0 }
    }

    pub fn unit_vector(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }

    /// Direction of a (not necessarily normalized) nonzero vector.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        let rho = v.x.hypot(v.y);
        Self {
            azimuth: v.y.atan2(v.x),
            elevation: v.z.atan2(rho),
        }
    }

    pub fn d_unit_d_azimuth(&self) -> Vector3<f64> {
        let (sa, ca) = self.azimuth.sin_cos();
        let ce = self.elevation.cos();
        Vector3::new(-ce * sa, ce * ca, 0.0)
    }

    pub fn d_unit_d_elevation(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(-se * ca, -se * sa, ce)
    }
}

/// Gradient of `(azimuth, elevation)` with respect to an unnormalized vector.
pub fn angle_gradient(v: &Vector3<f64>) -> Matrix2x3<f64> {
    let rho2 = v.x * v.x + v.y * v.y;
    let rho = rho2.sqrt();
    let r2 = rho2 + v.z * v.z;
    Matrix2x3::new(
        -v.y / rho2,
        v.x / rho2,
        0.0,
        -v.z * v.x / (rho * r2),
        -v.z * v.y / (rho * r2),
        rho / r2,
    )
}

/// Local-frame direction from an array at `origin` (attitude `orientation`)
/// toward `target`, with its derivatives.
#[derive(Debug, Clone)]
pub struct DirectionJacobian {
    pub direction: Direction,
    pub distance: f64,
    /// d(az, el) / d(target) in global coordinates.
    pub d_target: Matrix2x3<f64>,
    /// d(az, el) / d(origin) in global coordinates.
    pub d_origin: Matrix2x3<f64>,
    /// d(az, el) / d(rotation increment) with `R <- R exp([delta]x)`.
    pub d_orientation: Matrix2x3<f64>,
}

pub fn direction_jacobian(
    origin: &Vector3<f64>,
    orientation: &Rotation3<f64>,
    target: &Vector3<f64>,
) -> DirectionJacobian {
    let diff = target - origin;
    let local = orientation.inverse() * diff;
    let grad = angle_gradient(&local);
    let rt = orientation.inverse().into_inner();
    let d_target = grad * rt;
    DirectionJacobian {
        direction: Direction::from_vector(&local),
        distance: diff.norm(),
        d_target,
        d_origin: -d_target,
        d_orientation: grad * skew(&local),
    }
}

/// Gradient of `||a - b||` with respect to `a`.
pub fn distance_gradient(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let d = a - b;
    d / d.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_vector_round_trip() {
        let d = Direction::new(2.1, -0.4);
        let back = Direction::from_vector(&(3.0 * d.unit_vector()));
        assert_relative_eq!(back.azimuth, d.azimuth, epsilon = 1e-12);
        assert_relative_eq!(back.elevation, d.elevation, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let origin = Vector3::new(1.0, -2.0, 0.5);
        let rot = Rotation3::from_euler_angles(0.2, 0.3, -0.7);
        let target = Vector3::new(6.0, 3.0, 2.0);
        let jac = direction_jacobian(&origin, &rot, &target);
        let h = 1e-6;
        let eval = |o: &Vector3<f64>, r: &Rotation3<f64>, t: &Vector3<f64>| {
            let d = Direction::from_vector(&(r.inverse() * (t - o)));
            Vector3::new(d.azimuth, d.elevation, 0.0)
        };
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            let fd = (eval(&origin, &rot, &(target + e)) - eval(&origin, &rot, &(target - e))) / (2.0 * h);
            assert_relative_eq!(fd[0], jac.d_target[(0, i)], epsilon = 1e-8);
            assert_relative_eq!(fd[1], jac.d_target[(1, i)], epsilon = 1e-8);
            let r_p = crate::linalg::rotate_local(&rot, &e);
            let r_m = crate::linalg::rotate_local(&rot, &(-e));
            let fd = (eval(&origin, &r_p, &target) - eval(&origin, &r_m, &target)) / (2.0 * h);
            assert_relative_eq!(fd[0], jac.d_orientation[(0, i)], epsilon = 1e-8);
            assert_relative_eq!(fd[1], jac.d_orientation[(1, i)], epsilon = 1e-8);
        }
    }
}
