//! Axis-angle rotations and their derivatives.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the trigonometric coefficients switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Coefficients `a = sin t / t`, `b = (1 - cos t) / t^2` and their
/// derivatives divided by `t`.
fn coefficients(t2: f64) -> (f64, f64, f64, f64) {
    if t2 < SMALL_ANGLE * SMALL_ANGLE {
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let da = -1.0 / 3.0 + t2 / 30.0;
        let db = -1.0 / 12.0 + t2 / 180.0;
        (a, b, da, db)
    } else {
        let t = t2.sqrt();
        let (s, c) = t.sin_cos();
        let a = s / t;
        let b = (1.0 - c) / t2;
        let da = (t * c - s) / (t2 * t);
        let db = (t * s - 2.0 * (1.0 - c)) / (t2 * t2);
        (a, b, da, db)
    }
}

/// Rodrigues formula: rotation matrix for axis-angle vector `w`.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _, _) = coefficients(w.norm_squared());
    let k = hat(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation matrix and its three partial derivatives with respect to the
/// components of `w`.
pub fn rodrigues_with_jacobian(w: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let (a, b, da, db) = coefficients(w.norm_squared());
    let k = hat(w);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let mut d = [Matrix3::zeros(); 3];
    for (i, di) in d.iter_mut().enumerate() {
        let e = hat(&Vector3::ith(i, 1.0));
        // d(t)/dw_i = w_i / t, so d(a)/dw_i = (a'/t) w_i.
        *di = k * (da * w[i]) + e * a + k2 * (db * w[i]) + (e * k + k * e) * b;
    }
    (r, d)
}

/// Axis-angle vector of a rotation matrix, angle in `[0, pi]`.
pub fn log_map(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = cos.acos();
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if angle < 1e-8 {
        return v * 0.5;
    }
    if std::f64::consts::PI - angle < 1e-6 {
        // Near pi the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead.
        let m = (r + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]))
            .unwrap();
        let mut axis = m.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        return axis * angle;
    }
    v * (angle / (2.0 * angle.sin()))
}

/// Smallest rotation taking unit direction `from` onto unit direction `to`.
pub fn align_vectors(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let f = from.normalize();
    let t = to.normalize();
    let axis = f.cross(&t);
    let s = axis.norm();
    let c = f.dot(&t);
    if s < 1e-12 {
        if c > 0.0 {
            return Matrix3::identity();
        }
        let helper = if f.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = f.cross(&helper).normalize();
        return rodrigues(&(perp * std::f64::consts::PI));
    }
    rodrigues(&(axis / s * s.atan2(c)))
}

/// Wraps an axis-angle vector so that its norm is below `2 pi` while
/// describing the same rotation.
pub fn normalize_axis_angle(w: &Vector3<f64>) -> Vector3<f64> {
    let tau = std::f64::consts::TAU;
    let n = w.norm();
    if n < tau {
        return *w;
    }
    let wrapped = n.rem_euclid(tau);
    w * (wrapped / n)
}
