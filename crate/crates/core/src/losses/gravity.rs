//! Zero-velocity detection on 2D keypoint tracks and the gravity term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{keypoints as K, BodyGrad, PosedBody};

use super::weights::{GravityJoint, GravityWeights};

/// State of one gravity-constrained joint in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFlag {
    /// 2D speed in pixels per frame; `None` when a keypoint is missing.
    pub velocity: Option<f64>,
    pub stationary: bool,
    /// Exponent rate used when stationary.
    pub weight: f64,
}

/// `frames[i][g]` describes `joints[g]` in frame `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityFlags {
    pub joints: Vec<GravityJoint>,
    pub frames: Vec<Vec<JointFlag>>,
}

impl GravityFlags {
    pub fn window(&self, start: usize, end: usize) -> &[Vec<JointFlag>] {
        &self.frames[start..end]
    }
}

fn seen(kp: &[f64; 3]) -> bool {
    kp[2] > 0.0
}

fn dist2d(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite keypoints"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Strictly inside the convex hull of the visible shoulder and hip keypoints.
pub fn inside_torso(frame: &[[f64; 3]], point: (f64, f64)) -> bool {
    let corners: Vec<(f64, f64)> = [K::L_SHOULDER, K::R_SHOULDER, K::L_HIP, K::R_HIP]
        .iter()
        .filter(|&&k| seen(&frame[k]))
        .map(|&k| (frame[k][0], frame[k][1]))
        .collect();
    let hull = convex_hull(corners);
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b.0 - a.0) * (point.1 - a.1) - (b.1 - a.1) * (point.0 - a.0) > 0.0
    })
}

/// Flags computed from the 2D track only. `rest_lengths[g]` is the
/// rest-pose projected length of the limb ending at `cfg.joints[g]`.
pub fn zero_velocity_flags(
    frames: &[Vec<[f64; 3]>],
    rest_lengths: &[f64],
    cfg: &GravityWeights,
) -> Result<GravityFlags> {
    if frames.len() < 2 {
        return Err(Error::Input(format!(
            "zero-velocity detection needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    if rest_lengths.len() != cfg.joints.len() {
        return Err(Error::Input(format!(
            "{} rest lengths for {} gravity joints",
            rest_lengths.len(),
            cfg.joints.len()
        )));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() < K::COUNT {
            return Err(Error::Input(format!("frame {i} has {} keypoints", f.len())));
        }
    }
    let mut out = Vec::with_capacity(frames.len());
    for i in 0..frames.len() {
        let prev = if i == 0 { 1 } else { i - 1 };
        let (a, b) = if i == 0 { (&frames[1], &frames[0]) } else { (&frames[i], &frames[prev]) };
        let frame = &frames[i];
        let row = cfg
            .joints
            .iter()
            .zip(rest_lengths)
            .map(|(g, &rest)| {
                if !seen(&a[g.keypoint]) || !seen(&b[g.keypoint]) {
                    return JointFlag {
                        velocity: None,
                        stationary: false,
                        weight: 0.0,
                    };
                }
                let vel = dist2d(&a[g.keypoint], &b[g.keypoint]);
                let kp = &frame[g.keypoint];
                let parent = &frame[g.limb_parent];
                let lifted = seen(parent) && dist2d(kp, parent) < cfg.foreshortening * rest;
                let over_torso = g.hand && inside_torso(frame, (kp[0], kp[1]));
                JointFlag {
                    velocity: Some(vel),
                    stationary: vel < cfg.thre_vel,
                    weight: if lifted || over_torso {
                        cfg.omega_reduced
                    } else {
                        cfg.omega_full
                    },
                }
            })
            .collect();
        out.push(row);
    }
    Ok(GravityFlags {
        joints: cfg.joints.clone(),
        frames: out,
    })
}

/// `sum exp(w * z)` over stationary joints above the plane.
pub fn gravity_loss(
    bodies: &[PosedBody],
    flags: &[Vec<JointFlag>],
    joints: &[GravityJoint],
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> Result<f64> {
    if flags.len() != bodies.len() {
        return Err(Error::Input(format!(
            "{} flag frames for {} bodies",
            flags.len(),
            bodies.len()
        )));
    }
    let mut total = 0.0;
    for (i, (body, row)) in bodies.iter().zip(flags).enumerate() {
        if row.len() != joints.len() {
            return Err(Error::Input(format!("flag frame {i} has {} joints", row.len())));
        }
        for (g, f) in joints.iter().zip(row) {
            let z = body.joints[g.joint].z;
            if !f.stationary || z <= 0.0 {
                continue;
            }
            let e = (f.weight * z).exp();
            total += e;
            if let Some(gr) = grads.as_deref_mut() {
                gr[i].joints[g.joint].z += scale * f.weight * e;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::weights::default_gravity_joints;

    fn frame(offset: f64) -> Vec<[f64; 3]> {
        (0..K::COUNT)
            .map(|k| [100.0 + 20.0 * k as f64 + offset, 50.0 + 7.0 * k as f64, 1.0])
            .collect()
    }

    fn rest() -> Vec<f64> {
        vec![1.0; 8]
    }

    #[test]
    fn constant_track_is_stationary() {
        let f = vec![frame(0.0); 4];
        let flags = zero_velocity_flags(&f, &rest(), &GravityWeights::default()).unwrap();
        assert!(flags.frames.iter().flatten().all(|j| j.stationary && j.velocity == Some(0.0)));
    }

    #[test]
    fn fast_joint_is_exempt() {
        let f = vec![frame(0.0), frame(20.0), frame(40.0)];
        let flags = zero_velocity_flags(&f, &rest(), &GravityWeights::default()).unwrap();
        assert!(flags.frames.iter().flatten().all(|j| !j.stationary));
        assert_eq!(flags.frames[0][0].velocity, Some(20.0));
    }

    #[test]
    fn first_frame_copies_second() {
        let f = vec![frame(0.0), frame(3.0), frame(3.0)];
        let flags = zero_velocity_flags(&f, &rest(), &GravityWeights::default()).unwrap();
        assert_eq!(flags.frames[0][0].velocity, Some(3.0));
        assert_eq!(flags.frames[2][0].velocity, Some(0.0));
    }

    #[test]
    fn foreshortened_limb_gets_reduced_weight() {
        let cfg = GravityWeights::default();
        let mut f = frame(0.0);
        // Left knee at 50% of a 100 px rest length from the left hip.
        f[K::L_HIP] = [300.0, 300.0, 1.0];
        f[K::L_KNEE] = [350.0, 300.0, 1.0];
        let frames = vec![f.clone(), f];
        let mut rest = vec![1.0; 8];
        let g = cfg.joints.iter().position(|j| j.keypoint == K::L_KNEE).unwrap();
        rest[g] = 100.0;
        let flags = zero_velocity_flags(&frames, &rest, &cfg).unwrap();
        assert_eq!(flags.frames[0][g].weight, cfg.omega_reduced);
        rest[g] = 80.0;
        let flags = zero_velocity_flags(&frames, &rest, &cfg).unwrap();
        assert_eq!(flags.frames[0][g].weight, cfg.omega_full);
    }

    #[test]
    fn hand_over_torso_gets_reduced_weight() {
        let cfg = GravityWeights::default();
        let mut f = frame(0.0);
        f[K::L_SHOULDER] = [0.0, 0.0, 1.0];
        f[K::R_SHOULDER] = [100.0, 0.0, 1.0];
        f[K::L_HIP] = [0.0, 200.0, 1.0];
        f[K::R_HIP] = [100.0, 200.0, 1.0];
        f[K::L_HAND] = [50.0, 100.0, 1.0];
        f[K::R_HAND] = [150.0, 100.0, 1.0];
        let frames = vec![f.clone(), f];
        let flags = zero_velocity_flags(&frames, &[0.0; 8], &cfg).unwrap();
        assert_eq!(flags.frames[0][0].weight, cfg.omega_reduced);
        assert_eq!(flags.frames[0][1].weight, cfg.omega_full);
    }

    #[test]
    fn missing_keypoint_is_excluded() {
        let mut a = frame(0.0);
        a[K::L_HAND][2] = 0.0;
        let flags =
            zero_velocity_flags(&[a, frame(0.0)], &rest(), &GravityWeights::default()).unwrap();
        assert!(!flags.frames[0][0].stationary);
        assert_eq!(flags.frames[1][0].velocity, None);
    }

    #[test]
    fn single_frame_is_rejected() {
        assert!(zero_velocity_flags(&[frame(0.0)], &rest(), &GravityWeights::default()).is_err());
    }

    fn body_with_joint_z(z: f64) -> PosedBody {
        let mut joints = vec![crate::Vec3::zeros(); 24];
        joints[crate::model::joints::L_HAND].z = z;
        PosedBody {
            vertices: vec![],
            joints,
            keypoints: vec![],
        }
    }

    fn one_flag(stationary: bool) -> Vec<Vec<JointFlag>> {
        let mut row = vec![
            JointFlag {
                velocity: Some(0.0),
                stationary: false,
                weight: 40.0
            };
            8
        ];
        row[0].stationary = stationary;
        vec![row]
    }

    #[test]
    fn gravity_closed_forms() {
        let j = default_gravity_joints();
        let l = |z: f64, s: bool| gravity_loss(&[body_with_joint_z(z)], &one_flag(s), &j, None, 1.0).unwrap();
        assert_eq!(l(-0.005, true), 0.0);
        assert_eq!(l(0.3, false), 0.0);
        assert!((l(0.05, true) - 2f64.exp()).abs() < 1e-12);
    }
}
