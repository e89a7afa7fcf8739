//! Evaluation metrics. 3D errors are reported in millimeters, 2D errors
//! in pixels.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::losses::GravityFlags;
use crate::model::{BodyModel, PosedBody, Vec3};
use crate::sequence::MotionSequence;
use crate::track::KeypointTrack;

fn check_shapes<T>(pred: &[Vec<T>], gt: &[Vec<T>], what: &str) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "{what}: {} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input(format!("{what}: no frames")));
    }
    let mut n = 0;
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(Error::Input(format!(
                "{what}: frame {i} has {} predicted vs {} ground-truth points",
                p.len(),
                g.len()
            )));
        }
        n += p.len();
    }
    Ok(n)
}

fn mean_distance(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], what: &str) -> Result<f64> {
    let n = check_shapes(pred, gt, what)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b).norm()))
        .sum();
    Ok(sum / n as f64 * 1000.0)
}

/// Mean joint error without any root alignment.
pub fn mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    mean_distance(pred, gt, "mpjpe")
}

pub fn mpve(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    mean_distance(pred, gt, "mpve")
}

/// Similarity transform `(s, R, t)` minimizing `sum |s R p + t - g|^2`.
pub fn procrustes(pred: &[Vec3], gt: &[Vec3]) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    if pred.len() != gt.len() || pred.len() < 3 {
        return Err(Error::Degenerate(format!(
            "procrustes needs at least 3 matched points, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<Vec3>() / n;
    let mg = gt.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (a, b) = (p - mp, g - mg);
        cov += b * a.transpose();
        var_p += a.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let scale_ref = s[0].max(f64::MIN_POSITIVE);
    if var_p <= 1e-18 || s[1] <= 1e-12 * scale_ref {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    let trace = s[0] * d[(0, 0)] + s[1] * d[(1, 1)] + s[2] * d[(2, 2)];
    let scale = trace / var_p;
    let t = mg - scale * r * mp;
    Ok((scale, r, t))
}

/// Joint error after per-frame similarity alignment of `pred` onto `gt`.
pub fn pa_mpjpe(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    let n = check_shapes(pred, gt, "pa_mpjpe")?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (s, r, t) = procrustes(p, g)?;
        sum += p.iter().zip(g).map(|(a, b)| (s * r * a + t - b).norm()).sum::<f64>();
    }
    Ok(sum / n as f64 * 1000.0)
}

fn second_differences(seq: &[Vec<Vec3>]) -> Vec<Vec<Vec3>> {
    seq.windows(3)
        .map(|w| (0..w[1].len()).map(|j| w[2][j] - 2.0 * w[1][j] + w[0][j]).collect())
        .collect()
}

/// Mean norm of the difference between predicted and true joint
/// accelerations, mm/s^2.
pub fn acc_err(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>], fps: f64) -> Result<f64> {
    check_shapes(pred, gt, "acc_err")?;
    if pred.len() < 3 {
        return Err(Error::Input(format!("acc_err needs at least 3 frames, got {}", pred.len())));
    }
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::Input(format!("acc_err needs a positive frame rate, got {fps}")));
    }
    let (ap, ag) = (second_differences(pred), second_differences(gt));
    let e: Vec<Vec<Vec3>> = ap
        .iter()
        .zip(&ag)
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| a - b).collect())
        .collect();
    let zero: Vec<Vec<Vec3>> = e.iter().map(|f| vec![Vec3::zeros(); f.len()]).collect();
    Ok(mean_distance(&e, &zero, "acc_err")? * fps * fps)
}

/// Mean norm of the predicted accelerations alone, mm/s^2.
pub fn acc_abs(pred: &[Vec<Vec3>], fps: f64) -> Result<f64> {
    let zero: Vec<Vec<Vec3>> = pred.iter().map(|f| vec![Vec3::zeros(); f.len()]).collect();
    acc_err(pred, &zero, fps)
}

pub fn mpjpe2d(pred: &[Vec<[f64; 2]>], gt: &[Vec<[f64; 2]>]) -> Result<f64> {
    let n = check_shapes(pred, gt, "mpjpe2d")?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])))
        .sum();
    Ok(sum / n as f64)
}

/// Projected model keypoints against a track, skipping zero-confidence
/// keypoints.
pub fn track_mpjpe2d(bodies: &[PosedBody], camera: &Camera, track: &KeypointTrack) -> Result<f64> {
    if bodies.len() != track.len() || bodies.is_empty() {
        return Err(Error::Input(format!(
            "mpjpe2d: {} posed frames vs {} track frames",
            bodies.len(),
            track.len()
        )));
    }
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for (b, f) in bodies.iter().zip(&track.frames) {
        if b.keypoints.len() != f.joints.len() {
            return Err(Error::Input(format!(
                "mpjpe2d: frame {} has {} model keypoints vs {} annotated",
                f.index,
                b.keypoints.len(),
                f.joints.len()
            )));
        }
        let uv = camera.project(&b.keypoints)?;
        let (mut p, mut g) = (Vec::new(), Vec::new());
        for (x, k) in uv.iter().zip(&f.joints) {
            if k[2] > 0.0 {
                p.push([x.x, x.y]);
                g.push([k[0], k[1]]);
            }
        }
        if !p.is_empty() {
            pred.push(p);
            gt.push(g);
        }
    }
    mpjpe2d(&pred, &gt)
}

/// Mean height, mm, of flagged-stationary joints that sit above the bed.
/// The boolean is false when no joint qualifies (the height is then 0).
pub fn static_limb_height(joints: &[Vec<Vec3>], flags: &GravityFlags) -> Result<(f64, bool)> {
    if joints.len() != flags.frames.len() {
        return Err(Error::Input(format!(
            "static_limb_height: {} frames vs {} flag frames",
            joints.len(),
            flags.frames.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (frame, fl) in joints.iter().zip(&flags.frames) {
        for (g, f) in flags.joints.iter().zip(fl) {
            let z = frame
                .get(g.joint)
                .ok_or_else(|| Error::Input(format!("static_limb_height: joint {} missing", g.joint)))?
                .z;
            if f.stationary && z > 0.0 {
                sum += z;
                n += 1;
            }
        }
    }
    if n == 0 {
        Ok((0.0, false))
    } else {
        Ok((sum / n as f64 * 1000.0, true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpve: f64,
    pub mpjpe2d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpve: f64,
    /// Present when the sequence has at least 3 frames.
    pub acc_err: Option<f64>,
    pub acc_err_definition: String,
    /// Mean predicted acceleration, the alternative reading of ACC-ERR.
    pub acc_abs: Option<f64>,
    pub mpjpe2d: Option<f64>,
    pub static_limb_height: Option<f64>,
    pub static_set_empty: bool,
    pub fps: f64,
    pub frames: Vec<FrameMetrics>,
}

/// Every metric for `pred` against `gt`; 2D and static-height entries
/// need a track and flags.
pub fn evaluate(
    model: &BodyModel,
    camera: &Camera,
    pred: &MotionSequence,
    gt: &MotionSequence,
    track: Option<(&KeypointTrack, &GravityFlags)>,
    fps: f64,
) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let pb: Vec<PosedBody> = pred.frames.iter().map(|p| model.forward(p)).collect::<Result<_>>()?;
    let gb: Vec<PosedBody> = gt.frames.iter().map(|p| model.forward(p)).collect::<Result<_>>()?;
    let pj: Vec<Vec<Vec3>> = pb.iter().map(|b| b.joints.clone()).collect();
    let gj: Vec<Vec<Vec3>> = gb.iter().map(|b| b.joints.clone()).collect();
    let pv: Vec<Vec<Vec3>> = pb.iter().map(|b| b.vertices.clone()).collect();
    let gv: Vec<Vec<Vec3>> = gb.iter().map(|b| b.vertices.clone()).collect();
    let mut frames = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let one = |a: &Vec<Vec3>, b: &Vec<Vec3>| (vec![a.clone()], vec![b.clone()]);
        let (a, b) = one(&pj[i], &gj[i]);
        let (va, vb) = one(&pv[i], &gv[i]);
        let mpjpe2d = match track {
            Some((t, _)) => Some(track_mpjpe2d(&pb[i..i + 1], camera, &KeypointTrack {
                fps: t.fps,
                frames: vec![t.frames[i].clone()],
            })?),
            None => None,
        };
        frames.push(FrameMetrics {
            index: i,
            mpjpe: mpjpe(&a, &b)?,
            pa_mpjpe: pa_mpjpe(&a, &b)?,
            mpve: mpve(&va, &vb)?,
            mpjpe2d,
        });
    }
    let (acc, abs) = if pred.len() >= 3 {
        (Some(acc_err(&pj, &gj, fps)?), Some(acc_abs(&pj, fps)?))
    } else {
        (None, None)
    };
    let (mpjpe2d, height, empty) = match track {
        Some((t, flags)) => {
            if t.len() != pred.len() {
                return Err(Error::Input(format!(
                    "keypoint track has {} frames, prediction {}",
                    t.len(),
                    pred.len()
                )));
            }
            let (h, defined) = static_limb_height(&pj, flags)?;
            (Some(track_mpjpe2d(&pb, camera, t)?), Some(h), !defined)
        }
        None => (None, None, false),
    };
    Ok(EvalReport {
        mpjpe: mpjpe(&pj, &gj)?,
        pa_mpjpe: pa_mpjpe(&pj, &gj)?,
        mpve: mpve(&pv, &gv)?,
        acc_err: acc,
        acc_err_definition: "pred-vs-gt".into(),
        acc_abs: abs,
        mpjpe2d,
        static_limb_height: height,
        static_set_empty: empty,
        fps,
        frames,
    })
}
