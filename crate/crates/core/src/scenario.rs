//! Synthetic in-bed sequences for the doll: ground-truth motion, the
//! rendered keypoint track and a perturbed initialization.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::doll::{synth_doll, DollSpec};
use crate::error::{Error, Result};
use crate::losses::weights::GravityJoint;
use crate::model::{joints as J, BodyModel, FrameParams, Vec3, NUM_JOINTS};
use crate::rotation::{align_vectors, log_map, rodrigues};
use crate::sequence::MotionSequence;
use crate::track::KeypointTrack;

pub const FOCAL: f64 = 500.0;
pub const PRINCIPAL: (f64, f64) = (320.0, 240.0);
pub const CAMERA_HEIGHT: f64 = 1.6;
/// World `y` of the pelvis in the lying poses; puts the camera axis near
/// the shoulder line.
pub const PELVIS_Y: f64 = -0.35;

pub fn default_camera() -> Camera {
    Camera::top_view(FOCAL, PRINCIPAL.0, PRINCIPAL.1, CAMERA_HEIGHT).expect("valid camera")
}

/// Lies the standing body on its back, head towards `+y`: a quarter turn
/// of the root about `x`.
pub fn supine_root() -> Matrix3<f64> {
    rodrigues(&Vec3::new(-std::f64::consts::FRAC_PI_2, 0.0, 0.0))
}

/// Moves the body so that the pelvis sits above `(0, PELVIS_Y)` and the
/// lowest vertex touches `z = 0`.
pub fn settle(model: &BodyModel, p: &mut FrameParams) -> Result<()> {
    p.trans = Vec3::zeros();
    let body = model.forward(p)?;
    let low = body.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
    let pelvis = body.joints[J::PELVIS];
    p.trans = Vec3::new(-pelvis.x, PELVIS_Y - pelvis.y, -low);
    Ok(())
}

/// Lying on the back with the limbs straight out, as in the rest pose.
pub fn supine(model: &BodyModel) -> Result<FrameParams> {
    let mut p = FrameParams::default();
    p.theta[J::PELVIS] = log_map(&supine_root());
    settle(model, &mut p)?;
    Ok(p)
}

/// Lying on the back with arms and legs lowered onto the mattress.
pub fn resting(model: &BodyModel) -> Result<FrameParams> {
    let mut p = FrameParams::default();
    p.theta[J::PELVIS] = log_map(&supine_root());
    p.theta[J::L_SHOULDER] = Vec3::new(0.0, 0.0, 0.27);
    p.theta[J::L_ELBOW] = Vec3::new(0.0, 0.0, -0.27);
    p.theta[J::R_SHOULDER] = Vec3::new(0.0, 0.0, -0.27);
    p.theta[J::R_ELBOW] = Vec3::new(0.0, 0.0, 0.27);
    p.theta[J::L_HIP] = Vec3::new(0.085, 0.0, 0.0);
    p.theta[J::R_HIP] = Vec3::new(0.085, 0.0, 0.0);
    settle(model, &mut p)?;
    Ok(p)
}

/// Rotates `root` and then `mid` so that the posed `mid` joint lies along
/// `mid_dir` from `root` and the posed `end` joint along `end_dir` from
/// `mid`. Child twist is kept.
pub fn aim_chain(
    model: &BodyModel,
    p: &mut FrameParams,
    chain: [usize; 3],
    mid_dir: Vec3,
    end_dir: Vec3,
) -> Result<()> {
    let [root, mid, end] = chain;
    aim_joint(model, p, root, mid, mid_dir)?;
    aim_joint(model, p, mid, end, end_dir)
}

/// Rotates `joint` by the smallest rotation that points `child` along `dir`.
pub fn aim_joint(model: &BodyModel, p: &mut FrameParams, joint: usize, child: usize, dir: Vec3) -> Result<()> {
    let (body, cache) = model.forward_with_cache(p)?;
    let g = cache.global_rotations();
    let current = body.joints[child] - body.joints[joint];
    let new_global = align_vectors(&current, &dir) * g[joint];
    let parent = model.parents[joint].map(|q| g[q]).unwrap_or_else(Matrix3::identity);
    p.theta[joint] = log_map(&(parent.transpose() * new_global));
    Ok(())
}

/// Left forearm folded across the belly, elbow on the mattress beside the
/// torso.
pub fn forearm_on_torso(model: &BodyModel) -> Result<FrameParams> {
    let mut p = resting(model)?;
    aim_chain(
        model,
        &mut p,
        [J::L_SHOULDER, J::L_ELBOW, J::L_HAND],
        Vec3::new(0.4, -0.917, -0.3),
        Vec3::new(-0.6, 0.4, 1.0),
    )?;
    Ok(p)
}

/// Same as `forearm_on_torso` with the forearm sunk into the torso.
pub fn forearm_in_torso(model: &BodyModel) -> Result<FrameParams> {
    let mut p = resting(model)?;
    aim_chain(
        model,
        &mut p,
        [J::L_SHOULDER, J::L_ELBOW, J::L_HAND],
        Vec3::new(0.4, -0.917, -0.3),
        Vec3::new(-0.6, 0.25, 0.35),
    )?;
    Ok(p)
}

/// Partly turned about the body's long axis towards the left side, with
/// the left arm tucked along the body.
pub fn rolled(model: &BodyModel, angle: f64) -> Result<FrameParams> {
    let mut p = resting(model)?;
    let r = rodrigues(&Vec3::new(0.0, angle, 0.0)) * supine_root();
    p.theta[J::PELVIS] = log_map(&r);
    aim_chain(
        model,
        &mut p,
        [J::L_SHOULDER, J::L_ELBOW, J::L_HAND],
        Vec3::new(0.3, -1.0, 0.1),
        Vec3::new(0.2, -1.0, 0.1),
    )?;
    settle(model, &mut p)?;
    Ok(p)
}

/// The other point on the camera ray through `end` at distance `length`
/// from `anchor`, on the camera side when two exist.
fn flip_on_ray(camera_center: &Vec3, anchor: &Vec3, end: &Vec3, length: f64) -> Vec3 {
    let d = camera_center - end;
    let f = end - anchor;
    let a = d.norm_squared();
    let b = 2.0 * f.dot(&d);
    let c = f.norm_squared() - length * length;
    let disc = b * b - 4.0 * a * c;
    let s = if disc >= 0.0 {
        (-b + disc.sqrt()) / (2.0 * a)
    } else {
        -b / (2.0 * a)
    };
    end + d * s
}

/// Depth-ambiguous twin of `p`: the distal segment of every chain is
/// reflected along the camera ray through its end joint, so the 2D
/// projection is unchanged while the forearm or lower leg rises off the
/// bed.
pub fn lift_limbs(
    model: &BodyModel,
    camera: &Camera,
    p: &FrameParams,
    chains: &[[usize; 3]],
) -> Result<FrameParams> {
    let mut out = p.clone();
    let c = camera.center();
    for &[_, mid, end] in chains {
        let body = model.forward(&out)?;
        let (m, e) = (body.joints[mid], body.joints[end]);
        let e_new = flip_on_ray(&c, &m, &e, (e - m).norm());
        aim_joint(model, &mut out, mid, end, e_new - m)?;
    }
    Ok(out)
}

/// Like `lift_limbs` but both segments of each chain rise: the middle
/// joint moves up its camera ray and the end joint follows on its own.
pub fn lift_whole_limbs(
    model: &BodyModel,
    camera: &Camera,
    p: &FrameParams,
    chains: &[[usize; 3]],
) -> Result<FrameParams> {
    let mut out = p.clone();
    let c = camera.center();
    for &[root, mid, end] in chains {
        let body = model.forward(&out)?;
        let (r, m, e) = (body.joints[root], body.joints[mid], body.joints[end]);
        let m_new = flip_on_ray(&c, &r, &m, (m - r).norm());
        let e_new = flip_on_ray(&c, &m_new, &e, (e - m).norm());
        aim_chain(model, &mut out, [root, mid, end], m_new - r, e_new - m_new)?;
    }
    Ok(out)
}

pub const LIMB_CHAINS: [[usize; 3]; 4] = [
    [J::L_SHOULDER, J::L_ELBOW, J::L_HAND],
    [J::R_SHOULDER, J::R_ELBOW, J::R_HAND],
    [J::L_HIP, J::L_KNEE, J::L_ANKLE],
    [J::R_HIP, J::R_KNEE, J::R_ANKLE],
];

/// Projected limb lengths in the supine rest pose, one per gravity joint.
pub fn rest_projection_lengths(
    model: &BodyModel,
    camera: &Camera,
    joints: &[GravityJoint],
) -> Result<Vec<f64>> {
    let body = model.forward(&supine(model)?)?;
    let uv = camera.project(&body.keypoints)?;
    Ok(joints
        .iter()
        .map(|g| (uv[g.keypoint] - uv[g.limb_parent]).norm())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Rest, forearm folded onto the torso, rest, partial roll, rest.
    Full,
    /// Static rest pose; the initialization lifts both arms, upper arm and
    /// forearm, along the camera rays.
    Lifted,
    /// Static forearm-on-torso pose; the initialization sinks the forearm
    /// into the torso.
    ForearmTorso,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ScenarioKind::Full),
            "lifted" => Ok(ScenarioKind::Lifted),
            "forearm-torso" => Ok(ScenarioKind::ForearmTorso),
            _ => Err(Error::config("kind", format!("unknown scenario kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    /// Pixel noise standard deviation on the rendered keypoints.
    pub pixel_noise: f64,
    /// Initialization noise on every pose component, radians.
    pub theta_noise: f64,
    /// Initialization noise on the translation, meters.
    pub trans_noise: f64,
    pub doll: DollSpec,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, frames: usize, seed: u64) -> Self {
        ScenarioSpec {
            kind,
            frames,
            fps: 30.0,
            seed,
            pixel_noise: 2.0,
            theta_noise: 0.1,
            trans_noise: 0.05,
            doll: DollSpec::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::config("frames", "need at least 2 frames"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("fps", "must be positive"));
        }
        for (n, v) in [
            ("pixel_noise", self.pixel_noise),
            ("theta_noise", self.theta_noise),
            ("trans_noise", self.trans_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(n, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub model: BodyModel,
    pub camera: Camera,
    pub gt: MotionSequence,
    pub track: KeypointTrack,
    pub init: MotionSequence,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn blend(a: &FrameParams, b: &FrameParams, s: f64) -> FrameParams {
    let mut out = a.clone();
    for j in 0..NUM_JOINTS {
        out.theta[j] = a.theta[j] * (1.0 - s) + b.theta[j] * s;
    }
    for k in 0..out.beta.len() {
        out.beta[k] = a.beta[k] * (1.0 - s) + b.beta[k] * s;
    }
    out.trans = a.trans * (1.0 - s) + b.trans * s;
    out
}

/// Piecewise smoothstep through `(fraction of the sequence, pose)` keys.
fn keyframed(keys: &[(f64, FrameParams)], frames: usize) -> Vec<FrameParams> {
    (0..frames)
        .map(|i| {
            let t = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
            let k = keys.iter().rposition(|(at, _)| *at <= t).unwrap_or(0);
            if k + 1 >= keys.len() {
                return keys[k].1.clone();
            }
            let (t0, a) = &keys[k];
            let (t1, b) = &keys[k + 1];
            let s = if t1 > t0 { smoothstep((t - t0) / (t1 - t0)) } else { 1.0 };
            blend(a, b, s)
        })
        .collect()
}

pub fn ground_truth(model: &BodyModel, kind: ScenarioKind, frames: usize) -> Result<Vec<FrameParams>> {
    Ok(match kind {
        ScenarioKind::Full => {
            let rest = resting(model)?;
            let fold = forearm_on_torso(model)?;
            let roll = rolled(model, 0.35)?;
            keyframed(
                &[
                    (0.0, rest.clone()),
                    (0.08, rest.clone()),
                    (0.25, fold.clone()),
                    (0.42, fold),
                    (0.58, rest.clone()),
                    (0.72, roll),
                    (0.88, rest.clone()),
                    (1.0, rest),
                ],
                frames,
            )
        }
        ScenarioKind::Lifted => vec![resting(model)?; frames],
        ScenarioKind::ForearmTorso => vec![forearm_on_torso(model)?; frames],
    })
}

/// Builds a scenario; identical specs give bit-identical output.
pub fn synth_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let model = synth_doll(&spec.doll)?;
    let camera = default_camera();
    let gt = ground_truth(&model, spec.kind, spec.frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let pix = Normal::new(0.0, spec.pixel_noise).map_err(|e| Error::config("pixel_noise", e.to_string()))?;
    let mut joints = Vec::with_capacity(gt.len());
    for p in &gt {
        let body = model.forward(p)?;
        let uv = camera.project(&body.keypoints)?;
        joints.push(
            uv.iter()
                .map(|q| {
                    let (du, dv) = if spec.pixel_noise > 0.0 {
                        (pix.sample(&mut rng), pix.sample(&mut rng))
                    } else {
                        (0.0, 0.0)
                    };
                    [q.x + du, q.y + dv, 1.0]
                })
                .collect(),
        );
    }
    let track = KeypointTrack::new(spec.fps, joints)?;

    let base = match spec.kind {
        ScenarioKind::Full => gt.clone(),
        ScenarioKind::Lifted => {
            let lifted = lift_whole_limbs(&model, &camera, &gt[0], &LIMB_CHAINS[..2])?;
            vec![lifted; spec.frames]
        }
        ScenarioKind::ForearmTorso => vec![forearm_in_torso(&model)?; spec.frames],
    };
    let th = Normal::new(0.0, spec.theta_noise).map_err(|e| Error::config("theta_noise", e.to_string()))?;
    let tr = Normal::new(0.0, spec.trans_noise).map_err(|e| Error::config("trans_noise", e.to_string()))?;
    let init = base
        .into_iter()
        .map(|mut p| {
            if spec.theta_noise > 0.0 {
                for w in p.theta.iter_mut() {
                    for a in 0..3 {
                        w[a] += th.sample(&mut rng);
                    }
                }
            }
            if spec.trans_noise > 0.0 {
                for a in 0..3 {
                    p.trans[a] += tr.sample(&mut rng);
                }
            }
            p
        })
        .collect();

    Ok(Scenario {
        spec: *spec,
        model,
        camera,
        gt: MotionSequence::new(gt, spec.fps)?,
        track,
        init: MotionSequence::new(init, spec.fps)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doll() -> BodyModel {
        synth_doll(&DollSpec::default()).unwrap()
    }

    #[test]
    fn resting_limbs_lie_near_the_bed() {
        let m = doll();
        let b = m.forward(&resting(&m).unwrap()).unwrap();
        let low = b.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        assert!(low.abs() < 1e-12);
        for j in [J::L_HAND, J::R_HAND, J::L_ELBOW, J::R_ELBOW, J::L_ANKLE, J::R_ANKLE] {
            assert!(b.joints[j].z > 0.0 && b.joints[j].z < 0.06, "joint {j} at {}", b.joints[j].z);
        }
        assert!((b.joints[J::PELVIS].y - PELVIS_Y).abs() < 1e-12);
    }

    #[test]
    fn lifted_twin_projects_identically() {
        let m = doll();
        let cam = default_camera();
        let p = resting(&m).unwrap();
        let q = lift_limbs(&m, &cam, &p, &LIMB_CHAINS).unwrap();
        let a = cam.project(&m.forward(&p).unwrap().keypoints).unwrap();
        let bq = m.forward(&q).unwrap();
        let b = cam.project(&bq.keypoints).unwrap();
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            // Surface keypoints near the rotated joint shift slightly.
            assert!((x - y).norm() < 1.0, "keypoint {k}: {x} vs {y}");
        }
        assert!(bq.joints[J::L_HAND].z > 0.2);
    }

    #[test]
    fn whole_arm_lift_keeps_joint_projections() {
        let m = doll();
        let cam = default_camera();
        let p = resting(&m).unwrap();
        let q = lift_whole_limbs(&m, &cam, &p, &LIMB_CHAINS[..2]).unwrap();
        let (bp, bq) = (m.forward(&p).unwrap(), m.forward(&q).unwrap());
        let a = cam.project(&bp.joints).unwrap();
        let b = cam.project(&bq.joints).unwrap();
        for j in [J::L_ELBOW, J::L_HAND, J::R_ELBOW, J::R_HAND] {
            assert!((a[j] - b[j]).norm() < 1e-9, "joint {j}");
            assert!(bq.joints[j].z > bp.joints[j].z + 0.2, "joint {j} at {}", bq.joints[j].z);
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        let s = ScenarioSpec::new(ScenarioKind::Full, 12, 5);
        let a = synth_scenario(&s).unwrap();
        let b = synth_scenario(&s).unwrap();
        assert_eq!(a.track, b.track);
        assert_eq!(a.init, b.init);
        assert_eq!(a.gt, b.gt);
    }

    #[test]
    fn zero_pixel_noise_gives_exact_projections() {
        let mut s = ScenarioSpec::new(ScenarioKind::Lifted, 3, 1);
        s.pixel_noise = 0.0;
        let sc = synth_scenario(&s).unwrap();
        let uv = sc
            .camera
            .project(&sc.model.forward(&sc.gt.frames[1]).unwrap().keypoints)
            .unwrap();
        for (k, q) in uv.iter().enumerate() {
            assert_eq!(sc.track.frames[1].joints[k], [q.x, q.y, 1.0]);
        }
    }
}
