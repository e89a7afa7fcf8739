//! Low-poly stand-in body: one closed capsule per limb chain, rigged to the
//! 24-joint SMPL kinematic tree.
//!
//! The doll stands along `+z` with its feet at `z = 0`, arms in a T-pose
//! along `±x` (left is `+x`) and its face towards `-y`. Components never
//! touch at rest, so each one is a closed surface on its own.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{joints as J, keypoints as K, BodyModel, Vec3, NUM_BETAS, NUM_JOINTS};

/// Rest-pose joint locations in meters.
pub fn rest_joint_positions() -> [Vec3; NUM_JOINTS] {
    let v = Vec3::new;
    [
        v(0.0, 0.0, 0.95),
        v(0.09, 0.0, 0.90),
        v(-0.09, 0.0, 0.90),
        v(0.0, 0.0, 1.05),
        v(0.09, 0.0, 0.50),
        v(-0.09, 0.0, 0.50),
        v(0.0, 0.0, 1.18),
        v(0.09, 0.0, 0.08),
        v(-0.09, 0.0, 0.08),
        v(0.0, 0.0, 1.32),
        v(0.09, -0.10, 0.03),
        v(-0.09, -0.10, 0.03),
        v(0.0, 0.0, 1.48),
        v(0.05, 0.0, 1.40),
        v(-0.05, 0.0, 1.40),
        v(0.0, 0.0, 1.56),
        v(0.10, 0.0, 1.40),
        v(-0.10, 0.0, 1.40),
        v(0.40, 0.0, 1.40),
        v(-0.40, 0.0, 1.40),
        v(0.65, 0.0, 1.40),
        v(-0.65, 0.0, 1.40),
        v(0.73, 0.0, 1.40),
        v(-0.73, 0.0, 1.40),
    ]
}

const TORSO_BOTTOM: f64 = 0.84;
const TORSO_TOP: f64 = 1.40;
const SHOULDER_Z: f64 = 1.40;
const HAND_X: f64 = 0.73;
const HIP_X: f64 = 0.09;
const ANKLE_Z: f64 = 0.08;
const CLEARANCE: f64 = 0.01;
/// Shape direction magnitude: `beta_k = 1` scales axis `k` by 10 %.
const SHAPE_SCALE: f64 = 0.1;
const REGRESSOR_SUPPORT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbRadii {
    pub torso: f64,
    pub head: f64,
    pub arm: f64,
    pub leg: f64,
}

impl Default for LimbRadii {
    fn default() -> Self {
        LimbRadii {
            torso: 0.11,
            head: 0.09,
            arm: 0.03,
            leg: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DollSpec {
    pub vertex_budget: usize,
    #[serde(default)]
    pub limb_radii: LimbRadii,
}

impl Default for DollSpec {
    fn default() -> Self {
        DollSpec {
            vertex_budget: 1500,
            limb_radii: LimbRadii::default(),
        }
    }
}

/// One capsule: axis from `start` along unit `dir` for `length` meters.
struct Tube {
    start: Vec3,
    dir: Vec3,
    length: f64,
    radius: f64,
    /// `(joint, axial start)`; each joint drives the axis from its start to
    /// the next entry's start.
    bones: Vec<(usize, f64)>,
}

struct Resolution {
    per_ring: usize,
    body_rings: usize,
    cap_rings: usize,
}

impl Tube {
    fn resolution(&self, edge: f64) -> Resolution {
        let per_ring = ((std::f64::consts::TAU * self.radius / edge).round() as usize).max(8);
        let body_rings = if self.length == 0.0 {
            1
        } else {
            ((self.length / edge).round() as usize + 1).max(2)
        };
        let cap_rings =
            ((std::f64::consts::FRAC_PI_2 * self.radius / edge).round() as usize).max(2);
        Resolution {
            per_ring,
            body_rings,
            cap_rings,
        }
    }

    fn vertex_count(&self, edge: f64) -> usize {
        let r = self.resolution(edge);
        r.per_ring * (r.body_rings + 2 * r.cap_rings) + 2
    }

    /// Appends vertices, faces and the axial coordinate of every vertex.
    fn build(
        &self,
        edge: f64,
        vertices: &mut Vec<Vec3>,
        faces: &mut Vec<[usize; 3]>,
        axial: &mut Vec<f64>,
    ) -> f64 {
        let res = self.resolution(edge);
        let helper = if self.dir.z.abs() < 0.9 {
            Vec3::z()
        } else {
            Vec3::x()
        };
        let e1 = self.dir.cross(&helper).normalize();
        let e2 = self.dir.cross(&e1);
        let base = vertices.len();

        // (axial position, ring radius) from the start pole to the end pole.
        let mut rings = Vec::new();
        for i in 1..=res.cap_rings {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / (res.cap_rings + 1) as f64;
            rings.push((-self.radius * a.cos(), self.radius * a.sin()));
        }
        for i in 0..res.body_rings {
            let s = if res.body_rings == 1 {
                0.0
            } else {
                self.length * i as f64 / (res.body_rings - 1) as f64
            };
            rings.push((s, self.radius));
        }
        for i in (1..=res.cap_rings).rev() {
            let a = std::f64::consts::FRAC_PI_2 * i as f64 / (res.cap_rings + 1) as f64;
            rings.push((self.length + self.radius * a.cos(), self.radius * a.sin()));
        }

        let m = res.per_ring;
        vertices.push(self.start - self.dir * self.radius);
        axial.push(-self.radius);
        for &(s, rho) in &rings {
            for k in 0..m {
                let phi = std::f64::consts::TAU * k as f64 / m as f64;
                vertices.push(
                    self.start + self.dir * s + (e1 * phi.cos() + e2 * phi.sin()) * rho,
                );
                axial.push(s);
            }
        }
        vertices.push(self.start + self.dir * (self.length + self.radius));
        axial.push(self.length + self.radius);

        let ring = |r: usize, k: usize| base + 1 + r * m + (k % m);
        let first_pole = base;
        let last_pole = base + 1 + rings.len() * m;
        for k in 0..m {
            faces.push([first_pole, ring(0, k + 1), ring(0, k)]);
        }
        for r in 0..rings.len() - 1 {
            for k in 0..m {
                let a = ring(r, k);
                let b = ring(r, k + 1);
                let c = ring(r + 1, k);
                let d = ring(r + 1, k + 1);
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }
        let lr = rings.len() - 1;
        for k in 0..m {
            faces.push([last_pole, ring(lr, k), ring(lr, k + 1)]);
        }

        if res.body_rings > 1 {
            self.length / (res.body_rings - 1) as f64
        } else {
            edge
        }
    }

    /// Skinning weights at axial coordinate `s`, blended linearly over two
    /// ring spacings on each side of every interior joint.
    fn weights(&self, s: f64, spacing: f64) -> Vec<(usize, f64)> {
        let ramp = |b: f64| ((s - (b - 2.0 * spacing)) / (4.0 * spacing)).clamp(0.0, 1.0);
        let nb = self.bones.len();
        let mut out = Vec::new();
        for k in 0..nb {
            let lo = if k == 0 { 1.0 } else { ramp(self.bones[k].1) };
            let hi = if k + 1 < nb { ramp(self.bones[k + 1].1) } else { 0.0 };
            let w = lo - hi;
            if w > 0.0 {
                out.push((self.bones[k].0, w));
            }
        }
        out
    }
}

/// Builds the doll model. Deterministic: identical specs give identical
/// models.
pub fn synth_doll(spec: &DollSpec) -> Result<BodyModel> {
    if spec.vertex_budget < 500 {
        return Err(Error::DollSpec(format!(
            "vertex_budget {} is below the minimum of 500",
            spec.vertex_budget
        )));
    }
    let r = spec.limb_radii;
    for (name, value, max) in [
        ("torso", r.torso, 0.2),
        ("head", r.head, 0.15),
        ("arm", r.arm, 0.06),
        ("leg", r.leg, 0.07),
    ] {
        if !(value > 0.0 && value <= max) {
            return Err(Error::DollSpec(format!(
                "limb radius {name} = {value} outside (0, {max}]"
            )));
        }
    }
    let joints = rest_joint_positions();
    let tubes = layout(&r)?;

    let count = |edge: f64| tubes.iter().map(|t| t.vertex_count(edge)).sum::<usize>();
    let (mut lo, mut hi) = (1e-3, 1.0);
    if count(hi) > spec.vertex_budget {
        return Err(Error::DollSpec(format!(
            "vertex_budget {} cannot close all capsules (needs {})",
            spec.vertex_budget,
            count(hi)
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if count(mid) > spec.vertex_budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let edge = hi;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut weights = Vec::new();
    for tube in &tubes {
        let mut axial = Vec::new();
        let spacing = tube.build(edge, &mut vertices, &mut faces, &mut axial);
        for s in axial {
            weights.push(tube.weights(s, spacing));
        }
    }
    let n = vertices.len();

    let mut skinning = vec![0.0; n * NUM_JOINTS];
    for (v, ws) in weights.iter().enumerate() {
        for &(j, w) in ws {
            skinning[v * NUM_JOINTS + j] += w;
        }
    }

    let mut shapedirs = vec![0.0; n * 3 * NUM_BETAS];
    for (v, p) in vertices.iter().enumerate() {
        for a in 0..3 {
            shapedirs[(v * 3 + a) * NUM_BETAS + a] = p[a] * SHAPE_SCALE;
        }
    }

    let mut joint_regressor = vec![0.0; NUM_JOINTS * n];
    let mut joint_rows = Vec::with_capacity(NUM_JOINTS);
    for (j, target) in joints.iter().enumerate() {
        let row = affine_row(&vertices, target)?;
        for &(v, w) in &row {
            joint_regressor[j * n + v] = w;
        }
        joint_rows.push(row);
    }

    let head_center = head_center(&r);
    let mut keypoint_regressor = vec![0.0; K::COUNT * n];
    for k in 0..K::COUNT {
        let row = match K::JOINT_OF[k] {
            Some(j) => joint_rows[j].clone(),
            None => {
                let offset = match k {
                    K::NOSE => Vec3::new(0.0, -r.head, 0.0),
                    K::L_EAR => Vec3::new(r.head, 0.0, 0.0),
                    _ => Vec3::new(-r.head, 0.0, 0.0),
                };
                affine_row(&vertices, &(head_center + offset))?
            }
        };
        for (v, w) in row {
            keypoint_regressor[k * n + v] = w;
        }
    }

    BodyModel::new(
        vertices,
        shapedirs,
        None,
        joint_regressor,
        skinning,
        J::PARENTS,
        faces,
        keypoint_regressor,
    )
}

fn head_center(r: &LimbRadii) -> Vec3 {
    Vec3::new(0.0, 0.0, TORSO_TOP + r.torso + CLEARANCE + r.head)
}

fn layout(r: &LimbRadii) -> Result<Vec<Tube>> {
    let arm_start = r.torso + r.arm + CLEARANCE;
    if arm_start >= 0.35 {
        return Err(Error::DollSpec("torso and arm radii leave no upper arm".into()));
    }
    // Highest leg start whose cap clears the torso's bottom cap.
    let clear = r.torso + r.leg + CLEARANCE;
    let drop = (clear * clear - HIP_X * HIP_X).max(0.0).sqrt();
    let leg_top = (TORSO_BOTTOM - drop).min(0.80);
    if leg_top <= 0.55 || ANKLE_Z - r.leg < 0.0 {
        return Err(Error::DollSpec("torso and leg radii leave no thigh".into()));
    }
    let joints = rest_joint_positions();
    let mut tubes = vec![
        Tube {
            start: Vec3::new(0.0, 0.0, TORSO_BOTTOM),
            dir: Vec3::z(),
            length: TORSO_TOP - TORSO_BOTTOM,
            radius: r.torso,
            bones: vec![
                (J::PELVIS, f64::NEG_INFINITY),
                (J::SPINE1, joints[J::SPINE1].z - TORSO_BOTTOM),
                (J::SPINE2, joints[J::SPINE2].z - TORSO_BOTTOM),
                (J::SPINE3, joints[J::SPINE3].z - TORSO_BOTTOM),
            ],
        },
        Tube {
            start: head_center(r),
            dir: Vec3::z(),
            length: 0.0,
            radius: r.head,
            bones: vec![(J::HEAD, f64::NEG_INFINITY)],
        },
    ];
    for (sign, shoulder, elbow, wrist, hand) in [
        (1.0, J::L_SHOULDER, J::L_ELBOW, J::L_WRIST, J::L_HAND),
        (-1.0, J::R_SHOULDER, J::R_ELBOW, J::R_WRIST, J::R_HAND),
    ] {
        tubes.push(Tube {
            start: Vec3::new(sign * arm_start, 0.0, SHOULDER_Z),
            dir: Vec3::x() * sign,
            length: HAND_X - arm_start,
            radius: r.arm,
            bones: vec![
                (shoulder, f64::NEG_INFINITY),
                (elbow, joints[elbow].x.abs() - arm_start),
                (wrist, joints[wrist].x.abs() - arm_start),
                (hand, joints[hand].x.abs() - arm_start),
            ],
        });
    }
    for (sign, hip, knee, ankle) in [
        (1.0, J::L_HIP, J::L_KNEE, J::L_ANKLE),
        (-1.0, J::R_HIP, J::R_KNEE, J::R_ANKLE),
    ] {
        tubes.push(Tube {
            start: Vec3::new(sign * HIP_X, 0.0, leg_top),
            dir: -Vec3::z(),
            length: leg_top - ANKLE_Z,
            radius: r.leg,
            bones: vec![
                (hip, f64::NEG_INFINITY),
                (knee, leg_top - joints[knee].z),
                (ankle, leg_top - joints[ankle].z),
            ],
        });
    }
    Ok(tubes)
}

/// Minimum-norm affine weights over the nearest vertices that reproduce
/// `target` exactly. The support grows until the target is reachable.
fn affine_row(vertices: &[Vec3], target: &Vec3) -> Result<Vec<(usize, f64)>> {
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| {
        (vertices[a] - target)
            .norm_squared()
            .total_cmp(&(vertices[b] - target).norm_squared())
            .then(a.cmp(&b))
    });
    let mut k = REGRESSOR_SUPPORT;
    loop {
        let mut support: Vec<usize> = order[..k.min(order.len())].to_vec();
        support.sort_unstable();
        // Offsets from the target keep the system well conditioned.
        let mut a = DMatrix::zeros(4, support.len());
        for (c, &v) in support.iter().enumerate() {
            for d in 0..3 {
                a[(d, c)] = vertices[v][d] - target[d];
            }
            a[(3, c)] = 1.0;
        }
        let b = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
        let w = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|_| Error::DollSpec(format!("degenerate regressor support at {target:?}")))?;
        if (&a * &w - &b).norm() < 1e-10 {
            return Ok(support.into_iter().zip(w.iter().copied()).collect());
        }
        if k >= order.len() {
            return Err(Error::DollSpec(format!("no affine support for {target:?}")));
        }
        k *= 2;
    }
}
