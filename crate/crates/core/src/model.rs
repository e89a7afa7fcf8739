//! Linear-blend-skinning body model with an analytic reverse pass.
//!
//! The world frame has the bed plane at `z = 0` with `z` pointing up.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::rotation::{normalize_axis_angle, rodrigues_with_jacobian};

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;
pub const NUM_POSE_FEATURES: usize = 9 * (NUM_JOINTS - 1);

pub type Vec3 = Vector3<f64>;

/// SMPL joint indices.
pub mod joints {
    pub const PELVIS: usize = 0;
    pub const L_HIP: usize = 1;
    pub const R_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const R_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const L_FOOT: usize = 10;
    pub const R_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const L_COLLAR: usize = 13;
    pub const R_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const L_SHOULDER: usize = 16;
    pub const R_SHOULDER: usize = 17;
    pub const L_ELBOW: usize = 18;
    pub const R_ELBOW: usize = 19;
    pub const L_WRIST: usize = 20;
    pub const R_WRIST: usize = 21;
    pub const L_HAND: usize = 22;
    pub const R_HAND: usize = 23;

    /// SMPL kinematic tree; `None` marks the root.
    pub const PARENTS: [Option<usize>; super::NUM_JOINTS] = [
        None,
        Some(0),
        Some(0),
        Some(0),
        Some(1),
        Some(2),
        Some(3),
        Some(4),
        Some(5),
        Some(6),
        Some(7),
        Some(8),
        Some(9),
        Some(9),
        Some(9),
        Some(12),
        Some(13),
        Some(14),
        Some(16),
        Some(17),
        Some(18),
        Some(19),
        Some(20),
        Some(21),
    ];
}

/// Default 2D keypoint layout carried by doll containers.
pub mod keypoints {
    pub const L_SHOULDER: usize = 0;
    pub const R_SHOULDER: usize = 1;
    pub const L_ELBOW: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const L_HAND: usize = 4;
    pub const R_HAND: usize = 5;
    pub const L_HIP: usize = 6;
    pub const R_HIP: usize = 7;
    pub const L_KNEE: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const L_ANKLE: usize = 10;
    pub const R_ANKLE: usize = 11;
    pub const NOSE: usize = 12;
    pub const L_EAR: usize = 13;
    pub const R_EAR: usize = 14;
    pub const COUNT: usize = 15;

    /// Body joint that each limb keypoint sits on (`None` for face points).
    pub const JOINT_OF: [Option<usize>; COUNT] = [
        Some(super::joints::L_SHOULDER),
        Some(super::joints::R_SHOULDER),
        Some(super::joints::L_ELBOW),
        Some(super::joints::R_ELBOW),
        Some(super::joints::L_HAND),
        Some(super::joints::R_HAND),
        Some(super::joints::L_HIP),
        Some(super::joints::R_HIP),
        Some(super::joints::L_KNEE),
        Some(super::joints::R_KNEE),
        Some(super::joints::L_ANKLE),
        Some(super::joints::R_ANKLE),
        None,
        None,
        None,
    ];
}

/// Compressed sparse rows; used for the regressors and the skinning weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseRows {
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for r in 0..rows {
            for c in 0..cols {
                let v = data[r * cols + c];
                if v != 0.0 {
                    entries.push((c, v));
                }
            }
            offsets.push(entries.len());
        }
        SparseRows { offsets, entries }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }

    fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        (0..self.rows())
            .map(|r| {
                self.row(r)
                    .iter()
                    .fold(Vec3::zeros(), |acc, &(c, w)| acc + points[c] * w)
            })
            .collect()
    }

    fn apply_transpose_add(&self, grads: &[Vec3], out: &mut [Vec3]) {
        for (r, g) in grads.iter().enumerate() {
            if *g == Vec3::zeros() {
                continue;
            }
            for &(c, w) in self.row(r) {
                out[c] += g * w;
            }
        }
    }
}

/// Per-frame parameters: 24 axis-angle rotations, 10 shape coefficients and
/// a world translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameParams {
    pub theta: [Vec3; NUM_JOINTS],
    pub beta: [f64; NUM_BETAS],
    pub trans: Vec3,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams {
            theta: [Vec3::zeros(); NUM_JOINTS],
            beta: [0.0; NUM_BETAS],
            trans: Vec3::zeros(),
        }
    }
}

impl FrameParams {
    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.beta.iter().all(|x| x.is_finite())
            && self.trans.iter().all(|x| x.is_finite())
    }

    /// Wraps every axis-angle row below `2 pi`.
    pub fn normalized(mut self) -> Self {
        for w in self.theta.iter_mut() {
            *w = normalize_axis_angle(w);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedBody {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
    pub keypoints: Vec<Vec3>,
}

/// Intermediate values kept from `forward` for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    rest_joints: Vec<Vec3>,
    corrected: Vec<Vec3>,
    local_r: [Matrix3<f64>; NUM_JOINTS],
    local_dr: [[Matrix3<f64>; 3]; NUM_JOINTS],
    global_r: [Matrix3<f64>; NUM_JOINTS],
    skin_r: [Matrix3<f64>; NUM_JOINTS],
}

impl ForwardCache {
    /// World rotation of each joint frame (excluding the global translation).
    pub fn global_rotations(&self) -> &[Matrix3<f64>; NUM_JOINTS] {
        &self.global_r
    }

    /// Shaped rest-pose joint locations.
    pub fn rest_joints(&self) -> &[Vec3] {
        &self.rest_joints
    }
}

/// Gradient of a scalar with respect to a posed body and, directly, to the
/// frame parameters. `BodyModel::backward` folds the body part into the
/// parameter part.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyGrad {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
    pub keypoints: Vec<Vec3>,
    pub theta: [Vec3; NUM_JOINTS],
    pub beta: [f64; NUM_BETAS],
    pub trans: Vec3,
}

impl BodyGrad {
    pub fn zeros(num_vertices: usize, num_keypoints: usize) -> Self {
        BodyGrad {
            vertices: vec![Vec3::zeros(); num_vertices],
            joints: vec![Vec3::zeros(); NUM_JOINTS],
            keypoints: vec![Vec3::zeros(); num_keypoints],
            theta: [Vec3::zeros(); NUM_JOINTS],
            beta: [0.0; NUM_BETAS],
            trans: Vec3::zeros(),
        }
    }

    pub fn clear(&mut self) {
        self.vertices.iter_mut().for_each(|v| *v = Vec3::zeros());
        self.joints.iter_mut().for_each(|v| *v = Vec3::zeros());
        self.keypoints.iter_mut().for_each(|v| *v = Vec3::zeros());
        self.theta = [Vec3::zeros(); NUM_JOINTS];
        self.beta = [0.0; NUM_BETAS];
        self.trans = Vec3::zeros();
    }
}

/// Gradient with respect to one frame's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub theta: [Vec3; NUM_JOINTS],
    pub beta: [f64; NUM_BETAS],
    pub trans: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub v_template: Vec<Vec3>,
    /// `[N x 3 x 10]`, row-major.
    pub shapedirs: Vec<f64>,
    /// `[N x 3 x 207]`, row-major; `None` when every entry is zero.
    pub posedirs: Option<Vec<f64>>,
    joint_regressor_dense: Vec<f64>,
    skinning_dense: Vec<f64>,
    keypoint_regressor_dense: Vec<f64>,
    pub parents: [Option<usize>; NUM_JOINTS],
    pub faces: Vec<[usize; 3]>,
    joint_regressor: SparseRows,
    skinning: SparseRows,
    keypoint_regressor: SparseRows,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "v_template",
    "shapedirs",
    "posedirs",
    "joint_regressor",
    "skinning_weights",
    "kintree_parents",
    "faces",
    "keypoint_regressor",
];

impl BodyModel {
    /// Builds a model from dense arrays and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        v_template: Vec<Vec3>,
        shapedirs: Vec<f64>,
        posedirs: Option<Vec<f64>>,
        joint_regressor: Vec<f64>,
        skinning_weights: Vec<f64>,
        parents: [Option<usize>; NUM_JOINTS],
        faces: Vec<[usize; 3]>,
        keypoint_regressor: Vec<f64>,
    ) -> Result<Self> {
        let n = v_template.len();
        let bad = |name: &str, reason: String| Error::InvalidTensor {
            name: name.to_string(),
            reason,
        };
        if n == 0 {
            return Err(bad("v_template", "no vertices".into()));
        }
        if shapedirs.len() != n * 3 * NUM_BETAS {
            return Err(bad("shapedirs", format!("length {}", shapedirs.len())));
        }
        let posedirs = match posedirs {
            Some(p) if p.len() != n * 3 * NUM_POSE_FEATURES => {
                return Err(bad("posedirs", format!("length {}", p.len())))
            }
            Some(p) if p.iter().all(|&x| x == 0.0) => None,
            other => other,
        };
        if joint_regressor.len() != NUM_JOINTS * n {
            return Err(bad("joint_regressor", format!("length {}", joint_regressor.len())));
        }
        if skinning_weights.len() != n * NUM_JOINTS {
            return Err(bad("skinning_weights", format!("length {}", skinning_weights.len())));
        }
        if keypoint_regressor.len() % n != 0 {
            return Err(bad("keypoint_regressor", format!("length {}", keypoint_regressor.len())));
        }
        let finite = |name: &str, xs: &[f64]| -> Result<()> {
            if xs.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(bad(name, "contains non-finite values".into()))
            }
        };
        finite(
            "v_template",
            &v_template.iter().flat_map(|v| v.iter().copied()).collect::<Vec<_>>(),
        )?;
        finite("shapedirs", &shapedirs)?;
        if let Some(p) = &posedirs {
            finite("posedirs", p)?;
        }
        finite("joint_regressor", &joint_regressor)?;
        finite("skinning_weights", &skinning_weights)?;
        finite("keypoint_regressor", &keypoint_regressor)?;

        for v in 0..n {
            let row = &skinning_weights[v * NUM_JOINTS..(v + 1) * NUM_JOINTS];
            if let Some(w) = row.iter().find(|&&w| w < 0.0) {
                return Err(bad("skinning_weights", format!("row {v} has negative weight {w}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(bad(
                    "skinning_weights",
                    format!("row {v} sums to {sum}, not normalized"),
                ));
            }
        }
        for j in 0..NUM_JOINTS {
            let sum: f64 = joint_regressor[j * n..(j + 1) * n].iter().sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(bad("joint_regressor", format!("row {j} sums to {sum}")));
            }
        }
        if parents[0].is_some() {
            return Err(bad("kintree_parents", "joint 0 must be the root".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(bad(
                        "kintree_parents",
                        format!("joint {j} has parent {p:?}; parents must precede children"),
                    ))
                }
            }
        }
        if let Some((f, face)) = faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&i| i >= n))
        {
            return Err(bad("faces", format!("face {f} {face:?} indexes past {n} vertices")));
        }

        let k = keypoint_regressor.len() / n;
        Ok(BodyModel {
            joint_regressor: SparseRows::from_dense(NUM_JOINTS, n, &joint_regressor),
            skinning: SparseRows::from_dense(n, NUM_JOINTS, &skinning_weights),
            keypoint_regressor: SparseRows::from_dense(k, n, &keypoint_regressor),
            v_template,
            shapedirs,
            posedirs,
            joint_regressor_dense: joint_regressor,
            skinning_dense: skinning_weights,
            keypoint_regressor_dense: keypoint_regressor,
            parents,
            faces,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.v_template.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoint_regressor.rows()
    }

    pub fn skinning_weights(&self, vertex: usize) -> &[(usize, f64)] {
        self.skinning.row(vertex)
    }

    pub fn joint_regressor_row(&self, joint: usize) -> &[(usize, f64)] {
        self.joint_regressor.row(joint)
    }

    pub fn keypoint_regressor_row(&self, keypoint: usize) -> &[(usize, f64)] {
        self.keypoint_regressor.row(keypoint)
    }

    /// Rest-pose joints of the unshaped template.
    pub fn template_joints(&self) -> Vec<Vec3> {
        self.joint_regressor.apply(&self.v_template)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        for name in TENSOR_NAMES {
            c.require(name)?;
        }
        let vt = c.require("v_template")?;
        vt.expect_shape(&[None, Some(3)])?;
        let n = vt.dims[0];
        c.require("shapedirs")?
            .expect_shape(&[Some(n), Some(3), Some(NUM_BETAS)])?;
        c.require("posedirs")?
            .expect_shape(&[Some(n), Some(3), Some(NUM_POSE_FEATURES)])?;
        c.require("joint_regressor")?
            .expect_shape(&[Some(NUM_JOINTS), Some(n)])?;
        c.require("skinning_weights")?
            .expect_shape(&[Some(n), Some(NUM_JOINTS)])?;
        let kt = c.require("kintree_parents")?;
        kt.expect_shape(&[Some(NUM_JOINTS)])?;
        let ft = c.require("faces")?;
        ft.expect_shape(&[None, Some(3)])?;
        c.require("keypoint_regressor")?.expect_shape(&[None, Some(n)])?;

        let v_template = vt
            .as_f64()
            .chunks_exact(3)
            .map(|v| Vec3::new(v[0], v[1], v[2]))
            .collect();
        let raw_parents = kt.as_i64()?;
        let mut parents = [None; NUM_JOINTS];
        for (j, &p) in raw_parents.iter().enumerate() {
            parents[j] = if p < 0 || (j == 0 && p as u64 >= u32::MAX as u64) {
                None
            } else {
                Some(p as usize)
            };
        }
        let raw_faces = ft.as_i64()?;
        if let Some(bad) = raw_faces.iter().find(|&&i| i < 0) {
            return Err(Error::InvalidTensor {
                name: "faces".into(),
                reason: format!("negative index {bad}"),
            });
        }
        let faces = raw_faces
            .chunks_exact(3)
            .map(|f| [f[0] as usize, f[1] as usize, f[2] as usize])
            .collect();
        BodyModel::new(
            v_template,
            c.require("shapedirs")?.as_f64(),
            Some(c.require("posedirs")?.as_f64()),
            c.require("joint_regressor")?.as_f64(),
            c.require("skinning_weights")?.as_f64(),
            parents,
            faces,
            c.require("keypoint_regressor")?.as_f64(),
        )
    }

    pub fn to_container(&self) -> Container {
        let n = self.num_vertices();
        let mut c = Container::new();
        c.insert(Tensor::f64(
            "v_template",
            vec![n, 3],
            self.v_template.iter().flat_map(|v| v.iter().copied()).collect(),
        ));
        c.insert(Tensor::f64("shapedirs", vec![n, 3, NUM_BETAS], self.shapedirs.clone()));
        c.insert(Tensor::f64(
            "posedirs",
            vec![n, 3, NUM_POSE_FEATURES],
            self.posedirs
                .clone()
                .unwrap_or_else(|| vec![0.0; n * 3 * NUM_POSE_FEATURES]),
        ));
        c.insert(Tensor::f64(
            "joint_regressor",
            vec![NUM_JOINTS, n],
            self.joint_regressor_dense.clone(),
        ));
        c.insert(Tensor::f64(
            "skinning_weights",
            vec![n, NUM_JOINTS],
            self.skinning_dense.clone(),
        ));
        c.insert(Tensor::i32(
            "kintree_parents",
            vec![NUM_JOINTS],
            self.parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i32))
                .collect(),
        ));
        c.insert(Tensor::i32(
            "faces",
            vec![self.faces.len(), 3],
            self.faces
                .iter()
                .flat_map(|f| f.iter().map(|&i| i as i32))
                .collect(),
        ));
        c.insert(Tensor::f64(
            "keypoint_regressor",
            vec![self.num_keypoints(), n],
            self.keypoint_regressor_dense.clone(),
        ));
        c
    }

    pub fn forward(&self, p: &FrameParams) -> Result<PosedBody> {
        self.forward_with_cache(p).map(|(body, _)| body)
    }

    /// Poses the model: shape and pose blend shapes, joint regression,
    /// kinematic chain, skinning, then the global translation.
    pub fn forward_with_cache(&self, p: &FrameParams) -> Result<(PosedBody, ForwardCache)> {
        if !p.is_finite() {
            return Err(Error::NonFinite("frame parameters".into()));
        }
        let n = self.num_vertices();

        let mut shaped = self.v_template.clone();
        if p.beta.iter().any(|&b| b != 0.0) {
            for (v, out) in shaped.iter_mut().enumerate() {
                for a in 0..3 {
                    let row = &self.shapedirs[(v * 3 + a) * NUM_BETAS..(v * 3 + a + 1) * NUM_BETAS];
                    out[a] += row.iter().zip(&p.beta).map(|(s, b)| s * b).sum::<f64>();
                }
            }
        }
        let rest_joints = self.joint_regressor.apply(&shaped);

        let mut local_r = [Matrix3::identity(); NUM_JOINTS];
        let mut local_dr = [[Matrix3::zeros(); 3]; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let (r, d) = rodrigues_with_jacobian(&p.theta[j]);
            local_r[j] = r;
            local_dr[j] = d;
        }

        let mut corrected = shaped;
        if let Some(posedirs) = &self.posedirs {
            let feature = pose_feature(&local_r);
            for (v, out) in corrected.iter_mut().enumerate() {
                for a in 0..3 {
                    let row = &posedirs
                        [(v * 3 + a) * NUM_POSE_FEATURES..(v * 3 + a + 1) * NUM_POSE_FEATURES];
                    out[a] += row.iter().zip(&feature).map(|(s, f)| s * f).sum::<f64>();
                }
            }
        }

        let mut global_r = [Matrix3::identity(); NUM_JOINTS];
        let mut global_t = [Vec3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            match self.parents[j] {
                None => {
                    global_r[j] = local_r[j];
                    global_t[j] = rest_joints[j];
                }
                Some(pj) => {
                    global_r[j] = global_r[pj] * local_r[j];
                    global_t[j] = global_r[pj] * (rest_joints[j] - rest_joints[pj]) + global_t[pj];
                }
            }
        }
        if p.theta.iter().all(|w| *w == Vec3::zeros()) {
            // Every transform is the identity: skip the arithmetic so that
            // the rest pose reproduces the template exactly.
            global_t.copy_from_slice(&rest_joints);
        }
        let skin_r = global_r;
        let skin_t: Vec<Vec3> = (0..NUM_JOINTS)
            .map(|j| global_t[j] - global_r[j] * rest_joints[j])
            .collect();

        let identity = p.theta.iter().all(|w| *w == Vec3::zeros());
        let mut vertices = Vec::with_capacity(n);
        for (v, rest) in corrected.iter().enumerate() {
            if identity {
                vertices.push(rest + p.trans);
                continue;
            }
            let mut out = p.trans;
            for &(j, w) in self.skinning.row(v) {
                out += (skin_r[j] * rest + skin_t[j]) * w;
            }
            vertices.push(out);
        }
        let joints: Vec<Vec3> = global_t.iter().map(|t| t + p.trans).collect();
        let keypoints = self.keypoint_regressor.apply(&vertices);

        Ok((
            PosedBody {
                vertices,
                joints,
                keypoints,
            },
            ForwardCache {
                rest_joints,
                corrected,
                local_r,
                local_dr,
                global_r,
                skin_r,
            },
        ))
    }

    /// Reverse pass: folds gradients on vertices, joints and keypoints
    /// (plus any direct parameter gradients already in `grad`) into a
    /// gradient on `(theta, beta, trans)`.
    pub fn backward(&self, cache: &ForwardCache, grad: &BodyGrad) -> ParamGrad {
        let n = self.num_vertices();
        let mut g_vertices = grad.vertices.clone();
        self.keypoint_regressor
            .apply_transpose_add(&grad.keypoints, &mut g_vertices);

        let mut g_trans = grad.trans;
        for g in g_vertices.iter().chain(grad.joints.iter()) {
            g_trans += g;
        }

        let mut g_skin_r = [Matrix3::zeros(); NUM_JOINTS];
        let mut g_skin_t = [Vec3::zeros(); NUM_JOINTS];
        let mut g_corrected = vec![Vec3::zeros(); n];
        for v in 0..n {
            let g = g_vertices[v];
            if g == Vec3::zeros() {
                continue;
            }
            let rest = cache.corrected[v];
            let outer = g * rest.transpose();
            let mut gc = Vec3::zeros();
            for &(j, w) in self.skinning.row(v) {
                g_skin_r[j] += outer * w;
                g_skin_t[j] += g * w;
                gc += cache.skin_r[j].tr_mul(&g) * w;
            }
            g_corrected[v] = gc;
        }

        let mut g_global_r = g_skin_r;
        let mut g_global_t = [Vec3::zeros(); NUM_JOINTS];
        let mut g_rest_joints = vec![Vec3::zeros(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            // skin_t = global_t - global_r * rest_joint
            g_global_t[j] = g_skin_t[j] + grad.joints[j];
            g_global_r[j] -= g_skin_t[j] * cache.rest_joints[j].transpose();
            g_rest_joints[j] -= cache.global_r[j].tr_mul(&g_skin_t[j]);
        }

        let mut g_local_r = [Matrix3::zeros(); NUM_JOINTS];
        for j in (0..NUM_JOINTS).rev() {
            match self.parents[j] {
                None => {
                    g_local_r[j] += g_global_r[j];
                    g_rest_joints[j] += g_global_t[j];
                }
                Some(pj) => {
                    let offset = cache.rest_joints[j] - cache.rest_joints[pj];
                    let gr = g_global_r[j];
                    let gt = g_global_t[j];
                    g_global_r[pj] += gr * cache.local_r[j].transpose() + gt * offset.transpose();
                    g_local_r[j] += cache.global_r[pj].tr_mul(&gr);
                    let g_offset = cache.global_r[pj].tr_mul(&gt);
                    g_global_t[pj] += gt;
                    g_rest_joints[j] += g_offset;
                    g_rest_joints[pj] -= g_offset;
                }
            }
        }

        if let Some(posedirs) = &self.posedirs {
            let mut g_feature = vec![0.0; NUM_POSE_FEATURES];
            for (v, g) in g_corrected.iter().enumerate() {
                if *g == Vec3::zeros() {
                    continue;
                }
                for a in 0..3 {
                    let row = &posedirs
                        [(v * 3 + a) * NUM_POSE_FEATURES..(v * 3 + a + 1) * NUM_POSE_FEATURES];
                    for (gf, s) in g_feature.iter_mut().zip(row) {
                        *gf += s * g[a];
                    }
                }
            }
            for j in 1..NUM_JOINTS {
                let block = &g_feature[9 * (j - 1)..9 * j];
                g_local_r[j] += Matrix3::from_row_slice(block);
            }
        }

        let mut g_theta = grad.theta;
        for j in 0..NUM_JOINTS {
            for c in 0..3 {
                g_theta[j][c] += g_local_r[j].component_mul(&cache.local_dr[j][c]).sum();
            }
        }

        let mut g_shaped = g_corrected;
        self.joint_regressor
            .apply_transpose_add(&g_rest_joints, &mut g_shaped);
        let mut g_beta = grad.beta;
        for (v, g) in g_shaped.iter().enumerate() {
            if *g == Vec3::zeros() {
                continue;
            }
            for a in 0..3 {
                let row = &self.shapedirs[(v * 3 + a) * NUM_BETAS..(v * 3 + a + 1) * NUM_BETAS];
                for (gb, s) in g_beta.iter_mut().zip(row) {
                    *gb += s * g[a];
                }
            }
        }

        ParamGrad {
            theta: g_theta,
            beta: g_beta,
            trans: g_trans,
        }
    }
}

/// Concatenated `(R_j - I)` for the non-root joints, row-major per block.
fn pose_feature(local_r: &[Matrix3<f64>; NUM_JOINTS]) -> Vec<f64> {
    let mut f = Vec::with_capacity(NUM_POSE_FEATURES);
    for r in local_r.iter().skip(1) {
        let d = r - Matrix3::identity();
        for row in 0..3 {
            for col in 0..3 {
                f.push(d[(row, col)]);
            }
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doll::{synth_doll, DollSpec};
    use crate::rotation::rodrigues;

    fn doll() -> BodyModel {
        synth_doll(&DollSpec::default()).unwrap()
    }

    #[test]
    fn identity_pose_returns_template() {
        let m = doll();
        let body = m.forward(&FrameParams::default()).unwrap();
        assert_eq!(body.vertices, m.v_template);
        let expected = m.template_joints();
        for (a, b) in body.joints.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_shifts_vertices() {
        let m = doll();
        let p = FrameParams {
            trans: Vec3::new(0.1, 0.0, 0.0),
            ..Default::default()
        };
        let body = m.forward(&p).unwrap();
        for (v, t) in body.vertices.iter().zip(&m.v_template) {
            assert_eq!(*v, t + Vec3::new(0.1, 0.0, 0.0));
        }
    }

    #[test]
    fn rigid_elbow_vertices_rotate_about_joint() {
        let m = doll();
        let mut p = FrameParams::default();
        let w = Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        p.theta[joints::L_ELBOW] = w;
        let body = m.forward(&p).unwrap();
        let elbow = m.template_joints()[joints::L_ELBOW];
        let r = rodrigues(&w);
        let mut checked = 0;
        for v in 0..m.num_vertices() {
            let sw = m.skinning_weights(v);
            if sw.len() == 1 && sw[0].0 == joints::L_ELBOW {
                let expected = r * (m.v_template[v] - elbow) + elbow;
                assert!((body.vertices[v] - expected).norm() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let m = doll();
        let mut p = FrameParams::default();
        p.trans.x = f64::NAN;
        assert!(matches!(m.forward(&p), Err(Error::NonFinite(_))));
    }

    #[test]
    fn container_round_trip_is_identity() {
        let m = doll();
        let back = BodyModel::from_container(&m.to_container()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_posedirs_is_named() {
        let mut c = doll().to_container();
        c.remove("posedirs");
        let err = BodyModel::from_container(&c).unwrap_err();
        assert_eq!(err.to_string(), "missing tensor posedirs");
    }

    #[test]
    fn unnormalized_skinning_row_is_rejected() {
        let m = doll();
        let mut c = m.to_container();
        let mut w = c.get("skinning_weights").unwrap().as_f64();
        let row = &mut w[0..NUM_JOINTS];
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x *= 0.8 / sum);
        c.insert(Tensor::f64("skinning_weights", vec![m.num_vertices(), NUM_JOINTS], w));
        let err = BodyModel::from_container(&c).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("skinning_weights") && text.contains("not normalized"), "{text}");
    }

    #[test]
    fn bad_parent_order_is_rejected() {
        let m = doll();
        let mut c = m.to_container();
        let mut parents: Vec<i32> = c.get("kintree_parents").unwrap().as_i64().unwrap()
            .into_iter().map(|p| p as i32).collect();
        parents[4] = 7;
        c.insert(Tensor::i32("kintree_parents", vec![NUM_JOINTS], parents));
        assert!(BodyModel::from_container(&c).is_err());
    }
}
