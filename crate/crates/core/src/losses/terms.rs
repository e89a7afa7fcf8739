//! Objective terms over a window of frames. Each function returns the
//! unweighted term and, when `grads` is given, adds `scale` times its
//! gradient onto the per-frame body gradients.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::model::{BodyGrad, FrameParams, PosedBody, Vec3, NUM_JOINTS};
use crate::penetration::PenetrationReport;
use crate::segmentation::CenterSpec;

use super::gmm::{body_pose, GmmPrior};
use super::weights::LossWeights;

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("{what}: {a} entries for {b} frames")));
    }
    Ok(())
}

/// Geman-McClure `sigma^2 e^2 / (sigma^2 + e^2)` and its derivative with
/// respect to `e^2`.
pub fn geman_mcclure(e2: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let d = s2 + e2;
    (s2 * e2 / d, s2 * s2 / (d * d))
}

pub fn reprojection_loss(
    bodies: &[PosedBody],
    keypoints: &[Vec<[f64; 3]>],
    camera: &Camera,
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> Result<f64> {
    check_len("keypoint frames", keypoints.len(), bodies.len())?;
    let sigma = w.reprojection.sigma;
    let mut total = 0.0;
    for (i, (body, obs)) in bodies.iter().zip(keypoints).enumerate() {
        if obs.len() != body.keypoints.len() {
            return Err(Error::Input(format!(
                "frame {i}: {} observed keypoints, model has {}",
                obs.len(),
                body.keypoints.len()
            )));
        }
        for (k, (p, o)) in body.keypoints.iter().zip(obs).enumerate() {
            let conf = o[2];
            if conf < 0.0 || !conf.is_finite() {
                return Err(Error::Input(format!("frame {i} keypoint {k}: confidence {conf}")));
            }
            if conf == 0.0 {
                continue;
            }
            let (uv, jac) = camera.project_with_jacobian(p, k)?;
            let r = nalgebra::Vector2::new(uv.x - o[0], uv.y - o[1]);
            let (rho, drho) = geman_mcclure(r.norm_squared(), sigma);
            total += conf * rho;
            if let Some(g) = grads.as_deref_mut() {
                g[i].keypoints[k] += jac.transpose() * (r * (2.0 * conf * drho * scale));
            }
        }
    }
    Ok(total)
}

/// `lambda1 (G(theta) + sum lambda2 exp(gamma theta_j))` per frame.
pub fn pose_prior_loss(
    params: &[FrameParams],
    gmm: &GmmPrior,
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> Result<f64> {
    let l1 = w.pose.lambda1;
    let mut total = 0.0;
    for (i, p) in params.iter().enumerate() {
        let (g, dg) = gmm.evaluate_with_gradient(&body_pose(&p.theta))?;
        let mut frame = g;
        for b in &w.pose.bending {
            frame += b.lambda2 * (b.gamma * p.theta[b.joint][b.axis]).exp();
        }
        total += l1 * frame;
        if let Some(gr) = grads.as_deref_mut() {
            let s = scale * l1;
            for j in 1..NUM_JOINTS {
                for a in 0..3 {
                    gr[i].theta[j][a] += s * dg[3 * (j - 1) + a];
                }
            }
            for b in &w.pose.bending {
                gr[i].theta[b.joint][b.axis] +=
                    s * b.lambda2 * b.gamma * (b.gamma * p.theta[b.joint][b.axis]).exp();
            }
        }
    }
    Ok(total)
}

pub fn shape_prior_loss(
    params: &[FrameParams],
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> f64 {
    let l = w.shape.lambda;
    let mut total = 0.0;
    for (i, p) in params.iter().enumerate() {
        total += l * p.beta.iter().map(|b| b * b).sum::<f64>();
        if let Some(g) = grads.as_deref_mut() {
            for (gb, b) in g[i].beta.iter_mut().zip(&p.beta) {
                *gb += scale * l * 2.0 * b;
            }
        }
    }
    total
}

/// Keeps hips below shoulders and the waist below their mean height.
pub fn torso_prior_loss(
    bodies: &[PosedBody],
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> f64 {
    use crate::model::joints as J;
    let t = &w.torso;
    let mut total = 0.0;
    for (i, b) in bodies.iter().enumerate() {
        let z = |j: usize| b.joints[j].z;
        let z_hip = 0.5 * (z(J::L_HIP) + z(J::R_HIP));
        let z_sho = 0.5 * (z(J::L_SHOULDER) + z(J::R_SHOULDER));
        let d_hip = z_hip - z_sho;
        let d_wai = z(t.waist_joint) - 0.5 * (z_hip + z_sho);
        let e_hip = t.lambda1 * (t.omega_hip * d_hip).exp();
        let e_wai = t.lambda2 * (t.omega_wai * d_wai).exp();
        total += e_hip + e_wai;
        if let Some(g) = grads.as_deref_mut() {
            let gh = scale * e_hip * t.omega_hip;
            let gw = scale * e_wai * t.omega_wai;
            // dL/dz_hip and dL/dz_sho.
            let dz_hip = gh - 0.5 * gw;
            let dz_sho = -gh - 0.5 * gw;
            let j = &mut g[i].joints;
            j[J::L_HIP].z += 0.5 * dz_hip;
            j[J::R_HIP].z += 0.5 * dz_hip;
            j[J::L_SHOULDER].z += 0.5 * dz_sho;
            j[J::R_SHOULDER].z += 0.5 * dz_sho;
            j[t.waist_joint].z += gw;
        }
    }
    total
}

/// `weight * sum |a_k - b_k|^2`; adds `2 weight scale (a_k - b_k)` to
/// `ga` and subtracts it from `gb`.
fn sq_diff(
    a: &[Vec3],
    b: &[Vec3],
    weight: f64,
    scale: f64,
    mut ga: Option<&mut [Vec3]>,
    mut gb: Option<&mut [Vec3]>,
) -> f64 {
    let mut total = 0.0;
    let c = 2.0 * weight * scale;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        let d = x - y;
        total += d.norm_squared();
        if let Some(ga) = ga.as_deref_mut() {
            ga[k] += d * c;
        }
        if let Some(gb) = gb.as_deref_mut() {
            gb[k] -= d * c;
        }
    }
    weight * total
}

fn two_frames(grads: &mut [BodyGrad], i: usize) -> (&mut BodyGrad, &mut BodyGrad) {
    let (lo, hi) = grads.split_at_mut(i + 1);
    (&mut hi[0], &mut lo[i])
}

/// Parameter differences, joint and vertex velocities, and joint
/// accelerations.
pub fn smooth_loss(
    params: &[FrameParams],
    bodies: &[PosedBody],
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> Result<f64> {
    check_len("bodies", bodies.len(), params.len())?;
    let t = params.len();
    if t < 2 {
        return Err(Error::Input(format!("smoothness needs at least 2 frames, got {t}")));
    }
    let s = &w.smooth;
    let mut total = 0.0;
    for i in 0..t - 1 {
        let (p0, p1) = (&params[i], &params[i + 1]);
        let (b0, b1) = (&bodies[i], &bodies[i + 1]);
        let mut par = 0.0;
        for k in 0..p0.beta.len() {
            par += s.lambda1_par * (p1.beta[k] - p0.beta[k]).powi(2);
        }
        for j in 0..NUM_JOINTS {
            par += s.lambda2_par * (p1.theta[j] - p0.theta[j]).norm_squared();
        }
        par += s.lambda3_par * (p1.trans - p0.trans).norm_squared();
        total += par;
        match grads.as_deref_mut() {
            None => {
                total += sq_diff(&b1.joints, &b0.joints, s.lambda1_vel, 0.0, None, None);
                total += sq_diff(&b1.vertices, &b0.vertices, s.lambda2_vel, 0.0, None, None);
            }
            Some(g) => {
                let (g1, g0) = two_frames(g, i);
                let c = 2.0 * scale;
                for k in 0..p0.beta.len() {
                    let d = c * s.lambda1_par * (p1.beta[k] - p0.beta[k]);
                    g1.beta[k] += d;
                    g0.beta[k] -= d;
                }
                for j in 0..NUM_JOINTS {
                    let d = (p1.theta[j] - p0.theta[j]) * (c * s.lambda2_par);
                    g1.theta[j] += d;
                    g0.theta[j] -= d;
                }
                let d = (p1.trans - p0.trans) * (c * s.lambda3_par);
                g1.trans += d;
                g0.trans -= d;
                total += sq_diff(
                    &b1.joints,
                    &b0.joints,
                    s.lambda1_vel,
                    scale,
                    Some(&mut g1.joints),
                    Some(&mut g0.joints),
                );
                total += sq_diff(
                    &b1.vertices,
                    &b0.vertices,
                    s.lambda2_vel,
                    scale,
                    Some(&mut g1.vertices),
                    Some(&mut g0.vertices),
                );
            }
        }
    }
    for i in 1..t.saturating_sub(1) {
        let mut acc = 0.0;
        for j in 0..NUM_JOINTS {
            let a = bodies[i].joints[j] * 2.0 - bodies[i - 1].joints[j] - bodies[i + 1].joints[j];
            acc += a.norm_squared();
            if let Some(g) = grads.as_deref_mut() {
                let d = a * (2.0 * scale * s.lambda_acc);
                g[i].joints[j] += d * 2.0;
                g[i - 1].joints[j] -= d;
                g[i + 1].joints[j] -= d;
            }
        }
        total += s.lambda_acc * acc;
    }
    Ok(total)
}

/// Values of the previous window on the frames it shares with the
/// current one. `offset` indexes the current window.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapFrame {
    pub offset: usize,
    pub params: FrameParams,
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

pub fn consistency_loss(
    params: &[FrameParams],
    bodies: &[PosedBody],
    previous: Option<&[OverlapFrame]>,
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> Result<f64> {
    let Some(prev) = previous else {
        return Ok(0.0);
    };
    let c = &w.consistency;
    let mut total = 0.0;
    for o in prev {
        let i = o.offset;
        if i >= params.len() {
            return Err(Error::Input(format!(
                "overlap frame offset {i} outside a window of {} frames",
                params.len()
            )));
        }
        let b = &bodies[i];
        if o.vertices.len() != b.vertices.len() || o.joints.len() != b.joints.len() {
            return Err(Error::Input(format!("overlap frame {i} has mismatched sizes")));
        }
        let p = &params[i];
        let mut th = 0.0;
        for j in 0..NUM_JOINTS {
            th += (p.theta[j] - o.params.theta[j]).norm_squared();
        }
        total += c.lambda1 * th + c.lambda2 * (p.trans - o.params.trans).norm_squared();
        let (gt, gv, gj) = match grads.as_deref_mut() {
            Some(g) => {
                let g = &mut g[i];
                for j in 0..NUM_JOINTS {
                    g.theta[j] += (p.theta[j] - o.params.theta[j]) * (2.0 * scale * c.lambda1);
                }
                g.trans += (p.trans - o.params.trans) * (2.0 * scale * c.lambda2);
                (scale, Some(&mut g.vertices[..]), Some(&mut g.joints[..]))
            }
            None => (0.0, None, None),
        };
        total += sq_diff(&b.vertices, &o.vertices, c.lambda3, gt, gv, None);
        total += sq_diff(&b.joints, &o.joints, c.lambda4, gt, gj, None);
    }
    Ok(total)
}

/// `tanh^2(omega z)` with its derivative in `z`.
fn tanh2(omega: f64, z: f64) -> (f64, f64) {
    let t = (omega * z).tanh();
    (t * t, 2.0 * t * (1.0 - t * t) * omega)
}

/// Pulls vertices inside the contact band onto the plane and pushes
/// vertices below it back up.
pub fn bed_contact_loss(
    bodies: &[PosedBody],
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> f64 {
    let b = &w.bed;
    let mut total = 0.0;
    for (i, body) in bodies.iter().enumerate() {
        for (k, v) in body.vertices.iter().enumerate() {
            let z = v.z;
            let (val, dz) = if z > 0.0 && z < b.thre_bed {
                let (t, d) = tanh2(b.omega_in_bed, z);
                (b.lambda_in_bed * t, b.lambda_in_bed * d)
            } else if z < 0.0 {
                let (t, d) = tanh2(-b.omega_out_bed, z);
                (b.lambda_out_bed * t, b.lambda_out_bed * d)
            } else {
                continue;
            };
            total += val;
            if let Some(g) = grads.as_deref_mut() {
                g[i].vertices[k].z += scale * dz;
            }
        }
    }
    total
}

/// Parts of the self-contact term before the outer weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SelfContactParts {
    pub p_con: f64,
    pub p_isect: f64,
    pub push: f64,
    pub pull: f64,
}

impl SelfContactParts {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        let s = &w.self_contact;
        s.lambda_p_con * self.p_con
            + s.lambda_p_isect * self.p_isect
            + s.push_weight * self.push
            + s.pull_weight * self.pull
    }
}

/// Point-wise contact and penetration on the reported vertices, plus the
/// pair potentials. Which vertices are penetrating, their nearest target
/// vertices, and the pair counts come from `reports`; distances are
/// recomputed from the current vertices.
pub fn self_contact_loss(
    bodies: &[PosedBody],
    reports: &[PenetrationReport],
    centers: &CenterSpec,
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
    scale: f64,
) -> Result<SelfContactParts> {
    check_len("penetration reports", reports.len(), bodies.len())?;
    let s = &w.self_contact;
    let mut parts = SelfContactParts::default();
    for (i, (body, rep)) in bodies.iter().zip(reports).enumerate() {
        for h in &rep.hits {
            if h.vertex >= body.vertices.len() || h.nearest >= body.vertices.len() {
                return Err(Error::Input(format!("frame {i}: report vertex out of range")));
            }
            let d = body.vertices[h.vertex] - body.vertices[h.nearest];
            let dist = d.norm();
            let (weight, omega, slot) = if h.penetrating {
                (s.lambda_p_isect, s.omega_p_isect, &mut parts.p_isect)
            } else if h.sdf > 0.0 && dist < s.thre_dist {
                (s.lambda_p_con, s.omega_p_con, &mut parts.p_con)
            } else {
                continue;
            };
            let (val, dv) = tanh2(omega, dist);
            *slot += val;
            if let Some(g) = grads.as_deref_mut() {
                if dist > 0.0 {
                    let gv = d * (scale * weight * dv / dist);
                    g[i].vertices[h.vertex] += gv;
                    g[i].vertices[h.nearest] -= gv;
                }
            }
        }
        if rep.pairs.is_empty() {
            continue;
        }
        let c = centers.centers(body);
        for p in &rep.pairs {
            let diff = c[p.source] - c[p.target];
            let dist = diff.norm();
            let mut dd = 0.0;
            if p.penetrating > 0 {
                let e = p.penetrating as f64 * (-s.lambda_push * dist).exp();
                parts.push += e;
                dd += -s.push_weight * s.lambda_push * e;
            }
            if p.contact > 0 {
                let e = p.contact as f64 * (-s.lambda_pull * dist).exp();
                parts.pull -= e;
                dd += s.pull_weight * s.lambda_pull * e;
            }
            if let Some(g) = grads.as_deref_mut() {
                if dd != 0.0 && dist > 0.0 {
                    let gc = diff * (scale * dd / dist);
                    let g = &mut g[i];
                    centers.scatter_gradient(p.source, &gc, &mut g.joints, &mut g.keypoints);
                    centers.scatter_gradient(p.target, &(-gc), &mut g.joints, &mut g.keypoints);
                }
            }
        }
    }
    Ok(parts)
}
