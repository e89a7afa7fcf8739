//! Central-difference checks of the body-model reverse pass and of every
//! objective term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::losses::{
    stage_objective, zero_velocity_flags, GmmPrior, GravityFlags, LossWeights, OverlapFrame, Stage,
    Term, WindowInputs,
};
use crate::model::{BodyGrad, BodyModel, FrameParams, ParamGrad, PosedBody, Vec3, NUM_BETAS, NUM_JOINTS};
use crate::penetration::{bench::random_pose, Detector, DetectorConfig, PenetrationReport};
use crate::rotation::log_map;
use crate::scenario::{default_camera, rest_projection_lengths, settle, supine_root};
use crate::segmentation::{CenterSpec, SegmentMap};

pub const TOLERANCE: f64 = 1e-4;
const PARAMS_PER_FRAME: usize = 3 * NUM_JOINTS + NUM_BETAS + 3;
/// Keep-out distance from switching surfaces, in the switching quantity.
const MARGIN: f64 = 1e-4;
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub eps: f64,
    pub states: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: 1e-5,
            states: 10,
            frames: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub states: usize,
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tolerance)
    }
}

/// `max |analytic - numeric| / max |numeric|`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let abs = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max);
    (abs / scale.max(1e-300), abs)
}

fn flatten(frames: &[FrameParams]) -> Vec<f64> {
    let mut x = Vec::with_capacity(frames.len() * PARAMS_PER_FRAME);
    for f in frames {
        x.extend(f.theta.iter().flat_map(|w| w.iter().copied()));
        x.extend_from_slice(&f.beta);
        x.extend(f.trans.iter().copied());
    }
    x
}

fn unflatten(x: &[f64]) -> Vec<FrameParams> {
    x.chunks(PARAMS_PER_FRAME)
        .map(|c| {
            let mut f = FrameParams::default();
            for j in 0..NUM_JOINTS {
                f.theta[j] = Vec3::new(c[3 * j], c[3 * j + 1], c[3 * j + 2]);
            }
            let o = 3 * NUM_JOINTS;
            f.beta.copy_from_slice(&c[o..o + NUM_BETAS]);
            f.trans = Vec3::new(c[o + NUM_BETAS], c[o + NUM_BETAS + 1], c[o + NUM_BETAS + 2]);
            f
        })
        .collect()
}

fn flatten_grad(grads: &[ParamGrad]) -> Vec<f64> {
    let mut x = Vec::with_capacity(grads.len() * PARAMS_PER_FRAME);
    for g in grads {
        x.extend(g.theta.iter().flat_map(|w| w.iter().copied()));
        x.extend_from_slice(&g.beta);
        x.extend(g.trans.iter().copied());
    }
    x
}

fn central_difference<F>(x: &[f64], eps: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += eps;
            b[i] -= eps;
            Ok((f(&a)? - f(&b)?) / (2.0 * eps))
        })
        .collect()
}

fn lying(rng: &mut ChaCha8Rng) -> FrameParams {
    let mut p = random_pose(rng);
    p.theta[0] = log_map(&supine_root());
    p
}

/// A posed window plus everything the objective needs around it.
struct State {
    frames: Vec<FrameParams>,
    keypoints: Vec<Vec<[f64; 3]>>,
    previous: Vec<OverlapFrame>,
    reports: Vec<PenetrationReport>,
}

pub struct Gradchecker<'a> {
    model: &'a BodyModel,
    centers: &'a CenterSpec,
    gmm: &'a GmmPrior,
    camera: Camera,
    detector: Detector,
    weights: LossWeights,
    flags: GravityFlags,
    cfg: GradcheckConfig,
}

impl<'a> Gradchecker<'a> {
    /// `weights` supplies the inner weights; top-level weights are
    /// replaced term by term.
    pub fn new(
        model: &'a BodyModel,
        segments: &SegmentMap,
        centers: &'a CenterSpec,
        gmm: &'a GmmPrior,
        weights: &LossWeights,
        cfg: GradcheckConfig,
    ) -> Result<Self> {
        if cfg.frames < 3 {
            return Err(Error::config("frames", "need at least 3 frames for acceleration terms"));
        }
        if !(cfg.eps > 0.0) || cfg.states == 0 {
            return Err(Error::config("eps/states", "must be positive"));
        }
        weights.validate()?;
        let camera = default_camera();
        let mut dc = DetectorConfig::all_pairs(segments);
        dc.contact_threshold = weights.self_contact.thre_dist;
        let detector = Detector::new(segments, dc)?;
        let mut checker = Gradchecker {
            model,
            centers,
            gmm,
            camera,
            detector,
            weights: weights.clone(),
            flags: GravityFlags {
                joints: vec![],
                frames: vec![],
            },
            cfg,
        };
        checker.flags = checker.make_flags()?;
        Ok(checker)
    }

    /// Flags from a nearly still track of a settled pose: every gravity
    /// joint is stationary, speeds sit far from the threshold.
    fn make_flags(&self) -> Result<GravityFlags> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37);
        let mut p = lying(&mut rng);
        settle(self.model, &mut p)?;
        let kp = self.camera.project(&self.model.forward(&p)?.keypoints)?;
        let track: Vec<Vec<[f64; 3]>> = (0..self.cfg.frames)
            .map(|i| kp.iter().map(|u| [u.x + 0.1 * i as f64, u.y, 1.0]).collect())
            .collect();
        let g = &self.weights.gravity;
        let rest = rest_projection_lengths(self.model, &self.camera, &g.joints)?;
        let flags = zero_velocity_flags(&track, &rest, g)?;
        for f in flags.frames.iter().flatten() {
            if let Some(v) = f.velocity {
                if (v - g.thre_vel).abs() < 1e-3 {
                    return Err(Error::Degenerate("gradcheck track speed sits on the threshold".into()));
                }
            }
        }
        Ok(flags)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<State> {
        let n = self.cfg.frames;
        let mut base = lying(rng);
        for b in base.beta.iter_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        settle(self.model, &mut base)?;
        let mut frames = Vec::with_capacity(n);
        for _ in 0..n {
            let mut f = base.clone();
            for j in 0..NUM_JOINTS {
                for a in 0..3 {
                    f.theta[j][a] += rng.gen_range(-0.05..0.05);
                }
            }
            for b in f.beta.iter_mut() {
                *b += rng.gen_range(-0.05..0.05);
            }
            f.trans += Vec3::new(
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.015..0.015),
            );
            frames.push(f);
        }
        let bodies = self.pose(&frames)?;
        let mut keypoints = Vec::with_capacity(n);
        for b in &bodies {
            let uv = self.camera.project(&b.keypoints)?;
            keypoints.push(
                uv.iter()
                    .map(|u| {
                        let conf = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.3..1.0) };
                        [u.x + rng.gen_range(-40.0..40.0), u.y + rng.gen_range(-40.0..40.0), conf]
                    })
                    .collect(),
            );
        }
        let mut previous = Vec::new();
        for offset in 0..2.min(n) {
            let mut p = frames[offset].clone();
            for j in 0..NUM_JOINTS {
                p.theta[j] += Vec3::new(rng.gen_range(-0.05..0.05), 0.0, rng.gen_range(-0.05..0.05));
            }
            p.trans.y += rng.gen_range(-0.02..0.02);
            let b = self.model.forward(&p)?;
            previous.push(OverlapFrame {
                offset,
                params: p,
                vertices: b.vertices,
                joints: b.joints,
            });
        }
        let reports = bodies
            .iter()
            .map(|b| self.detector.detect(&b.vertices, &self.centers.centers(b)))
            .collect::<Result<_>>()?;
        Ok(State {
            frames,
            keypoints,
            previous,
            reports,
        })
    }

    fn pose(&self, frames: &[FrameParams]) -> Result<Vec<PosedBody>> {
        frames.iter().map(|f| self.model.forward(f)).collect()
    }

    /// True when the state is away from every switching surface the
    /// objective has for `term`, and the term is exercised.
    fn usable(&self, term: Option<Term>, s: &State) -> Result<bool> {
        let bodies = self.pose(&s.frames)?;
        let w = &self.weights;
        match term {
            Some(Term::Prior) => {
                for f in &s.frames {
                    let x = crate::losses::gmm::body_pose(&f.theta);
                    let mut costs: Vec<f64> = (0..self.gmm.num_components())
                        .map(|k| self.gmm.component_cost_only(k, &x))
                        .collect::<Result<_>>()?;
                    costs.sort_by(f64::total_cmp);
                    if costs.len() > 1 && costs[1] - costs[0] < 1e-6 {
                        return Ok(false);
                    }
                }
            }
            Some(Term::BedContact) => {
                let (mut inside, mut below) = (0, 0);
                for b in &bodies {
                    for v in &b.vertices {
                        if (v.z - w.bed.thre_bed).abs() < MARGIN {
                            return Ok(false);
                        }
                        if v.z > 0.0 && v.z < w.bed.thre_bed {
                            inside += 1;
                        } else if v.z < 0.0 {
                            below += 1;
                        }
                    }
                }
                if inside == 0 || below == 0 {
                    return Ok(false);
                }
            }
            Some(Term::Gravity) => {
                let mut active = 0;
                for (b, fl) in bodies.iter().zip(&self.flags.frames) {
                    for (g, f) in w.gravity.joints.iter().zip(fl) {
                        let z = b.joints[g.joint].z;
                        if z.abs() < MARGIN {
                            return Ok(false);
                        }
                        if f.stationary && z > 0.0 {
                            active += 1;
                        }
                    }
                }
                if active == 0 {
                    return Ok(false);
                }
            }
            Some(Term::SelfContact) => {
                let (mut isect, mut con) = (0, 0);
                for (b, r) in bodies.iter().zip(&s.reports) {
                    for h in &r.hits {
                        let dist = (b.vertices[h.vertex] - b.vertices[h.nearest]).norm();
                        if h.sdf.abs() < MARGIN
                            || dist < MARGIN
                            || (dist - w.self_contact.thre_dist).abs() < MARGIN
                        {
                            return Ok(false);
                        }
                        if h.penetrating {
                            isect += 1;
                        } else if dist < w.self_contact.thre_dist {
                            con += 1;
                        }
                    }
                }
                if isect == 0 || con == 0 {
                    return Ok(false);
                }
            }
            _ => {}
        }
        Ok(true)
    }

    fn objective(&self, term: Term, s: &State, frames: &[FrameParams], grads: Option<&mut [BodyGrad]>) -> Result<(f64, Vec<PosedBody>)> {
        let bodies = self.pose(frames)?;
        let mut w = self.weights.clone();
        w.set_top_level(0.0);
        *w.top_level_mut(term) = 1.0;
        let inputs = WindowInputs {
            model: self.model,
            camera: &self.camera,
            gmm: self.gmm,
            centers: self.centers,
            keypoints: &s.keypoints,
            flags: &self.flags.frames,
            previous: Some(&s.previous),
        };
        let b = stage_objective(Stage::One, &inputs, frames, &bodies, &s.reports, &w, grads)?;
        Ok((b.total, bodies))
    }

    fn check_term(&self, term: Term, s: &State) -> Result<(f64, f64)> {
        let x = flatten(&s.frames);
        let (n, k) = (self.model.num_vertices(), self.model.num_keypoints());
        let mut grads: Vec<BodyGrad> = (0..s.frames.len()).map(|_| BodyGrad::zeros(n, k)).collect();
        self.objective(term, s, &s.frames, Some(&mut grads))?;
        let analytic: Vec<ParamGrad> = s
            .frames
            .iter()
            .zip(&grads)
            .map(|(f, g)| {
                let (_, cache) = self.model.forward_with_cache(f)?;
                Ok(self.model.backward(&cache, g))
            })
            .collect::<Result<_>>()?;
        let numeric = central_difference(&x, self.cfg.eps, |y| {
            Ok(self.objective(term, s, &unflatten(y), None)?.0)
        })?;
        Ok(relative_error(&flatten_grad(&analytic), &numeric))
    }

    /// Random linear functional of vertices, joints and keypoints pulled
    /// back through the reverse pass.
    fn check_forward(&self, s: &State, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let (n, k) = (self.model.num_vertices(), self.model.num_keypoints());
        let mut coef = BodyGrad::zeros(n, k);
        let mut r = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        coef.vertices.iter_mut().for_each(|v| *v = r());
        coef.joints.iter_mut().for_each(|v| *v = r());
        coef.keypoints.iter_mut().for_each(|v| *v = r());
        let f = &s.frames[0];
        let (_, cache) = self.model.forward_with_cache(f)?;
        let analytic = flatten_grad(&[self.model.backward(&cache, &coef)]);
        let dot = |b: &PosedBody| -> f64 {
            let d = |a: &[Vec3], c: &[Vec3]| a.iter().zip(c).map(|(x, y)| x.dot(y)).sum::<f64>();
            d(&b.vertices, &coef.vertices) + d(&b.joints, &coef.joints) + d(&b.keypoints, &coef.keypoints)
        };
        let numeric = central_difference(&flatten(std::slice::from_ref(f)), self.cfg.eps, |y| {
            Ok(dot(&self.model.forward(&unflatten(y)[0])?))
        })?;
        Ok(relative_error(&analytic, &numeric))
    }

    /// `None` checks the body model itself.
    pub fn check(&self, term: Option<Term>) -> Result<GradcheckEntry> {
        let name = term.map(|t| t.name().to_string()).unwrap_or_else(|| "forward".into());
        let salt = term.map(|t| t as u64 + 1).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_mul(31).wrapping_add(salt));
        let mut entry = GradcheckEntry {
            name,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            states: 0,
            resampled: 0,
        };
        let mut attempts = 0;
        while entry.states < self.cfg.states {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Degenerate(format!(
                    "{}: no usable state after {MAX_ATTEMPTS} draws",
                    entry.name
                )));
            }
            let s = self.sample(&mut rng)?;
            if !self.usable(term, &s)? {
                entry.resampled += 1;
                continue;
            }
            let (rel, abs) = match term {
                None => self.check_forward(&s, &mut rng)?,
                Some(t) => self.check_term(t, &s)?,
            };
            entry.max_rel_err = entry.max_rel_err.max(rel);
            entry.max_abs_err = entry.max_abs_err.max(abs);
            entry.states += 1;
        }
        Ok(entry)
    }

    /// The body model followed by each requested term.
    pub fn run(&self, terms: &[Term]) -> Result<GradcheckReport> {
        let mut entries = vec![self.check(None)?];
        for &t in terms {
            entries.push(self.check(Some(t))?);
        }
        Ok(GradcheckReport {
            eps: self.cfg.eps,
            tolerance: TOLERANCE,
            entries,
        })
    }
}
