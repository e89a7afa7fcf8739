//! Sliding-window, two-stage Adam fitting.

use std::fmt::Display;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::losses::{
    stage_objective, zero_velocity_flags, Breakdown, GmmPrior, GravityFlags, LossWeights,
    OverlapFrame, Stage, WeightProfile, WindowInputs,
};
use crate::model::{BodyGrad, BodyModel, FrameParams, PosedBody, Vec3, NUM_BETAS, NUM_JOINTS};
use crate::penetration::{Detector, DetectorConfig, Downsample, PenetrationReport};
use crate::scenario::rest_projection_lengths;
use crate::segmentation::{CenterSpec, SegmentMap};
use crate::sequence::MotionSequence;
use crate::track::KeypointTrack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapRule {
    LaterWins,
    EarlierWins,
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub window_len: usize,
    pub overlap: usize,
    pub iters_per_stage: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub stage1: bool,
    pub stage2: bool,
    /// Iterations between detector runs; hits are frozen in between.
    pub detector_refresh: usize,
    pub downsample: Downsample,
    pub overlap_rule: OverlapRule,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            window_len: 128,
            overlap: 64,
            iters_per_stage: 500,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            stage1: true,
            stage2: true,
            detector_refresh: 1,
            downsample: Downsample::Full,
            overlap_rule: OverlapRule::LaterWins,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::config("window_len", "must be at least 2"));
        }
        if self.overlap == 0 || self.overlap >= self.window_len {
            return Err(Error::config("overlap", "must satisfy 0 < overlap < window_len"));
        }
        if self.iters_per_stage == 0 {
            return Err(Error::config("iters_per_stage", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.detector_refresh == 0 {
            return Err(Error::config("detector_refresh", "must be at least 1"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: FitConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }
}

/// `[start, end)` windows covering `[0, frames)`; the last one is
/// right-aligned when the stride grid does not land on `frames`.
pub fn plan_windows(frames: usize, cfg: &FitConfig) -> Result<Vec<(usize, usize)>> {
    if frames < 2 {
        return Err(Error::Input(format!("need at least 2 frames, got {frames}")));
    }
    cfg.validate()?;
    let len = cfg.window_len;
    if frames <= len {
        return Ok(vec![(0, frames)]);
    }
    let stride = len - cfg.overlap;
    let mut out = Vec::new();
    let mut s = 0;
    loop {
        if s + len >= frames {
            out.push((frames - len, frames));
            return Ok(out);
        }
        out.push((s, s + len));
        s += stride;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&FitConfig> for AdamConfig {
    fn from(c: &FitConfig) -> Self {
        AdamConfig {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized<B> {
    pub x: Vec<f64>,
    /// Objective before each update, one entry per iteration.
    pub trace: Vec<B>,
}

/// Runs `iters` Adam steps. `f(x, iteration)` returns the objective, its
/// gradient and a summary that is kept in the trace and quoted if the
/// value or gradient stops being finite.
pub fn minimize<B, F>(x0: Vec<f64>, iters: usize, cfg: &AdamConfig, mut f: F) -> Result<Minimized<B>>
where
    B: Display,
    F: FnMut(&[f64], usize) -> Result<(f64, Vec<f64>, B)>,
{
    let n = x0.len();
    let mut x = x0;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut trace = Vec::with_capacity(iters);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for it in 0..iters {
        let (value, g, summary) = f(&x, it)?;
        if !value.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                breakdown: summary.to_string(),
            });
        }
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            x[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
        trace.push(summary);
    }
    Ok(Minimized { x, trace })
}

/// Replaces every frame's shape by the mean over frames.
pub fn freeze_shape(seq: &MotionSequence) -> Result<([f64; NUM_BETAS], MotionSequence)> {
    if seq.is_empty() {
        return Err(Error::Input("cannot freeze shape of an empty sequence".into()));
    }
    // Offsets from the first frame keep a constant shape bit-exact.
    let first = seq.frames[0].beta;
    let mut delta = [0.0; NUM_BETAS];
    for f in &seq.frames {
        for (d, (b, b0)) in delta.iter_mut().zip(f.beta.iter().zip(&first)) {
            *d += b - b0;
        }
    }
    let n = seq.len() as f64;
    let mut mean = first;
    for (m, d) in mean.iter_mut().zip(&delta) {
        *m += d / n;
    }
    let mut out = seq.clone();
    for f in out.frames.iter_mut() {
        f.beta = mean;
    }
    Ok((mean, out))
}

/// Inputs shared by both stages.
#[derive(Debug, Clone, Copy)]
pub struct FitData<'a> {
    pub model: &'a BodyModel,
    pub camera: &'a Camera,
    pub gmm: &'a GmmPrior,
    pub segments: &'a SegmentMap,
    pub centers: &'a CenterSpec,
    pub track: &'a KeypointTrack,
    pub init: &'a MotionSequence,
    pub profile: &'a WeightProfile,
}

impl FitData<'_> {
    fn check(&self) -> Result<()> {
        if self.init.is_empty() {
            return Err(Error::Input("empty initialization".into()));
        }
        if self.track.len() != self.init.len() {
            return Err(Error::Input(format!(
                "keypoint track has {} frames, initialization has {}",
                self.track.len(),
                self.init.len()
            )));
        }
        let k = self.model.num_keypoints();
        if let Some(f) = self.track.frames.iter().find(|f| f.joints.len() != k) {
            return Err(Error::Input(format!(
                "keypoint frame {} has {} keypoints, model has {k}",
                f.index,
                f.joints.len()
            )));
        }
        self.centers.validate()?;
        Ok(())
    }

    /// Zero-velocity flags for the whole track under `weights`.
    pub fn gravity_flags(&self, weights: &LossWeights) -> Result<GravityFlags> {
        let rest = rest_projection_lengths(self.model, self.camera, &weights.gravity.joints)?;
        zero_velocity_flags(&self.track.joints(), &rest, &weights.gravity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub start: usize,
    pub end: usize,
    pub trace: Vec<Breakdown>,
    pub final_breakdown: Breakdown,
}

impl WindowReport {
    /// Objective after the last update is below the objective at the start.
    pub fn decreased(&self) -> bool {
        self.trace
            .first()
            .map(|b| self.final_breakdown.total <= b.total)
            .unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub windows: Vec<WindowReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub sequence: MotionSequence,
    pub report: StageReport,
    /// Per-window results before assembly, for overlap diagnostics.
    pub window_frames: Vec<Vec<FrameParams>>,
}

struct Layout {
    with_beta: bool,
}

impl Layout {
    fn per_frame(&self) -> usize {
        3 * NUM_JOINTS + 3 + if self.with_beta { NUM_BETAS } else { 0 }
    }

    fn pack(&self, frames: &[FrameParams]) -> Vec<f64> {
        let mut x = Vec::with_capacity(frames.len() * self.per_frame());
        for f in frames {
            x.extend(f.theta.iter().flat_map(|w| w.iter().copied()));
            x.extend(f.trans.iter().copied());
            if self.with_beta {
                x.extend_from_slice(&f.beta);
            }
        }
        x
    }

    /// Overwrites pose and translation (and shape when packed).
    fn unpack(&self, x: &[f64], frames: &mut [FrameParams]) {
        let n = self.per_frame();
        for (f, chunk) in frames.iter_mut().zip(x.chunks(n)) {
            for j in 0..NUM_JOINTS {
                f.theta[j] = Vec3::new(chunk[3 * j], chunk[3 * j + 1], chunk[3 * j + 2]);
            }
            let o = 3 * NUM_JOINTS;
            f.trans = Vec3::new(chunk[o], chunk[o + 1], chunk[o + 2]);
            if self.with_beta {
                f.beta.copy_from_slice(&chunk[o + 3..o + 3 + NUM_BETAS]);
            }
        }
    }

    fn pack_grad(&self, grads: &[crate::model::ParamGrad]) -> Vec<f64> {
        let mut g = Vec::with_capacity(grads.len() * self.per_frame());
        for p in grads {
            g.extend(p.theta.iter().flat_map(|w| w.iter().copied()));
            g.extend(p.trans.iter().copied());
            if self.with_beta {
                g.extend_from_slice(&p.beta);
            }
        }
        g
    }
}

fn detect_all(
    detector: Option<&Detector>,
    centers: &CenterSpec,
    bodies: &[PosedBody],
) -> Result<Vec<PenetrationReport>> {
    match detector {
        None => Ok(vec![PenetrationReport::default(); bodies.len()]),
        Some(d) => bodies
            .par_iter()
            .map(|b| d.detect(&b.vertices, &centers.centers(b)))
            .collect(),
    }
}

/// Detector used by a stage: hand-torso pairs in stage one, every
/// non-excluded pair in stage two.
pub fn stage_detector(
    stage: Stage,
    segments: &SegmentMap,
    weights: &LossWeights,
    downsample: Downsample,
) -> Result<Detector> {
    let mut cfg = match stage {
        Stage::One => DetectorConfig::hands_torso(segments),
        Stage::Two => DetectorConfig::all_pairs(segments),
    };
    cfg.downsample = downsample;
    cfg.contact_threshold = weights.self_contact.thre_dist;
    Detector::new(segments, cfg)
}

/// Evaluates the stage objective at `frames` with fresh detections.
pub fn evaluate_window(
    stage: Stage,
    data: &FitData<'_>,
    weights: &LossWeights,
    flags: &GravityFlags,
    detector: Option<&Detector>,
    start: usize,
    frames: &[FrameParams],
    previous: Option<&[OverlapFrame]>,
) -> Result<(Breakdown, Vec<PosedBody>, Vec<PenetrationReport>)> {
    let bodies: Vec<PosedBody> = frames
        .par_iter()
        .map(|p| data.model.forward(p))
        .collect::<Result<_>>()?;
    let reports = detect_all(detector, data.centers, &bodies)?;
    let keypoints: Vec<Vec<[f64; 3]>> = data.track.frames[start..start + frames.len()]
        .iter()
        .map(|f| f.joints.clone())
        .collect();
    let inputs = WindowInputs {
        model: data.model,
        camera: data.camera,
        gmm: data.gmm,
        centers: data.centers,
        keypoints: &keypoints,
        flags: flags.window(start, start + frames.len()),
        previous,
    };
    let b = stage_objective(stage, &inputs, frames, &bodies, &reports, weights, None)?;
    Ok((b, bodies, reports))
}

#[allow(clippy::too_many_arguments)]
fn fit_window(
    stage: Stage,
    data: &FitData<'_>,
    weights: &LossWeights,
    flags: &GravityFlags,
    detector: Option<&Detector>,
    cfg: &FitConfig,
    start: usize,
    init: &[FrameParams],
    previous: Option<&[OverlapFrame]>,
) -> Result<(Vec<FrameParams>, Vec<Breakdown>)> {
    let layout = Layout {
        with_beta: stage == Stage::One,
    };
    let keypoints: Vec<Vec<[f64; 3]>> = data.track.frames[start..start + init.len()]
        .iter()
        .map(|f| f.joints.clone())
        .collect();
    let inputs = WindowInputs {
        model: data.model,
        camera: data.camera,
        gmm: data.gmm,
        centers: data.centers,
        keypoints: &keypoints,
        flags: flags.window(start, start + init.len()),
        previous,
    };
    let n = data.model.num_vertices();
    let k = data.model.num_keypoints();
    let mut frames = init.to_vec();
    let mut grads: Vec<BodyGrad> = (0..init.len()).map(|_| BodyGrad::zeros(n, k)).collect();
    let mut reports: Vec<PenetrationReport> = Vec::new();
    let result = minimize(layout.pack(init), cfg.iters_per_stage, &AdamConfig::from(cfg), |x, it| {
        layout.unpack(x, &mut frames);
        let posed: Vec<(PosedBody, crate::model::ForwardCache)> = frames
            .par_iter()
            .map(|p| data.model.forward_with_cache(p))
            .collect::<Result<_>>()?;
        let (bodies, caches): (Vec<PosedBody>, Vec<_>) = posed.into_iter().unzip();
        if it % cfg.detector_refresh == 0 || reports.len() != bodies.len() {
            reports = detect_all(detector, data.centers, &bodies)?;
        }
        grads.par_iter_mut().for_each(|g| g.clear());
        let b = stage_objective(stage, &inputs, &frames, &bodies, &reports, weights, Some(&mut grads[..]))?;
        let pg: Vec<_> = caches
            .par_iter()
            .zip(grads.par_iter())
            .map(|(c, g)| data.model.backward(c, g))
            .collect();
        Ok((b.total, layout.pack_grad(&pg), b))
    })?;
    layout.unpack(&result.x, &mut frames);
    Ok((frames, result.trace))
}

/// Runs one stage over every window in order. Window `k` starts from
/// `init` and is tied to window `k - 1`'s result on their shared frames.
pub fn fit_stage(
    stage: Stage,
    data: &FitData<'_>,
    init: &MotionSequence,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> Result<StageResult> {
    data.check()?;
    weights.validate()?;
    let windows = plan_windows(init.len(), cfg)?;
    let flags = data.gravity_flags(weights)?;
    let detector = if weights.lambda_sc > 0.0 {
        Some(stage_detector(stage, data.segments, weights, cfg.downsample)?)
    } else {
        None
    };
    let t = init.len();
    let mut assembled = init.frames.clone();
    let mut written = vec![0usize; t];
    let mut previous: Option<(usize, Vec<FrameParams>)> = None;
    let mut reports = Vec::with_capacity(windows.len());
    let mut window_frames = Vec::with_capacity(windows.len());
    for (w, &(s, e)) in windows.iter().enumerate() {
        let wrap = |err: Error| Error::Window {
            window: w,
            source: Box::new(err),
        };
        let overlap: Option<Vec<OverlapFrame>> = match &previous {
            None => None,
            Some((ps, pf)) => {
                let pe = ps + pf.len();
                let shared: Vec<usize> = (s.max(*ps)..e.min(pe)).collect();
                let items = shared
                    .par_iter()
                    .map(|&i| {
                        let p = pf[i - ps].clone();
                        let b = data.model.forward(&p)?;
                        Ok(OverlapFrame {
                            offset: i - s,
                            params: p,
                            vertices: b.vertices,
                            joints: b.joints,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                Some(items)
            }
        };
        let (frames, trace) = fit_window(
            stage,
            data,
            weights,
            &flags,
            detector.as_ref(),
            cfg,
            s,
            &init.frames[s..e],
            overlap.as_deref(),
        )
        .map_err(wrap)?;
        let (final_breakdown, _, _) = evaluate_window(
            stage,
            data,
            weights,
            &flags,
            detector.as_ref(),
            s,
            &frames,
            overlap.as_deref(),
        )
        .map_err(wrap)?;
        log::info!(
            "stage {:?} window {w} [{s}, {e}): {:.4} -> {:.4}",
            stage,
            trace.first().map(|b| b.total).unwrap_or(f64::NAN),
            final_breakdown.total
        );
        for (i, f) in (s..e).zip(&frames) {
            match cfg.overlap_rule {
                OverlapRule::LaterWins => assembled[i] = f.clone(),
                OverlapRule::EarlierWins => {
                    if written[i] == 0 {
                        assembled[i] = f.clone();
                    }
                }
                OverlapRule::Average => {
                    if written[i] == 0 {
                        assembled[i] = f.clone();
                    } else {
                        let c = written[i] as f64;
                        let a = &mut assembled[i];
                        for j in 0..NUM_JOINTS {
                            a.theta[j] = (a.theta[j] * c + f.theta[j]) / (c + 1.0);
                        }
                        for b in 0..NUM_BETAS {
                            a.beta[b] = (a.beta[b] * c + f.beta[b]) / (c + 1.0);
                        }
                        a.trans = (a.trans * c + f.trans) / (c + 1.0);
                    }
                }
            }
            written[i] += 1;
        }
        reports.push(WindowReport {
            window: w,
            start: s,
            end: e,
            trace,
            final_breakdown,
        });
        previous = Some((s, frames.clone()));
        window_frames.push(frames);
    }
    let mut sequence = init.clone();
    sequence.frames = assembled;
    Ok(StageResult {
        sequence,
        report: StageReport {
            stage,
            windows: reports,
        },
        window_frames,
    })
}

pub fn fit_stage1(data: &FitData<'_>, cfg: &FitConfig) -> Result<StageResult> {
    fit_stage(Stage::One, data, data.init, &data.profile.stage1, cfg)
}

/// Stage two starting from a shape-frozen sequence; shape never changes.
pub fn fit_stage2(data: &FitData<'_>, frozen: &MotionSequence, cfg: &FitConfig) -> Result<StageResult> {
    fit_stage(Stage::Two, data, frozen, &data.profile.stage2, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub sequence: MotionSequence,
    pub beta_mean: Option<[f64; NUM_BETAS]>,
    pub stages: Vec<StageResult>,
}

/// Stage one, shape freezing, stage two (each stage can be disabled).
pub fn fit_sequence(data: &FitData<'_>, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    data.check()?;
    let mut current = data.init.clone();
    let mut stages = Vec::new();
    let mut beta_mean = None;
    if cfg.stage1 {
        let r = fit_stage1(data, cfg)?;
        current = r.sequence.clone();
        stages.push(r);
    }
    if cfg.stage2 {
        let (mean, frozen) = freeze_shape(&current)?;
        beta_mean = Some(mean);
        let r = fit_stage2(data, &frozen, cfg)?;
        current = r.sequence.clone();
        stages.push(r);
    }
    Ok(FitResult {
        sequence: current,
        beta_mean,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(len: usize, overlap: usize) -> FitConfig {
        FitConfig {
            window_len: len,
            overlap,
            ..FitConfig::default()
        }
    }

    #[test]
    fn windows_on_the_stride_grid() {
        assert_eq!(
            plan_windows(256, &cfg(128, 64)).unwrap(),
            vec![(0, 128), (64, 192), (128, 256)]
        );
    }

    #[test]
    fn exact_fit_is_one_window() {
        assert_eq!(plan_windows(128, &cfg(128, 64)).unwrap(), vec![(0, 128)]);
    }

    #[test]
    fn tail_window_is_right_aligned() {
        assert_eq!(plan_windows(140, &cfg(128, 64)).unwrap(), vec![(0, 128), (12, 140)]);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(plan_windows(1, &cfg(128, 64)).is_err());
    }

    #[test]
    fn bad_overlap_is_rejected() {
        assert!(cfg(128, 128).validate().is_err());
        assert!(cfg(128, 0).validate().is_err());
    }

    #[test]
    fn adam_converges_on_a_bowl() {
        let target: Vec<f64> = (0..72).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
        let x0: Vec<f64> = target.iter().map(|t| t + 0.3).collect();
        let r = minimize(x0, 500, &AdamConfig::from(&FitConfig::default()), |x, _| {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let v: f64 = x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            Ok((v, g, v))
        })
        .unwrap();
        let err: f64 = r.x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-3, "{err}");
        assert_eq!(r.trace.len(), 500);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let x0 = vec![0.3, -1.2, 4.0];
        let r = minimize(x0.clone(), 50, &AdamConfig::from(&FitConfig::default()), |x, _| {
            Ok((1.0, vec![0.0; x.len()], 1.0))
        })
        .unwrap();
        assert_eq!(r.x, x0);
    }

    #[test]
    fn non_finite_aborts_with_iteration() {
        let e = minimize(vec![0.0], 10, &AdamConfig::from(&FitConfig::default()), |_, it| {
            let v = if it == 3 { f64::NAN } else { 1.0 };
            Ok((v, vec![1.0], format!("value={v}")))
        })
        .unwrap_err();
        match e {
            Error::Diverged { iteration, breakdown } => {
                assert_eq!(iteration, 3);
                assert!(breakdown.contains("NaN"));
            }
            other => panic!("{other}"),
        }
    }

    fn seq(betas: &[[f64; NUM_BETAS]]) -> MotionSequence {
        let frames = betas
            .iter()
            .map(|b| FrameParams {
                beta: *b,
                ..FrameParams::default()
            })
            .collect();
        MotionSequence::new(frames, 30.0).unwrap()
    }

    #[test]
    fn freeze_shape_means_and_substitutes() {
        let mut b = [0.0; NUM_BETAS];
        b[0] = 2.0;
        let (mean, out) = freeze_shape(&seq(&[[0.0; NUM_BETAS], b])).unwrap();
        assert_eq!(mean[0], 1.0);
        assert!(out.frames.iter().all(|f| f.beta == mean));
        let (again, out2) = freeze_shape(&out).unwrap();
        assert_eq!(again, mean);
        assert_eq!(out2, out);
    }

    #[test]
    fn freeze_shape_constant_input() {
        let mut b = [0.0; NUM_BETAS];
        b[3] = -0.4;
        let (mean, _) = freeze_shape(&seq(&[b, b, b])).unwrap();
        assert_eq!(mean, b);
    }

    #[test]
    fn freeze_shape_rejects_empty() {
        let s = MotionSequence {
            frames: vec![],
            fps: 30.0,
            subject: String::new(),
        };
        assert!(freeze_shape(&s).is_err());
    }
}
