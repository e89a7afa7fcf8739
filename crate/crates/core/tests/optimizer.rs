use bedfit::losses::weights::LossWeights;
use bedfit::losses::{GmmPrior, Stage, Term, WeightProfile};
use bedfit::optimizer::*;
use bedfit::penetration::Downsample;
use bedfit::scenario::{synth_scenario, Scenario, ScenarioKind, ScenarioSpec};
use bedfit::segmentation::{assign_vertices, default_center_spec, CenterSpec, SegmentMap};
use bedfit::sequence::MotionSequence;

struct Setup {
    sc: Scenario,
    gmm: GmmPrior,
    centers: CenterSpec,
    segments: SegmentMap,
}

fn setup(kind: ScenarioKind, frames: usize, noiseless: bool) -> Setup {
    let mut spec = ScenarioSpec::new(kind, frames, 5);
    if noiseless {
        spec.pixel_noise = 0.0;
        spec.theta_noise = 0.0;
        spec.trans_noise = 0.0;
    }
    let sc = synth_scenario(&spec).unwrap();
    let centers = default_center_spec();
    let segments = assign_vertices(&sc.model, &centers).unwrap();
    Setup {
        sc,
        gmm: GmmPrior::synthetic(),
        centers,
        segments,
    }
}

impl Setup {
    fn data<'a>(&'a self, init: &'a MotionSequence, profile: &'a WeightProfile) -> FitData<'a> {
        FitData {
            model: &self.sc.model,
            camera: &self.sc.camera,
            gmm: &self.gmm,
            segments: &self.segments,
            centers: &self.centers,
            track: &self.sc.track,
            init,
            profile,
        }
    }
}

fn profile_with(w: LossWeights) -> WeightProfile {
    WeightProfile {
        version: 1,
        stage1: w.clone(),
        stage2: w,
    }
}

#[test]
fn ground_truth_is_a_fixed_point_of_the_reprojection_fit() {
    let s = setup(ScenarioKind::Full, 6, true);
    let profile = profile_with(LossWeights::only(Term::Reprojection));
    let data = s.data(&s.sc.gt, &profile);
    let r = fit_sequence(&data, &FitConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in r.sequence.frames.iter().zip(&s.sc.gt.frames) {
        for (x, y) in a.theta.iter().zip(&b.theta) {
            worst = worst.max((x - y).amax());
        }
    }
    assert!(worst < 1e-4, "pose moved by {worst} rad");
}

#[test]
fn stage_two_keeps_the_mean_shape_exactly() {
    let s = setup(ScenarioKind::Full, 6, false);
    let profile = WeightProfile::builtin();
    let data = s.data(&s.sc.init, &profile);
    let cfg = FitConfig {
        iters_per_stage: 20,
        ..FitConfig::default()
    };
    let r = fit_sequence(&data, &cfg).unwrap();
    let mean = r.beta_mean.unwrap();
    for f in &r.sequence.frames {
        assert_eq!(f.beta, mean);
    }
    let (again, _) = freeze_shape(&r.stages[0].sequence).unwrap();
    assert_eq!(again, mean);
    assert_eq!(r.stages.len(), 2);
    assert!(r.stages.iter().all(|st| st.report.windows.iter().all(|w| w.trace.len() == 20)));
}

#[test]
fn too_short_sequence_is_rejected() {
    let s = setup(ScenarioKind::Full, 6, false);
    let profile = WeightProfile::builtin();
    let one = MotionSequence::new(vec![s.sc.init.frames[0].clone()], 30.0).unwrap();
    let data = s.data(&one, &profile);
    assert!(fit_sequence(&data, &FitConfig::default()).is_err());
    assert!(plan_windows(0, &FitConfig::default()).is_err());
}

#[test]
fn self_contact_alone_reduces_penetration() {
    let s = setup(ScenarioKind::ForearmTorso, 2, true);
    let mut w = LossWeights::only(Term::SelfContact);
    w.self_contact.omega_p_isect = 30.0;
    let profile = profile_with(w.clone());
    let data = s.data(&s.sc.init, &profile);
    let cfg = FitConfig {
        iters_per_stage: 150,
        stage1: false,
        ..FitConfig::default()
    };
    let r = fit_sequence(&data, &cfg).unwrap();
    let det = stage_detector(Stage::Two, &s.segments, &w, Downsample::Full).unwrap();
    let count = |seq: &MotionSequence| -> usize {
        seq.frames
            .iter()
            .map(|p| {
                let b = s.sc.model.forward(p).unwrap();
                det.detect(&b.vertices, &s.centers.centers(&b)).unwrap().total_penetrating()
            })
            .sum()
    };
    let (before, after) = (count(&s.sc.init), count(&r.sequence));
    assert!(before > 0);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn later_window_wins_on_overlap() {
    let s = setup(ScenarioKind::Full, 140, false);
    let profile = WeightProfile::builtin();
    let data = s.data(&s.sc.init, &profile);
    let cfg = FitConfig {
        iters_per_stage: 3,
        stage2: false,
        ..FitConfig::default()
    };
    let r = fit_sequence(&data, &cfg).unwrap();
    let st = &r.stages[0];
    let ws = &st.report.windows;
    assert_eq!((ws[0].start, ws[0].end, ws[1].start, ws[1].end), (0, 128, 12, 140));
    for i in 12..140 {
        assert_eq!(st.sequence.frames[i], st.window_frames[1][i - 12]);
    }
    for i in 0..12 {
        assert_eq!(st.sequence.frames[i], st.window_frames[0][i]);
    }
}
