use bedfit::doll::{synth_doll, DollSpec};
use bedfit::losses::terms::geman_mcclure;
use bedfit::losses::weights::{default_gravity_joints, LossWeights};
use bedfit::losses::*;
use bedfit::model::{joints as J, BodyGrad, NUM_JOINTS};
use bedfit::penetration::{PairCount, PenetrationReport};
use bedfit::optimizer::FitData;
use bedfit::scenario::{
    default_camera, rest_projection_lengths, resting, synth_scenario, Scenario, ScenarioKind, ScenarioSpec,
};
use bedfit::segmentation::{assign_vertices, default_center_spec, Anchor, CenterEntry, CenterSpec};
use bedfit::{BodyModel, FrameParams, PosedBody, Vec3};
use proptest::prelude::*;
use std::sync::OnceLock;

fn doll() -> &'static BodyModel {
    static M: OnceLock<BodyModel> = OnceLock::new();
    M.get_or_init(|| synth_doll(&DollSpec::default()).unwrap())
}

fn points(vertices: Vec<Vec3>, joints: Vec<Vec3>) -> PosedBody {
    PosedBody {
        vertices,
        joints,
        keypoints: vec![],
    }
}

fn still_flags(frames: usize, weight: f64) -> Vec<Vec<JointFlag>> {
    let f = JointFlag {
        velocity: Some(0.0),
        stationary: true,
        weight,
    };
    vec![vec![f; default_gravity_joints().len()]; frames]
}

fn project_all(bodies: &[PosedBody]) -> Vec<Vec<[f64; 3]>> {
    let cam = default_camera();
    bodies
        .iter()
        .map(|b| {
            cam.project(&b.keypoints)
                .unwrap()
                .iter()
                .map(|uv| [uv.x, uv.y, 1.0])
                .collect()
        })
        .collect()
}

#[test]
fn reprojection_at_sigma_is_half_sigma_squared() {
    let sigma = 100.0;
    let (rho, _) = geman_mcclure(sigma * sigma, sigma);
    assert!((rho - sigma * sigma / 2.0).abs() < 1e-9);

    let m = doll();
    let body = m.forward(&resting(m).unwrap()).unwrap();
    let mut obs = project_all(std::slice::from_ref(&body));
    let w = LossWeights::default();
    let cam = default_camera();
    assert_eq!(reprojection_loss(std::slice::from_ref(&body), &obs, &cam, &w, None, 1.0).unwrap(), 0.0);
    for (k, o) in obs[0].iter_mut().enumerate() {
        if k == 0 {
            o[0] += sigma;
        } else {
            o[2] = 0.0;
        }
    }
    let v = reprojection_loss(std::slice::from_ref(&body), &obs, &cam, &w, None, 1.0).unwrap();
    assert!((v - 5000.0).abs() < 1e-6, "{v}");
    for o in obs[0].iter_mut() {
        o[2] = 0.0;
    }
    assert_eq!(reprojection_loss(std::slice::from_ref(&body), &obs, &cam, &w, None, 1.0).unwrap(), 0.0);
}

#[test]
fn torso_terms() {
    let w = LossWeights::default();
    let mut joints = vec![Vec3::zeros(); NUM_JOINTS];
    let level = torso_prior_loss(&[points(vec![], joints.clone())], &w, None, 1.0);
    assert!((level - 2.0).abs() < 1e-12);
    // Hips 1 cm above the shoulders; the waist follows the mean so only
    // the hip factor changes.
    for j in [J::L_HIP, J::R_HIP] {
        joints[j].z = 0.01;
    }
    joints[J::SPINE1].z = 0.005;
    let v = torso_prior_loss(&[points(vec![], joints)], &w, None, 1.0);
    assert!((v - (1.0 + std::f64::consts::E)).abs() < 1e-12, "{v}");
}

#[test]
fn shape_prior_zero_at_mean() {
    let w = LossWeights::default();
    assert_eq!(shape_prior_loss(&[FrameParams::default()], &w, None, 1.0), 0.0);
}

#[test]
fn bending_grows_exponentially() {
    let gmm = GmmPrior::synthetic();
    let w = LossWeights::default();
    let cost = |a: f64| {
        let mut p = FrameParams::default();
        p.theta[J::L_ELBOW].z = a;
        pose_prior_loss(&[p], &gmm, &w, None, 1.0).unwrap()
    };
    let (a, b, c) = (cost(0.2), cost(0.4), cost(0.6));
    assert!(a < b && b < c);
    assert!(c - b > b - a);
}

#[test]
fn acceleration_of_a_single_bump() {
    let mut w = LossWeights::default();
    let s = &mut w.smooth;
    s.lambda1_par = 0.0;
    s.lambda2_par = 0.0;
    s.lambda3_par = 0.0;
    s.lambda1_vel = 0.0;
    s.lambda2_vel = 0.0;
    let params = vec![FrameParams::default(); 3];
    let bodies: Vec<PosedBody> = [0.0, 0.01, 0.0]
        .iter()
        .map(|&z| {
            let mut j = vec![Vec3::zeros(); NUM_JOINTS];
            j[0].z = z;
            points(vec![], j)
        })
        .collect();
    let v = smooth_loss(&params, &bodies, &w, None, 1.0).unwrap();
    assert!((v - 4e-4).abs() < 1e-15, "{v}");
}

#[test]
fn linear_motion_has_no_acceleration_cost() {
    let mut w = LossWeights::default();
    w.smooth = weights::SmoothWeights {
        lambda1_par: 0.0,
        lambda2_par: 0.0,
        lambda3_par: 0.0,
        lambda1_vel: 0.0,
        lambda2_vel: 0.0,
        lambda_acc: 1.0,
    };
    let params = vec![FrameParams::default(); 5];
    let bodies: Vec<PosedBody> = (0..5)
        .map(|i| {
            let j = (0..NUM_JOINTS)
                .map(|k| Vec3::new(0.01 * i as f64, k as f64 * 0.1, 0.25 - 0.02 * i as f64))
                .collect();
            points(vec![], j)
        })
        .collect();
    assert!(smooth_loss(&params, &bodies, &w, None, 1.0).unwrap() < 1e-24);
}

#[test]
fn consistency_translation_offset() {
    let m = doll();
    let p = resting(m).unwrap();
    let mut q = p.clone();
    q.trans.x += 0.01;
    let bp = m.forward(&p).unwrap();
    let bq = m.forward(&q).unwrap();
    let mut w = LossWeights::default();
    w.consistency.lambda1 = 0.0;
    w.consistency.lambda3 = 0.0;
    w.consistency.lambda4 = 0.0;
    let prev = [OverlapFrame {
        offset: 0,
        params: p.clone(),
        vertices: bp.vertices.clone(),
        joints: bp.joints.clone(),
    }];
    let v = consistency_loss(std::slice::from_ref(&q), &[bq], Some(&prev), &w, None, 1.0).unwrap();
    assert!((v - 1e-4).abs() < 1e-15, "{v}");
    let same = consistency_loss(std::slice::from_ref(&p), &[bp.clone()], Some(&prev), &w, None, 1.0).unwrap();
    assert_eq!(same, 0.0);
    assert_eq!(consistency_loss(&[p], &[bp], None, &w, None, 1.0).unwrap(), 0.0);
}

#[test]
fn bed_contact_closed_forms() {
    let mut w = LossWeights::default();
    w.bed.omega_in_bed = 30.0;
    w.bed.omega_out_bed = 100.0;
    let one = |z: f64| bed_contact_loss(&[points(vec![Vec3::new(0.1, 0.2, z)], vec![])], &w, None, 1.0);
    assert_eq!(one(0.0), 0.0);
    assert!((one(0.01) - 0.3f64.tanh().powi(2)).abs() < 1e-12);
    assert!((one(0.01) - 0.084863).abs() < 1e-6);
    assert!((one(-0.01) - 0.580026).abs() < 1e-6);
    assert_eq!(one(0.05), 0.0);
}

#[test]
fn gravity_closed_forms() {
    let joints = default_gravity_joints();
    let body = |z: f64| {
        let mut j = vec![Vec3::zeros(); NUM_JOINTS];
        j[joints[0].joint].z = z;
        points(vec![], j)
    };
    let mut flags = still_flags(1, 40.0);
    for f in flags[0].iter_mut().skip(1) {
        f.stationary = false;
    }
    let v = gravity_loss(&[body(0.05)], &flags, &joints, None, 1.0).unwrap();
    assert!((v - 2f64.exp()).abs() < 1e-12);
    assert!((v - 7.38906).abs() < 1e-5);
    assert_eq!(gravity_loss(&[body(-0.005)], &flags, &joints, None, 1.0).unwrap(), 0.0);
    flags[0][0].stationary = false;
    assert_eq!(gravity_loss(&[body(0.3)], &flags, &joints, None, 1.0).unwrap(), 0.0);
}

fn two_center_spec() -> CenterSpec {
    let e = |j| CenterEntry {
        name: format!("j{j}"),
        terms: vec![(Anchor::Joint(j), 1.0)],
    };
    CenterSpec {
        entries: (0..NUM_JOINTS).map(|j| e(j.min(1))).collect(),
    }
}

#[test]
fn push_and_pull_potentials() {
    let mut joints = vec![Vec3::zeros(); NUM_JOINTS];
    joints[1] = Vec3::new(0.1, 0.0, 0.0);
    let body = points(vec![Vec3::zeros()], joints);
    let mut w = LossWeights::default();
    w.self_contact.lambda_push = 5.0;
    w.self_contact.lambda_pull = 5.0;
    let report = |penetrating, contact| PenetrationReport {
        hits: vec![],
        pairs: vec![PairCount {
            source: 0,
            target: 1,
            penetrating,
            contact,
            checked: 20,
        }],
        contact_threshold: 0.02,
    };
    let spec = two_center_spec();
    let push = self_contact_loss(&[body.clone()], &[report(10, 0)], &spec, &w, None, 1.0).unwrap();
    assert!((push.push - 6.06531).abs() < 1e-5, "{push:?}");
    assert_eq!(push.pull, 0.0);
    let pull = self_contact_loss(&[body.clone()], &[report(0, 4)], &spec, &w, None, 1.0).unwrap();
    assert!((pull.pull + 2.42612).abs() < 1e-5, "{pull:?}");
    let none = self_contact_loss(&[body], &[PenetrationReport::default()], &spec, &w, None, 1.0).unwrap();
    assert_eq!(none.weighted(&w), 0.0);
}

struct Window {
    params: Vec<FrameParams>,
    bodies: Vec<PosedBody>,
    keypoints: Vec<Vec<[f64; 3]>>,
    flags: Vec<Vec<JointFlag>>,
}

fn resting_window() -> Window {
    let m = doll();
    let p = resting(m).unwrap();
    let params = vec![p; 3];
    let bodies: Vec<PosedBody> = params.iter().map(|p| m.forward(p).unwrap()).collect();
    let keypoints = project_all(&bodies);
    let rest = rest_projection_lengths(m, &default_camera(), &default_gravity_joints()).unwrap();
    let flags = zero_velocity_flags(&keypoints, &rest, &Default::default()).unwrap().frames;
    Window {
        params,
        bodies,
        keypoints,
        flags,
    }
}

fn objective(win: &Window, w: &LossWeights) -> Breakdown {
    let gmm = GmmPrior::synthetic();
    let cam = default_camera();
    let centers = default_center_spec();
    let inputs = WindowInputs {
        model: doll(),
        camera: &cam,
        gmm: &gmm,
        centers: &centers,
        keypoints: &win.keypoints,
        flags: &win.flags,
        previous: None,
    };
    let reports = vec![PenetrationReport::default(); win.params.len()];
    stage_objective(Stage::One, &inputs, &win.params, &win.bodies, &reports, w, None).unwrap()
}

#[test]
fn stage_objective_annihilation_and_single_term() {
    let win = resting_window();
    assert_eq!(objective(&win, &LossWeights::zeros()).total, 0.0);

    let mut w = LossWeights::only(Term::Reprojection);
    assert_eq!(objective(&win, &w).total, 0.0);

    // Static frames: only the gravity term is nonzero.
    w = LossWeights::only(Term::Gravity);
    w.lambda_g = 2.5;
    let b = objective(&win, &w);
    let g = gravity_loss(&win.bodies, &win.flags, &w.gravity.joints, None, 1.0).unwrap();
    assert!(g > 0.0);
    assert_eq!(b.total, 2.5 * g);
}

fn arb_state() -> impl Strategy<Value = (Vec<FrameParams>, Vec3)> {
    let frame = (
        prop::collection::vec(-0.3f64..0.3, 3 * NUM_JOINTS),
        prop::collection::vec(-1.0f64..1.0, 10),
        prop::array::uniform3(-0.05f64..0.05),
    );
    (
        prop::collection::vec(frame, 3),
        prop::array::uniform3(-0.2f64..0.2),
    )
        .prop_map(|(frames, shift)| {
            let m = doll();
            let base = resting(m).unwrap();
            let frames = frames
                .into_iter()
                .map(|(th, be, t)| {
                    let mut p = base.clone();
                    for j in 1..NUM_JOINTS {
                        p.theta[j] += Vec3::new(th[3 * j], th[3 * j + 1], th[3 * j + 2]);
                    }
                    p.beta.copy_from_slice(&be);
                    p.trans += Vec3::new(t[0], t[1], t[2]);
                    p
                })
                .collect();
            (frames, Vec3::new(shift[0], shift[1], shift[2]))
        })
}

fn shifted(params: &[FrameParams], d: Vec3) -> Vec<FrameParams> {
    params
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.trans += d;
            q
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn terms_have_their_signs((params, _) in arb_state()) {
        let m = doll();
        let bodies: Vec<PosedBody> = params.iter().map(|p| m.forward(p).unwrap()).collect();
        let keypoints: Vec<Vec<[f64; 3]>> = project_all(&bodies)
            .into_iter()
            .map(|f| f.into_iter().map(|[u, v, c]| [u + 7.0, v - 3.0, c]).collect())
            .collect();
        let w = LossWeights::default();
        let cam = default_camera();
        prop_assert!(reprojection_loss(&bodies, &keypoints, &cam, &w, None, 1.0).unwrap() >= 0.0);
        prop_assert!(shape_prior_loss(&params, &w, None, 1.0) >= 0.0);
        prop_assert!(torso_prior_loss(&bodies, &w, None, 1.0) >= 0.0);
        prop_assert!(smooth_loss(&params, &bodies, &w, None, 1.0).unwrap() >= 0.0);
        prop_assert!(bed_contact_loss(&bodies, &w, None, 1.0) >= 0.0);
        let flags = still_flags(params.len(), 40.0);
        prop_assert!(gravity_loss(&bodies, &flags, &w.gravity.joints, None, 1.0).unwrap() >= 0.0);
        let prev: Vec<OverlapFrame> = (0..2).map(|i| OverlapFrame {
            offset: i,
            params: params[2 - i].clone(),
            vertices: bodies[2 - i].vertices.clone(),
            joints: bodies[2 - i].joints.clone(),
        }).collect();
        prop_assert!(consistency_loss(&params, &bodies, Some(&prev), &w, None, 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn shape_and_pose_priors_ignore_translation((params, d) in arb_state()) {
        let w = LossWeights::default();
        let gmm = GmmPrior::synthetic();
        let moved = shifted(&params, d);
        prop_assert_eq!(shape_prior_loss(&params, &w, None, 1.0), shape_prior_loss(&moved, &w, None, 1.0));
        prop_assert_eq!(
            pose_prior_loss(&params, &gmm, &w, None, 1.0).unwrap(),
            pose_prior_loss(&moved, &gmm, &w, None, 1.0).unwrap()
        );
    }

    #[test]
    fn vertical_shift_moves_every_height((params, d) in arb_state()) {
        let m = doll();
        let dz = Vec3::new(0.0, 0.0, d.z);
        let a: Vec<PosedBody> = params.iter().map(|p| m.forward(p).unwrap()).collect();
        let b: Vec<PosedBody> = shifted(&params, dz).iter().map(|p| m.forward(p).unwrap()).collect();
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.vertices.iter().zip(&y.vertices) {
                prop_assert!((v.z - u.z - d.z).abs() < 1e-12);
            }
            for (u, v) in x.joints.iter().zip(&y.joints) {
                prop_assert!((v.z - u.z - d.z).abs() < 1e-12);
            }
        }
        let w = LossWeights::default();
        let ta = torso_prior_loss(&a, &w, None, 1.0);
        let tb = torso_prior_loss(&b, &w, None, 1.0);
        prop_assert!((ta - tb).abs() <= 1e-9 * ta.abs().max(1.0));
    }

    #[test]
    fn gravity_is_monotone_in_height(z in -0.1f64..0.5, dz in 1e-4f64..0.1) {
        let joints = default_gravity_joints();
        let flags = still_flags(1, 40.0);
        let at = |h: f64| {
            let mut j = vec![Vec3::new(0.0, 0.0, 0.05); NUM_JOINTS];
            j[joints[3].joint].z = h;
            gravity_loss(&[points(vec![], j)], &flags, &joints, None, 1.0).unwrap()
        };
        prop_assert!(at(z + dz) >= at(z));
        let mut j = vec![Vec3::zeros(); NUM_JOINTS];
        j[joints[3].joint].z = z;
        let mut g = vec![BodyGrad::zeros(0, 0)];
        gravity_loss(&[points(vec![], j)], &flags, &joints, Some(&mut g), 1.0).unwrap();
        prop_assert!(g[0].joints[joints[3].joint].z >= 0.0);
    }

    #[test]
    fn flags_ignore_body_parameters((params, _) in arb_state()) {
        let sc = scenario();
        let gmm = GmmPrior::synthetic();
        let centers = default_center_spec();
        let segments = assign_vertices(&sc.model, &centers).unwrap();
        let profile = WeightProfile::builtin();
        let mut init = sc.init.clone();
        for (f, p) in init.frames.iter_mut().zip(params.iter().cycle()) {
            *f = p.clone();
        }
        let data = |init| FitData {
            model: &sc.model,
            camera: &sc.camera,
            gmm: &gmm,
            segments: &segments,
            centers: &centers,
            track: &sc.track,
            init,
            profile: &profile,
        };
        let a = data(&sc.init).gravity_flags(&profile.stage2).unwrap();
        let b = data(&init).gravity_flags(&profile.stage2).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn scenario() -> &'static Scenario {
    static S: OnceLock<Scenario> = OnceLock::new();
    S.get_or_init(|| synth_scenario(&ScenarioSpec::new(ScenarioKind::Lifted, 6, 3)).unwrap())
}
