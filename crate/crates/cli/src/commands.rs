use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bedfit::gradcheck::{GradcheckConfig, Gradchecker};
use bedfit::losses::{zero_velocity_flags, GmmPrior, Term, WeightProfile};
use bedfit::metrics::evaluate;
use bedfit::optimizer::{fit_sequence, FitConfig, FitData};
use bedfit::penetration::bench::benchmark;
use bedfit::penetration::{DetectorConfig, Downsample};
use bedfit::scenario::{default_camera, rest_projection_lengths, synth_scenario as make_scenario, ScenarioKind, ScenarioSpec};
use bedfit::segmentation::{assign_vertices, default_center_spec};
use bedfit::sequence::MotionSequence;
use bedfit::track::KeypointTrack;
use bedfit::{doll, BodyModel, Camera, Container, Error};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{DetectBenchArgs, EvalArgs, FitArgs, GradcheckArgs, SynthModelArgs, SynthScenarioArgs};

pub const THREADS_ENV: &str = "BEDFIT_THREADS";

#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Sizes the global worker pool from the environment.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got {text:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(THREADS_ENV, e.to_string()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(p) => write_text(p, &text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn load_model(path: &Path) -> Result<(BodyModel, Container), Error> {
    let c = Container::read(path)?;
    Ok((BodyModel::from_container(&c)?, c))
}

fn load_prior(c: &Container, path: &Path) -> Result<GmmPrior, Error> {
    if !GmmPrior::has_tensors(c) {
        return Err(Error::MissingTensor(format!(
            "gmm_weights in {} (the model container carries no pose prior)",
            path.display()
        )));
    }
    GmmPrior::from_container(c)
}

fn model_container(model: &BodyModel) -> Container {
    let mut c = model.to_container();
    GmmPrior::synthetic().to_container(&mut c);
    c
}

fn doll_spec(vertices: usize) -> doll::DollSpec {
    doll::DollSpec {
        vertex_budget: vertices,
        ..doll::DollSpec::default()
    }
}

pub fn synth_model(a: &SynthModelArgs) -> Outcome {
    let model = doll::synth_doll(&doll_spec(a.vertices))?;
    model_container(&model).write(&a.out)?;
    log::info!("wrote {} vertices to {}", model.num_vertices(), a.out.display());
    Ok(())
}

pub fn synth_scenario(a: &SynthScenarioArgs) -> Outcome {
    let mut spec = ScenarioSpec::new(ScenarioKind::parse(&a.kind)?, a.frames, a.seed);
    spec.fps = a.fps;
    spec.pixel_noise = a.pixel_noise;
    spec.theta_noise = a.theta_noise;
    spec.trans_noise = a.trans_noise;
    spec.doll = doll_spec(a.vertices);
    let s = make_scenario(&spec)?;
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model_container(&s.model).write(dir.join("model.ibt"))?;
    s.gt.save(dir.join("gt.ibt"))?;
    s.init.save(dir.join("init.ibt"))?;
    s.track.save(dir.join("keypoints.json"))?;
    s.camera.save(dir.join("camera.json"))?;
    emit(&spec, Some(&dir.join("scenario.json")))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String, Error> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

const TRACE_HEADER: &str = "stage,window,start,end,iteration,total,reprojection,pose,shape,torso,smooth,consistency,bed_contact,gravity,p_con,p_isect,push,pull,self_contact";

fn trace_row(out: &mut String, prefix: &str, it: usize, b: &bedfit::losses::Breakdown) {
    use std::fmt::Write as _;
    let _ = writeln!(
        out,
        "{prefix},{it},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        b.total,
        b.reprojection,
        b.pose,
        b.shape,
        b.torso,
        b.smooth,
        b.consistency,
        b.bed_contact,
        b.gravity,
        b.p_con,
        b.p_isect,
        b.push,
        b.pull,
        b.self_contact
    );
}

pub fn fit(a: &FitArgs) -> Outcome {
    let (model, container) = load_model(&a.model)?;
    let gmm = load_prior(&container, &a.model)?;
    let track = KeypointTrack::load(&a.keypoints)?;
    let camera = Camera::load(&a.camera)?;
    let init = MotionSequence::load(&a.init, track.fps)?;
    let profile = match &a.weights {
        Some(p) => WeightProfile::load(p)?,
        None => WeightProfile::builtin(),
    };
    let mut cfg = match &a.config {
        Some(p) => FitConfig::load(p)?,
        None => FitConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let centers = default_center_spec();
    let segments = assign_vertices(&model, &centers)?;
    let data = FitData {
        model: &model,
        camera: &camera,
        gmm: &gmm,
        segments: &segments,
        centers: &centers,
        track: &track,
        init: &init,
        profile: &profile,
    };
    let result = fit_sequence(&data, &cfg)?;
    result.sequence.save(&a.out)?;

    if let Some(path) = &a.loss_trace {
        let mut text = String::from(TRACE_HEADER);
        text.push('\n');
        for stage in &result.stages {
            let tag = match stage.report.stage {
                bedfit::losses::Stage::One => 1,
                bedfit::losses::Stage::Two => 2,
            };
            for w in &stage.report.windows {
                let prefix = format!("{tag},{},{},{}", w.window, w.start, w.end);
                for (it, b) in w.trace.iter().enumerate() {
                    trace_row(&mut text, &prefix, it, b);
                }
                trace_row(&mut text, &prefix, w.trace.len(), &w.final_breakdown);
            }
        }
        write_text(path, &text)?;
    }

    let windows: Vec<_> = result
        .stages
        .iter()
        .flat_map(|s| {
            s.report.windows.iter().map(move |w| {
                json!({
                    "stage": s.report.stage,
                    "window": w.window,
                    "start": w.start,
                    "end": w.end,
                    "initial": w.trace.first().map(|b| b.total),
                    "final": w.final_breakdown.total,
                    "decreased": w.decreased(),
                })
            })
        })
        .collect();
    let cfg_json = serde_json::to_string(&cfg).expect("config serializes");
    let profile_json = serde_json::to_string(&profile).expect("profile serializes");
    let provenance = json!({
        "tool": "bedfit",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_sha256": sha256_hex(cfg_json.as_bytes()),
        "weights_sha256": sha256_hex(profile_json.as_bytes()),
        "inputs": {
            "model": file_hash(&a.model)?,
            "keypoints": file_hash(&a.keypoints)?,
            "camera": file_hash(&a.camera)?,
            "init": file_hash(&a.init)?,
        },
        "config": cfg,
        "beta_mean": result.beta_mean,
        "windows": windows,
    });
    emit(&provenance, Some(&sidecar_path(&a.out)))?;
    Ok(())
}

pub fn detect_bench(a: &DetectBenchArgs) -> Outcome {
    let (model, _) = load_model(&a.model)?;
    let centers = default_center_spec();
    let segments = assign_vertices(&model, &centers)?;
    let cfgs = [
        DetectorConfig::all_pairs(&segments),
        DetectorConfig::all_pairs(&segments).with_downsample(Downsample::Third),
    ];
    let table = benchmark(&model, &segments, &centers, &cfgs, a.poses, a.seed, !a.no_timing)?;
    emit(&table, a.out.as_deref())?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let (model, _) = load_model(&a.model)?;
    let gt = MotionSequence::load(&a.gt, a.fps.unwrap_or(30.0))?;
    let pred = MotionSequence::load(&a.pred, gt.fps)?;
    let fps = a.fps.unwrap_or(gt.fps);
    let camera = match &a.camera {
        Some(p) => Camera::load(p)?,
        None => default_camera(),
    };
    let profile = match &a.weights {
        Some(p) => WeightProfile::load(p)?,
        None => WeightProfile::builtin(),
    };
    let report = match &a.keypoints {
        Some(p) => {
            let track = KeypointTrack::load(p)?;
            let g = &profile.stage2.gravity;
            let rest = rest_projection_lengths(&model, &camera, &g.joints)?;
            let flags = zero_velocity_flags(&track.joints(), &rest, g)?;
            evaluate(&model, &camera, &pred, &gt, Some((&track, &flags)), fps)?
        }
        None => evaluate(&model, &camera, &pred, &gt, None, fps)?,
    };
    emit(&report, a.out.as_deref())?;
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let (model, container) = load_model(&a.model)?;
    let gmm = if GmmPrior::has_tensors(&container) {
        GmmPrior::from_container(&container)?
    } else {
        GmmPrior::synthetic()
    };
    let terms: Vec<Term> = if a.terms == "all" {
        Term::ALL.to_vec()
    } else {
        a.terms
            .split(',')
            .map(|s| {
                Term::parse(s.trim())
                    .ok_or_else(|| Error::config("terms", format!("unknown term {s:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let profile = match &a.weights {
        Some(p) => WeightProfile::load(p)?,
        None => WeightProfile::builtin(),
    };
    let centers = default_center_spec();
    let segments = assign_vertices(&model, &centers)?;
    let cfg = GradcheckConfig {
        eps: a.eps,
        states: a.states,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    let checker = Gradchecker::new(&model, &segments, &centers, &gmm, &profile.stage2, cfg)?;
    let report = checker.run(&terms)?;
    emit(&report, a.out.as_deref())?;
    if !report.passed() {
        let worst = report
            .entries
            .iter()
            .filter(|e| e.max_rel_err > report.tolerance)
            .map(|e| format!("{} ({:.3e})", e.name, e.max_rel_err))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Failure {
            kind: "gradcheck",
            message: format!("relative error above {} for {worst}", report.tolerance),
        });
    }
    Ok(())
}
