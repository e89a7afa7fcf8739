//! Accuracy and timing of detector variants against the winding-number
//! oracle on random poses.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{joints as J, BodyModel, FrameParams, Vec3, NUM_JOINTS};
use crate::segmentation::{posed_centers, CenterSpec, SegmentMap};

use super::{Detector, DetectorConfig, Oracle};

/// Per-joint, per-axis sampling ranges in radians as `(low, high)`.
/// Left-side ranges are mirrored onto the right side.
pub fn joint_ranges() -> [(Vec3, Vec3); NUM_JOINTS] {
    let sym = |a: f64, b: f64, c: f64| (Vec3::new(-a, -b, -c), Vec3::new(a, b, c));
    let mut r = [(Vec3::zeros(), Vec3::zeros()); NUM_JOINTS];
    for j in [J::SPINE1, J::SPINE2, J::SPINE3] {
        r[j] = sym(0.3, 0.2, 0.2);
    }
    r[J::NECK] = sym(0.4, 0.3, 0.4);
    r[J::HEAD] = sym(0.3, 0.2, 0.3);
    r[J::L_COLLAR] = sym(0.1, 0.2, 0.2);
    // Arm along +x: z swings it front/back, y lowers/raises it.
    r[J::L_SHOULDER] = (Vec3::new(-0.8, -1.0, -1.3), Vec3::new(0.8, 1.1, 1.3));
    // Elbow flexion folds the forearm forward (negative z).
    r[J::L_ELBOW] = (Vec3::new(-0.5, -0.3, -2.4), Vec3::new(0.5, 0.3, 0.1));
    r[J::L_WRIST] = sym(0.3, 0.3, 0.4);
    r[J::L_HAND] = sym(0.1, 0.1, 0.1);
    // Leg along -z: negative x swings it forward, y abducts/adducts.
    r[J::L_HIP] = (Vec3::new(-1.5, -0.5, -0.5), Vec3::new(0.3, 0.5, 0.5));
    // Knee flexion folds the shank backward (positive x).
    r[J::L_KNEE] = (Vec3::new(-0.05, -0.1, -0.1), Vec3::new(2.0, 0.1, 0.1));
    r[J::L_ANKLE] = sym(0.3, 0.2, 0.2);
    r[J::L_FOOT] = sym(0.1, 0.1, 0.1);
    let mirror = |(lo, hi): (Vec3, Vec3)| {
        // Reflection x -> -x maps an axis-angle vector to (x, -y, -z).
        (Vec3::new(lo.x, -hi.y, -hi.z), Vec3::new(hi.x, -lo.y, -lo.z))
    };
    for (l, rt) in [
        (J::L_COLLAR, J::R_COLLAR),
        (J::L_SHOULDER, J::R_SHOULDER),
        (J::L_ELBOW, J::R_ELBOW),
        (J::L_WRIST, J::R_WRIST),
        (J::L_HAND, J::R_HAND),
        (J::L_HIP, J::R_HIP),
        (J::L_KNEE, J::R_KNEE),
        (J::L_ANKLE, J::R_ANKLE),
        (J::L_FOOT, J::R_FOOT),
    ] {
        r[rt] = mirror(r[l]);
    }
    r
}

/// Uniform random articulation within `joint_ranges`, root fixed.
pub fn random_pose(rng: &mut ChaCha8Rng) -> FrameParams {
    let ranges = joint_ranges();
    let mut p = FrameParams::default();
    for j in 1..NUM_JOINTS {
        let (lo, hi) = ranges[j];
        for a in 0..3 {
            if hi[a] > lo[a] {
                p.theta[j][a] = rng.gen_range(lo[a]..hi[a]);
            }
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorScore {
    pub name: String,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    /// Omitted when timing is disabled so that reports are reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sec_per_frame: Option<f64>,
    pub checked_vertices: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    /// Unit over which recall, precision and accuracy are computed.
    pub scoring: String,
    pub poses: usize,
    pub seed: u64,
    pub threads: usize,
    pub oracle_inside_fraction: f64,
    pub detectors: Vec<DetectorScore>,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
    seconds: f64,
}

impl Tally {
    fn score(&self, name: String, poses: usize, timing: bool) -> DetectorScore {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let checked = self.tp + self.fp + self.fn_ + self.tn;
        DetectorScore {
            name,
            recall: ratio(self.tp, self.tp + self.fn_),
            precision: ratio(self.tp, self.tp + self.fp),
            accuracy: ratio(self.tp + self.tn, checked),
            sec_per_frame: timing.then(|| self.seconds / poses as f64),
            checked_vertices: checked,
            true_positives: self.tp,
            false_positives: self.fp,
            false_negatives: self.fn_,
        }
    }
}

pub fn detector_name(cfg: &DetectorConfig) -> String {
    format!("segment-dot ds {}", cfg.downsample.label())
}

/// Scores every detector against oracle labels on `n_poses` random poses.
/// Pose generation and the oracle run are excluded from detector timings;
/// the oracle row times the oracle itself. Work runs on the calling thread.
pub fn benchmark(
    model: &BodyModel,
    seg: &SegmentMap,
    centers_spec: &CenterSpec,
    cfgs: &[DetectorConfig],
    n_poses: usize,
    seed: u64,
    timing: bool,
) -> Result<BenchmarkTable> {
    if n_poses == 0 {
        return Err(Error::Input("benchmark needs at least one pose".into()));
    }
    let detectors = cfgs
        .iter()
        .map(|c| Detector::new(seg, c.clone()))
        .collect::<Result<Vec<_>>>()?;
    let oracle = Oracle::new(&model.faces, model.num_vertices());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tallies = vec![Tally::default(); detectors.len()];
    let mut oracle_tally = Tally::default();
    let mut inside_total = 0usize;
    for _ in 0..n_poses {
        let params = random_pose(&mut rng);
        let body = model.forward(&params)?;

        let start = Instant::now();
        let labels = oracle.detect(&body.vertices);
        oracle_tally.seconds += start.elapsed().as_secs_f64();
        let inside = labels.iter().filter(|&&b| b).count();
        inside_total += inside;
        oracle_tally.tp += inside;
        oracle_tally.tn += labels.len() - inside;

        for (det, tally) in detectors.iter().zip(tallies.iter_mut()) {
            let start = Instant::now();
            let centers = posed_centers(&body, centers_spec);
            let report = det.detect(&body.vertices, &centers)?;
            tally.seconds += start.elapsed().as_secs_f64();
            for (v, flag) in report
                .vertex_flags(det, body.vertices.len())
                .into_iter()
                .enumerate()
            {
                match (flag, labels[v]) {
                    (None, _) => {}
                    (Some(true), true) => tally.tp += 1,
                    (Some(true), false) => tally.fp += 1,
                    (Some(false), true) => tally.fn_ += 1,
                    (Some(false), false) => tally.tn += 1,
                }
            }
        }
    }
    let mut rows: Vec<DetectorScore> = detectors
        .iter()
        .zip(&tallies)
        .map(|(d, t)| t.score(detector_name(&d.cfg), n_poses, timing))
        .collect();
    rows.push(oracle_tally.score("winding-number oracle".into(), n_poses, timing));
    Ok(BenchmarkTable {
        scoring: "vertex".into(),
        poses: n_poses,
        seed,
        threads: 1,
        oracle_inside_fraction: inside_total as f64 / (n_poses * model.num_vertices()) as f64,
        detectors: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doll::{synth_doll, DollSpec};
    use crate::penetration::Downsample;
    use crate::segmentation::{assign_vertices, default_center_spec};

    #[test]
    fn oracle_row_is_perfect_and_untimed_runs_repeat() {
        let m = synth_doll(&DollSpec::default()).unwrap();
        let spec = default_center_spec();
        let s = assign_vertices(&m, &spec).unwrap();
        let cfgs = [
            DetectorConfig::all_pairs(&s),
            DetectorConfig::all_pairs(&s).with_downsample(Downsample::Third),
        ];
        let a = benchmark(&m, &s, &spec, &cfgs, 4, 11, false).unwrap();
        let b = benchmark(&m, &s, &spec, &cfgs, 4, 11, false).unwrap();
        assert_eq!(a, b);
        let oracle = a.detectors.last().unwrap();
        assert_eq!((oracle.recall, oracle.precision, oracle.accuracy), (1.0, 1.0, 1.0));
        assert!(a.detectors.iter().all(|d| d.sec_per_frame.is_none()));
        assert!(benchmark(&m, &s, &spec, &cfgs, 0, 1, false).is_err());
    }
}
