//! Self-penetration detection with the nearest-vertex dot-product test.
//!
//! For a vertex `v_i` of segment `S_i` and a target segment `S_j` with
//! center `c_j`, let `v_j` be the vertex of `S_j` closest to `v_i`. The
//! vertex is inside `S_j` when `(v_j - v_i) . (c_j - v_i) < 0`; its signed
//! distance is `-|v_j - v_i|` in that case and `+|v_j - v_i|` otherwise.

pub mod bench;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec3;
use crate::segmentation::{SegmentMap, NUM_SEGMENTS};

pub use oracle::Oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Downsample {
    /// Every source vertex.
    Full,
    /// Every third source vertex in id order.
    Third,
}

impl Downsample {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "1" => Ok(Downsample::Full),
            "1/3" => Ok(Downsample::Third),
            other => Err(Error::config("downsample", format!("expected 1 or 1/3, got {other}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Downsample::Full => "1",
            Downsample::Third => "1/3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Ordered `(source, target)` segment pairs.
    pub pairs: Vec<(usize, usize)>,
    pub downsample: Downsample,
    /// Upper end of the contact band, meters.
    pub contact_threshold: f64,
}

impl DetectorConfig {
    pub fn hands_torso(seg: &SegmentMap) -> Self {
        DetectorConfig {
            pairs: seg.hand_torso_pairs(),
            downsample: Downsample::Full,
            contact_threshold: 0.02,
        }
    }

    pub fn all_pairs(seg: &SegmentMap) -> Self {
        DetectorConfig {
            pairs: seg.all_pairs(),
            downsample: Downsample::Full,
            contact_threshold: 0.02,
        }
    }

    pub fn with_downsample(mut self, d: Downsample) -> Self {
        self.downsample = d;
        self
    }

    pub fn validate(&self, seg: &SegmentMap) -> Result<()> {
        if !(self.contact_threshold > 0.0) {
            return Err(Error::config("contact_threshold", "must be positive"));
        }
        for &(a, b) in &self.pairs {
            if a >= NUM_SEGMENTS || b >= NUM_SEGMENTS {
                return Err(Error::config("pairs", format!("pair ({a}, {b}) out of range")));
            }
            if seg.is_excluded(a, b) {
                return Err(Error::config("pairs", format!("pair ({a}, {b}) is excluded")));
            }
        }
        Ok(())
    }
}

/// One source vertex found inside, or within the contact band of, a
/// target segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub vertex: usize,
    pub source: usize,
    pub target: usize,
    pub nearest: usize,
    pub sdf: f64,
    pub penetrating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub source: usize,
    pub target: usize,
    /// `|D|`: vertices with `sdf < 0`.
    pub penetrating: usize,
    /// `|C|`: vertices with `0 < sdf < contact_threshold`.
    pub contact: usize,
    pub checked: usize,
}

/// Detection result for one frame. Only vertices with `sdf` below the
/// contact threshold are listed; every other checked vertex is outside
/// the band and contributes nothing downstream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PenetrationReport {
    pub hits: Vec<Hit>,
    pub pairs: Vec<PairCount>,
    pub contact_threshold: f64,
}

impl PenetrationReport {
    pub fn total_penetrating(&self) -> usize {
        self.pairs.iter().map(|p| p.penetrating).sum()
    }

    pub fn total_contact(&self) -> usize {
        self.pairs.iter().map(|p| p.contact).sum()
    }

    /// Per-vertex verdict: `Some(true)` if any pair marks the vertex as
    /// penetrating, `Some(false)` if it was checked and never marked,
    /// `None` if it was never a checked source vertex.
    pub fn vertex_flags(&self, detector: &Detector, num_vertices: usize) -> Vec<Option<bool>> {
        let mut out = vec![None; num_vertices];
        for &(s, _) in &detector.cfg.pairs {
            for &v in &detector.sources[s] {
                out[v] = Some(false);
            }
        }
        for h in &self.hits {
            if h.penetrating {
                out[h.vertex] = Some(true);
            }
        }
        out
    }
}

/// Detector with per-segment vertex lists prepared once.
#[derive(Debug, Clone)]
pub struct Detector {
    pub cfg: DetectorConfig,
    targets: Vec<Vec<usize>>,
    sources: Vec<Vec<usize>>,
}

impl Detector {
    pub fn new(seg: &SegmentMap, cfg: DetectorConfig) -> Result<Self> {
        cfg.validate(seg)?;
        let targets: Vec<Vec<usize>> = (0..NUM_SEGMENTS).map(|k| seg.members(k).to_vec()).collect();
        let sources = targets
            .iter()
            .map(|m| match cfg.downsample {
                Downsample::Full => m.clone(),
                Downsample::Third => m.iter().copied().step_by(3).collect(),
            })
            .collect();
        Ok(Detector {
            cfg,
            targets,
            sources,
        })
    }

    pub fn sources(&self, segment: usize) -> &[usize] {
        &self.sources[segment]
    }

    /// Runs the test for every configured pair. Results are ordered by
    /// pair, then by vertex id.
    pub fn detect(&self, vertices: &[Vec3], centers: &[Vec3]) -> Result<PenetrationReport> {
        if centers.len() != NUM_SEGMENTS {
            return Err(Error::Input(format!(
                "expected {NUM_SEGMENTS} centers, got {}",
                centers.len()
            )));
        }
        let thr = self.cfg.contact_threshold;
        let mut spheres: Vec<Option<(Vec3, f64, f64)>> = vec![None; NUM_SEGMENTS];
        let mut report = PenetrationReport {
            hits: Vec::new(),
            pairs: Vec::with_capacity(self.cfg.pairs.len()),
            contact_threshold: thr,
        };
        for &(s, t) in &self.cfg.pairs {
            let target = &self.targets[t];
            if target.is_empty() || self.sources[s].is_empty() {
                return Err(Error::Segmentation(format!("empty segment in pair ({s}, {t})")));
            }
            let (m, r, cutoff) = *spheres[t].get_or_insert_with(|| {
                let (m, r) = bounding_sphere(vertices, target);
                let r_all = r.max((centers[t] - m).norm());
                (m, r, (std::f64::consts::SQRT_2 * r_all).max(r + thr))
            });
            let _ = r;
            let c = centers[t];
            let mut count = PairCount {
                source: s,
                target: t,
                penetrating: 0,
                contact: 0,
                checked: self.sources[s].len(),
            };
            for &v in &self.sources[s] {
                let p = vertices[v];
                // Beyond this distance both the nearest vertex and the
                // center subtend an acute angle and no vertex is in the band.
                if (p - m).norm_squared() > cutoff * cutoff {
                    continue;
                }
                let mut nearest = target[0];
                let mut best = f64::INFINITY;
                for &u in target {
                    let d = (vertices[u] - p).norm_squared();
                    if d < best {
                        best = d;
                        nearest = u;
                    }
                }
                let to_near = vertices[nearest] - p;
                let penetrating = to_near.dot(&(c - p)) < 0.0;
                let dist = best.sqrt();
                let sdf = if penetrating { -dist } else { dist };
                if penetrating {
                    count.penetrating += 1;
                } else if sdf > 0.0 && sdf < thr {
                    count.contact += 1;
                }
                if sdf < thr {
                    report.hits.push(Hit {
                        vertex: v,
                        source: s,
                        target: t,
                        nearest,
                        sdf,
                        penetrating,
                    });
                }
            }
            report.pairs.push(count);
        }
        Ok(report)
    }
}

/// Centroid-based enclosing sphere of a vertex subset.
fn bounding_sphere(vertices: &[Vec3], ids: &[usize]) -> (Vec3, f64) {
    let m = ids.iter().fold(Vec3::zeros(), |a, &i| a + vertices[i]) / ids.len() as f64;
    let r = ids
        .iter()
        .map(|&i| (vertices[i] - m).norm_squared())
        .fold(0.0, f64::max)
        .sqrt();
    (m, r)
}
