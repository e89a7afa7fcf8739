//! 24-segment decomposition of the body surface around joint and
//! virtual-joint centers.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::model::{joints as J, keypoints as K, BodyModel, FrameParams, PosedBody, Vec3, NUM_JOINTS};

pub const NUM_SEGMENTS: usize = 24;

/// Segment ids of the default center table.
pub mod segments {
    pub const HEAD_L_EAR: usize = 0;
    pub const HEAD_R_EAR: usize = 1;
    pub const HEAD_NOSE: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const R_SHOULDER: usize = 4;
    pub const SPINE2: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_HAND: usize = 7;
    pub const L_FOREARM: usize = 8;
    pub const L_UPPER_ARM: usize = 9;
    pub const R_ELBOW: usize = 10;
    pub const R_HAND: usize = 11;
    pub const R_FOREARM: usize = 12;
    pub const R_UPPER_ARM: usize = 13;
    pub const L_HIP: usize = 14;
    pub const R_HIP: usize = 15;
    pub const L_KNEE: usize = 16;
    pub const L_ANKLE: usize = 17;
    pub const L_SHIN: usize = 18;
    pub const L_LOWER_LEG: usize = 19;
    pub const R_KNEE: usize = 20;
    pub const R_ANKLE: usize = 21;
    pub const R_SHIN: usize = 22;
    pub const R_LOWER_LEG: usize = 23;

    pub const HANDS: [usize; 2] = [L_HAND, R_HAND];
    pub const TORSO: [usize; 5] = [L_SHOULDER, R_SHOULDER, SPINE2, L_HIP, R_HIP];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    Joint(usize),
    Keypoint(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterEntry {
    pub name: String,
    pub terms: Vec<(Anchor, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub entries: Vec<CenterEntry>,
}

fn entry(name: &str, terms: &[(Anchor, f64)]) -> CenterEntry {
    CenterEntry {
        name: name.to_string(),
        terms: terms.to_vec(),
    }
}

impl CenterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != NUM_SEGMENTS {
            return Err(Error::Segmentation(format!(
                "expected {NUM_SEGMENTS} centers, found {}",
                self.entries.len()
            )));
        }
        for e in &self.entries {
            let sum: f64 = e.terms.iter().map(|t| t.1).sum();
            if e.terms.is_empty() || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Segmentation(format!(
                    "center {} coefficients sum to {sum}",
                    e.name
                )));
            }
            for (a, _) in &e.terms {
                if let Anchor::Joint(j) = a {
                    if *j >= NUM_JOINTS {
                        return Err(Error::Segmentation(format!(
                            "center {} references joint {j}",
                            e.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Center positions for a posed body.
    pub fn centers(&self, body: &PosedBody) -> Vec<Vec3> {
        self.entries
            .iter()
            .map(|e| {
                e.terms.iter().fold(Vec3::zeros(), |acc, (a, w)| {
                    acc + match a {
                        Anchor::Joint(j) => body.joints[*j],
                        Anchor::Keypoint(k) => body.keypoints[*k],
                    } * *w
                })
            })
            .collect()
    }

    /// Adds `scale * dL/dcenter` onto joint and keypoint gradients.
    pub fn scatter_gradient(&self, center: usize, g: &Vec3, joints: &mut [Vec3], keypoints: &mut [Vec3]) {
        for (a, w) in &self.entries[center].terms {
            match a {
                Anchor::Joint(j) => joints[*j] += g * *w,
                Anchor::Keypoint(k) => keypoints[*k] += g * *w,
            }
        }
    }
}

/// The 24-center table: head (ears, nose), torso-upper-arm (shoulders,
/// spine2), each arm (elbow, hand, mid elbow-hand, 2/5 elbow to
/// shoulder), torso-thigh (hips), each leg (knee, ankle, mid knee-ankle,
/// 2/5 ankle to hip).
pub fn default_center_spec() -> CenterSpec {
    use Anchor::{Joint as Jt, Keypoint as Kp};
    let mut entries = vec![
        entry("head left ear", &[(Kp(K::L_EAR), 1.0)]),
        entry("head right ear", &[(Kp(K::R_EAR), 1.0)]),
        entry("head nose", &[(Kp(K::NOSE), 1.0)]),
        entry("left shoulder", &[(Jt(J::L_SHOULDER), 1.0)]),
        entry("right shoulder", &[(Jt(J::R_SHOULDER), 1.0)]),
        entry("spine2", &[(Jt(J::SPINE2), 1.0)]),
    ];
    for (side, shoulder, elbow, hand) in [
        ("left", J::L_SHOULDER, J::L_ELBOW, J::L_HAND),
        ("right", J::R_SHOULDER, J::R_ELBOW, J::R_HAND),
    ] {
        entries.push(entry(&format!("{side} elbow"), &[(Jt(elbow), 1.0)]));
        entries.push(entry(&format!("{side} hand"), &[(Jt(hand), 1.0)]));
        entries.push(entry(
            &format!("mid of {side} elbow and hand"),
            &[(Jt(elbow), 0.5), (Jt(hand), 0.5)],
        ));
        entries.push(entry(
            &format!("2/5 point from {side} elbow to shoulder"),
            &[(Jt(elbow), 0.6), (Jt(shoulder), 0.4)],
        ));
    }
    entries.push(entry("left hip", &[(Jt(J::L_HIP), 1.0)]));
    entries.push(entry("right hip", &[(Jt(J::R_HIP), 1.0)]));
    for (side, hip, knee, ankle) in [
        ("left", J::L_HIP, J::L_KNEE, J::L_ANKLE),
        ("right", J::R_HIP, J::R_KNEE, J::R_ANKLE),
    ] {
        entries.push(entry(&format!("{side} knee"), &[(Jt(knee), 1.0)]));
        entries.push(entry(&format!("{side} ankle"), &[(Jt(ankle), 1.0)]));
        entries.push(entry(
            &format!("mid of {side} knee and ankle"),
            &[(Jt(knee), 0.5), (Jt(ankle), 0.5)],
        ));
        entries.push(entry(
            &format!("2/5 point from {side} ankle to hip"),
            &[(Jt(ankle), 0.6), (Jt(hip), 0.4)],
        ));
    }
    CenterSpec { entries }
}

/// Centers of the posed body under `spec`.
pub fn posed_centers(posed: &PosedBody, spec: &CenterSpec) -> Vec<Vec3> {
    spec.centers(posed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    pub vertex_segment: Vec<usize>,
    /// Unordered pairs stored as `(low, high)`.
    pub exclusions: BTreeSet<(usize, usize)>,
    members: Vec<Vec<usize>>,
}

impl SegmentMap {
    pub fn new(vertex_segment: Vec<usize>, exclusions: BTreeSet<(usize, usize)>) -> Result<Self> {
        let mut members = vec![Vec::new(); NUM_SEGMENTS];
        for (v, &s) in vertex_segment.iter().enumerate() {
            if s >= NUM_SEGMENTS {
                return Err(Error::Segmentation(format!("vertex {v} has segment {s}")));
            }
            members[s].push(v);
        }
        if let Some(s) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::Segmentation(format!("segment {s} is empty on the rest mesh")));
        }
        let exclusions = exclusions
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        Ok(SegmentMap {
            vertex_segment,
            exclusions,
            members,
        })
    }

    pub fn members(&self, segment: usize) -> &[usize] {
        &self.members[segment]
    }

    pub fn is_excluded(&self, a: usize, b: usize) -> bool {
        a == b || self.exclusions.contains(&(a.min(b), a.max(b)))
    }

    /// Every ordered pair of distinct, non-excluded segments.
    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..NUM_SEGMENTS {
            for b in 0..NUM_SEGMENTS {
                if !self.is_excluded(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Hand segments against torso segments, both directions.
    pub fn hand_torso_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for h in segments::HANDS {
            for t in segments::TORSO {
                if !self.is_excluded(h, t) {
                    out.push((h, t));
                    out.push((t, h));
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.insert(Tensor::i32(
            "segment_ids",
            vec![self.vertex_segment.len()],
            self.vertex_segment.iter().map(|&s| s as i32).collect(),
        ));
        c.insert(Tensor::i32(
            "exclusion_pairs",
            vec![self.exclusions.len(), 2],
            self.exclusions
                .iter()
                .flat_map(|&(a, b)| [a as i32, b as i32])
                .collect(),
        ));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let ids = c.require("segment_ids")?;
        ids.expect_shape(&[None])?;
        let pairs = c.require("exclusion_pairs")?;
        pairs.expect_shape(&[None, Some(2)])?;
        let to_usize = |x: i64, name: &str| {
            usize::try_from(x).map_err(|_| Error::InvalidTensor {
                name: name.into(),
                reason: format!("negative value {x}"),
            })
        };
        let seg = ids
            .as_i64()?
            .into_iter()
            .map(|x| to_usize(x, "segment_ids"))
            .collect::<Result<Vec<_>>>()?;
        let raw = pairs.as_i64()?;
        let mut ex = BTreeSet::new();
        for p in raw.chunks_exact(2) {
            ex.insert((to_usize(p[0], "exclusion_pairs")?, to_usize(p[1], "exclusion_pairs")?));
        }
        SegmentMap::new(seg, ex)
    }
}

/// Assigns every template vertex to its nearest rest-pose center and
/// derives the pairs that are never checked against each other.
pub fn assign_vertices(model: &BodyModel, spec: &CenterSpec) -> Result<SegmentMap> {
    spec.validate()?;
    let rest = model.forward(&FrameParams::default())?;
    for e in &spec.entries {
        for (a, _) in &e.terms {
            if let Anchor::Keypoint(k) = a {
                if *k >= model.num_keypoints() {
                    return Err(Error::Segmentation(format!(
                        "center {} needs keypoint {k}, model has {}",
                        e.name,
                        model.num_keypoints()
                    )));
                }
            }
        }
    }
    let centers = spec.centers(&rest);
    let vertex_segment: Vec<usize> = rest
        .vertices
        .iter()
        .map(|v| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in centers.iter().enumerate() {
                let d = (v - c).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect();

    let mut exclusions = skeleton_neighbors(model, spec, &rest.joints, &centers);
    for f in &model.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let (sa, sb) = (vertex_segment[a], vertex_segment[b]);
            if sa != sb
                && (model.skinning_weights(a).len() > 1 || model.skinning_weights(b).len() > 1)
            {
                exclusions.insert((sa.min(sb), sa.max(sb)));
            }
        }
    }
    SegmentMap::new(vertex_segment, exclusions)
}

/// Pairs of centers joined by at most one edge of the skeleton once the
/// centers are inserted as nodes; joints that are not centers are
/// transparent.
fn skeleton_neighbors(
    model: &BodyModel,
    spec: &CenterSpec,
    rest_joints: &[Vec3],
    centers: &[Vec3],
) -> BTreeSet<(usize, usize)> {
    // Nodes 0..24 are joints; each center either is a joint node or gets a
    // node of its own.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); NUM_JOINTS];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (j, p) in model.parents.iter().enumerate() {
        if let Some(p) = p {
            edges.push((*p, j));
        }
    }
    let mut center_node = vec![0usize; centers.len()];
    // Virtual nodes inserted on an edge: (edge index, fraction, node).
    let mut on_edge: Vec<Vec<(f64, usize)>> = vec![Vec::new(); edges.len()];
    let mut extra_links: Vec<(usize, usize)> = Vec::new();
    let mut next = NUM_JOINTS;
    for (k, e) in spec.entries.iter().enumerate() {
        let joint_terms: Vec<(usize, f64)> = e
            .terms
            .iter()
            .filter_map(|(a, w)| match a {
                Anchor::Joint(j) => Some((*j, *w)),
                Anchor::Keypoint(_) => None,
            })
            .collect();
        if joint_terms.len() == e.terms.len() && joint_terms.len() == 1 {
            center_node[k] = joint_terms[0].0;
            continue;
        }
        let node = next;
        next += 1;
        center_node[k] = node;
        let placed = joint_terms.len() == e.terms.len()
            && joint_terms.len() == 2
            && place_on_path(model, rest_joints, &edges, joint_terms[0], joint_terms[1])
                .map(|(ei, t)| on_edge[ei].push((t, node)))
                .is_some();
        if !placed {
            let nearest = (0..NUM_JOINTS)
                .min_by(|&a, &b| {
                    (rest_joints[a] - centers[k])
                        .norm_squared()
                        .total_cmp(&(rest_joints[b] - centers[k]).norm_squared())
                })
                .unwrap();
            extra_links.push((nearest, node));
        }
    }
    adj.resize(next, Vec::new());
    let link = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
        adj[a].push(b);
        adj[b].push(a);
    };
    for (ei, &(p, c)) in edges.iter().enumerate() {
        let mut nodes = on_edge[ei].clone();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut prev = p;
        for (_, n) in nodes {
            link(prev, n, &mut adj);
            prev = n;
        }
        link(prev, c, &mut adj);
    }
    for (a, b) in extra_links {
        link(a, b, &mut adj);
    }

    let mut is_center = vec![Vec::new(); next];
    for (k, &n) in center_node.iter().enumerate() {
        is_center[n].push(k);
    }
    let mut out = BTreeSet::new();
    for (k, &start) in center_node.iter().enumerate() {
        for &other in &is_center[start] {
            if other != k {
                out.insert((k.min(other), k.max(other)));
            }
        }
        let mut seen = vec![false; next];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &m in &adj[n] {
                if seen[m] {
                    continue;
                }
                seen[m] = true;
                if is_center[m].is_empty() {
                    queue.push_back(m);
                } else {
                    for &other in &is_center[m] {
                        out.insert((k.min(other), k.max(other)));
                    }
                }
            }
        }
    }
    out
}

/// Locates the point `wa * a + wb * b` on the skeleton path from joint `a`
/// to joint `b`: returns the edge index and the fraction along that edge
/// measured from its parent end.
fn place_on_path(
    model: &BodyModel,
    rest: &[Vec3],
    edges: &[(usize, usize)],
    (a, wa): (usize, f64),
    (b, _wb): (usize, f64),
) -> Option<(usize, f64)> {
    let path = tree_path(&model.parents, a, b)?;
    let lengths: Vec<f64> = path.windows(2).map(|w| (rest[w[0]] - rest[w[1]]).norm()).collect();
    let total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        return None;
    }
    // Distance from `a` along the path: the point sits at (1 - wa) of the way.
    let mut target = (1.0 - wa) * total;
    for (i, w) in path.windows(2).enumerate() {
        if target <= lengths[i] || i + 1 == lengths.len() {
            let t = (target / lengths[i]).clamp(0.0, 1.0);
            let (from, to) = (w[0], w[1]);
            let ei = edges
                .iter()
                .position(|&e| e == (from, to) || e == (to, from))?;
            let frac = if edges[ei].0 == from { t } else { 1.0 - t };
            return Some((ei, frac));
        }
        target -= lengths[i];
    }
    None
}

fn tree_path(parents: &[Option<usize>; NUM_JOINTS], a: usize, b: usize) -> Option<Vec<usize>> {
    let ancestors = |mut j: usize| {
        let mut out = vec![j];
        while let Some(p) = parents[j] {
            out.push(p);
            j = p;
        }
        out
    };
    let pa = ancestors(a);
    let pb = ancestors(b);
    let common = *pa.iter().find(|j| pb.contains(j))?;
    let mut path: Vec<usize> = pa.iter().copied().take_while(|&j| j != common).collect();
    path.push(common);
    let tail: Vec<usize> = pb.iter().copied().take_while(|&j| j != common).collect();
    path.extend(tail.into_iter().rev());
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::segments as S;
    use super::*;
    use crate::doll::{synth_doll, DollSpec};
    use crate::rotation::rodrigues;

    fn setup() -> (BodyModel, SegmentMap) {
        let m = synth_doll(&DollSpec::default()).unwrap();
        let s = assign_vertices(&m, &default_center_spec()).unwrap();
        (m, s)
    }

    #[test]
    fn table_shape() {
        let spec = default_center_spec();
        assert_eq!(spec.entries.len(), 24);
        spec.validate().unwrap();
        let mid = &spec.entries[S::L_FOREARM];
        assert_eq!(mid.name, "mid of left elbow and hand");
        assert_eq!(
            mid.terms,
            vec![(Anchor::Joint(J::L_ELBOW), 0.5), (Anchor::Joint(J::L_HAND), 0.5)]
        );
        for e in &spec.entries {
            let s: f64 = e.terms.iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_is_complete_and_nonempty() {
        let (m, s) = setup();
        let total: usize = (0..NUM_SEGMENTS).map(|k| s.members(k).len()).sum();
        assert_eq!(total, m.num_vertices());
        for k in 0..NUM_SEGMENTS {
            assert!(!s.members(k).is_empty(), "segment {k}");
        }
    }

    #[test]
    fn vertex_at_center_joins_that_segment() {
        let (m, _) = setup();
        let spec = default_center_spec();
        let rest = m.forward(&FrameParams::default()).unwrap();
        let centers = spec.centers(&rest);
        // Move one vertex onto the left-hand center and re-run the assignment.
        let mut moved = m.clone();
        let v = 0;
        moved.v_template[v] = centers[S::L_HAND];
        let s = assign_vertices(&moved, &spec).unwrap();
        assert_eq!(s.vertex_segment[v], S::L_HAND);
    }

    #[test]
    fn exclusion_examples() {
        let (_, s) = setup();
        for h in [S::HEAD_L_EAR, S::HEAD_R_EAR, S::HEAD_NOSE] {
            assert!(s.is_excluded(h, S::L_SHOULDER));
            assert!(s.is_excluded(S::L_SHOULDER, h));
        }
        assert!(s.is_excluded(S::L_ELBOW, S::L_FOREARM));
        assert!(s.is_excluded(S::L_FOREARM, S::L_HAND));
        assert!(s.is_excluded(S::L_SHOULDER, S::L_UPPER_ARM));
        for t in S::TORSO {
            assert!(!s.is_excluded(S::L_HAND, t));
            assert!(!s.is_excluded(S::R_HAND, t));
        }
        assert!(!s.is_excluded(S::L_HAND, S::R_HAND));
        assert_eq!(s.hand_torso_pairs().len(), 20);
    }

    #[test]
    fn container_round_trip_and_determinism() {
        let (m, s) = setup();
        let back = SegmentMap::from_container(&s.to_container()).unwrap();
        assert_eq!(back, s);
        let again = assign_vertices(&m, &default_center_spec()).unwrap();
        assert_eq!(again.to_container().to_bytes(), s.to_container().to_bytes());
    }

    #[test]
    fn centers_follow_posed_joints() {
        let (m, _) = setup();
        let spec = default_center_spec();
        let mut p = FrameParams::default();
        p.theta[J::L_ELBOW] = Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        p.trans = Vec3::new(0.3, -0.2, 0.1);
        let body = m.forward(&p).unwrap();
        let c = posed_centers(&body, &spec);
        let mid = (body.joints[J::L_ELBOW] + body.joints[J::L_HAND]) * 0.5;
        assert!((c[S::L_FOREARM] - mid).norm() < 1e-12);

        let r = rodrigues(&Vec3::new(0.2, -0.4, 0.9));
        let t = Vec3::new(1.0, 2.0, -0.5);
        let moved = PosedBody {
            vertices: body.vertices.iter().map(|v| r * v + t).collect(),
            joints: body.joints.iter().map(|v| r * v + t).collect(),
            keypoints: body.keypoints.iter().map(|v| r * v + t).collect(),
        };
        for (a, b) in posed_centers(&moved, &spec).iter().zip(&c) {
            assert!((a - (r * b + t)).norm() < 1e-9);
        }
    }

    #[test]
    fn bad_spec_is_rejected() {
        let mut spec = default_center_spec();
        spec.entries[8].terms[0].1 = 0.7;
        assert!(spec.validate().is_err());
        spec.entries.pop();
        assert!(spec.validate().is_err());
    }
}
