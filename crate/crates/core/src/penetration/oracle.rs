//! Brute-force inside/outside labels from generalized winding numbers.

use std::collections::HashMap;
use std::f64::consts::PI;

use log::warn;

use crate::model::Vec3;

/// Signed solid angle of triangle `abc` seen from `p` (Van Oosterom and
/// Strackee). Zero when `p` coincides with a corner.
pub fn solid_angle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (a, b, c) = (a - p, b - p, c - p);
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
    2.0 * num.atan2(den)
}

/// Generalized winding number of `p` with respect to the triangles in
/// `faces`, skipping the sorted face indices in `skip`.
pub fn winding_number(
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    p: &Vec3,
    skip: Option<&[usize]>,
) -> f64 {
    let mut total = 0.0;
    for f in faces {
        total += solid_angle(p, &vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
    }
    if let Some(skip) = skip {
        for &i in skip {
            let f = faces[i];
            total -= solid_angle(p, &vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
        }
    }
    total / (4.0 * PI)
}

/// True when every directed edge appears once and its reverse once.
pub fn is_watertight(faces: &[[usize; 3]]) -> bool {
    let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            *edges.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    edges
        .iter()
        .all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
}

/// Mesh topology reused across frames: the faces within two rings of
/// every vertex and whether the surface is closed.
#[derive(Debug, Clone)]
pub struct Oracle {
    faces: Vec<[usize; 3]>,
    excluded: Vec<Vec<usize>>,
    watertight: bool,
}

const RAY_DIRECTIONS: [[f64; 3]; 3] = [
    [0.267_261, 0.534_522, 0.801_784],
    [-0.707_107, 0.141_421, 0.692_820],
    [0.371_391, -0.928_477, 0.0],
];

impl Oracle {
    pub fn new(faces: &[[usize; 3]], num_vertices: usize) -> Self {
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); num_vertices];
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                incident[v].push(i);
            }
        }
        let excluded = (0..num_vertices)
            .map(|v| {
                let mut ring: Vec<usize> = incident[v]
                    .iter()
                    .flat_map(|&fi| faces[fi])
                    .collect();
                ring.sort_unstable();
                ring.dedup();
                let mut set: Vec<usize> = ring
                    .iter()
                    .flat_map(|&u| incident[u].iter().copied())
                    .collect();
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();
        let watertight = is_watertight(faces);
        if !watertight {
            warn!("mesh is not watertight; inside tests fall back to ray parity");
        }
        Oracle {
            faces: faces.to_vec(),
            excluded,
            watertight,
        }
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn winding(&self, vertices: &[Vec3], v: usize) -> f64 {
        winding_number(vertices, &self.faces, &vertices[v], Some(&self.excluded[v]))
    }

    /// Inside flag for every vertex of the posed mesh.
    pub fn detect(&self, vertices: &[Vec3]) -> Vec<bool> {
        (0..vertices.len())
            .map(|v| {
                if self.watertight {
                    self.winding(vertices, v) > 0.5
                } else {
                    self.ray_vote(vertices, v)
                }
            })
            .collect()
    }

    /// Parity vote over three rays cast into the outward hemisphere of the
    /// vertex normal, so the ray leaves the vertex's own surface.
    fn ray_vote(&self, vertices: &[Vec3], v: usize) -> bool {
        let skip = &self.excluded[v];
        let normal = self.faces
            .iter()
            .filter(|f| f.contains(&v))
            .fold(Vec3::zeros(), |acc, f| {
                acc + (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]))
            });
        let odd = RAY_DIRECTIONS
            .iter()
            .filter(|d| {
                let mut dir = Vec3::new(d[0], d[1], d[2]);
                if dir.dot(&normal) < 0.0 {
                    dir = -dir;
                }
                let hits = self
                    .faces
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| skip.binary_search(i).is_err())
                    .filter(|(_, f)| {
                        ray_hits(&vertices[v], &dir, &vertices[f[0]], &vertices[f[1]], &vertices[f[2]])
                    })
                    .count();
                hits % 2 == 1
            })
            .count();
        odd >= 2
    }
}

/// Moller-Trumbore ray/triangle test for `t > 0`.
fn ray_hits(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let w = d.dot(&q) * inv;
    if w < 0.0 || u + w > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 1e-12
}
