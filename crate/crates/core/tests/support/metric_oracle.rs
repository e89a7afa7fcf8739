//! Plain-array reimplementations of the metrics, written without the
//! library's helpers. Procrustes uses Horn's unit-quaternion solution
//! instead of an SVD.

#![allow(dead_code)]

pub type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: P3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn mean_error_mm(pred: &[Vec<P3>], gt: &[Vec<P3>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for f in 0..pred.len() {
        for j in 0..pred[f].len() {
            sum += norm(sub(pred[f][j], gt[f][j]));
            n += 1.0;
        }
    }
    1000.0 * sum / n
}

pub fn mean_error_px(pred: &[Vec<[f64; 2]>], gt: &[Vec<[f64; 2]>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for f in 0..pred.len() {
        for j in 0..pred[f].len() {
            let dx = pred[f][j][0] - gt[f][j][0];
            let dy = pred[f][j][1] - gt[f][j][1];
            sum += (dx * dx + dy * dy).sqrt();
            n += 1.0;
        }
    }
    sum / n
}

pub fn acceleration_error(pred: &[Vec<P3>], gt: &[Vec<P3>], fps: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for f in 1..pred.len() - 1 {
        for j in 0..pred[f].len() {
            let mut d = [0.0; 3];
            for a in 0..3 {
                let ap = pred[f - 1][j][a] - 2.0 * pred[f][j][a] + pred[f + 1][j][a];
                let ag = gt[f - 1][j][a] - 2.0 * gt[f][j][a] + gt[f + 1][j][a];
                d[a] = ap - ag;
            }
            sum += norm(d);
            n += 1.0;
        }
    }
    1000.0 * fps * fps * sum / n
}

/// Largest eigenvector of a symmetric 4x4 matrix by cyclic Jacobi.
fn top_eigenvector(mut m: [[f64; 4]; 4]) -> [f64; 4] {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..4 {
            for q in p + 1..4 {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..4 {
            for q in p + 1..4 {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..4 {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let best = (0..4).max_by(|&a, &b| m[a][a].partial_cmp(&m[b][b]).unwrap()).unwrap();
    [v[0][best], v[1][best], v[2][best], v[3][best]]
}

fn quat_to_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

fn apply(r: &[[f64; 3]; 3], p: P3) -> P3 {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

/// Aligned points `s R p + t` for the least-squares similarity onto `g`.
pub fn horn_align(p: &[P3], g: &[P3]) -> Vec<P3> {
    let n = p.len() as f64;
    let mut cp = [0.0; 3];
    let mut cg = [0.0; 3];
    for i in 0..p.len() {
        for a in 0..3 {
            cp[a] += p[i][a] / n;
            cg[a] += g[i][a] / n;
        }
    }
    let pc: Vec<P3> = p.iter().map(|&x| sub(x, cp)).collect();
    let gc: Vec<P3> = g.iter().map(|&x| sub(x, cg)).collect();
    let mut s = [[0.0; 3]; 3];
    for i in 0..p.len() {
        for a in 0..3 {
            for b in 0..3 {
                s[a][b] += pc[i][a] * gc[i][b];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let nmat = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let q = top_eigenvector(nmat);
    let qn = (q.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let r = quat_to_matrix([q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn]);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        let rp = apply(&r, pc[i]);
        num += rp[0] * gc[i][0] + rp[1] * gc[i][1] + rp[2] * gc[i][2];
        den += pc[i][0] * pc[i][0] + pc[i][1] * pc[i][1] + pc[i][2] * pc[i][2];
    }
    let scale = num / den;
    pc.iter()
        .map(|&x| {
            let rp = apply(&r, x);
            [scale * rp[0] + cg[0], scale * rp[1] + cg[1], scale * rp[2] + cg[2]]
        })
        .collect()
}

pub fn aligned_error_mm(pred: &[Vec<P3>], gt: &[Vec<P3>]) -> f64 {
    let aligned: Vec<Vec<P3>> = pred.iter().zip(gt).map(|(p, g)| horn_align(p, g)).collect();
    mean_error_mm(&aligned, gt)
}
