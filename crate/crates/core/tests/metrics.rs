#[path = "support/metric_oracle.rs"]
mod metric_oracle;

use bedfit::metrics::*;
use bedfit::Vec3;
use metric_oracle::P3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_vec3(f: &[Vec<P3>]) -> Vec<Vec<Vec3>> {
    f.iter().map(|r| r.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()).collect()
}

/// A noisy, rotated, scaled and shifted copy of a random skeleton.
fn instance(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> (Vec<Vec<P3>>, Vec<Vec<P3>>) {
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..frames {
        let g: Vec<P3> = (0..joints)
            .map(|_| [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.0..0.4)])
            .collect();
        let angle: f64 = rng.gen_range(-1.0..1.0);
        let (c, s) = (angle.cos(), angle.sin());
        let scale = rng.gen_range(0.8..1.2);
        let shift = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
        let p = g
            .iter()
            .map(|q| {
                let r = [c * q[0] - s * q[1], s * q[0] + c * q[1], q[2]];
                [
                    scale * r[0] + shift[0] + rng.gen_range(-0.02..0.02),
                    scale * r[1] + shift[1] + rng.gen_range(-0.02..0.02),
                    scale * r[2] + shift[2] + rng.gen_range(-0.02..0.02),
                ]
            })
            .collect();
        gt.push(g);
        pred.push(p);
    }
    (pred, gt)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs().max(1e-12)
}

#[test]
fn metrics_match_independent_scripts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let frames = rng.gen_range(3..8);
        let (p, g) = instance(&mut rng, frames, 24);
        let (pv, gv) = (to_vec3(&p), to_vec3(&g));
        let m = mpjpe(&pv, &gv).unwrap();
        assert!(close(m, metric_oracle::mean_error_mm(&p, &g)), "case {case}");
        assert!(close(mpve(&pv, &gv).unwrap(), metric_oracle::mean_error_mm(&p, &g)));
        let pa = pa_mpjpe(&pv, &gv).unwrap();
        assert!(close(pa, metric_oracle::aligned_error_mm(&p, &g)), "case {case}: {pa}");
        assert!(pa <= m);
        let acc = acc_err(&pv, &gv, 30.0).unwrap();
        assert!(close(acc, metric_oracle::acceleration_error(&p, &g, 30.0)), "case {case}");
        let p2: Vec<Vec<[f64; 2]>> = p.iter().map(|f| f.iter().map(|q| [q[0] * 500.0, q[1] * 500.0]).collect()).collect();
        let g2: Vec<Vec<[f64; 2]>> = g.iter().map(|f| f.iter().map(|q| [q[0] * 500.0, q[1] * 500.0]).collect()).collect();
        assert!(close(mpjpe2d(&p2, &g2).unwrap(), metric_oracle::mean_error_px(&p2, &g2)));
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let a = vec![vec![Vec3::zeros(); 3]];
    let b = vec![vec![Vec3::zeros(); 4]];
    assert!(mpjpe(&a, &b).is_err());
    assert!(acc_err(&a, &a, 30.0).is_err());
    let c = vec![vec![Vec3::zeros(); 3]; 3];
    assert!(acc_err(&c, &c, 0.0).is_err());
}

fn arb_frame() -> impl Strategy<Value = (Vec<P3>, Vec<P3>, P3)> {
    let pt = || prop::array::uniform3(-1.0f64..1.0);
    (
        prop::collection::vec(pt(), 6),
        prop::collection::vec(pt(), 6),
        prop::array::uniform3(-2.0f64..2.0),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alignment_never_hurts_and_ignores_translation((p, g, d) in arb_frame()) {
        let pv = to_vec3(&[p.clone()]);
        let gv = to_vec3(&[g]);
        let pa = pa_mpjpe(&pv, &gv).unwrap();
        prop_assert!(pa <= mpjpe(&pv, &gv).unwrap() + 1e-9);
        let moved: Vec<P3> = p.iter().map(|q| [q[0] + d[0], q[1] + d[1], q[2] + d[2]]).collect();
        let pa2 = pa_mpjpe(&to_vec3(&[moved]), &gv).unwrap();
        prop_assert!((pa - pa2).abs() < 1e-8);
    }
}
