//! Quick in-binary checks: fast kernels against the naive oracles, the
//! scaling rules against the configuration table, and a decode round trip.

use effhrnet::decoder::{decode, DecodeParams};
use effhrnet::kernels::{self, BatchNormParams};
use effhrnet::reference;
use effhrnet::scaling::{branch_width_formula, config_for_phi, input_resolution, supported_phis};
use effhrnet::synthetic::{match_poses, random_scene};
use effhrnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOLERANCE: f32 = 1e-5;

fn kernel_oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f32;
    for _ in 0..100 {
        let groups = [1, 2][rng.gen_range(0..2)];
        let cin = groups * rng.gen_range(1..4);
        let cout = groups * rng.gen_range(1..4);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..=k / 2));
        let (h, w) = (rng.gen_range(k..9), rng.gen_range(k..9));
        let x = Tensor::random_uniform([1, cin, h, w], &mut rng, -1.0, 1.0);
        let wt = Tensor::random_uniform([cout, cin / groups, k, k], &mut rng, -1.0, 1.0);
        let fast = kernels::conv2d(&x, &wt, None, stride, pad, groups).expect("valid conv");
        worst = worst.max(fast.max_abs_diff(&reference::conv2d(&x, &wt, None, stride, pad, groups)));

        let wt = Tensor::random_uniform([cin, cout, 4, 4], &mut rng, -1.0, 1.0);
        let fast = kernels::conv2d_transposed(&x, &wt, 2, 1).expect("valid deconv");
        worst = worst.max(fast.max_abs_diff(&reference::conv2d_transposed(&x, &wt, 2, 1)));

        let mut p = BatchNormParams::identity(cin);
        p.mean = (0..cin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        p.variance = (0..cin).map(|_| rng.gen_range(0.1..2.0)).collect();
        let fast = kernels::batchnorm_inference(&x, &p).expect("matching channels");
        worst = worst.max(fast.max_abs_diff(&reference::batchnorm(&x, &p)));

        let fast = kernels::maxpool_window(&x, 3).expect("odd window");
        worst = worst.max(fast.max_abs_diff(&reference::maxpool(&x, 3)));
    }
    (worst <= ORACLE_TOLERANCE, format!("100 cases, max |diff| {worst:.1e}"))
}

fn scaling_rules() -> (bool, String) {
    let mut ok = true;
    for phi in supported_phis() {
        let c = config_for_phi(phi).expect("supported phi");
        ok &= c.input_resolution == input_resolution(phi).expect("in range");
        ok &= c.tag_size * 4 == c.input_resolution && c.heatmap_size * 2 == c.input_resolution;
        // The closed-form widths land within 3% of the published ones.
        for n in 1..=4 {
            let (f, t) = (branch_width_formula(n, phi) as f64, c.branch_widths[n - 1] as f64);
            ok &= (f - t).abs() <= 0.03 * t;
        }
    }
    (ok, "table rows agree with the closed-form rules".into())
}

fn decode_round_trip() -> (bool, String) {
    let cfg = config_for_phi(-4)
        .and_then(|c| c.with_resolution(128))
        .expect("valid override");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ok = 0;
    let trials = 20;
    for _ in 0..trials {
        let n = rng.gen_range(1..=4);
        let scene = random_scene(&cfg, n, 20.0, 5.0, &mut rng);
        let Ok((first, refined)) = scene.render() else { continue };
        let Ok(poses) = decode(&first, &refined, &cfg, &DecodeParams::default()) else { continue };
        let m = match_poses(&scene, &poses, 2.0);
        ok += (m.decoded_persons == n && m.recovered_joints == m.planted_joints) as usize;
    }
    (ok == trials, format!("{ok}/{trials} synthetic scenes recovered"))
}

pub fn run() -> bool {
    let checks: [(&str, fn() -> (bool, String)); 3] = [
        ("kernel oracles", kernel_oracles),
        ("scaling rules", scaling_rules),
        ("decode round trip", decode_round_trip),
    ];
    let mut all = true;
    for (name, f) in checks {
        let (ok, detail) = f();
        all &= ok;
        println!("{name}: {} ({detail})", if ok { "ok" } else { "FAILED" });
    }
    all
}
