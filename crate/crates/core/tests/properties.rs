use hopsense::motion_synth::{truncated_half_normal, NoiseModel};
use hopsense::pipeline::{
    calibration_from_recording, joint_angle_series, mae, pearson, read_recording, write_recording, AngleSeries,
    RecordingFrame,
};
use hopsense::protocol::{check_conservation, check_tdma, ProtocolKind};
use hopsense::quatmath::{
    enu_to_left_handed, hamilton_product, left_handed_to_enu, shortest_angle_deg, slerp, UnitQuaternion,
};
use hopsense::scenario::{simulate, simulate_radio, InterferencePreset, Mounting, Scenario, Simulation};
use hopsense::skeleton::{JointSpec, Skeleton};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("away from zero", |c| c.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|c| UnitQuaternion::normalize(c[0], c[1], c[2], c[3]).unwrap())
}

fn matrix(q: UnitQuaternion) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q.components();
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

fn elbow(sim: &Simulation) -> AngleSeries {
    let calib = calibration_from_recording(&sim.recording, sim.pose).unwrap();
    let joint = JointSpec::by_label("right-elbow").unwrap();
    joint_angle_series(&sim.recording, &calib, &Skeleton::standard(), &joint).unwrap()
}

fn static_joint(angle: f64, seed: u64, mounting: Mounting) -> AngleSeries {
    let mut sc = Scenario::new("artificial-joint").with_seed(seed);
    sc.motion.params.angle_deg = Some(angle);
    sc.motion.noise = NoiseModel::zero();
    sc.motion.mounting = mounting;
    sc.session.duration_s = Some(0.3);
    elbow(&simulate(&sc).unwrap())
}

/// Mean of |N(0, sigma)| restricted to [0, max], by Simpson's rule.
fn truncated_mean_integral(sigma: f64, max: f64) -> f64 {
    let n = 2000;
    let h = max / n as f64;
    let pdf = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        num += w * x * pdf(x);
        den += w * pdf(x);
    }
    num / den
}

proptest! {
    #[test]
    fn hamilton_matches_matrix_composition(a in quaternion(), b in quaternion()) {
        let got = matrix(hamilton_product(a, b).unwrap());
        let (ma, mb) = (matrix(a), matrix(b));
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..3).map(|k| ma[i][k] * mb[k][j]).sum();
                prop_assert!((got[i][j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frame_change_preserves_dot_and_inverts(a in quaternion(), b in quaternion()) {
        prop_assert!((enu_to_left_handed(a).dot(enu_to_left_handed(b)) - a.dot(b)).abs() < 1e-12);
        let back = left_handed_to_enu(enu_to_left_handed(a));
        prop_assert_eq!(back.components(), a.components());
    }

    #[test]
    fn slerp_angle_is_linear_in_t(a in quaternion(), b in quaternion(), t in 0.0f64..=1.0) {
        let total = shortest_angle_deg(a, b).0;
        let part = shortest_angle_deg(a, slerp(a, b, t).unwrap()).0;
        prop_assert!((part - t * total).abs() < 1e-6, "{part} vs {}", t * total);
    }

    #[test]
    fn shortest_angle_agrees_with_acos_form(a in quaternion(), b in quaternion()) {
        let d = a.dot(b).abs();
        prop_assume!(d < 0.999);
        let want = 2.0 * d.acos().to_degrees();
        prop_assert!((shortest_angle_deg(a, b).0 - want).abs() < 1e-9);
    }

    #[test]
    fn mae_survives_swapping_the_grid(
        phase in 0.0f64..6.0,
        amp in 10.0f64..90.0,
        offset in 0u64..7,
    ) {
        // Smooth series sampled on two interleaved grids.
        let f = |t: u64| amp * (phase + t as f64 * 1e-3).sin();
        let g = |t: u64| amp * (phase + t as f64 * 1e-3).sin() + 0.5 * (t as f64 * 4e-4).cos();
        let a = AngleSeries::new("a", (0..400).map(|i| (i * 10, f(i * 10))).collect());
        let b = AngleSeries::new("b", (0..300).map(|i| (i * 13 + offset, g(i * 13 + offset))).collect());
        let ab = mae(&a, &b).unwrap();
        let ba = mae(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 0.01, "{ab} vs {ba}");
    }

    #[test]
    fn pearson_is_affine_invariant(
        xs in prop::collection::vec(-100.0f64..100.0, 5..40),
        noise in prop::collection::vec(-10.0f64..10.0, 40),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let a = AngleSeries::new("a", xs.iter().enumerate().map(|(i, &x)| (i as u64, x)).collect());
        let b = AngleSeries::new("b", xs.iter().zip(&noise).enumerate().map(|(i, (&x, &n))| (i as u64, x + n)).collect());
        let b2 = AngleSeries::new("b2", b.points.iter().map(|&(t, v)| (t, scale * v + shift)).collect());
        if let (Ok(r1), Ok(r2)) = (pearson(&a, &b), pearson(&a, &b2)) {
            prop_assert!((r1 - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn recording_csv_round_trips(
        rows in prop::collection::vec((0u64..1u64 << 30, 1u16..=12, 1u64..1_000, quaternion(), 0u8..=3), 0..50)
    ) {
        let mut t = 0;
        let mut seqs = std::collections::BTreeMap::new();
        let frames: Vec<_> = rows
            .into_iter()
            .map(|(dt, s, gap, q, st)| {
                t += dt;
                let seq = seqs.entry(s).or_insert(0);
                *seq += gap;
                RecordingFrame::new(t, s, *seq, q, st).unwrap()
            })
            .collect();
        let text = write_recording(&frames).unwrap();
        let back = read_recording(&text).unwrap();
        prop_assert_eq!(&back, &frames);
        prop_assert_eq!(write_recording(&back).unwrap(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_noise_recovers_any_hinge_angle(angle in 0.0f64..150.0, seed in any::<u64>()) {
        let s = static_joint(angle, seed, Mounting::Random);
        prop_assert!(!s.points.is_empty());
        for v in s.values() {
            prop_assert!((v - angle).abs() < 1e-6, "{v} vs {angle}");
        }
    }

    #[test]
    fn mounting_offsets_cancel(angle in 0.0f64..150.0, seed in any::<u64>()) {
        let a = static_joint(angle, seed, Mounting::Random);
        let b = static_joint(angle, seed, Mounting::Aligned);
        prop_assert_eq!(a.points.len(), b.points.len());
        for ((ta, va), (tb, vb)) in a.points.iter().zip(&b.points) {
            prop_assert_eq!(ta, tb);
            prop_assert!((va - vb).abs() < 1e-6);
        }
    }

    #[test]
    fn crowded_traces_conserve_packets(seed in any::<u64>(), ble in any::<bool>()) {
        let kind = if ble { ProtocolKind::BleBaseline } else { ProtocolKind::Cw };
        let mut sc = Scenario::new("arm-raise")
            .with_seed(seed)
            .with_protocol(kind)
            .with_interference(InterferencePreset::Crowded)
            .with_placement("p5-upper");
        sc.session.duration_s = Some(2.0);
        let (trace, _) = simulate_radio(&sc).unwrap();
        prop_assert!(check_conservation(&trace).is_ok());
        if !ble {
            prop_assert!(check_tdma(&trace).is_ok());
        }
        let (again, _) = simulate_radio(&sc).unwrap();
        prop_assert_eq!(trace.records, again.records);
    }
}

#[test]
fn truncated_half_normal_matches_its_integral() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (sigma, max) in [(0.3, 2.0), (1.2, 3.5), (1.0, 0.5), (2.0, 1.0)] {
        let n = 40_000;
        let draws: Vec<f64> = (0..n).map(|_| truncated_half_normal(&mut rng, sigma, max)).collect();
        assert!(draws.iter().all(|&x| (0.0..=max).contains(&x)));
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = truncated_mean_integral(sigma, max);
        let se = (var / n as f64).sqrt();
        assert!((mean - want).abs() < 5.0 * se, "sigma {sigma} max {max}: {mean} vs {want}");
    }
}
