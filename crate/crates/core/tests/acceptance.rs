//! End-to-end acceptance suite. Runs every criterion, prints one line per
//! criterion and exits non-zero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use hopsense::motion_synth::NoiseModel;
use hopsense::pipeline::{
    calibration_from_recording, joint_angle_series, mae, pearson, read_recording, write_recording, AngleSeries,
    RecordingFrame,
};
use hopsense::protocol::{
    check_channel_agreement, check_conservation, check_tdma, resync_latencies, ProtocolKind, SessionMetrics,
    SessionTrace, TimingProfile,
};
use hopsense::quatmath::{enu_to_left_handed, hamilton_product, UnitQuaternion};
use hopsense::radio::{session_trace_csv, Band, ChannelPlan, Interferer, InterfererKind};
use hopsense::scenario::{initial_channel, simulate, simulate_radio, InterferencePreset, Scenario, Simulation};
use hopsense::skeleton::{JointSpec, Skeleton};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn random_quaternion(rng: &mut ChaCha8Rng) -> UnitQuaternion {
    let c: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    UnitQuaternion::normalize(c[0], c[1], c[2], c[3]).unwrap()
}

/// Rotation matrix of a unit quaternion, written out longhand.
fn matrix(q: UnitQuaternion) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q.components();
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

fn quaternion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut worst_mat, mut worst_dot) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (a, b) = (random_quaternion(&mut rng), random_quaternion(&mut rng));
        let got = matrix(hamilton_product(a, b).map_err(|e| e.to_string())?);
        let want = matmul(matrix(a), matrix(b));
        for i in 0..3 {
            for j in 0..3 {
                worst_mat = worst_mat.max((got[i][j] - want[i][j]).abs());
            }
        }
        let d = enu_to_left_handed(a).dot(enu_to_left_handed(b)) - a.dot(b);
        worst_dot = worst_dot.max(d.abs());
    }
    let detail = format!("10^4 pairs, max matrix error {worst_mat:.2e}, max dot4 drift {worst_dot:.2e}");
    if worst_mat <= 1e-9 && worst_dot <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn angle_series(sim: &Simulation, joint: &str) -> Result<AngleSeries, String> {
    let calib = calibration_from_recording(&sim.recording, sim.pose).map_err(|e| e.to_string())?;
    let joint = JointSpec::by_label(joint).map_err(|e| e.to_string())?;
    joint_angle_series(&sim.recording, &calib, &Skeleton::standard(), &joint).map_err(|e| e.to_string())
}

fn static_joint(angle: f64, noise: NoiseModel, seed: u64) -> Result<Vec<f64>, String> {
    let mut sc = Scenario::new("artificial-joint").with_seed(seed);
    sc.motion.params.angle_deg = Some(angle);
    sc.motion.noise = noise;
    let sim = simulate(&sc).map_err(|e| e.to_string())?;
    let s = angle_series(&sim, "right-elbow")?;
    if s.points.is_empty() {
        return Err(format!("no angle samples at {angle}°"));
    }
    Ok(s.values().collect())
}

fn zero_noise_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for step in 1..=10 {
        let set = 10.0 * step as f64;
        for v in static_joint(set, NoiseModel::zero(), step)? {
            worst = worst.max((v - set).abs());
        }
    }
    let detail = format!("10°..100°, max error {worst:.2e}°");
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn noisy_static_accuracy() -> Outcome {
    let mut worst = (0.0f64, 0.0);
    for step in 1..=10 {
        let set = 10.0 * step as f64;
        let mut trial_means = vec![];
        for trial in 0..5 {
            let v = static_joint(set, NoiseModel::default(), 100 * step + trial)?;
            trial_means.push(v.iter().sum::<f64>() / v.len() as f64 - set);
        }
        let err = trial_means.iter().sum::<f64>() / trial_means.len() as f64;
        if err.abs() > worst.0.abs() {
            worst = (err, set);
        }
    }
    let detail = format!("worst mean error {:+.3}° at {}°", worst.0, worst.1);
    if worst.0.abs() < 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dynamic_elbow() -> Outcome {
    let sc = Scenario::new("elbow-flexion").with_seed(3);
    let sim = simulate(&sc).map_err(|e| e.to_string())?;
    let measured = angle_series(&sim, "right-elbow")?;
    let truth_sim = Simulation {
        recording: sim.ground_truth.clone(),
        ..sim.clone()
    };
    let truth = angle_series(&truth_sim, "right-elbow")?;
    let e = mae(&measured, &truth).map_err(|e| e.to_string())?;
    let r = pearson(&measured, &truth).map_err(|e| e.to_string())?;
    let detail = format!("right elbow MAE {e:.3}°, Pearson {r:.5}");
    if e < 5.0 && r > 0.99 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn clean_rates(sc: &Scenario) -> Result<SessionMetrics, String> {
    Ok(simulate_radio(sc).map_err(|e| e.to_string())?.1)
}

fn throughput() -> Outcome {
    let mut p10 = Scenario::new("half-jacks");
    p10.motion.params.sensors = Some(10);
    let mut p12 = Scenario::new("half-jacks");
    p12.motion.params.sensors = Some(12);
    let mut single = Scenario::new("artificial-joint");
    single.placement.sensors = Some(vec![3]);
    let (m10, m12, m1) = (clean_rates(&p10)?, clean_rates(&p12)?, clean_rates(&single)?);
    let range = |m: &SessionMetrics| {
        let r: Vec<f64> = m.sensors.values().map(|s| s.mean_rate_hz).collect();
        (r.iter().copied().fold(f64::MAX, f64::min), r.iter().copied().fold(f64::MIN, f64::max))
    };
    let (lo10, hi10) = range(&m10);
    let (lo12, hi12) = range(&m12);
    let one = m1.mean_rate();
    let detail = format!("10 sensors {lo10:.2}-{hi10:.2} Hz, 12 sensors {lo12:.2}-{hi12:.2} Hz, 1 sensor {one:.4} Hz");
    let ok = lo10 >= 40.0 && hi10 <= 60.0 && lo12 >= 28.0 && hi12 <= 42.0 && (one - 60.0).abs() < 1e-3;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Length of the unrecorded join phase used for the crowded comparison.
const CROWDED_SETUP_S: f64 = 3.0;

fn crowded(seed: u64, kind: ProtocolKind) -> Scenario {
    let mut sc = Scenario::new("arm-raise")
        .with_seed(seed)
        .with_protocol(kind)
        .with_interference(InterferencePreset::Crowded)
        .with_placement("p5-upper");
    sc.session.setup_s = CROWDED_SETUP_S;
    sc
}

type RadioRun = (SessionTrace, SessionMetrics);

fn crowded_sweep(seeds: u64) -> Result<Vec<(RadioRun, RadioRun)>, String> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let run = |seed: u64| -> Result<(RadioRun, RadioRun), String> {
        let cw = simulate_radio(&crowded(seed, ProtocolKind::Cw)).map_err(|e| e.to_string())?;
        let ble = simulate_radio(&crowded(seed, ProtocolKind::BleBaseline)).map_err(|e| e.to_string())?;
        Ok((cw, ble))
    };
    let mut chunks: Vec<Vec<_>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w..seeds).step_by(workers as usize).map(run).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    // Reassemble in seed order.
    let mut out = Vec::with_capacity(seeds as usize);
    for seed in 0..seeds {
        let w = (seed % workers) as usize;
        out.push(chunks[w].remove(0)?);
    }
    Ok(out)
}

fn interference_ordering(runs: &[(RadioRun, RadioRun)]) -> Outcome {
    let (mut dominates, mut ble_low, mut cw_high) = (0, 0, 0);
    for ((_, cw), (_, ble)) in runs {
        dominates += cw
            .sensors
            .iter()
            .all(|(s, m)| ble.sensors.get(s).is_some_and(|b| m.mean_rate_hz > b.mean_rate_hz))
            as usize;
        ble_low += (ble.min_window_rate() < 10.0) as usize;
        cw_high += (cw.min_window_rate() >= 40.0) as usize;
    }
    let n = runs.len();
    let detail = format!(
        "{n} seeds: CW beats BLE on every sensor in {dominates}, BLE dips below 10 Hz in {ble_low}, CW stays at or above 40 Hz in {cw_high}"
    );
    if dominates * 100 >= 95 * n && ble_low * 100 >= 80 * n && cw_high * 100 >= 80 * n {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hop_correctness() -> Outcome {
    let mut sc = Scenario::new("arm-raise").with_placement("p5-upper").with_seed(17);
    sc.session.duration_s = Some(10.0);
    let k = initial_channel(&sc);
    let centre = ChannelPlan::center_mhz(k);
    let jam_from_ms = 5_000;
    sc.interference.interferers.push(
        Interferer::new(InterfererKind::Narrowband {
            center_mhz: centre,
            width_mhz: 1.0,
            duty: 1.0,
            mean_burst_ms: 1.0,
        })
        .active_from(jam_from_ms),
    );
    let (trace, _) = simulate_radio(&sc).map_err(|e| e.to_string())?;
    let hops: Vec<_> = trace.hops().collect();
    let Some(&(first_hop, from, to)) = hops.first() else {
        return Err(format!("no hop after jamming channel {k}"));
    };
    if from != k || first_hop < jam_from_ms * 1000 {
        return Err(format!("first hop {from}->{to} at {first_hop} µs does not answer the jam on {k}"));
    }
    let band = Band::centered(centre, 1.0);
    let leaked = trace
        .records
        .iter()
        .filter(|r| r.time_us >= first_hop && r.kind == "cw" && r.outcome.is_delivered())
        .filter(|r| r.channel.band().overlaps(&band))
        .count();
    if leaked > 0 {
        return Err(format!("{leaked} deliveries on the jammed channel after the hop"));
    }
    let bound = TimingProfile::default().resync_bound_us();
    let mut worst = 0;
    for (at, lat) in resync_latencies(&trace) {
        match lat {
            Some(l) if l <= bound => worst = worst.max(l),
            Some(l) => return Err(format!("hop at {at} µs: slaves rejoined after {l} µs > {bound} µs")),
            None => return Err(format!("hop at {at} µs: not every slave rejoined")),
        }
    }
    check_channel_agreement(&trace, &TimingProfile::default())?;
    check_tdma(&trace)?;
    Ok(format!(
        "jam on {k}: {} hop(s), first {from}->{to}, no post-hop deliveries on {k}, worst rejoin {worst} µs <= {bound} µs",
        hops.len()
    ))
}

fn fingerprint(sim: &Simulation) -> Result<(String, String, String, String), String> {
    Ok((
        write_recording(&sim.recording).map_err(|e| e.to_string())?,
        write_recording(&sim.ground_truth).map_err(|e| e.to_string())?,
        session_trace_csv(&sim.trace.records),
        format!("{:?}", sim.metrics),
    ))
}

fn determinism_and_conservation(crowded_runs: &[(RadioRun, RadioRun)]) -> Outcome {
    let mut scenarios = vec![
        Scenario::new("artificial-joint").with_seed(1),
        Scenario::new("elbow-flexion").with_seed(2),
        Scenario::new("half-jacks").with_seed(3),
        crowded(4, ProtocolKind::Cw),
        crowded(4, ProtocolKind::BleBaseline),
    ];
    let mut p12 = Scenario::new("half-jacks").with_seed(5);
    p12.motion.params.sensors = Some(12);
    scenarios.push(p12);
    let mut traces = 0;
    for sc in &scenarios {
        let a = simulate(sc).map_err(|e| e.to_string())?;
        let b = simulate(sc).map_err(|e| e.to_string())?;
        if fingerprint(&a)? != fingerprint(&b)? {
            return Err(format!("{} seed {} differs between reruns", sc.motion.preset, sc.session.seed));
        }
        check_conservation(&a.trace)?;
        traces += 1;
    }
    for ((cw, _), (ble, _)) in crowded_runs {
        check_conservation(cw)?;
        check_conservation(ble)?;
        traces += 2;
    }
    Ok(format!(
        "{} scenarios rerun byte-identically, conservation holds on {traces} traces",
        scenarios.len()
    ))
}

fn csv_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut frames = Vec::with_capacity(100_000);
    for i in 0..100_000u64 {
        let q = random_quaternion(&mut rng);
        let sensor = (i % 12) as u16 + 1;
        let f = RecordingFrame::new(i * 1667, sensor, i / 12, q, (i % 4) as u8).map_err(|e| e.to_string())?;
        frames.push(f);
    }
    let text = write_recording(&frames).map_err(|e| e.to_string())?;
    let back = read_recording(&text).map_err(|e| e.to_string())?;
    let exact = back.len() == frames.len()
        && back.iter().zip(&frames).all(|(a, b)| {
            a.timestamp_us == b.timestamp_us
                && a.sensor_id == b.sensor_id
                && a.seq == b.seq
                && a.status == b.status
                && a.q.components().map(f64::to_bits) == b.q.components().map(f64::to_bits)
        });
    let detail = format!("{} frames, {} bytes", frames.len(), text.len());
    if exact {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let sweep = crowded_sweep(100);
    let crowded_runs = sweep.as_deref().unwrap_or(&[]);
    let results: Vec<(&str, Outcome)> = vec![
        ("quaternion oracle equivalence", quaternion_oracle()),
        ("zero-noise pipeline exactness", zero_noise_exactness()),
        ("noisy static accuracy", noisy_static_accuracy()),
        ("dynamic elbow flexion", dynamic_elbow()),
        ("throughput calibration", throughput()),
        (
            "interference ordering",
            sweep.as_ref().map_err(Clone::clone).and_then(|r| interference_ordering(r)),
        ),
        ("hop correctness", hop_correctness()),
        ("determinism and conservation", determinism_and_conservation(crowded_runs)),
        ("csv round trip", csv_round_trip()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(d) => println!("PASS {}. {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {}. {name}: {d}", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed in {:.1?}", results.len() - failed, results.len(), t0.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
