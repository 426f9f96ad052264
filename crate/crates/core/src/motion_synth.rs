//! Ground-truth motion and synthetic IMU readings.
//!
//! Bone world orientations live in the sensors' east-north-up frame. The
//! world rest orientation of a bone is its avatar rest orientation pulled
//! back through the ENU to avatar mapping, so a noise-free reading run
//! through the calibration chain lands exactly on the avatar bone.
//!
//! Each joint is a hinge between a bone and its parent. The hinge axis is
//! given in the child's rest frame and the child's world orientation is
//! `parent_world * rest_offset * hinge(θ(t))`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quatmath::{left_handed_to_enu, shortest_angle_deg, AngleDeg, UnitQuaternion, Vector3};
use crate::skeleton::{BoneId, CalibrationPose, SensorId, SensorPlacement, Skeleton};

/// Step used for finite-difference angular speed.
const SPEED_STEP_S: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AngleFunction {
    Constant {
        deg: f64,
    },
    /// `center + amplitude · sin(2πt/period + phase)`, phase in radians.
    Sinusoid {
        center: f64,
        amplitude: f64,
        period_s: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Linear interpolation through `(t_s, deg)` knots; held flat outside.
    Piecewise {
        points: Vec<(f64, f64)>,
    },
}

impl AngleFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            AngleFunction::Constant { deg } => *deg,
            AngleFunction::Sinusoid {
                center,
                amplitude,
                period_s,
                phase,
            } => center + amplitude * (2.0 * PI * t / period_s + phase).sin(),
            AngleFunction::Piecewise { points } => {
                let Some(first) = points.first() else {
                    return 0.0;
                };
                if t <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let ((t0, a0), (t1, a1)) = (w[0], w[1]);
                    if t <= t1 {
                        if t1 == t0 {
                            return a1;
                        }
                        return a0 + (a1 - a0) * (t - t0) / (t1 - t0);
                    }
                }
                points.last().unwrap().1
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AngleFunction::Constant { deg } if !deg.is_finite() => {
                Err(Error::invalid("constant angle is not finite"))
            }
            AngleFunction::Sinusoid {
                center,
                amplitude,
                period_s,
                phase,
            } => {
                if !(center.is_finite() && amplitude.is_finite() && phase.is_finite()) {
                    return Err(Error::invalid("sinusoid parameters must be finite"));
                }
                if !(period_s.is_finite() && *period_s > 0.0) {
                    return Err(Error::invalid("sinusoid period must be positive"));
                }
                Ok(())
            }
            AngleFunction::Piecewise { points } => {
                if points.is_empty() {
                    return Err(Error::invalid("piecewise trajectory has no points"));
                }
                if points.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
                    return Err(Error::invalid("piecewise points must be finite"));
                }
                if points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(Error::invalid("piecewise knots must be time-ordered"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Motion of one hinge: the bone it moves, its axis in the bone's rest
/// frame, and its angle over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointMotion {
    pub bone: BoneId,
    pub axis: Vector3,
    pub angle: AngleFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub duration_s: f64,
    #[serde(default)]
    pub pose: CalibrationPose,
    pub joints: Vec<JointMotion>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::invalid("trajectory duration must be positive"));
        }
        let mut seen = Vec::new();
        for j in &self.joints {
            if j.bone == BoneId::Pelvis {
                return Err(Error::invalid("the pelvis is the fixed root and has no hinge"));
            }
            if seen.contains(&j.bone) {
                return Err(Error::invalid(format!("bone {} has two hinges", j.bone)));
            }
            seen.push(j.bone);
            j.axis.normalized()?;
            j.angle.validate()?;
        }
        Ok(())
    }

    /// Programmed hinge angle of `bone` at `t` (zero for bones without a hinge).
    pub fn hinge_angle(&self, bone: BoneId, t: f64) -> f64 {
        self.joints
            .iter()
            .find(|j| j.bone == bone)
            .map(|j| j.angle.eval(t))
            .unwrap_or(0.0)
    }
}

/// World (ENU) rest orientation of a bone for the given pose.
pub fn world_rest(skel: &Skeleton, pose: CalibrationPose, bone: BoneId) -> UnitQuaternion {
    left_handed_to_enu(skel.rest(pose, bone))
}

fn forward_kinematics(
    spec: &TrajectorySpec,
    skel: &Skeleton,
    angle_at: impl Fn(&JointMotion) -> f64,
) -> Result<BTreeMap<BoneId, UnitQuaternion>> {
    let mut world: BTreeMap<BoneId, UnitQuaternion> = BTreeMap::new();
    // ALL lists every parent before its children.
    for bone in BoneId::ALL {
        let rest = world_rest(skel, spec.pose, bone);
        let g = match bone.parent() {
            None => rest,
            Some(parent) => {
                let parent_rest = world_rest(skel, spec.pose, parent);
                let offset = parent_rest.inverse()?.hamilton(rest)?;
                let mut g = world[&parent].hamilton(offset)?;
                if let Some(j) = spec.joints.iter().find(|j| j.bone == bone) {
                    let hinge = UnitQuaternion::from_axis_angle(j.axis, AngleDeg(angle_at(j)))?;
                    g = g.hamilton(hinge)?;
                }
                g
            }
        };
        world.insert(bone, g);
    }
    Ok(world)
}

/// World orientation of every bone at time `t`.
pub fn ground_truth(
    spec: &TrajectorySpec,
    skel: &Skeleton,
    t: f64,
) -> Result<BTreeMap<BoneId, UnitQuaternion>> {
    if !(0.0..=spec.duration_s).contains(&t) {
        return Err(Error::invalid(format!(
            "time {t} s outside trajectory [0, {}]",
            spec.duration_s
        )));
    }
    forward_kinematics(spec, skel, |j| j.angle.eval(t))
}

/// World orientation of every bone with all hinges at zero (the calibration pose).
pub fn rest_pose(spec: &TrajectorySpec, skel: &Skeleton) -> Result<BTreeMap<BoneId, UnitQuaternion>> {
    forward_kinematics(spec, skel, |_| 0.0)
}

/// Angular speed of `bone` in deg/s, by finite difference.
pub fn angular_speed(spec: &TrajectorySpec, skel: &Skeleton, bone: BoneId, t: f64) -> Result<f64> {
    let (t0, t1) = if t + SPEED_STEP_S <= spec.duration_s {
        (t, t + SPEED_STEP_S)
    } else {
        ((t - SPEED_STEP_S).max(0.0), t)
    };
    if t1 <= t0 {
        return Ok(0.0);
    }
    let a = ground_truth(spec, skel, t0)?[&bone];
    let b = ground_truth(spec, skel, t1)?[&bone];
    Ok(shortest_angle_deg(a, b).0 / (t1 - t0))
}

/// BNO080-style orientation error envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub static_sigma_deg: f64,
    pub dynamic_sigma_deg: f64,
    pub static_max_deg: f64,
    pub dynamic_max_deg: f64,
    pub drift_deg_per_min: f64,
    /// Angular speed at which the error reaches its dynamic level.
    pub omega_ref_deg_s: f64,
    /// When false every sensor keeps its own random heading.
    pub heading_reset: bool,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            static_sigma_deg: 0.3,
            dynamic_sigma_deg: 1.2,
            static_max_deg: 2.0,
            dynamic_max_deg: 3.5,
            drift_deg_per_min: 0.0,
            omega_ref_deg_s: 90.0,
            heading_reset: true,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            static_sigma_deg: 0.0,
            dynamic_sigma_deg: 0.0,
            drift_deg_per_min: 0.0,
            ..NoiseModel::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("static_sigma_deg", self.static_sigma_deg),
            ("dynamic_sigma_deg", self.dynamic_sigma_deg),
            ("static_max_deg", self.static_max_deg),
            ("dynamic_max_deg", self.dynamic_max_deg),
            ("drift_deg_per_min", self.drift_deg_per_min),
            ("omega_ref_deg_s", self.omega_ref_deg_s),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.static_sigma_deg > self.static_max_deg {
            return Err(Error::invalid("static_sigma_deg exceeds static_max_deg"));
        }
        if self.dynamic_sigma_deg > self.dynamic_max_deg {
            return Err(Error::invalid("dynamic_sigma_deg exceeds dynamic_max_deg"));
        }
        if self.omega_ref_deg_s == 0.0 {
            return Err(Error::invalid("omega_ref_deg_s must be positive"));
        }
        Ok(())
    }

    /// Effective `(sigma, max)` at angular speed `omega` deg/s.
    pub fn effective(&self, omega: f64) -> (f64, f64) {
        let k = (omega / self.omega_ref_deg_s).clamp(0.0, 1.0);
        (
            self.static_sigma_deg + (self.dynamic_sigma_deg - self.static_sigma_deg) * k,
            self.static_max_deg + (self.dynamic_max_deg - self.static_max_deg) * k,
        )
    }
}

/// Draws `|x|` for `x ~ N(0, sigma)` conditioned on `|x| <= max`.
pub fn truncated_half_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, max: f64) -> f64 {
    if sigma <= 0.0 || max <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= max {
            return x.abs();
        }
    }
}

/// Uniformly distributed unit vector.
pub fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Vector3 {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Ok(n) = v.normalized() {
            return n;
        }
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let c: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(q) = UnitQuaternion::normalize(c[0], c[1], c[2], c[3]) {
            return q;
        }
    }
}

/// Fixed per-sensor rotation between the bone frame and the sensor case.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MountingOffset {
    offsets: BTreeMap<SensorId, UnitQuaternion>,
}

impl MountingOffset {
    pub fn identity() -> Self {
        MountingOffset::default()
    }

    pub fn random(placement: &SensorPlacement, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x6d6f756e74);
        MountingOffset {
            offsets: placement.sensors().map(|s| (s, random_rotation(&mut rng))).collect(),
        }
    }

    pub fn with(mut self, sensor: SensorId, q: UnitQuaternion) -> Self {
        self.offsets.insert(sensor, q);
        self
    }

    pub fn get(&self, sensor: SensorId) -> UnitQuaternion {
        self.offsets.get(&sensor).copied().unwrap_or_default()
    }
}

/// One sensor sample as emitted by the synthetic IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub q: UnitQuaternion,
    /// Accuracy status, 0 (unreliable) to 3 (high).
    pub status: u8,
}

/// Orientation reported by `sensor` at `t`: ground truth composed with
/// the mounting offset, heading and drift, then a random error rotation.
#[allow(clippy::too_many_arguments)]
pub fn sensor_reading<R: Rng + ?Sized>(
    sensor: SensorId,
    t: f64,
    spec: &TrajectorySpec,
    skel: &Skeleton,
    placement: &SensorPlacement,
    offsets: &MountingOffset,
    heading: UnitQuaternion,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Reading> {
    let bone = placement
        .bone(sensor)
        .ok_or_else(|| Error::invalid(format!("sensor {sensor} is not placed on a bone")))?;
    let truth = heading
        .hamilton(ground_truth(spec, skel, t)?[&bone])?
        .hamilton(offsets.get(sensor))?;
    let omega = angular_speed(spec, skel, bone, t)?;
    perturb(truth, t, omega, noise, rng)
}

fn perturb<R: Rng + ?Sized>(
    truth: UnitQuaternion,
    t: f64,
    omega: f64,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Reading> {
    let (sigma, max) = noise.effective(omega);
    let axis = random_axis(rng);
    let err = truncated_half_normal(rng, sigma, max);
    let drift = UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(noise.drift_deg_per_min * t / 60.0))?;
    let q = UnitQuaternion::from_axis_angle(axis, AngleDeg(err))?
        .hamilton(drift)?
        .hamilton(truth)?;
    let status = if omega < noise.omega_ref_deg_s / 2.0 { 3 } else { 2 };
    Ok(Reading { q, status })
}

/// A set of synthetic IMUs worn on one body, each with a private random
/// stream derived from the noise seed.
#[derive(Debug, Clone)]
pub struct SyntheticBody {
    pub spec: TrajectorySpec,
    pub skeleton: Skeleton,
    pub placement: SensorPlacement,
    pub offsets: MountingOffset,
    pub noise: NoiseModel,
    headings: BTreeMap<SensorId, UnitQuaternion>,
    streams: BTreeMap<SensorId, ChaCha8Rng>,
}

impl SyntheticBody {
    pub fn new(
        spec: TrajectorySpec,
        skeleton: Skeleton,
        placement: SensorPlacement,
        offsets: MountingOffset,
        noise: NoiseModel,
    ) -> Result<Self> {
        spec.validate()?;
        noise.validate()?;
        let mut heading_rng = ChaCha8Rng::seed_from_u64(noise.seed);
        heading_rng.set_stream(0x68656164);
        let headings = placement
            .sensors()
            .map(|s| {
                let yaw = if noise.heading_reset {
                    0.0
                } else {
                    heading_rng.random_range(-180.0..180.0)
                };
                (s, UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(yaw)).unwrap())
            })
            .collect();
        let streams = placement
            .sensors()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
                rng.set_stream(u64::from(s) + 1);
                (s, rng)
            })
            .collect();
        Ok(SyntheticBody {
            spec,
            skeleton,
            placement,
            offsets,
            noise,
            headings,
            streams,
        })
    }

    fn heading(&self, sensor: SensorId) -> UnitQuaternion {
        self.headings.get(&sensor).copied().unwrap_or_default()
    }

    /// Noise-free reading (heading and mounting offset applied).
    pub fn truth(&self, sensor: SensorId, t: f64) -> Result<UnitQuaternion> {
        let bone = self
            .placement
            .bone(sensor)
            .ok_or_else(|| Error::invalid(format!("sensor {sensor} is not placed on a bone")))?;
        let g = ground_truth(&self.spec, &self.skeleton, t)?[&bone];
        self.heading(sensor).hamilton(g)?.hamilton(self.offsets.get(sensor))
    }

    /// Noisy reading; advances the sensor's random stream.
    pub fn read(&mut self, sensor: SensorId, t: f64) -> Result<Reading> {
        let heading = self.heading(sensor);
        let rng = self
            .streams
            .get_mut(&sensor)
            .ok_or_else(|| Error::invalid(format!("sensor {sensor} is not placed on a bone")))?;
        sensor_reading(
            sensor,
            t,
            &self.spec,
            &self.skeleton,
            &self.placement,
            &self.offsets,
            heading,
            &self.noise,
            rng,
        )
    }

    /// Noise-free readings with every hinge at zero.
    pub fn rest_truth(&self) -> Result<BTreeMap<SensorId, UnitQuaternion>> {
        let rest = rest_pose(&self.spec, &self.skeleton)?;
        self.placement
            .bindings()
            .iter()
            .map(|(&s, &b)| {
                let q = self.heading(s).hamilton(rest[&b])?.hamilton(self.offsets.get(s))?;
                Ok((s, q))
            })
            .collect()
    }

    /// Readings taken while the wearer holds the calibration pose (static
    /// error level, drift not yet accumulated).
    pub fn calibration_snapshot(&mut self) -> Result<BTreeMap<SensorId, Reading>> {
        let truth = self.rest_truth()?;
        let noise = self.noise;
        let mut out = BTreeMap::new();
        for (s, q) in truth {
            let rng = self.streams.get_mut(&s).expect("stream per placed sensor");
            out.insert(s, perturb(q, 0.0, 0.0, &noise, rng)?);
        }
        Ok(out)
    }

    /// Ground-truth angle between the two bones of a joint.
    pub fn joint_truth(&self, a: BoneId, b: BoneId, t: f64) -> Result<AngleDeg> {
        let g = ground_truth(&self.spec, &self.skeleton, t)?;
        Ok(shortest_angle_deg(g[&a], g[&b]))
    }
}

/// Tunables for [`preset_scenario`]; `None` picks the preset default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetParams {
    /// Hinge angle for `artificial-joint`.
    pub angle_deg: Option<f64>,
    /// Session length (the dwell time for `artificial-joint`).
    pub duration_s: Option<f64>,
    /// Sensor count for `half-jacks` (10 or 12).
    pub sensors: Option<usize>,
    /// Movement period for the cyclic presets.
    pub period_s: Option<f64>,
    #[serde(default)]
    pub pose: Option<CalibrationPose>,
}

pub const PRESETS: [&str; 4] = ["artificial-joint", "elbow-flexion", "half-jacks", "arm-raise"];

fn one_bend(start: f64) -> Vec<(f64, f64)> {
    // Flex to ~90°, quick stop, finish the flexion, then extend back.
    vec![
        (start, 0.0),
        (start + 0.8, 88.0),
        (start + 1.2, 92.0),
        (start + 1.7, 140.0),
        (start + 3.0, 0.0),
    ]
}

/// Named experiment motions.
///
/// * `artificial-joint`: two segments (right arm and forearm) with the
///   elbow hinge held at `angle_deg` (default 90°) for `duration_s` (5 s).
/// * `elbow-flexion`: five upper-body sensors; the right elbow bends twice,
///   then the left elbow twice, each bend pausing near 90°. 16 s.
/// * `half-jacks`: shoulder abduction 0–160° and hip abduction 0–30° with a
///   1 s period for 10 s, on the `p10` or `p12` placement.
/// * `arm-raise`: alternate frontal raises of both straight arms (0–120°,
///   4 s period) for 30 s on the five upper-body sensors.
pub fn preset_scenario(name: &str, params: &PresetParams) -> Result<(TrajectorySpec, SensorPlacement)> {
    let pose = params.pose.unwrap_or_default();
    let lateral = Vector3::X;
    let (spec, placement) = match name {
        "artificial-joint" => {
            let angle = params.angle_deg.unwrap_or(90.0);
            let spec = TrajectorySpec {
                duration_s: params.duration_s.unwrap_or(5.0),
                pose,
                joints: vec![JointMotion {
                    bone: BoneId::RightForearm,
                    axis: lateral,
                    angle: AngleFunction::Constant { deg: angle },
                }],
            };
            (spec, SensorPlacement::preset("elbow-pair")?)
        }
        "elbow-flexion" => {
            let mut right = one_bend(1.0);
            right.extend(one_bend(4.5));
            let mut left = one_bend(8.0);
            left.extend(one_bend(11.5));
            let spec = TrajectorySpec {
                duration_s: params.duration_s.unwrap_or(16.0),
                pose,
                joints: vec![
                    JointMotion {
                        bone: BoneId::RightForearm,
                        axis: lateral,
                        angle: AngleFunction::Piecewise { points: right },
                    },
                    JointMotion {
                        bone: BoneId::LeftForearm,
                        axis: lateral,
                        angle: AngleFunction::Piecewise { points: left },
                    },
                ],
            };
            (spec, SensorPlacement::preset("p5-upper")?)
        }
        "half-jacks" => {
            let placement = match params.sensors.unwrap_or(10) {
                10 => SensorPlacement::preset("p10")?,
                12 => SensorPlacement::preset("p12")?,
                n => {
                    return Err(Error::config(format!(
                        "half-jacks supports 10 or 12 sensors, got {n}"
                    )))
                }
            };
            let period = params.period_s.unwrap_or(1.0);
            let sweep = |center: f64| AngleFunction::Sinusoid {
                center,
                amplitude: center,
                period_s: period,
                phase: -PI / 2.0,
            };
            let forward = Vector3::Y;
            let spec = TrajectorySpec {
                duration_s: params.duration_s.unwrap_or(10.0),
                pose,
                joints: vec![
                    JointMotion { bone: BoneId::LeftArm, axis: forward, angle: sweep(80.0) },
                    JointMotion { bone: BoneId::RightArm, axis: forward.scale(-1.0), angle: sweep(80.0) },
                    JointMotion { bone: BoneId::LeftThigh, axis: forward, angle: sweep(15.0) },
                    JointMotion { bone: BoneId::RightThigh, axis: forward.scale(-1.0), angle: sweep(15.0) },
                ],
            };
            (spec, placement)
        }
        "arm-raise" => {
            let period = params.period_s.unwrap_or(4.0);
            let raise = |phase: f64| AngleFunction::Sinusoid {
                center: 60.0,
                amplitude: 60.0,
                period_s: period,
                phase,
            };
            let spec = TrajectorySpec {
                duration_s: params.duration_s.unwrap_or(30.0),
                pose,
                joints: vec![
                    JointMotion { bone: BoneId::LeftArm, axis: lateral, angle: raise(-PI / 2.0) },
                    JointMotion { bone: BoneId::RightArm, axis: lateral, angle: raise(PI / 2.0) },
                ],
            };
            (spec, SensorPlacement::preset("p5-upper")?)
        }
        _ => return Err(Error::unknown("motion preset", name)),
    };
    spec.validate()?;
    Ok((spec, placement))
}
