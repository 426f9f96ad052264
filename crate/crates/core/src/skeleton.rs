//! The 20-bone avatar model, sensor placements, I2S calibration and
//! per-frame bone animation.
//!
//! Rest orientations are expressed in the left-handed avatar frame
//! (x right, y up, z forward). With every joint at rest the avatar stands
//! upright. In [`CalibrationPose::Neutral`] all bones share the identity
//! orientation except the feet and toes, which point forward (+90° about x).
//! [`CalibrationPose::TPose`] additionally raises each arm chain (arm,
//! forearm, hand) sideways by 90° about the forward axis: -90° on the left
//! and +90° on the right. Arm and forearm therefore share a rest orientation
//! in both poses, so elbow angles read zero at calibration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quatmath::{
    enu_to_left_handed, relative_to_calibration, shortest_angle_deg, AngleDeg, UnitQuaternion,
    Vector3,
};

pub type SensorId = u16;

macro_rules! bones {
    ($( $variant:ident => $name:literal, $parent:expr; )*) => {
        /// One bone of the avatar rig.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum BoneId {
            $($variant,)*
        }

        impl BoneId {
            pub const ALL: [BoneId; 20] = [$(BoneId::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(BoneId::$variant => $name,)*
                }
            }

            /// Parent in the hierarchy; `None` only for the pelvis.
            pub fn parent(self) -> Option<BoneId> {
                match self {
                    $(BoneId::$variant => $parent,)*
                }
            }
        }
    };
}

bones! {
    Pelvis => "pelvis", None;
    Spine => "spine", Some(BoneId::Pelvis);
    Chest => "chest", Some(BoneId::Spine);
    UpperChest => "upper-chest", Some(BoneId::Chest);
    LeftShoulder => "left-shoulder", Some(BoneId::UpperChest);
    RightShoulder => "right-shoulder", Some(BoneId::UpperChest);
    LeftArm => "left-arm", Some(BoneId::LeftShoulder);
    RightArm => "right-arm", Some(BoneId::RightShoulder);
    LeftForearm => "left-forearm", Some(BoneId::LeftArm);
    RightForearm => "right-forearm", Some(BoneId::RightArm);
    LeftHand => "left-hand", Some(BoneId::LeftForearm);
    RightHand => "right-hand", Some(BoneId::RightForearm);
    LeftThigh => "left-thigh", Some(BoneId::Pelvis);
    RightThigh => "right-thigh", Some(BoneId::Pelvis);
    LeftCalf => "left-calf", Some(BoneId::LeftThigh);
    RightCalf => "right-calf", Some(BoneId::RightThigh);
    LeftFoot => "left-foot", Some(BoneId::LeftCalf);
    RightFoot => "right-foot", Some(BoneId::RightCalf);
    LeftToes => "left-toes", Some(BoneId::LeftFoot);
    RightToes => "right-toes", Some(BoneId::RightFoot);
}

impl BoneId {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Bones from the root down to `self`, inclusive.
    pub fn chain(self) -> Vec<BoneId> {
        let mut chain = vec![self];
        let mut cur = self;
        while let Some(p) = cur.parent() {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }
}

impl fmt::Display for BoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoneId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = normalize_label(s);
        BoneId::ALL
            .into_iter()
            .find(|b| b.name() == key || (key == "back" && *b == BoneId::Spine))
            .ok_or_else(|| Error::unknown("bone", s))
    }
}

/// Lowercases and folds spaces/underscores to hyphens.
pub(crate) fn normalize_label(s: &str) -> String {
    s.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '_' { '-' } else { c })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationPose {
    #[default]
    Neutral,
    TPose,
}

impl FromStr for CalibrationPose {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_label(s).as_str() {
            "neutral" => Ok(CalibrationPose::Neutral),
            "t-pose" | "tpose" => Ok(CalibrationPose::TPose),
            _ => Err(Error::unknown("calibration pose", s)),
        }
    }
}

/// Bone hierarchy plus rest orientations and segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    neutral: [UnitQuaternion; 20],
    t_pose: [UnitQuaternion; 20],
    lengths: [f64; 20],
}

impl Default for Skeleton {
    fn default() -> Self {
        Skeleton::standard()
    }
}

impl Skeleton {
    pub fn standard() -> Self {
        let forward = UnitQuaternion::from_axis_angle(Vector3::X, AngleDeg(90.0)).unwrap();
        let raise_left = UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(-90.0)).unwrap();
        let raise_right = UnitQuaternion::from_axis_angle(Vector3::Z, AngleDeg(90.0)).unwrap();

        let mut neutral = [UnitQuaternion::IDENTITY; 20];
        for b in [
            BoneId::LeftFoot,
            BoneId::RightFoot,
            BoneId::LeftToes,
            BoneId::RightToes,
        ] {
            neutral[b.index()] = forward;
        }
        let mut t_pose = neutral;
        for b in [BoneId::LeftArm, BoneId::LeftForearm, BoneId::LeftHand] {
            t_pose[b.index()] = raise_left;
        }
        for b in [BoneId::RightArm, BoneId::RightForearm, BoneId::RightHand] {
            t_pose[b.index()] = raise_right;
        }
        Skeleton {
            neutral,
            t_pose,
            lengths: [1.0; 20],
        }
    }

    /// Rest orientation `q_bone` of `bone` in the avatar frame.
    pub fn rest(&self, pose: CalibrationPose, bone: BoneId) -> UnitQuaternion {
        match pose {
            CalibrationPose::Neutral => self.neutral[bone.index()],
            CalibrationPose::TPose => self.t_pose[bone.index()],
        }
    }

    pub fn parent(&self, bone: BoneId) -> Option<BoneId> {
        bone.parent()
    }

    pub fn segment_length(&self, bone: BoneId) -> f64 {
        self.lengths[bone.index()]
    }

    pub fn with_segment_length(mut self, bone: BoneId, meters: f64) -> Result<Self> {
        if !(meters.is_finite() && meters > 0.0) {
            return Err(Error::invalid(format!(
                "segment length for {bone} must be positive, got {meters}"
            )));
        }
        self.lengths[bone.index()] = meters;
        Ok(self)
    }
}

/// Fixed sensor-id to bone bindings shared by all placement presets, so a
/// sensor id means the same body part in every recording.
pub const SENSOR_BONES: [(SensorId, BoneId); 12] = [
    (1, BoneId::Spine),
    (2, BoneId::RightArm),
    (3, BoneId::RightForearm),
    (4, BoneId::LeftArm),
    (5, BoneId::LeftForearm),
    (6, BoneId::Pelvis),
    (7, BoneId::RightThigh),
    (8, BoneId::RightCalf),
    (9, BoneId::LeftThigh),
    (10, BoneId::LeftCalf),
    (11, BoneId::RightFoot),
    (12, BoneId::LeftFoot),
];

pub fn bone_for_sensor(id: SensorId) -> Option<BoneId> {
    SENSOR_BONES.iter().find(|(s, _)| *s == id).map(|(_, b)| *b)
}

/// Which sensor sits on which bone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorPlacement {
    name: String,
    bindings: BTreeMap<SensorId, BoneId>,
}

impl SensorPlacement {
    pub const PRESETS: [&'static str; 4] = ["elbow-pair", "p5-upper", "p10", "p12"];

    pub fn preset(name: &str) -> Result<Self> {
        let ids: &[SensorId] = match normalize_label(name).as_str() {
            "elbow-pair" => &[2, 3],
            "p5-upper" => &[1, 2, 3, 4, 5],
            "p10" => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
            "p12" => &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12],
            _ => return Err(Error::unknown("placement preset", name)),
        };
        let bindings = ids
            .iter()
            .map(|&id| (id, bone_for_sensor(id).expect("preset ids are bound")))
            .collect();
        Ok(SensorPlacement {
            name: normalize_label(name),
            bindings,
        })
    }

    /// Custom placement; rejects two sensors on one bone.
    pub fn custom(name: impl Into<String>, bindings: BTreeMap<SensorId, BoneId>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (&s, &b) in &bindings {
            if let Some(other) = seen.insert(b, s) {
                return Err(Error::invalid(format!(
                    "sensors {other} and {s} are both bound to {b}"
                )));
            }
        }
        Ok(SensorPlacement {
            name: name.into(),
            bindings,
        })
    }

    /// Placement implied by the sensor ids present, using [`SENSOR_BONES`].
    pub fn from_sensor_ids(ids: impl IntoIterator<Item = SensorId>) -> Result<Self> {
        let mut bindings = BTreeMap::new();
        for id in ids {
            let bone = bone_for_sensor(id).ok_or_else(|| Error::unknown("sensor id", id.to_string()))?;
            bindings.insert(id, bone);
        }
        let name = SensorPlacement::PRESETS
            .iter()
            .find(|p| {
                SensorPlacement::preset(p)
                    .map(|pl| pl.bindings == bindings)
                    .unwrap_or(false)
            })
            .map(|p| p.to_string())
            .unwrap_or_else(|| "custom".to_string());
        SensorPlacement::custom(name, bindings)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn bone(&self, sensor: SensorId) -> Option<BoneId> {
        self.bindings.get(&sensor).copied()
    }

    pub fn sensor_on(&self, bone: BoneId) -> Option<SensorId> {
        self.bindings
            .iter()
            .find(|(_, b)| **b == bone)
            .map(|(s, _)| *s)
    }

    pub fn sensors(&self) -> impl Iterator<Item = SensorId> + '_ {
        self.bindings.keys().copied()
    }

    pub fn bindings(&self) -> &BTreeMap<SensorId, BoneId> {
        &self.bindings
    }
}

/// Per-sensor orientations captured while the subject holds a known pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub pose: CalibrationPose,
    pub timestamp_us: u64,
    pub q_calib: BTreeMap<SensorId, UnitQuaternion>,
    pub placement: SensorPlacement,
}

/// Bone orientations `r` in the avatar frame at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BonePoseFrame {
    pub timestamp_us: u64,
    pub bones: BTreeMap<BoneId, UnitQuaternion>,
}

/// A pair of bones whose relative orientation is reported as a joint angle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSpec {
    pub label: String,
    pub parent_side: BoneId,
    pub child_side: BoneId,
}

impl JointSpec {
    pub const LABELS: [&'static str; 11] = [
        "lumbar",
        "left-shoulder",
        "right-shoulder",
        "left-elbow",
        "right-elbow",
        "left-hip",
        "right-hip",
        "left-knee",
        "right-knee",
        "left-ankle",
        "right-ankle",
    ];

    pub fn new(label: impl Into<String>, parent_side: BoneId, child_side: BoneId) -> Self {
        JointSpec {
            label: label.into(),
            parent_side,
            child_side,
        }
    }

    /// Looks up a named joint; accepts "left elbow", "left_elbow" or "left-elbow".
    pub fn by_label(label: &str) -> Result<Self> {
        use BoneId::*;
        let key = normalize_label(label);
        let (a, b) = match key.as_str() {
            "lumbar" => (Pelvis, Spine),
            "left-shoulder" => (Spine, LeftArm),
            "right-shoulder" => (Spine, RightArm),
            "left-elbow" => (LeftArm, LeftForearm),
            "right-elbow" => (RightArm, RightForearm),
            "left-hip" => (Pelvis, LeftThigh),
            "right-hip" => (Pelvis, RightThigh),
            "left-knee" => (LeftThigh, LeftCalf),
            "right-knee" => (RightThigh, RightCalf),
            "left-ankle" => (LeftCalf, LeftFoot),
            "right-ankle" => (RightCalf, RightFoot),
            _ => return Err(Error::unknown("joint", label)),
        };
        Ok(JointSpec::new(key, a, b))
    }

    /// Joints whose two bones both carry a sensor in `placement`.
    pub fn available(placement: &SensorPlacement) -> Vec<JointSpec> {
        JointSpec::LABELS
            .iter()
            .map(|l| JointSpec::by_label(l).unwrap())
            .filter(|j| {
                placement.sensor_on(j.parent_side).is_some()
                    && placement.sensor_on(j.child_side).is_some()
            })
            .collect()
    }
}

/// Stores the instantaneous orientation of every placed sensor as its
/// calibration reference. No transformation is applied.
pub fn calibrate(
    snapshot: &BTreeMap<SensorId, UnitQuaternion>,
    pose: CalibrationPose,
    placement: &SensorPlacement,
    timestamp_us: u64,
) -> Result<CalibrationRecord> {
    let missing: Vec<SensorId> = placement
        .sensors()
        .filter(|s| !snapshot.contains_key(s))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteCalibration { missing });
    }
    let q_calib = placement
        .sensors()
        .map(|s| (s, snapshot[&s]))
        .collect();
    Ok(CalibrationRecord {
        pose,
        timestamp_us,
        q_calib,
        placement: placement.clone(),
    })
}

/// Turns sensor orientations into bone orientations: relative to
/// calibration, mapped into the avatar frame, then applied to the bone's
/// rest orientation (`r = q'' * q_bone`).
pub fn animate_frame(
    snapshot: &BTreeMap<SensorId, UnitQuaternion>,
    timestamp_us: u64,
    calib: &CalibrationRecord,
    skel: &Skeleton,
) -> Result<BonePoseFrame> {
    let mut bones = BTreeMap::new();
    for (&sensor, &q) in snapshot {
        let (Some(&q_calib), Some(bone)) = (calib.q_calib.get(&sensor), calib.placement.bone(sensor))
        else {
            return Err(Error::Uncalibrated(sensor));
        };
        let q_rel = relative_to_calibration(q, q_calib)?;
        let q_avatar = enu_to_left_handed(q_rel);
        let r = q_avatar.hamilton(skel.rest(calib.pose, bone))?;
        bones.insert(bone, r);
    }
    Ok(BonePoseFrame {
        timestamp_us,
        bones,
    })
}

/// Shortest angle between the two bones of `joint`.
pub fn joint_angle(frame: &BonePoseFrame, joint: &JointSpec) -> Result<AngleDeg> {
    let get = |b: BoneId| {
        frame
            .bones
            .get(&b)
            .copied()
            .ok_or_else(|| Error::MissingBone(b.name().to_string()))
    };
    Ok(shortest_angle_deg(get(joint.parent_side)?, get(joint.child_side)?))
}
