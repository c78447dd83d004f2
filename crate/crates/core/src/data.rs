//! Poses, motion sequences and scenes; the scene file format; the
//! preprocessing pipeline; and a procedural multi-person motion generator.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MrtError, Result};
use crate::numerics::{put_f32, put_u32, ByteReader, Tensor};
use crate::rng::stream_rng;

pub const DEFAULT_JOINTS: usize = 15;
pub const DEFAULT_FRAME_RATE: f64 = 15.0;

/// Joint order of the 15-joint skeleton. Index 0 (pelvis) is the root.
pub const JOINT_NAMES: [&str; DEFAULT_JOINTS] = [
    "pelvis",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
];

pub const ROOT_JOINT: usize = 0;

/// One person's absolute joint positions at one time step, `3J` values
/// ordered joint-major (`x0 y0 z0 x1 ...`), z up, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    coords: Vec<f64>,
}

impl Pose {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(3) {
            return Err(MrtError::invalid(format!(
                "pose needs 3J coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(MrtError::invalid("pose has non-finite coordinates"));
        }
        Ok(Pose { coords })
    }

    pub fn joints(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        [
            self.coords[3 * j],
            self.coords[3 * j + 1],
            self.coords[3 * j + 2],
        ]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Time-ordered poses of one person, stored as a `T × 3J` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    poses: Tensor,
    frame_rate: f64,
}

impl MotionSequence {
    pub fn new(poses: Tensor, frame_rate: f64) -> Result<Self> {
        if poses.shape().len() != 2 || !poses.cols().is_multiple_of(3) {
            return Err(MrtError::invalid(format!(
                "motion must be T × 3J, got {:?}",
                poses.shape()
            )));
        }
        if !poses.is_finite() {
            return Err(MrtError::invalid("motion has non-finite coordinates"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(MrtError::invalid(format!("bad frame rate {frame_rate}")));
        }
        Ok(MotionSequence { poses, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.poses.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.poses.cols() / 3
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn poses(&self) -> &Tensor {
        &self.poses
    }

    pub fn pose(&self, t: usize) -> Pose {
        Pose {
            coords: self.poses.row(t).to_vec(),
        }
    }

    pub fn pose_slice(&self, t: usize) -> &[f64] {
        self.poses.row(t)
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(MrtError::invalid(format!(
                "window {start}..{} outside sequence of length {}",
                start + len,
                self.len()
            )));
        }
        let c = self.poses.cols();
        let data = self.poses.data()[start * c..(start + len) * c].to_vec();
        Ok(MotionSequence {
            poses: Tensor::new([len, c], data)?,
            frame_rate: self.frame_rate,
        })
    }

    /// `(T-1) × 3J` differences `x_{t+1} - x_t`.
    pub fn offsets(&self) -> Result<Tensor> {
        let (t, c) = (self.len(), self.poses.cols());
        if t < 2 {
            return Err(MrtError::invalid("offsets need at least two poses"));
        }
        let d = self.poses.data();
        let data = (0..(t - 1) * c).map(|i| d[i + c] - d[i]).collect();
        Tensor::new([t - 1, c], data)
    }

    /// Appends rows of a `T' × 3J` tensor.
    pub fn extended(&self, more: &Tensor) -> Result<Self> {
        if more.cols() != self.poses.cols() {
            return Err(MrtError::dim(
                "extend motion",
                self.poses.shape(),
                more.shape(),
            ));
        }
        let mut data = self.poses.data().to_vec();
        data.extend_from_slice(more.data());
        MotionSequence::new(
            Tensor::new([self.len() + more.rows(), self.poses.cols()], data)?,
            self.frame_rate,
        )
    }
}

/// `N` persons' motions on a shared clock.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    persons: Vec<MotionSequence>,
    pub name: String,
}

impl Scene {
    pub fn new(persons: Vec<MotionSequence>, name: impl Into<String>) -> Result<Self> {
        let scene = Scene {
            persons,
            name: name.into(),
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Re-checks every scene invariant.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .persons
            .first()
            .ok_or_else(|| MrtError::invalid("scene has no persons"))?;
        for (n, p) in self.persons.iter().enumerate() {
            if p.len() != first.len() {
                return Err(MrtError::invalid(format!(
                    "person {n} has {} steps, person 0 has {}",
                    p.len(),
                    first.len()
                )));
            }
            if p.joints() != first.joints() {
                return Err(MrtError::invalid(format!(
                    "person {n} has {} joints, person 0 has {}",
                    p.joints(),
                    first.joints()
                )));
            }
            if p.frame_rate() != first.frame_rate() {
                return Err(MrtError::invalid(format!(
                    "person {n} has a different frame rate"
                )));
            }
            if !p.poses().is_finite() {
                return Err(MrtError::invalid(format!(
                    "person {n} has non-finite values"
                )));
            }
        }
        Ok(())
    }

    /// Builds a scene from per-person `T × 3J` tensors.
    pub fn from_tensors(
        poses: Vec<Tensor>,
        frame_rate: f64,
        name: impl Into<String>,
    ) -> Result<Self> {
        let persons = poses
            .into_iter()
            .map(|p| MotionSequence::new(p, frame_rate))
            .collect::<Result<Vec<_>>>()?;
        Scene::new(persons, name)
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn len(&self) -> usize {
        self.persons[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joints(&self) -> usize {
        self.persons[0].joints()
    }

    pub fn frame_rate(&self) -> f64 {
        self.persons[0].frame_rate()
    }

    pub fn persons(&self) -> &[MotionSequence] {
        &self.persons
    }

    pub fn person(&self, n: usize) -> &MotionSequence {
        &self.persons[n]
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Scene> {
        let persons = self
            .persons
            .iter()
            .map(|p| p.window(start, len))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            persons,
            name: self.name.clone(),
        })
    }

    /// `N × T × 3J` tensor of every pose.
    pub fn all_poses(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.persons.len() * self.persons[0].poses().len());
        for p in &self.persons {
            data.extend_from_slice(p.poses().data());
        }
        Tensor::from_parts(
            vec![self.num_persons(), self.len(), 3 * self.joints()],
            data,
        )
    }

    /// New scene with the persons reordered: output person `i` is input `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Scene> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.num_persons()).collect::<Vec<_>>() {
            return Err(MrtError::invalid(format!("{order:?} is not a permutation")));
        }
        Ok(Scene {
            persons: order.iter().map(|&i| self.persons[i].clone()).collect(),
            name: self.name.clone(),
        })
    }

    /// Adds `delta` to every joint of person `n`.
    pub fn translated_person(&self, n: usize, delta: [f64; 3]) -> Result<Scene> {
        let mut out = self.clone();
        let p = &mut out.persons[n].poses;
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v += delta[i % 3];
        }
        out.validate()?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Scene files

const SCENE_MAGIC: &[u8; 4] = b"MRTS";
pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Header fields of a scene file.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneHeader {
    pub version: u32,
    pub joints: u32,
    pub frame_rate: f32,
    pub persons: u32,
    pub steps: u32,
    pub name: String,
}

/// Serializes a scene. Layout, little-endian:
/// `"MRTS" | version u32 | J u32 | frame_rate f32 | N u32 | T u32 |
/// name_len u32 | name | T × N × J × 3 f32`.
pub fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    let (n, t, c) = (scene.num_persons(), scene.len(), 3 * scene.joints());
    let mut out = Vec::with_capacity(32 + scene.name.len() + 4 * n * t * c);
    out.extend_from_slice(SCENE_MAGIC);
    put_u32(&mut out, SCENE_FORMAT_VERSION);
    put_u32(&mut out, scene.joints() as u32);
    put_f32(&mut out, scene.frame_rate() as f32);
    put_u32(&mut out, n as u32);
    put_u32(&mut out, t as u32);
    put_u32(&mut out, scene.name.len() as u32);
    out.extend_from_slice(scene.name.as_bytes());
    for step in 0..t {
        for p in scene.persons() {
            for &v in p.pose_slice(step) {
                put_f32(&mut out, v as f32);
            }
        }
    }
    out
}

pub fn scene_from_bytes(buf: &[u8]) -> Result<Scene> {
    let mut r = ByteReader::new(buf);
    if r.bytes(4, "magic")? != SCENE_MAGIC {
        return Err(MrtError::Parse {
            offset: 0,
            message: "not a scene file (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != SCENE_FORMAT_VERSION {
        return Err(r.error(format!("unsupported scene version {version}")));
    }
    let joints = r.u32("joint count")? as usize;
    let frame_rate = f64::from(r.f32("frame rate")?);
    let persons = r.u32("person count")? as usize;
    let steps = r.u32("step count")? as usize;
    if joints == 0 || persons == 0 || steps == 0 {
        return Err(r.error(format!(
            "header has zero dimension (J={joints}, N={persons}, T={steps})"
        )));
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(r.error(format!("bad frame rate {frame_rate}")));
    }
    let name_len = r.u32("name length")? as usize;
    let name = std::str::from_utf8(r.bytes(name_len, "name")?)
        .map_err(|_| r.error("scene name is not UTF-8"))?
        .to_string();
    let c = 3 * joints;
    let expected = steps * persons * c;
    if r.remaining() != expected * 4 {
        return Err(MrtError::SizeMismatch {
            expected,
            actual: r.remaining() / 4,
        });
    }
    let mut per_person = vec![Vec::with_capacity(steps * c); persons];
    for _ in 0..steps {
        for p in per_person.iter_mut() {
            for _ in 0..c {
                let at = r.offset();
                let v = r.f32("coordinate")?;
                if !v.is_finite() {
                    return Err(MrtError::Parse {
                        offset: at,
                        message: format!("non-finite coordinate {v}"),
                    });
                }
                p.push(f64::from(v));
            }
        }
    }
    let tensors = per_person
        .into_iter()
        .map(|d| Tensor::new([steps, c], d))
        .collect::<Result<Vec<_>>>()?;
    Scene::from_tensors(tensors, frame_rate, name)
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    fs::write(path, scene_to_bytes(scene))?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    scene_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Corpus directories

pub const MANIFEST_FILE: &str = "manifest.json";

/// Split listing for a directory of scene files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub joints: usize,
    pub frame_rate: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.as_ref().join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    fn paths(dir: &Path, names: &[String]) -> Vec<PathBuf> {
        names.iter().map(|n| dir.join(n)).collect()
    }

    pub fn load_split(&self, dir: impl AsRef<Path>, test: bool) -> Result<Vec<Scene>> {
        let names = if test { &self.test } else { &self.train };
        Self::paths(dir.as_ref(), names)
            .iter()
            .map(load_scene)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Preprocessing

pub const HEIGHT_RANGE: (f64, f64) = (1.5, 2.0);

/// Vertical extent of a pose (max z minus min z).
pub fn pose_height(pose: &[f64]) -> f64 {
    let zs = pose.chunks(3).map(|j| j[2]);
    let (lo, hi) = zs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
        (lo.min(z), hi.max(z))
    });
    hi - lo
}

/// Selects joints, rescales each person so its first-frame height lies in
/// [1.5 m, 2 m], and moves the whole group by a uniform random x-y offset
/// inside a square of `placement_area` m² centered on the origin.
///
/// Scaling is anchored at the floor point below the first-frame root, so
/// offsets scale exactly by the factor and feet stay on the ground. A person
/// whose height is already in range is left unscaled; others are scaled to
/// the nearest bound.
pub fn preprocess(
    scene: &Scene,
    joint_map: &[usize],
    rng_seed: u64,
    placement_area: f64,
) -> Result<Scene> {
    let src_joints = scene.joints();
    if joint_map.is_empty() {
        return Err(MrtError::config("joint map is empty"));
    }
    if let Some(&bad) = joint_map.iter().find(|&&j| j >= src_joints) {
        return Err(MrtError::config(format!(
            "joint index {bad} out of range for a {src_joints}-joint skeleton"
        )));
    }
    if !(placement_area.is_finite() && placement_area >= 0.0) {
        return Err(MrtError::config(format!(
            "bad placement area {placement_area}"
        )));
    }
    let side = placement_area.sqrt();
    let shift = if side > 0.0 {
        let mut rng = stream_rng(rng_seed, "placement");
        [
            rng.gen_range(-side / 2.0..=side / 2.0),
            rng.gen_range(-side / 2.0..=side / 2.0),
        ]
    } else {
        [0.0, 0.0]
    };

    let c = 3 * joint_map.len();
    let mut persons = Vec::with_capacity(scene.num_persons());
    for (n, p) in scene.persons().iter().enumerate() {
        let mut data = Vec::with_capacity(p.len() * c);
        for t in 0..p.len() {
            let pose = p.pose_slice(t);
            for &j in joint_map {
                data.extend_from_slice(&pose[3 * j..3 * j + 3]);
            }
        }
        let first = &data[..c];
        let height = pose_height(first);
        let target = height.clamp(HEIGHT_RANGE.0, HEIGHT_RANGE.1);
        if height <= 0.0 && target != height {
            return Err(MrtError::invalid(format!(
                "person {n} has zero height and cannot be scaled"
            )));
        }
        let s = if target == height {
            1.0
        } else {
            target / height
        };
        let root = joint_map.iter().position(|&j| j == ROOT_JOINT).unwrap_or(0);
        let floor = first.chunks(3).map(|j| j[2]).fold(f64::INFINITY, f64::min);
        let anchor = [first[3 * root], first[3 * root + 1], floor];
        for (i, v) in data.iter_mut().enumerate() {
            let axis = i % 3;
            let scaled = if s == 1.0 {
                *v
            } else {
                anchor[axis] + s * (*v - anchor[axis])
            };
            *v = if axis < 2 {
                scaled + shift[axis]
            } else {
                scaled
            };
        }
        persons.push(MotionSequence::new(
            Tensor::new([p.len(), c], data)?,
            p.frame_rate(),
        )?);
    }
    let out = Scene::new(persons, scene.name.clone())?;
    out.validate()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic motion

/// Generator settings. Speeds in m/s, angles in radians, areas in m².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub frame_rate: f64,
    pub area: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Peak heading change rate while wandering.
    pub max_turn_rate: f64,
    /// Fraction of persons placed into approach-and-face pairs.
    pub interaction_fraction: f64,
    /// Probability that an unpaired person stands in place.
    pub idle_probability: f64,
    /// Vertical pelvis bob amplitude.
    pub bob: f64,
    /// Distance at which paired persons stop in front of each other.
    pub meet_distance: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            frame_rate: DEFAULT_FRAME_RATE,
            area: 25.0,
            min_speed: 0.6,
            max_speed: 1.5,
            max_turn_rate: 0.6,
            interaction_fraction: 0.67,
            idle_probability: 0.2,
            bob: 0.025,
            meet_distance: 1.0,
        }
    }
}

impl SyntheticParams {
    /// Gait frequency (Hz) at a given walking speed.
    fn cadence(&self, speed: f64) -> f64 {
        0.8 + 0.6 * speed
    }

    /// Upper bound on the per-step root displacement: horizontal speed is
    /// capped at `max_speed`, and the bob term `bob·|sin φ|` changes at most
    /// `bob·2π·cadence(max_speed)` per second.
    pub fn max_root_step(&self) -> f64 {
        let dt = 1.0 / self.frame_rate;
        let horizontal = self.max_speed * dt;
        let vertical = self.bob * TAU * self.cadence(self.max_speed) * dt;
        (horizontal * horizontal + vertical * vertical).sqrt()
    }
}

/// What a generated person does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Wander,
    Idle,
    /// Walks to and faces the given partner.
    Pair(usize),
}

struct Walker {
    pos: [f64; 2],
    heading: f64,
    height: f64,
    speed_pref: f64,
    phase: f64,
    turn_phase: f64,
    turn_freq: f64,
    role: Role,
}

/// Builds the 15-joint pose for a walker and returns the first `joints`.
fn skeleton(
    w: &Walker,
    speed: f64,
    params: &SyntheticParams,
    gesture: f64,
    joints: usize,
) -> Vec<f64> {
    // body proportions, scaled so the standing vertical extent equals height
    let s = w.height / 0.9;
    let amp = 0.45 * (speed / params.max_speed).min(1.0);
    let fwd = [w.heading.cos(), w.heading.sin()];
    let left = [-w.heading.sin(), w.heading.cos()];
    let sin_p = w.phase.sin();
    let pelvis_z =
        0.53 * s + params.bob * (sin_p.abs() - 0.5) * (speed / params.max_speed).min(1.0);
    let lean = 0.03 * s * speed / params.max_speed;

    let at = |f: f64, l: f64, u: f64| -> [f64; 3] {
        [
            w.pos[0] + f * fwd[0] + l * left[0],
            w.pos[1] + f * fwd[1] + l * left[1],
            pelvis_z + u,
        ]
    };
    // limb segment hanging from `base` at angle `a` (forward positive) in the sagittal plane
    let hang = |base: (f64, f64, f64), a: f64, len: f64| {
        (base.0 + len * a.sin(), base.1, base.2 - len * a.cos())
    };

    let leg_l = amp * sin_p;
    let leg_r = -amp * sin_p;
    let knee_bend = |a: f64| 0.6 * a.max(0.0);
    let arm_l = -0.8 * leg_l;
    let arm_r = -0.8 * leg_r * (1.0 - gesture) + gesture * (2.5 + 0.3 * (3.0 * w.phase).sin());

    let neck = (lean, 0.0, 0.29 * s);
    let head = (lean * 1.3, 0.0, 0.40 * s);
    let sh_l = (lean, 0.11 * s, 0.27 * s);
    let sh_r = (lean, -0.11 * s, 0.27 * s);
    let el_l = hang(sh_l, arm_l, 0.17 * s);
    let wr_l = hang(el_l, arm_l + 0.3, 0.15 * s);
    let el_r = hang(sh_r, arm_r, 0.17 * s);
    let wr_r = hang(el_r, arm_r + 0.3, 0.15 * s);
    let hip_l = (0.0, 0.06 * s, -0.01 * s);
    let hip_r = (0.0, -0.06 * s, -0.01 * s);
    let kn_l = hang(hip_l, leg_l, 0.245 * s);
    let an_l = hang(kn_l, leg_l - knee_bend(-leg_l), 0.245 * s);
    let kn_r = hang(hip_r, leg_r, 0.245 * s);
    let an_r = hang(kn_r, leg_r - knee_bend(-leg_r), 0.245 * s);

    let local = [
        (0.0, 0.0, 0.0),
        neck,
        head,
        sh_l,
        el_l,
        wr_l,
        sh_r,
        el_r,
        wr_r,
        hip_l,
        kn_l,
        an_l,
        hip_r,
        kn_r,
        an_r,
    ];
    local[..joints]
        .iter()
        .flat_map(|&(f, l, u)| at(f, l, u))
        .collect()
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Generates `n_persons` moving skeletons for `n_steps` frames, returning
/// each person's role alongside the scene.
pub fn generate_synthetic_with_roles(
    n_persons: usize,
    n_steps: usize,
    joints: usize,
    seed: u64,
    params: &SyntheticParams,
) -> Result<(Scene, Vec<Role>)> {
    if n_persons == 0 || n_steps == 0 {
        return Err(MrtError::invalid("need at least one person and one step"));
    }
    if joints == 0 || joints > DEFAULT_JOINTS {
        return Err(MrtError::config(format!(
            "synthetic skeletons support 1..={DEFAULT_JOINTS} joints, got {joints}"
        )));
    }
    let mut rng = stream_rng(seed, "synthetic");
    let side = params.area.sqrt();
    let dt = 1.0 / params.frame_rate;
    let n_pairs = ((n_persons as f64 * params.interaction_fraction) / 2.0).floor() as usize;

    let mut walkers: Vec<Walker> = Vec::with_capacity(n_persons);
    for n in 0..n_persons {
        let role = if n < 2 * n_pairs {
            Role::Pair(n ^ 1)
        } else if rng.gen_bool(params.idle_probability) {
            Role::Idle
        } else {
            Role::Wander
        };
        walkers.push(Walker {
            pos: [
                rng.gen_range(-side / 2.0..=side / 2.0),
                rng.gen_range(-side / 2.0..=side / 2.0),
            ],
            heading: rng.gen_range(-PI..PI),
            height: rng.gen_range(HEIGHT_RANGE.0 + 0.05..HEIGHT_RANGE.1 - 0.05),
            speed_pref: rng.gen_range(params.min_speed..=params.max_speed),
            phase: rng.gen_range(0.0..TAU),
            turn_phase: rng.gen_range(0.0..TAU),
            turn_freq: rng.gen_range(0.05..0.25),
            role,
        });
    }
    // pairs start a few meters apart so the approach is visible
    for p in 0..n_pairs {
        let (a, b) = (2 * p, 2 * p + 1);
        let gap = rng.gen_range(2.5..4.5);
        let dir = rng.gen_range(-PI..PI);
        let base = walkers[a].pos;
        walkers[b].pos = [base[0] + gap * dir.cos(), base[1] + gap * dir.sin()];
    }

    let mut frames: Vec<Vec<f64>> = vec![Vec::with_capacity(n_steps * 3 * joints); n_persons];
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let snapshot: Vec<[f64; 2]> = walkers.iter().map(|w| w.pos).collect();
        for (n, w) in walkers.iter_mut().enumerate() {
            let (speed, gesture) = match w.role {
                Role::Idle => (0.0, 0.0),
                Role::Wander => {
                    let mut turn =
                        params.max_turn_rate * (TAU * w.turn_freq * t + w.turn_phase).sin();
                    let r = (w.pos[0].powi(2) + w.pos[1].powi(2)).sqrt();
                    if r > side / 2.0 {
                        // steer back toward the center of the area
                        let home = wrap_angle((-w.pos[1]).atan2(-w.pos[0]) - w.heading);
                        turn = home.signum() * params.max_turn_rate;
                    }
                    w.heading = wrap_angle(w.heading + turn * dt);
                    (w.speed_pref, 0.0)
                }
                Role::Pair(other) => {
                    let o = snapshot[other];
                    let (dx, dy) = (o[0] - w.pos[0], o[1] - w.pos[1]);
                    let dist = (dx * dx + dy * dy).sqrt();
                    let face = dy.atan2(dx);
                    let turn = wrap_angle(face - w.heading).clamp(
                        -2.0 * params.max_turn_rate * dt,
                        2.0 * params.max_turn_rate * dt,
                    );
                    w.heading = wrap_angle(w.heading + turn);
                    // each partner covers half the remaining gap
                    let remaining = (dist - params.meet_distance).max(0.0) / 2.0;
                    let speed = w.speed_pref.min(remaining / 0.5).min(params.max_speed);
                    let gesture = if dist < params.meet_distance + 0.3 && n % 2 == 0 {
                        1.0
                    } else {
                        0.0
                    };
                    (speed, gesture)
                }
            };
            let pose = skeleton(w, speed, params, gesture, joints);
            frames[n].extend_from_slice(&pose);
            w.pos[0] += speed * dt * w.heading.cos();
            w.pos[1] += speed * dt * w.heading.sin();
            w.phase += TAU * params.cadence(speed) * dt * if speed > 0.0 { 1.0 } else { 0.0 };
        }
    }
    let tensors = frames
        .into_iter()
        .map(|d| Tensor::new([n_steps, 3 * joints], d))
        .collect::<Result<Vec<_>>>()?;
    let roles = walkers.iter().map(|w| w.role).collect();
    let scene = Scene::from_tensors(tensors, params.frame_rate, format!("synthetic-{seed}"))?;
    Ok((scene, roles))
}

/// Procedural multi-person scene; deterministic for a given seed.
pub fn generate_synthetic(
    n_persons: usize,
    n_steps: usize,
    joints: usize,
    seed: u64,
    params: &SyntheticParams,
) -> Result<Scene> {
    generate_synthetic_with_roles(n_persons, n_steps, joints, seed, params).map(|(s, _)| s)
}
