use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MotionError;
use crate::physics::{BodyState, Morphology, Pose};

/// Reference frame rate, Hz.
pub const CLIP_HZ: f64 = 30.0;

/// Procedural gait parameters. Angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitParams {
    /// Seconds per gait cycle (two steps).
    pub cycle: f64,
    /// Hip swing amplitude.
    pub hip_amplitude: f64,
    /// Constant hip flexion added on top of the lean compensation.
    pub hip_offset: f64,
    /// Knee flexion held through stance.
    pub knee_base: f64,
    /// Extra knee flexion at mid-swing.
    pub knee_lift: f64,
    /// Forward torso lean.
    pub lean: f64,
    /// 0 = symmetric; 1 = right leg barely swings.
    pub asymmetry: f64,
    /// Toe-down foot pitch at mid-swing.
    pub toe_drop: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            cycle: 1.0,
            hip_amplitude: 0.4,
            hip_offset: 0.0,
            knee_base: 0.1,
            knee_lift: 0.6,
            lean: 0.0,
            asymmetry: 0.0,
            toe_drop: 0.2,
        }
    }
}

/// Gait presets: `walk`, `stoop`, `stomp`, `limp`, `pace`.
pub fn style_preset(name: &str) -> Option<GaitParams> {
    let base = GaitParams::default();
    Some(match name {
        "walk" => base,
        "stoop" => GaitParams {
            lean: 0.5,
            knee_base: 0.35,
            hip_amplitude: 0.35,
            ..base
        },
        "stomp" => GaitParams {
            knee_lift: 1.1,
            hip_amplitude: 0.45,
            toe_drop: 0.45,
            ..base
        },
        "limp" => GaitParams {
            asymmetry: 0.6,
            ..base
        },
        "pace" => GaitParams {
            cycle: 0.7,
            hip_amplitude: 0.3,
            knee_lift: 0.5,
            ..base
        },
        _ => return None,
    })
}

pub const STYLES: [&str; 5] = ["walk", "stoop", "stomp", "limp", "pace"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub poses: Vec<Pose>,
    pub joints: Vec<f64>,
}

/// One gait cycle sampled at `CLIP_HZ`. Frame `k + n` equals frame `k` shifted
/// forward by `advance` metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClip {
    pub style: String,
    pub cycle: f64,
    pub frames: Vec<ClipFrame>,
    pub advance: f64,
    pub link_names: Vec<String>,
}

struct LegAngles {
    hip: f64,
    knee: f64,
    ankle: f64,
}

fn leg(p: &GaitParams, phase: f64, scale: f64) -> LegAngles {
    let s = (TAU * phase).sin();
    let c = (TAU * phase).cos();
    let swing = c.max(0.0).powf(1.5);
    let hip = p.lean + p.hip_offset + scale * p.hip_amplitude * s;
    let knee = -(p.knee_base + scale * p.knee_lift * swing);
    let foot = -scale * p.toe_drop * swing;
    // foot world angle = torso + hip + knee + ankle
    let ankle = foot - (-p.lean + hip + knee);
    LegAngles { hip, knee, ankle }
}

/// Joint angles (hip_l, hip_r, knee_l, knee_r, ankle_l, ankle_r) at a phase in [0, 1).
pub fn gait_angles(p: &GaitParams, phase: f64) -> [f64; 6] {
    let l = leg(p, phase, 1.0);
    let r = leg(p, phase + 0.5, 1.0 - p.asymmetry);
    [l.hip, r.hip, l.knee, r.knee, l.ankle, r.ankle]
}

fn stance_is_left(phase: f64) -> bool {
    // left leg sweeps backward while cos < 0
    (TAU * phase).cos() < 0.0
}

impl ReferenceClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Poses at any integer frame index, unrolled over cycles.
    pub fn poses_at(&self, k: i64) -> Vec<Pose> {
        let n = self.frames.len() as i64;
        let wraps = k.div_euclid(n);
        let idx = k.rem_euclid(n) as usize;
        let dx = wraps as f64 * self.advance;
        self.frames[idx]
            .poses
            .iter()
            .map(|p| Pose { x: p.x + dx, ..*p })
            .collect()
    }

    /// Body states (poses plus central-difference velocities) at frame `k`.
    pub fn states_at(&self, k: i64) -> Vec<BodyState> {
        let prev = self.poses_at(k - 1);
        let cur = self.poses_at(k);
        let next = self.poses_at(k + 1);
        let h = 2.0 / CLIP_HZ;
        cur.iter()
            .zip(prev.iter().zip(&next))
            .map(|(c, (p, n))| BodyState {
                x: c.x,
                y: c.y,
                angle: c.angle,
                vx: (n.x - p.x) / h,
                vy: (n.y - p.y) / h,
                omega: (n.angle - p.angle) / h,
            })
            .collect()
    }

    /// Average forward speed, m/s.
    pub fn speed(&self) -> f64 {
        self.advance / self.cycle
    }

    /// `frame,link,x,y,angle` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "frame,link,x,y,angle")?;
        for (k, f) in self.frames.iter().enumerate() {
            for (name, p) in self.link_names.iter().zip(&f.poses) {
                writeln!(out, "{k},{name},{},{},{}", p.x, p.y, p.angle)?;
            }
        }
        Ok(())
    }
}

/// Build a gait clip for the biped `morph` (link/joint layout of [`Morphology::biped`]).
pub fn generate_clip(style: &str, p: &GaitParams, morph: &Morphology) -> Result<ReferenceClip, MotionError> {
    if !(p.cycle > 0.0) || !(0.0..=1.0).contains(&p.asymmetry) {
        return Err(MotionError::InvalidParams(format!(
            "cycle {} must be > 0 and asymmetry {} in [0, 1]",
            p.cycle, p.asymmetry
        )));
    }
    if morph.joints.len() != 6 {
        return Err(MotionError::InvalidParams(
            "gait generator expects the six-joint biped layout".into(),
        ));
    }
    let n = (p.cycle * CLIP_HZ).round().max(2.0) as usize;
    let cycle = n as f64 / CLIP_HZ;
    let ankle_l = 4;
    let ankle_r = 5;
    // check limits over a fine grid, not just the sampled frames
    for k in 0..(4 * n) {
        let q = gait_angles(p, k as f64 / (4 * n) as f64);
        for (j, js) in morph.joints.iter().enumerate() {
            if js.locked {
                continue;
            }
            let (lo, hi) = js.limits;
            if q[j] < lo - 1e-12 || q[j] > hi + 1e-12 {
                return Err(MotionError::InvalidParams(format!(
                    "{} angle {:.3} outside [{lo}, {hi}]",
                    js.name, q[j]
                )));
            }
        }
    }

    let ankle_pos = |poses: &[Pose], j: usize| {
        let js = &morph.joints[j];
        let (pa, _) = morph.anchors(j);
        let parent = poses[js.parent];
        parent.position() + pa.rotate(parent.angle)
    };
    let relative = |phase: f64| {
        let q = gait_angles(p, phase);
        let root = Pose {
            x: 0.0,
            y: 0.0,
            angle: -p.lean,
        };
        let poses = morph.forward_kinematics(root, &q);
        (q, poses)
    };

    let mut frames = Vec::with_capacity(n);
    let mut x = 0.0;
    let (_, mut prev_poses) = relative(0.0);
    for k in 0..=n {
        let phase = k as f64 / n as f64;
        let (q, mut poses) = relative(phase);
        if k > 0 {
            // stance foot does not slide: the root moves opposite to its ankle
            let mid = (k as f64 - 0.5) / n as f64;
            let j = if stance_is_left(mid) { ankle_l } else { ankle_r };
            x -= ankle_pos(&poses, j).x - ankle_pos(&prev_poses, j).x;
        }
        prev_poses = poses.clone();
        if k == n {
            break;
        }
        let lift = -morph.lowest_contact(&poses);
        for pose in &mut poses {
            pose.x += x;
            pose.y += lift;
        }
        frames.push(ClipFrame {
            poses,
            joints: q.to_vec(),
        });
    }
    Ok(ReferenceClip {
        style: style.to_string(),
        cycle,
        frames,
        advance: x,
        link_names: morph.links.iter().map(|l| l.name.clone()).collect(),
    })
}
