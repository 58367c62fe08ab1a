use serde::{Deserialize, Serialize};

use crate::physics::BodyState;

/// Frames of pose history in an observation.
pub const HISTORY: usize = 4;
/// Frames in a discriminator window.
pub const DISC_FRAMES: usize = 5;

/// Width of one observation frame for `links` bodies (root included).
pub fn frame_dim(links: usize) -> usize {
    6 + 7 * (links - 1)
}

pub fn obs_dim(links: usize) -> usize {
    HISTORY * frame_dim(links)
}

pub fn disc_frame_dim(links: usize) -> usize {
    4 + 4 * (links - 1)
}

pub fn disc_dim(links: usize) -> usize {
    DISC_FRAMES * disc_frame_dim(links)
}

/// Body states at one control tick plus the ground height under the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub bodies: Vec<BodyState>,
    pub ground: f64,
}

/// Target direction (±1 along x), distance to the target, preferred speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub heading: f64,
    pub distance: f64,
    pub speed: f64,
}

impl GoalState {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.heading, self.distance, self.speed]
    }
}

/// Features of one frame: root height above ground, cos/sin root angle, root
/// velocities, then per non-root link its position, cos/sin angle, linear and
/// angular velocity, all relative to the root.
pub fn frame_features(f: &Frame, out: &mut Vec<f64>) {
    let r = &f.bodies[0];
    out.extend_from_slice(&[r.y - f.ground, r.angle.cos(), r.angle.sin(), r.vx, r.vy, r.omega]);
    for b in &f.bodies[1..] {
        let da = b.angle - r.angle;
        out.extend_from_slice(&[
            b.x - r.x,
            b.y - r.y,
            da.cos(),
            da.sin(),
            b.vx - r.vx,
            b.vy - r.vy,
            b.omega - r.omega,
        ]);
    }
}

/// Observation from the most recent frames (oldest first). Short histories are
/// padded at the front by repeating the oldest frame.
pub fn observe(history: &[Frame]) -> Vec<f64> {
    assert!(!history.is_empty(), "observe needs at least one frame");
    let links = history[0].bodies.len();
    let mut out = Vec::with_capacity(obs_dim(links));
    let start = history.len().saturating_sub(HISTORY);
    let recent = &history[start..];
    for _ in recent.len()..HISTORY {
        frame_features(&recent[0], &mut out);
    }
    for f in recent {
        frame_features(f, &mut out);
    }
    out
}

/// Discriminator window over `DISC_FRAMES` frames (oldest first, padded like
/// [`observe`]). Per frame: root x relative to the newest frame's root, root
/// height above ground, cos/sin root angle, then per non-root link its position
/// and cos/sin angle relative to the root.
pub fn disc_window(frames: &[Frame]) -> Vec<f64> {
    assert!(!frames.is_empty(), "disc_window needs at least one frame");
    let links = frames[0].bodies.len();
    let start = frames.len().saturating_sub(DISC_FRAMES);
    let recent = &frames[start..];
    let last_x = recent[recent.len() - 1].bodies[0].x;
    let mut out = Vec::with_capacity(disc_dim(links));
    let pad = DISC_FRAMES - recent.len();
    for f in std::iter::repeat_n(&recent[0], pad).chain(recent) {
        let r = &f.bodies[0];
        out.extend_from_slice(&[r.x - last_x, r.y - f.ground, r.angle.cos(), r.angle.sin()]);
        for b in &f.bodies[1..] {
            let da = b.angle - r.angle;
            out.extend_from_slice(&[b.x - r.x, b.y - r.y, da.cos(), da.sin()]);
        }
    }
    out
}
