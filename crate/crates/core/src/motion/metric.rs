use super::{MotionError, ReferenceClip};
use crate::physics::Pose;

/// Mean distance between corresponding link positions of two poses.
pub fn frame_error(a: &[Pose], b: &[Pose]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64
}

/// Per-frame imitation error between two equal-length pose sequences, m.
pub fn imitation_error(sim: &[Vec<Pose>], reference: &[Vec<Pose>]) -> Result<Vec<f64>, MotionError> {
    if sim.is_empty() || reference.is_empty() {
        return Err(MotionError::Empty);
    }
    if sim.len() != reference.len() {
        return Err(MotionError::LengthMismatch {
            sim: sim.len(),
            reference: reference.len(),
        });
    }
    Ok(sim.iter().zip(reference).map(|(a, b)| frame_error(a, b)).collect())
}

fn root_aligned(poses: &[Pose]) -> Vec<Pose> {
    let x0 = poses[0].x;
    poses.iter().map(|p| Pose { x: p.x - x0, ..*p }).collect()
}

/// Imitation error of a simulated run against a cyclic clip: every clip phase
/// offset is tried, positions are compared with each frame's root x removed,
/// and the offset with the lowest mean error is kept.
pub fn clip_imitation_error(sim: &[Vec<Pose>], clip: &ReferenceClip) -> Result<Vec<f64>, MotionError> {
    if sim.is_empty() || clip.is_empty() {
        return Err(MotionError::Empty);
    }
    let sim_aligned: Vec<Vec<Pose>> = sim.iter().map(|f| root_aligned(f)).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for offset in 0..clip.len() as i64 {
        let reference: Vec<Vec<Pose>> = (0..sim.len() as i64)
            .map(|t| root_aligned(&clip.poses_at(t + offset)))
            .collect();
        let e = imitation_error(&sim_aligned, &reference)?;
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        if best.as_ref().is_none_or(|(m, _)| mean < *m) {
            best = Some((mean, e));
        }
    }
    Ok(best.map(|(_, e)| e).unwrap_or_default())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
