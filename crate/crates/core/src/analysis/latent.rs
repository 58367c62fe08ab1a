use std::io::Write;

use super::AnalysisError;
use crate::adapt::AdaptedPolicy;
use crate::neural::{PolicyNet, Tensor};
use crate::physics::{Morphology, Pose};
use crate::trainer::{Actor, Env, EnvConfig, Observation};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub tag: String,
    pub episode: usize,
    pub t: usize,
}

/// Tags written by [`collect_latents`]: the injected latent, and the frozen
/// encoder's latent on the same states.
pub const ENCODER_TAG: &str = "encoder";

fn inputs(o: &Observation) -> (Tensor, Tensor, Option<Tensor>) {
    (
        Tensor::row(o.obs.clone()),
        Tensor::row(o.goal.clone()),
        o.terrain.clone().map(Tensor::row),
    )
}

/// What drives the character during collection.
pub enum LatentSource<'a> {
    Base(&'a PolicyNet),
    Adapted(&'a AdaptedPolicy),
}

/// Roll the policy forward along a straight path (fixed heading and speed) with
/// mean actions and record `z⁰` each tick. Adapted runs also record the
/// frozen encoder's latent under [`ENCODER_TAG`].
pub fn collect_latents(
    source: LatentSource,
    env: &EnvConfig,
    tag: &str,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<LatentSample>, AnalysisError> {
    let mut out = vec![];
    let mut cfg = env.clone();
    cfg.perturb = None;
    if let LatentSource::Adapted(p) = &source {
        cfg.heightmap = p.config.terrain;
    }
    for ep in 0..episodes {
        let mut e = Env::new(cfg.clone(), None, seed.wrapping_add(ep as u64));
        e.set_goal_override(Some((1.0, 0.5 * (cfg.goal.speed.0 + cfg.goal.speed.1))));
        for t in 0..steps {
            let o = e.observation();
            let (obs, goal, terrain) = inputs(&o);
            let action = match &source {
                LatentSource::Base(p) => {
                    let (mean, _, z0) = p.infer(&obs, &goal, None)?;
                    out.push(LatentSample {
                        z: z0.row_slice(0).to_vec(),
                        tag: tag.to_string(),
                        episode: ep,
                        t,
                    });
                    mean.row_slice(0).to_vec()
                }
                LatentSource::Adapted(p) => {
                    let (base, _, z0) = p.latents(&obs, &goal, terrain.as_ref())?;
                    let (mean, _, _) = p.infer(&obs, &goal, terrain.as_ref())?;
                    out.push(LatentSample {
                        z: z0.row_slice(0).to_vec(),
                        tag: tag.to_string(),
                        episode: ep,
                        t,
                    });
                    out.push(LatentSample {
                        z: base.row_slice(0).to_vec(),
                        tag: ENCODER_TAG.to_string(),
                        episode: ep,
                        t,
                    });
                    mean.row_slice(0).to_vec()
                }
            };
            let info = e.step(&action);
            if info.done() {
                break;
            }
        }
    }
    Ok(out)
}

/// Height of each foot above the root link, per frame: `[left, right]`.
pub fn foot_height_trace(morph: &Morphology, frames: &[Vec<Pose>]) -> Result<Vec<[f64; 2]>, AnalysisError> {
    let idx = |name: &str| {
        morph
            .link_index(name)
            .map_err(|_| AnalysisError::MissingLink(name.to_string()))
    };
    let (l, r) = (idx("foot_l")?, idx("foot_r")?);
    Ok(frames
        .iter()
        .map(|p| [p[l].y - p[0].y, p[r].y - p[0].y])
        .collect())
}

pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[[f64; 2]], dt: f64) -> std::io::Result<()> {
    writeln!(out, "frame,t,foot_l,foot_r")?;
    for (i, h) in trace.iter().enumerate() {
        writeln!(out, "{i},{},{},{}", i as f64 * dt, h[0], h[1])?;
    }
    Ok(())
}

pub fn write_embedding_csv<W: Write>(out: &mut W, samples: &[LatentSample], coords: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(out, "tag,episode,t,x,y")?;
    for (s, c) in samples.iter().zip(coords) {
        let y = c.get(1).copied().unwrap_or(0.0);
        writeln!(out, "{},{},{},{},{}", s.tag, s.episode, s.t, c[0], y)?;
    }
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#7f7f7f", "#17becf",
];

/// Minimal SVG scatter plot of 2-D points colored by tag.
pub fn scatter_svg(tags: &[String], coords: &[Vec<f64>]) -> String {
    let (w, h, pad) = (480.0, 480.0, 20.0);
    let xs: Vec<f64> = coords.iter().map(|c| c[0]).collect();
    let ys: Vec<f64> = coords.iter().map(|c| c.get(1).copied().unwrap_or(0.0)).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
    };
    let ((x0, x1), (y0, y1)) = (range(&xs), range(&ys));
    let mut names: Vec<&String> = tags.iter().collect();
    names.sort();
    names.dedup();
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
        let c = names.iter().position(|n| *n == &tags[i]).unwrap_or(0);
        let px = pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
        s += &format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2\" fill=\"{}\"/>\n",
            PALETTE[c % PALETTE.len()]
        );
    }
    for (i, n) in names.iter().enumerate() {
        s += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{n}</text>\n",
            pad,
            pad + 14.0 * i as f64,
            PALETTE[i % PALETTE.len()]
        );
    }
    s + "</svg>\n"
}

/// Polyline SVG of one or more series against their index.
pub fn lines_svg(series: &[(&str, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 320.0, 20.0);
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    for (k, (name, v)) in series.iter().enumerate() {
        let n = v.len().max(2) - 1;
        let pts: Vec<String> = v
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_finite())
            .map(|(i, y)| {
                let px = pad + i as f64 / n as f64 * (w - 2.0 * pad);
                let py = h - pad - (y - lo) / (hi - lo) * (h - 2.0 * pad);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let c = PALETTE[k % PALETTE.len()];
        s += &format!("<polyline fill=\"none\" stroke=\"{c}\" points=\"{}\"/>\n", pts.join(" "));
        s += &format!("<text x=\"{pad}\" y=\"{}\" font-size=\"12\" fill=\"{c}\">{name}</text>\n", pad + 14.0 * k as f64);
    }
    s + "</svg>\n"
}
