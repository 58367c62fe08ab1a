use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adaptnet::adapt::{blend_two, load_adapter, save_adapter, AdaptedPolicy};
use adaptnet::analysis::{
    classical_mds, collect_latents, foot_height_trace, lines_svg, pairwise_distances, scatter_svg, write_embedding_csv,
    write_trace_csv, LatentSource,
};
use adaptnet::experiment::{injection_probe, load_policy, save_policy, ExperimentConfig, Method, PolicyManifest};
use adaptnet::neural::PolicyNet;
use adaptnet::physics::Pose;
use adaptnet::trainer::{evaluate, Actor, EvalReport, RegularizedPolicy, Trainer, CONTROL_DT, METRICS_HEADER};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::serve::{self, ServeOptions, Session};
use crate::CliError;

const CHECKPOINT_EVERY: usize = 50;

/// Create the output directory and write the run manifest.
fn prepare(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out)?;
    let manifest = serde_json::json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    fs::write(cfg.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(cfg.out.clone())
}

fn base_path(cfg: &ExperimentConfig) -> Result<&Path, CliError> {
    cfg.base
        .as_deref()
        .ok_or_else(|| CliError::Config("a base checkpoint is required (`base` or --base)".into()))
}

fn with_path<E: Into<CliError>>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| match e.into() {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
    }
}

fn load_base(cfg: &ExperimentConfig) -> Result<PolicyNet, CliError> {
    let p = base_path(cfg)?;
    load_policy(p).map_err(with_path(p))
}

fn policy_manifest(cfg: &ExperimentConfig, net: &PolicyNet, iterations: usize) -> PolicyManifest {
    PolicyManifest {
        kind: "policy".into(),
        dims: net.dims.clone(),
        config_hash: Some(cfg.hash()),
        seed: Some(cfg.seed),
        iterations: Some(iterations),
    }
}

pub fn write_trajectory<W: Write>(out: &mut W, traj: &[Vec<Pose>], links: &[String]) -> std::io::Result<()> {
    writeln!(out, "tick,t,link,x,y,angle")?;
    for (k, poses) in traj.iter().enumerate() {
        for (name, p) in links.iter().zip(poses) {
            writeln!(out, "{k},{},{name},{},{},{}", k as f64 * CONTROL_DT, p.x, p.y, p.angle)?;
        }
    }
    Ok(())
}

/// Write worker 0's trajectory and return the SHA-256 of the file.
fn dump_trajectory(path: &Path, rep: &EvalReport, links: &[String]) -> Result<String, CliError> {
    let mut buf = vec![];
    if let Some(t) = rep.trajectories.first() {
        write_trajectory(&mut buf, t, links)?;
    }
    fs::write(path, &buf)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

#[derive(Serialize)]
struct EvalSummary {
    mean_goal_reward: f64,
    fall_rate: f64,
    falls: usize,
    episodes: usize,
    imitation_error: Option<f64>,
    speed: f64,
    trajectory_sha256: String,
}

fn run_eval<A: Actor>(cfg: &ExperimentConfig, actor: &A) -> Result<EvalReport, CliError> {
    let task = cfg.task()?;
    let e = &cfg.eval;
    Ok(evaluate(actor, &task.env, Some(&task.clip), e.workers, e.steps, cfg.seed, e.stochastic)?)
}

const EVAL_HEADER: &str = "iteration,mean_goal_reward,fall_rate,imitation_error,speed";

fn eval_row(iteration: usize, r: &EvalReport) -> String {
    format!(
        "{iteration},{},{},{},{}",
        r.mean_goal_reward,
        r.fall_rate(),
        r.imitation_error.unwrap_or(f64::NAN),
        r.speed
    )
}

/// Train `actor`, logging metrics every iteration and an evaluation before
/// the first update and after the last.
fn train<A: Actor>(
    cfg: &ExperimentConfig,
    dir: &Path,
    actor: A,
    probe: Option<fn(&A, &adaptnet::trainer::RolloutBatch) -> f64>,
    save: impl Fn(&A, usize, &Path) -> Result<(), CliError>,
    final_name: &str,
) -> Result<A, CliError> {
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut evals = BufWriter::new(File::create(dir.join("eval.csv"))?);
    writeln!(evals, "{EVAL_HEADER}")?;
    writeln!(evals, "{}", eval_row(0, &run_eval(cfg, &actor)?))?;
    evals.flush()?;
    let mut t = Trainer::new(actor, cfg.task()?, cfg.train.clone(), cfg.disc.clone(), cfg.seed)?;
    t.probe = probe;
    let n = cfg.train.iterations;
    for i in 0..n {
        let s = t.step()?;
        writeln!(metrics, "{}", s.csv_row())?;
        metrics.flush()?;
        log::info!(
            "iter {i}: goal {:.3} imitation {:.3} error {:.3} falls {:.3}",
            s.goal_reward,
            s.imitation_reward,
            s.imitation_error,
            s.fall_rate
        );
        if (i + 1) % CHECKPOINT_EVERY == 0 && i + 1 < n {
            save(&t.actor, i + 1, &dir.join(final_name))?;
        }
    }
    save(&t.actor, n, &dir.join(final_name))?;
    writeln!(evals, "{}", eval_row(n, &run_eval(cfg, &t.actor)?))?;
    evals.flush()?;
    Ok(t.actor)
}

pub fn pretrain(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let dir = prepare(cfg, "pretrain")?;
    let net = cfg.fresh_policy()?;
    let save = |p: &PolicyNet, it: usize, path: &Path| -> Result<(), CliError> {
        Ok(save_policy(p, &policy_manifest(cfg, p, it), path)?)
    };
    train(cfg, &dir, net, None, save, "policy.ckpt")?;
    Ok(())
}

pub fn adapt(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let base = load_base(cfg)?;
    let dir = prepare(cfg, "adapt")?;
    let task_base = cfg.task_base(&base)?;
    let save_net = |p: &PolicyNet, it: usize, path: &Path| -> Result<(), CliError> {
        Ok(save_policy(p, &policy_manifest(cfg, p, it), path)?)
    };
    match cfg.method {
        Method::Adaptnet => {
            let p = cfg.adapted_policy(&base)?;
            let save = |p: &AdaptedPolicy, _: usize, path: &Path| -> Result<(), CliError> { Ok(save_adapter(p, path)?) };
            train(cfg, &dir, p, Some(injection_probe), save, "adapter.ckpt")?;
        }
        Method::Scratch => {
            train(cfg, &dir, cfg.fresh_policy()?, None, save_net, "policy.ckpt")?;
        }
        Method::Finetune => {
            train(cfg, &dir, task_base, None, save_net, "policy.ckpt")?;
        }
        Method::FinetuneReg => {
            let p = RegularizedPolicy::new(task_base, cfg.train.ft_reg_lambda);
            let save = |p: &RegularizedPolicy, it: usize, path: &Path| save_net(&p.net, it, path);
            train(cfg, &dir, p, None, save, "policy.ckpt")?;
        }
    }
    Ok(())
}

fn adapter_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "adapter".into(), |s| s.to_string_lossy().into_owned())
}

fn load_adapters(cfg: &ExperimentConfig, base: &PolicyNet) -> Result<Vec<(String, AdaptedPolicy)>, CliError> {
    let task_base = cfg.task_base(base)?;
    let mut out: Vec<(String, AdaptedPolicy)> = vec![];
    for p in &cfg.adapters {
        let mut name = adapter_name(p);
        // `a/adapter.ckpt` and `b/adapter.ckpt` would otherwise collide
        if out.iter().any(|(n, _)| *n == name) {
            name = format!("{name}{}", out.len());
        }
        out.push((name, load_adapter(&task_base, p).map_err(with_path(p))?));
    }
    Ok(out)
}

fn summary(rep: &EvalReport, hash: String) -> EvalSummary {
    EvalSummary {
        mean_goal_reward: rep.mean_goal_reward,
        fall_rate: rep.fall_rate(),
        falls: rep.falls,
        episodes: rep.episodes,
        imitation_error: rep.imitation_error,
        speed: rep.speed,
        trajectory_sha256: hash,
    }
}

pub fn eval(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let base = load_base(cfg)?;
    let dir = prepare(cfg, "eval")?;
    let adapters = load_adapters(cfg, &base)?;
    let rep = match adapters.into_iter().next() {
        Some((_, mut a)) => {
            a.set_alpha(cfg.adapter.alpha)?;
            run_eval(cfg, &a)?
        }
        None => run_eval(cfg, &cfg.task_base(&base)?)?,
    };
    let links = cfg.clip()?.link_names;
    let hash = dump_trajectory(&dir.join("trajectory.csv"), &rep, &links)?;
    fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&summary(&rep, hash))?)?;
    println!(
        "mean goal reward {:.4}, fall rate {:.4}, imitation error {}",
        rep.mean_goal_reward,
        rep.fall_rate(),
        rep.imitation_error.map_or("n/a".into(), |e| format!("{e:.4}"))
    );
    Ok(())
}

/// Evaluate along an α schedule: one adapter scaled by α, or two adapters
/// blended with weights (α, 1−α).
pub fn interp(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let base = load_base(cfg)?;
    let adapters = load_adapters(cfg, &base)?;
    if adapters.is_empty() || adapters.len() > 2 {
        return Err(CliError::Config(format!(
            "interp needs one or two adapters, got {}",
            adapters.len()
        )));
    }
    let dir = prepare(cfg, "interp")?;
    let links = cfg.clip()?.link_names;
    let n = cfg.eval.alpha_steps;
    let mut table = BufWriter::new(File::create(dir.join("interp.csv"))?);
    writeln!(table, "index,alpha,mean_goal_reward,fall_rate,imitation_error,speed,trajectory_sha256")?;
    for k in 0..n {
        let alpha = k as f64 / (n - 1) as f64;
        let rep = if adapters.len() == 1 {
            let mut a = adapters[0].1.clone();
            a.set_alpha(alpha)?;
            run_eval(cfg, &a)?
        } else {
            run_eval(cfg, &blend_two(&adapters[0].1, &adapters[1].1, alpha)?)?
        };
        let hash = dump_trajectory(&dir.join(format!("trajectory_{k:02}.csv")), &rep, &links)?;
        writeln!(
            table,
            "{k},{alpha},{},{},{},{},{hash}",
            rep.mean_goal_reward,
            rep.fall_rate(),
            rep.imitation_error.unwrap_or(f64::NAN),
            rep.speed
        )?;
    }
    table.flush()?;
    Ok(())
}

/// Latent embedding of the base and every adapter on a straight walk, plus
/// foot-height traces.
pub fn latent(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let base = load_base(cfg)?;
    let adapters = load_adapters(cfg, &base)?;
    let dir = prepare(cfg, "latent")?;
    let env = cfg.env()?;
    let l = &cfg.latent;
    let task_base = cfg.task_base(&base)?;
    let mut samples = collect_latents(LatentSource::Base(&task_base), &env, "base", l.episodes, l.steps, cfg.seed)?;
    for (name, a) in &adapters {
        let mut a = a.clone();
        a.set_alpha(cfg.adapter.alpha)?;
        samples.extend(collect_latents(LatentSource::Adapted(&a), &env, name, l.episodes, l.steps, cfg.seed)?);
    }
    let kept: Vec<_> = samples.into_iter().filter(|s| s.t % l.stride == 0).collect();
    let points: Vec<Vec<f64>> = kept.iter().map(|s| s.z.clone()).collect();
    let emb = classical_mds(&pairwise_distances(&points), 2)?;
    let mut f = BufWriter::new(File::create(dir.join("embedding.csv"))?);
    write_embedding_csv(&mut f, &kept, &emb.coords)?;
    f.flush()?;
    let tags: Vec<String> = kept.iter().map(|s| s.tag.clone()).collect();
    fs::write(dir.join("embedding.svg"), scatter_svg(&tags, &emb.coords))?;
    log::info!("MDS stress {:.4} over {} samples", emb.stress, kept.len());

    let morph = cfg.morphology()?;
    let mut series = vec![];
    let mut trace_of = |tag: &str, rep: &EvalReport| -> Result<(), CliError> {
        let frames = rep.trajectories.first().cloned().unwrap_or_default();
        let trace = foot_height_trace(&morph, &frames)?;
        let mut f = BufWriter::new(File::create(dir.join(format!("feet_{tag}.csv")))?);
        write_trace_csv(&mut f, &trace, CONTROL_DT)?;
        f.flush()?;
        series.push((format!("{tag} left"), trace.iter().map(|h| h[0]).collect::<Vec<f64>>()));
        Ok(())
    };
    trace_of("base", &run_eval(cfg, &task_base)?)?;
    for (name, a) in &adapters {
        let mut a = a.clone();
        a.set_alpha(cfg.adapter.alpha)?;
        trace_of(name, &run_eval(cfg, &a)?)?;
    }
    let named: Vec<(&str, Vec<f64>)> = series.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    fs::write(dir.join("feet.svg"), lines_svg(&named))?;
    Ok(())
}

pub fn serve(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let base = load_base(cfg)?;
    let adapters = load_adapters(cfg, &base)?;
    let task_base = cfg.task_base(&base)?;
    let session = Session::new(task_base, adapters, &cfg.env()?, cfg.adapter.alpha, cfg.seed).map_err(CliError::Runtime)?;
    let s = &cfg.serve;
    let handle = serve::spawn(
        session,
        ServeOptions {
            bind: format!("{}:{}", s.host, s.port),
            max_ticks: s.max_ticks,
            realtime: s.realtime,
        },
    )?;
    println!("serving on ws://{}", handle.addr);
    let session = handle.wait().map_err(CliError::Runtime)?;
    log::info!("session ended after {} ticks", session.frame().tick);
    Ok(())
}
