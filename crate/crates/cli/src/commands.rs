use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context as _, Result};
use rtopf_core::env::{generate_dataset, LoadScenario, Normalizer, RewardKind, RtOpfEnv};
use rtopf_core::eval::{
    compare_baselines, evaluate, timing_benchmark, write_report, ActorPolicy, EvalReport, ExpertReplay, TimingBlock,
};
use rtopf_core::neural::GaussianPolicy;
use rtopf_core::opf::{generate_expert_trajectory, import_trajectory, ExpertTrajectory, TrajectoryError};
use rtopf_core::pdppo::{self, episodes_per_round, pretrain_bc, Checkpoint, LogRow};
use serde::{Deserialize, Serialize};

use crate::config::{Context, Failure, Split};

pub const BC_POLICY: &str = "bc_policy.json";
pub const BENCH: &str = "bench.tsv";
pub const COMPARISON: &str = "comparison.tsv";

pub fn dataset_file(split: Split) -> String {
    format!("{}_data.csv", split.name())
}

pub fn expert_file(split: Split) -> String {
    format!("expert_{}.json", split.name())
}

pub fn checkpoint_file(mode: RewardKind) -> String {
    format!("checkpoint_{}.json", mode.name())
}

pub fn log_file(mode: RewardKind) -> String {
    format!("train_log_{}.tsv", mode.name())
}

pub fn report_file(method: &str) -> String {
    format!("report_{method}.tsv")
}

/// Writes through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn read(path: &Path, hint: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {} ({hint})", path.display()))
}

fn check_hash(what: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Failure::Config(format!(
            "{} was produced by a different configuration (hash {found}, expected {expected})",
            what.display()
        ))
        .into());
    }
    Ok(())
}

pub fn gen_data(ctx: &Context) -> Result<()> {
    for split in [Split::Train, Split::Test] {
        let block = match split {
            Split::Train => &ctx.cfg.dataset,
            Split::Test => &ctx.cfg.test,
        };
        let scen = generate_dataset(&ctx.net, block).map_err(|e| Failure::Config(e.to_string()))?;
        let mut buf = Vec::new();
        scen.write_csv(&mut buf, &ctx.data_hash(split))?;
        write_atomic(&ctx.path(&dataset_file(split)), &buf)?;
    }
    Ok(())
}

pub fn load_dataset(ctx: &Context, split: Split) -> Result<LoadScenario> {
    let path = ctx.path(&dataset_file(split));
    let text = read(&path, "run gen-data first")?;
    let (scen, hash) = LoadScenario::read_csv(text.as_bytes()).with_context(|| path.display().to_string())?;
    check_hash(&path, &hash, &ctx.data_hash(split))?;
    Ok(scen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Reused,
    Generated,
}

/// Expert trajectories for both splits, reusing files whose hash matches.
pub fn expert(ctx: &Context) -> Result<[CacheStatus; 2]> {
    let mut status = [CacheStatus::Reused; 2];
    for (k, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        let path = ctx.path(&expert_file(split));
        let hash = ctx.data_hash(split);
        if path.exists() {
            if let Ok(t) = import_trajectory(&path, &ctx.net) {
                if t.config_hash == hash {
                    continue;
                }
            }
        }
        let scen = load_dataset(ctx, split)?;
        let mut traj = generate_expert_trajectory(&ctx.net, &scen.all_bus_loads(&ctx.net)).map_err(|e| match e {
            TrajectoryError::Solver { step, source } => {
                anyhow::Error::from(Failure::Solver(format!("{} split, step {step}: {source}", split.name())))
            }
            other => anyhow::Error::from(other),
        })?;
        if let Some(t) = traj.steps.iter().position(|s| !s.feasible) {
            return Err(Failure::Solver(format!(
                "{} split, step {t}: no feasible dispatch found",
                split.name()
            ))
            .into());
        }
        traj.config_hash = hash;
        let text = serde_json::to_string_pretty(&traj)?;
        write_atomic(&path, text.as_bytes())?;
        status[k] = CacheStatus::Generated;
    }
    Ok(status)
}

pub fn load_trajectory(ctx: &Context, split: Split) -> Result<ExpertTrajectory> {
    let path = ctx.path(&expert_file(split));
    if !path.exists() {
        anyhow::bail!("{} is missing; run expert first", path.display());
    }
    let traj = import_trajectory(&path, &ctx.net)?;
    check_hash(&path, &traj.config_hash, &ctx.data_hash(split))?;
    Ok(traj)
}

pub fn build_env(ctx: &Context, split: Split, mode: RewardKind) -> Result<RtOpfEnv> {
    let traj = load_trajectory(ctx, split)?;
    let env_cfg = ctx.cfg.env.clone();
    let scale = env_cfg
        .resolved_reward_scale(&ctx.net)
        .map_err(|e| Failure::Solver(format!("reward scale: {e}")))?;
    let norm = Arc::new(Normalizer::from_bands(&ctx.net, &ctx.cfg.dataset));
    let mode = env_cfg.reward_mode(mode);
    RtOpfEnv::new(&ctx.net, Arc::new(traj), env_cfg, mode, scale, norm).map_err(|e| Failure::Config(e.to_string()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcArtifact {
    pub config_hash: String,
    pub samples: usize,
    pub losses: Vec<f64>,
    pub policy: GaussianPolicy,
}

fn fresh_checkpoint(ctx: &Context, env: &RtOpfEnv) -> Checkpoint {
    let (sd, ad) = env.dims();
    Checkpoint::fresh(sd, ad, env.cost_dim(), &ctx.cfg.train)
}

/// Behavior cloning on the training trajectory.
pub fn pretrain(ctx: &Context) -> Result<BcArtifact> {
    let mut env = build_env(ctx, Split::Train, RewardKind::PdPpo)?;
    let steps: Vec<usize> = (0..env.n_steps()).collect();
    let data = env.imitation_dataset(&steps)?;
    let mut policy = fresh_checkpoint(ctx, &env).actor;
    let losses = pretrain_bc(&mut policy, &data, &ctx.cfg.bc, ctx.cfg.seed);
    let art = BcArtifact {
        config_hash: ctx.bc_hash(),
        samples: data.len(),
        losses,
        policy,
    };
    write_atomic(&ctx.path(BC_POLICY), serde_json::to_string(&art)?.as_bytes())?;
    Ok(art)
}

pub fn load_checkpoint(ctx: &Context, mode: RewardKind) -> Result<Checkpoint> {
    let path = ctx.path(&checkpoint_file(mode));
    let text = read(&path, "run train first")?;
    let ck = Checkpoint::from_json(&text).with_context(|| path.display().to_string())?;
    check_hash(&path, &ck.config_hash, &ctx.model_hash(Some(mode)))?;
    Ok(ck)
}

fn log_header(m: usize) -> String {
    let mut cols = vec!["round".to_string(), "episode".into(), "mean_reward".into()];
    for j in 0..m {
        let base = ["c_pg", "c_qg", "c_vg", "c_flow"][j % 4];
        cols.push(if j < 4 { base.to_string() } else { format!("{base}_{}", j / 4) });
    }
    cols.extend((0..m).map(|j| format!("lambda_{j}")));
    cols.extend(
        ["kl", "actor_loss", "critic_r_loss", "critic_c_loss", "policy_steps", "wall_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join("\t")
}

fn log_line(r: &LogRow) -> String {
    let mut cols = vec![r.round.to_string(), r.episode.to_string(), format!("{:.6e}", r.mean_reward)];
    cols.extend(r.mean_cost.iter().map(|c| format!("{c:.6e}")));
    cols.extend(r.lambda.iter().map(|l| format!("{l:.6e}")));
    cols.extend([
        format!("{:.6e}", r.kl),
        format!("{:.6e}", r.actor_loss),
        format!("{:.6e}", r.critic_r_loss),
        format!("{:.6e}", r.critic_c_loss),
        r.policy_steps.to_string(),
        format!("{:.1}", r.wall_ms),
    ]);
    cols.join("\t")
}

/// Trains `mode` until `train.episodes` episodes are done, resuming from an
/// existing checkpoint. The checkpoint is rewritten after every round.
pub fn train(ctx: &Context, mode: RewardKind, skip_bc: bool) -> Result<Checkpoint> {
    let env = build_env(ctx, Split::Train, mode)?;
    let ck_path = ctx.path(&checkpoint_file(mode));
    let log_path = ctx.path(&log_file(mode));
    let mut ck = if ck_path.exists() {
        load_checkpoint(ctx, mode)?
    } else {
        let mut ck = fresh_checkpoint(ctx, &env);
        ck.config_hash = ctx.model_hash(Some(mode));
        ck.method = mode.name().to_string();
        ck.normalizer = Some(Normalizer::from_bands(&ctx.net, &ctx.cfg.dataset));
        ck.reward_scale = env.reward_scale();
        if !skip_bc {
            let path = ctx.path(BC_POLICY);
            let bc: BcArtifact = serde_json::from_str(&read(&path, "run pretrain first or pass --skip-bc")?)?;
            check_hash(&path, &bc.config_hash, &ctx.bc_hash())?;
            // Only the mean is cloned; exploration starts from the configured spread.
            ck.actor.mean = bc.policy.mean;
        }
        if let Some(dir) = log_path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&log_path, log_header(env.cost_dim()) + "\n")?;
        ck
    };
    let mut log = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(&log_path)
        .with_context(|| log_path.display().to_string())?;
    let per_round = episodes_per_round(&env, &ctx.cfg.train);
    let target = ctx.cfg.train.episodes;
    while ck.episodes_done < target {
        let to_boundary = per_round - (ck.episodes_done - ck.rounds_done * per_round);
        let chunk = to_boundary.min(target - ck.episodes_done);
        let mut lines = Vec::new();
        ck = pdppo::train(&env, &ctx.cfg.train, ck, chunk, |r| lines.push(log_line(r)))?;
        for l in lines {
            writeln!(log, "{l}")?;
        }
        write_atomic(&ck_path, ck.to_json().as_bytes())?;
    }
    if !ck_path.exists() {
        write_atomic(&ck_path, ck.to_json().as_bytes())?;
    }
    Ok(ck)
}

fn save_report(ctx: &Context, report: &EvalReport) -> Result<()> {
    let mut buf = Vec::new();
    write_report(report, &mut buf)?;
    write_atomic(&ctx.path(&report_file(&report.method)), &buf)
}

/// Scores one trained method (or the expert itself) on the test split.
pub fn eval_one(ctx: &Context, mode: Option<RewardKind>) -> Result<EvalReport> {
    let mut env = build_env(ctx, Split::Test, mode.unwrap_or(RewardKind::PdPpo))?;
    let report = match mode {
        None => evaluate(&mut env, &ExpertReplay, "expert")?,
        Some(m) => {
            let ck = load_checkpoint(ctx, m)?;
            evaluate(&mut env, &ActorPolicy(&ck.actor), m.name())?
        }
    };
    save_report(ctx, &report)?;
    Ok(report)
}

fn gate(ctx: &Context, report: &EvalReport) -> Result<()> {
    let Some(g) = &ctx.cfg.eval.gate else {
        return Ok(());
    };
    let kappa = report.kappa.map_or(f64::INFINITY, |k| k.aver);
    if report.feas_percent < g.feas_min || report.c_bar > g.c_bar_max || kappa > g.kappa_aver_max {
        return Err(Failure::Gate(format!(
            "{}: Feas% {:.2} (min {}), C {:.3e} (max {}), kappa_aver {:.4}% (max {})",
            report.method, report.feas_percent, g.feas_min, report.c_bar, g.c_bar_max, kappa, g.kappa_aver_max
        ))
        .into());
    }
    Ok(())
}

/// Evaluates the given method, or every trained method plus a ranking when
/// `mode` is `None`. `expert` scores expert replay instead.
pub fn eval(ctx: &Context, mode: Option<RewardKind>, expert: bool) -> Result<Vec<EvalReport>> {
    if expert {
        return Ok(vec![eval_one(ctx, None)?]);
    }
    if let Some(m) = mode {
        let r = eval_one(ctx, Some(m))?;
        gate(ctx, &r)?;
        return Ok(vec![r]);
    }
    let trained: Vec<RewardKind> = RewardKind::ALL
        .into_iter()
        .filter(|m| ctx.path(&checkpoint_file(*m)).exists())
        .collect();
    if trained.is_empty() {
        anyhow::bail!("no checkpoints in {}; run train first", ctx.out.display());
    }
    let reports = trained
        .into_iter()
        .map(|m| eval_one(ctx, Some(m)))
        .collect::<Result<Vec<_>>>()?;
    let ranked = compare_baselines(reports);
    let mut text = String::from("rank\tmethod\tfeas_percent\tc_bar\tkappa_max\tkappa_min\tkappa_aver\n");
    for (i, r) in ranked.iter().enumerate() {
        let k = r.kappa.map_or([f64::NAN; 3], |k| [k.max, k.min, k.aver]);
        text += &format!(
            "{}\t{}\t{:.2}\t{:.6e}\t{:.4}\t{:.4}\t{:.4}\n",
            i + 1,
            r.method,
            r.feas_percent,
            r.c_bar,
            k[0],
            k[1],
            k[2]
        );
    }
    write_atomic(&ctx.path(COMPARISON), text.as_bytes())?;
    for r in &ranked {
        gate(ctx, r)?;
    }
    Ok(ranked)
}

/// Decision-time benchmark on the test split. Uses the trained actor of
/// `mode` when present, otherwise an untrained one of the same shape.
pub fn bench(ctx: &Context, mode: RewardKind) -> Result<TimingBlock> {
    let mut env = build_env(ctx, Split::Test, mode)?;
    let actor = match load_checkpoint(ctx, mode) {
        Ok(ck) => ck.actor,
        Err(_) => fresh_checkpoint(ctx, &env).actor,
    };
    let t = timing_benchmark(&mut env, &actor, ctx.cfg.eval.reps)?;
    let text = format!(
        "t_expert_s\tt_powerflow_s\tt_actor_s\tspeedup\n{:.6e}\t{:.6e}\t{:.6e}\t{:.3}\n",
        t.t_expert, t.t_powerflow, t.t_actor, t.speedup
    );
    write_atomic(&ctx.path(BENCH), text.as_bytes())?;
    Ok(t)
}
