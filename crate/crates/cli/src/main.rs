use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rtopf_cli::commands::{self, CacheStatus};
use rtopf_cli::{exit_code, Context, Overrides};
use rtopf_core::env::RewardKind;

#[derive(Parser)]
#[command(name = "rtopf", about = "Real-time AC-OPF with primal-dual PPO", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// pdppo, penalty or cliff
    #[arg(long, global = true)]
    reward_mode: Option<RewardKind>,
    #[arg(long, global = true)]
    episodes: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate training and test load scenarios.
    GenData,
    /// Solve the expert OPF trajectories (cached by config hash).
    Expert,
    /// Behavior-clone the expert into the actor.
    Pretrain,
    /// Train with the selected reward mode, resuming when possible.
    Train {
        /// Start from a randomly initialized actor.
        #[arg(long)]
        skip_bc: bool,
    },
    /// Score trained methods on the test split.
    Eval {
        /// Score expert replay instead of a trained actor.
        #[arg(long)]
        expert: bool,
    },
    /// Time expert OPF, power flow and actor inference.
    Bench,
}

fn run(cli: Cli) -> Result<()> {
    let Some(config) = &cli.config else {
        return Err(rtopf_cli::Failure::Config("--config <file> is required".into()).into());
    };
    let ov = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        episodes: cli.episodes,
        out: cli.out.clone(),
    };
    let ctx = Context::load(config, &ov)?;
    let mode = cli.reward_mode;
    match cli.cmd {
        Cmd::GenData => {
            commands::gen_data(&ctx)?;
            println!("datasets written to {}", ctx.out.display());
        }
        Cmd::Expert => {
            let status = commands::expert(&ctx)?;
            for (split, s) in ["train", "test"].iter().zip(status) {
                let what = if s == CacheStatus::Reused { "reused cached" } else { "solved" };
                println!("{split}: {what} expert trajectory");
            }
        }
        Cmd::Pretrain => {
            let art = commands::pretrain(&ctx)?;
            println!(
                "behavior cloning on {} samples, final loss {:.3e}",
                art.samples,
                art.losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Train { skip_bc } => {
            let mode = mode.unwrap_or(RewardKind::PdPpo);
            let ck = commands::train(&ctx, mode, skip_bc)?;
            println!(
                "{}: {} episodes, {} updates, lambda {:?}",
                mode.name(),
                ck.episodes_done,
                ck.rounds_done,
                ck.lambda
            );
        }
        Cmd::Eval { expert } => {
            for r in commands::eval(&ctx, mode, expert)? {
                let k = r.kappa.map_or(f64::NAN, |k| k.aver);
                println!(
                    "{}: Feas% {:.2}  C {:.3e}  kappa_aver {:.4}%",
                    r.method, r.feas_percent, r.c_bar, k
                );
            }
        }
        Cmd::Bench => {
            let t = commands::bench(&ctx, mode.unwrap_or(RewardKind::PdPpo))?;
            println!(
                "T_IPS {:.3e} s  T_PF {:.3e} s  T_Actor {:.3e} s  speedup x{:.2}",
                t.t_expert, t.t_powerflow, t.t_actor, t.speedup
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
