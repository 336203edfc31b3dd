//! `sylva`: headless missions, offline analysis, the live service, replay and reports.

mod serve;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sylva_core::analysis::AnalysisParams;
use sylva_core::io::{export_world, read_json, write_json};
use sylva_core::metrics::{reports_table, MissionReport};
use sylva_core::mission::{
    analyze_cloud_file, clean_world_config, drift_study, evaluate_inventory, m1_config, m7_config,
    replay, run_mission, AutoPolicy, DriftStudyParams, MissionConfig,
};
use sylva_core::par::Execution;
use sylva_core::sim::generate_world;

/// Environment variable holding the log filter, e.g. `SYLVA_LOG=debug`.
const LOG_ENV: &str = "SYLVA_LOG";

#[derive(Parser)]
#[command(name = "sylva", version, about = "Synthetic-forest mission workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated missions and worlds.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Runs ground filtering, segmentation and reconstruction on one PLY cloud.
    Analyze {
        ply: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with analysis parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Hosts the WebSocket wire protocol around one mission.
    Serve {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop once the mission has ended and its outputs are written.
        #[arg(long)]
        exit_on_end: bool,
    },
    /// Re-emits a JSON-lines event log, to stdout or to one WebSocket client.
    Replay {
        log: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        port: Option<u16>,
        /// Emit as fast as possible instead of at the scaled timestamps.
        #[arg(long)]
        no_pace: bool,
    },
    /// Prints mission reports (report.json files or output directories) as one table.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Seeded studies.
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Runs a mission headless to completion.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Skip writing payload clouds.
        #[arg(long)]
        no_payloads: bool,
    },
    /// Writes the ground-truth world as a labelled PLY cloud plus a tree list.
    World {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        spacing: f64,
    },
}

#[derive(Subcommand)]
enum StudyCommand {
    /// Final-node error with and without loop closures over a range of seeds.
    Drift {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigSource {
    /// Mission config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config used when no file is given.
    #[arg(long, value_enum, default_value_t = Preset::M7)]
    preset: Preset,
    /// Overrides the mission and world seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    M7,
    M1,
    Clean,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Off,
    Rescue,
}

impl ConfigSource {
    fn load(&self) -> Result<MissionConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                MissionConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => match self.preset {
                Preset::M7 => m7_config(0),
                Preset::M1 => m1_config(0),
                Preset::Clean => clean_world_config(0),
            },
        };
        if let Some(seed) = self.seed {
            let mut world = cfg.world_spec()?;
            world.seed = seed;
            cfg.world = Some(world);
            cfg.world_path = None;
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sim(SimCommand::Run {
            source,
            out,
            policy,
            no_payloads,
        }) => sim_run(source.load()?, out, policy, no_payloads),
        Command::Sim(SimCommand::World {
            source,
            out,
            spacing,
        }) => {
            let cfg = source.load()?;
            let world = generate_world(&cfg.world_spec()?)?;
            let (ply, trees) = export_world(&world, &out, spacing)?;
            println!(
                "{} trees; cloud {}; trees {}",
                world.trees.len(),
                ply.display(),
                trees.display()
            );
            Ok(())
        }
        Command::Analyze { ply, out, params } => {
            let params: AnalysisParams = match params {
                Some(p) => read_json(&p)?,
                None => AnalysisParams::default(),
            };
            let (inv, paths) = analyze_cloud_file(&ply, &params, &out)?;
            println!(
                "{} trees, {} with DBH; marteloscope {}",
                inv.len(),
                inv.reconstructed().count(),
                paths.csv.display()
            );
            Ok(())
        }
        Command::Serve {
            source,
            port,
            bind,
            speed,
            out,
            exit_on_end,
        } => {
            let mut cfg = source.load()?;
            if out.is_some() {
                cfg.output = out;
            }
            serve::serve(
                cfg,
                serve::ServeOptions {
                    bind: format!("{bind}:{port}"),
                    speed,
                    exit_on_end,
                },
            )
        }
        Command::Replay {
            log,
            speed,
            port,
            no_pace,
        } => match port {
            Some(port) => serve::serve_replay(&log, speed, !no_pace, port),
            None => {
                use std::io::Write;
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                let res = replay(&log, speed, !no_pace, |m| {
                    writeln!(lock, "{}", m.to_json())
                        .map_err(|e| sylva_core::Error::io("<stdout>", e))
                })?;
                if let Some(w) = res.truncated {
                    eprintln!(
                        "warning: log truncated ({w}); replayed {} messages",
                        res.messages.len()
                    );
                }
                Ok(())
            }
        },
        Command::Report { paths } => {
            let mut reports = Vec::new();
            for p in paths {
                let file = if p.is_dir() { p.join("report.json") } else { p };
                let text = std::fs::read_to_string(&file)
                    .with_context(|| format!("reading {}", file.display()))?;
                reports.push(
                    MissionReport::from_json(&text)
                        .with_context(|| format!("parsing {}", file.display()))?,
                );
            }
            print!("{}", reports_table(&reports));
            Ok(())
        }
        Command::Study(StudyCommand::Drift { seeds, out }) => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let trials = drift_study(&seeds, &DriftStudyParams::default(), Execution::default())?;
            println!(
                "{:>5} {:>12} {:>12} {:>6}",
                "seed", "open [m]", "closed [m]", "loops"
            );
            for t in &trials {
                println!(
                    "{:>5} {:>12.3} {:>12.3} {:>6}",
                    t.seed, t.error_without, t.error_with, t.loop_edges
                );
            }
            let better = trials
                .iter()
                .filter(|t| t.error_with < t.error_without)
                .count();
            println!(
                "loop closures reduce the final error in {better} of {} seeds",
                trials.len()
            );
            if let Some(p) = out {
                write_json(&p, &trials)?;
            }
            Ok(())
        }
    }
}

fn sim_run(
    mut cfg: MissionConfig,
    out: Option<PathBuf>,
    policy: Option<PolicyArg>,
    no_payloads: bool,
) -> Result<()> {
    if let Some(p) = policy {
        cfg.policy = match p {
            PolicyArg::Off => AutoPolicy::Off,
            PolicyArg::Rescue => AutoPolicy::default(),
        };
    }
    if out.is_some() {
        cfg.output = out;
    }
    if cfg.output.is_some() && !no_payloads {
        cfg.write_payloads = true;
    }
    if cfg.survey.is_none() {
        bail!("the config defines no survey; use `serve` to define one interactively");
    }
    let started = std::time::Instant::now();
    let output = run_mission(cfg.clone())?;
    let wall = started.elapsed().as_secs_f64();
    print!("{}", output.report.to_text());
    let eval = evaluate_inventory(&output.inventory, &output.world.trees, 1.0, 0.02);
    println!(
        "ground truth: {} trees, {} detected, {} false positives, DBH within 2 cm: {}",
        eval.truth_trees,
        eval.detected,
        eval.false_positives,
        eval.dbh_fraction
            .map_or("-".into(), |f| format!("{:.0}%", 100.0 * f))
    );
    println!("wall clock: {wall:.1} s");
    if let Some(dir) = &cfg.output {
        write_json(&dir.join("evaluation.json"), &eval)?;
        println!("outputs in {}", display_dir(dir));
    }
    Ok(())
}

fn display_dir(p: &Path) -> String {
    p.display().to_string()
}
