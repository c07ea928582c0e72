use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;

use hspr_core::experiment::{
    ablate, ablation_table, confusion_from_spec, standard_benchmark, Benchmark, BenchmarkSpec, Sweep,
    BENCHMARK_CONFUSION, BENCHMARK_VISUAL_NOISE,
};
use hspr_core::fusion::{BalancePolicy, FusionMode};
use hspr_core::kb::{load_kb, KbBuildConfig, DEFAULT_TOP_K};
use hspr_core::metrics::{NeMode, SUCCESS_THRESHOLD};
use hspr_core::par;
use hspr_core::pipeline;
use hspr_core::reasoner::ReasonerConfig;
use hspr_core::scene::load_scene_dir;
use hspr_core::sim::{AgentConfig, PerceptionConfig, Policy};
use hspr_core::synth::{load_episodes, GeneratorConfig};
use hspr_core::HsprError;

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(
    name = "hspr",
    version,
    about = "Proximity-reasoning navigation: KB building, simulation and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count region and object proximity over a scene directory and write a KB.
    BuildKb {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, default_value_t = par::default_parallelism())]
        parallel: usize,
    },
    /// Generate synthetic scenes from a generator KB.
    GenScenes {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = GeneratorConfig::default().region_count)]
        regions: usize,
        #[arg(long, default_value_t = GeneratorConfig::default().extra_region_links)]
        extra_links: usize,
        #[arg(long, default_value_t = par::default_parallelism())]
        parallel: usize,
    },
    /// Sample navigation episodes for every scene in a directory.
    GenEpisodes {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        per_scene: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "episodes.json")]
        out: PathBuf,
    },
    /// Run a policy over an episode manifest and write trajectories as JSON lines.
    Run {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, default_value = "hspr")]
        policy: Policy,
        #[command(flatten)]
        agent: AgentArgs,
        #[arg(long, default_value = "traj.jsonl")]
        out: PathBuf,
        /// Record per-step score tables and map snapshots.
        #[arg(long)]
        trace: bool,
    },
    /// Score trajectories and write report.json and report.txt.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value = "geodesic")]
        ne: NeMode,
        #[arg(long, default_value_t = SUCCESS_THRESHOLD)]
        threshold: f64,
    },
    /// Sweep reasoning steps or fusion variants and print a metrics table.
    Ablate {
        /// `steps=1..5`, `steps=1,3` or `fusion=average,dynamic,residual`.
        #[arg(long)]
        sweep: Sweep,
        /// Use scenes from a directory instead of the built-in benchmark.
        #[arg(long, requires_all = ["kb", "episodes"])]
        scenes: Option<PathBuf>,
        #[arg(long, requires = "scenes")]
        kb: Option<PathBuf>,
        #[arg(long, requires = "scenes")]
        episodes: Option<PathBuf>,
        /// Built-in benchmark size.
        #[arg(long, default_value_t = 100, conflicts_with = "scenes")]
        bench_scenes: usize,
        #[arg(long, default_value_t = 2024, conflicts_with = "scenes")]
        bench_seed: u64,
        #[command(flatten)]
        agent: AgentArgs,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long, default_value = "residual")]
    fusion: FusionMode,
    #[arg(long, default_value_t = 3)]
    steps: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// `fixed:<c>`, `visited` or `logistic:<bias>,<w1>,<w2>`.
    #[arg(long, default_value = "fixed:0.5")]
    beta: BalancePolicy,
    /// `identity`, `eps:<level>[:sampled|:distribution]` or a confusion JSON file.
    /// Defaults to identity for `run` and to the benchmark confusion for `ablate`.
    #[arg(long)]
    confusion: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    object_noise: f64,
    /// Standard deviation of the visual-score noise.
    #[arg(long)]
    visual_noise: Option<f64>,
    #[arg(long, default_value_t = 15)]
    max_actions: usize,
    /// Score local nodes by proximity alone, without the visual term.
    #[arg(long)]
    proximity_only_local: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = par::default_parallelism())]
    parallel: usize,
}

impl AgentArgs {
    fn build(&self, n_types: usize, confusion: &str, visual_noise: f64) -> Result<AgentConfig, HsprError> {
        let mut perception = PerceptionConfig::oracle(n_types);
        perception.confusion = confusion_from_spec(self.confusion.as_deref().unwrap_or(confusion), n_types)?;
        perception.object_noise = self.object_noise;
        perception.visual.noise_sd = self.visual_noise.unwrap_or(visual_noise);
        let mut agent = AgentConfig::new(perception, self.seed);
        agent.reasoner = ReasonerConfig {
            gamma: self.gamma,
            beam: self.beam,
            feasibility_tau: self.tau,
            ..ReasonerConfig::with_steps(self.steps)
        };
        agent.fusion_mode = self.fusion;
        agent.beta_policy = self.beta.clone();
        agent.proximity_only_local = self.proximity_only_local;
        agent.max_actions = self.max_actions;
        agent.validate()?;
        Ok(agent)
    }
}

fn build_timestamp() -> u64 {
    match std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        Some(t) => t,
        None => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    }
}

fn require_dir(path: &Path) -> Result<(), HsprError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(HsprError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "directory does not exist"),
        ))
    }
}

/// A failed command: the message printed to stderr and the exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<HsprError> for Failure {
    fn from(e: HsprError) -> Self {
        Failure {
            code: if e.is_input_error() { EXIT_INPUT } else { EXIT_INTERNAL },
            message: e.to_string(),
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::BuildKb {
            scenes,
            out,
            top_k,
            parallel,
        } => {
            require_dir(&scenes)?;
            let config = KbBuildConfig {
                top_k,
                built_at_unix: build_timestamp(),
            };
            let kb = pipeline::build_kb(&scenes, &config, &out, parallel)?;
            info!("wrote {} ({} scenes)", out.display(), kb.provenance.scene_count);
        }
        Command::GenScenes {
            kb,
            n,
            seed,
            out,
            regions,
            extra_links,
            parallel,
        } => {
            let generator = GeneratorConfig {
                region_count: regions,
                extra_region_links: extra_links,
                ..GeneratorConfig::default()
            };
            let scenes = pipeline::gen_scenes(&kb, &generator, n, seed, &out, parallel)?;
            info!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Command::GenEpisodes {
            scenes,
            per_scene,
            seed,
            out,
        } => {
            require_dir(&scenes)?;
            let episodes = pipeline::gen_episodes(&scenes, per_scene, seed, &out)?;
            info!("wrote {} episodes to {}", episodes.len(), out.display());
        }
        Command::Run {
            scenes,
            kb,
            episodes,
            policy,
            agent,
            out,
            trace,
        } => {
            require_dir(&scenes)?;
            let n_types = load_kb(&kb)?.n_types();
            let mut config = agent.build(n_types, "identity", 0.0)?;
            config.trace = trace;
            info!("agent: {}", config.describe());
            let summary = pipeline::run(&scenes, &kb, &episodes, &config, policy, agent.parallel, &out)?;
            info!("wrote {} trajectories to {}", summary.written, out.display());
            if let Some((_, first)) = summary.failures.first() {
                for (episode, e) in &summary.failures {
                    eprintln!("error: episode {episode}: {e}");
                }
                return Err(Failure {
                    code: if first.is_input_error() {
                        EXIT_INPUT
                    } else {
                        EXIT_INTERNAL
                    },
                    message: format!(
                        "{} of {} episodes failed",
                        summary.failures.len(),
                        summary.failures.len() + summary.written
                    ),
                });
            }
        }
        Command::Eval {
            scenes,
            episodes,
            traj,
            out,
            ne,
            threshold,
        } => {
            require_dir(&scenes)?;
            let report = pipeline::eval(&scenes, &episodes, &traj, threshold, ne, &out)?;
            print!("{}", report.to_text());
        }
        Command::Ablate {
            sweep,
            scenes,
            kb,
            episodes,
            bench_scenes,
            bench_seed,
            agent,
            out,
        } => {
            let bench = match (scenes, kb, episodes) {
                (Some(scenes), Some(kb), Some(episodes)) => {
                    require_dir(&scenes)?;
                    Benchmark {
                        kb: load_kb(&kb)?,
                        scenes: load_scene_dir(&scenes)?,
                        episodes: load_episodes(&episodes)?,
                    }
                }
                _ => {
                    let spec = BenchmarkSpec {
                        seed: bench_seed,
                        scenes: bench_scenes,
                        ..BenchmarkSpec::default()
                    };
                    standard_benchmark(&spec, agent.parallel)?
                }
            };
            let base = agent.build(
                bench.kb.n_types(),
                &format!("eps:{BENCHMARK_CONFUSION}"),
                BENCHMARK_VISUAL_NOISE,
            )?;
            let rows = ablate(&bench, &base, &sweep, agent.parallel)?;
            let table = ablation_table(&sweep, &rows);
            print!("{table}");
            if let Some(out) = out {
                std::fs::write(&out, &table).map_err(|e| HsprError::io(&out, e))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HSPR_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
