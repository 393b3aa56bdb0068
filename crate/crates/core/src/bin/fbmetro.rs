use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use feedback_metrology::env::{serve, serve_socket, serve_vectorized, EpisodeConfig};
use feedback_metrology::experiment::{
    cmd_compare, cmd_single, cmd_sweep, write_outputs, Analysis, ExperimentConfig, SweepAxis,
};
use feedback_metrology::Result;

#[derive(Parser)]
#[command(name = "fbmetro", version, about = "Frequency metrology with a monitored squeezed mode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    horizon_steps: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
    /// none | open_loop | neural:<path>
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated strategies for compare and sweep.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    dt: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(n) = self.n_traj {
            cfg.n_traj = n;
        }
        if let Some(h) = self.horizon_steps {
            cfg.horizon_steps = h;
        }
        if let Some(s) = self.stride {
            cfg.stride = s;
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = s.clone();
        }
        if let Some(s) = &self.strategies {
            cfg.strategies = s.clone();
        }
        if let Some(dt) = self.dt {
            cfg.params.dt = dt;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Stdio,
    Socket,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Chi,
    Eta,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analyses listed in the config's `outputs` (default: trace, fisher).
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated analyses overriding `outputs`.
        #[arg(long, value_delimiter = ',')]
        outputs: Option<Vec<String>>,
    },
    /// Effective QFI curves for several strategies plus a merged table.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Histograms of squeezing perpendicular to the first moments.
    HistPerp {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated sample times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Ensemble mean of |r| over time.
    MeanAbsR {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Feedback frequency traces with ensemble mean and spread.
    OmegaFb {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        traces: Option<usize>,
    },
    /// Per-trajectory perpendicular squeezing, |r| and homodyne information at one time.
    Scatter {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        time: Option<f64>,
    },
    /// Final homodyne Fisher information relative to the QFI.
    FinalHomodyne {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Effective QFI curves over grids of chi and/or eta.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "both")]
        axis: Axis,
    },
    /// Environment server for an external trainer.
    Serve {
        /// TOML episode config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of lockstep environments; omit for a scalar session.
        #[arg(long)]
        vec: Option<usize>,
        #[arg(long, value_enum, default_value = "stdio")]
        transport: Transport,
        #[arg(long, default_value_t = 5555)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn run_batch(cfg: &ExperimentConfig, files: Result<Vec<feedback_metrology::experiment::OutputFile>>) -> Result<()> {
    for path in write_outputs(cfg, &files?)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { run, outputs } => {
            let mut cfg = run.load()?;
            if let Some(o) = outputs {
                cfg.outputs = o.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            let analyses = cfg.outputs.clone();
            run_batch(&cfg, cmd_single(&cfg, &analyses))
        }
        Command::Compare { run } => {
            let cfg = run.load()?;
            run_batch(&cfg, cmd_compare(&cfg))
        }
        Command::HistPerp { run, times } => {
            let mut cfg = run.load()?;
            if times.is_some() {
                cfg.sample_times = times;
            }
            run_batch(&cfg, cmd_single(&cfg, &[Analysis::HistPerp]))
        }
        Command::MeanAbsR { run } => {
            let cfg = run.load()?;
            run_batch(&cfg, cmd_single(&cfg, &[Analysis::MeanAbsR]))
        }
        Command::OmegaFb { run, traces } => {
            let mut cfg = run.load()?;
            if let Some(n) = traces {
                cfg.n_traces = n;
            }
            run_batch(&cfg, cmd_single(&cfg, &[Analysis::OmegaFb]))
        }
        Command::Scatter { run, time } => {
            let mut cfg = run.load()?;
            if time.is_some() {
                cfg.scatter_time = time;
            }
            run_batch(&cfg, cmd_single(&cfg, &[Analysis::Scatter]))
        }
        Command::FinalHomodyne { run } => {
            let cfg = run.load()?;
            run_batch(&cfg, cmd_single(&cfg, &[Analysis::FinalHomodyne]))
        }
        Command::Sweep { run, axis } => {
            let cfg = run.load()?;
            let axes: &[SweepAxis] = match axis {
                Axis::Chi => &[SweepAxis::Chi],
                Axis::Eta => &[SweepAxis::Eta],
                Axis::Both => &[SweepAxis::Chi, SweepAxis::Eta],
            };
            run_batch(&cfg, cmd_sweep(&cfg, axes))
        }
        Command::Serve { config, vec, transport, port, host } => {
            let episode = match config {
                Some(path) => EpisodeConfig::load(&path)?,
                None => EpisodeConfig::default(),
            };
            match transport {
                Transport::Stdio => {
                    let reader = BufReader::new(io::stdin().lock());
                    let writer = io::stdout().lock();
                    match vec {
                        Some(n) => serve_vectorized(reader, writer, episode, n),
                        None => serve(reader, writer, episode),
                    }
                }
                Transport::Socket => {
                    let addr = format!("{host}:{port}");
                    let listener = TcpListener::bind(&addr)
                        .map_err(|e| feedback_metrology::Error::Config(format!("cannot bind {addr}: {e}")))?;
                    match listener.local_addr() {
                        Ok(local) => eprintln!("listening on {local}"),
                        Err(_) => eprintln!("listening on {addr}"),
                    }
                    serve_socket(listener, episode, vec)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
