use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use braidmap::harness::{self, ExperimentSpec, Format, Procedure, ResultRow};
use braidmap::protocol::build_factory;
use braidmap::{FactoryConfig, ReusePolicy};

#[derive(Parser)]
#[command(name = "braidmap", version, about = "Map and simulate block-code magic-state distillation factories")]
struct Cli {
    /// Experiment config (TOML); supplies algorithm parameters to every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; stdout when omitted for single-artifact commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "line")]
    procedure: String,
    #[arg(long, global = true, value_enum, default_value = "off")]
    reuse: OnOff,
    /// Write the per-braid simulation trace as CSV.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the factory circuit.
    Gen(Point),
    /// Emit the placement chosen by a procedure.
    Map(Point),
    /// Map and simulate one factory.
    Sim(Point),
    /// Run the sweep described by --config.
    Sweep,
    /// Correlate layout metrics with latency over random mappings.
    Corr {
        #[command(flatten)]
        point: Point,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Volume ratios between two procedures of a results.json table.
    Compare {
        /// results.json written by `sweep`.
        results: PathBuf,
        #[arg(long, default_value = "line")]
        baseline: String,
        #[arg(long, default_value = "hs")]
        target: String,
    },
}

#[derive(clap::Args)]
struct Point {
    #[arg(short, long, default_value_t = 2)]
    k: usize,
    #[arg(short, long, default_value_t = 1)]
    levels: usize,
}

fn procedure(name: &str) -> Result<Procedure> {
    match Procedure::from_name(name) {
        Some(p) => Ok(p),
        None => bail!("unknown procedure `{name}` (expected Random, Line, FD, GP or HS)"),
    }
}

fn output(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seeds = vec![s];
    }
    let seed = spec.seeds[0];
    let reuse = match cli.reuse {
        OnOff::On => ReusePolicy::Reuse,
        OnOff::Off => ReusePolicy::NoReuse,
    };
    let out = cli.out.as_deref();
    let config = |p: &Point| -> FactoryConfig { spec.config(p.k, p.levels, reuse, seed) };

    match &cli.command {
        Command::Gen(p) => {
            let cfg = config(p);
            cfg.validate()?;
            output(out, "circuit.txt", &build_factory(&cfg)?.to_text())?;
        }
        Command::Map(p) => {
            let mapped = harness::map_factory(&config(p), procedure(&cli.procedure)?, &spec.params)?;
            let mut mapping = mapped.mapping;
            mapping.midpoints = mapped.hints;
            output(out, "mapping.txt", &mapping.to_text())?;
        }
        Command::Sim(p) => {
            let cfg = config(p);
            let mapped = harness::map_factory(&cfg, procedure(&cli.procedure)?, &spec.params)?;
            let sim = braidmap::meshsim::SimParams { trace: cli.trace, ..spec.params.sim.clone() };
            let report = harness::simulate_mapped(&cfg, &mapped, &sim)?;
            let summary = format!(
                "grid {}x{}\nlatency {}\narea {}\nvolume {}\nphysical_volume {:.6e}\nstalls {}\nround_latencies {:?}\npermutation_latencies {:?}\ncritical_path {}\n",
                report.width,
                report.height,
                report.latency,
                report.area,
                report.volume,
                report.physical_volume.unwrap_or(f64::NAN),
                report.stalls,
                report.round_latencies,
                report.permutation_latencies,
                braidmap::igraph::critical_path(&mapped.circuit),
            );
            output(out, "sim.txt", &summary)?;
            if cli.trace {
                let dir = out.unwrap_or(Path::new("."));
                output(Some(dir), "trace.csv", &report.trace_csv())?;
            }
        }
        Command::Sweep => {
            if cli.config.is_none() {
                log::warn!("no --config given, sweeping the default single-point spec");
            }
            let rows = harness::run(&spec)?;
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| spec.out_dir.clone());
            for format in [Format::Csv, Format::Json, Format::PlotData] {
                for path in harness::emit(&rows, format, &dir)? {
                    println!("{}", path.display());
                }
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} of {} cells failed", rows.len());
            }
        }
        Command::Corr { point, samples } => {
            let n = samples.unwrap_or(spec.corr_samples);
            let report = harness::correlation_study(point.k, point.levels, n, seed, &spec.params.sim)?;
            output(out, "correlation.txt", &report.to_text())?;
        }
        Command::Compare { results, baseline, target } => {
            let text = fs::read_to_string(results).with_context(|| format!("reading {}", results.display()))?;
            let rows: Vec<ResultRow> = serde_json::from_str(&text).with_context(|| format!("parsing {}", results.display()))?;
            let cmp = harness::compare(&rows, procedure(baseline)?, procedure(target)?);
            output(out, "compare.txt", &cmp.to_text())?;
        }
    }
    Ok(())
}
