use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use fedcedar::config::{load_config, Algorithm, ExperimentConfig};
use fedcedar::report::{write_csv, RecordSink};
use fedcedar::sim::{RoundRecord, Simulation};
use fedcedar::topology::TopologySpec;

#[derive(Parser)]
#[command(
    name = "fedcedar",
    version,
    about = "Clustered, graph-propagated personalized federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory.
    #[arg(long, env = "FEDCEDAR_OUT", default_value = "results")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(rounds) = self.rounds {
            cfg.rounds = rounds;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write `<algorithm>_seed<seed>.{csv,json}`.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        algorithm: Option<Algorithm>,
    },
    /// Cluster-recovery case study on a topology preset; prints the Rand-index trace.
    CaseStudy {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
        topology: u8,
        /// Cluster count; defaults to the topology's node count.
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long, default_value_t = 200)]
        rounds: usize,
        #[arg(long, default_value_t = 5)]
        period: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "FEDCEDAR_OUT", default_value = "results")]
        out: PathBuf,
    },
    /// Grid over propagation depth P in 1..=5 and cluster count K in 3..=7.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Paired fedcedar and fedavg runs under one seed; prints the accuracy gap.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn run_to_files(
    cfg: &ExperimentConfig,
    out: &Path,
    stem: &str,
) -> Result<Vec<RoundRecord>, Box<dyn std::error::Error>> {
    let mut sink = RecordSink::create(out, stem)?;
    let mut sim = Simulation::new(cfg.clone())?;
    let mut sink_err = None;
    let result = sim.run_with(|r| {
        if sink_err.is_none() {
            sink_err = sink.push(r).err();
        }
    });
    let records = sink.finish(cfg)?;
    if let Some(e) = sink_err {
        return Err(e.into());
    }
    result?;
    Ok(records)
}

fn final_accuracy(records: &[RoundRecord]) -> f64 {
    records.last().map_or(f64::NAN, |r| r.mean_accuracy)
}

fn cmd_run(common: &Common, algorithm: Option<Algorithm>) -> CliResult {
    let mut cfg = common.load()?;
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    cfg.validate()?;
    let stem = format!("{}_seed{}", cfg.algorithm, cfg.master_seed);
    let records = run_to_files(&cfg, &common.out, &stem)?;
    println!(
        "{} rounds, final mean accuracy {:.4}; wrote {}",
        records.len(),
        final_accuracy(&records),
        common.out.join(format!("{stem}.csv")).display()
    );
    Ok(())
}

fn cmd_case_study(
    topology: u8,
    clusters: Option<usize>,
    rounds: usize,
    period: usize,
    seed: Option<u64>,
    out: &Path,
) -> CliResult {
    let nodes = TopologySpec::preset(topology).map_or(1, |t| t.node_count());
    let k = clusters.unwrap_or(nodes);
    let mut cfg = ExperimentConfig::case_study(topology, k, rounds, period);
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    let stem = format!("case_study_topology{topology}_k{k}_seed{}", cfg.master_seed);
    let records = run_to_files(&cfg, out, &stem)?;
    println!("round,rand_index");
    let mut trace = Vec::new();
    for r in &records {
        if let Some(ri) = r.rand_index {
            println!("{},{}", r.round, ri);
            trace.push(ri);
        }
    }
    let min = trace.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "# {} sample points, min {:.4}, final {:.4}; wrote {}",
        trace.len(),
        min,
        trace.last().copied().unwrap_or(f64::NAN),
        out.join(format!("{stem}.csv")).display()
    );
    Ok(())
}

fn cmd_sweep(common: &Common) -> CliResult {
    let base = common.load()?;
    let cells: Vec<(usize, usize)> = (1..=5).flat_map(|p| (3..=7).map(move |k| (p, k))).collect();
    std::fs::create_dir_all(&common.out)?;
    let results = cells
        .par_iter()
        .map(|&(p, k)| {
            let cfg = ExperimentConfig {
                propagation_depth: p,
                cluster_count: k,
                ..base.clone()
            };
            cfg.validate().map_err(|e| e.to_string())?;
            let records = Simulation::new(cfg)
                .and_then(|mut s| s.run())
                .map_err(|e| format!("P={p} K={k}: {e}"))?;
            let path = common.out.join(format!("sweep_p{p}_k{k}.csv"));
            let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            write_csv(&records, file).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok::<_, String>(final_accuracy(&records))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    println!("p,k,final_mean_accuracy");
    for ((p, k), acc) in cells.iter().zip(results) {
        println!("{p},{k},{acc}");
    }
    Ok(())
}

fn cmd_compare(common: &Common) -> CliResult {
    let base = common.load()?;
    let mut finals = Vec::new();
    for algorithm in [Algorithm::Fedcedar, Algorithm::Fedavg] {
        let cfg = ExperimentConfig {
            algorithm,
            ..base.clone()
        };
        cfg.validate()?;
        let stem = format!("compare_{algorithm}_seed{}", cfg.master_seed);
        finals.push(final_accuracy(&run_to_files(&cfg, &common.out, &stem)?));
    }
    println!(
        "fedcedar {:.4}  fedavg {:.4}  gap {:+.2} pp",
        finals[0],
        finals[1],
        100.0 * (finals[0] - finals[1])
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, algorithm } => cmd_run(common, *algorithm),
        Command::CaseStudy {
            topology,
            clusters,
            rounds,
            period,
            seed,
            out,
        } => cmd_case_study(*topology, *clusters, *rounds, *period, *seed, out),
        Command::Sweep { common } => cmd_sweep(common),
        Command::Compare { common } => cmd_compare(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
