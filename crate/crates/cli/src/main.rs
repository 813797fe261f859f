use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cfmm::channel::{LinkBudget, MorphologyKind, MorphologyTable};
use cfmm::eval::{self, FlopComparison};
use cfmm::gnn::Checkpoint;
use cfmm::maxmin::BisectionConfig;
use cfmm::train::{self, RunPaths, ScenarioTag, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "cfmm", version, about = "Max-min power control for cell-free massive MIMO")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// TOML file overriding the morphology table ([urban], [suburban], [rural]).
    #[arg(long, global = true, value_name = "FILE")]
    morphology_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw fading realizations and label them with the optimal powers.
    GenData {
        /// Comma-separated `<M>x<K>:<morphology>` list.
        #[arg(long)]
        scenarios: String,
        /// Realizations per scenario.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the realizations without solving them.
        #[arg(long)]
        unlabeled: bool,
    },
    /// Label (or relabel) every realization of a dataset.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint plus per-epoch files next to it.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML training configuration (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an epoch checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Spectral-efficiency CDFs and percentile losses per scenario.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report_dir: PathBuf,
    },
    /// Instrumented inference FLOPs over a grid of sizes.
    Flops {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated `<M>x<K>` list.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "urban")]
        morphology: MorphologyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also count one full bisection solve per size.
        #[arg(long)]
        with_solver: bool,
    },
}

enum Failure {
    Usage(String),
    Runtime(cfmm::Error),
}

impl From<cfmm::Error> for Failure {
    fn from(e: cfmm::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn existing(path: &Path) -> Outcome<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Usage(format!("no such file: {}", path.display())))
    }
}

fn usage<T>(r: cfmm::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_grid(spec: &str) -> Outcome<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parsed = item
            .to_ascii_lowercase()
            .split_once('x')
            .and_then(|(m, k)| Some((m.parse::<usize>().ok()?, k.parse::<usize>().ok()?)));
        match parsed {
            Some((m, k)) if m > 0 && k > 0 => out.push((m, k)),
            _ => return Err(Failure::Usage(format!("bad grid entry {item:?}, expected <M>x<K>"))),
        }
    }
    if out.is_empty() {
        return Err(Failure::Usage("empty grid".into()));
    }
    Ok(out)
}

fn file_stem(tag: &str) -> String {
    tag.replace([':', '/'], "_")
}

fn run(cli: Cli) -> Outcome {
    let table = match &cli.morphology_config {
        Some(p) => usage(MorphologyTable::load_overrides(existing(p)?))?,
        None => MorphologyTable::default(),
    };
    let bis = BisectionConfig::default();
    match cli.command {
        Command::GenData {
            scenarios,
            count,
            out,
            seed,
            unlabeled,
        } => {
            let tags = usage(train::parse_scenarios(&scenarios))?;
            let reals = train::draw_realizations(&tags, count, &table, seed)?;
            if unlabeled {
                train::write_realizations(&out, &reals)?;
                log::info!("wrote {} realizations to {}", reals.len(), out.display());
            } else {
                let labeled = train::label_all(&reals, &table, &bis);
                train::write_samples(&out, &labeled.samples)?;
                log::info!(
                    "wrote {} samples to {} ({} skipped)",
                    labeled.samples.len(),
                    out.display(),
                    labeled.skipped.len()
                );
            }
        }
        Command::Solve { input, out } => {
            let reals = usage(train::read_realizations(existing(&input)?))?;
            let labeled = train::label_all(&reals, &table, &bis);
            train::write_samples(&out, &labeled.samples)?;
            log::info!("labeled {} of {} realizations", labeled.samples.len(), reals.len());
        }
        Command::Train {
            data,
            config,
            out,
            resume,
        } => {
            let cfg = match &config {
                Some(p) => usage(TrainConfig::load(existing(p)?))?,
                None => TrainConfig::default(),
            };
            let resume = match &resume {
                Some(p) => Some(Checkpoint::load(existing(p)?)?),
                None => None,
            };
            let samples = usage(train::read_samples(existing(&data)?))?;
            let (train_set, val_set) = train::split_train_val(&samples, cfg.val_fraction, cfg.seed)?;
            let paths = RunPaths::for_checkpoint(&out);
            let result = train::train(&train_set, &val_set, &cfg, Some(&paths), resume.as_ref())?;
            if let Some(last) = result.metrics.last() {
                log::info!(
                    "epoch {}: train loss {:.6e}, best val loss {:?}",
                    last.epoch,
                    last.train_loss,
                    result.best_val_loss
                );
            }
        }
        Command::Eval {
            model,
            data,
            report_dir,
        } => {
            let model = Checkpoint::load(existing(&model)?)?.to_model()?;
            let samples = usage(train::read_samples(existing(&data)?))?;
            let reports = eval::evaluate_by_scenario(&model, &samples, &LinkBudget::default(), &bis)?;
            std::fs::create_dir_all(&report_dir).map_err(|e| cfmm::Error::Io {
                path: report_dir.clone(),
                source: e,
            })?;
            for r in &reports {
                eval::export_cdf_csv(r, &report_dir.join(format!("cdf_{}.csv", file_stem(&r.scenario))))?;
                println!(
                    "{}: loss at median {:.3}%, 95%-likely loss {:.3}%, equal power at median {:.3}%",
                    r.scenario, r.loss_at_median, r.likely95_loss, r.equal_loss_at_median
                );
            }
            eval::export_summary_csv(&reports, &report_dir.join("summary.csv"))?;
            let json = serde_json::to_string_pretty(&reports).map_err(cfmm::Error::from)?;
            let path = report_dir.join("report.json");
            std::fs::write(&path, json).map_err(|e| cfmm::Error::Io { path, source: e })?;
        }
        Command::Flops {
            model,
            grid,
            out,
            morphology,
            seed,
            with_solver,
        } => {
            let sizes = parse_grid(&grid)?;
            let model = Checkpoint::load(existing(&model)?)?.to_model()?;
            let rows: Vec<FlopComparison> = sizes
                .iter()
                .map(|&(m, k)| {
                    let tag = ScenarioTag::new(m, k, morphology);
                    eval::flop_comparison(&model, tag, &table, with_solver.then_some(&bis), seed)
                })
                .collect::<cfmm::Result<_>>()?;
            write_flops(&out, &rows)?;
            if rows.len() >= 2 {
                let x: Vec<f64> = rows.iter().map(FlopComparison::complexity).collect();
                let y: Vec<f64> = rows.iter().map(|r| r.gnn as f64).collect();
                if let Ok((a, b, r2)) = eval::linear_fit(&x, &y) {
                    println!("gnn_flops = {a:.6e} * MK(M+K) + {b:.6e}, R^2 = {r2:.6}");
                }
            }
        }
    }
    Ok(())
}

fn write_flops(path: &Path, rows: &[FlopComparison]) -> cfmm::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["M", "K", "mk_m_plus_k", "gnn_flops", "solver_flops"])?;
    for r in rows {
        w.write_record([
            r.num_aps.to_string(),
            r.num_ues.to_string(),
            format!("{}", r.complexity() as u64),
            r.gnn.to_string(),
            r.solver.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| cfmm::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
