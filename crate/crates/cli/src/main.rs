//! `nclp`: split datasets, train encoders, evaluate link prediction, sweep
//! grids, time methods and export similarity histograms.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nclp::graph::write_dataset;
use nclp::linkpred::write_histogram_csv;
use nclp::methods::Method;
use nclp::params::ParamSet;
use nclp::pipeline::{
    benchmark, evaluate_params, export_histogram, make_split, records_for, run_pipeline, train_encoder,
    write_bench_csv, write_curve_csv, Experiment, MetricLog, RunConfig, DEFAULT_HIST_BINS,
};
use nclp::splits::Setting;
use nclp::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "nclp", version, about = "Graph encoders for link prediction")]
struct Cli {
    /// Single kernel thread (overrides NCGL_THREADS).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a transductive or inductive split file.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "transductive")]
        setting: SettingArg,
        #[arg(long, default_value_t = nclp::pipeline::DEFAULT_FRAC)]
        frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder and write its checkpoint and loss curve.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV (default: next to the checkpoint).
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit a decoder on a frozen checkpoint (unless it has one) and append metric records.
    Eval {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metric log (JSON lines, appended).
        #[arg(long)]
        out: PathBuf,
        /// Also write the checkpoint with its decoder here.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Run every grid cell and seed of a config.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time methods per epoch and in total.
    Bench {
        #[command(flatten)]
        exp: ExpArgs,
        /// Comma-separated methods (default: all).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine-similarity histogram of test pairs under a checkpoint.
    ExportHist {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HIST_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset with the size of a known one.
    Synth {
        #[arg(long, default_value = "citeseer")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SettingArg {
    Transductive,
    Inductive,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Transductive => Setting::Transductive,
            SettingArg::Inductive => Setting::Inductive,
        }
    }
}

/// Where the experiment comes from: a config file, flags, or both (flags win).
#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    setting: Option<SettingArg>,
    /// Use 10,000 SSL epochs by default.
    #[arg(long)]
    paper_epochs: bool,
}

impl ExpArgs {
    fn run_config(&self, need_method: bool) -> anyhow::Result<RunConfig> {
        let mut cfg = match (&self.config, &self.dataset) {
            (Some(p), _) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            (None, Some(d)) => RunConfig::new(d, self.method.unwrap_or(Method::Bgrl)),
            (None, None) => bail!(Usage("either --config or --dataset is required".into())),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(m) = self.method {
            cfg.method = m;
        } else if need_method && self.config.is_none() {
            bail!(Usage("--method is required without --config".into()));
        }
        if let Some(s) = &self.split {
            cfg.split = Some(s.clone());
        }
        if let Some(s) = self.setting {
            cfg.setting = s.into();
        }
        cfg.paper_epochs |= self.paper_epochs;
        Ok(cfg)
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn make_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    make_parent(path)?;
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Split {
            dataset,
            setting,
            frac,
            seed,
            out,
        } => {
            let (g, _) = nclp::graph::load_dataset(&dataset)?;
            let split = make_split(&g, setting.into(), seed, frac)?;
            split.validate(&g)?;
            make_parent(&out)?;
            split.save(&out)?;
            println!(
                "train {} valid {} test {} inference {} -> {}",
                split.train.len(),
                split.valid_pos.len(),
                split.test_pos.len(),
                split.inference.len(),
                out.display()
            );
        }
        Cmd::Train {
            exp,
            seed,
            out,
            curve,
            epochs,
        } => {
            let cfg = exp.run_config(true)?;
            let mut tcfg = cfg.train_config(&[], seed)?;
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            let experiment = Experiment::load(&cfg)?;
            let result = train_encoder(&experiment, &tcfg)?;
            make_parent(&out)?;
            result.model.online.save(&out)?;
            let curve = curve.unwrap_or_else(|| out.with_extension("loss.csv"));
            write_curve_csv(create(&curve)?, &result.curve)?;
            let last = result.curve.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "{} epochs {} (kept epoch {}), final loss {last:.6} -> {}",
                tcfg.method,
                result.curve.len(),
                result.best_epoch,
                out.display()
            );
        }
        Cmd::Eval {
            exp,
            checkpoint,
            seed,
            out,
            save,
        } => {
            let cfg = exp.run_config(true)?;
            let experiment = Experiment::load(&cfg)?;
            let params = ParamSet::<f32>::load_file(&checkpoint)?;
            let eval = evaluate_params(&experiment, &params, &cfg.decoder, seed)?;
            let hash = cfg.config_hash(&cfg.train_config(&[], seed)?)?;
            let ckpt = match &save {
                Some(p) => {
                    make_parent(p)?;
                    eval.params.save(p)?;
                    p.clone()
                }
                None => checkpoint.clone(),
            };
            make_parent(&out)?;
            let mut log = MetricLog::append(&out)?;
            for r in records_for(&experiment, cfg.method, seed, &hash, &ckpt, &eval) {
                log.write(&r)?;
                println!("{:<12} {:<14} {:.4}", r.bucket, r.metric, r.value);
            }
        }
        Cmd::Sweep { exp, out_dir } => {
            let cfg = exp.run_config(true)?;
            let report = run_pipeline(&cfg, &out_dir, &mut |line| eprintln!("{line}"))?;
            let best = report.best();
            println!(
                "best {} {}: valid hits@50 {:.4}, test hits@50 {:.4} ± {:.4}",
                best.config_hash,
                serde_json::Value::Object(best.overrides.clone()),
                best.mean_valid_hits,
                best.mean_test_hits,
                best.std_test_hits
            );
        }
        Cmd::Bench {
            exp,
            methods,
            epochs,
            runs,
            out,
        } => {
            let cfg = exp.run_config(false)?;
            let methods: Vec<Method> = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods
                    .iter()
                    .map(|m| m.parse::<Method>().map_err(|e| Usage(e.to_string())))
                    .collect::<Result<_, _>>()?
            };
            let experiment = Experiment::load(&cfg)?;
            let rows = benchmark(&experiment, &cfg, &methods, epochs, runs)?;
            write_bench_csv(create(&out)?, &rows)?;
            write_bench_csv(std::io::stdout().lock(), &rows)?;
        }
        Cmd::ExportHist {
            exp,
            checkpoint,
            bins,
            out,
        } => {
            let cfg = exp.run_config(false)?;
            let experiment = Experiment::load(&cfg)?;
            let params = ParamSet::<f32>::load_file(&checkpoint)?;
            let hist = export_histogram(&experiment, &params, bins)?;
            write_histogram_csv(create(&out)?, &hist)?;
            println!("{} bins -> {}", hist.len(), out.display());
        }
        Cmd::Synth { preset, seed, out } => {
            let cfg = SynthConfig::preset(&preset, seed).map_err(|e| Usage(e.to_string()))?;
            let (g, x, _) = generate(&cfg)?;
            write_dataset(&out, &g, &x)?;
            println!("{} nodes, {} edges, {} features -> {}", g.num_nodes(), g.num_edges(), x.cols(), out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.downcast_ref::<nclp::Error>() {
        if err.is_numeric() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.deterministic && !nclp::parallel::init_threads(1) {
        eprintln!("error: kernel pool already started");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
