use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use eqxai::data_synth::{generate, save};
use eqxai::harness::{
    self, boxplot_svg, correlation_rows, quantile_rows, render_report, sweep_svg, write_rows_csv, Experiment,
    ExperimentConfig,
};
use eqxai::robustness_metrics::{MetricKind, RobustnessReport};

/// Measure how explanations of symmetry-invariant models respond to the
/// symmetries.
#[derive(Parser)]
#[command(name = "eqxai", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML). Without one, defaults for --dataset apply.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dataset used when no config file is given.
    #[arg(long, default_value = "ecg_like")]
    dataset: String,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::for_dataset(&self.dataset)?,
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EnforceArgs {
    /// Comma-separated enforcement sample sizes, e.g. 1,2,4,8,16,32.
    #[arg(long, value_delimiter = ',')]
    enforce_n_inv: Option<Vec<usize>>,
    #[arg(long)]
    enforce_seed: Option<u64>,
    /// Comma-separated explainer names to wrap, e.g. cav_equiv.
    #[arg(long, value_delimiter = ',')]
    enforce_methods: Option<Vec<String>>,
}

impl EnforceArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(n) = &self.enforce_n_inv {
            cfg.enforce.n_inv = n.clone();
        }
        if let Some(s) = self.enforce_seed {
            cfg.enforce.seed = s;
        }
        if let Some(m) = &self.enforce_methods {
            cfg.enforce.methods = m.clone();
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the default config for a dataset.
    Init {
        #[arg(default_value = "ecg_like")]
        dataset: String,
    },
    /// Generate the dataset and write it to <out>/dataset.eqx.
    Synth(ConfigArg),
    /// Train every configured model and write its checkpoints.
    Train(ConfigArg),
    /// Run the full method × metric grid and write all reports.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        enforce: EnforceArgs,
    },
    /// Run only the enforcement sweep.
    EnforceSweep {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        enforce: EnforceArgs,
    },
    /// Compute max-sensitivity and its correlation with equivariance.
    Sensitivity(ConfigArg),
    /// Summarize report CSVs: mean ± CI, verdict grid and drift.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write a box-plot SVG here.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn create_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            // Library errors already embed their source in the message, so
            // skip chain links that repeat the previous one.
            let mut msg = e.to_string();
            let mut last = msg.clone();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !last.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
                last = c;
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    harness::init_threads()?;
    match cli.command {
        Command::Init { dataset } => {
            print!("{}", ExperimentConfig::for_dataset(&dataset)?.to_toml());
        }
        Command::Synth(args) => {
            let cfg = args.load()?;
            let data = generate(&cfg.dataset_spec()?)?;
            create_dir(&cfg)?;
            let path = cfg.output_dir.join("dataset.eqx");
            save(&data, &path)?;
            println!("wrote {} ({} train, {} test)", path.display(), data.train.len(), data.test.len());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let exp = Experiment::prepare(cfg.clone())?;
            let dir = cfg.output_dir.join("models");
            exp.save_models(&dir)?;
            for m in &exp.models {
                println!("{}: test accuracy {:.4}, {} checkpoints", m.model.kind(), m.test_accuracy, m.checkpoints.len());
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval { config, enforce } => {
            let mut cfg = config.load()?;
            enforce.apply(&mut cfg)?;
            let out = harness::run(&cfg)?;
            print!("{}", render_report(&out.report.rows));
            println!("outputs in {}", cfg.output_dir.display());
            if !out.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::EnforceSweep { config, enforce } => {
            let mut cfg = config.load()?;
            enforce.apply(&mut cfg)?;
            if cfg.enforce.n_inv.is_empty() {
                bail!("no sweep sizes; pass --enforce-n-inv or set [enforce] n_inv");
            }
            let exp = Experiment::prepare(cfg.clone())?;
            let sweep = exp.enforce_sweep()?;
            create_dir(&cfg)?;
            write_rows_csv(&cfg.output_dir.join("sweep.csv"), &sweep)?;
            std::fs::write(cfg.output_dir.join("sweep.svg"), sweep_svg(&sweep))?;
            for r in &sweep {
                println!("{} {} n_inv={:<4} mean {:.6} ± {:.6}", r.model, r.method, r.n_inv, r.mean, r.ci95);
            }
        }
        Command::Sensitivity(args) => {
            let mut cfg = args.load()?;
            cfg.methods.example.clear();
            cfg.methods.concept.clear();
            if cfg.methods.feature.is_empty() {
                bail!("sensitivity needs at least one feature method");
            }
            cfg.metrics.model_invariance = false;
            let exp = Experiment::prepare(cfg.clone())?;
            let sens = exp.sensitivity()?;
            let equiv = exp.evaluate()?;
            let mut rows = sens.rows.clone();
            rows.extend(equiv.rows.iter().filter(|r| r.metric == MetricKind::Equiv).cloned());
            let corr = correlation_rows(&rows)?;
            create_dir(&cfg)?;
            sens.save(&cfg.output_dir.join("sensitivity.csv"))?;
            equiv.save(&cfg.output_dir.join("report.csv"))?;
            write_rows_csv(&cfg.output_dir.join("correlation.csv"), &corr)?;
            for c in &corr {
                let r = c.pearson_r.map_or("undefined (constant metric)".to_string(), |r| format!("{r:.4}"));
                println!("{} {} n={} pearson r {r}", c.model, c.method, c.n);
            }
        }
        Command::Report { csv, svg } => {
            let mut all = RobustnessReport::new();
            for p in &csv {
                let r = RobustnessReport::load(p).with_context(|| format!("reading {}", p.display()))?;
                all.extend(r.rows);
            }
            if all.rows.is_empty() {
                bail!("no rows in {} file(s)", csv.len());
            }
            print!("{}", render_report(&all.rows));
            if let Some(path) = svg {
                std::fs::write(&path, boxplot_svg(&quantile_rows(&all.rows)))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if harness::verdicts(&all.summary()).iter().any(|v| !v.holds()) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
