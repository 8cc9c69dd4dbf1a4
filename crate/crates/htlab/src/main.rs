use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use htlab::config::{parse_seed_list, ExperimentConfig, ScenarioKind, ScenarioSection};
use htlab::runner::{cmd_gen, cmd_report, cmd_run, GenArgs};
use htlab::scenario_io::StorageFormat;
use htlab::Error;

/// Holistic transfer experiments: adapt a source classifier using target
/// data from only some of the classes.
#[derive(Parser)]
#[command(name = "htlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario directory.
    Gen(Box<Gen>),
    /// Run every protocol for every seed of a config file.
    Run(Run),
    /// Aggregate a results directory into report.json and a table.
    Report(Report),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Synthetic,
    Paired,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    F64,
    Idx,
}

#[derive(clap::Args)]
struct Gen {
    /// Take the scenario section from this config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    seen: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    pair_overlap: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    source_per_class: Option<usize>,
    #[arg(long)]
    target_train_per_class: Option<usize>,
    #[arg(long)]
    target_test_per_class: Option<usize>,
    #[arg(long)]
    cluster_sep: Option<f64>,
    #[arg(long)]
    class_sigma: Option<f64>,
    #[arg(long)]
    style_angle: Option<f64>,
    #[arg(long)]
    style_shift: Option<f64>,
    #[arg(long)]
    style_noise: Option<f64>,
    #[arg(long, value_enum, default_value = "f64")]
    format: Format,
    #[arg(long, default_value = "scenario")]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Results directory, overriding `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct Report {
    /// Results directory written by `run`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn gen_section(g: &Gen) -> Result<ScenarioSection, Error> {
    let mut s = match &g.config {
        Some(path) => ExperimentConfig::load(path)?.scenario,
        None => ScenarioSection::default(),
    };
    if let Some(k) = g.kind {
        s.kind = match k {
            Kind::Synthetic => ScenarioKind::Synthetic,
            Kind::Paired => ScenarioKind::Paired,
        };
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = g.$f { s.$f = v; } )* };
    }
    set!(
        classes,
        seen,
        pairs,
        pair_overlap,
        dim,
        source_per_class,
        target_train_per_class,
        target_test_per_class,
        cluster_sep,
        class_sigma,
        style_angle,
        style_shift,
        style_noise
    );
    Ok(s)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(g) => {
            let args = GenArgs {
                scenario: gen_section(&g)?,
                seed: g.seed,
                out: g.out.clone(),
                force: g.force,
                format: match g.format {
                    Format::F64 => StorageFormat::F64,
                    Format::Idx => StorageFormat::Idx,
                },
            };
            println!("{}", cmd_gen(&args)?);
        }
        Command::Run(r) => {
            let mut cfg = ExperimentConfig::load(&r.config)?;
            if let Ok(seeds) = std::env::var("HTLAB_SEED") {
                if !seeds.trim().is_empty() {
                    cfg.seeds = parse_seed_list(&seeds)?;
                }
            }
            if let Some(out) = r.out {
                cfg.output_dir = out;
            }
            let jobs = r
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let summary = cmd_run(&cfg, jobs)?;
            for line in &summary.failed {
                eprintln!("FAILED {line}");
            }
            println!(
                "{} runs, {} failed -> {}",
                summary.cells,
                summary.failed.len(),
                summary.out_dir.display()
            );
            if !summary.failed.is_empty() {
                return Err(Error::RunsFailed {
                    failed: summary.failed.len(),
                    total: summary.cells,
                });
            }
        }
        Command::Report(r) => print!("{}", cmd_report(&r.out)?.render()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("htlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
