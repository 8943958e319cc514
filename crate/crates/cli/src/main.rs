use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use smc_core::pipeline::{Pipeline, PlotKind, Preset, RunConfig, Stage};
use smc_core::{Error, Result};

/// Virtual process chain for sheet molding compound: stack generation,
/// molding, fields, surrogate training, virtual specimens and uncertainty
/// report.
#[derive(Parser, Debug)]
#[command(name = "smc-chain", version)]
struct Args {
    /// TOML run configuration, laid over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// generate-stack | mold | fields | train-dmn | test-dmn | specimens | uq-report | all
    #[arg(long, default_value = "all")]
    stage: String,
    /// Added to the run seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// desk | paper-scale
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Only emit plot data of this kind (stress-bands | strength-modulus-scatter | tga-scatter | size-scaling).
    #[arg(long)]
    plot: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn load_config(args: &Args) -> Result<RunConfig> {
    let base = RunConfig::preset(Preset::parse(&args.preset)?);
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text, &base)?
        }
        None => base,
    };
    let cfg = cfg.with_seed_offset(args.seed_offset);
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<()> {
    let cfg = load_config(args)?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let stages = match args.stage.as_str() {
        "all" => Stage::ALL.to_vec(),
        s => vec![Stage::parse(s)?],
    };
    let plot = args.plot.as_deref().map(PlotKind::parse).transpose()?;
    let pipeline = Pipeline::new(cfg, &args.out_dir, args.workers)?;
    log::info!("config hash {}", pipeline.hash);
    if let Some(kind) = plot {
        println!("{}", pipeline.emit_plot_data(kind)?.display());
        return Ok(());
    }
    for stage in stages {
        for line in pipeline.run(stage)? {
            println!("{line}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
