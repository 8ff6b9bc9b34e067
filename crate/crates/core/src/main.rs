//! `seisfrac` batch CLI: forward synthesis, geometric reconstruction, FOD
//! recovery, stiffness inversion, chained pipelines and the acceptance
//! suite, driven by structured-text configs or built-in presets.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seisfrac::config::ExperimentConfig;
use seisfrac::pipeline::{
    full_pipeline, reconstruct_geometry, recover_opening, report_to_string, synthesize,
    write_artifacts, PipelineOptions,
};
use seisfrac::{acceptance, io, Result};

#[derive(Parser)]
#[command(
    name = "seisfrac",
    about = "Elastic-wave sensing of heterogeneous fractures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward synthesis only: mesh and (noisy) far-field data.
    Synth(RunArgs),
    /// Synthesis plus geometric reconstruction: indicator map and surface.
    Glsm(RunArgs),
    /// Through FOD recovery over the working surface.
    Fod(RunArgs),
    /// Full chain ending in the stiffness inversion (same as `pipeline`).
    Stiffness(RunArgs),
    /// Full chain: synth, glsm, fod, stiffness, report.
    Pipeline(RunArgs),
    /// Run the acceptance suite and print one pass/fail line per criterion.
    Validate {
        /// Run a single criterion (1-11) instead of all.
        #[arg(long)]
        criterion: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to a structured-text experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: zebra, cheetah, or zebra-mini.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for artifact files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the relative noise level (0 disables noise).
    #[arg(long)]
    noise: Option<f64>,
    /// Use the true fracture surface instead of the reconstructed one.
    #[arg(long)]
    geometry_oracle: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            _ => {
                return Err(seisfrac::Error::Config(
                    "provide exactly one of --config and --preset".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            cfg.noise.seed = seed;
        }
        if let Some(noise) = self.noise {
            cfg.noise.level = noise;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("SEISFRAC_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid SEISFRAC_THREADS={v}"),
        }
    }
}

/// Runs a stage prefix and writes the artifacts that exist at that depth.
fn run_stages(args: &RunArgs, depth: u8) -> Result<()> {
    let cfg = args.load()?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;

    if depth >= 3 {
        // fod and beyond need the full chain anyway; reuse the pipeline
        let opts = PipelineOptions {
            geometry_oracle: args.geometry_oracle,
        };
        let result = full_pipeline(&cfg, &opts)?;
        write_artifacts(&args.out, &cfg, &result)?;
        print!("{}", report_to_string(&result.report)?);
        return Ok(());
    }

    let synth = synthesize(&cfg).map_err(|e| e.in_stage("synth"))?;
    io::write_mesh(&args.out.join("mesh.txt"), &synth.mesh)?;
    io::write_farfield(
        &args.out.join("farfield.txt"),
        cfg.grid.n_theta,
        cfg.grid.n_phi,
        &synth.noisy,
    )?;
    println!(
        "synth: {} excitations, forward residual {:.2e}",
        synth.waves.len(),
        synth.forward_residual_max
    );
    if depth < 2 {
        return Ok(());
    }

    if args.geometry_oracle {
        io::write_mesh(&args.out.join("surface.txt"), &synth.mesh)?;
        println!("glsm: skipped (geometry oracle), surface = true mesh");
    } else {
        let stage = reconstruct_geometry(&cfg, &synth).map_err(|e| e.in_stage("glsm"))?;
        io::write_indicator(
            &args.out.join("indicator.txt"),
            &stage.params.grid,
            &stage.map.values,
        )?;
        io::write_mesh(&args.out.join("surface.txt"), &stage.surface.mesh)?;
        println!(
            "glsm: {} support points, surface fit rms {:.2e}",
            stage.map.values.len(),
            stage.surface.fit_rms
        );
    }
    Ok(())
}

/// The `fod` subcommand without the stiffness stage.
fn run_fod(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.to_toml()?)?;
    let synth = synthesize(&cfg).map_err(|e| e.in_stage("synth"))?;
    io::write_mesh(&args.out.join("mesh.txt"), &synth.mesh)?;
    io::write_farfield(
        &args.out.join("farfield.txt"),
        cfg.grid.n_theta,
        cfg.grid.n_phi,
        &synth.noisy,
    )?;
    let surface = if args.geometry_oracle {
        synth.mesh.clone()
    } else {
        let stage = reconstruct_geometry(&cfg, &synth).map_err(|e| e.in_stage("glsm"))?;
        io::write_indicator(
            &args.out.join("indicator.txt"),
            &stage.params.grid,
            &stage.map.values,
        )?;
        stage.surface.mesh
    };
    io::write_mesh(&args.out.join("surface.txt"), &surface)?;
    let fod = recover_opening(&cfg, &synth, &surface).map_err(|e| e.in_stage("fod"))?;
    io::write_fod(&args.out.join("fod.txt"), &surface, &fod.fod)?;
    println!(
        "fod: Q = {}, achieved discrepancy {:.4}, fallback {}",
        fod.system.q, fod.achieved, fod.fallback
    );
    Ok(())
}

fn validate(criterion: Option<usize>) -> Result<bool> {
    let results = match criterion {
        Some(id) => vec![acceptance::run(id)?],
        None => acceptance::run_all()?,
    };
    let mut all_ok = true;
    for c in &results {
        println!("{}", c.line());
        all_ok &= c.passed;
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(args) => run_stages(args, 1),
        Command::Glsm(args) => run_stages(args, 2),
        Command::Fod(args) => run_fod(args),
        Command::Stiffness(args) | Command::Pipeline(args) => run_stages(args, 3),
        Command::Validate { criterion } => match validate(*criterion) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
