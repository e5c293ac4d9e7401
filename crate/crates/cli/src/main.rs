use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forchup::commands::{self, LayeredQuery, Manifest, Regime, Scale};
use forchup::config::RunConfig;
use forchup::upscaling::Variant;

#[derive(Parser)]
#[command(name = "forchup", version, about = "Upscaling of nonlinear Forchheimer flow in heterogeneous porous media")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a file
    #[arg(long, global = true, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory (default: the config's, else ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Upscaling variant: i, ii, iii or iv
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Write permeability, porosity and Forchheimer coefficient fields
    Generate,
    /// Upscale the fine fields into a coarse model with mobility tables
    Upscale,
    /// Solve the fine or the upscaled problem
    Solve {
        #[arg(long, default_value = "fine")]
        scale: Scale,
        /// steady, transient or basic-profile
        #[arg(long, default_value = "steady")]
        regime: Regime,
    },
    /// Fine against coarse error tables over the configured sweep
    Compare,
    /// Closed-form effective parameters of a layer stack
    Layered {
        /// TOML file with [[layer]] entries
        stack: PathBuf,
        /// Mean pressure-gradient magnitude
        #[arg(long, conflicts_with = "q")]
        xi: Option<f64>,
        /// Total flux across the layers
        #[arg(long)]
        q: Option<f64>,
        /// Stack length along the flow, used with --q
        #[arg(long, default_value_t = 1.0)]
        length: f64,
    },
    /// Productivity indices of both scales and the transient relaxation
    Pi,
}

fn load_config(common: &Common) -> forchup::Result<RunConfig> {
    let mut config = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(w) = common.workers {
        config.workers = Some(w);
    }
    if let Some(v) = common.variant {
        config.upscale.variant = v;
    }
    config.validate()?;
    Ok(config)
}

fn report(manifest: &Manifest) {
    println!("{} finished; config hash {}", manifest.command, manifest.config_hash);
    for o in &manifest.outputs {
        println!("  wrote {o}");
    }
    if let Ok(s) = serde_json::to_string_pretty(&manifest.summary) {
        println!("{s}");
    }
}

fn run(cli: Cli) -> forchup::Result<()> {
    if let Command::Layered { stack, xi, q, length } = &cli.command {
        let stack = commands::parse_stack(&forchup::io::read(stack)?)?;
        let query = match (xi, q) {
            (Some(xi), _) => LayeredQuery::Gradient(*xi),
            (None, Some(q)) => LayeredQuery::Flux { q: *q, length: *length },
            (None, None) => LayeredQuery::None,
        };
        print!("{}", commands::layered(&stack, query)?);
        return Ok(());
    }
    let config = load_config(&cli.common)?;
    let out = commands::output_dir(cli.common.out.clone(), &config);
    let manifest = match cli.command {
        Command::Generate => commands::generate(&config, &out)?,
        Command::Upscale => commands::upscale(&config, &out)?,
        Command::Solve { scale, regime } => commands::solve(&config, &out, scale, regime)?,
        Command::Compare => commands::compare(&config, &out)?,
        Command::Pi => commands::pi(&config, &out)?,
        Command::Layered { .. } => unreachable!(),
    };
    report(&manifest);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
