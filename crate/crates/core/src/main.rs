use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flexural_revival::config::{self, ConfigError, Engine, RunConfig};
use flexural_revival::pipeline::{self, RunError};

#[derive(Parser)]
#[command(name = "revival", version, about = "Wave-packet revivals in flexural plate cavities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured engine and write all artifacts.
    Simulate {
        #[command(flatten)]
        opts: Overrides,
        /// Also diagonalize the cavity and write the level-spacing report.
        #[arg(long)]
        spectrum: bool,
    },
    /// Eigenfrequencies excited by the source and their spacing report.
    Eigen {
        #[command(flatten)]
        opts: Overrides,
    },
    /// Envelope and revival analysis of an existing movie dump.
    Analyze {
        /// Directory holding movie.hdr and movie.f32.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run a built-in experiment.
    Preset {
        /// center, diagonal-third, arbitrary, membrane or simply-supported-oracle
        name: String,
        #[command(flatten)]
        opts: Overrides,
        /// Skip the eigen decomposition.
        #[arg(long)]
        no_spectrum: bool,
        /// Print the preset's config and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Modal sum against finite differences on a simply supported plate.
    Compare {
        #[command(flatten)]
        opts: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set source.carrier_hz=300e3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    carrier_hz: Option<f64>,
    #[arg(long)]
    t_end_s: Option<f64>,
    #[arg(long)]
    map_points: Option<usize>,
}

impl Overrides {
    fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig, RunError> {
        if let Some(path) = &self.config {
            cfg = RunConfig::from_toml(&fs::read_to_string(path)?)?;
        }
        for item in &self.set {
            let (key, value) = item.split_once('=').ok_or_else(|| ConfigError::Override {
                key: item.clone(),
                reason: "expected KEY=VALUE".to_string(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(engine) = self.engine {
            cfg.engine = engine;
        }
        if let Some(f) = self.carrier_hz {
            cfg.source.carrier_hz = f;
        }
        if let Some(t) = self.t_end_s {
            cfg.grid.t_end_s = t;
        }
        if let Some(n) = self.map_points {
            cfg.grid.map_points = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_spectrum(cfg: &RunConfig) -> Result<String, RunError> {
    let sp = pipeline::spectrum(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut f = fs::File::create(cfg.output_dir.join("spacing.csv"))?;
    sp.report.write_csv(&mut f)?;
    if let Some(es) = &sp.eigen {
        let mut f = fs::File::create(cfg.output_dir.join("eigen.csv"))?;
        es.write_table(&cfg.source, &mut f)?;
    }
    let r = &sp.report;
    Ok(format!(
        "modes: {}\nq: {:.2} Hz\n1/q: {:.2} us\nmax deviation: {:.4}\ncommensurable: {}\n",
        sp.frequencies_hz.len(),
        r.quantum_hz,
        r.revival_time_s * 1e6,
        r.max_deviation,
        r.commensurable
    ))
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Simulate { opts, spectrum } => {
            let cfg = opts.apply(RunConfig::default())?;
            print!("{}", pipeline::run(&cfg, spectrum)?.summary);
        }
        Command::Eigen { opts } => {
            let cfg = opts.apply(RunConfig::default())?;
            print!("{}", write_spectrum(&cfg)?);
        }
        Command::Analyze { input, opts } => {
            let cfg = opts.apply(RunConfig::default())?;
            print!("{}", pipeline::analyze_dump(&cfg, &input)?.1);
        }
        Command::Preset {
            name,
            opts,
            no_spectrum,
            print_config,
        } => {
            let cfg = opts.apply(config::preset(&name)?)?;
            if print_config {
                print!("{}", cfg.to_toml()?);
                return Ok(());
            }
            print!("{}", pipeline::run(&cfg, !no_spectrum)?.summary);
        }
        Command::Compare { opts } => {
            let mut cfg = opts.apply(RunConfig::default())?;
            if opts.engine.is_none() {
                cfg.engine = Engine::Modal;
            }
            let report = pipeline::compare_engines(&cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            fs::write(cfg.output_dir.join("compare.txt"), report.text())?;
            print!("{}", report.text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
