use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mhinv_core::experiments::{
    generate_data, invert_from_file, preset, results_csv, run_preset, write_data, ExperimentConfig, Rational,
    Scale, PRESETS,
};
use mhinv_core::microstructure::ModelKind;
use mhinv_core::Error;

#[derive(Parser)]
#[command(name = "mhinv", version, about = "Multiscale forward models and microstructure inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Full experiment configuration (JSON); with --preset, overrides merged onto it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "desk")]
    scale: String,
    /// First seed; multi-seed presets keep their seed count.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate fine-mesh data for the first model of a configuration.
    Forward {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Invert a data file written by `forward`.
    Invert {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a named preset and write its tables and manifest.
    Preset {
        name: String,
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON object of configuration overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated ε values, e.g. 1/10,1/20,1/40.
        #[arg(long, value_delimiter = ',')]
        eps_list: Option<Vec<String>>,
        /// Comma-separated model labels, e.g. A,B.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// List the available presets.
    ListPresets,
}

fn read_json(path: &Path) -> Result<serde_json::Value, Error> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
}

fn with_seed(cfg: ExperimentConfig, seed: Option<u64>) -> ExperimentConfig {
    match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    }
}

fn resolve(source: &Source) -> Result<ExperimentConfig, Error> {
    let cfg = match (&source.preset, &source.config) {
        (Some(name), overrides) => {
            let base = preset(name, source.scale.parse::<Scale>()?)?;
            match overrides {
                Some(path) => base.with_overrides(&read_json(path)?)?,
                None => base,
            }
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            ExperimentConfig::from_json(&text).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(Error::Configuration("give --config or --preset".into())),
    };
    Ok(with_seed(cfg, source.seed))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::ListPresets => {
            for p in PRESETS {
                println!("{:<22} {}", p.name, p.summary);
            }
        }
        Command::Forward { source, out } => {
            let cfg = resolve(&source)?;
            std::fs::create_dir_all(&out)?;
            let data = generate_data(&cfg, cfg.seeds[0])?;
            let json = out.join("data.json");
            let csv = write_data(&data, &json)?;
            eprintln!("wrote {} and {} ({} values)", json.display(), csv.display(), data.len());
        }
        Command::Invert { data, source, out } => {
            let cfg = resolve(&source)?;
            let rows = invert_from_file(&data, &cfg, cfg.seeds[0])?;
            let table = results_csv(&rows);
            std::fs::create_dir_all(&out)?;
            let path = out.join("inversion.csv");
            std::fs::write(&path, &table)?;
            print!("{table}");
            eprintln!("wrote {}", path.display());
        }
        Command::Preset { name, scale, seed, config, eps_list, models, out } => {
            let mut cfg = preset(&name, scale.parse()?)?;
            if let Some(path) = config {
                cfg = cfg.with_overrides(&read_json(&path)?)?;
            }
            let mut extra = serde_json::Map::new();
            if let Some(list) = eps_list {
                let values: Vec<Rational> = list.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
                extra.insert("sweep".into(), serde_json::to_value(values)?);
            }
            if let Some(list) = models {
                let kinds: Vec<ModelKind> = list
                    .iter()
                    .map(|s| s.parse().map_err(|e: Error| Error::Configuration(e.to_string())))
                    .collect::<Result<_, _>>()?;
                extra.insert("models".into(), serde_json::to_value(kinds)?);
            }
            if !extra.is_empty() {
                cfg = cfg.with_overrides(&serde_json::Value::Object(extra))?;
            }
            let cfg = with_seed(cfg, seed);
            let (_, manifest) = run_preset(&cfg, &out)?;
            for f in &manifest.files {
                println!("{}", out.join(f).display());
            }
            eprintln!("{} finished in {:.1}s", manifest.preset, manifest.seconds);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalFailure(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(n) = std::env::var("MHINV_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("mhinv: could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("mhinv: MHINV_THREADS must be a positive integer, got '{n}'");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mhinv: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
