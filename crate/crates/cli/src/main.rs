use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use sift_core::crn::layer_table;
use sift_core::harness::{
    cmd_enhance, cmd_eval, cmd_features, cmd_simulate, describe_container, EnhanceMode,
    EvalOptions, ExperimentConfig,
};
use sift_core::spatial::FeatureKind;
use sift_core::Error;

const ANGLES: &str = "Angles: 0° points along +x from the array centre and grows counterclockwise \
in the horizontal plane. Targets are drawn from 0°..180° at 1 m, interferers from 180°..360° \
at 1.5 m, in a 4 × 4 × 3 m room with the array at (2, 2, 1.5).";

#[derive(Parser)]
#[command(name = "sift", version, about = "Multichannel target-speaker sifting toolkit", after_help = ANGLES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize reverberant two-talker mixtures.
    #[command(after_help = ANGLES)]
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export network input planes and reference magnitudes for every clip.
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Enhance every clip of a dataset.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// network, oracle-irm or identity.
        #[arg(long, default_value = "network")]
        mode: EnhanceMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score noisy and enhanced signals and write report.csv / report.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Enhanced directories produced by `enhance`; repeatable.
        #[arg(long = "enhanced")]
        enhanced: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write coherence plane images.
        #[arg(long)]
        plots: bool,
    },
    /// Print the resolved configuration and the network layer table, or
    /// describe a weight, embedding or feature file.
    Info {
        #[command(flatten)]
        common: Common,
        file: Option<PathBuf>,
    },
}

/// Flags mirror the configuration file; a flag overrides the file.
#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target_dir: Option<PathBuf>,
    #[arg(long)]
    interference_dir: Option<PathBuf>,
    /// uca:<radius>:<count>, ula:<spacing>:<count> or mics:x,y,z;...; repeatable.
    #[arg(long = "geometry")]
    geometries: Vec<String>,
    /// Comma-separated SNR list in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snrs: Option<Vec<f64>>,
    #[arg(long)]
    clip_seconds: Option<f64>,
    /// Clips per geometry.
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// none, g-lstsc, gl-lstsc or ipd.
    #[arg(long)]
    feature: Option<FeatureKind>,
    #[arg(long)]
    t60: Option<f64>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// A d-vector file or a directory of <speaker>.dvec files.
    #[arg(long)]
    embedding: Option<PathBuf>,
    #[arg(long)]
    encoder_weights: Option<PathBuf>,
    /// External PESQ executable, called as `<bin> +16000 ref.wav deg.wav`.
    #[arg(long)]
    pesq: Option<PathBuf>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(self) -> sift_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        set!(snrs => snrs_db, clip_seconds => clip_seconds, clips => clips, seed => seed,
             feature => feature, workers => workers);
        if let Some(t60) = self.t60 {
            cfg.room.t60 = t60;
        }
        if !self.geometries.is_empty() {
            cfg.geometries = self.geometries;
        }
        for (flag, slot) in [
            (self.target_dir, &mut cfg.target_dir),
            (self.interference_dir, &mut cfg.interference_dir),
            (self.weights, &mut cfg.weights),
            (self.embedding, &mut cfg.embedding),
            (self.encoder_weights, &mut cfg.encoder_weights),
            (self.pesq, &mut cfg.pesq_binary),
        ] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> sift_core::Result<()> {
    match cli.command {
        Command::Simulate { common, out } => {
            let manifest = cmd_simulate(&common.resolve()?, &out)?;
            println!("{} clips written to {}", manifest.clips.len(), out.display());
        }
        Command::Features { common, dataset } => {
            let paths = cmd_features(&common.resolve()?, &dataset)?;
            println!("{} feature files written", paths.len());
        }
        Command::Enhance {
            common,
            dataset,
            mode,
            out,
        } => {
            let scores = cmd_enhance(&common.resolve()?, &dataset, mode, &out)?;
            println!("{} clips enhanced into {}", scores.len(), out.display());
        }
        Command::Eval {
            common,
            dataset,
            enhanced,
            out,
            plots,
        } => {
            let report = cmd_eval(
                &common.resolve()?,
                &dataset,
                &enhanced,
                &out,
                &EvalOptions { plots },
            )?;
            print!("{}", report.rows_csv());
        }
        Command::Info { common, file } => match file {
            Some(path) => print!("{}", describe_container(&path)?),
            None => {
                let cfg = common.resolve()?;
                cfg.validate()?;
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                println!();
                for row in layer_table(cfg.feature.plane_count()) {
                    println!("{:<12} {:<20} {:<18} {}", row.layer, row.input, row.hyper, row.output);
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
