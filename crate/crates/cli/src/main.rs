use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcad::fusion::FusionStrategy;
use pcad::pipeline::commands::{
    cmd_eval, cmd_score, cmd_shapes, cmd_synthesize, cmd_train_experts, cmd_train_iaf,
};
use pcad::pipeline::RunConfig;
use pcad::shapes::{BenchmarkConfig, ShapeKind};
use pcad::{Error, Result};

#[derive(Parser)]
#[command(name = "pcad", version, about = "Point-cloud anomaly detection with two experts and learned fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags below override it.
    #[arg(long, env = "PCAD_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory holding all artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Base settings used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Benchmark,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Iaf,
    Max,
    Add,
    Linear,
}

impl From<Fusion> for FusionStrategy {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::Iaf => FusionStrategy::Iaf,
            Fusion::Max => FusionStrategy::Max,
            Fusion::Add => FusionStrategy::Add,
            Fusion::Linear => FusionStrategy::Linear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Sphere,
    Plane,
    Torus,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the SDF expert and build the dual memory bank.
    TrainExperts {
        #[command(flatten)]
        common: Common,
        /// Directory of anomaly-free training clouds.
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Generate the labeled synthetic anomaly set from the training clouds.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train the fusion networks on expert scores of the synthetic set.
    TrainIaf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score one cloud and write per-point and object scores as JSON.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Also write a top-down SVG colored by the fused score.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
    },
    /// Evaluate a labeled test manifest and write the metrics report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Test set manifest.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
        /// One report row per fusion strategy.
        #[arg(long)]
        all_fusions: bool,
    },
    /// Write a procedural benchmark split (training clouds and a labeled test set).
    Shapes {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        shape: Shape,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        train_clouds: Option<usize>,
        #[arg(long)]
        test_clouds: Option<usize>,
    },
}

fn load_config(common: &Common, edit: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => match common.preset {
            Preset::Default => RunConfig::default(),
            Preset::Benchmark => RunConfig::benchmark(),
        },
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    edit(&mut config);
    let config = config.resolved();
    config.validate()?;
    Ok(config)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::TrainExperts { common, train } => {
            let config = load_config(&common, |c| {
                if train.is_some() {
                    c.train_dir = train;
                }
            })?;
            print_json(&cmd_train_experts(&config, &common.out)?)?;
        }
        Command::Synthesize { common, train, samples } => {
            let config = load_config(&common, |c| {
                if train.is_some() {
                    c.train_dir = train;
                }
                if let Some(n) = samples {
                    c.synthesis.n_samples = n;
                }
            })?;
            let manifest = cmd_synthesize(&config, &common.out)?;
            println!("{} samples, label histogram {:?}", manifest.entries.len(), manifest.label_histogram);
        }
        Command::TrainIaf {
            common,
            margin,
            lambda,
            epochs,
        } => {
            let config = load_config(&common, |c| {
                if let Some(m) = margin {
                    c.iaf.margin = m;
                }
                if let Some(l) = lambda {
                    c.iaf.lambda = l;
                }
                if let Some(e) = epochs {
                    c.iaf.epochs = e;
                }
            })?;
            let report = cmd_train_iaf(&config, &common.out)?;
            if let Some(last) = report.history.last() {
                print_json(last)?;
            }
        }
        Command::Score {
            common,
            input,
            svg,
            fusion,
        } => {
            let config = load_config(&common, |c| {
                if let Some(f) = fusion {
                    c.fusion = f.into();
                }
            })?;
            let out = cmd_score(&config, &common.out, &input, svg.as_deref())?;
            println!("object score {}", out.object_score);
        }
        Command::Eval {
            common,
            test,
            fusion,
            all_fusions,
        } => {
            let config = load_config(&common, |c| {
                if test.is_some() {
                    c.test_manifest = test;
                }
                if let Some(f) = fusion {
                    c.fusion = f.into();
                }
            })?;
            let strategies = if all_fusions {
                FusionStrategy::ALL.to_vec()
            } else {
                vec![config.fusion]
            };
            let reports = cmd_eval(&config, &common.out, &strategies)?;
            print!("{}", pcad::metrics::reports_to_csv(&reports)?);
            let undefined: Vec<&String> = reports.iter().flat_map(|r| &r.errors).collect();
            if !undefined.is_empty() {
                for e in undefined {
                    eprintln!("undefined metric: {e}");
                }
                return Ok(ExitCode::from(3));
            }
        }
        Command::Shapes {
            common,
            shape,
            points,
            train_clouds,
            test_clouds,
        } => {
            let config = load_config(&common, |_| {})?;
            let mut bench = BenchmarkConfig::default();
            if let Some(p) = points {
                bench.shape.points = p;
            }
            if let Some(n) = train_clouds {
                bench.train_clouds = n;
            }
            if let Some(n) = test_clouds {
                bench.test_clouds = n;
            }
            let kind = match shape {
                Shape::Sphere => ShapeKind::Sphere,
                Shape::Plane => ShapeKind::Plane,
                Shape::Torus => ShapeKind::Torus,
            };
            let manifest = cmd_shapes(kind, &bench, &config, &common.out)?;
            println!(
                "{} training clouds in {}, {} test clouds in {}",
                bench.train_clouds,
                common.out.join("train").display(),
                manifest.entries.len(),
                Path::new(&common.out).join("test").display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
