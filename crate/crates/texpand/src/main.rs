use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use texpand::generator::FeatureTap;
use texpand::synthesis::{
    diversify, expand_repeated, stress_test, transfer, DiversifyMode, ExpansionJob,
    LoadedGenerator,
};
use texpand::trainer::{self, TrainState, TrainingConfig};
use texpand::{Error, ImagePlane, Result};

#[derive(Parser)]
#[command(name = "texpand", about = "Train and run texture-expansion generators", version)]
struct Cli {
    /// Seed for all randomized operations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/discriminator pair on one exemplar.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Double an image one or more times with a trained generator.
    Expand {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        cycles: usize,
    },
    /// Expand a perturbed version of the exemplar.
    Diversify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_parser = ["crop", "shuffle", "noise"])]
        mode: String,
        /// Crop size for mode=crop, "HxW".
        #[arg(long)]
        crop_size: Option<String>,
        /// Tile grid for mode=shuffle, "RxC".
        #[arg(long)]
        grid: Option<String>,
        /// Noise amplitude for mode=noise.
        #[arg(long, default_value_t = 0.1)]
        amplitude: f32,
        #[arg(long, default_value_t = 4)]
        octaves: u32,
        #[arg(long, default_value_t = 0.5)]
        persistence: f64,
    },
    /// Run a guiding image through a trained generator.
    Transfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        guide: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Repeated expand-and-recrop cycles probing generator stability.
    Stress {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Per-cycle outputs are written here as cycle_<i>.png.
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        cycles: usize,
    },
    /// Visualize an intermediate generator activation as a grayscale PNG.
    Features {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// One of: relu, resblock_<i>, conv.
        #[arg(long)]
        layer: String,
        /// Single channel to visualize instead of the channel mean.
        #[arg(long)]
        channel: Option<usize>,
    },
    /// Write a randomly initialized feature-extractor archive.
    MakeExtractor {
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_pair(s: &str, what: &str) -> Result<(usize, usize)> {
    let mut it = s.split('x');
    let parse = |part: Option<&str>| -> Result<usize> {
        part.and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::msg(format!("{what} must look like \"AxB\", got '{s}'")))
    };
    let a = parse(it.next())?;
    let b = parse(it.next())?;
    if it.next().is_some() {
        return Err(Error::msg(format!("{what} must look like \"AxB\", got '{s}'")));
    }
    Ok((a, b))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match cli.command {
        Command::Train { config, resume } => {
            let mut config = TrainingConfig::from_toml_file(&config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let final_ckpt = match resume {
                Some(ckpt) => {
                    let mut state = TrainState::resume_with_config(&ckpt, &config)?;
                    state.config.output_dir = config.output_dir.clone();
                    state.config.checkpoint_every = config.checkpoint_every;
                    state.config.log_every = config.log_every;
                    trainer::train_from(&mut state)?
                }
                None => trainer::train(config)?,
            };
            println!("{}", final_ckpt.display());
        }
        Command::Expand {
            checkpoint,
            input,
            output,
            cycles,
        } => {
            let gen = LoadedGenerator::load(&checkpoint)?;
            let img = ImagePlane::load(&input)?;
            let out = expand_repeated(&gen, &img, &ExpansionJob::new(cycles), &mut rng)?;
            out.save(&output)?;
        }
        Command::Diversify {
            checkpoint,
            input,
            output,
            mode,
            crop_size,
            grid,
            amplitude,
            octaves,
            persistence,
        } => {
            let gen = LoadedGenerator::load(&checkpoint)?;
            let exemplar = ImagePlane::load(&input)?;
            let mode = match mode.as_str() {
                "crop" => {
                    let spec = crop_size
                        .ok_or_else(|| Error::msg("mode=crop requires --crop-size HxW"))?;
                    let (height, width) = parse_pair(&spec, "--crop-size")?;
                    DiversifyMode::Crop { height, width }
                }
                "shuffle" => {
                    let spec =
                        grid.ok_or_else(|| Error::msg("mode=shuffle requires --grid RxC"))?;
                    let (rows, cols) = parse_pair(&spec, "--grid")?;
                    DiversifyMode::Shuffle { rows, cols }
                }
                "noise" => DiversifyMode::Noise {
                    amplitude,
                    octaves,
                    persistence,
                },
                other => return Err(Error::msg(format!("unknown mode '{other}'"))),
            };
            let out = diversify(&gen, &exemplar, &mode, &mut rng)?;
            out.save(&output)?;
        }
        Command::Transfer {
            checkpoint,
            guide,
            output,
        } => {
            let gen = LoadedGenerator::load(&checkpoint)?;
            let guide = ImagePlane::load_guide(&guide)?;
            let out = transfer(&gen, &guide)?;
            out.save(&output)?;
        }
        Command::Stress {
            checkpoint,
            input,
            output_dir,
            cycles,
        } => {
            let gen = LoadedGenerator::load(&checkpoint)?;
            let exemplar = ImagePlane::load(&input)?;
            std::fs::create_dir_all(&output_dir)?;
            let outputs = stress_test(&gen, &exemplar, cycles, &mut rng)?;
            for (i, img) in outputs.iter().enumerate() {
                img.save(output_dir.join(format!("cycle_{}.png", i + 1)))?;
            }
        }
        Command::Features {
            checkpoint,
            input,
            output,
            layer,
            channel,
        } => {
            let gen = LoadedGenerator::load(&checkpoint)?;
            let tap = FeatureTap::parse(&layer, gen.spec.num_resblocks)?;
            let img = ImagePlane::load(&input)?;
            let x = img.to_tensor(&candle_core::Device::Cpu, candle_core::DType::F32)?;
            let vis = texpand::generator::visualize_features(&gen.generator, &x, tap, channel)?;
            // Grayscale map replicated to RGB for saving.
            let mut rgb = ImagePlane::new(3, vis.height(), vis.width());
            for c in 0..3 {
                for y in 0..vis.height() {
                    for x in 0..vis.width() {
                        rgb.set(c, y, x, vis.get(0, y, x));
                    }
                }
            }
            rgb.save(&output)?;
        }
        Command::MakeExtractor { output } => {
            let ex = texpand::vgg::FeatureExtractor::random(
                seed,
                &candle_core::Device::Cpu,
                candle_core::DType::F32,
            )?;
            ex.save(&output)?;
            eprintln!(
                "note: randomly initialized extractor written to {}; for the published \
                 behavior convert the pre-trained weights with scripts/fetch_vgg19.py",
                output.display()
            );
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
        std::process::exit(1);
    }
}
