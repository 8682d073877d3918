//! Inference-time procedures on a trained generator.
//!
//! Plain expansion doubles an image; repeated expansion feeds the generator
//! its own output; the stress test recrops to the original size between
//! cycles; transfer runs an arbitrary guiding image through the generator;
//! diversification perturbs the exemplar (crop, tile shuffle or noise) before
//! expanding. All of these are read-only on the checkpoint.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorSpec};
use crate::image::ImagePlane;
use crate::nn::VarStore;
use crate::noise;
use crate::sampler;
use crate::trainer::TrainingConfig;
use crate::weights;

/// Largest intermediate result allowed during repeated expansion.
pub const DEFAULT_PIXEL_BUDGET: usize = 64_000_000;

/// A generator restored from a training checkpoint, with the checkpoint's
/// file hash retained so callers can assert it was not modified.
pub struct LoadedGenerator {
    pub generator: Generator,
    pub spec: GeneratorSpec,
    pub checkpoint_path: std::path::PathBuf,
    pub checkpoint_sha256: String,
    #[allow(dead_code)]
    vars: VarStore,
    device: Device,
}

impl LoadedGenerator {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let device = Device::Cpu;
        let checkpoint_sha256 = weights::file_sha256(path)?;
        let (tensors, metadata) = weights::load_archive(path, &device)?;
        let config_json = metadata.get("config").ok_or_else(|| Error::ArchiveCorrupt {
            path: path.to_path_buf(),
            reason: "missing config metadata".into(),
        })?;
        let config: TrainingConfig = serde_json::from_str(config_json)?;
        let spec = config.generator;

        let vars = VarStore::new(device.clone(), DType::F32);
        // Initialization values are irrelevant; everything is overwritten.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let generator = Generator::new(&vars, spec, &mut rng)?;
        let gen_tensors: std::collections::BTreeMap<String, Tensor> = tensors
            .iter()
            .filter_map(|(name, t)| {
                name.strip_prefix("generator.").map(|rest| (rest.to_string(), t.clone()))
            })
            .collect();
        if gen_tensors.is_empty() {
            return Err(Error::ArchiveMissingTensor {
                path: path.to_path_buf(),
                name: "generator.*".into(),
            });
        }
        vars.load_tensors(&gen_tensors)?;
        Ok(Self {
            generator,
            spec,
            checkpoint_path: path.to_path_buf(),
            checkpoint_sha256,
            vars,
            device,
        })
    }

    /// Error if the checkpoint file changed since load.
    pub fn verify_checkpoint_unchanged(&self) -> Result<()> {
        let now = weights::file_sha256(&self.checkpoint_path)?;
        if now != self.checkpoint_sha256 {
            return Err(Error::msg(format!(
                "checkpoint {} was modified during synthesis",
                self.checkpoint_path.display()
            )));
        }
        Ok(())
    }

    /// Double the image: h x w in, 2h x 2w out.
    pub fn expand(&self, img: &ImagePlane) -> Result<ImagePlane> {
        let x = img.to_tensor(&self.device, DType::F32)?;
        let y = self.generator.forward(&x, false)?;
        ImagePlane::from_tensor(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropPolicy {
    /// Keep the doubled output as the next cycle's input.
    None,
    /// Crop back to the original input size at a random offset each cycle.
    RecropToOriginal,
}

#[derive(Debug, Clone)]
pub struct ExpansionJob {
    pub cycles: usize,
    pub crop_policy: CropPolicy,
    pub pixel_budget: usize,
}

impl ExpansionJob {
    pub fn new(cycles: usize) -> Self {
        Self {
            cycles,
            crop_policy: CropPolicy::None,
            pixel_budget: DEFAULT_PIXEL_BUDGET,
        }
    }
}

fn check_budget(h: usize, w: usize, budget: usize) -> Result<()> {
    if h * w > budget {
        return Err(Error::PixelBudget {
            height: h,
            width: w,
            budget,
        });
    }
    Ok(())
}

/// Repeated expansion; with `CropPolicy::None` the output is
/// input dims times 2^cycles.
pub fn expand_repeated(
    gen: &LoadedGenerator,
    img: &ImagePlane,
    job: &ExpansionJob,
    rng: &mut impl Rng,
) -> Result<ImagePlane> {
    if job.cycles == 0 {
        return Err(Error::msg("expansion needs at least one cycle"));
    }
    let (orig_h, orig_w) = (img.height(), img.width());
    let mut current = img.clone();
    for _ in 0..job.cycles {
        check_budget(current.height() * 2, current.width() * 2, job.pixel_budget)?;
        let expanded = gen.expand(&current)?;
        current = match job.crop_policy {
            CropPolicy::None => expanded,
            CropPolicy::RecropToOriginal => {
                let row = rng.random_range(0..=expanded.height() - orig_h);
                let col = rng.random_range(0..=expanded.width() - orig_w);
                sampler::crop(&expanded, (row as i64, col as i64), (orig_h, orig_w))?
            }
        };
    }
    Ok(current)
}

/// Repeated expand-then-recrop cycles probing generator stability. Returns
/// the full doubled result of every cycle (before recropping); the recrop is
/// what feeds the next cycle. No weights are touched.
pub fn stress_test(
    gen: &LoadedGenerator,
    exemplar: &ImagePlane,
    cycles: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ImagePlane>> {
    if cycles == 0 {
        return Err(Error::msg("stress test needs at least one cycle"));
    }
    let (h, w) = (exemplar.height(), exemplar.width());
    let mut outputs = Vec::with_capacity(cycles);
    let mut current = exemplar.clone();
    for _ in 0..cycles {
        let expanded = gen.expand(&current)?;
        let row = rng.random_range(0..=expanded.height() - h);
        let col = rng.random_range(0..=expanded.width() - w);
        current = sampler::crop(&expanded, (row as i64, col as i64), (h, w))?;
        outputs.push(expanded);
    }
    gen.verify_checkpoint_unchanged()?;
    Ok(outputs)
}

/// Feed a guiding image through the generator; the result follows the
/// guide's large-scale structure at twice its resolution.
pub fn transfer(gen: &LoadedGenerator, guide: &ImagePlane) -> Result<ImagePlane> {
    gen.expand(guide)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiversifyMode {
    /// Expand a random crop of the given size.
    Crop { height: usize, width: usize },
    /// Shuffle a tile decomposition of the exemplar, then expand.
    Shuffle { rows: usize, cols: usize },
    /// Add seeded gradient noise to the exemplar, then expand.
    Noise {
        amplitude: f32,
        octaves: u32,
        persistence: f64,
    },
}

/// Construct a diversification input from the exemplar and expand it.
pub fn diversify(
    gen: &LoadedGenerator,
    exemplar: &ImagePlane,
    mode: &DiversifyMode,
    rng: &mut impl Rng,
) -> Result<ImagePlane> {
    let input = match mode {
        DiversifyMode::Crop { height, width } => {
            if *height > exemplar.height() || *width > exemplar.width() {
                return Err(Error::CropOutOfBounds {
                    row: 0,
                    col: 0,
                    h: *height,
                    w: *width,
                    img_h: exemplar.height(),
                    img_w: exemplar.width(),
                });
            }
            let row = rng.random_range(0..=exemplar.height() - height);
            let col = rng.random_range(0..=exemplar.width() - width);
            sampler::crop(exemplar, (row as i64, col as i64), (*height, *width))?
        }
        DiversifyMode::Shuffle { rows, cols } => {
            sampler::shuffle_tiles(exemplar, *rows, *cols, rng)?.0
        }
        DiversifyMode::Noise {
            amplitude,
            octaves,
            persistence,
        } => {
            let field = noise::perlin(
                exemplar.height(),
                exemplar.width(),
                rng.random::<u64>(),
                *octaves,
                *persistence,
            )?;
            exemplar.add_noise(&field, *amplitude)?
        }
    };
    gen.expand(&input)
}
