//! Alternating adversarial training loop with resumable checkpoints.
//!
//! One iteration performs a discriminator update on (real target, detached
//! fake) followed by a generator update on the flag-masked weighted objective.
//! All randomness flows through a single ChaCha8 stream whose position is
//! serialized into checkpoints, so a resumed run in deterministic mode
//! reproduces an uninterrupted one bit for bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorSpec};
use crate::image::ImagePlane;
use crate::losses::{
    adversarial_losses, bce_toward_one, l1_loss, scalar, style_loss, LossReport, LossWeights,
    StyleLayerSet,
};
use crate::nn::VarStore;
use crate::sampler::sample_block_pair;
use crate::vgg::FeatureExtractor;
use crate::weights;

pub const ADAM_EPS: f64 = 1e-8;
/// Reports retained in the in-memory history and checkpoint metadata.
const HISTORY_TAIL: usize = 100;

fn default_k() -> usize {
    128
}
fn default_total_iterations() -> usize {
    100_000
}
fn default_lr_initial() -> f64 {
    2e-4
}
fn default_lr_constant_until() -> usize {
    50_000
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_batch_size() -> usize {
    1
}
fn default_disc_layers() -> usize {
    6
}
fn default_checkpoint_every() -> usize {
    1000
}
fn default_log_every() -> usize {
    10
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub exemplar: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_total_iterations")]
    pub total_iterations: usize,
    #[serde(default = "default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "default_lr_constant_until")]
    pub lr_constant_until: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub losses: LossWeights,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default = "default_disc_layers")]
    pub discriminator_layers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub extractor: Option<PathBuf>,
    #[serde(default)]
    pub deterministic: bool,
}

impl TrainingConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let config: TrainingConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.as_ref().display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 16 || self.k % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "k must be >= 16 and divisible by 4, got {}",
                self.k
            )));
        }
        if self.lr_constant_until > self.total_iterations {
            return Err(Error::InvalidConfig(format!(
                "lr_constant_until ({}) exceeds total_iterations ({})",
                self.lr_constant_until, self.total_iterations
            )));
        }
        if self.total_iterations == 0 {
            return Err(Error::InvalidConfig("total_iterations must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr_initial > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_initial must be positive, got {}",
                self.lr_initial
            )));
        }
        self.generator.validate()?;
        DiscriminatorSpec {
            num_conv_layers: self.discriminator_layers,
        }
        .validate()?;
        Ok(())
    }

    /// Fields that must match between a checkpoint and a resuming config.
    /// Output and logging cadence may differ.
    fn resume_relevant(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut map = match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => serde_json::Map::new(),
        };
        for key in ["output_dir", "checkpoint_every", "log_every"] {
            map.remove(key);
        }
        map
    }

    pub fn check_resume_compatible(&self, other: &TrainingConfig) -> Result<()> {
        let a = self.resume_relevant();
        let b = other.resume_relevant();
        let differing: Vec<String> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        if differing.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(differing.join(", ")))
        }
    }
}

/// Piecewise-linear learning rate: constant, then linear decay to zero.
pub fn lr_schedule(iteration: usize, config: &TrainingConfig) -> Result<f64> {
    if iteration > config.total_iterations {
        return Err(Error::msg(format!(
            "iteration {iteration} beyond total_iterations {}",
            config.total_iterations
        )));
    }
    if iteration <= config.lr_constant_until {
        return Ok(config.lr_initial);
    }
    let span = (config.total_iterations - config.lr_constant_until) as f64;
    let remaining = (config.total_iterations - iteration) as f64;
    Ok(config.lr_initial * remaining / span)
}

/// Adam with explicit, serializable moment estimates.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    pub t: usize,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, vars: &[(String, Var)], grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, var) in vars {
            let Some(g) = grads.get(var) else { continue };
            // Gradients carry the step's backprop graph; detach so the stored
            // moments do not retain every past iteration's activations.
            let g = g.detach();
            let g = &g;
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let delta = (m_hat * lr)?.div(&(v_hat.sqrt()? + ADAM_EPS)?)?;
            var.set(&var.as_detached_tensor().sub(&delta)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }
}

pub struct TrainState {
    pub config: TrainingConfig,
    pub iteration: usize,
    gen_vs: VarStore,
    pub generator: Generator,
    disc_vs: VarStore,
    pub discriminator: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    /// Effective flags: style is forced off when no extractor is available.
    pub weights: LossWeights,
    extractor: Option<FeatureExtractor>,
    style_layers: StyleLayerSet,
    exemplar: ImagePlane,
    device: Device,
    pub history: Vec<LossReport>,
}

impl TrainState {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let exemplar = ImagePlane::load(&config.exemplar)?;
        if exemplar.height() < 2 * config.k || exemplar.width() < 2 * config.k {
            return Err(Error::ExemplarTooSmall {
                height: exemplar.height(),
                width: exemplar.width(),
                k: config.k,
                min: 2 * config.k,
            });
        }

        let mut weights = config.losses;
        let extractor = if weights.enable_style {
            match &config.extractor {
                Some(path) if path.exists() => Some(FeatureExtractor::load(path, &device)?),
                Some(path) => {
                    eprintln!(
                        "WARNING: feature extractor not found at {}; style loss DISABLED. \
                         Run scripts/fetch_vgg19.py {} to enable it.",
                        path.display(),
                        path.display()
                    );
                    weights.enable_style = false;
                    None
                }
                None => {
                    eprintln!(
                        "WARNING: no extractor configured; style loss DISABLED. Set \
                         `extractor = \"<path>\"` in the config to enable it."
                    );
                    weights.enable_style = false;
                    None
                }
            }
        } else {
            None
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gen_vs = VarStore::new(device.clone(), DType::F32);
        let generator = Generator::new(&gen_vs, config.generator, &mut rng)?;
        let disc_vs = VarStore::new(device.clone(), DType::F32);
        let discriminator = Discriminator::new(
            &disc_vs,
            DiscriminatorSpec {
                num_conv_layers: config.discriminator_layers,
            },
            &mut rng,
        )?;

        let opt_g = Adam::new(config.adam_beta1, config.adam_beta2);
        let opt_d = Adam::new(config.adam_beta1, config.adam_beta2);
        Ok(Self {
            config,
            iteration: 0,
            gen_vs,
            generator,
            disc_vs,
            discriminator,
            opt_g,
            opt_d,
            rng,
            weights,
            extractor,
            style_layers: StyleLayerSet::default(),
            exemplar,
            device,
            history: Vec::new(),
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn sample_batch(&mut self) -> Result<(Tensor, Tensor)> {
        let mut sources = Vec::with_capacity(self.config.batch_size);
        let mut targets = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let pair = sample_block_pair(&self.exemplar, self.config.k, &mut self.rng)?;
            sources.push(pair.source.to_tensor(&self.device, DType::F32)?);
            targets.push(pair.target.to_tensor(&self.device, DType::F32)?);
        }
        Ok((
            Tensor::cat(&sources, 0)?,
            Tensor::cat(&targets, 0)?,
        ))
    }

    /// One alternating update: discriminator first, then generator.
    pub fn step(&mut self) -> Result<LossReport> {
        let lr = lr_schedule(self.iteration, &self.config)?;
        let (source, target) = self.sample_batch()?;

        let fake = self.generator.forward(&source, true)?;

        let mut adv_d = 0.0;
        let mut adv_g = 0.0;
        if self.weights.enable_adv {
            let d_real = self.discriminator.forward(&target, true)?;
            let d_fake = self.discriminator.forward(&fake.detach(), true)?;
            let (loss_d, _) = adversarial_losses(&d_real, &d_fake)?;
            adv_d = scalar(&loss_d)?;
            let grads = loss_d.backward()?;
            self.opt_d.step(&self.disc_vs.trainable_vars(), &grads, lr)?;
        }

        let mut total: Option<Tensor> = None;
        let add = |total: &mut Option<Tensor>, term: Tensor| {
            *total = Some(match total.take() {
                Some(t) => (t + term).expect("loss accumulation"),
                None => term,
            });
        };
        if self.weights.enable_adv {
            let d_fake = self.discriminator.forward(&fake, true)?;
            let loss_g = bce_toward_one(&d_fake)?;
            adv_g = scalar(&loss_g)?;
            add(&mut total, loss_g);
        }
        let mut l1 = 0.0;
        if self.weights.enable_l1 {
            let loss_l1 = l1_loss(&fake, &target)?;
            l1 = scalar(&loss_l1)?;
            add(&mut total, (loss_l1 * self.weights.lambda1)?);
        }
        let mut style = 0.0;
        if self.weights.enable_style {
            let extractor = self.extractor.as_ref().expect("extractor present");
            let loss_style = style_loss(&fake, &target, extractor, &self.style_layers)?;
            style = scalar(&loss_style)?;
            add(&mut total, (loss_style * self.weights.lambda2)?);
        }

        if let Some(total) = total {
            let grads = total.backward()?;
            self.opt_g.step(&self.gen_vs.trainable_vars(), &grads, lr)?;
        }

        self.iteration += 1;
        let mut report = LossReport {
            iteration: self.iteration,
            adv_g,
            adv_d,
            l1,
            style,
            total_g: 0.0,
        };
        report.total_g = report.expected_total(&self.weights);
        let total_g = report.total_g;
        if !report.is_finite() {
            let which = [
                ("adv_d", adv_d),
                ("adv_g", adv_g),
                ("l1", l1),
                ("style", style),
                ("total_g", total_g),
            ]
            .iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n.to_string())
            .unwrap_or_default();
            std::fs::create_dir_all(&self.config.output_dir)?;
            let diag = self.config.output_dir.join("checkpoint_diagnostic.st");
            self.save_checkpoint(&diag)?;
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                which,
                checkpoint: diag,
            });
        }
        self.history.push(report);
        if self.history.len() > HISTORY_TAIL {
            let excess = self.history.len() - HISTORY_TAIL;
            self.history.drain(..excess);
        }
        Ok(report)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tensors = BTreeMap::new();
        for (name, t) in self.gen_vs.all_tensors() {
            tensors.insert(format!("generator.{name}"), t);
        }
        for (name, t) in self.disc_vs.all_tensors() {
            tensors.insert(format!("discriminator.{name}"), t);
        }
        for (prefix, opt) in [("adam_g", &self.opt_g), ("adam_d", &self.opt_d)] {
            for (name, t) in &opt.m {
                tensors.insert(format!("{prefix}.m.{name}"), t.clone());
            }
            for (name, t) in &opt.v {
                tensors.insert(format!("{prefix}.v.{name}"), t.clone());
            }
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("iteration".into(), self.iteration.to_string());
        metadata.insert("adam_g.t".into(), self.opt_g.t.to_string());
        metadata.insert("adam_d.t".into(), self.opt_d.t.to_string());
        metadata.insert("rng.seed".into(), hex::encode(self.rng.get_seed()));
        metadata.insert("rng.word_pos".into(), self.rng.get_word_pos().to_string());
        metadata.insert("rng.stream".into(), self.rng.get_stream().to_string());
        metadata.insert("config".into(), serde_json::to_string(&self.config)?);
        metadata.insert("history".into(), serde_json::to_string(&self.history)?);
        weights::save_archive(path, &tensors, &metadata)?;

        // Human-readable sidecar with everything but the tensors.
        let sidecar = path.with_extension("json");
        let mut doc = serde_json::Map::new();
        for (k, v) in &metadata {
            doc.insert(k.clone(), serde_json::Value::String(v.clone()));
        }
        std::fs::write(&sidecar, serde_json::to_vec_pretty(&doc)?)?;
        Ok(())
    }

    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let device = Device::Cpu;
        let (tensors, metadata) = weights::load_archive(path, &device)?;
        let meta = |key: &str| -> Result<&String> {
            metadata.get(key).ok_or_else(|| Error::ArchiveCorrupt {
                path: path.to_path_buf(),
                reason: format!("missing metadata key '{key}'"),
            })
        };
        let config: TrainingConfig = serde_json::from_str(meta("config")?)?;
        let mut state = TrainState::new(config)?;

        let strip = |prefix: &str| -> BTreeMap<String, Tensor> {
            tensors
                .iter()
                .filter_map(|(name, t)| {
                    name.strip_prefix(prefix).map(|rest| (rest.to_string(), t.clone()))
                })
                .collect()
        };
        state.gen_vs.load_tensors(&strip("generator."))?;
        state.disc_vs.load_tensors(&strip("discriminator."))?;
        state.opt_g.m = strip("adam_g.m.");
        state.opt_g.v = strip("adam_g.v.");
        state.opt_d.m = strip("adam_d.m.");
        state.opt_d.v = strip("adam_d.v.");

        let parse = |s: &String, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::ArchiveCorrupt {
                path: path.to_path_buf(),
                reason: format!("bad {what} '{s}'"),
            })
        };
        state.iteration = parse(meta("iteration")?, "iteration")?;
        state.opt_g.t = parse(meta("adam_g.t")?, "adam_g.t")?;
        state.opt_d.t = parse(meta("adam_d.t")?, "adam_d.t")?;

        let seed_bytes = hex::decode(meta("rng.seed")?).map_err(|e| Error::ArchiveCorrupt {
            path: path.to_path_buf(),
            reason: format!("bad rng seed: {e}"),
        })?;
        let seed: [u8; 32] = seed_bytes.as_slice().try_into().map_err(|_| {
            Error::ArchiveCorrupt {
                path: path.to_path_buf(),
                reason: "rng seed must be 32 bytes".into(),
            }
        })?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        let stream: u64 = meta("rng.stream")?.parse().map_err(|_| Error::ArchiveCorrupt {
            path: path.to_path_buf(),
            reason: "bad rng stream".into(),
        })?;
        let word_pos: u128 = meta("rng.word_pos")?.parse().map_err(|_| Error::ArchiveCorrupt {
            path: path.to_path_buf(),
            reason: "bad rng word position".into(),
        })?;
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        state.rng = rng;

        if let Some(history) = metadata.get("history") {
            state.history = serde_json::from_str(history)?;
        }
        Ok(state)
    }

    /// Resume, but reject checkpoints trained under a different configuration.
    pub fn resume_with_config(path: impl AsRef<Path>, expected: &TrainingConfig) -> Result<Self> {
        let state = Self::resume(path.as_ref())?;
        expected.check_resume_compatible(&state.config)?;
        Ok(state)
    }

    pub fn generator_tensors(&self) -> BTreeMap<String, Tensor> {
        self.gen_vs.all_tensors()
    }

    pub fn discriminator_tensors(&self) -> BTreeMap<String, Tensor> {
        self.disc_vs.all_tensors()
    }
}

pub const LOG_HEADER: &str = "iteration\tlr\tadv_d\tadv_g\tl1\tstyle\ttotal_g";

pub fn format_log_line(lr: f64, r: &LossReport) -> String {
    format!(
        "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
        r.iteration, lr, r.adv_d, r.adv_g, r.l1, r.style, r.total_g
    )
}

/// Run the configured number of iterations, logging and checkpointing along
/// the way; returns the path of the final checkpoint.
pub fn train(config: TrainingConfig) -> Result<PathBuf> {
    let mut state = TrainState::new(config)?;
    train_from(&mut state)
}

pub fn train_from(state: &mut TrainState) -> Result<PathBuf> {
    let out = state.config.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let log_path = out.join("train_log.tsv");
    let mut log = if state.iteration == 0 {
        let mut f = std::fs::File::create(&log_path)?;
        writeln!(f, "{LOG_HEADER}")?;
        f
    } else {
        std::fs::OpenOptions::new().append(true).create(true).open(&log_path)?
    };

    let latest = out.join("checkpoint_latest.st");
    while state.iteration < state.config.total_iterations {
        let lr = lr_schedule(state.iteration, &state.config)?;
        let report = state.step()?;
        if report.iteration % state.config.log_every == 0 || report.iteration == 1 {
            writeln!(log, "{}", format_log_line(lr, &report))?;
        }
        if report.iteration % state.config.checkpoint_every == 0 {
            state.save_checkpoint(&latest)?;
        }
    }
    let final_path = out.join("checkpoint_final.st");
    state.save_checkpoint(&final_path)?;
    Ok(final_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::PaddingMode;

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("texpand-trainer-tests").join(name);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn noisy_exemplar(dir: &Path, side: usize) -> PathBuf {
        let noise = crate::noise::perlin(side, side, 9, 3, 0.5).unwrap();
        let mut img = ImagePlane::new(3, side, side);
        for c in 0..3 {
            for y in 0..side {
                for x in 0..side {
                    let v = noise.get(y, x) * 0.8 + 0.1 * (c as f32 - 1.0);
                    img.set(c, y, x, v.clamp(-1.0, 1.0));
                }
            }
        }
        let p = dir.join("exemplar.png");
        img.save(&p).unwrap();
        p
    }

    fn tiny_config(dir: &Path) -> TrainingConfig {
        TrainingConfig {
            exemplar: noisy_exemplar(dir, 64),
            output_dir: dir.join("out"),
            k: 16,
            total_iterations: 100,
            lr_initial: 2e-4,
            lr_constant_until: 50,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            losses: LossWeights {
                enable_style: false,
                ..LossWeights::default()
            },
            generator: GeneratorSpec {
                base_channels: 4,
                num_resblocks: 1,
                padding: PaddingMode::Reflect,
            },
            discriminator_layers: 3,
            seed: 11,
            checkpoint_every: 50,
            log_every: 1,
            extractor: None,
            deterministic: true,
        }
    }

    fn defaults() -> TrainingConfig {
        TrainingConfig {
            exemplar: PathBuf::from("x.png"),
            output_dir: default_output_dir(),
            k: default_k(),
            total_iterations: default_total_iterations(),
            lr_initial: default_lr_initial(),
            lr_constant_until: default_lr_constant_until(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            batch_size: 1,
            losses: LossWeights::default(),
            generator: GeneratorSpec::default(),
            discriminator_layers: 6,
            seed: 0,
            checkpoint_every: 1000,
            log_every: 10,
            extractor: None,
            deterministic: false,
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let c = defaults();
        assert_eq!(lr_schedule(0, &c).unwrap(), 2e-4);
        assert_eq!(lr_schedule(50_000, &c).unwrap(), 2e-4);
        assert!((lr_schedule(75_000, &c).unwrap() - 1e-4).abs() < 1e-12);
        assert_eq!(lr_schedule(100_000, &c).unwrap(), 0.0);
        assert!(lr_schedule(100_001, &c).is_err());
    }

    #[test]
    fn lr_schedule_is_non_increasing_and_continuous() {
        let c = defaults();
        let mut prev = f64::INFINITY;
        for i in (0..=100_000).step_by(500) {
            let lr = lr_schedule(i, &c).unwrap();
            assert!(lr <= prev + 1e-15);
            prev = lr;
        }
        // Continuity at the knee.
        let before = lr_schedule(50_000, &c).unwrap();
        let after = lr_schedule(50_001, &c).unwrap();
        assert!((before - after).abs() < 1e-8);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let dir = tmp_dir("toml");
        let p = dir.join("config.toml");
        std::fs::write(&p, "exemplar = \"texture.png\"\n").unwrap();
        let c = TrainingConfig::from_toml_file(&p).unwrap();
        assert_eq!(c.k, 128);
        assert_eq!(c.total_iterations, 100_000);
        assert_eq!(c.lr_initial, 2e-4);
        assert_eq!(c.adam_beta1, 0.5);
        assert_eq!(c.losses.lambda1, 100.0);
        assert_eq!(c.discriminator_layers, 6);
        assert_eq!(c.generator.num_resblocks, 6);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = defaults();
        c.k = 18;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = defaults();
        c.lr_constant_until = c.total_iterations + 1;
        assert!(c.validate().is_err());
        let mut c = defaults();
        c.discriminator_layers = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn steps_produce_finite_consistent_reports() {
        let dir = tmp_dir("steps");
        let mut state = TrainState::new(tiny_config(&dir)).unwrap();
        for i in 1..=3 {
            let r = state.step().unwrap();
            assert_eq!(r.iteration, i);
            assert!(r.is_finite());
            let expected = r.expected_total(&state.weights);
            assert!(
                (r.total_g - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                "total {} vs recomputed {expected}",
                r.total_g
            );
        }
    }

    #[test]
    fn same_seed_same_reports() {
        let dir = tmp_dir("determinism");
        let config = tiny_config(&dir);
        let run = |config: TrainingConfig| -> Vec<LossReport> {
            let mut state = TrainState::new(config).unwrap();
            (0..3).map(|_| state.step().unwrap()).collect()
        };
        let a = run(config.clone());
        let b = run(config);
        assert_eq!(a, b);
    }

    #[test]
    fn adv_disabled_leaves_discriminator_untouched() {
        let dir = tmp_dir("ablation");
        let mut config = tiny_config(&dir);
        config.losses.enable_adv = false;
        let mut state = TrainState::new(config).unwrap();
        let before = state.discriminator_tensors();
        for _ in 0..3 {
            let r = state.step().unwrap();
            assert_eq!(r.adv_d, 0.0);
            assert_eq!(r.adv_g, 0.0);
        }
        let after = state.discriminator_tensors();
        for (name, t) in &before {
            let a = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = after[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "{name} changed despite adv being disabled");
        }
    }

    #[test]
    fn checkpoint_resume_reproduces_next_step() {
        let dir = tmp_dir("resume");
        let config = tiny_config(&dir);
        let ckpt = dir.join("ckpt.st");

        let mut a = TrainState::new(config.clone()).unwrap();
        a.step().unwrap();
        a.step().unwrap();
        a.save_checkpoint(&ckpt).unwrap();
        let third_uninterrupted = a.step().unwrap();

        let mut b = TrainState::resume(&ckpt).unwrap();
        assert_eq!(b.iteration, 2);
        let third_resumed = b.step().unwrap();
        assert_eq!(third_uninterrupted, third_resumed);
    }

    #[test]
    fn checkpoint_weights_roundtrip_bit_exact() {
        let dir = tmp_dir("roundtrip");
        let config = tiny_config(&dir);
        let ckpt = dir.join("ckpt.st");
        let mut state = TrainState::new(config).unwrap();
        state.step().unwrap();
        state.save_checkpoint(&ckpt).unwrap();
        let resumed = TrainState::resume(&ckpt).unwrap();
        for (ours, theirs) in [
            (state.generator_tensors(), resumed.generator_tensors()),
            (state.discriminator_tensors(), resumed.discriminator_tensors()),
        ] {
            assert_eq!(ours.len(), theirs.len());
            for (name, t) in &ours {
                let a = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
                let b = theirs[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
                assert_eq!(a, b, "{name}");
            }
        }
        // Optimizer moments as well.
        assert_eq!(state.opt_g.t, resumed.opt_g.t);
        for (name, t) in &state.opt_g.m {
            let a = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let b = resumed.opt_g.m[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(a, b, "moment {name}");
        }
    }

    #[test]
    fn config_mismatch_on_resume_names_fields() {
        let dir = tmp_dir("mismatch");
        let config = tiny_config(&dir);
        let ckpt = dir.join("ckpt.st");
        let mut state = TrainState::new(config.clone()).unwrap();
        state.step().unwrap();
        state.save_checkpoint(&ckpt).unwrap();

        let mut other = config.clone();
        other.k = 32;
        other.seed = 99;
        let err = TrainState::resume_with_config(&ckpt, &other).err().expect("expected error");
        match err {
            Error::ConfigMismatch(fields) => {
                assert!(fields.contains("k"), "{fields}");
                assert!(fields.contains("seed"), "{fields}");
            }
            other => panic!("unexpected error {other}"),
        }
        // Output location changes are allowed.
        let mut ok = config;
        ok.output_dir = dir.join("elsewhere");
        assert!(TrainState::resume_with_config(&ckpt, &ok).is_ok());
    }
}
