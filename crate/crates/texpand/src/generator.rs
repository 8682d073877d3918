//! The fully-convolutional expansion generator.
//!
//! Encoder (7x7 stride 1, then two 3x3 stride-2 convolutions), a chain of
//! residual blocks at a quarter of the input resolution, a channel-doubling
//! convolution, three stride-2 transposed convolutions and a final 7x7
//! convolution with tanh output. Two stride-2 encoder layers against three
//! doubling layers make the network double its input's spatial extent.

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::{reflect_pad2d, BatchNorm2d, Conv2d, ConvTranspose2d, VarStore};
use crate::rf::{self, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    /// Reflection padding; reduces border artifacts.
    Reflect,
    /// Plain zero padding, kept as an ablation alternative.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub num_resblocks: usize,
    pub padding: PaddingMode,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            base_channels: 64,
            num_resblocks: 6,
            padding: PaddingMode::Reflect,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Receptive field at the end of the residual chain (109 for the default
    /// configuration).
    pub fn core_receptive_field(&self) -> usize {
        rf::receptive_field(&rf::generator_core_steps(self.num_resblocks))
    }

    /// Receptive field of the whole network including the decoder.
    pub fn full_receptive_field(&self) -> usize {
        rf::receptive_field(&rf::generator_full_steps(self.num_resblocks))
    }

    pub fn core_steps(&self) -> Vec<Step> {
        rf::generator_core_steps(self.num_resblocks)
    }
}

/// Intermediate activations that can be pulled out for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTap {
    /// Activation at the end of the encoding stage.
    Relu,
    /// Output of residual block i (1-based).
    Resblock(usize),
    /// Output of the first (channel-doubling) decoder convolution.
    Conv,
}

impl FeatureTap {
    pub fn parse(name: &str, num_resblocks: usize) -> Result<Self> {
        match name {
            "relu" => Ok(FeatureTap::Relu),
            "conv" => Ok(FeatureTap::Conv),
            _ => {
                if let Some(n) = name.strip_prefix("resblock_") {
                    if let Ok(i) = n.parse::<usize>() {
                        if i >= 1 && i <= num_resblocks {
                            return Ok(FeatureTap::Resblock(i));
                        }
                    }
                }
                Err(Error::UnknownLayer(name.to_string()))
            }
        }
    }
}

struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    pad: usize,
    mode: PaddingMode,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        vs: &VarStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        mode: PaddingMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let pad = (kernel - 1) / 2;
        let conv_pad = match mode {
            PaddingMode::Reflect => 0,
            PaddingMode::Zero => pad,
        };
        Ok(Self {
            conv: Conv2d::new(
                vs,
                &format!("{name}.conv"),
                in_c,
                out_c,
                kernel,
                stride,
                conv_pad,
                rng,
            )?,
            bn: BatchNorm2d::new(vs, &format!("{name}.bn"), out_c, rng)?,
            pad,
            mode,
        })
    }

    fn conv_only(&self, x: &Tensor) -> Result<Tensor> {
        let x = match self.mode {
            PaddingMode::Reflect => reflect_pad2d(x, self.pad)?,
            PaddingMode::Zero => x.clone(),
        };
        self.conv.forward(&x)
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.conv_only(x)?;
        let x = self.bn.forward(&x, train)?;
        Ok(x.relu()?)
    }
}

struct ResBlock {
    block1: ConvBlock,
    conv2: ConvBlock,
}

impl ResBlock {
    fn new(
        vs: &VarStore,
        name: &str,
        channels: usize,
        mode: PaddingMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            block1: ConvBlock::new(
                vs,
                &format!("{name}.0"),
                channels,
                channels,
                3,
                1,
                mode,
                rng,
            )?,
            conv2: ConvBlock::new(
                vs,
                &format!("{name}.1"),
                channels,
                channels,
                3,
                1,
                mode,
                rng,
            )?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.block1.forward(x, train)?;
        let y = self.conv2.conv_only(&y)?;
        let y = self.conv2.bn.forward(&y, train)?;
        Ok((x + y)?)
    }
}

pub struct Generator {
    spec: GeneratorSpec,
    enc1: ConvBlock,
    enc2: ConvBlock,
    enc3: ConvBlock,
    resblocks: Vec<ResBlock>,
    expand: ConvBlock,
    up1: (ConvTranspose2d, BatchNorm2d),
    up2: (ConvTranspose2d, BatchNorm2d),
    up3: (ConvTranspose2d, BatchNorm2d),
    out: Conv2d,
    out_pad: usize,
}

impl Generator {
    pub fn new(vs: &VarStore, spec: GeneratorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let bc = spec.base_channels;
        let mode = spec.padding;
        let enc1 = ConvBlock::new(vs, "enc1", 3, bc, 7, 1, mode, rng)?;
        let enc2 = ConvBlock::new(vs, "enc2", bc, 2 * bc, 3, 2, mode, rng)?;
        let enc3 = ConvBlock::new(vs, "enc3", 2 * bc, 4 * bc, 3, 2, mode, rng)?;
        let resblocks = (0..spec.num_resblocks)
            .map(|i| ResBlock::new(vs, &format!("res.{i}"), 4 * bc, mode, rng))
            .collect::<Result<Vec<_>>>()?;
        let expand = ConvBlock::new(vs, "expand", 4 * bc, 8 * bc, 3, 1, mode, rng)?;
        let mk_up = |name: &str, in_c: usize, out_c: usize, rng: &mut _| -> Result<_> {
            Ok((
                ConvTranspose2d::new(vs, &format!("{name}.deconv"), in_c, out_c, 3, 2, 1, 1, rng)?,
                BatchNorm2d::new(vs, &format!("{name}.bn"), out_c, rng)?,
            ))
        };
        let up1 = mk_up("up1", 8 * bc, 4 * bc, rng)?;
        let up2 = mk_up("up2", 4 * bc, 2 * bc, rng)?;
        let up3 = mk_up("up3", 2 * bc, bc, rng)?;
        // Final convolution carries no normalization and a tanh output.
        let out_pad = 3;
        let out = Conv2d::new(
            vs,
            "out",
            bc,
            3,
            7,
            1,
            match mode {
                PaddingMode::Reflect => 0,
                PaddingMode::Zero => out_pad,
            },
            rng,
        )?;
        Ok(Self {
            spec,
            enc1,
            enc2,
            enc3,
            resblocks,
            expand,
            up1,
            up2,
            up3,
            out,
            out_pad,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_n, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::DimensionMismatch(format!(
                "generator expects 3 input channels, got {c}"
            )));
        }
        if h < 16 || w < 16 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::BadGeneratorInput {
                height: h,
                width: w,
            });
        }
        Ok(())
    }

    fn forward_impl(&self, x: &Tensor, train: bool, tap: Option<FeatureTap>) -> Result<Tensor> {
        self.check_input(x)?;
        let x = self.enc1.forward(x, train)?;
        let x = self.enc2.forward(&x, train)?;
        let mut x = self.enc3.forward(&x, train)?;
        if tap == Some(FeatureTap::Relu) {
            return Ok(x);
        }
        for (i, block) in self.resblocks.iter().enumerate() {
            x = block.forward(&x, train)?;
            if tap == Some(FeatureTap::Resblock(i + 1)) {
                return Ok(x);
            }
        }
        if tap == Some(FeatureTap::Conv) {
            return self.expand.conv_only(&x);
        }
        let x = self.expand.forward(&x, train)?;
        let x = self.up1.1.forward(&self.up1.0.forward(&x)?, train)?.relu()?;
        let x = self.up2.1.forward(&self.up2.0.forward(&x)?, train)?.relu()?;
        let x = self.up3.1.forward(&self.up3.0.forward(&x)?, train)?.relu()?;
        let x = match self.spec.padding {
            PaddingMode::Reflect => reflect_pad2d(&x, self.out_pad)?,
            PaddingMode::Zero => x,
        };
        Ok(self.out.forward(&x)?.tanh()?)
    }

    /// Map an (N, 3, h, w) block to (N, 3, 2h, 2w), values in [-1, 1].
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.forward_impl(x, train, None)?;
        debug_assert_eq!(y.dim(2)? % 2, 0);
        Ok(y)
    }

    /// Activation tensor at one of the inspection taps (inference mode).
    pub fn features(&self, x: &Tensor, tap: FeatureTap) -> Result<Tensor> {
        self.forward_impl(x, false, Some(tap))
    }
}

/// Channel-averaged (or single-channel) feature map rescaled to a [-1, 1]
/// grayscale image for inspection.
pub fn visualize_features(
    gen: &Generator,
    input: &Tensor,
    tap: FeatureTap,
    channel: Option<usize>,
) -> Result<ImagePlane> {
    let fmap = gen.features(input, tap)?.squeeze(0)?;
    let (c, _h, _w) = fmap.dims3()?;
    let map = match channel {
        Some(i) => {
            if i >= c {
                return Err(Error::msg(format!(
                    "channel {i} out of range (feature map has {c} channels)"
                )));
            }
            fmap.narrow(0, i, 1)?.squeeze(0)?
        }
        None => fmap.mean(0)?,
    };
    let (h, w) = map.dims2()?;
    let vals = map.flatten_all()?.to_vec1::<f32>()?;
    let min = vals.iter().copied().fold(f32::INFINITY, f32::min);
    let max = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let scale = if max > min { 2.0 / (max - min) } else { 0.0 };
    let rescaled: Vec<f32> = vals.iter().map(|v| (v - min) * scale - 1.0).collect();
    ImagePlane::from_data(1, h, w, rescaled)
}

/// Normalized L2 distance between two feature taps on the same input,
/// ||a - b|| / ||b||.
pub fn feature_l2_diff(
    gen: &Generator,
    input: &Tensor,
    tap_a: FeatureTap,
    tap_b: FeatureTap,
) -> Result<f64> {
    let a = gen.features(input, tap_a)?;
    let b = gen.features(input, tap_b)?;
    let diff = (&a - &b)?.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
    let norm = b.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
    Ok((diff / norm.max(f64::MIN_POSITIVE)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_generator(num_resblocks: usize) -> (VarStore, Generator) {
        let vs = VarStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = GeneratorSpec {
            base_channels: 8,
            num_resblocks,
            padding: PaddingMode::Reflect,
        };
        let gen = Generator::new(&vs, spec, &mut rng).unwrap();
        (vs, gen)
    }

    fn rand_input(h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..3 * h * w)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        Tensor::from_vec(data, (1, 3, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn output_is_exactly_doubled() {
        let (_vs, gen) = small_generator(2);
        for (h, w) in [(16, 16), (32, 48), (64, 64), (96, 128)] {
            let y = gen.forward(&rand_input(h, w), false).unwrap();
            assert_eq!(y.dims(), [1, 3, 2 * h, 2 * w], "input {h}x{w}");
        }
    }

    #[test]
    fn output_in_canonical_range() {
        let (_vs, gen) = small_generator(2);
        let y = gen.forward(&rand_input(32, 32), false).unwrap();
        let vals = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(vals.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_input_sizes() {
        let (_vs, gen) = small_generator(1);
        assert!(gen.forward(&rand_input(15, 16), false).is_err());
        // 63 is not divisible by 4.
        let x = rand_input(64, 63);
        assert!(matches!(
            gen.forward(&x, false),
            Err(Error::BadGeneratorInput { .. })
        ));
    }

    #[test]
    fn inference_is_bit_deterministic() {
        let (_vs, gen) = small_generator(2);
        let x = rand_input(32, 32);
        let a = gen.forward(&x, false).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = gen.forward(&x, false).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_taps_have_expected_shapes() {
        let (_vs, gen) = small_generator(3);
        let x = rand_input(32, 32);
        let relu = gen.features(&x, FeatureTap::Relu).unwrap();
        assert_eq!(relu.dims(), [1, 32, 8, 8]);
        let r3 = gen.features(&x, FeatureTap::Resblock(3)).unwrap();
        assert_eq!(r3.dims(), [1, 32, 8, 8]);
        let conv = gen.features(&x, FeatureTap::Conv).unwrap();
        assert_eq!(conv.dims(), [1, 64, 8, 8]);
    }

    #[test]
    fn unknown_layer_rejected() {
        assert!(matches!(
            FeatureTap::parse("resblock_7", 6),
            Err(Error::UnknownLayer(_))
        ));
        assert!(FeatureTap::parse("resblock_6", 6).is_ok());
        assert!(FeatureTap::parse("relu", 6).is_ok());
        assert!(matches!(
            FeatureTap::parse("bogus", 6),
            Err(Error::UnknownLayer(_))
        ));
    }

    #[test]
    fn visualization_is_quarter_resolution_grayscale() {
        let (_vs, gen) = small_generator(2);
        let x = rand_input(32, 32);
        let img = visualize_features(&gen, &x, FeatureTap::Resblock(2), None).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 8, 8));
        assert!(img.min_value() >= -1.0 && img.max_value() <= 1.0);
    }

    #[test]
    fn feature_diff_is_finite_and_reported() {
        let (_vs, gen) = small_generator(6);
        let x = rand_input(32, 32);
        let d = feature_l2_diff(&gen, &x, FeatureTap::Resblock(5), FeatureTap::Resblock(6)).unwrap();
        assert!(d.is_finite() && d >= 0.0);
    }

    #[test]
    fn init_statistics_match_spec() {
        let vs = VarStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gen = Generator::new(&vs, GeneratorSpec::default(), &mut rng).unwrap();
        let _ = &gen;
        for (name, var) in vs.trainable_vars() {
            let vals = var
                .as_detached_tensor()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            if name.ends_with("conv.weight") || name.ends_with("deconv.weight") || name == "out.weight" {
                if vals.len() >= 10_000 {
                    let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
                    let std: f64 = (vals
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>()
                        / vals.len() as f64)
                        .sqrt();
                    assert!(
                        (0.016..=0.024).contains(&std),
                        "{name}: sample std {std} outside 0.02 +- 20%"
                    );
                }
            } else if name.ends_with("bn.bias") || name.ends_with(".bias") {
                assert!(vals.iter().all(|&v| v == 0.0), "{name} not zero-initialized");
            }
        }
    }

    #[test]
    fn zero_resblock_generator_works() {
        let (_vs, gen) = small_generator(0);
        assert_eq!(gen.spec().core_receptive_field(), 13);
        let y = gen.forward(&rand_input(16, 16), false).unwrap();
        assert_eq!(y.dims(), [1, 3, 32, 32]);
    }

    #[test]
    fn gradient_support_confined_to_receptive_field() {
        // One output pixel's gradient w.r.t. the input must live inside the
        // theoretical receptive-field window (with one pixel of slack).
        let (_vs, gen) = small_generator(1);
        let rf = gen.spec().full_receptive_field(); // 47 for one resblock
        let (h, w) = (64, 64);
        let x = Var::from_tensor(&rand_input(h, w)).unwrap();
        let y = gen.forward(x.as_tensor(), false).unwrap();
        let (oy, ox) = (h, w); // center of the 2h x 2w output
        let pixel = y.narrow(2, oy, 1).unwrap().narrow(3, ox, 1).unwrap().sum_all().unwrap();
        let grads = pixel.backward().unwrap();
        let g = grads.get(&x).expect("input gradient");
        let g = g.squeeze(0).unwrap().abs().unwrap().sum(0).unwrap();
        let rows: Vec<Vec<f32>> = g.to_vec2().unwrap();
        let mut support: Option<(usize, usize, usize, usize)> = None;
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    let s = support.get_or_insert((r, r, c, c));
                    s.0 = s.0.min(r);
                    s.1 = s.1.max(r);
                    s.2 = s.2.min(c);
                    s.3 = s.3.max(c);
                }
            }
        }
        let (r0, r1, c0, c1) = support.expect("gradient nowhere nonzero");
        let max_side = rf + 1;
        assert!(
            r1 - r0 + 1 <= max_side && c1 - c0 + 1 <= max_side,
            "support {}x{} exceeds RF window {max_side}",
            r1 - r0 + 1,
            c1 - c0 + 1
        );
        // Support should be roughly centered on the source pixel.
        let (cy, cx) = (oy / 2, ox / 2);
        let half = (rf / 2 + 1) as i64;
        for (lo, hi, center) in [(r0, r1, cy), (c0, c1, cx)] {
            assert!((lo as i64) >= center as i64 - half);
            assert!((hi as i64) <= center as i64 + half);
        }
    }
}
