//! Configurable-depth PatchGAN discriminator.
//!
//! L convolutional layers with kernel 4: the first L - 2 use stride 2 and the
//! final two stride 1, doubling channels from 64 up to a cap of 512. A 1x1
//! projection with sigmoid turns the 512-wide descriptors into a spatial grid
//! of real/fake probabilities, each cell covering one overlapping input patch.

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, sigmoid, BatchNorm2d, Conv2d, VarStore};
use crate::rf;

pub const MIN_LAYERS: usize = 3;
pub const MAX_LAYERS: usize = 8;
pub const BASE_CHANNELS: usize = 64;
pub const CHANNEL_CAP: usize = 512;
const KERNEL: usize = 4;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub num_conv_layers: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { num_conv_layers: 6 }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_LAYERS..=MAX_LAYERS).contains(&self.num_conv_layers) {
            return Err(Error::BadDiscriminatorDepth(self.num_conv_layers));
        }
        Ok(())
    }

    /// Channel width after each conv layer: doubling from 64, capped at 512.
    pub fn channel_plan(&self) -> Vec<usize> {
        (0..self.num_conv_layers)
            .map(|i| (BASE_CHANNELS << i).min(CHANNEL_CAP))
            .collect()
    }

    pub fn stride(&self, layer: usize) -> usize {
        if layer < self.num_conv_layers - 2 {
            2
        } else {
            1
        }
    }

    /// Receptive field of one pre-head unit.
    pub fn patch_size(&self) -> usize {
        rf::patch_size(self.num_conv_layers)
    }

    /// Spatial size of the probability grid for a given input side, or `None`
    /// if the input is too small to produce at least one cell.
    pub fn grid_size(&self, input: usize) -> Option<usize> {
        let mut n = input as i64;
        for layer in 0..self.num_conv_layers {
            // kernel 4, padding 1.
            let s = self.stride(layer) as i64;
            n = (n + 2 - KERNEL as i64) / s + 1;
            if n < 1 {
                return None;
            }
        }
        Some(n as usize)
    }

    /// Smallest input side that still yields a 1x1 grid.
    pub fn min_input(&self) -> usize {
        (8..).find(|&n| self.grid_size(n).is_some()).unwrap()
    }
}

pub struct Discriminator {
    spec: DiscriminatorSpec,
    layers: Vec<(Conv2d, Option<BatchNorm2d>)>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(vs: &VarStore, spec: DiscriminatorSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let plan = spec.channel_plan();
        let mut layers = Vec::with_capacity(spec.num_conv_layers);
        let mut in_c = 3;
        for (i, &out_c) in plan.iter().enumerate() {
            let conv = Conv2d::new(
                vs,
                &format!("layer{i}.conv"),
                in_c,
                out_c,
                KERNEL,
                spec.stride(i),
                1,
                rng,
            )?;
            // The first layer is conventionally left unnormalized.
            let bn = if i == 0 {
                None
            } else {
                Some(BatchNorm2d::new(vs, &format!("layer{i}.bn"), out_c, rng)?)
            };
            layers.push((conv, bn));
            in_c = out_c;
        }
        let head = Conv2d::new(vs, "head", in_c, 1, 1, 1, 0, rng)?;
        Ok(Self { spec, layers, head })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Probability grid in (0, 1), shape (N, 1, gh, gw).
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_n, _c, h, w) = x.dims4()?;
        let min = self.spec.min_input();
        if self.spec.grid_size(h).is_none() || self.spec.grid_size(w).is_none() {
            return Err(Error::InputSmallerThanPatch {
                height: h,
                width: w,
                min,
            });
        }
        let mut x = x.clone();
        for (conv, bn) in &self.layers {
            x = conv.forward(&x)?;
            if let Some(bn) = bn {
                x = bn.forward(&x, train)?;
            }
            x = leaky_relu(&x, LEAKY_SLOPE)?;
        }
        sigmoid(&self.head.forward(&x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(l: usize) -> (VarStore, Discriminator) {
        let vs = VarStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let disc = Discriminator::new(&vs, DiscriminatorSpec { num_conv_layers: l }, &mut rng)
            .unwrap();
        (vs, disc)
    }

    fn rand_input(h: usize, w: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..3 * h * w)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        Tensor::from_vec(data, (1, 3, h, w), &Device::Cpu).unwrap()
    }

    #[test]
    fn depth_out_of_range_rejected() {
        let vs = VarStore::new(Device::Cpu, DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for l in [2, 9] {
            assert!(matches!(
                Discriminator::new(&vs, DiscriminatorSpec { num_conv_layers: l }, &mut rng),
                Err(Error::BadDiscriminatorDepth(_))
            ));
        }
    }

    #[test]
    fn channel_plan_doubles_and_caps() {
        assert_eq!(
            DiscriminatorSpec { num_conv_layers: 3 }.channel_plan(),
            vec![64, 128, 256]
        );
        let l6 = DiscriminatorSpec { num_conv_layers: 6 }.channel_plan();
        assert_eq!(l6, vec![64, 128, 256, 512, 512, 512]);
        for l in MIN_LAYERS..=MAX_LAYERS {
            let plan = DiscriminatorSpec { num_conv_layers: l }.channel_plan();
            assert!(plan.iter().all(|&c| c <= CHANNEL_CAP));
        }
    }

    #[test]
    fn l6_has_four_stride2_then_two_stride1() {
        let spec = DiscriminatorSpec { num_conv_layers: 6 };
        let strides: Vec<_> = (0..6).map(|i| spec.stride(i)).collect();
        assert_eq!(strides, vec![2, 2, 2, 2, 1, 1]);
    }

    #[test]
    fn grid_larger_than_one_for_256_input_l6() {
        let spec = DiscriminatorSpec { num_conv_layers: 6 };
        let g = spec.grid_size(256).unwrap();
        assert!(g > 1, "grid is {g}");
        assert_eq!(g, 14);
    }

    #[test]
    fn zero_head_weights_give_half_everywhere() {
        let (_vs, disc) = build(3);
        disc.head.weight.set(&Tensor::zeros(disc.head.weight.dims(), DType::F32, &Device::Cpu).unwrap()).unwrap();
        disc.head.bias.set(&Tensor::zeros(disc.head.bias.dims(), DType::F32, &Device::Cpu).unwrap()).unwrap();
        let grid = disc.forward(&rand_input(32, 32), false).unwrap();
        let vals = grid.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(vals.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn outputs_are_probabilities() {
        let (_vs, disc) = build(4);
        let grid = disc.forward(&rand_input(64, 64), false).unwrap();
        let vals = grid.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(vals.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn too_small_input_rejected() {
        let (_vs, disc) = build(6);
        let err = disc.forward(&rand_input(8, 8), false).unwrap_err();
        assert!(matches!(err, Error::InputSmallerThanPatch { .. }));
    }

    #[test]
    fn patch_sizes_match_ladder() {
        let expected = [16, 34, 70, 142, 286, 574];
        for (l, want) in (MIN_LAYERS..=MAX_LAYERS).zip(expected) {
            assert_eq!(
                DiscriminatorSpec { num_conv_layers: l }.patch_size(),
                want
            );
        }
    }

    #[test]
    fn gradient_support_confined_to_patch() {
        let (_vs, disc) = build(3); // patch size 16
        let patch = disc.spec().patch_size();
        let (h, w) = (64, 64);
        let x = Var::from_tensor(&rand_input(h, w)).unwrap();
        let grid = disc.forward(x.as_tensor(), false).unwrap();
        let (gh, gw) = (grid.dim(2).unwrap(), grid.dim(3).unwrap());
        let cell = grid
            .narrow(2, gh / 2, 1)
            .unwrap()
            .narrow(3, gw / 2, 1)
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = cell.backward().unwrap();
        let g = grads.get(&x).unwrap().squeeze(0).unwrap().abs().unwrap().sum(0).unwrap();
        let rows: Vec<Vec<f32>> = g.to_vec2().unwrap();
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    let b = bounds.get_or_insert((r, r, c, c));
                    b.0 = b.0.min(r);
                    b.1 = b.1.max(r);
                    b.2 = b.2.min(c);
                    b.3 = b.3.max(c);
                }
            }
        }
        let (r0, r1, c0, c1) = bounds.unwrap();
        assert!(r1 - r0 + 1 <= patch + 1, "{}", r1 - r0 + 1);
        assert!(c1 - c0 + 1 <= patch + 1, "{}", c1 - c0 + 1);
    }
}
