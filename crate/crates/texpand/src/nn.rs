//! Minimal neural-network building blocks on top of candle tensors.
//!
//! Parameters are held in a [`VarStore`] keyed by dotted names, which gives a
//! single place for initialization, checkpoint save/load and optimizer
//! registration. Creation order is deterministic, so a fixed RNG stream yields
//! bit-identical initializations.

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard deviation used for all convolution-weight initializations.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    Normal { std: f64 },
}

pub struct VarStore {
    device: Device,
    dtype: DType,
    vars: RefCell<BTreeMap<String, Var>>,
}

impl VarStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            device,
            dtype,
            vars: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn var(
        &self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Normal { std } => {
                let normal = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let prev = self
            .vars
            .borrow_mut()
            .insert(name.to_string(), var.clone());
        if prev.is_some() {
            return Err(Error::msg(format!("duplicate parameter name '{name}'")));
        }
        Ok(var)
    }

    /// All parameters updated by the optimizer, in name order. Batch-norm
    /// running statistics are excluded.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        self.vars
            .borrow()
            .iter()
            .filter(|(name, _)| !name.contains("running_"))
            .map(|(name, var)| (name.clone(), var.clone()))
            .collect()
    }

    pub fn all_tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .borrow()
            .iter()
            .map(|(name, var)| (name.clone(), var.as_detached_tensor()))
            .collect()
    }

    /// Overwrite every parameter from `tensors`; names must match exactly.
    pub fn load_tensors(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.vars.borrow();
        let missing: Vec<_> = vars
            .keys()
            .filter(|k| !tensors.contains_key(*k))
            .cloned()
            .collect();
        let unexpected: Vec<_> = tensors
            .keys()
            .filter(|k| !vars.contains_key(*k))
            .cloned()
            .collect();
        if !missing.is_empty() || !unexpected.is_empty() {
            return Err(Error::msg(format!(
                "parameter set mismatch; missing: {missing:?}, unexpected: {unexpected:?}"
            )));
        }
        for (name, var) in vars.iter() {
            let t = &tensors[name];
            if t.dims() != var.dims() {
                return Err(Error::msg(format!(
                    "parameter '{name}' has shape {:?} in archive, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    /// Zero padding applied by the convolution itself.
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vs: &VarStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = vs.var(
            &format!("{name}.weight"),
            &[out_c, in_c, kernel, kernel],
            Init::Normal { std: INIT_STD },
            rng,
        )?;
        let bias = vs.var(&format!("{name}.bias"), &[out_c], Init::Const(0.0), rng)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_banded(x, CONV_BAND_BYTES)
    }

    /// The backend materializes an im2col buffer of c_in * k^2 * h_out * w_out
    /// elements per convolution, which for large synthesis inputs exceeds
    /// available memory. Above `band_bytes` the convolution runs over
    /// horizontal output-row bands instead; every output pixel computes the
    /// same dot product, so the result matches the single-shot path.
    pub fn forward_banded(&self, x: &Tensor, band_bytes: usize) -> Result<Tensor> {
        let (_n, c_in, h, w) = x.dims4()?;
        let (_, _, kh, _) = self.weight.dims4()?;
        let h_out = (h + 2 * self.padding - kh) / self.stride + 1;
        let w_out = (w + 2 * self.padding - kh) / self.stride + 1;
        let row_cost = c_in * kh * kh * w_out * x.dtype().size_in_bytes();
        let y = if row_cost * h_out > band_bytes && h_out > 1 {
            let x = if self.padding > 0 {
                x.pad_with_zeros(2, self.padding, self.padding)?
                    .pad_with_zeros(3, self.padding, self.padding)?
            } else {
                x.clone()
            };
            let per_band = (band_bytes / 2 / row_cost).max(1);
            let mut bands = Vec::new();
            let mut r0 = 0;
            while r0 < h_out {
                let rows = per_band.min(h_out - r0);
                let in_rows = (rows - 1) * self.stride + kh;
                let slab = x.narrow(2, r0 * self.stride, in_rows)?;
                bands.push(slab.conv2d(&self.weight, 0, self.stride, 1, 1)?);
                r0 += rows;
            }
            Tensor::cat(&bands, 2)?
        } else {
            x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?
        };
        let bias = self.bias.reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

/// Im2col budget above which convolutions are evaluated in bands.
const CONV_BAND_BYTES: usize = 256 << 20;

pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vs: &VarStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = vs.var(
            &format!("{name}.weight"),
            &[in_c, out_c, kernel, kernel],
            Init::Normal { std: INIT_STD },
            rng,
        )?;
        let bias = vs.var(&format!("{name}.bias"), &[out_c], Init::Const(0.0), rng)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(
            &self.weight,
            self.padding,
            self.output_padding,
            self.stride,
            1,
        )?;
        let bias = self.bias.reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&bias)?)
    }
}

/// Spatial batch normalization with tracked running statistics.
///
/// Training mode normalizes with the current batch's per-channel statistics
/// (over batch and spatial dimensions) and updates the running estimates;
/// inference mode uses the running estimates only, so it is deterministic.
pub struct BatchNorm2d {
    pub weight: Var,
    pub bias: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(vs: &VarStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = vs.var(&format!("{name}.weight"), &[channels], Init::Const(1.0), rng)?;
        let bias = vs.var(&format!("{name}.bias"), &[channels], Init::Const(0.0), rng)?;
        let running_mean = vs.var(
            &format!("{name}.running_mean"),
            &[channels],
            Init::Const(0.0),
            rng,
        )?;
        let running_var = vs.var(
            &format!("{name}.running_var"),
            &[channels],
            Init::Const(1.0),
            rng,
        )?;
        Ok(Self {
            weight,
            bias,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_n, c, _h, _w) = x.dims4()?;
        let shape = (1, c, 1, 1);
        if train {
            // Per-channel mean/variance over batch and spatial dimensions.
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;

            let m = x.elem_count() as f64 / c as f64;
            let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let new_mean = ((self.running_mean.as_detached_tensor() * (1.0 - self.momentum))?
                + (mean.flatten_all()?.detach() * self.momentum)?)?;
            let new_var = ((self.running_var.as_detached_tensor() * (1.0 - self.momentum))?
                + (var.flatten_all()?.detach() * (self.momentum * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;

            let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
            Ok(normed
                .broadcast_mul(&self.weight.reshape(shape)?)?
                .broadcast_add(&self.bias.reshape(shape)?)?)
        } else {
            let mean = self.running_mean.as_detached_tensor().reshape(shape)?;
            let var = self.running_var.as_detached_tensor().reshape(shape)?;
            let normed = x
                .broadcast_sub(&mean)?
                .broadcast_div(&(var + self.eps)?.sqrt()?)?;
            Ok(normed
                .broadcast_mul(&self.weight.reshape(shape)?)?
                .broadcast_add(&self.bias.reshape(shape)?)?)
        }
    }
}

/// Reflection padding (without edge repetition) of the two spatial dims.
pub fn reflect_pad2d(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_n, _c, h, w) = x.dims4()?;
    if h <= pad || w <= pad {
        return Err(Error::msg(format!(
            "cannot reflect-pad {h}x{w} input by {pad}"
        )));
    }
    let index = |n: usize| -> Vec<u32> {
        let mut idx = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            idx.push(i as u32);
        }
        idx.extend(0..n as u32);
        for i in 2..=(pad + 1) {
            idx.push((n - i) as u32);
        }
        idx
    };
    let rows = Tensor::from_vec(index(h), h + 2 * pad, x.device())?;
    let cols = Tensor::from_vec(index(w), w + 2 * pad, x.device())?;
    let x = x.index_select(&rows, D::Minus2)?;
    Ok(x.index_select(&cols, D::Minus1)?)
}

/// 2x2 max pooling with stride 2, built from index_select and maximum.
///
/// candle's max_pool2d must not be used under backprop here: its backward
/// pass scales gradients by (number of maxima) / (pool area), which loses a
/// factor of the pool area for the common unique-maximum case.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (_n, _c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::msg(format!("cannot 2x2-pool a {h}x{w} feature map")));
    }
    let idx = |n: usize, offset: usize| -> Result<Tensor> {
        let v: Vec<u32> = (0..n / 2).map(|i| (2 * i + offset) as u32).collect();
        Ok(Tensor::from_vec(v, n / 2, x.device())?)
    };
    let rows = x
        .index_select(&idx(h, 0)?, D::Minus2)?
        .maximum(&x.index_select(&idx(h, 1)?, D::Minus2)?)?;
    Ok(rows
        .index_select(&idx(w, 0)?, D::Minus1)?
        .maximum(&rows.index_select(&idx(w, 1)?, D::Minus1)?)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    let one = Tensor::ones_like(x)?;
    Ok(one.broadcast_div(&(one.clone() + x.neg()?.exp()?)?)?)
}
