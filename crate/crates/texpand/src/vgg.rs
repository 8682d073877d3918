//! Frozen convolutional feature extractor for the style loss.
//!
//! The VGG-19 feature stack up to its fifth block's first convolution, with
//! taps on the ReLU-activated outputs of the first convolution of each block
//! (channel widths 64, 128, 256, 512, 512). Weights come from a named-tensor
//! archive; `scripts/fetch_vgg19.py` converts the published ImageNet-trained
//! model into that archive. Parameters are plain tensors, never variables, so
//! the extractor is frozen by construction.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::weights;

/// Channel widths at the five style taps.
pub const TAP_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];

/// Conv layers in order. `pool_before` inserts a 2x2 max-pool ahead of the
/// layer; `tap` marks layers whose ReLU output is a style tap.
const LAYOUT: &[(&str, usize, usize, bool, bool)] = &[
    // (name, in_channels, out_channels, pool_before, tap)
    ("conv1_1", 3, 64, false, true),
    ("conv1_2", 64, 64, false, false),
    ("conv2_1", 64, 128, true, true),
    ("conv2_2", 128, 128, false, false),
    ("conv3_1", 128, 256, true, true),
    ("conv3_2", 256, 256, false, false),
    ("conv3_3", 256, 256, false, false),
    ("conv3_4", 256, 256, false, false),
    ("conv4_1", 256, 512, true, true),
    ("conv4_2", 512, 512, false, false),
    ("conv4_3", 512, 512, false, false),
    ("conv4_4", 512, 512, false, false),
    ("conv5_1", 512, 512, true, true),
];

/// Default input normalization (ImageNet channel statistics on [0, 1] data).
pub const DEFAULT_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const DEFAULT_STD: [f64; 3] = [0.229, 0.224, 0.225];

struct ConvEntry {
    weight: Tensor,
    bias: Tensor,
    pool_before: bool,
    tap: bool,
}

pub struct FeatureExtractor {
    convs: Vec<ConvEntry>,
    mean: [f64; 3],
    std: [f64; 3],
    dtype: DType,
    device: Device,
}

impl FeatureExtractor {
    /// Load extractor weights from a named-tensor archive.
    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::ExtractorMissing {
                path: path.to_path_buf(),
            });
        }
        let (tensors, metadata) = weights::load_archive(path, device)?;
        let parse3 = |key: &str, default: [f64; 3]| -> Result<[f64; 3]> {
            match metadata.get(key) {
                None => Ok(default),
                Some(s) => {
                    let v: Vec<f64> = serde_json::from_str(s)?;
                    v.try_into()
                        .map_err(|_| Error::msg(format!("metadata '{key}' must have 3 entries")))
                }
            }
        };
        let mean = parse3("preprocess.mean", DEFAULT_MEAN)?;
        let std = parse3("preprocess.std", DEFAULT_STD)?;

        let mut convs = Vec::with_capacity(LAYOUT.len());
        let mut dtype = DType::F32;
        for &(name, in_c, out_c, pool_before, tap) in LAYOUT {
            let get = |suffix: &str| -> Result<Tensor> {
                tensors
                    .get(&format!("{name}.{suffix}"))
                    .cloned()
                    .ok_or_else(|| Error::ArchiveMissingTensor {
                        path: path.to_path_buf(),
                        name: format!("{name}.{suffix}"),
                    })
            };
            let weight = get("weight")?;
            let bias = get("bias")?;
            if weight.dims() != [out_c, in_c, 3, 3] || bias.dims() != [out_c] {
                return Err(Error::ArchiveCorrupt {
                    path: path.to_path_buf(),
                    reason: format!(
                        "layer {name} has shapes {:?}/{:?}, expected [{out_c},{in_c},3,3]/[{out_c}]",
                        weight.dims(),
                        bias.dims()
                    ),
                });
            }
            dtype = weight.dtype();
            convs.push(ConvEntry {
                weight,
                bias,
                pool_before,
                tap,
            });
        }
        Ok(Self {
            convs,
            mean,
            std,
            dtype,
            device: device.clone(),
        })
    }

    /// Randomly initialized extractor with the same architecture, for offline
    /// use and gradient testing. He-style initialization keeps activation
    /// magnitudes stable through the stack.
    pub fn random(seed: u64, device: &Device, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(LAYOUT.len());
        for &(_name, in_c, out_c, pool_before, tap) in LAYOUT {
            let fan_in = (in_c * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            let n = out_c * in_c * 9;
            let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..out_c).map(|_| 0.01 * normal.sample(&mut rng)).collect();
            convs.push(ConvEntry {
                weight: Tensor::from_vec(w, (out_c, in_c, 3, 3), device)?.to_dtype(dtype)?,
                bias: Tensor::from_vec(b, (out_c,), device)?.to_dtype(dtype)?,
                pool_before,
                tap,
            });
        }
        Ok(Self {
            convs,
            mean: DEFAULT_MEAN,
            std: DEFAULT_STD,
            dtype,
            device: device.clone(),
        })
    }

    /// Write the extractor to a named-tensor archive.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = BTreeMap::new();
        for (entry, &(name, ..)) in self.convs.iter().zip(LAYOUT) {
            tensors.insert(format!("{name}.weight"), entry.weight.clone());
            tensors.insert(format!("{name}.bias"), entry.bias.clone());
        }
        let mut metadata = BTreeMap::new();
        metadata.insert(
            "preprocess.mean".to_string(),
            serde_json::to_string(&self.mean)?,
        );
        metadata.insert(
            "preprocess.std".to_string(),
            serde_json::to_string(&self.std)?,
        );
        weights::save_archive(path, &tensors, &metadata)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// SHA-256 over all parameter bytes, for frozen-ness checks.
    pub fn parameter_hash(&self) -> Result<String> {
        use sha2::Digest;
        let mut h = sha2::Sha256::new();
        for entry in &self.convs {
            for t in [&entry.weight, &entry.bias] {
                for v in t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                    h.update(v.to_le_bytes());
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Map a canonical-range (N, 3, H, W) image to the extractor's expected
    /// normalization.
    fn preprocess(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.to_dtype(self.dtype)?;
        let x = ((x + 1.0)? * 0.5)?;
        let mean = Tensor::from_vec(self.mean.to_vec(), (1, 3, 1, 1), &self.device)?
            .to_dtype(self.dtype)?;
        let std = Tensor::from_vec(self.std.to_vec(), (1, 3, 1, 1), &self.device)?
            .to_dtype(self.dtype)?;
        Ok(x.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    /// ReLU-activated feature maps at the five taps.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = self.preprocess(x)?;
        let mut taps = Vec::with_capacity(5);
        for entry in &self.convs {
            if entry.pool_before {
                x = crate::nn::max_pool2x2(&x)?;
            }
            x = x.conv2d(&entry.weight, 1, 1, 1, 1)?;
            x = x.broadcast_add(&entry.bias.reshape((1, (), 1, 1))?)?;
            x = x.relu()?;
            if entry.tap {
                taps.push(x.clone());
            }
        }
        debug_assert_eq!(taps.len(), TAP_CHANNELS.len());
        Ok(taps)
    }
}
