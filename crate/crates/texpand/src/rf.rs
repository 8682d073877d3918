//! Receptive-field arithmetic for convolutional stacks.
//!
//! The receptive field after a layer with kernel k and stride s grows as
//! `rf' = rf + (k - 1) * jump` with `jump' = jump * stride`, where `jump` is
//! the input-pixel distance between adjacent units of the current layer.
//! Transposed convolutions divide the jump instead of multiplying it.

/// One convolutional step of a network, as seen by the RF arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Conv { kernel: usize, stride: usize },
    Deconv { kernel: usize, stride: usize },
}

/// Receptive field of a single unit after applying `steps` in order, in input
/// pixels. Exact for pure convolution stacks; for stacks containing transposed
/// convolutions the fractional jump is rounded up at the end, giving a tight
/// upper bound on the support window.
pub fn receptive_field(steps: &[Step]) -> usize {
    let mut rf = 1.0f64;
    let mut jump = 1.0f64;
    for step in steps {
        match *step {
            Step::Conv { kernel, stride } => {
                rf += (kernel - 1) as f64 * jump;
                jump *= stride as f64;
            }
            Step::Deconv { kernel, stride } => {
                jump /= stride as f64;
                rf += (kernel - 1) as f64 * jump;
            }
        }
    }
    rf.ceil() as usize
}

/// Encoder plus residual-chain steps of the generator: a 7x7 stride-1 layer,
/// two 3x3 stride-2 layers, then two 3x3 stride-1 convolutions per residual
/// block.
pub fn generator_core_steps(num_resblocks: usize) -> Vec<Step> {
    let mut steps = vec![
        Step::Conv { kernel: 7, stride: 1 },
        Step::Conv { kernel: 3, stride: 2 },
        Step::Conv { kernel: 3, stride: 2 },
    ];
    for _ in 0..num_resblocks {
        steps.push(Step::Conv { kernel: 3, stride: 1 });
        steps.push(Step::Conv { kernel: 3, stride: 1 });
    }
    steps
}

/// Steps of the full generator: core, channel-doubling convolution, three
/// stride-2 transposed convolutions, and the final 7x7 convolution.
pub fn generator_full_steps(num_resblocks: usize) -> Vec<Step> {
    let mut steps = generator_core_steps(num_resblocks);
    steps.push(Step::Conv { kernel: 3, stride: 1 });
    for _ in 0..3 {
        steps.push(Step::Deconv { kernel: 3, stride: 2 });
    }
    steps.push(Step::Conv { kernel: 7, stride: 1 });
    steps
}

/// Steps of an L-layer PatchGAN discriminator body: L - 2 stride-2 layers
/// followed by two stride-1 layers, all with kernel 4. The 1x1 head does not
/// change the receptive field.
pub fn discriminator_steps(num_layers: usize) -> Vec<Step> {
    let mut steps = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let stride = if i < num_layers - 2 { 2 } else { 1 };
        steps.push(Step::Conv { kernel: 4, stride });
    }
    steps
}

/// Patch size (receptive field of one pre-head discriminator unit) for an
/// L-layer PatchGAN.
pub fn patch_size(num_layers: usize) -> usize {
    receptive_field(&discriminator_steps(num_layers))
}
