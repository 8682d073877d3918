use std::time::Instant;
use texpand::trainer::{TrainState, TrainingConfig};
use texpand::losses::LossWeights;
use texpand::generator::GeneratorSpec;
use candle_core::{Device, DType};

fn main() {
    let dir = std::env::temp_dir().join("texpand-bench");
    std::fs::create_dir_all(&dir).unwrap();
    let ex_path = dir.join("exemplar.png");
    let noise = texpand::noise::perlin(256, 256, 3, 4, 0.5).unwrap();
    let mut img = texpand::ImagePlane::new(3, 256, 256);
    for c in 0..3 { for y in 0..256 { for x in 0..256 {
        img.set(c, y, x, (noise.get(y, x) * 0.9).clamp(-1.0, 1.0));
    }}}
    img.save(&ex_path).unwrap();
    let extractor_path = dir.join("extractor.st");
    texpand::vgg::FeatureExtractor::random(0, &Device::Cpu, DType::F32).unwrap().save(&extractor_path).unwrap();

    let config = TrainingConfig {
        exemplar: ex_path,
        output_dir: dir.clone(),
        k: 64,
        total_iterations: 2000,
        lr_initial: 2e-4,
        lr_constant_until: 1000,
        adam_beta1: 0.5,
        adam_beta2: 0.999,
        batch_size: 1,
        losses: LossWeights::default(),
        generator: GeneratorSpec::default(),
        discriminator_layers: 5,
        seed: 0,
        checkpoint_every: 2000,
        log_every: 100,
        extractor: Some(extractor_path),
        deterministic: true,
    };
    let mut state = TrainState::new(config).unwrap();
    let t0 = Instant::now();
    for i in 0..5 {
        let t = Instant::now();
        let r = state.step().unwrap();
        println!("iter {i}: {:?} total_g {:.3}", t.elapsed(), r.total_g);
    }
    println!("avg {:?}", t0.elapsed() / 5);
}
