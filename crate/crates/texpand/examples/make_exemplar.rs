//! Regenerates the stationary test exemplar at assets/exemplar256.png.
//! The image is seeded gradient noise, so it is reproducible from source.

fn main() {
    let side = 256;
    let base = texpand::noise::perlin(side, side, 40, 4, 0.55).unwrap();
    let tint = texpand::noise::perlin(side, side, 41, 2, 0.5).unwrap();
    let mut img = texpand::ImagePlane::new(3, side, side);
    for y in 0..side {
        for x in 0..side {
            let v = base.get(y, x);
            let t = tint.get(y, x);
            // Warm/cool color split keeps per-channel statistics stationary.
            img.set(0, y, x, (0.55 * v + 0.25 * t).clamp(-1.0, 1.0));
            img.set(1, y, x, (0.60 * v).clamp(-1.0, 1.0));
            img.set(2, y, x, (0.55 * v - 0.25 * t).clamp(-1.0, 1.0));
        }
    }
    std::fs::create_dir_all("assets").unwrap();
    img.save("assets/exemplar256.png").unwrap();
    println!("wrote assets/exemplar256.png");
}
