//! Deterministic synthetic image corpus for tests and demos.
//!
//! Content images are muted gradients with soft blobs; style images carry
//! saturated palettes and strong repeating structure so their channel
//! statistics are far apart. Everything derives from one seed, so runs and
//! machines agree bit-for-bit after PNG quantization.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imageio;
use crate::rng::SeedTree;
use crate::tensor::Tensor;

pub const FIXTURE_SIDE: usize = 64;
pub const FIXTURE_CONTENT_COUNT: usize = 8;
pub const FIXTURE_STYLE_COUNT: usize = 4;
pub const FIXTURE_HOLDOUT_COUNT: usize = 2;

pub struct FixtureCorpus {
    pub content: Vec<Tensor>,
    pub styles: Vec<Tensor>,
    /// Held-out (content, style) pairs; the style half references the
    /// training styles, the content half is unseen.
    pub holdout: Vec<(Tensor, Tensor)>,
}

fn image_from_fn(side: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Tensor {
    let mut data = vec![0.0f32; 3 * side * side];
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                data[c * side * side + y * side + x] = f(c, y, x).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_vec(&[1, 3, side, side], data).expect("sized buffer")
}

fn content_image(rng: &mut ChaCha8Rng, side: usize) -> Tensor {
    let gx: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
    let gy: [f32; 3] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
    let base: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.35..0.65));
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.08..0.22),
                std::array::from_fn(|_| rng.gen_range(-0.35..0.35)),
            )
        })
        .collect();
    image_from_fn(side, |c, y, x| {
        let u = x as f32 / side as f32;
        let v = y as f32 / side as f32;
        let mut val = base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5);
        for (bx, by, r, amp) in &blobs {
            let d2 = (u - bx).powi(2) + (v - by).powi(2);
            val += amp[c] * (-d2 / (2.0 * r * r)).exp();
        }
        val
    })
}

fn style_image(rng: &mut ChaCha8Rng, index: usize, side: usize) -> Tensor {
    let a: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.45));
    let b: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.55..1.0));
    match index % 4 {
        0 => {
            // Angled stripes.
            let freq = rng.gen_range(3.0..6.0);
            let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
            let (sin, cos) = angle.sin_cos();
            image_from_fn(side, |c, y, x| {
                let u = x as f32 / side as f32;
                let v = y as f32 / side as f32;
                let phase = (u * cos + v * sin) * freq * std::f32::consts::TAU;
                if phase.sin() > 0.0 {
                    a[c]
                } else {
                    b[c]
                }
            })
        }
        1 => {
            // Checkerboard.
            let cell = rng.gen_range(6..12usize);
            image_from_fn(side, |c, y, x| {
                if (x / cell + y / cell) % 2 == 0 {
                    a[c]
                } else {
                    b[c]
                }
            })
        }
        2 => {
            // Smooth interference waves.
            let f1 = rng.gen_range(2.0..4.0);
            let f2 = rng.gen_range(4.0..7.0);
            image_from_fn(side, |c, y, x| {
                let u = x as f32 / side as f32;
                let v = y as f32 / side as f32;
                let w = ((u * f1 * std::f32::consts::TAU).sin()
                    + (v * f2 * std::f32::consts::TAU).cos())
                    * 0.25
                    + 0.5;
                a[c] + (b[c] - a[c]) * w
            })
        }
        _ => {
            // Blocky mosaic from a coarse random grid.
            let cells = 8;
            let grid: Vec<f32> = (0..3 * cells * cells).map(|_| rng.gen_range(0.0..1.0)).collect();
            image_from_fn(side, |c, y, x| {
                let gy = y * cells / side;
                let gx = x * cells / side;
                let w = grid[c * cells * cells + gy * cells + gx];
                a[c] + (b[c] - a[c]) * w
            })
        }
    }
}

/// Builds the full corpus in memory.
pub fn fixture_corpus(seed: u64) -> FixtureCorpus {
    let seeds = SeedTree::new(seed).child("fixtures");
    let content = (0..FIXTURE_CONTENT_COUNT)
        .map(|i| content_image(&mut seeds.stream(&format!("content.{i}")), FIXTURE_SIDE))
        .collect();
    let styles: Vec<Tensor> = (0..FIXTURE_STYLE_COUNT)
        .map(|i| style_image(&mut seeds.stream(&format!("style.{i}")), i, FIXTURE_SIDE))
        .collect();
    let holdout = (0..FIXTURE_HOLDOUT_COUNT)
        .map(|i| {
            let c = content_image(&mut seeds.stream(&format!("holdout.{i}")), FIXTURE_SIDE);
            (c, styles[i % FIXTURE_STYLE_COUNT].clone())
        })
        .collect();
    FixtureCorpus {
        content,
        styles,
        holdout,
    }
}

/// Writes the corpus as PNGs: `content/`, `style/` and `holdout/` subdirs.
pub fn write_fixture_corpus(dir: &Path, seed: u64) -> Result<()> {
    let corpus = fixture_corpus(seed);
    for (sub, images) in [
        ("content", &corpus.content),
        ("style", &corpus.styles),
    ] {
        let subdir = dir.join(sub);
        std::fs::create_dir_all(&subdir)?;
        for (i, img) in images.iter().enumerate() {
            imageio::save_png(&subdir.join(format!("{sub}_{i:02}.png")), img)?;
        }
    }
    let subdir = dir.join("holdout");
    std::fs::create_dir_all(&subdir)?;
    for (i, (c, _)) in corpus.holdout.iter().enumerate() {
        imageio::save_png(&subdir.join(format!("holdout_{i:02}.png")), c)?;
    }
    Ok(())
}
