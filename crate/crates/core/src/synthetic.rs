//! Procedural stand-ins for photo and cartoon datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imageproc::Image;

/// Smooth natural-looking image: low-frequency waves plus soft blobs.
pub fn synthetic_photo(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let mut data = vec![0.0; 3 * height * width];
    for c in 0..3 {
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(-3.0..3.0) * std::f64::consts::TAU / w,
                    rng.random_range(-3.0..3.0) * std::f64::consts::TAU / h,
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.05..0.15),
                )
            })
            .collect();
        let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.0..w),
                    rng.random_range(0.0..h),
                    rng.random_range(0.08..0.25) * w.min(h),
                    rng.random_range(-0.3..0.3),
                )
            })
            .collect();
        let base = rng.random_range(0.3..0.7);
        for y in 0..height {
            for x in 0..width {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = base;
                for &(fx, fy, ph, a) in &waves {
                    v += a * (fx * xf + fy * yf + ph).sin();
                }
                for &(cx, cy, r, a) in &blobs {
                    let d2 = (xf - cx).powi(2) + (yf - cy).powi(2);
                    v += a * (-d2 / (2.0 * r * r)).exp();
                }
                data[(c * height + y) * width + x] = v.clamp(0.02, 0.98);
            }
        }
    }
    Image::new(3, height, width, data).expect("valid synthetic photo")
}

/// Flat-shaded shapes with dark outlines on a flat background.
pub fn synthetic_cartoon(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        [rng.random_range(0.15..0.95), rng.random_range(0.15..0.95), rng.random_range(0.15..0.95)]
    };
    let n = height * width;
    let bg = color(&mut rng);
    let mut label = vec![0usize; n];
    let mut palette = vec![bg];
    for k in 1..=rng.random_range(3..6) {
        let (cx, cy) = (rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64));
        let (rx, ry) = (
            rng.random_range(0.1..0.35) * width as f64,
            rng.random_range(0.1..0.35) * height as f64,
        );
        let ellipse = rng.random_bool(0.5);
        palette.push(color(&mut rng));
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                let inside = if ellipse { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    label[y * width + x] = k;
                }
            }
        }
    }
    let mut data = vec![0.0; 3 * n];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let edge = (x + 1 < width && label[p + 1] != label[p]) || (y + 1 < height && label[p + width] != label[p]);
            for c in 0..3 {
                data[c * n + p] = if edge { 0.08 } else { palette[label[p]][c] };
            }
        }
    }
    Image::new(3, height, width, data).expect("valid synthetic cartoon")
}

/// `n_photos` photos and `n_cartoons` cartoons of one size.
pub fn synthetic_dataset(n_photos: usize, n_cartoons: usize, size: usize, seed: u64) -> (Vec<Image>, Vec<Image>) {
    let photos = (0..n_photos).map(|i| synthetic_photo(size, size, seed.wrapping_add(i as u64))).collect();
    let cartoons = (0..n_cartoons)
        .map(|i| synthetic_cartoon(size, size, seed.wrapping_add(1_000_003 + i as u64)))
        .collect();
    (photos, cartoons)
}
