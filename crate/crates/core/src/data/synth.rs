//! Deterministic synthetic datasets.
//!
//! Two kinds live here:
//!
//! - Noise sets ([`synth_ood`]): i.i.d. uniform or clipped-gaussian pixels,
//!   used as unseen OOD test sets.
//! - Glyph families ([`glyphs`]): 28x28 grayscale renderings of
//!   segment-display digits (the in-distribution task) and letters (the
//!   confusable OOD family). Both families share the same stroke vocabulary
//!   and rendering pipeline, differing only in which segments are lit, so a
//!   classifier trained on digits sees letters as near-distribution
//!   outliers. They are the self-contained stand-ins for the MNIST /
//!   Fashion-MNIST pairing when no dataset files are configured.
//!
//! Everything is a pure function of `(kind, n, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetRole, RawDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    Gaussian,
}

/// Noise dataset: `uniform` draws pixels in [0,1); `gaussian` draws from
/// N(0.5, 0.25^2) clipped to [0,1]. Values are pre-normalization pixel
/// intensities.
pub fn synth_ood(kind: NoiseKind, n: usize, shape: [usize; 3], seed: u64) -> Result<RawDataset> {
    if n == 0 {
        return Err(Error::Usage("synth_ood needs n >= 1".into()));
    }
    let [c, h, w] = shape;
    let count = n * c * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (name, pixels01) = match kind {
        NoiseKind::Uniform => (
            "uniform-noise",
            (0..count).map(|_| rng.random::<f32>()).collect::<Vec<_>>(),
        ),
        NoiseKind::Gaussian => {
            let normal = Normal::new(0.5f32, 0.25).expect("valid normal");
            (
                "gaussian-noise",
                (0..count)
                    .map(|_| normal.sample(&mut rng).clamp(0.0, 1.0))
                    .collect::<Vec<_>>(),
            )
        }
    };
    Ok(RawDataset {
        name: name.into(),
        shape: [n, c, h, w],
        pixels01,
        labels: None,
        role: DatasetRole::OutOfDistribution,
    })
}

pub mod glyphs {
    use super::*;

    pub const SIDE: usize = 28;

    #[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    pub enum GlyphFamily {
        Digits,
        Letters,
    }

    /// Segment endpoints on the unit square, seven-segment layout.
    const SEGMENTS: [([f32; 2], [f32; 2]); 7] = [
        ([0.25, 0.18], [0.75, 0.18]), // A: top
        ([0.75, 0.18], [0.75, 0.50]), // B: top right
        ([0.75, 0.50], [0.75, 0.82]), // C: bottom right
        ([0.25, 0.82], [0.75, 0.82]), // D: bottom
        ([0.25, 0.50], [0.25, 0.82]), // E: bottom left
        ([0.25, 0.18], [0.25, 0.50]), // F: top left
        ([0.25, 0.50], [0.75, 0.50]), // G: middle
    ];

    // Segment masks, bit i = SEGMENTS[i] lit.
    const DIGIT_CLASSES: [u8; 10] = [
        0b0111111, // 0: ABCDEF
        0b0000110, // 1: BC
        0b1011011, // 2: ABDEG
        0b1001111, // 3: ABCDG
        0b1100110, // 4: BCFG
        0b1101101, // 5: ACDFG
        0b1111101, // 6: ACDEFG
        0b0000111, // 7: ABC
        0b1111111, // 8: all
        0b1101111, // 9: ABCDFG
    ];

    // Letter shapes A b C d E F H J L P. Every mask differs from every digit
    // mask, usually by one or two segments, which is what makes the family a
    // near-distribution outlier set.
    const LETTER_CLASSES: [u8; 10] = [
        0b1110111, // A: ABCEFG
        0b1111100, // b: CDEFG
        0b0111001, // C: ADEF
        0b1011110, // d: BCDEG
        0b1111001, // E: ADEFG
        0b1110001, // F: AEFG
        0b1110110, // H: BCEFG
        0b0011110, // J: BCDE
        0b0111000, // L: DEF
        0b1110011, // P: ABEFG
    ];

    fn dist_to_segment(px: f32, py: f32, a: [f32; 2], b: [f32; 2]) -> f32 {
        let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
        let (wx, wy) = (px - a[0], py - a[1]);
        let len2 = vx * vx + vy * vy;
        let t = if len2 > 0.0 {
            ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (dx, dy) = (px - (a[0] + t * vx), py - (a[1] + t * vy));
        (dx * dx + dy * dy).sqrt()
    }

    /// Render one glyph with per-sample jitter into a SIDE x SIDE buffer.
    fn render(mask: u8, rng: &mut ChaCha8Rng, out: &mut [f32]) {
        let noise = Normal::new(0.0f32, 0.115).expect("valid normal");
        // global affine around the glyph center
        let angle = (rng.random::<f32>() - 0.5) * 0.42;
        let scale = 0.76 + rng.random::<f32>() * 0.38;
        let (tx, ty) = (
            (rng.random::<f32>() - 0.5) * 0.21,
            (rng.random::<f32>() - 0.5) * 0.21,
        );
        let (sin, cos) = angle.sin_cos();
        let place = |p: [f32; 2], jx: f32, jy: f32| -> [f32; 2] {
            let (x, y) = (p[0] + jx - 0.5, p[1] + jy - 0.5);
            [
                0.5 + scale * (cos * x - sin * y) + tx,
                0.5 + scale * (sin * x + cos * y) + ty,
            ]
        };
        let mut lit: Vec<([f32; 2], [f32; 2])> = Vec::with_capacity(7);
        for (i, seg) in SEGMENTS.iter().enumerate() {
            if mask & (1 << i) != 0 {
                let mut j = || (rng.random::<f32>() - 0.5) * 0.10;
                let (ax, ay, bx, by) = (j(), j(), j(), j());
                lit.push((place(seg.0, ax, ay), place(seg.1, bx, by)));
            }
        }
        let thickness = 0.028 + rng.random::<f32>() * 0.030;
        let ink = 0.38 + rng.random::<f32>() * 0.62;
        let aa = 1.0 / SIDE as f32;
        for py in 0..SIDE {
            for px in 0..SIDE {
                let (ux, uy) = (
                    (px as f32 + 0.5) / SIDE as f32,
                    (py as f32 + 0.5) / SIDE as f32,
                );
                let mut d = f32::INFINITY;
                for (a, b) in &lit {
                    d = d.min(dist_to_segment(ux, uy, *a, *b));
                }
                let coverage = ((thickness + aa * 0.5 - d) / aa).clamp(0.0, 1.0);
                let v = ink * coverage + noise.sample(rng);
                out[py * SIDE + px] = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Ten stroke-styled texture classes rendered through the same
    /// affine/noise pipeline as the glyphs: stripes, grids, rings, frames,
    /// crosses and dot lattices, all drawn with glyph-like stroke widths so
    /// their first-order pixel statistics resemble the digit family.
    ///
    /// Returns the signed ink margin (positive inside a stroke) in canonical
    /// units at canonical point (x, y) in the unit square.
    fn shape_margin(class: u8, x: f32, y: f32, phase: f32, size: f32, thick: f32) -> f32 {
        let (cx, cy) = (x - 0.5, y - 0.5);
        let line_dist = |t: f32, pitch: f32| -> f32 {
            let s = t / pitch + phase;
            (s - s.round()).abs() * pitch
        };
        match class {
            0 => thick - line_dist(y, 0.20 + size * 0.015),
            1 => thick - line_dist(x, 0.20 + size * 0.015),
            2 => thick - line_dist((x + y) * std::f32::consts::FRAC_1_SQRT_2, 0.20 + size * 0.015),
            3 => {
                let pitch = 0.24 + size * 0.015;
                thick - line_dist(x, pitch).min(line_dist(y, pitch))
            }
            4 => {
                let r = (cx * cx + cy * cy).sqrt();
                thick - (r - (0.14 + size * 0.010)).abs()
            }
            5 => {
                let r = (cx * cx + cy * cy).sqrt();
                thick - (r - (0.27 + size * 0.012)).abs()
            }
            6 => thick - (cx.abs().max(cy.abs()) - (0.14 + size * 0.010)).abs(),
            7 => thick - (cx.abs().max(cy.abs()) - (0.26 + size * 0.012)).abs(),
            8 => thick - cx.abs().min(cy.abs()),
            9 => {
                let pitch = 0.21 + size * 0.012;
                let sx = cx / pitch + phase;
                let sy = cy / pitch + phase;
                let (fx, fy) = ((sx - sx.round()) * pitch, (sy - sy.round()) * pitch);
                1.6 * thick - (fx * fx + fy * fy).sqrt()
            }
            _ => unreachable!(),
        }
    }

    fn render_shape(class: u8, rng: &mut ChaCha8Rng, out: &mut [f32]) {
        let noise = Normal::new(0.0f32, 0.115).expect("valid normal");
        let angle = (rng.random::<f32>() - 0.5) * 0.42;
        let scale = 0.76 + rng.random::<f32>() * 0.38;
        let (tx, ty) = (
            (rng.random::<f32>() - 0.5) * 0.21,
            (rng.random::<f32>() - 0.5) * 0.21,
        );
        let phase = rng.random::<f32>();
        let size = rng.random::<f32>() * 4.0;
        let thick = 0.028 + rng.random::<f32>() * 0.030;
        let ink = 0.38 + rng.random::<f32>() * 0.62;
        let (sin, cos) = angle.sin_cos();
        let aa = 1.0 / SIDE as f32;
        for py in 0..SIDE {
            for px in 0..SIDE {
                let (ux, uy) = (
                    (px as f32 + 0.5) / SIDE as f32 - 0.5,
                    (py as f32 + 0.5) / SIDE as f32 - 0.5,
                );
                // inverse affine back to canonical coordinates
                let (ix, iy) = ((ux - tx) / scale, (uy - ty) / scale);
                let (rx, ry) = (cos * ix + sin * iy, -sin * ix + cos * iy);
                let (cxp, cyp) = (rx + 0.5, ry + 0.5);
                let inside = (0.0..1.0).contains(&cxp) && (0.0..1.0).contains(&cyp);
                let margin = if inside {
                    shape_margin(class, cxp, cyp, phase, size, thick) * scale
                } else {
                    f32::NEG_INFINITY
                };
                let coverage = ((margin + aa * 0.5) / aa).clamp(0.0, 1.0);
                let v = ink * coverage + noise.sample(rng);
                out[py * SIDE + px] = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Deterministic shape dataset (out-of-distribution role).
    pub fn synth_shapes(n: usize, seed: u64) -> Result<RawDataset> {
        if n == 0 {
            return Err(Error::Usage("synth_shapes needs n >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels01 = vec![0.0f32; n * SIDE * SIDE];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 10) as u8;
            labels.push(class);
            render_shape(
                class,
                &mut rng,
                &mut pixels01[i * SIDE * SIDE..(i + 1) * SIDE * SIDE],
            );
        }
        Ok(RawDataset {
            name: "shapes-syn".into(),
            shape: [n, 1, SIDE, SIDE],
            pixels01,
            labels: Some(labels),
            role: DatasetRole::OutOfDistribution,
        })
    }

    /// Deterministic glyph dataset. Labels cycle through the 10 classes; the
    /// letters family is produced with the out-of-distribution role and its
    /// class labels retained for diagnostics only.
    pub fn synth_glyphs(family: GlyphFamily, n: usize, seed: u64) -> Result<RawDataset> {
        if n == 0 {
            return Err(Error::Usage("synth_glyphs needs n >= 1".into()));
        }
        let (classes, name, role) = match family {
            GlyphFamily::Digits => (&DIGIT_CLASSES, "digits-syn", DatasetRole::InDistribution),
            GlyphFamily::Letters => (
                &LETTER_CLASSES,
                "letters-syn",
                DatasetRole::OutOfDistribution,
            ),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels01 = vec![0.0f32; n * SIDE * SIDE];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 10) as u8;
            labels.push(class);
            render(
                classes[class as usize],
                &mut rng,
                &mut pixels01[i * SIDE * SIDE..(i + 1) * SIDE * SIDE],
            );
        }
        Ok(RawDataset {
            name: name.into(),
            shape: [n, 1, SIDE, SIDE],
            pixels01,
            labels: Some(labels),
            role,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::glyphs::{synth_glyphs, GlyphFamily};
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = synth_ood(NoiseKind::Uniform, 4, [1, 8, 8], 7).unwrap();
        let b = synth_ood(NoiseKind::Uniform, 4, [1, 8, 8], 7).unwrap();
        assert_eq!(a.pixels01, b.pixels01);
        let c = synth_ood(NoiseKind::Uniform, 4, [1, 8, 8], 8).unwrap();
        assert_ne!(a.pixels01, c.pixels01);

        let g1 = synth_glyphs(GlyphFamily::Digits, 20, 3).unwrap();
        let g2 = synth_glyphs(GlyphFamily::Digits, 20, 3).unwrap();
        assert_eq!(g1.pixels01, g2.pixels01);
    }

    #[test]
    fn uniform_mean_matches_law_of_large_numbers() {
        // n * prod(shape) >= 1e5
        let ds = synth_ood(NoiseKind::Uniform, 200, [1, 28, 28], 123).unwrap();
        assert!(ds.pixels01.len() >= 100_000);
        let mean: f64 = ds.pixels01.iter().map(|&v| v as f64).sum::<f64>()
            / ds.pixels01.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn gaussian_is_clipped_to_unit_interval() {
        let ds = synth_ood(NoiseKind::Gaussian, 50, [1, 28, 28], 5).unwrap();
        assert!(ds.pixels01.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // clipping actually happened somewhere (sigma 0.25 around 0.5)
        assert!(ds.pixels01.iter().any(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn glyph_datasets_have_cycling_labels_and_roles() {
        let digits = synth_glyphs(GlyphFamily::Digits, 25, 1).unwrap();
        assert_eq!(digits.role, DatasetRole::InDistribution);
        assert_eq!(digits.labels.as_ref().unwrap()[..12], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]);
        let letters = synth_glyphs(GlyphFamily::Letters, 10, 1).unwrap();
        assert_eq!(letters.role, DatasetRole::OutOfDistribution);
        // same pipeline, different ink patterns
        assert_ne!(digits.pixels01[..784], letters.pixels01[..784]);
    }

    #[test]
    fn glyphs_are_drawn_in_range() {
        let ds = synth_glyphs(GlyphFamily::Digits, 30, 11).unwrap();
        assert!(ds.pixels01.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // there is actual ink on every image
        for i in 0..30 {
            let img = &ds.pixels01[i * 784..(i + 1) * 784];
            let max = img.iter().fold(0.0f32, |m, &v| m.max(v));
            assert!(max > 0.5, "image {i} looks blank (max {max})");
        }
    }
}
