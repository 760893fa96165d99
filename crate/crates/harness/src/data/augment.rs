use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ttt_core::Tensor;

/// Random horizontal flip and zero-pad-then-crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Augment {
    pub flip: bool,
    /// Zero padding on each side before cropping back to the input size;
    /// `0` disables cropping.
    pub pad: usize,
}

impl Default for Augment {
    fn default() -> Self {
        Self { flip: true, pad: 4 }
    }
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let s = img.shape();
    let (w, c) = (s[1], s[2]);
    Tensor::from_fn(s, |i| {
        let (y, x, ch) = (i / (w * c), (i / c) % w, i % c);
        img.data()[(y * w + (w - 1 - x)) * c + ch]
    })
}

/// Output pixel `(y, x)` reads input `(y + dy, x + dx)`, zero outside.
pub fn crop_shift(img: &Tensor<f32>, dy: isize, dx: isize) -> Tensor<f32> {
    let s = img.shape();
    let (h, w, c) = (s[0] as isize, s[1] as isize, s[2]);
    Tensor::from_fn(s, |i| {
        let (y, x, ch) = ((i / (w as usize * c)) as isize, ((i / c) as isize) % w, i % c);
        let (sy, sx) = (y + dy, x + dx);
        if (0..h).contains(&sy) && (0..w).contains(&sx) {
            img.data()[(sy as usize * w as usize + sx as usize) * c + ch]
        } else {
            0.0
        }
    })
}

/// Applies `cfg` to an `[H×W×C]` image with randomness drawn from `seed`.
pub fn augment(img: &Tensor<f32>, cfg: &Augment, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random_bool(0.5);
    let pad = cfg.pad as i64;
    let dy = rng.random_range(-pad..=pad) as isize;
    let dx = rng.random_range(-pad..=pad) as isize;
    let mut out = if cfg.flip && flip { flip_horizontal(img) } else { img.clone() };
    if cfg.pad > 0 {
        out = crop_shift(&out, dy, dx);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn image(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[8, 8, 3], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = image(1);
        let cfg = Augment { flip: true, pad: 0 };
        for seed in 0..8 {
            assert_eq!(augment(&augment(&img, &cfg, seed), &cfg, seed), img);
        }
        assert_ne!(flip_horizontal(&img), img);
    }

    #[test]
    fn zero_shift_is_identity() {
        let img = image(2);
        assert_eq!(crop_shift(&img, 0, 0), img);
        let shifted = crop_shift(&img, 1, -2);
        assert_eq!(shifted.data()[(2 * 8 + 3) * 3], img.data()[(3 * 8 + 1) * 3]);
        assert_eq!(shifted.data()[7 * 8 * 3], 0.0);
    }

    proptest! {
        #[test]
        fn stays_in_unit_range(seed in 0u64..1000, aug_seed in 0u64..1000) {
            let out = augment(&image(seed), &Augment::default(), aug_seed);
            prop_assert!(out.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
