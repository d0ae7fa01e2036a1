//! Reference PSNR and SSIM on RGB images in [0, 1].
//!
//! SSIM follows the standard configuration: 11x11 Gaussian window with
//! sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0, valid-window mean
//! over all three channels.

use crate::error::{Error, Result};
use crate::image::Image;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB with peak 1.0. Identical images return
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(format!(
            "psnr image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mut se = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        se += d * d;
    }
    let mse = se / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable valid-mode Gaussian filter of one channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    // Horizontal pass.
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * plane[y * w + x + i];
            }
            tmp[y * wo + x] = s;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * wo + x];
            }
            out[y * wo + x] = s;
        }
    }
    out
}

/// Mean structural similarity over valid windows and channels, in [-1, 1].
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(format!(
            "ssim image sizes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    let mut pa = vec![0.0; h * w];
    let mut pb = vec![0.0; h * w];
    let mut paa = vec![0.0; h * w];
    let mut pbb = vec![0.0; h * w];
    let mut pab = vec![0.0; h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let va = a.get(y, x, c);
                let vb = b.get(y, x, c);
                pa[y * w + x] = va;
                pb[y * w + x] = vb;
                paa[y * w + x] = va * va;
                pbb[y * w + x] = vb * vb;
                pab[y * w + x] = va * vb;
            }
        }
        let mu_a = filter_valid(&pa, h, w, &k);
        let mu_b = filter_valid(&pb, h, w, &k);
        let m_aa = filter_valid(&paa, h, w, &k);
        let m_bb = filter_valid(&pbb, h, w, &k);
        let m_ab = filter_valid(&pab, h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(h: usize, w: usize) -> (Image, Image) {
        let mut a = Image::zeros(h, w).unwrap();
        let mut b = Image::zeros(h, w).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = ((y + x) % 2) as f64;
                for c in 0..3 {
                    a.set(y, x, c, v);
                    b.set(y, x, c, 1.0 - v);
                }
            }
        }
        (a, b)
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = Image::uniform(16, 16, [0.3, 0.5, 0.7]).unwrap();
        assert_eq!(psnr(&img, &img).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_tenth_step_is_twenty_db() {
        let a = Image::uniform(16, 16, [0.5; 3]).unwrap();
        let b = Image::uniform(16, 16, [0.6; 3]).unwrap();
        let v = psnr(&a, &b).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = Image::uniform(12, 16, [0.2, 0.4, 0.9]).unwrap();
        let b = Image::uniform(12, 16, [0.25, 0.38, 0.7]).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = Image::uniform(12, 16, [0.5; 3]).unwrap();
        let b = Image::uniform(16, 12, [0.5; 3]).unwrap();
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let base = Image::uniform(24, 24, [0.5; 3]).unwrap();
        let noise: Vec<f64> = (0..24 * 24 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let data = base
                .data()
                .iter()
                .zip(&noise)
                .map(|(&v, &n)| (v + amp * n).clamp(0.0, 1.0))
                .collect();
            let noisy = Image::from_pixels(24, 24, data).unwrap();
            let p = psnr(&base, &noisy).unwrap();
            assert!(p < last, "amp {amp}: {p} !< {last}");
            last = p;
        }
    }

    #[test]
    fn ssim_self_is_one() {
        let mut img = Image::zeros(20, 20).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                for c in 0..3 {
                    img.set(y, x, c, ((y * 31 + x * 7 + c * 3) % 17) as f64 / 16.0);
                }
            }
        }
        let v = ssim(&img, &img).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let (a, b) = checkerboard(20, 24);
        let d = (ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs();
        assert!(d < 1e-12);
    }

    #[test]
    fn ssim_inverted_checkerboard_is_strongly_negative() {
        // Frozen from an independent elementwise evaluation of the SSIM
        // formula (and cross-checked against scikit-image): -0.996406468357.
        let (a, b) = checkerboard(32, 32);
        let v = ssim(&a, &b).unwrap();
        assert!(v < 0.0, "got {v}");
        assert!((v - (-0.996406468357)).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::uniform(10, 16, [0.5; 3]).unwrap();
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_invariant_to_common_shift_of_equal_mean_pair() {
        // b differs from a by a tiny +-eps checkerboard, keeping local means
        // essentially equal; a common brightness shift must not change SSIM.
        let mut a = Image::zeros(24, 24).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                for c in 0..3 {
                    a.set(y, x, c, 0.3 + 0.2 * ((y * 5 + x * 3 + c) % 11) as f64 / 10.0);
                }
            }
        }
        let eps = 1e-4;
        let mut b = a.clone();
        for y in 0..24 {
            for x in 0..24 {
                let sign = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
                for c in 0..3 {
                    b.set(y, x, c, a.get(y, x, c) + eps * sign);
                }
            }
        }
        let shift = 0.2;
        let sa = Image::from_pixels(24, 24, a.data().iter().map(|v| v + shift).collect()).unwrap();
        let sb = Image::from_pixels(24, 24, b.data().iter().map(|v| v + shift).collect()).unwrap();
        let before = ssim(&a, &b).unwrap();
        let after = ssim(&sa, &sb).unwrap();
        assert!((before - after).abs() < 1e-6, "before {before} after {after}");
    }
}
