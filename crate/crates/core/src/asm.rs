//! Atmospheric scattering model: haze synthesis I = J*t + A*(1 - t) with
//! t = exp(-beta * d), its algebraic inverse, and a seeded synthetic
//! parameter generator for building training data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Default transmission clamp used when inverting the model.
pub const T_FLOOR_DEFAULT: f64 = 0.05;

/// Synthetic depth fields are normalized into [0, DEPTH_MAX].
pub const DEPTH_MAX: f64 = 3.0;

/// The physics bundle: airlight, scattering coefficient, depth, transmission.
///
/// `transmission` always equals `exp(-beta * depth)` elementwise; both
/// constructors maintain this.
#[derive(Clone, Debug)]
pub struct AsmParams {
    a: [f64; 3],
    beta: f64,
    depth: Tensor<f64>,
    transmission: Tensor<f64>,
}

impl AsmParams {
    /// Build from airlight, scattering coefficient, and a depth map.
    pub fn from_depth(a: [f64; 3], beta: f64, depth: Tensor<f64>) -> Result<Self> {
        validate_airlight(&a)?;
        if depth.shape().len() != 2 {
            return Err(Error::shape(format!(
                "depth must be H x W, got {:?}",
                depth.shape()
            )));
        }
        let transmission = transmission_from_depth(&depth, beta)?;
        Ok(AsmParams {
            a,
            beta,
            depth,
            transmission,
        })
    }

    /// Build from airlight and a transmission map directly. Depth is
    /// back-filled as -ln(t) with beta = 1 so the type invariant holds.
    pub fn from_transmission(a: [f64; 3], transmission: Tensor<f64>) -> Result<Self> {
        validate_airlight(&a)?;
        if transmission.shape().len() != 2 {
            return Err(Error::shape(format!(
                "transmission must be H x W, got {:?}",
                transmission.shape()
            )));
        }
        for &t in transmission.data() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::domain(format!(
                    "transmission value {t} outside (0, 1]"
                )));
            }
        }
        let depth = transmission.map(|t| -t.ln());
        Ok(AsmParams {
            a,
            beta: 1.0,
            depth,
            transmission,
        })
    }

    pub fn airlight(&self) -> [f64; 3] {
        self.a
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn depth(&self) -> &Tensor<f64> {
        &self.depth
    }

    pub fn transmission(&self) -> &Tensor<f64> {
        &self.transmission
    }
}

fn validate_airlight(a: &[f64; 3]) -> Result<()> {
    for &v in a {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("airlight component {v} outside [0, 1]")));
        }
    }
    Ok(())
}

/// t = exp(-beta * depth), elementwise. Outputs lie in (0, 1].
pub fn transmission_from_depth(depth: &Tensor<f64>, beta: f64) -> Result<Tensor<f64>> {
    if !(beta >= 0.0) {
        return Err(Error::domain(format!("beta must be >= 0, got {beta}")));
    }
    for &d in depth.data() {
        if !(d >= 0.0) {
            return Err(Error::domain(format!("depth entry {d} must be >= 0")));
        }
    }
    Ok(depth.map(|d| (-beta * d).exp()))
}

/// Apply the scattering model: out = clean * t + A * (1 - t), clamped to [0, 1].
pub fn synthesize_haze(clean: &Image, params: &AsmParams) -> Result<Image> {
    let (h, w) = (clean.height(), clean.width());
    if params.transmission.shape() != [h, w] {
        return Err(Error::shape(format!(
            "transmission shape {:?} does not match image {}x{}",
            params.transmission.shape(),
            h,
            w
        )));
    }
    let mut out = Image::zeros(h, w)?;
    let t = params.transmission.data();
    for y in 0..h {
        for x in 0..w {
            let tv = t[y * w + x];
            for c in 0..3 {
                let v = clean.get(y, x, c) * tv + params.a[c] * (1.0 - tv);
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Algebraic inverse: J = (I - A * (1 - t')) / t' with t' = max(t, t_floor),
/// clamped to [0, 1].
pub fn invert_asm(hazy: &Image, params: &AsmParams, t_floor: f64) -> Result<Image> {
    if !(t_floor > 0.0 && t_floor < 1.0) {
        return Err(Error::domain(format!(
            "t_floor must be in (0, 1), got {t_floor}"
        )));
    }
    let (h, w) = (hazy.height(), hazy.width());
    if params.transmission.shape() != [h, w] {
        return Err(Error::shape(format!(
            "transmission shape {:?} does not match image {}x{}",
            params.transmission.shape(),
            h,
            w
        )));
    }
    let mut out = Image::zeros(h, w)?;
    let t = params.transmission.data();
    for y in 0..h {
        for x in 0..w {
            let tv = t[y * w + x].max(t_floor);
            for c in 0..3 {
                let v = (hazy.get(y, x, c) - params.a[c] * (1.0 - tv)) / tv;
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Seeded random parameters for synthetic haze: a smooth low-frequency depth
/// field (three planar ramps plus blurred noise, normalized to [0, DEPTH_MAX]),
/// beta uniform in `beta_range`, airlight per channel uniform in `a_range`.
pub fn random_asm_params(
    height: usize,
    width: usize,
    rng_seed: u64,
    beta_range: (f64, f64),
    a_range: (f64, f64),
) -> Result<AsmParams> {
    if height == 0 || width == 0 {
        return Err(Error::domain("depth field dimensions must be positive"));
    }
    if !(beta_range.0 >= 0.0 && beta_range.0 <= beta_range.1) {
        return Err(Error::domain(format!(
            "beta range [{}, {}] is empty or negative",
            beta_range.0, beta_range.1
        )));
    }
    if !(a_range.0 >= 0.0 && a_range.0 <= a_range.1 && a_range.1 <= 1.0) {
        return Err(Error::domain(format!(
            "airlight range [{}, {}] must be a nonempty subinterval of [0, 1]",
            a_range.0, a_range.1
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let depth = random_depth_field(height, width, &mut rng);
    let beta = rng.gen_range(beta_range.0..=beta_range.1);
    let a = [
        rng.gen_range(a_range.0..=a_range.1),
        rng.gen_range(a_range.0..=a_range.1),
        rng.gen_range(a_range.0..=a_range.1),
    ];
    AsmParams::from_depth(a, beta, depth)
}

/// Smooth low-frequency depth field: three planar ramps plus blurred noise,
/// normalized to [0, DEPTH_MAX]. Consumes draws from `rng` deterministically.
pub fn random_depth_field(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut field = vec![0.0f64; height * width];

    // Three planar ramps with random orientation and amplitude.
    for _ in 0..3 {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.gen_range(0.4..1.2);
        let (ct, st) = (theta.cos(), theta.sin());
        for y in 0..height {
            let yn = y as f64 / height.max(1) as f64;
            for x in 0..width {
                let xn = x as f64 / width.max(1) as f64;
                field[y * width + x] += amp * (ct * xn + st * yn);
            }
        }
    }

    // Low-frequency noise: coarse white noise, bilinearly upsampled.
    let ch = (height / 8).max(2);
    let cw = (width / 8).max(2);
    let coarse: Vec<f64> = (0..ch * cw).map(|_| rng.gen_range(-0.5..0.5)).collect();
    for y in 0..height {
        let fy = y as f64 / height as f64 * (ch - 1) as f64;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(ch - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = x as f64 / width as f64 * (cw - 1) as f64;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(cw - 1);
            let wx = fx - x0 as f64;
            let v = coarse[y0 * cw + x0] * (1.0 - wy) * (1.0 - wx)
                + coarse[y0 * cw + x1] * (1.0 - wy) * wx
                + coarse[y1 * cw + x0] * wy * (1.0 - wx)
                + coarse[y1 * cw + x1] * wy * wx;
            field[y * width + x] += v;
        }
    }

    // Normalize to [0, DEPTH_MAX].
    let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for v in &mut field {
        *v = (*v - min) / span * DEPTH_MAX;
    }
    Tensor::from_vec(&[height, width], field).expect("sized above")
}
