//! Implicit neural representation: pixel-center coordinate grids, sinusoidal
//! positional encoding, feature unfolding, and a coordinate-conditioned MLP
//! decoder, plus a standalone single-image fitting mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{kernels, Graph, ParamStore, ParamVars, Var};
use crate::image::Image;
use crate::network::blocks::Mlp;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::adam::{adam_step, AdamParams, AdamState};

/// Default learning rate for [`fit_image`].
pub const FIT_LR_DEFAULT: f64 = 3e-3;

/// Pixel-center coordinates in [-1, 1]^2 as an [H, W, 2] tensor, entry
/// (x, y) with x along width: corner pixels land on +-(1 - 1/W), +-(1 - 1/H).
pub fn make_grid(height: usize, width: usize) -> Result<Tensor<f64>> {
    if height == 0 || width == 0 {
        return Err(Error::domain("grid dimensions must be positive"));
    }
    let mut data = Vec::with_capacity(height * width * 2);
    for y in 0..height {
        let yn = (2.0 * y as f64 + 1.0) / height as f64 - 1.0;
        for x in 0..width {
            let xn = (2.0 * x as f64 + 1.0) / width as f64 - 1.0;
            data.push(xn);
            data.push(yn);
        }
    }
    Tensor::from_vec(&[height, width, 2], data)
}

/// Sinusoidal encoding over L octaves. Each scalar coordinate expands to
/// [sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{L-1} pi v), cos(2^{L-1} pi v)],
/// concatenated per input component, so the last axis grows from D to 2*L*D.
pub fn positional_encode<T: Scalar>(x: &Tensor<T>, l: usize) -> Result<Tensor<T>> {
    if l == 0 {
        return Err(Error::domain("frequency count L must be >= 1"));
    }
    let shape = x.shape();
    if shape.is_empty() {
        return Err(Error::shape("positional_encode needs at least one axis"));
    }
    let d = shape[shape.len() - 1];
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let out_d = 2 * l * d;
    let mut out = Vec::with_capacity(rows * out_d);
    let pi = T::from_f64(std::f64::consts::PI);
    for r in 0..rows {
        for c in 0..d {
            let v = x.data()[r * d + c];
            let mut freq = pi;
            for _ in 0..l {
                let arg = freq * v;
                out.push(arg.sin());
                out.push(arg.cos());
                freq = freq + freq;
            }
        }
    }
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.push(out_d);
    Tensor::from_vec(&out_shape, out)
}

/// Neighborhood concatenation of a [C, H, W] feature map: each pixel's output
/// is the channel vectors of its (2r+1)^2 neighbors in row-major neighbor
/// order, replicate-padded at the borders.
pub fn feature_unfold<T: Scalar>(e: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match e.shape()[..] {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::shape(format!(
                "feature_unfold expects [C, H, W], got {:?}",
                e.shape()
            )))
        }
    };
    let win = 2 * radius + 1;
    let mut out = vec![T::zero(); c * win * win * h * w];
    kernels::unfold_fwd(e.data(), 1, c, h, w, radius, &mut out);
    Tensor::from_vec(&[c * win * win, h, w], out)
}

#[derive(Clone, Copy, Debug)]
pub struct InrDecoderConfig {
    /// Width of the per-pixel feature vector E' (0 = coordinates only).
    pub feature_width: usize,
    /// Octave count L of the positional encoding.
    pub pos_l: usize,
    /// Neighborhood radius used when unfolding features for this decoder.
    pub unfold_radius: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for InrDecoderConfig {
    fn default() -> Self {
        InrDecoderConfig {
            feature_width: 0,
            pos_l: 4,
            unfold_radius: 1,
            hidden_width: 64,
            hidden_layers: 4,
        }
    }
}

impl InrDecoderConfig {
    /// MLP input width: feature channels plus encoded coordinate width.
    pub fn in_width(&self) -> usize {
        self.feature_width + 4 * self.pos_l
    }

    fn mlp_widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_width()];
        w.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        w.push(3);
        w
    }
}

/// Coordinate-conditioned MLP mapping (features, encoded coords) to RGB,
/// with a sigmoid bounding outputs into [0, 1].
pub struct InrDecoder<T: Scalar> {
    cfg: InrDecoderConfig,
    store: ParamStore<T>,
    mlp: Mlp,
}

impl<T: Scalar> InrDecoder<T> {
    pub fn init(cfg: InrDecoderConfig, seed: u64) -> Result<Self> {
        if cfg.pos_l == 0 {
            return Err(Error::domain("decoder needs L >= 1"));
        }
        if cfg.hidden_layers == 0 || cfg.hidden_width == 0 {
            return Err(Error::domain("decoder needs at least one hidden layer"));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(&mut store, &mut rng, "decoder", &cfg.mlp_widths());
        Ok(InrDecoder { cfg, store, mlp })
    }

    pub fn config(&self) -> &InrDecoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Graph-level decode: optional [1, C', H, W] features plus [H*W, 4L]
    /// encoded coordinates to a [1, 3, H, W] image in [0, 1].
    pub fn decode_graph(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        features: Option<Var>,
        enc_rows: Var,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let (rows, ew) = g.value(enc_rows).dims2()?;
        if rows != height * width || ew != 4 * self.cfg.pos_l {
            return Err(Error::shape(format!(
                "encoding shape [{rows}, {ew}] does not match {height}x{width} at L={}",
                self.cfg.pos_l
            )));
        }
        let in_rows = match features {
            Some(f) => {
                let (_, c, fh, fw) = g.value(f).dims4()?;
                if (fh, fw) != (height, width) {
                    return Err(Error::shape("feature spatial dims mismatch"));
                }
                if c != self.cfg.feature_width {
                    return Err(Error::shape(format!(
                        "decoder expects {} feature channels, got {c}",
                        self.cfg.feature_width
                    )));
                }
                let frows = g.nchw_to_rows(f);
                g.concat_cols(&[frows, enc_rows])
            }
            None => {
                if self.cfg.feature_width != 0 {
                    return Err(Error::shape(format!(
                        "decoder expects {} feature channels, got none",
                        self.cfg.feature_width
                    )));
                }
                enc_rows
            }
        };
        let out = self.mlp.forward(g, pv, in_rows)?;
        let bounded = g.sigmoid(out);
        Ok(g.rows_to_nchw(bounded, 1, height, width))
    }

    /// Per-pixel decode of an already-unfolded feature map E' [C', H, W] and
    /// encoded coordinates X' [H, W, 4L].
    pub fn decode(&self, features: Option<&Tensor<T>>, encoding: &Tensor<T>) -> Result<Image> {
        let (h, w, ew) = match encoding.shape()[..] {
            [h, w, ew] => (h, w, ew),
            _ => {
                return Err(Error::shape(format!(
                    "encoding must be [H, W, 4L], got {:?}",
                    encoding.shape()
                )))
            }
        };
        if ew != 4 * self.cfg.pos_l {
            return Err(Error::shape(format!(
                "encoding width {ew} != 4L = {}",
                4 * self.cfg.pos_l
            )));
        }
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &self.store);
        let enc_rows = g.input(encoding.clone().reshaped(&[h * w, ew])?);
        let fvar = match features {
            Some(f) => {
                let (c, fh, fw) = match f.shape()[..] {
                    [c, fh, fw] => (c, fh, fw),
                    _ => {
                        return Err(Error::shape(format!(
                            "features must be [C', H, W], got {:?}",
                            f.shape()
                        )))
                    }
                };
                Some(g.input(f.clone().reshaped(&[1, c, fh, fw])?))
            }
            None => None,
        };
        let out = self.decode_graph(&mut g, &pv, fvar, enc_rows, h, w)?;
        Image::from_tensor_nchw(g.value(out))
    }
}

/// Result of [`fit_image`].
pub struct InrFit<T: Scalar> {
    pub decoder: InrDecoder<T>,
    pub reconstruction: Image,
    /// Mean squared reconstruction error per iteration.
    pub losses: Vec<f64>,
}

/// Fit a coordinate-only decoder to one image by full-batch Adam on the mean
/// squared reconstruction error. Deterministic given the seed.
pub fn fit_image<T: Scalar>(
    target: &Image,
    cfg: &InrDecoderConfig,
    iterations: usize,
    lr: f64,
    rng_seed: u64,
) -> Result<InrFit<T>> {
    if iterations == 0 {
        return Err(Error::domain("fit_image needs iterations >= 1"));
    }
    if cfg.feature_width != 0 {
        return Err(Error::domain(
            "fit_image is coordinate-only; feature_width must be 0",
        ));
    }
    let (h, w) = (target.height(), target.width());
    let mut decoder = InrDecoder::<T>::init(*cfg, rng_seed)?;
    let enc = positional_encode(&make_grid(h, w)?.cast::<T>(), cfg.pos_l)?
        .reshaped(&[h * w, 4 * cfg.pos_l])?;

    // Target pixels in row order matching rows_to_nchw/nchw_to_rows.
    let mut tgt = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tgt.push(T::from_f64(target.get(y, x, c)));
            }
        }
    }
    let target_rows = Tensor::from_vec(&[h * w, 3], tgt)?;

    let hp = AdamParams::with_lr(lr);
    let mut state = AdamState::new(&decoder.store);
    let mut losses = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &decoder.store);
        let enc_rows = g.input(enc.clone());
        let img = decoder.decode_graph(&mut g, &pv, None, enc_rows, h, w)?;
        let rows = g.nchw_to_rows(img);
        let tvar = g.input(target_rows.clone());
        let loss = g.mse(rows, tvar);
        losses.push(g.value(loss).data()[0].as_f64());
        let mut grads = g.backward(loss)?;
        let pgrads = pv.collect(&mut grads);
        adam_step(&mut decoder.store, &pgrads, &mut state, &hp)?;
    }

    let reconstruction = decoder.decode(None, &positional_encode(&make_grid(h, w)?.cast::<T>(), cfg.pos_l)?)?;
    Ok(InrFit {
        decoder,
        reconstruction,
        losses,
    })
}
