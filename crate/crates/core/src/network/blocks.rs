//! Parameterized building blocks: conv layers, MLPs, and KAN stacks whose
//! tensors live in a [`ParamStore`] so they checkpoint and train uniformly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Pad, ParamId, ParamStore, ParamVars, Var};
use crate::kan::{KanLayer, KanLayerShape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight initialization for conv and linear layers.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in +-1/sqrt(fan_in).
    Uniform,
    Zero,
    /// 1x1 conv with weight = identity over channels (requires in == out).
    Identity,
}

pub(crate) fn uniform_weights<T: Scalar>(
    rng: &mut ChaCha8Rng,
    count: usize,
    fan_in: usize,
) -> Vec<T> {
    let scale = 1.0 / (fan_in as f64).sqrt();
    (0..count)
        .map(|_| T::from_f64(rng.gen_range(-scale..scale)))
        .collect()
}

/// Dense conv layer (square odd kernel, same padding).
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    pad: Pad,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: Pad,
        bias: bool,
        init: Init,
    ) -> Self {
        let count = out_ch * in_ch * k * k;
        let data = match init {
            Init::Uniform => uniform_weights(rng, count, in_ch * k * k),
            Init::Zero => vec![T::zero(); count],
            Init::Identity => {
                assert_eq!(in_ch, out_ch, "identity init needs in == out");
                assert_eq!(k, 1, "identity init is for 1x1 convs");
                let mut w = vec![T::zero(); count];
                for c in 0..in_ch {
                    w[c * in_ch + c] = T::one();
                }
                w
            }
        };
        let w = store.register(
            format!("{name}.w"),
            Tensor::from_vec(&[out_ch, in_ch, k, k], data).unwrap(),
        );
        let b = bias.then(|| store.register(format!("{name}.b"), Tensor::zeros(&[out_ch])));
        Conv2dLayer {
            w,
            b,
            in_ch,
            out_ch,
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.in_ch {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_ch
            )));
        }
        Ok(g.conv2d(
            x,
            pv.var(self.w),
            self.b.map(|b| pv.var(b)),
            self.stride,
            self.pad,
        ))
    }
}

/// Depthwise conv layer (one kernel per channel).
#[derive(Clone, Debug)]
pub struct DwConvLayer {
    pub w: ParamId,
    channels: usize,
    k: usize,
    pad: Pad,
}

impl DwConvLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        k: usize,
        pad: Pad,
    ) -> Self {
        let data = uniform_weights(rng, channels * k * k, k * k);
        let w = store.register(
            format!("{name}.w"),
            Tensor::from_vec(&[channels, k, k], data).unwrap(),
        );
        DwConvLayer {
            w,
            channels,
            k,
            pad,
        }
    }

    /// Identity kernels: center tap 1, everything else 0.
    pub fn set_identity<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let t = store.get_mut(self.w);
        let k = self.k;
        t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        for c in 0..self.channels {
            t.data_mut()[(c * k + k / 2) * k + k / 2] = T::one();
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!(
                "depthwise conv expects {} channels, got {c}",
                self.channels
            )));
        }
        Ok(g.dwconv2d(x, pv.var(self.w), self.pad))
    }
}

/// Plain MLP over batch rows: matmul + bias per layer, silu between layers,
/// raw (pre-activation) output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
    ) -> Self {
        assert!(widths.len() >= 2, "mlp needs at least input and output widths");
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (wi, wo) = (pair[0], pair[1]);
            let w = store.register(
                format!("{name}.l{i}.w"),
                Tensor::from_vec(&[wi, wo], uniform_weights(rng, wi * wo, wi)).unwrap(),
            );
            let b = store.register(format!("{name}.l{i}.b"), Tensor::zeros(&[wo]));
            layers.push((w, b));
        }
        Mlp {
            layers,
            widths: widths.to_vec(),
        }
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, rows: Var) -> Result<Var> {
        let (_, f) = g.value(rows).dims2()?;
        if f != self.in_width() {
            return Err(Error::shape(format!(
                "mlp expects input width {}, got {f}",
                self.in_width()
            )));
        }
        let mut cur = rows;
        let n = self.layers.len();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            cur = g.matmul(cur, pv.var(*w));
            cur = g.add_row_bias(cur, pv.var(*b));
            if i + 1 < n {
                cur = g.silu(cur);
            }
        }
        Ok(cur)
    }
}

/// A KAN stack whose parameters live in a store.
#[derive(Clone, Debug)]
pub struct KanStackVars {
    layers: Vec<KanLayerVars>,
}

#[derive(Clone, Debug)]
pub struct KanLayerVars {
    pub coeffs: ParamId,
    pub base: ParamId,
    pub spline: ParamId,
    pub shape: KanLayerShape,
}

impl KanStackVars {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        shapes: &[KanLayerShape],
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, shape) in shapes.iter().enumerate() {
            let proto = KanLayer::<T>::init_from_shape(*shape, rng.gen())?;
            let coeffs = store.register(
                format!("{name}.l{i}.coeffs"),
                Tensor::from_vec(
                    &[shape.n_in, shape.n_basis(), shape.n_out],
                    proto.coeffs().to_vec(),
                )
                .unwrap(),
            );
            let base = store.register(
                format!("{name}.l{i}.base_scale"),
                Tensor::from_vec(&[shape.n_in, shape.n_out], proto.base_scales().to_vec()).unwrap(),
            );
            let spline = store.register(
                format!("{name}.l{i}.spline_scale"),
                Tensor::from_vec(&[shape.n_in, shape.n_out], proto.spline_scales().to_vec())
                    .unwrap(),
            );
            layers.push(KanLayerVars {
                coeffs,
                base,
                spline,
                shape: *shape,
            });
        }
        Ok(KanStackVars { layers })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].shape.n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().shape.n_out
    }

    pub fn layers(&self) -> &[KanLayerVars] {
        &self.layers
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, rows: Var) -> Result<Var> {
        let (_, f) = g.value(rows).dims2()?;
        if f != self.n_in() {
            return Err(Error::shape(format!(
                "KAN stack expects width {}, got {f}",
                self.n_in()
            )));
        }
        let mut cur = rows;
        for l in &self.layers {
            cur = g.kan_layer(
                cur,
                pv.var(l.coeffs),
                pv.var(l.base),
                pv.var(l.spline),
                l.shape,
            );
        }
        Ok(cur)
    }

    /// Zero every spline coefficient and both scales (the stack computes the
    /// zero function afterwards).
    pub fn set_zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for l in &self.layers {
            for id in [l.coeffs, l.base, l.spline] {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Load each layer's parameters from an existing [`KanLayer`] (shapes
    /// must match). Used to install e.g. identity-fit activations in tests.
    pub fn load_layer<T: Scalar>(&self, store: &mut ParamStore<T>, idx: usize, layer: &KanLayer<T>) {
        let l = &self.layers[idx];
        assert_eq!(l.shape.n_in, layer.n_in());
        assert_eq!(l.shape.n_out, layer.n_out());
        store.get_mut(l.coeffs).data_mut().copy_from_slice(layer.coeffs());
        store
            .get_mut(l.base)
            .data_mut()
            .copy_from_slice(layer.base_scales());
        store
            .get_mut(l.spline)
            .data_mut()
            .copy_from_slice(layer.spline_scales());
    }
}
