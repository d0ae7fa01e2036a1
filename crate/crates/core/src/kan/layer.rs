//! A KAN layer: an (n_out x n_in) matrix of learnable activations where
//! output q is the sum over inputs p of activation(q, p) applied to input p.
//!
//! Coefficients are stored as [n_in][basis][n_out] so the hot loops run
//! contiguously over outputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kan::spline::{
    basis_at, basis_count, uniform_knots, validate_knots, SplineActivation, UniformBasis,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dimensions and uniform-grid hyperparameters of a layer, enough to
/// reconstruct its knot vector in any scalar type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KanLayerShape {
    pub n_in: usize,
    pub n_out: usize,
    pub grid_size: usize,
    pub order: usize,
    pub range: f64,
}

impl KanLayerShape {
    pub fn n_basis(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn knots<T: Scalar>(&self) -> Vec<T> {
        uniform_knots(self.grid_size, self.order, self.range)
    }

    pub fn coeff_count(&self) -> usize {
        self.n_in * self.n_basis() * self.n_out
    }

    pub fn scale_count(&self) -> usize {
        self.n_in * self.n_out
    }
}

#[derive(Clone, Debug)]
pub struct KanLayer<T: Scalar> {
    n_in: usize,
    n_out: usize,
    order: usize,
    knots: Vec<T>,
    /// Spline coefficients, layout [n_in][n_basis][n_out].
    coeffs: Vec<T>,
    /// Weight on silu(x) per edge, layout [n_in][n_out].
    base_scale: Vec<T>,
    /// Weight on the spline term per edge, layout [n_in][n_out].
    spline_scale: Vec<T>,
    /// Fast evaluation path when the knots form a uniform grid.
    uniform: Option<UniformBasis<T>>,
}

/// Gradients of a layer's parameters, in the layer's own layouts.
#[derive(Clone, Debug)]
pub struct KanLayerGrads<T: Scalar> {
    pub coeffs: Vec<T>,
    pub base_scale: Vec<T>,
    pub spline_scale: Vec<T>,
}

/// Per-point basis values, derivatives, spans, and base-nonlinearity values
/// recorded by a forward pass for reuse in backward.
#[derive(Clone, Debug)]
pub(crate) struct KanEvalCache<T: Scalar> {
    spans: Vec<u32>,
    vals: Vec<T>,
    derivs: Vec<T>,
    sil: Vec<T>,
    dsil: Vec<T>,
}

impl<T: Scalar> Default for KanEvalCache<T> {
    fn default() -> Self {
        KanEvalCache {
            spans: Vec::new(),
            vals: Vec::new(),
            derivs: Vec::new(),
            sil: Vec::new(),
            dsil: Vec::new(),
        }
    }
}

impl<T: Scalar> KanEvalCache<T> {
    fn resize(&mut self, points: usize, order: usize) {
        self.spans.resize(points, 0);
        self.vals.resize(points * (order + 1), T::zero());
        self.derivs.resize(points * (order + 1), T::zero());
        self.sil.resize(points, T::zero());
        self.dsil.resize(points, T::zero());
    }
}

fn detect_uniform<T: Scalar>(knots: &[T], order: usize) -> Option<UniformBasis<T>> {
    let grid_size = knots.len().checked_sub(2 * order + 1)?;
    if grid_size == 0 {
        return None;
    }
    let range = -knots[order].as_f64();
    if !(range > 0.0) {
        return None;
    }
    let expect: Vec<T> = uniform_knots(grid_size, order, range);
    if expect == knots {
        Some(UniformBasis::new(grid_size, order, range))
    } else {
        None
    }
}

impl<T: Scalar> KanLayer<T> {
    /// Seeded initialization: spline coefficients uniform in
    /// +-0.1/sqrt(n_in), base and spline scales 1, so the layer behaves like
    /// a plain silu MLP layer at the start of training.
    pub fn init(
        n_in: usize,
        n_out: usize,
        grid_size: usize,
        order: usize,
        range: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::domain("layer dimensions must be positive"));
        }
        if order == 0 || order > crate::kan::spline::MAX_ORDER {
            return Err(Error::domain(format!(
                "spline order must be in 1..={}",
                crate::kan::spline::MAX_ORDER
            )));
        }
        if grid_size < order + 2 {
            return Err(Error::domain(format!(
                "grid_size {grid_size} must be >= order + 2 = {}",
                order + 2
            )));
        }
        if !(range > 0.0) {
            return Err(Error::domain("grid range must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let knots = uniform_knots(grid_size, order, range);
        let nb = grid_size + order;
        let scale = 0.1 / (n_in as f64).sqrt();
        let coeffs = (0..n_in * nb * n_out)
            .map(|_| T::from_f64(rng.gen_range(-scale..scale)))
            .collect();
        Ok(KanLayer {
            n_in,
            n_out,
            order,
            uniform: Some(UniformBasis::new(grid_size, order, range)),
            knots,
            coeffs,
            base_scale: vec![T::one(); n_in * n_out],
            spline_scale: vec![T::one(); n_in * n_out],
        })
    }

    /// Assemble from an (n_out x n_in) activation matrix. All activations
    /// must share one knot vector and order.
    pub fn from_activations(rows: Vec<Vec<SplineActivation<T>>>) -> Result<Self> {
        let n_out = rows.len();
        if n_out == 0 || rows[0].is_empty() {
            return Err(Error::domain("activation matrix must be nonempty"));
        }
        let n_in = rows[0].len();
        let proto = &rows[0][0];
        let order = proto.order();
        let knots = proto.knots().to_vec();
        validate_knots(&knots, order)?;
        let nb = basis_count(knots.len(), order);

        let mut layer = KanLayer {
            n_in,
            n_out,
            order,
            uniform: detect_uniform(&knots, order),
            knots: knots.clone(),
            coeffs: vec![T::zero(); n_in * nb * n_out],
            base_scale: vec![T::zero(); n_in * n_out],
            spline_scale: vec![T::zero(); n_in * n_out],
        };
        for (q, row) in rows.iter().enumerate() {
            if row.len() != n_in {
                return Err(Error::shape(format!(
                    "activation row {q} has {} entries, expected {n_in}",
                    row.len()
                )));
            }
            for (p, act) in row.iter().enumerate() {
                if act.order() != order || act.knots() != knots.as_slice() {
                    return Err(Error::domain(
                        "all activations in a layer must share grid and order",
                    ));
                }
                for (k, &c) in act.coefficients().iter().enumerate() {
                    layer.coeffs[(p * nb + k) * n_out + q] = c;
                }
                layer.base_scale[p * n_out + q] = act.base_scale();
                layer.spline_scale[p * n_out + q] = act.spline_scale();
            }
        }
        Ok(layer)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        basis_count(self.knots.len(), self.order)
    }

    pub fn grid_size(&self) -> usize {
        self.knots.len() - 2 * self.order - 1
    }

    /// Shape descriptor; range is read off the knot vector, so this is exact
    /// for uniform-grid layers.
    pub fn shape(&self) -> KanLayerShape {
        KanLayerShape {
            n_in: self.n_in,
            n_out: self.n_out,
            grid_size: self.grid_size(),
            order: self.order,
            range: -self.knots[self.order].as_f64(),
        }
    }

    pub fn init_from_shape(shape: KanLayerShape, rng_seed: u64) -> Result<Self> {
        Self::init(
            shape.n_in,
            shape.n_out,
            shape.grid_size,
            shape.order,
            shape.range,
            rng_seed,
        )
    }

    /// Extract the activation at matrix position (q, p).
    pub fn activation(&self, q: usize, p: usize) -> SplineActivation<T> {
        let nb = self.n_basis();
        let coeffs = (0..nb)
            .map(|k| self.coeffs[(p * nb + k) * self.n_out + q])
            .collect();
        SplineActivation::new(
            self.knots.clone(),
            self.order,
            coeffs,
            self.base_scale[p * self.n_out + q],
            self.spline_scale[p * self.n_out + q],
        )
        .expect("layer invariants guarantee a valid activation")
    }

    /// Forward over a `[n_in]` vector or `[B, n_in]` batch.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, width, vector) = match input.shape()[..] {
            [w] => (1, w, true),
            [b, w] => (b, w, false),
            _ => {
                return Err(Error::shape(format!(
                    "expected [n_in] or [B, n_in], got {:?}",
                    input.shape()
                )))
            }
        };
        if width != self.n_in {
            return Err(Error::shape(format!(
                "input width {width} does not match layer n_in {}",
                self.n_in
            )));
        }
        let mut out = vec![T::zero(); batch * self.n_out];
        self.forward_kernel(input.data(), batch, &mut out);
        if vector {
            Tensor::from_vec(&[self.n_out], out)
        } else {
            Tensor::from_vec(&[batch, self.n_out], out)
        }
    }

    /// out[b, q] = sum_p act(q, p)(x[b, p]); `out` must be zeroed.
    pub(crate) fn forward_kernel(&self, x: &[T], batch: usize, out: &mut [T]) {
        let mut cache = KanEvalCache::default();
        self.forward_kernel_cached(x, batch, out, &mut cache);
    }

    /// Forward pass that also records basis values, derivatives, and the
    /// base-nonlinearity values per point so a following backward pass can
    /// skip recomputing them.
    pub(crate) fn forward_kernel_cached(
        &self,
        x: &[T],
        batch: usize,
        out: &mut [T],
        cache: &mut KanEvalCache<T>,
    ) {
        let (n_in, n_out, k) = (self.n_in, self.n_out, self.order);
        let nb = self.n_basis();
        let points = batch * n_in;
        cache.resize(points, k);
        let mut tmp = vec![T::zero(); n_out];
        for b in 0..batch {
            let x_row = &x[b * n_in..(b + 1) * n_in];
            let out_row = &mut out[b * n_out..(b + 1) * n_out];
            for p in 0..n_in {
                let xv = x_row[p];
                let point = b * n_in + p;
                let vals = &mut cache.vals[point * (k + 1)..(point + 1) * (k + 1)];
                let derivs = &mut cache.derivs[point * (k + 1)..(point + 1) * (k + 1)];
                let span = match &self.uniform {
                    Some(u) => u.eval(xv, vals, derivs),
                    None => basis_at(&self.knots, k, xv, vals, derivs),
                };
                cache.spans[point] = span as u32;
                // One sigmoid serves both silu and its derivative.
                let sg = crate::scalar::sigmoid(xv);
                let sil = xv * sg;
                cache.sil[point] = sil;
                cache.dsil[point] = sg * (T::one() + xv * (T::one() - sg));

                let first = span - k;
                let cp = &self.coeffs[p * nb * n_out..(p + 1) * nb * n_out];
                let bs = &self.base_scale[p * n_out..(p + 1) * n_out];
                let ss = &self.spline_scale[p * n_out..(p + 1) * n_out];
                if k == 3 {
                    // Fused cubic path: one pass over the outputs.
                    let (v0, v1, v2, v3) = (vals[0], vals[1], vals[2], vals[3]);
                    let seg = &cp[first * n_out..(first + 4) * n_out];
                    let (c0, rest) = seg.split_at(n_out);
                    let (c1, rest) = rest.split_at(n_out);
                    let (c2, c3) = rest.split_at(n_out);
                    for q in 0..n_out {
                        let spl = v0 * c0[q] + v1 * c1[q] + v2 * c2[q] + v3 * c3[q];
                        out_row[q] += bs[q] * sil + ss[q] * spl;
                    }
                } else {
                    // tmp[q] = sum_m vals[m] * coeffs[p][first+m][q]
                    tmp.iter_mut().for_each(|v| *v = T::zero());
                    for m in 0..=k {
                        let v = vals[m];
                        let row = &cp[(first + m) * n_out..(first + m + 1) * n_out];
                        for (t, &c) in tmp.iter_mut().zip(row) {
                            *t += v * c;
                        }
                    }
                    for q in 0..n_out {
                        out_row[q] += bs[q] * sil + ss[q] * tmp[q];
                    }
                }
            }
        }
    }

    /// Accumulate parameter gradients and the input gradient for the batch
    /// VJP <cotangent, forward(x)>. `grad_in` must be zeroed.
    pub(crate) fn backward_kernel(
        &self,
        x: &[T],
        batch: usize,
        cotangent: &[T],
        grads: &mut KanLayerGrads<T>,
        grad_in: &mut [T],
    ) {
        let mut cache = KanEvalCache::default();
        let mut scratch = vec![T::zero(); batch * self.n_out];
        self.forward_kernel_cached(x, batch, &mut scratch, &mut cache);
        self.backward_kernel_cached(batch, cotangent, grads, grad_in, &cache);
    }

    /// Backward pass reusing a forward pass's [`KanEvalCache`].
    pub(crate) fn backward_kernel_cached(
        &self,
        batch: usize,
        cotangent: &[T],
        grads: &mut KanLayerGrads<T>,
        grad_in: &mut [T],
        cache: &KanEvalCache<T>,
    ) {
        let (n_in, n_out, k) = (self.n_in, self.n_out, self.order);
        let nb = self.n_basis();
        debug_assert_eq!(cache.spans.len(), batch * n_in);
        let mut tmp = vec![T::zero(); n_out];
        let mut tmp2 = vec![T::zero(); n_out];
        let mut sc = vec![T::zero(); n_out];
        for b in 0..batch {
            let cot = &cotangent[b * n_out..(b + 1) * n_out];
            let gin_row = &mut grad_in[b * n_in..(b + 1) * n_in];
            for p in 0..n_in {
                let point = b * n_in + p;
                let span = cache.spans[point] as usize;
                let vals = &cache.vals[point * (k + 1)..(point + 1) * (k + 1)];
                let derivs = &cache.derivs[point * (k + 1)..(point + 1) * (k + 1)];
                let first = span - k;
                let sil = cache.sil[point];
                let dsil = cache.dsil[point];

                let cp = &self.coeffs[p * nb * n_out..(p + 1) * nb * n_out];
                let bs = &self.base_scale[p * n_out..(p + 1) * n_out];
                let ss = &self.spline_scale[p * n_out..(p + 1) * n_out];
                let gbs = &mut grads.base_scale[p * n_out..(p + 1) * n_out];
                let gss = &mut grads.spline_scale[p * n_out..(p + 1) * n_out];
                let gcp = &mut grads.coeffs[p * nb * n_out..(p + 1) * nb * n_out];

                if k == 3 {
                    // Fused cubic path mirroring the forward fast path.
                    let (v0, v1, v2, v3) = (vals[0], vals[1], vals[2], vals[3]);
                    let (d0, d1, d2, d3) = (derivs[0], derivs[1], derivs[2], derivs[3]);
                    let seg = &cp[first * n_out..(first + 4) * n_out];
                    let (c0, rest) = seg.split_at(n_out);
                    let (c1, rest) = rest.split_at(n_out);
                    let (c2, c3) = rest.split_at(n_out);
                    let gseg = &mut gcp[first * n_out..(first + 4) * n_out];
                    let (g0, grest) = gseg.split_at_mut(n_out);
                    let (g1, grest) = grest.split_at_mut(n_out);
                    let (g2, g3) = grest.split_at_mut(n_out);
                    let mut gx = T::zero();
                    for q in 0..n_out {
                        let c = cot[q];
                        let spl = v0 * c0[q] + v1 * c1[q] + v2 * c2[q] + v3 * c3[q];
                        let dspl = d0 * c0[q] + d1 * c1[q] + d2 * c2[q] + d3 * c3[q];
                        gbs[q] += sil * c;
                        gss[q] += spl * c;
                        let s = ss[q] * c;
                        gx += c * bs[q] * dsil + s * dspl;
                        g0[q] += v0 * s;
                        g1[q] += v1 * s;
                        g2[q] += v2 * s;
                        g3[q] += v3 * s;
                    }
                    gin_row[p] += gx;
                } else {
                    tmp.iter_mut().for_each(|v| *v = T::zero());
                    tmp2.iter_mut().for_each(|v| *v = T::zero());
                    for m in 0..=k {
                        let (v, d) = (vals[m], derivs[m]);
                        let row = &cp[(first + m) * n_out..(first + m + 1) * n_out];
                        for q in 0..n_out {
                            tmp[q] += v * row[q];
                            tmp2[q] += d * row[q];
                        }
                    }
                    let mut gx = T::zero();
                    for q in 0..n_out {
                        let c = cot[q];
                        gbs[q] += sil * c;
                        gss[q] += tmp[q] * c;
                        sc[q] = ss[q] * c;
                        gx += c * bs[q] * dsil + sc[q] * tmp2[q];
                    }
                    gin_row[p] += gx;
                    for m in 0..=k {
                        let v = vals[m];
                        let row = &mut gcp[(first + m) * n_out..(first + m + 1) * n_out];
                        for (g, &s) in row.iter_mut().zip(sc.iter()) {
                            *g += v * s;
                        }
                    }
                }
            }
        }
    }

    pub fn zero_grads(&self) -> KanLayerGrads<T> {
        KanLayerGrads {
            coeffs: vec![T::zero(); self.coeffs.len()],
            base_scale: vec![T::zero(); self.base_scale.len()],
            spline_scale: vec![T::zero(); self.spline_scale.len()],
        }
    }

    /// Flat parameter views in a fixed order (coeffs, base, spline), used by
    /// checkpointing and the autodiff wrapper.
    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn base_scales(&self) -> &[T] {
        &self.base_scale
    }

    pub fn spline_scales(&self) -> &[T] {
        &self.spline_scale
    }

    pub fn params_mut(&mut self) -> (&mut [T], &mut [T], &mut [T]) {
        (
            &mut self.coeffs,
            &mut self.base_scale,
            &mut self.spline_scale,
        )
    }

    /// Rebuild a layer from flat parameter slices (inverse of the views).
    pub fn from_parts(
        n_in: usize,
        n_out: usize,
        order: usize,
        knots: Vec<T>,
        coeffs: Vec<T>,
        base_scale: Vec<T>,
        spline_scale: Vec<T>,
    ) -> Result<Self> {
        validate_knots(&knots, order)?;
        let nb = basis_count(knots.len(), order);
        if coeffs.len() != n_in * nb * n_out
            || base_scale.len() != n_in * n_out
            || spline_scale.len() != n_in * n_out
        {
            return Err(Error::shape("KAN layer parameter sizes do not match"));
        }
        Ok(KanLayer {
            n_in,
            n_out,
            order,
            uniform: detect_uniform(&knots, order),
            knots,
            coeffs,
            base_scale,
            spline_scale,
        })
    }
}
