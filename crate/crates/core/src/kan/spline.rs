//! B-spline basis math and the single learnable activation.
//!
//! An activation is `base_scale * silu(x) + spline_scale * sum_i c_i B_i(x)`
//! over a knot vector spanning [-g, g]. Outside the grid the spline term is
//! extended linearly from the boundary so evaluation is total and keeps a
//! continuous first derivative.

use crate::error::{Error, Result};
use crate::scalar::{silu, silu_deriv, Scalar};
use crate::tensor::Tensor;

/// Uniform knot vector for `grid_size` intervals of degree `order` splines
/// over [-range, range], extended by `order` knots on each side.
pub fn uniform_knots<T: Scalar>(grid_size: usize, order: usize, range: f64) -> Vec<T> {
    let h = 2.0 * range / grid_size as f64;
    (0..grid_size + 2 * order + 1)
        .map(|i| T::from_f64(-range + (i as f64 - order as f64) * h))
        .collect()
}

pub(crate) fn validate_knots<T: Scalar>(knots: &[T], order: usize) -> Result<()> {
    if order == 0 {
        return Err(Error::domain("spline order must be >= 1"));
    }
    if order > MAX_ORDER {
        return Err(Error::domain(format!(
            "spline order {order} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    if knots.len() < order + 2 {
        return Err(Error::domain(format!(
            "knot vector of length {} is too short for order {} (need >= {})",
            knots.len(),
            order,
            order + 2
        )));
    }
    if knots.len() < 2 * order + 2 {
        return Err(Error::domain(
            "knot vector must include `order` padding knots on each side",
        ));
    }
    for w in knots.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::domain("knot vector must be strictly increasing"));
        }
    }
    Ok(())
}

/// Number of B-spline basis functions for a knot vector.
#[inline]
pub fn basis_count(knots_len: usize, order: usize) -> usize {
    knots_len - order - 1
}

#[inline]
fn grid_bounds<T: Scalar>(knots: &[T], order: usize) -> (T, T) {
    (knots[order], knots[knots.len() - 1 - order])
}

/// Largest supported spline order; keeps the evaluation buffers on the stack.
pub const MAX_ORDER: usize = 7;

/// Precomputed uniform-grid data for the hot evaluation path: on a uniform
/// knot vector every Cox-de Boor denominator at level j equals j * h, so the
/// divisions reduce to multiplications by these inverses.
#[derive(Clone, Debug)]
pub(crate) struct UniformBasis<T: Scalar> {
    lo: T,
    hi: T,
    inv_h: T,
    h: T,
    grid_size: usize,
    order: usize,
    inv_level: [T; MAX_ORDER + 1],
}

impl<T: Scalar> UniformBasis<T> {
    pub(crate) fn new(grid_size: usize, order: usize, range: f64) -> Self {
        debug_assert!(order >= 1 && order <= MAX_ORDER);
        let h = 2.0 * range / grid_size as f64;
        let mut inv_level = [T::zero(); MAX_ORDER + 1];
        for (j, v) in inv_level.iter_mut().enumerate().skip(1) {
            *v = T::from_f64(1.0 / (j as f64 * h));
        }
        UniformBasis {
            lo: T::from_f64(-range),
            hi: T::from_f64(range),
            inv_h: T::from_f64(1.0 / h),
            h: T::from_f64(h),
            grid_size,
            order,
            inv_level,
        }
    }

    /// Same contract as [`basis_at`], avoiding division and knot lookups.
    #[inline]
    pub(crate) fn eval(&self, x: T, vals: &mut [T], derivs: &mut [T]) -> usize {
        let k = self.order;
        let xc = if x < self.lo {
            self.lo
        } else if x > self.hi {
            self.hi
        } else {
            x
        };
        let mut cell = ((xc - self.lo) * self.inv_h).to_usize().unwrap_or(0);
        cell = cell.min(self.grid_size - 1);
        let span = k + cell;

        // Knot i sits at lo + (i - k) * h.
        let cell_t = T::from_f64(cell as f64);
        let frac = (xc - self.lo) - cell_t * self.h; // x - t[span], in [0, h]
        let mut left = [T::zero(); MAX_ORDER + 1];
        let mut right = [T::zero(); MAX_ORDER + 1];
        let mut lower = [T::zero(); MAX_ORDER + 1];
        for j in 1..=k {
            let jh = T::from_f64((j - 1) as f64) * self.h;
            left[j] = frac + jh; // xc - t[span + 1 - j]
            right[j] = self.h - frac + jh; // t[span + j] - xc
        }
        vals[0] = T::one();
        for j in 1..=k {
            let inv = self.inv_level[j];
            let mut saved = T::zero();
            for r in 0..j {
                let temp = vals[r] * inv;
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
            if j == k - 1 {
                lower[..k].copy_from_slice(&vals[..k]);
            }
        }
        if k == 1 {
            lower[0] = T::one();
        }

        let dk = T::from_f64(k as f64) * self.inv_level[k.max(1)];
        for m in 0..=k {
            let a = if m >= 1 { lower[m - 1] } else { T::zero() };
            let b = if m <= k - 1 { lower[m] } else { T::zero() };
            derivs[m] = dk * (a - b);
        }

        if x != xc {
            let dx = x - xc;
            for m in 0..=k {
                vals[m] = vals[m] + derivs[m] * dx;
            }
        }
        span
    }
}

/// Effective basis values and first derivatives of the `order + 1` active
/// basis functions at `x`, with linear extension beyond the grid. Returns the
/// knot span index; active basis indices are `span - order ..= span`.
pub(crate) fn basis_at<T: Scalar>(
    knots: &[T],
    order: usize,
    x: T,
    vals: &mut [T],
    derivs: &mut [T],
) -> usize {
    let (lo, hi) = grid_bounds(knots, order);
    let xc = if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    };

    // Knot span: largest s with knots[s] <= xc, clamped to the interior.
    let last = knots.len() - 2 - order;
    let mut span = knots.partition_point(|k| *k <= xc);
    span = span.saturating_sub(1).clamp(order, last);

    let k = order;
    debug_assert!(k <= MAX_ORDER);
    debug_assert!(vals.len() >= k + 1 && derivs.len() >= k + 1);

    // Cox-de Boor triangle. After pass j, vals[0..=j] hold the degree-j
    // active values; the degree-(k-1) row is kept for the derivative formula.
    let mut left = [T::zero(); MAX_ORDER + 1];
    let mut right = [T::zero(); MAX_ORDER + 1];
    let mut lower = [T::zero(); MAX_ORDER + 1];
    vals[0] = T::one();
    for j in 1..=k {
        left[j] = xc - knots[span + 1 - j];
        right[j] = knots[span + j] - xc;
        let mut saved = T::zero();
        for r in 0..j {
            let temp = vals[r] / (right[r + 1] + left[j - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
        if j == k - 1 {
            lower[..k].copy_from_slice(&vals[..k]);
        }
    }
    if k == 1 {
        lower[0] = T::one();
    }

    // d/dx B_{i,k} = k * (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}))
    let kf = T::from_f64(k as f64);
    for m in 0..=k {
        let i = span - k + m;
        let mut d = T::zero();
        if m >= 1 {
            d = d + lower[m - 1] / (knots[i + k] - knots[i]);
        }
        if m <= k - 1 {
            d = d - lower[m] / (knots[i + k + 1] - knots[i + 1]);
        }
        derivs[m] = kf * d;
    }

    // Linear extension: value = f(xc) + f'(xc) * (x - xc), slope unchanged.
    if x != xc {
        let dx = x - xc;
        for m in 0..=k {
            vals[m] = vals[m] + derivs[m] * dx;
        }
    }
    span
}

/// One learnable univariate activation.
#[derive(Clone, Debug)]
pub struct SplineActivation<T: Scalar> {
    knots: Vec<T>,
    order: usize,
    coefficients: Vec<T>,
    base_scale: T,
    spline_scale: T,
}

impl<T: Scalar> SplineActivation<T> {
    pub fn new(
        knots: Vec<T>,
        order: usize,
        coefficients: Vec<T>,
        base_scale: T,
        spline_scale: T,
    ) -> Result<Self> {
        validate_knots(&knots, order)?;
        let nb = basis_count(knots.len(), order);
        if coefficients.len() != nb {
            return Err(Error::shape(format!(
                "expected {} spline coefficients, got {}",
                nb,
                coefficients.len()
            )));
        }
        Ok(SplineActivation {
            knots,
            order,
            coefficients,
            base_scale,
            spline_scale,
        })
    }

    /// Zero function: all coefficients and scales zero.
    pub fn zero(grid_size: usize, order: usize, range: f64) -> Result<Self> {
        let knots = uniform_knots(grid_size, order, range);
        let nb = basis_count(knots.len(), order);
        SplineActivation::new(knots, order, vec![T::zero(); nb], T::zero(), T::zero())
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coefficients
    }

    pub fn base_scale(&self) -> T {
        self.base_scale
    }

    pub fn spline_scale(&self) -> T {
        self.spline_scale
    }

    /// Evaluate at a scalar.
    pub fn eval(&self, x: T) -> T {
        let k = self.order;
        let mut vals = vec![T::zero(); k + 1];
        let mut derivs = vec![T::zero(); k + 1];
        let span = basis_at(&self.knots, k, x, &mut vals, &mut derivs);
        let first = span - k;
        let mut s = T::zero();
        for m in 0..=k {
            s += self.coefficients[first + m] * vals[m];
        }
        self.base_scale * silu(x) + self.spline_scale * s
    }

    /// Derivative at a scalar.
    pub fn eval_deriv(&self, x: T) -> T {
        let k = self.order;
        let mut vals = vec![T::zero(); k + 1];
        let mut derivs = vec![T::zero(); k + 1];
        let span = basis_at(&self.knots, k, x, &mut vals, &mut derivs);
        let first = span - k;
        let mut s = T::zero();
        for m in 0..=k {
            s += self.coefficients[first + m] * derivs[m];
        }
        self.base_scale * silu_deriv(x) + self.spline_scale * s
    }

    /// Shape-preserving elementwise evaluation.
    pub fn eval_tensor(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.eval(v))
    }
}

/// Least-squares fit of spline coefficients to `target` sampled densely over
/// the grid interior. Used to construct activations with a prescribed shape
/// (e.g. the identity) for verification.
pub fn fit_spline_coefficients<T: Scalar>(
    knots: &[T],
    order: usize,
    target: impl Fn(f64) -> f64,
) -> Result<Vec<T>> {
    validate_knots(knots, order)?;
    let nb = basis_count(knots.len(), order);
    let (lo, hi) = grid_bounds(knots, order);
    let (lo, hi) = (lo.as_f64(), hi.as_f64());
    let samples = 20 * nb;

    // Normal equations in f64 regardless of T.
    let knots64: Vec<f64> = knots.iter().map(|k| k.as_f64()).collect();
    let mut ata = vec![0.0f64; nb * nb];
    let mut aty = vec![0.0f64; nb];
    let mut vals = vec![0.0f64; order + 1];
    let mut derivs = vec![0.0f64; order + 1];
    for i in 0..samples {
        let x = lo + (hi - lo) * (i as f64 + 0.5) / samples as f64;
        let span = basis_at(&knots64, order, x, &mut vals, &mut derivs);
        let first = span - order;
        let y = target(x);
        for a in 0..=order {
            let ia = first + a;
            aty[ia] += vals[a] * y;
            for b in 0..=order {
                ata[ia * nb + first + b] += vals[a] * vals[b];
            }
        }
    }
    let coeffs = solve_dense(&mut ata, &mut aty, nb)?;
    Ok(coeffs.into_iter().map(T::from_f64).collect())
}

/// Gaussian elimination with partial pivoting on an n x n system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() < 1e-12 {
            return Err(Error::domain("singular system in spline fit"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_partition_of_unity() {
        let knots: Vec<f64> = uniform_knots(5, 3, 1.0);
        let mut vals = [0.0; 4];
        let mut derivs = [0.0; 4];
        for i in 0..100 {
            let x = -1.0 + 2.0 * i as f64 / 99.0;
            basis_at(&knots, 3, x, &mut vals, &mut derivs);
            let s: f64 = vals.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "x={x} sum={s}");
            let d: f64 = derivs.iter().sum();
            assert!(d.abs() < 1e-9, "x={x} deriv sum={d}");
        }
    }

    #[test]
    fn zero_activation_is_zero_everywhere() {
        let act: SplineActivation<f64> = SplineActivation::zero(5, 3, 1.0).unwrap();
        for x in [-3.0, -1.0, -0.3, 0.0, 0.9, 1.0, 7.5] {
            assert_eq!(act.eval(x), 0.0);
        }
    }

    #[test]
    fn identity_fit_matches_identity_on_interior() {
        let knots: Vec<f64> = uniform_knots(5, 3, 1.0);
        let coeffs = fit_spline_coefficients(&knots, 3, |x| x).unwrap();
        let act = SplineActivation::new(knots, 3, coeffs, 0.0, 1.0).unwrap();
        for i in 0..200 {
            let x = -0.999 + 1.998 * i as f64 / 199.0;
            assert!((act.eval(x) - x).abs() < 1e-6, "x={x} f={}", act.eval(x));
        }
    }

    #[test]
    fn eval_is_continuous() {
        let knots: Vec<f64> = uniform_knots(5, 3, 1.0);
        let coeffs = fit_spline_coefficients(&knots, 3, |x| (3.0 * x).sin()).unwrap();
        let act = SplineActivation::new(knots, 3, coeffs, 0.5, 1.0).unwrap();
        for i in 0..500 {
            // Includes points beyond the grid and across knot boundaries.
            let x = -1.5 + 3.0 * i as f64 / 499.0;
            let f0 = act.eval(x);
            let f1 = act.eval(x + 1e-7);
            let slope = act.eval_deriv(x).abs();
            assert!((f1 - f0).abs() < 1e-5 * (1.0 + slope), "jump at {x}");
        }
    }

    #[test]
    fn extrapolation_is_linear_with_boundary_slope() {
        let knots: Vec<f64> = uniform_knots(5, 3, 1.0);
        let coeffs = fit_spline_coefficients(&knots, 3, |x| x * x).unwrap();
        let act = SplineActivation::new(knots, 3, coeffs, 0.0, 1.0).unwrap();
        let f1 = act.eval(1.0);
        let d1 = act.eval_deriv(1.0);
        for dx in [0.1, 0.5, 2.0] {
            assert!((act.eval(1.0 + dx) - (f1 + d1 * dx)).abs() < 1e-9);
            // Derivative stays constant out of range.
            assert!((act.eval_deriv(1.0 + dx) - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let knots: Vec<f64> = uniform_knots(6, 3, 1.0);
        let coeffs = fit_spline_coefficients(&knots, 3, |x| (2.0 * x).cos()).unwrap();
        let act = SplineActivation::new(knots, 3, coeffs, 0.7, 1.3).unwrap();
        let h = 1e-6;
        for i in 0..50 {
            let x = -0.95 + 1.9 * i as f64 / 49.0;
            let fd = (act.eval(x + h) - act.eval(x - h)) / (2.0 * h);
            assert!((act.eval_deriv(x) - fd).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(SplineActivation::<f64>::new(vec![0.0, 0.0, 1.0], 1, vec![0.0], 0.0, 0.0).is_err());
        assert!(SplineActivation::<f64>::new(vec![0.0, 1.0], 3, vec![], 0.0, 0.0).is_err());
    }
}
