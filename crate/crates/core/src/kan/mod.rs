//! Kolmogorov-Arnold network primitives: learnable univariate spline
//! activations arranged in layer matrices and composed into stacks.

mod layer;
mod spline;
mod stack;

pub use layer::{KanLayer, KanLayerGrads, KanLayerShape};
pub(crate) use layer::KanEvalCache;
pub use spline::{basis_count, fit_spline_coefficients, uniform_knots, SplineActivation, MAX_ORDER};
pub use stack::KanStack;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn identity_activation(grid_size: usize) -> SplineActivation<f64> {
        let knots: Vec<f64> = uniform_knots(grid_size, 3, 1.0);
        let coeffs = fit_spline_coefficients(&knots, 3, |x| x).unwrap();
        SplineActivation::new(knots, 3, coeffs, 0.0, 1.0).unwrap()
    }

    fn identity_layer(n: usize) -> KanLayer<f64> {
        let act = identity_activation(5);
        KanLayer::from_activations(vec![vec![act; n]; n]).unwrap()
    }

    #[test]
    fn zero_layer_outputs_zero() {
        let act: SplineActivation<f64> = SplineActivation::zero(5, 3, 1.0).unwrap();
        let layer = KanLayer::from_activations(vec![vec![act; 3]; 2]).unwrap();
        let out = layer
            .forward(&Tensor::from_vec(&[3], vec![0.4, -0.7, 0.1]).unwrap())
            .unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_sums_inputs() {
        let layer = identity_layer(3);
        let out = layer
            .forward(&Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        for &v in out.data() {
            assert!((v - 0.6).abs() < 1e-6, "got {v}");
        }
    }

    #[test]
    fn single_input_layer_matches_activation() {
        let layer = KanLayer::<f64>::init(1, 4, 5, 3, 1.0, 99).unwrap();
        let x = 0.37;
        let out = layer.forward(&Tensor::from_vec(&[1], vec![x]).unwrap()).unwrap();
        for q in 0..4 {
            let expect = layer.activation(q, 0).eval(x);
            assert!((out.data()[q] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_linear_in_coefficients() {
        let mut layer = KanLayer::<f64>::init(4, 3, 5, 3, 1.0, 5).unwrap();
        {
            let (_, bs, _) = layer.params_mut();
            bs.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(&[2, 4], vec![0.3, -0.5, 0.8, 0.0, -0.9, 0.2, 0.6, -0.1]).unwrap();
        let y1 = layer.forward(&x).unwrap();
        {
            let (coeffs, _, _) = layer.params_mut();
            coeffs.iter_mut().for_each(|v| *v *= 2.0);
        }
        let y2 = layer.forward(&x).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let layer = KanLayer::<f64>::init(3, 5, 5, 3, 1.0, 7).unwrap();
        let rows = [[0.1, 0.2, 0.3], [-0.4, 0.9, 0.0], [0.7, -0.7, 0.5]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let batch = layer.forward(&Tensor::from_vec(&[3, 3], flat).unwrap()).unwrap();
        // Permuting batch rows permutes outputs identically.
        let perm = [2usize, 0, 1];
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows[i]).collect();
        let batch_p = layer
            .forward(&Tensor::from_vec(&[3, 3], permuted).unwrap())
            .unwrap();
        for (bi, &src) in perm.iter().enumerate() {
            assert_eq!(
                &batch_p.data()[bi * 5..(bi + 1) * 5],
                &batch.data()[src * 5..(src + 1) * 5]
            );
        }
    }

    #[test]
    fn empty_batch_yields_empty_output_with_width() {
        let layer = KanLayer::<f64>::init(3, 5, 5, 3, 1.0, 7).unwrap();
        let stack = KanStack::new(vec![layer]).unwrap();
        let out = stack
            .forward(&Tensor::from_vec(&[0, 3], vec![]).unwrap())
            .unwrap();
        assert_eq!(out.shape(), &[0, 5]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = KanLayer::<f64>::init(4, 6, 5, 3, 1.0, 123).unwrap();
        let b = KanLayer::<f64>::init(4, 6, 5, 3, 1.0, 123).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
        assert_eq!(a.base_scales(), b.base_scales());
    }

    #[test]
    fn init_forward_at_zero_is_small() {
        // silu(0) = 0, so output magnitude is bounded by the small spline noise.
        let layer = KanLayer::<f64>::init(8, 8, 5, 3, 1.0, 17).unwrap();
        let out = layer.forward(&Tensor::zeros(&[8])).unwrap();
        for &v in out.data() {
            assert!(v.abs() < 0.1, "init output {v} too large");
        }
    }

    #[test]
    fn init_rejects_degenerate_dims() {
        assert!(KanLayer::<f64>::init(0, 4, 5, 3, 1.0, 0).is_err());
        assert!(KanLayer::<f64>::init(4, 0, 5, 3, 1.0, 0).is_err());
        assert!(KanLayer::<f64>::init(4, 4, 4, 3, 1.0, 0).is_err());
    }

    #[test]
    fn stack_checks_chaining_at_construction() {
        let a = KanLayer::<f64>::init(3, 4, 5, 3, 1.0, 0).unwrap();
        let b = KanLayer::<f64>::init(5, 2, 5, 3, 1.0, 1).unwrap();
        assert!(KanStack::new(vec![a, b]).is_err());
    }

    #[test]
    fn single_layer_stack_equals_layer_forward() {
        let layer = KanLayer::<f64>::init(3, 4, 5, 3, 1.0, 21).unwrap();
        let x = Tensor::from_vec(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let direct = layer.forward(&x).unwrap();
        let stack = KanStack::new(vec![layer]).unwrap();
        assert_eq!(stack.forward(&x).unwrap().data(), direct.data());
    }

    #[test]
    fn two_identity_layers_fold_sums() {
        // Stage 1 sums (1, 2) -> (3, 3); stage 2 sums again -> (6, 6).
        let stack = KanStack::new(vec![identity_layer(2), identity_layer(2)]).unwrap();
        let out = stack
            .forward(&Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        // Inputs reach 3.0, well outside the grid: linear extrapolation of the
        // identity fit keeps the value, within fit tolerance amplified once.
        for &v in out.data() {
            assert!((v - 6.0).abs() < 1e-4, "got {v}");
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let layer = KanLayer::<f64>::init(3, 4, 5, 3, 1.0, 2).unwrap();
        let stack = KanStack::new(vec![layer]).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![0.1; 6]).unwrap();
        let cot = Tensor::zeros(&[2, 4]);
        let (grads, gin) = stack.gradients(&x, &cot).unwrap();
        assert!(gin.data().iter().all(|&v| v == 0.0));
        assert!(grads[0].coeffs.iter().all(|&v| v == 0.0));
        assert!(grads[0].base_scale.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn base_scale_gradient_is_silu_of_input() {
        // For unit cotangent, d/d(base_scale[q,p]) = silu(x_p).
        let layer = KanLayer::<f64>::init(2, 2, 5, 3, 1.0, 3).unwrap();
        let stack = KanStack::new(vec![layer]).unwrap();
        let x0 = 0.63;
        let x = Tensor::from_vec(&[1, 2], vec![x0, -0.4]).unwrap();
        let cot = Tensor::full(&[1, 2], 1.0);
        let (grads, _) = stack.gradients(&x, &cot).unwrap();
        let expect = crate::scalar::silu(x0);
        // base_scale layout is [n_in][n_out]; p = 0 rows.
        for q in 0..2 {
            assert!((grads[0].base_scale[q] - expect).abs() < 1e-12);
        }
    }

    /// Central finite differences of <cotangent, stack(x)> for every
    /// parameter and input entry, compared against the analytic gradients.
    fn check_stack_gradients(stack: &mut KanStack<f64>, x: &Tensor<f64>, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let batch = x.shape()[0];
        let cot_data: Vec<f64> = (0..batch * stack.n_out())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let cot = Tensor::from_vec(&[batch, stack.n_out()], cot_data).unwrap();
        let (grads, gin) = stack.gradients(x, &cot).unwrap();

        let h = 1e-5;
        // Relative tolerance 1e-4 with an absolute guard well above the
        // central-difference roundoff floor (~|f| * 1e-16 / h ~ 1e-10).
        let rtol = 1e-4;
        let atol = 1e-8;
        let objective = |stack: &KanStack<f64>, x: &Tensor<f64>| -> f64 {
            let y = stack.forward(x).unwrap();
            y.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };

        fn nudge(stack: &mut KanStack<f64>, li: usize, part: usize, i: usize, delta: f64) {
            let (c, b, s) = stack.layers_mut()[li].params_mut();
            match part {
                0 => c[i] += delta,
                1 => b[i] += delta,
                _ => s[i] += delta,
            }
        }

        for li in 0..stack.layers().len() {
            for part in 0..3 {
                let len = {
                    let (c, b, s) = stack.layers_mut()[li].params_mut();
                    [c.len(), b.len(), s.len()][part]
                };
                for i in 0..len {
                    nudge(stack, li, part, i, h);
                    let fp = objective(stack, x);
                    nudge(stack, li, part, i, -2.0 * h);
                    let fm = objective(stack, x);
                    nudge(stack, li, part, i, h);
                    let fd = (fp - fm) / (2.0 * h);
                    let analytic = match part {
                        0 => grads[li].coeffs[i],
                        1 => grads[li].base_scale[i],
                        _ => grads[li].spline_scale[i],
                    };
                    assert!(
                        (fd - analytic).abs() <= atol + rtol * fd.abs().max(analytic.abs()),
                        "layer {li} part {part} idx {i}: fd={fd} analytic={analytic}"
                    );
                }
            }
        }

        // Input gradient.
        let mut xv = x.clone();
        for i in 0..xv.numel() {
            let orig = xv.data()[i];
            xv.data_mut()[i] = orig + h;
            let fp = objective(stack, &xv);
            xv.data_mut()[i] = orig - h;
            let fm = objective(stack, &xv);
            xv.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let analytic = gin.data()[i];
            assert!(
                (fd - analytic).abs() <= atol + rtol * fd.abs().max(analytic.abs()),
                "input idx {i}: fd={fd} analytic={analytic}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_4_7_4() {
        use rand::{Rng, SeedableRng};
        let mut stack = KanStack::new(vec![
            KanLayer::init(4, 7, 5, 3, 1.0, 100).unwrap(),
            KanLayer::init(7, 4, 5, 3, 1.0, 101).unwrap(),
        ])
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x_data: Vec<f64> = (0..2 * 4).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let x = Tensor::from_vec(&[2, 4], x_data).unwrap();
        check_stack_gradients(&mut stack, &x, 0);
    }
}
