//! Dense residual enhanced module: two residual dense blocks between entry
//! and exit convs. The exit conv predicts a residual haze layer that is
//! subtracted from the original input, so a zero-initialized exit makes the
//! module the identity on the original image.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Pad, ParamStore, ParamVars, Var};
use crate::network::blocks::{Conv2dLayer, Init};
use crate::scalar::Scalar;

const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub struct DremConfig {
    /// Channels entering the module (3 when fed the reconstructed image).
    pub in_channels: usize,
    /// Working width of the residual dense blocks.
    pub width: usize,
    /// Channels added by each dense conv layer.
    pub growth: usize,
    /// Dense conv layers per block.
    pub layers: usize,
}

impl Default for DremConfig {
    fn default() -> Self {
        DremConfig {
            in_channels: 3,
            width: 16,
            growth: 16,
            layers: 3,
        }
    }
}

/// Dense conv cascade with local 1x1 fusion back to `width` channels plus a
/// residual skip. Layer i consumes width + i * growth channels.
#[derive(Clone, Debug)]
pub struct ResidualDenseBlock {
    convs: Vec<Conv2dLayer>,
    local_fusion: Conv2dLayer,
    width: usize,
}

impl ResidualDenseBlock {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        width: usize,
        growth: usize,
        layers: usize,
    ) -> Result<Self> {
        if width == 0 || growth == 0 || layers == 0 {
            return Err(Error::domain("RDB width, growth, and layers must be positive"));
        }
        let mut convs = Vec::with_capacity(layers);
        for i in 0..layers {
            convs.push(Conv2dLayer::new(
                store,
                rng,
                &format!("{name}.conv{i}"),
                width + i * growth,
                growth,
                3,
                1,
                Pad::Replicate,
                true,
                Init::Uniform,
            ));
        }
        let local_fusion = Conv2dLayer::new(
            store,
            rng,
            &format!("{name}.fusion"),
            width + layers * growth,
            width,
            1,
            1,
            Pad::Zero,
            true,
            Init::Uniform,
        );
        Ok(ResidualDenseBlock {
            convs,
            local_fusion,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Input widths the dense cascade was built with (the structural
    /// dense-width law: width + i * growth).
    pub fn layer_in_widths(&self) -> Vec<usize> {
        self.convs.iter().map(|c| c.in_channels()).collect()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != self.width {
            return Err(Error::shape(format!(
                "RDB expects {} channels, got {c}",
                self.width
            )));
        }
        let mut feats = vec![x];
        for conv in &self.convs {
            let cat = if feats.len() == 1 {
                feats[0]
            } else {
                g.concat_channels(&feats)
            };
            let y = conv.forward(g, pv, cat)?;
            feats.push(g.leaky_relu(y, LRELU_SLOPE));
        }
        let cat = g.concat_channels(&feats);
        let fused = self.local_fusion.forward(g, pv, cat)?;
        Ok(g.add(x, fused))
    }
}

#[derive(Clone, Debug)]
pub struct DremModule {
    entry: Conv2dLayer,
    rdb_pair: (ResidualDenseBlock, ResidualDenseBlock),
    exit: Conv2dLayer,
}

impl DremModule {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: DremConfig,
    ) -> Result<Self> {
        let entry = Conv2dLayer::new(
            store,
            rng,
            &format!("{name}.entry"),
            cfg.in_channels,
            cfg.width,
            3,
            1,
            Pad::Replicate,
            true,
            Init::Uniform,
        );
        let rdb0 = ResidualDenseBlock::init(
            store,
            rng,
            &format!("{name}.rdb0"),
            cfg.width,
            cfg.growth,
            cfg.layers,
        )?;
        let rdb1 = ResidualDenseBlock::init(
            store,
            rng,
            &format!("{name}.rdb1"),
            cfg.width,
            cfg.growth,
            cfg.layers,
        )?;
        let exit = Conv2dLayer::new(
            store,
            rng,
            &format!("{name}.exit"),
            cfg.width,
            3,
            3,
            1,
            Pad::Replicate,
            true,
            Init::Zero,
        );
        Ok(DremModule {
            entry,
            rdb_pair: (rdb0, rdb1),
            exit,
        })
    }

    pub fn rdb_pair(&self) -> (&ResidualDenseBlock, &ResidualDenseBlock) {
        (&self.rdb_pair.0, &self.rdb_pair.1)
    }

    pub fn exit(&self) -> &Conv2dLayer {
        &self.exit
    }

    /// original - exit(rdb(rdb(entry(features)))), clamped to [0, 1].
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        features: Var,
        original: Var,
    ) -> Result<Var> {
        let (fn_, _, fh, fw) = g.value(features).dims4()?;
        let (on, oc, oh, ow) = g.value(original).dims4()?;
        if (fn_, fh, fw) != (on, oh, ow) || oc != 3 {
            return Err(Error::shape(format!(
                "DREM feature dims {:?} do not match original {:?}",
                g.value(features).shape(),
                g.value(original).shape()
            )));
        }
        let h = self.entry.forward(g, pv, features)?;
        let h = g.leaky_relu(h, LRELU_SLOPE);
        let h = self.rdb_pair.0.forward(g, pv, h)?;
        let h = self.rdb_pair.1.forward(g, pv, h)?;
        let residual = self.exit.forward(g, pv, h)?;
        let diff = g.sub(original, residual);
        Ok(g.clamp01(diff))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            shape,
            (0..shape.iter().product())
                .map(|_| rng.gen_range(-scale..scale))
                .collect(),
        )
        .unwrap()
    }

    fn rdb(width: usize, growth: usize, layers: usize) -> (ParamStore<f64>, ResidualDenseBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block =
            ResidualDenseBlock::init(&mut store, &mut rng, "rdb", width, growth, layers).unwrap();
        (store, block)
    }

    #[test]
    fn dense_width_law_holds() {
        let (_, block) = rdb(16, 16, 3);
        assert_eq!(block.layer_in_widths(), vec![16, 32, 48]);
        let (_, block) = rdb(8, 4, 5);
        assert_eq!(block.layer_in_widths(), vec![8, 12, 16, 20, 24]);
    }

    #[test]
    fn zero_weights_make_rdb_identity() {
        let (mut store, block) = rdb(4, 4, 3);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = rand_tensor(&[1, 4, 6, 6], 2, 1.0);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let xv = g.input(x.clone());
        let out = block.forward(&mut g, &pv, xv).unwrap();
        assert_eq!(g.value(out).data(), x.data());
    }

    #[test]
    fn rdb_shape_is_preserved() {
        let (store, block) = rdb(16, 8, 3);
        let x = rand_tensor(&[1, 16, 32, 32], 3, 1.0);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let xv = g.input(x);
        let out = block.forward(&mut g, &pv, xv).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 16, 32, 32]);
        assert!(g.value(out).is_finite());
    }

    #[test]
    fn rdb_rejects_width_mismatch() {
        let (store, block) = rdb(8, 4, 2);
        let x = rand_tensor(&[1, 4, 6, 6], 4, 1.0);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let xv = g.input(x);
        assert!(block.forward(&mut g, &pv, xv).is_err());
    }

    #[test]
    fn rdb_gradients_match_finite_differences() {
        let (mut store, block) = rdb(4, 3, 2);
        let x = rand_tensor(&[1, 4, 8, 8], 5, 0.8);

        let objective = |store: &ParamStore<f64>, x: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let pv = ParamVars::bind(&mut g, store);
            let xv = g.input(x.clone());
            let out = block.forward(&mut g, &pv, xv).unwrap();
            let sq = g.square(out);
            let root = g.mean_all(sq);
            g.value(root).data()[0]
        };

        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let xv = g.input(x.clone());
        let out = block.forward(&mut g, &pv, xv).unwrap();
        let sq = g.square(out);
        let root = g.mean_all(sq);
        let mut grads = g.backward(root).unwrap();
        let param_grads = pv.collect(&mut grads);

        let h = 1e-5;
        let (rtol, atol) = (1e-4, 1e-8);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for &id in &ids {
            for e in 0..store.get(id).numel() {
                let orig = store.get(id).data()[e];
                store.get_mut(id).data_mut()[e] = orig + h;
                let fp = objective(&store, &x);
                store.get_mut(id).data_mut()[e] = orig - h;
                let fm = objective(&store, &x);
                store.get_mut(id).data_mut()[e] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let an = param_grads[id.index()].as_ref().map_or(0.0, |t| t.data()[e]);
                assert!(
                    (fd - an).abs() <= atol + rtol * fd.abs().max(an.abs()),
                    "param {} elem {e}: fd={fd} analytic={an}",
                    store.name(id)
                );
            }
        }
    }

    fn drem(cfg: DremConfig) -> (ParamStore<f64>, DremModule) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DremModule::init(&mut store, &mut rng, "drem", cfg).unwrap();
        (store, m)
    }

    fn image_tensor(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        rand_tensor(&[1, 3, h, w], seed, 0.5).map(|v| v + 0.5)
    }

    #[test]
    fn zero_init_exit_makes_drem_identity() {
        let (store, m) = drem(DremConfig::default());
        let feats = rand_tensor(&[1, 3, 8, 8], 6, 1.0);
        let orig = image_tensor(7, 8, 8);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let fv = g.input(feats);
        let ov = g.input(orig.clone());
        let out = m.forward(&mut g, &pv, fv, ov).unwrap();
        for (a, b) in g.value(out).data().iter().zip(orig.data()) {
            assert_eq!(a, b, "identity at init must be exact");
        }
    }

    #[test]
    fn constant_residual_subtracts() {
        // Exit weights zero, exit bias 0.2: output = original - 0.2.
        let (mut store, m) = drem(DremConfig::default());
        let bias = m.exit().b.unwrap();
        store.get_mut(bias).data_mut().iter_mut().for_each(|v| *v = 0.2);
        let feats = rand_tensor(&[1, 3, 8, 8], 8, 1.0);
        let orig: Tensor<f64> = Tensor::full(&[1, 3, 8, 8], 0.9);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let fv = g.input(feats);
        let ov = g.input(orig);
        let out = m.forward(&mut g, &pv, fv, ov).unwrap();
        for &v in g.value(out).data() {
            assert!((v - 0.7).abs() < 1e-12, "got {v}");
        }
    }

    #[test]
    fn output_is_always_clamped() {
        let (mut store, m) = drem(DremConfig {
            width: 8,
            growth: 4,
            ..DremConfig::default()
        });
        // Large positive exit bias forces deep negative pre-clamp values.
        let bias = m.exit().b.unwrap();
        store.get_mut(bias).data_mut().iter_mut().for_each(|v| *v = 5.0);
        let feats = rand_tensor(&[1, 3, 8, 8], 9, 1.0);
        let orig = image_tensor(10, 8, 8);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let fv = g.input(feats);
        let ov = g.input(orig);
        let out = m.forward(&mut g, &pv, fv, ov).unwrap();
        assert!(g.value(out).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn drem_rejects_spatial_mismatch() {
        let (store, m) = drem(DremConfig::default());
        let feats = rand_tensor(&[1, 3, 8, 8], 12, 1.0);
        let orig = image_tensor(13, 6, 8);
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &store);
        let fv = g.input(feats);
        let ov = g.input(orig);
        assert!(m.forward(&mut g, &pv, fv, ov).is_err());
    }

    #[test]
    fn finite_outputs_over_random_sweep() {
        let (store, m) = drem(DremConfig {
            width: 8,
            growth: 8,
            ..DremConfig::default()
        });
        for seed in 0..10 {
            let feats = rand_tensor(&[1, 3, 8, 8], 20 + seed, 2.0);
            let orig = image_tensor(40 + seed, 8, 8);
            let mut g = Graph::new();
            let pv = ParamVars::bind(&mut g, &store);
            let fv = g.input(feats);
            let ov = g.input(orig);
            let out = m.forward(&mut g, &pv, fv, ov).unwrap();
            assert!(g.value(out).is_finite(), "seed {seed}");
        }
    }
}
