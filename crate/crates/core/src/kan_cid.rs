//! KAN-CID block: a channel-independent depthwise spatial branch followed by
//! a channel-dependent KAN branch over each pixel's channel vector, fused by
//! a zero-initialized 1x1 conv with a residual skip. The zero init makes the
//! block an exact identity at construction.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Pad, ParamStore, ParamVars, Var};
use crate::kan::KanLayerShape;
use crate::network::blocks::{Conv2dLayer, DwConvLayer, Init, KanStackVars};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct KanCidConfig {
    pub channels: usize,
    /// Grid sizes of the two CD-stack layers; the KAN analog of varying
    /// kernel sizes.
    pub grid_sizes: (usize, usize),
    pub order: usize,
    pub range: f64,
}

impl KanCidConfig {
    pub fn with_channels(channels: usize) -> Self {
        KanCidConfig {
            channels,
            grid_sizes: (5, 8),
            order: 3,
            range: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KanCidBlock {
    channels: usize,
    dw: DwConvLayer,
    cd: KanStackVars,
    fusion: Conv2dLayer,
}

impl KanCidBlock {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: KanCidConfig,
    ) -> Result<Self> {
        let c = cfg.channels;
        if c == 0 {
            return Err(Error::domain("KAN-CID channel count must be positive"));
        }
        let dw = DwConvLayer::new(store, rng, &format!("{name}.dw"), c, 7, Pad::Replicate);
        let mk = |gs: usize| KanLayerShape {
            n_in: c,
            n_out: c,
            grid_size: gs,
            order: cfg.order,
            range: cfg.range,
        };
        let cd = KanStackVars::new(
            store,
            rng,
            &format!("{name}.cd"),
            &[mk(cfg.grid_sizes.0), mk(cfg.grid_sizes.1)],
        )?;
        let fusion = Conv2dLayer::new(
            store,
            rng,
            &format!("{name}.fusion"),
            2 * c,
            c,
            1,
            1,
            Pad::Zero,
            true,
            Init::Zero,
        );
        Ok(KanCidBlock {
            channels: c,
            dw,
            cd,
            fusion,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dw(&self) -> &DwConvLayer {
        &self.dw
    }

    pub fn cd(&self) -> &KanStackVars {
        &self.cd
    }

    /// Spatial branch: per-channel 7x7 conv, replicate padding, no mixing.
    pub fn channel_independent<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        x: Var,
    ) -> Result<Var> {
        self.check_channels(g, x)?;
        self.dw.forward(g, pv, x)
    }

    /// Channel branch: each pixel's channel vector through the KAN stack;
    /// purely pointwise over space.
    pub fn channel_dependent<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        x: Var,
    ) -> Result<Var> {
        let (n, _, h, w) = self.check_channels(g, x)?;
        let rows = g.nchw_to_rows(x);
        let out = self.cd.forward(g, pv, rows)?;
        Ok(g.rows_to_nchw(out, n, h, w))
    }

    /// Full block: fusion([CI, CD(CI)]) + x.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let ci = self.channel_independent(g, pv, x)?;
        let cd = self.channel_dependent(g, pv, ci)?;
        let cat = g.concat_channels(&[ci, cd]);
        let fused = self.fusion.forward(g, pv, cat)?;
        Ok(g.add(x, fused))
    }

    fn check_channels<T: Scalar>(
        &self,
        g: &Graph<T>,
        x: Var,
    ) -> Result<(usize, usize, usize, usize)> {
        let dims = g.value(x).dims4()?;
        if dims.1 != self.channels {
            return Err(Error::shape(format!(
                "KAN-CID block built for {} channels, input has {}",
                self.channels, dims.1
            )));
        }
        Ok(dims)
    }
}
