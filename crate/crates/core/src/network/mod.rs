//! The dehazing generator: three-scale conv encoder, per-scale channel
//! mappers and KAN-CID blocks, coarse-to-fine fusion, a four-step refinement
//! stage, the implicit decoder head, DREM differential refinement, and a
//! small head predicting the scattering-model intermediates (per-pixel
//! transmission and global airlight) for the rehaze cycle.

pub mod blocks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FlatConfig;
use crate::drem::{DremConfig, DremModule};
use crate::error::{Error, Result};
use crate::graph::{Graph, Pad, ParamId, ParamStore, ParamVars, Var};
use crate::image::Image;
use crate::inr::{make_grid, positional_encode};
use crate::kan_cid::{KanCidBlock, KanCidConfig};
use crate::network::blocks::{uniform_weights, Conv2dLayer, Init, Mlp};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Encoder widths at full, 1/2, and 1/4 resolution.
    pub enc_widths: [usize; 3],
    /// Common channel width after the per-scale mappers.
    pub common_width: usize,
    /// Output widths of the four refinement stages; the last must be 3.
    pub refine_widths: [usize; 4],
    /// Grid sizes of the two KAN-CID channel-stack layers.
    pub kan_grid_sizes: (usize, usize),
    pub kan_order: usize,
    pub kan_range: f64,
    pub inr_hidden_width: usize,
    pub inr_hidden_layers: usize,
    pub inr_unfold_radius: usize,
    pub pos_l: usize,
    pub drem_width: usize,
    pub drem_growth: usize,
    pub drem_layers: usize,
    pub asm_head_width: usize,
    pub use_kan_cid: bool,
    pub use_idrm: bool,
    pub use_drem: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            enc_widths: [16, 32, 48],
            common_width: 48,
            refine_widths: [32, 16, 8, 3],
            kan_grid_sizes: (5, 8),
            kan_order: 3,
            kan_range: 1.0,
            inr_hidden_width: 64,
            inr_hidden_layers: 4,
            inr_unfold_radius: 1,
            pos_l: 4,
            drem_width: 16,
            drem_growth: 16,
            drem_layers: 3,
            asm_head_width: 16,
            use_kan_cid: true,
            use_idrm: true,
            use_drem: true,
        }
    }
}

impl GeneratorConfig {
    /// Reduced capacity for CPU-bound experiments and the test suite.
    pub fn toy() -> Self {
        GeneratorConfig {
            enc_widths: [8, 12, 16],
            common_width: 16,
            refine_widths: [12, 8, 6, 3],
            inr_hidden_width: 32,
            inr_hidden_layers: 2,
            drem_width: 8,
            drem_growth: 8,
            asm_head_width: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_widths.iter().any(|&w| w == 0)
            || self.common_width == 0
            || self.refine_widths.iter().any(|&w| w == 0)
            || self.asm_head_width == 0
        {
            return Err(Error::domain("generator widths must be positive"));
        }
        if self.refine_widths[3] != 3 {
            return Err(Error::domain(
                "the last refinement stage must emit 3 channels",
            ));
        }
        if self.pos_l == 0 {
            return Err(Error::domain("pos_l must be >= 1"));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        for (i, w) in self.enc_widths.iter().enumerate() {
            c.set(format!("enc_width_{i}"), w);
        }
        c.set("common_width", self.common_width);
        for (i, w) in self.refine_widths.iter().enumerate() {
            c.set(format!("refine_width_{i}"), w);
        }
        c.set("kan_grid_size_0", self.kan_grid_sizes.0);
        c.set("kan_grid_size_1", self.kan_grid_sizes.1);
        c.set("kan_order", self.kan_order);
        c.set("kan_range", self.kan_range);
        c.set("inr_hidden_width", self.inr_hidden_width);
        c.set("inr_hidden_layers", self.inr_hidden_layers);
        c.set("inr_unfold_radius", self.inr_unfold_radius);
        c.set("pos_l", self.pos_l);
        c.set("drem_width", self.drem_width);
        c.set("drem_growth", self.drem_growth);
        c.set("drem_layers", self.drem_layers);
        c.set("asm_head_width", self.asm_head_width);
        c.set("use_kan_cid", self.use_kan_cid);
        c.set("use_idrm", self.use_idrm);
        c.set("use_drem", self.use_drem);
        c
    }

    /// Read from flat config text, starting from defaults; unrelated keys
    /// are ignored so generator and training settings can share one file.
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let mut g = GeneratorConfig::default();
        for i in 0..3 {
            if let Some(v) = c.get_usize(&format!("enc_width_{i}"))? {
                g.enc_widths[i] = v;
            }
        }
        if let Some(v) = c.get_usize("common_width")? {
            g.common_width = v;
        }
        for i in 0..4 {
            if let Some(v) = c.get_usize(&format!("refine_width_{i}"))? {
                g.refine_widths[i] = v;
            }
        }
        if let Some(v) = c.get_usize("kan_grid_size_0")? {
            g.kan_grid_sizes.0 = v;
        }
        if let Some(v) = c.get_usize("kan_grid_size_1")? {
            g.kan_grid_sizes.1 = v;
        }
        if let Some(v) = c.get_usize("kan_order")? {
            g.kan_order = v;
        }
        if let Some(v) = c.get_f64("kan_range")? {
            g.kan_range = v;
        }
        if let Some(v) = c.get_usize("inr_hidden_width")? {
            g.inr_hidden_width = v;
        }
        if let Some(v) = c.get_usize("inr_hidden_layers")? {
            g.inr_hidden_layers = v;
        }
        if let Some(v) = c.get_usize("inr_unfold_radius")? {
            g.inr_unfold_radius = v;
        }
        if let Some(v) = c.get_usize("pos_l")? {
            g.pos_l = v;
        }
        if let Some(v) = c.get_usize("drem_width")? {
            g.drem_width = v;
        }
        if let Some(v) = c.get_usize("drem_growth")? {
            g.drem_growth = v;
        }
        if let Some(v) = c.get_usize("drem_layers")? {
            g.drem_layers = v;
        }
        if let Some(v) = c.get_usize("asm_head_width")? {
            g.asm_head_width = v;
        }
        if let Some(v) = c.get_bool("use_kan_cid")? {
            g.use_kan_cid = v;
        }
        if let Some(v) = c.get_bool("use_idrm")? {
            g.use_idrm = v;
        }
        if let Some(v) = c.get_bool("use_drem")? {
            g.use_drem = v;
        }
        g.validate()?;
        Ok(g)
    }
}

/// Graph handles for the generator outputs.
pub struct GenOutVars {
    pub clean: Var,
    pub transmission: Var,
    pub airlight: Var,
}

/// Inference output of [`DehazeGenerator::dehaze_forward`].
pub struct DehazeOutput {
    pub clean: Image,
    /// Per-pixel transmission estimate in (0, 1), shape [H, W].
    pub transmission: Tensor<f64>,
    pub airlight: [f64; 3],
}

pub struct DehazeGenerator {
    cfg: GeneratorConfig,
    enc: Vec<Conv2dLayer>,
    mappers: Vec<Conv2dLayer>,
    kan_cid: Option<Vec<KanCidBlock>>,
    fuse: Vec<Conv2dLayer>,
    refine: Vec<Conv2dLayer>,
    idrm: Option<Mlp>,
    drem: Option<DremModule>,
    asm_shared: Conv2dLayer,
    asm_t: Conv2dLayer,
    asm_a_w: ParamId,
    asm_a_b: ParamId,
}

impl DehazeGenerator {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        seed: u64,
        cfg: GeneratorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1, w2] = cfg.enc_widths;
        let c = cfg.common_width;

        let conv = |store: &mut ParamStore<T>,
                        rng: &mut ChaCha8Rng,
                        name: &str,
                        ci: usize,
                        co: usize,
                        k: usize,
                        s: usize,
                        init: Init| {
            Conv2dLayer::new(store, rng, name, ci, co, k, s, Pad::Replicate, true, init)
        };

        let enc = vec![
            conv(store, &mut rng, "gen.enc.s0a", 3, w0, 3, 1, Init::Uniform),
            conv(store, &mut rng, "gen.enc.s0b", w0, w0, 3, 1, Init::Uniform),
            conv(store, &mut rng, "gen.enc.s1a", w0, w1, 3, 2, Init::Uniform),
            conv(store, &mut rng, "gen.enc.s1b", w1, w1, 3, 1, Init::Uniform),
            conv(store, &mut rng, "gen.enc.s2a", w1, w2, 3, 2, Init::Uniform),
            conv(store, &mut rng, "gen.enc.s2b", w2, w2, 3, 1, Init::Uniform),
        ];
        let mappers = vec![
            conv(store, &mut rng, "gen.map.s0", w0, c, 1, 1, Init::Uniform),
            conv(store, &mut rng, "gen.map.s1", w1, c, 1, 1, Init::Uniform),
            conv(store, &mut rng, "gen.map.s2", w2, c, 1, 1, Init::Uniform),
        ];
        let kan_cid = if cfg.use_kan_cid {
            let kc = KanCidConfig {
                channels: c,
                grid_sizes: cfg.kan_grid_sizes,
                order: cfg.kan_order,
                range: cfg.kan_range,
            };
            Some(vec![
                KanCidBlock::init(store, &mut rng, "gen.kan_cid.s0", kc)?,
                KanCidBlock::init(store, &mut rng, "gen.kan_cid.s1", kc)?,
                KanCidBlock::init(store, &mut rng, "gen.kan_cid.s2", kc)?,
            ])
        } else {
            None
        };
        let fuse = vec![
            conv(store, &mut rng, "gen.fuse.f1", 2 * c, c, 1, 1, Init::Uniform),
            conv(store, &mut rng, "gen.fuse.f0", 2 * c, c, 1, 1, Init::Uniform),
        ];
        let rw = cfg.refine_widths;
        let refine = vec![
            conv(store, &mut rng, "gen.refine.r0", c, rw[0], 3, 1, Init::Uniform),
            conv(store, &mut rng, "gen.refine.r1", rw[0], rw[1], 3, 1, Init::Uniform),
            conv(store, &mut rng, "gen.refine.r2", rw[1], rw[2], 3, 1, Init::Uniform),
            conv(store, &mut rng, "gen.refine.r3", rw[2], rw[3], 3, 1, Init::Uniform),
        ];
        let idrm = if cfg.use_idrm {
            let win = 2 * cfg.inr_unfold_radius + 1;
            let in_width = 3 * win * win + 4 * cfg.pos_l;
            let mut widths = vec![in_width];
            widths.extend(std::iter::repeat(cfg.inr_hidden_width).take(cfg.inr_hidden_layers));
            widths.push(3);
            Some(Mlp::new(store, &mut rng, "gen.idrm.mlp", &widths))
        } else {
            None
        };
        let drem = if cfg.use_drem {
            Some(DremModule::init(
                store,
                &mut rng,
                "gen.drem",
                DremConfig {
                    in_channels: 3,
                    width: cfg.drem_width,
                    growth: cfg.drem_growth,
                    layers: cfg.drem_layers,
                },
            )?)
        } else {
            None
        };
        let aw = cfg.asm_head_width;
        let asm_shared = conv(store, &mut rng, "gen.asm.shared", c, aw, 3, 1, Init::Uniform);
        let asm_t = conv(store, &mut rng, "gen.asm.t", aw, 1, 1, 1, Init::Zero);
        let asm_a_w = store.register("gen.asm.a.w", Tensor::zeros(&[aw, 3]));
        let asm_a_b = store.register("gen.asm.a.b", Tensor::zeros(&[3]));
        // Airlight head starts neutral (sigmoid(0) = 0.5); give the weight a
        // tiny spread so its gradient signal is not perfectly symmetric.
        {
            let w = store.get_mut(asm_a_w);
            let vals: Vec<T> = uniform_weights(&mut rng, w.numel(), 100 * aw);
            w.data_mut().copy_from_slice(&vals);
        }

        Ok(DehazeGenerator {
            cfg,
            enc,
            mappers,
            kan_cid,
            fuse,
            refine,
            idrm,
            drem,
            asm_shared,
            asm_t,
            asm_a_w,
            asm_a_b,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn mapper(&self, scale: usize) -> &Conv2dLayer {
        &self.mappers[scale]
    }

    fn check_input_dims(&self, h: usize, w: usize) -> Result<()> {
        if h < 8 || w < 8 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!(
                "generator needs H and W >= 8 and divisible by 4, got {h}x{w}; \
                 pad the image up to the next multiple of 4"
            )));
        }
        Ok(())
    }

    /// Encoder pyramid at full, 1/2, and 1/4 resolution.
    pub fn extract_multiscale<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        x: Var,
    ) -> Result<[Var; 3]> {
        let (_, _, h, w) = g.value(x).dims4()?;
        self.check_input_dims(h, w)?;
        let stage = |g: &mut Graph<T>, conv: &Conv2dLayer, v: Var| -> Result<Var> {
            let y = conv.forward(g, pv, v)?;
            Ok(g.leaky_relu(y, LRELU_SLOPE))
        };
        let s0 = stage(g, &self.enc[0], x)?;
        let s0 = stage(g, &self.enc[1], s0)?;
        let s1 = stage(g, &self.enc[2], s0)?;
        let s1 = stage(g, &self.enc[3], s1)?;
        let s2 = stage(g, &self.enc[4], s1)?;
        let s2 = stage(g, &self.enc[5], s2)?;
        Ok([s0, s1, s2])
    }

    /// Coarse-to-fine fusion of a mapped pyramid to full resolution.
    pub fn fuse_pyramid<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        pyramid: [Var; 3],
    ) -> Result<Var> {
        let [m0, m1, m2] = pyramid;
        let (_, _, h0, w0) = g.value(m0).dims4()?;
        let (_, _, h1, w1) = g.value(m1).dims4()?;
        let (_, _, h2, w2) = g.value(m2).dims4()?;
        if (h1, w1) != (h0 / 2, w0 / 2) || (h2, w2) != (h0 / 4, w0 / 4) {
            return Err(Error::shape(format!(
                "pyramid scales inconsistent: {h0}x{w0}, {h1}x{w1}, {h2}x{w2}"
            )));
        }
        let u2 = g.upsample2x(m2);
        let cat1 = g.concat_channels(&[u2, m1]);
        let f1 = self.fuse[0].forward(g, pv, cat1)?;
        let f1 = g.leaky_relu(f1, LRELU_SLOPE);
        let u1 = g.upsample2x(f1);
        let cat0 = g.concat_channels(&[u1, m0]);
        let f0 = self.fuse[1].forward(g, pv, cat0)?;
        Ok(g.leaky_relu(f0, LRELU_SLOPE))
    }

    /// Full forward pass on an [N, 3, H, W] batch already in the graph.
    pub fn forward_graph<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        pv: &ParamVars,
        x: Var,
    ) -> Result<GenOutVars> {
        let (n, cin, h, w) = g.value(x).dims4()?;
        if cin != 3 {
            return Err(Error::shape(format!("generator expects 3 channels, got {cin}")));
        }
        self.check_input_dims(h, w)?;

        let [s0, s1, s2] = self.extract_multiscale(g, pv, x)?;
        let mut m0 = self.mappers[0].forward(g, pv, s0)?;
        let mut m1 = self.mappers[1].forward(g, pv, s1)?;
        let mut m2 = self.mappers[2].forward(g, pv, s2)?;
        if let Some(blocks) = &self.kan_cid {
            m0 = blocks[0].forward(g, pv, m0)?;
            m1 = blocks[1].forward(g, pv, m1)?;
            m2 = blocks[2].forward(g, pv, m2)?;
        }
        let fused = self.fuse_pyramid(g, pv, [m0, m1, m2])?;

        let mut refined = fused;
        for conv in &self.refine {
            refined = conv.forward(g, pv, refined)?;
            refined = g.leaky_relu(refined, LRELU_SLOPE);
        }

        let enhanced = match &self.idrm {
            Some(mlp) => {
                let unfolded = g.unfold(refined, self.cfg.inr_unfold_radius);
                let rows = g.nchw_to_rows(unfolded);
                let enc = self.encoding_rows::<T>(n, h, w)?;
                let enc_rows = g.input(enc);
                let cat = g.concat_cols(&[rows, enc_rows]);
                let out = mlp.forward(g, pv, cat)?;
                let bounded = g.sigmoid(out);
                g.rows_to_nchw(bounded, n, h, w)
            }
            None => refined,
        };

        let clean_pre = match &self.drem {
            Some(drem) => drem.forward(g, pv, enhanced, x)?,
            None => enhanced,
        };
        let clean = g.clamp01(clean_pre);

        let ah = self.asm_shared.forward(g, pv, fused)?;
        let ah = g.leaky_relu(ah, LRELU_SLOPE);
        let t_logits = self.asm_t.forward(g, pv, ah)?;
        let transmission = g.sigmoid(t_logits);
        let pooled = g.global_mean_hw(ah);
        let a_lin = g.matmul(pooled, pv.var(self.asm_a_w));
        let a_lin = g.add_row_bias(a_lin, pv.var(self.asm_a_b));
        let airlight = g.sigmoid(a_lin);

        Ok(GenOutVars {
            clean,
            transmission,
            airlight,
        })
    }

    /// Positional-encoding rows for an N-image batch, [N*H*W, 4L].
    fn encoding_rows<T: Scalar>(&self, n: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let enc = positional_encode(&make_grid(h, w)?.cast::<T>(), self.cfg.pos_l)?;
        let row = enc.reshaped(&[h * w, 4 * self.cfg.pos_l])?;
        if n == 1 {
            return Ok(row);
        }
        let mut data = Vec::with_capacity(n * row.numel());
        for _ in 0..n {
            data.extend_from_slice(row.data());
        }
        Tensor::from_vec(&[n * h * w, 4 * self.cfg.pos_l], data)
    }

    /// Dehaze one image: returns the restored image, the per-pixel
    /// transmission estimate, and the global airlight estimate.
    pub fn dehaze_forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        hazy: &Image,
    ) -> Result<DehazeOutput> {
        let mut g: Graph<T> = Graph::new();
        let pv = ParamVars::bind(&mut g, store);
        let x = g.input(hazy.to_tensor_nchw());
        let out = self.forward_graph(&mut g, &pv, x)?;
        let clean = Image::from_tensor_nchw(g.value(out.clean))?;
        let (h, w) = (hazy.height(), hazy.width());
        let t = Tensor::from_vec(
            &[h, w],
            g.value(out.transmission).data().iter().map(|v| v.as_f64()).collect(),
        )?;
        let a = g.value(out.airlight).data();
        let airlight = [a[0].as_f64(), a[1].as_f64(), a[2].as_f64()];
        Ok(DehazeOutput {
            clean,
            transmission: t,
            airlight,
        })
    }
}
