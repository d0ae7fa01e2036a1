//! Unpaired training: two patch discriminators against the generator, Adam
//! updates, a plain-text metrics trace, and periodic checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod losses;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::FlatConfig;
use crate::dataio::UnpairedPools;
use crate::error::{Error, Result};
use crate::graph::{Graph, Pad, ParamStore, ParamVars, Var};
use crate::image::Image;
use crate::metrics::{psnr, ssim};
use crate::network::blocks::{Conv2dLayer, Init};
use crate::network::{DehazeGenerator, GeneratorConfig};
use crate::scalar::Scalar;

pub use adam::{adam_step, adam_update_slice, AdamParams, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use losses::{compute_losses, images_to_batch, LossWeights, PseudoHazeConfig};

const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamParams,
    pub weights: LossWeights,
    pub pseudo: PseudoHazeConfig,
    pub generator: GeneratorConfig,
    pub disc_widths: [usize; 3],
    pub eval_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 4,
            seed: 0,
            adam: AdamParams::default(),
            weights: LossWeights::default(),
            pseudo: PseudoHazeConfig::default(),
            generator: GeneratorConfig::default(),
            disc_widths: [32, 64, 128],
            eval_every: 500,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig {
            generator: GeneratorConfig::toy(),
            disc_widths: [16, 32, 48],
            ..Default::default()
        }
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = self.generator.to_flat();
        c.set("iterations", self.iterations);
        c.set("batch_size", self.batch_size);
        c.set("seed", self.seed);
        c.set("lr", self.adam.lr);
        c.set("beta1", self.adam.beta1);
        c.set("beta2", self.adam.beta2);
        c.set("adam_eps", self.adam.eps);
        c.set("lambda_adv", self.weights.adv);
        c.set("lambda_cyc", self.weights.cyc);
        c.set("lambda_idt", self.weights.idt);
        c.set("lambda_pseudo", self.weights.pseudo);
        c.set("pseudo_beta_min", self.pseudo.beta_range.0);
        c.set("pseudo_beta_max", self.pseudo.beta_range.1);
        c.set("pseudo_a_min", self.pseudo.a_range.0);
        c.set("pseudo_a_max", self.pseudo.a_range.1);
        for (i, w) in self.disc_widths.iter().enumerate() {
            c.set(format!("disc_width_{i}"), w);
        }
        c.set("eval_every", self.eval_every);
        c.set("checkpoint_every", self.checkpoint_every);
        c
    }

    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let mut t = TrainConfig {
            generator: GeneratorConfig::from_flat(c)?,
            ..Default::default()
        };
        if let Some(v) = c.get_u64("iterations")? {
            t.iterations = v;
        }
        if let Some(v) = c.get_usize("batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = c.get_u64("seed")? {
            t.seed = v;
        }
        if let Some(v) = c.get_f64("lr")? {
            t.adam.lr = v;
        }
        if let Some(v) = c.get_f64("beta1")? {
            t.adam.beta1 = v;
        }
        if let Some(v) = c.get_f64("beta2")? {
            t.adam.beta2 = v;
        }
        if let Some(v) = c.get_f64("adam_eps")? {
            t.adam.eps = v;
        }
        if let Some(v) = c.get_f64("lambda_adv")? {
            t.weights.adv = v;
        }
        if let Some(v) = c.get_f64("lambda_cyc")? {
            t.weights.cyc = v;
        }
        if let Some(v) = c.get_f64("lambda_idt")? {
            t.weights.idt = v;
        }
        if let Some(v) = c.get_f64("lambda_pseudo")? {
            t.weights.pseudo = v;
        }
        if let Some(v) = c.get_f64("pseudo_beta_min")? {
            t.pseudo.beta_range.0 = v;
        }
        if let Some(v) = c.get_f64("pseudo_beta_max")? {
            t.pseudo.beta_range.1 = v;
        }
        if let Some(v) = c.get_f64("pseudo_a_min")? {
            t.pseudo.a_range.0 = v;
        }
        if let Some(v) = c.get_f64("pseudo_a_max")? {
            t.pseudo.a_range.1 = v;
        }
        for i in 0..3 {
            if let Some(v) = c.get_usize(&format!("disc_width_{i}"))? {
                t.disc_widths[i] = v;
            }
        }
        if let Some(v) = c.get_u64("eval_every")? {
            t.eval_every = v;
        }
        if let Some(v) = c.get_u64("checkpoint_every")? {
            t.checkpoint_every = v;
        }
        Ok(t)
    }
}

/// Patch-level least-squares discriminator: strided conv stack to a grid of
/// real-valued scores.
pub struct PatchDiscriminator {
    convs: Vec<Conv2dLayer>,
}

impl PatchDiscriminator {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        widths: [usize; 3],
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1, w2] = widths;
        let convs = vec![
            Conv2dLayer::new(store, &mut rng, &format!("{name}.c0"), 3, w0, 3, 2, Pad::Replicate, true, Init::Uniform),
            Conv2dLayer::new(store, &mut rng, &format!("{name}.c1"), w0, w1, 3, 2, Pad::Replicate, true, Init::Uniform),
            Conv2dLayer::new(store, &mut rng, &format!("{name}.c2"), w1, w2, 3, 1, Pad::Replicate, true, Init::Uniform),
            Conv2dLayer::new(store, &mut rng, &format!("{name}.out"), w2, 1, 3, 1, Pad::Replicate, true, Init::Uniform),
        ];
        PatchDiscriminator { convs }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
        let mut cur = x;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            cur = conv.forward(g, pv, cur)?;
            if i != last {
                cur = g.leaky_relu(cur, LRELU_SLOPE);
            }
        }
        Ok(cur)
    }
}

/// Generator plus both discriminators, each with its own parameter store.
pub struct TrainModels {
    pub gen: DehazeGenerator,
    pub gen_store: ParamStore<f32>,
    pub disc_clean: PatchDiscriminator,
    pub disc_clean_store: ParamStore<f32>,
    pub disc_hazy: PatchDiscriminator,
    pub disc_hazy_store: ParamStore<f32>,
}

impl TrainModels {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let mut gen_store = ParamStore::new();
        let gen = DehazeGenerator::init(&mut gen_store, cfg.seed, cfg.generator)?;
        let mut disc_clean_store = ParamStore::new();
        let disc_clean = PatchDiscriminator::init(
            &mut disc_clean_store,
            cfg.seed.wrapping_add(1),
            "disc_clean",
            cfg.disc_widths,
        );
        let mut disc_hazy_store = ParamStore::new();
        let disc_hazy = PatchDiscriminator::init(
            &mut disc_hazy_store,
            cfg.seed.wrapping_add(2),
            "disc_hazy",
            cfg.disc_widths,
        );
        Ok(TrainModels {
            gen,
            gen_store,
            disc_clean,
            disc_clean_store,
            disc_hazy,
            disc_hazy_store,
        })
    }

    pub fn checkpoint(&self, config_text: String) -> Checkpoint {
        Checkpoint::from_stores(
            config_text,
            &[&self.gen_store, &self.disc_clean_store, &self.disc_hazy_store],
        )
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.apply_to_store(&mut self.gen_store)?;
        ck.apply_to_store(&mut self.disc_clean_store)?;
        ck.apply_to_store(&mut self.disc_hazy_store)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: u64,
    pub name: String,
    pub value: f64,
}

/// Append-only metrics trace; one `iteration, loss_name, value` line each.
#[derive(Clone, Debug, Default)]
pub struct MetricsTrace {
    pub entries: Vec<TraceEntry>,
}

impl MetricsTrace {
    pub fn push(&mut self, iteration: u64, name: &str, value: f64) {
        self.entries.push(TraceEntry {
            iteration,
            name: name.to_string(),
            value,
        });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!("{}, {}, {}\n", e.iteration, e.name, e.value));
        }
        s
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.entries.iter().rev().find(|e| e.name == name).map(|e| e.value)
    }
}

pub struct TrainOutcome {
    pub models: TrainModels,
    pub trace: MetricsTrace,
    pub final_checkpoint: PathBuf,
}

/// Run the unpaired loop: one generator update and one update of each
/// discriminator per iteration, losses traced every iteration, PSNR/SSIM on
/// the validation pairs every `eval_every`, checkpoints periodically and at
/// the end. Deterministic given the config seed.
pub fn train_loop(
    cfg: &TrainConfig,
    pools: &mut UnpairedPools,
    validation: &[(Image, Image)],
    out_dir: &Path,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut models = TrainModels::init(cfg)?;
    let mut trace = MetricsTrace::default();
    let trace_path = out_dir.join("trace.txt");
    let mut trace_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&trace_path)
        .map_err(|e| Error::io(&trace_path, e))?;

    let cfg_text = cfg.to_flat().to_text();
    let mut gen_adam = AdamState::new(&models.gen_store);
    let mut dc_adam = AdamState::new(&models.disc_clean_store);
    let mut dh_adam = AdamState::new(&models.disc_hazy_store);
    let mut pseudo_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70d0_5eed);

    let record = |trace: &mut MetricsTrace,
                      file: &mut std::fs::File,
                      it: u64,
                      name: &str,
                      value: f64|
     -> Result<()> {
        trace.push(it, name, value);
        writeln!(file, "{it}, {name}, {value}").map_err(|e| Error::io(&trace_path, e))?;
        if !value.is_finite() {
            return Err(Error::Train {
                iteration: it,
                name: name.to_string(),
                value,
            });
        }
        Ok(())
    };

    for it in 1..=cfg.iterations {
        let (hazy_batch, clean_batch) = pools.next_batch(cfg.batch_size)?;
        let hazy_t = images_to_batch(&hazy_batch)?;
        let clean_t = images_to_batch(&clean_batch)?;
        let pseudo_seeds: Vec<u64> = (0..cfg.batch_size).map(|_| pseudo_rng.gen()).collect();
        let pseudo_t = losses::pseudo_hazy_batch(
            &clean_batch,
            &pseudo_seeds,
            cfg.pseudo.beta_range,
            cfg.pseudo.a_range,
        )?;

        // Generator update (discriminators held fixed).
        let (dehazed, rehazed) = {
            let mut g: Graph<f32> = Graph::new();
            let pv_gen = ParamVars::bind(&mut g, &models.gen_store);
            let pv_dc = ParamVars::bind(&mut g, &models.disc_clean_store);
            let pv_dh = ParamVars::bind(&mut g, &models.disc_hazy_store);
            let hazy = g.input(hazy_t.clone());
            let clean = g.input(clean_t.clone());
            let pseudo_hazy = g.input(pseudo_t);
            let pvs = losses::GenPvs {
                gen: &pv_gen,
                disc_clean: &pv_dc,
                disc_hazy: &pv_dh,
            };
            let gl = losses::generator_loss_graph(
                &mut g, &models, &pvs, hazy, clean, pseudo_hazy, &cfg.weights,
            )?;
            for (name, var) in [
                ("adv_clean", gl.adv_clean),
                ("adv_hazy", gl.adv_hazy),
                ("cyc", gl.cyc),
                ("idt", gl.idt),
                ("pseudo", gl.pseudo),
                ("total_g", gl.total),
            ] {
                record(&mut trace, &mut trace_file, it, name, g.value(var).data()[0] as f64)?;
            }
            let dehazed = g.value(gl.dehazed).clone();
            let rehazed = g.value(gl.rehazed).clone();
            let mut grads = g.backward(gl.total)?;
            let gen_grads = pv_gen.collect(&mut grads);
            adam_step(&mut models.gen_store, &gen_grads, &mut gen_adam, &cfg.adam)?;
            (dehazed, rehazed)
        };

        // Discriminator updates on detached fakes.
        {
            let mut g: Graph<f32> = Graph::new();
            let pv_dc = ParamVars::bind(&mut g, &models.disc_clean_store);
            let real = g.input(clean_t.clone());
            let fake = g.input(dehazed);
            let loss = losses::discriminator_loss_graph(&mut g, &models.disc_clean, &pv_dc, real, fake)?;
            record(&mut trace, &mut trace_file, it, "d_clean", g.value(loss).data()[0] as f64)?;
            let mut grads = g.backward(loss)?;
            let dgrads = pv_dc.collect(&mut grads);
            adam_step(&mut models.disc_clean_store, &dgrads, &mut dc_adam, &cfg.adam)?;
        }
        {
            let mut g: Graph<f32> = Graph::new();
            let pv_dh = ParamVars::bind(&mut g, &models.disc_hazy_store);
            let real = g.input(hazy_t.clone());
            let fake = g.input(rehazed);
            let loss = losses::discriminator_loss_graph(&mut g, &models.disc_hazy, &pv_dh, real, fake)?;
            record(&mut trace, &mut trace_file, it, "d_hazy", g.value(loss).data()[0] as f64)?;
            let mut grads = g.backward(loss)?;
            let dgrads = pv_dh.collect(&mut grads);
            adam_step(&mut models.disc_hazy_store, &dgrads, &mut dh_adam, &cfg.adam)?;
        }

        if cfg.eval_every > 0 && it % cfg.eval_every == 0 && !validation.is_empty() {
            let (p, s) = evaluate(&models, validation)?;
            record(&mut trace, &mut trace_file, it, "val_psnr", p)?;
            record(&mut trace, &mut trace_file, it, "val_ssim", s)?;
        }
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it != cfg.iterations {
            let path = out_dir.join(format!("ckpt_{it:07}.ckpt"));
            models.checkpoint(cfg_text.clone()).save(&path)?;
        }
    }

    let final_path = out_dir.join("final.ckpt");
    models.checkpoint(cfg_text).save(&final_path)?;
    Ok(TrainOutcome {
        models,
        trace,
        final_checkpoint: final_path,
    })
}

/// Mean PSNR/SSIM of dehazed validation inputs against their references.
pub fn evaluate(models: &TrainModels, pairs: &[(Image, Image)]) -> Result<(f64, f64)> {
    let mut psum = 0.0;
    let mut ssum = 0.0;
    for (hazy, clean) in pairs {
        let out = models.gen.dehaze_forward(&models.gen_store, hazy)?;
        // An exact reconstruction would make the mean infinite; cap each
        // sample at a finite ceiling instead.
        psum += psnr(&out.clean, clean)?.min(99.0);
        ssum += ssim(&out.clean, clean)?;
    }
    let n = pairs.len() as f64;
    Ok((psum / n, ssum / n))
}
