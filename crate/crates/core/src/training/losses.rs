//! Unpaired loss suite: least-squares adversarial terms on the dehazed and
//! rehazed images, a scattering-model cycle (rehaze the prediction with the
//! predicted transmission/airlight and compare against the hazy input), an
//! identity term on clean inputs, and a self-augmented recovery term.
//!
//! The recovery term exists because the cycle alone has a degenerate global
//! minimum: predicting transmission 1 everywhere and passing the input
//! through satisfies both the cycle and the identity exactly, and the strong
//! L1 cycle gradient pins the generator there against the adversarial push.
//! Synthesizing haze onto clean-pool crops with the scattering engine and
//! supervising their recovery removes that equilibrium.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamVars, Var};
use crate::image::Image;
use crate::tensor::Tensor;

use super::{PatchDiscriminator, TrainModels};

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub adv: f64,
    pub cyc: f64,
    pub idt: f64,
    /// Weight of the self-augmented recovery loss (dehazing pseudo-hazy
    /// images synthesized from clean-pool crops).
    pub pseudo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adv: 1.0,
            cyc: 10.0,
            idt: 5.0,
            pseudo: 10.0,
        }
    }
}

/// Stack images into an [N, 3, H, W] batch.
pub fn images_to_batch(images: &[Image]) -> Result<Tensor<f32>> {
    let Some(first) = images.first() else {
        return Err(Error::domain("batch must contain at least one image"));
    };
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::shape("batch images must share dimensions"));
        }
        let t: Tensor<f32> = img.to_tensor_nchw();
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// Mean squared distance of discriminator scores to a constant target.
pub(crate) fn lsgan_to(g: &mut Graph<f32>, scores: Var, target: f64) -> Var {
    let shifted = g.add_const(scores, -target as f32);
    let sq = g.square(shifted);
    g.mean_all(sq)
}

/// Generator-side loss graph handles.
pub struct GenLossVars {
    pub adv_clean: Var,
    pub adv_hazy: Var,
    pub cyc: Var,
    pub idt: Var,
    pub pseudo: Var,
    pub total: Var,
    pub dehazed: Var,
    pub rehazed: Var,
}

pub struct GenPvs<'a> {
    pub gen: &'a ParamVars,
    pub disc_clean: &'a ParamVars,
    pub disc_hazy: &'a ParamVars,
}

/// Build the generator update graph on one unpaired batch pair plus the
/// pseudo-hazy renditions of the clean batch.
pub fn generator_loss_graph(
    g: &mut Graph<f32>,
    models: &TrainModels,
    pvs: &GenPvs<'_>,
    hazy: Var,
    clean: Var,
    pseudo_hazy: Var,
    w: &LossWeights,
) -> Result<GenLossVars> {
    let out = models.gen.forward_graph(g, pvs.gen, hazy)?;
    let rehazed = g.asm_compose(out.clean, out.transmission, out.airlight);

    let scores_clean = models.disc_clean.forward(g, pvs.disc_clean, out.clean)?;
    let adv_clean = lsgan_to(g, scores_clean, 1.0);
    let scores_hazy = models.disc_hazy.forward(g, pvs.disc_hazy, rehazed)?;
    let adv_hazy = lsgan_to(g, scores_hazy, 1.0);

    let cyc = g.l1(rehazed, hazy);

    let idt_out = models.gen.forward_graph(g, pvs.gen, clean)?;
    let idt = g.l1(idt_out.clean, clean);

    let pseudo_out = models.gen.forward_graph(g, pvs.gen, pseudo_hazy)?;
    let pseudo = g.l1(pseudo_out.clean, clean);

    let adv_sum = g.add(adv_clean, adv_hazy);
    let adv_term = g.scale(adv_sum, w.adv as f32);
    let cyc_term = g.scale(cyc, w.cyc as f32);
    let idt_term = g.scale(idt, w.idt as f32);
    let pseudo_term = g.scale(pseudo, w.pseudo as f32);
    let partial = g.add(adv_term, cyc_term);
    let partial = g.add(partial, idt_term);
    let total = g.add(partial, pseudo_term);

    Ok(GenLossVars {
        adv_clean,
        adv_hazy,
        cyc,
        idt,
        pseudo,
        total,
        dehazed: out.clean,
        rehazed,
    })
}

/// Synthesize a pseudo-hazy version of each clean image with seeded random
/// scattering parameters.
pub fn pseudo_hazy_batch(
    clean_batch: &[Image],
    seeds: &[u64],
    beta_range: (f64, f64),
    a_range: (f64, f64),
) -> Result<Tensor<f32>> {
    if seeds.len() != clean_batch.len() {
        return Err(Error::shape("one seed per pseudo-hazy image required"));
    }
    let mut hazy = Vec::with_capacity(clean_batch.len());
    for (img, &seed) in clean_batch.iter().zip(seeds) {
        let params =
            crate::asm::random_asm_params(img.height(), img.width(), seed, beta_range, a_range)?;
        hazy.push(crate::asm::synthesize_haze(img, &params)?);
    }
    images_to_batch(&hazy)
}

/// Discriminator update graph: real toward 1, (detached) fake toward 0.
pub fn discriminator_loss_graph(
    g: &mut Graph<f32>,
    disc: &PatchDiscriminator,
    pv: &ParamVars,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let sr = disc.forward(g, pv, real)?;
    let lr = lsgan_to(g, sr, 1.0);
    let sf = disc.forward(g, pv, fake)?;
    let lf = lsgan_to(g, sf, 0.0);
    let sum = g.add(lr, lf);
    Ok(g.scale(sum, 0.5))
}

/// Scattering-parameter ranges for the self-augmented recovery term; keep
/// them in the same family as the hazy pool.
#[derive(Clone, Copy, Debug)]
pub struct PseudoHazeConfig {
    pub beta_range: (f64, f64),
    pub a_range: (f64, f64),
}

impl Default for PseudoHazeConfig {
    fn default() -> Self {
        PseudoHazeConfig {
            beta_range: (0.4, 1.6),
            a_range: (0.7, 1.0),
        }
    }
}

/// Evaluate every named loss on one batch pair without updating anything.
/// `pseudo_seed` drives the pseudo-hazy synthesis. A non-finite value is
/// reported as a training fault naming the loss (iteration 0, standalone
/// evaluation).
pub fn compute_losses(
    models: &TrainModels,
    hazy_batch: &[Image],
    clean_batch: &[Image],
    weights: &LossWeights,
    pseudo_cfg: &PseudoHazeConfig,
    pseudo_seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let hazy_t = images_to_batch(hazy_batch)?;
    let clean_t = images_to_batch(clean_batch)?;
    let seeds: Vec<u64> = (0..clean_batch.len() as u64)
        .map(|i| pseudo_seed.wrapping_add(i))
        .collect();
    let pseudo_t = pseudo_hazy_batch(clean_batch, &seeds, pseudo_cfg.beta_range, pseudo_cfg.a_range)?;

    let mut g: Graph<f32> = Graph::new();
    let pv_gen = ParamVars::bind(&mut g, &models.gen_store);
    let pv_dc = ParamVars::bind(&mut g, &models.disc_clean_store);
    let pv_dh = ParamVars::bind(&mut g, &models.disc_hazy_store);
    let hazy = g.input(hazy_t.clone());
    let clean = g.input(clean_t.clone());
    let pseudo_hazy = g.input(pseudo_t);
    let pvs = GenPvs {
        gen: &pv_gen,
        disc_clean: &pv_dc,
        disc_hazy: &pv_dh,
    };
    let gl = generator_loss_graph(&mut g, models, &pvs, hazy, clean, pseudo_hazy, weights)?;

    let dehazed = g.value(gl.dehazed).clone();
    let rehazed = g.value(gl.rehazed).clone();

    let mut out = BTreeMap::new();
    out.insert("adv_clean".to_string(), g.value(gl.adv_clean).data()[0] as f64);
    out.insert("adv_hazy".to_string(), g.value(gl.adv_hazy).data()[0] as f64);
    out.insert("cyc".to_string(), g.value(gl.cyc).data()[0] as f64);
    out.insert("idt".to_string(), g.value(gl.idt).data()[0] as f64);
    out.insert("pseudo".to_string(), g.value(gl.pseudo).data()[0] as f64);
    out.insert("total_g".to_string(), g.value(gl.total).data()[0] as f64);

    let mut gd: Graph<f32> = Graph::new();
    let pv_dc = ParamVars::bind(&mut gd, &models.disc_clean_store);
    let pv_dh = ParamVars::bind(&mut gd, &models.disc_hazy_store);
    let real_clean = gd.input(clean_t);
    let fake_clean = gd.input(dehazed);
    let d_clean = discriminator_loss_graph(&mut gd, &models.disc_clean, &pv_dc, real_clean, fake_clean)?;
    let real_hazy = gd.input(hazy_t);
    let fake_hazy = gd.input(rehazed);
    let d_hazy = discriminator_loss_graph(&mut gd, &models.disc_hazy, &pv_dh, real_hazy, fake_hazy)?;
    out.insert("d_clean".to_string(), gd.value(d_clean).data()[0] as f64);
    out.insert("d_hazy".to_string(), gd.value(d_hazy).data()[0] as f64);

    for (name, value) in &out {
        if !value.is_finite() {
            return Err(Error::Train {
                iteration: 0,
                name: name.clone(),
                value: *value,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::training::{TrainConfig, TrainModels};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_pixels(h, w, (0..h * w * 3).map(|_| rng.gen_range(0.0..1.0)).collect())
            .unwrap()
    }

    fn toy_models() -> TrainModels {
        let mut cfg = TrainConfig::toy();
        cfg.seed = 3;
        TrainModels::init(&cfg).unwrap()
    }

    #[test]
    fn zero_weights_zero_total() {
        let models = toy_models();
        let w = LossWeights {
            adv: 0.0,
            cyc: 0.0,
            idt: 0.0,
            pseudo: 0.0,
        };
        let hazy = vec![rand_image(0, 16, 16), rand_image(1, 16, 16)];
        let clean = vec![rand_image(2, 16, 16), rand_image(3, 16, 16)];
        let losses =
            compute_losses(&models, &hazy, &clean, &w, &PseudoHazeConfig::default(), 0).unwrap();
        assert_eq!(losses["total_g"], 0.0);
    }

    #[test]
    fn cycle_loss_of_exact_composition_is_zero() {
        // Feed asm_compose its own output as the target: the cycle residual
        // of a perfect analytic pair is exactly zero.
        let mut g: Graph<f32> = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let j = g.input(crate::tensor::Tensor::from_vec(
            &[1, 3, 4, 4],
            (0..48).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap());
        let t = g.input(crate::tensor::Tensor::from_vec(
            &[1, 1, 4, 4],
            (0..16).map(|_| rng.gen_range(0.1..0.95)).collect(),
        )
        .unwrap());
        let a = g.input(crate::tensor::Tensor::from_vec(
            &[1, 3],
            vec![0.8, 0.85, 0.9],
        )
        .unwrap());
        let rehazed = g.asm_compose(j, t, a);
        let hazy = g.input(g.value(rehazed).clone());
        let cyc = g.l1(rehazed, hazy);
        assert_eq!(g.value(cyc).data()[0], 0.0);
    }

    #[test]
    fn all_losses_finite_at_init_over_random_batches() {
        let models = toy_models();
        let w = LossWeights::default();
        for step in 0..100 {
            let hazy = vec![rand_image(1000 + step, 16, 16)];
            let clean = vec![rand_image(2000 + step, 16, 16)];
            let losses =
                compute_losses(&models, &hazy, &clean, &w, &PseudoHazeConfig::default(), step).unwrap();
            for (name, v) in &losses {
                assert!(v.is_finite(), "step {step}: {name} = {v}");
            }
        }
    }

    #[test]
    fn poisoned_parameters_surface_a_named_fault() {
        let mut models = toy_models();
        let id = models.gen_store.find("gen.enc.s0a.w").unwrap();
        models.gen_store.get_mut(id).data_mut()[0] = f32::NAN;
        let hazy = vec![rand_image(0, 16, 16)];
        let clean = vec![rand_image(1, 16, 16)];
        let err = compute_losses(
            &models,
            &hazy,
            &clean,
            &LossWeights::default(),
            &PseudoHazeConfig::default(),
            0,
        )
        .unwrap_err();
        match err {
            Error::Train { name, value, .. } => {
                assert!(!value.is_finite());
                assert!(!name.is_empty());
            }
            other => panic!("expected a training fault, got {other}"),
        }
    }

    #[test]
    fn batches_must_share_dimensions() {
        assert!(images_to_batch(&[rand_image(0, 16, 16), rand_image(1, 8, 8)]).is_err());
        assert!(images_to_batch(&[]).is_err());
    }
}
