//! Command-line entry points: synthetic data generation, unpaired training,
//! batch dehazing, PSNR/SSIM evaluation, and the single-image implicit-fit
//! demo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use unhaze_core::asm::{random_asm_params, synthesize_haze};
use unhaze_core::config::FlatConfig;
use unhaze_core::dataio::{generate_synthetic_set, load_image, save_image, UnpairedPools};
use unhaze_core::image::Image;
use unhaze_core::inr::{fit_image, InrDecoderConfig, FIT_LR_DEFAULT};
use unhaze_core::metrics::{psnr, ssim};
use unhaze_core::tensor::Tensor;
use unhaze_core::training::{train_loop, Checkpoint, TrainConfig, TrainModels};

#[derive(Parser)]
#[command(name = "unhaze", version, about = "Unpaired image dehazing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hazy set from clean images via the scattering model
    Synth(SynthArgs),
    /// Train the dehazing generator on unpaired hazy/clean pools
    Train(TrainArgs),
    /// Dehaze every PNG in a directory with a trained checkpoint
    Dehaze(DehazeArgs),
    /// Compare restored images against references (PSNR/SSIM)
    Eval(EvalArgs),
    /// Fit the implicit coordinate decoder to a single image
    FitInr(FitInrArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of clean source PNGs
    #[arg(long)]
    clean_dir: PathBuf,
    /// Output directory for hazy PNGs and the manifest
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of hazy images to generate
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scattering coefficient range
    #[arg(long, default_value_t = 0.4)]
    beta_min: f64,
    #[arg(long, default_value_t = 1.6)]
    beta_max: f64,
    /// Airlight range (applied per channel)
    #[arg(long, default_value_t = 0.7)]
    a_min: f64,
    #[arg(long, default_value_t = 1.0)]
    a_max: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of hazy training PNGs
    #[arg(long)]
    hazy_dir: PathBuf,
    /// Directory of clean training PNGs
    #[arg(long)]
    clean_dir: PathBuf,
    /// Training iterations
    #[arg(long, default_value_t = 2000)]
    iters: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flat `key = value` config file overriding defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (checkpoints + metrics trace)
    #[arg(long)]
    out_ckpt: PathBuf,
    /// Square crop size for training batches
    #[arg(long, default_value_t = 64)]
    crop: usize,
    /// Clean images held out for periodic validation
    #[arg(long, default_value_t = 16)]
    holdout: usize,
    /// Disable the KAN dual-branch blocks
    #[arg(long)]
    no_kan_cid: bool,
    /// Disable the implicit decoder head
    #[arg(long)]
    no_idrm: bool,
    /// Disable dense residual refinement
    #[arg(long)]
    no_drem: bool,
}

#[derive(Args)]
struct DehazeArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of hazy PNGs to restore
    #[arg(long)]
    in_dir: PathBuf,
    /// Output directory
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write the predicted transmission maps as grayscale PNGs
    #[arg(long)]
    dump_t: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of restored images
    #[arg(long)]
    restored_dir: PathBuf,
    /// Directory of reference images (matched by filename)
    #[arg(long)]
    reference_dir: PathBuf,
}

#[derive(Args)]
struct FitInrArgs {
    /// Target image (8-bit RGB PNG)
    #[arg(long)]
    image: PathBuf,
    /// Output reconstruction PNG
    #[arg(long)]
    out: PathBuf,
    /// Loss-trace text file (one `iteration, loss` line per step)
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = FIT_LR_DEFAULT)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positional-encoding octave count
    #[arg(long, default_value_t = 4)]
    pos_l: usize,
    #[arg(long, default_value_t = 64)]
    hidden_width: usize,
    #[arg(long, default_value_t = 4)]
    hidden_layers: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Dehaze(a) => cmd_dehaze(a),
        Command::Eval(a) => cmd_eval(a),
        Command::FitInr(a) => cmd_fit_inr(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<ExitCode> {
    let manifest = generate_synthetic_set(
        &a.clean_dir,
        &a.out_dir,
        a.count,
        a.seed,
        (a.beta_min, a.beta_max),
        (a.a_min, a.a_max),
    )?;
    println!(
        "wrote {} hazy images and manifest.txt to {}",
        manifest.entries.len(),
        a.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            TrainConfig::from_flat(&FlatConfig::parse(&text)?)?
        }
        None => TrainConfig::default(),
    };
    cfg.iterations = a.iters;
    cfg.seed = a.seed;
    if a.no_kan_cid {
        cfg.generator.use_kan_cid = false;
    }
    if a.no_idrm {
        cfg.generator.use_idrm = false;
    }
    if a.no_drem {
        cfg.generator.use_drem = false;
    }

    let (mut pools, validation) =
        open_pools_with_holdout(&a.hazy_dir, &a.clean_dir, a.crop, cfg.seed, a.holdout)?;
    let outcome = train_loop(&cfg, &mut pools, &validation, &a.out_ckpt)?;
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    if let (Some(p), Some(s)) = (outcome.trace.last("val_psnr"), outcome.trace.last("val_ssim")) {
        println!("last validation: PSNR {p:.2} dB, SSIM {s:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn list_pngs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Split the last `holdout` clean images off as a synthetic validation set
/// (their hazy versions synthesized with a derived fixed seed) and build
/// training pools from the rest.
fn open_pools_with_holdout(
    hazy_dir: &Path,
    clean_dir: &Path,
    crop: usize,
    seed: u64,
    holdout: usize,
) -> anyhow::Result<(UnpairedPools, Vec<(Image, Image)>)> {
    let mut clean_files = list_pngs(clean_dir)?;
    if clean_files.is_empty() {
        bail!("clean directory {} contains no PNG files", clean_dir.display());
    }
    let holdout = holdout.min(clean_files.len().saturating_sub(1));
    let held = clean_files.split_off(clean_files.len() - holdout);

    let mut validation = Vec::with_capacity(held.len());
    for (i, path) in held.iter().enumerate() {
        let clean = load_image(path)?;
        let params = random_asm_params(
            clean.height(),
            clean.width(),
            seed.wrapping_add(0x5eed_0000).wrapping_add(i as u64),
            (0.4, 1.6),
            (0.7, 1.0),
        )?;
        let hazy = synthesize_haze(&clean, &params)?;
        validation.push((hazy, clean));
    }

    let clean_pool = clean_files
        .iter()
        .map(|p| load_image(p))
        .collect::<unhaze_core::Result<Vec<_>>>()?;
    let hazy_files = list_pngs(hazy_dir)?;
    if hazy_files.is_empty() {
        bail!("hazy directory {} contains no PNG files", hazy_dir.display());
    }
    let hazy_pool = hazy_files
        .iter()
        .map(|p| load_image(p))
        .collect::<unhaze_core::Result<Vec<_>>>()?;
    let pools = UnpairedPools::from_images(hazy_pool, clean_pool, crop, seed)?;
    Ok((pools, validation))
}

fn cmd_dehaze(a: DehazeArgs) -> anyhow::Result<ExitCode> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let cfg = TrainConfig::from_flat(&FlatConfig::parse(&ck.config_text)?)?;
    let mut models = TrainModels::init(&cfg)?;
    models.load_checkpoint(&ck)?;

    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let files = list_pngs(&a.in_dir)?;
    if files.is_empty() {
        bail!("no PNG files in {}", a.in_dir.display());
    }
    for path in &files {
        let hazy = load_image(path)?;
        let out = models.gen.dehaze_forward(&models.gen_store, &hazy)?;
        let name = path.file_name().unwrap();
        save_image(&out.clean, &a.out_dir.join(name))?;
        if a.dump_t {
            let t = transmission_to_image(&out.transmission)?;
            let stem = path.file_stem().unwrap().to_string_lossy();
            save_image(&t, &a.out_dir.join(format!("{stem}_t.png")))?;
        }
    }
    println!("dehazed {} images into {}", files.len(), a.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn transmission_to_image(t: &Tensor<f64>) -> anyhow::Result<Image> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let mut data = Vec::with_capacity(h * w * 3);
    for &v in t.data() {
        let v = v.clamp(0.0, 1.0);
        data.extend_from_slice(&[v, v, v]);
    }
    Ok(Image::from_pixels(h, w, data)?)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let restored = list_pngs(&a.restored_dir)?;
    let mut skipped = 0usize;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut count = 0usize;
    for path in &restored {
        let name = path.file_name().unwrap();
        let ref_path = a.reference_dir.join(name);
        if !ref_path.exists() {
            eprintln!("warning: no reference for {}, skipping", name.to_string_lossy());
            skipped += 1;
            continue;
        }
        let x = load_image(path)?;
        let y = load_image(&ref_path)?;
        let p = psnr(&x, &y)?;
        let s = ssim(&x, &y)?;
        println!("{}: PSNR {:.2} dB, SSIM {:.2}", name.to_string_lossy(), p, s);
        psnr_sum += p.min(99.0);
        ssim_sum += s;
        count += 1;
    }
    if count == 0 {
        bail!("no filename overlap between the two directories");
    }
    println!(
        "mean over {count} images: PSNR {:.2} dB, SSIM {:.2} ({skipped} skipped)",
        psnr_sum / count as f64,
        ssim_sum / count as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit_inr(a: FitInrArgs) -> anyhow::Result<ExitCode> {
    let target = load_image(&a.image)?;
    let cfg = InrDecoderConfig {
        feature_width: 0,
        pos_l: a.pos_l,
        unfold_radius: 0,
        hidden_width: a.hidden_width,
        hidden_layers: a.hidden_layers,
    };
    let fit = fit_image::<f32>(&target, &cfg, a.iters, a.lr, a.seed)?;
    save_image(&fit.reconstruction, &a.out)?;
    if let Some(trace_path) = &a.trace {
        let mut text = String::new();
        for (i, loss) in fit.losses.iter().enumerate() {
            text.push_str(&format!("{}, {}\n", i + 1, loss));
        }
        std::fs::write(trace_path, text)
            .with_context(|| format!("writing {}", trace_path.display()))?;
    }
    let final_psnr = psnr(&target, &fit.reconstruction)?;
    println!(
        "fit {} iterations; reconstruction PSNR {:.2} dB -> {}",
        a.iters,
        final_psnr,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
