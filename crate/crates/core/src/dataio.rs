//! Image and dataset handling: 8-bit RGB PNG codec, unpaired pool iteration
//! with seeded shuffling and crops, and scattering-model synthetic data
//! generation with an exact-regeneration manifest.

use std::fs;
use std::path::{Path, PathBuf};

use image::ColorType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asm::{random_depth_field, synthesize_haze, AsmParams};
use crate::error::{Error, Result};
use crate::image::Image;

/// Load an 8-bit RGB PNG into [0, 1] pixels. Grayscale, paletted, alpha,
/// and 16-bit inputs are rejected.
pub fn load_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| Error::io(path, e))?;
    match dynimg.color() {
        ColorType::Rgb8 => {}
        other => {
            return Err(Error::io(
                path,
                format!("unsupported PNG pixel format {other:?}; expected 8-bit RGB"),
            ))
        }
    }
    let rgb = dynimg.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_pixels(h, w, data)
}

/// Save as 8-bit RGB PNG with round-half-up quantization.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer(path, &bytes, w as u32, h as u32, ColorType::Rgb8)
        .map_err(|e| Error::io(path, e))
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Independently shuffled hazy/clean pools with seeded random crops.
/// Each pool reshuffles when exhausted, so iteration is endless; the whole
/// sequence is a pure function of the seed.
pub struct UnpairedPools {
    hazy: Vec<Image>,
    clean: Vec<Image>,
    crop: usize,
    rng: ChaCha8Rng,
    hazy_order: Vec<usize>,
    hazy_pos: usize,
    clean_order: Vec<usize>,
    clean_pos: usize,
}

impl UnpairedPools {
    pub fn open(hazy_dir: &Path, clean_dir: &Path, crop: usize, seed: u64) -> Result<Self> {
        let hazy_files = list_pngs(hazy_dir)?;
        let clean_files = list_pngs(clean_dir)?;
        if hazy_files.is_empty() {
            return Err(Error::domain(format!(
                "hazy pool directory {} contains no PNG files",
                hazy_dir.display()
            )));
        }
        if clean_files.is_empty() {
            return Err(Error::domain(format!(
                "clean pool directory {} contains no PNG files",
                clean_dir.display()
            )));
        }
        let hazy = hazy_files.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
        let clean = clean_files.iter().map(|p| load_image(p)).collect::<Result<Vec<_>>>()?;
        Self::from_images(hazy, clean, crop, seed)
    }

    /// In-memory variant used by tests and synthetic pipelines.
    pub fn from_images(
        hazy: Vec<Image>,
        clean: Vec<Image>,
        crop: usize,
        seed: u64,
    ) -> Result<Self> {
        if hazy.is_empty() || clean.is_empty() {
            return Err(Error::domain("unpaired pools must be nonempty"));
        }
        if crop < 8 {
            return Err(Error::domain("crop size must be at least 8"));
        }
        for img in hazy.iter().chain(&clean) {
            if img.height() < crop || img.width() < crop {
                return Err(Error::shape(format!(
                    "pool image {}x{} smaller than crop {crop}",
                    img.height(),
                    img.width()
                )));
            }
        }
        Ok(UnpairedPools {
            hazy,
            clean,
            crop,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hazy_order: Vec::new(),
            hazy_pos: 0,
            clean_order: Vec::new(),
            clean_pos: 0,
        })
    }

    fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        order
    }

    fn next_index(
        rng: &mut ChaCha8Rng,
        order: &mut Vec<usize>,
        pos: &mut usize,
        n: usize,
    ) -> usize {
        if *pos >= order.len() {
            *order = Self::shuffled(rng, n);
            *pos = 0;
        }
        let idx = order[*pos];
        *pos += 1;
        idx
    }

    fn crop_of(&mut self, img_idx: usize, hazy: bool) -> Image {
        let img = if hazy {
            &self.hazy[img_idx]
        } else {
            &self.clean[img_idx]
        };
        let max_y = img.height() - self.crop;
        let max_x = img.width() - self.crop;
        let y0 = if max_y == 0 { 0 } else { self.rng.gen_range(0..=max_y) };
        let x0 = if max_x == 0 { 0 } else { self.rng.gen_range(0..=max_x) };
        img.crop(y0, x0, self.crop).expect("crop bounds checked at open")
    }

    /// Draw `n` hazy and `n` clean crops; the two index streams are
    /// independent.
    pub fn next_batch(&mut self, n: usize) -> Result<(Vec<Image>, Vec<Image>)> {
        if n == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        let mut hazy_batch = Vec::with_capacity(n);
        let mut clean_batch = Vec::with_capacity(n);
        for _ in 0..n {
            let hi = Self::next_index(
                &mut self.rng,
                &mut self.hazy_order,
                &mut self.hazy_pos,
                self.hazy.len(),
            );
            hazy_batch.push(self.crop_of(hi, true));
            let ci = Self::next_index(
                &mut self.rng,
                &mut self.clean_order,
                &mut self.clean_pos,
                self.clean.len(),
            );
            clean_batch.push(self.crop_of(ci, false));
        }
        Ok((hazy_batch, clean_batch))
    }

    /// Index draws only, exposed for the independence probe.
    pub fn next_index_pair(&mut self) -> (usize, usize) {
        let hi = Self::next_index(
            &mut self.rng,
            &mut self.hazy_order,
            &mut self.hazy_pos,
            self.hazy.len(),
        );
        let ci = Self::next_index(
            &mut self.rng,
            &mut self.clean_order,
            &mut self.clean_pos,
            self.clean.len(),
        );
        (hi, ci)
    }
}

/// One line of the synthetic-set manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub filename: String,
    pub seed: u64,
    pub beta: f64,
    pub a: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Plain text, one `filename, seed, beta, A_r, A_g, A_b` line per image.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&format!(
                "{}, {}, {}, {}, {}, {}\n",
                e.filename, e.seed, e.beta, e.a[0], e.a[1], e.a[2]
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 6 {
                return Err(Error::Config {
                    line: idx + 1,
                    message: format!("manifest line needs 6 fields, got {}", parts.len()),
                });
            }
            let field = |i: usize| -> Result<f64> {
                parts[i].parse().map_err(|_| Error::Config {
                    line: idx + 1,
                    message: format!("`{}` is not a number", parts[i]),
                })
            };
            entries.push(ManifestEntry {
                filename: parts[0].to_string(),
                seed: parts[1].parse().map_err(|_| Error::Config {
                    line: idx + 1,
                    message: format!("`{}` is not a seed", parts[1]),
                })?,
                beta: field(2)?,
                a: [field(3)?, field(4)?, field(5)?],
            });
        }
        Ok(Manifest { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Per-image deterministic synthesis: the manifest seed drives the clean
/// source pick, the depth field, and (at generation time) the beta/airlight
/// draws, so `regenerate_from_manifest` reproduces files byte for byte.
struct PerImage {
    clean_idx: usize,
    params: AsmParams,
}

fn synth_one(
    per_seed: u64,
    n_clean: usize,
    clean: &[Image],
    ranges: (f64, f64, f64, f64),
    recorded: Option<(f64, [f64; 3])>,
) -> Result<PerImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(per_seed);
    let clean_idx = rng.gen_range(0..n_clean);
    let img = &clean[clean_idx];
    let depth = random_depth_field(img.height(), img.width(), &mut rng);
    let (beta, a) = match recorded {
        Some((beta, a)) => (beta, a),
        None => {
            let beta = rng.gen_range(ranges.0..=ranges.1);
            let a = [
                rng.gen_range(ranges.2..=ranges.3),
                rng.gen_range(ranges.2..=ranges.3),
                rng.gen_range(ranges.2..=ranges.3),
            ];
            (beta, a)
        }
    };
    Ok(PerImage {
        clean_idx,
        params: AsmParams::from_depth(a, beta, depth)?,
    })
}

/// Synthesize `count` hazy PNGs from the clean sources in `clean_dir`,
/// recording per-image (seed, beta, A) for exact regeneration.
pub fn generate_synthetic_set(
    clean_dir: &Path,
    out_dir: &Path,
    count: usize,
    seed: u64,
    beta_range: (f64, f64),
    a_range: (f64, f64),
) -> Result<Manifest> {
    if !(beta_range.0 >= 0.0 && beta_range.0 <= beta_range.1) {
        return Err(Error::domain("beta range is empty or negative"));
    }
    if !(a_range.0 >= 0.0 && a_range.0 <= a_range.1 && a_range.1 <= 1.0) {
        return Err(Error::domain("airlight range must be inside [0, 1]"));
    }
    let clean_files = list_pngs(clean_dir)?;
    if clean_files.is_empty() {
        return Err(Error::domain(format!(
            "clean directory {} contains no PNG files",
            clean_dir.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let clean: Vec<Image> = clean_files
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<Vec<_>>>()?;

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Manifest::default();
    for i in 0..count {
        let per_seed: u64 = master.gen();
        let ranges = (beta_range.0, beta_range.1, a_range.0, a_range.1);
        let per = synth_one(per_seed, clean.len(), &clean, ranges, None)?;
        let hazy = synthesize_haze(&clean[per.clean_idx], &per.params)?;
        let filename = format!("hazy_{i:04}.png");
        save_image(&hazy, &out_dir.join(&filename))?;
        manifest.entries.push(ManifestEntry {
            filename,
            seed: per_seed,
            beta: per.params.beta(),
            a: per.params.airlight(),
        });
    }
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Re-synthesize every manifest entry from the same clean directory.
/// Output files are byte-identical to the original generation.
pub fn regenerate_from_manifest(
    manifest: &Manifest,
    clean_dir: &Path,
    out_dir: &Path,
) -> Result<()> {
    let clean_files = list_pngs(clean_dir)?;
    if clean_files.is_empty() {
        return Err(Error::domain(format!(
            "clean directory {} contains no PNG files",
            clean_dir.display()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let clean: Vec<Image> = clean_files
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<Vec<_>>>()?;
    for e in &manifest.entries {
        let per = synth_one(e.seed, clean.len(), &clean, (0.0, 0.0, 0.0, 0.0), Some((e.beta, e.a)))?;
        let hazy = synthesize_haze(&clean[per.clean_idx], &per.params)?;
        save_image(&hazy, &out_dir.join(&e.filename))?;
    }
    Ok(())
}
