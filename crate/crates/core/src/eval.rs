//! Image-fidelity metrics and qualitative grids.
//!
//! Metrics are computed on 8-bit pixels after de-normalization. A PSNR of
//! `f64::INFINITY` marks identical images ("saturated").

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::Serialize;

use crate::data::{list_images, UnpairedDataset};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::Mode;
use crate::types::ImageBatch;

pub const PEAK: f64 = 255.0;

/// Mean squared difference in 8-bit units.
pub fn mse(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("data", format!("images differ in size: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::contract("mse of empty images"));
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = f64::from(p) - f64::from(q);
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// PSNR for a given MSE; infinite when the MSE is zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr(a: &[u8], b: &[u8]) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

/// What translated images are compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// Paired ground-truth images in the target domain.
    Reference,
    /// The untranslated input (measures content preservation).
    Input,
}

impl fmt::Display for CompareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompareMode::Reference => "reference",
            CompareMode::Input => "input",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetric {
    pub name: String,
    pub mse: f64,
    pub psnr: f64,
}

impl ImageMetric {
    pub fn saturated(&self) -> bool {
        self.psnr.is_infinite()
    }
}

#[derive(Serialize)]
struct Record<'a> {
    name: &'a str,
    mse: f64,
    psnr: Option<f64>,
    saturated: bool,
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Per-image metrics plus both aggregation orders.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mode: CompareMode,
    pub n_images: usize,
    /// Mean of per-image MSE.
    pub mse: f64,
    /// PSNR of the mean MSE.
    pub psnr_of_mean_mse: f64,
    /// Mean of per-image PSNR (infinite if any image is saturated).
    pub mean_psnr: f64,
    pub per_image: Vec<ImageMetric>,
}

impl MetricReport {
    pub fn from_per_image(per_image: Vec<ImageMetric>, mode: CompareMode) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Dataset("empty test set".into()));
        }
        let n = per_image.len() as f64;
        let mse = per_image.iter().map(|m| m.mse).sum::<f64>() / n;
        let mean_psnr = per_image.iter().map(|m| m.psnr).sum::<f64>() / n;
        Ok(MetricReport {
            mode,
            n_images: per_image.len(),
            mse,
            psnr_of_mean_mse: psnr_from_mse(mse),
            mean_psnr,
            per_image,
        })
    }

    /// One JSON object per image: `{name, mse, psnr, saturated}`.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.per_image {
            let r = Record {
                name: &m.name,
                mse: m.mse,
                psnr: finite_or_null(m.psnr),
                saturated: m.saturated(),
            };
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "mode": self.mode,
            "n_images": self.n_images,
            "mse": self.mse,
            "psnr_of_mean_mse": finite_or_null(self.psnr_of_mean_mse),
            "mean_psnr": finite_or_null(self.mean_psnr),
            "saturated_images": self.per_image.iter().filter(|m| m.saturated()).count(),
        })
        .to_string()
    }

    /// Human-readable table with both aggregates labeled.
    pub fn table(&self) -> String {
        let fmt_psnr = |p: f64| {
            if p.is_infinite() {
                "saturated".to_string()
            } else {
                format!("{p:.4}")
            }
        };
        let width = self.per_image.iter().map(|m| m.name.len()).max().unwrap_or(4).max(20);
        let mut s = format!("compared against: {}\n", self.mode);
        s += &format!("{:<width$}  {:>12}  {:>12}\n", "image", "mse", "psnr_db");
        for m in &self.per_image {
            s += &format!("{:<width$}  {:>12.4}  {:>12}\n", m.name, m.mse, fmt_psnr(m.psnr));
        }
        s += &format!("{:<width$}  {:>12.4}\n", "mean mse", self.mse);
        s += &format!("{:<width$}  {:>12}  {:>12}\n", "psnr of mean mse", "", fmt_psnr(self.psnr_of_mean_mse));
        s += &format!("{:<width$}  {:>12}  {:>12}\n", "mean of psnr", "", fmt_psnr(self.mean_psnr));
        s
    }

    /// Writes `records.jsonl`, `summary.json` and `metrics.txt`.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let files = [
            ("records.jsonl", self.records_jsonl()),
            ("summary.json", self.summary_json() + "\n"),
            ("metrics.txt", self.table()),
        ];
        let mut paths = Vec::new();
        for (name, text) in files {
            let p = out_dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            paths.push(p);
        }
        Ok(paths)
    }
}

/// Translates every test image and scores it against `reference` (same
/// order, paired) or, when absent, against the input itself.
pub fn evaluate_translation(
    gen: &Generator<f32>,
    test: &UnpairedDataset,
    reference: Option<&UnpairedDataset>,
) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(Error::Dataset("empty test set".into()));
    }
    if let Some(r) = reference {
        if r.len() != test.len() || r.size != test.size {
            return Err(Error::Dataset(format!(
                "reference set has {} images of size {}, test set {} of size {}",
                r.len(),
                r.size,
                test.len(),
                test.size
            )));
        }
    }
    let mut per_image = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let x = test.batch(&[i], &[false])?;
        let (out, _) = gen.translate(&x, Mode::Eval)?;
        let target = match reference {
            Some(r) => r.batch(&[i], &[false])?.to_rgb8(0),
            None => x.to_rgb8(0),
        };
        let e = mse(&out.to_rgb8(0), &target)?;
        per_image.push(ImageMetric {
            name: test.names[i].clone(),
            mse: e,
            psnr: psnr_from_mse(e),
        });
    }
    let mode = if reference.is_some() {
        CompareMode::Reference
    } else {
        CompareMode::Input
    };
    MetricReport::from_per_image(per_image, mode)
}

/// Scores previously written images in `generated` against same-named files
/// in `reference`.
pub fn compare_dirs(generated: &Path, reference: &Path, mode: CompareMode) -> Result<MetricReport> {
    let mut per_image = Vec::new();
    for path in list_images(generated)? {
        let name = path.file_name().expect("listed file has a name").to_os_string();
        let other = reference.join(&name);
        let load = |p: &Path| {
            image::open(p)
                .map(|i| i.to_rgb8())
                .map_err(|source| Error::Image { path: p.to_path_buf(), source })
        };
        let (a, b) = (load(&path)?, load(&other)?);
        if a.dimensions() != b.dimensions() {
            return Err(Error::dim(
                "width",
                format!("{} is {:?} but {} is {:?}", path.display(), a.dimensions(), other.display(), b.dimensions()),
            ));
        }
        let e = mse(a.as_raw(), b.as_raw())?;
        per_image.push(ImageMetric {
            name: name.to_string_lossy().into_owned(),
            mse: e,
            psnr: psnr_from_mse(e),
        });
    }
    MetricReport::from_per_image(per_image, mode)
}

/// Linear `[0,1] -> [0,255]` rendering of a mask value.
pub fn mask_to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn paste_rgb(canvas: &mut RgbImage, rgb: &[u8], size: usize, panel: usize) {
    for y in 0..size {
        for x in 0..size {
            let k = (y * size + x) * 3;
            canvas.put_pixel((panel * size + x) as u32, y as u32, image::Rgb([rgb[k], rgb[k + 1], rgb[k + 2]]));
        }
    }
}

/// Writes one tiled PNG per batch item: input | mask | content | output,
/// followed by the cycle reconstruction when `reverse` is given. Files are
/// named `grid_{first_index + i:05}.png`.
pub fn emit_grids(
    gen: &Generator<f32>,
    reverse: Option<&Generator<f32>>,
    batch: &ImageBatch<f32>,
    out_dir: &Path,
    first_index: usize,
) -> Result<Vec<PathBuf>> {
    if batch.height() != batch.width() {
        return Err(Error::dim("width", "grids need square images"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let size = batch.height();
    let (out, pair) = gen.translate(batch, Mode::Eval)?;
    let cycled = match reverse {
        Some(r) => Some(r.translate(&out, Mode::Eval)?.0),
        None => None,
    };
    let content = ImageBatch::trusted(pair.content.tensor().clone(), out.domain());
    let panels = if cycled.is_some() { 5 } else { 4 };
    let mut paths = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut canvas = RgbImage::new((panels * size) as u32, size as u32);
        paste_rgb(&mut canvas, &batch.to_rgb8(i), size, 0);
        let mask: Vec<u8> = pair
            .mask
            .tensor()
            .item(i)
            .iter()
            .flat_map(|&v| [mask_to_u8(f64::from(v)); 3])
            .collect();
        paste_rgb(&mut canvas, &mask, size, 1);
        paste_rgb(&mut canvas, &content.to_rgb8(i), size, 2);
        paste_rgb(&mut canvas, &out.to_rgb8(i), size, 3);
        if let Some(c) = &cycled {
            paste_rgb(&mut canvas, &c.to_rgb8(i), size, 4);
        }
        let path = out_dir.join(format!("grid_{:05}.png", first_index + i));
        save_png(&canvas, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub(crate) fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Converts item `i` of a batch to an `RgbImage`.
pub fn to_image(batch: &ImageBatch<f32>, i: usize) -> RgbImage {
    let (h, w) = (batch.height() as u32, batch.width() as u32);
    RgbImage::from_raw(w, h, batch.to_rgb8(i)).expect("buffer matches dimensions")
}

/// Round-trips a mask value through its 8-bit rendering.
pub fn mask_from_u8(p: u8) -> f64 {
    f64::from(p) / 255.0
}
