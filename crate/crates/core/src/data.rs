//! Unpaired image folders and the synthetic two-domain task.
//!
//! Layout: `root/{trainA,trainB,testA,testB}/*.png|jpg`. Domain A is `X`,
//! domain B is `Y`. The synthetic generator also writes ground-truth change
//! regions to `root/masks/<split><A|B>/<same file name>`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use rand::Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::seed::{seed_all, Purpose};
use crate::tensor::Tensor;
use crate::types::{normalize_u8, Domain, ImageBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

pub fn domain_letter(d: Domain) -> &'static str {
    match d {
        Domain::X => "A",
        Domain::Y => "B",
    }
}

/// Directory holding one split of one domain.
pub fn domain_dir(root: &Path, split: Split, domain: Domain) -> PathBuf {
    root.join(format!("{split}{}", domain_letter(domain)))
}

/// Directory holding the ground-truth region masks for one split/domain.
pub fn sidecar_dir(root: &Path, split: Split, domain: Domain) -> PathBuf {
    root.join("masks").join(format!("{split}{}", domain_letter(domain)))
}

/// Images of one split and domain, decoded, rescaled and normalized.
#[derive(Clone, Debug)]
pub struct UnpairedDataset {
    pub root: PathBuf,
    pub split: Split,
    pub domain: Domain,
    pub names: Vec<String>,
    pub size: usize,
    images: Tensor<f32>,
}

impl UnpairedDataset {
    /// Wraps images already in memory (shape `[n, 3, size, size]`).
    pub fn from_tensor(images: Tensor<f32>, domain: Domain) -> Result<Self> {
        if images.h() != images.w() {
            return Err(Error::dim("width", "dataset images must be square"));
        }
        let batch = ImageBatch::new(images, domain)?;
        let n = batch.len();
        Ok(UnpairedDataset {
            root: PathBuf::new(),
            split: Split::Train,
            domain,
            names: (0..n).map(|i| format!("img_{i:05}")).collect(),
            size: batch.height(),
            images: batch.into_tensor(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.item(i)
    }

    /// Batch of the given items, optionally mirrored per item.
    pub fn batch(&self, indices: &[usize], flips: &[bool]) -> Result<ImageBatch<f32>> {
        let items: Vec<&[f32]> = indices.iter().map(|&i| self.image(i)).collect();
        let mut t = Tensor::stack(&items, [3, self.size, self.size])?;
        for (k, &flip) in flips.iter().enumerate() {
            if flip {
                let single = t.slice_item(k).flip_horizontal();
                t.item_mut(k).copy_from_slice(single.data());
            }
        }
        Ok(ImageBatch::trusted(t, self.domain))
    }

    /// Ground-truth region mask of item `i` if a sidecar file exists.
    pub fn sidecar(&self, i: usize) -> Result<Option<Vec<bool>>> {
        let path = sidecar_dir(&self.root, self.split, self.domain).join(&self.names[i]);
        if !path.exists() {
            return Ok(None);
        }
        let img = image::open(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
        let g = image::imageops::resize(&img.to_luma8(), self.size as u32, self.size as u32, FilterType::Nearest);
        Ok(Some(g.pixels().map(|p| p.0[0] >= 128).collect()))
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Sorted image files in a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Decodes one file to a normalized `[1, 3, size, size]` tensor (bilinear rescale).
pub fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let img = if img.width() as usize == size && img.height() as usize == size {
        img
    } else {
        image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
    };
    let raw = img.as_raw();
    Ok(Tensor::from_fn([1, 3, size, size], |[_, c, y, x]| {
        normalize_u8(raw[(y * size + x) * 3 + c])
    }))
}

pub fn load_dataset(root: &Path, split: Split, domain: Domain, cfg: &TrainConfig) -> Result<UnpairedDataset> {
    load_dataset_sized(root, split, domain, cfg.image_size)
}

pub fn load_dataset_sized(root: &Path, split: Split, domain: Domain, size: usize) -> Result<UnpairedDataset> {
    let dir = domain_dir(root, split, domain);
    if !dir.is_dir() {
        return Err(Error::Dataset(format!(
            "missing directory {}; expected layout root/{{trainA,trainB,testA,testB}}",
            dir.display()
        )));
    }
    let mut ds = load_folder(&dir, size, domain)?;
    ds.root = root.to_path_buf();
    ds.split = split;
    Ok(ds)
}

/// Loads every image of a flat folder, in sorted order.
pub fn load_folder(dir: &Path, size: usize, domain: Domain) -> Result<UnpairedDataset> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("empty domain: {} contains no images", dir.display())));
    }
    let mut data = Vec::with_capacity(files.len() * 3 * size * size);
    let mut names = Vec::with_capacity(files.len());
    for f in &files {
        data.extend(load_image(f, size)?.into_vec());
        names.push(f.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    let images = Tensor::from_vec([files.len(), 3, size, size], data)?;
    Ok(UnpairedDataset {
        root: dir.to_path_buf(),
        split: Split::Test,
        domain,
        names,
        size,
        images,
    })
}

/// Geometry of one synthetic face.
#[derive(Clone, Copy, Debug)]
struct Face {
    cx: f64,
    cy: f64,
    radius: f64,
    gray: u8,
}

impl Face {
    /// Mouth box `(x0, y0, x1, y1)`, inclusive-exclusive pixel bounds.
    fn mouth_box(&self, size: usize) -> (usize, usize, usize, usize) {
        let my = self.cy + 0.4 * self.radius;
        let hw = 0.5 * self.radius;
        let hh = 0.2 * self.radius;
        let clamp = |v: f64| (v.round().max(0.0) as usize).min(size);
        (clamp(self.cx - hw), clamp(my - hh), clamp(self.cx + hw), clamp(my + hh))
    }
}

fn render_background<R: Rng>(rng: &mut R, size: usize) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..215.0));
    let waves: Vec<(f64, f64, f64, f64, usize)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(8.0..25.0),
                rng.random_range(0..3),
            )
        })
        .collect();
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
            let mut px = base;
            for &(fx, fy, ph, amp, ch) in &waves {
                px[ch] += amp * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin();
            }
            let noise = rng.random_range(-6.0..6.0);
            let p = px.map(|c| (c + noise).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(x as u32, y as u32, Rgb(p));
        }
    }
    img
}

fn render_face(img: &mut RgbImage, face: &Face, domain: Domain) {
    let size = img.width() as usize;
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - face.cx, y as f64 + 0.5 - face.cy);
            if dx * dx + dy * dy <= face.radius * face.radius {
                img.put_pixel(x as u32, y as u32, Rgb([face.gray; 3]));
            }
        }
    }
    let (x0, y0, x1, y1) = face.mouth_box(size);
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let thick = (0.1 * face.radius).max(2.0);
    let (w, h) = ((x1 - x0) as f64, (y1 - y0) as f64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = (x as f64 + 0.5 - x0 as f64, y as f64 + 0.5 - y0 as f64);
            let on = match domain {
                // dark horizontal bar through the middle of the box
                Domain::X => (v - h / 2.0).abs() <= thick / 2.0,
                // bright U-shaped arc: ends at the top of the box, middle at the bottom
                Domain::Y => {
                    let t = 2.0 * u / w - 1.0;
                    let centre = thick / 2.0 + (h - thick) * (1.0 - t * t);
                    (v - centre).abs() <= thick / 2.0
                }
            };
            if on {
                let c = if domain == Domain::X { 25 } else { 235 };
                img.put_pixel(x as u32, y as u32, Rgb([c; 3]));
            }
        }
    }
}

/// Files written by [`synth_domains`].
#[derive(Clone, Debug, Default)]
pub struct SynthSummary {
    pub images: Vec<PathBuf>,
    pub masks: Vec<PathBuf>,
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, ImageFormat::Png).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    })
}

/// Writes the synthetic two-domain task: a gray disc on a random texture
/// with a dark bar (A) or a bright upward-curving arc (B) in the mouth box.
pub fn synth_domains(out_root: &Path, n_per_domain: usize, image_size: usize, seed: u64) -> Result<SynthSummary> {
    if n_per_domain == 0 {
        return Err(Error::contract("synth_domains needs n >= 1"));
    }
    if image_size < 16 {
        return Err(Error::dim("height", format!("synthetic images need at least 16 pixels, got {image_size}")));
    }
    let streams = seed_all(seed);
    let mut summary = SynthSummary::default();
    for (si, split) in [Split::Train, Split::Test].into_iter().enumerate() {
        for (di, domain) in [Domain::X, Domain::Y].into_iter().enumerate() {
            let dir = domain_dir(out_root, split, domain);
            let mdir = sidecar_dir(out_root, split, domain);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
            for i in 0..n_per_domain {
                let key = ((si * 2 + di) as u64) << 32 | i as u64;
                let mut rng = streams.stream(Purpose::Synth, key);
                let s = image_size as f64;
                let radius = rng.random_range(0.24..0.32) * s;
                let face = Face {
                    cx: rng.random_range(0.38..0.62) * s,
                    cy: rng.random_range(0.38..0.58) * s,
                    radius,
                    gray: rng.random_range(105..=150),
                };
                let mut img = render_background(&mut rng, image_size);
                render_face(&mut img, &face, domain);
                let (x0, y0, x1, y1) = face.mouth_box(image_size);
                let mask = GrayImage::from_fn(image_size as u32, image_size as u32, |x, y| {
                    let inside = (x0..x1).contains(&(x as usize)) && (y0..y1).contains(&(y as usize));
                    Luma([if inside { 255 } else { 0 }])
                });
                let name = format!("img_{i:05}.png");
                let ip = dir.join(&name);
                let mp = mdir.join(&name);
                save_png(&img, &ip)?;
                save_png(&mask, &mp)?;
                summary.images.push(ip);
                summary.masks.push(mp);
            }
        }
    }
    Ok(summary)
}
