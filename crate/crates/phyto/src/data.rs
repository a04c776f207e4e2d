//! Corpus discovery, manifest/split files and image preprocessing.
//!
//! The corpus layout is `root/<class_name>/<image_file>`. Class names become
//! a [`LabelSpace`] in lexicographic order; entries are sorted by path so that
//! nothing downstream depends on directory enumeration order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use candle_core::{Device, Tensor};
use image::imageops::FilterType;
use log::warn;
use phyto_core::{stratified_split, LabelSpace, Split, SplitAssignment, SplitRatios};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff", "gif", "webp"];

/// Input resolution of every backbone.
pub const IMAGE_SIZE: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// `<class_name>/<file_name>`, unique within a corpus.
    pub image_id: String,
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub source_root: PathBuf,
    pub label_space: LabelSpace,
    pub entries: Vec<ManifestEntry>,
    /// Images per class index.
    pub class_counts: Vec<usize>,
    /// Non-image files ignored while scanning.
    pub skipped_files: usize,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Scans `root` for one subdirectory per class.
///
/// Fails when the root has no class directories, when fewer than two classes
/// exist, or when a class directory holds no image files.
pub fn build_manifest(root: &Path) -> Result<DatasetManifest> {
    let mut classes: Vec<(String, Vec<PathBuf>)> = Vec::new();
    let mut skipped = 0;
    for dir in read_dir_sorted(root)? {
        let path = dir.path();
        if !path.is_dir() {
            skipped += 1;
            continue;
        }
        let name = dir
            .file_name()
            .into_string()
            .map_err(|n| Error::Dataset(format!("class directory name {n:?} is not UTF-8")))?;
        let mut files = Vec::new();
        for f in read_dir_sorted(&path)? {
            let p = f.path();
            if p.is_file() && is_image(&p) {
                files.push(p);
            } else {
                skipped += 1;
            }
        }
        if files.is_empty() {
            return Err(Error::Dataset(format!("class directory {} has no images", path.display())));
        }
        classes.push((name, files));
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!("{} has no class directories", root.display())));
    }
    if skipped > 0 {
        warn!("skipped {skipped} non-image entries under {}", root.display());
    }

    let label_space = LabelSpace::new(classes.iter().map(|(n, _)| n.clone()))?;
    let mut entries = Vec::new();
    let mut class_counts = vec![0; label_space.len()];
    for (name, files) in &classes {
        let label = label_space.index_of(name).expect("label space built from these names");
        class_counts[label] = files.len();
        for p in files {
            let file = p
                .file_name()
                .and_then(|f| f.to_str())
                .ok_or_else(|| Error::Dataset(format!("file name {} is not UTF-8", p.display())))?;
            entries.push(ManifestEntry { image_id: format!("{name}/{file}"), path: p.clone(), label });
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetManifest { source_root: root.to_path_buf(), label_space, entries, class_counts, skipped_files: skipped })
}

impl DatasetManifest {
    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
        let split = stratified_split(
            self.entries.iter().map(|e| (e.image_id.as_str(), e.label)),
            self.label_space.len(),
            ratios,
            seed,
        )?;
        for w in &split.warnings {
            let phyto_core::split::SplitWarning::NoTestImages { class } = w;
            warn!("class `{}` has no test images and cannot be evaluated", self.label_space.names()[*class]);
        }
        Ok(split)
    }

    pub fn entries_for<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a ManifestEntry>> {
        let index: HashMap<&str, &ManifestEntry> = self.entries.iter().map(|e| (e.image_id.as_str(), e)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Dataset(format!("image `{id}` is not in the manifest")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileHeader {
    format: String,
    source_root: PathBuf,
    labels: Vec<String>,
    ratios: Option<SplitRatios>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FileRecord {
    image_id: String,
    path: PathBuf,
    label: usize,
    split: Option<Split>,
}

const RECORDS_FORMAT: &str = "phyto-records/1";

/// Manifest plus (optionally) split membership, as one JSON object per line.
///
/// The first line is a header with the label space; every other line is
/// `{"image_id", "path", "label", "split"}` in that field order, sorted by
/// path. Reading a file and rendering it again reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordsFile {
    pub manifest: DatasetManifest,
    pub split: Option<SplitAssignment>,
}

impl RecordsFile {
    pub fn render(&self) -> Result<String> {
        let m = &self.manifest;
        let header = FileHeader {
            format: RECORDS_FORMAT.into(),
            source_root: m.source_root.clone(),
            labels: m.label_space.names().to_vec(),
            ratios: self.split.as_ref().map(|s| s.ratios),
            seed: self.split.as_ref().map(|s| s.seed),
        };
        let membership: HashMap<&str, Split> = self
            .split
            .iter()
            .flat_map(|s| Split::ALL.into_iter().flat_map(move |k| s.ids(k).iter().map(move |id| (id.as_str(), k))))
            .collect();
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &m.entries {
            let rec = FileRecord {
                image_id: e.image_id.clone(),
                path: e.path.clone(),
                label: e.label,
                split: membership.get(e.image_id.as_str()).copied(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render()?.as_bytes())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Format { path: origin.to_path_buf(), line, message };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let header: FileHeader = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))?;
        if header.format != RECORDS_FORMAT {
            return Err(bad(1, format!("unsupported format `{}`", header.format)));
        }
        let label_space = LabelSpace::new(header.labels.clone())?;
        if label_space.names() != header.labels.as_slice() {
            return Err(bad(1, "labels are not in canonical order".into()));
        }
        let mut entries = Vec::new();
        let mut class_counts = vec![0; label_space.len()];
        let mut sets: [Vec<String>; 3] = Default::default();
        let mut any_split = false;
        for (i, line) in lines {
            let rec: FileRecord = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
            if rec.label >= label_space.len() {
                return Err(bad(i + 1, format!("label {} out of range", rec.label)));
            }
            class_counts[rec.label] += 1;
            if let Some(s) = rec.split {
                any_split = true;
                sets[s as usize].push(rec.image_id.clone());
            }
            entries.push(ManifestEntry { image_id: rec.image_id, path: rec.path, label: rec.label });
        }
        let split = match (header.ratios, header.seed) {
            (Some(ratios), Some(seed)) => {
                let [mut train, mut val, mut test] = sets;
                train.sort_unstable();
                val.sort_unstable();
                test.sort_unstable();
                let class_of: HashMap<&str, usize> = entries.iter().map(|e| (e.image_id.as_str(), e.label)).collect();
                let mut class_counts_split = vec![(0, 0, 0); label_space.len()];
                for id in &train {
                    class_counts_split[class_of[id.as_str()]].0 += 1;
                }
                for id in &val {
                    class_counts_split[class_of[id.as_str()]].1 += 1;
                }
                for id in &test {
                    class_counts_split[class_of[id.as_str()]].2 += 1;
                }
                let warnings = class_counts_split
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.2 == 0 && ratios.test() > 0.0)
                    .map(|(class, _)| phyto_core::split::SplitWarning::NoTestImages { class })
                    .collect();
                Some(SplitAssignment { train, val, test, ratios, seed, class_counts: class_counts_split, warnings })
            }
            _ if any_split => return Err(bad(1, "records carry splits but the header has no ratios/seed".into())),
            _ => None,
        };
        Ok(Self {
            manifest: DatasetManifest {
                source_root: header.source_root,
                label_space,
                entries,
                class_counts,
                skipped_files: 0,
            },
            split,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Decoded RGB image, 8 bits per channel, row-major `H x W x 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 || width == 0 || height == 0 {
            return Err(Error::Dataset(format!("{} bytes do not form a {width}x{height} RGB image", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, pixels }
    }

    pub fn load(path: &Path, id: &str) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image { id: id.to_string(), source })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Self { width: w as usize, height: h as usize, pixels: rgb.into_raw() })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Bilinear resize to `size x size`; images already at that size are
    /// returned unchanged.
    pub fn resized(self, size: usize) -> Self {
        if self.width == size && self.height == size {
            return self;
        }
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels)
            .expect("buffer length checked at construction");
        let out = image::imageops::resize(&buf, size as u32, size as u32, FilterType::Triangle);
        Self { width: size, height: size, pixels: out.into_raw() }
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction")
    }
}

/// Per-channel standardization applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet statistics used by the pretrained checkpoints.
    fn default() -> Self {
        Self { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().all(|s| s.is_finite() && *s > 0.0) && self.mean.iter().all(|m| m.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid normalization {self:?}")))
        }
    }

    /// Writes `(c/255 - mean) / std` in channel-major order (`3 x H x W`).
    pub fn apply_into(&self, img: &ImageRecord, out: &mut [f32]) {
        let plane = img.width * img.height;
        debug_assert_eq!(out.len(), plane * 3);
        for (p, px) in img.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = (px[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
    }
}

/// Resizes to `size x size` and normalizes. The result is channel-major,
/// `3 x size x size`, which is the layout the backbones consume.
pub fn preprocess(img: ImageRecord, norm: &Normalization, size: usize) -> Vec<f32> {
    let img = img.resized(size);
    let mut out = vec![0.0; 3 * size * size];
    norm.apply_into(&img, &mut out);
    out
}

/// Counts image decodes and batch reads per split. Shared by every
/// [`ImageSet`] of one run so the runner can prove when a split was touched.
#[derive(Debug, Default)]
pub struct AccessLog {
    decoded: [AtomicUsize; 3],
    read: [AtomicUsize; 3],
}

impl AccessLog {
    pub fn decoded(&self, split: Split) -> usize {
        self.decoded[split as usize].load(Ordering::SeqCst)
    }

    pub fn read(&self, split: Split) -> usize {
        self.read[split as usize].load(Ordering::SeqCst)
    }

    pub fn touched(&self, split: Split) -> usize {
        self.decoded(split) + self.read(split)
    }
}

/// In-memory images of one split, resized but not yet normalized.
#[derive(Debug, Clone)]
pub struct ImageSet {
    split: Split,
    ids: Vec<String>,
    labels: Vec<usize>,
    images: Vec<ImageRecord>,
    size: usize,
    norm: Normalization,
    access: Arc<AccessLog>,
}

impl ImageSet {
    /// Decodes and resizes the listed images in parallel.
    pub fn load(
        manifest: &DatasetManifest,
        ids: &[String],
        split: Split,
        size: usize,
        norm: Normalization,
        access: Arc<AccessLog>,
    ) -> Result<Self> {
        let entries = manifest.entries_for(ids)?;
        let images = entries
            .par_iter()
            .map(|e| {
                access.decoded[split as usize].fetch_add(1, Ordering::SeqCst);
                ImageRecord::load(&e.path, &e.image_id).map(|img| img.resized(size))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            split,
            ids: entries.iter().map(|e| e.image_id.clone()).collect(),
            labels: entries.iter().map(|e| e.label).collect(),
            images,
            size,
            norm,
            access,
        })
    }

    /// Builds a set from images already in memory (resized to `size`).
    pub fn from_images(
        split: Split,
        items: Vec<(String, usize, ImageRecord)>,
        size: usize,
        norm: Normalization,
    ) -> Self {
        let mut ids = Vec::with_capacity(items.len());
        let mut labels = Vec::with_capacity(items.len());
        let mut images = Vec::with_capacity(items.len());
        for (id, label, img) in items {
            ids.push(id);
            labels.push(label);
            images.push(img.resized(size));
        }
        Self { split, ids, labels, images, size, norm, access: Arc::default() }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_size(&self) -> usize {
        self.size
    }

    pub fn access(&self) -> &Arc<AccessLog> {
        &self.access
    }

    /// Normalized `(B, 3, size, size)` batch for the given sample indices.
    pub fn batch(&self, indices: &[usize], device: &Device) -> Result<Tensor> {
        self.access.read[self.split as usize].fetch_add(indices.len(), Ordering::SeqCst);
        let per = 3 * self.size * self.size;
        let mut data = vec![0f32; per * indices.len()];
        data.par_chunks_mut(per)
            .zip(indices.par_iter())
            .for_each(|(out, &i)| self.norm.apply_into(&self.images[i], out));
        Ok(Tensor::from_vec(data, (indices.len(), 3, self.size, self.size), device)?)
    }

    pub fn batch_labels(&self, indices: &[usize], device: &Device) -> Result<Tensor> {
        let labels: Vec<u32> = indices.iter().map(|&i| self.labels[i] as u32).collect();
        Ok(Tensor::from_vec(labels, indices.len(), device)?)
    }
}

/// Short human-readable per-class summary.
pub fn describe(manifest: &DatasetManifest, split: Option<&SplitAssignment>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} classes, {} images under {}",
        manifest.label_space.len(),
        manifest.entries.len(),
        manifest.source_root.display()
    );
    for (c, name) in manifest.label_space.names().iter().enumerate() {
        let _ = write!(s, "  {name:<24} {:>5}", manifest.class_counts[c]);
        if let Some(sp) = split {
            let (a, b, t) = sp.class_counts[c];
            let _ = write!(s, "  train {a:>4}  val {b:>4}  test {t:>4}");
        }
        s.push('\n');
    }
    s
}
