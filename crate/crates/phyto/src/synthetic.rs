//! Seeded synthetic corpus of colored shapes on noisy backgrounds, one class
//! per (shape, color) pair. Used for smoke tests and demos where no
//! microscopy data is available.

use std::path::Path;

use phyto_core::{stratified_split, LabelSpace, SplitAssignment, SplitRatios};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ImageRecord, ImageSet, Normalization};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Disc,
    Square,
    Triangle,
    Cross,
    Ring,
    HBar,
    VBar,
    Diamond,
    Frame,
    Dots,
    Stripes,
}

const CLASSES: [(&str, Shape, [u8; 3]); 11] = [
    ("bar_h_orange", Shape::HBar, [240, 140, 20]),
    ("bar_v_teal", Shape::VBar, [20, 170, 170]),
    ("cross_yellow", Shape::Cross, [230, 220, 30]),
    ("diamond_purple", Shape::Diamond, [150, 40, 200]),
    ("disc_red", Shape::Disc, [220, 30, 30]),
    ("dots_white", Shape::Dots, [245, 245, 245]),
    ("frame_pink", Shape::Frame, [240, 90, 170]),
    ("ring_blue", Shape::Ring, [30, 60, 230]),
    ("square_green", Shape::Square, [30, 190, 50]),
    ("stripes_brown", Shape::Stripes, [130, 80, 30]),
    ("triangle_black", Shape::Triangle, [15, 15, 15]),
];

pub const MAX_CLASSES: usize = CLASSES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn label_space(&self) -> Result<LabelSpace> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::Dataset(format!("synthetic corpus supports 2..={MAX_CLASSES} classes")));
        }
        Ok(LabelSpace::new(CLASSES[..self.classes].iter().map(|c| c.0))?)
    }
}

fn inside(shape: Shape, dx: f32, dy: f32, r: f32) -> bool {
    let (ax, ay) = (dx.abs(), dy.abs());
    let d = (dx * dx + dy * dy).sqrt();
    match shape {
        Shape::Disc => d <= r,
        Shape::Square => ax <= 0.8 * r && ay <= 0.8 * r,
        Shape::Triangle => dy <= 0.8 * r && dy >= -r + 2.0 * ax,
        Shape::Cross => (ax <= 0.25 * r && ay <= r) || (ay <= 0.25 * r && ax <= r),
        Shape::Ring => d <= r && d >= 0.6 * r,
        Shape::HBar => ax <= r && ay <= 0.3 * r,
        Shape::VBar => ay <= r && ax <= 0.3 * r,
        Shape::Diamond => ax + ay <= r,
        Shape::Frame => ax.max(ay) <= r && ax.max(ay) >= 0.7 * r,
        Shape::Dots => {
            let q = 0.5 * r;
            let (ex, ey) = (ax - q, ay - q);
            ex * ex + ey * ey <= 0.16 * r * r
        }
        Shape::Stripes => ax <= r && ay <= r && ((dy + r) / (0.4 * r)) as i32 % 2 == 0,
    }
}

fn render(class: usize, size: usize, rng: &mut ChaCha8Rng) -> ImageRecord {
    let (_, shape, color) = CLASSES[class];
    let s = size as f32;
    let r = s * rng.random_range(0.25..0.38);
    let cx = rng.random_range(r..s - r);
    let cy = rng.random_range(r..s - r);
    let bg: [u8; 3] = [rng.random_range(90..150), rng.random_range(90..150), rng.random_range(90..150)];
    let jitter: [i16; 3] = [rng.random_range(-15..=15), rng.random_range(-15..=15), rng.random_range(-15..=15)];
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let hit = inside(shape, x as f32 + 0.5 - cx, y as f32 + 0.5 - cy, r);
            for ch in 0..3 {
                let base = if hit { (color[ch] as i16 + jitter[ch]).clamp(0, 255) } else { bg[ch] as i16 };
                let noise: i16 = rng.random_range(-12..=12);
                pixels.push((base + noise).clamp(0, 255) as u8);
            }
        }
    }
    ImageRecord::new(size, size, pixels).expect("buffer matches dimensions")
}

/// `(image_id, label, image)`; ids look like `class/img_0007.png`.
pub type Sample = (String, usize, ImageRecord);

pub fn generate(spec: &SyntheticSpec) -> Result<(LabelSpace, Vec<Sample>)> {
    let labels = spec.label_space()?;
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for (class, name) in labels.names().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(class as u64);
        for i in 0..spec.per_class {
            out.push((format!("{name}/img_{i:04}.png"), class, render(class, spec.size, &mut rng)));
        }
    }
    Ok((labels, out))
}

/// Writes the corpus as a directory-per-class PNG tree under `root`.
pub fn write_tree(spec: &SyntheticSpec, root: &Path) -> Result<LabelSpace> {
    let (labels, items) = generate(spec)?;
    for (id, _, img) in items {
        let path = root.join(&id);
        let dir = path.parent().expect("id has a class directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        img.to_rgb_image().save(&path).map_err(|source| Error::Image { id, source })?;
    }
    Ok(labels)
}

/// In-memory train/val/test sets split exactly like a corpus on disk would be.
pub struct SyntheticSplits {
    pub labels: LabelSpace,
    pub split: SplitAssignment,
    pub train: ImageSet,
    pub val: ImageSet,
    pub test: ImageSet,
}

pub fn splits(
    spec: &SyntheticSpec,
    ratios: SplitRatios,
    split_seed: u64,
    norm: Normalization,
) -> Result<SyntheticSplits> {
    use phyto_core::Split;
    let (labels, items) = generate(spec)?;
    let split = stratified_split(items.iter().map(|(id, l, _)| (id.as_str(), *l)), labels.len(), ratios, split_seed)?;
    let mut by_id: std::collections::HashMap<String, (usize, ImageRecord)> =
        items.into_iter().map(|(id, l, img)| (id, (l, img))).collect();
    let mut take = |which: Split| {
        let picked = split
            .ids(which)
            .iter()
            .map(|id| {
                let (l, img) = by_id.remove(id).expect("split ids come from the corpus");
                (id.clone(), l, img)
            })
            .collect();
        ImageSet::from_images(which, picked, spec.size, norm)
    };
    let (train, val, test) = (take(Split::Train), take(Split::Val), take(Split::Test));
    Ok(SyntheticSplits { labels, split, train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SyntheticSpec { classes: 11, per_class: 3, size: 24, seed: 9 };
        let (labels, a) = generate(&spec).unwrap();
        let (_, b) = generate(&spec).unwrap();
        assert_eq!(labels.len(), 11);
        assert_eq!(a.len(), 33);
        assert!(a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.2.pixels == y.2.pixels));
        for (id, l, _) in &a {
            assert!(id.starts_with(labels.name(*l).unwrap()));
        }
    }

    #[test]
    fn shapes_are_visible() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (class, &(_, _, color)) in CLASSES.iter().enumerate() {
            let img = render(class, 32, &mut rng);
            let close = (0..32 * 32)
                .filter(|i| {
                    let p = &img.pixels[i * 3..i * 3 + 3];
                    p.iter().zip(color).all(|(&a, b)| (a as i16 - b as i16).abs() <= 27)
                })
                .count();
            assert!(close >= 20, "class {class}: {close} shape pixels");
        }
    }

    #[test]
    fn tree_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { classes: 3, per_class: 4, size: 16, seed: 1 };
        write_tree(&spec, dir.path()).unwrap();
        let m = crate::data::build_manifest(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 12);
        assert_eq!(m.label_space, spec.label_space().unwrap());
    }
}
