//! The synthetic shape world: cluttered scenes with 1–3 annotated shapes,
//! plus single-object support renditions with exact masks. A support is
//! drawn large and centered, like an object crop resized to a fixed size.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::boxes::{iou, BBox, BoxAnnotation, ClassId};
use crate::data::raster::{aspect, shape_mask, RgbImage, SHAPE_NAMES};
use crate::error::{IcpeError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeWorldSpec {
    pub seed: u64,
    pub image_size: usize,
    pub base_classes: Vec<ClassId>,
    pub novel_classes: Vec<ClassId>,
    /// Object height range in pixels (inclusive).
    pub min_size: usize,
    pub max_size: usize,
    /// Range of the longer side of a support object (inclusive).
    pub support_min_size: usize,
    pub support_max_size: usize,
    pub max_objects: usize,
    pub clutter: usize,
    /// Half-width of the uniform per-pixel noise, in `[0, 1]` units.
    pub noise: f64,
}

impl Default for ShapeWorldSpec {
    fn default() -> Self {
        ShapeWorldSpec {
            seed: 0,
            image_size: 64,
            base_classes: (0..6).collect(),
            novel_classes: vec![6, 7],
            min_size: 14,
            max_size: 30,
            support_min_size: 40,
            support_max_size: 56,
            max_objects: 3,
            clutter: 4,
            noise: 0.04,
        }
    }
}

impl ShapeWorldSpec {
    pub fn num_classes(&self) -> usize {
        self.base_classes.len() + self.novel_classes.len()
    }

    pub fn all_classes(&self) -> Vec<ClassId> {
        let mut all: Vec<_> = self.base_classes.iter().chain(&self.novel_classes).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IcpeError::Config(m.to_string()));
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return bad("image_size must be a positive multiple of 8");
        }
        if self.base_classes.iter().any(|c| self.novel_classes.contains(c)) {
            return bad("base and novel classes must be disjoint");
        }
        if self.all_classes().iter().any(|&c| c >= SHAPE_NAMES.len()) {
            return bad("class ids must name one of the 8 shapes");
        }
        if self.base_classes.is_empty() {
            return bad("at least one base class is required");
        }
        if self.min_size < 4 || self.min_size > self.max_size {
            return bad("need 4 <= min_size <= max_size");
        }
        // The widest shape is twice as wide as tall.
        if 2 * self.max_size > self.image_size {
            return bad("max_size is too large for image_size");
        }
        if self.support_min_size < 4
            || self.support_min_size > self.support_max_size
            || self.support_max_size > self.image_size
        {
            return bad("need 4 <= support_min_size <= support_max_size <= image_size");
        }
        if self.max_objects == 0 {
            return bad("max_objects must be positive");
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return bad("noise must lie in [0, 0.5]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image: RgbImage,
    pub annotations: Vec<BoxAnnotation>,
}

impl AnnotatedImage {
    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.annotations.iter().map(|a| a.class_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportRendition {
    pub image: RgbImage,
    /// Row-major, one byte per pixel, 0 or 1.
    pub mask: Vec<u8>,
    pub class_id: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<AnnotatedImage>,
    pub supports: Vec<SupportRendition>,
}

impl Dataset {
    pub fn supports_of(&self, class_id: ClassId) -> Vec<usize> {
        (0..self.supports.len())
            .filter(|&i| self.supports[i].class_id == class_id)
            .collect()
    }
}

const PLACEMENT_RETRIES: usize = 100;
const MAX_OVERLAP: f64 = 0.2;

/// Independent stream per (seed, stream, item) so generation can run in
/// parallel and still be order-independent.
pub fn item_rng(seed: u64, stream: u64, item: u64) -> Xoshiro256PlusPlus {
    let mixed = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ item.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    Xoshiro256PlusPlus::seed_from_u64(mixed)
}

fn object_color(rng: &mut impl Rng) -> [u8; 3] {
    // At least one bright channel so objects stand out of the dark
    // background regardless of hue.
    let mut c = [0u8; 3];
    for v in &mut c {
        *v = rng.random_range(60..=255);
    }
    let hi = rng.random_range(0..3);
    c[hi] = rng.random_range(200..=255);
    c
}

fn background(spec: &ShapeWorldSpec, rng: &mut impl Rng) -> RgbImage {
    let base = [
        rng.random_range(0..=50u8),
        rng.random_range(0..=50u8),
        rng.random_range(0..=50u8),
    ];
    let n = spec.image_size;
    let mut img = RgbImage::filled(n, n, base);
    for _ in 0..spec.clutter {
        let color = object_color(rng);
        let dim = [color[0] / 2, color[1] / 2, color[2] / 2];
        let r = rng.random_range(2.0..4.5);
        let cx = rng.random_range(0.0..n as f64);
        let cy = rng.random_range(0.0..n as f64);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    img.put(x, y, dim);
                }
            }
        }
    }
    img
}

fn add_noise(img: &mut RgbImage, amplitude: f64, rng: &mut impl Rng) {
    if amplitude == 0.0 {
        return;
    }
    for v in &mut img.data {
        let jitter = rng.random_range(-amplitude..=amplitude) * 255.0;
        *v = (f64::from(*v) + jitter).round().clamp(0.0, 255.0) as u8;
    }
}

fn box_size(spec: &ShapeWorldSpec, class_id: ClassId, rng: &mut impl Rng) -> (usize, usize) {
    let h = rng.random_range(spec.min_size..=spec.max_size);
    let w = (h as f64 * aspect(class_id)).round() as usize;
    (w, h)
}

/// Paints the shape and returns its tight box, or `None` if nothing was
/// drawn.
fn paint(img: &mut RgbImage, class_id: ClassId, x0: usize, y0: usize, w: usize, h: usize, color: [u8; 3]) -> Option<BBox> {
    let mask = shape_mask(class_id, w, h);
    let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                img.put(x0 + x, y0 + y, color);
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    (x2 > 0).then(|| {
        BBox::new(
            (x0 + x1) as f64,
            (y0 + y1) as f64,
            (x0 + x2) as f64,
            (y0 + y2) as f64,
        )
    })
}

fn try_scene(spec: &ShapeWorldSpec, classes: &[ClassId], rng: &mut impl Rng) -> Option<AnnotatedImage> {
    let n = spec.image_size;
    let count = rng.random_range(1..=spec.max_objects);
    let mut placed: Vec<(ClassId, usize, usize, usize, usize)> = Vec::new();
    for _ in 0..count {
        let class_id = classes[rng.random_range(0..classes.len())];
        let (w, h) = box_size(spec, class_id, rng);
        let mut ok = false;
        for _ in 0..PLACEMENT_RETRIES {
            let x0 = rng.random_range(0..=n - w);
            let y0 = rng.random_range(0..=n - h);
            let b = BBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64);
            let clear = placed.iter().all(|&(_, px, py, pw, ph)| {
                let other = BBox::new(px as f64, py as f64, (px + pw) as f64, (py + ph) as f64);
                iou(&b, &other) < MAX_OVERLAP
            });
            if clear {
                placed.push((class_id, x0, y0, w, h));
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    let mut image = background(spec, rng);
    let mut annotations = Vec::with_capacity(placed.len());
    for (class_id, x0, y0, w, h) in placed {
        let color = object_color(rng);
        if let Some(bbox) = paint(&mut image, class_id, x0, y0, w, h, color) {
            annotations.push(BoxAnnotation { bbox, class_id });
        }
    }
    add_noise(&mut image, spec.noise, rng);
    Some(AnnotatedImage { image, annotations })
}

/// One scene drawing classes uniformly from `classes`. Unsatisfiable
/// placements resample the whole scene.
pub fn generate_scene(spec: &ShapeWorldSpec, classes: &[ClassId], rng: &mut impl Rng) -> AnnotatedImage {
    loop {
        if let Some(scene) = try_scene(spec, classes, rng) {
            return scene;
        }
    }
}

/// A single large object centered on a cluttered background, with its
/// exact mask.
pub fn generate_support(spec: &ShapeWorldSpec, class_id: ClassId, rng: &mut impl Rng) -> SupportRendition {
    let long = rng.random_range(spec.support_min_size..=spec.support_max_size);
    let a = aspect(class_id);
    let (w, h) = if a >= 1.0 {
        (long, (long as f64 / a).round() as usize)
    } else {
        ((long as f64 * a).round() as usize, long)
    };
    let mut image = background(spec, rng);
    let color = object_color(rng);
    render_centered(&mut image, class_id, w, h, color, rng, spec.noise)
}

fn render_centered(
    image: &mut RgbImage,
    class_id: ClassId,
    w: usize,
    h: usize,
    color: [u8; 3],
    rng: &mut impl Rng,
    noise: f64,
) -> SupportRendition {
    let n = image.width;
    let (x0, y0) = ((n - w) / 2, (n - h) / 2);
    let shape = shape_mask(class_id, w, h);
    let mut mask = vec![0u8; n * n];
    for y in 0..h {
        for x in 0..w {
            if shape[y * w + x] {
                image.put(x0 + x, y0 + y, color);
                mask[(y0 + y) * n + x0 + x] = 1;
            }
        }
    }
    add_noise(image, noise, rng);
    SupportRendition {
        image: image.clone(),
        mask,
        class_id,
    }
}

/// Mask of a centered `w x h` rendition of `class_id` on an `n x n` canvas.
pub fn centered_mask(n: usize, class_id: ClassId, w: usize, h: usize) -> Vec<u8> {
    let mut canvas = RgbImage::filled(n, n, [0, 0, 0]);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
    render_centered(&mut canvas, class_id, w, h, [255, 255, 255], &mut rng, 0.0).mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSize {
    pub images: usize,
    pub supports_per_class: usize,
}

/// Deterministic in `(spec, stream, size)`; items are generated in
/// parallel from per-item seeds.
pub fn generate_dataset(spec: &ShapeWorldSpec, stream: u64, size: DatasetSize) -> Result<Dataset> {
    spec.validate()?;
    let classes = spec.all_classes();
    let images = (0..size.images)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(spec.seed, 2 * stream, i as u64);
            generate_scene(spec, &classes, &mut rng)
        })
        .collect();
    let jobs: Vec<(ClassId, usize)> = classes
        .iter()
        .flat_map(|&c| (0..size.supports_per_class).map(move |j| (c, j)))
        .collect();
    let supports = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (class_id, _))| {
            let mut rng = item_rng(spec.seed, 2 * stream + 1, i as u64);
            generate_support(spec, class_id, &mut rng)
        })
        .collect();
    Ok(Dataset { images, supports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSize {
        DatasetSize {
            images: 12,
            supports_per_class: 2,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = ShapeWorldSpec::default();
        let a = generate_dataset(&spec, 0, small()).unwrap();
        let b = generate_dataset(&spec, 0, small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, 1, small()).unwrap();
        assert_ne!(a.images[0], c.images[0]);
    }

    #[test]
    fn boxes_are_inside_and_positive() {
        let spec = ShapeWorldSpec::default();
        let d = generate_dataset(&spec, 0, DatasetSize { images: 40, supports_per_class: 1 }).unwrap();
        for img in &d.images {
            assert!((1..=3).contains(&img.annotations.len()));
            for a in &img.annotations {
                assert!(a.bbox.area() > 0.0);
                assert!(a.bbox.x1 >= 0.0 && a.bbox.y1 >= 0.0);
                assert!(a.bbox.x2 <= 64.0 && a.bbox.y2 <= 64.0);
            }
        }
    }

    #[test]
    fn supports_cover_every_class_with_nonempty_masks() {
        let spec = ShapeWorldSpec::default();
        let d = generate_dataset(&spec, 0, small()).unwrap();
        assert_eq!(d.supports.len(), 16);
        for c in 0..8 {
            assert_eq!(d.supports_of(c).len(), 2);
        }
        assert!(d.supports.iter().all(|s| s.mask.iter().any(|&m| m == 1)));
    }

    #[test]
    fn centered_square_mask_count() {
        for s in [14, 17, 30] {
            let m = centered_mask(64, 1, s, s);
            assert_eq!(m.iter().map(|&v| v as usize).sum::<usize>(), s * s);
        }
    }

    #[test]
    fn overlapping_specs_are_rejected() {
        let spec = ShapeWorldSpec {
            novel_classes: vec![5, 6],
            ..ShapeWorldSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
