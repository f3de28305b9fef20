//! Shared domain types: boxes, detections, images, color histograms, flow fields.

use crate::{Error, Result};

/// Axis-aligned box in integer pixel coordinates, half-open on both axes:
/// the box covers pixels with `x_min <= x < x_max` and `y_min <= y < y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BoundingBox {
    x_min: i32,
    y_min: i32,
    x_max: i32,
    y_max: i32,
}

impl BoundingBox {
    pub fn new(x_min: i32, y_min: i32, x_max: i32, y_max: i32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> i32 {
        self.x_min
    }
    pub fn y_min(&self) -> i32 {
        self.y_min
    }
    pub fn x_max(&self) -> i32 {
        self.x_max
    }
    pub fn y_max(&self) -> i32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        (self.x_max - self.x_min) as u32
    }

    pub fn height(&self) -> u32 {
        (self.y_max - self.y_min) as u32
    }

    /// Pixel count covered by the box.
    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Real-valued box center.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        if x_min < x_max && y_min < y_max {
            Some(BoundingBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    pub fn union_area(&self, other: &BoundingBox) -> u64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// Smallest box containing both operands.
    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn translated(&self, dx: i32, dy: i32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// True if the box lies fully inside a `width` x `height` image.
    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x_min >= 0 && self.y_min >= 0 && self.x_max <= width as i32 && self.y_max <= height as i32
    }

    /// Shifts the box (preserving its size) so that it lies inside the image.
    /// Returns `None` if the box is larger than the image on either axis.
    pub fn shifted_into(&self, width: usize, height: usize) -> Option<BoundingBox> {
        if self.width() as usize > width || self.height() as usize > height {
            return None;
        }
        let dx = if self.x_min < 0 {
            -self.x_min
        } else if self.x_max > width as i32 {
            width as i32 - self.x_max
        } else {
            0
        };
        let dy = if self.y_min < 0 {
            -self.y_min
        } else if self.y_max > height as i32 {
            height as i32 - self.y_max
        } else {
            0
        };
        Some(self.translated(dx, dy))
    }

    /// Iterates the integer pixel coordinates covered by the box, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        let (x0, x1, y0, y1) = (self.x_min, self.x_max, self.y_min, self.y_max);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

/// Intersection over union of two boxes; 0 for disjoint boxes, 1 iff identical.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / a.union_area(b) as f64
}

/// Real-valued center of a box (midpoints of the half-open intervals).
pub fn box_center(b: &BoundingBox) -> (f64, f64) {
    b.center()
}

/// One scored, categorized bounding box in one frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: String,
}

impl Detection {
    pub fn new(frame: usize, bbox: BoundingBox, score: f64, category: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            frame,
            bbox,
            score,
            category: category.into(),
        })
    }
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Misaligned {
                what: format!("{width}x{height} image pixel buffer"),
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    #[inline]
    pub fn rgb_f64(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.get(x, y);
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    /// Grayscale value, standard luma weighting 0.299 R + 0.587 G + 0.114 B.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f64 {
        let p = self.get(x, y);
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

pub const HISTOGRAM_BINS_PER_CHANNEL: usize = 8;
pub const HISTOGRAM_BINS: usize = HISTOGRAM_BINS_PER_CHANNEL.pow(3);

/// Joint 8x8x8 RGB histogram of pixel counts (flattened, length 512).
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    bins: Vec<f64>,
    total: f64,
}

impl ColorHistogram {
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Cosine similarity of two histograms, in [0,1] for count vectors.
    pub fn cosine(&self, other: &ColorHistogram) -> Result<f64> {
        if self.total <= 0.0 || other.total <= 0.0 {
            return Err(Error::EmptyHistogram);
        }
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (a, b) in self.bins.iter().zip(&other.bins) {
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        Ok(dot / (na.sqrt() * nb.sqrt()))
    }
}

#[inline]
fn histogram_bin(rgb: [u8; 3]) -> usize {
    let r = rgb[0] as usize / 32;
    let g = rgb[1] as usize / 32;
    let b = rgb[2] as usize / 32;
    (r * HISTOGRAM_BINS_PER_CHANNEL + g) * HISTOGRAM_BINS_PER_CHANNEL + b
}

/// Counts the box pixels of `img` into a joint RGB histogram.
/// The histogram total equals the box area.
pub fn color_histogram(img: &Image, bbox: &BoundingBox) -> Result<ColorHistogram> {
    if !bbox.within(img.width(), img.height()) {
        return Err(Error::BoxOutOfBounds {
            x_min: bbox.x_min(),
            y_min: bbox.y_min(),
            x_max: bbox.x_max(),
            y_max: bbox.y_max(),
            width: img.width(),
            height: img.height(),
        });
    }
    let mut bins = vec![0.0; HISTOGRAM_BINS];
    for (x, y) in bbox.pixels() {
        bins[histogram_bin(img.get(x as usize, y as usize))] += 1.0;
    }
    Ok(ColorHistogram {
        bins,
        total: bbox.area() as f64,
    })
}

/// Per-pixel 2D displacement mapping frame `t` to frame `t+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn from_components(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Misaligned {
                what: format!("{width}x{height} flow buffers"),
                expected: width * height,
                actual: u.len().min(v.len()),
            });
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }
    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// Integer target of pixel `(x, y)` under round-to-nearest flow,
    /// or `None` when the target leaves the field.
    #[inline]
    pub fn rounded_target(&self, x: i32, y: i32) -> Option<(i32, i32)> {
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            return None;
        }
        let (u, v) = self.at(x as usize, y as usize);
        let tx = (x as f64 + u as f64).round() as i32;
        let ty = (y as f64 + v as f64).round() as i32;
        if tx < 0 || ty < 0 || tx >= self.width as i32 || ty >= self.height as i32 {
            None
        } else {
            Some((tx, ty))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn box_invariants_rejected() {
        assert!(BoundingBox::new(0, 0, 0, 10).is_err());
        assert!(BoundingBox::new(5, 0, 3, 10).is_err());
        assert!(Detection::new(0, bb(0, 0, 1, 1), 1.2, "car").is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bb(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20, 20, 30, 30)), 0.0);
        let b = bb(5, 0, 15, 10);
        approx::assert_abs_diff_eq!(iou(&a, &b), 50.0 / 150.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_symmetric_bounded_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let ab = iou(&a, &b);
            assert_eq!(ab, iou(&b, &a));
            assert!((0.0..=1.0).contains(&ab));
            assert_eq!(ab == 1.0, a == b);
        }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
        let x0 = rng.gen_range(0..40);
        let y0 = rng.gen_range(0..40);
        bb(x0, y0, x0 + rng.gen_range(1..20), y0 + rng.gen_range(1..20))
    }

    #[test]
    fn centers() {
        assert_eq!(box_center(&bb(0, 0, 10, 10)), (5.0, 5.0));
        assert_eq!(box_center(&bb(2, 4, 6, 8)), (4.0, 6.0));
        assert_eq!(box_center(&bb(0, 0, 1, 1)), (0.5, 0.5));
    }

    #[test]
    fn histogram_uniform_red() {
        let img = Image::new(20, 20, [255, 0, 0]);
        let h = color_histogram(&img, &bb(0, 0, 10, 10)).unwrap();
        assert_eq!(h.total(), 100.0);
        assert_eq!(h.bins().iter().filter(|&&c| c > 0.0).count(), 1);
        assert_eq!(h.bins().iter().sum::<f64>(), 100.0);
    }

    #[test]
    fn histogram_half_and_half() {
        let mut img = Image::new(10, 10, [255, 0, 0]);
        for y in 5..10 {
            for x in 0..10 {
                img.set(x, y, [0, 0, 255]);
            }
        }
        let h = color_histogram(&img, &bb(0, 0, 10, 10)).unwrap();
        let nonzero: Vec<f64> = h.bins().iter().copied().filter(|&c| c > 0.0).collect();
        assert_eq!(nonzero, vec![50.0, 50.0]);
    }

    #[test]
    fn histogram_translation_invariant_on_constant_image() {
        let img = Image::new(64, 64, [17, 180, 99]);
        let a = color_histogram(&img, &bb(0, 0, 8, 8)).unwrap();
        let b = color_histogram(&img, &bb(40, 30, 48, 38)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_total_equals_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_pixels(
            60,
            60,
            (0..3600).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect(),
        )
        .unwrap();
        for _ in 0..50 {
            let b = random_box(&mut rng);
            let h = color_histogram(&img, &b).unwrap();
            assert_eq!(h.total(), b.area() as f64);
            assert_eq!(h.bins().iter().sum::<f64>(), b.area() as f64);
        }
    }

    #[test]
    fn histogram_out_of_bounds_rejected() {
        let img = Image::new(10, 10, [0, 0, 0]);
        assert!(color_histogram(&img, &bb(5, 5, 12, 8)).is_err());
    }

    #[test]
    fn flow_rounded_target() {
        let mut f = FlowField::zero(5, 5);
        f.set(1, 1, 1.4, -0.6);
        assert_eq!(f.rounded_target(1, 1), Some((2, 0)));
        f.set(4, 4, 1.0, 0.0);
        assert_eq!(f.rounded_target(4, 4), None);
        assert_eq!(f.rounded_target(-1, 0), None);
    }

    #[test]
    fn shifted_into_keeps_size() {
        let b = bb(-3, 2, 5, 9);
        let s = b.shifted_into(20, 20).unwrap();
        assert_eq!(s, bb(0, 2, 8, 9));
        assert!(bb(0, 0, 30, 5).shifted_into(20, 20).is_none());
    }
}
