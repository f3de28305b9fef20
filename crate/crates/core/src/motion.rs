//! Motion evidence: flow-gradient boundaries, inside-outside maps, tube
//! restriction, and temporally smoothed location priors.

use crate::model::{BoundingBox, FlowField};
use crate::{Error, Result};

/// Per-pixel probability map in [0,1]. Binary evidence uses values 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PixelMask {
    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Misaligned {
                what: format!("{width}x{height} mask buffer"),
                expected: width * height,
                actual: values.len(),
            });
        }
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.values[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of all values (pixel count for binary masks).
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Pixelwise maximum of two equally sized masks.
    pub fn max(&self, other: &PixelMask) -> PixelMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        PixelMask {
            width: self.width,
            height: self.height,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    /// Count of pixels at or above 0.5 in both / either mask: `(inter, union)`.
    pub fn overlap_counts(&self, other: &PixelMask) -> (u64, u64) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut inter = 0;
        let mut union = 0;
        for (a, b) in self.values.iter().zip(&other.values) {
            let (a, b) = (*a >= 0.5, *b >= 0.5);
            inter += u64::from(a && b);
            union += u64::from(a || b);
        }
        (inter, union)
    }

    pub fn iou(&self, other: &PixelMask) -> f64 {
        let (inter, union) = self.overlap_counts(other);
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Knobs of the inside-outside construction and the temporal smoothing.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionPriorConfig {
    /// Flow-gradient magnitude above which a pixel is a motion boundary
    /// (pixels per frame).
    pub boundary_threshold: f64,
    /// Ray directions for the inside-outside vote (4 or 8).
    pub ray_directions: usize,
    /// Per-frame retention of propagated evidence, in [0,1).
    pub smoothing_decay: f64,
    /// How many frames beyond a tube's ends still receive decayed evidence.
    pub smoothing_window: usize,
}

impl Default for MotionPriorConfig {
    fn default() -> Self {
        Self {
            boundary_threshold: 1.0,
            ray_directions: 8,
            smoothing_decay: 0.7,
            smoothing_window: 5,
        }
    }
}

impl MotionPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.boundary_threshold <= 0.0 {
            return Err(Error::Format("boundary_threshold must be positive".into()));
        }
        if self.ray_directions != 4 && self.ray_directions != 8 {
            return Err(Error::Format(format!(
                "ray_directions must be 4 or 8, got {}",
                self.ray_directions
            )));
        }
        if !(0.0..1.0).contains(&self.smoothing_decay) {
            return Err(Error::Format(format!(
                "smoothing_decay {} outside [0,1)",
                self.smoothing_decay
            )));
        }
        Ok(())
    }
}

const DIRECTIONS_8: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Marks pixels where the spatial flow gradient (central differences with
/// replicated borders, Frobenius norm of the Jacobian) exceeds the threshold.
pub fn motion_boundaries(flow: &FlowField, cfg: &MotionPriorConfig) -> PixelMask {
    let (w, h) = (flow.width(), flow.height());
    let mut mask = PixelMask::zero(w, h);
    let at = |x: i32, y: i32| -> (f64, f64) {
        let x = x.clamp(0, w as i32 - 1) as usize;
        let y = y.clamp(0, h as i32 - 1) as usize;
        let (u, v) = flow.at(x, y);
        (u as f64, v as f64)
    };
    for y in 0..h as i32 {
        for x in 0..w as i32 {
            let (ur, vr) = at(x + 1, y);
            let (ul, vl) = at(x - 1, y);
            let (ud, vd) = at(x, y + 1);
            let (uu, vu) = at(x, y - 1);
            let dux = (ur - ul) / 2.0;
            let dvx = (vr - vl) / 2.0;
            let duy = (ud - uu) / 2.0;
            let dvy = (vd - vu) / 2.0;
            let g = (dux * dux + dvx * dvx + duy * duy + dvy * dvy).sqrt();
            if g > cfg.boundary_threshold {
                mask.set(x as usize, y as usize, 1.0);
            }
        }
    }
    mask
}

/// Inside-outside map: a pixel counts as inside when rays cast in the
/// configured directions hit a boundary pixel before leaving the image in a
/// strict majority of directions. Boundary pixels hit at distance zero.
pub fn inside_outside_map(boundaries: &PixelMask, cfg: &MotionPriorConfig) -> PixelMask {
    let (w, h) = (boundaries.width(), boundaries.height());
    let dirs = &DIRECTIONS_8[..cfg.ray_directions];
    let mut hits = vec![0u8; w * h];
    let mut dir_hit = vec![false; w * h];
    for &(dx, dy) in dirs {
        dir_hit.iter_mut().for_each(|v| *v = false);
        // Sweep so that the pixel one step along (dx,dy) is visited first.
        let ys: Vec<i32> = if dy > 0 {
            (0..h as i32).rev().collect()
        } else {
            (0..h as i32).collect()
        };
        let xs: Vec<i32> = if dx > 0 {
            (0..w as i32).rev().collect()
        } else {
            (0..w as i32).collect()
        };
        for &y in &ys {
            for &x in &xs {
                let i = y as usize * w + x as usize;
                let mut hit = boundaries.get(x as usize, y as usize) >= 0.5;
                if !hit {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w as i32 && ny < h as i32 {
                        hit = dir_hit[ny as usize * w + nx as usize];
                    }
                }
                dir_hit[i] = hit;
            }
        }
        for (acc, &hit) in hits.iter_mut().zip(dir_hit.iter()) {
            *acc += u8::from(hit);
        }
    }
    let majority = (cfg.ray_directions / 2) as u8;
    let mut out = PixelMask::zero(w, h);
    for y in 0..h {
        for x in 0..w {
            if hits[y * w + x] > majority {
                out.set(x, y, 1.0);
            }
        }
    }
    out
}

/// Restricts a map to a tube box: elementwise product with the box indicator,
/// suppressing background and camera motion outside the box.
pub fn restrict_map(m: &PixelMask, bbox: &BoundingBox) -> PixelMask {
    let mut out = PixelMask::zero(m.width(), m.height());
    for (x, y) in bbox.pixels() {
        if x >= 0 && y >= 0 && (x as usize) < m.width() && (y as usize) < m.height() {
            out.set(x as usize, y as usize, m.get(x as usize, y as usize));
        }
    }
    out
}

fn warp_forward(prior: &PixelMask, flow: &FlowField) -> PixelMask {
    let mut out = PixelMask::zero(prior.width(), prior.height());
    for y in 0..prior.height() as i32 {
        for x in 0..prior.width() as i32 {
            let v = prior.get(x as usize, y as usize);
            if v <= 0.0 {
                continue;
            }
            if let Some((tx, ty)) = flow.rounded_target(x, y) {
                let (tx, ty) = (tx as usize, ty as usize);
                if v > out.get(tx, ty) {
                    out.set(tx, ty, v);
                }
            }
        }
    }
    out
}

fn pull_backward(prior_next: &PixelMask, flow: &FlowField) -> PixelMask {
    let mut out = PixelMask::zero(prior_next.width(), prior_next.height());
    for y in 0..prior_next.height() as i32 {
        for x in 0..prior_next.width() as i32 {
            if let Some((tx, ty)) = flow.rounded_target(x, y) {
                out.set(x as usize, y as usize, prior_next.get(tx as usize, ty as usize));
            }
        }
    }
    out
}

/// Location prior: forward and backward passes where each frame takes the
/// pixelwise maximum of its own evidence and the flow-warped neighboring
/// prior scaled by the decay factor. Frames outside the tube interval receive
/// only warped, decayed evidence, and frames farther than `smoothing_window`
/// beyond the interval stay empty.
pub fn propagate_prior(
    per_frame: &[PixelMask],
    flows: &[FlowField],
    tube_interval: (usize, usize),
    cfg: &MotionPriorConfig,
) -> Result<Vec<PixelMask>> {
    let n = per_frame.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if flows.len() + 1 != n {
        return Err(Error::Misaligned {
            what: "flow fields for prior propagation".into(),
            expected: n - 1,
            actual: flows.len(),
        });
    }
    let (start, end) = tube_interval;
    assert!(start < end && end <= n, "tube interval out of range");
    let alpha = cfg.smoothing_decay;
    let evidence = |f: usize| -> Option<&PixelMask> {
        (start..end).contains(&f).then(|| &per_frame[f])
    };

    let blank = PixelMask::zero(per_frame[0].width(), per_frame[0].height());
    let mut forward: Vec<PixelMask> = Vec::with_capacity(n);
    for f in 0..n {
        let mut cur = evidence(f).cloned().unwrap_or_else(|| blank.clone());
        if f > 0 {
            let warped = warp_forward(&forward[f - 1], &flows[f - 1]);
            for y in 0..cur.height() {
                for x in 0..cur.width() {
                    let v = (alpha * warped.get(x, y)).clamp(0.0, 1.0);
                    if v > cur.get(x, y) {
                        cur.set(x, y, v);
                    }
                }
            }
        }
        forward.push(cur);
    }
    let mut backward: Vec<PixelMask> = vec![blank.clone(); n];
    for f in (0..n).rev() {
        let mut cur = evidence(f).cloned().unwrap_or_else(|| blank.clone());
        if f + 1 < n {
            let warped = pull_backward(&backward[f + 1], &flows[f]);
            for y in 0..cur.height() {
                for x in 0..cur.width() {
                    let v = (alpha * warped.get(x, y)).clamp(0.0, 1.0);
                    if v > cur.get(x, y) {
                        cur.set(x, y, v);
                    }
                }
            }
        }
        backward[f] = cur;
    }
    let window = cfg.smoothing_window;
    let mut out = Vec::with_capacity(n);
    for f in 0..n {
        let within_carry = f + window >= start && f < end + window;
        if within_carry {
            out.push(forward[f].max(&backward[f]));
        } else {
            out.push(blank.clone());
        }
    }
    Ok(out)
}
