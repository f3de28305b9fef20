//! Detection-pair similarity: per-term measures and their composition, with
//! per-term switches for ablation runs.

use crate::model::{color_histogram, BoundingBox, ColorHistogram, Detection, FlowField, Image};
use crate::{Error, Result};

/// Extended non-negative real: a similarity value or the absorbing
/// negative-infinity marker produced by hard consistency tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Similarity {
    Finite(f64),
    NegInf,
}

impl Similarity {
    pub fn is_neg_inf(&self) -> bool {
        matches!(self, Similarity::NegInf)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Similarity::Finite(v) => Some(*v),
            Similarity::NegInf => None,
        }
    }

    /// Product with negative infinity absorbing.
    pub fn product(self, other: Similarity) -> Similarity {
        match (self, other) {
            (Similarity::Finite(a), Similarity::Finite(b)) => Similarity::Finite(a * b),
            _ => Similarity::NegInf,
        }
    }
}

/// Enable switches and constants for the composite similarity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub use_score: bool,
    pub use_category: bool,
    pub use_app: bool,
    pub use_vol: bool,
    pub use_side: bool,
    pub use_match: bool,
    pub use_center: bool,
    /// Cosine cutoff below (or at) which appearances count as distinct.
    pub app_threshold: f64,
    /// Coefficient on the center deviation in the center term.
    pub center_decay: f64,
    /// Search radius in pixels for correlation-based center propagation.
    pub search_radius: i32,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            use_score: true,
            use_category: true,
            use_app: true,
            use_vol: true,
            use_side: true,
            use_match: true,
            use_center: true,
            app_threshold: 0.8,
            center_decay: 0.1,
            search_radius: 32,
        }
    }
}

impl SimilarityConfig {
    /// All terms off (composite reduces to the detection score).
    pub fn none() -> Self {
        Self {
            use_category: false,
            use_app: false,
            use_vol: false,
            use_side: false,
            use_match: false,
            use_center: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.app_threshold) {
            return Err(Error::Format(format!(
                "app_threshold {} outside [0,1]",
                self.app_threshold
            )));
        }
        if self.center_decay <= 0.0 {
            return Err(Error::Format(format!(
                "center_decay {} must be positive",
                self.center_decay
            )));
        }
        if self.search_radius < 1 {
            return Err(Error::Format(format!(
                "search_radius {} must be at least 1",
                self.search_radius
            )));
        }
        Ok(())
    }
}

/// Per-term values of a composite similarity; `None` marks disabled terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermBreakdown {
    pub score: Option<f64>,
    pub category: Option<Similarity>,
    pub app: Option<Similarity>,
    pub vol: Option<f64>,
    pub side: Option<f64>,
    pub matching: Option<f64>,
    pub center: Option<f64>,
}

/// Composite similarity value together with its per-term breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub value: Similarity,
    pub terms: TermBreakdown,
}

/// 1 for equal category labels, negative infinity otherwise.
pub fn s_category(a: &Detection, b: &Detection) -> Similarity {
    if a.category == b.category {
        Similarity::Finite(1.0)
    } else {
        Similarity::NegInf
    }
}

/// Symmetric area ratio `min(Vol(a)/Vol(b), Vol(b)/Vol(a))`, in (0,1].
pub fn s_vol(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let va = a.area() as f64;
    let vb = b.area() as f64;
    (va / vb).min(vb / va)
}

/// Minimum of the symmetric height ratio and the symmetric width ratio, in (0,1].
pub fn s_side(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let h = (a.height() as f64 / b.height() as f64).min(b.height() as f64 / a.height() as f64);
    let w = (a.width() as f64 / b.width() as f64).min(b.width() as f64 / a.width() as f64);
    h.min(w)
}

/// Fraction of `b`'s pixels reached from `a`'s pixels under the composed,
/// per-hop-rounded optical flow. Requires `a.frame < b.frame` and flow fields
/// for every frame in `a.frame..b.frame`.
pub fn s_match(a: &Detection, b: &Detection, flows: &[FlowField]) -> Result<f64> {
    assert!(a.frame < b.frame, "s_match requires a.frame < b.frame");
    if b.frame - 1 >= flows.len() {
        return Err(Error::MissingFlow(b.frame.saturating_sub(1)));
    }
    let target = &b.bbox;
    let tw = target.width() as usize;
    let th = target.height() as usize;
    let mut hit = vec![false; tw * th];
    for (x, y) in a.bbox.pixels() {
        let mut p = Some((x, y));
        for flow in &flows[a.frame..b.frame] {
            p = p.and_then(|(px, py)| flow.rounded_target(px, py));
            if p.is_none() {
                break;
            }
        }
        if let Some((px, py)) = p {
            if target.contains(px, py) {
                let ix = (px - target.x_min()) as usize;
                let iy = (py - target.y_min()) as usize;
                hit[iy * tw + ix] = true;
            }
        }
    }
    let matches = hit.iter().filter(|&&h| h).count();
    Ok(matches as f64 / target.area() as f64)
}

/// Propagates the center of `a`'s box from `img_a` into `img_b` by exhaustive
/// normalized cross-correlation of the grayscale patch over integer
/// displacements within `±search_radius`. Ties resolve to the smallest
/// displacement, then to row-major candidate order.
pub fn propagate_center(
    a: &Detection,
    img_a: &Image,
    img_b: &Image,
    cfg: &SimilarityConfig,
) -> Result<(f64, f64)> {
    propagate_box_center(&a.bbox, img_a, img_b, cfg)
}

/// Box-level form of [`propagate_center`]; also used to track interpolated
/// boxes through detection gaps.
pub fn propagate_box_center(
    bbox: &BoundingBox,
    img_a: &Image,
    img_b: &Image,
    cfg: &SimilarityConfig,
) -> Result<(f64, f64)> {
    if !bbox.within(img_a.width(), img_a.height()) {
        return Err(Error::BoxOutOfBounds {
            x_min: bbox.x_min(),
            y_min: bbox.y_min(),
            x_max: bbox.x_max(),
            y_max: bbox.y_max(),
            width: img_a.width(),
            height: img_a.height(),
        });
    }
    let patch: Vec<f64> = bbox
        .pixels()
        .map(|(x, y)| img_a.luma(x as usize, y as usize))
        .collect();
    let n = patch.len() as f64;
    let mean_a: f64 = patch.iter().sum::<f64>() / n;
    let var_a: f64 = patch.iter().map(|v| (v - mean_a) * (v - mean_a)).sum();

    let r = cfg.search_radius;
    let mut best: Option<(f64, i64, (i32, i32))> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let placed = bbox.translated(dx, dy);
            if !placed.within(img_b.width(), img_b.height()) {
                continue;
            }
            let mut mean_b = 0.0;
            for (x, y) in placed.pixels() {
                mean_b += img_b.luma(x as usize, y as usize);
            }
            mean_b /= n;
            let mut dot = 0.0;
            let mut var_b = 0.0;
            for (i, (x, y)) in placed.pixels().enumerate() {
                let vb = img_b.luma(x as usize, y as usize) - mean_b;
                dot += (patch[i] - mean_a) * vb;
                var_b += vb * vb;
            }
            let ncc = if var_a < 1e-12 || var_b < 1e-12 {
                0.0
            } else {
                dot / (var_a.sqrt() * var_b.sqrt())
            };
            let norm2 = dx as i64 * dx as i64 + dy as i64 * dy as i64;
            let better = match &best {
                None => true,
                Some((best_ncc, best_norm2, _)) => {
                    ncc > *best_ncc || (ncc == *best_ncc && norm2 < *best_norm2)
                }
            };
            if better {
                best = Some((ncc, norm2, (dx, dy)));
            }
        }
    }
    let (_, _, (dx, dy)) = best.ok_or(Error::SearchWindowOutside)?;
    let (cx, cy) = bbox.center();
    Ok((cx + dx as f64, cy + dy as f64))
}

/// Center-deviation penalty `1 / (1 + decay * ||c_p - c||)`, in (0,1].
pub fn s_center(c_p: (f64, f64), c: (f64, f64), cfg: &SimilarityConfig) -> f64 {
    let d = ((c_p.0 - c.0).powi(2) + (c_p.1 - c.1).powi(2)).sqrt();
    1.0 / (1.0 + cfg.center_decay * d)
}

/// Cosine similarity of two color histograms; at or below the configured
/// threshold the appearances count as distinct and the term is negative
/// infinity.
pub fn s_app(h_a: &ColorHistogram, h_b: &ColorHistogram, cfg: &SimilarityConfig) -> Result<Similarity> {
    let cos = h_a.cosine(h_b)?;
    if cos <= cfg.app_threshold {
        Ok(Similarity::NegInf)
    } else {
        Ok(Similarity::Finite(cos))
    }
}

/// Frame-aligned inputs shared by all pairwise similarity evaluations:
/// the video frames, the forward flow fields, the detections sorted by frame,
/// and one color histogram per detection.
pub struct LinkContext<'a> {
    pub images: &'a [Image],
    pub flows: &'a [FlowField],
    pub detections: Vec<Detection>,
    pub histograms: Vec<ColorHistogram>,
}

impl<'a> LinkContext<'a> {
    /// Sorts detections by frame (stable) and precomputes their histograms.
    pub fn new(images: &'a [Image], flows: &'a [FlowField], detections: &[Detection]) -> Result<Self> {
        let mut sorted = detections.to_vec();
        sorted.sort_by_key(|d| d.frame);
        for d in &sorted {
            if d.frame >= images.len() {
                return Err(Error::Frame {
                    frame: d.frame,
                    message: format!("detection beyond the {} available frames", images.len()),
                });
            }
            if !d.bbox.within(images[d.frame].width(), images[d.frame].height()) {
                return Err(Error::Frame {
                    frame: d.frame,
                    message: "detection box outside the image".into(),
                });
            }
        }
        let histograms = sorted
            .iter()
            .map(|d| color_histogram(&images[d.frame], &d.bbox))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            images,
            flows,
            detections: sorted,
            histograms,
        })
    }
}

/// Composite similarity of detections `i -> j` in the context. Disabled terms
/// contribute factor 1; any enabled negative-infinity term absorbs the product.
pub fn composite_similarity(
    ctx: &LinkContext,
    i: usize,
    j: usize,
    cfg: &SimilarityConfig,
) -> Result<SimilarityScore> {
    let propagated = if cfg.use_center {
        let a = &ctx.detections[i];
        let b = &ctx.detections[j];
        Some(propagate_center(a, &ctx.images[a.frame], &ctx.images[b.frame], cfg)?)
    } else {
        None
    };
    composite_with_center(ctx, i, j, cfg, propagated)
}

/// Composite similarity with an externally supplied propagated center
/// (graph construction caches the correlation result per detection/frame pair).
pub(crate) fn composite_with_center(
    ctx: &LinkContext,
    i: usize,
    j: usize,
    cfg: &SimilarityConfig,
    propagated: Option<(f64, f64)>,
) -> Result<SimilarityScore> {
    let a = &ctx.detections[i];
    let b = &ctx.detections[j];
    assert!(a.frame < b.frame, "composite similarity requires increasing frames");

    let mut terms = TermBreakdown::default();
    let mut value = Similarity::Finite(1.0);

    if cfg.use_score {
        terms.score = Some(b.score);
        value = value.product(Similarity::Finite(b.score));
    }
    if cfg.use_category {
        let t = s_category(a, b);
        terms.category = Some(t);
        value = value.product(t);
    }
    if cfg.use_app {
        let t = s_app(&ctx.histograms[i], &ctx.histograms[j], cfg)?;
        terms.app = Some(t);
        value = value.product(t);
    }
    if cfg.use_vol {
        let t = s_vol(&a.bbox, &b.bbox);
        terms.vol = Some(t);
        value = value.product(Similarity::Finite(t));
    }
    if cfg.use_side {
        let t = s_side(&a.bbox, &b.bbox);
        terms.side = Some(t);
        value = value.product(Similarity::Finite(t));
    }
    if cfg.use_match {
        let t = s_match(a, b, ctx.flows)?;
        terms.matching = Some(t);
        value = value.product(Similarity::Finite(t));
    }
    if cfg.use_center {
        let c_p = match propagated {
            Some(c) => c,
            None => propagate_center(a, &ctx.images[a.frame], &ctx.images[b.frame], cfg)?,
        };
        let t = s_center(c_p, b.bbox.center(), cfg);
        terms.center = Some(t);
        value = value.product(Similarity::Finite(t));
    }
    Ok(SimilarityScore { value, terms })
}
