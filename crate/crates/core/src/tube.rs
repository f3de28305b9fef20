//! Detection linking: similarity DAG construction, dynamic-programming longest
//! path, iterative tube extraction, gap interpolation, and volumetric NMS.

use rayon::prelude::*;
use std::collections::HashMap;

use crate::model::{BoundingBox, Detection, Image};
use crate::similarity::{
    composite_with_center, propagate_box_center, LinkContext, SimilarityConfig,
};
use crate::Result;

pub const DEFAULT_LOOKAHEAD: usize = 20;
pub const DEFAULT_TUBE_SCORE_THRESHOLD: f64 = 1.0;
pub const DEFAULT_MAX_TUBES: usize = 32;

/// DAG over detections. Node indices follow the frame-sorted detection order;
/// a virtual source connects to every node with the node's detector score and
/// every node connects to a zero-weight virtual sink. Edges with
/// negative-infinity similarity are never stored.
pub struct LinkGraph {
    detections: Vec<Detection>,
    /// Outgoing inter-detection edges per node: `(target, weight)`.
    edges: Vec<Vec<(u32, f64)>>,
}

impl LinkGraph {
    /// Builds the graph from pre-weighted edges (primarily for tests and
    /// benchmarks). Edges must point forward in time.
    pub fn from_parts(detections: Vec<Detection>, edges: Vec<Vec<(u32, f64)>>) -> Self {
        debug_assert_eq!(detections.len(), edges.len());
        debug_assert!(edges.iter().enumerate().all(|(i, out)| out
            .iter()
            .all(|&(j, _)| detections[i].frame < detections[j as usize].frame)));
        Self { detections, edges }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn num_nodes(&self) -> usize {
        self.detections.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn out_edges(&self, i: usize) -> &[(u32, f64)] {
        &self.edges[i]
    }
}

/// Connects every detection to the detections of the subsequent `lookahead`
/// frames, weighted by the composite similarity; negative-infinity pairs are
/// dropped. Correlation-based center propagation is cached per
/// (detection, target frame) pair and evaluated in parallel.
pub fn build_link_graph(ctx: &LinkContext, cfg: &SimilarityConfig, lookahead: usize) -> Result<LinkGraph> {
    assert!(lookahead >= 1, "lookahead must be at least 1");
    let n = ctx.detections.len();

    // Frames that actually hold detections, so correlation work is only spent
    // on (source detection, target frame) pairs that produce edges.
    let mut frames_with_dets: Vec<usize> = ctx.detections.iter().map(|d| d.frame).collect();
    frames_with_dets.dedup();

    let mut center_pairs: Vec<(usize, usize)> = Vec::new();
    if cfg.use_center {
        for (i, d) in ctx.detections.iter().enumerate() {
            for &f in &frames_with_dets {
                if f > d.frame && f - d.frame <= lookahead {
                    center_pairs.push((i, f));
                }
            }
        }
    }
    let centers: HashMap<(usize, usize), (f64, f64)> = center_pairs
        .par_iter()
        .map(|&(i, f)| {
            let d = &ctx.detections[i];
            propagate_box_center(&d.bbox, &ctx.images[d.frame], &ctx.images[f], cfg)
                .map(|c| ((i, f), c))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let edges: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in (i + 1)..n {
                let df = ctx.detections[j].frame - ctx.detections[i].frame;
                if df == 0 {
                    continue;
                }
                if df > lookahead {
                    break;
                }
                let c_p = centers.get(&(i, ctx.detections[j].frame)).copied();
                let s = composite_with_center(ctx, i, j, cfg, c_p)?;
                if let Some(w) = s.value.finite() {
                    out.push((j as u32, w));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LinkGraph {
        detections: ctx.detections.clone(),
        edges,
    })
}

/// A source-to-sink path through the link graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// Node indices in frame order; empty when the graph has no usable nodes.
    pub nodes: Vec<usize>,
    pub score: f64,
}

/// Longest source-to-sink path by dynamic programming over the frame order,
/// O(|V|+|E|). Ties resolve to the earlier start frame, then the longer path,
/// then the lexicographically smallest node sequence.
pub fn longest_path(g: &LinkGraph) -> PathResult {
    longest_path_excluding(g, &vec![false; g.num_nodes()])
}

fn path_nodes(mut j: u32, parent: &[u32]) -> Vec<u32> {
    let mut path = vec![j];
    while parent[j as usize] != u32::MAX {
        j = parent[j as usize];
        path.push(j);
    }
    path.reverse();
    path
}

/// Longest path over the subgraph of nodes not marked `removed`.
pub fn longest_path_excluding(g: &LinkGraph, removed: &[bool]) -> PathResult {
    let n = g.num_nodes();
    assert_eq!(removed.len(), n);
    let mut best_score = vec![f64::NEG_INFINITY; n];
    let mut best_start = vec![usize::MAX; n];
    let mut best_count = vec![0u32; n];
    let mut parent = vec![u32::MAX; n];

    // Candidate at `j` beats the incumbent? Full tie needs the path walk.
    let lex_smaller = |cand_pred: u32, j: u32, parent: &[u32]| -> bool {
        let mut cand = path_nodes(cand_pred, parent);
        cand.push(j);
        cand < path_nodes(j, parent)
    };

    for j in 0..n {
        if !removed[j] {
            best_score[j] = g.detections[j].score;
            best_start[j] = g.detections[j].frame;
            best_count[j] = 1;
        }
    }
    for i in 0..n {
        if removed[i] || best_score[i] == f64::NEG_INFINITY {
            continue;
        }
        for &(j, w) in &g.edges[i] {
            let j = j as usize;
            if removed[j] {
                continue;
            }
            let cand = best_score[i] + w;
            let take = if cand != best_score[j] {
                cand > best_score[j]
            } else if best_start[i] != best_start[j] {
                best_start[i] < best_start[j]
            } else if best_count[i] + 1 != best_count[j] {
                best_count[i] + 1 > best_count[j]
            } else {
                lex_smaller(i as u32, j as u32, &parent)
            };
            if take {
                best_score[j] = cand;
                best_start[j] = best_start[i];
                best_count[j] = best_count[i] + 1;
                parent[j] = i as u32;
            }
        }
    }

    let mut end: Option<usize> = None;
    for j in 0..n {
        if removed[j] {
            continue;
        }
        let take = match end {
            None => true,
            Some(e) => {
                if best_score[j] != best_score[e] {
                    best_score[j] > best_score[e]
                } else if best_start[j] != best_start[e] {
                    best_start[j] < best_start[e]
                } else if best_count[j] != best_count[e] {
                    best_count[j] > best_count[e]
                } else {
                    path_nodes(j as u32, &parent) < path_nodes(e as u32, &parent)
                }
            }
        };
        if take {
            end = Some(j);
        }
    }
    match end {
        None => PathResult {
            nodes: Vec::new(),
            score: 0.0,
        },
        Some(e) => PathResult {
            nodes: path_nodes(e as u32, &parent).into_iter().map(|v| v as usize).collect(),
            score: best_score[e],
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxProvenance {
    Detected,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TubeBox {
    pub bbox: BoundingBox,
    pub provenance: BoxProvenance,
}

/// A per-frame box sequence for one object over a contiguous frame interval.
/// Before interpolation the interior may contain gaps (`None`); the first and
/// last frames always hold detected boxes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tube {
    pub category: String,
    pub start_frame: usize,
    pub boxes: Vec<Option<TubeBox>>,
    pub path_score: f64,
}

impl Tube {
    /// Exclusive end frame.
    pub fn end_frame(&self) -> usize {
        self.start_frame + self.boxes.len()
    }

    pub fn num_frames(&self) -> usize {
        self.boxes.len()
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start_frame..self.end_frame()
    }

    pub fn box_at(&self, frame: usize) -> Option<&TubeBox> {
        if frame < self.start_frame || frame >= self.end_frame() {
            return None;
        }
        self.boxes[frame - self.start_frame].as_ref()
    }

    pub fn is_dense(&self) -> bool {
        self.boxes.iter().all(Option::is_some)
    }

    fn from_path(g: &LinkGraph, path: &[usize], score: f64) -> Tube {
        let first = &g.detections[path[0]];
        let last = &g.detections[*path.last().unwrap()];
        let start = first.frame;
        let mut boxes = vec![None; last.frame - start + 1];
        for &i in path {
            let d = &g.detections[i];
            boxes[d.frame - start] = Some(TubeBox {
                bbox: d.bbox,
                provenance: BoxProvenance::Detected,
            });
        }
        Tube {
            category: first.category.clone(),
            start_frame: start,
            boxes,
            path_score: score,
        }
    }
}

/// Repeatedly extracts the longest path, converts it to a (sparse) tube and
/// removes its detections, until the path score drops below `tau_tube` or
/// `max_tubes` is reached. The result is ordered by descending path score.
pub fn extract_tubes(g: &LinkGraph, tau_tube: f64, max_tubes: usize) -> Vec<Tube> {
    assert!(tau_tube >= 0.0);
    let mut removed = vec![false; g.num_nodes()];
    let mut tubes = Vec::new();
    while tubes.len() < max_tubes {
        let path = longest_path_excluding(g, &removed);
        if path.nodes.is_empty() || path.score < tau_tube {
            break;
        }
        for &i in &path.nodes {
            removed[i] = true;
        }
        tubes.push(Tube::from_path(g, &path.nodes, path.score));
    }
    tubes
}

fn track_box(bbox: &BoundingBox, from: &Image, to: &Image, cfg: &SimilarityConfig) -> Result<BoundingBox> {
    let (cx, cy) = bbox.center();
    let (px, py) = propagate_box_center(bbox, from, to, cfg)?;
    Ok(bbox.translated((px - cx).round() as i32, (py - cy).round() as i32))
}

fn blended_box(f: &BoundingBox, b: &BoundingBox, w: f64, width: usize, height: usize) -> BoundingBox {
    let (fx, fy) = f.center();
    let (bx, by) = b.center();
    let cx = (1.0 - w) * fx + w * bx;
    let cy = (1.0 - w) * fy + w * by;
    let bw = ((1.0 - w) * f.width() as f64 + w * b.width() as f64).round().max(1.0) as i32;
    let bh = ((1.0 - w) * f.height() as f64 + w * b.height() as f64).round().max(1.0) as i32;
    let x_min = (cx - bw as f64 / 2.0).round() as i32;
    let y_min = (cy - bh as f64 / 2.0).round() as i32;
    let raw = BoundingBox::new(x_min, y_min, x_min + bw, y_min + bh).expect("positive blended extent");
    raw.shifted_into(width, height).unwrap_or(raw)
}

/// Fills every gap so the tube has one box per frame. Single-frame gaps are
/// tracked forward by correlating the previous box; longer gaps are tracked
/// from both ends and the two placements are blended by temporal fraction.
/// Detected boxes are never modified.
pub fn interpolate_tube(tube: &Tube, images: &[Image], cfg: &SimilarityConfig) -> Result<Tube> {
    let mut out = tube.clone();
    if tube.end_frame() > images.len() {
        return Err(crate::Error::Frame {
            frame: tube.end_frame() - 1,
            message: format!("tube extends beyond the {} available frames", images.len()),
        });
    }
    let detected: Vec<usize> = tube
        .frames()
        .filter(|&f| tube.box_at(f).is_some())
        .collect();
    for pair in detected.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        if r == l + 1 {
            continue;
        }
        if r == l + 2 {
            let g = l + 1;
            let prev = out.box_at(l).unwrap().bbox;
            let tracked = track_box(&prev, &images[l], &images[g], cfg)?;
            out.boxes[g - out.start_frame] = Some(TubeBox {
                bbox: tracked,
                provenance: BoxProvenance::Interpolated,
            });
            continue;
        }
        let mut forward = Vec::with_capacity(r - l - 1);
        let mut cur = out.box_at(l).unwrap().bbox;
        for f in (l + 1)..r {
            cur = track_box(&cur, &images[f - 1], &images[f], cfg)?;
            forward.push(cur);
        }
        let mut backward = vec![cur; r - l - 1];
        cur = out.box_at(r).unwrap().bbox;
        for f in ((l + 1)..r).rev() {
            cur = track_box(&cur, &images[f + 1], &images[f], cfg)?;
            backward[f - l - 1] = cur;
        }
        let (w_img, h_img) = (images[0].width(), images[0].height());
        for f in (l + 1)..r {
            let w = (f - l) as f64 / (r - l) as f64;
            let bbox = blended_box(&forward[f - l - 1], &backward[f - l - 1], w, w_img, h_img);
            out.boxes[f - out.start_frame] = Some(TubeBox {
                bbox,
                provenance: BoxProvenance::Interpolated,
            });
        }
    }
    Ok(out)
}

/// Volumetric IoU of two dense tubes: intersection areas summed over shared
/// frames, divided by union areas summed over the union of frames (frames
/// covered by a single tube contribute that tube's box area).
pub fn volumetric_iou(a: &Tube, b: &Tube) -> f64 {
    let start = a.start_frame.min(b.start_frame);
    let end = a.end_frame().max(b.end_frame());
    let mut inter = 0u64;
    let mut union = 0u64;
    for f in start..end {
        match (a.box_at(f), b.box_at(f)) {
            (Some(ba), Some(bb)) => {
                inter += ba.bbox.intersection_area(&bb.bbox);
                union += ba.bbox.union_area(&bb.bbox);
            }
            (Some(ba), None) => union += ba.bbox.area(),
            (None, Some(bb)) => union += bb.bbox.area(),
            (None, None) => {}
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Volumetric non-maximum suppression: same-class tube pairs with volumetric
/// IoU strictly above 0.5 are suppressed by the longer tube, length ties by
/// the higher path score. Idempotent.
pub fn tube_nms(tubes: &[Tube]) -> Vec<Tube> {
    let mut order: Vec<usize> = (0..tubes.len()).collect();
    order.sort_by(|&a, &b| {
        tubes[b]
            .num_frames()
            .cmp(&tubes[a].num_frames())
            .then(tubes[b].path_score.total_cmp(&tubes[a].path_score))
            .then(tubes[a].start_frame.cmp(&tubes[b].start_frame))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            tubes[k].category == tubes[i].category && volumetric_iou(&tubes[k], &tubes[i]) > 0.5
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| tubes[i].clone()).collect()
}
