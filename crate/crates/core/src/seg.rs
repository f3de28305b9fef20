//! Spatio-temporal superpixel graph, unary/pairwise energy assembly, labeling
//! solvers (alpha-expansion, ICM, exhaustive search), and tube merging via
//! location-prior correlation.

use std::collections::HashMap;

use crate::foreground::AppearanceModels;
use crate::maxflow::{solve_binary_submodular, EdgeCosts};
use crate::model::{FlowField, Image};
use crate::motion::PixelMask;
use crate::tube::{BoxProvenance, Tube, TubeBox};
use crate::{Error, Result};

/// Floor for mean location priors before the negative log.
pub const PRIOR_FLOOR: f64 = 1e-4;

/// Per-frame superpixel id map (ids are local to the frame).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Misaligned {
                what: format!("{width}x{height} label buffer"),
                expected: width * height,
                actual: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// One superpixel node of the video graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Superpixel {
    /// Global node index.
    pub id: usize,
    pub frame: usize,
    pub pixels: Vec<(u32, u32)>,
    pub centroid: (f64, f64),
    pub mean_color: [f64; 3],
    pub area: usize,
}

/// Edge-weight constants of the superpixel graph.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphWeights {
    /// Color scale of the spatial similarity kernel.
    pub sigma_color: f64,
    pub spatial_weight: f64,
    pub temporal_weight: f64,
}

impl Default for GraphWeights {
    fn default() -> Self {
        Self {
            sigma_color: 30.0,
            spatial_weight: 1.0,
            temporal_weight: 2.0,
        }
    }
}

/// Superpixel nodes over all frames with weighted spatial edges (same frame)
/// and temporal edges (consecutive frames, flow-connected).
#[derive(Debug, Clone)]
pub struct SuperpixelVideoGraph {
    pub nodes: Vec<Superpixel>,
    pub spatial_edges: Vec<(u32, u32, f64)>,
    pub temporal_edges: Vec<(u32, u32, f64)>,
}

impl SuperpixelVideoGraph {
    pub fn from_parts(
        nodes: Vec<Superpixel>,
        spatial_edges: Vec<(u32, u32, f64)>,
        temporal_edges: Vec<(u32, u32, f64)>,
    ) -> Self {
        debug_assert!(spatial_edges
            .iter()
            .all(|&(a, b, w)| w >= 0.0 && nodes[a as usize].frame == nodes[b as usize].frame));
        debug_assert!(temporal_edges
            .iter()
            .all(|&(a, b, w)| w >= 0.0 && nodes[b as usize].frame == nodes[a as usize].frame + 1));
        Self {
            nodes,
            spatial_edges,
            temporal_edges,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn weighted_edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.spatial_edges
            .iter()
            .chain(self.temporal_edges.iter())
            .map(|&(a, b, w)| (a as usize, b as usize, w))
    }

    /// Undirected adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (a, b, w) in self.weighted_edges() {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        adj
    }
}

/// Builds the graph from per-frame superpixel label maps. Spatial weights are
/// proportional to color similarity scaled by shared boundary length;
/// temporal weights are the fraction of flow-matched pixels.
pub fn build_superpixel_graph(
    label_maps: &[LabelMap],
    images: &[Image],
    flows: &[FlowField],
    weights: &GraphWeights,
) -> Result<SuperpixelVideoGraph> {
    if label_maps.len() != images.len() {
        return Err(Error::Misaligned {
            what: "superpixel label maps".into(),
            expected: images.len(),
            actual: label_maps.len(),
        });
    }
    if images.len() > 1 && flows.len() + 1 != images.len() {
        return Err(Error::Misaligned {
            what: "flow fields".into(),
            expected: images.len() - 1,
            actual: flows.len(),
        });
    }
    for (f, (map, img)) in label_maps.iter().zip(images).enumerate() {
        if (map.width(), map.height()) != (img.width(), img.height()) {
            return Err(Error::Frame {
                frame: f,
                message: format!(
                    "label map {}x{} does not match image {}x{}",
                    map.width(),
                    map.height(),
                    img.width(),
                    img.height()
                ),
            });
        }
    }

    let mut nodes: Vec<Superpixel> = Vec::new();
    // Per frame: local label -> global node id.
    let mut frame_index: Vec<HashMap<u32, usize>> = Vec::with_capacity(label_maps.len());
    for (f, (map, img)) in label_maps.iter().zip(images).enumerate() {
        let mut local: HashMap<u32, usize> = HashMap::new();
        for y in 0..map.height() {
            for x in 0..map.width() {
                let l = map.get(x, y);
                let id = *local.entry(l).or_insert_with(|| {
                    nodes.push(Superpixel {
                        id: nodes.len(),
                        frame: f,
                        pixels: Vec::new(),
                        centroid: (0.0, 0.0),
                        mean_color: [0.0; 3],
                        area: 0,
                    });
                    nodes.len() - 1
                });
                let node = &mut nodes[id];
                node.pixels.push((x as u32, y as u32));
                node.centroid.0 += x as f64;
                node.centroid.1 += y as f64;
                let c = img.rgb_f64(x, y);
                for (m, v) in node.mean_color.iter_mut().zip(&c) {
                    *m += v;
                }
                node.area += 1;
            }
        }
        frame_index.push(local);
    }
    for node in &mut nodes {
        let a = node.area as f64;
        node.centroid.0 /= a;
        node.centroid.1 /= a;
        for m in &mut node.mean_color {
            *m /= a;
        }
    }

    // Spatial edges: shared 4-neighbor boundary length per superpixel pair.
    let mut spatial_edges = Vec::new();
    for (f, map) in label_maps.iter().enumerate() {
        let mut boundary: HashMap<(usize, usize), u64> = HashMap::new();
        for y in 0..map.height() {
            for x in 0..map.width() {
                let l = map.get(x, y);
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx >= map.width() || ny >= map.height() {
                        continue;
                    }
                    let ln = map.get(nx, ny);
                    if l != ln {
                        let a = frame_index[f][&l];
                        let b = frame_index[f][&ln];
                        *boundary.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut pairs: Vec<((usize, usize), u64)> = boundary.into_iter().collect();
        pairs.sort_unstable();
        for ((a, b), len) in pairs {
            let dc = sq_color_dist(nodes[a].mean_color, nodes[b].mean_color);
            let w = weights.spatial_weight
                * (-dc / (2.0 * weights.sigma_color * weights.sigma_color)).exp()
                * len as f64;
            spatial_edges.push((a as u32, b as u32, w));
        }
    }

    // Temporal edges: pixels of v1 whose rounded flow target lands in v2.
    let mut temporal_edges = Vec::new();
    for f in 0..label_maps.len().saturating_sub(1) {
        let mut matches: HashMap<(usize, usize), u64> = HashMap::new();
        let map_next = &label_maps[f + 1];
        for y in 0..label_maps[f].height() {
            for x in 0..label_maps[f].width() {
                if let Some((tx, ty)) = flows[f].rounded_target(x as i32, y as i32) {
                    let a = frame_index[f][&label_maps[f].get(x, y)];
                    let b = frame_index[f + 1][&map_next.get(tx as usize, ty as usize)];
                    *matches.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
        let mut pairs: Vec<((usize, usize), u64)> = matches.into_iter().collect();
        pairs.sort_unstable();
        for ((a, b), count) in pairs {
            let w = weights.temporal_weight * count as f64 / nodes[a].area as f64;
            temporal_edges.push((a as u32, b as u32, w));
        }
    }

    Ok(SuperpixelVideoGraph {
        nodes,
        spatial_edges,
        temporal_edges,
    })
}

fn sq_color_dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
}

/// Per-node, per-label costs; label 0 is the background.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryTable {
    num_labels: usize,
    costs: Vec<f64>,
}

impl UnaryTable {
    pub fn from_costs(num_labels: usize, costs: Vec<f64>) -> Self {
        assert!(num_labels >= 1);
        assert_eq!(costs.len() % num_labels, 0);
        debug_assert!(costs.iter().all(|c| c.is_finite() && *c >= 0.0));
        Self { num_labels, costs }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_nodes(&self) -> usize {
        self.costs.len() / self.num_labels
    }

    #[inline]
    pub fn cost(&self, node: usize, label: u32) -> f64 {
        self.costs[node * self.num_labels + label as usize]
    }
}

/// Assembles the unary table from location priors and appearance models: the
/// negative log of the floored mean prior plus the negative mean appearance
/// log-density, shifted per node so the best appearance label costs zero.
pub fn unary_potentials(
    graph: &SuperpixelVideoGraph,
    priors: &[Vec<PixelMask>],
    models: &AppearanceModels,
    images: &[Image],
) -> Result<UnaryTable> {
    let k = priors.len();
    if models.objects.len() != k {
        return Err(Error::MissingModel(models.objects.len().min(k) + 1));
    }
    for (i, seq) in priors.iter().enumerate() {
        if seq.len() != images.len() {
            return Err(Error::Misaligned {
                what: format!("location prior of object {}", i + 1),
                expected: images.len(),
                actual: seq.len(),
            });
        }
    }
    let num_labels = k + 1;
    let mut costs = vec![0.0; graph.num_nodes() * num_labels];
    for node in &graph.nodes {
        let f = node.frame;
        let img = &images[f];
        let inv_area = 1.0 / node.area as f64;

        let mut mean_prior = vec![0.0; num_labels];
        let mut mean_app = vec![0.0; num_labels];
        for &(x, y) in &node.pixels {
            let (x, y) = (x as usize, y as usize);
            let px = img.rgb_f64(x, y);
            let mut max_obj = 0.0f64;
            for (i, seq) in priors.iter().enumerate() {
                let p = seq[f].get(x, y);
                mean_prior[i + 1] += p;
                max_obj = max_obj.max(p);
                mean_app[i + 1] += models.objects[i].score(px);
            }
            mean_prior[0] += 1.0 - max_obj;
            mean_app[0] += models.background.score(px);
        }
        for v in mean_prior.iter_mut().chain(mean_app.iter_mut()) {
            *v *= inv_area;
        }
        let max_app = mean_app.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for l in 0..num_labels {
            let l_term = -(mean_prior[l].max(PRIOR_FLOOR)).ln();
            let a_term = max_app - mean_app[l];
            costs[node.id * num_labels + l] = l_term + a_term;
        }
    }
    Ok(UnaryTable::from_costs(num_labels, costs))
}

/// A label per node, in `0..=K` with 0 = background.
pub type Labeling = Vec<u32>;

/// Total energy: selected unaries plus edge weights over label disagreements.
pub fn potts_energy(graph: &SuperpixelVideoGraph, unary: &UnaryTable, labeling: &Labeling) -> f64 {
    assert_eq!(labeling.len(), graph.num_nodes());
    let mut e = 0.0;
    for v in 0..graph.num_nodes() {
        debug_assert!((labeling[v] as usize) < unary.num_labels());
        e += unary.cost(v, labeling[v]);
    }
    for (a, b, w) in graph.weighted_edges() {
        if labeling[a] != labeling[b] {
            e += w;
        }
    }
    e
}

/// Exact minimizer by exhaustive enumeration; ties resolve to the
/// lexicographically smallest labeling. Bounded at 2^24 labelings.
pub fn solve_bruteforce(graph: &SuperpixelVideoGraph, unary: &UnaryTable) -> Result<Labeling> {
    let n = graph.num_nodes();
    let k = unary.num_labels() as u128;
    let mut total: u128 = 1;
    for _ in 0..n {
        total = total.saturating_mul(k);
        if total > (1 << 24) {
            return Err(Error::InstanceTooLarge { labelings: total });
        }
    }
    let mut current: Labeling = vec![0; n];
    let mut best = current.clone();
    let mut best_energy = potts_energy(graph, unary, &current);
    loop {
        // Lexicographic increment; index 0 is the most significant digit.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            if current[pos] + 1 < unary.num_labels() as u32 {
                current[pos] += 1;
                for l in &mut current[pos + 1..] {
                    *l = 0;
                }
                break;
            }
        }
        let e = potts_energy(graph, unary, &current);
        if e < best_energy {
            best_energy = e;
            best = current.clone();
        }
    }
}

/// Iterated conditional modes: coordinate descent in node-id order until no
/// node changes. Every move strictly decreases the energy.
pub fn solve_icm(graph: &SuperpixelVideoGraph, unary: &UnaryTable, init: &Labeling) -> Labeling {
    assert_eq!(init.len(), graph.num_nodes());
    let adj = graph.adjacency();
    let mut labels = init.clone();
    let local = |labels: &Labeling, v: usize, l: u32| -> f64 {
        let mut c = unary.cost(v, l);
        for &(u, w) in &adj[v] {
            if labels[u] != l {
                c += w;
            }
        }
        c
    };
    loop {
        let mut changed = false;
        for v in 0..graph.num_nodes() {
            let mut best_l = labels[v];
            let mut best_c = local(&labels, v, labels[v]);
            for l in 0..unary.num_labels() as u32 {
                let c = local(&labels, v, l);
                if c < best_c - 1e-12 {
                    best_c = c;
                    best_l = l;
                }
            }
            if best_l != labels[v] {
                labels[v] = best_l;
                changed = true;
            }
        }
        if !changed {
            return labels;
        }
    }
}

/// Alpha-expansion: cycles over labels, solving each expansion as a binary
/// min-cut; a move is kept only when it strictly lowers the energy. Stops
/// after a full cycle without improvement. For the Potts pairwise term the
/// result is within a factor two of the optimum, and exact for two labels.
pub fn solve_alpha_expansion(
    graph: &SuperpixelVideoGraph,
    unary: &UnaryTable,
    init: &Labeling,
) -> Labeling {
    assert_eq!(init.len(), graph.num_nodes());
    let n = graph.num_nodes();
    let edges: Vec<(usize, usize, f64)> = graph.weighted_edges().collect();
    let mut labels = init.clone();
    let mut energy = potts_energy(graph, unary, &labels);
    loop {
        let mut improved = false;
        for alpha in 0..unary.num_labels() as u32 {
            let mut free_index = vec![usize::MAX; n];
            let mut free = Vec::new();
            for v in 0..n {
                if labels[v] != alpha {
                    free_index[v] = free.len();
                    free.push(v);
                }
            }
            if free.is_empty() {
                continue;
            }
            // x = 0 keeps the current label, x = 1 switches to alpha.
            let mut bin_unary: Vec<[f64; 2]> = free
                .iter()
                .map(|&v| [unary.cost(v, labels[v]), unary.cost(v, alpha)])
                .collect();
            let mut bin_edges: Vec<(usize, usize, EdgeCosts)> = Vec::new();
            for &(p, q, w) in &edges {
                match (free_index[p], free_index[q]) {
                    (usize::MAX, usize::MAX) => {}
                    (fp, usize::MAX) => bin_unary[fp][0] += w,
                    (usize::MAX, fq) => bin_unary[fq][0] += w,
                    (fp, fq) => {
                        let keep_both = if labels[p] != labels[q] { w } else { 0.0 };
                        bin_edges.push((fp, fq, [[keep_both, w], [w, 0.0]]));
                    }
                }
            }
            let x = solve_binary_submodular(&bin_unary, &bin_edges);
            let mut candidate = labels.clone();
            for (fi, &v) in free.iter().enumerate() {
                if x[fi] == 1 {
                    candidate[v] = alpha;
                }
            }
            let cand_energy = potts_energy(graph, unary, &candidate);
            if cand_energy < energy - 1e-12 {
                labels = candidate;
                energy = cand_energy;
                improved = true;
            }
        }
        if !improved {
            return labels;
        }
    }
}

/// Renders a labeling back to per-frame, per-pixel label maps
/// (0 = background, `i` = object `i`).
pub fn labeling_to_maps(
    graph: &SuperpixelVideoGraph,
    labeling: &Labeling,
    width: usize,
    height: usize,
    num_frames: usize,
) -> Vec<LabelMap> {
    let mut maps = vec![LabelMap::new(width, height); num_frames];
    for node in &graph.nodes {
        let l = labeling[node.id];
        for &(x, y) in &node.pixels {
            maps[node.frame].set(x as usize, y as usize, l);
        }
    }
    maps
}

/// Cosine correlation of two location priors over the overlapping frames of
/// their tubes; 0 when the tubes do not overlap or a prior is empty there.
pub fn prior_correlation(a: &Tube, pa: &[PixelMask], b: &Tube, pb: &[PixelMask]) -> f64 {
    let start = a.start_frame.max(b.start_frame);
    let end = a.end_frame().min(b.end_frame());
    if start >= end {
        return 0.0;
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for f in start..end {
        for (va, vb) in pa[f].values().iter().zip(pb[f].values()) {
            dot += va * vb;
            na += va * va;
            nb += vb * vb;
        }
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn fuse_component(
    members: &[usize],
    tubes: &[Tube],
    priors: &[Vec<PixelMask>],
) -> (Tube, Vec<PixelMask>) {
    let start = members.iter().map(|&i| tubes[i].start_frame).min().unwrap();
    let end = members.iter().map(|&i| tubes[i].end_frame()).max().unwrap();
    let mut boxes: Vec<Option<TubeBox>> = vec![None; end - start];
    for f in start..end {
        let mut acc: Option<TubeBox> = None;
        for &i in members {
            if let Some(tb) = tubes[i].box_at(f) {
                acc = Some(match acc {
                    None => tb.clone(),
                    Some(prev) => TubeBox {
                        bbox: prev.bbox.hull(&tb.bbox),
                        provenance: if prev.provenance == BoxProvenance::Detected
                            || tb.provenance == BoxProvenance::Detected
                        {
                            BoxProvenance::Detected
                        } else {
                            BoxProvenance::Interpolated
                        },
                    },
                });
            }
        }
        boxes[f - start] = acc;
    }
    let tube = Tube {
        category: tubes[members[0]].category.clone(),
        start_frame: start,
        boxes,
        path_score: members.iter().map(|&i| tubes[i].path_score).sum(),
    };
    let frames = priors[members[0]].len();
    let mut merged_prior = priors[members[0]].clone();
    for &i in &members[1..] {
        for f in 0..frames {
            merged_prior[f] = merged_prior[f].max(&priors[i][f]);
        }
    }
    (tube, merged_prior)
}

/// Fuses same-class tubes whose location priors correlate at or above 0.5,
/// transitively via connected components, iterated to a fixpoint so the
/// operation is idempotent. Returns the merged tubes with their priors.
pub fn merge_tubes(tubes: &[Tube], priors: &[Vec<PixelMask>]) -> (Vec<Tube>, Vec<Vec<PixelMask>>) {
    assert_eq!(tubes.len(), priors.len());
    let mut cur_tubes: Vec<Tube> = tubes.to_vec();
    let mut cur_priors: Vec<Vec<PixelMask>> = priors.to_vec();
    loop {
        let n = cur_tubes.len();
        let mut uf = UnionFind::new(n);
        let mut any = false;
        for i in 0..n {
            for j in (i + 1)..n {
                if cur_tubes[i].category == cur_tubes[j].category
                    && prior_correlation(
                        &cur_tubes[i],
                        &cur_priors[i],
                        &cur_tubes[j],
                        &cur_priors[j],
                    ) >= 0.5
                {
                    uf.union(i, j);
                    any = true;
                }
            }
        }
        if !any {
            return (cur_tubes, cur_priors);
        }
        // Components keyed by their smallest member, in index order.
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut slot_of: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let r = uf.find(i);
            match slot_of.get(&r) {
                Some(&c) => components[c].push(i),
                None => {
                    slot_of.insert(r, components.len());
                    components.push(vec![i]);
                }
            }
        }
        let mut next_tubes = Vec::with_capacity(components.len());
        let mut next_priors = Vec::with_capacity(components.len());
        for members in components {
            if members.len() == 1 {
                next_tubes.push(cur_tubes[members[0]].clone());
                next_priors.push(cur_priors[members[0]].clone());
            } else {
                let (t, p) = fuse_component(&members, &cur_tubes, &cur_priors);
                next_tubes.push(t);
                next_priors.push(p);
            }
        }
        cur_tubes = next_tubes;
        cur_priors = next_priors;
    }
}
