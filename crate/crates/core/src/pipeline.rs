//! End-to-end orchestration: tube extraction, location priors, appearance
//! models, superpixel-graph energy minimization, and the per-stage timing
//! report.

use std::time::Instant;

use rayon::prelude::*;

use crate::foreground::{build_appearance_models, grabcut_box, GrabcutConfig};
use crate::model::{Detection, FlowField, Image};
use crate::motion::{
    inside_outside_map, motion_boundaries, propagate_prior, restrict_map, MotionPriorConfig,
    PixelMask,
};
use crate::seg::{
    build_superpixel_graph, labeling_to_maps, merge_tubes, solve_alpha_expansion,
    solve_bruteforce, solve_icm, unary_potentials, GraphWeights, LabelMap, Labeling,
    SuperpixelVideoGraph, UnaryTable,
};
use crate::similarity::{LinkContext, SimilarityConfig};
use crate::tube::{
    build_link_graph, extract_tubes, interpolate_tube, tube_nms, Tube, DEFAULT_LOOKAHEAD,
    DEFAULT_MAX_TUBES, DEFAULT_TUBE_SCORE_THRESHOLD,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Expansion,
    Icm,
    Brute,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expansion" => Ok(Self::Expansion),
            "icm" => Ok(Self::Icm),
            "brute" => Ok(Self::Brute),
            other => Err(Error::Format(format!(
                "unknown solver '{other}' (expected expansion, icm or brute)"
            ))),
        }
    }
}

/// All knobs of the pipeline; deserializable from a TOML config file.
/// Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// How many subsequent frames each detection connects to.
    pub lookahead: usize,
    /// Minimum path score for a tube to be kept.
    pub tube_score_threshold: f64,
    pub max_tubes: usize,
    pub solver: SolverKind,
    pub single_thread: bool,
    pub similarity: SimilarityConfig,
    pub motion: MotionPriorConfig,
    pub grabcut: GrabcutConfig,
    pub graph: GraphWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lookahead: DEFAULT_LOOKAHEAD,
            tube_score_threshold: DEFAULT_TUBE_SCORE_THRESHOLD,
            max_tubes: DEFAULT_MAX_TUBES,
            solver: SolverKind::Expansion,
            single_thread: false,
            similarity: SimilarityConfig::default(),
            motion: MotionPriorConfig::default(),
            grabcut: GrabcutConfig::default(),
            graph: GraphWeights::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead < 1 {
            return Err(Error::Format("lookahead must be at least 1".into()));
        }
        if self.tube_score_threshold < 0.0 {
            return Err(Error::Format("tube_score_threshold must be non-negative".into()));
        }
        self.similarity.validate()?;
        self.motion.validate()?;
        self.grabcut.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// GrabCut settings with the pipeline seed folded in.
    fn effective_grabcut(&self) -> GrabcutConfig {
        GrabcutConfig {
            seed: self.seed,
            ..self.grabcut.clone()
        }
    }
}

/// Frame-aligned pipeline inputs.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub images: Vec<Image>,
    pub flows: Vec<FlowField>,
    pub detections: Vec<Detection>,
    pub superpixels: Vec<LabelMap>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct StageReport {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

impl StageReport {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            name: name.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub tubes: Vec<Tube>,
    /// Per-frame pixel labels: 0 = background, i = tube i (1-based).
    pub label_maps: Vec<LabelMap>,
    pub report: StageReport,
}

fn validate_inputs(inputs: &PipelineInputs) -> Result<()> {
    let n = inputs.images.len();
    if n == 0 {
        return Err(Error::Format("no frames".into()));
    }
    if inputs.flows.len() + 1 != n && !(n == 1 && inputs.flows.is_empty()) {
        return Err(Error::Misaligned {
            what: "flow fields".into(),
            expected: n - 1,
            actual: inputs.flows.len(),
        });
    }
    if inputs.superpixels.len() != n {
        return Err(Error::Misaligned {
            what: "superpixel label maps".into(),
            expected: n,
            actual: inputs.superpixels.len(),
        });
    }
    let (w, h) = (inputs.images[0].width(), inputs.images[0].height());
    for (f, img) in inputs.images.iter().enumerate() {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::Frame {
                frame: f,
                message: format!(
                    "frame is {}x{}, expected {w}x{h}",
                    img.width(),
                    img.height()
                ),
            });
        }
    }
    for (f, flow) in inputs.flows.iter().enumerate() {
        if (flow.width(), flow.height()) != (w, h) {
            return Err(Error::Frame {
                frame: f,
                message: format!(
                    "flow field is {}x{}, expected {w}x{h}",
                    flow.width(),
                    flow.height()
                ),
            });
        }
    }
    for d in &inputs.detections {
        if d.frame >= n {
            return Err(Error::Frame {
                frame: d.frame,
                message: format!("detection beyond the {n} available frames"),
            });
        }
        if !d.bbox.within(w, h) {
            return Err(Error::Frame {
                frame: d.frame,
                message: "detection box outside the image".into(),
            });
        }
    }
    Ok(())
}

/// Tube stage only: link, extract, interpolate, suppress.
pub fn run_tube_stage(
    images: &[Image],
    flows: &[FlowField],
    detections: &[Detection],
    cfg: &PipelineConfig,
) -> Result<(Vec<Tube>, StageReport)> {
    cfg.validate()?;
    let mut report = StageReport::default();
    let total = Instant::now();
    let tubes = with_thread_mode(cfg.single_thread, || {
        tube_stage_inner(images, flows, detections, cfg, &mut report)
    })?;
    report.total_seconds = total.elapsed().as_secs_f64();
    Ok((tubes, report))
}

fn tube_stage_inner(
    images: &[Image],
    flows: &[FlowField],
    detections: &[Detection],
    cfg: &PipelineConfig,
    report: &mut StageReport,
) -> Result<Vec<Tube>> {
    let ctx = report.time("link_graph", || -> Result<_> {
        let ctx = LinkContext::new(images, flows, detections)?;
        let graph = build_link_graph(&ctx, &cfg.similarity, cfg.lookahead)?;
        Ok(graph)
    })?;
    let sparse = report.time("longest_paths", || {
        extract_tubes(&ctx, cfg.tube_score_threshold, cfg.max_tubes)
    });
    let dense = report.time("interpolate", || -> Result<Vec<Tube>> {
        sparse
            .iter()
            .map(|t| interpolate_tube(t, images, &cfg.similarity))
            .collect()
    })?;
    Ok(report.time("tube_nms", || tube_nms(&dense)))
}

fn with_thread_mode<T>(single_thread: bool, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    if single_thread {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("thread pool")
            .install(f)
    } else {
        f()
    }
}

/// Runs the full pipeline: tubes, motion and foreground evidence, location
/// priors, tube merging, appearance models, superpixel-graph energy
/// minimization, and label-map emission. Deterministic for a fixed
/// (inputs, config, seed) triple, in both thread modes.
pub fn run_pipeline(inputs: &PipelineInputs, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut report = StageReport::default();
    let total = Instant::now();
    let out = with_thread_mode(cfg.single_thread, || pipeline_inner(inputs, cfg, &mut report))?;
    let mut report = out.report;
    report.total_seconds = total.elapsed().as_secs_f64();
    Ok(PipelineOutput { report, ..out })
}

fn pipeline_inner(
    inputs: &PipelineInputs,
    cfg: &PipelineConfig,
    report: &mut StageReport,
) -> Result<PipelineOutput> {
    report.time("validate", || validate_inputs(inputs))?;
    let n_frames = inputs.images.len();
    let (w, h) = (inputs.images[0].width(), inputs.images[0].height());

    let tubes = tube_stage_inner(
        &inputs.images,
        &inputs.flows,
        &inputs.detections,
        cfg,
        report,
    )?;

    if tubes.is_empty() {
        // No objects: emit an all-background labeling.
        let label_maps = vec![LabelMap::new(w, h); n_frames];
        return Ok(PipelineOutput {
            tubes,
            label_maps,
            report: std::mem::take(report),
        });
    }

    // Inside-outside motion maps per frame (the last frame has no forward
    // flow and keeps an empty map).
    let motion_maps: Vec<PixelMask> = report.time("motion_maps", || {
        let mut maps: Vec<PixelMask> = inputs
            .flows
            .par_iter()
            .map(|flow| inside_outside_map(&motion_boundaries(flow, &cfg.motion), &cfg.motion))
            .collect();
        maps.push(PixelMask::zero(w, h));
        maps
    });

    // Per-tube evidence: restricted motion map united with the box foreground.
    let grabcut_cfg = cfg.effective_grabcut();
    let evidence: Vec<Vec<PixelMask>> = report.time("foreground", || -> Result<_> {
        tubes
            .par_iter()
            .map(|tube| {
                let mut per_frame = vec![PixelMask::zero(w, h); n_frames];
                for f in tube.frames() {
                    let Some(tb) = tube.box_at(f) else { continue };
                    let restricted = restrict_map(&motion_maps[f], &tb.bbox);
                    let fg = grabcut_box(&inputs.images[f], &tb.bbox, &grabcut_cfg)?;
                    per_frame[f] = restricted.max(&fg);
                }
                Ok(per_frame)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let priors: Vec<Vec<PixelMask>> = report.time("location_priors", || -> Result<_> {
        tubes
            .par_iter()
            .zip(&evidence)
            .map(|(tube, ev)| {
                propagate_prior(
                    ev,
                    &inputs.flows,
                    (tube.start_frame, tube.end_frame()),
                    &cfg.motion,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let (tubes, priors) = report.time("merge_tubes", || merge_tubes(&tubes, &priors));
    if tubes.len() > 255 {
        return Err(Error::Format(format!(
            "{} tubes exceed the 8-bit label budget",
            tubes.len()
        )));
    }

    let models = report.time("appearance_models", || {
        let tube_boxes: Vec<Vec<Option<crate::model::BoundingBox>>> = tubes
            .iter()
            .map(|t| {
                (0..n_frames)
                    .map(|f| t.box_at(f).map(|tb| tb.bbox))
                    .collect()
            })
            .collect();
        build_appearance_models(
            &priors,
            &inputs.images,
            &tube_boxes,
            cfg.grabcut.gmm_components,
            cfg.seed,
        )
    })?;

    let graph: SuperpixelVideoGraph = report.time("superpixel_graph", || {
        build_superpixel_graph(&inputs.superpixels, &inputs.images, &inputs.flows, &cfg.graph)
    })?;

    let unary: UnaryTable = report.time("unary_potentials", || {
        unary_potentials(&graph, &priors, &models, &inputs.images)
    })?;

    let labeling: Labeling = report.time("solve", || -> Result<Labeling> {
        let init: Labeling = (0..graph.num_nodes())
            .map(|v| {
                (0..unary.num_labels() as u32)
                    .min_by(|&a, &b| unary.cost(v, a).total_cmp(&unary.cost(v, b)))
                    .unwrap()
            })
            .collect();
        match cfg.solver {
            SolverKind::Expansion => Ok(solve_alpha_expansion(&graph, &unary, &init)),
            SolverKind::Icm => Ok(solve_icm(&graph, &unary, &init)),
            SolverKind::Brute => solve_bruteforce(&graph, &unary),
        }
    })?;

    let label_maps = report.time("emit", || {
        labeling_to_maps(&graph, &labeling, w, h, n_frames)
    });

    Ok(PipelineOutput {
        tubes,
        label_maps,
        report: std::mem::take(report),
    })
}
