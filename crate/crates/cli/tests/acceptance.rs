//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test -p tubeseg-cli --test acceptance -- --nocapture`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubeseg::eval::{eval_fmeasure, eval_iou, label_maps_to_object_masks, tube_box_iou, MaskSequence};
use tubeseg::foreground::{fit_gmm_with_trace, grabcut_box, grabcut_box_traced, GrabcutConfig};
use tubeseg::model::{color_histogram, iou, BoundingBox, Detection, FlowField, Image};
use tubeseg::motion::{inside_outside_map, motion_boundaries, restrict_map, MotionPriorConfig, PixelMask};
use tubeseg::pipeline::{run_pipeline, run_tube_stage, PipelineConfig, PipelineInputs};
use tubeseg::seg::{
    merge_tubes, potts_energy, solve_alpha_expansion, solve_bruteforce, solve_icm, Labeling,
    Superpixel, SuperpixelVideoGraph, UnaryTable,
};
use tubeseg::similarity::{
    composite_similarity, propagate_center, s_app, s_category, s_center, s_match, s_side, s_vol,
    LinkContext, Similarity, SimilarityConfig,
};
use tubeseg::synth::{grid_superpixels, presets, synthesize_scene, NoiseSpec, ObjectSpec, SceneSpec};
use tubeseg::tube::{
    longest_path, tube_nms, volumetric_iou, BoxProvenance, LinkGraph, Tube, TubeBox,
};

fn criterion(n: u32, name: &str, run: impl FnOnce() -> Result<String, String>) {
    match run() {
        Ok(detail) => println!("acceptance criterion {n} ({name}): PASS {detail}"),
        Err(msg) => {
            println!("acceptance criterion {n} ({name}): FAIL {msg}");
            panic!("criterion {n} ({name}) failed: {msg}");
        }
    }
}

fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn det(frame: usize, b: BoundingBox, score: f64, cat: &str) -> Detection {
    Detection::new(frame, b, score, cat).unwrap()
}

// --- criterion 1 -----------------------------------------------------------

fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize) -> LinkGraph {
    let n = rng.gen_range(0..=max_nodes);
    let mut dets = Vec::new();
    let mut frame = 0usize;
    for i in 0..n {
        frame += rng.gen_range(0..=2);
        let x0 = i as i32;
        dets.push(det(frame, bb(x0, 0, x0 + 4, 4), rng.gen_range(0.0..1.0), "c"));
        frame += usize::from(rng.gen_bool(0.5));
    }
    dets.sort_by_key(|d| d.frame);
    let mut edges = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            // Absent edges stand in for negative-infinity similarities.
            if dets[j].frame > dets[i].frame && rng.gen_bool(0.55) {
                edges[i].push((j as u32, rng.gen_range(0.0..1.0)));
            }
        }
    }
    LinkGraph::from_parts(dets, edges)
}

/// Independent oracle: enumerate every source-to-sink path.
fn exhaustive_best_score(g: &LinkGraph) -> f64 {
    fn extend(g: &LinkGraph, last: usize, score: f64, best: &mut f64) {
        *best = best.max(score);
        for &(j, w) in g.out_edges(last) {
            extend(g, j as usize, score + w, best);
        }
    }
    let mut best = 0.0f64;
    for i in 0..g.num_nodes() {
        extend(g, i, g.detections()[i].score, &mut best);
    }
    best
}

fn chain_graph(n: usize, lookahead: usize, rng: &mut ChaCha8Rng) -> LinkGraph {
    let dets: Vec<Detection> = (0..n)
        .map(|f| det(f, bb(0, 0, 4, 4), rng.gen_range(0.0..1.0), "c"))
        .collect();
    let edges: Vec<Vec<(u32, f64)>> = (0..n)
        .map(|i| {
            ((i + 1)..n.min(i + 1 + lookahead))
                .map(|j| (j as u32, rng.gen_range(0.0..1.0)))
                .collect()
        })
        .collect();
    LinkGraph::from_parts(dets, edges)
}

#[test]
fn criterion_1_longest_path_oracle_and_linear_runtime() {
    criterion(1, "longest-path oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for trial in 0..500 {
            let g = random_dag(&mut rng, 12);
            let dp = longest_path(&g);
            let brute = exhaustive_best_score(&g);
            if dp.score != brute {
                return Err(format!("trial {trial}: dp {} != brute {brute}", dp.score));
            }
        }

        let sizes = [1_000usize, 2_000, 4_000, 8_000, 16_000, 32_000, 64_000, 100_000];
        let mut points = Vec::new();
        for &n in &sizes {
            let g = chain_graph(n, 20, &mut rng);
            let mut best = f64::INFINITY;
            for _ in 0..5 {
                let start = Instant::now();
                let p = longest_path(&g);
                let dt = start.elapsed().as_secs_f64();
                assert!(p.score > 0.0);
                best = best.min(dt);
            }
            points.push((n as f64, best));
        }
        let n = points.len() as f64;
        let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
        let cov: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
        let var_x: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
        let slope = cov / var_x;
        let intercept = mean_y - slope * mean_x;
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
            .sum();
        let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        if r2 < 0.98 {
            return Err(format!("linear fit R^2 = {r2:.4} < 0.98 over {points:?}"));
        }
        Ok(format!("(500 DAGs exact; runtime R^2 = {r2:.4})"))
    });
}

// --- criterion 2 -----------------------------------------------------------

#[test]
fn criterion_2_similarity_unit_suite() {
    criterion(2, "similarity terms", || {
        let exact = 1e-9;
        let approx_tol = 1e-6;
        let check = |what: &str, got: f64, want: f64, tol: f64| -> Result<(), String> {
            if (got - want).abs() > tol {
                Err(format!("{what}: got {got}, want {want} (tol {tol})"))
            } else {
                Ok(())
            }
        };

        // Category (exact).
        let a = det(0, bb(0, 0, 10, 10), 0.9, "car");
        let b = det(1, bb(0, 0, 10, 10), 0.9, "car");
        let c = det(1, bb(0, 0, 10, 10), 0.9, "person");
        if s_category(&a, &b) != Similarity::Finite(1.0) || !s_category(&a, &c).is_neg_inf() {
            return Err("category term".into());
        }

        // Volume and side ratios (exact rational).
        check("vol equal", s_vol(&bb(0, 0, 10, 10), &bb(5, 5, 15, 15)), 1.0, exact)?;
        check("vol 1:2", s_vol(&bb(0, 0, 10, 10), &bb(0, 0, 20, 10)), 0.5, exact)?;
        check("vol 1:4", s_vol(&bb(0, 0, 10, 5), &bb(0, 0, 20, 10)), 0.25, exact)?;
        check("side equal", s_side(&bb(0, 0, 10, 10), &bb(0, 0, 10, 10)), 1.0, exact)?;
        check("side 1:2", s_side(&bb(0, 0, 10, 10), &bb(0, 0, 10, 20)), 0.5, exact)?;
        check("side min", s_side(&bb(0, 0, 8, 9), &bb(0, 0, 10, 10)), 0.8, exact)?;

        // Match term under zero and uniform flow (exact rational).
        let flows = vec![FlowField::zero(40, 40)];
        let p = det(0, bb(2, 2, 12, 12), 1.0, "c");
        let q = det(1, bb(2, 2, 12, 12), 1.0, "c");
        let r = det(1, bb(25, 25, 35, 35), 1.0, "c");
        check("match identity", s_match(&p, &q, &flows).unwrap(), 1.0, exact)?;
        check("match disjoint", s_match(&p, &r, &flows).unwrap(), 0.0, exact)?;
        let mut shifted = FlowField::zero(40, 40);
        for y in 0..40 {
            for x in 0..40 {
                shifted.set(x, y, 5.0, 0.0);
            }
        }
        let q5 = det(1, bb(7, 2, 17, 12), 1.0, "c");
        check("match shift", s_match(&p, &q5, &[shifted]).unwrap(), 1.0, exact)?;

        // Center term (exact rational).
        let cfg = SimilarityConfig::default();
        check("center zero", s_center((4.0, 4.0), (4.0, 4.0), &cfg), 1.0, exact)?;
        check("center ten", s_center((10.0, 0.0), (0.0, 0.0), &cfg), 0.5, exact)?;
        check("center ninety", s_center((90.0, 0.0), (0.0, 0.0), &cfg), 0.1, exact)?;

        // Appearance cosine (1e-6).
        let red = Image::new(12, 12, [250, 10, 10]);
        let blue = Image::new(12, 12, [10, 10, 250]);
        let box_full = bb(0, 0, 12, 12);
        let hr = color_histogram(&red, &box_full).unwrap();
        let hb = color_histogram(&blue, &box_full).unwrap();
        if s_app(&hr, &hr, &cfg).unwrap() != Similarity::Finite(1.0) {
            return Err("identical histograms must give cosine 1".into());
        }
        if !s_app(&hr, &hb, &cfg).unwrap().is_neg_inf() {
            return Err("orthogonal histograms must be distinct".into());
        }
        let mut mixed_a = Image::new(10, 10, [250, 10, 10]);
        let mut mixed_b = Image::new(10, 10, [250, 10, 10]);
        for x in 0..10 {
            mixed_a.set(x, 0, [10, 250, 10]);
            mixed_b.set(x, 0, [10, 10, 250]);
        }
        let ha = color_histogram(&mixed_a, &bb(0, 0, 10, 10)).unwrap();
        let hbx = color_histogram(&mixed_b, &bb(0, 0, 10, 10)).unwrap();
        let expect = 90.0 * 90.0 / (90.0f64 * 90.0 + 10.0 * 10.0);
        match s_app(&ha, &hbx, &cfg).unwrap() {
            Similarity::Finite(v) => check("app cosine", v, expect, approx_tol)?,
            Similarity::NegInf => return Err("expected finite cosine".into()),
        }

        // Correlation-propagated center on a quadratic texture (1e-6).
        let texture = |shift: (i32, i32)| -> Image {
            let mut img = Image::new(50, 44, [0, 0, 0]);
            for y in 0..44i32 {
                for x in 0..50i32 {
                    let sx = x - shift.0;
                    let sy = y - shift.1;
                    let v = (sx * sx * 3 + sy * sy * 7 + sx * sy).rem_euclid(97) as u8;
                    img.set(x as usize, y as usize, [v, 255 - v, v]);
                }
            }
            img
        };
        let ncc_cfg = SimilarityConfig {
            search_radius: 9,
            ..SimilarityConfig::default()
        };
        let src = texture((0, 0));
        let d0 = det(0, bb(16, 14, 30, 26), 1.0, "c");
        let (cx, cy) = d0.bbox.center();
        let static_c = propagate_center(&d0, &src, &src, &ncc_cfg).unwrap();
        check("ncc static x", static_c.0, cx, approx_tol)?;
        check("ncc static y", static_c.1, cy, approx_tol)?;
        let moved = texture((7, 3));
        let moved_c = propagate_center(&d0, &src, &moved, &ncc_cfg).unwrap();
        check("ncc moved x", moved_c.0, cx + 7.0, approx_tol)?;
        check("ncc moved y", moved_c.1, cy + 3.0, approx_tol)?;
        let flat = Image::new(50, 44, [99, 99, 99]);
        let flat_c = propagate_center(&d0, &flat, &flat, &ncc_cfg).unwrap();
        check("ncc uniform x", flat_c.0, cx, exact)?;
        check("ncc uniform y", flat_c.1, cy, exact)?;

        // Composite products (exact rational).
        let images = vec![Image::new(30, 30, [90, 90, 90]); 2];
        let zero_flow = vec![FlowField::zero(30, 30)];
        let pair = vec![
            det(0, bb(5, 5, 15, 15), 0.8, "car"),
            det(1, bb(5, 5, 15, 15), 0.7, "car"),
        ];
        let ctx = LinkContext::new(&images, &zero_flow, &pair).unwrap();
        let only_score = composite_similarity(&ctx, 0, 1, &SimilarityConfig::none()).unwrap();
        check("composite score-only", only_score.value.finite().unwrap(), 0.7, exact)?;
        let all = composite_similarity(&ctx, 0, 1, &SimilarityConfig::default()).unwrap();
        check("composite unit terms", all.value.finite().unwrap(), 0.7, exact)?;
        // Product arithmetic: score 1, vol 0.5, center 0.5, rest disabled.
        let half = Similarity::Finite(1.0)
            .product(Similarity::Finite(0.5))
            .product(Similarity::Finite(0.5));
        check("product arithmetic", half.finite().unwrap(), 0.25, exact)?;

        // 1000 random trials: any negative-infinity term absorbs.
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let cats = ["car", "person"];
        let colors = [[240u8, 20, 20], [20, 20, 240]];
        for trial in 0..1000 {
            let via_category = rng.gen_bool(0.5);
            let (cat_a, cat_b, col_a, col_b) = if via_category {
                ("car", "person", colors[0], colors[0])
            } else {
                let c = cats[rng.gen_range(0..2)];
                (c, c, colors[0], colors[1])
            };
            let images = vec![Image::new(20, 20, col_a), Image::new(20, 20, col_b)];
            let flows = vec![FlowField::zero(20, 20)];
            let x0 = rng.gen_range(0..8);
            let dets = vec![
                det(0, bb(x0, 2, x0 + rng.gen_range(4..10), 12), rng.gen(), cat_a),
                det(1, bb(3, 3, 13, 13), rng.gen(), cat_b),
            ];
            let ctx = LinkContext::new(&images, &flows, &dets).unwrap();
            let cfg = SimilarityConfig {
                search_radius: 3,
                ..SimilarityConfig::default()
            };
            let s = composite_similarity(&ctx, 0, 1, &cfg).unwrap();
            if !s.value.is_neg_inf() {
                return Err(format!("trial {trial}: expected absorbing negative infinity"));
            }
        }
        Ok("(all term examples within tolerance; 1000/1000 absorbing trials)".into())
    });
}

// --- criterion 3 -----------------------------------------------------------

fn synthetic_nodes(n: usize) -> Vec<Superpixel> {
    (0..n)
        .map(|id| Superpixel {
            id,
            frame: 0,
            pixels: vec![(id as u32, 0)],
            centroid: (id as f64, 0.0),
            mean_color: [0.0; 3],
            area: 1,
        })
        .collect()
}

#[test]
fn criterion_3_solver_hierarchy() {
    criterion(3, "solver hierarchy", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut binary_checked = 0;
        for trial in 0..300 {
            let k = rng.gen_range(1..=3usize); // labels 0..=k
            let max_nodes = match k {
                1 => 12,
                2 => 10,
                _ => 8,
            };
            let n = rng.gen_range(1..=max_nodes);
            let mut spatial = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.gen_bool(0.35) {
                        spatial.push((a as u32, b as u32, rng.gen_range(0.0..2.0)));
                    }
                }
            }
            let graph = SuperpixelVideoGraph::from_parts(synthetic_nodes(n), spatial, Vec::new());
            let labels = k + 1;
            let costs: Vec<f64> = (0..n * labels).map(|_| rng.gen_range(0.0..5.0)).collect();
            let unary = UnaryTable::from_costs(labels, costs);
            let init: Labeling = (0..n).map(|_| rng.gen_range(0..labels as u32)).collect();

            let e_init = potts_energy(&graph, &unary, &init);
            let e_icm = potts_energy(&graph, &unary, &solve_icm(&graph, &unary, &init));
            let expansion = solve_alpha_expansion(&graph, &unary, &init);
            let e_exp = potts_energy(&graph, &unary, &expansion);
            let e_opt = potts_energy(&graph, &unary, &solve_bruteforce(&graph, &unary).unwrap());

            if e_icm > e_init + 1e-9 {
                return Err(format!("trial {trial}: ICM {e_icm} > init {e_init}"));
            }
            if e_exp > e_icm + 1e-9 {
                return Err(format!("trial {trial}: expansion {e_exp} > ICM {e_icm}"));
            }
            if e_exp > 2.0 * e_opt + 1e-9 {
                return Err(format!("trial {trial}: expansion {e_exp} > 2x optimum {e_opt}"));
            }
            if e_opt > e_exp + 1e-9 {
                return Err(format!("trial {trial}: optimum {e_opt} above expansion {e_exp}"));
            }
            if k == 1 {
                binary_checked += 1;
                if (e_exp - e_opt).abs() > 1e-9 {
                    return Err(format!(
                        "trial {trial}: binary expansion {e_exp} != optimum {e_opt}"
                    ));
                }
            }
        }
        Ok(format!("(300 instances; {binary_checked} binary instances exact)"))
    });
}

// --- criterion 4 -----------------------------------------------------------

#[test]
fn criterion_4_grabcut_properties() {
    criterion(4, "EM and GrabCut", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for trial in 0..100 {
            let n = rng.gen_range(16..150);
            let samples: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(0.0..255.0),
                        rng.gen_range(0.0..255.0),
                        rng.gen_range(0.0..255.0),
                    ]
                })
                .collect();
            let k = rng.gen_range(1..=5);
            let (_, trace) = fit_gmm_with_trace(&samples, k, trial).unwrap();
            for w in trace.windows(2) {
                if w[1] < w[0] - 1e-7 {
                    return Err(format!("trial {trial}: log-likelihood fell {} -> {}", w[0], w[1]));
                }
            }
        }

        // Two-color box segmentation vs the color-threshold oracle.
        let object = bb(12, 10, 32, 26);
        let around = bb(8, 6, 36, 30);
        let mut img = Image::new(48, 40, [20, 30, 180]);
        for (x, y) in object.pixels() {
            img.set(x as usize, y as usize, [210, 40, 35]);
        }
        let mask = grabcut_box(&img, &around, &GrabcutConfig::default()).unwrap();
        let mut correct = 0usize;
        for y in 0..40 {
            for x in 0..48 {
                let oracle = img.get(x, y) == [210, 40, 35];
                if (mask.get(x, y) >= 0.5) == oracle {
                    correct += 1;
                }
            }
        }
        let accuracy = correct as f64 / (48.0 * 40.0);
        if accuracy < 0.99 {
            return Err(format!("two-color accuracy {accuracy:.4} < 0.99"));
        }

        // Energy trace is non-increasing on the structured scene.
        let (_, trace) = grabcut_box_traced(&img, &around, &GrabcutConfig::default()).unwrap();
        for w in trace.windows(2) {
            if w[1] > w[0] + 1e-9 {
                return Err(format!("grabcut energy rose {} -> {}", w[0], w[1]));
            }
        }

        // Uniform image: byte-exact initialization mask.
        let flat = Image::new(40, 40, [77, 77, 77]);
        let bbox = bb(10, 10, 30, 30);
        let cfg = GrabcutConfig::default();
        let got = grabcut_box(&flat, &bbox, &cfg).unwrap();
        // Independent initialization-geometry computation.
        let mx = (bbox.width() as f64 * cfg.shrink_margin).round() as i32;
        let my = (bbox.height() as f64 * cfg.shrink_margin).round() as i32;
        let seed_box = bb(
            bbox.x_min() + mx,
            bbox.y_min() + my,
            bbox.x_max() - mx,
            bbox.y_max() - my,
        );
        let mut expect = PixelMask::zero(40, 40);
        for (x, y) in seed_box.pixels() {
            expect.set(x as usize, y as usize, 1.0);
        }
        if got != expect {
            return Err("uniform-image fallback differs from the initialization mask".into());
        }
        Ok(format!("(100 monotone fits; two-color accuracy {accuracy:.4})"))
    });
}

// --- criterion 5 -----------------------------------------------------------

#[test]
fn criterion_5_inside_outside_restriction() {
    criterion(5, "inside-outside maps", || {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let cfg = MotionPriorConfig::default();
        let (w, h) = (100usize, 80usize);
        let mut worst: f64 = 1.0;
        for trial in 0..50 {
            let bw = rng.gen_range(8..40);
            let bh = rng.gen_range(8..30);
            let x0 = rng.gen_range(3..(w as i32 - bw - 3));
            let y0 = rng.gen_range(3..(h as i32 - bh - 3));
            let rect = bb(x0, y0, x0 + bw, y0 + bh);
            let (vx, vy) = loop {
                let v = (rng.gen_range(-4i32..=4), rng.gen_range(-4i32..=4));
                if v.0 * v.0 + v.1 * v.1 >= 9 {
                    break v;
                }
            };
            let mut flow = FlowField::zero(w, h);
            for (x, y) in rect.pixels() {
                flow.set(x as usize, y as usize, vx as f32, vy as f32);
            }
            let restricted = restrict_map(
                &inside_outside_map(&motion_boundaries(&flow, &cfg), &cfg),
                &rect,
            );
            let mut gt = PixelMask::zero(w, h);
            for (x, y) in rect.pixels() {
                gt.set(x as usize, y as usize, 1.0);
            }
            let score = restricted.iou(&gt);
            worst = worst.min(score);
            if score < 0.95 {
                return Err(format!(
                    "trial {trial}: rect {rect:?} velocity ({vx},{vy}) IoU {score:.4} < 0.95"
                ));
            }
        }
        Ok(format!("(50 rectangles; worst IoU {worst:.4})"))
    });
}

// --- criterion 6 -----------------------------------------------------------

fn fast_cfg() -> PipelineConfig {
    PipelineConfig {
        lookahead: 10,
        similarity: SimilarityConfig {
            search_radius: 6,
            ..SimilarityConfig::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn criterion_6_end_to_end_synthetic() {
    criterion(6, "end-to-end synthetic", || {
        // (a) single translating object, clean detections.
        let spec = presets::single(120, 90, 24, NoiseSpec::default(), 11);
        let scene = synthesize_scene(&spec);
        let inputs = PipelineInputs {
            images: scene.images.clone(),
            flows: scene.flows.clone(),
            detections: scene.detections.clone(),
            superpixels: (0..24).map(|_| grid_superpixels(120, 90, 2)).collect(),
        };
        let out = run_pipeline(&inputs, &fast_cfg()).map_err(|e| e.to_string())?;
        if out.tubes.len() != 1 {
            return Err(format!("expected one tube, got {}", out.tubes.len()));
        }
        let pred = label_maps_to_object_masks(&out.label_maps, 1);
        let gt: Vec<MaskSequence> =
            vec![scene.masks[0].iter().map(|m| Some(m.clone())).collect()];
        let seg_iou = eval_iou(&pred, &gt)
            .map_err(|e| e.to_string())?
            .average
            .ok_or("undefined IoU")?;
        if seg_iou < 0.9 {
            return Err(format!("single-object segmentation IoU {seg_iou:.4} < 0.9"));
        }

        // (b) two same-category objects of distinct colors crossing paths:
        // no tube may switch objects across the crossing, over 20 seeds.
        let mut crossings = 0usize;
        for seed in 0..20u64 {
            let spec = SceneSpec {
                width: 120,
                height: 88,
                frames: 30,
                background: [28, 140, 44],
                objects: vec![
                    ObjectSpec {
                        category: "car".into(),
                        color: [210, 40, 35],
                        size: (24, 22),
                        start: (12, 33),
                        velocity: (3, 0),
                        textured: true,
                    },
                    ObjectSpec {
                        category: "car".into(),
                        color: [40, 45, 215],
                        size: (24, 22),
                        start: (84, 33),
                        velocity: (-3, 0),
                        textured: true,
                    },
                ],
                noise: NoiseSpec {
                    jitter_px: 1,
                    ..NoiseSpec::default()
                },
                seed,
            };
            let scene = synthesize_scene(&spec);
            let (tubes, _) =
                run_tube_stage(&scene.images, &scene.flows, &scene.detections, &fast_cfg())
                    .map_err(|e| e.to_string())?;
            // Crossing window: frames where the two ground-truth boxes overlap.
            let overlap_frames: Vec<usize> = (0..30)
                .filter(|&f| {
                    matches!(
                        (&scene.gt_boxes[0][f], &scene.gt_boxes[1][f]),
                        (Some(a), Some(b)) if iou(a, b) > 0.0
                    )
                })
                .collect();
            let (first_cross, last_cross) = (
                *overlap_frames.first().unwrap_or(&30),
                *overlap_frames.last().unwrap_or(&0),
            );
            let affinity = |tube: &Tube, obj: usize, frames: &[usize]| -> Option<f64> {
                let mut sum = 0.0;
                let mut n = 0usize;
                for &f in frames {
                    if let (Some(tb), Some(g)) = (tube.box_at(f), &scene.gt_boxes[obj][f]) {
                        sum += iou(&tb.bbox, g);
                        n += 1;
                    }
                }
                (n >= 3).then(|| sum / n as f64)
            };
            let before: Vec<usize> = (0..first_cross).collect();
            let after: Vec<usize> = (last_cross + 1..30).collect();
            for tube in &tubes {
                let pre = [affinity(tube, 0, &before), affinity(tube, 1, &before)];
                let post = [affinity(tube, 0, &after), affinity(tube, 1, &after)];
                if let (Some(p0), Some(p1), Some(q0), Some(q1)) = (pre[0], pre[1], post[0], post[1])
                {
                    let pre_obj = usize::from(p1 > p0);
                    let post_obj = usize::from(q1 > q0);
                    if pre_obj != post_obj {
                        return Err(format!("seed {seed}: tube switched objects across the crossing"));
                    }
                    crossings += 1;
                }
            }
        }
        if crossings == 0 {
            return Err("no tube spanned the crossing; scenario did not exercise the check".into());
        }

        // (c) 50% detection dropout: interpolated tubes still track well.
        let mut worst: f64 = 1.0;
        for seed in [3u64, 7, 13] {
            let spec = presets::single(
                120,
                90,
                24,
                NoiseSpec {
                    dropout_rate: 0.5,
                    ..NoiseSpec::default()
                },
                seed,
            );
            let scene = synthesize_scene(&spec);
            let (tubes, _) =
                run_tube_stage(&scene.images, &scene.flows, &scene.detections, &fast_cfg())
                    .map_err(|e| e.to_string())?;
            let quality = tube_box_iou(&tubes, &scene.gt_boxes, &scene.categories);
            worst = worst.min(quality);
            if quality < 0.8 {
                return Err(format!("seed {seed}: interpolated tube IoU {quality:.4} < 0.8"));
            }
        }
        Ok(format!(
            "(segmentation IoU {seg_iou:.4}; {crossings} crossing tubes clean; dropout IoU >= {worst:.4})"
        ))
    });
}

// --- criterion 7 -----------------------------------------------------------

#[test]
fn criterion_7_nms_and_merge_idempotence() {
    criterion(7, "NMS/merge idempotence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        let sparse_tube = |rng: &mut ChaCha8Rng| -> Tube {
            let start = rng.gen_range(0..4usize);
            let len = rng.gen_range(1..5usize);
            let x0 = rng.gen_range(0..12);
            let y0 = rng.gen_range(0..12);
            let b = bb(x0, y0, x0 + rng.gen_range(4..10), y0 + rng.gen_range(4..10));
            Tube {
                category: if rng.gen_bool(0.5) { "car".into() } else { "dog".into() },
                start_frame: start,
                boxes: (0..len)
                    .map(|k| {
                        Some(TubeBox {
                            bbox: b.translated(k as i32, 0),
                            provenance: BoxProvenance::Detected,
                        })
                    })
                    .collect(),
                path_score: rng.gen_range(0.5..3.0),
            }
        };
        for trial in 0..200 {
            let tubes: Vec<Tube> = (0..rng.gen_range(1..8)).map(|_| sparse_tube(&mut rng)).collect();
            let once = tube_nms(&tubes);
            let twice = tube_nms(&once);
            if once != twice {
                return Err(format!("trial {trial}: tube_nms not idempotent"));
            }
            if once.len() > tubes.len() {
                return Err(format!("trial {trial}: tube_nms grew the set"));
            }
        }
        for trial in 0..200 {
            let frames = 5;
            let n = rng.gen_range(1..6);
            let mut tubes = Vec::new();
            let mut priors = Vec::new();
            for _ in 0..n {
                let mut t = sparse_tube(&mut rng);
                t.start_frame = 0;
                tubes.push(t);
                let seq: Vec<PixelMask> = (0..frames)
                    .map(|_| {
                        let mut m = PixelMask::zero(6, 6);
                        for y in 0..6 {
                            for x in 0..6 {
                                if rng.gen_bool(0.3) {
                                    m.set(x, y, rng.gen_range(0.2..1.0));
                                }
                            }
                        }
                        m
                    })
                    .collect();
                priors.push(seq);
            }
            let (m1, p1) = merge_tubes(&tubes, &priors);
            let (m2, p2) = merge_tubes(&m1, &p1);
            if m1 != m2 || p1 != p2 {
                return Err(format!("trial {trial}: merge_tubes not idempotent"));
            }
        }

        // Volumetric IoU exactly 0.5 sits below the strict threshold.
        let mk = |b: BoundingBox| Tube {
            category: "car".into(),
            start_frame: 0,
            boxes: vec![Some(TubeBox {
                bbox: b,
                provenance: BoxProvenance::Detected,
            })],
            path_score: 1.0,
        };
        let a = mk(bb(0, 0, 10, 10));
        let b = mk(bb(0, 0, 20, 10));
        if volumetric_iou(&a, &b) != 0.5 {
            return Err("constructed pair must have volumetric IoU exactly 0.5".into());
        }
        if tube_nms(&[a, b]).len() != 2 {
            return Err("volumetric IoU exactly 0.5 must keep both tubes".into());
        }
        Ok("(200 NMS sets, 200 merge sets, strict boundary)".into())
    });
}

// --- criterion 8 -----------------------------------------------------------

#[test]
fn criterion_8_metric_suite() {
    criterion(8, "evaluation metrics", || {
        let rect_mask = |w: usize, h: usize, b: &BoundingBox| -> PixelMask {
            let mut m = PixelMask::zero(w, h);
            for (x, y) in b.pixels() {
                m.set(x as usize, y as usize, 1.0);
            }
            m
        };

        // Boundary case: P = 0.6, R = 1.0 -> F = 0.75 counts (inclusive).
        let pred = vec![vec![Some(rect_mask(20, 20, &bb(0, 0, 10, 10)))]];
        let gt = vec![vec![Some(rect_mask(20, 20, &bb(0, 0, 10, 6)))]];
        let report = eval_fmeasure(&pred, &gt).map_err(|e| e.to_string())?;
        if report.pairs[0].f_measure != 0.75 || report.matched != 1 {
            return Err(format!(
                "boundary case: F {} matched {}",
                report.pairs[0].f_measure, report.matched
            ));
        }

        // Assignment equals the exhaustive bipartite oracle for <= 4 objects.
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        for trial in 0..60 {
            let n_pred = rng.gen_range(1..=4usize);
            let n_gt = rng.gen_range(1..=4usize);
            let mut random_masks = |n: usize| -> Vec<MaskSequence> {
                (0..n)
                    .map(|_| {
                        let x0 = rng.gen_range(0..12);
                        let y0 = rng.gen_range(0..12);
                        let b = bb(x0, y0, x0 + rng.gen_range(3..8), y0 + rng.gen_range(3..8));
                        vec![Some(rect_mask(20, 20, &b))]
                    })
                    .collect()
            };
            let pred = random_masks(n_pred);
            let gt = random_masks(n_gt);
            let report = eval_fmeasure(&pred, &gt).map_err(|e| e.to_string())?;
            let got_total: f64 = report.pairs.iter().map(|p| p.f_measure).sum();

            // Oracle: pairwise F via 1x1 evaluations, then enumerate all
            // injections of predictions into ground-truth objects.
            let mut f = vec![vec![0.0; n_gt]; n_pred];
            for (i, p) in pred.iter().enumerate() {
                for (j, g) in gt.iter().enumerate() {
                    let r = eval_fmeasure(std::slice::from_ref(p), std::slice::from_ref(g))
                        .map_err(|e| e.to_string())?;
                    f[i][j] = r.pairs[0].f_measure;
                }
            }
            fn enumerate(i: usize, used: &mut Vec<bool>, cur: f64, f: &[Vec<f64>], best: &mut f64) {
                if i == f.len() {
                    *best = best.max(cur);
                    return;
                }
                enumerate(i + 1, used, cur, f, best);
                for j in 0..used.len() {
                    if !used[j] {
                        used[j] = true;
                        enumerate(i + 1, used, cur + f[i][j], f, best);
                        used[j] = false;
                    }
                }
            }
            let mut best = 0.0;
            enumerate(0, &mut vec![false; n_gt], 0.0, &f, &mut best);
            if (got_total - best).abs() > 1e-9 {
                return Err(format!("trial {trial}: assignment total {got_total} vs oracle {best}"));
            }
        }

        // 20 fixed IoU cases against rectangle set arithmetic.
        let mut rng = ChaCha8Rng::seed_from_u64(809);
        for case in 0..20 {
            let a = bb(
                rng.gen_range(0..8),
                rng.gen_range(0..8),
                rng.gen_range(9..20),
                rng.gen_range(9..20),
            );
            let b = bb(
                rng.gen_range(0..8),
                rng.gen_range(0..8),
                rng.gen_range(9..20),
                rng.gen_range(9..20),
            );
            let got = eval_iou(
                &[vec![Some(rect_mask(20, 20, &a))]],
                &[vec![Some(rect_mask(20, 20, &b))]],
            )
            .map_err(|e| e.to_string())?
            .per_object[0]
                .ok_or("undefined IoU")?;
            let want = a.intersection_area(&b) as f64 / a.union_area(&b) as f64;
            if (got - want).abs() > 1e-12 {
                return Err(format!("case {case}: IoU {got} vs arithmetic {want}"));
            }
        }
        Ok("(boundary inclusive; 60 assignment oracles; 20 IoU cases)".into())
    });
}

// --- criterion 9 -----------------------------------------------------------

fn read_output_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut entries = Vec::new();
    let labels = dir.join("labels");
    let mut names: Vec<_> = std::fs::read_dir(&labels)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        entries.push((
            format!("labels/{name}"),
            std::fs::read(labels.join(&name)).map_err(|e| e.to_string())?,
        ));
    }
    for extra in ["manifest.json", "tubes.json"] {
        entries.push((
            extra.to_string(),
            std::fs::read(dir.join(extra)).map_err(|e| e.to_string())?,
        ));
    }
    Ok(entries)
}

#[test]
fn criterion_9_cli_determinism() {
    criterion(9, "determinism", || {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let scene_dir = tmp.path().join("scene");
        let bin = env!("CARGO_BIN_EXE_tubeseg");
        let run = |args: &[&str]| -> Result<(), String> {
            let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!(
                    "{:?} failed: {}",
                    args,
                    String::from_utf8_lossy(&out.stderr)
                ));
            }
            Ok(())
        };
        run(&[
            "synth",
            "--out",
            scene_dir.to_str().unwrap(),
            "--preset",
            "single",
            "--frames",
            "10",
            "--width",
            "96",
            "--height",
            "72",
            "--cell",
            "3",
            "--seed",
            "7",
        ])?;
        let scene = scene_dir.to_str().unwrap().to_string();
        let out_a = tmp.path().join("a");
        let out_b = tmp.path().join("b");
        let out_c = tmp.path().join("c");
        for (dir, extra) in [
            (&out_a, Some("--single-thread")),
            (&out_b, Some("--single-thread")),
            (&out_c, None),
        ] {
            let mut args = vec![
                "segment",
                "--input",
                &scene,
                "--out",
                dir.to_str().unwrap(),
                "--seed",
                "9",
            ];
            if let Some(flag) = extra {
                args.push(flag);
            }
            run(&args)?;
        }
        let a = read_output_bytes(&out_a)?;
        let b = read_output_bytes(&out_b)?;
        if a != b {
            let diff: Vec<&String> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x != y)
                .map(|(x, _)| &x.0)
                .collect();
            return Err(format!("single-thread reruns differ: {diff:?}"));
        }
        let c = read_output_bytes(&out_c)?;
        let label_files = |v: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
            v.iter()
                .filter(|(n, _)| n.starts_with("labels/"))
                .cloned()
                .collect()
        };
        if label_files(&a) != label_files(&c) {
            return Err("multithreaded label maps differ from single-threaded".into());
        }
        Ok("(byte-identical reruns; thread modes agree)".into())
    });
}
