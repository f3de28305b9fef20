//! Deterministic synthetic scenes: colored rectangles on linear trajectories
//! with exact ground-truth masks, exact flow, scripted detections with
//! configurable noise, and a regular-grid superpixel generator.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{BoundingBox, Detection, FlowField, Image};
use crate::motion::PixelMask;
use crate::seg::LabelMap;
use crate::{io, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ObjectSpec {
    pub category: String,
    pub color: [u8; 3],
    /// Width and height of the rectangle in pixels.
    pub size: (u32, u32),
    /// Top-left corner at frame 0.
    pub start: (i32, i32),
    /// Per-frame integer displacement, so flow transport is exact.
    pub velocity: (i32, i32),
    /// Draw a brighter inner quadrant so correlation tracking has structure.
    pub textured: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Uniform jitter added independently to each box edge, in pixels.
    pub jitter_px: i32,
    /// Probability of dropping an object's detection in a frame.
    pub dropout_rate: f64,
    /// Probability of adding a spurious detection in a frame.
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background: [u8; 3],
    pub objects: Vec<ObjectSpec>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// A generated scene: frames, exact flow, per-object visible masks and boxes,
/// and scripted detections.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub images: Vec<Image>,
    pub flows: Vec<FlowField>,
    /// Visible (occlusion-aware) mask per object per frame.
    pub masks: Vec<Vec<PixelMask>>,
    /// Tight bounding box of the visible mask, `None` when fully hidden.
    pub gt_boxes: Vec<Vec<Option<BoundingBox>>>,
    pub categories: Vec<String>,
    pub detections: Vec<Detection>,
    /// Set when two objects of identical color overlap somewhere.
    pub overlap_flagged: bool,
}

/// Minimum visible fraction of an object before the scripted detector
/// reports it.
const DETECTION_VISIBILITY: f64 = 0.5;

fn object_rect(obj: &ObjectSpec, frame: usize) -> BoundingBox {
    let x = obj.start.0 + obj.velocity.0 * frame as i32;
    let y = obj.start.1 + obj.velocity.1 * frame as i32;
    BoundingBox::new(x, y, x + obj.size.0 as i32, y + obj.size.1 as i32)
        .expect("object size is positive")
}

fn texture_rect(rect: &BoundingBox) -> BoundingBox {
    let w = rect.width() as i32;
    let h = rect.height() as i32;
    BoundingBox::new(
        rect.x_min() + w / 4,
        rect.y_min() + h / 4,
        rect.x_min() + (w / 2).max(w / 4 + 1),
        rect.y_min() + (h / 2).max(h / 4 + 1),
    )
    .expect("texture quadrant is non-empty")
}

fn brighten(c: [u8; 3]) -> [u8; 3] {
    [
        c[0].saturating_add(45),
        c[1].saturating_add(45),
        c[2].saturating_add(45),
    ]
}

/// Generates the scene deterministically from its spec.
pub fn synthesize_scene(spec: &SceneSpec) -> SyntheticScene {
    let (w, h, n_frames) = (spec.width, spec.height, spec.frames);
    let n_obj = spec.objects.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut images = Vec::with_capacity(n_frames);
    let mut flows = Vec::with_capacity(n_frames.saturating_sub(1));
    let mut masks: Vec<Vec<PixelMask>> = vec![Vec::with_capacity(n_frames); n_obj];
    let mut gt_boxes: Vec<Vec<Option<BoundingBox>>> = vec![Vec::with_capacity(n_frames); n_obj];
    let mut overlap_flagged = false;

    for f in 0..n_frames {
        let rects: Vec<BoundingBox> = spec.objects.iter().map(|o| object_rect(o, f)).collect();
        for i in 0..n_obj {
            for j in (i + 1)..n_obj {
                if spec.objects[i].color == spec.objects[j].color
                    && rects[i].intersection(&rects[j]).is_some()
                {
                    overlap_flagged = true;
                }
            }
        }

        let mut img = Image::new(w, h, spec.background);
        for (obj, rect) in spec.objects.iter().zip(&rects) {
            let inner = obj.textured.then(|| texture_rect(rect));
            for (x, y) in rect.pixels() {
                if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                    continue;
                }
                let c = match &inner {
                    Some(t) if t.contains(x, y) => brighten(obj.color),
                    _ => obj.color,
                };
                img.set(x as usize, y as usize, c);
            }
        }
        images.push(img);

        // Visible masks: later objects occlude earlier ones.
        for (i, rect) in rects.iter().enumerate() {
            let mut mask = PixelMask::zero(w, h);
            let mut x_min = i32::MAX;
            let mut y_min = i32::MAX;
            let mut x_max = i32::MIN;
            let mut y_max = i32::MIN;
            let mut visible = 0u64;
            for (x, y) in rect.pixels() {
                if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
                    continue;
                }
                if rects[i + 1..].iter().any(|r| r.contains(x, y)) {
                    continue;
                }
                mask.set(x as usize, y as usize, 1.0);
                visible += 1;
                x_min = x_min.min(x);
                y_min = y_min.min(y);
                x_max = x_max.max(x + 1);
                y_max = y_max.max(y + 1);
            }
            masks[i].push(mask);
            gt_boxes[i].push(if visible > 0 {
                Some(BoundingBox::new(x_min, y_min, x_max, y_max).unwrap())
            } else {
                None
            });
        }

        if f + 1 < n_frames {
            let mut flow = FlowField::zero(w, h);
            for (i, obj) in spec.objects.iter().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        if masks[i][f].get(x, y) >= 0.5 {
                            flow.set(x, y, obj.velocity.0 as f32, obj.velocity.1 as f32);
                        }
                    }
                }
            }
            flows.push(flow);
        }
    }

    // Scripted detections with optional noise.
    let mut detections = Vec::new();
    let categories: Vec<String> = spec.objects.iter().map(|o| o.category.clone()).collect();
    for f in 0..n_frames {
        for (i, obj) in spec.objects.iter().enumerate() {
            let Some(gt_box) = gt_boxes[i][f] else { continue };
            let full_area = (obj.size.0 as u64 * obj.size.1 as u64) as f64;
            let visible = masks[i][f].total();
            if visible < DETECTION_VISIBILITY * full_area {
                continue;
            }
            if spec.noise.dropout_rate > 0.0 && rng.gen_bool(spec.noise.dropout_rate) {
                continue;
            }
            let b = if spec.noise.jitter_px > 0 {
                let j = spec.noise.jitter_px;
                let mut jit = || rng.gen_range(-j..=j);
                let x0 = (gt_box.x_min() + jit()).clamp(0, w as i32 - 2);
                let y0 = (gt_box.y_min() + jit()).clamp(0, h as i32 - 2);
                let x1 = (gt_box.x_max() + jit()).clamp(x0 + 1, w as i32);
                let y1 = (gt_box.y_max() + jit()).clamp(y0 + 1, h as i32);
                BoundingBox::new(x0, y0, x1, y1).unwrap()
            } else {
                gt_box
            };
            detections.push(Detection::new(f, b, 0.9, obj.category.clone()).unwrap());
        }
        if spec.noise.false_positive_rate > 0.0
            && !spec.objects.is_empty()
            && rng.gen_bool(spec.noise.false_positive_rate)
        {
            let bw = rng.gen_range(w / 8..w / 3).max(2) as i32;
            let bh = rng.gen_range(h / 8..h / 3).max(2) as i32;
            let x0 = rng.gen_range(0..(w as i32 - bw));
            let y0 = rng.gen_range(0..(h as i32 - bh));
            let cat = categories[rng.gen_range(0..categories.len())].clone();
            let score = rng.gen_range(0.5..0.9);
            detections.push(
                Detection::new(
                    f,
                    BoundingBox::new(x0, y0, x0 + bw, y0 + bh).unwrap(),
                    score,
                    cat,
                )
                .unwrap(),
            );
        }
    }

    SyntheticScene {
        images,
        flows,
        masks,
        gt_boxes,
        categories,
        detections,
        overlap_flagged,
    }
}

/// Regular-grid superpixel label map with square cells (clipped at borders).
pub fn grid_superpixels(width: usize, height: usize, cell: usize) -> LabelMap {
    assert!(cell >= 1);
    let across = width.div_ceil(cell);
    let mut map = LabelMap::new(width, height);
    for y in 0..height {
        for x in 0..width {
            map.set(x, y, ((y / cell) * across + x / cell) as u32);
        }
    }
    map
}

/// Scene metadata stored next to the generated files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneMeta {
    pub categories: Vec<String>,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

/// Writes a scene as a video input directory (frames, flow, superpixels,
/// detections) plus ground truth under `gt/` and a `scene.json` metadata file.
pub fn write_scene_dir(scene: &SyntheticScene, dir: &Path, cell: usize) -> Result<()> {
    let frames_dir = dir.join("frames");
    let flow_dir = dir.join("flow");
    let sp_dir = dir.join("superpixels");
    std::fs::create_dir_all(&frames_dir)?;
    std::fs::create_dir_all(&flow_dir)?;
    std::fs::create_dir_all(&sp_dir)?;
    let (w, h) = (scene.images[0].width(), scene.images[0].height());
    for (f, img) in scene.images.iter().enumerate() {
        io::write_ppm_file(&frames_dir.join(io::frame_file_name(f, "ppm")), img)?;
    }
    for (f, flow) in scene.flows.iter().enumerate() {
        io::write_flo_file(&flow_dir.join(io::frame_file_name(f, "flo")), flow)?;
    }
    let grid = grid_superpixels(w, h, cell);
    for f in 0..scene.images.len() {
        io::write_label_map16_file(&sp_dir.join(io::frame_file_name(f, "pgm")), &grid)?;
    }
    std::fs::write(dir.join("detections.txt"), io::write_detections(&scene.detections))?;
    for (i, masks) in scene.masks.iter().enumerate() {
        let obj_dir = dir.join("gt").join(format!("obj_{i:02}"));
        std::fs::create_dir_all(&obj_dir)?;
        for (f, mask) in masks.iter().enumerate() {
            io::write_mask_file(&obj_dir.join(io::frame_file_name(f, "pgm")), mask)?;
        }
    }
    let meta = SceneMeta {
        categories: scene.categories.clone(),
        frames: scene.images.len(),
        width: w,
        height: h,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| crate::Error::Format(format!("scene metadata: {e}")))?;
    std::fs::write(dir.join("scene.json"), json + "\n")?;
    Ok(())
}

/// Ready-made scene layouts used by the CLI and the test suites.
pub mod presets {
    use super::*;

    /// One textured object translating across the frame.
    pub fn single(width: usize, height: usize, frames: usize, noise: NoiseSpec, seed: u64) -> SceneSpec {
        SceneSpec {
            width,
            height,
            frames,
            background: [24, 36, 150],
            objects: vec![ObjectSpec {
                category: "car".into(),
                color: [205, 45, 40],
                size: (width as u32 * 2 / 5, height as u32 * 3 / 10),
                start: (width as i32 / 12, height as i32 / 4),
                velocity: (2, 1),
                textured: true,
            }],
            noise,
            seed,
        }
    }

    /// Two same-category, differently colored objects crossing paths.
    pub fn crossing(width: usize, height: usize, frames: usize, noise: NoiseSpec, seed: u64) -> SceneSpec {
        let size = (width as u32 / 5, height as u32 / 4);
        let y = height as i32 / 2 - size.1 as i32 / 2;
        let travel = (width as i32 - 2 * (width as i32 / 10) - size.0 as i32).max(1);
        let v = (travel / frames.max(1) as i32).max(1);
        SceneSpec {
            width,
            height,
            frames,
            background: [28, 140, 44],
            objects: vec![
                ObjectSpec {
                    category: "car".into(),
                    color: [210, 40, 35],
                    size,
                    start: (width as i32 / 10, y),
                    velocity: (v, 0),
                    textured: true,
                },
                ObjectSpec {
                    category: "car".into(),
                    color: [40, 45, 215],
                    size,
                    start: (width as i32 - width as i32 / 10 - size.0 as i32, y),
                    velocity: (-v, 0),
                    textured: true,
                },
            ],
            noise,
            seed,
        }
    }

    /// Two well-separated objects of different categories.
    pub fn two_objects(width: usize, height: usize, frames: usize, noise: NoiseSpec, seed: u64) -> SceneSpec {
        SceneSpec {
            width,
            height,
            frames,
            background: [20, 20, 20],
            objects: vec![
                ObjectSpec {
                    category: "car".into(),
                    color: [220, 50, 40],
                    size: (width as u32 / 4, height as u32 / 5),
                    start: (width as i32 / 16, height as i32 / 8),
                    velocity: (2, 0),
                    textured: true,
                },
                ObjectSpec {
                    category: "dog".into(),
                    color: [235, 220, 60],
                    size: (width as u32 / 5, height as u32 / 4),
                    start: (width as i32 / 2, height as i32 * 3 / 5),
                    velocity: (1, 1),
                    textured: true,
                },
            ],
            noise,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_spec() -> SceneSpec {
        SceneSpec {
            width: 40,
            height: 30,
            frames: 4,
            background: [0, 0, 0],
            objects: vec![ObjectSpec {
                category: "car".into(),
                color: [200, 0, 0],
                size: (10, 8),
                start: (5, 5),
                velocity: (0, 0),
                textured: false,
            }],
            noise: NoiseSpec::default(),
            seed: 1,
        }
    }

    #[test]
    fn static_object_zero_flow_constant_masks() {
        let scene = synthesize_scene(&static_spec());
        for flow in &scene.flows {
            assert!(flow.u().iter().all(|&v| v == 0.0));
            assert!(flow.v().iter().all(|&v| v == 0.0));
        }
        for f in 1..4 {
            assert_eq!(scene.masks[0][f], scene.masks[0][0]);
        }
        assert!(!scene.overlap_flagged);
    }

    #[test]
    fn translating_object_flow_on_object_pixels() {
        let mut spec = static_spec();
        spec.objects[0].velocity = (2, 0);
        let scene = synthesize_scene(&spec);
        let flow = &scene.flows[0];
        for y in 0..30 {
            for x in 0..40 {
                let on_object = scene.masks[0][0].get(x, y) >= 0.5;
                let expect = if on_object { (2.0, 0.0) } else { (0.0, 0.0) };
                assert_eq!(flow.at(x, y), expect, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn flow_transports_masks_exactly() {
        let mut spec = static_spec();
        spec.objects[0].velocity = (3, 2);
        let scene = synthesize_scene(&spec);
        for f in 0..3 {
            let mut warped = PixelMask::zero(40, 30);
            for y in 0..30 {
                for x in 0..40 {
                    if scene.masks[0][f].get(x, y) >= 0.5 {
                        if let Some((tx, ty)) = scene.flows[f].rounded_target(x as i32, y as i32) {
                            warped.set(tx as usize, ty as usize, 1.0);
                        }
                    }
                }
            }
            // Transported pixels are exactly the next visible mask, up to
            // pixels that left the image.
            for y in 0..30 {
                for x in 0..40 {
                    if warped.get(x, y) >= 0.5 {
                        assert!(scene.masks[0][f + 1].get(x, y) >= 0.5);
                    }
                }
            }
            assert_eq!(warped.total(), scene.masks[0][f + 1].total());
        }
    }

    #[test]
    fn clean_detections_tightly_bound_masks() {
        let scene = synthesize_scene(&static_spec());
        assert_eq!(scene.detections.len(), 4);
        for d in &scene.detections {
            assert_eq!(Some(d.bbox), scene.gt_boxes[0][d.frame]);
        }
    }

    #[test]
    fn dropout_reproducible() {
        let mut spec = static_spec();
        spec.frames = 20;
        spec.noise.dropout_rate = 0.5;
        let a = synthesize_scene(&spec);
        let b = synthesize_scene(&spec);
        assert_eq!(a.detections, b.detections);
        assert!(a.detections.len() < 20);
        spec.seed = 2;
        let c = synthesize_scene(&spec);
        assert_ne!(a.detections, c.detections);
    }

    #[test]
    fn identical_color_overlap_flagged() {
        let mut spec = static_spec();
        spec.objects.push(spec.objects[0].clone());
        spec.objects[1].start = (8, 6);
        let scene = synthesize_scene(&spec);
        assert!(scene.overlap_flagged);
    }

    #[test]
    fn grid_superpixels_partition() {
        let map = grid_superpixels(10, 7, 4);
        assert_eq!(map.get(0, 0), 0);
        assert_eq!(map.get(9, 0), 2);
        assert_eq!(map.get(0, 6), 3);
        assert_eq!(map.get(9, 6), 5);
    }
}
