//! File formats and directory layouts: `.flo` flow fields, PPM/PGM/PNG
//! images, 16-bit superpixel label maps, detection lists, and the
//! segmentation output manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::model::{BoundingBox, Detection, FlowField, Image};
use crate::motion::PixelMask;
use crate::pipeline::PipelineInputs;
use crate::seg::LabelMap;
use crate::tube::Tube;
use crate::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Parses a little-endian `.flo` stream: f32 magic, i32 width, i32 height,
/// then `width*height` interleaved (u, v) f32 pairs, row-major.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Format("flow stream shorter than its header".into()));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!(
            "bad flow magic {magic}, expected {FLO_MAGIC}"
        )));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || (width as i64) * (height as i64) > 100_000_000 {
        return Err(Error::Format(format!(
            "implausible flow dimensions {width}x{height}"
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "flow stream has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let off = 12 + i * 8;
        u.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        v.push(f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()));
    }
    FlowField::from_components(w, h, u, v)
}

pub fn write_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(12 + w * h * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = flow.at(x, y);
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_flo_file(path: &Path) -> Result<FlowField> {
    read_flo(&fs::read(path)?).map_err(|e| annotate(e, path))
}

pub fn write_flo_file(path: &Path, flow: &FlowField) -> Result<()> {
    Ok(fs::write(path, write_flo(flow))?)
}

fn annotate(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

/// Parses whitespace-separated detection records
/// `frame x_min y_min x_max y_max score category`; `#` starts a comment.
/// The result is sorted by frame (stable). Violations report line numbers.
pub fn read_detections(text: &str, source: &str) -> Result<Vec<Detection>> {
    let mut detections = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Parse {
                path: source.into(),
                line,
                message: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            path: source.into(),
            line,
            message: format!("invalid {what}"),
        };
        let frame: i64 = fields[0].parse().map_err(|_| parse_err("frame"))?;
        if frame < 0 {
            return Err(Error::Parse {
                path: source.into(),
                line,
                message: format!("negative frame {frame}"),
            });
        }
        let coords: Vec<i32> = fields[1..5]
            .iter()
            .map(|s| s.parse().map_err(|_| parse_err("coordinate")))
            .collect::<std::result::Result<_, _>>()?;
        let score: f64 = fields[5].parse().map_err(|_| parse_err("score"))?;
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| {
            Error::Parse {
                path: source.into(),
                line,
                message: e.to_string(),
            }
        })?;
        let det = Detection::new(frame as usize, bbox, score, fields[6]).map_err(|e| Error::Parse {
            path: source.into(),
            line,
            message: e.to_string(),
        })?;
        detections.push(det);
    }
    detections.sort_by_key(|d| d.frame);
    Ok(detections)
}

pub fn read_detections_file(path: &Path) -> Result<Vec<Detection>> {
    read_detections(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_detections(detections: &[Detection]) -> String {
    let mut out = String::from("# frame x_min y_min x_max y_max score category\n");
    for d in detections {
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            d.frame,
            d.bbox.x_min(),
            d.bbox.y_min(),
            d.bbox.x_max(),
            d.bbox.y_max(),
            d.score,
            d.category
        ));
    }
    out
}

// --- netpbm ---------------------------------------------------------------

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::Format("truncated netpbm header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated netpbm header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed netpbm header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("netpbm field out of range".into()))?;
    }
    // A single whitespace byte separates the header from binary data.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("missing netpbm data separator".into()));
    }
    Ok(PnmHeader {
        magic,
        width: fields[0] as usize,
        height: fields[1] as usize,
        maxval: fields[2],
        data_offset: pos + 1,
    })
}

pub fn read_ppm(bytes: &[u8]) -> Result<Image> {
    let h = parse_pnm_header(bytes)?;
    if &h.magic != b"P6" || h.maxval != 255 {
        return Err(Error::Format("expected binary P6 PPM with maxval 255".into()));
    }
    let need = h.width * h.height * 3;
    let data = bytes
        .get(h.data_offset..h.data_offset + need)
        .ok_or_else(|| Error::Format("truncated PPM data".into()))?;
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Image::from_pixels(h.width, h.height, pixels)
}

pub fn write_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for p in img.pixels() {
        out.extend_from_slice(p);
    }
    out
}

/// Reads a P5 PGM; 16-bit data (maxval > 255) is big-endian per the format.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u16>)> {
    let h = parse_pnm_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Format("expected binary P5 PGM".into()));
    }
    let n = h.width * h.height;
    let values = if h.maxval > 255 {
        let data = bytes
            .get(h.data_offset..h.data_offset + n * 2)
            .ok_or_else(|| Error::Format("truncated PGM data".into()))?;
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        let data = bytes
            .get(h.data_offset..h.data_offset + n)
            .ok_or_else(|| Error::Format("truncated PGM data".into()))?;
        data.iter().map(|&b| b as u16).collect()
    };
    Ok((h.width, h.height, h.maxval, values))
}

pub fn write_pgm8(width: usize, height: usize, values: &[u8]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    out
}

pub fn write_pgm16(width: usize, height: usize, values: &[u16]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Superpixel label map stored as a 16-bit grayscale PGM, value = id.
pub fn read_label_map_file(path: &Path) -> Result<LabelMap> {
    let (w, h, _, values) = read_pgm(&fs::read(path)?).map_err(|e| annotate(e, path))?;
    LabelMap::from_labels(w, h, values.into_iter().map(u32::from).collect())
}

pub fn write_label_map16_file(path: &Path, map: &LabelMap) -> Result<()> {
    let values: Vec<u16> = map
        .labels()
        .iter()
        .map(|&l| {
            u16::try_from(l)
                .map_err(|_| Error::Format(format!("label {l} exceeds 16-bit PGM range")))
        })
        .collect::<Result<_>>()?;
    Ok(fs::write(path, write_pgm16(map.width(), map.height(), &values))?)
}

/// Output label maps (0 = background, i = object i) as 8-bit PGM.
pub fn write_label_map8_file(path: &Path, map: &LabelMap) -> Result<()> {
    let values: Vec<u8> = map
        .labels()
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| Error::Format(format!("label {l} exceeds 8-bit PGM range")))
        })
        .collect::<Result<_>>()?;
    Ok(fs::write(path, write_pgm8(map.width(), map.height(), &values))?)
}

pub fn read_label_map8_file(path: &Path) -> Result<LabelMap> {
    let (w, h, maxval, values) = read_pgm(&fs::read(path)?).map_err(|e| annotate(e, path))?;
    if maxval > 255 {
        return Err(Error::Format(format!(
            "{}: expected 8-bit label map",
            path.display()
        )));
    }
    LabelMap::from_labels(w, h, values.into_iter().map(u32::from).collect())
}

/// Binary mask as 8-bit PGM (0 / 255).
pub fn write_mask_file(path: &Path, mask: &PixelMask) -> Result<()> {
    let values: Vec<u8> = mask
        .values()
        .iter()
        .map(|&v| if v >= 0.5 { 255 } else { 0 })
        .collect();
    Ok(fs::write(path, write_pgm8(mask.width(), mask.height(), &values))?)
}

pub fn read_mask_file(path: &Path) -> Result<PixelMask> {
    let (w, h, maxval, values) = read_pgm(&fs::read(path)?).map_err(|e| annotate(e, path))?;
    let scale = f64::from(maxval.max(1));
    PixelMask::from_values(w, h, values.into_iter().map(|v| f64::from(v) / scale).collect())
}

/// Reads a video frame by extension: binary PPM or PNG.
pub fn read_image_file(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(&fs::read(path)?).map_err(|e| annotate(e, path)),
        Some("png") => {
            let img = image::open(path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
                .to_rgb8();
            let pixels = img.pixels().map(|p| p.0).collect();
            Image::from_pixels(img.width() as usize, img.height() as usize, pixels)
        }
        _ => Err(Error::Format(format!(
            "{}: unsupported frame format (expected .ppm or .png)",
            path.display()
        ))),
    }
}

pub fn write_ppm_file(path: &Path, img: &Image) -> Result<()> {
    Ok(fs::write(path, write_ppm(img))?)
}

pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("frame_{index:05}.{ext}")
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.contains(&e))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a video directory:
///
/// ```text
/// <dir>/frames/frame_*.{ppm,png}   the video frames
/// <dir>/flow/frame_*.flo           forward flow, one file per frame pair
/// <dir>/superpixels/frame_*.pgm    16-bit superpixel id maps
/// <dir>/detections.txt             detection records
/// ```
pub fn load_video_dir(dir: &Path) -> Result<PipelineInputs> {
    let frame_files = sorted_files(&dir.join("frames"), &["ppm", "png"])?;
    if frame_files.is_empty() {
        return Err(Error::Format(format!(
            "{}: no frames found under frames/",
            dir.display()
        )));
    }
    let images: Vec<Image> = frame_files
        .iter()
        .map(|p| read_image_file(p))
        .collect::<Result<_>>()?;
    let flows: Vec<FlowField> = sorted_files(&dir.join("flow"), &["flo"])?
        .iter()
        .map(|p| read_flo_file(p))
        .collect::<Result<_>>()?;
    let superpixels: Vec<LabelMap> = sorted_files(&dir.join("superpixels"), &["pgm"])?
        .iter()
        .map(|p| read_label_map_file(p))
        .collect::<Result<_>>()?;
    let detections = read_detections_file(&dir.join("detections.txt"))?;
    Ok(PipelineInputs {
        images,
        flows,
        detections,
        superpixels,
    })
}

/// Ground-truth masks: `<dir>/obj_XX/frame_*.pgm`, one subdirectory per
/// object; frames without a mask file count as unannotated.
pub fn load_gt_masks(dir: &Path, num_frames: usize) -> Result<Vec<Vec<Option<PixelMask>>>> {
    let mut object_dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    object_dirs.sort();
    let mut objects = Vec::new();
    for obj_dir in object_dirs {
        let mut frames: Vec<Option<PixelMask>> = vec![None; num_frames];
        for (f, slot) in frames.iter_mut().enumerate() {
            let path = obj_dir.join(frame_file_name(f, "pgm"));
            if path.exists() {
                *slot = Some(read_mask_file(&path)?);
            }
        }
        objects.push(frames);
    }
    Ok(objects)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestLabel {
    pub category: String,
    pub path_score: f64,
}

/// Maps output labels to tube categories and scores; keys are label numbers.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub frames: usize,
    pub labels: BTreeMap<String, ManifestLabel>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(tubes: &[Tube], num_frames: usize) -> Self {
        let labels = tubes
            .iter()
            .enumerate()
            .map(|(i, t)| {
                (
                    (i + 1).to_string(),
                    ManifestLabel {
                        category: t.category.clone(),
                        path_score: t.path_score,
                    },
                )
            })
            .collect();
        Self {
            frames: num_frames,
            labels,
            files: (0..num_frames).map(|f| frame_file_name(f, "pgm")).collect(),
        }
    }
}

/// Writes label maps plus the manifest under `<dir>/labels/` and
/// `<dir>/manifest.json`.
pub fn write_segmentation(dir: &Path, label_maps: &[LabelMap], manifest: &Manifest) -> Result<()> {
    let labels_dir = dir.join("labels");
    fs::create_dir_all(&labels_dir)?;
    for (f, map) in label_maps.iter().enumerate() {
        write_label_map8_file(&labels_dir.join(frame_file_name(f, "pgm")), map)?;
    }
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
