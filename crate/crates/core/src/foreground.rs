//! Box-level foreground extraction (GrabCut-style iterated graph cuts) and
//! Gaussian-mixture appearance models for objects and background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::maxflow::{solve_binary_submodular, EdgeCosts};
use crate::model::{BoundingBox, Image};
use crate::motion::PixelMask;
use crate::{Error, Result};

/// Covariance eigenvalue floor, in squared 8-bit intensity units.
pub const VARIANCE_FLOOR: f64 = 1.0;

/// Log-density of the flat fallback model: uniform over the 256^3 RGB cube.
pub const FLAT_LOG_DENSITY: f64 = -16.635532333438686; // -3 ln 256

/// Jacobi eigendecomposition of a symmetric 3x3 matrix.
/// Returns eigenvalues and the matching eigenvectors as columns.
fn sym_eigen_3x3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-24 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-30 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for vk in v.iter_mut() {
                let vp = vk[p];
                let vq = vk[q];
                vk[p] = c * vp - s * vq;
                vk[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    inv_cov: [[f64; 3]; 3],
    /// log((2 pi)^(-3/2) det(cov)^(-1/2))
    log_norm: f64,
}

impl GmmComponent {
    /// Builds a component, flooring covariance eigenvalues at
    /// [`VARIANCE_FLOOR`] to keep the matrix positive definite.
    pub fn new(weight: f64, mean: [f64; 3], covariance: [[f64; 3]; 3]) -> Self {
        let (eig, vecs) = sym_eigen_3x3(covariance);
        let eig = eig.map(|l| l.max(VARIANCE_FLOOR));
        let mut cov = [[0.0; 3]; 3];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                for k in 0..3 {
                    cov[r][c] += vecs[r][k] * eig[k] * vecs[c][k];
                    inv[r][c] += vecs[r][k] / eig[k] * vecs[c][k];
                }
            }
        }
        let log_det: f64 = eig.iter().map(|l| l.ln()).sum();
        let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Self {
            weight,
            mean,
            covariance: cov,
            inv_cov: inv,
            log_norm,
        }
    }

    fn log_density(&self, x: [f64; 3]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]];
        let mut q = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                q += d[r] * self.inv_cov[r][c] * d[c];
            }
        }
        self.log_norm - 0.5 * q
    }
}

/// Gaussian mixture over RGB with non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub components: Vec<GmmComponent>,
}

impl Gmm {
    /// Log of the mixture density at a pixel.
    pub fn score(&self, x: [f64; 3]) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&logs)
    }

    /// Posterior component responsibilities at a pixel.
    pub fn responsibilities(&self, x: [f64; 3]) -> Vec<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                if c.weight > 0.0 {
                    c.weight.ln() + c.log_density(x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let total = log_sum_exp(&logs);
        logs.iter().map(|l| (l - total).exp()).collect()
    }
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Log-density of the mixture at a pixel (operation-style alias for
/// [`Gmm::score`]).
pub fn gmm_score(g: &Gmm, pixel: [f64; 3]) -> f64 {
    g.score(pixel)
}

/// Fits a mixture by EM from a farthest-point initialization with a fixed
/// seed. Stops when the relative log-likelihood change drops below 1e-6 or
/// after 100 iterations. When there are fewer samples than requested
/// components, the component count is reduced to the sample count.
pub fn fit_gmm(samples: &[[f64; 3]], k: usize, seed: u64) -> Result<Gmm> {
    fit_gmm_with_trace(samples, k, seed).map(|(g, _)| g)
}

/// [`fit_gmm`] plus the log-likelihood after every EM iteration
/// (non-decreasing).
pub fn fit_gmm_with_trace(samples: &[[f64; 3]], k: usize, seed: u64) -> Result<(Gmm, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Format("cannot fit a mixture on zero samples".into()));
    }
    let k = k.max(1).min(samples.len());
    let n = samples.len();

    // Farthest-point seeding: random first center, then maximal minimum
    // distance, ties to the lowest index.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 3]> = vec![samples[rng.gen_range(0..n)]];
    let dist2 = |a: [f64; 3], b: [f64; 3]| -> f64 {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };
    while centers.len() < k {
        let mut best = (0usize, -1.0);
        for (i, s) in samples.iter().enumerate() {
            let d = centers.iter().map(|c| dist2(*s, *c)).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        centers.push(samples[best.0]);
    }
    let mut comps: Vec<GmmComponent> = centers
        .into_iter()
        .map(|c| GmmComponent::new(1.0 / k as f64, c, [[0.0; 3]; 3]))
        .collect();

    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut resp = vec![0.0; n * k];
    for _ in 0..100 {
        // E step.
        let mut ll = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let logs: Vec<f64> = comps
                .iter()
                .map(|c| {
                    if c.weight > 0.0 {
                        c.weight.ln() + c.log_density(*s)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let total = log_sum_exp(&logs);
            ll += total;
            for (j, l) in logs.iter().enumerate() {
                resp[i * k + j] = (l - total).exp();
            }
        }
        trace.push(ll);
        // M step with eigenvalue-floored covariances.
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk < 1e-10 {
                comps[j].weight = nk / n as f64;
                continue;
            }
            let mut mean = [0.0; 3];
            for (i, s) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                for (m, sv) in mean.iter_mut().zip(s) {
                    *m += r * sv;
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut cov = [[0.0; 3]; 3];
            for (i, s) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                let d = [s[0] - mean[0], s[1] - mean[1], s[2] - mean[2]];
                for (row, dr) in cov.iter_mut().zip(&d) {
                    for (cell, dc) in row.iter_mut().zip(&d) {
                        *cell += r * dr * dc;
                    }
                }
            }
            for row in &mut cov {
                for cell in row.iter_mut() {
                    *cell /= nk;
                }
            }
            comps[j] = GmmComponent::new(nk / n as f64, mean, cov);
        }
        if prev_ll.is_finite() && (ll - prev_ll).abs() < 1e-6 * prev_ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    Ok((Gmm { components: comps }, trace))
}

/// Appearance model per label: a fitted mixture, or the flat fallback when no
/// evidence pixels existed (flagged degenerate).
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    gmm: Option<Gmm>,
}

impl AppearanceModel {
    pub fn fitted(gmm: Gmm) -> Self {
        Self { gmm: Some(gmm) }
    }

    pub fn degenerate() -> Self {
        Self { gmm: None }
    }

    pub fn is_degenerate(&self) -> bool {
        self.gmm.is_none()
    }

    pub fn gmm(&self) -> Option<&Gmm> {
        self.gmm.as_ref()
    }

    pub fn score(&self, pixel: [f64; 3]) -> f64 {
        match &self.gmm {
            Some(g) => g.score(pixel),
            None => FLAT_LOG_DENSITY,
        }
    }
}

/// GrabCut knobs; the paper-cited convention defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrabcutConfig {
    pub iterations: usize,
    pub gmm_components: usize,
    pub pairwise_gamma: f64,
    /// Fraction of the box size stripped from each side for the initial
    /// foreground region.
    pub shrink_margin: f64,
    pub seed: u64,
}

impl Default for GrabcutConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            gmm_components: 5,
            pairwise_gamma: 50.0,
            shrink_margin: 0.1,
            seed: 0,
        }
    }
}

impl GrabcutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Format("grabcut iterations must be at least 1".into()));
        }
        if self.gmm_components < 1 {
            return Err(Error::Format("gmm_components must be at least 1".into()));
        }
        if self.pairwise_gamma <= 0.0 {
            return Err(Error::Format("pairwise_gamma must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.shrink_margin) {
            return Err(Error::Format(format!(
                "shrink_margin {} outside [0,0.5)",
                self.shrink_margin
            )));
        }
        Ok(())
    }
}

fn shrunk_box(bbox: &BoundingBox, margin: f64) -> BoundingBox {
    let mx = (bbox.width() as f64 * margin).round() as i32;
    let my = (bbox.height() as f64 * margin).round() as i32;
    BoundingBox::new(
        bbox.x_min() + mx,
        bbox.y_min() + my,
        bbox.x_max() - mx,
        bbox.y_max() - my,
    )
    .unwrap_or(*bbox)
}

/// Ring of pixels around the box (clipped to the image) grown until it holds
/// at least the box area, row-major within each ring.
fn background_band(img: &Image, bbox: &BoundingBox) -> Vec<(usize, usize)> {
    let mut band = Vec::new();
    let target = bbox.area() as usize;
    let mut d = 1i32;
    loop {
        let outer = BoundingBox::new(
            bbox.x_min() - d,
            bbox.y_min() - d,
            bbox.x_max() + d,
            bbox.y_max() + d,
        )
        .expect("outer ring is larger than the box");
        let mut added = false;
        for (x, y) in outer.pixels() {
            if x < 0 || y < 0 || x as usize >= img.width() || y as usize >= img.height() {
                continue;
            }
            let dist = (bbox.x_min() - x)
                .max(x - (bbox.x_max() - 1))
                .max(bbox.y_min() - y)
                .max(y - (bbox.y_max() - 1));
            if dist == d {
                band.push((x as usize, y as usize));
                added = true;
            }
        }
        if band.len() >= target || !added {
            break;
        }
        d += 1;
    }
    band
}

/// Contrast scale of the pairwise term: `1 / (2 mean ||dRGB||^2)` over
/// 4-neighbor pairs inside the box; 0 for a perfectly uniform box.
fn pairwise_beta(img: &Image, bbox: &BoundingBox) -> f64 {
    let mut sum = 0.0;
    let mut count = 0u64;
    for (x, y) in bbox.pixels() {
        let p = img.rgb_f64(x as usize, y as usize);
        if bbox.contains(x + 1, y) {
            let q = img.rgb_f64(x as usize + 1, y as usize);
            sum += sq_color_dist(p, q);
            count += 1;
        }
        if bbox.contains(x, y + 1) {
            let q = img.rgb_f64(x as usize, y as usize + 1);
            sum += sq_color_dist(p, q);
            count += 1;
        }
    }
    if count == 0 || sum == 0.0 {
        0.0
    } else {
        1.0 / (2.0 * sum / count as f64)
    }
}

fn sq_color_dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
}

/// GrabCut-style foreground extraction inside a box: iterated GMM refits and
/// binary min-cuts with contrast-weighted 4-neighbor smoothness. The output
/// mask is binary inside the box and empty outside.
pub fn grabcut_box(img: &Image, bbox: &BoundingBox, cfg: &GrabcutConfig) -> Result<PixelMask> {
    grabcut_box_traced(img, bbox, cfg).map(|(m, _)| m)
}

/// [`grabcut_box`] plus the total energy after every outer iteration
/// (non-increasing).
pub fn grabcut_box_traced(
    img: &Image,
    bbox: &BoundingBox,
    cfg: &GrabcutConfig,
) -> Result<(PixelMask, Vec<f64>)> {
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
    let box_pixels: Vec<(usize, usize)> = bbox
        .pixels()
        .map(|(x, y)| (x as usize, y as usize))
        .collect();
    let band = background_band(img, bbox);
    let seed_box = shrunk_box(bbox, cfg.shrink_margin);
    let mut fg: Vec<bool> = box_pixels
        .iter()
        .map(|&(x, y)| seed_box.contains(x as i32, y as i32))
        .collect();

    let mask_from = |fg: &[bool]| -> PixelMask {
        let mut m = PixelMask::zero(img.width(), img.height());
        for (&(x, y), &is_fg) in box_pixels.iter().zip(fg) {
            if is_fg {
                m.set(x, y, 1.0);
            }
        }
        m
    };

    // Degenerate case: a single color everywhere makes the models
    // indistinguishable; return the initialization mask unchanged.
    let first = img.get(box_pixels[0].0, box_pixels[0].1);
    let uniform = box_pixels
        .iter()
        .chain(band.iter())
        .all(|&(x, y)| img.get(x, y) == first);
    if uniform {
        return Ok((mask_from(&fg), Vec::new()));
    }

    let beta = pairwise_beta(img, bbox);
    let w = bbox.width() as usize;
    let index_of = |x: usize, y: usize| -> usize {
        (y - bbox.y_min() as usize) * w + (x - bbox.x_min() as usize)
    };
    let mut edges: Vec<(usize, usize, EdgeCosts)> = Vec::new();
    for &(x, y) in &box_pixels {
        let p = img.rgb_f64(x, y);
        for (nx, ny) in [(x + 1, y), (x, y + 1)] {
            if bbox.contains(nx as i32, ny as i32) {
                let q = img.rgb_f64(nx, ny);
                let wgt = cfg.pairwise_gamma * (-beta * sq_color_dist(p, q)).exp();
                edges.push((index_of(x, y), index_of(nx, ny), [[0.0, wgt], [wgt, 0.0]]));
            }
        }
    }

    let energy = |fg: &[bool], unary: &[[f64; 2]]| -> f64 {
        let mut e: f64 = fg
            .iter()
            .zip(unary)
            .map(|(&is_fg, u)| u[usize::from(is_fg)])
            .sum();
        for &(p, q, c) in &edges {
            e += c[usize::from(fg[p])][usize::from(fg[q])];
        }
        e
    };

    let mut prev_models: Option<(Gmm, Gmm)> = None;
    let mut trace = Vec::new();
    for _ in 0..cfg.iterations {
        let fg_samples: Vec<[f64; 3]> = box_pixels
            .iter()
            .zip(&fg)
            .filter(|(_, &is_fg)| is_fg)
            .map(|(&(x, y), _)| img.rgb_f64(x, y))
            .collect();
        let mut bg_samples: Vec<[f64; 3]> =
            band.iter().map(|&(x, y)| img.rgb_f64(x, y)).collect();
        bg_samples.extend(
            box_pixels
                .iter()
                .zip(&fg)
                .filter(|(_, &is_fg)| !is_fg)
                .map(|(&(x, y), _)| img.rgb_f64(x, y)),
        );
        if fg_samples.is_empty() || bg_samples.is_empty() {
            break;
        }
        let fg_gmm = fit_gmm(&fg_samples, cfg.gmm_components, cfg.seed)?;
        let bg_gmm = fit_gmm(&bg_samples, cfg.gmm_components, cfg.seed.wrapping_add(1))?;

        let unary_for = |models: &(Gmm, Gmm)| -> Vec<[f64; 2]> {
            box_pixels
                .iter()
                .map(|&(x, y)| {
                    let px = img.rgb_f64(x, y);
                    [-models.1.score(px), -models.0.score(px)]
                })
                .collect()
        };
        let mut models = (fg_gmm, bg_gmm);
        let mut unary = unary_for(&models);
        if let Some(prev) = prev_models.take() {
            // A refit may only lower the data cost of the current assignment.
            let prev_unary = unary_for(&prev);
            let cost = |u: &[[f64; 2]]| -> f64 {
                fg.iter().zip(u).map(|(&is_fg, r)| r[usize::from(is_fg)]).sum()
            };
            if cost(&prev_unary) < cost(&unary) {
                models = prev;
                unary = prev_unary;
            }
        }

        let labels = solve_binary_submodular(&unary, &edges);
        let new_fg: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        trace.push(energy(&new_fg, &unary));
        let converged = new_fg == fg;
        fg = new_fg;
        prev_models = Some(models);
        if converged {
            break;
        }
    }
    Ok((mask_from(&fg), trace))
}

/// Per-object and background appearance models for the unary term.
#[derive(Debug, Clone)]
pub struct AppearanceModels {
    pub objects: Vec<AppearanceModel>,
    pub background: AppearanceModel,
}

/// Background sample budget for model fitting.
const MAX_BACKGROUND_SAMPLES: usize = 100_000;

/// Fits one mixture per object on its evidence pixels (union of foreground
/// and restricted motion masks) and a background mixture on pixels outside
/// every tube box, subsampled with a fixed seed. Objects without evidence get
/// the degenerate flat model.
pub fn build_appearance_models(
    objects: &[Vec<PixelMask>],
    images: &[Image],
    tube_boxes: &[Vec<Option<BoundingBox>>],
    k: usize,
    seed: u64,
) -> Result<AppearanceModels> {
    for (i, masks) in objects.iter().enumerate() {
        if masks.len() != images.len() {
            return Err(Error::Misaligned {
                what: format!("evidence masks of object {i}"),
                expected: images.len(),
                actual: masks.len(),
            });
        }
    }
    let mut object_models = Vec::with_capacity(objects.len());
    for masks in objects {
        let mut samples = Vec::new();
        for (img, mask) in images.iter().zip(masks) {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask.get(x, y) > 0.5 {
                        samples.push(img.rgb_f64(x, y));
                    }
                }
            }
        }
        if samples.is_empty() {
            object_models.push(AppearanceModel::degenerate());
        } else {
            object_models.push(AppearanceModel::fitted(fit_gmm(&samples, k, seed)?));
        }
    }

    let mut bg_samples = Vec::new();
    for (f, img) in images.iter().enumerate() {
        let boxes: Vec<&BoundingBox> = tube_boxes
            .iter()
            .filter_map(|per_frame| per_frame.get(f).and_then(|b| b.as_ref()))
            .collect();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if !boxes.iter().any(|b| b.contains(x as i32, y as i32)) {
                    bg_samples.push(img.rgb_f64(x, y));
                }
            }
        }
    }
    let background = if bg_samples.is_empty() {
        AppearanceModel::degenerate()
    } else {
        if bg_samples.len() > MAX_BACKGROUND_SAMPLES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b9));
            let idx = rand::seq::index::sample(&mut rng, bg_samples.len(), MAX_BACKGROUND_SAMPLES);
            let mut picked: Vec<usize> = idx.into_iter().collect();
            picked.sort_unstable();
            bg_samples = picked.into_iter().map(|i| bg_samples[i]).collect();
        }
        AppearanceModel::fitted(fit_gmm(&bg_samples, k, seed)?)
    };

    Ok(AppearanceModels {
        objects: object_models,
        background,
    })
}
