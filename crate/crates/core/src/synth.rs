//! Deterministic synthetic crystal scenes and simulated model output.
//!
//! Crystal outlines are built in integer fixed-point arithmetic (1/16 px)
//! and rasterized at pixel centers, so a seed produces the same scene on
//! every platform.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::mask::{fill_polygon_even_odd, BinaryMask, ClassLabel, CoarseRegion, Confidence, GrayImage, Instance, InstanceSet};
use crate::morphology::{dilate_cross, erode_cross};

/// Fixed-point subdivisions per pixel for crystal outlines.
const SUBPIXEL: i64 = 16;
/// Radius of the unit disk that crystal templates are sampled in.
const TEMPLATE_RADIUS: i64 = 1024;
/// Gap kept between crystals that are not part of one agglomerate, in pixels.
const CLEARANCE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub n_crystals: usize,
    /// Inclusive range of target crystal areas in pixels.
    pub area_range: (usize, usize),
    pub agglomeration_rate: f64,
    pub low_conf_rate: f64,
    pub background_intensity: u8,
    pub edge_intensity: u8,
    pub interior_intensity: u8,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            n_crystals: 20,
            area_range: (80, 400),
            agglomeration_rate: 0.3,
            low_conf_rate: 0.2,
            background_intensity: 230,
            edge_intensity: 60,
            interior_intensity: 150,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if !rate_ok(self.agglomeration_rate) || !rate_ok(self.low_conf_rate) {
            return Err(Error::InvalidParameter("rates must lie in [0, 1]"));
        }
        if !(self.edge_intensity < self.interior_intensity && self.interior_intensity < self.background_intensity) {
            return Err(Error::InvalidParameter("intensities must satisfy edge < interior < background"));
        }
        let (lo, hi) = self.area_range;
        if lo < 4 || lo > hi {
            return Err(Error::InvalidParameter("area_range must satisfy 4 <= min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DegradeParams {
    pub erode_px: usize,
    pub dilate_px: usize,
    pub drop_rate: f64,
    /// Probability of cutting a mask in two with a one-pixel line.
    pub split_rate: f64,
    /// Probability of punching an enclosed hole.
    pub hole_rate: f64,
    /// Probability of biting a disk out of the boundary.
    pub bite_rate: f64,
    /// Standard deviation of the score drop below 1.
    pub score_noise: f64,
    pub seed: u64,
}

impl DegradeParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.drop_rate, self.split_rate, self.hole_rate, self.bite_rate];
        if !rates.iter().all(|&r| rate_ok(r)) {
            return Err(Error::InvalidParameter("rates must lie in [0, 1]"));
        }
        if !(self.score_noise.is_finite() && self.score_noise >= 0.0) {
            return Err(Error::InvalidParameter("score_noise must be non-negative"));
        }
        Ok(())
    }
}

fn rate_ok(r: f64) -> bool {
    (0.0..=1.0).contains(&r)
}

/// A generated scene: rendered image, annotations and circled agglomerates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: GrayImage,
    pub ground_truth: InstanceSet,
    pub regions: Vec<CoarseRegion>,
}

// --- sampling helpers ------------------------------------------------------

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

fn range_i64(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    lo + below(rng, (hi - lo + 1) as u64) as i64
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn chance(rng: &mut ChaCha8Rng, p: f64) -> bool {
    p >= 1.0 || unit(rng) < p
}

fn isqrt(n: u128) -> u128 {
    if n < 2 {
        return n;
    }
    let mut x = n;
    let mut y = x.div_ceil(2);
    while y < x {
        x = y;
        y = (x + n / x) / 2;
    }
    x
}

// --- crystal geometry ------------------------------------------------------

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn doubled_area(poly: &[(i64, i64)]) -> i64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<i64>()
        .abs()
}

/// Random convex outline centred on the origin with roughly `area` square
/// pixels, vertices in subpixel units.
fn crystal_outline(rng: &mut ChaCha8Rng, area: usize) -> Vec<(i64, i64)> {
    let r = TEMPLATE_RADIUS;
    loop {
        let k = 6 + below(rng, 5) as usize;
        let stretch = 16 + range_i64(rng, 0, 16);
        let mut pts = Vec::with_capacity(k);
        while pts.len() < k {
            let x = range_i64(rng, -r, r);
            let y = range_i64(rng, -r, r);
            if x * x + y * y <= r * r {
                pts.push((x * stretch / 16, y));
            }
        }
        let hull = convex_hull(pts);
        let a2 = doubled_area(&hull);
        // reject slivers
        if hull.len() < 3 || a2 < r * r {
            continue;
        }
        // vertex_subpx = v * sqrt(2 * area * SUBPIXEL^2 / a2), in 16.16 fixed point
        let num = 2 * area as u128 * (SUBPIXEL * SUBPIXEL) as u128;
        let factor = isqrt((num << 32) / a2 as u128) as i128;
        return hull
            .into_iter()
            .map(|(x, y)| (((x as i128 * factor) >> 16) as i64, ((y as i128 * factor) >> 16) as i64))
            .collect();
    }
}

fn extent(outline: &[(i64, i64)]) -> (i64, i64, i64, i64) {
    let min_x = outline.iter().map(|p| p.0).min().unwrap_or(0);
    let max_x = outline.iter().map(|p| p.0).max().unwrap_or(0);
    let min_y = outline.iter().map(|p| p.1).min().unwrap_or(0);
    let max_y = outline.iter().map(|p| p.1).max().unwrap_or(0);
    (min_x, max_x, min_y, max_y)
}

fn translate(outline: &[(i64, i64)], (cx, cy): (i64, i64)) -> Vec<(i64, i64)> {
    outline.iter().map(|&(x, y)| (x + cx, y + cy)).collect()
}

fn to_pixels(poly: &[(i64, i64)]) -> Vec<(f64, f64)> {
    poly.iter()
        .map(|&(x, y)| (x as f64 / SUBPIXEL as f64, y as f64 / SUBPIXEL as f64))
        .collect()
}

fn rasterize(poly: &[(i64, i64)], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    fill_polygon_even_odd(&to_pixels(poly), &mut mask);
    mask
}

/// Random centre keeping the whole outline `margin` pixels inside the image.
fn random_centre(rng: &mut ChaCha8Rng, outline: &[(i64, i64)], width: usize, height: usize) -> Option<(i64, i64)> {
    let (min_x, max_x, min_y, max_y) = extent(outline);
    let margin = (CLEARANCE as i64 + 1) * SUBPIXEL;
    let lo_x = margin - min_x;
    let hi_x = width as i64 * SUBPIXEL - margin - max_x;
    let lo_y = margin - min_y;
    let hi_y = height as i64 * SUBPIXEL - margin - max_y;
    if lo_x > hi_x || lo_y > hi_y {
        return None;
    }
    Some((range_i64(rng, lo_x, hi_x), range_i64(rng, lo_y, hi_y)))
}

fn inside_image(poly: &[(i64, i64)], width: usize, height: usize) -> bool {
    let (min_x, max_x, min_y, max_y) = extent(poly);
    let m = (CLEARANCE as i64 + 1) * SUBPIXEL;
    min_x >= m && min_y >= m && max_x <= width as i64 * SUBPIXEL - m && max_y <= height as i64 * SUBPIXEL - m
}

fn grow(mask: &BinaryMask, steps: usize) -> BinaryMask {
    (0..steps).fold(mask.clone(), |m, _| dilate_cross(&m))
}

fn touches(a: &BinaryMask, b: &BinaryMask) -> bool {
    a.bits().iter().zip(b.bits()).any(|(&x, &y)| x && y)
}

struct Placed {
    mask: BinaryMask,
    class: ClassLabel,
}

/// Generates a scene. Agglomerated pairs are placed first, each pair being two
/// overlapping crystals enclosed by one circled region; single crystals are
/// then placed clear of every crystal and region.
pub fn generate_scene(params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n_crystals;
    let budget = 10 * n;
    let mut attempts = 0usize;
    let infeasible = || Error::Infeasible {
        requested: n,
        attempts: budget,
    };

    let agglomerated = libm::round(params.agglomeration_rate * n as f64) as usize;
    let pairs = (agglomerated / 2).min(n / 2);

    let mut placed: Vec<Placed> = Vec::with_capacity(n);
    // everything new crystals must keep clear of
    let mut occupied = BinaryMask::empty(w, h);
    let mut regions = Vec::with_capacity(pairs);
    let (lo, hi) = params.area_range;

    while regions.len() < pairs {
        attempts += 2;
        if attempts > budget {
            return Err(infeasible());
        }
        let area_a = range_i64(&mut rng, lo as i64, hi as i64) as usize;
        let area_b = range_i64(&mut rng, lo as i64, hi as i64) as usize;
        let a = crystal_outline(&mut rng, area_a);
        let b = crystal_outline(&mut rng, area_b);
        let Some(ca) = random_centre(&mut rng, &a, w, h) else {
            continue;
        };
        // offset b by ~60% of the summed radii in a random direction
        let (ax0, ax1, ay0, ay1) = extent(&a);
        let (bx0, bx1, by0, by1) = extent(&b);
        let reach = ((ax1 - ax0).max(ay1 - ay0) + (bx1 - bx0).max(by1 - by0)) * 3 / 10;
        let (dx, dy) = loop {
            let dx = range_i64(&mut rng, -1024, 1024);
            let dy = range_i64(&mut rng, -1024, 1024);
            let d2 = dx * dx + dy * dy;
            if d2 > 0 && d2 <= 1024 * 1024 {
                let d = isqrt(d2 as u128) as i64;
                break (dx * reach / d, dy * reach / d);
            }
        };
        let pa = translate(&a, ca);
        let pb = translate(&b, (ca.0 + dx, ca.1 + dy));
        if !inside_image(&pb, w, h) {
            continue;
        }
        let ma = rasterize(&pa, w, h);
        let mb = rasterize(&pb, w, h);
        if ma.is_empty() || mb.is_empty() {
            continue;
        }
        let inter = ma.intersection_area(&mb)?;
        if inter == 0 || ma.is_subset_of(&mb) || mb.is_subset_of(&ma) {
            continue;
        }
        let region_poly = enclosing_region(&pa, &pb);
        let region_mask = rasterize(&region_poly, w, h);
        if touches(&grow(&region_mask, CLEARANCE), &occupied) {
            continue;
        }
        occupied.union_in_place(&region_mask);
        occupied.union_in_place(&ma);
        occupied.union_in_place(&mb);
        regions.push(CoarseRegion::new(to_pixels(&region_poly))?);
        placed.push(Placed {
            mask: ma,
            class: ClassLabel::Agglomerated,
        });
        placed.push(Placed {
            mask: mb,
            class: ClassLabel::Agglomerated,
        });
    }

    while placed.len() < n {
        attempts += 1;
        if attempts > budget {
            return Err(infeasible());
        }
        let area = range_i64(&mut rng, lo as i64, hi as i64) as usize;
        let outline = crystal_outline(&mut rng, area);
        let Some(c) = random_centre(&mut rng, &outline, w, h) else {
            continue;
        };
        let mask = rasterize(&translate(&outline, c), w, h);
        if mask.is_empty() || touches(&grow(&mask, CLEARANCE), &occupied) {
            continue;
        }
        occupied.union_in_place(&mask);
        placed.push(Placed {
            mask,
            class: ClassLabel::Single,
        });
    }

    let mut image = GrayImage::filled(w, h, params.background_intensity)?;
    let mut instances = Vec::with_capacity(n);
    for (k, p) in placed.into_iter().enumerate() {
        render_crystal(&mut image, &p.mask, params.interior_intensity, params.edge_intensity);
        let confidence = if chance(&mut rng, params.low_conf_rate) && params.low_conf_rate > 0.0 {
            Confidence::Low
        } else {
            Confidence::High
        };
        instances.push(
            Instance::new(k as u64 + 1, p.mask)
                .with_class(p.class)
                .with_confidence(confidence),
        );
    }
    Ok(Scene {
        image,
        ground_truth: InstanceSet::new(w, h, instances)?,
        regions,
    })
}

/// Hull of both outlines pushed outward by 12% plus two pixels.
fn enclosing_region(a: &[(i64, i64)], b: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let hull = convex_hull(a.iter().chain(b).copied().collect());
    let n = hull.len() as i64;
    let cx = hull.iter().map(|p| p.0).sum::<i64>() / n;
    let cy = hull.iter().map(|p| p.1).sum::<i64>() / n;
    hull.into_iter()
        .map(|(x, y)| {
            let (dx, dy) = (x - cx, y - cy);
            let len = isqrt((dx * dx + dy * dy) as u128).max(1) as i64;
            let pad = 2 * SUBPIXEL;
            (cx + dx * 112 / 100 + dx * pad / len, cy + dy * 112 / 100 + dy * pad / len)
        })
        .collect()
}

/// Fills the mask with `interior` and draws its one-pixel boundary with `edge`.
fn render_crystal(image: &mut GrayImage, mask: &BinaryMask, interior: u8, edge: u8) {
    let (w, h) = (mask.width(), mask.height());
    for (x, y) in mask.pixels() {
        let on_boundary = x == 0
            || y == 0
            || x + 1 == w
            || y + 1 == h
            || !mask.get(x - 1, y)
            || !mask.get(x + 1, y)
            || !mask.get(x, y - 1)
            || !mask.get(x, y + 1);
        image.set(x, y, if on_boundary { edge } else { interior });
    }
}

// --- degradation -----------------------------------------------------------

fn disk(mask: &mut BinaryMask, (cx, cy): (usize, usize), radius: usize, value: bool) {
    let (w, h) = (mask.width(), mask.height());
    let r = radius as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let (x, y) = (cx as isize + dx, cy as isize + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                mask.set(x as usize, y as usize, value);
            }
        }
    }
}

fn boundary_pixels(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width(), mask.height());
    mask.pixels()
        .filter(|&(x, y)| {
            x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1)
        })
        .collect()
}

/// Pixels whose whole `(2r+3)`-square neighbourhood is set: clearing a disk of
/// radius `r` there leaves a hole enclosed by foreground.
fn hole_sites(mask: &BinaryMask, r: usize) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width(), mask.height());
    let reach = r + 1;
    mask.pixels()
        .filter(|&(x, y)| {
            x >= reach
                && y >= reach
                && x + reach < w
                && y + reach < h
                && (y - reach..=y + reach).all(|yy| (x - reach..=x + reach).all(|xx| mask.get(xx, yy)))
        })
        .collect()
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> Option<T> {
    (!items.is_empty()).then(|| items[below(rng, items.len() as u64) as usize])
}

fn punch_hole(rng: &mut ChaCha8Rng, mask: &mut BinaryMask) {
    let area = mask.area();
    let preferred = (libm::sqrt(area as f64) / 6.0) as usize;
    for r in (0..=preferred.max(1)).rev() {
        let sites = hole_sites(mask, r);
        if let Some(site) = pick(rng, &sites) {
            disk(mask, site, r, false);
            return;
        }
    }
}

fn bite(rng: &mut ChaCha8Rng, mask: &mut BinaryMask) {
    let edge = boundary_pixels(mask);
    let Some(site) = pick(rng, &edge) else {
        return;
    };
    let r = ((libm::sqrt(mask.area() as f64) / 3.0) as usize).max(1);
    let mut bitten = mask.clone();
    disk(&mut bitten, site, r, false);
    if !bitten.is_empty() {
        *mask = bitten;
    }
}

fn split(rng: &mut ChaCha8Rng, mask: &mut BinaryMask) {
    let Some(bb) = mask.bounding_box() else {
        return;
    };
    let mut cut = mask.clone();
    if below(rng, 2) == 0 {
        let x = (bb.x0 + bb.x1) / 2;
        (bb.y0..=bb.y1).for_each(|y| cut.set(x, y, false));
    } else {
        let y = (bb.y0 + bb.y1) / 2;
        (bb.x0..=bb.x1).for_each(|x| cut.set(x, y, false));
    }
    if !cut.is_empty() {
        *mask = cut;
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - unit(rng);
    let u2 = unit(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Simulates imperfect segmentation output from ground truth. Every instance
/// draws from its own random stream, so the outcome for one instance does not
/// depend on the others. Labels are stripped; ids are kept.
pub fn degrade(gt: &InstanceSet, params: &DegradeParams) -> Result<InstanceSet> {
    params.validate()?;
    let mut out = Vec::with_capacity(gt.len());
    for inst in gt.instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(inst.id);
        if params.drop_rate > 0.0 && chance(&mut rng, params.drop_rate) {
            continue;
        }
        let mut mask = inst.mask.clone();
        for _ in 0..params.erode_px {
            mask = erode_cross(&mask);
        }
        for _ in 0..params.dilate_px {
            mask = dilate_cross(&mask);
        }
        if mask.is_empty() {
            continue;
        }
        if params.bite_rate > 0.0 && chance(&mut rng, params.bite_rate) {
            bite(&mut rng, &mut mask);
        }
        if params.split_rate > 0.0 && chance(&mut rng, params.split_rate) {
            split(&mut rng, &mut mask);
        }
        if params.hole_rate > 0.0 && chance(&mut rng, params.hole_rate) {
            punch_hole(&mut rng, &mut mask);
        }
        let score = if params.score_noise > 0.0 {
            (1.0 - libm::fabs(params.score_noise * gaussian(&mut rng))).clamp(0.0, 1.0)
        } else {
            1.0
        };
        out.push(Instance::new(inst.id, mask).with_score(score));
    }
    InstanceSet::new(gt.width(), gt.height(), out)
}
