//! Crystal-preserving post-processing of predicted instance masks.
//!
//! [`postprocess_instance`] chains five operations: hole filling, keeping the
//! largest connected component, convex hull, removal of bright pixels, and a
//! second largest-component pass. The same module provides the clipped box
//! blur used to hide unlabeled crystals in partially annotated images.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, GrayImage, InstanceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    /// Pixels at or above this image percentile count as bright.
    pub brightness_percentile: f64,
    /// Fixed intensity cut used instead of the percentile when set.
    pub brightness_cut: Option<u8>,
    pub foreground_connectivity: Connectivity,
    pub hole_connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            brightness_percentile: 0.85,
            brightness_cut: None,
            foreground_connectivity: Connectivity::Eight,
            hole_connectivity: Connectivity::Four,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.brightness_percentile;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter("brightness_percentile must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Visits the pixels selected by `select` that are connected to a seed.
/// Returns the visited pixels as row-major indices.
fn flood(
    width: usize,
    height: usize,
    conn: Connectivity,
    seeds: impl IntoIterator<Item = usize>,
    visited: &mut [bool],
    select: impl Fn(usize) -> bool,
) -> Vec<usize> {
    let mut stack: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for s in seeds {
        if !visited[s] && select(s) {
            visited[s] = true;
            stack.push(s);
        }
    }
    while let Some(i) = stack.pop() {
        out.push(i);
        let (x, y) = ((i % width) as isize, (i / width) as isize);
        for &(dx, dy) in conn.offsets() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            if !visited[j] && select(j) {
                visited[j] = true;
                stack.push(j);
            }
        }
    }
    out
}

/// Connected foreground components in discovery order: the first component
/// holds the smallest row-major pixel index, and so on.
pub fn connected_components(mask: &BinaryMask, conn: Connectivity) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();
    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    for start in 0..w * h {
        if bits[start] && !visited[start] {
            components.push(flood(w, h, conn, [start], &mut visited, |j| bits[j]));
        }
    }
    components
}

fn border_indices(width: usize, height: usize) -> impl Iterator<Item = usize> {
    let top = 0..width;
    let bottom = (0..width).map(move |x| (height - 1) * width + x);
    let left = (0..height).map(move |y| y * width);
    let right = (0..height).map(move |y| y * width + width - 1);
    top.chain(bottom).chain(left).chain(right)
}

/// Sets every background pixel that is not connected to the image border.
pub fn fill_holes(mask: &BinaryMask, hole_connectivity: Connectivity) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    if w == 0 || h == 0 {
        return mask.clone();
    }
    let bits = mask.bits();
    let mut outside = vec![false; w * h];
    flood(w, h, hole_connectivity, border_indices(w, h), &mut outside, |j| !bits[j]);
    let mut out = mask.clone();
    for (b, &o) in out.bits_mut().iter_mut().zip(&outside) {
        *b = !o;
    }
    out
}

/// Keeps the largest connected component. Equal areas resolve to the
/// component containing the smallest row-major pixel index.
pub fn largest_component(mask: &BinaryMask, foreground_connectivity: Connectivity) -> BinaryMask {
    let components = connected_components(mask, foreground_connectivity);
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    let mut best: Option<&Vec<usize>> = None;
    for c in &components {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    if let Some(best) = best {
        let bits = out.bits_mut();
        for &i in best {
            bits[i] = true;
        }
    }
    out
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (monotone chain), collinear points dropped. Interior lies on
/// the side where `cross(edge_start, edge_end, p) > 0`.
fn hull(mut points: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    points.sort_unstable();
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut lower: Vec<(i64, i64)> = Vec::with_capacity(points.len());
    for &p in &points {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::with_capacity(points.len());
    for &p in points.iter().rev() {
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

/// One pass: pixels whose centers lie in the closed hull of the corner
/// points of all set pixels. Coordinates are doubled so centers are integral.
fn hull_pass(mask: &BinaryMask) -> Option<BinaryMask> {
    let w = mask.width();
    let mut corners = Vec::new();
    for (y, row) in mask.bits().chunks(w).enumerate() {
        let Some(left) = row.iter().position(|&b| b) else {
            continue;
        };
        let right = row.iter().rposition(|&b| b).unwrap_or(left);
        let (y0, y1) = (2 * y as i64, 2 * y as i64 + 2);
        let (x0, x1) = (2 * left as i64, 2 * right as i64 + 2);
        corners.extend([(x0, y0), (x0, y1), (x1, y0), (x1, y1)]);
    }
    if corners.is_empty() {
        return None;
    }
    let poly = hull(corners);
    let min_x = poly.iter().map(|p| p.0).min()?;
    let max_x = poly.iter().map(|p| p.0).max()?;
    let min_y = poly.iter().map(|p| p.1).min()?;
    let max_y = poly.iter().map(|p| p.1).max()?;
    let mut out = mask.clone();
    // pixel x has doubled center 2x + 1; the hull never leaves the image
    for y in (min_y / 2) as usize..(max_y / 2) as usize {
        let cy = 2 * y as i64 + 1;
        for x in (min_x / 2) as usize..(max_x / 2) as usize {
            let c = (2 * x as i64 + 1, cy);
            let inside = (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], c) >= 0);
            if inside {
                out.set(x, y, true);
            }
        }
    }
    Some(out)
}

/// Raster convex hull: the set of pixels whose centers lie in the closed
/// convex hull of the unit squares of the set pixels, repeated until stable.
///
/// A single pass is not idempotent (pixels whose centers sit exactly on a
/// hull edge add new corners), so the pass is iterated to its fixed point.
/// Growth is bounded by the bounding box of the input.
pub fn convex_hull_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    let mut current = hull_pass(mask).ok_or(Error::EmptyMask)?;
    loop {
        let next = hull_pass(&current).ok_or(Error::EmptyMask)?;
        if next == current {
            return Ok(current);
        }
        current = next;
    }
}

/// Intensity at or above which a pixel counts as bright: the largest `t`
/// such that at least `1 - percentile` of all image pixels have intensity `>= t`.
pub fn brightness_threshold(image: &GrayImage, cfg: &PostprocessConfig) -> u8 {
    if let Some(cut) = cfg.brightness_cut {
        return cut;
    }
    let mut hist = [0usize; 256];
    for &v in image.data() {
        hist[v as usize] += 1;
    }
    let n = image.data().len() as f64;
    let allowed_below = cfg.brightness_percentile * n + 1e-9 * n;
    let mut below = 0usize;
    let mut threshold = 0u8;
    for (v, &count) in hist.iter().enumerate() {
        // `below` counts pixels with intensity < v
        if below as f64 <= allowed_below {
            threshold = v as u8;
        } else {
            break;
        }
        below += count;
    }
    threshold
}

/// Clears mask pixels whose image intensity reaches the brightness threshold.
pub fn remove_bright_boundary(mask: &BinaryMask, image: &GrayImage, cfg: &PostprocessConfig) -> Result<BinaryMask> {
    image.check_same_dims(mask.width(), mask.height())?;
    let threshold = brightness_threshold(image, cfg);
    Ok(clear_bright(mask, image, threshold))
}

fn clear_bright(mask: &BinaryMask, image: &GrayImage, threshold: u8) -> BinaryMask {
    let mut out = mask.clone();
    for (b, &v) in out.bits_mut().iter_mut().zip(image.data()) {
        if v >= threshold {
            *b = false;
        }
    }
    out
}

/// The five-step pipeline. Returns the input unchanged if any step empties the mask.
pub fn postprocess_instance(mask: &BinaryMask, image: &GrayImage, cfg: &PostprocessConfig) -> Result<BinaryMask> {
    image.check_same_dims(mask.width(), mask.height())?;
    let threshold = brightness_threshold(image, cfg);
    Ok(postprocess_with_threshold(mask, image, threshold, cfg).unwrap_or_else(|| mask.clone()))
}

fn postprocess_with_threshold(
    mask: &BinaryMask,
    image: &GrayImage,
    threshold: u8,
    cfg: &PostprocessConfig,
) -> Option<BinaryMask> {
    let non_empty = |m: BinaryMask| (!m.is_empty()).then_some(m);
    let filled = non_empty(fill_holes(mask, cfg.hole_connectivity))?;
    let largest = non_empty(largest_component(&filled, cfg.foreground_connectivity))?;
    let hull = convex_hull_mask(&largest).ok()?;
    let dark = non_empty(clear_bright(&hull, image, threshold))?;
    non_empty(largest_component(&dark, cfg.foreground_connectivity))
}

/// Applies [`postprocess_instance`] to every instance; ids, classes and scores are kept.
pub fn postprocess_set(set: &InstanceSet, image: &GrayImage, cfg: &PostprocessConfig) -> Result<InstanceSet> {
    set.check_same_dims(image.width(), image.height())?;
    let threshold = brightness_threshold(image, cfg);
    set.map_instances(|inst| {
        let mut out = inst.clone();
        if let Some(m) = postprocess_with_threshold(&inst.mask, image, threshold, cfg) {
            out.mask = m;
        }
        out
    })
}

/// Replaces every pixel outside the labeled instances by the mean of its
/// `window`x`window` neighborhood in the original image (clipped at the
/// borders, rounded half up). Labeled pixels keep their original value.
pub fn box_blur_unlabeled(image: &GrayImage, labeled: &InstanceSet, window: usize) -> Result<GrayImage> {
    if window.is_multiple_of(2) {
        return Err(Error::EvenWindow(window));
    }
    labeled.check_same_dims(image.width(), image.height())?;
    let (w, h) = (image.width(), image.height());
    let keep = labeled.union_mask(|_| true);

    // summed-area table with a zero guard row and column
    let stride = w + 1;
    let mut sat = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u64;
        for x in 0..w {
            row_sum += u64::from(image.get(x, y));
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row_sum;
        }
    }

    let r = window / 2;
    let mut out = image.clone();
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            if keep.get(x, y) {
                continue;
            }
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let sum = sat[y1 * stride + x1] + sat[y0 * stride + x0] - sat[y0 * stride + x1] - sat[y1 * stride + x0];
            let count = ((x1 - x0) * (y1 - y0)) as u64;
            out.set(x, y, ((2 * sum + count) / (2 * count)) as u8);
        }
    }
    Ok(out)
}

/// Morphological erosion with a 3x3 cross; pixels outside the image count as background.
pub(crate) fn erode_cross(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && x > 0
            && y > 0
            && x + 1 < w
            && y + 1 < h
            && mask.get(x - 1, y)
            && mask.get(x + 1, y)
            && mask.get(x, y - 1)
            && mask.get(x, y + 1)
    })
}

/// Morphological dilation with a 3x3 cross.
pub(crate) fn dilate_cross(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            || (x > 0 && mask.get(x - 1, y))
            || (x + 1 < w && mask.get(x + 1, y))
            || (y > 0 && mask.get(x, y - 1))
            || (y + 1 < h && mask.get(x, y + 1))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Instance;

    fn m(rows: &[&str]) -> BinaryMask {
        BinaryMask::from_fn(rows[0].len(), rows.len(), |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn fill_ring() {
        let ring = m(&["###", "#.#", "###"]);
        assert_eq!(fill_holes(&ring, Connectivity::Four), BinaryMask::full(3, 3));
    }

    #[test]
    fn fill_solid_and_c_shape_unchanged() {
        let solid = m(&[".....", ".###.", ".###.", "....."]);
        assert_eq!(fill_holes(&solid, Connectivity::Four), solid);
        let c = m(&[".....", ".###.", ".#...", ".###.", "....."]);
        assert_eq!(fill_holes(&c, Connectivity::Four), c);
    }

    #[test]
    fn fill_respects_hole_connectivity() {
        // background pixel touching the outside only diagonally
        let diag = m(&["##...", "#.#..", ".##..", "....."]);
        assert_eq!(fill_holes(&diag, Connectivity::Four).area(), diag.area() + 1);
        assert_eq!(fill_holes(&diag, Connectivity::Eight), diag);
    }

    #[test]
    fn largest_keeps_bigger_blob() {
        let two = m(&["##...", "##..#", "#...#", "....#"]);
        assert_eq!(
            largest_component(&two, Connectivity::Eight),
            m(&["##...", "##...", "#....", "....."])
        );
        let single = m(&[".##.", ".##."]);
        assert_eq!(largest_component(&single, Connectivity::Eight), single);
        assert!(largest_component(&BinaryMask::empty(3, 3), Connectivity::Eight).is_empty());
    }

    #[test]
    fn largest_tie_prefers_first_row_major() {
        let tie = m(&["...##", "##.##", "##..."]);
        assert_eq!(
            largest_component(&tie, Connectivity::Eight),
            m(&["...##", "...##", "....."])
        );
    }

    #[test]
    fn hull_examples() {
        let l = m(&["##", "#."]);
        assert_eq!(convex_hull_mask(&l).unwrap(), BinaryMask::full(2, 2));
        let rect = m(&["....", ".##.", ".##.", "...."]);
        assert_eq!(convex_hull_mask(&rect).unwrap(), rect);
        let diag = m(&["#..", "...", "..#"]);
        assert!(convex_hull_mask(&diag).unwrap().get(1, 1));
        assert_eq!(convex_hull_mask(&BinaryMask::empty(2, 2)), Err(Error::EmptyMask));
    }

    #[test]
    fn hull_of_single_pixel_is_itself() {
        let p = m(&["...", ".#.", "..."]);
        assert_eq!(convex_hull_mask(&p).unwrap(), p);
    }

    #[test]
    fn bright_uniform_image_removes_everything() {
        let img = GrayImage::filled(4, 4, 100).unwrap();
        let cfg = PostprocessConfig::default();
        assert_eq!(brightness_threshold(&img, &cfg), 100);
        let out = remove_bright_boundary(&BinaryMask::full(4, 4), &img, &cfg).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn bright_ramp_keeps_85() {
        let img = GrayImage::new(10, 10, (0..100).collect()).unwrap();
        let cfg = PostprocessConfig::default();
        assert_eq!(brightness_threshold(&img, &cfg), 85);
        let out = remove_bright_boundary(&BinaryMask::full(10, 10), &img, &cfg).unwrap();
        assert_eq!(out.area(), 85);
    }

    #[test]
    fn bright_dark_mask_unchanged() {
        let img = GrayImage::from_fn(10, 10, |x, y| if x < 2 && y < 2 { 10 } else { 200 }).unwrap();
        let mask = BinaryMask::from_fn(10, 10, |x, y| x < 2 && y < 2);
        let cfg = PostprocessConfig::default();
        assert_eq!(brightness_threshold(&img, &cfg), 200);
        assert_eq!(remove_bright_boundary(&mask, &img, &cfg).unwrap(), mask);
    }

    #[test]
    fn bright_fixed_cut() {
        let img = GrayImage::new(10, 10, (0..100).collect()).unwrap();
        let cfg = PostprocessConfig {
            brightness_cut: Some(50),
            ..PostprocessConfig::default()
        };
        let out = remove_bright_boundary(&BinaryMask::full(10, 10), &img, &cfg).unwrap();
        assert_eq!(out.area(), 50);
    }

    #[test]
    fn bright_dimension_mismatch() {
        let img = GrayImage::filled(4, 4, 0).unwrap();
        let r = remove_bright_boundary(&BinaryMask::full(3, 4), &img, &PostprocessConfig::default());
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    /// Hand trace on a 5x5 fixture: a ring around a dark interior, a stray
    /// pixel, and a bright image corner that the hull would otherwise claim.
    #[test]
    fn postprocess_ring_on_dark_interior() {
        let mask = m(&[".....", ".###.", ".#.#.", ".###.", "#...."]);
        let img = GrayImage::from_fn(5, 5, |x, y| if (1..4).contains(&x) && (1..4).contains(&y) { 40 } else { 240 }).unwrap();
        let cfg = PostprocessConfig::default();
        // step 1 fills the center, step 2 keeps the 3x3 block plus the
        // diagonally attached corner pixel (8-connectivity), step 3 grows the
        // hull into bright pixels, step 4 strips them and the corner, step 5
        // keeps the block.
        let out = postprocess_instance(&mask, &img, &cfg).unwrap();
        assert_eq!(out, m(&[".....", ".###.", ".###.", ".###.", "....."]));
    }

    #[test]
    fn postprocess_fixed_point_and_fallback() {
        let blob = m(&["......", ".####.", ".####.", "......"]);
        let img = GrayImage::from_fn(6, 4, |x, y| if blob.get(x, y) { 30 } else { 220 }).unwrap();
        let cfg = PostprocessConfig::default();
        assert_eq!(postprocess_instance(&blob, &img, &cfg).unwrap(), blob);

        let uniform = GrayImage::filled(6, 4, 128).unwrap();
        assert_eq!(postprocess_instance(&blob, &uniform, &cfg).unwrap(), blob);
    }

    #[test]
    fn postprocess_set_preserves_metadata() {
        let a = m(&["##..", "##..", "....", "...."]);
        let b = m(&["....", "....", "..##", "..##"]);
        let img = GrayImage::from_fn(4, 4, |x, y| if a.get(x, y) { 10 } else { 200 }).unwrap();
        let set = InstanceSet::new(
            4,
            4,
            vec![
                Instance::new(7, a.clone()).with_score(0.4),
                Instance::new(3, b.clone()).with_class(crate::ClassLabel::Agglomerated),
            ],
        )
        .unwrap();
        let out = postprocess_set(&set, &img, &PostprocessConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.instances()[0].id, 7);
        assert_eq!(out.instances()[0].score, 0.4);
        assert_eq!(out.instances()[0].mask, a);
        // b sits on bright pixels only, so it would be emptied and keeps its mask
        assert_eq!(out.instances()[1].mask, b);
        assert_eq!(out.instances()[1].class, crate::ClassLabel::Agglomerated);

        let empty = InstanceSet::empty(4, 4).unwrap();
        assert!(postprocess_set(&empty, &img, &PostprocessConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn blur_examples() {
        let img = GrayImage::new(3, 3, (0..9).collect()).unwrap();
        let none = InstanceSet::empty(3, 3).unwrap();
        let out = box_blur_unlabeled(&img, &none, 3).unwrap();
        assert_eq!(out.get(1, 1), 4);
        assert_eq!(out.get(0, 0), 2);
        assert_eq!(box_blur_unlabeled(&img, &none, 1).unwrap(), img);
        let flat = GrayImage::filled(5, 4, 77).unwrap();
        let none = InstanceSet::empty(5, 4).unwrap();
        assert_eq!(box_blur_unlabeled(&flat, &none, 33).unwrap(), flat);
        assert_eq!(box_blur_unlabeled(&flat, &none, 4), Err(Error::EvenWindow(4)));
    }

    #[test]
    fn blur_keeps_labeled_pixels() {
        let img = GrayImage::new(3, 3, (0..9).map(|v| v * 20).collect()).unwrap();
        let labeled = InstanceSet::new(3, 3, vec![Instance::new(1, m(&["#..", "...", "..."]))]).unwrap();
        let out = box_blur_unlabeled(&img, &labeled, 3).unwrap();
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(1, 1), 80);
    }

    #[test]
    fn erode_dilate() {
        let block = m(&[".....", ".###.", ".###.", ".###.", "....."]);
        assert_eq!(erode_cross(&block), m(&[".....", ".....", "..#..", ".....", "....."]));
        assert_eq!(dilate_cross(&m(&["...", ".#.", "..."])), m(&[".#.", "###", ".#."]));
    }
}
