//! Rasters, instance masks and instance sets.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// 8-bit single-channel raster, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![value; width * height],
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub(crate) fn check_same_dims(&self, width: usize, height: usize) -> Result<()> {
        dims_match((self.width, self.height), (width, height))
    }
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn intersect(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 <= x1 && y0 <= y1).then_some(BoundingBox { x0, y0, x1, y1 })
    }
}

/// Per-instance pixel membership raster, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// An all-background mask.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Builds a mask from `(x, y)` pixel coordinates. Out-of-bounds points are ignored.
    pub fn from_pixels(width: usize, height: usize, pixels: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut mask = Self::empty(width, height);
        for (x, y) in pixels {
            if x < width && y < height {
                mask.set(x, y, true);
            }
        }
        mask
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(x, y)`, in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % width, i / width))
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bbox: Option<BoundingBox> = None;
        for (x, y) in self.pixels() {
            bbox = Some(match bbox {
                None => BoundingBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(b) => BoundingBox {
                    x0: b.x0.min(x),
                    y0: b.y0,
                    x1: b.x1.max(x),
                    y1: y,
                },
            });
        }
        bbox
    }

    pub fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        dims_match((self.width, self.height), (other.width, other.height))
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        let mut out = self.clone();
        out.union_in_place(other);
        Ok(out)
    }

    /// Panics when dimensions differ.
    pub(crate) fn union_in_place(&mut self, other: &BinaryMask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{} area {}", self.width, self.height, self.area())?;
        if self.width * self.height <= 4096 {
            for row in self.bits.chunks(self.width.max(1)) {
                for &b in row {
                    f.write_str(if b { "#" } else { "." })?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Run lengths over the row-major pixel sequence, starting with background.
pub type RunList = Vec<u64>;

pub fn encode_rle(mask: &BinaryMask) -> RunList {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u64;
    for &b in &mask.bits {
        if b != current {
            runs.push(count);
            count = 0;
            current = b;
        }
        count += 1;
    }
    runs.push(count);
    runs
}

pub fn decode_rle(runs: &[u64], width: usize, height: usize) -> Result<BinaryMask> {
    let expected = width * height;
    let total = runs
        .iter()
        .try_fold(0u64, |acc, &r| acc.checked_add(r))
        .and_then(|t| usize::try_from(t).ok());
    match total {
        Some(t) if t == expected => {}
        other => {
            return Err(Error::SumMismatch {
                expected,
                actual: other.unwrap_or(usize::MAX),
            })
        }
    }
    let mut bits = Vec::with_capacity(expected);
    let mut value = false;
    for &run in runs {
        bits.extend(core::iter::repeat_n(value, run as usize));
        value = !value;
    }
    Ok(BinaryMask {
        width,
        height,
        bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Single,
    Agglomerated,
    Unlabeled,
}

impl ClassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Single => "single",
            ClassLabel::Agglomerated => "agglomerated",
            ClassLabel::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(ClassLabel::Single),
            "agglomerated" => Some(ClassLabel::Agglomerated),
            "unlabeled" => Some(ClassLabel::Unlabeled),
            _ => None,
        }
    }
}

/// Annotator certainty. Predictions carry `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Confidence {
    High,
    Low,
    None,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "high",
            Confidence::Low => "low",
            Confidence::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high" => Some(Confidence::High),
            "low" => Some(Confidence::Low),
            "none" => Some(Confidence::None),
            _ => None,
        }
    }
}

/// One crystal.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub mask: BinaryMask,
    pub class: ClassLabel,
    pub confidence: Confidence,
    pub score: f64,
}

impl Instance {
    /// An unlabeled prediction with score 1.
    pub fn new(id: u64, mask: BinaryMask) -> Self {
        Self {
            id,
            mask,
            class: ClassLabel::Unlabeled,
            confidence: Confidence::None,
            score: 1.0,
        }
    }

    pub fn with_class(mut self, class: ClassLabel) -> Self {
        self.class = class;
        self
    }

    pub fn with_confidence(mut self, confidence: Confidence) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }
}

/// All instances of one image. Instances may overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    width: usize,
    height: usize,
    instances: Vec<Instance>,
    source_image: Option<alloc::string::String>,
}

impl InstanceSet {
    /// Validates shared dimensions, unique ids and non-empty masks.
    pub fn new(width: usize, height: usize, instances: Vec<Instance>) -> Result<Self> {
        check_dims(width, height)?;
        let mut ids: Vec<u64> = Vec::with_capacity(instances.len());
        for inst in &instances {
            dims_match((width, height), (inst.mask.width, inst.mask.height))?;
            if inst.mask.is_empty() {
                return Err(Error::EmptyInstance(inst.id));
            }
            ids.push(inst.id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateId(w[0]));
        }
        Ok(Self {
            width,
            height,
            instances,
            source_image: None,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, Vec::new())
    }

    pub fn with_source_image(mut self, path: Option<alloc::string::String>) -> Self {
        self.source_image = path;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn source_image(&self) -> Option<&str> {
        self.source_image.as_deref()
    }

    pub fn get(&self, id: u64) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn check_same_dims(&self, width: usize, height: usize) -> Result<()> {
        dims_match((self.width, self.height), (width, height))
    }

    /// Union of the masks of instances accepted by `keep`.
    pub fn union_mask(&self, mut keep: impl FnMut(&Instance) -> bool) -> BinaryMask {
        let mut out = BinaryMask::empty(self.width, self.height);
        for inst in self.instances.iter().filter(|i| keep(i)) {
            out.union_in_place(&inst.mask);
        }
        out
    }

    /// Rebuilds the set with every instance mapped; revalidates.
    pub fn map_instances(&self, f: impl FnMut(&Instance) -> Instance) -> Result<InstanceSet> {
        let instances = self.instances.iter().map(f).collect();
        Ok(InstanceSet::new(self.width, self.height, instances)?.with_source_image(self.source_image.clone()))
    }
}

/// Coarsely circled region, implicitly closed polygon in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseRegion {
    polygon: Vec<(f64, f64)>,
}

impl CoarseRegion {
    pub fn new(polygon: Vec<(f64, f64)>) -> Result<Self> {
        if polygon.len() < 3 {
            return Err(Error::TooFewVertices(polygon.len()));
        }
        if polygon.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidParameter("polygon vertices must be finite"));
        }
        Ok(Self { polygon })
    }

    pub fn polygon(&self) -> &[(f64, f64)] {
        &self.polygon
    }
}

/// Pixel `(x, y)` is set iff its center lies inside the polygon by the even-odd rule.
pub fn rasterize_region(region: &CoarseRegion, width: usize, height: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::empty(width, height);
    fill_polygon_even_odd(&region.polygon, &mut mask);
    if mask.is_empty() {
        return Err(Error::DegeneratePolygon);
    }
    Ok(mask)
}

/// Scanline even-odd fill sampled at pixel centers. Left crossing inclusive,
/// right crossing exclusive; agrees with the classic crossing-count test.
pub(crate) fn fill_polygon_even_odd(polygon: &[(f64, f64)], mask: &mut BinaryMask) {
    let (width, height) = (mask.width, mask.height);
    if polygon.len() < 3 || width == 0 {
        return;
    }
    let min_y = polygon.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_y = polygon.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let row_start = clamp_index(libm::floor(min_y - 0.5), height);
    let row_end = clamp_index(libm::ceil(max_y + 0.5), height);
    let mut crossings: Vec<f64> = Vec::new();
    for y in row_start..row_end {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..polygon.len() {
            let (ax, ay) = polygon[i];
            let (bx, by) = polygon[(i + 1) % polygon.len()];
            if (ay > yc) != (by > yc) {
                crossings.push(ax + (yc - ay) * (bx - ax) / (by - ay));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            let start = clamp_index(libm::ceil(span[0] - 0.5), width);
            let end = clamp_index(libm::ceil(span[1] - 0.5), width);
            let row = &mut mask.bits[y * width..(y + 1) * width];
            for b in &mut row[start..end.max(start)] {
                *b = true;
            }
        }
    }
}

fn clamp_index(v: f64, limit: usize) -> usize {
    if v <= 0.0 {
        0
    } else if v >= limit as f64 {
        limit
    } else {
        v as usize
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyDimensions { width, height });
    }
    Ok(())
}

fn dims_match(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected_width: expected.0,
            expected_height: expected.1,
            width: actual.0,
            height: actual.1,
        });
    }
    Ok(())
}
