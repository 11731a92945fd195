//! Mask overlap measures, the two-level confidence partition of predictions,
//! and score-ordered greedy matching.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BoundingBox, Confidence, Instance, InstanceSet};

/// A mask with its bounding box and area cached, for repeated overlap queries.
#[derive(Debug, Clone)]
pub(crate) struct IndexedMask<'a> {
    pub mask: &'a BinaryMask,
    pub bbox: Option<BoundingBox>,
    pub area: usize,
}

impl<'a> IndexedMask<'a> {
    pub fn new(mask: &'a BinaryMask) -> Self {
        Self {
            mask,
            bbox: mask.bounding_box(),
            area: mask.area(),
        }
    }

    pub fn intersection(&self, other: &IndexedMask<'_>) -> usize {
        let (Some(a), Some(b)) = (self.bbox, other.bbox) else {
            return 0;
        };
        let Some(bb) = a.intersect(&b) else {
            return 0;
        };
        let w = self.mask.width();
        let (ba, bb_bits) = (self.mask.bits(), other.mask.bits());
        let mut n = 0;
        for y in bb.y0..=bb.y1 {
            let row = y * w;
            n += (bb.x0..=bb.x1).filter(|&x| ba[row + x] && bb_bits[row + x]).count();
        }
        n
    }
}

/// Fraction of `a` covered by `b`: `|a ∩ b| / |a|`.
pub fn overlap_ratio(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_dims(b)?;
    let area = a.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(a.intersection_area(b)? as f64 / area as f64)
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_dims(b)?;
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(Error::BothEmpty);
    }
    Ok(inter as f64 / union as f64)
}

/// A prediction assigned to one ground-truth confidence level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatch {
    pub pred_id: u64,
    /// The best-overlapping ground-truth instance of the winning level.
    pub gt_id: u64,
    /// `overlap_ratio(pred, gt)` for that instance.
    pub ratio: f64,
    /// Overlap with the union of all ground truth of the winning level.
    pub level_union_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfidencePartition {
    pub high_matched: Vec<ConfidenceMatch>,
    pub low_matched: Vec<ConfidenceMatch>,
    pub residual: Vec<u64>,
}

impl ConfidencePartition {
    pub fn len(&self) -> usize {
        self.high_matched.len() + self.low_matched.len() + self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LevelBest {
    gt_index: usize,
    inter: usize,
}

fn best_in_level(pred: &IndexedMask<'_>, level: &[(usize, IndexedMask<'_>, u64)]) -> Option<LevelBest> {
    let mut best: Option<(LevelBest, u64)> = None;
    for (index, gt, id) in level {
        let inter = pred.intersection(gt);
        let better = match best {
            None => true,
            Some((b, best_id)) => inter > b.inter || (inter == b.inter && *id < best_id),
        };
        if better {
            best = Some((LevelBest { gt_index: *index, inter }, *id));
        }
    }
    best.map(|(b, _)| b)
}

/// Splits predictions into high-confidence, low-confidence and residual groups.
///
/// Each prediction's overlap ratio is taken against every ground-truth
/// instance of both levels. If the best ratio is below `thresh` (or there is
/// no overlap at all) the prediction is residual; otherwise it goes to the
/// level with the higher ratio, high on ties.
pub fn assign_confidence(preds: &InstanceSet, gt: &InstanceSet, thresh: f64) -> Result<ConfidencePartition> {
    preds.check_same_dims(gt.width(), gt.height())?;
    let mut high = Vec::new();
    let mut low = Vec::new();
    for (i, inst) in gt.instances().iter().enumerate() {
        let entry = (i, IndexedMask::new(&inst.mask), inst.id);
        match inst.confidence {
            Confidence::High => high.push(entry),
            Confidence::Low => low.push(entry),
            Confidence::None => return Err(Error::MissingConfidence(inst.id)),
        }
    }
    let high_union = gt.union_mask(|i| i.confidence == Confidence::High);
    let low_union = gt.union_mask(|i| i.confidence == Confidence::Low);
    let high_union = IndexedMask::new(&high_union);
    let low_union = IndexedMask::new(&low_union);

    let mut partition = ConfidencePartition::default();
    for pred in preds.instances() {
        let p = IndexedMask::new(&pred.mask);
        if p.area == 0 {
            return Err(Error::EmptyInstance(pred.id));
        }
        let bh = best_in_level(&p, &high);
        let bl = best_in_level(&p, &low);
        let inter_h = bh.map_or(0, |b| b.inter);
        let inter_l = bl.map_or(0, |b| b.inter);
        let best_inter = inter_h.max(inter_l);
        let best_ratio = best_inter as f64 / p.area as f64;
        if best_inter == 0 || best_ratio < thresh {
            partition.residual.push(pred.id);
            continue;
        }
        let (winner, union, group) = if inter_h >= inter_l {
            (bh, &high_union, &mut partition.high_matched)
        } else {
            (bl, &low_union, &mut partition.low_matched)
        };
        let winner = winner.expect("a positive intersection implies a candidate");
        group.push(ConfidenceMatch {
            pred_id: pred.id,
            gt_id: gt.instances()[winner.gt_index].id,
            ratio: best_ratio,
            level_union_ratio: p.intersection(union) as f64 / p.area as f64,
        });
    }
    Ok(partition)
}

/// Prediction order used for matching: descending score, then ascending id.
pub(crate) fn score_order(a: &Instance, b: &Instance) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Greedy one-to-one matching of `preds` (in the given order) to `gts` at IoU `>= iou_thresh`.
/// Returns, per prediction, the index of its matched ground truth.
pub(crate) fn greedy_assign(preds: &[&Instance], gts: &[&Instance], iou_thresh: f64) -> Vec<Option<usize>> {
    let gt_masks: Vec<IndexedMask<'_>> = gts.iter().map(|g| IndexedMask::new(&g.mask)).collect();
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(preds.len());
    for pred in preds {
        let p = IndexedMask::new(&pred.mask);
        // best as (inter, union, gt index); IoUs compared exactly by cross-multiplication
        let mut best: Option<(usize, usize, usize)> = None;
        for (j, g) in gt_masks.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let inter = p.intersection(g);
            if inter == 0 {
                continue;
            }
            let union = p.area + g.area - inter;
            if (inter as f64 / union as f64) < iou_thresh {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bu, bj)) => {
                    let lhs = inter as u128 * bu as u128;
                    let rhs = bi as u128 * union as u128;
                    lhs > rhs || (lhs == rhs && gts[j].id < gts[bj].id)
                }
            };
            if better {
                best = Some((inter, union, j));
            }
        }
        if let Some((_, _, j)) = best {
            taken[j] = true;
        }
        out.push(best.map(|b| b.2));
    }
    out
}

/// Score-ordered greedy matching. Returns `(pred_id, gt_id)` pairs in matching order.
pub fn greedy_match(preds: &InstanceSet, gts: &InstanceSet, iou_thresh: f64) -> Result<Vec<(u64, u64)>> {
    preds.check_same_dims(gts.width(), gts.height())?;
    let mut order: Vec<&Instance> = preds.instances().iter().collect();
    order.sort_by(|a, b| score_order(a, b));
    let gt_refs: Vec<&Instance> = gts.instances().iter().collect();
    let assigned = greedy_assign(&order, &gt_refs, iou_thresh);
    Ok(order
        .iter()
        .zip(assigned)
        .filter_map(|(p, g)| g.map(|j| (p.id, gt_refs[j].id)))
        .collect())
}
