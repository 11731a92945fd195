//! Size-distribution and instance-wise evaluation metrics.
//!
//! All metrics are reported in percent. Per-image results can be pooled over
//! a dataset: histograms pool raw instance areas, AP pools the ranked
//! predictions of all images, and the rates pool their raw counts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ClassLabel, Instance, InstanceSet};
use crate::matching::{assign_confidence, greedy_assign, score_order, ConfidencePartition};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts divided by their total; all zero when the histogram is empty.
    pub normalized: Vec<f64>,
}

impl SizeHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn check_edges(edges: &[f64]) -> Result<()> {
    let ascending = edges.windows(2).all(|w| w[0] < w[1]);
    if edges.len() < 2 || !ascending || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::BadEdges);
    }
    Ok(())
}

/// Bins `areas` into half-open bins `[edges[i], edges[i + 1])`, the last bin
/// closed. Areas outside the edge range are clamped into the end bins.
pub fn size_histogram(areas: &[usize], edges: &[f64]) -> Result<SizeHistogram> {
    check_edges(edges)?;
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &a in areas {
        let a = a as f64;
        let i = edges.partition_point(|&e| e <= a).saturating_sub(1).min(bins - 1);
        counts[i] += 1;
    }
    let total: usize = counts.iter().sum();
    let normalized = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Ok(SizeHistogram {
        edges: edges.to_vec(),
        counts,
        normalized,
    })
}

/// `bins + 1` equal-width edges from 0 to `max_area` (at least 1).
pub fn equal_width_edges(max_area: f64, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::BadEdges);
    }
    let top = if max_area.is_finite() && max_area > 0.0 { max_area } else { 1.0 };
    Ok((0..=bins).map(|i| top * i as f64 / bins as f64).collect())
}

fn same_edges(p: &SizeHistogram, g: &SizeHistogram) -> Result<()> {
    if p.edges != g.edges {
        return Err(Error::EdgeMismatch);
    }
    Ok(())
}

/// Pearson correlation of the normalized histograms, in percent.
/// When either side has zero variance: 100 if equal, else 0.
pub fn histogram_correlation(p: &SizeHistogram, g: &SizeHistogram) -> Result<f64> {
    same_edges(p, g)?;
    let (a, b) = (&p.normalized, &g.normalized);
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return Ok(if a == b { 100.0 } else { 0.0 });
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    let r = cov / libm::sqrt(var_a * var_b);
    Ok(100.0 * r.clamp(-1.0, 1.0))
}

/// Mean over bins of the squared difference of bin shares in percentage points.
pub fn histogram_chi2(p: &SizeHistogram, g: &SizeHistogram) -> Result<f64> {
    same_edges(p, g)?;
    let sum: f64 = p
        .normalized
        .iter()
        .zip(&g.normalized)
        .map(|(x, y)| {
            let d = 100.0 * x - 100.0 * y;
            d * d
        })
        .sum();
    Ok(sum / p.bins() as f64)
}

/// All-point interpolated average precision, in percent.
///
/// `ranked` holds the true-positive flag of each prediction in descending
/// score order.
pub fn average_precision(ranked: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if ranked.is_empty() { 100.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, &is_tp) in ranked.iter().enumerate() {
        tp += usize::from(is_tp);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope: best precision at any rank at or below this one
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let sum: f64 = ranked
        .iter()
        .zip(&precision)
        .filter(|(&t, _)| t)
        .map(|(_, &p)| p)
        .sum();
    100.0 * sum / n_gt as f64
}

fn ranked_tp_flags(preds: &[&Instance], gts: &[&Instance], iou_thresh: f64) -> Vec<(f64, u64, bool)> {
    let mut order: Vec<&Instance> = preds.to_vec();
    order.sort_by(|a, b| score_order(a, b));
    let assigned = greedy_assign(&order, gts, iou_thresh);
    order
        .iter()
        .zip(assigned)
        .map(|(p, g)| (p.score, p.id, g.is_some()))
        .collect()
}

/// AP at the given IoU threshold, in percent.
pub fn map_at(preds: &InstanceSet, gts: &InstanceSet, iou_thresh: f64) -> Result<f64> {
    preds.check_same_dims(gts.width(), gts.height())?;
    let p: Vec<&Instance> = preds.instances().iter().collect();
    let g: Vec<&Instance> = gts.instances().iter().collect();
    let flags: Vec<bool> = ranked_tp_flags(&p, &g, iou_thresh).into_iter().map(|f| f.2).collect();
    Ok(average_precision(&flags, g.len()))
}

pub fn map50(preds: &InstanceSet, gts: &InstanceSet) -> Result<f64> {
    map_at(preds, gts, 0.5)
}

pub fn recall_at(preds: &InstanceSet, gts: &InstanceSet, iou_thresh: f64) -> Result<f64> {
    preds.check_same_dims(gts.width(), gts.height())?;
    if gts.is_empty() {
        return Ok(100.0);
    }
    let p: Vec<&Instance> = preds.instances().iter().collect();
    let g: Vec<&Instance> = gts.instances().iter().collect();
    let matched = ranked_tp_flags(&p, &g, iou_thresh).iter().filter(|f| f.2).count();
    Ok(100.0 * matched as f64 / g.len() as f64)
}

pub fn recall50(preds: &InstanceSet, gts: &InstanceSet) -> Result<f64> {
    recall_at(preds, gts, 0.5)
}

/// Share of predictions in the residual group, in percent.
pub fn residual_error(partition: &ConfidencePartition, n_preds: usize) -> Result<f64> {
    if partition.len() != n_preds {
        return Err(Error::CountMismatch {
            expected: n_preds,
            partition: partition.len(),
        });
    }
    if n_preds == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * partition.residual.len() as f64 / n_preds as f64)
}

fn agglomeration_coverage(gt_agg: &BinaryMask, preds: &InstanceSet) -> Result<(usize, usize)> {
    preds.check_same_dims(gt_agg.width(), gt_agg.height())?;
    let total = gt_agg.area();
    if total == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let predicted = preds.union_mask(|i| i.class == ClassLabel::Agglomerated);
    Ok((gt_agg.intersection_area(&predicted)?, total))
}

/// Share of the ground-truth agglomeration area covered by predictions
/// classified as agglomerated, in percent.
pub fn agglomeration_tpr(gt_agg: &BinaryMask, preds: &InstanceSet) -> Result<f64> {
    let (covered, total) = agglomeration_coverage(gt_agg, preds)?;
    Ok(100.0 * covered as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub bins: usize,
    pub iou_thresh: f64,
    pub overlap_thresh: f64,
    /// Upper histogram edge; the largest observed instance area when unset.
    pub max_area: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            iou_thresh: 0.5,
            overlap_thresh: 0.5,
            max_area: None,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::InvalidParameter("bins must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.iou_thresh) || !(0.0..=1.0).contains(&self.overlap_thresh) {
            return Err(Error::InvalidParameter("thresholds must lie in [0, 1]"));
        }
        if let Some(m) = self.max_area {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidParameter("max_area must be positive"));
            }
        }
        Ok(())
    }
}

/// The seven size-distribution and instance metrics plus TPR, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub high_corr: f64,
    pub high_chi2: f64,
    pub low_corr: f64,
    pub low_chi2: f64,
    pub map50: f64,
    pub recall50: f64,
    pub res_err: f64,
    pub tpr: Option<f64>,
}

/// Raw per-image ingredients of [`EvalMetrics`]; pooled by concatenation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEvaluation {
    pub high_pred_areas: Vec<usize>,
    pub high_gt_areas: Vec<usize>,
    pub low_pred_areas: Vec<usize>,
    pub low_gt_areas: Vec<usize>,
    /// `(score, pred_id, true_positive)` of every prediction entering AP.
    pub ranked: Vec<(f64, u64, bool)>,
    pub n_high_gt: usize,
    pub n_preds: usize,
    pub n_residual: usize,
    /// Covered and total ground-truth agglomeration area.
    pub agglomeration: Option<(usize, usize)>,
    pub partition: ConfidencePartition,
}

impl ImageEvaluation {
    pub fn collect(
        preds: &InstanceSet,
        gt: &InstanceSet,
        gt_agg: Option<&BinaryMask>,
        opts: &EvalOptions,
    ) -> Result<Self> {
        opts.validate()?;
        let partition = assign_confidence(preds, gt, opts.overlap_thresh)?;
        let area_of = |id: u64| preds.get(id).map_or(0, |i| i.mask.area());

        let high_gt: Vec<&Instance> = gt
            .instances()
            .iter()
            .filter(|i| i.confidence == crate::Confidence::High)
            .collect();
        let low_gt_areas = gt
            .instances()
            .iter()
            .filter(|i| i.confidence == crate::Confidence::Low)
            .map(|i| i.mask.area())
            .collect();

        // low-assigned predictions are left out of the AP pool
        let pool: Vec<&Instance> = preds
            .instances()
            .iter()
            .filter(|p| !partition.low_matched.iter().any(|m| m.pred_id == p.id))
            .collect();
        let ranked = ranked_tp_flags(&pool, &high_gt, opts.iou_thresh);

        let agglomeration = gt_agg.map(|m| agglomeration_coverage(m, preds)).transpose()?;

        Ok(Self {
            high_pred_areas: partition.high_matched.iter().map(|m| area_of(m.pred_id)).collect(),
            high_gt_areas: high_gt.iter().map(|i| i.mask.area()).collect(),
            low_pred_areas: partition.low_matched.iter().map(|m| area_of(m.pred_id)).collect(),
            low_gt_areas,
            ranked,
            n_high_gt: high_gt.len(),
            n_preds: preds.len(),
            n_residual: partition.residual.len(),
            agglomeration,
            partition,
        })
    }

    fn max_area(&self) -> usize {
        self.high_pred_areas
            .iter()
            .chain(&self.high_gt_areas)
            .chain(&self.low_pred_areas)
            .chain(&self.low_gt_areas)
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn metrics(&self, opts: &EvalOptions) -> Result<EvalMetrics> {
        metrics_of(core::slice::from_ref(self), opts)
    }
}

/// Pools per-image evaluations. Histogram edges span the pooled maximum
/// area; AP ranks all predictions together by descending score (ties by
/// image order, then id).
pub fn metrics_of(images: &[ImageEvaluation], opts: &EvalOptions) -> Result<EvalMetrics> {
    opts.validate()?;
    let max_area = opts
        .max_area
        .unwrap_or_else(|| images.iter().map(ImageEvaluation::max_area).max().unwrap_or(0) as f64);
    let edges = equal_width_edges(max_area, opts.bins)?;
    let gather = |f: fn(&ImageEvaluation) -> &Vec<usize>| -> Vec<usize> {
        images.iter().flat_map(|e| f(e).iter().copied()).collect()
    };
    let hp = size_histogram(&gather(|e| &e.high_pred_areas), &edges)?;
    let hg = size_histogram(&gather(|e| &e.high_gt_areas), &edges)?;
    let lp = size_histogram(&gather(|e| &e.low_pred_areas), &edges)?;
    let lg = size_histogram(&gather(|e| &e.low_gt_areas), &edges)?;

    let mut ranked: Vec<(f64, usize, u64, bool)> = images
        .iter()
        .enumerate()
        .flat_map(|(k, e)| e.ranked.iter().map(move |&(s, id, tp)| (s, k, id, tp)))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
    let n_high_gt: usize = images.iter().map(|e| e.n_high_gt).sum();
    let tp = flags.iter().filter(|&&t| t).count();

    let n_preds: usize = images.iter().map(|e| e.n_preds).sum();
    let n_residual: usize = images.iter().map(|e| e.n_residual).sum();

    let agg: Vec<(usize, usize)> = images.iter().filter_map(|e| e.agglomeration).collect();
    let tpr = (!agg.is_empty()).then(|| {
        let covered: usize = agg.iter().map(|a| a.0).sum();
        let total: usize = agg.iter().map(|a| a.1).sum();
        100.0 * covered as f64 / total as f64
    });

    Ok(EvalMetrics {
        high_corr: histogram_correlation(&hp, &hg)?,
        high_chi2: histogram_chi2(&hp, &hg)?,
        low_corr: histogram_correlation(&lp, &lg)?,
        low_chi2: histogram_chi2(&lp, &lg)?,
        map50: average_precision(&flags, n_high_gt),
        recall50: if n_high_gt == 0 {
            100.0
        } else {
            100.0 * tp as f64 / n_high_gt as f64
        },
        res_err: if n_preds == 0 {
            0.0
        } else {
            100.0 * n_residual as f64 / n_preds as f64
        },
        tpr,
    })
}

/// Evaluates one image's predictions against its annotations.
pub fn evaluate(
    preds: &InstanceSet,
    gt: &InstanceSet,
    gt_agg: Option<&BinaryMask>,
    opts: &EvalOptions,
) -> Result<EvalMetrics> {
    ImageEvaluation::collect(preds, gt, gt_agg, opts)?.metrics(opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub name: String,
    pub metrics: EvalMetrics,
}

/// Per-image metrics plus the pooled dataset metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pooled: EvalMetrics,
    pub per_image: Vec<ImageReport>,
}

impl EvalReport {
    /// Images are ordered by name before pooling, so the result does not
    /// depend on input order.
    pub fn from_images(mut images: Vec<(String, ImageEvaluation)>, opts: &EvalOptions) -> Result<Self> {
        images.sort_by(|a, b| a.0.cmp(&b.0));
        let per_image = images
            .iter()
            .map(|(name, e)| {
                Ok(ImageReport {
                    name: name.clone(),
                    metrics: e.metrics(opts)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let evals: Vec<ImageEvaluation> = images.into_iter().map(|(_, e)| e).collect();
        Ok(Self {
            pooled: metrics_of(&evals, opts)?,
            per_image,
        })
    }
}
