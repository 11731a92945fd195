//! Agglomeration labels from circled regions and from a second model.

use crate::error::Result;
use crate::mask::{rasterize_region, BinaryMask, ClassLabel, CoarseRegion, InstanceSet};
use crate::matching::IndexedMask;

/// Overlap threshold that must be strictly exceeded to label agglomeration.
pub const DEFAULT_AGGLOMERATION_THRESH: f64 = 0.5;

fn relabel_by_coverage(set: &InstanceSet, region: &BinaryMask, thresh: f64) -> Result<InstanceSet> {
    set.check_same_dims(region.width(), region.height())?;
    let region = IndexedMask::new(region);
    set.map_instances(|inst| {
        let m = IndexedMask::new(&inst.mask);
        let ratio = m.intersection(&region) as f64 / m.area as f64;
        let mut out = inst.clone();
        out.class = if ratio > thresh {
            ClassLabel::Agglomerated
        } else {
            ClassLabel::Single
        };
        out
    })
}

/// Labels every instance covered by more than half by the union of the
/// circled regions as agglomerated, every other instance as single.
pub fn generate_pseudo_labels(instances: &InstanceSet, regions: &[CoarseRegion]) -> Result<InstanceSet> {
    let (w, h) = (instances.width(), instances.height());
    let mut union = BinaryMask::empty(w, h);
    for region in regions {
        union.union_in_place(&rasterize_region(region, w, h)?);
    }
    relabel_by_coverage(instances, &union, DEFAULT_AGGLOMERATION_THRESH)
}

/// Keeps the segmentation model's geometry and takes classes from the
/// classification model: a segmented instance becomes agglomerated when more
/// than `thresh` of it lies inside the union of the classifier's
/// agglomerated masks.
pub fn refine_classification(seg: &InstanceSet, cls: &InstanceSet, thresh: f64) -> Result<InstanceSet> {
    cls.check_same_dims(seg.width(), seg.height())?;
    let agglomerated = cls.union_mask(|i| i.class == ClassLabel::Agglomerated);
    relabel_by_coverage(seg, &agglomerated, thresh)
}

/// Union of the rasterized regions; regions that miss the image are skipped.
pub fn regions_mask(regions: &[CoarseRegion], width: usize, height: usize) -> BinaryMask {
    let mut union = BinaryMask::empty(width, height);
    for region in regions {
        if let Ok(m) = rasterize_region(region, width, height) {
            union.union_in_place(&m);
        }
    }
    union
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::mask::Instance;
    use alloc::vec;
    use alloc::vec::Vec;

    fn labels(set: &InstanceSet) -> Vec<(u64, ClassLabel)> {
        set.instances().iter().map(|i| (i.id, i.class)).collect()
    }

    fn rows(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::from_fn(w, h, f)
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> CoarseRegion {
        CoarseRegion::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]).unwrap()
    }

    #[test]
    fn pseudo_labels_inside_outside_and_half() {
        let set = InstanceSet::new(
            10,
            4,
            vec![
                Instance::new(1, rows(10, 4, |x, y| x < 2 && y < 2)),
                Instance::new(2, rows(10, 4, |x, y| x >= 8 && y >= 2)),
                // 4 pixels, 2 of them inside the region
                Instance::new(3, rows(10, 4, |x, y| (3..7).contains(&x) && y == 3)),
            ],
        )
        .unwrap();
        let regions = [square(0.0, 0.0, 3.0, 3.0), square(2.0, 3.0, 5.0, 4.0)];
        let out = generate_pseudo_labels(&set, &regions).unwrap();
        assert_eq!(
            labels(&out),
            vec![
                (1, ClassLabel::Agglomerated),
                (2, ClassLabel::Single),
                (3, ClassLabel::Single)
            ]
        );
        // masks untouched
        assert_eq!(out.instances()[2].mask, set.instances()[2].mask);
    }

    #[test]
    fn pseudo_labels_propagate_degenerate_region() {
        let set = InstanceSet::new(4, 4, vec![Instance::new(1, rows(4, 4, |x, _| x == 0))]).unwrap();
        let outside = square(10.0, 10.0, 12.0, 12.0);
        assert_eq!(generate_pseudo_labels(&set, &[outside]), Err(Error::DegeneratePolygon));
    }

    #[test]
    fn refine_examples() {
        let a = rows(8, 2, |x, _| x < 4);
        let b = rows(8, 2, |x, _| x >= 4);
        let seg = InstanceSet::new(8, 2, vec![Instance::new(1, a.clone()), Instance::new(2, b.clone())]).unwrap();

        let no_agg = InstanceSet::new(8, 2, vec![Instance::new(5, a.clone()).with_class(ClassLabel::Single)]).unwrap();
        let out = refine_classification(&seg, &no_agg, 0.5).unwrap();
        assert!(out.instances().iter().all(|i| i.class == ClassLabel::Single));

        let agg = InstanceSet::new(8, 2, vec![Instance::new(5, a.clone()).with_class(ClassLabel::Agglomerated)]).unwrap();
        let out = refine_classification(&seg, &agg, 0.5).unwrap();
        assert_eq!(labels(&out), vec![(1, ClassLabel::Agglomerated), (2, ClassLabel::Single)]);
        assert_eq!(out.instances()[0].mask, a);
    }

    #[test]
    fn refine_exactly_at_threshold_is_single() {
        let seg = InstanceSet::new(4, 1, vec![Instance::new(1, rows(4, 1, |_, _| true))]).unwrap();
        let cls = InstanceSet::new(
            4,
            1,
            vec![Instance::new(9, rows(4, 1, |x, _| x < 2)).with_class(ClassLabel::Agglomerated)],
        )
        .unwrap();
        let out = refine_classification(&seg, &cls, 0.5).unwrap();
        assert_eq!(out.instances()[0].class, ClassLabel::Single);
        let out = refine_classification(&seg, &cls, 0.49).unwrap();
        assert_eq!(out.instances()[0].class, ClassLabel::Agglomerated);
    }

    #[test]
    fn refine_dimension_mismatch() {
        let seg = InstanceSet::empty(4, 1).unwrap();
        let cls = InstanceSet::empty(5, 1).unwrap();
        assert!(matches!(refine_classification(&seg, &cls, 0.5), Err(Error::DimensionMismatch { .. })));
    }
}
