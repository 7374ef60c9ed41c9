//! 50/50 balanced subsets for specialized per-class models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::raster::rasterize_class_mask;
use crate::data::types::{ImageRecord, TargetMask};
use crate::data::DatasetItem;
use crate::error::{Error, Result};

/// Build the training subset for the specialized model of `class_id`.
///
/// All positives of the class are paired with an equal number of
/// seeded-random non-class scans carrying all-zero masks. Positive masks
/// contain only boxes of `class_id`. When fewer non-class scans exist than
/// positives, positives are downsampled to the minimum count so the subset
/// stays 50/50.
pub fn make_balanced_subset(
    items: &[DatasetItem],
    class_id: u8,
    seed: u64,
) -> Result<Vec<(ImageRecord, TargetMask)>> {
    if class_id > 13 {
        return Err(Error::config(format!(
            "class_id {class_id} outside specialized range 0..13"
        )));
    }
    let mut positives: Vec<&DatasetItem> = items
        .iter()
        .filter(|it| it.boxes.iter().any(|b| b.class_id == class_id))
        .collect();
    let mut others: Vec<&DatasetItem> = items
        .iter()
        .filter(|it| !it.boxes.iter().any(|b| b.class_id == class_id))
        .collect();
    if positives.is_empty() {
        return Err(Error::data(format!(
            "no positives for class {class_id}; cannot build a specialized subset"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    others.shuffle(&mut rng);
    let n = positives.len().min(others.len());
    if n < positives.len() {
        positives.shuffle(&mut rng);
        positives.truncate(n);
    }

    let target_size = items[0].record.input_size();
    let mut out = Vec::with_capacity(2 * n);
    for it in positives {
        let mask = rasterize_class_mask(
            &it.boxes,
            class_id,
            it.record.original_size,
            target_size,
        )?;
        out.push((it.record.clone(), mask));
    }
    for it in others.into_iter().take(n) {
        out.push((it.record.clone(), TargetMask::zeros(target_size)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::item_with_classes;

    #[test]
    fn equal_counts_of_positives_and_negatives() {
        let mut items: Vec<DatasetItem> =
            (0..30).map(|i| item_with_classes(&format!("p{i}"), &[2])).collect();
        items.extend((0..100).map(|i| item_with_classes(&format!("n{i}"), &[])));
        let subset = make_balanced_subset(&items, 2, 0).unwrap();
        assert_eq!(subset.len(), 60);
        let positives = subset.iter().filter(|(_, m)| !m.is_empty()).count();
        assert_eq!(positives, 30);
    }

    #[test]
    fn downsamples_positives_when_negatives_are_scarce() {
        let mut items: Vec<DatasetItem> =
            (0..30).map(|i| item_with_classes(&format!("p{i}"), &[2])).collect();
        items.extend((0..10).map(|i| item_with_classes(&format!("n{i}"), &[])));
        let subset = make_balanced_subset(&items, 2, 0).unwrap();
        assert_eq!(subset.len(), 20);
    }

    #[test]
    fn zero_positives_is_an_error() {
        let items: Vec<DatasetItem> =
            (0..5).map(|i| item_with_classes(&format!("n{i}"), &[])).collect();
        assert!(make_balanced_subset(&items, 2, 0).is_err());
    }

    #[test]
    fn positive_masks_contain_only_the_requested_class() {
        // One image carries class 1 and class 2 boxes in different corners.
        let items = vec![item_with_classes("both", &[1, 2])];
        let err = make_balanced_subset(&items, 2, 0);
        // No negatives exist, so min-count is zero positives -> empty, but the
        // contract requires at least one positive pairing; verify mask content
        // through a mixed dataset instead.
        assert!(err.is_ok());
        let mut items = vec![item_with_classes("both", &[1, 2])];
        items.push(item_with_classes("neg", &[]));
        let subset = make_balanced_subset(&items, 2, 0).unwrap();
        let (_, mask) = &subset[0];
        // class 2 box occupies its own quadrant; class 1 pixels must be absent
        let class1 = item_with_classes("ref", &[1]);
        let class1_mask = rasterize_class_mask(&class1.boxes, 1, (32, 32), 32).unwrap();
        for (a, b) in mask.values.iter().zip(class1_mask.values.iter()) {
            assert!(!(*a == 1 && *b == 1), "class-1 pixels leaked into class-2 mask");
        }
        assert!(!mask.is_empty());
    }
}
