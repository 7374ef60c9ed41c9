//! Loading a prepared dataset directory into the shapes the training and
//! evaluation code expects.

use std::collections::BTreeMap;
use std::path::Path;

use cxseg_core::data::io::{DatasetDir, DatasetMeta, SplitManifest};
use cxseg_core::data::{DatasetItem, ImageRecord, PairSample, TargetMask, NO_FINDING_CLASS};
use cxseg_core::error::{Error, Result};
use cxseg_core::models::ResolvedPair;

pub struct LoadedDataset {
    pub dir: DatasetDir,
    pub meta: DatasetMeta,
    pub splits: SplitManifest,
    items: BTreeMap<String, DatasetItem>,
}

impl LoadedDataset {
    pub fn load(root: &Path) -> Result<Self> {
        let dir = DatasetDir::new(root);
        if !dir.meta_path().exists() {
            return Err(Error::MissingDependency(format!(
                "no dataset at {} (run `synth` or `ingest` first)",
                root.display()
            )));
        }
        let meta = dir.read_meta()?;
        let splits = dir.read_splits()?;
        // surface missing mask files as one data error naming every image,
        // not as the io error of whichever file is read first
        let mut missing: Vec<String> = Vec::new();
        for id in splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .chain(&splits.unseen)
        {
            if !dir.mask_path(id).exists() {
                missing.push(id.clone());
            }
        }
        if !missing.is_empty() {
            return Err(Error::data(format!(
                "missing ground-truth masks for: {}",
                missing.join(", ")
            )));
        }
        let items = dir
            .load_items()?
            .into_iter()
            .map(|it| (it.record.image_id.clone(), it))
            .collect();
        Ok(LoadedDataset {
            dir,
            meta,
            splits,
            items,
        })
    }

    pub fn item(&self, id: &str) -> Result<&DatasetItem> {
        self.items
            .get(id)
            .ok_or_else(|| Error::data(format!("image {id} is in the split manifest but not the dataset")))
    }

    pub fn split_items(&self, ids: &[String]) -> Result<Vec<&DatasetItem>> {
        ids.iter().map(|id| self.item(id)).collect()
    }

    /// (scan, full abnormality mask) pairs for segmentation training.
    pub fn seg_set(&self, ids: &[String]) -> Result<Vec<(ImageRecord, TargetMask)>> {
        Ok(self
            .split_items(ids)?
            .into_iter()
            .map(|it| (it.record.clone(), it.mask.clone()))
            .collect())
    }

    pub fn resolve_pairs(&self, pairs: &[PairSample]) -> Result<Vec<ResolvedPair>> {
        pairs
            .iter()
            .map(|p| {
                Ok(ResolvedPair {
                    a: self.item(&p.image_a)?.record.clone(),
                    b: self.item(&p.image_b)?.record.clone(),
                    label: p.label,
                })
            })
            .collect()
    }

    /// Class ids annotated on any of `ids`, sorted, no-finding excluded.
    pub fn class_ids(&self, ids: &[String]) -> Result<Vec<u8>> {
        let mut classes: Vec<u8> = self
            .split_items(ids)?
            .iter()
            .flat_map(|it| it.boxes.iter())
            .filter(|b| b.class_id != NO_FINDING_CLASS)
            .map(|b| b.class_id)
            .collect();
        classes.sort_unstable();
        classes.dedup();
        Ok(classes)
    }

    /// Verify every listed image has a mask file; error names the missing.
    pub fn check_masks(&self, ids: &[String]) -> Result<()> {
        let missing: Vec<&str> = ids
            .iter()
            .filter(|id| !self.dir.mask_path(id).exists())
            .map(|s| s.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::data(format!(
                "missing ground-truth masks for: {}",
                missing.join(", ")
            )))
        }
    }

    /// All ids the evaluation protocol covers: test split plus unseen-class
    /// images.
    pub fn eval_ids(&self) -> Vec<String> {
        let mut ids = self.splits.test.clone();
        ids.extend(self.splits.unseen.iter().cloned());
        ids
    }
}
