//! The six CLI verbs. Each returns `Ok(())` on success; errors map to the
//! exit-code contract in [`crate::run::exit_code`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use cxseg_core::config::ExperimentConfig;
use cxseg_core::data::io::{DatasetDir, DatasetMeta, SplitManifest};
use cxseg_core::data::pairs::{read_pair_manifest, write_pair_manifest};
use cxseg_core::data::{
    generate_synthetic_dataset, load_and_normalize_scan, make_balanced_subset, make_pairs,
    make_splits, make_synthetic_splits, parse_annotations, rasterize_mask, AnnotationBox,
    ImageRecord, Source, TargetMask,
};
use cxseg_core::ensembles::{apply_model_ensemble, max_ensemble, train_model_ensemble};
use cxseg_core::error::{Error, Result};
use cxseg_core::metrics::report::{evaluate_dataset, threshold_map, EvalReport, EvalSample};
use cxseg_core::models::{
    pair_accuracy, train_segmentation, train_siamese, ModelHandle, ResolvedPair,
};

use crate::dataset::LoadedDataset;
use crate::plots;
use crate::run::{
    class_checkpoint_name, list_class_checkpoints, RunDirectory, CHEXNOMALY, FUSION, SIAMESE,
    SUPERMODEL,
};

/// Which model family `train` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Family {
    Specialized,
    Supermodel,
    Siamese,
    Chexnomaly,
    ModelEnsemble,
}

/// Which checkpoint (or ensemble scheme) `eval` scores.
#[derive(Debug, Clone)]
pub enum EvalModel {
    Checkpoint(String),
    MaxEnsemble,
    ModelEnsemble,
}

impl EvalModel {
    pub fn parse(name: &str) -> Self {
        match name {
            "max_ensemble" => EvalModel::MaxEnsemble,
            "model_ensemble" => EvalModel::ModelEnsemble,
            other => EvalModel::Checkpoint(other.to_string()),
        }
    }

    fn label(&self) -> &str {
        match self {
            EvalModel::Checkpoint(n) => n,
            EvalModel::MaxEnsemble => "max_ensemble",
            EvalModel::ModelEnsemble => "model_ensemble",
        }
    }
}

// --- synth ---

pub fn cmd_synth(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = config
        .dataset
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::config("config has no [dataset.synthetic] section"))?;
    spec.validate(config.model.unet.depth)?;
    let records = generate_synthetic_dataset(spec, config.seed)?;

    let dir = DatasetDir::new(out);
    dir.create_dirs()?;
    let mut rows = Vec::new();
    let mut meta = DatasetMeta {
        image_size: spec.image_size,
        source: Some(Source::Synthetic),
        ..Default::default()
    };
    for r in &records {
        dir.write_item(&r.item)?;
        for b in &r.item.boxes {
            rows.push((r.item.record.image_id.clone(), b.clone()));
        }
        meta.original_sizes.insert(
            r.item.record.image_id.clone(),
            r.item.record.original_size,
        );
        if let Some(c) = r.class {
            meta.classes.insert(r.item.record.image_id.clone(), c);
        }
    }
    dir.write_annotation_rows(&rows)?;
    dir.write_meta(&meta)?;

    let splits = make_synthetic_splits(
        &records,
        spec.held_out_class,
        config.dataset.split_ratios,
        config.seed,
    )?;
    let manifest = SplitManifest::from_splits(splits.base, splits.unseen);
    dir.write_splits(&manifest)?;

    // contrastive pairs over the train split
    let by_id: BTreeMap<&str, &ImageRecord> = records
        .iter()
        .map(|r| (r.item.record.image_id.as_str(), &r.item.record))
        .collect();
    let train_records: Vec<ImageRecord> = manifest
        .train
        .iter()
        .map(|id| (*by_id[id.as_str()]).clone())
        .collect();
    let pairs = make_pairs(&train_records, config.dataset.n_pairs, config.seed)?;
    let file = fs::File::create(dir.pairs_path()).map_err(|e| Error::io(dir.pairs_path(), e))?;
    write_pair_manifest(file, &pairs)?;

    println!(
        "dataset: {} images ({} positive), {} classes, splits {}/{}/{} + {} unseen, {} pairs",
        records.len(),
        records.iter().filter(|r| r.item.record.is_positive).count(),
        spec.n_classes,
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        manifest.unseen.len(),
        pairs.len(),
    );
    Ok(())
}

// --- ingest ---

/// Ingest a directory of DICOM scans plus an annotation CSV into the
/// standard dataset layout.
pub fn cmd_ingest(
    config: &ExperimentConfig,
    input: &Path,
    annotations: &Path,
    out: &Path,
) -> Result<()> {
    let size = config.model.unet.input_size;
    let file = fs::File::open(annotations).map_err(|e| Error::io(annotations, e))?;
    let mut by_image: BTreeMap<String, Vec<AnnotationBox>> = BTreeMap::new();
    for (id, b) in parse_annotations(file)? {
        by_image.entry(id).or_default().push(b);
    }

    let mut entries: Vec<_> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(input, e))?;
    entries.sort_by_key(|e| e.file_name());

    let dir = DatasetDir::new(out);
    dir.create_dirs()?;
    let mut meta = DatasetMeta {
        image_size: size,
        source: Some(Source::Real),
        ..Default::default()
    };
    let mut rows = Vec::new();
    let mut n = 0usize;
    for entry in entries {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("dcm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Ingest {
                path: path.clone(),
                msg: "unreadable file name".into(),
            })?
            .to_string();
        let mut record = load_and_normalize_scan(&path, size)?;
        record.image_id = stem.clone();
        let boxes = by_image
            .remove(&stem)
            .unwrap_or_else(|| vec![AnnotationBox::no_finding("none")]);
        record.is_positive = boxes.iter().any(|b| !b.is_no_finding());
        let mask = if record.is_positive {
            rasterize_mask(&boxes, record.original_size, size)?
        } else {
            TargetMask::zeros(size)
        };
        meta.original_sizes.insert(stem.clone(), record.original_size);
        for b in &boxes {
            rows.push((stem.clone(), b.clone()));
        }
        dir.write_item(&cxseg_core::data::DatasetItem {
            record,
            boxes,
            mask,
        })?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::data(format!(
            "no .dcm files found under {}",
            input.display()
        )));
    }
    if !by_image.is_empty() {
        let ids: Vec<&str> = by_image.keys().map(|s| s.as_str()).collect();
        return Err(Error::data(format!(
            "annotations reference missing scans: {}",
            ids.join(", ")
        )));
    }
    dir.write_annotation_rows(&rows)?;
    dir.write_meta(&meta)?;
    println!("ingested {n} scans into {}", out.display());
    Ok(())
}

// --- split ---

/// (Re)compute `splits.json` for an existing dataset from the configured
/// ratios; synthetic held-out classes go to the unseen list.
pub fn cmd_split(config: &ExperimentConfig, dataset: &Path) -> Result<()> {
    let dir = DatasetDir::new(dataset);
    let meta = dir.read_meta()?;
    let file = fs::File::open(dir.annotations_path())
        .map_err(|e| Error::io(dir.annotations_path(), e))?;
    let mut ids: Vec<String> = parse_annotations(file)?
        .into_iter()
        .map(|(id, _)| id)
        .collect();
    ids.sort();
    ids.dedup();

    let held_out = config
        .dataset
        .synthetic
        .as_ref()
        .map(|s| s.held_out_class);
    let (pool, unseen): (Vec<String>, Vec<String>) = ids.into_iter().partition(|id| {
        held_out.is_none() || meta.classes.get(id).copied() != held_out
    });
    if pool.is_empty() {
        return Err(Error::data("no images left to split"));
    }
    let base = make_splits(&pool, config.dataset.split_ratios, config.seed)?;
    let manifest = SplitManifest::from_splits(base, unseen);
    dir.write_splits(&manifest)?;
    println!(
        "splits: {} train / {} val / {} test / {} unseen",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        manifest.unseen.len()
    );
    Ok(())
}

// --- train ---

pub fn cmd_train(
    config: &ExperimentConfig,
    family: Family,
    run: &RunDirectory,
    siamese_run: Option<&Path>,
) -> Result<()> {
    let _lock = run.lock()?;
    config.save(&run.config_path())?;
    let ds = LoadedDataset::load(&config.dataset.dir)?;
    let train_ids = ds.splits.train.clone();
    let val_ids = ds.splits.val.clone();
    if val_ids.is_empty() {
        return Err(Error::data("validation split is empty; adjust split ratios"));
    }
    let ckpt = run.checkpoints_dir();

    match family {
        Family::Specialized => {
            let train_items: Vec<_> = ds
                .split_items(&train_ids)?
                .into_iter()
                .cloned()
                .collect();
            let val_items: Vec<_> = ds.split_items(&val_ids)?.into_iter().cloned().collect();
            let classes = ds.class_ids(&train_ids)?;
            if classes.is_empty() {
                return Err(Error::data("no annotated classes in the train split"));
            }
            for &c in &classes {
                let subset = make_balanced_subset(&train_items, c, config.seed)?;
                // val positives of a class can be absent at desk scale;
                // fall back to the train subset for early stopping
                let val_subset = make_balanced_subset(&val_items, c, config.seed)
                    .unwrap_or_else(|_| subset.clone());
                let model =
                    ModelHandle::build_unet(&config.model.unet, config.seed + c as u64)?;
                let history = train_segmentation(
                    &model,
                    &subset,
                    &val_subset,
                    &config.loss.focal,
                    config.loss.sharpness,
                    &config.train,
                )?;
                let name = class_checkpoint_name(c);
                model.save(&ckpt, &name)?;
                history.write_json(&run.history_path(&name))?;
                println!(
                    "{name}: {} examples, best epoch {}, val loss {:.5}",
                    subset.len(),
                    history.best_epoch,
                    history.val_loss[history.best_epoch]
                );
            }
        }
        Family::Supermodel => {
            let train_set = ds.seg_set(&train_ids)?;
            let val_set = ds.seg_set(&val_ids)?;
            let model = ModelHandle::build_unet(&config.model.unet, config.seed)?;
            let history = train_segmentation(
                &model,
                &train_set,
                &val_set,
                &config.loss.focal,
                config.loss.sharpness,
                &config.train,
            )?;
            model.save(&ckpt, SUPERMODEL)?;
            history.write_json(&run.history_path(SUPERMODEL))?;
            println!(
                "{SUPERMODEL}: best epoch {}, val loss {:.5}",
                history.best_epoch, history.val_loss[history.best_epoch]
            );
        }
        Family::Siamese => {
            let file = fs::File::open(ds.dir.pairs_path())
                .map_err(|_| Error::MissingDependency("pairs.csv (run `synth` first)".into()))?;
            let train_pairs = ds.resolve_pairs(&read_pair_manifest(file)?)?;
            let val_pairs = make_val_pairs(&ds, &val_ids, config)?;
            let model = ModelHandle::build_siamese(&config.model.siamese, config.seed)?;
            let history = train_siamese(
                &model,
                &train_pairs,
                &val_pairs,
                &config.loss.contrastive,
                &config.train,
            )?;
            model.save(&ckpt, SIAMESE)?;
            history.write_json(&run.history_path(SIAMESE))?;
            let accuracy = pair_accuracy(&model, &val_pairs)?;
            println!(
                "{SIAMESE}: {} train pairs, held-out accuracy {accuracy:.3}",
                train_pairs.len()
            );
        }
        Family::Chexnomaly => {
            let source = siamese_run.map(Path::to_path_buf).unwrap_or_else(|| run.root.clone());
            let source_ckpt = RunDirectory::new(source).checkpoints_dir();
            let siamese = ModelHandle::load(&source_ckpt, SIAMESE).map_err(|_| {
                Error::MissingDependency(format!(
                    "siamese checkpoint not found under {} (train family=siamese first)",
                    source_ckpt.display()
                ))
            })?;
            let model =
                ModelHandle::assemble_transfer(&siamese, &config.model.unet, config.seed)?;
            let train_set = ds.seg_set(&train_ids)?;
            let val_set = ds.seg_set(&val_ids)?;
            let history = train_segmentation(
                &model,
                &train_set,
                &val_set,
                &config.loss.focal,
                config.loss.sharpness,
                &config.train,
            )?;
            model.save(&ckpt, CHEXNOMALY)?;
            history.write_json(&run.history_path(CHEXNOMALY))?;
            println!(
                "{CHEXNOMALY}: best epoch {}, val loss {:.5}",
                history.best_epoch, history.val_loss[history.best_epoch]
            );
        }
        Family::ModelEnsemble => {
            let specialists = load_specialists(&ckpt)?;
            let train_set = ds.seg_set(&train_ids)?;
            let val_set = ds.seg_set(&val_ids)?;
            let (fusion, history) = train_model_ensemble(
                &specialists,
                &train_set,
                &val_set,
                config.model.fusion_hidden,
                &config.loss.focal,
                &config.train,
                config.seed,
            )?;
            fusion.save(&ckpt, FUSION)?;
            history.write_json(&run.history_path(FUSION))?;
            println!(
                "{FUSION}: {} specialists, best epoch {}",
                specialists.len(),
                history.best_epoch
            );
        }
    }
    Ok(())
}

fn make_val_pairs(
    ds: &LoadedDataset,
    val_ids: &[String],
    config: &ExperimentConfig,
) -> Result<Vec<ResolvedPair>> {
    let val_records: Vec<ImageRecord> = ds
        .split_items(val_ids)?
        .into_iter()
        .map(|it| it.record.clone())
        .collect();
    let n = (config.dataset.n_pairs / 5).max(8);
    // distinct stream from the train pairs
    let pairs = make_pairs(&val_records, n, config.seed ^ 0x9e3779b97f4a7c15)?;
    ds.resolve_pairs(&pairs)
}

fn load_specialists(ckpt: &Path) -> Result<Vec<ModelHandle>> {
    let found = list_class_checkpoints(ckpt)?;
    if found.is_empty() {
        return Err(Error::MissingDependency(format!(
            "no specialized checkpoints under {} (train family=specialized first)",
            ckpt.display()
        )));
    }
    found
        .iter()
        .map(|(_, name)| ModelHandle::load(ckpt, name))
        .collect()
}

// --- eval ---

pub fn cmd_eval(config: &ExperimentConfig, run: &RunDirectory, model: &EvalModel) -> Result<()> {
    let ds = LoadedDataset::load(&config.dataset.dir)?;
    let ids = ds.eval_ids();
    if ids.is_empty() {
        return Err(Error::data("nothing to evaluate: test and unseen splits are empty"));
    }
    ds.check_masks(&ids)?;
    let ckpt = run.checkpoints_dir();
    let exact = config.loss.exact_rect_postprocess;
    let threshold = config.eval.threshold;

    // probability map per image under the chosen scheme
    let predict: Box<dyn Fn(&ImageRecord) -> Result<Array2<f32>>> = match model {
        EvalModel::Checkpoint(name) => {
            let handle = ModelHandle::load(&ckpt, name)?;
            Box::new(move |r: &ImageRecord| handle.predict_map(r))
        }
        EvalModel::MaxEnsemble => {
            let specialists = load_specialists(&ckpt)?;
            Box::new(move |r: &ImageRecord| {
                let maps: Vec<Array2<f32>> = specialists
                    .iter()
                    .map(|m| m.predict_map(r))
                    .collect::<Result<_>>()?;
                max_ensemble(&maps)
            })
        }
        EvalModel::ModelEnsemble => {
            let specialists = load_specialists(&ckpt)?;
            let fusion = ModelHandle::load(&ckpt, FUSION)?;
            Box::new(move |r: &ImageRecord| apply_model_ensemble(&specialists, &fusion, r))
        }
    };

    let pred_dir = run.predictions_dir(model.label());
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    let mut samples = Vec::with_capacity(ids.len());
    for id in &ids {
        let item = ds.item(id)?;
        let mut map = predict(&item.record)?;
        if exact {
            map = exact_rect(&map)?;
        }
        let mask = threshold_map(&map, threshold);
        cxseg_core::data::io::write_probability_png(
            &pred_dir.join(format!("{id}.prob.png")),
            &map,
        )?;
        cxseg_core::data::io::write_mask_png(
            &pred_dir.join(format!("{id}.mask.png")),
            &TargetMask::from_values(mask)?,
        )?;
        let classes: Vec<u8> = item
            .boxes
            .iter()
            .filter(|b| !b.is_no_finding())
            .map(|b| b.class_id)
            .collect();
        samples.push(EvalSample {
            image_id: id.clone(),
            gt: item.mask.clone(),
            probability: map,
            classes,
        });
    }
    let report = evaluate_dataset(&samples, &config.eval)?;
    report.write_json(&run.report_json_path())?;
    let csv_path = run.report_csv_path();
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    report.write_csv(file)?;
    println!(
        "{}: {} images, mean IoU {:.4}, MAE {:.4}, detection F1 {:.4}",
        model.label(),
        report.per_image.len(),
        report.aggregates.mean_iou,
        report.aggregates.mean_mae,
        report.aggregates.detection_f1_all
    );
    Ok(())
}

fn exact_rect(map: &Array2<f32>) -> Result<Array2<f32>> {
    use cxseg_core::losses::tensor::rect_transform_exact_t;
    let t = cxseg_core::models::handle::map_to_tensor(map)?;
    let r = rect_transform_exact_t(&t)?;
    cxseg_core::models::handle::tensor_to_map(&r.squeeze(0)?.squeeze(0)?)
}

// --- report ---

pub fn cmd_report(run_dirs: &[&Path], out: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        return Err(Error::config("report needs at least one run directory"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut runs = Vec::new();
    for &dir in run_dirs {
        let run = RunDirectory::new(dir);
        if !run.report_json_path().exists() {
            return Err(Error::MissingDependency(format!(
                "no report.json under {} (run `eval` first)",
                dir.display()
            )));
        }
        let report = EvalReport::read_json(&run.report_json_path())?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        runs.push((name, run, report));
    }

    write_comparison_csv(&out.join("comparison.csv"), &runs)?;
    for (name, _, report) in &runs {
        plots::write_histogram(
            &out.join(format!("histogram_{name}.png")),
            &report.aggregates.histogram,
        )?;
    }

    // heatmaps + overlays come from the first run's dataset snapshot
    let (_, first_run, _) = &runs[0];
    if first_run.config_path().exists() {
        let config = ExperimentConfig::load(&first_run.config_path())?;
        if let Ok(ds) = LoadedDataset::load(&config.dataset.dir) {
            write_class_heatmaps(out, &ds)?;
            for (name, run, report) in &runs {
                write_overlays(out, name, run, &ds, report)?;
            }
        }
    }
    println!("report artifacts written to {}", out.display());
    Ok(())
}

fn write_comparison_csv(
    path: &Path,
    runs: &[(String, RunDirectory, EvalReport)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(runs.iter().map(|(n, _, _)| n.clone()));
    w.write_record(&header)?;
    let metrics: [(&str, Box<dyn Fn(&EvalReport) -> String>); 8] = [
        ("mean_mae", Box::new(|r| format!("{:.6}", r.aggregates.mean_mae))),
        ("mean_iou", Box::new(|r| format!("{:.6}", r.aggregates.mean_iou))),
        ("mean_pixel_f1", Box::new(|r| format!("{:.6}", r.aggregates.mean_pixel_f1))),
        ("detection_f1_all", Box::new(|r| format!("{:.6}", r.aggregates.detection_f1_all))),
        ("detection_f1_positive", Box::new(|r| format!("{:.6}", r.aggregates.detection_f1_positive))),
        ("tp", Box::new(|r| r.aggregates.confusion.tp.to_string())),
        ("fp", Box::new(|r| r.aggregates.confusion.fp.to_string())),
        ("fn", Box::new(|r| r.aggregates.confusion.fn_.to_string())),
    ];
    for (name, f) in &metrics {
        let mut row = vec![name.to_string()];
        row.extend(runs.iter().map(|(_, _, r)| f(r)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-class mask-density heatmaps over the whole dataset.
fn write_class_heatmaps(out: &Path, ds: &LoadedDataset) -> Result<()> {
    let mut per_class: BTreeMap<usize, (Array2<f32>, usize)> = BTreeMap::new();
    let ids: Vec<String> = ds
        .splits
        .train
        .iter()
        .chain(&ds.splits.val)
        .chain(&ds.splits.test)
        .chain(&ds.splits.unseen)
        .cloned()
        .collect();
    for id in &ids {
        let Some(&class) = ds.meta.classes.get(id) else {
            continue;
        };
        let item = ds.item(id)?;
        let (h, w) = item.mask.values.dim();
        let entry = per_class
            .entry(class)
            .or_insert_with(|| (Array2::zeros((h, w)), 0));
        for (acc, &v) in entry.0.iter_mut().zip(item.mask.values.iter()) {
            *acc += v as f32;
        }
        entry.1 += 1;
    }
    for (class, (sum, count)) in per_class {
        let density = sum.mapv(|v| v / count as f32);
        plots::write_heatmap(&out.join(format!("heatmap_class_{class}.png")), &density)?;
    }
    Ok(())
}

/// Image/GT/prediction grid over the first few evaluated images.
fn write_overlays(
    out: &Path,
    name: &str,
    run: &RunDirectory,
    ds: &LoadedDataset,
    report: &EvalReport,
) -> Result<()> {
    let mut rows = Vec::new();
    for row in report.per_image.iter().take(4) {
        // any model's predictions directory that has this image
        let pred_root = run.root.join("predictions");
        let Ok(models) = fs::read_dir(&pred_root) else {
            return Ok(());
        };
        let mut pred = None;
        for model in models.flatten() {
            let p = model.path().join(format!("{}.mask.png", row.image_id));
            if p.exists() {
                pred = Some(cxseg_core::data::io::read_mask_png(&p)?);
                break;
            }
        }
        let Some(pred) = pred else { continue };
        let item = ds.item(&row.image_id)?;
        rows.push((
            item.record.pixels.clone(),
            item.mask.values.clone(),
            pred.values,
        ));
    }
    if !rows.is_empty() {
        plots::write_overlay_grid(&out.join(format!("overlays_{name}.png")), &rows)?;
    }
    Ok(())
}
