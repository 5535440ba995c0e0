//! C ABI over esa-core. Handles are opaque boxes owned by the caller and
//! released through the matching esa_*_free. Every fallible call returns 0 on
//! success or the library's error code (2 config, 3 io/format, 4 invariant);
//! the message is readable via esa_last_error until the next failure on the
//! same thread. Null pointers are reported as invariant errors, panics are
//! caught at the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use esa_core::acquisition::{combined_score, pixel_entropy, ScoreMode};
use esa_core::config::RunConfig;
use esa_core::dataset::{generate_dataset, Domain};
use esa_core::entity::{entity_score_seed, synth_entities, EntitySet};
use esa_core::evaluation::{confusion, miou, RunReport};
use esa_core::objective::{ce_loss, negative_loss, LossParams, NegIndicator};
use esa_core::oracle::oracle_label_region;
use esa_core::raster::{
    read_image, read_label_map, read_prob_map, read_region_map, write_image, write_label_map,
    write_prob_map, write_region_map, Image, LabelMap, ProbabilityMap, RegionMap,
};
use esa_core::selection::{select_topk, StrategyKind};
use esa_core::superpixel::{grid_regions, slic, SlicParams};
use esa_core::trainer::run_loop;
use esa_core::{EsaError, Result};

pub const ESA_OK: i32 = 0;
pub const ESA_ERR_CONFIG: i32 = 2;
pub const ESA_ERR_IO: i32 = 3;
pub const ESA_ERR_INVARIANT: i32 = 4;

pub struct EsaImage(Image);
pub struct EsaLabels(LabelMap);
pub struct EsaProbs(ProbabilityMap);
pub struct EsaRegions(RegionMap);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn remember(code: i32, message: String) -> i32 {
    let printable = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(printable).unwrap_or_default();
    });
    code
}

fn guarded(body: impl FnOnce() -> Result<()>) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ESA_OK,
        Ok(Err(e)) => remember(e.exit_code(), e.to_string()),
        Err(_) => remember(ESA_ERR_INVARIANT, "internal panic".to_string()),
    }
}

fn null_arg(name: &str) -> EsaError {
    EsaError::invariant(format!("null pointer argument '{name}'"))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T> {
    p.as_ref().ok_or_else(|| null_arg(name))
}

unsafe fn out_slot<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T> {
    p.as_mut().ok_or_else(|| null_arg(name))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str> {
    if p.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| EsaError::config(name, "not valid UTF-8".to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn esa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failing call on this thread; empty before the
/// first failure. The pointer stays valid until the next failing call.
#[no_mangle]
pub extern "C" fn esa_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn esa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn esa_image_read(path: *const c_char, out: *mut *mut EsaImage) -> i32 {
    guarded(|| {
        let path = text(path, "path")?;
        let slot = out_slot(out, "out")?;
        *slot = Box::into_raw(Box::new(EsaImage(read_image(Path::new(path))?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_image_write(img: *const EsaImage, path: *const c_char) -> i32 {
    guarded(|| {
        let img = handle(img, "img")?;
        write_image(&img.0, Path::new(text(path, "path")?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_image_shape(
    img: *const EsaImage,
    height: *mut u32,
    width: *mut u32,
) -> i32 {
    guarded(|| {
        let img = handle(img, "img")?;
        *out_slot(height, "height")? = img.0.height as u32;
        *out_slot(width, "width")? = img.0.width as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_image_free(img: *mut EsaImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

#[no_mangle]
pub unsafe extern "C" fn esa_labels_read(
    path: *const c_char,
    classes: u32,
    out: *mut *mut EsaLabels,
) -> i32 {
    guarded(|| {
        let path = text(path, "path")?;
        let slot = out_slot(out, "out")?;
        let labels = read_label_map(Path::new(path), classes as usize)?;
        *slot = Box::into_raw(Box::new(EsaLabels(labels)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_labels_write(labels: *const EsaLabels, path: *const c_char) -> i32 {
    guarded(|| {
        let labels = handle(labels, "labels")?;
        write_label_map(&labels.0, Path::new(text(path, "path")?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_labels_shape(
    labels: *const EsaLabels,
    height: *mut u32,
    width: *mut u32,
    classes: *mut u32,
) -> i32 {
    guarded(|| {
        let labels = handle(labels, "labels")?;
        *out_slot(height, "height")? = labels.0.height as u32;
        *out_slot(width, "width")? = labels.0.width as u32;
        *out_slot(classes, "classes")? = labels.0.classes as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_labels_free(labels: *mut EsaLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

#[no_mangle]
pub unsafe extern "C" fn esa_probs_read(path: *const c_char, out: *mut *mut EsaProbs) -> i32 {
    guarded(|| {
        let path = text(path, "path")?;
        let slot = out_slot(out, "out")?;
        *slot = Box::into_raw(Box::new(EsaProbs(read_prob_map(Path::new(path))?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_probs_write(probs: *const EsaProbs, path: *const c_char) -> i32 {
    guarded(|| {
        let probs = handle(probs, "probs")?;
        write_prob_map(&probs.0, Path::new(text(path, "path")?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_probs_shape(
    probs: *const EsaProbs,
    height: *mut u32,
    width: *mut u32,
    channels: *mut u32,
) -> i32 {
    guarded(|| {
        let probs = handle(probs, "probs")?;
        *out_slot(height, "height")? = probs.0.height as u32;
        *out_slot(width, "width")? = probs.0.width as u32;
        *out_slot(channels, "channels")? = probs.0.channels as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_probs_free(probs: *mut EsaProbs) {
    if !probs.is_null() {
        drop(Box::from_raw(probs));
    }
}

#[no_mangle]
pub unsafe extern "C" fn esa_regions_read(path: *const c_char, out: *mut *mut EsaRegions) -> i32 {
    guarded(|| {
        let path = text(path, "path")?;
        let slot = out_slot(out, "out")?;
        *slot = Box::into_raw(Box::new(EsaRegions(read_region_map(Path::new(path))?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_regions_write(regions: *const EsaRegions, path: *const c_char) -> i32 {
    guarded(|| {
        let regions = handle(regions, "regions")?;
        write_region_map(&regions.0, Path::new(text(path, "path")?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_regions_count(regions: *const EsaRegions, count: *mut u32) -> i32 {
    guarded(|| {
        let regions = handle(regions, "regions")?;
        *out_slot(count, "count")? = regions.0.count as u32;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_regions_free(regions: *mut EsaRegions) {
    if !regions.is_null() {
        drop(Box::from_raw(regions));
    }
}

#[no_mangle]
pub unsafe extern "C" fn esa_slic(
    img: *const EsaImage,
    k: u32,
    compactness: f64,
    max_iters: u32,
    min_region_ratio: f64,
    out: *mut *mut EsaRegions,
) -> i32 {
    guarded(|| {
        let img = handle(img, "img")?;
        let slot = out_slot(out, "out")?;
        let params = SlicParams {
            k: k as usize,
            compactness,
            max_iters: max_iters as usize,
            connectivity_min_ratio: min_region_ratio,
        };
        *slot = Box::into_raw(Box::new(EsaRegions(slic(&img.0, &params)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn esa_grid_regions(
    height: u32,
    width: u32,
    cell: u32,
    out: *mut *mut EsaRegions,
) -> i32 {
    guarded(|| {
        let slot = out_slot(out, "out")?;
        let regions = grid_regions(height as usize, width as usize, cell as usize)?;
        *slot = Box::into_raw(Box::new(EsaRegions(regions)));
        Ok(())
    })
}

/// Fills height*width entropies in row-major order.
#[no_mangle]
pub unsafe extern "C" fn esa_pixel_entropy(probs: *const EsaProbs, out_values: *mut f64) -> i32 {
    guarded(|| {
        let probs = handle(probs, "probs")?;
        if out_values.is_null() {
            return Err(null_arg("out_values"));
        }
        let scores = pixel_entropy(&probs.0);
        std::ptr::copy_nonoverlapping(scores.values.as_ptr(), out_values, scores.values.len());
        Ok(())
    })
}

/// Fills one score per region. mode is "uncertainty", "impurity" or "product".
#[no_mangle]
pub unsafe extern "C" fn esa_acquisition(
    probs: *const EsaProbs,
    regions: *const EsaRegions,
    mode: *const c_char,
    out_scores: *mut f64,
) -> i32 {
    guarded(|| {
        let probs = handle(probs, "probs")?;
        let regions = handle(regions, "regions")?;
        let mode: ScoreMode = text(mode, "mode")?
            .parse()
            .map_err(|e: String| EsaError::config("mode", e))?;
        if out_scores.is_null() {
            return Err(null_arg("out_scores"));
        }
        let scores = combined_score(&probs.0, &regions.0, mode)?;
        std::ptr::copy_nonoverlapping(scores.as_ptr(), out_scores, scores.len());
        Ok(())
    })
}

/// Greedy budgeted selection: the k highest-scoring ids outside the excluded
/// set, descending score, ties to the lower id. Writes at most k ids.
#[no_mangle]
pub unsafe extern "C" fn esa_select_topk(
    scores: *const f64,
    count: u32,
    excluded: *const u32,
    excluded_count: u32,
    k: u32,
    out_ids: *mut u32,
    out_count: *mut u32,
) -> i32 {
    guarded(|| {
        if scores.is_null() && count > 0 {
            return Err(null_arg("scores"));
        }
        if excluded.is_null() && excluded_count > 0 {
            return Err(null_arg("excluded"));
        }
        if out_ids.is_null() && k > 0 {
            return Err(null_arg("out_ids"));
        }
        let slot = out_slot(out_count, "out_count")?;
        let scores = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(scores, count as usize)
        };
        let excluded: BTreeSet<u32> = if excluded_count == 0 {
            BTreeSet::new()
        } else {
            std::slice::from_raw_parts(excluded, excluded_count as usize).iter().copied().collect()
        };
        let ids = select_topk(scores, &excluded, k as usize);
        std::ptr::copy_nonoverlapping(ids.as_ptr(), out_ids, ids.len());
        *slot = ids.len() as u32;
        Ok(())
    })
}

/// Majority class of a region under the ground truth; one simulated click.
#[no_mangle]
pub unsafe extern "C" fn esa_oracle_label_region(
    gt: *const EsaLabels,
    regions: *const EsaRegions,
    region: u32,
    out_label: *mut u8,
) -> i32 {
    guarded(|| {
        let gt = handle(gt, "gt")?;
        let regions = handle(regions, "regions")?;
        let slot = out_slot(out_label, "out_label")?;
        *slot = oracle_label_region(&gt.0, &regions.0, region)?;
        Ok(())
    })
}

/// Mean IoU of a prediction against ground truth, IGNORE pixels skipped.
#[no_mangle]
pub unsafe extern "C" fn esa_miou(
    gt: *const EsaLabels,
    pred: *const EsaLabels,
    out_miou: *mut f64,
) -> i32 {
    guarded(|| {
        let gt = handle(gt, "gt")?;
        let pred = handle(pred, "pred")?;
        let slot = out_slot(out_miou, "out_miou")?;
        let matrix = confusion(&gt.0, &pred.0, gt.0.classes)?;
        *slot = miou(&matrix)?.1;
        Ok(())
    })
}

/// Mean cross-entropy of the true-class probabilities over labeled pixels.
#[no_mangle]
pub unsafe extern "C" fn esa_ce_loss(
    probs: *const EsaProbs,
    labels: *const EsaLabels,
    out_loss: *mut f64,
) -> i32 {
    guarded(|| {
        let probs = handle(probs, "probs")?;
        let labels = handle(labels, "labels")?;
        let slot = out_slot(out_loss, "out_loss")?;
        *slot = ce_loss(&probs.0, &labels.0)?.0;
        Ok(())
    })
}

/// Negative loss over entries whose probability clears tau; above selects
/// entries greater than tau when nonzero, below otherwise.
#[no_mangle]
pub unsafe extern "C" fn esa_negative_loss(
    probs: *const EsaProbs,
    tau: f64,
    above: i32,
    out_loss: *mut f64,
) -> i32 {
    guarded(|| {
        let probs = handle(probs, "probs")?;
        let slot = out_slot(out_loss, "out_loss")?;
        let params = LossParams {
            tau,
            negative_indicator: if above != 0 { NegIndicator::Above } else { NegIndicator::Below },
            ..Default::default()
        };
        params.validate()?;
        *slot = negative_loss(&probs.0, &params).0;
        Ok(())
    })
}

/// Runs the full annotation loop on in-memory synthetic data. config_json is
/// a flat JSON object of the same dotted keys the CLI accepts; paths.data and
/// paths.out must stay empty or unset since nothing touches the filesystem.
/// On success *out_report receives a JSON run report to release with
/// esa_string_free.
#[no_mangle]
pub unsafe extern "C" fn esa_run_loop_json(
    config_json: *const c_char,
    out_report: *mut *mut c_char,
) -> i32 {
    guarded(|| {
        let json = text(config_json, "config_json")?;
        let slot = out_slot(out_report, "out_report")?;
        let mut cfg = RunConfig { out_dir: String::new(), ..Default::default() };
        cfg.apply_json(json)?;
        cfg.validate()?;
        if !cfg.data_dir.is_empty() {
            return Err(EsaError::config(
                "paths.data",
                "file datasets are not available through this entry point".to_string(),
            ));
        }
        if !cfg.out_dir.is_empty() {
            return Err(EsaError::config(
                "paths.out",
                "this entry point returns the report instead of writing files".to_string(),
            ));
        }
        let lc = cfg.loop_config()?;
        let spec = cfg.dataset_spec();
        let source = generate_dataset(&spec, Domain::Source)?;
        let target = generate_dataset(&spec, Domain::Target)?;
        let superpixels: Vec<RegionMap> =
            if matches!(lc.strategy.kind, StrategyKind::Sa | StrategyKind::Esa) {
                let params = cfg.slic_params();
                target
                    .iter()
                    .map(|(img, _)| slic(img, &params))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
        let entities: Option<Vec<EntitySet>> =
            if matches!(lc.strategy.kind, StrategyKind::Ea | StrategyKind::Esa) {
                Some(
                    target
                        .iter()
                        .enumerate()
                        .map(|(i, (_, gt))| synth_entities(gt, entity_score_seed(cfg.seed, i as u64)))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
        let outcome = run_loop(&lc, &source, &target, &superpixels, entities.as_deref())?;
        let report = RunReport {
            strategy: lc.strategy.kind.to_string(),
            total_clicks: outcome.ledger.total_clicks(),
            mean_clicks_per_image: outcome.ledger.mean_clicks_per_image(),
            per_class_iou: outcome.per_class_iou.clone(),
            miou: outcome.final_miou(),
            rounds: lc.rounds,
            seed: cfg.seed,
            config: cfg.to_json(),
            timestamp: 0,
        };
        let encoded = serde_json::to_string(&report)
            .map_err(|e| EsaError::invariant(format!("report serialization failed: {e}")))?;
        *slot = CString::new(encoded)
            .map_err(|_| EsaError::invariant("report contains a NUL byte".to_string()))?
            .into_raw();
        Ok(())
    })
}
