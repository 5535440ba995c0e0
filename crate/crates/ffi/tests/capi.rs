use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use esa_core::raster::{write_label_map, write_prob_map, Image, LabelMap, ProbabilityMap};
use esa_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(esa_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(esa_version()) }.to_str().unwrap();
    assert!(v.contains('.'), "version {v}");
}

#[test]
fn image_roundtrip_and_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    let img = Image::new(3, 5, (0..45).map(|v| v as u8).collect()).unwrap();
    esa_core::raster::write_image(&img, &path).unwrap();

    unsafe {
        let mut handle: *mut EsaImage = ptr::null_mut();
        assert_eq!(esa_image_read(cpath(&path).as_ptr(), &mut handle), ESA_OK);
        let (mut h, mut w) = (0u32, 0u32);
        assert_eq!(esa_image_shape(handle, &mut h, &mut w), ESA_OK);
        assert_eq!((h, w), (3, 5));

        let copy = dir.path().join("copy.ppm");
        assert_eq!(esa_image_write(handle, cpath(&copy).as_ptr()), ESA_OK);
        esa_image_free(handle);
        assert_eq!(esa_core::raster::read_image(&copy).unwrap(), img);
    }
}

#[test]
fn missing_file_reports_io_error() {
    unsafe {
        let mut handle: *mut EsaImage = ptr::null_mut();
        let code = esa_image_read(c("no_such_dir/x.ppm").as_ptr(), &mut handle);
        assert_eq!(code, ESA_ERR_IO);
        assert!(handle.is_null());
        assert!(last_error().contains("x.ppm"), "message: {}", last_error());
    }
}

#[test]
fn null_pointer_reports_invariant_error() {
    unsafe {
        let code = esa_image_read(ptr::null(), ptr::null_mut());
        assert_eq!(code, ESA_ERR_INVARIANT);
        assert!(last_error().contains("null"), "message: {}", last_error());
    }
}

#[test]
fn slic_partitions_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    let data: Vec<u8> = (0..16 * 16 * 3).map(|v| (v * 37 % 251) as u8).collect();
    esa_core::raster::write_image(&Image::new(16, 16, data).unwrap(), &path).unwrap();

    unsafe {
        let mut img: *mut EsaImage = ptr::null_mut();
        assert_eq!(esa_image_read(cpath(&path).as_ptr(), &mut img), ESA_OK);
        let mut regions: *mut EsaRegions = ptr::null_mut();
        assert_eq!(esa_slic(img, 4, 0.1, 10, 0.25, &mut regions), ESA_OK);
        let mut count = 0u32;
        assert_eq!(esa_regions_count(regions, &mut count), ESA_OK);
        assert!(count >= 1);

        let out = dir.path().join("sp.esar");
        assert_eq!(esa_regions_write(regions, cpath(&out).as_ptr()), ESA_OK);
        let mut back: *mut EsaRegions = ptr::null_mut();
        assert_eq!(esa_regions_read(cpath(&out).as_ptr(), &mut back), ESA_OK);
        let mut count2 = 0u32;
        assert_eq!(esa_regions_count(back, &mut count2), ESA_OK);
        assert_eq!(count, count2);

        esa_regions_free(regions);
        esa_regions_free(back);
        esa_image_free(img);
    }
}

fn uniform_probs(dir: &Path, h: usize, w: usize, classes: usize) -> CString {
    let path = dir.join("p.esat");
    let p = ProbabilityMap::new(h, w, classes, vec![1.0 / classes as f64; h * w * classes]).unwrap();
    write_prob_map(&p, &path).unwrap();
    cpath(&path)
}

#[test]
fn entropy_and_acquisition_on_uniform_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let path = uniform_probs(dir.path(), 4, 4, 3);
    let ln3 = 3.0f64.ln();

    unsafe {
        let mut probs: *mut EsaProbs = ptr::null_mut();
        assert_eq!(esa_probs_read(path.as_ptr(), &mut probs), ESA_OK);
        let (mut h, mut w, mut ch) = (0u32, 0u32, 0u32);
        assert_eq!(esa_probs_shape(probs, &mut h, &mut w, &mut ch), ESA_OK);
        assert_eq!((h, w, ch), (4, 4, 3));

        let mut entropy = vec![0.0f64; 16];
        assert_eq!(esa_pixel_entropy(probs, entropy.as_mut_ptr()), ESA_OK);
        assert!(entropy.iter().all(|e| (e - ln3).abs() < 1e-6), "{entropy:?}");

        let mut grid: *mut EsaRegions = ptr::null_mut();
        assert_eq!(esa_grid_regions(4, 4, 2, &mut grid), ESA_OK);
        let mut count = 0u32;
        assert_eq!(esa_regions_count(grid, &mut count), ESA_OK);
        assert_eq!(count, 4);

        let mut scores = vec![0.0f64; 4];
        let code = esa_acquisition(probs, grid, c("uncertainty").as_ptr(), scores.as_mut_ptr());
        assert_eq!(code, ESA_OK);
        assert!(scores.iter().all(|s| (s - ln3).abs() < 1e-6), "{scores:?}");

        let code = esa_acquisition(probs, grid, c("sideways").as_ptr(), scores.as_mut_ptr());
        assert_eq!(code, ESA_ERR_CONFIG);
        assert!(last_error().contains("sideways"));

        esa_regions_free(grid);
        esa_probs_free(probs);
    }
}

#[test]
fn topk_selection_orders_and_excludes() {
    let scores = [0.1f64, 0.9, 0.5];
    unsafe {
        let mut ids = [u32::MAX; 2];
        let mut n = 0u32;
        let code =
            esa_select_topk(scores.as_ptr(), 3, ptr::null(), 0, 2, ids.as_mut_ptr(), &mut n);
        assert_eq!(code, ESA_OK);
        assert_eq!((n, ids), (2, [1, 2]));

        let excluded = [1u32];
        let code = esa_select_topk(
            scores.as_ptr(),
            3,
            excluded.as_ptr(),
            1,
            5,
            ids.as_mut_ptr(),
            &mut n,
        );
        assert_eq!(code, ESA_OK);
        assert_eq!(n, 2, "only two candidates survive the exclusion");
        assert_eq!(ids, [2, 0]);
    }
}

#[test]
fn oracle_miou_and_losses() {
    let dir = tempfile::tempdir().unwrap();
    let gt_path = dir.path().join("gt.pgm");
    let gt = LabelMap::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
    write_label_map(&gt, &gt_path).unwrap();
    let probs_path = uniform_probs(dir.path(), 2, 2, 3);

    unsafe {
        let mut labels: *mut EsaLabels = ptr::null_mut();
        assert_eq!(esa_labels_read(cpath(&gt_path).as_ptr(), 3, &mut labels), ESA_OK);
        let (mut h, mut w, mut k) = (0u32, 0u32, 0u32);
        assert_eq!(esa_labels_shape(labels, &mut h, &mut w, &mut k), ESA_OK);
        assert_eq!((h, w, k), (2, 2, 3));

        let mut grid: *mut EsaRegions = ptr::null_mut();
        assert_eq!(esa_grid_regions(2, 2, 2, &mut grid), ESA_OK);
        let mut label = 255u8;
        assert_eq!(esa_oracle_label_region(labels, grid, 0, &mut label), ESA_OK);
        assert_eq!(label, 0, "majority class of the single cell");
        assert_eq!(esa_oracle_label_region(labels, grid, 9, &mut label), ESA_ERR_INVARIANT);

        let mut value = -1.0f64;
        assert_eq!(esa_miou(labels, labels, &mut value), ESA_OK);
        assert_eq!(value, 1.0, "perfect prediction");

        let mut probs: *mut EsaProbs = ptr::null_mut();
        assert_eq!(esa_probs_read(probs_path.as_ptr(), &mut probs), ESA_OK);
        assert_eq!(esa_ce_loss(probs, labels, &mut value), ESA_OK);
        assert!((value - 3.0f64.ln()).abs() < 1e-6, "uniform cross-entropy {value}");

        assert_eq!(esa_negative_loss(probs, 0.05, 1, &mut value), ESA_OK);
        let expect = -(1.0f64 - 1.0 / 3.0).ln();
        assert!((value - expect).abs() < 1e-6, "negative loss {value}");
        assert_eq!(esa_negative_loss(probs, 0.05, 0, &mut value), ESA_OK);
        assert_eq!(value, 0.0, "no entry sits below tau");
        assert_eq!(esa_negative_loss(probs, 1.5, 1, &mut value), ESA_ERR_CONFIG);
        assert!(last_error().contains("loss.tau"));

        esa_probs_free(probs);
        esa_regions_free(grid);
        esa_labels_free(labels);
    }
}

#[test]
fn run_loop_json_returns_a_report() {
    let cfg = c(r#"{
        "seed": 1, "dataset.images": 2, "dataset.size": 16, "dataset.classes": 3,
        "dataset.shapes": 2, "select.strategy": "rand",
        "loop.iters": 8, "loop.pretrain_iters": 2, "loop.rounds": 1, "loop.budget": 1
    }"#);
    unsafe {
        let mut report: *mut std::ffi::c_char = ptr::null_mut();
        let code = esa_run_loop_json(cfg.as_ptr(), &mut report);
        assert_eq!(code, ESA_OK, "error: {}", last_error());
        let parsed: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
        esa_string_free(report);
        assert_eq!(parsed["strategy"], "rand");
        assert_eq!(parsed["total_clicks"], 2, "2 images x 1 round x 1 click");
        let miou = parsed["miou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&miou), "miou {miou}");

        let bad = c(r#"{"paths.data": "somewhere"}"#);
        assert_eq!(esa_run_loop_json(bad.as_ptr(), &mut report), ESA_ERR_CONFIG);
        assert!(last_error().contains("paths.data"));

        let invalid = c("not json");
        assert_eq!(esa_run_loop_json(invalid.as_ptr(), &mut report), ESA_ERR_IO);
    }
}
