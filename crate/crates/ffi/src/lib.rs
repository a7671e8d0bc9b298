//! C ABI over the bagwise library.
//!
//! Every function returns a [`BagwiseStatus`]. On failure the message is
//! available from [`bagwise_last_error`] on the same thread until the next
//! failing call. Models are opaque handles released with
//! [`bagwise_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bagwise::bagcore::{combine_raters, Bag, ExtentInterval, Instance};
use bagwise::eval::icc_two_way_agreement;
use bagwise::pipeline::grid::grid_or_default;
use bagwise::pipeline::io::{read_json, write_json, FORMAT_VERSION};
use bagwise::pipeline::{run_grid_search, ModelFile, RunRecord};
use bagwise::weak::Method;
use bagwise::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagwiseStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

/// A trained bag classifier.
pub struct BagwiseModel {
    file: ModelFile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BagwiseStatus {
    match e {
        Error::Config(_) => BagwiseStatus::Config,
        Error::Numerical(_) => BagwiseStatus::Numerical,
        Error::Io { .. } => BagwiseStatus::Io,
        Error::Stage { source, .. } => status_of(source),
        Error::Domain(_) | Error::Data(_) | Error::Csv(_) | Error::Json(_) => BagwiseStatus::Data,
    }
}

enum Failure {
    Status(BagwiseStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(BagwiseStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BagwiseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BagwiseStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            BagwiseStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(BagwiseStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn bag_from_rows(id: String, features: &[f64], n_instances: usize, dim: usize) -> Result<Bag, Error> {
    if dim == 0 || features.len() != n_instances * dim {
        return Err(Error::data(format!("expected {n_instances} x {dim} feature values, got {}", features.len())));
    }
    let instances = features
        .chunks(dim)
        .enumerate()
        .map(|(j, row)| Instance::new(j.to_string(), row.to_vec()))
        .collect();
    Bag::new(id, instances)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bagwise_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bagwise_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Trains `method` with grid-searched hyperparameters.
///
/// Instances are the rows of the row-major `features` matrix (`dim`
/// columns). Bag `i` holds rows `bag_offsets[i]..bag_offsets[i + 1]`, so
/// `bag_offsets` has `n_bags + 1` entries starting at 0. `extents` holds one
/// label proportion per bag. `grid_json` may be NULL for the default grid.
///
/// # Safety
/// All pointers must be valid for the stated lengths; `out` receives a new
/// handle on success.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_train(
    method: *const c_char,
    grid_json: *const c_char,
    features: *const f64,
    dim: usize,
    bag_offsets: *const usize,
    extents: *const f64,
    n_bags: usize,
    cv_folds: usize,
    seed: u64,
    out: *mut *mut BagwiseModel,
) -> BagwiseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let method: Method = str_arg(method, "method")?.parse()?;
        let grid_value = if grid_json.is_null() {
            None
        } else {
            let text = str_arg(grid_json, "grid_json")?;
            Some(serde_json::from_str(text).map_err(|e| Error::config(format!("grid: {e}")))?)
        };
        let offsets = slice_arg(bag_offsets, n_bags + 1, "bag_offsets")?;
        let extents = slice_arg(extents, n_bags, "extents")?;
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::data("bag_offsets must start at 0 and strictly increase").into());
        }
        let total = offsets[n_bags];
        let features = slice_arg(features, total.saturating_mul(dim), "features")?;
        let mut bags = Vec::with_capacity(n_bags);
        for i in 0..n_bags {
            let rows = &features[offsets[i] * dim..offsets[i + 1] * dim];
            let mut bag = bag_from_rows(format!("b{i}"), rows, offsets[i + 1] - offsets[i], dim)?;
            bag.set_extent(extents[i])?;
            bags.push(bag);
        }
        let grid = grid_or_default(method, grid_value.as_ref())?;
        let (model, search) = run_grid_search(method, &grid, &bags, cv_folds, seed)?;
        let run = RunRecord::new(
            "ffi train",
            Some(seed),
            serde_json::json!({ "method": method, "grid": grid, "cv_folds": cv_folds, "bags": n_bags }),
        );
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            run,
            grid_search: Some(search),
            model,
        };
        *out = Box::into_raw(Box::new(BagwiseModel { file }));
        Ok(())
    })
}

/// Loads a model JSON file written by `bagwise train` or
/// [`bagwise_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_load(path: *const c_char, out: *mut *mut BagwiseModel) -> BagwiseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let file: ModelFile = read_json(Path::new(str_arg(path, "path")?))?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::data(format!("unsupported model format version {}", file.format_version)).into());
        }
        *out = Box::into_raw(Box::new(BagwiseModel { file }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_save(model: *const BagwiseModel, path: *const c_char) -> BagwiseStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        write_json(&model.file, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_free(model: *mut BagwiseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension the model expects, or 0 if it accepts any.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_input_dim(model: *const BagwiseModel, out: *mut usize) -> BagwiseStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = model.file.model.input_dim().unwrap_or(0);
        Ok(())
    })
}

/// Instance threshold: an instance is positive iff its probability is
/// strictly above it.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_threshold(model: *const BagwiseModel, out: *mut f64) -> BagwiseStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = model.file.model.instance_threshold;
        Ok(())
    })
}

/// Predicts one bag given as a row-major `n_instances x dim` matrix.
/// Writes one probability per instance to `out_probs`, and, when non-NULL,
/// 0/1 labels to `out_labels` and the predicted extent to `out_extent`.
///
/// # Safety
/// Buffers must hold `n_instances * dim` inputs and `n_instances` outputs.
#[no_mangle]
pub unsafe extern "C" fn bagwise_model_predict(
    model: *const BagwiseModel,
    features: *const f64,
    n_instances: usize,
    dim: usize,
    out_probs: *mut f64,
    out_labels: *mut u8,
    out_extent: *mut f64,
) -> BagwiseStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.file.model;
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        let rows = slice_arg(features, n_instances.saturating_mul(dim), "features")?;
        let bag = bag_from_rows("bag".into(), rows, n_instances, dim)?;
        let probs = model.instance_probabilities(&bag)?;
        std::slice::from_raw_parts_mut(out_probs, n_instances).copy_from_slice(&probs);
        let labels: Vec<u8> = probs.iter().map(|&p| u8::from(p > model.instance_threshold)).collect();
        if !out_labels.is_null() {
            std::slice::from_raw_parts_mut(out_labels, n_instances).copy_from_slice(&labels);
        }
        if let Some(e) = out_extent.as_mut() {
            *e = labels.iter().map(|&l| f64::from(l)).sum::<f64>() / n_instances as f64;
        }
        Ok(())
    })
}

/// Two-way absolute-agreement single-rater ICC of a row-major
/// `cases x raters` matrix.
///
/// # Safety
/// `ratings` must hold `cases * raters` values; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bagwise_icc(ratings: *const f64, cases: usize, raters: usize, out: *mut f64) -> BagwiseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let values = slice_arg(ratings, cases.saturating_mul(raters), "ratings")?;
        let rows: Vec<Vec<f64>> = values.chunks(raters.max(1)).map(<[f64]>::to_vec).collect();
        *out = icc_two_way_agreement(&rows)?.icc;
        Ok(())
    })
}

/// Extent proportion from interval indices 0..=5 (0%, 1-5%, 6-25%, 26-50%,
/// 51-75%, 76-100%): the mean of the interval midpoints.
///
/// # Safety
/// `intervals` must hold `n` values; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bagwise_combine_raters(intervals: *const u32, n: usize, out: *mut f64) -> BagwiseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let idx = slice_arg(intervals, n, "intervals")?;
        let parsed = idx
            .iter()
            .map(|&i| ExtentInterval::from_index(i as usize).ok_or_else(|| Error::domain(format!("interval index {i} outside 0..=5"))))
            .collect::<Result<Vec<_>, _>>()?;
        *out = combine_raters(&parsed)?;
        Ok(())
    })
}
