//! C ABI over the cetpred library.
//!
//! Every fallible function returns a status code (`CET_OK` on success) and
//! records a message retrievable with [`cet_last_error_message`] on the
//! calling thread. Models are opaque handles created by [`cet_model_load`]
//! and released with [`cet_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use cetpred::artifact::{load_model, ModelArtifact};
use cetpred::error::CetError;
use cetpred::featurize::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use cetpred::labeler::CetLabels;
use cetpred::learners::{label_marginals, powerset_decode, powerset_encode, N_CLASSES};
use cetpred::metrics::roc_auc;
use cetpred::pipeline::run_synth;
use cetpred::synth::SynthConfig;

pub const CET_OK: i32 = 0;
/// Invalid arguments: null pointers, bad UTF-8, out-of-range values.
pub const CET_ERR_ARGUMENT: i32 = 1;
/// Configuration or usage error.
pub const CET_ERR_USAGE: i32 = 2;
/// Input data or artifact error.
pub const CET_ERR_DATA: i32 = 3;
/// Numeric failure.
pub const CET_ERR_NUMERIC: i32 = 4;
/// A Rust panic was caught at the boundary.
pub const CET_ERR_PANIC: i32 = 5;

pub const CET_N_FEATURES: usize = 19;
pub const CET_N_CLASSES: usize = 16;
pub const CET_N_LABELS: usize = 4;

const _: () = assert!(CET_N_FEATURES == N_FEATURES && CET_N_CLASSES == N_CLASSES);

/// A loaded model artifact.
pub struct CetModel {
    artifact: ModelArtifact,
    family: CString,
}

struct LastError {
    message: CString,
    category: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(category: &str, message: &str) {
    let clean = |s: &str| CString::new(s.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            message: clean(message),
            category: clean(category),
        })
    });
}

fn fail(err: CetError) -> i32 {
    set_error(err.category(), &err.to_string());
    err.exit_code()
}

fn bad_argument(msg: &str) -> i32 {
    set_error("Argument", msg);
    CET_ERR_ARGUMENT
}

fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("Panic", "internal panic");
            CET_ERR_PANIC
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, i32> {
    if p.is_null() {
        return Err(bad_argument("null path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| bad_argument("path is not valid UTF-8"))
}

/// Message of the last error on this thread, or null if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// Category name of the last error on this thread (e.g. `CorruptArtifact`),
/// or null if none.
#[no_mangle]
pub extern "C" fn cet_last_error_category() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.category.as_ptr()))
}

#[no_mangle]
pub extern "C" fn cet_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cet_version() -> *const c_char {
    static V: OnceLock<CString> = OnceLock::new();
    V.get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).expect("no nul"))
        .as_ptr()
}

/// Name of feature column `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn cet_feature_name(index: usize) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    NAMES
        .get_or_init(|| {
            FEATURE_NAMES
                .iter()
                .map(|n| CString::new(*n).expect("no nul"))
                .collect()
        })
        .get(index)
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Powerset class id of a label combination (each flag 0 or nonzero).
#[no_mangle]
pub extern "C" fn cet_powerset_encode(respiratory: u8, hemodynamic: u8, renal: u8, neurologic: u8) -> i32 {
    powerset_encode(&CetLabels::new(
        respiratory != 0,
        hemodynamic != 0,
        renal != 0,
        neurologic != 0,
    ))
    .id() as i32
}

/// Write the four label flags of class `id` into `out[0..4]`.
///
/// # Safety
/// `out` must point to 4 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cet_powerset_decode(id: u32, out: *mut u8) -> i32 {
    guard(|| {
        if out.is_null() {
            return bad_argument("null output");
        }
        match powerset_decode(id) {
            Ok(y) => {
                for (k, b) in y.as_array().iter().enumerate() {
                    *out.add(k) = u8::from(*b);
                }
                CET_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a model artifact. On success `*out` receives a handle that must be
/// released with [`cet_model_free`].
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cet_model_load(path: *const c_char, out: *mut *mut CetModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return bad_argument("null output");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        match load_model(path) {
            Ok(artifact) => {
                let family = CString::new(artifact.family.name()).expect("no nul");
                *out = Box::into_raw(Box::new(CetModel { artifact, family }));
                CET_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a handle. Null is accepted.
///
/// # Safety
/// `model` must come from [`cet_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cet_model_free(model: *mut CetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Family name (`logreg`, `forest`, `gbt`, `mlp`), valid while the handle lives.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cet_model_family(model: *const CetModel) -> *const c_char {
    model.as_ref().map_or(ptr::null(), |m| m.family.as_ptr())
}

/// Predict `n_rows` raw feature rows (row-major, `CET_N_FEATURES` values
/// each, NaN meaning missing). Missing values are imputed and scaled with
/// the statistics stored in the artifact.
///
/// Outputs, each optional (null to skip): `proba` receives `n_rows ×
/// CET_N_CLASSES` class probabilities, `marginals` `n_rows × 4` label
/// probabilities, `labels` `n_rows × 4` hard 0/1 labels from the most
/// probable class.
///
/// # Safety
/// Every non-null pointer must cover the sizes above.
#[no_mangle]
pub unsafe extern "C" fn cet_model_predict(
    model: *const CetModel,
    features: *const f64,
    n_rows: usize,
    proba: *mut f64,
    marginals: *mut f64,
    labels: *mut u8,
) -> i32 {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return bad_argument("null model");
        };
        if features.is_null() && n_rows > 0 {
            return bad_argument("null features");
        }
        let Some(len) = n_rows.checked_mul(N_FEATURES) else {
            return bad_argument("row count overflows");
        };
        let raw = if n_rows == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(features, len)
        };
        let rows: Vec<FeatureVector> = raw
            .chunks(N_FEATURES)
            .map(|r| {
                let mut values = [None; N_FEATURES];
                for (v, x) in values.iter_mut().zip(r) {
                    *v = (!x.is_nan()).then_some(*x);
                }
                FeatureVector {
                    stay_id: String::new(),
                    values,
                }
            })
            .collect();
        let pred = match model.artifact.trained.predict(&rows) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        for (i, dist) in pred.proba.iter_rows().enumerate() {
            if !proba.is_null() {
                ptr::copy_nonoverlapping(dist.as_ptr(), proba.add(i * N_CLASSES), N_CLASSES);
            }
            if !marginals.is_null() {
                let m = label_marginals(dist);
                ptr::copy_nonoverlapping(m.as_ptr(), marginals.add(i * 4), 4);
            }
        }
        if !labels.is_null() {
            for (i, y) in pred.hard_labels().iter().enumerate() {
                for (k, b) in y.as_array().iter().enumerate() {
                    *labels.add(i * 4 + k) = u8::from(*b);
                }
            }
        }
        CET_OK
    })
}

/// ROC-AUC of `scores` against 0/1 `truth`, both of length `n`.
///
/// # Safety
/// `scores` and `truth` must hold `n` elements; `out_auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cet_roc_auc(
    scores: *const f64,
    truth: *const u8,
    n: usize,
    out_auc: *mut f64,
) -> i32 {
    guard(|| {
        if scores.is_null() || truth.is_null() || out_auc.is_null() {
            return bad_argument("null pointer");
        }
        let s = std::slice::from_raw_parts(scores, n);
        let t: Vec<bool> = std::slice::from_raw_parts(truth, n)
            .iter()
            .map(|b| *b != 0)
            .collect();
        match roc_auc(s, &t) {
            Ok(c) => {
                *out_auc = c.auc;
                CET_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Write a synthetic cohort (`stays.csv`, `events.csv`, `truth.csv`) into
/// `out_dir` with default prevalences.
///
/// # Safety
/// `out_dir` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cet_synth_generate(
    n_stays: usize,
    seed: u64,
    signal_strength: f64,
    out_dir: *const c_char,
) -> i32 {
    guard(|| {
        let dir = match path_arg(out_dir) {
            Ok(p) => p,
            Err(code) => return code,
        };
        let cfg = SynthConfig {
            n_stays,
            seed,
            signal_strength,
            ..Default::default()
        };
        match run_synth(&cfg, dir) {
            Ok(()) => CET_OK,
            Err(e) => fail(e),
        }
    })
}
