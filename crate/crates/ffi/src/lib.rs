//! C ABI over the advsl toolkit.
//!
//! Every fallible function returns an [`AdvslStatus`]; on failure the message
//! is kept per thread and read with [`advsl_last_error_message`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use advsl::codeswitch::{load_dictionary, switch_tokens, BilingualDictionary};
use advsl::model::{forward, load_checkpoint, Checkpoint};
use advsl::perturb::adversarial_direction;
use advsl::textdata::{tokenize, truncate};
use ndarray::Array2;

/// Result of every fallible call. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvslStatus {
    Ok = 0,
    Contract = 1,
    NonFinite = 2,
    Format = 3,
    Io = 4,
    Config = 5,
    Dimension = 6,
    Json = 7,
    NullArgument = 8,
    InvalidUtf8 = 9,
    Panic = 10,
}

impl From<&advsl::Error> for AdvslStatus {
    fn from(e: &advsl::Error) -> Self {
        use advsl::Error as E;
        match e {
            E::Contract(_) => AdvslStatus::Contract,
            E::NonFinite { .. } => AdvslStatus::NonFinite,
            E::Format { .. } => AdvslStatus::Format,
            E::Io { .. } => AdvslStatus::Io,
            E::Config { .. } => AdvslStatus::Config,
            E::Dimension(_) => AdvslStatus::Dimension,
            E::Json(_) => AdvslStatus::Json,
        }
    }
}

/// A loaded checkpoint ready for prediction.
pub struct AdvslClassifier {
    ckpt: Checkpoint,
    class_names: Vec<CString>,
}

/// A bilingual dictionary used for code-switching.
pub struct AdvslDictionary {
    dict: BilingualDictionary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AdvslStatus, String);

impl From<advsl::Error> for Failure {
    fn from(e: advsl::Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdvslStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdvslStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdvslStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AdvslStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            AdvslStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next advsl call on the same thread.
#[no_mangle]
pub extern "C" fn advsl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn advsl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a JSON checkpoint written by `advsl train` or `advsl selflearn`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advsl_classifier_load(
    path: *const c_char,
    out: *mut *mut AdvslClassifier,
) -> AdvslStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ckpt = load_checkpoint(Path::new(path))?;
        let class_names = ckpt
            .class_names
            .iter()
            .map(|n| {
                CString::new(n.as_str())
                    .map_err(|_| Failure(AdvslStatus::Format, "class name contains NUL".into()))
            })
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(AdvslClassifier { ckpt, class_names }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`advsl_classifier_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn advsl_classifier_free(handle: *mut AdvslClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of classes, or 0 for a NULL handle.
///
/// # Safety
/// `handle` must be NULL or a live classifier.
#[no_mangle]
pub unsafe extern "C" fn advsl_classifier_num_classes(handle: *const AdvslClassifier) -> usize {
    handle.as_ref().map_or(0, |h| h.class_names.len())
}

/// Name of class `index`, owned by the handle; NULL when out of range.
///
/// # Safety
/// `handle` must be NULL or a live classifier.
#[no_mangle]
pub unsafe extern "C" fn advsl_classifier_class_name(
    handle: *const AdvslClassifier,
    index: usize,
) -> *const c_char {
    handle
        .as_ref()
        .and_then(|h| h.class_names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Classifies raw text. Writes the predicted class to `out_class` and, when
/// `probs` is not NULL, the class distribution into `probs[0..probs_len]`;
/// `probs_len` must then equal the number of classes.
///
/// # Safety
/// `handle` must be a live classifier, `text` NUL-terminated, `out_class`
/// valid, and `probs` NULL or writable for `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn advsl_classifier_predict(
    handle: *const AdvslClassifier,
    text: *const c_char,
    out_class: *mut usize,
    probs: *mut f64,
    probs_len: usize,
) -> AdvslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out_class.is_null() {
            return Err(null("out_class"));
        }
        let text = str_arg(text, "text")?;
        let ckpt = &h.ckpt;
        if !probs.is_null() && probs_len != ckpt.class_names.len() {
            return Err(Failure(
                AdvslStatus::Dimension,
                format!(
                    "probs_len is {probs_len}, model has {} classes",
                    ckpt.class_names.len()
                ),
            ));
        }
        let ids = ckpt.vocab.encode(&tokenize(text, ckpt.lowercase));
        let trace = forward(&ckpt.params, &truncate(&ids, ckpt.max_len), None, None)?;
        let pred = advsl::model::argmax(trace.probs.view());
        *out_class = pred.class;
        if !probs.is_null() {
            std::slice::from_raw_parts_mut(probs, probs_len)
                .copy_from_slice(trace.probs.as_slice().expect("contiguous"));
        }
        Ok(())
    })
}

/// Loads a `source target` per line dictionary. `seed` fixes which
/// translation is used for words with several.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn advsl_dictionary_load(
    path: *const c_char,
    seed: u64,
    lowercase: bool,
    out: *mut *mut AdvslDictionary,
) -> AdvslStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let dict = load_dictionary(Path::new(path), seed, lowercase)?;
        *out = Box::into_raw(Box::new(AdvslDictionary { dict }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`advsl_dictionary_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn advsl_dictionary_free(handle: *mut AdvslDictionary) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Code-switches one text. The result is written to `out` and must be
/// released with [`advsl_string_free`]; `replaced`, when not NULL, receives
/// the number of replaced tokens.
///
/// # Safety
/// `handle` must be a live dictionary, `text` NUL-terminated, `out` valid,
/// and `replaced` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn advsl_dictionary_switch(
    handle: *const AdvslDictionary,
    text: *const c_char,
    out: *mut *mut c_char,
    replaced: *mut usize,
) -> AdvslStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let (tokens, flags) = switch_tokens(&tokenize(text, h.dict.lowercase), &h.dict);
        let joined = CString::new(tokens.join(" "))
            .map_err(|_| Failure(AdvslStatus::Format, "translation contains NUL".into()))?;
        if let Some(r) = replaced.as_mut() {
            *r = flags.iter().filter(|&&f| f).count();
        }
        *out = joined.into_raw();
        Ok(())
    })
}

/// Worst-case perturbation `epsilon * g / |g|` for a row-major `rows x cols`
/// gradient. Rows with `mask[i] == 0` are ignored and left zero; `mask` may
/// be NULL to use every row. A gradient with norm at most 1e-12 gives zeros.
///
/// # Safety
/// `grad` and `out` must hold `rows * cols` doubles; `mask` must be NULL or
/// hold `rows` bytes.
#[no_mangle]
pub unsafe extern "C" fn advsl_adversarial_direction(
    grad: *const f64,
    rows: usize,
    cols: usize,
    mask: *const u8,
    epsilon: f64,
    out: *mut f64,
) -> AdvslStatus {
    guard(|| {
        if grad.is_null() {
            return Err(null("grad"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Failure(
                AdvslStatus::Contract,
                format!("epsilon must be finite and >= 0, got {epsilon}"),
            ));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(AdvslStatus::Dimension, "rows * cols overflows".into()))?;
        let g = Array2::from_shape_vec((rows, cols), std::slice::from_raw_parts(grad, n).to_vec())
            .map_err(|e| Failure(AdvslStatus::Dimension, e.to_string()))?;
        let mask: Vec<bool> = if mask.is_null() {
            vec![true; rows]
        } else {
            std::slice::from_raw_parts(mask, rows)
                .iter()
                .map(|&m| m != 0)
                .collect()
        };
        let r = adversarial_direction(&g, &mask, epsilon);
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(r.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn advsl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
