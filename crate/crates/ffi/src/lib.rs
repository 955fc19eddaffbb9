//! C ABI over checkpoint loading and beam-search response generation.
//!
//! Conventions:
//!
//! * Every fallible call returns a [`DcStatus`]; results come back through
//!   out-parameters that are written only on `DC_STATUS_OK`.
//! * Strings returned to the caller are NUL-terminated, owned by the caller,
//!   and must be released with [`dc_string_free`].
//! * [`dc_last_error`] returns the message of the calling thread's most
//!   recent failure (also caller-owned).
//! * Panics cannot cross the boundary; they are caught and reported as
//!   `DC_STATUS_PANIC`.
//! * Variants that select facts against the reference response are refused
//!   at load time: they have no meaningful decode-only operation.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use deepcopy::checkpoint;
use deepcopy::corpus::{example_for_decoding, Vocab};
use deepcopy::error::Error;
use deepcopy::eval::{beam_search, surface_tokens};
use deepcopy::model::Model;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read.
    Io = 3,
    /// The checkpoint failed validation.
    CorruptCheckpoint = 4,
    /// The checkpoint holds a variant this interface refuses to serve.
    UnsupportedVariant = 5,
    /// An argument was structurally invalid (empty facts, zero width, a
    /// vocabulary that does not match the checkpoint, ...).
    InvalidArgument = 6,
    /// Decoding failed.
    GenerationFailed = 7,
    /// A panic was caught at the boundary.
    Panic = 8,
}

/// A loaded model plus the vocabulary it was trained with. Opaque.
pub struct DcModel {
    model: Model,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let stored = CString::new(msg.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(stored));
}

fn fail(status: DcStatus, msg: &str) -> DcStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::Io { .. } => DcStatus::Io,
        Error::Corrupt(_) => DcStatus::CorruptCheckpoint,
        Error::OracleRequired { .. } => DcStatus::UnsupportedVariant,
        Error::Config(_) | Error::EmptySequence(_) | Error::Parse { .. } => {
            DcStatus::InvalidArgument
        }
        _ => DcStatus::GenerationFailed,
    }
}

fn fail_with(e: &Error) -> DcStatus {
    fail(status_of(e), &e.to_string())
}

/// Run `body` with panics converted to `DC_STATUS_PANIC`.
fn guarded(body: impl FnOnce() -> DcStatus) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(DcStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `s` must be non-NULL and NUL-terminated.
unsafe fn utf8_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, DcStatus> {
    if s.is_null() {
        return Err(fail(DcStatus::NullArgument, &format!("{name} is NULL")));
    }
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|_| fail(DcStatus::InvalidUtf8, &format!("{name} is not valid UTF-8")))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("").unwrap())
        .into_raw()
}

/// Load a checkpoint file and its vocabulary file into an opaque handle.
///
/// On `DC_STATUS_OK`, `*out_model` owns the handle; release it with
/// [`dc_model_free`].
///
/// # Safety
/// `checkpoint_path` and `vocab_path` must be NUL-terminated strings;
/// `out_model` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out_model: *mut *mut DcModel,
) -> DcStatus {
    guarded(|| {
        if out_model.is_null() {
            return fail(DcStatus::NullArgument, "out_model is NULL");
        }
        let ckpt = match unsafe { utf8_arg(checkpoint_path, "checkpoint_path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let vocab_file = match unsafe { utf8_arg(vocab_path, "vocab_path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let model = match checkpoint::load(Path::new(ckpt)) {
            Ok(m) => m,
            Err(e) => return fail_with(&e),
        };
        if model.variant.is_oracle() {
            return fail(
                DcStatus::UnsupportedVariant,
                &format!(
                    "variant {} selects facts using the reference response and cannot decode",
                    model.variant.label()
                ),
            );
        }
        let vocab = match Vocab::read(Path::new(vocab_file)) {
            Ok(v) => v,
            Err(e) => return fail_with(&e),
        };
        if vocab.size() != model.vocab_size {
            return fail(
                DcStatus::InvalidArgument,
                &format!(
                    "vocabulary has {} entries but the checkpoint was trained with {}",
                    vocab.size(),
                    model.vocab_size
                ),
            );
        }
        unsafe { *out_model = Box::into_raw(Box::new(DcModel { model, vocab })) };
        DcStatus::Ok
    })
}

/// Release a handle returned by [`dc_model_load`]. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer obtained from [`dc_model_load`] that
/// has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Write the model's variant label (for example `DeepCopy` or `S2SC-1`) to
/// `*out_label` as a caller-owned string.
///
/// # Safety
/// `model` must be a live handle; `out_label` must point to writable storage
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_model_variant(
    model: *const DcModel,
    out_label: *mut *mut c_char,
) -> DcStatus {
    guarded(|| {
        if model.is_null() || out_label.is_null() {
            return fail(DcStatus::NullArgument, "model or out_label is NULL");
        }
        let handle = unsafe { &*model };
        unsafe { *out_label = to_c_string(handle.model.variant.label().to_string()) };
        DcStatus::Ok
    })
}

/// Generate a response for a context utterance grounded in `n_facts` persona
/// facts, using beam search of the given width and length limit. The
/// tokenized response (tokens joined by single spaces, out-of-vocabulary
/// copies surfaced as their source strings) is written to `*out_response` as
/// a caller-owned string.
///
/// # Safety
/// `model` must be a live handle; `context` and every entry of
/// `facts[0..n_facts]` must be NUL-terminated strings; `out_response` must
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_generate(
    model: *const DcModel,
    context: *const c_char,
    facts: *const *const c_char,
    n_facts: usize,
    beam_width: usize,
    max_len: usize,
    out_response: *mut *mut c_char,
) -> DcStatus {
    guarded(|| {
        if model.is_null() || out_response.is_null() {
            return fail(DcStatus::NullArgument, "model or out_response is NULL");
        }
        if n_facts > 0 && facts.is_null() {
            return fail(DcStatus::NullArgument, "facts is NULL with n_facts > 0");
        }
        if beam_width == 0 || max_len == 0 {
            return fail(
                DcStatus::InvalidArgument,
                "beam_width and max_len must be at least 1",
            );
        }
        let handle = unsafe { &*model };
        let context = match unsafe { utf8_arg(context, "context") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mut fact_texts = Vec::with_capacity(n_facts);
        for i in 0..n_facts {
            let entry = unsafe { *facts.add(i) };
            match unsafe { utf8_arg(entry, &format!("facts[{i}]")) } {
                Ok(s) => fact_texts.push(s.to_string()),
                Err(status) => return status,
            }
        }
        let example = match example_for_decoding(context, &fact_texts, &handle.vocab) {
            Ok(ex) => ex,
            Err(e) => return fail_with(&e),
        };
        let result = match beam_search(&handle.model, &example, beam_width, max_len) {
            Ok(r) => r,
            Err(e) => return fail_with(&e),
        };
        let text = surface_tokens(&example, &handle.vocab, &result.tokens).join(" ");
        unsafe { *out_response = to_c_string(text) };
        DcStatus::Ok
    })
}

/// Release a string returned by this interface. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a string obtained from this interface that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn dc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Return the calling thread's most recent error message as a caller-owned
/// string, or NULL if no error has occurred on this thread.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}
