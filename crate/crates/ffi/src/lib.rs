//! C ABI over the LUT and log inference engines.
//!
//! Every fallible call returns a [`LutnetStatus`]; on failure a message is
//! available from [`lutnet_last_error`] on the same thread. Engines are
//! opaque handles created by [`lutnet_engine_open`] and released with
//! [`lutnet_engine_free`]. A handle may be shared across threads for
//! inference.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lutnet::engine_log::{LogEngine, LogQuantModel, LOGQ_MAGIC};
use lutnet::engine_lut::LutEngine;
use lutnet::quantized::{QuantizedModel, LUTQ_MAGIC};
use lutnet::Error;

/// Result codes of the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LutnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Engine = 6,
    Panic = 7,
}

/// Which engine a handle runs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LutnetEngineKind {
    Lut = 0,
    Log = 1,
}

enum Inner {
    Lut(LutEngine),
    Log(LogEngine),
}

/// Opaque engine handle.
pub struct LutnetEngine {
    inner: Inner,
}

impl LutnetEngine {
    fn input_len(&self) -> usize {
        match &self.inner {
            Inner::Lut(e) => e.input_len(),
            Inner::Log(e) => e.input_len(),
        }
    }

    fn output_len(&self) -> usize {
        match &self.inner {
            Inner::Lut(e) => e.output_len(),
            Inner::Log(e) => e.output_len(),
        }
    }

    fn forward(&self, x: &[f64]) -> lutnet::Result<Vec<i64>> {
        match &self.inner {
            Inner::Lut(e) => e.forward(x),
            Inner::Log(e) => e.forward(x),
        }
    }

    fn logits(&self, acc: &[i64]) -> Vec<f64> {
        match &self.inner {
            Inner::Lut(e) => e.logits(acc),
            Inner::Log(e) => e.logits(acc),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> LutnetStatus {
    match e {
        Error::Io { .. } => LutnetStatus::Io,
        Error::Format { .. } | Error::LengthMismatch { .. } | Error::NonFinite { .. } | Error::Json(_) => LutnetStatus::Format,
        Error::Shape { .. } => LutnetStatus::Shape,
        Error::InvalidParam(_) => LutnetStatus::InvalidArgument,
        _ => LutnetStatus::Engine,
    }
}

/// Run `f`, recording any error or panic for [`lutnet_last_error`].
fn guard(f: impl FnOnce() -> Result<(), (LutnetStatus, String)>) -> LutnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LutnetStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LutnetStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (LutnetStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (LutnetStatus, String) {
    (LutnetStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (LutnetStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (LutnetStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn engine_ref<'a>(e: *const LutnetEngine) -> Result<&'a LutnetEngine, (LutnetStatus, String)> {
    // SAFETY: the caller passes a handle from `lutnet_engine_open` or null.
    unsafe { e.as_ref() }.ok_or_else(|| null("engine"))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), (LutnetStatus, String)> {
    if got != want {
        return Err((LutnetStatus::Shape, format!("{what} has length {got}, engine expects {want}")));
    }
    Ok(())
}

fn open(path: &Path) -> lutnet::Result<Inner> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.starts_with(LUTQ_MAGIC) {
        Ok(Inner::Lut(LutEngine::new(QuantizedModel::from_bytes(&bytes, path)?)?))
    } else if bytes.starts_with(LOGQ_MAGIC) {
        Ok(Inner::Log(LogEngine::new(LogQuantModel::from_bytes(&bytes, path)?)?))
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            msg: "not a LUTQ or LOGQ model".into(),
        })
    }
}

/// Library version as a NUL-terminated static string.
#[no_mangle]
pub extern "C" fn lutnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lutnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Load a `.lutq` or `.logq` model; the engine is chosen from the file magic.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lutnet_engine_open(path: *const c_char, out: *mut *mut LutnetEngine) -> LutnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (LutnetStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = open(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(LutnetEngine { inner }));
        Ok(())
    })
}

/// Release an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`lutnet_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lutnet_engine_free(engine: *mut LutnetEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// # Safety
/// `engine` must be a live handle and `kind` writable.
#[no_mangle]
pub unsafe extern "C" fn lutnet_engine_kind(engine: *const LutnetEngine, kind: *mut LutnetEngineKind) -> LutnetStatus {
    guard(|| {
        let e = engine_ref(engine)?;
        let kind = kind.as_mut().ok_or_else(|| null("kind"))?;
        *kind = match e.inner {
            Inner::Lut(_) => LutnetEngineKind::Lut,
            Inner::Log(_) => LutnetEngineKind::Log,
        };
        Ok(())
    })
}

/// Flattened input and output lengths.
///
/// # Safety
/// `engine` must be a live handle; `input_len` and `output_len` writable.
#[no_mangle]
pub unsafe extern "C" fn lutnet_engine_shape(
    engine: *const LutnetEngine,
    input_len: *mut usize,
    output_len: *mut usize,
) -> LutnetStatus {
    guard(|| {
        let e = engine_ref(engine)?;
        *input_len.as_mut().ok_or_else(|| null("input_len"))? = e.input_len();
        *output_len.as_mut().ok_or_else(|| null("output_len"))? = e.output_len();
        Ok(())
    })
}

/// Run one input. `accumulators` receives the raw final-layer integers and
/// `logits` their real values; either may be null to skip it.
///
/// # Safety
/// `input` must hold `input_len` values; non-null outputs must hold `output_len`.
#[no_mangle]
pub unsafe extern "C" fn lutnet_engine_forward(
    engine: *const LutnetEngine,
    input: *const f64,
    input_len: usize,
    accumulators: *mut i64,
    logits: *mut f64,
    output_len: usize,
) -> LutnetStatus {
    guard(|| {
        let e = engine_ref(engine)?;
        check_len(input_len, e.input_len(), "input")?;
        check_len(output_len, e.output_len(), "output")?;
        let x = slice(input, input_len, "input")?;
        let acc = e.forward(x).map_err(lib_err)?;
        if !accumulators.is_null() {
            slice_mut(accumulators, output_len, "accumulators")?.copy_from_slice(&acc);
        }
        if !logits.is_null() {
            slice_mut(logits, output_len, "logits")?.copy_from_slice(&e.logits(&acc));
        }
        Ok(())
    })
}

/// Top-1 class of each of `n` row-major inputs.
///
/// # Safety
/// `inputs` must hold `n * input_len` values and `classes` `n` slots.
#[no_mangle]
pub unsafe extern "C" fn lutnet_engine_classify(
    engine: *const LutnetEngine,
    inputs: *const f64,
    n: usize,
    input_len: usize,
    classes: *mut usize,
) -> LutnetStatus {
    guard(|| {
        let e = engine_ref(engine)?;
        check_len(input_len, e.input_len(), "input")?;
        let total = n
            .checked_mul(input_len)
            .ok_or_else(|| (LutnetStatus::InvalidArgument, "n * input_len overflows".to_string()))?;
        let x = slice(inputs, total, "inputs")?;
        let out = slice_mut(classes, n, "classes")?;
        for (row, c) in x.chunks_exact(input_len.max(1)).zip(out.iter_mut()) {
            let acc = e.forward(row).map_err(lib_err)?;
            // Ties keep the lower index, as in the engines' top-k.
            let mut best = 0;
            for (i, &v) in acc.iter().enumerate() {
                if v > acc[best] {
                    best = i;
                }
            }
            *c = best;
        }
        Ok(())
    })
}

/// Leading zeros of a 32-bit word; 32 for zero.
#[no_mangle]
pub extern "C" fn lutnet_nlz(x: u32) -> u32 {
    lutnet::engine_log::nlz(x)
}
