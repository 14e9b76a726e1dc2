//! C interface over the occupancy pipeline.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`OccStatus`]; on failure the message is kept per thread and can be copied
//! out with [`occ_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use occusense::dsp::MultichannelClip;
use occusense::error::Error;
use occusense::pipeline::{Estimator, FrontEnd, FrontEndConfig, SecondFeatures};
use occusense::privacy::NoiseSource;
use occusense::store::{self, RecordMeta};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numerical = 5,
    Privacy = 6,
    Authentication = 7,
    Crypto = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for OccStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => OccStatus::Config,
            Error::Shape(_) | Error::Data(_) | Error::NoSignal(_) | Error::Malformed(_) => {
                OccStatus::Data
            }
            Error::Numerical(_) | Error::StaleCache { .. } => OccStatus::Numerical,
            Error::Privacy(_) => OccStatus::Privacy,
            Error::Authentication => OccStatus::Authentication,
            Error::Crypto(_) => OccStatus::Crypto,
            Error::Io(_) => OccStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

enum Failure {
    Status(OccStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn null() -> Failure {
    Failure::Status(OccStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: &str) -> Failure {
    Failure::Status(OccStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OccStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            OccStatus::from(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            OccStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null());
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_arg_mut<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn occ_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn occ_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Per-second audio front end.
pub struct OccFrontEnd {
    inner: FrontEnd,
    sample_rate: u32,
}

/// Creates a front end with default settings.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn occ_frontend_new(
    sample_rate: u32,
    out: *mut *mut OccFrontEnd,
) -> OccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let inner = FrontEnd::new(FrontEndConfig::default(), sample_rate)?;
        *out = Box::into_raw(Box::new(OccFrontEnd { inner, sample_rate }));
        Ok(())
    })
}

/// # Safety
/// `fe` must come from [`occ_frontend_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn occ_frontend_free(fe: *mut OccFrontEnd) {
    if !fe.is_null() {
        drop(Box::from_raw(fe));
    }
}

/// Cells in one pooled spectrogram grid.
#[no_mangle]
pub extern "C" fn occ_grid_len() -> usize {
    let c = FrontEndConfig::default();
    c.grid_t * c.grid_f
}

/// Values in one summary-statistics row.
#[no_mangle]
pub extern "C" fn occ_summary_len() -> usize {
    4 * FrontEndConfig::default().spectrogram.n_mels
}

/// Analyses exactly one second of channel-interleaved audio
/// (`frames == sample_rate`) into a speech probability, a pooled grid of
/// [`occ_grid_len`] values and a summary row of [`occ_summary_len`] values.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn occ_frontend_analyze(
    fe: *mut OccFrontEnd,
    interleaved: *const f64,
    channels: usize,
    frames: usize,
    speech_prob: *mut f64,
    grid: *mut f64,
    summary: *mut f64,
) -> OccStatus {
    guard(|| {
        let fe = fe.as_mut().ok_or_else(null)?;
        if channels == 0 {
            return Err(invalid("at least one channel is required"));
        }
        let samples = slice_arg(
            interleaved,
            channels
                .checked_mul(frames)
                .ok_or_else(|| invalid("size overflow"))?,
        )?;
        if speech_prob.is_null() {
            return Err(null());
        }
        let grid = slice_arg_mut(grid, occ_grid_len())?;
        let summary = slice_arg_mut(summary, occ_summary_len())?;
        let chans = (0..channels)
            .map(|m| samples.iter().skip(m).step_by(channels).copied().collect())
            .collect();
        let clip = MultichannelClip::new(fe.sample_rate, chans)?;
        let a = fe.inner.analyze_second(&clip)?;
        *speech_prob = a.speech_prob;
        grid.copy_from_slice(&a.grid);
        summary.copy_from_slice(&a.summary);
        Ok(())
    })
}

/// Trained estimator loaded from a checkpoint.
pub struct OccEstimator {
    inner: Estimator,
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn occ_estimator_load(
    path: *const c_char,
    out: *mut *mut OccEstimator,
) -> OccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let inner = Estimator::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(OccEstimator { inner }));
        Ok(())
    })
}

/// # Safety
/// `est` must come from [`occ_estimator_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn occ_estimator_free(est: *mut OccEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Predicts occupancy for `seconds` consecutive analysed seconds. `grids`
/// and `summaries` are row-major. Seconds the estimator's gate discards are
/// written as NaN. A privatized estimator draws inference noise from OS
/// entropy, or from `noise_seed` when `seeded` is non-zero (seeding voids
/// the privacy guarantee). `epsilon_spent` receives the budget used and may
/// be null.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn occ_estimator_predict(
    est: *const OccEstimator,
    grids: *const f64,
    summaries: *const f64,
    speech_probs: *const f64,
    seconds: usize,
    seeded: i32,
    noise_seed: u64,
    predictions: *mut f64,
    epsilon_spent: *mut f64,
) -> OccStatus {
    guard(|| {
        let est = est.as_ref().ok_or_else(null)?;
        if seconds == 0 {
            return Err(invalid("at least one second is required"));
        }
        let (gl, sl) = (occ_grid_len(), occ_summary_len());
        let grids = slice_arg(grids, seconds * gl)?;
        let summaries = slice_arg(summaries, seconds * sl)?;
        let probs = slice_arg(speech_probs, seconds)?;
        let out = slice_arg_mut(predictions, seconds)?;
        let rows: Vec<SecondFeatures<'_>> = (0..seconds)
            .map(|i| SecondFeatures {
                grid: &grids[i * gl..(i + 1) * gl],
                summary: &summaries[i * sl..(i + 1) * sl],
                speech_prob: probs[i],
            })
            .collect();
        let mut noise = if seeded != 0 {
            NoiseSource::seeded(noise_seed)
        } else {
            NoiseSource::from_entropy()
        };
        let (pred, ledger) = est.inner.predict_seconds(&rows, Some(&mut noise))?;
        for (o, p) in out.iter_mut().zip(pred) {
            *o = p.unwrap_or(f64::NAN);
        }
        if !epsilon_spent.is_null() {
            *epsilon_spent = ledger.map_or(0.0, |l| l.total_spent());
        }
        Ok(())
    })
}

/// Byte buffer owned by the library.
#[repr(C)]
pub struct OccBuffer {
    pub data: *mut u8,
    pub len: usize,
}

fn into_buffer(bytes: Vec<u8>) -> OccBuffer {
    let boxed = bytes.into_boxed_slice();
    let len = boxed.len();
    OccBuffer {
        data: Box::into_raw(boxed).cast(),
        len,
    }
}

/// # Safety
/// `buf` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn occ_buffer_free(buf: OccBuffer) {
    if !buf.data.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(
            buf.data, buf.len,
        )));
    }
}

/// Seals `payload` to the PEM public key at `public_key_path`. The
/// serialized record is written to `out`.
///
/// # Safety
/// Strings must be NUL-terminated; `payload` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn occ_seal(
    public_key_path: *const c_char,
    payload: *const u8,
    len: usize,
    type_tag: *const c_char,
    timestamp: u64,
    out: *mut OccBuffer,
) -> OccStatus {
    guard(|| {
        if out.is_null() || type_tag.is_null() {
            return Err(null());
        }
        let pk = store::read_public_key_pem(path_arg(public_key_path)?)?;
        let tag = CStr::from_ptr(type_tag)
            .to_str()
            .map_err(|_| invalid("type tag is not valid UTF-8"))?;
        let meta = RecordMeta {
            type_tag: tag.to_string(),
            timestamp,
        };
        let record = store::seal(slice_arg(payload, len)?, meta, &pk, &mut rand::rngs::OsRng)?;
        *out = into_buffer(record.to_bytes()?);
        Ok(())
    })
}

/// Opens a serialized record with the PEM private key at `private_key_path`.
///
/// # Safety
/// Strings must be NUL-terminated; `record` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn occ_unseal(
    private_key_path: *const c_char,
    record: *const u8,
    len: usize,
    out: *mut OccBuffer,
) -> OccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let sk = store::read_private_key_pem(path_arg(private_key_path)?)?;
        let (_, payload) = store::unseal_bytes(slice_arg(record, len)?, &sk)?;
        *out = into_buffer(payload);
        Ok(())
    })
}
