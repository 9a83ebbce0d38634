//! C interface to the analysis and resynthesis pipeline.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Every fallible call returns an [`AncogenStatus`] and,
//! on failure, leaves a message readable through [`ancogen_last_error`]
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ancogen::attributes::AttributeSet;
use ancogen::dsp::{Waveform, SAMPLE_RATE};
use ancogen::inference::{ControlEdit, Pipeline, ResynthConfig};
use ancogen::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AncogenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    ManifestMismatch = 4,
    Untrained = 5,
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AncogenEditKind {
    /// Percent change of voiced f0.
    PitchShift = 0,
    SetSnr = 1,
    SetC50 = 2,
    ScaleLoudness = 3,
    /// 1-based label passed as a whole number.
    SetSpeaker = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct AncogenEdit {
    pub kind: AncogenEditKind,
    pub value: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AncogenTrack {
    F0 = 0,
    Loudness = 1,
    Snr = 2,
    C50 = 3,
}

/// Loaded tokenizer, VQ-VAE and MAE.
pub struct AncogenPipeline(Pipeline);

/// Analysis result on the mel frame grid.
pub struct AncogenAttributes(AttributeSet);

/// Mono 16 kHz samples.
pub struct AncogenAudio(Vec<f64>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> AncogenStatus {
    match e {
        Error::Io { .. } | Error::Wav(_) => AncogenStatus::Io,
        Error::ManifestMismatch(_) => AncogenStatus::ManifestMismatch,
        Error::Untrained(_) => AncogenStatus::Untrained,
        Error::InvalidInput(_) | Error::TooShort { .. } | Error::ShapeMismatch(_) | Error::OutOfVocabulary(_) => {
            AncogenStatus::InvalidArgument
        }
        _ => AncogenStatus::Runtime,
    }
}

struct Fail(AncogenStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AncogenStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AncogenStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AncogenStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {m}"));
            AncogenStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(AncogenStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn samples_arg(samples: *const f64, len: usize) -> Result<Waveform, Fail> {
    if samples.is_null() {
        return Err(null("samples"));
    }
    let s = std::slice::from_raw_parts(samples, len).to_vec();
    Ok(Waveform::from_samples(s)?)
}

fn edit_of(e: &AncogenEdit) -> Result<ControlEdit, Fail> {
    Ok(match e.kind {
        AncogenEditKind::PitchShift => ControlEdit::PitchShift(e.value),
        AncogenEditKind::SetSnr => ControlEdit::SetSnr(e.value),
        AncogenEditKind::SetC50 => ControlEdit::SetC50(e.value),
        AncogenEditKind::ScaleLoudness => ControlEdit::ScaleLoudness(e.value),
        AncogenEditKind::SetSpeaker => {
            if e.value.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&e.value) {
                return Err(Fail(AncogenStatus::InvalidArgument, format!("speaker label {} is not a positive integer", e.value)));
            }
            ControlEdit::SetSpeaker(e.value as u32)
        }
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ancogen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ancogen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub extern "C" fn ancogen_sample_rate() -> u32 {
    SAMPLE_RATE
}

/// Loads a model directory. `mae_checkpoint` may be null for
/// `<model_dir>/mae.ckpt`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ancogen_pipeline_load(
    model_dir: *const c_char,
    mae_checkpoint: *const c_char,
    out: *mut *mut AncogenPipeline,
) -> AncogenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = path_arg(model_dir, "model_dir")?;
        let ckpt = if mae_checkpoint.is_null() {
            dir.join(ancogen::trainer::CHECKPOINT_FILE)
        } else {
            path_arg(mae_checkpoint, "mae_checkpoint")?
        };
        let p = Pipeline::load(&dir, &ckpt)?;
        *out = Box::into_raw(Box::new(AncogenPipeline(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`ancogen_pipeline_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ancogen_pipeline_free(p: *mut AncogenPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Samples per model segment, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live pipeline handle.
#[no_mangle]
pub unsafe extern "C" fn ancogen_pipeline_segment_samples(p: *const AncogenPipeline) -> usize {
    p.as_ref().map_or(0, |p| p.0.segment_samples())
}

/// # Safety
/// `p` must be a live pipeline; `samples` must point to `len` readable
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ancogen_analyze(
    p: *const AncogenPipeline,
    samples: *const f64,
    len: usize,
    out: *mut *mut AncogenAttributes,
) -> AncogenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        let w = samples_arg(samples, len)?;
        let a = p.0.analyze(&w)?;
        *out = Box::into_raw(Box::new(AncogenAttributes(a.attrs)));
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a handle from [`ancogen_analyze`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ancogen_attributes_free(a: *mut AncogenAttributes) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Frames per track, or 0 for a null handle.
///
/// # Safety
/// `a` must be null or a live attributes handle.
#[no_mangle]
pub unsafe extern "C" fn ancogen_attributes_frames(a: *const AncogenAttributes) -> usize {
    a.as_ref().map_or(0, |a| a.0.frames())
}

/// 1-based speaker label, or 0 for a null handle.
///
/// # Safety
/// `a` must be null or a live attributes handle.
#[no_mangle]
pub unsafe extern "C" fn ancogen_attributes_speaker(a: *const AncogenAttributes) -> u32 {
    a.as_ref().map_or(0, |a| a.0.speaker)
}

/// Copies up to `cap` values of a track into `buf`; `written` receives the
/// count. Fails with `INVALID_ARGUMENT` when `cap` is smaller than the track.
///
/// # Safety
/// `a` must be a live handle; `buf` must have room for `cap` values;
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ancogen_attributes_track(
    a: *const AncogenAttributes,
    track: AncogenTrack,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> AncogenStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("attributes"))?;
        if buf.is_null() || written.is_null() {
            return Err(null("buf"));
        }
        let v = match track {
            AncogenTrack::F0 => &a.0.f0,
            AncogenTrack::Loudness => &a.0.loudness,
            AncogenTrack::Snr => &a.0.snr,
            AncogenTrack::C50 => &a.0.c50,
        };
        *written = 0;
        if cap < v.len() {
            return Err(Fail(
                AncogenStatus::InvalidArgument,
                format!("buffer holds {cap} values, track has {}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        *written = v.len();
        Ok(())
    })
}

/// Analysis, edits, generation and inversion. `report_json` may be null;
/// otherwise it receives a string to release with [`ancogen_string_free`].
///
/// # Safety
/// `p` must be a live pipeline; `samples` must point to `len` values;
/// `edits` must point to `n_edits` entries (or be null when zero); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ancogen_resynthesize(
    p: *const AncogenPipeline,
    samples: *const f64,
    len: usize,
    edits: *const AncogenEdit,
    n_edits: usize,
    out: *mut *mut AncogenAudio,
    report_json: *mut *mut c_char,
) -> AncogenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if !report_json.is_null() {
            *report_json = ptr::null_mut();
        }
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        let w = samples_arg(samples, len)?;
        let edits = if n_edits == 0 {
            Vec::new()
        } else if edits.is_null() {
            return Err(null("edits"));
        } else {
            std::slice::from_raw_parts(edits, n_edits)
                .iter()
                .map(edit_of)
                .collect::<Result<Vec<_>, _>>()?
        };
        let (y, report) = p.0.resynthesize(&w, &edits, &ResynthConfig::default())?;
        if !report_json.is_null() {
            let s = serde_json::to_string(&report).map_err(|e| Fail(AncogenStatus::Runtime, e.to_string()))?;
            *report_json = CString::new(s).map_err(|e| Fail(AncogenStatus::Runtime, e.to_string()))?.into_raw();
        }
        *out = Box::into_raw(Box::new(AncogenAudio(y.into_samples())));
        Ok(())
    })
}

/// Pointer to the samples, valid while the handle lives; `len` receives the
/// count. Null for a null handle.
///
/// # Safety
/// `a` must be null or a live audio handle; `len` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ancogen_audio_samples(a: *const AncogenAudio, len: *mut usize) -> *const f64 {
    let (p, n) = a.as_ref().map_or((ptr::null(), 0), |a| (a.0.as_ptr(), a.0.len()));
    if !len.is_null() {
        *len = n;
    }
    p
}

/// # Safety
/// `a` must be null or a handle from [`ancogen_resynthesize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ancogen_audio_free(a: *mut AncogenAudio) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ancogen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last() -> String {
        let p = ancogen_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn null_out_pointer() {
        let s = unsafe { ancogen_pipeline_load(c"x".as_ptr(), ptr::null(), ptr::null_mut()) };
        assert_eq!(s, AncogenStatus::NullPointer);
        assert!(last().contains("out"));
    }

    #[test]
    fn missing_model_dir_is_io() {
        let mut h = ptr::null_mut();
        let s = unsafe { ancogen_pipeline_load(c"/nonexistent/model".as_ptr(), ptr::null(), &mut h) };
        assert_eq!(s, AncogenStatus::Io);
        assert!(h.is_null());
        assert!(last().contains("nonexistent"));
    }

    #[test]
    fn success_clears_error() {
        let _ = unsafe { ancogen_pipeline_load(ptr::null(), ptr::null(), ptr::null_mut()) };
        assert!(!ancogen_last_error().is_null());
        let mut h = ptr::null_mut();
        let s = unsafe { ancogen_analyze(ptr::null(), ptr::null(), 0, &mut h) };
        assert_eq!(s, AncogenStatus::NullPointer);
        assert_eq!(last(), "pipeline is null");
    }

    #[test]
    fn speaker_edit_must_be_integral() {
        let bad = AncogenEdit {
            kind: AncogenEditKind::SetSpeaker,
            value: 1.5,
        };
        assert!(edit_of(&bad).is_err());
        let ok = AncogenEdit {
            kind: AncogenEditKind::SetSpeaker,
            value: 2.0,
        };
        assert!(matches!(edit_of(&ok), Ok(ControlEdit::SetSpeaker(2))));
    }

    #[test]
    fn null_handles_are_harmless() {
        unsafe {
            ancogen_pipeline_free(ptr::null_mut());
            ancogen_attributes_free(ptr::null_mut());
            ancogen_audio_free(ptr::null_mut());
            ancogen_string_free(ptr::null_mut());
            assert_eq!(ancogen_pipeline_segment_samples(ptr::null()), 0);
            assert_eq!(ancogen_attributes_frames(ptr::null()), 0);
            let mut n = 7;
            assert!(ancogen_audio_samples(ptr::null(), &mut n).is_null());
            assert_eq!(n, 0);
        }
    }

    #[test]
    fn version_and_rate() {
        let v = unsafe { CStr::from_ptr(ancogen_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
        assert_eq!(ancogen_sample_rate(), 16_000);
    }
}
