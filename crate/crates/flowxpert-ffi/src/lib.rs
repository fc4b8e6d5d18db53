//! C ABI for loading trained flowxpert models and scoring single flows.
//!
//! The surface is deliberately small: open a model file, ask it about its
//! shape, classify one flow at a time, close it. Models are produced by the
//! `flowxpert train` CLI or the library's training pipeline; this crate only
//! runs inference.
//!
//! Conventions:
//! - Every fallible call returns an [`FxStatus`]; `FX_STATUS_OK` is zero.
//! - On failure, [`fx_last_error`] returns a human-readable message for the
//!   calling thread. The pointer stays valid until the next library call on
//!   that thread.
//! - [`FxModel`] is opaque. Handles come from [`fx_model_open`] and must be
//!   released with [`fx_model_close`] exactly once. A handle may be shared
//!   across threads for concurrent reads; inference takes `&self` only.
//! - Panics never unwind across the boundary: they are caught and surfaced
//!   as `FX_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use flowxpert::bundle::{self, ModelBundle, ModelIoError};
use flowxpert::flow::{FlowMeta, RawFeatureRecord};
use flowxpert::nn::matrix::Matrix;
use flowxpert::pcap::Protocol;
use flowxpert::train;

/// Protocol code for TCP flows.
pub const FX_PROTOCOL_TCP: u32 = 0;
/// Protocol code for UDP flows.
pub const FX_PROTOCOL_UDP: u32 = 1;
/// Protocol code for anything that is neither TCP nor UDP.
pub const FX_PROTOCOL_OTHER: u32 = 2;

/// Class code for benign predictions.
pub const FX_LABEL_BENIGN: u32 = 0;
/// Class code for malicious predictions.
pub const FX_LABEL_MALICIOUS: u32 = 1;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was present but unusable (bad protocol code, non-finite
    /// feature, wrong buffer length, non-UTF-8 path).
    InvalidArgument = 2,
    /// The model file could not be read.
    IoError = 3,
    /// The model file was read but failed validation.
    CorruptModel = 4,
    /// An unexpected internal failure; details via `fx_last_error`.
    Internal = 5,
}

/// Opaque handle to a loaded model.
pub struct FxModel {
    bundle: ModelBundle,
}

/// Per-flow features, exactly as the extractor computes them.
///
/// `protocol` must be one of the `FX_PROTOCOL_*` codes. All floating-point
/// fields must be finite. Counters are raw counts; rates are per second.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FxFlowStats {
    /// One of `FX_PROTOCOL_TCP`, `FX_PROTOCOL_UDP`, `FX_PROTOCOL_OTHER`.
    pub protocol: u32,
    /// Flow duration in seconds.
    pub flow_dur: f64,
    /// Packets observed in the flow.
    pub pkt_num: u64,
    /// Packet rate over the flow's lifetime.
    pub pkts_per_sec: f64,
    /// Mean inter-arrival time in seconds.
    pub iat_mean: f64,
    /// Inter-arrival time standard deviation in seconds.
    pub iat_std: f64,
    /// SYN packets seen.
    pub syn_num: u64,
    /// FIN packets seen.
    pub fin_num: u64,
    /// RST packets seen.
    pub rst_num: u64,
    /// Distinct source ports used by the initiating host so far.
    pub num_s_port: u64,
    /// Distinct destination addresses contacted by the initiating host.
    pub num_d_ip: u64,
    /// Distinct destination ports contacted by the initiating host.
    pub num_d_port: u64,
    /// Connections per second opened by the initiating host.
    pub con_per_sec: f64,
}

/// Classification outcome for one flow.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FxPrediction {
    /// `FX_LABEL_BENIGN` or `FX_LABEL_MALICIOUS`.
    pub label: u32,
    /// Probability the flow is benign.
    pub p_benign: f32,
    /// Probability the flow is malicious. Sums with `p_benign` to 1.
    pub p_malicious: f32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg)
        .unwrap_or_else(|_| CString::new("error message contained an interior NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn clear_error() {
    LAST_ERROR.with(|e| {
        let mut slot = e.borrow_mut();
        if !slot.as_bytes().is_empty() {
            *slot = CString::default();
        }
    });
}

/// Runs `f`, converting any panic into `FX_STATUS_INTERNAL` instead of
/// letting it unwind into the caller's frames.
fn guarded(f: impl FnOnce() -> FxStatus) -> FxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unexpected panic".to_string());
            set_error(format!("Internal: {msg}"));
            FxStatus::Internal
        }
    }
}

fn record_from_stats(s: &FxFlowStats) -> Result<RawFeatureRecord, String> {
    let protocol = match s.protocol {
        FX_PROTOCOL_TCP => Protocol::Tcp,
        FX_PROTOCOL_UDP => Protocol::Udp,
        FX_PROTOCOL_OTHER => Protocol::Other,
        other => return Err(format!("unknown protocol code {other} (expected 0, 1 or 2)")),
    };
    let finite = [
        ("flow_dur", s.flow_dur),
        ("pkts_per_sec", s.pkts_per_sec),
        ("iat_mean", s.iat_mean),
        ("iat_std", s.iat_std),
        ("con_per_sec", s.con_per_sec),
    ];
    for (name, v) in finite {
        if !v.is_finite() {
            return Err(format!("feature {name} is not finite"));
        }
    }
    Ok(RawFeatureRecord {
        protocol,
        flow_dur: s.flow_dur,
        pkt_num: s.pkt_num,
        pkts_per_sec: s.pkts_per_sec,
        iat_mean: s.iat_mean,
        iat_std: s.iat_std,
        syn_num: s.syn_num,
        fin_num: s.fin_num,
        rst_num: s.rst_num,
        num_s_port: s.num_s_port,
        num_d_ip: s.num_d_ip,
        num_d_port: s.num_d_port,
        con_per_sec: s.con_per_sec,
        meta: FlowMeta::unspecified(),
    })
}

/// Loads a model file and hands back an owned handle through `out`.
///
/// On failure `*out` is set to null and the status describes why.
///
/// # Safety
///
/// `path` must point to a NUL-terminated string; `out` must be a valid
/// location to store one pointer. Both must outlive the call.
#[no_mangle]
pub unsafe extern "C" fn fx_model_open(path: *const c_char, out: *mut *mut FxModel) -> FxStatus {
    if path.is_null() || out.is_null() {
        set_error("fx_model_open requires non-null path and out arguments".to_string());
        return FxStatus::NullPointer;
    }
    *out = std::ptr::null_mut();
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p.to_string(),
        Err(_) => {
            set_error("model path is not valid UTF-8".to_string());
            return FxStatus::InvalidArgument;
        }
    };
    guarded(|| match bundle::load_model(&path) {
        Ok(b) => {
            *out = Box::into_raw(Box::new(FxModel { bundle: b }));
            clear_error();
            FxStatus::Ok
        }
        Err(e) => {
            let status = match &e {
                ModelIoError::Io(_) => FxStatus::IoError,
                ModelIoError::CorruptModelFile(_) => FxStatus::CorruptModel,
            };
            set_error(e.to_string());
            status
        }
    })
}

/// Releases a handle returned by [`fx_model_open`]. Null is a no-op.
///
/// # Safety
///
/// `model` must be null or a handle from `fx_model_open` that has not
/// already been closed. No other thread may be using it during the call.
#[no_mangle]
pub unsafe extern "C" fn fx_model_close(model: *mut FxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model's trainable parameter count to `out`.
///
/// # Safety
///
/// `model` must be a live handle from [`fx_model_open`]; `out` must be a
/// valid location for one `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn fx_model_param_count(model: *const FxModel, out: *mut u64) -> FxStatus {
    if model.is_null() || out.is_null() {
        set_error("fx_model_param_count requires non-null arguments".to_string());
        return FxStatus::NullPointer;
    }
    guarded(|| {
        *out = (*model).bundle.param_count() as u64;
        clear_error();
        FxStatus::Ok
    })
}

/// Writes the contrastive margin the model was trained with to `out`.
///
/// # Safety
///
/// `model` must be a live handle from [`fx_model_open`]; `out` must be a
/// valid location for one `double`.
#[no_mangle]
pub unsafe extern "C" fn fx_model_margin(model: *const FxModel, out: *mut f64) -> FxStatus {
    if model.is_null() || out.is_null() {
        set_error("fx_model_margin requires non-null arguments".to_string());
        return FxStatus::NullPointer;
    }
    guarded(|| {
        *out = (*model).bundle.margin;
        clear_error();
        FxStatus::Ok
    })
}

/// Writes the width of the vectors produced by [`fx_embed`] to `out`.
///
/// # Safety
///
/// `model` must be a live handle from [`fx_model_open`]; `out` must be a
/// valid location for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn fx_model_embedding_dim(
    model: *const FxModel,
    out: *mut usize,
) -> FxStatus {
    if model.is_null() || out.is_null() {
        set_error("fx_model_embedding_dim requires non-null arguments".to_string());
        return FxStatus::NullPointer;
    }
    guarded(|| {
        *out = (*model).bundle.embedding.out_dim();
        clear_error();
        FxStatus::Ok
    })
}

/// Classifies one flow and writes the outcome to `out`.
///
/// # Safety
///
/// `model` must be a live handle from [`fx_model_open`]; `flow` and `out`
/// must point to valid structs for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn fx_predict(
    model: *const FxModel,
    flow: *const FxFlowStats,
    out: *mut FxPrediction,
) -> FxStatus {
    if model.is_null() || flow.is_null() || out.is_null() {
        set_error("fx_predict requires non-null arguments".to_string());
        return FxStatus::NullPointer;
    }
    guarded(|| {
        let record = match record_from_stats(&*flow) {
            Ok(r) => r,
            Err(msg) => {
                set_error(msg);
                return FxStatus::InvalidArgument;
            }
        };
        let (class, probs) = train::predict(&(*model).bundle, &record);
        *out = FxPrediction {
            label: class.index() as u32,
            p_benign: probs[0],
            p_malicious: probs[1],
        };
        clear_error();
        FxStatus::Ok
    })
}

/// Writes the flow's embedding vector into `out`.
///
/// `out_len` must equal the model's embedding width (see
/// [`fx_model_embedding_dim`]); anything else is rejected without touching
/// the buffer.
///
/// # Safety
///
/// `model` must be a live handle from [`fx_model_open`]; `flow` must point
/// to a valid struct; `out` must point to at least `out_len` writable
/// floats.
#[no_mangle]
pub unsafe extern "C" fn fx_embed(
    model: *const FxModel,
    flow: *const FxFlowStats,
    out: *mut f32,
    out_len: usize,
) -> FxStatus {
    if model.is_null() || flow.is_null() || out.is_null() {
        set_error("fx_embed requires non-null arguments".to_string());
        return FxStatus::NullPointer;
    }
    guarded(|| {
        let bundle = &(*model).bundle;
        let dim = bundle.embedding.out_dim();
        if out_len != dim {
            set_error(format!(
                "output buffer holds {out_len} values but the embedding has {dim}"
            ));
            return FxStatus::InvalidArgument;
        }
        let record = match record_from_stats(&*flow) {
            Ok(r) => r,
            Err(msg) => {
                set_error(msg);
                return FxStatus::InvalidArgument;
            }
        };
        let v = bundle.scaler.transform(&record);
        let x = Matrix::from_vec(1, v.0.len(), v.0.to_vec());
        let y = bundle.embedding.forward_eval(&x);
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(y.row(0));
        clear_error();
        FxStatus::Ok
    })
}

/// Returns the message for the most recent failure on the calling thread,
/// or an empty string when the last call succeeded. The pointer is valid
/// until the next library call on this thread.
#[no_mangle]
pub extern "C" fn fx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
