//! C ABI for the fwnucl attack library: opaque model handles, status
//! codes, and a flat parameter struct covering the attack surface.
//!
//! Every function returns a status code; on non-`Ok` statuses the
//! message is retrievable via `fwnucl_last_error` (thread-local). Handles
//! and strings returned by this library must be released with the
//! matching `_free` function.

use fwnucl::attack::{run_attack, AttackConfig, AttackKind, LossMode};
use fwnucl::ball::DistortionBall;
use fwnucl::data::synth_dataset;
use fwnucl::model::{load_model, predict, save_model, train_sgd, GradientModel, Model};
use fwnucl::tensor::{GroupPartition, ImageTensor, Matricization};
use fwnucl::StepRule;
use libc::c_char;
use std::cell::RefCell;
use std::ffi::{CStr, CString};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwnuclStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    IoError = 3,
    RuntimeError = 4,
}

fn status_of(e: &fwnucl::Error) -> FwnuclStatus {
    match e {
        fwnucl::Error::Io(_) => FwnuclStatus::IoError,
        fwnucl::Error::NonFinite(_) | fwnucl::Error::Runtime(_) => FwnuclStatus::RuntimeError,
        _ => FwnuclStatus::InvalidArgument,
    }
}

/// Opaque classifier handle.
pub struct FwnuclModel(Model);

/// Attack family selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwnuclAttackKind {
    Fgsm = 0,
    Pgd = 1,
    PgdNucl = 2,
    Fw = 3,
}

/// Distortion-set selector. `SchattenQ` reads the `q` field;
/// `GroupPerChannel` builds one full-frame group per channel.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwnuclBallKind {
    Linf = 0,
    L1 = 1,
    L2 = 2,
    Nuclear = 3,
    SchattenQ = 4,
    GroupPerChannel = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwnuclStepRule {
    Harmonic = 0,
    ShortStep = 1,
    Backtracking = 2,
}

/// Flat attack configuration; `q` is the Schatten exponent (<= 0 means
/// infinity), `lipschitz` feeds the short-step rule, `targeted` < 0 runs
/// the untargeted loss.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FwnuclAttackParams {
    pub attack: FwnuclAttackKind,
    pub ball: FwnuclBallKind,
    pub eps: f64,
    pub q: f64,
    pub per_channel: bool,
    pub steps: u32,
    pub step_size: f64,
    pub rule: FwnuclStepRule,
    pub lipschitz: f64,
    pub random_start: bool,
    pub clamp_final: bool,
    pub seed: u64,
    pub targeted: i64,
}

/// Per-attack outcome for one image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FwnuclAttackStats {
    pub success: bool,
    pub final_loss: f64,
    pub l2: f64,
    pub nuclear: f64,
    pub linf: f64,
    pub nonzero_pixels: u64,
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn fwnucl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy of the last error message on this thread, or NULL when none.
/// Free with `fwnucl_string_free`.
#[no_mangle]
pub extern "C" fn fwnucl_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_load(
    path: *const c_char,
    out: *mut *mut FwnuclModel,
) -> FwnuclStatus {
    if path.is_null() || out.is_null() {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            return FwnuclStatus::InvalidArgument;
        }
    };
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) => {
            set_error(format!("cannot open {path}: {e}"));
            return FwnuclStatus::IoError;
        }
    };
    match load_model(&mut std::io::BufReader::new(file)) {
        Ok(m) => {
            *out = Box::into_raw(Box::new(FwnuclModel(m)));
            FwnuclStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `model` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_save(
    model: *const FwnuclModel,
    path: *const c_char,
) -> FwnuclStatus {
    if model.is_null() || path.is_null() {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            return FwnuclStatus::InvalidArgument;
        }
    };
    let mut file = match std::fs::File::create(path) {
        Ok(f) => f,
        Err(e) => {
            set_error(format!("cannot create {path}: {e}"));
            return FwnuclStatus::IoError;
        }
    };
    match save_model(&(*model).0, &mut file) {
        Ok(()) => FwnuclStatus::Ok,
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Train a classifier on the built-in synthetic two-class set. `kind` is
/// one of "linear", "mlp", "conv".
///
/// # Safety
/// `kind` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_train_synth(
    kind: *const c_char,
    data_seed: u64,
    n: usize,
    channels: usize,
    height: usize,
    width: usize,
    epochs: usize,
    lr: f64,
    train_seed: u64,
    out: *mut *mut FwnuclModel,
) -> FwnuclStatus {
    if kind.is_null() || out.is_null() {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    let kind = match CStr::from_ptr(kind).to_str() {
        Ok(k) => k,
        Err(_) => {
            set_error("kind is not valid UTF-8".into());
            return FwnuclStatus::InvalidArgument;
        }
    };
    if channels == 0 || height == 0 || width == 0 || n == 0 {
        set_error("dimensions and sample count must be positive".into());
        return FwnuclStatus::InvalidArgument;
    }
    let shape = (channels, height, width);
    let mut model = match kind {
        "linear" => Model::linear_softmax(shape, 2, train_seed),
        "mlp" => Model::mlp_1hidden(shape, 32, 2, train_seed),
        "conv" => Model::tiny_conv(shape, 4, 2, train_seed),
        other => {
            set_error(format!("unknown model kind {other:?}"));
            return FwnuclStatus::InvalidArgument;
        }
    };
    let data = synth_dataset(data_seed, n, shape);
    match train_sgd(&mut model, &data, epochs, lr, train_seed) {
        Ok(_) => {
            *out = Box::into_raw(Box::new(FwnuclModel(model)));
            FwnuclStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `model` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_free(model: *mut FwnuclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_input_shape(
    model: *const FwnuclModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> FwnuclStatus {
    if model.is_null() || channels.is_null() || height.is_null() || width.is_null() {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    let (c, h, w) = (*model).0.input_shape();
    *channels = c;
    *height = h;
    *width = w;
    FwnuclStatus::Ok
}

/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_num_classes(
    model: *const FwnuclModel,
    out: *mut usize,
) -> FwnuclStatus {
    if model.is_null() || out.is_null() {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    *out = (*model).0.num_classes();
    FwnuclStatus::Ok
}

unsafe fn tensor_from_raw(
    model: &Model,
    pixels: *const f64,
    len: usize,
) -> Result<ImageTensor, (FwnuclStatus, String)> {
    let (c, h, w) = model.input_shape();
    if len != c * h * w {
        return Err((
            FwnuclStatus::InvalidArgument,
            format!(
                "pixel buffer has {len} entries, model expects {}",
                c * h * w
            ),
        ));
    }
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    ImageTensor::new(c, h, w, data).map_err(|e| (FwnuclStatus::InvalidArgument, e.to_string()))
}

/// # Safety
/// `model` must be a live handle; `pixels` must point to `len` doubles;
/// `out_label` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_model_predict(
    model: *const FwnuclModel,
    pixels: *const f64,
    len: usize,
    out_label: *mut usize,
) -> FwnuclStatus {
    if model.is_null() || pixels.is_null() || out_label.is_null() {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    match tensor_from_raw(&(*model).0, pixels, len) {
        Ok(x) => {
            *out_label = predict(&(*model).0, &x);
            FwnuclStatus::Ok
        }
        Err((status, msg)) => {
            set_error(msg);
            status
        }
    }
}

fn build_config(
    params: &FwnuclAttackParams,
    shape: (usize, usize, usize),
) -> fwnucl::Result<(AttackKind, AttackConfig)> {
    let matricization = if params.per_channel {
        Matricization::PerChannel
    } else {
        Matricization::Stacked
    };
    let ball = match params.ball {
        FwnuclBallKind::Linf => DistortionBall::linf(params.eps)?,
        FwnuclBallKind::L1 => DistortionBall::l1(params.eps)?,
        FwnuclBallKind::L2 => DistortionBall::l2(params.eps)?,
        FwnuclBallKind::Nuclear => DistortionBall::schatten(1.0, params.eps, matricization)?,
        FwnuclBallKind::SchattenQ => {
            let q = if params.q <= 0.0 {
                f64::INFINITY
            } else {
                params.q
            };
            DistortionBall::schatten(q, params.eps, matricization)?
        }
        FwnuclBallKind::GroupPerChannel => DistortionBall::group_nuclear(
            GroupPartition::per_channel(shape.0, shape.1, shape.2),
            params.eps,
        )?,
    };
    let rule = match params.rule {
        FwnuclStepRule::Harmonic => StepRule::Harmonic,
        FwnuclStepRule::ShortStep => StepRule::short_step(params.lipschitz)?,
        FwnuclStepRule::Backtracking => StepRule::backtracking(),
    };
    let kind = match params.attack {
        FwnuclAttackKind::Fgsm => AttackKind::Fgsm,
        FwnuclAttackKind::Pgd => AttackKind::Pgd,
        FwnuclAttackKind::PgdNucl => AttackKind::PgdNucl,
        FwnuclAttackKind::Fw => AttackKind::Fw,
    };
    let mut cfg = AttackConfig::new(ball, params.steps as usize)
        .with_rule(rule)
        .with_step_size(params.step_size)
        .with_seed(params.seed);
    cfg.random_start = params.random_start;
    cfg.clamp_final = params.clamp_final;
    cfg.loss = if params.targeted < 0 {
        LossMode::Untargeted
    } else {
        LossMode::Targeted {
            target_label: params.targeted as usize,
        }
    };
    Ok((kind, cfg))
}

/// Run one attack on one image. `x_adv_out` receives the adversarial
/// image (same length as the input buffer); `stats_out` the outcome.
///
/// # Safety
/// `model` must be a live handle; `pixels` and `x_adv_out` must point to
/// `len` doubles; `params` and `stats_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fwnucl_attack_run(
    model: *const FwnuclModel,
    pixels: *const f64,
    len: usize,
    true_label: usize,
    params: *const FwnuclAttackParams,
    x_adv_out: *mut f64,
    stats_out: *mut FwnuclAttackStats,
) -> FwnuclStatus {
    if model.is_null()
        || pixels.is_null()
        || params.is_null()
        || x_adv_out.is_null()
        || stats_out.is_null()
    {
        set_error("null argument".into());
        return FwnuclStatus::NullArgument;
    }
    let model = &(*model).0;
    let x = match tensor_from_raw(model, pixels, len) {
        Ok(x) => x,
        Err((status, msg)) => {
            set_error(msg);
            return status;
        }
    };
    if true_label >= model.num_classes() {
        set_error(format!(
            "label {true_label} out of range for {} classes",
            model.num_classes()
        ));
        return FwnuclStatus::InvalidArgument;
    }
    let (kind, cfg) = match build_config(&*params, model.input_shape()) {
        Ok(pair) => pair,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    match run_attack(kind, model, &x, true_label, &cfg) {
        Ok(r) => {
            std::slice::from_raw_parts_mut(x_adv_out, len).copy_from_slice(r.x_adv.data());
            *stats_out = FwnuclAttackStats {
                success: r.success,
                final_loss: r.final_loss,
                l2: r.l2,
                nuclear: r.nuclear,
                linf: r.linf,
                nonzero_pixels: r.nonzero_pixels as u64,
            };
            FwnuclStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}
