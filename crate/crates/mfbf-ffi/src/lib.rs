//! C ABI for the barrier-function library.
//!
//! Conventions:
//! - Handles are opaque pointers created by `*_new`/`*_load` functions and
//!   released with the matching `*_free`; constructors return null on
//!   failure and record a message retrievable with [`mfbf_last_error`].
//! - Fallible operations return an [`MfbfStatus`] code and write results
//!   through out-pointers.
//! - Joint states are length-8 arrays `(x1, y1, th1, z1, x2, y2, th2, z2)`;
//!   joint controls are length-6 arrays `(v1, w1, zeta1, v2, w2, zeta2)`.
//!
//! The generated header lives at `include/mfbf.h`.

use mfbf::barrier::{
    gamma_straight, gamma_turn, max_compose, BarrierFunction, FilterConfig, RolloutBarrier,
    SeparationMargin,
};
use mfbf::dynamics::{
    make_action_set, ActionSet, ControlBounds, ControlInput, FlatState, FwUavPlant, JointState,
    PlantParams,
};
use mfbf::learning::{load_checkpoint, LearnedBarrier};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::sync::Arc;

/// Status codes returned by fallible functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfbfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BoundsViolation = 3,
    IoError = 4,
    ParseError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn record(err: &mfbf::Error) -> MfbfStatus {
    set_error(&err.to_string());
    match err {
        mfbf::Error::BoundsViolation(_) => MfbfStatus::BoundsViolation,
        mfbf::Error::Io(_) => MfbfStatus::IoError,
        mfbf::Error::Parse { .. } => MfbfStatus::ParseError,
        _ => MfbfStatus::InvalidArgument,
    }
}

/// Message for the most recent error on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mfbf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// Plant
// ---------------------------------------------------------------------------

/// Opaque two-vehicle plant handle.
pub struct MfbfPlant {
    inner: FwUavPlant,
}

/// Create a plant; returns null if the parameters are inconsistent.
#[no_mangle]
pub extern "C" fn mfbf_plant_new(
    dt: f64,
    v_min: f64,
    v_max: f64,
    omega_max: f64,
    zeta_max: f64,
) -> *mut MfbfPlant {
    let params = PlantParams {
        dt,
        bounds: ControlBounds {
            v_min,
            v_max,
            omega_max,
            zeta_max,
        },
    };
    match params.validate() {
        Ok(()) => Box::into_raw(Box::new(MfbfPlant {
            inner: FwUavPlant::new(params),
        })),
        Err(e) => {
            record(&e);
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `plant` must be a pointer returned by [`mfbf_plant_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfbf_plant_free(plant: *mut MfbfPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// Step the plant once. Rejects out-of-bounds controls.
///
/// # Safety
/// `plant` must be valid; `state` must point to 8 readable doubles,
/// `control` to 6, and `next` to 8 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mfbf_plant_step(
    plant: *const MfbfPlant,
    state: *const f64,
    control: *const f64,
    next: *mut f64,
) -> MfbfStatus {
    if plant.is_null() || state.is_null() || control.is_null() || next.is_null() {
        set_error("null argument");
        return MfbfStatus::NullArgument;
    }
    let plant = &(*plant).inner;
    let x = JointState::from_flat(std::slice::from_raw_parts(state, 8));
    let u = ControlInput::from_flat(
        std::slice::from_raw_parts(control, 6)
            .try_into()
            .expect("slice of 6"),
    );
    match plant.step_checked(&x, &u) {
        Ok(x1) => {
            let flat = x1.to_flat();
            std::ptr::copy_nonoverlapping(flat.as_ptr(), next, 8);
            MfbfStatus::Ok
        }
        Err(e) => record(&e),
    }
}

// ---------------------------------------------------------------------------
// Action sets
// ---------------------------------------------------------------------------

/// Opaque joint action set handle.
pub struct MfbfActionSet {
    inner: ActionSet<ControlInput>,
}

/// Build the joint action set from per-vehicle turn-rate choices with
/// fixed speed and climb rate. Returns null on bounds violations or an
/// empty choice list.
///
/// # Safety
/// `plant` must be valid; `omegas` must point to `n_omegas` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfbf_action_set_new(
    plant: *const MfbfPlant,
    omegas: *const f64,
    n_omegas: usize,
    v_fixed: f64,
    zeta_fixed: f64,
) -> *mut MfbfActionSet {
    if plant.is_null() || (omegas.is_null() && n_omegas > 0) {
        set_error("null argument");
        return std::ptr::null_mut();
    }
    let choices = std::slice::from_raw_parts(omegas, n_omegas);
    match make_action_set(choices, v_fixed, zeta_fixed, &(*plant).inner.params.bounds) {
        Ok(set) => Box::into_raw(Box::new(MfbfActionSet { inner: set })),
        Err(e) => {
            record(&e);
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `set` must be a pointer returned by [`mfbf_action_set_new`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn mfbf_action_set_free(set: *mut MfbfActionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of joint actions in the set.
///
/// # Safety
/// `set` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfbf_action_set_len(set: *const MfbfActionSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.len()
}

/// Copy action `index` into `control_out`.
///
/// # Safety
/// `set` must be valid and `control_out` must point to 6 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mfbf_action_set_get(
    set: *const MfbfActionSet,
    index: usize,
    control_out: *mut f64,
) -> MfbfStatus {
    if set.is_null() || control_out.is_null() {
        set_error("null argument");
        return MfbfStatus::NullArgument;
    }
    let set = &(*set).inner;
    if index >= set.len() {
        set_error("action index out of range");
        return MfbfStatus::InvalidArgument;
    }
    let flat = set.get(index).to_flat();
    std::ptr::copy_nonoverlapping(flat.as_ptr(), control_out, 6);
    MfbfStatus::Ok
}

// ---------------------------------------------------------------------------
// Barriers
// ---------------------------------------------------------------------------

type SharedBarrier = Arc<dyn BarrierFunction<JointState, ControlInput> + Send + Sync>;

/// Opaque barrier-function handle.
pub struct MfbfBarrier {
    inner: SharedBarrier,
}

fn barrier_handle(inner: SharedBarrier) -> *mut MfbfBarrier {
    Box::into_raw(Box::new(MfbfBarrier { inner }))
}

fn margin(ds: f64, clip: f64) -> Result<SeparationMargin, mfbf::Error> {
    SeparationMargin::new(ds, (clip > 0.0).then_some(clip))
}

/// Exact rollout barrier under the hold-heading maneuver. `clip <= 0`
/// disables the upper clip.
///
/// # Safety
/// `plant` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_straight(
    plant: *const MfbfPlant,
    ds: f64,
    clip: f64,
    horizon: usize,
    v: f64,
    zeta: f64,
) -> *mut MfbfBarrier {
    if plant.is_null() {
        set_error("null argument");
        return std::ptr::null_mut();
    }
    let plant = (*plant).inner;
    let build = || -> Result<SharedBarrier, mfbf::Error> {
        if horizon == 0 {
            return Err(mfbf::Error::InvalidConfig("horizon must be >= 1".into()));
        }
        let gamma = gamma_straight(v, v, zeta, zeta, &plant.params.bounds)?;
        Ok(Arc::new(RolloutBarrier::new(
            plant,
            gamma,
            margin(ds, clip)?,
            horizon,
        )))
    };
    match build() {
        Ok(b) => barrier_handle(b),
        Err(e) => {
            record(&e);
            std::ptr::null_mut()
        }
    }
}

/// Exact rollout barrier under the shared-turn maneuver.
///
/// # Safety
/// `plant` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_turn(
    plant: *const MfbfPlant,
    ds: f64,
    clip: f64,
    horizon: usize,
    eta: f64,
    v: f64,
    omega: f64,
) -> *mut MfbfBarrier {
    if plant.is_null() {
        set_error("null argument");
        return std::ptr::null_mut();
    }
    let plant = (*plant).inner;
    let build = || -> Result<SharedBarrier, mfbf::Error> {
        if horizon == 0 {
            return Err(mfbf::Error::InvalidConfig("horizon must be >= 1".into()));
        }
        let gamma = gamma_turn(eta, v, omega, &plant.params.bounds)?;
        Ok(Arc::new(RolloutBarrier::new(
            plant,
            gamma,
            margin(ds, clip)?,
            horizon,
        )))
    };
    match build() {
        Ok(b) => barrier_handle(b),
        Err(e) => {
            record(&e);
            std::ptr::null_mut()
        }
    }
}

/// Learned barrier from a model checkpoint, with one-step changes
/// evaluated through the plant.
///
/// # Safety
/// `plant` must be valid and `checkpoint_path` must be a NUL-terminated
/// UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_load(
    plant: *const MfbfPlant,
    checkpoint_path: *const c_char,
    n_sigma: f64,
    mc_samples: usize,
) -> *mut MfbfBarrier {
    if plant.is_null() || checkpoint_path.is_null() {
        set_error("null argument");
        return std::ptr::null_mut();
    }
    let path = match CStr::from_ptr(checkpoint_path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("checkpoint path is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    let build = || -> Result<SharedBarrier, mfbf::Error> {
        let model = load_checkpoint(Path::new(path))?;
        Ok(Arc::new(LearnedBarrier::hybrid(
            model,
            (*plant).inner,
            n_sigma,
            mc_samples,
        )?))
    };
    match build() {
        Ok(b) => barrier_handle(b),
        Err(e) => {
            record(&e);
            std::ptr::null_mut()
        }
    }
}

/// Pointwise maximum of two barriers; the inputs remain usable and must
/// still be freed by the caller.
///
/// # Safety
/// Both handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_max(
    first: *const MfbfBarrier,
    second: *const MfbfBarrier,
) -> *mut MfbfBarrier {
    if first.is_null() || second.is_null() {
        set_error("null argument");
        return std::ptr::null_mut();
    }
    let composed = max_compose((*first).inner.clone(), (*second).inner.clone());
    barrier_handle(Arc::new(composed))
}

/// # Safety
/// `barrier` must be a pointer returned by a barrier constructor, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_free(barrier: *mut MfbfBarrier) {
    if !barrier.is_null() {
        drop(Box::from_raw(barrier));
    }
}

/// Barrier value at a state.
///
/// # Safety
/// `barrier` must be valid, `state` must point to 8 doubles, `out` to one
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_value(
    barrier: *const MfbfBarrier,
    state: *const f64,
    out: *mut f64,
) -> MfbfStatus {
    if barrier.is_null() || state.is_null() || out.is_null() {
        set_error("null argument");
        return MfbfStatus::NullArgument;
    }
    let x = JointState::from_flat(std::slice::from_raw_parts(state, 8));
    *out = (*barrier).inner.value(&x);
    MfbfStatus::Ok
}

/// One-step barrier change for a control.
///
/// # Safety
/// `barrier` must be valid, `state` must point to 8 doubles, `control` to
/// 6, `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn mfbf_barrier_delta(
    barrier: *const MfbfBarrier,
    state: *const f64,
    control: *const f64,
    out: *mut f64,
) -> MfbfStatus {
    if barrier.is_null() || state.is_null() || control.is_null() || out.is_null() {
        set_error("null argument");
        return MfbfStatus::NullArgument;
    }
    let x = JointState::from_flat(std::slice::from_raw_parts(state, 8));
    let u = ControlInput::from_flat(
        std::slice::from_raw_parts(control, 6)
            .try_into()
            .expect("slice of 6"),
    );
    *out = (*barrier).inner.delta(&x, &u);
    MfbfStatus::Ok
}

/// Project a nominal control onto the barrier's admissible subset of the
/// action set: the closest admissible action wins, ties break to the
/// smallest index, and when nothing is admissible the max-slack action is
/// returned with `*feasible = 0`.
///
/// # Safety
/// All handles must be valid; `state` points to 8 doubles, `nominal` to
/// 6, `chosen` to 6 writable doubles; `index`, `overridden`, `feasible`
/// must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mfbf_filter_apply(
    barrier: *const MfbfBarrier,
    actions: *const MfbfActionSet,
    lambda: f64,
    state: *const f64,
    nominal: *const f64,
    chosen: *mut f64,
    index: *mut usize,
    overridden: *mut i32,
    feasible: *mut i32,
) -> MfbfStatus {
    if barrier.is_null()
        || actions.is_null()
        || state.is_null()
        || nominal.is_null()
        || chosen.is_null()
        || index.is_null()
        || overridden.is_null()
        || feasible.is_null()
    {
        set_error("null argument");
        return MfbfStatus::NullArgument;
    }
    let cfg = match FilterConfig::new(lambda, (*actions).inner.clone()) {
        Ok(c) => c,
        Err(e) => return record(&e),
    };
    let x = JointState::from_flat(std::slice::from_raw_parts(state, 8));
    let u_nom = ControlInput::from_flat(
        std::slice::from_raw_parts(nominal, 6)
            .try_into()
            .expect("slice of 6"),
    );
    let decision = mfbf::barrier::safety_filter(&(*barrier).inner, &x, &u_nom, &cfg);
    let flat = decision.control.to_flat();
    std::ptr::copy_nonoverlapping(flat.as_ptr(), chosen, 6);
    *index = decision.index;
    *overridden = decision.overridden as i32;
    *feasible = decision.feasible as i32;
    MfbfStatus::Ok
}
