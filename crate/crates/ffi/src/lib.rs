//! C ABI over the comet core.
//!
//! Every handle is opaque and owned by the caller once returned; release it
//! with the matching `*_free`. Functions return a [`CometStatus`]; on
//! failure `comet_last_error_message` describes the most recent error on the
//! calling thread. Array arguments are plain pointer/length pairs in
//! row-major order.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use comet::competition::{select_winners, windowed_pair_loss, MechanismBank, PairLossTensor};
use comet::composition::{select_pair, ConfidenceBank};
use comet::dataset::Window;
use comet::envs::{builtin, init_world, step, EnvSpec, WorldState};
use comet::nn::AdamConfig;
use comet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CometStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Index = 4,
    Io = 5,
    Load = 6,
    Training = 7,
    Simulation = 8,
    Config = 9,
    Panic = 10,
}

impl From<&Error> for CometStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => CometStatus::Config,
            Error::Shape(_) => CometStatus::Shape,
            Error::Training(_) => CometStatus::Training,
            Error::Simulation(_) | Error::Generation(_) => CometStatus::Simulation,
            Error::Sampling(_) => CometStatus::InvalidArgument,
            Error::Index(_) => CometStatus::Index,
            Error::Load { .. } => CometStatus::Load,
            Error::Io { .. } => CometStatus::Io,
        }
    }
}

/// Trained or freshly initialized mechanism bank.
pub struct CometMechanismBank(MechanismBank);

/// Confidence networks used to pick a (mechanism, context) pair.
pub struct CometConfidenceBank(ConfidenceBank);

/// A simulator instance: environment plus its current state.
pub struct CometWorld {
    spec: EnvSpec,
    state: WorldState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: CometStatus, msg: impl Into<String>) -> CometStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CometStatusError>) -> CometStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CometStatus::Ok,
        Ok(Err(CometStatusError(status, msg))) => fail(status, msg),
        Err(_) => fail(CometStatus::Panic, "internal panic"),
    }
}

struct CometStatusError(CometStatus, String);

impl From<Error> for CometStatusError {
    fn from(e: Error) -> Self {
        CometStatusError((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> CometStatusError {
    CometStatusError(CometStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> CometStatusError {
    CometStatusError(CometStatus::InvalidArgument, msg.into())
}

unsafe fn slice_in<'a, T>(
    p: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], CometStatusError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(
    p: *mut T,
    len: usize,
    what: &str,
) -> Result<&'a mut [T], CometStatusError> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, what: &str) -> Result<&'a str, CometStatusError> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, CometStatusError> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), CometStatusError> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn comet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn comet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New bank of `m` mechanisms `2d -> hidden... -> d`.
#[no_mangle]
pub unsafe extern "C" fn comet_bank_new(
    m: usize,
    d: usize,
    hidden: *const usize,
    hidden_len: usize,
    seed: u64,
    out: *mut *mut CometMechanismBank,
) -> CometStatus {
    guard(|| {
        let hidden = slice_in(hidden, hidden_len, "hidden")?;
        if d == 0 || hidden.contains(&0) {
            return Err(invalid("dimensions must be positive"));
        }
        put(
            out,
            CometMechanismBank(MechanismBank::new(
                m,
                d,
                hidden,
                seed,
                AdamConfig::default(),
            )?),
        )
    })
}

/// Loads a bank from a `CMT1` checkpoint.
#[no_mangle]
pub unsafe extern "C" fn comet_bank_load(
    path: *const c_char,
    out: *mut *mut CometMechanismBank,
) -> CometStatus {
    guard(|| {
        let path = PathBuf::from(str_in(path, "path")?);
        put(
            out,
            CometMechanismBank(MechanismBank::load(&path, AdamConfig::default())?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn comet_bank_save(
    bank: *const CometMechanismBank,
    path: *const c_char,
) -> CometStatus {
    guard(|| {
        let bank = handle(bank, "bank")?;
        Ok(bank.0.save(&PathBuf::from(str_in(path, "path")?))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn comet_bank_free(bank: *mut CometMechanismBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Writes the mechanism count and state dimension.
#[no_mangle]
pub unsafe extern "C" fn comet_bank_shape(
    bank: *const CometMechanismBank,
    m: *mut usize,
    d: *mut usize,
) -> CometStatus {
    guard(|| {
        let bank = handle(bank, "bank")?;
        if m.is_null() || d.is_null() {
            return Err(null("output"));
        }
        *m = bank.0.len();
        *d = bank.0.d();
        Ok(())
    })
}

/// `delta = f_m([z_i ; z_j])`, all three arrays of length `d`.
#[no_mangle]
pub unsafe extern "C" fn comet_bank_predict_delta(
    bank: *const CometMechanismBank,
    m: usize,
    zi: *const f64,
    zj: *const f64,
    d: usize,
    delta: *mut f64,
) -> CometStatus {
    guard(|| {
        let bank = handle(bank, "bank")?;
        let zi = slice_in(zi, d, "zi")?;
        let zj = slice_in(zj, d, "zj")?;
        let out = slice_out(delta, d, "delta")?;
        out.copy_from_slice(&bank.0.predict_delta(m, zi, zj)?);
        Ok(())
    })
}

/// Windowed pair losses of a `(horizon + 1) x k x d` window into
/// `loss[k * M * k]`, ordered (object, mechanism, context).
#[no_mangle]
pub unsafe extern "C" fn comet_bank_pair_loss(
    bank: *const CometMechanismBank,
    states: *const f64,
    horizon: usize,
    k: usize,
    loss: *mut f64,
    loss_len: usize,
) -> CometStatus {
    guard(|| {
        let bank = handle(bank, "bank")?;
        let d = bank.0.d();
        if horizon == 0 || k == 0 {
            return Err(invalid("horizon and k must be positive"));
        }
        let states = slice_in(states, (horizon + 1) * k * d, "states")?;
        if loss_len != k * bank.0.len() * k {
            return Err(CometStatusError(
                CometStatus::Shape,
                format!(
                    "loss buffer holds {loss_len}, need {}",
                    k * bank.0.len() * k
                ),
            ));
        }
        let window = Window {
            episode: 0,
            start: 0,
            k,
            d,
            states: states.to_vec(),
            gt_mode: vec![0; horizon * k],
            gt_ctx: vec![0; horizon * k],
        };
        let tensor = windowed_pair_loss(&bank.0, &window)?;
        slice_out(loss, loss_len, "loss")?.copy_from_slice(&tensor.loss);
        Ok(())
    })
}

/// Arg-min `(mechanism, context)` per object of a `k x m x k` loss tensor;
/// ties go to the smallest mechanism, then the smallest context.
#[no_mangle]
pub unsafe extern "C" fn comet_select_winners(
    loss: *const f64,
    k: usize,
    m: usize,
    mechanism: *mut usize,
    context: *mut usize,
) -> CometStatus {
    guard(|| {
        if k == 0 || m == 0 {
            return Err(invalid("k and m must be positive"));
        }
        let tensor = PairLossTensor {
            k,
            m,
            loss: slice_in(loss, k * m * k, "loss")?.to_vec(),
        };
        let mech = slice_out(mechanism, k, "mechanism")?;
        let ctx = slice_out(context, k, "context")?;
        for (i, w) in select_winners(&tensor).into_iter().enumerate() {
            mech[i] = w.mechanism;
            ctx[i] = w.context;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn comet_confidence_new(
    m: usize,
    d: usize,
    hidden: *const usize,
    hidden_len: usize,
    seed: u64,
    out: *mut *mut CometConfidenceBank,
) -> CometStatus {
    guard(|| {
        let hidden = slice_in(hidden, hidden_len, "hidden")?;
        if d == 0 || hidden.contains(&0) {
            return Err(invalid("dimensions must be positive"));
        }
        put(
            out,
            CometConfidenceBank(ConfidenceBank::new(
                m,
                d,
                hidden,
                seed,
                AdamConfig::default(),
            )?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn comet_confidence_load(
    path: *const c_char,
    out: *mut *mut CometConfidenceBank,
) -> CometStatus {
    guard(|| {
        let path = PathBuf::from(str_in(path, "path")?);
        put(
            out,
            CometConfidenceBank(ConfidenceBank::load(&path, AdamConfig::default())?),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn comet_confidence_free(conf: *mut CometConfidenceBank) {
    if !conf.is_null() {
        drop(Box::from_raw(conf));
    }
}

/// Highest-scoring `(mechanism, context)` for object `i` of a `k x d` scene.
#[no_mangle]
pub unsafe extern "C" fn comet_confidence_select_pair(
    conf: *const CometConfidenceBank,
    states: *const f64,
    k: usize,
    i: usize,
    mechanism: *mut usize,
    context: *mut usize,
) -> CometStatus {
    guard(|| {
        let conf = handle(conf, "confidence bank")?;
        if mechanism.is_null() || context.is_null() {
            return Err(null("output"));
        }
        let states = slice_in(states, k * conf.0.d(), "states")?;
        let (m, j) = select_pair(&conf.0, states, k, i)?;
        *mechanism = m;
        *context = j;
        Ok(())
    })
}

/// Simulator for a built-in environment, initialized from `seed`.
#[no_mangle]
pub unsafe extern "C" fn comet_world_new(
    env_id: *const c_char,
    seed: u64,
    out: *mut *mut CometWorld,
) -> CometStatus {
    guard(|| {
        let id = str_in(env_id, "env_id")?;
        let spec = builtin(id).ok_or_else(|| invalid(format!("unknown environment '{id}'")))?;
        let state = init_world(&spec, seed)?;
        put(out, CometWorld { spec, state })
    })
}

#[no_mangle]
pub unsafe extern "C" fn comet_world_free(world: *mut CometWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Writes the object count `k` and state dimension `d`.
#[no_mangle]
pub unsafe extern "C" fn comet_world_shape(
    world: *const CometWorld,
    k: *mut usize,
    d: *mut usize,
) -> CometStatus {
    guard(|| {
        let world = handle(world, "world")?;
        if k.is_null() || d.is_null() {
            return Err(null("output"));
        }
        *k = world.state.k;
        *d = world.state.d;
        Ok(())
    })
}

/// Copies the current `k x d` state into `out`.
#[no_mangle]
pub unsafe extern "C" fn comet_world_state(
    world: *const CometWorld,
    out: *mut f64,
    len: usize,
) -> CometStatus {
    guard(|| {
        let world = handle(world, "world")?;
        if len != world.state.z.len() {
            return Err(CometStatusError(
                CometStatus::Shape,
                format!("state buffer holds {len}, need {}", world.state.z.len()),
            ));
        }
        slice_out(out, len, "out")?.copy_from_slice(&world.state.z);
        Ok(())
    })
}

/// Advances one step; writes each object's mode code and context index
/// (arrays of length `k`, either may be null).
#[no_mangle]
pub unsafe extern "C" fn comet_world_step(
    world: *mut CometWorld,
    modes: *mut i32,
    contexts: *mut usize,
) -> CometStatus {
    guard(|| {
        let world = world.as_mut().ok_or_else(|| null("world"))?;
        let (next, labels) = step(&world.state, &world.spec)?;
        let k = next.k;
        if !modes.is_null() {
            for (o, m) in slice_out(modes, k, "modes")?.iter_mut().zip(&labels.modes) {
                *o = m.code();
            }
        }
        if !contexts.is_null() {
            slice_out(contexts, k, "contexts")?.copy_from_slice(&labels.contexts);
        }
        world.state = next;
        Ok(())
    })
}
