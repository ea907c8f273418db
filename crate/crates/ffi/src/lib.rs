//! C ABI over `sl2lab`.
//!
//! Conventions:
//! * every function returns an `Sl2Status`; results go through out-pointers;
//! * on failure the message is available from `sl2_last_error` (thread local);
//! * strings handed out by the library are released with `sl2_string_free`;
//! * handles are opaque and released with their own `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sl2lab::commutator::{self, GluingConfig};
use sl2lab::growth::GroupSet;
use sl2lab::sl2::IntPair;
use sl2lab::spectral::{self, CayleyGroup, CayleyOperator, Lambda2Options};
use sl2lab::{gens, Error, FactoredModulus, PairElement};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sl2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Precondition = 4,
    CapExceeded = 5,
    Io = 6,
    Panic = 7,
}

/// A symmetric generator set of integral matrix pairs.
pub struct Sl2Generators {
    pairs: Vec<IntPair>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> Sl2Status {
    match e {
        Error::Precondition(_) | Error::NotDivisor(..) | Error::Dependent { .. } => Sl2Status::Precondition,
        Error::CapExceeded { .. } => Sl2Status::CapExceeded,
        Error::Io(_) => Sl2Status::Io,
        _ => Sl2Status::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (Sl2Status, String)>) -> Sl2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Sl2Status::Ok,
        Ok(Err((s, msg))) => {
            set_last_error(&msg);
            s
        }
        Err(_) => {
            set_last_error("internal panic");
            Sl2Status::Panic
        }
    }
}

fn lib<T>(r: sl2lab::Result<T>) -> Result<T, (Sl2Status, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (Sl2Status, String) {
    (Sl2Status::NullPointer, format!("{what} is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (Sl2Status, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn to_c_string(s: String) -> Result<*mut c_char, (Sl2Status, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (Sl2Status::InvalidInput, "string contains a nul byte".to_string()))
}

/// Copy of the last error message on this thread, or null if there was none.
/// Release with `sl2_string_free`.
#[no_mangle]
pub extern "C" fn sl2_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sl2_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a generator file body (JSON array of matrix pairs, closed under
/// inversion).
///
/// # Safety
/// `json` must be a nul-terminated string; `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl2_generators_from_json(json: *const c_char, out_handle: *mut *mut Sl2Generators) -> Sl2Status {
    guard(|| {
        let out_handle = out(out_handle, "out")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| (Sl2Status::InvalidUtf8, "json is not valid UTF-8".to_string()))?;
        let pairs = lib(gens::parse_generators(text))?;
        *out_handle = Box::into_raw(Box::new(Sl2Generators { pairs }));
        Ok(())
    })
}

/// The built-in Zariski-dense generator set (two pairs and their inverses).
///
/// # Safety
/// `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl2_generators_zariski_dense(out_handle: *mut *mut Sl2Generators) -> Sl2Status {
    guard(|| {
        let out_handle = out(out_handle, "out")?;
        *out_handle = Box::into_raw(Box::new(Sl2Generators {
            pairs: gens::zariski_dense_pairs(),
        }));
        Ok(())
    })
}

/// Number of pairs in the set.
///
/// # Safety
/// `handle` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl2_generators_len(handle: *const Sl2Generators, out_len: *mut usize) -> Sl2Status {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(out_len, "out")? = h.pairs.len();
        Ok(())
    })
}

/// Release a generator handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sl2_generators_free(handle: *mut Sl2Generators) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// `|SL2(Z/qZ)|`; fails if it does not fit in 64 bits.
///
/// # Safety
/// `out_order` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl2_group_order(q: u64, out_order: *mut u64) -> Sl2Status {
    guard(|| {
        let o = lib(FactoredModulus::new(q))?.sl2_order();
        *out(out_order, "out")? = u64::try_from(o).map_err(|_| (Sl2Status::CapExceeded, format!("order {o} exceeds 64 bits")))?;
        Ok(())
    })
}

/// Second largest eigenvalue of the random-walk operator on the Cayley graph
/// of `pi_{q,q}(<S>)`, and the number of vertices.
///
/// # Safety
/// `handle` must be a live handle; out-pointers must be writable (`out_n`
/// may be null).
#[no_mangle]
pub unsafe extern "C" fn sl2_lambda2(handle: *const Sl2Generators, q: u64, out_lambda2: *mut f64, out_n: *mut usize) -> Sl2Status {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out_lambda2 = out(out_lambda2, "out_lambda2")?;
        lib(FactoredModulus::new(q))?;
        let red: Vec<PairElement> = lib(h.pairs.iter().map(|g| g.reduce(q, q)).collect())?;
        let group = lib(CayleyGroup::generated_by(&red, spectral::DEFAULT_GROUP_CAP))?;
        let op = lib(CayleyOperator::on_group(&group, &red))?;
        if op.dim() < 2 {
            return Err((Sl2Status::Precondition, "the quotient group is trivial".to_string()));
        }
        *out_lambda2 = lib(spectral::lambda2(&op, &Lambda2Options::default()))?.lambda2;
        if let Some(n) = out_n.as_mut() {
            *n = op.dim();
        }
        Ok(())
    })
}

/// Check `xyx^-1y^-1 = 1 + xy - yx` over all `x, y = 1 mod p` in
/// `SL2(Z/p^n)`; reports pairs checked and violations.
///
/// # Safety
/// Out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl2_commutator_sweep(p: u64, n: u32, out_pairs: *mut u64, out_violations: *mut u64) -> Sl2Status {
    guard(|| {
        let (pairs, viol) = (out(out_pairs, "out_pairs")?, out(out_violations, "out_violations")?);
        let r = lib(commutator::commutator_sweep(p, n))?;
        *pairs = r.pairs;
        *viol = r.violations;
        Ok(())
    })
}

/// Run the gluing experiment on the diagonal set `{(g, g)}` over
/// `SL2(Z/q3)`, optionally adding the Zariski-dense generators, and return
/// the report as JSON. Release the string with `sl2_string_free`.
///
/// # Safety
/// `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl2_glue_diagonal_json(q3: u64, with_dense: bool, theta: f64, out_json: *mut *mut c_char) -> Sl2Status {
    guard(|| {
        let out_json = out(out_json, "out_json")?;
        let cfg = GluingConfig::new(1, q3, q3, theta);
        let b = lib(commutator::diagonal_set(q3, cfg.cap))?;
        let a = if with_dense {
            let elems = lib(gens::zariski_dense_pairs().iter().map(|g| g.reduce(q3, q3)).collect())?;
            Some(lib(GroupSet::new(q3, q3, elems))?)
        } else {
            None
        };
        let rep = lib(commutator::glue_pipeline(a.as_ref(), &b, &cfg))?;
        let json = serde_json::to_string(&rep).map_err(|e| (Sl2Status::InvalidInput, e.to_string()))?;
        *out_json = to_c_string(json)?;
        Ok(())
    })
}
