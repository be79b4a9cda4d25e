//! C ABI over the adaptest engine.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free`. Every fallible call returns an [`AdStatus`], and the
//! message of the last failure on the calling thread is available from
//! [`ad_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use adaptest::bank::ItemBank;
use adaptest::cat::{CatConfig, CatError, Session, SessionStatus};
use adaptest::irt::{self, InfoForm, ItemParameters};

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdStatus {
    AD_OK = 0,
    AD_ERR_NULL = 1,
    AD_ERR_INVALID_ARGUMENT = 2,
    AD_ERR_IO = 3,
    AD_ERR_PROTOCOL = 4,
    AD_ERR_BUFFER_TOO_SMALL = 5,
    AD_ERR_PANIC = 6,
}

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdSessionStatus {
    AD_SESSION_ACTIVE = 0,
    AD_SESSION_CONVERGED = 1,
    AD_SESSION_EXHAUSTED_MAX = 2,
    AD_SESSION_BANK_EXHAUSTED = 3,
    AD_SESSION_ABORTED = 4,
}

impl From<SessionStatus> for AdSessionStatus {
    fn from(s: SessionStatus) -> Self {
        match s {
            SessionStatus::Active => Self::AD_SESSION_ACTIVE,
            SessionStatus::Converged => Self::AD_SESSION_CONVERGED,
            SessionStatus::ExhaustedMax => Self::AD_SESSION_EXHAUSTED_MAX,
            SessionStatus::BankExhausted => Self::AD_SESSION_BANK_EXHAUSTED,
            SessionStatus::Aborted => Self::AD_SESSION_ABORTED,
        }
    }
}

/// `0` = `a² p (1 − p)`, `1` = exact 3PL information.
pub const AD_INFO_PAPER: c_int = 0;
pub const AD_INFO_EXACT_3PL: c_int = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdCatConfig {
    pub se_threshold: f64,
    pub min_items: usize,
    pub max_items: usize,
    pub top_k: usize,
    pub info_form: c_int,
    pub rng_seed: u64,
    pub quadrature_nodes: usize,
}

/// Opaque item bank.
pub struct AdBank {
    inner: Arc<ItemBank>,
}

/// Opaque adaptive-testing session.
pub struct AdSession {
    inner: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult<T> = Result<T, (AdStatus, String)>;

fn invalid(e: impl std::fmt::Display) -> (AdStatus, String) {
    (AdStatus::AD_ERR_INVALID_ARGUMENT, e.to_string())
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> AdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdStatus::AD_OK,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdStatus::AD_ERR_PANIC
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or((AdStatus::AD_ERR_NULL, format!("`{name}` is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((AdStatus::AD_ERR_NULL, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{name}` is not UTF-8")))
}

fn info_form(code: c_int) -> FfiResult<InfoForm> {
    match code {
        AD_INFO_PAPER => Ok(InfoForm::Paper),
        AD_INFO_EXACT_3PL => Ok(InfoForm::Exact3pl),
        other => Err(invalid(format!("unknown information form {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ad_icc_3pl(a: f64, b: f64, c: f64, theta: f64, out: *mut f64) -> AdStatus {
    guard(|| {
        let params = ItemParameters::new(a, b, c).map_err(invalid)?;
        *out_ref(out, "out")? = irt::icc_3pl(&params, theta);
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn ad_fisher_info(a: f64, b: f64, c: f64, theta: f64, form: c_int, out: *mut f64) -> AdStatus {
    guard(|| {
        let params = ItemParameters::new(a, b, c).map_err(invalid)?;
        *out_ref(out, "out")? = irt::fisher_info(&params, theta, info_form(form)?);
        Ok(())
    })
}

unsafe fn publish_bank(bank: ItemBank, out: *mut *mut AdBank) -> FfiResult<()> {
    let slot = out_ref(out, "out")?;
    *slot = Box::into_raw(Box::new(AdBank { inner: Arc::new(bank) }));
    Ok(())
}

/// Loads a bank JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_bank_load(path: *const c_char, out: *mut *mut AdBank) -> AdStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let bank = ItemBank::load(path).map_err(|e| (AdStatus::AD_ERR_IO, e.to_string()))?;
        publish_bank(bank, out)
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_bank_from_json(json: *const c_char, out: *mut *mut AdBank) -> AdStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let bank = ItemBank::from_json(text).map_err(invalid)?;
        publish_bank(bank, out)
    })
}

/// Number of items in the bank, filtered ones included; 0 for null.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_bank_len(bank: *const AdBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.len())
}

/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ad_bank_operational_count(bank: *const AdBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.operational_count())
}

/// # Safety
/// `bank` must be null or a handle not freed before. Sessions keep their own
/// reference, so they stay usable.
#[no_mangle]
pub unsafe extern "C" fn ad_bank_free(bank: *mut AdBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

#[no_mangle]
pub extern "C" fn ad_cat_config_default() -> AdCatConfig {
    let c = CatConfig::default();
    AdCatConfig {
        se_threshold: c.se_threshold,
        min_items: c.min_items,
        max_items: c.max_items,
        top_k: c.top_k,
        info_form: match c.info_form {
            InfoForm::Paper => AD_INFO_PAPER,
            InfoForm::Exact3pl => AD_INFO_EXACT_3PL,
        },
        rng_seed: c.rng_seed,
        quadrature_nodes: c.quadrature_nodes,
    }
}

fn cat_error(e: CatError) -> (AdStatus, String) {
    match e {
        CatError::Protocol(_) => (AdStatus::AD_ERR_PROTOCOL, e.to_string()),
        _ => invalid(e),
    }
}

/// Starts a session. `config` may be null for the defaults and
/// `respondent_id` may be null for the empty id.
///
/// # Safety
/// Pointers must be null or valid as described; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_session_new(
    bank: *const AdBank,
    config: *const AdCatConfig,
    respondent_id: *const c_char,
    out: *mut *mut AdSession,
) -> AdStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or((AdStatus::AD_ERR_NULL, "`bank` is null".to_string()))?;
        let c = config.as_ref().copied().unwrap_or_else(|| ad_cat_config_default());
        let cfg = CatConfig {
            se_threshold: c.se_threshold,
            min_items: c.min_items,
            max_items: c.max_items,
            top_k: c.top_k,
            info_form: info_form(c.info_form)?,
            rng_seed: c.rng_seed,
            quadrature_nodes: c.quadrature_nodes,
        };
        let id = if respondent_id.is_null() { "" } else { str_arg(respondent_id, "respondent_id")? };
        let slot = out_ref(out, "out")?;
        let session = Session::start(Arc::clone(&bank.inner), cfg, id).map_err(cat_error)?;
        *slot = Box::into_raw(Box::new(AdSession { inner: session }));
        Ok(())
    })
}

unsafe fn session_mut<'a>(s: *mut AdSession) -> FfiResult<&'a mut Session> {
    s.as_mut().map(|s| &mut s.inner).ok_or((AdStatus::AD_ERR_NULL, "`session` is null".to_string()))
}

/// Writes the next item id (NUL-terminated) into `buf`. `*has_item` is set to
/// 0 once the session has ended. `*needed` receives the buffer size required,
/// terminator included; with a short buffer the call fails with
/// `AD_ERR_BUFFER_TOO_SMALL` and can be repeated.
///
/// # Safety
/// `buf` must hold `buf_len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn ad_session_next_item(
    session: *mut AdSession,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
    has_item: *mut c_int,
) -> AdStatus {
    guard(|| {
        let s = session_mut(session)?;
        let has = out_ref(has_item, "has_item")?;
        let Some(item) = s.next_item().map_err(cat_error)? else {
            *has = 0;
            if let Some(n) = needed.as_mut() {
                *n = 0;
            }
            return Ok(());
        };
        *has = 1;
        let bytes = item.as_bytes();
        if let Some(n) = needed.as_mut() {
            *n = bytes.len() + 1;
        }
        if buf.is_null() || buf_len < bytes.len() + 1 {
            return Err((AdStatus::AD_ERR_BUFFER_TOO_SMALL, format!("item id needs {} bytes", bytes.len() + 1)));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        Ok(())
    })
}

/// Records the response (`correct` nonzero = correct) to the pending item.
///
/// # Safety
/// `item_id` must be a NUL-terminated string; `status` may be null.
#[no_mangle]
pub unsafe extern "C" fn ad_session_submit(
    session: *mut AdSession,
    item_id: *const c_char,
    correct: c_int,
    status: *mut AdSessionStatus,
) -> AdStatus {
    guard(|| {
        let s = session_mut(session)?;
        let id = str_arg(item_id, "item_id")?;
        let st = s.submit_response(id, correct != 0).map_err(cat_error)?;
        if let Some(out) = status.as_mut() {
            *out = st.into();
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_session_theta(session: *mut AdSession, out: *mut f64) -> AdStatus {
    guard(|| {
        *out_ref(out, "out")? = session_mut(session)?.current().theta;
        Ok(())
    })
}

/// Information-based standard error; infinite before any informative response.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_session_se(session: *mut AdSession, out: *mut f64) -> AdStatus {
    guard(|| {
        *out_ref(out, "out")? = session_mut(session)?.current().se;
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_session_status(session: *mut AdSession, out: *mut AdSessionStatus) -> AdStatus {
    guard(|| {
        *out_ref(out, "out")? = session_mut(session)?.status().into();
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_session_n_items(session: *mut AdSession, out: *mut usize) -> AdStatus {
    guard(|| {
        *out_ref(out, "out")? = session_mut(session)?.record().len();
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ad_session_free(session: *mut AdSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
