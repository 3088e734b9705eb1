//! C ABI over the medledger core.
//!
//! Conventions:
//! - Every fallible function returns an [`MlStatus`]; on failure a message
//!   is available from [`ml_last_error`] on the same thread.
//! - Objects are opaque handles released with their `_free` function.
//! - Strings and buffers returned through out-parameters are owned by the
//!   caller and released with [`ml_string_free`] / [`ml_buffer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use medledger::config::NodeConfig;
use medledger::crypto::{self, Identity, PublicKey, Signature};
use medledger::exporter::{self, ExportFormat};
use medledger::gateway::{ApiRequest, Gateway};
use medledger::network::tcp::now_ms;
use medledger::node::Node;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Crypto = 4,
    Parse = 5,
    Node = 6,
    Panic = 7,
}

/// Heap buffer owned by the caller.
#[repr(C)]
pub struct MlBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl MlBuffer {
    fn from_vec(v: Vec<u8>) -> MlBuffer {
        let mut boxed = v.into_boxed_slice();
        let out = MlBuffer { data: boxed.as_mut_ptr(), len: boxed.len() };
        std::mem::forget(boxed);
        out
    }
}

/// Opaque signing identity.
pub struct MlIdentity(Identity);

/// Opaque embedded node with its gateway.
pub struct MlGateway {
    node: Node,
    gateway: Gateway,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(MlStatus, String);

impl Failure {
    fn new(status: MlStatus, msg: impl std::fmt::Display) -> Failure {
        Failure(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MlStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(MlStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn bytes<'a>(p: *const u8, len: usize, name: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    nonnull(p, name)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(MlStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(Some)
    }
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn format_arg(s: &str) -> Result<ExportFormat, Failure> {
    s.parse().map_err(|e| Failure::new(MlStatus::InvalidArgument, e))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static version string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ml_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `buf` must come from this library; it is reset to empty.
#[no_mangle]
pub unsafe extern "C" fn ml_buffer_free(buf: *mut MlBuffer) {
    if buf.is_null() || (*buf).data.is_null() {
        return;
    }
    let b = &mut *buf;
    drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
    b.data = ptr::null_mut();
    b.len = 0;
}

/// SHA-256 of `data`, written to `out` (32 bytes).
///
/// # Safety
/// `data` must be readable for `len` bytes and `out` writable for 32.
#[no_mangle]
pub unsafe extern "C" fn ml_sha256(data: *const u8, len: usize, out: *mut u8) -> MlStatus {
    guard(|| {
        let input = bytes(data, len, "data")?;
        nonnull(out, "out")?;
        let d = crypto::digest(input);
        ptr::copy_nonoverlapping(d.0.as_ptr(), out, 32);
        Ok(())
    })
}

/// Derives an identity deterministically from a non-empty seed.
///
/// # Safety
/// `seed` must be readable for `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_identity_from_seed(seed: *const u8, len: usize, out: *mut *mut MlIdentity) -> MlStatus {
    guard(|| {
        nonnull(out, "out")?;
        let seed = bytes(seed, len, "seed")?;
        let id = crypto::generate_identity(seed).map_err(|e| Failure::new(MlStatus::Crypto, e))?;
        *out = Box::into_raw(Box::new(MlIdentity(id)));
        Ok(())
    })
}

/// # Safety
/// `id` must come from [`ml_identity_from_seed`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ml_identity_free(id: *mut MlIdentity) {
    if !id.is_null() {
        drop(Box::from_raw(id));
    }
}

/// 40-character hex address.
///
/// # Safety
/// `id` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_identity_address(id: *const MlIdentity, out: *mut *mut c_char) -> MlStatus {
    guard(|| {
        nonnull(id, "id")?;
        nonnull(out, "out")?;
        *out = c_string((*id).0.address().to_string());
        Ok(())
    })
}

/// Compressed public key (33 bytes) written to `out`.
///
/// # Safety
/// `id` must be a live handle and `out` writable for 33 bytes.
#[no_mangle]
pub unsafe extern "C" fn ml_identity_public_key(id: *const MlIdentity, out: *mut u8) -> MlStatus {
    guard(|| {
        nonnull(id, "id")?;
        nonnull(out, "out")?;
        ptr::copy_nonoverlapping((*id).0.public_key().as_bytes().as_ptr(), out, 33);
        Ok(())
    })
}

/// Deterministic ECDSA signature (64 bytes `r || s`) written to `out`.
///
/// # Safety
/// `id` must be a live handle, `msg` readable for `len` bytes and `out`
/// writable for 64.
#[no_mangle]
pub unsafe extern "C" fn ml_identity_sign(id: *const MlIdentity, msg: *const u8, len: usize, out: *mut u8) -> MlStatus {
    guard(|| {
        nonnull(id, "id")?;
        nonnull(out, "out")?;
        let sig = (*id).0.sign(bytes(msg, len, "msg")?);
        ptr::copy_nonoverlapping(sig.0.as_ptr(), out, Signature::LEN);
        Ok(())
    })
}

/// Sets `*valid` to 1 when `sig` is a valid signature of `msg` under
/// `public_key`, else 0. Malformed signatures are simply invalid; a
/// malformed public key is an error.
///
/// # Safety
/// All pointers must be readable for their stated lengths; `valid` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_verify(
    public_key: *const u8,
    public_key_len: usize,
    msg: *const u8,
    msg_len: usize,
    sig: *const u8,
    sig_len: usize,
    valid: *mut u8,
) -> MlStatus {
    guard(|| {
        nonnull(valid, "valid")?;
        let pk = PublicKey::from_bytes(bytes(public_key, public_key_len, "public_key")?)
            .map_err(|e| Failure::new(MlStatus::Crypto, e))?;
        let sig = Signature(bytes(sig, sig_len, "sig")?.to_vec());
        *valid = u8::from(crypto::verify(&pk, bytes(msg, msg_len, "msg")?, &sig));
        Ok(())
    })
}

/// Parses an exported dataset in format `from` ("csv", "xml" or "txt") and
/// re-renders it in format `to`.
///
/// # Safety
/// `input` must be readable for `len` bytes, the format strings valid C
/// strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_export_convert(
    input: *const u8,
    len: usize,
    from: *const c_char,
    to: *const c_char,
    out: *mut MlBuffer,
) -> MlStatus {
    guard(|| {
        nonnull(out, "out")?;
        let from = format_arg(text(from, "from")?)?;
        let to = format_arg(text(to, "to")?)?;
        let dataset = exporter::parse(bytes(input, len, "input")?, from).map_err(|e| Failure::new(MlStatus::Parse, e))?;
        *out = MlBuffer::from_vec(exporter::export(&dataset, to));
        Ok(())
    })
}

/// Opens (or creates) the node described by the TOML config at `config_path`
/// and wraps it in a gateway. Blocks are produced only by
/// [`ml_gateway_commit`].
///
/// # Safety
/// `config_path` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_gateway_open(config_path: *const c_char, out: *mut *mut MlGateway) -> MlStatus {
    guard(|| {
        nonnull(out, "out")?;
        let config = NodeConfig::load(Path::new(text(config_path, "config_path")?))
            .map_err(|e| Failure::new(MlStatus::InvalidArgument, e))?;
        let node = Node::open(&config, now_ms()).map_err(|e| Failure::new(MlStatus::Node, e))?;
        let gateway = Gateway::new(node.core().clone(), node.keystore().clone());
        *out = Box::into_raw(Box::new(MlGateway { node, gateway }));
        Ok(())
    })
}

/// # Safety
/// `gw` must come from [`ml_gateway_open`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ml_gateway_free(gw: *mut MlGateway) {
    if !gw.is_null() {
        drop(Box::from_raw(gw));
    }
}

/// Runs one gateway request. `token` and `body` may be NULL. The HTTP
/// status goes to `status` and the JSON (or export) body to `response`.
/// Non-2xx responses still return [`MlStatus::Ok`].
///
/// # Safety
/// `gw` must be a live handle, strings valid C strings, `body` readable for
/// `body_len` bytes and the out-parameters writable.
#[no_mangle]
pub unsafe extern "C" fn ml_gateway_request(
    gw: *const MlGateway,
    method: *const c_char,
    path: *const c_char,
    token: *const c_char,
    body: *const u8,
    body_len: usize,
    status: *mut u16,
    response: *mut MlBuffer,
) -> MlStatus {
    guard(|| {
        nonnull(gw, "gw")?;
        nonnull(status, "status")?;
        nonnull(response, "response")?;
        let mut req = ApiRequest::new(text(method, "method")?, text(path, "path")?);
        req.token = opt_text(token, "token")?.map(str::to_string);
        req.body = bytes(body, body_len, "body")?.to_vec();
        let resp = (*gw).gateway.handle(&req, now_ms());
        *status = resp.status;
        *response = MlBuffer::from_vec(resp.body);
        Ok(())
    })
}

/// Produces blocks until every pending transaction is confirmed, then
/// persists them. Writes the new chain height to `height` when non-NULL.
///
/// # Safety
/// `gw` must be a live handle; `height` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ml_gateway_commit(gw: *const MlGateway, height: *mut u64) -> MlStatus {
    guard(|| {
        nonnull(gw, "gw")?;
        let node = &(*gw).node;
        node.produce_until_committed(now_ms(), 256).map_err(|e| Failure::new(MlStatus::Node, e))?;
        node.persist().map_err(|e| Failure::new(MlStatus::Node, e))?;
        if !height.is_null() {
            *height = node.height();
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        let mut out = [0u8; 32];
        let s = unsafe { ml_sha256(b"abc".as_ptr(), 3, out.as_mut_ptr()) };
        assert_eq!(s, MlStatus::Ok);
        let hex: String = out.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn null_arguments_set_last_error() {
        let s = unsafe { ml_sha256(ptr::null(), 4, ptr::null_mut()) };
        assert_eq!(s, MlStatus::NullArgument);
        let msg = unsafe { CStr::from_ptr(ml_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "data is null");
        assert_eq!(unsafe { ml_sha256(ptr::null(), 0, [0u8; 32].as_mut_ptr()) }, MlStatus::Ok);
        assert!(ml_last_error().is_null());
    }

    #[test]
    fn buffer_free_resets() {
        let mut b = MlBuffer::from_vec(vec![1, 2, 3]);
        unsafe { ml_buffer_free(&mut b) };
        assert!(b.data.is_null());
        unsafe { ml_buffer_free(&mut b) };
    }
}
