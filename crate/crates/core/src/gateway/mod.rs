//! Application-facing API: login, sessions and role-scoped routes that
//! wrap contract transactions and queries.
//!
//! [`Gateway::handle`] is transport independent; [`http`] serves it over
//! HTTP. Mutations are signed either by the client (`nonce`, `timestamp`
//! and `signature` fields in the body, over the bytes returned by a
//! `"prepare": true` request) or, in demo deployments, by a keystore held
//! next to the node.

mod auth;
pub mod http;
mod routes;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::crypto::{Address, Signature};
use crate::ehr::{AuditEntry, DenyReason, EhrState, Payload, Rejection};
use crate::keystore::Keystore;
use crate::ledger::{Transaction, Violation};
use crate::network::tcp::SharedNode;
use crate::network::Outbound;

pub use auth::{AuthError, AuthState, Challenge, Session, CHALLENGE_TTL_MS, SESSION_IDLE_MS};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ApiRequest {
    pub method: String,
    /// Path with optional `?query`.
    pub path: String,
    pub token: Option<String>,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn new(method: &str, path: &str) -> ApiRequest {
        ApiRequest { method: method.to_ascii_uppercase(), path: path.to_string(), token: None, body: Vec::new() }
    }

    pub fn get(path: &str) -> ApiRequest {
        ApiRequest::new("GET", path)
    }

    pub fn post(path: &str) -> ApiRequest {
        ApiRequest::new("POST", path)
    }

    pub fn patch(path: &str) -> ApiRequest {
        ApiRequest::new("PATCH", path)
    }

    pub fn delete(path: &str) -> ApiRequest {
        ApiRequest::new("DELETE", path)
    }

    pub fn token(mut self, token: impl Into<String>) -> ApiRequest {
        self.token = Some(token.into());
        self
    }

    pub fn json(mut self, body: &Value) -> ApiRequest {
        self.body = serde_json::to_vec(body).expect("json value serializes");
        self
    }

    pub fn body(mut self, body: impl Into<Vec<u8>>) -> ApiRequest {
        self.body = body.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl ApiResponse {
    pub fn json(status: u16, value: &Value) -> ApiResponse {
        ApiResponse {
            status,
            content_type: "application/json".into(),
            headers: Vec::new(),
            body: serde_json::to_vec(value).expect("json value serializes"),
        }
    }

    /// Body parsed as JSON, or `Null` for non-JSON bodies.
    pub fn value(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// A failed request: status code, stable error code and optional rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub error: String,
    pub rule: Option<String>,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, error: impl Into<String>, message: impl Into<String>) -> ApiError {
        ApiError { status, error: error.into(), rule: None, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(400, "BadRequest", message)
    }

    pub fn not_found() -> ApiError {
        ApiError::new(404, "NotFound", "no such route")
    }

    fn with_rule(mut self, rule: impl Into<String>) -> ApiError {
        self.rule = Some(rule.into());
        self
    }

    pub fn into_response(self) -> ApiResponse {
        let mut body = json!({ "error": self.error, "message": self.message });
        if let Some(rule) = self.rule {
            body["rule"] = Value::String(rule);
        }
        ApiResponse::json(self.status, &body)
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> ApiError {
        let status = match e {
            AuthError::NotRegistered => 404,
            AuthError::AccountInactive => 403,
            AuthError::AuthFailed | AuthError::ChallengeExpired | AuthError::LoginRequired | AuthError::SessionExpired => 401,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<DenyReason> for ApiError {
    fn from(r: DenyReason) -> ApiError {
        let status = match r {
            DenyReason::LoginRequired | DenyReason::Unregistered => 401,
            DenyReason::Forbidden | DenyReason::AccountInactive | DenyReason::NoConsent => 403,
        };
        ApiError::new(status, r.to_string(), format!("access denied: {r}"))
    }
}

impl From<Rejection> for ApiError {
    fn from(r: Rejection) -> ApiError {
        let (status, error) = match &r {
            Rejection::Denied(d) => return ApiError::from(*d).with_rule(r.rule()),
            Rejection::NoConsent(_) => (403, "NoConsent"),
            Rejection::EmptyField(_) | Rejection::SignerMismatch => (400, "BadRequest"),
            _ => (409, "Conflict"),
        };
        ApiError::new(status, error, r.to_string()).with_rule(r.rule())
    }
}

fn violation_error(v: &Violation) -> ApiError {
    if let Violation::Payload { rejection, .. } = v {
        return ApiError::from(rejection.clone());
    }
    let dbg = format!("{v:?}");
    let rule = dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string();
    let status = if matches!(v, Violation::BadTxSignature(_) | Violation::UnknownSigner(_)) { 400 } else { 409 };
    ApiError::new(status, if status == 400 { "BadRequest" } else { "Conflict" }, v.to_string()).with_rule(rule)
}

/// Client-provided signing fields of a mutation body.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientSigning {
    nonce: u64,
    timestamp: u64,
    signature: Signature,
}

struct Body<T> {
    data: T,
    signing: Option<ClientSigning>,
    prepare: bool,
}

const SIGNING_FIELDS: [&str; 3] = ["nonce", "timestamp", "signature"];

fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> Result<Body<T>, ApiError> {
    let text = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { bytes };
    let mut map: Map<String, Value> =
        serde_json::from_slice(text).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?;
    let prepare = match map.remove("prepare") {
        None | Some(Value::Bool(false)) => false,
        Some(Value::Bool(true)) => true,
        Some(_) => return Err(ApiError::bad_request("`prepare` must be a boolean")),
    };
    let present = SIGNING_FIELDS.iter().filter(|k| map.contains_key(**k)).count();
    let signing = match present {
        0 => None,
        3 => {
            let fields: Map<String, Value> =
                SIGNING_FIELDS.iter().map(|k| (k.to_string(), map.remove(*k).expect("present"))).collect();
            Some(
                serde_json::from_value::<ClientSigning>(Value::Object(fields))
                    .map_err(|e| ApiError::bad_request(format!("invalid signing fields: {e}")))?,
            )
        }
        _ => return Err(ApiError::bad_request("nonce, timestamp and signature must be given together")),
    };
    if prepare && signing.is_some() {
        return Err(ApiError::bad_request("`prepare` cannot be combined with a signature"));
    }
    let data = serde_json::from_value(Value::Object(map)).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))?;
    Ok(Body { data, signing, prepare })
}

/// Strict JSON body without signing fields.
fn parse_plain<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// An applied mutation: the submitted transaction and the state right after it.
pub struct Mutation {
    pub tx: Transaction,
    pub entry: AuditEntry,
    pub state: EhrState,
}

impl Mutation {
    /// Numeric id from the audit subject, e.g. `appointment:7 -> 7`.
    fn subject_id(&self) -> Option<u64> {
        self.entry.subject.rsplit(':').next()?.parse().ok()
    }
}

enum Submitted {
    Prepared(Value),
    Applied(Mutation),
}

type OutboundHook = Box<dyn Fn(Vec<Outbound>) + Send + Sync>;

pub struct Gateway {
    node: SharedNode,
    keystore: RwLock<Keystore>,
    auth: Mutex<AuthState>,
    on_outbound: Option<OutboundHook>,
}

impl Gateway {
    pub fn new(node: SharedNode, keystore: Keystore) -> Gateway {
        Gateway { node, keystore: RwLock::new(keystore), auth: Mutex::new(AuthState::new()), on_outbound: None }
    }

    /// Delivers messages produced by transaction submission, e.g. to peers.
    pub fn with_outbound(mut self, hook: impl Fn(Vec<Outbound>) + Send + Sync + 'static) -> Gateway {
        self.on_outbound = Some(Box::new(hook));
        self
    }

    pub fn node(&self) -> &SharedNode {
        &self.node
    }

    pub fn keystore(&self) -> &RwLock<Keystore> {
        &self.keystore
    }

    fn tip_state(&self) -> Arc<EhrState> {
        self.node.lock().expect("node lock").tip_state().clone()
    }

    pub fn handle(&self, req: &ApiRequest, now: u64) -> ApiResponse {
        if req.body.len() > MAX_BODY_BYTES {
            return ApiError::new(413, "PayloadTooLarge", "request body too large").into_response();
        }
        match routes::dispatch(self, req, now) {
            Ok(resp) => resp,
            Err(e) => e.into_response(),
        }
    }

    fn authenticate(&self, req: &ApiRequest, now: u64) -> Result<Session, ApiError> {
        Ok(self.auth.lock().expect("auth lock").authenticate(req.token.as_deref(), now)?)
    }

    /// Resolves the session and checks the caller's current role and status.
    fn authorize(
        &self,
        req: &ApiRequest,
        now: u64,
        op: crate::ehr::OperationKind,
    ) -> Result<(Session, Arc<EhrState>), ApiError> {
        let session = self.authenticate(req, now)?;
        let state = self.tip_state();
        if let crate::ehr::Access::Deny(reason) = state.check_access(Some(session.address), op) {
            return Err(reason.into());
        }
        Ok((session, state))
    }

    /// Signs (or accepts the client signature on), pre-validates and submits
    /// one transaction. Submission is serialized under the node lock.
    fn submit<T>(
        &self,
        signer: Address,
        body: Body<T>,
        now: u64,
        build: impl FnOnce(T, &EhrState) -> Result<Payload, ApiError>,
    ) -> Result<Submitted, ApiError> {
        let mut node = self.node.lock().expect("node lock");
        let mut state = node.pending_state();
        let payload = build(body.data, &state)?;
        let expected_nonce = node.next_nonce(&signer);
        if body.prepare {
            let bytes = Transaction::signing_bytes(&signer, expected_nonce, now, &payload);
            return Ok(Submitted::Prepared(json!({
                "signer": signer,
                "nonce": expected_nonce,
                "timestamp": now,
                "signing_bytes": hex::encode(bytes),
            })));
        }
        let tx = match body.signing {
            Some(s) => {
                let tx = Transaction::from_parts(signer, s.nonce, s.timestamp, payload, s.signature);
                let key = state.public_key_of(&signer).or_else(|| tx.embedded_key()).cloned();
                if !key.is_some_and(|k| tx.verify_with(&k)) {
                    return Err(ApiError::new(400, "BadRequest", "signature does not verify").with_rule("BadTxSignature"));
                }
                if s.nonce != expected_nonce {
                    return Err(ApiError::new(409, "Conflict", format!("expected nonce {expected_nonce}"))
                        .with_rule("NonceViolation"));
                }
                tx
            }
            None => {
                let keystore = self.keystore.read().expect("keystore lock");
                let identity = keystore.get(&signer).ok_or_else(|| {
                    ApiError::new(400, "SignatureRequired", "request must carry nonce, timestamp and signature")
                })?;
                Transaction::new_signed(identity, expected_nonce, now, payload)
            }
        };
        let entry = state.apply_transaction(&tx)?;
        let outs = node.submit_transaction(tx.clone(), now).map_err(|v| violation_error(&v))?;
        drop(node);
        if let Some(hook) = &self.on_outbound {
            hook(outs);
        }
        Ok(Submitted::Applied(Mutation { tx, entry, state }))
    }
}

fn respond(submitted: Submitted, status: u16, extra: impl FnOnce(&Mutation) -> Value) -> ApiResponse {
    match submitted {
        Submitted::Prepared(v) => ApiResponse::json(200, &v),
        Submitted::Applied(m) => {
            let mut body = json!({
                "tx_id": m.tx.tx_id,
                "action": m.entry.action,
                "subject": m.entry.subject,
            });
            if let (Value::Object(dst), Value::Object(src)) = (&mut body, extra(&m)) {
                dst.extend(src);
            }
            ApiResponse::json(status, &body)
        }
    }
}

fn query_map(query: &str) -> BTreeMap<String, String> {
    form_urlencoded::parse(query.as_bytes()).into_owned().collect()
}

#[cfg(test)]
mod tests;
