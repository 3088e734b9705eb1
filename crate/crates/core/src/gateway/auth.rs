//! Challenge-response login and bearer sessions.

use std::collections::HashMap;

use rand::RngCore;
use serde::Serialize;

use crate::crypto::{verify, Address, Signature};
use crate::ehr::{AccountStatus, EhrState, Role};

pub const CHALLENGE_TTL_MS: u64 = 120_000;
pub const SESSION_IDLE_MS: u64 = 30 * 60_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("address is not registered")]
    NotRegistered,
    #[error("signature does not match the registered key")]
    AuthFailed,
    #[error("challenge expired or already used")]
    ChallengeExpired,
    #[error("account is not active")]
    AccountInactive,
    #[error("login required")]
    LoginRequired,
    #[error("session expired or unknown")]
    SessionExpired,
}

impl AuthError {
    pub fn code(self) -> &'static str {
        match self {
            AuthError::NotRegistered => "NotRegistered",
            AuthError::AuthFailed => "AuthFailed",
            AuthError::ChallengeExpired => "ChallengeExpired",
            AuthError::AccountInactive => "AccountInactive",
            AuthError::LoginRequired => "LoginRequired",
            AuthError::SessionExpired => "SessionExpired",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Challenge {
    pub address: Address,
    #[serde(with = "hex::serde")]
    pub nonce: [u8; 32],
    pub issued_at: u64,
    pub expires_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    pub address: Address,
    /// Role at login time. Authorization always re-reads the current role.
    pub role: Role,
    pub last_seen: u64,
}

impl Session {
    pub fn expires_at(&self) -> u64 {
        self.last_seen + SESSION_IDLE_MS
    }
}

#[derive(Default)]
pub struct AuthState {
    challenges: HashMap<[u8; 32], Challenge>,
    sessions: HashMap<String, Session>,
}

impl AuthState {
    pub fn new() -> AuthState {
        AuthState::default()
    }

    fn prune(&mut self, now: u64) {
        self.challenges.retain(|_, c| c.expires_at > now);
        self.sessions.retain(|_, s| s.expires_at() > now);
    }

    /// Issues a fresh challenge for any registered address, whatever its status.
    pub fn issue_challenge(&mut self, state: &EhrState, address: Address, now: u64) -> Result<Challenge, AuthError> {
        self.prune(now);
        if state.account(&address).is_none() {
            return Err(AuthError::NotRegistered);
        }
        let mut nonce = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut nonce);
        let c = Challenge { address, nonce, issued_at: now, expires_at: now + CHALLENGE_TTL_MS };
        self.challenges.insert(nonce, c.clone());
        Ok(c)
    }

    /// Consumes the challenge whatever the outcome.
    pub fn login(
        &mut self,
        state: &EhrState,
        address: Address,
        nonce: [u8; 32],
        signature: &Signature,
        now: u64,
    ) -> Result<Session, AuthError> {
        self.prune(now);
        let challenge = self.challenges.remove(&nonce).ok_or(AuthError::ChallengeExpired)?;
        if challenge.address != address || challenge.expires_at <= now {
            return Err(AuthError::ChallengeExpired);
        }
        let account = state.account(&address).ok_or(AuthError::NotRegistered)?;
        if !verify(&account.public_key, &nonce, signature) {
            return Err(AuthError::AuthFailed);
        }
        if account.status != AccountStatus::Active {
            return Err(AuthError::AccountInactive);
        }
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let session = Session { token: hex::encode(raw), address, role: account.role, last_seen: now };
        self.sessions.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn logout(&mut self, token: &str) {
        self.sessions.remove(token);
    }

    /// Resolves a bearer token and refreshes its idle timer.
    pub fn authenticate(&mut self, token: Option<&str>, now: u64) -> Result<Session, AuthError> {
        let token = token.ok_or(AuthError::LoginRequired)?;
        match self.sessions.get_mut(token) {
            Some(s) if s.expires_at() > now => {
                s.last_seen = now;
                Ok(s.clone())
            }
            Some(_) => {
                self.sessions.remove(token);
                Err(AuthError::SessionExpired)
            }
            None => Err(AuthError::SessionExpired),
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }
}
