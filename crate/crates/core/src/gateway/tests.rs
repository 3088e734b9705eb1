use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::*;
use crate::consensus::{ConsensusConfig, ConsensusKind};
use crate::crypto::{generate_identity, Identity};
use crate::ehr::{GenesisAccount, Profile, Role};
use crate::ledger::genesis_block;
use crate::network::NodeCore;

const T0: u64 = 1_700_000_000_000;

struct Harness {
    gw: Gateway,
    admin: Identity,
    doctor: Identity,
    patient: Identity,
    now: u64,
}

fn id(seed: &str) -> Identity {
    generate_identity(seed.as_bytes()).unwrap()
}

impl Harness {
    fn new() -> Harness {
        let (admin, doctor, patient, node_id) = (id("gw-admin"), id("gw-doctor"), id("gw-patient"), id("gw-node"));
        let accounts = vec![
            GenesisAccount { public_key: doctor.public_key().clone(), role: Role::Doctor, profile: Profile::named("Dr. Who") },
            GenesisAccount { public_key: patient.public_key().clone(), role: Role::Patient, profile: Profile::named("Pat") },
        ];
        let genesis = genesis_block(&admin, "Admin", accounts, None, T0);
        let mut cfg = ConsensusConfig::new(ConsensusKind::DPoS);
        cfg.delegates = vec![node_id.address()];
        cfg.slot_ms = Some(1000);
        cfg.confirmation_depth = 1;
        let node = NodeCore::new(node_id, cfg, genesis).unwrap();
        let mut ks = Keystore::in_memory();
        for (label, who) in [("admin", &admin), ("doctor", &doctor), ("patient", &patient)] {
            ks.insert_ephemeral(label, who.clone());
        }
        let gw = Gateway::new(Arc::new(Mutex::new(node)), ks);
        Harness { gw, admin, doctor, patient, now: T0 + 10 }
    }

    fn call(&self, req: ApiRequest) -> ApiResponse {
        self.gw.handle(&req, self.now)
    }

    fn login(&self, who: &Identity) -> Result<String, ApiResponse> {
        let c = self.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": who.address() })));
        if c.status != 200 {
            return Err(c);
        }
        let nonce = hex::decode(c.value()["nonce"].as_str().unwrap()).unwrap();
        let sig = who.sign(&nonce);
        let r = self.call(ApiRequest::post("/auth/login").json(&json!({
            "address": who.address(), "nonce": hex::encode(&nonce), "signature": sig,
        })));
        if r.status == 200 {
            Ok(r.value()["token"].as_str().unwrap().to_string())
        } else {
            Err(r)
        }
    }

    /// Produces one block holding the mempool.
    fn block(&mut self) {
        self.now += 1000;
        let mut node = self.gw.node.lock().unwrap();
        node.propose(self.now).expect("scheduled slot");
    }

    fn on_chain(&self, tx_id: &str) -> bool {
        let node = self.gw.node.lock().unwrap();
        node.find_tx(&tx_id.parse().unwrap()).is_some()
    }
}

#[test]
fn challenge_and_login() {
    let h = Harness::new();
    let a = h.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": h.doctor.address() }))).value();
    let b = h.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": h.doctor.address() }))).value();
    assert_eq!(a["nonce"].as_str().unwrap().len(), 64);
    assert_ne!(a["nonce"], b["nonce"]);

    let stranger = id("stranger");
    let r = h.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": stranger.address() })));
    assert_eq!((r.status, r.value()["error"].as_str()), (404, Some("NotRegistered")));

    let token = h.login(&h.doctor).unwrap();
    let profile = h.call(ApiRequest::get("/profile").token(&token)).value();
    assert_eq!(profile["role"], "Doctor");
}

#[test]
fn login_failures() {
    let mut h = Harness::new();
    let c = h.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": h.doctor.address() }))).value();
    let nonce = hex::decode(c["nonce"].as_str().unwrap()).unwrap();
    let login = |sig: Signature| {
        ApiRequest::post("/auth/login").json(&json!({
            "address": h.doctor.address(), "nonce": hex::encode(&nonce), "signature": sig,
        }))
    };
    let r = h.call(login(h.patient.sign(&nonce)));
    assert_eq!(r.value()["error"], "AuthFailed");
    // The failed attempt consumed the challenge.
    let r = h.call(login(h.doctor.sign(&nonce)));
    assert_eq!(r.value()["error"], "ChallengeExpired");

    let c = h.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": h.doctor.address() }))).value();
    let nonce = hex::decode(c["nonce"].as_str().unwrap()).unwrap();
    h.now += CHALLENGE_TTL_MS + 1;
    let r = h.call(
        ApiRequest::post("/auth/login")
            .json(&json!({ "address": h.doctor.address(), "nonce": hex::encode(&nonce), "signature": h.doctor.sign(&nonce) })),
    );
    assert_eq!((r.status, r.value()["error"].as_str()), (401, Some("ChallengeExpired")));
}

#[test]
fn logout_is_idempotent_and_revokes() {
    let h = Harness::new();
    let token = h.login(&h.patient).unwrap();
    for _ in 0..2 {
        let r = h.call(ApiRequest::post("/auth/logout").token(&token));
        assert_eq!(r.status, 200);
    }
    assert_eq!(h.call(ApiRequest::get("/profile").token(&token)).status, 401);
    let again = h.login(&h.patient).unwrap();
    assert_ne!(again, token);
}

#[test]
fn idle_sessions_expire() {
    let mut h = Harness::new();
    let token = h.login(&h.patient).unwrap();
    h.now += SESSION_IDLE_MS - 1;
    assert_eq!(h.call(ApiRequest::get("/profile").token(&token)).status, 200);
    h.now += SESSION_IDLE_MS - 1;
    assert_eq!(h.call(ApiRequest::get("/profile").token(&token)).status, 200);
    h.now += SESSION_IDLE_MS;
    assert_eq!(h.call(ApiRequest::get("/profile").token(&token)).status, 401);
}

#[test]
fn appointment_booking_and_conflict() {
    let mut h = Harness::new();
    let token = h.login(&h.patient).unwrap();
    let body = json!({ "doctor": h.doctor.address(), "date": "2030-01-07", "slot": 3, "purpose": "checkup" });
    let r = h.call(ApiRequest::post("/appointments").token(&token).json(&body));
    assert_eq!(r.status, 201, "{:?}", r.value());
    let v = r.value();
    assert_eq!(v["appointment"]["status"], "Requested");
    let tx_id = v["tx_id"].as_str().unwrap().to_string();

    let r = h.call(ApiRequest::post("/appointments").token(&token).json(&body));
    assert_eq!((r.status, r.value()["rule"].as_str()), (409, Some("SlotTaken")));

    h.block();
    assert!(h.on_chain(&tx_id));
    let slots = h
        .call(ApiRequest::get(&format!("/slots?doctor={}&date=2030-01-07", h.doctor.address())).token(&token))
        .value();
    let free = slots["slots"].as_array().unwrap().iter().filter(|s| s["available"] == true).count();
    assert_eq!(free, 23);

    let dtok = h.login(&h.doctor).unwrap();
    let agenda = h.call(ApiRequest::get("/doctor/agenda?date=2030-01-07").token(&dtok)).value();
    assert_eq!(agenda["appointments"][0]["slot_label"], "09:00 - 09:20");
    let tx = h.call(ApiRequest::get(&format!("/tx/{tx_id}")).token(&dtok)).value();
    assert_eq!(tx["height"], 1);
}

#[test]
fn export_is_admin_only() {
    let h = Harness::new();
    let dtok = h.login(&h.doctor).unwrap();
    let r = h.call(ApiRequest::get("/admin/export?dataset=laboratory&format=csv").token(&dtok));
    assert_eq!(r.status, 403);

    let atok = h.login(&h.admin).unwrap();
    let r = h.call(ApiRequest::get("/admin/export?dataset=laboratory&format=csv").token(&atok));
    assert_eq!(r.status, 200);
    assert_eq!(r.content_type, "text/csv");
    assert_eq!(r.body, b"id,test_name,parameter,unit,reference_min,reference_max\n");
    assert_eq!(r.header("content-disposition"), Some("attachment; filename=\"laboratory_20231114.csv\""));
    let r = h.call(ApiRequest::get("/admin/export?dataset=laboratory&format=pdf").token(&atok));
    assert_eq!(r.status, 400);
}

#[test]
fn iot_ingestion_returns_flag() {
    let mut h = Harness::new();
    let atok = h.login(&h.admin).unwrap();
    let r = h.call(ApiRequest::post("/admin/metric-ranges").token(&atok).json(&json!({
        "metric": "heart_rate", "unit": "bpm", "ref_min": "50", "ref_max": "100",
    })));
    assert_eq!(r.status, 201, "{:?}", r.value());
    let ptok = h.login(&h.patient).unwrap();
    let r = h.call(ApiRequest::post("/access/grants").token(&ptok).json(&json!({ "grantee": h.doctor.address() })));
    assert_eq!(r.status, 201);
    h.block();

    let dtok = h.login(&h.doctor).unwrap();
    let obs = json!({ "device_id": "hr-1", "patient": h.patient.address(), "metric": "heart_rate", "value": "120", "unit": "bpm" });
    let r = h.call(ApiRequest::post("/iot/observations").token(&dtok).json(&obs));
    assert_eq!(r.status, 202, "{:?}", r.value());
    assert_eq!(r.value()["flag"], "High");
}

#[test]
fn suspension_applies_to_live_sessions() {
    let mut h = Harness::new();
    let dtok = h.login(&h.doctor).unwrap();
    let atok = h.login(&h.admin).unwrap();
    let r = h.call(
        ApiRequest::patch(&format!("/admin/users/{}/status", h.doctor.address())).token(&atok).json(&json!({ "status": "Suspended" })),
    );
    assert_eq!(r.status, 200, "{:?}", r.value());
    h.block();
    let r = h.call(ApiRequest::get("/medications").token(&dtok));
    assert_eq!((r.status, r.value()["error"].as_str()), (403, Some("AccountInactive")));
}

#[test]
fn self_registration_then_activation() {
    let mut h = Harness::new();
    let newbie = id("gw-newbie");
    h.gw.keystore.write().unwrap().insert_ephemeral("newbie", newbie.clone());
    let r = h.call(ApiRequest::post("/users").json(&json!({
        "public_key": newbie.public_key(), "role": "Patient", "profile": { "name": "New" },
    })));
    assert_eq!(r.status, 201, "{:?}", r.value());
    assert_eq!(r.value()["account"]["status"], "Pending");
    h.block();
    assert_eq!(h.login(&newbie).unwrap_err().value()["error"], "AccountInactive");

    let atok = h.login(&h.admin).unwrap();
    let r = h.call(
        ApiRequest::patch(&format!("/admin/users/{}/status", newbie.address())).token(&atok).json(&json!({ "status": "Active" })),
    );
    assert_eq!(r.status, 200);
    h.block();
    assert!(h.login(&newbie).is_ok());
}

#[test]
fn client_signed_mutation() {
    let mut h = Harness::new();
    let client = id("gw-client");
    let reg = json!({ "public_key": client.public_key(), "role": "Patient", "profile": { "name": "C" } });
    let r = h.call(ApiRequest::post("/users").json(&reg));
    assert_eq!((r.status, r.value()["error"].as_str()), (400, Some("SignatureRequired")));

    let mut prep = reg.clone();
    prep["prepare"] = json!(true);
    let p = h.call(ApiRequest::post("/users").json(&prep)).value();
    let bytes = hex::decode(p["signing_bytes"].as_str().unwrap()).unwrap();

    let mut signed = reg.clone();
    signed["nonce"] = p["nonce"].clone();
    signed["timestamp"] = p["timestamp"].clone();
    signed["signature"] = json!(h.doctor.sign(&bytes));
    let r = h.call(ApiRequest::post("/users").json(&signed));
    assert_eq!((r.status, r.value()["rule"].as_str()), (400, Some("BadTxSignature")));

    signed["signature"] = json!(client.sign(&bytes));
    let r = h.call(ApiRequest::post("/users").json(&signed));
    assert_eq!(r.status, 201, "{:?}", r.value());
    let tx_id = r.value()["tx_id"].as_str().unwrap().to_string();
    h.block();
    assert!(h.on_chain(&tx_id));
}

#[test]
fn malformed_requests() {
    let h = Harness::new();
    let ptok = h.login(&h.patient).unwrap();
    for body in [&b"{"[..], b"[]", b"null", b"{\"doctor\": 5}", b"{\"extra\": 1}"] {
        let r = h.call(ApiRequest::post("/appointments").token(&ptok).body(body.to_vec()));
        assert_eq!(r.status, 400, "{}", String::from_utf8_lossy(body));
    }
    assert_eq!(h.call(ApiRequest::post("/appointments").json(&json!({}))).status, 401);
    assert_eq!(h.call(ApiRequest::get("/nope").token(&ptok)).status, 404);
    assert_eq!(h.call(ApiRequest::new("PUT", "/appointments").token(&ptok)).status, 405);
    assert_eq!(h.call(ApiRequest::delete("/access/grants/abc").token(&ptok)).status, 400);
}

#[test]
fn role_scoped_routes() {
    let h = Harness::new();
    let ptok = h.login(&h.patient).unwrap();
    let r = h.call(ApiRequest::post("/admin/medications").token(&ptok).json(&json!({ "name": "x", "stock": 1 })));
    assert_eq!((r.status, r.value()["error"].as_str()), (403, Some("Forbidden")));
    let r = h.call(ApiRequest::get("/admin/audit").token(&ptok));
    assert_eq!(r.status, 403);
    let atok = h.login(&h.admin).unwrap();
    let audit: Value = h.call(ApiRequest::get("/admin/audit").token(&atok)).value();
    assert_eq!(audit.as_array().unwrap().len(), 1);
}
