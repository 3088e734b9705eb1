#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use medledger::consensus::{ConsensusConfig, ConsensusKind};
use medledger::crypto::{generate_identity, Identity};
use medledger::ehr::{AuditEntry, EhrState, GenesisAccount, OperationKind, Payload, Profile, Rejection, Role};
use medledger::gateway::{ApiRequest, ApiResponse, Gateway};
use medledger::keystore::Keystore;
use medledger::ledger::{genesis_block, validate_genesis, Block, Transaction};
use medledger::network::NodeCore;
use serde_json::{json, Value};

pub const T0: u64 = 1_700_000_000_000;

pub fn id(seed: &str) -> Identity {
    generate_identity(seed.as_bytes()).unwrap()
}

fn account(who: &Identity, role: Role, name: &str) -> GenesisAccount {
    GenesisAccount { public_key: who.public_key().clone(), role, profile: Profile::named(name) }
}

/// Admin, two doctors and two patients, all active from genesis.
pub struct Cast {
    pub admin: Identity,
    pub doctor: Identity,
    pub doctor2: Identity,
    pub patient: Identity,
    pub patient2: Identity,
}

impl Cast {
    pub fn new(tag: &str) -> Cast {
        Cast {
            admin: id(&format!("{tag}-admin")),
            doctor: id(&format!("{tag}-doctor")),
            doctor2: id(&format!("{tag}-doctor2")),
            patient: id(&format!("{tag}-patient")),
            patient2: id(&format!("{tag}-patient2")),
        }
    }

    pub fn genesis(&self) -> Block {
        let accounts = vec![
            account(&self.doctor, Role::Doctor, "Dr. One"),
            account(&self.doctor2, Role::Doctor, "Dr. Two"),
            account(&self.patient, Role::Patient, "Patient One"),
            account(&self.patient2, Role::Patient, "Patient Two"),
        ];
        genesis_block(&self.admin, "Admin", accounts, None, T0)
    }

    pub fn all(&self) -> [(&'static str, &Identity); 5] {
        [
            ("admin", &self.admin),
            ("doctor", &self.doctor),
            ("doctor2", &self.doctor2),
            ("patient", &self.patient),
            ("patient2", &self.patient2),
        ]
    }
}

/// Contract state driven directly, without blocks.
pub struct World {
    pub cast: Cast,
    pub state: EhrState,
    pub now: u64,
}

impl World {
    pub fn new(tag: &str) -> World {
        let cast = Cast::new(tag);
        let state = validate_genesis(&cast.genesis()).unwrap();
        World { cast, state, now: T0 + 1 }
    }

    pub fn tx(&self, who: &Identity, payload: Payload) -> Transaction {
        Transaction::new_signed(who, self.state.expected_nonce(&who.address()), self.now, payload)
    }

    pub fn apply(&mut self, who: &Identity, payload: Payload) -> Result<AuditEntry, Rejection> {
        self.now += 1;
        let tx = self.tx(who, payload);
        self.state.apply_transaction(&tx)
    }
}

/// The hand-written permission matrix: for each operation, whether a
/// Patient, Doctor and Admin may perform it.
pub const RBAC_ORACLE: [(OperationKind, [bool; 3]); 24] = {
    use OperationKind::*;
    const T: bool = true;
    const F: bool = false;
    [
        //                     P  D  A
        (SetUserStatus, [F, F, T]),
        (SetSystemStartDate, [F, F, T]),
        (UpdateProfile, [T, T, T]),
        (ViewProfile, [T, T, T]),
        (ListDoctors, [T, T, T]),
        (RequestAppointment, [T, F, F]),
        (CancelAppointment, [T, T, F]),
        (UpdateAppointment, [F, T, F]),
        (Prescribe, [F, T, F]),
        (AddMedication, [F, F, T]),
        (AdjustStock, [F, F, T]),
        (ViewMedications, [F, T, T]),
        (AddLabDefinition, [F, F, T]),
        (SetMetricRange, [F, F, T]),
        (ViewLabDefinitions, [F, T, T]),
        (SubmitLabResult, [F, T, F]),
        (RecordIoT, [T, T, F]),
        (GrantAccess, [T, F, F]),
        (RevokeAccess, [T, F, F]),
        (ViewPatientHistory, [T, T, F]),
        (ViewDoctorAgenda, [F, T, F]),
        (ViewEReports, [F, T, F]),
        (ViewAuditLog, [F, F, T]),
        (ExportData, [F, F, T]),
    ]
};

/// Gateway over a single-delegate DPoS node with every cast key in the
/// keystore.
pub struct GwHarness {
    pub gw: Arc<Gateway>,
    pub cast: Cast,
    pub now: u64,
}

impl GwHarness {
    pub fn new(tag: &str) -> GwHarness {
        let cast = Cast::new(tag);
        let node_id = id(&format!("{tag}-node"));
        let mut cfg = ConsensusConfig::new(ConsensusKind::DPoS);
        cfg.delegates = vec![node_id.address()];
        cfg.slot_ms = Some(1000);
        cfg.confirmation_depth = 1;
        let node = NodeCore::new(node_id, cfg, cast.genesis()).unwrap();
        let mut ks = Keystore::in_memory();
        for (label, who) in cast.all() {
            ks.insert_ephemeral(label, who.clone());
        }
        let gw = Arc::new(Gateway::new(Arc::new(Mutex::new(node)), ks));
        GwHarness { gw, cast, now: T0 + 10 }
    }

    pub fn call(&self, req: ApiRequest) -> ApiResponse {
        self.gw.handle(&req, self.now)
    }

    pub fn login(&self, who: &Identity) -> String {
        let c = self.call(ApiRequest::post("/auth/challenge").json(&json!({ "address": who.address() })));
        assert_eq!(c.status, 200, "{}", String::from_utf8_lossy(&c.body));
        let nonce = hex::decode(c.value()["nonce"].as_str().unwrap()).unwrap();
        let r = self.call(ApiRequest::post("/auth/login").json(&json!({
            "address": who.address(), "nonce": hex::encode(&nonce), "signature": who.sign(&nonce),
        })));
        assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
        r.value()["token"].as_str().unwrap().to_string()
    }

    /// Produces one block holding the mempool.
    pub fn block(&mut self) {
        self.now += 1000;
        self.gw.node().lock().unwrap().propose(self.now).expect("scheduled slot");
    }

    pub fn on_chain(&self, tx_id: &str) -> bool {
        self.gw.node().lock().unwrap().find_tx(&tx_id.parse().unwrap()).is_some()
    }

    pub fn state(&self) -> Arc<EhrState> {
        self.gw.node().lock().unwrap().tip_state().clone()
    }
}

pub fn body_of(r: &ApiResponse) -> Value {
    serde_json::from_slice(&r.body).unwrap_or(Value::Null)
}
