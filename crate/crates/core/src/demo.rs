//! Demo deployment: a small, fixed set of accounts, inventory and
//! appointments written through ordinary signed transactions.

use chrono::{Days, NaiveDate};
use rust_decimal::Decimal;

use crate::crypto::{Address, Digest, Identity};
use crate::ehr::{AccountStatus, EhrState, LabParameter, Payload, Profile, Role};
use crate::ledger::Transaction;
use crate::node::{Node, NodeError};

/// The laboratory definition shown in the admin laboratory table.
pub fn reference_lab_definition() -> (String, Vec<LabParameter>) {
    let parameters = (1..=3i64)
        .map(|i| LabParameter {
            name: format!("Parameter{i}"),
            unit: format!("Unit{i}"),
            ref_min: Decimal::from(i),
            ref_max: Decimal::from(i * 10),
        })
        .collect();
    ("Test".to_string(), parameters)
}

const DOCTORS: [(&str, &str, &str); 2] = [
    ("demo-doctor-1", "Dr. Alice Moreau", "alice.moreau@clinic.example"),
    ("demo-doctor-2", "Dr. Bilal Haddad", "bilal.haddad@clinic.example"),
];

const PATIENTS: [(&str, &str, &str, &str); 3] = [
    ("demo-patient-1", "Carla Jensen", "1984-03-12", "F"),
    ("demo-patient-2", "Daniel Okafor", "1979-11-02", "M"),
    ("demo-patient-3", "Eva Lindqvist", "1992-06-25", "F"),
];

const MEDICATIONS: [(&str, u64); 3] = [("Paracetamol 500mg", 200), ("Amoxicillin 250mg", 80), ("Ibuprofen 400mg", 120)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoAccount {
    pub label: String,
    pub role: Role,
    pub address: Address,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoSummary {
    pub already_seeded: bool,
    pub accounts: Vec<DemoAccount>,
    /// Description and id of each seeding transaction.
    pub transactions: Vec<(String, Digest)>,
    pub height: u64,
}

fn is_seeded(node: &Node, state: &EhrState) -> bool {
    node.keystore().by_label(DOCTORS[0].0).is_some_and(|d| state.account(&d.address()).is_some())
}

fn accounts(node: &Node) -> Vec<DemoAccount> {
    let admin = node.admin();
    let mut out = vec![DemoAccount { label: "admin".into(), role: Role::Admin, address: admin.address() }];
    for (label, ..) in DOCTORS {
        if let Some(id) = node.keystore().by_label(label) {
            out.push(DemoAccount { label: label.into(), role: Role::Doctor, address: id.address() });
        }
    }
    for (label, ..) in PATIENTS {
        if let Some(id) = node.keystore().by_label(label) {
            out.push(DemoAccount { label: label.into(), role: Role::Patient, address: id.address() });
        }
    }
    out
}

/// Seeds an embedded node (one whose data dir is not in use by a running
/// process) and commits everything before returning. A second call is a
/// no-op reporting `already_seeded`.
pub fn seed_demo(node: &mut Node, now: u64) -> Result<DemoSummary, NodeError> {
    let state = node.core().lock().expect("node lock").tip_state().clone();
    if is_seeded(node, &state) {
        return Ok(DemoSummary { already_seeded: true, accounts: accounts(node), transactions: Vec::new(), height: node.height() });
    }
    let admin = node.admin().clone();
    if state.account(&admin.address()).map(|a| a.role) != Some(Role::Admin) {
        return Err(NodeError::Other("the keystore admin key is not the chain's administrator".into()));
    }

    let mut doctors = Vec::new();
    for (label, ..) in DOCTORS {
        doctors.push(node.keystore_mut().create_random(label)?);
    }
    let mut patients = Vec::new();
    for (label, ..) in PATIENTS {
        patients.push(node.keystore_mut().create_random(label)?);
    }

    let today = chrono::DateTime::from_timestamp_millis(now as i64).map(|t| t.date_naive()).unwrap_or_default();
    let mut date = today.checked_add_days(Days::new(1)).unwrap_or(today);
    if let Some(start) = state.system_start_date {
        date = date.max(start);
    }

    let mut plan: Vec<(String, &Identity, Payload)> = Vec::new();
    for ((label, name, contact), id) in DOCTORS.iter().zip(&doctors) {
        let profile = Profile { contact: Some(contact.to_string()), ..Profile::named(*name) };
        plan.push((format!("register {label}"), id, Payload::RegisterUser { public_key: id.public_key().clone(), role: Role::Doctor, profile }));
    }
    for ((label, name, dob, sex), id) in PATIENTS.iter().zip(&patients) {
        let profile = Profile {
            date_of_birth: NaiveDate::parse_from_str(dob, "%Y-%m-%d").ok(),
            sex: Some(sex.to_string()),
            ..Profile::named(*name)
        };
        plan.push((format!("register {label}"), id, Payload::RegisterUser { public_key: id.public_key().clone(), role: Role::Patient, profile }));
    }
    for (id, label) in doctors.iter().zip(DOCTORS.map(|d| d.0)).chain(patients.iter().zip(PATIENTS.map(|p| p.0))) {
        plan.push((format!("activate {label}"), &admin, Payload::SetUserStatus { user: id.address(), status: AccountStatus::Active }));
    }
    for (name, stock) in MEDICATIONS {
        plan.push((format!("medication {name}"), &admin, Payload::AddMedication { name: name.into(), stock }));
    }
    let (test_name, parameters) = reference_lab_definition();
    plan.push((format!("lab definition {test_name}"), &admin, Payload::AddLabDefinition { test_name, parameters }));
    for (i, (p, d)) in patients.iter().zip(&doctors).enumerate() {
        plan.push((
            format!("appointment {} with {} on {date} slot {i}", PATIENTS[i].0, DOCTORS[i].0),
            p,
            Payload::RequestAppointment {
                doctor: d.address(),
                date,
                slot: i as u8,
                purpose: if i == 0 { "Annual checkup".into() } else { "Follow-up consultation".into() },
            },
        ));
    }

    // Appointments are signed by the new patients, whose keys the mempool
    // only accepts once their registration is on chain.
    let split = plan.iter().position(|(_, _, p)| matches!(p, Payload::RequestAppointment { .. })).unwrap_or(plan.len());
    let second = plan.split_off(split);
    let mut transactions = Vec::new();
    for phase in [plan, second] {
        {
            let mut core = node.core().lock().expect("node lock");
            let mut preview = core.pending_state();
            for (what, signer, payload) in phase {
                let tx = Transaction::new_signed(signer, core.next_nonce(&signer.address()), now, payload);
                preview.apply_transaction(&tx).map_err(|r| NodeError::Other(format!("{what} rejected: {r}")))?;
                core.submit_transaction(tx.clone(), now)
                    .map_err(|v| NodeError::Other(format!("{what} rejected: {v}")))?;
                transactions.push((what, tx.tx_id));
            }
        }
        node.produce_until_committed(now, 64)?;
    }
    node.persist()?;
    Ok(DemoSummary { already_seeded: false, accounts: accounts(node), transactions, height: node.height() })
}
