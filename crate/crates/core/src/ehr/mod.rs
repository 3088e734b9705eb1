//! The EHR contract: user registry, RBAC, and the clinical workflows.
//!
//! State is a pure fold of the chain's transactions. Every handler runs all
//! of its checks before touching state, so a rejected transaction leaves the
//! state bit-identical, and every applied transaction appends exactly one
//! [`AuditEntry`].

mod payload;
mod rbac;
mod types;
mod views;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::crypto::{digest, Address, Digest, PublicKey};
use crate::ledger::Transaction;

pub use payload::{AppointmentUpdate, GenesisAccount, Payload};
pub use rbac::{permitted, Access, DenyReason, OperationKind};
pub use types::*;
pub use views::{HistoryView, View, ViewResult};

/// Why a transaction was refused by the contract.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    #[error("access denied: {0}")]
    Denied(DenyReason),
    #[error("genesis payload is only valid on an empty state")]
    GenesisOutsideGenesis,
    #[error("genesis must start with an admin account")]
    GenesisWithoutAdmin,
    #[error("signer does not match the registered public key")]
    SignerMismatch,
    #[error("address already registered")]
    AlreadyRegistered,
    #[error("administrators cannot self-register")]
    AdminRegistrationForbidden,
    #[error("unknown user {0}")]
    UnknownUser(Address),
    #[error("{0} is not an active doctor")]
    NotAnActiveDoctor(Address),
    #[error("{0} is not a registered patient")]
    NotAPatient(Address),
    #[error("administrators cannot change their own status")]
    SelfStatusChange,
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("slot {0} is outside the 0..24 grid")]
    InvalidSlot(u8),
    #[error("slot already taken")]
    SlotTaken,
    #[error("appointments before the system start date {0} are not accepted")]
    BeforeSystemStart(NaiveDate),
    #[error("unknown appointment {0}")]
    UnknownAppointment(u64),
    #[error("caller is not a party to appointment {0}")]
    NotAppointmentParty(u64),
    #[error("appointment status cannot move from {from:?} to {to:?}")]
    InvalidTransition { from: AppointmentStatus, to: AppointmentStatus },
    #[error("appointment {0} is cancelled")]
    AppointmentCancelled(u64),
    #[error("unknown medication {0}")]
    UnknownMedication(u64),
    #[error("stock would become negative ({stock} {delta:+})")]
    NegativeStock { stock: u64, delta: i64 },
    #[error("unknown lab test {0}")]
    UnknownLabTest(u64),
    #[error("missing parameter values: {}", .0.join(", "))]
    MissingParameters(Vec<String>),
    #[error("values for undefined parameters: {}", .0.join(", "))]
    UnknownParameters(Vec<String>),
    #[error("duplicate parameter {0}")]
    DuplicateParameter(String),
    #[error("reference range for {0} has min > max")]
    InvalidReferenceRange(String),
    #[error("lab report must be owned by and readable by the patient")]
    InvalidReport,
    #[error("no consent from patient {0}")]
    NoConsent(Address),
    #[error("unknown record {0:?}")]
    UnknownRecord(RecordRef),
    #[error("unknown grant {0}")]
    UnknownGrant(u64),
    #[error("grant {0} already revoked")]
    GrantAlreadyRevoked(u64),
    #[error("cannot grant access to yourself")]
    SelfGrant,
}

impl Rejection {
    /// Stable rule name used in API error bodies.
    pub fn rule(&self) -> String {
        match self {
            Rejection::Denied(r) => format!("{r:?}"),
            other => {
                let dbg = format!("{other:?}");
                dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EhrState {
    pub accounts: BTreeMap<Address, UserAccount>,
    /// Next expected transaction nonce per signer.
    pub nonces: BTreeMap<Address, u64>,
    pub system_start_date: Option<NaiveDate>,
    pub appointments: BTreeMap<u64, Appointment>,
    pub prescriptions: BTreeMap<u64, Prescription>,
    pub medications: BTreeMap<u64, MedicationItem>,
    pub lab_definitions: BTreeMap<u64, LabTestDefinition>,
    pub lab_results: BTreeMap<u64, LabResult>,
    pub metric_ranges: BTreeMap<String, ReferenceRange>,
    pub iot_observations: BTreeMap<u64, IoTObservation>,
    pub grants: BTreeMap<u64, AccessGrant>,
    pub audit: Vec<AuditEntry>,
}

fn next_id<V>(map: &BTreeMap<u64, V>) -> u64 {
    map.keys().next_back().map_or(1, |k| k + 1)
}

fn non_empty(field: &'static str, value: &str) -> Result<(), Rejection> {
    if value.trim().is_empty() {
        Err(Rejection::EmptyField(field))
    } else {
        Ok(())
    }
}

impl EhrState {
    pub fn new() -> EhrState {
        EhrState::default()
    }

    /// Digest of the canonical encoding of the whole state.
    pub fn state_hash(&self) -> Digest {
        digest(&codec::encode(self))
    }

    pub fn account(&self, address: &Address) -> Option<&UserAccount> {
        self.accounts.get(address)
    }

    pub fn public_key_of(&self, address: &Address) -> Option<&PublicKey> {
        self.accounts.get(address).map(|a| &a.public_key)
    }

    pub fn expected_nonce(&self, signer: &Address) -> u64 {
        self.nonces.get(signer).copied().unwrap_or(0)
    }

    fn active_role(&self, address: &Address) -> Option<Role> {
        self.accounts
            .get(address)
            .filter(|a| a.status == AccountStatus::Active)
            .map(|a| a.role)
    }

    fn require_active_doctor(&self, address: &Address) -> Result<(), Rejection> {
        match self.active_role(address) {
            Some(Role::Doctor) => Ok(()),
            _ => Err(Rejection::NotAnActiveDoctor(*address)),
        }
    }

    fn require_patient(&self, address: &Address) -> Result<(), Rejection> {
        match self.accounts.get(address) {
            Some(a) if a.role == Role::Patient => Ok(()),
            _ => Err(Rejection::NotAPatient(*address)),
        }
    }

    pub fn slot_taken(&self, doctor: &Address, date: NaiveDate, slot: u8) -> bool {
        self.appointments.values().any(|a| {
            a.doctor == *doctor && a.date == date && a.slot == slot && a.status != AppointmentStatus::Cancelled
        })
    }

    /// Whether `grantee` holds a live grant covering `record` of `patient`.
    pub fn has_grant(&self, patient: &Address, grantee: &Address, record: Option<RecordRef>) -> bool {
        self.grants.values().any(|g| {
            g.patient == *patient
                && g.grantee == *grantee
                && match record {
                    Some(r) => g.covers(r),
                    None => g.is_live() && g.scope == AccessScope::AllRecords,
                }
        })
    }

    /// Doctor has a standing clinical relationship with the patient.
    fn doctor_has_relationship(&self, doctor: &Address, patient: &Address) -> bool {
        self.has_grant(patient, doctor, None)
            || self.appointments.values().any(|a| {
                a.doctor == *doctor && a.patient == *patient && a.status != AppointmentStatus::Cancelled
            })
    }

    pub fn record_patient(&self, record: RecordRef) -> Option<Address> {
        match record {
            RecordRef::Appointment(id) => self.appointments.get(&id).map(|a| a.patient),
            RecordRef::LabResult(id) => self.lab_results.get(&id).map(|r| r.patient),
            RecordRef::Prescription(id) => self.prescriptions.get(&id).map(|p| p.patient),
            RecordRef::IoT(id) => self.iot_observations.get(&id).map(|o| o.patient),
        }
    }

    /// Applies one transaction whose signature and nonce were already
    /// checked by the ledger. On rejection the state is untouched.
    pub fn apply_transaction(&mut self, tx: &Transaction) -> Result<AuditEntry, Rejection> {
        let signer = tx.signer;
        if let Some(op) = tx.payload.operation() {
            if let Access::Deny(reason) = self.check_access(Some(signer), op) {
                return Err(Rejection::Denied(reason));
            }
        }
        let subject = self.apply_payload(signer, tx.timestamp, &tx.payload)?;
        let entry = AuditEntry {
            seq: self.audit.len() as u64,
            tx_id: tx.tx_id,
            timestamp: tx.timestamp,
            actor: signer,
            action: tx.payload.action_name().to_string(),
            subject,
        };
        self.audit.push(entry.clone());
        *self.nonces.entry(signer).or_insert(0) = tx.nonce + 1;
        Ok(entry)
    }

    /// Returns the audit subject on success.
    fn apply_payload(&mut self, signer: Address, now: u64, payload: &Payload) -> Result<String, Rejection> {
        match payload {
            Payload::Genesis { accounts, system_start_date } => {
                if !self.accounts.is_empty() || !self.audit.is_empty() {
                    return Err(Rejection::GenesisOutsideGenesis);
                }
                match accounts.first() {
                    Some(a) if a.role == Role::Admin && a.public_key.address() == signer => {}
                    _ => return Err(Rejection::GenesisWithoutAdmin),
                }
                let mut seen = BTreeSet::new();
                for a in accounts {
                    non_empty("name", &a.profile.name)?;
                    if !seen.insert(a.public_key.address()) {
                        return Err(Rejection::AlreadyRegistered);
                    }
                }
                for a in accounts {
                    let address = a.public_key.address();
                    self.accounts.insert(
                        address,
                        UserAccount {
                            address,
                            role: a.role,
                            public_key: a.public_key.clone(),
                            status: AccountStatus::Active,
                            profile: a.profile.clone(),
                            registered_at: now,
                        },
                    );
                }
                self.system_start_date = *system_start_date;
                Ok(format!("accounts:{}", accounts.len()))
            }
            Payload::RegisterUser { public_key, role, profile } => {
                if public_key.address() != signer {
                    return Err(Rejection::SignerMismatch);
                }
                if self.accounts.contains_key(&signer) {
                    return Err(Rejection::AlreadyRegistered);
                }
                if *role == Role::Admin {
                    return Err(Rejection::AdminRegistrationForbidden);
                }
                non_empty("name", &profile.name)?;
                self.accounts.insert(
                    signer,
                    UserAccount {
                        address: signer,
                        role: *role,
                        public_key: public_key.clone(),
                        status: AccountStatus::Pending,
                        profile: profile.clone(),
                        registered_at: now,
                    },
                );
                Ok(signer.to_hex())
            }
            Payload::SetUserStatus { user, status } => {
                if *user == signer {
                    return Err(Rejection::SelfStatusChange);
                }
                let account = self.accounts.get_mut(user).ok_or(Rejection::UnknownUser(*user))?;
                account.status = *status;
                Ok(user.to_hex())
            }
            Payload::SetSystemStartDate { date } => {
                self.system_start_date = *date;
                Ok(date.map_or_else(|| "none".to_string(), |d| d.to_string()))
            }
            Payload::UpdateProfile { profile } => {
                non_empty("name", &profile.name)?;
                let account = self.accounts.get_mut(&signer).ok_or(Rejection::UnknownUser(signer))?;
                account.profile = profile.clone();
                Ok(signer.to_hex())
            }
            Payload::RequestAppointment { doctor, date, slot, purpose } => {
                let appointment = self.schedule_appointment(signer, *doctor, *date, *slot, purpose, now)?;
                let id = appointment.id;
                self.appointments.insert(id, appointment);
                Ok(format!("appointment:{id}"))
            }
            Payload::UpdateAppointment { id, update } => {
                let appt = self.appointments.get(id).ok_or(Rejection::UnknownAppointment(*id))?;
                if appt.doctor != signer {
                    return Err(Rejection::NotAppointmentParty(*id));
                }
                if update.is_empty() {
                    return Err(Rejection::EmptyField("update"));
                }
                if let Some(to) = update.status {
                    if !appt.status.can_transition_to(to) {
                        return Err(Rejection::InvalidTransition { from: appt.status, to });
                    }
                } else if appt.status == AppointmentStatus::Cancelled {
                    return Err(Rejection::AppointmentCancelled(*id));
                }
                if let Some(meds) = &update.medicine {
                    if let Some(missing) = meds.iter().find(|m| !self.medications.contains_key(m)) {
                        return Err(Rejection::UnknownMedication(*missing));
                    }
                }
                if let Some(Some(next)) = update.next_appointment {
                    if next.slot >= SLOTS_PER_DAY {
                        return Err(Rejection::InvalidSlot(next.slot));
                    }
                }
                let appt = self.appointments.get_mut(id).expect("checked above");
                if let Some(s) = update.status {
                    appt.status = s;
                }
                if let Some(v) = &update.observation_notes {
                    appt.observation_notes = v.clone();
                }
                if let Some(v) = &update.improvement_notes {
                    appt.improvement_notes = v.clone();
                }
                if let Some(v) = &update.medicine {
                    appt.medicine = v.clone();
                }
                if let Some(v) = update.next_appointment {
                    appt.next_appointment = v;
                }
                if let Some(v) = &update.record_number {
                    appt.record_number = v.clone();
                }
                if let Some(v) = &update.priority {
                    appt.priority = v.clone();
                }
                appt.updated_at = now;
                Ok(format!("appointment:{id}"))
            }
            Payload::CancelAppointment { id } => {
                let appt = self.appointments.get(id).ok_or(Rejection::UnknownAppointment(*id))?;
                if appt.patient != signer && appt.doctor != signer {
                    return Err(Rejection::NotAppointmentParty(*id));
                }
                if !appt.status.can_transition_to(AppointmentStatus::Cancelled) {
                    return Err(Rejection::InvalidTransition { from: appt.status, to: AppointmentStatus::Cancelled });
                }
                let appt = self.appointments.get_mut(id).expect("checked above");
                appt.status = AppointmentStatus::Cancelled;
                appt.updated_at = now;
                Ok(format!("appointment:{id}"))
            }
            Payload::Prescribe { appointment_id, medication_id, dosage } => {
                let appt = self
                    .appointments
                    .get(appointment_id)
                    .ok_or(Rejection::UnknownAppointment(*appointment_id))?;
                if appt.doctor != signer {
                    return Err(Rejection::NotAppointmentParty(*appointment_id));
                }
                if appt.status == AppointmentStatus::Cancelled {
                    return Err(Rejection::AppointmentCancelled(*appointment_id));
                }
                if !self.medications.contains_key(medication_id) {
                    return Err(Rejection::UnknownMedication(*medication_id));
                }
                non_empty("dosage", dosage)?;
                let id = next_id(&self.prescriptions);
                let patient = appt.patient;
                self.prescriptions.insert(
                    id,
                    Prescription {
                        id,
                        appointment_id: *appointment_id,
                        patient,
                        doctor: signer,
                        medication_id: *medication_id,
                        dosage: dosage.clone(),
                        created_at: now,
                    },
                );
                let appt = self.appointments.get_mut(appointment_id).expect("checked above");
                if !appt.medicine.contains(medication_id) {
                    appt.medicine.push(*medication_id);
                }
                Ok(format!("prescription:{id}"))
            }
            Payload::AddMedication { name, stock } => {
                non_empty("name", name)?;
                let id = next_id(&self.medications);
                self.medications.insert(id, MedicationItem { id, name: name.clone(), stock: *stock });
                Ok(format!("medication:{id}"))
            }
            Payload::AdjustStock { medication_id, delta } => {
                let item = self
                    .medications
                    .get(medication_id)
                    .ok_or(Rejection::UnknownMedication(*medication_id))?;
                let next = i128::from(item.stock) + i128::from(*delta);
                let next = u64::try_from(next)
                    .map_err(|_| Rejection::NegativeStock { stock: item.stock, delta: *delta })?;
                self.medications.get_mut(medication_id).expect("checked above").stock = next;
                Ok(format!("medication:{medication_id}"))
            }
            Payload::AddLabDefinition { test_name, parameters } => {
                non_empty("test_name", test_name)?;
                if parameters.is_empty() {
                    return Err(Rejection::EmptyField("parameters"));
                }
                let mut names = BTreeSet::new();
                for p in parameters {
                    non_empty("parameter name", &p.name)?;
                    if !names.insert(p.name.as_str()) {
                        return Err(Rejection::DuplicateParameter(p.name.clone()));
                    }
                    if p.ref_min > p.ref_max {
                        return Err(Rejection::InvalidReferenceRange(p.name.clone()));
                    }
                }
                let id = next_id(&self.lab_definitions);
                self.lab_definitions.insert(
                    id,
                    LabTestDefinition { id, test_name: test_name.clone(), parameters: parameters.clone() },
                );
                Ok(format!("labdef:{id}"))
            }
            Payload::SetMetricRange { metric, range } => {
                non_empty("metric", metric)?;
                if range.ref_min > range.ref_max {
                    return Err(Rejection::InvalidReferenceRange(metric.clone()));
                }
                self.metric_ranges.insert(metric.clone(), range.clone());
                Ok(format!("metric:{metric}"))
            }
            Payload::SubmitLabResult { patient, test_id, values, report } => {
                let result = self.submit_lab_result(signer, *patient, *test_id, values, report, now)?;
                let id = result.id;
                self.lab_results.insert(id, result);
                Ok(format!("labresult:{id}"))
            }
            Payload::RecordIoT { device_id, patient, metric, value, unit, observed_at } => {
                non_empty("device_id", device_id)?;
                non_empty("metric", metric)?;
                self.require_patient(patient)?;
                if signer != *patient && !self.has_grant(patient, &signer, None) {
                    return Err(Rejection::NoConsent(*patient));
                }
                let flag = self
                    .metric_ranges
                    .get(metric)
                    .map_or(Flag::Unclassified, |r| classify(*value, r.ref_min, r.ref_max));
                let id = next_id(&self.iot_observations);
                self.iot_observations.insert(
                    id,
                    IoTObservation {
                        id,
                        device_id: device_id.clone(),
                        patient: *patient,
                        metric: metric.clone(),
                        value: *value,
                        unit: unit.clone(),
                        observed_at: *observed_at,
                        flag,
                        recorded_by: signer,
                    },
                );
                Ok(format!("iot:{id}"))
            }
            Payload::GrantAccess { grantee, scope } => {
                if *grantee == signer {
                    return Err(Rejection::SelfGrant);
                }
                if !self.accounts.contains_key(grantee) {
                    return Err(Rejection::UnknownUser(*grantee));
                }
                if let AccessScope::Record(r) = scope {
                    match self.record_patient(*r) {
                        Some(p) if p == signer => {}
                        _ => return Err(Rejection::UnknownRecord(*r)),
                    }
                }
                let id = next_id(&self.grants);
                self.grants.insert(
                    id,
                    AccessGrant { id, patient: signer, grantee: *grantee, scope: *scope, granted_at: now, revoked_at: None },
                );
                Ok(format!("grant:{id}"))
            }
            Payload::RevokeAccess { grant_id } => {
                let grant = self.grants.get(grant_id).ok_or(Rejection::UnknownGrant(*grant_id))?;
                if grant.patient != signer {
                    return Err(Rejection::UnknownGrant(*grant_id));
                }
                if !grant.is_live() {
                    return Err(Rejection::GrantAlreadyRevoked(*grant_id));
                }
                self.grants.get_mut(grant_id).expect("checked above").revoked_at = Some(now);
                Ok(format!("grant:{grant_id}"))
            }
        }
    }

    /// Validates a booking request and builds the Requested appointment
    /// without inserting it.
    pub fn schedule_appointment(
        &self,
        patient: Address,
        doctor: Address,
        date: NaiveDate,
        slot: u8,
        purpose: &str,
        now: u64,
    ) -> Result<Appointment, Rejection> {
        match self.active_role(&patient) {
            Some(Role::Patient) => {}
            Some(_) => return Err(Rejection::Denied(DenyReason::Forbidden)),
            None => return Err(Rejection::Denied(DenyReason::AccountInactive)),
        }
        self.require_active_doctor(&doctor)?;
        if slot >= SLOTS_PER_DAY {
            return Err(Rejection::InvalidSlot(slot));
        }
        if let Some(start) = self.system_start_date {
            if date < start {
                return Err(Rejection::BeforeSystemStart(start));
            }
        }
        non_empty("purpose", purpose)?;
        if self.slot_taken(&doctor, date, slot) {
            return Err(Rejection::SlotTaken);
        }
        Ok(Appointment {
            id: next_id(&self.appointments),
            patient,
            doctor,
            date,
            slot,
            purpose: purpose.to_string(),
            status: AppointmentStatus::Requested,
            observation_notes: String::new(),
            improvement_notes: String::new(),
            medicine: Vec::new(),
            next_appointment: None,
            record_number: String::new(),
            priority: String::new(),
            created_at: now,
            updated_at: now,
        })
    }

    /// Validates a lab submission and computes its flags without inserting.
    pub fn submit_lab_result(
        &self,
        doctor: Address,
        patient: Address,
        test_id: u64,
        values: &BTreeMap<String, rust_decimal::Decimal>,
        report: &crate::crypto::EncryptedRecord,
        now: u64,
    ) -> Result<LabResult, Rejection> {
        self.require_active_doctor(&doctor)?;
        self.require_patient(&patient)?;
        let def = self.lab_definitions.get(&test_id).ok_or(Rejection::UnknownLabTest(test_id))?;
        let missing: Vec<String> = def
            .parameters
            .iter()
            .filter(|p| !values.contains_key(&p.name))
            .map(|p| p.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Rejection::MissingParameters(missing));
        }
        let unknown: Vec<String> = values.keys().filter(|k| def.parameter(k).is_none()).cloned().collect();
        if !unknown.is_empty() {
            return Err(Rejection::UnknownParameters(unknown));
        }
        if report.owner != patient || !report.can_decrypt(&patient) {
            return Err(Rejection::InvalidReport);
        }
        if !self.doctor_has_relationship(&doctor, &patient) {
            return Err(Rejection::NoConsent(patient));
        }
        let flags = def
            .parameters
            .iter()
            .map(|p| (p.name.clone(), classify(values[&p.name], p.ref_min, p.ref_max)))
            .collect();
        Ok(LabResult {
            id: next_id(&self.lab_results),
            patient,
            doctor,
            test_id,
            values: values.clone(),
            flags,
            report: report.clone(),
            created_at: now,
        })
    }
}
