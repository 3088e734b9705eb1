//! Read-side projections of contract state.

use chrono::NaiveDate;
use serde::Serialize;

use super::rbac::{Access, DenyReason, OperationKind};
use super::types::*;
use super::EhrState;
use crate::crypto::Address;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum View {
    Profile,
    Doctors,
    Medications,
    LabDefinitions,
    PatientHistory { patient: Address },
    DoctorAgenda { date: NaiveDate },
    EReports,
    AuditLog,
}

impl View {
    pub fn operation(&self) -> OperationKind {
        match self {
            View::Profile => OperationKind::ViewProfile,
            View::Doctors => OperationKind::ListDoctors,
            View::Medications => OperationKind::ViewMedications,
            View::LabDefinitions => OperationKind::ViewLabDefinitions,
            View::PatientHistory { .. } => OperationKind::ViewPatientHistory,
            View::DoctorAgenda { .. } => OperationKind::ViewDoctorAgenda,
            View::EReports => OperationKind::ViewEReports,
            View::AuditLog => OperationKind::ViewAuditLog,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HistoryView {
    pub patient: Address,
    pub appointments: Vec<Appointment>,
    pub prescriptions: Vec<Prescription>,
    pub lab_results: Vec<LabResult>,
    pub iot_observations: Vec<IoTObservation>,
    pub grants: Vec<AccessGrant>,
}

impl HistoryView {
    pub fn item_count(&self) -> usize {
        self.appointments.len() + self.prescriptions.len() + self.lab_results.len() + self.iot_observations.len()
    }
}

/// Public directory entry for a doctor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DoctorEntry {
    pub address: Address,
    pub name: String,
}

/// One chronological past activity of a doctor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Activity {
    Appointment(Appointment),
    Prescription(Prescription),
    LabResult(LabResult),
}

impl Activity {
    fn at(&self) -> (u64, u64) {
        match self {
            Activity::Appointment(a) => (a.updated_at, a.id),
            Activity::Prescription(p) => (p.created_at, p.id),
            Activity::LabResult(r) => (r.created_at, r.id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum ViewResult {
    Profile(UserAccount),
    Doctors(Vec<DoctorEntry>),
    Medications(Vec<MedicationItem>),
    LabDefinitions(Vec<LabTestDefinition>),
    History(Box<HistoryView>),
    Agenda(Vec<Appointment>),
    EReports(Vec<Activity>),
    AuditLog(Vec<AuditEntry>),
}

impl EhrState {
    pub fn query_view(&self, session: Option<Address>, view: &View) -> Result<ViewResult, DenyReason> {
        if let Access::Deny(reason) = self.check_access(session, view.operation()) {
            return Err(reason);
        }
        let caller = session.expect("check_access admits only sessions");
        let account = &self.accounts[&caller];
        Ok(match view {
            View::Profile => ViewResult::Profile(account.clone()),
            View::Doctors => ViewResult::Doctors(
                self.accounts
                    .values()
                    .filter(|a| a.role == Role::Doctor && a.status == AccountStatus::Active)
                    .map(|a| DoctorEntry { address: a.address, name: a.profile.name.clone() })
                    .collect(),
            ),
            View::Medications => ViewResult::Medications(self.medications.values().cloned().collect()),
            View::LabDefinitions => ViewResult::LabDefinitions(self.lab_definitions.values().cloned().collect()),
            View::PatientHistory { patient } => ViewResult::History(Box::new(self.history_for(caller, account.role, *patient)?)),
            View::DoctorAgenda { date } => {
                let mut agenda: Vec<Appointment> = self
                    .appointments
                    .values()
                    .filter(|a| a.doctor == caller && a.date == *date && a.status != AppointmentStatus::Cancelled)
                    .cloned()
                    .collect();
                agenda.sort_by_key(|a| a.slot);
                ViewResult::Agenda(agenda)
            }
            View::EReports => {
                let mut items: Vec<Activity> = self
                    .appointments
                    .values()
                    .filter(|a| a.doctor == caller && a.status == AppointmentStatus::Completed)
                    .cloned()
                    .map(Activity::Appointment)
                    .chain(self.prescriptions.values().filter(|p| p.doctor == caller).cloned().map(Activity::Prescription))
                    .chain(self.lab_results.values().filter(|r| r.doctor == caller).cloned().map(Activity::LabResult))
                    .collect();
                items.sort_by_key(Activity::at);
                ViewResult::EReports(items)
            }
            View::AuditLog => ViewResult::AuditLog(self.audit.clone()),
        })
    }

    fn history_for(&self, caller: Address, role: Role, patient: Address) -> Result<HistoryView, DenyReason> {
        if !self.accounts.get(&patient).is_some_and(|a| a.role == Role::Patient) {
            return Err(DenyReason::NoConsent);
        }
        let owner = caller == patient && role == Role::Patient;
        if !owner && role != Role::Doctor {
            return Err(DenyReason::Forbidden);
        }
        let visible = |record: RecordRef, party: Option<Address>| {
            owner || party == Some(caller) || self.grants.values().any(|g| g.patient == patient && g.grantee == caller && g.covers(record))
        };
        let view = HistoryView {
            patient,
            appointments: self
                .appointments
                .values()
                .filter(|a| a.patient == patient && visible(RecordRef::Appointment(a.id), Some(a.doctor)))
                .cloned()
                .collect(),
            prescriptions: self
                .prescriptions
                .values()
                .filter(|p| p.patient == patient && visible(RecordRef::Prescription(p.id), Some(p.doctor)))
                .cloned()
                .collect(),
            lab_results: self
                .lab_results
                .values()
                .filter(|r| r.patient == patient && visible(RecordRef::LabResult(r.id), Some(r.doctor)))
                .cloned()
                .collect(),
            iot_observations: self
                .iot_observations
                .values()
                .filter(|o| o.patient == patient && visible(RecordRef::IoT(o.id), None))
                .cloned()
                .collect(),
            grants: if owner {
                self.grants.values().filter(|g| g.patient == patient).cloned().collect()
            } else {
                Vec::new()
            },
        };
        let has_any_grant = self.grants.values().any(|g| g.patient == patient && g.grantee == caller && g.is_live());
        if !owner && !has_any_grant && view.item_count() == 0 {
            return Err(DenyReason::NoConsent);
        }
        Ok(view)
    }
}
