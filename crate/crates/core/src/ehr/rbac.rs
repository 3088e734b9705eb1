//! Role-based access control.
//!
//! The decision procedure: no session means the caller must log in first;
//! otherwise the caller's role is read from contract state by address and
//! the (role, operation) pair is looked up in [`permitted`]. Object-level
//! consent (grants, appointment parties) is checked afterwards by the
//! individual handlers and views.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{AccountStatus, Role};
use super::EhrState;
use crate::crypto::Address;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperationKind {
    SetUserStatus,
    SetSystemStartDate,
    UpdateProfile,
    ViewProfile,
    ListDoctors,
    RequestAppointment,
    CancelAppointment,
    UpdateAppointment,
    Prescribe,
    AddMedication,
    AdjustStock,
    ViewMedications,
    AddLabDefinition,
    SetMetricRange,
    ViewLabDefinitions,
    SubmitLabResult,
    RecordIoT,
    GrantAccess,
    RevokeAccess,
    ViewPatientHistory,
    ViewDoctorAgenda,
    ViewEReports,
    ViewAuditLog,
    ExportData,
}

impl OperationKind {
    pub const ALL: [OperationKind; 24] = [
        OperationKind::SetUserStatus,
        OperationKind::SetSystemStartDate,
        OperationKind::UpdateProfile,
        OperationKind::ViewProfile,
        OperationKind::ListDoctors,
        OperationKind::RequestAppointment,
        OperationKind::CancelAppointment,
        OperationKind::UpdateAppointment,
        OperationKind::Prescribe,
        OperationKind::AddMedication,
        OperationKind::AdjustStock,
        OperationKind::ViewMedications,
        OperationKind::AddLabDefinition,
        OperationKind::SetMetricRange,
        OperationKind::ViewLabDefinitions,
        OperationKind::SubmitLabResult,
        OperationKind::RecordIoT,
        OperationKind::GrantAccess,
        OperationKind::RevokeAccess,
        OperationKind::ViewPatientHistory,
        OperationKind::ViewDoctorAgenda,
        OperationKind::ViewEReports,
        OperationKind::ViewAuditLog,
        OperationKind::ExportData,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenyReason {
    LoginRequired,
    Unregistered,
    Forbidden,
    AccountInactive,
    NoConsent,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Allow,
    Deny(DenyReason),
}

/// The permission matrix.
///
/// Patients act on their own records; doctors add, query and exchange
/// clinical data; administrators manage users, inventory, lab parameters,
/// system settings, export and audit.
pub fn permitted(role: Role, op: OperationKind) -> bool {
    use OperationKind::*;
    use Role::*;
    match op {
        UpdateProfile | ViewProfile | ListDoctors => true,
        RequestAppointment | GrantAccess | RevokeAccess => role == Patient,
        CancelAppointment | RecordIoT | ViewPatientHistory => matches!(role, Patient | Doctor),
        UpdateAppointment | Prescribe | SubmitLabResult | ViewDoctorAgenda | ViewEReports => role == Doctor,
        ViewMedications | ViewLabDefinitions => matches!(role, Doctor | Admin),
        SetUserStatus | SetSystemStartDate | AddMedication | AdjustStock | AddLabDefinition | SetMetricRange
        | ViewAuditLog | ExportData => role == Admin,
    }
}

impl EhrState {
    pub fn check_access(&self, session: Option<Address>, op: OperationKind) -> Access {
        let Some(address) = session else {
            return Access::Deny(DenyReason::LoginRequired);
        };
        let Some(account) = self.accounts.get(&address) else {
            return Access::Deny(DenyReason::Unregistered);
        };
        if account.status != AccountStatus::Active {
            return Access::Deny(DenyReason::AccountInactive);
        }
        if permitted(account.role, op) {
            Access::Allow
        } else {
            Access::Deny(DenyReason::Forbidden)
        }
    }
}
