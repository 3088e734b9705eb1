use std::collections::BTreeMap;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::rbac::OperationKind;
use super::types::*;
use crate::crypto::{Address, EncryptedRecord, PublicKey};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisAccount {
    pub public_key: PublicKey,
    pub role: Role,
    pub profile: Profile,
}

/// Partial update of an appointment; `None` leaves a field untouched.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppointmentUpdate {
    #[serde(default)]
    pub status: Option<AppointmentStatus>,
    #[serde(default)]
    pub observation_notes: Option<String>,
    #[serde(default)]
    pub improvement_notes: Option<String>,
    #[serde(default)]
    pub medicine: Option<Vec<u64>>,
    /// `Some(None)` clears a previously set follow-up.
    #[serde(default)]
    pub next_appointment: Option<Option<NextAppointment>>,
    #[serde(default)]
    pub record_number: Option<String>,
    #[serde(default)]
    pub priority: Option<String>,
}

impl AppointmentUpdate {
    pub fn is_empty(&self) -> bool {
        *self == AppointmentUpdate::default()
    }
}

/// Every state transition the EHR contract understands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    /// Only valid as the single transaction of the genesis block. The first
    /// account must be an admin; every listed account starts Active.
    Genesis {
        accounts: Vec<GenesisAccount>,
        system_start_date: Option<NaiveDate>,
    },
    RegisterUser {
        public_key: PublicKey,
        role: Role,
        profile: Profile,
    },
    SetUserStatus {
        user: Address,
        status: AccountStatus,
    },
    SetSystemStartDate {
        date: Option<NaiveDate>,
    },
    UpdateProfile {
        profile: Profile,
    },
    RequestAppointment {
        doctor: Address,
        date: NaiveDate,
        slot: u8,
        purpose: String,
    },
    UpdateAppointment {
        id: u64,
        update: AppointmentUpdate,
    },
    CancelAppointment {
        id: u64,
    },
    Prescribe {
        appointment_id: u64,
        medication_id: u64,
        dosage: String,
    },
    AddMedication {
        name: String,
        stock: u64,
    },
    AdjustStock {
        medication_id: u64,
        delta: i64,
    },
    AddLabDefinition {
        test_name: String,
        parameters: Vec<LabParameter>,
    },
    SetMetricRange {
        metric: String,
        range: ReferenceRange,
    },
    SubmitLabResult {
        patient: Address,
        test_id: u64,
        values: BTreeMap<String, Decimal>,
        report: EncryptedRecord,
    },
    RecordIoT {
        device_id: String,
        patient: Address,
        metric: String,
        value: Decimal,
        unit: String,
        observed_at: u64,
    },
    GrantAccess {
        grantee: Address,
        scope: AccessScope,
    },
    RevokeAccess {
        grant_id: u64,
    },
}

impl Payload {
    pub fn action_name(&self) -> &'static str {
        match self {
            Payload::Genesis { .. } => "Genesis",
            Payload::RegisterUser { .. } => "RegisterUser",
            Payload::SetUserStatus { .. } => "SetUserStatus",
            Payload::SetSystemStartDate { .. } => "SetSystemStartDate",
            Payload::UpdateProfile { .. } => "UpdateProfile",
            Payload::RequestAppointment { .. } => "RequestAppointment",
            Payload::UpdateAppointment { .. } => "UpdateAppointment",
            Payload::CancelAppointment { .. } => "CancelAppointment",
            Payload::Prescribe { .. } => "Prescribe",
            Payload::AddMedication { .. } => "AddMedication",
            Payload::AdjustStock { .. } => "AdjustStock",
            Payload::AddLabDefinition { .. } => "AddLabDefinition",
            Payload::SetMetricRange { .. } => "SetMetricRange",
            Payload::SubmitLabResult { .. } => "SubmitLabResult",
            Payload::RecordIoT { .. } => "RecordIoT",
            Payload::GrantAccess { .. } => "GrantAccess",
            Payload::RevokeAccess { .. } => "RevokeAccess",
        }
    }

    /// RBAC operation gating this payload. Genesis and self-registration
    /// precede any session and are not gated.
    pub fn operation(&self) -> Option<OperationKind> {
        use OperationKind as Op;
        Some(match self {
            Payload::Genesis { .. } | Payload::RegisterUser { .. } => return None,
            Payload::SetUserStatus { .. } => Op::SetUserStatus,
            Payload::SetSystemStartDate { .. } => Op::SetSystemStartDate,
            Payload::UpdateProfile { .. } => Op::UpdateProfile,
            Payload::RequestAppointment { .. } => Op::RequestAppointment,
            Payload::UpdateAppointment { .. } => Op::UpdateAppointment,
            Payload::CancelAppointment { .. } => Op::CancelAppointment,
            Payload::Prescribe { .. } => Op::Prescribe,
            Payload::AddMedication { .. } => Op::AddMedication,
            Payload::AdjustStock { .. } => Op::AdjustStock,
            Payload::AddLabDefinition { .. } => Op::AddLabDefinition,
            Payload::SetMetricRange { .. } => Op::SetMetricRange,
            Payload::SubmitLabResult { .. } => Op::SubmitLabResult,
            Payload::RecordIoT { .. } => Op::RecordIoT,
            Payload::GrantAccess { .. } => Op::GrantAccess,
            Payload::RevokeAccess { .. } => Op::RevokeAccess,
        })
    }
}
