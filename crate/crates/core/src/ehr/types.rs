use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::crypto::{Address, Digest, EncryptedRecord, PublicKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Patient,
    Doctor,
    Admin,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Patient, Role::Doctor, Role::Admin];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccountStatus {
    Pending,
    Active,
    Suspended,
}

impl fmt::Display for AccountStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    #[serde(default)]
    pub date_of_birth: Option<NaiveDate>,
    #[serde(default)]
    pub sex: Option<String>,
    #[serde(default)]
    pub contact: Option<String>,
}

impl Profile {
    pub fn named(name: impl Into<String>) -> Profile {
        Profile { name: name.into(), ..Profile::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub address: Address,
    pub role: Role,
    pub public_key: PublicKey,
    pub status: AccountStatus,
    pub profile: Profile,
    pub registered_at: u64,
}

/// Number of bookable 20-minute slots between 08:00 and 16:00.
pub const SLOTS_PER_DAY: u8 = 24;
const FIRST_SLOT_MINUTE: u32 = 8 * 60;
const SLOT_MINUTES: u32 = 20;

/// Human label for a slot index, e.g. `0 -> "08:00 - 08:20"`.
pub fn slot_label(slot: u8) -> Option<String> {
    if slot >= SLOTS_PER_DAY {
        return None;
    }
    let start = FIRST_SLOT_MINUTE + u32::from(slot) * SLOT_MINUTES;
    let end = start + SLOT_MINUTES;
    Some(format!("{:02}:{:02} - {:02}:{:02}", start / 60, start % 60, end / 60, end % 60))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AppointmentStatus {
    Requested,
    Confirmed,
    Completed,
    Cancelled,
}

impl AppointmentStatus {
    /// Requested -> Confirmed -> Completed, and anything not already
    /// cancelled may be cancelled.
    pub fn can_transition_to(self, next: AppointmentStatus) -> bool {
        use AppointmentStatus::*;
        matches!(
            (self, next),
            (Requested, Confirmed) | (Confirmed, Completed) | (Requested | Confirmed | Completed, Cancelled)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextAppointment {
    pub date: NaiveDate,
    pub slot: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Appointment {
    pub id: u64,
    pub patient: Address,
    pub doctor: Address,
    pub date: NaiveDate,
    pub slot: u8,
    pub purpose: String,
    pub status: AppointmentStatus,
    pub observation_notes: String,
    pub improvement_notes: String,
    pub medicine: Vec<u64>,
    pub next_appointment: Option<NextAppointment>,
    pub record_number: String,
    /// Free text; no scale is defined for it.
    pub priority: String,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    Low,
    Normal,
    High,
    Unclassified,
}

/// Inclusive reference interval check.
pub fn classify(value: Decimal, ref_min: Decimal, ref_max: Decimal) -> Flag {
    if value < ref_min {
        Flag::Low
    } else if value > ref_max {
        Flag::High
    } else {
        Flag::Normal
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabParameter {
    pub name: String,
    pub unit: String,
    pub ref_min: Decimal,
    pub ref_max: Decimal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabTestDefinition {
    pub id: u64,
    pub test_name: String,
    pub parameters: Vec<LabParameter>,
}

impl LabTestDefinition {
    pub fn parameter(&self, name: &str) -> Option<&LabParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabResult {
    pub id: u64,
    pub patient: Address,
    pub doctor: Address,
    pub test_id: u64,
    pub values: BTreeMap<String, Decimal>,
    pub flags: BTreeMap<String, Flag>,
    pub report: EncryptedRecord,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationItem {
    pub id: u64,
    pub name: String,
    pub stock: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prescription {
    pub id: u64,
    pub appointment_id: u64,
    pub patient: Address,
    pub doctor: Address,
    pub medication_id: u64,
    pub dosage: String,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRange {
    pub unit: String,
    pub ref_min: Decimal,
    pub ref_max: Decimal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoTObservation {
    pub id: u64,
    pub device_id: String,
    pub patient: Address,
    pub metric: String,
    pub value: Decimal,
    pub unit: String,
    pub observed_at: u64,
    pub flag: Flag,
    pub recorded_by: Address,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordRef {
    Appointment(u64),
    LabResult(u64),
    Prescription(u64),
    IoT(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessScope {
    AllRecords,
    Record(RecordRef),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessGrant {
    pub id: u64,
    pub patient: Address,
    pub grantee: Address,
    pub scope: AccessScope,
    pub granted_at: u64,
    pub revoked_at: Option<u64>,
}

impl AccessGrant {
    pub fn is_live(&self) -> bool {
        self.revoked_at.is_none()
    }

    pub fn covers(&self, record: RecordRef) -> bool {
        self.is_live()
            && match self.scope {
                AccessScope::AllRecords => true,
                AccessScope::Record(r) => r == record,
            }
    }
}

/// One row per applied state-mutating transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub tx_id: Digest,
    pub timestamp: u64,
    pub actor: Address,
    pub action: String,
    pub subject: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_grid_labels() {
        assert_eq!(slot_label(0).unwrap(), "08:00 - 08:20");
        assert_eq!(slot_label(1).unwrap(), "08:20 - 08:40");
        assert_eq!(slot_label(23).unwrap(), "15:40 - 16:00");
        assert!(slot_label(24).is_none());
        assert_eq!((0..=255u8).filter_map(slot_label).count(), 24);
    }

    #[test]
    fn inclusive_boundaries() {
        let d = |v: i64| Decimal::from(v);
        assert_eq!(classify(d(5), d(1), d(10)), Flag::Normal);
        assert_eq!(classify(d(11), d(1), d(10)), Flag::High);
        assert_eq!(classify(d(0), d(1), d(10)), Flag::Low);
        assert_eq!(classify(d(1), d(1), d(10)), Flag::Normal);
        assert_eq!(classify(d(10), d(1), d(10)), Flag::Normal);
    }

    #[test]
    fn status_transitions() {
        use AppointmentStatus::*;
        assert!(Requested.can_transition_to(Confirmed));
        assert!(Confirmed.can_transition_to(Completed));
        assert!(!Requested.can_transition_to(Completed));
        assert!(!Completed.can_transition_to(Confirmed));
        assert!(Requested.can_transition_to(Cancelled));
        assert!(!Cancelled.can_transition_to(Cancelled));
        assert!(!Cancelled.can_transition_to(Requested));
    }
}
