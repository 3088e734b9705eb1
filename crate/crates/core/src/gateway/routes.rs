use std::collections::BTreeMap;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{parse_body, parse_plain, query_map, respond, ApiError, ApiRequest, ApiResponse, Gateway};
use crate::crypto::{encrypt_to, Address, Digest, EncryptedRecord, PublicKey, Signature};
use crate::ehr::{
    slot_label, AccessScope, AccountStatus, AppointmentStatus, AppointmentUpdate, EhrState, LabParameter,
    OperationKind as Op, Payload, Profile, ReferenceRange, Role, View, SLOTS_PER_DAY,
};
use crate::exporter::{export, export_filename, Dataset, DatasetKind, ExportFormat};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChallengeBody {
    address: Address,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoginBody {
    address: Address,
    #[serde(with = "hex::serde")]
    nonce: [u8; 32],
    signature: Signature,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileBody {
    name: String,
    #[serde(default)]
    date_of_birth: Option<NaiveDate>,
    #[serde(default)]
    sex: Option<String>,
    #[serde(default)]
    contact: Option<String>,
}

impl From<ProfileBody> for Profile {
    fn from(p: ProfileBody) -> Profile {
        Profile { name: p.name, date_of_birth: p.date_of_birth, sex: p.sex, contact: p.contact }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterBody {
    public_key: PublicKey,
    role: Role,
    profile: ProfileBody,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatusBody {
    status: AccountStatus,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartDateBody {
    date: Option<NaiveDate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AppointmentBody {
    doctor: Address,
    date: NaiveDate,
    slot: u8,
    purpose: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrescriptionBody {
    appointment_id: u64,
    medication_id: u64,
    dosage: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MedicationBody {
    name: String,
    stock: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StockBody {
    delta: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabParameterBody {
    name: String,
    unit: String,
    ref_min: Decimal,
    ref_max: Decimal,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabDefBody {
    test_name: String,
    parameters: Vec<LabParameterBody>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricRangeBody {
    metric: String,
    unit: String,
    ref_min: Decimal,
    ref_max: Decimal,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabResultBody {
    patient: Address,
    test_id: u64,
    values: BTreeMap<String, Decimal>,
    #[serde(default)]
    report: Option<EncryptedRecord>,
    #[serde(default)]
    report_text: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IoTBody {
    device_id: String,
    patient: Address,
    metric: String,
    value: Decimal,
    unit: String,
    #[serde(default)]
    observed_at: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GrantBody {
    grantee: Address,
    #[serde(default)]
    scope: Option<AccessScope>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

fn param<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T, ApiError> {
    raw.parse().map_err(|_| ApiError::bad_request(format!("invalid {what} {raw:?}")))
}

fn query_param<T: std::str::FromStr>(q: &BTreeMap<String, String>, key: &str) -> Result<T, ApiError> {
    let raw = q.get(key).ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{key}`")))?;
    param(raw, key)
}

fn view(g: &Gateway, req: &ApiRequest, now: u64, v: View) -> Result<ApiResponse, ApiError> {
    let session = g.authenticate(req, now)?;
    let result = g.tip_state().query_view(Some(session.address), &v)?;
    Ok(ApiResponse::json(200, &serde_json::to_value(result).expect("views serialize")))
}

pub(super) fn dispatch(g: &Gateway, req: &ApiRequest, now: u64) -> Result<ApiResponse, ApiError> {
    let (path, query) = req.path.split_once('?').unwrap_or((&req.path, ""));
    let q = query_map(query);
    let segs: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
    let method = req.method.as_str();
    let b = &req.body[..];

    match (method, segs.as_slice()) {
        ("GET", ["health"]) => {
            let node = g.node.lock().expect("node lock");
            Ok(ApiResponse::json(
                200,
                &json!({
                    "height": node.tip_height(),
                    "tip": node.tip(),
                    "confirmed_height": node.confirmed_height(),
                    "consensus": node.consensus().kind.to_string(),
                }),
            ))
        }

        ("POST", ["auth", "challenge"]) => {
            let body: ChallengeBody = parse_plain(b)?;
            let state = g.tip_state();
            let c = g.auth.lock().expect("auth lock").issue_challenge(&state, body.address, now)?;
            Ok(ApiResponse::json(200, &serde_json::to_value(c).expect("challenge serializes")))
        }
        ("POST", ["auth", "login"]) => {
            let body: LoginBody = parse_plain(b)?;
            let state = g.tip_state();
            let s = g.auth.lock().expect("auth lock").login(&state, body.address, body.nonce, &body.signature, now)?;
            Ok(ApiResponse::json(
                200,
                &json!({ "token": s.token, "address": s.address, "role": s.role, "expires_at": s.expires_at() }),
            ))
        }
        ("POST", ["auth", "logout"]) => {
            if let Some(t) = &req.token {
                g.auth.lock().expect("auth lock").logout(t);
            }
            Ok(ApiResponse::json(200, &json!({ "ok": true })))
        }

        ("POST", ["users"]) => {
            let body = parse_body::<RegisterBody>(b)?;
            let signer = body.data.public_key.address();
            let s = g.submit(signer, body, now, |d, _| {
                Ok(Payload::RegisterUser { public_key: d.public_key, role: d.role, profile: d.profile.into() })
            })?;
            Ok(respond(s, 201, |m| {
                json!({ "address": signer, "account": m.state.account(&signer) })
            }))
        }
        ("PATCH", ["admin", "users", addr, "status"]) => {
            let (session, _) = g.authorize(req, now, Op::SetUserStatus)?;
            let user: Address = param(addr, "address")?;
            let body = parse_body::<StatusBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| Ok(Payload::SetUserStatus { user, status: d.status }))?;
            Ok(respond(s, 200, |m| json!({ "account": m.state.account(&user) })))
        }
        ("PATCH", ["admin", "system", "start-date"]) => {
            let (session, _) = g.authorize(req, now, Op::SetSystemStartDate)?;
            let body = parse_body::<StartDateBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| Ok(Payload::SetSystemStartDate { date: d.date }))?;
            Ok(respond(s, 200, |m| json!({ "system_start_date": m.state.system_start_date })))
        }

        ("GET", ["profile"]) => view(g, req, now, View::Profile),
        ("PATCH", ["profile"]) => {
            let (session, _) = g.authorize(req, now, Op::UpdateProfile)?;
            let body = parse_body::<ProfileBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| Ok(Payload::UpdateProfile { profile: d.into() }))?;
            Ok(respond(s, 200, |m| json!({ "account": m.state.account(&session.address) })))
        }
        ("GET", ["doctors"]) => view(g, req, now, View::Doctors),
        ("GET", ["account", "nonce"]) => {
            let session = g.authenticate(req, now)?;
            let next = g.node.lock().expect("node lock").next_nonce(&session.address);
            Ok(ApiResponse::json(200, &json!({ "address": session.address, "next_nonce": next })))
        }
        ("GET", ["tx", id]) => {
            g.authenticate(req, now)?;
            let id: Digest = param(id, "transaction id")?;
            let node = g.node.lock().expect("node lock");
            let body = match node.find_tx(&id) {
                Some((height, _)) => json!({
                    "tx_id": id,
                    "status": if height <= node.confirmed_height() { "confirmed" } else { "included" },
                    "height": height,
                }),
                None => return Err(ApiError::new(404, "NotFound", "transaction not on the canonical chain")),
            };
            Ok(ApiResponse::json(200, &body))
        }

        ("GET", ["slots"]) => {
            let (_, state) = g.authorize(req, now, Op::RequestAppointment)?;
            let doctor: Address = query_param(&q, "doctor")?;
            let date: NaiveDate = query_param(&q, "date")?;
            let slots: Vec<Value> = (0..SLOTS_PER_DAY)
                .map(|s| json!({ "slot": s, "label": slot_label(s), "available": !state.slot_taken(&doctor, date, s) }))
                .collect();
            Ok(ApiResponse::json(200, &json!({ "doctor": doctor, "date": date, "slots": slots })))
        }
        ("POST", ["appointments"]) => {
            let (session, _) = g.authorize(req, now, Op::RequestAppointment)?;
            let body = parse_body::<AppointmentBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| {
                Ok(Payload::RequestAppointment { doctor: d.doctor, date: d.date, slot: d.slot, purpose: d.purpose })
            })?;
            Ok(respond(s, 201, |m| json!({ "appointment": m.subject_id().and_then(|id| m.state.appointments.get(&id)) })))
        }
        ("PATCH", ["appointments", id]) => {
            let id: u64 = param(id, "appointment id")?;
            let session = g.authenticate(req, now)?;
            let body = parse_body::<AppointmentUpdate>(b)?;
            let cancel_only = body.data == AppointmentUpdate { status: Some(AppointmentStatus::Cancelled), ..Default::default() };
            let op = if cancel_only { Op::CancelAppointment } else { Op::UpdateAppointment };
            g.authorize(req, now, op)?;
            let s = g.submit(session.address, body, now, |update, _| {
                Ok(if cancel_only { Payload::CancelAppointment { id } } else { Payload::UpdateAppointment { id, update } })
            })?;
            Ok(respond(s, 200, |m| json!({ "appointment": m.state.appointments.get(&id) })))
        }
        ("DELETE", ["appointments", id]) => {
            let id: u64 = param(id, "appointment id")?;
            let (session, _) = g.authorize(req, now, Op::CancelAppointment)?;
            let body = parse_body::<Empty>(b)?;
            let s = g.submit(session.address, body, now, |_, _| Ok(Payload::CancelAppointment { id }))?;
            Ok(respond(s, 200, |m| json!({ "appointment": m.state.appointments.get(&id) })))
        }
        ("GET", ["doctor", "agenda"]) => {
            g.authorize(req, now, Op::ViewDoctorAgenda)?;
            let date: NaiveDate = query_param(&q, "date")?;
            let resp = view(g, req, now, View::DoctorAgenda { date })?;
            let mut items = resp.value();
            if let Value::Array(list) = &mut items {
                for a in list.iter_mut() {
                    let label = a["slot"].as_u64().and_then(|s| u8::try_from(s).ok()).and_then(slot_label);
                    a["slot_label"] = json!(label);
                }
            }
            Ok(ApiResponse::json(200, &json!({ "date": date, "appointments": items })))
        }
        ("GET", ["doctor", "ereports"]) => view(g, req, now, View::EReports),
        ("GET", ["patient", "history"]) => {
            let session = g.authenticate(req, now)?;
            let patient = match q.get("patient") {
                Some(p) => param(p, "patient")?,
                None => session.address,
            };
            view(g, req, now, View::PatientHistory { patient })
        }

        ("POST", ["prescriptions"]) => {
            let (session, _) = g.authorize(req, now, Op::Prescribe)?;
            let body = parse_body::<PrescriptionBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| {
                Ok(Payload::Prescribe { appointment_id: d.appointment_id, medication_id: d.medication_id, dosage: d.dosage })
            })?;
            Ok(respond(s, 201, |m| json!({ "prescription": m.subject_id().and_then(|id| m.state.prescriptions.get(&id)) })))
        }

        ("GET", ["medications"]) => view(g, req, now, View::Medications),
        ("POST", ["admin", "medications"]) => {
            let (session, _) = g.authorize(req, now, Op::AddMedication)?;
            let body = parse_body::<MedicationBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| Ok(Payload::AddMedication { name: d.name, stock: d.stock }))?;
            Ok(respond(s, 201, |m| json!({ "medication": m.subject_id().and_then(|id| m.state.medications.get(&id)) })))
        }
        ("PATCH", ["admin", "medications", id, "stock"]) => {
            let (session, _) = g.authorize(req, now, Op::AdjustStock)?;
            let medication_id: u64 = param(id, "medication id")?;
            let body = parse_body::<StockBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| Ok(Payload::AdjustStock { medication_id, delta: d.delta }))?;
            Ok(respond(s, 200, |m| json!({ "medication": m.state.medications.get(&medication_id) })))
        }

        ("GET", ["labdefs"]) => view(g, req, now, View::LabDefinitions),
        ("POST", ["admin", "labdefs"]) => {
            let (session, _) = g.authorize(req, now, Op::AddLabDefinition)?;
            let body = parse_body::<LabDefBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| {
                Ok(Payload::AddLabDefinition {
                    test_name: d.test_name,
                    parameters: d
                        .parameters
                        .into_iter()
                        .map(|p| LabParameter { name: p.name, unit: p.unit, ref_min: p.ref_min, ref_max: p.ref_max })
                        .collect(),
                })
            })?;
            Ok(respond(s, 201, |m| json!({ "labdef": m.subject_id().and_then(|id| m.state.lab_definitions.get(&id)) })))
        }
        ("POST", ["admin", "metric-ranges"]) => {
            let (session, _) = g.authorize(req, now, Op::SetMetricRange)?;
            let body = parse_body::<MetricRangeBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| {
                Ok(Payload::SetMetricRange {
                    metric: d.metric,
                    range: ReferenceRange { unit: d.unit, ref_min: d.ref_min, ref_max: d.ref_max },
                })
            })?;
            Ok(respond(s, 201, |_| json!({})))
        }
        ("POST", ["labresults"]) => {
            let (session, _) = g.authorize(req, now, Op::SubmitLabResult)?;
            let body = parse_body::<LabResultBody>(b)?;
            let doctor = session.address;
            let s = g.submit(doctor, body, now, |d, state| {
                let report = lab_report(state, doctor, d.patient, d.report, d.report_text)?;
                Ok(Payload::SubmitLabResult { patient: d.patient, test_id: d.test_id, values: d.values, report })
            })?;
            Ok(respond(s, 201, |m| json!({ "lab_result": m.subject_id().and_then(|id| m.state.lab_results.get(&id)) })))
        }
        ("POST", ["iot", "observations"]) => {
            let (session, _) = g.authorize(req, now, Op::RecordIoT)?;
            let body = parse_body::<IoTBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| {
                Ok(Payload::RecordIoT {
                    device_id: d.device_id,
                    patient: d.patient,
                    metric: d.metric,
                    value: d.value,
                    unit: d.unit,
                    observed_at: d.observed_at.unwrap_or(now),
                })
            })?;
            Ok(respond(s, 202, |m| {
                let obs = m.subject_id().and_then(|id| m.state.iot_observations.get(&id));
                json!({ "flag": obs.map(|o| o.flag), "observation": obs })
            }))
        }

        ("POST", ["access", "grants"]) => {
            let (session, _) = g.authorize(req, now, Op::GrantAccess)?;
            let body = parse_body::<GrantBody>(b)?;
            let s = g.submit(session.address, body, now, |d, _| {
                Ok(Payload::GrantAccess { grantee: d.grantee, scope: d.scope.unwrap_or(AccessScope::AllRecords) })
            })?;
            Ok(respond(s, 201, |m| json!({ "grant": m.subject_id().and_then(|id| m.state.grants.get(&id)) })))
        }
        ("DELETE", ["access", "grants", id]) => {
            let (session, _) = g.authorize(req, now, Op::RevokeAccess)?;
            let grant_id: u64 = param(id, "grant id")?;
            let body = parse_body::<Empty>(b)?;
            let s = g.submit(session.address, body, now, |_, _| Ok(Payload::RevokeAccess { grant_id }))?;
            Ok(respond(s, 200, |m| json!({ "grant": m.state.grants.get(&grant_id) })))
        }

        ("GET", ["admin", "export"]) => {
            let (_, state) = g.authorize(req, now, Op::ExportData)?;
            let kind: DatasetKind = query_param(&q, "dataset")?;
            let format: ExportFormat = query_param(&q, "format")?;
            let date = chrono::DateTime::from_timestamp_millis(now as i64).map(|t| t.date_naive()).unwrap_or_default();
            let filename = export_filename(kind, format, date);
            Ok(ApiResponse {
                status: 200,
                content_type: format.mime_type().to_string(),
                headers: vec![("Content-Disposition".into(), format!("attachment; filename=\"{filename}\""))],
                body: export(&Dataset::from_state(kind, &state), format),
            })
        }
        ("GET", ["admin", "audit"]) => view(g, req, now, View::AuditLog),

        (_, segs) if known_path(segs) => Err(ApiError::new(405, "MethodNotAllowed", format!("{method} not allowed here"))),
        _ => Err(ApiError::not_found()),
    }
}

fn known_path(segs: &[&str]) -> bool {
    matches!(
        segs,
        ["health"]
            | ["auth", "challenge" | "login" | "logout"]
            | ["users"]
            | ["admin", "users", _, "status"]
            | ["admin", "system", "start-date"]
            | ["profile"]
            | ["doctors"]
            | ["account", "nonce"]
            | ["tx", _]
            | ["slots"]
            | ["appointments"]
            | ["appointments", _]
            | ["doctor", "agenda" | "ereports"]
            | ["patient", "history"]
            | ["prescriptions"]
            | ["medications"]
            | ["admin", "medications"]
            | ["admin", "medications", _, "stock"]
            | ["labdefs"]
            | ["admin", "labdefs" | "metric-ranges" | "export" | "audit"]
            | ["labresults"]
            | ["iot", "observations"]
            | ["access", "grants"]
            | ["access", "grants", _]
    )
}

/// Uses the client-encrypted report, or encrypts `report_text` to the
/// patient with the submitting doctor as an extra reader.
fn lab_report(
    state: &EhrState,
    doctor: Address,
    patient: Address,
    report: Option<EncryptedRecord>,
    text: Option<String>,
) -> Result<EncryptedRecord, ApiError> {
    match (report, text) {
        (Some(r), None) => Ok(r),
        (None, Some(text)) => {
            let patient_key = state
                .public_key_of(&patient)
                .ok_or_else(|| ApiError::from(crate::ehr::Rejection::NotAPatient(patient)))?;
            let doctor_key = state.public_key_of(&doctor).expect("authorized caller is registered");
            Ok(encrypt_to(text.as_bytes(), patient_key, std::slice::from_ref(doctor_key)))
        }
        _ => Err(ApiError::bad_request("exactly one of `report` and `report_text` is required")),
    }
}
