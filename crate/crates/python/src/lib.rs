//! Python bindings. Structured values cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::path::PathBuf;

use mediator_core::llm::{Gateway, GatewayConfig, MockScript, ScriptedMock};
use mediator_core::metrics::{self, Alternative, MetricsInput, PairedSample};
use mediator_core::scenario::{self, ReplayOptions, Scenario};
use mediator_core::{
    Clock, ConversationKind, DraftId, Error, GoalId, MediatorConfig, MeetingId, QuestionnaireResponse, ReflectionId,
    SessionId, TeamId, UserId, VoiceActivityEvent,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(inclusion_mediator, MediatorError, PyException);
create_exception!(inclusion_mediator, ValidationError, MediatorError);
create_exception!(inclusion_mediator, NotFoundError, MediatorError);
create_exception!(inclusion_mediator, ConflictError, MediatorError);
create_exception!(inclusion_mediator, StateError, MediatorError);
create_exception!(inclusion_mediator, AuthorizationError, MediatorError);
create_exception!(inclusion_mediator, UndefinedError, MediatorError);
create_exception!(inclusion_mediator, DegenerateSampleError, MediatorError);
create_exception!(inclusion_mediator, GatewayError, MediatorError);
create_exception!(inclusion_mediator, StorageError, MediatorError);

fn py_err(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::Validation(_) => ValidationError::new_err(msg),
        Error::NotFound { .. } => NotFoundError::new_err(msg),
        Error::Conflict(_) => ConflictError::new_err(msg),
        Error::State { .. } => StateError::new_err(msg),
        Error::Authorization(_) => AuthorizationError::new_err(msg),
        Error::Undefined(_) => UndefinedError::new_err(msg),
        Error::DegenerateSample(_) => DegenerateSampleError::new_err(msg),
        Error::GatewayUnavailable(_) | Error::Provider { .. } => GatewayError::new_err(msg),
        Error::Storage(_) | Error::CorruptLog(_) => StorageError::new_err(msg),
    }
}

type CoreResult<T> = mediator_core::Result<T>;

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| StorageError::new_err(e.to_string()))?;
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let json = PyModule::import(py, "json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| ValidationError::new_err(format!("{what}: {e}")))
}

/// Parses an enum from its wire name, e.g. `"TREATMENT"` or `"IN_MEETING"`.
fn wire_enum<T: DeserializeOwned>(value: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_ascii_uppercase()))
        .map_err(|_| ValidationError::new_err(format!("unknown {what} {value:?}")))
}

fn alternative(value: &str) -> PyResult<Alternative> {
    match value.to_ascii_lowercase().as_str() {
        "greater" | "treatment_greater" => Ok(Alternative::TreatmentGreater),
        "less" | "treatment_less" => Ok(Alternative::TreatmentLess),
        other => Err(ValidationError::new_err(format!(
            "alternative must be 'greater' or 'less', got {other:?}"
        ))),
    }
}

fn ok<T: Serialize>(py: Python<'_>, r: CoreResult<T>) -> PyResult<Py<PyAny>> {
    to_py(py, &r.map_err(py_err)?)
}

/// Gini coefficient of non-negative values.
#[pyfunction]
fn gini(values: Vec<f64>) -> PyResult<f64> {
    metrics::gini(&values).map_err(py_err)
}

/// Deviation of one participant's speaking time from an equal share.
#[pyfunction]
fn fair_share_deviation(duration: f64, total: f64, n: usize) -> PyResult<f64> {
    metrics::fair_share_deviation(duration, total, n).map_err(py_err)
}

/// One-tailed paired signed-rank test of treatment against control.
#[pyfunction]
#[pyo3(signature = (control, treatment, alternative = "greater"))]
fn wilcoxon(py: Python<'_>, control: Vec<f64>, treatment: Vec<f64>, alternative: &str) -> PyResult<Py<PyAny>> {
    let alt = self::alternative(alternative)?;
    let sample = PairedSample::unlabeled(control, treatment).map_err(py_err)?;
    ok(py, metrics::wilcoxon_one_tailed(&sample, alt))
}

#[pyfunction]
fn rank_biserial(v: f64, n_effective: usize) -> PyResult<f64> {
    metrics::rank_biserial(v, n_effective).map_err(py_err)
}

/// Benjamini-Hochberg adjusted p-values, in input order.
#[pyfunction]
fn bh_fdr_adjust(p_values: Vec<f64>) -> PyResult<Vec<f64>> {
    metrics::bh_fdr_adjust(&p_values).map_err(py_err)
}

/// Condition comparison over finalized meeting stats (a list, or a dict with
/// `meetings` and optional `paired_samples`).
#[pyfunction]
#[pyo3(signature = (stats, alternative = "less", fdr = false))]
fn build_report(py: Python<'_>, stats: &Bound<'_, PyAny>, alternative: &str, fdr: bool) -> PyResult<Py<PyAny>> {
    let json = PyModule::import(py, "json")?;
    let text: String = json.call_method1("dumps", (stats,))?.extract()?;
    let input = MetricsInput::from_json(&text).map_err(py_err)?;
    to_py(py, &metrics::build_report(&input, self::alternative(alternative)?, fdr))
}

/// The bundled two-condition reference scenario.
#[pyfunction]
fn reference_scenario(py: Python<'_>) -> PyResult<Py<PyAny>> {
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (scenario::REFERENCE_SCENARIO,))?.unbind())
}

/// Runs a scenario (the reference one by default) against its scripted mock.
#[pyfunction]
#[pyo3(signature = (scenario = None, data_dir = None, crash_after = None))]
fn replay_study(
    py: Python<'_>,
    scenario: Option<&Bound<'_, PyAny>>,
    data_dir: Option<PathBuf>,
    crash_after: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let sc = match scenario {
        None => Scenario::reference(),
        Some(obj) => {
            let json = PyModule::import(py, "json")?;
            let text: String = json.call_method1("dumps", (obj,))?.extract()?;
            Scenario::from_json(&text).map_err(py_err)?
        }
    };
    let opts = ReplayOptions {
        data_dir,
        crash_after,
        snapshot_every: None,
    };
    let report = py.detach(|| scenario::replay_study(&sc, &opts));
    ok(py, report)
}

/// A mediator backed by a scripted mock provider.
#[pyclass(name = "Mediator")]
struct PyMediator {
    inner: mediator_core::Mediator,
}

#[pymethods]
impl PyMediator {
    /// `mock_script` is the script document (dict). With `data_dir` the
    /// event log there is replayed and appended to. `step_ms` selects a
    /// deterministic clock advancing by that much per event.
    #[new]
    #[pyo3(signature = (mock_script, data_dir = None, step_ms = None, control_message = None))]
    fn new(
        py: Python<'_>,
        mock_script: &Bound<'_, PyAny>,
        data_dir: Option<PathBuf>,
        step_ms: Option<i64>,
        control_message: Option<String>,
    ) -> PyResult<Self> {
        let script: MockScript = from_py(py, mock_script, "mock script")?;
        let gateway = Gateway::new(std::sync::Arc::new(ScriptedMock::new(script)), GatewayConfig::default());
        let mut config = MediatorConfig {
            clock: match step_ms {
                Some(step_ms) => Clock::Logical { step_ms },
                None => Clock::System,
            },
            ..MediatorConfig::default()
        };
        if let Some(msg) = control_message {
            config.control_message = msg;
        }
        let inner = match data_dir {
            Some(dir) => mediator_core::Mediator::open(&dir, gateway, config).map_err(py_err)?,
            None => mediator_core::Mediator::in_memory(gateway, config),
        };
        Ok(Self { inner })
    }

    /// Number of events recorded so far.
    #[getter]
    fn seq(&self) -> u64 {
        self.inner.state().seq
    }

    #[getter]
    fn control_message(&self) -> String {
        self.inner.control_message().to_string()
    }

    /// The whole replicated state.
    fn state(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.state())
    }

    /// Returns `{"team": ..., "users": [...]}`.
    fn create_team(&mut self, py: Python<'_>, name: &str, members: Vec<String>) -> PyResult<Py<PyAny>> {
        let team = self.inner.create_team(name, &members).map_err(py_err)?;
        let users: Vec<_> = team
            .member_ids
            .iter()
            .map(|u| self.inner.user(u).cloned())
            .collect::<CoreResult<_>>()
            .map_err(py_err)?;
        to_py(py, &serde_json::json!({"team": team, "users": users}))
    }

    fn schedule_meeting(&mut self, py: Python<'_>, team_id: &str, condition: &str, cycle_index: u32) -> PyResult<Py<PyAny>> {
        let condition = wire_enum(condition, "condition")?;
        ok(py, self.inner.schedule_meeting(&TeamId::from(team_id), condition, cycle_index))
    }

    fn meeting(&self, py: Python<'_>, meeting_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.meeting(&MeetingId::from(meeting_id)))
    }

    #[pyo3(signature = (meeting_id, at_ms = None))]
    fn open_meeting(&mut self, py: Python<'_>, meeting_id: &str, at_ms: Option<i64>) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.open_meeting(&MeetingId::from(meeting_id), at_ms))
    }

    #[pyo3(signature = (meeting_id, at_ms = None))]
    fn close_meeting(&mut self, py: Python<'_>, meeting_id: &str, at_ms: Option<i64>) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.close_meeting(&MeetingId::from(meeting_id), at_ms))
    }

    fn acknowledge_control(&mut self, py: Python<'_>, user_id: &str, meeting_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.acknowledge_control(&UserId::from(user_id), &MeetingId::from(meeting_id)))
    }

    #[pyo3(signature = (user_id, meeting_id, phase = None))]
    fn advance_phase(&mut self, py: Python<'_>, user_id: &str, meeting_id: &str, phase: Option<&str>) -> PyResult<Py<PyAny>> {
        let phase = phase.map(|p| wire_enum(p, "phase")).transpose()?;
        ok(py, self.inner.advance_phase(&UserId::from(user_id), &MeetingId::from(meeting_id), phase))
    }

    /// Returns False for an exact duplicate, which is acknowledged without change.
    fn ingest_event(&mut self, meeting_id: &str, user_id: &str, kind: &str, ts_ms: u64) -> PyResult<bool> {
        let ev = VoiceActivityEvent {
            meeting_id: MeetingId::from(meeting_id),
            user_id: UserId::from(user_id),
            kind: wire_enum(kind, "event kind")?,
            ts_ms,
        };
        Ok(self.inner.ingest_event(&ev).map_err(py_err)?.recorded)
    }

    fn meeting_stats(&self, py: Python<'_>, meeting_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.finalize_meeting_stats(&MeetingId::from(meeting_id)))
    }

    /// `kind` is "solicitation" or "ihp".
    fn start_conversation(&mut self, py: Python<'_>, kind: &str, user_id: &str, meeting_id: &str) -> PyResult<Py<PyAny>> {
        let (u, m) = (UserId::from(user_id), MeetingId::from(meeting_id));
        let r = match wire_enum::<ConversationKind>(kind, "conversation kind")? {
            ConversationKind::Solicitation => self.inner.start_solicitation(&u, &m),
            ConversationKind::Ihp => self.inner.start_ihp(&u, &m),
        };
        ok(py, r)
    }

    fn send_message(&mut self, py: Python<'_>, session_id: &str, text: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.handle_user_message(&SessionId::from(session_id), text))
    }

    fn session(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.session(&SessionId::from(session_id)))
    }

    fn transcript_jsonl(&self, session_id: &str) -> PyResult<String> {
        Ok(self.inner.session(&SessionId::from(session_id)).map_err(py_err)?.transcript_jsonl())
    }

    fn approve_feedback(&mut self, py: Python<'_>, draft_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.approve_feedback(&DraftId::from(draft_id)))
    }

    fn discard_feedback(&mut self, py: Python<'_>, draft_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.discard_feedback(&DraftId::from(draft_id)))
    }

    fn adopt_goal(&mut self, py: Python<'_>, goal_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.adopt_goal(&GoalId::from(goal_id)))
    }

    fn approve_reflection(&mut self, py: Python<'_>, reflection_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.approve_reflection(&ReflectionId::from(reflection_id)))
    }

    fn inbox(&self, py: Python<'_>, user_id: &str, meeting_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.inbox(&UserId::from(user_id), &MeetingId::from(meeting_id)))
    }

    fn outgoing(&self, py: Python<'_>, user_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.outgoing(&UserId::from(user_id)))
    }

    fn goal_panel(&self, py: Python<'_>, user_id: &str, meeting_id: &str) -> PyResult<Py<PyAny>> {
        ok(py, self.inner.goal_panel(&UserId::from(user_id), &MeetingId::from(meeting_id)))
    }

    /// `response` has `user_id`, `instrument`, `labels`, `values` and optionally `meeting_id`.
    fn record_questionnaire(&mut self, py: Python<'_>, response: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let r: QuestionnaireResponse = from_py(py, response, "questionnaire response")?;
        ok(py, self.inner.record_questionnaire(r))
    }
}

#[pymodule]
pub fn inclusion_mediator(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_function(wrap_pyfunction!(gini, m)?)?;
    m.add_function(wrap_pyfunction!(fair_share_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(rank_biserial, m)?)?;
    m.add_function(wrap_pyfunction!(bh_fdr_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(build_report, m)?)?;
    m.add_function(wrap_pyfunction!(reference_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(replay_study, m)?)?;
    m.add_class::<PyMediator>()?;
    m.add("MediatorError", py.get_type::<MediatorError>())?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("NotFoundError", py.get_type::<NotFoundError>())?;
    m.add("ConflictError", py.get_type::<ConflictError>())?;
    m.add("StateError", py.get_type::<StateError>())?;
    m.add("AuthorizationError", py.get_type::<AuthorizationError>())?;
    m.add("UndefinedError", py.get_type::<UndefinedError>())?;
    m.add("DegenerateSampleError", py.get_type::<DegenerateSampleError>())?;
    m.add("GatewayError", py.get_type::<GatewayError>())?;
    m.add("StorageError", py.get_type::<StorageError>())?;
    Ok(())
}
