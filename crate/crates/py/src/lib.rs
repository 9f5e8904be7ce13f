//! Python bindings: `import confgate`.

use confgate_core::action::{parse_action as parse, Action as CoreAction};
use confgate_core::engine::{
    Agent, EpisodeConfig, EpisodeLog, EpisodeOutcome, Intervener, OracleAgent, OracleIntervener, ReplayMode,
    ScriptedAgent,
};
use confgate_core::forge::{build_dpo_dataset, RecordedPredictor, ForgeConfig};
use confgate_core::loss::{self, PreferencePair, Response, SftExample};
use confgate_core::metrics::{self, GateClass, MatchRule, ScreenSize};
use confgate_core::retrieval::{HashedTokenEncoder, RetrievalIndex};
use confgate_core::score::{Confidence, Gamma};
use confgate_core::sweep::{gamma_sweep, run_dataset_adaptive, run_dataset_automated, RunSettings, SweepRow};
use confgate_core::trajectory::{load_dataset_file, Dataset as CoreDataset};
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

create_exception!(confgate, ActionError, PyValueError, "Malformed action string.");

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn confidence(v: i64) -> PyResult<Confidence> {
    Confidence::new(v).map_err(value_err)
}

fn gamma(v: i64) -> PyResult<Gamma> {
    Gamma::new(v).map_err(value_err)
}

/// Serializes through JSON into plain Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: for<'de> serde::Deserialize<'de>>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// One action of the grammar.
#[pyclass(frozen, eq, hash, from_py_object, module = "confgate")]
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Action {
    inner: CoreAction,
}

#[pymethods]
impl Action {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        parse_action(text)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().verb()
    }

    #[getter]
    fn point(&self) -> Option<(u32, u32)> {
        self.inner.point().map(|p| (p.x, p.y))
    }

    #[getter]
    fn text(&self) -> Option<String> {
        self.inner.text().map(str::to_string)
    }

    #[getter]
    fn direction(&self) -> Option<&'static str> {
        self.inner.direction().map(|d| d.as_str())
    }

    fn is_terminal(&self) -> bool {
        self.inner.is_terminal()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Action({:?})", self.inner.to_string())
    }
}

#[pyfunction]
fn parse_action(text: &str) -> PyResult<Action> {
    parse(text)
        .map(|inner| Action { inner })
        .map_err(|e| ActionError::new_err(e.to_string()))
}

#[pyfunction]
fn serialize_action(action: &Action) -> String {
    action.inner.serialize()
}

/// A loaded trajectory dataset.
#[pyclass(frozen, module = "confgate")]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_dataset_file(path)
            .map(|inner| Dataset { inner })
            .map_err(|e| match e {
                confgate_core::trajectory::DatasetError::Io(io) => PyIOError::new_err(format!("{path}: {io}")),
                other => value_err(other),
            })
    }

    /// `(trajectories, screens, goals)`.
    fn stats(&self) -> (u64, u64, u64) {
        let s = self.inner.stats();
        (s.trajectory_count as u64, s.screen_count as u64, s.goal_count as u64)
    }

    #[getter]
    fn trajectory_ids(&self) -> Vec<String> {
        self.inner.trajectories.iter().map(|t| t.trajectory_id.clone()).collect()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim
    }

    fn steps<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.steps().collect::<Vec<_>>())
    }

    fn __len__(&self) -> usize {
        self.inner.steps().count()
    }
}

#[pyfunction]
fn decision(confidence_: i64, gamma_: i64) -> PyResult<bool> {
    Ok(confgate_core::score::decision(confidence(confidence_)?, gamma(gamma_)?))
}

#[pyfunction]
fn farthest_score(c_sft: i64, gamma_: i64) -> PyResult<u8> {
    Ok(confgate_core::forge::farthest_score(confidence(c_sft)?, gamma(gamma_)?).get())
}

/// `"TP"`, `"FP"`, `"TN"` or `"FN"`.
#[pyfunction]
fn classify_step(pred: i64, gt: i64, gamma_: i64) -> PyResult<&'static str> {
    Ok(match metrics::classify_step(confidence(pred)?, confidence(gt)?, gamma(gamma_)?) {
        GateClass::Tp => "TP",
        GateClass::Fp => "FP",
        GateClass::Tn => "TN",
        GateClass::Fn => "FN",
    })
}

#[pyfunction]
fn relative_efficiency(human_steps: u64, executed_steps: u64) -> Option<f64> {
    metrics::relative_efficiency(human_steps, executed_steps)
}

fn rule(screen: (u32, u32), click_tolerance: f64) -> PyResult<MatchRule> {
    if screen.0 == 0 || screen.1 == 0 {
        return Err(value_err("screen dimensions must be positive"));
    }
    Ok(MatchRule {
        screen: Some(ScreenSize {
            width: screen.0,
            height: screen.1,
        }),
        click_tolerance,
    })
}

fn make_agent(spec: &str, dataset: &CoreDataset) -> PyResult<Box<dyn Agent>> {
    match spec {
        "recorded" => Ok(Box::new(ScriptedAgent::from_dataset(dataset))),
        "oracle" => Ok(Box::new(OracleAgent::from_dataset(dataset))),
        other => Err(value_err(format!("agent must be 'recorded' or 'oracle', got {other:?}"))),
    }
}

fn settings(step_cap: usize, strict: bool, rule: MatchRule) -> PyResult<RunSettings> {
    if step_cap == 0 {
        return Err(value_err("step_cap must be positive"));
    }
    Ok(RunSettings {
        config: EpisodeConfig { step_cap },
        mode: if strict { ReplayMode::Strict } else { ReplayMode::TeacherForcing },
        rule,
    })
}

/// Runs one episode per trajectory; `gamma=None` is the automated loop.
/// Interventions are answered with ground truth.
#[pyfunction]
#[pyo3(signature = (dataset, gamma=None, agent="recorded", step_cap=10, strict=false, screen=(1080, 2400), click_tolerance=0.14))]
fn run<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    gamma: Option<i64>,
    agent: &str,
    step_cap: usize,
    strict: bool,
    screen: (u32, u32),
    click_tolerance: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let settings = settings(step_cap, strict, rule(screen, click_tolerance)?)?;
    let mut a = make_agent(agent, &dataset.inner)?;
    let logs: Vec<EpisodeLog> = match gamma {
        None => run_dataset_automated(&dataset.inner, &mut a, &settings),
        Some(g) => {
            let mut i: Box<dyn Intervener> = Box::new(OracleIntervener);
            run_dataset_adaptive(&dataset.inner, &mut a, &mut i, self::gamma(g)?, &settings)
                .into_iter()
                .map(EpisodeOutcome::into_log)
                .collect()
        }
    };
    to_py(py, &logs)
}

/// Metrics over episode logs as returned by `run`.
#[pyfunction]
#[pyo3(signature = (logs, gamma, human_steps=None, screen=(1080, 2400), click_tolerance=0.14))]
fn report<'py>(
    py: Python<'py>,
    logs: &Bound<'py, PyAny>,
    gamma: i64,
    human_steps: Option<u64>,
    screen: (u32, u32),
    click_tolerance: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let logs: Vec<EpisodeLog> = from_py(py, logs)?;
    let r = metrics::compute_report(&logs, self::gamma(gamma)?, human_steps, &rule(screen, click_tolerance)?)
        .map_err(value_err)?;
    to_py(py, &r)
}

/// The γ sensitivity sweep with the oracle intervener.
#[pyfunction]
#[pyo3(signature = (dataset, gammas=vec![0, 1, 2, 3, 4, 5], agent="recorded", step_cap=10, screen=(1080, 2400)))]
fn sweep<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    gammas: Vec<i64>,
    agent: &str,
    step_cap: usize,
    screen: (u32, u32),
) -> PyResult<Bound<'py, PyAny>> {
    let gammas = gammas.into_iter().map(gamma).collect::<PyResult<Vec<_>>>()?;
    let settings = settings(step_cap, false, rule(screen, metrics::DEFAULT_CLICK_TOLERANCE)?)?;
    make_agent(agent, &dataset.inner)?;
    let results = gamma_sweep(
        &dataset.inner,
        gammas,
        || make_agent(agent, &dataset.inner).expect("validated above"),
        || OracleIntervener,
        &settings,
    )
    .map_err(value_err)?;
    let rows: Vec<SweepRow> = results.iter().map(|(r, _)| SweepRow::from(r)).collect();
    to_py(py, &rows)
}

/// Preference triplets from the dataset's recorded predictions.
#[pyfunction]
#[pyo3(signature = (dataset, gamma, k=5, lam=0.5, include_self=true, dedupe=true))]
fn forge<'py>(
    py: Python<'py>,
    dataset: &Dataset,
    gamma: i64,
    k: usize,
    lam: f64,
    include_self: bool,
    dedupe: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = ForgeConfig::new(self::gamma(gamma)?, lam, k).map_err(value_err)?;
    cfg.include_self = include_self;
    cfg.dedupe = dedupe;
    let index = RetrievalIndex::from_dataset(&dataset.inner, &HashedTokenEncoder::default()).map_err(value_err)?;
    let out = build_dpo_dataset(dataset.inner.steps(), &mut RecordedPredictor, &index, &cfg).map_err(value_err)?;
    to_py(py, &out.triplets)
}

/// Tabular policy: one logit row per (context, position).
#[pyclass(skip_from_py_object, module = "confgate")]
#[derive(Clone)]
pub struct ToyPolicy {
    inner: loss::ToyPolicy,
}

#[pymethods]
impl ToyPolicy {
    #[staticmethod]
    fn uniform(contexts: usize, positions: usize, vocab_size: usize) -> Self {
        ToyPolicy {
            inner: loss::ToyPolicy::uniform(contexts, positions, vocab_size),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (contexts, positions, vocab_size, scale=1.0, seed=0))]
    fn random(contexts: usize, positions: usize, vocab_size: usize, scale: f64, seed: u64) -> Self {
        ToyPolicy {
            inner: loss::ToyPolicy::random(contexts, positions, vocab_size, scale, seed),
        }
    }

    #[staticmethod]
    fn from_logits(contexts: usize, positions: usize, vocab_size: usize, logits: Vec<f64>) -> PyResult<Self> {
        loss::ToyPolicy::from_logits(contexts, positions, vocab_size, logits)
            .map(|inner| ToyPolicy { inner })
            .ok_or_else(|| value_err("logit count does not match the shape"))
    }

    #[getter]
    fn logits(&self) -> Vec<f64> {
        self.inner.logits().to_vec()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.contexts(), self.inner.positions(), self.inner.vocab_size())
    }

    fn probs(&self, context: usize, position: usize) -> PyResult<Vec<f64>> {
        if context >= self.inner.contexts() || position >= self.inner.positions() {
            return Err(value_err("context or position out of range"));
        }
        Ok(self.inner.probs(context, position))
    }
}

type PyResponse = (Vec<usize>, Vec<usize>);

fn response((action, score): PyResponse) -> Response {
    Response { action, score }
}

/// Mean negative joint log-likelihood; `batch` holds
/// `(context, action_tokens, score_tokens)`.
#[pyfunction]
fn sft_loss(policy: &ToyPolicy, batch: Vec<(usize, Vec<usize>, Vec<usize>)>) -> PyResult<f64> {
    let batch: Vec<SftExample> = batch
        .into_iter()
        .map(|(context, a, s)| SftExample {
            context,
            response: response((a, s)),
        })
        .collect();
    loss::sft_loss(&policy.inner, &batch).map_err(value_err)
}

/// Mean DPO loss; `pairs` holds `(context, (chosen_action, chosen_score),
/// (rejected_action, rejected_score))` token lists.
#[pyfunction]
fn dpo_loss(theta: &ToyPolicy, reference: &ToyPolicy, pairs: Vec<(usize, PyResponse, PyResponse)>, beta: f64) -> PyResult<f64> {
    let pairs: Vec<PreferencePair> = pairs
        .into_iter()
        .map(|(context, c, r)| PreferencePair {
            context,
            chosen: response(c),
            rejected: response(r),
        })
        .collect();
    loss::dpo_loss(&theta.inner, &reference.inner, &pairs, beta).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (count=100, seed=0, beta=0.1, h=1e-5, tolerance=1e-4))]
fn gradient_check<'py>(
    py: Python<'py>,
    count: usize,
    seed: u64,
    beta: f64,
    h: f64,
    tolerance: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let report = loss::run_gradient_check(count, seed, beta, h, tolerance).map_err(value_err)?;
    to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "confgate")]
fn confgate_native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ActionError", m.py().get_type::<ActionError>())?;
    m.add_class::<Action>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<ToyPolicy>()?;
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_action, m)?)?;
    m.add_function(wrap_pyfunction!(decision, m)?)?;
    m.add_function(wrap_pyfunction!(farthest_score, m)?)?;
    m.add_function(wrap_pyfunction!(classify_step, m)?)?;
    m.add_function(wrap_pyfunction!(relative_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(forge, m)?)?;
    m.add_function(wrap_pyfunction!(sft_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dpo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
