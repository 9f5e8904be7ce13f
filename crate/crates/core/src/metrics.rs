//! Scoring: gate confusion taxonomy, HSR, IP, AIF, per-type Type/SR, TSR
//! and RE.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKind};
use crate::engine::{EpisodeLog, EpisodeStatus};
use crate::score::{decision, Confidence, Gamma};

pub const DEFAULT_CLICK_TOLERANCE: f64 = 0.14;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("screen dimensions required to compare {0} coordinates")]
    MissingScreenDims(ActionKind),
    #[error("no episode logs to score")]
    EmptyLogs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GateClass {
    /// Both scores above γ: no intervention needed, none requested.
    Tp,
    /// Model above γ, requirement not: a missed intervention.
    Fp,
    /// Both at or below γ: intervention correctly requested.
    Tn,
    /// Model at or below γ, requirement above: an unnecessary intervention.
    Fn,
}

pub fn classify_step(pred: Confidence, gt: Confidence, gamma: Gamma) -> GateClass {
    match (decision(pred, gamma), decision(gt, gamma)) {
        (true, true) => GateClass::Tp,
        (true, false) => GateClass::Fp,
        (false, false) => GateClass::Tn,
        (false, true) => GateClass::Fn,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, class: GateClass) {
        match class {
            GateClass::Tp => self.tp += 1,
            GateClass::Fp => self.fp += 1,
            GateClass::Tn => self.tn += 1,
            GateClass::Fn => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `(TP + TN) / (TP + TN + FP + FN)`; `None` when there are no steps.
    pub fn hsr(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// `TN / (TN + FN)`; `None` when no intervention was requested.
    pub fn ip(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSize {
    pub width: u32,
    pub height: u32,
}

impl ScreenSize {
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

impl std::str::FromStr for ScreenSize {
    type Err = String;

    /// `WIDTHxHEIGHT`, e.g. `1080x2400`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once('x').ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let width: u32 = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
        let height: u32 = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
        if width == 0 || height == 0 {
            return Err(format!("screen dimensions must be positive, got {s:?}"));
        }
        Ok(ScreenSize { width, height })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMatch {
    pub type_match: bool,
    pub exact: bool,
}

/// How predicted actions are compared with ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRule {
    pub screen: Option<ScreenSize>,
    /// Maximum click distance as a fraction of the screen diagonal.
    pub click_tolerance: f64,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            screen: None,
            click_tolerance: DEFAULT_CLICK_TOLERANCE,
        }
    }
}

impl MatchRule {
    pub fn with_screen(screen: ScreenSize) -> Self {
        MatchRule {
            screen: Some(screen),
            ..MatchRule::default()
        }
    }

    pub fn action_match(&self, pred: &Action, gt: &Action) -> Result<ActionMatch, MetricsError> {
        action_match(pred, gt, self.screen, self.click_tolerance)
    }
}

/// Kind equality plus argument equality: points within `tolerance` of the
/// screen diagonal, TYPE text trimmed and case-folded, OPEN_APP names
/// case-folded, SCROLL directions equal.
pub fn action_match(
    pred: &Action,
    gt: &Action,
    screen: Option<ScreenSize>,
    tolerance: f64,
) -> Result<ActionMatch, MetricsError> {
    if pred.kind() != gt.kind() {
        return Ok(ActionMatch {
            type_match: false,
            exact: false,
        });
    }
    let exact = match (pred, gt) {
        (Action::Click(p), Action::Click(g)) | (Action::LongPress(p), Action::LongPress(g)) => {
            let screen = screen.ok_or(MetricsError::MissingScreenDims(gt.kind()))?;
            let dx = p.x as f64 - g.x as f64;
            let dy = p.y as f64 - g.y as f64;
            dx.hypot(dy) / screen.diagonal() <= tolerance
        }
        (Action::Type(p), Action::Type(g)) => p.trim().to_lowercase() == g.trim().to_lowercase(),
        (Action::OpenApp(p), Action::OpenApp(g)) => p.to_lowercase() == g.to_lowercase(),
        (Action::Scroll(p), Action::Scroll(g)) => p == g,
        _ => true,
    };
    Ok(ActionMatch {
        type_match: true,
        exact,
    })
}

/// Human step count over agent step count.
pub fn relative_efficiency(human_steps: u64, executed_steps: u64) -> Option<f64> {
    ratio(human_steps, executed_steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KindCounts {
    pub steps: u64,
    pub type_matches: u64,
    pub exact_matches: u64,
}

impl KindCounts {
    fn add(&mut self, m: ActionMatch) {
        self.steps += 1;
        self.type_matches += m.type_match as u64;
        self.exact_matches += m.exact as u64;
    }

    fn merge(&mut self, other: &KindCounts) {
        self.steps += other.steps;
        self.type_matches += other.type_matches;
        self.exact_matches += other.exact_matches;
    }

    pub fn type_acc(&self) -> Option<f64> {
        ratio(self.type_matches, self.steps)
    }

    pub fn sr(&self) -> Option<f64> {
        ratio(self.exact_matches, self.steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindRates {
    pub steps: u64,
    pub type_matches: u64,
    pub exact_matches: u64,
    pub type_acc: Option<f64>,
    pub sr: Option<f64>,
}

impl From<KindCounts> for KindRates {
    fn from(c: KindCounts) -> Self {
        KindRates {
            steps: c.steps,
            type_matches: c.type_matches,
            exact_matches: c.exact_matches,
            type_acc: c.type_acc(),
            sr: c.sr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub gamma: Gamma,
    pub episodes: u64,
    pub steps: u64,
    pub interventions: u64,
    pub confusion: ConfusionCounts,
    pub hsr: Option<f64>,
    pub ip: Option<f64>,
    pub aif: f64,
    pub type_acc: Option<f64>,
    pub sr: Option<f64>,
    /// All steps exact and the episode ended on a correct COMPLETE/IMPOSSIBLE.
    pub tsr: f64,
    /// All steps exact, regardless of how the episode ended.
    pub tsr_all_steps: f64,
    pub re: Option<f64>,
    /// Keyed by the ground-truth action kind.
    pub per_kind: BTreeMap<ActionKind, KindRates>,
}

/// Aggregates episode logs. The executed action `a_t*` is scored against
/// ground truth; the agent's own confidence drives the gate taxonomy.
pub fn compute_report(
    logs: &[EpisodeLog],
    gamma: Gamma,
    human_steps: Option<u64>,
    rule: &MatchRule,
) -> Result<MetricsReport, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::EmptyLogs);
    }
    let mut confusion = ConfusionCounts::default();
    let mut per_kind: BTreeMap<ActionKind, KindCounts> = BTreeMap::new();
    let mut total = KindCounts::default();
    let mut interventions = 0u64;
    let mut successes = 0u64;
    let mut all_step_successes = 0u64;

    for log in logs {
        let mut all_exact = !log.steps.is_empty();
        for step in &log.steps {
            confusion.add(classify_step(step.decision.confidence, step.gt_confidence, gamma));
            let m = rule.action_match(&step.executed_action, &step.gt_action)?;
            per_kind.entry(step.gt_action.kind()).or_default().add(m);
            total.add(m);
            interventions += step.intervened as u64;
            all_exact &= m.exact;
        }
        let terminal_ok = matches!(log.status, EpisodeStatus::Completed | EpisodeStatus::Impossible)
            && log.steps.last().is_some_and(|s| s.executed_action.is_terminal());
        all_step_successes += all_exact as u64;
        successes += (all_exact && terminal_ok) as u64;
    }

    let episodes = logs.len() as u64;
    Ok(MetricsReport {
        gamma,
        episodes,
        steps: total.steps,
        interventions,
        confusion,
        hsr: confusion.hsr(),
        ip: confusion.ip(),
        aif: interventions as f64 / episodes as f64,
        type_acc: total.type_acc(),
        sr: total.sr(),
        tsr: successes as f64 / episodes as f64,
        tsr_all_steps: all_step_successes as f64 / episodes as f64,
        re: human_steps.and_then(|h| relative_efficiency(h, total.steps)),
        per_kind: per_kind.into_iter().map(|(k, c)| (k, c.into())).collect(),
    })
}

/// Column groups of the comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TableGroup {
    Scroll,
    Press,
    Stop,
    Click,
    Type,
    Other,
}

impl TableGroup {
    pub fn of(kind: ActionKind) -> TableGroup {
        match kind {
            ActionKind::Scroll => TableGroup::Scroll,
            ActionKind::PressBack | ActionKind::PressHome | ActionKind::Enter => TableGroup::Press,
            ActionKind::Complete | ActionKind::Impossible => TableGroup::Stop,
            ActionKind::Click => TableGroup::Click,
            ActionKind::Type => TableGroup::Type,
            ActionKind::OpenApp | ActionKind::Wait | ActionKind::LongPress => TableGroup::Other,
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0))
}

/// Fixed-width text table: SCROLL, PRESS, STOP, CLICK, TYPE, TOTAL
/// (Type and SR each), then TSR. Values in percent.
pub fn render_table(report: &MetricsReport) -> String {
    let mut groups: BTreeMap<TableGroup, KindCounts> = BTreeMap::new();
    let mut total = KindCounts::default();
    for (kind, rates) in &report.per_kind {
        let counts = KindCounts {
            steps: rates.steps,
            type_matches: rates.type_matches,
            exact_matches: rates.exact_matches,
        };
        groups.entry(TableGroup::of(*kind)).or_default().merge(&counts);
        total.merge(&counts);
    }
    let columns = [
        ("SCROLL", groups.get(&TableGroup::Scroll).copied()),
        ("PRESS", groups.get(&TableGroup::Press).copied()),
        ("STOP", groups.get(&TableGroup::Stop).copied()),
        ("CLICK", groups.get(&TableGroup::Click).copied()),
        ("TYPE", groups.get(&TableGroup::Type).copied()),
        ("TOTAL", Some(total)),
    ];

    let mut top = String::new();
    let mut sub = String::new();
    let mut row = String::new();
    for (name, counts) in columns {
        let _ = write!(top, "{name:^17}|");
        let _ = write!(sub, "{:>8} {:>8}|", "Type", "SR");
        let c = counts.unwrap_or_default();
        let _ = write!(row, "{:>8} {:>8}|", pct(c.type_acc()), pct(c.sr()));
    }
    let _ = write!(top, "{:>8}", "");
    let _ = write!(sub, "{:>8}", "TSR");
    let _ = write!(row, "{:>8}", pct(Some(report.tsr)));
    format!("{top}\n{sub}\n{row}\n")
}
