//! Marginal distributional hypotheses, hypothesis classes with versioned
//! prompt templates, and the success criteria that decide whether an
//! empirical action distribution satisfies a hypothesis.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{expand_action_keys, ActionCategory, ActionLabeling};
use crate::experiment::AggregateTable;
use crate::stats::{chi2_gof, spearman_p_with, spearman_rho, Alternative, StatsError};
use crate::util::stable_seed;

/// Default significance level of both success criteria.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Lowest and highest persona levels.
pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 10;

const BUILTIN_HYPOTHESES: &str = include_str!("../data/builtin_hypotheses.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesisError {
    #[error("template slot {{{0}}} is not provided by the hypothesis")]
    MissingSlot(String),
    #[error("unterminated slot in template: {0:?}")]
    MalformedTemplate(String),
    #[error("duplicate hypothesis class id {0:?}")]
    DuplicateClassId(String),
    #[error("unknown hypothesis class {0:?}")]
    UnknownClass(String),
    #[error("class {class:?} has no template revision {revision}")]
    UnknownRevision { class: String, revision: u32 },
    #[error("invalid hypothesis {id}: {reason}")]
    InvalidHypothesis { id: String, reason: String },
    #[error("invalid class {id}: {reason}")]
    InvalidClass { id: String, reason: String },
    #[error("insufficient data for {hypothesis}: {reason}")]
    InsufficientData { hypothesis: String, reason: String },
    #[error("failed to parse hypothesis file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumEnd {
    Low,
    High,
}

impl SpectrumEnd {
    pub fn extreme_level(self) -> u8 {
        match self {
            SpectrumEnd::Low => MIN_LEVEL,
            SpectrumEnd::High => MAX_LEVEL,
        }
    }

    fn word(self) -> &'static str {
        match self {
            SpectrumEnd::Low => "low",
            SpectrumEnd::High => "high",
        }
    }
}

/// The functional relationship a hypothesis posits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Monotonic(Direction),
    Uniform(SpectrumEnd),
}

impl Relation {
    pub fn criterion(self) -> CriterionKind {
        match self {
            Relation::Monotonic(_) => CriterionKind::Monotonic,
            Relation::Uniform(_) => CriterionKind::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Monotonic,
    Uniform,
}

impl CriterionKind {
    /// Name of the underlying statistical test.
    pub fn test_name(self) -> &'static str {
        match self {
            CriterionKind::Monotonic => "Spearman",
            CriterionKind::Uniform => "Chi-squared",
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriterionKind::Monotonic => "monotonic",
            CriterionKind::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationStatus {
    #[default]
    Untested,
    Calibrated,
}

impl CalibrationStatus {
    /// Node annotation marker: `?` untested, `*` calibrated.
    pub fn marker(self) -> char {
        match self {
            CalibrationStatus::Untested => '?',
            CalibrationStatus::Calibrated => '*',
        }
    }
}

/// A marginal distributional hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MdHyp {
    pub id: String,
    pub class_id: String,
    pub characteristic: String,
    pub relation: Relation,
    pub behavior_short: String,
    pub behavior_long: String,
    /// Ordered, duplicate-free subset of the canonical actions.
    pub action_set: Vec<ActionCategory>,
    pub trend_variable: Option<String>,
    #[serde(default)]
    pub calibration_status: CalibrationStatus,
}

/// Human phrase for a characteristic id: underscores become spaces.
pub fn characteristic_phrase(id: &str) -> String {
    id.replace('_', " ")
}

impl MdHyp {
    /// Structural checks that do not need the class registry.
    pub fn check(&self) -> Result<(), HypothesisError> {
        let invalid = |reason: &str| HypothesisError::InvalidHypothesis {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.characteristic.trim().is_empty() {
            return Err(invalid("empty characteristic"));
        }
        if self.action_set.is_empty() {
            return Err(invalid("empty action set"));
        }
        let mut seen = self.action_set.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.action_set.len() {
            return Err(invalid("duplicate action in action set"));
        }
        Ok(())
    }

    /// Slot values this hypothesis provides under a labeling. `salt` selects
    /// the picked action deterministically.
    pub fn slots(&self, labeling: &ActionLabeling, salt: u64) -> BTreeMap<&'static str, String> {
        let mut slots = BTreeMap::new();
        slots.insert("characteristic", characteristic_phrase(&self.characteristic));
        let labels: Vec<&str> = self.action_set.iter().map(|a| labeling.category_label(*a)).collect();
        slots.insert("actions", labels.join(", "));
        let pick = stable_seed(&[self.id.as_bytes(), labeling.id().as_bytes(), &salt.to_le_bytes()]);
        slots.insert("picked_action", labels[(pick % labels.len() as u64) as usize].to_string());
        if !self.behavior_short.is_empty() {
            slots.insert("behavior_short", self.behavior_short.clone());
        }
        if !self.behavior_long.is_empty() {
            slots.insert("behavior_long", self.behavior_long.clone());
        }
        match self.relation {
            Relation::Monotonic(d) => {
                let word = match d {
                    Direction::Increasing => "more",
                    Direction::Decreasing => "less",
                };
                slots.insert("comparative", word.to_string());
            }
            Relation::Uniform(end) => {
                slots.insert("spectrum_end", end.word().to_string());
                slots.insert("extreme_level", end.extreme_level().to_string());
            }
        }
        slots
    }
}

/// A family of hypotheses sharing a relationship form, prompt template and
/// success criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    pub id: String,
    pub criterion: CriterionKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Template text indexed by revision.
    pub templates: Vec<String>,
    /// Revision confirmed as calibrated, if any.
    #[serde(default)]
    pub calibrated_revision: Option<u32>,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl HypothesisClass {
    pub fn template(&self, revision: u32) -> Result<&str, HypothesisError> {
        self.templates
            .get(revision as usize)
            .map(String::as_str)
            .ok_or_else(|| HypothesisError::UnknownRevision {
                class: self.id.clone(),
                revision,
            })
    }

    pub fn latest_revision(&self) -> u32 {
        self.templates.len().saturating_sub(1) as u32
    }

    /// Calibrated revision if known, else the latest one.
    pub fn default_revision(&self) -> u32 {
        self.calibrated_revision.unwrap_or_else(|| self.latest_revision())
    }

    fn check(&self) -> Result<(), HypothesisError> {
        let invalid = |reason: String| HypothesisError::InvalidClass {
            id: self.id.clone(),
            reason,
        };
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.templates.is_empty() {
            return Err(invalid("no templates".into()));
        }
        for t in &self.templates {
            template_slots(t)?;
        }
        if let Some(rev) = self.calibrated_revision {
            self.template(rev)?;
        }
        Ok(())
    }
}

/// Slot names referenced by a template, in order of appearance.
pub fn template_slots(template: &str) -> Result<Vec<&str>, HypothesisError> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| HypothesisError::MalformedTemplate(template.to_string()))?;
        out.push(&after[..close]);
        rest = &after[close + 1..];
    }
    Ok(out)
}

/// Substitutes `{name}` slots.
pub fn fill_template(template: &str, slots: &BTreeMap<&str, String>) -> Result<String, HypothesisError> {
    let mut out = String::with_capacity(template.len() + 128);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| HypothesisError::MalformedTemplate(template.to_string()))?;
        let name = &after[..close];
        let value = slots
            .get(name)
            .ok_or_else(|| HypothesisError::MissingSlot(name.to_string()))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Instantiates a class template revision with a hypothesis's slot values.
pub fn instantiate_template(
    class: &HypothesisClass,
    revision: u32,
    hyp: &MdHyp,
    labeling: &ActionLabeling,
) -> Result<String, HypothesisError> {
    instantiate_template_salted(class, revision, hyp, labeling, 0)
}

pub fn instantiate_template_salted(
    class: &HypothesisClass,
    revision: u32,
    hyp: &MdHyp,
    labeling: &ActionLabeling,
    salt: u64,
) -> Result<String, HypothesisError> {
    if hyp.class_id != class.id {
        return Err(HypothesisError::InvalidHypothesis {
            id: hyp.id.clone(),
            reason: format!("belongs to class {:?}, not {:?}", hyp.class_id, class.id),
        });
    }
    fill_template(class.template(revision)?, &hyp.slots(labeling, salt))
}

/// Success criterion for monotonic hypotheses at the default alpha.
pub fn t_mono(rho: f64, p_value: f64, direction: Direction) -> bool {
    t_mono_at(rho, p_value, direction, DEFAULT_ALPHA)
}

/// Satisfied when rho has the hypothesized sign and `p <= alpha`.
pub fn t_mono_at(rho: f64, p_value: f64, direction: Direction, alpha: f64) -> bool {
    let signed = match direction {
        Direction::Increasing => rho > 0.0,
        Direction::Decreasing => rho < 0.0,
    };
    signed && p_value <= alpha
}

/// Success criterion for uniform hypotheses at the default alpha.
pub fn t_uniform(p_value: f64) -> bool {
    t_uniform_at(p_value, DEFAULT_ALPHA)
}

/// Satisfied when the goodness-of-fit test does not reject: `p > alpha`.
pub fn t_uniform_at(p_value: f64, alpha: f64) -> bool {
    p_value > alpha
}

/// Knobs for [`ClassRegistry::evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Overrides every class's alpha when set.
    pub alpha: Option<f64>,
    /// Tail(s) of the Spearman p-value. One-sided modes follow the
    /// hypothesized direction.
    pub one_sided: bool,
    /// Number of levels at the spectrum end pooled for the uniform test.
    pub uniform_window: u8,
    /// Cells with a larger drop rate are excluded and flagged.
    pub max_drop_rate: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            alpha: None,
            one_sided: false,
            uniform_window: 1,
            max_drop_rate: 0.05,
        }
    }
}

/// Per-cell counts backing a verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    /// Persona level (monotonic) or action category (uniform).
    pub cell: String,
    pub count: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub hypothesis: String,
    pub labeling: String,
    pub criterion: CriterionKind,
    /// Spearman rho or the chi-squared statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub satisfied: bool,
    /// Levels (monotonic) or actions (uniform) entering the test.
    pub n_cells: usize,
    pub sample_counts: Vec<CellCount>,
    /// Levels excluded for exceeding the drop-rate ceiling.
    #[serde(default)]
    pub flagged_levels: Vec<u8>,
}

impl TestResult {
    pub fn is_flagged(&self) -> bool {
        !self.flagged_levels.is_empty()
    }
}

/// Registered hypothesis classes.
#[derive(Debug, Clone, Default)]
pub struct ClassRegistry {
    classes: BTreeMap<String, HypothesisClass>,
}

/// Handle returned by [`ClassRegistry::register`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHandle(pub String);

impl ClassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the built-in `mono` and `uniform` classes.
    pub fn with_builtins() -> Self {
        builtin_catalog().classes
    }

    pub fn register(&mut self, class: HypothesisClass) -> Result<ClassHandle, HypothesisError> {
        if self.classes.contains_key(&class.id) {
            return Err(HypothesisError::DuplicateClassId(class.id));
        }
        class.check()?;
        let handle = ClassHandle(class.id.clone());
        self.classes.insert(class.id.clone(), class);
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<&HypothesisClass, HypothesisError> {
        self.classes.get(id).ok_or_else(|| HypothesisError::UnknownClass(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &HypothesisClass> {
        self.classes.values()
    }

    /// Checks a hypothesis against its class: the class exists, the relation
    /// matches the criterion, and every template slot is provided.
    pub fn validate_hypothesis(&self, hyp: &MdHyp) -> Result<(), HypothesisError> {
        hyp.check()?;
        let class = self.get(&hyp.class_id)?;
        if class.criterion != hyp.relation.criterion() {
            return Err(HypothesisError::InvalidHypothesis {
                id: hyp.id.clone(),
                reason: format!(
                    "{} relation does not match class {:?} ({} criterion)",
                    hyp.relation.criterion(),
                    class.id,
                    class.criterion
                ),
            });
        }
        let probe = crate::environment::labeling_a();
        let slots = hyp.slots(&probe, 0);
        for t in &class.templates {
            for name in template_slots(t)? {
                if !slots.contains_key(name) {
                    return Err(HypothesisError::MissingSlot(name.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Evaluates a hypothesis's success criterion on one labeling's cells,
    /// dispatching on the class criterion.
    pub fn evaluate(
        &self,
        hyp: &MdHyp,
        table: &AggregateTable,
        labeling: &str,
        opts: &EvalOptions,
    ) -> Result<TestResult, HypothesisError> {
        let class = self.get(&hyp.class_id)?;
        let alpha = opts.alpha.unwrap_or(class.alpha);
        match (class.criterion, hyp.relation) {
            (CriterionKind::Monotonic, Relation::Monotonic(direction)) => {
                evaluate_monotonic(hyp, direction, table, labeling, opts, alpha)
            }
            (CriterionKind::Uniform, Relation::Uniform(end)) => evaluate_uniform(hyp, end, table, labeling, opts, alpha),
            _ => Err(HypothesisError::InvalidHypothesis {
                id: hyp.id.clone(),
                reason: format!("relation does not match class {:?}", class.id),
            }),
        }
    }
}

fn insufficient(hyp: &MdHyp, reason: String) -> HypothesisError {
    HypothesisError::InsufficientData {
        hypothesis: hyp.id.clone(),
        reason,
    }
}

fn evaluate_monotonic(
    hyp: &MdHyp,
    direction: Direction,
    table: &AggregateTable,
    labeling: &str,
    opts: &EvalOptions,
    alpha: f64,
) -> Result<TestResult, HypothesisError> {
    let mut levels = Vec::new();
    let mut probs = Vec::new();
    let mut counts = Vec::new();
    let mut flagged = Vec::new();
    for (level, cell) in table.levels(&hyp.characteristic, labeling) {
        if cell.drop_rate() > opts.max_drop_rate {
            flagged.push(level);
            continue;
        }
        let Some(p) = cell.probability_of(&hyp.action_set) else {
            continue;
        };
        levels.push(f64::from(level));
        probs.push(p);
        counts.push(CellCount {
            cell: level.to_string(),
            count: cell.count_of(&hyp.action_set),
            total: cell.valid(),
        });
    }
    if levels.len() < 3 {
        return Err(insufficient(
            hyp,
            format!(
                "monotonic test needs at least 3 persona levels of {} under labeling {labeling}, found {}",
                hyp.characteristic,
                levels.len()
            ),
        ));
    }
    let alternative = match (opts.one_sided, direction) {
        (false, _) => Alternative::TwoSided,
        (true, Direction::Increasing) => Alternative::Greater,
        (true, Direction::Decreasing) => Alternative::Less,
    };
    let (rho, p_value) = match spearman_rho(&levels, &probs) {
        Ok(rho) => {
            let p = spearman_p_with(rho, levels.len(), alternative).map_err(|e| insufficient(hyp, e.to_string()))?;
            (rho, p)
        }
        // a flat empirical curve carries no rank information
        Err(StatsError::DegenerateInput(_)) => (0.0, 1.0),
        Err(e) => return Err(insufficient(hyp, e.to_string())),
    };
    Ok(TestResult {
        hypothesis: hyp.id.clone(),
        labeling: labeling.to_string(),
        criterion: CriterionKind::Monotonic,
        statistic: rho,
        p_value,
        satisfied: t_mono_at(rho, p_value, direction, alpha),
        n_cells: levels.len(),
        sample_counts: counts,
        flagged_levels: flagged,
    })
}

fn evaluate_uniform(
    hyp: &MdHyp,
    end: SpectrumEnd,
    table: &AggregateTable,
    labeling: &str,
    opts: &EvalOptions,
    alpha: f64,
) -> Result<TestResult, HypothesisError> {
    let width = opts.uniform_window.max(1);
    let window = match end {
        SpectrumEnd::Low => MIN_LEVEL..=MIN_LEVEL.saturating_add(width - 1),
        SpectrumEnd::High => MAX_LEVEL.saturating_sub(width - 1)..=MAX_LEVEL,
    };
    let mut observed = vec![0u64; hyp.action_set.len()];
    let mut flagged = Vec::new();
    let mut any = false;
    for (level, cell) in table.levels(&hyp.characteristic, labeling) {
        if !window.contains(&level) {
            continue;
        }
        if cell.drop_rate() > opts.max_drop_rate {
            flagged.push(level);
            continue;
        }
        any = true;
        for (slot, action) in observed.iter_mut().zip(&hyp.action_set) {
            *slot += cell.count(*action);
        }
    }
    let total: u64 = observed.iter().sum();
    if !any || total < hyp.action_set.len() as u64 {
        return Err(insufficient(
            hyp,
            format!(
                "uniform test needs at least {} samples over the action set at level(s) {:?} under labeling {labeling}, found {total}",
                hyp.action_set.len(),
                window
            ),
        ));
    }
    let obs: Vec<f64> = observed.iter().map(|&c| c as f64).collect();
    let chi = chi2_gof(&obs, None).map_err(|e| insufficient(hyp, e.to_string()))?;
    Ok(TestResult {
        hypothesis: hyp.id.clone(),
        labeling: labeling.to_string(),
        criterion: CriterionKind::Uniform,
        statistic: chi.statistic,
        p_value: chi.p_value,
        satisfied: t_uniform_at(chi.p_value, alpha),
        n_cells: hyp.action_set.len(),
        sample_counts: hyp
            .action_set
            .iter()
            .zip(&observed)
            .map(|(a, &c)| CellCount {
                cell: a.to_string(),
                count: c,
                total,
            })
            .collect(),
        flagged_levels: flagged,
    })
}

/// Calibration status keyed by (class, template revision, hypothesis).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationLedger {
    entries: BTreeMap<String, CalibrationStatus>,
}

impl CalibrationLedger {
    fn key(class: &str, revision: u32, hyp: &str) -> String {
        format!("{class}@{revision}/{hyp}")
    }

    pub fn record(&mut self, class: &str, revision: u32, hyp: &str, status: CalibrationStatus) {
        self.entries.insert(Self::key(class, revision, hyp), status);
    }

    pub fn status(&self, class: &str, revision: u32, hyp: &str) -> CalibrationStatus {
        self.entries
            .get(&Self::key(class, revision, hyp))
            .copied()
            .unwrap_or_default()
    }
}

// ---------------------------------------------------------------------------
// File schema

/// One `[[hypothesis]]` entry of a hypothesis file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSpec {
    pub id: String,
    pub class: String,
    pub characteristic: String,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub spectrum_end: Option<SpectrumEnd>,
    #[serde(default)]
    pub behavior_short: String,
    #[serde(default)]
    pub behavior_long: String,
    /// Canonical keys (`"F1-X"`, `"SUBMIT"`, `"EXIT"`) or the groups
    /// `"@productive"` and `"@measurements"`.
    pub actions: Vec<String>,
    #[serde(default)]
    pub trend_variable: Option<String>,
    #[serde(default)]
    pub calibration_status: CalibrationStatus,
}

impl HypothesisSpec {
    pub fn resolve(&self) -> Result<MdHyp, HypothesisError> {
        let invalid = |reason: String| HypothesisError::InvalidHypothesis {
            id: self.id.clone(),
            reason,
        };
        let relation = match (self.direction, self.spectrum_end) {
            (Some(d), None) => Relation::Monotonic(d),
            (None, Some(e)) => Relation::Uniform(e),
            _ => return Err(invalid("exactly one of direction / spectrum_end must be set".into())),
        };
        let action_set = expand_action_keys(&self.actions).map_err(|e| invalid(e.to_string()))?;
        let hyp = MdHyp {
            id: self.id.clone(),
            class_id: self.class.clone(),
            characteristic: self.characteristic.clone(),
            relation,
            behavior_short: self.behavior_short.clone(),
            behavior_long: self.behavior_long.clone(),
            action_set,
            trend_variable: self.trend_variable.clone(),
            calibration_status: self.calibration_status,
        };
        hyp.check()?;
        Ok(hyp)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisFile {
    #[serde(default)]
    pub class: Vec<HypothesisClass>,
    #[serde(default)]
    pub hypothesis: Vec<HypothesisSpec>,
}

impl HypothesisFile {
    pub fn parse(text: &str) -> Result<Self, HypothesisError> {
        toml::from_str(text).map_err(|e| HypothesisError::Parse(e.to_string()))
    }
}

/// Classes plus hypotheses by id.
#[derive(Debug, Clone, Default)]
pub struct HypothesisCatalog {
    pub classes: ClassRegistry,
    pub hypotheses: BTreeMap<String, MdHyp>,
}

impl HypothesisCatalog {
    /// Adds a file's classes and hypotheses; ids must be new.
    pub fn extend(&mut self, file: &HypothesisFile) -> Result<(), HypothesisError> {
        for class in &file.class {
            self.classes.register(class.clone())?;
        }
        for spec in &file.hypothesis {
            let hyp = spec.resolve()?;
            if self.hypotheses.contains_key(&hyp.id) {
                return Err(HypothesisError::InvalidHypothesis {
                    id: hyp.id,
                    reason: "duplicate hypothesis id".into(),
                });
            }
            self.hypotheses.insert(hyp.id.clone(), hyp);
        }
        for hyp in self.hypotheses.values() {
            self.classes.validate_hypothesis(hyp)?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&MdHyp> {
        self.hypotheses.get(id)
    }
}

/// The built-in classes (`mono`, `uniform`) and hypotheses H_G1, H_P1, H_P2, H_G2.
pub fn builtin_catalog() -> HypothesisCatalog {
    let file = HypothesisFile::parse(BUILTIN_HYPOTHESES).expect("built-in hypothesis file parses");
    let mut catalog = HypothesisCatalog::default();
    catalog.extend(&file).expect("built-in hypotheses are valid");
    catalog
}

/// A built-in hypothesis by id.
pub fn builtin_hypothesis(id: &str) -> Option<MdHyp> {
    builtin_catalog().hypotheses.remove(id)
}
