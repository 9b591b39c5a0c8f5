//! The orbit-measurement task: key points, environment state, the 12-way
//! canonical action space and its interchangeable surface labelings.
//!
//! All statistics operate on [`ActionCategory`]; labelings are only a view
//! used when talking to a generator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Length of the stipulated class period, in minutes.
pub const CLASS_PERIOD_MINUTES: u32 = 40;

/// Number of canonical action categories.
pub const NUM_ACTIONS: usize = 12;

/// Number of measurable point pairs, C(5, 2).
pub const NUM_PAIRS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvironmentError {
    #[error("unrecognized action: {0:?}")]
    UnrecognizedAction(String),
    #[error("invalid state constraint: {0}")]
    InvalidConstraint(String),
    #[error("invalid labeling {id}: {reason}")]
    InvalidLabeling { id: String, reason: String },
    #[error("unknown key point {0:?}")]
    UnknownKeyPoint(String),
    #[error("invalid point pair {0:?}")]
    InvalidPair(String),
}

/// A symbolic point of the planetary system.
///
/// Declaration order is the canonical order used to normalize pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyPoint {
    /// Aphelion.
    A,
    F1,
    F2,
    /// Perihelion.
    P,
    /// Fixed point on the orbit.
    X,
}

impl KeyPoint {
    pub const ALL: [KeyPoint; 5] = [KeyPoint::A, KeyPoint::F1, KeyPoint::F2, KeyPoint::P, KeyPoint::X];

    pub fn symbol(self) -> &'static str {
        match self {
            KeyPoint::A => "A",
            KeyPoint::F1 => "F1",
            KeyPoint::F2 => "F2",
            KeyPoint::P => "P",
            KeyPoint::X => "X",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KeyPoint::A => "aphelion",
            KeyPoint::F1 => "focus 1",
            KeyPoint::F2 => "focus 2",
            KeyPoint::P => "perihelion",
            KeyPoint::X => "fixed point on the orbit",
        }
    }
}

impl FromStr for KeyPoint {
    type Err = EnvironmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(KeyPoint::A),
            "F1" => Ok(KeyPoint::F1),
            "F2" => Ok(KeyPoint::F2),
            "P" => Ok(KeyPoint::P),
            "X" => Ok(KeyPoint::X),
            _ => Err(EnvironmentError::UnknownKeyPoint(s.to_string())),
        }
    }
}

/// Unordered pair of distinct key points. `(A, F1)` and `(F1, A)` are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointPair {
    lo: KeyPoint,
    hi: KeyPoint,
}

/// Pairs in canonical action order (matches the first ten rows of labeling A).
const PAIR_ORDER: [(KeyPoint, KeyPoint); NUM_PAIRS] = [
    (KeyPoint::F1, KeyPoint::X),
    (KeyPoint::A, KeyPoint::F1),
    (KeyPoint::A, KeyPoint::P),
    (KeyPoint::A, KeyPoint::F2),
    (KeyPoint::A, KeyPoint::X),
    (KeyPoint::F1, KeyPoint::P),
    (KeyPoint::F1, KeyPoint::F2),
    (KeyPoint::F2, KeyPoint::P),
    (KeyPoint::F2, KeyPoint::X),
    (KeyPoint::P, KeyPoint::X),
];

impl PointPair {
    /// Returns `None` when both points are the same.
    pub fn new(a: KeyPoint, b: KeyPoint) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Self { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// All ten pairs in canonical order.
    pub fn all() -> [PointPair; NUM_PAIRS] {
        PAIR_ORDER.map(|(a, b)| PointPair { lo: a, hi: b })
    }

    /// Position in [`PointPair::all`].
    pub fn index(self) -> usize {
        PAIR_ORDER
            .iter()
            .position(|&(a, b)| a == self.lo && b == self.hi)
            .expect("every normalized pair is listed")
    }

    pub fn points(self) -> (KeyPoint, KeyPoint) {
        (self.lo, self.hi)
    }
}

impl fmt::Display for PointPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo.symbol(), self.hi.symbol())
    }
}

impl FromStr for PointPair {
    type Err = EnvironmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| EnvironmentError::InvalidPair(s.to_string()))?;
        PointPair::new(a.parse()?, b.parse()?).ok_or_else(|| EnvironmentError::InvalidPair(s.to_string()))
    }
}

impl Serialize for PointPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PointPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One of the 12 canonical action categories. Submit is a single category
/// regardless of its arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionCategory {
    Measure(PointPair),
    Submit,
    Exit,
}

impl ActionCategory {
    /// Position in [`canonical_actions`].
    pub fn index(self) -> usize {
        match self {
            ActionCategory::Measure(p) => p.index(),
            ActionCategory::Submit => NUM_PAIRS,
            ActionCategory::Exit => NUM_PAIRS + 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        canonical_actions().get(i).copied()
    }

    pub fn is_measurement(self) -> bool {
        matches!(self, ActionCategory::Measure(_))
    }
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionCategory::Measure(p) => p.fmt(f),
            ActionCategory::Submit => f.write_str("SUBMIT"),
            ActionCategory::Exit => f.write_str("EXIT"),
        }
    }
}

impl FromStr for ActionCategory {
    type Err = EnvironmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SUBMIT" => Ok(ActionCategory::Submit),
            "EXIT" => Ok(ActionCategory::Exit),
            other => other
                .parse::<PointPair>()
                .map(ActionCategory::Measure)
                .map_err(|_| EnvironmentError::UnrecognizedAction(s.to_string())),
        }
    }
}

impl Serialize for ActionCategory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A concrete learner action. Submit carries its three expressions verbatim;
/// they are never evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Measure { pair: PointPair },
    Submit { expressions: [String; 3] },
    Exit,
}

impl Action {
    pub fn measure(a: KeyPoint, b: KeyPoint) -> Self {
        Action::Measure {
            pair: PointPair::new(a, b).expect("distinct key points"),
        }
    }

    pub fn category(&self) -> ActionCategory {
        match self {
            Action::Measure { pair } => ActionCategory::Measure(*pair),
            Action::Submit { .. } => ActionCategory::Submit,
            Action::Exit => ActionCategory::Exit,
        }
    }

    /// A representative action for a category. Submit gets placeholder expressions.
    pub fn from_category(category: ActionCategory) -> Self {
        match category {
            ActionCategory::Measure(pair) => Action::Measure { pair },
            ActionCategory::Submit => Action::Submit {
                expressions: ["x".into(), "y".into(), "z".into()],
            },
            ActionCategory::Exit => Action::Exit,
        }
    }
}

/// The 12 canonical categories: ten measurements, submit, exit.
pub fn canonical_actions() -> [ActionCategory; NUM_ACTIONS] {
    let pairs = PointPair::all();
    let mut out = [ActionCategory::Exit; NUM_ACTIONS];
    for (slot, pair) in out.iter_mut().zip(pairs) {
        *slot = ActionCategory::Measure(pair);
    }
    out[NUM_PAIRS] = ActionCategory::Submit;
    out
}

/// The six measurements useful for checking that the orbit is an ellipse,
/// in the order they are listed for the productive-measurement hypothesis.
pub fn productive_measurement_set() -> [ActionCategory; 6] {
    use KeyPoint::*;
    [(F1, X), (F2, X), (F1, P), (F2, P), (A, F1), (A, F2)]
        .map(|(a, b)| ActionCategory::Measure(PointPair::new(a, b).expect("distinct")))
}

/// All ten measurement categories in canonical order.
pub fn measurement_actions() -> [ActionCategory; NUM_PAIRS] {
    PointPair::all().map(ActionCategory::Measure)
}

/// Expands action keys into categories, deduplicated in first-seen order.
/// Besides canonical keys (`"F1-X"`, `"SUBMIT"`, `"EXIT"`) the groups
/// `"@productive"`, `"@measurements"` and `"@all"` are accepted.
pub fn expand_action_keys<S: AsRef<str>>(keys: &[S]) -> Result<Vec<ActionCategory>, EnvironmentError> {
    let mut out: Vec<ActionCategory> = Vec::new();
    for key in keys {
        let expanded: Vec<ActionCategory> = match key.as_ref().trim() {
            "@productive" => productive_measurement_set().to_vec(),
            "@measurements" => measurement_actions().to_vec(),
            "@all" => canonical_actions().to_vec(),
            k => vec![k.parse()?],
        };
        for a in expanded {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    Ok(out)
}

/// A bijective surface vocabulary over the canonical categories.
///
/// The submit label must end in `(...)`; the argument slot is filled with
/// the submitted expressions when rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLabeling {
    id: String,
    labels: Vec<String>,
}

const SUBMIT_SLOT: &str = "(...)";

fn normalize_label(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_uppercase)
        .collect()
}

impl ActionLabeling {
    /// Builds a labeling from labels in canonical order.
    pub fn new(id: impl Into<String>, labels: Vec<String>) -> Result<Self, EnvironmentError> {
        let id = id.into();
        let invalid = |reason: String| EnvironmentError::InvalidLabeling {
            id: id.clone(),
            reason,
        };
        if labels.len() != NUM_ACTIONS {
            return Err(invalid(format!("expected {NUM_ACTIONS} labels, got {}", labels.len())));
        }
        let submit = &labels[ActionCategory::Submit.index()];
        if !submit.ends_with(SUBMIT_SLOT) || submit.len() == SUBMIT_SLOT.len() {
            return Err(invalid(format!("submit label {submit:?} must be NAME(...)")));
        }
        let mut seen = BTreeMap::new();
        for (i, label) in labels.iter().enumerate() {
            let key = normalize_label(label);
            if key.is_empty() {
                return Err(invalid(format!("empty label at position {i}")));
            }
            if let Some(prev) = seen.insert(key, i) {
                return Err(invalid(format!("label {label:?} used for positions {prev} and {i}")));
            }
        }
        Ok(Self { id, labels })
    }

    /// Builds a labeling from a canonical-key map (`"F1-X"`, `"SUBMIT"`, `"EXIT"`).
    pub fn from_map(id: impl Into<String>, map: &BTreeMap<String, String>) -> Result<Self, EnvironmentError> {
        let id = id.into();
        let mut labels = vec![String::new(); NUM_ACTIONS];
        for (key, label) in map {
            let cat: ActionCategory = key.parse().map_err(|_| EnvironmentError::InvalidLabeling {
                id: id.clone(),
                reason: format!("unknown canonical action {key:?}"),
            })?;
            labels[cat.index()] = label.clone();
        }
        Self::new(id, labels)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Label for a category; Submit keeps its `(...)` placeholder.
    pub fn category_label(&self, category: ActionCategory) -> &str {
        &self.labels[category.index()]
    }

    fn submit_prefix(&self) -> &str {
        let label = self.category_label(ActionCategory::Submit);
        &label[..label.len() - SUBMIT_SLOT.len()]
    }

    /// Surface string for an action; Submit renders its expressions in the slot.
    pub fn surface_label(&self, action: &Action) -> String {
        match action {
            Action::Submit { expressions } => format!("{}({})", self.submit_prefix(), expressions.join(", ")),
            other => self.category_label(other.category()).to_string(),
        }
    }

    /// Inverse of [`ActionLabeling::surface_label`]; case-insensitive and
    /// whitespace-tolerant.
    pub fn parse_surface(&self, label: &str) -> Result<Action, EnvironmentError> {
        let key = normalize_label(label);
        for cat in canonical_actions() {
            if cat != ActionCategory::Submit && normalize_label(self.category_label(cat)) == key {
                return Ok(Action::from_category(cat));
            }
        }
        let prefix = normalize_label(self.submit_prefix());
        if key.starts_with(&prefix) && key[prefix.len()..].starts_with('(') && key.ends_with(')') {
            if let Some(expressions) = submit_arguments(label) {
                return Ok(Action::Submit { expressions });
            }
        }
        Err(EnvironmentError::UnrecognizedAction(label.to_string()))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Splits `NAME(a, b, c)` into its three top-level arguments, verbatim up to
/// surrounding whitespace.
fn submit_arguments(label: &str) -> Option<[String; 3]> {
    let open = label.find('(')?;
    let close = label.rfind(')')?;
    let inner = &label[open + 1..close];
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                args.push(inner[start..i].trim().to_string());
                start = i + 1;
            }
            _ => {}
        }
    }
    args.push(inner[start..].trim().to_string());
    if args.iter().any(String::is_empty) {
        return None;
    }
    args.try_into().ok()
}

fn builtin(id: &str, labels: [&str; NUM_ACTIONS]) -> ActionLabeling {
    ActionLabeling::new(id, labels.iter().map(|s| s.to_string()).collect()).expect("built-in labeling is bijective")
}

/// Labeling A: `MEASURE-F1-X` ... `EXIT`.
pub fn labeling_a() -> ActionLabeling {
    builtin(
        "A",
        [
            "MEASURE-F1-X",
            "MEASURE-A-F1",
            "MEASURE-A-P",
            "MEASURE-A-F2",
            "MEASURE-A-X",
            "MEASURE-F1-P",
            "MEASURE-F1-F2",
            "MEASURE-F2-P",
            "MEASURE-F2-X",
            "MEASURE-P-X",
            "SUBMIT(...)",
            "EXIT",
        ],
    )
}

/// Labeling B: reversed point order, `QUIT` for exit.
pub fn labeling_b() -> ActionLabeling {
    builtin(
        "B",
        [
            "MEASURE-X-F1",
            "MEASURE-F1-A",
            "MEASURE-P-A",
            "MEASURE-F2-A",
            "MEASURE-X-A",
            "MEASURE-P-F1",
            "MEASURE-F2-F1",
            "MEASURE-P-F2",
            "MEASURE-X-F2",
            "MEASURE-X-P",
            "SUBMIT(...)",
            "QUIT",
        ],
    )
}

/// Labeling C: `CALC(..)` function style. The fixed point is written `o` in
/// some labels and `x` in others; reproduced as-is.
pub fn labeling_c() -> ActionLabeling {
    builtin(
        "C",
        [
            "CALC(f1, o)",
            "CALC(a, f1)",
            "CALC(a, p)",
            "CALC(a, f2)",
            "CALC(a, o)",
            "CALC(f1, p)",
            "CALC(f1, f2)",
            "CALC(f2, p)",
            "CALC(f2, x)",
            "CALC(p, x)",
            "SUBMIT-SOLN(...)",
            "QUIT",
        ],
    )
}

pub fn builtin_labelings() -> Vec<ActionLabeling> {
    vec![labeling_a(), labeling_b(), labeling_c()]
}

/// Environment state seen by the learner.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub measured: [bool; NUM_PAIRS],
    pub num_submissions: u32,
    pub minutes_elapsed: u32,
}

impl Default for EnvState {
    fn default() -> Self {
        Self {
            measured: [false; NUM_PAIRS],
            num_submissions: 0,
            minutes_elapsed: 0,
        }
    }
}

impl EnvState {
    pub fn is_measured(&self, pair: PointPair) -> bool {
        self.measured[pair.index()]
    }

    pub fn set_measured(&mut self, pair: PointPair, value: bool) {
        self.measured[pair.index()] = value;
    }

    pub fn num_measured(&self) -> u32 {
        self.measured.iter().filter(|&&m| m).count() as u32
    }

    pub fn value_of(&self, variable: StateVariable) -> f64 {
        match variable {
            StateVariable::MeasurementsMade => f64::from(self.num_measured()),
            StateVariable::Submissions => f64::from(self.num_submissions),
            StateVariable::MinutesElapsed => f64::from(self.minutes_elapsed),
            StateVariable::Measured(pair) => f64::from(u8::from(self.is_measured(pair))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EnvStateRepr {
    measured: Vec<PointPair>,
    num_submissions: u32,
    minutes_elapsed: u32,
}

impl Serialize for EnvState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EnvStateRepr {
            measured: PointPair::all().into_iter().filter(|p| self.is_measured(*p)).collect(),
            num_submissions: self.num_submissions,
            minutes_elapsed: self.minutes_elapsed,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EnvState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = EnvStateRepr::deserialize(d)?;
        if repr.minutes_elapsed > CLASS_PERIOD_MINUTES {
            return Err(serde::de::Error::custom(format!(
                "minutes_elapsed {} exceeds the {CLASS_PERIOD_MINUTES}-minute period",
                repr.minutes_elapsed
            )));
        }
        let mut state = EnvState {
            num_submissions: repr.num_submissions,
            minutes_elapsed: repr.minutes_elapsed,
            ..EnvState::default()
        };
        for pair in repr.measured {
            state.set_measured(pair, true);
        }
        Ok(state)
    }
}

/// A scalar view of the state usable as a policy covariate or trend variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateVariable {
    MeasurementsMade,
    Submissions,
    MinutesElapsed,
    Measured(PointPair),
}

impl StateVariable {
    /// Maps the natural-language names used in hypothesis text.
    pub fn from_phrase(phrase: &str) -> Option<Self> {
        match phrase.trim().to_ascii_lowercase().as_str() {
            "number of measurements" | "measurements" | "measurements_made" => Some(StateVariable::MeasurementsMade),
            "number of submissions" | "submissions" | "num_submissions" => Some(StateVariable::Submissions),
            "time elapsed" | "minutes elapsed" | "number of minutes elapsed" | "minutes_elapsed" => {
                Some(StateVariable::MinutesElapsed)
            }
            other => other
                .strip_prefix("measured:")
                .and_then(|p| p.parse().ok())
                .map(StateVariable::Measured),
        }
    }
}

impl fmt::Display for StateVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateVariable::MeasurementsMade => f.write_str("measurements_made"),
            StateVariable::Submissions => f.write_str("num_submissions"),
            StateVariable::MinutesElapsed => f.write_str("minutes_elapsed"),
            StateVariable::Measured(p) => write!(f, "measured:{p}"),
        }
    }
}

impl Serialize for StateVariable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateVariable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        StateVariable::from_phrase(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown state variable {s:?}")))
    }
}

/// Domains of the integer state variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateDomain {
    pub max_minutes: u32,
    pub max_submissions: u32,
}

impl Default for StateDomain {
    fn default() -> Self {
        Self {
            max_minutes: CLASS_PERIOD_MINUTES,
            max_submissions: 10,
        }
    }
}

/// Optional per-field restrictions on sampled states. Ranges are inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConstraints {
    #[serde(default)]
    pub minutes_elapsed: Option<(u32, u32)>,
    #[serde(default)]
    pub num_submissions: Option<(u32, u32)>,
    /// Pairs whose measured flag is forced.
    #[serde(default)]
    pub measured: BTreeMap<PointPair, bool>,
}

fn check_range(name: &str, range: Option<(u32, u32)>, max: u32) -> Result<(u32, u32), EnvironmentError> {
    let (lo, hi) = range.unwrap_or((0, max));
    if lo > hi {
        return Err(EnvironmentError::InvalidConstraint(format!("{name}: empty range [{lo}, {hi}]")));
    }
    if hi > max {
        return Err(EnvironmentError::InvalidConstraint(format!(
            "{name}: [{lo}, {hi}] exceeds domain [0, {max}]"
        )));
    }
    Ok((lo, hi))
}

/// Draws `count` states uniformly and independently per field from the
/// default domain. Pure in `(count, seed, constraints)`.
pub fn sample_states(
    count: usize,
    seed: u64,
    constraints: Option<&StateConstraints>,
) -> Result<Vec<EnvState>, EnvironmentError> {
    sample_states_in(&StateDomain::default(), count, seed, constraints)
}

pub fn sample_states_in(
    domain: &StateDomain,
    count: usize,
    seed: u64,
    constraints: Option<&StateConstraints>,
) -> Result<Vec<EnvState>, EnvironmentError> {
    if count == 0 {
        return Err(EnvironmentError::InvalidConstraint("count must be at least 1".into()));
    }
    if domain.max_minutes > CLASS_PERIOD_MINUTES {
        return Err(EnvironmentError::InvalidConstraint(format!(
            "minutes domain exceeds the {CLASS_PERIOD_MINUTES}-minute period"
        )));
    }
    let default = StateConstraints::default();
    let c = constraints.unwrap_or(&default);
    let minutes = check_range("minutes_elapsed", c.minutes_elapsed, domain.max_minutes)?;
    let submissions = check_range("num_submissions", c.num_submissions, domain.max_submissions)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..count)
        .map(|_| {
            let mut state = EnvState::default();
            for pair in PointPair::all() {
                let value = match c.measured.get(&pair) {
                    Some(&forced) => forced,
                    None => rng.random_bool(0.5),
                };
                state.set_measured(pair, value);
            }
            state.num_submissions = rng.random_range(submissions.0..=submissions.1);
            state.minutes_elapsed = rng.random_range(minutes.0..=minutes.1);
            state
        })
        .collect();
    Ok(states)
}

/// Deterministic textual description of a state for the simulation prompt.
pub fn render_state(state: &EnvState) -> String {
    let mut out = String::from("Current state of the activity:\n");
    out.push_str("Distances measured so far:\n");
    for pair in PointPair::all() {
        let (a, b) = pair.points();
        let status = if state.is_measured(pair) { "done" } else { "not done" };
        out.push_str(&format!("- {pair} ({} to {}): {status}\n", a.name(), b.name()));
    }
    out.push_str(&format!("Solution submissions so far: {}\n", state.num_submissions));
    out.push_str(&format!(
        "Minutes elapsed: {} of {CLASS_PERIOD_MINUTES}",
        state.minutes_elapsed
    ));
    out
}

/// Result of applying an action in trajectory mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub state: EnvState,
    pub terminal: bool,
}

/// Applies an action. Time is a sampled variable, so it is left untouched.
pub fn transition(state: &EnvState, action: &Action) -> Transition {
    let mut next = state.clone();
    match action {
        Action::Measure { pair } => next.set_measured(*pair, true),
        Action::Submit { .. } => next.num_submissions += 1,
        Action::Exit => {
            return Transition { state: next, terminal: true };
        }
    }
    Transition { state: next, terminal: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use KeyPoint::*;

    #[test]
    fn canonical_actions_has_twelve_fixed_entries() {
        let a = canonical_actions();
        assert_eq!(a.len(), 12);
        assert!(a.contains(&ActionCategory::Measure(PointPair::new(A, P).unwrap())));
        assert_eq!(a, canonical_actions());
        for (i, c) in a.iter().enumerate() {
            assert_eq!(c.index(), i);
        }
    }

    #[test]
    fn pairs_are_unordered() {
        assert_eq!(PointPair::new(A, F1), PointPair::new(F1, A));
        assert!(PointPair::new(X, X).is_none());
        assert_eq!("f1-a".parse::<PointPair>().unwrap(), PointPair::new(A, F1).unwrap());
        let mut all = PointPair::all().to_vec();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn surface_labels_match_tables() {
        let f1x = Action::measure(F1, X);
        assert_eq!(labeling_a().surface_label(&f1x), "MEASURE-F1-X");
        assert_eq!(labeling_b().surface_label(&Action::Exit), "QUIT");
        assert_eq!(labeling_c().surface_label(&f1x), "CALC(f1, o)");
        let submit = Action::Submit {
            expressions: ["f1-a + f2-a".into(), "f1-p + f2-p".into(), "f1-x + f2-x".into()],
        };
        assert_eq!(
            labeling_c().surface_label(&submit),
            "SUBMIT-SOLN(f1-a + f2-a, f1-p + f2-p, f1-x + f2-x)"
        );
    }

    #[test]
    fn parse_surface_examples() {
        assert_eq!(labeling_b().parse_surface("measure-x-f1").unwrap(), Action::measure(F1, X));
        assert_eq!(labeling_c().parse_surface("QUIT").unwrap(), Action::Exit);
        assert_eq!(labeling_c().parse_surface("  calc( F1 ,o ) ").unwrap(), Action::measure(F1, X));
        assert!(matches!(
            labeling_a().parse_surface("FLY-TO-MOON"),
            Err(EnvironmentError::UnrecognizedAction(_))
        ));
        // labels from another labeling are not accepted
        assert!(labeling_a().parse_surface("QUIT").is_err());
    }

    #[test]
    fn submit_arguments_are_verbatim() {
        let parsed = labeling_a().parse_surface("SUBMIT((f1-a + f2-a), f1-p+f2-p, 2*f1-x)").unwrap();
        assert_eq!(
            parsed,
            Action::Submit {
                expressions: ["(f1-a + f2-a)".into(), "f1-p+f2-p".into(), "2*f1-x".into()]
            }
        );
        assert!(labeling_a().parse_surface("SUBMIT(a, b)").is_err());
        assert!(labeling_a().parse_surface("SUBMIT-SOLN(a, b, c)").is_err());
    }

    #[test]
    fn labeling_rejects_duplicates() {
        let mut labels: Vec<String> = labeling_a().labels().to_vec();
        labels[1] = "measure-f1-x".into();
        assert!(ActionLabeling::new("bad", labels).is_err());
    }

    #[test]
    fn sampling_shapes_and_constraints() {
        let states = sample_states(100, 42, None).unwrap();
        assert_eq!(states.len(), 100);
        assert!(states.iter().all(|s| s.minutes_elapsed <= 40));

        let c = StateConstraints {
            minutes_elapsed: Some((0, 0)),
            ..Default::default()
        };
        assert!(sample_states(5, 7, Some(&c)).unwrap().iter().all(|s| s.minutes_elapsed == 0));

        let states = sample_states(1000, 9, None).unwrap();
        let ap = PointPair::new(A, P).unwrap();
        let frac = states.iter().filter(|s| s.is_measured(ap)).count() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&frac), "{frac}");

        assert_eq!(sample_states(20, 3, None).unwrap(), sample_states(20, 3, None).unwrap());
    }

    #[test]
    fn sampling_rejects_bad_constraints() {
        let empty = StateConstraints {
            minutes_elapsed: Some((10, 5)),
            ..Default::default()
        };
        assert!(matches!(sample_states(1, 0, Some(&empty)), Err(EnvironmentError::InvalidConstraint(_))));
        let out_of_domain = StateConstraints {
            minutes_elapsed: Some((0, 41)),
            ..Default::default()
        };
        assert!(sample_states(1, 0, Some(&out_of_domain)).is_err());
        assert!(sample_states(0, 0, None).is_err());
    }

    #[test]
    fn render_state_contents() {
        let s = EnvState::default();
        let text = render_state(&s);
        assert!(text.contains("Solution submissions so far: 0"));
        assert_eq!(text, render_state(&s));
        let mut s2 = s.clone();
        s2.set_measured(PointPair::new(F1, X).unwrap(), true);
        assert!(render_state(&s2).contains("- F1-X (focus 1 to fixed point on the orbit): done"));
    }

    #[test]
    fn productive_set() {
        let set = productive_measurement_set();
        assert_eq!(set.len(), 6);
        assert!(!set.contains(&ActionCategory::Measure(PointPair::new(A, P).unwrap())));
        assert!(!set.contains(&ActionCategory::Exit));
        assert!(set.iter().all(|c| c.is_measurement()));
    }

    #[test]
    fn transitions() {
        let s = EnvState::default();
        let ap = PointPair::new(A, P).unwrap();
        let t = transition(&s, &Action::Measure { pair: ap });
        assert!(t.state.is_measured(ap) && !t.terminal);
        let t = transition(&s, &Action::from_category(ActionCategory::Submit));
        assert_eq!(t.state.num_submissions, 1);
        let t = transition(&s, &Action::Exit);
        assert_eq!(t.state, s);
        assert!(t.terminal);
    }

    #[test]
    fn state_serde_round_trip() {
        let mut s = EnvState {
            num_submissions: 2,
            minutes_elapsed: 17,
            ..Default::default()
        };
        s.set_measured(PointPair::new(F2, P).unwrap(), true);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"measured":["F2-P"],"num_submissions":2,"minutes_elapsed":17}"#);
        assert_eq!(serde_json::from_str::<EnvState>(&json).unwrap(), s);
        assert!(serde_json::from_str::<EnvState>(r#"{"measured":[],"num_submissions":0,"minutes_elapsed":41}"#).is_err());
    }
}
