//! Learner models L = (C, V, M) and the edit operations connecting model
//! snapshots in an edit graph.
//!
//! Every edit is a pure function from one snapshot to the next; the source
//! model is never touched.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hypothesis::{characteristic_phrase, CalibrationStatus, MdHyp, MAX_LEVEL, MIN_LEVEL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LearnerError {
    #[error("unknown hypothesis {0:?}")]
    UnknownHypothesis(String),
    #[error("unknown characteristic {0:?}")]
    UnknownCharacteristic(String),
    #[error("persona conflict on {characteristic}: level {left} vs {right}")]
    PersonaConflict { characteristic: String, left: u8, right: u8 },
    #[error("hypothesis {0:?} already present")]
    DuplicateHypothesis(String),
    #[error("hypothesis {hypothesis} trend variable is {actual:?}, not {expected:?}")]
    VariableMismatch {
        hypothesis: String,
        expected: String,
        actual: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LearnerCharacteristic {
    pub id: String,
    pub display_name: String,
    pub definition: String,
}

impl LearnerCharacteristic {
    /// Characteristic whose display name is the title-cased id.
    pub fn from_id(id: &str, definition: &str) -> Self {
        Self {
            id: id.to_string(),
            display_name: title_case(&characteristic_phrase(id)),
            definition: definition.to_string(),
        }
    }
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// The MDHyps modelling one characteristic, in prompt order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharacteristicModel {
    pub characteristic: String,
    pub hypotheses: Vec<MdHyp>,
}

/// A learner model snapshot. Maps are keyed by characteristic id, which
/// fixes the rendering order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LearnerModel {
    pub characteristics: BTreeMap<String, LearnerCharacteristic>,
    pub persona: BTreeMap<String, u8>,
    pub models: BTreeMap<String, CharacteristicModel>,
}

/// One broken invariant: the offending field and the rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Adds a characteristic that a target model does not yet contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacteristicSeed {
    pub characteristic: LearnerCharacteristic,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOperation {
    /// Adds `hyp` to its characteristic's model. `seed` is required when
    /// the characteristic is new to the model.
    Append {
        hyp: MdHyp,
        #[serde(default)]
        seed: Option<CharacteristicSeed>,
    },
    /// Deletes a hypothesis; a characteristic left without hypotheses is
    /// dropped with it.
    Remove { hypothesis: String },
    /// Rewrites the trend variable of one hypothesis.
    VariableSwap {
        hypothesis: String,
        old_variable: String,
        new_variable: String,
        #[serde(default)]
        new_id: Option<String>,
    },
    /// Re-targets a hypothesis to another characteristic.
    LcSwap {
        hypothesis: String,
        new_characteristic: String,
        #[serde(default)]
        new_id: Option<String>,
        #[serde(default)]
        seed: Option<CharacteristicSeed>,
    },
    /// Merges another model into this one.
    Combine { other: LearnerModel },
    /// Keeps only the named hypothesis and its characteristic.
    ExSituIsolate { hypothesis: String },
}

impl EditOperation {
    /// Display name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            EditOperation::Append { .. } => "Append",
            EditOperation::Remove { .. } => "Remove",
            EditOperation::VariableSwap { .. } => "Variable Swap",
            EditOperation::LcSwap { .. } => "LC Swap",
            EditOperation::Combine { .. } => "Combine",
            EditOperation::ExSituIsolate { .. } => "Ex-Situ Isolate",
        }
    }
}

impl LearnerModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a characteristic with a persona level and hypotheses.
    pub fn with_characteristic(mut self, c: LearnerCharacteristic, level: u8, hyps: Vec<MdHyp>) -> Self {
        let id = c.id.clone();
        self.persona.insert(id.clone(), level);
        self.models.insert(
            id.clone(),
            CharacteristicModel {
                characteristic: id.clone(),
                hypotheses: hyps,
            },
        );
        self.characteristics.insert(id, c);
        self
    }

    /// All invariant violations; empty for a well-formed model.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: String, rule: String| out.push(Violation { field, rule });
        for (id, c) in &self.characteristics {
            if c.id != *id {
                push(format!("characteristics.{id}.id"), format!("must equal its key, found {:?}", c.id));
            }
            if c.definition.trim().is_empty() {
                push(format!("characteristics.{id}.definition"), "must be non-empty".into());
            }
            if c.display_name.trim().is_empty() {
                push(format!("characteristics.{id}.display_name"), "must be non-empty".into());
            }
            match self.persona.get(id) {
                None => push(format!("persona.{id}"), "missing persona level".into()),
                Some(&l) if !(MIN_LEVEL..=MAX_LEVEL).contains(&l) => push(
                    format!("persona.{id}"),
                    format!("level {l} outside [{MIN_LEVEL}, {MAX_LEVEL}]"),
                ),
                _ => {}
            }
            if !self.models.contains_key(id) {
                push(format!("models.{id}"), "missing characteristic model".into());
            }
        }
        for id in self.persona.keys() {
            if !self.characteristics.contains_key(id) {
                push(format!("persona.{id}"), "level for an undeclared characteristic".into());
            }
        }
        let mut seen = BTreeMap::new();
        for (id, m) in &self.models {
            if !self.characteristics.contains_key(id) {
                push(format!("models.{id}"), "model for an undeclared characteristic".into());
            }
            if m.characteristic != *id {
                push(format!("models.{id}.characteristic"), format!("must equal its key, found {:?}", m.characteristic));
            }
            if m.hypotheses.is_empty() {
                push(format!("models.{id}.hypotheses"), "must be non-empty".into());
            }
            for h in &m.hypotheses {
                if h.characteristic != *id {
                    push(
                        format!("models.{id}.hypotheses.{}", h.id),
                        format!("hypothesis targets characteristic {:?}", h.characteristic),
                    );
                }
                if let Err(e) = h.check() {
                    push(format!("models.{id}.hypotheses.{}", h.id), e.to_string());
                }
                if let Some(prev) = seen.insert(h.id.clone(), id.clone()) {
                    push(
                        format!("models.{id}.hypotheses.{}", h.id),
                        format!("duplicate hypothesis id (also under {prev})"),
                    );
                }
            }
        }
        out
    }

    /// Hypotheses in prompt order: by characteristic id, then list order.
    pub fn hypotheses(&self) -> impl Iterator<Item = &MdHyp> {
        self.models.values().flat_map(|m| m.hypotheses.iter())
    }

    pub fn hypothesis_ids(&self) -> Vec<String> {
        self.hypotheses().map(|h| h.id.clone()).collect()
    }

    pub fn find(&self, id: &str) -> Option<&MdHyp> {
        self.hypotheses().find(|h| h.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.find(id).is_some()
    }

    pub fn level(&self, characteristic: &str) -> Option<u8> {
        self.persona.get(characteristic).copied()
    }

    /// Copy with one persona level replaced.
    pub fn with_level(&self, characteristic: &str, level: u8) -> Result<Self, LearnerError> {
        if !self.characteristics.contains_key(characteristic) {
            return Err(LearnerError::UnknownCharacteristic(characteristic.to_string()));
        }
        let mut m = self.clone();
        m.persona.insert(characteristic.to_string(), level);
        Ok(m)
    }

    fn locate(&self, id: &str) -> Result<(String, usize), LearnerError> {
        for (c, m) in &self.models {
            if let Some(i) = m.hypotheses.iter().position(|h| h.id == id) {
                return Ok((c.clone(), i));
            }
        }
        Err(LearnerError::UnknownHypothesis(id.to_string()))
    }

    fn drop_characteristic(&mut self, id: &str) {
        self.characteristics.remove(id);
        self.persona.remove(id);
        self.models.remove(id);
    }

    fn insert_hyp(&mut self, hyp: MdHyp, seed: Option<&CharacteristicSeed>) -> Result<(), LearnerError> {
        if self.contains(&hyp.id) {
            return Err(LearnerError::DuplicateHypothesis(hyp.id));
        }
        let cid = hyp.characteristic.clone();
        if !self.characteristics.contains_key(&cid) {
            let seed = seed
                .filter(|s| s.characteristic.id == cid)
                .ok_or_else(|| LearnerError::UnknownCharacteristic(cid.clone()))?;
            self.characteristics.insert(cid.clone(), seed.characteristic.clone());
            self.persona.insert(cid.clone(), seed.level);
        }
        self.models
            .entry(cid.clone())
            .or_insert_with(|| CharacteristicModel {
                characteristic: cid,
                hypotheses: Vec::new(),
            })
            .hypotheses
            .push(hyp);
        Ok(())
    }

    fn take_hyp(&mut self, id: &str) -> Result<MdHyp, LearnerError> {
        let (c, i) = self.locate(id)?;
        let model = self.models.get_mut(&c).expect("located");
        let hyp = model.hypotheses.remove(i);
        if model.hypotheses.is_empty() {
            self.drop_characteristic(&c);
        }
        Ok(hyp)
    }
}

/// Applies one edit, returning the new snapshot.
pub fn apply_edit(model: &LearnerModel, op: &EditOperation) -> Result<LearnerModel, LearnerError> {
    let mut out = model.clone();
    match op {
        EditOperation::Append { hyp, seed } => out.insert_hyp(hyp.clone(), seed.as_ref())?,
        EditOperation::Remove { hypothesis } => {
            out.take_hyp(hypothesis)?;
        }
        EditOperation::VariableSwap {
            hypothesis,
            old_variable,
            new_variable,
            new_id,
        } => {
            let (c, i) = out.locate(hypothesis)?;
            let replacement = new_id.as_deref().unwrap_or(hypothesis);
            if replacement != hypothesis && out.contains(replacement) {
                return Err(LearnerError::DuplicateHypothesis(replacement.to_string()));
            }
            let hyp = &mut out.models.get_mut(&c).expect("located").hypotheses[i];
            if hyp.trend_variable.as_deref() != Some(old_variable.as_str()) {
                return Err(LearnerError::VariableMismatch {
                    hypothesis: hypothesis.clone(),
                    expected: old_variable.clone(),
                    actual: hyp.trend_variable.clone(),
                });
            }
            hyp.behavior_short = hyp.behavior_short.replace(old_variable.as_str(), new_variable);
            hyp.behavior_long = hyp.behavior_long.replace(old_variable.as_str(), new_variable);
            hyp.trend_variable = Some(new_variable.clone());
            hyp.id = replacement.to_string();
            hyp.calibration_status = CalibrationStatus::Untested;
        }
        EditOperation::LcSwap {
            hypothesis,
            new_characteristic,
            new_id,
            seed,
        } => {
            let mut hyp = out.take_hyp(hypothesis)?;
            // the seed may be needed when the swap removed the last hypothesis
            // of a characteristic the model also uses as target
            let seed = match (seed, model.characteristics.get(new_characteristic)) {
                (Some(s), _) => Some(s.clone()),
                (None, Some(c)) => Some(CharacteristicSeed {
                    characteristic: c.clone(),
                    level: model.persona[new_characteristic],
                }),
                (None, None) => None,
            };
            hyp.characteristic = new_characteristic.clone();
            if let Some(id) = new_id {
                hyp.id = id.clone();
            }
            hyp.calibration_status = CalibrationStatus::Untested;
            out.insert_hyp(hyp, seed.as_ref())?;
        }
        EditOperation::Combine { other } => {
            for (id, &level) in &other.persona {
                if let Some(&mine) = out.persona.get(id) {
                    if mine != level {
                        return Err(LearnerError::PersonaConflict {
                            characteristic: id.clone(),
                            left: mine,
                            right: level,
                        });
                    }
                }
            }
            for (id, c) in &other.characteristics {
                out.characteristics.entry(id.clone()).or_insert_with(|| c.clone());
            }
            for (id, &level) in &other.persona {
                out.persona.insert(id.clone(), level);
            }
            for (id, m) in &other.models {
                for h in &m.hypotheses {
                    match out.find(&h.id) {
                        Some(existing) if existing == h => continue,
                        Some(_) => return Err(LearnerError::DuplicateHypothesis(h.id.clone())),
                        None => {}
                    }
                    out.models
                        .entry(id.clone())
                        .or_insert_with(|| CharacteristicModel {
                            characteristic: id.clone(),
                            hypotheses: Vec::new(),
                        })
                        .hypotheses
                        .push(h.clone());
                }
            }
        }
        EditOperation::ExSituIsolate { hypothesis } => {
            let (c, i) = model.locate(hypothesis)?;
            let hyp = model.models[&c].hypotheses[i].clone();
            out = LearnerModel::new().with_characteristic(model.characteristics[&c].clone(), model.persona[&c], vec![hyp]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDirection {
    Increase,
    Decrease,
}

/// An update rule of the form "if the learner performs ACTION under
/// CONDITIONS, DIRECTION CHARACTERISTIC by MAGNITUDE".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub action: String,
    #[serde(default)]
    pub conditions: String,
    pub direction: RuleDirection,
    pub characteristic: String,
    #[serde(default)]
    pub magnitude: String,
}

/// Draft MDHyp sentence equivalent to an update rule.
pub fn update_rule_to_mdh(rule: &UpdateRule) -> String {
    let (this, that) = match rule.direction {
        RuleDirection::Increase => ("high", "low"),
        RuleDirection::Decrease => ("low", "high"),
    };
    let c = characteristic_phrase(rule.characteristic.trim());
    let conditions = rule.conditions.trim();
    let when = if conditions.is_empty() {
        String::new()
    } else {
        format!(" when {conditions}")
    };
    format!(
        "Learners with a {this} {c} are more likely to perform {}{when} than learners with a {that} {c}.",
        rule.action.trim()
    )
}
