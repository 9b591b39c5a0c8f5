//! Hierarchical composition of the simulation prompt.
//!
//! Fragments appear in a fixed order (global, environment, persona, one
//! block per characteristic model, state, action menu, output format) and
//! are joined by one blank line.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{render_state, ActionLabeling, EnvState};
use crate::hypothesis::{instantiate_template_salted, ClassRegistry, HypothesisError};
use crate::learner::{LearnerModel, Violation};
use crate::util::{digest_hex, stable_seed};

/// Separator placed between rendered fragments.
pub const FRAGMENT_SEPARATOR: &str = "\n\n";

/// Final-line prefix every response must carry.
pub const ACTION_PREFIX: &str = "ACTION:";

pub const DEFAULT_GLOBAL: &str = "You are a simulated learner agent working in a learning environment designed to test your understanding of Kepler's First Law. Given a scenario in the learning environment, you will generate the next action that a 13 year old human learner who possesses the given learner characteristics would most likely perform in the given situation. The stipulated class period for this activity is 40 minutes. The teacher has instructed you to work on the activity for the entire class period.";

/// Placeholder environment description; replace it through the
/// environment config for real runs.
pub const DEFAULT_ENVIRONMENT: &str = "The learning environment is HoloOrbits, a mixed-reality activity showing a planet on an orbit around a star. \
The learner can measure the distance between pairs of five key points: the aphelion (A), the perihelion (P), \
the two foci of the orbit (F1 and F2), and a fixed point on the orbit (X). Using these measurements the learner must \
show that the orbit is an ellipse by submitting three expressions whose values agree. The learner may submit a \
solution or exit the activity at any time.";

pub const DEFAULT_OUTPUT_FORMAT: &str = "Before answering, perform Chain-of-Thought reasoning: think step by step about what this learner would most likely do next, given the learner characteristics and the current state. \
Then choose exactly one of the available actions. For a submission, replace the ellipsis with the three expressions the learner submits. \
End your reply with a final line of the form:\nACTION: <action label>";

const REMINDER: &str = "Reminder: your previous reply could not be read. The last line of your reply must be exactly ACTION: followed by one of the available actions.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error("learner model is invalid: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentKind {
    Global,
    Environment,
    LearnerPersona,
    LcModel,
    State,
    ActionMenu,
    OutputFormat,
}

impl fmt::Display for FragmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FragmentKind::Global => "global",
            FragmentKind::Environment => "environment",
            FragmentKind::LearnerPersona => "learner_persona",
            FragmentKind::LcModel => "lc_model",
            FragmentKind::State => "state",
            FragmentKind::ActionMenu => "action_menu",
            FragmentKind::OutputFormat => "output_format",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFragment {
    pub kind: FragmentKind,
    pub text: String,
    /// Template id and revision, e.g. `mono@1`, or a fixed source name.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationPrompt {
    fragments: Vec<PromptFragment>,
    rendered: String,
    fingerprint: String,
}

impl SimulationPrompt {
    /// Assembles a prompt from fragments already in canonical order.
    pub fn from_fragments(fragments: Vec<PromptFragment>) -> Self {
        debug_assert!(fragments.windows(2).all(|w| w[0].kind <= w[1].kind));
        let rendered = fragments
            .iter()
            .map(|f| f.text.as_str())
            .collect::<Vec<_>>()
            .join(FRAGMENT_SEPARATOR);
        let fingerprint = digest_hex(&[rendered.as_bytes()]);
        Self {
            fragments,
            rendered,
            fingerprint,
        }
    }

    pub fn fragments(&self) -> &[PromptFragment] {
        &self.fragments
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    /// SHA-256 of the rendered text, hex encoded.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn fragment(&self, kind: FragmentKind) -> Option<&PromptFragment> {
        self.fragments.iter().find(|f| f.kind == kind)
    }

    /// Same prompt with a format reminder appended to the output fragment.
    pub fn with_reminder(&self) -> Self {
        let mut fragments = self.fragments.clone();
        if let Some(last) = fragments.iter_mut().rev().find(|f| f.kind == FragmentKind::OutputFormat) {
            last.text = format!("{}\n\n{REMINDER}", last.text);
            last.source.push_str("+reminder");
        }
        Self::from_fragments(fragments)
    }
}

/// User-replaceable fixed fragments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub global: String,
    pub environment: String,
    pub output_format: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            global: DEFAULT_GLOBAL.to_string(),
            environment: DEFAULT_ENVIRONMENT.to_string(),
            output_format: DEFAULT_OUTPUT_FORMAT.to_string(),
        }
    }
}

/// One line per characteristic, `"<display name>: <level>/10"`, id-sorted.
pub fn render_persona(model: &LearnerModel) -> String {
    model
        .characteristics
        .iter()
        .map(|(id, c)| format!("{}: {}/10", c.display_name, model.persona.get(id).copied().unwrap_or_default()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_action_menu(labeling: &ActionLabeling) -> String {
    let mut out = String::from("Available actions:");
    for label in labeling.labels() {
        out.push_str("\n- ");
        out.push_str(label);
    }
    out
}

/// Composes prompts from a class registry, template revisions and the
/// fixed fragments.
#[derive(Debug, Clone)]
pub struct Composer {
    pub templates: PromptTemplates,
    pub classes: ClassRegistry,
    /// Template revision per class id; classes not listed use their
    /// calibrated (or latest) revision.
    pub revisions: BTreeMap<String, u32>,
}

impl Composer {
    pub fn new(templates: PromptTemplates, classes: ClassRegistry) -> Self {
        Self {
            templates,
            classes,
            revisions: BTreeMap::new(),
        }
    }

    pub fn with_revision(mut self, class: &str, revision: u32) -> Self {
        self.revisions.insert(class.to_string(), revision);
        self
    }

    pub fn revision(&self, class: &str) -> Result<u32, HypothesisError> {
        match self.revisions.get(class) {
            Some(&r) => Ok(r),
            None => Ok(self.classes.get(class)?.default_revision()),
        }
    }

    pub fn compose(
        &self,
        model: &LearnerModel,
        state: &EnvState,
        labeling: &ActionLabeling,
    ) -> Result<SimulationPrompt, PromptError> {
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(PromptError::InvalidModel(violations));
        }
        let fixed = |kind, text: &str, source: &str| PromptFragment {
            kind,
            text: text.to_string(),
            source: source.to_string(),
        };
        let mut fragments = vec![
            fixed(FragmentKind::Global, &self.templates.global, "global"),
            fixed(FragmentKind::Environment, &self.templates.environment, "environment"),
            fixed(
                FragmentKind::LearnerPersona,
                &format!("The learner has the following characteristics (1 = lowest, 10 = highest):\n{}", render_persona(model)),
                "persona",
            ),
        ];
        let state_text = render_state(state);
        let salt = stable_seed(&[state_text.as_bytes()]);
        for (id, cm) in &model.models {
            let c = &model.characteristics[id];
            let mut text = format!("Learner characteristic model for {}. Definition: {}", c.display_name, c.definition);
            let mut sources = Vec::new();
            for hyp in &cm.hypotheses {
                let class = self.classes.get(&hyp.class_id)?;
                let rev = self.revision(&class.id)?;
                text.push('\n');
                text.push_str(&instantiate_template_salted(class, rev, hyp, labeling, salt)?);
                sources.push(format!("{}@{rev}", class.id));
            }
            fragments.push(PromptFragment {
                kind: FragmentKind::LcModel,
                text,
                source: sources.join(","),
            });
        }
        fragments.push(fixed(FragmentKind::State, &state_text, "state"));
        fragments.push(fixed(FragmentKind::ActionMenu, &render_action_menu(labeling), labeling.id()));
        fragments.push(fixed(FragmentKind::OutputFormat, &self.templates.output_format, "output_format"));
        Ok(SimulationPrompt::from_fragments(fragments))
    }
}

/// Composes with the built-in classes and default fragments, using the
/// given template revision for every class.
pub fn compose(
    model: &LearnerModel,
    state: &EnvState,
    labeling: &ActionLabeling,
    env_text: &str,
    revisions: &BTreeMap<String, u32>,
) -> Result<SimulationPrompt, PromptError> {
    let composer = Composer {
        templates: PromptTemplates {
            environment: env_text.to_string(),
            ..PromptTemplates::default()
        },
        classes: ClassRegistry::with_builtins(),
        revisions: revisions.clone(),
    };
    composer.compose(model, state, labeling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{labeling_a, labeling_c, sample_states};
    use crate::hypothesis::builtin_hypothesis;
    use crate::learner::LearnerCharacteristic;

    fn model(gp_hyps: &[&str], p_hyps: &[&str], gp: u8) -> LearnerModel {
        let mut m = LearnerModel::new();
        let hs = |ids: &[&str]| ids.iter().map(|id| builtin_hypothesis(id).unwrap()).collect::<Vec<_>>();
        if !gp_hyps.is_empty() {
            m = m.with_characteristic(
                LearnerCharacteristic::from_id("geometry_proficiency", "applies shape knowledge"),
                gp,
                hs(gp_hyps),
            );
        }
        if !p_hyps.is_empty() {
            m = m.with_characteristic(
                LearnerCharacteristic::from_id("persistence", "keeps trying under difficulty"),
                5,
                hs(p_hyps),
            );
        }
        m
    }

    fn composer() -> Composer {
        Composer::new(PromptTemplates::default(), ClassRegistry::with_builtins())
    }

    #[test]
    fn persona_lines() {
        assert_eq!(render_persona(&model(&["H_G1"], &[], 7)), "Geometry Proficiency: 7/10");
        assert_eq!(render_persona(&model(&["H_G1"], &[], 1)), "Geometry Proficiency: 1/10");
        assert_eq!(
            render_persona(&model(&["H_G1"], &["H_P1"], 3)),
            "Geometry Proficiency: 3/10\nPersistence: 5/10"
        );
    }

    #[test]
    fn contains_hypothesis_sentence_and_is_deterministic() {
        let c = composer().with_revision("mono", 0);
        let state = EnvState::default();
        let a = c.compose(&model(&["H_G1"], &[], 5), &state, &labeling_a()).unwrap();
        assert!(a.rendered().contains("A learner with a higher geometry proficiency is more likely to make productive measurements"));
        let b = c.compose(&model(&["H_G1"], &[], 5), &state, &labeling_a()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn characteristic_order_and_output_last() {
        let p = composer()
            .compose(&model(&["H_G1"], &["H_P1"], 5), &EnvState::default(), &labeling_a())
            .unwrap();
        let g = p.rendered().find("geometry proficiency is more").unwrap();
        let q = p.rendered().find("persistence is less").unwrap();
        assert!(g < q);
        assert_eq!(p.fragments().last().unwrap().kind, FragmentKind::OutputFormat);
        assert!(p.rendered().ends_with("ACTION: <action label>"));
        assert!(p.rendered().contains("perform Chain-of-Thought reasoning"));
    }

    #[test]
    fn recomposing_from_fragments_is_identical() {
        let p = composer()
            .compose(&model(&["H_G1", "H_G2"], &["H_P2"], 2), &EnvState::default(), &labeling_c())
            .unwrap();
        let again = SimulationPrompt::from_fragments(p.fragments().to_vec());
        assert_eq!(again, p);
    }

    #[test]
    fn labeling_only_changes_label_bearing_fragments() {
        let m = model(&["H_G1"], &["H_P1"], 5);
        let s = sample_states(1, 3, None).unwrap().remove(0);
        let a = composer().compose(&m, &s, &labeling_a()).unwrap();
        let c = composer().compose(&m, &s, &labeling_c()).unwrap();
        for (x, y) in a.fragments().iter().zip(c.fragments()) {
            match x.kind {
                FragmentKind::LcModel | FragmentKind::ActionMenu => assert_ne!(x.text, y.text),
                _ => assert_eq!(x.text, y.text),
            }
        }
    }

    #[test]
    fn reminder_is_appended_to_output_fragment() {
        let p = composer()
            .compose(&model(&["H_G1"], &[], 5), &EnvState::default(), &labeling_a())
            .unwrap();
        let r = p.with_reminder();
        assert_ne!(r.fingerprint(), p.fingerprint());
        assert!(r.rendered().starts_with(p.rendered()));
        assert_eq!(r.fragments().last().unwrap().kind, FragmentKind::OutputFormat);
    }

    #[test]
    fn invalid_model_is_rejected() {
        let mut m = model(&["H_G1"], &[], 5);
        m.persona.insert("geometry_proficiency".into(), 0);
        assert!(matches!(
            composer().compose(&m, &EnvState::default(), &labeling_a()),
            Err(PromptError::InvalidModel(_))
        ));
    }
}
