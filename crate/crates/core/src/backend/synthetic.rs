//! Seeded softmax learner policy used as an offline stand-in for a
//! language model.
//!
//! Logit of action `a` for persona `V` and state `s`:
//!
//! ```text
//! z_a = base_a + sum over level effects on a of f(V[c]) + sum over state effects on a of k * s[var]
//! ```
//!
//! where `f` is either `slope * level + intercept` or a 10-entry table.
//! Actions are drawn from `softmax(z / T)` by inverse CDF with a single
//! uniform, so two requests sharing a seed make the same draw whenever
//! their distributions agree.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest, GenerationResponse, TokenUsage};
use crate::environment::{
    expand_action_keys, Action, ActionCategory, ActionLabeling, EnvState, StateVariable, NUM_ACTIONS,
};
use crate::hypothesis::{MAX_LEVEL, MIN_LEVEL};
use crate::util::{digest_hex, stable_seed};

#[derive(Debug, Clone, PartialEq)]
pub enum LevelCurve {
    Linear { slope: f64, intercept: f64 },
    /// Logit at levels 1..=10.
    Table([f64; 10]),
}

impl LevelCurve {
    pub fn at(&self, level: u8) -> f64 {
        match self {
            LevelCurve::Linear { slope, intercept } => slope * f64::from(level) + intercept,
            LevelCurve::Table(t) => t[usize::from(level.clamp(MIN_LEVEL, MAX_LEVEL) - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelEffect {
    pub characteristic: String,
    pub actions: Vec<ActionCategory>,
    pub curve: LevelCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEffect {
    pub variable: StateVariable,
    pub actions: Vec<ActionCategory>,
    pub coefficient: f64,
}

/// Replacement policy used when the learner model holds every listed
/// hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOverride {
    pub when_model_has: Vec<String>,
    pub policy: SyntheticPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPolicy {
    pub base: [f64; NUM_ACTIONS],
    pub level_effects: Vec<LevelEffect>,
    pub state_effects: Vec<StateEffect>,
    /// Level assumed for characteristics absent from the persona.
    pub default_level: u8,
    pub overrides: Vec<PolicyOverride>,
}

impl Default for SyntheticPolicy {
    fn default() -> Self {
        Self::uniform()
    }
}

impl SyntheticPolicy {
    /// All logits zero.
    pub fn uniform() -> Self {
        Self {
            base: [0.0; NUM_ACTIONS],
            level_effects: Vec::new(),
            state_effects: Vec::new(),
            default_level: 5,
            overrides: Vec::new(),
        }
    }

    pub fn with_base(mut self, actions: &[ActionCategory], logit: f64) -> Self {
        for a in actions {
            self.base[a.index()] = logit;
        }
        self
    }

    pub fn with_level_effect(mut self, characteristic: &str, actions: &[ActionCategory], curve: LevelCurve) -> Self {
        self.level_effects.push(LevelEffect {
            characteristic: characteristic.to_string(),
            actions: actions.to_vec(),
            curve,
        });
        self
    }

    pub fn with_state_effect(mut self, variable: StateVariable, actions: &[ActionCategory], coefficient: f64) -> Self {
        self.state_effects.push(StateEffect {
            variable,
            actions: actions.to_vec(),
            coefficient,
        });
        self
    }

    /// The policy that applies to a model holding `hypotheses`.
    pub fn select(&self, hypotheses: &[String]) -> &SyntheticPolicy {
        self.overrides
            .iter()
            .find(|o| o.when_model_has.iter().all(|h| hypotheses.contains(h)))
            .map(|o| o.policy.select(hypotheses))
            .unwrap_or(self)
    }

    fn level(&self, persona: &BTreeMap<String, u8>, characteristic: &str) -> u8 {
        persona.get(characteristic).copied().unwrap_or(self.default_level)
    }

    pub fn logits(&self, persona: &BTreeMap<String, u8>, state: &EnvState) -> [f64; NUM_ACTIONS] {
        let mut z = self.base;
        for e in &self.level_effects {
            let v = e.curve.at(self.level(persona, &e.characteristic));
            for a in &e.actions {
                z[a.index()] += v;
            }
        }
        for e in &self.state_effects {
            let v = e.coefficient * state.value_of(e.variable);
            for a in &e.actions {
                z[a.index()] += v;
            }
        }
        z
    }

    /// Action distribution at `temperature`; zero temperature puts all
    /// mass on the first maximal logit.
    pub fn distribution(&self, persona: &BTreeMap<String, u8>, state: &EnvState, temperature: f64) -> [f64; NUM_ACTIONS] {
        let z = self.logits(persona, state);
        let mut p = [0.0; NUM_ACTIONS];
        if temperature <= 0.0 {
            let best = (0..NUM_ACTIONS).fold(0, |b, i| if z[i] > z[b] { i } else { b });
            p[best] = 1.0;
            return p;
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (pi, zi) in p.iter_mut().zip(z) {
            *pi = ((zi - max) / temperature).exp();
            total += *pi;
        }
        for pi in &mut p {
            *pi /= total;
        }
        p
    }

    /// Inverse-CDF draw with one uniform from `seed`.
    pub fn sample(&self, persona: &BTreeMap<String, u8>, state: &EnvState, temperature: f64, seed: u64) -> ActionCategory {
        let p = self.distribution(persona, state, temperature);
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, pi) in p.iter().enumerate() {
            if *pi > 0.0 {
                last = i;
            }
            acc += pi;
            if u < acc {
                return ActionCategory::from_index(i).expect("index < 12");
            }
        }
        ActionCategory::from_index(last).expect("index < 12")
    }

    pub fn from_spec(spec: &PolicySpec) -> Result<Self, String> {
        let mut base = [0.0; NUM_ACTIONS];
        for (key, v) in &spec.base {
            for a in expand_action_keys(&[key]).map_err(|e| e.to_string())? {
                base[a.index()] = *v;
            }
        }
        let mut level_effects = Vec::new();
        for e in &spec.level_effect {
            let curve = match (&e.table, e.slope) {
                (Some(t), None) => {
                    let t: [f64; 10] = t
                        .as_slice()
                        .try_into()
                        .map_err(|_| format!("level table for {} needs 10 entries, got {}", e.characteristic, t.len()))?;
                    LevelCurve::Table(t)
                }
                (None, Some(slope)) => LevelCurve::Linear {
                    slope,
                    intercept: e.intercept.unwrap_or(0.0),
                },
                _ => return Err(format!("level effect on {}: set exactly one of slope / table", e.characteristic)),
            };
            level_effects.push(LevelEffect {
                characteristic: e.characteristic.clone(),
                actions: expand_action_keys(&e.actions).map_err(|e| e.to_string())?,
                curve,
            });
        }
        let mut state_effects = Vec::new();
        for e in &spec.state_effect {
            state_effects.push(StateEffect {
                variable: StateVariable::from_phrase(&e.variable).ok_or_else(|| format!("unknown state variable {:?}", e.variable))?,
                actions: expand_action_keys(&e.actions).map_err(|e| e.to_string())?,
                coefficient: e.coefficient,
            });
        }
        if !(MIN_LEVEL..=MAX_LEVEL).contains(&spec.default_level) {
            return Err(format!("default_level {} outside [1, 10]", spec.default_level));
        }
        let overrides = spec
            .r#override
            .iter()
            .map(|o| {
                Ok(PolicyOverride {
                    when_model_has: o.when_model_has.clone(),
                    policy: SyntheticPolicy::from_spec(&o.policy)?,
                })
            })
            .collect::<Result<_, String>>()?;
        if base.iter().any(|v| !v.is_finite()) {
            return Err("non-finite base logit".into());
        }
        Ok(Self {
            base,
            level_effects,
            state_effects,
            default_level: spec.default_level,
            overrides,
        })
    }

    pub fn parse_toml(text: &str) -> Result<Self, String> {
        let spec: PolicySpec = toml::from_str(text).map_err(|e| e.to_string())?;
        Self::from_spec(&spec)
    }
}

/// File form of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// Base logit per action key or group; unlisted actions get 0.
    #[serde(default)]
    pub base: BTreeMap<String, f64>,
    #[serde(default)]
    pub level_effect: Vec<LevelEffectSpec>,
    #[serde(default)]
    pub state_effect: Vec<StateEffectSpec>,
    #[serde(default = "default_level")]
    pub default_level: u8,
    #[serde(default)]
    pub r#override: Vec<OverrideSpec>,
}

fn default_level() -> u8 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEffectSpec {
    pub characteristic: String,
    pub actions: Vec<String>,
    #[serde(default)]
    pub slope: Option<f64>,
    #[serde(default)]
    pub intercept: Option<f64>,
    #[serde(default)]
    pub table: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEffectSpec {
    pub variable: String,
    pub actions: Vec<String>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSpec {
    pub when_model_has: Vec<String>,
    pub policy: PolicySpec,
}

const SUBMISSION: [&str; 3] = ["d(F1,X) + d(F2,X)", "d(F1,P) + d(F2,P)", "d(A,F1) + d(A,F2)"];

/// Draws one action and renders it as a response: a one-line rationale
/// followed by the ACTION line.
pub fn synthetic_sample(
    policy: &SyntheticPolicy,
    persona: &BTreeMap<String, u8>,
    state: &EnvState,
    labeling: &ActionLabeling,
    temperature: f64,
    seed: u64,
) -> GenerationResponse {
    let category = policy.sample(persona, state, temperature, seed);
    let action = match category {
        ActionCategory::Submit => Action::Submit {
            expressions: SUBMISSION.map(String::from),
        },
        other => Action::from_category(other),
    };
    let label = labeling.surface_label(&action);
    let persona_text = persona
        .iter()
        .map(|(c, l)| format!("{c}={l}"))
        .collect::<Vec<_>>()
        .join(", ");
    GenerationResponse {
        text: format!(
            "With {persona_text} and {} of 10 distances measured, the learner chooses {label}.\nACTION: {label}",
            state.num_measured()
        ),
        finish_reason: "stop".into(),
        latency_ms: 0,
        usage: TokenUsage::default(),
    }
}

/// Backend answering from a [`SyntheticPolicy`]. Requests must carry a
/// simulation context.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    pub policy: SyntheticPolicy,
    pub seed: u64,
}

impl SyntheticBackend {
    pub fn new(policy: SyntheticPolicy, seed: u64) -> Self {
        Self { policy, seed }
    }

    /// Draw seed of a request. The persona is left out on purpose so that
    /// snapshots with equal action distributions make equal draws.
    pub fn draw_seed(&self, state: &EnvState, labeling: &str, sample_index: u64) -> u64 {
        let state_json = serde_json::to_string(state).expect("state serializes");
        stable_seed(&[
            &self.seed.to_le_bytes(),
            state_json.as_bytes(),
            labeling.as_bytes(),
            &sample_index.to_le_bytes(),
        ])
    }
}

impl Backend for SyntheticBackend {
    fn name(&self) -> &str {
        "synthetic"
    }

    /// Seed plus a digest of the policy, so edited policies miss the cache.
    fn cache_namespace(&self) -> String {
        let policy = format!("{:?}", self.policy);
        format!("synthetic:{}:{}", self.seed, &digest_hex(&[policy.as_bytes()])[..16])
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let ctx = request
            .context
            .as_ref()
            .ok_or_else(|| BackendError::InvalidRequest("synthetic backend needs a simulation context".into()))?;
        let policy = self.policy.select(&ctx.hypotheses);
        let seed = self.draw_seed(&ctx.state, ctx.labeling.id(), request.sample_index);
        Ok(synthetic_sample(
            policy,
            &ctx.persona,
            &ctx.state,
            &ctx.labeling,
            request.temperature,
            seed,
        ))
    }
}
