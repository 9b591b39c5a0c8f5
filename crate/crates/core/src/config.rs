//! Config bundle: a `hypmix.toml` naming the environment, hypothesis,
//! model, graph, plan and policy files. Relative paths resolve against the
//! directory of `hypmix.toml`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, PolicySpec, RemoteBackend, RemoteConfig, SyntheticBackend, SyntheticPolicy};
use crate::environment::{builtin_labelings, ActionLabeling, KeyPoint, StateDomain};
use crate::experiment::{DegradationThresholds, EdgeDef, EdgeOp, EditGraph, ExperimentError, ExperimentPlan, TrackedPair};
use crate::hypothesis::{builtin_catalog, HypothesisCatalog, HypothesisFile, MAX_LEVEL, MIN_LEVEL};
use crate::learner::{CharacteristicSeed, EditOperation, LearnerCharacteristic, LearnerModel};
use crate::prompt::{Composer, PromptTemplates};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown backend {other:?} (expected synthetic or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub policy: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub synthetic: Option<SyntheticConfig>,
    pub remote: Option<RemoteConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Template revision per class id.
    pub revisions: BTreeMap<String, u32>,
    pub global: Option<String>,
    pub output_format: Option<String>,
}

/// Top-level `hypmix.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypmixConfig {
    #[serde(default)]
    pub environment: Option<PathBuf>,
    /// Extra classes and hypotheses on top of the built-in ones.
    #[serde(default)]
    pub hypotheses: Option<PathBuf>,
    pub models: PathBuf,
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub plan: Option<PathBuf>,
    /// Model used by `run` and `evaluate` when none is given.
    #[serde(default)]
    pub default_model: Option<String>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub report: DegradationThresholds,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingSpec {
    pub id: String,
    /// Canonical key to surface label; must cover all 12 actions.
    pub labels: BTreeMap<String, String>,
}

/// `environment.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// Must list the five key points when present.
    pub key_points: Vec<String>,
    pub description: Option<String>,
    pub domain: StateDomain,
    pub builtin_labelings: bool,
    pub labeling: Vec<LabelingSpec>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self {
            key_points: Vec::new(),
            description: None,
            domain: StateDomain::default(),
            builtin_labelings: true,
            labeling: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicSpec {
    pub id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub definition: String,
}

impl CharacteristicSpec {
    pub fn to_characteristic(&self) -> LearnerCharacteristic {
        let mut c = LearnerCharacteristic::from_id(&self.id, &self.definition);
        if let Some(d) = &self.display_name {
            c.display_name = d.clone();
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub hypotheses: Vec<String>,
    #[serde(default)]
    pub persona: BTreeMap<String, i64>,
}

/// `models.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsFile {
    pub characteristic: Vec<CharacteristicSpec>,
    pub model: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    /// Model id; defaults to the node id.
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EdgeOpSpec {
    /// Adds a hypothesis from the catalog; `level` seeds a new characteristic.
    Append {
        hypothesis: String,
        #[serde(default)]
        level: Option<u8>,
    },
    Remove {
        hypothesis: String,
    },
    VariableSwap {
        hypothesis: String,
        old_variable: String,
        new_variable: String,
        #[serde(default)]
        new_id: Option<String>,
    },
    LcSwap {
        hypothesis: String,
        new_characteristic: String,
        #[serde(default)]
        new_id: Option<String>,
        #[serde(default)]
        level: Option<u8>,
    },
    Combine {
        with: String,
    },
    ExSituIsolate {
        hypothesis: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub id: String,
    #[serde(default)]
    pub label: Option<String>,
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub op: EdgeOpSpec,
    #[serde(default)]
    pub track: Option<Vec<TrackedPair>>,
}

/// `graph.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphFile {
    pub node: Vec<NodeSpec>,
    pub edge: Vec<EdgeSpec>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    toml::from_str(&read(path)?).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// A loaded bundle. Problems that do not stop loading are kept in
/// `issues`; [`Bundle::validate`] reports them with the rest.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub root: PathBuf,
    pub config: HypmixConfig,
    pub environment: EnvironmentSpec,
    pub labelings: Vec<ActionLabeling>,
    pub catalog: HypothesisCatalog,
    pub characteristics: BTreeMap<String, LearnerCharacteristic>,
    pub models: BTreeMap<String, LearnerModel>,
    pub graph: Option<GraphFile>,
    pub plan: ExperimentPlan,
    pub policy: Option<SyntheticPolicy>,
    issues: Vec<String>,
}

impl Bundle {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let config: HypmixConfig = parse(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
        let mut issues = Vec::new();

        let environment: EnvironmentSpec = match &config.environment {
            Some(p) => parse(&resolve(p))?,
            None => EnvironmentSpec::default(),
        };
        let mut labelings = if environment.builtin_labelings {
            builtin_labelings()
        } else {
            Vec::new()
        };
        for l in &environment.labeling {
            match ActionLabeling::from_map(l.id.clone(), &l.labels) {
                Ok(l) if labelings.iter().any(|x| x.id() == l.id()) => {
                    issues.push(format!("environment: duplicate labeling {:?}", l.id()))
                }
                Ok(l) => labelings.push(l),
                Err(e) => issues.push(format!("environment: labeling {}: {e}", l.id)),
            }
        }

        let mut catalog = builtin_catalog();
        if let Some(p) = &config.hypotheses {
            let p = resolve(p);
            let file = HypothesisFile::parse(&read(&p)?).map_err(|e| ConfigError::Parse {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
            catalog.extend(&file).map_err(|e| ConfigError::Parse {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
        }

        let models_file: ModelsFile = parse(&resolve(&config.models))?;
        let mut characteristics = BTreeMap::new();
        for c in &models_file.characteristic {
            if characteristics.insert(c.id.clone(), c.to_characteristic()).is_some() {
                issues.push(format!("models: duplicate characteristic {:?}", c.id));
            }
        }
        let mut models = BTreeMap::new();
        for spec in &models_file.model {
            let (m, problems) = build_model(spec, &catalog, &characteristics);
            issues.extend(problems);
            if models.insert(spec.id.clone(), m).is_some() {
                issues.push(format!("models: duplicate model {:?}", spec.id));
            }
        }

        let graph = match &config.graph {
            Some(p) => Some(parse::<GraphFile>(&resolve(p))?),
            None => None,
        };
        let mut plan: ExperimentPlan = match &config.plan {
            Some(p) => parse(&resolve(p))?,
            None => ExperimentPlan::default(),
        };
        if let Some(seed) = config.seed {
            plan.seed = seed;
        }
        if config.alpha.is_some() {
            plan.eval.alpha = config.alpha;
        }

        let policy = match &config.backend.synthetic {
            Some(s) => {
                let p = resolve(&s.policy);
                let spec: PolicySpec = parse(&p)?;
                match SyntheticPolicy::from_spec(&spec) {
                    Ok(policy) => Some(policy),
                    Err(e) => {
                        issues.push(format!("{}: {e}", p.display()));
                        None
                    }
                }
            }
            None => None,
        };

        Ok(Self {
            root,
            config,
            environment,
            labelings,
            catalog,
            characteristics,
            models,
            graph,
            plan,
            policy,
            issues,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Every problem found across the bundle's files.
    pub fn validate(&self) -> Vec<String> {
        let mut out = self.issues.clone();
        let env = &self.environment;
        if !env.key_points.is_empty() {
            let expected: Vec<&str> = KeyPoint::ALL.iter().map(|k| k.symbol()).collect();
            if env.key_points.iter().map(String::as_str).ne(expected.iter().copied()) {
                out.push(format!("environment.key_points: expected {expected:?}"));
            }
        }
        for (id, m) in &self.models {
            out.extend(m.validate().into_iter().map(|v| format!("model {id}: {v}")));
        }
        let mut plan_hyps = Vec::new();
        for id in &self.plan.hypotheses {
            match self.catalog.get(id) {
                Some(h) => plan_hyps.push(h),
                None => out.push(format!("plan.hypotheses: unknown hypothesis {id:?}")),
            }
        }
        if plan_hyps.is_empty() {
            plan_hyps = self.models.values().flat_map(|m| m.hypotheses()).collect();
        }
        // a plan sweep only constrains the hypotheses it names
        let mut plan = self.plan.clone();
        if self.plan.hypotheses.is_empty() {
            plan.sweep = None;
        }
        out.extend(plan.validate(&plan_hyps).into_iter().map(|p| format!("plan.{p}")));
        for l in &self.plan.labelings {
            if !self.labelings.iter().any(|x| x.id() == l) {
                out.push(format!("plan.labelings: unknown labeling {l:?}"));
            }
        }
        if let Some(m) = &self.config.default_model {
            if !self.models.contains_key(m) {
                out.push(format!("default_model: unknown model {m:?}"));
            }
        }
        if let Some(a) = self.config.alpha {
            if !(a > 0.0 && a < 1.0) {
                out.push(format!("alpha: {a} outside (0, 1)"));
            }
        }
        for (class, rev) in &self.config.prompt.revisions {
            match self.catalog.classes.get(class) {
                Ok(c) if c.template(*rev).is_err() => out.push(format!("prompt.revisions.{class}: no revision {rev}")),
                Ok(_) => {}
                Err(e) => out.push(format!("prompt.revisions: {e}")),
            }
        }
        match self.config.backend.kind {
            BackendKind::Synthetic if self.config.backend.synthetic.is_none() => {
                out.push("backend: kind = \"synthetic\" needs a [backend.synthetic] table".into())
            }
            _ => {}
        }
        if self.graph.is_some() {
            if let Err(e) = self.edit_graph() {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn composer(&self) -> Composer {
        let mut templates = PromptTemplates::default();
        if let Some(g) = &self.config.prompt.global {
            templates.global = g.clone();
        }
        if let Some(d) = &self.environment.description {
            templates.environment = d.clone();
        }
        if let Some(o) = &self.config.prompt.output_format {
            templates.output_format = o.clone();
        }
        let mut c = Composer::new(templates, self.catalog.classes.clone());
        for (class, rev) in &self.config.prompt.revisions {
            c = c.with_revision(class, *rev);
        }
        c
    }

    pub fn model(&self, id: &str) -> Result<&LearnerModel, ConfigError> {
        self.models
            .get(id)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown model {id:?}")))
    }

    /// Builds the edit graph; an empty graph when none is configured.
    pub fn edit_graph(&self) -> Result<EditGraph, ExperimentError> {
        let Some(g) = &self.graph else {
            return EditGraph::build(Vec::new(), Vec::new());
        };
        let mut roots = Vec::new();
        for n in &g.node {
            let model_id = n.model.as_deref().unwrap_or(&n.id);
            let m = self
                .models
                .get(model_id)
                .ok_or_else(|| ExperimentError::Graph(format!("node {:?}: unknown model {model_id:?}", n.id)))?;
            roots.push((n.id.clone(), m.clone()));
        }
        let mut defs = Vec::new();
        for e in &g.edge {
            let op = self.edge_op(e).map_err(ExperimentError::Graph)?;
            defs.push(EdgeDef {
                id: e.id.clone(),
                label: e.label.clone(),
                from: e.from.clone(),
                to: e.to.clone(),
                op,
                track: e.track.clone(),
            });
        }
        EditGraph::build(roots, defs)
    }

    fn seed(&self, characteristic: &str, level: Option<u8>) -> Option<CharacteristicSeed> {
        self.characteristics.get(characteristic).map(|c| CharacteristicSeed {
            characteristic: c.clone(),
            level: level.unwrap_or(5),
        })
    }

    fn edge_op(&self, e: &EdgeSpec) -> Result<EdgeOp, String> {
        let hyp = |id: &str| {
            self.catalog
                .get(id)
                .cloned()
                .ok_or_else(|| format!("edge {:?}: unknown hypothesis {id:?}", e.id))
        };
        Ok(EdgeOp::Edit(match &e.op {
            EdgeOpSpec::Append { hypothesis, level } => {
                let h = hyp(hypothesis)?;
                let seed = self.seed(&h.characteristic, *level);
                EditOperation::Append { hyp: h, seed }
            }
            EdgeOpSpec::Remove { hypothesis } => EditOperation::Remove {
                hypothesis: hypothesis.clone(),
            },
            EdgeOpSpec::VariableSwap {
                hypothesis,
                old_variable,
                new_variable,
                new_id,
            } => EditOperation::VariableSwap {
                hypothesis: hypothesis.clone(),
                old_variable: old_variable.clone(),
                new_variable: new_variable.clone(),
                new_id: new_id.clone(),
            },
            EdgeOpSpec::LcSwap {
                hypothesis,
                new_characteristic,
                new_id,
                level,
            } => EditOperation::LcSwap {
                hypothesis: hypothesis.clone(),
                new_characteristic: new_characteristic.clone(),
                new_id: new_id.clone(),
                seed: self.seed(new_characteristic, *level),
            },
            EdgeOpSpec::Combine { with } => return Ok(EdgeOp::CombineWith(with.clone())),
            EdgeOpSpec::ExSituIsolate { hypothesis } => EditOperation::ExSituIsolate {
                hypothesis: hypothesis.clone(),
            },
        }))
    }

    /// The configured backend, or `kind` when given.
    pub fn backend(&self, kind: Option<BackendKind>) -> Result<Box<dyn Backend>, BackendError> {
        match kind.unwrap_or(self.config.backend.kind) {
            BackendKind::Synthetic => {
                let cfg = self.config.backend.synthetic.as_ref().ok_or_else(|| {
                    BackendError::InvalidRequest("no [backend.synthetic] table configured".into())
                })?;
                let policy = self
                    .policy
                    .clone()
                    .ok_or_else(|| BackendError::InvalidRequest("synthetic policy did not load".into()))?;
                Ok(Box::new(SyntheticBackend::new(policy, cfg.seed)))
            }
            BackendKind::Remote => Ok(Box::new(RemoteBackend::new(
                self.config.backend.remote.clone().unwrap_or_default(),
            )?)),
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(self.config.cache_dir.as_deref().unwrap_or(Path::new(".hypmix-cache")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.config.out)
    }
}

fn build_model(
    spec: &ModelSpec,
    catalog: &HypothesisCatalog,
    characteristics: &BTreeMap<String, LearnerCharacteristic>,
) -> (LearnerModel, Vec<String>) {
    let mut problems = Vec::new();
    let mut by_char: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for id in &spec.hypotheses {
        match catalog.get(id) {
            Some(h) => by_char.entry(h.characteristic.clone()).or_default().push(h.clone()),
            None => problems.push(format!("model {}: unknown hypothesis {id:?}", spec.id)),
        }
    }
    let mut m = LearnerModel::new();
    for (c, hyps) in by_char {
        let Some(ch) = characteristics.get(&c) else {
            problems.push(format!("model {}: characteristic {c:?} is not declared", spec.id));
            continue;
        };
        m = m.with_characteristic(ch.clone(), 5, hyps);
        match spec.persona.get(&c) {
            Some(&l) if (i64::from(MIN_LEVEL)..=i64::from(MAX_LEVEL)).contains(&l) => {
                m.persona.insert(c.clone(), l as u8);
            }
            Some(&l) => problems.push(format!(
                "model {}: persona.{c}: level {l} outside [{MIN_LEVEL}, {MAX_LEVEL}]",
                spec.id
            )),
            None => problems.push(format!("model {}: persona.{c}: missing persona level", spec.id)),
        }
    }
    for c in spec.persona.keys() {
        if !m.characteristics.contains_key(c) {
            problems.push(format!("model {}: persona.{c}: no hypothesis uses this characteristic", spec.id));
        }
    }
    (m, problems)
}
