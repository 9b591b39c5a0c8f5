//! Experiment plans, the sweep runner, aggregation, edit-graph traversal
//! and calibration reports.

mod aggregate;
mod graph;
mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{generate, parse_action, Backend, BackendError, GenerationRequest, ResponseCache, SimulationContext};
use crate::environment::{
    sample_states_in, ActionCategory, ActionLabeling, EnvState, EnvironmentError, StateConstraints, StateDomain, StateVariable,
};
use crate::hypothesis::{ClassRegistry, CriterionKind, EvalOptions, HypothesisError, MdHyp, Relation, TestResult, MAX_LEVEL, MIN_LEVEL};
use crate::learner::{LearnerError, LearnerModel};
use crate::prompt::{Composer, PromptError};
use crate::stats::{spearman_p, spearman_rho};
use crate::util::stable_seed;

pub use aggregate::{AggregateTable, Cell, CellKey};
pub use graph::{default_tracked_pairs, EdgeDef, EdgeOp, EditGraph, GraphEdge, GraphNode, TrackedPair};
pub use report::{
    classify, classify_with, CalibrationReport, Classification, DegradationThresholds, EdgeResults, EdgeVerdict,
    ReportRow,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("unknown labeling {0:?}")]
    UnknownLabeling(String),
    #[error("hypothesis {0:?} is not in the learner model")]
    HypothesisNotInModel(String),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("backend failed {failures} times (budget {budget}): {last}")]
    BackendUnavailable {
        failures: usize,
        budget: usize,
        last: BackendError,
        /// Records completed before the abort.
        partial: Vec<RunRecord>,
    },
    #[error("criterion mismatch: {pre} before, {post} after")]
    CriterionMismatch { pre: CriterionKind, post: CriterionKind },
    #[error("incomplete results: missing {}", .0.join(", "))]
    IncompleteResults(Vec<String>),
    #[error("edit graph: {0}")]
    Graph(String),
    #[error("record file {path}: {message}")]
    Records { path: String, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn default_levels() -> Vec<u8> {
    (MIN_LEVEL..=MAX_LEVEL).collect()
}

fn default_labelings() -> Vec<String> {
    vec!["A".into(), "B".into(), "C".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Hypotheses to evaluate; empty means every hypothesis in the model.
    pub hypotheses: Vec<String>,
    /// Characteristic to sweep; by default each characteristic targeted by
    /// a hypothesis under test is swept in turn.
    pub sweep: Option<String>,
    pub levels: Vec<u8>,
    /// Level of non-swept characteristics.
    pub fixed_levels: BTreeMap<String, u8>,
    /// Level for non-swept characteristics missing from `fixed_levels`;
    /// `None` keeps the model's own persona level.
    pub default_fixed_level: Option<u8>,
    pub states_per_level: usize,
    pub samples_per_state: u32,
    pub labelings: Vec<String>,
    pub seed: u64,
    pub constraints: Option<StateConstraints>,
    /// Ceiling on concurrent backend calls.
    pub parallelism: usize,
    /// Backend errors tolerated (as dropped samples) before a run aborts.
    pub failure_budget: usize,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Re-ask once with a format reminder when a response cannot be parsed.
    pub reprompt: bool,
    pub eval: EvalOptions,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            hypotheses: Vec::new(),
            sweep: None,
            levels: default_levels(),
            fixed_levels: BTreeMap::new(),
            default_fixed_level: Some(5),
            states_per_level: 20,
            samples_per_state: 5,
            labelings: default_labelings(),
            seed: 0,
            constraints: None,
            parallelism: 8,
            failure_budget: 10,
            model_id: "gpt-4-turbo".into(),
            temperature: 1.0,
            max_tokens: 1024,
            reprompt: true,
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentPlan {
    /// Problems with the plan alone, or with it against the hypotheses it
    /// will evaluate.
    pub fn validate(&self, hypotheses: &[&MdHyp]) -> Vec<String> {
        let mut out = Vec::new();
        if self.levels.is_empty() {
            out.push("levels: must be non-empty".to_string());
        }
        for &l in &self.levels {
            if !(MIN_LEVEL..=MAX_LEVEL).contains(&l) {
                out.push(format!("levels: {l} outside [{MIN_LEVEL}, {MAX_LEVEL}]"));
            }
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.levels.len() {
            out.push("levels: duplicate level".into());
        }
        for (c, &l) in &self.fixed_levels {
            if !(MIN_LEVEL..=MAX_LEVEL).contains(&l) {
                out.push(format!("fixed_levels.{c}: {l} outside [{MIN_LEVEL}, {MAX_LEVEL}]"));
            }
        }
        if let Some(l) = self.default_fixed_level {
            if !(MIN_LEVEL..=MAX_LEVEL).contains(&l) {
                out.push(format!("default_fixed_level: {l} outside [{MIN_LEVEL}, {MAX_LEVEL}]"));
            }
        }
        if self.states_per_level == 0 {
            out.push("states_per_level: must be positive".into());
        }
        if self.samples_per_state == 0 {
            out.push("samples_per_state: must be positive".into());
        }
        if self.labelings.is_empty() {
            out.push("labelings: must be non-empty".into());
        }
        if self.parallelism == 0 {
            out.push("parallelism: must be positive".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            out.push(format!("temperature: {} must be >= 0", self.temperature));
        }
        if self.max_tokens == 0 {
            out.push("max_tokens: must be positive".into());
        }
        if let Some(a) = self.eval.alpha {
            if !(a > 0.0 && a < 1.0) {
                out.push(format!("eval.alpha: {a} outside (0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.eval.max_drop_rate) {
            out.push(format!("eval.max_drop_rate: {} outside [0, 1]", self.eval.max_drop_rate));
        }
        if self.eval.uniform_window == 0 {
            out.push("eval.uniform_window: must be positive".into());
        }
        for h in hypotheses {
            match h.relation {
                Relation::Monotonic(_) if self.levels.len() < 3 => out.push(format!(
                    "levels: monotonic hypothesis {} needs at least 3 levels, plan has {}",
                    h.id,
                    self.levels.len()
                )),
                Relation::Uniform(end) if !self.levels.contains(&end.extreme_level()) => out.push(format!(
                    "levels: uniform hypothesis {} needs level {}",
                    h.id,
                    end.extreme_level()
                )),
                _ => {}
            }
            if let Some(sweep) = &self.sweep {
                if *sweep != h.characteristic {
                    out.push(format!("sweep: {sweep} does not cover hypothesis {} on {}", h.id, h.characteristic));
                }
            }
        }
        out
    }

    /// Records a full run produces when nothing is dropped.
    pub fn expected_records(&self, sweeps: usize) -> usize {
        sweeps * self.labelings.len() * self.levels.len() * self.states_per_level * self.samples_per_state as usize
    }

    /// States sampled at a level; shared by every model run with this plan.
    pub fn states_for_level(&self, domain: &StateDomain, level: u8) -> Result<Vec<EnvState>, EnvironmentError> {
        let seed = stable_seed(&[b"states", &self.seed.to_le_bytes(), &[level]]);
        sample_states_in(domain, self.states_per_level, seed, self.constraints.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Action {
        action: ActionCategory,
        #[serde(default)]
        reprompted: bool,
    },
    Dropped {
        reason: String,
    },
}

/// One simulated decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Swept characteristic.
    pub characteristic: String,
    pub level: u8,
    pub persona: BTreeMap<String, u8>,
    pub state_index: usize,
    pub state: EnvState,
    pub labeling: String,
    pub sample_index: u64,
    /// Cache key of the request that produced the outcome.
    pub cache_key: String,
    pub outcome: Outcome,
}

/// Groups records into per-(characteristic, labeling, level) counts.
pub fn aggregate(records: &[RunRecord]) -> AggregateTable {
    let mut table = AggregateTable::new();
    for r in records {
        let cell = table.cell_mut(&r.characteristic, &r.labeling, r.level);
        match r.outcome {
            Outcome::Action { action, .. } => cell.record(action),
            Outcome::Dropped { .. } => cell.dropped += 1,
        }
    }
    table
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), ExperimentError> {
    let err = |e: &dyn std::fmt::Display| ExperimentError::Records {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(|e| err(&e))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| err(&e))?;
        w.write_all(b"\n").map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let err = |e: &dyn std::fmt::Display| ExperimentError::Records {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let f = File::open(path).map_err(|e| err(&e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| err(&e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(&format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Evaluates each hypothesis under each labeling, in that order.
pub fn evaluate_hypotheses(
    classes: &ClassRegistry,
    hypotheses: &[&MdHyp],
    table: &AggregateTable,
    labelings: &[String],
    opts: &EvalOptions,
) -> Result<Vec<TestResult>, HypothesisError> {
    let mut out = Vec::new();
    for h in hypotheses {
        for l in labelings {
            out.push(classes.evaluate(h, table, l, opts)?);
        }
    }
    Ok(out)
}

/// Secondary check for hypotheses with a trend variable: Spearman rho
/// between the state variable and the empirical probability of the
/// action set, pooled over the hypothesis's sweep. Not part of any
/// calibration verdict.
pub fn trend_test(hyp: &MdHyp, records: &[RunRecord], labeling: &str) -> Option<TestResult> {
    let variable = StateVariable::from_phrase(hyp.trend_variable.as_deref()?)?;
    let mut by_value: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for r in records {
        if r.characteristic != hyp.characteristic || r.labeling != labeling {
            continue;
        }
        if let Outcome::Action { action, .. } = r.outcome {
            let slot = by_value.entry(r.state.value_of(variable).to_bits()).or_default();
            slot.1 += 1;
            if hyp.action_set.contains(&action) {
                slot.0 += 1;
            }
        }
    }
    let xs: Vec<f64> = by_value.keys().map(|b| f64::from_bits(*b)).collect();
    let ys: Vec<f64> = by_value.values().map(|(k, n)| *k as f64 / *n as f64).collect();
    let rho = spearman_rho(&xs, &ys).ok()?;
    let p = spearman_p(rho, xs.len()).ok()?;
    Some(TestResult {
        hypothesis: format!("{} ~ {}", hyp.id, variable),
        labeling: labeling.to_string(),
        criterion: CriterionKind::Monotonic,
        statistic: rho,
        p_value: p,
        // abandonment rising with the variable is the claimed trend
        satisfied: rho > 0.0 && p <= 0.05,
        n_cells: xs.len(),
        sample_counts: Vec::new(),
        flagged_levels: Vec::new(),
    })
}

/// Executes plans against learner models.
pub struct Runner<'a> {
    composer: &'a Composer,
    backend: &'a dyn Backend,
    cache: Option<&'a ResponseCache>,
    labelings: BTreeMap<String, ActionLabeling>,
    domain: StateDomain,
    pool: rayon::ThreadPool,
    namespace: String,
}

struct Task<'p> {
    level: u8,
    labeling: &'p ActionLabeling,
    state_index: usize,
    sample_index: u64,
}

impl<'a> Runner<'a> {
    pub fn new(
        composer: &'a Composer,
        backend: &'a dyn Backend,
        cache: Option<&'a ResponseCache>,
        labelings: impl IntoIterator<Item = ActionLabeling>,
        parallelism: usize,
    ) -> Result<Self, ExperimentError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        Ok(Self {
            composer,
            backend,
            cache,
            labelings: labelings.into_iter().map(|l| (l.id().to_string(), l)).collect(),
            domain: StateDomain::default(),
            pool,
            namespace: backend.cache_namespace(),
        })
    }

    /// Samples states from `domain` instead of the default one.
    pub fn with_domain(mut self, domain: StateDomain) -> Self {
        self.domain = domain;
        self
    }

    pub fn composer(&self) -> &Composer {
        self.composer
    }

    pub fn labeling(&self, id: &str) -> Result<&ActionLabeling, ExperimentError> {
        self.labelings.get(id).ok_or_else(|| ExperimentError::UnknownLabeling(id.to_string()))
    }

    /// Hypotheses of `model` the plan evaluates, in model order.
    pub fn hypotheses_under_test<'m>(&self, plan: &ExperimentPlan, model: &'m LearnerModel) -> Result<Vec<&'m MdHyp>, ExperimentError> {
        if plan.hypotheses.is_empty() {
            return Ok(model.hypotheses().collect());
        }
        plan.hypotheses
            .iter()
            .map(|id| model.find(id).ok_or_else(|| ExperimentError::HypothesisNotInModel(id.clone())))
            .collect()
    }

    /// Characteristics swept for the given hypotheses.
    pub fn sweeps(plan: &ExperimentPlan, hypotheses: &[&MdHyp]) -> Vec<String> {
        if let Some(c) = &plan.sweep {
            return vec![c.clone()];
        }
        let mut out: Vec<String> = hypotheses.iter().map(|h| h.characteristic.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    fn check(&self, plan: &ExperimentPlan, model: &LearnerModel, hyps: &[&MdHyp]) -> Result<(), ExperimentError> {
        let mut problems = plan.validate(hyps);
        problems.extend(model.validate().into_iter().map(|v| format!("model {v}")));
        for l in &plan.labelings {
            if !self.labelings.contains_key(l) {
                problems.push(format!("labelings: unknown labeling {l:?}"));
            }
        }
        for h in hyps {
            if let Err(e) = self.composer.classes.validate_hypothesis(h) {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::InvalidPlan(problems))
        }
    }

    /// Model with the swept characteristic at `level` and every other
    /// characteristic at its fixed level.
    pub fn swept_model(plan: &ExperimentPlan, model: &LearnerModel, characteristic: &str, level: u8) -> Result<LearnerModel, ExperimentError> {
        let mut m = model.clone();
        for c in model.characteristics.keys() {
            let l = if c == characteristic {
                level
            } else if let Some(&l) = plan.fixed_levels.get(c) {
                l
            } else if let Some(l) = plan.default_fixed_level {
                l
            } else {
                continue;
            };
            m = m.with_level(c, l)?;
        }
        Ok(m)
    }

    /// Runs the plan over one characteristic sweep.
    pub fn run_sweep(&self, plan: &ExperimentPlan, model: &LearnerModel, characteristic: &str) -> Result<Vec<RunRecord>, ExperimentError> {
        let hyps = self.hypotheses_under_test(plan, model)?;
        self.check(plan, model, &hyps)?;
        self.sweep_unchecked(plan, model, characteristic)
    }

    fn sweep_unchecked(&self, plan: &ExperimentPlan, model: &LearnerModel, characteristic: &str) -> Result<Vec<RunRecord>, ExperimentError> {
        if !model.characteristics.contains_key(characteristic) {
            return Err(LearnerError::UnknownCharacteristic(characteristic.to_string()).into());
        }
        let hypothesis_ids = model.hypothesis_ids();
        let mut levels = Vec::new();
        for &level in &plan.levels {
            let m = Self::swept_model(plan, model, characteristic, level)?;
            levels.push((level, m, plan.states_for_level(&self.domain, level)?));
        }
        let labelings: Vec<&ActionLabeling> = plan.labelings.iter().map(|l| self.labeling(l)).collect::<Result<_, _>>()?;
        let mut tasks = Vec::new();
        for labeling in &labelings {
            for (li, (level, _, states)) in levels.iter().enumerate() {
                for state_index in 0..states.len() {
                    for s in 0..plan.samples_per_state {
                        tasks.push((li, Task {
                            level: *level,
                            labeling,
                            state_index,
                            sample_index: u64::from(s),
                        }));
                    }
                }
            }
        }
        let failures = AtomicUsize::new(0);
        let last_error = std::sync::Mutex::new(None);
        let results: Vec<Option<Result<RunRecord, ExperimentError>>> = self.pool.install(|| {
            tasks
                .par_iter()
                .map(|(li, task)| {
                    if failures.load(Ordering::Relaxed) > plan.failure_budget {
                        return None;
                    }
                    let (_, m, states) = &levels[*li];
                    let r = self.simulate(plan, m, &hypothesis_ids, characteristic, &states[task.state_index], task);
                    if let Ok(RunRecord {
                        outcome: Outcome::Dropped { reason },
                        ..
                    }) = &r
                    {
                        if reason.starts_with("backend") {
                            failures.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    Some(r)
                })
                .collect()
        });
        let mut records = Vec::with_capacity(results.len());
        for r in results.into_iter().flatten() {
            let rec = r?;
            if let Outcome::Dropped { reason } = &rec.outcome {
                if reason.starts_with("backend") {
                    *last_error.lock().expect("lock") = Some(reason.clone());
                }
            }
            records.push(rec);
        }
        let failed = failures.load(Ordering::Relaxed);
        if failed > plan.failure_budget {
            let last = last_error.into_inner().expect("lock").unwrap_or_default();
            return Err(ExperimentError::BackendUnavailable {
                failures: failed,
                budget: plan.failure_budget,
                last: BackendError::BackendUnavailable(last.trim_start_matches("backend: ").to_string()),
                partial: records,
            });
        }
        Ok(records)
    }

    fn simulate(
        &self,
        plan: &ExperimentPlan,
        model: &LearnerModel,
        hypothesis_ids: &[String],
        characteristic: &str,
        state: &EnvState,
        task: &Task<'_>,
    ) -> Result<RunRecord, ExperimentError> {
        let prompt = self.composer.compose(model, state, task.labeling)?;
        let context = Arc::new(SimulationContext {
            persona: model.persona.clone(),
            state: state.clone(),
            labeling: task.labeling.clone(),
            hypotheses: hypothesis_ids.to_vec(),
        });
        let request = |p| GenerationRequest {
            prompt: Arc::new(p),
            model_id: plan.model_id.clone(),
            temperature: plan.temperature,
            max_tokens: plan.max_tokens,
            sample_index: task.sample_index,
            context: Some(context.clone()),
        };
        let first = request(prompt);
        let mut cache_key = first.cache_key(&self.namespace);
        let outcome = match generate(&first, self.backend, self.cache) {
            Err(e) => Outcome::Dropped {
                reason: format!("backend: {e}"),
            },
            Ok(resp) => match parse_action(&resp.text, task.labeling) {
                Ok(p) => Outcome::Action {
                    action: p.action.category(),
                    reprompted: false,
                },
                Err(e) if !plan.reprompt => Outcome::Dropped {
                    reason: format!("parse: {e}"),
                },
                Err(_) => {
                    let second = request(first.prompt.with_reminder());
                    cache_key = second.cache_key(&self.namespace);
                    match generate(&second, self.backend, self.cache) {
                        Err(e) => Outcome::Dropped {
                            reason: format!("backend: {e}"),
                        },
                        Ok(resp) => match parse_action(&resp.text, task.labeling) {
                            Ok(p) => Outcome::Action {
                                action: p.action.category(),
                                reprompted: true,
                            },
                            Err(e) => Outcome::Dropped {
                                reason: format!("parse: {e}"),
                            },
                        },
                    }
                }
            },
        };
        Ok(RunRecord {
            characteristic: characteristic.to_string(),
            level: task.level,
            persona: model.persona.clone(),
            state_index: task.state_index,
            state: state.clone(),
            labeling: task.labeling.id().to_string(),
            sample_index: task.sample_index,
            cache_key,
            outcome,
        })
    }

    /// Runs every sweep the plan needs on `model`.
    pub fn run(&self, plan: &ExperimentPlan, model: &LearnerModel) -> Result<Vec<RunRecord>, ExperimentError> {
        let hyps = self.hypotheses_under_test(plan, model)?;
        self.check(plan, model, &hyps)?;
        let mut records = Vec::new();
        for c in Self::sweeps(plan, &hyps) {
            match self.sweep_unchecked(plan, model, &c) {
                Ok(r) => records.extend(r),
                Err(ExperimentError::BackendUnavailable {
                    failures,
                    budget,
                    last,
                    partial,
                }) => {
                    records.extend(partial);
                    return Err(ExperimentError::BackendUnavailable {
                        failures,
                        budget,
                        last,
                        partial: records,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(records)
    }

    /// Runs, aggregates and evaluates.
    pub fn run_and_evaluate(
        &self,
        plan: &ExperimentPlan,
        model: &LearnerModel,
    ) -> Result<(Vec<RunRecord>, AggregateTable, Vec<TestResult>), ExperimentError> {
        let records = self.run(plan, model)?;
        let table = aggregate(&records);
        let hyps = self.hypotheses_under_test(plan, model)?;
        let results = evaluate_hypotheses(&self.composer.classes, &hyps, &table, &plan.labelings, &plan.eval)?;
        Ok((records, table, results))
    }
}

/// Records and test results of one graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRun {
    pub node: String,
    pub records: Vec<RunRecord>,
    pub results: Vec<TestResult>,
}

/// Outcome of running every edge of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRun {
    pub nodes: Vec<NodeRun>,
    pub edges: Vec<EdgeResults>,
}

impl GraphRun {
    pub fn results_by_node(&self) -> BTreeMap<String, Vec<TestResult>> {
        self.nodes.iter().map(|n| (n.node.clone(), n.results.clone())).collect()
    }
}

impl Runner<'_> {
    /// Runs and evaluates every hypothesis of a node's model.
    pub fn run_node(&self, plan: &ExperimentPlan, graph: &EditGraph, node: &str) -> Result<NodeRun, ExperimentError> {
        let n = graph
            .node(node)
            .ok_or_else(|| ExperimentError::Graph(format!("unknown node {node:?}")))?;
        let plan = ExperimentPlan {
            hypotheses: Vec::new(),
            sweep: None,
            ..plan.clone()
        };
        let (records, _, results) = self.run_and_evaluate(&plan, &n.model)?;
        Ok(NodeRun {
            node: node.to_string(),
            records,
            results,
        })
    }

    /// Evaluates the source and target models of one edge with the same
    /// plan, so both sides see the same sampled states.
    pub fn run_edit_edge(&self, plan: &ExperimentPlan, graph: &EditGraph, edge: &str) -> Result<EdgeResults, ExperimentError> {
        let e = graph
            .edge(edge)
            .ok_or_else(|| ExperimentError::Graph(format!("unknown edge {edge:?}")))?;
        Ok(EdgeResults {
            edge: e.id.clone(),
            pre: self.run_node(plan, graph, &e.from)?.results,
            post: self.run_node(plan, graph, &e.to)?.results,
        })
    }

    /// Runs every edge, evaluating each node once.
    pub fn run_graph(&self, plan: &ExperimentPlan, graph: &EditGraph) -> Result<GraphRun, ExperimentError> {
        let mut nodes: Vec<NodeRun> = Vec::new();
        for id in graph.nodes_in_use() {
            log::info!("evaluating node {id}");
            nodes.push(self.run_node(plan, graph, id)?);
        }
        let find = |id: &str| nodes.iter().find(|n| n.node == id).map(|n| n.results.clone()).unwrap_or_default();
        let edges = graph
            .edges
            .iter()
            .map(|e| EdgeResults {
                edge: e.id.clone(),
                pre: find(&e.from),
                post: find(&e.to),
            })
            .collect();
        Ok(GraphRun { nodes, edges })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{LevelCurve, SyntheticBackend, SyntheticPolicy};
    use crate::environment::{builtin_labelings, productive_measurement_set};
    use crate::hypothesis::builtin_hypothesis;
    use crate::learner::LearnerCharacteristic;
    use crate::prompt::PromptTemplates;

    fn model() -> LearnerModel {
        LearnerModel::new().with_characteristic(
            LearnerCharacteristic::from_id("geometry_proficiency", "shape knowledge"),
            5,
            vec![builtin_hypothesis("H_G1").unwrap()],
        )
    }

    fn composer() -> Composer {
        Composer::new(PromptTemplates::default(), ClassRegistry::with_builtins())
    }

    fn rising() -> SyntheticPolicy {
        SyntheticPolicy::uniform().with_level_effect(
            "geometry_proficiency",
            &productive_measurement_set(),
            LevelCurve::Linear { slope: 0.4, intercept: -2.0 },
        )
    }

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            states_per_level: 5,
            samples_per_state: 2,
            parallelism: 4,
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn record_count_and_determinism() {
        let c = composer();
        let backend = SyntheticBackend::new(rising(), 1);
        let runner = Runner::new(&c, &backend, None, builtin_labelings(), 4).unwrap();
        let plan = small_plan();
        let a = runner.run(&plan, &model()).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.len(), plan.expected_records(1));
        let b = runner.run(&plan, &model()).unwrap();
        assert_eq!(a, b);
        let serial = Runner::new(&c, &backend, None, builtin_labelings(), 1).unwrap();
        assert_eq!(serial.run(&plan, &model()).unwrap(), a);
    }

    #[test]
    fn two_levels_rejected_for_monotonic() {
        let c = composer();
        let backend = SyntheticBackend::new(rising(), 1);
        let runner = Runner::new(&c, &backend, None, builtin_labelings(), 1).unwrap();
        let plan = ExperimentPlan {
            levels: vec![1, 10],
            ..small_plan()
        };
        assert!(matches!(runner.run(&plan, &model()), Err(ExperimentError::InvalidPlan(_))));
    }

    #[test]
    fn aggregate_examples() {
        assert!(aggregate(&[]).is_empty());
        let rec = |labeling: &str, action| RunRecord {
            characteristic: "c".into(),
            level: 3,
            persona: BTreeMap::new(),
            state_index: 0,
            state: EnvState::default(),
            labeling: labeling.into(),
            sample_index: 0,
            cache_key: String::new(),
            outcome: Outcome::Action { action, reprompted: false },
        };
        let t = aggregate(&[rec("A", ActionCategory::Exit), rec("A", ActionCategory::Exit)]);
        assert_eq!(t.cell("c", "A", 3).unwrap().probability(ActionCategory::Exit), Some(1.0));
        let t = aggregate(&[rec("A", ActionCategory::Exit), rec("C", ActionCategory::Exit)]);
        assert_eq!(t.cell("c", "A", 3).unwrap().count(ActionCategory::Exit), 1);
        assert_eq!(t.cell("c", "C", 3).unwrap().count(ActionCategory::Exit), 1);
    }

    #[test]
    fn pipeline_converges_to_softmax() {
        let c = composer();
        let policy = rising();
        let backend = SyntheticBackend::new(policy.clone(), 9);
        let runner = Runner::new(&c, &backend, None, builtin_labelings(), 8).unwrap();
        let plan = ExperimentPlan {
            levels: vec![2, 5, 9],
            states_per_level: 100,
            samples_per_state: 20,
            labelings: vec!["A".into()],
            ..ExperimentPlan::default()
        };
        let (_, table, results) = runner.run_and_evaluate(&plan, &model()).unwrap();
        assert_eq!(results.len(), 1);
        let prod = productive_measurement_set();
        for &level in &plan.levels {
            let persona = BTreeMap::from([("geometry_proficiency".to_string(), level)]);
            let analytic: f64 = prod
                .iter()
                .map(|a| policy.distribution(&persona, &EnvState::default(), 1.0)[a.index()])
                .sum();
            let empirical = table.cell("geometry_proficiency", "A", level).unwrap().probability_of(&prod).unwrap();
            assert!((analytic - empirical).abs() <= 0.03, "level {level}: {analytic} vs {empirical}");
        }
    }

    struct Failing;

    impl Backend for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn complete(&self, _: &GenerationRequest) -> Result<crate::backend::GenerationResponse, BackendError> {
            Err(BackendError::BackendUnavailable("connection refused".into()))
        }
    }

    #[test]
    fn failure_budget_aborts_with_partial_records() {
        let c = composer();
        let runner = Runner::new(&c, &Failing, None, builtin_labelings(), 2).unwrap();
        let plan = ExperimentPlan {
            failure_budget: 3,
            ..small_plan()
        };
        match runner.run(&plan, &model()) {
            Err(ExperimentError::BackendUnavailable { failures, partial, .. }) => {
                assert!(failures > 3);
                assert!(partial.iter().all(|r| matches!(r.outcome, Outcome::Dropped { .. })));
            }
            other => panic!("{other:?}"),
        }
    }

    struct Garbled;

    impl Backend for Garbled {
        fn name(&self) -> &str {
            "garbled"
        }

        fn complete(&self, r: &GenerationRequest) -> Result<crate::backend::GenerationResponse, BackendError> {
            let exit = r.context.as_ref().unwrap().labeling.category_label(ActionCategory::Exit);
            let text = if r.prompt.rendered().contains("Reminder:") {
                format!("fine\nACTION: {exit}")
            } else {
                "I would probably leave.".to_string()
            };
            Ok(crate::backend::GenerationResponse {
                text,
                finish_reason: "stop".into(),
                latency_ms: 0,
                usage: Default::default(),
            })
        }
    }

    #[test]
    fn reprompt_then_drop() {
        let c = composer();
        let runner = Runner::new(&c, &Garbled, None, builtin_labelings(), 2).unwrap();
        let recs = runner.run(&small_plan(), &model()).unwrap();
        assert!(recs.iter().all(|r| r.outcome == Outcome::Action { action: ActionCategory::Exit, reprompted: true }));
        let plan = ExperimentPlan {
            reprompt: false,
            ..small_plan()
        };
        let recs = runner.run(&plan, &model()).unwrap();
        let t = aggregate(&recs);
        assert_eq!(t.cell("geometry_proficiency", "A", 1).unwrap().drop_rate(), 1.0);
    }

    #[test]
    fn records_round_trip_through_jsonl() {
        let c = composer();
        let backend = SyntheticBackend::new(rising(), 1);
        let runner = Runner::new(&c, &backend, None, builtin_labelings(), 2).unwrap();
        let recs = runner.run(&small_plan(), &model()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }
}
