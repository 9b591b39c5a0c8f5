use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::hypothesis::CalibrationStatus;
use crate::learner::{apply_edit, EditOperation, LearnerModel};

/// Hypothesis compared across an edge; ids differ for swaps.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackedPair {
    pub pre: String,
    pub post: String,
}

/// Operation of an edge definition. `CombineWith` names another node whose
/// model is merged in.
#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum EdgeOp {
    Edit(EditOperation),
    CombineWith(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeDef {
    pub id: String,
    /// Display name; defaults to the operation name.
    pub label: Option<String>,
    pub from: String,
    pub to: String,
    pub op: EdgeOp,
    pub track: Option<Vec<TrackedPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub model: LearnerModel,
    /// `None` for roots.
    pub derived_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub id: String,
    pub label: String,
    pub from: String,
    pub to: String,
    pub op: EditOperation,
    pub track: Vec<TrackedPair>,
}

/// Models connected by edits. Every derived node's model equals the edit
/// applied to its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditGraph {
    /// Roots first, then derived nodes in build order.
    pub nodes: Vec<GraphNode>,
    /// In definition order.
    pub edges: Vec<GraphEdge>,
}

/// Hypotheses compared across `op` applied to `source`.
pub fn default_tracked_pairs(source: &LearnerModel, target: &LearnerModel, op: &EditOperation) -> Vec<TrackedPair> {
    match op {
        EditOperation::VariableSwap { hypothesis, new_id, .. } | EditOperation::LcSwap { hypothesis, new_id, .. } => {
            vec![TrackedPair {
                pre: hypothesis.clone(),
                post: new_id.clone().unwrap_or_else(|| hypothesis.clone()),
            }]
        }
        _ => source
            .hypotheses()
            .filter(|h| target.contains(&h.id))
            .map(|h| TrackedPair {
                pre: h.id.clone(),
                post: h.id.clone(),
            })
            .collect(),
    }
}

fn graph_err(msg: String) -> ExperimentError {
    ExperimentError::Graph(msg)
}

impl EditGraph {
    /// Derives every non-root node by applying its incoming edge, in
    /// topological order. Rejects cycles, unknown references and nodes
    /// with more than one incoming edge.
    pub fn build(roots: Vec<(String, LearnerModel)>, defs: Vec<EdgeDef>) -> Result<Self, ExperimentError> {
        let mut models: BTreeMap<String, LearnerModel> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (id, m) in roots {
            if models.insert(id.clone(), m).is_some() {
                return Err(graph_err(format!("duplicate node {id:?}")));
            }
            order.push(id);
        }
        let mut edge_ids = BTreeSet::new();
        let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, d) in defs.iter().enumerate() {
            if !edge_ids.insert(d.id.as_str()) {
                return Err(graph_err(format!("duplicate edge {:?}", d.id)));
            }
            if models.contains_key(&d.to) {
                return Err(graph_err(format!("edge {:?} targets root node {:?}", d.id, d.to)));
            }
            if producer.insert(d.to.as_str(), i).is_some() {
                return Err(graph_err(format!("node {:?} has more than one incoming edge", d.to)));
            }
        }
        let deps = |d: &EdgeDef| -> Vec<String> {
            let mut v = vec![d.from.clone()];
            if let EdgeOp::CombineWith(other) = &d.op {
                v.push(other.clone());
            }
            v
        };
        for d in &defs {
            for n in deps(d) {
                if !models.contains_key(&n) && !producer.contains_key(n.as_str()) {
                    return Err(graph_err(format!("edge {:?} references unknown node {n:?}", d.id)));
                }
            }
        }
        // Kahn over edges: an edge is ready once the nodes it reads exist.
        let mut pending: Vec<usize> = defs
            .iter()
            .map(|d| deps(d).iter().filter(|n| !models.contains_key(*n)).count())
            .collect();
        let mut dependents: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, d) in defs.iter().enumerate() {
            for n in deps(d) {
                if let Some((key, _)) = producer.get_key_value(n.as_str()) {
                    dependents.entry(key).or_default().push(i);
                }
            }
        }
        let mut ready: VecDeque<usize> = (0..defs.len()).filter(|&i| pending[i] == 0).collect();
        let mut edges = Vec::with_capacity(defs.len());
        let mut derived_by: BTreeMap<String, String> = BTreeMap::new();
        while let Some(i) = ready.pop_front() {
            let d = &defs[i];
            let source = &models[&d.from];
            let op = match &d.op {
                EdgeOp::Edit(op) => op.clone(),
                EdgeOp::CombineWith(other) => EditOperation::Combine {
                    other: models[other].clone(),
                },
            };
            let target = apply_edit(source, &op)?;
            let track = match &d.track {
                Some(t) => t.clone(),
                None => default_tracked_pairs(source, &target, &op),
            };
            for p in &track {
                if !source.contains(&p.pre) {
                    return Err(graph_err(format!("edge {:?}: {} is not in {:?}", d.id, p.pre, d.from)));
                }
                if !target.contains(&p.post) {
                    return Err(graph_err(format!("edge {:?}: {} is not in {:?}", d.id, p.post, d.to)));
                }
            }
            edges.push(GraphEdge {
                id: d.id.clone(),
                label: d.label.clone().unwrap_or_else(|| op.name().to_string()),
                from: d.from.clone(),
                to: d.to.clone(),
                op,
                track,
            });
            models.insert(d.to.clone(), target);
            derived_by.insert(d.to.clone(), d.id.clone());
            order.push(d.to.clone());
            for &j in dependents.get(d.to.as_str()).map(Vec::as_slice).unwrap_or_default() {
                pending[j] -= 1;
                if pending[j] == 0 {
                    ready.push_back(j);
                }
            }
        }
        if edges.len() != defs.len() {
            let stuck: Vec<&str> = defs
                .iter()
                .filter(|d| !derived_by.contains_key(&d.to))
                .map(|d| d.id.as_str())
                .collect();
            return Err(graph_err(format!("cycle through edges {}", stuck.join(", "))));
        }
        let position: BTreeMap<&str, usize> = defs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        edges.sort_by_key(|e: &GraphEdge| position[e.id.as_str()]);
        let nodes = order
            .into_iter()
            .map(|id| GraphNode {
                model: models.remove(&id).expect("node built"),
                derived_by: derived_by.get(&id).cloned(),
                id,
            })
            .collect();
        Ok(Self { nodes, edges })
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, id: &str) -> Option<&GraphEdge> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Ids of nodes an edge reads or writes, deduplicated in first-use order.
    pub fn nodes_in_use(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for e in &self.edges {
            for n in [e.from.as_str(), e.to.as_str()] {
                if seen.insert(n) {
                    out.push(n);
                }
            }
        }
        out
    }

    /// Per-node hypothesis annotations: `Calibrated` when every test of the
    /// hypothesis in that node was satisfied.
    pub fn annotate(
        &self,
        results: &BTreeMap<String, Vec<crate::hypothesis::TestResult>>,
    ) -> BTreeMap<String, BTreeMap<String, CalibrationStatus>> {
        let mut out = BTreeMap::new();
        for n in &self.nodes {
            let mut per = BTreeMap::new();
            for h in n.model.hypotheses() {
                let status = match results.get(&n.id) {
                    Some(rs) => {
                        let mine: Vec<_> = rs.iter().filter(|r| r.hypothesis == h.id).collect();
                        if !mine.is_empty() && mine.iter().all(|r| r.satisfied) {
                            CalibrationStatus::Calibrated
                        } else {
                            CalibrationStatus::Untested
                        }
                    }
                    None => h.calibration_status,
                };
                per.insert(h.id.clone(), status);
            }
            out.insert(n.id.clone(), per);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::builtin_hypothesis;
    use crate::learner::LearnerCharacteristic;

    fn root(ids: &[&str]) -> LearnerModel {
        let mut m = LearnerModel::new();
        for id in ids {
            let h = builtin_hypothesis(id).unwrap();
            let c = LearnerCharacteristic::from_id(&h.characteristic.clone(), "");
            let mut hyps: Vec<_> = m.models.get(&c.id).map(|cm| cm.hypotheses.clone()).unwrap_or_default();
            hyps.push(h);
            m = m.with_characteristic(c, 5, hyps);
        }
        m
    }

    fn edge(id: &str, from: &str, to: &str, op: EdgeOp) -> EdgeDef {
        EdgeDef {
            id: id.into(),
            label: None,
            from: from.into(),
            to: to.into(),
            op,
            track: None,
        }
    }

    #[test]
    fn builds_in_dependency_order_and_tracks_defaults() {
        let g = EditGraph::build(
            vec![("a".into(), root(&["H_G1", "H_P1"])), ("b".into(), root(&["H_G2"]))],
            vec![
                edge("late", "iso", "merged", EdgeOp::CombineWith("b".into())),
                edge(
                    "first",
                    "a",
                    "iso",
                    EdgeOp::Edit(EditOperation::ExSituIsolate {
                        hypothesis: "H_P1".into(),
                    }),
                ),
            ],
        )
        .unwrap();
        assert_eq!(g.edges[1].id, "first");
        assert_eq!(g.edges[1].label, "Ex-Situ Isolate");
        assert_eq!(g.edges[1].track, vec![TrackedPair { pre: "H_P1".into(), post: "H_P1".into() }]);
        assert_eq!(g.nodes.iter().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["a", "b", "iso", "merged"]);
        let merged = &g.node("merged").unwrap().model;
        assert!(merged.contains("H_P1") && merged.contains("H_G2"));
        assert_eq!(g.edges[0].track.len(), 1);
    }

    #[test]
    fn rejects_cycles_and_unknown_nodes() {
        let op = || EdgeOp::Edit(EditOperation::Remove { hypothesis: "H_G1".into() });
        let cyc = EditGraph::build(
            vec![("a".into(), root(&["H_G1", "H_P1"]))],
            vec![edge("e1", "x", "y", op()), edge("e2", "y", "x", op())],
        );
        assert!(matches!(cyc, Err(ExperimentError::Graph(m)) if m.contains("cycle")));
        let unknown = EditGraph::build(vec![("a".into(), root(&["H_G1"]))], vec![edge("e", "zzz", "b", op())]);
        assert!(matches!(unknown, Err(ExperimentError::Graph(m)) if m.contains("unknown")));
        let twice = EditGraph::build(
            vec![("a".into(), root(&["H_G1", "H_P1"]))],
            vec![edge("e1", "a", "b", op()), edge("e2", "a", "b", op())],
        );
        assert!(twice.is_err());
    }
}
