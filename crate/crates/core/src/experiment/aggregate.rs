use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::environment::{canonical_actions, ActionCategory, NUM_ACTIONS};

/// Counts for one (characteristic sweep, labeling, persona level) cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub counts: [u64; NUM_ACTIONS],
    pub dropped: u64,
}

impl Cell {
    pub fn record(&mut self, action: ActionCategory) {
        self.counts[action.index()] += 1;
    }

    /// Non-dropped samples.
    pub fn valid(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.valid() + self.dropped
    }

    pub fn count(&self, action: ActionCategory) -> u64 {
        self.counts[action.index()]
    }

    pub fn count_of(&self, actions: &[ActionCategory]) -> u64 {
        actions.iter().map(|a| self.count(*a)).sum()
    }

    /// Empirical probability over non-dropped samples; `None` for an empty cell.
    pub fn probability(&self, action: ActionCategory) -> Option<f64> {
        let valid = self.valid();
        (valid > 0).then(|| self.count(action) as f64 / valid as f64)
    }

    pub fn probability_of(&self, actions: &[ActionCategory]) -> Option<f64> {
        let valid = self.valid();
        (valid > 0).then(|| self.count_of(actions) as f64 / valid as f64)
    }

    pub fn drop_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.dropped as f64 / t as f64,
        }
    }

    pub fn distribution(&self) -> Option<[f64; NUM_ACTIONS]> {
        let valid = self.valid();
        (valid > 0).then(|| self.counts.map(|c| c as f64 / valid as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    /// The characteristic whose level was swept.
    pub characteristic: String,
    pub labeling: String,
    pub level: u8,
}

/// Empirical action counts per (swept characteristic, labeling, level).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregateTable {
    cells: BTreeMap<CellKey, Cell>,
}

impl AggregateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_mut(&mut self, characteristic: &str, labeling: &str, level: u8) -> &mut Cell {
        self.cells
            .entry(CellKey {
                characteristic: characteristic.to_string(),
                labeling: labeling.to_string(),
                level,
            })
            .or_default()
    }

    pub fn cell(&self, characteristic: &str, labeling: &str, level: u8) -> Option<&Cell> {
        self.cells.get(&CellKey {
            characteristic: characteristic.to_string(),
            labeling: labeling.to_string(),
            level,
        })
    }

    /// Cells of one sweep under one labeling, ordered by level.
    pub fn levels<'a>(&'a self, characteristic: &'a str, labeling: &'a str) -> impl Iterator<Item = (u8, &'a Cell)> + 'a {
        self.cells
            .iter()
            .filter(move |(k, _)| k.characteristic == characteristic && k.labeling == labeling)
            .map(|(k, c)| (k.level, c))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &Cell)> {
        self.cells.iter()
    }

    pub fn labelings(&self) -> Vec<String> {
        let mut out: Vec<String> = self.cells.keys().map(|k| k.labeling.clone()).collect();
        out.dedup();
        out.sort();
        out.dedup();
        out
    }

    /// Human-readable summary: one line per cell with counts and drop rate.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (k, c) in &self.cells {
            let top = canonical_actions()
                .into_iter()
                .max_by_key(|a| (c.count(*a), std::cmp::Reverse(a.index())))
                .expect("non-empty");
            out.push_str(&format!(
                "{} level {:>2} [{}]: n={} dropped={} ({:.1}%) mode={}\n",
                k.characteristic,
                k.level,
                k.labeling,
                c.valid(),
                c.dropped,
                100.0 * c.drop_rate(),
                top
            ));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    #[serde(flatten)]
    key: CellKey,
    #[serde(flatten)]
    cell: Cell,
}

impl Serialize for AggregateTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.cells.iter().map(|(k, c)| Row {
            key: k.clone(),
            cell: c.clone(),
        }))
    }
}

impl<'de> Deserialize<'de> for AggregateTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(Self {
            cells: rows.into_iter().map(|r| (r.key, r.cell)).collect(),
        })
    }
}
