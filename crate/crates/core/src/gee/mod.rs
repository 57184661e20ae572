//! Marginal logistic models fitted by generalized estimating equations.
//!
//! Rows are grouped into clusters (participants). Within a cluster, each row
//! carries a group key (study day) and a sub-position (slot of the day);
//! together they index the working correlation.

mod correlation;
mod fit;
mod selection;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::transitions::{DesignRow, COVARIATES};

pub use correlation::{estimate_unstructured_correlation, UnstructuredEstimate, WorkingCorrelation};
pub use fit::{fit_gee_logistic, qicc, ModelFit};
pub use selection::{backward_eliminate, Chosen, DropStep, Selection, SelectionSettings, SelectionTrace};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Independence,
    Exchangeable,
    #[default]
    Unstructured,
}

impl std::str::FromStr for CorrelationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independence" => Ok(CorrelationKind::Independence),
            "exchangeable" => Ok(CorrelationKind::Exchangeable),
            "unstructured" => Ok(CorrelationKind::Unstructured),
            other => Err(format!("unknown correlation structure {other:?}")),
        }
    }
}

/// How rows index the unstructured correlation matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotIndexing {
    /// Rows of the same day share a block indexed by slot of day; rows on
    /// different days are uncorrelated.
    #[default]
    SlotOfDay,
    /// One position per (day, slot) across the whole cluster.
    DaySlot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum QicVariant {
    #[default]
    Qicc,
    Qic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeeSettings {
    pub correlation: CorrelationKind,
    pub indexing: SlotIndexing,
    pub tolerance: f64,
    pub max_iter: usize,
    pub criterion: QicVariant,
}

impl Default for GeeSettings {
    fn default() -> Self {
        GeeSettings {
            correlation: CorrelationKind::Unstructured,
            indexing: SlotIndexing::SlotOfDay,
            tolerance: 1e-8,
            max_iter: 100,
            criterion: QicVariant::Qicc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeeError {
    #[error("need at least two clusters, got {0}")]
    TooFewClusters(usize),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("coefficients diverge (complete or quasi-complete separation)")]
    CompleteSeparation,
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),
    #[error("QICC undefined: {n_rows} rows for {n_params} parameters")]
    QiccUndefined { n_rows: usize, n_params: usize },
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("empty model")]
    EmptyModel,
}

/// Response, candidate covariates and cluster layout of one model family.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    /// `n x names.len()`; no intercept column.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Cluster index per row, rows sorted by (cluster, group, sub).
    pub cluster: Vec<usize>,
    pub group: Vec<u32>,
    pub sub: Vec<usize>,
    pub cluster_labels: Vec<String>,
}

impl Design {
    /// Builds a design from raw columns; rows are reordered by
    /// (cluster, group, sub).
    pub fn new(
        names: Vec<String>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        cluster: Vec<usize>,
        group: Vec<u32>,
        sub: Vec<usize>,
    ) -> Self {
        let n = y.len();
        assert_eq!(x.nrows(), n);
        assert_eq!(x.ncols(), names.len());
        assert!(cluster.len() == n && group.len() == n && sub.len() == n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (cluster[i], group[i], sub[i]));
        // relabel clusters densely in order of appearance
        let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in &order {
            let next = relabel.len();
            relabel.entry(cluster[i]).or_insert(next);
        }
        let cluster_labels = relabel.keys().map(|c| c.to_string()).collect();
        Design {
            x: DMatrix::from_fn(n, names.len(), |r, c| x[(order[r], c)]),
            y: DVector::from_fn(n, |r, _| y[order[r]]),
            cluster: order.iter().map(|&i| relabel[&cluster[i]]).collect(),
            group: order.iter().map(|&i| group[i]).collect(),
            sub: order.iter().map(|&i| sub[i]).collect(),
            names,
            cluster_labels,
        }
    }

    /// Design over the nine transition covariates.
    pub fn from_rows(rows: &[DesignRow]) -> Self {
        let ids: BTreeMap<&str, usize> = {
            let mut m = BTreeMap::new();
            for r in rows {
                let next = m.len();
                m.entry(r.cluster.as_str()).or_insert(next);
            }
            // ids assigned in lexicographic order of participant
            m.keys().enumerate().map(|(i, k)| (*k, i)).collect()
        };
        let n = rows.len();
        let x = DMatrix::from_fn(n, COVARIATES.len(), |r, c| rows[r].covariates[c]);
        let y = DVector::from_fn(n, |r, _| rows[r].response);
        let mut d = Design::new(
            COVARIATES.iter().map(|s| s.to_string()).collect(),
            x,
            y,
            rows.iter().map(|r| ids[r.cluster.as_str()]).collect(),
            rows.iter().map(|r| r.day).collect(),
            rows.iter().map(|r| r.slot.index()).collect(),
        );
        d.cluster_labels = ids.keys().map(|s| s.to_string()).collect();
        d
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster.last().map_or(0, |c| c + 1)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Model matrix for `terms`, in the given order.
    pub fn model_matrix(&self, terms: &[String]) -> Result<DMatrix<f64>, GeeError> {
        let cols: Vec<Option<usize>> =
            terms
                .iter()
                .map(|t| {
                    if t == INTERCEPT {
                        Ok(None)
                    } else {
                        self.column(t).map(Some).ok_or_else(|| GeeError::UnknownTerm(t.clone()))
                    }
                })
                .collect::<Result<_, _>>()?;
        Ok(DMatrix::from_fn(self.n_rows(), terms.len(), |r, j| match cols[j] {
            None => 1.0,
            Some(c) => self.x[(r, c)],
        }))
    }

    /// Intercept plus every covariate.
    pub fn full_terms(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string()).chain(self.names.iter().cloned()).collect()
    }

    /// Contiguous row ranges sharing a cluster.
    pub fn cluster_ranges(&self) -> Vec<std::ops::Range<usize>> {
        ranges_by(&self.cluster, |a, b| a == b)
    }

    /// Contiguous row ranges sharing the correlation block implied by
    /// `kind` and `indexing`, with the position of each row in the block's
    /// index space and the size of that space.
    pub(crate) fn blocks(&self, kind: CorrelationKind, indexing: SlotIndexing) -> BlockLayout {
        let n = self.n_rows();
        match kind {
            CorrelationKind::Independence => {
                BlockLayout { ranges: (0..n).map(|i| i..i + 1).collect(), position: vec![0; n], n_positions: 1 }
            }
            CorrelationKind::Exchangeable => {
                let ranges = self.cluster_ranges();
                let mut position = vec![0; n];
                for r in &ranges {
                    for (k, i) in r.clone().enumerate() {
                        position[i] = k;
                    }
                }
                let n_positions = ranges.iter().map(|r| r.len()).max().unwrap_or(0);
                BlockLayout { ranges, position, n_positions }
            }
            CorrelationKind::Unstructured => match indexing {
                SlotIndexing::SlotOfDay => {
                    let keys: Vec<(usize, u32)> = (0..n).map(|i| (self.cluster[i], self.group[i])).collect();
                    let subs: std::collections::BTreeSet<usize> = self.sub.iter().copied().collect();
                    let rank: BTreeMap<usize, usize> = subs.iter().enumerate().map(|(k, &s)| (s, k)).collect();
                    BlockLayout {
                        ranges: ranges_by(&keys, |a, b| a == b),
                        position: self.sub.iter().map(|s| rank[s]).collect(),
                        n_positions: rank.len(),
                    }
                }
                SlotIndexing::DaySlot => {
                    let keys: std::collections::BTreeSet<(u32, usize)> = (0..n).map(|i| (self.group[i], self.sub[i])).collect();
                    let rank: BTreeMap<(u32, usize), usize> = keys.iter().enumerate().map(|(k, &s)| (s, k)).collect();
                    BlockLayout {
                        ranges: self.cluster_ranges(),
                        position: (0..n).map(|i| rank[&(self.group[i], self.sub[i])]).collect(),
                        n_positions: rank.len(),
                    }
                }
            },
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    pub ranges: Vec<std::ops::Range<usize>>,
    pub position: Vec<usize>,
    pub n_positions: usize,
}

fn ranges_by<T>(keys: &[T], same: impl Fn(&T, &T) -> bool) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=keys.len() {
        if i == keys.len() || !same(&keys[i], &keys[start]) {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Interaction order of a term name: main effects 1, `A*B` 2, intercept 0.
pub fn term_order(term: &str) -> usize {
    if term == INTERCEPT {
        0
    } else {
        1 + term.matches('*').count()
    }
}
