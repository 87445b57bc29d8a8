//! Multi-relation graph model: node features, one undirected adjacency per
//! relation and a partial label vector.

mod io;
mod split;

pub use io::{load_graph, save_graph, GraphMeta};
pub use split::{resample_imbalance, stratified_split, ResampleSpec, SplitAssignment, SplitTag};

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Fraud,
    Unknown,
}

impl Label {
    pub fn from_code(code: i64) -> Option<Label> {
        match code {
            0 => Some(Label::Benign),
            1 => Some(Label::Fraud),
            -1 => Some(Label::Unknown),
            _ => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Label::Benign => 0,
            Label::Fraud => 1,
            Label::Unknown => -1,
        }
    }

    /// Class index for labeled nodes: 0 benign, 1 fraud.
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Benign => Some(0),
            Label::Fraud => Some(1),
            Label::Unknown => None,
        }
    }

    pub fn from_class(class: usize) -> Label {
        if class == 0 {
            Label::Benign
        } else {
            Label::Fraud
        }
    }
}

/// Symmetric adjacency in CSR form: sorted, deduplicated neighbour lists and
/// no self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationAdjacency {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    degrees: Vec<usize>,
}

impl RelationAdjacency {
    /// Builds the undirected adjacency of `edges` over `num_nodes` nodes.
    /// Each pair is stored in both directions; duplicates and self-loops are
    /// dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Index(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        Ok(Self::from_lists(lists))
    }

    fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        let mut degrees = Vec::with_capacity(lists.len());
        offsets.push(0);
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
            degrees.push(list.len());
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        RelationAdjacency {
            offsets,
            indices,
            degrees,
        }
    }

    /// Union of several adjacencies over the same node set.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a RelationAdjacency>) -> Self {
        let mut lists: Vec<Vec<usize>> = Vec::new();
        for adj in parts {
            if lists.is_empty() {
                lists = vec![Vec::new(); adj.num_nodes()];
            }
            for (i, list) in lists.iter_mut().enumerate() {
                list.extend_from_slice(adj.neighbors(i));
            }
        }
        Self::from_lists(lists)
    }

    pub fn num_nodes(&self) -> usize {
        self.degrees.len()
    }

    /// Number of stored (directed) entries; twice the undirected edge count.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Each undirected edge once, as `(lo, hi)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| j > i)
                .map(move |&j| (i, j))
        })
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut lists = vec![Vec::new(); self.num_nodes()];
        for i in 0..self.num_nodes() {
            lists[perm[i]] = self.neighbors(i).iter().map(|&j| perm[j]).collect();
        }
        Self::from_lists(lists)
    }

    /// Column-stochastic transition matrix `A D^-1`: entry `(i, j)` is
    /// `1 / deg(j)` for every edge. Zero-degree columns stay empty and are
    /// reported as dangling.
    pub fn row_normalize(&self) -> TransitionMatrix {
        let values = self
            .indices
            .iter()
            .map(|&j| 1.0 / self.degrees[j] as f64)
            .collect();
        let dangling = (0..self.num_nodes())
            .filter(|&i| self.degrees[i] == 0)
            .collect();
        TransitionMatrix {
            offsets: self.offsets.clone(),
            indices: self.indices.clone(),
            values,
            dangling,
        }
    }
}

/// Sparse `A D^-1` in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    dangling: Vec<usize>,
}

impl TransitionMatrix {
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dangling(&self) -> &[usize] {
        &self.dangling
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.offsets[i]..self.offsets[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `y = A' x`, rows in index order.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_nodes()];
        for i in 0..self.num_nodes() {
            for (j, v) in self.row(i) {
                sums[j] += v;
            }
        }
        sums
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.num_nodes();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRelationGraph {
    features: Matrix,
    relations: Vec<RelationAdjacency>,
    relation_names: Vec<String>,
    labels: Vec<Label>,
}

impl MultiRelationGraph {
    pub fn new(
        features: Matrix,
        relations: Vec<RelationAdjacency>,
        relation_names: Vec<String>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Config(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if relations.is_empty() {
            return Err(Error::Config("graph needs at least one relation".into()));
        }
        if relations.len() != relation_names.len() {
            return Err(Error::Config(format!(
                "{} relations but {} relation names",
                relations.len(),
                relation_names.len()
            )));
        }
        if let Some((name, adj)) = relation_names
            .iter()
            .zip(&relations)
            .find(|(_, a)| a.num_nodes() != n)
        {
            return Err(Error::Config(format!(
                "relation {name} covers {} nodes, expected {n}",
                adj.num_nodes()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Numeric("features contain NaN or infinite values".into()));
        }
        Ok(MultiRelationGraph {
            features,
            relations,
            relation_names,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn relations(&self) -> &[RelationAdjacency] {
        &self.relations
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn relation(&self, name: &str) -> Option<&RelationAdjacency> {
        self.relation_names
            .iter()
            .position(|r| r == name)
            .map(|i| &self.relations[i])
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != Label::Unknown).count()
    }

    pub fn class_count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn union_adjacency(&self) -> RelationAdjacency {
        RelationAdjacency::union(&self.relations)
    }

    /// Same topology and features with a different label vector.
    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.relations.clone(),
            self.relation_names.clone(),
            labels,
        )
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes() {
            return Err(Error::shape(
                "with_features",
                format!("{} rows for {} nodes", features.rows(), self.num_nodes()),
            ));
        }
        Self::new(
            features,
            self.relations.clone(),
            self.relation_names.clone(),
            self.labels.clone(),
        )
    }

    /// Relabels every node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let features = self.features.select_rows(&inverse);
        let labels = inverse.iter().map(|&i| self.labels[i]).collect();
        MultiRelationGraph {
            features,
            relations: self.relations.iter().map(|a| a.permuted(perm)).collect(),
            relation_names: self.relation_names.clone(),
            labels,
        }
    }
}
