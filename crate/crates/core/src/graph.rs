//! Citation graph storage, causal year splitting and per-year trend labels.
//!
//! Edges always point from the citing document to the cited one. The cited
//! document may never be younger than the citing one, which is what makes the
//! prior/target decomposition in [`YearSplit`] well defined.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge {citing} -> {cited} references an unknown document")]
    UnknownEndpoint { citing: String, cited: String },
    #[error("document {0} cites itself")]
    SelfCitation(String),
    #[error("edge {citing} ({citing_year}) -> {cited} ({cited_year}) cites a newer document")]
    AnticausalEdge {
        citing: String,
        cited: String,
        citing_year: i32,
        cited_year: i32,
    },
    #[error("duplicate edge {citing} -> {cited}")]
    DuplicateEdge { citing: String, cited: String },
    #[error("duplicate document id {0}")]
    DuplicateNode(String),
    #[error("document {id} has year {year} outside the corpus range {start}..={end}")]
    YearOutOfRange {
        id: String,
        year: i32,
        start: i32,
        end: i32,
    },
    #[error("no document published in target year {0}")]
    EmptyTargetYear(i32),
    #[error("window must span at least one year, got {0}")]
    InvalidWindow(i32),
}

/// One publication and its raw metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentNode {
    pub id: String,
    pub year: i32,
    pub citation_count: u64,
    pub title_abstract: String,
    #[serde(default)]
    pub affiliations: Vec<String>,
}

impl DocumentNode {
    pub fn new(id: impl Into<String>, year: i32, citation_count: u64) -> Self {
        Self {
            id: id.into(),
            year,
            citation_count,
            title_abstract: String::new(),
            affiliations: Vec::new(),
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.title_abstract = text.into();
        self
    }

    pub fn with_affiliations<S: Into<String>>(mut self, affs: impl IntoIterator<Item = S>) -> Self {
        self.affiliations = affs.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestMode {
    /// Reject the whole graph on the first bad edge.
    Strict,
    /// Drop bad edges and count them.
    Lenient,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub mode: IngestMode,
    /// Inclusive corpus year range; `None` accepts any year.
    pub year_range: Option<(i32, i32)>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            mode: IngestMode::Strict,
            year_range: None,
        }
    }
}

/// Validated directed citation graph. Edges are stored as node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationGraph {
    nodes: Vec<DocumentNode>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
}

impl CitationGraph {
    /// Strict ingest.
    pub fn build<S: AsRef<str>>(
        nodes: Vec<DocumentNode>,
        edges: &[(S, S)],
    ) -> Result<Self, GraphError> {
        Self::build_with(nodes, edges, IngestOptions::default()).map(|(g, _)| g)
    }

    /// Ingest with explicit options. Returns the graph and the number of
    /// dropped edges (always zero in strict mode).
    pub fn build_with<S: AsRef<str>>(
        nodes: Vec<DocumentNode>,
        edges: &[(S, S)],
        opts: IngestOptions,
    ) -> Result<(Self, usize), GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if let Some((start, end)) = opts.year_range {
                if n.year < start || n.year > end {
                    return Err(GraphError::YearOutOfRange {
                        id: n.id.clone(),
                        year: n.year,
                        start,
                        end,
                    });
                }
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        let mut dropped = 0usize;
        for (citing, cited) in edges {
            let (citing, cited) = (citing.as_ref(), cited.as_ref());
            match check_edge(&nodes, &index, &seen, citing, cited) {
                Ok(pair) => {
                    seen.insert(pair);
                    kept.push(pair);
                }
                Err(e) => match opts.mode {
                    IngestMode::Strict => return Err(e),
                    IngestMode::Lenient => dropped += 1,
                },
            }
        }

        Ok((
            Self {
                nodes,
                index,
                edges: kept,
            },
            dropped,
        ))
    }

    pub fn nodes(&self) -> &[DocumentNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &DocumentNode {
        &self.nodes[idx]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(citing, cited)` node indices, in ingest order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Edges as `(citing_id, cited_id)` pairs.
    pub fn edge_ids(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges
            .iter()
            .map(|&(a, b)| (self.nodes[a].id.as_str(), self.nodes[b].id.as_str()))
    }

    pub fn year_range(&self) -> Option<(i32, i32)> {
        let min = self.nodes.iter().map(|n| n.year).min()?;
        let max = self.nodes.iter().map(|n| n.year).max()?;
        Some((min, max))
    }

    /// Prior graph `[target - window, target)` plus the target year.
    ///
    /// Target-to-target edges are dropped and counted in
    /// [`YearSplit::dropped_target_edges`].
    pub fn split_by_year(&self, target_year: i32, window_years: i32) -> Result<YearSplit, GraphError> {
        if window_years < 1 {
            return Err(GraphError::InvalidWindow(window_years));
        }
        let start = target_year - window_years;
        let mut prior = Vec::new();
        let mut target = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.year == target_year {
                target.push(i);
            } else if n.year >= start && n.year < target_year {
                prior.push(i);
            }
        }
        if target.is_empty() {
            return Err(GraphError::EmptyTargetYear(target_year));
        }
        let in_prior: HashSet<usize> = prior.iter().copied().collect();
        let in_target: HashSet<usize> = target.iter().copied().collect();

        let mut prior_edges = Vec::new();
        let mut target_edges = Vec::new();
        let mut dropped = 0;
        for &(a, b) in &self.edges {
            match (in_prior.contains(&a), in_target.contains(&a)) {
                (true, _) if in_prior.contains(&b) => prior_edges.push((a, b)),
                (_, true) if in_prior.contains(&b) => target_edges.push((a, b)),
                (_, true) if in_target.contains(&b) => dropped += 1,
                // Causality rules out prior -> target; anything else leaves the window.
                _ => {}
            }
        }

        Ok(YearSplit {
            target_year,
            window_years,
            prior_nodes: prior,
            target_nodes: target,
            prior_edges,
            target_edges,
            dropped_target_edges: dropped,
        })
    }

    /// Per-year nearest-rank threshold labeling over `node_ids`.
    pub fn label_by_percentile(&self, node_ids: &[usize], percentile: f64) -> TrendLabels {
        assert!(
            percentile > 0.0 && percentile < 1.0,
            "percentile must lie in (0, 1), got {percentile}"
        );
        let mut by_year: BTreeMap<i32, Vec<u64>> = BTreeMap::new();
        for &i in node_ids {
            let n = &self.nodes[i];
            by_year.entry(n.year).or_default().push(n.citation_count);
        }
        let thresholds: BTreeMap<i32, u64> = by_year
            .into_iter()
            .map(|(y, counts)| (y, nearest_rank(counts, percentile)))
            .collect();
        let labels = node_ids
            .iter()
            .map(|&i| {
                let n = &self.nodes[i];
                (i, n.citation_count > thresholds[&n.year])
            })
            .collect();
        TrendLabels {
            labels,
            percentile,
            per_year_thresholds: thresholds,
        }
    }
}

fn check_edge(
    nodes: &[DocumentNode],
    index: &HashMap<String, usize>,
    seen: &HashSet<(usize, usize)>,
    citing: &str,
    cited: &str,
) -> Result<(usize, usize), GraphError> {
    let (Some(&a), Some(&b)) = (index.get(citing), index.get(cited)) else {
        return Err(GraphError::UnknownEndpoint {
            citing: citing.to_owned(),
            cited: cited.to_owned(),
        });
    };
    if a == b {
        return Err(GraphError::SelfCitation(citing.to_owned()));
    }
    if nodes[b].year > nodes[a].year {
        return Err(GraphError::AnticausalEdge {
            citing: citing.to_owned(),
            cited: cited.to_owned(),
            citing_year: nodes[a].year,
            cited_year: nodes[b].year,
        });
    }
    if seen.contains(&(a, b)) {
        return Err(GraphError::DuplicateEdge {
            citing: citing.to_owned(),
            cited: cited.to_owned(),
        });
    }
    Ok((a, b))
}

/// k-th smallest value with k = ceil(p * n), 1-based.
fn nearest_rank(mut counts: Vec<u64>, p: f64) -> u64 {
    counts.sort_unstable();
    let n = counts.len();
    // Guard against p * n landing a hair above an integer.
    let k = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    counts[k.min(n) - 1]
}

/// Causal partition of a year window. All ids are node indices of the
/// graph the split was taken from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YearSplit {
    pub target_year: i32,
    pub window_years: i32,
    pub prior_nodes: Vec<usize>,
    pub target_nodes: Vec<usize>,
    /// Both endpoints in the prior set.
    pub prior_edges: Vec<(usize, usize)>,
    /// Citing endpoint in the target set, cited endpoint in the prior set.
    pub target_edges: Vec<(usize, usize)>,
    pub dropped_target_edges: usize,
}

impl YearSplit {
    pub fn window_start(&self) -> i32 {
        self.target_year - self.window_years
    }

    pub fn node_count(&self) -> usize {
        self.prior_nodes.len() + self.target_nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.prior_edges.len() + self.target_edges.len()
    }

    pub fn prior_set(&self) -> BTreeSet<usize> {
        self.prior_nodes.iter().copied().collect()
    }

    pub fn target_set(&self) -> BTreeSet<usize> {
        self.target_nodes.iter().copied().collect()
    }

    /// All split nodes, prior first.
    pub fn all_nodes(&self) -> Vec<usize> {
        self.prior_nodes
            .iter()
            .chain(&self.target_nodes)
            .copied()
            .collect()
    }

    /// Same split keeping only the edges for which `keep` returns true.
    pub fn retain_edges(&self, mut keep: impl FnMut(usize, usize) -> bool) -> YearSplit {
        YearSplit {
            prior_edges: self
                .prior_edges
                .iter()
                .copied()
                .filter(|&(a, b)| keep(a, b))
                .collect(),
            target_edges: self
                .target_edges
                .iter()
                .copied()
                .filter(|&(a, b)| keep(a, b))
                .collect(),
            ..self.clone()
        }
    }
}

/// Binary trend labels keyed by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendLabels {
    pub labels: BTreeMap<usize, bool>,
    pub percentile: f64,
    pub per_year_thresholds: BTreeMap<i32, u64>,
}

impl TrendLabels {
    pub fn get(&self, node: usize) -> Option<bool> {
        self.labels.get(&node).copied()
    }

    pub fn positives(&self) -> usize {
        self.labels.values().filter(|&&l| l).count()
    }

    /// Labels for `nodes` in order; panics on unlabeled nodes.
    pub fn for_nodes(&self, nodes: &[usize]) -> Vec<bool> {
        nodes.iter().map(|n| self.labels[n]).collect()
    }
}
