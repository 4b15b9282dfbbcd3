//! Raw document metadata to model input blocks: tf-idf text, multi-hot
//! affiliations and a two-column year encoding.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::graph::{CitationGraph, DocumentNode, YearSplit};
use crate::sparse::CsrMatrix;

pub const DEFAULT_MAX_FEATURES: usize = 1000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("corpus contains no usable tokens")]
    EmptyCorpus,
    #[error("document {id} year {year} lies outside window {start}..={end}")]
    YearOutOfWindow {
        id: String,
        year: i32,
        start: i32,
        end: i32,
    },
}

/// Lowercased alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Keeps the `max` highest-count keys, ties broken lexicographically, and
/// returns them in lexicographic order.
fn top_by_count(counts: HashMap<String, usize>, max: usize) -> Vec<(String, usize)> {
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    document_frequency: Vec<usize>,
    corpus_size: usize,
    max_features: usize,
}

impl Vocabulary {
    pub fn fit<S: AsRef<str>>(docs: &[S], max_features: usize) -> Result<Self, FeatureError> {
        assert!(max_features >= 1, "max_features must be positive");
        let mut df: HashMap<String, usize> = HashMap::new();
        for d in docs {
            let mut terms: Vec<String> = tokenize(d.as_ref()).collect();
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        if df.is_empty() {
            return Err(FeatureError::EmptyCorpus);
        }
        let kept = top_by_count(df, max_features);
        let index = kept
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (terms, document_frequency) = kept.into_iter().unzip();
        Ok(Self {
            terms,
            index,
            document_frequency,
            corpus_size: docs.len(),
            max_features,
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn column(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.column(term).map(|c| self.document_frequency[c])
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, column: usize) -> f64 {
        let n = self.corpus_size as f64;
        let df = self.document_frequency[column] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Raw-count tf times idf, each nonzero row L2-normalized. Unknown terms
    /// are ignored.
    pub fn transform<S: AsRef<str>>(&self, docs: &[S]) -> CsrMatrix {
        let rows = docs
            .iter()
            .map(|d| {
                let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
                for t in tokenize(d.as_ref()) {
                    if let Some(c) = self.column(&t) {
                        *tf.entry(c).or_default() += 1.0;
                    }
                }
                let mut row: Vec<(usize, f64)> =
                    tf.into_iter().map(|(c, n)| (c, n * self.idf(c))).collect();
                let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|(_, v)| *v /= norm);
                }
                row
            })
            .collect();
        CsrMatrix::from_rows(self.len(), rows)
    }
}

fn normalize_affiliation(a: &str) -> String {
    a.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffiliationVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl AffiliationVocabulary {
    /// Most frequent affiliations by number of documents listing them.
    pub fn fit<'a>(nodes: impl IntoIterator<Item = &'a DocumentNode>, max_features: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for n in nodes {
            let mut affs: Vec<String> = n
                .affiliations
                .iter()
                .map(|a| normalize_affiliation(a))
                .filter(|a| !a.is_empty())
                .collect();
            affs.sort_unstable();
            affs.dedup();
            for a in affs {
                *counts.entry(a).or_default() += 1;
            }
        }
        let names: Vec<String> = top_by_count(counts, max_features)
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize_affiliation(name)).copied()
    }

    pub fn transform<'a>(&self, nodes: impl IntoIterator<Item = &'a DocumentNode>) -> CsrMatrix {
        let rows = nodes
            .into_iter()
            .map(|n| {
                let mut cols: Vec<usize> =
                    n.affiliations.iter().filter_map(|a| self.column(a)).collect();
                cols.sort_unstable();
                cols.dedup();
                cols.into_iter().map(|c| (c, 1.0)).collect()
            })
            .collect();
        CsrMatrix::from_rows(self.len(), rows)
    }
}

/// Fits on `nodes` and encodes them in one go.
pub fn encode_affiliations(nodes: &[DocumentNode], max_features: usize) -> (CsrMatrix, AffiliationVocabulary) {
    let vocab = AffiliationVocabulary::fit(nodes, max_features);
    (vocab.transform(nodes), vocab)
}

/// Small dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Column 0: position of the year inside the window in `[0, 1]`.
/// Column 1: target-year flag.
pub fn encode_year(graph: &CitationGraph, split: &YearSplit, nodes: &[usize]) -> Result<DenseMatrix, FeatureError> {
    let start = split.window_start();
    let targets = split.target_set();
    let mut data = Vec::with_capacity(nodes.len() * 2);
    for &i in nodes {
        let n = graph.node(i);
        if n.year < start || n.year > split.target_year {
            return Err(FeatureError::YearOutOfWindow {
                id: n.id.clone(),
                year: n.year,
                start,
                end: split.target_year,
            });
        }
        data.push(f64::from(n.year - start) / f64::from(split.window_years));
        data.push(if targets.contains(&i) { 1.0 } else { 0.0 });
    }
    Ok(DenseMatrix {
        rows: nodes.len(),
        cols: 2,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub max_text_features: usize,
    pub max_affiliations: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_text_features: DEFAULT_MAX_FEATURES,
            max_affiliations: DEFAULT_MAX_FEATURES,
        }
    }
}

/// The three input blocks for every node of a split. Row `r` describes graph
/// node `nodes[r]`; prior nodes come first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub text: CsrMatrix,
    pub affiliations: CsrMatrix,
    pub year: DenseMatrix,
    pub nodes: Vec<usize>,
    pub row_index: HashMap<usize, usize>,
}

impl FeatureSet {
    /// Vocabularies are fitted on prior-window documents only, then applied
    /// to every row.
    pub fn build(graph: &CitationGraph, split: &YearSplit, cfg: FeatureConfig) -> Result<(Self, Vocabulary, AffiliationVocabulary), FeatureError> {
        let prior_docs: Vec<&str> = split
            .prior_nodes
            .iter()
            .map(|&i| graph.node(i).title_abstract.as_str())
            .collect();
        let vocab = Vocabulary::fit(&prior_docs, cfg.max_text_features)?;
        let affs = AffiliationVocabulary::fit(split.prior_nodes.iter().map(|&i| graph.node(i)), cfg.max_affiliations);

        let nodes = split.all_nodes();
        let docs: Vec<&str> = nodes.iter().map(|&i| graph.node(i).title_abstract.as_str()).collect();
        let text = vocab.transform(&docs);
        let affiliations = affs.transform(nodes.iter().map(|&i| graph.node(i)));
        let year = encode_year(graph, split, &nodes)?;
        Ok((Self::from_blocks(nodes, text, affiliations, year), vocab, affs))
    }

    pub fn from_blocks(nodes: Vec<usize>, text: CsrMatrix, affiliations: CsrMatrix, year: DenseMatrix) -> Self {
        assert_eq!(text.rows(), nodes.len());
        assert_eq!(affiliations.rows(), nodes.len());
        assert_eq!(year.rows, nodes.len());
        let row_index = nodes.iter().enumerate().map(|(r, &n)| (n, r)).collect();
        Self {
            text,
            affiliations,
            year,
            nodes,
            row_index,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.row_index.get(&node).copied()
    }

    pub fn widths(&self) -> FeatureWidths {
        FeatureWidths {
            text: self.text.cols(),
            affiliations: self.affiliations.cols(),
            year: self.year.cols,
        }
    }

    /// Rows in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureSet {
        let year = DenseMatrix {
            rows: rows.len(),
            cols: self.year.cols,
            data: rows.iter().flat_map(|&r| self.year.row(r).iter().copied()).collect(),
        };
        Self::from_blocks(
            rows.iter().map(|&r| self.nodes[r]).collect(),
            self.text.select_rows(rows),
            self.affiliations.select_rows(rows),
            year,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureWidths {
    pub text: usize,
    pub affiliations: usize,
    pub year: usize,
}
