//! On-disk graph bundle: `manifest.json`, `nodes.jsonl` (one document per
//! line) and `edges.csv` (one `citing,cited` pair per line, no header).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CitationGraph, DocumentNode, GraphError, IngestOptions};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.csv";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported bundle format version {0}")]
    UnsupportedVersion(u32),
    #[error("manifest lists {expected} {what}, found {found}")]
    ManifestMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("document id {0:?} cannot be written to an edge list")]
    UnwritableId(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub corpus: String,
    pub node_count: usize,
    pub edge_count: usize,
}

/// Raw bundle contents, before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphBundle {
    pub manifest: Manifest,
    pub nodes: Vec<DocumentNode>,
    pub edges: Vec<(String, String)>,
}

impl GraphBundle {
    pub fn new(corpus: impl Into<String>, nodes: Vec<DocumentNode>, edges: Vec<(String, String)>) -> Self {
        Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                corpus: corpus.into(),
                node_count: nodes.len(),
                edge_count: edges.len(),
            },
            nodes,
            edges,
        }
    }

    pub fn from_graph(corpus: impl Into<String>, graph: &CitationGraph) -> Self {
        let edges = graph.edge_ids().map(|(a, b)| (a.to_owned(), b.to_owned())).collect();
        Self::new(corpus, graph.nodes().to_vec(), edges)
    }

    pub fn to_graph(&self) -> Result<CitationGraph, GraphError> {
        CitationGraph::build(self.nodes.clone(), &self.edges)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn save_bundle(dir: &Path, bundle: &GraphBundle) -> Result<(), BundleError> {
    for (a, b) in &bundle.edges {
        for id in [a, b] {
            if id.is_empty() || id.contains([',', '\n', '\r']) {
                return Err(BundleError::UnwritableId(id.clone()));
            }
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join(MANIFEST_FILE);
    let mut manifest = serde_json::to_string_pretty(&bundle.manifest).expect("manifest serializes");
    manifest.push('\n');
    fs::write(&path, manifest).map_err(io_err(&path))?;

    let path = dir.join(NODES_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut out = BufWriter::new(file);
    for n in &bundle.nodes {
        let line = serde_json::to_string(n).expect("document serializes");
        writeln!(out, "{line}").map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;

    let path = dir.join(EDGES_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut out = BufWriter::new(file);
    for (a, b) in &bundle.edges {
        writeln!(out, "{a},{b}").map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;
    Ok(())
}

/// Reads and checks a bundle without building the graph.
pub fn read_bundle(dir: &Path) -> Result<GraphBundle, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| BundleError::Manifest {
        path: path.clone(),
        source,
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(BundleError::UnsupportedVersion(manifest.format_version));
    }

    let path = dir.join(NODES_FILE);
    let mut nodes = Vec::with_capacity(manifest.node_count);
    for_each_line(&path, |line, text| {
        let node = serde_json::from_str(text).map_err(|e| BundleError::Parse {
            file: NODES_FILE,
            line,
            message: e.to_string(),
        })?;
        nodes.push(node);
        Ok(())
    })?;

    let path = dir.join(EDGES_FILE);
    let mut edges = Vec::with_capacity(manifest.edge_count);
    for_each_line(&path, |line, text| {
        edges.push(parse_edge(text).ok_or_else(|| BundleError::Parse {
            file: EDGES_FILE,
            line,
            message: format!("expected `citing,cited`, got {text:?}"),
        })?);
        Ok(())
    })?;

    if nodes.len() != manifest.node_count {
        return Err(BundleError::ManifestMismatch {
            what: "nodes",
            expected: manifest.node_count,
            found: nodes.len(),
        });
    }
    if edges.len() != manifest.edge_count {
        return Err(BundleError::ManifestMismatch {
            what: "edges",
            expected: manifest.edge_count,
            found: edges.len(),
        });
    }
    Ok(GraphBundle { manifest, nodes, edges })
}

/// Strict load.
pub fn load_bundle(dir: &Path) -> Result<CitationGraph, BundleError> {
    load_bundle_with(dir, IngestOptions::default()).map(|(g, _, _)| g)
}

/// Load with explicit ingest options; also returns the manifest and the
/// number of dropped edges.
pub fn load_bundle_with(dir: &Path, opts: IngestOptions) -> Result<(CitationGraph, Manifest, usize), BundleError> {
    let bundle = read_bundle(dir)?;
    let (graph, dropped) = CitationGraph::build_with(bundle.nodes, &bundle.edges, opts)?;
    Ok((graph, bundle.manifest, dropped))
}

fn parse_edge(text: &str) -> Option<(String, String)> {
    let (a, b) = text.split_once(',')?;
    let (a, b) = (a.trim(), b.trim());
    if a.is_empty() || b.is_empty() || b.contains(',') {
        return None;
    }
    Some((a.to_owned(), b.to_owned()))
}

/// Calls `f` with the 1-based line number of every non-blank line.
fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), BundleError>,
) -> Result<(), BundleError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}
