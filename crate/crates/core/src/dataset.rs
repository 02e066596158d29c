//! Labelled graph collections: split manifests, IAM-style CXL files, and a
//! deterministic synthetic generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{Graph, NodePermutation};
use crate::io::{load_graph, IoError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset has no graphs")]
    Empty,
    #[error("keyword `{0}` has no instance in the test split")]
    MissingKeyword(String),
    #[error("{count} graph file(s) failed to load:\n{}", .failures.join("\n"))]
    Files { count: usize, failures: Vec<String> },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: String,
        line: usize,
        message: String,
    },
    #[error("no split files found in {0} (expected train/valid/test .cxl or .tsv)")]
    NoSplits(String),
    #[error("node attribute dimension differs across the dataset ({0} vs {1})")]
    Dimension(usize, usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub label: String,
}

impl LabeledGraph {
    pub fn new(graph: Graph, label: impl Into<String>) -> Self {
        Self {
            graph,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledGraph>,
    pub validation: Vec<LabeledGraph>,
    pub test: Vec<LabeledGraph>,
    /// Query classes for retrieval; each occurs in `test`.
    pub keywords: Vec<String>,
}

impl DatasetSplit {
    /// Validates the keyword invariant and a dataset-wide attribute dimension.
    pub fn new(
        train: Vec<LabeledGraph>,
        validation: Vec<LabeledGraph>,
        test: Vec<LabeledGraph>,
        keywords: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let split = Self {
            train,
            validation,
            test,
            keywords,
        };
        if split.all().next().is_none() {
            return Err(DatasetError::Empty);
        }
        let test_labels: BTreeSet<&str> = split.test.iter().map(|g| g.label.as_str()).collect();
        if let Some(k) = split.keywords.iter().find(|k| !test_labels.contains(k.as_str())) {
            return Err(DatasetError::MissingKeyword(k.clone()));
        }
        let mut dim = None;
        for g in split.all() {
            if let Some(d) = g.graph.node_dim() {
                match dim {
                    None => dim = Some(d),
                    Some(e) if e != d => return Err(DatasetError::Dimension(e, d)),
                    _ => {}
                }
            }
        }
        Ok(split)
    }

    pub fn all(&self) -> impl Iterator<Item = &LabeledGraph> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn node_dim(&self) -> Option<usize> {
        self.all().find_map(|g| g.graph.node_dim())
    }

    /// Moves a stratified `fraction` of each training class into validation.
    /// Used when a dataset ships without a validation split.
    pub fn with_holdout_validation(mut self, fraction: f64, seed: u64) -> Self {
        if !self.validation.is_empty() {
            return self;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<String, Vec<LabeledGraph>> = BTreeMap::new();
        for g in self.train.drain(..) {
            by_class.entry(g.label.clone()).or_default().push(g);
        }
        for (_, mut members) in by_class {
            members.shuffle(&mut rng);
            let hold = ((members.len() as f64) * fraction).round() as usize;
            let hold = hold.min(members.len().saturating_sub(1));
            let rest = members.split_off(hold);
            self.validation.extend(members);
            self.train.extend(rest);
        }
        self
    }

    pub fn summary(&self) -> DatasetSummary {
        let stats = |gs: &[LabeledGraph]| SplitStats {
            graphs: gs.len(),
            classes: gs.iter().map(|g| &g.label).collect::<BTreeSet<_>>().len(),
            mean_nodes: mean(gs.iter().map(|g| g.graph.num_nodes() as f64)),
            mean_edges: mean(gs.iter().map(|g| g.graph.num_edges() as f64)),
        };
        let all: Vec<LabeledGraph> = self.all().cloned().collect();
        DatasetSummary {
            train: stats(&self.train),
            validation: stats(&self.validation),
            test: stats(&self.test),
            overall: stats(&all),
            keywords: self.keywords.len(),
        }
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub graphs: usize,
    pub classes: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub train: SplitStats,
    pub validation: SplitStats,
    pub test: SplitStats,
    pub overall: SplitStats,
    pub keywords: usize,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{}/{}/{} graphs (train/validation/test), {} keywords",
            self.train.graphs, self.validation.graphs, self.test.graphs, self.keywords
        )?;
        for (name, s) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
            ("all", &self.overall),
        ] {
            writeln!(
                f,
                "{name:<11} graphs={:<6} classes={:<5} mean_nodes={:.1} mean_edges={:.1}",
                s.graphs, s.classes, s.mean_nodes, s.mean_edges
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub graphs_per_class: usize,
    /// Inclusive node count range.
    pub node_range: (usize, usize),
    /// Standard deviation of the Gaussian position noise (positions layout).
    pub jitter: f64,
    /// Upper bound on random node insertions/deletions per instance.
    pub max_node_edits: usize,
    pub knn: usize,
    pub layout: Layout,
    pub seed: u64,
}

/// How classes differ in a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Each class has its own random node positions; edges are k-NN.
    #[default]
    Positions,
    /// Every instance has fresh uniform positions; class `c` links each node
    /// to its `c + 1` nearest neighbours. Classes differ only in structure.
    Neighbours,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "positions" => Ok(Layout::Positions),
            "neighbours" | "neighbors" => Ok(Layout::Neighbours),
            other => Err(format!("unknown layout `{other}` (expected positions or neighbours)")),
        }
    }
}

impl SyntheticConfig {
    pub fn new(
        classes: usize,
        graphs_per_class: usize,
        node_range: (usize, usize),
        jitter: f64,
        seed: u64,
    ) -> Self {
        Self {
            classes,
            graphs_per_class,
            node_range,
            jitter,
            max_node_edits: 2,
            knn: 3,
            layout: Layout::Positions,
            seed,
        }
    }
}

/// Undirected k-nearest-neighbour edges over 2-d points.
pub fn knn_edges(points: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for (i, p) in points.iter().enumerate() {
        let mut others: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges.into_iter().collect()
}

fn jitter_points<R: Rng + ?Sized>(pts: &mut [Vec<f64>], noise: &Normal<f64>, rng: &mut R) {
    for p in pts {
        p[0] += noise.sample(rng);
        p[1] += noise.sample(rng);
    }
}

/// Shuffles node order and normalises positions.
fn finish<R: Rng + ?Sized>(id: String, pts: Vec<Vec<f64>>, edges: Vec<(usize, usize)>, rng: &mut R) -> Graph {
    let g = Graph::new(id, pts, edges, None).expect("generated graph is simple");
    shuffled(&g, rng).normalize_positions().expect("2-d positions")
}

/// Labelled random graphs in `cfg.classes` classes (see [`Layout`]). Node
/// order is shuffled and positions normalised per graph. Splits each class
/// 60/20/20 into train/validation/test.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> DatasetSplit {
    assert!(cfg.classes >= 2, "synthetic datasets need at least two classes");
    assert!(cfg.node_range.0 >= 2 && cfg.node_range.0 <= cfg.node_range.1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.jitter.max(0.0)).expect("finite jitter");
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..cfg.classes {
        let label = format!("class{class:02}");
        let mut members = Vec::with_capacity(cfg.graphs_per_class);
        match cfg.layout {
            Layout::Positions => {
                let n = rng.random_range(cfg.node_range.0..=cfg.node_range.1);
                let proto: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
                for inst in 0..cfg.graphs_per_class {
                    let mut pts = proto.clone();
                    let edits = rng.random_range(0..=cfg.max_node_edits);
                    for _ in 0..edits {
                        if rng.random_bool(0.5) && pts.len() > 2 {
                            let victim = rng.random_range(0..pts.len());
                            pts.remove(victim);
                        } else {
                            pts.push(vec![rng.random::<f64>(), rng.random::<f64>()]);
                        }
                    }
                    jitter_points(&mut pts, &noise, &mut rng);
                    let edges = knn_edges(&pts, cfg.knn);
                    members.push(LabeledGraph::new(finish(format!("{label}_{inst:03}"), pts, edges, &mut rng), label.clone()));
                }
            }
            Layout::Neighbours => {
                for inst in 0..cfg.graphs_per_class {
                    let n = rng.random_range(cfg.node_range.0..=cfg.node_range.1);
                    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
                    let edges = knn_edges(&pts, class + 1);
                    members.push(LabeledGraph::new(finish(format!("{label}_{inst:03}"), pts, edges, &mut rng), label.clone()));
                }
            }
        }
        let n_test = (cfg.graphs_per_class as f64 * 0.2).round().max(1.0) as usize;
        let n_val = (cfg.graphs_per_class as f64 * 0.2).round() as usize;
        let rest = members.split_off(n_test.min(members.len()));
        test.extend(members);
        let mut rest = rest;
        let tr = rest.split_off(n_val.min(rest.len()));
        validation.extend(rest);
        train.extend(tr);
    }
    let keywords = (0..cfg.classes).map(|c| format!("class{c:02}")).collect();
    DatasetSplit::new(train, validation, test, keywords).expect("synthetic split is consistent")
}

/// Convenience wrapper with the default edit budget and k = 3.
pub fn generate_synthetic_dataset(
    classes: usize,
    graphs_per_class: usize,
    node_range: (usize, usize),
    jitter: f64,
    seed: u64,
) -> DatasetSplit {
    generate_synthetic(&SyntheticConfig::new(classes, graphs_per_class, node_range, jitter, seed))
}

/// A random isomorphic copy of `g`, for permutation-invariance checks.
pub fn shuffled<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Graph {
    g.permute(&NodePermutation::random(g.num_nodes(), rng)).expect("matching size")
}

// ---------------------------------------------------------------------------
// Loaders

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub split: Option<String>,
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads `path<TAB>label[<TAB>split]` lines; `#` starts a comment.
pub fn parse_manifest(text: &str, base: &Path, source: &str) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(DatasetError::Manifest {
                path: source.to_string(),
                line: i + 1,
                message: "expected `path<TAB>label[<TAB>split]`".into(),
            });
        }
        out.push(ManifestEntry {
            path: resolve(base, cols[0]),
            label: cols[1].to_string(),
            split: cols.get(2).map(|s| s.to_string()),
        });
    }
    Ok(out)
}

/// Reads the `<print file=".." class=".."/>` entries of an IAM CXL file.
pub fn parse_cxl(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| IoError::Xml {
        line: e.pos().row,
        col: e.pos().col,
        message: e.to_string(),
    })?;
    Ok(doc
        .descendants()
        .filter(|n| n.has_tag_name("print"))
        .filter_map(|n| {
            Some(ManifestEntry {
                path: resolve(base, n.attribute("file")?),
                label: n.attribute("class").unwrap_or("").to_string(),
                split: None,
            })
        })
        .collect())
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| {
        DatasetError::Io(IoError::File {
            path: path.display().to_string(),
            source,
        })
    })
}

fn read_entries(path: &Path, graph_root: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let text = read_text(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("cxl") | Some("xml") => parse_cxl(&text, graph_root),
        _ => parse_manifest(&text, graph_root, &path.display().to_string()),
    }
}

fn load_entries(entries: &[ManifestEntry], failures: &mut Vec<String>) -> Vec<LabeledGraph> {
    entries
        .iter()
        .filter_map(|e| match load_graph(&e.path) {
            Ok(g) => Some(LabeledGraph::new(g, e.label.clone())),
            Err(err @ IoError::File { .. }) => {
                failures.push(format!("  {err}"));
                None
            }
            Err(err) => {
                failures.push(format!("  {}: {err}", e.path.display()));
                None
            }
        })
        .collect()
}

/// Loads a dataset from either a manifest file with a split column or a
/// directory holding `train`, `valid`/`validation` and `test` split files
/// (`.cxl` or `.tsv`). Relative graph paths resolve against `graph_root`,
/// defaulting to the manifest's directory.
pub fn load_dataset(location: &Path, graph_root: Option<&Path>) -> Result<DatasetSplit, DatasetError> {
    let mut splits: BTreeMap<&str, Vec<ManifestEntry>> = BTreeMap::new();
    if location.is_dir() {
        let root = graph_root.unwrap_or(location);
        for (split, stems) in [
            ("train", &["train"][..]),
            ("validation", &["valid", "validation", "val"][..]),
            ("test", &["test"][..]),
        ] {
            let found = stems
                .iter()
                .flat_map(|s| ["cxl", "tsv"].map(|ext| location.join(format!("{s}.{ext}"))))
                .find(|p| p.is_file());
            if let Some(p) = found {
                splits.insert(split, read_entries(&p, root)?);
            }
        }
        if splits.is_empty() {
            return Err(DatasetError::NoSplits(location.display().to_string()));
        }
    } else {
        let root = graph_root
            .map(Path::to_path_buf)
            .unwrap_or_else(|| location.parent().unwrap_or(Path::new(".")).to_path_buf());
        for e in read_entries(location, &root)? {
            let split = match e.split.as_deref() {
                Some("valid") | Some("validation") | Some("val") => "validation",
                Some("test") => "test",
                _ => "train",
            };
            splits.entry(split).or_default().push(e);
        }
    }
    if splits.values().all(Vec::is_empty) {
        return Err(DatasetError::Empty);
    }
    let mut failures = Vec::new();
    let mut take = |k: &str| load_entries(splits.get(k).map(Vec::as_slice).unwrap_or(&[]), &mut failures);
    let train = take("train");
    let validation = take("validation");
    let test = take("test");
    if !failures.is_empty() {
        return Err(DatasetError::Files {
            count: failures.len(),
            failures,
        });
    }
    let keywords: Vec<String> = test
        .iter()
        .map(|g| g.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    DatasetSplit::new(train, validation, test, keywords)
}
