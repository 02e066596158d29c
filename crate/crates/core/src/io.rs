//! Graph file formats: the GXL subset used by the IAM graph repository and a
//! small JSON fixture format.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("XML parse error at line {line}, column {col}: {message}")]
    Xml {
        line: u32,
        col: u32,
        message: String,
    },
    #[error("GXL structure error: {0}")]
    Structure(String),
    #[error("unsupported attribute type `{kind}` for attribute `{name}`")]
    UnsupportedAttribute { name: String, kind: String },
    #[error("edge references unknown node id `{0}`")]
    Integrity(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unrecognised graph file extension")]
    Extension { path: String },
}

fn parse_number(name: &str, node: roxmltree::Node) -> Result<f64, IoError> {
    let kind = node.tag_name().name();
    let text = node.text().unwrap_or("").trim();
    let bad = || IoError::Structure(format!("attribute `{name}` has malformed {kind} value `{text}`"));
    match kind {
        "float" | "double" => text.parse::<f64>().map_err(|_| bad()),
        "int" => text.parse::<i64>().map(|v| v as f64).map_err(|_| bad()),
        _ => Err(IoError::UnsupportedAttribute {
            name: name.to_string(),
            kind: kind.to_string(),
        }),
    }
}

/// Numeric `<attr>` children of an element, in file order.
fn numeric_attrs(el: roxmltree::Node) -> Result<Vec<(String, f64)>, IoError> {
    let mut out = Vec::new();
    for attr in el.children().filter(|c| c.has_tag_name("attr")) {
        let name = attr.attribute("name").unwrap_or("").to_string();
        let Some(value) = attr.children().find(|c| c.is_element()) else {
            return Err(IoError::Structure(format!("attribute `{name}` has no value")));
        };
        out.push((name.clone(), parse_number(&name, value)?));
    }
    Ok(out)
}

/// Picks `x`,`y` when both are present, otherwise every numeric attribute in
/// declaration order.
fn select_node_attrs(attrs: Vec<(String, f64)>) -> Vec<f64> {
    let find = |key: &str| attrs.iter().find(|(n, _)| n == key).map(|(_, v)| *v);
    match (find("x"), find("y")) {
        (Some(x), Some(y)) => vec![x, y],
        _ => attrs.into_iter().map(|(_, v)| v).collect(),
    }
}

/// Parses one GXL document. Directed edges are folded into undirected ones.
pub fn parse_gxl(text: &str) -> Result<Graph, IoError> {
    let opts = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let doc = roxmltree::Document::parse_with_options(text, opts).map_err(|e| {
        let pos = e.pos();
        IoError::Xml {
            line: pos.row,
            col: pos.col,
            message: e.to_string(),
        }
    })?;
    let mut graphs = doc.descendants().filter(|n| n.has_tag_name("graph"));
    let graph_el = graphs
        .next()
        .ok_or_else(|| IoError::Structure("no <graph> element".into()))?;
    if graphs.next().is_some() {
        return Err(IoError::Structure("more than one <graph> element".into()));
    }
    let id = graph_el.attribute("id").unwrap_or("").to_string();
    if graph_el.attribute("edgemode") == Some("directed") {
        log::warn!("graph `{id}`: directed edges folded to undirected");
    }

    let mut ids = std::collections::HashMap::new();
    let mut nodes = Vec::new();
    for node in graph_el.children().filter(|c| c.has_tag_name("node")) {
        let nid = node
            .attribute("id")
            .ok_or_else(|| IoError::Structure("node without id".into()))?;
        ids.insert(nid.to_string(), nodes.len());
        nodes.push(select_node_attrs(numeric_attrs(node)?));
    }

    let mut edges = Vec::new();
    let mut edge_attrs = Vec::new();
    for edge in graph_el.children().filter(|c| c.has_tag_name("edge")) {
        let endpoint = |key: &str| -> Result<usize, IoError> {
            let name = edge
                .attribute(key)
                .ok_or_else(|| IoError::Structure(format!("edge without `{key}`")))?;
            ids.get(name).copied().ok_or_else(|| IoError::Integrity(name.to_string()))
        };
        let (a, b) = (endpoint("from")?, endpoint("to")?);
        if a == b {
            log::warn!("graph `{id}`: dropping self-loop on node {a}");
            continue;
        }
        edges.push((a, b));
        edge_attrs.push(numeric_attrs(edge)?.into_iter().map(|(_, v)| v).collect::<Vec<_>>());
    }
    let has_edge_attrs = edge_attrs.iter().any(|a| !a.is_empty());
    Ok(Graph::new(id, nodes, edges, has_edge_attrs.then_some(edge_attrs))?)
}

#[derive(Deserialize)]
struct JsonGraph {
    #[serde(default)]
    id: String,
    nodes: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    edge_attrs: Option<Vec<Vec<f64>>>,
}

pub fn parse_graph_json(text: &str) -> Result<Graph, IoError> {
    let raw: JsonGraph = serde_json::from_str(text)?;
    let edges = raw.edges.into_iter().map(|[a, b]| (a, b)).collect();
    Ok(Graph::new(raw.id, raw.nodes, edges, raw.edge_attrs)?)
}

pub fn graph_to_json(g: &Graph) -> String {
    serde_json::to_string(g).expect("graph serialisation is infallible")
}

/// Loads a `.gxl` or `.json` graph file.
pub fn load_graph(path: &Path) -> Result<Graph, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    let mut g = match path.extension().and_then(|e| e.to_str()) {
        Some("gxl") | Some("xml") => parse_gxl(&text)?,
        Some("json") => parse_graph_json(&text)?,
        _ => {
            return Err(IoError::Extension {
                path: path.display().to_string(),
            })
        }
    };
    if g.id.is_empty() {
        g.id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODES: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<!DOCTYPE gxl SYSTEM "http://www.gupro.de/GXL/gxl-1.0.dtd">
<gxl>
<graph id="word_1" edgeids="false" edgemode="undirected">
<node id="_0"><attr name="x"><float>0.0</float></attr><attr name="y"><float>0.0</float></attr></node>
<node id="_1"><attr name="x"><float>1.0</float></attr><attr name="y"><float>1.0</float></attr></node>
<edge from="_0" to="_1"/>
<edge from="_1" to="_0"/>
</graph>
</gxl>"#;

    #[test]
    fn parses_two_node_gxl() {
        let g = parse_gxl(TWO_NODES).unwrap();
        assert_eq!(g.id, "word_1");
        assert_eq!(g.nodes, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert!(g.edge_attrs.is_none());
    }

    #[test]
    fn dangling_edge_is_integrity_error() {
        let text = TWO_NODES.replace(r#"to="_0""#, r#"to="_9""#);
        assert!(matches!(parse_gxl(&text), Err(IoError::Integrity(id)) if id == "_9"));
    }

    #[test]
    fn malformed_xml_reports_line() {
        let text = "<gxl>\n<graph id=\"a\">\n<node id=\"_0\">\n</graph></gxl>";
        match parse_gxl(text) {
            Err(IoError::Xml { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn string_attribute_unsupported() {
        let text = r#"<gxl><graph id="a"><node id="n"><attr name="symbol"><string>A</string></attr></node></graph></gxl>"#;
        assert!(matches!(parse_gxl(text), Err(IoError::UnsupportedAttribute { .. })));
    }

    #[test]
    fn int_edge_attributes_and_directed_fold() {
        let text = r#"<gxl><graph id="c" edgemode="directed">
<node id="a"><attr name="x"><int>3</int></attr><attr name="y"><int>4</int></attr></node>
<node id="b"><attr name="x"><int>5</int></attr><attr name="y"><int>6</int></attr></node>
<edge from="a" to="b"><attr name="valence"><int>2</int></attr></edge>
</graph></gxl>"#;
        let g = parse_gxl(text).unwrap();
        assert_eq!(g.nodes, vec![vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(g.edge_attrs, Some(vec![vec![2.0]]));
    }

    #[test]
    fn json_examples() {
        let g = parse_graph_json(r#"{"nodes":[[0,0]],"edges":[]}"#).unwrap();
        assert_eq!(g.num_nodes(), 1);
        let g = parse_graph_json(r#"{"nodes":[[0,0],[1,0]],"edges":[[0,1]]}"#).unwrap();
        assert_eq!((g.num_nodes(), g.edges.clone()), (2, vec![(0, 1)]));
        assert!(matches!(
            parse_graph_json(r#"{"nodes":[[0],[0,1]],"edges":[]}"#),
            Err(IoError::Graph(GraphError::Dimension { .. }))
        ));
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let g = Graph::new(
            "g",
            vec![vec![0.1 + 0.2, 1e-300], vec![std::f64::consts::PI, -7.25e17]],
            vec![(1, 0)],
            Some(vec![vec![1.0 / 3.0]]),
        )
        .unwrap();
        let back = parse_graph_json(&graph_to_json(&g)).unwrap();
        assert_eq!(back, g);
        for (a, b) in back.nodes.iter().flatten().zip(g.nodes.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
