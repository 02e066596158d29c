//! Retrieval and verification metrics.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("query has no relevant item in the gallery")]
    NoRelevant,
    #[error("no queries")]
    NoQueries,
    #[error("distance matrix is {rows}x{cols}, expected {queries}x{gallery}")]
    Shape { rows: usize, cols: usize, queries: usize, gallery: usize },
    #[error("need both positive and negative examples")]
    SingleClass,
    #[error("scores and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("cannot sample: {0}")]
    Sampling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One ranking per query instance.
    Individual,
    /// One ranking per label, using the minimum distance over its queries.
    Combined,
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "individual" => Ok(Protocol::Individual),
            "combined" => Ok(Protocol::Combined),
            other => Err(format!("unknown protocol `{other}` (expected individual or combined)")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Individual => "individual",
            Protocol::Combined => "combined",
        })
    }
}

/// Gallery indices by ascending distance (ties by index) with relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub order: Vec<usize>,
    pub relevant: Vec<bool>,
}

impl RankedList {
    /// Ranks every gallery item not in `exclude`.
    pub fn from_distances(distances: &[f64], relevant: &[bool], exclude: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..distances.len()).filter(|j| !exclude.contains(j)).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let relevant = order.iter().map(|&j| relevant[j]).collect();
        Self { order, relevant }
    }
}

/// `sum_n P@n * rel(n) / |rel|`.
pub fn average_precision(ranking: &RankedList) -> Result<f64, EvalError> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in ranking.relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(EvalError::NoRelevant);
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_query: Vec<QueryAp>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    /// Queries without any relevant gallery item.
    #[serde(default)]
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplet_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation is infallible")
    }

    /// Plain-text summary, values in percent.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        if let Some(m) = self.map {
            let p = self.protocol.map(|p| p.to_string()).unwrap_or_default();
            rows.push((format!("mAP ({p})"), format!("{:.2}", 100.0 * m)));
            rows.push(("queries".into(), format!("{} ({} skipped)", self.per_query.len(), self.skipped)));
        }
        if let Some(a) = self.pair_auc {
            rows.push(("pair AUC".into(), format!("{:.2}", 100.0 * a)));
        }
        if let Some(a) = self.triplet_accuracy {
            rows.push(("triplet accuracy".into(), format!("{:.2}", 100.0 * a)));
        }
        if let Some(s) = self.seed {
            rows.push(("seed".into(), s.to_string()));
        }
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<w$} | value\n{}-+-{}\n", "metric", "-".repeat(w), "-".repeat(10));
        for (k, v) in rows {
            out.push_str(&format!("{k:<w$} | {v}\n"));
        }
        out
    }
}

/// mAP of a query-by-gallery distance matrix.
///
/// `query_in_gallery[i]` names the gallery position of query `i` when the
/// query set is part of the gallery; those positions are left out of the
/// query's ranking when `exclude_self` is set. Queries with no relevant item
/// are skipped and counted.
pub fn mean_average_precision(
    distances: &[Vec<f64>],
    query_labels: &[String],
    gallery_labels: &[String],
    protocol: Protocol,
    query_in_gallery: &[Option<usize>],
    exclude_self: bool,
) -> Result<EvalReport, EvalError> {
    let (q, g) = (query_labels.len(), gallery_labels.len());
    if q == 0 {
        return Err(EvalError::NoQueries);
    }
    if distances.len() != q || distances.iter().any(|r| r.len() != g) || query_in_gallery.len() != q {
        return Err(EvalError::Shape {
            rows: distances.len(),
            cols: distances.first().map_or(0, Vec::len),
            queries: q,
            gallery: g,
        });
    }
    let own = |i: usize| -> Vec<usize> {
        if exclude_self {
            query_in_gallery[i].into_iter().collect()
        } else {
            vec![]
        }
    };
    // (name, combined distances, excluded gallery positions, label)
    let mut rankings: Vec<(String, Vec<f64>, Vec<usize>, &String)> = Vec::new();
    match protocol {
        Protocol::Individual => {
            for i in 0..q {
                rankings.push((format!("{i}:{}", query_labels[i]), distances[i].clone(), own(i), &query_labels[i]));
            }
        }
        Protocol::Combined => {
            let mut groups: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
            for (i, l) in query_labels.iter().enumerate() {
                groups.entry(l).or_default().push(i);
            }
            for (label, members) in groups {
                let mut d = vec![f64::INFINITY; g];
                let mut excluded = Vec::new();
                for &i in &members {
                    for j in 0..g {
                        d[j] = d[j].min(distances[i][j]);
                    }
                    excluded.extend(own(i));
                }
                rankings.push((label.clone(), d, excluded, label));
            }
        }
    }
    let mut report = EvalReport {
        protocol: Some(protocol),
        ..Default::default()
    };
    for (name, d, excluded, label) in rankings {
        let relevant: Vec<bool> = gallery_labels.iter().map(|l| l == label).collect();
        match average_precision(&RankedList::from_distances(&d, &relevant, &excluded)) {
            Ok(ap) => report.per_query.push(QueryAp { query: name, ap }),
            Err(_) => {
                log::warn!("query {name} has no relevant gallery item; skipped");
                report.skipped += 1;
            }
        }
    }
    if report.per_query.is_empty() {
        return Err(EvalError::NoRelevant);
    }
    report.map = Some(report.per_query.iter().map(|x| x.ap).sum::<f64>() / report.per_query.len() as f64);
    Ok(report)
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs where the
/// positive scores higher; ties count one half.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length(scores.len(), labels.len()));
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClass);
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Fraction of `(d_pos, d_neg)` with `d_pos < d_neg`.
pub fn triplet_accuracy(triplets: &[(f64, f64)]) -> Result<f64, EvalError> {
    if triplets.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(triplets.iter().filter(|t| t.0 < t.1).count() as f64 / triplets.len() as f64)
}

/// Index triplet into a labelled collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

fn by_class<L: Ord>(labels: &[L]) -> BTreeMap<&L, Vec<usize>> {
    let mut m: BTreeMap<&L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

/// Uniform anchor class among classes with two or more members, uniform
/// anchor and distinct positive within it, uniform negative from all other
/// classes.
pub fn sample_triplets<L: Ord, R: Rng + ?Sized>(labels: &[L], count: usize, rng: &mut R) -> Result<Vec<Triplet>, EvalError> {
    let classes = by_class(labels);
    if classes.len() < 2 {
        return Err(EvalError::Sampling("triplets need at least two classes".into()));
    }
    let anchors: Vec<&Vec<usize>> = classes.values().filter(|m| m.len() >= 2).collect();
    if anchors.is_empty() {
        return Err(EvalError::Sampling("no class has two instances".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let members = *anchors.choose(rng).expect("non-empty");
        let a = rng.random_range(0..members.len());
        let mut p = rng.random_range(0..members.len() - 1);
        if p >= a {
            p += 1;
        }
        let others = labels.len() - members.len();
        let mut k = rng.random_range(0..others);
        // k-th index outside the anchor class; `members` is sorted
        let mut negative = 0;
        for (i, l) in labels.iter().enumerate() {
            if l != &labels[members[a]] {
                if k == 0 {
                    negative = i;
                    break;
                }
                k -= 1;
            }
        }
        out.push(Triplet {
            anchor: members[a],
            positive: members[p],
            negative,
        });
    }
    Ok(out)
}

/// `count` pairs, half from the same class and half from different classes,
/// each half spread evenly over the classes. `true` marks a same-class pair.
pub fn sample_pairs<L: Ord>(labels: &[L], count: usize, seed: u64) -> Result<Vec<(usize, usize, bool)>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = by_class(labels);
    let groups: Vec<&Vec<usize>> = classes.values().collect();
    let pos_groups: Vec<&Vec<usize>> = groups.iter().copied().filter(|m| m.len() >= 2).collect();
    if groups.len() < 2 || pos_groups.is_empty() {
        return Err(EvalError::Sampling("pairs need two classes and a class with two instances".into()));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        if k % 2 == 0 {
            let m = pos_groups[(k / 2) % pos_groups.len()];
            let a = rng.random_range(0..m.len());
            let mut b = rng.random_range(0..m.len() - 1);
            if b >= a {
                b += 1;
            }
            out.push((m[a], m[b], true));
        } else {
            let ga = (k / 2) % groups.len();
            let mut gb = rng.random_range(0..groups.len() - 1);
            if gb >= ga {
                gb += 1;
            }
            let a = *groups[ga].choose(&mut rng).expect("non-empty");
            let b = *groups[gb].choose(&mut rng).expect("non-empty");
            out.push((a, b, false));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(rel: &[bool]) -> RankedList {
        RankedList {
            order: (0..rel.len()).collect(),
            relevant: rel.to_vec(),
        }
    }

    #[test]
    fn ap_fixtures() {
        assert_eq!(average_precision(&ranked(&[true, true, false])).unwrap(), 1.0);
        assert!((average_precision(&ranked(&[true, false, true])).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((average_precision(&ranked(&[false, false, true])).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(average_precision(&ranked(&[false])), Err(EvalError::NoRelevant));
    }

    #[test]
    fn ranking_ties_by_index() {
        let r = RankedList::from_distances(&[0.5, 0.1, 0.5, 0.0], &[true, false, false, true], &[3]);
        assert_eq!(r.order, vec![1, 0, 2]);
        assert_eq!(r.relevant, vec![false, true, false]);
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn map_single_query() {
        let d = vec![vec![0.0, 1.0, 1.0]];
        let r = mean_average_precision(&d, &s(&["a"]), &s(&["a", "b", "c"]), Protocol::Individual, &[None], true).unwrap();
        assert_eq!(r.map, Some(1.0));
    }

    #[test]
    fn combined_with_singleton_groups_equals_individual() {
        let d = vec![vec![0.3, 0.1, 0.7, 0.2], vec![0.9, 0.4, 0.1, 0.5]];
        let ql = s(&["x", "y"]);
        let gl = s(&["x", "y", "x", "y"]);
        let a = mean_average_precision(&d, &ql, &gl, Protocol::Individual, &[None, None], true).unwrap();
        let b = mean_average_precision(&d, &ql, &gl, Protocol::Combined, &[None, None], true).unwrap();
        assert_eq!(a.map, b.map);
    }

    #[test]
    fn combined_takes_group_minimum() {
        // group x: min row = [0.1, 0.5, 0.2]; gallery labels x, y, x → AP 1
        let d = vec![vec![0.1, 0.5, 0.9], vec![0.8, 0.6, 0.2]];
        let r = mean_average_precision(&d, &s(&["x", "x"]), &s(&["x", "y", "x"]), Protocol::Combined, &[None, None], true).unwrap();
        assert_eq!(r.per_query.len(), 1);
        assert_eq!(r.map, Some(1.0));
    }

    #[test]
    fn self_exclusion_and_skips() {
        let d = vec![vec![0.0, 0.4, 0.2], vec![0.4, 0.0, 0.3]];
        let gl = s(&["a", "b", "a"]);
        let r = mean_average_precision(&d, &s(&["a", "b"]), &gl, Protocol::Individual, &[Some(0), Some(1)], true).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.map, Some(1.0));
        let kept = mean_average_precision(&d, &s(&["a", "b"]), &gl, Protocol::Individual, &[Some(0), Some(1)], false).unwrap();
        assert_eq!(kept.skipped, 0);
    }

    #[test]
    fn auc_fixtures() {
        assert_eq!(pair_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(pair_auc(&[0.5; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(pair_auc(&[0.9, 0.8, 0.7, 0.85], &[true, true, false, false]).unwrap(), 0.75);
        assert_eq!(pair_auc(&[0.1], &[true]), Err(EvalError::SingleClass));
        let scores = [0.3, -0.2, 0.9, 0.9, 0.1];
        let labels = [true, false, false, true, true];
        let neg: Vec<f64> = scores.iter().map(|x| -x).collect();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert_eq!(pair_auc(&neg, &flipped).unwrap(), pair_auc(&scores, &labels).unwrap());
    }

    #[test]
    fn triplet_accuracy_fixtures() {
        assert_eq!(triplet_accuracy(&[(0.1, 0.2), (0.0, 5.0)]).unwrap(), 1.0);
        assert_eq!(triplet_accuracy(&[(0.3, 0.3), (1.0, 1.0)]).unwrap(), 0.0);
        assert!(triplet_accuracy(&[]).is_err());
    }

    #[test]
    fn triplet_support_two_by_two() {
        let labels = ["a", "a", "b", "b"];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_triplets(&labels, 10_000, &mut rng).unwrap();
        let seen: std::collections::BTreeSet<_> = t.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        assert_eq!(seen.len(), 8);
        for t in &t {
            assert_eq!(labels[t.anchor], labels[t.positive]);
            assert_ne!(t.anchor, t.positive);
            assert_ne!(labels[t.anchor], labels[t.negative]);
        }
        let again = sample_triplets(&labels, 10_000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t, again);
        assert!(sample_triplets(&["a", "a"], 1, &mut rng).is_err());
        assert!(sample_triplets(&["a", "b"], 1, &mut rng).is_err());
    }

    #[test]
    fn pairs_are_balanced_and_seeded() {
        let labels = ["a", "a", "a", "b", "b", "c", "c"];
        let p = sample_pairs(&labels, 100, 3).unwrap();
        assert_eq!(p.iter().filter(|x| x.2).count(), 50);
        for &(a, b, same) in &p {
            assert_eq!(labels[a] == labels[b], same);
            assert_ne!(a, b);
        }
        assert_eq!(p, sample_pairs(&labels, 100, 3).unwrap());
    }
}
