//! Per-session event graph: event hypotheses anchored to intervals, typed
//! temporal and causal edges, retrieval with one round of propagation, and a
//! compact textual digest.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::SQRT_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fmt_seconds, TemporalInterval};
use crate::tcr::RefinementDelta;
use crate::vector::{dot, norm};

pub const CAUSAL_INITIAL_CONFIDENCE: f64 = 0.5;
pub const TEMPORAL_INITIAL_CONFIDENCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// Minimum intersection / shorter-length ratio for a finding to merge.
    pub merge_threshold: f64,
    /// Weight of neighbour scores in retrieval.
    pub lambda: f64,
    pub digest_max_chars: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            merge_threshold: 0.3,
            lambda: 0.5,
            digest_max_chars: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventNode {
    pub id: u32,
    pub anchor: TemporalInterval,
    pub summary: String,
    pub embedding: Vec<f64>,
    pub support_count: u32,
    pub created_iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Before,
    After,
    Overlaps,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEdge {
    pub from: u32,
    pub to: u32,
    pub relation: Relation,
    pub confidence: f64,
}

impl EventEdge {
    fn key(&self) -> (u32, u32, Relation) {
        (self.from, self.to, self.relation)
    }
}

/// A grounded finding ready to be folded into memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub iteration: u32,
    pub interval: TemporalInterval,
    pub summary: String,
    pub reason: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RawGraph {
    nodes: Vec<EventNode>,
    edges: Vec<EventEdge>,
    iteration: u32,
}

/// Nodes are kept sorted by id and edges by `(from, to, relation)`, so the
/// encoding is canonical regardless of the order a document lists them in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawGraph", into = "RawGraph")]
pub struct EventGraph {
    nodes: Vec<EventNode>,
    edges: Vec<EventEdge>,
    iteration: u32,
}

impl From<RawGraph> for EventGraph {
    fn from(mut raw: RawGraph) -> Self {
        raw.nodes.sort_by_key(|n| n.id);
        raw.edges.sort_by_key(EventEdge::key);
        EventGraph {
            nodes: raw.nodes,
            edges: raw.edges,
            iteration: raw.iteration,
        }
    }
}

impl From<EventGraph> for RawGraph {
    fn from(g: EventGraph) -> Self {
        RawGraph {
            nodes: g.nodes,
            edges: g.edges,
            iteration: g.iteration,
        }
    }
}

fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 || a.len() != b.len() {
        0.0
    } else {
        dot(a, b) / d
    }
}

fn overlap_fraction(a: &TemporalInterval, b: &TemporalInterval) -> f64 {
    let shorter = a.len().min(b.len());
    if shorter <= 0.0 {
        return 0.0;
    }
    a.intersection_len(b) / shorter
}

fn content_words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() >= 4)
        .map(str::to_lowercase)
        .collect()
}

/// Splits a reason into (cause, effect) around an explicit causal marker.
fn causal_split(reason: &str) -> Option<(String, String)> {
    let lower = reason.to_lowercase();
    for marker in [" because ", " so that ", " in order to "] {
        if let Some(pos) = lower.find(marker) {
            let left = lower[..pos].to_string();
            let right = lower[pos + marker.len()..].to_string();
            return Some(if marker == " because " { (right, left) } else { (left, right) });
        }
    }
    None
}

impl EventGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[EventNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EventEdge] {
        &self.edges
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn node(&self, id: u32) -> Option<&EventNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Folds a finding into the graph and returns the id of the node it
    /// created or refined.
    pub fn update(&mut self, finding: &Finding, delta: Option<&RefinementDelta>, cfg: &MemoryConfig) -> u32 {
        let best = self
            .nodes
            .iter()
            .map(|n| (overlap_fraction(&n.anchor, &finding.interval), n.id))
            .filter(|(f, _)| *f >= cfg.merge_threshold)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let touched = match best {
            Some((_, id)) => {
                let node = self.nodes.iter_mut().find(|n| n.id == id).expect("merge target exists");
                node.anchor = node.anchor.union(&finding.interval);
                if !node.summary.contains(finding.summary.as_str()) {
                    node.summary = format!("{}; {}", node.summary, finding.summary);
                }
                let n = f64::from(node.support_count);
                for (a, b) in node.embedding.iter_mut().zip(&finding.embedding) {
                    *a += (b - *a) / (n + 1.0);
                }
                node.support_count += 1;
                id
            }
            None => {
                let id = self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(1);
                self.nodes.push(EventNode {
                    id,
                    anchor: finding.interval,
                    summary: finding.summary.clone(),
                    embedding: finding.embedding.clone(),
                    support_count: 1,
                    created_iteration: finding.iteration,
                });
                id
            }
        };
        self.recompute_temporal_edges();
        self.induce_causal_edge(touched, &finding.reason);
        if let Some(delta) = delta {
            let w = (1.0 - delta.loss_contribution / SQRT_2).clamp(0.25, 1.0);
            for e in self.edges.iter_mut().filter(|e| e.from == touched || e.to == touched) {
                e.confidence = (e.confidence * w).clamp(0.0, 1.0);
            }
        }
        self.edges.sort_by_key(EventEdge::key);
        self.iteration += 1;
        touched
    }

    fn recompute_temporal_edges(&mut self) {
        let previous: BTreeMap<(u32, u32, Relation), f64> =
            self.edges.iter().map(|e| (e.key(), e.confidence)).collect();
        let mut edges: Vec<EventEdge> = self
            .edges
            .iter()
            .filter(|e| e.relation == Relation::Causal)
            .cloned()
            .collect();
        for a in &self.nodes {
            for b in &self.nodes {
                if a.id == b.id {
                    continue;
                }
                let mut add = |relation| {
                    let confidence = previous
                        .get(&(a.id, b.id, relation))
                        .copied()
                        .unwrap_or(TEMPORAL_INITIAL_CONFIDENCE);
                    edges.push(EventEdge { from: a.id, to: b.id, relation, confidence });
                };
                if a.anchor.end_s <= b.anchor.start_s {
                    add(Relation::Before);
                }
                if b.anchor.end_s <= a.anchor.start_s {
                    add(Relation::After);
                }
                if a.anchor.intersection_len(&b.anchor) > 0.0 {
                    add(Relation::Overlaps);
                }
            }
        }
        self.edges = edges;
    }

    /// Links `touched` with the best keyword match for the other half of a
    /// "because / so that / in order to" reason.
    fn induce_causal_edge(&mut self, touched: u32, reason: &str) {
        let Some((cause, effect)) = causal_split(reason) else { return };
        let best_match = |text: &str| -> Option<u32> {
            let words = content_words(text);
            self.nodes
                .iter()
                .map(|n| (content_words(&n.summary).intersection(&words).count(), n.id))
                .filter(|(c, _)| *c > 0)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, id)| id)
        };
        let (Some(from), Some(to)) = (best_match(&cause), best_match(&effect)) else { return };
        if from == to || (from != touched && to != touched) {
            return;
        }
        if !self.edges.iter().any(|e| e.key() == (from, to, Relation::Causal)) {
            self.edges.push(EventEdge {
                from,
                to,
                relation: Relation::Causal,
                confidence: CAUSAL_INITIAL_CONFIDENCE,
            });
        }
    }

    /// Checks the edge invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            let (Some(a), Some(b)) = (self.node(e.from), self.node(e.to)) else {
                return Err(format!("edge {:?} has a dangling endpoint", e.key()));
            };
            if !seen.insert(e.key()) {
                return Err(format!("duplicate edge {:?}", e.key()));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(format!("edge {:?} confidence {} outside [0, 1]", e.key(), e.confidence));
            }
            let ok = match e.relation {
                Relation::Before => a.anchor.end_s <= b.anchor.start_s,
                Relation::After => b.anchor.end_s <= a.anchor.start_s,
                Relation::Overlaps => a.anchor.intersection_len(&b.anchor) > 0.0,
                Relation::Causal => true,
            };
            if !ok {
                return Err(format!("edge {:?} inconsistent with anchors {} and {}", e.key(), a.anchor, b.anchor));
            }
        }
        Ok(())
    }

    /// Writes the graph as a node/edge list document.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Functional form of [`EventGraph::update`].
pub fn update_graph(
    graph: &EventGraph,
    finding: &Finding,
    delta: Option<&RefinementDelta>,
    cfg: &MemoryConfig,
) -> EventGraph {
    let mut g = graph.clone();
    g.update(finding, delta, cfg);
    g
}

/// Top-`k` nodes by cosine similarity plus `lambda` times the
/// confidence-weighted similarity of their out-neighbours.
pub fn retrieve_context(graph: &EventGraph, query_embedding: &[f64], k: usize, lambda: f64) -> Vec<EventNode> {
    let base: BTreeMap<u32, f64> = graph
        .nodes
        .iter()
        .map(|n| (n.id, cosine_or_zero(&n.embedding, query_embedding)))
        .collect();
    let mut strongest: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for e in &graph.edges {
        let c = strongest.entry((e.from, e.to)).or_insert(0.0);
        *c = c.max(e.confidence);
    }
    let mut scored: Vec<(f64, &EventNode)> = graph
        .nodes
        .iter()
        .map(|n| {
            let propagated: f64 = strongest
                .iter()
                .filter(|((from, _), _)| *from == n.id)
                .map(|((_, to), c)| c * base[to])
                .sum();
            (base[&n.id] + lambda * propagated, n)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.anchor.start_s.total_cmp(&b.1.anchor.start_s))
            .then(a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().take(k).map(|(_, n)| n.clone()).collect()
}

/// Chronological `[s–e] summary (support n)` lines, cut at an entry boundary
/// so the result never exceeds `max_chars` characters.
pub fn render_memory_digest(graph: &EventGraph, max_chars: usize) -> String {
    let mut nodes: Vec<&EventNode> = graph.nodes.iter().collect();
    nodes.sort_by(|a, b| a.anchor.start_s.total_cmp(&b.anchor.start_s).then(a.id.cmp(&b.id)));
    let mut out = String::new();
    let mut used = 0;
    for n in nodes {
        let entry = format!(
            "[{}–{}] {} (support {})",
            fmt_seconds(n.anchor.start_s),
            fmt_seconds(n.anchor.end_s),
            n.summary,
            n.support_count
        );
        let cost = entry.chars().count() + usize::from(!out.is_empty());
        if used + cost > max_chars {
            break;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&entry);
        used += cost;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finding(s: f64, e: f64, summary: &str) -> Finding {
        Finding {
            iteration: 1,
            interval: TemporalInterval::new(s, e),
            summary: summary.into(),
            reason: String::new(),
            embedding: vec![1.0, 0.0],
        }
    }

    #[test]
    fn first_insertion() {
        let mut g = EventGraph::new();
        g.update(&finding(240.0, 380.0, "cat"), None, &MemoryConfig::default());
        assert_eq!(g.nodes().len(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(g.iteration(), 1);
    }

    #[test]
    fn touching_anchors_get_before_edge() {
        let mut g = EventGraph::new();
        let cfg = MemoryConfig::default();
        g.update(&finding(80.0, 240.0, "dog"), None, &cfg);
        g.update(&finding(240.0, 380.0, "cat"), None, &cfg);
        assert_eq!(g.nodes().len(), 2);
        assert!(g
            .edges()
            .iter()
            .any(|e| e.from == 1 && e.to == 2 && e.relation == Relation::Before));
        assert!(g
            .edges()
            .iter()
            .any(|e| e.from == 2 && e.to == 1 && e.relation == Relation::After));
        g.check_invariants().unwrap();
    }

    #[test]
    fn overlapping_finding_merges() {
        let mut g = EventGraph::new();
        let cfg = MemoryConfig::default();
        g.update(&finding(100.0, 200.0, "a"), None, &cfg);
        g.update(&finding(150.0, 250.0, "b"), None, &cfg);
        assert_eq!(g.nodes().len(), 1);
        assert_eq!(g.nodes()[0].anchor, TemporalInterval::new(100.0, 250.0));
        assert_eq!(g.nodes()[0].support_count, 2);
        assert_eq!(g.nodes()[0].summary, "a; b");
    }

    #[test]
    fn digest_format_and_truncation() {
        let mut g = EventGraph::new();
        assert_eq!(render_memory_digest(&g, 100), "");
        let cfg = MemoryConfig::default();
        g.update(&finding(80.0, 240.0, "dog narrative"), None, &cfg);
        assert_eq!(render_memory_digest(&g, 100), "[80–240] dog narrative (support 1)");
        g.update(&finding(300.0, 400.0, "cat"), None, &cfg);
        assert_eq!(render_memory_digest(&g, 40), "[80–240] dog narrative (support 1)");
        assert_eq!(render_memory_digest(&g, 10), "");
    }

    #[test]
    fn causal_edge_from_reason() {
        let mut g = EventGraph::new();
        let cfg = MemoryConfig::default();
        g.update(&finding(0.0, 50.0, "the cat injured its paw"), None, &cfg);
        let mut f = finding(300.0, 350.0, "the cat is carried into the hospital");
        f.reason = "The cat went to the hospital because it injured its paw".into();
        g.update(&f, None, &cfg);
        let causal: Vec<_> = g.edges().iter().filter(|e| e.relation == Relation::Causal).collect();
        assert_eq!(causal.len(), 1);
        assert_eq!((causal[0].from, causal[0].to), (1, 2));
        assert_eq!(causal[0].confidence, CAUSAL_INITIAL_CONFIDENCE);
    }

    #[test]
    fn delta_reweights_incident_edges() {
        let mut g = EventGraph::new();
        let cfg = MemoryConfig::default();
        g.update(&finding(0.0, 50.0, "a"), None, &cfg);
        let delta = RefinementDelta {
            suggested_center_s: 0.0,
            scale: 0.5,
            loss_contribution: SQRT_2 / 2.0,
            redirect: false,
        };
        g.update(&finding(100.0, 150.0, "b"), Some(&delta), &cfg);
        assert!(g.edges().iter().all(|e| (e.confidence - 0.5).abs() < 1e-12));
    }

    #[test]
    fn retrieval_examples() {
        let mut g = EventGraph::new();
        let cfg = MemoryConfig::default();
        let mut a = finding(0.0, 10.0, "a");
        a.embedding = vec![1.0, 0.0];
        let mut b = finding(100.0, 110.0, "b");
        b.embedding = vec![0.0, 1.0];
        g.update(&a, None, &cfg);
        assert_eq!(retrieve_context(&g, &[0.0, 1.0], 1, 0.5)[0].id, 1);
        g.update(&b, None, &cfg);
        assert_eq!(retrieve_context(&g, &[1.0, 0.0], 1, 0.0)[0].id, 1);
        assert!(retrieve_context(&EventGraph::new(), &[1.0, 0.0], 3, 0.5).is_empty());
    }
}
