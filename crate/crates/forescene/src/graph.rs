//! Scene-graph data model: vocabularies, per-frame graphs, and sequences.
//!
//! All types here are plain immutable data. A frame's graph holds object
//! nodes (category, normalized box, visual feature) and directed edges
//! carrying a non-empty predicate set; a sequence is the frame-ordered list
//! of graphs for one video.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

/// Relationship family. Mirrors the three edge families of human-activity
/// scene graphs: where attention is directed, spatial arrangement, and
/// physical contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateKind {
    Attention,
    Spatial,
    Contacting,
}

/// Object and predicate category tables. Index positions are stable for the
/// lifetime of a run and are what every other structure stores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub object_categories: Vec<String>,
    pub predicate_categories: Vec<String>,
    pub predicate_kinds: Vec<PredicateKind>,
}

/// Index reserved for the person category in every vocabulary.
pub const PERSON_INDEX: usize = 0;

impl Vocabulary {
    pub fn new(
        objects: Vec<String>,
        predicates: Vec<(String, PredicateKind)>,
    ) -> Result<Self> {
        let (names, kinds): (Vec<_>, Vec<_>) = predicates.into_iter().unzip();
        let v = Vocabulary {
            object_categories: objects,
            predicate_categories: names,
            predicate_kinds: kinds,
        };
        v.check()?;
        Ok(v)
    }

    fn check(&self) -> Result<()> {
        if self.object_categories.len() < 2 {
            return Err(Error::InvalidData("vocabulary needs at least 2 object categories".into()));
        }
        if self.predicate_categories.is_empty() {
            return Err(Error::InvalidData("vocabulary needs at least 1 predicate".into()));
        }
        if self.predicate_kinds.len() != self.predicate_categories.len() {
            return Err(Error::InvalidData("every predicate needs exactly one kind".into()));
        }
        let unique: HashSet<_> = self.object_categories.iter().collect();
        if unique.len() != self.object_categories.len() {
            return Err(Error::InvalidData("duplicate object category name".into()));
        }
        let unique: HashSet<_> = self.predicate_categories.iter().collect();
        if unique.len() != self.predicate_categories.len() {
            return Err(Error::InvalidData("duplicate predicate name".into()));
        }
        if self.object_categories[PERSON_INDEX] != "person" {
            return Err(Error::InvalidData("object category 0 must be `person`".into()));
        }
        Ok(())
    }

    pub fn num_objects(&self) -> usize {
        self.object_categories.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicate_categories.len()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.object_categories.iter().position(|c| c == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicate_categories.iter().position(|c| c == name)
    }

    pub fn kind_of(&self, predicate: usize) -> PredicateKind {
        self.predicate_kinds[predicate]
    }

    /// The small activity vocabulary used throughout tests, examples, and the
    /// synthetic generator: 8 object categories (person first) and 6
    /// predicates spanning the three kinds.
    pub fn desk_default() -> Self {
        Vocabulary::new(
            ["person", "cup", "dish", "table", "book", "phone", "pillow", "blanket"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            vec![
                ("looking_at".into(), PredicateKind::Attention),
                ("in_front_of".into(), PredicateKind::Spatial),
                ("beneath".into(), PredicateKind::Spatial),
                ("holding".into(), PredicateKind::Contacting),
                ("touching".into(), PredicateKind::Contacting),
                ("sitting_on".into(), PredicateKind::Contacting),
            ],
        )
        .expect("desk vocabulary is valid")
    }
}

/// Normalized box, corner form `(x1, y1, x2, y2)` with `x1 < x2`, `y1 < y2`,
/// all in `[0, 1]`.
pub type Box4 = [f64; 4];

/// One object node. Visual features are stored in `f32`, matching the
/// sidecar feature-file precision so round-trips are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub category_index: usize,
    #[serde(rename = "box")]
    pub bbox: Box4,
    pub visual_feature: Vec<f32>,
}

/// Directed edge with the subject first; multiple predicates can coexist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub subject_index: usize,
    pub object_index: usize,
    pub predicates: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub frame_index: usize,
}

impl SceneGraph {
    /// Deduplicated set of node category indices. Activity graphs carry one
    /// instance per category, so sets are the canonical object summary.
    pub fn object_set(&self) -> BTreeSet<usize> {
        self.nodes.iter().map(|n| n.category_index).collect()
    }

    /// Ground-truth identity triplets `(subject category, predicate, object
    /// category)`, one per predicate on every edge.
    pub fn triplet_set(&self) -> BTreeSet<(usize, usize, usize)> {
        let mut out = BTreeSet::new();
        for e in &self.edges {
            let s = self.nodes[e.subject_index].category_index;
            let o = self.nodes[e.object_index].category_index;
            for &p in &e.predicates {
                out.insert((s, p, o));
            }
        }
        out
    }
}

/// One violation found by [`validate`]. Violations are data, not errors:
/// a well-formed pipeline never sees them, but loaders report them verbatim.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoNodes,
    CategoryOutOfRange { node: usize, category: usize },
    BoxOutOfRange { node: usize },
    BoxNotOrdered { node: usize },
    FeatureDimMismatch { node: usize, got: usize, expected: usize },
    SelfLoop { edge: usize },
    EdgeNodeOutOfRange { edge: usize },
    EmptyPredicates { edge: usize },
    PredicateOutOfRange { edge: usize, predicate: usize },
    DuplicateEdgePair { edge: usize },
    DuplicateCategoryInstance { category: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoNodes => write!(f, "graph has no nodes"),
            Violation::CategoryOutOfRange { node, category } => {
                write!(f, "node {node}: category index {category} out of range")
            }
            Violation::BoxOutOfRange { node } => {
                write!(f, "node {node}: box coordinates outside [0,1]")
            }
            Violation::BoxNotOrdered { node } => {
                write!(f, "node {node}: box must satisfy x1 < x2 and y1 < y2")
            }
            Violation::FeatureDimMismatch { node, got, expected } => {
                write!(f, "node {node}: feature dim {got}, expected {expected}")
            }
            Violation::SelfLoop { edge } => write!(f, "edge {edge}: subject equals object"),
            Violation::EdgeNodeOutOfRange { edge } => {
                write!(f, "edge {edge}: endpoint index out of range")
            }
            Violation::EmptyPredicates { edge } => {
                write!(f, "edge {edge}: predicate set is empty")
            }
            Violation::PredicateOutOfRange { edge, predicate } => {
                write!(f, "edge {edge}: predicate index {predicate} out of range")
            }
            Violation::DuplicateEdgePair { edge } => {
                write!(f, "edge {edge}: duplicate (subject, object) pair")
            }
            Violation::DuplicateCategoryInstance { category } => {
                write!(f, "category {category} appears on more than one node")
            }
        }
    }
}

/// Check every structural invariant of a ground-truth graph against a
/// vocabulary. Returns all violations found; an empty list means every other
/// module will accept the graph.
pub fn validate(graph: &SceneGraph, vocab: &Vocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    if graph.nodes.is_empty() {
        out.push(Violation::NoNodes);
    }
    let feat_dim = graph.nodes.first().map(|n| n.visual_feature.len());
    let mut seen_categories: HashMap<usize, usize> = HashMap::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        if n.category_index >= vocab.num_objects() {
            out.push(Violation::CategoryOutOfRange { node: i, category: n.category_index });
        }
        let [x1, y1, x2, y2] = n.bbox;
        if [x1, y1, x2, y2].iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            out.push(Violation::BoxOutOfRange { node: i });
        }
        if !(x1 < x2 && y1 < y2) {
            out.push(Violation::BoxNotOrdered { node: i });
        }
        if let Some(d) = feat_dim {
            if n.visual_feature.len() != d {
                out.push(Violation::FeatureDimMismatch {
                    node: i,
                    got: n.visual_feature.len(),
                    expected: d,
                });
            }
        }
        *seen_categories.entry(n.category_index).or_insert(0) += 1;
    }
    for (&cat, &count) in seen_categories.iter() {
        if count > 1 {
            out.push(Violation::DuplicateCategoryInstance { category: cat });
        }
    }
    let mut pairs = HashSet::new();
    for (i, e) in graph.edges.iter().enumerate() {
        if e.subject_index == e.object_index {
            out.push(Violation::SelfLoop { edge: i });
        }
        if e.subject_index >= graph.nodes.len() || e.object_index >= graph.nodes.len() {
            out.push(Violation::EdgeNodeOutOfRange { edge: i });
        }
        if e.predicates.is_empty() {
            out.push(Violation::EmptyPredicates { edge: i });
        }
        for &p in &e.predicates {
            if p >= vocab.num_predicates() {
                out.push(Violation::PredicateOutOfRange { edge: i, predicate: p });
            }
        }
        if !pairs.insert((e.subject_index, e.object_index)) {
            out.push(Violation::DuplicateEdgePair { edge: i });
        }
    }
    // Deterministic report order regardless of hash-map iteration.
    out.sort_by_key(violation_order);
    out
}

fn violation_order(v: &Violation) -> (usize, usize, usize) {
    match *v {
        Violation::NoNodes => (0, 0, 0),
        Violation::CategoryOutOfRange { node, category } => (1, node, category),
        Violation::BoxOutOfRange { node } => (2, node, 0),
        Violation::BoxNotOrdered { node } => (3, node, 0),
        Violation::FeatureDimMismatch { node, got, .. } => (4, node, got),
        Violation::DuplicateCategoryInstance { category } => (5, category, 0),
        Violation::SelfLoop { edge } => (6, edge, 0),
        Violation::EdgeNodeOutOfRange { edge } => (7, edge, 0),
        Violation::EmptyPredicates { edge } => (8, edge, 0),
        Violation::PredicateOutOfRange { edge, predicate } => (9, edge, predicate),
        Violation::DuplicateEdgePair { edge } => (10, edge, 0),
    }
}

/// Frame-ordered graphs for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSequence {
    pub video_id: String,
    pub graphs: Vec<SceneGraph>,
    pub f_last: usize,
}

impl GraphSequence {
    pub fn new(video_id: String, graphs: Vec<SceneGraph>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidData(format!("video {video_id}: no frames")));
        }
        for w in graphs.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(Error::InvalidData(format!(
                    "video {video_id}: frame_index not strictly increasing"
                )));
            }
        }
        let f_last = graphs.last().unwrap().frame_index;
        Ok(GraphSequence { video_id, graphs, f_last })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Validate every frame; returns `(frame position, violations)` for
    /// frames with problems.
    pub fn validate(&self, vocab: &Vocabulary) -> Vec<(usize, Vec<Violation>)> {
        self.graphs
            .iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let v = validate(g, vocab);
                if v.is_empty() {
                    None
                } else {
                    Some((i, v))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(cat: usize, bbox: Box4) -> Node {
        Node { category_index: cat, bbox, visual_feature: vec![0.0; 4] }
    }

    fn simple_graph(cats: &[usize]) -> SceneGraph {
        SceneGraph {
            nodes: cats.iter().map(|&c| node(c, [0.1, 0.1, 0.4, 0.4])).collect(),
            edges: vec![],
            frame_index: 0,
        }
    }

    #[test]
    fn object_set_deduplicates() {
        // person + two cups collapse to {person, cup}
        let g = simple_graph(&[0, 1, 1]);
        let set: Vec<usize> = g.object_set().into_iter().collect();
        assert_eq!(set, vec![0, 1]);
    }

    #[test]
    fn object_set_singleton() {
        let g = simple_graph(&[0]);
        assert_eq!(g.object_set().len(), 1);
    }

    #[test]
    fn object_set_ignores_edges() {
        let g = simple_graph(&[0, 2, 3]);
        assert!(g.edges.is_empty());
        assert_eq!(g.object_set(), [0, 2, 3].into_iter().collect());
    }

    #[test]
    fn validate_accepts_well_formed() {
        let vocab = Vocabulary::desk_default();
        let mut g = simple_graph(&[0, 1]);
        g.edges.push(Edge {
            subject_index: 0,
            object_index: 1,
            predicates: [3].into_iter().collect(),
        });
        assert!(validate(&g, &vocab).is_empty());
    }

    #[test]
    fn validate_flags_unordered_box() {
        let vocab = Vocabulary::desk_default();
        let mut g = simple_graph(&[0]);
        g.nodes[0].bbox = [0.5, 0.2, 0.3, 0.9];
        let v = validate(&g, &vocab);
        assert_eq!(v, vec![Violation::BoxNotOrdered { node: 0 }]);
    }

    #[test]
    fn validate_flags_self_loop() {
        let vocab = Vocabulary::desk_default();
        let mut g = simple_graph(&[0, 1]);
        g.edges.push(Edge {
            subject_index: 1,
            object_index: 1,
            predicates: [0].into_iter().collect(),
        });
        let v = validate(&g, &vocab);
        assert_eq!(v, vec![Violation::SelfLoop { edge: 0 }]);
    }

    #[test]
    fn validate_flags_duplicate_instance() {
        let vocab = Vocabulary::desk_default();
        let g = simple_graph(&[0, 1, 1]);
        let v = validate(&g, &vocab);
        assert_eq!(v, vec![Violation::DuplicateCategoryInstance { category: 1 }]);
    }

    #[test]
    fn sequence_requires_increasing_frames() {
        let mut a = simple_graph(&[0]);
        a.frame_index = 3;
        let mut b = simple_graph(&[0]);
        b.frame_index = 3;
        assert!(GraphSequence::new("v".into(), vec![a, b]).is_err());
    }

    #[test]
    fn vocabulary_requires_person_first() {
        let r = Vocabulary::new(
            vec!["cup".into(), "person".into()],
            vec![("holding".into(), PredicateKind::Contacting)],
        );
        assert!(r.is_err());
    }
}
