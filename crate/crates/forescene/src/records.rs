//! On-disk formats: line-delimited frame records, the binary feature
//! sidecar, run manifests, and atomic writes.
//!
//! A corpus directory contains:
//!
//! - `vocab.json` — the [`Vocabulary`].
//! - `frames.jsonl` — one JSON record per frame (schema below).
//! - `features.bin` — float32 little-endian visual features, row-major,
//!   with an index header mapping `(video_id, frame_index, node ordinal)`
//!   to a row.
//! - `manifest.json` — the run manifest of the command that produced it.
//!
//! Frame record schema (JSONL, one object per line):
//!
//! ```json
//! {"video_id": "v0", "frame_index": 3,
//!  "nodes": [{"category": "person", "box": [0.1, 0.2, 0.5, 0.9],
//!             "feature_row": 12}],
//!  "edges": [{"subject": 0, "object": 1, "predicates": ["holding"]}]}
//! ```
//!
//! A node carries either `feature_row` (row in `features.bin`) or an inline
//! `feature` array of f32; exactly one must be present.

use crate::error::{Error, Result};
use crate::graph::{Edge, GraphSequence, Node, SceneGraph, Vocabulary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub const VOCAB_FILE: &str = "vocab.json";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_row: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub subject: usize,
    pub object: usize,
    pub predicates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

// ---------------------------------------------------------------------------
// Feature sidecar: `FSFE0001` magic, u32 d_vis, u64 n_rows, u32 index length,
// JSON index, then n_rows * d_vis f32 little-endian.
// ---------------------------------------------------------------------------

const FEAT_MAGIC: &[u8; 8] = b"FSFE0001";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FeatureIndexEntry {
    pub video_id: String,
    pub frame_index: usize,
    pub node: usize,
    pub row: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FeatureTable {
    pub d_vis: usize,
    pub index: Vec<FeatureIndexEntry>,
    pub rows: Vec<Vec<f32>>,
}

impl FeatureTable {
    pub fn push(&mut self, video_id: &str, frame_index: usize, node: usize, feat: Vec<f32>) -> usize {
        if self.rows.is_empty() {
            self.d_vis = feat.len();
        }
        debug_assert_eq!(feat.len(), self.d_vis);
        let row = self.rows.len();
        self.index.push(FeatureIndexEntry {
            video_id: video_id.to_string(),
            frame_index,
            node,
            row,
        });
        self.rows.push(feat);
        row
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let index_json = serde_json::to_vec(&self.index).expect("feature index");
        let mut out = Vec::new();
        out.extend_from_slice(FEAT_MAGIC);
        out.extend_from_slice(&(self.d_vis as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        out.extend_from_slice(&(index_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&index_json);
        for row in &self.rows {
            for &x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(format!("feature file: {m}"));
        if bytes.len() < 24 || &bytes[0..8] != FEAT_MAGIC {
            return Err(fail("bad magic"));
        }
        let d_vis = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let ilen = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        if bytes.len() < 24 + ilen {
            return Err(fail("truncated index"));
        }
        let index: Vec<FeatureIndexEntry> =
            serde_json::from_slice(&bytes[24..24 + ilen]).map_err(|e| fail(&e.to_string()))?;
        let mut offset = 24 + ilen;
        let expected = n_rows * d_vis * 4;
        if bytes.len() != offset + expected {
            return Err(fail("data length mismatch"));
        }
        let mut rows = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            let mut row = Vec::with_capacity(d_vis);
            for chunk in bytes[offset..offset + d_vis * 4].chunks_exact(4) {
                row.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            rows.push(row);
            offset += d_vis * 4;
        }
        Ok(FeatureTable { d_vis, index, rows })
    }
}

// ---------------------------------------------------------------------------
// Corpus read/write
// ---------------------------------------------------------------------------

/// Serialize sequences to `frames.jsonl` + `features.bin` + `vocab.json`
/// under `dir` (created if needed).
pub fn write_corpus(dir: &Path, vocab: &Vocabulary, sequences: &[GraphSequence]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut table = FeatureTable::default();
    let mut lines = String::new();
    for seq in sequences {
        for g in &seq.graphs {
            let nodes = g
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let row = table.push(&seq.video_id, g.frame_index, i, n.visual_feature.clone());
                    NodeRecord {
                        category: vocab.object_categories[n.category_index].clone(),
                        bbox: n.bbox,
                        feature: None,
                        feature_row: Some(row),
                    }
                })
                .collect();
            let edges = g
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    subject: e.subject_index,
                    object: e.object_index,
                    predicates: e
                        .predicates
                        .iter()
                        .map(|&p| vocab.predicate_categories[p].clone())
                        .collect(),
                })
                .collect();
            let rec = FrameRecord {
                video_id: seq.video_id.clone(),
                frame_index: g.frame_index,
                nodes,
                edges,
            };
            lines.push_str(&serde_json::to_string(&rec).expect("frame record"));
            lines.push('\n');
        }
    }
    write_atomic(&dir.join(FRAMES_FILE), lines.as_bytes())?;
    write_atomic(&dir.join(FEATURES_FILE), &table.to_bytes())?;
    let vocab_json = serde_json::to_vec_pretty(vocab).expect("vocab");
    write_atomic(&dir.join(VOCAB_FILE), &vocab_json)?;
    Ok(())
}

/// Load a corpus directory back into sequences. Frames are grouped by
/// `video_id` in first-appearance order; each frame is validated against the
/// vocabulary and structural invariants.
pub fn read_corpus(dir: &Path) -> Result<(Vocabulary, Vec<GraphSequence>)> {
    let vocab_path = dir.join(VOCAB_FILE);
    if !vocab_path.exists() {
        return Err(Error::MissingPrerequisite(format!("{}", vocab_path.display())));
    }
    let vocab: Vocabulary = serde_json::from_slice(&fs::read(&vocab_path)?)
        .map_err(|e| Error::Format(format!("vocab.json: {e}")))?;
    let feat_path = dir.join(FEATURES_FILE);
    let table = if feat_path.exists() {
        Some(FeatureTable::from_bytes(&fs::read(&feat_path)?)?)
    } else {
        None
    };

    let frames_path = dir.join(FRAMES_FILE);
    if !frames_path.exists() {
        return Err(Error::MissingPrerequisite(format!("{}", frames_path.display())));
    }
    let file = fs::File::open(&frames_path)?;
    let reader = BufReader::new(file);
    let mut order: Vec<String> = Vec::new();
    let mut by_video: std::collections::HashMap<String, Vec<SceneGraph>> =
        std::collections::HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("frames.jsonl line {}: {e}", lineno + 1)))?;
        let graph = frame_record_to_graph(&rec, &vocab, table.as_ref(), lineno + 1)?;
        if !by_video.contains_key(&rec.video_id) {
            order.push(rec.video_id.clone());
        }
        by_video.entry(rec.video_id).or_default().push(graph);
    }
    let mut sequences = Vec::with_capacity(order.len());
    for vid in order {
        let graphs = by_video.remove(&vid).unwrap();
        sequences.push(GraphSequence::new(vid, graphs)?);
    }
    Ok((vocab, sequences))
}

fn frame_record_to_graph(
    rec: &FrameRecord,
    vocab: &Vocabulary,
    table: Option<&FeatureTable>,
    lineno: usize,
) -> Result<SceneGraph> {
    let ctx = |m: String| Error::Format(format!("frames.jsonl line {lineno}: {m}"));
    let mut nodes = Vec::with_capacity(rec.nodes.len());
    for n in &rec.nodes {
        let category_index = vocab
            .object_index(&n.category)
            .ok_or_else(|| ctx(format!("unknown object category `{}`", n.category)))?;
        let visual_feature = match (&n.feature, n.feature_row) {
            (Some(f), None) => f.clone(),
            (None, Some(row)) => {
                let t = table.ok_or_else(|| ctx("feature_row given but no features.bin".into()))?;
                t.rows
                    .get(row)
                    .cloned()
                    .ok_or_else(|| ctx(format!("feature row {row} out of range")))?
            }
            _ => return Err(ctx("node needs exactly one of feature / feature_row".into())),
        };
        nodes.push(Node { category_index, bbox: n.bbox, visual_feature });
    }
    let mut edges = Vec::with_capacity(rec.edges.len());
    for e in &rec.edges {
        let mut predicates = BTreeSet::new();
        for p in &e.predicates {
            let idx = vocab
                .predicate_index(p)
                .ok_or_else(|| ctx(format!("unknown predicate `{p}`")))?;
            predicates.insert(idx);
        }
        edges.push(Edge { subject_index: e.subject, object_index: e.object, predicates });
    }
    let graph = SceneGraph { nodes, edges, frame_index: rec.frame_index };
    let violations = crate::graph::validate(&graph, vocab);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(ctx(msgs.join("; ")));
    }
    Ok(graph)
}

// ---------------------------------------------------------------------------
// Generic JSONL helpers for the other record files (splits, rollouts,
// results rows).
// ---------------------------------------------------------------------------

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).map_err(|e| Error::Format(e.to_string()))?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!("{}", path.display())));
    }
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Atomic write + hashing + run manifest
// ---------------------------------------------------------------------------

/// Write via a temp file in the same directory, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance record written next to every artifact-producing command's
/// outputs: the command, the fully resolved config, seeds, checkpoint and
/// input hashes, and wall-clock bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: std::collections::BTreeMap<String, String>,
    pub seed: u64,
    pub checkpoint_fingerprints: std::collections::BTreeMap<String, String>,
    pub input_hashes: std::collections::BTreeMap<String, String>,
    pub output_hashes: std::collections::BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: std::collections::BTreeMap<String, String>, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            checkpoint_fingerprints: Default::default(),
            input_hashes: Default::default(),
            output_hashes: Default::default(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("output")
            .to_string();
        self.output_hashes.insert(name, hash_file(path)?);
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("input")
            .to_string();
        self.input_hashes.insert(name, hash_file(path)?);
        Ok(())
    }

    pub fn finish_and_write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let json = serde_json::to_vec_pretty(&self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&dir.join(MANIFEST_FILE), &json)
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Refuse to reuse an output dir that already has artifacts unless forced.
pub fn ensure_output_dir(dir: &Path, force: bool) -> Result<PathBuf> {
    if dir.exists() && dir.join(MANIFEST_FILE).exists() && !force {
        return Err(Error::Config(format!(
            "output dir {} already contains a run (use --force to overwrite)",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PredicateKind;
    use tempfile::TempDir;

    fn tiny_sequence(vid: &str) -> GraphSequence {
        let node = |cat: usize, f: Vec<f32>| Node {
            category_index: cat,
            bbox: [0.1, 0.2, 0.5, 0.9],
            visual_feature: f,
        };
        let g0 = SceneGraph {
            nodes: vec![node(0, vec![0.25, -1.5]), node(1, vec![2.0, 0.125])],
            edges: vec![Edge {
                subject_index: 0,
                object_index: 1,
                predicates: [0, 3].into_iter().collect(),
            }],
            frame_index: 0,
        };
        let g1 = SceneGraph {
            nodes: vec![node(0, vec![0.5, 0.75])],
            edges: vec![],
            frame_index: 1,
        };
        GraphSequence::new(vid.to_string(), vec![g0, g1]).unwrap()
    }

    #[test]
    fn corpus_roundtrip_is_identity() {
        let dir = TempDir::new().unwrap();
        let vocab = Vocabulary::desk_default();
        let seqs = vec![tiny_sequence("a"), tiny_sequence("b")];
        write_corpus(dir.path(), &vocab, &seqs).unwrap();
        let (v2, s2) = read_corpus(dir.path()).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(s2, seqs);
    }

    #[test]
    fn feature_table_roundtrip() {
        let mut t = FeatureTable::default();
        t.push("v", 0, 0, vec![1.0, 2.5, -3.25]);
        t.push("v", 0, 1, vec![0.0, -0.5, 9.0]);
        let bytes = t.to_bytes();
        let t2 = FeatureTable::from_bytes(&bytes).unwrap();
        assert_eq!(t2.d_vis, 3);
        assert_eq!(t2.rows, t.rows);
        assert_eq!(t2.index, t.index);
    }

    #[test]
    fn unknown_category_is_reported_with_line() {
        let dir = TempDir::new().unwrap();
        let vocab = Vocabulary::desk_default();
        write_corpus(dir.path(), &vocab, &[tiny_sequence("a")]).unwrap();
        // Re-read with a vocabulary that lacks `cup`.
        let bad_vocab = Vocabulary::new(
            vec!["person".into(), "mug".into()],
            vec![("holding".into(), PredicateKind::Contacting)],
        )
        .unwrap();
        let vjson = serde_json::to_vec(&bad_vocab).unwrap();
        write_atomic(&dir.path().join(VOCAB_FILE), &vjson).unwrap();
        let err = read_corpus(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "got: {msg}");
        assert!(msg.contains("cup"), "got: {msg}");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        // no temp files left behind
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn missing_corpus_is_prerequisite_error() {
        let dir = TempDir::new().unwrap();
        match read_corpus(&dir.path().join("nope")) {
            Err(Error::MissingPrerequisite(_)) => {}
            other => panic!("expected MissingPrerequisite, got {other:?}"),
        }
    }
}
