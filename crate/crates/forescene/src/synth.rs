//! Seeded synthetic activity corpus: videos of phase-structured object sets
//! with category-conditioned Gaussian features, smoothly drifting boxes, and
//! person-centric predicate edges.
//!
//! Videos follow fixed script templates whose initial object set uniquely
//! determines the post-switch set, so the future is learnable from the
//! observed prefix. Feature noise is the single difficulty knob.

use crate::benchmark::Tier;
use crate::config::SynthConfig;
use crate::error::{Error, Result};
use crate::graph::{Edge, GraphSequence, Node, SceneGraph, Vocabulary, PERSON_INDEX};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// One phase of an activity: a fixed object set and per-pair predicate
/// probabilities for the person -> object edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase {
    pub duration: usize,
    /// Active object categories; must contain the person.
    pub objects: Vec<usize>,
    /// `(object category, [(predicate, probability)])` for the person edge.
    pub pair_predicates: Vec<(usize, Vec<(usize, f64)>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivityScript {
    pub video_id: String,
    pub phases: Vec<Phase>,
    pub feature_noise: f64,
    pub box_noise: f64,
}

impl ActivityScript {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidData("script needs at least one phase".into()));
        }
        for p in &self.phases {
            if p.duration == 0 {
                return Err(Error::InvalidData("phase durations must be >= 1".into()));
            }
            if !p.objects.contains(&PERSON_INDEX) {
                return Err(Error::InvalidData("person must be active in every phase".into()));
            }
        }
        Ok(())
    }
}

/// Corpus-level category feature model: one Gaussian mean per category.
/// Shared across all videos of a corpus so features are consistent.
#[derive(Debug, Clone)]
pub struct CategoryFeatures {
    pub means: Array2<f64>,
}

impl CategoryFeatures {
    pub fn new(num_objects: usize, d_vis: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xc0ffee);
        let means = Array2::from_shape_fn((num_objects, d_vis), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        CategoryFeatures { means }
    }

    pub fn d_vis(&self) -> usize {
        self.means.ncols()
    }
}

/// Default predicate set per object category, spanning the three kinds.
/// Constant across phases so relation structure is tied to object identity.
fn predicates_for(vocab: &Vocabulary, category: usize) -> Vec<(usize, f64)> {
    // desk vocabulary predicate indices:
    // 0 looking_at (attention), 1 in_front_of / 2 beneath (spatial),
    // 3 holding / 4 touching / 5 sitting_on (contacting)
    let p = |name: &str| vocab.predicate_index(name).expect("desk predicate");
    match category % 7 {
        1 => vec![(p("looking_at"), 1.0), (p("holding"), 1.0)],
        2 => vec![(p("in_front_of"), 1.0)],
        3 => vec![(p("looking_at"), 1.0), (p("touching"), 1.0)],
        4 => vec![(p("beneath"), 1.0), (p("holding"), 1.0)],
        5 => vec![(p("looking_at"), 1.0), (p("in_front_of"), 1.0), (p("holding"), 1.0)],
        6 => vec![(p("touching"), 1.0)],
        _ => vec![(p("sitting_on"), 1.0), (p("looking_at"), 1.0)],
    }
}

fn phase_for(vocab: &Vocabulary, duration: usize, objects: &[usize]) -> Phase {
    let mut all = vec![PERSON_INDEX];
    all.extend_from_slice(objects);
    Phase {
        duration,
        pair_predicates: objects.iter().map(|&o| (o, predicates_for(vocab, o))).collect(),
        objects: all,
    }
}

/// Per-node box trajectory: center drifts by a small Gaussian step per
/// frame, size fixed. Always yields a valid normalized box.
struct BoxTrack {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoxTrack {
    fn new(rng: &mut ChaCha12Rng, is_person: bool) -> Self {
        let (w, h) = if is_person {
            (rng.random_range(0.3..0.5), rng.random_range(0.4..0.6))
        } else {
            (rng.random_range(0.08..0.25), rng.random_range(0.08..0.25))
        };
        BoxTrack {
            cx: rng.random_range(w / 2.0 + 0.01..1.0 - w / 2.0 - 0.01),
            cy: rng.random_range(h / 2.0 + 0.01..1.0 - h / 2.0 - 0.01),
            w,
            h,
        }
    }

    fn step(&mut self, rng: &mut ChaCha12Rng, noise: f64) -> [f64; 4] {
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        self.cx = (self.cx + dx * noise).clamp(self.w / 2.0 + 0.01, 1.0 - self.w / 2.0 - 0.01);
        self.cy = (self.cy + dy * noise).clamp(self.h / 2.0 + 0.01, 1.0 - self.h / 2.0 - 0.01);
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }
}

/// Generate one video from a script. Deterministic per `(script, seed)`.
pub fn generate(
    script: &ActivityScript,
    feats: &CategoryFeatures,
    seed: u64,
) -> Result<GraphSequence> {
    script.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d_vis = feats.d_vis();
    // persistent per-category tracks within the video
    let mut tracks: std::collections::HashMap<usize, BoxTrack> = Default::default();
    let mut graphs = Vec::new();
    let mut frame_index = 0usize;
    for phase in &script.phases {
        for _ in 0..phase.duration {
            let mut nodes = Vec::with_capacity(phase.objects.len());
            let mut slot_of = std::collections::HashMap::new();
            for &cat in &phase.objects {
                let track = tracks
                    .entry(cat)
                    .or_insert_with(|| BoxTrack::new(&mut rng, cat == PERSON_INDEX));
                let bbox = track.step(&mut rng, script.box_noise);
                let feature: Vec<f32> = (0..d_vis)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (feats.means[[cat, j]] + script.feature_noise * z) as f32
                    })
                    .collect();
                slot_of.insert(cat, nodes.len());
                nodes.push(Node { category_index: cat, bbox, visual_feature: feature });
            }
            let mut edges = Vec::new();
            for (obj_cat, preds) in &phase.pair_predicates {
                let Some(&obj_slot) = slot_of.get(obj_cat) else { continue };
                let mut chosen: BTreeSet<usize> = preds
                    .iter()
                    .filter(|&&(_, prob)| rng.random_range(0.0..1.0) < prob)
                    .map(|&(p, _)| p)
                    .collect();
                if chosen.is_empty() {
                    // ground-truth edges carry at least one predicate
                    let best = preds
                        .iter()
                        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .map(|&(p, _)| p);
                    if let Some(p) = best {
                        chosen.insert(p);
                    }
                }
                if !chosen.is_empty() {
                    edges.push(Edge {
                        subject_index: slot_of[&PERSON_INDEX],
                        object_index: obj_slot,
                        predicates: chosen,
                    });
                }
            }
            graphs.push(SceneGraph { nodes, edges, frame_index });
            frame_index += 1;
        }
    }
    GraphSequence::new(script.video_id.clone(), graphs)
}

/// What the generator promised for one video; the oracle for benchmark
/// tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub template: String,
    /// `(start, end_exclusive, object set)` per phase.
    pub phases: Vec<(usize, usize, Vec<usize>)>,
    /// Split position of a phase switch: the last frame of the first phase.
    pub switch_f_s: Option<usize>,
    pub expected_j_dist: f64,
    pub expected_tier: Option<Tier>,
}

/// Script templates. The initial object set identifies the template, so the
/// post-switch set is a deterministic function of the observable prefix.
/// Sets listed without the person; expected distances include the person.
const TEMPLATES: &[(&str, &[usize], Option<&[usize]>)] = &[
    ("zero_a", &[1], None),
    ("zero_b", &[2], None),
    ("mid_a", &[1, 2, 3], Some(&[1, 2, 4])), // J_dist 0.4
    ("mid_b", &[3, 4], Some(&[3, 5])),       // J_dist 0.5
    ("hard_a", &[5, 6], Some(&[2, 7])),      // J_dist 0.8
    ("hard_b", &[7], Some(&[3, 6])),         // J_dist 0.75
];

fn expected_j_dist(a: &[usize], b: &[usize]) -> f64 {
    let sa: BTreeSet<usize> = a.iter().copied().chain([PERSON_INDEX]).collect();
    let sb: BTreeSet<usize> = b.iter().copied().chain([PERSON_INDEX]).collect();
    crate::metrics::jaccard_dist(&sa, &sb)
}

/// Generate a corpus with a controlled tier mix. Returns the sequences, the
/// per-video manifests, and the shared category feature model.
pub fn generate_corpus(
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    d_vis: usize,
    seed: u64,
) -> Result<(Vec<GraphSequence>, Vec<VideoManifest>, CategoryFeatures)> {
    let feats = CategoryFeatures::new(vocab.num_objects(), d_vis, seed);
    let (seqs, manifests) = generate_corpus_with(cfg, vocab, &feats, seed)?;
    Ok((seqs, manifests, feats))
}

/// Like [`generate_corpus`] but with an explicit feature model, so held-out
/// corpora can share the training corpus's category features.
pub fn generate_corpus_with(
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    feats: &CategoryFeatures,
    seed: u64,
) -> Result<(Vec<GraphSequence>, Vec<VideoManifest>)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xfeed5eed);
    let n = cfg.videos;
    let n_hard = (n as f64 * cfg.mix_hard).round() as usize;
    let n_mid = (n as f64 * cfg.mix_mid).round() as usize;
    if n_hard + n_mid > 0 && cfg.frames_min < 8 {
        return Err(Error::Config(
            "switch videos need frames_min >= 8 so the switch avoids the edge exclusion".into(),
        ));
    }

    let mut sequences = Vec::with_capacity(n);
    let mut manifests = Vec::with_capacity(n);
    for i in 0..n {
        let (template_pool, tier): (&[usize], Option<Tier>) = if i < n_hard {
            (&[4, 5], Some(Tier::Hard))
        } else if i < n_hard + n_mid {
            (&[2, 3], Some(Tier::Mid))
        } else {
            (&[0, 1], None)
        };
        let (name, initial, switched) = TEMPLATES[template_pool[i % 2]];
        let video_id = format!("v{i:04}");
        let len = rng.random_range(cfg.frames_min..=cfg.frames_max);
        let (phases, manifest_phases, switch_f_s, expected) = match switched {
            Some(post) => {
                // keep the switch discoverable: F_s = d_a - 1 in [3, len-4]
                let d_a = rng.random_range(4..=(len - 4));
                let d_b = len - d_a;
                let phases = vec![
                    phase_for(vocab, d_a, initial),
                    phase_for(vocab, d_b, post),
                ];
                let mp = vec![
                    (0, d_a, phases[0].objects.clone()),
                    (d_a, len, phases[1].objects.clone()),
                ];
                (phases, mp, Some(d_a - 1), expected_j_dist(initial, post))
            }
            None => {
                let phases = vec![phase_for(vocab, len, initial)];
                let mp = vec![(0, len, phases[0].objects.clone())];
                (phases, mp, None, 0.0)
            }
        };
        let script = ActivityScript {
            video_id: video_id.clone(),
            phases,
            feature_noise: cfg.feature_noise,
            box_noise: cfg.box_noise,
        };
        let video_seed = seed.wrapping_add(0x1000).wrapping_add(i as u64);
        sequences.push(generate(&script, feats, video_seed)?);
        manifests.push(VideoManifest {
            video_id,
            template: name.to_string(),
            phases: manifest_phases,
            switch_f_s,
            expected_j_dist: expected,
            expected_tier: tier,
        });
    }
    Ok((sequences, manifests))
}

/// Nearest-class-mean linear probe: estimate per-category centroids from the
/// node features, classify every node by nearest centroid, return accuracy.
pub fn nearest_centroid_accuracy(graphs: &[SceneGraph], num_objects: usize) -> f64 {
    let d = match graphs.iter().find_map(|g| g.nodes.first()) {
        Some(n) => n.visual_feature.len(),
        None => return 0.0,
    };
    let mut sums = vec![vec![0.0f64; d]; num_objects];
    let mut counts = vec![0usize; num_objects];
    for g in graphs {
        for n in &g.nodes {
            counts[n.category_index] += 1;
            for (j, &v) in n.visual_feature.iter().enumerate() {
                sums[n.category_index][j] += f64::from(v);
            }
        }
    }
    let centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c == 0 {
                None
            } else {
                Some(s.into_iter().map(|x| x / c as f64).collect())
            }
        })
        .collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for g in graphs {
        for n in &g.nodes {
            total += 1;
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                if let Some(ce) = centroid {
                    let dist: f64 = ce
                        .iter()
                        .zip(&n.visual_feature)
                        .map(|(&m, &x)| (f64::from(x) - m).powi(2))
                        .sum();
                    if dist < best_d {
                        best_d = dist;
                        best = Some(c);
                    }
                }
            }
            if best == Some(n.category_index) {
                hits += 1;
            }
        }
    }
    hits as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::build_splits;

    fn base_cfg() -> SynthConfig {
        SynthConfig { videos: 12, frames_min: 12, frames_max: 16, ..Default::default() }
    }

    #[test]
    fn single_phase_script_constant_sets() {
        let vocab = Vocabulary::desk_default();
        let feats = CategoryFeatures::new(vocab.num_objects(), 4, 0);
        let script = ActivityScript {
            video_id: "v".into(),
            phases: vec![phase_for(&vocab, 10, &[1])],
            feature_noise: 0.05,
            box_noise: 0.01,
        };
        let seq = generate(&script, &feats, 1).unwrap();
        assert_eq!(seq.len(), 10);
        let first = seq.graphs[0].object_set();
        assert!(seq.graphs.iter().all(|g| g.object_set() == first));
    }

    #[test]
    fn two_phase_switch_has_expected_distance() {
        // cup -> dish at frame 5: {person,cup} -> {person,dish} is 1/3 overlap
        let vocab = Vocabulary::desk_default();
        let feats = CategoryFeatures::new(vocab.num_objects(), 4, 0);
        let script = ActivityScript {
            video_id: "v".into(),
            phases: vec![phase_for(&vocab, 5, &[1]), phase_for(&vocab, 5, &[2])],
            feature_noise: 0.05,
            box_noise: 0.01,
        };
        let seq = generate(&script, &feats, 2).unwrap();
        let d = crate::metrics::jaccard_dist(
            &seq.graphs[4].object_set(),
            &seq.graphs[5].object_set(),
        );
        assert!((d - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_identical_sequences() {
        let vocab = Vocabulary::desk_default();
        let feats = CategoryFeatures::new(vocab.num_objects(), 4, 3);
        let script = ActivityScript {
            video_id: "v".into(),
            phases: vec![phase_for(&vocab, 8, &[1, 3])],
            feature_noise: 0.05,
            box_noise: 0.01,
        };
        let a = generate(&script, &feats, 42).unwrap();
        let b = generate(&script, &feats, 42).unwrap();
        assert_eq!(a, b);
        let c = generate(&script, &feats, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_sequences_validate() {
        let vocab = Vocabulary::desk_default();
        let (seqs, _, _) = generate_corpus(&base_cfg(), &vocab, 8, 7).unwrap();
        for seq in &seqs {
            assert!(seq.validate(&vocab).is_empty(), "video {}", seq.video_id);
        }
    }

    #[test]
    fn corpus_counts_and_lengths_match_request() {
        let vocab = Vocabulary::desk_default();
        let cfg = base_cfg();
        let (seqs, manifests, _) = generate_corpus(&cfg, &vocab, 8, 9).unwrap();
        assert_eq!(seqs.len(), cfg.videos);
        assert_eq!(manifests.len(), cfg.videos);
        for s in &seqs {
            assert!(s.len() >= cfg.frames_min && s.len() <= cfg.frames_max);
        }
    }

    #[test]
    fn zero_hard_mix_produces_no_hard_splits() {
        let vocab = Vocabulary::desk_default();
        let cfg = SynthConfig { mix_hard: 0.0, mix_mid: 0.5, ..base_cfg() };
        let (seqs, _, _) = generate_corpus(&cfg, &vocab, 8, 11).unwrap();
        let splits = build_splits(&seqs);
        assert!(splits.iter().all(|s| s.tier == Tier::Mid));
        assert!(!splits.is_empty());
    }

    #[test]
    fn manifest_agrees_with_benchmark_on_noise_free_scripts() {
        let vocab = Vocabulary::desk_default();
        let cfg = SynthConfig { feature_noise: 0.0, ..base_cfg() };
        let (seqs, manifests, _) = generate_corpus(&cfg, &vocab, 8, 13).unwrap();
        let splits = build_splits(&seqs);
        for m in &manifests {
            let found: Vec<_> =
                splits.iter().filter(|s| s.video_id == m.video_id).collect();
            match (m.switch_f_s, m.expected_tier) {
                (Some(f_s), Some(tier)) => {
                    assert_eq!(found.len(), 1, "video {}", m.video_id);
                    assert_eq!(found[0].f_s, f_s);
                    assert_eq!(found[0].tier, tier);
                    assert!((found[0].difficulty - m.expected_j_dist).abs() < 1e-12);
                }
                _ => assert!(found.is_empty(), "video {}", m.video_id),
            }
        }
    }

    #[test]
    fn features_linearly_separable_at_low_noise() {
        let vocab = Vocabulary::desk_default();
        let cfg = SynthConfig { feature_noise: 0.1, ..base_cfg() };
        let (seqs, _, _) = generate_corpus(&cfg, &vocab, 8, 17).unwrap();
        let graphs: Vec<SceneGraph> =
            seqs.iter().flat_map(|s| s.graphs.iter().cloned()).collect();
        let acc = nearest_centroid_accuracy(&graphs, vocab.num_objects());
        assert!(acc > 0.95, "probe accuracy {acc}");
    }

    #[test]
    fn mid_template_hits_exact_half_distance() {
        // engineered 2-of-3 shared switch: J_dist exactly 0.5
        assert!((expected_j_dist(&[3, 4], &[3, 5]) - 0.5).abs() < 1e-12);
    }
}
