//! Difficulty-tiered anticipation splits from object distribution shift.
//!
//! For each video the Jaccard distance between the object sets of
//! consecutive frames scores how hard it is to anticipate from that point.
//! Videos shorter than 10 frames are dropped, the first and last three
//! frames are excluded as candidate split points, the top three scoring
//! candidates per video are kept, and tiers are assigned by threshold:
//! MID for `0.33 <= d < 0.66`, HARD for `0.66 <= d <= 1`.

use crate::graph::GraphSequence;
use crate::metrics::jaccard_dist;
use serde::{Deserialize, Serialize};

pub const MIN_FRAMES: usize = 10;
pub const EDGE_EXCLUSION: usize = 3;
pub const MID_LO: f64 = 0.33;
pub const HARD_LO: f64 = 0.66;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Mid,
    Hard,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tier::Mid => write!(f, "mid"),
            Tier::Hard => write!(f, "hard"),
        }
    }
}

/// Tier for a difficulty score: `[0.33, 0.66)` is MID, `[0.66, 1]` is HARD,
/// anything lower is below the benchmark's interest.
pub fn tier_for(difficulty: f64) -> Option<Tier> {
    if (MID_LO..HARD_LO).contains(&difficulty) {
        Some(Tier::Mid)
    } else if (HARD_LO..=1.0).contains(&difficulty) {
        Some(Tier::Hard)
    } else {
        None
    }
}

/// One anticipation split: observe through frame position `f_s`, anticipate
/// the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnticipationSplit {
    pub video_id: String,
    pub f_s: usize,
    pub difficulty: f64,
    pub tier: Tier,
}

/// Build MID/HARD splits for a corpus. Deterministic: candidates are ranked
/// by difficulty with ties broken by the earlier frame.
pub fn build_splits(corpus: &[GraphSequence]) -> Vec<AnticipationSplit> {
    let mut out = Vec::new();
    for seq in corpus {
        let len = seq.len();
        if len < MIN_FRAMES {
            continue;
        }
        // candidate F_s positions avoid the first and last three frames
        let lo = EDGE_EXCLUSION;
        let hi = len - EDGE_EXCLUSION - 1; // F_s + 1 must stay within frames
        let mut scored: Vec<(f64, usize)> = (lo..hi)
            .map(|f_s| {
                let d = jaccard_dist(
                    &seq.graphs[f_s].object_set(),
                    &seq.graphs[f_s + 1].object_set(),
                );
                (d, f_s)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(difficulty, f_s) in scored.iter().take(3) {
            if let Some(tier) = tier_for(difficulty) {
                out.push(AnticipationSplit {
                    video_id: seq.video_id.clone(),
                    f_s,
                    difficulty,
                    tier,
                });
            }
        }
    }
    out
}

/// Summary of a split set: tier counts, the empirical difficulty CDF, and a
/// histogram of observed video fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitStats {
    pub n_mid: usize,
    pub n_hard: usize,
    /// `(difficulty, cumulative fraction)`, non-decreasing, ending at 1.
    pub difficulty_cdf: Vec<(f64, f64)>,
    /// Ten equal bins over observed fraction `f_s / (len - 1)` per tier.
    pub observed_fraction_hist_mid: Vec<usize>,
    pub observed_fraction_hist_hard: Vec<usize>,
}

pub fn split_stats(splits: &[AnticipationSplit], corpus: &[GraphSequence]) -> SplitStats {
    let n_mid = splits.iter().filter(|s| s.tier == Tier::Mid).count();
    let n_hard = splits.len() - n_mid;
    let mut difficulties: Vec<f64> = splits.iter().map(|s| s.difficulty).collect();
    difficulties.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = difficulties.len();
    let difficulty_cdf = difficulties
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, (i + 1) as f64 / n as f64))
        .collect();

    let len_of: std::collections::HashMap<&str, usize> =
        corpus.iter().map(|s| (s.video_id.as_str(), s.len())).collect();
    let mut hist_mid = vec![0usize; 10];
    let mut hist_hard = vec![0usize; 10];
    for s in splits {
        let Some(&len) = len_of.get(s.video_id.as_str()) else { continue };
        let frac = s.f_s as f64 / (len - 1).max(1) as f64;
        let bin = ((frac * 10.0).floor() as usize).min(9);
        match s.tier {
            Tier::Mid => hist_mid[bin] += 1,
            Tier::Hard => hist_hard[bin] += 1,
        }
    }
    SplitStats {
        n_mid,
        n_hard,
        difficulty_cdf,
        observed_fraction_hist_mid: hist_mid,
        observed_fraction_hist_hard: hist_hard,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, SceneGraph};

    fn frame(cats: &[usize], idx: usize) -> SceneGraph {
        SceneGraph {
            nodes: cats
                .iter()
                .map(|&c| Node {
                    category_index: c,
                    bbox: [0.1, 0.1, 0.5, 0.5],
                    visual_feature: vec![0.0; 2],
                })
                .collect(),
            edges: vec![],
            frame_index: idx,
        }
    }

    fn video(id: &str, frames: Vec<Vec<usize>>) -> GraphSequence {
        let graphs = frames.iter().enumerate().map(|(i, c)| frame(c, i)).collect();
        GraphSequence::new(id.into(), graphs).unwrap()
    }

    #[test]
    fn tier_boundaries_exact() {
        assert_eq!(tier_for(0.0), None);
        assert_eq!(tier_for(0.3299), None);
        assert_eq!(tier_for(0.33), Some(Tier::Mid));
        assert_eq!(tier_for(0.5), Some(Tier::Mid));
        assert_eq!(tier_for(0.6599), Some(Tier::Mid));
        assert_eq!(tier_for(0.66), Some(Tier::Hard));
        assert_eq!(tier_for(1.0), Some(Tier::Hard));
        assert_eq!(tier_for(1.0001), None);
    }

    #[test]
    fn short_videos_excluded() {
        let v = video("short", vec![vec![0, 1]; 9]);
        assert!(build_splits(&[v]).is_empty());
    }

    #[test]
    fn single_hard_switch_found() {
        // 12 frames, switch at frame 6: {p,1} -> {p,2,3}, J_dist = 0.75
        let mut frames = vec![vec![0usize, 1]; 6];
        frames.extend(vec![vec![0usize, 2, 3]; 6]);
        let v = video("v", frames);
        let splits = build_splits(&[v]);
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].f_s, 5);
        assert!((splits[0].difficulty - 0.75).abs() < 1e-12);
        assert_eq!(splits[0].tier, Tier::Hard);
    }

    #[test]
    fn constant_video_yields_no_splits() {
        let v = video("flat", vec![vec![0, 1, 2]; 15]);
        assert!(build_splits(&[v]).is_empty());
    }

    #[test]
    fn switch_inside_edge_exclusion_is_ignored() {
        // switch at frame 2 (F_s = 1 < 3): not a candidate
        let mut frames = vec![vec![0usize, 1]; 2];
        frames.extend(vec![vec![0usize, 2, 3]; 10]);
        let v = video("early", frames);
        assert!(build_splits(&[v]).is_empty());
    }

    #[test]
    fn at_most_three_splits_ties_broken_by_earlier_frame() {
        // alternate sets every frame: many identical difficulties
        let frames: Vec<Vec<usize>> = (0..14)
            .map(|i| if i % 2 == 0 { vec![0, 1] } else { vec![0, 2] })
            .collect();
        let v = video("alt", frames);
        let splits = build_splits(&[v]);
        assert_eq!(splits.len(), 3);
        // earliest admissible candidates win ties: F_s = 3, 4, 5
        let fs: Vec<usize> = splits.iter().map(|s| s.f_s).collect();
        assert_eq!(fs, vec![3, 4, 5]);
        for s in &splits {
            assert!(s.f_s >= EDGE_EXCLUSION);
        }
    }

    #[test]
    fn stats_cdf_monotone_ends_at_one() {
        let mut frames = vec![vec![0usize, 1]; 6];
        frames.extend(vec![vec![0usize, 2, 3]; 6]);
        let v1 = video("a", frames.clone());
        let mut frames2 = vec![vec![0usize, 1, 2, 3]; 6];
        frames2.extend(vec![vec![0usize, 1, 2, 4]; 6]); // J_dist = 0.4 MID
        let v2 = video("b", frames2);
        let corpus = vec![v1, v2];
        let splits = build_splits(&corpus);
        let stats = split_stats(&splits, &corpus);
        assert_eq!(stats.n_hard, 1);
        assert_eq!(stats.n_mid, 1);
        let mut prev = 0.0;
        for &(_, f) in &stats.difficulty_cdf {
            assert!(f >= prev);
            prev = f;
        }
        assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_splits_zero_counts() {
        let stats = split_stats(&[], &[]);
        assert_eq!(stats.n_mid + stats.n_hard, 0);
        assert!(stats.difficulty_cdf.is_empty());
    }
}
