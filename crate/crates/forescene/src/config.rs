//! Typed pipeline configuration and the flat key-value config file format.
//!
//! Config files are plain text, one `key = value` per line, `#` comments,
//! and `include <relative-path>` directives that splice another file in
//! place (later keys override earlier ones). Hyperparameters are named after
//! the symbols used throughout the model description: `T` (diffusion
//! timesteps), `S` (window size), `N` (object queries), `C` (latent dim),
//! `L` (decoder blocks), `beta` / `lambda` (latent regularization),
//! `lambda_obj` / `lambda_rel` / `lambda_con` (decoder loss weights).

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Graph auto-encoder architecture. Derived dims:
/// `d_model = n_heads * d_head`, `d_node = d_vis_proj + d_box_proj`,
/// `d_edge = 2 * d_edge_proj + d_union + 2 * d_sem`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeConfig {
    pub d_vis: usize,
    pub d_vis_proj: usize,
    pub d_box_proj: usize,
    pub d_sem: usize,
    pub d_union: usize,
    pub d_edge_proj: usize,
    pub gcn_layers: usize,
    /// Hidden width of the per-triplet MLP; 0 means `d_node + d_edge`.
    pub gcn_hidden: usize,
    pub c_latent: usize,
    pub dec_blocks: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub n_queries: usize,
    pub ffn_mult: usize,
    /// How many memory tokens the latent is split into for cross-attention.
    pub mem_tokens: usize,
    pub tau_obj: f64,
    pub tau_rel: f64,
    pub tau_con: f64,
    /// With-Constraint view: one predicate per (subject, object) pair overall
    /// instead of one per predicate kind.
    pub strict_constraint: bool,
    pub num_objects: usize,
    pub num_predicates: usize,
}

impl Default for GaeConfig {
    /// Full-scale defaults (the reference operating point).
    fn default() -> Self {
        GaeConfig {
            d_vis: 64,
            d_vis_proj: 64,
            d_box_proj: 64,
            d_sem: 32,
            d_union: 16,
            d_edge_proj: 88,
            gcn_layers: 5,
            gcn_hidden: 0,
            c_latent: 512,
            dec_blocks: 6,
            n_heads: 8,
            d_head: 64,
            n_queries: 20,
            ffn_mult: 4,
            mem_tokens: 1,
            tau_obj: 0.5,
            tau_rel: 0.5,
            tau_con: 0.5,
            strict_constraint: false,
            num_objects: 8,
            num_predicates: 6,
        }
    }
}

impl GaeConfig {
    /// Small CPU-friendly operating point used by tests and the shipped
    /// `configs/desk.cfg`.
    pub fn desk() -> Self {
        GaeConfig {
            d_vis: 16,
            d_vis_proj: 16,
            d_box_proj: 8,
            d_sem: 8,
            d_union: 8,
            d_edge_proj: 12,
            gcn_layers: 3,
            gcn_hidden: 0,
            c_latent: 48,
            dec_blocks: 2,
            n_heads: 2,
            d_head: 16,
            n_queries: 8,
            ffn_mult: 2,
            mem_tokens: 1,
            tau_obj: 0.5,
            tau_rel: 0.5,
            tau_con: 0.5,
            strict_constraint: false,
            num_objects: 8,
            num_predicates: 6,
        }
    }

    pub fn d_node(&self) -> usize {
        self.d_vis_proj + self.d_box_proj
    }

    pub fn d_edge(&self) -> usize {
        2 * self.d_edge_proj + self.d_union + 2 * self.d_sem
    }

    pub fn d_model(&self) -> usize {
        self.n_heads * self.d_head
    }

    pub fn gcn_hidden_dim(&self) -> usize {
        if self.gcn_hidden == 0 {
            self.d_node() + self.d_edge()
        } else {
            self.gcn_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_vis,
            self.d_vis_proj,
            self.d_box_proj,
            self.d_sem,
            self.d_union,
            self.d_edge_proj,
            self.gcn_layers,
            self.c_latent,
            self.dec_blocks,
            self.n_heads,
            self.d_head,
            self.n_queries,
            self.ffn_mult,
            self.mem_tokens,
            self.num_objects,
            self.num_predicates,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("all model dimensions must be >= 1".into()));
        }
        if self.num_objects < 2 {
            return Err(Error::Config("need at least 2 object categories".into()));
        }
        Ok(())
    }

    /// Stable content fingerprint, stored in checkpoints so mismatched
    /// architectures are rejected at load.
    pub fn fingerprint(&self) -> String {
        crate::records::sha256_hex(format!("{self:?}").as_bytes())
    }
}

/// Loss weights and optimization settings for the auto-encoder stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor_frac: f64,
    /// Encoder auxiliary classification losses on/off (ablation axis).
    pub aux_loss: bool,
    pub lambda_obj: f64,
    pub lambda_rel: f64,
    pub lambda_con: f64,
    /// Class and box term weights inside the object loss.
    pub lambda_class: f64,
    pub lambda_box: f64,
    /// Box loss composition (matcher defaults).
    pub box_l1: f64,
    pub box_giou: f64,
    /// Cross-entropy down-weighting of the no-object class.
    pub phi_weight: f64,
    /// Latent regularization strength and decoder weight penalty.
    pub beta: f64,
    pub lambda_dec: f64,
}

impl Default for GaeTrainConfig {
    fn default() -> Self {
        GaeTrainConfig {
            epochs: 300,
            batch_size: 32,
            lr: 1e-3,
            lr_floor_frac: 0.01,
            aux_loss: true,
            lambda_obj: 2.0,
            lambda_rel: 15.0,
            lambda_con: 30.0,
            lambda_class: 1.0,
            lambda_box: 1.0,
            box_l1: 5.0,
            box_giou: 2.0,
            phi_weight: 0.1,
            beta: 0.1,
            lambda_dec: 1e-4,
        }
    }
}

/// Noise-schedule family for the diffusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Window width for diffusion training and anticipation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSize {
    Fixed(usize),
    /// Process each sequence as a single window.
    Whole,
}

impl WindowSize {
    /// Concrete width for a sequence of the given length.
    pub fn effective(&self, seq_len: usize) -> usize {
        match *self {
            WindowSize::Fixed(s) => s,
            WindowSize::Whole => seq_len.max(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdmConfig {
    pub t_steps: usize,
    pub window: WindowSize,
    pub dit_blocks: usize,
    pub dit_heads: usize,
    /// Transformer width of the denoiser; tokens are projected `C -> hidden`
    /// on the way in and back on the way out.
    pub dit_hidden: usize,
    pub ffn_mult: usize,
    pub schedule: ScheduleKind,
    /// Adaptive-norm conditioning instead of additive timestep embedding.
    pub adaln: bool,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for LdmConfig {
    fn default() -> Self {
        LdmConfig {
            t_steps: 500,
            window: WindowSize::Fixed(20),
            dit_blocks: 12,
            dit_heads: 6,
            dit_hidden: 384,
            ffn_mult: 4,
            schedule: ScheduleKind::Linear,
            adaln: false,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl LdmConfig {
    /// Short-chain operating point. The squared-cosine schedule reaches a
    /// near-zero cumulative signal retention for any chain length, which the
    /// classic linear ramp only does over hundreds of steps.
    pub fn desk() -> Self {
        LdmConfig {
            t_steps: 120,
            window: WindowSize::Fixed(8),
            dit_blocks: 3,
            dit_heads: 4,
            dit_hidden: 96,
            ffn_mult: 2,
            schedule: ScheduleKind::Cosine,
            adaln: false,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }

    pub fn validate(&self, _c_latent: usize) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if let WindowSize::Fixed(s) = self.window {
            if s < 2 {
                return Err(Error::Config("S must be >= 2 (or `whole`)".into()));
            }
        }
        if self.dit_blocks == 0 || self.dit_heads == 0 || self.dit_hidden == 0 {
            return Err(Error::Config("DiT dims must be >= 1".into()));
        }
        if self.dit_hidden % self.dit_heads != 0 {
            return Err(Error::Config(format!(
                "dit_hidden = {} must be divisible by dit_heads = {}",
                self.dit_hidden, self.dit_heads
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self, c_latent: usize) -> String {
        crate::records::sha256_hex(format!("{self:?},C={c_latent}").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdmTrainConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor_frac: f64,
    /// Probability that a training window noises the contiguous temporal
    /// second half (the anticipation pattern) instead of a uniformly random
    /// half. Zero reproduces plain uniform selection.
    pub suffix_prob: f64,
}

impl Default for LdmTrainConfig {
    fn default() -> Self {
        LdmTrainConfig {
            iters: 3000,
            batch_size: 16,
            lr: 3e-4,
            lr_floor_frac: 0.05,
            suffix_prob: 0.5,
        }
    }
}

/// Synthetic corpus generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Fractions of videos whose single phase switch lands in each shift
    /// tier; the remainder keeps a constant object set.
    pub mix_mid: f64,
    pub mix_hard: f64,
    pub feature_noise: f64,
    pub box_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            videos: 200,
            frames_min: 12,
            frames_max: 20,
            mix_mid: 0.3,
            mix_hard: 0.3,
            feature_noise: 0.05,
            box_noise: 0.01,
        }
    }
}

/// Rollout and evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Independent rollouts per anticipation request.
    pub rollouts: usize,
    /// Observed fraction for fraction-mode anticipation.
    pub fraction: f64,
    pub ks_objects: Vec<usize>,
    pub ks_triplets: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rollouts: 1,
            fraction: 0.5,
            ks_objects: vec![5, 10, 20],
            ks_triplets: vec![10, 20, 50],
        }
    }
}

/// Everything a command needs: model and training settings plus data paths.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub gae: GaeConfig,
    pub gae_train: GaeTrainConfig,
    pub ldm: LdmConfig,
    pub ldm_train: LdmTrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub jobs: usize,
    pub data_dir: PathBuf,
    /// Resolved key-value view for manifests.
    pub resolved: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            gae: GaeConfig::default(),
            gae_train: GaeTrainConfig::default(),
            ldm: LdmConfig::default(),
            ldm_train: LdmTrainConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            jobs: 1,
            data_dir: PathBuf::from("data"),
            resolved: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn desk() -> Self {
        PipelineConfig { gae: GaeConfig::desk(), ldm: LdmConfig::desk(), ..Default::default() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.data_dir.join("corpus")
    }
    pub fn gae_dir(&self) -> PathBuf {
        self.data_dir.join("gae")
    }
    pub fn ldm_dir(&self) -> PathBuf {
        self.data_dir.join("ldm")
    }
    pub fn splits_dir(&self) -> PathBuf {
        self.data_dir.join("splits")
    }
    pub fn rollouts_dir(&self) -> PathBuf {
        self.data_dir.join("rollouts")
    }
    pub fn results_dir(&self) -> PathBuf {
        self.data_dir.join("results")
    }
    pub fn plots_dir(&self) -> PathBuf {
        self.data_dir.join("plots")
    }

    pub fn validate(&self) -> Result<()> {
        self.gae.validate()?;
        self.ldm.validate(self.gae.c_latent)?;
        if !(0.0 < self.eval.fraction && self.eval.fraction < 1.0) {
            return Err(Error::Config(format!(
                "F must lie strictly inside (0, 1), got {}",
                self.eval.fraction
            )));
        }
        if self.eval.rollouts == 0 {
            return Err(Error::Config("r must be >= 1".into()));
        }
        if self.synth.mix_mid + self.synth.mix_hard > 1.0 + 1e-9 {
            return Err(Error::Config("mix_mid + mix_hard must be <= 1".into()));
        }
        if self.synth.frames_min < 2 || self.synth.frames_max < self.synth.frames_min {
            return Err(Error::Config("need frames_max >= frames_min >= 2".into()));
        }
        Ok(())
    }

    /// Parse a config file (with includes), applying keys over the desk
    /// defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = read_flat_config(path)?;
        Self::from_map(raw)
    }

    /// Apply a key-value map over desk defaults. Unknown keys are errors.
    pub fn from_map(raw: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = PipelineConfig::desk();
        for (k, v) in &raw {
            cfg.apply(k, v)?;
        }
        cfg.resolved = raw;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, val: &str) -> Result<()> {
        fn pu(key: &str, v: &str) -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("key `{key}`: expected integer, got `{v}`")))
        }
        fn pf(key: &str, v: &str) -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("key `{key}`: expected number, got `{v}`")))
        }
        fn pb(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "on" | "1" | "yes" => Ok(true),
                "false" | "off" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("key `{key}`: expected boolean, got `{v}`"))),
            }
        }
        fn pks(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        Error::Config(format!("key `{key}`: expected comma-separated integers"))
                    })
                })
                .collect()
        }
        match key {
            // diffusion
            "T" => self.ldm.t_steps = pu(key, val)?,
            "S" => {
                self.ldm.window = if val == "whole" {
                    WindowSize::Whole
                } else {
                    WindowSize::Fixed(pu(key, val)?)
                }
            }
            "dit_blocks" => self.ldm.dit_blocks = pu(key, val)?,
            "dit_heads" => self.ldm.dit_heads = pu(key, val)?,
            "dit_hidden" => self.ldm.dit_hidden = pu(key, val)?,
            "dit_ffn_mult" => self.ldm.ffn_mult = pu(key, val)?,
            "schedule" => {
                self.ldm.schedule = match val {
                    "linear" => ScheduleKind::Linear,
                    "cosine" => ScheduleKind::Cosine,
                    _ => {
                        return Err(Error::Config(format!(
                            "key `schedule`: expected linear|cosine, got `{val}`"
                        )))
                    }
                }
            }
            "adaln" => self.ldm.adaln = pb(key, val)?,
            "beta_start" => self.ldm.beta_start = pf(key, val)?,
            "beta_end" => self.ldm.beta_end = pf(key, val)?,
            // gae architecture
            "N" => self.gae.n_queries = pu(key, val)?,
            "C" => self.gae.c_latent = pu(key, val)?,
            "L" => self.gae.dec_blocks = pu(key, val)?,
            "heads" => self.gae.n_heads = pu(key, val)?,
            "d_head" => self.gae.d_head = pu(key, val)?,
            "ffn_mult" => self.gae.ffn_mult = pu(key, val)?,
            "mem_tokens" => self.gae.mem_tokens = pu(key, val)?,
            "d_vis" => self.gae.d_vis = pu(key, val)?,
            "d_vis_proj" => self.gae.d_vis_proj = pu(key, val)?,
            "d_box_proj" => self.gae.d_box_proj = pu(key, val)?,
            "d_sem" => self.gae.d_sem = pu(key, val)?,
            "d_union" => self.gae.d_union = pu(key, val)?,
            "d_edge_proj" => self.gae.d_edge_proj = pu(key, val)?,
            "gcn_layers" => self.gae.gcn_layers = pu(key, val)?,
            "gcn_hidden" => self.gae.gcn_hidden = pu(key, val)?,
            "tau_obj" => self.gae.tau_obj = pf(key, val)?,
            "tau_rel" => self.gae.tau_rel = pf(key, val)?,
            "tau_con" => self.gae.tau_con = pf(key, val)?,
            "strict_constraint" => self.gae.strict_constraint = pb(key, val)?,
            // gae training
            "epochs_gae" => self.gae_train.epochs = pu(key, val)?,
            "batch_gae" => self.gae_train.batch_size = pu(key, val)?,
            "lr_gae" => self.gae_train.lr = pf(key, val)?,
            "aux_loss" => self.gae_train.aux_loss = pb(key, val)?,
            "lambda_obj" => self.gae_train.lambda_obj = pf(key, val)?,
            "lambda_rel" => self.gae_train.lambda_rel = pf(key, val)?,
            "lambda_con" => self.gae_train.lambda_con = pf(key, val)?,
            "lambda_c" => self.gae_train.lambda_class = pf(key, val)?,
            "lambda_b" => self.gae_train.lambda_box = pf(key, val)?,
            "box_l1" => self.gae_train.box_l1 = pf(key, val)?,
            "box_giou" => self.gae_train.box_giou = pf(key, val)?,
            "phi_weight" => self.gae_train.phi_weight = pf(key, val)?,
            "beta" => self.gae_train.beta = pf(key, val)?,
            "lambda" => self.gae_train.lambda_dec = pf(key, val)?,
            // ldm training
            "iters_ldm" => self.ldm_train.iters = pu(key, val)?,
            "batch_ldm" => self.ldm_train.batch_size = pu(key, val)?,
            "lr_ldm" => self.ldm_train.lr = pf(key, val)?,
            "suffix_prob" => self.ldm_train.suffix_prob = pf(key, val)?,
            // synth
            "videos" => self.synth.videos = pu(key, val)?,
            "frames_min" => self.synth.frames_min = pu(key, val)?,
            "frames_max" => self.synth.frames_max = pu(key, val)?,
            "mix_mid" => self.synth.mix_mid = pf(key, val)?,
            "mix_hard" => self.synth.mix_hard = pf(key, val)?,
            "feature_noise" => self.synth.feature_noise = pf(key, val)?,
            "box_noise" => self.synth.box_noise = pf(key, val)?,
            // eval
            "r" => self.eval.rollouts = pu(key, val)?,
            "F" => self.eval.fraction = pf(key, val)?,
            "ks_objects" => self.eval.ks_objects = pks(key, val)?,
            "ks_triplets" => self.eval.ks_triplets = pks(key, val)?,
            // run
            "seed" => {
                self.seed = val
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("key `seed`: expected integer")))?
            }
            "jobs" => self.jobs = pu(key, val)?,
            "data_dir" => self.data_dir = PathBuf::from(val),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }
}

/// Read a flat `key = value` file, following `include` directives relative to
/// the including file. Keys seen later override earlier ones.
pub fn read_flat_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<PathBuf> = Vec::new();
    read_flat_into(path, &mut out, &mut stack)?;
    Ok(out)
}

fn read_flat_into(
    path: &Path,
    out: &mut BTreeMap<String, String>,
    stack: &mut Vec<PathBuf>,
) -> Result<()> {
    let canonical = path
        .canonicalize()
        .map_err(|_| Error::Config(format!("config file not found: {}", path.display())))?;
    if stack.contains(&canonical) {
        return Err(Error::Config(format!("config include cycle at {}", path.display())));
    }
    stack.push(canonical);
    let text = std::fs::read_to_string(path)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            let inc = path.parent().unwrap_or_else(|| Path::new(".")).join(rest.trim());
            read_flat_into(&inc, out, stack)?;
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{} line {}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    stack.pop();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
        PipelineConfig::desk().validate().unwrap();
    }

    #[test]
    fn parse_with_include_and_override() {
        let dir = TempDir::new().unwrap();
        let base = dir.path().join("base.cfg");
        let main = dir.path().join("main.cfg");
        writeln!(std::fs::File::create(&base).unwrap(), "T = 200\nS = 10").unwrap();
        writeln!(
            std::fs::File::create(&main).unwrap(),
            "include base.cfg\nS = whole  # override\nbeta = 0.2"
        )
        .unwrap();
        let cfg = PipelineConfig::from_file(&main).unwrap();
        assert_eq!(cfg.ldm.t_steps, 200);
        assert_eq!(cfg.ldm.window, WindowSize::Whole);
        assert!((cfg.gae_train.beta - 0.2).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = PipelineConfig::from_map(
            [("no_such_key".to_string(), "1".to_string())].into_iter().collect(),
        )
        .unwrap_err();
        match err {
            Error::Config(m) => assert!(m.contains("no_such_key")),
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn fraction_bounds_enforced() {
        let err = PipelineConfig::from_map(
            [("F".to_string(), "1.5".to_string())].into_iter().collect(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn include_cycle_detected() {
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.cfg");
        let b = dir.path().join("b.cfg");
        writeln!(std::fs::File::create(&a).unwrap(), "include b.cfg").unwrap();
        writeln!(std::fs::File::create(&b).unwrap(), "include a.cfg").unwrap();
        assert!(read_flat_config(&a).is_err());
    }

    #[test]
    fn derived_dims() {
        let g = GaeConfig::desk();
        assert_eq!(g.d_node(), g.d_vis_proj + g.d_box_proj);
        assert_eq!(g.d_edge(), 2 * g.d_edge_proj + g.d_union + 2 * g.d_sem);
        assert_eq!(g.d_model(), g.n_heads * g.d_head);
    }
}
