//! Conditional latent diffusion over graph-latent sequences.
//!
//! Training draws fixed-size windows from each sequence, noises a random
//! half of the tokens at a shared timestep, and trains a transformer
//! denoiser to predict the injected noise at the noised positions only;
//! conditioning tokens pass through clean and contribute no loss. Tokens are
//! tagged with a role embedding (conditioning vs noised), a sinusoidal
//! position encoding relative to the window, and the timestep embedding.
//!
//! Sampling runs standard ancestral denoising from `t = T` down to `1`,
//! updating only the noised positions and holding conditioning tokens fixed
//! at every step.

use crate::config::{LdmConfig, LdmTrainConfig, ScheduleKind};
use crate::error::{Error, Result};
use crate::params::{
    merge_grads, read_checkpoint, write_checkpoint, Adam, GradMap, Init, ParamStore,
};
use crate::records::write_atomic;
use crate::tape::{NodeId, Tape};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::path::Path;

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Per-step noise coefficients. `betas[t-1]` is the step-`t` variance;
/// `alpha_bars[t]` is the cumulative signal retention with `alpha_bars[0] =
/// 1`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub t_steps: usize,
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Self {
        assert!(t_steps >= 1);
        let betas: Vec<f64> = (0..t_steps)
            .map(|i| {
                if t_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Squared-cosine signal schedule.
    pub fn cosine(t_steps: usize) -> Self {
        assert!(t_steps >= 1);
        let s = 0.008;
        let f = |t: f64| ((t / t_steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2);
        let f0 = f(0.0);
        let mut betas = Vec::with_capacity(t_steps);
        let mut prev = 1.0f64;
        for t in 1..=t_steps {
            let ab = (f(t as f64) / f0).clamp(0.0, 1.0);
            let beta = (1.0 - ab / prev).clamp(0.0, 0.999);
            betas.push(beta);
            prev = ab;
        }
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        DiffusionSchedule { t_steps: betas.len(), betas, alpha_bars }
    }

    pub fn from_config(cfg: &LdmConfig) -> Self {
        match cfg.schedule {
            ScheduleKind::Linear => Self::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end),
            ScheduleKind::Cosine => Self::cosine(cfg.t_steps),
        }
    }

    /// Cumulative signal retention at step `t` (0 ..= T).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Step variance for `t` in `1 ..= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Forward noising: `z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps`.
    /// Returns the noised rows and the noise drawn.
    pub fn forward_noise(
        &self,
        z: &Array2<f64>,
        t: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if t > self.t_steps {
            return Err(Error::InvalidData(format!(
                "t = {t} outside schedule range 0..={}",
                self.t_steps
            )));
        }
        let eps = Array2::from_shape_fn(z.raw_dim(), |_| StandardNormal.sample(rng));
        let ab = self.alpha_bar(t);
        let noisy = z * ab.sqrt() + &eps * (1.0 - ab).sqrt();
        Ok((noisy, eps))
    }

    /// One ancestral step `t -> t-1` in place on a token row. The implied
    /// clean sample is clamped into `[lo, hi]` per coordinate before the
    /// posterior mean is formed (static thresholding); unclamped, prediction
    /// errors at high noise are amplified by `sqrt((1-abar)/abar)` and their
    /// bias accumulates across steps until the chain drifts off-scale.
    pub fn ddpm_step(
        &self,
        x: &mut [f64],
        eps_hat: &[f64],
        t: usize,
        lo: &[f64],
        hi: &[f64],
        rng: &mut ChaCha12Rng,
    ) {
        let beta = self.beta(t);
        let alpha = 1.0 - beta;
        let ab_t = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let sigma = if t > 1 {
            ((1.0 - ab_prev) / (1.0 - ab_t) * beta).max(0.0).sqrt()
        } else {
            0.0
        };
        // posterior mean in terms of the clamped x0 estimate
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        for (j, (xi, &ei)) in x.iter_mut().zip(eps_hat).enumerate() {
            let x0 = (*xi - (1.0 - ab_t).sqrt() * ei) / ab_t.sqrt().max(1e-300);
            let x0 = x0.clamp(lo[j], hi[j]);
            let mean = c0 * x0 + ct * *xi;
            let noise: f64 = if t > 1 { StandardNormal.sample(rng) } else { 0.0 };
            *xi = mean + sigma * noise;
        }
    }
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Conditioning,
    Noised,
}

/// One training window: tokens (noised rows already carry their noise),
/// per-token roles and temporal positions, the shared timestep, the drawn
/// noise, and which rows contribute to the loss (noised and not padding).
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub tokens: Array2<f64>,
    pub roles: Vec<Role>,
    pub positions: Vec<usize>,
    pub t: usize,
    pub eps: Array2<f64>,
    pub loss_rows: Vec<bool>,
}

/// Denoiser model: DiT-style transformer over latent tokens.
#[derive(Debug, Clone)]
pub struct LdmModel {
    pub cfg: LdmConfig,
    pub c_latent: usize,
    pub params: ParamStore,
}

/// Register denoiser parameters (`dit.*`) and the latent standardization
/// constants (`norm.*`, identity until fitted; never touched by gradients).
pub fn init_dit_params(
    store: &mut ParamStore,
    cfg: &LdmConfig,
    c_latent: usize,
    rng: &mut ChaCha12Rng,
) {
    store.insert("norm.mean", Init::zeros(1, c_latent));
    store.insert("norm.std", Init::ones(1, c_latent));
    // per-coordinate clean-sample bounds in standardized space
    store.insert("norm.lo", Array2::from_elem((1, c_latent), -X0_CLIP_DEFAULT));
    store.insert("norm.hi", Array2::from_elem((1, c_latent), X0_CLIP_DEFAULT));
    let h = cfg.dit_hidden;
    store.insert("dit.in.w", Init::xavier(rng, c_latent, h));
    store.insert("dit.in.b", Init::zeros(1, h));
    store.insert("dit.temb.w1", Init::xavier(rng, h, h));
    store.insert("dit.temb.b1", Init::zeros(1, h));
    store.insert("dit.temb.w2", Init::xavier(rng, h, h));
    store.insert("dit.temb.b2", Init::zeros(1, h));
    store.insert("dit.role", Init::normal(rng, 2, h, 0.1));
    let ffn = h * cfg.ffn_mult;
    for l in 0..cfg.dit_blocks {
        for part in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("dit.blk{l}.attn.{part}"), Init::xavier(rng, h, h));
        }
        for part in ["bq", "bk", "bv", "bo"] {
            store.insert(&format!("dit.blk{l}.attn.{part}"), Init::zeros(1, h));
        }
        store.insert(&format!("dit.blk{l}.ffn.w1"), Init::xavier(rng, h, ffn));
        store.insert(&format!("dit.blk{l}.ffn.b1"), Init::zeros(1, ffn));
        store.insert(&format!("dit.blk{l}.ffn.w2"), Init::xavier(rng, ffn, h));
        store.insert(&format!("dit.blk{l}.ffn.b2"), Init::zeros(1, h));
        for ln in ["ln1", "ln2"] {
            store.insert(&format!("dit.blk{l}.{ln}.g"), Init::ones(1, h));
            store.insert(&format!("dit.blk{l}.{ln}.b"), Init::zeros(1, h));
        }
        if cfg.adaln {
            // zero-initialized modulation: blocks start as identity
            store.insert(&format!("dit.blk{l}.mod.w"), Init::zeros(h, 6 * h));
            store.insert(&format!("dit.blk{l}.mod.b"), Init::zeros(1, 6 * h));
        }
    }
    store.insert("dit.out.ln.g", Init::ones(1, h));
    store.insert("dit.out.ln.b", Init::zeros(1, h));
    store.insert("dit.out.w", Init::xavier(rng, h, c_latent));
    store.insert("dit.out.b", Init::zeros(1, c_latent));
}

impl LdmModel {
    pub fn init(cfg: LdmConfig, c_latent: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_dit_params(&mut params, &cfg, c_latent, &mut rng);
        LdmModel { cfg, c_latent, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = write_checkpoint(&self.params, &self.cfg.fingerprint(self.c_latent));
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path, cfg: LdmConfig, c_latent: usize) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPrerequisite(format!("{}", path.display())));
        }
        let (params, fp) = read_checkpoint(&std::fs::read(path)?)?;
        if fp != cfg.fingerprint(c_latent) {
            return Err(Error::Config(format!(
                "checkpoint {} was written with a different denoiser configuration",
                path.display()
            )));
        }
        Ok(LdmModel { cfg, c_latent, params })
    }

    /// Predict the noise at every token of a window (concrete arrays, in
    /// standardized latent space).
    pub fn predict_eps(
        &self,
        tokens: &Array2<f64>,
        roles: &[Role],
        positions: &[usize],
        t: usize,
    ) -> Array2<f64> {
        let mut tape = Tape::new();
        let tid = tape.constant(tokens.clone());
        let out = denoise_on_tape(&mut tape, &self.params, &self.cfg, self.c_latent, tid, roles, positions, t);
        tape.value(out).clone()
    }

    /// Fit the latent standardization constants from raw latent rows. The
    /// per-coordinate std is floored so near-constant coordinates stay tame.
    pub fn fit_latent_stats(&mut self, sequences: &[Array2<f64>]) {
        let c = self.c_latent;
        let mut mean = vec![0.0f64; c];
        let mut count = 0.0f64;
        for s in sequences {
            for row in s.rows() {
                for (j, &v) in row.iter().enumerate() {
                    mean[j] += v;
                }
                count += 1.0;
            }
        }
        for m in &mut mean {
            *m /= count.max(1.0);
        }
        let mut var = vec![0.0f64; c];
        for s in sequences {
            for row in s.rows() {
                for (j, &v) in row.iter().enumerate() {
                    var[j] += (v - mean[j]) * (v - mean[j]);
                }
            }
        }
        let mean_arr = Array2::from_shape_fn((1, c), |(_, j)| mean[j]);
        let std_arr =
            Array2::from_shape_fn((1, c), |(_, j)| (var[j] / count.max(1.0)).sqrt().max(1e-3));
        *self.params.get_mut("norm.mean") = mean_arr;
        *self.params.get_mut("norm.std") = std_arr;
        // clean-sample bounds: normalized data hull with a margin
        let mean = self.params.get("norm.mean").clone();
        let std = self.params.get("norm.std").clone();
        let mut lo = vec![f64::INFINITY; c];
        let mut hi = vec![f64::NEG_INFINITY; c];
        for s in sequences {
            for row in s.rows() {
                for (j, &v) in row.iter().enumerate() {
                    let z = (v - mean[[0, j]]) / std[[0, j]];
                    lo[j] = lo[j].min(z);
                    hi[j] = hi[j].max(z);
                }
            }
        }
        let margin = 0.5;
        *self.params.get_mut("norm.lo") = Array2::from_shape_fn((1, c), |(_, j)| lo[j] - margin);
        *self.params.get_mut("norm.hi") = Array2::from_shape_fn((1, c), |(_, j)| hi[j] + margin);
    }

    /// Raw latent rows -> standardized diffusion space.
    pub fn normalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mean = self.params.get("norm.mean");
        let std = self.params.get("norm.std");
        Array2::from_shape_fn(rows.raw_dim(), |(i, j)| (rows[[i, j]] - mean[[0, j]]) / std[[0, j]])
    }

    /// Standardized rows -> raw latent space.
    pub fn denormalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mean = self.params.get("norm.mean");
        let std = self.params.get("norm.std");
        Array2::from_shape_fn(rows.raw_dim(), |(i, j)| rows[[i, j]] * std[[0, j]] + mean[[0, j]])
    }
}

fn sinusoidal_row(value: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut row = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10_000f64).ln() / half.max(1) as f64).exp();
        row[2 * i] = (value * freq).sin();
        row[2 * i + 1] = (value * freq).cos();
    }
    if dim % 2 == 1 {
        row[dim - 1] = value.sin();
    }
    row
}

/// Build the denoiser forward pass on a tape. `tokens` is `[len, C]`;
/// returns the predicted noise `[len, C]`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LdmConfig,
    c_latent: usize,
    tokens: NodeId,
    roles: &[Role],
    positions: &[usize],
    t: usize,
) -> NodeId {
    let len = tape.shape(tokens).0;
    debug_assert_eq!(tape.shape(tokens).1, c_latent);
    debug_assert_eq!(roles.len(), len);
    debug_assert_eq!(positions.len(), len);
    let h = cfg.dit_hidden;
    let heads = cfg.dit_heads;
    let d_head = h / heads;

    let p = |tape: &mut Tape, name: &str| tape.param(name, store.get(name).clone());

    // input projection
    let in_w = p(tape, "dit.in.w");
    let in_b = p(tape, "dit.in.b");
    let mut x = tape.matmul(tokens, in_w);
    x = tape.add_row(x, in_b);

    // window-relative sinusoidal positions
    let base = positions.iter().copied().min().unwrap_or(0);
    let pos_rows: Vec<Vec<f64>> =
        positions.iter().map(|&p| sinusoidal_row((p - base) as f64, h)).collect();
    let pos = Array2::from_shape_fn((len, h), |(i, j)| pos_rows[i][j]);
    let pos = tape.constant(pos);
    x = tape.add(x, pos);

    // role embedding per token
    let role_table = p(tape, "dit.role");
    let role_idx: Vec<usize> = roles
        .iter()
        .map(|r| match r {
            Role::Conditioning => 0,
            Role::Noised => 1,
        })
        .collect();
    let role_emb = tape.gather_rows(role_table, &role_idx);
    x = tape.add(x, role_emb);

    // timestep embedding through a two-layer MLP
    let t_sin = Array2::from_shape_vec((1, h), sinusoidal_row(t as f64, h)).unwrap();
    let t_sin = tape.constant(t_sin);
    let tw1 = p(tape, "dit.temb.w1");
    let tb1 = p(tape, "dit.temb.b1");
    let tw2 = p(tape, "dit.temb.w2");
    let tb2 = p(tape, "dit.temb.b2");
    let te = tape.matmul(t_sin, tw1);
    let te = tape.add_row(te, tb1);
    let te = tape.gelu(te);
    let te = tape.matmul(te, tw2);
    let t_emb = tape.add_row(te, tb2);
    if !cfg.adaln {
        x = tape.add_row(x, t_emb);
    }

    for l in 0..cfg.dit_blocks {
        let blk = format!("dit.blk{l}");
        let modulation = if cfg.adaln {
            let mw = p(tape, &format!("{blk}.mod.w"));
            let mb = p(tape, &format!("{blk}.mod.b"));
            let m = tape.matmul(t_emb, mw);
            Some(tape.add_row(m, mb))
        } else {
            None
        };
        let modulate = |tape: &mut Tape, xn: NodeId, m: NodeId, idx: usize| {
            // slice idx-th [1,h] chunk: scale/shift
            let gamma = tape.slice_cols(m, idx * h, (idx + 1) * h);
            let beta = tape.slice_cols(m, (idx + 1) * h, (idx + 2) * h);
            let ones = tape.constant(Array2::from_elem((1, h), 1.0));
            let g1 = tape.add(gamma, ones);
            let grow = tape.row_repeat(g1, len);
            let scaled = tape.mul(xn, grow);
            tape.add_row(scaled, beta)
        };

        let g1 = p(tape, &format!("{blk}.ln1.g"));
        let b1 = p(tape, &format!("{blk}.ln1.b"));
        let mut xn = tape.layer_norm_rows(x, g1, b1);
        if let Some(m) = modulation {
            xn = modulate(tape, xn, m, 0);
        }
        // self-attention
        let wq = p(tape, &format!("{blk}.attn.wq"));
        let bq = p(tape, &format!("{blk}.attn.bq"));
        let wk = p(tape, &format!("{blk}.attn.wk"));
        let bk = p(tape, &format!("{blk}.attn.bk"));
        let wv = p(tape, &format!("{blk}.attn.wv"));
        let bv = p(tape, &format!("{blk}.attn.bv"));
        let wo = p(tape, &format!("{blk}.attn.wo"));
        let bo = p(tape, &format!("{blk}.attn.bo"));
        let q = tape.matmul(xn, wq);
        let q = tape.add_row(q, bq);
        let k = tape.matmul(xn, wk);
        let k = tape.add_row(k, bk);
        let v = tape.matmul(xn, wv);
        let v = tape.add_row(v, bv);
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut head_outs = Vec::with_capacity(heads);
        for hh in 0..heads {
            let (from, to) = (hh * d_head, (hh + 1) * d_head);
            let qh = tape.slice_cols(q, from, to);
            let kh = tape.slice_cols(k, from, to);
            let vh = tape.slice_cols(v, from, to);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(attn, vh));
        }
        let mut cat = head_outs[0];
        for &ho in &head_outs[1..] {
            cat = tape.concat_cols(cat, ho);
        }
        let mut attn_out = tape.matmul(cat, wo);
        attn_out = tape.add_row(attn_out, bo);
        if let Some(m) = modulation {
            // gate
            let alpha = tape.slice_cols(m, 2 * h, 3 * h);
            let arow = tape.row_repeat(alpha, len);
            attn_out = tape.mul(attn_out, arow);
        }
        x = tape.add(x, attn_out);

        let g2 = p(tape, &format!("{blk}.ln2.g"));
        let b2 = p(tape, &format!("{blk}.ln2.b"));
        let mut xn2 = tape.layer_norm_rows(x, g2, b2);
        if let Some(m) = modulation {
            xn2 = modulate(tape, xn2, m, 3);
        }
        let w1 = p(tape, &format!("{blk}.ffn.w1"));
        let fb1 = p(tape, &format!("{blk}.ffn.b1"));
        let w2 = p(tape, &format!("{blk}.ffn.w2"));
        let fb2 = p(tape, &format!("{blk}.ffn.b2"));
        let f = tape.matmul(xn2, w1);
        let f = tape.add_row(f, fb1);
        let f = tape.gelu(f);
        let f = tape.matmul(f, w2);
        let mut ffn_out = tape.add_row(f, fb2);
        if let Some(m) = modulation {
            let alpha = tape.slice_cols(m, 5 * h, 6 * h);
            let arow = tape.row_repeat(alpha, len);
            ffn_out = tape.mul(ffn_out, arow);
        }
        x = tape.add(x, ffn_out);
    }

    let og = p(tape, "dit.out.ln.g");
    let ob = p(tape, "dit.out.ln.b");
    let xn = tape.layer_norm_rows(x, og, ob);
    let ow = p(tape, "dit.out.w");
    let obias = p(tape, "dit.out.b");
    let out = tape.matmul(xn, ow);
    tape.add_row(out, obias)
}

/// Build the denoising loss for one window on a tape: mean over loss rows of
/// the squared L2 distance between predicted and true noise (conditioning
/// and padded rows contribute nothing).
pub fn loss_dm_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &LdmConfig,
    c_latent: usize,
    batch: &WindowBatch,
) -> NodeId {
    let tokens = tape.constant(batch.tokens.clone());
    let eps_hat = denoise_on_tape(
        tape,
        store,
        cfg,
        c_latent,
        tokens,
        &batch.roles,
        &batch.positions,
        batch.t,
    );
    let n_loss = batch.loss_rows.iter().filter(|&&b| b).count().max(1);
    let mask = Array2::from_shape_fn(batch.tokens.raw_dim(), |(i, _)| {
        if batch.loss_rows[i] {
            1.0
        } else {
            0.0
        }
    });
    tape.mse_masked(eps_hat, batch.eps.clone(), mask, n_loss as f64)
}

/// Draw one training window from a latent sequence: random offset (sequences
/// shorter than the window are repeat-padded and the padding masked from the
/// loss), half of the tokens noised at a shared random timestep. With
/// probability `suffix_prob` the noised half is the contiguous temporal
/// second half (the pattern anticipation uses); otherwise it is a uniformly
/// random subset.
pub fn sample_window(
    seq: &Array2<f64>,
    cfg: &LdmConfig,
    schedule: &DiffusionSchedule,
    suffix_prob: f64,
    rng: &mut ChaCha12Rng,
) -> Result<WindowBatch> {
    let len = seq.nrows();
    let c = seq.ncols();
    let s_eff = cfg.window.effective(len).max(2);
    let (rows, padded): (Vec<usize>, Vec<bool>) = if len >= s_eff {
        let offset = rng.random_range(0..=(len - s_eff));
        ((offset..offset + s_eff).collect(), vec![false; s_eff])
    } else {
        let mut rows: Vec<usize> = (0..len).collect();
        let mut padded = vec![false; len];
        while rows.len() < s_eff {
            rows.push(len - 1);
            padded.push(true);
        }
        (rows, padded)
    };

    let n_noised = (s_eff / 2).max(1);
    let take_suffix = rng.random_range(0.0..1.0) < suffix_prob;
    // choose the noised half; require at least one unpadded noised row
    let mut idx: Vec<usize> = (0..s_eff).collect();
    let noised_set: Vec<usize> = if take_suffix && !padded[s_eff - n_noised] {
        (s_eff - n_noised..s_eff).collect()
    } else {
        loop {
            idx.shuffle(rng);
            let chosen = &idx[..n_noised];
            if chosen.iter().any(|&i| !padded[i]) {
                break chosen.to_vec();
            }
        }
    };
    let mut roles = vec![Role::Conditioning; s_eff];
    for &i in &noised_set {
        roles[i] = Role::Noised;
    }

    let t = rng.random_range(1..=schedule.t_steps);
    let mut tokens = Array2::zeros((s_eff, c));
    for (w, &r) in rows.iter().enumerate() {
        tokens.row_mut(w).assign(&seq.row(r));
    }
    let mut eps = Array2::zeros((s_eff, c));
    let mut loss_rows = vec![false; s_eff];
    for i in 0..s_eff {
        if roles[i] == Role::Noised {
            let clean = tokens.row(i).to_owned().insert_axis(ndarray::Axis(0));
            let (noisy, e) = schedule.forward_noise(&clean, t, rng)?;
            tokens.row_mut(i).assign(&noisy.row(0));
            eps.row_mut(i).assign(&e.row(0));
            loss_rows[i] = !padded[i];
        }
    }
    Ok(WindowBatch { tokens, roles, positions: rows, t, eps, loss_rows })
}

/// Training-curve row for the diffusion stage.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterRow {
    pub iter: usize,
    pub loss: f64,
}

pub fn ldm_curve_to_csv(rows: &[IterRow]) -> String {
    let mut s = String::from("iter,loss\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.iter, r.loss));
    }
    s
}

/// Train the denoiser on frozen latent sequences.
pub fn train_ldm(
    sequences: &[Array2<f64>],
    cfg: &LdmConfig,
    train: &LdmTrainConfig,
    c_latent: usize,
    seed: u64,
    diagnostics_dir: Option<&Path>,
) -> Result<(LdmModel, Vec<IterRow>)> {
    let mut model = LdmModel::init(cfg.clone(), c_latent, seed);
    let curve = train_ldm_from(&mut model, sequences, train, seed, 0, diagnostics_dir)?;
    Ok((model, curve))
}

/// Continue training an existing denoiser; iteration numbering starts at
/// `first_iter` (checkpoint resume). The cosine schedule restarts.
pub fn train_ldm_from(
    model: &mut LdmModel,
    sequences: &[Array2<f64>],
    train: &LdmTrainConfig,
    seed: u64,
    first_iter: usize,
    diagnostics_dir: Option<&Path>,
) -> Result<Vec<IterRow>> {
    if sequences.is_empty() {
        return Err(Error::InvalidData("no latent sequences".into()));
    }
    for s in sequences {
        if s.ncols() != model.c_latent {
            return Err(Error::InvalidData("latent dim mismatch".into()));
        }
    }
    let cfg = model.cfg.clone();
    let cfg = &cfg;
    let c_latent = model.c_latent;
    let schedule = DiffusionSchedule::from_config(cfg);
    // diffusion operates in standardized latent space
    if first_iter == 0 {
        model.fit_latent_stats(sequences);
    }
    let sequences: Vec<Array2<f64>> = sequences.iter().map(|s| model.normalize(s)).collect();
    let sequences = &sequences;
    let mut opt = Adam::new(train.lr);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5851f42d4c957f2d);
    let mut curve = Vec::with_capacity(train.iters);

    for iter in 0..train.iters {
        let lr = crate::params::cosine_lr(train.lr, iter, train.iters, train.lr_floor_frac);
        let mut batches = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            let seq = &sequences[rng.random_range(0..sequences.len())];
            batches.push(sample_window(seq, cfg, &schedule, train.suffix_prob, &mut rng)?);
        }
        let results: Vec<(GradMap, f64)> = batches
            .par_iter()
            .map(|b| {
                let mut tape = Tape::new();
                let loss = loss_dm_on_tape(&mut tape, &model.params, cfg, c_latent, b);
                let v = tape.scalar(loss);
                tape.backward(loss);
                (tape.param_grads(), v)
            })
            .collect();
        let mut loss_sum = 0.0;
        let mut grad_maps = Vec::with_capacity(results.len());
        for (g, v) in results {
            loss_sum += v;
            grad_maps.push(g);
        }
        let mean_loss = loss_sum / train.batch_size as f64;
        if !mean_loss.is_finite() {
            if let Some(dir) = diagnostics_dir {
                let snapshot = serde_json::json!({
                    "iter": first_iter + iter,
                    "lr": lr,
                    "non_finite_param": model.params.any_non_finite(),
                });
                let _ = write_atomic(
                    &dir.join("diverged.json"),
                    serde_json::to_string_pretty(&snapshot).unwrap().as_bytes(),
                );
            }
            return Err(Error::Diverged(format!(
                "non-finite loss at iteration {}",
                first_iter + iter
            )));
        }
        let merged = merge_grads(grad_maps, true);
        opt.step(&mut model.params, &merged, lr);
        curve.push(IterRow { iter: first_iter + iter, loss: mean_loss });
    }
    Ok(curve)
}

/// Fallback clean-sample bound before stats are fitted, in standardized
/// latent units.
pub const X0_CLIP_DEFAULT: f64 = 5.0;

/// Reverse-diffuse the continuation of a conditioning prefix: `cond` rows
/// stay fixed at their given values, `n_pred` new rows start from standard
/// normal noise and are refined for `t = T .. 1`. Operates in standardized
/// latent space. Returns the predicted rows.
pub fn reverse_diffuse(
    cond: &Array2<f64>,
    n_pred: usize,
    model: &LdmModel,
    schedule: &DiffusionSchedule,
    rng: &mut ChaCha12Rng,
) -> Array2<f64> {
    let c = model.c_latent;
    let n_cond = cond.nrows();
    let len = n_cond + n_pred;
    let mut tokens = Array2::zeros((len, c));
    for i in 0..n_cond {
        tokens.row_mut(i).assign(&cond.row(i));
    }
    for i in n_cond..len {
        for j in 0..c {
            tokens[[i, j]] = StandardNormal.sample(rng);
        }
    }
    let roles: Vec<Role> = (0..len)
        .map(|i| if i < n_cond { Role::Conditioning } else { Role::Noised })
        .collect();
    let positions: Vec<usize> = (0..len).collect();
    let lo: Vec<f64> = model.params.get("norm.lo").row(0).to_vec();
    let hi: Vec<f64> = model.params.get("norm.hi").row(0).to_vec();
    for t in (1..=schedule.t_steps).rev() {
        let eps_hat = model.predict_eps(&tokens, &roles, &positions, t);
        for i in n_cond..len {
            let mut row: Vec<f64> = tokens.row(i).to_vec();
            schedule.ddpm_step(&mut row, &eps_hat.row(i).to_vec(), t, &lo, &hi, rng);
            for (j, &v) in row.iter().enumerate() {
                tokens[[i, j]] = v;
            }
        }
    }
    tokens.slice(ndarray::s![n_cond..len, ..]).to_owned()
}
