//! Command-line entry point.
//!
//! ```text
//! forescene <subcommand> --config <file> [--seed N] [--jobs N] [--force]
//! ```
//!
//! Subcommands: `gen-synthetic`, `build-splits`, `train-gae`, `train-ldm`,
//! `anticipate`, `evaluate`, `plot`. Exit codes: 0 ok, 2 usage/config
//! error, 3 missing prerequisite, 4 runtime failure. `FORESCENE_DATA_DIR`
//! overrides the data root.

use crate::anticipate::{anticipate, AnticipationRequest, Rollout};
use crate::benchmark::{build_splits, split_stats, AnticipationSplit, Tier};
use crate::config::PipelineConfig;
use crate::diffusion::{train_ldm_from, LdmModel};
use crate::error::{Error, Result};
use crate::evaluate::{cases_from_parts, evaluate_cases, rows_from_csv, rows_to_csv};
use crate::gae::{curve_to_csv, train_gae_from, GaeModel};
use crate::graph::{GraphSequence, Vocabulary};
use crate::records::{
    ensure_output_dir, hash_file, read_corpus, read_jsonl, write_atomic, write_corpus,
    write_jsonl, RunManifest, FRAMES_FILE,
};
use crate::synth::generate_corpus;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const GAE_CKPT: &str = "gae.ckpt";
pub const LDM_CKPT: &str = "ldm.ckpt";
pub const CURVE_FILE: &str = "curve.csv";
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SPLITS_USED_FILE: &str = "splits_used.jsonl";
pub const SYNTH_MANIFEST_FILE: &str = "synth_manifest.jsonl";

#[derive(Parser)]
#[command(
    name = "forescene",
    about = "Scene-graph anticipation: synthesize data, train the graph auto-encoder and latent diffusion model, roll out futures, and evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value config file; desk-scale defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel phases.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic activity corpus.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
    },
    /// Build MID/HARD anticipation splits from the corpus.
    BuildSplits {
        #[command(flatten)]
        common: Common,
    },
    /// Train the graph auto-encoder.
    TrainGae {
        #[command(flatten)]
        common: Common,
        /// Continue from the existing checkpoint, extending the curve.
        #[arg(long)]
        resume: bool,
    },
    /// Train the latent diffusion model on the frozen auto-encoder.
    TrainLdm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Roll out futures for every video (fraction mode) or every split.
    Anticipate {
        #[command(flatten)]
        common: Common,
        /// Use the built splits instead of a fixed observed fraction.
        #[arg(long)]
        splits: bool,
        /// Observed fraction override (fraction mode).
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Score rollouts against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Emit SVG figures from results, splits, and training curves.
    Plot {
        #[command(flatten)]
        common: Common,
    },
}

/// Parse arguments, run, and translate errors into exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&mut Ctx) -> Result<()>) = match &cli.command {
        Command::GenSynthetic { common } => (common, |ctx| cmd_gen_synthetic(ctx)),
        Command::BuildSplits { common } => (common, |ctx| cmd_build_splits(ctx)),
        Command::TrainGae { common, resume } => {
            let r = *resume;
            return finish(load_ctx(common).and_then(|mut ctx| cmd_train_gae(&mut ctx, r)));
        }
        Command::TrainLdm { common, resume } => {
            let r = *resume;
            return finish(load_ctx(common).and_then(|mut ctx| cmd_train_ldm(&mut ctx, r)));
        }
        Command::Anticipate { common, splits, fraction } => {
            let (s, f) = (*splits, *fraction);
            return finish(load_ctx(common).and_then(|mut ctx| cmd_anticipate(&mut ctx, s, f)));
        }
        Command::Evaluate { common } => (common, |ctx| cmd_evaluate(ctx)),
        Command::Plot { common } => (common, |ctx| cmd_plot(ctx)),
    };
    finish(load_ctx(common).and_then(|mut ctx| run(&mut ctx)))
}

fn finish(result: Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                Error::MissingPrerequisite(_) => 3,
                _ => 4,
            }
        }
    }
}

struct Ctx {
    cfg: PipelineConfig,
    force: bool,
}

fn load_ctx(common: &Common) -> Result<Ctx> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::desk(),
    };
    if let Ok(dir) = std::env::var("FORESCENE_DATA_DIR") {
        if !dir.is_empty() {
            cfg.data_dir = PathBuf::from(dir);
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.resolved.insert("seed".into(), seed.to_string());
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if cfg.jobs > 0 {
        // Ignore the error when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global();
    }
    Ok(Ctx { cfg, force: common.force })
}

fn manifest_for(ctx: &Ctx, command: &str) -> RunManifest {
    RunManifest::new(command, ctx.cfg.resolved.clone(), ctx.cfg.seed)
}

/// Bind the model config to the corpus vocabulary so checkpoints carry the
/// right head sizes.
fn bind_vocab(cfg: &mut PipelineConfig, vocab: &Vocabulary) {
    cfg.gae.num_objects = vocab.num_objects();
    cfg.gae.num_predicates = vocab.num_predicates();
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

fn cmd_gen_synthetic(ctx: &mut Ctx) -> Result<()> {
    let out = ensure_output_dir(&ctx.cfg.corpus_dir(), ctx.force)?;
    let vocab = Vocabulary::desk_default();
    let mut manifest = manifest_for(ctx, "gen-synthetic");
    let (seqs, video_manifests, _) =
        generate_corpus(&ctx.cfg.synth, &vocab, ctx.cfg.gae.d_vis, ctx.cfg.seed)?;
    write_corpus(&out, &vocab, &seqs)?;
    write_jsonl(&out.join(SYNTH_MANIFEST_FILE), &video_manifests)?;
    for name in [FRAMES_FILE, crate::records::FEATURES_FILE, crate::records::VOCAB_FILE, SYNTH_MANIFEST_FILE] {
        manifest.record_output(&out.join(name))?;
    }
    manifest.finish_and_write(&out)?;
    println!(
        "wrote {} videos ({} frames) to {}",
        seqs.len(),
        seqs.iter().map(|s| s.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-splits
// ---------------------------------------------------------------------------

fn cmd_build_splits(ctx: &mut Ctx) -> Result<()> {
    let (_, seqs) = read_corpus(&ctx.cfg.corpus_dir())?;
    let out = ensure_output_dir(&ctx.cfg.splits_dir(), ctx.force)?;
    let mut manifest = manifest_for(ctx, "build-splits");
    manifest.record_input(&ctx.cfg.corpus_dir().join(FRAMES_FILE))?;
    let splits = build_splits(&seqs);
    let stats = split_stats(&splits, &seqs);
    write_jsonl(&out.join(SPLITS_FILE), &splits)?;
    write_atomic(
        &out.join(STATS_FILE),
        serde_json::to_string_pretty(&stats).unwrap().as_bytes(),
    )?;
    manifest.record_output(&out.join(SPLITS_FILE))?;
    manifest.record_output(&out.join(STATS_FILE))?;
    manifest.finish_and_write(&out)?;
    println!("built {} splits ({} mid, {} hard)", splits.len(), stats.n_mid, stats.n_hard);
    Ok(())
}

// ---------------------------------------------------------------------------
// train-gae / train-ldm
// ---------------------------------------------------------------------------

fn existing_curve_len(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .map(|s| s.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
        .unwrap_or(0)
}

fn cmd_train_gae(ctx: &mut Ctx, resume: bool) -> Result<()> {
    let (vocab, seqs) = read_corpus(&ctx.cfg.corpus_dir())?;
    bind_vocab(&mut ctx.cfg, &vocab);
    let graphs: Vec<_> = seqs.iter().flat_map(|s| s.graphs.iter().cloned()).collect();
    let out = ctx.cfg.gae_dir();
    let ckpt = out.join(GAE_CKPT);
    let curve_path = out.join(CURVE_FILE);

    let mut manifest = manifest_for(ctx, "train-gae");
    manifest.record_input(&ctx.cfg.corpus_dir().join(FRAMES_FILE))?;

    let (mut model, first_epoch, mut csv) = if resume && ckpt.exists() {
        let model = GaeModel::load(&ckpt, ctx.cfg.gae.clone())?;
        let done = existing_curve_len(&curve_path);
        let csv = std::fs::read_to_string(&curve_path).unwrap_or_else(|_| {
            "epoch,l_enco,l_obj,l_rel,l_con,l_reg,total\n".to_string()
        });
        (model, done, csv)
    } else {
        ensure_output_dir(&out, ctx.force)?;
        (
            GaeModel::init(ctx.cfg.gae.clone(), ctx.cfg.seed),
            0,
            "epoch,l_enco,l_obj,l_rel,l_con,l_reg,total\n".to_string(),
        )
    };
    let curve = train_gae_from(
        &mut model,
        &graphs,
        &ctx.cfg.gae_train,
        ctx.cfg.seed.wrapping_add(first_epoch as u64),
        first_epoch,
        Some(&out),
    )?;
    model.save(&ckpt)?;
    for row in &curve {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.epoch, row.l_enco, row.l_obj, row.l_rel, row.l_con, row.l_reg, row.total
        ));
    }
    write_atomic(&curve_path, csv.as_bytes())?;
    manifest.record_output(&ckpt)?;
    manifest.record_output(&curve_path)?;
    manifest
        .checkpoint_fingerprints
        .insert(GAE_CKPT.into(), hash_file(&ckpt)?);
    manifest.finish_and_write(&out)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!(
            "trained GAE on {} graphs, epochs {}..={}, loss {:.4} -> {:.4}",
            graphs.len(),
            first.epoch,
            last.epoch,
            first.total,
            last.total
        );
    }
    let _ = curve_to_csv(&curve); // format shared with tests
    Ok(())
}

fn cmd_train_ldm(ctx: &mut Ctx, resume: bool) -> Result<()> {
    let (vocab, seqs) = read_corpus(&ctx.cfg.corpus_dir())?;
    bind_vocab(&mut ctx.cfg, &vocab);
    let gae = GaeModel::load(&ctx.cfg.gae_dir().join(GAE_CKPT), ctx.cfg.gae.clone())?;
    let out = ctx.cfg.ldm_dir();
    let ckpt = out.join(LDM_CKPT);
    let curve_path = out.join(CURVE_FILE);

    let mut manifest = manifest_for(ctx, "train-ldm");
    manifest.record_input(&ctx.cfg.corpus_dir().join(FRAMES_FILE))?;
    manifest
        .checkpoint_fingerprints
        .insert(GAE_CKPT.into(), hash_file(&ctx.cfg.gae_dir().join(GAE_CKPT))?);

    // frozen encoder: latent sequences
    let latents: Vec<ndarray::Array2<f64>> =
        seqs.par_iter().map(|s| gae.encode_sequence(&s.graphs)).collect();

    let (mut model, first_iter, mut csv) = if resume && ckpt.exists() {
        let model = LdmModel::load(&ckpt, ctx.cfg.ldm.clone(), ctx.cfg.gae.c_latent)?;
        let done = existing_curve_len(&curve_path);
        let csv = std::fs::read_to_string(&curve_path)
            .unwrap_or_else(|_| "iter,loss\n".to_string());
        (model, done, csv)
    } else {
        ensure_output_dir(&out, ctx.force)?;
        (
            LdmModel::init(ctx.cfg.ldm.clone(), ctx.cfg.gae.c_latent, ctx.cfg.seed),
            0,
            "iter,loss\n".to_string(),
        )
    };
    let curve = train_ldm_from(
        &mut model,
        &latents,
        &ctx.cfg.ldm_train,
        ctx.cfg.seed.wrapping_add(first_iter as u64),
        first_iter,
        Some(&out),
    )?;
    model.save(&ckpt)?;
    for row in &curve {
        csv.push_str(&format!("{},{}\n", row.iter, row.loss));
    }
    write_atomic(&curve_path, csv.as_bytes())?;
    manifest.record_output(&ckpt)?;
    manifest.record_output(&curve_path)?;
    manifest.finish_and_write(&out)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!(
            "trained LDM on {} latent sequences, iters {}..={}, loss {:.4} -> {:.4}",
            latents.len(),
            first.iter,
            last.iter,
            first.loss,
            last.loss
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// anticipate
// ---------------------------------------------------------------------------

/// Split definition carried into rollout and evaluation artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitUsed {
    pub video_id: String,
    pub f_s: usize,
    pub tier: Option<Tier>,
}

pub fn rollout_file_name(video_id: &str, f_s: usize) -> String {
    format!("{video_id}_fs{f_s}.jsonl")
}

fn cmd_anticipate(ctx: &mut Ctx, splits_mode: bool, fraction: Option<f64>) -> Result<()> {
    let (vocab, seqs) = read_corpus(&ctx.cfg.corpus_dir())?;
    bind_vocab(&mut ctx.cfg, &vocab);
    let gae = GaeModel::load(&ctx.cfg.gae_dir().join(GAE_CKPT), ctx.cfg.gae.clone())?;
    let ldm = LdmModel::load(&ctx.cfg.ldm_dir().join(LDM_CKPT), ctx.cfg.ldm.clone(), ctx.cfg.gae.c_latent)?;

    let splits: Vec<SplitUsed> = if splits_mode {
        let loaded: Vec<AnticipationSplit> =
            read_jsonl(&ctx.cfg.splits_dir().join(SPLITS_FILE))?;
        loaded
            .into_iter()
            .map(|s| SplitUsed { video_id: s.video_id, f_s: s.f_s, tier: Some(s.tier) })
            .collect()
    } else {
        let f = fraction.unwrap_or(ctx.cfg.eval.fraction);
        if !(0.0 < f && f < 1.0) {
            return Err(Error::Config(format!("F must lie strictly inside (0, 1), got {f}")));
        }
        seqs.iter()
            .filter_map(|s| {
                let f_last = s.len() - 1;
                let f_s = (f * f_last as f64).floor() as usize;
                (f_s < f_last).then(|| SplitUsed {
                    video_id: s.video_id.clone(),
                    f_s,
                    tier: None,
                })
            })
            .collect()
    };
    if splits.is_empty() {
        return Err(Error::InvalidData("no anticipation splits to run".into()));
    }

    let out = ensure_output_dir(&ctx.cfg.rollouts_dir(), ctx.force)?;
    let mut manifest = manifest_for(ctx, "anticipate");
    manifest.record_input(&ctx.cfg.corpus_dir().join(FRAMES_FILE))?;
    manifest
        .checkpoint_fingerprints
        .insert(GAE_CKPT.into(), hash_file(&ctx.cfg.gae_dir().join(GAE_CKPT))?);
    manifest
        .checkpoint_fingerprints
        .insert(LDM_CKPT.into(), hash_file(&ctx.cfg.ldm_dir().join(LDM_CKPT))?);

    let by_id: BTreeMap<&str, &GraphSequence> =
        seqs.iter().map(|s| (s.video_id.as_str(), s)).collect();
    let base_seed = ctx.cfg.seed;
    let r = ctx.cfg.eval.rollouts;
    let results: Vec<Result<(String, Vec<Rollout>)>> = splits
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seq = by_id
                .get(s.video_id.as_str())
                .ok_or_else(|| Error::InvalidData(format!("{} not in corpus", s.video_id)))?;
            let req = AnticipationRequest {
                observed: &seq.graphs[..=s.f_s],
                f_last: seq.len() - 1,
                rollouts: r,
                seed: base_seed.wrapping_add(1000 * i as u64),
            };
            let rollouts = anticipate(&req, &gae, &ldm, &vocab)?;
            Ok((rollout_file_name(&s.video_id, s.f_s), rollouts))
        })
        .collect();
    for res in results {
        let (name, rollouts) = res?;
        write_jsonl(&out.join(&name), &rollouts)?;
        manifest.record_output(&out.join(&name))?;
    }
    write_jsonl(&out.join(SPLITS_USED_FILE), &splits)?;
    manifest.record_output(&out.join(SPLITS_USED_FILE))?;
    manifest.finish_and_write(&out)?;
    println!("wrote {} rollout files (r = {}) to {}", splits.len(), r, out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn cmd_evaluate(ctx: &mut Ctx) -> Result<()> {
    let (vocab, seqs) = read_corpus(&ctx.cfg.corpus_dir())?;
    let rollout_dir = ctx.cfg.rollouts_dir();
    let splits: Vec<SplitUsed> = read_jsonl(&rollout_dir.join(SPLITS_USED_FILE))?;
    let mut rollouts: BTreeMap<(String, usize), Vec<Rollout>> = BTreeMap::new();
    for s in &splits {
        let path = rollout_dir.join(rollout_file_name(&s.video_id, s.f_s));
        if path.exists() {
            rollouts.insert((s.video_id.clone(), s.f_s), read_jsonl(&path)?);
        }
    }
    let split_tuples: Vec<(String, usize, Option<Tier>)> =
        splits.iter().map(|s| (s.video_id.clone(), s.f_s, s.tier)).collect();
    let (cases, skipped) = cases_from_parts(&seqs, &split_tuples, &rollouts);
    for s in &skipped {
        eprintln!("skipped: {s}");
    }
    if cases.is_empty() {
        return Err(Error::InvalidData("all splits were skipped".into()));
    }
    let rows = evaluate_cases(&cases, &ctx.cfg.eval, &vocab, ctx.cfg.gae.strict_constraint)?;
    let out = ensure_output_dir(&ctx.cfg.results_dir(), ctx.force)?;
    let mut manifest = manifest_for(ctx, "evaluate");
    let results_path = out.join(RESULTS_FILE);
    write_atomic(&results_path, rows_to_csv(&rows).as_bytes())?;
    manifest.record_output(&results_path)?;
    if !skipped.is_empty() {
        let skipped_path = out.join("skipped.txt");
        write_atomic(&skipped_path, skipped.join("\n").as_bytes())?;
        manifest.record_output(&skipped_path)?;
    }
    manifest.finish_and_write(&out)?;

    // aggregate table to stdout
    println!("{:<18} {:>4} {:>16} {:>10} {:>10}", "metric", "K", "regime", "r1", "best");
    let mut printed = std::collections::BTreeSet::new();
    for row in rows.iter().filter(|r| r.scope == "aggregate" && r.video_id == "all") {
        let key = (row.metric.clone(), row.k, row.regime.map(|r| r.to_string()));
        if !printed.insert(key.clone()) {
            continue;
        }
        let lookup = |mode: &str| {
            crate::evaluate::aggregate_value(&rows, "all", mode, &row.metric, row.k, row.regime)
                .unwrap_or(f64::NAN)
        };
        println!(
            "{:<18} {:>4} {:>16} {:>10.4} {:>10.4}",
            row.metric,
            row.k.map(|k| k.to_string()).unwrap_or_default(),
            row.regime.map(|r| r.to_string()).unwrap_or_default(),
            lookup("r1"),
            lookup("best"),
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

fn cmd_plot(ctx: &mut Ctx) -> Result<()> {
    let out = ensure_output_dir(&ctx.cfg.plots_dir(), ctx.force)?;
    let mut manifest = manifest_for(ctx, "plot");
    let mut wrote_any = false;

    // difficulty CDF and observed-fraction histograms from the splits stats
    let stats_path = ctx.cfg.splits_dir().join(STATS_FILE);
    if stats_path.exists() {
        let stats: crate::benchmark::SplitStats =
            serde_json::from_slice(&std::fs::read(&stats_path)?)
                .map_err(|e| Error::Format(format!("stats.json: {e}")))?;
        let cdf = crate::plot::line_plot(
            "Split difficulty CDF",
            "difficulty (Jaccard distance)",
            "cumulative fraction",
            &stats.difficulty_cdf,
        );
        let p = out.join("difficulty_cdf.svg");
        write_atomic(&p, cdf.as_bytes())?;
        manifest.record_output(&p)?;
        for (name, hist) in [
            ("observed_fraction_mid.svg", &stats.observed_fraction_hist_mid),
            ("observed_fraction_hard.svg", &stats.observed_fraction_hist_hard),
        ] {
            let bars: Vec<(String, f64)> = hist
                .iter()
                .enumerate()
                .map(|(i, &c)| (format!("{:.1}-{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0), c as f64))
                .collect();
            let svg = crate::plot::bar_chart(
                "Observed fraction of anticipation splits",
                "observed fraction",
                "splits",
                &bars,
            );
            let p = out.join(name);
            write_atomic(&p, svg.as_bytes())?;
            manifest.record_output(&p)?;
        }
        wrote_any = true;
    }

    // aggregate metric summaries
    let results_path = ctx.cfg.results_dir().join(RESULTS_FILE);
    if results_path.exists() {
        let rows = rows_from_csv(&std::fs::read_to_string(&results_path)?)?;
        for mode in ["r1", "best"] {
            let bars: Vec<(String, f64)> = rows
                .iter()
                .filter(|r| r.scope == "aggregate" && r.video_id == "all" && r.mode == mode)
                .map(|r| {
                    let label = match (r.k, r.regime) {
                        (Some(k), Some(reg)) => format!("{}@{k} {}", r.metric, reg),
                        (Some(k), None) => format!("{}@{k}", r.metric),
                        _ => r.metric.clone(),
                    };
                    (label, r.value)
                })
                .collect();
            let svg = crate::plot::bar_chart(
                &format!("Aggregate metrics ({mode})"),
                "metric",
                "value",
                &bars,
            );
            let p = out.join(format!("metrics_{mode}.svg"));
            write_atomic(&p, svg.as_bytes())?;
            manifest.record_output(&p)?;
        }
        wrote_any = true;
    }

    // training curves
    for (dir, name, title) in [
        (ctx.cfg.gae_dir(), "gae_loss.svg", "Auto-encoder training loss"),
        (ctx.cfg.ldm_dir(), "ldm_loss.svg", "Diffusion training loss"),
    ] {
        let curve = dir.join(CURVE_FILE);
        if curve.exists() {
            let text = std::fs::read_to_string(&curve)?;
            let points: Vec<(f64, f64)> = text
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let parts: Vec<&str> = l.split(',').collect();
                    let x = parts.first()?.parse::<f64>().ok()?;
                    let y = parts.last()?.parse::<f64>().ok()?;
                    Some((x, y))
                })
                .collect();
            let svg = crate::plot::line_plot(title, "step", "loss", &points);
            let p = out.join(name);
            write_atomic(&p, svg.as_bytes())?;
            manifest.record_output(&p)?;
            wrote_any = true;
        }
    }

    if !wrote_any {
        return Err(Error::MissingPrerequisite(
            "nothing to plot: no stats, results, or curves found".into(),
        ));
    }
    manifest.finish_and_write(&out)?;
    println!("wrote figures to {}", out.display());
    Ok(())
}
