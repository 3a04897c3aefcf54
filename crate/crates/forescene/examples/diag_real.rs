// Probe conditional sample quality on real latents in normalized space.
use forescene::config::*;
use forescene::diffusion::*;
use forescene::gae::*;
use forescene::graph::Vocabulary;
use forescene::synth::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let vocab = Vocabulary::desk_default();
    let mut cfg = GaeConfig::desk();
    cfg.num_objects = vocab.num_objects();
    cfg.num_predicates = vocab.num_predicates();
    let gae = GaeModel::load(std::path::Path::new("/tmp/fs-cal-gae-0-25.ckpt"), cfg.clone()).unwrap();

    let synth = SynthConfig { videos: 200, ..Default::default() };
    let (train_seqs, _, feats) = generate_corpus(&synth, &vocab, cfg.d_vis, 0).unwrap();
    let latents: Vec<ndarray::Array2<f64>> =
        train_seqs.iter().map(|s| gae.encode_sequence(&s.graphs)).collect();

    let mut ldm_cfg = LdmConfig::desk();
    ldm_cfg.adaln = true;
    if let Ok(h) = std::env::var("CAL_HIDDEN") { ldm_cfg.dit_hidden = h.parse().unwrap(); }
    if let Ok(b) = std::env::var("CAL_BLOCKS") { ldm_cfg.dit_blocks = b.parse().unwrap(); }
    if let Ok(hd) = std::env::var("CAL_HEADS") { ldm_cfg.dit_heads = hd.parse().unwrap(); }
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6000);
    let suffix: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let lr: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(5e-4);
    let tcfg = LdmTrainConfig { iters, lr, suffix_prob: suffix, ..Default::default() };
    let (ldm, curve) = train_ldm(&latents, &ldm_cfg, &tcfg, cfg.c_latent, 0, None).unwrap();
    println!("loss {:.2} -> {:.2}", curve.first().unwrap().loss, curve.last().unwrap().loss);
    let sched = DiffusionSchedule::from_config(&ldm_cfg);

    // held-out zero-shift videos
    let test = SynthConfig { videos: 20, mix_mid: 0.0, mix_hard: 0.0, ..synth.clone() };
    let (test_seqs, _) = generate_corpus_with(&test, &vocab, &feats, 999).unwrap();
    let c = cfg.c_latent as f64;
    let mut dev_samp = 0.0;
    let mut dev_copy = 0.0;
    let mut n = 0.0;
    for (i, seq) in test_seqs.iter().enumerate() {
        let z = gae.encode_sequence(&seq.graphs);
        let zn = ldm.normalize(&z);
        let f_s = 5usize;
        let cond = zn.slice(ndarray::s![f_s - 3..=f_s, ..]).to_owned();
        let mut rng = ChaCha12Rng::seed_from_u64(i as u64);
        let pred = reverse_diffuse(&cond, 4, &ldm, &sched, &mut rng);
        for k in 0..4 {
            let truth = zn.row(f_s + 1 + k);
            let d1: f64 = pred.row(k).iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let d2: f64 = zn.row(f_s).iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            dev_samp += (d1 / c).sqrt();
            dev_copy += (d2 / c).sqrt();
            n += 1.0;
        }
    }
    println!("zero-shift normalized RMS deviation: sampled {:.3} vs copy-baseline {:.3}", dev_samp / n, dev_copy / n);
}
