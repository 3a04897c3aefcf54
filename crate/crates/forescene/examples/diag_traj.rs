// Trace reverse-diffusion trajectory statistics on real latents.
use forescene::config::*;
use forescene::diffusion::*;
use forescene::gae::*;
use forescene::graph::Vocabulary;
use forescene::synth::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let vocab = Vocabulary::desk_default();
    let mut cfg = GaeConfig::desk();
    cfg.num_objects = vocab.num_objects();
    cfg.num_predicates = vocab.num_predicates();
    let gae = GaeModel::load(std::path::Path::new("/tmp/fs-cal-gae-0-25.ckpt"), cfg.clone()).unwrap();
    let synth = SynthConfig { videos: 200, ..Default::default() };
    let (train_seqs, _, _) = generate_corpus(&synth, &vocab, cfg.d_vis, 0).unwrap();
    let latents: Vec<Array2<f64>> = train_seqs.iter().map(|s| gae.encode_sequence(&s.graphs)).collect();
    let mut ldm_cfg = LdmConfig::desk();
    ldm_cfg.adaln = true;
    let tcfg = LdmTrainConfig { iters: 6000, lr: 5e-4, suffix_prob: 0.5, ..Default::default() };
    let (ldm, _) = train_ldm(&latents, &ldm_cfg, &tcfg, cfg.c_latent, 0, None).unwrap();
    let sched = DiffusionSchedule::from_config(&ldm_cfg);
    let c = cfg.c_latent;

    // forward-noised training-style check: per-t eps error on REAL latents
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    for &t in &[120usize, 100, 80, 60, 40, 20, 5, 1] {
        let mut err = 0.0;
        let mut n = 0.0;
        for _ in 0..30 {
            let seq = ldm.normalize(&latents[rng.random_range(0..latents.len()) as usize]);
            let w = sample_window(&seq, &ldm_cfg, &sched, 1.0, &mut rng).unwrap();
            // re-noise at fixed t
            let mut tokens = w.tokens.clone();
            let mut eps = w.eps.clone();
            for i in 0..tokens.nrows() {
                if w.roles[i] == Role::Noised {
                    let clean = seq.row(w.positions[i]).to_owned().insert_axis(ndarray::Axis(0));
                    let (noisy, e) = sched.forward_noise(&clean, t, &mut rng).unwrap();
                    tokens.row_mut(i).assign(&noisy.row(0));
                    eps.row_mut(i).assign(&e.row(0));
                }
            }
            let pred = ldm.predict_eps(&tokens, &w.roles, &w.positions, t);
            for i in 0..tokens.nrows() {
                if w.roles[i] == Role::Noised {
                    let d: f64 = pred.row(i).iter().zip(eps.row(i).iter()).map(|(a, b)| (a - b).powi(2)).sum();
                    err += d / c as f64;
                    n += 1.0;
                }
            }
        }
        println!("t={t:>4}: per-entry eps MSE {:.4}", err / n);
    }

    // sampling trajectory norms
    let seq = ldm.normalize(&latents[0]);
    let cond = seq.slice(ndarray::s![0..4, ..]).to_owned();
    let n_pred = 4;
    let len = 8;
    let mut tokens = Array2::zeros((len, c));
    for i in 0..4 { tokens.row_mut(i).assign(&cond.row(i)); }
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    for i in 4..len { for j in 0..c { tokens[[i, j]] = StandardNormal.sample(&mut rng); } }
    let roles: Vec<Role> = (0..len).map(|i| if i < 4 { Role::Conditioning } else { Role::Noised }).collect();
    let positions: Vec<usize> = (0..len).collect();
    for t in (1..=sched.t_steps).rev() {
        let eps_hat = ldm.predict_eps(&tokens, &roles, &positions, t);
        for i in 4..len {
            let mut row: Vec<f64> = tokens.row(i).to_vec();
            sched.ddpm_step(&mut row, &eps_hat.row(i).to_vec(), t, &ldm.params.get("norm.lo").row(0).to_vec(), &ldm.params.get("norm.hi").row(0).to_vec(), &mut rng);
            for (j, &v) in row.iter().enumerate() { tokens[[i, j]] = v; }
        }
        if t % 20 == 0 || t <= 3 {
            let rms = |i: usize| (tokens.row(i).iter().map(|x| x * x).sum::<f64>() / c as f64).sqrt();
            let x0rms = {
                let ab = sched.alpha_bar(t - 1);
                let mut acc = 0.0;
                for i in 4..len {
                    let xh: f64 = tokens.row(i).iter().map(|x| x * x).sum::<f64>() / c as f64;
                    acc += ((xh - (1.0 - ab)).max(0.0) / ab.max(1e-9)).sqrt();
                }
                acc / 4.0
            };
            println!("t={t:>4}: pred-row RMS {:.3} {:.3} {:.3} {:.3} | implied x0 scale ~{x0rms:.3}", rms(4), rms(5), rms(6), rms(7));
        }
    }
    let truth = seq.row(4);
    let dev: f64 = (tokens.row(4).iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / c as f64).sqrt();
    println!("final dev row4 vs truth: {dev:.3}");
}
