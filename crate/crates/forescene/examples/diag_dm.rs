// Diagnose denoiser quality: per-timestep loss + point-mass sampling oracle.
use forescene::config::*;
use forescene::diffusion::*;
use forescene::tape::Tape;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn main() {
    let c = 8usize;
    let mut cfg = LdmConfig::desk();
    cfg.t_steps = 120;
    cfg.schedule = ScheduleKind::Cosine;
    cfg.window = WindowSize::Fixed(6);
    cfg.dit_hidden = 32;
    cfg.dit_blocks = 2;
    cfg.dit_heads = 2;

    // toy distribution: constant latent per "video", two clusters
    let mut seqs = Vec::new();
    for k in 0..40 {
        let base = if k % 2 == 0 { 1.0 } else { -1.0 };
        let seq = Array2::from_shape_fn((10, c), |(_, j)| base * (0.5 + 0.1 * j as f64));
        seqs.push(seq);
    }
    let train = LdmTrainConfig { iters: 3000, batch_size: 16, lr: 5e-4, ..Default::default() };
    let (model, curve) = train_ldm(&seqs, &cfg, &train, c, 0, None).unwrap();
    println!("toy loss {:.3} -> {:.3}", curve.first().unwrap().loss, curve.last().unwrap().loss);

    // per-t conditional loss on fresh windows
    let sched = DiffusionSchedule::from_config(&cfg);
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    for &t in &[1usize, 30, 60, 90, 120] {
        let mut total = 0.0;
        let n_trials = 40;
        for _ in 0..n_trials {
            let seq = model.normalize(&seqs[rng.random_range(0..seqs.len())]);
            let mut w = sample_window(&seq, &cfg, &sched, 0.0, &mut rng).unwrap();
            // re-noise at fixed t
            let mut tokens = w.tokens.clone();
            for i in 0..tokens.nrows() {
                if w.roles[i] == Role::Noised {
                    let clean = seq.row(w.positions[i]).to_owned().insert_axis(ndarray::Axis(0));
                    let (noisy, e) = sched.forward_noise(&clean, t, &mut rng).unwrap();
                    tokens.row_mut(i).assign(&noisy.row(0));
                    w.eps.row_mut(i).assign(&e.row(0));
                }
            }
            w.tokens = tokens;
            w.t = t;
            let mut tape = Tape::new();
            let l = loss_dm_on_tape(&mut tape, &model.params, &cfg, c, &w);
            total += tape.scalar(l);
        }
        println!("t={t:>4}: loss {:.3}", total / n_trials as f64);
    }

    // point-mass style sampling: condition on cluster A rows, sample 3 more
    let cond_raw = seqs[0].slice(ndarray::s![0..3, ..]).to_owned();
    let cond = model.normalize(&cond_raw);
    let mut devs = Vec::new();
    for s in 0..10u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(100 + s);
        let pred = reverse_diffuse(&cond, 3, &model, &sched, &mut rng);
        let pred_raw = model.denormalize(&pred);
        let dev: f64 = pred_raw
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(seqs[0].row(0).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / 3.0;
        devs.push(dev);
    }
    let mean_dev = devs.iter().sum::<f64>() / devs.len() as f64;
    println!("sampled deviation from cluster-A latent: mean {:.4} (want small)", mean_dev);
}
