// How far can a latent drift before decoding breaks?
use forescene::config::*;
use forescene::gae::*;
use forescene::graph::Vocabulary;
use forescene::metrics::jaccard;
use forescene::synth::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let vocab = Vocabulary::desk_default();
    let mut cfg = GaeConfig::desk();
    cfg.num_objects = vocab.num_objects();
    cfg.num_predicates = vocab.num_predicates();
    let gae = GaeModel::load(std::path::Path::new("/tmp/fs-cal-gae-0-25.ckpt"), cfg.clone()).unwrap();
    let synth = SynthConfig { videos: 30, ..Default::default() };
    let (seqs, _, _) = generate_corpus(&synth, &vocab, cfg.d_vis, 0).unwrap();
    let graphs: Vec<_> = seqs.iter().flat_map(|s| s.graphs.iter().cloned()).take(60).collect();

    // latent std for scale reference
    let lat: Vec<Vec<f64>> = graphs.iter().map(|g| gae.encode(g)).collect();
    let c = cfg.c_latent;
    let mut var = vec![0.0; c];
    let mut mean = vec![0.0; c];
    for z in &lat { for (j, &v) in z.iter().enumerate() { mean[j] += v / lat.len() as f64; } }
    for z in &lat { for (j, &v) in z.iter().enumerate() { var[j] += (v - mean[j]).powi(2) / lat.len() as f64; } }
    let avg_std = (var.iter().sum::<f64>() / c as f64).sqrt();
    println!("avg latent std: {avg_std:.3}");

    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for &rel_sigma in &[0.0f64, 0.1, 0.25, 0.5, 1.0] {
        let mut js = 0.0;
        for (g, z) in graphs.iter().zip(&lat) {
            let zn: Vec<f64> = z
                .iter()
                .enumerate()
                .map(|(j, &v)| v + rel_sigma * var[j].sqrt() * {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e
                })
                .collect();
            let d = gae.decode(&zn);
            let rec = forescene::decoder::to_scene_graph(&d, &vocab, (&cfg).into(), 0);
            js += jaccard(&rec.object_set(), &g.object_set());
        }
        println!("noise {rel_sigma:.2} x coord-std: J_sim {:.3}", js / graphs.len() as f64);
    }
}
