use forescene::config::*;
use forescene::gae::*;
use forescene::graph::Vocabulary;
use forescene::synth::*;

fn main() {
    let vocab = Vocabulary::desk_default();
    let mut cfg = GaeConfig::desk();
    cfg.num_objects = vocab.num_objects();
    cfg.num_predicates = vocab.num_predicates();
    let synth = SynthConfig { videos: 40, ..Default::default() };
    let (seqs, _, _) = generate_corpus(&synth, &vocab, cfg.d_vis, 0).unwrap();
    let graphs: Vec<_> = seqs.iter().flat_map(|s| s.graphs.iter().cloned()).collect();
    let tr = GaeTrainConfig { epochs: 25, lr: 2e-3, ..Default::default() };
    let (gae, _) = train_gae(&graphs, &cfg, &tr, 0, None).unwrap();
    let lat: Vec<Vec<f64>> = graphs.iter().map(|g| gae.encode(g)).collect();
    let n = lat.len() as f64;
    let c = cfg.c_latent;
    let mut mean = vec![0.0; c];
    for z in &lat { for (j, &v) in z.iter().enumerate() { mean[j] += v / n; } }
    let mut var = vec![0.0; c];
    for z in &lat { for (j, &v) in z.iter().enumerate() { var[j] += (v - mean[j]).powi(2) / n; } }
    let stds: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let norm_mean = lat.iter().map(|z| z.iter().map(|x| x*x).sum::<f64>().sqrt()).sum::<f64>() / n;
    println!("latent dim {c}: mean|mean|={:.3} std range [{:.4}, {:.4}] median~{:.4} mean||z||={:.3}",
        mean.iter().map(|m| m.abs()).sum::<f64>() / c as f64,
        stds.iter().cloned().fold(f64::INFINITY, f64::min),
        stds.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        { let mut s = stds.clone(); s.sort_by(|a,b| a.partial_cmp(b).unwrap()); s[c/2] },
        norm_mean);
}
