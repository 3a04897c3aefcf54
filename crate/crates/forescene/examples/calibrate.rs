// Calibration driver for the overfit acceptance thresholds (not shipped in tests).
use forescene::config::*;
use forescene::gae::*;
use forescene::graph::Vocabulary;
use forescene::synth::*;
use std::time::Instant;

fn main() {
    let vocab = Vocabulary::desk_default();
    let mut cfg = GaeConfig::desk();
    cfg.num_objects = vocab.num_objects();
    cfg.num_predicates = vocab.num_predicates();
    let synth = SynthConfig { videos: 5, frames_min: 12, frames_max: 12, mix_mid: 0.4, mix_hard: 0.4, ..Default::default() };
    let (seqs, _, _) = generate_corpus(&synth, &vocab, cfg.d_vis, 123).unwrap();
    let graphs: Vec<_> = seqs.iter().flat_map(|s| s.graphs.iter().cloned()).take(20).collect();
    println!("graphs: {} (node counts: {:?})", graphs.len(), graphs.iter().map(|g| g.nodes.len()).collect::<Vec<_>>());

    for (lr, epochs) in [(2e-3, 300usize), (3e-3, 300), (5e-3, 300)] {
        let train = GaeTrainConfig { epochs, lr, batch_size: 32, ..Default::default() };
        let t0 = Instant::now();
        let (model, curve) = train_gae(&graphs, &cfg, &train, 0, None).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let j = reconstruction_jaccard(&model, &graphs, &vocab);
        let acc = aux_node_accuracy(&model, &graphs);
        println!("lr={lr} epochs={epochs}: {dt:.1}s  loss {:.3}->{:.3}  J_sim={j:.3}  node_acc={acc:.3}",
            curve.first().unwrap().total, curve.last().unwrap().total);
    }
}
