//! Trains each system on a seeded synthetic corpus and prints the system
//! comparison table.
//!
//! `cargo run --release -p rac-core --example table2 [seed]`

use rac_core::constraints::BpIterations;
use rac_core::corpus::{split_dev, Split};
use rac_core::encoder::EmbeddingTable;
use rac_core::evaluation::{evaluate, format_systems_table};
use rac_core::model::{LossMode, MentionDecoding};
use rac_core::synth::{generate, SynthConfig};
use rac_core::training::{predict_all, train, Hyperparams, TrainOptions};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let base = SynthConfig { seed, ..SynthConfig::default() };
    let train_set = generate(&SynthConfig { n_clusters: 40, id_prefix: "train".into(), ..base.clone() }).expect("valid config").clusters;
    let test_set = generate(&SynthConfig { n_clusters: 20, split: Split::Test, id_prefix: "test".into(), seed: seed + 1000, ..base })
        .expect("valid config")
        .clusters;
    let hp = Hyperparams { seed, ..Hyperparams::default() };
    let all: Vec<_> = train_set.iter().chain(&test_set).cloned().collect();
    let table = EmbeddingTable::<f64>::hashed_for_clusters(&all, hp.embed_dim, seed);
    let (train_set, dev) = split_dev(train_set);

    let systems = [
        ("RAC-sum", hp.clone()),
        ("RAC-max", Hyperparams { aggregation: "max".into(), ..hp.clone() }),
        ("RAC-topic", Hyperparams { aggregation: "topic".into(), ..hp.clone() }),
        ("RAC-date", Hyperparams { aggregation: "date".into(), ..hp.clone() }),
        ("EE-AS", Hyperparams { aggregation: "per-doc".into(), ..hp.clone() }),
        ("Mention-CNN", Hyperparams { loss_mode: LossMode::MentionLevel, ..hp.clone() }),
    ];
    let mut rows = Vec::new();
    for (name, h) in systems {
        let out = train(&train_set, &dev, &table, &h, &TrainOptions::default()).expect("training succeeds");
        let decodings = if h.loss_mode == LossMode::MentionLevel { MentionDecoding::ALL.to_vec() } else { vec![h.mention_decoding] };
        for dec in decodings {
            let mut cfg = out.config;
            cfg.mention_decoding = dec;
            for bp in [BpIterations::Fixed(0), BpIterations::Fixed(1)] {
                let preds = predict_all(&out.params, &cfg, &test_set, &table, bp).expect("prediction succeeds");
                let label = match h.loss_mode {
                    LossMode::MentionLevel => format!("{} {} bp{}", name, dec, bp),
                    LossMode::ValueLevel => format!("{} bp{}", name, bp),
                };
                rows.push((label, evaluate(&preds, &test_set).expect("predictions are candidates")));
            }
        }
    }
    println!("{}", format_systems_table(&rows));
}
