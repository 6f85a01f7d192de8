//! Minimal library walkthrough: generate the synthetic dataset in memory,
//! train the full variant, and print test metrics.
//!
//! Run with `cargo run --release --example train_synthetic`.

use phoenix_core::config::{SynthConfig, TrainConfig};
use phoenix_core::data::{generate_synthetic, Split, SynthUtterance, Utterance};
use phoenix_core::metrics::{accuracy_f1, eer};
use phoenix_core::trainer::{evaluate, train};

fn split(utts: &[SynthUtterance], s: Split) -> Vec<Utterance> {
    utts.iter()
        .filter(|u| u.split == s)
        .map(|u| Utterance {
            id: u.id.clone(),
            label: u.label,
            group: u.group.clone(),
            t: u.seq.t,
            d: u.seq.d,
            feats: u.seq.to_f64(),
        })
        .collect()
}

fn main() -> phoenix_core::Result<()> {
    // A reduced dataset and model keep this example quick; drop the
    // overrides to reproduce the full default configuration.
    let synth = SynthConfig { train_count: 64, dev_count: 32, test_count: 32, ..SynthConfig::default() };
    let cfg = TrainConfig { model_dim: 64, ball_dim: 32, epochs: 5, ..TrainConfig::default() };

    let data = generate_synthetic(&synth)?;
    let trained = train(&cfg, &split(&data, Split::Train), &split(&data, Split::Dev), |rec| {
        eprintln!("epoch {}: total loss {:.4}", rec.epoch, rec.total);
    })?;

    let records = evaluate(&trained.model, &split(&data, Split::Test))?;
    let (acc, f1) = accuracy_f1(&records, trained.threshold)?;
    println!("test accuracy {acc:.3}, macro-F1 {f1:.3}, EER {:.3}", eer(&records)?);
    Ok(())
}
