//! Train the residual-VQ motion codec on a synthetic corpus and report
//! held-out reconstruction quality and codebook usage.
//!
//! ```bash
//! cargo run --release -p textmotion --example train_codec -- [n_samples] [epochs] [lr] [commitment]
//! ```

use std::time::Instant;

use textmotion::rvq::{code_usage, reconstruction_report, train_rvq, RvqConfig};
use textmotion::syndata::{generate_corpus, CorpusSpec, MotionSequence};

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(50);
    let lr = args.next().and_then(|a| a.parse().ok());
    let commitment = args.next().and_then(|a| a.parse().ok());

    let dataset = generate_corpus(&CorpusSpec {
        n_samples,
        seed: 1,
        ..Default::default()
    })?;
    let config = RvqConfig {
        epochs,
        learning_rate: lr.unwrap_or(RvqConfig::default().learning_rate),
        commitment: commitment.unwrap_or(RvqConfig::default().commitment),
        ..Default::default()
    };
    let t0 = Instant::now();
    let ck = train_rvq(&dataset, &config)?;
    println!("trained {} epochs in {:.1?}", epochs, t0.elapsed());
    for p in ck.curve.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:3}  loss {:.4}  recon {:.4}  commit {:.4}  resets {}",
            p.epoch, p.loss, p.recon, p.commit, p.resets
        );
    }
    let report = reconstruction_report(&ck.codec, &dataset)?;
    println!("held-out L1 / channel std: {:.4}", report.relative_l1);
    let per: Vec<String> = report
        .channel_mae
        .iter()
        .zip(&report.channel_std)
        .map(|(e, s)| format!("{:.2}", e / s))
        .collect();
    println!("per channel: {}", per.join(" "));
    let train: Vec<&MotionSequence> = dataset.train().map(|s| &s.motion).collect();
    println!("layer-0 code usage: {:.2}", code_usage(&ck.codec, &train)?);
    Ok(())
}
