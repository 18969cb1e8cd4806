//! Train the contrastive evaluation extractor and check that held-out
//! motions sit closer to their own captions than to others.
//!
//! ```bash
//! cargo run --release -p textmotion --example train_extractor -- [n_samples] [epochs]
//! ```

use textmotion::evalsuite::{matched_pair_accuracy, train_eval_extractor, ExtractorConfig};
use textmotion::syndata::{generate_corpus, CorpusSpec};

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(30);
    let ds = generate_corpus(&CorpusSpec {
        n_samples,
        seed: 5,
        ..Default::default()
    })?;
    let (ex, curve) = train_eval_extractor(
        &ds,
        &ExtractorConfig {
            epochs,
            seed: 5,
            ..Default::default()
        },
    )?;
    for (e, l) in curve.iter().enumerate().step_by((epochs / 6).max(1)) {
        println!("epoch {e:3}  contrastive loss {l:.4}");
    }
    println!("matched-pair accuracy {:.3}", matched_pair_accuracy(&ex, &ds, 0)?);
    Ok(())
}
