//! Train a codec and the code predictor on a small corpus, then compare the
//! held-out masked NLL with the uniform reference and sample a length.
//!
//! ```bash
//! cargo run --release -p textmotion --example train_predictor -- [n_samples] [epochs]
//! ```

use std::time::Instant;

use textmotion::predictor::{heldout_nll, train_predictor, PredictorConfig};
use textmotion::rvq::{train_rvq, RvqConfig};
use textmotion::syndata::{generate_corpus, CaptionTokens, CorpusSpec};

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(800);
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);

    let ds = generate_corpus(&CorpusSpec {
        n_samples,
        seed: 3,
        ..Default::default()
    })?;
    let codec = train_rvq(
        &ds,
        &RvqConfig {
            epochs: 40,
            seed: 3,
            ..Default::default()
        },
    )?
    .codec;
    let cfg = PredictorConfig {
        epochs,
        seed: 3,
        ..Default::default()
    };
    let t0 = Instant::now();
    let ck = train_predictor(&ds, &codec, "example", &cfg)?;
    println!("trained {} steps in {:.1?}", ck.stats.steps, t0.elapsed());
    for p in ck.curve.iter().step_by((epochs / 5).max(1)) {
        println!(
            "epoch {:3}  loss {:.3}  masked {:.3}  kl {:.5}  residual {:.3}",
            p.epoch, p.loss, p.masked_nll, p.kl_term, p.residual_nll
        );
    }
    let nll = heldout_nll(&ck.model, &codec, &ds, 0)?;
    println!(
        "held-out masked NLL {:.3}, residual NLL {:.3}, uniform {:.3}",
        nll.masked_nll, nll.residual_nll, nll.uniform
    );
    let mut rng = textmotion::rng::rng_from(1);
    for text in ["a person walks slowly", "a person jumps quickly"] {
        let c = CaptionTokens::parse(text)?;
        let frames: Vec<usize> = (0..5).map(|_| ck.length.sample(&c, &mut rng)).collect();
        println!("{text:>24}: sampled lengths {frames:?}");
    }
    Ok(())
}
