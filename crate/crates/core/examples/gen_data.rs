//! Generate the synthetic caption/motion corpus, print a few samples and
//! write it to disk.
//!
//! ```bash
//! cargo run --release -p textmotion --example gen_data -- [out_dir] [n_samples] [seed]
//! ```

use std::path::PathBuf;

use textmotion::syndata::{generate_corpus, read_dataset, write_dataset, CorpusSpec};

fn main() -> textmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "runs/example-data".into()).into();
    let n_samples = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let spec = CorpusSpec {
        n_samples,
        seed,
        ..Default::default()
    };
    let ds = generate_corpus(&spec)?;
    println!(
        "{} samples, {} train / {} test, d = {}, {} fps",
        ds.len(),
        ds.train_indices.len(),
        ds.test_indices.len(),
        ds.feature_dim,
        ds.frame_rate
    );
    for s in ds.samples.iter().take(5) {
        println!("  {:>3} frames  {}", s.motion.len(), s.caption.text());
    }
    write_dataset(&ds, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back.len(), ds.len());
    println!("wrote {}", out.display());
    Ok(())
}
