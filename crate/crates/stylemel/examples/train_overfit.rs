//! Train a scaled-down model on a tiny synthetic corpus and watch every
//! loss component fall.
//!
//!     cargo run --release --example train_overfit

use stylemel::config::Config;
use stylemel::corpus;
use stylemel::train::Trainer;

fn main() {
    let mut cfg = Config::desk();
    cfg.model.residual_channels = 64;
    cfg.corpus.utterances = 4;
    cfg.train.steps = 400;

    let data = corpus::generate(&cfg.corpus, cfg.model.mel_channels);
    println!(
        "corpus: {} utterances, {} mel channels, {} total frames",
        data.len(),
        cfg.model.mel_channels,
        data.iter().map(|u| u.total_frames()).sum::<usize>()
    );

    let mut trainer = Trainer::new(cfg).unwrap();
    println!(
        "\n{:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "step", "l1", "dur", "pitch", "range", "diff", "total"
    );
    let metrics = trainer
        .run(&data, 400, |m| {
            if m.step % 50 == 0 {
                println!(
                    "{:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                    m.step, m.l1, m.dur_l2, m.pitch_l2, m.range_l2, m.diff_mse, m.total
                );
            }
        })
        .unwrap();

    let first = &metrics[0];
    let last50 = &metrics[metrics.len() - 50..];
    let avg = |f: fn(&stylemel::train::StepMetrics) -> f64| {
        last50.iter().map(f).sum::<f64>() / last50.len() as f64
    };
    println!(
        "\ntotal loss: {:.3} at step 0 -> {:.3} averaged over the last 50 steps",
        first.total,
        avg(|m| m.total)
    );
    println!(
        "reconstruction l1 {:.4}, duration l2 {:.4}, diffusion mse {:.4}",
        avg(|m| m.l1),
        avg(|m| m.dur_l2),
        avg(|m| m.diff_mse)
    );
}
