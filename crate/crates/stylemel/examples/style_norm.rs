//! Style-adaptive instance normalization in isolation: per-channel
//! statistics are normalized along the frame axis, then shifted and scaled
//! by gains and biases predicted from the style embedding.
//!
//!     cargo run --release --example style_norm

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stylemel::layers::SainIds;
use stylemel::params::ParamStore;
use stylemel::tensor::Tape;

fn channel_stats(data: &[f64], frames: usize, channels: usize, ch: usize) -> (f64, f64) {
    let mean: f64 = (0..frames).map(|f| data[f * channels + ch]).sum::<f64>() / frames as f64;
    let var: f64 = (0..frames)
        .map(|f| (data[f * channels + ch] - mean).powi(2))
        .sum::<f64>()
        / frames as f64;
    (mean, var.sqrt())
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (frames, channels, style_dim) = (40usize, 4usize, 8usize);

    let mut ps = ParamStore::new();
    let ids = SainIds::register(&mut ps, "sain", style_dim, channels, &mut rng);
    let tape = Tape::new();
    let sain = ids.bind(&ps.bind(&tape));

    let x_data: Vec<f64> = (0..frames * channels)
        .map(|_| rng.random_range(-2.0..2.0) * 3.0 + 0.7)
        .collect();
    let x = tape.constant(x_data.clone(), &[frames, channels]);

    println!("input per-channel statistics:");
    for ch in 0..channels {
        let (m, s) = channel_stats(&x_data, frames, channels, ch);
        println!("  channel {ch}: mean {m:+.3} std {s:.3}");
    }

    for style_id in 0..3 {
        let s_data: Vec<f64> = (0..style_dim)
            .map(|i| ((style_id * 31 + i * 7) as f64 * 0.37).sin())
            .collect();
        let s = tape.constant(s_data, &[style_dim]);
        let (g, b) = sain.style_gain_bias(&s).unwrap();
        let y = sain.forward(&x, &s).unwrap().data();
        println!("\nstyle {style_id}: gain {:?}", rounded(&g.data()));
        println!("         bias {:?}", rounded(&b.data()));
        for ch in 0..channels {
            let (m, sd) = channel_stats(&y, frames, channels, ch);
            println!("  out channel {ch}: mean {m:+.3} std {sd:.3}");
        }
    }
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
