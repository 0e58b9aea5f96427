//! The diffusion schedule and its identities, numerically: noise a signal
//! with the closed form, then walk the reverse chain back with the exact
//! noise and recover it.
//!
//!     cargo run --release --example diffusion_walk

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stylemel::diffusion::{gaussian_vec, reverse_step, shallow_sample, DiffusionSchedule};

fn main() {
    let sched = DiffusionSchedule::new(70, 30, 1e-4, 0.06).unwrap();
    println!("linear beta schedule, T=70, shallow start S=30");
    println!(
        "{:>4} {:>10} {:>10} {:>10} {:>10}",
        "t", "beta", "alpha", "alpha_bar", "sigma"
    );
    for t in [1, 2, 5, 10, 20, 30, 50, 70] {
        println!(
            "{t:>4} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            sched.beta(t),
            sched.alpha(t),
            sched.alpha_bar(t),
            sched.sigma(t)
        );
    }

    // noise a small signal to t=30 and denoise it with the oracle noise
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m0: Vec<f64> = vec![0.8, -0.4, 1.2, 0.1, -0.9, 0.5];
    let eps = gaussian_vec(&mut rng, m0.len());
    let t = 30;
    let ab = sched.alpha_bar(t);
    let mt: Vec<f64> = m0
        .iter()
        .zip(&eps)
        .map(|(m, e)| ab.sqrt() * m + (1.0 - ab).sqrt() * e)
        .collect();
    println!("\nsignal:        {m0:.3?}");
    println!(
        "noised (t=30): {:.3?}",
        mt.iter()
            .map(|v| (v * 1e3).round() / 1e3)
            .collect::<Vec<_>>()
    );

    // one exact reverse step lands on the posterior mean
    let back = reverse_step(&mt, &eps, t, &vec![0.0; m0.len()], &sched).unwrap();
    println!(
        "one exact reverse step: {:.3?}",
        back.iter()
            .map(|v| (v * 1e3).round() / 1e3)
            .collect::<Vec<_>>()
    );

    // full shallow chain with a perfect predictor recovers the signal
    let (m0c, sc) = (m0.clone(), sched.clone());
    let recovered = shallow_sample(&mt, &sched, &mut rng, false, move |x, t| {
        let ab = sc.alpha_bar(t);
        Ok(x.iter()
            .zip(&m0c)
            .map(|(xv, m)| (xv - ab.sqrt() * m) / (1.0 - ab).sqrt())
            .collect())
    })
    .unwrap();
    let err = recovered
        .iter()
        .zip(&m0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("\nshallow chain with perfect predictor from the noised start:");
    println!(
        "recovered:     {:.3?}",
        recovered
            .iter()
            .map(|v| (v * 1e3).round() / 1e3)
            .collect::<Vec<_>>()
    );
    println!("max |error| vs signal: {err:.2e}");
}
