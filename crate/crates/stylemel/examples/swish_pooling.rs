//! Watch the gated recurrence act as a soft maximum: as the gap between the
//! carried state and the incoming value grows, the recurrence converges to
//! whichever of the two is larger.
//!
//!     cargo run --release --example swish_pooling

use stylemel::layers::swish_recurrence;
use stylemel::tensor::Tape;

fn main() {
    let tape = Tape::new();
    let one = tape.scalar(1.0);
    let zero = tape.scalar(0.0);

    println!(
        "{:>8} {:>8} {:>12} {:>12} {:>11}",
        "prev", "input", "recurrence", "max", "|diff|"
    );
    for (prev, input) in [
        (0.0, 0.5),
        (0.0, 2.0),
        (0.0, 5.0),
        (0.0, 20.0),
        (0.0, -20.0),
        (10.0, 30.0),
        (10.0, -10.0),
        (25.0, 70.0),
    ] {
        let c0 = tape.constant(vec![prev], &[1]);
        let x1 = tape.constant(vec![input], &[1, 1]);
        let c = swish_recurrence(&x1, &one, &zero, Some(&c0))
            .unwrap()
            .data()[0];
        let max = prev.max(input);
        println!(
            "{prev:>8.1} {input:>8.1} {c:>12.6} {max:>12.1} {:>11.2e}",
            (c - max).abs()
        );
    }

    // a short sequence: the state ratchets onto the running maximum
    println!("\nsequence pooling over inputs [3, -1, 7, 2, 12, 5]:");
    let xs = [3.0, -1.0, 7.0, 2.0, 12.0, 5.0];
    let x1 = tape.constant(xs.to_vec(), &[6, 1]);
    let states = swish_recurrence(&x1, &one, &zero, None).unwrap().data();
    for (x, c) in xs.iter().zip(&states) {
        println!("  input {x:>5.1} -> state {c:>8.4}");
    }
}
