//! Central finite-difference verification of analytic gradients.
//!
//! [`gradcheck`] evaluates a tensor function twice per input element with a
//! step of `±1e-5` and compares the quotient against the tape's backward
//! pass. Non-scalar outputs are reduced by a fixed deterministic weighted
//! sum so that every output element contributes to the checked scalar.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Central-difference step (64-bit evaluation).
pub const FD_STEP: f64 = 1e-5;

/// Cap on total checked elements; beyond this the quadratic cost and
/// accumulated roundoff make the check meaningless.
pub const MAX_ELEMENTS: usize = 1000;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// max over elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
    pub max_rel_err: f64,
    pub tol: f64,
    pub elements: usize,
    /// (input index, element index) of the worst disagreement
    pub worst: Option<(usize, usize)>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} (tol {:.1e}, {} elements)",
            if self.pass() { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.tol,
            self.elements
        )
    }
}

fn reduction_weights(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // fixed, bounded away from zero, element-dependent
    (0..n)
        .map(|i| 0.75 + 0.5 * (2.3 * i as f64 + 0.71).sin())
        .collect()
}

fn weighted_scalar(out: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let wt = out.tape().constant(weights.to_vec(), out.shape());
    Ok(out.mul(&wt)?.sum_all())
}

/// Compare analytic gradients of `f` against central finite differences.
///
/// `inputs` are `(data, shape)` pairs; all of them are treated as
/// differentiable leaves. `f` must be deterministic. Returns an error when a
/// forward pass produces a non-finite value, naming the first offending
/// primitive.
pub fn gradcheck<F>(f: F, inputs: &[(Vec<f64>, Vec<usize>)], tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let elements: usize = inputs.iter().map(|(d, _)| d.len()).sum();
    if elements > MAX_ELEMENTS {
        return Err(Error::InvalidArgument {
            op: "gradcheck",
            msg: format!("{elements} input elements exceed the cap of {MAX_ELEMENTS}"),
        });
    }

    // Analytic pass.
    let tape = Tape::new();
    let leafs: Vec<Tensor> = inputs
        .iter()
        .map(|(d, s)| tape.leaf(d.clone(), s))
        .collect();
    let out = f(&tape, &leafs)?;
    let weights = reduction_weights(out.numel());
    let loss = weighted_scalar(&out, &weights)?;
    loss.backward()?;
    if let Some(op) = tape.first_non_finite() {
        return Err(Error::NonFinite { op });
    }
    let analytic: Vec<Vec<f64>> = leafs
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    // Numeric pass: one fresh tape per probe.
    let eval = |which: usize, element: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let leafs: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(i, (d, s))| {
                let mut v = d.clone();
                if i == which {
                    v[element] += delta;
                }
                tape.constant(v, s)
            })
            .collect();
        let out = f(&tape, &leafs)?;
        if let Some(op) = tape.first_non_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(weighted_scalar(&out, &weights)?.item())
    };

    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    for (i, (d, _)) in inputs.iter().enumerate() {
        for (j, a) in analytic[i].iter().enumerate().take(d.len()) {
            let numeric = (eval(i, j, FD_STEP)? - eval(i, j, -FD_STEP)?) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((i, j));
            }
        }
    }

    Ok(GradcheckReport {
        max_rel_err,
        tol,
        elements,
        worst,
    })
}
