//! Central-difference gradient checking against the tape.

use super::{Tape, Tensor, Var};

/// Step used for central differences.
pub const EPS: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-3)`. The floor keeps exactly-zero gradients
/// from turning rounding noise into a large relative error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences, input by input and element by element, and returns the
/// worst relative error.
pub fn check_function<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape<'static>, &[Var]) -> Var,
{
    let mut tape = Tape::standalone();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::standalone();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item().expect("scalar loss")
    };

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(input.shape());
        let analytic = grads.wrt(vars[k]).unwrap_or(&zeros);
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}
