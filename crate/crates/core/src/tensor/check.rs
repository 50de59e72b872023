//! Finite-difference gradient checking.
//!
//! The checkers rebuild the graph from scratch for every probe: the closure
//! receives a fresh tape plus the (possibly perturbed) leaf values and must
//! return the scalar loss variable along with the leaf handles in the same
//! order as the inputs. Central differences with step `h` are compared
//! against the tape's reverse-mode gradients under a mixed absolute/relative
//! error measure.

use super::{Tape, Tensor, Var};

/// Maximum of absolute error and error relative to the FD magnitude.
fn mixed_err(analytic: f64, fd: f64) -> f64 {
    let abs = (analytic - fd).abs();
    abs.min(abs / fd.abs().max(1.0))
}

/// Worst mixed absolute/relative deviation between reverse-mode and central
/// finite-difference gradients over every element of every input.
pub fn max_grad_fd_error<F>(inputs: &[Tensor], build: F, h: f64) -> f64
where
    F: Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
{
    // Analytic gradients once.
    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, inputs);
    tape.backward(loss).expect("backward failed in gradcheck");
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| tape.grad(v)).collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, probe);
        tape.value(loss).item().expect("gradcheck loss must be scalar")
    };

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for elem in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[elem] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[elem] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let got = analytic[which].data()[elem];
            worst = worst.max(mixed_err(got, fd));
        }
    }
    worst
}

/// Panic with a diagnostic if any gradient element deviates from central
/// finite differences by more than `tol` (mixed absolute/relative error).
pub fn assert_grad_matches_fd<F>(inputs: &[Tensor], build: F, h: f64, tol: f64)
where
    F: Fn(&mut Tape, &[Tensor]) -> (Var, Vec<Var>),
{
    // Analytic gradients once.
    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, inputs);
    tape.backward(loss).expect("backward failed in gradcheck");
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| tape.grad(v)).collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, probe);
        tape.value(loss).item().expect("gradcheck loss must be scalar")
    };

    for (which, input) in inputs.iter().enumerate() {
        for elem in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[elem] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[elem] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let got = analytic[which].data()[elem];
            let err = mixed_err(got, fd);
            assert!(
                err <= tol,
                "gradient mismatch: input {which} element {elem}: analytic {got} vs fd {fd} (err {err:.3e})"
            );
        }
    }
}
