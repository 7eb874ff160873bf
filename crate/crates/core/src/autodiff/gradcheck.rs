use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Fixed projection weights used to reduce a non-scalar output to a scalar.
pub fn probe_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.7548 + 0.31).sin() + 0.1).collect()
}

/// Compares reverse-mode gradients of `f` with central finite differences.
///
/// `f` receives a fresh tape and one watched leaf per input. Non-scalar
/// outputs are reduced with [`probe_weights`]. Returns the maximum over every
/// input entry of `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn grad_check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.watch(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let n = tape.value(out).numel();
        let loss = if n == 1 {
            out
        } else {
            tape.dot_const(out, &probe_weights(n))?
        };
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(inputs)?;
    let grads = tape.backward(loss);

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.wrt(*var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; inputs[which].numel()],
        };
        for (e, &a) in analytic.iter().enumerate() {
            let orig = inputs[which].data()[e];
            work[which].data_mut()[e] = orig + step;
            let (t_plus, _, l_plus) = eval(&work)?;
            work[which].data_mut()[e] = orig - step;
            let (t_minus, _, l_minus) = eval(&work)?;
            work[which].data_mut()[e] = orig;
            let numeric = (t_plus.scalar(l_plus) - t_minus.scalar(l_minus)) / (2.0 * step);
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
