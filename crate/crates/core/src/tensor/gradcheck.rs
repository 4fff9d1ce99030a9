use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::Result;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of a scalar-valued `op` against central
/// differences, returning the largest elementwise relative error.
pub fn grad_check<F>(op: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let errs = grad_check_many(|g, v| op(g, v[0]), std::slice::from_ref(input), step)?;
    Ok(errs[0])
}

/// Multi-input variant of [`grad_check`]: every entry of every input is
/// perturbed in turn. Returns the largest relative error per input.
pub fn grad_check_many<F>(op: F, inputs: &[Tensor], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let y = op(&mut g, &vars)?;
        Ok(g.scalar(y))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = op(&mut g, &vars)?;
    g.backward(y)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut work = inputs.to_vec();
    let mut worst = Vec::with_capacity(inputs.len());
    for (k, grads) in analytic.iter().enumerate() {
        let mut max_err: f64 = 0.0;
        for (i, &a) in grads.iter().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            max_err = max_err.max(relative_error(a, numeric));
        }
        worst.push(max_err);
    }
    Ok(worst)
}
