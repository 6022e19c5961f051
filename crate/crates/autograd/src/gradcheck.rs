//! Finite-difference verification of reverse-mode gradients.

use crate::{AutogradError, Graph, Result, Tensor, Var};

/// Largest relative error between reverse-mode and central-difference
/// gradients of `f` over (at most `max_coords` per parameter) coordinates.
///
/// `f` receives an evaluation-mode graph and the parameter handles and must
/// return a scalar. For each parameter the error is
/// `max_k |a_k - n_k| / max(max_k |a_k|, max_k |n_k|, 1e-6)` over the checked
/// coordinates, so coordinates whose true gradient vanishes are judged
/// against the scale of the whole gradient rather than against roundoff.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, max_coords: usize) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(AutogradError::Check(format!("f evaluated to {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).item().is_finite() {
        return Err(AutogradError::Check("f is not finite".into()));
    }
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]);
        let n = p.len();
        let step = if n > max_coords { n.div_ceil(max_coords) } else { 1 };
        let (mut diff, mut scale) = (0.0f64, 1e-6f64);
        for k in (0..n).step_by(step.max(1)) {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + h;
            let fp = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let fm = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let num = (fp - fm) / (2.0 * h);
            let a = analytic.data()[k];
            diff = diff.max((a - num).abs());
            scale = scale.max(a.abs()).max(num.abs());
        }
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}
