use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Per-parameter outcome of [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct ParamReport {
    pub index: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h probe crossed a kink (ReLU, maxout tie, ...).
    pub excluded: usize,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub params: Vec<ParamReport>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded).sum()
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

fn evaluate<F>(f: &F, params: &[Tensor], with_grad: bool) -> Result<(f64, u64, Vec<Tensor>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("objective evaluated to {value}")));
    }
    let signature = g.branch_signature();
    let mut grads = Vec::new();
    if with_grad {
        g.backward(out)?;
        for (v, p) in vars.iter().zip(params) {
            grads.push(
                g.grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())),
            );
        }
    }
    Ok((value, signature, grads))
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences with step `h`.
///
/// Relative error uses the denominator `max(|a|, |b|, 1e-8)`. A coordinate
/// is excluded when either probe point takes a different branch of some
/// piecewise primitive than the base point does.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, base_sig, analytic) = evaluate(&f, params, true)?;
    let mut work: Vec<Tensor> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut rep = ParamReport {
            index: pi,
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
        };
        for k in 0..work[pi].len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let (fp, sp, _) = evaluate(&f, &work, false)?;
            work[pi].data_mut()[k] = orig - h;
            let (fm, sm, _) = evaluate(&f, &work, false)?;
            work[pi].data_mut()[k] = orig;
            if sp != base_sig || sm != base_sig {
                rep.excluded += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad.data()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            rep.max_rel_error = rep.max_rel_error.max((a - numeric).abs() / denom);
            rep.checked += 1;
        }
        reports.push(rep);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(FdReport {
        params: reports,
        max_rel_error,
        tol,
    })
}
