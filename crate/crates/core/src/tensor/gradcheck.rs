use super::{ParamStore, ParamVars, Tape, Var};
use crate::error::{KrfError, Result};

/// Denominator floor for relative errors, so entries whose true gradient is
/// near zero are judged on an absolute scale instead of dividing by ~0.
/// Rounding alone puts about `1e-16·|f| / eps` ≈ 1e-10 of noise on a
/// central difference of an O(1) loss at eps 1e-5, so gradients smaller
/// than this cannot be resolved to 1e-4 relative accuracy.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub loss: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn eval(params: &ParamStore, f: &impl Fn(&mut Tape, &ParamVars) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register_frozen(&mut tape);
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(KrfError::InvalidTensor(format!(
            "grad_check objective must be scalar, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares tape gradients of `f` against central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every entry of every parameter.
pub fn grad_check<F>(params: &ParamStore, f: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(KrfError::Config(format!("grad_check eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = f(&mut tape, &vars)?;
    let loss = tape.value(out).item();
    if !loss.is_finite() {
        return Err(KrfError::NonFinite(format!("grad_check loss is {loss}; check aborted")));
    }
    let mut grads = tape.backward(out)?;

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (name, var) in vars.iter() {
        let analytic = grads
            .take(var)
            .unwrap_or_else(|| vec![0.0; params.get(name).map(|t| t.len()).unwrap_or(0)]);
        let mut check = ParamCheck {
            name: name.to_string(),
            entries: analytic.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for (k, &a) in analytic.iter().enumerate() {
            let orig = probe.get(name)?.data()[k];
            probe.get_mut(name)?.data_mut()[k] = orig + eps;
            let up = eval(&probe, &f)?;
            probe.get_mut(name)?.data_mut()[k] = orig - eps;
            let down = eval(&probe, &f)?;
            probe.get_mut(name)?.data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(KrfError::NonFinite(format!(
                    "perturbed loss non-finite at {name}[{k}]; check aborted"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = k;
            }
            check.max_abs_error = check.max_abs_error.max(abs);
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        loss,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        store.insert("theta", Tensor::scalar(3.0)).unwrap();
        let f = |tape: &mut Tape, vars: &ParamVars| {
            let t = vars.get("theta")?;
            tape.mul(t, t)
        };
        let report = grad_check(&store, f, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");

        let mut tape = Tape::new();
        let vars = store.register(&mut tape);
        let out = f(&mut tape, &vars).unwrap();
        let g = tape.backward(out).unwrap();
        assert!((g.get(vars.get("theta").unwrap()).unwrap()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn constant_objective_has_zero_gradients() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0]).unwrap()).unwrap();
        let f = |tape: &mut Tape, _: &ParamVars| Ok(tape.constant(Tensor::scalar(4.2)));
        let report = grad_check(&store, f, 1e-5, 1e-6).unwrap();
        assert_eq!(report.max_rel_error(), 0.0);
        assert!(report.params.iter().all(|p| p.max_abs_error == 0.0));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        let f = |tape: &mut Tape, vars: &ParamVars| {
            let w = vars.get("w")?;
            Ok(tape.scale(w, f64::INFINITY))
        };
        assert!(matches!(grad_check(&store, f, 1e-5, 1e-4), Err(KrfError::NonFinite(_))));
        assert!(grad_check(&store, |t: &mut Tape, _: &ParamVars| Ok(t.constant(Tensor::scalar(0.0))), 0.0, 1e-4).is_err());
    }
}
