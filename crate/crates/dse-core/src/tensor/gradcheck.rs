//! Finite-difference verification of tape gradients.
//!
//! Rebuilds the computation from scratch for every perturbed coordinate,
//! compares the central difference `(f(x+ε) − f(x−ε)) / 2ε` against the
//! analytic gradient, and reports the worst relative error per parameter.
//! Slow by design — this is a test-and-debug facility, not a training path.

use super::{Tape, Tensor, TensorError, Var};

/// Worst observed error for one named parameter.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    /// Max over coordinates of `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    /// Flat coordinate index at which the max occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of one [`gradcheck`] run.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub params: Vec<ParamReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tolerance)
    }

    /// Names of parameters whose worst error exceeds the tolerance.
    pub fn failures(&self) -> Vec<&ParamReport> {
        self.params
            .iter()
            .filter(|p| p.max_rel_err > self.tolerance)
            .collect()
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            let status = if p.max_rel_err <= self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "{status:4} {name}: max rel err {err:.3e} at [{idx}] (analytic {a:.6e}, numeric {n:.6e})",
                name = p.name,
                err = p.max_rel_err,
                idx = p.worst_index,
                a = p.analytic,
                n = p.numeric,
            )?;
        }
        Ok(())
    }
}

/// Check every coordinate of every named parameter of a scalar function.
///
/// `build` receives a fresh tape plus the current parameter values and must
/// return the scalar loss root. It is invoked once for the analytic pass
/// and twice more per coordinate for the central differences.
pub fn gradcheck<F>(
    params: &[(&str, Tensor)],
    epsilon: f64,
    tolerance: f64,
    build: F,
) -> Result<GradcheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();

    // Analytic gradients from one recorded pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = base.iter().map(|t| tape.param(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut reports = Vec::with_capacity(params.len());
    for (p_idx, (name, tensor)) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[p_idx], tensor.rows(), tensor.cols());
        let mut worst = ParamReport {
            name: (*name).to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..tensor.numel() {
            let mut plus = base.clone();
            plus[p_idx].data_mut()[i] += epsilon;
            let mut minus = base.clone();
            minus[p_idx].data_mut()[i] -= epsilon;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        reports.push(worst);
    }

    Ok(GradcheckReport {
        params: reports,
        tolerance,
    })
}
