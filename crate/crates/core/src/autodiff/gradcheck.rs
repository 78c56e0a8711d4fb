use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Bound, ParamSet};
use crate::error::Result;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, flat index, analytic, numeric)` for every coordinate over tolerance.
    pub failures: Vec<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with an absolute floor so that two vanishing gradients compare equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks `coords` randomly chosen scalar coordinates of `params`.
///
/// `f` must build a scalar loss from the bound parameters and be a pure function
/// of their values.
pub fn grad_check<F, R>(
    params: &ParamSet<f64>,
    f: F,
    coords: usize,
    step: f64,
    tolerance: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
    R: Rng,
{
    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let loss = f(&mut g, &b)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = f(&mut g, &bound)?;
    let grads = g.backward(loss)?;
    let analytic = bound.gradients(params, &grads);

    let sizes: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    for _ in 0..coords {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let original = probe.params_mut()[which].value.data()[flat];
        probe.params_mut()[which].value.data_mut()[flat] = original + step;
        let plus = eval(&probe)?;
        probe.params_mut()[which].value.data_mut()[flat] = original - step;
        let minus = eval(&probe)?;
        probe.params_mut()[which].value.data_mut()[flat] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[which].data()[flat];
        let err = relative_error(a, numeric);
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(err);
        if err > tolerance {
            let name = probe.iter().nth(which).map(|p| p.name.clone()).unwrap_or_default();
            report.failures.push((name, flat, a, numeric));
        }
    }
    Ok(report)
}
