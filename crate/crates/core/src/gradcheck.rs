//! Central finite-difference oracle for analytic gradients.
//!
//! Only ever evaluates the forward function; it never reads the tape's
//! backward machinery except to fetch the analytic result it is compared
//! against.

use crate::error::Result;
use crate::params::{Graph, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smallest denominator used when turning an absolute gradient difference
/// into a relative one.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Step `1e-4·max(1,|x|)`.
pub fn step_for(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the gradient of a scalar-valued graph against central
/// differences for every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> =
        inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let x = t.data()[j];
            let h = step_for(x);
            probe[ti].data_mut()[j] = x + h;
            let up = eval(&probe)?;
            probe[ti].data_mut()[j] = x - h;
            let down = eval(&probe)?;
            probe[ti].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[ti][j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_error: worst, checked })
}

/// Five-point central difference `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
pub fn five_point(mut f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let (a, b, c, d) = (f(x + 2.0 * h)?, f(x + h)?, f(x - h)?, f(x - 2.0 * h)?);
    Ok((-a + 8.0 * b - 8.0 * c + d) / (12.0 * h))
}

/// Compares backprop against five-point differences on parameter scalars
/// of `store`. `pick` chooses which `(param, element)` pairs to probe;
/// deep graphs need the higher-order stencil to keep truncation error
/// below the comparison tolerance at the standard step.
pub fn check_params<F>(
    store: &ParamStore<f64>,
    loss: F,
    mut pick: impl FnMut(ParamId, usize) -> bool,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = loss(&mut g)?;
    let grads = g.backward(out)?;
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (id, p) in store.iter() {
        for j in 0..p.value.numel() {
            if !pick(id, j) {
                continue;
            }
            let x = p.value.data()[j];
            let analytic = grads.get(id).map_or(0.0, |g| g[j]);
            let numeric = five_point(
                |v| {
                    probe.value_mut(id).data_mut()[j] = v;
                    let mut g = Graph::inference(&probe);
                    let out = loss(&mut g)?;
                    g.value(out).item()
                },
                x,
                step_for(x),
            );
            probe.value_mut(id).data_mut()[j] = x;
            worst = worst.max(relative_error(analytic, numeric?));
            checked += 1;
        }
    }
    Ok(GradCheck { max_rel_error: worst, checked })
}
