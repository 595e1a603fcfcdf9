//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// A scalar objective over a list of named parameter tensors, evaluated in
/// 64-bit precision.
pub trait Differentiable {
    fn param_names(&self) -> Vec<String>;
    fn param_len(&self, tensor: usize) -> usize;
    fn get(&self, tensor: usize, index: usize) -> f64;
    fn set(&mut self, tensor: usize, index: usize, value: f64);
    fn loss(&self) -> Result<f64>;
    /// Analytic gradient, one flat vector per parameter tensor.
    fn gradients(&self) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub max_per_layer: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_layer: 200,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates dropped because the objective is not smooth within the
    /// finite-difference stencil (a ReLU or max-pool switch).
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub per_layer: Vec<LayerReport>,
}

/// Denominator floor for relative errors, so that coordinates with
/// vanishing gradient are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn central_difference<D: Differentiable>(model: &mut D, t: usize, i: usize, h: f64) -> Result<f64> {
    let orig = model.get(t, i);
    model.set(t, i, orig + h);
    let plus = model.loss();
    model.set(t, i, orig - h);
    let minus = model.loss();
    model.set(t, i, orig);
    Ok((plus? - minus?) / (2.0 * h))
}

/// Checks the analytic gradient of `model` on a seeded random subsample of
/// at most `max_per_layer` coordinates per parameter tensor.
///
/// A coordinate whose error exceeds the tolerance is re-probed with steps
/// `h/2` and `h/4`; if those two estimates disagree with each other the
/// point sits on a kink and is skipped; otherwise the error is taken
/// against the `h/2` estimate.
pub fn grad_check<D: Differentiable>(model: &mut D, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let grads = model.gradients()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut per_layer = Vec::new();
    for (t, name) in model.param_names().into_iter().enumerate() {
        let len = model.param_len(t);
        let count = len.min(config.max_per_layer);
        let mut picked = sample(&mut rng, len, count).into_vec();
        picked.sort_unstable();
        let mut report = LayerReport {
            name,
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
        };
        for i in picked {
            let analytic = grads[t][i];
            let numeric = central_difference(model, t, i, config.step)?;
            let mut err = relative_error(analytic, numeric);
            if err > config.tolerance {
                let half = central_difference(model, t, i, config.step / 2.0)?;
                let quarter = central_difference(model, t, i, config.step / 4.0)?;
                if relative_error(half, quarter) > config.tolerance {
                    report.skipped_kinks += 1;
                    continue;
                }
                err = relative_error(analytic, half);
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
        }
        per_layer.push(report);
    }
    let max_rel_error = per_layer.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        tolerance: config.tolerance,
        passed: max_rel_error < config.tolerance,
        per_layer,
    })
}

/// Objective assembled on a fresh 64-bit graph by a closure that receives
/// the parameter nodes and returns a scalar loss node.
pub struct GraphObjective<F> {
    names: Vec<String>,
    params: Vec<Tensor<f64>>,
    build: F,
}

impl<F> GraphObjective<F>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    pub fn new(params: Vec<(String, Tensor<f64>)>, build: F) -> Self {
        let (names, params) = params.into_iter().unzip();
        Self { names, params, build }
    }

    pub fn params(&self) -> &[Tensor<f64>] {
        &self.params
    }

    fn forward(&self) -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let loss = (self.build)(&mut g, &vars)?;
        Ok((g, vars, loss))
    }
}

impl<F> Differentiable for GraphObjective<F>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn param_len(&self, tensor: usize) -> usize {
        self.params[tensor].numel()
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        self.params[tensor].data()[index]
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        self.params[tensor].data_mut()[index] = value;
    }

    fn loss(&self) -> Result<f64> {
        let (g, _, loss) = self.forward()?;
        Ok(g.value(loss).data()[0])
    }

    fn gradients(&self) -> Result<Vec<Vec<f64>>> {
        let (mut g, vars, loss) = self.forward()?;
        g.backward(loss)?;
        Ok(vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.grad(v).map(Tensor::into_data).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect())
    }
}
