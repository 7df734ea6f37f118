//! First-order minimization of stage parameters, single level or
//! coarse-to-fine.
//!
//! Steps are accepted only when they do not increase the objective; a
//! rejected step halves the learning rate. The recorded trace therefore never
//! increases. A rejection also restarts the Adam moments.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Adam,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSpec {
    pub method: Method,
    pub step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Relative change of the total loss below which an iteration counts as
    /// stalled.
    pub convergence_tol: f64,
    /// Consecutive stalled iterations before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            step_size: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 100,
            convergence_tol: 1e-5,
            patience: 10,
            seed: 0,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.step_size.is_finite()
            && self.step_size > 0.0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
    NanAbort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub final_params: Vec<f64>,
    pub final_loss: f64,
    /// `(iteration, total loss)` of every accepted iterate, starting with the
    /// initial point. For pyramids this is the finest level.
    pub trace: Vec<(usize, f64)>,
    /// Per-level traces, coarsest first.
    pub level_traces: Vec<Vec<(usize, f64)>>,
    pub stop_reason: StopReason,
    /// Iteration at which a non-finite value appeared.
    pub abort_iteration: Option<usize>,
}

/// Differentiable scalar functional over a flat parameter vector.
pub trait Objective {
    /// Returns the loss and writes the gradient into `grad`.
    fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> f64;

    /// Post-processes a proposed step in place (e.g. smoothing).
    fn shape_step(&self, _params: &[f64], _step: &mut [f64]) {}

    /// Rejects parameters outside the feasible set.
    fn admissible(&self, _params: &[f64]) -> bool {
        true
    }

    /// Called after the evaluation at `iteration` has been accepted.
    fn accepted(&mut self, _iteration: usize, _loss: f64) {}
}

/// Adapter for plain closures `f(x, grad) -> loss`.
#[derive(Clone)]
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective for FnObjective<F> {
    fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> f64 {
        (self.0)(params, grad)
    }
}

const MAX_HALVINGS: usize = 10;

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn minimize(
    objective: &mut dyn Objective,
    init: Vec<f64>,
    spec: &OptimizerSpec,
) -> OptimizeOutcome {
    let n = init.len();
    let mut x = init;
    let mut grad = vec![0.0; n];
    let mut loss = objective.evaluate(&x, &mut grad);
    if !loss.is_finite() || !all_finite(&grad) {
        return OptimizeOutcome {
            final_params: x,
            final_loss: loss,
            trace: Vec::new(),
            level_traces: vec![Vec::new()],
            stop_reason: StopReason::NanAbort,
            abort_iteration: Some(0),
        };
    }
    objective.accepted(0, loss);
    let mut trace = vec![(0, loss)];

    let mut lr = spec.step_size;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    let mut stalled = 0;
    let mut step = vec![0.0; n];
    let mut candidate = vec![0.0; n];
    let mut cand_grad = vec![0.0; n];
    let mut stop_reason = StopReason::MaxIter;
    let mut abort_iteration = None;

    for it in 1..=spec.max_iterations {
        match spec.method {
            Method::Adam => {
                b1t *= spec.adam_beta1;
                b2t *= spec.adam_beta2;
                for k in 0..n {
                    m[k] = spec.adam_beta1 * m[k] + (1.0 - spec.adam_beta1) * grad[k];
                    v[k] = spec.adam_beta2 * v[k] + (1.0 - spec.adam_beta2) * grad[k] * grad[k];
                    let mh = m[k] / (1.0 - b1t);
                    let vh = v[k] / (1.0 - b2t);
                    step[k] = -lr * mh / (vh.sqrt() + spec.epsilon);
                }
            }
            Method::GradientDescent => {
                for k in 0..n {
                    step[k] = -lr * grad[k];
                }
            }
        }
        objective.shape_step(&x, &mut step);

        let mut feasible = false;
        for _ in 0..=MAX_HALVINGS {
            for k in 0..n {
                candidate[k] = x[k] + step[k];
            }
            if objective.admissible(&candidate) {
                feasible = true;
                break;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }

        let mut relative_change = 0.0;
        let mut reset_moments = false;
        if feasible {
            let cand_loss = objective.evaluate(&candidate, &mut cand_grad);
            if !cand_loss.is_finite() || !all_finite(&cand_grad) {
                stop_reason = StopReason::NanAbort;
                abort_iteration = Some(it);
                break;
            }
            if cand_loss <= loss {
                relative_change = (loss - cand_loss) / loss.abs().max(1e-300);
                std::mem::swap(&mut x, &mut candidate);
                std::mem::swap(&mut grad, &mut cand_grad);
                loss = cand_loss;
                objective.accepted(it, loss);
                trace.push((it, loss));
                lr = (lr * 1.1).min(spec.step_size);
            } else {
                lr *= 0.5;
                reset_moments = true;
            }
        } else {
            lr *= 0.5;
            reset_moments = true;
        }
        if reset_moments {
            // stale momentum points past the rejected region
            m.iter_mut().for_each(|v| *v = 0.0);
            v.iter_mut().for_each(|v| *v = 0.0);
            b1t = 1.0;
            b2t = 1.0;
        }

        if relative_change < spec.convergence_tol {
            stalled += 1;
            if stalled >= spec.patience {
                stop_reason = StopReason::Converged;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    OptimizeOutcome {
        final_params: x,
        final_loss: loss,
        level_traces: vec![trace.clone()],
        trace,
        stop_reason,
        abort_iteration,
    }
}

/// A family of objectives over resolution levels, coarsest first.
pub trait PyramidObjective {
    fn levels(&self) -> usize;
    fn level(&mut self, level: usize) -> &mut dyn Objective;
    fn zero_init(&self, level: usize) -> Vec<f64>;
    /// Maps parameters from `level` to `level + 1`.
    fn prolong(&self, params: &[f64], level: usize) -> Vec<f64>;
}

/// Runs [`minimize`] on every level from coarse to fine, prolonging the
/// result between levels. At each finer level the prolonged parameters are
/// kept only if they are no worse than a zero start.
pub fn minimize_pyramid(
    family: &mut dyn PyramidObjective,
    init: Vec<f64>,
    spec: &OptimizerSpec,
) -> OptimizeOutcome {
    let levels = family.levels().max(1);
    let mut params = init;
    let mut level_traces = Vec::with_capacity(levels);
    let mut last: Option<OptimizeOutcome> = None;
    for level in 0..levels {
        if level > 0 {
            params = family.prolong(&params, level - 1);
            let zero = family.zero_init(level);
            let mut scratch = vec![0.0; params.len()];
            let obj = family.level(level);
            let from_coarse = obj.evaluate(&params, &mut scratch);
            let from_zero = obj.evaluate(&zero, &mut scratch);
            if !(from_coarse <= from_zero) {
                params = zero;
            }
        }
        let outcome = minimize(family.level(level), params, spec);
        level_traces.push(outcome.trace.clone());
        if outcome.stop_reason == StopReason::NanAbort {
            return OptimizeOutcome {
                level_traces,
                ..outcome
            };
        }
        params = outcome.final_params.clone();
        last = Some(outcome);
    }
    let last = last.expect("at least one level");
    OptimizeOutcome {
        level_traces,
        ..last
    }
}
