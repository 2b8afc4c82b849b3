//! Adam-based first-order minimization and a finite-difference gradient
//! checker.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::body::{layout, ParamMask};
use crate::error::{Error, Result};

/// Length of the window used by the relative-decrease stopping rule.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Relative energy change over the window below which the run stops.
    pub convergence_tolerance: f64,
    /// Active parameter blocks; only consulted for full body-parameter
    /// vectors.
    pub parameter_mask: ParamMask,
    /// Multiplicative step-size decay applied after every iteration.
    pub step_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 500,
            convergence_tolerance: 1e-6,
            parameter_mask: ParamMask::ALL,
            step_decay: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("optimizer config: {m}")));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.convergence_tolerance > 0.0) {
            return bad("convergence_tolerance must be positive");
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return bad("step_decay must lie in (0, 1]");
        }
        Ok(())
    }

    /// Activity flags for a parameter vector of length `n`.
    pub fn active_flags(&self, n: usize) -> Result<Vec<bool>> {
        if n == layout::DIM {
            Ok(self.parameter_mask.to_flags())
        } else if self.parameter_mask == ParamMask::ALL {
            Ok(vec![true; n])
        } else {
            Err(Error::InvalidInput(format!(
                "a parameter mask needs a {}-value body vector, got {n} values",
                layout::DIM
            )))
        }
    }
}

/// Adam moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step_size: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, step_size: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step_size,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_config(n: usize, c: &OptimizerConfig) -> Self {
        Self::new(n, c.step_size, c.beta1, c.beta2, c.epsilon)
    }

    /// One bias-corrected update; inactive coordinates are left untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], active: Option<&[bool]>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            if active.is_some_and(|a| !a[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.step_size * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub energy: f64,
    /// Lowest energy seen up to this iteration.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    ZeroGradient,
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    /// Best parameters seen.
    pub params: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
    pub stop: StopReason,
}

/// Minimizes `objective` from `init` with Adam. See [`minimize_projected`].
pub fn minimize<F>(objective: F, init: &[f64], config: &OptimizerConfig) -> Result<Minimized>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_projected(objective, init, config, |_| {})
}

/// Minimizes `objective` from `init`, applying `project` after every update
/// to keep iterates feasible.
///
/// Stops after `max_iterations`, when the energy changed by less than
/// `convergence_tolerance` (relative) over the last
/// [`CONVERGENCE_WINDOW`] iterations, or immediately when the active
/// gradient vanishes at `init`. A non-finite value or gradient halts the run
/// and the best iterate so far is returned.
pub fn minimize_projected<F, P>(
    mut objective: F,
    init: &[f64],
    config: &OptimizerConfig,
    project: P,
) -> Result<Minimized>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: Fn(&mut [f64]),
{
    config.validate()?;
    let active = config.active_flags(init.len())?;
    let mut x = init.to_vec();
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point"));
    }
    if g.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "objective gradient",
            expected: x.len(),
            got: g.len(),
        });
    }
    let mut trace = vec![TracePoint {
        iteration: 0,
        energy: f,
        best: f,
    }];
    let mut best = (f, x.clone());
    let initial_value = f;
    let finish = |best: (f64, Vec<f64>), trace: Vec<TracePoint>, iterations, stop| Minimized {
        params: best.1,
        value: best.0,
        initial_value,
        iterations,
        trace,
        stop,
    };
    if g.iter().zip(&active).all(|(v, &a)| !a || *v == 0.0) {
        return Ok(finish(best, trace, 0, StopReason::ZeroGradient));
    }
    let mut adam = Adam::from_config(x.len(), config);
    for it in 1..=config.max_iterations {
        adam.step(&mut x, &g, Some(&active));
        project(&mut x);
        adam.step_size *= config.step_decay;
        (f, g) = objective(&x)?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Ok(finish(
                best,
                trace,
                it,
                StopReason::NonFinite { iteration: it },
            ));
        }
        if f < best.0 {
            best = (f, x.clone());
        }
        trace.push(TracePoint {
            iteration: it,
            energy: f,
            best: best.0,
        });
        if it >= CONVERGENCE_WINDOW {
            let before = trace[it - CONVERGENCE_WINDOW].energy;
            if (before - f).abs() <= config.convergence_tolerance * before.abs() {
                return Ok(finish(best, trace, it, StopReason::Converged));
            }
        }
    }
    let iterations = config.max_iterations;
    Ok(finish(best, trace, iterations, StopReason::MaxIterations))
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let fp = f(&x);
            x[i] = x0 - h;
            let fm = f(&x);
            x[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest coordinate deviation between two gradients, relative to the
/// larger of their max-norms (guarded below by 1e-12).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Compares the analytic gradient of `objective` at `point` against central
/// differences with step `step`.
pub fn check_gradient<F>(mut objective: F, point: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidInput(
            "finite-difference step must be positive".into(),
        ));
    }
    let (_, analytic) = objective(point)?;
    let mut failure = None;
    let numeric = central_differences(
        |x| match objective(x) {
            Ok((v, _)) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        point,
        step,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Writes `iteration,energy,best` rows.
pub fn write_trace_csv<W: Write>(writer: W, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in trace {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
