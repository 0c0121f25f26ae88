//! Augmented Lagrangian collision handling in latent space.
//!
//! Minimizes an objective `E(z)` subject to one scalar inequality `c(z) <= 0`
//! (for the neural constraint `c = prob - 0.5`). Trials are solved in lockstep
//! so objective and constraint evaluations are batched across them.
//!
//! The augmented term is the smooth Powell-Hestenes-Rockafellar form
//! `(max(0, mu + rho c)^2 - mu^2) / (2 rho)` with the update
//! `mu <- max(0, mu + rho c)`.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::Autoencoder;
use crate::detector::{Detector, DetectorError};
use crate::nn::{NnError, Tape};

#[derive(Debug, Error)]
pub enum HandlerError {
    #[error("non-finite {what} in trial {trial} at outer iteration {outer}")]
    NonFinite {
        what: &'static str,
        trial: usize,
        outer: usize,
    },
    #[error("latent code has length {got}, expected {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error("input mesh is not penetrating (pd = {0})")]
    NotPenetrating(f64),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Value and gradient of a function over latent rows. `trials` maps each row
/// to its trial index so per-trial data (targets) can be looked up.
pub trait Differentiable {
    fn eval(&self, trials: &[usize], z: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), HandlerError>;
}

/// `|z - z_user|^2 / 2`.
pub struct LatentTarget {
    pub targets: Array2<f64>,
}

impl Differentiable for LatentTarget {
    fn eval(&self, trials: &[usize], z: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), HandlerError> {
        let mut g = z.clone();
        for (mut row, &t) in g.rows_mut().into_iter().zip(trials) {
            row -= &self.targets.row(t);
        }
        let e = g.rows().into_iter().map(|r| 0.5 * r.dot(&r)).collect();
        Ok((e, g))
    }
}

/// `|V(decode(z)) - V_user|^2 / 2`. Vertices are `rest + features`, so this
/// equals half the squared feature distance to the user's features.
pub struct CartesianTarget<'a> {
    pub decoder: &'a Autoencoder,
    pub target_features: Array2<f64>,
}

impl Differentiable for CartesianTarget<'_> {
    fn eval(&self, trials: &[usize], z: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), HandlerError> {
        let mut tape = Tape::new(&self.decoder.params);
        let zi = tape.input(z.clone());
        let f = self.decoder.decode_on_tape(&mut tape, zi);
        tape.check_finite()?;
        let mut diff = tape.value(f).clone();
        for (mut row, &t) in diff.rows_mut().into_iter().zip(trials) {
            row -= &self.target_features.row(t);
        }
        let e = diff.rows().into_iter().map(|r| 0.5 * r.dot(&r)).collect();
        let g = tape.input_gradients(&[(f, diff)])?;
        Ok((e, g.wrt(zi).cloned().unwrap_or_else(|| Array2::zeros(z.dim()))))
    }
}

/// `c(z) = prob(z) - 0.5`.
pub struct NeuralConstraint<'a> {
    pub detector: &'a Detector,
}

impl Differentiable for NeuralConstraint<'_> {
    fn eval(&self, _trials: &[usize], z: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), HandlerError> {
        let (p, g) = self.detector.prob_grad(z)?;
        Ok((p.into_iter().map(|p| p - 0.5).collect(), g))
    }
}

/// `c(z) = |z - center| - radius`: feasible set is a closed ball.
pub struct DiskConstraint {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl DiskConstraint {
    /// Closed-form Euclidean projection onto the ball.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = z.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= self.radius {
            return z.to_vec();
        }
        self.center.iter().zip(&d).map(|(c, v)| c + v * self.radius / n).collect()
    }
}

impl Differentiable for DiskConstraint {
    fn eval(&self, _trials: &[usize], z: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), HandlerError> {
        let mut g = z.clone();
        let mut c = Vec::with_capacity(z.nrows());
        for mut row in g.rows_mut() {
            for (v, ctr) in row.iter_mut().zip(&self.center) {
                *v -= ctr;
            }
            let n = row.dot(&row).sqrt();
            c.push(n - self.radius);
            if n > 0.0 {
                row /= n;
            }
        }
        Ok((c, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlmConfig {
    pub rho_init: f64,
    pub rho_factor: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inner loop stops once the Lagrangian gradient norm falls below this.
    pub inner_tol: f64,
    /// `c <= feas_tol` counts as feasible.
    pub feas_tol: f64,
    /// Raise the penalty unless the violation shrank by this factor.
    pub violation_decrease: f64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            rho_init: 10.0,
            rho_factor: 10.0,
            rho_max: 1e6,
            max_outer: 20,
            max_inner: 500,
            inner_tol: 1e-6,
            feas_tol: 1e-6,
            violation_decrease: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub mu: f64,
    pub rho: f64,
    pub constraint: f64,
    pub objective: f64,
    pub inner_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmResult {
    pub z: Vec<f64>,
    /// `c(z) <= feas_tol` at exit.
    pub feasible: bool,
    /// Feasible with vanishing complementarity before the iteration cap.
    pub converged: bool,
    /// Infeasible exit: `z` is a best-effort iterate.
    pub best_effort: bool,
    pub initial_violation: f64,
    pub final_violation: f64,
    pub objective: f64,
    pub trace: Vec<OuterRecord>,
}

impl AlmResult {
    pub fn trace_json(&self) -> serde_json::Value {
        serde_json::json!({
            "feasible": self.feasible,
            "converged": self.converged,
            "outer": self.trace,
        })
    }
}

struct Trial {
    z: Vec<f64>,
    mu: f64,
    rho: f64,
    done: bool,
    last_violation: f64,
    result: AlmResult,
}

/// Lagrangian value and gradient at `z` rows for the given trials.
struct Eval {
    l: Vec<f64>,
    grad: Array2<f64>,
    e: Vec<f64>,
    c: Vec<f64>,
}

fn evaluate(
    objective: &dyn Differentiable,
    constraint: &dyn Differentiable,
    trials: &[usize],
    z: &Array2<f64>,
    mu: &[f64],
    rho: &[f64],
) -> Result<Eval, HandlerError> {
    let (e, ge) = objective.eval(trials, z)?;
    let (c, gc) = constraint.eval(trials, z)?;
    let mut grad = ge;
    let mut l = Vec::with_capacity(trials.len());
    for r in 0..trials.len() {
        let m = (mu[r] + rho[r] * c[r]).max(0.0);
        l.push(e[r] + (m * m - mu[r] * mu[r]) / (2.0 * rho[r]));
        if m > 0.0 {
            let mut row = grad.row_mut(r);
            row.scaled_add(m, &gc.row(r));
        }
    }
    Ok(Eval { l, grad, e, c })
}

fn stack(zs: &[&Vec<f64>]) -> Array2<f64> {
    let dim = zs.first().map_or(0, |z| z.len());
    let flat: Vec<f64> = zs.iter().flat_map(|z| z.iter().copied()).collect();
    Array2::from_shape_vec((zs.len(), dim), flat).expect("equal lengths")
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Solves `min E(z) s.t. c(z) <= 0` for each starting code.
pub fn alm_solve(
    starts: &[Vec<f64>],
    objective: &dyn Differentiable,
    constraint: &dyn Differentiable,
    cfg: &AlmConfig,
) -> Result<Vec<AlmResult>, HandlerError> {
    let n = starts.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = starts[0].len();
    if let Some(z) = starts.iter().find(|z| z.len() != dim) {
        return Err(HandlerError::LatentDim {
            got: z.len(),
            expected: dim,
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let init = evaluate(
        objective,
        constraint,
        &all,
        &stack(&starts.iter().collect::<Vec<_>>()),
        &vec![0.0; n],
        &vec![cfg.rho_init; n],
    )?;
    let mut trials: Vec<Trial> = starts
        .iter()
        .enumerate()
        .map(|(i, z)| Trial {
            z: z.clone(),
            mu: 0.0,
            rho: cfg.rho_init,
            done: false,
            last_violation: init.c[i].max(0.0),
            result: AlmResult {
                z: z.clone(),
                feasible: false,
                converged: false,
                best_effort: false,
                initial_violation: init.c[i].max(0.0),
                final_violation: init.c[i].max(0.0),
                objective: init.e[i],
                trace: Vec::new(),
            },
        })
        .collect();
    for outer in 1..=cfg.max_outer {
        let active: Vec<usize> = (0..n).filter(|&i| !trials[i].done).collect();
        if active.is_empty() {
            break;
        }
        let inner_steps = inner_solve(&mut trials, &active, objective, constraint, cfg, outer)?;
        // multiplier and penalty updates from the inner solutions
        let zs: Vec<&Vec<f64>> = active.iter().map(|&i| &trials[i].z).collect();
        let mus: Vec<f64> = active.iter().map(|&i| trials[i].mu).collect();
        let rhos: Vec<f64> = active.iter().map(|&i| trials[i].rho).collect();
        let ev = evaluate(objective, constraint, &active, &stack(&zs), &mus, &rhos)?;
        for (r, &i) in active.iter().enumerate() {
            let t = &mut trials[i];
            let c = ev.c[r];
            if !c.is_finite() || !ev.e[r].is_finite() {
                return Err(HandlerError::NonFinite {
                    what: "objective or constraint",
                    trial: i,
                    outer,
                });
            }
            t.result.trace.push(OuterRecord {
                outer,
                mu: t.mu,
                rho: t.rho,
                constraint: c,
                objective: ev.e[r],
                inner_steps: inner_steps[r],
            });
            let violation = c.max(0.0);
            t.mu = (t.mu + t.rho * c).max(0.0);
            let feasible = c <= cfg.feas_tol;
            let complementary = t.mu * c.abs() <= cfg.inner_tol.max(cfg.feas_tol);
            t.result.z = t.z.clone();
            t.result.feasible = feasible;
            t.result.final_violation = violation;
            t.result.objective = ev.e[r];
            if feasible && complementary {
                t.result.converged = true;
                t.done = true;
                continue;
            }
            if violation > cfg.violation_decrease * t.last_violation {
                t.rho = (t.rho * cfg.rho_factor).min(cfg.rho_max);
            }
            t.last_violation = violation;
        }
    }
    Ok(trials
        .into_iter()
        .map(|t| {
            let mut r = t.result;
            r.best_effort = !r.feasible;
            r
        })
        .collect())
}

/// Gradient descent with Barzilai-Borwein initial steps and Armijo
/// backtracking on the augmented Lagrangian, batched over `active` trials.
fn inner_solve(
    trials: &mut [Trial],
    active: &[usize],
    objective: &dyn Differentiable,
    constraint: &dyn Differentiable,
    cfg: &AlmConfig,
    outer: usize,
) -> Result<Vec<usize>, HandlerError> {
    let m = active.len();
    let mus: Vec<f64> = active.iter().map(|&i| trials[i].mu).collect();
    let rhos: Vec<f64> = active.iter().map(|&i| trials[i].rho).collect();
    let zs: Vec<&Vec<f64>> = active.iter().map(|&i| &trials[i].z).collect();
    let ev = evaluate(objective, constraint, active, &stack(&zs), &mus, &rhos)?;
    let mut val = ev.l.clone();
    let mut grad: Vec<Vec<f64>> = ev.grad.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let mut steps = vec![0usize; m];
    let mut alpha = vec![1.0f64; m];
    let mut prev: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; m];
    let mut running: Vec<usize> = (0..m).collect();
    for _ in 0..cfg.max_inner {
        running.retain(|&r| {
            let gn = grad[r].iter().map(|v| v * v).sum::<f64>().sqrt();
            gn > cfg.inner_tol
        });
        if running.is_empty() {
            break;
        }
        // Barzilai-Borwein step from the previous move
        for &r in &running {
            if let Some((s, y)) = &prev[r] {
                let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|v| v * v).sum();
                alpha[r] = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { alpha[r] * 2.0 };
            } else {
                let gn = grad[r].iter().map(|v| v * v).sum::<f64>().sqrt();
                alpha[r] = (1.0 / gn.max(1e-12)).min(1.0);
            }
        }
        let mut pending: Vec<usize> = running.clone();
        let mut accepted: Vec<(usize, Vec<f64>)> = Vec::new();
        for _ in 0..MAX_HALVINGS {
            if pending.is_empty() {
                break;
            }
            let cands: Vec<Vec<f64>> = pending
                .iter()
                .map(|&r| {
                    let z = &trials[active[r]].z;
                    z.iter().zip(&grad[r]).map(|(a, g)| a - alpha[r] * g).collect()
                })
                .collect();
            let idx: Vec<usize> = pending.iter().map(|&r| active[r]).collect();
            let pm: Vec<f64> = pending.iter().map(|&r| mus[r]).collect();
            let pr: Vec<f64> = pending.iter().map(|&r| rhos[r]).collect();
            let cand_ev = evaluate(objective, constraint, &idx, &stack(&cands.iter().collect::<Vec<_>>()), &pm, &pr)?;
            let mut still = Vec::new();
            for (k, &r) in pending.iter().enumerate() {
                let g2: f64 = grad[r].iter().map(|v| v * v).sum();
                let lv = cand_ev.l[k];
                if lv.is_finite() && lv <= val[r] - ARMIJO_C * alpha[r] * g2 {
                    accepted.push((r, cands[k].clone()));
                    val[r] = lv;
                    let new_g = cand_ev.grad.row(k).to_vec();
                    let s: Vec<f64> = cands[k].iter().zip(&trials[active[r]].z).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = new_g.iter().zip(&grad[r]).map(|(a, b)| a - b).collect();
                    prev[r] = Some((s, y));
                    grad[r] = new_g;
                } else {
                    alpha[r] *= 0.5;
                    still.push(r);
                }
            }
            pending = still;
        }
        for (r, z) in accepted {
            trials[active[r]].z = z;
            steps[r] += 1;
        }
        // trials that could not make Armijo progress are at a stationary point
        // to working precision
        for &r in &pending {
            grad[r].iter_mut().for_each(|g| *g = 0.0);
        }
        if val.iter().any(|v| !v.is_finite()) {
            let r = val.iter().position(|v| !v.is_finite()).unwrap();
            return Err(HandlerError::NonFinite {
                what: "augmented Lagrangian",
                trial: active[r],
                outer,
            });
        }
    }
    Ok(steps)
}

/// `(pd_user - max(pd_out, 0)) / pd_user` for a penetrating input.
pub fn relative_pd_reduction(pd_user: f64, pd_out: f64) -> Result<f64, HandlerError> {
    if !(pd_user > 0.0) {
        return Err(HandlerError::NotPenetrating(pd_user));
    }
    Ok((pd_user - pd_out.max(0.0)) / pd_user)
}
