use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{reconstruct, DisaggError, DisaggProblem, DisaggSolution, SolverDiagnostics};
use crate::optim::{minimize_nonneg, projected_gradient_norm, BfgsOptions, Minimum};
use crate::rng::{label_tag, stream_seed};

const START_STREAM: u64 = 0x5354_4152_5453;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Number of starting points, the first always `ω = 0`.
    pub starts: usize,
    /// Projected-gradient tolerance.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Minimum `1 − cos` between any two exemplar profiles.
    pub distinct_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            tol: 1e-6,
            max_iter: 500,
            seed: 0,
            distinct_floor: 0.01,
        }
    }
}

impl SolverConfig {
    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// `ω = 0` followed by random points whose monthly generation roughly covers
/// the diurnal deficit implied by the mixture.
fn starting_points(problem: &DisaggProblem<'_>, config: &SolverConfig) -> Vec<Vec<f64>> {
    let n = problem.exemplars().len();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        config.seed,
        label_tag(problem.customer_id()),
        START_STREAM,
    ));
    let deficit: f64 = problem
        .months()
        .iter()
        .map(|m| (problem.model().conditional_mean_diurnal(m.nocturnal) - m.net_diurnal).max(0.0))
        .sum();
    let mut starts = vec![vec![0.0; n]];
    while starts.len() < config.starts.max(1) {
        let direction: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let fraction = rng.random_range(0.25..1.5);
        let mass: f64 = problem
            .months()
            .iter()
            .map(|m| direction.iter().zip(&m.exemplar_diurnal).map(|(v, g)| v * g.abs()).sum::<f64>())
            .sum();
        let scale = if deficit > 0.0 && mass > 0.0 {
            fraction * deficit / mass
        } else {
            fraction
        };
        starts.push(direction.iter().map(|v| v * scale).collect());
    }
    starts
}

/// True when `candidate` should replace `incumbent`: convergence first, then value.
fn better(candidate: &Minimum, incumbent: &Minimum) -> bool {
    match (candidate.converged, incumbent.converged) {
        (true, false) => true,
        (false, true) => false,
        _ => candidate.value < incumbent.value,
    }
}

fn finish(
    problem: &DisaggProblem<'_>,
    weights: Vec<f64>,
    objective: f64,
    diagnostics: SolverDiagnostics,
) -> Result<DisaggSolution, DisaggError> {
    let (generation, native) = reconstruct(problem, &weights)?;
    let beta: Vec<f64> = native.values().iter().map(|p| p.min(0.0)).collect();
    let negative_native_count = native.values().iter().filter(|p| **p < 0.0).count();
    Ok(DisaggSolution {
        weights,
        beta,
        generation,
        native,
        objective,
        lambda: problem.lambda(),
        diagnostics,
        negative_native_count,
    })
}

fn negated(problem: &DisaggProblem<'_>, w: &[f64]) -> Result<(f64, Vec<f64>), DisaggError> {
    let (v, g) = problem.objective(w)?;
    Ok((-v, g.into_iter().map(|x| -x).collect()))
}

/// Maximizes the penalized objective over `ω ≥ 0` from several starts.
pub fn solve(problem: &DisaggProblem<'_>, config: &SolverConfig) -> Result<DisaggSolution, DisaggError> {
    problem.exemplars().check_distinct(config.distinct_floor)?;
    let opts = config.bfgs();
    let starts = starting_points(problem, config);
    let mut best: Option<Minimum> = None;
    let mut total_iterations = 0;
    let mut starts_converged = 0;
    for start in &starts {
        let m = minimize_nonneg(|w| negated(problem, w), start, &opts)?;
        total_iterations += m.iterations;
        starts_converged += usize::from(m.converged);
        if best.as_ref().is_none_or(|b| better(&m, b)) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        log::warn!(
            "customer `{}`: no start converged (projected gradient {:.3e})",
            problem.customer_id(),
            best.projected_gradient
        );
    }
    let diagnostics = SolverDiagnostics {
        iterations: best.iterations,
        total_iterations,
        converged: best.converged,
        kkt_residual: best.projected_gradient,
        starts: starts.len(),
        starts_converged,
    };
    finish(problem, best.x, -best.value, diagnostics)
}

/// Maximizes the log-likelihood subject to `P̂_h(τ) ≥ 0` for every hour.
///
/// Interior-point method: a sequence of log-barrier subproblems with a
/// shrinking barrier weight, each solved by projected BFGS from the previous
/// optimum. Only hours with negative net demand constrain `ω ≥ 0`.
pub fn solve_unpenalized(
    problem: &DisaggProblem<'_>,
    config: &SolverConfig,
) -> Result<DisaggSolution, DisaggError> {
    problem.exemplars().check_distinct(config.distinct_floor)?;
    let net = problem.net().values();
    // a·ω ≥ b with a = −G^E_h(τ) ≥ 0 and b = −P'_h(τ) > 0
    let mut rows: Vec<(&[f64], f64)> = Vec::with_capacity(problem.export_hours().len());
    let mut level: f64 = 0.0;
    for &tau in problem.export_hours() {
        let a = problem.exemplars().at_hour(tau);
        let total: f64 = a.iter().map(|v| -v).sum();
        if total <= 0.0 {
            return Err(DisaggError::Infeasible(tau));
        }
        let b = -net[tau];
        level = level.max(b / total);
        rows.push((a, b));
    }
    let n = problem.exemplars().len();
    let feasible_floor = vec![1.01 * level + f64::MIN_POSITIVE; n];

    let barrier = |w: &[f64], mu: f64| -> Result<(f64, Vec<f64>), DisaggError> {
        let mut log_barrier = 0.0;
        let mut grad_barrier = vec![0.0; n];
        for (a, b) in &rows {
            let slack = -a.iter().zip(w).map(|(g, x)| g * x).sum::<f64>() - b;
            if !(slack > 0.0) {
                return Ok((f64::INFINITY, vec![0.0; n]));
            }
            log_barrier += slack.ln();
            for (gb, g) in grad_barrier.iter_mut().zip(a.iter()) {
                *gb += -g / slack;
            }
        }
        let (ll, grad) = problem.log_likelihood(w)?;
        let value = -ll - mu * log_barrier;
        let g = grad.iter().zip(&grad_barrier).map(|(gl, gb)| -gl - mu * gb).collect();
        Ok((value, g))
    };

    let opts = config.bfgs();
    let final_mu = 1e-8 / rows.len().max(1) as f64;
    let mut best: Option<(Vec<f64>, f64, Minimum)> = None;
    let mut total_iterations = 0;
    let mut starts_converged = 0;
    let starts = starting_points(problem, config);
    for start in &starts {
        let mut x: Vec<f64> = start.iter().zip(&feasible_floor).map(|(s, f)| s.max(*f)).collect();
        let mut mu = if rows.is_empty() { 0.0 } else { 1.0 };
        let last = loop {
            let m = minimize_nonneg(|w| barrier(w, mu), &x, &opts)?;
            total_iterations += m.iterations;
            x = m.x.clone();
            if mu <= final_mu {
                break m;
            }
            mu = (mu * 0.1).max(final_mu);
        };
        starts_converged += usize::from(last.converged);
        let (ll, _) = problem.log_likelihood(&x)?;
        let replace = match &best {
            None => true,
            Some((_, best_ll, best_min)) => match (last.converged, best_min.converged) {
                (true, false) => true,
                (false, true) => false,
                _ => ll > *best_ll,
            },
        };
        if replace {
            best = Some((x, ll, last));
        }
    }
    let (weights, ll, last) = best.expect("at least one start");
    let (_, grad) = problem.log_likelihood(&weights)?;
    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
    let diagnostics = SolverDiagnostics {
        iterations: last.iterations,
        total_iterations,
        converged: last.converged,
        kkt_residual: if rows.is_empty() {
            projected_gradient_norm(&weights, &neg)
        } else {
            last.projected_gradient
        },
        starts: starts.len(),
        starts_converged,
    };
    finish(problem, weights, ll, diagnostics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub negative_native_count: usize,
    /// Sum of squared negative native-demand estimates.
    pub violation: f64,
    pub converged: bool,
}

/// Solves the same customer across a ladder of penalty weights.
pub fn sweep_lambda(
    problem: &DisaggProblem<'_>,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<LambdaPoint>, DisaggError> {
    lambdas
        .iter()
        .map(|&lambda| {
            let sol = solve(&problem.with_lambda(lambda)?, config)?;
            Ok(LambdaPoint {
                lambda,
                violation: sol.beta.iter().map(|b| b * b).sum(),
                weights: sol.weights,
                objective: sol.objective,
                negative_native_count: sol.negative_native_count,
                converged: sol.diagnostics.converged,
            })
        })
        .collect()
}
