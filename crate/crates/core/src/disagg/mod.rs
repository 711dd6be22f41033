//! Per-customer disaggregation: exemplar weights by penalized maximum
//! likelihood, then hourly reconstruction of generation and native demand.
//!
//! For a weight vector `ω ≥ 0` the monthly diurnal native demand is
//! `P'_{m,d} − ω·G^E_m`, scored against the fitted mixture together with the
//! month's nocturnal demand. The per-hour soft margin `β` is eliminated in
//! closed form: for fixed `ω`, the best `β_τ` under `β ≤ 0, P̂_h ≥ β` is
//! `min(0, P̂_h(τ))`, so the penalty becomes a squared hinge on negative
//! native-demand estimates.

mod solve;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{GmmError, GmmModel};
use crate::series::{aggregate_monthly, DayNightPartition, HourlySeries, Role, SeriesError, YearMonth};

pub use solve::{solve, solve_unpenalized, sweep_lambda, LambdaPoint, SolverConfig};

#[derive(Debug, Error, PartialEq)]
pub enum DisaggError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("no exemplars supplied")]
    NoExemplars,
    #[error("exemplar `{id}` is not a non-positive generation series (hour {index} = {value})")]
    NotNegated { id: String, index: usize, value: f64 },
    #[error("{got} orientation labels for {expected} exemplars")]
    OrientationCount { expected: usize, got: usize },
    #[error("exemplars {i} and {j} are not distinguishable (profile distance {distance:.3e} < {floor})")]
    NotDistinct {
        i: usize,
        j: usize,
        distance: f64,
        floor: f64,
    },
    #[error("exemplar monthly sums missing for {0}")]
    MissingExemplarMonth(YearMonth),
    #[error("customer `{id}` has {months} complete month(s); at least 2 are required")]
    TooFewMonths { id: String, months: usize },
    #[error("penalty weight {0} must be finite and non-negative")]
    BadLambda(f64),
    #[error("weights must be finite and non-negative, got {0:?}")]
    BadWeights(Vec<f64>),
    #[error("{expected} weights expected, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("month term {index} has {got} exemplar sums, expected {expected}")]
    TermShape { index: usize, expected: usize, got: usize },
    #[error("non-finite objective contribution at month {0}")]
    NonFiniteMonth(usize),
    #[error("non-finite objective contribution at hour {0}")]
    NonFiniteHour(usize),
    #[error("density evaluation failed at month {month}: {source}")]
    Density {
        month: usize,
        #[source]
        source: GmmError,
    },
    #[error("hard-constrained variant infeasible: net demand at hour {0} is negative while every exemplar is zero")]
    Infeasible(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    East,
    South,
    West,
    #[default]
    Unknown,
}

/// Observable PV generation series used as basis profiles.
#[derive(Debug, Clone)]
pub struct ExemplarSet {
    series: Vec<HourlySeries>,
    orientations: Vec<Orientation>,
    /// Hour-major matrix: `hourly[τ * N + i]`.
    hourly: Vec<f64>,
    monthly: BTreeMap<YearMonth, Vec<f64>>,
}

impl ExemplarSet {
    /// Series must already be in the internal (non-positive) convention and
    /// share one hourly horizon.
    pub fn new(series: Vec<HourlySeries>, orientations: Vec<Orientation>) -> Result<Self, DisaggError> {
        let first = series.first().ok_or(DisaggError::NoExemplars)?;
        if orientations.len() != series.len() {
            return Err(DisaggError::OrientationCount {
                expected: series.len(),
                got: orientations.len(),
            });
        }
        for s in &series {
            first.ensure_same_horizon(s)?;
            if s.role() != Role::Generation {
                return Err(SeriesError::WrongRole {
                    id: s.customer_id().to_string(),
                    expected: Role::Generation,
                    actual: s.role(),
                }
                .into());
            }
            if let Some((index, &value)) = s.values().iter().enumerate().find(|(_, v)| **v > 0.0) {
                return Err(DisaggError::NotNegated {
                    id: s.customer_id().to_string(),
                    index,
                    value,
                });
            }
        }
        let n = series.len();
        let hours = first.len();
        let mut hourly = vec![0.0; hours * n];
        for (i, s) in series.iter().enumerate() {
            for (t, v) in s.values().iter().enumerate() {
                hourly[t * n + i] = *v;
            }
        }
        Ok(Self {
            series,
            orientations,
            hourly,
            monthly: BTreeMap::new(),
        })
    }

    pub fn unlabeled(series: Vec<HourlySeries>) -> Result<Self, DisaggError> {
        let n = series.len();
        Self::new(series, vec![Orientation::Unknown; n])
    }

    /// Attaches per-month diurnal sums `G^E_{m,i}` under `partition`.
    pub fn with_partition(mut self, partition: &DayNightPartition) -> Result<Self, DisaggError> {
        let mut monthly: BTreeMap<YearMonth, Vec<f64>> = BTreeMap::new();
        for s in &self.series {
            for pair in aggregate_monthly(s, partition)?.pairs {
                monthly.entry(pair.month).or_default().push(pair.diurnal);
            }
        }
        self.monthly = monthly;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series(&self) -> &[HourlySeries] {
        &self.series
    }

    pub fn orientations(&self) -> &[Orientation] {
        &self.orientations
    }

    pub fn hours(&self) -> usize {
        self.series[0].len()
    }

    /// Generation of every exemplar at hour `τ`.
    pub fn at_hour(&self, tau: usize) -> &[f64] {
        let n = self.len();
        &self.hourly[tau * n..(tau + 1) * n]
    }

    pub fn monthly(&self, month: YearMonth) -> Option<&[f64]> {
        self.monthly.get(&month).map(Vec::as_slice)
    }

    pub fn monthly_sums(&self) -> &BTreeMap<YearMonth, Vec<f64>> {
        &self.monthly
    }

    /// Every exemplar multiplied by `factor > 0`, monthly sums included.
    pub fn scaled(&self, factor: f64) -> Result<Self, DisaggError> {
        let series = self
            .series
            .iter()
            .map(|s| s.with_values(s.values().iter().map(|v| v * factor).collect(), Role::Generation))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Self::new(series, self.orientations.clone())?;
        out.monthly = self
            .monthly
            .iter()
            .map(|(k, v)| (*k, v.iter().map(|x| x * factor).collect()))
            .collect();
        Ok(out)
    }

    /// `1 − cos(g_i, g_j)` for every pair of hourly profiles.
    pub fn pairwise_distances(&self) -> Vec<(usize, usize, f64)> {
        let norms: Vec<f64> = self
            .series
            .iter()
            .map(|s| s.values().iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let dot: f64 = self.series[i]
                    .values()
                    .iter()
                    .zip(self.series[j].values())
                    .map(|(a, b)| a * b)
                    .sum();
                let denom = norms[i] * norms[j];
                let distance = if denom > 0.0 { 1.0 - dot / denom } else { 0.0 };
                out.push((i, j, distance));
            }
        }
        out
    }

    pub fn check_distinct(&self, floor: f64) -> Result<(), DisaggError> {
        match self.pairwise_distances().into_iter().find(|p| p.2 < floor) {
            Some((i, j, distance)) => Err(DisaggError::NotDistinct { i, j, distance, floor }),
            None => Ok(()),
        }
    }
}

/// One month's data entering the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthTerm {
    /// `P_{m,n}`, read from night-time net demand.
    pub nocturnal: f64,
    /// `P'_{m,d}`.
    pub net_diurnal: f64,
    /// `G^E_m`, non-positive.
    pub exemplar_diurnal: Vec<f64>,
}

/// Penalized maximum-likelihood instance for one customer.
#[derive(Debug, Clone)]
pub struct DisaggProblem<'a> {
    net: HourlySeries,
    months: Vec<MonthTerm>,
    exemplars: &'a ExemplarSet,
    model: &'a GmmModel,
    lambda: f64,
    /// Hours with negative net demand: the only ones where the hinge can be
    /// active for `ω ≥ 0`.
    export_hours: Vec<usize>,
}

impl<'a> DisaggProblem<'a> {
    /// Builds the monthly terms by aggregating `net` under `partition` and
    /// pairing each month with the exemplars' diurnal sums.
    pub fn new(
        net: &HourlySeries,
        exemplars: &'a ExemplarSet,
        model: &'a GmmModel,
        partition: &DayNightPartition,
        lambda: f64,
    ) -> Result<Self, DisaggError> {
        let agg = aggregate_monthly(net, partition)?;
        let months = agg
            .pairs
            .iter()
            .map(|p| {
                let sums = exemplars
                    .monthly(p.month)
                    .ok_or(DisaggError::MissingExemplarMonth(p.month))?;
                Ok(MonthTerm {
                    nocturnal: p.nocturnal,
                    net_diurnal: p.diurnal,
                    exemplar_diurnal: sums.to_vec(),
                })
            })
            .collect::<Result<Vec<_>, DisaggError>>()?;
        Self::from_terms(net.clone(), months, exemplars, model, lambda)
    }

    /// Builds an instance from explicit monthly terms (any period length).
    pub fn from_terms(
        net: HourlySeries,
        months: Vec<MonthTerm>,
        exemplars: &'a ExemplarSet,
        model: &'a GmmModel,
        lambda: f64,
    ) -> Result<Self, DisaggError> {
        if net.role() != Role::Net {
            return Err(SeriesError::WrongRole {
                id: net.customer_id().to_string(),
                expected: Role::Net,
                actual: net.role(),
            }
            .into());
        }
        net.ensure_same_horizon(&exemplars.series()[0])?;
        if months.len() < 2 {
            return Err(DisaggError::TooFewMonths {
                id: net.customer_id().to_string(),
                months: months.len(),
            });
        }
        for (index, m) in months.iter().enumerate() {
            if m.exemplar_diurnal.len() != exemplars.len() {
                return Err(DisaggError::TermShape {
                    index,
                    expected: exemplars.len(),
                    got: m.exemplar_diurnal.len(),
                });
            }
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(DisaggError::BadLambda(lambda));
        }
        let export_hours = net
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < 0.0)
            .map(|(t, _)| t)
            .collect();
        Ok(Self {
            net,
            months,
            exemplars,
            model,
            lambda,
            export_hours,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, DisaggError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(DisaggError::BadLambda(lambda));
        }
        Ok(Self {
            lambda,
            ..self.clone()
        })
    }

    pub fn customer_id(&self) -> &str {
        self.net.customer_id()
    }

    pub fn net(&self) -> &HourlySeries {
        &self.net
    }

    pub fn months(&self) -> &[MonthTerm] {
        &self.months
    }

    pub fn exemplars(&self) -> &ExemplarSet {
        self.exemplars
    }

    pub fn model(&self) -> &GmmModel {
        self.model
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub(crate) fn export_hours(&self) -> &[usize] {
        &self.export_hours
    }

    fn check_weights(&self, weights: &[f64]) -> Result<(), DisaggError> {
        if weights.len() != self.exemplars.len() {
            return Err(DisaggError::WeightCount {
                expected: self.exemplars.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(DisaggError::BadWeights(weights.to_vec()));
        }
        Ok(())
    }

    /// Monthly log-likelihood `Σ_m ln f(P_{m,n}, P'_{m,d} − ω·G^E_m)` and its gradient.
    pub fn log_likelihood(&self, weights: &[f64]) -> Result<(f64, Vec<f64>), DisaggError> {
        self.check_weights(weights)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; weights.len()];
        for (index, m) in self.months.iter().enumerate() {
            let generated: f64 = weights.iter().zip(&m.exemplar_diurnal).map(|(w, g)| w * g).sum();
            let ld = self
                .model
                .log_pdf_and_grad_d(m.nocturnal, m.net_diurnal - generated)
                .map_err(|source| DisaggError::Density { month: index, source })?;
            if !(ld.value.is_finite() && ld.grad_d.is_finite()) {
                return Err(DisaggError::NonFiniteMonth(index));
            }
            value += ld.value;
            for (g, e) in grad.iter_mut().zip(&m.exemplar_diurnal) {
                *g -= ld.grad_d * e;
            }
        }
        Ok((value, grad))
    }

    /// Reduced objective: log-likelihood minus `(λ/2) Σ_τ min(0, P̂_h(τ))²`.
    pub fn objective(&self, weights: &[f64]) -> Result<(f64, Vec<f64>), DisaggError> {
        let (mut value, mut grad) = self.log_likelihood(weights)?;
        if self.lambda == 0.0 {
            return Ok((value, grad));
        }
        let net = self.net.values();
        for &tau in &self.export_hours {
            let row = self.exemplars.at_hour(tau);
            let generated: f64 = weights.iter().zip(row).map(|(w, g)| w * g).sum();
            let native = net[tau] - generated;
            if native < 0.0 {
                value -= 0.5 * self.lambda * native * native;
                for (g, e) in grad.iter_mut().zip(row) {
                    *g += self.lambda * native * e;
                }
            }
        }
        if !value.is_finite() {
            let bad = self.export_hours.first().copied().unwrap_or(0);
            return Err(DisaggError::NonFiniteHour(bad));
        }
        Ok((value, grad))
    }

    /// Hours whose native-demand estimate would be negative under `weights`.
    pub fn negative_native_count(&self, weights: &[f64]) -> usize {
        let net = self.net.values();
        self.export_hours
            .iter()
            .filter(|&&tau| {
                let generated: f64 = weights.iter().zip(self.exemplars.at_hour(tau)).map(|(w, g)| w * g).sum();
                net[tau] - generated < 0.0
            })
            .count()
    }
}

/// `Ĝ_h = Σ_i ω_i G^E_{h,i}` and `P̂_h = P'_h − Ĝ_h`.
pub fn reconstruct(
    problem: &DisaggProblem<'_>,
    weights: &[f64],
) -> Result<(HourlySeries, HourlySeries), DisaggError> {
    problem.check_weights(weights)?;
    let exemplars = problem.exemplars();
    let generation: Vec<f64> = (0..exemplars.hours())
        .map(|tau| {
            weights
                .iter()
                .zip(exemplars.at_hour(tau))
                .map(|(w, g)| w * g)
                .sum::<f64>()
                // keeps zero generation as +0.0 for clean output
                + 0.0
        })
        .collect();
    let native: Vec<f64> = problem
        .net()
        .values()
        .iter()
        .zip(&generation)
        .map(|(p, g)| p - g)
        .collect();
    Ok((
        problem.net().with_values(generation, Role::Generation)?,
        problem.net().with_values(native, Role::Native)?,
    ))
}

/// Result of one customer's disaggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct DisaggSolution {
    pub weights: Vec<f64>,
    /// Per-hour soft margin `min(0, P̂_h)`; all zero for the hard-constrained variant.
    pub beta: Vec<f64>,
    pub generation: HourlySeries,
    pub native: HourlySeries,
    pub objective: f64,
    pub lambda: f64,
    pub diagnostics: SolverDiagnostics,
    pub negative_native_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub total_iterations: usize,
    pub converged: bool,
    /// Projected-gradient infinity norm at the returned weights.
    pub kkt_residual: f64,
    pub starts: usize,
    pub starts_converged: usize,
}
