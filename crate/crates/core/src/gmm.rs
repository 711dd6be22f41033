//! Bivariate Gaussian mixture over monthly (nocturnal, diurnal) native demand.
//!
//! Components are stored as `(σ_n, σ_d, ρ)` rather than raw covariance
//! matrices; that is also the serialized form, so a model survives a JSON
//! round trip bit for bit.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_seed;
use crate::series::MonthlyPair;

/// Lowest log-density ever reported; values below it are clamped and flagged.
pub const LOG_DENSITY_FLOOR: f64 = -1.0e300;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("{got} samples cannot support {components} components (need at least {needed})")]
    TooFewSamples {
        components: usize,
        needed: usize,
        got: usize,
    },
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("non-finite evaluation point ({0}, {1})")]
    NonFinitePoint(f64, f64),
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("samples are degenerate (covariance below the regularization floor)")]
    Degenerate,
    #[error("no component counts to try")]
    NoCandidates,
}

const MIN_SAMPLES_PER_COMPONENT: usize = 10;

/// One bivariate normal component in `(mean, σ_n, σ_d, ρ)` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub sigma_n: f64,
    pub sigma_d: f64,
    pub rho: f64,
}

impl Component {
    pub fn from_covariance(weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        let sigma_n = cov[0][0].sqrt();
        let sigma_d = cov[1][1].sqrt();
        Self {
            weight,
            mean,
            sigma_n,
            sigma_d,
            rho: cov[0][1] / (sigma_n * sigma_d),
        }
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = self.rho * self.sigma_n * self.sigma_d;
        [[self.sigma_n * self.sigma_n, c], [c, self.sigma_d * self.sigma_d]]
    }

    /// `ln g(z)` and its partials with respect to `(n, d)`.
    fn log_density_grad(&self, n: f64, d: f64) -> (f64, f64, f64) {
        let one_minus = 1.0 - self.rho * self.rho;
        let u = (n - self.mean[0]) / self.sigma_n;
        let v = (d - self.mean[1]) / self.sigma_d;
        let q = (u * u + v * v - 2.0 * self.rho * u * v) / one_minus;
        let log_norm = -(2.0 * PI).ln() - self.sigma_n.ln() - self.sigma_d.ln() - 0.5 * one_minus.ln();
        let grad_n = -(u - self.rho * v) / (one_minus * self.sigma_n);
        let grad_d = -(v - self.rho * u) / (one_minus * self.sigma_d);
        (log_norm - 0.5 * q, grad_n, grad_d)
    }

    fn validate(&self) -> Result<(), GmmError> {
        let ok = self.weight.is_finite()
            && (0.0..=1.0).contains(&self.weight)
            && self.mean.iter().all(|m| m.is_finite())
            && self.sigma_n.is_finite()
            && self.sigma_n > 0.0
            && self.sigma_d.is_finite()
            && self.sigma_d > 0.0
            && self.rho.abs() < 1.0;
        if ok {
            Ok(())
        } else {
            Err(GmmError::Invalid(format!("bad component {self:?}")))
        }
    }
}

/// Log-density at a point with its derivative along the diurnal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensity {
    pub value: f64,
    pub grad_d: f64,
    /// Set when the true value fell below [`LOG_DENSITY_FLOOR`].
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct GmmModel {
    components: Vec<Component>,
}

impl GmmModel {
    pub fn new(components: Vec<Component>) -> Result<Self, GmmError> {
        if components.is_empty() {
            return Err(GmmError::Invalid("no components".into()));
        }
        for c in &components {
            c.validate()?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::Invalid(format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn pdf(&self, nocturnal: f64, diurnal: f64) -> Result<f64, GmmError> {
        Ok(self.log_pdf_and_grad_d(nocturnal, diurnal)?.value.exp())
    }

    pub fn log_pdf_and_grad_d(&self, nocturnal: f64, diurnal: f64) -> Result<LogDensity, GmmError> {
        if !(nocturnal.is_finite() && diurnal.is_finite()) {
            return Err(GmmError::NonFinitePoint(nocturnal, diurnal));
        }
        let mut terms = [(0.0, 0.0); 16];
        let mut heap = Vec::new();
        let terms: &mut [(f64, f64)] = if self.components.len() <= terms.len() {
            &mut terms[..self.components.len()]
        } else {
            heap.resize(self.components.len(), (0.0, 0.0));
            &mut heap
        };
        let mut max = f64::NEG_INFINITY;
        for (t, c) in terms.iter_mut().zip(&self.components) {
            let (lg, _, gd) = c.log_density_grad(nocturnal, diurnal);
            *t = (c.weight.ln() + lg, gd);
            if t.0 > max {
                max = t.0;
            }
        }
        if !max.is_finite() {
            return Ok(LogDensity {
                value: LOG_DENSITY_FLOOR,
                grad_d: 0.0,
                floored: true,
            });
        }
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for &(l, g) in terms.iter() {
            let w = (l - max).exp();
            sum += w;
            weighted += w * g;
        }
        let value = max + sum.ln();
        let grad_d = weighted / sum;
        if value < LOG_DENSITY_FLOOR {
            return Ok(LogDensity {
                value: LOG_DENSITY_FLOOR,
                grad_d,
                floored: true,
            });
        }
        Ok(LogDensity {
            value,
            grad_d,
            floored: false,
        })
    }

    /// `E[diurnal | nocturnal]` under the mixture.
    pub fn conditional_mean_diurnal(&self, nocturnal: f64) -> f64 {
        let mut logs: Vec<(f64, f64)> = self
            .components
            .iter()
            .map(|c| {
                let z = (nocturnal - c.mean[0]) / c.sigma_n;
                let log_marginal = c.weight.ln() - c.sigma_n.ln() - 0.5 * z * z;
                let cond = c.mean[1] + c.rho * c.sigma_d * z;
                (log_marginal, cond)
            })
            .collect();
        let max = logs.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (l, m) in logs.drain(..) {
            let w = (l - max).exp();
            num += w * m;
            den += w;
        }
        num / den
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<[f64; 2]> {
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = &self.components[self.components.len() - 1];
                for c in &self.components {
                    acc += c.weight;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let n = pick.mean[0] + pick.sigma_n * e1;
                let d = pick.mean[1]
                    + pick.sigma_d * (pick.rho * e1 + (1.0 - pick.rho * pick.rho).sqrt() * e2);
                [n, d]
            })
            .collect()
    }

    /// Average log-density over a set of points.
    pub fn mean_log_density(&self, points: &[[f64; 2]]) -> Result<f64, GmmError> {
        let mut total = 0.0;
        for p in points {
            total += self.log_pdf_and_grad_d(p[0], p[1])?.value;
        }
        Ok(total / points.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Serialize, Deserialize)]
struct CovarianceDoc {
    sigma_n: f64,
    sigma_d: f64,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    #[serde(rename = "S")]
    components: usize,
    weights: Vec<f64>,
    means: Vec<[f64; 2]>,
    covariances: Vec<CovarianceDoc>,
}

impl From<GmmModel> for ModelDoc {
    fn from(m: GmmModel) -> Self {
        ModelDoc {
            components: m.components.len(),
            weights: m.components.iter().map(|c| c.weight).collect(),
            means: m.components.iter().map(|c| c.mean).collect(),
            covariances: m
                .components
                .iter()
                .map(|c| CovarianceDoc {
                    sigma_n: c.sigma_n,
                    sigma_d: c.sigma_d,
                    rho: c.rho,
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDoc> for GmmModel {
    type Error = GmmError;

    fn try_from(doc: ModelDoc) -> Result<Self, Self::Error> {
        let s = doc.components;
        if doc.weights.len() != s || doc.means.len() != s || doc.covariances.len() != s {
            return Err(GmmError::Invalid(format!("S = {s} but array lengths differ")));
        }
        let components = doc
            .weights
            .into_iter()
            .zip(doc.means)
            .zip(doc.covariances)
            .map(|((weight, mean), c)| Component {
                weight,
                mean,
                sigma_n: c.sigma_n,
                sigma_d: c.sigma_d,
                rho: c.rho,
            })
            .collect();
        GmmModel::new(components)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub requested: usize,
    pub components: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every E-step of the final run.
    pub log_likelihood_trace: Vec<f64>,
    pub bic: Vec<BicScore>,
    pub restarts: usize,
    pub warnings: Vec<String>,
}

pub fn points(pairs: &[MonthlyPair]) -> Vec<[f64; 2]> {
    pairs.iter().map(MonthlyPair::point).collect()
}

fn free_parameters(components: usize) -> usize {
    6 * components - 1
}

pub fn bic(log_likelihood: f64, components: usize, samples: usize) -> f64 {
    -2.0 * log_likelihood + free_parameters(components) as f64 * (samples as f64).ln()
}

fn sample_covariance(samples: &[[f64; 2]]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = samples.len() as f64;
    let mut mean = [0.0; 2];
    for s in samples {
        mean[0] += s[0];
        mean[1] += s[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut cov = [[0.0; 2]; 2];
    for s in samples {
        let a = s[0] - mean[0];
        let b = s[1] - mean[1];
        cov[0][0] += a * a;
        cov[0][1] += a * b;
        cov[1][1] += b * b;
    }
    cov[0][0] /= n;
    cov[0][1] /= n;
    cov[1][1] /= n;
    cov[1][0] = cov[0][1];
    (mean, cov)
}

fn min_eigenvalue(cov: &[[f64; 2]; 2]) -> f64 {
    let half_trace = 0.5 * (cov[0][0] + cov[1][1]);
    let half_diff = 0.5 * (cov[0][0] - cov[1][1]);
    half_trace - (half_diff * half_diff + cov[0][1] * cov[0][1]).sqrt()
}

/// k-means++ seeding followed by a few Lloyd sweeps; returns hard labels.
fn seed_labels(samples: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut nearest: Vec<f64> = samples.iter().map(|s| dist2(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = samples.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..samples.len())
        };
        centers.push(samples[next]);
        for (s, best) in samples.iter().zip(nearest.iter_mut()) {
            *best = best.min(dist2(s, &samples[next]));
        }
    }

    let mut labels = vec![0; samples.len()];
    for _ in 0..20 {
        let mut changed = false;
        for (s, label) in samples.iter().zip(labels.iter_mut()) {
            let best = (0..k)
                .min_by(|&a, &b| dist2(s, &centers[a]).total_cmp(&dist2(s, &centers[b])))
                .unwrap();
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for (s, &l) in samples.iter().zip(&labels) {
            sums[l][0] += s[0];
            sums[l][1] += s[1];
            sums[l][2] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

struct EmState {
    components: Vec<Component>,
}

impl EmState {
    fn from_labels(samples: &[[f64; 2]], labels: &[usize], k: usize, floor: f64) -> Self {
        let (global_mean, global_cov) = sample_covariance(samples);
        let n = samples.len() as f64;
        let mut components = Vec::with_capacity(k);
        for j in 0..k {
            let members: Vec<[f64; 2]> = samples
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == j)
                .map(|(s, _)| *s)
                .collect();
            let (mean, cov) = if members.len() >= 3 {
                let (m, c) = sample_covariance(&members);
                if min_eigenvalue(&c) >= floor {
                    (m, c)
                } else {
                    (m, global_cov)
                }
            } else if let Some(first) = members.first() {
                (*first, global_cov)
            } else {
                (global_mean, global_cov)
            };
            let weight = if k == 1 { 1.0 } else { (members.len() as f64 + 1.0) / (n + k as f64) };
            components.push(Component::from_covariance(weight, mean, cov));
        }
        Self { components }
    }

    /// E-step: fills `resp` (row-major, samples × components) and returns the log-likelihood.
    fn expectation(&self, samples: &[[f64; 2]], resp: &mut [f64]) -> f64 {
        let k = self.components.len();
        let mut ll = 0.0;
        for (s, row) in samples.iter().zip(resp.chunks_mut(k)) {
            let mut max = f64::NEG_INFINITY;
            for (r, c) in row.iter_mut().zip(&self.components) {
                *r = c.weight.ln() + c.log_density_grad(s[0], s[1]).0;
                max = max.max(*r);
            }
            let mut sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                sum += *r;
            }
            for r in row.iter_mut() {
                *r /= sum;
            }
            ll += max + sum.ln();
        }
        ll
    }

    /// M-step. Returns the index of a collapsed component, if any.
    fn maximization(&mut self, samples: &[[f64; 2]], resp: &[f64], floor: f64) -> Option<usize> {
        let k = self.components.len();
        let n = samples.len() as f64;
        let mut updated = Vec::with_capacity(k);
        for j in 0..k {
            let mut nk = 0.0;
            let mut mean = [0.0; 2];
            for (s, row) in samples.iter().zip(resp.chunks(k)) {
                let r = row[j];
                nk += r;
                mean[0] += r * s[0];
                mean[1] += r * s[1];
            }
            if nk <= 1e-9 * n {
                return Some(j);
            }
            mean[0] /= nk;
            mean[1] /= nk;
            let mut cov = [[0.0; 2]; 2];
            for (s, row) in samples.iter().zip(resp.chunks(k)) {
                let r = row[j];
                let a = s[0] - mean[0];
                let b = s[1] - mean[1];
                cov[0][0] += r * a * a;
                cov[0][1] += r * a * b;
                cov[1][1] += r * b * b;
            }
            cov[0][0] /= nk;
            cov[0][1] /= nk;
            cov[1][1] /= nk;
            cov[1][0] = cov[0][1];
            if !(min_eigenvalue(&cov) >= floor) {
                return Some(j);
            }
            updated.push(Component::from_covariance(nk / n, mean, cov));
        }
        self.components = updated;
        None
    }

    fn drop_component(&mut self, j: usize) {
        self.components.remove(j);
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        for c in &mut self.components {
            c.weight /= total;
        }
    }
}

/// Fits an `components`-component mixture by expectation-maximization.
///
/// Stops when the relative log-likelihood change drops below `opts.tol` or
/// after `opts.max_iter` E-steps. A component whose covariance falls below the
/// floor `1e-6 · tr(Σ_sample) / 2` is removed with a warning and the fit
/// continues with one component fewer.
pub fn fit_em(
    samples: &[[f64; 2]],
    components: usize,
    opts: &EmOptions,
) -> Result<(GmmModel, FitReport), GmmError> {
    if components == 0 {
        return Err(GmmError::Invalid("zero components requested".into()));
    }
    let needed = components * MIN_SAMPLES_PER_COMPONENT;
    if samples.len() < needed {
        return Err(GmmError::TooFewSamples {
            components,
            needed,
            got: samples.len(),
        });
    }
    if let Some(i) = samples.iter().position(|s| !(s[0].is_finite() && s[1].is_finite())) {
        return Err(GmmError::NonFiniteSample(i));
    }
    let (_, global_cov) = sample_covariance(samples);
    let floor = 1e-6 * (global_cov[0][0] + global_cov[1][1]) / 2.0;
    if !(min_eigenvalue(&global_cov) >= floor) || floor <= 0.0 {
        return Err(GmmError::Degenerate);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let labels = seed_labels(samples, components, &mut rng);
    let mut state = EmState::from_labels(samples, &labels, components, floor);

    let mut warnings = Vec::new();
    let mut trace = Vec::new();
    let mut resp = vec![0.0; samples.len() * state.components.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        resp.resize(samples.len() * state.components.len(), 0.0);
        let ll = state.expectation(samples, &mut resp);
        iterations += 1;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= opts.tol * ll.abs().max(1.0) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations == opts.max_iter {
            break;
        }
        if let Some(j) = state.maximization(samples, &resp, floor) {
            warnings.push(format!(
                "component {j} of {} collapsed below covariance floor; refitting with {}",
                state.components.len(),
                state.components.len() - 1
            ));
            log::debug!("{}", warnings.last().unwrap());
            if state.components.len() == 1 {
                return Err(GmmError::Degenerate);
            }
            state.drop_component(j);
            trace.clear();
        }
    }

    let log_likelihood = *trace.last().expect("at least one E-step");
    let model = GmmModel::new(state.components)?;
    let report = FitReport {
        log_likelihood,
        iterations,
        converged,
        log_likelihood_trace: trace,
        bic: vec![BicScore {
            requested: components,
            components: model.len(),
            log_likelihood,
            bic: bic(log_likelihood, model.len(), samples.len()),
        }],
        restarts: 1,
        warnings,
    };
    Ok((model, report))
}

/// Runs [`fit_em`] for every candidate component count with `restarts` seeded
/// initializations each, keeping the best likelihood per count and returning
/// the count with minimum BIC.
pub fn fit_select(
    samples: &[[f64; 2]],
    candidates: &[usize],
    restarts: usize,
    opts: &EmOptions,
) -> Result<(GmmModel, FitReport), GmmError> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(GmmError::NoCandidates);
    }
    let supported = samples.len() / MIN_SAMPLES_PER_COMPONENT;
    let skipped: Vec<usize> = candidates.iter().copied().filter(|&s| s > supported).collect();
    if skipped.len() == candidates.len() {
        return Err(GmmError::TooFewSamples {
            components: candidates[0],
            needed: candidates[0] * MIN_SAMPLES_PER_COMPONENT,
            got: samples.len(),
        });
    }
    candidates.retain(|&s| s <= supported);
    let restarts = restarts.max(1);

    let jobs: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|&s| (0..restarts).map(move |r| (s, r)))
        .collect();
    let results: Vec<Result<(GmmModel, FitReport), GmmError>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let run = EmOptions {
                seed: stream_seed(opts.seed, s as u64, r as u64),
                ..*opts
            };
            fit_em(samples, s, &run)
        })
        .collect();

    let mut best_per_count: Vec<(GmmModel, FitReport)> = Vec::new();
    let mut results = results.into_iter();
    for _ in &candidates {
        let mut best: Option<(GmmModel, FitReport)> = None;
        for _ in 0..restarts {
            let fit = results.next().expect("one result per job")?;
            if best
                .as_ref()
                .is_none_or(|(_, b)| fit.1.log_likelihood > b.log_likelihood)
            {
                best = Some(fit);
            }
        }
        best_per_count.push(best.expect("restarts >= 1"));
    }

    let bic_scores: Vec<BicScore> = best_per_count
        .iter()
        .zip(&candidates)
        .map(|((model, report), &requested)| BicScore {
            requested,
            components: model.len(),
            log_likelihood: report.log_likelihood,
            bic: bic(report.log_likelihood, model.len(), samples.len()),
        })
        .collect();
    let chosen = (0..bic_scores.len())
        .min_by(|&a, &b| bic_scores[a].bic.total_cmp(&bic_scores[b].bic))
        .expect("non-empty");
    let (model, mut report) = best_per_count.swap_remove(chosen);
    report.bic = bic_scores;
    report.restarts = restarts;
    if !skipped.is_empty() {
        report.warnings.push(format!(
            "{} samples support at most {supported} components; skipped candidates {skipped:?}",
            samples.len()
        ));
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> GmmModel {
        GmmModel::new(vec![Component {
            weight: 1.0,
            mean: [0.0, 0.0],
            sigma_n: 1.0,
            sigma_d: 1.0,
            rho: 0.0,
        }])
        .unwrap()
    }

    fn two_blob(seed: u64, n: usize) -> (GmmModel, Vec<[f64; 2]>) {
        let truth = GmmModel::new(vec![
            Component {
                weight: 0.3,
                mean: [100.0, 150.0],
                sigma_n: 10.0,
                sigma_d: 12.0,
                rho: 0.6,
            },
            Component {
                weight: 0.7,
                mean: [200.0, 260.0],
                sigma_n: 10.0,
                sigma_d: 12.0,
                rho: 0.8,
            },
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = truth.sample(&mut rng, n);
        (truth, pts)
    }

    /// Bivariate normal density in its correlation form, written out longhand.
    fn density_longhand(c: &Component, n: f64, d: f64) -> f64 {
        let (sn, sd, r) = (c.sigma_n, c.sigma_d, c.rho);
        let a = (n - c.mean[0]).powi(2) / (sn * sn);
        let b = (d - c.mean[1]).powi(2) / (sd * sd);
        let x = 2.0 * r * (n - c.mean[0]) * (d - c.mean[1]) / (sn * sd);
        (-(a + b - x) / (2.0 * (1.0 - r * r))).exp() / (2.0 * PI * sn * sd * (1.0 - r * r).sqrt())
    }

    #[test]
    fn standard_normal_peak() {
        let p = standard().pdf(0.0, 0.0).unwrap();
        assert!((p - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!((p - 0.159155).abs() < 1e-6);
    }

    #[test]
    fn equal_mixture_is_average_of_components() {
        let (truth, _) = two_blob(1, 0);
        let comps: Vec<Component> = truth
            .components()
            .iter()
            .map(|c| Component { weight: 0.5, ..*c })
            .collect();
        let m = GmmModel::new(comps.clone()).unwrap();
        for &(n, d) in &[(110.0, 160.0), (150.0, 200.0), (210.0, 250.0)] {
            let want = 0.5 * density_longhand(&comps[0], n, d) + 0.5 * density_longhand(&comps[1], n, d);
            let got = m.pdf(n, d).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn unit_gaussian_gradient_is_minus_d() {
        let m = standard();
        for d in [-3.0, -0.5, 0.0, 1.25, 4.0] {
            let ld = m.log_pdf_and_grad_d(0.0, d).unwrap();
            assert!((ld.grad_d + d).abs() < 1e-14);
        }
    }

    #[test]
    fn mirrored_mixture_has_zero_gradient_at_center() {
        let c = Component {
            weight: 0.5,
            mean: [0.0, 2.0],
            sigma_n: 1.0,
            sigma_d: 1.5,
            rho: 0.0,
        };
        let m = GmmModel::new(vec![c, Component { mean: [0.0, 8.0], ..c }]).unwrap();
        assert!(m.log_pdf_and_grad_d(0.3, 5.0).unwrap().grad_d.abs() < 1e-15);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        assert!(standard().pdf(f64::NAN, 0.0).is_err());
        assert!(standard().log_pdf_and_grad_d(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        let ld = standard().log_pdf_and_grad_d(0.0, 1e4).unwrap();
        assert!(ld.value.is_finite());
        assert!(!ld.floored);
        let far = standard().log_pdf_and_grad_d(1e200, 1e200).unwrap();
        assert!(far.floored);
        assert_eq!(far.value, LOG_DENSITY_FLOOR);
    }

    #[test]
    fn single_component_fit_is_sample_moments() {
        let (_, pts) = two_blob(3, 400);
        let (model, report) = fit_em(&pts, 1, &EmOptions::default()).unwrap();
        let (mean, cov) = sample_covariance(&pts);
        let c = model.components()[0];
        let got = c.covariance();
        for i in 0..2 {
            assert!((c.mean[i] - mean[i]).abs() <= 1e-10 * mean[i].abs());
            for j in 0..2 {
                assert!((got[i][j] - cov[i][j]).abs() <= 1e-10 * cov[i][j].abs());
            }
        }
        assert!(report.converged);
    }

    #[test]
    fn too_few_samples_rejected() {
        let (_, pts) = two_blob(3, 25);
        assert_eq!(
            fit_em(&pts, 3, &EmOptions::default()).unwrap_err(),
            GmmError::TooFewSamples {
                components: 3,
                needed: 30,
                got: 25
            }
        );
    }

    #[test]
    fn collinear_samples_are_degenerate() {
        let pts: Vec<[f64; 2]> = (0..100).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert_eq!(fit_em(&pts, 1, &EmOptions::default()).unwrap_err(), GmmError::Degenerate);
    }

    #[test]
    fn em_trace_never_decreases() {
        let (_, pts) = two_blob(5, 600);
        for s in 1..=4 {
            for seed in 0..3 {
                let (_, report) = fit_em(&pts, s, &EmOptions { seed, ..Default::default() }).unwrap();
                for w in report.log_likelihood_trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "S={s}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn single_candidate_returns_that_count() {
        let (_, pts) = two_blob(9, 500);
        let (model, report) = fit_select(&pts, &[4], 2, &EmOptions::default()).unwrap();
        assert_eq!(model.len(), 4);
        assert_eq!(report.bic.len(), 1);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (_, pts) = two_blob(4, 500);
        let (model, _) = fit_em(&pts, 2, &EmOptions::default()).unwrap();
        let text = model.to_json();
        assert!(text.contains("\"S\": 2"));
        let back = GmmModel::from_json(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn malformed_json_rejected() {
        let bad = r#"{"S":2,"weights":[1.0],"means":[[0,0]],"covariances":[{"sigma_n":1,"sigma_d":1,"rho":0}]}"#;
        assert!(GmmModel::from_json(bad).is_err());
        let bad_rho = r#"{"S":1,"weights":[1.0],"means":[[0,0]],"covariances":[{"sigma_n":1,"sigma_d":1,"rho":1.0}]}"#;
        assert!(GmmModel::from_json(bad_rho).is_err());
    }

    #[test]
    fn conditional_mean_of_single_gaussian() {
        let c = Component {
            weight: 1.0,
            mean: [10.0, 20.0],
            sigma_n: 2.0,
            sigma_d: 4.0,
            rho: 0.5,
        };
        let m = GmmModel::new(vec![c]).unwrap();
        // μ_d + ρ σ_d / σ_n (n - μ_n)
        assert!((m.conditional_mean_diurnal(12.0) - 22.0).abs() < 1e-12);
    }

    #[test]
    fn unsupported_candidates_are_skipped() {
        let (_, pts) = two_blob(6, 35);
        let (model, report) = fit_select(&pts, &[1, 2, 8], 1, &EmOptions::default()).unwrap();
        assert!(model.len() <= 2);
        assert_eq!(report.bic.len(), 2);
        assert!(report.warnings.iter().any(|w| w.contains("[8]")), "{:?}", report.warnings);
        let err = fit_select(&pts[..15], &[2, 3], 1, &EmOptions::default()).unwrap_err();
        assert!(matches!(err, GmmError::TooFewSamples { components: 2, .. }));
    }
}
