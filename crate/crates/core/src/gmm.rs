//! Diagonal-covariance Gaussian mixtures fitted by expectation-maximization,
//! seeded from Lloyd's k-means. The mixture density is the novelty score:
//! windows far from every known unit pattern get a low log-density.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const KMEANS_MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub variance: Vec<f64>,
}

impl GaussianComponent {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mu), var) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - mu;
            acc += (TAU * var).ln() + d * d / var;
        }
        -0.5 * acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    pub components: Vec<GaussianComponent>,
    /// Unit pattern each component stands for, once labeled.
    pub component_pattern: Vec<Option<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub variance_floor: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iter: 200, tol: 1e-6, variance_floor: 1e-6, restarts: 3, seed: 0 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::argument("max_iter must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::argument("tol must be > 0"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::argument("variance_floor must be > 0"));
        }
        Ok(())
    }
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::argument(format!("dimension mismatch: model has {}, input has {}", self.dim, x.len())));
        }
        Ok(())
    }

    /// `ln π_k + ln N(x | μ_k, Σ_k)` for every component.
    fn weighted_log_densities(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.weight.ln() + c.log_density(x)).collect()
    }

    /// Log of the mixture density, evaluated with log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(log_sum_exp(&self.weighted_log_densities(x)))
    }

    /// Posterior probability of each component given `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let lw = self.weighted_log_densities(x);
        let lse = log_sum_exp(&lw);
        let mut r: Vec<f64> = lw.iter().map(|l| (l - lse).exp()).collect();
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= s);
        Ok(r)
    }

    pub fn log_likelihood(&self, points: &[Vec<f64>]) -> Result<f64> {
        points.iter().map(|p| self.log_pdf(p)).sum()
    }

    /// Assigns each component the label carrying the most responsibility
    /// mass among `labels`. Ties go to the lexicographically smallest label.
    pub fn label_components(&mut self, points: &[Vec<f64>], labels: &[String]) -> Result<()> {
        if points.len() != labels.len() {
            return Err(Error::argument("points and labels differ in length"));
        }
        let mut mass: Vec<BTreeMap<&str, f64>> = vec![BTreeMap::new(); self.k()];
        for (p, l) in points.iter().zip(labels) {
            for (k, r) in self.responsibilities(p)?.into_iter().enumerate() {
                *mass[k].entry(l.as_str()).or_default() += r;
            }
        }
        self.component_pattern = mass
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .fold(None, |best: Option<(&str, f64)>, (l, w)| match best {
                        Some((_, bw)) if bw >= w => best,
                        _ => Some((l, w)),
                    })
                    .map(|(l, _)| l.to_string())
            })
            .collect();
        Ok(())
    }

    fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::argument("K must be >= 1"));
    }
    if points.len() < k {
        return Err(Error::argument(format!("need at least K={k} points, got {}", points.len())));
    }
    let d = points[0].len();
    if d == 0 {
        return Err(Error::argument("points must have at least one dimension"));
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::argument(format!("point {i} has dimension {}, expected {d}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(d)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Total squared distance to the assigned centroid after each iteration.
    pub distortion_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn distortion(&self) -> f64 {
        self.distortion_trace.last().copied().unwrap_or(0.0)
    }
}

/// Lloyd's algorithm from `k` distinct seeded points (k-means++ weighting).
/// Empty clusters take over the point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let d = check_points(points, k)?;
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(i);
                    if target < *w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every remaining point duplicates a seed; take any unused index.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, &points[next]));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();

    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let dd = sq_dist(p, cen);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[assignments[a]])
                        .total_cmp(&sq_dist(&points[b], &centroids[assignments[b]]))
                })
                .expect("n >= k leaves a cluster with two or more members");
            counts[assignments[far]] -= 1;
            assignments[far] = empty;
            counts[empty] = 1;
            changed = true;
        }

        let mut sums = vec![vec![0.0; d]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            centroids[c] = s.into_iter().map(|v| v / counts[c] as f64).collect();
        }
        trace.push(points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        if !changed {
            break;
        }
    }
    Ok(KMeansResult { centroids, assignments, distortion_trace: trace })
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Training log-likelihood before each M-step, one trace per restart.
    pub traces: Vec<Vec<f64>>,
    /// Index into `traces` of the returned run.
    pub best: usize,
    pub converged: bool,
}

impl GmmFit {
    pub fn trace(&self) -> &[f64] {
        &self.traces[self.best]
    }

    pub fn log_likelihood(&self) -> f64 {
        *self.trace().last().expect("at least one E-step")
    }
}

fn floored_variance(points: &[&Vec<f64>], mean: &[f64], floor: f64) -> Vec<f64> {
    let n = points.len() as f64;
    (0..mean.len())
        .map(|j| {
            let v = points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n;
            v.max(floor)
        })
        .collect()
}

fn mean_of(points: &[&Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for p in points {
        for (a, v) in m.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= points.len() as f64);
    m
}

fn init_from_kmeans(points: &[Vec<f64>], k: usize, floor: f64, seed: u64) -> Result<GmmModel> {
    let d = points[0].len();
    let km = kmeans(points, k, seed)?;
    let n = points.len() as f64;
    let components = (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> =
                points.iter().zip(&km.assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            let mean = km.centroids[c].clone();
            GaussianComponent {
                weight: members.len() as f64 / n,
                variance: floored_variance(&members, &mean, floor),
                mean,
            }
        })
        .collect();
    debug_assert!(d > 0);
    Ok(GmmModel { dim: d, components, component_pattern: vec![None; k] })
}

/// One component per vocabulary entry, started from the mean and variance of
/// the points carrying that label, weighted by label frequency.
pub fn init_from_labels(
    points: &[Vec<f64>],
    labels: &[String],
    vocabulary: &[String],
    variance_floor: f64,
) -> Result<GmmModel> {
    let d = check_points(points, vocabulary.len())?;
    if points.len() != labels.len() {
        return Err(Error::argument("points and labels differ in length"));
    }
    let n = points.len() as f64;
    let mut components = Vec::with_capacity(vocabulary.len());
    for name in vocabulary {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| *l == name).map(|(p, _)| p).collect();
        if members.is_empty() {
            return Err(Error::argument(format!("no points labeled {name:?}")));
        }
        let mean = mean_of(&members, d);
        components.push(GaussianComponent {
            weight: members.len() as f64 / n,
            variance: floored_variance(&members, &mean, variance_floor),
            mean,
        });
    }
    Ok(GmmModel { dim: d, components, component_pattern: vocabulary.iter().cloned().map(Some).collect() })
}

/// Runs EM from `init` until the relative log-likelihood change drops below
/// `cfg.tol` or `cfg.max_iter` M-steps have run. Returns the final model and
/// the per-iteration training log-likelihood.
fn run_em(points: &[Vec<f64>], mut model: GmmModel, cfg: &EmConfig) -> (GmmModel, Vec<f64>, bool) {
    let n = points.len();
    let k = model.k();
    let d = model.dim;
    let mut resp = vec![vec![0.0; k]; n];
    let mut trace = Vec::with_capacity(cfg.max_iter + 1);
    let mut converged = false;

    for iter in 0..=cfg.max_iter {
        // E-step
        let mut ll = 0.0;
        for (p, r) in points.iter().zip(resp.iter_mut()) {
            let lw = model.weighted_log_densities(p);
            let lse = log_sum_exp(&lw);
            ll += lse;
            for (rk, l) in r.iter_mut().zip(&lw) {
                *rk = (l - lse).exp();
            }
        }
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            trace.push(ll);
            if (ll - prev).abs() < cfg.tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if iter == cfg.max_iter {
            break;
        }

        // M-step
        for (c, comp) in model.components.iter_mut().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if !(nk > 0.0) {
                // A component with no mass keeps its parameters; the weight
                // stays positive but negligible.
                comp.weight = f64::MIN_POSITIVE;
                continue;
            }
            let mut mean = vec![0.0; d];
            for (p, r) in points.iter().zip(&resp) {
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += r[c] * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; d];
            for (p, r) in points.iter().zip(&resp) {
                for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                    *s += r[c] * (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s = (*s / nk).max(cfg.variance_floor));
            if mean.iter().chain(&var).all(|v| v.is_finite()) {
                comp.mean = mean;
                comp.variance = var;
            }
            comp.weight = (nk / n as f64).max(f64::MIN_POSITIVE);
        }
        let s = model.weight_sum();
        model.components.iter_mut().for_each(|c| c.weight /= s);
    }
    (model, trace, converged)
}

/// Fits a `k`-component mixture, keeping the best of `cfg.restarts` seeded
/// runs by final log-likelihood.
pub fn em_fit(points: &[Vec<f64>], k: usize, cfg: &EmConfig) -> Result<GmmFit> {
    cfg.validate()?;
    check_points(points, k)?;
    let mut fit: Option<GmmFit> = None;
    for r in 0..cfg.restarts.max(1) {
        let init = init_from_kmeans(points, k, cfg.variance_floor, cfg.seed.wrapping_add(r as u64))?;
        let (model, trace, converged) = run_em(points, init, cfg);
        let ll = *trace.last().expect("trace is non-empty");
        match fit.as_mut() {
            None => fit = Some(GmmFit { model, traces: vec![trace], best: 0, converged }),
            Some(f) => {
                f.traces.push(trace);
                if ll > f.log_likelihood() {
                    f.best = f.traces.len() - 1;
                    f.model = model;
                    f.converged = converged;
                }
            }
        }
    }
    Ok(fit.expect("at least one restart"))
}

/// EM from a caller-supplied starting model (single run).
pub fn em_refine(points: &[Vec<f64>], init: GmmModel, cfg: &EmConfig) -> Result<GmmFit> {
    cfg.validate()?;
    let d = check_points(points, init.k())?;
    if d != init.dim {
        return Err(Error::argument(format!("points have dimension {d}, model {}", init.dim)));
    }
    let labels = init.component_pattern.clone();
    let (mut model, trace, converged) = run_em(points, init, cfg);
    model.component_pattern = labels;
    Ok(GmmFit { model, traces: vec![trace], best: 0, converged })
}

/// Grows `model` by one component for a newly confirmed pattern and refits
/// on the union of the stored labeled points and `new_points`. Component
/// labels are reassigned from the refitted responsibilities.
pub fn add_component(
    model: &GmmModel,
    stored: &[(Vec<f64>, String)],
    new_points: &[Vec<f64>],
    label: &str,
    cfg: &EmConfig,
) -> Result<GmmFit> {
    if new_points.len() < 2 {
        return Err(Error::argument(format!("a new component needs at least 2 points, got {}", new_points.len())));
    }
    let d = check_points(new_points, 1)?;
    if d != model.dim {
        return Err(Error::argument(format!("new points have dimension {d}, model {}", model.dim)));
    }
    let n_old = stored.len() as f64;
    let n_new = new_points.len() as f64;
    let total = n_old + n_new;
    let refs: Vec<&Vec<f64>> = new_points.iter().collect();
    let mean = mean_of(&refs, d);
    let mut init = model.clone();
    for c in &mut init.components {
        c.weight *= n_old / total;
    }
    init.components.push(GaussianComponent {
        weight: n_new / total,
        variance: floored_variance(&refs, &mean, cfg.variance_floor),
        mean,
    });
    init.component_pattern.push(Some(label.to_string()));
    if n_old == 0.0 {
        // Nothing stored: the old components carry no data.
        let w = 1.0 / init.k() as f64;
        init.components.iter_mut().for_each(|c| c.weight = w);
    }

    let mut points: Vec<Vec<f64>> = stored.iter().map(|(p, _)| p.clone()).collect();
    points.extend(new_points.iter().cloned());
    let mut labels: Vec<String> = stored.iter().map(|(_, l)| l.clone()).collect();
    labels.extend(std::iter::repeat_n(label.to_string(), new_points.len()));

    let mut fit = em_refine(&points, init, cfg)?;
    fit.model.label_components(&points, &labels)?;
    Ok(fit)
}
