//! Analytic Gaussian-mixture ground truth and Monte-Carlo estimates of the
//! multi-arm assignment confidence `C^A_m(k)`.
//!
//! Class indices are zero-based in this API; reports and files use 1-based
//! labels.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::simplex::{SimplexVector, SIMPLEX_TOL};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A mixture of diagonal Gaussians with prior weights `p(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    weights: SimplexVector,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// On-disk form of a [`GaussianMixtureSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GaussianMixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k < 2 {
            return domain(format!("mixture needs at least 2 components, got {k}"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return domain("mixture weights must be strictly positive");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return domain(format!("mixture weights sum to {total}, expected 1"));
        }
        if means.len() != k || variances.len() != k {
            return domain(format!(
                "{k} weights but {} means and {} variance vectors",
                means.len(),
                variances.len()
            ));
        }
        let d = means[0].len();
        if d == 0 {
            return domain("component dimension must be at least 1");
        }
        for (i, (m, v)) in means.iter().zip(&variances).enumerate() {
            if m.len() != d || v.len() != d {
                return domain(format!("component {} has inconsistent dimension", i + 1));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return domain(format!("component {} has a non-finite mean", i + 1));
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return domain(format!("component {} has a non-positive variance", i + 1));
            }
        }
        for i in 0..k {
            for j in i + 1..k {
                if means[i] == means[j] {
                    return domain(format!("components {} and {} share a mean", i + 1, j + 1));
                }
            }
        }
        Ok(Self {
            weights: SimplexVector::new(weights)?,
            means,
            variances,
        })
    }

    /// Equal-weight mixture with unit variances.
    pub fn isotropic(means: Vec<Vec<f64>>) -> Result<Self> {
        let k = means.len();
        let d = means.first().map_or(0, |m| m.len());
        Self::new(vec![1.0 / k as f64; k], means, vec![vec![1.0; d]; k])
    }

    pub fn from_file(file: MixtureFile) -> Result<Self> {
        Self::new(file.weights, file.means, file.variances)
    }

    pub fn to_file(&self) -> MixtureFile {
        MixtureFile {
            weights: self.weights.parts().to_vec(),
            means: self.means.clone(),
            variances: self.variances.clone(),
        }
    }

    /// Parses the TOML form: `weights = [...]`, `means = [[...], ...]`,
    /// `variances = [[...], ...]`.
    pub fn from_toml_str(src: &str, path: &Path) -> Result<Self> {
        let file: MixtureFile = crate::harness::config::parse_toml(src, path)?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src, path)
    }

    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &SimplexVector {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k]
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.n_components() {
            return domain(format!(
                "class index {} outside 1..={}",
                k + 1,
                self.n_components()
            ));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                op: "mixture density",
                detail: format!("point has {} coordinates, mixture has {}", x.len(), self.dim()),
            });
        }
        Ok(())
    }

    fn component_logpdf_unchecked(&self, k: usize, x: &[f64]) -> f64 {
        diag_gaussian_logpdf(x, &self.means[k], &self.variances[k])
    }

    /// `log p(x | c = k)`.
    pub fn component_logpdf(&self, k: usize, x: &[f64]) -> Result<f64> {
        self.check_class(k)?;
        self.check_dim(x)?;
        Ok(self.component_logpdf_unchecked(k, x))
    }

    fn joint_logs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_components())
            .map(|k| self.weights.parts()[k].ln() + self.component_logpdf_unchecked(k, x))
            .collect()
    }

    /// `log p(x)`, log-sum-exp stabilized.
    pub fn mixture_logpdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(log_sum_exp(&self.joint_logs(x)))
    }

    /// `p(c | x)`.
    pub fn posterior(&self, x: &[f64]) -> Result<SimplexVector> {
        self.check_dim(x)?;
        SimplexVector::from_log_weights(&self.joint_logs(x))
    }

    /// `n` i.i.d. draws from component `m`.
    pub fn sample_class<R: Rng + ?Sized>(&self, m: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.check_class(m)?;
        Ok((0..n).map(|_| self.draw(m, rng)).collect())
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<f64> {
        self.means[m]
            .iter()
            .zip(&self.variances[m])
            .map(|(mu, v)| mu + v.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect()
    }

    /// Closed-form `D_KL(p(x|m) ‖ p(x|n))` between diagonal Gaussians.
    pub fn component_kl(&self, m: usize, n: usize) -> Result<f64> {
        self.check_class(m)?;
        self.check_class(n)?;
        Ok(diag_gaussian_kl(
            &self.means[m],
            &self.variances[m],
            &self.means[n],
            &self.variances[n],
        ))
    }

    /// Mean and variance of the under-exploring augmenter kernel
    /// `p(x_a | x_b, c = k)`: the source is pulled toward the class mean by
    /// `concentration` and the remaining spread is chosen so that a class-`k`
    /// source yields a class-`k` marginal. `concentration = 1` is a fresh draw
    /// from the component; `concentration = 0` returns the source itself.
    pub fn augment_kernel(&self, k: usize, source: &[f64], concentration: f64) -> (Vec<f64>, Vec<f64>) {
        let keep = 1.0 - concentration;
        let spread = 1.0 - keep * keep;
        let mean = source
            .iter()
            .zip(&self.means[k])
            .map(|(x, mu)| keep * x + concentration * mu)
            .collect();
        let var = self.variances[k].iter().map(|v| spread * v).collect();
        (mean, var)
    }
}

pub(crate) fn diag_gaussian_logpdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        let d = xi - mi;
        acc += LN_2PI + vi.ln() + d * d / vi;
    }
    -0.5 * acc
}

fn diag_gaussian_kl(m0: &[f64], v0: &[f64], m1: &[f64], v1: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..m0.len() {
        let d = m1[i] - m0[i];
        acc += v0[i] / v1[i] + d * d / v1[i] - 1.0 + (v1[i] / v0[i]).ln();
    }
    0.5 * acc
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A Monte-Carlo estimate in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl ConfidenceEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
        }
    }

    /// `|a − b|` measured in combined standard errors.
    pub fn z_distance(&self, other: &Self) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.value - other.value).abs() / se.max(f64::MIN_POSITIVE)
    }

    /// `self − other > sigmas · (combined standard error)`.
    pub fn exceeds(&self, other: &Self, sigmas: f64) -> bool {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        self.value - other.value > sigmas * se
    }
}

/// Agreement threshold, in combined standard errors, for Monte-Carlo identities.
pub const MC_SIGMAS: f64 = 3.0;

fn check_mc_args(spec: &GaussianMixtureSpec, classes: &[usize], arms: usize, n_samples: usize) -> Result<()> {
    for &c in classes {
        spec.check_class(c)?;
    }
    if arms < 1 {
        return domain("number of arms must be at least 1");
    }
    if n_samples < 100 {
        return domain(format!("need at least 100 Monte-Carlo samples, got {n_samples}"));
    }
    Ok(())
}

/// Per-draw `log p(x|c=k) − log p(x)` for `x ~ p(x|m)`, for every `k`.
/// Returned as `samples[i][k]`.
fn log_ratio_draws<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let x = spec.draw(m, rng);
            let comp: Vec<f64> = (0..spec.n_components())
                .map(|k| spec.component_logpdf_unchecked(k, &x))
                .collect();
            let joint: Vec<f64> = comp
                .iter()
                .zip(spec.weights.parts())
                .map(|(l, w)| l + w.ln())
                .collect();
            let lp = log_sum_exp(&joint);
            comp.into_iter().map(|l| l - lp).collect()
        })
        .collect()
}

/// `A · E_{p(x|m)}[log p(x|c=k) − log p(x)] + log p(c=k)` from `n_samples`
/// draws. The result is exactly affine in `arms` for a fixed random stream.
pub fn confidence_analytic_mc<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    m: usize,
    k: usize,
    arms: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<ConfidenceEstimate> {
    check_mc_args(spec, &[m, k], arms, n_samples)?;
    let draws = log_ratio_draws(spec, m, n_samples, rng);
    let col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
    Ok(scale_single_arm(
        ConfidenceEstimate::from_samples(&col),
        arms,
        spec.weights.parts()[k].ln(),
    ))
}

fn scale_single_arm(base: ConfidenceEstimate, arms: usize, log_prior: f64) -> ConfidenceEstimate {
    let a = arms as f64;
    ConfidenceEstimate {
        value: a * base.value + log_prior,
        std_error: a * base.std_error,
        n_samples: base.n_samples,
    }
}

/// [`confidence_analytic_mc`] for every `k` at once, sharing the draws.
pub fn confidence_analytic_all<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    m: usize,
    arms: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<ConfidenceEstimate>> {
    check_mc_args(spec, &[m], arms, n_samples)?;
    let draws = log_ratio_draws(spec, m, n_samples, rng);
    Ok((0..spec.n_components())
        .map(|k| {
            let col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            scale_single_arm(
                ConfidenceEstimate::from_samples(&col),
                arms,
                spec.weights.parts()[k].ln(),
            )
        })
        .collect())
}

/// Direct estimate of `E_{p(X|m)}[log p(c_1 = … = c_A = k | X)]` over sets of
/// `A` independent class-`m` copies, with the joint posterior factorized as
/// `p(c=k) Π_a p(x_a|c=k) / Π_a p(x_a)`.
pub fn confidence_direct_mc<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    m: usize,
    k: usize,
    arms: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<ConfidenceEstimate> {
    check_mc_args(spec, &[m, k], arms, n_samples)?;
    let log_prior = spec.weights.parts()[k].ln();
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            let mut acc = log_prior;
            for _ in 0..arms {
                let x = spec.draw(m, rng);
                acc += spec.component_logpdf_unchecked(k, &x) - log_sum_exp(&spec.joint_logs(&x));
            }
            acc
        })
        .collect();
    Ok(ConfidenceEstimate::from_samples(&samples))
}

/// Smallest real bound from the minimum-arm condition:
/// `max_m max(ρ(m) / D(m), 1)` with `ρ(m) = max_{n≠m} log(p(n)/p(m))` and
/// `D(m) = min_{n≠m} D_KL(p(x|m) ‖ p(x|n))`.
pub fn min_arms_bound(spec: &GaussianMixtureSpec) -> f64 {
    let k = spec.n_components();
    let w = spec.weights.parts();
    let mut bound: f64 = 1.0;
    for m in 0..k {
        let mut rho = f64::NEG_INFINITY;
        let mut d = f64::INFINITY;
        for n in (0..k).filter(|n| *n != m) {
            rho = rho.max((w[n] / w[m]).ln());
            d = d.min(diag_gaussian_kl(
                &spec.means[m],
                &spec.variances[m],
                &spec.means[n],
                &spec.variances[n],
            ));
        }
        bound = bound.max((rho / d).max(1.0));
    }
    bound
}

/// Smallest integer number of arms strictly above [`min_arms_bound`].
pub fn min_arms(spec: &GaussianMixtureSpec) -> usize {
    min_arms_bound(spec).floor() as usize + 1
}

/// `C^A_m(m) = (A − 1) · D_KL(p(x_a|x_b, m) ‖ p(x_a|x_b)) + C^1_m(m)` for an
/// augmenter that under-explores: `x_a` is drawn from
/// [`GaussianMixtureSpec::augment_kernel`] around a class-`m` source `x_b`,
/// and `p(x_a|x_b) = Σ_k p(c=k) p(x_a|x_b, c=k)`.
///
/// `concentration = 0` returns the single-arm confidence exactly (same draws
/// as [`confidence_analytic_mc`] with one arm).
pub fn underexploration_confidence<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    m: usize,
    arms: usize,
    concentration: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<ConfidenceEstimate> {
    check_mc_args(spec, &[m], arms, n_samples)?;
    if !(0.0..=1.0).contains(&concentration) {
        return domain(format!("concentration {concentration} outside [0, 1]"));
    }
    if concentration == 0.0 {
        return confidence_analytic_mc(spec, m, m, 1, n_samples, rng);
    }
    let k = spec.n_components();
    let log_w: Vec<f64> = spec.weights.parts().iter().map(|w| w.ln()).collect();
    let extra = (arms - 1) as f64;
    let samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            let xb = spec.draw(m, rng);
            let joint = spec.joint_logs(&xb);
            let single = spec.component_logpdf_unchecked(m, &xb) - log_sum_exp(&joint) + log_w[m];
            if arms == 1 {
                return single;
            }
            let (mean_m, var_m) = spec.augment_kernel(m, &xb, concentration);
            let xa: Vec<f64> = mean_m
                .iter()
                .zip(&var_m)
                .map(|(mu, v)| mu + v.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            let kernel_logs: Vec<f64> = (0..k)
                .map(|j| {
                    let (mj, vj) = spec.augment_kernel(j, &xb, concentration);
                    diag_gaussian_logpdf(&xa, &mj, &vj)
                })
                .collect();
            let marginal = log_sum_exp(
                &kernel_logs
                    .iter()
                    .zip(&log_w)
                    .map(|(l, w)| l + w)
                    .collect::<Vec<_>>(),
            );
            extra * (kernel_logs[m] - marginal) + single
        })
        .collect();
    Ok(ConfidenceEstimate::from_samples(&samples))
}

/// One `(m, A, k)` line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    /// True class, 1-based.
    pub m: usize,
    pub arms: usize,
    /// Scored class, 1-based.
    pub k: usize,
    pub estimate: f64,
    pub std_error: f64,
    /// `C^A_m(m) > C^A_m(n)` for every `n ≠ m` at this `A`.
    pub argmax_correct: bool,
    /// On `k = m` rows after the first `A`: the increase over the previous
    /// `A` exceeds three combined standard errors.
    pub monotone: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub rows: Vec<ReportRow>,
    pub min_arms_bound: f64,
    pub min_arms: usize,
    /// Smallest listed `A` at which every class is argmax-correct.
    pub smallest_correct_arms: Option<usize>,
}

impl VerifyReport {
    pub fn monotone_ok(&self) -> bool {
        self.rows.iter().all(|r| r.monotone != Some(false))
    }

    pub fn argmax_ok_at(&self, arms: usize) -> Option<bool> {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.arms == arms).collect();
        (!rows.is_empty()).then(|| rows.iter().all(|r| r.argmax_correct))
    }

    /// Every monotonicity and argmax flag holds.
    pub fn passed(&self) -> bool {
        self.monotone_ok() && self.rows.iter().all(|r| r.argmax_correct)
    }

    pub const CSV_HEADER: &'static str = "m,A,k,estimate,std_error,argmax_correct,monotone";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let mono = match r.monotone {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.m, r.arms, r.k, r.estimate, r.std_error, r.argmax_correct, mono
            ));
        }
        out
    }
}

/// Confidence table over every true class `m`, arm count in `arms_list` and
/// scored class `k`, with monotonicity and argmax flags.
pub fn verify_report<R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    arms_list: &[usize],
    n_samples: usize,
    rng: &mut R,
) -> Result<VerifyReport> {
    if arms_list.is_empty() {
        return domain("arm list must be nonempty");
    }
    if arms_list.windows(2).any(|w| w[0] >= w[1]) {
        return domain("arm list must be strictly increasing");
    }
    let k = spec.n_components();
    let mut rows = Vec::new();
    let mut previous: Vec<Option<ConfidenceEstimate>> = vec![None; k];
    let mut smallest_correct_arms = None;
    for &arms in arms_list {
        let mut all_correct = true;
        for m in 0..k {
            let est = confidence_analytic_all(spec, m, arms, n_samples, rng)?;
            let correct = (0..k).filter(|n| *n != m).all(|n| est[m].value > est[n].value);
            all_correct &= correct;
            let monotone = previous[m].map(|p| est[m].exceeds(&p, MC_SIGMAS));
            previous[m] = Some(est[m]);
            for (j, e) in est.iter().enumerate() {
                rows.push(ReportRow {
                    m: m + 1,
                    arms,
                    k: j + 1,
                    estimate: e.value,
                    std_error: e.std_error,
                    argmax_correct: correct,
                    monotone: if j == m { monotone } else { None },
                });
            }
        }
        if all_correct && smallest_correct_arms.is_none() {
            smallest_correct_arms = Some(arms);
        }
    }
    Ok(VerifyReport {
        rows,
        min_arms_bound: min_arms_bound(spec),
        min_arms: min_arms(spec),
        smallest_correct_arms,
    })
}
