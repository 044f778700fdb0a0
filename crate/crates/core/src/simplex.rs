//! Aitchison geometry on the K-part simplex.
//!
//! Points are strictly positive compositions summing to one. The vector-space
//! structure is given by perturbation (`⊕`, closed componentwise product) and
//! power (`⊗`, closed componentwise exponentiation); the centered log-ratio
//! map sends it isometrically onto the zero-sum hyperplane of `R^K`.

use crate::error::{domain, Error, Result};

/// Smallest admissible part of a [`SimplexVector`].
pub const PROB_FLOOR: f64 = 1e-12;
/// Tolerance for `Σ parts = 1` and for the CLR zero-sum check.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Smallest admissible entry of [`SigmaWeights`].
pub const SIGMA_FLOOR: f64 = 1e-6;

/// A point of the simplex `S^K`, `K ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    parts: Vec<f64>,
}

impl SimplexVector {
    /// Validates a probability vector. Parts below [`PROB_FLOOR`] are raised to
    /// it and the vector is re-closed.
    pub fn new(parts: Vec<f64>) -> Result<Self> {
        Self::with_floor(parts, PROB_FLOOR)
    }

    pub fn with_floor(parts: Vec<f64>, floor: f64) -> Result<Self> {
        if parts.len() < 2 {
            return domain(format!("simplex needs at least 2 parts, got {}", parts.len()));
        }
        if !(floor > 0.0 && floor < 1.0 / parts.len() as f64) {
            return domain(format!("invalid probability floor {floor}"));
        }
        if let Some(p) = parts.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return domain(format!("simplex part {p} is negative or not finite"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return domain(format!("simplex parts sum to {sum}, expected 1"));
        }
        Ok(Self::floored(parts, floor))
    }

    /// The barycenter `(1/K, …, 1/K)`, the identity element of `⊕`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return domain(format!("simplex needs at least 2 parts, got {k}"));
        }
        Ok(Self {
            parts: vec![1.0 / k as f64; k],
        })
    }

    /// Builds a point from unnormalized log-weights (a softmax).
    pub fn from_log_weights(logw: &[f64]) -> Result<Self> {
        if logw.len() < 2 {
            return domain(format!("simplex needs at least 2 parts, got {}", logw.len()));
        }
        if logw.iter().any(|v| !v.is_finite()) {
            return domain("log-weights must be finite");
        }
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(Self::floored(exps.into_iter().map(|e| e / sum).collect(), PROB_FLOOR))
    }

    fn floored(mut parts: Vec<f64>, floor: f64) -> Self {
        if parts.iter().any(|p| *p < floor) {
            parts.iter_mut().for_each(|p| *p = p.max(floor));
            let sum: f64 = parts.iter().sum();
            parts.iter_mut().for_each(|p| *p /= sum);
        }
        Self { parts }
    }

    pub fn parts(&self) -> &[f64] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn into_parts(self) -> Vec<f64> {
        self.parts
    }

    fn logs(&self) -> impl Iterator<Item = f64> + '_ {
        self.parts.iter().map(|p| p.ln())
    }

    /// Index of the largest part (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.parts)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Centered log-ratio coordinates of a simplex point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrVector {
    coords: Vec<f64>,
}

impl ClrVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return domain("clr vector needs at least 2 coordinates");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return domain("clr coordinates must be finite");
        }
        let sum: f64 = coords.iter().sum();
        let scale = coords.iter().map(|c| c.abs()).fold(1.0, f64::max);
        if sum.abs() > SIMPLEX_TOL * scale {
            return domain(format!("clr coordinates sum to {sum}, expected 0"));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Per-category standard deviations used by [`perturbed_distance`].
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaWeights {
    sigma: Vec<f64>,
}

impl SigmaWeights {
    /// Entries below [`SIGMA_FLOOR`] are clamped, not rejected.
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        Self::with_floor(sigma, SIGMA_FLOOR)
    }

    pub fn with_floor(mut sigma: Vec<f64>, floor: f64) -> Result<Self> {
        if sigma.is_empty() {
            return domain("sigma weights must be nonempty");
        }
        if sigma.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return domain("sigma weights must be finite");
        }
        let mut clamped = 0;
        for s in sigma.iter_mut() {
            if *s < floor {
                *s = floor;
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::debug!("clamped {clamped} sigma entries to floor {floor}");
        }
        Ok(Self { sigma })
    }

    pub fn ones(k: usize) -> Self {
        Self { sigma: vec![1.0; k] }
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            op,
            detail: format!("{a} parts vs {b} parts"),
        });
    }
    Ok(())
}

/// The closure operation: rescale a positive vector onto the simplex.
pub fn closure(v: &[f64]) -> Result<SimplexVector> {
    if v.len() < 2 {
        return domain(format!("closure needs at least 2 entries, got {}", v.len()));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return domain(format!("closure requires positive finite entries, got {x}"));
    }
    let sum: f64 = v.iter().sum();
    Ok(SimplexVector::floored(
        v.iter().map(|x| x / sum).collect(),
        PROB_FLOOR,
    ))
}

/// Perturbation `x ⊕ y`.
pub fn perturb(x: &SimplexVector, y: &SimplexVector) -> Result<SimplexVector> {
    same_len("perturb", x.len(), y.len())?;
    let logw: Vec<f64> = x.logs().zip(y.logs()).map(|(a, b)| a + b).collect();
    SimplexVector::from_log_weights(&logw)
}

/// Power `alpha ⊗ x`.
pub fn power(alpha: f64, x: &SimplexVector) -> Result<SimplexVector> {
    if !alpha.is_finite() {
        return domain("power exponent must be finite");
    }
    let logw: Vec<f64> = x.logs().map(|l| alpha * l).collect();
    SimplexVector::from_log_weights(&logw)
}

/// Centered log-ratio transform.
pub fn clr(x: &SimplexVector) -> ClrVector {
    let logs: Vec<f64> = x.logs().collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    ClrVector {
        coords: logs.into_iter().map(|l| l - mean).collect(),
    }
}

/// Inverse of [`clr`]: closure of the componentwise exponentials.
pub fn clr_inverse(z: &ClrVector) -> SimplexVector {
    // Coordinates are finite by construction, so this cannot fail.
    SimplexVector::from_log_weights(&z.coords).expect("finite clr coordinates")
}

fn sq_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Aitchison distance, computed as `‖clr(x) − clr(y)‖₂`.
pub fn aitchison_distance(x: &SimplexVector, y: &SimplexVector) -> Result<f64> {
    same_len("aitchison_distance", x.len(), y.len())?;
    Ok(sq_norm_diff(clr(x).coords(), clr(y).coords()).sqrt())
}

/// Aitchison distance via the pairwise log-ratio sum
/// `(1/K Σ_{i<j} (log(x_i/x_j) − log(y_i/y_j))²)^{1/2}`.
pub fn aitchison_distance_pairwise(x: &SimplexVector, y: &SimplexVector) -> Result<f64> {
    same_len("aitchison_distance_pairwise", x.len(), y.len())?;
    let k = x.len();
    let (lx, ly): (Vec<f64>, Vec<f64>) = (x.logs().collect(), y.logs().collect());
    let mut acc = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let t = (lx[i] - lx[j]) - (ly[i] - ly[j]);
            acc += t * t;
        }
    }
    Ok((acc / k as f64).sqrt())
}

/// Perturbed distance `d_σ(c_a, c_b) = (Σ_k (log c_{a,k}/σ_{a,k} − log c_{b,k}/σ_{b,k})²)^{1/2}`.
pub fn perturbed_distance(
    c_a: &SimplexVector,
    c_b: &SimplexVector,
    sigma_a: &SigmaWeights,
    sigma_b: &SigmaWeights,
) -> Result<f64> {
    check_sigma_shapes("perturbed_distance", c_a, c_b, sigma_a, sigma_b)?;
    let d2: f64 = (0..c_a.len())
        .map(|k| {
            let t = c_a.parts[k].ln() / sigma_a.sigma[k] - c_b.parts[k].ln() / sigma_b.sigma[k];
            t * t
        })
        .sum();
    Ok(d2.sqrt())
}

fn check_sigma_shapes(
    op: &'static str,
    c_a: &SimplexVector,
    c_b: &SimplexVector,
    sigma_a: &SigmaWeights,
    sigma_b: &SigmaWeights,
) -> Result<()> {
    same_len(op, c_a.len(), c_b.len())?;
    same_len(op, c_a.len(), sigma_a.len())?;
    same_len(op, c_a.len(), sigma_b.len())
}

/// Sandwich terms relating `d_σ²` to `d_S²`, together with the intermediate
/// quantities they are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaBounds {
    pub rho_l: f64,
    pub rho_u: f64,
    pub tau_c: f64,
    pub tau_sigma_u: f64,
    pub tau_sigma_l: f64,
    pub delta_sigma: f64,
}

impl SigmaBounds {
    /// Whether `d_S² − ρ_l ≤ d_σ² ≤ d_S² + ρ_u` holds within `slack`.
    pub fn contains(&self, d2_simplex: f64, d2_sigma: f64, slack: f64) -> bool {
        d2_sigma >= d2_simplex - self.rho_l - slack && d2_sigma <= d2_simplex + self.rho_u + slack
    }
}

/// `ρ_l` and `ρ_u` for the perturbed distance, with
/// `g_k = (σ_{a,k}⁻¹ − 1) log c_{a,k} − (σ_{b,k}⁻¹ − 1) log c_{b,k}`,
/// `τ_c = max_k (log c_{a,k} − log c_{b,k})`, `τ_σu = max_k g_k`,
/// `τ_σl = max_k (−g_k)`, `Δ_σ = Σ_k g_k`,
/// `ρ_u = K(τ_σu² + τ_c²) + 2Δ_σ τ_c` and `ρ_l = Δ_σ²/K − K τ_σl²`.
pub fn sigma_distance_bounds(
    c_a: &SimplexVector,
    c_b: &SimplexVector,
    sigma_a: &SigmaWeights,
    sigma_b: &SigmaWeights,
) -> Result<SigmaBounds> {
    check_sigma_shapes("sigma_distance_bounds", c_a, c_b, sigma_a, sigma_b)?;
    let k = c_a.len() as f64;
    let mut tau_c = f64::NEG_INFINITY;
    let mut tau_sigma_u = f64::NEG_INFINITY;
    let mut tau_sigma_l = f64::NEG_INFINITY;
    let mut delta_sigma = 0.0;
    for i in 0..c_a.len() {
        let (la, lb) = (c_a.parts[i].ln(), c_b.parts[i].ln());
        let g = (1.0 / sigma_a.sigma[i] - 1.0) * la - (1.0 / sigma_b.sigma[i] - 1.0) * lb;
        tau_c = tau_c.max(la - lb);
        tau_sigma_u = tau_sigma_u.max(g);
        tau_sigma_l = tau_sigma_l.max(-g);
        delta_sigma += g;
    }
    Ok(SigmaBounds {
        rho_l: delta_sigma * delta_sigma / k - k * tau_sigma_l * tau_sigma_l,
        rho_u: k * (tau_sigma_u * tau_sigma_u + tau_c * tau_c) + 2.0 * delta_sigma * tau_c,
        tau_c,
        tau_sigma_u,
        tau_sigma_l,
        delta_sigma,
    })
}

/// Bounds on how far perturbing both arguments moves their squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBounds {
    pub gamma_l: f64,
    pub gamma_u: f64,
    /// `d²(x ⊕ v_x, y ⊕ v_y)`.
    pub d2_perturbed: f64,
    /// `d²(x, y)`.
    pub d2_base: f64,
    pub tau_u: f64,
    pub tau_l: f64,
    pub delta: f64,
}

impl PerturbationBounds {
    pub fn contains(&self, slack: f64) -> bool {
        self.d2_perturbed >= self.d2_base - self.gamma_l - slack
            && self.d2_perturbed <= self.d2_base + self.gamma_u + slack
    }
}

/// `Γ_u = Kτ_u² − Δ²/K` and `Γ_l = Δ²/K − Kτ_l²` with `r_k = log(v_{x,k}/v_{y,k})`,
/// `τ_u = max_k r_k`, `τ_l = max_k (−r_k)` and `Δ = Σ_k r_k`.
pub fn perturbation_distance_bounds(
    x: &SimplexVector,
    y: &SimplexVector,
    v_x: &SimplexVector,
    v_y: &SimplexVector,
) -> Result<PerturbationBounds> {
    same_len("perturbation_distance_bounds", x.len(), y.len())?;
    same_len("perturbation_distance_bounds", x.len(), v_x.len())?;
    same_len("perturbation_distance_bounds", x.len(), v_y.len())?;
    let k = x.len() as f64;
    let r: Vec<f64> = v_x.logs().zip(v_y.logs()).map(|(a, b)| a - b).collect();
    let tau_u = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tau_l = r.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
    let delta: f64 = r.iter().sum();
    let d2_base = aitchison_distance(x, y)?.powi(2);
    let d2_perturbed = aitchison_distance(&perturb(x, v_x)?, &perturb(y, v_y)?)?.powi(2);
    Ok(PerturbationBounds {
        gamma_l: delta * delta / k - k * tau_l * tau_l,
        gamma_u: k * tau_u * tau_u - delta * delta / k,
        d2_perturbed,
        d2_base,
        tau_u,
        tau_l,
        delta,
    })
}

/// Gap between the uncentered weighted distance and the perturbed Aitchison distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedGap {
    /// `d_v²(x, y) = Σ_k (log x_k v_{x,k} − log y_k v_{y,k})²`.
    pub d2_v: f64,
    /// `d_v²(x, y) − d²(x ⊕ v_x, y ⊕ v_y)`.
    pub gap: f64,
    /// `(Δ + Kτ)²/K` with `τ = max_k log(x_k/y_k)`, `Δ = Σ_k log(v_{x,k}/v_{y,k})`.
    pub upper: f64,
    /// `K·D²` where `D` is the mean of the weighted log differences; equals `gap`.
    pub k_d2: f64,
}

impl WeightedGap {
    pub fn contains(&self, slack: f64) -> bool {
        self.gap >= -slack && self.gap <= self.upper + slack
    }
}

pub fn weighted_distance_gap(
    x: &SimplexVector,
    y: &SimplexVector,
    v_x: &SimplexVector,
    v_y: &SimplexVector,
) -> Result<WeightedGap> {
    same_len("weighted_distance_gap", x.len(), y.len())?;
    same_len("weighted_distance_gap", x.len(), v_x.len())?;
    same_len("weighted_distance_gap", x.len(), v_y.len())?;
    let k = x.len();
    let w: Vec<f64> = (0..k)
        .map(|i| (x.parts[i] * v_x.parts[i]).ln() - (y.parts[i] * v_y.parts[i]).ln())
        .collect();
    let d2_v: f64 = w.iter().map(|t| t * t).sum();
    let d_mean = w.iter().sum::<f64>() / k as f64;
    let d2_perturbed = aitchison_distance(&perturb(x, v_x)?, &perturb(y, v_y)?)?.powi(2);
    let tau = x
        .logs()
        .zip(y.logs())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let delta: f64 = v_x.logs().zip(v_y.logs()).map(|(a, b)| a - b).sum();
    let kf = k as f64;
    Ok(WeightedGap {
        d2_v,
        gap: d2_v - d2_perturbed,
        upper: (delta + kf * tau).powi(2) / kf,
        k_d2: kf * d_mean * d_mean,
    })
}
