//! The multi-arm objective: per-arm ELBO terms weighted by `A − 1`, plus for
//! every pair of arms the two categorical entropies and a simplex distance
//! between their relaxed samples.
//!
//! Two routes compute the same numbers. The tape route
//! ([`coupled_loss_vars`]) is what training differentiates; the value route
//! ([`total_loss`]) evaluates the formulas directly on forward values using
//! the [`crate::simplex`] distances.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{domain, Error, Result};
use crate::mixvae::{ArmForward, ArmGraph, LossTerms, LossVars};
use crate::simplex::{aitchison_distance, perturbed_distance, SigmaWeights, SimplexVector, PROB_FLOOR, SIGMA_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    Aitchison,
    #[default]
    Perturbed,
}

/// Which batch quantity the perturbation variances are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSource {
    #[default]
    RelaxedSample,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    pub n_arms: usize,
    pub lambda: f64,
    pub tau: f64,
    pub distance_mode: DistanceMode,
    pub variance_source: VarianceSource,
    /// Interval width of the joint-prior diagnostic.
    pub epsilon: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            n_arms: 2,
            lambda: 1.0,
            tau: 0.67,
            distance_mode: DistanceMode::Perturbed,
            variance_source: VarianceSource::RelaxedSample,
            epsilon: 0.01,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_arms < 1 {
            return domain("need at least one arm");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return domain(format!("coupling weight {} must be nonnegative", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return domain(format!("temperature {} outside (0, 1]", self.tau));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return domain(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        Ok(())
    }
}

/// Per-category minibatch variances of one arm, floored at `SIGMA_FLOOR²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    variances: Vec<f64>,
}

impl BatchStats {
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sigma(&self) -> SigmaWeights {
        SigmaWeights::new(self.variances.iter().map(|v| v.sqrt()).collect()).expect("finite variances")
    }
}

/// Population variance of every column of `c`, floored at `SIGMA_FLOOR²`.
pub fn batch_variances(c: &Tensor) -> Result<BatchStats> {
    if c.rows() < 2 {
        return domain(format!("batch variance needs at least 2 rows, got {}", c.rows()));
    }
    let n = c.rows() as f64;
    let floor = SIGMA_FLOOR * SIGMA_FLOOR;
    let variances = (0..c.cols())
        .map(|k| {
            let mean = (0..c.rows()).map(|r| c.get(r, k)).sum::<f64>() / n;
            let var = (0..c.rows()).map(|r| (c.get(r, k) - mean).powi(2)).sum::<f64>() / n;
            var.max(floor)
        })
        .collect();
    Ok(BatchStats { variances })
}

/// Components of one pair term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairTerm {
    pub entropy_a: f64,
    pub entropy_b: f64,
    /// Batch mean of `d²(c_a, c_b)`.
    pub distance: f64,
    /// `−H_a − H_b + λ · distance`.
    pub value: f64,
}

fn entropy(q: &Tensor) -> f64 {
    let h: f64 = q
        .data()
        .iter()
        .map(|p| if *p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    h / q.rows() as f64
}

fn simplex_rows(c: &Tensor) -> Result<Vec<SimplexVector>> {
    (0..c.rows()).map(|r| SimplexVector::new(c.row_slice(r).to_vec())).collect()
}

/// `−H(c_a|x_a) − H(c_b|x_b) + λ · mean_i d²(c_a^i, c_b^i)` with a single
/// relaxed sample per datum and arm.
pub fn pair_coupling_terms(
    c_a: &Tensor,
    c_b: &Tensor,
    stats_a: Option<&BatchStats>,
    stats_b: Option<&BatchStats>,
    q_a: &Tensor,
    q_b: &Tensor,
    cfg: &CouplingConfig,
) -> Result<PairTerm> {
    if c_a.shape() != c_b.shape() || q_a.shape() != c_a.shape() || q_b.shape() != c_b.shape() {
        return Err(Error::Shape {
            op: "pair_coupling_terms",
            detail: format!(
                "samples {:?} and {:?}, posteriors {:?} and {:?}",
                c_a.shape(),
                c_b.shape(),
                q_a.shape(),
                q_b.shape()
            ),
        });
    }
    let (ra, rb) = (simplex_rows(c_a)?, simplex_rows(c_b)?);
    let d2: Vec<f64> = match cfg.distance_mode {
        DistanceMode::Aitchison => ra
            .iter()
            .zip(&rb)
            .map(|(a, b)| aitchison_distance(a, b).map(|d| d * d))
            .collect::<Result<_>>()?,
        DistanceMode::Perturbed => {
            let (Some(sa), Some(sb)) = (stats_a, stats_b) else {
                return domain("perturbed distance needs batch statistics for both arms");
            };
            let (sa, sb) = (sa.sigma(), sb.sigma());
            ra.iter()
                .zip(&rb)
                .map(|(a, b)| perturbed_distance(a, b, &sa, &sb).map(|d| d * d))
                .collect::<Result<_>>()?
        }
    };
    let distance = d2.iter().sum::<f64>() / d2.len() as f64;
    let (entropy_a, entropy_b) = (entropy(q_a), entropy(q_b));
    Ok(PairTerm {
        entropy_a,
        entropy_b,
        distance,
        value: -entropy_a - entropy_b + cfg.lambda * distance,
    })
}

/// Per-term decomposition of the coupled loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub per_arm: Vec<LossTerms>,
    /// Batch-mean `d²` for pairs `(a, b)`, `a < b`, in lexicographic order.
    pub pair_distance: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Sum of the pair distances.
    pub fn distance(&self) -> f64 {
        self.pair_distance.iter().sum()
    }
}

/// Pairs `(a, b)` with `a < b` in lexicographic order.
pub fn arm_pairs(n_arms: usize) -> Vec<(usize, usize)> {
    (0..n_arms)
        .flat_map(|a| (a + 1..n_arms).map(move |b| (a, b)))
        .collect()
}

fn variance_input<'a>(fwd: &'a ArmForward, cfg: &CouplingConfig) -> &'a Tensor {
    match cfg.variance_source {
        VarianceSource::RelaxedSample => &fwd.c_sample,
        VarianceSource::Posterior => &fwd.q_c,
    }
}

/// Batch statistics of every arm as the configuration prescribes.
pub fn arm_stats(arms: &[ArmForward], cfg: &CouplingConfig) -> Result<Vec<BatchStats>> {
    arms.iter().map(|f| batch_variances(variance_input(f, cfg))).collect()
}

/// `Σ_a (A−1)(recon_a + kl_a) + Σ_{a<b} pair_coupling_terms(a, b)` for
/// `A ≥ 2`; `recon + kl − H` for a single arm.
pub fn total_loss(arms: &[(ArmForward, LossTerms)], cfg: &CouplingConfig, stats: &[BatchStats]) -> Result<LossBreakdown> {
    cfg.validate()?;
    if arms.len() != cfg.n_arms {
        return domain(format!("configured for {} arms, got {}", cfg.n_arms, arms.len()));
    }
    let per_arm: Vec<LossTerms> = arms.iter().map(|(_, t)| *t).collect();
    if cfg.n_arms == 1 {
        let t = per_arm[0];
        return Ok(LossBreakdown {
            total: t.recon + t.kl_state - t.cat_entropy,
            per_arm,
            pair_distance: Vec::new(),
        });
    }
    if cfg.distance_mode == DistanceMode::Perturbed && stats.len() != cfg.n_arms {
        return domain(format!("need batch statistics for {} arms, got {}", cfg.n_arms, stats.len()));
    }
    let w = (cfg.n_arms - 1) as f64;
    let mut total: f64 = per_arm.iter().map(|t| w * (t.recon + t.kl_state)).sum();
    let mut pair_distance = Vec::new();
    for (a, b) in arm_pairs(cfg.n_arms) {
        let (fa, fb) = (&arms[a].0, &arms[b].0);
        let p = pair_coupling_terms(
            &fa.c_sample,
            &fb.c_sample,
            stats.get(a),
            stats.get(b),
            &fa.q_c,
            &fb.q_c,
            cfg,
        )?;
        total += p.value;
        pair_distance.push(p.distance);
    }
    Ok(LossBreakdown {
        per_arm,
        pair_distance,
        total,
    })
}

/// Tape handles for the coupled loss.
#[derive(Debug, Clone)]
pub struct CoupledVars {
    pub total: Var,
    pub pair_distance: Vec<Var>,
}

/// `σ = sqrt(max(var, SIGMA_FLOOR²))` per column of `c`, as a `1 × K` node.
/// Gradients flow through the batch variance.
pub fn batch_sigma_var(tape: &mut Tape, c: Var) -> Result<Var> {
    if tape.value(c).rows() < 2 {
        return domain("batch variance needs at least 2 rows");
    }
    let mean = tape.mean_rows(c);
    let centered = tape.sub_row(c, mean)?;
    let sq = tape.square(centered);
    let var = tape.mean_rows(sq);
    let var = tape.clamp_min(var, SIGMA_FLOOR * SIGMA_FLOOR);
    Ok(tape.sqrt(var))
}

/// Batch-mean `d²` between the relaxed samples of two arms.
pub fn pair_distance_var(tape: &mut Tape, a: &ArmGraph, b: &ArmGraph, cfg: &CouplingConfig) -> Result<Var> {
    let floor = PROB_FLOOR.ln();
    let la = tape.clamp_min(a.log_c_sample, floor);
    let lb = tape.clamp_min(b.log_c_sample, floor);
    let rows = tape.value(la).rows() as f64;
    let diff = match cfg.distance_mode {
        DistanceMode::Aitchison => {
            let u = tape.sub(la, lb)?;
            let m = tape.mean_cols(u);
            tape.sub_col(u, m)?
        }
        DistanceMode::Perturbed => {
            let (src_a, src_b) = match cfg.variance_source {
                VarianceSource::RelaxedSample => (a.c_sample, b.c_sample),
                VarianceSource::Posterior => (a.q_c, b.q_c),
            };
            let sa = batch_sigma_var(tape, src_a)?;
            let sb = batch_sigma_var(tape, src_b)?;
            let ua = tape.div_row(la, sa)?;
            let ub = tape.div_row(lb, sb)?;
            tape.sub(ua, ub)?
        }
    };
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / rows))
}

/// Records the coupled loss on the tape; see [`total_loss`].
pub fn coupled_loss_vars(
    tape: &mut Tape,
    graphs: &[ArmGraph],
    losses: &[LossVars],
    cfg: &CouplingConfig,
) -> Result<CoupledVars> {
    cfg.validate()?;
    if graphs.len() != cfg.n_arms || losses.len() != cfg.n_arms {
        return domain(format!(
            "configured for {} arms, got {} graphs and {} loss sets",
            cfg.n_arms,
            graphs.len(),
            losses.len()
        ));
    }
    if cfg.n_arms == 1 {
        let l = losses[0];
        let t = tape.add(l.recon, l.kl_state)?;
        let total = tape.sub(t, l.cat_entropy)?;
        return Ok(CoupledVars {
            total,
            pair_distance: Vec::new(),
        });
    }
    let w = (cfg.n_arms - 1) as f64;
    let mut total: Option<Var> = None;
    let mut acc = |tape: &mut Tape, v: Var| -> Result<()> {
        total = Some(match total {
            Some(t) => tape.add(t, v)?,
            None => v,
        });
        Ok(())
    };
    for l in losses {
        let t = tape.add(l.recon, l.kl_state)?;
        let t = tape.scale(t, w);
        acc(tape, t)?;
    }
    let mut pair_distance = Vec::new();
    for (a, b) in arm_pairs(cfg.n_arms) {
        let d = pair_distance_var(tape, &graphs[a], &graphs[b], cfg)?;
        pair_distance.push(d);
        let h = tape.add(losses[a].cat_entropy, losses[b].cat_entropy)?;
        let h = tape.neg(h);
        let ld = tape.scale(d, cfg.lambda);
        let p = tape.add(h, ld)?;
        acc(tape, p)?;
    }
    Ok(CoupledVars {
        total: total.expect("at least one arm"),
        pair_distance,
    })
}

/// `ε λ exp(−λ d²(c_a, c_b))` with the Aitchison distance.
pub fn joint_prior_density(c_a: &SimplexVector, c_b: &SimplexVector, lambda: f64, epsilon: f64) -> Result<f64> {
    if !(lambda > 0.0 && epsilon > 0.0) {
        return domain("joint prior needs positive lambda and epsilon");
    }
    let d = aitchison_distance(c_a, c_b)?;
    Ok(epsilon * lambda * (-lambda * d * d).exp())
}

/// `(λ ε)³ / 24`.
pub fn midpoint_error_bound(lambda: f64, epsilon: f64) -> f64 {
    (lambda * epsilon).powi(3) / 24.0
}

/// `∫ λ e^{−λ t} dt` over `[d² − ε/2, d² + ε/2]` by composite Simpson's rule.
pub fn interval_mass(lambda: f64, epsilon: f64, d2: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) & !1;
    let (lo, h) = (d2 - epsilon / 2.0, epsilon / n as f64);
    let f = |t: f64| lambda * (-lambda * t).exp();
    let mut acc = f(lo) + f(lo + epsilon);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}
