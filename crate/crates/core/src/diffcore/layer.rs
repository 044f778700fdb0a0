use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Softmax,
    LogSoftmax,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softmax => 3,
            Activation::LogSoftmax => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Softmax,
            4 => Activation::LogSoftmax,
            _ => return None,
        })
    }

    pub fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Linear => v,
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Softmax => tape.softmax(v),
            Activation::LogSoftmax => tape.log_softmax(v),
        }
    }
}

/// Weights `in × out` and bias `1 × out` of a fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Uniform Glorot initialization, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weights: Tensor::from_fn(inputs, outputs, |_, _| rng.random_range(-limit..limit)),
            bias: Tensor::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

/// Inverted dropout applied to a layer input: kept entries are scaled by
/// `1 / (1 − rate)`. The 0/1 mask is supplied by the caller.
#[derive(Debug, Clone, Copy)]
pub struct Dropout<'a> {
    pub rate: f64,
    pub mask: &'a Tensor,
}

/// Draws a 0/1 keep-mask with `P(keep) = 1 − rate`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { 1.0 })
}

/// `x ⊙ mask / (1 − rate)`.
pub fn dropout(tape: &mut Tape, x: Var, drop: Dropout<'_>) -> Result<Var> {
    if !(0.0..1.0).contains(&drop.rate) {
        return domain(format!("dropout rate {} outside [0, 1)", drop.rate));
    }
    if drop.rate == 0.0 {
        return Ok(x);
    }
    let scaled = drop.mask.map(|m| m / (1.0 - drop.rate));
    let m = tape.constant(scaled);
    tape.mul(x, m)
}

/// `activation(dropout(input) · W + b)`.
pub fn layer_apply(
    tape: &mut Tape,
    input: Var,
    weights: Var,
    bias: Var,
    activation: Activation,
    drop: Option<Dropout<'_>>,
) -> Result<Var> {
    let x = match drop {
        Some(d) => dropout(tape, input, d)?,
        None => input,
    };
    let z = tape.matmul(x, weights)?;
    let z = tape.add_row(z, bias)?;
    Ok(activation.apply(tape, z))
}

/// `μ + exp(logvar / 2) ⊙ noise`.
pub fn gaussian_reparameterize(tape: &mut Tape, mu: Var, logvar: Var, noise: Var) -> Result<Var> {
    let (m, l, n) = (tape.value(mu).shape(), tape.value(logvar).shape(), tape.value(noise).shape());
    if m != l || m != n {
        return Err(Error::Shape {
            op: "gaussian_reparameterize",
            detail: format!("mu {m:?}, logvar {l:?}, noise {n:?}"),
        });
    }
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let eps = tape.mul(std, noise)?;
    tape.add(mu, eps)
}

/// Relaxed categorical sample. Returns `(sample, log_sample)` where
/// `log_sample = log_softmax((logits + gumbel) / τ)`.
pub fn gumbel_softmax_sample(tape: &mut Tape, logits: Var, tau: f64, gumbel_noise: Var) -> Result<(Var, Var)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return domain(format!("temperature must be positive, got {tau}"));
    }
    let perturbed = tape.add(logits, gumbel_noise)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    let log_sample = tape.log_softmax(scaled);
    let sample = tape.exp(log_sample);
    Ok((sample, log_sample))
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Standard Gumbel(0, 1) noise.
pub fn gumbel_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let g = Gumbel::new(0.0, 1.0).expect("valid Gumbel parameters");
    Tensor::from_fn(rows, cols, |_, _| g.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_is_identity() {
        let x = Tensor::from_fn(3, 4, |r, c| r as f64 - c as f64 * 0.5);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.param(Tensor::identity(4));
        let b = tape.param(Tensor::zeros(1, 4));
        let y = layer_apply(&mut tape, xv, w, b, Activation::Linear, None).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn relu_on_negative_input_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::filled(2, 3, -1.0));
        let w = tape.param(Tensor::identity(3));
        let b = tape.param(Tensor::zeros(1, 3));
        let y = layer_apply(&mut tape, x, w, b, Activation::Relu, None).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dense_layer_gradients_with_each_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::init(4, 3, &mut rng);
        let bias = standard_normal(1, 3, &mut rng);
        let x = standard_normal(5, 4, &mut rng);
        let mask = dropout_mask(5, 4, 0.2, &mut rng);
        let target = standard_normal(5, 3, &mut rng);
        for act in [
            Activation::Linear,
            Activation::Relu,
            Activation::Tanh,
            Activation::Softmax,
            Activation::LogSoftmax,
        ] {
            let r = finite_difference_check(
                |p: &[Tensor]| {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = p.iter().map(|t| tape.param(t.clone())).collect();
                    let drop = Dropout { rate: 0.2, mask: &mask };
                    let y = layer_apply(&mut tape, vars[0], vars[1], vars[2], act, Some(drop)).unwrap();
                    let t = tape.constant(target.clone());
                    let d = tape.mul(y, t).unwrap();
                    let l = tape.sum(d);
                    let g = tape.backward(l).unwrap();
                    (tape.scalar(l), vars.iter().map(|v| g.get_or_zeros(&tape, *v)).collect())
                },
                &[x.clone(), layer.weights.clone(), bias.clone()],
                1e-5,
            );
            assert!(r.max_rel_error < 1e-5, "{act:?}: {r:?}");
        }
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mask = Tensor::row(vec![1.0, 0.0, 1.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let y = dropout(&mut tape, x, Dropout { rate: 0.2, mask: &mask }).unwrap();
        let expected = [1.25, 0.0, 3.75, 5.0];
        for (a, b) in tape.value(y).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(dropout(&mut tape, x, Dropout { rate: 1.0, mask: &mask }).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        let mu = Tensor::row(vec![0.5, -1.0]);
        let lv = Tensor::row(vec![0.3, -0.7]);
        let n = Tensor::row(vec![1.2, -0.4]);

        let mut tape = Tape::new();
        let (m, l, z) = (tape.constant(mu.clone()), tape.constant(lv.clone()), tape.constant(Tensor::zeros(1, 2)));
        let s = gaussian_reparameterize(&mut tape, m, l, z).unwrap();
        assert_eq!(tape.value(s), &mu);

        let l0 = tape.constant(Tensor::zeros(1, 2));
        let nn = tape.constant(n.clone());
        let s = gaussian_reparameterize(&mut tape, m, l0, nn).unwrap();
        assert!(tape.value(s).max_abs_diff(&mu.zip_map(&n, |a, b| a + b)) < 1e-15);

        let r = finite_difference_check(
            |p: &[Tensor]| {
                let mut tape = Tape::new();
                let m = tape.param(p[0].clone());
                let l = tape.param(p[1].clone());
                let e = tape.constant(n.clone());
                let s = gaussian_reparameterize(&mut tape, m, l, e).unwrap();
                let out = tape.sum(s);
                let g = tape.backward(out).unwrap();
                (tape.scalar(out), vec![g.get_or_zeros(&tape, m), g.get_or_zeros(&tape, l)])
            },
            &[mu.clone(), lv.clone()],
            1e-5,
        );
        assert!(r.max_rel_error < 1e-6, "{r:?}");

        let mut tape = Tape::new();
        let (m, l, e) = (tape.param(mu), tape.param(lv.clone()), tape.constant(n.clone()));
        let s = gaussian_reparameterize(&mut tape, m, l, e).unwrap();
        let out = tape.sum(s);
        let g = tape.backward(out).unwrap();
        for k in 0..2 {
            let expected = 0.5 * (lv.data()[k] / 2.0).exp() * n.data()[k];
            assert!((g.get(l).unwrap().data()[k] - expected).abs() < 1e-15);
        }
        let bad = tape.constant(Tensor::zeros(1, 3));
        assert!(gaussian_reparameterize(&mut tape, m, l, bad).is_err());
    }

    #[test]
    fn gumbel_softmax_examples() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::filled(2, 4, 0.7));
        let zero = tape.constant(Tensor::zeros(2, 4));
        let (s, _) = gumbel_softmax_sample(&mut tape, logits, 0.67, zero).unwrap();
        assert!(tape.value(s).data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        assert!(gumbel_softmax_sample(&mut tape, logits, 0.0, zero).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = standard_normal(6, 5, &mut rng);
        let g = gumbel_noise(6, 5, &mut rng);
        let lv = tape.constant(l.clone());
        let gv = tape.constant(g.clone());
        let (s, _) = gumbel_softmax_sample(&mut tape, lv, 0.01, gv).unwrap();
        let perturbed = l.zip_map(&g, |a, b| a + b);
        for r in 0..6 {
            let row = perturbed.row_slice(r);
            let best = crate::simplex::argmax(row);
            assert!(tape.value(s).get(r, best) >= 0.99);
            assert!((tape.value(s).row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let target = standard_normal(6, 5, &mut rng);
        let r = finite_difference_check(
            |p: &[Tensor]| {
                let mut tape = Tape::new();
                let lv = tape.param(p[0].clone());
                let gv = tape.constant(g.clone());
                let (s, _) = gumbel_softmax_sample(&mut tape, lv, 0.67, gv).unwrap();
                let t = tape.constant(target.clone());
                let d = tape.mul(s, t).unwrap();
                let out = tape.sum(d);
                let gr = tape.backward(out).unwrap();
                (tape.scalar(out), vec![gr.get_or_zeros(&tape, lv)])
            },
            &[l],
            1e-5,
        );
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
