//! One arm of the coupled model: a categorical encoder `q(c|x)`, a
//! conditional state encoder `q(s|c,x)` and a decoder `p(x|s,c)`.
//!
//! The relaxed categorical sample is concatenated to the input of the state
//! encoder and to the state before decoding.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::layer::{
    dropout_mask, gaussian_reparameterize, gumbel_noise, gumbel_softmax_sample, layer_apply, standard_normal,
};
use crate::diffcore::tape::{log_softmax_rows, softmax_rows, softplus};
use crate::diffcore::{Activation, Dense, Dropout, Tape, Tensor, Var};
use crate::error::{domain, Error, Location, Result};
use crate::simplex::argmax;

/// What the state encoder and decoder are conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The relaxed Gumbel-softmax sample.
    #[default]
    Sample,
    /// The posterior probabilities `q(c|x)`.
    Posterior,
}

impl Conditioning {
    fn tag(self) -> u8 {
        match self {
            Conditioning::Sample => 0,
            Conditioning::Posterior => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Conditioning::Sample),
            1 => Some(Conditioning::Posterior),
            _ => None,
        }
    }
}

/// Architecture of an arm. Every subnetwork uses the same hidden widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDims {
    pub input_dim: usize,
    pub n_categories: usize,
    pub state_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub conditioning: Conditioning,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ArmDims {
    pub fn new(input_dim: usize, n_categories: usize, state_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            input_dim,
            n_categories,
            state_dim,
            hidden,
            activation: Activation::Relu,
            conditioning: Conditioning::Sample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_categories < 2 {
            return domain(format!("need at least 2 categories, got {}", self.n_categories));
        }
        if self.state_dim < 1 {
            return domain("state dimension must be at least 1");
        }
        if self.input_dim < 1 {
            return domain("input dimension must be at least 1");
        }
        if self.hidden.contains(&0) {
            return domain("hidden widths must be positive");
        }
        if !matches!(self.activation, Activation::Relu | Activation::Tanh | Activation::Linear) {
            return domain(format!("unsupported hidden activation {:?}", self.activation));
        }
        Ok(())
    }
}

/// Dense layers applied in sequence with a shared hidden activation; the last
/// layer is linear.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect(),
        }
    }

    fn shapes(widths: &[usize]) -> Vec<[usize; 2]> {
        widths
            .windows(2)
            .flat_map(|w| [[w[0], w[1]], [1, w[1]]])
            .collect()
    }
}

/// Parameters of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    dims: ArmDims,
    categorical: Mlp,
    state_trunk: Mlp,
    mu_head: Dense,
    logvar_head: Dense,
    decoder: Mlp,
}

struct Widths {
    categorical: Vec<usize>,
    trunk: Vec<usize>,
    trunk_out: usize,
    decoder: Vec<usize>,
}

fn widths(d: &ArmDims) -> Widths {
    let k = d.n_categories;
    let chain = |first: usize, last: Option<usize>| {
        let mut w = vec![first];
        w.extend(&d.hidden);
        w.extend(last);
        w
    };
    let trunk = chain(d.input_dim + k, None);
    Widths {
        categorical: chain(d.input_dim, Some(k)),
        trunk_out: *trunk.last().expect("nonempty"),
        trunk,
        decoder: chain(d.state_dim + k, Some(d.input_dim)),
    }
}

impl ArmModel {
    pub fn init<R: Rng + ?Sized>(dims: ArmDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let w = widths(&dims);
        Ok(Self {
            categorical: Mlp::init(&w.categorical, rng),
            state_trunk: Mlp::init(&w.trunk, rng),
            mu_head: Dense::init(w.trunk_out, dims.state_dim, rng),
            logvar_head: Dense::init(w.trunk_out, dims.state_dim, rng),
            decoder: Mlp::init(&w.decoder, rng),
            dims,
        })
    }

    /// Builds an arm from parameters in declaration order.
    pub fn from_params(dims: ArmDims, params: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        let shapes = Self::param_shapes(&dims);
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(v, s)| v.shape() != *s) {
            return Err(Error::Shape {
                op: "ArmModel::from_params",
                detail: format!("expected {} tensors with shapes {shapes:?}", shapes.len()),
            });
        }
        let w = widths(&dims);
        let mut it = params.into_iter();
        let mut dense = || Dense {
            weights: it.next().expect("counted"),
            bias: it.next().expect("counted"),
        };
        let mut mlp = |n: usize| Mlp {
            layers: (0..n).map(|_| dense()).collect(),
        };
        let categorical = mlp(w.categorical.len() - 1);
        let state_trunk = mlp(w.trunk.len() - 1);
        let mu_head = mlp(1).layers.remove(0);
        let logvar_head = mlp(1).layers.remove(0);
        let decoder = mlp(w.decoder.len() - 1);
        Ok(Self {
            dims,
            categorical,
            state_trunk,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn dims(&self) -> &ArmDims {
        &self.dims
    }

    /// Parameter shapes in declaration order: categorical encoder, state
    /// trunk, mean head, log-variance head, decoder; weights before biases.
    pub fn param_shapes(dims: &ArmDims) -> Vec<[usize; 2]> {
        let w = widths(dims);
        let mut s = Mlp::shapes(&w.categorical);
        s.extend(Mlp::shapes(&w.trunk));
        for _ in 0..2 {
            s.push([w.trunk_out, dims.state_dim]);
            s.push([1, dims.state_dim]);
        }
        s.extend(Mlp::shapes(&w.decoder));
        s
    }

    fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.categorical
            .layers
            .iter()
            .chain(&self.state_trunk.layers)
            .chain([&self.mu_head, &self.logvar_head])
            .chain(&self.decoder.layers)
    }

    fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.categorical
            .layers
            .iter_mut()
            .chain(&mut self.state_trunk.layers)
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(&mut self.decoder.layers)
    }

    /// Parameters in declaration order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.dense_layers().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.dense_layers_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params().into_iter().cloned().collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Replaces every parameter; shapes must match [`ArmModel::param_shapes`].
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let shapes = Self::param_shapes(&self.dims);
        if values.len() != shapes.len() || values.iter().zip(&shapes).any(|(v, s)| v.shape() != *s) {
            return Err(Error::Shape {
                op: "ArmModel::set_params",
                detail: format!("expected {} tensors with shapes {shapes:?}", shapes.len()),
            });
        }
        for (slot, v) in self.params_mut().into_iter().zip(values) {
            *slot = v;
        }
        Ok(())
    }

    /// Puts every parameter on the tape, tracked or as constants.
    pub fn register(&self, tape: &mut Tape, tracked: bool) -> ArmParams {
        let vars = self
            .params()
            .into_iter()
            .map(|p| if tracked { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        ArmParams {
            vars,
            n_categorical: self.categorical.layers.len(),
            n_trunk: self.state_trunk.layers.len(),
        }
    }
}

/// Tape handles for an arm's parameters, in declaration order.
#[derive(Debug, Clone)]
pub struct ArmParams {
    pub vars: Vec<Var>,
    n_categorical: usize,
    n_trunk: usize,
}

impl ArmParams {
    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }

    fn categorical(&self) -> std::ops::Range<usize> {
        0..self.n_categorical
    }

    fn trunk(&self) -> std::ops::Range<usize> {
        self.n_categorical..self.n_categorical + self.n_trunk
    }

    fn mu_head(&self) -> usize {
        self.n_categorical + self.n_trunk
    }

    fn decoder(&self) -> std::ops::Range<usize> {
        self.mu_head() + 2..self.vars.len() / 2
    }
}

/// Dropout probabilities on the encoder input and on the sampled state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutRates {
    pub input: f64,
    pub state: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        Self { input: 0.2, state: 0.1 }
    }
}

impl DropoutRates {
    pub const NONE: Self = Self { input: 0.0, state: 0.0 };
}

/// All randomness consumed by one training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmNoise {
    pub gumbel: Tensor,
    pub normal: Tensor,
    pub rates: DropoutRates,
    pub input_mask: Tensor,
    pub state_mask: Tensor,
}

impl ArmNoise {
    pub fn draw<R: Rng + ?Sized>(dims: &ArmDims, batch: usize, rates: DropoutRates, rng: &mut R) -> Self {
        Self {
            gumbel: gumbel_noise(batch, dims.n_categories, rng),
            normal: standard_normal(batch, dims.state_dim, rng),
            rates,
            input_mask: dropout_mask(batch, dims.input_dim, rates.input, rng),
            state_mask: dropout_mask(batch, dims.state_dim, rates.state, rng),
        }
    }

    /// Noise that turns the forward pass into its deterministic limit.
    pub fn zeros(dims: &ArmDims, batch: usize) -> Self {
        Self {
            gumbel: Tensor::zeros(batch, dims.n_categories),
            normal: Tensor::zeros(batch, dims.state_dim),
            rates: DropoutRates::NONE,
            input_mask: Tensor::filled(batch, dims.input_dim, 1.0),
            state_mask: Tensor::filled(batch, dims.state_dim, 1.0),
        }
    }
}

/// Tape handles for one arm's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ArmGraph {
    pub logits: Var,
    pub q_c: Var,
    pub log_q_c: Var,
    pub c_sample: Var,
    pub log_c_sample: Var,
    pub mu: Var,
    pub logvar: Var,
    pub s_sample: Var,
    /// Decoder output: the mean for Gaussian likelihoods, logits for Bernoulli.
    pub decoder_out: Var,
}

fn mlp_apply(
    tape: &mut Tape,
    params: &ArmParams,
    layers: std::ops::Range<usize>,
    mut h: Var,
    act: Activation,
    last_linear: bool,
) -> Result<Var> {
    let n = layers.len();
    for (j, i) in layers.enumerate() {
        let (w, b) = params.layer(i);
        let a = if last_linear && j + 1 == n { Activation::Linear } else { act };
        h = layer_apply(tape, h, w, b, a, None)?;
    }
    Ok(h)
}

fn check_input(dims: &ArmDims, x: &Tensor) -> Result<()> {
    if x.rows() == 0 {
        return domain("batch must be nonempty");
    }
    if x.cols() != dims.input_dim {
        return Err(Error::Shape {
            op: "arm_forward",
            detail: format!("input has {} columns, arm expects {}", x.cols(), dims.input_dim),
        });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return domain(format!("temperature {tau} outside (0, 1]"));
    }
    Ok(())
}

/// Records a training-mode forward pass on `tape`.
pub fn build_arm(
    tape: &mut Tape,
    model: &ArmModel,
    params: &ArmParams,
    x: Var,
    tau: f64,
    noise: &ArmNoise,
) -> Result<ArmGraph> {
    let dims = model.dims();
    check_input(dims, tape.value(x))?;
    check_tau(tau)?;
    let batch = tape.value(x).rows();
    if noise.gumbel.shape() != [batch, dims.n_categories] || noise.normal.shape() != [batch, dims.state_dim] {
        return Err(Error::Shape {
            op: "build_arm",
            detail: "noise does not match batch".into(),
        });
    }
    let act = dims.activation;
    let input_drop = Dropout {
        rate: noise.rates.input,
        mask: &noise.input_mask,
    };
    let xd = crate::diffcore::dropout(tape, x, input_drop)?;
    let logits = mlp_apply(tape, params, params.categorical(), xd, act, true)?;
    let q_c = tape.softmax(logits);
    let log_q_c = tape.log_softmax(logits);
    let g = tape.constant(noise.gumbel.clone());
    let (c_sample, log_c_sample) = gumbel_softmax_sample(tape, logits, tau, g)?;
    let cond = match dims.conditioning {
        Conditioning::Sample => c_sample,
        Conditioning::Posterior => q_c,
    };

    let enc_in = tape.concat_cols(xd, cond)?;
    let h = mlp_apply(tape, params, params.trunk(), enc_in, act, false)?;
    let (wm, bm) = params.layer(params.mu_head());
    let mu = layer_apply(tape, h, wm, bm, Activation::Linear, None)?;
    let (wl, bl) = params.layer(params.mu_head() + 1);
    let logvar = layer_apply(tape, h, wl, bl, Activation::Linear, None)?;
    let eps = tape.constant(noise.normal.clone());
    let s_sample = gaussian_reparameterize(tape, mu, logvar, eps)?;

    let s_drop = crate::diffcore::dropout(
        tape,
        s_sample,
        Dropout {
            rate: noise.rates.state,
            mask: &noise.state_mask,
        },
    )?;
    let dec_in = tape.concat_cols(s_drop, cond)?;
    let decoder_out = mlp_apply(tape, params, params.decoder(), dec_in, act, true)?;
    Ok(ArmGraph {
        logits,
        q_c,
        log_q_c,
        c_sample,
        log_c_sample,
        mu,
        logvar,
        s_sample,
        decoder_out,
    })
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmForward {
    pub logits: Tensor,
    pub q_c: Tensor,
    pub c_sample: Tensor,
    pub log_c_sample: Tensor,
    pub mu: Tensor,
    pub logvar: Tensor,
    pub s_sample: Tensor,
    pub decoder_out: Tensor,
    pub likelihood: Likelihood,
}

impl ArmForward {
    pub fn from_graph(tape: &Tape, g: &ArmGraph, likelihood: Likelihood) -> Self {
        Self {
            logits: tape.value(g.logits).clone(),
            q_c: tape.value(g.q_c).clone(),
            c_sample: tape.value(g.c_sample).clone(),
            log_c_sample: tape.value(g.log_c_sample).clone(),
            mu: tape.value(g.mu).clone(),
            logvar: tape.value(g.logvar).clone(),
            s_sample: tape.value(g.s_sample).clone(),
            decoder_out: tape.value(g.decoder_out).clone(),
            likelihood,
        }
    }

    /// Reconstruction in data units.
    pub fn x_recon(&self) -> Tensor {
        self.likelihood.mean(&self.decoder_out)
    }
}

/// Forward pass with the given frozen noise.
pub fn arm_forward_with(
    model: &ArmModel,
    x: &Tensor,
    tau: f64,
    noise: &ArmNoise,
    likelihood: Likelihood,
) -> Result<ArmForward> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let g = build_arm(&mut tape, model, &params, xv, tau, noise)?;
    Ok(ArmForward::from_graph(&tape, &g, likelihood))
}

/// Training-mode forward pass, drawing Gumbel noise, state noise and default
/// dropout masks from `rng`.
pub fn arm_forward<R: Rng + ?Sized>(
    model: &ArmModel,
    x: &Tensor,
    tau: f64,
    likelihood: Likelihood,
    rng: &mut R,
) -> Result<ArmForward> {
    check_input(model.dims(), x)?;
    let noise = ArmNoise::draw(model.dims(), x.rows(), DropoutRates::default(), rng);
    arm_forward_with(model, x, tau, &noise, likelihood)
}

/// `q(c|x)` without dropout.
pub fn posterior(model: &ArmModel, x: &Tensor) -> Result<Tensor> {
    check_input(model.dims(), x)?;
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let logits = mlp_apply(&mut tape, &params, params.categorical(), xv, model.dims.activation, true)?;
    Ok(softmax_rows(tape.value(logits)))
}

/// Argmax of `q(c|x)` per row, zero-based.
pub fn predict(model: &ArmModel, x: &Tensor) -> Result<Vec<usize>> {
    let q = posterior(model, x)?;
    Ok((0..q.rows()).map(|r| argmax(q.row_slice(r))).collect())
}

/// Deterministic encoding: `q(c|x)`, the one-hot argmax category and the
/// state mean given that category.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub q_c: Tensor,
    pub c_onehot: Tensor,
    pub mu: Tensor,
}

pub fn encode(model: &ArmModel, x: &Tensor) -> Result<Encoding> {
    let q_c = posterior(model, x)?;
    let k = model.dims.n_categories;
    let c_onehot = Tensor::from_fn(x.rows(), k, |r, c| {
        if argmax(q_c.row_slice(r)) == c {
            1.0
        } else {
            0.0
        }
    });
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let cv = tape.constant(c_onehot.clone());
    let enc_in = tape.concat_cols(xv, cv)?;
    let h = mlp_apply(&mut tape, &params, params.trunk(), enc_in, model.dims.activation, false)?;
    let (wm, bm) = params.layer(params.mu_head());
    let mu = layer_apply(&mut tape, h, wm, bm, Activation::Linear, None)?;
    Ok(Encoding {
        q_c,
        c_onehot,
        mu: tape.value(mu).clone(),
    })
}

/// Decoder mean in data units for states `s` and category codes `c`.
pub fn decode(model: &ArmModel, s: &Tensor, c: &Tensor, likelihood: Likelihood) -> Result<Tensor> {
    let d = &model.dims;
    if s.cols() != d.state_dim || c.cols() != d.n_categories || s.rows() != c.rows() {
        return Err(Error::Shape {
            op: "decode",
            detail: format!("state {:?}, category {:?}", s.shape(), c.shape()),
        });
    }
    let mut tape = Tape::new();
    let params = model.register(&mut tape, false);
    let sv = tape.constant(s.clone());
    let cv = tape.constant(c.clone());
    let dec_in = tape.concat_cols(sv, cv)?;
    let out = mlp_apply(&mut tape, &params, params.decoder(), dec_in, d.activation, true)?;
    Ok(likelihood.mean(tape.value(out)))
}

/// Reconstruction with the argmax category and zero state noise.
pub fn reconstruct(model: &ArmModel, x: &Tensor, likelihood: Likelihood) -> Result<Tensor> {
    let e = encode(model, x)?;
    decode(model, &e.mu, &e.c_onehot, likelihood)
}

/// Observation model `p(x|s,c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    #[default]
    GaussianUnitVar,
    Bernoulli,
}

impl Likelihood {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "gaussian_unit_var" => Ok(Likelihood::GaussianUnitVar),
            "bernoulli" => Ok(Likelihood::Bernoulli),
            other => domain(format!("unknown likelihood tag {other:?}")),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Likelihood::GaussianUnitVar => "gaussian_unit_var",
            Likelihood::Bernoulli => "bernoulli",
        }
    }

    fn mean(self, out: &Tensor) -> Tensor {
        match self {
            Likelihood::GaussianUnitVar => out.clone(),
            Likelihood::Bernoulli => out.map(crate::diffcore::tape::sigmoid),
        }
    }
}

/// Batch-mean ELBO terms of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    /// `−E[log p(x|s,c)]` up to the Gaussian normalizer.
    pub recon: f64,
    /// `D_KL(q(s|c,x) ‖ N(0, I))`.
    pub kl_state: f64,
    /// `H(c|x)`.
    pub cat_entropy: f64,
}

/// Loss terms evaluated directly from forward values.
pub fn arm_loss_terms(fwd: &ArmForward, x: &Tensor, likelihood: Likelihood) -> Result<LossTerms> {
    if x.shape() != fwd.decoder_out.shape() {
        return Err(Error::Shape {
            op: "arm_loss_terms",
            detail: format!("data {:?} vs reconstruction {:?}", x.shape(), fwd.decoder_out.shape()),
        });
    }
    let b = x.rows() as f64;
    let recon = match likelihood {
        Likelihood::GaussianUnitVar => {
            0.5 * x
                .data()
                .iter()
                .zip(fwd.decoder_out.data())
                .map(|(a, r)| (a - r) * (a - r))
                .sum::<f64>()
                / b
        }
        Likelihood::Bernoulli => {
            x.data()
                .iter()
                .zip(fwd.decoder_out.data())
                .map(|(a, z)| softplus(*z) - a * z)
                .sum::<f64>()
                / b
        }
    };
    let kl_state = 0.5
        * fwd
            .mu
            .data()
            .iter()
            .zip(fwd.logvar.data())
            .map(|(m, l)| l.exp() + m * m - 1.0 - l)
            .sum::<f64>()
        / b;
    let log_q = log_softmax_rows(&fwd.logits);
    let cat_entropy = -fwd
        .q_c
        .data()
        .iter()
        .zip(log_q.data())
        .map(|(q, l)| q * l)
        .sum::<f64>()
        / b;
    Ok(LossTerms {
        recon,
        kl_state,
        cat_entropy,
    })
}

/// Tape handles for [`LossTerms`].
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub recon: Var,
    pub kl_state: Var,
    pub cat_entropy: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            recon: tape.scalar(self.recon),
            kl_state: tape.scalar(self.kl_state),
            cat_entropy: tape.scalar(self.cat_entropy),
        }
    }
}

/// Records the loss terms of `g` on the tape.
pub fn arm_loss_vars(tape: &mut Tape, g: &ArmGraph, x: Var, likelihood: Likelihood) -> Result<LossVars> {
    let b = tape.value(x).rows() as f64;
    let recon = match likelihood {
        Likelihood::GaussianUnitVar => {
            let diff = tape.sub(x, g.decoder_out)?;
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            tape.scale(s, 0.5 / b)
        }
        Likelihood::Bernoulli => {
            let sp = tape.softplus(g.decoder_out);
            let xz = tape.mul(x, g.decoder_out)?;
            let per = tape.sub(sp, xz)?;
            let s = tape.sum(per);
            tape.scale(s, 1.0 / b)
        }
    };
    let ev = tape.exp(g.logvar);
    let mu2 = tape.square(g.mu);
    let t = tape.add(ev, mu2)?;
    let t = tape.sub(t, g.logvar)?;
    let t = tape.add_scalar(t, -1.0);
    let s = tape.sum(t);
    let kl_state = tape.scale(s, 0.5 / b);
    let ql = tape.mul(g.q_c, g.log_q_c)?;
    let s = tape.sum(ql);
    let cat_entropy = tape.scale(s, -1.0 / b);
    Ok(LossVars {
        recon,
        kl_state,
        cat_entropy,
    })
}

const CKPT_MAGIC: &[u8; 8] = b"CPLCKPT1";
const ARM_MAGIC: &[u8; 8] = b"CPLARM01";

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

impl ArmModel {
    /// Appends `CPLARM01`, the dims record and every parameter as
    /// little-endian `f64` in declaration order.
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(ARM_MAGIC);
        let d = &self.dims;
        put_u64(out, d.input_dim);
        put_u64(out, d.n_categories);
        put_u64(out, d.state_dim);
        put_u64(out, d.hidden.len());
        for h in &d.hidden {
            put_u64(out, *h);
        }
        out.push(d.activation.tag());
        out.push(d.conditioning.tag());
        for p in self.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            path: self.path.to_path_buf(),
            location: Location::Byte(self.pos as u64),
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.err(format!("unexpected end of file, needed {n} more bytes"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, m: &[u8; 8]) -> Result<()> {
        let at = self.pos;
        if self.take(8)? != m {
            self.pos = at;
            return self.err(format!("bad magic, expected {:?}", String::from_utf8_lossy(m)));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn arm(&mut self) -> Result<ArmModel> {
        self.magic(ARM_MAGIC)?;
        let input_dim = self.u64()?;
        let n_categories = self.u64()?;
        let state_dim = self.u64()?;
        let n_hidden = self.u64()?;
        if n_hidden > 64 {
            return self.err(format!("implausible hidden layer count {n_hidden}"));
        }
        let hidden = (0..n_hidden).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let at = self.pos;
        let activation = match Activation::from_tag(self.u8()?) {
            Some(a) => a,
            None => {
                self.pos = at;
                return self.err("unknown activation tag");
            }
        };
        let at = self.pos;
        let conditioning = match Conditioning::from_tag(self.u8()?) {
            Some(c) => c,
            None => {
                self.pos = at;
                return self.err("unknown conditioning tag");
            }
        };
        let dims = ArmDims {
            input_dim,
            n_categories,
            state_dim,
            hidden,
            activation,
            conditioning,
        };
        if let Err(e) = dims.validate() {
            return self.err(format!("invalid arm dims: {e}"));
        }
        let mut params = Vec::new();
        for [r, c] in ArmModel::param_shapes(&dims) {
            params.push(Tensor::new(r, c, self.f64s(r * c)?)?);
        }
        ArmModel::from_params(dims, params)
    }
}

/// Serializes arms as `CPLCKPT1`, `u64` arm count, then each arm.
pub fn checkpoint_bytes(arms: &[ArmModel]) -> Vec<u8> {
    let mut out = Vec::from(&CKPT_MAGIC[..]);
    put_u64(&mut out, arms.len());
    for a in arms {
        a.write_bytes(&mut out);
    }
    out
}

pub fn checkpoint_from_bytes(buf: &[u8], path: &Path) -> Result<Vec<ArmModel>> {
    let mut r = Reader { buf, pos: 0, path };
    r.magic(CKPT_MAGIC)?;
    let n = r.u64()?;
    if n == 0 || n > 1024 {
        return r.err(format!("implausible arm count {n}"));
    }
    let arms = (0..n).map(|_| r.arm()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return r.err("trailing bytes after last arm");
    }
    Ok(arms)
}

pub fn save_checkpoint(path: &Path, arms: &[ArmModel]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(arms))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<ArmModel>> {
    let buf = std::fs::read(path)?;
    checkpoint_from_bytes(&buf, path)
}
