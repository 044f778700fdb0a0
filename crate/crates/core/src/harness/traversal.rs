//! Decoding a sweep over one state coordinate with the category held fixed.

use serde::Serialize;

use crate::diffcore::Tensor;
use crate::error::{domain, Result};
use crate::mixvae::{decode, encode, ArmModel, Likelihood};
use crate::simplex::argmax;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Traversal {
    /// Argmax category of the source sample, zero-based, used for every row.
    pub category: usize,
    pub dim: usize,
    /// State mean of the source sample.
    pub mu: Vec<f64>,
    /// `(grid value, reconstruction)`.
    pub rows: Vec<(f64, Vec<f64>)>,
}

impl Traversal {
    /// Header `category,value,x0,…`; categories are written one-based.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(0, |r| r.1.len());
        let mut out = String::from("category,value");
        for j in 0..d {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for (v, x) in &self.rows {
            out.push_str(&format!("{},{v:?}", self.category + 1));
            for xi in x {
                out.push_str(&format!(",{xi:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Sets state coordinate `dim` of `x`'s state mean to each grid value and
/// decodes with the one-hot argmax category of `x`.
pub fn latent_traversal(
    model: &ArmModel,
    x: &[f64],
    dim: usize,
    grid: &[f64],
    likelihood: Likelihood,
) -> Result<Traversal> {
    if dim >= model.dims().state_dim {
        return domain(format!("state dimension {dim} outside 0..{}", model.dims().state_dim));
    }
    let enc = encode(model, &Tensor::row(x.to_vec()))?;
    let mu = enc.mu.row_slice(0).to_vec();
    let rows = grid
        .iter()
        .map(|&v| {
            let mut s = mu.clone();
            s[dim] = v;
            let r = decode(model, &Tensor::row(s), &enc.c_onehot, likelihood)?;
            Ok((v, r.into_data()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Traversal {
        category: argmax(enc.c_onehot.row_slice(0)),
        dim,
        mu,
        rows,
    })
}
