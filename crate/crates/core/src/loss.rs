//! The subspace loss `trace(B⁻¹A)` and its matrix adjoints.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::assembly::AssembledPair;
use crate::densela::{cholesky, cholesky_solve};
use crate::error::{Error, Result};

/// First relative diagonal shift tried when B is not numerically SPD.
pub const JITTER_START: f64 = 1e-12;
/// Largest relative shift before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// A diagonal shift `delta · trace(B)/k` added to B to make it factorizable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterEvent {
    pub delta: f64,
    pub shift: f64,
}

/// Cholesky factor of B, escalating a diagonal shift if needed.
pub fn factor_mass(b: ArrayView2<f64>) -> Result<(Array2<f64>, Option<JitterEvent>)> {
    if let Ok(l) = cholesky(b) {
        return Ok((l, None));
    }
    let k = b.nrows();
    let diag: Vec<f64> = (0..k).map(|i| b[[i, i]]).collect();
    let mean = diag.iter().sum::<f64>() / k as f64;
    let mut delta = JITTER_START;
    while delta <= JITTER_MAX * (1.0 + 1e-9) {
        let shift = delta * mean;
        let mut shifted = b.to_owned();
        for i in 0..k {
            shifted[[i, i]] += shift;
        }
        if let Ok(l) = cholesky(shifted.view()) {
            log::warn!("mass matrix jitter applied: delta {delta:e}, shift {shift:e}");
            return Ok((l, Some(JitterEvent { delta, shift })));
        }
        delta *= 10.0;
    }
    Err(Error::IllConditionedMass {
        max_delta: JITTER_MAX,
        min_diag: diag.iter().cloned().fold(f64::INFINITY, f64::min),
        max_diag: diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Loss value, adjoints and any jitter applied.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    /// `∂Loss/∂A = B⁻¹`.
    pub g_a: Array2<f64>,
    /// `∂Loss/∂B = −B⁻¹AB⁻¹`.
    pub g_b: Array2<f64>,
    pub jitter: Option<JitterEvent>,
}

fn symmetrize(m: &mut Array2<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in i + 1..k {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

fn check_square(pair: &AssembledPair) -> Result<usize> {
    let k = pair.a.nrows();
    if pair.a.dim() != (k, k) || pair.b.dim() != (k, k) || k == 0 {
        return Err(Error::Shape(format!("A {:?}, B {:?}", pair.a.dim(), pair.b.dim())));
    }
    Ok(k)
}

/// Loss and adjoints in one pass.
pub fn evaluate(pair: &AssembledPair) -> Result<LossEval> {
    let k = check_square(pair)?;
    let (l, jitter) = factor_mass(pair.b.view())?;
    let c = cholesky_solve(l.view(), pair.a.view());
    let value = (0..k).map(|i| c[[i, i]]).sum();
    let mut g_a = cholesky_solve(l.view(), Array2::eye(k).view());
    // B⁻¹AB⁻¹ = B⁻¹ (B⁻¹A)ᵀ for symmetric A.
    let mut g_b = cholesky_solve(l.view(), c.t()).mapv(|v| -v);
    symmetrize(&mut g_a);
    symmetrize(&mut g_b);
    Ok(LossEval { value, g_a, g_b, jitter })
}

/// `trace(B⁻¹A)` via a Cholesky solve.
pub fn trace_loss(pair: &AssembledPair) -> Result<f64> {
    let k = check_square(pair)?;
    let (l, _) = factor_mass(pair.b.view())?;
    let c = cholesky_solve(l.view(), pair.a.view());
    Ok((0..k).map(|i| c[[i, i]]).sum())
}

/// `(∂Loss/∂A, ∂Loss/∂B)`.
pub fn loss_adjoints(pair: &AssembledPair) -> Result<(Array2<f64>, Array2<f64>)> {
    let e = evaluate(pair)?;
    Ok((e.g_a, e.g_b))
}
