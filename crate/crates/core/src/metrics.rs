//! Relative eigenvalue errors and L²/H¹ projection errors of exact
//! eigenfunctions onto approximate eigenspaces.
//!
//! Functions live on the model's quadrature grids in reduced form (physical
//! value divided by the grid envelope), so `Σ ω u v` is the physical L²
//! product. Low-rank functions use 1D factor products; in one and two
//! dimensions everything is expanded onto the full tensor grid so that
//! residuals are formed pointwise without cancellation.

use ndarray::{Array1, Array2, ArrayView2};

use crate::densela::{cholesky, cholesky_solve};
use crate::error::{Error, Result};
use crate::reference::OscillatorReference;
use crate::tnn::DimGrid;

/// `|λ̂ − λ| / |λ|`, paired by ascending order.
pub fn eigenvalue_errors(approx: &[f64], exact: &[f64]) -> Result<Vec<f64>> {
    if approx.len() != exact.len() {
        return Err(Error::Shape(format!("{} approximate vs {} exact eigenvalues", approx.len(), exact.len())));
    }
    approx
        .iter()
        .zip(exact)
        .map(|(&a, &e)| {
            if e == 0.0 {
                Err(Error::InvalidArgument("exact eigenvalue is zero; relative error undefined".into()))
            } else {
                Ok((a - e).abs() / e.abs())
            }
        })
        .collect()
}

/// Sum of rank-one terms `Σ_r c_r Π_i f_{r,i}(x_i)` sampled on the grids.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub coeffs: Vec<f64>,
    /// Per dimension: `(values, derivatives)`, each `rank × Q_i`.
    pub factors: Vec<(Array2<f64>, Array2<f64>)>,
}

/// A function on the full tensor grid of a one- or two-dimensional problem.
#[derive(Clone, Debug)]
pub struct Dense {
    /// `Q_1 × Q_2` (`Q_2 = 1` in one dimension).
    pub values: Array2<f64>,
    pub grads: Vec<Array2<f64>>,
}

#[derive(Clone, Debug)]
pub enum GridFunction {
    LowRank(LowRank),
    Dense(Dense),
}

fn grid_shape(grids: &[DimGrid]) -> Result<(usize, usize)> {
    match grids {
        [g] => Ok((g.len(), 1)),
        [g, h] => Ok((g.len(), h.len())),
        _ => Err(Error::InvalidArgument(format!("dense grid functions need d ≤ 2, got {}", grids.len()))),
    }
}

impl GridFunction {
    /// Rank-one separable function from per-dimension reduced samples.
    pub fn separable(coeff: f64, factors: Vec<(Array1<f64>, Array1<f64>)>) -> Self {
        GridFunction::LowRank(LowRank {
            coeffs: vec![coeff],
            factors: factors
                .into_iter()
                .map(|(v, d)| (v.insert_axis(ndarray::Axis(0)), d.insert_axis(ndarray::Axis(0))))
                .collect(),
        })
    }

    /// Samples `f(x) -> (value, gradient)` of reduced quantities at every grid point (d ≤ 2).
    pub fn dense_from_fn(grids: &[DimGrid], f: impl Fn(&[f64], &[usize]) -> (f64, Vec<f64>)) -> Result<Self> {
        let (q1, q2) = grid_shape(grids)?;
        let d = grids.len();
        let mut values = Array2::zeros((q1, q2));
        let mut grads = vec![Array2::zeros((q1, q2)); d];
        for a in 0..q1 {
            for b in 0..q2 {
                let (x, idx) = if d == 1 {
                    (vec![grids[0].phys[a]], vec![a])
                } else {
                    (vec![grids[0].phys[a], grids[1].phys[b]], vec![a, b])
                };
                let (v, g) = f(&x, &idx);
                values[[a, b]] = v;
                for s in 0..d {
                    grads[s][[a, b]] = g[s];
                }
            }
        }
        Ok(GridFunction::Dense(Dense { values, grads }))
    }

    /// Exact oscillator state `s` in reduced form on the grids. Rotated
    /// references are only representable for d ≤ 2.
    pub fn oscillator_state(reference: &OscillatorReference, s: usize, grids: &[DimGrid]) -> Result<Self> {
        if reference.is_axis_aligned() {
            let factors = reference
                .factors(s)
                .iter()
                .zip(grids)
                .map(|(f, g)| {
                    let mut v = Array1::zeros(g.len());
                    let mut dv = Array1::zeros(g.len());
                    for q in 0..g.len() {
                        let x = g.phys[q];
                        let scale = (f.ln_gaussian(x) - g.ln_env[q]).exp();
                        let (a, b) = f.reduced(x);
                        v[q] = a * scale;
                        dv[q] = b * scale;
                    }
                    (v, dv)
                })
                .collect();
            return Ok(Self::separable(1.0, factors));
        }
        Self::dense_from_fn(grids, |x, idx| {
            let (ln_g, v, g) = reference.eval_reduced(s, x);
            let ln_env: f64 = idx.iter().zip(grids).map(|(&q, gr)| gr.ln_env[q]).sum();
            let scale = (ln_g - ln_env).exp();
            (v * scale, g.into_iter().map(|t| t * scale).collect())
        })
    }

    fn dim(&self) -> usize {
        match self {
            GridFunction::LowRank(l) => l.factors.len(),
            GridFunction::Dense(d) => d.grads.len(),
        }
    }

    fn scaled(&self, s: f64) -> GridFunction {
        match self {
            GridFunction::LowRank(l) => GridFunction::LowRank(LowRank {
                coeffs: l.coeffs.iter().map(|c| c * s).collect(),
                factors: l.factors.clone(),
            }),
            GridFunction::Dense(d) => GridFunction::Dense(Dense {
                values: &d.values * s,
                grads: d.grads.iter().map(|g| g * s).collect(),
            }),
        }
    }

    fn to_dense(&self, grids: &[DimGrid]) -> Result<Dense> {
        let (q1, q2) = grid_shape(grids)?;
        match self {
            GridFunction::Dense(d) => Ok(d.clone()),
            GridFunction::LowRank(l) => {
                let d = grids.len();
                let mut values = Array2::zeros((q1, q2));
                let mut grads = vec![Array2::zeros((q1, q2)); d];
                for (r, &c) in l.coeffs.iter().enumerate() {
                    let (v0, d0) = (&l.factors[0].0.row(r), &l.factors[0].1.row(r));
                    for a in 0..q1 {
                        for b in 0..q2 {
                            if d == 1 {
                                values[[a, b]] += c * v0[a];
                                grads[0][[a, b]] += c * d0[a];
                            } else {
                                let (v1, d1) = (&l.factors[1].0.row(r), &l.factors[1].1.row(r));
                                values[[a, b]] += c * v0[a] * v1[b];
                                grads[0][[a, b]] += c * d0[a] * v1[b];
                                grads[1][[a, b]] += c * v0[a] * d1[b];
                            }
                        }
                    }
                }
                Ok(Dense { values, grads })
            }
        }
    }
}

/// L² and H¹-seminorm inner products.
#[derive(Clone, Copy, Debug)]
struct Products {
    l2: f64,
    h1: f64,
}

fn low_rank_products(u: &LowRank, v: &LowRank, grids: &[DimGrid]) -> Products {
    let d = grids.len();
    let gram = |a: &Array2<f64>, b: &Array2<f64>, w: &[f64]| -> Array2<f64> {
        let wv = ArrayView2::from_shape((1, w.len()), w).expect("row");
        (a * &wv).dot(&b.t())
    };
    let mass: Vec<Array2<f64>> = (0..d).map(|i| gram(&u.factors[i].0, &v.factors[i].0, &grids[i].weights)).collect();
    let stiff: Vec<Array2<f64>> = (0..d).map(|i| gram(&u.factors[i].1, &v.factors[i].1, &grids[i].weights)).collect();
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for (r, &cu) in u.coeffs.iter().enumerate() {
        for (t, &cv) in v.coeffs.iter().enumerate() {
            let cc = cu * cv;
            l2 += cc * (0..d).map(|i| mass[i][[r, t]]).product::<f64>();
            for s in 0..d {
                h1 += cc * (0..d).map(|i| if i == s { stiff[i][[r, t]] } else { mass[i][[r, t]] }).product::<f64>();
            }
        }
    }
    Products { l2, h1 }
}

fn dense_products(u: &Dense, v: &Dense, grids: &[DimGrid]) -> Products {
    let (q1, q2) = u.values.dim();
    let w2 = |b: usize| if grids.len() == 1 { 1.0 } else { grids[1].weights[b] };
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for a in 0..q1 {
        for b in 0..q2 {
            let w = grids[0].weights[a] * w2(b);
            l2 += w * u.values[[a, b]] * v.values[[a, b]];
            h1 += w * u.grads.iter().zip(&v.grads).map(|(g, h)| g[[a, b]] * h[[a, b]]).sum::<f64>();
        }
    }
    Products { l2, h1 }
}

fn products(u: &GridFunction, v: &GridFunction, grids: &[DimGrid]) -> Result<Products> {
    match (u, v) {
        (GridFunction::LowRank(a), GridFunction::LowRank(b)) if grids.len() > 2 => Ok(low_rank_products(a, b, grids)),
        _ => Ok(dense_products(&u.to_dense(grids)?, &v.to_dense(grids)?, grids)),
    }
}

fn solve_gram(gram: &Array2<f64>, rhs: &Array1<f64>, what: &str) -> Result<Array1<f64>> {
    let l = cholesky(gram.view()).map_err(|_| Error::SingularGram(format!("{what} Gram matrix is not positive definite")))?;
    let x = cholesky_solve(l.view(), rhs.view().insert_axis(ndarray::Axis(1)));
    Ok(x.column(0).to_owned())
}

/// `(‖u − Pu‖/‖u‖, |u − Qu|₁/|u|₁)` where `P` projects onto the span of
/// `eigenspace` in L² and `Q` in the gradient inner product.
pub fn projection_errors(exact: &GridFunction, eigenspace: &[GridFunction], grids: &[DimGrid]) -> Result<(f64, f64)> {
    if eigenspace.is_empty() {
        return Err(Error::InvalidArgument("eigenspace is empty".into()));
    }
    if exact.dim() != grids.len() || eigenspace.iter().any(|f| f.dim() != grids.len()) {
        return Err(Error::Shape("grid function dimension differs from the grids".into()));
    }
    let m = eigenspace.len();
    let mut g_l2 = Array2::zeros((m, m));
    let mut g_h1 = Array2::zeros((m, m));
    let mut b_l2 = Array1::zeros(m);
    let mut b_h1 = Array1::zeros(m);
    for i in 0..m {
        for j in i..m {
            let p = products(&eigenspace[i], &eigenspace[j], grids)?;
            g_l2[[i, j]] = p.l2;
            g_l2[[j, i]] = p.l2;
            g_h1[[i, j]] = p.h1;
            g_h1[[j, i]] = p.h1;
        }
        let p = products(&eigenspace[i], exact, grids)?;
        b_l2[i] = p.l2;
        b_h1[i] = p.h1;
    }
    let self_p = products(exact, exact, grids)?;
    let a_l2 = solve_gram(&g_l2, &b_l2, "L2")?;
    let a_h1 = solve_gram(&g_h1, &b_h1, "H1")?;

    if grids.len() <= 2 {
        let u = exact.to_dense(grids)?;
        let residual = |coef: &Array1<f64>| -> Result<Products> {
            let mut r = u.clone();
            for (f, &c) in eigenspace.iter().zip(coef) {
                let fd = f.scaled(c).to_dense(grids)?;
                r.values -= &fd.values;
                for (rg, fg) in r.grads.iter_mut().zip(&fd.grads) {
                    *rg -= fg;
                }
            }
            Ok(dense_products(&r, &r, grids))
        };
        let e_l2 = residual(&a_l2)?.l2.max(0.0).sqrt() / self_p.l2.sqrt();
        let e_h1 = residual(&a_h1)?.h1.max(0.0).sqrt() / self_p.h1.sqrt();
        return Ok((e_l2, e_h1));
    }
    // ‖u − Pu‖² = ‖u‖² − bᵀG⁻¹b
    let e_l2 = (self_p.l2 - b_l2.dot(&a_l2)).max(0.0).sqrt() / self_p.l2.sqrt();
    let e_h1 = (self_p.h1 - b_h1.dot(&a_h1)).max(0.0).sqrt() / self_p.h1.sqrt();
    Ok((e_l2, e_h1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::oscillator_states;
    use crate::tnn::{DimensionKind, DimensionSpec};
    use std::f64::consts::PI;

    fn unit_grid() -> DimGrid {
        DimGrid::new(&DimensionSpec::new(DimensionKind::BoundedDirichlet { a: 0.0, b: 1.0 }, 8, 10), None).unwrap()
    }

    fn sine(g: &DimGrid, k: f64) -> GridFunction {
        let v = Array1::from_iter(g.phys.iter().map(|&x| (k * PI * x).sin()));
        let d = Array1::from_iter(g.phys.iter().map(|&x| k * PI * (k * PI * x).cos()));
        GridFunction::separable(1.0, vec![(v, d)])
    }

    #[test]
    fn eigenvalue_error_values() {
        assert_eq!(eigenvalue_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!((eigenvalue_errors(&[1.1], &[1.0]).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(eigenvalue_errors(&[1.0], &[0.0]).is_err());
        assert!(eigenvalue_errors(&[1.0], &[]).is_err());
    }

    #[test]
    fn one_dimensional_sanity() {
        let g = vec![unit_grid()];
        let u = sine(&g[0], 1.0);
        let space = vec![sine(&g[0], 1.0), sine(&g[0], 2.0)];
        let (l2, h1) = projection_errors(&u, &space, &g).unwrap();
        assert!(l2 < 1e-10 && h1 < 1e-10);
    }

    #[test]
    fn exact_member_and_orthogonal() {
        let g = vec![unit_grid(), unit_grid()];
        let f = |a: f64, b: f64| -> GridFunction {
            let s0 = sine(&g[0], a);
            let s1 = sine(&g[1], b);
            match (s0, s1) {
                (GridFunction::LowRank(x), GridFunction::LowRank(y)) => GridFunction::LowRank(LowRank {
                    coeffs: vec![1.0],
                    factors: vec![x.factors[0].clone(), y.factors[0].clone()],
                }),
                _ => unreachable!(),
            }
        };
        let (l2, h1) = projection_errors(&f(1.0, 2.0), &[f(1.0, 2.0)], &g).unwrap();
        assert!(l2 < 1e-12 && h1 < 1e-12, "{l2} {h1}");
        let (l2, h1) = projection_errors(&f(1.0, 2.0), &[f(2.0, 1.0), f(3.0, 3.0)], &g).unwrap();
        assert!((l2 - 1.0).abs() < 1e-10 && (h1 - 1.0).abs() < 1e-10);
        // Scale invariance.
        let (l2a, h1a) = projection_errors(&f(1.0, 1.0), &[f(1.0, 1.0).scaled(1.0), f(1.0, 2.0)], &g).unwrap();
        let (l2b, h1b) = projection_errors(&f(1.0, 1.0), &[f(1.0, 1.0).scaled(10.0), f(1.0, 2.0).scaled(10.0)], &g).unwrap();
        assert!((l2a - l2b).abs() < 1e-12 && (h1a - h1b).abs() < 1e-12);
    }

    #[test]
    fn singular_gram_reported() {
        let g = vec![unit_grid()];
        let u = sine(&g[0], 1.0);
        let err = projection_errors(&u, &[sine(&g[0], 2.0), sine(&g[0], 2.0)], &g).unwrap_err();
        assert!(matches!(err, Error::SingularGram(_)));
    }

    #[test]
    fn rotated_reference_is_normalized_and_matches_low_rank_path() {
        let spec = DimensionSpec::new(DimensionKind::WholeLine, 1, 40);
        let g = vec![DimGrid::new(&spec, Some(1.0)).unwrap(), DimGrid::new(&spec, Some(1.0)).unwrap()];
        let r = oscillator_states(crate::reference::coupled_2d_matrix().view(), 3).unwrap();
        for s in 0..3 {
            let u = GridFunction::oscillator_state(&r, s, &g).unwrap();
            let p = products(&u, &u, &g).unwrap();
            assert!((p.l2 - 1.0).abs() < 1e-10, "{}", p.l2);
        }
        let axis = oscillator_states(Array2::eye(2).view(), 3).unwrap();
        let u = GridFunction::oscillator_state(&axis, 1, &g).unwrap();
        let p = products(&u, &u, &g).unwrap();
        assert!((p.l2 - 1.0).abs() < 1e-12);
        // Virial theorem: ∫|∇u|² equals the energy (here 2) for the unit oscillator.
        assert!((p.h1 - 2.0).abs() < 1e-10, "{}", p.h1);
    }

    #[test]
    fn projection_is_optimal() {
        // Perturbing the optimal coefficients never decreases the error.
        let g = vec![unit_grid()];
        let u = GridFunction::dense_from_fn(&g, |x, _| (x[0] * (1.0 - x[0]), vec![1.0 - 2.0 * x[0]])).unwrap();
        let space = vec![sine(&g[0], 1.0), sine(&g[0], 3.0)];
        let (l2, _) = projection_errors(&u, &space, &g).unwrap();
        let uu = products(&u, &u, &g).unwrap().l2;
        let gram = |a: &GridFunction, b: &GridFunction| products(a, b, &g).unwrap().l2;
        let b: Vec<f64> = space.iter().map(|f| gram(f, &u)).collect();
        let best = [b[0] / gram(&space[0], &space[0]), b[1] / gram(&space[1], &space[1])];
        for &(da, db) in &[(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            let c = [best[0] + da, best[1] + db];
            let mut r = uu;
            for i in 0..2 {
                r -= 2.0 * c[i] * b[i];
                for j in 0..2 {
                    r += c[i] * c[j] * gram(&space[i], &space[j]);
                }
            }
            assert!(r.sqrt() / uu.sqrt() >= l2 - 1e-14);
        }
    }
}
