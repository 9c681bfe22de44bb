//! Small dense symmetric linear algebra.
//!
//! Cholesky factorization and triangular solves, symmetric eigendecomposition
//! by Householder tridiagonalization followed by implicit-shift QL, and the
//! symmetric-definite generalized problem `A y = λ B y` by Cholesky reduction.
//! Sizes here are tiny (k ≤ a few dozen, n ≤ a few hundred), so everything is
//! written as plain loops over `ndarray` storage.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `S = L Lᵀ`.
pub fn cholesky(s: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = square_dim(s)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = s[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut v = s[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `L X = R` in place for lower-triangular `L`.
pub fn solve_lower_in_place(l: ArrayView2<f64>, rhs: &mut Array2<f64>) {
    let n = l.nrows();
    for c in 0..rhs.ncols() {
        for i in 0..n {
            let mut v = rhs[[i, c]];
            for k in 0..i {
                v -= l[[i, k]] * rhs[[k, c]];
            }
            rhs[[i, c]] = v / l[[i, i]];
        }
    }
}

/// Solves `Lᵀ X = R` in place for lower-triangular `L`.
pub fn solve_upper_transposed_in_place(l: ArrayView2<f64>, rhs: &mut Array2<f64>) {
    let n = l.nrows();
    for c in 0..rhs.ncols() {
        for i in (0..n).rev() {
            let mut v = rhs[[i, c]];
            for k in (i + 1)..n {
                v -= l[[k, i]] * rhs[[k, c]];
            }
            rhs[[i, c]] = v / l[[i, i]];
        }
    }
}

/// Solves `S X = R` given the Cholesky factor of `S`.
pub fn cholesky_solve(l: ArrayView2<f64>, rhs: ArrayView2<f64>) -> Array2<f64> {
    let mut x = rhs.to_owned();
    solve_lower_in_place(l, &mut x);
    solve_upper_transposed_in_place(l, &mut x);
    x
}

/// Eigen-decomposition `S = Q diag(μ) Qᵀ` of a symmetric matrix, μ ascending.
pub fn sym_eig(s: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = square_dim(s)?;
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // Symmetrize defensively against round-off in the caller's input.
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (s[[i, j]] + s[[j, i]]));
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    // tred2 leaves e[i] coupling (i-1, i); the QL routine wants (i, i+1).
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    tridiagonal_ql(&mut d, &mut e, &mut v)?;
    Ok(sort_pairs(d, v))
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off[i]` couples `i` and `i+1`).
pub fn sym_tridiagonal_eig(diag: &[f64], off: &[f64]) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = diag.len();
    if off.len() + 1 != n && !(n == 0 && off.is_empty()) {
        return Err(Error::Shape(format!(
            "tridiagonal: {} diagonal entries but {} off-diagonal",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let mut v = Array2::eye(n);
    tridiagonal_ql(&mut d, &mut e, &mut v)?;
    Ok(sort_pairs(d, v))
}

/// Generalized symmetric-definite eigenproblem `A Y = B Y diag(λ)`.
///
/// Returns λ ascending and `Y` with `Yᵀ B Y = I`.
pub fn sym_generalized_eig(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = square_dim(a)?;
    if square_dim(b)? != n {
        return Err(Error::Shape(format!(
            "generalized eig: A is {n}x{n}, B is {:?}",
            b.dim()
        )));
    }
    let l = cholesky(b)?;
    // C = L⁻¹ A L⁻ᵀ
    let mut c = a.to_owned();
    solve_lower_in_place(l.view(), &mut c);
    let mut ct = c.t().to_owned();
    solve_lower_in_place(l.view(), &mut ct);
    let (lambda, q) = sym_eig(ct.view())?;
    let mut y = q;
    solve_upper_transposed_in_place(l.view(), &mut y);
    reorthonormalize_clusters(&lambda, &mut y, b, a);
    Ok((lambda, y))
}

/// Modified Gram–Schmidt in the B-inner product inside numerically repeated
/// eigenvalue clusters (gap below 1e-9·‖A‖_max).
fn reorthonormalize_clusters(
    lambda: &Array1<f64>,
    y: &mut Array2<f64>,
    b: ArrayView2<f64>,
    a: ArrayView2<f64>,
) {
    let n = lambda.len();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && lambda[end] - lambda[end - 1] < tol {
            end += 1;
        }
        if end - start > 1 {
            for j in start..end {
                for i in start..j {
                    let proj = b_inner(b, y, i, j);
                    for r in 0..n {
                        y[[r, j]] -= proj * y[[r, i]];
                    }
                }
                let norm = b_inner(b, y, j, j).sqrt();
                if norm > 0.0 {
                    for r in 0..n {
                        y[[r, j]] /= norm;
                    }
                }
            }
        }
        start = end;
    }
}

fn b_inner(b: ArrayView2<f64>, y: &Array2<f64>, i: usize, j: usize) -> f64 {
    let n = y.nrows();
    let mut acc = 0.0;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += b[[r, c]] * y[[c, j]];
        }
        acc += y[[r, i]] * row;
    }
    acc
}

fn square_dim(s: ArrayView2<f64>) -> Result<usize> {
    let (r, c) = s.dim();
    if r != c {
        return Err(Error::Shape(format!("expected a square matrix, got {r}x{c}")));
    }
    Ok(r)
}

fn sort_pairs(d: Vec<f64>, v: Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let vals = Array1::from_iter(order.iter().map(|&i| d[i]));
    let vecs = Array2::from_shape_fn((v.nrows(), n), |(r, c)| v[[r, order[c]]]);
    (vals, vecs)
}

/// Householder reduction to tridiagonal form (EISPACK tred2 ordering).
/// On exit `v` holds the accumulated orthogonal transform, `d` the diagonal
/// and `e[1..]` the sub-diagonal.
fn tred2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[[k, j]] -= f * e[k] + g * d[k];
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on a symmetric tridiagonal matrix, accumulating the
/// rotations into the columns of `v`. `e[i]` couples `i` and `i+1`; `e[n-1]`
/// must be zero.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], v: &mut Array2<f64>) -> Result<()> {
    let n = d.len();
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let rows = v.nrows();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 * n.max(1) {
                    return Err(Error::NoConvergence {
                        rule: "tridiagonal QL",
                        n,
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..rows {
                        let hk = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * hk;
                        v[[k, i]] = c * v[[k, i]] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
