//! Exact spectra and eigenfunctions for the benchmark problems.

use std::f64::consts::PI;

use ndarray::{array, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::densela;
use crate::error::{Error, Result};

/// Relative tolerance under which two energies count as one level.
pub const TIE_TOL: f64 = 1e-12;

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn hermite_physicists(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for m in 0..n {
        let next = 2.0 * x * cur - 2.0 * m as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Orthonormal Hermite function without its Gaussian:
/// `h_n(t) = H_n(t) / sqrt(2ⁿ n! √π)`, so that `h_n(t) e^{-t²/2}` is
/// L²-normalized. Returns `(h_n(t), h_n'(t) - t h_n(t))`, the second entry
/// being the derivative of `h_n e^{-t²/2}` with the Gaussian stripped.
pub fn hermite_function_reduced(n: usize, t: f64) -> (f64, f64) {
    let h0 = PI.powf(-0.25);
    let (mut prev, mut cur) = (0.0, h0);
    for m in 0..n {
        let m = m as f64;
        let next = (2.0 / (m + 1.0)).sqrt() * t * cur - (m / (m + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    // ψ_n' = sqrt(n/2) ψ_{n-1} - sqrt((n+1)/2) ψ_{n+1}
    let nf = n as f64;
    let next = (2.0 / (nf + 1.0)).sqrt() * t * cur - (nf / (nf + 1.0)).sqrt() * prev;
    let d = (nf / 2.0).sqrt() * prev - ((nf + 1.0) / 2.0).sqrt() * next;
    (cur, d)
}

/// One decoupled oscillator factor `√s h_n(s y) e^{-s² y²/2}`, `s = μ^{1/4}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HermiteFactor {
    pub n: usize,
    pub mu: f64,
}

impl HermiteFactor {
    fn scale(&self) -> f64 {
        self.mu.powf(0.25)
    }

    /// Exponent of the Gaussian at `y`.
    pub fn ln_gaussian(&self, y: f64) -> f64 {
        -0.5 * self.mu.sqrt() * y * y
    }

    /// `(value, derivative)` with the Gaussian `e^{ln_gaussian(y)}` removed.
    pub fn reduced(&self, y: f64) -> (f64, f64) {
        let s = self.scale();
        let (h, d) = hermite_function_reduced(self.n, s * y);
        (s.sqrt() * h, s.sqrt() * s * d)
    }

    /// Physical `(value, derivative)`.
    pub fn eval(&self, y: f64) -> (f64, f64) {
        let g = self.ln_gaussian(y).exp();
        let (v, d) = self.reduced(y);
        (v * g, d * g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorState {
    pub indices: Vec<usize>,
    pub energy: f64,
}

impl OscillatorState {
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.indices.iter().map(|n| n.to_string()).collect();
        format!("({})", parts.join(","))
    }
}

/// Exact eigenpairs of `-½Δ + ½ xᵀAx`.
#[derive(Clone, Debug)]
pub struct OscillatorReference {
    pub matrix: Array2<f64>,
    /// Columns are eigenvectors of `A`; rotated coordinates are `y = Qᵀx`.
    pub rotation: Array2<f64>,
    pub mu: Array1<f64>,
    pub states: Vec<OscillatorState>,
}

impl OscillatorReference {
    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.energy).collect()
    }

    /// True when `Q` is the identity, so states are separable in `x`.
    pub fn is_axis_aligned(&self) -> bool {
        let d = self.rotation.nrows();
        (0..d).all(|i| (0..d).all(|j| self.rotation[[i, j]] == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn factors(&self, s: usize) -> Vec<HermiteFactor> {
        self.states[s]
            .indices
            .iter()
            .zip(self.mu.iter())
            .map(|(&n, &mu)| HermiteFactor { n, mu })
            .collect()
    }

    pub fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d).map(|i| (0..d).map(|j| self.rotation[[j, i]] * x[j]).sum()).collect()
    }

    /// `(ln of the Gaussian, reduced value, reduced gradient in x)` of state `s` at `x`.
    pub fn eval_reduced(&self, s: usize, x: &[f64]) -> (f64, f64, Vec<f64>) {
        let y = self.rotate(x);
        let factors = self.factors(s);
        let parts: Vec<(f64, f64)> = factors.iter().zip(&y).map(|(f, &yi)| f.reduced(yi)).collect();
        let ln_g: f64 = factors.iter().zip(&y).map(|(f, &yi)| f.ln_gaussian(yi)).sum();
        let value: f64 = parts.iter().map(|p| p.0).product();
        let d = x.len();
        let mut grad_y = vec![0.0; d];
        for (a, g) in grad_y.iter_mut().enumerate() {
            *g = parts.iter().enumerate().map(|(i, p)| if i == a { p.1 } else { p.0 }).product();
        }
        // ∂/∂x_j = Σ_i Q_{ji} ∂/∂y_i
        let grad_x = (0..d).map(|j| (0..d).map(|i| self.rotation[[j, i]] * grad_y[i]).sum()).collect();
        (ln_g, value, grad_x)
    }

    /// Indices into `states` grouped by exactly equal energy (relative [`TIE_TOL`]).
    pub fn levels(&self) -> Vec<Vec<usize>> {
        group_levels(&self.energies())
    }
}

/// Groups consecutive ascending values that agree within [`TIE_TOL`].
pub fn group_levels(values: &[f64]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(g) if (values[g[0]] - v).abs() <= TIE_TOL * v.abs().max(1.0) => g.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Lowest `k` states of `-½Δ + ½ xᵀAx`, ties ordered lexicographically.
pub fn oscillator_states(a: ArrayView2<f64>, k: usize) -> Result<OscillatorReference> {
    let d = a.nrows();
    if d == 0 || a.ncols() != d {
        return Err(Error::Shape(format!("oscillator matrix is {}x{}", a.nrows(), a.ncols())));
    }
    let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || a[[i, j]] == 0.0));
    let (mu, rotation) = if diagonal {
        (Array1::from_iter((0..d).map(|i| a[[i, i]])), Array2::eye(d))
    } else {
        densela::sym_eig(a)?
    };
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    let freq: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let ground: f64 = freq.iter().sum::<f64>() * 0.5;
    let min_freq = freq.iter().cloned().fold(f64::INFINITY, f64::min);
    // Any of the k lowest states has energy at most E0 + (k-1)·min √μ.
    let bound = ground + (k.saturating_sub(1)) as f64 * min_freq;
    let mut states = Vec::new();
    let mut idx = vec![0usize; d];
    enumerate_states(&freq, bound * (1.0 + TIE_TOL), 0, ground, &mut idx, &mut states);
    states.sort_by(|s, t| {
        let tie = (s.energy - t.energy).abs() <= TIE_TOL * s.energy.abs().max(1.0);
        if tie {
            s.indices.cmp(&t.indices)
        } else {
            s.energy.total_cmp(&t.energy)
        }
    });
    states.truncate(k);
    Ok(OscillatorReference {
        matrix: a.to_owned(),
        rotation,
        mu,
        states,
    })
}

fn enumerate_states(
    freq: &[f64],
    bound: f64,
    dim: usize,
    energy: f64,
    idx: &mut Vec<usize>,
    out: &mut Vec<OscillatorState>,
) {
    if dim == freq.len() {
        out.push(OscillatorState {
            indices: idx.clone(),
            energy,
        });
        return;
    }
    let mut n = 0;
    loop {
        let e = energy + n as f64 * freq[dim];
        if e > bound {
            break;
        }
        idx[dim] = n;
        enumerate_states(freq, bound, dim + 1, e, idx, out);
        n += 1;
    }
    idx[dim] = 0;
}

/// Coefficients of the coupled two-dimensional oscillator.
pub fn coupled_2d_matrix() -> Array2<f64> {
    array![[0.8851, -0.1382], [-0.1382, 1.1933]]
}

/// Coefficients of the coupled five-dimensional oscillator.
pub fn five_dim_matrix() -> Array2<f64> {
    array![
        [1.05886042, 0.01365034, 0.09163945, 0.11975290, 0.05625013],
        [0.01365034, 1.09613742, 0.10887930, 0.07448974, 0.07407652],
        [0.09163945, 0.10887930, 1.00935913, 0.05588543, 0.08968956],
        [0.11975290, 0.07448974, 0.05588543, 1.17627129, 0.06049045],
        [0.05625013, 0.07407652, 0.08968956, 0.06049045, 0.94969417],
    ]
}

/// Hydrogen levels `(−1/(2n²), n²)` for `n = 1..=n_max`.
pub fn hydrogen_energies(n_max: usize) -> Result<Vec<(f64, usize)>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    Ok((1..=n_max).map(|n| (-0.5 / (n * n) as f64, n * n)).collect())
}

/// The lowest `k` hydrogen energies, repeated by multiplicity.
pub fn hydrogen_spectrum(k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    let mut n = 1usize;
    while out.len() < k {
        let e = -0.5 / (n * n) as f64;
        out.extend(std::iter::repeat_n(e, (n * n).min(k - out.len())));
        n += 1;
    }
    out
}

/// Lowest `k` Dirichlet Laplacian eigenvalues `π² Σ m_i²/L_i²` on a box
/// with side lengths `lengths`, with their multi-indices (each ≥ 1). Ties
/// are ordered lexicographically.
pub fn box_laplace_states(lengths: &[f64], k: usize) -> Vec<(Vec<usize>, f64)> {
    let inv: Vec<f64> = lengths.iter().map(|l| PI * PI / (l * l)).collect();
    let base: f64 = inv.iter().sum();
    let smallest = inv.iter().cloned().fold(f64::INFINITY, f64::min);
    // (k, 1, …, 1) along the longest side bounds the k-th level from above.
    let cap = (base + ((k * k) as f64 - 1.0) * smallest) * (1.0 + TIE_TOL);
    let mut out = Vec::new();
    let mut idx = vec![1usize; lengths.len()];
    fn walk(inv: &[f64], cap: f64, dim: usize, e: f64, idx: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
        if dim == inv.len() {
            out.push((idx.clone(), e));
            return;
        }
        let mut m = 1;
        loop {
            // Energy with this index and every later index at 1.
            let later: f64 = inv[dim + 1..].iter().sum();
            let here = e + (m * m) as f64 * inv[dim];
            if here + later > cap {
                break;
            }
            idx[dim] = m;
            walk(inv, cap, dim + 1, here, idx, out);
            m += 1;
        }
        idx[dim] = 1;
    }
    walk(&inv, cap, 0, 0.0, &mut idx, &mut out);
    out.sort_by(|a, b| {
        if (a.1 - b.1).abs() <= TIE_TOL * a.1.abs().max(1.0) {
            a.0.cmp(&b.0)
        } else {
            a.1.total_cmp(&b.1)
        }
    });
    out.truncate(k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_hermite;

    #[test]
    fn hermite_values() {
        assert_eq!(hermite_physicists(2, 1.0), 2.0);
        assert_eq!(hermite_physicists(3, 0.0), 0.0);
        assert_eq!(hermite_physicists(0, 7.0), 1.0);
        assert_eq!(hermite_physicists(4, 0.5), 16.0 * 0.0625 - 48.0 * 0.25 + 12.0);
    }

    #[test]
    fn hermite_orthogonality() {
        let rule = gauss_hermite(20).unwrap();
        let s = rule.integrate(|x| hermite_physicists(2, x) * hermite_physicists(3, x));
        assert!(s.abs() < 1e-10);
    }

    #[test]
    fn hermite_functions_orthonormal_with_correct_derivative() {
        let rule = gauss_hermite(40).unwrap();
        for m in 0..6 {
            for n in 0..6 {
                let s = rule.integrate(|t| hermite_function_reduced(m, t).0 * hermite_function_reduced(n, t).0);
                assert!((s - if m == n { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
            let f = HermiteFactor { n: m, mu: 1.7 };
            let h = 1e-5;
            for &y in &[-1.3, 0.0, 0.4, 2.2] {
                let fd = (f.eval(y + h).0 - f.eval(y - h).0) / (2.0 * h);
                assert!((fd - f.eval(y).1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_oscillator_energies() {
        let r = oscillator_states(Array2::eye(2).view(), 16).unwrap();
        let expected = [1., 2., 2., 3., 3., 3., 4., 4., 4., 4., 5., 5., 5., 5., 5., 6.];
        assert_eq!(r.energies(), expected.to_vec());
        assert!(r.is_axis_aligned());
        assert_eq!(r.states[1].indices, vec![0, 1]);
        assert_eq!(r.states[2].indices, vec![1, 0]);
        assert_eq!(r.levels().iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 1]);
    }

    #[test]
    fn coupled_energies() {
        let r = oscillator_states(coupled_2d_matrix().view(), 16).unwrap();
        let table = [
            1.014291981649766, 1.926545852963290, 2.130622073635773, 2.838799724276814, 3.042875944949297,
            3.246952165621781, 3.751053595590338, 3.955129816262821, 4.159206036935306, 4.363282257607788,
            4.663307466903863, 4.867383687576346, 5.071459908248830, 5.275536128921312, 5.479612349593796,
            5.575561338217387,
        ];
        for (e, t) in r.energies().iter().zip(&table) {
            assert!((e - t).abs() < 1e-13, "{e} vs {t}");
        }
        let five = oscillator_states(five_dim_matrix().view(), 4).unwrap();
        // The printed matrix is rounded to 8 digits; its exact E0 sits 4e-11 from the tabulated one.
        assert!((five.states[0].energy - 2.562993697776131).abs() < 1e-10);
    }

    #[test]
    fn enumeration_is_complete() {
        for d in 1..=5 {
            let a = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 + 0.37 * i as f64 } else { 0.0 });
            let r = oscillator_states(a.view(), 16).unwrap();
            let freq: Vec<f64> = (0..d).map(|i| a[[i, i]].sqrt()).collect();
            let mut all = Vec::new();
            let max = 16;
            let mut idx = vec![0usize; d];
            loop {
                if idx.iter().sum::<usize>() <= max {
                    let e: f64 = idx.iter().zip(&freq).map(|(&n, f)| (n as f64 + 0.5) * f).sum();
                    all.push(e);
                }
                let mut t = 0;
                while t < d {
                    idx[t] += 1;
                    if idx[t] <= max {
                        break;
                    }
                    idx[t] = 0;
                    t += 1;
                }
                if t == d {
                    break;
                }
            }
            all.sort_by(f64::total_cmp);
            for (e, b) in r.energies().iter().zip(&all) {
                assert!((e - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotated_state_matches_direct_formula() {
        let r = oscillator_states(coupled_2d_matrix().view(), 6).unwrap();
        let x = [0.3, -0.7];
        let y = r.rotate(&x);
        for s in 0..6 {
            let (ln_g, v, _) = r.eval_reduced(s, &x);
            let direct: f64 = r
                .factors(s)
                .iter()
                .zip(&y)
                .map(|(f, &yi)| {
                    let sc = f.mu.powf(0.25);
                    let norm = (sc / (2f64.powi(f.n as i32) * (1..=f.n).product::<usize>() as f64 * PI.sqrt())).sqrt();
                    norm * hermite_physicists(f.n, sc * yi) * (-f.mu.sqrt() * yi * yi / 2.0).exp()
                })
                .product();
            assert!((v * ln_g.exp() - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn hydrogen_levels() {
        let h = hydrogen_energies(3).unwrap();
        assert_eq!(h[0], (-0.5, 1));
        assert_eq!(h[2].1, 9);
        assert!((h[2].0 + 1.0 / 18.0).abs() < 1e-16);
        let s = hydrogen_spectrum(15);
        assert_eq!(s.len(), 15);
        assert_eq!(s[0], -0.5);
        assert!(s[1..5].iter().all(|&e| e == -0.125));
        assert!(s[5..14].iter().all(|&e| e == -0.5 / 9.0));
        assert_eq!(s[14], -0.5 / 16.0);
        assert!(hydrogen_energies(0).is_err());
    }

    #[test]
    fn box_spectrum() {
        let s = box_laplace_states(&[1.0, 1.0], 4);
        let pi2 = PI * PI;
        assert_eq!(s[0], (vec![1, 1], 2.0 * pi2));
        assert_eq!(s[1], (vec![1, 2], 5.0 * pi2));
        assert_eq!(s[2], (vec![2, 1], 5.0 * pi2));
        assert_eq!(s[3], (vec![2, 2], 8.0 * pi2));
        let long = box_laplace_states(&[2.0, 1.0], 3);
        assert_eq!(long[0].0, vec![1, 1]);
        assert_eq!(long[1].0, vec![2, 1]);
        assert_eq!(long[2].0, vec![3, 1]);
        assert!((long[2].1 - pi2 * (9.0 / 4.0 + 1.0)).abs() < 1e-12);
    }
}
