//! Low-rank assembly of the k×k matrices `A_mn = a(Ψ_m, Ψ_n)` and
//! `B_mn = b(Ψ_m, Ψ_n)`, and the reverse pass from matrix adjoints to the
//! flat parameter gradient.
//!
//! Every term of a separable form reduces to products of 1D factor
//! matrices `F[j,l] = Σ_q ω_q W(x_q) Dᵅφ̂_{j,m}(x_q) Dᵅ'φ̂_{l,n}(x_q)`,
//! computed once per (pair, dimension, distinct kernel) and shared between
//! A, B and the gradient.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forms::{Kernel1D, ProblemForms, SeparableBilinearForm};
use crate::tnn::{ComponentTable, DimGrid, TnnModel};

/// The assembled Gram matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledPair {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

/// Operation counts of one assembly, for complexity checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssemblyStats {
    /// Node-level multiply-adds spent on factor matrices.
    pub factor_ops: u64,
    /// Entry-level multiplies spent combining factors into A and B.
    pub product_ops: u64,
}

/// A form term rewritten in terms of per-dimension kernel slots.
#[derive(Clone, Debug)]
struct TermSlots {
    coeff: f64,
    kernel: Vec<usize>,
    is_mass: bool,
}

/// Factor matrices for all `m ≤ n` pairs.
#[derive(Clone, Debug)]
pub struct FactorTable {
    pairs: Vec<(usize, usize)>,
    kernels: Vec<Vec<Kernel1D>>,
    /// `[pair][dim][kernel]`, each `p_m × p_n`.
    data: Vec<Vec<Vec<Array2<f64>>>>,
}

impl FactorTable {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Distinct kernels used in dimension `i`.
    pub fn kernels(&self, i: usize) -> &[Kernel1D] {
        &self.kernels[i]
    }

    /// Factor for `m ≤ n`, dimension `i` and kernel slot `s`.
    pub fn get(&self, m: usize, n: usize, i: usize, s: usize) -> Option<ArrayView2<'_, f64>> {
        let idx = self.pairs.iter().position(|&pr| pr == (m, n))?;
        Some(self.data[idx][i][s].view())
    }

    pub fn kernel_slot(&self, i: usize, kernel: &Kernel1D) -> Option<usize> {
        self.kernels[i].iter().position(|k| k == kernel)
    }
}

/// Everything computed by one forward assembly, reusable by the reverse pass.
pub struct Assembly<'a> {
    model: &'a TnnModel,
    grids: Vec<DimGrid>,
    tables: Vec<Vec<ComponentTable>>,
    /// `[dim][kernel]` → `(ω W, ∂(ω W)/∂β)`.
    kernel_weights: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    a_terms: Vec<TermSlots>,
    b_terms: Vec<TermSlots>,
    factors: FactorTable,
    pair: AssembledPair,
    stats: AssemblyStats,
}

fn pair_list(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|m| (m..k).map(move |n| (m, n))).collect()
}

fn slot_terms(form: &SeparableBilinearForm, kernels: &mut [Vec<Kernel1D>], is_mass: bool) -> Vec<TermSlots> {
    form.terms()
        .iter()
        .map(|t| TermSlots {
            coeff: t.coeff,
            kernel: t
                .kernels
                .iter()
                .enumerate()
                .map(|(i, k)| match kernels[i].iter().position(|x| x == k) {
                    Some(s) => s,
                    None => {
                        kernels[i].push(*k);
                        kernels[i].len() - 1
                    }
                })
                .collect(),
            is_mass,
        })
        .collect()
}

#[inline]
fn side<'t>(table: &'t ComponentTable, deriv: u8) -> &'t Array2<f64> {
    if deriv == 0 {
        &table.values
    } else {
        &table.derivs
    }
}

/// Assembles A and B for the current model parameters.
pub fn assemble<'a>(model: &'a TnnModel, forms: &ProblemForms, exec: Exec) -> Result<Assembly<'a>> {
    let d = model.d();
    let k = model.k();
    if forms.dim() != d {
        return Err(Error::Shape(format!("forms are {}-dimensional, model is {d}-dimensional", forms.dim())));
    }
    let grids = model.grids()?;
    let flat_tables = exec.map_range(k * d, |t| model.component_values(t / d, t % d, &grids[t % d]));
    let mut tables: Vec<Vec<ComponentTable>> = (0..k).map(|_| Vec::with_capacity(d)).collect();
    for (t, table) in flat_tables.into_iter().enumerate() {
        tables[t / d].push(table?);
    }

    let mut kernels: Vec<Vec<Kernel1D>> = vec![Vec::new(); d];
    let a_terms = slot_terms(&forms.a, &mut kernels, false);
    let b_terms = slot_terms(&forms.b, &mut kernels, true);
    let kernel_weights: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..d)
        .map(|i| kernels[i].iter().map(|kn| grids[i].kernel_weights(kn.weight)).collect())
        .collect();
    for (i, ws) in kernel_weights.iter().enumerate() {
        for (s, (w, _)) in ws.iter().enumerate() {
            if let Some(q) = w.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "kernel weight {:?} not finite at node {q} of dimension {i} (slot {s})",
                    kernels[i][s].weight
                )));
            }
        }
    }

    let pairs = pair_list(k);
    let flat_factors = exec.map_range(pairs.len() * d, |t| {
        let (m, n) = pairs[t / d];
        let i = t % d;
        kernels[i]
            .iter()
            .zip(&kernel_weights[i])
            .map(|(kn, (w, _))| {
                let left = side(&tables[m][i], kn.deriv_left);
                let right = side(&tables[n][i], kn.deriv_right);
                let wv = ArrayView2::from_shape((1, w.len()), w).expect("row");
                let weighted = left * &wv;
                weighted.dot(&right.t())
            })
            .collect::<Vec<_>>()
    });
    let mut data: Vec<Vec<Vec<Array2<f64>>>> = (0..pairs.len()).map(|_| Vec::with_capacity(d)).collect();
    for (t, f) in flat_factors.into_iter().enumerate() {
        data[t / d].push(f);
    }
    let mut stats = AssemblyStats::default();
    for (pi, &(m, n)) in pairs.iter().enumerate() {
        let (pm, pn) = (model.tnns()[m].rank() as u64, model.tnns()[n].rank() as u64);
        for i in 0..d {
            stats.factor_ops += kernels[i].len() as u64 * pm * pn * grids[i].len() as u64;
            for (s, f) in data[pi][i].iter().enumerate() {
                if f.iter().any(|v| !v.is_finite()) {
                    let term = a_terms
                        .iter()
                        .chain(&b_terms)
                        .position(|t| t.kernel[i] == s)
                        .unwrap_or(0);
                    return Err(Error::NonFiniteFactor { m, n, dim: i, term });
                }
            }
        }
        stats.product_ops += (a_terms.len() + b_terms.len()) as u64 * pm * pn * d as u64;
    }
    let factors = FactorTable { pairs, kernels, data };

    let entries = exec.map_range(factors.pairs.len(), |pi| {
        let (m, n) = factors.pairs[pi];
        let cm = &model.tnns()[m].coeffs;
        let cn = &model.tnns()[n].coeffs;
        let f = &factors.data[pi];
        let eval = |terms: &[TermSlots]| -> f64 {
            terms
                .iter()
                .map(|t| t.coeff * contract(cm, cn, f, &t.kernel))
                .sum()
        };
        (eval(&a_terms), eval(&b_terms))
    });
    let mut a = Array2::zeros((k, k));
    let mut b = Array2::zeros((k, k));
    for (&(m, n), (av, bv)) in factors.pairs.iter().zip(entries) {
        a[[m, n]] = av;
        a[[n, m]] = av;
        b[[m, n]] = bv;
        b[[n, m]] = bv;
    }
    Ok(Assembly {
        model,
        grids,
        tables,
        kernel_weights,
        a_terms,
        b_terms,
        factors,
        pair: AssembledPair { a, b },
        stats,
    })
}

/// `Σ_{j,l} c_m[j] c_n[l] Π_i F_i[j,l]` for one term.
fn contract(cm: &Array1<f64>, cn: &Array1<f64>, f: &[Vec<Array2<f64>>], slots: &[usize]) -> f64 {
    let mut total = 0.0;
    for j in 0..cm.len() {
        let mut row = 0.0;
        for l in 0..cn.len() {
            let mut prod = cn[l];
            for (i, &s) in slots.iter().enumerate() {
                prod *= f[i][s][[j, l]];
            }
            row += prod;
        }
        total += cm[j] * row;
    }
    total
}

/// Adjoints for one pair: coefficient gradients and `∂/∂F` per (dim, kernel slot).
struct PairAdjoint {
    bar_cm: Vec<f64>,
    bar_cn: Vec<f64>,
    bar_f: Vec<Vec<Option<Array2<f64>>>>,
}

impl Assembly<'_> {
    pub fn pair(&self) -> &AssembledPair {
        &self.pair
    }

    pub fn into_pair(self) -> AssembledPair {
        self.pair
    }

    pub fn factors(&self) -> &FactorTable {
        &self.factors
    }

    pub fn stats(&self) -> AssemblyStats {
        self.stats
    }

    pub fn grids(&self) -> &[DimGrid] {
        &self.grids
    }

    /// Normalized component table of TNN `l` in dimension `i`.
    pub fn table(&self, l: usize, i: usize) -> &ComponentTable {
        &self.tables[l][i]
    }

    /// Gradient of `Σ_mn G_A[m,n] A_mn + G_B[m,n] B_mn` with respect to the
    /// flat parameter vector of the model.
    pub fn gradient(&self, g_a: ArrayView2<f64>, g_b: ArrayView2<f64>, exec: Exec) -> Result<Vec<f64>> {
        let model = self.model;
        let k = model.k();
        let d = model.d();
        if g_a.dim() != (k, k) || g_b.dim() != (k, k) {
            return Err(Error::Shape(format!("adjoints {:?}/{:?}, expected ({k}, {k})", g_a.dim(), g_b.dim())));
        }
        let pairs = &self.factors.pairs;

        let adjoints = exec.map_range(pairs.len(), |pi| self.pair_adjoint(pi, g_a, g_b));

        // Reverse through the factor contractions, one task per (TNN, dimension).
        let blocks = exec.map_range(k * d, |t| -> Result<_> {
            let (l, i) = (t / d, t % d);
            let table = &self.tables[l][i];
            let mut bar_v = Array2::<f64>::zeros(table.values.dim());
            let mut bar_d = Array2::<f64>::zeros(table.values.dim());
            let mut bar_beta = 0.0;
            for (pi, &(m, n)) in pairs.iter().enumerate() {
                if m != l && n != l {
                    continue;
                }
                for (s, kn) in self.factors.kernels[i].iter().enumerate() {
                    let Some(bf) = &adjoints[pi].bar_f[i][s] else { continue };
                    let (w, dw) = &self.kernel_weights[i][s];
                    let wv = ArrayView2::from_shape((1, w.len()), w).expect("row");
                    let left = side(&self.tables[m][i], kn.deriv_left);
                    let right = side(&self.tables[n][i], kn.deriv_right);
                    if m == l {
                        let contrib = bf.dot(right) * &wv;
                        let target = if kn.deriv_left == 0 { &mut bar_v } else { &mut bar_d };
                        *target += &contrib;
                        if self.grids[i].beta.is_some() {
                            // ∂F/∂β through the kernel weights, counted once per pair.
                            let lr = bf.dot(right);
                            bar_beta += (&lr * left).sum_axis(Axis(0)).iter().zip(dw).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    if n == l {
                        let contrib = bf.t().dot(left) * &wv;
                        let target = if kn.deriv_right == 0 { &mut bar_v } else { &mut bar_d };
                        *target += &contrib;
                    }
                }
            }
            let mut block = model.component_backward(l, i, &self.grids[i], table, bar_v.view(), bar_d.view())?;
            block.beta += bar_beta;
            Ok(block)
        });

        let layout = model.layout();
        let mut grad = vec![0.0; layout.total];
        for (pi, &(m, n)) in pairs.iter().enumerate() {
            let adj = &adjoints[pi];
            let om = layout.tnns[m].coeffs;
            let on = layout.tnns[n].coeffs;
            for (j, v) in adj.bar_cm.iter().enumerate() {
                grad[om + j] += v;
            }
            for (j, v) in adj.bar_cn.iter().enumerate() {
                grad[on + j] += v;
            }
        }
        let mut bar_beta = vec![0.0; d];
        for (t, block) in blocks.into_iter().enumerate() {
            let block = block?;
            let (l, i) = (t / d, t % d);
            let off = layout.tnns[l].subnets[i];
            grad[off..off + block.subnet.len()].copy_from_slice(&block.subnet);
            if let (Some(g), Some(off)) = (&block.gamma, layout.tnns[l].gammas[i]) {
                grad[off..off + g.len()].copy_from_slice(g);
            }
            bar_beta[i] += block.beta;
        }
        for (i, off) in layout.log_beta.iter().enumerate() {
            if let Some(off) = off {
                grad[*off] = bar_beta[i] * model.beta(i).expect("unbounded");
            }
        }
        if let Some(index) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        Ok(grad)
    }

    fn pair_adjoint(&self, pi: usize, g_a: ArrayView2<f64>, g_b: ArrayView2<f64>) -> PairAdjoint {
        let (m, n) = self.factors.pairs[pi];
        let d = self.model.d();
        let cm = &self.model.tnns()[m].coeffs;
        let cn = &self.model.tnns()[n].coeffs;
        let (pm, pn) = (cm.len(), cn.len());
        let f = &self.factors.data[pi];
        // Only the upper triangle is assembled; (n,m) mirrors (m,n).
        let sym = |g: ArrayView2<f64>| if m == n { g[[m, m]] } else { g[[m, n]] + g[[n, m]] };
        let (wa, wb) = (sym(g_a), sym(g_b));
        let mut bar_cm = vec![0.0; pm];
        let mut bar_cn = vec![0.0; pn];
        let mut bar_f: Vec<Vec<Option<Array2<f64>>>> =
            (0..d).map(|i| vec![None; self.factors.kernels[i].len()]).collect();
        let mut prefix = vec![0.0; d + 1];
        let mut suffix = vec![0.0; d + 1];
        for term in self.a_terms.iter().chain(&self.b_terms) {
            let w = term.coeff * if term.is_mass { wb } else { wa };
            if w == 0.0 {
                continue;
            }
            for i in 0..d {
                bar_f[i][term.kernel[i]].get_or_insert_with(|| Array2::zeros((pm, pn)));
            }
            for j in 0..pm {
                for l in 0..pn {
                    prefix[0] = 1.0;
                    for i in 0..d {
                        prefix[i + 1] = prefix[i] * f[i][term.kernel[i]][[j, l]];
                    }
                    suffix[d] = 1.0;
                    for i in (0..d).rev() {
                        suffix[i] = suffix[i + 1] * f[i][term.kernel[i]][[j, l]];
                    }
                    let full = prefix[d];
                    bar_cm[j] += w * cn[l] * full;
                    bar_cn[l] += w * cm[j] * full;
                    let cc = w * cm[j] * cn[l];
                    for i in 0..d {
                        bar_f[i][term.kernel[i]].as_mut().expect("allocated")[[j, l]] += cc * prefix[i] * suffix[i + 1];
                    }
                }
            }
        }
        PairAdjoint { bar_cm, bar_cn, bar_f }
    }
}

/// Convenience wrapper: assemble and differentiate in one call.
pub fn assemble_gradient(
    model: &TnnModel,
    forms: &ProblemForms,
    g_a: ArrayView2<f64>,
    g_b: ArrayView2<f64>,
    exec: Exec,
) -> Result<Vec<f64>> {
    assemble(model, forms, exec)?.gradient(g_a, g_b, exec)
}
