//! Separable bilinear forms.
//!
//! A form is a sum of terms; each term is a coefficient times a product over
//! dimensions of 1D kernels `∫ W(x) Dᵅu(x) Dᵅ'v(x) dx`. Forms are written in
//! physical coordinates. Any change of variables for unbounded dimensions is
//! handled during assembly.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tnn::DimensionSpec;

/// 1D weight function of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    #[default]
    One,
    /// `x^k`
    Power(i32),
    Sin,
    /// `1 / sin x`
    InvSin,
}

impl Weight {
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            Weight::One => 1.0,
            Weight::Power(k) => x.powi(k),
            Weight::Sin => x.sin(),
            Weight::InvSin => 1.0 / x.sin(),
        }
    }

    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Weight::One => 0.0,
            Weight::Power(0) => 0.0,
            Weight::Power(k) => k as f64 * x.powi(k - 1),
            Weight::Sin => x.cos(),
            Weight::InvSin => {
                let s = x.sin();
                -x.cos() / (s * s)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel1D {
    pub weight: Weight,
    pub deriv_left: u8,
    pub deriv_right: u8,
}

impl Kernel1D {
    pub const fn mass(weight: Weight) -> Self {
        Self {
            weight,
            deriv_left: 0,
            deriv_right: 0,
        }
    }

    pub const fn stiffness(weight: Weight) -> Self {
        Self {
            weight,
            deriv_left: 1,
            deriv_right: 1,
        }
    }

    pub fn transposed(self) -> Self {
        Self {
            weight: self.weight,
            deriv_left: self.deriv_right,
            deriv_right: self.deriv_left,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormTerm {
    pub coeff: f64,
    pub kernels: Vec<Kernel1D>,
}

impl FormTerm {
    fn transposed(&self) -> FormTerm {
        FormTerm {
            coeff: self.coeff,
            kernels: self.kernels.iter().map(|k| k.transposed()).collect(),
        }
    }

    fn is_self_transposed(&self) -> bool {
        self.kernels.iter().all(|k| k.deriv_left == k.deriv_right)
    }
}

/// Symmetric bilinear form given as a sum of separable terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableBilinearForm {
    dim: usize,
    terms: Vec<FormTerm>,
}

impl SeparableBilinearForm {
    pub fn new(dim: usize, terms: Vec<FormTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("form needs at least one term".into()));
        }
        for (t, term) in terms.iter().enumerate() {
            if term.kernels.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "term {t} has {} kernels, form dimension is {dim}",
                    term.kernels.len()
                )));
            }
            if !term.coeff.is_finite() {
                return Err(Error::InvalidArgument(format!("term {t} has non-finite coefficient")));
            }
            if term.kernels.iter().any(|k| k.deriv_left > 1 || k.deriv_right > 1) {
                return Err(Error::InvalidArgument(format!(
                    "term {t}: derivative orders must be 0 or 1"
                )));
            }
        }
        for (t, term) in terms.iter().enumerate() {
            if !term.is_self_transposed() && !terms.contains(&term.transposed()) {
                return Err(Error::InvalidArgument(format!(
                    "term {t} has no transposed partner; form is not symmetric"
                )));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[FormTerm] {
        &self.terms
    }

    /// A single mass term with positive weights, as required of `b`.
    pub fn is_mass_form(&self) -> bool {
        self.terms.len() == 1
            && self.terms[0].coeff > 0.0
            && self.terms[0]
                .kernels
                .iter()
                .all(|k| k.deriv_left == 0 && k.deriv_right == 0)
    }
}

/// The pair (a, b) defining `a(u, v) = λ b(u, v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemForms {
    pub a: SeparableBilinearForm,
    pub b: SeparableBilinearForm,
}

impl ProblemForms {
    pub fn new(a: SeparableBilinearForm, b: SeparableBilinearForm) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::InvalidArgument(format!(
                "a-form dimension {} differs from b-form dimension {}",
                a.dim(),
                b.dim()
            )));
        }
        if !b.is_mass_form() {
            return Err(Error::InvalidArgument(
                "b-form must be a single positive mass term".into(),
            ));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

/// One separable potential term `coeff · Π_i W_i(x_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerm {
    pub coeff: f64,
    pub factors: Vec<Weight>,
}

/// `kinetic_coeff · ∫∇u·∇v + ∫ V u v` with `V = Σ potential`, and the unit
/// mass form.
pub fn laplace_plus_potential(
    dims: &[DimensionSpec],
    kinetic_coeff: f64,
    potential: &[PotentialTerm],
) -> Result<ProblemForms> {
    let d = dims.len();
    if d == 0 {
        return Err(Error::InvalidArgument("problem needs at least one dimension".into()));
    }
    let mut terms = kinetic_terms(d, kinetic_coeff);
    for (s, v) in potential.iter().enumerate() {
        if v.factors.len() != d {
            return Err(Error::InvalidArgument(format!(
                "potential term {s} has {} factors but the problem has {d} dimensions; \
                 only separable potentials are supported",
                v.factors.len()
            )));
        }
        terms.push(FormTerm {
            coeff: v.coeff,
            kernels: v.factors.iter().map(|&w| Kernel1D::mass(w)).collect(),
        });
    }
    let a = SeparableBilinearForm::new(d, terms)?;
    let b = SeparableBilinearForm::new(
        d,
        vec![FormTerm {
            coeff: 1.0,
            kernels: vec![Kernel1D::mass(Weight::One); d],
        }],
    )?;
    ProblemForms::new(a, b)
}

/// `coeff · ∫∇u·∇v` in Cartesian coordinates.
pub fn kinetic_form(d: usize, coeff: f64) -> Result<SeparableBilinearForm> {
    SeparableBilinearForm::new(d, kinetic_terms(d, coeff))
}

fn kinetic_terms(d: usize, coeff: f64) -> Vec<FormTerm> {
    (0..d)
        .map(|s| FormTerm {
            coeff,
            kernels: (0..d)
                .map(|i| {
                    if i == s {
                        Kernel1D::stiffness(Weight::One)
                    } else {
                        Kernel1D::mass(Weight::One)
                    }
                })
                .collect(),
        })
        .collect()
}

/// Separable expansion of `scale · xᵀ A x`: `d(d+1)/2` terms, off-diagonal
/// coefficients counted twice.
pub fn quadratic_potential(a: ArrayView2<f64>, scale: f64) -> Result<Vec<PotentialTerm>> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::Shape(format!("quadratic form matrix is {r}x{c}")));
    }
    let mut out = Vec::with_capacity(r * (r + 1) / 2);
    for i in 0..r {
        for j in i..r {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 * a[[i, j]].abs().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "quadratic form matrix is not symmetric at ({i},{j})"
                )));
            }
            let mut factors = vec![Weight::One; r];
            let coeff = if i == j {
                factors[i] = Weight::Power(2);
                scale * a[[i, i]]
            } else {
                factors[i] = Weight::Power(1);
                factors[j] = Weight::Power(1);
                2.0 * scale * a[[i, j]]
            };
            out.push(PotentialTerm { coeff, factors });
        }
    }
    Ok(out)
}

/// Hydrogen Hamiltonian `-½Δ - 1/r` in spherical coordinates `(r, θ, φ)`
/// with the Jacobian `r² sin θ` folded into the kernels.
pub fn hydrogen_spherical() -> ProblemForms {
    use Weight::*;
    let term = |coeff: f64, k: [Kernel1D; 3]| FormTerm {
        coeff,
        kernels: k.to_vec(),
    };
    let a = SeparableBilinearForm::new(
        3,
        vec![
            term(
                0.5,
                [Kernel1D::stiffness(Power(2)), Kernel1D::mass(Sin), Kernel1D::mass(One)],
            ),
            term(
                0.5,
                [Kernel1D::mass(One), Kernel1D::stiffness(Sin), Kernel1D::mass(One)],
            ),
            term(
                0.5,
                [Kernel1D::mass(One), Kernel1D::mass(InvSin), Kernel1D::stiffness(One)],
            ),
            term(
                -1.0,
                [Kernel1D::mass(Power(1)), Kernel1D::mass(Sin), Kernel1D::mass(One)],
            ),
        ],
    )
    .expect("hydrogen a-form is well formed");
    let b = SeparableBilinearForm::new(
        3,
        vec![term(
            1.0,
            [Kernel1D::mass(Power(2)), Kernel1D::mass(Sin), Kernel1D::mass(One)],
        )],
    )
    .expect("hydrogen b-form is well formed");
    ProblemForms { a, b }
}
