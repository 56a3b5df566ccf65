//! Exact polynomial vector fields with additive control.
//!
//! A system has the form dx/dt = F(x) + u where every component of F is a
//! multivariate polynomial held exactly as (coefficient, exponent-vector)
//! terms. Differentiation is symbolic (power rule), so Jacobians carry no
//! discretization error. For planar systems the module also provides the
//! reciprocal change of coordinates x̂ = 1/x, ŷ = 1/y, under which
//!
//!   dx̂/dt = −x̂² (f(1/x̂, 1/ŷ) + u₁),  dŷ/dt = −ŷ² (g(1/x̂, 1/ŷ) + u₂),
//!
//! evaluated as a numerator polynomial over a monomial denominator after
//! clearing fractions. Clearing fractions rescales trajectory speed but not
//! flow direction, and only the direction of the reciprocal field is ever
//! consumed.
//!
//! Terms are exchanged as dense exponent vectors but stored with only their
//! nonzero (variable, exponent) factors, so evaluation and memory scale with
//! the number of active variables per term rather than the ambient dimension
//! (the network generators reach dimension 400).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One monomial term: `coeff * x1^e1 * ... * xn^en`, dense form.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

impl Term {
    pub fn new(coeff: f64, exponents: Vec<u32>) -> Self {
        Term { coeff, exponents }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

/// Graded-lexicographic order on dense exponent vectors: lower total degree
/// first, then lexicographically with earlier variables dominant (so for two
/// variables: 1, x, y, x², xy, y², x³, ...).
pub fn grlex(a: &[u32], b: &[u32]) -> Ordering {
    let (da, db): (u32, u32) = (a.iter().sum(), b.iter().sum());
    da.cmp(&db).then_with(|| b.cmp(a))
}

/// Same order on sparse factor lists (sorted by variable index).
fn grlex_sparse(a: &[(u32, u32)], b: &[(u32, u32)]) -> Ordering {
    let da: u32 = a.iter().map(|f| f.1).sum();
    let db: u32 = b.iter().map(|f| f.1).sum();
    da.cmp(&db).then_with(|| {
        let mut ia = 0;
        let mut ib = 0;
        loop {
            match (a.get(ia), b.get(ib)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Less,
                (None, Some(_)) => return Ordering::Greater,
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va != vb {
                        return va.cmp(&vb);
                    }
                    if ea != eb {
                        return eb.cmp(&ea);
                    }
                    ia += 1;
                    ib += 1;
                }
            }
        }
    })
}

/// All dense exponent vectors of total degree ≤ `max_degree` over `dim`
/// variables, in graded-lexicographic order (constant first).
pub fn monomials(dim: usize, max_degree: u32) -> Vec<Vec<u32>> {
    fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
        if pos == cur.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for e in (0..=left).rev() {
            cur[pos] = e;
            fill(out, cur, pos + 1, left - e);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; dim];
    for deg in 0..=max_degree {
        fill(&mut out, &mut cur, 0, deg);
    }
    out
}

/// Internal term: coefficient and sorted nonzero (variable, exponent) pairs.
#[derive(Debug, Clone, PartialEq)]
struct SparseTerm {
    coeff: f64,
    factors: Vec<(u32, u32)>,
}

fn dense_to_factors(exponents: &[u32]) -> Vec<(u32, u32)> {
    exponents
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(v, &e)| (v as u32, e))
        .collect()
}

/// A multivariate polynomial in canonical form: terms merged by exponent
/// vector, zero coefficients dropped, graded-lexicographic term order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<SparseTerm>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            if t.exponents.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "term exponent vector",
                    expected: dim,
                    got: t.exponents.len(),
                });
            }
            if !t.coeff.is_finite() {
                return Err(Error::NonFinite("polynomial coefficient"));
            }
        }
        Ok(Self::canonical(
            dim,
            terms
                .into_iter()
                .map(|t| SparseTerm {
                    coeff: t.coeff,
                    factors: dense_to_factors(&t.exponents),
                })
                .collect(),
        ))
    }

    fn canonical(dim: usize, terms: Vec<SparseTerm>) -> Self {
        let mut merged: BTreeMap<Vec<(u32, u32)>, f64> = BTreeMap::new();
        for t in terms {
            *merged.entry(t.factors).or_insert(0.0) += t.coeff;
        }
        let mut terms: Vec<SparseTerm> = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(factors, coeff)| SparseTerm { coeff, factors })
            .collect();
        terms.sort_by(|a, b| grlex_sparse(&a.factors, &b.factors));
        Polynomial { dim, terms }
    }

    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Polynomial::canonical(
            dim,
            vec![SparseTerm {
                coeff: c,
                factors: Vec::new(),
            }],
        )
    }

    /// The monomial `x_var`.
    pub fn variable(dim: usize, var: usize) -> Self {
        Polynomial::canonical(
            dim,
            vec![SparseTerm {
                coeff: 1.0,
                factors: vec![(var as u32, 1)],
            }],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of (merged, nonzero) terms.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Materialize terms in canonical order with dense exponent vectors.
    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|t| {
                let mut e = vec![0u32; self.dim];
                for &(v, ex) in &t.factors {
                    e[v as usize] = ex;
                }
                Term::new(t.coeff, e)
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.factors.iter().map(|f| f.1).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut p = t.coeff;
            for &(v, e) in &t.factors {
                let b = x[v as usize];
                p *= match e {
                    1 => b,
                    2 => b * b,
                    3 => b * b * b,
                    _ => b.powi(e as i32),
                };
            }
            acc += p;
        }
        acc
    }

    /// Exact partial derivative with respect to `var`.
    pub fn partial(&self, var: usize) -> Polynomial {
        let var = var as u32;
        let terms = self
            .terms
            .iter()
            .filter_map(|t| {
                let pos = t.factors.iter().position(|&(v, _)| v == var)?;
                let e = t.factors[pos].1;
                let mut factors = t.factors.clone();
                if e == 1 {
                    factors.remove(pos);
                } else {
                    factors[pos].1 = e - 1;
                }
                Some(SparseTerm {
                    coeff: t.coeff * e as f64,
                    factors,
                })
            })
            .collect();
        Polynomial::canonical(self.dim, terms)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        debug_assert_eq!(self.dim, other.dim);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial::canonical(self.dim, terms)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .map(|t| SparseTerm {
                coeff: t.coeff * s,
                factors: t.factors.clone(),
            })
            .collect();
        Polynomial::canonical(self.dim, terms)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        debug_assert_eq!(self.dim, other.dim);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut factors: Vec<(u32, u32)> = Vec::with_capacity(a.factors.len() + b.factors.len());
                let (mut ia, mut ib) = (0, 0);
                while ia < a.factors.len() || ib < b.factors.len() {
                    match (a.factors.get(ia), b.factors.get(ib)) {
                        (Some(&(va, ea)), Some(&(vb, eb))) => {
                            if va == vb {
                                factors.push((va, ea + eb));
                                ia += 1;
                                ib += 1;
                            } else if va < vb {
                                factors.push((va, ea));
                                ia += 1;
                            } else {
                                factors.push((vb, eb));
                                ib += 1;
                            }
                        }
                        (Some(&f), None) => {
                            factors.push(f);
                            ia += 1;
                        }
                        (None, Some(&f)) => {
                            factors.push(f);
                            ib += 1;
                        }
                        (None, None) => unreachable!(),
                    }
                }
                terms.push(SparseTerm {
                    coeff: a.coeff * b.coeff,
                    factors,
                });
            }
        }
        Polynomial::canonical(self.dim, terms)
    }

    /// Fix one variable to a numeric value, returning a polynomial over the
    /// same ambient variables in which `var` no longer occurs. A bifurcation
    /// constraint Q(x, y) = 0 swept at x = t becomes the univariate section
    /// Q(t, y) this way.
    pub fn substitute(&self, var: usize, value: f64) -> Polynomial {
        let var = var as u32;
        let terms = self
            .terms
            .iter()
            .map(|t| match t.factors.iter().position(|&(v, _)| v == var) {
                None => t.clone(),
                Some(pos) => {
                    let e = t.factors[pos].1;
                    let mut factors = t.factors.clone();
                    factors.remove(pos);
                    SparseTerm {
                        coeff: t.coeff * value.powi(e as i32),
                        factors,
                    }
                }
            })
            .collect();
        Polynomial::canonical(self.dim, terms)
    }

    /// Coefficients c0..cd (ascending powers) when the polynomial involves at
    /// most the single variable `var`. Errors if any other variable survives.
    pub fn univariate_coeffs(&self, var: usize) -> Result<Vec<f64>> {
        let var = var as u32;
        let mut coeffs = vec![0.0; self.degree() as usize + 1];
        for t in &self.terms {
            match t.factors.as_slice() {
                [] => coeffs[0] += t.coeff,
                [(v, e)] if *v == var => coeffs[*e as usize] += t.coeff,
                _ => {
                    return Err(Error::DegenerateField(format!(
                        "polynomial is not univariate in variable {var}"
                    )))
                }
            }
        }
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        Ok(coeffs)
    }

    /// Substitute each variable by a linear form of `new_dim` fresh variables:
    /// old variable k becomes sum_j m[(k, j)] * y_j. Used to push latent
    /// polynomial systems through an orthonormal embedding.
    pub fn compose_linear(&self, m: &DMatrix<f64>, new_dim: usize) -> Result<Polynomial> {
        if m.nrows() != self.dim || m.ncols() != new_dim {
            return Err(Error::DimensionMismatch {
                context: "linear substitution matrix rows",
                expected: self.dim,
                got: m.nrows(),
            });
        }
        let lin: Vec<Polynomial> = (0..self.dim)
            .map(|k| {
                let terms = (0..new_dim)
                    .map(|j| SparseTerm {
                        coeff: m[(k, j)],
                        factors: vec![(j as u32, 1)],
                    })
                    .collect();
                Polynomial::canonical(new_dim, terms)
            })
            .collect();
        let mut out = Polynomial::zero(new_dim);
        for t in &self.terms {
            let mut prod = Polynomial::constant(new_dim, t.coeff);
            for &(k, e) in &t.factors {
                for _ in 0..e {
                    prod = prod.mul(&lin[k as usize]);
                }
            }
            out = out.add(&prod);
        }
        Ok(out)
    }
}

/// Jacobian of the field at a point. Control enters additively, so the
/// Jacobian never depends on it. `det` is stored for planar systems where the
/// trace/determinant pair drives classification; three-dimensional systems
/// carry the eigenvalue triple instead.
#[derive(Debug, Clone)]
pub struct JacobianEval {
    pub matrix: DMatrix<f64>,
    pub trace: f64,
    pub det: Option<f64>,
    pub eigenvalues: Option<Vec<Complex64>>,
}

/// Polynomial vector field dx/dt = F(x) + u.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySystem {
    dim: usize,
    components: Vec<Polynomial>,
    control: DVector<f64>,
}

impl PolySystem {
    /// Build from raw terms per component. Duplicate exponent vectors merge,
    /// exact-zero coefficients drop, terms take canonical order.
    pub fn new(dim: usize, components: Vec<Vec<Term>>) -> Result<Self> {
        if components.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "component count",
                expected: dim,
                got: components.len(),
            });
        }
        let components = components
            .into_iter()
            .map(|terms| Polynomial::new(dim, terms))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolySystem {
            dim,
            components,
            control: DVector::zeros(dim),
        })
    }

    pub fn from_polynomials(components: Vec<Polynomial>) -> Result<Self> {
        let dim = components.len();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "component variable count",
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        Ok(PolySystem {
            dim,
            components,
            control: DVector::zeros(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn control(&self) -> &DVector<f64> {
        &self.control
    }

    /// Copy of the system with a different additive control vector.
    pub fn with_control(&self, u: &[f64]) -> Result<PolySystem> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "control vector",
                expected: self.dim,
                got: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control vector"));
        }
        let mut out = self.clone();
        out.control = DVector::from_column_slice(u);
        Ok(out)
    }

    /// F(x) + u.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                expected: self.dim,
                got: x.len(),
            });
        }
        let xs = x.as_slice();
        let mut out = DVector::zeros(self.dim);
        for (i, c) in self.components.iter().enumerate() {
            out[i] = c.eval(xs) + self.control[i];
        }
        Ok(out)
    }

    /// F(x) without the control offset.
    pub fn eval_drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                expected: self.dim,
                got: x.len(),
            });
        }
        let xs = x.as_slice();
        Ok(DVector::from_iterator(
            self.dim,
            self.components.iter().map(|c| c.eval(xs)),
        ))
    }

    /// Exact derivative of component `comp` with respect to variable `var`.
    pub fn partial_derivative(&self, comp: usize, var: usize) -> Polynomial {
        self.components[comp].partial(var)
    }

    /// Precompute all partial derivatives for repeated Jacobian evaluation.
    pub fn jacobian(&self) -> JacobianOracle {
        let partials = (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| self.components[i].partial(j))
                    .collect()
            })
            .collect();
        JacobianOracle {
            dim: self.dim,
            partials,
        }
    }

    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<JacobianEval> {
        self.jacobian().eval(x)
    }

    /// Trace of the Jacobian as a polynomial (planar systems).
    pub fn trace_polynomial(&self) -> Result<Polynomial> {
        if self.dim != 2 {
            return Err(Error::UnsupportedDim {
                required: "2",
                got: self.dim,
            });
        }
        Ok(self.components[0].partial(0).add(&self.components[1].partial(1)))
    }

    /// Determinant of the Jacobian as a polynomial (planar systems).
    pub fn det_polynomial(&self) -> Result<Polynomial> {
        if self.dim != 2 {
            return Err(Error::UnsupportedDim {
                required: "2",
                got: self.dim,
            });
        }
        let fx = self.components[0].partial(0);
        let fy = self.components[0].partial(1);
        let gx = self.components[1].partial(0);
        let gy = self.components[1].partial(1);
        Ok(fx.mul(&gy).add(&fy.mul(&gx).scale(-1.0)))
    }

    /// Reciprocal-plane field for the current control (planar systems).
    /// Rebuild after `with_control`; the control is baked into the numerator.
    pub fn infinity_transform(&self) -> Result<InfinityField> {
        if self.dim != 2 {
            return Err(Error::UnsupportedDim {
                required: "2",
                got: self.dim,
            });
        }
        let mut num = Vec::with_capacity(2);
        let mut den = Vec::with_capacity(2);
        for (i, comp) in self.components.iter().enumerate() {
            // f(1/x̂, 1/ŷ) + u over the common denominator x̂^A ŷ^B.
            let mut terms: Vec<(f64, u32, u32)> = comp
                .terms()
                .iter()
                .map(|t| (t.coeff, t.exponents[0], t.exponents[1]))
                .collect();
            if self.control[i] != 0.0 {
                terms.push((self.control[i], 0, 0));
            }
            let a_max = terms.iter().map(|&(_, a, _)| a).max().unwrap_or(0);
            let b_max = terms.iter().map(|&(_, _, b)| b).max().unwrap_or(0);
            let hat = i == 0;
            let num_terms = terms
                .iter()
                .map(|&(c, a, b)| {
                    // −x̂²·term (or −ŷ²·term), cleared by x̂^A ŷ^B.
                    let (ea, eb) = if hat {
                        (a_max - a + 2, b_max - b)
                    } else {
                        (a_max - a, b_max - b + 2)
                    };
                    Term::new(-c, vec![ea, eb])
                })
                .collect();
            num.push(Polynomial::new(2, num_terms).expect("exponent vectors are length 2"));
            den.push((a_max, b_max));
        }
        Ok(InfinityField {
            num: [num.remove(0), num.remove(0)],
            den: [den[0], den[1]],
        })
    }
}

/// Cached partial derivatives of a system, for hot Jacobian loops.
pub struct JacobianOracle {
    dim: usize,
    partials: Vec<Vec<Polynomial>>,
}

impl JacobianOracle {
    pub fn eval(&self, x: &DVector<f64>) -> Result<JacobianEval> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "state vector",
                expected: self.dim,
                got: x.len(),
            });
        }
        let xs = x.as_slice();
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] = self.partials[i][j].eval(xs);
            }
        }
        let trace = m.trace();
        let det = if self.dim == 2 {
            Some(m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)])
        } else {
            None
        };
        let eigenvalues = if self.dim == 3 {
            Some(m.clone().complex_eigenvalues().iter().copied().collect())
        } else {
            None
        };
        Ok(JacobianEval {
            matrix: m,
            trace,
            det,
            eigenvalues,
        })
    }
}

/// Reciprocal-plane vector field as numerator polynomials over monomial
/// denominators x̂^A ŷ^B. Exact away from the coordinate axes.
#[derive(Debug, Clone)]
pub struct InfinityField {
    num: [Polynomial; 2],
    den: [(u32, u32); 2],
}

impl InfinityField {
    /// Field value at (x̂, ŷ). Errors on an axis whenever the corresponding
    /// denominator actually involves that coordinate.
    pub fn eval(&self, xh: f64, yh: f64) -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        for i in 0..2 {
            let (a, b) = self.den[i];
            if (xh == 0.0 && a > 0) || (yh == 0.0 && b > 0) {
                return Err(Error::SingularEvaluation { xh, yh });
            }
            let den = xh.powi(a as i32) * yh.powi(b as i32);
            out[i] = self.num[i].eval(&[xh, yh]) / den;
        }
        Ok(out)
    }

    pub fn numerators(&self) -> &[Polynomial; 2] {
        &self.num
    }

    pub fn denominator_exponents(&self) -> &[(u32, u32); 2] {
        &self.den
    }
}

// JSON shape: {"dim": n, "components": [[{"c": .., "e": [..]}, ..], ..], "u": [..]}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    c: f64,
    e: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct SystemRepr {
    dim: usize,
    components: Vec<Vec<TermRepr>>,
    u: Vec<f64>,
}

impl Serialize for PolySystem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = SystemRepr {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| {
                    c.terms()
                        .into_iter()
                        .map(|t| TermRepr {
                            c: t.coeff,
                            e: t.exponents,
                        })
                        .collect()
                })
                .collect(),
            u: self.control.iter().copied().collect(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolySystem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = SystemRepr::deserialize(d)?;
        let components = repr
            .components
            .into_iter()
            .map(|c| c.into_iter().map(|t| Term::new(t.c, t.e)).collect())
            .collect();
        let sys = PolySystem::new(repr.dim, components).map_err(serde::de::Error::custom)?;
        if repr.u.len() != repr.dim {
            return Err(serde::de::Error::custom(format!(
                "control length {} does not match dim {}",
                repr.u.len(),
                repr.dim
            )));
        }
        sys.with_control(&repr.u).map_err(serde::de::Error::custom)
    }
}
