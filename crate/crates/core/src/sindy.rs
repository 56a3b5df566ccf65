//! Sparse regression of dynamics onto a monomial library.
//!
//! Each state component's drift is modeled as a sparse combination of
//! monomials up to a fixed degree: dx_i/dt ≈ Σ_k ξ_ki θ_k(x). Coefficients
//! come from sequentially thresholded least squares: solve the full least
//! squares problem, zero every coefficient below the threshold λ, refit on
//! the surviving columns, and repeat until the active set stabilizes. The
//! threshold compares raw coefficient magnitudes; columns are not rescaled.
//!
//! Least squares goes through the Gram matrix ΘᵀΘ with a Cholesky solve.
//! When the active Gram block is singular (collinear data) a small ridge
//! term (1e-10 on the diagonal) is added and the solve retried; the fit
//! reports when this fallback fired. Regression targets are the recorded
//! derivatives minus the recorded control channel, so the fitted model is
//! the uncontrolled drift even when the data was collected under forcing.
//!
//! Very long ensembles are decimated row-wise with a deterministic stride
//! before the Gram accumulation, capping the number of regression rows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{monomials, PolySystem, Term};
use crate::sim::{Ensemble, Trajectory};

/// Monomial dictionary in graded-lexicographic order; for two variables at
/// degree 3: 1, x, y, x², xy, y², x³, x²y, xy², y³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    dim: usize,
    max_degree: u32,
    exponents: Vec<Vec<u32>>,
}

impl Library {
    pub fn new(dim: usize, max_degree: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("library needs at least one variable".into()));
        }
        Ok(Library {
            dim,
            max_degree,
            exponents: monomials(dim, max_degree),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn eval_row(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.exponents.len());
        for (k, e) in self.exponents.iter().enumerate() {
            let mut v = 1.0;
            for (j, &p) in e.iter().enumerate() {
                if p > 0 {
                    let b = x[j];
                    v *= match p {
                        1 => b,
                        2 => b * b,
                        3 => b * b * b,
                        _ => b.powi(p as i32),
                    };
                }
            }
            out[k] = v;
        }
    }

    /// Index of the monomial with the given exponent vector, if present.
    pub fn index_of(&self, e: &[u32]) -> Option<usize> {
        self.exponents.iter().position(|x| x == e)
    }
}

#[derive(Debug, Clone)]
pub struct StlsqOptions {
    /// Coefficient threshold λ.
    pub lambda: f64,
    /// Ridge added to the Gram diagonal when a plain solve fails.
    pub ridge: f64,
    pub max_iters: usize,
    /// Row cap; longer data is decimated with a uniform stride.
    pub max_rows: usize,
}

impl Default for StlsqOptions {
    fn default() -> Self {
        StlsqOptions {
            lambda: 0.05,
            ridge: 1e-10,
            max_iters: 20,
            max_rows: 100_000,
        }
    }
}

/// Which derivative channel feeds the regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeSource {
    /// Derivatives stored alongside the trajectory (exact for simulated
    /// data; projections of exact values for reduced data).
    Recorded,
    /// Second-order finite differences of the states: central in the
    /// interior, one-sided three-point stencils at the ends.
    FiniteDifference,
}

/// Derivative matrix for one trajectory under the chosen source, control
/// not yet removed.
pub fn derivatives(tr: &Trajectory, src: DerivativeSource) -> Result<DMatrix<f64>> {
    match src {
        DerivativeSource::Recorded => Ok(tr.derivs.clone()),
        DerivativeSource::FiniteDifference => {
            let m = tr.len();
            if m < 3 {
                return Err(Error::InvalidSpec(
                    "finite differences need at least three samples".into(),
                ));
            }
            let h = tr.times[1] - tr.times[0];
            for w in tr.times.windows(2) {
                if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0) {
                    return Err(Error::InvalidSpec(
                        "finite differences need uniform sample spacing".into(),
                    ));
                }
            }
            let n = tr.dim();
            let mut d = DMatrix::zeros(m, n);
            let s = &tr.states;
            for j in 0..n {
                d[(0, j)] = (-3.0 * s[(0, j)] + 4.0 * s[(1, j)] - s[(2, j)]) / (2.0 * h);
                for k in 1..m - 1 {
                    d[(k, j)] = (s[(k + 1, j)] - s[(k - 1, j)]) / (2.0 * h);
                }
                d[(m - 1, j)] =
                    (3.0 * s[(m - 1, j)] - 4.0 * s[(m - 2, j)] + s[(m - 3, j)]) / (2.0 * h);
            }
            Ok(d)
        }
    }
}

/// Bookkeeping from a fit; not part of the persisted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub rows_total: usize,
    pub rows_used: usize,
    /// Thresholding iterations per output component.
    pub iterations: Vec<usize>,
    pub ridge_fallback: bool,
}

/// Sparse polynomial model: one coefficient column per output component over
/// an embedded library.
#[derive(Debug, Clone)]
pub struct SparseModel {
    library: Library,
    /// library.len() × n_out.
    coeffs: DMatrix<f64>,
    threshold: f64,
    pub info: Option<FitInfo>,
}

impl PartialEq for SparseModel {
    fn eq(&self, other: &Self) -> bool {
        self.library == other.library
            && self.coeffs == other.coeffs
            && self.threshold == other.threshold
    }
}

impl SparseModel {
    pub fn library(&self) -> &Library {
        &self.library
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn outputs(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Active library indices per output component.
    pub fn support(&self) -> Vec<Vec<usize>> {
        (0..self.coeffs.ncols())
            .map(|j| {
                (0..self.coeffs.nrows())
                    .filter(|&k| self.coeffs[(k, j)] != 0.0)
                    .collect()
            })
            .collect()
    }

    /// Materialize the model as a polynomial system. Requires as many output
    /// components as library variables.
    pub fn to_system(&self) -> Result<PolySystem> {
        if self.coeffs.ncols() != self.library.dim {
            return Err(Error::InvalidSpec(format!(
                "model with {} outputs over {} variables is not a closed system",
                self.coeffs.ncols(),
                self.library.dim
            )));
        }
        let components = (0..self.coeffs.ncols())
            .map(|j| {
                (0..self.coeffs.nrows())
                    .filter(|&k| self.coeffs[(k, j)] != 0.0)
                    .map(|k| Term::new(self.coeffs[(k, j)], self.library.exponents[k].clone()))
                    .collect()
            })
            .collect();
        PolySystem::new(self.library.dim, components)
    }

    /// Compare against a reference system over the same library: largest
    /// absolute coefficient deviation and whether the sparsity patterns
    /// agree. Errors if the reference contains a term outside the library.
    pub fn compare_with(&self, truth: &PolySystem) -> Result<ModelComparison> {
        if truth.dim() != self.coeffs.ncols() || truth.dim() != self.library.dim {
            return Err(Error::DimensionMismatch {
                context: "reference system dimension",
                expected: self.coeffs.ncols(),
                got: truth.dim(),
            });
        }
        let mut want = DMatrix::zeros(self.library.len(), truth.dim());
        for (j, comp) in truth.components().iter().enumerate() {
            for t in comp.terms() {
                match self.library.index_of(&t.exponents) {
                    Some(k) => want[(k, j)] = t.coeff,
                    None => {
                        return Err(Error::InvalidSpec(format!(
                            "reference term with exponents {:?} lies outside the library",
                            t.exponents
                        )))
                    }
                }
            }
        }
        let mut max_err = 0.0f64;
        let mut support_matches = true;
        for j in 0..want.ncols() {
            for k in 0..want.nrows() {
                max_err = max_err.max((want[(k, j)] - self.coeffs[(k, j)]).abs());
                if (want[(k, j)] != 0.0) != (self.coeffs[(k, j)] != 0.0) {
                    support_matches = false;
                }
            }
        }
        Ok(ModelComparison {
            max_coeff_error: max_err,
            support_matches,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelComparison {
    pub max_coeff_error: f64,
    pub support_matches: bool,
}

fn solve_active(
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    active: &[usize],
    col: usize,
    ridge: f64,
    ridge_used: &mut bool,
) -> Result<Vec<f64>> {
    let p = active.len();
    let mut g = DMatrix::zeros(p, p);
    let mut b = nalgebra::DVector::zeros(p);
    for (a, &ka) in active.iter().enumerate() {
        b[a] = rhs[(ka, col)];
        for (c, &kc) in active.iter().enumerate() {
            g[(a, c)] = gram[(ka, kc)];
        }
    }
    if let Some(chol) = g.clone().cholesky() {
        return Ok(chol.solve(&b).iter().copied().collect());
    }
    *ridge_used = true;
    for a in 0..p {
        g[(a, a)] += ridge;
    }
    match g.cholesky() {
        Some(chol) => Ok(chol.solve(&b).iter().copied().collect()),
        None => Err(Error::Regression(
            "normal equations remained singular after ridge fallback".to_string(),
        )),
    }
}

/// Sequentially thresholded least squares over all stored samples of an
/// ensemble.
pub fn fit(
    ens: &Ensemble,
    library: &Library,
    src: DerivativeSource,
    opts: &StlsqOptions,
) -> Result<SparseModel> {
    if ens.trajectories.is_empty() {
        return Err(Error::EmptyEnsemble { count: 0 });
    }
    let dim = ens.dim();
    if library.dim != dim {
        return Err(Error::DimensionMismatch {
            context: "library variable count",
            expected: dim,
            got: library.dim,
        });
    }
    if !(opts.lambda >= 0.0) || !(opts.ridge >= 0.0) || opts.max_iters == 0 || opts.max_rows == 0 {
        return Err(Error::InvalidSpec("bad regression options".into()));
    }
    let rows_total: usize = ens.trajectories.iter().map(|t| t.len()).sum();
    let stride = rows_total.div_ceil(opts.max_rows).max(1);

    // Accumulate ΘᵀΘ and Θᵀ(dx/dt − u) over the (possibly decimated) rows.
    let p = library.len();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DMatrix::zeros(p, dim);
    let mut row = vec![0.0; p];
    let mut rows_used = 0usize;
    let mut next = 0usize;
    let mut index = 0usize;
    for tr in &ens.trajectories {
        let d = derivatives(tr, src)?;
        for k in 0..tr.len() {
            if index == next {
                next += stride;
                rows_used += 1;
                let x: Vec<f64> = (0..dim).map(|j| tr.states[(k, j)]).collect();
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("regression state sample"));
                }
                library.eval_row(&x, &mut row);
                for a in 0..p {
                    let ra = row[a];
                    if ra != 0.0 {
                        for c in a..p {
                            gram[(a, c)] += ra * row[c];
                        }
                        for j in 0..dim {
                            rhs[(a, j)] += ra * (d[(k, j)] - tr.controls[(k, j)]);
                        }
                    }
                }
            }
            index += 1;
        }
    }
    for a in 0..p {
        for c in 0..a {
            gram[(a, c)] = gram[(c, a)];
        }
    }

    let mut coeffs = DMatrix::zeros(p, dim);
    let mut iterations = Vec::with_capacity(dim);
    let mut ridge_used = false;
    let all: Vec<usize> = (0..p).collect();
    for j in 0..dim {
        let mut active = all.clone();
        let mut xi = solve_active(&gram, &rhs, &active, j, opts.ridge, &mut ridge_used)?;
        let mut iters = 1;
        loop {
            let kept: Vec<usize> = active
                .iter()
                .zip(&xi)
                .filter(|(_, &c)| c.abs() >= opts.lambda)
                .map(|(&k, _)| k)
                .collect();
            if kept.len() == active.len() || iters >= opts.max_iters {
                active = kept;
                break;
            }
            active = kept;
            if active.is_empty() {
                break;
            }
            xi = solve_active(&gram, &rhs, &active, j, opts.ridge, &mut ridge_used)?;
            iters += 1;
        }
        if !active.is_empty() {
            xi = solve_active(&gram, &rhs, &active, j, opts.ridge, &mut ridge_used)?;
            for (a, &k) in active.iter().enumerate() {
                if !xi[a].is_finite() {
                    return Err(Error::Regression("non-finite coefficient".to_string()));
                }
                coeffs[(k, j)] = xi[a];
            }
        }
        iterations.push(iters);
    }

    Ok(SparseModel {
        library: library.clone(),
        coeffs,
        threshold: opts.lambda,
        info: Some(FitInfo {
            rows_total,
            rows_used,
            iterations,
            ridge_fallback: ridge_used,
        }),
    })
}

// JSON shape:
// {"library":{"dim":..,"max_degree":..,"exponents":[[..]..]},
//  "threshold":..,"coeffs":[row-major len×outputs],"outputs":..}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    library: Library,
    threshold: f64,
    outputs: usize,
    coeffs: Vec<f64>,
}

impl Serialize for SparseModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut coeffs = Vec::with_capacity(self.coeffs.nrows() * self.coeffs.ncols());
        for k in 0..self.coeffs.nrows() {
            for j in 0..self.coeffs.ncols() {
                coeffs.push(self.coeffs[(k, j)]);
            }
        }
        ModelRepr {
            library: self.library.clone(),
            threshold: self.threshold,
            outputs: self.coeffs.ncols(),
            coeffs,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparseModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(d)?;
        let p = repr.library.exponents.len();
        if repr.library.exponents.iter().any(|e| e.len() != repr.library.dim) {
            return Err(serde::de::Error::custom("library exponent arity mismatch"));
        }
        if repr.coeffs.len() != p * repr.outputs {
            return Err(serde::de::Error::custom(format!(
                "coefficient matrix has {} entries, expected {}×{}",
                repr.coeffs.len(),
                p,
                repr.outputs
            )));
        }
        let coeffs = DMatrix::from_fn(p, repr.outputs, |k, j| repr.coeffs[k * repr.outputs + j]);
        Ok(SparseModel {
            library: repr.library,
            coeffs,
            threshold: repr.threshold,
            info: None,
        })
    }
}
