//! Low-rank mode extraction from trajectory ensembles.
//!
//! The data matrix stacks every stored sample of every ensemble member as a
//! column of X (one row per coordinate, no mean removal: distances from the
//! origin carry information about attractor locations, so centering is
//! deliberately not done). The rank-r basis consists of the top r left
//! singular vectors of X, computed from the Gram matrix G = XXᵀ via a
//! symmetric eigendecomposition, so memory stays O(n²) however long the
//! ensemble is. Singular values are σ_i = √λ_i(G).
//!
//! Mode signs are fixed by requiring the largest-magnitude entry of each mode
//! to be positive (first such index on ties), which makes the decomposition
//! reproducible across runs and platforms.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Ensemble, Trajectory};

/// Orthonormal rank-r basis with the full singular spectrum of the data it
/// was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    n: usize,
    r: usize,
    /// n×r, orthonormal columns, sign-fixed.
    modes: DMatrix<f64>,
    /// All n singular values, descending.
    sigma: Vec<f64>,
}

impl ReducedBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Build from parts, enforcing the invariants the fitting path
    /// guarantees: orthonormal columns, non-negative descending spectrum.
    pub fn from_parts(modes: DMatrix<f64>, sigma: Vec<f64>) -> Result<Self> {
        let (n, r) = (modes.nrows(), modes.ncols());
        if r == 0 || r > n {
            return Err(Error::RankOutOfRange { r, n });
        }
        if sigma.len() != n {
            return Err(Error::InvalidSpec(format!(
                "spectrum length {} does not match dimension {}",
                sigma.len(),
                n
            )));
        }
        let gram = modes.transpose() * &modes;
        if (gram - DMatrix::identity(r, r)).amax() > 1e-6 {
            return Err(Error::InvalidSpec(
                "basis columns are not orthonormal".to_string(),
            ));
        }
        for w in sigma.windows(2) {
            if w[1] > w[0] + 1e-9 * w[0].abs().max(1.0) {
                return Err(Error::InvalidSpec(
                    "singular values are not descending".to_string(),
                ));
            }
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidSpec(
                "singular values must be finite and non-negative".to_string(),
            ));
        }
        Ok(ReducedBasis { n, r, modes, sigma })
    }

    /// Basis coordinates of an ambient state: z = Qᵀx.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "state to project",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self.modes.transpose() * x)
    }

    /// Ambient representative of basis coordinates: x = Qz.
    pub fn lift(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.r {
            return Err(Error::DimensionMismatch {
                context: "coordinates to lift",
                expected: self.r,
                got: z.len(),
            });
        }
        Ok(&self.modes * z)
    }

    /// Ambient control realizing a desired control in basis coordinates.
    /// Because the columns are orthonormal, projecting it back returns the
    /// requested latent control exactly.
    pub fn lift_control(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.lift(&DVector::from_column_slice(u))
    }

    /// Project a trajectory: states, derivatives and controls all map
    /// through Qᵀ; times are untouched.
    pub fn reduce_trajectory(&self, tr: &Trajectory) -> Result<Trajectory> {
        if tr.dim() != self.n {
            return Err(Error::DimensionMismatch {
                context: "trajectory to project",
                expected: self.n,
                got: tr.dim(),
            });
        }
        Ok(Trajectory {
            times: tr.times.clone(),
            states: &tr.states * &self.modes,
            derivs: &tr.derivs * &self.modes,
            controls: &tr.controls * &self.modes,
            schedule_extended: tr.schedule_extended,
        })
    }

    pub fn reduce_ensemble(&self, ens: &Ensemble) -> Result<Ensemble> {
        let trajectories = ens
            .trajectories
            .iter()
            .map(|tr| self.reduce_trajectory(tr))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            trajectories,
            meta: ens.meta.clone(),
        })
    }

    /// Fraction of total variance captured by the top m modes, for every m.
    pub fn cumulative_energy(&self) -> Vec<f64> {
        cumulative_from_sigma(&self.sigma)
    }
}

fn cumulative_from_sigma(sigma: &[f64]) -> Vec<f64> {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    sigma
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect()
}

/// Deterministic Gram matrix of the ensemble data: per-trajectory partial
/// Grams are computed in parallel but summed in trajectory order, so the
/// floating-point result never depends on scheduling.
fn gram(ens: &Ensemble) -> Result<DMatrix<f64>> {
    if ens.trajectories.is_empty() {
        return Err(Error::EmptyEnsemble { count: 0 });
    }
    let n = ens.dim();
    let partials: Vec<DMatrix<f64>> = ens
        .trajectories
        .par_iter()
        .map(|tr| tr.states.transpose() * &tr.states)
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for p in partials {
        g += p;
    }
    Ok(g)
}

fn spectrum(g: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = g.nrows();
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sigma: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vecs, sigma)
}

fn fix_signs(modes: &mut DMatrix<f64>) {
    for j in 0..modes.ncols() {
        let mut best = 0;
        for i in 0..modes.nrows() {
            if modes[(i, j)].abs() > modes[(best, j)].abs() {
                best = i;
            }
        }
        if modes[(best, j)] < 0.0 {
            for i in 0..modes.nrows() {
                modes[(i, j)] = -modes[(i, j)];
            }
        }
    }
}

/// Fit a rank-r basis to all stored samples of the ensemble.
pub fn fit_basis(ens: &Ensemble, r: usize) -> Result<ReducedBasis> {
    let n = ens.dim();
    if r == 0 || r > n {
        return Err(Error::RankOutOfRange { r, n });
    }
    let g = gram(ens)?;
    let total = g.trace();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let (vecs, sigma) = spectrum(g);
    let mut modes = vecs.columns(0, r).into_owned();
    fix_signs(&mut modes);
    ReducedBasis::from_parts(modes, sigma)
}

/// Cumulative variance fractions of the ensemble without keeping any modes.
pub fn variance_profile(ens: &Ensemble) -> Result<Vec<f64>> {
    let g = gram(ens)?;
    if !(g.trace() > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let (_, sigma) = spectrum(g);
    Ok(cumulative_from_sigma(&sigma))
}

/// Principal angles (radians, ascending) between the column spans of two
/// orthonormal matrices with a common ambient dimension.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "subspace ambient dimension",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let m = a.transpose() * b;
    let svd = m.svd(false, false);
    let mut angles: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(angles)
}

/// Largest principal angle: zero iff one span contains the other.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(a, b)?
        .last()
        .copied()
        .unwrap_or(0.0))
}

// JSON shape: {"n":..,"r":..,"modes":[row-major n×r],"sigma":[..]}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    n: usize,
    r: usize,
    modes: Vec<f64>,
    sigma: Vec<f64>,
}

impl Serialize for ReducedBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut modes = Vec::with_capacity(self.n * self.r);
        for i in 0..self.n {
            for j in 0..self.r {
                modes.push(self.modes[(i, j)]);
            }
        }
        BasisRepr {
            n: self.n,
            r: self.r,
            modes,
            sigma: self.sigma.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReducedBasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = BasisRepr::deserialize(d)?;
        if repr.modes.len() != repr.n * repr.r {
            return Err(serde::de::Error::custom(format!(
                "mode matrix has {} entries, expected {}×{}",
                repr.modes.len(),
                repr.n,
                repr.r
            )));
        }
        let modes = DMatrix::from_fn(repr.n, repr.r, |i, j| repr.modes[i * repr.r + j]);
        ReducedBasis::from_parts(modes, repr.sigma).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ensemble, BoxSampler, EnsembleMeta, SimOptions};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Hand-made ensemble whose states are given rows; derivs and controls
    /// zero.
    fn raw_ensemble(samples: Vec<DVector<f64>>) -> Ensemble {
        let n = samples[0].len();
        let k = samples.len();
        let mut states = DMatrix::zeros(k, n);
        for (row, s) in samples.iter().enumerate() {
            states.set_row(row, &s.transpose());
        }
        let tr = Trajectory {
            times: (0..k).map(|i| i as f64 * 0.01).collect(),
            states,
            derivs: DMatrix::zeros(k, n),
            controls: DMatrix::zeros(k, n),
            schedule_extended: false,
        };
        Ensemble {
            trajectories: vec![tr],
            meta: EnsembleMeta {
                seed: 0,
                requested: 1,
                excluded_divergent: 0,
                horizon: 0.01 * k as f64,
                dt: 0.01,
                sample_stride: 1,
                latent_sampling: false,
            },
        }
    }

    fn planted_plane_data(seed: u64) -> (Ensemble, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = crate::generators::random_orthonormal(5, 2, &mut rng).unwrap();
        let samples: Vec<DVector<f64>> = (0..200)
            .map(|_| {
                let z = DVector::from_column_slice(&[
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0) * 0.5,
                ]);
                &q * z
            })
            .collect();
        (raw_ensemble(samples), q)
    }

    #[test]
    fn recovers_planted_plane_exactly() {
        let (ens, q) = planted_plane_data(3);
        let basis = fit_basis(&ens, 2).unwrap();
        let angle = max_principal_angle(basis.modes(), &q).unwrap();
        assert!(angle < 1e-10, "angle {angle}");
        // Everything beyond rank 2 is numerically zero.
        for s in &basis.sigma()[2..] {
            assert!(*s < 1e-8 * basis.sigma()[0]);
        }
    }

    #[test]
    fn spectrum_is_descending_and_energy_sums_match() {
        let (ens, _) = planted_plane_data(8);
        let basis = fit_basis(&ens, 2).unwrap();
        for w in basis.sigma().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let frob2: f64 = ens.trajectories[0]
            .states
            .iter()
            .map(|v| v * v)
            .sum();
        let energy: f64 = basis.sigma().iter().map(|s| s * s).sum();
        assert_relative_eq!(energy, frob2, max_relative = 1e-9);
        let cum = basis.cumulative_energy();
        assert_relative_eq!(*cum.last().unwrap(), 1.0, epsilon = 1e-12);
        for w in cum.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
    }

    #[test]
    fn sign_convention_and_determinism() {
        // Data along −e2 (largest entry negative): the mode must be flipped
        // so its biggest entry is positive.
        let samples: Vec<DVector<f64>> = (1..50)
            .map(|i| DVector::from_column_slice(&[0.01, -(i as f64) * 0.1, 0.02]))
            .collect();
        let basis = fit_basis(&raw_ensemble(samples), 1).unwrap();
        assert!(basis.modes()[(1, 0)] > 0.99);

        let (ens, _) = planted_plane_data(5);
        let a = fit_basis(&ens, 2).unwrap();
        let b = fit_basis(&ens, 2).unwrap();
        assert_eq!(a.modes(), b.modes());
        assert_eq!(a.sigma(), b.sigma());
    }

    #[test]
    fn rank_bounds_are_enforced() {
        let (ens, _) = planted_plane_data(1);
        assert!(matches!(
            fit_basis(&ens, 0),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(matches!(
            fit_basis(&ens, 6),
            Err(Error::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn all_zero_data_is_rejected() {
        let samples = vec![DVector::zeros(3); 40];
        assert!(matches!(
            fit_basis(&raw_ensemble(samples), 1),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn no_centering_keeps_offset_information() {
        // Samples cluster around a distant point c with small spread in an
        // orthogonal direction; without centering the top mode points at c.
        let c = DVector::from_column_slice(&[3.0, 4.0, 0.0]);
        let d = DVector::from_column_slice(&[0.0, 0.0, 1.0]);
        let samples: Vec<DVector<f64>> = (0..100)
            .map(|i| &c + &d * (0.05 * ((i as f64) / 50.0 - 1.0)))
            .collect();
        let basis = fit_basis(&raw_ensemble(samples), 1).unwrap();
        let dir = basis.modes().column(0).into_owned();
        let cn = &c / c.norm();
        assert!(dir.dot(&cn).abs() > 0.9999);
    }

    #[test]
    fn projection_geometry() {
        let (ens, _) = planted_plane_data(12);
        let basis = fit_basis(&ens, 2).unwrap();
        // In-plane points survive a round trip.
        let x = ens.trajectories[0].state(7);
        let back = basis.lift(&basis.project(&x).unwrap()).unwrap();
        assert!((&back - &x).norm() < 1e-9);
        // The projection residual of a generic point is orthogonal to the
        // basis.
        let y = DVector::from_column_slice(&[1.0, -2.0, 0.5, 3.0, -1.0]);
        let resid = &y - basis.lift(&basis.project(&y).unwrap()).unwrap();
        let back_proj = basis.project(&resid).unwrap();
        assert!(back_proj.norm() < 1e-10);
        // Lifted controls project back exactly.
        let u = basis.lift_control(&[0.3, -0.7]).unwrap();
        let z = basis.project(&u).unwrap();
        assert_relative_eq!(z[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(z[1], -0.7, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_projection_maps_all_channels() {
        let sys = crate::generators::bistable_chem();
        let sampler = BoxSampler {
            lo: vec![0.0, 0.0],
            hi: vec![7.0, 6.0],
            count: 8,
            seed: 5,
        };
        let ens = ensemble(&sys, None, &sampler, 2.0, &SimOptions::default()).unwrap();
        let basis = fit_basis(&ens, 1).unwrap();
        let red = basis.reduce_ensemble(&ens).unwrap();
        assert_eq!(red.trajectories.len(), ens.trajectories.len());
        let (orig, proj) = (&ens.trajectories[0], &red.trajectories[0]);
        assert_eq!(proj.states.ncols(), 1);
        assert_eq!(proj.times, orig.times);
        let q = basis.modes();
        for k in [0, 3, orig.len() - 1] {
            let want_state = (orig.state(k).transpose() * q)[(0, 0)];
            assert_relative_eq!(proj.states[(k, 0)], want_state, epsilon = 1e-12);
            let want_deriv = (orig.derivs.row(k) * q)[(0, 0)];
            assert_relative_eq!(proj.derivs[(k, 0)], want_deriv, epsilon = 1e-12);
        }
    }

    #[test]
    fn variance_profile_agrees_with_full_fit() {
        let (ens, _) = planted_plane_data(21);
        let profile = variance_profile(&ens).unwrap();
        let basis = fit_basis(&ens, 2).unwrap();
        let from_basis = basis.cumulative_energy();
        assert_eq!(profile.len(), from_basis.len());
        for (a, b) in profile.iter().zip(&from_basis) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let (ens, _) = planted_plane_data(30);
        let basis = fit_basis(&ens, 2).unwrap();
        let s = serde_json::to_string(&basis).unwrap();
        let back: ReducedBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(basis, back);

        let bad = r#"{"n":2,"r":2,"modes":[1.0,0.0,1.0,0.0],"sigma":[1.0,0.5]}"#;
        assert!(serde_json::from_str::<ReducedBasis>(bad).is_err());
        let bad_len = r#"{"n":2,"r":1,"modes":[1.0],"sigma":[1.0,0.5]}"#;
        assert!(serde_json::from_str::<ReducedBasis>(bad_len).is_err());
    }

    #[test]
    fn principal_angle_extremes() {
        let e12 = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let e34 = DMatrix::from_column_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(max_principal_angle(&e12, &e12).unwrap() < 1e-7);
        assert_relative_eq!(
            max_principal_angle(&e12, &e34).unwrap(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-9
        );
    }
}
