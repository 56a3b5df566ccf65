//! Fixed-point location by damped-free Newton iteration from a seed lattice.
//!
//! A state x* is a fixed point of the controlled field exactly when
//! F(x*) + u = 0, so each located root also determines the unique control at
//! which it exists, u = −F(x*). Roots are polished to residual 1e-10,
//! deduplicated at radius 1e-6, discarded when they land outside the search
//! box, and classified through the exact Jacobian.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::poly::{JacobianOracle, PolySystem};

use super::{classify, Classification, StateBox};

/// Newton convergence tolerance on the residual infinity norm.
pub(crate) const NEWTON_TOL: f64 = 1e-10;
/// Maximum Newton iterations per seed.
pub(crate) const NEWTON_MAX_ITERS: usize = 100;
/// Two roots closer than this are the same root.
pub(crate) const DEDUP_RADIUS: f64 = 1e-6;

/// A located fixed point: where it sits, the control pinning it there, its
/// Jacobian data and stability class, and (once a stability map has labeled
/// it) the continuation branch it belongs to.
#[derive(Debug, Clone)]
pub struct FixedPointRecord {
    pub location: DVector<f64>,
    /// Control at which the root exists: u = −F(location).
    pub control: DVector<f64>,
    pub jacobian: crate::poly::JacobianEval,
    pub class: Classification,
    pub branch_id: Option<usize>,
}

/// Reusable Newton solver bound to one system (partials built once).
pub(crate) struct RootFinder<'a> {
    sys: &'a PolySystem,
    oracle: JacobianOracle,
}

impl<'a> RootFinder<'a> {
    pub(crate) fn new(sys: &'a PolySystem) -> Self {
        RootFinder { sys, oracle: sys.jacobian() }
    }

    /// Newton iteration on F(x) + u = 0 from one seed. Returns the root or
    /// None when the iteration stalls, diverges, or hits a singular Jacobian.
    pub(crate) fn newton(&self, u: &DVector<f64>, seed: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = seed.clone();
        for _ in 0..NEWTON_MAX_ITERS {
            let residual = self.sys.eval_drift(&x).ok()? + u;
            if residual.amax() <= NEWTON_TOL {
                return Some(x);
            }
            let jac = self.oracle.eval(&x).ok()?;
            let step = jac.matrix.lu().solve(&residual)?;
            x -= step;
            if !x.iter().all(|v| v.is_finite()) || x.amax() > 1e8 {
                return None;
            }
        }
        None
    }

    /// Run Newton from every seed, keep in-box roots, deduplicate, classify.
    pub(crate) fn find(
        &self,
        u: &DVector<f64>,
        bounds: &StateBox,
        seeds: impl IntoIterator<Item = DVector<f64>>,
    ) -> Result<Vec<FixedPointRecord>> {
        let mut roots: Vec<DVector<f64>> = Vec::new();
        for seed in seeds {
            let Some(root) = self.newton(u, &seed) else { continue };
            if !bounds.contains(&root) {
                continue;
            }
            if roots.iter().all(|r| (r - &root).norm() > DEDUP_RADIUS) {
                roots.push(root);
            }
        }
        // Lexicographic order makes the output independent of seed order.
        roots.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        roots
            .into_iter()
            .map(|location| {
                let jacobian = self.oracle.eval(&location)?;
                let class = classify(&jacobian)?;
                let control = -self.sys.eval_drift(&location)?;
                Ok(FixedPointRecord { location, control, jacobian, class, branch_id: None })
            })
            .collect()
    }
}

/// Locate every fixed point of F(x) + u = 0 inside `bounds`.
///
/// Newton runs from a regular lattice of `grid` seeds per axis (default 50
/// for planar systems, 20 in three dimensions). The explicit `u` is the
/// control under which roots are sought; any offset already stored on `sys`
/// is ignored so the caller's sweep value is authoritative.
pub fn find_fixed_points(
    sys: &PolySystem,
    u: &[f64],
    bounds: &StateBox,
    grid: Option<usize>,
) -> Result<Vec<FixedPointRecord>> {
    let dim = sys.dim();
    if dim != 2 && dim != 3 {
        return Err(Error::UnsupportedDim { required: "2 or 3", got: dim });
    }
    if u.len() != dim {
        return Err(Error::DimensionMismatch { context: "control vector", expected: dim, got: u.len() });
    }
    if bounds.dim() != dim {
        return Err(Error::DimensionMismatch { context: "state box", expected: dim, got: bounds.dim() });
    }
    let per_axis = grid.unwrap_or(if dim == 2 { 50 } else { 20 });
    if per_axis == 0 {
        return Err(Error::InvalidSpec("seed grid must have at least one point per axis".into()));
    }
    let finder = RootFinder::new(sys);
    let u = DVector::from_column_slice(u);
    finder.find(&u, bounds, bounds.lattice(per_axis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::phase::RegionClass;
    use crate::poly::{PolySystem, Term};
    use nalgebra::dvector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn census(sys: &PolySystem, u: [f64; 2], b: &StateBox) -> Vec<FixedPointRecord> {
        find_fixed_points(sys, &u, b, None).unwrap()
    }

    #[test]
    fn bistable_census_finds_three_roots_with_expected_classes() {
        let sys = generators::bistable_chem();
        let b = StateBox::new(vec![-2.0, -2.0], vec![10.0, 10.0]).unwrap();
        let fps = census(&sys, [0.0, 0.0], &b);
        assert_eq!(fps.len(), 3);
        let expect = [
            (dvector![0.0, 0.0], RegionClass::A, -9.5, 12.0),
            (dvector![2.0, 0.5], RegionClass::C, -14.0, -8.0),
            (dvector![6.0, 4.5], RegionClass::A, -26.0, 24.0),
        ];
        for (fp, (loc, class, t, d)) in fps.iter().zip(expect) {
            assert!((&fp.location - loc).norm() < 1e-6, "off target: {}", fp.location);
            assert_eq!(fp.class.class, class);
            assert!(!fp.class.borderline);
            assert!((fp.jacobian.trace - t).abs() < 1e-9);
            assert!((fp.jacobian.det.unwrap() - d).abs() < 1e-9);
            assert!(fp.control.amax() < 1e-9);
        }
    }

    #[test]
    fn brusselator_census_finds_single_source() {
        let sys = generators::brusselator();
        let b = StateBox::new(vec![-2.0, -2.0], vec![10.0, 10.0]).unwrap();
        let fps = census(&sys, [0.0, 0.0], &b);
        assert_eq!(fps.len(), 1);
        assert!((&fps[0].location - dvector![1.0, 3.0]).norm() < 1e-8);
        assert_eq!(fps[0].class.class, RegionClass::B);
        assert!((fps[0].jacobian.trace - 1.0).abs() < 1e-9);
        assert!((fps[0].jacobian.det.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_sink_shifts_with_control() {
        let sys = PolySystem::new(
            2,
            vec![
                vec![Term::new(-1.0, vec![1, 0])],
                vec![Term::new(-1.0, vec![0, 1])],
            ],
        )
        .unwrap();
        let b = StateBox::centered_square(10.0);
        let fps = census(&sys, [3.0, -2.0], &b);
        assert_eq!(fps.len(), 1);
        assert!((&fps[0].location - dvector![3.0, -2.0]).norm() < 1e-10);
        assert_eq!(fps[0].class.class, RegionClass::A);
        assert!((&fps[0].control - dvector![3.0, -2.0]).norm() < 1e-10);
    }

    #[test]
    fn roots_outside_the_box_are_discarded() {
        let sys = generators::bistable_chem();
        let b = StateBox::new(vec![-1.0, -1.0], vec![3.0, 3.0]).unwrap();
        let fps = census(&sys, [0.0, 0.0], &b);
        assert_eq!(fps.len(), 2, "the (6, 4.5) root lies outside");
        assert!(fps.iter().all(|fp| fp.location[0] < 3.0));
    }

    #[test]
    fn control_argument_overrides_stored_offset() {
        let base = PolySystem::new(
            2,
            vec![
                vec![Term::new(-1.0, vec![1, 0])],
                vec![Term::new(-1.0, vec![0, 1])],
            ],
        )
        .unwrap();
        let shifted = base.with_control(&[100.0, 100.0]).unwrap();
        let b = StateBox::centered_square(5.0);
        let fps = census(&shifted, [1.0, 1.0], &b);
        assert_eq!(fps.len(), 1);
        assert!((&fps[0].location - dvector![1.0, 1.0]).norm() < 1e-10);
    }

    #[test]
    fn spatial_newton_finds_lorenz_equilibria() {
        let sys = generators::lorenz();
        let b = StateBox::new(vec![-20.0, -25.0, -5.0], vec![20.0, 25.0, 50.0]).unwrap();
        let fps = find_fixed_points(&sys, &[0.0, 0.0, 0.0], &b, Some(10)).unwrap();
        assert_eq!(fps.len(), 3);
        let c = 72.0f64.sqrt();
        let targets = [dvector![-c, -c, 27.0], dvector![0.0, 0.0, 0.0], dvector![c, c, 27.0]];
        for (fp, target) in fps.iter().zip(&targets) {
            assert!((&fp.location - target).norm() < 1e-7);
            assert!(!fp.class.class.is_sink());
        }
    }

    /// Independent root scan by branch-and-bound over cells. A cell is
    /// kept when, for both components, the smallest corner magnitude is
    /// within the Lipschitz bound of zero (so any cell actually containing
    /// a root is provably kept). Kept cells bisect down to 1e-5 squares;
    /// the lowest-residual center of each cluster is the reported root.
    fn scan_roots(sys: &PolySystem, b: &StateBox, n: usize) -> Vec<DVector<f64>> {
        let eval = |x: f64, y: f64, comp: usize| sys.components()[comp].eval(&[x, y]);
        // Gradient bound per component: partials with absolute coefficients
        // evaluated at the largest corner magnitude.
        let reach = b.lo.iter().chain(&b.hi).fold(0.0f64, |m, v| m.max(v.abs()));
        let lipschitz: Vec<f64> = (0..2)
            .map(|comp| {
                let mag = |p: &crate::poly::Polynomial| {
                    p.terms()
                        .iter()
                        .map(|t| t.coeff.abs() * reach.powi(t.degree() as i32))
                        .sum::<f64>()
                };
                let gx = mag(&sys.partial_derivative(comp, 0));
                let gy = mag(&sys.partial_derivative(comp, 1));
                gx.hypot(gy)
            })
            .collect();
        let may_contain_root = |x0: f64, x1: f64, y0: f64, y1: f64| {
            let diag = (x1 - x0).hypot(y1 - y0);
            (0..2).all(|comp| {
                let best = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
                    .iter()
                    .map(|&(x, y)| eval(x, y, comp).abs())
                    .fold(f64::INFINITY, f64::min);
                best <= lipschitz[comp] * diag
            })
        };
        let (w0, w1) = (b.hi[0] - b.lo[0], b.hi[1] - b.lo[1]);
        let mut stack: Vec<(f64, f64, f64, f64)> = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x0 = b.lo[0] + w0 * i as f64 / n as f64;
                let y0 = b.lo[1] + w1 * j as f64 / n as f64;
                stack.push((x0, x0 + w0 / n as f64, y0, y0 + w1 / n as f64));
            }
        }
        let mut candidates: Vec<DVector<f64>> = Vec::new();
        let mut budget = 20_000_000usize;
        while let Some((x0, x1, y0, y1)) = stack.pop() {
            budget = budget.checked_sub(1).expect("scan exceeded its cell budget");
            if !may_contain_root(x0, x1, y0, y1) {
                continue;
            }
            if x1 - x0 > 1e-5 || y1 - y0 > 1e-5 {
                let (xm, ym) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
                stack.push((x0, xm, y0, ym));
                stack.push((xm, x1, y0, ym));
                stack.push((x0, xm, ym, y1));
                stack.push((xm, x1, ym, y1));
                continue;
            }
            let center = dvector![0.5 * (x0 + x1), 0.5 * (y0 + y1)];
            let r = sys.eval_drift(&center).unwrap().amax();
            if r < 1e-2 {
                candidates.push(center);
            }
        }
        // A candidate center is at most one cell diagonal from any root it
        // witnesses; local refinement must then converge. Centers that fail
        // to reach machine residual nearby were near-misses where both
        // components are small without vanishing together, and are dropped.
        let oracle = sys.jacobian();
        let mut found: Vec<DVector<f64>> = Vec::new();
        'next: for center in candidates {
            let mut x = center.clone();
            for _ in 0..60 {
                let r = sys.eval_drift(&x).unwrap();
                if r.amax() < 1e-11 {
                    break;
                }
                let j = oracle.eval(&x).unwrap().matrix;
                let Some(step) = j.lu().solve(&r) else { continue 'next };
                x -= step;
                if !x.iter().all(|v| v.is_finite()) || (&x - &center).norm() > 5e-3 {
                    continue 'next;
                }
            }
            if sys.eval_drift(&x).unwrap().amax() < 1e-11
                && found.iter().all(|p| (p - &x).norm() > 1e-6)
            {
                found.push(x);
            }
        }
        found
    }

    #[test]
    fn newton_census_matches_bisection_scan_on_random_quadratics() {
        let b = StateBox::centered_square(6.0);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let monoms = crate::poly::monomials(2, 2);
            let comps: Vec<Vec<Term>> = (0..2)
                .map(|_| {
                    monoms
                        .iter()
                        .map(|e| Term::new(rng.random_range(-2.0..2.0), e.clone()))
                        .collect()
                })
                .collect();
            let sys = PolySystem::new(2, comps).unwrap();
            let newton = census(&sys, [0.0, 0.0], &b);
            let scanned = scan_roots(&sys, &b, 400);
            // Compare away from the box faces where in/out judgments differ.
            let interior = |p: &DVector<f64>| p.amax() < 5.9;
            for fp in newton.iter().filter(|fp| interior(&fp.location)) {
                let hit = scanned.iter().find(|p| (*p - &fp.location).norm() < 1e-6);
                assert!(hit.is_some(), "seed {seed}: scan missed {}", fp.location);
                let jac = sys.jacobian_at(hit.unwrap()).unwrap();
                assert_eq!(classify(&jac).unwrap().class, fp.class.class, "seed {seed}");
            }
            for p in scanned.iter().filter(|p| interior(p)) {
                assert!(
                    newton.iter().any(|fp| (&fp.location - p).norm() < 1e-6),
                    "seed {seed}: newton missed {p}"
                );
            }
        }
    }
}
