//! Phase-plane and phase-space analysis of controlled polynomial fields.
//!
//! The additive control u shifts which states are fixed points (F(x) + u = 0
//! means every state is a fixed point for exactly one u = −F(x)) but never
//! changes the Jacobian, so stability is a function of location alone. The
//! trace T and determinant D of the planar Jacobian split parameter space
//! into four classes:
//!
//!   A: T < 0, D > 0  (sink)        B: T > 0, D > 0  (source)
//!   C: D < 0, T < 0  (saddle)      D: D < 0, T > 0  (saddle)
//!
//! Class changes happen on T = 0 (Hopf) and D = 0 (saddle-node), and their
//! images u(t) = −F(x(t), y(t)) under the fixed-point relation are computable
//! curves in the control plane. The submodules walk those curves, paint
//! per-branch stability regions over a control grid, certify presence or
//! absence of limit cycles, measure behavior at infinity through the
//! reciprocal transform, and probe three-dimensional models experimentally.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::JacobianEval;

mod curves;
mod cycles;
mod fixed_points;
mod global;
mod map;
mod probe;

pub use curves::{bifurcation_curve, validate_boundary, real_roots, BifurcationCurve, CurveKind, CurveSample, SweepAxis};
pub use cycles::{
    detect_limit_cycles, detect_limit_cycles_with, CycleSearch, CycleSearchOptions, LimitCycle,
    TrappingCertificate,
};
pub(crate) use cycles::point_in_polygon;
pub use fixed_points::{find_fixed_points, FixedPointRecord};
pub(crate) use fixed_points::RootFinder;
pub use global::{dulac_no_cycle_region, global_stability, DulacCertificate, DulacMultiplier, GlobalStability};
pub use map::{
    controllability_report, stability_map, BranchRegions, CellClass, CellWitness,
    ControllabilityReport, MapCell, MapOptions, PairPredicate, StabilityMap,
};
pub use probe::{
    probe_attractors, AttractorProbe, ProbeEntry, ProbeOutcome, ProbeProtocol, ProbedFixedPoint,
};

/// Tolerance under which T or D counts as "on a bifurcation boundary".
pub const BORDERLINE_TOL: f64 = 1e-8;

/// Stability class of a fixed point, read off the Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionClass {
    /// Sink: T < 0, D > 0 (planar) or all eigenvalue real parts negative.
    A,
    /// Source: T > 0, D > 0 or all eigenvalue real parts positive.
    B,
    /// Saddle with T < 0 (planar) or mixed signs with negative trace.
    C,
    /// Saddle with T > 0 (planar) or mixed signs with positive trace.
    D,
}

impl RegionClass {
    pub fn is_sink(self) -> bool {
        self == RegionClass::A
    }

    pub fn label(self) -> &'static str {
        match self {
            RegionClass::A => "A",
            RegionClass::B => "B",
            RegionClass::C => "C",
            RegionClass::D => "D",
        }
    }
}

impl std::fmt::Display for RegionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A stability class plus a proximity flag raised when |T| or |D| (or an
/// eigenvalue real part, in 3D) sits within [`BORDERLINE_TOL`] of zero, i.e.
/// the point is numerically on a bifurcation boundary and the class label is
/// not trustworthy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: RegionClass,
    pub borderline: bool,
}

/// Classify a Jacobian evaluation into one of the four stability classes.
///
/// Planar systems use the trace/determinant signs; three-dimensional systems
/// use the sign pattern of eigenvalue real parts (all negative: sink, all
/// positive: source, mixed: saddle split by trace sign).
pub fn classify(jac: &JacobianEval) -> Result<Classification> {
    let t = jac.trace;
    if let Some(d) = jac.det {
        let class = if d > 0.0 {
            if t < 0.0 {
                RegionClass::A
            } else {
                RegionClass::B
            }
        } else if t < 0.0 {
            RegionClass::C
        } else {
            RegionClass::D
        };
        return Ok(Classification {
            class,
            borderline: t.abs() < BORDERLINE_TOL || d.abs() < BORDERLINE_TOL,
        });
    }
    let eigs = jac
        .eigenvalues
        .as_ref()
        .ok_or_else(|| Error::DegenerateField("Jacobian carries neither det nor eigenvalues".into()))?;
    let negatives = eigs.iter().filter(|l| l.re < 0.0).count();
    let class = if negatives == eigs.len() {
        RegionClass::A
    } else if negatives == 0 {
        RegionClass::B
    } else if t < 0.0 {
        RegionClass::C
    } else {
        RegionClass::D
    };
    Ok(Classification {
        class,
        borderline: eigs.iter().any(|l| l.re.abs() < BORDERLINE_TOL),
    })
}

/// Axis-aligned rectangle (or box) in state space bounding searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "state box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidSpec("state box must satisfy lo < hi with finite bounds".into()));
        }
        Ok(StateBox { lo, hi })
    }

    /// Square planar box [−h, h] x [−h, h].
    pub fn centered_square(h: f64) -> Self {
        StateBox { lo: vec![-h, -h], hi: vec![h, h] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Side length along each axis.
    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn diagonal(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)),
        )
    }

    /// Regular seed lattice with `per_axis` points per axis, inset half a
    /// cell from the faces so seeds never start exactly on the boundary.
    pub fn lattice(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let dim = self.dim();
        let mut seeds = Vec::with_capacity(per_axis.pow(dim as u32));
        let mut idx = vec![0usize; dim];
        loop {
            let point = DVector::from_iterator(
                dim,
                (0..dim).map(|k| {
                    let w = self.hi[k] - self.lo[k];
                    self.lo[k] + w * (idx[k] as f64 + 0.5) / per_axis as f64
                }),
            );
            seeds.push(point);
            let mut k = 0;
            loop {
                if k == dim {
                    return seeds;
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// The 2^dim corner points, pulled toward the center by `inset` of the
    /// half-width (0 keeps exact corners).
    pub fn corners(&self, inset: f64) -> Vec<DVector<f64>> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(1 << dim);
        for mask in 0..(1u32 << dim) {
            let point = DVector::from_iterator(
                dim,
                (0..dim).map(|k| {
                    let (lo, hi) = (self.lo[k], self.hi[k]);
                    let c = 0.5 * (lo + hi);
                    let v = if mask >> k & 1 == 0 { lo } else { hi };
                    v + (c - v) * inset
                }),
            );
            out.push(point);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use num_complex::Complex64;

    fn planar_jac(trace: f64, det: f64) -> JacobianEval {
        JacobianEval {
            matrix: nalgebra::dmatrix![trace, 0.0; 0.0, 0.0],
            trace,
            det: Some(det),
            eigenvalues: None,
        }
    }

    #[test]
    fn planar_classes_follow_trace_determinant_signs() {
        assert_eq!(classify(&planar_jac(-9.5, 12.0)).unwrap().class, RegionClass::A);
        assert_eq!(classify(&planar_jac(1.0, 1.0)).unwrap().class, RegionClass::B);
        assert_eq!(classify(&planar_jac(-14.0, -8.0)).unwrap().class, RegionClass::C);
        assert_eq!(classify(&planar_jac(3.0, -2.0)).unwrap().class, RegionClass::D);
    }

    #[test]
    fn borderline_flag_trips_within_tolerance_only() {
        assert!(classify(&planar_jac(1e-9, 4.0)).unwrap().borderline);
        assert!(classify(&planar_jac(-2.0, -1e-12)).unwrap().borderline);
        assert!(!classify(&planar_jac(-2.0, 1.0)).unwrap().borderline);
    }

    #[test]
    fn spatial_classes_follow_eigenvalue_sign_pattern() {
        let eig = |res: [f64; 3], trace: f64| JacobianEval {
            matrix: nalgebra::dmatrix![0.0;],
            trace,
            det: None,
            eigenvalues: Some(res.iter().map(|&r| Complex64::new(r, 0.3)).collect()),
        };
        assert_eq!(classify(&eig([-1.0, -2.0, -0.5], -3.5)).unwrap().class, RegionClass::A);
        assert_eq!(classify(&eig([1.0, 2.0, 0.5], 3.5)).unwrap().class, RegionClass::B);
        assert_eq!(classify(&eig([-3.0, 1.0, -0.5], -2.5)).unwrap().class, RegionClass::C);
        assert_eq!(classify(&eig([3.0, -1.0, 0.5], 2.5)).unwrap().class, RegionClass::D);
    }

    #[test]
    fn lattice_covers_box_interior() {
        let b = StateBox::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        let seeds = b.lattice(4);
        assert_eq!(seeds.len(), 16);
        assert!(seeds.iter().all(|s| b.contains(s)));
        assert!((&seeds[0] - dvector![0.25, -0.75]).norm() < 1e-12);
    }

    #[test]
    fn corners_and_geometry_helpers() {
        let b = StateBox::new(vec![0.0, 0.0], vec![4.0, 2.0]).unwrap();
        assert_eq!(b.corners(0.0).len(), 4);
        assert!((b.diagonal() - 20.0f64.sqrt()).abs() < 1e-12);
        assert!((b.center() - dvector![2.0, 1.0]).norm() < 1e-12);
        assert!(StateBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(StateBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }
}
