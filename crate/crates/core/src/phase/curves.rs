//! Bifurcation curves in the control plane.
//!
//! Every state (x, y) is a fixed point under exactly one control,
//! u = −F(x, y). Restricting states to the trace zero set T(x, y) = 0 and
//! pushing through that relation yields the Hopf curve C^h(t); the
//! determinant zero set D(x, y) = 0 yields the saddle-node curve C^s(t).
//! The sweep fixes x = t, solves the constraint for every real y root with
//! companion-matrix rootfinding, and maps each solution to control space; a
//! second sweep with the roles of x and y swapped catches vertical
//! tangencies, with duplicates merged at distance 1e-6 in control space.
//!
//! Fixed points can also cross stability regions "through infinity" where
//! |T| or |D| blows up while u stays finite (the reciprocal measures
//! T̂ = 1/T, D̂ = 1/D pass through zero). Those curves are computed as the
//! finite control-space limits of unbounded constraint-root families: hold
//! one control component at t, solve the corresponding field component for
//! roots on expanding square contours max(|x|, |y|) = R, and keep families
//! whose other control component converges while the constrained quantity
//! exceeds 1e8 in magnitude. A square contour rather than a circle keeps the
//! small coordinate fully resolvable in floating point at R ~ 1e16, where an
//! angle parameterization would have quantization error ~ R * ulp(pi/2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{Polynomial, PolySystem};

/// Magnitude of T or D above which a state counts as "at infinity" for its
/// reciprocal constraint (|1/T| < 1e-8).
const AT_INFINITY_MAGNITUDE: f64 = 1e8;
/// Control components above this bound mark a root family as escaping with
/// unbounded control; such families produce no curve samples.
const CONTROL_ESCAPE_FACTOR: f64 = 1e6;
/// Expanding contour ladder: R = BASE * FACTOR^m for m = 0..STEPS.
const CONTOUR_BASE: f64 = 1e3;
const CONTOUR_FACTOR: f64 = 4.0;
const CONTOUR_STEPS: usize = 24;
/// Coarse samples per contour side for bracketing sign changes.
const CONTOUR_SCAN: usize = 400;
/// Offset for the transversality (sign-change) check, in state space.
const BOUNDARY_OFFSET: f64 = 1e-4;
/// Duplicate-sample radius in control space when merging sweeps.
const MERGE_RADIUS: f64 = 1e-6;

/// Which bifurcation a curve tracks, including the two reciprocal
/// ("at infinity") variants where the constrained quantity diverges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    SaddleNode,
    Hopf,
    SaddleNodeAtInfinity,
    HopfAtInfinity,
}

impl CurveKind {
    pub fn label(self) -> &'static str {
        match self {
            CurveKind::SaddleNode => "saddle_node",
            CurveKind::Hopf => "hopf",
            CurveKind::SaddleNodeAtInfinity => "saddle_node_at_infinity",
            CurveKind::HopfAtInfinity => "hopf_at_infinity",
        }
    }

    pub const ALL: [CurveKind; 4] = [
        CurveKind::SaddleNode,
        CurveKind::Hopf,
        CurveKind::SaddleNodeAtInfinity,
        CurveKind::HopfAtInfinity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::SaddleNode => "saddle_node",
            CurveKind::Hopf => "hopf",
            CurveKind::SaddleNodeAtInfinity => "saddle_node_at_infinity",
            CurveKind::HopfAtInfinity => "hopf_at_infinity",
        }
    }

    /// Hopf-family kinds constrain the trace; saddle-node kinds the determinant.
    pub fn uses_trace(self) -> bool {
        matches!(self, CurveKind::Hopf | CurveKind::HopfAtInfinity)
    }

    pub fn at_infinity(self) -> bool {
        matches!(self, CurveKind::SaddleNodeAtInfinity | CurveKind::HopfAtInfinity)
    }

    fn constraint(self, sys: &PolySystem) -> Result<Polynomial> {
        if self.uses_trace() {
            sys.trace_polynomial()
        } else {
            sys.det_polynomial()
        }
    }
}

impl std::fmt::Display for CurveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which quantity served as the sweep parameter: the x state coordinate
/// (first control component for at-infinity kinds) or the y coordinate
/// (second control component).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    X,
    Y,
}

/// One point of a bifurcation curve: parameter value, the state satisfying
/// the constraint, its image control u = −F(state), and whether the
/// constrained quantity changes sign transversally there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub t: f64,
    pub state: [f64; 2],
    pub control: [f64; 2],
    pub valid: bool,
    pub axis: SweepAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationCurve {
    pub kind: CurveKind,
    pub samples: Vec<CurveSample>,
}

impl BifurcationCurve {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// All real roots of a univariate polynomial given by ascending-power
/// coefficients. Simultaneous Weierstrass iteration locates every complex
/// root in a bounded number of steps (unlike QR on the companion matrix,
/// which can stall on multiple eigenvalues); near-real candidates are then
/// Newton-polished and residual-checked. A repeated real root comes back
/// as one entry. Constant (including identically zero) input yields no
/// roots.
pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    use nalgebra::Complex;
    let scale = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && c[c.len() - 1].abs() <= 1e-12 * scale {
        c.pop();
    }
    let degree = c.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    if degree == 1 {
        return vec![-c[0] / c[1]];
    }
    let lead = c[degree];
    let monic: Vec<f64> = c.iter().map(|v| v / lead).collect();
    let eval_c = |z: Complex<f64>| {
        let mut p = Complex::new(0.0, 0.0);
        for &ck in monic.iter().rev() {
            p = p * z + Complex::new(ck, 0.0);
        }
        p
    };
    // Cauchy bound puts all roots inside this radius; start the iterates on
    // a circle with an angular offset so no initial guess is real.
    let radius = 1.0 + monic[..degree].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut z: Vec<Complex<f64>> = (0..degree)
        .map(|k| {
            let theta = 0.4 + std::f64::consts::TAU * k as f64 / degree as f64;
            Complex::new(radius * theta.cos(), radius * theta.sin())
        })
        .collect();
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..degree {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..degree {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                // Collided iterates: nudge apart and keep going.
                z[i] += Complex::new(1e-8 * radius, 1e-8 * radius);
                continue;
            }
            let dz = eval_c(z[i]) / denom;
            z[i] -= dz;
            moved = moved.max(dz.norm());
        }
        if moved <= 1e-14 * radius {
            break;
        }
    }
    let horner = |x: f64| {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &ck in c.iter().rev() {
            dp = dp * x + p;
            p = p * x + ck;
        }
        (p, dp)
    };
    let mut roots: Vec<f64> = Vec::new();
    for lambda in &z {
        // A multiple real root shows up as a cluster of radius about the
        // square (or higher) root of machine epsilon; admit that much
        // imaginary part and let dedup collapse the cluster.
        if lambda.im.abs() > 1e-6 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let mut x = lambda.re;
        for _ in 0..40 {
            let (p, dp) = horner(x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            x -= step;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if horner(x).0.abs() > 1e-9 * scale * (1.0 + x.abs()).powi(degree as i32) {
            continue;
        }
        if roots.iter().all(|r| (r - x).abs() > 1e-6 * (1.0 + x.abs())) {
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Transversality of a curve sample: does the constrained quantity (T for
/// Hopf kinds, D for saddle-node kinds) change sign across the curve?
///
/// For finite curves the crossing direction is the constraint gradient in
/// state space (the direction orthogonal to the level curve) and the check
/// evaluates the constraint at offsets of ±1e-4; an even-order contact shows
/// no sign change and is reported as a non-boundary (invalid) sample. For
/// at-infinity curves the escape happens across a coordinate axis, so the
/// check reflects the small coordinate instead.
pub fn validate_boundary(sys: &PolySystem, kind: CurveKind, state: [f64; 2]) -> Result<bool> {
    let q = kind.constraint(sys)?;
    if kind.at_infinity() {
        let reflected = if state[0].abs() <= state[1].abs() {
            [-state[0], state[1]]
        } else {
            [state[0], -state[1]]
        };
        let (a, b) = (q.eval(&state), q.eval(&reflected));
        return Ok(a * b < 0.0);
    }
    let grad = [q.partial(0).eval(&state), q.partial(1).eval(&state)];
    let norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
    let offsets: Vec<[f64; 2]> = if norm >= 1e-8 {
        vec![[grad[0] / norm, grad[1] / norm]]
    } else {
        // Degenerate gradient (tangential touch candidate): probe both axes.
        vec![[1.0, 0.0], [0.0, 1.0]]
    };
    Ok(offsets.iter().any(|n| {
        let plus = q.eval(&[state[0] + BOUNDARY_OFFSET * n[0], state[1] + BOUNDARY_OFFSET * n[1]]);
        let minus = q.eval(&[state[0] - BOUNDARY_OFFSET * n[0], state[1] - BOUNDARY_OFFSET * n[1]]);
        plus * minus < 0.0
    }))
}

fn linspace(range: (f64, f64), samples: usize) -> Result<Vec<f64>> {
    if samples == 0 || !range.0.is_finite() || !range.1.is_finite() || range.0 > range.1 {
        return Err(Error::InvalidSpec(format!(
            "curve sweep needs an ordered finite range and at least one sample, got {range:?} x {samples}"
        )));
    }
    if samples == 1 {
        return Ok(vec![0.5 * (range.0 + range.1)]);
    }
    let step = (range.1 - range.0) / (samples - 1) as f64;
    Ok((0..samples).map(|k| range.0 + step * k as f64).collect())
}

/// Sweep a bifurcation curve over `t_range` with `samples` parameter values.
///
/// Finite kinds parameterize by the x coordinate (then by y, merged);
/// at-infinity kinds parameterize by the held control component. An empty
/// curve is a valid outcome: the constraint may have no real roots (the
/// Brusselator determinant x^2 never crosses zero) or no escaping family
/// with bounded control.
pub fn bifurcation_curve(
    sys: &PolySystem,
    kind: CurveKind,
    t_range: (f64, f64),
    samples: usize,
) -> Result<BifurcationCurve> {
    if sys.dim() != 2 {
        return Err(Error::UnsupportedDim { required: "2", got: sys.dim() });
    }
    let ts = linspace(t_range, samples)?;
    let constraint = kind.constraint(sys)?;
    let mut out: Vec<CurveSample> = Vec::new();
    let push_merged = |sample: CurveSample, out: &mut Vec<CurveSample>| {
        let dup = out.iter().any(|s| {
            let du = [s.control[0] - sample.control[0], s.control[1] - sample.control[1]];
            (du[0] * du[0] + du[1] * du[1]).sqrt() < MERGE_RADIUS
        });
        if !dup {
            out.push(sample);
        }
    };
    for axis in [SweepAxis::X, SweepAxis::Y] {
        let (fixed_var, free_var) = match axis {
            SweepAxis::X => (0, 1),
            SweepAxis::Y => (1, 0),
        };
        for &t in &ts {
            if kind.at_infinity() {
                for state in escaping_family_limits(sys, &constraint, fixed_var, t) {
                    let u = control_at(sys, state)?;
                    let valid = validate_boundary(sys, kind, state)?;
                    push_merged(CurveSample { t, state, control: u, valid, axis }, &mut out);
                }
            } else {
                let section = constraint.substitute(fixed_var, t);
                for root in real_roots(&section.univariate_coeffs(free_var)?) {
                    let mut state = [0.0; 2];
                    state[fixed_var] = t;
                    state[free_var] = root;
                    let u = control_at(sys, state)?;
                    let valid = validate_boundary(sys, kind, state)?;
                    push_merged(CurveSample { t, state, control: u, valid, axis }, &mut out);
                }
            }
        }
    }
    Ok(BifurcationCurve { kind, samples: out })
}

fn control_at(sys: &PolySystem, state: [f64; 2]) -> Result<[f64; 2]> {
    let f = sys.eval_drift(&nalgebra::DVector::from_column_slice(&state))?;
    Ok([-f[0], -f[1]])
}

/// States of the held-component root set F_s(x, y) + t = 0 on the square
/// contour max(|x|, |y|) = radius, restricted to roots whose full control
/// vector stays within the escape bound.
fn contour_roots(sys: &PolySystem, held: usize, t: f64, radius: f64) -> Vec<[f64; 2]> {
    let comp = &sys.components()[held];
    let dcomp = [comp.partial(0), comp.partial(1)];
    let cap = CONTROL_ESCAPE_FACTOR * (1.0 + t.abs());
    let mut roots = Vec::new();
    // Four sides: (index of the fixed coordinate, its value).
    for (fixed, value) in [(0, radius), (0, -radius), (1, radius), (1, -radius)] {
        let free = 1 - fixed;
        let at = |v: f64| {
            let mut p = [0.0; 2];
            p[fixed] = value;
            p[free] = v;
            p
        };
        let h = |v: f64| comp.eval(&at(v)) + t;
        let mut prev_v = -radius;
        let mut prev_h = h(prev_v);
        for k in 1..=CONTOUR_SCAN {
            let v = -radius + 2.0 * radius * k as f64 / CONTOUR_SCAN as f64;
            let hv = h(v);
            if prev_h == 0.0 || prev_h * hv < 0.0 {
                let (mut a, mut b, mut ha) = (prev_v, v, prev_h);
                for _ in 0..90 {
                    let mid = 0.5 * (a + b);
                    if mid == a || mid == b {
                        break;
                    }
                    let hm = h(mid);
                    if ha * hm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        ha = hm;
                    }
                }
                let mut root = 0.5 * (a + b);
                for _ in 0..6 {
                    let p = at(root);
                    let dv = dcomp[free].eval(&p);
                    if dv == 0.0 {
                        break;
                    }
                    let step = (comp.eval(&p) + t) / dv;
                    let next = root - step;
                    if !next.is_finite() || next < a - (b - a) || next > b + (b - a) {
                        break;
                    }
                    root = next;
                }
                let state = at(root);
                let u0 = -sys.components()[0].eval(&state);
                let u1 = -sys.components()[1].eval(&state);
                if u0.abs() <= cap && u1.abs() <= cap {
                    roots.push(state);
                }
            }
            prev_v = v;
            prev_h = hv;
        }
    }
    roots
}

/// Follow unbounded root families of the held-control constraint outward and
/// return final states for families that (a) keep a convergent finite
/// control and (b) drive the constrained quantity past 1e8 in magnitude, so
/// the reciprocal measure 1/T or 1/D sits below 1e-8.
fn escaping_family_limits(
    sys: &PolySystem,
    constraint: &Polynomial,
    held: usize,
    t: f64,
) -> Vec<[f64; 2]> {
    let mut prev: Vec<[f64; 2]> = Vec::new();
    let mut prev_controls: Vec<[f64; 2]> = Vec::new();
    let mut survivors: Vec<[f64; 2]> = Vec::new();
    let mut radius = CONTOUR_BASE;
    for step in 0..CONTOUR_STEPS {
        let here = contour_roots(sys, held, t, radius);
        if here.is_empty() {
            break;
        }
        let controls: Vec<[f64; 2]> = here
            .iter()
            .map(|s| [-sys.components()[0].eval(s), -sys.components()[1].eval(s)])
            .collect();
        if step + 1 == CONTOUR_STEPS {
            for (state, u) in here.iter().zip(&controls) {
                let settled = prev_controls.iter().zip(&prev).any(|(pu, _)| {
                    let d = [(u[0] - pu[0]), (u[1] - pu[1])];
                    (d[0] * d[0] + d[1] * d[1]).sqrt() < MERGE_RADIUS
                });
                if settled && constraint.eval(state).abs() >= AT_INFINITY_MAGNITUDE {
                    survivors.push(*state);
                }
            }
        }
        prev = here;
        prev_controls = controls;
        radius *= CONTOUR_FACTOR;
    }
    survivors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::poly::Term;

    #[test]
    fn companion_roots_match_known_factorizations() {
        // (x-1)(x+2)(x-3) = x^3 - 2x^2 - 5x + 6
        let r = real_roots(&[6.0, -5.0, -2.0, 1.0]);
        assert_eq!(r.len(), 3);
        for (found, expect) in r.iter().zip([-2.0, 1.0, 3.0]) {
            assert!((found - expect).abs() < 1e-12);
        }
        // x^2 + 1: no real roots
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
        // (x-2)^2: double root collapses to one entry
        let d = real_roots(&[4.0, -4.0, 1.0]);
        assert_eq!(d.len(), 1);
        assert!((d[0] - 2.0).abs() < 1e-6);
        // (x^2 - 1/2)^2: two distinct double roots
        let dd = real_roots(&[0.25, 0.0, -1.0, 0.0, 1.0]);
        assert_eq!(dd.len(), 2);
        let half_sqrt = 0.5f64.sqrt();
        assert!((dd[0] + half_sqrt).abs() < 1e-6 && (dd[1] - half_sqrt).abs() < 1e-6);
        // Constants and trimmed leading zeros
        assert!(real_roots(&[3.0]).is_empty());
        assert!(real_roots(&[0.0]).is_empty());
        let lin = real_roots(&[-6.0, 2.0, 0.0, 0.0]);
        assert_eq!(lin.len(), 1);
        assert!((lin[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn bistable_hopf_curve_matches_closed_form() {
        let sys = generators::bistable_chem();
        let curve = bifurcation_curve(&sys, CurveKind::Hopf, (-10.0, 10.0), 200).unwrap();
        let x_sweep: Vec<_> = curve.samples.iter().filter(|s| s.axis == SweepAxis::X).collect();
        assert_eq!(x_sweep.len(), 200);
        for s in &x_sweep {
            let t = s.t;
            assert!((s.control[0] - (-t * t + 24.0 * t + 152.0)).abs() < 1e-8);
            assert!((s.control[1] - (-t * t - 16.0 * t - 76.0)).abs() < 1e-8);
            assert!(s.valid);
        }
        // Merged y-parameterized samples still satisfy the same closed form
        // as a function of their state x coordinate.
        let trace = sys.trace_polynomial().unwrap();
        for s in curve.samples.iter().filter(|s| s.axis == SweepAxis::Y) {
            let x = s.state[0];
            assert!(trace.eval(&s.state).abs() < 1e-8);
            assert!((s.control[0] - (-x * x + 24.0 * x + 152.0)).abs() < 1e-7);
        }
    }

    #[test]
    fn bistable_saddle_node_curve_matches_closed_form() {
        let sys = generators::bistable_chem();
        let curve = bifurcation_curve(&sys, CurveKind::SaddleNode, (-10.0, 10.0), 201).unwrap();
        let det = sys.det_polynomial().unwrap();
        let mut checked_endpoint = false;
        for s in curve.samples.iter().filter(|s| s.axis == SweepAxis::X) {
            let t = s.t;
            assert!(det.eval(&s.state).abs() < 1e-8);
            assert!((s.control[0] - (-t.powi(3) / 4.0 + 7.0 * t * t - 32.0 * t + 24.0)).abs() < 1e-8);
            assert!((s.control[1] - (-3.0 * t * t + 16.0 * t - 12.0)).abs() < 1e-8);
            assert!(s.valid);
            if (t - 2.0).abs() < 1e-12 {
                checked_endpoint = true;
                assert!((s.control[0] + 14.0).abs() < 1e-10);
                assert!((s.control[1] - 8.0).abs() < 1e-10);
            }
        }
        assert!(checked_endpoint, "sweep should land exactly on t = 2");
    }

    #[test]
    fn brusselator_hopf_matches_and_saddle_node_is_empty() {
        let sys = generators::brusselator();
        let hopf = bifurcation_curve(&sys, CurveKind::Hopf, (-3.0, 3.0), 201).unwrap();
        let x_sweep: Vec<_> = hopf.samples.iter().filter(|s| s.axis == SweepAxis::X).collect();
        // T(0, y) = -4 has no root, so exactly the t = 0 column is absent.
        assert_eq!(x_sweep.len(), 200);
        for s in &x_sweep {
            let t = s.t;
            assert!((s.control[0] - (-t.powi(3) / 2.0 + 2.0 * t - 1.0)).abs() < 1e-8);
            assert!((s.control[1] - (t.powi(3) / 2.0 - t)).abs() < 1e-8);
        }
        // The determinant x^2 touches zero along x = 0 without changing
        // sign; that whole line maps to the single control point (-1, 0),
        // which must be reported as a non-transversal (invalid) sample.
        let sn = bifurcation_curve(&sys, CurveKind::SaddleNode, (-3.0, 3.0), 201).unwrap();
        assert!(sn.samples.iter().all(|s| !s.valid), "degenerate contact is not a boundary");
        for s in &sn.samples {
            assert!((s.control[0] + 1.0).abs() < 1e-9 && s.control[1].abs() < 1e-9);
        }
    }

    #[test]
    fn brusselator_hopf_at_infinity_is_the_paper_line() {
        let sys = generators::brusselator();
        let curve =
            bifurcation_curve(&sys, CurveKind::HopfAtInfinity, (-5.0, 5.0), 21).unwrap();
        let trace = sys.trace_polynomial().unwrap();
        // Both held components trace the same control line u1 + u2 = -1, so
        // the merged curve keeps one sample per control point; the sweep
        // value t = -1 (held u1) and t = 0 (held u2) hit the degenerate
        // point u = (-1, 0) where the trace stays bounded, hence 21 + 21
        // parameter values cover 22 distinct points with two holes.
        assert_eq!(curve.samples.len(), 22, "{:?}", curve.samples);
        for s in &curve.samples {
            assert!(
                (s.control[0] + s.control[1] + 1.0).abs() < 1e-6,
                "control {:?} off the line",
                s.control
            );
            let held = match s.axis {
                SweepAxis::X => s.control[0],
                SweepAxis::Y => s.control[1],
            };
            assert!((held - s.t).abs() < 1e-9, "held component is exact");
            assert!(trace.eval(&s.state).abs() >= 1e8);
            assert!(s.valid);
        }
        let covered = |u1: f64| {
            curve.samples.iter().any(|s| (s.control[0] - u1).abs() < 1e-6)
        };
        for k in 0..=20 {
            let t = -5.0 + 0.5 * k as f64;
            assert!(covered(t) || (t + 1.0).abs() < 1e-12, "u1 = {t} missing");
        }
        let sn = bifurcation_curve(&sys, CurveKind::SaddleNodeAtInfinity, (-5.0, 5.0), 21).unwrap();
        assert!(sn.is_empty(), "determinant stays bounded on escaping families");
    }

    #[test]
    fn bistable_chem_has_no_curves_at_infinity() {
        let sys = generators::bistable_chem();
        for kind in [CurveKind::HopfAtInfinity, CurveKind::SaddleNodeAtInfinity] {
            let curve = bifurcation_curve(&sys, kind, (-5.0, 5.0), 11).unwrap();
            assert!(curve.is_empty(), "{kind}: escaping families drag the other control to infinity");
        }
    }

    #[test]
    fn tangential_contact_is_flagged_invalid() {
        // det = (y - x^2)^2 touches zero without a sign change along y = x^2:
        // f = x y^2 - (2/3) x^3 y + x^5 / 5 (so f_x = (y - x^2)^2), g = y.
        let sys = PolySystem::new(
            2,
            vec![
                vec![
                    Term::new(1.0, vec![1, 2]),
                    Term::new(-2.0 / 3.0, vec![3, 1]),
                    Term::new(0.2, vec![5, 0]),
                ],
                vec![Term::new(1.0, vec![0, 1])],
            ],
        )
        .unwrap();
        let det = sys.det_polynomial().unwrap();
        assert!((det.eval(&[1.5, 2.25])).abs() < 1e-12);
        assert!(!validate_boundary(&sys, CurveKind::SaddleNode, [1.5, 2.25]).unwrap());
        let curve = bifurcation_curve(&sys, CurveKind::SaddleNode, (0.5, 2.5), 9).unwrap();
        assert!(!curve.samples.is_empty());
        assert!(curve.samples.iter().all(|s| !s.valid));
    }

    #[test]
    fn hopf_samples_sit_on_the_constraint_and_report_exact_control() {
        let sys = generators::brusselator();
        let curve = bifurcation_curve(&sys, CurveKind::Hopf, (0.5, 2.5), 40).unwrap();
        let trace = sys.trace_polynomial().unwrap();
        for s in &curve.samples {
            assert!(trace.eval(&s.state).abs() < 1e-8);
            let f = sys.eval_drift(&nalgebra::dvector![s.state[0], s.state[1]]).unwrap();
            assert!((s.control[0] + f[0]).abs() < 1e-10);
            assert!((s.control[1] + f[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_sweep_arguments_are_rejected() {
        let sys = generators::brusselator();
        assert!(bifurcation_curve(&sys, CurveKind::Hopf, (1.0, -1.0), 10).is_err());
        assert!(bifurcation_curve(&sys, CurveKind::Hopf, (0.0, 1.0), 0).is_err());
        let sys3 = generators::lorenz();
        assert!(bifurcation_curve(&sys3, CurveKind::Hopf, (0.0, 1.0), 10).is_err());
    }

    /// Finite-difference normal of the control-space curve at the middle of
    /// a three-sample window.
    fn control_normal(window: [&CurveSample; 3]) -> [f64; 2] {
        let tangent = [
            window[2].control[0] - window[0].control[0],
            window[2].control[1] - window[0].control[1],
        ];
        let norm = tangent[0].hypot(tangent[1]);
        assert!(norm > 0.0, "degenerate tangent at t = {}", window[1].t);
        [-tangent[1] / norm, tangent[0] / norm]
    }

    #[test]
    fn fold_offsets_change_root_count_by_exactly_two() {
        use crate::phase::{find_fixed_points, StateBox};
        let sys = generators::bistable_chem();
        let curve = bifurcation_curve(&sys, CurveKind::SaddleNode, (-4.0, 4.0), 161).unwrap();
        // Wide enough for the merging pair at (t, (-2t^2+16t-12)/8) and the
        // bystander root at x = 8 - 2t over the whole sweep.
        let b = StateBox::new(vec![-6.0, -16.0], vec![18.0, 18.0]).unwrap();
        let xs: Vec<&CurveSample> =
            curve.samples.iter().filter(|s| s.axis == SweepAxis::X).collect();
        let mut checked = 0;
        for w in xs.windows(3) {
            let s = w[1];
            if !s.valid {
                continue;
            }
            // Near the cusp at t = 8/3 the two fold branches sit closer
            // together in control space than the probe offset reaches across.
            if (s.t - 8.0 / 3.0).abs() < 0.4 {
                continue;
            }
            let n = control_normal([w[0], w[1], w[2]]);
            let eps = 1e-3;
            let count = |side: f64| {
                find_fixed_points(
                    &sys,
                    &[s.control[0] + side * eps * n[0], s.control[1] + side * eps * n[1]],
                    &b,
                    None,
                )
                .unwrap()
                .len()
            };
            let (lo, hi) = (count(-1.0), count(1.0));
            assert_eq!(lo.abs_diff(hi), 2, "t = {}: {lo} vs {hi} roots across the fold", s.t);
            checked += 1;
        }
        assert!(checked > 120, "swept only {checked} samples");
    }

    #[test]
    fn trace_zero_offsets_flip_the_matching_classes() {
        use crate::phase::{find_fixed_points, RegionClass, StateBox};
        let sys = generators::bistable_chem();
        let curve = bifurcation_curve(&sys, CurveKind::Hopf, (-10.0, 10.0), 201).unwrap();
        // Holds the continued root near (t, -2t - 9.5) for every t in range.
        let b = StateBox::new(vec![-12.0, -35.0], vec![12.0, 15.0]).unwrap();
        let det = sys.det_polynomial().unwrap();
        let xs: Vec<&CurveSample> =
            curve.samples.iter().filter(|s| s.axis == SweepAxis::X).collect();
        let (mut hopf_flips, mut saddle_flips) = (0, 0);
        for w in xs.windows(3) {
            let s = w[1];
            if !s.valid {
                continue;
            }
            // Where the trace-zero locus meets D = 0 the crossing fixed
            // point is degenerate and can fold away under any offset; skip
            // that neighborhood.
            if det.eval(&s.state).abs() < 1.0 {
                continue;
            }
            let n = control_normal([w[0], w[1], w[2]]);
            let eps = 1e-3;
            let continued = |side: f64| {
                let u = [s.control[0] + side * eps * n[0], s.control[1] + side * eps * n[1]];
                find_fixed_points(&sys, &u, &b, None)
                    .unwrap()
                    .into_iter()
                    .min_by(|a, b| {
                        let da = (a.location[0] - s.state[0]).hypot(a.location[1] - s.state[1]);
                        let db = (b.location[0] - s.state[0]).hypot(b.location[1] - s.state[1]);
                        da.total_cmp(&db)
                    })
                    .expect("continued root present")
            };
            let (lo, hi) = (continued(-1.0), continued(1.0));
            for r in [&lo, &hi] {
                let d = (r.location[0] - s.state[0]).hypot(r.location[1] - s.state[1]);
                assert!(d < 0.5, "continuation jumped {d} at t = {}", s.t);
            }
            assert!(lo.jacobian.trace * hi.jacobian.trace < 0.0, "trace keeps its sign at t = {}", s.t);
            let (dlo, dhi) = (lo.jacobian.det.unwrap(), hi.jacobian.det.unwrap());
            let mut classes = [lo.class.class, hi.class.class];
            classes.sort_by_key(|c| format!("{c:?}"));
            if dlo > 0.0 {
                assert!(dhi > 0.0, "determinant flipped with the trace at t = {}", s.t);
                assert_eq!(classes, [RegionClass::A, RegionClass::B], "t = {}", s.t);
                hopf_flips += 1;
            } else {
                assert!(dhi < 0.0, "determinant flipped with the trace at t = {}", s.t);
                assert_eq!(classes, [RegionClass::C, RegionClass::D], "t = {}", s.t);
                saddle_flips += 1;
            }
        }
        assert!(hopf_flips > 60, "saw {hopf_flips} sink-source flips");
        assert!(saddle_flips > 90, "saw {saddle_flips} saddle trace flips");
    }
}
