//! Limit-cycle detection by Poincaré-section recurrence, with
//! trapping-region certificates.
//!
//! The search integrates rings of initial conditions launched around source
//! fixed points (where an attracting cycle must live if the local sink has
//! been destabilized) plus the corners of the search box, discards the first
//! half of each trajectory as transient, and slices the remainder with a
//! vertical Poincaré section through the tail centroid. A trajectory whose
//! successive section crossings converge to a fixed crossing point within
//! 1e-4 is periodic; the gap between the last two crossings estimates the
//! period.
//!
//! A detected cycle is optionally certified with a forward-invariant
//! annulus built the way the Poincaré-Bendixson theorem itself is proved.
//! Each annulus boundary is a Jordan curve made of one trajectory arc,
//! from a point on the section to its first rightward return, closed by
//! the straight section segment between the two endpoints. No orbit can
//! cross the arc, by uniqueness of solutions, and every orbit crosses the
//! section gate in the same direction, so the curve is one-way. An outer
//! curve whose arc starts outside the cycle and returns closer to it, an
//! inner curve doing the same from inside, and a fixed-point-free annulus
//! between them force a closed orbit inside. The recorded margins are the
//! minimum transversal speeds through the two section gates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PolySystem;
use crate::sim::{integrate, PiecewiseControl, SimOptions};

use super::fixed_points::RootFinder;
use super::{RegionClass, StateBox};

/// Tuning knobs for the ring-and-recurrence protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSearchOptions {
    /// Integrator step.
    pub dt: f64,
    /// Integration horizon per initial condition.
    pub horizon: f64,
    /// Points per ring around each source.
    pub ring_count: usize,
    /// Ring radii as fractions of the box diagonal.
    pub ring_radii: Vec<f64>,
    /// Successive Poincaré crossings must agree within this distance.
    pub crossing_tol: f64,
    /// Newton seed lattice per axis for the fixed-point census.
    pub newton_grid: usize,
}

impl Default for CycleSearchOptions {
    fn default() -> Self {
        CycleSearchOptions {
            dt: 0.01,
            horizon: 120.0,
            ring_count: 8,
            ring_radii: vec![0.02, 0.12],
            crossing_tol: 1e-4,
            newton_grid: 25,
        }
    }
}

/// Certificate that an annulus around the cycle is forward-invariant and
/// fixed-point free, so a closed orbit must exist inside it.
///
/// Each boundary polygon is a trajectory arc closed by a straight gate on
/// the Poincaré section; orbits cannot cross the arc and cross the gate
/// only one way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingCertificate {
    /// Enclosing Jordan curve containing the cycle.
    pub outer: Vec<[f64; 2]>,
    /// Inner Jordan curve strictly inside the cycle.
    pub inner: Vec<[f64; 2]>,
    /// Minimum transversal speed through the outer section gate (positive).
    pub outer_margin: f64,
    /// Minimum transversal speed through the inner section gate (positive).
    pub inner_margin: f64,
}

/// One detected limit cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    /// Samples covering one period.
    pub samples: Vec<[f64; 2]>,
    pub period: f64,
    pub centroid: [f64; 2],
    pub trapping: Option<TrappingCertificate>,
    /// Fixed points strictly inside the cycle polygon; index theory demands
    /// at least one.
    pub enclosed_fixed_points: usize,
}

/// Search outcome. `undetermined` reports that some trajectory neither
/// settled, cycled, nor diverged within the horizon, so absence of cycles
/// must not be concluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSearch {
    pub cycles: Vec<LimitCycle>,
    pub undetermined: bool,
}

/// Detect stable limit cycles of F + u inside `bounds` with default options.
pub fn detect_limit_cycles(sys: &PolySystem, u: &[f64], bounds: &StateBox) -> Result<CycleSearch> {
    detect_limit_cycles_with(sys, u, bounds, &CycleSearchOptions::default())
}

pub fn detect_limit_cycles_with(
    sys: &PolySystem,
    u: &[f64],
    bounds: &StateBox,
    opts: &CycleSearchOptions,
) -> Result<CycleSearch> {
    if sys.dim() != 2 {
        return Err(Error::UnsupportedDim { required: "2", got: sys.dim() });
    }
    if u.len() != 2 || bounds.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "cycle search control/box",
            expected: 2,
            got: u.len().max(bounds.dim()),
        });
    }
    let finder = RootFinder::new(sys);
    let uvec = DVector::from_column_slice(u);
    let fps = finder.find(&uvec, bounds, bounds.lattice(opts.newton_grid))?;
    let diag = bounds.diagonal();

    let mut seeds: Vec<DVector<f64>> = Vec::new();
    for fp in fps.iter().filter(|fp| fp.class.class == RegionClass::B) {
        for &frac in &opts.ring_radii {
            let r = frac * diag;
            for j in 0..opts.ring_count {
                let a = std::f64::consts::TAU * (j as f64 + 0.5) / opts.ring_count as f64;
                seeds.push(DVector::from_column_slice(&[
                    fp.location[0] + r * a.cos(),
                    fp.location[1] + r * a.sin(),
                ]));
            }
        }
    }
    seeds.extend(bounds.corners(0.05));
    if fps.is_empty() {
        seeds.push(bounds.center());
    }

    let sim_opts = SimOptions {
        dt: opts.dt,
        divergence_threshold: 1e3 * (1.0 + diag),
        sample_stride: 1,
    };
    let schedule = PiecewiseControl::constant(uvec.clone(), opts.horizon);

    let mut cycles: Vec<LimitCycle> = Vec::new();
    let mut undetermined = false;
    for seed in seeds {
        let traj = match integrate(sys, &seed, &schedule, opts.horizon, &sim_opts) {
            Ok(t) => t,
            Err(Error::Divergence { .. }) => continue,
            Err(e) => return Err(e),
        };
        let n = traj.len();
        if n < 8 {
            continue;
        }
        let tail_start = n / 2;
        let final_state = traj.final_state();
        if fps.iter().any(|fp| (&fp.location - &final_state).norm() < 1e-5) {
            continue;
        }
        let last_step = (traj.state(n - 1) - traj.state(n - 2)).norm();
        if last_step < 1e-9 * (1.0 + diag) {
            continue;
        }
        let tail = tail_start..n;
        let count = (n - tail_start) as f64;
        let cx = tail.clone().map(|k| traj.states[(k, 0)]).sum::<f64>() / count;
        let cy = tail.clone().map(|k| traj.states[(k, 1)]).sum::<f64>() / count;

        // Rightward crossings of the vertical section x = cx.
        let mut crossings: Vec<(usize, f64, f64)> = Vec::new();
        for k in tail_start..n - 1 {
            let (x0, x1) = (traj.states[(k, 0)], traj.states[(k + 1, 0)]);
            if x0 < cx && x1 >= cx {
                let s = (cx - x0) / (x1 - x0);
                let y = traj.states[(k, 1)] + s * (traj.states[(k + 1, 1)] - traj.states[(k, 1)]);
                let t = traj.times[k] + s * (traj.times[k + 1] - traj.times[k]);
                crossings.push((k, t, y));
            }
        }
        let m = crossings.len();
        if m < 4 {
            undetermined = true;
            continue;
        }
        let converged = (m - 3..m).all(|i| (crossings[i].2 - crossings[i - 1].2).abs() < opts.crossing_tol);
        if !converged {
            undetermined = true;
            continue;
        }
        let (k_prev, t_prev, _) = crossings[m - 2];
        let (k_last, t_last, _) = crossings[m - 1];
        let period = t_last - t_prev;
        if period <= 2.0 * opts.dt {
            undetermined = true;
            continue;
        }
        let samples: Vec<[f64; 2]> =
            (k_prev..=k_last).map(|k| [traj.states[(k, 0)], traj.states[(k, 1)]]).collect();
        let centroid = [cx, cy];
        if cycles.iter().any(|c| {
            let d = ((c.centroid[0] - cx).powi(2) + (c.centroid[1] - cy).powi(2)).sqrt();
            d < 0.05 * diag && (c.period - period).abs() < 0.05 * c.period.max(period)
        }) {
            continue;
        }
        let enclosed = fps
            .iter()
            .filter(|fp| point_in_polygon([fp.location[0], fp.location[1]], &samples))
            .count();
        let gate = [cx, crossings[m - 1].2];
        let trapping =
            certify_trapping(sys, &uvec, &samples, gate, &sim_opts, opts.horizon, &fps);
        cycles.push(LimitCycle { samples, period, centroid, trapping, enclosed_fixed_points: enclosed });
    }
    Ok(CycleSearch { cycles, undetermined })
}

/// Ray-casting point-in-polygon test (polygon closed implicitly).
pub(crate) fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// One-way Jordan curve: the trajectory arc from a section seed to its
/// first rightward return, closed by the straight section gate between
/// them.
struct SpiralLoop {
    polygon: Vec<[f64; 2]>,
    gate_margin: f64,
}

/// Integrate from a section point until the first rightward return. The
/// return must land on the seed's side of the cycle's own crossing and
/// strictly closer to it, so the gate never straddles the cycle and gate
/// crossings point toward it.
fn spiral_loop(
    sys: &PolySystem,
    u: &DVector<f64>,
    section_x: f64,
    ystar: f64,
    start_y: f64,
    sim_opts: &SimOptions,
    horizon: f64,
) -> Option<SpiralLoop> {
    let schedule = PiecewiseControl::constant(u.clone(), horizon);
    let seed = DVector::from_column_slice(&[section_x, start_y]);
    let traj = integrate(sys, &seed, &schedule, horizon, sim_opts).ok()?;
    let n = traj.len();
    // First rightward section crossing (k, interpolated y).
    let mut first: Option<(usize, f64)> = None;
    for k in 0..n - 1 {
        let (x0, x1) = (traj.states[(k, 0)], traj.states[(k + 1, 0)]);
        if x0 < section_x && x1 >= section_x {
            let s = (section_x - x0) / (x1 - x0);
            let y = traj.states[(k, 1)] + s * (traj.states[(k + 1, 1)] - traj.states[(k, 1)]);
            first = Some((k, y));
            break;
        }
    }
    let (k_ret, y_ret) = first?;
    if k_ret < 10 {
        return None;
    }
    let (d_seed, d_ret) = (start_y - ystar, y_ret - ystar);
    if d_seed * d_ret <= 0.0 || d_ret.abs() >= d_seed.abs() {
        return None;
    }
    // One-way gate: every point of the section segment between the return
    // and the seed carries positive rightward speed.
    let mut margin = f64::INFINITY;
    for j in 0..=128 {
        let y = y_ret + (start_y - y_ret) * j as f64 / 128.0;
        let f = sys.eval_drift(&DVector::from_column_slice(&[section_x, y])).ok()? + u;
        margin = margin.min(f[0]);
    }
    if margin <= 0.0 {
        return None;
    }
    // The seed is itself on the section, so ending at the interpolated
    // return closes the polygon along the gate exactly.
    let mut polygon: Vec<[f64; 2]> =
        (0..=k_ret).map(|k| [traj.states[(k, 0)], traj.states[(k, 1)]]).collect();
    polygon.push([section_x, y_ret]);
    Some(SpiralLoop { polygon, gate_margin: margin })
}

/// Certify a forward-invariant fixed-point-free annulus around the cycle
/// from one inward and one outward spiral.
fn certify_trapping(
    sys: &PolySystem,
    u: &DVector<f64>,
    cycle: &[[f64; 2]],
    gate: [f64; 2],
    sim_opts: &SimOptions,
    horizon: f64,
    fps: &[super::FixedPointRecord],
) -> Option<TrappingCertificate> {
    let [section_x, ystar] = gate;
    let spread = cycle
        .iter()
        .map(|p| (p[1] - ystar).abs().max((p[0] - section_x).abs()))
        .fold(0.0f64, f64::max);
    if spread <= 0.0 {
        return None;
    }
    let curve = |want_inside: bool| -> Option<SpiralLoop> {
        for frac in [0.3, 0.12, 0.05, 0.02] {
            for dir in [1.0, -1.0] {
                let y = ystar + dir * frac * spread;
                if point_in_polygon([section_x, y], cycle) != want_inside {
                    continue;
                }
                if let Some(found) =
                    spiral_loop(sys, u, section_x, ystar, y, sim_opts, horizon)
                {
                    return Some(found);
                }
            }
        }
        None
    };
    let outer_loop = curve(false)?;
    let inner_loop = curve(true)?;
    let outer = outer_loop.polygon;
    let inner = inner_loop.polygon;
    // Both curves must wind around the core the cycle surrounds: some
    // fixed point sits inside the inner curve, hence inside the outer one
    // too. The gate checks above already place the cycle's own section
    // crossing strictly between the two gates, so the cycle lies in the
    // annulus.
    let core = fps
        .iter()
        .find(|fp| point_in_polygon([fp.location[0], fp.location[1]], &inner))?;
    if !point_in_polygon([core.location[0], core.location[1]], &outer) {
        return None;
    }
    let annulus_clean = fps.iter().all(|fp| {
        let p = [fp.location[0], fp.location[1]];
        !(point_in_polygon(p, &outer) && !point_in_polygon(p, &inner))
    });
    if annulus_clean {
        return Some(TrappingCertificate {
            outer,
            inner,
            outer_margin: outer_loop.gate_margin,
            inner_margin: inner_loop.gate_margin,
        });
    }
    None
}
