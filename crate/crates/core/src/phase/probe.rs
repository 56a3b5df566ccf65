//! Attractor probing for three-dimensional systems.
//!
//! Planar systems get exhaustive treatment elsewhere in this module: the
//! trace / determinant plane classifies every fixed point and the
//! Poincare-Bendixson alternative limits what a bounded orbit can do. In
//! three dimensions neither tool survives, so the map is built empirically.
//! For each control value on a grid the probe locates fixed points by
//! Newton iteration, classifies them by eigenvalue signs, then launches
//! trajectories from perturbed seeds and records where each one settles:
//! onto a fixed point, onto a closed orbit (a near-return recurs at a
//! uniform period), bounded but never periodic, or off to infinity. Runs
//! that exhaust the horizon without meeting any criterion are labeled
//! undetermined rather than guessed.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PolySystem;
use crate::sim::{integrate, PiecewiseControl, SimOptions};

use super::fixed_points::RootFinder;
use super::{Classification, StateBox};

/// Where a probed trajectory ended up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOutcome {
    /// Settled onto the fixed point with this index in the entry's list.
    FixedPoint(usize),
    /// Settled onto a closed orbit with the given period.
    Periodic { period: f64 },
    /// Stayed inside the box for the full horizon without periodicity.
    AperiodicBounded,
    /// Left the divergence radius.
    Diverged,
    /// No criterion met before the horizon ran out.
    Undetermined,
}

impl ProbeOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            ProbeOutcome::FixedPoint(_) => "fixed_point",
            ProbeOutcome::Periodic { .. } => "periodic",
            ProbeOutcome::AperiodicBounded => "aperiodic_bounded",
            ProbeOutcome::Diverged => "diverged",
            ProbeOutcome::Undetermined => "undetermined",
        }
    }
}

/// A fixed point found during probing, with its linearization class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbedFixedPoint {
    pub location: Vec<f64>,
    pub class: Classification,
    /// Real parts of the Jacobian eigenvalues, ascending.
    pub eigen_real_parts: Vec<f64>,
}

/// Probe results for one control value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub u: Vec<f64>,
    pub fixed_points: Vec<ProbedFixedPoint>,
    /// One outcome per launched seed.
    pub outcomes: Vec<ProbeOutcome>,
    /// Outcomes of the protocol's caller-supplied seeds, in the same order
    /// as `ProbeProtocol::extra_seeds`. Planning relies on these: launching
    /// the same physical state under every control shows where that state
    /// ends up as a function of u.
    #[serde(default)]
    pub extra_outcomes: Vec<ProbeOutcome>,
}

impl ProbeEntry {
    /// Indices of fixed points every one of whose seeds returned to it.
    pub fn attracting_fixed_points(&self) -> Vec<usize> {
        (0..self.fixed_points.len())
            .filter(|&i| {
                self.fixed_points[i].class.class.is_sink()
                    && self
                        .outcomes
                        .iter()
                        .any(|o| matches!(o, ProbeOutcome::FixedPoint(j) if *j == i))
            })
            .collect()
    }

    pub fn has_outcome(&self, pred: impl Fn(&ProbeOutcome) -> bool) -> bool {
        self.outcomes.iter().any(pred)
    }
}

/// Full probe table over a list of control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorProbe {
    pub entries: Vec<ProbeEntry>,
}

impl AttractorProbe {
    /// Entry whose control is closest to `u` in the max norm.
    pub fn nearest(&self, u: &[f64]) -> Option<&ProbeEntry> {
        self.entries.iter().min_by(|a, b| {
            let da = a.u.iter().zip(u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let db = b.u.iter().zip(u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            da.total_cmp(&db)
        })
    }
}

/// Tunable parameters of the probing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProtocol {
    /// Newton seeds per axis for the fixed-point census.
    pub newton_grid: usize,
    /// Trajectory seeds launched per fixed point.
    pub seeds_per_fixed_point: usize,
    /// Extra seeds scattered at box corners when no fixed point is found.
    pub fallback_seeds: usize,
    /// Relative perturbation radius, scaled by the box diagonal.
    pub perturbation: f64,
    pub dt: f64,
    pub horizon: f64,
    /// A state within this distance of a fixed point counts as captured.
    pub capture_radius: f64,
    /// Near-return threshold for the periodicity test.
    pub recurrence_tol: f64,
    /// Fixed states launched under every probed control, independent of the
    /// fixed-point census at that control. Their outcomes are reported in
    /// `ProbeEntry::extra_outcomes`.
    #[serde(default)]
    pub extra_seeds: Vec<Vec<f64>>,
}

impl Default for ProbeProtocol {
    fn default() -> Self {
        ProbeProtocol {
            newton_grid: 8,
            seeds_per_fixed_point: 4,
            fallback_seeds: 4,
            perturbation: 2e-3,
            dt: 5e-3,
            horizon: 80.0,
            capture_radius: 1e-5,
            recurrence_tol: 5e-3,
            extra_seeds: Vec::new(),
        }
    }
}

/// Probe every control value in `controls` for the attractors of `sys`.
pub fn probe_attractors(
    sys: &PolySystem,
    controls: &[Vec<f64>],
    bounds: &StateBox,
    protocol: &ProbeProtocol,
) -> Result<AttractorProbe> {
    if sys.dim() != 3 {
        return Err(Error::UnsupportedDim { required: "3", got: sys.dim() });
    }
    if bounds.dim() != 3 {
        return Err(Error::DimensionMismatch {
            context: "probe state box",
            expected: 3,
            got: bounds.dim(),
        });
    }
    let entries = controls
        .par_iter()
        .map(|u| probe_single(sys, u, bounds, protocol))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttractorProbe { entries })
}

fn probe_single(
    sys: &PolySystem,
    u: &[f64],
    bounds: &StateBox,
    protocol: &ProbeProtocol,
) -> Result<ProbeEntry> {
    if u.len() != 3 {
        return Err(Error::DimensionMismatch { context: "probe control", expected: 3, got: u.len() });
    }
    let uvec = DVector::from_column_slice(u);
    let finder = RootFinder::new(sys);
    let records = finder.find(&uvec, bounds, bounds.lattice(protocol.newton_grid))?;
    let fixed_points: Vec<ProbedFixedPoint> = records
        .iter()
        .map(|r| {
            let mut reals: Vec<f64> = r
                .jacobian
                .eigenvalues
                .as_ref()
                .map(|ev| ev.iter().map(|l| l.re).collect())
                .unwrap_or_default();
            reals.sort_by(f64::total_cmp);
            ProbedFixedPoint {
                location: r.location.iter().copied().collect(),
                class: r.class,
                eigen_real_parts: reals,
            }
        })
        .collect();

    let diag = bounds.diagonal();
    let mut seeds: Vec<DVector<f64>> = Vec::new();
    for r in &records {
        for k in 0..protocol.seeds_per_fixed_point {
            // Deterministic perturbation directions: vertices of a simplex
            // spun around the fixed point.
            let phi = std::f64::consts::TAU * (k as f64 + 0.5)
                / protocol.seeds_per_fixed_point as f64;
            let dir = DVector::from_vec(vec![
                phi.cos(),
                phi.sin(),
                (2.0 * phi).sin() * 0.5 + 0.25,
            ]);
            let dir = &dir / dir.norm();
            seeds.push(&r.location + dir * (protocol.perturbation * diag));
        }
    }
    if seeds.is_empty() {
        for corner in bounds.corners(0.2).into_iter().take(protocol.fallback_seeds) {
            seeds.push(corner);
        }
    }

    let opts = SimOptions {
        dt: protocol.dt,
        divergence_threshold: 20.0 * (1.0 + diag),
        sample_stride: 1,
    };
    let schedule = PiecewiseControl::constant(uvec.clone(), protocol.horizon);
    let outcomes = seeds
        .iter()
        .map(|seed| classify_orbit(sys, seed, &schedule, &opts, protocol, &records))
        .collect::<Result<Vec<_>>>()?;
    let extra_outcomes = protocol
        .extra_seeds
        .iter()
        .map(|s| {
            if s.len() != 3 {
                return Err(Error::DimensionMismatch {
                    context: "probe extra seed",
                    expected: 3,
                    got: s.len(),
                });
            }
            classify_orbit(sys, &DVector::from_column_slice(s), &schedule, &opts, protocol, &records)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ProbeEntry { u: u.to_vec(), fixed_points, outcomes, extra_outcomes })
}

fn classify_orbit(
    sys: &PolySystem,
    seed: &DVector<f64>,
    schedule: &PiecewiseControl,
    opts: &SimOptions,
    protocol: &ProbeProtocol,
    records: &[super::fixed_points::FixedPointRecord],
) -> Result<ProbeOutcome> {
    let traj = match integrate(sys, seed, schedule, protocol.horizon, opts) {
        Ok(t) => t,
        Err(Error::Divergence { .. }) => return Ok(ProbeOutcome::Diverged),
        Err(e) => return Err(e),
    };
    let last = traj.final_state();
    if let Some(idx) = records
        .iter()
        .position(|r| (&r.location - &last).norm() < protocol.capture_radius)
    {
        return Ok(ProbeOutcome::FixedPoint(idx));
    }
    // Slow drift toward a fixed point also counts as capture when the
    // velocity has collapsed and the nearest fixed point is a sink.
    let speed = (sys.eval_drift(&last)? + &schedule.segments()[0].0).norm();
    if speed < 1e-7 {
        if let Some(idx) = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.class.class.is_sink())
            .min_by(|a, b| {
                (&a.1.location - &last).norm().total_cmp(&(&b.1.location - &last).norm())
            })
            .map(|(i, _)| i)
        {
            return Ok(ProbeOutcome::FixedPoint(idx));
        }
    }
    let states: Vec<DVector<f64>> = (0..traj.len()).map(|k| traj.state(k)).collect();
    match periodicity(&states, traj.stored_dt(), protocol) {
        Periodicity::Periodic(period) => Ok(ProbeOutcome::Periodic { period }),
        Periodicity::Aperiodic => Ok(ProbeOutcome::AperiodicBounded),
        Periodicity::Inconclusive => Ok(ProbeOutcome::Undetermined),
    }
}

enum Periodicity {
    Periodic(f64),
    Aperiodic,
    Inconclusive,
}

/// Decide whether the tail of a bounded orbit closes on itself.
///
/// A candidate period comes from the closest return to the final state over
/// a lookback window; the candidate is confirmed only if shifting the whole
/// tail by it reproduces the tail uniformly. A strange attractor produces
/// close returns but fails the uniform test, which is exactly the
/// distinction the aperiodic label needs.
fn periodicity(states: &[DVector<f64>], dt: f64, protocol: &ProbeProtocol) -> Periodicity {
    let n = states.len();
    if n < 64 {
        return Periodicity::Inconclusive;
    }
    let tail_start = n / 2;
    let last = &states[n - 1];
    let scale = states[tail_start..]
        .iter()
        .map(|s| (s - last).norm())
        .fold(0.0, f64::max)
        .max(1e-12);
    // A return only counts before the orbit's last genuine departure from
    // the final state; the trailing approach would otherwise match itself.
    let min_lag = 8;
    let tol = protocol.recurrence_tol * scale;
    let Some(k_far) = (tail_start..n).rev().find(|&k| (&states[k] - last).norm() >= 0.25 * scale)
    else {
        return Periodicity::Inconclusive;
    };
    let k_hi = k_far.min(n - 1 - min_lag);
    if k_hi <= tail_start {
        return Periodicity::Inconclusive;
    }
    let d_at = |k: usize| (&states[k] - last).norm();
    let (k_best, d_best) = (tail_start..=k_hi)
        .map(|k| (k, d_at(k)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty range");
    if d_best > tol {
        // Never came close to the final state again: bounded but with no
        // sign of closure. The orbit might simply need more time, so only
        // call it aperiodic when the window spans many lags.
        let lag = n - 1 - k_best;
        return if n - tail_start > 4 * lag.max(min_lag) {
            Periodicity::Aperiodic
        } else {
            Periodicity::Inconclusive
        };
    }
    // Fundamental return: the latest index meeting the tolerance, walked
    // down to its local minimum. Taking the globally closest return
    // instead would often land on a double or triple lap, which noise can
    // make infinitesimally closer than a single one.
    let mut k_ret = (tail_start..=k_hi).rev().find(|&k| d_at(k) <= tol).unwrap_or(k_best);
    while k_ret > tail_start && d_at(k_ret - 1) < d_at(k_ret) {
        k_ret -= 1;
    }
    let lag = n - 1 - k_ret;
    // Uniform verification over up to two periods of history.
    let span = (2 * lag).min(n - 1 - tail_start - lag);
    if span < min_lag {
        return Periodicity::Inconclusive;
    }
    let start = n - 1 - lag - span;
    let worst = (start..start + span)
        .map(|k| (&states[k] - &states[k + lag]).norm())
        .fold(0.0, f64::max);
    if worst >= 4.0 * tol {
        return Periodicity::Aperiodic;
    }
    // A genuine cycle also matches two laps back; a chaotic near-return
    // degrades roughly exponentially with the shift and fails this.
    if n - 1 >= tail_start + 2 * lag + span {
        let start2 = n - 1 - 2 * lag - span;
        let worst2 = (start2..start2 + span)
            .map(|k| (&states[k] - &states[k + 2 * lag]).norm())
            .fold(0.0, f64::max);
        if worst2 >= 8.0 * tol {
            return Periodicity::Aperiodic;
        }
    }
    Periodicity::Periodic(lag as f64 * dt)
}
