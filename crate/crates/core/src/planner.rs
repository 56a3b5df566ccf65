//! Feed-forward planning of transitions between coexisting attractors.
//!
//! A stability map assigns every control-plane cell a class per branch, so
//! steering the system from branch j to branch k reduces to a search over
//! cells: hold a constant u that removes or destabilizes j while keeping k
//! attracting, wait for the state to fall onto k's moved fixed point, then
//! release the control and let the point slide back to its rest position.
//! No feedback is involved; every segment is a constant control with a
//! duration fixed at planning time.
//!
//! Candidate cells satisfy the necessary condition: k in class A and j not
//! in class A. They are ranked in three tiers by mechanism:
//!
//!   1. source absent: j has no fixed point at u at all. The branch was
//!      annihilated in a fold, the state has nowhere to stay, and descent
//!      toward the surviving attractor starts immediately.
//!   2. only sink: j still exists but every branch other than k is non-A,
//!      so k is the only place a bounded trajectory can settle.
//!   3. source destabilized: only the necessary condition holds. The state
//!      leaves j, but other sinks or a limit cycle may capture it first.
//!
//! Within the winning tier the planner maximizes a robustness margin: the
//! Chebyshev distance, in control units, from the chosen cell center to
//! the nearest cell outside the tier's candidate set. A large margin keeps
//! the plan valid under control-actuation error and map-resolution error.
//! Tier 3 plans destabilize the source in place, the mechanism of a Hopf
//! crossing, so they are vetted against a detected limit cycle ringing the
//! source: such a cycle inherits the neighborhood's stability and would
//! trap the departing state. The veto is [`Error::CycleObstruction`].
//!
//! Durations come from the reduced model itself. Each transition segment
//! lasts the simulated time for the model to fall within `tolerance` of
//! the target's moved fixed point, times a safety factor; each hold
//! segment lasts the simulated relaxation back to the rest position, times
//! the same factor, plus the dwell the caller wants to observe. A model
//! that fails to converge within the horizon cap aborts planning, since a
//! slow or absent descent usually means an undetected attractor between
//! the branches. The schedule therefore replays exactly on the model by
//! construction; [`execute_and_verify`] replays it on the full system and
//! reports, per leg, whether the projected state sat within `tolerance`
//! of the target for the final `dwell` of the hold.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{
    detect_limit_cycles_with, point_in_polygon, AttractorProbe, CellClass, CycleSearchOptions,
    ProbeOutcome, RootFinder, StabilityMap, StateBox,
};
use crate::poly::PolySystem;
use crate::reduce::ReducedBasis;
use crate::sim::{integrate, PiecewiseControl, SimOptions, Trajectory};

/// Default capture tolerance around a target fixed point.
pub const DEFAULT_TOLERANCE: f64 = 0.1;
/// Default dwell the state must spend captured at the end of a leg.
pub const DEFAULT_DWELL: f64 = 5.0;
/// Default multiplier on simulated convergence times.
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.5;
/// Default model-time budget for any single convergence simulation.
pub const DEFAULT_HORIZON_CAP: f64 = 500.0;

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_dwell() -> f64 {
    DEFAULT_DWELL
}

/// Ordered list of attractor branches to visit.
///
/// The first entry is where the system is assumed to start, at rest under
/// zero control; every entry must be an attractor branch of the map used
/// for planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePath {
    /// Branch ids in visiting order.
    pub targets: Vec<usize>,
    /// A leg succeeds when the reduced state is within this distance of
    /// the target's fixed point.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// The captured state must stay within tolerance this long at the end
    /// of each leg.
    #[serde(default = "default_dwell")]
    pub dwell: f64,
}

impl ObjectivePath {
    pub fn new(targets: Vec<usize>) -> Self {
        ObjectivePath { targets, tolerance: DEFAULT_TOLERANCE, dwell: DEFAULT_DWELL }
    }
}

/// Mechanism that justified a transition control, strongest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionTier {
    /// The source branch has no fixed point at the chosen control.
    SourceAbsent,
    /// The source persists but the target is the only stable branch.
    OnlySink,
    /// Only the necessary condition holds; the source is merely unstable.
    SourceDestabilized,
    /// Degenerate plan for from == to: stay where the state already is.
    Stay,
}

impl TransitionTier {
    /// Preference rank, 1 strongest; 0 for the degenerate stay plan.
    pub fn rank(self) -> u8 {
        match self {
            TransitionTier::SourceAbsent => 1,
            TransitionTier::OnlySink => 2,
            TransitionTier::SourceDestabilized => 3,
            TransitionTier::Stay => 0,
        }
    }
}

/// A vetted constant control that drives one branch-to-branch transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPlan {
    /// Chosen control, the center of `cell`.
    pub u: [f64; 2],
    pub cell: [usize; 2],
    pub tier: TransitionTier,
    /// Chebyshev distance in control units from `u` to the nearest cell
    /// outside the winning candidate set.
    pub margin: f64,
}

/// Why a schedule segment exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "target")]
pub enum SegmentPurpose {
    /// Drive the state toward the target branch's moved fixed point.
    Transition(usize),
    /// Keep the state parked on the target branch near rest.
    Hold(usize),
}

impl SegmentPurpose {
    pub fn target(&self) -> usize {
        match *self {
            SegmentPurpose::Transition(k) | SegmentPurpose::Hold(k) => k,
        }
    }
}

/// One constant-control piece of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    /// Reduced-space control held over the whole segment.
    pub u: Vec<f64>,
    /// Full-space control, filled in by [`ControlSchedule::lift`].
    pub lifted: Option<Vec<f64>>,
    pub duration: f64,
    pub purpose: SegmentPurpose,
    /// Mechanism tier, on transition segments.
    pub tier: Option<TransitionTier>,
    /// Robustness margin, on transition segments.
    pub margin: Option<f64>,
    /// Where the model puts the segment's target under this control; the
    /// verification of a hold segment measures distance to this point.
    pub target_location: Vec<f64>,
}

/// Open-loop control schedule with the model's predicted trajectory.
///
/// Identical maps and objectives yield byte-identical schedules: planning
/// uses no randomness and fixed-step integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub segments: Vec<ScheduleSegment>,
    pub tolerance: f64,
    pub dwell: f64,
    /// Sample times of the model's predicted reduced trajectory.
    pub predicted_times: Vec<f64>,
    /// Predicted reduced states, one row per sample time.
    pub predicted_states: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Fill every segment's full-space control via `basis.lift_control`.
    pub fn lift(&mut self, basis: &ReducedBasis) -> Result<()> {
        for seg in &mut self.segments {
            let lifted = basis.lift_control(&seg.u)?;
            seg.lifted = Some(lifted.iter().copied().collect());
        }
        Ok(())
    }

    /// The schedule as a piecewise-constant control in reduced space.
    pub fn piecewise_reduced(&self) -> Result<PiecewiseControl> {
        PiecewiseControl::from_segments(
            self.segments
                .iter()
                .map(|s| (DVector::from_column_slice(&s.u), s.duration))
                .collect(),
        )
    }
}

/// Planner tuning: where to look for obstructing cycles and how to time
/// the model simulations that fix segment durations.
#[derive(Debug, Clone)]
pub struct PlanOptions {
    /// State box searched when vetting destabilization plans for cycles.
    pub state_box: StateBox,
    /// Multiplier on simulated convergence times.
    pub safety_factor: f64,
    /// Budget for any single convergence simulation, in model time.
    pub horizon_cap: f64,
    /// Integrator settings for the model simulations.
    pub sim: SimOptions,
    pub cycle_options: CycleSearchOptions,
}

impl PlanOptions {
    pub fn for_state_box(state_box: StateBox) -> Self {
        PlanOptions {
            state_box,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            horizon_cap: DEFAULT_HORIZON_CAP,
            sim: SimOptions::default(),
            cycle_options: CycleSearchOptions::default(),
        }
    }
}

/// Smallest Chebyshev distance, in control units, from `cell`'s center to
/// the center of any cell outside `selected`. When every cell is selected
/// the distance to the nearest control-box edge is reported instead.
fn chebyshev_margin(map: &StabilityMap, selected: &[bool], cell: [usize; 2]) -> f64 {
    let [nx, ny] = map.resolution;
    let center = map.cell_u(cell[0], cell[1]);
    let mut best = f64::INFINITY;
    for iy in 0..ny {
        for ix in 0..nx {
            if selected[iy * nx + ix] {
                continue;
            }
            let other = map.cell_u(ix, iy);
            let d = (center[0] - other[0]).abs().max((center[1] - other[1]).abs());
            best = best.min(d);
        }
    }
    if best.is_finite() {
        return best;
    }
    let b = &map.control_box;
    (center[0] - b.lo[0])
        .min(b.hi[0] - center[0])
        .min(center[1] - b.lo[1])
        .min(b.hi[1] - center[1])
}

/// Pick the max-margin cell of `selected`, raster order breaking ties.
fn best_cell(map: &StabilityMap, selected: &[bool]) -> Option<([usize; 2], f64)> {
    let [nx, ny] = map.resolution;
    let mut best: Option<([usize; 2], f64)> = None;
    for iy in 0..ny {
        for ix in 0..nx {
            if !selected[iy * nx + ix] {
                continue;
            }
            let margin = chebyshev_margin(map, selected, [ix, iy]);
            if best.map_or(true, |(_, m)| margin > m) {
                best = Some(([ix, iy], margin));
            }
        }
    }
    best
}

fn branch_location(map: &StabilityMap, branch: usize, cell: [usize; 2]) -> Option<DVector<f64>> {
    map.cell(cell[0], cell[1])
        .roots
        .iter()
        .find(|r| r.branch_id == Some(branch))
        .map(|r| r.location.clone())
}

/// Check that no detected limit cycle at `u` rings `source`: a stable
/// cycle around the departing fixed point traps the trajectory and the
/// transition can never complete.
fn vet_against_cycles(
    model: &PolySystem,
    u: [f64; 2],
    source: &DVector<f64>,
    opts: &PlanOptions,
) -> Result<()> {
    let found = detect_limit_cycles_with(model, &[u[0], u[1]], &opts.state_box, &opts.cycle_options)?;
    for cycle in &found.cycles {
        if point_in_polygon([source[0], source[1]], &cycle.samples) {
            return Err(Error::CycleObstruction { u1: u[0], u2: u[1] });
        }
    }
    Ok(())
}

/// Plan a single transition from branch `from` to branch `to` over `map`.
///
/// Candidates are cells with `to` in class A and `from` outside it; the
/// strongest nonempty mechanism tier wins and the max-margin cell inside
/// it is chosen. Destabilization-only plans are vetted for an obstructing
/// limit cycle around the source. `from == to` degenerates to a stay plan
/// at zero control, or at the nearest cell keeping `to` stable.
pub fn plan_transition(
    model: &PolySystem,
    map: &StabilityMap,
    from: usize,
    to: usize,
    opts: &PlanOptions,
) -> Result<TransitionPlan> {
    let [nx, ny] = map.resolution;
    if from >= map.branch_count || to >= map.branch_count {
        return Err(Error::InvalidSpec(format!(
            "transition {} -> {} outside the map's {} branches",
            from, to, map.branch_count
        )));
    }

    if from == to {
        let mut stable = vec![false; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                stable[iy * nx + ix] = map.class_at(to, ix, iy) == CellClass::A;
            }
        }
        let rest = map.nearest_cell([0.0, 0.0]);
        let cell = if stable[rest[1] * nx + rest[0]] {
            rest
        } else {
            // Nearest stable cell to zero control, by center distance.
            let mut best: Option<([usize; 2], f64)> = None;
            for iy in 0..ny {
                for ix in 0..nx {
                    if !stable[iy * nx + ix] {
                        continue;
                    }
                    let c = map.cell_u(ix, iy);
                    let d = c[0].abs().max(c[1].abs());
                    if best.map_or(true, |(_, bd)| d < bd) {
                        best = Some(([ix, iy], d));
                    }
                }
            }
            best.ok_or(Error::NoTransition {
                from,
                to,
                evidence: "branch is never in class A anywhere on the grid".to_string(),
            })?
            .0
        };
        let u = if cell == rest && stable[rest[1] * nx + rest[0]] {
            [0.0, 0.0]
        } else {
            map.cell_u(cell[0], cell[1])
        };
        let margin = chebyshev_margin(map, &stable, cell);
        return Ok(TransitionPlan { u, cell, tier: TransitionTier::Stay, margin });
    }

    let mut candidates = vec![false; nx * ny];
    let mut tier1 = vec![false; nx * ny];
    let mut tier2 = vec![false; nx * ny];
    let mut any = false;
    for iy in 0..ny {
        for ix in 0..nx {
            if map.class_at(to, ix, iy) != CellClass::A {
                continue;
            }
            let from_class = map.class_at(from, ix, iy);
            if from_class == CellClass::A {
                continue;
            }
            let idx = iy * nx + ix;
            candidates[idx] = true;
            any = true;
            tier1[idx] = from_class == CellClass::Absent;
            tier2[idx] = (0..map.branch_count)
                .all(|b| b == to || map.class_at(b, ix, iy) != CellClass::A);
        }
    }
    if !any {
        return Err(Error::NoTransition {
            from,
            to,
            evidence: format!(
                "no cell of the {}x{} grid has branch {} stable while branch {} is not",
                nx, ny, to, from
            ),
        });
    }

    let (selection, tier) = if tier1.iter().any(|&s| s) {
        (tier1, TransitionTier::SourceAbsent)
    } else if tier2.iter().any(|&s| s) {
        (tier2, TransitionTier::OnlySink)
    } else {
        (candidates, TransitionTier::SourceDestabilized)
    };
    let (cell, margin) = best_cell(map, &selection).expect("tier chosen nonempty");
    let u = map.cell_u(cell[0], cell[1]);

    if tier != TransitionTier::SourceAbsent {
        // The source still has a fixed point here; make sure no stable
        // cycle born of its destabilization walls the state in.
        let source = branch_location(map, from, cell).ok_or_else(|| {
            Error::Planning(format!(
                "branch {} marked present at cell {:?} but carries no root",
                from, cell
            ))
        })?;
        vet_against_cycles(model, u, &source, opts)?;
    }

    Ok(TransitionPlan { u, cell, tier, margin })
}

/// First recorded time at which the model, started at `z0` under constant
/// `u`, comes within `tol` of `target`. `Ok(None)` means the horizon cap
/// passed without capture.
fn first_capture_time(
    model: &PolySystem,
    z0: &DVector<f64>,
    u: &DVector<f64>,
    target: &DVector<f64>,
    tol: f64,
    opts: &PlanOptions,
) -> Result<Option<f64>> {
    let control = PiecewiseControl::constant(u.clone(), opts.horizon_cap);
    let traj = match integrate(model, z0, &control, opts.horizon_cap, &opts.sim) {
        Ok(t) => t,
        Err(Error::Divergence { t, .. }) => {
            return Err(Error::Planning(format!(
                "reduced model diverged at t = {:.2} under u = {:?}",
                t, u
            )))
        }
        Err(e) => return Err(e),
    };
    for k in 0..traj.len() {
        if (traj.state(k) - target).norm() <= tol {
            return Ok(Some(traj.times[k]));
        }
    }
    Ok(None)
}

/// Model state after holding `u` for `duration` from `z0`.
fn advance(
    model: &PolySystem,
    z0: &DVector<f64>,
    u: &DVector<f64>,
    duration: f64,
    opts: &PlanOptions,
) -> Result<DVector<f64>> {
    if duration <= 0.0 {
        return Ok(z0.clone());
    }
    let control = PiecewiseControl::constant(u.clone(), duration);
    let traj = integrate(model, z0, &control, duration, &opts.sim)?;
    Ok(traj.final_state())
}

/// Hold control for `target`: zero when the zero-control cell keeps the
/// branch in class A, otherwise the nearest cell center that does.
fn hold_control(map: &StabilityMap, target: usize) -> Result<([f64; 2], [usize; 2])> {
    let [nx, ny] = map.resolution;
    let rest = map.nearest_cell([0.0, 0.0]);
    if map.class_at(target, rest[0], rest[1]) == CellClass::A {
        return Ok(([0.0, 0.0], rest));
    }
    let mut best: Option<([usize; 2], f64)> = None;
    for iy in 0..ny {
        for ix in 0..nx {
            if map.class_at(target, ix, iy) != CellClass::A {
                continue;
            }
            let c = map.cell_u(ix, iy);
            let d = c[0].abs().max(c[1].abs());
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some(([ix, iy], d));
            }
        }
    }
    let (cell, _) = best.ok_or_else(|| {
        Error::Planning(format!("branch {} has no stable cell to hold at", target))
    })?;
    Ok((map.cell_u(cell[0], cell[1]), cell))
}

/// Root of `branch` at exactly `u`, polished by Newton from the map's
/// stored root at `cell` (whose center may differ from `u`).
fn located_root(
    model: &PolySystem,
    map: &StabilityMap,
    branch: usize,
    cell: [usize; 2],
    u: [f64; 2],
) -> Result<DVector<f64>> {
    let seed = branch_location(map, branch, cell).ok_or_else(|| {
        Error::Planning(format!("branch {} has no root at cell {:?}", branch, cell))
    })?;
    let uvec = DVector::from_column_slice(&u);
    Ok(RootFinder::new(model).newton(&uvec, &seed).unwrap_or(seed))
}

/// Plan an open-loop schedule visiting `objective.targets` in order.
///
/// The system starts at rest on the first target. Every later target gets
/// a transition segment (control from [`plan_transition`], duration the
/// model's capture time times the safety factor) followed by a hold
/// segment (hold control, duration the model's relaxation time times the
/// safety factor plus the dwell). A model that cannot capture within the
/// horizon cap aborts with [`Error::Planning`]: the likely cause is an
/// undetected attractor between source and target.
pub fn plan_path(
    model: &PolySystem,
    map: &StabilityMap,
    objective: &ObjectivePath,
    opts: &PlanOptions,
) -> Result<ControlSchedule> {
    if model.dim() != 2 {
        return Err(Error::UnsupportedDim { required: "2", got: model.dim() });
    }
    if objective.targets.is_empty() {
        return Err(Error::InvalidSpec("objective lists no targets".to_string()));
    }
    if objective.tolerance <= 0.0 || objective.dwell <= 0.0 {
        return Err(Error::InvalidSpec(
            "objective tolerance and dwell must be positive".to_string(),
        ));
    }
    let stable_somewhere = |b: usize| {
        (0..map.resolution[1]).any(|iy| {
            (0..map.resolution[0]).any(|ix| map.class_at(b, ix, iy) == CellClass::A)
        })
    };
    for &t in &objective.targets {
        if t >= map.branch_count {
            return Err(Error::Planning(format!(
                "objective target {} exceeds the map's {} branches",
                t, map.branch_count
            )));
        }
        if !stable_somewhere(t) {
            return Err(Error::Planning(format!(
                "objective target {} is never an attractor on this map",
                t
            )));
        }
    }

    let (u0, cell0) = hold_control(map, objective.targets[0])?;
    let start = located_root(model, map, objective.targets[0], cell0, u0)?;
    let mut segments: Vec<ScheduleSegment> = Vec::new();
    let mut z = start.clone();

    let push_hold = |segments: &mut Vec<ScheduleSegment>,
                         z: &mut DVector<f64>,
                         target: usize|
     -> Result<()> {
        let (uh, cellh) = hold_control(map, target)?;
        let hold_target = located_root(model, map, target, cellh, uh)?;
        let uh_vec = DVector::from_column_slice(&uh);
        let relax = first_capture_time(model, z, &uh_vec, &hold_target, objective.tolerance, opts)?
            .ok_or_else(|| {
                Error::Planning(format!(
                    "relaxation onto branch {} at the hold control never entered tolerance \
                     within {} time units",
                    target, opts.horizon_cap
                ))
            })?;
        let duration = objective.dwell + opts.safety_factor * relax;
        *z = advance(model, z, &uh_vec, duration, opts)?;
        segments.push(ScheduleSegment {
            u: uh.to_vec(),
            lifted: None,
            duration,
            purpose: SegmentPurpose::Hold(target),
            tier: None,
            margin: None,
            target_location: hold_target.iter().copied().collect(),
        });
        Ok(())
    };

    if objective.targets.len() == 1 {
        push_hold(&mut segments, &mut z, objective.targets[0])?;
    }

    for (leg, pair) in objective.targets.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        if from == to {
            push_hold(&mut segments, &mut z, to)?;
            continue;
        }
        let plan = plan_transition(model, map, from, to, opts)?;
        let u_vec = DVector::from_column_slice(&plan.u);
        let target = located_root(model, map, to, plan.cell, plan.u)?;
        let capture = first_capture_time(model, &z, &u_vec, &target, objective.tolerance, opts)?
            .ok_or_else(|| {
                Error::Planning(format!(
                    "leg {} ({} -> {}): the model never entered tolerance of the target \
                     within {} time units; an undetected attractor may capture the state \
                     along the way",
                    leg, from, to, opts.horizon_cap
                ))
            })?;
        let duration = (opts.safety_factor * capture).max(opts.sim.dt);
        z = advance(model, &z, &u_vec, duration, opts)?;
        segments.push(ScheduleSegment {
            u: plan.u.to_vec(),
            lifted: None,
            duration,
            purpose: SegmentPurpose::Transition(to),
            tier: Some(plan.tier),
            margin: Some(plan.margin),
            target_location: target.iter().copied().collect(),
        });
        push_hold(&mut segments, &mut z, to)?;
    }

    // Predicted trajectory: one clean replay of the whole schedule.
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    let control = PiecewiseControl::from_segments(
        segments.iter().map(|s| (DVector::from_column_slice(&s.u), s.duration)).collect(),
    )?;
    let traj = integrate(model, &start, &control, total, &opts.sim)?;
    let stride = (traj.len() / 4000).max(1);
    let mut predicted_times = Vec::new();
    let mut predicted_states = Vec::new();
    for k in (0..traj.len()).step_by(stride) {
        predicted_times.push(traj.times[k]);
        predicted_states.push(traj.state(k).iter().copied().collect());
    }

    Ok(ControlSchedule {
        segments,
        tolerance: objective.tolerance,
        dwell: objective.dwell,
        predicted_times,
        predicted_states,
    })
}

/// Verification of one leg: did the projected state sit on the target?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegReport {
    pub target: usize,
    pub success: bool,
    /// Time window [end - dwell, end] of the leg's hold segment.
    pub hold_window: [f64; 2],
    /// Largest distance to the target inside the window, if any sample
    /// landed there.
    pub max_error: Option<f64>,
    /// Distance at the last sample of the window.
    pub final_error: Option<f64>,
}

/// Outcome of replaying a schedule on the full system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub legs: Vec<LegReport>,
    /// Every leg succeeded and the trajectory stayed bounded.
    pub success: bool,
    pub diverged: bool,
    /// Root-mean-square distance between the projected trajectory and the
    /// model's prediction, over the common time range.
    pub tracking_rms: Option<f64>,
    pub tracking_max: Option<f64>,
    pub actual_times: Vec<f64>,
    /// Projected reduced states of the full-system trajectory.
    pub actual_reduced: Vec<Vec<f64>>,
    /// Copy of the schedule's predicted samples, for side-by-side export.
    pub predicted_times: Vec<f64>,
    pub predicted_states: Vec<Vec<f64>>,
    pub note: String,
}

/// Replay `schedule` on the full system from `x0` and verify each leg.
///
/// Controls are lifted through `basis` (stored lifted controls win over
/// recomputation). A leg succeeds when every projected sample in the final
/// `dwell` of its hold segment lies within `tolerance` of the segment's
/// target location. Divergence does not raise: the report comes back
/// failed, with the partial trajectory's data filled in.
pub fn execute_and_verify(
    sys: &PolySystem,
    basis: &ReducedBasis,
    schedule: &ControlSchedule,
    x0: &DVector<f64>,
    opts: &SimOptions,
) -> Result<VerificationReport> {
    if schedule.segments.is_empty() {
        return Err(Error::Config("schedule has no segments".to_string()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            context: "execution initial state",
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    let mut lifted_segments = Vec::with_capacity(schedule.segments.len());
    for seg in &schedule.segments {
        let u = match &seg.lifted {
            Some(v) => {
                if v.len() != sys.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "lifted segment control",
                        expected: sys.dim(),
                        got: v.len(),
                    });
                }
                DVector::from_column_slice(v)
            }
            None => basis.lift_control(&seg.u)?,
        };
        lifted_segments.push((u, seg.duration));
    }
    let control = PiecewiseControl::from_segments(lifted_segments)?;
    let total = schedule.total_duration();

    let (traj, diverged): (Trajectory, bool) = match integrate(sys, x0, &control, total, opts) {
        Ok(t) => (t, false),
        Err(Error::Divergence { partial, .. }) => (*partial, true),
        Err(e) => return Err(e),
    };

    let mut actual_times: Vec<f64> = Vec::with_capacity(traj.len());
    let mut actual_reduced: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let z = basis.project(&traj.state(k))?;
        actual_times.push(traj.times[k]);
        actual_reduced.push(z.iter().copied().collect());
    }

    // Per-leg verdicts over the hold windows.
    let mut legs = Vec::new();
    let mut elapsed = 0.0;
    for seg in &schedule.segments {
        elapsed += seg.duration;
        let SegmentPurpose::Hold(target) = seg.purpose else {
            continue;
        };
        let window = [(elapsed - schedule.dwell).max(elapsed - seg.duration), elapsed];
        let target_z = DVector::from_column_slice(&seg.target_location);
        let lo = actual_times.partition_point(|&t| t < window[0] - 1e-12);
        let hi = actual_times.partition_point(|&t| t <= window[1] + 1e-12);
        let mut max_error: Option<f64> = None;
        let mut final_error = None;
        for k in lo..hi {
            let d = (DVector::from_column_slice(&actual_reduced[k]) - &target_z).norm();
            max_error = Some(max_error.map_or(d, |m: f64| m.max(d)));
            final_error = Some(d);
        }
        // The window must be fully covered: a trajectory cut short by
        // divergence fails every remaining leg.
        let covered = hi > lo
            && actual_times.get(hi.saturating_sub(1)).is_some_and(|&t| t >= window[1] - opts.dt);
        let success =
            covered && max_error.is_some_and(|m| m <= schedule.tolerance + 1e-12);
        legs.push(LegReport {
            target,
            success,
            hold_window: window,
            max_error,
            final_error,
        });
    }

    // Tracking error against the model's prediction, matched by time.
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut max_dev: Option<f64> = None;
    for (i, &tp) in schedule.predicted_times.iter().enumerate() {
        let j = actual_times.partition_point(|&t| t < tp);
        let j = match (j.checked_sub(1), j) {
            (Some(a), b) if b < actual_times.len() => {
                if (actual_times[a] - tp).abs() <= (actual_times[b] - tp).abs() {
                    a
                } else {
                    b
                }
            }
            (Some(a), _) => a,
            (None, b) if b < actual_times.len() => b,
            _ => continue,
        };
        if (actual_times[j] - tp).abs() > 2.0 * opts.dt.max(1e-9) {
            continue;
        }
        let zp = DVector::from_column_slice(&schedule.predicted_states[i]);
        let za = DVector::from_column_slice(&actual_reduced[j]);
        let d = (za - zp).norm();
        sum_sq += d * d;
        count += 1;
        max_dev = Some(max_dev.map_or(d, |m: f64| m.max(d)));
    }
    let tracking_rms = (count > 0).then(|| (sum_sq / count as f64).sqrt());

    let all_legs = !legs.is_empty() && legs.iter().all(|l| l.success);
    Ok(VerificationReport {
        success: all_legs && !diverged,
        legs,
        diverged,
        tracking_rms,
        tracking_max: max_dev,
        actual_times,
        actual_reduced,
        predicted_times: schedule.predicted_times.clone(),
        predicted_states: schedule.predicted_states.clone(),
        note: "open-loop replay on the full system; the reduced model is an \
               imperfect surrogate, so bounded deviation from the predicted \
               path is expected"
            .to_string(),
    })
}

/// Plan one transition from a probe table, for models beyond the plane.
///
/// The probe must have been run with a protocol whose `extra_seeds`
/// include the source state at index `source_seed`. Candidate controls
/// are entries whose extra-seed outcome is capture by a stable fixed
/// point within `capture_tol` of `target_location`; the winner maximizes
/// the Chebyshev distance in control space to the nearest non-candidate
/// entry. Returns the chosen control and that margin.
pub fn plan_transition_probe(
    probe: &AttractorProbe,
    source_seed: usize,
    target_location: &[f64],
    capture_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut flags = Vec::with_capacity(probe.entries.len());
    let mut any = false;
    for entry in &probe.entries {
        let hit = match entry.extra_outcomes.get(source_seed) {
            Some(ProbeOutcome::FixedPoint(j)) => entry.fixed_points.get(*j).is_some_and(|fp| {
                fp.class.class.is_sink()
                    && fp
                        .location
                        .iter()
                        .zip(target_location)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                        <= capture_tol
            }),
            Some(_) => false,
            None => {
                return Err(Error::Config(format!(
                    "probe entries carry {} extra outcomes, seed {} requested",
                    entry.extra_outcomes.len(),
                    source_seed
                )))
            }
        };
        flags.push(hit);
        any |= hit;
    }
    if !any {
        return Err(Error::Planning(format!(
            "none of the {} probed controls drives the source seed to the target attractor",
            probe.entries.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, entry) in probe.entries.iter().enumerate() {
        if !flags[i] {
            continue;
        }
        let mut margin = f64::INFINITY;
        for (k, other) in probe.entries.iter().enumerate() {
            if flags[k] {
                continue;
            }
            let d = entry
                .u
                .iter()
                .zip(&other.u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            margin = margin.min(d);
        }
        if best.map_or(true, |(_, m)| margin > m) {
            best = Some((i, margin));
        }
    }
    let (idx, margin) = best.expect("candidate existed");
    Ok((probe.entries[idx].u.clone(), margin))
}
