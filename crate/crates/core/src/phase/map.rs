//! Stability-region maps over the control plane, and the controllability
//! predicates they support.
//!
//! For each cell center u of a control-plane grid the fixed points of
//! F + u are located and classified. Roots are then stitched into branches
//! (continuation labels) by nearest-neighbor matching between adjacent
//! cells: each cell gets a matching radius of half its minimum inter-root
//! spacing (single-root cells fall back to the state-box diagonal), a root
//! inherits the branch of the closest neighbor root lying within the radii
//! of both cells involved, and otherwise starts a new branch. The
//! two-sided radius is what keeps a lone root next to a crowded cell from
//! swallowing every sheet at once. Matching several labels merges them
//! (the labels were two sightings of one connected sheet; around a cusp
//! point such merges are genuine monodromy); two roots of one cell
//! claiming the same neighbor label mark the cell ambiguous, and ambiguous
//! cells are excluded from every region set.
//!
//! Per branch k the cells partition into A_k (sink), B_k (source), C_k/D_k
//! (saddles by trace sign), and absent. Those sets answer reachability
//! questions: moving off branch l requires a control where l is not a sink
//! while the target branch k is (necessary condition A_l^c intersect A_k),
//! and making k the only sink anywhere guarantees the move from rest
//! (sufficient condition). Limit-cycle flags from a coarse sub-grid keep
//! track of where "not a sink" still leaves a stable attractor nearby.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PolySystem;

use super::cycles::{detect_limit_cycles_with, CycleSearchOptions};
use super::fixed_points::{FixedPointRecord, RootFinder};
use super::{RegionClass, StateBox};

/// Per-branch, per-cell stability verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    A,
    B,
    C,
    D,
    Absent,
    Ambiguous,
}

impl CellClass {
    pub fn label(self) -> &'static str {
        match self {
            CellClass::A => "A",
            CellClass::B => "B",
            CellClass::C => "C",
            CellClass::D => "D",
            CellClass::Absent => "absent",
            CellClass::Ambiguous => "ambiguous",
        }
    }

    pub fn is_sink(self) -> bool {
        self == CellClass::A
    }
}

impl From<RegionClass> for CellClass {
    fn from(r: RegionClass) -> Self {
        match r {
            RegionClass::A => CellClass::A,
            RegionClass::B => CellClass::B,
            RegionClass::C => CellClass::C,
            RegionClass::D => CellClass::D,
        }
    }
}

/// Options governing map construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// State-space box searched for roots at every cell.
    pub state_box: StateBox,
    /// Fallback Newton seeds per axis at interior cells (neighbor roots are
    /// always seeded as well).
    pub seed_grid: usize,
    /// Denser seeding for the first cell of each row, which has no left
    /// neighbor to continue from.
    pub first_seed_grid: usize,
    /// Coarse cycle-probe cells per axis; 0 disables cycle detection.
    pub cycle_grid: usize,
    pub cycle_options: CycleSearchOptions,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            state_box: StateBox::centered_square(50.0),
            seed_grid: 8,
            first_seed_grid: 18,
            cycle_grid: 12,
            cycle_options: CycleSearchOptions::default(),
        }
    }
}

impl MapOptions {
    pub fn for_state_box(state_box: StateBox) -> Self {
        MapOptions { state_box, ..MapOptions::default() }
    }
}

/// One control-plane grid cell: its center, the branch-labeled roots found
/// there, and the ambiguity flag.
#[derive(Debug, Clone)]
pub struct MapCell {
    pub u: [f64; 2],
    pub roots: Vec<FixedPointRecord>,
    pub ambiguous: bool,
}

/// Region sets of one branch over the grid, as cell index pairs [ix, iy].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRegions {
    pub branch: usize,
    pub a: Vec<[usize; 2]>,
    pub b: Vec<[usize; 2]>,
    pub c: Vec<[usize; 2]>,
    pub d: Vec<[usize; 2]>,
    pub absent: Vec<[usize; 2]>,
}

/// Stability map over a control-plane rectangle.
#[derive(Debug, Clone)]
pub struct StabilityMap {
    pub control_box: StateBox,
    pub resolution: [usize; 2],
    /// Row-major cells, index = iy * resolution[0] + ix.
    pub cells: Vec<MapCell>,
    pub branch_count: usize,
    /// Per-cell limit-cycle flag, inherited from the coarse probe grid.
    pub cycle_flags: Vec<bool>,
    /// Coarse probe resolution actually used (0 when disabled).
    pub cycle_grid: usize,
}

impl StabilityMap {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.resolution[0] + ix
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &MapCell {
        &self.cells[self.index(ix, iy)]
    }

    /// Center control value of cell (ix, iy).
    pub fn cell_u(&self, ix: usize, iy: usize) -> [f64; 2] {
        cell_center(&self.control_box, self.resolution, ix, iy)
    }

    /// Cell whose center is closest to a control value.
    pub fn nearest_cell(&self, u: [f64; 2]) -> [usize; 2] {
        let clamp = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            let w = (hi - lo) / n as f64;
            (((v - lo) / w - 0.5).round().max(0.0) as usize).min(n - 1)
        };
        [
            clamp(u[0], self.control_box.lo[0], self.control_box.hi[0], self.resolution[0]),
            clamp(u[1], self.control_box.lo[1], self.control_box.hi[1], self.resolution[1]),
        ]
    }

    /// Stability verdict of one branch at one cell.
    pub fn class_at(&self, branch: usize, ix: usize, iy: usize) -> CellClass {
        let cell = self.cell(ix, iy);
        if cell.ambiguous {
            return CellClass::Ambiguous;
        }
        cell.roots
            .iter()
            .find(|r| r.branch_id == Some(branch))
            .map(|r| r.class.class.into())
            .unwrap_or(CellClass::Absent)
    }

    pub fn has_cycle_flag(&self, ix: usize, iy: usize) -> bool {
        self.cycle_flags[self.index(ix, iy)]
    }

    /// Number of branches classified as sinks at a cell (ambiguous: none).
    pub fn sink_count(&self, ix: usize, iy: usize) -> usize {
        let cell = self.cell(ix, iy);
        if cell.ambiguous {
            return 0;
        }
        cell.roots.iter().filter(|r| r.class.class.is_sink()).count()
    }

    /// Assemble the A/B/C/D/absent partition for every branch; ambiguous
    /// cells appear in no set.
    pub fn region_sets(&self) -> Vec<BranchRegions> {
        let mut out: Vec<BranchRegions> = (0..self.branch_count)
            .map(|branch| BranchRegions {
                branch,
                a: Vec::new(),
                b: Vec::new(),
                c: Vec::new(),
                d: Vec::new(),
                absent: Vec::new(),
            })
            .collect();
        for iy in 0..self.resolution[1] {
            for ix in 0..self.resolution[0] {
                if self.cell(ix, iy).ambiguous {
                    continue;
                }
                for regions in out.iter_mut() {
                    let bucket = match self.class_at(regions.branch, ix, iy) {
                        CellClass::A => &mut regions.a,
                        CellClass::B => &mut regions.b,
                        CellClass::C => &mut regions.c,
                        CellClass::D => &mut regions.d,
                        CellClass::Absent => &mut regions.absent,
                        CellClass::Ambiguous => unreachable!("filtered above"),
                    };
                    bucket.push([ix, iy]);
                }
            }
        }
        out
    }
}

fn cell_center(control_box: &StateBox, resolution: [usize; 2], ix: usize, iy: usize) -> [f64; 2] {
    [
        control_box.lo[0]
            + (control_box.hi[0] - control_box.lo[0]) * (ix as f64 + 0.5) / resolution[0] as f64,
        control_box.lo[1]
            + (control_box.hi[1] - control_box.lo[1]) * (iy as f64 + 0.5) / resolution[1] as f64,
    ]
}

/// Paint the stability map of `sys` over `control_box` at `resolution`
/// cells per axis (at least 16 each).
pub fn stability_map(
    sys: &PolySystem,
    control_box: &StateBox,
    resolution: [usize; 2],
    opts: &MapOptions,
) -> Result<StabilityMap> {
    if sys.dim() != 2 {
        return Err(Error::UnsupportedDim { required: "2", got: sys.dim() });
    }
    if control_box.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "control box",
            expected: 2,
            got: control_box.dim(),
        });
    }
    if resolution.iter().any(|&n| n < 16) {
        return Err(Error::InvalidSpec(format!(
            "stability map resolution must be at least 16 per axis, got {resolution:?}"
        )));
    }
    if opts.state_box.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "map state box",
            expected: 2,
            got: opts.state_box.dim(),
        });
    }
    let [nx, ny] = resolution;

    // Root finding: rows are independent; within a row each cell seeds from
    // the previous cell's roots plus a fallback lattice.
    let rows: Vec<Vec<Vec<FixedPointRecord>>> = (0..ny)
        .into_par_iter()
        .map(|iy| {
            let finder = RootFinder::new(sys);
            let fallback = opts.state_box.lattice(opts.seed_grid);
            let dense = opts.state_box.lattice(opts.first_seed_grid);
            let mut row: Vec<Vec<FixedPointRecord>> = Vec::with_capacity(nx);
            for ix in 0..nx {
                let u = cell_center(control_box, resolution, ix, iy);
                let uvec = DVector::from_column_slice(&u);
                let mut seeds: Vec<DVector<f64>> = Vec::new();
                if let Some(prev) = row.last() {
                    seeds.extend(prev.iter().map(|r| r.location.clone()));
                }
                if ix == 0 {
                    seeds.extend(dense.iter().cloned());
                } else {
                    seeds.extend(fallback.iter().cloned());
                }
                let roots = finder.find(&uvec, &opts.state_box, seeds)?;
                row.push(roots);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut cells: Vec<MapCell> = Vec::with_capacity(nx * ny);
    for (iy, row) in rows.into_iter().enumerate() {
        for (ix, roots) in row.into_iter().enumerate() {
            let u = cell_center(control_box, resolution, ix, iy);
            cells.push(MapCell { u, roots, ambiguous: false });
        }
    }

    let branch_count = label_branches(&mut cells, nx, ny, opts.state_box.diagonal());

    // Coarse limit-cycle probing, inherited by the covered fine cells.
    let mut cycle_flags = vec![false; nx * ny];
    let cg = opts.cycle_grid.min(nx).min(ny);
    if cg > 0 {
        let coarse: Vec<bool> = (0..cg * cg)
            .into_par_iter()
            .map(|k| {
                let (cx, cy) = (k % cg, k / cg);
                let u = [
                    control_box.lo[0]
                        + (control_box.hi[0] - control_box.lo[0]) * (cx as f64 + 0.5) / cg as f64,
                    control_box.lo[1]
                        + (control_box.hi[1] - control_box.lo[1]) * (cy as f64 + 0.5) / cg as f64,
                ];
                let found =
                    detect_limit_cycles_with(sys, &u, &opts.state_box, &opts.cycle_options)?;
                Ok(!found.cycles.is_empty())
            })
            .collect::<Result<_>>()?;
        for iy in 0..ny {
            for ix in 0..nx {
                let (cx, cy) = (ix * cg / nx, iy * cg / ny);
                cycle_flags[iy * nx + ix] = coarse[cy * cg + cx];
            }
        }
    }

    Ok(StabilityMap {
        control_box: control_box.clone(),
        resolution,
        cells,
        branch_count,
        cycle_flags,
        cycle_grid: cg,
    })
}

/// Two-pass connected-component labeling of roots across the grid.
fn label_branches(cells: &mut [MapCell], nx: usize, ny: usize, distance_cap: f64) -> usize {
    struct UnionFind(Vec<usize>);
    impl UnionFind {
        fn find(&mut self, mut i: usize) -> usize {
            while self.0[i] != i {
                self.0[i] = self.0[self.0[i]];
                i = self.0[i];
            }
            i
        }
        fn union(&mut self, a: usize, b: usize) {
            let (ra, rb) = (self.find(a), self.find(b));
            if ra != rb {
                self.0[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut uf = UnionFind(Vec::new());

    // Matching radius per cell: half the smallest spacing between the
    // cell's own roots (capped by the box diagonal so isolated roots can
    // still continue).
    let radius_of = |roots: &[FixedPointRecord]| -> f64 {
        let mut min_gap = f64::INFINITY;
        for i in 0..roots.len() {
            for j in i + 1..roots.len() {
                min_gap = min_gap.min((&roots[i].location - &roots[j].location).norm());
            }
        }
        (0.5 * min_gap).min(distance_cap)
    };
    let radii: Vec<f64> = cells.iter().map(|c| radius_of(&c.roots)).collect();

    for iy in 0..ny {
        for ix in 0..nx {
            let idx = iy * nx + ix;
            let mut neighbor_roots: Vec<(DVector<f64>, usize, f64)> = Vec::new();
            if ix > 0 {
                for r in &cells[idx - 1].roots {
                    neighbor_roots.push((
                        r.location.clone(),
                        r.branch_id.expect("labeled earlier"),
                        radii[idx - 1],
                    ));
                }
            }
            if iy > 0 {
                for r in &cells[idx - nx].roots {
                    neighbor_roots.push((
                        r.location.clone(),
                        r.branch_id.expect("labeled earlier"),
                        radii[idx - nx],
                    ));
                }
            }
            let mut ambiguous = false;
            let mut assigned: Vec<usize> = Vec::with_capacity(cells[idx].roots.len());
            for root in &cells[idx].roots {
                // A match must fall inside the radius of both cells: a lone
                // root gets a generous radius, but crowded neighbors only
                // admit it within half their own sheet spacing.
                let mut matches: Vec<(f64, usize)> = neighbor_roots
                    .iter()
                    .map(|(loc, branch, r_nb)| {
                        ((loc - &root.location).norm(), *branch, *r_nb)
                    })
                    .filter(|(d, _, r_nb)| *d < radii[idx].min(*r_nb))
                    .map(|(d, branch, _)| (d, branch))
                    .collect();
                matches.sort_by(|a, b| a.0.total_cmp(&b.0));
                match matches.first() {
                    None => {
                        let fresh = uf.0.len();
                        uf.0.push(fresh);
                        assigned.push(fresh);
                    }
                    Some(&(_, best_branch)) => {
                        // Further matches either confirm the same sheet seen
                        // through the other neighbor (merge the labels) or
                        // leave the continuation genuinely undecidable.
                        let best_root = uf.find(best_branch);
                        for &(_, other) in matches.iter().skip(1) {
                            let other_root = uf.find(other);
                            if other_root != best_root {
                                uf.union(best_root, other_root);
                            }
                        }
                        // Two cell roots claiming one neighbor branch means
                        // the matcher cannot tell them apart.
                        if assigned.iter().any(|&b| uf.find(b) == uf.find(best_branch)) {
                            ambiguous = true;
                        }
                        assigned.push(uf.find(best_branch));
                    }
                }
            }
            cells[idx].ambiguous = ambiguous;
            for (root, branch) in cells[idx].roots.iter_mut().zip(assigned) {
                root.branch_id = Some(branch);
            }
        }
    }

    // Canonicalize to dense labels ordered by first raster appearance.
    let mut relabel: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for cell in cells.iter_mut() {
        for root in cell.roots.iter_mut() {
            let resolved = uf.find(root.branch_id.unwrap());
            let next = relabel.len();
            let dense = *relabel.entry(resolved).or_insert(next);
            root.branch_id = Some(dense);
        }
    }
    relabel.len()
}

/// Grid-cell witness for a satisfied predicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellWitness {
    pub cell: [usize; 2],
    pub u: [f64; 2],
}

/// Reachability verdict for one ordered branch pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPredicate {
    pub from: usize,
    pub to: usize,
    /// Some control destabilizes `from` while `to` is a sink.
    pub necessary: bool,
    pub necessary_witness: Option<CellWitness>,
    /// Some control makes `to` the only sink on the map.
    pub sufficient: bool,
    pub sufficient_witness: Option<CellWitness>,
}

/// All-pairs controllability summary of a stability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityReport {
    pub branch_count: usize,
    pub pairs: Vec<PairPredicate>,
    pub all_pairs_necessary: bool,
    pub all_pairs_sufficient: bool,
    /// Every ordered pair is connected through the directed graph whose
    /// edges are the pairwise necessary conditions.
    pub chain_reachable: bool,
}

/// Evaluate the necessary / sufficient / chain predicates over the map's
/// region sets.
///
/// Only branches that are sinks somewhere on the grid enter the pair table:
/// the predicates describe moving the state between attractors, and a sheet
/// that is never stable (a saddle branch, say) cannot be occupied in the
/// first place. Ambiguous cells never serve as evidence.
pub fn controllability_report(map: &StabilityMap) -> ControllabilityReport {
    let [nx, ny] = map.resolution;
    let branches = map.branch_count;
    // sink[b][cell]: branch b is a sink at that cell.
    let mut sink = vec![vec![false; nx * ny]; branches];
    for iy in 0..ny {
        for ix in 0..nx {
            for b in 0..branches {
                sink[b][iy * nx + ix] = map.class_at(b, ix, iy) == CellClass::A;
            }
        }
    }
    let attractors: Vec<usize> = (0..branches)
        .filter(|&b| sink[b].iter().any(|&s| s))
        .collect();
    let witness_at = |cell_idx: usize| CellWitness {
        cell: [cell_idx % nx, cell_idx / nx],
        u: map.cell_u(cell_idx % nx, cell_idx / nx),
    };
    let mut pairs = Vec::new();
    let mut necessary_edge = vec![vec![false; branches]; branches];
    for &from in &attractors {
        for &to in &attractors {
            if from == to {
                continue;
            }
            let necessary_witness = (0..nx * ny)
                .find(|&c| !sink[from][c] && sink[to][c])
                .map(witness_at);
            let sufficient_witness = (0..nx * ny)
                .find(|&c| {
                    sink[to][c] && attractors.iter().all(|&b| b == to || !sink[b][c])
                })
                .map(witness_at);
            necessary_edge[from][to] = necessary_witness.is_some();
            pairs.push(PairPredicate {
                from,
                to,
                necessary: necessary_witness.is_some(),
                necessary_witness,
                sufficient: sufficient_witness.is_some(),
                sufficient_witness,
            });
        }
    }
    let all_pairs_necessary = pairs.iter().all(|p| p.necessary);
    let all_pairs_sufficient = pairs.iter().all(|p| p.sufficient);
    // Floyd-Warshall closure over the necessary edges.
    let mut reach = necessary_edge.clone();
    for k in 0..branches {
        for i in 0..branches {
            if !reach[i][k] {
                continue;
            }
            for j in 0..branches {
                reach[i][j] = reach[i][j] || reach[k][j];
            }
        }
    }
    let chain_reachable = attractors
        .iter()
        .all(|&i| attractors.iter().all(|&j| i == j || reach[i][j]));
    ControllabilityReport {
        branch_count: branches,
        pairs,
        all_pairs_necessary,
        all_pairs_sufficient,
        chain_reachable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::phase::{bifurcation_curve, CurveKind};
    use crate::poly::{PolySystem, Term};

    fn no_cycles(opts: &mut MapOptions) {
        opts.cycle_grid = 0;
    }

    #[test]
    fn linear_system_is_one_branch_all_sink() {
        let sys = PolySystem::new(
            2,
            vec![
                vec![Term::new(-1.0, vec![1, 0])],
                vec![Term::new(-1.0, vec![0, 1])],
            ],
        )
        .unwrap();
        let control_box = StateBox::centered_square(5.0);
        let mut opts = MapOptions::for_state_box(StateBox::centered_square(12.0));
        no_cycles(&mut opts);
        let map = stability_map(&sys, &control_box, [16, 16], &opts).unwrap();
        assert_eq!(map.branch_count, 1);
        for iy in 0..16 {
            for ix in 0..16 {
                assert_eq!(map.class_at(0, ix, iy), CellClass::A);
                assert!(!map.cell(ix, iy).ambiguous);
            }
        }
        let report = controllability_report(&map);
        assert!(report.pairs.is_empty());
        assert!(report.all_pairs_necessary && report.all_pairs_sufficient && report.chain_reachable);
    }

    #[test]
    fn region_sets_partition_every_branch() {
        let sys = generators::bistable_chem();
        let control_box = StateBox::centered_square(30.0);
        let mut opts = MapOptions::for_state_box(
            StateBox::new(vec![-20.0, -20.0], vec![20.0, 40.0]).unwrap(),
        );
        no_cycles(&mut opts);
        let map = stability_map(&sys, &control_box, [24, 24], &opts).unwrap();
        assert!(map.branch_count >= 2, "saw {} branches", map.branch_count);
        let ambiguous: usize =
            map.cells.iter().filter(|c| c.ambiguous).count();
        for regions in map.region_sets() {
            let total = regions.a.len()
                + regions.b.len()
                + regions.c.len()
                + regions.d.len()
                + regions.absent.len();
            assert_eq!(total + ambiguous, 24 * 24, "branch {}", regions.branch);
        }
        // Deep in the fold wedge the cell carries both sinks plus the
        // saddle.  (The wedge pinches to under a cell width near u = 0, so
        // the probe sits where the bistable band is several cells wide.)
        let [ix, iy] = map.nearest_cell([12.0, -10.0]);
        assert_eq!(map.cell(ix, iy).roots.len(), 3);
        assert_eq!(map.sink_count(ix, iy), 2);
    }

    #[test]
    fn class_changes_happen_at_bifurcation_curves() {
        let sys = generators::bistable_chem();
        let control_box = StateBox::centered_square(30.0);
        let mut opts = MapOptions::for_state_box(
            StateBox::new(vec![-20.0, -20.0], vec![20.0, 40.0]).unwrap(),
        );
        no_cycles(&mut opts);
        let n = 24;
        let map = stability_map(&sys, &control_box, [n, n], &opts).unwrap();
        let mut boundary: Vec<[f64; 2]> = Vec::new();
        for kind in [CurveKind::Hopf, CurveKind::SaddleNode] {
            let curve = bifurcation_curve(&sys, kind, (-15.0, 15.0), 2001).unwrap();
            boundary.extend(curve.samples.iter().filter(|s| s.valid).map(|s| s.control));
        }
        let cell_diag = (map.control_box.widths()[0] / n as f64).hypot(
            map.control_box.widths()[1] / n as f64,
        );
        for iy in 0..n {
            for ix in 0..n {
                for (jx, jy) in [(ix + 1, iy), (ix, iy + 1)] {
                    if jx >= n || jy >= n {
                        continue;
                    }
                    for b in 0..map.branch_count {
                        let (c0, c1) = (map.class_at(b, ix, iy), map.class_at(b, jx, jy));
                        if c0 == c1 || c0 == CellClass::Ambiguous || c1 == CellClass::Ambiguous {
                            continue;
                        }
                        let (u0, u1) = (map.cell_u(ix, iy), map.cell_u(jx, jy));
                        let mid = [0.5 * (u0[0] + u1[0]), 0.5 * (u0[1] + u1[1])];
                        let near = boundary.iter().any(|s| {
                            (s[0] - mid[0]).hypot(s[1] - mid[1]) <= cell_diag
                        });
                        assert!(
                            near,
                            "class edge {c0:?}->{c1:?} for branch {b} at {mid:?} is far from every curve sample"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn brusselator_map_is_single_branch_with_two_classes() {
        let sys = generators::brusselator();
        let control_box = StateBox::centered_square(5.0);
        let mut opts = MapOptions::for_state_box(
            StateBox::new(vec![-12.0, -3600.0], vec![12.0, 3600.0]).unwrap(),
        );
        opts.first_seed_grid = 40;
        opts.seed_grid = 12;
        no_cycles(&mut opts);
        let map = stability_map(&sys, &control_box, [32, 32], &opts).unwrap();
        assert_eq!(map.branch_count, 1);
        let mut seen = std::collections::HashSet::new();
        for iy in 0..32 {
            for ix in 0..32 {
                seen.insert(map.class_at(0, ix, iy));
            }
        }
        assert!(seen.contains(&CellClass::A) && seen.contains(&CellClass::B), "{seen:?}");
        assert!(!seen.contains(&CellClass::Absent), "tall state box keeps the root in view");
        let report = controllability_report(&map);
        assert!(report.pairs.is_empty(), "single branch has no ordered pairs");
    }

    #[test]
    fn bistable_controllability_holds_both_ways() {
        let sys = generators::bistable_chem();
        // Box chosen so the three-root wedge stays several cells wide
        // everywhere inside it (the wedge tip, where the outer sheets pinch
        // together and label continuation becomes ill-posed, lies outside).
        let control_box = StateBox::new(vec![0.0, -160.0], vec![160.0, -20.0]).unwrap();
        let mut opts = MapOptions::for_state_box(
            StateBox::new(vec![-40.0, -40.0], vec![40.0, 160.0]).unwrap(),
        );
        no_cycles(&mut opts);
        let map = stability_map(&sys, &control_box, [32, 32], &opts).unwrap();
        // A cell deep in the wedge carries sink / saddle / sink ordered by x.
        let [ix, iy] = map.nearest_cell([40.0, -25.0]);
        let cell = map.cell(ix, iy);
        assert_eq!(cell.roots.len(), 3, "probe cell sits in the wedge");
        assert_eq!(map.sink_count(ix, iy), 2);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            cell.roots[a].location[0].total_cmp(&cell.roots[b].location[0])
        });
        let sink_low = cell.roots[order[0]].branch_id.unwrap();
        let sink_high = cell.roots[order[2]].branch_id.unwrap();
        assert_ne!(sink_low, sink_high);
        let report = controllability_report(&map);
        for (from, to) in [(sink_low, sink_high), (sink_high, sink_low)] {
            let pair = report
                .pairs
                .iter()
                .find(|p| p.from == from && p.to == to)
                .expect("pair present");
            assert!(pair.necessary, "{from}->{to} necessary");
            assert!(pair.sufficient, "{from}->{to} sufficient");
            let w = pair.necessary_witness.unwrap();
            assert_eq!(map.class_at(to, w.cell[0], w.cell[1]), CellClass::A);
            assert_ne!(map.class_at(from, w.cell[0], w.cell[1]), CellClass::A);
        }
        assert!(report.chain_reachable);
    }

    #[test]
    fn cycle_flags_fire_on_the_source_side_of_the_hopf_curve() {
        let sys = generators::brusselator();
        // Small box: keeps u1 + u2 well above -1 (where the fixed point
        // escapes to infinity) and the trace-zero curve crosses it, with the
        // origin on the source side and the (+,+) corner on the sink side.
        let control_box = StateBox::centered_square(0.45);
        let mut opts = MapOptions::for_state_box(
            StateBox::new(vec![-6.0, -6.0], vec![8.0, 10.0]).unwrap(),
        );
        opts.cycle_grid = 4;
        opts.cycle_options.horizon = 80.0;
        let map = stability_map(&sys, &control_box, [16, 16], &opts).unwrap();
        assert_eq!(map.branch_count, 1);
        let [ix, iy] = map.nearest_cell([0.0, 0.0]);
        assert_eq!(map.class_at(0, ix, iy), CellClass::B);
        assert!(map.has_cycle_flag(ix, iy), "uncontrolled Brusselator cycles");
        // Deep in the sink region no flag should appear.
        let [sx, sy] = map.nearest_cell([0.4, 0.4]);
        assert_eq!(map.class_at(0, sx, sy), CellClass::A);
        assert!(!map.has_cycle_flag(sx, sy));
    }

    #[test]
    fn resolution_floor_is_enforced() {
        let sys = generators::brusselator();
        let control_box = StateBox::centered_square(5.0);
        let opts = MapOptions::default();
        assert!(stability_map(&sys, &control_box, [8, 32], &opts).is_err());
    }
}
