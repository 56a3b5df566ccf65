//! Artifact files: CSV for timeseries and grid data, JSON for structure.
//!
//! Every floating-point value goes to disk with 17 significant digits,
//! which round-trips IEEE doubles exactly, so re-reading an artifact and
//! re-serializing it is byte-stable. CSV parse failures carry one-based
//! row and column positions. Ensembles are directories: one CSV per
//! trajectory, a sibling `.derivs.csv` per member preserving the recorded
//! derivatives, and a `meta.json`.
//!
//! The stability map has two artifact forms. `regions.csv` is flat plot
//! data (one row per cell and branch with the class letter). `map.json`
//! keeps enough structure to rebuild the map object itself: cell centers,
//! ambiguity flags, and per-root branch id and location. Rebuilding
//! re-evaluates each root's Jacobian with the model, which is exact, so a
//! map survives the disk round trip with identical classes and branches.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{classify, BifurcationCurve, StabilityMap};
use crate::phase::{FixedPointRecord, MapCell, StateBox};
use crate::poly::PolySystem;
use crate::sim::{Ensemble, EnsembleMeta, Trajectory};

/// Format one double with 17 significant digits, enough for exact
/// round-tripping.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

fn parse_f64(tok: &str, row: usize, col: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        col,
        message: format!("expected a number, found {:?}", tok.trim()),
    })
}

fn parse_usize(tok: &str, row: usize, col: usize) -> Result<usize> {
    tok.trim().parse::<usize>().map_err(|_| Error::Parse {
        row,
        col,
        message: format!("expected an index, found {:?}", tok.trim()),
    })
}

/// Write any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path.as_ref(), text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

/// Write `header` then rows of doubles.
fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Split a CSV into header fields and numeric rows, all cells parsed.
fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        row: 1,
        col: 1,
        message: "empty file".to_string(),
    })?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Parse {
                row: i + 1,
                col: cells.len().min(names.len()) + 1,
                message: format!("{} fields, header names {}", cells.len(), names.len()),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for (j, tok) in cells.iter().enumerate() {
            row.push(parse_f64(tok, i + 1, j + 1)?);
        }
        rows.push(row);
    }
    Ok((names, rows))
}

/// Write a trajectory as `t,x1..xn[,u1..un]`, one row per stored sample.
pub fn write_trajectory_csv(
    path: impl AsRef<Path>,
    tr: &Trajectory,
    with_controls: bool,
) -> Result<()> {
    let n = tr.dim();
    let mut header = String::from("t");
    for k in 1..=n {
        header.push_str(&format!(",x{}", k));
    }
    if with_controls {
        for k in 1..=n {
            header.push_str(&format!(",u{}", k));
        }
    }
    write_csv(
        path.as_ref(),
        &header,
        (0..tr.len()).map(|i| {
            let mut row = Vec::with_capacity(1 + n + if with_controls { n } else { 0 });
            row.push(tr.times[i]);
            row.extend(tr.states.row(i).iter().copied());
            if with_controls {
                row.extend(tr.controls.row(i).iter().copied());
            }
            row
        }),
    )
}

/// Sibling file preserving recorded derivatives: `t,d1..dn`.
fn write_derivs_csv(path: &Path, tr: &Trajectory) -> Result<()> {
    let n = tr.dim();
    let mut header = String::from("t");
    for k in 1..=n {
        header.push_str(&format!(",d{}", k));
    }
    write_csv(
        path,
        &header,
        (0..tr.len()).map(|i| {
            let mut row = Vec::with_capacity(1 + n);
            row.push(tr.times[i]);
            row.extend(tr.derivs.row(i).iter().copied());
            row
        }),
    )
}

/// Read a trajectory CSV written by [`write_trajectory_csv`], or any file
/// with a `t` column followed by `x*` columns and optionally `u*` columns.
///
/// Without a derivatives sibling the `derivs` rows come back as central
/// finite differences of the states (one-sided at the ends), the only
/// derivative information a bare state dump carries.
pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let (names, rows) = read_numeric_csv(path)?;
    if names.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse {
            row: 1,
            col: 1,
            message: format!("first column must be t, found {:?}", names.first()),
        });
    }
    let n = names[1..].iter().take_while(|c| c.starts_with('x')).count();
    let nu = names[1 + n..].iter().take_while(|c| c.starts_with('u')).count();
    if n == 0 || 1 + n + nu != names.len() {
        return Err(Error::Parse {
            row: 1,
            col: 2 + n + nu,
            message: "columns must be t, then x1..xn, then optionally u1..un".to_string(),
        });
    }
    if nu != 0 && nu != n {
        return Err(Error::Parse {
            row: 1,
            col: 2 + n,
            message: format!("{} control columns for {} state columns", nu, n),
        });
    }
    let m = rows.len();
    let mut times = Vec::with_capacity(m);
    let mut states = DMatrix::zeros(m, n);
    let mut controls = DMatrix::zeros(m, n);
    for (i, row) in rows.iter().enumerate() {
        times.push(row[0]);
        for j in 0..n {
            states[(i, j)] = row[1 + j];
        }
        if nu == n {
            for j in 0..n {
                controls[(i, j)] = row[1 + n + j];
            }
        }
    }

    let derivs_path = derivs_sibling(path);
    let derivs = if derivs_path.exists() {
        let (dnames, drows) = read_numeric_csv(&derivs_path)?;
        if dnames.len() != 1 + n || drows.len() != m {
            return Err(Error::Parse {
                row: drows.len().min(1),
                col: dnames.len(),
                message: format!(
                    "derivative sibling shape {}x{} does not match trajectory {}x{}",
                    drows.len(),
                    dnames.len().saturating_sub(1),
                    m,
                    n
                ),
            });
        }
        let mut d = DMatrix::zeros(m, n);
        for (i, row) in drows.iter().enumerate() {
            for j in 0..n {
                d[(i, j)] = row[1 + j];
            }
        }
        d
    } else {
        finite_difference(&times, &states)
    };

    Ok(Trajectory { times, states, derivs, controls, schedule_extended: false })
}

fn derivs_sibling(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    path.with_file_name(format!("{}.derivs.csv", stem))
}

/// Central differences in the interior, one-sided at the ends; zero for
/// fewer than two samples.
fn finite_difference(times: &[f64], states: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = (states.nrows(), states.ncols());
    let mut d = DMatrix::zeros(m, n);
    if m < 2 {
        return d;
    }
    for j in 0..n {
        for i in 0..m {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == m - 1 {
                (m - 2, m - 1)
            } else {
                (i - 1, i + 1)
            };
            let dt = times[b] - times[a];
            if dt != 0.0 {
                d[(i, j)] = (states[(b, j)] - states[(a, j)]) / dt;
            }
        }
    }
    d
}

fn member_name(index: usize) -> String {
    format!("traj_{:04}.csv", index)
}

/// Write an ensemble directory: `traj_NNNN.csv` per member (controls
/// included), derivative siblings, and `meta.json`.
pub fn write_ensemble(dir: impl AsRef<Path>, ens: &Ensemble) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, tr) in ens.trajectories.iter().enumerate() {
        let path = dir.join(member_name(i));
        write_trajectory_csv(&path, tr, true)?;
        write_derivs_csv(&derivs_sibling(&path), tr)?;
    }
    write_json(dir.join("meta.json"), &ens.meta)
}

/// Read an ensemble directory written by [`write_ensemble`], or any
/// directory of `t,x..` CSVs. A missing `meta.json` gets neutral values.
pub fn read_ensemble(dir: impl AsRef<Path>) -> Result<Ensemble> {
    let dir = dir.as_ref();
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv") && !n.ends_with(".derivs.csv"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!(
            "no trajectory CSV files in {}",
            dir.display()
        )));
    }
    let trajectories = names
        .iter()
        .map(|n| read_trajectory_csv(dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    let meta_path = dir.join("meta.json");
    let meta: EnsembleMeta = if meta_path.exists() {
        read_json(&meta_path)?
    } else {
        let dt = trajectories[0].stored_dt();
        EnsembleMeta {
            seed: 0,
            requested: trajectories.len(),
            excluded_divergent: 0,
            horizon: trajectories[0].times.last().copied().unwrap_or(0.0),
            dt,
            sample_stride: 1,
            latent_sampling: false,
        }
    };
    Ok(Ensemble { trajectories, meta })
}

/// Flat plot data: one row per cell and branch with the class letter.
pub fn write_regions_csv(path: impl AsRef<Path>, map: &StabilityMap) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "u1,u2,branch_id,class")?;
    let [nx, ny] = map.resolution;
    for iy in 0..ny {
        for ix in 0..nx {
            let u = map.cell_u(ix, iy);
            for b in 0..map.branch_count {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt_f64(u[0]),
                    fmt_f64(u[1]),
                    b,
                    map.class_at(b, ix, iy).label()
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Flat plot data for bifurcation curves: kind, parameter, state, control
/// image, and the transversality verdict per sample.
pub fn write_curves_csv(path: impl AsRef<Path>, curves: &[BifurcationCurve]) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "kind,t,x,y,u1,u2,valid")?;
    for curve in curves {
        for s in &curve.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                curve.kind.label(),
                fmt_f64(s.t),
                fmt_f64(s.state[0]),
                fmt_f64(s.state[1]),
                fmt_f64(s.control[0]),
                fmt_f64(s.control[1]),
                s.valid as u8
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cumulative variance fractions, one row per mode count.
pub fn write_variance_csv(path: impl AsRef<Path>, cumulative: &[f64]) -> Result<()> {
    write_csv(
        path.as_ref(),
        "modes,cumulative_variance",
        cumulative.iter().enumerate().map(|(i, v)| vec![(i + 1) as f64, *v]),
    )
}

/// Reduced-space trajectory samples: `t,z1..zr`.
pub fn write_reduced_csv(
    path: impl AsRef<Path>,
    times: &[f64],
    states: &[Vec<f64>],
) -> Result<()> {
    let r = states.first().map(Vec::len).unwrap_or(0);
    let mut header = String::from("t");
    for k in 1..=r {
        header.push_str(&format!(",z{}", k));
    }
    write_csv(
        path.as_ref(),
        &header,
        times.iter().zip(states).map(|(t, z)| {
            let mut row = Vec::with_capacity(1 + r);
            row.push(*t);
            row.extend_from_slice(z);
            row
        }),
    )
}

/// Disk form of a stability map. Holds what cannot be recomputed from the
/// model alone: the grid, per-root branch ids and locations, ambiguity
/// and cycle flags. Jacobians and classes are re-derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapArtifact {
    pub control_lo: [f64; 2],
    pub control_hi: [f64; 2],
    pub resolution: [usize; 2],
    pub branch_count: usize,
    pub cycle_grid: usize,
    pub cycle_flags: Vec<bool>,
    pub cells: Vec<CellArtifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellArtifact {
    pub u: [f64; 2],
    pub ambiguous: bool,
    pub roots: Vec<RootArtifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootArtifact {
    pub branch: Option<usize>,
    pub location: Vec<f64>,
}

pub fn map_to_artifact(map: &StabilityMap) -> MapArtifact {
    MapArtifact {
        control_lo: [map.control_box.lo[0], map.control_box.lo[1]],
        control_hi: [map.control_box.hi[0], map.control_box.hi[1]],
        resolution: map.resolution,
        branch_count: map.branch_count,
        cycle_grid: map.cycle_grid,
        cycle_flags: map.cycle_flags.clone(),
        cells: map
            .cells
            .iter()
            .map(|c| CellArtifact {
                u: c.u,
                ambiguous: c.ambiguous,
                roots: c
                    .roots
                    .iter()
                    .map(|r| RootArtifact {
                        branch: r.branch_id,
                        location: r.location.iter().copied().collect(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Rebuild a stability map from its artifact, re-evaluating Jacobians and
/// classes with `sys`. Evaluation is deterministic, so the rebuilt map
/// carries identical classes to the one that was saved.
pub fn map_from_artifact(artifact: &MapArtifact, sys: &PolySystem) -> Result<StabilityMap> {
    if sys.dim() != 2 {
        return Err(Error::UnsupportedDim { required: "2", got: sys.dim() });
    }
    let [nx, ny] = artifact.resolution;
    if artifact.cells.len() != nx * ny {
        return Err(Error::InvalidSpec(format!(
            "map artifact has {} cells for a {}x{} grid",
            artifact.cells.len(),
            nx,
            ny
        )));
    }
    let oracle = sys.jacobian();
    let mut cells = Vec::with_capacity(artifact.cells.len());
    for cell in &artifact.cells {
        let mut roots = Vec::with_capacity(cell.roots.len());
        for root in &cell.roots {
            let location = DVector::from_column_slice(&root.location);
            let jacobian = oracle.eval(&location)?;
            let class = classify(&jacobian)?;
            roots.push(FixedPointRecord {
                location,
                control: DVector::from_column_slice(&cell.u),
                jacobian,
                class,
                branch_id: root.branch,
            });
        }
        cells.push(MapCell { u: cell.u, roots, ambiguous: cell.ambiguous });
    }
    Ok(StabilityMap {
        control_box: StateBox::new(artifact.control_lo.to_vec(), artifact.control_hi.to_vec())?,
        resolution: artifact.resolution,
        cells,
        branch_count: artifact.branch_count,
        cycle_flags: artifact.cycle_flags.clone(),
        cycle_grid: artifact.cycle_grid,
    })
}

/// Read back plot rows of `regions.csv` as (u1, u2, branch, class label).
pub fn read_regions_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64, usize, String)>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(Error::Parse {
                row: i + 1,
                col: cells.len() + 1,
                message: "expected u1,u2,branch_id,class".to_string(),
            });
        }
        out.push((
            parse_f64(cells[0], i + 1, 1)?,
            parse_f64(cells[1], i + 1, 2)?,
            parse_usize(cells[2], i + 1, 3)?,
            cells[3].trim().to_string(),
        ));
    }
    Ok(out)
}
