//! CSV and JSON artifacts. Floats in CSV are written with 17 significant
//! digits so textual diffs detect any bit change.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::grid::{Field, Grid};

/// `x` in scientific notation with 17 significant digits; `NaN` for absent values.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// `cell_index,x[,y[,z]],<value_name>`
pub fn write_field_csv(mut out: impl Write, field: &Field, value_name: &str) -> Result<()> {
    let grid = field.grid();
    let mut header = vec!["cell_index".to_string()];
    header.extend(AXES[..grid.dim()].iter().map(|s| s.to_string()));
    header.push(value_name.into());
    writeln!(out, "{}", header.join(","))?;
    for (i, v) in field.values().iter().enumerate() {
        let c = grid.center(i);
        let mut row = vec![i.to_string()];
        row.extend(c[..grid.dim()].iter().map(|&x| fmt17(x)));
        row.push(fmt17(*v));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads the last column of a field CSV (as written by [`write_field_csv`]),
/// ordered by `cell_index`.
pub fn read_field_csv(input: impl std::io::Read, grid: Grid) -> Result<Field> {
    let mut reader = csv::Reader::from_reader(input);
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = vec![false; grid.len()];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("row {}: cannot parse {s:?}", line + 1)))
        };
        let idx: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("row {}: missing cell_index", line + 1)))?;
        if idx >= grid.len() {
            return Err(Error::Parse(format!("row {}: cell_index {idx} outside grid of {} cells", line + 1, grid.len())));
        }
        let v = parse(rec.get(rec.len() - 1).unwrap_or(""))?;
        values[idx] = v;
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("cell {missing} missing from field file")));
    }
    Field::new(grid, values)
}

pub fn read_field_path(path: impl AsRef<Path>, grid: Grid) -> Result<Field> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    read_field_csv(file, grid)
}

/// `t,mass,mass_drift_rel,energy,entropy_p<p>...,grad_w_sq,h1_dist,v_min,v_max,grad_v_sq`
pub fn write_diagnostics_csv(mut out: impl Write, records: &[DiagnosticsRecord], entropy_p: &[f64]) -> Result<()> {
    let mut header: Vec<String> = ["t", "mass", "mass_drift_rel", "energy"].iter().map(|s| s.to_string()).collect();
    header.extend(entropy_p.iter().map(|p| format!("entropy_p{p}")));
    header.extend(["grad_w_sq", "h1_dist", "v_min", "v_max", "grad_v_sq"].iter().map(|s| s.to_string()));
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![fmt17(r.t), fmt17(r.mass), fmt17(r.mass_drift_rel), fmt17(r.energy)];
        for p in entropy_p {
            let v = r.entropy.iter().find(|e| e.p == *p).map_or(f64::NAN, |e| e.value);
            row.push(fmt17(v));
        }
        row.push(fmt17(r.grad_w_sq.unwrap_or(f64::NAN)));
        row.push(fmt17(r.h1_dist.unwrap_or(f64::NAN)));
        row.extend([fmt17(r.v_min), fmt17(r.v_max), fmt17(r.grad_v_sq)]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(mut out: impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

pub fn save_field(path: impl AsRef<Path>, field: &Field, value_name: &str) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_field_csv(&mut w, field, value_name)?;
    w.flush()?;
    Ok(())
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_json(&mut w, value)?;
    w.flush()?;
    Ok(())
}

/// Writes `diagnostics.csv` and `snapshots/snapshot_NNNN.csv` under `dir`;
/// returns the paths written, relative to `dir`.
pub fn save_trajectory(dir: impl AsRef<Path>, traj: &Trajectory, entropy_p: &[f64]) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    let records: Vec<DiagnosticsRecord> = traj.snapshots.iter().map(|s| s.diagnostics.clone()).collect();
    let mut w = create(&dir.join("diagnostics.csv"))?;
    write_diagnostics_csv(&mut w, &records, entropy_p)?;
    w.flush()?;
    written.push("diagnostics.csv".to_string());
    for (i, s) in traj.snapshots.iter().enumerate() {
        let rel = format!("snapshots/snapshot_{i:04}.csv");
        save_field(dir.join(&rel), &s.v, "v")?;
        written.push(rel);
    }
    Ok(written)
}
