//! CSV serialisation of datasets.
//!
//! Every file carries a header row; floats use 17 significant digits so that a
//! write/read cycle is lossless.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{LongOrbit, OrbitSet, SnapshotSet};
use crate::error::{Error, Result};
use crate::points::Points;

/// Formats a float with 17 significant digits.
#[inline]
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `header` then one line per row.
pub(crate) fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for r in rows {
        writeln!(w, "{}", r.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn cols(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

/// Parsed CSV table: header plus numeric rows with their 1-based line numbers.
pub(crate) struct Table {
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<f64>)>,
}

pub(crate) fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("column {} ({}): cannot parse {f:?} as a number", c + 1, header.get(c).map_or("?", |s| s)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, vals));
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.into(),
        line,
        message: message.into(),
    }
}

fn as_index(path: &Path, line: u64, v: f64, what: &str) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(parse_err(path, line, format!("{what} must be an integer, got {v}")));
    }
    Ok(v as i64)
}

fn dim_from_header(path: &Path, header: &[String], fixed: usize, groups: usize) -> Result<usize> {
    let free = header.len().checked_sub(fixed).unwrap_or(0);
    if free == 0 || free % groups != 0 {
        return Err(parse_err(path, 1, format!("unexpected header {header:?}")));
    }
    Ok(free / groups)
}

/// Rows `(orbit_id, t_offset, x_1..x_d)` with `t_offset` running from `-ell` to 0.
pub fn write_orbit_set(path: impl AsRef<Path>, set: &OrbitSet) -> Result<()> {
    let d = set.dim();
    let ell = set.history_len();
    let header: Vec<String> = ["orbit_id".to_string(), "t_offset".to_string()]
        .into_iter()
        .chain(cols("x", d))
        .collect();
    let rows = (0..set.len()).flat_map(|i| {
        (0..=ell).rev().map(move |t| {
            let mut r = vec![i.to_string(), format!("-{t}")];
            if t == 0 {
                r[1] = "0".into();
            }
            r.extend(set.state(i, t).iter().map(|&v| fmt_f64(v)));
            r
        })
    });
    write_rows(path.as_ref(), &header, rows)
}

pub fn read_orbit_set(path: impl AsRef<Path>) -> Result<OrbitSet> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let d = dim_from_header(path, &table.header, 2, 1)?;
    let mut data = Vec::new();
    let mut ell: Option<usize> = None;
    let mut current: Option<i64> = None;
    let mut expected_offset = 0i64;
    let mut count = 0usize;
    for (line, r) in &table.rows {
        if r.len() != d + 2 {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", d + 2, r.len())));
        }
        let id = as_index(path, *line, r[0], "orbit_id")?;
        let off = as_index(path, *line, r[1], "t_offset")?;
        if current != Some(id) {
            if let Some(prev) = current {
                if expected_offset != 1 {
                    return Err(parse_err(path, *line, format!("orbit {prev} does not end at offset 0")));
                }
            }
            if off > 0 {
                return Err(parse_err(path, *line, "t_offset must be non-positive"));
            }
            let this_ell = (-off) as usize;
            match ell {
                None => ell = Some(this_ell),
                Some(e) if e != this_ell => {
                    return Err(parse_err(path, *line, format!("history length {this_ell} differs from {e}")))
                }
                _ => {}
            }
            current = Some(id);
            expected_offset = off;
            count += 1;
        }
        if off != expected_offset {
            return Err(parse_err(path, *line, format!("expected t_offset {expected_offset}, found {off}")));
        }
        expected_offset += 1;
        data.extend_from_slice(&r[2..]);
    }
    let last = table.rows.last().map_or(1, |r| r.0);
    if count == 0 || expected_offset != 1 {
        return Err(parse_err(path, last, "orbit file is empty or truncated"));
    }
    OrbitSet::from_forward_segments(d, ell.unwrap_or(0), data)
}

/// Rows `(t, x_1..x_d)`.
pub fn write_long_orbit(path: impl AsRef<Path>, orbit: &LongOrbit) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string()).chain(cols("x", orbit.dim())).collect();
    let rows = orbit.states().iter().enumerate().map(|(t, x)| {
        std::iter::once(t.to_string())
            .chain(x.iter().map(|&v| fmt_f64(v)))
            .collect()
    });
    write_rows(path.as_ref(), &header, rows)
}

pub fn read_long_orbit(path: impl AsRef<Path>) -> Result<LongOrbit> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let d = dim_from_header(path, &table.header, 1, 1)?;
    let mut pts = Points::with_capacity(d, table.rows.len());
    for (k, (line, r)) in table.rows.iter().enumerate() {
        if r.len() != d + 1 {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", d + 1, r.len())));
        }
        if as_index(path, *line, r[0], "t")? != k as i64 {
            return Err(parse_err(path, *line, format!("expected t = {k}")));
        }
        pts.push(&r[1..])?;
    }
    if pts.len() < 2 {
        return Err(parse_err(path, 1, "a long orbit needs at least 2 states"));
    }
    Ok(LongOrbit::new(pts))
}

/// Rows `(pair_id, x_1..x_d, xprev_1..xprev_d)`.
pub fn write_snapshots(path: impl AsRef<Path>, snaps: &SnapshotSet) -> Result<()> {
    let d = snaps.dim();
    let header: Vec<String> = std::iter::once("pair_id".to_string())
        .chain(cols("x", d))
        .chain(cols("xprev", d))
        .collect();
    let rows = (0..snaps.len()).map(|i| {
        std::iter::once(i.to_string())
            .chain(snaps.successors().row(i).iter().map(|&v| fmt_f64(v)))
            .chain(snaps.predecessors().row(i).iter().map(|&v| fmt_f64(v)))
            .collect()
    });
    write_rows(path.as_ref(), &header, rows)
}

pub fn read_snapshots(path: impl AsRef<Path>) -> Result<SnapshotSet> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let d = dim_from_header(path, &table.header, 1, 2)?;
    let mut succ = Points::with_capacity(d, table.rows.len());
    let mut pred = Points::with_capacity(d, table.rows.len());
    for (line, r) in &table.rows {
        if r.len() != 2 * d + 1 {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", 2 * d + 1, r.len())));
        }
        succ.push(&r[1..=d])?;
        pred.push(&r[d + 1..])?;
    }
    SnapshotSet::new(succ, pred).map_err(|e| parse_err(path, 1, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_orbit_set, generate_snapshots, lorenz_system, InitBox};

    #[test]
    fn orbit_set_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let sys = lorenz_system();
        let set = generate_orbit_set(&sys, 3, 4, 10, &InitBox::cube(3, 15.0).unwrap(), 1).unwrap();
        let p = dir.path().join("orbits.csv");
        write_orbit_set(&p, &set).unwrap();
        assert_eq!(read_orbit_set(&p).unwrap(), set);
    }

    #[test]
    fn snapshots_and_long_orbit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = lorenz_system();
        let snaps = generate_snapshots(&sys, 2, 3, 5, &InitBox::cube(3, 15.0).unwrap(), 2).unwrap();
        let p = dir.path().join("s.csv");
        write_snapshots(&p, &snaps).unwrap();
        assert_eq!(read_snapshots(&p).unwrap(), snaps);

        let orbit = LongOrbit::new(snaps.successors().clone());
        let p = dir.path().join("o.csv");
        write_long_orbit(&p, &orbit).unwrap();
        assert_eq!(read_long_orbit(&p).unwrap(), orbit);
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,x_1\n0,1.0\n1,oops\n").unwrap();
        match read_long_orbit(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}
