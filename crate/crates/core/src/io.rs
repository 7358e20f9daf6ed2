//! Plain-text artifacts: PGM density images, element-field CSVs, iteration
//! logs and JSON summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;
use crate::optimizer::IterationRecord;

/// Hex SHA-256 of a configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// ASCII greymap, top row first; density 1 is black (0) and 0 is white (255).
pub fn pgm_string(mesh: &StructuredMesh, field: &[f64], config_hash: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "P2");
    let _ = writeln!(s, "# config-sha256 {config_hash}");
    let _ = writeln!(s, "{} {}", mesh.nx, mesh.ny);
    let _ = writeln!(s, "255");
    for iy in (0..mesh.ny).rev() {
        let row: Vec<String> = (0..mesh.nx)
            .map(|ix| {
                let rho = field[mesh.element(ix, iy)].clamp(0.0, 1.0);
                ((1.0 - rho) * 255.0).round().to_string()
            })
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn write_pgm(path: &Path, mesh: &StructuredMesh, field: &[f64], config_hash: &str) -> Result<()> {
    write_text(path, &pgm_string(mesh, field, config_hash))
}

/// Parses a P2 greymap back into densities (row-major from the bottom row).
pub fn parse_pgm(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |m: &str| Error::Config(format!("invalid PGM: {m}"));
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(bad("expected magic P2"));
    }
    let mut num = |what: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| bad(&format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|_| bad(&format!("non-numeric {what}")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || max == 0 {
        return Err(bad("zero size or maxval"));
    }
    let mut pix = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        pix.push(num("pixel")?);
    }
    let mut field = vec![0.0; w * h];
    for (k, &p) in pix.iter().enumerate() {
        if p > max {
            return Err(bad("pixel exceeds maxval"));
        }
        let (row, ix) = (k / w, k % w);
        let iy = h - 1 - row;
        field[iy * w + ix] = 1.0 - p as f64 / max as f64;
    }
    Ok((w, h, field))
}

/// `element,ix,iy,value` rows in element order.
pub fn field_csv(mesh: &StructuredMesh, field: &[f64]) -> String {
    let mut s = String::from("element,ix,iy,value\n");
    for (e, v) in field.iter().enumerate() {
        let (ix, iy) = mesh.element_ij(e);
        let _ = writeln!(s, "{e},{ix},{iy},{v:.17e}");
    }
    s
}

pub fn write_field_csv(path: &Path, mesh: &StructuredMesh, field: &[f64]) -> Result<()> {
    write_text(path, &field_csv(mesh, field))
}

pub fn parse_field_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == "element,ix,iy,value" => {}
        _ => return Err(Error::Config("field CSV must start with 'element,ix,iy,value'".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (cols.len() == 4)
            .then(|| Some((cols[0].parse::<usize>().ok()?, cols[3].parse::<f64>().ok()?)))
            .flatten();
        let Some((e, v)) = parsed else {
            return Err(Error::Config(format!("field CSV line {}: expected 'element,ix,iy,value'", n + 1)));
        };
        if e != out.len() {
            return Err(Error::Config(format!("field CSV line {}: element {e} out of order", n + 1)));
        }
        out.push(v);
    }
    Ok(out)
}

/// Reads a density field from `.pgm` or `.csv`.
pub fn read_field(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => parse_pgm(&text).map(|(_, _, f)| f),
        Some("csv") => parse_field_csv(&text),
        _ => Err(Error::Config(format!("{}: expected a .pgm or .csv field", path.display()))),
    }
}

const HISTORY_HEADER: &str = "loop,iteration,psi,cost,inv_det,volume,volume_target,grey_index,max_change,kappa_2";
const BRANCH_HEADER: &str =
    "cost_eroded,cost_intermediate,cost_dilated,volume_eroded,volume_intermediate,volume_dilated,active_branch";

pub fn history_csv(history: &[IterationRecord]) -> String {
    let robust = history.iter().any(|r| r.branches.is_some());
    let mut s = String::from(HISTORY_HEADER);
    if robust {
        s.push(',');
        s.push_str(BRANCH_HEADER);
    }
    s.push('\n');
    for r in history {
        let _ = write!(
            s,
            "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.loop_index, r.iteration, r.psi, r.cost, r.inv_det, r.volume, r.volume_target, r.grey_index, r.max_change, r.kappa_2
        );
        if let Some(b) = r.branches {
            let _ = write!(
                s,
                ",{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                b.cost_eroded,
                b.cost_intermediate,
                b.cost_dilated,
                b.volume_eroded,
                b.volume_intermediate,
                b.volume_dilated,
                ["eroded", "intermediate", "dilated"][b.active]
            );
        }
        s.push('\n');
    }
    s
}

pub fn write_csv_rows(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn write_history(path: &Path, history: &[IterationRecord]) -> Result<()> {
    write_text(path, &history_csv(history))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Run(format!("serialising {}: {e}", path.display())))?;
    write_text(path, &(text + "\n"))
}
