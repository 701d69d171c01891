//! Text matrix format.
//!
//! ```text
//! SYMMAT <d>            FEAT <K> <N>
//! <d values> × d        <N values> × K
//! ```
//!
//! Values are written with 17 significant digits, so a write/read round trip
//! of finite values is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::feature::FeatureBlock;
use super::matrix::Matrix;
use super::sym::SymMatrix;
use crate::error::{PnError, Result};

/// Either kind of matrix file.
#[derive(Clone, Debug, PartialEq)]
pub enum MatrixFile {
    Sym(SymMatrix),
    Feat(FeatureBlock),
}

fn push_row(out: &mut String, row: &[f64]) {
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(' ');
        }
        write!(out, "{v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

pub fn format_sym(m: &SymMatrix) -> String {
    let d = m.dim();
    let mut out = format!("SYMMAT {d}\n");
    for i in 0..d {
        push_row(&mut out, m.as_matrix().row(i));
    }
    out
}

pub fn format_feat(b: &FeatureBlock) -> String {
    let mut out = format!("FEAT {} {}\n", b.channels(), b.count());
    for k in 0..b.channels() {
        push_row(&mut out, b.as_matrix().row(k));
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> PnError {
    PnError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    match tok.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(parse_err(line, format!("invalid {what} '{tok}'"))),
    }
}

fn parse_rows(lines: &[&str], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line_no = r + 2;
        let line = lines
            .get(r + 1)
            .ok_or_else(|| parse_err(line_no, format!("expected {rows} data rows, found {r}")))?;
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid number '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value '{tok}'")));
            }
            data.push(v);
            count += 1;
        }
        if count != cols {
            return Err(parse_err(line_no, format!("expected {cols} values, found {count}")));
        }
    }
    if let Some(extra) = lines[rows + 1..].iter().position(|l| !l.trim().is_empty()) {
        return Err(parse_err(rows + 2 + extra, "unexpected data after the last row"));
    }
    Ok(data)
}

pub fn parse_matrix_file(text: &str) -> Result<MatrixFile> {
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.first().ok_or_else(|| parse_err(1, "empty input"))?;
    let mut toks = header.split_whitespace();
    match toks.next() {
        Some("SYMMAT") => {
            let d = parse_usize(toks.next(), 1, "dimension")?;
            if toks.next().is_some() {
                return Err(parse_err(1, "trailing tokens in header"));
            }
            let data = parse_rows(&lines, d, d)?;
            for i in 0..d {
                for j in 0..i {
                    if data[i * d + j].to_bits() != data[j * d + i].to_bits() {
                        return Err(parse_err(i + 2, format!("matrix is not symmetric at ({i}, {j})")));
                    }
                }
            }
            Ok(MatrixFile::Sym(SymMatrix::from_matrix(&Matrix::from_vec(d, d, data)?)?))
        }
        Some("FEAT") => {
            let k = parse_usize(toks.next(), 1, "channel count")?;
            let n = parse_usize(toks.next(), 1, "column count")?;
            if toks.next().is_some() {
                return Err(parse_err(1, "trailing tokens in header"));
            }
            let data = parse_rows(&lines, k, n)?;
            Ok(MatrixFile::Feat(FeatureBlock::new(k, n, data)?))
        }
        other => Err(parse_err(
            1,
            format!("expected SYMMAT or FEAT header, found '{}'", other.unwrap_or("")),
        )),
    }
}

pub fn parse_sym(text: &str) -> Result<SymMatrix> {
    match parse_matrix_file(text)? {
        MatrixFile::Sym(m) => Ok(m),
        MatrixFile::Feat(_) => Err(parse_err(1, "expected SYMMAT, found FEAT")),
    }
}

pub fn parse_feat(text: &str) -> Result<FeatureBlock> {
    match parse_matrix_file(text)? {
        MatrixFile::Feat(b) => Ok(b),
        MatrixFile::Sym(_) => Err(parse_err(1, "expected FEAT, found SYMMAT")),
    }
}

pub fn write_sym(path: impl AsRef<Path>, m: &SymMatrix) -> Result<()> {
    Ok(fs::write(path, format_sym(m))?)
}

pub fn write_feat(path: impl AsRef<Path>, b: &FeatureBlock) -> Result<()> {
    Ok(fs::write(path, format_feat(b))?)
}

pub fn read_sym(path: impl AsRef<Path>) -> Result<SymMatrix> {
    parse_sym(&fs::read_to_string(path)?)
}

pub fn read_feat(path: impl AsRef<Path>) -> Result<FeatureBlock> {
    parse_feat(&fs::read_to_string(path)?)
}
