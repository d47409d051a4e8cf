//! Matrix Market and headerless CSV readers/writers.
//!
//! Supported Matrix Market flavours: `matrix coordinate real|integer
//! general|symmetric` and `matrix array real|integer general`. Values are
//! written with Rust's shortest round-trip float formatting, so a
//! save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_value(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse '{token}' as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{token}'")));
    }
    Ok(v)
}

fn parse_index(path: &Path, line: usize, token: &str, bound: usize, what: &str) -> Result<usize> {
    let i: usize = token
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} index '{token}'")))?;
    if i == 0 || i > bound {
        return Err(parse_err(
            path,
            line,
            format!("{what} index {i} out of range 1..={bound}"),
        ));
    }
    Ok(i - 1)
}

#[derive(Clone, Copy, PartialEq)]
enum MmLayout {
    Coordinate,
    Array,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (header_no, header) = match lines.next() {
        Some((i, l)) => (i + 1, l.map_err(|e| Error::io(path, e))?),
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(
            path,
            header_no,
            "expected header '%%MatrixMarket matrix <format> <field> <symmetry>'",
        ));
    }
    let layout = match tokens[2].as_str() {
        "coordinate" => MmLayout::Coordinate,
        "array" => MmLayout::Array,
        other => return Err(parse_err(path, header_no, format!("unsupported format '{other}'"))),
    };
    if !matches!(tokens[3].as_str(), "real" | "integer" | "double") {
        return Err(parse_err(
            path,
            header_no,
            format!("unsupported field '{}'; only real matrices are accepted", tokens[3]),
        ));
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, header_no, format!("unsupported symmetry '{other}'"))),
    };
    if symmetric && layout == MmLayout::Array {
        return Err(parse_err(path, header_no, "symmetric array format is not supported"));
    }

    let mut body = lines.filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() || l.trim_start().starts_with('%') => None,
        other => Some((i + 1, other)),
    });

    let (size_no, size_line) = match body.next() {
        Some((i, l)) => (i, l.map_err(|e| Error::io(path, e))?),
        None => return Err(parse_err(path, header_no, "missing size line")),
    };
    let dims: Vec<&str> = size_line.split_whitespace().collect();
    let parse_dim = |t: &str| -> Result<usize> {
        t.parse()
            .map_err(|_| parse_err(path, size_no, format!("cannot parse dimension '{t}'")))
    };
    let (rows, cols) = match (layout, dims.as_slice()) {
        (MmLayout::Coordinate, [m, n, _]) | (MmLayout::Array, [m, n]) => {
            (parse_dim(m)?, parse_dim(n)?)
        }
        _ => return Err(parse_err(path, size_no, "malformed size line")),
    };
    if rows == 0 || cols == 0 {
        return Err(parse_err(path, size_no, "matrix dimensions must be positive"));
    }
    if symmetric && rows != cols {
        return Err(parse_err(path, size_no, "symmetric matrix must be square"));
    }

    let mut matrix = DMatrix::zeros(rows, cols);
    match layout {
        MmLayout::Coordinate => {
            let nnz = parse_dim(dims[2])?;
            let mut seen = 0;
            for (no, line) in body {
                let line = line.map_err(|e| Error::io(path, e))?;
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(parse_err(path, no, "expected 'row col value'"));
                }
                let i = parse_index(path, no, t[0], rows, "row")?;
                let j = parse_index(path, no, t[1], cols, "column")?;
                let v = parse_value(path, no, t[2])?;
                matrix[(i, j)] += v;
                if symmetric && i != j {
                    matrix[(j, i)] += v;
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    path,
                    size_no,
                    format!("declared {nnz} entries but found {seen}"),
                ));
            }
        }
        MmLayout::Array => {
            let mut k = 0;
            for (no, line) in body {
                let line = line.map_err(|e| Error::io(path, e))?;
                for token in line.split_whitespace() {
                    if k >= rows * cols {
                        return Err(parse_err(path, no, "more entries than rows*cols"));
                    }
                    matrix[(k % rows, k / rows)] = parse_value(path, no, token)?;
                    k += 1;
                }
            }
            if k != rows * cols {
                return Err(parse_err(
                    path,
                    size_no,
                    format!("expected {} entries, found {k}", rows * cols),
                ));
            }
        }
    }
    Ok(matrix)
}

/// Writes the dense matrix in `array real general` (column-major) format.
pub fn write_matrix_market(path: impl AsRef<Path>, matrix: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix array real general")?;
        writeln!(out, "{} {}", matrix.nrows(), matrix.ncols())?;
        for v in matrix.iter() {
            writeln!(out, "{v:?}")?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(file))
}

fn csv_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for record in csv_reader(path)?.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values = record
            .iter()
            .map(|t| parse_value(path, line, t))
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    Ok(rows)
}

/// Dense matrix from a headerless CSV, one matrix row per line.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let rows = csv_rows(path)?;
    let Some((_, first)) = rows.first() else {
        return Err(parse_err(path, 1, "empty matrix"));
    };
    let cols = first.len();
    for (line, row) in &rows {
        if row.len() != cols {
            return Err(parse_err(
                path,
                *line,
                format!("row has {} columns, expected {cols}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        cols,
        rows.iter().flat_map(|(_, r)| r.iter().copied()),
    ))
}

/// Vector from a headerless one-column CSV.
pub fn read_csv_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let rows = csv_rows(path)?;
    if rows.is_empty() {
        return Err(parse_err(path, 1, "empty vector"));
    }
    let mut values = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.len() != 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected one column, found {}", row.len()),
            ));
        }
        values.push(row[0]);
    }
    Ok(DVector::from_vec(values))
}

pub fn write_csv_vector(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        for x in v.iter() {
            writeln!(out, "{x:?}")?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn write_csv_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        for row in m.row_iter() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
