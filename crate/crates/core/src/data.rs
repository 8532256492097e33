//! Problem instances: the synthetic families used in the experiments, CSV
//! ingestion for regression tables, and a small on-disk instance format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Matrix, SparseMatrix};
use crate::rng;

/// A regression problem `A X ≈ B` with a record of where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub a: Matrix,
    pub b: Matrix,
    pub label: String,
    pub params: BTreeMap<String, String>,
}

impl Instance {
    pub fn new(a: Matrix, b: Matrix, label: impl Into<String>) -> Result<Self> {
        if a.rows() != b.rows() {
            return Err(Error::dim("instance", a.shape(), b.shape()));
        }
        Ok(Self {
            a,
            b,
            label: label.into(),
            params: BTreeMap::new(),
        })
    }

    fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub fn d(&self) -> usize {
        self.b.cols()
    }

    /// `[A, B]`.
    pub fn c(&self) -> Result<Matrix> {
        self.a.hstack(&self.b)
    }

    /// Appends zero rows up to `m` rows, keeping storage form. Costs and
    /// solutions of every method are unchanged by zero rows.
    pub fn pad_rows(&self, m: usize) -> Result<Self> {
        if m < self.rows() {
            return Err(Error::InvalidArgument(format!(
                "cannot pad {} rows down to {m}",
                self.rows()
            )));
        }
        let pad = |x: &Matrix| -> Result<Matrix> {
            Ok(match x {
                Matrix::Sparse(s) => {
                    let mut trip = Vec::with_capacity(s.nnz());
                    for i in 0..s.rows() {
                        let (cols, vals) = s.row(i);
                        trip.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
                    }
                    Matrix::Sparse(SparseMatrix::from_triplets(m, s.cols(), &trip)?)
                }
                Matrix::Dense(d) => Matrix::Dense(d.vstack(&DenseMatrix::zeros(m - d.rows(), d.cols()))?),
            })
        };
        let mut out = Self::new(pad(&self.a)?, pad(&self.b)?, self.label.clone())?;
        out.params = self.params.clone();
        out.params.insert("padded_rows".into(), m.to_string());
        Ok(out)
    }
}

/// `rows x cols` sparse matrix with ones on the leading diagonal and a single
/// response entry `3` at row `cols`.
fn identity_prefix(rows: usize, cols: usize) -> Result<(Matrix, Matrix)> {
    let trip: Vec<_> = (0..cols).map(|i| (i, i, 1.0)).collect();
    let a = SparseMatrix::from_triplets(rows, cols, &trip)?;
    let b = SparseMatrix::from_triplets(rows, 1, &[(cols, 0, 3.0)])?;
    Ok((a.into(), b.into()))
}

/// The 3 x 2 example: `A = [e1, e2]`, `B = 3 e3`. LS costs 9, TLS costs 1.
pub fn gen_toy() -> Instance {
    let (a, b) = identity_prefix(3, 2).expect("fixed shapes are valid");
    Instance::new(a, b, "toy").expect("rows agree")
}

/// The 10 x 5 variant of [`gen_toy`], with `B` = 3 at row 6.
pub fn gen_toy_appendix() -> Instance {
    let (a, b) = identity_prefix(10, 5).expect("fixed shapes are valid");
    Instance::new(a, b, "toy-appendix").expect("rows agree")
}

/// Sparse `20k x 2k` identity prefix with `B` = 3 at row `2k + 1`.
pub fn gen_identity_family(k: usize) -> Result<Instance> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let (a, b) = identity_prefix(20 * k, 2 * k)?;
    Ok(Instance::new(a, b, "identity")?.with_param("k", k))
}

/// Standard deviation of the Gaussian response entries.
pub const RESPONSE_SD: f64 = 3.0;

fn gaussian_pair(rows: usize, cols: usize, seed: u64, label: &str) -> (Matrix, Matrix) {
    let mut rng = rng::stream(seed, label);
    let a = DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    let normal = Normal::new(0.0, RESPONSE_SD).expect("positive deviation");
    let b = DenseMatrix::from_fn(rows, 1, |_, _| normal.sample(&mut rng));
    (a.into(), b.into())
}

/// Dense `20k x 2k` standard normal `A` and `20k x 1` response with
/// standard deviation 3.
pub fn gen_gaussian_family(k: usize, seed: u64) -> Result<Instance> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let (a, b) = gaussian_pair(20 * k, 2 * k, seed, "gaussian-family");
    Ok(Instance::new(a, b, "gaussian")?.with_param("k", k).with_param("seed", seed))
}

/// The 10 x 5 Gaussian example.
pub fn gen_small_gaussian(seed: u64) -> Instance {
    let (a, b) = gaussian_pair(10, 5, seed, "small-gaussian");
    Instance::new(a, b, "small-gaussian")
        .expect("rows agree")
        .with_param("seed", seed)
}

/// Generates a named family: `toy`, `toy-appendix`, `identity`, `gaussian`,
/// or `small-gaussian`.
pub fn generate(family: &str, k: usize, seed: u64) -> Result<Instance> {
    match family {
        "toy" => Ok(gen_toy()),
        "toy-appendix" => Ok(gen_toy_appendix()),
        "identity" => gen_identity_family(k),
        "gaussian" => gen_gaussian_family(k, seed),
        "small-gaussian" => Ok(gen_small_gaussian(seed)),
        other => Err(Error::InvalidArgument(format!(
            "unknown family {other:?}; expected toy, toy-appendix, identity, gaussian, or small-gaussian"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub header: bool,
    /// Explicit response columns (zero-based); predictors are the rest, in order.
    pub response_cols: Option<Vec<usize>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            header: false,
            response_cols: None,
        }
    }
}

/// Reads a numeric table. Line and column numbers in errors are one-based.
fn read_table(path: &Path, delimiter: u8, header: bool) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, 0))?;
    let mut rows = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::ingestion(
                line,
                record.len().min(expected) + 1,
                format!("expected {expected} fields, found {}", record.len()),
            ));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::ingestion(line, j + 1, format!("non-finite value {cell:?}"))),
                Err(_) if cell.is_empty() => Err(Error::ingestion(line, j + 1, "missing value")),
                Err(_) => Err(Error::ingestion(line, j + 1, format!("not a number: {cell:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    match width {
        Some(w) => Ok((rows, w)),
        None => Err(Error::ingestion(1, 1, "no data rows")),
    }
}

fn csv_error(e: csv::Error, column: usize) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::ingestion(line, column, format!("{kind:?}")),
    }
}

/// Loads a table, taking the first `n_predictors` columns as `A` and the rest
/// as `B` (or the complement of `options.response_cols` as `A`).
pub fn load_csv(path: impl AsRef<Path>, n_predictors: usize, options: &CsvOptions) -> Result<Instance> {
    let path = path.as_ref();
    let (rows, width) = read_table(path, options.delimiter, options.header)?;
    let first_line = if options.header { 2 } else { 1 };
    let response: Vec<usize> = match &options.response_cols {
        Some(cols) => {
            if let Some(&bad) = cols.iter().find(|&&j| j >= width) {
                return Err(Error::ingestion(first_line, bad + 1, format!("response column beyond the {width} columns")));
            }
            cols.clone()
        }
        None => {
            if n_predictors >= width {
                return Err(Error::ingestion(
                    first_line,
                    width,
                    format!("{n_predictors} predictors leave no response column among {width}"),
                ));
            }
            (n_predictors..width).collect()
        }
    };
    let predictors: Vec<usize> = (0..width).filter(|j| !response.contains(j)).collect();
    if predictors.len() != n_predictors || n_predictors == 0 || response.is_empty() {
        return Err(Error::ingestion(
            first_line,
            1,
            format!(
                "{n_predictors} predictors requested, table gives {} predictors and {} responses",
                predictors.len(),
                response.len()
            ),
        ));
    }
    let pick = |cols: &[usize]| DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| rows[i][cols[j]]);
    let label = path.file_name().map_or_else(|| "csv".into(), |f| f.to_string_lossy().into_owned());
    Ok(Instance::new(pick(&predictors).into(), pick(&response).into(), label)?
        .with_param("path", path.display()))
}

fn write_rows(out: &mut impl Write, c: &DenseMatrix, delimiter: char) -> Result<()> {
    for i in 0..c.rows() {
        let line: Vec<String> = c.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(&delimiter.to_string()))?;
    }
    Ok(())
}

/// Writes `[A, B]` as CSV; values use the shortest round-trip representation.
pub fn write_csv(instance: &Instance, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    if header {
        let names: Vec<String> = (1..=instance.n())
            .map(|i| format!("a{i}"))
            .chain((1..=instance.d()).map(|j| format!("b{j}")))
            .collect();
        writeln!(out, "{}", names.join(","))?;
    }
    write_rows(&mut out, &instance.c()?.to_dense(), ',')?;
    out.flush()?;
    Ok(())
}

/// First line of the instance format: `ftls-instance <m> <n> <d>`.
const INSTANCE_MAGIC: &str = "ftls-instance";

/// Writes the instance format: a shape line, then one CSV row per row of `[A, B]`.
pub fn write_instance(instance: &Instance, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{INSTANCE_MAGIC} {} {} {}", instance.rows(), instance.n(), instance.d())?;
    write_rows(out, &instance.c()?.to_dense(), ',')
}

pub fn save_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    write_instance(instance, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Whether the file starts with the instance-format shape line.
pub fn is_instance_file(path: impl AsRef<Path>) -> Result<bool> {
    let mut first = String::new();
    BufReader::new(fs::File::open(path)?).read_line(&mut first)?;
    Ok(first.starts_with(INSTANCE_MAGIC))
}

/// Reads the instance format; the shape line must match the rows that follow.
pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let fields: Vec<&str> = header.split_whitespace().collect();
    let shape: Vec<usize> = match fields.as_slice() {
        [magic, rest @ ..] if *magic == INSTANCE_MAGIC && rest.len() == 3 => rest
            .iter()
            .enumerate()
            .map(|(k, f)| f.parse().map_err(|_| Error::ingestion(1, k + 2, format!("bad shape field {f:?}"))))
            .collect::<Result<_>>()?,
        _ => return Err(Error::ingestion(1, 1, format!("expected `{INSTANCE_MAGIC} <m> <n> <d>`"))),
    };
    let (m, n, d) = (shape[0], shape[1], shape[2]);
    let mut data = Vec::with_capacity(m * (n + d));
    let mut count = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = k + 2;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != n + d {
            return Err(Error::ingestion(line_no, cells.len().min(n + d) + 1, format!("expected {} fields, found {}", n + d, cells.len())));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::ingestion(line_no, j + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::ingestion(line_no, j + 1, format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
        count += 1;
    }
    if count != m {
        return Err(Error::ingestion(count + 2, 1, format!("shape line promises {m} rows, found {count}")));
    }
    let c = DenseMatrix::from_row_major(m, n + d, data)?;
    let label = path.file_name().map_or_else(|| "instance".into(), |f| f.to_string_lossy().into_owned());
    Instance::new(c.column_range(0, n).into(), c.column_range(n, n + d).into(), label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes_and_counts() {
        let t = gen_toy();
        assert_eq!((t.a.shape(), t.b.shape()), ((3, 2), (3, 1)));
        assert_eq!((t.a.nnz(), t.b.nnz()), (2, 1));
        assert_eq!(t.b.to_dense()[(2, 0)], 3.0);
        let app = gen_toy_appendix();
        assert_eq!(app.a.shape(), (10, 5));
        assert_eq!(app.b.to_dense()[(5, 0)], 3.0);
    }

    #[test]
    fn identity_family_shape() {
        let i = gen_identity_family(5).unwrap();
        assert_eq!(i.a.shape(), (100, 10));
        assert_eq!((i.a.nnz(), i.b.nnz()), (10, 1));
        assert_eq!(i.b.to_dense()[(10, 0)], 3.0);
        assert!(gen_identity_family(0).is_err());
    }

    #[test]
    fn gaussian_generators_are_seeded() {
        assert_eq!(gen_gaussian_family(2, 5).unwrap(), gen_gaussian_family(2, 5).unwrap());
        assert_ne!(gen_gaussian_family(2, 5).unwrap().a, gen_gaussian_family(2, 6).unwrap().a);
        assert_eq!(gen_small_gaussian(1), gen_small_gaussian(1));
        assert_eq!(gen_small_gaussian(1).a.shape(), (10, 5));
    }

    #[test]
    fn padding_keeps_storage_and_values() {
        let p = gen_toy().pad_rows(7).unwrap();
        assert!(p.a.is_sparse());
        assert_eq!(p.rows(), 7);
        assert_eq!(p.b.to_dense()[(2, 0)], 3.0);
        assert!(gen_toy().pad_rows(2).is_err());
    }
}
