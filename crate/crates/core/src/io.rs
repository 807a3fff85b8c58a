//! Artifact file formats.
//!
//! All artifacts are plain text so runs can be diffed and inspected:
//!
//! * **Ensemble CSV** - header `quantity,time,member_0,...,member_{N_r-1}`,
//!   one row per `(quantity, time)` pair in flattened (quantity-major)
//!   order. Values carry 17 significant digits, which round-trips `f64`
//!   exactly and satisfies the 12-digit floor of the format.
//! * **Observation JSON** - `{"entries":[[q,t],...],"values":[...],
//!   "error_std":[...]}` with `(quantity, time)` index pairs.
//! * **Labeled matrix CSV** - header `<row_label>,<col_prefix>0,...`, one row
//!   per matrix row with its index in the first column. Used for latent
//!   ensembles and weight payloads.
//!
//! Writers are deterministic: identical inputs produce identical bytes.
//! Readers reject malformed files with line-numbered parse errors, and a
//! missing file surfaces as [`DsiError::MissingArtifact`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{DataSchema, Ensemble, ObservationSet};
use crate::error::{DsiError, Result};
use crate::scalar::Scalar;

/// Formats one value with 17 significant digits.
pub fn fmt_scalar<S: Scalar>(v: S) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> DsiError {
    if source.kind() == std::io::ErrorKind::NotFound {
        DsiError::MissingArtifact(path.display().to_string())
    } else {
        DsiError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> DsiError {
    DsiError::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn parse_scalar<S: Scalar>(field: &str, path: &Path, line: usize) -> Result<S> {
    field
        .parse::<S>()
        .map_err(|_| parse_err(path, format!("line {line}: invalid number {field:?}")))
}

fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| parse_err(path, format!("line {line}: invalid number {field:?}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?).lines())
}

/// Writes an ensemble in the ensemble CSV format.
pub fn write_ensemble_csv<S: Scalar>(e: &Ensemble<S>, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let emit = |w: &mut BufWriter<File>, s: String| -> Result<()> {
        w.write_all(s.as_bytes()).map_err(|err| io_err(path, err))
    };
    let mut header = String::from("quantity,time");
    for j in 0..e.n_members() {
        header.push_str(&format!(",member_{j}"));
    }
    header.push('\n');
    emit(&mut w, header)?;
    let schema = e.schema();
    for q in 0..schema.n_qoi() {
        for t in 0..schema.n_t() {
            let mut row = format!("{},{}", schema.quantity_names()[q], schema.times()[t]);
            for m in e.iter_members() {
                row.push(',');
                row.push_str(&fmt_scalar(m[(q, t)]));
            }
            row.push('\n');
            emit(&mut w, row)?;
        }
    }
    w.flush().map_err(|err| io_err(path, err))
}

/// Reads an ensemble from the ensemble CSV format.
pub fn read_ensemble_csv<S: Scalar>(path: &Path) -> Result<Ensemble<S>> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))?
        .map_err(|e| io_err(path, e))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 3 || cols[0] != "quantity" || cols[1] != "time" {
        return Err(parse_err(
            path,
            "header must start with quantity,time,member_0",
        ));
    }
    let n_r = cols.len() - 2;
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("member_{j}") {
            return Err(parse_err(path, format!("unexpected member column {c:?}")));
        }
    }

    // Group rows into contiguous per-quantity blocks in file order.
    let mut names: Vec<String> = Vec::new();
    let mut times_per_q: Vec<Vec<f64>> = Vec::new();
    let mut rows: Vec<Vec<S>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = lineno + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != n_r + 2 {
            return Err(parse_err(
                path,
                format!("line {lineno}: expected {} fields, got {}", n_r + 2, fields.len()),
            ));
        }
        let name = fields[0].to_string();
        let time = parse_f64(fields[1], path, lineno)?;
        match names.last() {
            Some(last) if *last == name => {}
            _ => {
                if names.contains(&name) {
                    return Err(parse_err(
                        path,
                        format!("line {lineno}: quantity {name:?} rows are not contiguous"),
                    ));
                }
                names.push(name);
                times_per_q.push(Vec::new());
            }
        }
        times_per_q.last_mut().expect("block exists").push(time);
        let mut row = Vec::with_capacity(n_r);
        for f in &fields[2..] {
            row.push(parse_scalar(f, path, lineno)?);
        }
        rows.push(row);
    }
    let times = times_per_q
        .first()
        .ok_or_else(|| parse_err(path, "no data rows"))?
        .clone();
    for (q, tq) in times_per_q.iter().enumerate() {
        if *tq != times {
            return Err(parse_err(
                path,
                format!("quantity {:?} has a different time grid", names[q]),
            ));
        }
    }
    let schema = DataSchema::new(names, times).map_err(|e| parse_err(path, e.to_string()))?;
    let (nq, nt) = (schema.n_qoi(), schema.n_t());
    let members: Vec<DMatrix<S>> = (0..n_r)
        .map(|j| DMatrix::from_fn(nq, nt, |q, t| rows[q * nt + t][j]))
        .collect();
    Ensemble::new(schema, members).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes an observation set as JSON.
pub fn write_observations_json<S: Scalar>(obs: &ObservationSet<S>, path: &Path) -> Result<()> {
    write_json(obs, path)
}

/// Reads an observation set from JSON.
pub fn read_observations_json<S: Scalar>(path: &Path) -> Result<ObservationSet<S>> {
    read_json(path)
}

/// Writes any serializable value as pretty-printed JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| parse_err(path, format!("serialize: {e}")))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a JSON artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes a matrix with labeled rows and numbered columns.
pub fn write_matrix_csv<S: Scalar>(
    m: &DMatrix<S>,
    row_label: &str,
    col_prefix: &str,
    path: &Path,
) -> Result<()> {
    let mut w = create(path)?;
    let mut header = String::from(row_label);
    for j in 0..m.ncols() {
        header.push_str(&format!(",{col_prefix}{j}"));
    }
    header.push('\n');
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for i in 0..m.nrows() {
        let mut row = i.to_string();
        for j in 0..m.ncols() {
            row.push(',');
            row.push_str(&fmt_scalar(m[(i, j)]));
        }
        row.push('\n');
        w.write_all(row.as_bytes()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv<S: Scalar>(
    path: &Path,
    row_label: &str,
    col_prefix: &str,
) -> Result<DMatrix<S>> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))?
        .map_err(|e| io_err(path, e))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.is_empty() || cols[0] != row_label {
        return Err(parse_err(
            path,
            format!("header must start with {row_label:?}"),
        ));
    }
    let n_cols = cols.len() - 1;
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("{col_prefix}{j}") {
            return Err(parse_err(path, format!("unexpected column {c:?}")));
        }
    }
    let mut rows: Vec<Vec<S>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = lineno + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != n_cols + 1 {
            return Err(parse_err(
                path,
                format!("line {lineno}: expected {} fields, got {}", n_cols + 1, fields.len()),
            ));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, format!("line {lineno}: bad row index")))?;
        if idx != rows.len() {
            return Err(parse_err(
                path,
                format!("line {lineno}: row index {idx} out of order"),
            ));
        }
        let mut row = Vec::with_capacity(n_cols);
        for f in &fields[1..] {
            row.push(parse_scalar(f, path, lineno)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), n_cols, |i, j| rows[i][j]))
}

/// Metadata half of a persisted PCA basis; the matrix half lives in a
/// labeled-matrix CSV whose column `c0` is the mean and columns `c1..`
/// are the retained basis vectors.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(bound = "")]
struct PcaBasisMeta<S: Scalar> {
    format_version: u32,
    schema: DataSchema,
    n_l: usize,
    energy: f64,
    singular_values: Vec<S>,
}

/// Writes a PCA basis as a JSON + CSV pair.
pub fn write_pca_basis<S: Scalar>(
    basis: &crate::pcaht::PcaBasis<S>,
    meta_path: &Path,
    matrix_path: &Path,
) -> Result<()> {
    let meta = PcaBasisMeta {
        format_version: 1,
        schema: basis.schema().clone(),
        n_l: basis.n_l(),
        energy: basis.energy(),
        singular_values: basis.singular_values().to_vec(),
    };
    write_json(&meta, meta_path)?;
    let n_f = basis.mean().len();
    let mut m = DMatrix::zeros(n_f, 1 + basis.n_l());
    m.column_mut(0).copy_from(basis.mean());
    m.columns_mut(1, basis.n_l()).copy_from(basis.phi());
    write_matrix_csv(&m, "flat_index", "c", matrix_path)
}

/// Reads a PCA basis written by [`write_pca_basis`].
pub fn read_pca_basis<S: Scalar>(
    meta_path: &Path,
    matrix_path: &Path,
) -> Result<crate::pcaht::PcaBasis<S>> {
    let meta: PcaBasisMeta<S> = read_json(meta_path)?;
    if meta.format_version != 1 {
        return Err(parse_err(
            meta_path,
            format!("unsupported basis format version {}", meta.format_version),
        ));
    }
    let m: DMatrix<S> = read_matrix_csv(matrix_path, "flat_index", "c")?;
    if m.ncols() != 1 + meta.n_l || m.nrows() != meta.schema.n_f() {
        return Err(parse_err(
            matrix_path,
            format!(
                "basis matrix is {}x{}, metadata expects {}x{}",
                m.nrows(),
                m.ncols(),
                meta.schema.n_f(),
                1 + meta.n_l
            ),
        ));
    }
    let mean = m.column(0).into_owned();
    let phi = m.columns(1, meta.n_l).into_owned();
    crate::pcaht::PcaBasis::from_parts(meta.schema, mean, phi, meta.singular_values)
        .map_err(|e| parse_err(meta_path, e.to_string()))
}

/// Writes a histogram-transformation table as one labeled-matrix CSV with
/// columns `c0` = Gaussian mean, `c1` = Gaussian std, `c2..` = the sorted
/// prior samples per flattened component.
pub fn write_ht_table<S: Scalar>(
    table: &crate::pcaht::MarginalCdfTable<S>,
    path: &Path,
) -> Result<()> {
    let n_f = table.n_f();
    let n_s = table.n_samples();
    let mut m = DMatrix::zeros(n_f, 2 + n_s);
    m.column_mut(0).copy_from(table.gauss_mean());
    m.column_mut(1).copy_from(table.gauss_std());
    m.columns_mut(2, n_s).copy_from(table.sorted());
    write_matrix_csv(&m, "flat_index", "c", path)
}

/// Reads a table written by [`write_ht_table`].
pub fn read_ht_table<S: Scalar>(path: &Path) -> Result<crate::pcaht::MarginalCdfTable<S>> {
    let m: DMatrix<S> = read_matrix_csv(path, "flat_index", "c")?;
    if m.ncols() < 3 {
        return Err(parse_err(path, "table needs gauss_mean, gauss_std and samples"));
    }
    let gauss_mean = m.column(0).into_owned();
    let gauss_std = m.column(1).into_owned();
    let sorted = m.columns(2, m.ncols() - 2).into_owned();
    crate::pcaht::MarginalCdfTable::from_parts(sorted, gauss_mean, gauss_std)
        .map_err(|e| parse_err(path, e.to_string()))
}

/// Metadata half of persisted autoencoder weights; the parameter vector
/// lives in a labeled-matrix CSV with one `value_0` column, rows in
/// flattening order.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(bound = "")]
struct RaeWeightsMeta<S: Scalar> {
    format_version: u32,
    schema: DataSchema,
    dims: crate::rae::RaeDims,
    norm_min: Vec<S>,
    norm_max: Vec<S>,
}

/// Writes autoencoder weights as a JSON + CSV pair.
pub fn write_rae_weights<S: Scalar>(
    w: &crate::rae::RaeWeights<S>,
    meta_path: &Path,
    params_path: &Path,
) -> Result<()> {
    let meta = RaeWeightsMeta {
        format_version: 1,
        schema: w.schema().clone(),
        dims: *w.dims(),
        norm_min: w.normalization().mins().to_vec(),
        norm_max: w.normalization().maxs().to_vec(),
    };
    write_json(&meta, meta_path)?;
    let flat = w.params().to_flat();
    let m = DMatrix::from_column_slice(flat.len(), 1, flat.as_slice());
    write_matrix_csv(&m, "index", "value_", params_path)
}

/// Reads weights written by [`write_rae_weights`].
pub fn read_rae_weights<S: Scalar>(
    meta_path: &Path,
    params_path: &Path,
) -> Result<crate::rae::RaeWeights<S>> {
    let meta: RaeWeightsMeta<S> = read_json(meta_path)?;
    if meta.format_version != 1 {
        return Err(parse_err(
            meta_path,
            format!("unsupported weights format version {}", meta.format_version),
        ));
    }
    let m: DMatrix<S> = read_matrix_csv(params_path, "index", "value_")?;
    if m.ncols() != 1 || m.nrows() != meta.dims.param_count() {
        return Err(parse_err(
            params_path,
            format!(
                "parameter payload is {}x{}, metadata expects {}x1",
                m.nrows(),
                m.ncols(),
                meta.dims.param_count()
            ),
        ));
    }
    let params = crate::rae::RaeParams::from_flat(&meta.dims, m.as_slice())
        .map_err(|e| parse_err(params_path, e.to_string()))?;
    let norm = crate::rae::Normalization::from_parts(meta.norm_min, meta.norm_max)
        .map_err(|e| parse_err(meta_path, e.to_string()))?;
    crate::rae::RaeWeights::from_parts(meta.schema, meta.dims, params, norm)
        .map_err(|e| parse_err(meta_path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform, DsiRng};
    use std::fs;

    fn sample_ensemble() -> Ensemble<f64> {
        let schema = DataSchema::new(
            vec!["WIR_I1".into(), "WPR_P1".into()],
            vec![30.0, 60.0, 90.0],
        )
        .unwrap();
        let mut rng = DsiRng::from_seed(12);
        let members = (0..3)
            .map(|_| DMatrix::from_fn(2, 3, |_, _| uniform(&mut rng, 0.0, 1000.0)))
            .collect();
        Ensemble::new(schema, members).unwrap()
    }

    #[test]
    fn ensemble_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let e = sample_ensemble();
        write_ensemble_csv(&e, &path).unwrap();
        let back: Ensemble<f64> = read_ensemble_csv(&path).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn ensemble_csv_has_expected_layout_and_digits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_ensemble_csv(&sample_ensemble(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "quantity,time,member_0,member_1,member_2");
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1].starts_with("WIR_I1,30,"));
        assert!(lines[4].starts_with("WPR_P1,30,"));
        // 17 significant digits: d.16 digits before the exponent.
        let first_value = lines[1].split(',').nth(2).unwrap();
        let mantissa = first_value.split('e').next().unwrap();
        let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
        assert!(digits >= 13, "only {digits} digits in {first_value}");
    }

    #[test]
    fn ensemble_csv_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let e = sample_ensemble();
        write_ensemble_csv(&e, &p1).unwrap();
        write_ensemble_csv(&e, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn ensemble_csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        for text in [
            "time,quantity,member_0\n",
            "quantity,time,member_1\nq,1,2\n",
            "quantity,time,member_0\nq,1\n",
            "quantity,time,member_0\nq,1,abc\n",
            "quantity,time,member_0\nq,1,1.0\nr,1,1.0\nq,2,1.0\n",
            "quantity,time,member_0\nq,1,1.0\nr,2,1.0\n",
        ] {
            fs::write(&path, text).unwrap();
            assert!(
                read_ensemble_csv::<f64>(&path).is_err(),
                "accepted malformed file: {text:?}"
            );
        }
    }

    #[test]
    fn missing_file_maps_to_missing_artifact() {
        let err = read_ensemble_csv::<f64>(Path::new("/nonexistent/e.csv")).unwrap_err();
        assert!(matches!(err, DsiError::MissingArtifact(_)));
    }

    #[test]
    fn observations_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.json");
        let obs =
            ObservationSet::new(vec![(0, 5), (6, 17)], vec![480.0, 55.5], vec![48.0, 5.55]).unwrap();
        write_observations_json(&obs, &path).unwrap();
        let back: ObservationSet<f64> = read_observations_json(&path).unwrap();
        assert_eq!(back, obs);
        let text = fs::read_to_string(&path).unwrap();
        for key in ["\"entries\"", "\"values\"", "\"error_std\""] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut rng = DsiRng::from_seed(4);
        let m = DMatrix::from_fn(5, 3, |_, _| uniform(&mut rng, -2.0, 2.0));
        write_matrix_csv(&m, "latent", "member_", &path).unwrap();
        let back: DMatrix<f64> = read_matrix_csv(&path, "latent", "member_").unwrap();
        assert_eq!(back, m);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("latent,member_0,member_1,member_2\n0,"));
    }

    #[test]
    fn f32_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m32.csv");
        let m = DMatrix::<f32>::from_row_slice(2, 2, &[1.5, -0.25, 3.75e-8, 6.0e7]);
        write_matrix_csv(&m, "row", "c", &path).unwrap();
        let back: DMatrix<f32> = read_matrix_csv(&path, "row", "c").unwrap();
        assert_eq!(back, m);
    }

    fn fitted_reduction() -> (crate::pcaht::PcaBasis<f64>, crate::pcaht::MarginalCdfTable<f64>) {
        let e = sample_ensemble();
        let basis =
            crate::pcaht::fit_pca(&e, crate::pcaht::PcaTruncation::Components(2)).unwrap();
        let table = crate::pcaht::fit_ht(&e, &basis).unwrap();
        (basis, table)
    }

    #[test]
    fn pca_basis_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("basis.json");
        let csv = dir.path().join("basis.csv");
        let (basis, _) = fitted_reduction();
        write_pca_basis(&basis, &meta, &csv).unwrap();
        let back: crate::pcaht::PcaBasis<f64> = read_pca_basis(&meta, &csv).unwrap();
        assert_eq!(back, basis);
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("flat_index,c0,c1,c2\n"));
        assert!(fs::read_to_string(&meta).unwrap().contains("\"format_version\": 1"));
    }

    #[test]
    fn pca_basis_rejects_mismatched_payload() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("basis.json");
        let csv = dir.path().join("basis.csv");
        let (basis, _) = fitted_reduction();
        write_pca_basis(&basis, &meta, &csv).unwrap();
        // Drop one payload row: shape no longer matches the metadata.
        let text = fs::read_to_string(&csv).unwrap();
        let truncated: Vec<&str> = text.lines().collect();
        fs::write(&csv, truncated[..truncated.len() - 1].join("\n")).unwrap();
        assert!(read_pca_basis::<f64>(&meta, &csv).is_err());
    }

    #[test]
    fn ht_table_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let (_, table) = fitted_reduction();
        write_ht_table(&table, &path).unwrap();
        let back: crate::pcaht::MarginalCdfTable<f64> = read_ht_table(&path).unwrap();
        assert_eq!(back, table);
        assert!(fs::read_to_string(&path).unwrap().starts_with("flat_index,c0,c1,c2"));
    }

    #[test]
    fn ht_table_rejects_sample_free_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 2.0]);
        write_matrix_csv(&m, "flat_index", "c", &path).unwrap();
        assert!(read_ht_table::<f64>(&path).is_err());
    }

    fn sample_weights() -> crate::rae::RaeWeights<f64> {
        let schema = sample_ensemble().schema().clone();
        let dims = crate::rae::RaeDims { n_qoi: 2, n_t: 3, n_h: 4, n_l: 2 };
        let mut rng = DsiRng::from_seed(77);
        let flat: Vec<f64> =
            (0..dims.param_count()).map(|_| uniform(&mut rng, -0.5, 0.5)).collect();
        let params = crate::rae::RaeParams::from_flat(&dims, &flat).unwrap();
        let norm =
            crate::rae::Normalization::from_parts(vec![0.0, 10.0], vec![900.0, 950.0]).unwrap();
        crate::rae::RaeWeights::from_parts(schema, dims, params, norm).unwrap()
    }

    #[test]
    fn rae_weights_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("weights.json");
        let csv = dir.path().join("weights.csv");
        let w = sample_weights();
        write_rae_weights(&w, &meta, &csv).unwrap();
        let back: crate::rae::RaeWeights<f64> = read_rae_weights(&meta, &csv).unwrap();
        assert_eq!(back, w);
        let meta_text = fs::read_to_string(&meta).unwrap();
        for key in ["\"dims\"", "\"norm_min\"", "\"norm_max\"", "\"schema\""] {
            assert!(meta_text.contains(key), "missing {key}");
        }
        assert!(fs::read_to_string(&csv).unwrap().starts_with("index,value_0\n"));
    }

    #[test]
    fn rae_weights_reject_wrong_parameter_count() {
        let dir = tempfile::tempdir().unwrap();
        let meta = dir.path().join("weights.json");
        let csv = dir.path().join("weights.csv");
        let w = sample_weights();
        write_rae_weights(&w, &meta, &csv).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        let truncated: Vec<&str> = text.lines().collect();
        fs::write(&csv, truncated[..truncated.len() - 1].join("\n")).unwrap();
        assert!(read_rae_weights::<f64>(&meta, &csv).is_err());
    }
}
