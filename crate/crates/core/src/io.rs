//! File formats: trajectory CSV/JSON, system and realization JSON, and the
//! number formatting shared by every writer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Result, SysIdError};
use crate::hokalman::Realization;
use crate::lti::{ObsNoise, SystemParams, Trajectory};

/// `%.17g`: 17 significant digits, exponent form outside `[1e-5, 1e17)`.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        strip_zeros(format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa.to_string()), exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Row-major nested list.
pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &Rows, name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(SysIdError::Config {
            path: name.into(),
            message: "matrix must be non-empty".into(),
        });
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(SysIdError::Config {
            path: format!("{name}[{i}]"),
            message: format!("ragged matrix: expected {ncols} columns, got {}", rows[i].len()),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObsNoiseSpec {
    /// Variance of the isotropic noise.
    Isotropic(f64),
    Full(Rows),
}

/// JSON form of [`SystemParams`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub process_noise: Rows,
    pub obs_noise: ObsNoiseSpec,
    pub input_cov: Rows,
}

impl SystemSpec {
    pub fn from_system(s: &SystemParams) -> Self {
        Self {
            a: matrix_to_rows(&s.a),
            b: matrix_to_rows(&s.b),
            c: matrix_to_rows(&s.c),
            process_noise: matrix_to_rows(&s.sigma_w),
            obs_noise: match &s.obs_noise {
                ObsNoise::Isotropic(v) => ObsNoiseSpec::Isotropic(*v),
                ObsNoise::Full(m) => ObsNoiseSpec::Full(matrix_to_rows(m)),
            },
            input_cov: matrix_to_rows(&s.sigma_u),
        }
    }

    pub fn to_system(&self) -> Result<SystemParams> {
        let obs_noise = match &self.obs_noise {
            ObsNoiseSpec::Isotropic(v) => ObsNoise::Isotropic(*v),
            ObsNoiseSpec::Full(rows) => ObsNoise::Full(rows_to_matrix(rows, "obs_noise.full")?),
        };
        SystemParams::new(
            rows_to_matrix(&self.a, "a")?,
            rows_to_matrix(&self.b, "b")?,
            rows_to_matrix(&self.c, "c")?,
            rows_to_matrix(&self.process_noise, "process_noise")?,
            obs_noise,
            rows_to_matrix(&self.input_cov, "input_cov")?,
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RealizationSpec {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub input_dim: usize,
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
}

impl From<&Realization> for RealizationSpec {
    fn from(r: &Realization) -> Self {
        Self {
            latent_dim: r.latent_dim(),
            obs_dim: r.obs_dim(),
            input_dim: r.input_dim(),
            a: matrix_to_rows(&r.a),
            b: matrix_to_rows(&r.b),
            c: matrix_to_rows(&r.c),
        }
    }
}

/// JSON form of a [`Trajectory`]; one inner list per time step.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub inputs: Rows,
    pub observations: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latents: Option<Rows>,
}

fn columns_to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect()
}

impl TrajectorySpec {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            inputs: columns_to_rows(t.inputs()),
            observations: columns_to_rows(t.observations()),
            latents: t.latents().map(columns_to_rows),
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let transpose = |rows: &Rows, name: &str| rows_to_matrix(rows, name).map(|m| m.transpose());
        let latents = self.latents.as_ref().map(|l| transpose(l, "latents")).transpose()?;
        Trajectory::new(
            transpose(&self.inputs, "inputs")?,
            transpose(&self.observations, "observations")?,
            latents,
        )
    }
}

/// Parses JSON, reporting the failing field path.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| SysIdError::Config {
        path: match e.path().to_string() {
            p if p == "." => "<root>".into(),
            p => p,
        },
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SysIdError::Io(format!("{}: {e}", path.display())))?;
    from_json_str(&text)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| SysIdError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(SysIdError::Io(format!("{}: {e}", path.display())));
    }
    Ok(())
}

/// Compact JSON whose floats carry 17 significant digits; non-finite values
/// become `null`.
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            writer.write_all(format_f64(value).as_bytes())
        } else {
            writer.write_all(b"null")
        }
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    value.serialize(&mut ser).map_err(|e| SysIdError::Io(e.to_string()))?;
    let mut text = String::from_utf8(buf).map_err(|e| SysIdError::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

/// Header `t,u_0..u_{m-1},y_0..y_{n-1}`; the final row (`t = T`) leaves the
/// input cells empty.
pub fn trajectory_csv_string(t: &Trajectory) -> String {
    let (m, n, len) = (t.input_dim(), t.obs_dim(), t.len());
    let mut out = String::new();
    out.push('t');
    for k in 0..m {
        out.push_str(&format!(",u_{k}"));
    }
    for k in 0..n {
        out.push_str(&format!(",y_{k}"));
    }
    out.push('\n');
    for step in 0..=len {
        out.push_str(&step.to_string());
        for k in 0..m {
            out.push(',');
            if step < len {
                out.push_str(&format_f64(t.inputs()[(k, step)]));
            }
        }
        for k in 0..n {
            out.push(',');
            out.push_str(&format_f64(t.observations()[(k, step)]));
        }
        out.push('\n');
    }
    out
}

pub fn emit_trajectory_csv(t: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, trajectory_csv_string(t).as_bytes())
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let bad = |msg: String| SysIdError::Parse { row: 0, message: msg };
    let cells: Vec<&str> = header.iter().map(str::trim).collect();
    if cells.first() != Some(&"t") {
        return Err(bad("header must start with `t`".into()));
    }
    let m = cells[1..].iter().take_while(|c| c.starts_with("u_")).count();
    let n = cells.len() - 1 - m;
    for (k, cell) in cells[1..=m].iter().enumerate() {
        if *cell != format!("u_{k}") {
            return Err(bad(format!("expected `u_{k}`, found `{cell}`")));
        }
    }
    for (k, cell) in cells[1 + m..].iter().enumerate() {
        if *cell != format!("y_{k}") {
            return Err(bad(format!("expected `y_{k}`, found `{cell}`")));
        }
    }
    if m == 0 || n == 0 {
        return Err(bad(format!("header needs input and observation columns (found m={m}, n={n})")));
    }
    Ok((m, n))
}

/// Parses the CSV layout written by [`emit_trajectory_csv`]. Row numbers in
/// errors count data rows from 0 (i.e. they equal `t`).
pub fn parse_trajectory_csv<R: Read>(reader: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| SysIdError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let (m, n) = parse_header(&header)?;
    let width = 1 + m + n;

    let mut inputs: Vec<f64> = Vec::new();
    let mut observations: Vec<f64> = Vec::new();
    let mut input_rows = 0usize;
    let mut obs_rows = 0usize;
    let mut saw_final = false;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| SysIdError::Parse {
            row,
            message: e.to_string(),
        })?;
        let err = |message: String| SysIdError::Parse { row, message };
        if record.len() != width {
            return Err(err(format!("ragged row: expected {width} cells, got {}", record.len())));
        }
        if saw_final {
            return Err(err(format!(
                "row follows a row without inputs; only the final row may omit inputs (row {} is missing inputs)",
                row - 1
            )));
        }
        let num = |cell: &str, col: &str| -> Result<f64> {
            cell.parse::<f64>()
                .map_err(|_| err(format!("non-numeric cell `{cell}` in column `{col}`")))
        };
        let t: usize = record[0]
            .parse()
            .map_err(|_| err(format!("non-integer time index `{}`", &record[0])))?;
        if t != row {
            return Err(err(format!("time index {t} out of sequence")));
        }
        let input_cells: Vec<&str> = (1..=m).map(|k| &record[k]).collect();
        if input_cells.iter().all(|c| c.is_empty()) {
            saw_final = true;
        } else {
            for (k, cell) in input_cells.iter().enumerate() {
                if cell.is_empty() {
                    return Err(err(format!("missing input cell u_{k}")));
                }
                inputs.push(num(cell, &header[1 + k])?);
            }
            input_rows += 1;
        }
        for k in 0..n {
            let cell = &record[1 + m + k];
            if cell.is_empty() {
                return Err(err(format!("missing observation cell y_{k}")));
            }
            observations.push(num(cell, &header[1 + m + k])?);
        }
        obs_rows += 1;
    }
    if !saw_final {
        return Err(SysIdError::Parse {
            row: obs_rows,
            message: format!(
                "final row must leave inputs empty: found {obs_rows} observation rows and {input_rows} input rows"
            ),
        });
    }
    if input_rows == 0 {
        return Err(SysIdError::Parse {
            row: 0,
            message: "trajectory needs at least one input row".into(),
        });
    }
    Trajectory::new(
        DMatrix::from_column_slice(m, input_rows, &inputs),
        DMatrix::from_column_slice(n, obs_rows, &observations),
        None,
    )
}

pub fn ingest_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let file = fs::File::open(path).map_err(|e| SysIdError::Io(format!("{}: {e}", path.display())))?;
    parse_trajectory_csv(file)
}

/// Writes a basis (or any matrix) as CSV with header `c_0..c_{q-1}`.
/// Loads a trajectory from `.json` ([`TrajectorySpec`]) or CSV.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_json::<TrajectorySpec>(path)?.to_trajectory()
    } else {
        ingest_trajectory_csv(path)
    }
}

/// Writes `.json` paths as [`TrajectorySpec`], anything else as CSV.
pub fn write_trajectory(t: &Trajectory, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        write_json(path, &TrajectorySpec::from_trajectory(t))
    } else {
        emit_trajectory_csv(t, path)
    }
}

pub fn matrix_csv_string(m: &DMatrix<f64>) -> String {
    let mut out = (0..m.ncols()).map(|k| format!("c_{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_floats_use_seventeen_digits() {
        let text = to_json_string(&vec![0.1, 2.0, f64::NAN]).unwrap();
        assert_eq!(text, "[0.10000000000000001,2,null]\n");
        let back: Vec<Option<f64>> = from_json_str(&text).unwrap();
        assert_eq!(back[0], Some(0.1));
    }

    #[test]
    fn seventeen_digit_format() {
        assert_eq!(format_f64(0.1), "0.10000000000000001");
        assert_eq!(format_f64(1.0), "1");
        assert_eq!(format_f64(-2.5), "-2.5");
        assert_eq!(format_f64(1e-300), "1e-300");
        assert_eq!(format_f64(6.02e23), "6.02e+23");
        assert_eq!(format_f64(123456.0), "123456");
        assert_eq!(format_f64(f64::NAN), "NaN");
        for v in [0.1, 1.0 / 3.0, -7.25e-7, 6.02e23, f64::MIN_POSITIVE, 0.9f64.powi(40)] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_final_row_has_no_inputs() {
        let t = Trajectory::new(
            DMatrix::from_row_slice(1, 2, &[0.5, -1.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            None,
        )
        .unwrap();
        let text = trajectory_csv_string(&t);
        assert_eq!(text, "t,u_0,y_0,y_1\n0,0.5,1,4\n1,-1,2,5\n2,,3,6\n");
        assert_eq!(parse_trajectory_csv(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn csv_errors_name_rows() {
        let missing_last_input = "t,u_0,y_0\n0,1,0\n1,,1\n2,,2\n";
        match parse_trajectory_csv(missing_last_input.as_bytes()) {
            Err(SysIdError::Parse { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("row 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let no_final = "t,u_0,y_0\n0,1,0\n1,1,1\n";
        assert!(matches!(parse_trajectory_csv(no_final.as_bytes()), Err(SysIdError::Parse { row: 2, .. })));
        let ragged = "t,u_0,y_0\n0,1\n";
        assert!(matches!(parse_trajectory_csv(ragged.as_bytes()), Err(SysIdError::Parse { row: 0, .. })));
        let nonnum = "t,u_0,y_0\n0,1,abc\n1,,2\n";
        assert!(matches!(parse_trajectory_csv(nonnum.as_bytes()), Err(SysIdError::Parse { row: 0, .. })));
        let header = "t,y_0,u_0\n0,1,2\n";
        assert!(matches!(parse_trajectory_csv(header.as_bytes()), Err(SysIdError::Parse { row: 0, .. })));
    }

    #[test]
    fn json_errors_carry_paths() {
        let err = from_json_str::<SystemSpec>(r#"{"a": [[1.0]], "b": [["x"]]}"#).unwrap_err();
        match err {
            SysIdError::Config { path, .. } => assert!(path.starts_with("b"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn system_spec_round_trip() {
        let sys = SystemParams::noiseless(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.2]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        let spec = SystemSpec::from_system(&sys);
        let text = serde_json::to_string(&spec).unwrap();
        let back: SystemSpec = from_json_str(&text).unwrap();
        assert_eq!(back.to_system().unwrap(), sys);
    }
}
