//! CSV datasets, prediction files and the text fit report.
//!
//! Numbers are written with 17 significant digits so that reading a written
//! file reproduces every value bit for bit. Files are written to a temporary
//! sibling and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::covkernel::MaternParams;
use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::hfactor::FactorForm;
use crate::loglik::HConfig;
use crate::mle::FitReport;

pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const META_FILE: &str = "meta.txt";
/// Version written on the first line of a fit report.
pub const REPORT_FORMAT: u32 = 1;

/// Formats `v` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Points with optional values, as stored in a CSV file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub locations: Vec<Location>,
    pub values: Option<Vec<f64>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Values, or an error naming `path` when the file had no `z` column.
    pub fn require_values(&self, path: &Path) -> Result<&[f64]> {
        self.values.as_deref().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected header x,y,z".into(),
        })
    }
}

/// A train/test pair with `key = value` metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Table,
    pub test: Table,
    pub meta: Vec<(String, String)>,
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Reads a CSV file with header `x,y` or `x,y,z`.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_err(path, 1, "missing header")),
    };
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let with_z = match cols.as_slice() {
        ["x", "y"] => false,
        ["x", "y", "z"] => true,
        _ => return Err(parse_err(path, 1, format!("expected header x,y or x,y,z, found {}", cols.join(",")))),
    };
    let width = if with_z { 3 } else { 2 };
    let mut table = Table { locations: Vec::new(), values: with_z.then(Vec::new) };
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, found {}", rec.len())));
        }
        let mut v = [0.0; 3];
        for (k, field) in rec.iter().enumerate() {
            v[k] = field
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("invalid number {field:?}")))?;
            if !v[k].is_finite() {
                return Err(parse_err(path, line, format!("non-finite value {field:?}")));
            }
        }
        table.locations.push(Location::new(v[0], v[1]));
        if let Some(z) = table.values.as_mut() {
            z.push(v[2]);
        }
    }
    Ok(table)
}

/// CSV text for `locations` with optional values.
pub fn table_csv(locations: &[Location], values: Option<&[f64]>) -> Result<String> {
    if let Some(z) = values {
        if z.len() != locations.len() {
            return Err(Error::DimensionMismatch { expected: locations.len(), got: z.len() });
        }
    }
    let mut s = String::with_capacity(locations.len() * 72);
    s.push_str(if values.is_some() { "x,y,z\n" } else { "x,y\n" });
    for (i, p) in locations.iter().enumerate() {
        write!(s, "{},{}", fmt_f64(p.x()), fmt_f64(p.y())).unwrap();
        if let Some(z) = values {
            write!(s, ",{}", fmt_f64(z[i])).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_table(path: &Path, locations: &[Location], values: Option<&[f64]>) -> Result<()> {
    write_atomic(path, &table_csv(locations, values)?)
}

/// Writes `contents` to a temporary sibling of `path` and renames it.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = tmp_path(path);
    if let Err(e) = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn parse_kv(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| parse_err(path, i as u64 + 1, "expected key = value"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_text(meta: &[(String, String)]) -> String {
    meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Writes `train.csv`, `test.csv` and `meta.txt` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files = [
        (dir.join(TRAIN_FILE), table_csv(&ds.train.locations, ds.train.values.as_deref())?),
        (dir.join(TEST_FILE), table_csv(&ds.test.locations, ds.test.values.as_deref())?),
        (dir.join(META_FILE), kv_text(&ds.meta)),
    ];
    for (i, (p, c)) in files.iter().enumerate() {
        if let Err(e) = write_atomic(p, c) {
            for (q, _) in &files[..i] {
                let _ = fs::remove_file(q);
            }
            return Err(e);
        }
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let train_path = dir.join(TRAIN_FILE);
    let train = read_table(&train_path)?;
    train.require_values(&train_path)?;
    let test = read_table(&dir.join(TEST_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() { parse_kv(&meta_path, &fs::read_to_string(&meta_path)?)? } else { Vec::new() };
    Ok(Dataset { train, test, meta })
}

/// Parses `a,b,c,d` into four numbers.
pub fn parse_quad(s: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::InvalidInput(format!("expected four comma-separated numbers, got {s:?}")));
    }
    let mut out = [0.0; 4];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| Error::InvalidInput(format!("invalid number {p:?} in {s:?}")))?;
    }
    Ok(out)
}

pub fn params_text(p: &MaternParams) -> String {
    [p.sigma2, p.ell, p.nu, p.tau2].map(fmt_f64).join(",")
}

fn form_name(f: FactorForm) -> &'static str {
    match f {
        FactorForm::Cholesky => "cholesky",
        FactorForm::Ldl => "ldl",
    }
}

/// A fit report as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedFit {
    pub theta_hat: MaternParams,
    pub loglik: f64,
    pub iterations: usize,
    pub n: usize,
    pub h: HConfig,
}

/// Text of a fit report. Wall-clock time is not included so that reports are
/// reproducible byte for byte.
pub fn fit_report_text(report: &FitReport, n: usize, h: &HConfig) -> String {
    let t = &report.theta_hat;
    let mut s = String::new();
    writeln!(s, "# hmle fit report").unwrap();
    let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
    kv("format", REPORT_FORMAT.to_string());
    kv("sigma2", fmt_f64(t.sigma2));
    kv("ell", fmt_f64(t.ell));
    kv("nu", fmt_f64(t.nu));
    kv("tau2", fmt_f64(t.tau2));
    kv("loglik", fmt_f64(report.loglik));
    kv("iterations", report.iterations.to_string());
    kv("evaluations", report.evaluations.to_string());
    kv("converged", report.converged.to_string());
    kv("last_sweep_delta", fmt_f64(report.last_sweep_delta));
    let p = &report.point;
    kv("point", [p.sigma0, p.ell0, p.nu0, p.tau0].map(fmt_f64).join(","));
    kv("n", n.to_string());
    kv("eps", fmt_f64(h.eps));
    kv("eps_f", fmt_f64(h.eps_f()));
    kv("rank", h.rank.map_or("none".into(), |k| k.to_string()));
    kv("form", form_name(h.form).into());
    kv("eta", fmt_f64(h.eta));
    kv("leaf_size", h.leaf_size.to_string());
    writeln!(s, "\n[trace]\niteration,step,sigma0,ell0,nu0,tau0,loglik").unwrap();
    for e in &report.trace {
        let p = &e.point;
        writeln!(
            s,
            "{},{},{},{}",
            e.iteration,
            e.step.name(),
            [p.sigma0, p.ell0, p.nu0, p.tau0].map(fmt_f64).join(","),
            fmt_f64(e.loglik)
        )
        .unwrap();
    }
    s
}

pub fn write_fit_report(path: &Path, report: &FitReport, n: usize, h: &HConfig) -> Result<()> {
    write_atomic(path, &fit_report_text(report, n, h))
}

pub fn read_fit_report(path: &Path) -> Result<SavedFit> {
    let text = fs::read_to_string(path)?;
    let head = text.split("\n[trace]").next().unwrap_or("");
    let kv = parse_kv(path, head)?;
    let get = |k: &str| -> Result<&str> {
        kv.iter()
            .find(|e| e.0 == k)
            .map(|e| e.1.as_str())
            .ok_or_else(|| parse_err(path, 0, format!("missing key {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        let v = get(k)?;
        v.parse().map_err(|_| parse_err(path, 0, format!("invalid value {v:?} for {k}")))
    };
    let int = |k: &str| -> Result<usize> {
        let v = get(k)?;
        v.parse().map_err(|_| parse_err(path, 0, format!("invalid value {v:?} for {k}")))
    };
    if int("format")? != REPORT_FORMAT as usize {
        return Err(parse_err(path, 0, format!("unsupported format {}", get("format")?)));
    }
    let theta_hat = MaternParams::new(num("sigma2")?, num("ell")?, num("nu")?, num("tau2")?)?;
    let form = match get("form")? {
        "ldl" => FactorForm::Ldl,
        "cholesky" => FactorForm::Cholesky,
        f => return Err(parse_err(path, 0, format!("unknown form {f:?}"))),
    };
    let rank = match get("rank")? {
        "none" => None,
        _ => Some(int("rank")?),
    };
    let h = HConfig {
        eps: num("eps")?,
        eps_f: Some(num("eps_f")?),
        form,
        eta: num("eta")?,
        leaf_size: int("leaf_size")?,
        rank,
    };
    h.validate()?;
    Ok(SavedFit { theta_hat, loglik: num("loglik")?, iterations: int("iterations")?, n: int("n")?, h })
}

/// `metric,value` CSV.
pub fn metrics_csv(rows: &[(&str, String)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in rows {
        writeln!(s, "{k},{v}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{uniform_locations, VariateStream};
    use crate::mle::{Coordinate, ReparamPoint, Step, TraceEntry};

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn header_only_and_single_row() {
        let d = tempfile::tempdir().unwrap();
        let t = read_table(&write(d.path(), "a.csv", "x,y,z\n")).unwrap();
        assert!(t.is_empty() && t.values == Some(vec![]));
        let t = read_table(&write(d.path(), "b.csv", "x,y,z\n0.5,0.5,1.0\n")).unwrap();
        assert_eq!(t.locations, vec![Location::new(0.5, 0.5)]);
        assert_eq!(t.values, Some(vec![1.0]));
        let t = read_table(&write(d.path(), "c.csv", "x,y\n0.5,0.25")).unwrap();
        assert_eq!((t.len(), t.values), (1, None));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let d = tempfile::tempdir().unwrap();
        let line = |text: &str| match read_table(&write(d.path(), "e.csv", text)) {
            Err(Error::Parse { line, .. }) => line,
            r => panic!("{r:?}"),
        };
        assert_eq!(line(""), 1);
        assert_eq!(line("a,b\n1,2\n"), 1);
        assert_eq!(line("x,y,z\n1,2,3\n1,2\n"), 3);
        assert_eq!(line("x,y,z\n1,2,3\n4,5,6\n1,zz,3\n"), 4);
        assert_eq!(line("x,y\n1,NaN\n"), 2);
        assert!(matches!(read_table(&d.path().join("missing.csv")), Err(Error::Csv(_) | Error::Io(_))));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = tempfile::tempdir().unwrap();
        let mut s = VariateStream::new(11);
        let l = uniform_locations(1000, &mut s);
        let mut z: Vec<f64> = (0..1000).map(|_| s.normal() * 1e3).collect();
        z[0] = 1e-300;
        z[1] = -0.0;
        let p = d.path().join("r.csv");
        write_table(&p, &l, Some(&z)).unwrap();
        let t = read_table(&p).unwrap();
        assert_eq!(t.locations, l);
        for (a, b) in t.values.unwrap().iter().zip(&z) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(!tmp_path(&p).exists());
    }

    #[test]
    fn dataset_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let ds = Dataset {
            train: Table { locations: vec![Location::new(0.1, 0.2)], values: Some(vec![3.0]) },
            test: Table { locations: vec![Location::new(0.3, 0.4)], values: Some(vec![-1.0]) },
            meta: vec![("seed".into(), "7".into()), ("params".into(), "1,0.1,0.5,0".into())],
        };
        write_dataset(d.path(), &ds).unwrap();
        assert_eq!(read_dataset(d.path()).unwrap(), ds);
    }

    #[test]
    fn fit_report_round_trip() {
        let theta = MaternParams::new(1.5, 0.0632, 1.5, 1e-9).unwrap();
        let point = ReparamPoint::default();
        let report = FitReport {
            theta_hat: theta,
            point,
            loglik: 1426.05,
            iterations: 12,
            evaluations: 180,
            converged: true,
            last_sweep_delta: 3e-5,
            trace: vec![
                TraceEntry { iteration: 0, step: Step::Initial, point, loglik: 900.0 },
                TraceEntry { iteration: 1, step: Step::Axis(Coordinate::Sigma), point, loglik: 950.0 },
            ],
            seconds: 1.0,
        };
        let h = HConfig { rank: Some(12), ..HConfig::with_eps(1e-5) };
        let text = fit_report_text(&report, 2048, &h);
        assert!(text.starts_with("# hmle fit report\nformat = 1\n"));
        assert!(text.contains("\n1,sigma0,"));
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("fit.txt");
        write_fit_report(&p, &report, 2048, &h).unwrap();
        let s = read_fit_report(&p).unwrap();
        assert_eq!(s.theta_hat, theta);
        assert_eq!((s.loglik, s.iterations, s.n), (1426.05, 12, 2048));
        assert_eq!(s.h, HConfig { eps_f: Some(1e-5), ..h });
        let bad = write(d.path(), "bad.txt", &text.replace("format = 1", "format = 9"));
        assert!(read_fit_report(&bad).is_err());
    }

    #[test]
    fn quad_parsing() {
        assert_eq!(parse_quad("1, 0.1,0.5,0").unwrap(), [1.0, 0.1, 0.5, 0.0]);
        assert!(parse_quad("1,2,3").is_err());
        assert!(parse_quad("1,2,x,4").is_err());
    }
}
