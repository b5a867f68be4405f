//! On-disk formats.
//!
//! A calibrator bundle is a directory holding `bundle.json` (metadata) and
//! `bundle.bin` (the partition and calibration values, little-endian).
//! The blob starts with a magic tag and the format version, and the
//! metadata records a checksum of the blob. Tabular data is CSV with a
//! header; floats are written in shortest round-trip form.

use std::fs::{self, File};
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::baselines::mc::McCalibrator;
use crate::calibration::{LocalCalibration, Method, SimulatedSet, TrustCalibrator, TrustPpCalibrator, TuneResult};
use crate::error::{Error, Result};
use crate::models::{Dataset, ModelSpec};
use crate::statistics::{PosteriorEngine, StatisticKind};

pub const BUNDLE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TRCB";
const META_FILE: &str = "bundle.json";
const BLOB_FILE: &str = "bundle.bin";

/// A fitted local calibrator.
#[derive(Debug, Clone, PartialEq)]
pub enum Calibrator {
    Trust(TrustCalibrator),
    TrustPp(TrustPpCalibrator),
    Mc(McCalibrator),
}

impl Calibrator {
    pub fn as_local(&self) -> &dyn LocalCalibration {
        match self {
            Calibrator::Trust(c) => c,
            Calibrator::TrustPp(c) => c,
            Calibrator::Mc(c) => c,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Calibrator::Trust(_) => 0,
            Calibrator::TrustPp(_) => 1,
            Calibrator::Mc(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub version: u32,
    pub method: Method,
    pub model: ModelSpec,
    pub statistic: StatisticKind,
    pub engine: Option<PosteriorEngine>,
    /// Dataset size the statistics were simulated at.
    pub n: usize,
    /// Number of calibration simulations.
    pub b: usize,
    pub seed: u64,
    pub split: bool,
    pub n_trees: Option<usize>,
    pub m: Option<usize>,
    pub tune: Option<TuneResult>,
    /// FNV-1a hash of the blob.
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub meta: BundleMeta,
    pub calibrator: Calibrator,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Bundle {
    /// Builds the metadata (with checksum) around a calibrator.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        calibrator: Calibrator,
        model: &ModelSpec,
        statistic: StatisticKind,
        engine: Option<PosteriorEngine>,
        n: usize,
        b: usize,
        seed: u64,
        split: bool,
        tune: Option<TuneResult>,
    ) -> Self {
        let (n_trees, m) = match &calibrator {
            Calibrator::TrustPp(c) => (Some(c.forest().n_trees()), Some(c.m())),
            _ => (None, None),
        };
        let mut bundle = Bundle {
            meta: BundleMeta {
                version: BUNDLE_VERSION,
                method: calibrator.as_local().method(),
                model: model.clone(),
                statistic,
                engine,
                n,
                b,
                seed,
                split,
                n_trees,
                m,
                tune,
                checksum: 0,
            },
            calibrator,
        };
        bundle.meta.checksum = fnv1a(&bundle.blob());
        bundle
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_blob(&mut out).expect("writing to memory cannot fail");
        out
    }

    fn write_blob(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(BUNDLE_VERSION)?;
        w.write_u8(self.calibrator.tag())?;
        match &self.calibrator {
            Calibrator::Trust(c) => c.write_to(w),
            Calibrator::TrustPp(c) => c.write_to(w),
            Calibrator::Mc(c) => c.write_to(w),
        }
    }

    fn read_blob(bytes: &[u8]) -> Result<Calibrator> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::IncompatibleBundle("blob too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::IncompatibleBundle("not a calibrator blob".into()));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::IncompatibleBundle("blob too short".into()))?;
        if version != BUNDLE_VERSION {
            return Err(Error::IncompatibleBundle(format!(
                "blob version {version}, this build reads version {BUNDLE_VERSION}"
            )));
        }
        let tag = r.read_u8().map_err(|_| Error::IncompatibleBundle("blob too short".into()))?;
        let cal = match tag {
            0 => Calibrator::Trust(TrustCalibrator::read_from(&mut r)?),
            1 => Calibrator::TrustPp(TrustPpCalibrator::read_from(&mut r)?),
            2 => Calibrator::Mc(McCalibrator::read_from(&mut r)?),
            other => return Err(Error::IncompatibleBundle(format!("unknown calibrator tag {other}"))),
        };
        if (r.position() as usize) != bytes.len() {
            return Err(Error::IncompatibleBundle("trailing bytes after calibrator".into()));
        }
        Ok(cal)
    }

    /// Writes `bundle.json` and `bundle.bin` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        let meta_path = dir.join(META_FILE);
        fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, self.blob()).map_err(|e| Error::io(&blob_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let version: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e))?;
        match version.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == BUNDLE_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::IncompatibleBundle(format!(
                    "metadata version {v}, this build reads version {BUNDLE_VERSION}"
                )))
            }
            None => return Err(Error::IncompatibleBundle("metadata has no version field".into())),
        }
        let meta: BundleMeta = serde_json::from_value(version).map_err(|e| Error::parse(&meta_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if fnv1a(&bytes) != meta.checksum {
            return Err(Error::IncompatibleBundle("blob checksum does not match metadata".into()));
        }
        let calibrator = Self::read_blob(&bytes)?;
        Ok(Bundle { meta, calibrator })
    }

    /// Checks that the bundle was fitted for this model and statistic.
    pub fn check_compatible(&self, model: &ModelSpec, statistic: StatisticKind, engine: Option<PosteriorEngine>) -> Result<()> {
        if &self.meta.model != model {
            return Err(Error::SchemaMismatch(format!(
                "bundle was fitted for model `{}` with different settings",
                self.meta.model.name
            )));
        }
        if self.meta.statistic != statistic || self.meta.engine != engine {
            return Err(Error::SchemaMismatch(format!(
                "bundle was fitted with statistic `{}`, config asks for `{statistic}`",
                self.meta.statistic
            )));
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v}")
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(path, format!("line {line}: `{s}`: {e}")))
}

pub fn simulated_set_header(model: &ModelSpec, n: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..model.dim()).map(|k| format!("theta_{k}")).collect();
    for i in 0..n {
        for j in 0..model.obs_dim() {
            h.push(format!("x_{i}_{j}"));
        }
    }
    h.push("tau".into());
    h
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// Writes `(theta, x, tau)` rows.
pub fn write_simulated_set(path: &Path, set: &SimulatedSet, model: &ModelSpec) -> Result<()> {
    let n = set.data.first().map_or(0, Dataset::n);
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(simulated_set_header(model, n)).map_err(&err)?;
    for ((theta, x), &tau) in set.thetas.iter().zip(&set.data).zip(&set.tau) {
        let row: Vec<String> = theta
            .iter()
            .chain(x.values())
            .chain(std::iter::once(&tau))
            .map(|&v| fmt_f64(v))
            .collect();
        w.write_record(row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a simulated set, checking that its header matches `model` and `n`.
pub fn read_simulated_set(path: &Path, model: &ModelSpec, n: usize) -> Result<SimulatedSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let err = csv_err(path);
    let header: Vec<String> = r.headers().map_err(&err)?.iter().map(str::to_string).collect();
    let expected = simulated_set_header(model, n);
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "{}: header has {} columns, model `{}` with n = {n} expects {} ({} ...)",
            path.display(),
            header.len(),
            model.name,
            expected.len(),
            expected.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    let d = model.dim();
    let (mut thetas, mut data, mut tau) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(&err)?;
        let values = rec
            .iter()
            .map(|s| parse_f64(s, path, line + 2))
            .collect::<Result<Vec<f64>>>()?;
        let theta = values[..d].to_vec();
        model.check_theta(&theta)?;
        thetas.push(theta);
        data.push(Dataset::new(n, model.obs_dim(), values[d..values.len() - 1].to_vec())?);
        tau.push(values[values.len() - 1]);
    }
    if tau.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    Ok(SimulatedSet { thetas, data, tau })
}

/// Reads observed data: one row per observation, columns `x_0 .. x_{p-1}`.
pub fn read_observations(path: &Path, model: &ModelSpec) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let err = csv_err(path);
    let header: Vec<String> = r.headers().map_err(&err)?.iter().map(str::to_string).collect();
    let expected: Vec<String> = (0..model.obs_dim()).map(|j| format!("x_{j}")).collect();
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            expected.join(","),
            header.join(",")
        )));
    }
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        for s in rec.map_err(&err)?.iter() {
            values.push(parse_f64(s, path, line + 2)?);
        }
    }
    Dataset::new(values.len() / model.obs_dim(), model.obs_dim(), values)
}

pub fn write_observations(path: &Path, x: &Dataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record((0..x.p()).map(|j| format!("x_{j}"))).map_err(&err)?;
    for i in 0..x.n() {
        w.write_record(x.row(i).iter().map(|&v| fmt_f64(v))).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes rows of numbers and strings under a header.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(header).map_err(&err)?;
    for row in rows {
        w.write_record(row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serializes records with a header derived from their fields.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    for r in records {
        w.serialize(r).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let err = csv_err(path);
    r.deserialize().map(|rec| rec.map_err(&err)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn format_value(v: f64) -> String {
    fmt_f64(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 5e300, f64::NEG_INFINITY, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn checksum_is_fnv1a() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
