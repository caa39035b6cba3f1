//! Unbiased, almost-surely bounded stochastic samples `Ã_t` of a covariance
//! model, and a reader for real data points stored as CSV rows.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CovarianceModel;
use crate::rng::{rng_for, Purpose, Rng};

/// One stochastic matrix sample.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleUpdate {
    /// `Ã = x xᵀ`.
    RankOne(DVector<f64>),
    /// A symmetric PSD matrix.
    Dense(DMatrix<f64>),
}

impl SampleUpdate {
    pub fn dim(&self) -> usize {
        match self {
            SampleUpdate::RankOne(x) => x.len(),
            SampleUpdate::Dense(m) => m.nrows(),
        }
    }

    /// `Ã w`.
    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        match self {
            SampleUpdate::RankOne(x) => x * x.dot(w),
            SampleUpdate::Dense(m) => m * w,
        }
    }

    /// `wᵀ Ã w`.
    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        match self {
            SampleUpdate::RankOne(x) => {
                let c = x.dot(w);
                c * c
            }
            SampleUpdate::Dense(m) => w.dot(&(m * w)),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SampleUpdate::RankOne(x) => x * x.transpose(),
            SampleUpdate::Dense(m) => m.clone(),
        }
    }
}

/// A source of samples. Built-in generators never run out; file streams
/// return `Ok(None)` at end of file.
pub trait SampleStream {
    fn dim(&self) -> usize;

    /// Next sample, borrowed from an internal buffer that the following call
    /// overwrites.
    fn next_sample(&mut self) -> Result<Option<&SampleUpdate>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// `x = Σ σ_i √s_i u_i` with independent signs σ_i.
    Rademacher,
    /// `x = √tr(A) u_i` with `i` drawn with probability `s_i / tr(A)`.
    #[serde(alias = "eigenbasis-categorical", alias = "eigenbasis_categorical")]
    Eigenbasis,
    /// `Ã_t = A` every step: the noiseless power method.
    Exact,
    /// Rows of a CSV file.
    File,
}

/// Stream description as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub kind: StreamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Required for file streams, optional override otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_b: Option<f64>,
}

impl StreamSpec {
    pub fn new(kind: StreamKind) -> Self {
        Self {
            kind,
            path: None,
            declared_b: None,
        }
    }
}

/// Smallest certified `b` with `‖Ã‖/‖A‖ ≤ b` and `‖Ã − A‖/‖A‖ ≤ b`.
///
/// Both random generators emit samples of spectral norm exactly `tr(A)`, so
/// `‖Ã − A‖ ≤ tr(A) + s₁` and `b = tr(A)/s₁ + 1`. The exact stream has
/// `b = 1`. File streams carry a user-declared value. A declared value for a
/// built-in generator must not undercut the certified one.
pub fn bound_b(spec: &StreamSpec, model: &CovarianceModel) -> Result<f64> {
    let certified = match spec.kind {
        StreamKind::Rademacher | StreamKind::Eigenbasis => model.trace() / model.norm() + 1.0,
        StreamKind::Exact => 1.0,
        StreamKind::File => {
            let b = spec.declared_b.ok_or(Error::MissingBound)?;
            if !(b >= 1.0 && b.is_finite()) {
                return Err(Error::InvalidParameter(format!("declared b = {b} must be >= 1")));
            }
            return Ok(b);
        }
    };
    match spec.declared_b {
        Some(b) if b < certified => Err(Error::InvalidParameter(format!(
            "declared b = {b} is below the certified bound {certified}"
        ))),
        Some(b) => Ok(b),
        None => Ok(certified),
    }
}

/// Fills `x` with one Rademacher factor for `model`.
pub fn sample_rademacher(
    model: &CovarianceModel,
    sqrt_spectrum: &[f64],
    rng: &mut impl RngCore,
    coords: &mut DVector<f64>,
    x: &mut DVector<f64>,
) {
    let mut bits = 0_u64;
    for (i, (c, root)) in coords.iter_mut().zip(sqrt_spectrum).enumerate() {
        if i % 64 == 0 {
            bits = rng.next_u64();
        }
        *c = if bits & 1 == 1 { *root } else { -*root };
        bits >>= 1;
    }
    match model.basis() {
        Some(u) => u.mul_to(coords, x),
        None => x.copy_from(coords),
    }
}

/// Index `i` with probability `s_i / tr(A)`, via the cumulative spectrum.
pub fn sample_eigen_index(cumulative: &[f64], rng: &mut impl RngCore) -> usize {
    let total = *cumulative.last().expect("non-empty spectrum");
    let target = rng.random::<f64>() * total;
    cumulative
        .partition_point(|&c| c <= target)
        .min(cumulative.len() - 1)
}

pub struct RademacherStream<'a> {
    model: &'a CovarianceModel,
    sqrt_spectrum: Vec<f64>,
    coords: DVector<f64>,
    current: SampleUpdate,
    rng: Rng,
}

impl<'a> RademacherStream<'a> {
    pub fn new(model: &'a CovarianceModel, rng: Rng) -> Self {
        let d = model.dim();
        Self {
            model,
            sqrt_spectrum: model.spectrum().iter().map(|s| s.sqrt()).collect(),
            coords: DVector::zeros(d),
            current: SampleUpdate::RankOne(DVector::zeros(d)),
            rng,
        }
    }
}

impl SampleStream for RademacherStream<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn next_sample(&mut self) -> Result<Option<&SampleUpdate>> {
        let SampleUpdate::RankOne(x) = &mut self.current else {
            unreachable!("rademacher buffer is rank-one")
        };
        sample_rademacher(self.model, &self.sqrt_spectrum, &mut self.rng, &mut self.coords, x);
        Ok(Some(&self.current))
    }
}

pub struct EigenbasisStream<'a> {
    model: &'a CovarianceModel,
    cumulative: Vec<f64>,
    scale: f64,
    current: SampleUpdate,
    rng: Rng,
}

impl<'a> EigenbasisStream<'a> {
    pub fn new(model: &'a CovarianceModel, rng: Rng) -> Self {
        let cumulative = model
            .spectrum()
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        Self {
            model,
            cumulative,
            scale: model.trace().sqrt(),
            current: SampleUpdate::RankOne(DVector::zeros(model.dim())),
            rng,
        }
    }
}

impl SampleStream for EigenbasisStream<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn next_sample(&mut self) -> Result<Option<&SampleUpdate>> {
        let i = sample_eigen_index(&self.cumulative, &mut self.rng);
        let SampleUpdate::RankOne(x) = &mut self.current else {
            unreachable!("eigenbasis buffer is rank-one")
        };
        match self.model.basis() {
            Some(u) => x.copy_from(&u.column(i)),
            None => {
                x.fill(0.0);
                x[i] = 1.0;
            }
        }
        *x *= self.scale;
        Ok(Some(&self.current))
    }
}

/// Emits `A` itself on every call.
pub struct ExactStream {
    current: SampleUpdate,
}

impl ExactStream {
    pub fn new(model: &CovarianceModel) -> Self {
        Self {
            current: SampleUpdate::Dense(model.dense()),
        }
    }
}

impl SampleStream for ExactStream {
    fn dim(&self) -> usize {
        self.current.dim()
    }

    fn next_sample(&mut self) -> Result<Option<&SampleUpdate>> {
        Ok(Some(&self.current))
    }
}

/// Parses one CSV data row into `out`.
fn parse_row(line: &str, out: &mut DVector<f64>, path: &Path, line_no: usize) -> Result<()> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let mut n = 0;
    for field in line.split(',') {
        if n == out.len() {
            let found = line.split(',').count();
            return Err(err(format!("expected {} columns, found {found}", out.len())));
        }
        let value: f64 = field
            .trim()
            .parse()
            .map_err(|_| err(format!("'{}' is not a number", field.trim())))?;
        if !value.is_finite() {
            return Err(err(format!("non-finite value '{}'", field.trim())));
        }
        out[n] = value;
        n += 1;
    }
    if n != out.len() {
        return Err(err(format!("expected {} columns, found {n}", out.len())));
    }
    Ok(())
}

/// Single-pass reader of data points `x_t`, yielding `x_t x_tᵀ`.
///
/// Rows are `d` comma-separated decimals, no header, LF or CRLF endings.
/// Blank lines are skipped.
pub struct FileStream {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    rows: u64,
    max_sq_norm: f64,
    current: SampleUpdate,
}

impl FileStream {
    pub fn open(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            lines: BufReader::new(file).lines(),
            line_no: 0,
            rows: 0,
            max_sq_norm: 0.0,
            current: SampleUpdate::RankOne(DVector::zeros(dim)),
        })
    }

    /// Rows consumed so far.
    pub fn rows(&self) -> u64 {
        self.rows
    }

    /// Running max of ‖x_t‖², i.e. of ‖Ã_t‖. Zero before the first row.
    pub fn max_sq_norm(&self) -> f64 {
        self.max_sq_norm
    }
}

impl SampleStream for FileStream {
    fn dim(&self) -> usize {
        self.current.dim()
    }

    fn next_sample(&mut self) -> Result<Option<&SampleUpdate>> {
        loop {
            let Some(line) = self.lines.next() else {
                return Ok(None);
            };
            self.line_no += 1;
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let SampleUpdate::RankOne(x) = &mut self.current else {
                unreachable!("file buffer is rank-one")
            };
            parse_row(line, x, &self.path, self.line_no)?;
            self.rows += 1;
            self.max_sq_norm = self.max_sq_norm.max(x.norm_squared());
            return Ok(Some(&self.current));
        }
    }
}

/// Opens a data file as a stream of rank-one updates.
pub fn ingest_stream(path: impl AsRef<Path>, dim: usize) -> Result<FileStream> {
    FileStream::open(path, dim)
}

/// One full pass over a data file.
#[derive(Debug, Clone)]
pub struct FileSummary {
    pub rows: u64,
    pub max_sq_norm: f64,
    /// Empirical second moment `(1/n) Σ x_t x_tᵀ`; zero for an empty file.
    pub second_moment: DMatrix<f64>,
}

impl FileSummary {
    /// A-posteriori noise bound `max‖x_t‖²/‖Â‖ + 1` against the empirical
    /// second moment `Â`. `None` when the file is empty or `Â = 0`.
    pub fn observed_b(&self) -> Result<Option<f64>> {
        if self.rows == 0 {
            return Ok(None);
        }
        let top = crate::model::leading_eigenpair_dense(&self.second_moment)?.value;
        Ok((top > 0.0).then(|| self.max_sq_norm / top + 1.0))
    }
}

/// Reads a data file once, accumulating its second-moment matrix.
pub fn scan_file(path: impl AsRef<Path>, dim: usize) -> Result<FileSummary> {
    let mut stream = FileStream::open(path, dim)?;
    let mut acc = DMatrix::<f64>::zeros(dim, dim);
    while let Some(sample) = stream.next_sample()? {
        if let SampleUpdate::RankOne(x) = sample {
            acc.ger(1.0, x, x, 1.0);
        }
    }
    let rows = stream.rows();
    if rows > 0 {
        acc /= rows as f64;
    }
    Ok(FileSummary {
        rows,
        max_sq_norm: stream.max_sq_norm(),
        second_moment: acc,
    })
}

/// Any of the stream kinds behind one type.
pub enum AnyStream<'a> {
    Rademacher(RademacherStream<'a>),
    Eigenbasis(EigenbasisStream<'a>),
    Exact(ExactStream),
    File(FileStream),
}

impl<'a> AnyStream<'a> {
    /// Opens the stream described by `spec`. `seed` keys the random
    /// generators and is ignored by the exact and file kinds.
    pub fn open(spec: &StreamSpec, model: &'a CovarianceModel, seed: u64) -> Result<Self> {
        Self::open_with(spec, model, rng_for(seed, Purpose::Samples))
    }

    /// As [`AnyStream::open`] with an explicit generator.
    pub fn open_with(spec: &StreamSpec, model: &'a CovarianceModel, rng: Rng) -> Result<Self> {
        Ok(match spec.kind {
            StreamKind::Rademacher => AnyStream::Rademacher(RademacherStream::new(model, rng)),
            StreamKind::Eigenbasis => AnyStream::Eigenbasis(EigenbasisStream::new(model, rng)),
            StreamKind::Exact => AnyStream::Exact(ExactStream::new(model)),
            StreamKind::File => {
                let path = spec
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("file stream needs a path".into()))?;
                AnyStream::File(FileStream::open(path, model.dim())?)
            }
        })
    }
}

impl SampleStream for AnyStream<'_> {
    fn dim(&self) -> usize {
        match self {
            AnyStream::Rademacher(s) => s.dim(),
            AnyStream::Eigenbasis(s) => s.dim(),
            AnyStream::Exact(s) => s.dim(),
            AnyStream::File(s) => s.dim(),
        }
    }

    fn next_sample(&mut self) -> Result<Option<&SampleUpdate>> {
        match self {
            AnyStream::Rademacher(s) => s.next_sample(),
            AnyStream::Eigenbasis(s) => s.next_sample(),
            AnyStream::Exact(s) => s.next_sample(),
            AnyStream::File(s) => s.next_sample(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn diag(s: &[f64]) -> CovarianceModel {
        CovarianceModel::diagonal(s.to_vec()).unwrap()
    }

    fn rank_one(s: &SampleUpdate) -> &DVector<f64> {
        match s {
            SampleUpdate::RankOne(x) => x,
            SampleUpdate::Dense(_) => panic!("expected rank-one"),
        }
    }

    #[test]
    fn rademacher_norm_is_trace() {
        let m = diag(&[1.0, 0.5]);
        let mut s = RademacherStream::new(&m, rng_for(1, Purpose::Samples));
        for _ in 0..1000 {
            let x = rank_one(s.next_sample().unwrap().unwrap());
            assert!((x.norm_squared() - 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rademacher_rank_one_model_returns_a() {
        let m = diag(&[1.0, 0.0]);
        let mut s = RademacherStream::new(&m, rng_for(9, Purpose::Samples));
        for _ in 0..100 {
            let sample = s.next_sample().unwrap().unwrap();
            assert_eq!(sample.to_dense(), m.dense());
        }
    }

    #[test]
    fn eigenbasis_norm_is_trace() {
        let m = diag(&[1.0, 0.5]);
        let mut s = EigenbasisStream::new(&m, rng_for(1, Purpose::Samples));
        for _ in 0..1000 {
            let x = rank_one(s.next_sample().unwrap().unwrap());
            assert!((x.norm_squared() - 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn eigen_index_never_picks_zero_weight() {
        let cumulative = [1.0, 1.5, 1.5];
        let mut rng = rng_for(3, Purpose::Samples);
        for _ in 0..10_000 {
            assert!(sample_eigen_index(&cumulative, &mut rng) < 2);
        }
    }

    #[test]
    fn bound_b_examples() {
        let spec = StreamSpec::new(StreamKind::Rademacher);
        assert_eq!(bound_b(&spec, &diag(&[1.0, 0.5])).unwrap(), 2.5);
        assert_eq!(bound_b(&spec, &diag(&[1.0, 0.0])).unwrap(), 2.0);
        assert_eq!(bound_b(&spec, &diag(&[1.0; 4])).unwrap(), 5.0);
        assert_eq!(bound_b(&StreamSpec::new(StreamKind::Exact), &diag(&[1.0, 0.5])).unwrap(), 1.0);
    }

    #[test]
    fn bound_b_file_needs_declaration() {
        let m = diag(&[1.0, 0.5]);
        let mut spec = StreamSpec::new(StreamKind::File);
        assert!(matches!(bound_b(&spec, &m), Err(Error::MissingBound)));
        spec.declared_b = Some(3.0);
        assert_eq!(bound_b(&spec, &m).unwrap(), 3.0);
        let mut spec = StreamSpec::new(StreamKind::Rademacher);
        spec.declared_b = Some(2.0);
        assert!(bound_b(&spec, &m).is_err());
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_two_rows() {
        let f = write_tmp("1,0\r\n0,1\n");
        let mut s = ingest_stream(f.path(), 2).unwrap();
        let a = s.next_sample().unwrap().unwrap().to_dense();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let b = s.next_sample().unwrap().unwrap().to_dense();
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert!(s.next_sample().unwrap().is_none());
        assert_eq!(s.rows(), 2);
        assert_eq!(s.max_sq_norm(), 1.0);
    }

    #[test]
    fn ingest_empty_file() {
        let f = write_tmp("");
        let mut s = ingest_stream(f.path(), 3).unwrap();
        assert!(s.next_sample().unwrap().is_none());
        assert_eq!(s.max_sq_norm(), 0.0);
        assert!(scan_file(f.path(), 3).unwrap().observed_b().unwrap().is_none());
    }

    #[test]
    fn ingest_wrong_width_names_line() {
        let f = write_tmp("1,2,3\n");
        let mut s = ingest_stream(f.path(), 2).unwrap();
        match s.next_sample() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("1,2\n3\n");
        let mut s = ingest_stream(f.path(), 2).unwrap();
        s.next_sample().unwrap();
        assert!(matches!(s.next_sample(), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("1,x\n");
        let mut s = ingest_stream(f.path(), 2).unwrap();
        assert!(matches!(s.next_sample(), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn scan_computes_second_moment() {
        let f = write_tmp("2,0\n0,1\n");
        let summary = scan_file(f.path(), 2).unwrap();
        assert_eq!(summary.rows, 2);
        assert_eq!(summary.max_sq_norm, 4.0);
        assert_eq!(
            summary.second_moment,
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])
        );
        assert!((summary.observed_b().unwrap().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn any_stream_file_without_path_is_config_error() {
        let m = diag(&[1.0, 0.5]);
        assert!(matches!(
            AnyStream::open(&StreamSpec::new(StreamKind::File), &m, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stream_kind_names() {
        let spec: StreamSpec = toml::from_str("kind = \"eigenbasis-categorical\"").unwrap();
        assert_eq!(spec.kind, StreamKind::Eigenbasis);
        let spec: StreamSpec = toml::from_str("kind = \"rademacher\"").unwrap();
        assert_eq!(spec.kind, StreamKind::Rademacher);
    }
}
