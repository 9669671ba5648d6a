//! Parameter vectors, datasets, retain/forget splits and the empirical loss.
//!
//! Every reduction over samples runs sequentially in index order so that two
//! evaluations on identical inputs are bit-identical. The divergence checks in
//! [`crate::certify`] compare trajectories produced by separate runs and rely on
//! this.

use std::fmt;
use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};

/// Model weights. Entries are always finite.
#[derive(Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must have dimension >= 1"));
        }
        check_finite(&values, "parameter")?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vector must have dimension >= 1");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        distance(&self.0, &other.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Borrowed view of one sample: a feature vector and a label.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

/// Samples stored row-major with a fixed feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    width: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from rows of `(features, label)`. Rejects empty input,
    /// ragged rows and non-finite values.
    pub fn new(rows: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let width = rows.first().map(|r| r.0.len()).ok_or(Error::EmptyDataset)?;
        let mut features = Vec::with_capacity(rows.len() * width);
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (x, y)) in rows.into_iter().enumerate() {
            if x.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: x.len(),
                });
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "sample",
                    index: i,
                });
            }
            features.extend_from_slice(&x);
            labels.push(y);
        }
        Ok(Self {
            width,
            features,
            labels,
        })
    }

    pub(crate) fn from_parts(width: usize, features: Vec<f64>, labels: Vec<f64>) -> Self {
        debug_assert_eq!(features.len(), width * labels.len());
        Self {
            width,
            features,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Only a forget set produced by [`split`] can be empty.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.width
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            x: &self.features[i * self.width..(i + 1) * self.width],
            y: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Order-sensitive FNV-1a hash of the little-endian encoding
    /// `n:u64, width:u64, (features.., label)*`.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write(&(self.len() as u64).to_le_bytes());
        h.write(&(self.width as u64).to_le_bytes());
        for s in self.iter() {
            for v in s.x {
                h.write(&v.to_le_bytes());
            }
            h.write(&s.y.to_le_bytes());
        }
        h.finish()
    }

    /// Reads a CSV with a header row; every row is `features..., label`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let mut values = record
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("{}: row {}: bad number {f:?}", path.display(), line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let label = values.pop().ok_or_else(|| {
                Error::Parse(format!("{}: row {} is empty", path.display(), line + 1))
            })?;
            rows.push((values, label));
        }
        Self::new(rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (0..self.width).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        writer.write_record(&header).map_err(|e| csv_error(path, e))?;
        for s in self.iter() {
            let row: Vec<String> = s
                .x
                .iter()
                .chain(std::iter::once(&s.y))
                .map(|v| format_f64(*v))
                .collect();
            writer.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

/// Forget set `Z` as a strictly increasing list of sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    forget: Vec<usize>,
}

impl SplitSpec {
    pub fn new(forget: Vec<usize>) -> Result<Self> {
        for w in forget.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::UnsortedIndices {
                    prev: w[0],
                    next: w[1],
                });
            }
        }
        Ok(Self { forget })
    }

    /// Forget nothing.
    pub fn none() -> Self {
        Self::default()
    }

    /// `m` distinct indices drawn uniformly from `[0, n)` with a seeded generator.
    pub fn sample(n: usize, m: usize, seed: u64) -> Result<Self> {
        use rand::seq::index;
        if m >= n {
            return Err(Error::EmptyRetainSet { n });
        }
        let mut rng = crate::noise::NoiseStream::new(seed, "split");
        let mut idx = index::sample(rng.rng(), n, m).into_vec();
        idx.sort_unstable();
        Self::new(idx)
    }

    pub fn forget_indices(&self) -> &[usize] {
        &self.forget
    }

    pub fn m(&self) -> usize {
        self.forget.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(&last) = self.forget.last() {
            if last >= n {
                return Err(Error::IndexOutOfRange { index: last, n });
            }
        }
        if self.forget.len() >= n {
            return Err(Error::EmptyRetainSet { n });
        }
        Ok(())
    }

    /// Union of two forget sets, as needed for sequential requests.
    pub fn union(&self, other: &SplitSpec) -> SplitSpec {
        let mut all: Vec<usize> = self.forget.iter().chain(&other.forget).copied().collect();
        all.sort_unstable();
        all.dedup();
        SplitSpec { forget: all }
    }
}

/// Partitions `data` into `(retain, forget)`, both in original relative order.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    spec.validate(data.len())?;
    let width = data.width;
    let mut retain = (Vec::new(), Vec::new());
    let mut forget = (Vec::new(), Vec::new());
    let mut next = spec.forget.iter().peekable();
    for (i, s) in data.iter().enumerate() {
        let target = if next.peek() == Some(&&i) {
            next.next();
            &mut forget
        } else {
            &mut retain
        };
        target.0.extend_from_slice(s.x);
        target.1.push(s.y);
    }
    Ok((
        Dataset::from_parts(width, retain.0, retain.1),
        Dataset::from_parts(width, forget.0, forget.1),
    ))
}

/// Declared regularity constants of a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Gradient Lipschitz constant `L` of every per-sample loss.
    pub smoothness: f64,
    /// Uniform bound `G` on per-sample gradient norms.
    pub grad_bound: f64,
    /// PL constant `mu` of the retained empirical loss, when known.
    pub pl: Option<f64>,
}

/// Per-sample loss oracle with declared constants.
pub trait LossModel: Sync {
    /// Parameter dimension `d`.
    fn dim(&self) -> usize;

    fn sample_loss(&self, sample: Sample<'_>, theta: &[f64]) -> f64;

    /// Adds `grad f_z(theta)` into `out`.
    fn add_sample_grad(&self, sample: Sample<'_>, theta: &[f64], out: &mut [f64]);

    fn constants(&self) -> Constants;

    /// Problem name stored in checkpoints.
    fn name(&self) -> &str {
        "custom"
    }

    /// Global minimum of the empirical loss on `data`, if the model can compute it.
    fn optimal_value(&self, _data: &Dataset) -> Option<f64> {
        None
    }

    fn sample_grad(&self, sample: Sample<'_>, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        self.add_sample_grad(sample, theta, &mut g);
        g
    }
}

impl<M: LossModel + ?Sized> LossModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn sample_loss(&self, sample: Sample<'_>, theta: &[f64]) -> f64 {
        (**self).sample_loss(sample, theta)
    }
    fn add_sample_grad(&self, sample: Sample<'_>, theta: &[f64], out: &mut [f64]) {
        (**self).add_sample_grad(sample, theta, out)
    }
    fn constants(&self) -> Constants {
        (**self).constants()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn optimal_value(&self, data: &Dataset) -> Option<f64> {
        (**self).optimal_value(data)
    }
}

fn check_params<M: LossModel + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: theta.len(),
        });
    }
    check_finite(theta, "parameter")
}

/// `f_D(theta) = (1/n) sum_i f_{z_i}(theta)`, summed in index order.
pub fn empirical_loss<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<f64> {
    check_params(model, theta)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for (i, s) in data.iter().enumerate() {
        let v = model.sample_loss(s, theta);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "sample loss",
                index: i,
            });
        }
        sum += v;
    }
    Ok(sum / data.len() as f64)
}

/// Mean gradient of the empirical loss, written into `out`.
pub fn empirical_grad_into<M: LossModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
    out: &mut [f64],
) -> Result<()> {
    check_params(model, theta)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    out.fill(0.0);
    for s in data.iter() {
        model.add_sample_grad(s, theta, out);
    }
    let inv = 1.0 / data.len() as f64;
    for g in out.iter_mut() {
        *g *= inv;
    }
    if out.iter().any(|g| !g.is_finite()) {
        // Rescan to name the offending sample.
        let index = data
            .iter()
            .position(|s| model.sample_grad(s, theta).iter().any(|g| !g.is_finite()))
            .unwrap_or(0);
        return Err(Error::NonFinite {
            what: "sample gradient",
            index,
        });
    }
    Ok(())
}

pub fn empirical_grad<M: LossModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<ParamVector> {
    let mut out = vec![0.0; theta.len()];
    empirical_grad_into(model, data, theta, &mut out)?;
    Ok(ParamVector(out))
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
