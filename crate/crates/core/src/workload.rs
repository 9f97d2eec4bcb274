//! Synthetic data and window-query workloads, CSV input/output, and shifted
//! mixtures for drift experiments.
//!
//! Query areas are given in the units of a `2^20`-per-side grid and rescaled
//! by `(2^m / 2^20)^2`, so a workload keeps its selectivity on smaller grids.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost_model::WindowQuery;
use crate::error::{Error, Result};
use crate::sfc::{GridConfig, Point};

/// Side length of the reference grid that query areas are expressed in.
pub const REFERENCE_BITS: u32 = 20;
pub const DEFAULT_AREAS: [f64; 3] = [1073741824.0, 4294967296.0, 17179869184.0];
pub const DEFAULT_RATIOS: [f64; 3] = [4.0, 1.0, 0.25];
pub const DEFAULT_GAU_SIGMA: f64 = 1.0 / 8.0;
pub const SKE_SIGMA: f64 = 1.0 / 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataDist {
    Uni,
    Gau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryDist {
    Uni,
    Gau,
    Ske,
}

fn parse_name(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

impl FromStr for DataDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match parse_name(s).as_str() {
            "uni" => Ok(Self::Uni),
            "gau" => Ok(Self::Gau),
            other => Err(Error::Config(format!("unknown data distribution {other:?}; expected uni or gau"))),
        }
    }
}

impl FromStr for QueryDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match parse_name(s).as_str() {
            "uni" => Ok(Self::Uni),
            "gau" => Ok(Self::Gau),
            "ske" => Ok(Self::Ske),
            other => Err(Error::Config(format!("unknown query distribution {other:?}; expected uni, gau or ske"))),
        }
    }
}

impl fmt::Display for DataDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uni => "UNI",
            Self::Gau => "GAU",
        })
    }
}

impl fmt::Display for QueryDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uni => "UNI",
            Self::Gau => "GAU",
            Self::Ske => "SKE",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub distribution: DataDist,
    pub size: usize,
    pub config: GridConfig,
    pub seed: u64,
    /// Standard deviation as a fraction of the side length.
    pub gau_sigma: f64,
}

impl DataSpec {
    pub fn new(distribution: DataDist, size: usize, config: GridConfig, seed: u64) -> Self {
        Self {
            distribution,
            size,
            config,
            seed,
            gau_sigma: DEFAULT_GAU_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub distribution: QueryDist,
    pub count: usize,
    /// Areas on the reference `2^20` grid.
    pub areas: Vec<f64>,
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub ske_clusters: usize,
    /// Seed for the skewed-workload cluster centers; defaults to `seed`.
    /// Sharing it between two specs gives two workloads from one distribution.
    pub cluster_seed: Option<u64>,
}

impl QuerySpec {
    pub fn new(distribution: QueryDist, count: usize, seed: u64) -> Self {
        Self {
            distribution,
            count,
            areas: DEFAULT_AREAS.to_vec(),
            ratios: DEFAULT_RATIOS.to_vec(),
            seed,
            ske_clusters: 3,
            cluster_seed: None,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("standard deviation fraction {sigma} must be positive")))
    }
}

#[inline]
fn clamp_coord(x: f64, side: u32) -> u32 {
    x.round().clamp(0.0, (side - 1) as f64) as u32
}

pub fn gen_data(spec: &DataSpec) -> Result<Vec<Point>> {
    if spec.size == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let side = spec.config.side();
    let n = spec.config.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points = match spec.distribution {
        DataDist::Uni => (0..spec.size)
            .map(|_| Point::new_unchecked((0..n).map(|_| rng.random_range(0..side)).collect()))
            .collect(),
        DataDist::Gau => {
            check_sigma(spec.gau_sigma)?;
            let normal = Normal::new(side as f64 / 2.0, spec.gau_sigma * side as f64)
                .map_err(|e| Error::Config(e.to_string()))?;
            (0..spec.size)
                .map(|_| Point::new_unchecked((0..n).map(|_| clamp_coord(normal.sample(&mut rng), side)).collect()))
                .collect()
        }
    };
    Ok(points)
}

/// Query extents in cells for one (area, ratio) type on the given grid.
pub fn query_extents(area: f64, ratio: f64, config: &GridConfig) -> Result<Vec<u32>> {
    if !(area > 0.0 && ratio > 0.0 && area.is_finite() && ratio.is_finite()) {
        return Err(Error::Config(format!("query area {area} and ratio {ratio} must be positive")));
    }
    let scale = 2f64.powi(config.bits() as i32 - REFERENCE_BITS as i32);
    let a = area * scale * scale;
    let side = |x: f64| (x.round() as u64).max(1);
    let mut ext = vec![side((a * ratio).sqrt()), side((a / ratio).sqrt())];
    ext.resize(config.dims(), side(a.sqrt()));
    if let Some(&e) = ext.iter().find(|&&e| e > config.side() as u64) {
        return Err(Error::Config(format!(
            "query area {area} with ratio {ratio} needs a side of {e} cells but the grid has {}",
            config.side()
        )));
    }
    Ok(ext.into_iter().map(|e| e as u32).collect())
}

/// The rectangle of the given extents centred as close to `center` as the
/// grid allows, moved (not shrunk) to fit.
fn place(center: &[u32], extents: &[u32], side: u32) -> WindowQuery {
    let (lo, hi): (Vec<u32>, Vec<u32>) = center
        .iter()
        .zip(extents)
        .map(|(&c, &e)| {
            let lo = c.saturating_sub((e - 1) / 2).min(side - e);
            (lo, lo + e - 1)
        })
        .unzip();
    WindowQuery::new_unchecked(Point::new_unchecked(lo), Point::new_unchecked(hi))
}

pub fn gen_queries(spec: &QuerySpec, config: &GridConfig) -> Result<Vec<WindowQuery>> {
    if spec.count == 0 {
        return Err(Error::Config("query count must be at least 1".into()));
    }
    if spec.areas.is_empty() || spec.ratios.is_empty() {
        return Err(Error::Config("at least one area and one ratio are required".into()));
    }
    let types: Vec<Vec<u32>> = spec
        .areas
        .iter()
        .flat_map(|&a| spec.ratios.iter().map(move |&r| (a, r)))
        .map(|(a, r)| query_extents(a, r, config))
        .collect::<Result<_>>()?;
    let side = config.side();
    let n = config.dims();
    let sidef = side as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let gau = Normal::new(sidef / 2.0, DEFAULT_GAU_SIGMA * sidef).map_err(|e| Error::Config(e.to_string()))?;
    let clusters = if spec.distribution == QueryDist::Ske {
        if spec.ske_clusters == 0 {
            return Err(Error::Config("a skewed workload needs at least one cluster".into()));
        }
        ske_centers(spec.ske_clusters, n, side, spec.cluster_seed.unwrap_or(spec.seed))
    } else {
        Vec::new()
    };
    let ske = Normal::new(0.0, SKE_SIGMA * sidef).map_err(|e| Error::Config(e.to_string()))?;

    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let center: Vec<u32> = match spec.distribution {
            QueryDist::Uni => (0..n).map(|_| rng.random_range(0..side)).collect(),
            QueryDist::Gau => (0..n).map(|_| clamp_coord(gau.sample(&mut rng), side)).collect(),
            QueryDist::Ske => {
                let k = rng.random_range(0..clusters.len());
                clusters[k]
                    .iter()
                    .map(|&mu| clamp_coord(mu + ske.sample(&mut rng), side))
                    .collect()
            }
        };
        let ext = &types[rng.random_range(0..types.len())];
        out.push(place(&center, ext, side));
    }
    Ok(out)
}

/// Cluster centers drawn uniformly from the middle 80% of each dimension.
pub fn ske_centers(count: usize, dims: usize, side: u32, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_edc1_u64);
    let s = side as f64;
    (0..count)
        .map(|_| (0..dims).map(|_| rng.random_range(0.1 * s..0.9 * s)).collect())
        .collect()
}

/// Replaces `round(pct * |old|)` elements of `old`, at uniformly chosen
/// positions, by elements drawn without replacement from `new`.
pub fn mix_shift<T: Clone>(old: &[T], new: &[T], pct: f64, seed: u64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&pct) {
        return Err(Error::Config(format!("shift fraction {pct} outside [0, 1]")));
    }
    let k = (pct * old.len() as f64).round() as usize;
    if new.len() < k {
        return Err(Error::Config(format!("need {k} replacement elements but only {} were given", new.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = sample_indices(&mut rng, old.len(), k).into_vec();
    positions.sort_unstable();
    let picks = sample_indices(&mut rng, new.len(), k).into_vec();
    let mut out = old.to_vec();
    for (pos, pick) in positions.into_iter().zip(picks) {
        out[pos] = new[pick].clone();
    }
    Ok(out)
}

fn csv_reader<R: Read>(input: R, header: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

/// Reads real-valued points and quantizes them onto the grid: each dimension
/// is rescaled affinely from its observed [min, max] to [0, 2^m) and floored,
/// the maximum landing in the last cell. A constant dimension maps to 0.
pub fn read_points_quantized<R: Read>(input: R, config: &GridConfig, header: bool) -> Result<Vec<Point>> {
    let n = config.dims();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in csv_reader(input, header).records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = record_line(&rec, i + 1);
        if rec.len() != n {
            return Err(Error::parse(line, format!("expected {n} columns, found {}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(line, format!("{f:?} is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for row in &rows {
        for d in 0..n {
            lo[d] = lo[d].min(row[d]);
            hi[d] = hi[d].max(row[d]);
        }
    }
    let side = config.side() as f64;
    let max = config.max_coord();
    Ok(rows
        .into_iter()
        .map(|row| {
            Point::new_unchecked(
                (0..n)
                    .map(|d| {
                        let span = hi[d] - lo[d];
                        if span <= 0.0 {
                            0
                        } else {
                            (((row[d] - lo[d]) / span * side).floor() as u64).min(max as u64) as u32
                        }
                    })
                    .collect(),
            )
        })
        .collect())
}

pub fn load_csv(path: &Path, config: &GridConfig) -> Result<Vec<Point>> {
    read_points_quantized(std::fs::File::open(path)?, config, false)
}

fn parse_ints(rec: &csv::StringRecord, line: usize, expected: usize) -> Result<Vec<u32>> {
    if rec.len() != expected {
        return Err(Error::parse(line, format!("expected {expected} columns, found {}", rec.len())));
    }
    rec.iter()
        .map(|f| f.parse::<u32>().map_err(|_| Error::parse(line, format!("{f:?} is not a grid coordinate"))))
        .collect()
}

/// Reads integer grid points, one per row, validating them against the grid.
pub fn read_points<R: Read>(input: R, config: &GridConfig, header: bool) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (i, rec) in csv_reader(input, header).records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = record_line(&rec, i + 1);
        let coords = parse_ints(&rec, line, config.dims())?;
        out.push(Point::new(coords, config).map_err(|e| Error::parse(line, e.to_string()))?);
    }
    Ok(out)
}

/// Reads queries, `2n` integers per row: the minimum corner then the maximum.
pub fn read_queries<R: Read>(input: R, config: &GridConfig, header: bool) -> Result<Vec<WindowQuery>> {
    let n = config.dims();
    let mut out = Vec::new();
    for (i, rec) in csv_reader(input, header).records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = record_line(&rec, i + 1);
        let mut coords = parse_ints(&rec, line, 2 * n)?;
        let hi = coords.split_off(n);
        let q = WindowQuery::new(Point::new_unchecked(coords), Point::new_unchecked(hi), config)
            .map_err(|e| Error::parse(line, e.to_string()))?;
        out.push(q);
    }
    Ok(out)
}

fn dim_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|d| format!("{prefix}{d}")).collect()
}

pub fn write_points<W: Write>(out: W, points: &[Point], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        if let Some(p) = points.first() {
            w.write_record(dim_names("x", p.dims())).map_err(csv_io)?;
        }
    }
    for p in points {
        w.write_record(p.coords().iter().map(u32::to_string)).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_queries<W: Write>(out: W, queries: &[WindowQuery], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        if let Some(q) = queries.first() {
            let mut names = dim_names("min", q.dims());
            names.extend(dim_names("max", q.dims()));
            w.write_record(names).map_err(csv_io)?;
        }
    }
    for q in queries {
        let row = q.min_corner().coords().iter().chain(q.max_corner().coords()).map(u32::to_string);
        w.write_record(row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
