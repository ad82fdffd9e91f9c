//! Synthetic contexts, costs and oracle labels.
//!
//! A generator is fully determined by [`DatasetMeta`]. The instance-level
//! randomness (the `B` or `W` feature maps and the knapsack sizes) is drawn
//! from stream 0 of a ChaCha8 generator seeded with `seed`; record `i` uses
//! its own stream `i + 1`, so any contiguous range of records can be
//! regenerated independently and in parallel.
//!
//! # File format
//!
//! A dataset file is UTF-8 text. Header lines start with `#`:
//!
//! ```text
//! # dysnet-dataset v1
//! # kind=<kind> size=<k or items> constraints=<k> records=<N> start=<i> seed=<s> deg=<deg> noise_width=<nw> capacity_ratio=<r>
//! # capacities <c_1>,...,<c_k>          (knapsack only)
//! # sizes <S_j1>,...,<S_jl>             (knapsack only, one line per constraint)
//! ```
//!
//! followed by exactly `N` comma-separated records `d_1..d_5, w_1..w_n, x_1..x_n`
//! where `x` entries are written as `0` or `1`. Floats use the shortest
//! representation that parses back to the same value.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{build_grid, grid_edge_count, DatasetKind, Knapsack, Problem};
use crate::error::{check_len, Error, Result};

/// Length of every context vector.
pub const CONTEXT_DIM: usize = 5;

const MAGIC: &str = "# dysnet-dataset v1";

/// Generator parameters; together with `records` they determine the file byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    /// Grid side `k`, or number of knapsack items.
    pub size: usize,
    /// Number of knapsack constraints; ignored for grids.
    pub constraints: usize,
    pub seed: u64,
    pub deg: u32,
    pub noise_width: f64,
    /// Knapsack capacity as a fraction of the total item size per constraint.
    pub capacity_ratio: f64,
}

impl DatasetMeta {
    pub fn grid(kind: DatasetKind, k: usize, seed: u64) -> Self {
        Self {
            kind,
            size: k,
            constraints: 0,
            seed,
            deg: 4,
            noise_width: 0.5,
            capacity_ratio: 0.4,
        }
    }

    pub fn knapsack(items: usize, constraints: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::KnapsackPyepo,
            size: items,
            constraints,
            seed,
            deg: 4,
            noise_width: 0.5,
            capacity_ratio: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_grid() && self.size < 2 {
            return Err(Error::InvalidSize(format!(
                "grid side must be at least 2, got {}",
                self.size
            )));
        }
        if !self.kind.is_grid() && (self.size == 0 || self.constraints == 0) {
            return Err(Error::InvalidSize(
                "knapsack needs at least one item and one constraint".into(),
            ));
        }
        if self.kind != DatasetKind::GridLinear && self.deg < 1 {
            return Err(Error::InvalidConfig("deg must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_width) {
            return Err(Error::InvalidConfig(format!(
                "noise_width must lie in [0, 1], got {}",
                self.noise_width
            )));
        }
        if !(self.capacity_ratio > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "capacity_ratio must be positive, got {}",
                self.capacity_ratio
            )));
        }
        Ok(())
    }

    /// Native cost dimension.
    pub fn cost_dim(&self) -> usize {
        if self.kind.is_grid() {
            grid_edge_count(self.size)
        } else {
            self.size
        }
    }
}

/// One labelled sample in native coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub d: DVector<f64>,
    pub w: DVector<f64>,
    pub x: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Index of the first record within the generator's stream.
    pub start: usize,
    /// Knapsack sizes (`constraints x items`); `None` for grids.
    pub sizes: Option<DMatrix<f64>>,
    pub capacities: Option<DVector<f64>>,
    pub records: Vec<Record>,
}

/// PyEPO-style costs `w_i = [((Bd)_i / sqrt(5) + 3)^deg / 3.5^deg + 1] * eps_i`
/// with `eps_i ~ U[1 - noise_width, 1 + noise_width]`, clamped at zero.
pub fn gen_costs_pyepo<R: Rng + ?Sized>(
    b: &DMatrix<f64>,
    d: &DVector<f64>,
    deg: u32,
    noise_width: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_len("gen_costs_pyepo context", b.ncols(), d.len())?;
    if deg < 1 {
        return Err(Error::InvalidConfig("deg must be at least 1".into()));
    }
    let scale = 3.5f64.powi(deg as i32);
    let sqrt_p = (d.len() as f64).sqrt();
    let bd = b * d;
    Ok(bd.map(|v| {
        let base = (v / sqrt_p + 3.0).powi(deg as i32) / scale + 1.0;
        let eps = if noise_width > 0.0 {
            rng.random_range(1.0 - noise_width..=1.0 + noise_width)
        } else {
            1.0
        };
        (base * eps).max(0.0)
    }))
}

/// Linear costs `w = W d`.
pub fn gen_costs_linear(w_map: &DMatrix<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("gen_costs_linear context", w_map.ncols(), d.len())?;
    Ok(w_map * d)
}

fn instance_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Instance-level random data drawn from stream 0.
struct Generator {
    meta: DatasetMeta,
    feature_map: DMatrix<f64>,
    sizes: Option<DMatrix<f64>>,
    capacities: Option<DVector<f64>>,
    problem: Problem,
}

impl Generator {
    fn new(meta: &DatasetMeta) -> Result<Self> {
        meta.validate()?;
        let mut rng = instance_rng(meta.seed);
        let n = meta.cost_dim();
        let feature_map = match meta.kind {
            DatasetKind::GridLinear => DMatrix::from_fn(n, CONTEXT_DIM, |_, _| rng.random_range(0.0..1.0)),
            _ => DMatrix::from_fn(n, CONTEXT_DIM, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
        };
        let (sizes, capacities, problem) = if meta.kind.is_grid() {
            (None, None, Problem::Grid(build_grid(meta.size)?))
        } else {
            let raw = DMatrix::from_fn(meta.constraints, meta.size, |_, _| rng.random_range(3..=8) as f64);
            let sizes = &raw / raw.mean();
            let capacities = DVector::from_fn(meta.constraints, |j, _| meta.capacity_ratio * sizes.row(j).sum());
            let ks = Knapsack::new(sizes.clone(), capacities.clone())?;
            (Some(sizes), Some(capacities), Problem::Knapsack(ks))
        };
        Ok(Self {
            meta: meta.clone(),
            feature_map,
            sizes,
            capacities,
            problem,
        })
    }

    fn record(&self, index: usize) -> Result<Record> {
        let mut rng = record_rng(self.meta.seed, index);
        let (d, w) = match self.meta.kind {
            DatasetKind::GridLinear => {
                let d = DVector::from_fn(CONTEXT_DIM, |_, _| rng.random_range(0.0..1.0));
                let w = gen_costs_linear(&self.feature_map, &d)?;
                (d, w)
            }
            _ => {
                let d = DVector::from_fn(CONTEXT_DIM, |_, _| rng.sample::<f64, _>(StandardNormal));
                let w = gen_costs_pyepo(&self.feature_map, &d, self.meta.deg, self.meta.noise_width, &mut rng)?;
                (d, w)
            }
        };
        let x = self.problem.oracle(&w)?;
        Ok(Record { d, w, x })
    }
}

/// Generates records `start..start + count` of the stream described by `meta`.
pub fn gen_records(meta: &DatasetMeta, start: usize, count: usize) -> Result<Dataset> {
    let generator = Generator::new(meta)?;
    let records = (start..start + count)
        .into_par_iter()
        .map(|i| generator.record(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: meta.clone(),
        start,
        sizes: generator.sizes,
        capacities: generator.capacities,
        records,
    })
}

/// The first `n` records of the stream described by `meta`.
pub fn gen_dataset(meta: &DatasetMeta, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidSize("dataset must contain at least one record".into()));
    }
    gen_records(meta, 0, n)
}

fn join<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {line}: bad number '{t}': {e}")))
        })
        .collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cost_dim(&self) -> usize {
        self.meta.cost_dim()
    }

    /// Builds the optimization instance the labels were computed on.
    pub fn problem(&self) -> Result<Problem> {
        if self.meta.kind.is_grid() {
            Ok(Problem::Grid(build_grid(self.meta.size)?))
        } else {
            let sizes = self
                .sizes
                .clone()
                .ok_or_else(|| Error::Parse("knapsack dataset without sizes".into()))?;
            let caps = self
                .capacities
                .clone()
                .ok_or_else(|| Error::Parse("knapsack dataset without capacities".into()))?;
            Ok(Problem::Knapsack(Knapsack::new(sizes, caps)?))
        }
    }

    /// Splits off the last `fraction` of the records (rounded down).
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let tail = ((self.len() as f64) * fraction).floor() as usize;
        let head = self.len() - tail;
        let mut first = self.clone();
        let mut second = self.clone();
        first.records.truncate(head);
        second.records.drain(..head);
        second.start = self.start + head;
        (first, second)
    }

    pub fn to_text(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!(
            "# kind={} size={} constraints={} records={} start={} seed={} deg={} noise_width={} capacity_ratio={}\n",
            m.kind,
            m.size,
            m.constraints,
            self.len(),
            self.start,
            m.seed,
            m.deg,
            m.noise_width,
            m.capacity_ratio
        ));
        if let (Some(sizes), Some(caps)) = (&self.sizes, &self.capacities) {
            out.push_str(&format!("# capacities {}\n", join(caps.iter())));
            for j in 0..sizes.nrows() {
                let row: Vec<f64> = sizes.row(j).iter().copied().collect();
                out.push_str(&format!("# sizes {}\n", join(row.iter())));
            }
        }
        for r in &self.records {
            let flags =
                r.x.iter()
                    .map(|&v| if v > 0.5 { "1" } else { "0" })
                    .collect::<Vec<_>>()
                    .join(",");
            out.push_str(&format!("{},{},{}\n", join(r.d.iter()), join(r.w.iter()), flags));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.to_text().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        let lines = f.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_lines(lines.iter().map(String::as_str))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_lines(text.lines())
    }

    fn from_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut lines = lines.enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == MAGIC => {}
            _ => return Err(Error::Parse(format!("missing '{MAGIC}' header"))),
        }
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("missing parameter header".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("line 2: expected parameter header".into()))?;

        let mut kind = None;
        let (mut size, mut constraints, mut records, mut start) = (None, None, None, None);
        let (mut seed, mut deg, mut noise_width, mut capacity_ratio) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line 2: malformed field '{field}'")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("line 2: bad value for {key}: {e}"));
            match key {
                "kind" => kind = Some(value.parse::<DatasetKind>()?),
                "size" => size = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                "constraints" => constraints = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                "records" => records = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                "start" => start = Some(value.parse::<usize>().map_err(|e| bad(&e))?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(&e))?),
                "deg" => deg = Some(value.parse::<u32>().map_err(|e| bad(&e))?),
                "noise_width" => noise_width = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                "capacity_ratio" => capacity_ratio = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                other => return Err(Error::Parse(format!("line 2: unknown field '{other}'"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("line 2: missing field '{name}'"));
        let meta = DatasetMeta {
            kind: kind.ok_or_else(|| missing("kind"))?,
            size: size.ok_or_else(|| missing("size"))?,
            constraints: constraints.ok_or_else(|| missing("constraints"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            deg: deg.ok_or_else(|| missing("deg"))?,
            noise_width: noise_width.ok_or_else(|| missing("noise_width"))?,
            capacity_ratio: capacity_ratio.ok_or_else(|| missing("capacity_ratio"))?,
        };
        meta.validate()?;
        let expected = records.ok_or_else(|| missing("records"))?;
        let start = start.ok_or_else(|| missing("start"))?;

        let mut sizes_rows = Vec::new();
        let mut capacities = None;
        let mut recs = Vec::with_capacity(expected);
        let n = meta.cost_dim();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# capacities ") {
                capacities = Some(DVector::from_vec(parse_floats(rest, lineno)?));
                continue;
            }
            if let Some(rest) = line.strip_prefix("# sizes ") {
                sizes_rows.push(parse_floats(rest, lineno)?);
                continue;
            }
            if line.starts_with('#') {
                return Err(Error::Parse(format!("line {lineno}: unexpected header line")));
            }
            let v = parse_floats(line, lineno)?;
            if v.len() != CONTEXT_DIM + 2 * n {
                return Err(Error::Parse(format!(
                    "line {lineno}: expected {} fields, found {}",
                    CONTEXT_DIM + 2 * n,
                    v.len()
                )));
            }
            let x = &v[CONTEXT_DIM + n..];
            if x.iter().any(|&f| f != 0.0 && f != 1.0) {
                return Err(Error::Parse(format!("line {lineno}: solution flags must be 0 or 1")));
            }
            recs.push(Record {
                d: DVector::from_column_slice(&v[..CONTEXT_DIM]),
                w: DVector::from_column_slice(&v[CONTEXT_DIM..CONTEXT_DIM + n]),
                x: DVector::from_column_slice(x),
            });
        }
        if recs.len() != expected {
            return Err(Error::Parse(format!(
                "header announces {expected} records, found {}",
                recs.len()
            )));
        }

        let (sizes, capacities) = if meta.kind.is_grid() {
            (None, None)
        } else {
            let caps = capacities.ok_or_else(|| Error::Parse("knapsack dataset without capacities".into()))?;
            if caps.len() != meta.constraints || sizes_rows.len() != meta.constraints {
                return Err(Error::Parse(
                    "knapsack header does not match the declared constraint count".into(),
                ));
            }
            if sizes_rows.iter().any(|r| r.len() != meta.size) {
                return Err(Error::Parse(
                    "knapsack size rows do not match the declared item count".into(),
                ));
            }
            let sizes = DMatrix::from_fn(meta.constraints, meta.size, |j, i| sizes_rows[j][i]);
            (Some(sizes), Some(caps))
        };

        Ok(Dataset {
            meta,
            start,
            sizes,
            capacities,
            records: recs,
        })
    }

    /// Writes `contexts.csv` (one context per row) and `labels.csv` (costs
    /// followed by solution flags, one record per row) into `dir`, with the
    /// dataset header repeated at the top of `contexts.csv`.
    pub fn write_matrix_pair(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = self.to_text();
        let header: String = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut contexts = header;
        let mut labels = String::new();
        for r in &self.records {
            contexts.push_str(&join(r.d.iter()));
            contexts.push('\n');
            labels.push_str(&format!("{},{}\n", join(r.w.iter()), join(r.x.iter())));
        }
        std::fs::write(dir.join("contexts.csv"), contexts)?;
        std::fs::write(dir.join("labels.csv"), labels)?;
        Ok(())
    }

    pub fn read_matrix_pair(dir: &Path) -> Result<Self> {
        let contexts = std::fs::read_to_string(dir.join("contexts.csv"))?;
        let labels = std::fs::read_to_string(dir.join("labels.csv"))?;
        let header: Vec<&str> = contexts.lines().take_while(|l| l.starts_with('#')).collect();
        let ctx_rows: Vec<&str> = contexts
            .lines()
            .skip(header.len())
            .filter(|l| !l.trim().is_empty())
            .collect();
        let label_rows: Vec<&str> = labels.lines().filter(|l| !l.trim().is_empty()).collect();
        if ctx_rows.len() != label_rows.len() {
            return Err(Error::Parse(format!(
                "contexts.csv has {} rows but labels.csv has {}",
                ctx_rows.len(),
                label_rows.len()
            )));
        }
        let mut merged: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        merged.extend(ctx_rows.iter().zip(&label_rows).map(|(c, l)| format!("{c},{l}")));
        Self::from_lines(merged.iter().map(String::as_str))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyepo_zero_context_without_noise() {
        let b = DMatrix::from_fn(6, 5, |i, j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = gen_costs_pyepo(&b, &DVector::zeros(5), 4, 0.0, &mut rng).unwrap();
        let expected: f64 = 81.0 / 150.0625 + 1.0;
        assert!((expected - 1.5398).abs() < 1e-4);
        for v in w.iter() {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn pyepo_noise_bounds() {
        let b = DMatrix::from_element(50, 5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DVector::from_element(5, 0.3);
        let clean = gen_costs_pyepo(&b, &d, 4, 0.0, &mut rng).unwrap();
        let noisy = gen_costs_pyepo(&b, &d, 4, 0.5, &mut rng).unwrap();
        for (c, n) in clean.iter().zip(noisy.iter()) {
            assert!(*n >= 0.5 * c - 1e-12 && *n <= 1.5 * c + 1e-12);
        }
    }

    #[test]
    fn linear_costs() {
        let w_map = DMatrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64 / 10.0);
        assert_eq!(gen_costs_linear(&w_map, &DVector::zeros(5)).unwrap(), DVector::zeros(4));
        let e1 = DVector::from_fn(5, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert_eq!(gen_costs_linear(&w_map, &e1).unwrap(), w_map.column(0).into_owned());
        assert!(gen_costs_linear(&w_map, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn grid_dataset_labels_are_paths() {
        let meta = DatasetMeta::grid(DatasetKind::GridPyepo, 5, 11);
        let ds = gen_dataset(&meta, 30).unwrap();
        let Problem::Grid(g) = ds.problem().unwrap() else {
            panic!()
        };
        assert_eq!(ds.cost_dim(), 40);
        for r in &ds.records {
            assert!(g.is_path(&r.x));
            assert_eq!(r.x.sum(), 8.0);
            assert!(r.w.iter().all(|&v| v >= 0.0));
            let best = g.shortest_path_oracle(&r.w).unwrap();
            assert_eq!(r.w.dot(&best), r.w.dot(&r.x));
        }
    }

    #[test]
    fn linear_contexts_are_unit_box() {
        let ds = gen_dataset(&DatasetMeta::grid(DatasetKind::GridLinear, 3, 2), 20).unwrap();
        for r in &ds.records {
            assert!(r.d.iter().all(|&v| (0.0..1.0).contains(&v)));
            assert!(r.w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn singleton_and_empty() {
        let meta = DatasetMeta::grid(DatasetKind::GridPyepo, 3, 0);
        assert_eq!(gen_dataset(&meta, 1).unwrap().len(), 1);
        assert!(gen_dataset(&meta, 0).is_err());
    }

    #[test]
    fn deterministic_and_range_consistent() {
        let meta = DatasetMeta::knapsack(10, 2, 5);
        let a = gen_dataset(&meta, 12).unwrap();
        let b = gen_dataset(&meta, 12).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let tail = gen_records(&meta, 8, 4).unwrap();
        assert_eq!(&a.records[8..], &tail.records[..]);
        let (_, split_tail) = a.split(1.0 / 3.0);
        assert_eq!(split_tail.records, tail.records);
        assert_eq!(split_tail.start, 8);
    }

    #[test]
    fn knapsack_sizes_have_unit_mean() {
        let ds = gen_dataset(&DatasetMeta::knapsack(20, 2, 9), 5).unwrap();
        let sizes = ds.sizes.as_ref().unwrap();
        assert!((sizes.mean() - 1.0).abs() < 1e-12);
        let Problem::Knapsack(ks) = ds.problem().unwrap() else {
            panic!()
        };
        for r in &ds.records {
            assert!(ks.is_feasible(&r.x));
        }
    }

    #[test]
    fn text_round_trip() {
        for meta in [
            DatasetMeta::grid(DatasetKind::GridPyepo, 3, 4),
            DatasetMeta::knapsack(6, 2, 4),
        ] {
            let ds = gen_dataset(&meta, 7).unwrap();
            let back = Dataset::from_text(&ds.to_text()).unwrap();
            assert_eq!(back, ds);
            assert_eq!(back.to_text(), ds.to_text());
        }
    }

    #[test]
    fn file_and_matrix_pair_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(&DatasetMeta::knapsack(5, 2, 8), 4).unwrap();
        let path = dir.path().join("ds.txt");
        ds.write(&path).unwrap();
        assert_eq!(Dataset::read(&path).unwrap(), ds);
        ds.write_matrix_pair(&dir.path().join("pair")).unwrap();
        assert_eq!(Dataset::read_matrix_pair(&dir.path().join("pair")).unwrap(), ds);
    }

    #[test]
    fn malformed_files() {
        assert!(Dataset::from_text("hello").is_err());
        let ds = gen_dataset(&DatasetMeta::grid(DatasetKind::GridPyepo, 2, 0), 2).unwrap();
        let text = ds.to_text();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(Dataset::from_text(&truncated).is_err());
        let bad_field = text.replace("deg=4", "degree=4");
        assert!(Dataset::from_text(&bad_field).is_err());
    }
}
