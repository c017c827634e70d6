use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::MlError;

/// Regression targets or class indices, one per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Classes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TargetKind {
        match self {
            Targets::Real(_) => TargetKind::Real,
            Targets::Classes(_) => TargetKind::Classes,
        }
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Real,
    Classes,
}

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    targets: Targets,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, targets: Targets) -> Result<Self, MlError> {
        if dim == 0 {
            return Err(MlError::Dataset("feature dimension must be >= 1".into()));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(MlError::Dataset("feature buffer is not a whole number of rows".into()));
        }
        let rows = features.len() / dim;
        if rows == 0 {
            return Err(MlError::Dataset("dataset must have at least one row".into()));
        }
        if rows != targets.len() {
            return Err(MlError::Dataset(format!(
                "{rows} feature rows but {} targets",
                targets.len()
            )));
        }
        Ok(Self {
            features,
            dim,
            targets,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Targets) -> Result<Self, MlError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(MlError::Dataset("ragged feature rows".into()));
        }
        Self::new(rows.concat(), dim, targets)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            targets: self.targets.select(idx),
        }
    }

    /// CSV with header `x0,...,x{d-1},y`.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header).expect("in-memory write");
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(match &self.targets {
                Targets::Real(v) => v[i].to_string(),
                Targets::Classes(v) => v[i].to_string(),
            });
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Parses the CSV form; the target column must be named `y` and be last.
    pub fn from_csv_bytes(bytes: &[u8], kind: TargetKind) -> Result<Self, MlError> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r
            .headers()
            .map_err(|e| MlError::Dataset(e.to_string()))?
            .clone();
        if header.len() < 2 || header.get(header.len() - 1) != Some("y") {
            return Err(MlError::Dataset("last CSV column must be named \"y\"".into()));
        }
        let dim = header.len() - 1;
        let mut features = Vec::new();
        let mut real = Vec::new();
        let mut classes = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| MlError::Dataset(e.to_string()))?;
            if rec.len() != dim + 1 {
                return Err(MlError::Dataset(format!("row {line}: wrong column count")));
            }
            for j in 0..dim {
                let v: f64 = rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| MlError::Dataset(format!("row {line}: bad number {:?}", &rec[j])))?;
                features.push(v);
            }
            let y = rec[dim].trim();
            match kind {
                TargetKind::Real => real.push(
                    y.parse::<f64>()
                        .map_err(|_| MlError::Dataset(format!("row {line}: bad target {y:?}")))?,
                ),
                TargetKind::Classes => classes.push(
                    y.parse::<usize>()
                        .map_err(|_| MlError::Dataset(format!("row {line}: bad class {y:?}")))?,
                ),
            }
        }
        let targets = match kind {
            TargetKind::Real => Targets::Real(real),
            TargetKind::Classes => Targets::Classes(classes),
        };
        Dataset::new(features, dim, targets)
    }
}

/// Seeded shuffle followed by a contiguous near-equal split. The first
/// `n % parts` shards receive one extra row.
pub fn split_dataset(d: &Dataset, n_parts: usize, seed: u64) -> Result<Vec<Dataset>, MlError> {
    if n_parts == 0 || n_parts > d.len() {
        return Err(MlError::Dataset(format!(
            "cannot split {} rows into {n_parts} parts",
            d.len()
        )));
    }
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = d.len() / n_parts;
    let extra = d.len() % n_parts;
    let mut parts = Vec::with_capacity(n_parts);
    let mut start = 0;
    for k in 0..n_parts {
        let size = base + usize::from(k < extra);
        parts.push(d.select(&idx[start..start + size]));
        start += size;
    }
    Ok(parts)
}

/// `y = w·x + b + noise·ε` with `x, w, b, ε ~ N(0, 1)`. Returns the dataset
/// and the generating `(w, b)`.
pub fn synthetic_linear(
    n: usize,
    d: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>, f64), MlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let b: f64 = rng.sample(StandardNormal);
    let (features, targets) = linear_rows(&mut rng, n, &w, b, noise);
    Ok((Dataset::new(features, d, Targets::Real(targets))?, w, b))
}

/// Draws additional rows from the same linear generator as
/// [`synthetic_linear`] with `seed`, using an independent stream.
pub fn synthetic_linear_holdout(
    n: usize,
    d: usize,
    noise: f64,
    seed: u64,
    stream: u64,
) -> Result<Dataset, MlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let b: f64 = rng.sample(StandardNormal);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000 ^ stream);
    let (features, targets) = linear_rows(&mut rng, n, &w, b, noise);
    Dataset::new(features, d, Targets::Real(targets))
}

fn linear_rows(rng: &mut ChaCha8Rng, n: usize, w: &[f64], b: f64, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let d = w.len();
    let mut features = Vec::with_capacity(n * d);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let eps: f64 = rng.sample(StandardNormal);
        let y = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b + noise * eps;
        features.extend_from_slice(&x);
        targets.push(y);
    }
    (features, targets)
}

/// Gaussian blobs: class centroids drawn from `N(0, 3²)`, points from
/// `N(centroid, 1)`.
pub fn synthetic_classify(n: usize, d: usize, classes: usize, seed: u64) -> Result<Dataset, MlError> {
    if classes < 2 {
        return Err(MlError::Dataset("need at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, 3.0).expect("valid normal");
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| spread.sample(&mut rng)).collect())
        .collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &m in &centroids[c] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(m + z);
        }
        labels.push(c);
    }
    Dataset::new(features, d, Targets::Classes(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Dataset {
        let features: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(features, 1, Targets::Real((0..n).map(|i| i as f64 * 10.0).collect())).unwrap()
    }

    #[test]
    fn split_even() {
        let parts = split_dataset(&rows(10), 2, 1).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Dataset::len).collect();
        assert_eq!(sizes, vec![5, 5]);
    }

    #[test]
    fn split_spreads_remainder() {
        let parts = split_dataset(&rows(7), 3, 1).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Dataset::len).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }

    #[test]
    fn split_is_a_partition() {
        let d = rows(23);
        let parts = split_dataset(&d, 4, 99).unwrap();
        let mut seen: Vec<i64> = parts
            .iter()
            .flat_map(|p| (0..p.len()).map(move |i| p.row(i)[0] as i64))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        // targets stay attached to their rows
        for p in &parts {
            let Targets::Real(t) = p.targets() else { unreachable!() };
            for i in 0..p.len() {
                assert_eq!(t[i], p.row(i)[0] * 10.0);
            }
        }
    }

    #[test]
    fn split_is_seeded() {
        let d = rows(30);
        assert_eq!(split_dataset(&d, 3, 5).unwrap(), split_dataset(&d, 3, 5).unwrap());
        assert_ne!(split_dataset(&d, 3, 5).unwrap(), split_dataset(&d, 3, 6).unwrap());
    }

    #[test]
    fn too_many_parts() {
        assert!(split_dataset(&rows(3), 4, 0).is_err());
        assert!(split_dataset(&rows(3), 0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let (d, _, _) = synthetic_linear(20, 3, 0.1, 4).unwrap();
        let back = Dataset::from_csv_bytes(&d.to_csv_bytes(), TargetKind::Real).unwrap();
        assert_eq!(back, d);
        let c = synthetic_classify(12, 2, 3, 1).unwrap();
        let back = Dataset::from_csv_bytes(&c.to_csv_bytes(), TargetKind::Classes).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn csv_requires_y_column() {
        let bad = b"x0,x1\n1,2\n";
        assert!(Dataset::from_csv_bytes(bad, TargetKind::Real).is_err());
    }

    #[test]
    fn mismatched_rows_rejected() {
        assert!(Dataset::new(vec![1.0, 2.0], 1, Targets::Real(vec![1.0])).is_err());
        assert!(Dataset::new(vec![], 1, Targets::Real(vec![])).is_err());
    }

    #[test]
    fn holdout_shares_generator() {
        let (_, w, b) = synthetic_linear(5, 2, 0.0, 8).unwrap();
        let h = synthetic_linear_holdout(5, 2, 0.0, 8, 1).unwrap();
        let Targets::Real(t) = h.targets() else { unreachable!() };
        for i in 0..h.len() {
            let y = h.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            assert!((y - t[i]).abs() < 1e-12);
        }
    }
}
