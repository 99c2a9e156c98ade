//! Datasets, synthetic federations and non-i.i.d. partitioning.
//!
//! All client data lives in one pooled [`Dataset`]; clients refer to it by
//! index sets, so partitions are cheap and the pooled data is shared
//! read-only across threads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Standard deviation of the label noise in synthetic tasks.
pub const OBSERVATION_NOISE: f64 = 0.05;

/// Fraction of each client's partition held out for testing.
pub const TEST_FRACTION: f64 = 0.1;

/// Row-major feature matrix plus one target per row.
///
/// For classification the target is the class index stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} features do not form {} rows of dimension {dim}",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self { dim, features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Class labels; meaningful for classification data only.
    pub fn labels(&self) -> Vec<usize> {
        self.targets.iter().map(|&t| t as usize).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.labels().into_iter().max().map_or(0, |c| c + 1)
    }

    /// Min-max scales all features jointly into [0, 1].
    pub fn scale_to_unit(&mut self) {
        let (lo, hi) = self
            .features
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        if hi <= lo {
            return;
        }
        let span = hi - lo;
        self.features.iter_mut().for_each(|x| *x = (*x - lo) / span);
    }
}

/// A client's slice of the pooled data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Pooled data plus one partition per client.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub dataset: Dataset,
    pub clients: Vec<ClientPartition>,
}

impl FederatedData {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// `p_k = N_k / Σ N_i` over training partition sizes.
    pub fn weights(&self) -> Vec<f64> {
        let total: usize = self.clients.iter().map(|c| c.train.len()).sum();
        self.clients
            .iter()
            .map(|c| c.train.len() as f64 / total as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// `y = θᵀx/√d + ε`
    Linear,
    /// `y = 1[θᵀx/√d + ε > 0]`, two classes
    Logistic,
}

/// Synthetic federation with known per-client ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticFederation {
    pub data: FederatedData,
    /// `θ_k = θ̄ + heterogeneity · δ_k`
    pub client_params: Vec<Vec<f64>>,
}

/// Draws `samples_per_client` standard-normal feature rows per client,
/// labelled by the client's own ground-truth parameter. A `heterogeneity` of
/// zero makes every client share `θ̄`, i.e. i.i.d. clients.
pub fn generate_synthetic(
    task: SyntheticTask,
    num_clients: usize,
    samples_per_client: usize,
    dim: usize,
    heterogeneity: f64,
    seed: u64,
) -> Result<SyntheticFederation> {
    if num_clients == 0 || samples_per_client == 0 || dim == 0 {
        return Err(Error::InvalidConfig(
            "synthetic data needs positive client count, sample count and dimension".into(),
        ));
    }
    if !heterogeneity.is_finite() || heterogeneity < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "heterogeneity must be finite and non-negative, got {heterogeneity}"
        )));
    }

    let mut rng = rng::stream(seed, rng::DATA);
    let normal = |rng: &mut StreamRng| -> f64 { rng.sample(StandardNormal) };
    let shared: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let inv_sqrt_dim = 1.0 / (dim as f64).sqrt();

    let total = num_clients * samples_per_client;
    let mut features = Vec::with_capacity(total * dim);
    let mut targets = Vec::with_capacity(total);
    let mut client_params = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        let theta: Vec<f64> = shared.iter().map(|&s| s + heterogeneity * normal(&mut rng)).collect();
        for _ in 0..samples_per_client {
            let start = features.len();
            features.extend((0..dim).map(|_| normal(&mut rng)));
            let x = &features[start..];
            let score = crate::linalg::dot(&theta, x) * inv_sqrt_dim + OBSERVATION_NOISE * normal(&mut rng);
            targets.push(match task {
                SyntheticTask::Linear => score,
                SyntheticTask::Logistic => f64::from(u8::from(score > 0.0)),
            });
        }
        client_params.push(theta);
    }

    let dataset = Dataset::new(dim, features, targets)?;
    let mut split_rng = rng::stream(seed, rng::PARTITION);
    let clients = (0..num_clients)
        .map(|k| {
            let idx: Vec<usize> = (k * samples_per_client..(k + 1) * samples_per_client).collect();
            split_holdout(idx, TEST_FRACTION, &mut split_rng)
        })
        .collect();
    Ok(SyntheticFederation {
        data: FederatedData { dataset, clients },
        client_params,
    })
}

/// Shuffles `indices` and holds out `round(fraction · len)` of them (at
/// least one when there are two or more) as the test set.
pub fn split_holdout(mut indices: Vec<usize>, fraction: f64, rng: &mut StreamRng) -> ClientPartition {
    indices.shuffle(rng);
    let mut n_test = (indices.len() as f64 * fraction).round() as usize;
    if n_test == 0 && indices.len() >= 2 && fraction > 0.0 {
        n_test = 1;
    }
    let mut train = indices.split_off(n_test);
    let mut test = indices;
    train.sort_unstable();
    test.sort_unstable();
    ClientPartition { train, test }
}

/// Label-skew partition: sort by label, cut into `total_shards` equal
/// shards, and deal `shards_per_client` random shards to each client.
///
/// Samples left over by the integer shard size and undealt shards are
/// dropped. Returned index sets are sorted and pairwise disjoint.
pub fn partition_by_label(
    labels: &[usize],
    num_clients: usize,
    total_shards: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if num_clients == 0 || shards_per_client == 0 {
        return Err(Error::InvalidConfig(
            "label partition needs at least one client and one shard per client".into(),
        ));
    }
    let needed = num_clients * shards_per_client;
    if needed > total_shards {
        return Err(Error::InvalidConfig(format!(
            "{num_clients} clients × {shards_per_client} shards exceeds {total_shards} shards"
        )));
    }
    if total_shards > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} samples cannot fill {total_shards} shards",
            labels.len()
        )));
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (labels[i], i));
    let shard_size = labels.len() / total_shards;

    let mut shard_ids: Vec<usize> = (0..total_shards).collect();
    shard_ids.shuffle(&mut rng::stream(seed, rng::PARTITION));

    Ok(shard_ids
        .chunks(shards_per_client)
        .take(num_clients)
        .map(|shards| {
            let mut idx: Vec<usize> = shards
                .iter()
                .flat_map(|&s| order[s * shard_size..(s + 1) * shard_size].iter().copied())
                .collect();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Label-skewed federation over a labelled dataset with a per-client
/// holdout.
pub fn federate_by_label(
    dataset: Dataset,
    num_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<FederatedData> {
    let labels = dataset.labels();
    let parts = partition_by_label(
        &labels,
        num_clients,
        num_clients * shards_per_client,
        shards_per_client,
        seed,
    )?;
    let mut split_rng = rng::stream(seed, rng::PARTITION + 0x100);
    let clients = parts
        .into_iter()
        .map(|idx| split_holdout(idx, TEST_FRACTION, &mut split_rng))
        .collect();
    Ok(FederatedData { dataset, clients })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// IDX image file and its IDX label file.
    Idx { images: PathBuf, labels: PathBuf },
    /// Headerless numeric CSV, label first.
    Csv(PathBuf),
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Idx { images, labels } => load_idx(images, labels),
        DataSource::Csv(path) => load_csv(path),
    }
}

/// Standard MNIST file names inside `dir`.
pub fn mnist_source(dir: &Path, train: bool) -> DataSource {
    let prefix = if train { "train" } else { "t10k" };
    DataSource::Idx {
        images: dir.join(format!("{prefix}-images-idx3-ubyte")),
        labels: dir.join(format!("{prefix}-labels-idx1-ubyte")),
    }
}

/// A parsed unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file: two zero bytes, type code `0x08` (unsigned byte),
/// the rank, big-endian `u32` dimensions, then the row-major data.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    let err = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message,
    };
    if bytes.len() < 4 {
        return Err(err(0, "file shorter than the magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(0, format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != 0x08 {
        return Err(err(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(err(3, "rank 0".into()));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(err(bytes.len(), "truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(err(
            header,
            format!(
                "expected {count} data bytes for dims {dims:?}, found {}",
                bytes.len() - header
            ),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Loads an IDX image/label pair, pixels scaled to [0, 1].
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_idx(&fs::read(images)?, images)?;
    let lab = parse_idx(&fs::read(labels)?, labels)?;
    if lab.dims.len() != 1 {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            location: "byte 3".into(),
            message: format!("label file has rank {}, expected 1", lab.dims.len()),
        });
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            location: "byte 4".into(),
            message: format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        });
    }
    let n = img.dims[0];
    let dim = img.data.len().checked_div(n).unwrap_or(0);
    let features = img.data.iter().map(|&p| f64::from(p) / 255.0).collect();
    let targets = lab.data.iter().map(|&l| f64::from(l)).collect();
    Dataset::new(dim, features, targets)
}

/// Loads a headerless numeric CSV whose first column is the label.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut dim = None;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Format {
            path: path.to_path_buf(),
            location: format!("line {}", lineno + 1),
            message,
        };
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(e.to_string()))?;
        if values.len() < 2 {
            return Err(err("need a label and at least one feature".into()));
        }
        let d = values.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => return Err(err(format!("row has {d} features, expected {expected}"))),
            _ => {}
        }
        targets.push(values[0]);
        features.extend_from_slice(&values[1..]);
    }
    let dim = dim.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        location: "line 1".into(),
        message: "empty file".into(),
    })?;
    Dataset::new(dim, features, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    #[test]
    fn zero_heterogeneity_gives_identical_clients() {
        let fed = generate_synthetic(SyntheticTask::Logistic, 4, 20, 5, 0.0, 1).unwrap();
        for theta in &fed.client_params {
            assert_eq!(theta, &fed.client_params[0]);
        }
        let again = generate_synthetic(SyntheticTask::Logistic, 4, 20, 5, 0.0, 1).unwrap();
        assert_eq!(fed.data.dataset, again.data.dataset);
        assert_eq!(fed.data.clients, again.data.clients);
    }

    #[test]
    fn holdout_is_disjoint_and_ten_percent() {
        let fed = generate_synthetic(SyntheticTask::Linear, 3, 50, 4, 1.0, 2).unwrap();
        for c in &fed.data.clients {
            assert_eq!(c.test.len(), 5);
            assert_eq!(c.train.len(), 45);
            let train: HashSet<_> = c.train.iter().collect();
            assert!(c.test.iter().all(|i| !train.contains(i)));
        }
        let w = fed.data.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_skew_two_labels_per_client() {
        // 10 balanced classes, 40 shards: every shard is single-label.
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let parts = partition_by_label(&labels, 20, 40, 2, 5).unwrap();
        assert_eq!(parts.len(), 20);
        for p in &parts {
            let distinct: HashSet<_> = p.iter().map(|&i| labels[i]).collect();
            assert!(distinct.len() <= 2);
            assert_eq!(p.len(), 50);
        }
    }

    #[test]
    fn label_skew_partitions_are_disjoint() {
        let labels: Vec<usize> = (0..997).map(|i| (i * 7) % 10).collect();
        for seed in 0..100 {
            let parts = partition_by_label(&labels, 7, 20, 2, seed).unwrap();
            let mut seen = HashSet::new();
            for p in &parts {
                for &i in p {
                    assert!(seen.insert(i));
                }
            }
        }
    }

    #[test]
    fn single_client_gets_all_dealt_shards() {
        let labels = vec![0, 1, 0, 1, 2, 2];
        let parts = partition_by_label(&labels, 1, 3, 3, 0).unwrap();
        assert_eq!(parts, vec![vec![0, 1, 2, 3, 4, 5]]);
    }

    #[test]
    fn label_skew_rejects_too_few_shards() {
        let labels = vec![0; 10];
        assert!(matches!(
            partition_by_label(&labels, 6, 10, 2, 0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(partition_by_label(&labels, 2, 11, 2, 0).is_err());
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend([0, 255, 51, 102, 255, 255, 255, 255, 0, 0, 0, 0, 1, 2, 3, 4]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 4, 7, 0, 3, 9];
        (img, lab)
    }

    #[test]
    fn idx_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = idx_fixture();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        let ds = load_dataset(&DataSource::Idx { images: ip, labels: lp }).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.labels(), vec![7, 0, 3, 9]);
    }

    #[test]
    fn idx_bad_magic_reports_offset() {
        let (mut img, _) = idx_fixture();
        img[1] = 1;
        match parse_idx(&img, Path::new("x")) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "byte 0"),
            other => panic!("unexpected {other:?}"),
        }
        let (mut img, _) = idx_fixture();
        img.pop();
        assert!(parse_idx(&img, Path::new("x")).is_err());
    }

    #[test]
    fn csv_shape_and_ragged_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,0.5,0.25\n0,1,2\n2,3,4").unwrap();
        let ds = load_csv(f.path()).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.targets(), &[1.0, 0.0, 2.0]);

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "1,0.5,0.25\n0,1").unwrap();
        match load_csv(g.path()) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unit_scaling_is_idempotent() {
        let mut ds = Dataset::new(2, vec![-3.0, 1.0, 5.0, 2.0], vec![0.0, 1.0]).unwrap();
        ds.scale_to_unit();
        let once = ds.clone();
        ds.scale_to_unit();
        assert_eq!(ds, once);
        assert!(ds.features().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
