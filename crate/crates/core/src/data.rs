//! Datasets, party partitions and mini-batching.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Attempts allowed before a Dirichlet draw that leaves a party empty is
/// reported as infeasible.
pub const MAX_PARTITION_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Input(format!(
                "features must be a matrix, got {:?}",
                features.shape()
            )));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::dim("dataset", features.shape(), &[labels.len()]));
        }
        if num_classes == 0 {
            return Err(Error::Input("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Tensor::new(vec![indices.len(), d], data).expect("subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    /// Split each class independently: `round(test_fraction * class size)`
    /// samples go to the second dataset.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must be in [0, 1), got {test_fraction}"
            )));
        }
        let mut rng = Rng::new(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for mut idx in self.indices_by_class() {
            rng.shuffle(&mut idx);
            let n_test = (test_fraction * idx.len() as f64).round() as usize;
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Dirichlet,
    Iid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_parties: usize,
    pub beta: f64,
    pub seed: u64,
    pub mode: PartitionMode,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_parties == 0 {
            return Err(Error::Config("num_parties must be at least 1".into()));
        }
        if self.mode == PartitionMode::Dirichlet && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Disjoint index sets, one per party, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    index_sets: Vec<Vec<usize>>,
}

impl Partition {
    /// Validates disjointness, coverage of `0..n` and non-empty parties.
    pub fn new(mut index_sets: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (party, set) in index_sets.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(Error::Input(format!("party {party} has no samples")));
            }
            set.sort_unstable();
            for &i in set.iter() {
                if i >= n || seen[i] {
                    return Err(Error::Input(format!("index {i} out of range or assigned twice")));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Input(format!("index {missing} not assigned to any party")));
        }
        Ok(Self { index_sets })
    }

    pub fn num_parties(&self) -> usize {
        self.index_sets.len()
    }

    pub fn party(&self, id: usize) -> &[usize] {
        &self.index_sets[id]
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.index_sets.iter().map(Vec::len).collect()
    }

    /// `party x class` sample counts.
    pub fn class_counts(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.index_sets
            .iter()
            .map(|set| {
                let mut row = vec![0; ds.num_classes()];
                for &i in set {
                    row[ds.labels()[i]] += 1;
                }
                row
            })
            .collect()
    }

    /// Shannon entropy (nats) of each party's label distribution.
    pub fn label_entropy(&self, ds: &Dataset) -> Vec<f64> {
        self.class_counts(ds)
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / total as f64;
                        -p * p.ln()
                    })
                    .sum()
            })
            .collect()
    }

    /// JSON object mapping party id to its sorted index list.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<usize, &Vec<usize>> = self.index_sets.iter().enumerate().collect();
        serde_json::to_string_pretty(&map).expect("partition serializes")
    }

    pub fn from_json(text: &str, n: usize) -> Result<Self> {
        let map: BTreeMap<usize, Vec<usize>> =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("partition json: {e}")))?;
        if map.keys().copied().ne(0..map.len()) {
            return Err(Error::Input("partition json party ids must be 0..N".into()));
        }
        Self::new(map.into_values().collect(), n)
    }
}

pub fn partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    match spec.mode {
        PartitionMode::Dirichlet => dirichlet_partition(ds, spec),
        PartitionMode::Iid => iid_partition(ds, spec),
    }
}

/// Split `total` by `proportions` with largest-remainder rounding; ties go
/// to the lower index. The counts sum exactly to `total`.
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Label-skewed split: for each class `k`, draw `p_k ~ Dir_N(beta)` and give
/// party `j` a `p_kj` share of class `k`'s shuffled samples.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    if spec.mode != PartitionMode::Dirichlet {
        return Err(Error::Config(
            "dirichlet_partition called with a non-dirichlet spec".into(),
        ));
    }
    let parties = spec.num_parties;
    if parties > ds.len() {
        return Err(Error::PartitionInfeasible(format!(
            "{parties} parties but only {} samples",
            ds.len()
        )));
    }
    let by_class = ds.indices_by_class();
    let mut rng = Rng::new(spec.seed);
    for attempt in 1..=MAX_PARTITION_ATTEMPTS {
        let mut sets = vec![Vec::new(); parties];
        for class_indices in &by_class {
            let proportions = rng.dirichlet(parties, spec.beta);
            let mut idx = class_indices.clone();
            rng.shuffle(&mut idx);
            let counts = largest_remainder(&proportions, idx.len());
            let mut start = 0;
            for (set, count) in sets.iter_mut().zip(counts) {
                set.extend_from_slice(&idx[start..start + count]);
                start += count;
            }
        }
        if sets.iter().all(|s| !s.is_empty()) {
            return Partition::new(sets, ds.len());
        }
        log::debug!("dirichlet draw {attempt} left a party empty; resampling");
    }
    Err(Error::PartitionInfeasible(format!(
        "every one of {MAX_PARTITION_ATTEMPTS} draws left a party without samples \
         (beta={}, parties={parties}); try a larger beta or fewer parties",
        spec.beta
    )))
}

/// Uniform split: one seeded shuffle, contiguous chunks whose sizes differ
/// by at most one (earlier parties take the remainder).
pub fn iid_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    let (n, parties) = (ds.len(), spec.num_parties);
    if parties > n {
        return Err(Error::PartitionInfeasible(format!(
            "{parties} parties but only {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(spec.seed).shuffle(&mut idx);
    let (base, extra) = (n / parties, n % parties);
    let mut sets = Vec::with_capacity(parties);
    let mut start = 0;
    for j in 0..parties {
        let size = base + usize::from(j < extra);
        sets.push(idx[start..start + size].to_vec());
        start += size;
    }
    Partition::new(sets, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

/// Gaussian clusters, one per class, with means at least `4 * spread` apart.
///
/// Means are drawn uniformly from a cube of half-width
/// `4 * spread * C^(1/dim)`, rejecting any that land too close to an
/// earlier one. Rows are ordered by class.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let BlobSpec {
        num_classes,
        samples_per_class,
        dim,
        spread,
        seed,
    } = *spec;
    if num_classes == 0 || samples_per_class == 0 || dim == 0 || !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("blob parameters must all be positive: {spec:?}")));
    }
    let min_dist = 4.0 * spread;
    let half_width = min_dist * (num_classes as f64).powf(1.0 / dim as f64);
    let mut rng = Rng::new(seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut tries = 0;
    while means.len() < num_classes {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::Config(format!(
                "could not place {num_classes} class means {min_dist} apart in {dim} dimensions"
            )));
        }
        let candidate: Vec<f64> = (0..dim).map(|_| half_width * (2.0 * rng.uniform() - 1.0)).collect();
        let far = means.iter().all(|m| {
            m.iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                >= min_dist
        });
        if far {
            means.push(candidate);
        }
    }
    let n = num_classes * samples_per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            data.extend(mean.iter().map(|m| m + spread * rng.normal()));
            labels.push(class);
        }
    }
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, num_classes)
}

/// One epoch of shuffled mini-batches; the last batch may be short.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(epoch_seed).shuffle(&mut order);
    Ok(Batches {
        ds,
        order,
        batch_size,
        pos: 0,
    })
}

impl Batches<'_> {
    /// Sample order for the epoch.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.ds.subset(&self.order[self.pos..end]);
        self.pos = end;
        Some((batch.features, batch.labels))
    }
}

/// Read `d` float columns followed by an integer label per row. A first
/// line whose first field is not a number is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < 2 {
            return Err(parse_err(line_no, "need at least one feature and a label".into()));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(
                    line_no,
                    format!("expected {w} fields, found {}", fields.len()),
                ));
            }
            Some(_) => {}
        }
        let (label_field, feature_fields) = fields.split_last().expect("non-empty row");
        for f in feature_fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad feature value {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite feature value {f:?}")));
            }
            data.push(v);
        }
        let label: i64 = label_field
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad label {label_field:?}")))?;
        if label < 0 {
            return Err(parse_err(line_no, format!("negative label {label}")));
        }
        labels.push(label as usize);
    }
    let Some(width) = width else {
        return Err(parse_err(1, "no data rows".into()));
    };
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Tensor::new(vec![labels.len(), width - 1], data)?;
    Dataset::new(features, labels, num_classes)
}

pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    for j in 0..ds.dim() {
        write!(out, "x{j},").expect("string write");
    }
    out.push_str("label\n");
    for (i, &y) in ds.labels().iter().enumerate() {
        for v in ds.features().row(i) {
            write!(out, "{v},").expect("string write");
        }
        writeln!(out, "{y}").expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}
