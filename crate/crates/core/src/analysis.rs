//! Representation analysis over per-sample feature matrices: PCA, k-means,
//! multinomial logistic-regression probes and majority-class baselines.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Parallelism};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {needed} rows, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("k={k} is out of range for {limit}")]
    BadK { k: usize, limit: usize },
    #[error("labels are required")]
    NoLabels,
    #[error("labels are empty")]
    EmptyLabels,
    #[error("only one class present")]
    SingleClass,
    #[error("held-out split is empty")]
    EmptyHoldout,
}

/// Whether the last CSV column holds class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    /// Labels iff some value in the last column is not a number.
    #[default]
    Auto,
    Last,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// `n x d`, one sample per row.
    pub rows: DMatrix<f64>,
    pub labels: Option<Vec<String>>,
    pub label_name: Option<String>,
    pub feature_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(rows: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self, AnalysisError> {
        if let Some(l) = &labels {
            if l.len() != rows.nrows() {
                return Err(AnalysisError::Shape(format!("{} labels for {} rows", l.len(), rows.nrows())));
            }
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::Shape("non-finite feature value".into()));
        }
        let feature_names = (0..rows.ncols()).map(|i| format!("f{i}")).collect();
        Ok(FeatureMatrix {
            rows,
            labels,
            label_name: None,
            feature_names,
        })
    }

    /// Reads a CSV with a header row.
    pub fn read_csv<R: Read>(reader: R, mode: LabelColumn) -> Result<Self, AnalysisError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
        let width = header.len();
        if width == 0 {
            return Err(AnalysisError::Shape("empty header".into()));
        }
        let labelled = match mode {
            LabelColumn::Last => true,
            LabelColumn::None => false,
            LabelColumn::Auto => records
                .iter()
                .any(|r| r.get(width - 1).is_some_and(|v| v.trim().parse::<f64>().is_err())),
        };
        let d = if labelled { width - 1 } else { width };
        let mut data = Vec::with_capacity(records.len() * d);
        let mut labels = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let row = i + 2;
            if r.len() != width {
                return Err(AnalysisError::Malformed {
                    row,
                    reason: format!("expected {width} fields, found {}", r.len()),
                });
            }
            for v in r.iter().take(d) {
                let x: f64 = v.trim().parse().map_err(|_| AnalysisError::Malformed {
                    row,
                    reason: format!("`{v}` is not a number"),
                })?;
                data.push(x);
            }
            if labelled {
                labels.push(r[width - 1].trim().to_string());
            }
        }
        let rows = DMatrix::from_row_slice(records.len(), d, &data);
        let mut m = Self::new(rows, labelled.then_some(labels))?;
        m.feature_names = header[..d].to_vec();
        if labelled {
            m.label_name = Some(header[width - 1].clone());
        }
        Ok(m)
    }

    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.rows.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `k x d`, orthonormal rows in order of decreasing variance.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
    /// Set for components whose variance is numerically zero.
    pub zero_variance: Vec<bool>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn centered(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

/// Top-`k` eigenvectors of the sample covariance (divisor `n - 1`). Each
/// component's sign is fixed so its largest-magnitude entry is positive.
pub fn pca_fit(x: &DMatrix<f64>, k: usize) -> Result<Pca, AnalysisError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(AnalysisError::TooFewRows { needed: 2, have: n });
    }
    if k == 0 || k > d {
        return Err(AnalysisError::BadK { k, limit: d });
    }
    let mean = column_mean(x);
    let c = centered(x, &mean);
    let mut cov = c.transpose() * &c / (n - 1) as f64;
    // Enforce exact symmetry before the eigensolve.
    cov = (&cov + cov.transpose()) * 0.5;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let floor = 1e-12 * total_variance.abs().max(f64::MIN_POSITIVE);
    let mut components = DMatrix::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    let mut zero_variance = Vec::with_capacity(k);
    for (r, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        components.set_row(r, &v.transpose());
        let var = eig.eigenvalues[i].max(0.0);
        zero_variance.push(var <= floor);
        explained_variance.push(if var <= floor { 0.0 } else { var });
    }
    Ok(Pca {
        mean,
        components,
        explained_variance,
        zero_variance,
        total_variance,
    })
}

/// Centers `x` with the fitted mean and projects onto the components (`n x k`).
pub fn pca_project(x: &DMatrix<f64>, pca: &Pca) -> Result<DMatrix<f64>, AnalysisError> {
    if x.ncols() != pca.mean.len() {
        return Err(AnalysisError::Shape(format!(
            "data has {} columns, components expect {}",
            x.ncols(),
            pca.mean.len()
        )));
    }
    Ok(centered(x, &pca.mean) * pca.components.transpose())
}

/// Maps projections back to the original space.
pub fn pca_reconstruct(projected: &DMatrix<f64>, pca: &Pca) -> DMatrix<f64> {
    let mut out = projected * &pca.components;
    for mut row in out.row_iter_mut() {
        row += pca.mean.transpose();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    /// `k x d`.
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    x.row(i).iter().zip(c.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Lloyd iterations from a seeded k-means++ start until the assignment is a
/// fixpoint or [`KMEANS_MAX_ITER`] iterations. Empty clusters keep their
/// previous centroid.
pub fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<KMeans, AnalysisError> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(AnalysisError::BadK { k, limit: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = DMatrix::zeros(k, d);
    centroids.set_row(0, &x.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centroids, 0)).collect();
    for j in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, di) in dist.iter().enumerate() {
                acc += di;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.set_row(j, &x.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(x, i, &centroids, j));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, slot) in assignments.iter_mut().enumerate() {
            let (best, bd) = (0..k)
                .map(|j| (j, sq_dist(x, i, &centroids, j)))
                .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
            inertia += bd;
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(a);
            row += x.row(i);
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids.set_row(j, &(sums.row(j) / counts[j] as f64));
            }
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia_trace,
        iterations,
        converged,
    })
}

/// Share of the most common label.
pub fn majority_baseline<S: AsRef<str>>(labels: &[S]) -> Result<f64, AnalysisError> {
    if labels.is_empty() {
        return Err(AnalysisError::EmptyLabels);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    Ok(*counts.values().max().expect("nonempty") as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the training loss changes by less than this.
    pub tolerance: f64,
    pub parallelism: Parallelism,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            seeds: 5,
            base_seed: 0,
            train_fraction: 0.8,
            l2: 1e-4,
            max_iter: 5000,
            tolerance: 1e-6,
            parallelism: Parallelism::default(),
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
    /// `classes x d`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub loss_trace: Vec<f64>,
}

impl LogisticModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        let z = standardize(x, &self.mean, &self.scale);
        (0..z.nrows())
            .map(|i| {
                let s = &self.weight * z.row(i).transpose() + &self.bias;
                s.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                    .0
            })
            .collect()
    }
}

fn standardize(x: &DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let mut z = centered(x, mean);
    for mut row in z.row_iter_mut() {
        row.component_div_assign(&scale.transpose());
    }
    z
}

fn objective(z: &DMatrix<f64>, y: &[usize], w: &DMatrix<f64>, b: &DVector<f64>, l2: f64) -> (f64, DMatrix<f64>) {
    let n = z.nrows() as f64;
    let mut scores = z * w.transpose();
    for mut row in scores.row_iter_mut() {
        row += b.transpose();
    }
    let mut loss = 0.0;
    // Softmax probabilities minus one-hot targets, row by row.
    for (i, mut row) in scores.row_iter_mut().enumerate() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let zsum = row.sum();
        row /= zsum;
        loss -= row[y[i]].max(f64::MIN_POSITIVE).ln();
        row[y[i]] -= 1.0;
    }
    loss = loss / n + 0.5 * l2 * w.norm_squared();
    (loss, scores / n)
}

/// Full-batch gradient descent on mean cross-entropy plus `l2/2 |W|^2`.
/// The step `2/(d+1)` is below the inverse smoothness bound for
/// standardized features, so the training loss never increases.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<LogisticModel, AnalysisError> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(AnalysisError::Shape(format!("{} labels for {n} rows", y.len())));
    }
    if n == 0 {
        return Err(AnalysisError::TooFewRows { needed: 1, have: 0 });
    }
    let mean = column_mean(x);
    let c = centered(x, &mean);
    let scale = DVector::from_iterator(
        d,
        c.column_iter().map(|col| {
            let sd = (col.norm_squared() / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        }),
    );
    let z = standardize(x, &mean, &scale);
    let lr = 1.0 / (0.5 * (d as f64 + 1.0) + cfg.l2);
    let mut w = DMatrix::zeros(classes, d);
    let mut b = DVector::zeros(classes);
    let mut loss_trace = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let (loss, g) = objective(&z, y, &w, &b, cfg.l2);
        loss_trace.push(loss);
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
        prev = loss;
        let gw = g.transpose() * &z + &w * cfg.l2;
        let gb = DVector::from_iterator(classes, g.column_iter().map(|col| col.sum()));
        w -= gw * lr;
        b -= gb * lr;
    }
    Ok(LogisticModel {
        mean,
        scale,
        weight: w,
        bias: b,
        loss_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub mean_accuracy: f64,
    pub per_seed: Vec<f64>,
    pub classes: Vec<String>,
}

/// Per-class shuffle, first `round(fraction * count)` (at least one) to train.
fn stratified_split(y: &[usize], classes: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(rng);
        let cut = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Held-out accuracy of a logistic probe, averaged over seeded stratified splits.
pub fn logistic_probe<S: AsRef<str> + Sync>(
    x: &DMatrix<f64>,
    labels: &[S],
    cfg: &ProbeConfig,
) -> Result<ProbeReport, AnalysisError> {
    if labels.len() != x.nrows() {
        return Err(AnalysisError::Shape(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    if labels.is_empty() {
        return Err(AnalysisError::EmptyLabels);
    }
    if cfg.seeds == 0 || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(AnalysisError::Shape("seeds >= 1 and 0 < train_fraction < 1 are required".into()));
    }
    let classes: Vec<String> = labels
        .iter()
        .map(|l| l.as_ref().to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(AnalysisError::SingleClass);
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l.as_ref())).expect("class present"))
        .collect();
    let per_seed = par::map_range(cfg.parallelism, cfg.seeds, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed + s as u64);
        let (train, test) = stratified_split(&y, classes.len(), cfg.train_fraction, &mut rng);
        if test.is_empty() {
            return Err(AnalysisError::EmptyHoldout);
        }
        let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let model = fit_logistic(&select_rows(x, &train), &ytr, classes.len(), cfg)?;
        let pred = model.predict(&select_rows(x, &test));
        let hits = test.iter().zip(&pred).filter(|(&i, &p)| y[i] == p).count();
        Ok(hits as f64 / test.len() as f64)
    })
    .into_iter()
    .collect::<Result<Vec<f64>, _>>()?;
    Ok(ProbeReport {
        mean_accuracy: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
        per_seed,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaSummary {
    pub explained_variance: Vec<f64>,
    pub zero_variance: Vec<bool>,
    pub total_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansSummary {
    pub k: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub probe_accuracy: Option<f64>,
    pub majority_accuracy: Option<f64>,
    pub per_seed: Vec<f64>,
    pub pca: PcaSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmeans: Option<KMeansSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub pca_components: usize,
    pub kmeans_k: Option<usize>,
    pub kmeans_seed: u64,
    pub probe: ProbeConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            pca_components: 5,
            kmeans_k: None,
            kmeans_seed: 0,
            probe: ProbeConfig::default(),
        }
    }
}

/// PCA (components capped at the feature width), an optional k-means, and a
/// probe with its majority baseline when labels are present.
pub fn analyze(features: &FeatureMatrix, cfg: &AnalysisConfig) -> Result<(AnalysisReport, Pca), AnalysisError> {
    let pca = pca_fit(&features.rows, cfg.pca_components.min(features.ncols()).max(1))?;
    let kmeans = match cfg.kmeans_k {
        Some(k) => {
            let km = kmeans(&features.rows, k, cfg.kmeans_seed)?;
            let mut sizes = vec![0; k];
            km.assignments.iter().for_each(|&a| sizes[a] += 1);
            Some(KMeansSummary {
                k,
                inertia: *km.inertia_trace.last().expect("at least one iteration"),
                iterations: km.iterations,
                converged: km.converged,
                cluster_sizes: sizes,
            })
        }
        None => None,
    };
    let (probe_accuracy, majority_accuracy, per_seed) = match &features.labels {
        Some(labels) => {
            let probe = logistic_probe(&features.rows, labels, &cfg.probe)?;
            (Some(probe.mean_accuracy), Some(majority_baseline(labels)?), probe.per_seed)
        }
        None => (None, None, Vec::new()),
    };
    let report = AnalysisReport {
        probe_accuracy,
        majority_accuracy,
        per_seed,
        pca: PcaSummary {
            explained_variance: pca.explained_variance.clone(),
            zero_variance: pca.zero_variance.clone(),
            total_variance: pca.total_variance,
        },
        kmeans,
    };
    Ok((report, pca))
}

/// `pc1,pc2,label` rows for plotting. A single-component fit leaves `pc2` at 0.
pub fn write_scatter_csv<W: Write>(features: &FeatureMatrix, pca: &Pca, out: W) -> Result<(), AnalysisError> {
    let p = pca_project(&features.rows, pca)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pc1", "pc2", "label"])?;
    for i in 0..p.nrows() {
        let pc2 = if p.ncols() > 1 { p[(i, 1)] } else { 0.0 };
        let label = features.labels.as_ref().map_or("", |l| l[i].as_str());
        w.write_record([p[(i, 0)].to_string(), pc2.to_string(), label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
