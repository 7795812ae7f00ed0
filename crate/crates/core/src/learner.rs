//! Datasets, partition generators and the built-in linear softmax learner.
//!
//! The learner is a multinomial logistic regression trained with mini-batch
//! gradient descent. Parameters are laid out as a row-major `classes x
//! features` weight block followed by `classes` biases.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, SimRng, Stream};

/// Feature and class counts shared by every client in one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub features: usize,
    pub classes: usize,
}

impl ModelShape {
    pub fn param_len(&self) -> usize {
        self.features * self.classes + self.classes
    }
}

/// Flat parameter vector of the linear model. Always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model parameter {k}")));
        }
        Ok(Self(values))
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self(vec![0.0; shape.param_len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `sum_j w_j theta_j / sum_j w_j`, accumulated in iteration order.
    ///
    /// Callers that need bitwise reproducibility pass the models in
    /// ascending client order.
    pub fn weighted_average<'a, I>(items: I) -> Result<ModelParams>
    where
        I: IntoIterator<Item = (&'a ModelParams, f64)>,
    {
        let mut acc: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for (model, w) in items {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "aggregation weight must be positive, got {w}"
                )));
            }
            let acc = acc.get_or_insert_with(|| vec![0.0; model.len()]);
            if acc.len() != model.len() {
                return Err(Error::ShapeMismatch(format!(
                    "cannot average models of length {} and {}",
                    acc.len(),
                    model.len()
                )));
            }
            for (a, x) in acc.iter_mut().zip(&model.0) {
                *a += w * x;
            }
            total += w;
        }
        let mut acc =
            acc.ok_or_else(|| Error::InvalidConfig("cannot average zero models".into()))?;
        for a in &mut acc {
            *a /= total;
        }
        ModelParams::new(acc)
    }

    fn scores(&self, shape: ModelShape, x: &[f64], out: &mut [f64]) {
        Self::scores_raw(&self.0, shape, x, out)
    }
}

/// A labelled sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    shape: ModelShape,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        id: impl Into<String>,
        shape: ModelShape,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features.len() != labels.len() * shape.features {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} samples of dimension {}",
                features.len(),
                labels.len(),
                shape.features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= shape.classes) {
            return Err(Error::ShapeMismatch(format!(
                "label {bad} out of range for {} classes",
                shape.classes
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            id: id.into(),
            shape,
            features,
            labels,
        })
    }

    pub fn empty(id: impl Into<String>, shape: ModelShape) -> Self {
        Self {
            id: id.into(),
            shape,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.shape.features..(k + 1) * self.shape.features]
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.shape.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    fn subset(&self, id: String, indices: &[usize]) -> Dataset {
        let d = self.shape.features;
        let mut features = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &k in indices {
            features.extend_from_slice(self.row(k));
            labels.push(self.labels[k]);
        }
        Dataset {
            id,
            shape: self.shape,
            features,
            labels,
        }
    }

    /// Reads `f0,...,f{d-1},label` CSV. `classes` fixes C when several files
    /// must agree; otherwise it is `max(label) + 1`.
    pub fn load_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
            .clone();
        let d = headers.len().saturating_sub(1);
        if headers.is_empty() || headers.get(d) != Some("label") {
            return Err(Error::Parse(format!(
                "{}: last header column must be `label`",
                path.display()
            )));
        }
        for (k, h) in headers.iter().take(d).enumerate() {
            if h != format!("f{k}") {
                return Err(Error::Parse(format!(
                    "{}: expected header `f{k}`, found `{h}`",
                    path.display()
                )));
            }
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let row = line + 2;
            for k in 0..d {
                let v: f64 = record[k].trim().parse().map_err(|_| {
                    Error::Parse(format!("{}:{row}: bad feature `{}`", path.display(), &record[k]))
                })?;
                features.push(v);
            }
            let y: usize = record[d].trim().parse().map_err(|_| {
                Error::Parse(format!("{}:{row}: bad label `{}`", path.display(), &record[d]))
            })?;
            labels.push(y);
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::new(
            id,
            ModelShape {
                features: d,
                classes,
            },
            features,
            labels,
        )
    }
}

/// Gaussian blob classification task: one isotropic blob per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobTask {
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Standard deviation of the class-center coordinates.
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
    /// Within-class standard deviation.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_features() -> usize {
    16
}
fn default_classes() -> usize {
    4
}
fn default_center_scale() -> f64 {
    1.0
}
fn default_spread() -> f64 {
    2.0
}

impl Default for BlobTask {
    fn default() -> Self {
        Self {
            features: default_features(),
            classes: default_classes(),
            center_scale: default_center_scale(),
            spread: default_spread(),
            seed: 0,
        }
    }
}

impl BlobTask {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            features: self.features,
            classes: self.classes,
        }
    }

    fn centers(&self) -> Vec<f64> {
        let mut rng = rng_for(self.seed, Stream::BlobCenters, &[]);
        (0..self.features * self.classes)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * self.center_scale
            })
            .collect()
    }

    /// Draws `count` samples with labels cycling through the classes, so
    /// class counts are balanced to within one.
    pub fn sample(&self, id: &str, count: usize, stream: Stream) -> Result<Dataset> {
        if self.features == 0 || self.classes == 0 {
            return Err(Error::InvalidConfig(
                "blob task needs at least one feature and one class".into(),
            ));
        }
        if !(self.spread >= 0.0) || !(self.center_scale >= 0.0) {
            return Err(Error::InvalidConfig(
                "blob spread and center scale must be non-negative".into(),
            ));
        }
        let centers = self.centers();
        let mut rng = rng_for(self.seed, stream, &[]);
        let d = self.features;
        let mut features = Vec::with_capacity(count * d);
        let mut labels = Vec::with_capacity(count);
        for k in 0..count {
            let y = k % self.classes;
            for c in &centers[y * d..(y + 1) * d] {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(c + self.spread * z);
            }
            labels.push(y);
        }
        Dataset::new(id, self.shape(), features, labels)
    }
}

/// A per-client parameter given either explicitly or as a linear range
/// from the first client to the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerClient {
    List(Vec<f64>),
    Range { min: f64, max: f64 },
}

impl PerClient {
    pub fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerClient::List(v) if v.len() == n => Ok(v.clone()),
            PerClient::List(v) => Err(Error::InvalidDistribution(format!(
                "{what}: {} values given for {n} clients",
                v.len()
            ))),
            PerClient::Range { min, max } => Ok(linspace(*min, *max, n)),
        }
    }
}

pub fn linspace(min: f64, max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..n)
            .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionKind {
    Iid,
    NonIid {
        #[serde(default = "default_concentration")]
        concentration: f64,
    },
    Sizes {
        fractions: PerClient,
    },
    NoisyImages {
        sigmas: PerClient,
    },
    NoisyLabels {
        flip_ratios: PerClient,
    },
}

fn default_concentration() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    #[serde(flatten)]
    pub kind: DistributionKind,
    #[serde(default)]
    pub seed: u64,
}

impl DistributionSpec {
    pub fn iid(seed: u64) -> Self {
        Self {
            kind: DistributionKind::Iid,
            seed,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DistributionKind::Iid => "iid",
            DistributionKind::NonIid { .. } => "non-iid",
            DistributionKind::Sizes { .. } => "sizes",
            DistributionKind::NoisyImages { .. } => "noisy-images",
            DistributionKind::NoisyLabels { .. } => "noisy-labels",
        }
    }

    /// The per-client parameter that varies across clients, if any: size
    /// fraction, noise sigma or flip ratio.
    pub fn client_parameter(&self, n: usize) -> Result<Option<Vec<f64>>> {
        Ok(match &self.kind {
            DistributionKind::Sizes { fractions } => Some(fractions.resolve(n, "fractions")?),
            DistributionKind::NoisyImages { sigmas } => Some(sigmas.resolve(n, "sigmas")?),
            DistributionKind::NoisyLabels { flip_ratios } => {
                Some(flip_ratios.resolve(n, "flip_ratios")?)
            }
            _ => None,
        })
    }
}

/// Splits `base` into `n` client datasets according to `spec`.
pub fn generate_partitions(spec: &DistributionSpec, base: &Dataset, n: usize) -> Result<Vec<Dataset>> {
    if n == 0 {
        return Err(Error::InvalidDistribution("need at least one client".into()));
    }
    if base.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            available: base.len(),
        });
    }
    let mut rng = rng_for(spec.seed, Stream::Partition, &[]);
    let shape = base.shape();
    let name = |i: usize| format!("client-{i}");

    let index_sets: Vec<Vec<usize>> = match &spec.kind {
        DistributionKind::Iid
        | DistributionKind::NoisyImages { .. }
        | DistributionKind::NoisyLabels { .. } => stratified_split(base, n, &mut rng),
        DistributionKind::Sizes { fractions } => {
            let fr = fractions.resolve(n, "fractions")?;
            if fr.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
                return Err(Error::InvalidDistribution(
                    "size fractions must be positive".into(),
                ));
            }
            sized_split(base.len(), &fr, &mut rng)?
        }
        DistributionKind::NonIid { concentration } => {
            if !(*concentration > 0.0) || !concentration.is_finite() {
                return Err(Error::InvalidDistribution(
                    "non-iid concentration must be positive".into(),
                ));
            }
            dirichlet_split(base, n, *concentration, &mut rng)?
        }
    };

    let mut parts: Vec<Dataset> = index_sets
        .iter()
        .enumerate()
        .map(|(i, idx)| base.subset(name(i), idx))
        .collect();

    match &spec.kind {
        DistributionKind::NoisyImages { sigmas } => {
            let sigmas = sigmas.resolve(n, "sigmas")?;
            if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                return Err(Error::InvalidDistribution("noise sigma must be >= 0".into()));
            }
            for (i, (part, sigma)) in parts.iter_mut().zip(&sigmas).enumerate() {
                if *sigma == 0.0 {
                    continue;
                }
                let mut noise_rng = rng_for(spec.seed, Stream::Partition, &[1, i as u64]);
                let normal = Normal::new(0.0, *sigma)
                    .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
                for v in &mut part.features {
                    *v += normal.sample(&mut noise_rng);
                }
            }
        }
        DistributionKind::NoisyLabels { flip_ratios } => {
            let ratios = flip_ratios.resolve(n, "flip_ratios")?;
            if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::InvalidDistribution(
                    "flip ratios must lie in [0, 1]".into(),
                ));
            }
            for (i, (part, ratio)) in parts.iter_mut().zip(&ratios).enumerate() {
                if *ratio == 0.0 || shape.classes < 2 {
                    continue;
                }
                let mut flip_rng = rng_for(spec.seed, Stream::Partition, &[2, i as u64]);
                let count = (ratio * part.len() as f64).round() as usize;
                let mut order: Vec<usize> = (0..part.len()).collect();
                order.shuffle(&mut flip_rng);
                for &k in order.iter().take(count) {
                    let shift = flip_rng.random_range(1..shape.classes);
                    part.labels[k] = (part.labels[k] + shift) % shape.classes;
                }
            }
        }
        _ => {}
    }
    Ok(parts)
}

/// Shuffle within each class, then deal class by class round-robin so every
/// client gets the same size and class mix to within one sample.
fn stratified_split(base: &Dataset, n: usize, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let classes = base.shape().classes;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (k, &y) in base.labels().iter().enumerate() {
        pools[y].push(k);
    }
    let mut out = vec![Vec::new(); n];
    let mut next = 0usize;
    for pool in &mut pools {
        pool.shuffle(rng);
        for &k in pool.iter() {
            out[next % n].push(k);
            next += 1;
        }
    }
    out
}

fn sized_split(total: usize, fractions: &[f64], rng: &mut SimRng) -> Result<Vec<Vec<usize>>> {
    let sum: f64 = fractions.iter().sum();
    let mut counts: Vec<usize> = fractions
        .iter()
        .map(|f| (f / sum * total as f64).floor() as usize)
        .collect();
    // Largest-remainder rounding so the counts use the whole base set.
    let mut remainders: Vec<(usize, f64)> = fractions
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f / sum * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut left = total - counts.iter().sum::<usize>();
    for (i, _) in remainders {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    if counts.contains(&0) {
        return Err(Error::InsufficientSamples {
            needed: fractions.len(),
            available: total,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(counts.len());
    let mut start = 0;
    for c in counts {
        out.push(order[start..start + c].to_vec());
        start += c;
    }
    Ok(out)
}

fn dirichlet_split(
    base: &Dataset,
    n: usize,
    concentration: f64,
    rng: &mut SimRng,
) -> Result<Vec<Vec<usize>>> {
    let classes = base.shape().classes;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (k, &y) in base.labels().iter().enumerate() {
        pools[y].push(k);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let gamma =
        Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let total = base.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let size = total / n + usize::from(i < total % n);
        let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
        let norm: f64 = draws.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let mut idx = Vec::with_capacity(size);
        let mut want: Vec<usize> = draws
            .iter()
            .map(|p| (p / norm * size as f64).floor() as usize)
            .collect();
        let mut short = size - want.iter().sum::<usize>();
        let mut c = 0;
        while short > 0 {
            want[c % classes] += 1;
            short -= 1;
            c += 1;
        }
        for (class, &w) in want.iter().enumerate() {
            for _ in 0..w {
                let class = if pools[class].is_empty() {
                    // Fall back to the largest remaining pool.
                    (0..classes)
                        .max_by_key(|&c| (pools[c].len(), std::cmp::Reverse(c)))
                        .unwrap_or(class)
                } else {
                    class
                };
                if let Some(k) = pools[class].pop() {
                    idx.push(k);
                }
            }
        }
        out.push(idx);
    }
    Ok(out)
}

/// Mini-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_epochs() -> usize {
    1
}
fn default_lr() -> f64 {
    0.05
}
fn default_batch() -> usize {
    32
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    /// Set when the dataset was empty and no step was taken.
    pub empty_dataset: bool,
}

/// Trains a copy of `theta` on `data`. The shuffle order is fully
/// determined by `seed`.
pub fn train(theta: &ModelParams, data: &Dataset, settings: &TrainSettings, seed: u64) -> Result<TrainOutput> {
    let shape = data.shape();
    if theta.len() != shape.param_len() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} parameters, data expects {}",
            theta.len(),
            shape.param_len()
        )));
    }
    if data.is_empty() {
        return Ok(TrainOutput {
            params: theta.clone(),
            empty_dataset: true,
        });
    }
    if settings.epochs == 0 || settings.learning_rate == 0.0 {
        return Ok(TrainOutput {
            params: theta.clone(),
            empty_dataset: false,
        });
    }
    let (d, c) = (shape.features, shape.classes);
    let mut w = theta.as_slice().to_vec();
    let mut grad = vec![0.0; w.len()];
    let mut scores = vec![0.0; c];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = settings.batch_size.clamp(1, data.len());
    let mut rng = SimRng::seed_from_u64(seed);
    let rng = &mut rng;

    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &k in chunk {
                let x = data.row(k);
                let y = data.labels[k];
                ModelParams::scores_raw(&w, shape, x, &mut scores);
                softmax_in_place(&mut scores);
                scores[y] -= 1.0;
                let (gw, gb) = grad.split_at_mut(d * c);
                for (cls, &g) in scores.iter().enumerate() {
                    for (gwk, xk) in gw[cls * d..(cls + 1) * d].iter_mut().zip(x) {
                        *gwk += g * xk;
                    }
                    gb[cls] += g;
                }
            }
            let step = settings.learning_rate / chunk.len() as f64;
            for (wk, gk) in w.iter_mut().zip(&grad) {
                *wk -= step * gk;
            }
        }
    }
    Ok(TrainOutput {
        params: ModelParams::new(w)?,
        empty_dataset: false,
    })
}

impl ModelParams {
    fn scores_raw(w: &[f64], shape: ModelShape, x: &[f64], out: &mut [f64]) {
        let (wm, b) = w.split_at(shape.features * shape.classes);
        for (c, o) in out.iter_mut().enumerate() {
            let row = &wm[c * shape.features..(c + 1) * shape.features];
            *o = b[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Classification accuracy. Ties go to the lowest class index.
pub fn eval(theta: &ModelParams, data: &Dataset) -> Result<f64> {
    let shape = data.shape();
    if theta.len() != shape.param_len() {
        return Err(Error::ShapeMismatch(format!(
            "model has {} parameters, data expects {}",
            theta.len(),
            shape.param_len()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut scores = vec![0.0; shape.classes];
    let mut correct = 0usize;
    for k in 0..data.len() {
        theta.scores(shape, data.row(k), &mut scores);
        let mut best = 0;
        for c in 1..shape.classes {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        if best == data.labels[k] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(count: usize, seed: u64) -> Dataset {
        BlobTask {
            seed,
            ..BlobTask::default()
        }
        .sample("base", count, Stream::BlobTrain)
        .unwrap()
    }

    #[test]
    fn iid_split_is_balanced() {
        let base = blobs(100, 1);
        let parts = generate_partitions(&DistributionSpec::iid(3), &base, 2).unwrap();
        assert_eq!(parts[0].len(), 50);
        assert_eq!(parts[1].len(), 50);
        let (h0, h1) = (parts[0].class_histogram(), parts[1].class_histogram());
        for (a, b) in h0.iter().zip(&h1) {
            assert!(a.abs_diff(*b) <= 1);
        }
    }

    #[test]
    fn zero_flip_ratio_matches_iid() {
        let base = blobs(120, 2);
        let iid = generate_partitions(&DistributionSpec::iid(9), &base, 3).unwrap();
        let noisy = generate_partitions(
            &DistributionSpec {
                kind: DistributionKind::NoisyLabels {
                    flip_ratios: PerClient::List(vec![0.0; 3]),
                },
                seed: 9,
            },
            &base,
            3,
        )
        .unwrap();
        assert_eq!(iid, noisy);
    }

    #[test]
    fn size_fractions_are_respected() {
        let base = blobs(400, 3);
        let spec = DistributionSpec {
            kind: DistributionKind::Sizes {
                fractions: PerClient::List(vec![0.75, 0.25]),
            },
            seed: 1,
        };
        let parts = generate_partitions(&spec, &base, 2).unwrap();
        assert_eq!(parts[0].len(), 300);
        assert_eq!(parts[1].len(), 100);
    }

    #[test]
    fn flip_ratio_flips_that_many_labels() {
        let base = blobs(200, 4);
        let iid = generate_partitions(&DistributionSpec::iid(5), &base, 2).unwrap();
        let spec = DistributionSpec {
            kind: DistributionKind::NoisyLabels {
                flip_ratios: PerClient::List(vec![0.0, 0.5]),
            },
            seed: 5,
        };
        let noisy = generate_partitions(&spec, &base, 2).unwrap();
        assert_eq!(iid[0], noisy[0]);
        let changed = iid[1]
            .labels()
            .iter()
            .zip(noisy[1].labels())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 50);
    }

    #[test]
    fn non_iid_skews_labels_and_keeps_sizes() {
        let base = blobs(400, 6);
        let spec = DistributionSpec {
            kind: DistributionKind::NonIid { concentration: 0.1 },
            seed: 2,
        };
        let parts = generate_partitions(&spec, &base, 4).unwrap();
        assert!(parts.iter().all(|p| p.len() == 100));
        let skewed = parts
            .iter()
            .filter(|p| *p.class_histogram().iter().max().unwrap() > 50)
            .count();
        assert!(skewed >= 2);
    }

    #[test]
    fn partition_errors() {
        let base = blobs(3, 1);
        assert_eq!(
            generate_partitions(&DistributionSpec::iid(0), &base, 4),
            Err(Error::InsufficientSamples {
                needed: 4,
                available: 3
            })
        );
        let bad = DistributionSpec {
            kind: DistributionKind::NoisyLabels {
                flip_ratios: PerClient::List(vec![1.5]),
            },
            seed: 0,
        };
        assert!(generate_partitions(&bad, &base, 1).is_err());
    }

    #[test]
    fn zero_step_training_is_identity() {
        let data = blobs(64, 7);
        let theta = ModelParams::new((0..data.shape().param_len()).map(|k| k as f64 * 0.01).collect()).unwrap();
        let lr0 = TrainSettings {
            learning_rate: 0.0,
            ..TrainSettings::default()
        };
        assert_eq!(train(&theta, &data, &lr0, 1).unwrap().params, theta);
        let ep0 = TrainSettings {
            epochs: 0,
            ..TrainSettings::default()
        };
        assert_eq!(train(&theta, &data, &ep0, 1).unwrap().params, theta);
    }

    #[test]
    fn empty_dataset_sets_warning() {
        let shape = ModelShape {
            features: 2,
            classes: 2,
        };
        let theta = ModelParams::zeros(shape);
        let out = train(&theta, &Dataset::empty("e", shape), &TrainSettings::default(), 0).unwrap();
        assert!(out.empty_dataset);
        assert_eq!(out.params, theta);
        assert_eq!(eval(&theta, &Dataset::empty("e", shape)), Err(Error::EmptyEvalSet));
    }

    #[test]
    fn separable_blobs_are_learned() {
        let task = BlobTask {
            features: 2,
            classes: 2,
            center_scale: 4.0,
            spread: 0.3,
            seed: 11,
        };
        let data = task.sample("sep", 200, Stream::BlobTrain).unwrap();
        let theta = ModelParams::zeros(task.shape());
        let settings = TrainSettings {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 32,
        };
        let trained = train(&theta, &data, &settings, 3).unwrap().params;
        assert!(eval(&trained, &data).unwrap() >= 0.95);
    }

    #[test]
    fn tiny_dataset_fit_to_perfection() {
        let task = BlobTask {
            features: 4,
            classes: 2,
            center_scale: 3.0,
            spread: 0.2,
            seed: 5,
        };
        let data = task.sample("ten", 10, Stream::BlobTrain).unwrap();
        let settings = TrainSettings {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 32,
        };
        let trained = train(&ModelParams::zeros(task.shape()), &data, &settings, 0).unwrap();
        assert_eq!(eval(&trained.params, &data).unwrap(), 1.0);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let data = blobs(100, 8);
        let acc = eval(&ModelParams::zeros(data.shape()), &data).unwrap();
        let zeros = data.labels().iter().filter(|&&y| y == 0).count();
        assert_eq!(acc, zeros as f64 / 100.0);
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn nan_rejected_at_construction() {
        assert!(ModelParams::new(vec![0.0, f64::NAN]).is_err());
        assert!(ModelParams::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(100, 9);
        let theta = ModelParams::zeros(data.shape());
        let s = TrainSettings::default();
        let a = train(&theta, &data, &s, 42).unwrap();
        let b = train(&theta, &data, &s, 42).unwrap();
        assert_eq!(a, b);
        let c = train(&theta, &data, &s, 43).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn weighted_average_matches_hand_arithmetic() {
        let a = ModelParams::new(vec![0.0, 2.0]).unwrap();
        let b = ModelParams::new(vec![4.0, 0.0]).unwrap();
        let avg = ModelParams::weighted_average([(&a, 1.0), (&b, 3.0)]).unwrap();
        assert_eq!(avg.as_slice(), &[3.0, 0.5]);
        let c = ModelParams::new(vec![1.0]).unwrap();
        assert!(ModelParams::weighted_average([(&a, 1.0), (&c, 1.0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f0,f1,label\n0.5,1.5,1\n-2,3.25,0\n").unwrap();
        let ds = Dataset::load_csv(&path, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), ModelShape { features: 2, classes: 2 });
        assert_eq!(ds.row(1), &[-2.0, 3.25]);
        std::fs::write(&path, "a,b,label\n0,0,0\n").unwrap();
        assert!(Dataset::load_csv(&path, None).is_err());
    }
}
