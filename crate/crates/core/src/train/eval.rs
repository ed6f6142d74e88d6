//! Top-1 evaluation and linear domain probes on frozen features.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::tensor::{argmax_rows, Real};

/// Clips per forward pass during evaluation.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
    /// Accuracy per class; `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
}

/// Predicted class for every clip of `dataset`.
pub fn predict<T: Real>(bundle: &ModelBundle<T>, dataset: &Dataset) -> Result<Vec<usize>> {
    let classes = bundle.config().classes;
    let mut out = Vec::with_capacity(dataset.len());
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let clips = dataset.stack(chunk)?.cast::<T>();
        let logits = bundle.classify(&bundle.encode(&clips)?)?;
        out.extend(argmax_rows(logits.data(), classes));
    }
    Ok(out)
}

/// Accuracy of the classifier on full clips, overall and per class.
pub fn evaluate<T: Real>(bundle: &ModelBundle<T>, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Manifest("cannot evaluate an empty split".into()));
    }
    let labels = dataset.labels(&(0..dataset.len()).collect::<Vec<_>>())?;
    let preds = predict(bundle, dataset)?;
    let classes = bundle.config().classes;
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&y, &p) in labels.iter().zip(&preds) {
        if y >= classes {
            return Err(Error::Index { index: y, bound: classes });
        }
        totals[y] += 1;
        hits[y] += usize::from(y == p);
    }
    let correct: usize = hits.iter().sum();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        correct,
        n: labels.len(),
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
    })
}

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows * dim != data.len() || dim == 0 {
            return Err(Error::shape("features", &[rows, dim], &[data.len()]));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn concat(a: &Features, b: &Features) -> Result<Features> {
        if a.dim != b.dim {
            return Err(Error::shape("features", &[a.dim], &[b.dim]));
        }
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Features::new(a.rows + b.rows, a.dim, data)
    }
}

/// Encoder features of every clip.
pub fn dataset_features<T: Real>(bundle: &ModelBundle<T>, dataset: &Dataset) -> Result<Features> {
    let dim = bundle.config().encoder.embed_dim;
    let mut data = Vec::with_capacity(dataset.len() * dim);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let feats = bundle.encode(&dataset.stack(chunk)?.cast::<T>())?;
        data.extend(feats.data().iter().map(|v| v.as_f64()));
    }
    Features::new(dataset.len(), dim, data)
}

/// Raw pixels of every clip, flattened.
pub fn pixel_features(dataset: &Dataset) -> Result<Features> {
    let dim = dataset
        .clips
        .first()
        .map(|c| c.frames.numel())
        .ok_or_else(|| Error::Manifest("empty dataset".into()))?;
    let data = dataset
        .clips
        .iter()
        .flat_map(|c| c.frames.data().iter().map(|&v| v as f64))
        .collect();
    Features::new(dataset.len(), dim, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            lr: 0.5,
            l2: 1e-3,
        }
    }
}

/// Logistic regression fitted by full-batch gradient descent on standardized
/// inputs. Deterministic: zero initialization, fixed iteration count.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl LinearProbe {
    /// `y[i]` is 0 or 1.
    pub fn fit(x: &Features, y: &[f64], config: ProbeConfig) -> Result<Self> {
        if x.rows != y.len() || x.rows == 0 {
            return Err(Error::Contract(format!("{} rows for {} targets", x.rows, y.len())));
        }
        let (n, d) = (x.rows, x.dim);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale: Vec<f64> = var.iter().map(|s| 1.0 / (s / n as f64).sqrt().max(1e-8)).collect();
        let z: Vec<f64> = (0..n)
            .flat_map(|i| {
                x.row(i)
                    .iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), s)| (v - m) * s)
                    .collect::<Vec<_>>()
            })
            .collect();

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        for _ in 0..config.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for i in 0..n {
                let row = &z[i * d..(i + 1) * d];
                let logit = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = sigmoid(logit) - y[i];
                gb += r;
                for (g, a) in gw.iter_mut().zip(row) {
                    *g += r * a;
                }
            }
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= config.lr * (g / n as f64 + config.l2 * *wj);
            }
            b -= config.lr * gb / n as f64;
        }
        Ok(Self { mean, scale, w, b })
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        let logit = self.b
            + row
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.w)
                .map(|(((v, m), s), w)| (v - m) * s * w)
                .sum::<f64>();
        sigmoid(logit)
    }

    /// Fraction of rows whose thresholded prediction matches `y`.
    pub fn accuracy(&self, x: &Features, y: &[f64]) -> f64 {
        let hits = (0..x.rows)
            .filter(|&i| (self.probability(x.row(i)) >= 0.5) == (y[i] >= 0.5))
            .count();
        hits as f64 / x.rows as f64
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fits a fresh source-vs-target probe on the training features and reports
/// its accuracy on the held-out features.
pub fn domain_probe(
    source_train: &Features,
    target_train: &Features,
    source_test: &Features,
    target_test: &Features,
    config: ProbeConfig,
) -> Result<f64> {
    let labels = |s: &Features, t: &Features| -> Vec<f64> {
        std::iter::repeat_n(1.0, s.rows).chain(std::iter::repeat_n(0.0, t.rows)).collect()
    };
    let train = Features::concat(source_train, target_train)?;
    let probe = LinearProbe::fit(&train, &labels(source_train, target_train), config)?;
    let test = Features::concat(source_test, target_test)?;
    Ok(probe.accuracy(&test, &labels(source_test, target_test)))
}
