use crate::error::{contract, Result};
use crate::linalg::{norm2, Matrix};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Blobs,
    RandomLabel,
    /// Blobs whose every token is a noisy copy of the class center.
    SequenceBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Cluster spread; ignored for random labels.
    pub noise: f64,
    /// Tokens per example; 1 for vector data.
    pub seq_len: usize,
    pub seed: u64,
}

/// Inputs are `1 x dim` rows for vector data and `seq_len x dim` for
/// sequences. `ids` are indices into the generated dataset, so subsets can
/// be audited.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Matrix>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub ids: Vec<usize>,
    pub spec: Option<DatasetSpec>,
}

impl Dataset {
    pub fn empty(num_classes: usize) -> Dataset {
        Dataset {
            inputs: Vec::new(),
            labels: Vec::new(),
            num_classes,
            ids: Vec::new(),
            spec: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at positions `idx`, keeping their original ids.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            spec: self.spec.clone(),
        }
    }

    /// Concatenation, e.g. retain ∪ forget.
    pub fn union(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.inputs.extend(other.inputs.iter().cloned());
        out.labels.extend(&other.labels);
        out.ids.extend(&other.ids);
        out
    }

    pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
        let mut stream = RngStream::new(spec.seed);
        let mut ds = match spec.kind {
            GeneratorKind::Blobs => gen_blobs(&mut stream, spec.n, spec.num_classes, spec.dim, spec.noise)?,
            GeneratorKind::RandomLabel => gen_random_label(&mut stream, spec.n, spec.num_classes, spec.dim)?,
            GeneratorKind::SequenceBlobs => gen_sequence_blobs(
                &mut stream,
                spec.n,
                spec.num_classes,
                spec.seq_len,
                spec.dim,
                spec.noise,
            )?,
        };
        ds.spec = Some(spec.clone());
        Ok(ds)
    }
}

fn class_centers(stream: &mut RngStream, c: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..c)
        .map(|_| {
            let v = stream.gaussian_vec(dim, 0.0, 1.0);
            let n = norm2(&v);
            v.iter().map(|x| radius * x / n).collect()
        })
        .collect()
}

fn check_blob_args(n: usize, c: usize, dim: usize, spread: f64) -> Result<()> {
    if c < 2 || n < c || dim == 0 {
        return contract(format!("blobs need C >= 2, n >= C and dim >= 1 (n={n}, C={c}, dim={dim})"));
    }
    if !(spread > 0.0) {
        return contract(format!("blob spread must be > 0, got {spread}"));
    }
    Ok(())
}

/// `C` clusters with centers on the sphere of radius `4·spread`, per-axis
/// noise `spread`, labels assigned round-robin. Centers are drawn first,
/// then examples in order.
pub fn gen_blobs(stream: &mut RngStream, n: usize, c: usize, dim: usize, spread: f64) -> Result<Dataset> {
    check_blob_args(n, c, dim, spread)?;
    let centers = class_centers(stream, c, dim, 4.0 * spread);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let inputs = labels
        .iter()
        .map(|&y| {
            let x: Vec<f64> = centers[y].iter().map(|m| m + spread * stream.next_gaussian()).collect();
            Matrix::row_vector(&x)
        })
        .collect();
    Ok(Dataset {
        inputs,
        labels,
        num_classes: c,
        ids: (0..n).collect(),
        spec: None,
    })
}

/// Standard Gaussian inputs (all drawn first), then uniform labels.
pub fn gen_random_label(stream: &mut RngStream, n: usize, c: usize, dim: usize) -> Result<Dataset> {
    if n == 0 || c < 2 || dim == 0 {
        return contract(format!("random-label data need n >= 1, C >= 2, dim >= 1 (n={n}, C={c}, dim={dim})"));
    }
    let inputs: Vec<Matrix> = (0..n)
        .map(|_| Matrix::row_vector(&stream.gaussian_vec(dim, 0.0, 1.0)))
        .collect();
    let labels = (0..n).map(|_| stream.next_index(c)).collect();
    Ok(Dataset {
        inputs,
        labels,
        num_classes: c,
        ids: (0..n).collect(),
        spec: None,
    })
}

pub fn gen_sequence_blobs(
    stream: &mut RngStream,
    n: usize,
    c: usize,
    seq_len: usize,
    dim: usize,
    spread: f64,
) -> Result<Dataset> {
    check_blob_args(n, c, dim, spread)?;
    if seq_len == 0 {
        return contract("sequence length must be at least 1");
    }
    let centers = class_centers(stream, c, dim, 4.0 * spread);
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let inputs = labels
        .iter()
        .map(|&y| {
            let mut x = Matrix::zeros(seq_len, dim);
            for t in 0..seq_len {
                for (j, m) in centers[y].iter().enumerate() {
                    x[(t, j)] = m + spread * stream.next_gaussian();
                }
            }
            x
        })
        .collect();
    Ok(Dataset {
        inputs,
        labels,
        num_classes: c,
        ids: (0..n).collect(),
        spec: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub forget_fraction: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

/// Seeded permutation cut into forget (first `⌊n·f⌋`), holdout (next
/// `⌊n·h⌋`), and retain (the rest). Each part lists its rows in ascending
/// original order.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (f, h) = (spec.forget_fraction, spec.holdout_fraction);
    if !(f > 0.0 && f < 1.0) || !(h > 0.0 && h < 1.0) || f + h >= 1.0 {
        return contract(format!(
            "split fractions must lie in (0, 1) with sum < 1, got forget {f}, holdout {h}"
        ));
    }
    let n = ds.len();
    let n_f = (n as f64 * f).floor() as usize;
    let n_h = (n as f64 * h).floor() as usize;
    let perm = RngStream::new(spec.seed).permutation(n);
    let part = |range: std::ops::Range<usize>| {
        let mut idx = perm[range].to_vec();
        idx.sort_unstable();
        ds.subset(&idx)
    };
    let forget = part(0..n_f);
    let holdout = part(n_f..n_f + n_h);
    let retain = part(n_f + n_h..n);
    Ok((retain, forget, holdout))
}
