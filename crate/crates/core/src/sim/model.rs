//! Logistic regression: summed per-sample gradients and losses.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

use crate::error::{param, Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_shapes(w: &DVector<f64>, features: &DMatrix<f64>, labels: &DVector<f64>) -> Result<()> {
    if features.nrows() != labels.len() {
        return param(format!("{} feature rows for {} labels", features.nrows(), labels.len()));
    }
    if features.ncols() != w.len() {
        return param(format!("{} feature columns for a length-{} model", features.ncols(), w.len()));
    }
    Ok(())
}

/// `Σ_i (σ(x_iᵀw) − y_i) x_i`, summed, not averaged.
pub fn logistic_gradient(
    w: &DVector<f64>,
    features: &DMatrix<f64>,
    labels: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_shapes(w, features, labels)?;
    let residual = (features * w).zip_map(labels, |z, y| sigmoid(z) - y);
    Ok(features.tr_mul(&residual))
}

/// `Σ_i ln(1 + e^{z_i}) − y_i z_i` with `z_i = x_iᵀw`.
pub fn logistic_loss_sum(
    w: &DVector<f64>,
    features: &DMatrix<f64>,
    labels: &DVector<f64>,
) -> Result<f64> {
    check_shapes(w, features, labels)?;
    Ok((features * w).zip_map(labels, |z, y| softplus(z) - y * z).sum())
}

/// Features with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
    pub seed: Option<u64>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Samples `range` as a borrowed-free copy.
    pub fn rows(&self, range: std::ops::Range<usize>) -> (DMatrix<f64>, DVector<f64>) {
        let len = range.end - range.start;
        (
            self.features.rows(range.start, len).into_owned(),
            self.labels.rows(range.start, len).into_owned(),
        )
    }

    /// First `at` samples and the rest.
    pub fn split(&self, at: usize) -> (SyntheticDataset, SyntheticDataset) {
        let (fa, la) = self.rows(0..at);
        let (fb, lb) = self.rows(at..self.len());
        (
            SyntheticDataset { features: fa, labels: la, seed: self.seed },
            SyntheticDataset { features: fb, labels: lb, seed: self.seed },
        )
    }

    /// Mean logistic loss of `w` on this data.
    pub fn mean_loss(&self, w: &DVector<f64>) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        Ok(logistic_loss_sum(w, &self.features, &self.labels)? / self.len() as f64)
    }

    /// Reads rows of `d` features followed by a 0/1 label, without a header.
    pub fn from_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Parameter(format!("dataset CSV: {e}")))?;
            let parsed: Vec<f64> = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parameter(format!("dataset CSV line {}: {e}", line + 1)))?;
            if parsed.len() < 2 || width.is_some_and(|w| w != parsed.len()) {
                return param(format!("dataset CSV line {}: inconsistent width", line + 1));
            }
            width = Some(parsed.len());
            let (x, y) = parsed.split_at(parsed.len() - 1);
            if y[0] != 0.0 && y[0] != 1.0 {
                return param(format!("dataset CSV line {}: label must be 0 or 1", line + 1));
            }
            values.extend_from_slice(x);
            labels.push(y[0]);
        }
        let Some(width) = width else {
            return param("dataset CSV is empty");
        };
        Ok(SyntheticDataset {
            features: DMatrix::from_row_slice(labels.len(), width - 1, &values),
            labels: DVector::from_vec(labels),
            seed: None,
        })
    }
}

/// `M` standard-normal feature rows with labels drawn from `Bernoulli(σ(xᵀw*))`
/// for a planted unit-norm `w*`.
pub fn make_synthetic_dataset(samples: usize, dim: usize, seed: u64) -> Result<SyntheticDataset> {
    if samples == 0 || dim == 0 {
        return param("dataset needs M >= 1 and d >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    let planted = planted.normalize();
    let values: Vec<f64> = (0..samples * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let features = DMatrix::from_row_slice(samples, dim, &values);
    let labels = (&features * &planted).map(|z| {
        let coin = Bernoulli::new(sigmoid(z)).expect("probability in [0, 1]");
        if coin.sample(&mut rng) {
            1.0
        } else {
            0.0
        }
    });
    Ok(SyntheticDataset { features, labels, seed: Some(seed) })
}
