//! Linear regression of cross-lingual similarity on pair features.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, Matrix};
use crate::scalar::Scalar;
use crate::vecstore::LanguageTag;

/// One language pair with its feature vector and regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample<S> {
    pub lang1: LanguageTag,
    pub lang2: LanguageTag,
    pub features: Vec<S>,
    pub target: S,
}

impl<S> PairSample<S> {
    pub fn involves(&self, lang: &LanguageTag) -> bool {
        &self.lang1 == lang || &self.lang2 == lang
    }
}

/// Ordinary least squares with an unpenalised intercept.
///
/// A rank-deficient design is retried with a small ridge on the slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegression<S> {
    pub intercept: S,
    pub coefficients: Vec<S>,
    /// Ridge applied to the slopes; 0 for plain OLS.
    pub ridge: f64,
}

impl<S: Scalar> LinearRegression<S> {
    /// Fits with the given ridge on the centred design.
    pub fn fit_ridge(x: &Matrix<S>, y: &[S], ridge: f64) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        if n == 0 {
            return Err(Error::InsufficientData("no training rows".into()));
        }
        if y.len() != n {
            return Err(Error::Dimension { expected: n, got: y.len() });
        }
        let nf = S::from_usize_lossy(n);
        let mut means = vec![S::zero(); p];
        for i in 0..n {
            for (m, &v) in means.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= nf);
        let y_mean = y.iter().copied().sum::<S>() / nf;

        let mut xc = x.clone();
        for i in 0..n {
            for (v, &m) in xc.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        let yc = Matrix::from_row_major(n, 1, y.iter().map(|&v| v - y_mean).collect())?;
        let mut gram = xc.t_matmul(&xc)?;
        let r = S::from_f64_lossy(ridge);
        for j in 0..p {
            gram[(j, j)] += r;
        }
        let rhs = xc.t_matmul(&yc)?;
        let beta = solve_spd(&gram, &rhs)?;
        let coefficients: Vec<S> = (0..p).map(|j| beta[(j, 0)]).collect();
        let intercept = y_mean - coefficients.iter().zip(&means).map(|(&b, &m)| b * m).sum::<S>();
        Ok(Self {
            intercept,
            coefficients,
            ridge,
        })
    }

    /// Plain OLS, falling back to a ridge of `1e-6 · trace(XcᵀXc) / p` when
    /// the centred Gram matrix is singular.
    pub fn fit(x: &Matrix<S>, y: &[S]) -> Result<Self> {
        match Self::fit_ridge(x, y, 0.0) {
            Err(Error::Singular) => {
                let (n, p) = (x.rows(), x.cols().max(1));
                let mut trace = 0.0;
                for j in 0..x.cols() {
                    let mean = (0..n).map(|i| x[(i, j)].to_f64_lossy()).sum::<f64>() / n as f64;
                    trace += (0..n).map(|i| (x[(i, j)].to_f64_lossy() - mean).powi(2)).sum::<f64>();
                }
                Self::fit_ridge(x, y, (1e-6 * trace / p as f64).max(1e-12))
            }
            other => other,
        }
    }

    pub fn predict(&self, features: &[S]) -> S {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(features)
                .map(|(&b, &v)| b * v)
                .sum::<S>()
    }

    /// Mean absolute error over the rows of `x`.
    pub fn mae(&self, x: &Matrix<S>, y: &[S]) -> S {
        let n = x.rows();
        let total: S = (0..n).map(|i| (self.predict(x.row(i)) - y[i]).abs()).sum();
        total / S::from_usize_lossy(n.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaeAveraging {
    /// Every held-out pair counts once.
    #[default]
    Micro,
    /// Every fold counts once.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub held_out: LanguageTag,
    pub n_train: usize,
    pub n_test: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureImportance {
    pub name: String,
    /// Mean increase in MAE when the column is shuffled.
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub feature_names: Vec<String>,
    pub averaging: MaeAveraging,
    pub folds: Vec<FoldResult>,
    pub mean_mae: f64,
    /// Fit on all pairs.
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub importances: Vec<FeatureImportance>,
}

fn design<S: Scalar>(samples: &[&PairSample<S>]) -> Result<(Matrix<S>, Vec<S>)> {
    let rows: Vec<&[S]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let x = Matrix::from_rows(&rows)?;
    Ok((x, samples.iter().map(|s| s.target).collect()))
}

/// Leave-one-language-out evaluation: each fold holds out every pair that
/// involves one language and trains on the rest.
pub fn predict_xsim_loo<S: Scalar>(
    samples: &[PairSample<S>],
    feature_names: &[&str],
    averaging: MaeAveraging,
) -> Result<RegressionReport> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no language pairs".into()));
    }
    let p = samples[0].features.len();
    if p != feature_names.len() {
        return Err(Error::Dimension {
            expected: feature_names.len(),
            got: p,
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.features.len() != p) {
        return Err(Error::Dimension {
            expected: p,
            got: bad.features.len(),
        });
    }
    let languages: BTreeSet<&LanguageTag> = samples.iter().flat_map(|s| [&s.lang1, &s.lang2]).collect();
    if languages.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "leave-one-language-out needs at least 3 languages, got {}",
            languages.len()
        )));
    }

    let mut folds = Vec::new();
    let (mut abs_sum, mut abs_count) = (0.0, 0usize);
    for &lang in &languages {
        let (test, train): (Vec<&PairSample<S>>, Vec<&PairSample<S>>) =
            samples.iter().partition(|s| s.involves(lang));
        if train.is_empty() {
            return Err(Error::InsufficientData(format!("no training pairs without {lang}")));
        }
        let (xtr, ytr) = design(&train)?;
        let model = LinearRegression::fit(&xtr, &ytr)?;
        let errs: Vec<f64> = test
            .iter()
            .map(|s| (model.predict(&s.features) - s.target).abs().to_f64_lossy())
            .collect();
        abs_sum += errs.iter().sum::<f64>();
        abs_count += errs.len();
        folds.push(FoldResult {
            held_out: lang.clone(),
            n_train: train.len(),
            n_test: test.len(),
            mae: errs.iter().sum::<f64>() / errs.len() as f64,
        });
    }
    let mean_mae = match averaging {
        MaeAveraging::Micro => abs_sum / abs_count as f64,
        MaeAveraging::Macro => folds.iter().map(|f| f.mae).sum::<f64>() / folds.len() as f64,
    };

    let all: Vec<&PairSample<S>> = samples.iter().collect();
    let (x, y) = design(&all)?;
    let full = LinearRegression::fit(&x, &y)?;
    Ok(RegressionReport {
        feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
        averaging,
        folds,
        mean_mae,
        intercept: full.intercept.to_f64_lossy(),
        coefficients: full.coefficients.iter().map(|c| c.to_f64_lossy()).collect(),
        importances: Vec::new(),
    })
}

/// Increase in MAE of `model` when each column of `x` is shuffled,
/// `n_shuffles` times per column. Deterministic for a given seed.
pub fn permutation_importance<S: Scalar>(
    model: &LinearRegression<S>,
    x: &Matrix<S>,
    y: &[S],
    feature_names: &[&str],
    n_shuffles: usize,
    seed: u64,
) -> Result<Vec<FeatureImportance>> {
    if x.cols() != feature_names.len() {
        return Err(Error::Dimension {
            expected: feature_names.len(),
            got: x.cols(),
        });
    }
    if n_shuffles == 0 {
        return Err(Error::InvalidArgument("n_shuffles must be positive".into()));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyInput("validation set is empty"));
    }
    let base = model.mae(x, y).to_f64_lossy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(x.cols());
    for (j, name) in feature_names.iter().enumerate() {
        let column: Vec<S> = (0..x.rows()).map(|i| x[(i, j)]).collect();
        let mut shuffled = column.clone();
        let mut deltas = Vec::with_capacity(n_shuffles);
        let mut xp = x.clone();
        for _ in 0..n_shuffles {
            shuffled.copy_from_slice(&column);
            shuffled.shuffle(&mut rng);
            for (i, &v) in shuffled.iter().enumerate() {
                xp[(i, j)] = v;
            }
            deltas.push(model.mae(&xp, y).to_f64_lossy() - base);
        }
        let mean = deltas.iter().sum::<f64>() / n_shuffles as f64;
        let std = if n_shuffles > 1 {
            (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_shuffles - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(FeatureImportance {
            name: name.to_string(),
            mean,
            std,
        });
    }
    Ok(out)
}

/// Leave-one-language-out MAE after pairing each target with the features
/// of a randomly chosen other pair.
pub fn shuffled_baseline<S: Scalar>(
    samples: &[PairSample<S>],
    feature_names: &[&str],
    averaging: MaeAveraging,
    seed: u64,
) -> Result<f64> {
    let mut rows: Vec<Vec<S>> = samples.iter().map(|s| s.features.clone()).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let noisy: Vec<PairSample<S>> = samples
        .iter()
        .zip(rows)
        .map(|(s, features)| PairSample {
            features,
            ..s.clone()
        })
        .collect();
    Ok(predict_xsim_loo(&noisy, feature_names, averaging)?.mean_mae)
}
