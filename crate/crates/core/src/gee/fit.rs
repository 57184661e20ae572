use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::correlation::{estimate_exchangeable, estimate_unstructured_correlation, make_positive_definite, WorkingCorrelation};
use super::{BlockLayout, CorrelationKind, Design, GeeError, GeeSettings, QicVariant, INTERCEPT};
use crate::stats;

/// Linear predictors beyond this magnitude mean the fit is running off to
/// infinity.
const SEPARATION_ETA: f64 = 50.0;
const PROB_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Robust (sandwich) covariance, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub quasi_likelihood: f64,
    /// trace(Omega_I * V_robust).
    pub trace_term: f64,
    pub qic: f64,
    /// `None` when there are too few rows for the small-sample correction.
    pub qicc: Option<f64>,
    pub n_clusters: usize,
    pub n_rows: usize,
    pub converged: bool,
    pub iterations: usize,
    pub correlation: WorkingCorrelation,
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

impl ModelFit {
    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.coefficients[i])
    }

    pub fn p_value(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.p_values[i])
    }

    /// Selection criterion for `variant`; QICC falls back to +inf when undefined.
    pub fn criterion(&self, variant: QicVariant) -> f64 {
        match variant {
            QicVariant::Qic => self.qic,
            QicVariant::Qicc => self.qicc.unwrap_or(f64::INFINITY),
        }
    }

    /// Fitted probabilities for every row of `design`.
    pub fn predict(&self, design: &Design) -> Result<Vec<f64>, GeeError> {
        let x = design.model_matrix(&self.terms)?;
        let eta = x * DVector::from_column_slice(&self.coefficients);
        Ok(eta.iter().map(|&e| logistic(e)).collect())
    }
}

pub(crate) fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Mean, variance weight and Pearson residual per row.
struct Moments {
    mu: DVector<f64>,
    sqrt_a: DVector<f64>,
    pearson: DVector<f64>,
}

fn moments(x: &DMatrix<f64>, beta: &DVector<f64>, y: &DVector<f64>) -> Moments {
    let eta = x * beta;
    let mu = eta.map(|e| logistic(e).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
    let sqrt_a = mu.map(|m| (m * (1.0 - m)).sqrt());
    let pearson = DVector::from_fn(y.len(), |i, _| (y[i] - mu[i]) / sqrt_a[i]);
    Moments { mu, sqrt_a, pearson }
}

/// Whitened model matrix `A^{1/2} X`.
fn whiten(x: &DMatrix<f64>, sqrt_a: &DVector<f64>) -> DMatrix<f64> {
    let mut xt = x.clone();
    for (i, mut row) in xt.row_iter_mut().enumerate() {
        row *= sqrt_a[i];
    }
    xt
}

struct Accumulated {
    info: DMatrix<f64>,
    /// Score contribution of every block.
    block_scores: Vec<DVector<f64>>,
}

/// Sums `X~' R^-1 X~` and the per-block `X~' R^-1 r`.
fn accumulate(
    xt: &DMatrix<f64>,
    r: &DVector<f64>,
    layout: &BlockLayout,
    corr: &WorkingCorrelation,
    with_info: bool,
) -> Result<Accumulated, GeeError> {
    let p = xt.ncols();
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut block_scores = Vec::with_capacity(layout.ranges.len());
    let identity = corr.kind == CorrelationKind::Independence;
    let mut cache: HashMap<Vec<usize>, Cholesky<f64, Dyn>> = HashMap::new();
    for range in &layout.ranges {
        let len = range.len();
        if identity || len == 1 {
            let mut u = DVector::<f64>::zeros(p);
            for i in range.clone() {
                let row = xt.row(i);
                for j in 0..p {
                    u[j] += row[j] * r[i];
                    if with_info {
                        for k in 0..=j {
                            info[(j, k)] += row[j] * row[k];
                        }
                    }
                }
            }
            block_scores.push(u);
            continue;
        }
        let positions = layout.position[range.clone()].to_vec();
        let chol = match cache.get(&positions) {
            Some(c) => c.clone(),
            None => {
                let c = corr.block(&positions).cholesky().ok_or(GeeError::RankDeficient)?;
                cache.insert(positions, c.clone());
                c
            }
        };
        let xb = xt.rows(range.start, len).clone_owned();
        let w = chol.solve(&xb);
        let rb = r.rows(range.start, len);
        block_scores.push(w.transpose() * rb);
        if with_info {
            let contrib = xb.transpose() * &w;
            for j in 0..p {
                for k in 0..=j {
                    info[(j, k)] += contrib[(j, k)];
                }
            }
        }
    }
    if with_info {
        for j in 0..p {
            for k in (j + 1)..p {
                info[(j, k)] = info[(k, j)];
            }
        }
    }
    Ok(Accumulated { info, block_scores })
}

fn total_score(acc: &Accumulated, p: usize) -> DVector<f64> {
    acc.block_scores.iter().fold(DVector::zeros(p), |s, u| s + u)
}

fn check_rank(x: &DMatrix<f64>) -> Result<(), GeeError> {
    let gram = x.transpose() * x;
    let p = gram.nrows();
    let scale: Vec<f64> = (0..p).map(|j| gram[(j, j)].sqrt()).collect();
    if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(GeeError::RankDeficient);
    }
    let normalized = DMatrix::from_fn(p, p, |i, j| gram[(i, j)] / (scale[i] * scale[j]));
    let eig = normalized.symmetric_eigenvalues();
    if eig.min() < 1e-10 * eig.max().max(1.0) {
        return Err(GeeError::RankDeficient);
    }
    Ok(())
}

fn estimate_correlation(
    settings: &GeeSettings,
    pearson: &DVector<f64>,
    layout: &BlockLayout,
    block_cluster: &[usize],
) -> WorkingCorrelation {
    let mut corr = WorkingCorrelation::independence(settings.indexing);
    corr.kind = settings.correlation;
    match settings.correlation {
        CorrelationKind::Independence => {}
        CorrelationKind::Exchangeable => corr.alpha = Some(estimate_exchangeable(pearson.as_slice(), &layout.ranges)),
        CorrelationKind::Unstructured => {
            let est = estimate_unstructured_correlation(
                pearson.as_slice(),
                &layout.ranges,
                &layout.position,
                block_cluster,
                layout.n_positions,
            );
            let mut m = est.matrix;
            corr.shrunk = make_positive_definite(&mut m);
            corr.matrix = Some(m.row_iter().map(|r| r.iter().copied().collect()).collect());
            corr.flagged_pairs = est.flagged_pairs;
        }
    }
    corr
}

/// Fits a logistic marginal model over `terms` by Fisher scoring on the
/// generalized estimating equations, re-estimating the working correlation
/// from Pearson residuals at every iteration.
pub fn fit_gee_logistic(design: &Design, terms: &[String], settings: &GeeSettings) -> Result<ModelFit, GeeError> {
    if terms.is_empty() {
        return Err(GeeError::EmptyModel);
    }
    let n_clusters = design.n_clusters();
    if n_clusters < 2 {
        return Err(GeeError::TooFewClusters(n_clusters));
    }
    let x = design.model_matrix(terms)?;
    check_rank(&x)?;
    let y = &design.y;
    let n = y.len();
    let p = terms.len();
    let layout = design.blocks(settings.correlation, settings.indexing);
    let block_cluster: Vec<usize> = layout.ranges.iter().map(|r| design.cluster[r.start]).collect();

    let mut beta = DVector::<f64>::zeros(p);
    if let Some(i) = terms.iter().position(|t| t == INTERCEPT) {
        let ybar = y.mean();
        if ybar > 0.0 && ybar < 1.0 {
            beta[i] = (ybar / (1.0 - ybar)).ln();
        }
    }

    let mut corr = WorkingCorrelation::independence(settings.indexing);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=settings.max_iter {
        iterations = it;
        let m = moments(&x, &beta, y);
        if (&x * &beta).amax() > SEPARATION_ETA {
            return Err(GeeError::CompleteSeparation);
        }
        corr = estimate_correlation(settings, &m.pearson, &layout, &block_cluster);
        let xt = whiten(&x, &m.sqrt_a);
        let acc = accumulate(&xt, &m.pearson, &layout, &corr, true)?;
        let score = total_score(&acc, p);
        let chol = acc.info.cholesky().ok_or(GeeError::RankDeficient)?;
        let delta = chol.solve(&score);
        if !delta.iter().all(|d| d.is_finite()) {
            return Err(GeeError::RankDeficient);
        }

        // Halve the step while it inflates the estimating function.
        let base_norm = score.norm();
        let mut step = delta.clone();
        for _ in 0..30 {
            let candidate = &beta + &step;
            let mc = moments(&x, &candidate, y);
            let xc = whiten(&x, &mc.sqrt_a);
            let norm = total_score(&accumulate(&xc, &mc.pearson, &layout, &corr, false)?, p).norm();
            if norm.is_finite() && norm <= base_norm * (1.0 + 1e-4) + 1e-12 {
                break;
            }
            step *= 0.5;
        }
        beta += step;
        if delta.amax() < settings.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        let eta_max = (&x * &beta).amax();
        return Err(if eta_max > 20.0 { GeeError::CompleteSeparation } else { GeeError::NonConvergence(settings.max_iter) });
    }

    // Robust covariance at the solution.
    let m = moments(&x, &beta, y);
    let xt = whiten(&x, &m.sqrt_a);
    let acc = accumulate(&xt, &m.pearson, &layout, &corr, true)?;
    let bread = acc.info.clone().cholesky().ok_or(GeeError::RankDeficient)?.inverse();
    let mut per_cluster = vec![DVector::<f64>::zeros(p); n_clusters];
    for (b, u) in acc.block_scores.iter().enumerate() {
        per_cluster[block_cluster[b]] += u;
    }
    let meat = per_cluster.iter().fold(DMatrix::<f64>::zeros(p, p), |m, u| m + u * u.transpose());
    let robust = &bread * meat * &bread;

    let std_errors: Vec<f64> = (0..p).map(|j| robust[(j, j)].max(0.0).sqrt()).collect();
    let p_values =
        (0..p).map(|j| if std_errors[j] > 0.0 { stats::two_sided_normal_p(beta[j] / std_errors[j]) } else { f64::NAN }).collect();

    let omega_i = xt.transpose() * &xt;
    let trace_term = (omega_i * &robust).trace();
    let quasi_likelihood = quasi_likelihood(y, &m.mu);
    let qic = -2.0 * quasi_likelihood + 2.0 * trace_term;
    let qicc = small_sample_correction(n, p).ok().map(|c| qic + c);

    Ok(ModelFit {
        terms: terms.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        p_values,
        covariance: robust.row_iter().map(|r| r.iter().copied().collect()).collect(),
        quasi_likelihood,
        trace_term,
        qic,
        qicc,
        n_clusters,
        n_rows: n,
        converged,
        iterations,
        correlation: corr,
        fitted: m.mu.iter().copied().collect(),
    })
}

fn quasi_likelihood(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    y.iter()
        .zip(mu.iter())
        .map(|(&yi, &m)| {
            let m = m.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
        })
        .sum()
}

fn small_sample_correction(n: usize, p: usize) -> Result<f64, GeeError> {
    if n <= p + 1 {
        return Err(GeeError::QiccUndefined { n_rows: n, n_params: p });
    }
    Ok(2.0 * (p * (p + 1)) as f64 / (n - p - 1) as f64)
}

/// QICC of a fitted model recomputed on `design`: the independence
/// quasi-likelihood of the fitted means, the trace penalty against the
/// robust covariance, and the small-sample correction `2p(p+1)/(n-p-1)`.
pub fn qicc(fit: &ModelFit, design: &Design) -> Result<f64, GeeError> {
    let x = design.model_matrix(&fit.terms)?;
    let beta = DVector::from_column_slice(&fit.coefficients);
    let m = moments(&x, &beta, &design.y);
    let xt = whiten(&x, &m.sqrt_a);
    let omega_i = xt.transpose() * &xt;
    let p = fit.terms.len();
    let robust = DMatrix::from_fn(p, p, |i, j| fit.covariance[i][j]);
    let trace = (omega_i * robust).trace();
    Ok(-2.0 * quasi_likelihood(&design.y, &m.mu) + 2.0 * trace + small_sample_correction(design.n_rows(), p)?)
}
