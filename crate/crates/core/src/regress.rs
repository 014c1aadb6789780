//! Linear regression by maximum likelihood (OLS under Gaussian errors).
//!
//! The solver is a modified Gram–Schmidt orthogonal factorization with
//! reorthogonalization. Columns whose residual norm after projection on the
//! previously retained columns falls below `COLLINEARITY_TOL` times their
//! original norm are dropped and reported; on exact dependence the
//! later-listed column is always the one dropped. Normal equations are
//! deliberately not used here — they serve as the independent test oracle.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frame::AnalysisFrame;

/// Relative tolerance for declaring a design column linearly dependent.
pub const COLLINEARITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("model inestimable: {0}")]
    Inestimable(String),
    #[error("clustered errors need at least 2 clusters")]
    DegenerateClusters,
    #[error("year {0} not present in frame")]
    UnknownYear(i32),
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Estimated coefficients for retained columns, in design order.
    pub coefficients: Vec<(String, f64)>,
    /// Columns dropped as linearly dependent (or identically zero).
    pub dropped_columns: Vec<String>,
    pub n_rows: usize,
    /// SSR / (n - k) over retained columns.
    pub residual_variance: f64,
    /// Cluster-robust standard errors, populated by `clustered_se`.
    pub se_clustered: Option<Vec<(String, f64)>>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| *b)
    }

    pub fn retained_names(&self) -> Vec<&str> {
        self.coefficients.iter().map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct YearEntry {
    pub year: i32,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

impl YearEntry {
    pub fn estimable(&self) -> bool {
        self.fit.is_some()
    }
}

/// Per-year coefficient path; years strictly increasing.
#[derive(Debug, Clone)]
pub struct YearPath {
    pub entries: Vec<YearEntry>,
}

impl YearPath {
    pub fn coefficient_path(&self, name: &str) -> Vec<(i32, Option<f64>)> {
        self.entries
            .iter()
            .map(|e| (e.year, e.fit.as_ref().and_then(|f| f.coefficient(name))))
            .collect()
    }
}

struct QrFactors {
    /// Orthonormal columns, each length n.
    q: Vec<Vec<f64>>,
    /// Upper-triangular factor stored by column: rcol[j][i] = R[i][j], i <= j.
    rcol: Vec<Vec<f64>>,
    /// Indices of retained design columns.
    retained: Vec<usize>,
    dropped: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mgs_qr(columns: &[&[f64]]) -> QrFactors {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut rcol: Vec<Vec<f64>> = Vec::new();
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let norm0 = norm(col);
        let mut v = col.to_vec();
        let mut coeffs = vec![0.0; q.len()];
        // Two orthogonalization passes keep Q orthonormal to working precision.
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &v);
                coeffs[i] += c;
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= c * qk;
                }
            }
        }
        let residual = norm(&v);
        if residual <= COLLINEARITY_TOL * norm0 {
            dropped.push(j);
            continue;
        }
        for vk in v.iter_mut() {
            *vk /= residual;
        }
        coeffs.push(residual);
        q.push(v);
        rcol.push(coeffs);
        retained.push(j);
    }
    QrFactors {
        q,
        rcol,
        retained,
        dropped,
    }
}

/// Fit OLS on a frame's design columns.
pub fn fit_ols(frame: &AnalysisFrame) -> Result<FitResult, RegressError> {
    let n = frame.n_rows();
    if n == 0 {
        return Err(RegressError::Inestimable("empty frame".into()));
    }
    let cols: Vec<&[f64]> = frame.columns.iter().map(|c| c.values.as_slice()).collect();
    let qr = mgs_qr(&cols);
    let k = qr.retained.len();
    if k == 0 {
        return Err(RegressError::Inestimable(
            "all design columns dropped".into(),
        ));
    }
    if n <= k {
        return Err(RegressError::Inestimable(format!(
            "{n} rows cannot identify {k} coefficients"
        )));
    }
    // beta = R^{-1} Q'y by back substitution.
    let qty: Vec<f64> = qr.q.iter().map(|qi| dot(qi, &frame.response)).collect();
    let mut beta = vec![0.0; k];
    for j in (0..k).rev() {
        let mut acc = qty[j];
        for m in (j + 1)..k {
            acc -= qr.rcol[m][j] * beta[m];
        }
        beta[j] = acc / qr.rcol[j][j];
    }
    // Residual variance from the original columns.
    let mut ssr = 0.0;
    for i in 0..n {
        let mut fitted = 0.0;
        for (bj, &cj) in beta.iter().zip(&qr.retained) {
            fitted += bj * cols[cj][i];
        }
        let e = frame.response[i] - fitted;
        ssr += e * e;
    }
    let coefficients = qr
        .retained
        .iter()
        .zip(&beta)
        .map(|(&cj, &b)| (frame.columns[cj].name.clone(), b))
        .collect();
    let dropped_columns = qr
        .dropped
        .iter()
        .map(|&cj| frame.columns[cj].name.clone())
        .collect();
    Ok(FitResult {
        coefficients,
        dropped_columns,
        n_rows: n,
        residual_variance: ssr / (n - k) as f64,
        se_clustered: None,
    })
}

/// Cluster-robust sandwich standard errors for a fit on `frame`.
///
/// Uses the CR1 small-sample factor G/(G-1) * (n-1)/(n-k); with every row its
/// own cluster this reduces to HC1 heteroskedasticity-robust errors.
pub fn clustered_se(
    frame: &AnalysisFrame,
    fit: &FitResult,
) -> Result<Vec<(String, f64)>, RegressError> {
    let n = frame.n_rows();
    let k = fit.coefficients.len();
    let cols: Vec<&[f64]> = fit
        .coefficients
        .iter()
        .map(|(name, _)| {
            frame
                .column(name)
                .map(|c| c.values.as_slice())
                .expect("fit produced on this frame")
        })
        .collect();
    let beta: Vec<f64> = fit.coefficients.iter().map(|(_, b)| *b).collect();

    let mut residual = vec![0.0; n];
    for i in 0..n {
        let mut fitted = 0.0;
        for (bj, cj) in beta.iter().zip(&cols) {
            fitted += bj * cj[i];
        }
        residual[i] = frame.response[i] - fitted;
    }

    // Bread: (X'X)^{-1}.
    let mut xtx = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let s = dot(cols[a], cols[b]);
            xtx[a][b] = s;
            xtx[b][a] = s;
        }
    }
    let bread =
        invert(&xtx).ok_or_else(|| RegressError::Inestimable("X'X singular in sandwich".into()))?;

    // Meat: sum over clusters of score outer products.
    let mut scores: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for i in 0..n {
        let entry = scores
            .entry(frame.cluster[i])
            .or_insert_with(|| vec![0.0; k]);
        for (a, cj) in cols.iter().enumerate() {
            entry[a] += residual[i] * cj[i];
        }
    }
    let g = scores.len();
    if g < 2 {
        return Err(RegressError::DegenerateClusters);
    }
    let mut meat = vec![vec![0.0; k]; k];
    for s in scores.values() {
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += s[a] * s[b];
            }
        }
    }

    let c = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64));
    // V = c * bread * meat * bread
    let bm = matmul(&bread, &meat);
    let v = matmul(&bm, &bread);
    let se = fit
        .coefficients
        .iter()
        .enumerate()
        .map(|(j, (name, _))| (name.clone(), (c * v[j][j]).max(0.0).sqrt()))
        .collect();
    Ok(se)
}

/// Independent fits per requested year; inestimable years flagged, not fatal.
pub fn fit_per_year(frame: &AnalysisFrame, years: &[i32]) -> Result<YearPath, RegressError> {
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in frame.years.iter().enumerate() {
        by_year.entry(y).or_default().push(i);
    }
    for &y in years {
        if !by_year.contains_key(&y) {
            return Err(RegressError::UnknownYear(y));
        }
    }
    let mut sorted: Vec<i32> = years.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let entries = sorted
        .into_iter()
        .map(|y| {
            let sub = frame.select_rows(&by_year[&y]);
            match fit_ols(&sub) {
                Ok(fit) => YearEntry {
                    year: y,
                    fit: Some(fit),
                    error: None,
                },
                Err(e) => YearEntry {
                    year: y,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(YearPath { entries })
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..inner {
            let ail = a[i][l];
            for j in 0..m {
                out[i][j] += ail * b[l][j];
            }
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting; None if singular.
fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        if aug[pivot][col].abs() == 0.0 {
            return None;
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for x in aug[col].iter_mut() {
            *x /= p;
        }
        for i in 0..n {
            if i != col {
                let f = aug[i][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        aug[i][j] -= f * aug[col][j];
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}
