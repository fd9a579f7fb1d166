//! Ordinary least squares with cluster-robust standard errors and optional
//! absorbed fixed effects.
//!
//! Standard errors use the Liang-Zeger sandwich: residuals are aggregated
//! within each cluster before the outer product, so arbitrary correlation
//! inside a cluster is allowed. With every observation its own cluster and no
//! small-sample correction, the estimator reduces to heteroskedasticity-
//! robust (HC0) standard errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::LagMatrix;

/// Small-sample correction applied to the clustered sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmallSample {
    /// Multiplies the sandwich by `G/(G-1) * (N-1)/(N-K)` where `G` counts
    /// clusters and `K` counts estimated parameters, absorbed fixed effects
    /// included.
    Cr1,
    /// No correction.
    Cr0,
}

/// Which statistic appears in parentheses under each coefficient in rendered
/// tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParenStat {
    TStat,
    StdErr,
}

/// A regression request.
///
/// `x` is row-major with `x[i].len() == x_names.len()`. When `fixed_effects`
/// is set, `y` and every column of `x` are demeaned within each group before
/// estimation; do not include an intercept in that case — after demeaning it
/// is identically zero and the rank check will name it.
#[derive(Debug, Clone)]
pub struct OlsSpec<'a> {
    pub y_name: &'a str,
    pub x_names: &'a [String],
    pub y: &'a [f64],
    pub x: &'a [Vec<f64>],
    /// Cluster label per observation.
    pub cluster: &'a [String],
    /// Optional absorbed fixed-effect group per observation.
    pub fixed_effects: Option<&'a [String]>,
    pub small_sample: SmallSample,
    /// Drop regressors that are identically zero (recording them in
    /// [`CoefTable::dropped`]) instead of failing the rank check.
    pub drop_zero_columns: bool,
}

impl<'a> OlsSpec<'a> {
    /// Default request for a stacked lag design: cluster by contest, CR1,
    /// no fixed effects.
    pub fn from_lag_matrix(lm: &'a LagMatrix) -> Self {
        OlsSpec {
            y_name: &lm.y_name,
            x_names: &lm.x_names,
            y: &lm.y,
            x: &lm.x,
            cluster: &lm.cluster,
            fixed_effects: None,
            small_sample: SmallSample::Cr1,
            drop_zero_columns: false,
        }
    }
}

/// Estimated coefficients with cluster-robust inference and fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefTable {
    pub y_name: String,
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t: Vec<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// R-squared against the untransformed dependent variable.
    pub r2: f64,
    /// R-squared after the within transformation; present only with fixed
    /// effects.
    pub within_r2: Option<f64>,
    /// Fitted values on the original scale (absorbed effects included).
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Identically-zero regressors removed before estimation.
    pub dropped: Vec<String>,
}

/// Significance stars from a t statistic: 10%, 5%, 1% two-sided normal
/// critical values.
pub fn stars(t: f64) -> &'static str {
    let a = t.abs();
    if a >= 2.576 {
        "***"
    } else if a >= 1.96 {
        "**"
    } else if a >= 1.645 {
        "*"
    } else {
        ""
    }
}

impl CoefTable {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `(coefficient, standard error, t)` for a named regressor.
    pub fn get(&self, name: &str) -> Option<(f64, f64, f64)> {
        self.index_of(name)
            .map(|i| (self.beta[i], self.se[i], self.t[i]))
    }

    /// Renders a fixed-width table; `paren` selects the statistic shown in
    /// parentheses. Output is deterministic, ASCII, and date-free.
    pub fn to_text(&self, title: &str, paren: ParenStat) -> String {
        let name_w = self.names.iter().map(|n| n.len()).max().unwrap_or(4).max(9);
        let rule_w = name_w + 26;
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "Dependent variable: {}", self.y_name);
        let _ = writeln!(s, "{}", "-".repeat(rule_w));
        for i in 0..self.names.len() {
            let p = match paren {
                ParenStat::TStat => self.t[i],
                ParenStat::StdErr => self.se[i],
            };
            let _ = writeln!(
                s,
                "{:<name_w$}  {:>10.4}  ({:.4}){}",
                self.names[i],
                self.beta[i],
                p,
                stars(self.t[i])
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(rule_w));
        if !self.dropped.is_empty() {
            let _ = writeln!(s, "Dropped (identically zero): {}", self.dropped.join(", "));
        }
        let _ = write!(
            s,
            "Observations: {}  Clusters: {}  R2: {:.4}",
            self.n_obs, self.n_clusters, self.r2
        );
        if let Some(w) = self.within_r2 {
            let _ = write!(s, "  Within R2: {w:.4}");
        }
        s.push('\n');
        s
    }

    /// Machine-readable rows with full-precision values.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,coef,se,t\n");
        for i in 0..self.names.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.names[i], self.beta[i], self.se[i], self.t[i]
            );
        }
        s
    }
}

fn group_indices(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        map.entry(l.as_str()).or_default().push(i);
    }
    map
}

fn demean_within(values: &mut [f64], groups: &BTreeMap<&str, Vec<usize>>) {
    for idx in groups.values() {
        let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
        for &i in idx {
            values[i] -= mean;
        }
    }
}

/// Flags columns that are (numerically) linear combinations of the columns
/// before them, via modified Gram-Schmidt with a relative tolerance.
fn dependent_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let n = x.nrows();
    let k = x.ncols();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0f64, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut offending = Vec::new();
    for (j, name) in names.iter().enumerate().take(k) {
        let mut v = DVector::from_iterator(n, x.column(j).iter().copied());
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        // A second pass keeps the basis orthogonal even for ill-conditioned
        // inputs (classic Gram-Schmidt loses orthogonality in one pass).
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let norm = v.norm();
        if norm <= tol {
            offending.push(name.clone());
        } else {
            basis.push(v / norm);
        }
    }
    offending
}

/// Runs the regression described by `spec`.
pub fn ols_cluster(spec: &OlsSpec<'_>) -> Result<CoefTable> {
    let n = spec.y.len();
    let k_in = spec.x_names.len();
    if n == 0 {
        return Err(Error::Estimation("no observations".into()));
    }
    if k_in == 0 {
        return Err(Error::Estimation("no regressors".into()));
    }
    if spec.x.len() != n || spec.cluster.len() != n {
        return Err(Error::Estimation(format!(
            "dimension mismatch: {} y values, {} design rows, {} cluster labels",
            n,
            spec.x.len(),
            spec.cluster.len()
        )));
    }
    if let Some(row) = spec.x.iter().find(|r| r.len() != k_in) {
        return Err(Error::Estimation(format!(
            "design row has {} columns; expected {}",
            row.len(),
            k_in
        )));
    }
    if let Some(fe) = spec.fixed_effects {
        if fe.len() != n {
            return Err(Error::Estimation(format!(
                "{} fixed-effect labels for {} observations",
                fe.len(),
                n
            )));
        }
    }

    // Column selection: optionally drop identically-zero regressors.
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    for j in 0..k_in {
        if spec.drop_zero_columns && spec.x.iter().all(|r| r[j] == 0.0) {
            dropped.push(spec.x_names[j].clone());
        } else {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::Estimation(
            "every regressor is identically zero".into(),
        ));
    }
    let names: Vec<String> = kept.iter().map(|&j| spec.x_names[j].clone()).collect();
    let k = kept.len();

    let mut y_work = spec.y.to_vec();
    let mut x_work = DMatrix::from_fn(n, k, |i, jj| spec.x[i][kept[jj]]);

    // Within transformation for absorbed fixed effects.
    let n_fe_groups = if let Some(fe) = spec.fixed_effects {
        let groups = group_indices(fe);
        demean_within(&mut y_work, &groups);
        for j in 0..k {
            let mut col: Vec<f64> = x_work.column(j).iter().copied().collect();
            demean_within(&mut col, &groups);
            x_work.set_column(j, &DVector::from_vec(col));
        }
        groups.len()
    } else {
        0
    };

    let offending = dependent_columns(&x_work, &names);
    if !offending.is_empty() {
        return Err(Error::RankDeficient { columns: offending });
    }

    let y_vec = DVector::from_vec(y_work.clone());
    let xtx = x_work.transpose() * &x_work;
    let xty = x_work.transpose() * &y_vec;
    let chol = xtx.clone().cholesky();
    let (beta_vec, bread) = match chol {
        Some(c) => (c.solve(&xty), c.inverse()),
        None => {
            // The rank check passed, so this is conditioning, not true
            // deficiency; fall back to the pseudo-inverse.
            let pinv = xtx
                .pseudo_inverse(1e-13)
                .map_err(|e| Error::Estimation(format!("normal equations unsolvable: {e}")))?;
            (&pinv * &xty, pinv)
        }
    };

    let fitted_work = &x_work * &beta_vec;
    let residuals: Vec<f64> = (0..n).map(|i| y_work[i] - fitted_work[i]).collect();
    let fitted: Vec<f64> = (0..n).map(|i| spec.y[i] - residuals[i]).collect();

    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let y_mean = spec.y.iter().sum::<f64>() / n as f64;
    let sst: f64 = spec.y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 0.0 };
    let within_r2 = spec.fixed_effects.map(|_| {
        let wm = y_work.iter().sum::<f64>() / n as f64;
        let wt: f64 = y_work.iter().map(|v| (v - wm).powi(2)).sum();
        if wt > 0.0 {
            1.0 - ssr / wt
        } else {
            0.0
        }
    });

    // Clustered sandwich.
    let clusters = group_indices(spec.cluster);
    let g = clusters.len();
    let mut meat = DMatrix::zeros(k, k);
    for idx in clusters.values() {
        let mut u = DVector::zeros(k);
        for &i in idx {
            u.axpy(residuals[i], &x_work.row(i).transpose(), 1.0);
        }
        meat += &u * u.transpose();
    }
    let k_total = k + n_fe_groups;
    let factor = match spec.small_sample {
        SmallSample::Cr0 => 1.0,
        SmallSample::Cr1 => {
            if g < 2 {
                return Err(Error::Estimation(
                    "clustered small-sample correction needs at least 2 clusters".into(),
                ));
            }
            if n <= k_total {
                return Err(Error::Estimation(format!(
                    "{n} observations cannot support {k_total} parameters"
                )));
            }
            (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k_total as f64))
        }
    };
    let vcov = &bread * meat * &bread * factor;
    let se: Vec<f64> = (0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let beta: Vec<f64> = beta_vec.iter().copied().collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();

    Ok(CoefTable {
        y_name: spec.y_name.to_string(),
        names,
        beta,
        se,
        t,
        n_obs: n,
        n_clusters: g,
        r2,
        within_r2,
        fitted,
        residuals,
        dropped,
    })
}

/// Convenience wrapper for sign-split designs: identically-zero half-columns
/// (a sign that never occurs in the sample) are dropped, not fatal.
pub fn sign_split_regress(lm: &LagMatrix) -> Result<CoefTable> {
    let mut spec = OlsSpec::from_lag_matrix(lm);
    spec.drop_zero_columns = true;
    ols_cluster(&spec)
}
