//! Overdraft cost spreads and bank fixed-effects regressions with clustered
//! standard errors.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Indicator, OverdraftRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("row {row}: benchmark rate is missing")]
    MissingBenchmark { row: usize },
    #[error("row {row}: spread is not finite")]
    NonFinite { row: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least 2 clusters, found {clusters}")]
    TooFewClusters { clusters: usize },
    #[error("`{column}` does not vary within any bank")]
    NoWithinVariation { column: String },
    #[error("regressor matrix is singular")]
    SingularDesign,
}

/// Where the risk-free benchmark comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// The `benchmark_pct` column.
    #[default]
    Column,
    /// The deposit facility rate.
    EcbDfr,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadRow {
    pub obs: OverdraftRow,
    pub benchmark: f64,
    pub spread: f64,
}

/// Appends `rate - benchmark` to every row. A missing benchmark is an error
/// naming the (zero-based) row.
pub fn build_spread(rows: &[OverdraftRow], benchmark: Benchmark) -> Result<Vec<SpreadRow>, PanelError> {
    rows.iter()
        .enumerate()
        .map(|(row, r)| {
            let b = match benchmark {
                Benchmark::Column => r.benchmark_pct.ok_or(PanelError::MissingBenchmark { row })?,
                Benchmark::EcbDfr => r.ecb_dfr,
            };
            let spread = r.rate_pct - b;
            if !spread.is_finite() {
                return Err(PanelError::NonFinite { row });
            }
            Ok(SpreadRow { obs: r.clone(), benchmark: b, spread })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    GdpGrowth,
    EcbDfr,
    /// Probability of default in percent.
    PdPct,
}

impl Control {
    pub fn name(self) -> &'static str {
        match self {
            Control::GdpGrowth => "gdp_growth",
            Control::EcbDfr => "ecb_dfr",
            Control::PdPct => "pd_pct",
        }
    }

    fn value(self, r: &OverdraftRow) -> f64 {
        match self {
            Control::GdpGrowth => r.gdp_growth,
            Control::EcbDfr => r.ecb_dfr,
            Control::PdPct => 100.0 * r.pd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dummy {
    Sector,
    SizeClass,
    Department,
}

impl Dummy {
    pub fn name(self) -> &'static str {
        match self {
            Dummy::Sector => "sector",
            Dummy::SizeClass => "size_class",
            Dummy::Department => "department",
        }
    }

    fn code(self, r: &OverdraftRow) -> u32 {
        match self {
            Dummy::Sector => r.sector,
            Dummy::SizeClass => r.size_class,
            Dummy::Department => r.department,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterScheme {
    Bank,
    /// Two-way bank and borrower clustering.
    BankBorrower,
}

impl FromStr for ClusterScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bank" => Ok(ClusterScheme::Bank),
            "bank_borrower" | "bank-borrower" | "twoway" | "two-way" => Ok(ClusterScheme::BankBorrower),
            other => Err(format!("unknown cluster scheme `{other}` (expected bank or bank_borrower)")),
        }
    }
}

impl fmt::Display for ClusterScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterScheme::Bank => "bank",
            ClusterScheme::BankBorrower => "bank_borrower",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub indicator: Indicator,
    pub controls: Vec<Control>,
    pub dummies: Vec<Dummy>,
    pub bank_fe: bool,
    pub cluster: ClusterScheme,
}

impl PanelSpec {
    pub fn bivariate(indicator: Indicator, cluster: ClusterScheme) -> Self {
        PanelSpec { indicator, controls: Vec::new(), dummies: Vec::new(), bank_fe: false, cluster }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDof {
    pub dimension: String,
    pub clusters: usize,
    /// `G/(G-1) · (N-1)/(N-K)`.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FEEstimate {
    pub label: String,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub cluster: ClusterScheme,
    pub bank_fe: bool,
    pub n: usize,
    pub n_banks: usize,
    /// Regressors counted in the small-sample factor (absorbed bank means excluded).
    pub k: usize,
    pub dof: Vec<ClusterDof>,
    /// Within R² with bank effects, centred R² otherwise.
    pub r2: f64,
    pub covariance: Vec<Vec<f64>>,
    /// Set when a two-way covariance had negative eigenvalues clipped to zero.
    pub eigen_truncated: bool,
}

impl FEEstimate {
    pub fn coef(&self, name: &str) -> Option<(f64, f64)> {
        let j = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[j], self.std_errors[j]))
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        self.coef(name).map(|(b, s)| b / s)
    }
}

/// Compensated sum.
fn ksum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

fn group_index<K: std::hash::Hash + Eq + Copy>(keys: impl Iterator<Item = K>) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let idx: Vec<usize> = keys
        .map(|k| {
            let next = map.len();
            *map.entry(k).or_insert(next)
        })
        .collect();
    (idx, map.len())
}

/// Subtracts group means. A group whose mean is already at rounding level
/// relative to its values is left untouched, so applying the transform to
/// its own output returns the same bits.
pub fn within_transform(values: &[f64], groups: &[u32]) -> Result<Vec<f64>, PanelError> {
    if values.len() != groups.len() {
        return Err(PanelError::InvalidInput("values and groups differ in length".into()));
    }
    let (idx, n_groups) = group_index(groups.iter().copied());
    let mut members = vec![Vec::new(); n_groups];
    for (i, &g) in idx.iter().enumerate() {
        members[g].push(i);
    }
    let mut out = values.to_vec();
    for m in &members {
        // Re-centre until the residual mean is negligible at the output's own
        // scale, so a second pass leaves the group untouched.
        for _ in 0..8 {
            let mean = ksum(m.iter().map(|&i| out[i])) / m.len() as f64;
            let scale = m.iter().map(|&i| out[i].abs()).fold(0.0, f64::max);
            if mean.abs() <= m.len() as f64 * f64::EPSILON * scale {
                break;
            }
            for &i in m {
                out[i] -= mean;
            }
        }
    }
    Ok(out)
}

/// Inverse of a symmetric positive definite matrix after unit-diagonal scaling.
fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, PanelError> {
    let k = a.nrows();
    if (0..k).any(|j| !(a[(j, j)] > 0.0)) {
        return Err(PanelError::SingularDesign);
    }
    let s: Vec<f64> = (0..k).map(|j| 1.0 / a[(j, j)].sqrt()).collect();
    let scaled = DMatrix::from_fn(k, k, |i, j| a[(i, j)] * s[i] * s[j]);
    let chol = scaled.cholesky().ok_or(PanelError::SingularDesign)?;
    if (0..k).any(|j| chol.l_dirty()[(j, j)].powi(2) < 1e-12) {
        return Err(PanelError::SingularDesign);
    }
    let inv = chol.inverse();
    Ok(DMatrix::from_fn(k, k, |i, j| inv[(i, j)] * s[i] * s[j]))
}

/// `Σ_c s_c s_c'` with `s_c = Σ_{i∈c} x_i e_i`, scaled by the CR1 factor.
fn cluster_meat(cols: &[Vec<f64>], e: &[f64], idx: &[usize], n_clusters: usize, k_dof: usize) -> (DMatrix<f64>, f64) {
    let k = cols.len();
    let n = e.len();
    let mut scores = vec![0.0; n_clusters * k];
    for i in 0..n {
        let c = idx[i];
        for j in 0..k {
            scores[c * k + j] += cols[j][i] * e[i];
        }
    }
    let mut meat = DMatrix::zeros(k, k);
    for s in scores.chunks(k) {
        for a in 0..k {
            for b in a..k {
                meat[(a, b)] += s[a] * s[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let g = n_clusters as f64;
    let factor = g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k_dof as f64);
    (meat * factor, factor)
}

/// Least squares of the spread on the indicator and controls, with bank
/// fixed effects absorbed by the within transform when `spec.bank_fe`.
pub fn fe_within(rows: &[SpreadRow], spec: &PanelSpec) -> Result<FEEstimate, PanelError> {
    fit(rows, spec, String::new())
}

fn fit(rows: &[SpreadRow], spec: &PanelSpec, label: String) -> Result<FEEstimate, PanelError> {
    let n = rows.len();
    let banks: Vec<u32> = rows.iter().map(|r| r.obs.bank_id).collect();
    let n_banks = banks.iter().collect::<BTreeSet<_>>().len();
    if n_banks < 2 {
        return Err(PanelError::TooFewClusters { clusters: n_banks });
    }

    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if !spec.bank_fe {
        names.push("intercept".to_string());
        cols.push(vec![1.0; n]);
    }
    names.push(spec.indicator.column().to_string());
    cols.push(rows.iter().map(|r| r.obs.indicator(spec.indicator)).collect());
    for c in &spec.controls {
        names.push(c.name().into());
        cols.push(rows.iter().map(|r| c.value(&r.obs)).collect());
    }
    for d in &spec.dummies {
        let levels: BTreeSet<u32> = rows.iter().map(|r| d.code(&r.obs)).collect();
        for &level in levels.iter().skip(1) {
            names.push(format!("{}={level}", d.name()));
            cols.push(rows.iter().map(|r| if d.code(&r.obs) == level { 1.0 } else { 0.0 }).collect());
        }
    }
    let mut y: Vec<f64> = rows.iter().map(|r| r.spread).collect();
    if cols.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
        return Err(PanelError::InvalidInput("regressors must be finite".into()));
    }

    let ind_col = usize::from(!spec.bank_fe);
    if spec.bank_fe {
        y = within_transform(&y, &banks)?;
        for c in cols.iter_mut() {
            *c = within_transform(c, &banks)?;
        }
        let raw_scale = rows.iter().map(|r| r.obs.indicator(spec.indicator).abs()).fold(0.0, f64::max).max(1.0);
        if cols[ind_col].iter().all(|v| v.abs() <= 1e-12 * raw_scale) {
            return Err(PanelError::NoWithinVariation { column: names[ind_col].clone() });
        }
    }

    let k = cols.len();
    let absorbed = if spec.bank_fe { n_banks } else { 0 };
    if n <= k + absorbed {
        return Err(PanelError::InvalidInput(format!("{n} observations cannot identify {} parameters", k + absorbed)));
    }
    let xtx = DMatrix::from_fn(k, k, |a, b| ksum(cols[a].iter().zip(&cols[b]).map(|(u, v)| u * v)));
    let xty = DVector::from_iterator(k, cols.iter().map(|c| ksum(c.iter().zip(&y).map(|(u, v)| u * v))));
    let bread = spd_inverse(&xtx)?;
    let beta = &bread * xty;
    let e: Vec<f64> = (0..n).map(|i| y[i] - (0..k).map(|j| beta[j] * cols[j][i]).sum::<f64>()).collect();

    let ssr = ksum(e.iter().map(|v| v * v));
    let y_mean = ksum(y.iter().copied()) / n as f64;
    let sst = ksum(y.iter().map(|v| (v - y_mean).powi(2)));
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN };

    let (bank_idx, g_bank) = group_index(banks.iter().copied());
    let (meat_bank, f_bank) = cluster_meat(&cols, &e, &bank_idx, g_bank, k);
    let mut dof = vec![ClusterDof { dimension: "bank".into(), clusters: g_bank, factor: f_bank }];
    let mut meat = meat_bank;
    if spec.cluster == ClusterScheme::BankBorrower {
        let (b_idx, g_b) = group_index(rows.iter().map(|r| r.obs.borrower_id));
        let (bb_idx, g_bb) = group_index(rows.iter().map(|r| (r.obs.bank_id, r.obs.borrower_id)));
        if g_b < 2 {
            return Err(PanelError::TooFewClusters { clusters: g_b });
        }
        let (m_b, f_b) = cluster_meat(&cols, &e, &b_idx, g_b, k);
        let (m_bb, f_bb) = cluster_meat(&cols, &e, &bb_idx, g_bb, k);
        meat += m_b - m_bb;
        dof.push(ClusterDof { dimension: "borrower".into(), clusters: g_b, factor: f_b });
        dof.push(ClusterDof { dimension: "bank_x_borrower".into(), clusters: g_bb, factor: f_bb });
    }
    let mut cov = &bread * meat * &bread;
    cov = (&cov + cov.transpose()) * 0.5;
    let mut eigen_truncated = false;
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        if spec.cluster == ClusterScheme::BankBorrower {
            eigen_truncated = true;
        }
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        cov = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
    }

    let std_errors: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    Ok(FEEstimate {
        label,
        names,
        coefficients: beta.iter().copied().collect(),
        std_errors,
        cluster: spec.cluster,
        bank_fe: spec.bank_fe,
        n,
        n_banks,
        k,
        dof,
        r2,
        covariance: (0..k).map(|a| (0..k).map(|b| cov[(a, b)]).collect()).collect(),
        eigen_truncated,
    })
}

/// The four rungs: bivariate, macro controls, bank effects, borrower controls.
pub fn ladder_specs(indicator: Indicator, cluster: ClusterScheme) -> Vec<(String, PanelSpec)> {
    let macro_controls = vec![Control::GdpGrowth, Control::EcbDfr];
    let mut full_controls = macro_controls.clone();
    full_controls.push(Control::PdPct);
    vec![
        ("bivariate".into(), PanelSpec::bivariate(indicator, cluster)),
        ("macro".into(), PanelSpec { controls: macro_controls.clone(), ..PanelSpec::bivariate(indicator, cluster) }),
        (
            "bank_fe".into(),
            PanelSpec { controls: macro_controls, bank_fe: true, ..PanelSpec::bivariate(indicator, cluster) },
        ),
        (
            "full".into(),
            PanelSpec {
                indicator,
                controls: full_controls,
                dummies: vec![Dummy::Sector, Dummy::SizeClass, Dummy::Department],
                bank_fe: true,
                cluster,
            },
        ),
    ]
}

pub fn saturation_ladder(
    rows: &[SpreadRow],
    indicator: Indicator,
    cluster: ClusterScheme,
) -> Result<Vec<FEEstimate>, PanelError> {
    ladder_specs(indicator, cluster).into_par_iter().map(|(label, spec)| fit(rows, &spec, label)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_overdrafts, OverdraftConfig};

    fn panel(cfg: OverdraftConfig) -> Vec<SpreadRow> {
        let (rows, _) = simulate_overdrafts(&cfg).unwrap();
        build_spread(&rows, Benchmark::Column).unwrap()
    }

    fn small() -> OverdraftConfig {
        OverdraftConfig { n_banks: 8, months: 12, obs_per_bank_month: 5, ..Default::default() }
    }

    #[test]
    fn spread_arithmetic() {
        let (mut rows, _) = simulate_overdrafts(&small()).unwrap();
        rows[0].rate_pct = 4.0;
        rows[0].benchmark_pct = Some(3.0);
        rows[1].benchmark_pct = Some(rows[1].rate_pct);
        let s = build_spread(&rows, Benchmark::Column).unwrap();
        assert_eq!(s[0].spread, 1.0);
        assert_eq!(s[1].spread, 0.0);
        for (a, r) in s.iter().zip(&rows) {
            assert_eq!(a.spread, r.rate_pct - r.benchmark_pct.unwrap());
        }
        rows[3].benchmark_pct = None;
        assert_eq!(build_spread(&rows, Benchmark::Column), Err(PanelError::MissingBenchmark { row: 3 }));
        assert!(build_spread(&rows, Benchmark::EcbDfr).is_ok());
    }

    #[test]
    fn single_bank_is_rejected() {
        let rows = panel(OverdraftConfig { n_banks: 1, ..small() });
        let spec = PanelSpec::bivariate(Indicator::Niu, ClusterScheme::Bank);
        assert_eq!(fe_within(&rows, &spec), Err(PanelError::TooFewClusters { clusters: 1 }));
    }

    #[test]
    fn within_transform_idempotent_and_centred() {
        let rows = panel(small());
        let groups: Vec<u32> = rows.iter().map(|r| r.obs.bank_id).collect();
        let v: Vec<f64> = rows.iter().map(|r| r.spread).collect();
        let once = within_transform(&v, &groups).unwrap();
        let twice = within_transform(&once, &groups).unwrap();
        assert_eq!(once, twice);
        for b in 1..=8 {
            let m: f64 = once.iter().zip(&groups).filter(|(_, g)| **g == b).map(|(v, _)| v).sum();
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_indicator_within_banks() {
        let mut rows = panel(small());
        for r in rows.iter_mut() {
            r.obs.niu = r.obs.bank_id as f64;
        }
        let spec = PanelSpec { bank_fe: true, ..PanelSpec::bivariate(Indicator::Niu, ClusterScheme::Bank) };
        assert!(matches!(fe_within(&rows, &spec), Err(PanelError::NoWithinVariation { .. })));
    }

    #[test]
    fn within_matches_dummy_variable_regression() {
        let rows = panel(small());
        let spec = PanelSpec {
            controls: vec![Control::GdpGrowth, Control::PdPct],
            bank_fe: true,
            ..PanelSpec::bivariate(Indicator::Niu, ClusterScheme::Bank)
        };
        let est = fe_within(&rows, &spec).unwrap();
        // Oracle: least squares with explicit bank dummies, by QR.
        let n = rows.len();
        let p = 3 + 8;
        let x = DMatrix::from_fn(n, p, |i, j| {
            let o = &rows[i].obs;
            match j {
                0 => o.niu,
                1 => o.gdp_growth,
                2 => 100.0 * o.pd,
                b => f64::from(o.bank_id as usize == b - 2),
            }
        });
        let y = DVector::from_iterator(n, rows.iter().map(|r| r.spread));
        let qr = x.qr();
        let b = qr.r().solve_upper_triangular(&(qr.q().transpose() * y)).unwrap();
        for j in 0..3 {
            assert!((est.coefficients[j] - b[j]).abs() < 1e-9, "{j}: {} vs {}", est.coefficients[j], b[j]);
        }
    }

    #[test]
    fn clustered_covariance_is_psd() {
        let rows = panel(small());
        for cluster in [ClusterScheme::Bank, ClusterScheme::BankBorrower] {
            for est in saturation_ladder(&rows, Indicator::Niu, cluster).unwrap() {
                let k = est.k;
                let m = DMatrix::from_fn(k, k, |a, b| est.covariance[a][b]);
                assert_eq!(m, m.transpose());
                let tol = 1e-12 * m.diagonal().max();
                assert!(SymmetricEigen::new(m).eigenvalues.iter().all(|&l| l >= -tol));
                assert!(est.std_errors.iter().all(|s| *s > 0.0));
            }
        }
    }

    #[test]
    fn ladder_shape() {
        let rows = panel(small());
        let ladder = saturation_ladder(&rows, Indicator::Asi, ClusterScheme::Bank).unwrap();
        assert_eq!(ladder.len(), 4);
        assert_eq!(
            ladder.iter().map(|e| e.label.as_str()).collect::<Vec<_>>(),
            ["bivariate", "macro", "bank_fe", "full"]
        );
        assert!(!ladder[1].bank_fe && ladder[2].bank_fe);
        assert!(ladder[3].names.iter().any(|n| n.starts_with("sector=")));
    }

    #[test]
    fn one_obs_per_borrower_two_way_equals_bank() {
        let rows = panel(OverdraftConfig { one_obs_per_borrower: true, ..small() });
        let base = PanelSpec {
            controls: vec![Control::GdpGrowth],
            bank_fe: true,
            ..PanelSpec::bivariate(Indicator::Niu, ClusterScheme::Bank)
        };
        let one = fe_within(&rows, &base).unwrap();
        let two = fe_within(&rows, &PanelSpec { cluster: ClusterScheme::BankBorrower, ..base }).unwrap();
        for (a, b) in one.std_errors.iter().zip(&two.std_errors) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
