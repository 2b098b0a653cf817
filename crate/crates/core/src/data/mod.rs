//! Loan-level and overdraft records: synthetic generation, CSV ingestion,
//! the PD sample filter and descriptive statistics.

mod csvio;
mod generate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csvio::{
    load_loans, load_overdrafts, read_loans, read_overdrafts, write_loans, write_overdrafts, LoanFile, LOAN_COLUMNS,
    OVERDRAFT_COLUMNS,
};
pub use generate::{
    simulate_loans, simulate_overdrafts, Covariate, GeneratorConfig, GroundTruth, IndicatorProcess, OverdraftConfig,
    OverdraftTruth, Regime, DESIGN_COVARIATES,
};

pub const PD_CUTOFF: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("file has no data rows")]
    Empty,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: column `{column}` has invalid value `{value}`")]
    Parse { line: u64, column: String, value: String },
    #[error("line {line}: column `{column}` is not finite")]
    NonFinite { line: u64, column: String },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

/// Calendar month, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(YearMonth { year, month })
    }

    pub fn plus_months(self, k: u32) -> Self {
        let idx = self.year as i64 * 12 + (self.month as i64 - 1) + k as i64;
        YearMonth { year: idx.div_euclid(12) as i32, month: idx.rem_euclid(12) as u32 + 1 }
    }

    /// Months since January of year 0.
    pub fn index(self) -> i64 {
        self.year as i64 * 12 + self.month as i64 - 1
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (y, m) = s.split_once('-').ok_or_else(|| format!("expected YYYY-MM, got `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        YearMonth::new(year, month).ok_or_else(|| format!("month out of range in `{s}`"))
    }
}

impl TryFrom<String> for YearMonth {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(d: YearMonth) -> String {
        d.to_string()
    }
}

/// Uncertainty indicators carried on every record. Only one enters a given
/// regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Niu,
    Asi,
    Disagreement,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::Niu, Indicator::Asi, Indicator::Disagreement];

    pub fn column(self) -> &'static str {
        match self {
            Indicator::Niu => "niu",
            Indicator::Asi => "asi",
            Indicator::Disagreement => "disagreement",
        }
    }
}

impl FromStr for Indicator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "niu" => Ok(Indicator::Niu),
            "asi" => Ok(Indicator::Asi),
            "disagreement" => Ok(Indicator::Disagreement),
            other => Err(format!("unknown indicator `{other}` (expected niu, asi or disagreement)")),
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanRow {
    pub loan_id: u64,
    pub bank_id: u32,
    pub borrower_id: u64,
    pub sector: u32,
    pub department: u32,
    pub size_class: u32,
    pub date: YearMonth,
    pub rate_pct: f64,
    pub volume_eur: f64,
    pub maturity_months: u32,
    pub pd: f64,
    pub ecb_dfr: f64,
    pub gdp_growth: f64,
    pub niu: f64,
    pub asi: f64,
    pub disagreement: f64,
}

impl LoanRow {
    pub fn indicator(&self, which: Indicator) -> f64 {
        match which {
            Indicator::Niu => self.niu,
            Indicator::Asi => self.asi,
            Indicator::Disagreement => self.disagreement,
        }
    }
}

/// Overdraft record; volume and maturity are optional for this product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverdraftRow {
    pub loan_id: u64,
    pub bank_id: u32,
    pub borrower_id: u64,
    pub sector: u32,
    pub department: u32,
    pub size_class: u32,
    pub date: YearMonth,
    pub rate_pct: f64,
    pub benchmark_pct: Option<f64>,
    pub volume_eur: Option<f64>,
    pub maturity_months: Option<u32>,
    pub pd: f64,
    pub ecb_dfr: f64,
    pub gdp_growth: f64,
    pub niu: f64,
    pub asi: f64,
    pub disagreement: f64,
}

impl OverdraftRow {
    pub fn indicator(&self, which: Indicator) -> f64 {
        match which {
            Indicator::Niu => self.niu,
            Indicator::Asi => self.asi,
            Indicator::Disagreement => self.disagreement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutcome<R> {
    pub rows: Vec<R>,
    pub removed: usize,
}

/// Drops loans whose PD is strictly above `cutoff`.
pub fn filter_pd(rows: Vec<LoanRow>, cutoff: f64) -> FilterOutcome<LoanRow> {
    let before = rows.len();
    let rows: Vec<LoanRow> = rows.into_iter().filter(|r| r.pd <= cutoff).collect();
    FilterOutcome { removed: before - rows.len(), rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub column: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    /// Most frequent value, for integer-valued columns (ties go to the smallest).
    pub mode: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(column: &str, values: &[f64], discrete: bool) -> ColumnSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mode = discrete.then(|| {
        let (mut best, mut best_count) = (sorted[0], 0usize);
        let mut i = 0;
        while i < n {
            let j = sorted[i..].iter().position(|v| *v != sorted[i]).map_or(n, |k| i + k);
            if j - i > best_count {
                best = sorted[i];
                best_count = j - i;
            }
            i = j;
        }
        best
    });
    ColumnSummary {
        column: column.to_string(),
        n,
        mean,
        // Exact zero for constant columns.
        sd: if sorted[0] == sorted[n - 1] { 0.0 } else { var.sqrt() },
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        mode,
    }
}

/// Summary statistics for every numeric loan column.
pub fn describe(rows: &[LoanRow]) -> Result<Vec<ColumnSummary>, DataError> {
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    type Getter = fn(&LoanRow) -> f64;
    let columns: [(&str, Getter, bool); 10] = [
        ("rate_pct", |r| r.rate_pct, false),
        ("volume_eur", |r| r.volume_eur, false),
        ("maturity_months", |r| r.maturity_months as f64, true),
        ("pd", |r| r.pd, false),
        ("ecb_dfr", |r| r.ecb_dfr, false),
        ("gdp_growth", |r| r.gdp_growth, false),
        ("niu", |r| r.niu, false),
        ("asi", |r| r.asi, false),
        ("disagreement", |r| r.disagreement, false),
        ("size_class", |r| r.size_class as f64, true),
    ];
    Ok(columns
        .iter()
        .map(|(name, get, discrete)| {
            let v: Vec<f64> = rows.iter().map(get).collect();
            summarize(name, &v, *discrete)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pd: f64) -> LoanRow {
        LoanRow {
            loan_id: 1,
            bank_id: 1,
            borrower_id: 1,
            sector: 0,
            department: 0,
            size_class: 0,
            date: YearMonth::new(2020, 3).unwrap(),
            rate_pct: 2.0,
            volume_eur: 20_000.0,
            maturity_months: 60,
            pd,
            ecb_dfr: 0.0,
            gdp_growth: 1.0,
            niu: 1.0,
            asi: 0.0,
            disagreement: 0.5,
        }
    }

    #[test]
    fn year_month_round_trip() {
        let d: YearMonth = "2021-07".parse().unwrap();
        assert_eq!(d.to_string(), "2021-07");
        assert_eq!(d.plus_months(6).to_string(), "2022-01");
        assert!("2021-13".parse::<YearMonth>().is_err());
        assert!("202107".parse::<YearMonth>().is_err());
    }

    #[test]
    fn filter_keeps_boundary_and_counts_removals() {
        let rows = vec![row(0.01), row(0.05), row(0.0500001), row(0.2), row(0.0)];
        let brute = rows.iter().filter(|r| r.pd > 0.05).count();
        let out = filter_pd(rows, PD_CUTOFF);
        assert_eq!(out.removed, brute);
        assert_eq!(out.removed, 2);
        assert!(out.rows.iter().any(|r| r.pd == 0.05));
        let clean = vec![row(0.01), row(0.05)];
        assert_eq!(filter_pd(clean.clone(), PD_CUTOFF).rows, clean);
    }

    #[test]
    fn describe_constant_column_and_mode() {
        let rows: Vec<LoanRow> =
            (0..10).map(|i| LoanRow { maturity_months: if i < 6 { 60 } else { 12 }, ..row(0.01) }).collect();
        let d = describe(&rows).unwrap();
        let pd = d.iter().find(|c| c.column == "pd").unwrap();
        assert_eq!(pd.sd, 0.0);
        let m = d.iter().find(|c| c.column == "maturity_months").unwrap();
        assert_eq!(m.mode, Some(60.0));
        assert!(describe(&[]).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }
}
