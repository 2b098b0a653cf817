use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{quantile_sorted, DataError, Indicator, LoanRow, OverdraftRow, YearMonth};

const BLOCK: usize = 8192;

/// Regressors shared by every regime, in design-column order after the intercept.
pub const DESIGN_COVARIATES: [Covariate; 5] =
    [Covariate::PdPct, Covariate::LogVolume, Covariate::EcbDfr, Covariate::MaturityYears, Covariate::GdpGrowth];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    /// PD in percentage points.
    PdPct,
    /// `ln(volume / 1000 eur)`.
    LogVolume,
    EcbDfr,
    MaturityYears,
    GdpGrowth,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::PdPct => "pd_pct",
            Covariate::LogVolume => "log_volume",
            Covariate::EcbDfr => "ecb_dfr",
            Covariate::MaturityYears => "maturity_years",
            Covariate::GdpGrowth => "gdp_growth",
        }
    }

    pub fn value(self, r: &LoanRow) -> f64 {
        match self {
            Covariate::PdPct => 100.0 * r.pd,
            Covariate::LogVolume => (r.volume_eur / 1000.0).ln(),
            Covariate::EcbDfr => r.ecb_dfr,
            Covariate::MaturityYears => r.maturity_months as f64 / 12.0,
            Covariate::GdpGrowth => r.gdp_growth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub weight: f64,
    pub sigma: f64,
    pub intercept: f64,
    /// Coefficients on [`DESIGN_COVARIATES`], same order.
    pub slopes: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub seed: u64,
    pub regimes: Vec<Regime>,
    pub effect_indicator: Indicator,
    /// Mean rate difference, in basis points, between the indicator's 75th and 25th percentiles.
    pub indicator_effect_bp: f64,
    pub maturity_mode_months: u32,
    pub mean_volume_eur: f64,
    pub volume_log_sd: f64,
    pub pd_median: f64,
    pub pd_log_sd: f64,
    pub n_banks: u32,
    pub n_borrowers: u64,
    pub start: YearMonth,
    pub months: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let regime = |weight, intercept, slopes| Regime { weight, sigma: 0.15, intercept, slopes };
        GeneratorConfig {
            n: 20_000,
            seed: 42,
            regimes: vec![
                regime(0.30, 1.00, [0.08, -0.10, 0.70, 0.03, 0.03]),
                regime(0.45, 1.75, [0.10, -0.08, 0.80, 0.02, 0.03]),
                regime(0.25, 2.50, [0.12, -0.12, 0.90, 0.04, 0.05]),
            ],
            effect_indicator: Indicator::Niu,
            indicator_effect_bp: 14.0,
            maturity_mode_months: 60,
            mean_volume_eur: 20_000.0,
            volume_log_sd: 1.0,
            pd_median: 0.008,
            pd_log_sd: 0.9,
            n_banks: 30,
            n_borrowers: 8_000,
            start: YearMonth { year: 2019, month: 1 },
            months: 60,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.regimes.is_empty() {
            return bad("at least one regime is required".into());
        }
        let total: f64 = self.regimes.iter().map(|r| r.weight).sum();
        if (total - 1.0).abs() > 1e-10 || self.regimes.iter().any(|r| !(r.weight >= 0.0)) {
            return bad(format!("regime weights must be nonnegative and sum to 1, got {total}"));
        }
        if self.regimes.iter().any(|r| !(r.sigma > 0.0 && r.sigma.is_finite())) {
            return bad("regime sigma must be positive".into());
        }
        if !(self.mean_volume_eur > 0.0 && self.volume_log_sd >= 0.0 && self.pd_median > 0.0 && self.pd_log_sd >= 0.0) {
            return bad("volume and pd distribution parameters must be positive".into());
        }
        if self.maturity_mode_months == 0 || self.n_banks == 0 || self.n_borrowers == 0 || self.months == 0 {
            return bad("maturity mode, banks, borrowers and months must be positive".into());
        }
        if !self.indicator_effect_bp.is_finite() {
            return bad("indicator effect must be finite".into());
        }
        Ok(())
    }
}

/// Monthly macro paths and (bank, month) indicator tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorProcess {
    pub ecb_dfr: Vec<f64>,
    pub gdp_growth: Vec<f64>,
    /// Indexed `[month][bank]`.
    pub niu: Vec<Vec<f64>>,
    pub asi: Vec<Vec<f64>>,
    pub disagreement: Vec<Vec<f64>>,
    /// Bank-level component of ASI.
    pub asi_bank: Vec<f64>,
}

impl IndicatorProcess {
    pub fn draw(months: u32, banks: u32, rng: &mut ChaCha8Rng) -> Self {
        let (t_n, b_n) = (months as usize, banks as usize);
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        let ar = |z: &mut dyn FnMut() -> f64| {
            let mut a = z();
            (0..t_n)
                .map(|_| {
                    let v = a;
                    a = 0.8 * a + 0.6 * z();
                    v
                })
                .collect::<Vec<f64>>()
        };
        let niu_t = ar(&mut z);
        let asi_t = ar(&mut z);
        let dis_t = ar(&mut z);
        let half = t_n as f64 / 2.0;
        let ecb_dfr = (0..t_n)
            .map(|t| if (t as f64) < half { -0.5 } else { (-0.5 + 4.5 * (t as f64 - half) / half.max(1.0)).min(4.0) })
            .collect();
        let gdp_growth = (0..t_n).map(|t| 1.5 + (std::f64::consts::TAU * t as f64 / 24.0).sin() + 0.4 * z()).collect();
        let asi_bank: Vec<f64> = (0..b_n).map(|_| z()).collect();
        let mut niu = vec![vec![0.0; b_n]; t_n];
        let mut asi = vec![vec![0.0; b_n]; t_n];
        let mut disagreement = vec![vec![0.0; b_n]; t_n];
        for t in 0..t_n {
            for b in 0..b_n {
                niu[t][b] = 1.0 + 0.4 * niu_t[t] + 0.25 * z();
                asi[t][b] = 0.3 * asi_bank[b] + 0.3 * asi_t[t] + 0.2 * z();
                disagreement[t][b] = 0.5 + 0.15 * dis_t[t].abs() + 0.05 * z();
            }
        }
        IndicatorProcess { ecb_dfr, gdp_growth, niu, asi, disagreement, asi_bank }
    }

    pub fn table(&self, which: Indicator) -> &Vec<Vec<f64>> {
        match which {
            Indicator::Niu => &self.niu,
            Indicator::Asi => &self.asi,
            Indicator::Disagreement => &self.disagreement,
        }
    }

    /// 25th and 75th percentiles over all (bank, month) cells.
    pub fn quartiles(&self, which: Indicator) -> (f64, f64) {
        let mut v: Vec<f64> = self.table(which).iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueComponent {
    pub weight: f64,
    pub sigma: f64,
    /// Aligned with [`GroundTruth::names`].
    pub beta: Vec<f64>,
}

/// Parameters behind a simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    pub names: Vec<String>,
    pub components: Vec<TrueComponent>,
    pub indicator_coef: f64,
    pub indicator_q25: f64,
    pub indicator_q75: f64,
    pub realized_shares: Vec<f64>,
    pub regime_of_row: Vec<usize>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn maturity_support(mode: u32) -> (Vec<u32>, Vec<f64>) {
    let mut support: Vec<u32> = (1..=10).map(|k| 12 * k).filter(|&m| m != mode).collect();
    let rest = 0.7 / support.len() as f64;
    let mut weights = vec![rest; support.len()];
    support.push(mode);
    weights.push(0.3);
    (support, weights)
}

fn categorical(u: f64, weights: &[f64]) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn borrower_codes(borrower: u64) -> (u32, u32, u32) {
    ((borrower % 10) as u32, ((borrower / 10) % 13) as u32, ((borrower / 130) % 4) as u32)
}

/// Draws a loan sample from a finite mixture of linear rate equations.
/// Row blocks are generated concurrently from per-block streams of `seed`.
pub fn simulate_loans(cfg: &GeneratorConfig) -> Result<(Vec<LoanRow>, GroundTruth), DataError> {
    cfg.validate()?;
    let mut rng0 = stream_rng(cfg.seed, 0);
    let process = IndicatorProcess::draw(cfg.months, cfg.n_banks, &mut rng0);
    let (q25, q75) = process.quartiles(cfg.effect_indicator);
    let indicator_coef =
        if cfg.indicator_effect_bp == 0.0 { 0.0 } else { cfg.indicator_effect_bp / 100.0 / (q75 - q25) };

    let (mat_support, mat_weights) = maturity_support(cfg.maturity_mode_months);
    let vol_mu = cfg.mean_volume_eur.ln() - cfg.volume_log_sd.powi(2) / 2.0;
    let volume = LogNormal::new(vol_mu, cfg.volume_log_sd).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let pd = LogNormal::new(cfg.pd_median.ln(), cfg.pd_log_sd).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    let regime_weights: Vec<f64> = cfg.regimes.iter().map(|r| r.weight).collect();

    let blocks = cfg.n.div_ceil(BLOCK);
    let generated: Vec<Vec<(LoanRow, usize)>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = stream_rng(cfg.seed, blk as u64 + 1);
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(cfg.n);
            (lo..hi)
                .map(|i| {
                    let bank = rng.random_range(0..cfg.n_banks);
                    let t = rng.random_range(0..cfg.months);
                    let borrower = rng.random_range(0..cfg.n_borrowers);
                    let (sector, department, size_class) = borrower_codes(borrower);
                    let g = categorical(rng.random(), &regime_weights);
                    let (tu, bu) = (t as usize, bank as usize);
                    let mut row = LoanRow {
                        loan_id: i as u64 + 1,
                        bank_id: bank + 1,
                        borrower_id: borrower + 1,
                        sector,
                        department,
                        size_class,
                        date: cfg.start.plus_months(t),
                        rate_pct: 0.0,
                        volume_eur: volume.sample(&mut rng),
                        maturity_months: mat_support[categorical(rng.random(), &mat_weights)],
                        pd: pd.sample(&mut rng).min(0.999),
                        ecb_dfr: process.ecb_dfr[tu],
                        gdp_growth: process.gdp_growth[tu],
                        niu: process.niu[tu][bu],
                        asi: process.asi[tu][bu],
                        disagreement: process.disagreement[tu][bu],
                    };
                    let reg = &cfg.regimes[g];
                    let noise: f64 = rng.sample(StandardNormal);
                    let mean = reg.intercept
                        + DESIGN_COVARIATES.iter().zip(&reg.slopes).map(|(c, b)| b * c.value(&row)).sum::<f64>()
                        + indicator_coef * row.indicator(cfg.effect_indicator);
                    row.rate_pct = mean + reg.sigma * noise;
                    (row, g)
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.n);
    let mut regime_of_row = Vec::with_capacity(cfg.n);
    for (row, g) in generated.into_iter().flatten() {
        rows.push(row);
        regime_of_row.push(g);
    }
    let mut counts = vec![0usize; cfg.regimes.len()];
    for &g in &regime_of_row {
        counts[g] += 1;
    }
    let mut names: Vec<String> =
        std::iter::once("intercept").chain(DESIGN_COVARIATES.iter().map(|c| c.name())).map(String::from).collect();
    names.push(cfg.effect_indicator.column().to_string());
    let components = cfg
        .regimes
        .iter()
        .map(|r| {
            let mut beta = vec![r.intercept];
            beta.extend_from_slice(&r.slopes);
            beta.push(indicator_coef);
            TrueComponent { weight: r.weight, sigma: r.sigma, beta }
        })
        .collect();
    let truth = GroundTruth {
        config: cfg.clone(),
        names,
        components,
        indicator_coef,
        indicator_q25: q25,
        indicator_q75: q75,
        realized_shares: counts.iter().map(|&c| c as f64 / cfg.n as f64).collect(),
        regime_of_row,
    };
    Ok((rows, truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverdraftConfig {
    pub seed: u64,
    pub n_banks: u32,
    pub months: u32,
    pub obs_per_bank_month: u32,
    pub n_borrowers: u64,
    /// Give every observation its own borrower.
    pub one_obs_per_borrower: bool,
    /// Within-bank effect of NIU on the spread, percentage points per unit.
    pub beta_niu: f64,
    /// Loading of the bank intercept on the bank-level ASI component.
    pub asi_composition: f64,
    pub gamma_gdp: f64,
    pub gamma_dfr: f64,
    pub delta_pd_pct: f64,
    pub bank_month_shock_sd: f64,
    pub noise_sd: f64,
    pub start: YearMonth,
}

impl Default for OverdraftConfig {
    fn default() -> Self {
        OverdraftConfig {
            seed: 7,
            n_banks: 25,
            months: 48,
            obs_per_bank_month: 12,
            n_borrowers: 3_000,
            one_obs_per_borrower: false,
            beta_niu: 0.12,
            asi_composition: 0.6,
            gamma_gdp: -0.05,
            gamma_dfr: 0.10,
            delta_pd_pct: 0.15,
            bank_month_shock_sd: 0.05,
            noise_sd: 0.30,
            start: YearMonth { year: 2019, month: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverdraftTruth {
    pub beta_niu: f64,
    pub beta_asi: f64,
    pub beta_disagreement: f64,
    pub bank_intercepts: Vec<f64>,
}

/// Bank-month overdraft panel. The spread loads on NIU within banks, while
/// ASI only correlates with the bank intercepts.
pub fn simulate_overdrafts(cfg: &OverdraftConfig) -> Result<(Vec<OverdraftRow>, OverdraftTruth), DataError> {
    if cfg.n_banks < 1 || cfg.months < 1 || cfg.obs_per_bank_month < 1 || cfg.n_borrowers < 1 {
        return Err(DataError::InvalidConfig("banks, months, observations and borrowers must be positive".into()));
    }
    if !(cfg.noise_sd > 0.0 && cfg.bank_month_shock_sd >= 0.0) {
        return Err(DataError::InvalidConfig("noise scales must be positive".into()));
    }
    let mut rng = stream_rng(cfg.seed, 0);
    let process = IndicatorProcess::draw(cfg.months, cfg.n_banks, &mut rng);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let bank_intercepts: Vec<f64> =
        process.asi_bank.iter().map(|c| 1.5 + cfg.asi_composition * c + 0.3 * unit.sample(&mut rng)).collect();
    let pd = LogNormal::new(0.008f64.ln(), 0.9).expect("valid lognormal");

    let mut rows = Vec::new();
    let mut id = 0u64;
    for t in 0..cfg.months as usize {
        for b in 0..cfg.n_banks as usize {
            let shock = cfg.bank_month_shock_sd * unit.sample(&mut rng);
            for _ in 0..cfg.obs_per_bank_month {
                id += 1;
                let borrower = if cfg.one_obs_per_borrower { id } else { rng.random_range(0..cfg.n_borrowers) + 1 };
                let (sector, department, size_class) = borrower_codes(borrower);
                let pd_v: f64 = pd.sample(&mut rng).min(0.05);
                let benchmark = process.ecb_dfr[t] + 0.1;
                let spread = bank_intercepts[b]
                    + cfg.beta_niu * process.niu[t][b]
                    + cfg.gamma_gdp * process.gdp_growth[t]
                    + cfg.gamma_dfr * process.ecb_dfr[t]
                    + cfg.delta_pd_pct * 100.0 * pd_v
                    + shock
                    + cfg.noise_sd * unit.sample(&mut rng);
                rows.push(OverdraftRow {
                    loan_id: id,
                    bank_id: b as u32 + 1,
                    borrower_id: borrower,
                    sector,
                    department,
                    size_class,
                    date: cfg.start.plus_months(t as u32),
                    rate_pct: benchmark + spread,
                    benchmark_pct: Some(benchmark),
                    volume_eur: None,
                    maturity_months: None,
                    pd: pd_v,
                    ecb_dfr: process.ecb_dfr[t],
                    gdp_growth: process.gdp_growth[t],
                    niu: process.niu[t][b],
                    asi: process.asi[t][b],
                    disagreement: process.disagreement[t][b],
                });
            }
        }
    }
    let truth = OverdraftTruth { beta_niu: cfg.beta_niu, beta_asi: 0.0, beta_disagreement: 0.0, bank_intercepts };
    Ok((rows, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{describe, filter_pd};

    #[test]
    fn same_seed_same_sample() {
        let cfg = GeneratorConfig { n: 3_000, ..Default::default() };
        let (a, _) = simulate_loans(&cfg).unwrap();
        let (b, _) = simulate_loans(&cfg).unwrap();
        assert_eq!(a, b);
        let (c, _) = simulate_loans(&GeneratorConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn regime_shares_match_weights() {
        let cfg = GeneratorConfig { n: 50_000, ..Default::default() };
        let (_, truth) = simulate_loans(&cfg).unwrap();
        for (share, reg) in truth.realized_shares.iter().zip(&cfg.regimes) {
            assert!((share - reg.weight).abs() < 0.02, "{share} vs {}", reg.weight);
        }
    }

    #[test]
    fn indicator_effect_is_recorded() {
        let (_, truth) = simulate_loans(&GeneratorConfig { n: 100, ..Default::default() }).unwrap();
        let bp = truth.indicator_coef * (truth.indicator_q75 - truth.indicator_q25) * 100.0;
        assert!((bp - 14.0).abs() < 1e-9);
        assert_eq!(truth.names.last().unwrap(), "niu");
        assert!(truth.components.iter().all(|c| *c.beta.last().unwrap() == truth.indicator_coef));
    }

    #[test]
    fn default_sample_has_documented_shape() {
        let (rows, _) = simulate_loans(&GeneratorConfig { n: 50_000, ..Default::default() }).unwrap();
        let d = describe(&rows).unwrap();
        let get = |c: &str| d.iter().find(|s| s.column == c).unwrap().clone();
        assert_eq!(get("maturity_months").mode, Some(60.0));
        assert!((get("volume_eur").mean / 20_000.0 - 1.0).abs() < 0.05);
        let filtered = filter_pd(rows, 0.05);
        assert!(filtered.removed > 0);
        assert!(filtered.rows.iter().all(|r| r.pd <= 0.05));
    }

    #[test]
    fn generator_moments_converge() {
        // Mean volume and regime shares stay within four standard errors of
        // their targets at every sample size.
        let cfg = GeneratorConfig::default();
        let cv = (cfg.volume_log_sd.powi(2).exp() - 1.0).sqrt();
        for n in [1_000, 10_000, 50_000] {
            let (rows, truth) = simulate_loans(&GeneratorConfig { n, seed: 5, ..cfg.clone() }).unwrap();
            let mean = rows.iter().map(|r| r.volume_eur).sum::<f64>() / n as f64;
            let se = cfg.mean_volume_eur * cv / (n as f64).sqrt();
            assert!((mean - cfg.mean_volume_eur).abs() < 4.0 * se, "n={n} mean={mean}");
            for (share, reg) in truth.realized_shares.iter().zip(&cfg.regimes) {
                let se = (reg.weight * (1.0 - reg.weight) / n as f64).sqrt();
                assert!((share - reg.weight).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = GeneratorConfig::default();
        cfg.regimes[0].weight = 0.5;
        assert!(matches!(cfg.validate(), Err(DataError::InvalidConfig(_))));
        let mut cfg = GeneratorConfig::default();
        cfg.regimes[1].sigma = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overdraft_panel_shape() {
        let cfg = OverdraftConfig::default();
        let (rows, truth) = simulate_overdrafts(&cfg).unwrap();
        assert_eq!(rows.len(), (cfg.n_banks * cfg.months * cfg.obs_per_bank_month) as usize);
        assert_eq!(truth.bank_intercepts.len(), cfg.n_banks as usize);
        assert!(rows.iter().all(|r| r.benchmark_pct.is_some() && r.volume_eur.is_none()));
        let (again, _) = simulate_overdrafts(&cfg).unwrap();
        assert_eq!(rows, again);
    }
}
