use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Component, Design, MixtureError, MixtureModel, SIGMA_FLOOR};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub seed: u64,
    /// Number of initialisations; the first uses sliced pooled residuals.
    pub restarts: usize,
    /// Stop once the log-likelihood gain falls below `tol·(1 + |ℓ|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { seed: 42, restarts: 4, tol: 1e-10, max_iter: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponsibilitySummary {
    /// Mean responsibility per component (equals the fitted weight).
    pub mean: Vec<f64>,
    /// Share of observations whose largest responsibility is this component.
    pub hard_share: Vec<f64>,
    /// Average of the largest responsibility per observation.
    pub mean_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub g: usize,
    pub n: usize,
    pub n_params: usize,
    pub loglik_trace: Vec<f64>,
    pub final_loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub restart: usize,
    pub restart_logliks: Vec<Option<f64>>,
    pub restart_errors: Vec<Option<String>>,
    pub responsibilities: ResponsibilitySummary,
}

/// Compensated running sum.
#[derive(Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

/// Fills `tau` (row-major n×G) and returns the log-likelihood.
fn e_step(d: &Design, comps: &[Component], tau: &mut [f64]) -> f64 {
    let g = comps.len();
    let log_w: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
    let partials: Vec<Neumaier> = tau
        .par_chunks_mut(CHUNK * g)
        .enumerate()
        .map(|(chunk, out)| {
            let mut acc = Neumaier::default();
            for (local, t) in out.chunks_mut(g).enumerate() {
                let i = chunk * CHUNK + local;
                let (x, r) = (d.row(i), d.y[i]);
                let mut top = f64::NEG_INFINITY;
                for (k, c) in comps.iter().enumerate() {
                    t[k] = log_w[k] + c.log_density(r, x);
                    top = top.max(t[k]);
                }
                let mut s = 0.0;
                for v in t.iter_mut() {
                    *v = (*v - top).exp();
                    s += *v;
                }
                for v in t.iter_mut() {
                    *v /= s;
                }
                acc.add(top + s.ln());
            }
            acc
        })
        .collect();
    let mut total = Neumaier::default();
    for p in partials {
        total.add(p.sum);
        total.add(p.c);
    }
    total.value()
}

/// Solves `A β = b` after scaling `A` to unit diagonal.
fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, component: usize) -> Result<DVector<f64>, MixtureError> {
    let p = a.nrows();
    let scale: Vec<f64> = (0..p).map(|j| a[(j, j)]).collect();
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(MixtureError::SingularDesign { component });
    }
    let s = DVector::from_iterator(p, scale.iter().map(|v| 1.0 / v.sqrt()));
    let scaled = DMatrix::from_fn(p, p, |i, j| a[(i, j)] * s[i] * s[j]);
    let chol = scaled.cholesky().ok_or(MixtureError::SingularDesign { component })?;
    if (0..p).any(|j| chol.l_dirty()[(j, j)].powi(2) < 1e-13) {
        return Err(MixtureError::SingularDesign { component });
    }
    let z = chol.solve(&b.component_mul(&s));
    Ok(z.component_mul(&s))
}

/// `Σ τ x x'` and `Σ τ x y` for component `k`.
pub(super) fn weighted_moments(d: &Design, tau: &[f64], g: usize, k: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let p = d.p();
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    let mut mass = Neumaier::default();
    for i in 0..d.n() {
        let w = tau[i * g + k];
        if w == 0.0 {
            continue;
        }
        mass.add(w);
        let x = d.row(i);
        for r in 0..p {
            let wx = w * x[r];
            b[r] += wx * d.y[i];
            for c in r..p {
                a[r * p + c] += wx * x[c];
            }
        }
    }
    let a = DMatrix::from_fn(p, p, |r, c| if r <= c { a[r * p + c] } else { a[c * p + r] });
    (a, DVector::from_vec(b), mass.value())
}

fn weighted_ls(d: &Design, tau: &[f64], g: usize, k: usize) -> Result<Component, MixtureError> {
    let p = d.p();
    let (a, b, mass) = weighted_moments(d, tau, g, k);
    if mass < (p + 1) as f64 {
        return Err(MixtureError::DegenerateComponent { component: k, mass });
    }
    let beta = solve_spd(a, b, k)?;
    let mut ss = Neumaier::default();
    for i in 0..d.n() {
        let e = d.y[i] - beta.iter().zip(d.row(i)).map(|(b, x)| b * x).sum::<f64>();
        ss.add(tau[i * g + k] * e * e);
    }
    let sigma = (ss.value() / mass).sqrt().max(SIGMA_FLOOR);
    Ok(Component { weight: mass / d.n() as f64, sigma, beta: beta.iter().copied().collect() })
}

fn m_step(d: &Design, tau: &[f64], g: usize) -> Result<Vec<Component>, MixtureError> {
    (0..g).into_par_iter().map(|k| weighted_ls(d, tau, g, k)).collect()
}

fn initial_tau(d: &Design, g: usize, cfg: &EmConfig, restart: usize) -> Result<Vec<f64>, MixtureError> {
    let n = d.n();
    let pooled = weighted_ls(d, &vec![1.0; n], 1, 0)?;
    let resid: Vec<f64> = (0..n).map(|i| d.y[i] - pooled.mean(d.row(i))).collect();
    let mut tau = vec![0.0; n * g];
    if restart == 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            tau[i * g + rank * g / n] = 1.0;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(restart as u64);
        let mut centres: Vec<f64> = (0..g).map(|_| resid[rng.random_range(0..n)]).collect();
        centres.sort_by(f64::total_cmp);
        for (i, e) in resid.iter().enumerate() {
            let k = (0..g).min_by(|&a, &b| (e - centres[a]).abs().total_cmp(&(e - centres[b]).abs())).expect("g >= 1");
            tau[i * g + k] = 1.0;
        }
    }
    Ok(tau)
}

struct Run {
    comps: Vec<Component>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    tau: Vec<f64>,
}

fn run(d: &Design, g: usize, cfg: &EmConfig, restart: usize) -> Result<Run, MixtureError> {
    let mut tau = initial_tau(d, g, cfg, restart)?;
    let mut comps = m_step(d, &tau, g)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let ll = e_step(d, &comps, &mut tau);
        if let Some(&prev) = trace.last() {
            let gain: f64 = ll - prev;
            if gain < cfg.tol * (1.0 + ll.abs()) {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations >= cfg.max_iter {
            break;
        }
        comps = m_step(d, &tau, g)?;
        iterations += 1;
    }
    Ok(Run { comps, trace, iterations, converged, tau })
}

/// Fits a `g`-component mixture by EM and keeps the best of `cfg.restarts`
/// initialisations. Components come back in canonical (ascending intercept) order.
pub fn em_fit(d: &Design, g: usize, cfg: &EmConfig) -> Result<(MixtureModel, FitReport), MixtureError> {
    if g == 0 {
        return Err(MixtureError::InvalidInput("component count must be at least 1".into()));
    }
    let (n, p) = (d.n(), d.p());
    let needed = g * (p + 2);
    if n <= needed {
        return Err(MixtureError::TooFewObservations { n, needed });
    }
    let restarts = if g == 1 { 1 } else { cfg.restarts.max(1) };
    let runs: Vec<Result<Run, MixtureError>> = (0..restarts).into_par_iter().map(|k| run(d, g, cfg, k)).collect();

    let mut best: Option<usize> = None;
    for (k, r) in runs.iter().enumerate() {
        if let Ok(r) = r {
            let ll = *r.trace.last().expect("non-empty trace");
            if best.is_none_or(|b| ll > *runs[b].as_ref().expect("ok").trace.last().expect("non-empty")) {
                best = Some(k);
            }
        }
    }
    let restart_logliks = runs.iter().map(|r| r.as_ref().ok().map(|r| *r.trace.last().expect("non-empty"))).collect();
    let restart_errors = runs.iter().map(|r| r.as_ref().err().map(ToString::to_string)).collect();
    let Some(winner) = best else {
        return Err(runs.into_iter().find_map(Result::err).expect("at least one run"));
    };
    let run = runs.into_iter().nth(winner).expect("winner exists").expect("winner is ok");

    let mut model = MixtureModel { names: d.names.clone(), components: run.comps };
    let order = model.canonicalize();
    let summary = summarize(&run.tau, g, &order);
    let final_loglik = *run.trace.last().expect("non-empty trace");
    let n_params = g * (p + 1) + (g - 1);
    let report = FitReport {
        g,
        n,
        n_params,
        aic: -2.0 * final_loglik + 2.0 * n_params as f64,
        bic: -2.0 * final_loglik + n_params as f64 * (n as f64).ln(),
        loglik_trace: run.trace,
        final_loglik,
        n_iterations: run.iterations,
        converged: run.converged,
        restart: winner,
        restart_logliks,
        restart_errors,
        responsibilities: summary,
    };
    Ok((model, report))
}

fn summarize(tau: &[f64], g: usize, order: &[usize]) -> ResponsibilitySummary {
    let n = tau.len() / g;
    let mut mean = vec![0.0; g];
    let mut hard = vec![0usize; g];
    let mut max_sum = 0.0;
    for t in tau.chunks(g) {
        let (arg, top) =
            t.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
        hard[arg] += 1;
        max_sum += top;
        for (m, v) in mean.iter_mut().zip(t) {
            *m += v;
        }
    }
    ResponsibilitySummary {
        mean: order.iter().map(|&k| mean[k] / n as f64).collect(),
        hard_share: order.iter().map(|&k| hard[k] as f64 / n as f64).collect(),
        mean_max: max_sum / n as f64,
    }
}

/// Posterior component probabilities under `m`, row-major n×G.
pub fn responsibilities(m: &MixtureModel, d: &Design) -> Result<Vec<f64>, MixtureError> {
    m.validate()?;
    if m.names != d.names {
        return Err(MixtureError::InvalidInput("model and design columns differ".into()));
    }
    let mut tau = vec![0.0; d.n() * m.g()];
    e_step(d, &m.components, &mut tau);
    Ok(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Aic,
    Bic,
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(format!("unknown criterion `{other}` (expected aic or bic)")),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub g: usize,
    pub n_params: Option<usize>,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub criterion: Criterion,
    pub best: usize,
    pub table: Vec<SelectionRow>,
    pub model: MixtureModel,
    pub report: FitReport,
}

/// Fits `G = 1..=g_max` and keeps the criterion minimiser.
pub fn select_components(
    d: &Design,
    g_max: usize,
    criterion: Criterion,
    cfg: &EmConfig,
) -> Result<Selection, MixtureError> {
    select_components_in(d, 1..=g_max, criterion, cfg)
}

/// Same as [`select_components`] over an arbitrary range of component counts.
pub fn select_components_in(
    d: &Design,
    gs: RangeInclusive<usize>,
    criterion: Criterion,
    cfg: &EmConfig,
) -> Result<Selection, MixtureError> {
    if *gs.start() == 0 || gs.is_empty() {
        return Err(MixtureError::InvalidInput(format!(
            "component range {gs:?} must be non-empty and start at 1 or more"
        )));
    }
    let g0 = *gs.start();
    let fits: Vec<Result<(MixtureModel, FitReport), MixtureError>> =
        gs.into_par_iter().map(|g| em_fit(d, g, cfg)).collect();
    let score = |r: &FitReport| match criterion {
        Criterion::Aic => r.aic,
        Criterion::Bic => r.bic,
    };
    let table = fits
        .iter()
        .enumerate()
        .map(|(i, f)| match f {
            Ok((_, r)) => SelectionRow {
                g: g0 + i,
                n_params: Some(r.n_params),
                loglik: Some(r.final_loglik),
                aic: Some(r.aic),
                bic: Some(r.bic),
                converged: Some(r.converged),
                error: None,
            },
            Err(e) => SelectionRow {
                g: g0 + i,
                n_params: None,
                loglik: None,
                aic: None,
                bic: None,
                converged: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let best = fits
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.as_ref().ok().map(|(_, r)| (i, score(r))))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(fits.into_iter().find_map(Result::err).expect("range is non-empty"));
    };
    let (model, report) = fits.into_iter().nth(best).expect("index in range").expect("best fit is ok");
    Ok(Selection { criterion, best: g0 + best, table, model, report })
}
