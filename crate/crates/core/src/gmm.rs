//! Diagonal-covariance Gaussian mixture models.
//!
//! Fitting is plain EM from seeded random-row initialization. Likelihoods are
//! accumulated in the log domain, and every M-step clamps variances to
//! [`VARIANCE_FLOOR`] so a component cannot collapse onto a single point.

use std::io::Write;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::matrix::Matrix;

pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Matrix,
    variances: Matrix,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Matrix, variances: Matrix) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if means.rows() != m || variances.rows() != m {
            return Err(Error::DimMismatch {
                expected: m,
                actual: means.rows().min(variances.rows()),
            });
        }
        if means.cols() != variances.cols() || means.cols() == 0 {
            return Err(Error::DimMismatch {
                expected: means.cols(),
                actual: variances.cols(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if variances.as_slice().iter().any(|v| !(*v >= VARIANCE_FLOOR) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "variances must be finite and at least {VARIANCE_FLOOR}"
            )));
        }
        if means.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn variances(&self) -> &Matrix {
        &self.variances
    }

    /// Free parameters: `(M - 1)` weights plus `M * d` means and `M * d` variances.
    pub fn n_params(&self) -> usize {
        let m = self.n_components();
        m * (2 * self.dim() + 1) - 1
    }

    /// Components reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let m = self.n_components();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::invalid("order is not a permutation of the components"));
        }
        let rows = |mat: &Matrix| {
            let r: Vec<&[f64]> = order.iter().map(|&i| mat.row(i)).collect();
            Matrix::from_rows(&r)
        };
        Ok(Self {
            weights: order.iter().map(|&i| self.weights[i]).collect(),
            means: rows(&self.means)?,
            variances: rows(&self.variances)?,
        })
    }

    fn check_data(&self, x: &Matrix) -> Result<()> {
        if x.is_empty() {
            return Err(Error::EmptyInput("no data rows"));
        }
        if x.cols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        Ok(())
    }

    fn scorer(&self) -> Scorer<'_> {
        let d = self.dim();
        let log_norm = (0..self.n_components())
            .map(|m| {
                let log_det: f64 = self.variances.row(m).iter().map(|v| v.ln()).sum();
                self.weights[m].ln() - 0.5 * (d as f64 * LN_2PI + log_det)
            })
            .collect();
        let inv_var = Matrix::from_vec(
            self.n_components(),
            d,
            self.variances.as_slice().iter().map(|v| 1.0 / v).collect(),
        )
        .expect("shape preserved");
        Scorer {
            model: self,
            log_norm,
            inv_var,
        }
    }

    /// Versioned text form: `gmm v1 M d`, then weights, means and variances.
    pub fn to_text(&self) -> String {
        let mut s = format!("gmm v1 {} {}\n", self.n_components(), self.dim());
        let line = |vals: &[f64]| {
            vals.iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
                + "\n"
        };
        s += &line(&self.weights);
        for r in self.means.iter_rows() {
            s += &line(r);
        }
        for r in self.variances.iter_rows() {
            s += &line(r);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, detail: String| Error::Parse {
            line: line + 1,
            detail,
        };
        let (hl, header) = lines.next().ok_or_else(|| perr(0, "empty model text".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "gmm" || fields[1] != "v1" {
            return Err(perr(hl, format!("bad header '{header}'")));
        }
        let m: usize = fields[2]
            .parse()
            .map_err(|_| perr(hl, format!("bad component count '{}'", fields[2])))?;
        let d: usize = fields[3]
            .parse()
            .map_err(|_| perr(hl, format!("bad dimension '{}'", fields[3])))?;
        let mut read_row = |want: usize| -> Result<Vec<f64>> {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(usize::MAX - 1, "truncated model text".into()))?;
            let vals = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| perr(ln, format!("bad number '{t}'"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != want {
                return Err(perr(ln, format!("expected {want} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let weights = read_row(m)?;
        let mut means = Vec::with_capacity(m * d);
        for _ in 0..m {
            means.extend(read_row(d)?);
        }
        let mut vars = Vec::with_capacity(m * d);
        for _ in 0..m {
            vars.extend(read_row(d)?);
        }
        Self::new(weights, Matrix::from_vec(m, d, means)?, Matrix::from_vec(m, d, vars)?)
    }
}

struct Scorer<'a> {
    model: &'a GaussianMixture,
    log_norm: Vec<f64>,
    inv_var: Matrix,
}

impl Scorer<'_> {
    /// `ln(w_m N(x; mu_m, sigma_m))` for every component.
    fn weighted_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let mu = self.model.means.row(m);
            let iv = self.inv_var.row(m);
            let mut q = 0.0;
            for i in 0..x.len() {
                let diff = x[i] - mu[i];
                q += diff * diff * iv[i];
            }
            *o = self.log_norm[m] - 0.5 * q;
        }
    }
}

/// Total log-likelihood `sum_t ln sum_m w_m N(x_t; mu_m, diag var_m)`.
pub fn log_likelihood(model: &GaussianMixture, x: &Matrix) -> Result<f64> {
    model.check_data(x)?;
    let scorer = model.scorer();
    let mut buf = vec![0.0; model.n_components()];
    let mut total = 0.0;
    for row in x.iter_rows() {
        scorer.weighted_log_densities(row, &mut buf);
        total += log_sum_exp(&buf);
    }
    Ok(total)
}

/// Posterior component probabilities per row, and the total log-likelihood.
pub fn responsibilities(model: &GaussianMixture, x: &Matrix) -> Result<(Matrix, f64)> {
    model.check_data(x)?;
    let scorer = model.scorer();
    let mut resp = Matrix::zeros(x.rows(), model.n_components());
    let mut total = 0.0;
    for (t, row) in x.iter_rows().enumerate() {
        let r = resp.row_mut(t);
        scorer.weighted_log_densities(row, r);
        let lse = log_sum_exp(r);
        total += lse;
        r.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    Ok((resp, total))
}

pub fn aic(model: &GaussianMixture, x: &Matrix) -> Result<f64> {
    Ok(2.0 * model.n_params() as f64 - 2.0 * log_likelihood(model, x)?)
}

pub fn bic(model: &GaussianMixture, x: &Matrix) -> Result<f64> {
    Ok(model.n_params() as f64 * (x.rows() as f64).ln() - 2.0 * log_likelihood(model, x)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
    /// Independent random initializations; the best final likelihood wins.
    pub n_init: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-4,
            seed: 42,
            n_init: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Log-likelihood of the initial model, then after every M-step.
    pub log_likelihood_trace: Vec<f64>,
    pub n_iters: usize,
    pub converged: bool,
    pub seed: u64,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood_trace.last().expect("trace is never empty")
    }
}

/// Mix a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x.iter_rows() {
        for i in 0..d {
            let diff = r[i] - mean[i];
            var[i] += diff * diff;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Fit an `m`-component diagonal GMM by EM.
pub fn fit_em(x: &Matrix, m: usize, cfg: &FitConfig) -> Result<(GaussianMixture, FitReport)> {
    if m == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if x.cols() == 0 {
        return Err(Error::invalid("data must have at least one dimension"));
    }
    if x.rows() < m {
        return Err(Error::invalid(format!(
            "{} rows cannot support {m} components",
            x.rows()
        )));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contains non-finite values"));
    }
    let (_, global_var) = column_stats(x);
    if global_var.iter().any(|&v| v < VARIANCE_FLOOR) {
        warn!("data has a (near) zero-variance dimension; variances floored at {VARIANCE_FLOOR}");
    }

    let mut best: Option<(GaussianMixture, FitReport)> = None;
    for attempt in 0..cfg.n_init.max(1) {
        let seed = if attempt == 0 {
            cfg.seed
        } else {
            derive_seed(cfg.seed, attempt as u64)
        };
        let (model, mut report) = fit_once(x, m, cfg, seed, &global_var)?;
        report.seed = cfg.seed;
        let better = match &best {
            None => true,
            Some((_, b)) => report.final_log_likelihood() > b.final_log_likelihood(),
        };
        if better {
            best = Some((model, report));
        }
    }
    Ok(best.expect("at least one initialization"))
}

fn fit_once(
    x: &Matrix,
    m: usize,
    cfg: &FitConfig,
    seed: u64,
    global_var: &[f64],
) -> Result<(GaussianMixture, FitReport)> {
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, m);
    let means_rows: Vec<&[f64]> = picks.iter().map(|i| x.row(i)).collect();
    let floored: Vec<f64> = global_var.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
    let mut model = GaussianMixture {
        weights: vec![1.0 / m as f64; m],
        means: Matrix::from_rows(&means_rows)?,
        variances: Matrix::from_rows(&vec![floored.as_slice(); m])?,
    };

    let (mut resp, mut ll) = responsibilities(&model, x)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut n_iters = 0;
    while n_iters < cfg.max_iters {
        m_step(&mut model, x, &resp);
        n_iters += 1;
        let (r, next) = responsibilities(&model, x)?;
        resp = r;
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < cfg.tol {
            converged = true;
            break;
        }
    }
    if !ll.is_finite() {
        return Err(Error::Numerical("EM produced a non-finite log-likelihood".into()));
    }
    Ok((
        model,
        FitReport {
            log_likelihood_trace: trace,
            n_iters,
            converged,
            seed,
        },
    ))
}

fn m_step(model: &mut GaussianMixture, x: &Matrix, resp: &Matrix) {
    let n = x.rows() as f64;
    let (m, d) = (model.n_components(), x.cols());
    let mut nk = vec![0.0; m];
    let mut means = vec![0.0; m * d];
    for (row, r) in x.iter_rows().zip(resp.iter_rows()) {
        for k in 0..m {
            nk[k] += r[k];
            let acc = &mut means[k * d..(k + 1) * d];
            for i in 0..d {
                acc[i] += r[k] * row[i];
            }
        }
    }
    for k in 0..m {
        if nk[k] > 1e-300 {
            means[k * d..(k + 1) * d].iter_mut().for_each(|v| *v /= nk[k]);
        }
    }
    let mut vars = vec![0.0; m * d];
    for (row, r) in x.iter_rows().zip(resp.iter_rows()) {
        for k in 0..m {
            let mu = &means[k * d..(k + 1) * d];
            let acc = &mut vars[k * d..(k + 1) * d];
            for i in 0..d {
                let diff = row[i] - mu[i];
                acc[i] += r[k] * diff * diff;
            }
        }
    }
    for k in 0..m {
        model.weights[k] = nk[k] / n;
        if nk[k] <= 1e-300 {
            // Starved component: weight goes to ~0, parameters are kept.
            continue;
        }
        model.means.row_mut(k).copy_from_slice(&means[k * d..(k + 1) * d]);
        for (dst, v) in model.variances.row_mut(k).iter_mut().zip(&vars[k * d..(k + 1) * d]) {
            *dst = (v / nk[k]).max(VARIANCE_FLOOR);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(Error::invalid(format!("unknown criterion '{other}'"))),
        }
    }
}

/// One point of the information-criterion curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n_components: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
}

impl CurvePoint {
    pub fn score(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }
}

/// CSV dump: `n_components,aic,bic`.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "n_components,aic,bic")?;
    for p in curve {
        writeln!(out, "{},{},{}", p.n_components, p.aic, p.bic)?;
    }
    Ok(())
}

/// Result of a component-count search.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best_n_components: usize,
    pub curve: Vec<CurvePoint>,
    pub best_model: GaussianMixture,
}

/// Fit every component count in `lo..=hi` and keep the one with the lowest
/// criterion value; ties go to the smaller count.
pub fn select_n_components(
    x: &Matrix,
    lo: usize,
    hi: usize,
    criterion: Criterion,
    cfg: &FitConfig,
) -> Result<Selection> {
    if lo == 0 || hi < lo {
        return Err(Error::invalid(format!("invalid component range [{lo}, {hi}]")));
    }
    if x.rows() < hi {
        return Err(Error::invalid(format!(
            "{} rows cannot support {hi} components",
            x.rows()
        )));
    }
    let fits: Vec<(GaussianMixture, CurvePoint)> = (lo..=hi)
        .into_par_iter()
        .map(|m| {
            let sub = FitConfig {
                seed: derive_seed(cfg.seed, m as u64),
                ..*cfg
            };
            let (model, report) = fit_em(x, m, &sub)?;
            let ll = report.final_log_likelihood();
            let k = model.n_params() as f64;
            let point = CurvePoint {
                n_components: m,
                log_likelihood: ll,
                aic: 2.0 * k - 2.0 * ll,
                bic: k * (x.rows() as f64).ln() - 2.0 * ll,
            };
            Ok((model, point))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, (_, p)) in fits.iter().enumerate() {
        if p.score(criterion) < fits[best].1.score(criterion) {
            best = i;
        }
    }
    let curve = fits.iter().map(|(_, p)| *p).collect();
    let (best_model, point) = fits.into_iter().nth(best).expect("non-empty range");
    Ok(Selection {
        best_n_components: point.n_components,
        curve,
        best_model,
    })
}
