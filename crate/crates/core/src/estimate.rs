//! Cross-fitted one-step and targeted minimum loss estimators of the direct
//! and indirect effects, with Wald intervals.
//!
//! Both estimators work on the `[0, 1]` outcome scale of the dataset and
//! back-scale point estimates and standard errors by the outcome width.

use log::debug;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::eif::{columns, eif_rows, EifColumns, EifRow, Terms};
use crate::error::{Error, Result};
use crate::intervene::Intervention;
use crate::law::Clamp;
use crate::learn::irls::{expit, fit_logistic_irls, logit, IrlsOptions};
use crate::learn::{ClampCounts, Dataset, FoldPlan, NuisanceSet, WBlock};

/// Probabilities tilted by the submodels are kept inside `[BOUND, 1 - BOUND]`.
const BOUND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(rename = "onestep")]
    OneStep,
    Tmle,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::OneStep => "onestep",
            Estimator::Tmle => "tmle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TmleDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `|Pn|` of the non-plug-in part of the direct and indirect influence
    /// functions at the final iterate, on the scaled outcome.
    pub score_norms: [f64; 2],
    /// Stopping thresholds for the two scores.
    pub tolerance: [f64; 2],
    /// Plug-ins `θ₁,₀, θ₁,δ, θ₂,δ` on the scaled outcome.
    pub theta: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub clamps: ClampCounts,
    /// Denominators raised to the evaluation floor.
    pub floored: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tmle: Option<TmleDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub estimator: Estimator,
    pub spec: Intervention,
    pub n: usize,
    pub alpha: f64,
    pub psi_d: f64,
    pub psi_i: f64,
    pub se_d: f64,
    pub se_i: f64,
    pub ci_d: (f64, f64),
    pub ci_i: (f64, f64),
    pub diagnostics: Diagnostics,
    /// Influence-function columns on the scaled outcome.
    #[serde(skip)]
    pub eif: EifColumns,
}

impl EffectEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `point ± z_{1−α/2}·se`.
pub fn wald_ci(point: f64, se: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input(format!("confidence level alpha must lie in (0, 1), got {alpha}")));
    }
    if !(se >= 0.0) {
        return Err(Error::Input(format!("standard error must be nonnegative, got {se}")));
    }
    if se == 0.0 {
        return Ok((point, point));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    Ok((point - z * se, point + z * se))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the `n − 1` denominator.
fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    estimator: Estimator,
    spec: Intervention,
    data: &Dataset,
    (psi_d, psi_i): (f64, f64),
    eif: EifColumns,
    alpha: f64,
    clamps: ClampCounts,
    tmle: Option<TmleDiagnostics>,
) -> Result<EffectEstimate> {
    let width = data.y_scale().width();
    let rn = (eif.n() as f64).sqrt();
    let se_d = width * sd(&eif.direct()) / rn;
    let se_i = width * sd(&eif.indirect()) / rn;
    let (psi_d, psi_i) = (width * psi_d, width * psi_i);
    Ok(EffectEstimate {
        estimator,
        spec,
        n: eif.n(),
        alpha,
        psi_d,
        psi_i,
        se_d,
        se_i,
        ci_d: wald_ci(psi_d, se_d, alpha)?,
        ci_i: wald_ci(psi_i, se_i, alpha)?,
        diagnostics: Diagnostics { clamps, floored: eif.floored, tmle },
        eif,
    })
}

/// One-step estimator: empirical means of the fold-matched influence
/// function columns.
pub fn onestep(
    data: &Dataset,
    eta: &NuisanceSet,
    folds: &FoldPlan,
    spec: Intervention,
    stabilize: bool,
    alpha: f64,
) -> Result<EffectEstimate> {
    let rows = eif_rows(data, eta, folds, spec, 0.0)?;
    let eif = columns(&rows, stabilize)?;
    let psi = (mean(&eif.direct()), mean(&eif.indirect()));
    assemble(Estimator::OneStep, spec, data, psi, eif, alpha, eta.clamps, None)
}

/// Stopping rule for the targeting loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TolRule {
    /// `σ̂/(√n·log n)` per effect, with `σ̂` the influence-function SD.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmleOptions {
    pub tol: TolRule,
    pub max_iter: usize,
    pub alpha: f64,
    /// Bounds for the tilted propensity.
    pub clamp: Clamp,
}

impl Default for TmleOptions {
    fn default() -> Self {
        TmleOptions { tol: TolRule::Auto, max_iter: 100, alpha: 0.05, clamp: Clamp::default() }
    }
}

fn bounded_logit(p: f64) -> f64 {
    logit(p.clamp(BOUND, 1.0 - BOUND))
}

fn tilt(p: f64, shift: f64) -> f64 {
    expit(bounded_logit(p) + shift).clamp(BOUND, 1.0 - BOUND)
}

/// Fluctuation covariates of one stratum block.
struct Covariates {
    /// `H_D, H_I` at `(a * nz + z) * 2 + l`
    h: [Vec<f64>; 2],
    /// `K_D, K_I` per treatment level
    k: [[f64; 2]; 2],
    /// `M_D, M_I`
    m: [f64; 2],
    /// `g_δ/g` per treatment level
    j: [f64; 2],
}

fn covariates(blk: &WBlock, a_levels: &[f64], spec: Intervention) -> Result<Covariates> {
    let gd = spec.post_density(&blk.g, a_levels)?;
    let nz = blk.nz;
    let mut h = [vec![0.0; 2 * nz * 2], vec![0.0; 2 * nz * 2]];
    for a in 0..2 {
        for z in 0..nz {
            for l in 0..2 {
                let bd = blk.b(l, a) / blk.d(l, z, a);
                let idx = blk.azl(a, z, l);
                h[0][idx] = bd * (1.0 - gd[a] / blk.e(a, z));
                h[1][idx] = bd * (gd[a] / blk.e(a, z) - gd[a] / blk.g[a]);
            }
        }
    }
    let ratio = [gd[0] / blk.g[0], gd[1] / blk.g[1]];
    let dv = |a: usize| blk.v(1, a) - blk.v(0, a);
    let ds = |a: usize| blk.s(1, a) - blk.s(0, a);
    let k = [
        [dv(0) - ratio[0] * ds(0), dv(1) - ratio[1] * ds(1)],
        [ratio[0] * (ds(0) - dv(0)), ratio[1] * (ds(1) - dv(1))],
    ];
    let f = gd[1] * (1.0 - gd[1]) / (blk.g[1] * (1.0 - blk.g[1]));
    let m = [blk.q1() - f * blk.q2(), f * (blk.q2() - blk.q1())];
    Ok(Covariates { h, k, m, j: ratio })
}

/// Empirical means of the submodel scores at zero fluctuation, in the order
/// `[m, b, g, ū]`, each as `[direct, indirect]`.
///
/// Their sums are the empirical means of the non-plug-in parts of the two
/// influence functions.
pub fn submodel_scores(data: &Dataset, eta: &NuisanceSet, folds: &FoldPlan, spec: Intervention) -> Result<[[f64; 2]; 4]> {
    let covs = block_covariates(data, eta, spec)?;
    let mut out = [[0.0; 2]; 4];
    for (i, o) in data.rows().iter().enumerate() {
        let f = folds.fold_of(i);
        let blk = eta.block(f, o.w);
        let c = &covs[f][o.w];
        let idx = blk.azl(o.a, o.z, o.l);
        let rm = o.y - blk.m[idx];
        let rb = o.l as f64 - blk.b(1, o.a);
        let rg = o.a as f64 - blk.g[1];
        let ru = blk.u(o.z, o.a) - blk.ubar[o.a];
        for e in 0..2 {
            out[0][e] += c.h[e][idx] * rm;
            out[1][e] += c.k[e][o.a] * rb;
            out[2][e] += c.m[e] * rg;
        }
        out[3][0] += ru;
        out[3][1] -= c.j[o.a] * ru;
    }
    let n = data.n() as f64;
    for row in &mut out {
        row[0] /= n;
        row[1] /= n;
    }
    Ok(out)
}

fn block_covariates(data: &Dataset, eta: &NuisanceSet, spec: Intervention) -> Result<Vec<Vec<Covariates>>> {
    eta.blocks
        .iter()
        .map(|fold| fold.iter().map(|blk| covariates(blk, data.a_levels(), spec)).collect())
        .collect()
}

/// Non-plug-in parts of one row's terms.
fn non_plug(t: &Terms) -> f64 {
    t.d() - t.plug_in
}

struct Scores {
    norms: [f64; 2],
    tol: [f64; 2],
    theta: [f64; 3],
}

fn evaluate(rows: &[EifRow], rule: TolRule) -> Scores {
    let n = rows.len() as f64;
    let np_d: Vec<f64> = rows.iter().map(|r| non_plug(&r.t1_null) - non_plug(&r.t2_delta)).collect();
    let np_i: Vec<f64> = rows.iter().map(|r| non_plug(&r.t2_delta) - non_plug(&r.t1_delta)).collect();
    let dd: Vec<f64> = rows.iter().map(|r| r.t1_null.d() - r.t2_delta.d()).collect();
    let di: Vec<f64> = rows.iter().map(|r| r.t2_delta.d() - r.t1_delta.d()).collect();
    let tol = match rule {
        TolRule::Auto => {
            let scale = n.sqrt() * n.ln();
            [sd(&dd) / scale, sd(&di) / scale]
        }
        TolRule::Fixed(t) => [t, t],
    };
    let theta = [
        mean(&rows.iter().map(|r| r.t1_null.plug_in).collect::<Vec<_>>()),
        mean(&rows.iter().map(|r| r.t1_delta.plug_in).collect::<Vec<_>>()),
        mean(&rows.iter().map(|r| r.t2_delta.plug_in).collect::<Vec<_>>()),
    ];
    Scores { norms: [mean(&np_d).abs(), mean(&np_i).abs()], tol, theta }
}

fn fit_tilt(
    submodel: &'static str,
    columns: &[&[f64]],
    y: &[f64],
    offset: &[f64],
    intercept: bool,
) -> Result<Vec<f64>> {
    let opts = IrlsOptions { intercept, ..IrlsOptions::default() };
    fit_logistic_irls(columns, y, None, Some(offset), &opts)
        .map(|f| f.coef)
        .map_err(|e| Error::Tilt { submodel, source: Box::new(e) })
}

/// Whether the intervention leaves every fitted propensity unchanged, in
/// which case the direct and indirect influence functions are negatives of
/// each other and only the direct covariates are used.
fn null_like(eta: &NuisanceSet, a_levels: &[f64], spec: Intervention) -> Result<bool> {
    if spec.is_identity() {
        return Ok(true);
    }
    for blk in eta.blocks.iter().flatten() {
        let gd = spec.post_density(&blk.g, a_levels)?;
        if gd.iter().zip(&blk.g).any(|(x, y)| (x - y).abs() > 1e-15) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn refs(x: &[Vec<f64>]) -> Vec<&[f64]> {
    x.iter().map(Vec::as_slice).collect()
}

/// One round of targeting: tilts `m`, `b` and `g` with covariates from the
/// current fit, refreshes the derived nuisances, then tilts `ū`.
fn target_step(data: &Dataset, eta: &mut NuisanceSet, folds: &FoldPlan, spec: Intervention, opts: &TmleOptions, both: bool) -> Result<()> {
    let covs = block_covariates(data, eta, spec)?;
    let n = data.n();
    let ne = if both { 2 } else { 1 };
    let mut xm = vec![vec![0.0; n]; ne];
    let mut xb = vec![vec![0.0; n]; ne];
    let mut xg = vec![vec![0.0; n]; ne];
    let (mut om, mut ob, mut og) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut ym, mut yb, mut yg) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, o) in data.rows().iter().enumerate() {
        let f = folds.fold_of(i);
        let blk = eta.block(f, o.w);
        let c = &covs[f][o.w];
        let idx = blk.azl(o.a, o.z, o.l);
        for e in 0..ne {
            xm[e][i] = c.h[e][idx];
            xb[e][i] = c.k[e][o.a];
            xg[e][i] = c.m[e];
        }
        om[i] = bounded_logit(blk.m[idx]);
        ob[i] = bounded_logit(blk.b(1, o.a));
        og[i] = bounded_logit(blk.g[1]);
        ym[i] = o.y;
        yb[i] = o.l as f64;
        yg[i] = o.a as f64;
    }
    let em = fit_tilt("m", &refs(&xm), &ym, &om, false)?;
    let eb = fit_tilt("b", &refs(&xb), &yb, &ob, false)?;
    let eg = fit_tilt("g", &refs(&xg), &yg, &og, false)?;
    debug!("tilts m {em:?} b {eb:?} g {eg:?}");
    let lin = |coef: &[f64], x: [f64; 2]| coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();

    for (fold, fold_covs) in eta.blocks.iter_mut().zip(&covs) {
        for (blk, c) in fold.iter_mut().zip(fold_covs) {
            for idx in 0..blk.m.len() {
                blk.m[idx] = tilt(blk.m[idx], lin(&em, [c.h[0][idx], c.h[1][idx]]));
            }
            for a in 0..2 {
                let b1 = tilt(blk.b[a * 2 + 1], lin(&eb, [c.k[0][a], c.k[1][a]]));
                blk.b[a * 2 + 1] = b1;
                blk.b[a * 2] = 1.0 - b1;
            }
            let g1 = opts.clamp.apply(expit(bounded_logit(blk.g[1]) + lin(&eg, c.m)));
            blk.g = vec![1.0 - g1, g1];
            let ubar = blk.ubar.clone();
            blk.derive_exact();
            blk.ubar = ubar;
        }
    }

    // ū tilt: intercept plus g_δ/g at the updated propensity
    let mut ratio = vec![[0.0; 2]; 0];
    for blk in eta.blocks.iter().flatten() {
        let gd = spec.post_density(&blk.g, data.a_levels())?;
        ratio.push([gd[0] / blk.g[0], gd[1] / blk.g[1]]);
    }
    let nw = eta.blocks.first().map_or(0, Vec::len);
    let mut xj = vec![0.0; n];
    let mut yu = vec![0.0; n];
    let mut ou = vec![0.0; n];
    for (i, o) in data.rows().iter().enumerate() {
        let f = folds.fold_of(i);
        let blk = eta.block(f, o.w);
        xj[i] = ratio[f * nw + o.w][o.a];
        yu[i] = blk.u(o.z, o.a).clamp(0.0, 1.0);
        ou[i] = bounded_logit(blk.ubar[o.a]);
    }
    let cols: Vec<&[f64]> = if both { vec![&xj] } else { vec![] };
    let eu = fit_tilt("ubar", &cols, &yu, &ou, true)?;
    for (k, blk) in eta.blocks.iter_mut().flatten().enumerate() {
        for a in 0..2 {
            let shift = eu[0] + if both { eu[1] * ratio[k][a] } else { 0.0 };
            blk.ubar[a] = tilt(blk.ubar[a], shift);
        }
    }
    Ok(())
}

/// Targeted minimum loss estimator for binary treatment and binary `L`.
///
/// Returns the estimate together with the targeted nuisances.
pub fn tmle_fit(
    data: &Dataset,
    eta: &NuisanceSet,
    folds: &FoldPlan,
    spec: Intervention,
    opts: &TmleOptions,
) -> Result<(EffectEstimate, NuisanceSet)> {
    if matches!(spec, Intervention::DiscreteShift { .. }) {
        return Err(Error::Unsupported(
            "the targeted estimator supports identity, odds_tilt and exp_tilt; use the one-step estimator for discrete shifts".into(),
        ));
    }
    if data.na() != 2 {
        return Err(Error::Unsupported(format!("the targeted estimator needs a binary treatment, got {} levels", data.na())));
    }
    spec.validate(data.a_levels())?;
    if eta.folds() != folds.k() || folds.n() != data.n() {
        return Err(Error::Input("nuisance folds do not match the fold plan".into()));
    }
    let both = !null_like(eta, data.a_levels(), spec)?;
    let mut eta = eta.clone();
    let mut iterations = 0;
    let (rows, scores, converged) = loop {
        let rows = eif_rows(data, &eta, folds, spec, 0.0)?;
        let scores = evaluate(&rows, opts.tol);
        let done = scores.norms[0] <= scores.tol[0] && scores.norms[1] <= scores.tol[1];
        if done || iterations == opts.max_iter {
            break (rows, scores, done);
        }
        target_step(data, &mut eta, folds, spec, opts, both)?;
        iterations += 1;
    };
    debug!("tmle {spec}: {iterations} iterations, scores {:?}", scores.norms);
    let eif = columns(&rows, false)?;
    let [t10, t1d, t2d] = scores.theta;
    let diag = TmleDiagnostics { iterations, converged, score_norms: scores.norms, tolerance: scores.tol, theta: scores.theta };
    let est = assemble(Estimator::Tmle, spec, data, (t10 - t2d, t2d - t1d), eif, opts.alpha, eta.clamps, Some(diag))?;
    Ok((est, eta))
}

pub fn tmle(data: &Dataset, eta: &NuisanceSet, folds: &FoldPlan, spec: Intervention, opts: &TmleOptions) -> Result<EffectEstimate> {
    tmle_fit(data, eta, folds, spec, opts).map(|(e, _)| e)
}

/// Runs the requested estimators on one intervention.
pub fn estimate_all(
    data: &Dataset,
    eta: &NuisanceSet,
    folds: &FoldPlan,
    spec: Intervention,
    which: &[Estimator],
    stabilize: bool,
    opts: &TmleOptions,
) -> Result<Vec<EffectEstimate>> {
    which
        .iter()
        .map(|e| match e {
            Estimator::OneStep => onestep(data, eta, folds, spec, stabilize, opts.alpha),
            Estimator::Tmle => tmle(data, eta, folds, spec, opts),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::oracle::{oracle_effects, true_nuisances};
    use crate::law::{build_sim_dgp, build_shift_dgp};
    use crate::learn::{fit_nuisances, make_folds, LearnerConfig};

    fn sim_sample(n: usize, seed: u64) -> Dataset {
        build_sim_dgp(Clamp::default()).sample(n, seed)
    }

    fn fitted(data: &Dataset, seed: u64) -> (NuisanceSet, FoldPlan) {
        let folds = make_folds(data.n(), 5, seed).unwrap();
        let eta = fit_nuisances(data, &folds, &LearnerConfig::default()).unwrap();
        (eta, folds)
    }

    #[test]
    fn wald_examples() {
        let (lo, hi) = wald_ci(0.0, 1.0, 0.05).unwrap();
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-9 && (lo + hi).abs() < 1e-15);
        assert_eq!(wald_ci(0.5, 0.0, 0.2).unwrap(), (0.5, 0.5));
        // z_0.84 from a printed normal table: 0.9945
        let (_, hi) = wald_ci(0.0, 1.0, 0.32).unwrap();
        assert!((hi - 0.9945).abs() < 1e-4);
        assert!(wald_ci(0.0, -1.0, 0.05).is_err());
        assert!(wald_ci(0.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn identity_onestep_effects_cancel() {
        let data = sim_sample(600, 3);
        let (eta, folds) = fitted(&data, 3);
        let est = onestep(&data, &eta, &folds, Intervention::Identity, false, 0.05).unwrap();
        assert!((est.psi_d + est.psi_i).abs() <= 1e-12);
    }

    #[test]
    fn onestep_decomposition() {
        let data = sim_sample(800, 5);
        let (eta, folds) = fitted(&data, 5);
        for stabilize in [false, true] {
            let est = onestep(&data, &eta, &folds, Intervention::OddsTilt { delta: 2.0 }, stabilize, 0.05).unwrap();
            let total = mean(&est.eif.d1_null) - mean(&est.eif.d1_delta);
            assert!((est.psi_d + est.psi_i - total).abs() <= 1e-12);
            assert!(((est.ci_d.0 + est.ci_d.1) / 2.0 - est.psi_d).abs() < 1e-15);
        }
    }

    #[test]
    fn submodel_scores_sum_to_influence_means() {
        let data = sim_sample(1500, 8);
        let (eta, folds) = fitted(&data, 8);
        for spec in [Intervention::OddsTilt { delta: 2.0 }, Intervention::ExpTilt { delta: -1.0 }] {
            let s = submodel_scores(&data, &eta, &folds, spec).unwrap();
            let rows = eif_rows(&data, &eta, &folds, spec, 0.0).unwrap();
            let n = rows.len() as f64;
            let np_d = rows.iter().map(|r| non_plug(&r.t1_null) - non_plug(&r.t2_delta)).sum::<f64>() / n;
            let np_i = rows.iter().map(|r| non_plug(&r.t2_delta) - non_plug(&r.t1_delta)).sum::<f64>() / n;
            let sum = |e: usize| s.iter().map(|r| r[e]).sum::<f64>();
            assert!((sum(0) - np_d).abs() < 1e-8, "{} vs {np_d}", sum(0));
            assert!((sum(1) - np_i).abs() < 1e-8, "{} vs {np_i}", sum(1));
        }
    }

    #[test]
    fn tmle_solves_scores_and_is_a_fixed_point() {
        let data = sim_sample(1000, 11);
        let (eta, folds) = fitted(&data, 11);
        let spec = Intervention::OddsTilt { delta: 2.0 };
        let opts = TmleOptions::default();
        let (est, tilted) = tmle_fit(&data, &eta, &folds, spec, &opts).unwrap();
        let d = est.diagnostics.tmle.clone().unwrap();
        assert!(d.converged);
        assert!((mean(&est.eif.direct()) - est.psi_d).abs() <= d.tolerance[0]);
        assert!((mean(&est.eif.indirect()) - est.psi_i).abs() <= d.tolerance[1]);
        for t in d.theta {
            assert!((0.0..=1.0).contains(&t));
        }
        let (again, _) = tmle_fit(&data, &tilted, &folds, spec, &opts).unwrap();
        assert_eq!(again.diagnostics.tmle.unwrap().iterations, 0);
        assert_eq!((again.psi_d, again.psi_i), (est.psi_d, est.psi_i));
    }

    #[test]
    fn tmle_identity_cancels() {
        let data = sim_sample(800, 2);
        let (eta, folds) = fitted(&data, 2);
        let est = tmle(&data, &eta, &folds, Intervention::Identity, &TmleOptions::default()).unwrap();
        assert!((est.psi_d + est.psi_i).abs() < 1e-12);
    }

    #[test]
    fn tmle_refuses_shift() {
        let law = build_shift_dgp(Clamp::default());
        let data = law.sample(200, 1);
        let folds = FoldPlan::single(data.n());
        let eta = true_nuisances(&law).for_strata(&data.law_strata(law.space()).unwrap(), 1);
        let err = tmle(&data, &eta, &folds, Intervention::DiscreteShift { delta: 1 }, &TmleOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn true_nuisances_match_oracle_in_large_samples() {
        let law = build_sim_dgp(Clamp::default());
        let spec = Intervention::OddsTilt { delta: 2.0 };
        let truth = oracle_effects(&law, spec).unwrap();
        let data = sim_sample(20_000, 21);
        let folds = FoldPlan::single(data.n());
        let eta = true_nuisances(&law).for_strata(&data.law_strata(law.space()).unwrap(), 1);
        let est = onestep(&data, &eta, &folds, spec, false, 0.05).unwrap();
        assert!((est.psi_d - truth.psi_d).abs() <= 4.0 * est.se_d);
        assert!((est.psi_i - truth.psi_i).abs() <= 4.0 * est.se_i);
    }
}
