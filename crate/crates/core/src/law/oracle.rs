//! Ground truth by exhaustive enumeration over a [`DiscreteLaw`].

use serde::Serialize;

use super::{pairwise_sum, DiscreteLaw};
use crate::eif::{Component, Evaluator, Terms};
use crate::error::{Error, Result};
use crate::intervene::{Intervention, SUPPORT_EPS};
use crate::learn::{ClampCounts, Nuisance, NuisanceSet, WBlock};

/// Marginal distribution of the covariate strata.
pub fn w_marginal(law: &DiscreteLaw) -> Vec<f64> {
    let mut pw = vec![0.0; law.space().n_w()];
    for (s, p) in law.support() {
        pw[s.w] += p;
    }
    pw
}

fn normalize_or_uniform(x: &mut [f64], degenerate: &mut usize) {
    let t: f64 = x.iter().sum();
    if t > 0.0 {
        x.iter_mut().for_each(|v| *v /= t);
    } else {
        *degenerate += 1;
        let k = x.len() as f64;
        x.iter_mut().for_each(|v| *v = 1.0 / k);
    }
}

/// All nuisances computed exactly from the pmf as a single-fold set indexed
/// by the law's covariate strata. Conditionals on zero-mass events are set
/// uniform and counted in `clamps.degenerate`.
pub fn true_nuisances(law: &DiscreteLaw) -> NuisanceSet {
    let space = law.space();
    let (na, nz) = (space.na(), space.nz());
    let mut degenerate = 0;
    let mut blocks = Vec::with_capacity(space.n_w());
    for w in 0..space.n_w() {
        let mut blk = WBlock::zeros(na, nz);
        // joint p(a, l, z, y | w) up to the factor p(w)
        let p = |a, l, z, y| law.p(w, a, l, z, y);
        let pazl = |a, z, l| p(a, l, z, 0) + p(a, l, z, 1);
        for a in 0..na {
            blk.g[a] = (0..nz).map(|z| pazl(a, z, 0) + pazl(a, z, 1)).sum();
        }
        normalize_or_uniform(&mut blk.g, &mut degenerate);
        for a in 0..na {
            let mut b = [(0..nz).map(|z| pazl(a, z, 0)).sum::<f64>(), (0..nz).map(|z| pazl(a, z, 1)).sum()];
            normalize_or_uniform(&mut b, &mut degenerate);
            blk.b[a * 2..a * 2 + 2].copy_from_slice(&b);
            let mut r: Vec<f64> = (0..nz).map(|z| pazl(a, z, 0) + pazl(a, z, 1)).collect();
            normalize_or_uniform(&mut r, &mut degenerate);
            blk.r[a * nz..(a + 1) * nz].copy_from_slice(&r);
            for z in 0..nz {
                let mut d = [pazl(a, z, 0), pazl(a, z, 1)];
                normalize_or_uniform(&mut d, &mut degenerate);
                let i = blk.azl(a, z, 0);
                blk.d[i..i + 2].copy_from_slice(&d);
                for l in 0..2 {
                    let mut y = [p(a, l, z, 0), p(a, l, z, 1)];
                    normalize_or_uniform(&mut y, &mut degenerate);
                    let i = blk.azl(a, z, l);
                    blk.m[i] = y[1];
                }
            }
        }
        for z in 0..nz {
            let mut e: Vec<f64> = (0..na).map(|a| pazl(a, z, 0) + pazl(a, z, 1)).collect();
            normalize_or_uniform(&mut e, &mut degenerate);
            for a in 0..na {
                blk.e[a * nz + z] = e[a];
            }
        }
        for z in 0..nz {
            blk.h[z] = (0..na).map(|a| blk.g[a] * blk.r(z, a)).sum();
        }
        blk.derive_exact();
        blocks.push(blk);
    }
    NuisanceSet { blocks: vec![blocks], clamps: ClampCounts { degenerate, ..Default::default() } }
}

fn check_support(law: &DiscreteLaw, pw: &[f64], eta: &NuisanceSet, spec: Intervention) -> Result<Vec<Vec<f64>>> {
    let space = law.space();
    let mut gds = Vec::with_capacity(pw.len());
    for (w, &p) in pw.iter().enumerate() {
        let g = &eta.block(0, w).g;
        let wname = || format!("{:?}", space.w_values(w));
        let gd = spec.post_density(g, &space.a_levels).map_err(|e| match e {
            Error::Positivity { a, detail, .. } => Error::Positivity { a, w: wname(), detail },
            other => other,
        })?;
        if p > 0.0 {
            for a in 0..space.na() {
                if gd[a] > SUPPORT_EPS && g[a] <= SUPPORT_EPS {
                    return Err(Error::Positivity {
                        a: space.a_levels[a].to_string(),
                        w: wname(),
                        detail: "intervention puts mass where the treatment mechanism has none".into(),
                    });
                }
            }
        }
        gds.push(gd);
    }
    Ok(gds)
}

/// `θ_{j,δ}` as an exact finite sum.
pub fn oracle_theta(law: &DiscreteLaw, spec: Intervention, j: Component) -> Result<f64> {
    let eta = true_nuisances(law);
    theta_with(law, &eta, spec, j)
}

fn theta_with(law: &DiscreteLaw, eta: &NuisanceSet, spec: Intervention, j: Component) -> Result<f64> {
    let pw = w_marginal(law);
    let gds = check_support(law, &pw, eta, spec)?;
    let terms: Vec<f64> = pw
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(w, &p)| {
            let blk = eta.block(0, w);
            let inner: f64 = match j {
                Component::One => (0..blk.na).map(|a| blk.ubar[a] * gds[w][a]).sum(),
                Component::Two => (0..blk.na).map(|a| blk.q[a] * gds[w][a]).sum(),
            };
            p * inner
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Identification functionals and effects for one intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Effects {
    pub theta1_null: f64,
    pub theta1_delta: f64,
    pub theta2_delta: f64,
    pub psi_d: f64,
    pub psi_i: f64,
}

pub fn oracle_effects(law: &DiscreteLaw, spec: Intervention) -> Result<Effects> {
    let eta = true_nuisances(law);
    let theta1_null = theta_with(law, &eta, spec.null(), Component::One)?;
    let theta1_delta = theta_with(law, &eta, spec, Component::One)?;
    let theta2_delta = theta_with(law, &eta, spec, Component::Two)?;
    Ok(Effects {
        theta1_null,
        theta1_delta,
        theta2_delta,
        psi_d: theta1_null - theta2_delta,
        psi_i: theta2_delta - theta1_delta,
    })
}

/// Evaluates `f` on the influence-function terms at every supported state
/// and returns the exact expectation.
fn expect_terms<F>(law: &DiscreteLaw, eta: &NuisanceSet, spec: Intervention, mut f: F) -> Result<f64>
where
    F: FnMut(&Evaluator<'_>, &Evaluator<'_>, usize, usize, usize, f64) -> Result<f64>,
{
    let space = law.space();
    check_support(law, &w_marginal(law), eta, spec)?;
    let mut evals = Vec::with_capacity(space.n_w());
    for w in 0..space.n_w() {
        let blk = eta.block(0, w);
        evals.push((
            Evaluator::new(blk, &space.a_levels, spec.null(), 0.0),
            Evaluator::new(blk, &space.a_levels, spec, 0.0),
        ));
    }
    let mut vals = Vec::new();
    for (s, p) in law.support() {
        let (ev0, ev) = match &evals[s.w] {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Err(Error::Numerical(e.to_string())),
        };
        vals.push(p * f(ev0, ev, s.a, s.l, s.z, s.y as f64)?);
    }
    Ok(pairwise_sum(&vals))
}

/// Exact `P D^j_{η₁,δ}` under the law, with `eta1` a single-fold set
/// indexed by the law's covariate strata.
pub fn oracle_eif_mean(law: &DiscreteLaw, spec: Intervention, j: Component, eta1: &NuisanceSet) -> Result<f64> {
    expect_terms(law, eta1, spec, |_, ev, a, l, z, y| Ok(ev.terms(j, a, l, z, y)?.d()))
}

/// Exact mean of an arbitrary functional of the terms (at the true nuisances).
pub fn oracle_term_mean<F>(law: &DiscreteLaw, spec: Intervention, j: Component, f: F) -> Result<f64>
where
    F: Fn(&Terms) -> f64,
{
    let eta = true_nuisances(law);
    expect_terms(law, &eta, spec, |_, ev, a, l, z, y| Ok(f(&ev.terms(j, a, l, z, y)?)))
}

/// Efficiency bounds `(σ²_D, σ²_I)`: exact variances of `D¹₀ − D²_δ` and
/// `D²_δ − D¹_δ` at the true nuisances.
pub fn oracle_efficiency_bounds(law: &DiscreteLaw, spec: Intervention) -> Result<(f64, f64)> {
    let eta = true_nuisances(law);
    let eff = oracle_effects(law, spec)?;
    let var_d = expect_terms(law, &eta, spec, |ev0, ev, a, l, z, y| {
        let x = ev0.terms(Component::One, a, l, z, y)?.d() - ev.terms(Component::Two, a, l, z, y)?.d() - eff.psi_d;
        Ok(x * x)
    })?;
    let var_i = expect_terms(law, &eta, spec, |_, ev, a, l, z, y| {
        let x = ev.terms(Component::Two, a, l, z, y)?.d() - ev.terms(Component::One, a, l, z, y)?.d() - eff.psi_i;
        Ok(x * x)
    })?;
    Ok((var_d, var_i))
}

/// Exact variance of the total-effect influence function `D¹₀ − D¹_δ`.
pub fn oracle_total_variance(law: &DiscreteLaw, spec: Intervention) -> Result<f64> {
    let eta = true_nuisances(law);
    let eff = oracle_effects(law, spec)?;
    let total = eff.psi_d + eff.psi_i;
    expect_terms(law, &eta, spec, |ev0, ev, a, l, z, y| {
        let x = ev0.terms(Component::One, a, l, z, y)?.d() - ev.terms(Component::One, a, l, z, y)?.d() - total;
        Ok(x * x)
    })
}

/// Replaces the listed nuisances by their marginal (intercept-only)
/// projections under the law. `u`, `v̄`, `s̄` follow from the perturbed
/// `m` and `b` because they are computed on the fly.
pub fn project(law: &DiscreteLaw, eta: &NuisanceSet, which: &[Nuisance]) -> NuisanceSet {
    let space = law.space();
    let (na, nz) = (space.na(), space.nz());
    let mut pa = vec![0.0; na];
    let mut pl = [0.0; 2];
    let mut ey = 0.0;
    for (s, p) in law.support() {
        pa[s.a] += p;
        pl[s.l] += p;
        ey += p * s.y as f64;
    }
    let mean_over = |f: &dyn Fn(&WBlock, usize, usize) -> f64| -> f64 {
        law.expect(|s| f(eta.block(0, s.w), s.a, s.l))
    };
    let e_ubar = mean_over(&|b, a, _| b.ubar[a]);
    let e_v = mean_over(&|b, a, l| b.v(l, a));
    let e_s = mean_over(&|b, a, l| b.s(l, a));
    let e_q = mean_over(&|b, a, _| b.q[a]);

    let mut out = eta.clone();
    for blk in out.blocks.iter_mut().flatten() {
        for &n in which {
            match n {
                Nuisance::M => blk.m.iter_mut().for_each(|m| *m = ey),
                Nuisance::G => blk.g.copy_from_slice(&pa),
                Nuisance::E => {
                    for a in 0..na {
                        for z in 0..nz {
                            blk.e[a * nz + z] = pa[a];
                        }
                    }
                }
                Nuisance::B => {
                    for a in 0..na {
                        blk.b[a * 2..a * 2 + 2].copy_from_slice(&pl);
                    }
                }
                Nuisance::D => {
                    for c in blk.d.chunks_mut(2) {
                        c.copy_from_slice(&pl);
                    }
                }
                Nuisance::Ubar => blk.ubar.iter_mut().for_each(|x| *x = e_ubar),
                Nuisance::V => blk.v.iter_mut().for_each(|x| *x = e_v),
                Nuisance::S => blk.s.iter_mut().for_each(|x| *x = e_s),
                Nuisance::Q => blk.q.iter_mut().for_each(|x| *x = e_q),
            }
        }
    }
    out
}

/// One row of the consistency-configuration table: the nuisances that must
/// be correct; every other one is misspecified.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Configuration {
    pub index: usize,
    pub consistent: Vec<Nuisance>,
}

impl Configuration {
    pub fn perturbed(&self) -> Vec<Nuisance> {
        Nuisance::ALL.iter().copied().filter(|n| !self.consistent.contains(n)).collect()
    }
}

/// The six configurations; rows 1–4 also apply to tilted interventions.
pub fn configurations() -> Vec<Configuration> {
    use Nuisance::*;
    let rows: [&[Nuisance]; 6] = [
        &[M, G, B],
        &[M, G, V, S],
        &[G, B, D, E],
        &[G, Ubar, V, D, E],
        &[M, B, Ubar, Q],
        &[M, Ubar, V, S, Q],
    ];
    rows.iter()
        .enumerate()
        .map(|(i, r)| Configuration { index: i + 1, consistent: r.to_vec() })
        .collect()
}

/// Rows of [`configurations`] covered for an intervention family.
pub fn configurations_for(spec: Intervention) -> Vec<Configuration> {
    let all = configurations();
    match spec {
        Intervention::DiscreteShift { .. } => all,
        _ => all.into_iter().take(4).collect(),
    }
}

/// Outcome of perturbing one configuration's unchecked nuisances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCheck {
    pub configuration: usize,
    pub spec: Intervention,
    pub perturbed: Vec<Nuisance>,
    pub theta1: f64,
    pub theta2: f64,
    /// `P D¹_{η₁} − θ₁`
    pub bias1: f64,
    /// `P D²_{η₁} − θ₂`
    pub bias2: f64,
}

impl RobustnessCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.bias1.abs() <= tol && self.bias2.abs() <= tol
    }
}

pub fn robustness_check(law: &DiscreteLaw, spec: Intervention, config: &Configuration) -> Result<RobustnessCheck> {
    let eta = true_nuisances(law);
    let perturbed = config.perturbed();
    let eta1 = project(law, &eta, &perturbed);
    let theta1 = theta_with(law, &eta, spec, Component::One)?;
    let theta2 = theta_with(law, &eta, spec, Component::Two)?;
    Ok(RobustnessCheck {
        configuration: config.index,
        spec,
        perturbed,
        theta1,
        theta2,
        bias1: oracle_eif_mean(law, spec, Component::One, &eta1)? - theta1,
        bias2: oracle_eif_mean(law, spec, Component::Two, &eta1)? - theta2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{build_shift_dgp, build_sim_dgp, law_from_factors, Clamp, Covariate, StateSpace};

    fn specs() -> Vec<Intervention> {
        vec![
            Intervention::Identity,
            Intervention::OddsTilt { delta: 0.5 },
            Intervention::OddsTilt { delta: 2.0 },
            Intervention::ExpTilt { delta: 1.0 },
            Intervention::ExpTilt { delta: -1.0 },
        ]
    }

    /// A law where the mediator ignores treatment and confounder given `W`.
    fn mediator_free_law() -> DiscreteLaw {
        let space = StateSpace::new(
            vec![Covariate { name: "W".into(), levels: vec![0.0, 1.0] }],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        law_from_factors(
            space,
            |w| if w[0] == 1.0 { 0.4 } else { 0.6 },
            |w, a| {
                let p = 0.3 + 0.4 * w[0];
                if a == 1.0 { p } else { 1.0 - p }
            },
            |w, a, l| {
                let p = 0.2 + 0.3 * a + 0.2 * w[0];
                if l == 1.0 { p } else { 1.0 - p }
            },
            |w, _, _, z| {
                let p = 0.35 + 0.3 * w[0];
                if z == 1.0 { p } else { 1.0 - p }
            },
            |w, a, l, z, y| {
                let p = 0.1 + 0.2 * a + 0.3 * l + 0.25 * z + 0.1 * w[0];
                if y == 1.0 { p } else { 1.0 - p }
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_theta_is_mean_outcome_without_confounder_to_mediator_path() {
        let law = mediator_free_law();
        let ey = law.expect(|s| s.y as f64);
        let th = oracle_theta(&law, Intervention::Identity, Component::One).unwrap();
        assert!((th - ey).abs() < 1e-14);
        // with L -> Z the mediator draw ignores L, so the two differ
        let law = build_sim_dgp(Clamp::default());
        let ey = law.expect(|s| s.y as f64);
        let th = oracle_theta(&law, Intervention::Identity, Component::One).unwrap();
        assert!((th - ey).abs() > 1e-3);
    }

    #[test]
    fn mediator_independence_collapses_functionals() {
        let law = mediator_free_law();
        for spec in specs() {
            let e = oracle_effects(&law, spec).unwrap();
            assert!((e.theta1_delta - e.theta2_delta).abs() < 1e-14);
            assert!(e.psi_i.abs() < 1e-14);
        }
    }

    #[test]
    fn decomposition_is_exact() {
        let law = build_sim_dgp(Clamp::default());
        for spec in specs() {
            let e = oracle_effects(&law, spec).unwrap();
            assert!((e.psi_d + e.psi_i - (e.theta1_null - e.theta1_delta)).abs() < 1e-12);
        }
        let e = oracle_effects(&law, Intervention::Identity).unwrap();
        assert!((e.psi_d + e.psi_i).abs() < 1e-15);
    }

    #[test]
    fn eif_mean_is_theta_at_truth() {
        let law = build_sim_dgp(Clamp::default());
        let eta = true_nuisances(&law);
        for spec in specs() {
            for j in [Component::One, Component::Two] {
                let mean = oracle_eif_mean(&law, spec, j, &eta).unwrap();
                let theta = oracle_theta(&law, spec, j).unwrap();
                assert!((mean - theta).abs() < 1e-10, "{spec} {j:?}: {mean} vs {theta}");
                let score = oracle_term_mean(&law, spec, j, |t| t.score).unwrap();
                assert!(score.abs() < 1e-10);
            }
        }
        let shift = build_shift_dgp(Clamp::default());
        let eta = true_nuisances(&shift);
        for spec in [Intervention::DiscreteShift { delta: 1 }, Intervention::DiscreteShift { delta: 2 }, Intervention::ExpTilt { delta: 0.5 }] {
            for j in [Component::One, Component::Two] {
                let mean = oracle_eif_mean(&shift, spec, j, &eta).unwrap();
                let theta = oracle_theta(&shift, spec, j).unwrap();
                assert!((mean - theta).abs() < 1e-10, "{spec} {j:?}");
            }
        }
    }

    #[test]
    fn true_nuisance_identities() {
        let law = build_sim_dgp(Clamp::default());
        let eta = true_nuisances(&law);
        for blk in &eta.blocks[0] {
            for a in 0..2 {
                let double: f64 = (0..2)
                    .flat_map(|z| (0..2).map(move |l| (z, l)))
                    .map(|(z, l)| blk.m(z, l, a) * blk.b(l, a) * blk.r(z, a))
                    .sum();
                assert!((blk.ubar[a] - double).abs() < 1e-15);
            }
        }
        // d equals b when the mediator ignores the confounder
        let law = mediator_free_law();
        let eta = true_nuisances(&law);
        for blk in &eta.blocks[0] {
            for a in 0..2 {
                for z in 0..2 {
                    for l in 0..2 {
                        assert!((blk.d(l, z, a) - blk.b(l, a)).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn total_variance_telescopes() {
        let law = build_sim_dgp(Clamp::default());
        let spec = Intervention::OddsTilt { delta: 2.0 };
        let (vd, vi) = oracle_efficiency_bounds(&law, spec).unwrap();
        assert!(vd > 0.0 && vi > 0.0);
        let vt = oracle_total_variance(&law, spec).unwrap();
        let eta = true_nuisances(&law);
        let eff = oracle_effects(&law, spec).unwrap();
        let cov = expect_terms(&law, &eta, spec, |ev0, ev, a, l, z, y| {
            let d = ev0.terms(Component::One, a, l, z, y)?.d() - ev.terms(Component::Two, a, l, z, y)?.d() - eff.psi_d;
            let i = ev.terms(Component::Two, a, l, z, y)?.d() - ev.terms(Component::One, a, l, z, y)?.d() - eff.psi_i;
            Ok(d * i)
        })
        .unwrap();
        assert!((vt - (vd + vi + 2.0 * cov)).abs() < 1e-10);
    }

    #[test]
    fn constant_outcome_has_no_residual_variance() {
        let space = StateSpace::new(
            vec![Covariate { name: "W".into(), levels: vec![0.0, 1.0] }],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        let law = law_from_factors(
            space,
            |_| 0.5,
            |_, _| 0.5,
            |_, _, _| 0.5,
            |_, a, _, z| if z == 1.0 { 0.3 + 0.4 * a } else { 0.7 - 0.4 * a },
            |_, _, _, _, y| y,
        )
        .unwrap();
        let spec = Intervention::OddsTilt { delta: 2.0 };
        let (vd, vi) = oracle_efficiency_bounds(&law, spec).unwrap();
        let e = oracle_effects(&law, spec).unwrap();
        assert!(e.psi_d.abs() < 1e-15 && e.psi_i.abs() < 1e-15);
        assert!(vd.abs() < 1e-20 && vi.abs() < 1e-20);
        let res = oracle_term_mean(&law, spec, Component::Two, |t| t.residual.abs()).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn shift_into_unsupported_level_names_stratum() {
        let space = StateSpace::new(
            vec![Covariate { name: "W".into(), levels: vec![0.0, 1.0] }],
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        let law = law_from_factors(
            space,
            |_| 0.5,
            |w, a| match (w[0] as i32, a as i32) {
                (1, 1) => 0.0,
                (1, _) => 0.5,
                _ => 1.0 / 3.0,
            },
            |_, _, _| 0.5,
            |_, _, _, _| 0.5,
            |_, _, _, _, _| 0.5,
        )
        .unwrap();
        let err = oracle_theta(&law, Intervention::DiscreteShift { delta: 1 }, Component::One).unwrap_err();
        match err {
            Error::Positivity { w, .. } => assert_eq!(w, "[1.0]"),
            other => panic!("{other}"),
        }
    }
}
