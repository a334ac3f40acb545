use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learner::{Categorical, Example, LearnerKind, Mean, DEFAULT_ALPHA};
use super::nuisance::{ClampCounts, Nuisance, NuisanceSet, WBlock};
use super::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::law::Clamp;

/// How the derived nuisances `ū, v, s, q` are obtained from the primary fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondaryPath {
    /// Finite sums against the fitted mediator and confounder densities.
    #[default]
    ExactSum,
    /// Regressions of ratio-weighted pseudo-outcomes on the conditioning set.
    Regression,
}

/// Learner choice per nuisance, as read from JSON such as
/// `{"m": "saturated", "g": "intercept_only"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub m: LearnerKind,
    pub g: LearnerKind,
    pub e: LearnerKind,
    pub b: LearnerKind,
    pub d: LearnerKind,
    pub r: LearnerKind,
    pub h: LearnerKind,
    /// Learner for the regression path.
    pub secondary: LearnerKind,
    pub path: SecondaryPath,
    /// Derive saturated `e, d, r, h` from one joint fit by Bayes' rule.
    pub coherent: bool,
    pub clamp: Clamp,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let sat = LearnerKind::default();
        LearnerConfig {
            m: sat,
            g: sat,
            e: sat,
            b: sat,
            d: sat,
            r: sat,
            h: sat,
            secondary: sat,
            path: SecondaryPath::ExactSum,
            coherent: true,
            clamp: Clamp::default(),
        }
    }
}

impl LearnerConfig {
    pub fn all(kind: LearnerKind) -> Self {
        LearnerConfig { m: kind, g: kind, e: kind, b: kind, d: kind, r: kind, h: kind, secondary: kind, ..Default::default() }
    }

    /// The same configuration with one primary nuisance fitted intercept-only.
    pub fn misspecify(&self, which: Nuisance) -> Result<Self> {
        let mut out = self.clone();
        let slot = match which {
            Nuisance::M => &mut out.m,
            Nuisance::G => &mut out.g,
            Nuisance::E => &mut out.e,
            Nuisance::B => &mut out.b,
            Nuisance::D => &mut out.d,
            other => {
                return Err(Error::Input(format!("`{}` is not a primary nuisance", other.name())));
            }
        };
        *slot = LearnerKind::InterceptOnly;
        Ok(out)
    }

    fn coherent_for(&self, kind: LearnerKind) -> bool {
        self.coherent && matches!(kind, LearnerKind::Saturated { .. })
    }
}

fn alpha_of(kind: LearnerKind) -> f64 {
    match kind {
        LearnerKind::Saturated { alpha } => alpha,
        _ => DEFAULT_ALPHA,
    }
}

fn clamp_pmf(p: &mut [f64], clamp: &Clamp, events: &mut usize) {
    let mut moved = false;
    for v in p.iter_mut() {
        let c = clamp.apply(*v);
        if c != *v {
            *events += 1;
            moved = true;
            *v = c;
        }
    }
    if moved && p.len() > 2 {
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
    } else if moved {
        // keep binary pairs exactly complementary
        p[0] = 1.0 - p[1];
        if clamp.apply(p[0]) != p[0] {
            p[0] = clamp.apply(p[0]);
            p[1] = 1.0 - p[0];
        }
    }
}

struct Features<'a> {
    data: &'a Dataset,
    w_values: Vec<Vec<f64>>,
}

impl<'a> Features<'a> {
    fn new(data: &'a Dataset) -> Self {
        Features { data, w_values: (0..data.n_strata()).map(|s| data.w_values(s)).collect() }
    }

    /// Numeric features `(w..., [z], [l], [a])` in a fixed order.
    fn x(&self, w: usize, a: Option<usize>, l: Option<usize>, z: Option<usize>) -> Vec<f64> {
        let mut x = self.w_values[w].clone();
        if let Some(a) = a {
            x.push(self.data.a_levels()[a]);
        }
        if let Some(l) = l {
            x.push(l as f64);
        }
        if let Some(z) = z {
            x.push(self.data.z_levels()[z]);
        }
        x
    }
}

fn one_hot(k: usize, c: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[c] = 1.0;
    v
}

/// Fits the primary nuisances on each fold's training rows and returns a set
/// whose derived tables are not yet filled.
pub fn fit_primary(data: &Dataset, folds: &FoldPlan, config: &LearnerConfig) -> Result<NuisanceSet> {
    if folds.n() != data.n() {
        return Err(Error::Input("fold plan and dataset sizes differ".into()));
    }
    let per_fold: Vec<(Vec<WBlock>, usize)> = (0..folds.k())
        .into_par_iter()
        .map(|j| fit_fold(data, &folds.training(j), config))
        .collect::<Result<_>>()?;
    let mut clamps = ClampCounts::default();
    let mut blocks = Vec::with_capacity(per_fold.len());
    for (b, c) in per_fold {
        clamps.probabilities += c;
        blocks.push(b);
    }
    Ok(NuisanceSet { blocks, clamps })
}

fn fit_fold(data: &Dataset, train: &[usize], cfg: &LearnerConfig) -> Result<(Vec<WBlock>, usize)> {
    let (na, nz) = (data.na(), data.nz());
    let f = Features::new(data);
    let rows: Vec<_> = train.iter().map(|&i| data.rows()[i]).collect();
    let build = |key: &dyn Fn(&super::Obs) -> Vec<usize>, x: &dyn Fn(&super::Obs) -> Vec<f64>, resp: &dyn Fn(&super::Obs) -> Vec<f64>| {
        rows.iter().map(|o| Example { key: key(o), x: x(o), resp: resp(o) }).collect::<Vec<_>>()
    };
    let ex_m = build(&|o| vec![o.w, o.a, o.l, o.z], &|o| f.x(o.w, Some(o.a), Some(o.l), Some(o.z)), &|o| vec![1.0 - o.y, o.y]);
    let ex_g = build(&|o| vec![o.w], &|o| f.x(o.w, None, None, None), &|o| one_hot(na, o.a));
    let ex_e = build(&|o| vec![o.w, o.z], &|o| f.x(o.w, None, None, Some(o.z)), &|o| one_hot(na, o.a));
    let ex_b = build(&|o| vec![o.w, o.a], &|o| f.x(o.w, Some(o.a), None, None), &|o| one_hot(2, o.l));
    let ex_d = build(&|o| vec![o.w, o.a, o.z], &|o| f.x(o.w, Some(o.a), None, Some(o.z)), &|o| one_hot(2, o.l));
    let ex_r = build(&|o| vec![o.w, o.a], &|o| f.x(o.w, Some(o.a), None, None), &|o| one_hot(nz, o.z));
    let ex_h = build(&|o| vec![o.w], &|o| f.x(o.w, None, None, None), &|o| one_hot(nz, o.z));
    let ex_rl = build(&|o| vec![o.w, o.a, o.l], &|o| f.x(o.w, Some(o.a), Some(o.l), None), &|o| one_hot(nz, o.z));

    let fm = Categorical::fit(cfg.m, 2, &ex_m)?;
    let fg = Categorical::fit(cfg.g, na, &ex_g)?;
    let fb = Categorical::fit(cfg.b, 2, &ex_b)?;
    let direct = |kind: LearnerKind, k: usize, ex: &[Example]| -> Result<Option<Categorical>> {
        if cfg.coherent_for(kind) {
            Ok(None)
        } else {
            Categorical::fit(kind, k, ex).map(Some)
        }
    };
    let fe = direct(cfg.e, na, &ex_e)?;
    let fd = direct(cfg.d, 2, &ex_d)?;
    let fr = direct(cfg.r, nz, &ex_r)?;
    let fh = direct(cfg.h, nz, &ex_h)?;
    let any_coherent = fe.is_none() || fd.is_none() || fr.is_none() || fh.is_none();
    let joint = if any_coherent {
        Some((
            Categorical::fit(LearnerKind::Saturated { alpha: alpha_of(cfg.g) }, na, &ex_g)?,
            Categorical::fit(LearnerKind::Saturated { alpha: alpha_of(cfg.b) }, 2, &ex_b)?,
            Categorical::fit(LearnerKind::Saturated { alpha: alpha_of(cfg.r) }, nz, &ex_rl)?,
        ))
    } else {
        None
    };

    let clamp = &cfg.clamp;
    let mut events = 0usize;
    let mut blocks = Vec::with_capacity(data.n_strata());
    for w in 0..data.n_strata() {
        let mut blk = WBlock::zeros(na, nz);
        let mut p = fg.predict(&[w], &f.x(w, None, None, None))?;
        clamp_pmf(&mut p, clamp, &mut events);
        blk.g = p;
        for a in 0..na {
            let mut p = fb.predict(&[w, a], &f.x(w, Some(a), None, None))?;
            clamp_pmf(&mut p, clamp, &mut events);
            blk.b[a * 2..a * 2 + 2].copy_from_slice(&p);
            for z in 0..nz {
                for l in 0..2 {
                    let mut p = fm.predict(&[w, a, l, z], &f.x(w, Some(a), Some(l), Some(z)))?;
                    clamp_pmf(&mut p, clamp, &mut events);
                    let i = blk.azl(a, z, l);
                    blk.m[i] = p[1];
                }
            }
        }

        // Bayes-coherent pieces from the joint p(a | w) p(l | a, w) p(z | l, a, w)
        let mut cr = vec![0.0; na * nz];
        let mut cd = vec![0.0; na * nz * 2];
        let mut ch = vec![0.0; nz];
        let mut ce = vec![0.0; na * nz];
        if let Some((jg, jb, jrl)) = &joint {
            let mut gs = jg.predict(&[w], &[])?;
            clamp_pmf(&mut gs, clamp, &mut events);
            for a in 0..na {
                let mut bs = jb.predict(&[w, a], &[])?;
                clamp_pmf(&mut bs, clamp, &mut events);
                let mut rl = Vec::with_capacity(2);
                for l in 0..2 {
                    let mut p = jrl.predict(&[w, a, l], &[])?;
                    clamp_pmf(&mut p, clamp, &mut events);
                    rl.push(p);
                }
                for z in 0..nz {
                    let j0 = bs[0] * rl[0][z];
                    let j1 = bs[1] * rl[1][z];
                    let rz = j0 + j1;
                    cr[a * nz + z] = rz;
                    cd[(a * nz + z) * 2] = j0 / rz;
                    cd[(a * nz + z) * 2 + 1] = j1 / rz;
                    ch[z] += gs[a] * rz;
                }
            }
            for a in 0..na {
                for z in 0..nz {
                    ce[a * nz + z] = gs[a] * cr[a * nz + z] / ch[z];
                }
            }
        }

        match &fh {
            Some(fit) => blk.h = fit.predict(&[w], &f.x(w, None, None, None))?,
            None => blk.h = ch.clone(),
        }
        clamp_pmf(&mut blk.h, clamp, &mut events);
        for a in 0..na {
            let mut r = match &fr {
                Some(fit) => fit.predict(&[w, a], &f.x(w, Some(a), None, None))?,
                None => cr[a * nz..(a + 1) * nz].to_vec(),
            };
            clamp_pmf(&mut r, clamp, &mut events);
            blk.r[a * nz..(a + 1) * nz].copy_from_slice(&r);
            for z in 0..nz {
                let mut d = match &fd {
                    Some(fit) => fit.predict(&[w, a, z], &f.x(w, Some(a), None, Some(z)))?,
                    None => cd[(a * nz + z) * 2..(a * nz + z) * 2 + 2].to_vec(),
                };
                clamp_pmf(&mut d, clamp, &mut events);
                let i = blk.azl(a, z, 0);
                blk.d[i..i + 2].copy_from_slice(&d);
            }
        }
        for z in 0..nz {
            let mut e: Vec<f64> = match &fe {
                Some(fit) => fit.predict(&[w, z], &f.x(w, None, None, Some(z)))?,
                None => (0..na).map(|a| ce[a * nz + z]).collect(),
            };
            clamp_pmf(&mut e, clamp, &mut events);
            for a in 0..na {
                blk.e[a * nz + z] = e[a];
            }
        }
        blocks.push(blk);
    }
    Ok((blocks, events))
}

/// Fills `ū, v, s, q` in every block.
pub fn derive_secondary(
    set: &mut NuisanceSet,
    data: &Dataset,
    folds: &FoldPlan,
    path: SecondaryPath,
    learner: LearnerKind,
) -> Result<()> {
    match path {
        SecondaryPath::ExactSum => {
            set.derive_exact();
            Ok(())
        }
        SecondaryPath::Regression => {
            let f = Features::new(data);
            for j in 0..folds.k() {
                let train = folds.training(j);
                let blocks = &set.blocks[j];
                let mut keys_law = Vec::new();
                let mut x_law = Vec::new();
                let mut keys_aw = Vec::new();
                let mut x_aw = Vec::new();
                let (mut yv, mut ys, mut yu, mut yq) = (vec![], vec![], vec![], vec![]);
                for &i in &train {
                    let o = data.rows()[i];
                    let blk = &blocks[o.w];
                    let bd = blk.b(o.l, o.a) / blk.d(o.l, o.z, o.a);
                    let ge = blk.g[o.a] / blk.e(o.a, o.z);
                    if !bd.is_finite() || !ge.is_finite() {
                        return Err(Error::Numerical(format!("ratio nuisance is not finite in stratum {}", o.w)));
                    }
                    let v = blk.m(o.z, o.l, o.a) * bd;
                    yv.push(v);
                    ys.push(v * ge);
                    let u = blk.u(o.z, o.a);
                    yu.push(u);
                    yq.push(ge * u);
                    keys_law.push(vec![o.w, o.a, o.l]);
                    x_law.push(f.x(o.w, Some(o.a), Some(o.l), None));
                    keys_aw.push(vec![o.w, o.a]);
                    x_aw.push(f.x(o.w, Some(o.a), None, None));
                }
                let fv = Mean::fit(learner, &keys_law, &x_law, &yv)?;
                let fs = Mean::fit(learner, &keys_law, &x_law, &ys)?;
                let fu = Mean::fit(learner, &keys_aw, &x_aw, &yu)?;
                let fq = Mean::fit(learner, &keys_aw, &x_aw, &yq)?;
                for (w, blk) in set.blocks[j].iter_mut().enumerate() {
                    for a in 0..blk.na {
                        let xa = f.x(w, Some(a), None, None);
                        blk.ubar[a] = fu.predict(&[w, a], &xa)?;
                        blk.q[a] = fq.predict(&[w, a], &xa)?;
                        for l in 0..2 {
                            let xl = f.x(w, Some(a), Some(l), None);
                            blk.v[a * 2 + l] = fv.predict(&[w, a, l], &xl)?;
                            blk.s[a * 2 + l] = fs.predict(&[w, a, l], &xl)?;
                        }
                    }
                }
            }
            Ok(())
        }
    }
}

/// Primary fits followed by the configured secondary path.
pub fn fit_nuisances(data: &Dataset, folds: &FoldPlan, config: &LearnerConfig) -> Result<NuisanceSet> {
    let mut set = fit_primary(data, folds, config)?;
    derive_secondary(&mut set, data, folds, config.path, config.secondary)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{build_shift_dgp, build_sim_dgp, oracle::true_nuisances};
    use crate::learn::make_folds;

    #[test]
    fn intercept_only_outcome_is_training_mean() {
        let data = build_sim_dgp(Clamp::default()).sample(300, 11);
        let folds = make_folds(data.n(), 3, 1).unwrap();
        let cfg = LearnerConfig::default().misspecify(Nuisance::M).unwrap();
        let set = fit_nuisances(&data, &folds, &cfg).unwrap();
        for j in 0..3 {
            let tr = folds.training(j);
            let mean = tr.iter().map(|&i| data.rows()[i].y).sum::<f64>() / tr.len() as f64;
            for blk in &set.blocks[j] {
                assert!(blk.m.iter().all(|&m| (m - mean).abs() < 1e-12));
                for a in 0..blk.na {
                    assert!((blk.ubar[a] - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coherent_d_is_normalized() {
        let data = build_sim_dgp(Clamp::default()).sample(500, 2);
        let folds = make_folds(data.n(), 5, 3).unwrap();
        let set = fit_primary(&data, &folds, &LearnerConfig::default()).unwrap();
        for fold in &set.blocks {
            for blk in fold {
                for a in 0..blk.na {
                    for z in 0..blk.nz {
                        assert!((blk.d(0, z, a) + blk.d(1, z, a) - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn probabilities_stay_in_clamp() {
        let data = build_sim_dgp(Clamp::default()).sample(400, 5);
        let folds = make_folds(data.n(), 2, 3).unwrap();
        for kind in [LearnerKind::MainTerms, LearnerKind::InterceptOnly, LearnerKind::Saturated { alpha: 0.5 }] {
            let set = fit_nuisances(&data, &folds, &LearnerConfig::all(kind)).unwrap();
            for blk in set.blocks.iter().flatten() {
                for v in blk.g.iter().chain(&blk.e).chain(&blk.b).chain(&blk.d).chain(&blk.r).chain(&blk.h).chain(&blk.m) {
                    assert!((1e-3 - 1e-15..=0.999 + 1e-15).contains(v), "{kind}: {v}");
                }
            }
        }
    }

    #[test]
    fn regression_path_matches_exact_sums_under_coherence() {
        // every (w, a, l) cell is well populated under the four-level law
        let law = build_shift_dgp(Clamp::default());
        let data = law.sample(20_000, 8);
        let folds = make_folds(data.n(), 2, 4).unwrap();
        let cfg = LearnerConfig { clamp: Clamp::new(1e-9, 1.0 - 1e-9).unwrap(), ..LearnerConfig::all(LearnerKind::Saturated { alpha: 0.0 }) };
        let mut exact = fit_primary(&data, &folds, &cfg).unwrap();
        let mut reg = exact.clone();
        derive_secondary(&mut exact, &data, &folds, SecondaryPath::ExactSum, cfg.secondary).unwrap();
        derive_secondary(&mut reg, &data, &folds, SecondaryPath::Regression, cfg.secondary).unwrap();
        for j in 0..2 {
            let observed: std::collections::HashSet<(usize, usize, usize)> =
                folds.training(j).iter().map(|&i| data.rows()[i]).map(|o| (o.w, o.a, o.l)).collect();
            for &(w, a, l) in &observed {
                let (x, y) = (&exact.blocks[j][w], &reg.blocks[j][w]);
                assert!((x.v(l, a) - y.v(l, a)).abs() < 1e-10);
                assert!((x.s(l, a) - y.s(l, a)).abs() < 1e-10);
                assert!((x.ubar[a] - y.ubar[a]).abs() < 1e-10);
                assert!((x.q[a] - y.q[a]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn derived_from_truth_matches_truth() {
        let law = build_sim_dgp(Clamp::default());
        let truth = true_nuisances(&law);
        let mut again = truth.clone();
        again.derive_exact();
        for (x, y) in truth.blocks[0].iter().zip(&again.blocks[0]) {
            for (p, q) in x.ubar.iter().chain(&x.v).chain(&x.s).chain(&x.q).zip(y.ubar.iter().chain(&y.v).chain(&y.s).chain(&y.q)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_rows_do_not_affect_their_fold() {
        let data = build_sim_dgp(Clamp::default()).sample(300, 21);
        let folds = make_folds(data.n(), 3, 2).unwrap();
        let base = fit_nuisances(&data, &folds, &LearnerConfig::default()).unwrap();
        let target = folds.validation(0)[0];
        let mut y: Vec<f64> = data.rows().iter().map(|r| r.y).collect();
        y[target] = 1.0 - y[target];
        let other = fit_nuisances(&data.with_outcomes(&y), &folds, &LearnerConfig::default()).unwrap();
        assert_eq!(base.blocks[0], other.blocks[0]);
        assert_ne!(base.blocks[1], other.blocks[1]);
    }
}
