//! Per-observation efficient influence function values `D^j_{η,δ}(o)`.
//!
//! `D^j = H^j (y − m) + (g_δ/g)·[centered terms] + ∫ (·) g_δ dκ + S^{j,A}`,
//! with all integrals over the treatment written as sums over its levels.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intervene::{lower_support, mtp_map, Intervention};
use crate::learn::{Dataset, FoldPlan, NuisanceSet, WBlock};

/// Which of the two functionals: `1` integrates the mediator against
/// `p(z | a, w)`, `2` against `p(z | w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Component {
    One,
    Two,
}

/// The additive pieces of `D^j` at one observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Terms {
    /// `H^j (y − m)`
    pub residual: f64,
    /// `(g_δ/g)(v − v̄ + u − ū)` for `j = 1`, `(g_δ/g)(s − s̄)` for `j = 2`
    pub centered: f64,
    /// `Σ_a ū(a) g_δ(a)` for `j = 1`, `Σ_a u(z, a) g_δ(a)` for `j = 2`
    pub plug_in: f64,
    /// Treatment score `S^{j,A}`.
    pub score: f64,
    /// `H^j`
    pub h: f64,
    /// `g_δ(a)/g(a)` at the observed treatment.
    pub ratio: f64,
    /// Number of denominators raised to the floor.
    pub floored: u32,
}

impl Terms {
    pub fn d(&self) -> f64 {
        self.residual + self.centered + self.plug_in + self.score
    }

    /// Body of the influence function without the treatment score.
    pub fn s_body(&self) -> f64 {
        self.residual + self.centered + self.plug_in
    }
}

/// Influence-function evaluator for one covariate stratum.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    blk: &'a WBlock,
    spec: Intervention,
    gd: Vec<f64>,
    /// MTP image of each level (identity for tilts).
    map: Vec<usize>,
    floor: f64,
    plug1: f64,
    center_score1: f64,
    center_score2: f64,
}

impl<'a> Evaluator<'a> {
    /// `floor` bounds the `g`, `e` and `d` denominators from below; use 0 to
    /// evaluate exactly.
    pub fn new(blk: &'a WBlock, a_levels: &[f64], spec: Intervention, floor: f64) -> Result<Self> {
        let gd = spec.post_density(&blk.g, a_levels)?;
        let na = blk.na;
        let map: Vec<usize> = match spec {
            Intervention::DiscreteShift { delta } => {
                let lower = lower_support(&blk.g).unwrap_or(0);
                (0..na).map(|a| mtp_map(delta, a, lower)).collect()
            }
            _ => (0..na).collect(),
        };
        let plug1 = (0..na).map(|a| blk.ubar[a] * gd[a]).sum();
        let (center_score1, center_score2) = match spec {
            Intervention::DiscreteShift { .. } => (
                (0..na).map(|a| blk.ubar[map[a]] * blk.g[a]).sum(),
                (0..na).map(|a| blk.q[map[a]] * blk.g[a]).sum(),
            ),
            _ => (plug1, (0..na).map(|a| blk.q[a] * gd[a]).sum()),
        };
        Ok(Evaluator { blk, spec, gd, map, floor, plug1, center_score1, center_score2 })
    }

    pub fn g_delta(&self) -> &[f64] {
        &self.gd
    }

    fn den(&self, x: f64, floored: &mut u32) -> f64 {
        if x < self.floor {
            *floored += 1;
            self.floor
        } else {
            x
        }
    }

    /// `H^j` at `(a, l, z)` together with `g_δ/g` and the floor count.
    pub fn h_ratio(&self, j: Component, a: usize, l: usize, z: usize) -> (f64, f64, u32) {
        let blk = self.blk;
        let mut floored = 0;
        let g = self.den(blk.g[a], &mut floored);
        let d = self.den(blk.d(l, z, a), &mut floored);
        let ratio = self.gd[a] / g;
        let bd = blk.b(l, a) / d;
        let h = match j {
            Component::One => ratio * bd,
            Component::Two => self.gd[a] / self.den(blk.e(a, z), &mut floored) * bd,
        };
        (h, ratio, floored)
    }

    /// Efficient score of the treatment mechanism, `S^{j,A}(a, w)`.
    pub fn score_a(&self, j: Component, a: usize) -> Result<f64> {
        let blk = self.blk;
        let target = |x: usize| match j {
            Component::One => blk.ubar[x],
            Component::Two => blk.q[x],
        };
        let center = match j {
            Component::One => self.center_score1,
            Component::Two => self.center_score2,
        };
        match self.spec {
            Intervention::DiscreteShift { .. } => Ok(target(self.map[a]) - center),
            Intervention::OddsTilt { delta } => {
                if blk.na != 2 {
                    return Err(Error::Unsupported("odds-tilt score needs a binary treatment".into()));
                }
                let g1 = blk.g[1];
                let qj = match j {
                    Component::One => blk.q1(),
                    Component::Two => blk.q2(),
                };
                let den = delta * g1 + 1.0 - g1;
                Ok(delta * qj * (a as f64 - g1) / (den * den))
            }
            Intervention::ExpTilt { .. } | Intervention::Identity => {
                let mut floored = 0;
                let ratio = self.gd[a] / self.den(blk.g[a], &mut floored);
                Ok(ratio * (target(a) - center))
            }
        }
    }

    /// The exponential-tilt form of the score, valid for any tilt family.
    pub fn score_a_tilt_form(&self, j: Component, a: usize) -> f64 {
        let blk = self.blk;
        let (t, c) = match j {
            Component::One => (blk.ubar[a], self.plug1),
            Component::Two => (blk.q[a], (0..blk.na).map(|x| blk.q[x] * self.gd[x]).sum()),
        };
        self.gd[a] / blk.g[a] * (t - c)
    }

    pub fn terms(&self, j: Component, a: usize, l: usize, z: usize, y: f64) -> Result<Terms> {
        let blk = self.blk;
        let (h, ratio, floored) = self.h_ratio(j, a, l, z);
        let residual = h * (y - blk.m(z, l, a));
        let (centered, plug_in) = match j {
            Component::One => (
                ratio * (blk.v(l, a) - blk.vbar(a) + blk.u(z, a) - blk.ubar[a]),
                self.plug1,
            ),
            Component::Two => (
                ratio * (blk.s(l, a) - blk.sbar(a)),
                (0..blk.na).map(|x| blk.u(z, x) * self.gd[x]).sum(),
            ),
        };
        Ok(Terms { residual, centered, plug_in, score: self.score_a(j, a)?, h, ratio, floored })
    }
}

/// The three influence-function columns used by the effect estimators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EifRow {
    /// `D¹` at the identity intervention.
    pub t1_null: Terms,
    pub t1_delta: Terms,
    pub t2_delta: Terms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EifColumns {
    pub d1_null: Vec<f64>,
    pub d1_delta: Vec<f64>,
    pub d2_delta: Vec<f64>,
    pub floored: usize,
}

impl EifColumns {
    pub fn n(&self) -> usize {
        self.d1_null.len()
    }

    /// Per-observation values of the direct-effect influence function.
    pub fn direct(&self) -> Vec<f64> {
        self.d1_null.iter().zip(&self.d2_delta).map(|(a, b)| a - b).collect()
    }

    pub fn indirect(&self) -> Vec<f64> {
        self.d2_delta.iter().zip(&self.d1_delta).map(|(a, b)| a - b).collect()
    }

    /// Optional diagnostic dump: `row,d1_null,d1_delta,d2_delta`.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["row", "d1_null", "d1_delta", "d2_delta"])?;
        for i in 0..self.n() {
            wtr.write_record(&[
                i.to_string(),
                self.d1_null[i].to_string(),
                self.d1_delta[i].to_string(),
                self.d2_delta[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Evaluates the three term sets at every row using the row's own fold.
pub fn eif_rows(data: &Dataset, eta: &NuisanceSet, folds: &FoldPlan, spec: Intervention, floor: f64) -> Result<Vec<EifRow>> {
    if eta.folds() != folds.k() || folds.n() != data.n() {
        return Err(Error::Input("nuisance folds do not match the fold plan".into()));
    }
    let null = spec.null();
    data.rows()
        .par_iter()
        .enumerate()
        .map(|(i, o)| {
            let blk = eta.block(folds.fold_of(i), o.w);
            let ev0 = Evaluator::new(blk, data.a_levels(), null, floor).map_err(|e| at_stratum(e, data, o.w))?;
            let ev = Evaluator::new(blk, data.a_levels(), spec, floor).map_err(|e| at_stratum(e, data, o.w))?;
            Ok(EifRow {
                t1_null: ev0.terms(Component::One, o.a, o.l, o.z, o.y)?,
                t1_delta: ev.terms(Component::One, o.a, o.l, o.z, o.y)?,
                t2_delta: ev.terms(Component::Two, o.a, o.l, o.z, o.y)?,
            })
        })
        .collect()
}

fn at_stratum(e: Error, data: &Dataset, w: usize) -> Error {
    match e {
        Error::Positivity { a, detail, .. } => Error::Positivity { a, w: format!("{:?}", data.w_values(w)), detail },
        other => other,
    }
}

/// Assembles the columns, optionally stabilized.
pub fn columns(rows: &[EifRow], stabilize: bool) -> Result<EifColumns> {
    let floored = rows
        .iter()
        .map(|r| (r.t1_null.floored + r.t1_delta.floored + r.t2_delta.floored) as usize)
        .sum();
    let pick = |f: fn(&EifRow) -> &Terms| -> Result<Vec<f64>> {
        let terms: Vec<Terms> = rows.iter().map(|r| *f(r)).collect();
        if stabilize {
            stabilize_terms(&terms)
        } else {
            Ok(terms.iter().map(Terms::d).collect())
        }
    };
    Ok(EifColumns {
        d1_null: pick(|r| &r.t1_null)?,
        d1_delta: pick(|r| &r.t1_delta)?,
        d2_delta: pick(|r| &r.t2_delta)?,
        floored,
    })
}

/// Divides residual terms by the empirical mean of `H^j` and the centered
/// and score terms by the empirical mean of `g_δ/g`.
pub fn stabilize_terms(terms: &[Terms]) -> Result<Vec<f64>> {
    let n = terms.len() as f64;
    let mh = terms.iter().map(|t| t.h).sum::<f64>() / n;
    let mr = terms.iter().map(|t| t.ratio).sum::<f64>() / n;
    if !(mh > 0.0 && mr > 0.0) {
        return Err(Error::Numerical(format!("nonpositive stabilization normalizer (mean H = {mh}, mean ratio = {mr})")));
    }
    Ok(terms
        .iter()
        .map(|t| t.residual / mh + (t.centered + t.score) / mr + t.plug_in)
        .collect())
}
