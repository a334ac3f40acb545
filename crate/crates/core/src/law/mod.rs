//! Exact discrete joint laws over `(W, A, L, Z, Y)`.
//!
//! A [`DiscreteLaw`] is a full probability table over a finite state space.
//! It is the ground truth against which every estimator in this crate is
//! checked: identification functionals, nuisance parameters, influence
//! function means and efficiency bounds are all computed from it by
//! exhaustive enumeration (see [`oracle`]).

mod dgp;
pub mod oracle;

pub use dgp::{build_shift_dgp, build_sim_dgp, law_from_factors, Bernoulli, Clamp, DgpSpec, ExpitOrientation};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::Dataset;

/// Maximum number of joint states a law may have.
pub const MAX_STATES: usize = 1_000_000;

/// Tolerance on the total mass of a law.
pub const MASS_TOL: f64 = 1e-12;

/// A discrete covariate column and its ordered level set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub levels: Vec<f64>,
}

/// Finite support of `(W, A, L, Z, Y)`. `L` and `Y` are binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub w: Vec<Covariate>,
    pub a_levels: Vec<f64>,
    #[serde(default = "binary_levels")]
    pub l_levels: Vec<f64>,
    pub z_levels: Vec<f64>,
    #[serde(default = "binary_levels")]
    pub y_levels: Vec<f64>,
}

fn binary_levels() -> Vec<f64> {
    vec![0.0, 1.0]
}

impl StateSpace {
    pub fn new(w: Vec<Covariate>, a_levels: Vec<f64>, z_levels: Vec<f64>) -> Result<Self> {
        let space = StateSpace {
            w,
            a_levels,
            l_levels: binary_levels(),
            z_levels,
            y_levels: binary_levels(),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.w {
            if c.levels.is_empty() {
                return Err(Error::Input(format!("covariate `{}` has no levels", c.name)));
            }
            check_distinct(&c.levels, &c.name)?;
        }
        if self.a_levels.is_empty() || self.z_levels.is_empty() {
            return Err(Error::Input("treatment and mediator level sets must be nonempty".into()));
        }
        if self.a_levels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Input("treatment levels must be strictly ascending".into()));
        }
        check_distinct(&self.z_levels, "Z")?;
        if self.l_levels != binary_levels() || self.y_levels != binary_levels() {
            return Err(Error::Input("L and Y must have levels [0, 1]".into()));
        }
        let count = self
            .n_w()
            .checked_mul(self.na() * 2 * self.nz() * 2)
            .filter(|&c| c <= MAX_STATES);
        if count.is_none() {
            return Err(Error::Input(format!("state space exceeds {MAX_STATES} states")));
        }
        Ok(())
    }

    /// Number of joint covariate strata.
    pub fn n_w(&self) -> usize {
        self.w.iter().map(|c| c.levels.len()).product()
    }

    pub fn na(&self) -> usize {
        self.a_levels.len()
    }

    pub fn nz(&self) -> usize {
        self.z_levels.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_w() * self.na() * 2 * self.nz() * 2
    }

    /// Per-column level indices of covariate stratum `w` (first column most significant).
    pub fn w_indices(&self, mut w: usize) -> Vec<u32> {
        let mut idx = vec![0u32; self.w.len()];
        for (k, c) in self.w.iter().enumerate().rev() {
            let n = c.levels.len();
            idx[k] = (w % n) as u32;
            w /= n;
        }
        idx
    }

    pub fn w_index(&self, indices: &[u32]) -> usize {
        indices
            .iter()
            .zip(&self.w)
            .fold(0, |acc, (&i, c)| acc * c.levels.len() + i as usize)
    }

    pub fn w_values(&self, w: usize) -> Vec<f64> {
        self.w_indices(w)
            .iter()
            .zip(&self.w)
            .map(|(&i, c)| c.levels[i as usize])
            .collect()
    }

    /// Flat state index in lexicographic order over `(W..., A, L, Z, Y)`.
    #[inline]
    pub fn state_index(&self, w: usize, a: usize, l: usize, z: usize, y: usize) -> usize {
        (((w * self.na() + a) * 2 + l) * self.nz() + z) * 2 + y
    }

    /// Inverse of [`state_index`](Self::state_index).
    pub fn decode(&self, mut idx: usize) -> State {
        let y = idx % 2;
        idx /= 2;
        let z = idx % self.nz();
        idx /= self.nz();
        let l = idx % 2;
        idx /= 2;
        let a = idx % self.na();
        let w = idx / self.na();
        State { w, a, l, z, y }
    }

    fn state_values(&self, s: State) -> Vec<f64> {
        let mut v = self.w_values(s.w);
        v.extend([
            self.a_levels[s.a],
            s.l as f64,
            self.z_levels[s.z],
            s.y as f64,
        ]);
        v
    }

    fn state_from_values(&self, values: &[f64]) -> Result<State> {
        let p = self.w.len();
        if values.len() != p + 4 {
            return Err(Error::Input(format!(
                "state has {} entries, expected {}",
                values.len(),
                p + 4
            )));
        }
        let find = |levels: &[f64], x: f64, what: &str| {
            levels
                .iter()
                .position(|&v| v == x)
                .ok_or_else(|| Error::Input(format!("value {x} is not a level of {what}")))
        };
        let mut wi = Vec::with_capacity(p);
        for (c, &x) in self.w.iter().zip(values) {
            wi.push(find(&c.levels, x, &c.name)? as u32);
        }
        Ok(State {
            w: self.w_index(&wi),
            a: find(&self.a_levels, values[p], "A")?,
            l: find(&self.l_levels, values[p + 1], "L")?,
            z: find(&self.z_levels, values[p + 2], "Z")?,
            y: find(&self.y_levels, values[p + 3], "Y")?,
        })
    }
}

fn check_distinct(levels: &[f64], name: &str) -> Result<()> {
    for (i, x) in levels.iter().enumerate() {
        if !x.is_finite() || levels[..i].contains(x) {
            return Err(Error::Input(format!("levels of `{name}` must be finite and distinct")));
        }
    }
    Ok(())
}

/// Index-coded joint state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub w: usize,
    pub a: usize,
    pub l: usize,
    pub z: usize,
    pub y: usize,
}

/// Exact joint probability table. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    space: StateSpace,
    pmf: Vec<f64>,
}

impl DiscreteLaw {
    /// Builds a law from a pmf in [`StateSpace::state_index`] order.
    pub fn new(space: StateSpace, pmf: Vec<f64>) -> Result<Self> {
        space.validate()?;
        if pmf.len() != space.n_states() {
            return Err(Error::Input(format!(
                "pmf has {} entries, state space has {}",
                pmf.len(),
                space.n_states()
            )));
        }
        if let Some(p) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Input(format!("invalid probability {p}")));
        }
        let total = pairwise_sum(&pmf);
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Input(format!("pmf sums to {total}, not 1")));
        }
        Ok(DiscreteLaw { space, pmf })
    }

    /// Point mass at a single state.
    pub fn point_mass(space: StateSpace, state: State) -> Result<Self> {
        let mut pmf = vec![0.0; space.n_states()];
        pmf[space.state_index(state.w, state.a, state.l, state.z, state.y)] = 1.0;
        Self::new(space, pmf)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    #[inline]
    pub fn p(&self, w: usize, a: usize, l: usize, z: usize, y: usize) -> f64 {
        self.pmf[self.space.state_index(w, a, l, z, y)]
    }

    /// Iterates over `(state, probability)` pairs with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.pmf
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (self.space.decode(i), p))
    }

    /// Exact expectation of `f` over the law.
    pub fn expect<F: FnMut(State) -> f64>(&self, mut f: F) -> f64 {
        let terms: Vec<f64> = self.support().map(|(s, p)| p * f(s)).collect();
        pairwise_sum(&terms)
    }

    /// Draws `n` i.i.d. rows by inverse CDF over the lexicographic state order.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut cdf = Vec::with_capacity(self.pmf.len());
        let mut acc = 0.0;
        for &p in &self.pmf {
            acc += p;
            cdf.push(acc);
        }
        let last_positive = self.pmf.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<State> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                self.space.decode(cdf.partition_point(|&c| c <= u).min(last_positive))
            })
            .collect();
        Dataset::from_law_states(&self.space, &states)
    }

    /// Serializes to the JSON interchange document.
    pub fn to_json(&self) -> serde_json::Value {
        let pmf: Vec<serde_json::Value> = self
            .pmf
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                serde_json::json!({
                    "state": self.space.state_values(self.space.decode(i)),
                    "p": p,
                })
            })
            .collect();
        serde_json::json!({ "space": self.space, "pmf": pmf })
    }

    /// Parses the JSON interchange document. Probabilities may be numbers or
    /// decimal strings; states absent from the list have zero mass.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: LawDoc = serde_json::from_value(value.clone())?;
        doc.space.validate()?;
        let mut pmf = vec![0.0; doc.space.n_states()];
        let mut seen = vec![false; pmf.len()];
        for entry in &doc.pmf {
            let s = doc.space.state_from_values(&entry.state)?;
            let i = doc.space.state_index(s.w, s.a, s.l, s.z, s.y);
            if seen[i] {
                return Err(Error::Input(format!("duplicate state {:?}", entry.state)));
            }
            seen[i] = true;
            pmf[i] = entry.p.value()?;
        }
        Self::new(doc.space, pmf)
    }
}

#[derive(Deserialize)]
struct LawDoc {
    space: StateSpace,
    pmf: Vec<PmfEntry>,
}

#[derive(Deserialize)]
struct PmfEntry {
    state: Vec<f64>,
    p: Prob,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Prob {
    Number(f64),
    Text(String),
}

impl Prob {
    fn value(&self) -> Result<f64> {
        match self {
            Prob::Number(x) => Ok(*x),
            Prob::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("bad probability `{s}`"))),
        }
    }
}

/// Pairwise summation; order-deterministic and accurate for long vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_space() -> StateSpace {
        StateSpace::new(
            vec![Covariate { name: "W1".into(), levels: vec![0.0, 1.0] }],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn state_index_round_trips() {
        let space = build_sim_dgp(Clamp::default()).space().clone();
        for i in 0..space.n_states() {
            let s = space.decode(i);
            assert_eq!(space.state_index(s.w, s.a, s.l, s.z, s.y), i);
            let vals = space.state_values(s);
            assert_eq!(space.state_from_values(&vals).unwrap(), s);
        }
    }

    #[test]
    fn rejects_unnormalized_pmf() {
        let space = tiny_space();
        let pmf = vec![0.1; space.n_states()];
        assert!(matches!(DiscreteLaw::new(space, pmf), Err(Error::Input(_))));
    }

    #[test]
    fn rejects_negative_mass() {
        let space = tiny_space();
        let mut pmf = vec![0.0; space.n_states()];
        pmf[0] = 1.5;
        pmf[1] = -0.5;
        assert!(DiscreteLaw::new(space, pmf).is_err());
    }

    #[test]
    fn point_mass_samples_identical_rows() {
        let space = tiny_space();
        let state = State { w: 1, a: 0, l: 1, z: 1, y: 0 };
        let law = DiscreteLaw::point_mass(space, state).unwrap();
        let data = law.sample(5, 3);
        assert_eq!(data.n(), 5);
        for row in data.rows() {
            assert_eq!((row.a, row.l, row.z), (0, 1, 1));
            assert_eq!(row.y, 0.0);
            assert_eq!(data.w_values(row.w), vec![1.0]);
        }
    }

    #[test]
    fn json_round_trip_and_string_probabilities() {
        let law = build_sim_dgp(Clamp::default());
        let back = DiscreteLaw::from_json(&law.to_json()).unwrap();
        assert_eq!(back, law);

        let doc = serde_json::json!({
            "space": {
                "w": [{"name": "W1", "levels": [0, 1]}],
                "a_levels": [0, 1], "l_levels": [0, 1], "z_levels": [0, 1], "y_levels": [0, 1]
            },
            "pmf": [
                {"state": [0, 0, 0, 0, 0], "p": "0.25"},
                {"state": [1, 1, 1, 1, 1], "p": 0.75}
            ]
        });
        let law = DiscreteLaw::from_json(&doc).unwrap();
        assert_eq!(law.p(0, 0, 0, 0, 0), 0.25);
        assert_eq!(law.p(1, 1, 1, 1, 1), 0.75);
    }

    #[test]
    fn json_rejects_mass_defect() {
        let doc = serde_json::json!({
            "space": {"w": [], "a_levels": [0, 1], "z_levels": [0]},
            "pmf": [{"state": [0, 0, 0, 0], "p": 0.5}]
        });
        assert!(DiscreteLaw::from_json(&doc).is_err());
    }
}
