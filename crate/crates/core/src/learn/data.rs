use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{Covariate, State, StateSpace};

/// One observation, index-coded. `y` is on the scaled `[0, 1]` outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs {
    /// Covariate stratum id within the dataset.
    pub w: usize,
    pub a: usize,
    pub l: usize,
    pub z: usize,
    pub y: f64,
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub w: Vec<String>,
    pub a: String,
    pub l: String,
    pub z: String,
    pub y: String,
}

impl Roles {
    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.w.iter().map(String::as_str).collect();
        names.extend([self.a.as_str(), self.l.as_str(), self.z.as_str(), self.y.as_str()]);
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Input("column role with an empty name".into()));
            }
            if names[..i].contains(n) {
                return Err(Error::Input(format!("column `{n}` is assigned to more than one role")));
            }
        }
        Ok(())
    }
}

/// Affine map of the raw outcome onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YScale {
    pub min: f64,
    pub max: f64,
}

impl Default for YScale {
    fn default() -> Self {
        YScale { min: 0.0, max: 1.0 }
    }
}

impl YScale {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.min) / self.width()
    }

    pub fn back(&self, y: f64) -> f64 {
        self.min + y * self.width()
    }
}

/// Observed data with discrete `W`, `A`, `Z`, binary `L` and bounded `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    roles: Roles,
    w_cols: Vec<Covariate>,
    strata: Vec<Vec<u32>>,
    a_levels: Vec<f64>,
    z_levels: Vec<f64>,
    y_scale: YScale,
    rows: Vec<Obs>,
}

impl Dataset {
    /// Rows drawn from a law; level sets are the law's own.
    pub fn from_law_states(space: &StateSpace, states: &[State]) -> Dataset {
        let mut ids = BTreeMap::new();
        for s in states {
            ids.entry(space.w_indices(s.w)).or_insert(0usize);
        }
        let strata: Vec<Vec<u32>> = ids.keys().cloned().collect();
        for (i, v) in ids.values_mut().enumerate() {
            *v = i;
        }
        let rows = states
            .iter()
            .map(|s| Obs { w: ids[&space.w_indices(s.w)], a: s.a, l: s.l, z: s.z, y: s.y as f64 })
            .collect();
        Dataset {
            roles: Roles {
                w: space.w.iter().map(|c| c.name.clone()).collect(),
                a: "A".into(),
                l: "L".into(),
                z: "Z".into(),
                y: "Y".into(),
            },
            w_cols: space.w.clone(),
            strata,
            a_levels: space.a_levels.clone(),
            z_levels: space.z_levels.clone(),
            y_scale: YScale::default(),
            rows,
        }
    }

    /// Reads a CSV with a header row. Lines starting with `#` are ignored.
    pub fn read_csv<R: Read>(reader: R, roles: &Roles) -> Result<Dataset> {
        roles.validate()?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input(format!("column `{name}` not found in CSV header")))
        };
        let w_idx: Vec<usize> = roles.w.iter().map(|n| col(n)).collect::<Result<_>>()?;
        let (ai, li, zi, yi) = (col(&roles.a)?, col(&roles.l)?, col(&roles.z)?, col(&roles.y)?);

        let mut raw: Vec<(Vec<f64>, f64, f64, f64, f64)> = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = r + 2;
            let cell = |c: usize| -> Result<f64> {
                let text = rec.get(c).unwrap_or("");
                let v: f64 = text.parse().map_err(|_| {
                    Error::Input(format!("row {line}, column `{}`: cannot parse `{text}` as a number", &header[c]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Input(format!("row {line}, column `{}`: non-finite value", &header[c])));
                }
                Ok(v)
            };
            let w = w_idx.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
            let l = cell(li)?;
            if l != 0.0 && l != 1.0 {
                return Err(Error::Input(format!("row {line}, column `{}`: L must be 0 or 1, got {l}", roles.l)));
            }
            raw.push((w, cell(ai)?, l, cell(zi)?, cell(yi)?));
        }
        if raw.is_empty() {
            return Err(Error::Input("CSV has no data rows".into()));
        }

        let levels = |vals: &mut dyn Iterator<Item = f64>| {
            let mut v: Vec<f64> = vals.collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let w_cols: Vec<Covariate> = roles
            .w
            .iter()
            .enumerate()
            .map(|(k, name)| Covariate { name: name.clone(), levels: levels(&mut raw.iter().map(|r| r.0[k])) })
            .collect();
        let a_levels = levels(&mut raw.iter().map(|r| r.1));
        let z_levels = levels(&mut raw.iter().map(|r| r.3));
        let (ymin, ymax) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.4), hi.max(r.4)));
        let y_scale = if ymin >= 0.0 && ymax <= 1.0 {
            YScale::default()
        } else if ymax > ymin {
            YScale { min: ymin, max: ymax }
        } else {
            return Err(Error::Input("outcome is constant outside [0, 1]; cannot scale".into()));
        };

        let pos = |levels: &[f64], x: f64| levels.binary_search_by(|v| v.total_cmp(&x)).expect("level present");
        let mut ids = BTreeMap::new();
        let keys: Vec<Vec<u32>> = raw
            .iter()
            .map(|r| r.0.iter().zip(&w_cols).map(|(&x, c)| pos(&c.levels, x) as u32).collect())
            .collect();
        for k in &keys {
            ids.entry(k.clone()).or_insert(0usize);
        }
        for (i, v) in ids.values_mut().enumerate() {
            *v = i;
        }
        let rows = raw
            .iter()
            .zip(&keys)
            .map(|(r, k)| Obs {
                w: ids[k],
                a: pos(&a_levels, r.1),
                l: r.2 as usize,
                z: pos(&z_levels, r.3),
                y: y_scale.forward(r.4),
            })
            .collect();
        Ok(Dataset {
            roles: roles.clone(),
            w_cols,
            strata: ids.into_keys().collect(),
            a_levels,
            z_levels,
            y_scale,
            rows,
        })
    }

    /// Writes the rows as CSV in raw outcome units, after optional `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.roles.w.iter().map(String::as_str).collect();
        header.extend([self.roles.a.as_str(), self.roles.l.as_str(), self.roles.z.as_str(), self.roles.y.as_str()]);
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = self.w_values(r.w).iter().map(f64::to_string).collect();
            rec.push(self.a_levels[r.a].to_string());
            rec.push(r.l.to_string());
            rec.push(self.z_levels[r.z].to_string());
            rec.push(self.y_scale.back(r.y).to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Obs] {
        &self.rows
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn a_levels(&self) -> &[f64] {
        &self.a_levels
    }

    pub fn z_levels(&self) -> &[f64] {
        &self.z_levels
    }

    pub fn na(&self) -> usize {
        self.a_levels.len()
    }

    pub fn nz(&self) -> usize {
        self.z_levels.len()
    }

    pub fn y_scale(&self) -> YScale {
        self.y_scale
    }

    pub fn w_columns(&self) -> &[Covariate] {
        &self.w_cols
    }

    /// Number of distinct observed covariate strata.
    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    /// Per-column level indices of stratum `w`.
    pub fn w_key(&self, w: usize) -> &[u32] {
        &self.strata[w]
    }

    pub fn w_values(&self, w: usize) -> Vec<f64> {
        self.strata[w].iter().zip(&self.w_cols).map(|(&i, c)| c.levels[i as usize]).collect()
    }

    /// Stratum ids mapped to covariate indices of `space`, when the columns match.
    pub fn law_strata(&self, space: &StateSpace) -> Result<Vec<usize>> {
        if space.w.len() != self.w_cols.len() {
            return Err(Error::Input("dataset and law have different covariate columns".into()));
        }
        (0..self.n_strata())
            .map(|s| {
                let idx = self
                    .w_values(s)
                    .iter()
                    .zip(&space.w)
                    .map(|(x, c)| {
                        c.levels
                            .iter()
                            .position(|v| v == x)
                            .map(|p| p as u32)
                            .ok_or_else(|| Error::Input(format!("covariate value {x} not in law levels of `{}`", c.name)))
                    })
                    .collect::<Result<Vec<u32>>>()?;
                Ok(space.w_index(&idx))
            })
            .collect()
    }

    /// The same rows with outcome values replaced (on the scaled outcome).
    pub fn with_outcomes(&self, y: &[f64]) -> Dataset {
        let mut out = self.clone();
        for (r, &v) in out.rows.iter_mut().zip(y) {
            r.y = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::{build_sim_dgp, Clamp};

    fn roles() -> Roles {
        Roles { w: vec!["W1".into(), "W2".into(), "W3".into()], a: "A".into(), l: "L".into(), z: "Z".into(), y: "Y".into() }
    }

    #[test]
    fn csv_round_trip() {
        let data = build_sim_dgp(Clamp::default()).sample(200, 4);
        let mut buf = Vec::new();
        data.write_csv(&mut buf, &["hello".into()]).unwrap();
        let back = Dataset::read_csv(&buf[..], &roles()).unwrap();
        assert_eq!(back.n(), 200);
        for (a, b) in data.rows().iter().zip(back.rows()) {
            assert_eq!(data.w_values(a.w), back.w_values(b.w));
            assert_eq!((a.l, a.y), (b.l, b.y));
            assert_eq!(data.a_levels()[a.a], back.a_levels()[b.a]);
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "W1,A,L,Z\n1,0,1,0\n";
        let err = Dataset::read_csv(csv.as_bytes(), &roles()).unwrap_err();
        assert!(err.to_string().contains("W2"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let csv = "W1,W2,W3,A,L,Z,Y\n1,0,1,0,1,0,1\n1,0,x,0,1,0,1\n";
        let err = Dataset::read_csv(csv.as_bytes(), &roles()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("W3"), "{err}");
    }

    #[test]
    fn overlapping_roles_rejected() {
        let mut r = roles();
        r.y = "A".into();
        assert!(r.validate().is_err());
    }

    #[test]
    fn outcome_scaling() {
        let csv = "W1,W2,W3,A,L,Z,Y\n1,0,1,0,1,0,10\n1,0,1,1,0,0,30\n0,0,1,1,0,1,20\n";
        let d = Dataset::read_csv(csv.as_bytes(), &roles()).unwrap();
        assert_eq!(d.y_scale(), YScale { min: 10.0, max: 30.0 });
        let ys: Vec<f64> = d.rows().iter().map(|r| r.y).collect();
        assert_eq!(ys, vec![0.0, 1.0, 0.5]);
        assert_eq!(d.n_strata(), 2);
    }
}
