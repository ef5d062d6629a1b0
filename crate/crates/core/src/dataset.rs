//! Unit-level experimental data: schema declaration, CSV ingestion and
//! validation.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TvaError};
use crate::estimation::MAX_FE_FACTORS;
use crate::lattice::FactorialDesign;

/// Itemized ingestion errors beyond this count are summarized.
const MAX_REPORTED_ERRORS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub column: String,
    /// Display name; defaults to the column name.
    #[serde(default)]
    pub name: Option<String>,
    /// Level labels in dosage order; the first label means "off".
    #[serde(default)]
    pub levels: Option<Vec<String>>,
    /// Number of dosage levels of an integer-coded column, counting 0.
    /// Inferred from the data when absent.
    #[serde(default)]
    pub dosages: Option<usize>,
}

impl ArmSpec {
    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub outcome: String,
    pub arms: Vec<ArmSpec>,
    #[serde(default)]
    pub weight: Option<String>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub fixed_effects: Vec<String>,
    /// Groups of arm columns that are never simultaneously positive, e.g.
    /// two incentive schedules whose variants must not pool.
    #[serde(default)]
    pub exclusive: Vec<Vec<String>>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TvaError::Validation(m));
        if self.arms.is_empty() {
            return bad("schema declares no arms".into());
        }
        let mut seen = HashMap::new();
        for (m, arm) in self.arms.iter().enumerate() {
            if seen.insert(arm.column.as_str(), m).is_some() {
                return bad(format!("arm column `{}` is declared twice", arm.column));
            }
            if let Some(levels) = &arm.levels {
                if levels.len() < 2 {
                    return bad(format!("arm `{}` needs at least two levels", arm.column));
                }
                let mut sorted = levels.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != levels.len() {
                    return bad(format!("arm `{}` repeats a level label; the order must be total", arm.column));
                }
                if arm.dosages.is_some_and(|d| d != levels.len()) {
                    return bad(format!("arm `{}`: `dosages` disagrees with the number of levels", arm.column));
                }
            }
            if arm.dosages.is_some_and(|d| d < 2) {
                return bad(format!("arm `{}` needs at least two dosages", arm.column));
            }
        }
        if self.fixed_effects.len() > MAX_FE_FACTORS {
            return bad(format!("at most {MAX_FE_FACTORS} fixed-effect factors are supported"));
        }
        for group in &self.exclusive {
            if group.len() < 2 {
                return bad("an exclusivity group needs at least two arms".into());
            }
            for c in group {
                if !seen.contains_key(c.as_str()) {
                    return bad(format!("exclusivity group names `{c}`, which is not a declared arm"));
                }
            }
        }
        Ok(())
    }

    fn exclusive_indices(&self) -> Vec<Vec<usize>> {
        self.exclusive
            .iter()
            .map(|g| g.iter().filter_map(|c| self.arms.iter().position(|a| &a.column == c)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub design: FactorialDesign,
    pub arm_names: Vec<String>,
    /// Per arm, the label of each dosage.
    pub level_labels: Vec<Vec<String>>,
    /// Canonical policy index of each unit.
    pub assignments: Vec<usize>,
    pub y: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    /// Integer-coded cluster labels.
    pub clusters: Option<Vec<usize>>,
    /// Integer-coded fixed-effect factors.
    pub fixed_effects: Vec<Vec<usize>>,
    /// Arm groups (by arm index) that are never jointly positive.
    pub exclusive: Vec<Vec<usize>>,
}

impl Dataset {
    /// Unweighted data with no clusters, fixed effects or exclusivity.
    pub fn new(design: FactorialDesign, assignments: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        crate::lattice::check_assignments(&design, &assignments)?;
        if assignments.len() != y.len() {
            return Err(TvaError::InvalidArgument(format!(
                "{} assignments but {} outcomes",
                assignments.len(),
                y.len()
            )));
        }
        let m = design.arm_count();
        let arm_names = (1..=m).map(|i| format!("arm{i}")).collect();
        let level_labels = design.dosages().iter().map(|&r| (0..r).map(|d| d.to_string()).collect()).collect();
        Ok(Self {
            design,
            arm_names,
            level_labels,
            assignments,
            y,
            weights: None,
            clusters: None,
            fixed_effects: Vec::new(),
            exclusive: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Cells allowed by the exclusivity constraints, ascending.
    pub fn feasible_cells(&self) -> Vec<usize> {
        (0..self.design.policy_count()).filter(|&c| self.is_feasible(c)).collect()
    }

    pub fn is_feasible(&self, cell: usize) -> bool {
        self.exclusive
            .iter()
            .all(|g| g.iter().filter(|&&m| self.design.intensity(cell, m) > 0).count() <= 1)
    }

    /// Human-readable policy, e.g. `seed=trusted, sms=low`; arms that are off are omitted.
    pub fn describe_policy(&self, cell: usize) -> String {
        let parts: Vec<String> = (0..self.design.arm_count())
            .filter(|&m| self.design.intensity(cell, m) > 0)
            .map(|m| format!("{}={}", self.arm_names[m], self.level_labels[m][self.design.intensity(cell, m)]))
            .collect();
        if parts.is_empty() {
            "control".into()
        } else {
            parts.join(", ")
        }
    }

    /// The rows listed in `rows`, in that order (repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        let pick_u = |v: &[usize]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Dataset {
            design: self.design.clone(),
            arm_names: self.arm_names.clone(),
            level_labels: self.level_labels.clone(),
            assignments: pick_u(&self.assignments),
            y: pick(&self.y),
            weights: self.weights.as_deref().map(pick),
            clusters: self.clusters.as_deref().map(pick_u),
            fixed_effects: self.fixed_effects.iter().map(|f| pick_u(f)).collect(),
            exclusive: self.exclusive.clone(),
        }
    }
}

pub fn ingest(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| TvaError::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, schema)
}

fn encode_labels(values: Vec<String>) -> Vec<usize> {
    let mut codes: HashMap<String, usize> = HashMap::new();
    values
        .into_iter()
        .map(|v| {
            let next = codes.len();
            *codes.entry(v).or_insert(next)
        })
        .collect()
}

/// Parse and validate a CSV with a header row. Row numbers in errors count
/// data rows from 1.
pub fn ingest_reader<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TvaError::Validation(format!("missing column `{name}`")))
    };
    let outcome_col = col(&schema.outcome)?;
    let arm_cols: Vec<usize> = schema.arms.iter().map(|a| col(&a.column)).collect::<Result<_>>()?;
    let weight_col = schema.weight.as_deref().map(col).transpose()?;
    let cluster_col = schema.cluster.as_deref().map(col).transpose()?;
    let fe_cols: Vec<usize> = schema.fixed_effects.iter().map(|f| col(f)).collect::<Result<_>>()?;
    let exclusive = schema.exclusive_indices();

    let m = schema.arms.len();
    let mut errors: Vec<String> = Vec::new();
    let mut error_count = 0usize;
    let mut push_err = |msg: String, errors: &mut Vec<String>| {
        error_count += 1;
        if errors.len() < MAX_REPORTED_ERRORS {
            errors.push(msg);
        }
    };
    let mut dosages: Vec<Vec<usize>> = Vec::new();
    let mut y = Vec::new();
    let mut weights = Vec::new();
    let mut clusters = Vec::new();
    let mut fes: Vec<Vec<String>> = vec![Vec::new(); fe_cols.len()];

    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let mut levels = vec![0usize; m];
        let mut ok = true;
        for (a, spec) in schema.arms.iter().enumerate() {
            let raw = field(arm_cols[a]);
            let parsed = match &spec.levels {
                Some(labels) => labels.iter().position(|l| l == raw),
                None => raw.parse::<usize>().ok().filter(|&d| spec.dosages.is_none_or(|n| d < n)),
            };
            match parsed {
                Some(d) => levels[a] = d,
                None => {
                    ok = false;
                    push_err(format!("row {row}: arm `{}` has unmapped level `{raw}`", spec.column), &mut errors);
                }
            }
        }
        for g in &exclusive {
            let on: Vec<&str> = g.iter().filter(|&&a| levels[a] > 0).map(|&a| schema.arms[a].column.as_str()).collect();
            if on.len() > 1 {
                ok = false;
                push_err(format!("row {row}: exclusive arms {} are jointly positive", on.join(" and ")), &mut errors);
            }
        }
        let raw_y = field(outcome_col);
        match raw_y.parse::<f64>() {
            Ok(v) if v.is_finite() => y.push(v),
            _ => {
                ok = false;
                let what = if raw_y.is_empty() { "missing".to_string() } else { format!("not a number (`{raw_y}`)") };
                push_err(format!("row {row}: outcome `{}` is {what}", schema.outcome), &mut errors);
            }
        }
        if let Some(c) = weight_col {
            let raw = field(c);
            match raw.parse::<f64>() {
                Ok(w) if w > 0.0 && w.is_finite() => weights.push(w),
                Ok(w) => {
                    ok = false;
                    push_err(format!("row {row}: weight must be positive, got {w}"), &mut errors);
                }
                Err(_) => {
                    ok = false;
                    push_err(format!("row {row}: non-numeric weight `{raw}`"), &mut errors);
                }
            }
        }
        if let Some(c) = cluster_col {
            clusters.push(field(c).to_string());
        }
        for (f, &c) in fe_cols.iter().enumerate() {
            fes[f].push(field(c).to_string());
        }
        if ok {
            dosages.push(levels);
        }
    }
    if error_count > 0 {
        let extra = error_count.saturating_sub(errors.len());
        let mut msg = format!("{error_count} invalid row(s):\n  {}", errors.join("\n  "));
        if extra > 0 {
            msg.push_str(&format!("\n  ... and {extra} more"));
        }
        return Err(TvaError::Validation(msg));
    }
    if y.is_empty() {
        return Err(TvaError::Validation("the data file has no rows".into()));
    }

    let mut counts = Vec::with_capacity(m);
    let mut level_labels = Vec::with_capacity(m);
    for (a, spec) in schema.arms.iter().enumerate() {
        let r = match (&spec.levels, spec.dosages) {
            (Some(l), _) => l.len(),
            (None, Some(d)) => d,
            (None, None) => dosages.iter().map(|d| d[a]).max().unwrap_or(0) + 1,
        };
        if r < 2 {
            return Err(TvaError::Validation(format!(
                "arm `{}` is never switched on; declare `dosages` or drop the arm",
                spec.column
            )));
        }
        counts.push(r);
        level_labels.push(spec.levels.clone().unwrap_or_else(|| (0..r).map(|d| d.to_string()).collect()));
    }
    let design = FactorialDesign::new(counts)?;
    let assignments = dosages.iter().map(|d| design.encode(d)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        design,
        arm_names: schema.arms.iter().map(|a| a.display_name().to_string()).collect(),
        level_labels,
        assignments,
        y,
        weights: weight_col.map(|_| weights),
        clusters: cluster_col.map(|_| encode_labels(clusters)),
        fixed_effects: fes.into_iter().map(encode_labels).collect(),
        exclusive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> DatasetSchema {
        let levels = Some(vec!["none".to_string(), "low".into(), "high".into()]);
        DatasetSchema {
            outcome: "y".into(),
            arms: vec![
                ArmSpec { column: "a".into(), name: None, levels: levels.clone(), dosages: None },
                ArmSpec { column: "b".into(), name: None, levels, dosages: None },
            ],
            weight: None,
            cluster: None,
            fixed_effects: vec![],
            exclusive: vec![],
        }
    }

    #[test]
    fn labelled_levels_map_to_dosages() {
        let csv = "y,a,b\n1.0,none,none\n2.5,low,high\n3.0,high,low\n";
        let d = ingest_reader(csv.as_bytes(), &toy_schema()).unwrap();
        assert_eq!(d.design.dosages(), &[3, 3]);
        assert_eq!(d.assignments, vec![0, 5, 7]);
        assert_eq!(d.describe_policy(5), "a=low, b=high");
        assert_eq!(d.describe_policy(0), "control");
    }

    #[test]
    fn exclusivity_violation_names_the_row() {
        let mut s = toy_schema();
        s.exclusive = vec![vec!["a".into(), "b".into()]];
        let csv = "y,a,b\n1.0,none,low\n2.0,low,low\n";
        let err = ingest_reader(csv.as_bytes(), &s).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("jointly positive"), "{err}");
        let ok = "y,a,b\n1.0,none,low\n2.0,low,none\n";
        let d = ingest_reader(ok.as_bytes(), &s).unwrap();
        assert_eq!(d.feasible_cells(), vec![0, 1, 2, 3, 6]);
    }

    #[test]
    fn bad_values_are_itemized() {
        let mut s = toy_schema();
        s.weight = Some("w".into());
        let csv = "y,a,b,w\n,none,none,1\n1,medium,none,1\n1,low,none,heavy\n";
        let err = ingest_reader(csv.as_bytes(), &s).unwrap_err().to_string();
        assert!(err.contains("row 1: outcome `y` is missing"), "{err}");
        assert!(err.contains("row 2: arm `a` has unmapped level `medium`"), "{err}");
        assert!(err.contains("row 3: non-numeric weight `heavy`"), "{err}");
        assert!(ingest_reader("a,b\nnone,none\n".as_bytes(), &toy_schema()).is_err());
    }

    #[test]
    fn integer_dosages_and_labels() {
        let s = DatasetSchema {
            outcome: "y".into(),
            arms: vec![ArmSpec { column: "x".into(), name: Some("dose".into()), levels: None, dosages: None }],
            weight: None,
            cluster: Some("c".into()),
            fixed_effects: vec!["d".into()],
            exclusive: vec![],
        };
        let csv = "y,x,c,d\n1,0,v1,n\n2,2,v2,s\n3,1,v1,s\n";
        let d = ingest_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.design.dosages(), &[3]);
        assert_eq!(d.clusters, Some(vec![0, 1, 0]));
        assert_eq!(d.fixed_effects, vec![vec![0, 1, 1]]);
        assert_eq!(d.describe_policy(2), "dose=2");
    }
}
