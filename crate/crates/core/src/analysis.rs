//! Cross-run comparison of identified function sets.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{PradaError, Result};
use crate::extraction::AdditiveComponent;

/// Supports identified in one run, each with its complexity (node count).
///
/// Serialized as a list of `[support, complexity]` pairs since JSON keys must be strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(Vec<usize>, usize)>", into = "Vec<(Vec<usize>, usize)>")]
pub struct FunctionSet {
    pub functions: BTreeMap<Vec<usize>, usize>,
}

impl From<Vec<(Vec<usize>, usize)>> for FunctionSet {
    fn from(v: Vec<(Vec<usize>, usize)>) -> Self {
        Self { functions: v.into_iter().collect() }
    }
}

impl From<FunctionSet> for Vec<(Vec<usize>, usize)> {
    fn from(f: FunctionSet) -> Self {
        f.functions.into_iter().collect()
    }
}

impl FunctionSet {
    pub fn from_components(components: &[AdditiveComponent]) -> Self {
        let mut functions = BTreeMap::new();
        for c in components {
            *functions.entry(c.support.clone()).or_insert(0) += c.complexity;
        }
        Self { functions }
    }

    /// Complexity 1 for every support.
    pub fn from_supports<I: IntoIterator<Item = Vec<usize>>>(supports: I) -> Self {
        let functions = supports
            .into_iter()
            .map(|mut s| {
                s.sort_unstable();
                s.dedup();
                (s, 1)
            })
            .collect();
        Self { functions }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn contains(&self, support: &[usize]) -> bool {
        self.functions.contains_key(support)
    }

    pub fn supports(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.functions.keys()
    }
}

/// `1 − |a∩b| / |a∪b|` on supports; 0 when both are empty.
pub fn jaccard_distance(a: &FunctionSet, b: &FunctionSet) -> f64 {
    let inter = a.supports().filter(|s| b.contains(s)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Summed distances closer than this count as tied.
const MEDOID_TIE_TOL: f64 = 1e-9;

/// Index of the run minimizing the summed distance to all runs; lowest index on ties.
pub fn medoid_model(runs: &[FunctionSet]) -> Result<usize> {
    if runs.is_empty() {
        return Err(PradaError::InvalidData("medoid of an empty ensemble".into()));
    }
    let sums: Vec<f64> = runs
        .iter()
        .map(|a| runs.iter().map(|b| jaccard_distance(a, b)).sum())
        .collect();
    Ok(sums
        .iter()
        .enumerate()
        // sums of rationals that tie exactly can differ in the last bits
        .fold(0, |best, (i, &s)| if s < sums[best] - MEDOID_TIE_TOL { i } else { best }))
}

/// Mean Jaccard similarity between the medoid and every other run (the medoid
/// itself is excluded).
pub fn mean_similarity_to_medoid(runs: &[FunctionSet]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(PradaError::InvalidData("similarity to medoid needs at least 2 runs".into()));
    }
    let m = medoid_model(runs)?;
    let total: f64 = runs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m)
        .map(|(_, r)| 1.0 - jaccard_distance(&runs[m], r))
        .sum();
    Ok(total / (runs.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSummary {
    pub support: Vec<usize>,
    /// Fraction of runs containing the support.
    pub presence: f64,
    /// Mean complexity over the runs that contain it.
    pub mean_complexity: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_runs: usize,
    /// Sorted by presence descending, then by support size and indices.
    pub supports: Vec<SupportSummary>,
}

impl EnsembleSummary {
    pub fn get(&self, support: &[usize]) -> Option<&SupportSummary> {
        self.supports.iter().find(|s| s.support == support)
    }

    /// Presence of a support, 0 when never identified.
    pub fn presence(&self, support: &[usize]) -> f64 {
        self.get(support).map_or(0.0, |s| s.presence)
    }

    /// CSV with columns `support,presence,mean_complexity`.
    pub fn write_csv<W: Write>(&self, out: W, column_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["support", "presence", "mean_complexity"])?;
        for s in &self.supports {
            w.write_record([
                support_label(&s.support, column_names),
                s.presence.to_string(),
                s.mean_complexity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Label such as `f(x1,x3)`, falling back to 1-based `x<j>` names.
pub fn support_label(support: &[usize], column_names: &[String]) -> String {
    let names: Vec<String> = support
        .iter()
        .map(|&d| column_names.get(d).cloned().unwrap_or_else(|| format!("x{}", d + 1)))
        .collect();
    format!("f({})", names.join(","))
}

/// Presence fraction and conditional mean complexity of every support seen.
pub fn summarize_ensemble(runs: &[FunctionSet]) -> Result<EnsembleSummary> {
    if runs.is_empty() {
        return Err(PradaError::InvalidData("summary of an empty ensemble".into()));
    }
    let mut acc: BTreeMap<&Vec<usize>, (usize, usize)> = BTreeMap::new();
    for r in runs {
        for (s, &c) in &r.functions {
            let e = acc.entry(s).or_insert((0, 0));
            e.0 += 1;
            e.1 += c;
        }
    }
    let n = runs.len();
    let mut supports: Vec<SupportSummary> = acc
        .into_iter()
        .map(|(s, (count, total))| SupportSummary {
            support: s.clone(),
            presence: count as f64 / n as f64,
            mean_complexity: total as f64 / count as f64,
            count,
        })
        .collect();
    supports.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.support.len().cmp(&b.support.len()))
            .then_with(|| a.support.cmp(&b.support))
    });
    Ok(EnsembleSummary { n_runs: n, supports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fs(sets: &[&[usize]]) -> FunctionSet {
        FunctionSet::from_supports(sets.iter().map(|s| s.to_vec()))
    }

    #[test]
    fn jaccard_examples() {
        let a = fs(&[&[0]]);
        let ab = fs(&[&[0], &[1]]);
        assert_eq!(jaccard_distance(&ab, &ab), 0.0);
        assert_eq!(jaccard_distance(&a, &ab), 0.5);
        assert_eq!(jaccard_distance(&a, &fs(&[&[2, 3]])), 1.0);
        assert_eq!(jaccard_distance(&FunctionSet::default(), &FunctionSet::default()), 0.0);
    }

    #[test]
    fn complexity_is_ignored_by_distance() {
        let mut a = fs(&[&[0], &[1]]);
        a.functions.insert(vec![0], 4);
        assert_eq!(jaccard_distance(&a, &fs(&[&[0], &[1]])), 0.0);
    }

    #[test]
    fn medoid_examples() {
        assert_eq!(medoid_model(&[fs(&[&[0]])]).unwrap(), 0);
        let runs = [fs(&[&[0]]), fs(&[&[0]]), fs(&[&[1]])];
        assert_eq!(medoid_model(&runs).unwrap(), 0);
        assert!(medoid_model(&[]).is_err());
    }

    #[test]
    fn similarity_examples() {
        let same = vec![fs(&[&[0], &[1]]); 4];
        assert_eq!(mean_similarity_to_medoid(&same).unwrap(), 1.0);
        assert_eq!(mean_similarity_to_medoid(&[fs(&[&[0]]), fs(&[&[1]])]).unwrap(), 0.0);
        assert!(mean_similarity_to_medoid(&same[..1]).is_err());
    }

    #[test]
    fn summary_presence_and_complexity() {
        // one support in 1 of 50 runs with complexity 1
        let mut runs = vec![fs(&[&[0]]); 50];
        runs[7].functions.insert(vec![0, 1, 2, 4], 1);
        let s = summarize_ensemble(&runs).unwrap();
        assert_eq!(s.presence(&[0]), 1.0);
        let rare = s.get(&[0, 1, 2, 4]).unwrap();
        assert_eq!((rare.presence, rare.mean_complexity), (0.02, 1.0));
        assert_eq!(s.supports[0].support, vec![0]);
    }

    #[test]
    fn empty_run_only_counts_in_denominator() {
        let runs = [fs(&[&[0]]), FunctionSet::default()];
        let s = summarize_ensemble(&runs).unwrap();
        assert_eq!(s.n_runs, 2);
        assert_eq!(s.presence(&[0]), 0.5);
        assert_eq!(s.supports.len(), 1);
    }

    #[test]
    fn mean_complexity_is_conditional_on_presence() {
        let mut a = fs(&[&[3]]);
        a.functions.insert(vec![3], 4);
        let mut b = fs(&[&[3]]);
        b.functions.insert(vec![3], 3);
        let s = summarize_ensemble(&[a, b, FunctionSet::default()]).unwrap();
        assert_eq!(s.get(&[3]).unwrap().mean_complexity, 3.5);
    }

    #[test]
    fn function_set_json_round_trip() {
        let mut a = fs(&[&[0], &[1, 2]]);
        a.functions.insert(vec![0], 3);
        let text = serde_json::to_string(&a).unwrap();
        assert_eq!(text, "[[[0],3],[[1,2],1]]");
        assert_eq!(serde_json::from_str::<FunctionSet>(&text).unwrap(), a);
    }

    #[test]
    fn csv_layout() {
        let runs = [fs(&[&[0], &[1, 2]]), fs(&[&[0]])];
        let s = summarize_ensemble(&runs).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &["a".into(), "b".into(), "c".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "support,presence,mean_complexity\nf(a),1,1\n\"f(b,c)\",0.5,1\n");
    }
}
