//! Serial and parallel composition of classifiers, and the label catalog
//! that ties every output label to the feature tuple describing it.
//!
//! The catalog direction (label to tuple) is the inverse oracle; the inverse
//! direction (tuple to the labels sharing it) is what the second stage of a
//! composed classifier evaluates to produce its candidate vector.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::hash::Hash;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Classifier, LabelId, LabelSet, Oracle, Truth};

/// Ordered outputs of the first-stage extractors for one input.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FeatureTuple<L>(pub Vec<L>);

impl<L> FeatureTuple<L> {
    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

impl<L> From<Vec<L>> for FeatureTuple<L> {
    fn from(v: Vec<L>) -> Self {
        FeatureTuple(v)
    }
}

/// How weight is spread over the set bits of a candidate vector.
///
/// Only equal weighting is implemented; contextual weightings would slot in
/// here as further variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Weighting {
    #[default]
    Equal,
}

/// Binary vector over the output labels: bit `i` set means label `i` is
/// consistent with the extracted features.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CandidateVector {
    bits: Vec<bool>,
    /// The extracted tuple is not in the catalog; all bits are clear.
    unknown: bool,
}

impl CandidateVector {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        CandidateVector {
            bits,
            unknown: false,
        }
    }

    pub fn from_labels(len: usize, labels: &[LabelId]) -> Self {
        let mut bits = vec![false; len];
        for l in labels {
            bits[l.0] = true;
        }
        Self::from_bits(bits)
    }

    pub fn unknown(len: usize) -> Self {
        CandidateVector {
            bits: vec![false; len],
            unknown: true,
        }
    }

    pub fn is_unknown(&self) -> bool {
        self.unknown
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_set(&self, label: LabelId) -> bool {
        self.bits.get(label.0).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn labels(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| LabelId(i))
    }

    /// Weights over the set bits, summing to one; all zero when nothing is set.
    pub fn weights(&self, weighting: Weighting) -> Vec<f64> {
        let k = self.count();
        match weighting {
            Weighting::Equal => self
                .bits
                .iter()
                .map(|b| if *b { 1.0 / k as f64 } else { 0.0 })
                .collect(),
        }
    }
}

/// Renders as `<1,0,0,...>`.
impl fmt::Display for CandidateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        for (i, b) in self.bits.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if *b { "1" } else { "0" })?;
        }
        f.write_str(">")
    }
}

const OUTPUT_NAMESPACE: &str = "output";

/// Catalog of output labels and their feature tuples, plus its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingTable {
    columns: Vec<String>,
    outputs: LabelSet,
    features: Vec<LabelSet>,
    catalog: Vec<FeatureTuple<LabelId>>,
    inverse: HashMap<FeatureTuple<LabelId>, Vec<LabelId>>,
}

fn check_name(name: &str, what: &str) -> Result<()> {
    if name.trim().is_empty() || name.trim() != name || name.contains([',', '\n', '\r']) {
        return Err(Error::Config(format!(
            "{what} `{name}` must be non-empty, without surrounding whitespace, commas or newlines"
        )));
    }
    Ok(())
}

/// Builds a catalog from `(label, feature names)` rows.
///
/// Feature label sets are collected per column in order of first appearance,
/// which makes the table a pure function of its rows.
pub fn build_mapping<S: AsRef<str>>(
    columns: &[S],
    rows: impl IntoIterator<Item = (String, Vec<String>)>,
) -> Result<MappingTable> {
    let columns: Vec<String> = columns.iter().map(|c| c.as_ref().to_string()).collect();
    for c in &columns {
        check_name(c, "column name")?;
    }
    let mut outputs = LabelSet::new(OUTPUT_NAMESPACE, Vec::<String>::new())?;
    let mut features: Vec<LabelSet> = columns
        .iter()
        .map(|c| LabelSet::new(c.clone(), Vec::<String>::new()))
        .collect::<Result<_>>()?;
    let mut catalog = Vec::new();
    let mut inverse: HashMap<FeatureTuple<LabelId>, Vec<LabelId>> = HashMap::new();
    for (label, feats) in rows {
        check_name(&label, "label")?;
        if feats.len() != columns.len() {
            return Err(Error::Config(format!(
                "label `{label}` has {} features, expected {}",
                feats.len(),
                columns.len()
            )));
        }
        let z = outputs.push(label)?;
        let mut tuple = Vec::with_capacity(feats.len());
        for (set, name) in features.iter_mut().zip(feats) {
            check_name(&name, "feature")?;
            let id = match set.id(&name) {
                Some(id) => id,
                None => set.push(name)?,
            };
            tuple.push(id);
        }
        let tuple = FeatureTuple(tuple);
        inverse.entry(tuple.clone()).or_default().push(z);
        catalog.push(tuple);
    }
    Ok(MappingTable {
        columns,
        outputs,
        features,
        catalog,
        inverse,
    })
}

impl MappingTable {
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn outputs(&self) -> &LabelSet {
        &self.outputs
    }

    pub fn feature_labels(&self, column: usize) -> &LabelSet {
        &self.features[column]
    }

    pub fn len(&self) -> usize {
        self.catalog.len()
    }

    pub fn is_empty(&self) -> bool {
        self.catalog.is_empty()
    }

    /// Feature tuple of an output label.
    pub fn catalog(&self, z: LabelId) -> Option<&FeatureTuple<LabelId>> {
        self.catalog.get(z.0)
    }

    /// Output labels sharing a feature tuple, ascending; empty when the tuple
    /// is not catalogued.
    pub fn inverse(&self, tuple: &FeatureTuple<LabelId>) -> &[LabelId] {
        self.inverse.get(tuple).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Looks a tuple up by feature names.
    pub fn tuple_of<S: AsRef<str>>(&self, names: &[S]) -> Option<FeatureTuple<LabelId>> {
        if names.len() != self.arity() {
            return None;
        }
        names
            .iter()
            .zip(&self.features)
            .map(|(n, set)| set.id(n.as_ref()))
            .collect::<Option<Vec<_>>>()
            .map(FeatureTuple)
    }

    pub fn tuple_names(&self, tuple: &FeatureTuple<LabelId>) -> Vec<&str> {
        tuple
            .0
            .iter()
            .zip(&self.features)
            .map(|(id, set)| set.name(*id).unwrap_or("?"))
            .collect()
    }

    pub fn candidate_vector(&self, tuple: &FeatureTuple<LabelId>, weighting: Weighting) -> CandidateVector {
        let Weighting::Equal = weighting;
        match self.inverse.get(tuple) {
            Some(labels) => CandidateVector::from_labels(self.len(), labels),
            None => CandidateVector::unknown(self.len()),
        }
    }

    /// Mean candidate-set size over the catalogued labels.
    pub fn selectivity(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let total: usize = self.catalog.iter().map(|t| self.inverse(t).len()).sum();
        Ok(total as f64 / self.len() as f64)
    }

    /// Sum of candidate-set sizes; `selectivity = total / len` exactly.
    pub fn candidate_total(&self) -> usize {
        self.catalog.iter().map(|t| self.inverse(t).len()).sum()
    }

    /// Keeps only the given feature columns, in the given order.
    pub fn project(&self, keep: &[usize]) -> Result<MappingTable> {
        let columns: Vec<&str> = keep
            .iter()
            .map(|&c| {
                self.columns
                    .get(c)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Config(format!("no column {c}")))
            })
            .collect::<Result<_>>()?;
        let rows = self.outputs.ids().map(|z| {
            let names = self.tuple_names(&self.catalog[z.0]);
            (
                self.outputs.name(z).unwrap().to_string(),
                keep.iter().map(|&c| names[c].to_string()).collect(),
            )
        });
        build_mapping(&columns, rows)
    }

    /// Catalog file text: a header naming the feature columns, then one
    /// `label, feature_1, ..., feature_n` row per label.
    pub fn to_text(&self) -> String {
        let mut out = String::from("label");
        for c in &self.columns {
            out.push_str(", ");
            out.push_str(c);
        }
        out.push('\n');
        for z in self.outputs.ids() {
            out.push_str(self.outputs.name(z).unwrap());
            for name in self.tuple_names(&self.catalog[z.0]) {
                out.push_str(", ");
                out.push_str(name);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MappingTable> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::CatalogParse {
            line: 1,
            message: "missing header row".into(),
        })?;
        let header: Vec<&str> = header.split(',').map(str::trim).collect();
        if header[0] != "label" {
            return Err(Error::CatalogParse {
                line: 1,
                message: format!("header must start with `label`, found `{}`", header[0]),
            });
        }
        let columns = &header[1..];
        let mut rows = Vec::new();
        let mut seen = HashMap::new();
        for (line, row) in lines {
            let cells: Vec<&str> = row.split(',').map(str::trim).collect();
            if cells.len() != header.len() {
                return Err(Error::CatalogParse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), cells.len()),
                });
            }
            if let Some(first) = seen.insert(cells[0].to_string(), line) {
                return Err(Error::CatalogParse {
                    line,
                    message: format!("label `{}` already defined on line {first}", cells[0]),
                });
            }
            rows.push((
                cells[0].to_string(),
                cells[1..].iter().map(|s| s.to_string()).collect(),
            ));
        }
        build_mapping(columns, rows).map_err(|e| Error::CatalogParse {
            line: 1,
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MappingTable> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

impl Classifier<FeatureTuple<LabelId>> for MappingTable {
    type Output = CandidateVector;

    fn classify(&self, tuple: &FeatureTuple<LabelId>) -> CandidateVector {
        self.candidate_vector(tuple, Weighting::Equal)
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.outputs)
    }

    fn input_labels(&self) -> Option<&[LabelSet]> {
        Some(&self.features)
    }
}

/// `g(f(x))`.
#[derive(Clone, Debug)]
pub struct Serial<F, G> {
    pub first: F,
    pub second: G,
}

/// `g(<f_1(x), ..., f_n(x)>)`.
#[derive(Clone, Debug)]
pub struct Parallel<F, G> {
    pub stages: Vec<F>,
    pub head: G,
}

fn check_disjoint(stage: &LabelSet, head: Option<&LabelSet>) -> Result<()> {
    if let Some(head) = head {
        if head.namespace() == stage.namespace() {
            return Err(Error::Config(format!(
                "stage and head share label namespace `{}`; label sets must be disjoint",
                head.namespace()
            )));
        }
    }
    Ok(())
}

pub fn serial_compose<X, F, G>(f: F, g: G) -> Result<Serial<F, G>>
where
    X: ?Sized,
    F: Classifier<X>,
    G: Classifier<F::Output>,
{
    if let (Some(produced), Some(accepted)) = (f.output_labels(), g.input_labels()) {
        if accepted.len() != 1 || !accepted[0].same_labels(produced) {
            return Err(Error::Config(format!(
                "second stage does not accept the label set `{}` produced by the first",
                produced.namespace()
            )));
        }
    }
    if let Some(produced) = f.output_labels() {
        check_disjoint(produced, g.output_labels())?;
    }
    Ok(Serial {
        first: f,
        second: g,
    })
}

pub fn parallel_compose<X, F, G>(stages: Vec<F>, head: G) -> Result<Parallel<F, G>>
where
    X: ?Sized,
    F: Classifier<X>,
    G: Classifier<FeatureTuple<F::Output>>,
{
    if stages.is_empty() {
        return Err(Error::Config("parallel composition needs at least one stage".into()));
    }
    if let Some(accepted) = head.input_labels() {
        if accepted.len() != stages.len() {
            return Err(Error::Config(format!(
                "head expects {}-tuples but {} stages were given",
                accepted.len(),
                stages.len()
            )));
        }
        for (i, (stage, set)) in stages.iter().zip(accepted).enumerate() {
            if let Some(produced) = stage.output_labels() {
                if !produced.same_labels(set) {
                    return Err(Error::Config(format!(
                        "stage {i} produces label set `{}` which the head does not accept at that position",
                        produced.namespace()
                    )));
                }
            }
        }
    }
    for stage in &stages {
        if let Some(produced) = stage.output_labels() {
            check_disjoint(produced, head.output_labels())?;
        }
    }
    Ok(Parallel { stages, head })
}

impl<X: ?Sized, F, G> Classifier<X> for Serial<F, G>
where
    F: Classifier<X>,
    G: Classifier<F::Output>,
{
    type Output = G::Output;

    fn classify(&self, x: &X) -> G::Output {
        self.second.classify(&self.first.classify(x))
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        self.second.output_labels()
    }
}

impl<F, G> Parallel<F, G> {
    pub fn features<X: ?Sized>(&self, x: &X) -> FeatureTuple<F::Output>
    where
        F: Classifier<X>,
    {
        FeatureTuple(self.stages.iter().map(|f| f.classify(x)).collect())
    }
}

impl<X: ?Sized, F, G> Classifier<X> for Parallel<F, G>
where
    F: Classifier<X>,
    G: Classifier<FeatureTuple<F::Output>>,
{
    type Output = G::Output;

    fn classify(&self, x: &X) -> G::Output {
        self.head.classify(&self.features(x))
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        self.head.output_labels()
    }
}

/// Second-stage decision table over label tuples.
///
/// Tuples outside the table go to `fallback`, which should be a label the
/// matching [`DecisionOracle`] never produces.
#[derive(Clone, Debug)]
pub struct DecisionTable {
    inputs: Vec<LabelSet>,
    outputs: LabelSet,
    map: HashMap<FeatureTuple<LabelId>, LabelId>,
    fallback: LabelId,
}

impl DecisionTable {
    pub fn new(
        inputs: Vec<LabelSet>,
        outputs: LabelSet,
        entries: impl IntoIterator<Item = (FeatureTuple<LabelId>, LabelId)>,
        fallback: LabelId,
    ) -> Result<Self> {
        if !outputs.contains(fallback) {
            return Err(Error::Config("fallback label not in output set".into()));
        }
        let mut map = HashMap::new();
        for (tuple, z) in entries {
            if tuple.arity() != inputs.len() || !outputs.contains(z) {
                return Err(Error::Config("decision entry does not fit the declared label sets".into()));
            }
            if map.insert(tuple, z).is_some() {
                return Err(Error::Config("decision table maps a tuple twice".into()));
            }
        }
        Ok(DecisionTable {
            inputs,
            outputs,
            map,
            fallback,
        })
    }

    pub fn get(&self, tuple: &FeatureTuple<LabelId>) -> LabelId {
        self.map.get(tuple).copied().unwrap_or(self.fallback)
    }
}

impl Classifier<FeatureTuple<LabelId>> for DecisionTable {
    type Output = LabelId;

    fn classify(&self, tuple: &FeatureTuple<LabelId>) -> LabelId {
        self.get(tuple)
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.outputs)
    }

    fn input_labels(&self) -> Option<&[LabelSet]> {
        Some(&self.inputs)
    }
}

impl Classifier<LabelId> for DecisionTable {
    type Output = LabelId;

    fn classify(&self, y: &LabelId) -> LabelId {
        self.get(&FeatureTuple(vec![*y]))
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.outputs)
    }

    fn input_labels(&self) -> Option<&[LabelSet]> {
        Some(&self.inputs)
    }
}

/// Ground truth of a second stage: the catalogued tuples map to their label,
/// everything else is nonsense.
#[derive(Clone, Debug)]
pub struct DecisionOracle {
    map: HashMap<FeatureTuple<LabelId>, LabelId>,
}

impl DecisionOracle {
    pub fn new(entries: impl IntoIterator<Item = (FeatureTuple<LabelId>, LabelId)>) -> Self {
        DecisionOracle {
            map: entries.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&FeatureTuple<LabelId>, &LabelId)> {
        self.map.iter()
    }
}

impl Oracle<FeatureTuple<LabelId>> for DecisionOracle {
    type Label = LabelId;

    fn truth(&self, tuple: &FeatureTuple<LabelId>) -> Truth<LabelId> {
        match self.map.get(tuple) {
            Some(z) => Truth::Natural(*z),
            None => Truth::Nonsense,
        }
    }
}

impl Oracle<LabelId> for DecisionOracle {
    type Label = LabelId;

    fn truth(&self, y: &LabelId) -> Truth<LabelId> {
        self.truth(&FeatureTuple(vec![*y]))
    }
}

/// Oracle of a serial composition: `O_G(O_F(x))`, nonsense propagating.
pub struct SerialOracle<OF, OG> {
    pub first: OF,
    pub second: OG,
}

impl<X: ?Sized, OF, OG> Oracle<X> for SerialOracle<OF, OG>
where
    OF: Oracle<X>,
    OG: Oracle<OF::Label>,
{
    type Label = OG::Label;

    fn truth(&self, x: &X) -> Truth<OG::Label> {
        match self.first.truth(x) {
            Truth::Natural(y) => self.second.truth(&y),
            Truth::Nonsense => Truth::Nonsense,
        }
    }
}

/// Oracle of a parallel composition: `O_G(<O_F1(x), ..., O_Fn(x)>)`.
pub struct ParallelOracle<OF, OG> {
    pub stages: Vec<OF>,
    pub head: OG,
}

impl<X: ?Sized, OF, OG> Oracle<X> for ParallelOracle<OF, OG>
where
    OF: Oracle<X>,
    OG: Oracle<FeatureTuple<OF::Label>>,
{
    type Label = OG::Label;

    fn truth(&self, x: &X) -> Truth<OG::Label> {
        let mut tuple = Vec::with_capacity(self.stages.len());
        for o in &self.stages {
            match o.truth(x) {
                Truth::Natural(y) => tuple.push(y),
                Truth::Nonsense => return Truth::Nonsense,
            }
        }
        self.head.truth(&FeatureTuple(tuple))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnClassifier;
    use proptest::prelude::*;

    fn signs() -> MappingTable {
        let rows = [
            ("Stop", "Red", "Octagon"),
            ("Yield", "Red", "Triangle"),
            ("Do Not Enter", "Red", "Circle"),
            ("Left Turn Ahead", "Yellow", "Diamond"),
            ("Right Turn Ahead", "Yellow", "Diamond"),
            ("No Pedestrians", "White", "Square"),
            ("Speed Limit 25", "White", "Rectangle"),
            ("Speed Limit 45", "White", "Rectangle"),
            ("Hospital", "Blue", "Square"),
        ];
        build_mapping(
            &["color", "shape"],
            rows.iter()
                .map(|(l, c, s)| (l.to_string(), vec![c.to_string(), s.to_string()])),
        )
        .unwrap()
    }

    /// Candidate-set sizes by brute force: count catalog rows with an
    /// identical feature tuple, by name.
    fn brute_force_candidate_total(rows: &[(String, Vec<String>)]) -> usize {
        rows.iter()
            .map(|(_, a)| rows.iter().filter(|(_, b)| a == b).count())
            .sum()
    }

    fn rows_of(m: &MappingTable) -> Vec<(String, Vec<String>)> {
        m.outputs()
            .ids()
            .map(|z| {
                (
                    m.outputs().name(z).unwrap().to_string(),
                    m.tuple_names(m.catalog(z).unwrap())
                        .into_iter()
                        .map(String::from)
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn inverse_groups_shared_tuples() {
        let m = signs();
        let names = |labels: &[LabelId]| -> Vec<&str> {
            labels.iter().map(|z| m.outputs().name(*z).unwrap()).collect()
        };
        let yd = m.tuple_of(&["Yellow", "Diamond"]).unwrap();
        assert_eq!(names(m.inverse(&yd)), ["Left Turn Ahead", "Right Turn Ahead"]);
        let ro = m.tuple_of(&["Red", "Octagon"]).unwrap();
        assert_eq!(names(m.inverse(&ro)), ["Stop"]);
        assert!(m.tuple_of(&["Red", "Pentagon"]).is_none());
    }

    #[test]
    fn empty_catalog_builds_but_has_no_selectivity() {
        let m = build_mapping(&["color"], Vec::new()).unwrap();
        assert!(m.is_empty());
        assert!(matches!(m.selectivity(), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let rows = vec![
            ("A".to_string(), vec!["x".to_string()]),
            ("A".to_string(), vec!["y".to_string()]),
        ];
        assert!(matches!(build_mapping(&["f"], rows), Err(Error::DuplicateLabel(_))));
    }

    #[test]
    fn candidate_vectors_for_listed_signs() {
        let m = signs();
        let cv = |c: &str, s: &str| m.candidate_vector(&m.tuple_of(&[c, s]).unwrap(), Weighting::Equal);
        assert_eq!(cv("Red", "Octagon").to_string(), "<1,0,0,0,0,0,0,0,0>");
        assert_eq!(cv("Yellow", "Diamond").to_string(), "<0,0,0,1,1,0,0,0,0>");
        assert_eq!(cv("Blue", "Square").to_string(), "<0,0,0,0,0,0,0,0,1>");
        assert_eq!(
            cv("Yellow", "Diamond").weights(Weighting::Equal),
            vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn uncatalogued_tuple_is_flagged() {
        let m = signs();
        let red = m.feature_labels(0).id("Red").unwrap();
        let diamond = m.feature_labels(1).id("Diamond").unwrap();
        let cv = m.candidate_vector(&FeatureTuple(vec![red, diamond]), Weighting::Equal);
        assert!(cv.is_unknown());
        assert_eq!(cv.count(), 0);
    }

    #[test]
    fn selectivity_of_sign_catalogs() {
        let m = signs();
        let total = brute_force_candidate_total(&rows_of(&m));
        assert_eq!(total, 13);
        assert_eq!(m.candidate_total(), 13);
        assert!((m.selectivity().unwrap() - 13.0 / 9.0).abs() < 1e-15);
        let color_only = m.project(&[0]).unwrap();
        assert_eq!(brute_force_candidate_total(&rows_of(&color_only)), 23);
        assert!(color_only.selectivity().unwrap() > m.selectivity().unwrap());
    }

    #[test]
    fn unique_tuples_give_selectivity_one() {
        let m = build_mapping(
            &["f"],
            (0..5).map(|i| (format!("z{i}"), vec![format!("y{i}")])),
        )
        .unwrap();
        assert_eq!(m.selectivity().unwrap(), 1.0);
    }

    #[test]
    fn catalog_text_round_trip() {
        let m = signs();
        let text = m.to_text();
        assert!(text.starts_with("label, color, shape\nStop, Red, Octagon\n"));
        let back = MappingTable::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn catalog_parse_errors_carry_line_numbers() {
        let err = MappingTable::from_text("label, color\nStop, Red\nYield\n").unwrap_err();
        assert!(matches!(err, Error::CatalogParse { line: 3, .. }), "{err}");
        let err = MappingTable::from_text("label, color\nStop, Red\nStop, Blue\n").unwrap_err();
        assert!(matches!(err, Error::CatalogParse { line: 3, .. }), "{err}");
        let err = MappingTable::from_text("name, color\n").unwrap_err();
        assert!(matches!(err, Error::CatalogParse { line: 1, .. }));
    }

    #[test]
    fn serial_composition_evaluates_pointwise() {
        // Colour by input index, then a colour to sign-class table.
        let colors = [0usize, 1, 0];
        let f = FnClassifier(move |x: &usize| colors[*x]);
        let g = FnClassifier(|c: &usize| ["regulatory", "warning"][*c]);
        let r = serial_compose(f, g).unwrap();
        let composed: Vec<_> = (0..3).map(|x| r.classify(&x)).collect();
        assert_eq!(composed, ["regulatory", "warning", "regulatory"]);

        let constant = serial_compose(FnClassifier(|_: &usize| 7u8), FnClassifier(|v: &u8| v * 2)).unwrap();
        assert!((0..10).all(|x| constant.classify(&x) == 14));
    }

    #[test]
    fn serial_identity_first_stage_equals_second() {
        let g = FnClassifier(|v: &u8| v.wrapping_mul(31) % 7);
        let r = serial_compose(FnClassifier(|v: &u8| *v), FnClassifier(|v: &u8| v.wrapping_mul(31) % 7)).unwrap();
        assert!((0..=255u8).all(|v| r.classify(&v) == g.classify(&v)));
    }

    #[test]
    fn serial_compose_rejects_mismatched_label_sets() {
        let ys = LabelSet::numbered("y", 3);
        let other = LabelSet::numbered("y2", 4);
        let zs = LabelSet::numbered("z", 2);
        struct Stage(LabelSet);
        impl Classifier<u8> for Stage {
            type Output = LabelId;
            fn classify(&self, x: &u8) -> LabelId {
                LabelId(*x as usize % self.0.len())
            }
            fn output_labels(&self) -> Option<&LabelSet> {
                Some(&self.0)
            }
        }
        let g = DecisionTable::new(vec![other], zs.clone(), Vec::new(), LabelId(0)).unwrap();
        assert!(matches!(serial_compose(Stage(ys.clone()), g), Err(Error::Config(_))));
        let g = DecisionTable::new(vec![ys.clone()], zs, Vec::new(), LabelId(0)).unwrap();
        assert!(serial_compose(Stage(ys.clone()), g).is_ok());
        // Same namespace for stage and head violates disjointness.
        let g = DecisionTable::new(vec![ys.clone()], LabelSet::numbered("y", 2), Vec::new(), LabelId(0)).unwrap();
        assert!(matches!(serial_compose(Stage(ys), g), Err(Error::Config(_))));
    }

    #[test]
    fn parallel_of_one_matches_serial() {
        let stage = |x: &u32| (x % 5) as u8;
        let head = |y: &u8| (*y as u32) * 3 + 1;
        let p = parallel_compose(
            vec![FnClassifier(stage)],
            FnClassifier(move |t: &FeatureTuple<u8>| head(&t.0[0])),
        )
        .unwrap();
        let s = serial_compose(FnClassifier(stage), FnClassifier(head)).unwrap();
        assert!((0..100).all(|x| p.classify(&x) == s.classify(&x)));
    }

    #[test]
    fn parallel_compose_checks_arity() {
        let head = DecisionTable::new(
            vec![LabelSet::numbered("a", 2), LabelSet::numbered("b", 2)],
            LabelSet::numbered("z", 1),
            Vec::new(),
            LabelId(0),
        )
        .unwrap();
        let stages = vec![FnClassifier(|_: &u8| LabelId(0))];
        assert!(matches!(parallel_compose(stages, head), Err(Error::Config(_))));
        let empty: Vec<FnClassifier<fn(&u8) -> LabelId>> = Vec::new();
        let head = FnClassifier(|_: &FeatureTuple<LabelId>| 0u8);
        assert!(parallel_compose(empty, head).is_err());
    }

    proptest! {
        #[test]
        fn permuting_stages_with_permuted_head_is_invariant(
            tables in proptest::collection::vec(proptest::collection::vec(0u8..4, 16), 3),
            perm_seed in 0usize..6,
        ) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = perms[perm_seed];
            let head = |t: &[u8]| t[0] as u32 * 100 + t[1] as u32 * 10 + t[2] as u32;
            let stages: Vec<_> = tables.iter().cloned().map(|t| FnClassifier(move |x: &usize| t[*x])).collect();
            let base = parallel_compose(stages, FnClassifier(move |t: &FeatureTuple<u8>| head(&t.0))).unwrap();
            let permuted_stages: Vec<_> = perm.iter().map(|&i| {
                let t = tables[i].clone();
                FnClassifier(move |x: &usize| t[*x])
            }).collect();
            let permuted = parallel_compose(permuted_stages, FnClassifier(move |t: &FeatureTuple<u8>| {
                let mut original = [0u8; 3];
                for (pos, &i) in perm.iter().enumerate() {
                    original[i] = t.0[pos];
                }
                head(&original)
            })).unwrap();
            for x in 0..16 {
                prop_assert_eq!(base.classify(&x), permuted.classify(&x));
            }
        }

        #[test]
        fn catalog_round_trip_and_soundness(
            rows in proptest::collection::vec((0u8..3, 0u8..3, 0u8..2), 1..12),
        ) {
            let rows: Vec<(String, Vec<String>)> = rows.iter().enumerate()
                .map(|(i, (a, b, c))| (format!("L{i}"), vec![format!("a{a}"), format!("b{b}"), format!("c{c}")]))
                .collect();
            let m = build_mapping(&["a", "b", "c"], rows.clone()).unwrap();
            prop_assert_eq!(MappingTable::from_text(&m.to_text()).unwrap(), m.clone());
            for z in m.outputs().ids() {
                let t = m.catalog(z).unwrap();
                prop_assert!(m.inverse(t).contains(&z));
                prop_assert!(m.candidate_vector(t, Weighting::Equal).is_set(z));
            }
            prop_assert_eq!(m.candidate_total(), brute_force_candidate_total(&rows));
            // Adding a column never makes candidate sets larger.
            for keep in [vec![0], vec![1], vec![0, 1], vec![1, 2]] {
                let fewer = m.project(&keep).unwrap();
                prop_assert!(fewer.selectivity().unwrap() >= m.selectivity().unwrap());
            }
        }
    }
}
