use std::collections::{HashMap, HashSet};
use std::fmt::Debug;
use std::hash::Hash;
use std::time::Instant;

use serde::Serialize;

use crate::composition::FeatureTuple;
use crate::error::{Error, Result};
use crate::model::{Classifier, DistortionBudget, Input, NormKind, Oracle, Truth};
use crate::scalar::Scalar;

use super::enumerate::{search_pairs, tabulate, PerturbationBall, Tabulation, VerifierConfig, Witness, WitnessRecord};
use super::space::{DomainRecord, QuantizedSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TheoremVerdict {
    /// Hypotheses established and the composed classifier has no adversarial input.
    Holds,
    /// Hypotheses established yet the composed classifier has an adversarial input.
    Counterexample,
    /// A hypothesis of the theorem does not hold, so nothing is claimed.
    HypothesisFailed,
    BudgetExhausted,
}

/// Why the theorem's hypotheses do not hold for a pipeline.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HypothesisFailure {
    /// A first-stage extractor is not λ-resilient; carries its smallest witness.
    StageNotResilient {
        stage: usize,
        witnesses: usize,
        witness: WitnessRecord,
    },
    /// The second stage disagrees with its oracle on a feature tuple: either
    /// it mislabels a natural tuple or it emits a real label for a tuple that
    /// the oracle does not map there.
    StageTwoInexact { tuple: String, output: String, truth: String },
    /// Two feature tuples share a label under the second-stage oracle, so
    /// the oracle has no inverse.
    OracleNotInjective { first: String, second: String, label: String },
}

/// Result of checking one composition theorem on one finite domain.
#[derive(Clone, Debug, Serialize)]
pub struct TheoremReport {
    pub verdict: TheoremVerdict,
    pub stages: usize,
    pub hypothesis_failures: Vec<HypothesisFailure>,
    /// Adversarial pairs of the composed classifier that survive the
    /// hypothesis gate, smallest first. Non-empty iff the verdict is `COUNTEREXAMPLE`.
    pub counterexamples: Vec<WitnessRecord>,
    /// Adversarial pairs of the composed classifier, counted regardless of verdict.
    pub composed_witnesses: usize,
    /// Composed pairs that are not also an adversarial pair of some stage.
    /// The proof implies this is zero whenever the hypotheses hold.
    pub unexplained_witnesses: usize,
    /// Misclassified natural points of the composed classifier, showing the check is not vacuous.
    pub composed_incorrect: usize,
    pub points_examined: u64,
    pub elapsed_ms: f64,
    pub domain: DomainRecord,
    pub norm: NormKind,
    pub lambda: f64,
}

impl TheoremReport {
    pub fn holds(&self) -> bool {
        self.verdict == TheoremVerdict::Holds
    }
}

/// Checks Theorem-1 style serial composition `g(f(x))` on a finite domain.
///
/// The composed oracle is `o_g(o_f(x))`. Besides the resilience of `f`, the
/// proof needs the second stage to be exact with respect to its oracle and
/// the oracle to be injective (its inverse is the label catalog); both are
/// checked on every first-stage label that occurs on the domain and any
/// failure yields `HYPOTHESIS_FAILED` rather than a counterexample.
pub fn verify_serial_theorem<T, Y, Z, F, G, OF, OG>(
    f: &F,
    g: &G,
    o_f: &OF,
    o_g: &OG,
    space: &QuantizedSpace<T>,
    budget: &DistortionBudget<T>,
    cfg: &VerifierConfig,
) -> Result<TheoremReport>
where
    T: Scalar,
    Y: Clone + Eq + Hash + Debug + Send + Sync,
    Z: Clone + Eq + Hash + Debug + Send + Sync,
    F: Classifier<Input<T>, Output = Y> + ?Sized,
    G: Classifier<Y, Output = Z> + ?Sized,
    OF: Oracle<Input<T>, Label = Y> + ?Sized,
    OG: Oracle<Y, Label = Z> + ?Sized,
{
    let started = Instant::now();
    check_theorem(
        &[StageRef { f, o: o_f }],
        |t: &[Y]| g.classify(&t[0]),
        |t: &[Y]| o_g.truth(&t[0]),
        |t: &[Y]| format!("{:?}", t[0]),
        space,
        budget,
        cfg,
        started,
    )
}

/// Checks Theorem-2 style parallel composition `g(<f_1(x), ..., f_n(x)>)`
/// with composed oracle `o_g(<o_f1(x), ..., o_fn(x)>)`. With one stage the
/// report is identical to [`verify_serial_theorem`].
pub fn verify_parallel_theorem<T, Y, Z, F, G, OF, OG>(
    fs: &[F],
    g: &G,
    oracles: &[OF],
    o_g: &OG,
    space: &QuantizedSpace<T>,
    budget: &DistortionBudget<T>,
    cfg: &VerifierConfig,
) -> Result<TheoremReport>
where
    T: Scalar,
    Y: Clone + Eq + Hash + Debug + Send + Sync,
    Z: Clone + Eq + Hash + Debug + Send + Sync,
    F: Classifier<Input<T>, Output = Y>,
    G: Classifier<FeatureTuple<Y>, Output = Z> + ?Sized,
    OF: Oracle<Input<T>, Label = Y>,
    OG: Oracle<FeatureTuple<Y>, Label = Z> + ?Sized,
{
    let started = Instant::now();
    if fs.is_empty() || fs.len() != oracles.len() {
        return Err(Error::Config(format!(
            "parallel theorem needs one oracle per stage, got {} stages and {} oracles",
            fs.len(),
            oracles.len()
        )));
    }
    let stages: Vec<StageRef<'_, F, OF>> = fs.iter().zip(oracles).map(|(f, o)| StageRef { f, o }).collect();
    check_theorem(
        &stages,
        |t: &[Y]| g.classify(&FeatureTuple(t.to_vec())),
        |t: &[Y]| o_g.truth(&FeatureTuple(t.to_vec())),
        |t: &[Y]| format!("{t:?}"),
        space,
        budget,
        cfg,
        started,
    )
}

struct StageRef<'a, F: ?Sized, O: ?Sized> {
    f: &'a F,
    o: &'a O,
}

#[allow(clippy::too_many_arguments)]
fn check_theorem<T, Y, Z, F, OF>(
    stages: &[StageRef<'_, F, OF>],
    head: impl Fn(&[Y]) -> Z,
    head_truth: impl Fn(&[Y]) -> Truth<Z>,
    show: impl Fn(&[Y]) -> String,
    space: &QuantizedSpace<T>,
    budget: &DistortionBudget<T>,
    cfg: &VerifierConfig,
    started: Instant,
) -> Result<TheoremReport>
where
    T: Scalar,
    Y: Clone + Eq + Hash + Debug + Send + Sync,
    Z: Clone + Eq + Hash + Debug + Send + Sync,
    F: Classifier<Input<T>, Output = Y> + ?Sized,
    OF: Oracle<Input<T>, Label = Y> + ?Sized,
{
    let mut report = TheoremReport {
        verdict: TheoremVerdict::BudgetExhausted,
        stages: stages.len(),
        hypothesis_failures: Vec::new(),
        counterexamples: Vec::new(),
        composed_witnesses: 0,
        unexplained_witnesses: 0,
        composed_incorrect: 0,
        points_examined: 0,
        elapsed_ms: 0.0,
        domain: space.record(),
        norm: budget.norm,
        lambda: budget.lambda.as_f64(),
    };
    let outcome = (|| -> Result<()> {
        let ball = PerturbationBall::new(space, budget, cfg.cap)?;
        cfg.check(space.len() as u128 * ball.len() as u128 * (stages.len() as u128 + 1))?;

        let mut tabs = Vec::with_capacity(stages.len());
        let mut stage_witnesses = Vec::with_capacity(stages.len());
        for (i, s) in stages.iter().enumerate() {
            let tab = tabulate(s.f, s.o, space, cfg)?;
            let (ws, examined) = search_pairs(&tab, space, &ball, cfg)?;
            report.points_examined += examined;
            if let Some(first) = ws.first() {
                report.hypothesis_failures.push(HypothesisFailure::StageNotResilient {
                    stage: i,
                    witnesses: ws.len(),
                    witness: first.record(budget.norm),
                });
            }
            tabs.push(tab);
            stage_witnesses.push(ws.into_iter().map(|w| (w.point, w.offset)).collect::<HashSet<_>>());
        }

        report
            .hypothesis_failures
            .extend(stage_two_failures(&tabs, space.len(), &head, &head_truth, &show));

        let composed = compose_tables(&tabs, space.len(), &head, &head_truth);
        report.composed_incorrect = composed.incorrect_count();
        let (ws, examined) = search_pairs(&composed, space, &ball, cfg)?;
        report.points_examined += examined;
        report.composed_witnesses = ws.len();
        report.unexplained_witnesses = ws
            .iter()
            .filter(|w| {
                let key = (w.point.clone(), w.offset.clone());
                !stage_witnesses.iter().any(|s| s.contains(&key))
            })
            .count();

        if report.hypothesis_failures.is_empty() {
            report.counterexamples = ws.iter().map(|w: &Witness<T>| w.record(budget.norm)).collect();
            report.verdict = if ws.is_empty() {
                TheoremVerdict::Holds
            } else {
                TheoremVerdict::Counterexample
            };
        } else {
            report.verdict = TheoremVerdict::HypothesisFailed;
        }
        Ok(())
    })();
    match outcome {
        Ok(()) => {}
        Err(Error::BudgetExhausted { .. }) => report.verdict = TheoremVerdict::BudgetExhausted,
        Err(e) => return Err(e),
    }
    report.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn tuple_at<Y: Clone>(tabs: &[Tabulation<Y>], flat: usize) -> (Vec<Y>, Option<Vec<Y>>) {
    let outputs = tabs.iter().map(|t| t.outputs[flat].clone()).collect();
    let truths = tabs
        .iter()
        .map(|t| t.truths[flat].natural().cloned())
        .collect::<Option<Vec<Y>>>();
    (outputs, truths)
}

fn compose_tables<Y: Clone, Z>(
    tabs: &[Tabulation<Y>],
    len: usize,
    head: &impl Fn(&[Y]) -> Z,
    head_truth: &impl Fn(&[Y]) -> Truth<Z>,
) -> Tabulation<Z> {
    let mut outputs = Vec::with_capacity(len);
    let mut truths = Vec::with_capacity(len);
    for flat in 0..len {
        let (out, truth) = tuple_at(tabs, flat);
        outputs.push(head(&out));
        truths.push(match truth {
            Some(t) => head_truth(&t),
            None => Truth::Nonsense,
        });
    }
    Tabulation { outputs, truths }
}

/// Exactness and injectivity of the second stage over every tuple that the
/// extractors or their oracles produce on the domain.
fn stage_two_failures<Y, Z>(
    tabs: &[Tabulation<Y>],
    len: usize,
    head: &impl Fn(&[Y]) -> Z,
    head_truth: &impl Fn(&[Y]) -> Truth<Z>,
    show: &impl Fn(&[Y]) -> String,
) -> Vec<HypothesisFailure>
where
    Y: Clone + Eq + Hash + Debug,
    Z: Clone + Eq + Hash + Debug,
{
    let mut tuples: Vec<Vec<Y>> = Vec::new();
    let mut seen = HashSet::new();
    for flat in 0..len {
        let (out, truth) = tuple_at(tabs, flat);
        for t in std::iter::once(out).chain(truth) {
            if seen.insert(t.clone()) {
                tuples.push(t);
            }
        }
    }
    let truths: Vec<Truth<Z>> = tuples.iter().map(|t| head_truth(t)).collect();
    let range: HashSet<&Z> = truths.iter().filter_map(Truth::natural).collect();

    let mut failures = Vec::new();
    let mut owner: HashMap<&Z, usize> = HashMap::new();
    for (i, (t, truth)) in tuples.iter().zip(&truths).enumerate() {
        let out = head(t);
        let exact = match truth {
            Truth::Natural(z) => *z == out,
            Truth::Nonsense => !range.contains(&out),
        };
        if !exact {
            failures.push(HypothesisFailure::StageTwoInexact {
                tuple: show(t),
                output: format!("{out:?}"),
                truth: format!("{truth:?}"),
            });
        }
        if let Truth::Natural(z) = truth {
            if let Some(&j) = owner.get(z) {
                failures.push(HypothesisFailure::OracleNotInjective {
                    first: show(&tuples[j]),
                    second: show(t),
                    label: format!("{z:?}"),
                });
            } else {
                owner.insert(z, i);
            }
        }
    }
    failures
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::{DecisionOracle, DecisionTable};
    use crate::model::{LabelId, LabelSet};
    use crate::verifier::space::{GridOracle, GridTable};

    fn line_pipeline(f_table: Vec<usize>) -> (std::sync::Arc<QuantizedSpace<f64>>, GridTable<f64>, GridOracle<f64>) {
        let space = QuantizedSpace::uniform(1, 0.0, 5.0, 1.0).unwrap();
        let f = GridTable::new(
            space.clone(),
            f_table.into_iter().map(LabelId).collect(),
            LabelSet::numbered("y", 2),
        )
        .unwrap();
        let truths = [0, 0, 0, 1, 1, 1].iter().map(|l| Truth::Natural(LabelId(*l))).collect();
        let o = GridOracle::new(space.clone(), truths).unwrap();
        (space, f, o)
    }

    fn head(swap: bool) -> (DecisionTable, DecisionOracle) {
        let ys = LabelSet::numbered("y", 2);
        let zs = LabelSet::numbered("z", 3);
        let entries = vec![
            (FeatureTuple(vec![LabelId(0)]), LabelId(if swap { 1 } else { 0 })),
            (FeatureTuple(vec![LabelId(1)]), LabelId(1)),
        ];
        let oracle_entries = vec![
            (FeatureTuple(vec![LabelId(0)]), LabelId(0)),
            (FeatureTuple(vec![LabelId(1)]), LabelId(1)),
        ];
        (
            DecisionTable::new(vec![ys], zs, entries, LabelId(2)).unwrap(),
            DecisionOracle::new(oracle_entries),
        )
    }

    #[test]
    fn resilient_stage_gives_holds() {
        // The whole `0` region is mislabelled: no wrong point has a correct same-label neighbour.
        let (space, f, o) = line_pipeline(vec![1, 1, 1, 1, 1, 1]);
        let (g, og) = head(false);
        let budget = DistortionBudget::new(NormKind::L1, 1.0).unwrap();
        let r = verify_serial_theorem(&f, &g, &o, &og, &space, &budget, &VerifierConfig::default()).unwrap();
        assert_eq!(r.verdict, TheoremVerdict::Holds);
        assert_eq!(r.composed_incorrect, 3);
        assert_eq!(r.composed_witnesses, 0);
    }

    #[test]
    fn broken_stage_is_a_hypothesis_failure() {
        let (space, f, o) = line_pipeline(vec![0, 1, 0, 1, 1, 1]);
        let (g, og) = head(false);
        let budget = DistortionBudget::new(NormKind::L1, 1.0).unwrap();
        let r = verify_serial_theorem(&f, &g, &o, &og, &space, &budget, &VerifierConfig::default()).unwrap();
        assert_eq!(r.verdict, TheoremVerdict::HypothesisFailed);
        assert!(r.counterexamples.is_empty());
        match &r.hypothesis_failures[0] {
            HypothesisFailure::StageNotResilient { stage, witness, .. } => {
                assert_eq!(*stage, 0);
                assert_eq!(witness.point, vec![1]);
            }
            other => panic!("unexpected failure {other:?}"),
        }
        assert_eq!(r.unexplained_witnesses, 0);
    }

    #[test]
    fn inexact_second_stage_is_a_hypothesis_failure() {
        let (space, f, o) = line_pipeline(vec![0, 0, 0, 1, 1, 1]);
        let (g, og) = head(true);
        let budget = DistortionBudget::new(NormKind::L1, 1.0).unwrap();
        let r = verify_serial_theorem(&f, &g, &o, &og, &space, &budget, &VerifierConfig::default()).unwrap();
        assert_eq!(r.verdict, TheoremVerdict::HypothesisFailed);
        assert!(r
            .hypothesis_failures
            .iter()
            .any(|h| matches!(h, HypothesisFailure::StageTwoInexact { .. })));
    }

    #[test]
    fn one_stage_parallel_matches_serial() {
        let (space, f, o) = line_pipeline(vec![1, 1, 1, 0, 1, 1]);
        let (g, og) = head(false);
        let budget = DistortionBudget::new(NormKind::Linf, 2.0).unwrap();
        let cfg = VerifierConfig::default();
        let s = verify_serial_theorem(&f, &g, &o, &og, &space, &budget, &cfg).unwrap();
        let p = verify_parallel_theorem(
            std::slice::from_ref(&f),
            &g,
            std::slice::from_ref(&o),
            &og,
            &space,
            &budget,
            &cfg,
        )
        .unwrap();
        let strip = |r: &TheoremReport| {
            let mut v = serde_json::to_value(r).unwrap();
            v["elapsed_ms"] = serde_json::Value::Null;
            v
        };
        assert_eq!(strip(&s), strip(&p));
    }

    #[test]
    fn zero_budget_always_holds_for_exact_heads() {
        let (space, f, o) = line_pipeline(vec![0, 1, 0, 1, 0, 1]);
        let (g, og) = head(false);
        let budget = DistortionBudget::new(NormKind::L2, 0.0).unwrap();
        let r = verify_serial_theorem(&f, &g, &o, &og, &space, &budget, &VerifierConfig::default()).unwrap();
        assert_eq!(r.verdict, TheoremVerdict::Holds);
    }
}
