//! Seeded random pipelines for checking the composition theorems in bulk.
//!
//! Each pipeline draws a small quantized space, a patchy ground-truth
//! labelling per extractor, an extractor table that is λ-resilient by
//! construction (then repaired until exhaustive search agrees), and an exact
//! injective second stage with a reject label for unknown tuples.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::composition::{DecisionOracle, DecisionTable, FeatureTuple};
use crate::error::Result;
use crate::model::{DistortionBudget, LabelId, LabelSet, NormKind, Truth};

use super::enumerate::{search_pairs, tabulate, PerturbationBall, VerifierConfig};
use super::space::{Axis, GridOracle, GridTable, QuantizedSpace};
use super::theorem::{verify_parallel_theorem, verify_serial_theorem, HypothesisFailure, TheoremReport, TheoremVerdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CampaignKind {
    Serial,
    Parallel,
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignConfig {
    pub kind: CampaignKind,
    pub pipelines: usize,
    pub seed: u64,
    /// Stage counts drawn uniformly for parallel campaigns.
    pub arities: Vec<usize>,
    pub max_points: usize,
    /// Plant an adversarial witness in one extractor of every pipeline.
    pub broken: bool,
}

impl CampaignConfig {
    pub fn serial(pipelines: usize, seed: u64) -> Self {
        CampaignConfig {
            kind: CampaignKind::Serial,
            pipelines,
            seed,
            arities: vec![1],
            max_points: 10_000,
            broken: false,
        }
    }

    pub fn parallel(pipelines: usize, seed: u64) -> Self {
        CampaignConfig {
            kind: CampaignKind::Parallel,
            arities: vec![2, 3],
            ..Self::serial(pipelines, seed)
        }
    }

    pub fn broken(mut self) -> Self {
        self.broken = true;
        self
    }
}

/// One generated pipeline: a domain, extractors with their oracles, and the
/// second stage with its oracle.
pub struct RandomPipeline {
    pub space: Arc<QuantizedSpace<f64>>,
    pub budget: DistortionBudget<f64>,
    pub stages: Vec<GridTable<f64>>,
    pub oracles: Vec<GridOracle<f64>>,
    pub head: DecisionTable,
    pub head_oracle: DecisionOracle,
    pub broken_stage: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineOutcome {
    pub index: usize,
    pub stages: usize,
    pub points: usize,
    pub norm: NormKind,
    pub lambda: f64,
    pub verdict: TheoremVerdict,
    pub composed_incorrect: usize,
    pub broken_stage: Option<usize>,
    /// The planted stage was reported non-resilient with a concrete witness.
    pub broken_witnessed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignReport {
    pub kind: CampaignKind,
    pub seed: u64,
    pub pipelines: usize,
    pub holds: usize,
    pub counterexamples: usize,
    pub hypothesis_failures: usize,
    pub budget_exhausted: usize,
    pub broken_planted: usize,
    pub broken_witnessed: usize,
    /// Pipelines whose composed classifier misclassifies at least one point.
    pub nonvacuous: usize,
    pub unexplained_witnesses: usize,
    pub points_examined: u64,
    pub elapsed_ms: f64,
    pub first_counterexample: Option<TheoremReport>,
    pub outcomes: Vec<PipelineOutcome>,
}

pub fn run_campaign(cfg: &CampaignConfig, verifier: &VerifierConfig) -> Result<CampaignReport> {
    let started = Instant::now();
    let inner = VerifierConfig {
        cap: verifier.cap,
        workers: None,
    };
    let results: Vec<Result<(PipelineOutcome, TheoremReport)>> = verifier.run(|| {
        (0..cfg.pipelines)
            .into_par_iter()
            .map(|i| run_one(cfg, i, &inner))
            .collect()
    });
    let mut report = CampaignReport {
        kind: cfg.kind,
        seed: cfg.seed,
        pipelines: cfg.pipelines,
        holds: 0,
        counterexamples: 0,
        hypothesis_failures: 0,
        budget_exhausted: 0,
        broken_planted: 0,
        broken_witnessed: 0,
        nonvacuous: 0,
        unexplained_witnesses: 0,
        points_examined: 0,
        elapsed_ms: 0.0,
        first_counterexample: None,
        outcomes: Vec::with_capacity(cfg.pipelines),
    };
    for r in results {
        let (outcome, theorem) = r?;
        match theorem.verdict {
            TheoremVerdict::Holds => report.holds += 1,
            TheoremVerdict::Counterexample => {
                report.counterexamples += 1;
                if report.first_counterexample.is_none() {
                    report.first_counterexample = Some(theorem.clone());
                }
            }
            TheoremVerdict::HypothesisFailed => report.hypothesis_failures += 1,
            TheoremVerdict::BudgetExhausted => report.budget_exhausted += 1,
        }
        report.broken_planted += outcome.broken_stage.is_some() as usize;
        report.broken_witnessed += outcome.broken_witnessed as usize;
        report.nonvacuous += (theorem.composed_incorrect > 0) as usize;
        report.unexplained_witnesses += theorem.unexplained_witnesses;
        report.points_examined += theorem.points_examined;
        report.outcomes.push(outcome);
    }
    report.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn run_one(cfg: &CampaignConfig, index: usize, verifier: &VerifierConfig) -> Result<(PipelineOutcome, TheoremReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let arity = *cfg.arities.choose(&mut rng).unwrap_or(&1);
    let p = random_pipeline(&mut rng, arity, cfg.max_points, cfg.broken, verifier)?;
    let theorem = if cfg.kind == CampaignKind::Serial && arity == 1 {
        verify_serial_theorem::<_, LabelId, LabelId, _, _, _, _>(
            &p.stages[0],
            &p.head,
            &p.oracles[0],
            &p.head_oracle,
            &p.space,
            &p.budget,
            verifier,
        )?
    } else {
        verify_parallel_theorem(&p.stages, &p.head, &p.oracles, &p.head_oracle, &p.space, &p.budget, verifier)?
    };
    let broken_witnessed = p.broken_stage.is_some_and(|b| {
        theorem
            .hypothesis_failures
            .iter()
            .any(|h| matches!(h, HypothesisFailure::StageNotResilient { stage, .. } if *stage == b))
    });
    Ok((
        PipelineOutcome {
            index,
            stages: arity,
            points: p.space.len(),
            norm: p.budget.norm,
            lambda: p.budget.lambda,
            verdict: theorem.verdict,
            composed_incorrect: theorem.composed_incorrect,
            broken_stage: p.broken_stage,
            broken_witnessed,
        },
        theorem,
    ))
}

fn random_space(rng: &mut ChaCha8Rng, max_points: usize) -> Result<Arc<QuantizedSpace<f64>>> {
    let dims = rng.gen_range(1..=3usize);
    let per_axis = (max_points as f64).powf(1.0 / dims as f64).floor().max(3.0) as usize;
    let max_levels = per_axis.min(match dims {
        1 => 400,
        2 => 60,
        _ => 21,
    });
    let axes = (0..dims)
        .map(|_| {
            let levels = rng.gen_range(3..=max_levels);
            let step = 0.5f64.powi(rng.gen_range(0..=3));
            let lo = -step * rng.gen_range(0..=2) as f64;
            Axis::new(lo, lo + step * (levels - 1) as f64, step)
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedSpace::new(axes)
}

/// Patchy ground truth: nearest of a few labelled centres (some nonsense),
/// plus sparse per-point noise.
fn random_oracle(rng: &mut ChaCha8Rng, space: &Arc<QuantizedSpace<f64>>, labels: usize) -> Result<GridOracle<f64>> {
    let draw = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.15) {
            Truth::Nonsense
        } else {
            Truth::Natural(LabelId(rng.gen_range(0..labels)))
        }
    };
    let centres: Vec<(Vec<usize>, Truth<LabelId>)> = (0..rng.gen_range(2..=6))
        .map(|_| (space.coords(rng.gen_range(0..space.len())), draw(rng)))
        .collect();
    let truths = (0..space.len())
        .map(|flat| {
            if rng.gen_bool(0.05) {
                return draw(rng);
            }
            let c = space.coords(flat);
            centres
                .iter()
                .min_by_key(|(centre, _)| centre.iter().zip(&c).map(|(a, b)| a.abs_diff(*b)).sum::<usize>())
                .map(|(_, t)| t.clone())
                .expect("at least one centre")
        })
        .collect();
    GridOracle::new(space.clone(), truths)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// A λ-resilient extractor table for `oracle`: whole same-label components
/// (under λ-ball adjacency) are either labelled correctly or entirely
/// wrongly, then stray errors are sprinkled and repaired until exhaustive
/// search finds no adversarial pair.
fn resilient_table(
    rng: &mut ChaCha8Rng,
    space: &Arc<QuantizedSpace<f64>>,
    oracle: &GridOracle<f64>,
    label_set: &LabelSet,
    ball: &PerturbationBall,
    verifier: &VerifierConfig,
) -> Result<GridTable<f64>> {
    let n = label_set.len();
    let truths = oracle.truths();
    let mut parent: Vec<usize> = (0..space.len()).collect();
    for flat in 0..space.len() {
        if !truths[flat].is_natural() {
            continue;
        }
        let coords = space.coords(flat);
        for off in ball.offsets() {
            let other = space.shifted(&coords, off);
            if truths[other] == truths[flat] {
                let (a, b) = (find(&mut parent, flat), find(&mut parent, other));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let wrong_component: Vec<bool> = (0..space.len()).map(|_| rng.gen_bool(0.35)).collect();
    let mut labels = Vec::with_capacity(space.len());
    for flat in 0..space.len() {
        let root = find(&mut parent, flat);
        let label = match &truths[flat] {
            Truth::Natural(y) if wrong_component[root] => LabelId((y.0 + rng.gen_range(1..n)) % n),
            Truth::Natural(y) if rng.gen_bool(0.03) => LabelId((y.0 + rng.gen_range(1..n)) % n),
            Truth::Natural(y) => *y,
            Truth::Nonsense => LabelId(rng.gen_range(0..n)),
        };
        labels.push(label);
    }
    let mut table = GridTable::new(space.clone(), labels, label_set.clone())?;
    loop {
        let tab = tabulate(&table, oracle, space, verifier)?;
        let (witnesses, _) = search_pairs(&tab, space, ball, verifier)?;
        if witnesses.is_empty() {
            return Ok(table);
        }
        for w in witnesses {
            let flat = space.flat(&w.point);
            if let Truth::Natural(y) = &truths[flat] {
                table.set(flat, *y);
            }
        }
    }
}

/// Makes `table` non-resilient: some natural point becomes wrong while a
/// same-label neighbour within the ball is made correct.
fn plant_witness(
    rng: &mut ChaCha8Rng,
    space: &QuantizedSpace<f64>,
    table: &mut GridTable<f64>,
    oracle: &GridOracle<f64>,
    ball: &PerturbationBall,
    labels: usize,
) -> bool {
    let truths = oracle.truths();
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.shuffle(rng);
    for flat in order {
        let Truth::Natural(y) = truths[flat] else { continue };
        let coords = space.coords(flat);
        for off in ball.offsets() {
            let other = space.shifted(&coords, off);
            if other != flat && truths[other] == truths[flat] {
                table.set(other, y);
                table.set(flat, LabelId((y.0 + rng.gen_range(1..labels)) % labels));
                return true;
            }
        }
    }
    false
}

/// Second stage: an injective catalog from a random subset of tuples onto
/// fresh labels, with every other tuple sent to a reject label the oracle
/// never produces.
fn random_head(rng: &mut ChaCha8Rng, inputs: Vec<LabelSet>) -> Result<(DecisionTable, DecisionOracle)> {
    let mut tuples: Vec<Vec<LabelId>> = vec![Vec::new()];
    for set in &inputs {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                set.ids().map(move |y| {
                    let mut t = t.clone();
                    t.push(y);
                    t
                })
            })
            .collect();
    }
    tuples.shuffle(rng);
    let keep = rng.gen_range(tuples.len().div_ceil(2)..=tuples.len());
    let mut ids: Vec<usize> = (0..keep).collect();
    ids.shuffle(rng);
    let entries: Vec<(FeatureTuple<LabelId>, LabelId)> = tuples
        .into_iter()
        .take(keep)
        .zip(ids)
        .map(|(t, z)| (FeatureTuple(t), LabelId(z)))
        .collect();
    let outputs = LabelSet::new("z", (0..keep).map(|i| format!("z{i}")).chain(["reject".to_string()]))?;
    let table = DecisionTable::new(inputs, outputs, entries.clone(), LabelId(keep))?;
    Ok((table, DecisionOracle::new(entries)))
}

pub fn random_pipeline(
    rng: &mut ChaCha8Rng,
    arity: usize,
    max_points: usize,
    broken: bool,
    verifier: &VerifierConfig,
) -> Result<RandomPipeline> {
    let space = random_space(rng, max_points)?;
    let min_step = space.axes().iter().map(|a| a.step).fold(f64::INFINITY, f64::min);
    let norm = *[NormKind::L1, NormKind::L2, NormKind::Linf].choose(rng).expect("non-empty");
    let multiple = if broken { rng.gen_range(1..=2) } else { rng.gen_range(0..=2) };
    let budget = DistortionBudget::new(norm, min_step * multiple as f64)?;
    let ball = PerturbationBall::new(&space, &budget, verifier.cap)?;

    let mut stages = Vec::with_capacity(arity);
    let mut oracles = Vec::with_capacity(arity);
    let mut sets = Vec::with_capacity(arity);
    for i in 0..arity {
        let n = rng.gen_range(2..=4);
        let set = LabelSet::numbered(format!("y{i}"), n);
        let oracle = random_oracle(rng, &space, n)?;
        stages.push(resilient_table(rng, &space, &oracle, &set, &ball, verifier)?);
        oracles.push(oracle);
        sets.push(set);
    }
    let mut broken_stage = None;
    if broken {
        let b = rng.gen_range(0..arity);
        if plant_witness(rng, &space, &mut stages[b], &oracles[b], &ball, sets[b].len()) {
            broken_stage = Some(b);
        }
    }
    let (head, head_oracle) = random_head(rng, sets)?;
    Ok(RandomPipeline {
        space,
        budget,
        stages,
        oracles,
        head,
        head_oracle,
        broken_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::enumerate::enumerate_adversarial_set;

    #[test]
    fn generated_stages_are_resilient_and_not_trivial() {
        let verifier = VerifierConfig::default();
        let mut wrong = 0;
        for i in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let p = random_pipeline(&mut rng, 2, 2_000, false, &verifier).unwrap();
            assert!(p.space.len() <= 2_000);
            for (f, o) in p.stages.iter().zip(&p.oracles) {
                assert!(enumerate_adversarial_set(f, o, &p.space, &p.budget, &verifier).unwrap().is_empty());
                wrong += tabulate(f, o, &p.space, &verifier).unwrap().incorrect_count();
            }
        }
        assert!(wrong > 0);
    }

    #[test]
    fn planted_witness_breaks_resilience() {
        let verifier = VerifierConfig::default();
        for i in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
            let p = random_pipeline(&mut rng, 1, 2_000, true, &verifier).unwrap();
            let b = p.broken_stage.expect("planted");
            assert!(!enumerate_adversarial_set(&p.stages[b], &p.oracles[b], &p.space, &p.budget, &verifier)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn small_campaigns_hold_and_are_deterministic() {
        let cfg = CampaignConfig {
            max_points: 1_000,
            ..CampaignConfig::parallel(12, 9)
        };
        let a = run_campaign(&cfg, &VerifierConfig::default().with_workers(1)).unwrap();
        let b = run_campaign(&cfg, &VerifierConfig::default().with_workers(3)).unwrap();
        assert_eq!(a.counterexamples, 0);
        assert_eq!(a.unexplained_witnesses, 0);
        assert_eq!(a.holds, 12);
        let strip = |r: &CampaignReport| {
            let mut v = serde_json::to_value(r).unwrap();
            v["elapsed_ms"] = serde_json::Value::Null;
            v
        };
        assert_eq!(strip(&a), strip(&b));
    }
}
