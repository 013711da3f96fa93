use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{key_to_norm, norm_key, Classifier, DistortionBudget, Input, NormKind, Oracle, Truth};
use crate::scalar::Scalar;

use super::space::{DomainRecord, QuantizedSpace};

/// Limits and parallelism for exhaustive search.
#[derive(Clone, Debug, Serialize)]
pub struct VerifierConfig {
    /// Maximum number of `(x, gamma)` pairs (or point evaluations) one search may examine.
    pub cap: u128,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            cap: 100_000_000,
            workers: None,
        }
    }
}

impl VerifierConfig {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers.max(1));
        self
    }

    pub(crate) fn run<R: Send>(&self, job: impl FnOnce() -> R + Send) -> R {
        match self.workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("failed to build worker pool")
                .install(job),
            None => job(),
        }
    }

    pub(crate) fn check(&self, required: u128) -> Result<()> {
        if required > self.cap {
            return Err(Error::BudgetExhausted {
                required,
                cap: self.cap,
            });
        }
        Ok(())
    }
}

/// Grid offsets (in steps per axis) whose distortion lies in the budget,
/// sorted lexicographically. Includes the zero offset.
#[derive(Clone, Debug)]
pub struct PerturbationBall {
    offsets: Vec<Vec<i64>>,
}

impl PerturbationBall {
    pub fn new<T: Scalar>(space: &QuantizedSpace<T>, budget: &DistortionBudget<T>, limit: u128) -> Result<Self> {
        let steps: Vec<T> = space.axes().iter().map(|a| a.step.clone()).collect();
        let key_limit = budget.key_limit();
        let mut offsets = Vec::new();
        let mut current = vec![0i64; steps.len()];
        let mut contributions = vec![T::zero(); steps.len()];
        collect_ball(
            &steps,
            budget.norm,
            &key_limit,
            0,
            T::zero(),
            &mut current,
            &mut contributions,
            &mut offsets,
            limit,
        )?;
        Ok(PerturbationBall { offsets })
    }

    pub fn offsets(&self) -> &[Vec<i64>] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

fn combine<T: Scalar>(norm: NormKind, acc: &T, part: &T) -> T {
    match norm {
        NormKind::Linf => T::max_of(acc.clone(), part.clone()),
        _ => acc.clone() + part.clone(),
    }
}

fn contribution<T: Scalar>(norm: NormKind, step: &T, k: i64) -> T {
    let v = step.clone() * T::from_i64(k).expect("offset fits scalar");
    match norm {
        NormKind::L2 => v.clone() * v,
        _ => v.abs(),
    }
}

/// Depth-first walk over the axes, pruning as soon as the partial norm key
/// passes the limit. Per-axis offsets are visited in increasing order so the
/// output is lexicographically sorted.
#[allow(clippy::too_many_arguments)]
fn collect_ball<T: Scalar>(
    steps: &[T],
    norm: NormKind,
    limit: &T,
    axis: usize,
    partial: T,
    current: &mut Vec<i64>,
    contributions: &mut Vec<T>,
    out: &mut Vec<Vec<i64>>,
    cap: u128,
) -> Result<()> {
    if axis == steps.len() {
        if out.len() as u128 >= cap {
            return Err(Error::BudgetExhausted {
                required: cap + 1,
                cap,
            });
        }
        out.push(current.clone());
        return Ok(());
    }
    let mut reach = 0i64;
    while combine(norm, &partial, &contribution(norm, &steps[axis], reach + 1)) <= *limit {
        reach += 1;
    }
    for k in -reach..=reach {
        let next = combine(norm, &partial, &contribution(norm, &steps[axis], k));
        if next > *limit {
            continue;
        }
        current[axis] = k;
        contributions[axis] = next.clone();
        collect_ball(steps, norm, limit, axis + 1, next, current, contributions, out, cap)?;
    }
    current[axis] = 0;
    Ok(())
}

/// Outputs and oracle truths of a classifier on every grid point.
#[derive(Clone, Debug)]
pub struct Tabulation<L> {
    pub outputs: Vec<L>,
    pub truths: Vec<Truth<L>>,
}

impl<L: Clone + Eq> Tabulation<L> {
    pub fn is_incorrect(&self, flat: usize) -> bool {
        matches!(&self.truths[flat], Truth::Natural(l) if *l != self.outputs[flat])
    }

    pub fn is_correct(&self, flat: usize) -> bool {
        matches!(&self.truths[flat], Truth::Natural(l) if *l == self.outputs[flat])
    }

    pub fn incorrect_count(&self) -> usize {
        (0..self.outputs.len()).filter(|i| self.is_incorrect(*i)).count()
    }
}

pub fn tabulate<T, F, O>(f: &F, o: &O, space: &QuantizedSpace<T>, cfg: &VerifierConfig) -> Result<Tabulation<F::Output>>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
    O: Oracle<Input<T>, Label = F::Output> + ?Sized,
{
    cfg.check(space.len() as u128)?;
    let rows: Vec<(F::Output, Truth<F::Output>)> = cfg.run(|| {
        (0..space.len())
            .into_par_iter()
            .map(|i| {
                let x = space.point(i);
                (f.classify(&x), o.truth(&x))
            })
            .collect()
    });
    let (outputs, truths) = rows.into_iter().unzip();
    Ok(Tabulation { outputs, truths })
}

/// `(x, gamma)` pair satisfying the λ-adversarial predicate, located on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness<T> {
    /// Grid coordinates of the adversarial (misclassified) point.
    pub point: Vec<usize>,
    /// Distortion in grid steps per axis.
    pub offset: Vec<i64>,
    pub x: Vec<T>,
    pub gamma: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessRecord {
    pub point: Vec<usize>,
    pub offset: Vec<i64>,
    pub x: Vec<f64>,
    pub gamma: Vec<f64>,
    pub norm: f64,
}

impl<T: Scalar> Witness<T> {
    pub fn record(&self, norm: NormKind) -> WitnessRecord {
        WitnessRecord {
            point: self.point.clone(),
            offset: self.offset.clone(),
            x: self.x.iter().map(Scalar::as_f64).collect(),
            gamma: self.gamma.iter().map(Scalar::as_f64).collect(),
            norm: key_to_norm(&norm_key(&self.gamma, norm), norm),
        }
    }
}

/// Every λ-adversarial pair of the tabulated classifier, in lexicographic
/// `(point, offset)` order. Returns the witnesses and the number of pairs examined.
pub fn search_pairs<T, L>(
    tab: &Tabulation<L>,
    space: &QuantizedSpace<T>,
    ball: &PerturbationBall,
    cfg: &VerifierConfig,
) -> Result<(Vec<Witness<T>>, u64)>
where
    T: Scalar,
    L: Clone + Eq + Send + Sync,
{
    let incorrect: Vec<usize> = (0..space.len()).filter(|i| tab.is_incorrect(*i)).collect();
    cfg.check(incorrect.len() as u128 * ball.len() as u128)?;
    let examined = incorrect.len() as u64 * ball.len() as u64;
    let found: Vec<Vec<(usize, usize)>> = cfg.run(|| {
        incorrect
            .par_iter()
            .map(|&flat| {
                let coords = space.coords(flat);
                let truth = tab.truths[flat].clone();
                ball.offsets()
                    .iter()
                    .enumerate()
                    .filter(|(_, off)| {
                        let moved = space.shifted(&coords, off);
                        tab.truths[moved] == truth && tab.is_correct(moved)
                    })
                    .map(|(k, _)| (flat, k))
                    .collect()
            })
            .collect()
    });
    let witnesses = found
        .into_iter()
        .flatten()
        .map(|(flat, k)| {
            let point = space.coords(flat);
            let offset = ball.offsets()[k].clone();
            Witness {
                x: space.values_at(&point),
                gamma: space.offset_values(&offset),
                point,
                offset,
            }
        })
        .collect();
    Ok((witnesses, examined))
}

/// The full λ-adversarial set of `f` on `space`, as grid witnesses.
#[derive(Clone, Debug)]
pub struct AdversarialSet<T> {
    pub witnesses: Vec<Witness<T>>,
    pub pairs_examined: u64,
    pub ball_size: usize,
}

impl<T> AdversarialSet<T> {
    pub fn is_empty(&self) -> bool {
        self.witnesses.is_empty()
    }
}

pub fn enumerate_adversarial_set<T, F, O>(
    f: &F,
    o: &O,
    space: &QuantizedSpace<T>,
    budget: &DistortionBudget<T>,
    cfg: &VerifierConfig,
) -> Result<AdversarialSet<T>>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
    O: Oracle<Input<T>, Label = F::Output> + ?Sized,
{
    let ball = PerturbationBall::new(space, budget, cfg.cap / space.len().max(1) as u128 + 1)?;
    cfg.check(space.len() as u128 * ball.len() as u128)?;
    let tab = tabulate(f, o, space, cfg)?;
    let (witnesses, pairs_examined) = search_pairs(&tab, space, &ball, cfg)?;
    Ok(AdversarialSet {
        witnesses,
        pairs_examined,
        ball_size: ball.len(),
    })
}

/// Searches outward from a correctly classified grid point for a
/// misclassified neighbour with the same true label.
///
/// The returned witness is stated the way the adversarial predicate reads:
/// its point is the misclassified neighbour and its offset leads back to
/// `seed`. Neighbours are tried in lexicographic offset order.
pub fn find_adversarial_neighbor<T, F, O>(
    f: &F,
    o: &O,
    space: &QuantizedSpace<T>,
    budget: &DistortionBudget<T>,
    seed: &Input<T>,
    cfg: &VerifierConfig,
) -> Result<Option<Witness<T>>>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
    O: Oracle<Input<T>, Label = F::Output> + ?Sized,
{
    let origin = space
        .coords_of(seed.values())
        .ok_or_else(|| Error::Config("seed does not lie on the quantized grid".into()))?;
    let truth = match o.truth(seed) {
        Truth::Natural(l) if f.classify(seed) == l => Truth::Natural(l),
        _ => return Ok(None),
    };
    let ball = PerturbationBall::new(space, budget, cfg.cap)?;
    for off in ball.offsets() {
        let flat = space.shifted(&origin, off);
        let x = space.point(flat);
        if o.truth(&x) == truth && Truth::Natural(f.classify(&x)) != truth {
            let point = space.coords(flat);
            let back: Vec<i64> = origin.iter().zip(&point).map(|(a, b)| *a as i64 - *b as i64).collect();
            return Ok(Some(Witness {
                x: space.values_at(&point),
                gamma: space.offset_values(&back),
                point,
                offset: back,
            }));
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Resilient,
    AdversarialFound,
    BudgetExhausted,
}

/// Outcome of an adversarial search over one classifier and domain.
#[derive(Clone, Debug, Serialize)]
pub struct AdversarialReport {
    pub verdict: Verdict,
    /// Lexicographically smallest witness, present iff the verdict is `ADVERSARIAL_FOUND`.
    pub witness: Option<WitnessRecord>,
    pub witnesses_found: usize,
    pub points_examined: u64,
    pub elapsed_ms: f64,
    pub domain: DomainRecord,
    pub norm: NormKind,
    pub lambda: f64,
}

impl AdversarialReport {
    pub(crate) fn from_witnesses<T: Scalar>(
        witnesses: &[Witness<T>],
        points_examined: u64,
        started: Instant,
        space: &QuantizedSpace<T>,
        budget: &DistortionBudget<T>,
    ) -> Self {
        AdversarialReport {
            verdict: if witnesses.is_empty() {
                Verdict::Resilient
            } else {
                Verdict::AdversarialFound
            },
            witness: witnesses.first().map(|w| w.record(budget.norm)),
            witnesses_found: witnesses.len(),
            points_examined,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            domain: space.record(),
            norm: budget.norm,
            lambda: budget.lambda.as_f64(),
        }
    }

    pub(crate) fn exhausted<T: Scalar>(started: Instant, space: &QuantizedSpace<T>, budget: &DistortionBudget<T>) -> Self {
        AdversarialReport {
            verdict: Verdict::BudgetExhausted,
            witness: None,
            witnesses_found: 0,
            points_examined: 0,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            domain: space.record(),
            norm: budget.norm,
            lambda: budget.lambda.as_f64(),
        }
    }
}

/// Exhaustive resilience check, turning an exceeded cap into a
/// `BUDGET_EXHAUSTED` verdict instead of an error.
pub fn adversarial_report<T, F, O>(
    f: &F,
    o: &O,
    space: &QuantizedSpace<T>,
    budget: &DistortionBudget<T>,
    cfg: &VerifierConfig,
) -> Result<AdversarialReport>
where
    T: Scalar,
    F: Classifier<Input<T>> + ?Sized,
    O: Oracle<Input<T>, Label = F::Output> + ?Sized,
{
    let started = Instant::now();
    match enumerate_adversarial_set(f, o, space, budget, cfg) {
        Ok(set) => Ok(AdversarialReport::from_witnesses(
            &set.witnesses,
            set.pairs_examined,
            started,
            space,
            budget,
        )),
        Err(Error::BudgetExhausted { .. }) => Ok(AdversarialReport::exhausted(started, space, budget)),
        Err(e) => Err(e),
    }
}
