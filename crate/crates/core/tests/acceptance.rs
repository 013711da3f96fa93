//! End-to-end acceptance checks. Each prints one PASS/FAIL line; the run
//! fails if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resfeat::augment::{mask_and_renormalize, Augmented, AugmentedLabel, HairTrigger, SoftmaxVector, SUM_TOLERANCE};
use resfeat::composition::CandidateVector;
use resfeat::extractors::{CertifiedExtractor, ColorExtractor, ImageInput, Shape, ShapeExtractor};
use resfeat::model::{apply_distortion, Classifier, DistortionBudget, Input, LabelId, LabelSet, NormKind, Truth};
use resfeat::scalar::Scalar;
use resfeat::signs::{demo_pipeline, render_sign, DemoPipeline, SignRenderer};
use resfeat::verifier::{
    enumerate_adversarial_set, greedy_attack, minimal_flip_distortion_pixelwise, run_campaign, tabulate, AttackConfig, CampaignConfig,
    GridOracle, GridTable, Pixelwise, QuantizedSpace, VerifierConfig,
};

const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn serial_campaign() -> Outcome {
    let t = Instant::now();
    let r = run_campaign(&CampaignConfig::serial(500, SEED), &VerifierConfig::default()).expect("campaign runs");
    let e = t.elapsed();
    check(
        r.counterexamples == 0 && r.hypothesis_failures == 0 && r.budget_exhausted == 0 && r.nonvacuous > 0 && within(e, 60),
        format!(
            "500 serial pipelines: {} hold, {} counterexamples, {} hypothesis failures, {} non-vacuous, {:.1}s (limit 60s)",
            r.holds,
            r.counterexamples,
            r.hypothesis_failures,
            r.nonvacuous,
            e.as_secs_f64()
        ),
    )
}

fn parallel_campaign() -> Outcome {
    let t = Instant::now();
    let r = run_campaign(&CampaignConfig::parallel(500, SEED), &VerifierConfig::default()).expect("campaign runs");
    let e = t.elapsed();
    let arities: Vec<usize> = [2, 3].iter().map(|n| r.outcomes.iter().filter(|o| o.stages == *n).count()).collect();
    check(
        r.counterexamples == 0
            && r.hypothesis_failures == 0
            && r.budget_exhausted == 0
            && r.nonvacuous > 0
            && arities.iter().all(|c| *c > 0)
            && within(e, 120),
        format!(
            "500 parallel pipelines (n=2: {}, n=3: {}): {} counterexamples, {} hypothesis failures, {} non-vacuous, {:.1}s (limit 120s)",
            arities[0],
            arities[1],
            r.counterexamples,
            r.hypothesis_failures,
            r.nonvacuous,
            e.as_secs_f64()
        ),
    )
}

fn broken_campaign() -> Outcome {
    let r = run_campaign(&CampaignConfig::parallel(100, SEED).broken(), &VerifierConfig::default()).expect("campaign runs");
    check(
        r.broken_planted == 100 && r.hypothesis_failures >= 1 && r.broken_witnessed >= 95 && r.counterexamples == 0,
        format!(
            "100 trials with a planted non-resilient extractor: {} hypothesis failures, witness for the planted stage in {} (need 95)",
            r.hypothesis_failures, r.broken_witnessed
        ),
    )
}

/// Half sign-like (template, palette colour, grey background, speckle),
/// half uniform noise; every channel on the grid.
fn random_image(rng: &mut ChaCha8Rng, side: usize, levels: i32) -> Input<f64> {
    let step = 1.0 / levels as f64;
    let snap = |v: f64| (v * levels as f64).round() / levels as f64;
    let pixels: Vec<[f64; 3]> = if rng.gen_bool(0.5) {
        let palette = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let fill = palette[rng.gen_range(0..palette.len())];
        let mask = Shape::ALL[rng.gen_range(0..Shape::ALL.len())].rasterize(side, side);
        let jitter = rng.gen_range(0..=3);
        mask.into_iter()
            .map(|inside| {
                if rng.gen_bool(0.08) {
                    return [0; 3].map(|_| rng.gen_range(0..=levels) as f64 * step);
                }
                let base = if inside { fill } else { [0.5; 3] };
                base.map(|c| snap((c + rng.gen_range(-jitter..=jitter) as f64 * step).clamp(0.0, 1.0)))
            })
            .collect()
    } else {
        (0..side * side).map(|_| [0; 3].map(|_| rng.gen_range(0..=levels) as f64 * step)).collect()
    };
    ImageInput::new(side, side, pixels).unwrap().into_input()
}

fn soundness<E: CertifiedExtractor<f64> + Pixelwise<f64>>(e: &E, images: &[Input<f64>], space: &QuantizedSpace<f64>) -> (usize, usize, usize) {
    let (mut violations, mut certified, mut flips) = (0, 0, 0);
    for x in images {
        let Ok(cert) = e.certify(x, NormKind::Linf) else { continue };
        certified += 1;
        if let Some(flip) = minimal_flip_distortion_pixelwise(e, x, space, &VerifierConfig::default()).expect("search runs") {
            flips += 1;
            violations += !flip.at_least(&cert.certified_radius) as usize;
        }
    }
    (violations, certified, flips)
}

fn certificate_soundness() -> Outcome {
    let t = Instant::now();
    let (side, levels) = (8, 20);
    let space = ImageInput::<f64>::grid(side, side, 1.0 / levels as f64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let images: Vec<Input<f64>> = (0..120).map(|_| random_image(&mut rng, side, levels)).collect();
    let color = ColorExtractor::default();
    let shape = ShapeExtractor::standard(side, side, [0.5; 3], 0.3).unwrap();
    let c = soundness(&color, &images, &space);
    let s = soundness(&shape, &images, &space);
    let e = t.elapsed();
    check(
        c.0 == 0 && s.0 == 0 && c.1 >= 100 && s.1 >= 100 && within(e, 300),
        format!(
            "{} random 8x8 images at step 1/20, Linf: colour {} violations ({} certified, {} flippable), shape {} violations ({} certified, {} flippable), {:.1}s (limit 300s)",
            images.len(),
            c.0,
            c.1,
            c.2,
            s.0,
            s.1,
            s.2,
            e.as_secs_f64()
        ),
    )
}

fn listed_vectors() -> Outcome {
    let p = demo_pipeline();
    let expected = [
        ("Stop", "<1,0,0,0,0,0,0,0,0>"),
        ("Left Turn Ahead", "<0,0,0,1,1,0,0,0,0>"),
        ("Hospital", "<0,0,0,0,0,0,0,0,1>"),
    ];
    let mut mismatches = Vec::new();
    for seed in 0..10 {
        for (sign, want) in expected {
            let img = render_sign(p.catalog().spec(sign).unwrap(), p.size(), seed).unwrap();
            let got = p.candidate_vector(img.input()).to_string();
            if got != want {
                mismatches.push(format!("{sign}/{seed}: {got}"));
            }
        }
    }
    check(
        mismatches.is_empty(),
        format!("Stop, Left Turn Ahead, Hospital over 10 seeds: {} mismatches {:?}", mismatches.len(), mismatches),
    )
}

fn render(p: &DemoPipeline, sign: &str, seed: u64) -> Input<f64> {
    render_sign(p.catalog().spec(sign).unwrap(), p.size(), seed).unwrap().into_input()
}

/// Strictly inside the certified radius, which is an open bound.
fn inside(radius: f64) -> DistortionBudget<f64> {
    DistortionBudget::new(NormKind::Linf, radius * (1.0 - 1e-9)).unwrap()
}

fn attack<C: Classifier<Input<f64>>>(f: &C, x: &Input<f64>, budget: &DistortionBudget<f64>, seed: u64) -> Option<Input<f64>> {
    let steps = vec![budget.lambda / 2.0; x.dims()];
    let cfg = AttackConfig::default().with_seed(seed);
    greedy_attack(f, x, budget, &steps, &cfg).map(|g| apply_distortion(x, &g).unwrap())
}

/// Base whose decision between two labels hinges on `w . x`, with `w` the
/// difference of two renders. The threshold sits `fraction` of the way from
/// `x` to the largest drop an Linf budget could cause.
fn trigger(p: &DemoPipeline, x: &Input<f64>, toward: &Input<f64>, above: &str, below: &str, budget: &DistortionBudget<f64>, fraction: f64) -> HairTrigger {
    let w: Vec<f64> = x.values().iter().zip(toward.values()).map(|(a, b)| a - b).collect();
    let dot: f64 = w.iter().zip(x.values()).map(|(a, b)| a * b).sum();
    let slack = fraction * budget.lambda * w.iter().map(|v| v.abs()).sum::<f64>();
    let labels = p.catalog().labels().clone();
    let id = |n: &str| labels.id(n).unwrap();
    let (a, b) = (id(above), id(below));
    HairTrigger::new(labels, w, dot - slack, a, b, 1.0 / slack).unwrap()
}

fn feature_sharing_boundary() -> Outcome {
    let p = demo_pipeline();
    let labels = p.catalog().labels().clone();
    let stop = labels.id("Stop").unwrap();
    let left = labels.id("Left Turn Ahead").unwrap();
    let right = labels.id("Right Turn Ahead").unwrap();
    let renderer = SignRenderer::default();
    let base = p.prototype_base(&renderer, 999, 0.05).unwrap();
    let (mut crossings, mut candidate_changes, mut attacks, mut inner_moves) = (0, 0, 0, 0);
    for seed in [0u64] {
        for spec in p.catalog().specs() {
            let x = render(&p, &spec.name, seed);
            let cert = p.certify(&x, &DistortionBudget::new(NormKind::Linf, 0.0).unwrap());
            let budget = inside(cert.radius);
            let allowed = p.candidate_vector(&x);
            // The pipeline itself cannot be moved.
            attacks += 1;
            if let Some(y) = attack(&p, &x, &budget, seed) {
                candidate_changes += (p.candidate_vector(&y) != allowed) as usize;
            }
            // Nor can the augmented prototype model leave the candidate set.
            let aug = Augmented::new(base.clone(), &p).unwrap();
            attacks += 1;
            if let Some(y) = attack(&aug, &x, &budget, seed) {
                match aug.classify(&y) {
                    AugmentedLabel::Label(l) if allowed.is_set(l) => inner_moves += 1,
                    _ => crossings += 1,
                }
            }
        }
    }
    // A base that an attack can push from Stop to Left Turn Ahead: the base
    // flips but the augmented prediction stays Stop.
    let x = render(&p, "Stop", 0);
    let cert = p.certify(&x, &DistortionBudget::new(NormKind::Linf, 0.0).unwrap());
    let budget = inside(cert.radius);
    let lure = trigger(&p, &x, &render(&p, "Left Turn Ahead", 0), "Stop", "Left Turn Ahead", &budget, 0.01);
    let lured = Augmented::new(lure.clone(), &p).unwrap();
    let base_only = Augmented::new(lure, FreeHead(CandidateVector::from_bits(vec![true; 9]), labels.clone())).unwrap();
    let base_flipped = attack(&base_only, &x, &budget, 1);
    let base_fooled = base_flipped.as_ref().is_some_and(|y| base_only.classify(y) == AugmentedLabel::Label(left));
    let stop_held = base_flipped.as_ref().is_some_and(|y| lured.classify(y) == AugmentedLabel::Label(stop)) && attack(&lured, &x, &budget, 1).is_none();
    // Inside the shared (Yellow, Diamond) tuple the same construction moves
    // Left Turn Ahead to Right Turn Ahead without touching the candidate vector.
    let x = render(&p, "Left Turn Ahead", 0);
    let cert = p.certify(&x, &DistortionBudget::new(NormKind::Linf, 0.0).unwrap());
    let budget = inside(cert.radius);
    let turn = trigger(&p, &x, &render(&p, "Right Turn Ahead", 0), "Left Turn Ahead", "Right Turn Ahead", &budget, 0.01);
    let aug = Augmented::new(turn, &p).unwrap();
    let before = aug.classify(&x);
    let shared = attack(&aug, &x, &budget, 2).is_some_and(|y| {
        aug.classify(&y) == AugmentedLabel::Label(right) && p.candidate_vector(&y) == p.candidate_vector(&x)
    });
    check(
        crossings == 0 && candidate_changes == 0 && base_fooled && stop_held && before == AugmentedLabel::Label(left) && shared,
        format!(
            "{attacks} attacks inside certified radii: {crossings} cross-tuple predictions, {candidate_changes} candidate-vector changes, {inner_moves} within-tuple moves; base fooled Stop->Left: {base_fooled}, augmented held Stop: {stop_held}; Left->Right demonstrated: {shared}"
        ),
    )
}

/// Robust stage that allows every label, to attack the base on its own.
struct FreeHead(CandidateVector, LabelSet);

impl Classifier<Input<f64>> for FreeHead {
    type Output = CandidateVector;

    fn classify(&self, _: &Input<f64>) -> CandidateVector {
        self.0.clone()
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.1)
    }
}

fn augmentation_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut bad_sum, mut leaked, mut fallbacks) = (0, 0, 0);
    for _ in 0..10_000 {
        let n = rng.gen_range(2..=20);
        let spread = if rng.gen_bool(0.1) { 400.0 } else { 8.0 };
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
        let s = SoftmaxVector::from_logits(&logits).unwrap();
        let mut bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if !bits.iter().any(|b| *b) {
            bits[rng.gen_range(0..n)] = true;
        }
        let a = mask_and_renormalize(&s, &CandidateVector::from_bits(bits.clone())).unwrap();
        let p = a.probabilities.probs();
        bad_sum += ((p.iter().sum::<f64>() - 1.0).abs() > SUM_TOLERANCE) as usize;
        leaked += p.iter().zip(&bits).filter(|(v, b)| !**b && **v != 0.0).count();
        fallbacks += a.fallback as usize;
    }
    check(
        bad_sum == 0 && leaked == 0,
        format!("10000 pairs: {bad_sum} sums off by more than 1e-9, {leaked} nonzero excluded entries ({fallbacks} uniform fallbacks)"),
    )
}

fn random_grid_classifier<T: Scalar>(rng: &mut ChaCha8Rng, space: std::sync::Arc<QuantizedSpace<T>>) -> (GridTable<T>, GridOracle<T>) {
    let n = rng.gen_range(2..=4);
    let mut labels: Vec<LabelId> = (0..space.len()).map(|_| LabelId(rng.gen_range(0..n))).collect();
    let mut truths: Vec<Truth<LabelId>> = (0..space.len())
        .map(|_| if rng.gen_bool(0.2) { Truth::Nonsense } else { Truth::Natural(LabelId(rng.gen_range(0..n))) })
        .collect();
    // At least one misclassified point, so the check is never vacuous.
    let p = rng.gen_range(0..space.len());
    truths[p] = Truth::Natural(LabelId(0));
    labels[p] = LabelId(1);
    (
        GridTable::new(space.clone(), labels, LabelSet::numbered("y", n)).unwrap(),
        GridOracle::new(space, truths).unwrap(),
    )
}

fn zero_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cfg = VerifierConfig::default();
    let (mut nonempty, mut misclassified) = (0, 0);
    for i in 0..100 {
        let dims = rng.gen_range(1..=3);
        let levels = rng.gen_range(3..=12i64);
        let norm = [NormKind::L1, NormKind::L2, NormKind::Linf][i % 3];
        let (witnesses, wrong) = if i % 2 == 0 {
            let space = QuantizedSpace::uniform(dims, Rational64::from_integer(0), Rational64::from_integer(1), Rational64::new(1, levels - 1)).unwrap();
            let (f, o) = random_grid_classifier(&mut rng, space.clone());
            let budget = DistortionBudget::new(norm, Rational64::from_integer(0)).unwrap();
            let set = enumerate_adversarial_set(&f, &o, &space, &budget, &cfg).unwrap();
            (set.witnesses.len(), tabulate(&f, &o, &space, &cfg).unwrap().incorrect_count())
        } else {
            let space = QuantizedSpace::uniform(dims, 0.0, 1.0, 1.0 / (levels - 1) as f64).unwrap();
            let (f, o) = random_grid_classifier(&mut rng, space.clone());
            let budget = DistortionBudget::new(norm, 0.0).unwrap();
            let set = enumerate_adversarial_set(&f, &o, &space, &budget, &cfg).unwrap();
            (set.witnesses.len(), tabulate(&f, &o, &space, &cfg).unwrap().incorrect_count())
        };
        nonempty += (witnesses > 0) as usize;
        misclassified += (wrong > 0) as usize;
    }
    check(
        nonempty == 0 && misclassified == 100,
        format!("100 random classifiers (half exact rational), all with misclassified points ({misclassified}): {nonempty} non-empty adversarial sets at lambda = 0"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("serial composition campaign", serial_campaign),
        ("parallel composition campaign", parallel_campaign),
        ("hypothesis-failure sensitivity", broken_campaign),
        ("certificate soundness", certificate_soundness),
        ("road-sign candidate vectors", listed_vectors),
        ("feature-sharing attack boundary", feature_sharing_boundary),
        ("augmentation math", augmentation_math),
        ("zero-budget universality", zero_budget),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        failed += !o.pass as usize;
        println!("[{}] {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
