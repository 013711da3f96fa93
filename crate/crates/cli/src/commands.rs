use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use resfeat::augment::mask_and_renormalize;
use resfeat::augment::ScoredClassifier;
use resfeat::composition::{CandidateVector, MappingTable};
use resfeat::extractors::{ppm, CertStatus, ColorExtractor, ColorPalette, ImageInput, ShapeExtractor};
use resfeat::model::{apply_distortion, Distortion, DistortionBudget, Input};
use resfeat::signs::{default_catalog, render_sign, DemoPipeline, FeaturePipeline, PipelineCertificate, SignRenderer};
use resfeat::verifier::{
    greedy_attack, minimal_flip_distortion_pixelwise, run_campaign, AttackConfig, CampaignConfig, CampaignReport, FlipWitness,
    Pixelwise, QuantizedSpace, VerifierConfig,
};

use crate::config::Settings;
use crate::{Context, UsageError};

#[derive(Serialize)]
struct RunReport<B: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_digest: String,
    seed: u64,
    norm: resfeat::NormKind,
    lambda: f64,
    /// Wall-clock time, recorded only with `--timings`.
    elapsed_ms: Option<f64>,
    #[serde(flatten)]
    body: B,
}

fn report<B: Serialize>(ctx: &Context, command: &'static str, started: Instant, body: B) -> RunReport<B> {
    RunReport {
        tool: "resfeat",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_digest: ctx.digest.clone(),
        seed: ctx.settings.seed,
        norm: ctx.settings.norm,
        lambda: ctx.settings.lambda,
        elapsed_ms: ctx.timings.then(|| started.elapsed().as_secs_f64() * 1e3),
        body,
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), UsageError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| UsageError(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn budget(s: &Settings) -> Result<DistortionBudget<f64>, UsageError> {
    Ok(DistortionBudget::new(s.norm, s.lambda)?)
}

fn verifier(ctx: &Context) -> VerifierConfig {
    VerifierConfig {
        cap: ctx.settings.cap,
        workers: ctx.workers,
    }
}

/// The extractors as configured, kept concrete for per-pixel search.
struct Built {
    color: ColorExtractor<f64>,
    shape: ShapeExtractor<f64>,
    pipeline: FeaturePipeline,
}

fn extractors(s: &Settings) -> Result<(ColorExtractor<f64>, ShapeExtractor<f64>), UsageError> {
    let palette = match &s.palette {
        None => ColorPalette::default(),
        Some(anchors) => {
            let background = match &s.background_anchor {
                Some(name) => Some(
                    anchors
                        .iter()
                        .position(|(n, _)| n == name)
                        .ok_or_else(|| UsageError(format!("background anchor `{name}` is not in [palette]")))?,
                ),
                None => None,
            };
            ColorPalette::new(anchors.clone(), background)?
        }
    };
    let color = ColorExtractor::new(palette, s.background, s.color_tau)?;
    let shape = ShapeExtractor::standard(s.image, s.image, s.background, s.shape_tau)?;
    Ok((color, shape))
}

fn build(s: &Settings) -> Result<Built, UsageError> {
    let (color, shape) = extractors(s)?;
    let table = match &s.catalog {
        Some(path) => MappingTable::load(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?,
        None => default_catalog().mapping().clone(),
    };
    let pipeline = FeaturePipeline::new(table, color.clone(), shape.clone())?;
    Ok(Built { color, shape, pipeline })
}

fn load_image(path: &Path, size: usize) -> Result<Input<f64>, UsageError> {
    let img: ImageInput<f64> = ppm::load(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    if img.width() != size || img.height() != size {
        return Err(UsageError(format!(
            "{}: image is {}x{}, the pipeline expects {size}x{size}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(img.into_input())
}

fn candidate_names(table: &MappingTable, c: &CandidateVector) -> Vec<String> {
    c.labels()
        .filter_map(|l| table.outputs().name(l).map(str::to_string))
        .collect()
}

#[derive(Serialize)]
struct CertifyItem {
    input: String,
    features: Vec<Option<String>>,
    candidate_vector: String,
    candidates: Vec<String>,
    unknown_tuple: bool,
    certificate: PipelineCertificate,
}

pub fn certify(ctx: &Context, inputs: &[PathBuf]) -> Result<ExitCode, UsageError> {
    let started = Instant::now();
    let b = build(&ctx.settings)?;
    let budget = budget(&ctx.settings)?;
    let mut items = Vec::with_capacity(inputs.len());
    for path in inputs {
        let x = load_image(path, b.pipeline.size())?;
        let c = b.pipeline.candidate_vector(&x);
        items.push(CertifyItem {
            input: path.display().to_string(),
            features: b.pipeline.feature_names(&x),
            candidate_vector: c.to_string(),
            candidates: candidate_names(b.pipeline.table(), &c),
            unknown_tuple: c.is_unknown(),
            certificate: b.pipeline.certify(&x, &budget),
        });
    }
    let certified = items.iter().filter(|i| i.certificate.status == CertStatus::Certified).count();
    let body = json!({
        "certified": certified,
        "undecided": items.len() - certified,
        "items": items,
    });
    write_json(ctx.out.as_deref(), &report(ctx, "certify", started, body))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct AttackWitness {
    distance: f64,
    changed_dims: usize,
    candidate_vector: String,
    features: Vec<Option<String>>,
}

#[derive(Serialize)]
struct AttackItem {
    input: String,
    /// `exhaustive` when per-pixel search over the configured grid decided
    /// the input, `greedy` otherwise.
    mode: &'static str,
    candidate_vector: String,
    certificate: CertStatus,
    certified_radius: f64,
    witness: Option<AttackWitness>,
    /// A witness inside a certified budget; should never happen.
    contradicts_certificate: bool,
}

enum Exhaustive {
    None,
    Witness(Distortion<f64>),
    Inconclusive,
}

/// Per-stage minimal Linf flips on the grid. If neither stage can change
/// within the budget the candidate vector cannot either; a stage flip that
/// changes the vector is a witness.
fn exhaustive_attack(b: &Built, x: &Input<f64>, budget: &DistortionBudget<f64>, grid: &QuantizedSpace<f64>, cfg: &VerifierConfig) -> Exhaustive {
    fn flip<E: Pixelwise<f64>>(e: &E, x: &Input<f64>, grid: &QuantizedSpace<f64>, cfg: &VerifierConfig) -> Option<Option<FlipWitness<f64>>> {
        minimal_flip_distortion_pixelwise(e, x, grid, cfg).ok()
    }
    let (Some(c), Some(s)) = (flip(&b.color, x, grid, cfg), flip(&b.shape, x, grid, cfg)) else {
        return Exhaustive::Inconclusive;
    };
    let before = b.pipeline.candidate_vector(x);
    let within: Vec<FlipWitness<f64>> = [c, s].into_iter().flatten().filter(|w| budget.admits_delta(&w.gamma)).collect();
    if within.is_empty() {
        return Exhaustive::None;
    }
    for w in within {
        let gamma = Distortion::new(w.gamma);
        if apply_distortion(x, &gamma).is_ok_and(|y| b.pipeline.candidate_vector(&y) != before) {
            return Exhaustive::Witness(gamma);
        }
    }
    Exhaustive::Inconclusive
}

pub fn attack(ctx: &Context, inputs: &[PathBuf]) -> Result<ExitCode, UsageError> {
    let started = Instant::now();
    let s = &ctx.settings;
    let b = build(s)?;
    let budget = budget(s)?;
    let cfg = verifier(ctx);
    let grid = match s.step {
        Some(step) => Some(ImageInput::<f64>::grid(b.pipeline.size(), b.pipeline.size(), step)?),
        None => None,
    };
    let attack_cfg = AttackConfig {
        restarts: s.restarts,
        steps: s.steps,
        probes: s.probes,
        seed: s.seed,
    };
    let mut items = Vec::with_capacity(inputs.len());
    for path in inputs {
        let x = load_image(path, b.pipeline.size())?;
        let cert = b.pipeline.certify(&x, &budget);
        let before = b.pipeline.candidate_vector(&x);
        let on_grid = grid.as_ref().filter(|g| s.norm == resfeat::NormKind::Linf && g.coords_of(x.values()).is_some());
        let exhaustive = match on_grid {
            Some(g) => exhaustive_attack(&b, &x, &budget, g, &cfg),
            None => Exhaustive::Inconclusive,
        };
        let (mode, gamma) = match exhaustive {
            Exhaustive::None => ("exhaustive", None),
            Exhaustive::Witness(g) => ("exhaustive", Some(g)),
            Exhaustive::Inconclusive => {
                let step = s.step.unwrap_or(s.lambda / 2.0);
                let steps = vec![step; x.dims()];
                ("greedy", greedy_attack(&b.pipeline, &x, &budget, &steps, &attack_cfg))
            }
        };
        let witness = gamma.map(|g| {
            let y = apply_distortion(&x, &g).expect("same dimensions");
            let after = b.pipeline.candidate_vector(&y);
            assert_ne!(after, before, "attack witnesses change the candidate vector");
            AttackWitness {
                distance: resfeat::model::norm_of(&g, s.norm),
                changed_dims: g.delta.iter().filter(|d| **d != 0.0).count(),
                candidate_vector: after.to_string(),
                features: b.pipeline.feature_names(&y),
            }
        });
        items.push(AttackItem {
            input: path.display().to_string(),
            mode,
            candidate_vector: before.to_string(),
            certificate: cert.status,
            certified_radius: cert.radius,
            contradicts_certificate: witness.is_some() && cert.status == CertStatus::Certified && s.lambda > 0.0,
            witness,
        });
    }
    let found = items.iter().filter(|i| i.witness.is_some()).count();
    let contradictions = items.iter().filter(|i| i.contradicts_certificate).count();
    let body = json!({
        "witnesses": found,
        "none": items.len() - found,
        "contradictions": contradictions,
        "items": items,
    });
    write_json(ctx.out.as_deref(), &report(ctx, "attack", started, body))?;
    Ok(if contradictions > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

/// Campaign report with per-pipeline outcomes kept only where the theorem
/// did not simply hold.
fn campaign_json(r: &CampaignReport, timings: bool) -> Value {
    let mut v = serde_json::to_value(r).expect("reports serialize");
    let notable: Vec<Value> = r
        .outcomes
        .iter()
        .filter(|o| o.verdict != resfeat::verifier::TheoremVerdict::Holds)
        .map(|o| serde_json::to_value(o).expect("reports serialize"))
        .collect();
    v["outcomes"] = Value::Array(notable);
    if !timings {
        v["elapsed_ms"] = Value::Null;
        if let Some(first) = v.get_mut("first_counterexample").filter(|f| !f.is_null()) {
            first["elapsed_ms"] = Value::Null;
        }
    }
    v
}

pub fn verify_theorems(ctx: &Context) -> Result<ExitCode, UsageError> {
    let started = Instant::now();
    let s = &ctx.settings;
    let cfg = verifier(ctx);
    let configure = |mut c: CampaignConfig| {
        c.max_points = s.max_points;
        if s.broken {
            c = c.broken();
        }
        c
    };
    let serial = run_campaign(&configure(CampaignConfig::serial(s.pipelines, s.seed)), &cfg)?;
    let parallel = run_campaign(&configure(CampaignConfig::parallel(s.pipelines, s.seed)), &cfg)?;
    let counterexamples = serial.counterexamples + parallel.counterexamples;
    let body = json!({
        "counterexamples": counterexamples,
        "hypothesis_failures": serial.hypothesis_failures + parallel.hypothesis_failures,
        "budget_exhausted": serial.budget_exhausted + parallel.budget_exhausted,
        "serial": campaign_json(&serial, ctx.timings),
        "parallel": campaign_json(&parallel, ctx.timings),
    });
    write_json(ctx.out.as_deref(), &report(ctx, "verify-theorems", started, body))?;
    eprintln!(
        "serial: {} of {} hold, {} counterexamples, {} hypothesis failures; parallel: {} of {} hold, {} counterexamples, {} hypothesis failures",
        serial.holds,
        serial.pipelines,
        serial.counterexamples,
        serial.hypothesis_failures,
        parallel.holds,
        parallel.pipelines,
        parallel.counterexamples,
        parallel.hypothesis_failures
    );
    Ok(if counterexamples > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

#[derive(Serialize)]
struct Trace {
    base_probabilities: Vec<f64>,
    base_prediction: String,
    masked_probabilities: Vec<f64>,
    augmented_prediction: String,
    uniform_fallback: bool,
}

#[derive(Serialize)]
struct SignItem {
    sign: String,
    image: String,
    catalog_tuple: Vec<String>,
    features: Vec<Option<String>>,
    candidate_vector: String,
    candidates: Vec<String>,
    certificate: PipelineCertificate,
    augmentation: Option<Trace>,
}

fn slug(name: &str) -> String {
    name.to_ascii_lowercase().replace(' ', "-")
}

pub fn demo_signs(ctx: &Context) -> Result<ExitCode, UsageError> {
    let started = Instant::now();
    let s = &ctx.settings;
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("demo-signs"));
    std::fs::create_dir_all(&dir).map_err(|e| UsageError(format!("cannot create {}: {e}", dir.display())))?;
    let (color, shape) = extractors(s)?;
    let demo = DemoPipeline::new(default_catalog(), color.clone(), shape)?;
    let renderer = SignRenderer {
        palette: color.palette().clone(),
        background: s.background,
        noise: s.noise,
        ..SignRenderer::default()
    };
    let budget = budget(s)?;
    // Prototypes come from a different seed than the rendered signs.
    let base = demo.prototype_base(&renderer, s.seed.wrapping_add(1), s.beta)?;
    let labels = demo.catalog().labels().clone();
    let name = |l: resfeat::LabelId| labels.name(l).unwrap_or("?").to_string();
    let mut items = Vec::new();
    for spec in demo.catalog().specs() {
        let img = if s.noise == 0.02 && s.background == [0.5; 3] && s.palette.is_none() {
            render_sign(spec, demo.size(), s.seed)?
        } else {
            renderer.render(spec, demo.size(), s.seed)?
        };
        let file = format!("{}-{}.ppm", spec.index, slug(&spec.name));
        let path = dir.join(&file);
        ppm::save(&img, &path).map_err(|e| UsageError(format!("cannot write {}: {e}", path.display())))?;
        let x = img.input();
        let c = demo.candidate_vector(x);
        let softmax = base.softmax(x);
        let augmentation = if c.is_unknown() {
            None
        } else {
            let masked = mask_and_renormalize(&softmax, &c)?;
            Some(Trace {
                base_prediction: name(softmax.argmax()),
                base_probabilities: softmax.probs().to_vec(),
                augmented_prediction: name(masked.predicted),
                masked_probabilities: masked.probabilities.probs().to_vec(),
                uniform_fallback: masked.fallback,
            })
        };
        items.push(SignItem {
            sign: spec.name.clone(),
            image: file,
            catalog_tuple: vec![spec.color.clone(), spec.shape.name().to_string()],
            features: demo.feature_names(x),
            candidate_vector: c.to_string(),
            candidates: candidate_names(demo.catalog().mapping(), &c),
            certificate: demo.certify(x, &budget),
            augmentation,
        });
    }
    let catalog_path = dir.join("catalog.csv");
    demo.catalog()
        .mapping()
        .save(&catalog_path)
        .map_err(|e| UsageError(format!("cannot write {}: {e}", catalog_path.display())))?;
    let mapping = demo.catalog().mapping();
    let certified = items.iter().filter(|i| i.certificate.status == CertStatus::Certified).count();
    let body = json!({
        "selectivity": mapping.selectivity()?,
        "selectivity_fraction": format!("{}/{}", mapping.candidate_total(), mapping.len()),
        "certified": certified,
        "catalog": "catalog.csv",
        "signs": items,
    });
    let report = report(ctx, "demo-signs", started, body);
    write_json(Some(&dir.join("report.json")), &report)?;
    for i in &items {
        println!(
            "{:<17} {}  {:?} r={:.4}",
            i.sign, i.candidate_vector, i.certificate.status, i.certificate.radius
        );
    }
    println!("selectivity {}/{} = {:.4}", mapping.candidate_total(), mapping.len(), mapping.selectivity()?);
    println!("report written to {}", dir.join("report.json").display());
    Ok(ExitCode::SUCCESS)
}
