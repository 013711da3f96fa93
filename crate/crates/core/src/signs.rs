//! Nine road signs as a worked example: a catalog of (colour, shape) tuples,
//! a synthetic renderer, and the colour + shape pipeline that turns an image
//! into a candidate vector over the signs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::PrototypeSoftmax;
use crate::composition::{build_mapping, parallel_compose, CandidateVector, FeatureTuple, MappingTable, Parallel, Weighting};
use crate::error::{Error, Result};
use crate::extractors::shapes::normalized;
use crate::extractors::{
    certify_at, ppm, CertStatus, CertifiedExtractor, ColorExtractor, ColorPalette, Feature, ImageInput, ResilienceCertificate,
    Shape, ShapeExtractor,
};
use crate::model::{Classifier, DistortionBudget, Input, LabelId, LabelSet, NormKind};

/// Sign names in output-vector order.
pub const SIGN_NAMES: [&str; 9] = [
    "Stop",
    "Yield",
    "Do Not Enter",
    "Left Turn Ahead",
    "Right Turn Ahead",
    "No Pedestrians",
    "Speed Limit 25",
    "Speed Limit 45",
    "Hospital",
];

pub const COLOR_COLUMN: &str = "color";
pub const SHAPE_COLUMN: &str = "shape";

/// Dark marking drawn inside the sign. Purely cosmetic for the extractors,
/// but it makes signs that share a tuple render differently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Legend {
    None,
    Bar,
    ArrowLeft,
    ArrowRight,
    Slash,
    Number(u8),
    LetterH,
}

impl Legend {
    fn covers(self, u: f64, v: f64) -> bool {
        match self {
            Legend::None => false,
            Legend::Bar => u.abs() <= 0.6 && v.abs() <= 0.12,
            Legend::ArrowLeft => arrow(u, v),
            Legend::ArrowRight => arrow(-u, v),
            Legend::Slash => u.abs() <= 0.55 && v.abs() <= 0.55 && (u - v).abs() <= 0.16,
            Legend::LetterH => {
                ((u.abs() - 0.3).abs() <= 0.09 && v.abs() <= 0.45) || (u.abs() <= 0.3 && v.abs() <= 0.08)
            }
            Legend::Number(n) => digit(n / 10, u + 0.22, v) || digit(n % 10, u - 0.22, v),
        }
    }
}

/// Left-pointing arrow: a shaft and a triangular head.
fn arrow(u: f64, v: f64) -> bool {
    let shaft = (-0.2..=0.45).contains(&u) && v.abs() <= 0.08;
    let head = (-0.45..=-0.15).contains(&u) && v.abs() <= (u + 0.45) * 0.9;
    shaft || head
}

/// Seven-segment digit centred at the origin.
fn digit(d: u8, u: f64, v: f64) -> bool {
    const SEGMENTS: [u8; 10] = [
        0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
    ];
    let (w, h, t) = (0.15, 0.35, 0.07);
    let horizontal = |y: f64| u.abs() <= w && (v - y).abs() <= t;
    let vertical = |x: f64, top: bool| (u - x).abs() <= t && if top { (-h..=0.0).contains(&v) } else { (0.0..=h).contains(&v) };
    let lit = [
        horizontal(-h),
        vertical(w, true),
        vertical(w, false),
        horizontal(h),
        vertical(-w, false),
        vertical(-w, true),
        horizontal(0.0),
    ];
    let mask = SEGMENTS[d as usize % 10];
    lit.iter().enumerate().any(|(i, on)| *on && mask & (1 << i) != 0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignSpec {
    pub index: usize,
    pub name: String,
    /// Palette anchor name.
    pub color: String,
    pub shape: Shape,
    pub legend: Legend,
}

impl SignSpec {
    pub fn new(index: usize, name: &str, color: &str, shape: Shape, legend: Legend) -> Self {
        SignSpec {
            index,
            name: name.into(),
            color: color.into(),
            shape,
            legend,
        }
    }
}

/// The nine specs and the mapping table derived from them.
#[derive(Clone, Debug)]
pub struct SignCatalog {
    specs: Vec<SignSpec>,
    mapping: MappingTable,
}

/// Attributes the catalog must keep whatever the completions are.
const FIXED: [(&str, Option<&str>, Option<Shape>); 6] = [
    ("Stop", Some("Red"), Some(Shape::Octagon)),
    ("Yield", Some("Red"), None),
    ("Do Not Enter", Some("Red"), None),
    ("Left Turn Ahead", Some("Yellow"), Some(Shape::Diamond)),
    ("Right Turn Ahead", Some("Yellow"), Some(Shape::Diamond)),
    ("Hospital", Some("Blue"), Some(Shape::Square)),
];

impl SignCatalog {
    /// Validates sign order and the fixed attributes (No Pedestrians is
    /// always a square) and derives the mapping table.
    pub fn new(specs: Vec<SignSpec>) -> Result<Self> {
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        if names != SIGN_NAMES {
            return Err(Error::Config(format!("signs must be exactly {SIGN_NAMES:?} in that order")));
        }
        if let Some(s) = specs.iter().enumerate().find(|(i, s)| s.index != *i) {
            return Err(Error::Config(format!("sign `{}` has index {}", s.1.name, s.1.index)));
        }
        for (name, color, shape) in FIXED {
            let s = &specs[SIGN_NAMES.iter().position(|n| *n == name).expect("known sign")];
            if color.is_some_and(|c| c != s.color) || shape.is_some_and(|sh| sh != s.shape) {
                return Err(Error::Config(format!("sign `{name}` must keep its fixed colour and shape")));
            }
        }
        if specs[5].shape != Shape::Square {
            return Err(Error::Config("sign `No Pedestrians` must be a square".into()));
        }
        let rows = specs
            .iter()
            .map(|s| (s.name.clone(), vec![s.color.clone(), s.shape.name().to_string()]));
        let mapping = build_mapping(&[COLOR_COLUMN, SHAPE_COLUMN], rows)?;
        Ok(SignCatalog { specs, mapping })
    }

    pub fn specs(&self) -> &[SignSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&SignSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn mapping(&self) -> &MappingTable {
        &self.mapping
    }

    pub fn labels(&self) -> &LabelSet {
        self.mapping.outputs()
    }
}

/// Yield a red triangle, Do Not Enter a red circle, No Pedestrians a white
/// square and both speed limits white rectangles.
pub fn default_catalog() -> SignCatalog {
    use Legend::*;
    let rows = [
        ("Red", Shape::Octagon, None),
        ("Red", Shape::Triangle, None),
        ("Red", Shape::Circle, Bar),
        ("Yellow", Shape::Diamond, ArrowLeft),
        ("Yellow", Shape::Diamond, ArrowRight),
        ("White", Shape::Square, Slash),
        ("White", Shape::Rectangle, Number(25)),
        ("White", Shape::Rectangle, Number(45)),
        ("Blue", Shape::Square, LetterH),
    ];
    let specs = SIGN_NAMES
        .iter()
        .zip(rows)
        .enumerate()
        .map(|(i, (name, (color, shape, legend)))| SignSpec::new(i, name, color, shape, legend))
        .collect();
    SignCatalog::new(specs).expect("default catalog is valid")
}

/// Rendering constants.
#[derive(Clone, Debug)]
pub struct SignRenderer {
    pub palette: ColorPalette<f64>,
    pub background: [f64; 3],
    /// Each channel gets independent uniform noise in `[-noise, noise]`.
    pub noise: f64,
    pub ink: [f64; 3],
    pub legends: bool,
}

impl Default for SignRenderer {
    fn default() -> Self {
        SignRenderer {
            palette: ColorPalette::default(),
            background: [0.5; 3],
            noise: 0.02,
            ink: [0.2; 3],
            legends: true,
        }
    }
}

pub const MIN_SIGN_SIZE: usize = 16;

impl SignRenderer {
    /// Square `size x size` render, deterministic in `(spec, size, seed)`.
    pub fn render(&self, spec: &SignSpec, size: usize, seed: u64) -> Result<ImageInput<f64>> {
        if size < MIN_SIGN_SIZE {
            return Err(Error::Config(format!("signs are rendered at {MIN_SIGN_SIZE}px or more, got {size}")));
        }
        let fill = self
            .palette
            .names()
            .iter()
            .position(|n| *n == spec.color)
            .map(|i| self.palette.anchors()[i])
            .ok_or_else(|| Error::Config(format!("colour `{}` is not in the palette", spec.color)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(spec.index as u64);
        let mut pixels = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = normalized(x, y, size, size);
                let base = if !spec.shape.contains(u, v) {
                    self.background
                } else if self.legends && spec.legend.covers(u, v) {
                    self.ink
                } else {
                    fill
                };
                pixels.push(base.map(|c| (c + rng.gen_range(-self.noise..=self.noise)).clamp(0.0, 1.0)));
            }
        }
        ImageInput::new(size, size, pixels)
    }
}

/// Renders with the default constants.
pub fn render_sign(spec: &SignSpec, size: usize, seed: u64) -> Result<ImageInput<f64>> {
    SignRenderer::default().render(spec, size, seed)
}

pub fn save_ppm(img: &ImageInput<f64>, path: impl AsRef<Path>) -> Result<()> {
    ppm::save(img, path)
}

/// Second stage of the pipeline: looks the extracted tuple up in the catalog.
///
/// Extractor labels are matched to catalog features by name. A missing
/// foreground or a tuple outside the catalog gives an unknown vector.
#[derive(Clone, Debug)]
pub struct CatalogHead {
    table: MappingTable,
    inputs: Vec<LabelSet>,
    translate: Vec<Vec<Option<LabelId>>>,
}

impl CatalogHead {
    pub fn new(table: MappingTable, inputs: Vec<LabelSet>) -> Result<Self> {
        if inputs.len() != table.arity() {
            return Err(Error::Config(format!(
                "catalog has {} feature columns but {} extractors were given",
                table.arity(),
                inputs.len()
            )));
        }
        let mut translate = Vec::with_capacity(inputs.len());
        for (col, set) in inputs.iter().enumerate() {
            let features = table.feature_labels(col);
            if let Some(missing) = features.names().iter().find(|n| set.id(n).is_none()) {
                return Err(Error::Config(format!(
                    "catalog feature `{missing}` is not produced by extractor `{}`",
                    set.namespace()
                )));
            }
            translate.push(set.names().iter().map(|n| features.id(n)).collect());
        }
        Ok(CatalogHead { table, inputs, translate })
    }

    pub fn table(&self) -> &MappingTable {
        &self.table
    }

    pub fn tuple(&self, features: &FeatureTuple<Feature>) -> Option<FeatureTuple<LabelId>> {
        features
            .0
            .iter()
            .zip(&self.translate)
            .map(|(f, t)| f.label().and_then(|l| t.get(l.0).copied().flatten()))
            .collect::<Option<Vec<_>>>()
            .map(FeatureTuple)
    }
}

impl Classifier<FeatureTuple<Feature>> for CatalogHead {
    type Output = CandidateVector;

    fn classify(&self, features: &FeatureTuple<Feature>) -> CandidateVector {
        match self.tuple(features) {
            Some(t) => self.table.candidate_vector(&t, Weighting::Equal),
            None => CandidateVector::unknown(self.table.len()),
        }
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(self.table.outputs())
    }

    fn input_labels(&self) -> Option<&[LabelSet]> {
        Some(&self.inputs)
    }
}

pub type DemoStage = Box<dyn CertifiedExtractor<f64>>;

/// Both stages certified at the budget, or not.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineCertificate {
    pub status: CertStatus,
    /// Smallest stage radius: no distortion shorter than this changes either
    /// feature, so none changes the candidate vector.
    pub radius: f64,
    pub stages: Vec<ResilienceCertificate>,
    pub norm: NormKind,
    pub lambda: f64,
}

/// Colour and shape extractors composed in parallel under a catalog head.
pub struct FeaturePipeline {
    size: usize,
    pipeline: Parallel<DemoStage, CatalogHead>,
}

impl FeaturePipeline {
    /// The table's columns must be colour then shape, with feature names the
    /// extractors produce.
    pub fn new(table: MappingTable, color: ColorExtractor<f64>, shape: ShapeExtractor<f64>) -> Result<Self> {
        if shape.width() != shape.height() {
            return Err(Error::Config("pipelines take square images".into()));
        }
        let size = shape.width();
        let head = CatalogHead::new(table, vec![color.labels().clone(), shape.labels().clone()])?;
        let stages: Vec<DemoStage> = vec![Box::new(color), Box::new(shape)];
        let pipeline = parallel_compose::<Input<f64>, _, _>(stages, head)?;
        Ok(FeaturePipeline { size, pipeline })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn table(&self) -> &MappingTable {
        self.pipeline.head.table()
    }

    pub fn labels(&self) -> &LabelSet {
        self.table().outputs()
    }

    pub fn head(&self) -> &CatalogHead {
        &self.pipeline.head
    }

    pub fn stages(&self) -> &[DemoStage] {
        &self.pipeline.stages
    }

    pub fn features(&self, x: &Input<f64>) -> FeatureTuple<Feature> {
        self.pipeline.features(x)
    }

    /// Extracted feature names, `None` where a stage saw no foreground.
    pub fn feature_names(&self, x: &Input<f64>) -> Vec<Option<String>> {
        self.features(x)
            .0
            .iter()
            .zip(&self.pipeline.stages)
            .map(|(f, s)| {
                let set = s.output_labels()?;
                f.label().and_then(|l| set.name(l)).map(str::to_string)
            })
            .collect()
    }

    pub fn candidate_vector(&self, x: &Input<f64>) -> CandidateVector {
        self.pipeline.classify(x)
    }

    pub fn certify(&self, x: &Input<f64>, budget: &DistortionBudget<f64>) -> PipelineCertificate {
        let stages: Vec<ResilienceCertificate> = self.pipeline.stages.iter().map(|s| certify_at(s.as_ref(), x, budget)).collect();
        let radius = stages.iter().map(|c| c.radius).fold(f64::INFINITY, f64::min);
        let status = if stages.iter().all(|c| c.status == CertStatus::Certified) {
            CertStatus::Certified
        } else {
            CertStatus::Undecided
        };
        PipelineCertificate {
            status,
            radius,
            stages,
            norm: budget.norm,
            lambda: budget.lambda,
        }
    }
}

impl Classifier<Input<f64>> for FeaturePipeline {
    type Output = CandidateVector;

    fn classify(&self, x: &Input<f64>) -> CandidateVector {
        self.candidate_vector(x)
    }

    /// Weakest stage margin.
    fn score_margin(&self, x: &Input<f64>, _current: &CandidateVector) -> Option<f64> {
        self.pipeline
            .stages
            .iter()
            .map(|s| s.score_margin(x, &s.classify(x)))
            .try_fold(f64::INFINITY, |acc, m| m.map(|m| acc.min(m)))
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(self.labels())
    }
}

/// The feature pipeline over the sign catalog.
pub struct DemoPipeline {
    catalog: SignCatalog,
    pipeline: FeaturePipeline,
}

impl DemoPipeline {
    pub fn new(catalog: SignCatalog, color: ColorExtractor<f64>, shape: ShapeExtractor<f64>) -> Result<Self> {
        let pipeline = FeaturePipeline::new(catalog.mapping().clone(), color, shape)?;
        Ok(DemoPipeline { catalog, pipeline })
    }

    pub fn catalog(&self) -> &SignCatalog {
        &self.catalog
    }

    pub fn pipeline(&self) -> &FeaturePipeline {
        &self.pipeline
    }

    pub fn size(&self) -> usize {
        self.pipeline.size()
    }

    pub fn feature_names(&self, x: &Input<f64>) -> Vec<Option<String>> {
        self.pipeline.feature_names(x)
    }

    pub fn candidate_vector(&self, x: &Input<f64>) -> CandidateVector {
        self.pipeline.candidate_vector(x)
    }

    pub fn certify(&self, x: &Input<f64>, budget: &DistortionBudget<f64>) -> PipelineCertificate {
        self.pipeline.certify(x, budget)
    }

    /// Base model for augmentation: one prototype per sign, the sign's
    /// render at `seed`.
    pub fn prototype_base(&self, renderer: &SignRenderer, seed: u64, beta: f64) -> Result<PrototypeSoftmax> {
        let prototypes = self
            .catalog
            .specs()
            .iter()
            .map(|s| Ok(renderer.render(s, self.size(), seed)?.into_input().into_values()))
            .collect::<Result<Vec<_>>>()?;
        PrototypeSoftmax::new(self.catalog.labels().clone(), prototypes, beta)
    }
}

impl Classifier<Input<f64>> for DemoPipeline {
    type Output = CandidateVector;

    fn classify(&self, x: &Input<f64>) -> CandidateVector {
        self.pipeline.classify(x)
    }

    fn score_margin(&self, x: &Input<f64>, current: &CandidateVector) -> Option<f64> {
        self.pipeline.score_margin(x, current)
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        self.pipeline.output_labels()
    }
}

/// Default catalog, default colour extractor and standard shape templates
/// at 32x32 on the mid-grey background.
pub fn demo_pipeline() -> DemoPipeline {
    DemoPipeline::new(default_catalog(), ColorExtractor::default(), ShapeExtractor::default()).expect("default pipeline is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(p: &DemoPipeline, sign: &str, seed: u64) -> String {
        let spec = p.catalog().spec(sign).unwrap();
        p.candidate_vector(render_sign(spec, 32, seed).unwrap().input()).to_string()
    }

    #[test]
    fn catalog_lookups() {
        let c = default_catalog();
        let m = c.mapping();
        assert_eq!(m.tuple_names(m.catalog(LabelId(0)).unwrap()), ["Red", "Octagon"]);
        let turn = m.tuple_of(&["Yellow", "Diamond"]).unwrap();
        assert_eq!(m.inverse(&turn), [LabelId(3), LabelId(4)]);
        // Two pairs of size two and five singletons.
        assert_eq!(m.candidate_total(), 13);
        assert!((m.selectivity().unwrap() - 13.0 / 9.0).abs() < 1e-15);
        let color_only = m.project(&[0]).unwrap();
        assert!(color_only.selectivity().unwrap() > m.selectivity().unwrap());
    }

    #[test]
    fn fixed_attributes_are_enforced() {
        let mut specs = default_catalog().specs().to_vec();
        specs[0].shape = Shape::Circle;
        assert!(SignCatalog::new(specs).is_err());
        let mut specs = default_catalog().specs().to_vec();
        specs[5].shape = Shape::Rectangle;
        assert!(SignCatalog::new(specs).is_err());
        let mut specs = default_catalog().specs().to_vec();
        specs.swap(0, 1);
        assert!(SignCatalog::new(specs).is_err());
        // Completions are free to change.
        let mut specs = default_catalog().specs().to_vec();
        specs[1].shape = Shape::Diamond;
        assert!(SignCatalog::new(specs).is_ok());
    }

    #[test]
    fn listed_candidate_vectors() {
        let p = demo_pipeline();
        for seed in [0, 1, 7] {
            assert_eq!(vector(&p, "Stop", seed), "<1,0,0,0,0,0,0,0,0>");
            assert_eq!(vector(&p, "Left Turn Ahead", seed), "<0,0,0,1,1,0,0,0,0>");
            assert_eq!(vector(&p, "Hospital", seed), "<0,0,0,0,0,0,0,0,1>");
        }
    }

    #[test]
    fn every_render_extracts_its_catalog_tuple() {
        let p = demo_pipeline();
        for spec in p.catalog().specs() {
            for seed in 0..5 {
                let img = render_sign(spec, 32, seed).unwrap();
                let names = p.feature_names(img.input());
                assert_eq!(names, [Some(spec.color.clone()), Some(spec.shape.name().to_string())], "{} seed {seed}", spec.name);
                let c = p.candidate_vector(img.input());
                assert!(c.is_set(LabelId(spec.index)));
            }
        }
    }

    #[test]
    fn renders_certify_beyond_five_hundredths_linf() {
        let p = demo_pipeline();
        let budget = DistortionBudget::new(NormKind::Linf, 0.05).unwrap();
        for spec in p.catalog().specs() {
            let img = render_sign(spec, 32, 3).unwrap();
            let cert = p.certify(img.input(), &budget);
            assert_eq!(cert.status, CertStatus::Certified, "{}: radius {}", spec.name, cert.radius);
        }
    }

    #[test]
    fn rendering_is_deterministic_and_seeded() {
        let c = default_catalog();
        let spec = &c.specs()[8];
        let a = render_sign(spec, 20, 11).unwrap();
        assert_eq!(a, render_sign(spec, 20, 11).unwrap());
        assert_ne!(a, render_sign(spec, 20, 12).unwrap());
        assert!(render_sign(spec, 15, 0).is_err());
    }

    #[test]
    fn shared_tuple_signs_render_differently() {
        let c = default_catalog();
        let left = SignRenderer { noise: 0.0, ..Default::default() }.render(&c.specs()[3], 32, 0).unwrap();
        let right = SignRenderer { noise: 0.0, ..Default::default() }.render(&c.specs()[4], 32, 0).unwrap();
        assert_ne!(left, right);
    }

    #[test]
    fn unknown_tuple_and_no_foreground() {
        let p = demo_pipeline();
        let blank = ImageInput::new(32, 32, vec![[0.5; 3]; 1024]).unwrap();
        let c = p.candidate_vector(blank.input());
        assert!(c.is_unknown());
        // A red diamond is not in the catalog.
        let spec = SignSpec::new(0, "Stop", "Red", Shape::Diamond, Legend::None);
        let c = p.candidate_vector(render_sign(&spec, 32, 0).unwrap().input());
        assert!(c.is_unknown() && c.count() == 0);
    }

    #[test]
    fn ppm_export_round_trips_to_eight_bits() {
        let dir = std::env::temp_dir().join(format!("signs-ppm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stop.ppm");
        let img = render_sign(&default_catalog().specs()[0], 16, 0).unwrap();
        save_ppm(&img, &path).unwrap();
        let back: ImageInput<f64> = ppm::load(&path).unwrap();
        for (a, b) in img.input().values().iter().zip(back.input().values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        std::fs::remove_dir_all(dir).unwrap();
    }
}
