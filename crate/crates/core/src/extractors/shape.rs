use crate::error::{Error, Result};
use crate::model::{Classifier, Input, LabelId, LabelSet, NormKind};
use crate::scalar::Real;
use crate::verifier::Pixelwise;

use super::{certificate, require_rgb, rgb_distance, CertifiedExtractor, Feature, MarginCertificate, Shape};

/// Best-matching shape template for the binarized foreground mask.
///
/// A pixel is foreground when its RGB distance from the background colour
/// exceeds `tau`. Each template scores the number of pixels where it agrees
/// with the mask; the highest score wins, lowest index on ties.
#[derive(Clone, Debug)]
pub struct ShapeExtractor<T> {
    width: usize,
    height: usize,
    background: [T; 3],
    tau: T,
    templates: Vec<Vec<bool>>,
    labels: LabelSet,
}

impl<T: Real> ShapeExtractor<T> {
    pub fn new(width: usize, height: usize, background: [T; 3], tau: T, templates: Vec<(String, Vec<bool>)>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config("shape extractor needs at least one template".into()));
        }
        if let Some((name, _)) = templates.iter().find(|(_, m)| m.len() != width * height) {
            return Err(Error::Config(format!("template `{name}` does not match the {width}x{height} image size")));
        }
        let (names, templates): (Vec<String>, Vec<Vec<bool>>) = templates.into_iter().unzip();
        Ok(ShapeExtractor {
            width,
            height,
            background,
            tau,
            templates,
            labels: LabelSet::new("shape", names)?,
        })
    }

    /// The six standard templates rasterized at `width x height`.
    pub fn standard(width: usize, height: usize, background: [T; 3], tau: T) -> Result<Self> {
        let templates = Shape::ALL
            .iter()
            .map(|s| (s.name().to_string(), s.rasterize(width, height)))
            .collect();
        Self::new(width, height, background, tau, templates)
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn template(&self, label: LabelId) -> &[bool] {
        &self.templates[label.0]
    }

    fn pixel(&self, rgb: &[T]) -> (bool, T) {
        let d = rgb_distance(rgb, &self.background);
        (d > self.tau, (d - self.tau).abs())
    }

    fn mask(&self, x: &Input<T>) -> Vec<(bool, T)> {
        assert_eq!(
            x.dims(),
            3 * self.width * self.height,
            "shape extractor built for {}x{} images",
            self.width,
            self.height
        );
        x.values().chunks(3).map(|p| self.pixel(p)).collect()
    }

    fn agreements(&self, mask: &[bool]) -> Vec<usize> {
        self.templates
            .iter()
            .map(|t| t.iter().zip(mask).filter(|(a, b)| a == b).count())
            .collect()
    }

    /// Best template, its lead over the runner-up (`None` with one template),
    /// and the runner-up.
    fn tally(&self, mask: &[bool]) -> Option<(LabelId, Option<usize>, Option<usize>)> {
        if !mask.iter().any(|b| *b) {
            return None;
        }
        let scores = self.agreements(mask);
        let (w, &top) = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one template");
        let runner = scores
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != w)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)));
        Some((LabelId(w), runner.map(|(_, s)| top - s), runner.map(|(j, _)| j)))
    }

    /// Best template and certificate, or [`Error::NoForeground`].
    ///
    /// Flipping one pixel moves the score gap between two templates by at
    /// most two, so changing the winner takes `ceil(lead / 2)` flips; emptying
    /// the mask takes one flip per foreground pixel.
    pub fn extract(&self, x: &Input<T>, norm: NormKind) -> Result<MarginCertificate<T>> {
        require_rgb(x)?;
        let pixels = self.mask(x);
        let (mask, margins): (Vec<bool>, Vec<T>) = pixels.into_iter().unzip();
        let (label, lead, _) = self.tally(&mask).ok_or(Error::NoForeground)?;
        let foreground = mask.iter().filter(|b| **b).count();
        let rank = match lead {
            Some(m) => m.div_ceil(2).min(foreground),
            None => foreground,
        };
        Ok(certificate(label, margins, rank, norm))
    }
}

impl Default for ShapeExtractor<f64> {
    /// Standard templates at 32x32, mid-grey background, threshold 0.3.
    fn default() -> Self {
        ShapeExtractor::standard(32, 32, [0.5; 3], 0.3).expect("valid defaults")
    }
}

impl<T: Real> Classifier<Input<T>> for ShapeExtractor<T> {
    type Output = Feature;

    fn classify(&self, x: &Input<T>) -> Feature {
        let mask: Vec<bool> = self.mask(x).into_iter().map(|p| p.0).collect();
        self.output_from_states(&mask)
    }

    /// Score lead plus the mean normalized threshold margin of the pixels
    /// that currently separate the winner from the runner-up in its favour.
    fn score_margin(&self, x: &Input<T>, current: &Feature) -> Option<f64> {
        let Feature::Label(w) = current else { return None };
        let pixels = self.mask(x);
        let mask: Vec<bool> = pixels.iter().map(|p| p.0).collect();
        let (_, lead, runner) = self.tally(&mask)?;
        let (Some(lead), Some(r)) = (lead, runner) else {
            return Some(f64::INFINITY);
        };
        let (tw, tr) = (&self.templates[w.0], &self.templates[r]);
        let supporting: Vec<f64> = pixels
            .iter()
            .enumerate()
            .filter(|(p, (m, _))| tw[*p] != tr[*p] && *m == tw[*p])
            .map(|(_, (_, margin))| margin.as_f64() / self.tau.as_f64().max(1e-12))
            .collect();
        let slack = if supporting.is_empty() {
            0.0
        } else {
            supporting.iter().sum::<f64>() / (2.0 * supporting.len() as f64)
        };
        Some(lead as f64 + slack.min(0.5))
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.labels)
    }
}

impl<T: Real> CertifiedExtractor<T> for ShapeExtractor<T> {
    fn certify(&self, x: &Input<T>, norm: NormKind) -> Result<MarginCertificate<T>> {
        self.extract(x, norm)
    }
}

impl<T: Real> Pixelwise<T> for ShapeExtractor<T> {
    type State = bool;

    fn pixel_state(&self, pixel: &[T]) -> bool {
        self.pixel(pixel).0
    }

    fn output_from_states(&self, mask: &[bool]) -> Feature {
        match self.tally(mask) {
            Some((l, _, _)) => Feature::Label(l),
            None => Feature::NoForeground,
        }
    }

    /// For each rival template, every pixel takes the rival's value where it
    /// can, which maximizes the rival's score minus the winner's. Also tries
    /// the emptiest and the fullest reachable masks.
    fn changing_assignment(&self, current: &Feature, reachable: &[Vec<bool>]) -> Option<Vec<bool>> {
        let try_assign = |pick: &dyn Fn(usize, &[bool]) -> bool| {
            let mask: Vec<bool> = reachable.iter().enumerate().map(|(p, r)| pick(p, r)).collect();
            (self.output_from_states(&mask) != *current).then_some(mask)
        };
        for (j, t) in self.templates.iter().enumerate() {
            if *current == Feature::Label(LabelId(j)) {
                continue;
            }
            let pick = |p: usize, r: &[bool]| if r.contains(&t[p]) { t[p] } else { r[0] };
            if let Some(mask) = try_assign(&pick) {
                return Some(mask);
            }
        }
        let empty = |_: usize, r: &[bool]| !r.contains(&false);
        let full = |_: usize, r: &[bool]| r.contains(&true);
        try_assign(&empty).or_else(|| try_assign(&full))
    }
}
