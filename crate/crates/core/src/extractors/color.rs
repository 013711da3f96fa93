use crate::error::{Error, Result};
use crate::model::{Classifier, Input, LabelId, LabelSet, NormKind};
use crate::scalar::Real;
use crate::verifier::Pixelwise;

use super::{certificate, require_rgb, rgb_distance, CertifiedExtractor, Feature, MarginCertificate};

/// Named anchor colours. One anchor may be marked as the background: pixels
/// nearest to it are treated as scene, not sign, and do not vote.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorPalette<T> {
    names: Vec<String>,
    anchors: Vec<[T; 3]>,
    background: Option<usize>,
}

impl<T: Real> ColorPalette<T> {
    pub fn new(anchors: Vec<(String, [T; 3])>, background: Option<usize>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::Config("a palette needs at least two anchors".into()));
        }
        for i in 0..anchors.len() {
            for j in 0..i {
                if anchors[i].1 == anchors[j].1 {
                    return Err(Error::Config(format!(
                        "anchors `{}` and `{}` share a colour",
                        anchors[j].0, anchors[i].0
                    )));
                }
                if anchors[i].0 == anchors[j].0 {
                    return Err(Error::DuplicateLabel(anchors[i].0.clone()));
                }
            }
        }
        if background.is_some_and(|b| b >= anchors.len()) {
            return Err(Error::Config("background anchor index out of range".into()));
        }
        let (names, anchors) = anchors.into_iter().unzip();
        Ok(ColorPalette {
            names,
            anchors,
            background,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn anchors(&self) -> &[[T; 3]] {
        &self.anchors
    }

    pub fn background(&self) -> Option<usize> {
        self.background
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Nearest and second-nearest anchor distances; ties go to the lower index.
    fn nearest(&self, rgb: &[T]) -> (usize, T, T) {
        let mut best = (0, T::infinity(), T::infinity());
        for (i, a) in self.anchors.iter().enumerate() {
            let d = rgb_distance(rgb, a);
            if d < best.1 {
                best = (i, d, best.1);
            } else if d < best.2 {
                best.2 = d;
            }
        }
        best
    }
}

impl Default for ColorPalette<f64> {
    /// Red, Yellow, Blue, White and a mid-grey Background anchor.
    fn default() -> Self {
        let anchors = [
            ("Red", [1.0, 0.0, 0.0]),
            ("Yellow", [1.0, 1.0, 0.0]),
            ("Blue", [0.0, 0.0, 1.0]),
            ("White", [1.0, 1.0, 1.0]),
            ("Background", [0.5, 0.5, 0.5]),
        ];
        ColorPalette::new(
            anchors.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
            Some(4),
        )
        .expect("default palette is valid")
    }
}

/// What a pixel contributes to the colour vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColorState {
    /// Within the background radius: not part of the sign.
    Excluded,
    /// Nearest to this palette anchor. Pixels nearest to the background
    /// anchor are in this state but do not vote.
    Anchor(usize),
}

/// Dominant colour by plurality vote of non-background pixels.
#[derive(Clone, Debug)]
pub struct ColorExtractor<T> {
    palette: ColorPalette<T>,
    background: [T; 3],
    tau: T,
    labels: LabelSet,
    /// Output label of each palette anchor; `None` for the background anchor.
    label_of: Vec<Option<LabelId>>,
}

impl<T: Real> ColorExtractor<T> {
    pub fn new(palette: ColorPalette<T>, background: [T; 3], tau: T) -> Result<Self> {
        if tau < T::zero() {
            return Err(Error::Config("background threshold must be non-negative".into()));
        }
        let mut names = Vec::new();
        let mut label_of = Vec::new();
        for (i, name) in palette.names().iter().enumerate() {
            if palette.background() == Some(i) {
                label_of.push(None);
            } else {
                label_of.push(Some(LabelId(names.len())));
                names.push(name.clone());
            }
        }
        Ok(ColorExtractor {
            labels: LabelSet::new("color", names)?,
            palette,
            background,
            tau,
            label_of,
        })
    }

    pub fn palette(&self) -> &ColorPalette<T> {
        &self.palette
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    /// State of one pixel and the RGB distance it must move to leave it.
    fn pixel(&self, rgb: &[T]) -> (ColorState, T) {
        let d_bg = rgb_distance(rgb, &self.background);
        if d_bg <= self.tau {
            return (ColorState::Excluded, self.tau - d_bg);
        }
        let (i, d1, d2) = self.palette.nearest(rgb);
        let two = T::one() + T::one();
        (ColorState::Anchor(i), (d_bg - self.tau).min((d2 - d1) / two))
    }

    fn votes(&self, states: &[ColorState]) -> Vec<usize> {
        let mut counts = vec![0usize; self.labels.len()];
        for s in states {
            if let ColorState::Anchor(i) = s {
                if let Some(l) = self.label_of[*i] {
                    counts[l.0] += 1;
                }
            }
        }
        counts
    }

    /// Winner (lowest label on ties) and its lead over the runner-up.
    fn tally(counts: &[usize]) -> Option<(LabelId, usize)> {
        let (w, &top) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        if top == 0 {
            return None;
        }
        let runner = counts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != w)
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(0);
        Some((LabelId(w), top - runner))
    }

    /// Dominant colour and certificate, or [`Error::NoForeground`].
    pub fn extract(&self, x: &Input<T>, norm: NormKind) -> Result<MarginCertificate<T>> {
        require_rgb(x)?;
        let (states, margins): (Vec<ColorState>, Vec<T>) = x.values().chunks(3).map(|p| self.pixel(p)).unzip();
        let (label, lead) = Self::tally(&self.votes(&states)).ok_or(Error::NoForeground)?;
        Ok(certificate(label, margins, lead.div_ceil(2), norm))
    }
}

impl Default for ColorExtractor<f64> {
    /// Default palette, mid-grey background, background radius 0.15.
    fn default() -> Self {
        ColorExtractor::new(ColorPalette::default(), [0.5; 3], 0.15).expect("valid defaults")
    }
}

impl<T: Real> Classifier<Input<T>> for ColorExtractor<T> {
    type Output = Feature;

    fn classify(&self, x: &Input<T>) -> Feature {
        let states: Vec<ColorState> = x.values().chunks(3).map(|p| self.pixel(p).0).collect();
        self.output_from_states(&states)
    }

    /// Vote lead plus the mean half-margin of the winner's voters, so that
    /// pushing voters toward their boundary lowers the score.
    fn score_margin(&self, x: &Input<T>, current: &Feature) -> Option<f64> {
        let Feature::Label(w) = current else { return None };
        let pixels: Vec<(ColorState, T)> = x.values().chunks(3).map(|p| self.pixel(p)).collect();
        let states: Vec<ColorState> = pixels.iter().map(|p| p.0).collect();
        let counts = self.votes(&states);
        let runner = counts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != w.0)
            .map(|(_, c)| *c)
            .max()
            .unwrap_or(0);
        let voters: Vec<f64> = pixels
            .iter()
            .filter(|(s, _)| matches!(s, ColorState::Anchor(i) if self.label_of[*i] == Some(*w)))
            .map(|(_, m)| m.as_f64())
            .collect();
        let slack = if voters.is_empty() {
            0.0
        } else {
            voters.iter().sum::<f64>() / (2.0 * voters.len() as f64)
        };
        Some(counts[w.0] as f64 - runner as f64 + slack)
    }

    fn output_labels(&self) -> Option<&LabelSet> {
        Some(&self.labels)
    }
}

impl<T: Real> CertifiedExtractor<T> for ColorExtractor<T> {
    fn certify(&self, x: &Input<T>, norm: NormKind) -> Result<MarginCertificate<T>> {
        self.extract(x, norm)
    }
}

impl<T: Real> Pixelwise<T> for ColorExtractor<T> {
    type State = ColorState;

    fn pixel_state(&self, pixel: &[T]) -> ColorState {
        self.pixel(pixel).0
    }

    fn output_from_states(&self, states: &[ColorState]) -> Feature {
        match Self::tally(&self.votes(states)) {
            Some((l, _)) => Feature::Label(l),
            None => Feature::NoForeground,
        }
    }

    /// For each rival colour, every pixel that can vote for it does and every
    /// other pixel avoids the current winner where it can; this maximizes the
    /// rival's lead, so if no rival wins this way none can. Also tries
    /// silencing every pixel, and, from no foreground, any vote at all.
    fn changing_assignment(&self, current: &Feature, reachable: &[Vec<ColorState>]) -> Option<Vec<ColorState>> {
        let votes_for = |s: &ColorState| match s {
            ColorState::Anchor(i) => self.label_of[*i],
            ColorState::Excluded => None,
        };
        let winner = current.label();
        let try_assign = |pick: &dyn Fn(&[ColorState]) -> ColorState| {
            let assignment: Vec<ColorState> = reachable.iter().map(|r| pick(r)).collect();
            (self.output_from_states(&assignment) != *current).then_some(assignment)
        };
        for target in self.labels.ids().filter(|l| Some(*l) != winner) {
            let pick = |r: &[ColorState]| {
                r.iter()
                    .find(|s| votes_for(s) == Some(target))
                    .or_else(|| r.iter().find(|s| votes_for(s).is_none()))
                    .or_else(|| r.iter().find(|s| votes_for(s) != winner))
                    .copied()
                    .unwrap_or(r[0])
            };
            if let Some(a) = try_assign(&pick) {
                return Some(a);
            }
        }
        let silent = |r: &[ColorState]| r.iter().find(|s| votes_for(s).is_none()).copied().unwrap_or(r[0]);
        if let Some(a) = try_assign(&silent) {
            return Some(a);
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractors::ImageInput;

    fn image(pixels: Vec<[f64; 3]>) -> Input<f64> {
        let n = pixels.len();
        ImageInput::new(n, 1, pixels).unwrap().into_input()
    }

    #[test]
    fn uniform_red_foreground() {
        let e = ColorExtractor::default();
        let mut px = vec![[0.5, 0.5, 0.5]; 4];
        px.extend(vec![[1.0, 0.0, 0.0]; 6]);
        let c = e.extract(&image(px), NormKind::Linf).unwrap();
        assert_eq!(e.labels().name(c.label), Some("Red"));
        // Red pixels: nearest Red at 0, second Background at sqrt(0.75); half gap
        // sqrt(0.75)/2. Grey pixels: tau - 0 = 0.15, the binding pixel margin.
        // Vote lead 6 needs 3 pixels; the third smallest margin is still 0.15.
        let gap = 0.75f64.sqrt() / 2.0;
        assert!(gap > 0.15);
        let expect = 0.15 / 3f64.sqrt();
        assert!((c.pixel_boundary - expect).abs() < 1e-12);
        assert!((c.vote_margin - expect).abs() < 1e-12);
        assert_eq!(c.critical_rank, 3);
        // Foreground only: every margin is the red half-gap.
        let c = e.extract(&image(vec![[1.0, 0.0, 0.0]; 6]), NormKind::Linf).unwrap();
        assert!((c.certified_radius - gap / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn equidistant_foreground_ties_to_lowest_index() {
        // (1, 0.5, 0) is equidistant from Red and Yellow.
        let e = ColorExtractor::default();
        let c = e.extract(&image(vec![[1.0, 0.5, 0.0]; 3]), NormKind::Linf).unwrap();
        assert_eq!(e.labels().name(c.label), Some("Red"));
        assert_eq!(c.certified_radius, 0.0);
    }

    #[test]
    fn vote_tie_gives_zero_radius() {
        let e = ColorExtractor::default();
        let x = image(vec![[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]);
        let c = e.extract(&x, NormKind::L2).unwrap();
        assert_eq!(e.labels().name(c.label), Some("Yellow"));
        assert_eq!(c.critical_rank, 0);
        assert_eq!(c.vote_margin, 0.0);
    }

    #[test]
    fn background_only_is_no_foreground() {
        let e = ColorExtractor::default();
        let x = image(vec![[0.5, 0.5, 0.5], [0.45, 0.5, 0.55]]);
        assert!(matches!(e.extract(&x, NormKind::Linf), Err(Error::NoForeground)));
        assert_eq!(e.classify(&x), Feature::NoForeground);
        // Charcoal is far from the background but nearest the grey anchor: no vote.
        let x = image(vec![[0.2, 0.2, 0.2]]);
        assert_eq!(e.classify(&x), Feature::NoForeground);
    }

    #[test]
    fn palette_validation() {
        let dup = vec![("A".to_string(), [0.0; 3]), ("B".to_string(), [0.0; 3])];
        assert!(ColorPalette::new(dup, None).is_err());
        assert!(ColorPalette::new(vec![("A".to_string(), [0.0; 3])], None).is_err());
    }

    #[test]
    fn palette_order_only_affects_ties() {
        let e = ColorExtractor::default();
        let reversed = {
            let p = ColorPalette::default();
            let mut anchors: Vec<(String, [f64; 3])> = p.names().iter().cloned().zip(p.anchors().iter().copied()).collect();
            anchors.reverse();
            ColorExtractor::new(ColorPalette::new(anchors, Some(0)).unwrap(), [0.5; 3], 0.15).unwrap()
        };
        let x = image(vec![[0.9, 0.1, 0.1], [0.9, 0.1, 0.0], [0.1, 0.1, 0.9], [0.5, 0.5, 0.5]]);
        let a = e.classify(&x).label().unwrap();
        let b = reversed.classify(&x).label().unwrap();
        assert_eq!(e.labels().name(a), reversed.labels().name(b));
    }
}
