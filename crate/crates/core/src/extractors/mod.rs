//! Margin-certified feature extractors over RGB images.
//!
//! Both extractors reduce every pixel to a discrete state (which anchor it
//! votes for, or whether it is foreground) and take a vote over those states.
//! A pixel's margin is how far it must move in RGB space to change state; the
//! vote margin says how many pixels must change state before the output can.
//! Together they give a radius within which the output provably stays put.

pub mod color;
pub mod image;
pub mod ppm;
pub mod shape;
pub mod shapes;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Classifier, DistortionBudget, Input, LabelId, NormKind};
use crate::scalar::{Real, Scalar};

pub use color::{ColorExtractor, ColorPalette, ColorState};
pub use image::ImageInput;
pub use shape::ShapeExtractor;
pub use shapes::Shape;

/// Output of an extractor: a label, or the absence of any foreground.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Feature {
    Label(LabelId),
    NoForeground,
}

impl Feature {
    pub fn label(self) -> Option<LabelId> {
        match self {
            Feature::Label(l) => Some(l),
            Feature::NoForeground => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CertMethod {
    /// No pixel can change state.
    PixelBoundary,
    /// Fewer pixels can change state than the vote margin requires.
    VoteMargin,
}

/// A radius (in the pipeline norm) within which the extractor's output is
/// provably unchanged: every `gamma` with `|gamma| < certified_radius` keeps it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginCertificate<T> {
    pub label: LabelId,
    pub certified_radius: T,
    pub method: CertMethod,
    pub pixel_boundary: T,
    pub vote_margin: T,
    /// Number of pixels that must change state to change the output.
    pub critical_rank: usize,
    pub norm: NormKind,
}

/// An extractor that can certify its own output.
pub trait CertifiedExtractor<T: Real>: Classifier<Input<T>, Output = Feature> {
    /// Label and certificate, or [`Error::NoForeground`].
    fn certify(&self, x: &Input<T>, norm: NormKind) -> Result<MarginCertificate<T>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertStatus {
    Certified,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResilienceCertificate {
    pub status: CertStatus,
    pub label: Option<LabelId>,
    pub radius: f64,
    pub method: Option<CertMethod>,
    pub norm: NormKind,
    pub lambda: f64,
}

/// `CERTIFIED` iff the certified radius reaches `lambda`; otherwise
/// `UNDECIDED`, which never claims the input is attackable. A zero budget
/// is always certified.
pub fn certify_at<T: Real, E: CertifiedExtractor<T> + ?Sized>(
    extractor: &E,
    x: &Input<T>,
    budget: &DistortionBudget<T>,
) -> ResilienceCertificate {
    let cert = extractor.certify(x, budget.norm);
    let (label, radius, method) = match &cert {
        Ok(c) => (Some(c.label), c.certified_radius, Some(c.method)),
        Err(_) => (None, T::zero(), None),
    };
    // The radius is an open bound, so only a zero budget may touch it.
    let certified = budget.lambda == T::zero() || radius >= budget.lambda;
    ResilienceCertificate {
        status: if certified {
            CertStatus::Certified
        } else {
            CertStatus::Undecided
        },
        label,
        radius: radius.as_f64(),
        method,
        norm: budget.norm,
        lambda: budget.lambda.as_f64(),
    }
}

/// Euclidean distance between two RGB triples.
pub fn rgb_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y))
        .sqrt()
}

/// Shrinks a computed radius by a few ulps so rounding never makes it unsound.
pub(crate) fn round_down<T: Real>(r: T) -> T {
    let sixteen = T::from_f64_lossy(16.0);
    (r * (T::one() - sixteen * T::epsilon())).max(T::zero())
}

/// Smallest distortion, in `norm` over the flat RGB input, that can move
/// `k` pixels across their state boundaries, given per-pixel margins
/// measured as Euclidean RGB distance.
///
/// Linf bounds each pixel's RGB displacement by `sqrt(3) * r`, so the k-th
/// smallest margin over `sqrt(3)` is needed. L2 needs the root of the sum of
/// the k smallest squared margins, and L1 (which bounds Euclidean length per
/// pixel) the sum of the k smallest margins. `k = 0` gives zero.
pub fn radius_from_margins<T: Real>(sorted_margins: &[T], k: usize, norm: NormKind) -> T {
    if k == 0 {
        return T::zero();
    }
    if k > sorted_margins.len() {
        return T::infinity();
    }
    let head = &sorted_margins[..k];
    let r = match norm {
        NormKind::Linf => head[k - 1] / T::from_f64_lossy(3.0).sqrt(),
        NormKind::L2 => head.iter().fold(T::zero(), |acc, b| acc + *b * *b).sqrt(),
        NormKind::L1 => head.iter().fold(T::zero(), |acc, b| acc + *b),
    };
    round_down(r)
}

/// Pixel-boundary and vote-margin radii, combined into a certificate.
pub(crate) fn certificate<T: Real>(
    label: LabelId,
    mut margins: Vec<T>,
    critical_rank: usize,
    norm: NormKind,
) -> MarginCertificate<T> {
    margins.sort_by(|a, b| a.partial_cmp(b).expect("margins are finite"));
    let pixel_boundary = radius_from_margins(&margins, 1, norm);
    let vote_margin = radius_from_margins(&margins, critical_rank, norm);
    let (certified_radius, method) = if vote_margin >= pixel_boundary {
        (vote_margin, CertMethod::VoteMargin)
    } else {
        (pixel_boundary, CertMethod::PixelBoundary)
    };
    MarginCertificate {
        label,
        certified_radius,
        method,
        pixel_boundary,
        vote_margin,
        critical_rank,
        norm,
    }
}

pub(crate) fn require_rgb<T: Scalar>(x: &Input<T>) -> Result<usize> {
    if x.dims() % 3 != 0 {
        return Err(Error::DimensionMismatch {
            expected: x.dims().div_ceil(3) * 3,
            found: x.dims(),
        });
    }
    Ok(x.dims() / 3)
}
