//! Binary morphology on labelled point clouds.
//!
//! A cloud is split into positives `A` and negatives `B`. Operators move
//! points between the two sets and never add or remove points. The
//! structuring element is a ball of radius `r`, boundary included.

use crate::geom::Point3;
use crate::spatial::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Dilation,
    Erosion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composite {
    Closing,
    Opening,
}

/// Indices of the points of `a` that lie within `r` of some point of `b`.
pub fn neighborhood_subset(a: &[Point3], b: &[Point3], r: f64) -> Vec<usize> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let index = PointIndex::build(b, cell_for(r));
    (0..a.len()).filter(|&i| index.any_within(&a[i], r)).collect()
}

fn cell_for(r: f64) -> f64 {
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// Flips every point labelled `!from` within `r` of a point labelled `from`
/// into `from`. Dilation is `flip(true)`, erosion `flip(false)`.
fn flip(points: &[Point3], mask: &mut [bool], r: f64, from: bool) {
    let sources: Vec<Point3> = points
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m == from)
        .map(|(p, _)| *p)
        .collect();
    if sources.is_empty() || sources.len() == points.len() {
        return;
    }
    let index = PointIndex::build(&sources, cell_for(r));
    let flipped: Vec<usize> = (0..points.len())
        .filter(|&i| mask[i] != from && index.any_within(&points[i], r))
        .collect();
    for i in flipped {
        mask[i] = from;
    }
}

/// Applies a primitive in place on a positive mask over `points`.
pub fn primitive_mask(kind: Primitive, points: &[Point3], mask: &mut [bool], r: f64) {
    assert_eq!(points.len(), mask.len(), "mask length must match the cloud");
    match kind {
        Primitive::Dilation => flip(points, mask, r, true),
        Primitive::Erosion => flip(points, mask, r, false),
    }
}

/// Closing is erosion after dilation, opening is dilation after erosion.
pub fn composite_mask(kind: Composite, points: &[Point3], mask: &mut [bool], r: f64) {
    let (first, second) = match kind {
        Composite::Closing => (Primitive::Dilation, Primitive::Erosion),
        Composite::Opening => (Primitive::Erosion, Primitive::Dilation),
    };
    primitive_mask(first, points, mask, r);
    primitive_mask(second, points, mask, r);
}

/// Positives and negatives held as separate clouds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiCloud {
    pub positives: Vec<Point3>,
    pub negatives: Vec<Point3>,
}

impl BiCloud {
    pub fn new(positives: Vec<Point3>, negatives: Vec<Point3>) -> Self {
        BiCloud { positives, negatives }
    }

    fn split(points: Vec<Point3>, mask: &[bool]) -> Self {
        let mut out = BiCloud::default();
        for (p, &m) in points.into_iter().zip(mask) {
            if m {
                out.positives.push(p);
            } else {
                out.negatives.push(p);
            }
        }
        out
    }

    fn joined(&self) -> (Vec<Point3>, Vec<bool>) {
        let mut points = self.positives.clone();
        points.extend_from_slice(&self.negatives);
        let mut mask = vec![true; self.positives.len()];
        mask.resize(points.len(), false);
        (points, mask)
    }

    /// Positives keep their relative order first, then flipped negatives in
    /// their own order; same for negatives.
    pub fn primitive(&self, kind: Primitive, r: f64) -> BiCloud {
        let (points, mut mask) = self.joined();
        primitive_mask(kind, &points, &mut mask, r);
        BiCloud::split(points, &mask)
    }

    pub fn composite(&self, kind: Composite, r: f64) -> BiCloud {
        let (points, mut mask) = self.joined();
        composite_mask(kind, &points, &mut mask, r);
        BiCloud::split(points, &mask)
    }

    pub fn dilation(&self, r: f64) -> BiCloud {
        self.primitive(Primitive::Dilation, r)
    }

    pub fn erosion(&self, r: f64) -> BiCloud {
        self.primitive(Primitive::Erosion, r)
    }

    pub fn closing(&self, r: f64) -> BiCloud {
        self.composite(Composite::Closing, r)
    }

    pub fn opening(&self, r: f64) -> BiCloud {
        self.composite(Composite::Opening, r)
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
