use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::PrepError;
use crate::io::VertebraLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub label: VertebraLabel,
    pub position_mm: [f64; 3],
}

/// Vertebral body centroids in world coordinates, ordered superior→inferior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    centroids: Vec<Centroid>,
}

impl CentroidSet {
    pub fn new(mut centroids: Vec<Centroid>) -> Result<Self, PrepError> {
        if centroids.len() < 2 {
            return Err(PrepError::InvalidCentroids(format!(
                "need at least 2 centroids, got {}",
                centroids.len()
            )));
        }
        if let Some(c) = centroids.iter().find(|c| c.position_mm.iter().any(|v| !v.is_finite())) {
            return Err(PrepError::InvalidCentroids(format!("non-finite position for {}", c.label)));
        }
        centroids.sort_by_key(|c| c.label);
        if let Some(w) = centroids.windows(2).find(|w| w[0].label == w[1].label) {
            return Err(PrepError::InvalidCentroids(format!("duplicate label {}", w[0].label)));
        }
        Ok(Self { centroids })
    }

    pub fn items(&self) -> &[Centroid] {
        &self.centroids
    }

    pub fn get(&self, label: VertebraLabel) -> Option<&Centroid> {
        self.centroids.iter().find(|c| c.label == label)
    }
}

/// Centroid JSON document: `{"centroids": [{"label": "T12", "position_mm": [x, y, z]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentroidFile {
    pub centroids: Vec<Centroid>,
}

/// C¹ Catmull–Rom interpolant through the centroids, chord-length parameterised.
///
/// Interior tangents are the centred difference `(P[i+1] - P[i-1]) / (t[i+1] - t[i-1])`;
/// the end tangents are one-sided differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineSpline {
    labels: Vec<VertebraLabel>,
    knots: Vec<f64>,
    points: Vec<Vector3<f64>>,
    /// Per segment: cubic coefficients in the local parameter `s = t - knots[i]`.
    segments: Vec<[Vector3<f64>; 4]>,
}

pub fn build_spline(c: &CentroidSet) -> Result<SpineSpline, PrepError> {
    let items = c.items();
    let points: Vec<Vector3<f64>> = items.iter().map(|c| Vector3::from(c.position_mm)).collect();
    let mut knots = Vec::with_capacity(points.len());
    knots.push(0.0);
    for (i, w) in points.windows(2).enumerate() {
        let chord = (w[1] - w[0]).norm();
        if chord < 1e-9 {
            return Err(PrepError::DegenerateCentroids {
                first: items[i].label,
                second: items[i + 1].label,
            });
        }
        knots.push(knots[i] + chord);
    }
    let n = points.len();
    let tangents: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (points[b] - points[a]) / (knots[b] - knots[a])
        })
        .collect();
    let segments = (0..n - 1)
        .map(|i| {
            let h = knots[i + 1] - knots[i];
            let (p0, p1) = (points[i], points[i + 1]);
            let (m0, m1) = (tangents[i], tangents[i + 1]);
            let slope = (p1 - p0) / h;
            let c2 = (slope * 3.0 - m0 * 2.0 - m1) / h;
            let c3 = (m0 + m1 - slope * 2.0) / (h * h);
            [p0, m0, c2, c3]
        })
        .collect();
    Ok(SpineSpline {
        labels: items.iter().map(|c| c.label).collect(),
        knots,
        points,
        segments,
    })
}

impl SpineSpline {
    pub fn labels(&self) -> &[VertebraLabel] {
        &self.labels
    }

    /// Total chord length, the parameter range is `[0, length]`.
    pub fn length(&self) -> f64 {
        *self.knots.last().expect("at least two knots")
    }

    pub fn knot(&self, label: VertebraLabel) -> Option<f64> {
        self.labels.iter().position(|&l| l == label).map(|i| self.knots[i])
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let t = t.clamp(0.0, self.length());
        let seg = match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.segments.len() - 1),
        };
        (seg, t - self.knots[seg])
    }

    pub fn position(&self, t: f64) -> Point3<f64> {
        let (seg, s) = self.locate(t);
        let [a, b, c, d] = &self.segments[seg];
        Point3::from(a + (b + (c + d * s) * s) * s)
    }

    /// First derivative with respect to the chord-length parameter.
    pub fn derivative(&self, t: f64) -> Vector3<f64> {
        let (seg, s) = self.locate(t);
        let [_, b, c, d] = &self.segments[seg];
        b + (c * 2.0 + d * (3.0 * s)) * s
    }

    /// Unit tangent at a control point, pointing in the superior→inferior
    /// direction of the centroid ordering.
    pub fn tangent_at(&self, label: VertebraLabel) -> Option<Vector3<f64>> {
        let i = self.labels.iter().position(|&l| l == label)?;
        let d = if i < self.segments.len() {
            self.segments[i][1]
        } else {
            self.derivative(self.length())
        };
        Some(d.normalize())
    }

    pub fn control_point(&self, label: VertebraLabel) -> Option<Point3<f64>> {
        let i = self.labels.iter().position(|&l| l == label)?;
        Some(Point3::from(self.points[i]))
    }
}
