//! Transform families, their search domains, and their action on images.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

/// A point in a transform parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformPoint(pub Vec<f64>);

impl TransformPoint {
    pub fn new(params: Vec<f64>) -> Self {
        Self(params)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for TransformPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

impl From<Vec<f64>> for TransformPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// How a parameter vector acts on an image.
///
/// Composite kinds consume their members' parameters by concatenation in
/// declaration order and apply the members in that same order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    /// `[angle_deg]`, counterclockwise.
    RotationDeg,
    /// `[L_u, L_v]` log-chroma of a von Kries illuminant.
    ColorLogChroma,
    /// `[log_gamma]`.
    GammaLog,
    Composite { parts: Vec<TransformKind> },
    /// No image action; `dim` free parameters. Used to drive the optimizer
    /// on synthetic objectives.
    Synthetic { dim: usize },
}

impl TransformKind {
    pub fn dim(&self) -> usize {
        match self {
            TransformKind::RotationDeg | TransformKind::GammaLog => 1,
            TransformKind::ColorLogChroma => 2,
            TransformKind::Composite { parts } => parts.iter().map(TransformKind::dim).sum(),
            TransformKind::Synthetic { dim } => *dim,
        }
    }

    /// Whether applying a point of this kind touches the image at all.
    pub fn acts_on_image(&self) -> bool {
        match self {
            TransformKind::Synthetic { .. } => false,
            TransformKind::Composite { parts } => parts.iter().any(TransformKind::acts_on_image),
            _ => true,
        }
    }

    /// The all-zero parameter vector: the identity for rotation and gamma, a
    /// uniform `1/sqrt(3)` scaling for color.
    pub fn identity(&self) -> TransformPoint {
        TransformPoint(vec![0.0; self.dim()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Argument("box domain needs at least one dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Argument(format!(
                    "box dimension {i} needs finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, point: &TransformPoint) -> bool {
        point.dim() == self.dim()
            && point
                .0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, unit: &[f64]) -> TransformPoint {
        TransformPoint(
            unit.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(u, (lo, hi))| (lo + u * (hi - lo)).clamp(*lo, *hi))
                .collect(),
        )
    }

    /// Map a box point into the unit cube.
    pub fn to_unit(&self, point: &TransformPoint) -> Vec<f64> {
        point
            .0
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SearchSpace {
    Discrete { points: Vec<TransformPoint> },
    Box { bounds: BoxBounds },
}

/// A transform family paired with the set of parameters to search over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformDomain {
    pub kind: TransformKind,
    pub space: SearchSpace,
}

impl TransformDomain {
    pub fn discrete(kind: TransformKind, points: Vec<TransformPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Argument("discrete domain must not be empty".into()));
        }
        let dim = kind.dim();
        if let Some(bad) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(Self {
            kind,
            space: SearchSpace::Discrete { points },
        })
    }

    pub fn boxed(kind: TransformKind, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let bounds = BoxBounds::new(lower, upper)?;
        if bounds.dim() != kind.dim() {
            return Err(Error::DimensionMismatch {
                expected: kind.dim(),
                actual: bounds.dim(),
            });
        }
        Ok(Self {
            kind,
            space: SearchSpace::Box { bounds },
        })
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn bounds(&self) -> Option<&BoxBounds> {
        match &self.space {
            SearchSpace::Box { bounds } => Some(bounds),
            SearchSpace::Discrete { .. } => None,
        }
    }

    pub fn points(&self) -> Option<&[TransformPoint]> {
        match &self.space {
            SearchSpace::Discrete { points } => Some(points),
            SearchSpace::Box { .. } => None,
        }
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(angle_deg: f64) -> (f64, f64) {
    let a = angle_deg.rem_euclid(360.0);
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == 90.0 {
        (1.0, 0.0)
    } else if a == 180.0 {
        (0.0, -1.0)
    } else if a == 270.0 {
        (-1.0, 0.0)
    } else {
        a.to_radians().sin_cos()
    }
}

/// Rotate counterclockwise about the image center with bilinear sampling.
///
/// The output keeps the input dimensions; destination pixels whose source
/// falls outside the image take `fill`. At multiples of 90° on grids where
/// the source coordinates are integral the result is an exact permutation.
pub fn rotate(image: &Image, angle_deg: f64, fill: [f64; 3]) -> Result<Image> {
    if !angle_deg.is_finite() {
        return Err(Error::Argument(format!("rotation angle {angle_deg} is not finite")));
    }
    let (sin_a, cos_a) = sin_cos_deg(angle_deg);
    if sin_a == 0.0 && cos_a == 1.0 {
        return Ok(image.clone());
    }
    let (h, w) = (image.height(), image.width());
    let (cy, cx) = image.center();
    let max_x = w as f64 - 1.0;
    let max_y = h as f64 - 1.0;
    const EPS: f64 = 1e-9;

    let mut data = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let src_x = cx + cos_a * dx - sin_a * dy;
            let src_y = cy + sin_a * dx + cos_a * dy;
            if src_x < -EPS || src_y < -EPS || src_x > max_x + EPS || src_y > max_y + EPS {
                data.extend_from_slice(&fill);
                continue;
            }
            let src_x = src_x.clamp(0.0, max_x);
            let src_y = src_y.clamp(0.0, max_y);
            let x0 = src_x.floor() as usize;
            let y0 = src_y.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = src_x - x0 as f64;
            let fy = src_y - y0 as f64;
            if fx == 0.0 && fy == 0.0 {
                data.extend_from_slice(&image.rgb(y0, x0));
                continue;
            }
            for c in 0..CHANNELS {
                let top = image.get(y0, x0, c) * (1.0 - fx) + image.get(y0, x1, c) * fx;
                let bottom = image.get(y1, x0, c) * (1.0 - fx) + image.get(y1, x1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Image::from_clamped(h, w, data))
}

/// Unit-norm RGB illuminant for log-chroma `(L_u, L_v)`.
pub fn illuminant_from_chroma(l_u: f64, l_v: f64) -> [f64; 3] {
    let r = (-l_u).exp();
    let b = (-l_v).exp();
    let z = (r * r + b * b + 1.0).sqrt();
    [r / z, 1.0 / z, b / z]
}

/// Von Kries color shift: scale each channel by the illuminant, then clamp.
pub fn apply_color(image: &Image, l_u: f64, l_v: f64) -> Image {
    let illum = illuminant_from_chroma(l_u, l_v);
    image.map_pixels(|p| [p[0] * illum[0], p[1] * illum[1], p[2] * illum[2]])
}

/// Gamma contrast change `p -> p^exp(log_gamma)`.
pub fn apply_gamma(image: &Image, log_gamma: f64) -> Image {
    if log_gamma == 0.0 {
        return image.clone();
    }
    let gamma = log_gamma.exp();
    image.map_values(|p| p.powf(gamma))
}

/// Apply the transform described by `point` under `kind`.
pub fn apply_point(kind: &TransformKind, point: &TransformPoint, image: &Image) -> Result<Image> {
    if point.dim() != kind.dim() {
        return Err(Error::DimensionMismatch {
            expected: kind.dim(),
            actual: point.dim(),
        });
    }
    let p = point.params();
    match kind {
        TransformKind::RotationDeg => rotate(image, p[0], [0.0; 3]),
        TransformKind::ColorLogChroma => Ok(apply_color(image, p[0], p[1])),
        TransformKind::GammaLog => Ok(apply_gamma(image, p[0])),
        TransformKind::Synthetic { .. } => Ok(image.clone()),
        TransformKind::Composite { parts } => {
            let mut current = image.clone();
            let mut offset = 0;
            for part in parts {
                let d = part.dim();
                let sub = TransformPoint(p[offset..offset + d].to_vec());
                current = apply_point(part, &sub, &current)?;
                offset += d;
            }
            Ok(current)
        }
    }
}

/// The cyclic rotation group C_n as a discrete domain, starting at 0°.
pub fn enumerate_cn(n: usize) -> Result<TransformDomain> {
    if n == 0 {
        return Err(Error::Argument("C_n needs n >= 1".into()));
    }
    let points = (0..n)
        .map(|k| TransformPoint(vec![360.0 * k as f64 / n as f64]))
        .collect();
    TransformDomain::discrete(TransformKind::RotationDeg, points)
}

/// `count` i.i.d. uniform points in a box domain.
pub fn sample_uniform(domain: &TransformDomain, count: usize, seed: u64) -> Result<Vec<TransformPoint>> {
    let bounds = domain
        .bounds()
        .ok_or_else(|| Error::Argument("uniform sampling requires a box domain".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_box(bounds, count, &mut rng))
}

pub(crate) fn sample_box(bounds: &BoxBounds, count: usize, rng: &mut impl Rng) -> Vec<TransformPoint> {
    (0..count)
        .map(|_| {
            let unit: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
            bounds.from_unit(&unit)
        })
        .collect()
}

/// Cartesian product of inclusive uniform grids, last dimension varying fastest.
/// A count of 1 places the single grid value at the box midpoint.
pub fn grid_points(domain: &TransformDomain, per_dim: &[usize]) -> Result<Vec<TransformPoint>> {
    let bounds = domain
        .bounds()
        .ok_or_else(|| Error::Argument("grid construction requires a box domain".into()))?;
    box_grid(bounds, per_dim)
}

pub(crate) fn box_grid(bounds: &BoxBounds, per_dim: &[usize]) -> Result<Vec<TransformPoint>> {
    if per_dim.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            actual: per_dim.len(),
        });
    }
    if per_dim.contains(&0) {
        return Err(Error::Argument("grid counts must be >= 1".into()));
    }
    let axes: Vec<Vec<f64>> = per_dim
        .iter()
        .zip(bounds.lower().iter().zip(bounds.upper()))
        .map(|(&n, (&lo, &hi))| {
            if n == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..n)
                    .map(|k| {
                        if k == n - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * k as f64 / (n - 1) as f64
                        }
                    })
                    .collect()
            }
        })
        .collect();
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    Ok(points.into_iter().map(TransformPoint).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let img = random_image(7, 5, 1);
        assert_eq!(rotate(&img, 0.0, [0.0; 3]).unwrap(), img);
        assert_eq!(rotate(&img, 360.0, [0.0; 3]).unwrap(), img);
    }

    #[test]
    fn rotation_by_90_permutes_2x2() {
        // [a b; c d] rotated counterclockwise becomes [b d; a c]
        let px = |v: f64| [v; 3];
        let img = Image::new(
            2,
            2,
            [0.1, 0.2, 0.3, 0.4].iter().flat_map(|&v| px(v)).collect(),
        )
        .unwrap();
        let out = rotate(&img, 90.0, [0.0; 3]).unwrap();
        let got: Vec<f64> = (0..4).map(|i| out.get(i / 2, i % 2, 0)).collect();
        assert_eq!(got, vec![0.2, 0.4, 0.1, 0.3]);
    }

    #[test]
    fn four_quarter_turns_are_bit_identical() {
        for seed in 0..5 {
            let img = random_image(9, 9, seed);
            let mut cur = img.clone();
            for _ in 0..4 {
                cur = rotate(&cur, 90.0, [0.0; 3]).unwrap();
            }
            assert_eq!(cur, img);
            assert_eq!(
                rotate(&img, 270.0, [0.0; 3]).unwrap(),
                rotate(&img, -90.0, [0.0; 3]).unwrap()
            );
        }
    }

    #[test]
    fn rotation_fills_corners() {
        let img = Image::filled(16, 16, [1.0; 3]).unwrap();
        let out = rotate(&img, 45.0, [0.0, 0.5, 0.0]).unwrap();
        assert_eq!(out.rgb(0, 0), [0.0, 0.5, 0.0]);
        assert_eq!(out.rgb(8, 8), [1.0; 3]);
        assert!(rotate(&img, f64::NAN, [0.0; 3]).is_err());
    }

    #[test]
    fn illuminant_values() {
        let n = illuminant_from_chroma(0.0, 0.0);
        let s = 1.0 / 3f64.sqrt();
        for v in n {
            assert!((v - s).abs() < 1e-12);
        }
        // evaluated independently: z = sqrt(e^-2 + 2)
        let z = ((-2.0f64).exp() + 2.0).sqrt();
        let expected = [(-1.0f64).exp() / z, 1.0 / z, 1.0 / z];
        let got = illuminant_from_chroma(1.0, 0.0);
        for c in 0..3 {
            assert!((got[c] - expected[c]).abs() < 1e-15);
        }
        assert!((got[0] - 0.25175).abs() < 1e-5);
        assert!((got[1] - 0.68434).abs() < 1e-5);
    }

    #[test]
    fn neutral_color_scales_uniformly_and_black_is_fixed() {
        let img = random_image(4, 4, 3);
        let out = apply_color(&img, 0.0, 0.0);
        let s = 1.0 / 3f64.sqrt();
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((a * s - b).abs() < 1e-15);
        }
        let black = Image::filled(3, 3, [0.0; 3]).unwrap();
        assert_eq!(apply_color(&black, 0.8, -0.4), black);
    }

    #[test]
    fn color_inverse_recovers_input_without_clamping() {
        let img = random_image(4, 4, 4);
        let (lu, lv) = (0.3, -0.7);
        let illum = illuminant_from_chroma(lu, lv);
        let shifted = apply_color(&img, lu, lv);
        for (i, (orig, s)) in img.pixels().iter().zip(shifted.pixels()).enumerate() {
            let back = s / illum[i % 3];
            assert!((back - orig).abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_behaviour() {
        let img = random_image(3, 3, 5);
        assert_eq!(apply_gamma(&img, 0.0), img);
        let quarter = Image::filled(1, 1, [0.25; 3]).unwrap();
        let out = apply_gamma(&quarter, 2f64.ln());
        assert!((out.get(0, 0, 0) - 0.0625).abs() < 1e-15);
        let ends = Image::new(1, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        for lg in [-2.0, -0.5, 0.7, 2.0] {
            assert_eq!(apply_gamma(&ends, lg), ends);
        }
    }

    #[test]
    fn apply_point_dispatch() {
        let img = random_image(6, 6, 6);
        assert_eq!(
            apply_point(&TransformKind::RotationDeg, &vec![0.0].into(), &img).unwrap(),
            img
        );
        let comp = TransformKind::Composite {
            parts: vec![TransformKind::RotationDeg, TransformKind::GammaLog],
        };
        assert_eq!(comp.dim(), 2);
        assert_eq!(
            apply_point(&comp, &vec![90.0, 0.0].into(), &img).unwrap(),
            rotate(&img, 90.0, [0.0; 3]).unwrap()
        );
        let comp = TransformKind::Composite {
            parts: vec![TransformKind::ColorLogChroma, TransformKind::GammaLog],
        };
        assert_eq!(
            apply_point(&comp, &vec![0.4, -0.2, 0.0].into(), &img).unwrap(),
            apply_color(&img, 0.4, -0.2)
        );
        let synth = TransformKind::Synthetic { dim: 6 };
        assert_eq!(apply_point(&synth, &vec![0.3; 6].into(), &img).unwrap(), img);
        assert!(matches!(
            apply_point(&TransformKind::ColorLogChroma, &vec![0.0].into(), &img),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn cyclic_groups() {
        let c4 = enumerate_cn(4).unwrap();
        let angles: Vec<f64> = c4.points().unwrap().iter().map(|p| p.0[0]).collect();
        assert_eq!(angles, vec![0.0, 90.0, 180.0, 270.0]);
        let c8 = enumerate_cn(8).unwrap();
        let angles: Vec<f64> = c8.points().unwrap().iter().map(|p| p.0[0]).collect();
        assert_eq!(angles.len(), 8);
        assert!(angles.windows(2).all(|w| (w[1] - w[0] - 45.0).abs() < 1e-12));
        assert_eq!(enumerate_cn(1).unwrap().points().unwrap(), &[vec![0.0].into()]);
        assert!(enumerate_cn(0).is_err());
    }

    #[test]
    fn uniform_sampling_contract() {
        let dom = TransformDomain::boxed(TransformKind::ColorLogChroma, vec![-1.0, 0.0], vec![1.0, 0.5]).unwrap();
        assert!(sample_uniform(&dom, 0, 1).unwrap().is_empty());
        let a = sample_uniform(&dom, 50, 9).unwrap();
        assert_eq!(a, sample_uniform(&dom, 50, 9).unwrap());
        assert_ne!(a, sample_uniform(&dom, 50, 10).unwrap());
        assert!(a.iter().all(|p| dom.bounds().unwrap().contains(p)));
        assert!(sample_uniform(&enumerate_cn(4).unwrap(), 3, 1).is_err());
    }

    #[test]
    fn grid_construction() {
        let line = TransformDomain::boxed(TransformKind::GammaLog, vec![-1.0], vec![1.0]).unwrap();
        let pts = grid_points(&line, &[3]).unwrap();
        assert_eq!(pts, vec![vec![-1.0].into(), vec![0.0].into(), vec![1.0].into()]);
        assert_eq!(grid_points(&line, &[1]).unwrap(), vec![vec![0.0].into()]);
        assert!(grid_points(&line, &[0]).is_err());

        let sq = TransformDomain::boxed(TransformKind::ColorLogChroma, vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let pts = grid_points(&sq, &[3, 3]).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![-1.0, -1.0].into());
        assert_eq!(pts[4], vec![0.0, 0.0].into());
        assert_eq!(pts[8], vec![1.0, 1.0].into());
    }

    #[test]
    fn domain_validation() {
        assert!(TransformDomain::boxed(TransformKind::GammaLog, vec![1.0], vec![1.0]).is_err());
        assert!(TransformDomain::boxed(TransformKind::GammaLog, vec![], vec![]).is_err());
        assert!(TransformDomain::boxed(TransformKind::GammaLog, vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(TransformDomain::discrete(TransformKind::RotationDeg, vec![]).is_err());
        assert!(TransformDomain::discrete(TransformKind::RotationDeg, vec![vec![0.0, 1.0].into()]).is_err());
    }
}
