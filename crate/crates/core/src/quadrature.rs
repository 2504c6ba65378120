//! Quadrature rules on the reference interval `[0, 1]` and the reference
//! triangle `{x, y >= 0, x + y <= 1}`, and their affine images.
//!
//! Precisions 3 and 5 on the triangle use tabulated symmetric Gauss rules
//! (6 and 7 points). Higher precisions, which are only used to measure
//! errors, are conical products of Gauss-Legendre rules.

use crate::error::{Error, Result};

/// Largest precision served by [`reference_triangle_rule`].
pub const MAX_TRIANGLE_PRECISION: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceElement {
    Interval,
    Triangle,
}

impl ReferenceElement {
    pub fn measure(self) -> f64 {
        match self {
            ReferenceElement::Interval => 1.0,
            ReferenceElement::Triangle => 0.5,
        }
    }
}

/// Points and positive weights on a reference element. Interval points keep
/// their second coordinate at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub element: ReferenceElement,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub precision: usize,
}

/// A rule mapped onto a physical element.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappedRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl MappedRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

// Orbits in area-normalized barycentric form (a, a, 1 - 2a) with weights
// summing to one.
const SIX_POINT_ORBITS: [(f64, f64); 2] = [
    (0.445_948_490_915_964_886_318_329_3, 0.223_381_589_678_011_465_695_007),
    (0.091_576_213_509_770_743_459_571_46, 0.109_951_743_655_321_867_638_326_3),
];

const SEVEN_POINT_CENTROID_WEIGHT: f64 = 0.225;
const SEVEN_POINT_ORBITS: [(f64, f64); 2] = [
    (0.101_286_507_323_456_338_800_987_4, 0.125_939_180_544_827_152_595_683_9),
    (0.470_142_064_105_115_089_770_441_2, 0.132_394_152_788_506_180_737_649_4),
];

fn push_orbit(points: &mut Vec<[f64; 2]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let c = 1.0 - 2.0 * a;
    for p in [[a, a], [c, a], [a, c]] {
        points.push(p);
        weights.push(0.5 * w);
    }
}

/// Gauss rule of precision `q` on the reference triangle.
pub fn reference_triangle_rule(q: usize) -> Result<QuadratureRule> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match q {
        0 => {
            return Err(Error::UnsupportedPrecision {
                precision: q,
                element: "triangle",
            })
        }
        1..=4 => {
            for &(a, w) in &SIX_POINT_ORBITS {
                push_orbit(&mut points, &mut weights, a, w);
            }
        }
        5 => {
            points.push([1.0 / 3.0, 1.0 / 3.0]);
            weights.push(0.5 * SEVEN_POINT_CENTROID_WEIGHT);
            for &(a, w) in &SEVEN_POINT_ORBITS {
                push_orbit(&mut points, &mut weights, a, w);
            }
        }
        6..=MAX_TRIANGLE_PRECISION => {
            // Collapsed square: x = s, y = (1 - s) t, Jacobian (1 - s).
            let n = (q + 2).div_ceil(2);
            let (nodes, gw) = gauss_legendre(n);
            for (&s, &ws) in nodes.iter().zip(&gw) {
                for (&t, &wt) in nodes.iter().zip(&gw) {
                    points.push([s, (1.0 - s) * t]);
                    weights.push(ws * wt * (1.0 - s));
                }
            }
        }
        _ => {
            return Err(Error::UnsupportedPrecision {
                precision: q,
                element: "triangle",
            })
        }
    }
    Ok(QuadratureRule {
        element: ReferenceElement::Triangle,
        points,
        weights,
        precision: q,
    })
}

/// Gauss-Legendre rule on `[0, 1]` with `ceil((q + 1) / 2)` points.
pub fn reference_interval_rule(q: usize) -> Result<QuadratureRule> {
    if q > 2 * MAX_TRIANGLE_PRECISION {
        return Err(Error::UnsupportedPrecision {
            precision: q,
            element: "interval",
        });
    }
    let n = (q + 1).div_ceil(2).max(1);
    let (nodes, weights) = gauss_legendre(n);
    Ok(QuadratureRule {
        element: ReferenceElement::Interval,
        points: nodes.into_iter().map(|x| [x, 0.0]).collect(),
        weights,
        precision: q,
    })
}

/// `n`-point Gauss-Legendre nodes and weights on `[0, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one point");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Newton on P_n over [-1, 1], starting from the Tricomi estimate.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root; store both mirrored nodes on [0, 1].
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.5;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Signed area of a triangle; positive for counter-clockwise vertices.
pub fn signed_area(v: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Affine image on a triangle; weights scale by `|T| / |T_ref|`.
    pub fn map_triangle(&self, v: &[[f64; 2]; 3]) -> Result<MappedRule> {
        assert_eq!(self.element, ReferenceElement::Triangle);
        let area = signed_area(v).abs();
        let scale = (v[0][0].abs() + v[1][0].abs() + v[2][0].abs())
            .max(v[0][1].abs() + v[1][1].abs() + v[2][1].abs())
            .max(1.0);
        if area <= 1e-14 * scale * scale {
            return Err(Error::DegenerateElement { measure: area });
        }
        let factor = area / ReferenceElement::Triangle.measure();
        let e1 = [v[1][0] - v[0][0], v[1][1] - v[0][1]];
        let e2 = [v[2][0] - v[0][0], v[2][1] - v[0][1]];
        let points = self
            .points
            .iter()
            .map(|&[x, y]| [v[0][0] + x * e1[0] + y * e2[0], v[0][1] + x * e1[1] + y * e2[1]])
            .collect();
        let weights = self.weights.iter().map(|w| w * factor).collect();
        Ok(MappedRule { points, weights })
    }

    /// Affine image on a straight segment from `a` to `b`; weights scale by
    /// the segment length.
    pub fn map_segment(&self, a: [f64; 2], b: [f64; 2]) -> Result<MappedRule> {
        assert_eq!(self.element, ReferenceElement::Interval);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = d[0].hypot(d[1]);
        if len <= 1e-14 * a[0].abs().max(a[1].abs()).max(1.0) {
            return Err(Error::DegenerateElement { measure: len });
        }
        let points = self
            .points
            .iter()
            .map(|&[t, _]| [a[0] + t * d[0], a[1] + t * d[1]])
            .collect();
        let weights = self.weights.iter().map(|w| w * len).collect();
        Ok(MappedRule { points, weights })
    }
}
