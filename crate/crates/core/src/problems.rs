//! Test problems with closed-form coefficients, data and exact solutions.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lifting::{build_phi_interval, build_phi_rect, field, zero_field, BoundaryLifting, Field};
use crate::mesh::{build_interval_mesh, build_structured_mesh, BoundarySpec, BoundaryTag, Mesh, Rectangle};

pub type Scalar = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type Vector = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
/// Neumann data as a function of the point and the outward unit normal.
pub type Flux = Arc<dyn Fn([f64; 2], [f64; 2]) -> f64 + Send + Sync>;

fn scalar(f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Scalar {
    Arc::new(f)
}

fn vector(f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> Vector {
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Interval { a: f64, b: f64 },
    Rectangle { domain: Rectangle, boundary: BoundarySpec },
}

/// Zero-order term: `sigma u` or `sigma exp(-p u^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reaction {
    Linear,
    Exponential { p: f64 },
}

impl Reaction {
    /// Value and derivative of the reaction in `u`, per unit `sigma`.
    pub fn eval(self, u: f64) -> (f64, f64) {
        match self {
            Reaction::Linear => (u, 1.0),
            Reaction::Exponential { p } => {
                let e = (-p * u * u).exp();
                (e, -2.0 * p * u * e)
            }
        }
    }
}

/// `-div(mu grad u) + beta . grad u + sigma r(u) = f` with Dirichlet data
/// through the lifting and Neumann flux `mu du/dn = psi`.
#[derive(Clone)]
pub struct ProblemDefinition {
    pub name: String,
    pub geometry: Geometry,
    pub mu: Scalar,
    pub beta: Vector,
    pub sigma: Scalar,
    pub f: Scalar,
    pub psi: Flux,
    pub reaction: Reaction,
    pub lifting: BoundaryLifting,
    pub exact: Option<Field>,
    /// Extra network input appended to the coordinates.
    pub parameter: Option<f64>,
}

impl std::fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("name", &self.name)
            .field("geometry", &self.geometry)
            .field("reaction", &self.reaction)
            .field("parameter", &self.parameter)
            .finish_non_exhaustive()
    }
}

impl ProblemDefinition {
    pub fn dim(&self) -> usize {
        match self.geometry {
            Geometry::Interval { .. } => 1,
            Geometry::Rectangle { .. } => 2,
        }
    }

    /// Uniform coarse mesh with `n` cells per side.
    pub fn coarse_mesh(&self, n: usize) -> Result<Mesh> {
        match self.geometry {
            Geometry::Interval { a, b } => build_interval_mesh(n, a, b),
            Geometry::Rectangle { domain, boundary } => build_structured_mesh(n, n, domain, boundary),
        }
    }

    pub fn network_input_dim(&self) -> usize {
        self.dim() + usize::from(self.parameter.is_some())
    }

    /// Strong-form residual `L u - f` at `x` for the exact solution, with the
    /// diffusive flux differentiated by central differences.
    pub fn strong_residual(&self, x: [f64; 2], step: f64) -> Option<f64> {
        let exact = self.exact.as_ref()?;
        let flux = |p: [f64; 2]| {
            let g = exact(p).1;
            let m = (self.mu)(p);
            [m * g[0], m * g[1]]
        };
        let mut div = 0.0;
        for d in 0..self.dim() {
            let mut a = x;
            let mut b = x;
            a[d] += step;
            b[d] -= step;
            div += (flux(a)[d] - flux(b)[d]) / (2.0 * step);
        }
        let (u, g) = exact(x);
        let beta = (self.beta)(x);
        let r = self.reaction.eval(u).0;
        Some(-div + beta[0] * g[0] + beta[1] * g[1] + (self.sigma)(x) * r - (self.f)(x))
    }
}

/// How the error of a case is expected to decay with the coarse meshsize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpectedRate {
    /// Limited by the interpolation degree.
    InterpolationDegree,
    Fixed(f64),
    /// The exact solution is zero.
    Exact,
}

#[derive(Clone, Debug)]
pub struct TestCase {
    pub problem: ProblemDefinition,
    pub expected_rate: ExpectedRate,
    pub figure: &'static str,
}

// sin(A) cos(B) with affine B and quadratic A, together with its gradient
// and Laplacian.
struct SinCos {
    a: fn([f64; 2]) -> (f64, [f64; 2], f64),
    b: fn([f64; 2]) -> (f64, [f64; 2], f64),
}

impl SinCos {
    fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64) {
        let (a, ga, la) = (self.a)(x);
        let (b, gb, lb) = (self.b)(x);
        let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
        let v = sa * cb;
        let g = [
            ca * cb * ga[0] - sa * sb * gb[0],
            ca * cb * ga[1] - sa * sb * gb[1],
        ];
        let dot = |p: [f64; 2], q: [f64; 2]| p[0] * q[0] + p[1] * q[1];
        let lap = -sa * cb * (dot(ga, ga) + dot(gb, gb)) - 2.0 * ca * sb * dot(ga, gb) + ca * cb * la
            - sa * sb * lb;
        (v, g, lap)
    }
}

const SMOOTH_TERMS: [SinCos; 2] = [
    SinCos {
        a: |x| (3.2 * x[0] * (x[0] - x[1]), [6.4 * x[0] - 3.2 * x[1], -3.2 * x[0]], 6.4),
        b: |x| (4.3 * x[1] + x[0], [1.0, 4.3], 0.0),
    },
    SinCos {
        a: |x| (4.6 * (x[0] + 2.0 * x[1]), [4.6, 9.2], 0.0),
        b: |x| (2.6 * (x[1] - 2.0 * x[0]), [-5.2, 2.6], 0.0),
    },
];

fn smooth_u(x: [f64; 2]) -> (f64, [f64; 2], f64) {
    SMOOTH_TERMS.iter().fold((0.0, [0.0, 0.0], 0.0), |acc, t| {
        let (v, g, l) = t.eval(x);
        (acc.0 + v, [acc.1[0] + g[0], acc.1[1] + g[1]], acc.2 + l)
    })
}

fn smooth_mu(x: [f64; 2]) -> (f64, [f64; 2]) {
    let s = x[0] + 2.0 * x[1];
    (2.0 + s.sin(), [s.cos(), 2.0 * s.cos()])
}

fn smooth_beta(x: [f64; 2]) -> [f64; 2] {
    [
        (x[0] - x[1] * x[1] + 5.0).sqrt(),
        (x[1] - x[0] * x[0] + 5.0).sqrt(),
    ]
}

fn smooth_sigma(x: [f64; 2]) -> f64 {
    (x[0] / 2.0 - x[1] / 3.0).exp() + 2.0
}

/// Lifting that blends the data on `x = 0` and `x = 1` linearly in `x`.
fn left_right_blend(u: fn([f64; 2]) -> (f64, [f64; 2])) -> Field {
    field(move |x| {
        let (l, gl) = u([0.0, x[1]]);
        let (r, gr) = u([1.0, x[1]]);
        (
            (1.0 - x[0]) * l + x[0] * r,
            [r - l, (1.0 - x[0]) * gl[1] + x[0] * gr[1]],
        )
    })
}

/// Transfinite (Coons) interpolation of the boundary values of `u` on the
/// unit square.
pub fn coons_lifting(u: Field) -> Field {
    field(move |x| {
        let (s, t) = (x[0], x[1]);
        let (l, gl) = u([0.0, t]);
        let (r, gr) = u([1.0, t]);
        let (b, gb) = u([s, 0.0]);
        let (tp, gt) = u([s, 1.0]);
        let c00 = u([0.0, 0.0]).0;
        let c10 = u([1.0, 0.0]).0;
        let c01 = u([0.0, 1.0]).0;
        let c11 = u([1.0, 1.0]).0;
        let v = (1.0 - s) * l + s * r + (1.0 - t) * b + t * tp
            - ((1.0 - s) * (1.0 - t) * c00 + s * (1.0 - t) * c10 + (1.0 - s) * t * c01 + s * t * c11);
        let dx = r - l + (1.0 - t) * gb[0] + t * gt[0]
            - (-(1.0 - t) * c00 + (1.0 - t) * c10 - t * c01 + t * c11);
        let dy = (1.0 - s) * gl[1] + s * gr[1] - b + tp
            - (-(1.0 - s) * c00 - s * c10 + (1.0 - s) * c01 + s * c11);
        (v, [dx, dy])
    })
}

/// Mixed Dirichlet (`x = 0, 1`) / Neumann problem with variable
/// coefficients and a smooth oscillating solution.
pub fn case_smooth() -> TestCase {
    let exact = field(|x| {
        let (v, g, _) = smooth_u(x);
        (v, g)
    });
    let f = scalar(|x| {
        let (u, g, lap) = smooth_u(x);
        let (m, gm) = smooth_mu(x);
        let b = smooth_beta(x);
        -m * lap - (gm[0] * g[0] + gm[1] * g[1]) + b[0] * g[0] + b[1] * g[1] + smooth_sigma(x) * u
    });
    let psi: Flux = Arc::new(|x, n| {
        let g = smooth_u(x).1;
        smooth_mu(x).0 * (g[0] * n[0] + g[1] * n[1])
    });
    let boundary = BoundarySpec::dirichlet_left_right();
    let phi = build_phi_rect(Rectangle::UNIT, boundary).expect("unit square is convex");
    let ubar = left_right_blend(|x| {
        let (v, g, _) = smooth_u(x);
        (v, g)
    });
    TestCase {
        problem: ProblemDefinition {
            name: "smooth".into(),
            geometry: Geometry::Rectangle {
                domain: Rectangle::UNIT,
                boundary,
            },
            mu: scalar(|x| smooth_mu(x).0),
            beta: vector(smooth_beta),
            sigma: scalar(smooth_sigma),
            f,
            psi,
            reaction: Reaction::Linear,
            lifting: BoundaryLifting::new(phi, ubar),
            exact: Some(exact),
            parameter: None,
        },
        expected_rate: ExpectedRate::InterpolationDegree,
        figure: "3",
    }
}

const CORNER_ALPHA: f64 = 2.0 / 3.0;

/// `r^{2/3} sin(2/3 (theta + pi/2))` around the origin. At the origin the
/// gradient is unbounded and reported as infinite.
fn corner_u(x: [f64; 2]) -> (f64, [f64; 2]) {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return (0.0, [f64::INFINITY, f64::INFINITY]);
    }
    let theta = x[1].atan2(x[0]);
    let phi = CORNER_ALPHA * (theta + FRAC_PI_2);
    let ra = r.powf(CORNER_ALPHA);
    let c = CORNER_ALPHA * ra / r;
    (ra * phi.sin(), [c * (phi - theta).sin(), c * (phi - theta).cos()])
}

/// All-Dirichlet problem whose solution has the singular behaviour of a
/// re-entrant corner at the origin.
pub fn case_corner_singularity() -> TestCase {
    let beta = [2.0, 3.0];
    let sigma = 4.0;
    // The singular part is harmonic, so only first- and zero-order terms
    // contribute to f.
    let f = scalar(move |x| {
        let (u, g) = corner_u(x);
        if !g[0].is_finite() {
            return 0.0;
        }
        beta[0] * g[0] + beta[1] * g[1] + sigma * u
    });
    let phi = build_phi_rect(Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).expect("convex");
    TestCase {
        problem: ProblemDefinition {
            name: "corner".into(),
            geometry: Geometry::Rectangle {
                domain: Rectangle::UNIT,
                boundary: BoundarySpec::all(BoundaryTag::Dirichlet),
            },
            mu: scalar(|_| 1.0),
            beta: vector(move |_| beta),
            sigma: scalar(move |_| sigma),
            f,
            psi: Arc::new(|_, _| 0.0),
            reaction: Reaction::Linear,
            lifting: BoundaryLifting::new(phi, field(corner_u)),
            exact: Some(field(corner_u)),
            parameter: None,
        },
        expected_rate: ExpectedRate::Fixed(CORNER_ALPHA),
        figure: "5",
    }
}

/// `-u'' = 0` on `(0, 1)` (or `-Laplace u = 0` on the unit square) with
/// homogeneous Dirichlet data.
pub fn case_zero_data(dim: usize) -> Result<TestCase> {
    let (geometry, phi) = match dim {
        1 => (Geometry::Interval { a: 0.0, b: 1.0 }, build_phi_interval(0.0, 1.0)),
        2 => {
            let boundary = BoundarySpec::all(BoundaryTag::Dirichlet);
            (
                Geometry::Rectangle {
                    domain: Rectangle::UNIT,
                    boundary,
                },
                build_phi_rect(Rectangle::UNIT, boundary)?,
            )
        }
        d => return Err(Error::InvalidConfig(format!("zero-data case has no dimension {d}"))),
    };
    Ok(TestCase {
        problem: ProblemDefinition {
            name: format!("zero-{dim}d"),
            geometry,
            mu: scalar(|_| 1.0),
            beta: vector(|_| [0.0, 0.0]),
            sigma: scalar(|_| 0.0),
            f: scalar(|_| 0.0),
            psi: Arc::new(|_, _| 0.0),
            reaction: Reaction::Linear,
            lifting: BoundaryLifting::new(phi, zero_field()),
            exact: Some(zero_field()),
            parameter: None,
        },
        expected_rate: ExpectedRate::Exact,
        figure: "9",
    })
}

pub const PARAMETRIC_RANGE: (f64, f64) = (0.5, 2.0);

fn parametric_u(x: [f64; 2], p: f64) -> (f64, [f64; 2], f64) {
    let s = p * x[0] + x[1] / 2.0;
    let t = x[0] + x[1] / 2.0;
    let c = (5.0 * s).cos() / (1.0 + p);
    let d = -5.0 * (5.0 * s).sin() / (1.0 + p);
    let lap = -25.0 * c * (p * p + 0.25) + 2.5;
    (c + t * t, [d * p + 2.0 * t, d * 0.5 + t], lap)
}

/// Nonlinear reaction `4 exp(-p u^2)` with convection, all-Dirichlet on the
/// unit square, for one parameter value. Values outside `[0.5, 2]` are
/// accepted; [`is_extrapolation`] flags them.
pub fn case_parametric_nonlinear(p: f64) -> TestCase {
    let beta = [2.0, 3.0];
    let sigma = 4.0;
    let f = scalar(move |x| {
        let (u, g, lap) = parametric_u(x, p);
        -lap + beta[0] * g[0] + beta[1] * g[1] + sigma * (-p * u * u).exp()
    });
    let exact = field(move |x| {
        let (v, g, _) = parametric_u(x, p);
        (v, g)
    });
    let boundary = BoundarySpec::all(BoundaryTag::Dirichlet);
    let phi = build_phi_rect(Rectangle::UNIT, boundary).expect("convex");
    TestCase {
        problem: ProblemDefinition {
            name: "parametric".into(),
            geometry: Geometry::Rectangle {
                domain: Rectangle::UNIT,
                boundary,
            },
            mu: scalar(|_| 1.0),
            beta: vector(move |_| beta),
            sigma: scalar(move |_| sigma),
            f,
            psi: Arc::new(|_, _| 0.0),
            reaction: Reaction::Exponential { p },
            lifting: BoundaryLifting::new(phi, coons_lifting(exact.clone())),
            exact: Some(exact),
            parameter: Some(p),
        },
        expected_rate: ExpectedRate::InterpolationDegree,
        figure: "10",
    }
}

pub fn is_extrapolation(p: f64) -> bool {
    p < PARAMETRIC_RANGE.0 || p > PARAMETRIC_RANGE.1
}

/// `n` equally spaced values spanning the parameter range.
pub fn parameter_grid(n: usize) -> Vec<f64> {
    let (a, b) = PARAMETRIC_RANGE;
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub const CASE_NAMES: [&str; 5] = ["smooth", "corner", "zero-1d", "zero-2d", "parametric"];

/// Looks up a case by name. The parametric case uses `p = 1` unless a
/// value is given.
pub fn case_by_name(name: &str, p: Option<f64>) -> Result<TestCase> {
    match name {
        "smooth" => Ok(case_smooth()),
        "corner" => Ok(case_corner_singularity()),
        "zero-1d" => case_zero_data(1),
        "zero-2d" => case_zero_data(2),
        "parametric" => Ok(case_parametric_nonlinear(p.unwrap_or(1.0))),
        other => Err(Error::InvalidConfig(format!(
            "unknown case `{other}`; known cases: {}",
            CASE_NAMES.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConsistencyReport {
    /// Largest `|L u - f| / (1 + |f|)`.
    pub pde: f64,
    /// Largest relative mismatch between the stored gradient and central
    /// differences of `u`.
    pub gradient: f64,
}

/// Checks the stored data against the exact solution at random interior
/// points, staying away from the boundary and from the origin.
pub fn check_consistency(problem: &ProblemDefinition, n_points: usize, seed: u64) -> Option<ConsistencyReport> {
    let exact = problem.exact.as_ref()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pde, mut gradient) = (0.0f64, 0.0f64);
    let dim = problem.dim();
    let mut found = 0;
    while found < n_points {
        let x = match problem.geometry {
            Geometry::Interval { a, b } => [a + (b - a) * rng.random_range(0.02..0.98), 0.0],
            Geometry::Rectangle { domain: d, .. } => [
                d.x0 + (d.x1 - d.x0) * rng.random_range(0.02..0.98),
                d.y0 + (d.y1 - d.y0) * rng.random_range(0.02..0.98),
            ],
        };
        if x[0].hypot(x[1]) < 0.1 {
            continue;
        }
        found += 1;
        let r = problem.strong_residual(x, 1e-5)?;
        pde = pde.max(r.abs() / (1.0 + (problem.f)(x).abs()));
        let g = exact(x).1;
        for d in 0..dim {
            let h = 1e-6;
            let mut a = x;
            let mut b = x;
            a[d] += h;
            b[d] -= h;
            let fd = (exact(a).0 - exact(b).0) / (2.0 * h);
            gradient = gradient.max((fd - g[d]).abs() / (1.0 + g[d].abs()));
        }
    }
    Some(ConsistencyReport { pde, gradient })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_values() {
        let s = case_smooth();
        assert_eq!(s.problem.exact.as_ref().unwrap()([0.0, 0.0]).0, 0.0);
        assert_eq!((s.problem.mu)([0.0, 0.0]), 2.0);
        let c = case_corner_singularity();
        let u = c.problem.exact.as_ref().unwrap();
        assert_eq!(u([0.0, 0.0]).0, 0.0);
        assert!(u([0.0, 0.0]).1[0].is_infinite());
        let want = 0.5f64.powf(2.0 / 3.0) * (std::f64::consts::PI / 3.0).sin();
        assert!((u([0.5, 0.0]).0 - want).abs() < 1e-15);
        let p = case_parametric_nonlinear(1.0);
        assert!((p.problem.exact.as_ref().unwrap()([0.0, 0.0]).0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parameter_grid_has_thirteen_values() {
        let g = parameter_grid(13);
        assert_eq!(g.len(), 13);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[12], 2.0);
        assert!((g[1] - 0.625).abs() < 1e-15);
        assert!(is_extrapolation(2.5) && !is_extrapolation(1.0));
    }

    #[test]
    fn manufactured_data_is_consistent() {
        let mut cases = vec![case_smooth(), case_corner_singularity(), case_zero_data(1).unwrap(), case_zero_data(2).unwrap()];
        cases.extend([0.5, 1.3, 2.0].map(case_parametric_nonlinear));
        for c in &cases {
            let r = check_consistency(&c.problem, 100, 1).unwrap();
            assert!(r.pde <= 1e-6, "{}: {r:?}", c.problem.name);
            assert!(r.gradient <= 1e-7, "{}: {r:?}", c.problem.name);
        }
    }

    #[test]
    fn liftings_match_dirichlet_data() {
        for c in [case_smooth(), case_corner_singularity(), case_parametric_nonlinear(1.7)] {
            let pb = &c.problem;
            let u = pb.exact.as_ref().unwrap();
            let Geometry::Rectangle { boundary, .. } = pb.geometry else { unreachable!() };
            for i in 0..=20 {
                let t = i as f64 / 20.0;
                let mut pts = Vec::new();
                if boundary.left == BoundaryTag::Dirichlet {
                    pts.push([0.0, t]);
                }
                if boundary.right == BoundaryTag::Dirichlet {
                    pts.push([1.0, t]);
                }
                if boundary.bottom == BoundaryTag::Dirichlet {
                    pts.push([t, 0.0]);
                }
                if boundary.top == BoundaryTag::Dirichlet {
                    pts.push([t, 1.0]);
                }
                for x in pts {
                    let (phi, _) = (pb.lifting.phi)(x);
                    assert!(phi.abs() <= 1e-12);
                    let b = pb.lifting.apply_values(&[x], &[3.7])[0];
                    assert!((b - u(x).0).abs() <= 1e-12, "{} at {x:?}", pb.name);
                }
            }
        }
    }

    #[test]
    fn coons_gradient() {
        let c = case_parametric_nonlinear(0.8);
        let ub = c.problem.lifting.ubar.clone();
        for x in [[0.3, 0.6], [0.9, 0.1]] {
            let g = ub(x).1;
            for d in 0..2 {
                let mut a = x;
                let mut b = x;
                a[d] += 1e-6;
                b[d] -= 1e-6;
                let fd = (ub(a).0 - ub(b).0) / 2e-6;
                assert!((fd - g[d]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn unknown_case() {
        assert!(case_by_name("nope", None).is_err());
        for n in CASE_NAMES {
            assert!(case_by_name(n, None).is_ok());
        }
    }
}
