//! Exact enforcement of Dirichlet data through `B w = ubar + Phi w`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundarySpec, BoundaryTag, Rectangle};

/// Scalar field returning its value and gradient.
pub type Field = Arc<dyn Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync>;

pub fn field(f: impl Fn([f64; 2]) -> (f64, [f64; 2]) + Send + Sync + 'static) -> Field {
    Arc::new(f)
}

pub fn zero_field() -> Field {
    field(|_| (0.0, [0.0, 0.0]))
}

/// `Phi` vanishing on the Dirichlet boundary and a lifting `ubar` of the
/// Dirichlet data.
#[derive(Clone)]
pub struct BoundaryLifting {
    pub phi: Field,
    pub ubar: Field,
}

impl std::fmt::Debug for BoundaryLifting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BoundaryLifting")
    }
}

impl BoundaryLifting {
    pub fn new(phi: Field, ubar: Field) -> Self {
        Self { phi, ubar }
    }

    /// Values and gradients of `ubar + Phi w` at the given points.
    pub fn apply(&self, points: &[[f64; 2]], w: &[f64], w_grad: &[[f64; 2]]) -> (Vec<f64>, Vec<[f64; 2]>) {
        assert_eq!(points.len(), w.len());
        assert_eq!(points.len(), w_grad.len());
        let mut vals = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for ((&x, &wv), wg) in points.iter().zip(w).zip(w_grad) {
            let (u0, gu) = (self.ubar)(x);
            let (p, gp) = (self.phi)(x);
            vals.push(u0 + p * wv);
            grads.push([
                gu[0] + p * wg[0] + wv * gp[0],
                gu[1] + p * wg[1] + wv * gp[1],
            ]);
        }
        (vals, grads)
    }

    /// Values of `ubar + Phi w` only.
    pub fn apply_values(&self, points: &[[f64; 2]], w: &[f64]) -> Vec<f64> {
        points
            .iter()
            .zip(w)
            .map(|(&x, &wv)| (self.ubar)(x).0 + (self.phi)(x).0 * wv)
            .collect()
    }
}

/// Product of the affine functions that vanish on the chosen sides of a
/// convex polygon, each equal to the distance from its side. Vertices may be
/// given in either orientation; side `s` joins vertex `s` to `s + 1`.
pub fn build_phi(polygon: &[[f64; 2]], dirichlet_sides: &[usize]) -> Result<Field> {
    let n = polygon.len();
    if n < 3 {
        return Err(Error::NonConvexDomain);
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let turns: Vec<f64> = (0..n)
        .map(|i| cross(polygon[i], polygon[(i + 1) % n], polygon[(i + 2) % n]))
        .collect();
    let sign = if turns.iter().all(|&t| t > 0.0) {
        1.0
    } else if turns.iter().all(|&t| t < 0.0) {
        -1.0
    } else {
        return Err(Error::NonConvexDomain);
    };
    let mut factors: Vec<([f64; 2], f64)> = Vec::new();
    for &s in dirichlet_sides {
        if s >= n {
            return Err(Error::InvalidConfig(format!("polygon has no side {s}")));
        }
        let (a, b) = (polygon[s], polygon[(s + 1) % n]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        // Inward unit normal for a counter-clockwise boundary.
        let nrm = [-(b[1] - a[1]) * sign / len, (b[0] - a[0]) * sign / len];
        factors.push((nrm, -(nrm[0] * a[0] + nrm[1] * a[1])));
    }
    Ok(field(move |x| {
        let vals: Vec<f64> = factors.iter().map(|(n, c)| n[0] * x[0] + n[1] * x[1] + c).collect();
        let mut value = 1.0;
        let mut grad = [0.0, 0.0];
        for (i, (n, _)) in factors.iter().enumerate() {
            let others: f64 = vals
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .product();
            grad[0] += n[0] * others;
            grad[1] += n[1] * others;
            value *= vals[i];
        }
        (value, grad)
    }))
}

/// `Phi` for a rectangle with per-side tags.
pub fn build_phi_rect(domain: Rectangle, spec: BoundarySpec) -> Result<Field> {
    let poly = [
        [domain.x0, domain.y0],
        [domain.x1, domain.y0],
        [domain.x1, domain.y1],
        [domain.x0, domain.y1],
    ];
    let sides: Vec<usize> = [spec.bottom, spec.right, spec.top, spec.left]
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == BoundaryTag::Dirichlet)
        .map(|(i, _)| i)
        .collect();
    build_phi(&poly, &sides)
}

/// `Phi(x) = (x - a)(b - x)` on an interval with both endpoints Dirichlet.
pub fn build_phi_interval(a: f64, b: f64) -> Field {
    field(move |x| {
        let t = x[0];
        ((t - a) * (b - t), [a + b - 2.0 * t, 0.0])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_products() {
        let all = build_phi_rect(Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap();
        assert!((all([0.5, 0.5]).0 - 1.0 / 16.0).abs() < 1e-15);
        let (v, g) = all([0.3, 0.8]);
        assert!((v - 0.3 * 0.7 * 0.8 * 0.2).abs() < 1e-15);
        assert!((g[0] - (1.0 - 0.6) * 0.8 * 0.2).abs() < 1e-15);
        let lr = build_phi_rect(Rectangle::UNIT, BoundarySpec::dirichlet_left_right()).unwrap();
        for y in [0.0, 0.3, 1.0] {
            assert!((lr([0.5, y]).0 - 0.25).abs() < 1e-15);
        }
        let one = build_phi_interval(0.0, 1.0);
        assert!((one([0.25, 0.0]).0 - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn phi_vanishes_on_dirichlet_sides() {
        let phi = build_phi_rect(Rectangle::UNIT, BoundarySpec::dirichlet_left_right()).unwrap();
        for i in 0..20 {
            let t = i as f64 / 19.0;
            assert!(phi([0.0, t]).0.abs() <= 1e-12);
            assert!(phi([1.0, t]).0.abs() <= 1e-12);
        }
        assert!(phi([0.5, 0.0]).0 > 0.0);
    }

    #[test]
    fn clockwise_and_nonconvex_polygons() {
        let cw = [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        let phi = build_phi(&cw, &[0, 1, 2, 3]).unwrap();
        assert!((phi([0.5, 0.5]).0 - 1.0 / 16.0).abs() < 1e-15);
        let l_shape = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        assert!(matches!(build_phi(&l_shape, &[0]), Err(Error::NonConvexDomain)));
    }

    #[test]
    fn apply_b_is_affine_with_correct_gradient() {
        let phi = build_phi_rect(Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap();
        let ubar = field(|x| ((x[0] + 2.0 * x[1]).sin(), [(x[0] + 2.0 * x[1]).cos(), 2.0 * (x[0] + 2.0 * x[1]).cos()]));
        let lift = BoundaryLifting::new(phi.clone(), ubar.clone());
        let w = |x: [f64; 2]| (x[0] * x[1]).exp();
        let gw = |x: [f64; 2]| [x[1] * (x[0] * x[1]).exp(), x[0] * (x[0] * x[1]).exp()];
        let bw = |x: [f64; 2]| ubar(x).0 + phi(x).0 * w(x);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 2]> = (0..10).map(|_| [rng.random(), rng.random()]).collect();
        let (v, g) = lift.apply(&pts, &pts.iter().map(|&p| w(p)).collect::<Vec<_>>(), &pts.iter().map(|&p| gw(p)).collect::<Vec<_>>());
        for (k, &p) in pts.iter().enumerate() {
            assert!((v[k] - bw(p)).abs() < 1e-15);
            for d in 0..2 {
                let mut a = p;
                let mut b = p;
                a[d] += 1e-6;
                b[d] -= 1e-6;
                let fd = (bw(a) - bw(b)) / 2e-6;
                assert!((fd - g[k][d]).abs() <= 1e-7 * (1.0 + fd.abs()));
            }
        }
        let zero = lift.apply_values(&pts, &vec![0.0; 10]);
        for (z, p) in zero.iter().zip(&pts) {
            assert_eq!(*z, ubar(*p).0);
        }
    }
}
