//! A ReLU network that vanishes with its first two derivatives at every
//! control point, for the 1D Poisson problem with zero data, yet has unit
//! `L^1` norm.

use crate::error::{Error, Result};
use crate::network::{build_relu_bump, relu_derivative_1d, Mlp};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone)]
pub struct SpuriousReport {
    pub net: Mlp,
    pub center: f64,
    pub half_width: f64,
    /// Pointwise collocation loss `sum (w'')^2` at the control points plus
    /// the squared boundary values.
    pub strong_loss: f64,
    /// Weak-residual loss against hat test functions with the control
    /// points as quadrature nodes.
    pub weak_loss: f64,
    pub max_value_at_controls: f64,
    pub l1_norm: f64,
}

/// Bump between control points `j/n` and `(j+1)/n` of `[0, 1]`, with
/// support shrunk by half the distance from the midpoint to `j/n`. The weak
/// loss uses `n/2` hat elements, each integrated by Simpson's rule whose
/// nodes are three consecutive control points, so `n` must be even.
pub fn spurious_mode(n: usize, j: usize) -> Result<SpuriousReport> {
    if n < 2 || n % 2 != 0 || j >= n {
        return Err(Error::InvalidConfig(format!("need even n >= 2 and j < n, got n = {n}, j = {j}")));
    }
    let nf = n as f64;
    let controls: Vec<f64> = (0..=n).map(|i| i as f64 / nf).collect();
    let center = (controls[j] + controls[j + 1]) / 2.0;
    let eps = (center - controls[j]) / 2.0;
    let half_width = center - (controls[j] + eps);
    let net = build_relu_bump(center, half_width)?;
    let w = |x: f64| net.eval_point(&[x]);
    let dw = |x: f64| relu_derivative_1d(&net, x);

    // w is piecewise linear; its second derivative at x is the jump of w'
    // across a window narrower than the distance to any kink.
    let delta = half_width / 8.0;
    let mut strong_loss = w(0.0).powi(2) + w(1.0).powi(2);
    let mut max_value: f64 = 0.0;
    for &x in &controls {
        let d2 = (dw(x + delta) - dw(x - delta)) / (2.0 * delta);
        strong_loss += d2 * d2;
        max_value = max_value.max(w(x).abs()).max(dw(x).abs());
    }

    let ne = n / 2;
    let he = 1.0 / ne as f64;
    let mut weak_loss = 0.0;
    for k in 1..ne {
        // Hat at node k: slope 1/he on element k-1, -1/he on element k.
        let mut r = 0.0;
        for (e, slope) in [(k - 1, 1.0 / he), (k, -1.0 / he)] {
            let idx = [2 * e, 2 * e + 1, 2 * e + 2];
            let wts = [he / 6.0, 4.0 * he / 6.0, he / 6.0];
            for (i, wt) in idx.iter().zip(wts) {
                r += wt * dw(controls[*i]) * slope;
            }
        }
        weak_loss += r * r;
    }

    let (gx, gw) = gauss_legendre(2);
    let cells = 4 * n;
    let hc = 1.0 / cells as f64;
    let mut l1_norm = 0.0;
    for c in 0..cells {
        let a = c as f64 * hc;
        for (x, wt) in gx.iter().zip(&gw) {
            l1_norm += wt * hc * w(a + x * hc).abs();
        }
    }
    Ok(SpuriousReport {
        net,
        center,
        half_width,
        strong_loss,
        weak_loss,
        max_value_at_controls: max_value,
        l1_norm,
    })
}
