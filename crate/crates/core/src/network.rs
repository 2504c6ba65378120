//! Fully connected feed-forward networks with hand-written first-order
//! differentiation.
//!
//! Hidden layers apply `x_l = rho(A_l x_{l-1} + b_l)`; the output layer is
//! affine. Parameters live in one flat vector, layer by layer, each layer
//! storing `A_l` row-major followed by `b_l`. Batches are matrices with one
//! column per point.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    fn tag(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    fn from_tag(t: u32) -> Option<Self> {
        match t {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - x * x,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `rho''(z) / rho'(z)` through the activation output, so that
    /// `rho''(z) dz = ratio * dx` for a tangent `dx = rho'(z) dz`.
    #[inline]
    fn curvature_ratio(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * x,
            Activation::Relu => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Stacks points (and an optional trailing scalar such as a problem
/// parameter) into an input batch.
pub fn input_batch(points: &[[f64; 2]], dim: usize, extra: Option<f64>) -> Mat<f64> {
    let rows = dim + usize::from(extra.is_some());
    Mat::from_fn(rows, points.len(), |r, c| {
        if r < dim {
            points[c][r]
        } else {
            extra.unwrap_or(0.0)
        }
    })
}

fn mm(dst: &mut Mat<f64>, accum: Accum, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    matmul(dst.as_mut(), accum, lhs, rhs, 1.0, Par::Seq);
}

/// Stored forward pass: post-activation values of every hidden layer.
struct Tape {
    hidden: Vec<Mat<f64>>,
    output: Vec<f64>,
}

impl Mlp {
    /// Network with the given parameters. Widths run from the input
    /// dimension to the scalar output.
    pub fn from_params(widths: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 {
            return Err(Error::InvalidConfig(format!(
                "network widths {widths:?} must be positive and end with 1"
            )));
        }
        let n = param_count(&widths);
        if params.len() != n {
            return Err(Error::InvalidConfig(format!(
                "widths {widths:?} need {n} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            widths,
            activation,
            params,
        })
    }

    pub fn zeros(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let n = param_count(&widths);
        Self::from_params(widths, activation, vec![0.0; n])
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(widths.to_vec(), activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (a, _) = net.layer_range(l);
            for w in &mut net.params[a] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// `hidden` layers of `width` neurons on `input_dim` inputs.
    pub fn with_shape(input_dim: usize, hidden: usize, width: usize, activation: Activation, seed: u64) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat_n(width, hidden));
        widths.push(1);
        Self::init(&widths, activation, seed)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        self.params.copy_from_slice(p);
    }

    /// Index ranges of `A_l` and `b_l` in the flat parameter vector.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = self.widths[..l + 1]
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum();
        let (ni, no) = (self.widths[l], self.widths[l + 1]);
        (start..start + no * ni, start + no * ni..start + no * ni + no)
    }

    fn weight(&self, l: usize) -> MatRef<'_, f64> {
        let (a, _) = self.layer_range(l);
        MatRef::from_row_major_slice(&self.params[a], self.widths[l + 1], self.widths[l])
    }

    fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.layer_range(l);
        &self.params[b]
    }

    fn affine(&self, l: usize, x: MatRef<'_, f64>) -> Mat<f64> {
        let bias = self.bias(l);
        let mut z = Mat::from_fn(self.widths[l + 1], x.ncols(), |i, _| bias[i]);
        mm(&mut z, Accum::Add, self.weight(l), x);
        z
    }

    fn tape(&self, x: MatRef<'_, f64>) -> Tape {
        assert_eq!(x.nrows(), self.input_dim(), "input dimension mismatch");
        let last = self.n_layers() - 1;
        let mut hidden: Vec<Mat<f64>> = Vec::with_capacity(last);
        for l in 0..last {
            let input = if l == 0 { x } else { hidden[l - 1].as_ref() };
            let mut z = self.affine(l, input);
            let act = self.activation;
            for j in 0..z.ncols() {
                for v in z.col_mut(j).iter_mut() {
                    *v = act.apply(*v);
                }
            }
            hidden.push(z);
        }
        let input = if last == 0 { x } else { hidden[last - 1].as_ref() };
        let out = self.affine(last, input);
        let output = (0..out.ncols()).map(|j| out[(0, j)]).collect();
        Tape { hidden, output }
    }

    /// Network values at each column of `x`.
    pub fn forward(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        self.tape(x).output
    }

    /// Unbatched evaluation at a single point.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        for l in 0..self.n_layers() {
            let a = self.weight(l);
            let b = self.bias(l);
            let mut next: Vec<f64> = (0..b.len())
                .map(|i| b[i] + (0..cur.len()).map(|j| a[(i, j)] * cur[j]).sum::<f64>())
                .collect();
            if l + 1 < self.n_layers() {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            cur = next;
        }
        cur[0]
    }

    /// Values at the batch and the gradient of `sum_p c_p w(x_p)` with
    /// respect to the flat parameters.
    pub fn value_and_gradient(&self, x: MatRef<'_, f64>, cot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let tape = self.tape(x);
        let n = x.ncols();
        assert_eq!(cot.len(), n);
        let mut grad = vec![0.0; self.n_params()];
        let mut delta = Mat::from_fn(1, n, |_, j| cot[j]);
        for l in (0..self.n_layers()).rev() {
            let input = if l == 0 { x } else { tape.hidden[l - 1].as_ref() };
            self.accumulate_layer(l, &mut grad, &delta, input, false);
            if l == 0 {
                break;
            }
            let mut back = Mat::zeros(self.widths[l], n);
            mm(&mut back, Accum::Replace, self.weight(l).transpose(), delta.as_ref());
            let h = &tape.hidden[l - 1];
            for j in 0..n {
                for i in 0..self.widths[l] {
                    back[(i, j)] *= self.activation.slope(h[(i, j)]);
                }
            }
            delta = back;
        }
        (tape.output, grad)
    }

    /// Gradient of `sum_p c_p w(x_p)` with respect to the flat parameters.
    pub fn weight_gradient(&self, x: MatRef<'_, f64>, cot: &[f64]) -> Vec<f64> {
        self.value_and_gradient(x, cot).1
    }

    // Sets grad[A_l] = delta * input^T and grad[b_l] = delta * 1. Tangent
    // passes have no bias term and add to grad[A_l] only.
    fn accumulate_layer(&self, l: usize, grad: &mut [f64], delta: &Mat<f64>, input: MatRef<'_, f64>, tangent: bool) {
        let (ar, br) = self.layer_range(l);
        let (no, ni) = (self.widths[l + 1], self.widths[l]);
        let mut ga = Mat::zeros(no, ni);
        mm(&mut ga, Accum::Replace, delta.as_ref(), input.transpose());
        for i in 0..no {
            for j in 0..ni {
                let g = &mut grad[ar.start + i * ni + j];
                *g = if tangent { *g + ga[(i, j)] } else { ga[(i, j)] };
            }
            if !tangent {
                grad[br.start + i] = (0..delta.ncols()).map(|c| delta[(i, c)]).sum();
            }
        }
    }

    fn require_smooth(&self) -> Result<()> {
        match self.activation {
            Activation::Tanh => Ok(()),
            a => Err(Error::UnsupportedActivation(a.name())),
        }
    }

    /// Forward-mode tangents: for every input direction `d`, the hidden
    /// tangents `dx_l/dx_d`, plus values and spatial gradients.
    #[allow(clippy::type_complexity)]
    fn tangent_tape(&self, x: MatRef<'_, f64>) -> (Tape, Vec<Vec<Mat<f64>>>, Vec<Vec<f64>>) {
        let tape = self.tape(x);
        let n = x.ncols();
        let d_in = self.input_dim();
        let last = self.n_layers() - 1;
        let mut tangents: Vec<Vec<Mat<f64>>> = Vec::with_capacity(d_in);
        let mut jac = Vec::with_capacity(d_in);
        for d in 0..d_in {
            let mut t_layers: Vec<Mat<f64>> = Vec::with_capacity(last);
            for l in 0..last {
                let mut zt = Mat::zeros(self.widths[l + 1], n);
                if l == 0 {
                    let a = self.weight(0);
                    for j in 0..n {
                        for i in 0..self.widths[1] {
                            zt[(i, j)] = a[(i, d)];
                        }
                    }
                } else {
                    mm(&mut zt, Accum::Replace, self.weight(l), t_layers[l - 1].as_ref());
                }
                let h = &tape.hidden[l];
                for j in 0..n {
                    for i in 0..self.widths[l + 1] {
                        zt[(i, j)] *= self.activation.slope(h[(i, j)]);
                    }
                }
                t_layers.push(zt);
            }
            let a = self.weight(last);
            let out: Vec<f64> = if last == 0 {
                vec![a[(0, d)]; n]
            } else {
                let mut o = Mat::zeros(1, n);
                mm(&mut o, Accum::Replace, a, t_layers[last - 1].as_ref());
                (0..n).map(|j| o[(0, j)]).collect()
            };
            jac.push(out);
            tangents.push(t_layers);
        }
        (tape, tangents, jac)
    }

    /// Spatial gradient `dw/dx` at every point, one vector per input
    /// direction.
    pub fn input_jacobian(&self, x: MatRef<'_, f64>) -> Result<Vec<Vec<f64>>> {
        self.require_smooth()?;
        Ok(self.tangent_tape(x).2)
    }

    /// Values and spatial gradients at every point.
    pub fn value_and_input_jacobian(&self, x: MatRef<'_, f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.require_smooth()?;
        let (tape, _, jac) = self.tangent_tape(x);
        Ok((tape.output, jac))
    }

    /// Values, spatial gradients, and the parameter gradient of
    /// `sum_p (c_p w(x_p) + sum_d g_{d,p} dw/dx_d(x_p))`.
    #[allow(clippy::type_complexity)]
    pub fn jacobian_weight_gradient(
        &self,
        x: MatRef<'_, f64>,
        cot_val: &[f64],
        cot_jac: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
        self.require_smooth()?;
        let n = x.ncols();
        let d_in = self.input_dim();
        assert_eq!(cot_val.len(), n);
        assert_eq!(cot_jac.len(), d_in);
        let (tape, tangents, jac) = self.tangent_tape(x);
        let act = self.activation;
        let mut grad = vec![0.0; self.n_params()];
        let last = self.n_layers() - 1;

        // Output layer.
        let zbar = Mat::from_fn(1, n, |_, j| cot_val[j]);
        let input = if last == 0 { x } else { tape.hidden[last - 1].as_ref() };
        self.accumulate_layer(last, &mut grad, &zbar, input, false);
        let mut ztbar: Vec<Mat<f64>> = (0..d_in)
            .map(|d| Mat::from_fn(1, n, |_, j| cot_jac[d][j]))
            .collect();
        if last > 0 {
            for d in 0..d_in {
                self.accumulate_layer(last, &mut grad, &ztbar[d], tangents[d][last - 1].as_ref(), true);
            }
        } else {
            let (ar, _) = self.layer_range(0);
            for d in 0..d_in {
                grad[ar.start + d] += cot_jac[d].iter().sum::<f64>();
            }
            return Ok((tape.output, jac, grad));
        }
        let mut zbar = zbar;

        for l in (0..last).rev() {
            // Cotangents of the layer outputs x_l and their tangents.
            let w = self.weight(l + 1).transpose();
            let mut xbar = Mat::zeros(self.widths[l + 1], n);
            mm(&mut xbar, Accum::Replace, w, zbar.as_ref());
            let mut xtbar: Vec<Mat<f64>> = Vec::with_capacity(d_in);
            for tb in &ztbar {
                let mut m = Mat::zeros(self.widths[l + 1], n);
                mm(&mut m, Accum::Replace, w, tb.as_ref());
                xtbar.push(m);
            }
            // Through the activation, where xt = rho'(z) zt.
            let h = &tape.hidden[l];
            let mut new_zbar = Mat::zeros(self.widths[l + 1], n);
            let mut new_ztbar: Vec<Mat<f64>> = Vec::with_capacity(d_in);
            for d in 0..d_in {
                let xt = &tangents[d][l];
                let mut m = Mat::zeros(self.widths[l + 1], n);
                for j in 0..n {
                    for i in 0..self.widths[l + 1] {
                        let s = act.slope(h[(i, j)]);
                        m[(i, j)] = xtbar[d][(i, j)] * s;
                        new_zbar[(i, j)] += xtbar[d][(i, j)] * act.curvature_ratio(h[(i, j)]) * xt[(i, j)];
                    }
                }
                new_ztbar.push(m);
            }
            for j in 0..n {
                for i in 0..self.widths[l + 1] {
                    new_zbar[(i, j)] += xbar[(i, j)] * act.slope(h[(i, j)]);
                }
            }
            let input = if l == 0 { x } else { tape.hidden[l - 1].as_ref() };
            self.accumulate_layer(l, &mut grad, &new_zbar, input, false);
            if l == 0 {
                // Input tangents are unit vectors: dA[:, d] += sum_p zt_bar_d.
                let (ar, _) = self.layer_range(0);
                for d in 0..d_in {
                    for i in 0..self.widths[1] {
                        let s: f64 = (0..n).map(|j| new_ztbar[d][(i, j)]).sum();
                        grad[ar.start + i * d_in + d] += s;
                    }
                }
            } else {
                for d in 0..d_in {
                    self.accumulate_layer(l, &mut grad, &new_ztbar[d], tangents[d][l - 1].as_ref(), true);
                }
            }
            zbar = new_zbar;
            ztbar = new_ztbar;
        }
        Ok((tape.output, jac, grad))
    }

    /// Little-endian checkpoint: magic `IVPN`, format version, activation
    /// tag, widths, parameter count and parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.widths.len() + 8 * self.params.len());
        out.extend_from_slice(b"IVPN");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.activation.tag().to_le_bytes());
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated checkpoint"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != b"IVPN" {
            return Err(bad("bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != 1 {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let activation = Activation::from_tag(u32_at(take(4)?)).ok_or_else(|| bad("unknown activation"))?;
        let nw = u32_at(take(4)?) as usize;
        let mut widths = Vec::with_capacity(nw);
        for _ in 0..nw {
            widths.push(u32_at(take(4)?) as usize);
        }
        let np = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut params = Vec::with_capacity(np);
        for _ in 0..np {
            params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        Self::from_params(widths, activation, params)
    }
}

/// One-input ReLU network with three hidden neurons whose output is the hat
/// of height `1/h` centered at `center` with support `(center - h, center + h)`.
pub fn build_relu_bump(center: f64, h: f64) -> Result<Mlp> {
    if h.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidConfig(format!("bump half-width must be positive, got {h}")));
    }
    let inv = 1.0 / h;
    let params = vec![
        inv,
        inv,
        inv,
        (h - center) / h,
        -center / h,
        (-center - h) / h,
        inv,
        -2.0 * inv,
        inv,
        0.0,
    ];
    Mlp::from_params(vec![1, 3, 1], Activation::Relu, params)
}

/// Exact first derivative of a one-input ReLU network, taking the one-sided
/// slope 0 at kinks where the pre-activation vanishes.
pub fn relu_derivative_1d(net: &Mlp, x: f64) -> f64 {
    assert_eq!(net.input_dim(), 1);
    let mut val = vec![x];
    let mut der = vec![1.0];
    for l in 0..net.n_layers() {
        let a = net.weight(l);
        let b = net.bias(l);
        let mut nv = vec![0.0; b.len()];
        let mut nd = vec![0.0; b.len()];
        for i in 0..b.len() {
            nv[i] = b[i] + (0..val.len()).map(|j| a[(i, j)] * val[j]).sum::<f64>();
            nd[i] = (0..der.len()).map(|j| a[(i, j)] * der[j]).sum::<f64>();
        }
        if l + 1 < net.n_layers() {
            for i in 0..nv.len() {
                nv[i] = net.activation.apply(nv[i]);
                nd[i] *= net.activation.slope(nv[i]);
            }
        }
        val = nv;
        der = nd;
    }
    der[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, dim: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut net = Mlp::zeros(vec![2, 4, 4, 1], Activation::Tanh).unwrap();
        let n = net.n_params();
        net.params_mut()[n - 1] = 0.7;
        let v = net.forward(batch(5, 2, 1).as_ref());
        assert!(v.iter().all(|&x| x == 0.7));
        let j = net.input_jacobian(batch(5, 2, 1).as_ref()).unwrap();
        assert!(j.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn tiny_tanh_net() {
        let net = Mlp::from_params(vec![1, 1, 1], Activation::Tanh, vec![1.0, 0.0, 2.0, 1.0]).unwrap();
        assert_eq!(net.forward(Mat::from_fn(1, 1, |_, _| 0.0).as_ref()), vec![1.0]);
    }

    #[test]
    fn batched_matches_pointwise() {
        let net = Mlp::init(&[3, 7, 5, 1], Activation::Tanh, 11).unwrap();
        let x = batch(13, 3, 2);
        let v = net.forward(x.as_ref());
        for j in 0..13 {
            let p: Vec<f64> = (0..3).map(|i| x[(i, j)]).collect();
            assert!((v[j] - net.eval_point(&p)).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_layer_gradient() {
        let net = Mlp::from_params(vec![2, 1], Activation::Tanh, vec![0.3, -0.2, 0.1]).unwrap();
        let x = Mat::from_fn(2, 1, |i, _| [0.5, -1.5][i]);
        let g = net.weight_gradient(x.as_ref(), &[2.0]);
        assert_eq!(g, vec![1.0, -3.0, 2.0]);
        assert!(net.weight_gradient(x.as_ref(), &[0.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = Mlp::init(&[2, 6, 6, 1], Activation::Tanh, 5).unwrap();
        let x = batch(5, 2, 9);
        let cot = [0.3, -1.0, 0.5, 2.0, -0.7];
        let g = net.weight_gradient(x.as_ref(), &cot);
        let f = |p: &[f64]| -> f64 {
            let mut m = net.clone();
            m.set_params(p);
            m.forward(x.as_ref()).iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        for k in 0..net.n_params() {
            let mut p = net.params().to_vec();
            p[k] += 1e-6;
            let fp = f(&p);
            p[k] -= 2e-6;
            let fm = f(&p);
            let fd = (fp - fm) / 2e-6;
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn jacobian_and_its_weight_gradient() {
        let net = Mlp::init(&[2, 5, 4, 1], Activation::Tanh, 21).unwrap();
        let x = batch(4, 2, 3);
        let jac = net.input_jacobian(x.as_ref()).unwrap();
        for j in 0..4 {
            for d in 0..2 {
                let mut p: Vec<f64> = (0..2).map(|i| x[(i, j)]).collect();
                p[d] += 1e-6;
                let fp = net.eval_point(&p);
                p[d] -= 2e-6;
                let fm = net.eval_point(&p);
                assert!(((fp - fm) / 2e-6 - jac[d][j]).abs() < 1e-8);
            }
        }
        let cv = vec![0.2, -0.4, 1.0, 0.3];
        let cj = vec![vec![1.0, 0.5, -0.5, 2.0], vec![-1.0, 0.3, 0.7, 0.1]];
        let (_, _, g) = net.jacobian_weight_gradient(x.as_ref(), &cv, &cj).unwrap();
        let f = |p: &[f64]| -> f64 {
            let mut m = net.clone();
            m.set_params(p);
            let v = m.forward(x.as_ref());
            let jj = m.input_jacobian(x.as_ref()).unwrap();
            let mut s: f64 = v.iter().zip(&cv).map(|(a, b)| a * b).sum();
            for d in 0..2 {
                s += jj[d].iter().zip(&cj[d]).map(|(a, b)| a * b).sum::<f64>();
            }
            s
        };
        for k in 0..net.n_params() {
            let mut p = net.params().to_vec();
            p[k] += 1e-6;
            let fp = f(&p);
            p[k] -= 2e-6;
            let fm = f(&p);
            let fd = (fp - fm) / 2e-6;
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn single_layer_jacobian_gradient() {
        let net = Mlp::init(&[2, 1], Activation::Tanh, 1).unwrap();
        let x = batch(3, 2, 3);
        let (_, _, g) = net
            .jacobian_weight_gradient(x.as_ref(), &[0.0; 3], &[vec![1.0; 3], vec![0.0; 3]])
            .unwrap();
        assert_eq!(g, vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_rejected_for_jacobian() {
        let net = Mlp::init(&[1, 3, 1], Activation::Relu, 0).unwrap();
        assert!(matches!(
            net.input_jacobian(batch(2, 1, 0).as_ref()),
            Err(Error::UnsupportedActivation("relu"))
        ));
    }

    #[test]
    fn seeding() {
        let a = Mlp::init(&[2, 50, 50, 1], Activation::Tanh, 4).unwrap();
        let b = Mlp::init(&[2, 50, 50, 1], Activation::Tanh, 4).unwrap();
        let c = Mlp::init(&[2, 50, 50, 1], Activation::Tanh, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (r, _) = a.layer_range(1);
        let w = &a.params()[r];
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let want = 2.0 / 100.0;
        assert!((var - want).abs() < 0.2 * want, "{var}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = Mlp::init(&[3, 4, 1], Activation::Tanh, 8).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"IVPN");
        assert_eq!(Mlp::from_bytes(&bytes).unwrap(), a);
        assert!(Mlp::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn relu_bump_shape() {
        let net = build_relu_bump(0.3, 0.1).unwrap();
        let at = |x: f64| net.eval_point(&[x]);
        assert!((at(0.3) - 10.0).abs() < 1e-12);
        assert!(at(0.2).abs() < 1e-12 && at(0.4).abs() < 1e-12);
        assert_eq!(at(0.05), 0.0);
        assert_eq!(at(0.9), 0.0);
        assert!((relu_derivative_1d(&net, 0.25) - 100.0).abs() < 1e-9);
        assert!((relu_derivative_1d(&net, 0.35) + 100.0).abs() < 1e-9);
        assert_eq!(relu_derivative_1d(&net, 0.7), 0.0);
        assert!(build_relu_bump(0.5, 0.0).is_err());
    }
}
