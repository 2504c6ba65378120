//! Quadrature-based assembly of the weak residuals and the discrete
//! diagnostics built on them.
//!
//! Test functions live on the fine mesh `T_h` (degree `k_test`, Dirichlet
//! nodes removed), trial functions on the coarse mesh `T_H` (degree
//! `k_int`), and `T_h` is the uniform `k_int`-refinement of `T_H`. Row `i` of
//! the operator holds `a_h(phi_j, v_i)` for every trial basis function
//! `phi_j`, so the residual of a trial field with nodal values `u` is
//! `b - A u`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use faer::linalg::solvers::{Solve, SolveLstsq};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Side};

use crate::error::{Error, Result};
use crate::fem::{build_interpolation_matrices, build_space, AffineMap, FeSpace, InterpolationMatrices, QuadratureSet};
use crate::mesh::{refine_nested, BoundaryTag, DiscretizationConfig, Mesh};
use crate::problems::{ProblemDefinition, Reaction};
use crate::quadrature::reference_interval_rule;
use crate::sparse::CsrMatrix;

/// Largest trial dimension accepted by the dense inf-sup computation.
pub const INFSUP_LIMIT: usize = 3000;

#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    /// Subdivision factor from `T_H` to `T_h`; `k_int` when absent.
    pub refinement: Option<usize>,
    /// Reject configurations with more free trial nodes than test
    /// functions.
    pub require_rank: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            refinement: None,
            require_rank: true,
        }
    }
}

/// Test-function data at the fine quadrature points, used by the
/// nonlinear reaction and by the non-interpolated residual.
#[derive(Debug, Clone)]
pub struct QuadCache {
    pub quad: QuadratureSet,
    /// `test_v[q][i] = v_i(xi_q)`, one column per residual row.
    pub test_v: CsrMatrix,
    pub test_dx: CsrMatrix,
    pub test_dy: Option<CsrMatrix>,
    pub mu: Vec<f64>,
    pub beta: Vec<[f64; 2]>,
    pub sigma: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub config: DiscretizationConfig,
    pub problem: ProblemDefinition,
    pub coarse: Arc<Mesh>,
    pub fine: Arc<Mesh>,
    pub trial: FeSpace,
    pub test: FeSpace,
    /// Test-space node behind each residual row.
    pub test_nodes: Vec<usize>,
    /// Linear part of the operator; the reaction is excluded when it is
    /// nonlinear.
    pub a_lin: CsrMatrix,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub interp: InterpolationMatrices,
    pub cache: QuadCache,
}

/// Residual vector, weighted squared norm, and its gradient with respect to
/// the trial nodal values.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub r: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Residuals of a field known directly at the quadrature points, with
/// cotangents on its values and gradients there.
#[derive(Debug, Clone)]
pub struct PointResiduals {
    pub r: Vec<f64>,
    pub loss: f64,
    pub cot_value: Vec<f64>,
    pub cot_grad: Vec<[f64; 2]>,
}

fn check_coefficient(name: &'static str, x: [f64; 2], v: f64, positive: bool) -> Result<()> {
    if !v.is_finite() || (positive && v <= 0.0) {
        return Err(Error::Coefficient { name, point: x, value: v });
    }
    Ok(())
}

/// Assembles the operator, load, weights and interpolation matrices for a
/// coarse mesh with the default nesting `H = k_int h`.
pub fn assemble_system(problem: &ProblemDefinition, config: DiscretizationConfig, coarse: &Mesh) -> Result<AssembledSystem> {
    assemble_system_with(problem, config, coarse, AssemblyOptions::default())
}

pub fn assemble_system_with(
    problem: &ProblemDefinition,
    config: DiscretizationConfig,
    coarse: &Mesh,
    options: AssemblyOptions,
) -> Result<AssembledSystem> {
    if config.q < 2 * config.k_test || config.k_test == 0 || config.k_int == 0 {
        return Err(Error::InvalidConfig(format!("inconsistent discretization {config:?}")));
    }
    if coarse.dim() != problem.dim() {
        return Err(Error::InvalidConfig(format!(
            "mesh dimension {} does not match problem dimension {}",
            coarse.dim(),
            problem.dim()
        )));
    }
    let coarse = Arc::new(coarse.clone());
    let fine = Arc::new(refine_nested(&coarse, options.refinement.unwrap_or(config.k_int))?);
    let trial = build_space(coarse.clone(), config.k_int)?;
    let test = build_space(fine.clone(), config.k_test)?;
    let test_nodes = test.free_nodes();
    let n_trial_free = trial.free_nodes().len();
    if options.require_rank && n_trial_free > test_nodes.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_trial_free} free trial nodes exceed {} test functions",
            test_nodes.len()
        )));
    }
    let mut row_of = vec![usize::MAX; test.n_nodes()];
    for (r, &n) in test_nodes.iter().enumerate() {
        row_of[n] = r;
    }
    let n_rows = test_nodes.len();
    let dim = problem.dim();

    let quad = QuadratureSet::new(&fine, config.q)?;
    let parent = fine.parent_map().expect("refined mesh has a parent map");
    let interp = build_interpolation_matrices(&trial, &quad, parent)?;
    let ref_basis: Vec<(Vec<f64>, Vec<[f64; 2]>)> =
        quad.rule.points.iter().map(|&r| test.basis().eval(r)).collect();

    let nq = quad.len();
    let mut mu = Vec::with_capacity(nq);
    let mut beta = Vec::with_capacity(nq);
    let mut sigma = Vec::with_capacity(nq);
    let mut fv = Vec::with_capacity(nq);
    for &x in &quad.points {
        let (m, bt, s, f) = ((problem.mu)(x), (problem.beta)(x), (problem.sigma)(x), (problem.f)(x));
        check_coefficient("mu", x, m, true)?;
        check_coefficient("beta_x", x, bt[0], false)?;
        check_coefficient("beta_y", x, bt[1], false)?;
        check_coefficient("sigma", x, s, false)?;
        check_coefficient("f", x, f, false)?;
        mu.push(m);
        beta.push(bt);
        sigma.push(s);
        fv.push(f);
    }
    let linear_reaction = matches!(problem.reaction, Reaction::Linear);

    let mut b = vec![0.0; n_rows];
    let mut ta = Vec::new();
    let (mut tv, mut tx, mut ty) = (Vec::new(), Vec::new(), Vec::new());
    let nt = test.local_len();
    for e in 0..fine.n_elements() {
        let map = AffineMap::new(&fine, e);
        let tnodes = test.element_nodes(e);
        let range = quad.element_range(e);
        let cols: Vec<usize> = interp.m.row(range.start).0.to_vec();
        let mut local = vec![0.0; nt * cols.len()];
        for (k, qi) in range.clone().enumerate() {
            let w = quad.weights[qi];
            let (vals, rgrads) = &ref_basis[k];
            let grads: Vec<[f64; 2]> = rgrads.iter().map(|&g| map.grad(g)).collect();
            let mv = interp.m.row(qi).1;
            let mx = interp.m_dx.row(qi).1;
            let my = interp.m_dy.as_ref().map(|m| m.row(qi).1);
            let s = if linear_reaction { sigma[qi] } else { 0.0 };
            for i in 0..nt {
                let row = row_of[tnodes[i]];
                if row == usize::MAX {
                    continue;
                }
                let (v, g) = (vals[i], grads[i]);
                b[row] += w * fv[qi] * v;
                tv.push((qi, row, v));
                tx.push((qi, row, g[0]));
                if dim == 2 {
                    ty.push((qi, row, g[1]));
                }
                for j in 0..cols.len() {
                    let (dxj, dyj) = (mx[j], my.map_or(0.0, |m| m[j]));
                    local[i * cols.len() + j] += w
                        * (mu[qi] * (g[0] * dxj + g[1] * dyj)
                            + (beta[qi][0] * dxj + beta[qi][1] * dyj) * v
                            + s * mv[j] * v);
                }
            }
        }
        for i in 0..nt {
            let row = row_of[tnodes[i]];
            if row == usize::MAX {
                continue;
            }
            for (j, &c) in cols.iter().enumerate() {
                ta.push((row, c, local[i * cols.len() + j]));
            }
        }
    }
    add_neumann_load(problem, &fine, &test, &row_of, config.q, &mut b)?;

    let ntrial = trial.n_nodes();
    Ok(AssembledSystem {
        config,
        problem: problem.clone(),
        coarse,
        fine,
        a_lin: CsrMatrix::from_triplets(n_rows, ntrial, &ta),
        b,
        gamma: vec![1.0; n_rows],
        cache: QuadCache {
            test_v: CsrMatrix::from_triplets(nq, n_rows, &tv),
            test_dx: CsrMatrix::from_triplets(nq, n_rows, &tx),
            test_dy: (dim == 2).then(|| CsrMatrix::from_triplets(nq, n_rows, &ty)),
            quad,
            mu,
            beta,
            sigma,
            f: fv,
        },
        interp,
        trial,
        test,
        test_nodes,
    })
}

fn add_neumann_load(
    problem: &ProblemDefinition,
    fine: &Mesh,
    test: &FeSpace,
    row_of: &[usize],
    q: usize,
    b: &mut [f64],
) -> Result<()> {
    if fine.facets().all(|(_, t)| t != BoundaryTag::Neumann) {
        return Ok(());
    }
    // Element owning each boundary facet.
    let mut owner: HashMap<Vec<usize>, usize> = HashMap::new();
    for e in 0..fine.n_elements() {
        let el = fine.element(e);
        if fine.dim() == 1 {
            owner.insert(vec![el[0]], e);
            owner.insert(vec![el[1]], e);
        } else {
            for i in 0..3 {
                let mut k = vec![el[i], el[(i + 1) % 3]];
                k.sort_unstable();
                owner.insert(k, e);
            }
        }
    }
    let rule = reference_interval_rule(q)?;
    for (verts, tag) in fine.facets() {
        if tag != BoundaryTag::Neumann {
            continue;
        }
        let mut key = verts.to_vec();
        key.sort_unstable();
        let e = owner[&key];
        let el = fine.element(e);
        let map = AffineMap::new(fine, e);
        let other = *el.iter().find(|v| !verts.contains(v)).expect("element has a vertex off the facet");
        let c = fine.vertices()[other];
        let (pts, wts, normal) = if fine.dim() == 1 {
            let x = fine.vertices()[verts[0]];
            let n = if x[0] > c[0] { 1.0 } else { -1.0 };
            (vec![x], vec![1.0], [n, 0.0])
        } else {
            let (a, bb) = (fine.vertices()[verts[0]], fine.vertices()[verts[1]]);
            let t = [bb[0] - a[0], bb[1] - a[1]];
            let len = t[0].hypot(t[1]);
            let mut n = [t[1] / len, -t[0] / len];
            if n[0] * (c[0] - a[0]) + n[1] * (c[1] - a[1]) > 0.0 {
                n = [-n[0], -n[1]];
            }
            let m = rule.map_segment(a, bb)?;
            (m.points, m.weights, n)
        };
        let nodes = test.element_nodes(e);
        for (x, w) in pts.iter().zip(&wts) {
            let psi = (problem.psi)(*x, normal);
            check_coefficient("psi", *x, psi, false)?;
            let (vals, _) = test.basis().eval(map.to_reference(*x));
            for (i, &node) in nodes.iter().enumerate() {
                let row = row_of[node];
                if row != usize::MAX {
                    b[row] += w * psi * vals[i];
                }
            }
        }
    }
    Ok(())
}

impl AssembledSystem {
    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn n_trial(&self) -> usize {
        self.trial.n_nodes()
    }

    /// Interpolation nodes of the trial space: the points where the network
    /// is sampled.
    pub fn trial_nodes(&self) -> &[[f64; 2]] {
        self.trial.nodes()
    }

    fn weighted(&self, r: &[f64]) -> (Vec<f64>, f64) {
        let rho: Vec<f64> = r.iter().zip(&self.gamma).map(|(r, g)| r / g).collect();
        let loss = r.iter().zip(&rho).map(|(a, b)| a * b).sum();
        (rho, loss)
    }

    /// Residuals `r = b - a_h(I_H u, v_i)`, loss `sum r_i^2 / gamma_i` and
    /// its gradient in the trial nodal values.
    pub fn compute_residuals(&self, u: &[f64]) -> Residuals {
        assert_eq!(u.len(), self.n_trial());
        let au = self.a_lin.mul_vec(u);
        let mut r: Vec<f64> = self.b.iter().zip(&au).map(|(b, a)| b - a).collect();
        let nonlinear = match self.problem.reaction {
            Reaction::Linear => None,
            reaction => {
                let uq = self.interp.m.mul_vec(u);
                let ws: Vec<f64> = (0..uq.len())
                    .map(|q| self.cache.quad.weights[q] * self.cache.sigma[q])
                    .collect();
                let vals: Vec<(f64, f64)> = uq.iter().map(|&v| reaction.eval(v)).collect();
                let load: Vec<f64> = vals.iter().zip(&ws).map(|((e, _), w)| w * e).collect();
                let t = self.cache.test_v.tr_mul_vec(&load);
                for (ri, ti) in r.iter_mut().zip(&t) {
                    *ri -= ti;
                }
                Some((vals, ws))
            }
        };
        let (rho, loss) = self.weighted(&r);
        let mut grad = self.a_lin.tr_mul_vec(&rho);
        if let Some((vals, ws)) = nonlinear {
            let vr = self.cache.test_v.mul_vec(&rho);
            let c: Vec<f64> = (0..vr.len()).map(|q| vals[q].1 * ws[q] * vr[q]).collect();
            for (g, d) in grad.iter_mut().zip(self.interp.m.tr_mul_vec(&c)) {
                *g += d;
            }
        }
        grad.iter_mut().for_each(|g| *g *= -2.0);
        Residuals { r, loss, grad }
    }

    /// Residuals of a field given by its values and gradients at the fine
    /// quadrature points, without interpolation.
    pub fn point_residuals(&self, u: &[f64], grad_u: &[[f64; 2]]) -> PointResiduals {
        let c = &self.cache;
        let nq = c.quad.len();
        assert_eq!(u.len(), nq);
        assert_eq!(grad_u.len(), nq);
        let w = &c.quad.weights;
        let reaction = self.problem.reaction;
        let react: Vec<(f64, f64)> = u.iter().map(|&v| reaction.eval(v)).collect();
        let fx: Vec<f64> = (0..nq).map(|q| w[q] * c.mu[q] * grad_u[q][0]).collect();
        let fy: Vec<f64> = (0..nq).map(|q| w[q] * c.mu[q] * grad_u[q][1]).collect();
        let lower: Vec<f64> = (0..nq)
            .map(|q| {
                w[q] * (c.beta[q][0] * grad_u[q][0] + c.beta[q][1] * grad_u[q][1] + c.sigma[q] * react[q].0)
            })
            .collect();
        let mut r = self.b.clone();
        for (ri, d) in r.iter_mut().zip(c.test_dx.tr_mul_vec(&fx)) {
            *ri -= d;
        }
        if let Some(dy) = &c.test_dy {
            for (ri, d) in r.iter_mut().zip(dy.tr_mul_vec(&fy)) {
                *ri -= d;
            }
        }
        for (ri, d) in r.iter_mut().zip(c.test_v.tr_mul_vec(&lower)) {
            *ri -= d;
        }
        let (rho, loss) = self.weighted(&r);
        let vr = c.test_v.mul_vec(&rho);
        let xr = c.test_dx.mul_vec(&rho);
        let yr = c.test_dy.as_ref().map(|m| m.mul_vec(&rho));
        let mut cot_value = Vec::with_capacity(nq);
        let mut cot_grad = Vec::with_capacity(nq);
        for q in 0..nq {
            let yq = yr.as_ref().map_or(0.0, |y| y[q]);
            cot_value.push(-2.0 * w[q] * c.sigma[q] * react[q].1 * vr[q]);
            cot_grad.push([
                -2.0 * w[q] * (c.mu[q] * xr[q] + c.beta[q][0] * vr[q]),
                -2.0 * w[q] * (c.mu[q] * yq + c.beta[q][1] * vr[q]),
            ]);
        }
        PointResiduals {
            r,
            loss,
            cot_value,
            cot_grad,
        }
    }

    /// Nodal values of `I_H ubar` on the Dirichlet trial nodes, zero
    /// elsewhere.
    pub fn dirichlet_values(&self) -> Vec<f64> {
        let mask = self.trial.dirichlet_mask();
        self.trial
            .nodes()
            .iter()
            .zip(mask)
            .map(|(&x, &d)| if d { (self.problem.lifting.ubar)(x).0 } else { 0.0 })
            .collect()
    }

    /// Operator and load as text: the matrix in `nrows ncols nnz` triplet
    /// form followed by a `b n` line and one load entry per line.
    pub fn dump_triplets(&self) -> String {
        let mut s = self.a_lin.to_triplet_text();
        let _ = writeln!(s, "b {}", self.b.len());
        for v in &self.b {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }
}

/// `H^1` Gram matrix of a Lagrange space restricted to the listed nodes.
pub fn gram_h1(space: &FeSpace, nodes: &[usize]) -> Result<CsrMatrix> {
    let mesh = space.mesh();
    let quad = QuadratureSet::new(mesh, 2 * space.degree())?;
    let mut pos = vec![usize::MAX; space.n_nodes()];
    for (k, &n) in nodes.iter().enumerate() {
        pos[n] = k;
    }
    let ref_basis: Vec<(Vec<f64>, Vec<[f64; 2]>)> =
        quad.rule.points.iter().map(|&r| space.basis().eval(r)).collect();
    let mut t = Vec::new();
    let nl = space.local_len();
    for e in 0..mesh.n_elements() {
        let map = AffineMap::new(mesh, e);
        let en = space.element_nodes(e);
        let mut local = vec![0.0; nl * nl];
        for (k, qi) in quad.element_range(e).enumerate() {
            let w = quad.weights[qi];
            let (v, rg) = &ref_basis[k];
            let g: Vec<[f64; 2]> = rg.iter().map(|&d| map.grad(d)).collect();
            for i in 0..nl {
                for j in 0..nl {
                    local[i * nl + j] += w * (v[i] * v[j] + g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        for i in 0..nl {
            for j in 0..nl {
                let (a, b) = (pos[en[i]], pos[en[j]]);
                if a != usize::MAX && b != usize::MAX {
                    t.push((a, b, local[i * nl + j]));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(nodes.len(), nodes.len(), &t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfSupReport {
    pub alpha_tilde: f64,
    pub c_h: f64,
    pub c_h_upper: f64,
    pub dim_trial: usize,
    pub dim_test: usize,
}

fn dense(a: &CsrMatrix) -> Mat<f64> {
    let mut m = Mat::zeros(a.nrows(), a.ncols());
    for (r, c, v) in a.iter() {
        m[(r, c)] = v;
    }
    m
}

fn la_err(e: impl std::fmt::Debug) -> Error {
    Error::LinearAlgebra(format!("{e:?}"))
}

/// Largest eigenvalue of a symmetric positive operator by Lanczos with full
/// reorthogonalization.
fn lanczos_max(n: usize, steps: usize, mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let m = steps.min(n).max(1);
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
    let nrm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter_mut().for_each(|v| *v /= nrm);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for k in 0..m {
        let mut w = apply(&basis[k])?;
        let a: f64 = w.iter().zip(&basis[k]).map(|(x, y)| x * y).sum();
        alpha.push(a);
        for _ in 0..2 {
            for v in &basis {
                let d: f64 = w.iter().zip(v).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= d * y);
            }
        }
        let b = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if k + 1 == m || b <= 1e-12 * a.abs().max(1e-300) {
            break;
        }
        beta.push(b);
        basis.push(w.into_iter().map(|v| v / b).collect());
    }
    let k = alpha.len();
    let t = Mat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let ev = t.self_adjoint_eigenvalues(Side::Lower).map_err(la_err)?;
    Ok(ev.into_iter().fold(f64::MIN, f64::max))
}

/// Discrete inf-sup constant of `a_h` between the Dirichlet-free trial
/// space and the test space in the `H^1` norms, and the norm-equivalence
/// constants of the test basis with unit weights.
pub fn compute_infsup(system: &AssembledSystem) -> Result<InfSupReport> {
    let free = system.trial.free_nodes();
    let n_u = free.len();
    let n_v = system.n_rows();
    if n_u > INFSUP_LIMIT {
        return Err(Error::DimensionGuard { n: n_u, limit: INFSUP_LIMIT });
    }
    let gv = gram_h1(&system.test, &system.test_nodes)?;
    let gv_llt = gv.to_faer()?.sp_cholesky(Side::Lower).map_err(la_err)?;
    let solve = |x: &[f64]| -> Result<Vec<f64>> {
        let rhs = Mat::from_fn(x.len(), 1, |i, _| x[i]);
        let s = gv_llt.solve(&rhs);
        Ok((0..x.len()).map(|i| s[(i, 0)]).collect())
    };
    let lmax = lanczos_max(n_v, 200, |x| Ok(gv.mul_vec(x)))?;
    let inv_lmin = lanczos_max(n_v, 200, solve)?;
    let c_h = 1.0 / lmax.sqrt();
    let big_c = inv_lmin.sqrt();

    let alpha_tilde = if n_u > n_v {
        0.0
    } else {
        let a = dense(&system.a_lin.submatrix(&(0..n_v).collect::<Vec<_>>(), &free));
        let x = gv_llt.solve(&a);
        let mut k = Mat::zeros(n_u, n_u);
        matmul(k.as_mut(), Accum::Replace, a.transpose(), x.as_ref(), 1.0, Par::Seq);
        let gu = dense(&gram_h1(&system.trial, &free)?);
        let l = gu.llt(Side::Lower).map_err(la_err)?;
        let lm = l.L();
        // C = L^{-1} K L^{-T}
        let mut y = k;
        lm.solve_lower_triangular_in_place(y.as_mut());
        let mut c = y.transpose().to_owned();
        lm.solve_lower_triangular_in_place(c.as_mut());
        let cs = Mat::from_fn(n_u, n_u, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
        let ev = cs.self_adjoint_eigenvalues(Side::Lower).map_err(la_err)?;
        let lmin = ev.into_iter().fold(f64::MAX, f64::min);
        lmin.max(0.0).sqrt()
    };
    Ok(InfSupReport {
        alpha_tilde,
        c_h,
        c_h_upper: big_c,
        dim_trial: n_u,
        dim_test: n_v,
    })
}

/// Direct Petrov-Galerkin solution of the linear discrete problem with the
/// Dirichlet trial values fixed to `ubar` at the nodes: LU when the free
/// system is square, least squares when it has more rows than unknowns.
pub fn solve_petrov_galerkin(system: &AssembledSystem) -> Result<Vec<f64>> {
    if !matches!(system.problem.reaction, Reaction::Linear) {
        return Err(Error::InvalidConfig("the direct solver handles linear problems only".into()));
    }
    let free = system.trial.free_nodes();
    let dir = system.trial.dirichlet_nodes();
    let n_v = system.n_rows();
    if free.len() > n_v {
        return Err(Error::InvalidConfig(format!(
            "{} unknowns but only {n_v} equations",
            free.len()
        )));
    }
    let mut u = system.dirichlet_values();
    let rows: Vec<usize> = (0..n_v).collect();
    let a_dir = system.a_lin.submatrix(&rows, &dir);
    let ud: Vec<f64> = dir.iter().map(|&i| u[i]).collect();
    let lift = a_dir.mul_vec(&ud);
    let rhs = Mat::from_fn(n_v, 1, |i, _| system.b[i] - lift[i]);
    let a = system.a_lin.submatrix(&rows, &free).to_faer()?;
    let sol = if free.len() == n_v {
        a.sp_lu().map_err(la_err)?.solve(&rhs)
    } else {
        a.sp_qr().map_err(la_err)?.solve_lstsq(&rhs)
    };
    for (k, &i) in free.iter().enumerate() {
        u[i] = sol[(k, 0)];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifting::{build_phi_rect, field, zero_field, BoundaryLifting};
    use crate::mesh::{build_structured_mesh, BoundarySpec, Rectangle};
    use crate::problems::{case_smooth, case_zero_data, Geometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poisson(sigma: f64, f: f64) -> ProblemDefinition {
        let spec = BoundarySpec::all(BoundaryTag::Dirichlet);
        ProblemDefinition {
            name: "test".into(),
            geometry: Geometry::Rectangle {
                domain: Rectangle::UNIT,
                boundary: spec,
            },
            mu: Arc::new(|_| 1.0),
            beta: Arc::new(|_| [0.0, 0.0]),
            sigma: Arc::new(move |_| sigma),
            f: Arc::new(move |_| f),
            psi: Arc::new(|_, _| 0.0),
            reaction: Reaction::Linear,
            lifting: BoundaryLifting::new(build_phi_rect(Rectangle::UNIT, spec).unwrap(), zero_field()),
            exact: None,
            parameter: None,
        }
    }

    fn same_mesh(k: usize) -> AssemblyOptions {
        let _ = k;
        AssemblyOptions {
            refinement: Some(1),
            require_rank: false,
        }
    }

    #[test]
    fn zero_data_gives_zero_load() {
        let case = case_zero_data(2).unwrap();
        let mesh = case.problem.coarse_mesh(2).unwrap();
        let s = assemble_system(&case.problem, DiscretizationConfig::new(1, 3).unwrap(), &mesh).unwrap();
        assert!(s.b.iter().all(|&v| v == 0.0));
        let r = s.compute_residuals(&vec![0.0; s.n_trial()]);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn p1_stiffness_on_two_triangles() {
        // 2x2 cells so that one interior node exists; compare against the
        // hand-assembled P1 stiffness row of the centre node.
        let pb = poisson(0.0, 0.0);
        let mesh = build_structured_mesh(2, 2, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap();
        let s = assemble_system_with(&pb, DiscretizationConfig::unchecked(1, 2, 1), &mesh, same_mesh(1)).unwrap();
        assert_eq!(s.n_rows(), 1);
        let centre = s.trial.nodes().iter().position(|p| *p == [0.5, 0.5]).unwrap();
        let mut want = vec![0.0; s.n_trial()];
        want[centre] = 4.0;
        for (i, p) in s.trial.nodes().iter().enumerate() {
            let d = [p[0] - 0.5, p[1] - 0.5];
            // Axis neighbours couple with -1, the SW-NE diagonal with 0.
            if (d[0].abs() - 0.5).abs() < 1e-14 && d[1].abs() < 1e-14 || d[0].abs() < 1e-14 && (d[1].abs() - 0.5).abs() < 1e-14 {
                want[i] = -1.0;
            }
        }
        for j in 0..s.n_trial() {
            assert!((s.a_lin.get(0, j) - want[j]).abs() < 1e-12, "{j}: {}", s.a_lin.get(0, j));
        }
    }

    #[test]
    fn mass_row_of_constant() {
        let pb = poisson(1.0, 0.0);
        let mesh = build_structured_mesh(3, 3, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap();
        let s = assemble_system_with(&pb, DiscretizationConfig::unchecked(1, 2, 1), &mesh, same_mesh(1)).unwrap();
        let c = 2.5;
        let au = s.a_lin.mul_vec(&vec![c; s.n_trial()]);
        // Interior P1 node on this mesh touches six triangles of area 1/18.
        for v in au {
            assert!((v - c * 6.0 * (1.0 / 18.0) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_when_spaces_coincide() {
        let pb = poisson(0.0, 1.0);
        let mesh = build_structured_mesh(3, 3, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap();
        let s = assemble_system_with(&pb, DiscretizationConfig::unchecked(2, 4, 2), &mesh, same_mesh(2)).unwrap();
        let free = s.trial.free_nodes();
        // Rows follow the free test nodes, which are the free trial nodes.
        assert_eq!(free, s.test_nodes);
        for (i, &a) in free.iter().enumerate() {
            for (j, &b) in free.iter().enumerate() {
                assert!((s.a_lin.get(i, b) - s.a_lin.get(j, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        for p in [None, Some(1.4)] {
            let case = match p {
                None => case_smooth(),
                Some(p) => crate::problems::case_parametric_nonlinear(p),
            };
            let mesh = case.problem.coarse_mesh(2).unwrap();
            let s = assemble_system(&case.problem, DiscretizationConfig::new(1, 3).unwrap(), &mesh).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let u: Vec<f64> = (0..s.n_trial()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = s.compute_residuals(&u);
            for _ in 0..20 {
                let k = rng.random_range(0..u.len());
                let mut up = u.clone();
                up[k] += 1e-6;
                let mut um = u.clone();
                um[k] -= 1e-6;
                let fd = (s.compute_residuals(&up).loss - s.compute_residuals(&um).loss) / 2e-6;
                let tol = 1e-7 * (1.0 + fd.abs()) + 1e-9 * r.loss;
                assert!((fd - r.grad[k]).abs() <= tol, "{fd} {} loss {}", r.grad[k], r.loss);
            }
        }
    }

    #[test]
    fn point_residuals_agree_with_interpolated_field() {
        let case = case_smooth();
        let mesh = case.problem.coarse_mesh(2).unwrap();
        let s = assemble_system(&case.problem, DiscretizationConfig::new(1, 5).unwrap(), &mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<f64> = (0..s.n_trial()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (v, g) = s.interp.apply(&u);
        let a = s.compute_residuals(&u);
        let b = s.point_residuals(&v, &g);
        for (x, y) in a.r.iter().zip(&b.r) {
            assert!((x - y).abs() < 1e-11 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn petrov_galerkin_solution_zeroes_residual() {
        let case = case_smooth();
        for (kt, q) in [(1, 3), (2, 5)] {
            let mesh = case.problem.coarse_mesh(2).unwrap();
            let s = assemble_system(&case.problem, DiscretizationConfig::new(kt, q).unwrap(), &mesh).unwrap();
            let u = solve_petrov_galerkin(&s).unwrap();
            let r = s.compute_residuals(&u);
            if kt == 1 {
                assert!(r.loss < 1e-20, "{}", r.loss);
            } else {
                // Least squares: the residual is orthogonal to the range.
                let g = s.a_lin.tr_mul_vec(&r.r);
                let free = s.trial.free_nodes();
                assert!(free.iter().all(|&i| g[i].abs() < 1e-8));
            }
        }
    }

    #[test]
    fn infsup_positive_and_rank_deficiency_detected() {
        let case = case_smooth();
        let mesh = case.problem.coarse_mesh(2).unwrap();
        let s = assemble_system(&case.problem, DiscretizationConfig::new(1, 3).unwrap(), &mesh).unwrap();
        let rep = compute_infsup(&s).unwrap();
        assert!(rep.alpha_tilde > 0.0);
        assert!(rep.c_h > 0.0 && rep.c_h <= rep.c_h_upper);
        let broken = assemble_system_with(&case.problem, DiscretizationConfig::new(1, 3).unwrap(), &mesh, same_mesh(4)).unwrap();
        let rep = compute_infsup(&broken).unwrap();
        assert!(rep.dim_trial > rep.dim_test);
        assert_eq!(rep.alpha_tilde, 0.0);
        assert!(assemble_system_with(
            &case.problem,
            DiscretizationConfig::new(1, 3).unwrap(),
            &mesh,
            AssemblyOptions {
                refinement: Some(1),
                require_rank: true
            }
        )
        .is_err());
    }

    #[test]
    fn quadrature_consistency_for_polynomials() {
        // mu = 1 + x, beta = (y, 1), sigma = 2 with a quadratic trial field
        // and P1 tests: integrand degree <= 3 = q.
        let spec = BoundarySpec::all(BoundaryTag::Dirichlet);
        let pb = ProblemDefinition {
            mu: Arc::new(|x| 1.0 + x[0]),
            beta: Arc::new(|x| [x[1], 1.0]),
            sigma: Arc::new(|_| 2.0),
            lifting: BoundaryLifting::new(build_phi_rect(Rectangle::UNIT, spec).unwrap(), field(|_| (0.0, [0.0, 0.0]))),
            ..poisson(0.0, 0.0)
        };
        let mesh = build_structured_mesh(2, 2, Rectangle::UNIT, spec).unwrap();
        let cfg = DiscretizationConfig::unchecked(1, 3, 2);
        let s = assemble_system_with(&pb, cfg, &mesh, AssemblyOptions { refinement: Some(2), require_rank: false }).unwrap();
        let fine_q = assemble_system_with(
            &pb,
            DiscretizationConfig::unchecked(1, 12, 2),
            &mesh,
            AssemblyOptions { refinement: Some(2), require_rank: false },
        )
        .unwrap();
        let u = s.trial.interpolate(|p| p[0] * p[0] - p[0] * p[1] + 0.5 * p[1]);
        let a = s.a_lin.mul_vec(&u);
        let b = fine_q.a_lin.mul_vec(&u);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn neumann_load_uses_outward_normal() {
        // u = y on the unit square with Dirichlet left/right, Poisson:
        // du/dn = +1 on top and -1 on bottom, f = 0. The interpolated exact
        // solution must have zero residual.
        let spec = BoundarySpec::dirichlet_left_right();
        let pb = ProblemDefinition {
            geometry: Geometry::Rectangle { domain: Rectangle::UNIT, boundary: spec },
            psi: Arc::new(|_, n| n[1]),
            lifting: BoundaryLifting::new(build_phi_rect(Rectangle::UNIT, spec).unwrap(), field(|x| (x[1], [0.0, 1.0]))),
            ..poisson(0.0, 0.0)
        };
        let mesh = build_structured_mesh(2, 2, Rectangle::UNIT, spec).unwrap();
        let s = assemble_system(&pb, DiscretizationConfig::new(1, 3).unwrap(), &mesh).unwrap();
        let u = s.trial.interpolate(|p| p[1]);
        assert!(s.compute_residuals(&u).loss < 1e-24);
    }
}
