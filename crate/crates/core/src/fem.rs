//! Lagrange finite-element spaces on simplicial meshes and the sparse
//! interpolation matrices that map nodal values to values and derivatives at
//! quadrature points.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::mesh::{lattice_key, lattice_point, local_lattice, BoundaryTag, LatticeKey, Mesh};
use crate::quadrature::{reference_interval_rule, reference_triangle_rule, QuadratureRule};
use crate::sparse::CsrMatrix;

/// Nodal basis of degree `k` on the reference simplex over the uniform
/// lattice, evaluated in product form on barycentric coordinates: the basis
/// function of the node with integer weights `(a_0, .., a_d)` is
/// `prod_c prod_{m < a_c} (k lambda_c - m) / (m + 1)`.
#[derive(Debug)]
pub struct LagrangeBasis {
    dim: usize,
    degree: usize,
    nodes: Vec<[f64; 2]>,
    weights: Vec<Vec<usize>>,
}

impl LagrangeBasis {
    fn build(dim: usize, degree: usize) -> Self {
        let kf = degree as f64;
        let weights = local_lattice(dim, degree);
        let nodes = weights
            .iter()
            .map(|w| match dim {
                1 => [w[1] as f64 / kf, 0.0],
                _ => [w[1] as f64 / kf, w[2] as f64 / kf],
            })
            .collect();
        Self {
            dim,
            degree,
            nodes,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local nodes in reference coordinates.
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// Values and reference gradients of every local basis function.
    pub fn eval(&self, p: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let k = self.degree;
        let kf = k as f64;
        let lambda: Vec<f64> = match self.dim {
            1 => vec![1.0 - p[0], p[0]],
            _ => vec![1.0 - p[0] - p[1], p[0], p[1]],
        };
        // d lambda_c / d(x, y)
        let dl: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let dl1: [[f64; 2]; 3] = [[-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]];
        let dl = if self.dim == 1 { dl1 } else { dl };
        let mut pv = vec![vec![1.0; k + 1]; lambda.len()];
        let mut pd = vec![vec![0.0; k + 1]; lambda.len()];
        for (c, &l) in lambda.iter().enumerate() {
            for a in 0..k {
                let t = (kf * l - a as f64) / (a + 1) as f64;
                pv[c][a + 1] = pv[c][a] * t;
                pd[c][a + 1] = pd[c][a] * t + pv[c][a] * kf / (a + 1) as f64;
            }
        }
        let mut vals = Vec::with_capacity(self.len());
        let mut grads = Vec::with_capacity(self.len());
        for w in &self.weights {
            let mut v = 1.0;
            let mut g = [0.0, 0.0];
            for c in 0..w.len() {
                let (fv, fd) = (pv[c][w[c]], pd[c][w[c]]);
                g = [g[0] * fv + v * fd * dl[c][0], g[1] * fv + v * fd * dl[c][1]];
                v *= fv;
            }
            vals.push(v);
            grads.push(g);
        }
        (vals, grads)
    }
}

/// Shared, lazily built basis for a given dimension and degree.
pub fn lagrange_basis(dim: usize, degree: usize) -> Arc<LagrangeBasis> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<LagrangeBasis>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((dim, degree))
        .or_insert_with(|| Arc::new(LagrangeBasis::build(dim, degree)))
        .clone()
}

/// Affine map from the reference simplex onto a mesh element.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    origin: [f64; 2],
    jac: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    det: f64,
    dim: usize,
}

impl AffineMap {
    pub fn new(mesh: &Mesh, e: usize) -> Self {
        let c = mesh.element_coords(e);
        if mesh.dim() == 1 {
            let d = c[1][0] - c[0][0];
            return Self {
                origin: c[0],
                jac: [[d, 0.0], [0.0, 1.0]],
                inv: [[1.0 / d, 0.0], [0.0, 1.0]],
                det: d,
                dim: 1,
            };
        }
        let jac = [
            [c[1][0] - c[0][0], c[2][0] - c[0][0]],
            [c[1][1] - c[0][1], c[2][1] - c[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        Self {
            origin: c[0],
            jac,
            inv,
            det,
            dim: 2,
        }
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn to_physical(&self, r: [f64; 2]) -> [f64; 2] {
        if self.dim == 1 {
            return [self.origin[0] + self.jac[0][0] * r[0], 0.0];
        }
        [
            self.origin[0] + self.jac[0][0] * r[0] + self.jac[0][1] * r[1],
            self.origin[1] + self.jac[1][0] * r[0] + self.jac[1][1] * r[1],
        ]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        if self.dim == 1 {
            return [self.inv[0][0] * d[0], 0.0];
        }
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Physical gradient from a reference gradient: `J^{-T} g`.
    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        if self.dim == 1 {
            return [self.inv[0][0] * g[0], 0.0];
        }
        [
            self.inv[0][0] * g[0] + self.inv[1][0] * g[1],
            self.inv[0][1] * g[0] + self.inv[1][1] * g[1],
        ]
    }
}

fn inside_reference(dim: usize, r: [f64; 2], tol: f64) -> bool {
    match dim {
        1 => r[0] >= -tol && r[0] <= 1.0 + tol,
        _ => r[0] >= -tol && r[1] >= -tol && r[0] + r[1] <= 1.0 + tol,
    }
}

/// Continuous Lagrange space of degree `k` over a mesh.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    basis: Arc<LagrangeBasis>,
    nodes: Vec<[f64; 2]>,
    connectivity: Vec<usize>,
    dirichlet: Vec<bool>,
}

impl FeSpace {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn local_len(&self) -> usize {
        self.basis.len()
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        let n = self.local_len();
        &self.connectivity[e * n..(e + 1) * n]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    /// Nodes not on the Dirichlet boundary, in increasing order.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !self.dirichlet[i]).collect()
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.dirichlet[i]).collect()
    }

    /// Nodal interpolant of a scalar function.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// Values and physical gradients of the local basis of element `e` at a
    /// reference point.
    pub fn eval_basis(&self, e: usize, r: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let map = AffineMap::new(&self.mesh, e);
        let (v, g) = self.basis.eval(r);
        (v, g.into_iter().map(|g| map.grad(g)).collect())
    }
}

/// Builds the degree-`k` space with globally shared vertex, edge and
/// interior nodes. Nodes are numbered in order of first appearance when
/// sweeping the elements.
pub fn build_space(mesh: Arc<Mesh>, degree: usize) -> Result<FeSpace> {
    if degree == 0 {
        return Err(Error::InvalidConfig("polynomial degree must be at least 1".into()));
    }
    let dim = mesh.dim();
    let basis = lagrange_basis(dim, degree);
    let lattice = local_lattice(dim, degree);
    let dir_vertices = mesh.tagged_vertices(BoundaryTag::Dirichlet);
    let dir_edges = mesh.dirichlet_edges();

    let mut index: HashMap<LatticeKey, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut dirichlet = Vec::new();
    let mut connectivity = Vec::with_capacity(mesh.n_elements() * lattice.len());
    for e in 0..mesh.n_elements() {
        let verts = mesh.element(e);
        for w in &lattice {
            let key = lattice_key(verts, w);
            let id = *index.entry(key).or_insert_with(|| {
                nodes.push(lattice_point(&key, degree, mesh.vertices()));
                let (vs, _, n) = key;
                dirichlet.push(match n {
                    1 => dir_vertices.contains(&vs[0]),
                    2 if dim == 2 => dir_edges.contains(&[vs[0], vs[1]]),
                    _ => false,
                });
                nodes.len() - 1
            });
            connectivity.push(id);
        }
    }
    Ok(FeSpace {
        mesh,
        basis,
        nodes,
        connectivity,
        dirichlet,
    })
}

/// Mapped quadrature points of every element of a mesh, stored contiguously
/// element by element, together with the reference coordinates they came
/// from.
#[derive(Debug, Clone)]
pub struct QuadratureSet {
    pub rule: QuadratureRule,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub element: Vec<usize>,
    offsets: Vec<usize>,
}

impl QuadratureSet {
    pub fn new(mesh: &Mesh, precision: usize) -> Result<Self> {
        let rule = match mesh.dim() {
            1 => reference_interval_rule(precision)?,
            _ => reference_triangle_rule(precision)?,
        };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut element = Vec::new();
        let mut offsets = vec![0];
        for e in 0..mesh.n_elements() {
            let map = AffineMap::new(mesh, e);
            if map.det() <= 0.0 {
                return Err(Error::DegenerateElement { measure: map.det() });
            }
            let scale = map.det().abs();
            for (r, w) in rule.points.iter().zip(&rule.weights) {
                points.push(map.to_physical(*r));
                weights.push(w * scale);
                element.push(e);
            }
            offsets.push(points.len());
        }
        Ok(Self {
            rule,
            points,
            weights,
            element,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn element_range(&self, e: usize) -> std::ops::Range<usize> {
        self.offsets[e]..self.offsets[e + 1]
    }
}

/// Value and derivative interpolation matrices: rows are points, columns
/// are nodes of the interpolation space.
#[derive(Debug, Clone)]
pub struct InterpolationMatrices {
    pub m: CsrMatrix,
    pub m_dx: CsrMatrix,
    /// Absent in one dimension.
    pub m_dy: Option<CsrMatrix>,
}

impl InterpolationMatrices {
    pub fn n_points(&self) -> usize {
        self.m.nrows()
    }

    /// Values and gradients at the points of the field with the given nodal
    /// values.
    pub fn apply(&self, nodal: &[f64]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let v = self.m.mul_vec(nodal);
        let dx = self.m_dx.mul_vec(nodal);
        let dy = match &self.m_dy {
            Some(m) => m.mul_vec(nodal),
            None => vec![0.0; dx.len()],
        };
        (v, dx.into_iter().zip(dy).map(|(a, b)| [a, b]).collect())
    }
}

/// Interpolation matrices at points of a refined mesh. `parent_map[e]` is
/// the coarse element that contains fine element `e`; every point of `quad`
/// is located in the parent of the element it belongs to.
pub fn build_interpolation_matrices(
    space: &FeSpace,
    quad: &QuadratureSet,
    parent_map: &[usize],
) -> Result<InterpolationMatrices> {
    let owners: Vec<usize> = quad.element.iter().map(|&e| parent_map[e]).collect();
    interpolation_at_points(space, &quad.points, &owners).map_err(|err| match err {
        Error::OutsideParent { point, parent, .. } => {
            let idx = quad.points.iter().position(|p| *p == point).unwrap_or(0);
            Error::OutsideParent {
                fine_element: quad.element[idx],
                parent,
                point,
            }
        }
        other => other,
    })
}

/// Interpolation matrices at arbitrary points, each with a known owning
/// element of the space's mesh.
pub fn interpolation_at_points(
    space: &FeSpace,
    points: &[[f64; 2]],
    owners: &[usize],
) -> Result<InterpolationMatrices> {
    assert_eq!(points.len(), owners.len());
    let dim = space.mesh.dim();
    let nloc = space.local_len();
    let mut tv = Vec::with_capacity(points.len() * nloc);
    let mut tx = Vec::with_capacity(points.len() * nloc);
    let mut ty = Vec::with_capacity(if dim == 2 { points.len() * nloc } else { 0 });
    let mut cached: Option<(usize, AffineMap)> = None;
    for (row, (&p, &g)) in points.iter().zip(owners).enumerate() {
        let map = match cached {
            Some((e, m)) if e == g => m,
            _ => {
                let m = AffineMap::new(&space.mesh, g);
                cached = Some((g, m));
                m
            }
        };
        let r = map.to_reference(p);
        if !inside_reference(dim, r, 1e-10) {
            return Err(Error::OutsideParent {
                fine_element: row,
                parent: g,
                point: p,
            });
        }
        let (vals, grads) = space.basis.eval(r);
        for (loc, &node) in space.element_nodes(g).iter().enumerate() {
            let d = map.grad(grads[loc]);
            tv.push((row, node, vals[loc]));
            tx.push((row, node, d[0]));
            if dim == 2 {
                ty.push((row, node, d[1]));
            }
        }
    }
    let n = space.n_nodes();
    Ok(InterpolationMatrices {
        m: CsrMatrix::from_triplets(points.len(), n, &tv),
        m_dx: CsrMatrix::from_triplets(points.len(), n, &tx),
        m_dy: (dim == 2).then(|| CsrMatrix::from_triplets(points.len(), n, &ty)),
    })
}
