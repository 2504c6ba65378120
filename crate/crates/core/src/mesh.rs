//! Conforming simplicial meshes in one and two dimensions.
//!
//! Elements and boundary facets are stored flat with a stride of `dim + 1`
//! and `dim` vertex indices respectively. A refined mesh records the index of
//! its parent element in the mesh it was refined from.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrature::signed_area;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

impl BoundaryTag {
    fn symbol(self) -> char {
        match self {
            BoundaryTag::Dirichlet => 'D',
            BoundaryTag::Neumann => 'N',
        }
    }
}

/// Tags for the four sides of an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundarySpec {
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom: BoundaryTag,
    pub top: BoundaryTag,
}

impl BoundarySpec {
    pub fn all(tag: BoundaryTag) -> Self {
        Self {
            left: tag,
            right: tag,
            bottom: tag,
            top: tag,
        }
    }

    /// Dirichlet on `x = x0` and `x = x1`, Neumann on the horizontal sides.
    pub fn dirichlet_left_right() -> Self {
        Self {
            left: BoundaryTag::Dirichlet,
            right: BoundaryTag::Dirichlet,
            bottom: BoundaryTag::Neumann,
            top: BoundaryTag::Neumann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    pub const UNIT: Rectangle = Rectangle {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
}

/// Test degree, quadrature precision and interpolation degree, tied by
/// `q >= 2 k_test` and `k_int = q + 2 - k_test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscretizationConfig {
    pub k_test: usize,
    pub q: usize,
    pub k_int: usize,
}

impl DiscretizationConfig {
    /// The combinations exercised by the experiments: `(k_test, q)` in
    /// `{(1, 3), (1, 5), (2, 5)}`.
    pub const SUPPORTED: [DiscretizationConfig; 3] = [
        DiscretizationConfig { k_test: 1, q: 3, k_int: 4 },
        DiscretizationConfig { k_test: 1, q: 5, k_int: 6 },
        DiscretizationConfig { k_test: 2, q: 5, k_int: 5 },
    ];

    pub fn new(k_test: usize, q: usize) -> Result<Self> {
        if k_test == 0 {
            return Err(Error::InvalidConfig("k_test must be at least 1".into()));
        }
        if q < 2 * k_test {
            return Err(Error::InvalidConfig(format!(
                "quadrature precision q = {q} must be at least 2 k_test = {}",
                2 * k_test
            )));
        }
        let cfg = Self {
            k_test,
            q,
            k_int: q + 2 - k_test,
        };
        if !Self::SUPPORTED.contains(&cfg) {
            return Err(Error::InvalidConfig(format!(
                "(k_test = {k_test}, q = {q}) is not one of the supported pairs (1,3), (1,5), (2,5)"
            )));
        }
        Ok(cfg)
    }

    /// Same constraints without restricting to the supported table. Used by
    /// diagnostics that deliberately probe other pairings.
    pub fn unchecked(k_test: usize, q: usize, k_int: usize) -> Self {
        Self { k_test, q, k_int }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<[f64; 2]>,
    elements: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<BoundaryTag>,
    parent: Option<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh from raw arrays and checks every structural invariant.
    pub fn new(
        dim: usize,
        vertices: Vec<[f64; 2]>,
        elements: Vec<usize>,
        facets: Vec<usize>,
        facet_tags: Vec<BoundaryTag>,
    ) -> Result<Self> {
        let mesh = Self {
            dim,
            vertices,
            elements,
            facets,
            facet_tags,
            parent: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn element_coords(&self, e: usize) -> Vec<[f64; 2]> {
        self.element(e).iter().map(|&v| self.vertices[v]).collect()
    }

    /// Vertex coordinates of a triangle.
    pub fn triangle(&self, e: usize) -> [[f64; 2]; 3] {
        debug_assert_eq!(self.dim, 2);
        let t = self.element(e);
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn n_facets(&self) -> usize {
        self.facet_tags.len()
    }

    pub fn facet(&self, f: usize) -> (&[usize], BoundaryTag) {
        let k = self.dim;
        (&self.facets[f * k..(f + 1) * k], self.facet_tags[f])
    }

    pub fn facets(&self) -> impl Iterator<Item = (&[usize], BoundaryTag)> + '_ {
        (0..self.n_facets()).map(|f| self.facet(f))
    }

    pub fn parent_map(&self) -> Option<&[usize]> {
        self.parent.as_deref()
    }

    /// Element measure (length or area).
    pub fn element_measure(&self, e: usize) -> f64 {
        match self.dim {
            1 => {
                let t = self.element(e);
                (self.vertices[t[1]][0] - self.vertices[t[0]][0]).abs()
            }
            _ => signed_area(&self.triangle(e)).abs(),
        }
    }

    pub fn element_diameter(&self, e: usize) -> f64 {
        let c = self.element_coords(e);
        let mut d: f64 = 0.0;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                d = d.max((c[i][0] - c[j][0]).hypot(c[i][1] - c[j][1]));
            }
        }
        d
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let c = self.element_coords(e);
        let n = c.len() as f64;
        [
            c.iter().map(|p| p[0]).sum::<f64>() / n,
            c.iter().map(|p| p[1]).sum::<f64>() / n,
        ]
    }

    /// Maximum element diameter.
    pub fn meshsize(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_diameter(e))
            .fold(0.0, f64::max)
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_measure(e)).sum()
    }

    /// Vertices lying on at least one facet with the given tag.
    pub fn tagged_vertices(&self, tag: BoundaryTag) -> HashSet<usize> {
        self.facets()
            .filter(|(_, t)| *t == tag)
            .flat_map(|(v, _)| v.iter().copied())
            .collect()
    }

    /// Sorted vertex pairs of Dirichlet edges (2D only).
    pub fn dirichlet_edges(&self) -> HashSet<[usize; 2]> {
        self.facets()
            .filter(|(_, t)| *t == BoundaryTag::Dirichlet)
            .filter(|(v, _)| v.len() == 2)
            .map(|(v, _)| sorted_pair(v[0], v[1]))
            .collect()
    }

    /// Structural checks: index bounds, positive orientation, conformity,
    /// facet coverage of the boundary and a nonempty Dirichlet part.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidMesh(m));
        if self.dim != 1 && self.dim != 2 {
            return invalid(format!("dimension must be 1 or 2, got {}", self.dim));
        }
        let nv = self.vertices.len();
        if self.elements.is_empty() || !self.elements.len().is_multiple_of(self.dim + 1) {
            return invalid("element array is empty or not a multiple of dim + 1".into());
        }
        if self.facets.len() != self.facet_tags.len() * self.dim {
            return invalid("facet array does not match the facet tags".into());
        }
        if let Some(&bad) = self.elements.iter().chain(&self.facets).find(|&&v| v >= nv) {
            return invalid(format!("vertex index {bad} out of range"));
        }
        for e in 0..self.n_elements() {
            let measure = match self.dim {
                1 => {
                    let t = self.element(e);
                    self.vertices[t[1]][0] - self.vertices[t[0]][0]
                }
                _ => signed_area(&self.triangle(e)),
            };
            if measure <= 0.0 {
                return invalid(format!("element {e} is not positively oriented"));
            }
        }

        // Boundary facets are exactly the facets seen by one element.
        let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
        for e in 0..self.n_elements() {
            for f in element_facets(self.dim, self.element(e)) {
                *count.entry(f).or_default() += 1;
            }
        }
        if let Some((f, c)) = count.iter().find(|(_, &c)| c > 2) {
            return invalid(format!("facet {f:?} shared by {c} elements"));
        }
        let boundary: HashSet<Vec<usize>> = count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(f, _)| f)
            .collect();
        let mut tagged = HashSet::new();
        for (v, _) in self.facets() {
            let mut key = v.to_vec();
            key.sort_unstable();
            if !boundary.contains(&key) {
                return invalid(format!("tagged facet {key:?} is not on the boundary"));
            }
            if !tagged.insert(key.clone()) {
                return invalid(format!("boundary facet {key:?} tagged twice"));
            }
        }
        if tagged.len() != boundary.len() {
            return invalid(format!(
                "{} boundary facets but {} tags",
                boundary.len(),
                tagged.len()
            ));
        }
        if !self.facet_tags.contains(&BoundaryTag::Dirichlet) {
            return invalid("Dirichlet boundary is empty".into());
        }
        Ok(())
    }

    /// Reads the plain-text mesh format (see [`Mesh::write_text`]).
    pub fn read_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l.split_whitespace().map(str::to_owned).collect())),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::MeshParse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        fn num<T: std::str::FromStr>(line: usize, tok: Option<&String>) -> Result<T> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::MeshParse {
                line,
                msg: format!("expected a number, found {:?}", tok.map(String::as_str)),
            })
        }
        let (ln, h) = next("header")?;
        if h.len() != 4 {
            return Err(Error::MeshParse {
                line: ln,
                msg: "header must be `dim n_vertices n_elements n_boundary_edges`".into(),
            });
        }
        let dim: usize = num(ln, h.first())?;
        let nv: usize = num(ln, h.get(1))?;
        let ne: usize = num(ln, h.get(2))?;
        let nb: usize = num(ln, h.get(3))?;
        if dim != 1 && dim != 2 {
            return Err(Error::MeshParse {
                line: ln,
                msg: format!("dimension must be 1 or 2, got {dim}"),
            });
        }
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, t) = next("vertex")?;
            let x = num(ln, t.first())?;
            let y = if dim == 2 { num(ln, t.get(1))? } else { 0.0 };
            vertices.push([x, y]);
        }
        let mut elements = Vec::with_capacity(ne * (dim + 1));
        for _ in 0..ne {
            let (ln, t) = next("element")?;
            for k in 0..=dim {
                elements.push(num(ln, t.get(k))?);
            }
        }
        let mut facets = Vec::with_capacity(nb * dim);
        let mut tags = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (ln, t) = next("boundary edge")?;
            for k in 0..dim {
                facets.push(num(ln, t.get(k))?);
            }
            tags.push(match t.get(dim).map(String::as_str) {
                Some("D") => BoundaryTag::Dirichlet,
                Some("N") => BoundaryTag::Neumann,
                other => {
                    return Err(Error::MeshParse {
                        line: ln,
                        msg: format!("boundary tag must be D or N, found {other:?}"),
                    })
                }
            });
        }
        Mesh::new(dim, vertices, elements, facets, tags)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_text(std::io::BufReader::new(f))
    }

    /// Header `dim n_vertices n_elements n_boundary_edges`, then one line per
    /// vertex, per element (0-based vertex indices) and per boundary facet
    /// (`dim` vertex indices followed by `D` or `N`).
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {} {}",
            self.dim,
            self.n_vertices(),
            self.n_elements(),
            self.n_facets()
        );
        for v in &self.vertices {
            if self.dim == 1 {
                let _ = writeln!(s, "{:?}", v[0]);
            } else {
                let _ = writeln!(s, "{:?} {:?}", v[0], v[1]);
            }
        }
        for e in 0..self.n_elements() {
            let idx: Vec<String> = self.element(e).iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", idx.join(" "));
        }
        for (v, tag) in self.facets() {
            let idx: Vec<String> = v.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{} {}", idx.join(" "), tag.symbol());
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn element_facets(dim: usize, el: &[usize]) -> Vec<Vec<usize>> {
    match dim {
        1 => vec![vec![el[0]], vec![el[1]]],
        _ => (0..3)
            .map(|i| {
                let p = sorted_pair(el[i], el[(i + 1) % 3]);
                vec![p[0], p[1]]
            })
            .collect(),
    }
}

/// Uniform triangulation of a rectangle: `nx * ny` cells, each split along
/// its south-west to north-east diagonal.
pub fn build_structured_mesh(
    nx: usize,
    ny: usize,
    domain: Rectangle,
    boundary: BoundarySpec,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh("nx and ny must be at least 1".into()));
    }
    let (w, h) = (domain.x1 - domain.x0, domain.y1 - domain.y0);
    if w.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        || h.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
    {
        return Err(Error::InvalidMesh(format!(
            "degenerate rectangle of width {w} and height {h}"
        )));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                domain.x0 + w * i as f64 / nx as f64,
                domain.y0 + h * j as f64 / ny as f64,
            ]);
        }
    }
    let mut elements = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (sw, se, nw, ne) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            elements.extend_from_slice(&[sw, se, ne, sw, ne, nw]);
        }
    }
    let mut facets = Vec::new();
    let mut tags = Vec::new();
    for i in 0..nx {
        facets.extend_from_slice(&[id(i, 0), id(i + 1, 0)]);
        tags.push(boundary.bottom);
    }
    for j in 0..ny {
        facets.extend_from_slice(&[id(nx, j), id(nx, j + 1)]);
        tags.push(boundary.right);
    }
    for i in (0..nx).rev() {
        facets.extend_from_slice(&[id(i + 1, ny), id(i, ny)]);
        tags.push(boundary.top);
    }
    for j in (0..ny).rev() {
        facets.extend_from_slice(&[id(0, j + 1), id(0, j)]);
        tags.push(boundary.left);
    }
    Mesh::new(2, vertices, elements, facets, tags)
}

/// Uniform partition of `[a, b]` into `n` cells, both endpoints Dirichlet.
pub fn build_interval_mesh(n: usize, a: f64, b: f64) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMesh("n must be at least 1".into()));
    }
    if b.partial_cmp(&a) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidMesh(format!("empty interval ({a}, {b})")));
    }
    let vertices = (0..=n)
        .map(|i| [a + (b - a) * i as f64 / n as f64, 0.0])
        .collect();
    let elements = (0..n).flat_map(|i| [i, i + 1]).collect();
    Mesh::new(
        1,
        vertices,
        elements,
        vec![0, n],
        vec![BoundaryTag::Dirichlet, BoundaryTag::Dirichlet],
    )
}

/// Integer barycentric point on an element lattice of order `k`: pairs of
/// (global vertex, weight), sorted by vertex, zero weights dropped. Two
/// elements generate the same key exactly when they share the point.
pub(crate) type LatticeKey = ([usize; 3], [usize; 3], u8);

pub(crate) fn lattice_key(verts: &[usize], weights: &[usize]) -> LatticeKey {
    let mut pairs: Vec<(usize, usize)> = verts
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0)
        .map(|(&v, &w)| (v, w))
        .collect();
    pairs.sort_unstable();
    let mut vs = [usize::MAX; 3];
    let mut ws = [0; 3];
    for (i, (v, w)) in pairs.iter().enumerate() {
        vs[i] = *v;
        ws[i] = *w;
    }
    (vs, ws, pairs.len() as u8)
}

/// Physical coordinates of a lattice key, evaluated from the canonical
/// (sorted) representation so that shared points agree bitwise.
pub(crate) fn lattice_point(key: &LatticeKey, k: usize, vertices: &[[f64; 2]]) -> [f64; 2] {
    let (vs, ws, n) = key;
    let n = *n as usize;
    if n == 1 {
        return vertices[vs[0]];
    }
    let kf = k as f64;
    let mut p = [0.0; 2];
    for i in 0..n {
        let t = ws[i] as f64 / kf;
        p[0] += t * vertices[vs[i]][0];
        p[1] += t * vertices[vs[i]][1];
    }
    p
}

/// Local lattice of order `k` on a reference simplex, as integer barycentric
/// weights `(k - i - j, i, j)` in 2D or `(k - i, i)` in 1D. Ordering is `j`
/// outer, `i` inner.
pub(crate) fn local_lattice(dim: usize, k: usize) -> Vec<Vec<usize>> {
    match dim {
        1 => (0..=k).map(|i| vec![k - i, i]).collect(),
        _ => {
            let mut out = Vec::with_capacity((k + 1) * (k + 2) / 2);
            for j in 0..=k {
                for i in 0..=k - j {
                    out.push(vec![k - i - j, i, j]);
                }
            }
            out
        }
    }
}

/// Splits every element into `s^dim` congruent children by the uniform
/// `s`-section of its edges. Fine vertices are identified through exact
/// lattice keys, boundary tags are inherited and the parent map is filled.
pub fn refine_nested(coarse: &Mesh, s: usize) -> Result<Mesh> {
    if s == 0 {
        return Err(Error::InvalidConfig("subdivision factor must be at least 1".into()));
    }
    let dim = coarse.dim;
    let lattice = local_lattice(dim, s);
    let mut index: HashMap<LatticeKey, usize> = HashMap::new();
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut fine_id = |key: LatticeKey, vertices: &mut Vec<[f64; 2]>| -> usize {
        *index.entry(key).or_insert_with(|| {
            vertices.push(lattice_point(&key, s, &coarse.vertices));
            vertices.len() - 1
        })
    };
    // Coarse vertices keep their indices.
    for v in 0..coarse.n_vertices() {
        fine_id(lattice_key(&[v], &[s]), &mut vertices);
    }

    let mut elements = Vec::new();
    let mut parent = Vec::new();
    for e in 0..coarse.n_elements() {
        let verts = coarse.element(e);
        let ids: Vec<usize> = lattice
            .iter()
            .map(|w| fine_id(lattice_key(verts, w), &mut vertices))
            .collect();
        match dim {
            1 => {
                for i in 0..s {
                    elements.extend_from_slice(&[ids[i], ids[i + 1]]);
                    parent.push(e);
                }
            }
            _ => {
                // Row j of the lattice starts at offset(j) and has s + 1 - j points.
                let offset = |j: usize| j * (s + 1) - j * (j.saturating_sub(1)) / 2;
                let at = |i: usize, j: usize| ids[offset(j) + i];
                for j in 0..s {
                    for i in 0..s - j {
                        elements.extend_from_slice(&[at(i, j), at(i + 1, j), at(i, j + 1)]);
                        parent.push(e);
                        if i + j + 1 < s {
                            elements.extend_from_slice(&[
                                at(i + 1, j),
                                at(i + 1, j + 1),
                                at(i, j + 1),
                            ]);
                            parent.push(e);
                        }
                    }
                }
            }
        }
    }

    let mut facets = Vec::new();
    let mut tags = Vec::new();
    for (fv, tag) in coarse.facets() {
        match dim {
            1 => {
                facets.push(fv[0]);
                tags.push(tag);
            }
            _ => {
                let (a, b) = (fv[0], fv[1]);
                let pts: Vec<usize> = (0..=s)
                    .map(|t| fine_id(lattice_key(&[a, b], &[s - t, t]), &mut vertices))
                    .collect();
                for t in 0..s {
                    facets.extend_from_slice(&[pts[t], pts[t + 1]]);
                    tags.push(tag);
                }
            }
        }
    }
    let mut mesh = Mesh::new(dim, vertices, elements, facets, tags)?;
    mesh.parent = Some(parent);
    Ok(mesh)
}

/// Checks that every fine element lies inside its parent (centroid and all
/// vertices, up to `tol` in barycentric coordinates).
pub fn check_nesting(fine: &Mesh, coarse: &Mesh, tol: f64) -> Result<()> {
    let parent = fine
        .parent_map()
        .ok_or_else(|| Error::InvalidMesh("mesh has no parent map".into()))?;
    for e in 0..fine.n_elements() {
        let g = parent[e];
        let mut pts = fine.element_coords(e);
        pts.push(fine.centroid(e));
        for p in pts {
            let inside = match coarse.dim {
                1 => {
                    let c = coarse.element_coords(g);
                    p[0] >= c[0][0] - tol && p[0] <= c[1][0] + tol
                }
                _ => barycentric(&coarse.triangle(g), p).iter().all(|&l| l >= -tol),
            };
            if !inside {
                return Err(Error::OutsideParent {
                    fine_element: e,
                    parent: g,
                    point: p,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn barycentric(t: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let det = 2.0 * signed_area(t);
    let l1 = ((p[0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (p[1] - t[0][1])) / det;
    let l2 = ((t[1][0] - t[0][0]) * (p[1] - t[0][1]) - (p[0] - t[0][0]) * (t[1][1] - t[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Counts how many elements touch each undirected edge; useful in tests of
/// conformity.
pub fn edge_multiplicity(mesh: &Mesh) -> BTreeMap<[usize; 2], usize> {
    let mut m = BTreeMap::new();
    if mesh.dim == 2 {
        for e in 0..mesh.n_elements() {
            let t = mesh.element(e);
            for i in 0..3 {
                *m.entry(sorted_pair(t[i], t[(i + 1) % 3])).or_default() += 1;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(nx: usize, spec: BoundarySpec) -> Mesh {
        build_structured_mesh(nx, nx, Rectangle::UNIT, spec).unwrap()
    }

    #[test]
    fn minimal_square() {
        let m = unit(1, BoundarySpec::all(BoundaryTag::Dirichlet));
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_facets(), 4);
        assert!((m.meshsize() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn element_count_formula() {
        let m = build_structured_mesh(4, 3, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).unwrap();
        assert_eq!(m.n_elements(), 24);
        assert_eq!(unit(4, BoundarySpec::all(BoundaryTag::Dirichlet)).n_elements(), 32);
    }

    #[test]
    fn side_tag_counts() {
        let m = build_structured_mesh(5, 3, Rectangle::UNIT, BoundarySpec::dirichlet_left_right()).unwrap();
        let d = m.facets().filter(|(_, t)| *t == BoundaryTag::Dirichlet).count();
        let n = m.facets().filter(|(_, t)| *t == BoundaryTag::Neumann).count();
        assert_eq!(d, 2 * 3);
        assert_eq!(n, 2 * 5);
    }

    #[test]
    fn degenerate_rectangle_rejected() {
        let r = Rectangle { x0: 0.0, x1: 0.0, y0: 0.0, y1: 1.0 };
        assert!(build_structured_mesh(2, 2, r, BoundarySpec::all(BoundaryTag::Dirichlet)).is_err());
        assert!(build_structured_mesh(0, 2, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Dirichlet)).is_err());
    }

    #[test]
    fn all_neumann_is_rejected() {
        assert!(matches!(
            build_structured_mesh(2, 2, Rectangle::UNIT, BoundarySpec::all(BoundaryTag::Neumann)),
            Err(Error::InvalidMesh(_))
        ));
    }

    #[test]
    fn refine_by_one_is_identity() {
        let m = unit(2, BoundarySpec::dirichlet_left_right());
        let r = refine_nested(&m, 1).unwrap();
        assert_eq!(r.vertices(), m.vertices());
        assert_eq!(r.n_elements(), m.n_elements());
        for e in 0..m.n_elements() {
            assert_eq!(r.element(e), m.element(e));
        }
        assert_eq!(r.parent_map().unwrap(), (0..m.n_elements()).collect::<Vec<_>>());
    }

    #[test]
    fn refine_square_by_four() {
        let m = unit(1, BoundarySpec::all(BoundaryTag::Dirichlet));
        let r = refine_nested(&m, 4).unwrap();
        assert_eq!(r.n_elements(), 32);
        assert_eq!(r.n_vertices(), 25);
        check_nesting(&r, &m, 1e-12).unwrap();
        let counts = r.parent_map().unwrap().iter().fold([0usize; 2], |mut c, &p| {
            c[p] += 1;
            c
        });
        assert_eq!(counts, [16, 16]);
    }

    #[test]
    fn refinement_scales_meshsize_and_preserves_area() {
        let m = unit(3, BoundarySpec::dirichlet_left_right());
        for s in [2, 4, 5, 6] {
            let r = refine_nested(&m, s).unwrap();
            assert!((r.meshsize() - m.meshsize() / s as f64).abs() < 1e-12);
            assert!((r.total_measure() - m.total_measure()).abs() < 1e-12);
            assert!(edge_multiplicity(&r).values().all(|&c| c == 1 || c == 2));
            check_nesting(&r, &m, 1e-12).unwrap();
            assert_eq!(r.n_facets(), m.n_facets() * s);
        }
    }

    #[test]
    fn structured_refinement_matches_finer_structured_mesh() {
        let m = unit(2, BoundarySpec::all(BoundaryTag::Dirichlet));
        let r = refine_nested(&m, 2).unwrap();
        let f = unit(4, BoundarySpec::all(BoundaryTag::Dirichlet));
        let key = |mesh: &Mesh| {
            let mut tris: Vec<Vec<(i64, i64)>> = (0..mesh.n_elements())
                .map(|e| {
                    let mut t: Vec<(i64, i64)> = mesh
                        .element_coords(e)
                        .iter()
                        .map(|p| ((p[0] * 8.0).round() as i64, (p[1] * 8.0).round() as i64))
                        .collect();
                    t.sort();
                    t
                })
                .collect();
            tris.sort();
            tris
        };
        assert_eq!(key(&r), key(&f));
    }

    #[test]
    fn interval_mesh() {
        let m = build_interval_mesh(4, 0.0, 1.0).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((m.meshsize() - 0.25).abs() < 1e-15);
        let one = build_interval_mesh(1, 0.0, 1.0).unwrap();
        assert_eq!(one.n_elements(), 1);
        assert_eq!(one.tagged_vertices(BoundaryTag::Dirichlet).len(), 2);
        let r = refine_nested(&one, 4).unwrap();
        assert_eq!(r.n_elements(), 4);
        assert!((r.meshsize() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn text_round_trip() {
        let m = refine_nested(&unit(2, BoundarySpec::dirichlet_left_right()), 3).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = Mesh::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.n_elements(), m.n_elements());
        assert_eq!(back.facets().count(), m.facets().count());
    }

    #[test]
    fn bad_text_reports_line() {
        let txt = "2 3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 D\n1 2 X\n2 0 D\n";
        match Mesh::read_text(txt.as_bytes()) {
            Err(Error::MeshParse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn discretization_pairs() {
        assert_eq!(DiscretizationConfig::new(1, 3).unwrap().k_int, 4);
        assert_eq!(DiscretizationConfig::new(1, 5).unwrap().k_int, 6);
        assert_eq!(DiscretizationConfig::new(2, 5).unwrap().k_int, 5);
        assert!(DiscretizationConfig::new(2, 3).is_err());
        assert!(DiscretizationConfig::new(1, 4).is_err());
    }
}
