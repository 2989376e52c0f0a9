//! Simplicial meshes of the unit ball, half-balls B(0,1) ∩ {ρ·x < 0} and
//! star-shaped domains, with P1 finite-element calculus.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix, Point};
use crate::par;

/// Tolerance for the unit-length check on normals and for Γ membership.
pub const GAMMA_TOL: f64 = 1e-12;

/// Smooth radial graph r(ω) = r0 + l·ω + ωᵀQω on the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarRadius {
    pub r0: f64,
    pub linear: Vec<f64>,
    pub quadratic: Vec<Vec<f64>>,
}

impl StarRadius {
    pub fn sphere(n: usize) -> Self {
        StarRadius {
            r0: 1.0,
            linear: vec![0.0; n],
            quadratic: vec![vec![0.0; n]; n],
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.linear.len() != n || self.quadratic.len() != n || self.quadratic.iter().any(|r| r.len() != n) {
            return invalid("star radius coefficients do not match the dimension");
        }
        let qn: f64 = self.quadratic.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if self.r0 - linalg::norm(&self.linear) - qn < 0.1 {
            return invalid("star radius must stay above 0.1 on the sphere");
        }
        Ok(())
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        let n = self.linear.len();
        let mut r = self.r0 + linalg::dot(&self.linear, w);
        for i in 0..n {
            for j in 0..n {
                r += w[i] * self.quadratic[i][j] * w[j];
            }
        }
        r
    }

    /// Tangential derivative data: ∇_ω r = l + (Q + Qᵀ)ω.
    fn grad(&self, w: &[f64]) -> Point {
        let n = self.linear.len();
        let mut g = [0.0; 3];
        for i in 0..n {
            g[i] = self.linear[i];
            for j in 0..n {
                g[i] += (self.quadratic[i][j] + self.quadratic[j][i]) * w[j];
            }
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Ball,
    HalfBall { rho: Vec<f64> },
    Star { radius: StarRadius },
    /// [-1,1]^{n-1} × [-1,0], the free face on {x_n = 0}.
    HalfCube,
}

impl Shape {
    pub fn tag(&self) -> &'static str {
        match self {
            Shape::Ball => "ball",
            Shape::HalfBall { .. } => "half-ball",
            Shape::Star { .. } => "star",
            Shape::HalfCube => "half-cube",
        }
    }

    /// Normal of the free face, for the shapes that have one.
    pub fn rho(&self, dim: usize) -> Option<Vec<f64>> {
        match self {
            Shape::HalfBall { rho } => Some(rho.clone()),
            Shape::HalfCube => {
                let mut r = vec![0.0; dim];
                r[dim - 1] = 1.0;
                Some(r)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Dirichlet,
    FreeGamma,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFace {
    pub vertices: Vec<usize>,
    pub label: Label,
    #[serde(skip)]
    cell: usize,
}

/// Which vertices are pinned to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Every boundary vertex pinned (W^{1,p}_0).
    Dirichlet,
    /// Vertices touching a dirichlet face pinned; Γ interior free.
    GammaFree,
    Free,
}

/// One quadrature point: weight as a fraction of the cell volume, barycentric coordinates.
pub type QuadPoint = (f64, [f64; 4]);

#[derive(Clone, Debug)]
pub struct DomainMesh {
    dim: usize,
    shape: Shape,
    h: f64,
    vertices: Vec<Point>,
    cells: Vec<[usize; 4]>,
    faces: Vec<BoundaryFace>,
    volumes: Vec<f64>,
    /// ∇λ_a for each vertex a of each cell.
    bary_grads: Vec<[Point; 4]>,
    on_boundary: Vec<bool>,
    on_dirichlet: Vec<bool>,
    on_gamma: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    dim: usize,
    shape: Shape,
    h: f64,
    vertices: Vec<Vec<f64>>,
    cells: Vec<Vec<usize>>,
    boundary_faces: Vec<BoundaryFace>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Octant-reflected Kuhn triangulation of a box of `counts` cells with reference
/// coordinates (2i − N)/N, exact at 0 and antisymmetric. Cell diagonals point
/// away from the origin, so the planes |y_i| = |y_j| are unions of faces.
///
/// Cube cells selected by `cone` are instead split into cones from their
/// center over the Kuhn-consistent triangulation of their faces, so no
/// simplex has all vertices on the outer boundary.
fn kuhn_box(dim: usize, counts: &[usize], full: usize, cone: impl Fn(&[usize; 3]) -> bool) -> (Vec<Point>, Vec<[usize; 4]>) {
    let mut strides = [0usize; 3];
    let mut total = 1;
    for d in 0..dim {
        strides[d] = total;
        total *= counts[d] + 1;
    }
    let mut vertices = Vec::with_capacity(total);
    for idx in 0..total {
        let mut p = [0.0; 3];
        for d in 0..dim {
            let i = (idx / strides[d]) % (counts[d] + 1);
            p[d] = (2.0 * i as f64 - full as f64) / full as f64;
        }
        vertices.push(p);
    }
    let perms = permutations(dim);
    let ncubes: usize = counts[..dim].iter().product();
    let mut cells = Vec::with_capacity(ncubes * perms.len());
    for c in 0..ncubes {
        let mut rem = c;
        let mut index = [0usize; 3];
        for d in 0..dim {
            index[d] = rem % counts[d];
            rem /= counts[d];
        }
        // reflect per octant: start at the corner nearest the origin, step outward
        let mut start = 0usize;
        let mut step = [0isize; 3];
        for d in 0..dim {
            let outward = 2 * index[d] + 1 >= full;
            let s_d = if outward { index[d] } else { index[d] + 1 };
            start += s_d * strides[d];
            step[d] = if outward { strides[d] as isize } else { -(strides[d] as isize) };
        }
        let at = |base: usize, axes: &[usize]| -> usize {
            axes.iter().fold(base as isize, |acc, &d| acc + step[d]) as usize
        };
        if dim >= 2 && cone(&index) {
            let mut center = [0.0; 3];
            for d in 0..dim {
                center[d] = (2.0 * index[d] as f64 + 1.0 - full as f64) / full as f64;
            }
            let apex = vertices.len();
            vertices.push(center);
            for axis in 0..dim {
                for far in [false, true] {
                    let f0 = if far { at(start, &[axis]) } else { start };
                    let others: Vec<usize> = (0..dim).filter(|&d| d != axis).collect();
                    if dim == 2 {
                        cells.push([apex, f0, at(f0, &others), usize::MAX]);
                    } else {
                        let (i, j) = (others[0], others[1]);
                        let diag = at(f0, &[i, j]);
                        cells.push([apex, f0, at(f0, &[i]), diag]);
                        cells.push([apex, f0, at(f0, &[j]), diag]);
                    }
                }
            }
            continue;
        }
        for perm in &perms {
            let mut cell = [usize::MAX; 4];
            cell[0] = start;
            let mut cur = start;
            for (k, &axis) in perm.iter().enumerate() {
                cur = at(cur, &[axis]);
                cell[k + 1] = cur;
            }
            cells.push(cell);
        }
    }
    (vertices, cells)
}

/// Smooth cube-to-ball map x_i = y_i·sqrt(1 − Σ_{j≠i} y_j²/2 + Π_{j≠i} y_j²/3).
fn cube_to_ball(y: &Point, dim: usize) -> Point {
    let sq = [y[0] * y[0], y[1] * y[1], y[2] * y[2]];
    let mut x = [0.0; 3];
    for i in 0..dim {
        let others: Vec<f64> = (0..dim).filter(|&j| j != i).map(|j| sq[j]).collect();
        let f = match others.len() {
            0 => 1.0,
            1 => 1.0 - others[0] / 2.0,
            _ => 1.0 - others[0] / 2.0 - others[1] / 2.0 + others[0] * others[1] / 3.0,
        };
        x[i] = y[i] * f.max(0.0).sqrt();
    }
    x
}

fn check_rho(rho: &[f64]) -> Result<()> {
    if rho.is_empty() || rho.len() > 3 {
        return invalid("normal must have 1 to 3 components");
    }
    let r = linalg::norm(rho);
    if (r - 1.0).abs() > GAMMA_TOL {
        return Err(Error::NonUnitNormal(r));
    }
    Ok(())
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h <= 0.5) {
        return invalid(format!("resolution h must lie in (0, 0.5] (got {h})"));
    }
    Ok(())
}

fn divisions(h: f64) -> usize {
    2 * (1.0 / h - 1e-9).ceil().max(1.0) as usize
}

/// Mesh of B(0,1) with every boundary face dirichlet.
pub fn build_ball(dim: usize, h: f64) -> Result<DomainMesh> {
    if !(1..=3).contains(&dim) {
        return invalid("dimension must be 1, 2 or 3");
    }
    check_h(h)?;
    let nn = divisions(h);
    let (refv, cells) = kuhn_box(dim, &[nn; 3], nn, |i| (0..dim).any(|d| i[d] == 0 || i[d] + 1 == nn));
    let vertices: Vec<Point> = refv.iter().map(|y| cube_to_ball(y, dim)).collect();
    DomainMesh::assemble(dim, Shape::Ball, h, vertices, cells, |_| Label::Dirichlet)
}

/// Mesh of B(0,1) ∩ {ρ·x < 0}; faces on {ρ·x = 0} are free-gamma.
pub fn build_half_ball(rho: &[f64], h: f64) -> Result<DomainMesh> {
    check_rho(rho)?;
    check_h(h)?;
    let dim = rho.len();
    let nn = divisions(h);
    let mut counts = [nn; 3];
    counts[dim - 1] = nn / 2;
    let (refv, cells) = kuhn_box(dim, &counts, nn, |i| {
        (0..dim).any(|d| i[d] == 0 || (d + 1 < dim && i[d] + 1 == nn))
    });
    let q = linalg::rotation_to(rho);
    let vertices: Vec<Point> = refv.iter().map(|y| q.apply(&cube_to_ball(y, dim)[..dim])).collect();
    let on_plane: Vec<bool> = refv.iter().map(|y| y[dim - 1] == 0.0).collect();
    DomainMesh::assemble(dim, Shape::HalfBall { rho: rho.to_vec() }, h, vertices, cells, |face| {
        if face.iter().all(|&v| on_plane[v]) {
            Label::FreeGamma
        } else {
            Label::Dirichlet
        }
    })
}

/// Mesh of [-1,1]^{n-1} × [-1,0]; faces on {x_n = 0} are free-gamma.
pub fn build_half_cube(dim: usize, h: f64) -> Result<DomainMesh> {
    if !(1..=3).contains(&dim) {
        return invalid("dimension must be 1, 2 or 3");
    }
    check_h(h)?;
    let nn = divisions(h);
    let mut counts = [nn; 3];
    counts[dim - 1] = nn / 2;
    let (vertices, cells) = kuhn_box(dim, &counts, nn, |_| false);
    let on_plane: Vec<bool> = vertices.iter().map(|y| y[dim - 1] == 0.0).collect();
    DomainMesh::assemble(dim, Shape::HalfCube, h, vertices, cells, |face| {
        if face.iter().all(|&v| on_plane[v]) {
            Label::FreeGamma
        } else {
            Label::Dirichlet
        }
    })
}

/// Mesh of {x : |x| < r(x/|x|)}, all boundary faces dirichlet.
pub fn build_star(radius: StarRadius, h: f64) -> Result<DomainMesh> {
    let dim = radius.linear.len();
    if !(2..=3).contains(&dim) {
        return invalid("star domains need dimension 2 or 3");
    }
    radius.validate(dim)?;
    let ball = build_ball(dim, h)?;
    let vertices: Vec<Point> = ball
        .vertices
        .iter()
        .map(|x| {
            let r = linalg::norm(&x[..dim]);
            if r == 0.0 {
                *x
            } else {
                let w: Vec<f64> = x[..dim].iter().map(|c| c / r).collect();
                let s = radius.eval(&w);
                [x[0] * s, x[1] * s, x[2] * s]
            }
        })
        .collect();
    let cells = ball.cells.clone();
    DomainMesh::assemble(dim, Shape::Star { radius }, h, vertices, cells, |_| Label::Dirichlet)
}

/// Builds the mesh described by a `{"kind": ..., "dim": .., "h": .., ...}` spec.
pub fn build_from_spec(spec: &serde_json::Value) -> Result<DomainMesh> {
    let kind = spec.get("kind").and_then(|v| v.as_str()).unwrap_or("ball");
    let h = spec.get("h").and_then(|v| v.as_f64()).unwrap_or(0.25);
    let dim = spec.get("dim").and_then(|v| v.as_u64()).unwrap_or(2) as usize;
    let mesh = match kind {
        "ball" => build_ball(dim, h)?,
        "half-ball" => {
            let rho: Vec<f64> = match spec.get("rho") {
                Some(r) => serde_json::from_value(r.clone())?,
                None => {
                    let mut r = vec![0.0; dim];
                    r[dim - 1] = 1.0;
                    r
                }
            };
            build_half_ball(&rho, h)?
        }
        "half-cube" => build_half_cube(dim, h)?,
        "star" => {
            let radius: StarRadius = match spec.get("radius") {
                Some(r) => serde_json::from_value(r.clone())?,
                None => StarRadius::sphere(dim),
            };
            build_star(radius, h)?
        }
        other => return invalid(format!("unknown mesh kind `{other}`")),
    };
    match spec.get("grading") {
        None => Ok(mesh),
        Some(g) => {
            let center: Vec<f64> = serde_json::from_value(
                g.get("center").cloned().ok_or_else(|| Error::InvalidInput("grading needs `center`".into()))?,
            )?;
            let core = g.get("core").and_then(|v| v.as_f64()).unwrap_or(0.2);
            mesh.graded(&linalg::point(&center), core)
        }
    }
}

impl DomainMesh {
    fn assemble(
        dim: usize,
        shape: Shape,
        h: f64,
        vertices: Vec<Point>,
        mut cells: Vec<[usize; 4]>,
        label: impl Fn(&[usize]) -> Label,
    ) -> Result<DomainMesh> {
        // orient every cell positively
        for cell in cells.iter_mut() {
            if signed_volume(dim, &vertices, cell) < 0.0 {
                cell.swap(0, 1);
            }
        }
        let mut keyed: Vec<([usize; 3], usize)> = Vec::with_capacity(cells.len() * (dim + 1));
        for (c, cell) in cells.iter().enumerate() {
            for skip in 0..=dim {
                let mut f = [usize::MAX; 3];
                let mut k = 0;
                for (a, &v) in cell[..=dim].iter().enumerate() {
                    if a != skip {
                        f[k] = v;
                        k += 1;
                    }
                }
                f[..dim].sort_unstable();
                keyed.push((f, c));
            }
        }
        keyed.sort_unstable();
        let mut faces = Vec::new();
        let mut i = 0;
        while i < keyed.len() {
            let mut j = i + 1;
            while j < keyed.len() && keyed[j].0 == keyed[i].0 {
                j += 1;
            }
            if j == i + 1 {
                let f = keyed[i].0[..dim].to_vec();
                faces.push(BoundaryFace {
                    label: label(&f),
                    vertices: f,
                    cell: keyed[i].1,
                });
            }
            i = j;
        }
        faces.sort_by(|a, b| a.vertices.cmp(&b.vertices));
        DomainMesh::finish(dim, shape, h, vertices, cells, faces)
    }

    fn finish(
        dim: usize,
        shape: Shape,
        h: f64,
        vertices: Vec<Point>,
        cells: Vec<[usize; 4]>,
        faces: Vec<BoundaryFace>,
    ) -> Result<DomainMesh> {
        let mut volumes = Vec::with_capacity(cells.len());
        let mut bary_grads = Vec::with_capacity(cells.len());
        let fact = [1.0, 1.0, 2.0, 6.0][dim];
        for (c, cell) in cells.iter().enumerate() {
            let mut d = Matrix::zeros(dim, dim);
            for a in 0..dim {
                let e = linalg::sub(&vertices[cell[a + 1]], &vertices[cell[0]]);
                for i in 0..dim {
                    d.set(i, a, e[i]);
                }
            }
            let det = d.det();
            if !(det > 0.0) || det / fact < 1e-14 * h.powi(dim as i32) * 1e-6 {
                return Err(Error::Mesh(format!("cell {c} is degenerate or inverted (det {det:e})")));
            }
            volumes.push(det / fact);
            let inv = d.cofactor().transpose().scale(1.0 / det);
            let mut g = [[0.0; 3]; 4];
            for a in 0..dim {
                for j in 0..dim {
                    g[a + 1][j] = inv.get(a, j);
                    g[0][j] -= inv.get(a, j);
                }
            }
            bary_grads.push(g);
        }
        let nv = vertices.len();
        let mut on_boundary = vec![false; nv];
        let mut on_dirichlet = vec![false; nv];
        let mut on_gamma = vec![false; nv];
        for f in &faces {
            for &v in &f.vertices {
                on_boundary[v] = true;
                match f.label {
                    Label::Dirichlet => on_dirichlet[v] = true,
                    Label::FreeGamma => on_gamma[v] = true,
                    Label::None => {}
                }
            }
        }
        Ok(DomainMesh {
            dim,
            shape,
            h,
            vertices,
            cells,
            faces,
            volumes,
            bary_grads,
            on_boundary,
            on_dirichlet,
            on_gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn shape(&self) -> &Shape {
        &self.shape
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }
    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..=self.dim]
    }
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }
    pub fn faces(&self) -> &[BoundaryFace] {
        &self.faces
    }
    pub fn bary_grads(&self, c: usize) -> &[Point] {
        &self.bary_grads[c][..=self.dim]
    }
    pub fn on_boundary(&self, v: usize) -> bool {
        self.on_boundary[v]
    }
    pub fn on_gamma(&self, v: usize) -> bool {
        self.on_gamma[v]
    }
    pub fn on_dirichlet(&self, v: usize) -> bool {
        self.on_dirichlet[v]
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Volume of the exact (curved) domain.
    pub fn exact_volume(&self) -> f64 {
        let ball = unit_ball_volume(self.dim);
        match &self.shape {
            Shape::Ball => ball,
            Shape::HalfBall { .. } => ball / 2.0,
            Shape::HalfCube => 2f64.powi(self.dim as i32 - 1),
            Shape::Star { .. } => self.total_volume(),
        }
    }

    pub fn centroid(&self, c: usize) -> Point {
        let cell = self.cell(c);
        let mut p = [0.0; 3];
        for &v in cell {
            for i in 0..3 {
                p[i] += self.vertices[v][i];
            }
        }
        let k = cell.len() as f64;
        [p[0] / k, p[1] / k, p[2] / k]
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let cell = self.cell(c);
        let mut d: f64 = 0.0;
        for a in 0..cell.len() {
            for b in a + 1..cell.len() {
                d = d.max(linalg::norm(&linalg::sub(&self.vertices[cell[a]], &self.vertices[cell[b]])));
            }
        }
        d
    }

    pub fn max_cell_diameter(&self) -> f64 {
        (0..self.cell_count()).map(|c| self.cell_diameter(c)).fold(0.0, f64::max)
    }

    /// Largest diameter among cells meeting B(x0, radius).
    pub fn max_cell_diameter_near(&self, x0: &Point, radius: f64) -> f64 {
        (0..self.cell_count())
            .filter(|&c| self.distance_to_cell(c, x0) <= radius)
            .map(|c| self.cell_diameter(c))
            .fold(0.0, f64::max)
    }

    /// Lower bound on the distance from x to cell c (vertex distance minus diameter).
    /// Distance from x to the nearest vertex or the centroid of cell c.
    fn distance_to_cell(&self, c: usize, x: &Point) -> f64 {
        let centroid = linalg::norm(&linalg::sub(&self.centroid(c), x));
        self.cell(c)
            .iter()
            .map(|&v| linalg::norm(&linalg::sub(&self.vertices[v], x)))
            .fold(centroid, f64::min)
    }

    /// Point at barycentric coordinates `bary` in cell c.
    pub fn point_at(&self, c: usize, bary: &[f64; 4]) -> Point {
        let mut p = [0.0; 3];
        for (a, &v) in self.cell(c).iter().enumerate() {
            for i in 0..3 {
                p[i] += bary[a] * self.vertices[v][i];
            }
        }
        p
    }

    /// Barycentric coordinates of x relative to cell c.
    pub fn barycentric(&self, c: usize, x: &Point) -> [f64; 4] {
        let cell = self.cell(c);
        let g = &self.bary_grads[c];
        let d = linalg::sub(x, &self.vertices[cell[0]]);
        let mut b = [0.0; 4];
        let mut rest = 1.0;
        for a in 1..=self.dim {
            b[a] = linalg::dot(&g[a][..self.dim], &d[..self.dim]);
            rest -= b[a];
        }
        b[0] = rest;
        b
    }

    /// Σ_c vol_c · f_c, summed in cell order.
    pub fn integrate_cells(&self, values: &[f64]) -> f64 {
        self.volumes.iter().zip(values).map(|(v, f)| v * f).sum()
    }

    /// ∫ f(c, x) dx with a per-cell rule exact to degree `order` ∈ {1,2,3}.
    pub fn integrate<F>(&self, order: usize, f: F) -> Result<f64>
    where
        F: Fn(usize, &Point) -> f64 + Sync + Send,
    {
        let rule = quadrature(self.dim, order)?;
        let per_cell = par::map_indexed(self.cell_count(), |c| {
            rule.iter().map(|(w, b)| w * f(c, &self.point_at(c, b))).sum::<f64>() * self.volumes[c]
        });
        Ok(per_cell.iter().sum())
    }

    /// (n−1)-dimensional measure of a boundary face.
    pub fn face_measure(&self, face: &BoundaryFace) -> f64 {
        let p: Vec<Point> = face.vertices.iter().map(|&v| self.vertices[v]).collect();
        match self.dim {
            1 => 1.0,
            2 => linalg::norm(&linalg::sub(&p[1], &p[0])),
            _ => {
                let a = linalg::sub(&p[1], &p[0]);
                let b = linalg::sub(&p[2], &p[0]);
                0.5 * linalg::norm(&cross(&a, &b))
            }
        }
    }

    /// Outward unit normal of a boundary face.
    pub fn face_normal(&self, face: &BoundaryFace) -> Point {
        let p: Vec<Point> = face.vertices.iter().map(|&v| self.vertices[v]).collect();
        let mut nrm = match self.dim {
            1 => [1.0, 0.0, 0.0],
            2 => {
                let t = linalg::sub(&p[1], &p[0]);
                [t[1], -t[0], 0.0]
            }
            _ => cross(&linalg::sub(&p[1], &p[0]), &linalg::sub(&p[2], &p[0])),
        };
        let r = linalg::norm(&nrm);
        nrm = [nrm[0] / r, nrm[1] / r, nrm[2] / r];
        let inner = self
            .cell(face.cell)
            .iter()
            .copied()
            .find(|v| !face.vertices.contains(v))
            .expect("cell has a vertex off the face");
        if linalg::dot(&nrm, &linalg::sub(&self.vertices[inner], &p[0])) > 0.0 {
            nrm = [-nrm[0], -nrm[1], -nrm[2]];
        }
        nrm
    }

    pub fn face_centroid(&self, face: &BoundaryFace) -> Point {
        let mut c = [0.0; 3];
        for &v in &face.vertices {
            for i in 0..3 {
                c[i] += self.vertices[v][i];
            }
        }
        let k = face.vertices.len() as f64;
        [c[0] / k, c[1] / k, c[2] / k]
    }

    pub fn pin_mask(&self, constraint: Constraint) -> Vec<bool> {
        match constraint {
            Constraint::Dirichlet => self.on_boundary.clone(),
            Constraint::GammaFree => self.on_dirichlet.clone(),
            Constraint::Free => vec![false; self.vertex_count()],
        }
    }

    /// Distance from x0 along the unit direction w to the exact domain boundary.
    pub fn exit_distance(&self, x0: &Point, w: &Point) -> f64 {
        let ball = |x0: &Point| {
            let b = linalg::dot(w, x0);
            let c = linalg::dot(x0, x0) - 1.0;
            -b + (b * b - c).max(0.0).sqrt()
        };
        match &self.shape {
            Shape::Ball => ball(x0),
            Shape::HalfBall { rho } => {
                let rw = linalg::dot(rho, w);
                let plane = if rw > 1e-12 {
                    (-linalg::dot(rho, x0) / rw).max(0.0)
                } else {
                    f64::INFINITY
                };
                ball(x0).min(plane)
            }
            Shape::HalfCube => {
                let mut t = f64::INFINITY;
                for i in 0..self.dim {
                    let hi = if i + 1 == self.dim { 0.0 } else { 1.0 };
                    if w[i] > 1e-15 {
                        t = t.min((hi - x0[i]) / w[i]);
                    } else if w[i] < -1e-15 {
                        t = t.min((-1.0 - x0[i]) / w[i]);
                    }
                }
                t.max(0.0)
            }
            Shape::Star { radius } => {
                let inside = |t: f64| {
                    let x = linalg::add_scaled(x0, t, w);
                    let r = linalg::norm(&x[..self.dim]);
                    r == 0.0 || r <= radius.eval(&x[..self.dim].iter().map(|c| c / r).collect::<Vec<_>>())
                };
                let (mut lo, mut hi) = (0.0, 1.0);
                while inside(hi) {
                    hi *= 2.0;
                }
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if inside(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }

    /// Whether x lies on the exact boundary, within tol.
    pub fn is_boundary_point(&self, x: &Point, tol: f64) -> bool {
        let n = self.dim;
        let r = linalg::norm(&x[..n]);
        match &self.shape {
            Shape::Ball => (r - 1.0).abs() <= tol,
            Shape::HalfBall { rho } => (r - 1.0).abs() <= tol || linalg::dot(rho, x).abs() <= tol,
            Shape::HalfCube => (0..n).any(|i| {
                let hi = if i + 1 == n { 0.0 } else { 1.0 };
                (x[i] - hi).abs() <= tol || (x[i] + 1.0).abs() <= tol
            }),
            Shape::Star { radius } => {
                r > 0.0 && (r - radius.eval(&x[..n].iter().map(|c| c / r).collect::<Vec<_>>())).abs() <= tol
            }
        }
    }

    /// Outer unit normal of the exact domain at a boundary point x.
    pub fn outer_normal(&self, x: &Point) -> Point {
        let n = self.dim;
        match &self.shape {
            Shape::Star { radius } => {
                let r = linalg::norm(&x[..n]);
                let w: Vec<f64> = x[..n].iter().map(|c| c / r).collect();
                let g = radius.grad(&w);
                let gw = linalg::dot(&g[..n], &w);
                let mut nrm = [0.0; 3];
                for i in 0..n {
                    nrm[i] = w[i] - (g[i] - gw * w[i]) / r;
                }
                let s = linalg::norm(&nrm);
                [nrm[0] / s, nrm[1] / s, nrm[2] / s]
            }
            Shape::HalfBall { rho } if linalg::dot(rho, x).abs() <= 1e-9 => linalg::point(rho),
            _ => {
                let r = linalg::norm(&x[..n]);
                [x[0] / r, x[1] / r, x[2] / r]
            }
        }
    }

    /// Geometric grading toward x0: cell sizes proportional to the distance
    /// from x0, down to a uniformly shrunk core.
    ///
    /// Along each ray the normalized distance u = t/L ∈ [0,1] is mapped by
    /// ψ(u) = u/s on [0, u1] and ψ(u) = (u1/s)·e^{(u−u1)/u1} on [u1, 1], with
    /// s = u1·e^{1/u1 − 1} so that ψ(1) = 1. Interior points and points on flat
    /// boundary parts use straight rays with L the exit distance. Points on the
    /// unit sphere use caps: the cap {|x − x0| = t} goes to the cap of radius
    /// 2ψ(t/2), affinely in the polar cosine, so the sphere maps to itself.
    pub fn graded(&self, x0: &Point, u1: f64) -> Result<DomainMesh> {
        if !(u1 > 0.0 && u1 <= 1.0) {
            return invalid("grading core fraction must lie in (0, 1]");
        }
        let s = u1 * (1.0 / u1 - 1.0).exp();
        let psi = |u: f64| {
            if u <= u1 {
                u / s
            } else {
                (u1 / s) * ((u - u1) / u1).exp()
            }
        };
        let r0 = linalg::norm(&x0[..self.dim]);
        let on_sphere = (r0 - 1.0).abs() < 1e-9
            && match &self.shape {
                Shape::Ball => true,
                Shape::HalfBall { rho } => linalg::dot(rho, x0).abs() > 1e-9,
                _ => false,
            };
        if on_sphere && !matches!(self.shape, Shape::Ball) {
            return invalid("grading toward a curved boundary point needs a ball mesh");
        }
        if let Shape::Star { radius } = &self.shape {
            let r = linalg::norm(&x0[..self.dim]);
            if r > 0.0 && r >= radius.eval(&x0[..self.dim].iter().map(|c| c / r).collect::<Vec<_>>()) - 1e-9 {
                return invalid("grading center must lie inside a star domain");
            }
        }
        let axis = [-x0[0] / r0.max(1e-300), -x0[1] / r0.max(1e-300), -x0[2] / r0.max(1e-300)];
        let vertices: Vec<Point> = self
            .vertices
            .iter()
            .map(|x| {
                let d = linalg::sub(x, x0);
                let t = linalg::norm(&d);
                if t < 1e-14 {
                    return *x;
                }
                let w = [d[0] / t, d[1] / t, d[2] / t];
                if on_sphere {
                    if t >= 2.0 - 1e-12 {
                        return *x;
                    }
                    let t2 = 2.0 * psi(t / 2.0);
                    let c = linalg::dot(&w, &axis).clamp(t / 2.0, 1.0);
                    let frac = (c - t / 2.0) / (1.0 - t / 2.0);
                    let c2 = t2 / 2.0 + frac * (1.0 - t2 / 2.0);
                    let tang = linalg::add_scaled(&w, -linalg::dot(&w, &axis), &axis);
                    let tn = linalg::norm(&tang);
                    let sin2 = (1.0 - c2 * c2).max(0.0).sqrt();
                    let mut dir = [c2 * axis[0], c2 * axis[1], c2 * axis[2]];
                    if tn > 1e-15 {
                        dir = linalg::add_scaled(&dir, sin2 / tn, &tang);
                    }
                    linalg::add_scaled(x0, t2, &dir)
                } else {
                    let l = self.exit_distance(x0, &w).max(t);
                    linalg::add_scaled(x0, l * psi(t / l), &w)
                }
            })
            .collect();
        DomainMesh::finish(self.dim, self.shape.clone(), self.h, vertices, self.cells.clone(), self.faces.clone())
            .map_err(|e| Error::Mesh(format!("grading inverted a cell: {e}")))
    }

    /// Whether every cell meeting B(x0, radius) has diameter ≤ radius/4.
    pub fn resolves(&self, x0: &Point, radius: f64) -> bool {
        self.max_cell_diameter_near(x0, radius) <= radius / 4.0
    }

    pub fn to_json(&self) -> serde_json::Value {
        let file = MeshFile {
            dim: self.dim,
            shape: self.shape.clone(),
            h: self.h,
            vertices: self.vertices.iter().map(|p| p[..self.dim].to_vec()).collect(),
            cells: self.cells.iter().map(|c| c[..=self.dim].to_vec()).collect(),
            boundary_faces: self.faces.clone(),
        };
        serde_json::to_value(file).expect("mesh serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<DomainMesh> {
        let file: MeshFile = serde_json::from_value(value.clone())?;
        let dim = file.dim;
        if !(1..=3).contains(&dim) {
            return invalid("mesh dimension must be 1, 2 or 3");
        }
        let nv = file.vertices.len();
        let mut vertices = Vec::with_capacity(nv);
        for v in &file.vertices {
            if v.len() != dim {
                return invalid("vertex has the wrong number of coordinates");
            }
            vertices.push(linalg::point(v));
        }
        let mut cells = Vec::with_capacity(file.cells.len());
        for c in &file.cells {
            if c.len() != dim + 1 || c.iter().any(|&v| v >= nv) {
                return invalid("cell must list dim+1 valid vertex indices");
            }
            let mut cell = [usize::MAX; 4];
            cell[..=dim].copy_from_slice(c);
            cells.push(cell);
        }
        let labels: HashMap<Vec<usize>, Label> = file
            .boundary_faces
            .iter()
            .map(|f| {
                let mut k = f.vertices.clone();
                k.sort_unstable();
                (k, f.label)
            })
            .collect();
        let mesh = DomainMesh::assemble(dim, file.shape, file.h, vertices, cells, |f| {
            labels.get(f).copied().unwrap_or(Label::None)
        })?;
        if mesh.faces.len() != labels.len() {
            return invalid("boundary face list does not match the cell complex");
        }
        Ok(mesh)
    }
}

impl Serialize for DomainMesh {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DomainMesh {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        DomainMesh::from_json(&value).map_err(serde::de::Error::custom)
    }
}

fn signed_volume(dim: usize, vertices: &[Point], cell: &[usize; 4]) -> f64 {
    let mut d = Matrix::zeros(dim, dim);
    for a in 0..dim {
        let e = linalg::sub(&vertices[cell[a + 1]], &vertices[cell[0]]);
        for i in 0..dim {
            d.set(i, a, e[i]);
        }
    }
    d.det()
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI / 3.0,
    }
}

/// Symmetric rules on the reference simplex, exact to degree `order`.
pub fn quadrature(dim: usize, order: usize) -> Result<Vec<QuadPoint>> {
    if !(1..=3).contains(&order) {
        return invalid(format!("quadrature order must be 1, 2 or 3 (got {order})"));
    }
    let c = 1.0 / (dim as f64 + 1.0);
    let centroid = (1.0, [c, c, c, c]);
    let rule = match (dim, order) {
        (_, 1) => vec![centroid],
        (1, _) => {
            let g = 0.5 / 3f64.sqrt();
            vec![(0.5, [0.5 - g, 0.5 + g, 0.0, 0.0]), (0.5, [0.5 + g, 0.5 - g, 0.0, 0.0])]
        }
        (2, 2) => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            vec![
                (1.0 / 3.0, [a, b, b, 0.0]),
                (1.0 / 3.0, [b, a, b, 0.0]),
                (1.0 / 3.0, [b, b, a, 0.0]),
            ]
        }
        (2, _) => {
            let (w1, a1, b1) = (0.109_951_743_655_322, 0.816_847_572_980_459, 0.091_576_213_509_771);
            let (w2, a2, b2) = (0.223_381_589_678_011, 0.108_103_018_168_070, 0.445_948_490_915_965);
            vec![
                (w1, [a1, b1, b1, 0.0]),
                (w1, [b1, a1, b1, 0.0]),
                (w1, [b1, b1, a1, 0.0]),
                (w2, [a2, b2, b2, 0.0]),
                (w2, [b2, a2, b2, 0.0]),
                (w2, [b2, b2, a2, 0.0]),
            ]
        }
        (_, 2) => {
            let (a, b) = (0.585_410_196_624_968_5, 0.138_196_601_125_010_5);
            vec![
                (0.25, [a, b, b, b]),
                (0.25, [b, a, b, b]),
                (0.25, [b, b, a, b]),
                (0.25, [b, b, b, a]),
            ]
        }
        _ => {
            let (a, b) = (0.5, 1.0 / 6.0);
            vec![
                (-0.8, [0.25; 4]),
                (0.45, [a, b, b, b]),
                (0.45, [b, a, b, b]),
                (0.45, [b, b, a, b]),
                (0.45, [b, b, b, a]),
            ]
        }
    };
    Ok(rule)
}

/// P1 field with m components per vertex, stored vertex-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub m: usize,
    pub values: Vec<f64>,
    pub pinned: Vec<bool>,
}

impl DisplacementField {
    pub fn zeros(mesh: &DomainMesh, m: usize, constraint: Constraint) -> Self {
        DisplacementField {
            m,
            values: vec![0.0; m * mesh.vertex_count()],
            pinned: mesh.pin_mask(constraint),
        }
    }

    /// Nodal interpolant of f, with pinned vertices zeroed.
    pub fn from_fn<F: Fn(&Point) -> Vec<f64>>(mesh: &DomainMesh, m: usize, constraint: Constraint, f: F) -> Self {
        let mut u = DisplacementField::zeros(mesh, m, constraint);
        for (v, x) in mesh.vertices().iter().enumerate() {
            let val = f(x);
            u.values[v * m..(v + 1) * m].copy_from_slice(&val[..m]);
        }
        u.apply_mask();
        u
    }

    pub fn apply_mask(&mut self) {
        for (v, &p) in self.pinned.iter().enumerate() {
            if p {
                for i in 0..self.m {
                    self.values[v * self.m + i] = 0.0;
                }
            }
        }
    }

    pub fn value(&self, v: usize) -> &[f64] {
        &self.values[v * self.m..(v + 1) * self.m]
    }

    pub fn conforms_to(&self, mesh: &DomainMesh) -> bool {
        self.values.len() == self.m * mesh.vertex_count() && self.pinned.len() == mesh.vertex_count()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut u = self.clone();
        u.values.iter_mut().for_each(|x| *x *= s);
        u
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// Value of the interpolant at barycentric coordinates in cell c.
    pub fn eval_in_cell(&self, mesh: &DomainMesh, c: usize, bary: &[f64; 4]) -> Point {
        let mut out = [0.0; 3];
        for (a, &v) in mesh.cell(c).iter().enumerate() {
            for i in 0..self.m {
                out[i] += bary[a] * self.values[v * self.m + i];
            }
        }
        out
    }
}

/// Gradient of the P1 interpolant on cell c.
pub fn cell_gradient(mesh: &DomainMesh, u: &DisplacementField, c: usize) -> Matrix {
    let mut g = Matrix::zeros(u.m, mesh.dim());
    for (a, &v) in mesh.cell(c).iter().enumerate() {
        let grad = &mesh.bary_grads[c][a];
        for i in 0..u.m {
            let val = u.values[v * u.m + i];
            if val == 0.0 {
                continue;
            }
            for j in 0..mesh.dim() {
                g.set(i, j, g.get(i, j) + val * grad[j]);
            }
        }
    }
    g
}

pub fn cell_gradients(mesh: &DomainMesh, u: &DisplacementField) -> Vec<Matrix> {
    par::map_indexed(mesh.cell_count(), |c| cell_gradient(mesh, u, c))
}

/// Bucket grid for point location.
pub struct Locator<'a> {
    mesh: &'a DomainMesh,
    lo: Point,
    step: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
}

impl<'a> Locator<'a> {
    pub fn new(mesh: &'a DomainMesh) -> Self {
        let dim = mesh.dim();
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for i in 0..dim {
            lo[i] = mesh.vertices.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
            hi[i] = mesh.vertices.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        }
        let extent = (0..dim).map(|i| hi[i] - lo[i]).fold(0.0, f64::max).max(1e-12);
        let per_axis = ((mesh.cell_count() as f64).powf(1.0 / dim as f64)).ceil().max(1.0) as usize;
        let step = extent / per_axis as f64;
        let mut dims = [1usize; 3];
        for i in 0..dim {
            dims[i] = ((hi[i] - lo[i]) / step).floor() as usize + 1;
        }
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for c in 0..mesh.cell_count() {
            let mut bl = [0usize; 3];
            let mut bh = [0usize; 3];
            for i in 0..dim {
                let xs = mesh.cell(c).iter().map(|&v| mesh.vertices[v][i]);
                let (mn, mx) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
                bl[i] = (((mn - lo[i]) / step).floor().max(0.0) as usize).min(dims[i] - 1);
                bh[i] = (((mx - lo[i]) / step).floor().max(0.0) as usize).min(dims[i] - 1);
            }
            for i0 in bl[0]..=bh[0] {
                for i1 in bl[1]..=bh[1] {
                    for i2 in bl[2]..=bh[2] {
                        buckets[i0 + dims[0] * (i1 + dims[1] * i2)].push(c);
                    }
                }
            }
        }
        Locator {
            mesh,
            lo,
            step,
            dims,
            buckets,
        }
    }

    /// Cell containing x with its barycentric coordinates, or None outside the mesh.
    pub fn locate(&self, x: &Point) -> Option<(usize, [f64; 4])> {
        let dim = self.mesh.dim();
        let mut idx = [0usize; 3];
        for i in 0..dim {
            let t = ((x[i] - self.lo[i]) / self.step).floor();
            if t < -1.0 || t > self.dims[i] as f64 {
                return None;
            }
            idx[i] = (t.max(0.0) as usize).min(self.dims[i] - 1);
        }
        let bucket = &self.buckets[idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])];
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &c in bucket {
            let b = self.mesh.barycentric(c, x);
            let worst = b[..=dim].iter().fold(f64::INFINITY, |a, &y| a.min(y));
            if worst >= -1e-10 {
                return Some((c, b));
            }
            if best.as_ref().map_or(true, |(_, _, w)| worst > *w) {
                best = Some((c, b, worst));
            }
        }
        best.filter(|(_, _, w)| *w >= -1e-8).map(|(c, b, _)| (c, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_disk_area_and_gamma_plane() {
        let mesh = build_half_ball(&[0.0, 1.0], 0.25).unwrap();
        let a = mesh.total_volume();
        assert!((a - std::f64::consts::FRAC_PI_2).abs() / std::f64::consts::FRAC_PI_2 < 0.03);
        assert!(mesh.faces().iter().any(|f| f.label == Label::FreeGamma));
    }

    #[test]
    fn half_ball_3d_volume() {
        let mesh = build_half_ball(&[0.0, 0.0, 1.0], 0.3).unwrap();
        let exact = 2.0 * std::f64::consts::PI / 3.0;
        assert!((mesh.total_volume() - exact).abs() / exact < 0.05);
    }

    #[test]
    fn tilted_gamma_faces_are_orthogonal_to_rho() {
        let s = 0.5f64.sqrt();
        let rho = [s, s];
        let mesh = build_half_ball(&rho, 0.25).unwrap();
        let mut count = 0;
        for f in mesh.faces() {
            if f.label == Label::FreeGamma {
                count += 1;
                for &v in &f.vertices {
                    assert!(linalg::dot(&rho, &mesh.vertices()[v][..2]).abs() < GAMMA_TOL);
                }
                let nrm = mesh.face_normal(f);
                assert!((linalg::dot(&nrm[..2], &rho) - 1.0).abs() < 1e-12);
            } else {
                for &v in &f.vertices {
                    assert!((linalg::norm(&mesh.vertices()[v][..2]) - 1.0).abs() < 1e-12 || mesh.on_gamma(v));
                }
            }
        }
        assert!(count > 0);
    }

    #[test]
    fn rejects_non_unit_rho() {
        assert!(matches!(build_half_ball(&[0.0, 1.1], 0.25), Err(Error::NonUnitNormal(_))));
        assert!(build_half_ball(&[0.0, 1.0], 0.6).is_err());
    }

    #[test]
    fn affine_fields_have_exact_gradients() {
        let rho = [0.0, 0.6, 0.8];
        let mesh = build_half_ball(&rho, 0.3).unwrap();
        let s = Matrix::from_row_major(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]).unwrap();
        let u = DisplacementField::from_fn(&mesh, 2, Constraint::Free, |x| s.apply(&x[..3]).to_vec());
        for g in cell_gradients(&mesh, &u) {
            assert!((g - s).max_abs() < 1e-12);
        }
        let b = [2.0, -1.0];
        let u = DisplacementField::from_fn(&mesh, 2, Constraint::Free, |x| {
            let t = linalg::dot(&rho, &x[..3]);
            vec![t * b[0], t * b[1]]
        });
        let expect = Matrix::outer(&b, &rho);
        for g in cell_gradients(&mesh, &u) {
            assert!((g - expect).max_abs() < 1e-12);
        }
        let z = DisplacementField::zeros(&mesh, 2, Constraint::GammaFree);
        assert!(cell_gradients(&mesh, &z).iter().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn masking_keeps_gamma_values() {
        let mesh = build_half_ball(&[0.0, 1.0], 0.25).unwrap();
        let u = DisplacementField::from_fn(&mesh, 1, Constraint::GammaFree, |_| vec![1.0]);
        for v in 0..mesh.vertex_count() {
            if mesh.on_dirichlet(v) {
                assert_eq!(u.value(v)[0], 0.0);
            } else {
                assert_eq!(u.value(v)[0], 1.0);
            }
        }
        assert!((0..mesh.vertex_count()).any(|v| mesh.on_gamma(v) && u.value(v)[0] != 0.0));
    }

    #[test]
    fn quadrature_exactness() {
        // oracle: ∫_simplex x^a y^b = a! b! / (a+b+2)! and the 3-D analogue
        fn fact(k: u32) -> f64 {
            (1..=k).map(f64::from).product()
        }
        for order in 1..=3u32 {
            let rule = quadrature(2, order as usize).unwrap();
            for a in 0..=order {
                for b in 0..=(order - a) {
                    let q: f64 = rule.iter().map(|(w, l)| w * l[1].powi(a as i32) * l[2].powi(b as i32)).sum::<f64>() * 0.5;
                    let exact = fact(a) * fact(b) / fact(a + b + 2);
                    assert!((q - exact).abs() < 1e-12, "2d order {order} x^{a} y^{b}");
                }
            }
            let rule = quadrature(3, order as usize).unwrap();
            for a in 0..=order {
                for b in 0..=(order - a) {
                    for c in 0..=(order - a - b) {
                        let q: f64 = rule
                            .iter()
                            .map(|(w, l)| w * l[1].powi(a as i32) * l[2].powi(b as i32) * l[3].powi(c as i32))
                            .sum::<f64>()
                            / 6.0;
                        let exact = fact(a) * fact(b) * fact(c) / fact(a + b + c + 3);
                        assert!((q - exact).abs() < 1e-12, "3d order {order}");
                    }
                }
            }
            let rule = quadrature(1, order as usize).unwrap();
            for a in 0..=order {
                let q: f64 = rule.iter().map(|(w, l)| w * l[1].powi(a as i32)).sum();
                assert!((q - 1.0 / (a as f64 + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn integrals_on_disk() {
        let mesh = build_ball(2, 0.125).unwrap();
        let odd = mesh.integrate(2, |_, x| x[0]).unwrap();
        assert!(odd.abs() < 1e-10);
        let one = mesh.integrate(1, |_, _| 1.0).unwrap();
        assert!((one - mesh.total_volume()).abs() < 1e-12);
        let r2 = mesh.integrate(2, |_, x| x[0] * x[0] + x[1] * x[1]).unwrap();
        assert!((r2 - std::f64::consts::FRAC_PI_2).abs() < 0.02);
    }

    #[test]
    fn refinement_reduces_volume_error() {
        for (dim, h) in [(2, 0.25), (3, 0.5)] {
            let e1 = (build_ball(dim, h).unwrap().total_volume() - unit_ball_volume(dim)).abs();
            let e2 = (build_ball(dim, h / 2.0).unwrap().total_volume() - unit_ball_volume(dim)).abs();
            assert!(e2 <= e1 / 3.5, "dim {dim}: {e1} -> {e2}");
        }
    }

    #[test]
    fn graded_mesh_concentrates_cells() {
        let mesh = build_ball(3, 0.125).unwrap();
        let x0 = [0.0, 0.0, 1.0];
        let g = mesh.graded(&x0, 0.2).unwrap();
        let (fine, coarse) = (g.max_cell_diameter_near(&x0, 0.05), mesh.max_cell_diameter_near(&x0, 0.05));
        assert!(fine < coarse / 2.0, "{fine} vs {coarse}");
        assert!((g.total_volume() - mesh.total_volume()).abs() < 0.1);
        for f in g.faces() {
            for &v in &f.vertices {
                assert!((linalg::norm(&g.vertices()[v]) - 1.0).abs() < 1e-12);
            }
        }
        let hb = build_half_ball(&[0.0, 1.0], 1.0 / 64.0).unwrap().graded(&[0.0; 3], 0.12).unwrap();
        for f in hb.faces() {
            if f.label == Label::FreeGamma {
                for &v in &f.vertices {
                    assert!(hb.vertices()[v][1].abs() < 1e-12);
                }
            }
        }
        for k in [1.0, 8.0, 64.0, 256.0] {
            assert!(hb.resolves(&[0.0; 3], 1.0 / k));
        }
    }

    #[test]
    fn star_domain_normals() {
        let radius = StarRadius {
            r0: 1.0,
            linear: vec![0.1, 0.0],
            quadratic: vec![vec![0.2, 0.0], vec![0.0, 0.0]],
        };
        let mesh = build_star(radius.clone(), 0.125).unwrap();
        for f in mesh.faces() {
            let c = mesh.face_centroid(f);
            let exact = mesh.outer_normal(&mesh.vertices()[f.vertices[0]]);
            assert!(linalg::dot(&mesh.face_normal(f), &exact) > 0.9, "{c:?}");
        }
        let w = [0.0, 1.0, 0.0];
        let l = mesh.exit_distance(&[0.0; 3], &w);
        assert!((l - radius.eval(&[0.0, 1.0])).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_locator() {
        let mesh = build_half_ball(&[0.0, -1.0], 0.25).unwrap();
        let back = DomainMesh::from_json(&mesh.to_json()).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        assert_eq!(back.faces(), mesh.faces());
        let loc = Locator::new(&mesh);
        for c in 0..mesh.cell_count() {
            let x = mesh.centroid(c);
            let (found, b) = loc.locate(&x).unwrap();
            assert_eq!(found, c);
            assert!((b[0] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(loc.locate(&[0.0, -0.5, 0.0]).is_none());
    }

    #[test]
    fn one_dimensional_meshes() {
        let m = build_half_ball(&[1.0], 0.1).unwrap();
        assert!((m.total_volume() - 1.0).abs() < 1e-14);
        let gamma: Vec<_> = m.faces().iter().filter(|f| f.label == Label::FreeGamma).collect();
        assert_eq!(gamma.len(), 1);
        assert_eq!(m.vertices()[gamma[0].vertices[0]][0], 0.0);
        let hc = build_half_cube(2, 0.25).unwrap();
        assert!((hc.total_volume() - 2.0).abs() < 1e-12);
    }
}
