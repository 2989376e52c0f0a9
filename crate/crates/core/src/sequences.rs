//! Gradient sequences: concentration at a point, laminates and superpositions.

use serde::{Deserialize, Serialize};

use crate::domains::{self, Constraint, DisplacementField, DomainMesh, Locator};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix, Point};
use crate::par;

/// Profile u: B(0,1) → R^m vanishing on the unit sphere.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Profile {
    /// u(y) = b (1 − |y|)²₊.
    RadialBump { b: Vec<f64>, n: usize },
    /// u(y) = (1 − |y|²)₊^power (M y + c).
    AffineBump { matrix: Matrix, offset: Vec<f64>, power: u32 },
    /// P1 field on a mesh of the unit ball or half-ball, zero outside.
    /// With `reflect`, points with ρ·y > 0 are mirrored across ρ·y = 0.
    MeshField {
        mesh: Box<DomainMesh>,
        field: DisplacementField,
        #[serde(default)]
        reflect: Option<Vec<f64>>,
    },
}

impl Profile {
    pub fn radial_bump(b: &[f64], n: usize) -> Result<Self> {
        let p = Profile::RadialBump { b: b.to_vec(), n };
        p.validate()?;
        Ok(p)
    }

    pub fn affine_bump(matrix: Matrix, offset: &[f64], power: u32) -> Result<Self> {
        let p = Profile::AffineBump {
            matrix,
            offset: offset.to_vec(),
            power,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn mesh_field(mesh: DomainMesh, field: DisplacementField, reflect: Option<Vec<f64>>) -> Result<Self> {
        let p = Profile::MeshField {
            mesh: Box::new(mesh),
            field,
            reflect,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn m(&self) -> usize {
        match self {
            Profile::RadialBump { b, .. } => b.len(),
            Profile::AffineBump { matrix, .. } => matrix.rows(),
            Profile::MeshField { field, .. } => field.m,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Profile::RadialBump { n, .. } => *n,
            Profile::AffineBump { matrix, .. } => matrix.cols(),
            Profile::MeshField { mesh, .. } => mesh.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.m(), self.n());
        if !(1..=3).contains(&m) || !(1..=3).contains(&n) {
            return invalid("profile dimensions must lie in 1..=3");
        }
        match self {
            Profile::AffineBump { offset, power, .. } => {
                if offset.len() != m {
                    return invalid("affine bump offset has the wrong length");
                }
                if *power == 0 {
                    return invalid("affine bump power must be at least 1");
                }
            }
            Profile::MeshField { mesh, field, reflect } => {
                if !field.conforms_to(mesh) {
                    return invalid("profile field does not match its mesh");
                }
                if let Some(rho) = reflect {
                    if rho.len() != n {
                        return invalid("reflection normal has the wrong length");
                    }
                    let r = linalg::norm(rho);
                    if (r - 1.0).abs() > 1e-9 {
                        return Err(Error::NonUnitNormal(r));
                    }
                }
            }
            Profile::RadialBump { .. } => {}
        }
        Ok(())
    }

    pub fn sampler(&self) -> ProfileSampler<'_> {
        let locator = match self {
            Profile::MeshField { mesh, .. } => Some(Locator::new(mesh)),
            _ => None,
        };
        ProfileSampler { profile: self, locator }
    }

    /// ∫ over B(0,1) ∩ {ρ·y < 0} of v(∇u(y)), by quadrature on a half-ball mesh of size h.
    pub fn half_ball_integral(&self, v: &crate::Integrand, rho: &[f64], h: f64) -> Result<f64> {
        let mesh = domains::build_half_ball(rho, h)?;
        let sampler = self.sampler();
        mesh.integrate(3, |_, y| v.eval(&sampler.gradient(y)))
    }
}

/// Point evaluation of a profile; mesh-backed profiles carry a locator.
pub struct ProfileSampler<'a> {
    profile: &'a Profile,
    locator: Option<Locator<'a>>,
}

impl<'a> ProfileSampler<'a> {
    pub fn value(&self, y: &Point) -> Point {
        let n = self.profile.n();
        let r2: f64 = y[..n].iter().map(|c| c * c).sum();
        let mut out = [0.0; 3];
        match self.profile {
            Profile::RadialBump { b, .. } => {
                let w = (1.0 - r2.sqrt()).max(0.0);
                for (o, bi) in out.iter_mut().zip(b) {
                    *o = bi * w * w;
                }
            }
            Profile::AffineBump { matrix, offset, power } => {
                if r2 < 1.0 {
                    let w = (1.0 - r2).powi(*power as i32);
                    let a = matrix.apply(&y[..n]);
                    for i in 0..offset.len() {
                        out[i] = w * (a[i] + offset[i]);
                    }
                }
            }
            Profile::MeshField { mesh, field, .. } => {
                let y = self.reflected(y);
                if let Some((c, bary)) = self.locator.as_ref().and_then(|l| l.locate(&y)) {
                    out = field.eval_in_cell(mesh, c, &bary);
                }
            }
        }
        out
    }

    pub fn gradient(&self, y: &Point) -> Matrix {
        let n = self.profile.n();
        let m = self.profile.m();
        let r2: f64 = y[..n].iter().map(|c| c * c).sum();
        match self.profile {
            Profile::RadialBump { b, .. } => {
                let r = r2.sqrt();
                if r >= 1.0 || r == 0.0 {
                    return Matrix::zeros(m, n);
                }
                let dir: Vec<f64> = y[..n].iter().map(|c| -2.0 * (1.0 - r) * c / r).collect();
                Matrix::outer(b, &dir)
            }
            Profile::AffineBump { matrix, offset, power } => {
                if r2 >= 1.0 {
                    return Matrix::zeros(m, n);
                }
                let q = *power as i32;
                let w = (1.0 - r2).powi(q);
                let dw = -2.0 * q as f64 * (1.0 - r2).powi(q - 1);
                let a = matrix.apply(&y[..n]);
                let val: Vec<f64> = (0..m).map(|i| a[i] + offset[i]).collect();
                let dir: Vec<f64> = y[..n].iter().map(|c| dw * c).collect();
                matrix.scale(w) + Matrix::outer(&val, &dir)
            }
            Profile::MeshField { mesh, field, reflect } => {
                let yr = self.reflected(y);
                match self.locator.as_ref().and_then(|l| l.locate(&yr)) {
                    Some((c, _)) => {
                        let g = domains::cell_gradient(mesh, field, c);
                        match reflect {
                            Some(rho) if linalg::dot(rho, &y[..n]) > 0.0 => {
                                let mut refl = Matrix::identity(n);
                                for i in 0..n {
                                    for j in 0..n {
                                        refl.set(i, j, refl.get(i, j) - 2.0 * rho[i] * rho[j]);
                                    }
                                }
                                g.matmul(&refl)
                            }
                            _ => g,
                        }
                    }
                    None => Matrix::zeros(m, n),
                }
            }
        }
    }

    fn reflected(&self, y: &Point) -> Point {
        if let Profile::MeshField {
            reflect: Some(rho), ..
        } = self.profile
        {
            let d = linalg::dot(rho, &y[..rho.len()]);
            if d > 0.0 {
                let mut out = *y;
                for i in 0..rho.len() {
                    out[i] -= 2.0 * d * rho[i];
                }
                return out;
            }
        }
        *y
    }
}

/// Recipe for a gradient sequence (u_k).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SequenceSpec {
    /// u_k(x) = k^{n/p − 1} u(k (x − x0)).
    Concentration { profile: Profile, x0: Vec<f64>, p: f64 },
    /// ∇u_k = base + A on a fraction λ of each period of k e·x, base + B elsewhere.
    Laminate {
        a: Matrix,
        b: Matrix,
        lambda: f64,
        direction: Vec<f64>,
        #[serde(default)]
        base: Option<Matrix>,
    },
    /// Sum of sequences whose supports are disjoint at every k used.
    Superposition { parts: Vec<SequenceSpec> },
    Zero { m: usize, n: usize },
}

/// Empirical gradient law on one cell: weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct CellLaw {
    pub atoms: Vec<(f64, Matrix)>,
}

impl CellLaw {
    pub fn single(s: Matrix) -> Self {
        CellLaw { atoms: vec![(1.0, s)] }
    }

    pub fn mean<F: Fn(&Matrix) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|(w, s)| w * f(s)).sum()
    }

    pub fn barycenter(&self) -> Matrix {
        let mut out = Matrix::zeros(self.atoms[0].1.rows(), self.atoms[0].1.cols());
        for (w, s) in &self.atoms {
            out += s.scale(*w);
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.atoms.iter().all(|(_, s)| s.max_abs() == 0.0)
    }

    fn shifted(&self, s: &Matrix) -> Self {
        CellLaw {
            atoms: self.atoms.iter().map(|(w, a)| (*w, *a + *s)).collect(),
        }
    }
}

/// Candidate concentration point of a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSite {
    pub x0: Vec<f64>,
    pub boundary: bool,
    pub normal: Option<Vec<f64>>,
}

impl SequenceSpec {
    pub fn m(&self) -> usize {
        match self {
            SequenceSpec::Concentration { profile, .. } => profile.m(),
            SequenceSpec::Laminate { a, .. } => a.rows(),
            SequenceSpec::Superposition { parts } => parts.first().map_or(0, |p| p.m()),
            SequenceSpec::Zero { m, .. } => *m,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            SequenceSpec::Concentration { profile, .. } => profile.n(),
            SequenceSpec::Laminate { a, .. } => a.cols(),
            SequenceSpec::Superposition { parts } => parts.first().map_or(0, |p| p.n()),
            SequenceSpec::Zero { n, .. } => *n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SequenceSpec::Concentration { profile, x0, p } => {
                profile.validate()?;
                if x0.len() != profile.n() {
                    return invalid("x0 dimension differs from the profile dimension");
                }
                if !(*p >= 1.0) || !p.is_finite() {
                    return invalid("growth exponent p must be ≥ 1");
                }
            }
            SequenceSpec::Laminate {
                a,
                b,
                lambda,
                direction,
                base,
            } => {
                if !a.same_shape(b) || base.as_ref().is_some_and(|s| !s.same_shape(a)) {
                    return invalid("laminate matrices must share one shape");
                }
                if !(*lambda > 0.0 && *lambda < 1.0) {
                    return invalid("laminate fraction must lie in (0, 1)");
                }
                if direction.len() != a.cols() {
                    return invalid("laminate direction has the wrong length");
                }
                let r = linalg::norm(direction);
                if (r - 1.0).abs() > 1e-9 {
                    return Err(Error::NonUnitNormal(r));
                }
                let d = *b - *a;
                let beta = d.apply(direction);
                let residual = d - Matrix::outer(&beta[..d.rows()], direction);
                if residual.max_abs() > 1e-10 * (1.0 + d.max_abs()) || d.max_abs() == 0.0 {
                    return invalid("B − A must be a nonzero rank-one matrix β ⊗ e with e the lamination direction");
                }
            }
            SequenceSpec::Superposition { parts } => {
                if parts.is_empty() {
                    return invalid("superposition needs at least one part");
                }
                for part in parts {
                    part.validate()?;
                    if part.m() != self.m() || part.n() != self.n() {
                        return invalid("superposition parts must share dimensions");
                    }
                }
            }
            SequenceSpec::Zero { m, n } => {
                if !(1..=3).contains(m) || !(1..=3).contains(n) {
                    return invalid("dimensions must lie in 1..=3");
                }
            }
        }
        Ok(())
    }

    fn check_mesh(&self, mesh: &DomainMesh) -> Result<()> {
        self.validate()?;
        if self.n() != mesh.dim() {
            return invalid("sequence dimension differs from the mesh dimension");
        }
        Ok(())
    }

    /// Errors when a concentration support of radius 1/k is under-resolved.
    pub fn check_resolution(&self, mesh: &DomainMesh, k: u64) -> Result<()> {
        match self {
            SequenceSpec::Concentration { x0, .. } => {
                let radius = 1.0 / k as f64;
                let c = linalg::point(x0);
                let size = mesh.max_cell_diameter_near(&c, radius);
                if size > radius / 4.0 {
                    return Err(Error::Resolution {
                        center: x0.clone(),
                        radius,
                        cell_size: size,
                        limit: radius / 4.0,
                    });
                }
                Ok(())
            }
            SequenceSpec::Superposition { parts } => parts.iter().try_for_each(|p| p.check_resolution(mesh, k)),
            _ => Ok(()),
        }
    }

    /// Powers of two up to k_max that the mesh resolves.
    pub fn resolvable_ladder(&self, mesh: &DomainMesh, k_min: u64, k_max: u64) -> Vec<u64> {
        k_ladder(k_min, k_max)
            .into_iter()
            .filter(|&k| self.check_resolution(mesh, k).is_ok())
            .collect()
    }

    /// Nodal interpolant of u_k on the mesh.
    pub fn materialize_field(&self, mesh: &DomainMesh, k: u64) -> Result<DisplacementField> {
        self.check_mesh(mesh)?;
        if k == 0 {
            return invalid("k must be positive");
        }
        self.check_resolution(mesh, k)?;
        let (m, n) = (self.m(), self.n());
        let kf = k as f64;
        Ok(match self {
            SequenceSpec::Concentration { profile, x0, p } => {
                let amp = kf.powf(n as f64 / p - 1.0);
                let sampler = profile.sampler();
                let values = par::map_indexed(mesh.vertex_count(), |v| {
                    let x = mesh.vertices()[v];
                    let mut y = [0.0; 3];
                    for i in 0..n {
                        y[i] = kf * (x[i] - x0[i]);
                    }
                    sampler.value(&y)
                });
                let mut u = DisplacementField::zeros(mesh, m, Constraint::Free);
                for (v, val) in values.iter().enumerate() {
                    for i in 0..m {
                        u.values[v * m + i] = amp * val[i];
                    }
                }
                u
            }
            SequenceSpec::Laminate {
                a,
                b,
                lambda,
                direction,
                base,
            } => {
                let start = base.map_or(*a, |s| s + *a);
                let beta = (*b - *a).apply(direction);
                DisplacementField::from_fn(mesh, m, Constraint::Free, |x| {
                    let t = kf * linalg::dot(direction, &x[..n]);
                    let w = band_primitive(t, *lambda) / kf;
                    let lin = start.apply(&x[..n]);
                    (0..m).map(|i| lin[i] + beta[i] * w).collect()
                })
            }
            SequenceSpec::Superposition { parts } => {
                let mut u = DisplacementField::zeros(mesh, m, Constraint::Free);
                let mut owner: Vec<Option<usize>> = vec![None; mesh.cell_count()];
                for (pi, part) in parts.iter().enumerate() {
                    let f = part.materialize_field(mesh, k)?;
                    let grads = domains::cell_gradients(mesh, &f);
                    for (c, g) in grads.iter().enumerate() {
                        if g.max_abs() > 0.0 {
                            if let Some(prev) = owner[c] {
                                return invalid(format!(
                                    "superposition parts {prev} and {pi} overlap on cell {c} at k = {k}"
                                ));
                            }
                            owner[c] = Some(pi);
                        }
                    }
                    for (x, y) in u.values.iter_mut().zip(&f.values) {
                        *x += y;
                    }
                }
                u
            }
            SequenceSpec::Zero { .. } => DisplacementField::zeros(mesh, m, Constraint::Free),
        })
    }

    /// Cellwise gradients ∇u_k of the nodal interpolant.
    pub fn materialize(&self, mesh: &DomainMesh, k: u64) -> Result<Vec<Matrix>> {
        let u = self.materialize_field(mesh, k)?;
        Ok(domains::cell_gradients(mesh, &u))
    }

    /// Per-cell gradient laws. Laminates use exact band fractions, so the law
    /// is that of the exact piecewise-constant gradient; other sequences use
    /// the nodal interpolant.
    pub fn cell_laws(&self, mesh: &DomainMesh, k: u64) -> Result<Vec<CellLaw>> {
        self.check_mesh(mesh)?;
        if k == 0 {
            return invalid("k must be positive");
        }
        match self {
            SequenceSpec::Laminate {
                a,
                b,
                lambda,
                direction,
                base,
            } => {
                let sa = base.map_or(*a, |s| s + *a);
                let sb = base.map_or(*b, |s| s + *b);
                let kf = k as f64;
                let dim = mesh.dim();
                Ok(par::map_indexed(mesh.cell_count(), |c| {
                    let ts: Vec<f64> = mesh
                        .cell(c)
                        .iter()
                        .take(dim + 1)
                        .map(|&v| kf * linalg::dot(direction, &mesh.vertices()[v][..dim]))
                        .collect();
                    let fb = band_fraction(&ts, *lambda);
                    CellLaw {
                        atoms: vec![(1.0 - fb, sa), (fb, sb)],
                    }
                }))
            }
            SequenceSpec::Superposition { parts } => {
                let mut laws: Vec<CellLaw> = vec![CellLaw::single(Matrix::zeros(self.m(), self.n())); mesh.cell_count()];
                for (pi, part) in parts.iter().enumerate() {
                    let pl = part.cell_laws(mesh, k)?;
                    for (c, law) in pl.into_iter().enumerate() {
                        if law.is_zero() {
                            continue;
                        }
                        if laws[c].is_zero() {
                            laws[c] = law;
                        } else if laws[c].atoms.len() == 1 {
                            laws[c] = law.shifted(&laws[c].atoms[0].1);
                        } else if law.atoms.len() == 1 {
                            laws[c] = laws[c].shifted(&law.atoms[0].1);
                        } else {
                            return invalid(format!("superposition part {pi} overlaps another part on cell {c} at k = {k}"));
                        }
                    }
                }
                Ok(laws)
            }
            _ => Ok(self.materialize(mesh, k)?.into_iter().map(CellLaw::single).collect()),
        }
    }

    /// Gradient of the weak limit u, per cell.
    pub fn weak_limit(&self, mesh: &DomainMesh) -> Result<Vec<Matrix>> {
        self.check_mesh(mesh)?;
        let zero = Matrix::zeros(self.m(), self.n());
        Ok(match self {
            SequenceSpec::Laminate { a, b, lambda, base, .. } => {
                let s = base.unwrap_or(zero) + a.scale(*lambda) + b.scale(1.0 - lambda);
                vec![s; mesh.cell_count()]
            }
            SequenceSpec::Superposition { parts } => {
                let mut out = vec![zero; mesh.cell_count()];
                for part in parts {
                    for (o, g) in out.iter_mut().zip(part.weak_limit(mesh)?) {
                        *o += g;
                    }
                }
                out
            }
            _ => vec![zero; mesh.cell_count()],
        })
    }

    /// Concentration points of the sequence, classified against the mesh boundary.
    pub fn atom_sites(&self, mesh: &DomainMesh) -> Vec<AtomSite> {
        match self {
            SequenceSpec::Concentration { x0, .. } => {
                let x = linalg::point(x0);
                let boundary = mesh.is_boundary_point(&x, 1e-9);
                let normal = boundary.then(|| mesh.outer_normal(&x)[..mesh.dim()].to_vec());
                vec![AtomSite {
                    x0: x0.clone(),
                    boundary,
                    normal,
                }]
            }
            SequenceSpec::Superposition { parts } => parts.iter().flat_map(|p| p.atom_sites(mesh)).collect(),
            _ => Vec::new(),
        }
    }
}

/// Powers of two in [k_min, k_max].
pub fn k_ladder(k_min: u64, k_max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut k = 1u64;
    while k <= k_max {
        if k >= k_min {
            out.push(k);
        }
        k = match k.checked_mul(2) {
            Some(x) => x,
            None => break,
        };
    }
    out
}

/// (∫ Σ_atoms w |S|^p)^{1/p} over the mesh.
pub fn lp_norm(mesh: &DomainMesh, laws: &[CellLaw], p: f64) -> f64 {
    let total: f64 = laws
        .iter()
        .zip(mesh.volumes())
        .map(|(law, vol)| vol * law.mean(|s| s.norm().powf(p)))
        .sum();
    total.powf(1.0 / p)
}

/// W(t) = ∫_0^t χ, with χ = 1 where frac(t) ≥ λ.
fn band_primitive(t: f64, lambda: f64) -> f64 {
    let j = t.floor();
    j * (1.0 - lambda) + (t - j - lambda).max(0.0)
}

/// Fraction of a simplex on which the affine function with vertex values ts
/// has fractional part ≥ λ.
pub fn band_fraction(ts: &[f64], lambda: f64) -> f64 {
    let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut frac = 0.0;
    let mut j = lo.floor() - 1.0;
    while j <= hi {
        frac += fraction_above(ts, j + lambda) - fraction_above(ts, j + 1.0);
        j += 1.0;
    }
    frac.clamp(0.0, 1.0)
}

/// Fraction of a simplex on which the affine function with vertex values ts
/// exceeds c. Equals the divided difference [t_0, …, t_n] (· − c)₊ⁿ.
pub fn fraction_above(ts: &[f64], c: f64) -> f64 {
    let lo = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if c <= lo {
        return 1.0;
    }
    if c >= hi {
        return 0.0;
    }
    let n = ts.len() - 1;
    let mut z: Vec<f64> = ts.iter().map(|t| t - c).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tol = 1e-11 * (hi - lo).max(1.0);
    // j-th derivative of x₊ⁿ over j!
    let deriv = |x: f64, j: usize| -> f64 {
        if j == n {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                0.0
            } else {
                0.5
            }
        } else if x <= 0.0 {
            0.0
        } else {
            binomial(n, j) * x.powi((n - j) as i32)
        }
    };
    let mut table: Vec<f64> = z.iter().map(|&x| deriv(x, 0)).collect();
    for order in 1..=n {
        for i in 0..=(n - order) {
            let span = z[i + order] - z[i];
            table[i] = if span <= tol {
                deriv(z[i], order)
            } else {
                (table[i + 1] - table[i]) / span
            };
        }
    }
    table[0].clamp(0.0, 1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
