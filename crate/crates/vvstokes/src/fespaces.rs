//! Local bases, dof maps and transforms for the five discrete spaces:
//!
//! * `Vh`  — lowest-order Brezzi-Douglas-Marini velocities (normal-continuous
//!   piecewise linears), three dofs per facet;
//! * `VhatH` — facet-constant tangential velocity traces, two dofs per facet,
//!   none on the Dirichlet boundary;
//! * `Wh`  — lowest-order Raviart-Thomas vorticity, one dof per facet;
//! * `SigmaH` — element-local piecewise-linear trace-free matrices whose
//!   normal-tangential trace is constant on every facet;
//! * `Qh`  — piecewise-constant pressures.
//!
//! Facet-based dofs are moments against functionals tied to the *global*
//! facet data (sorted vertex triple and stored normal); the only per-element
//! difference is the outward-normal sign, which is attached to the dof map.
//! Element matrices therefore stay orientation-free.

use crate::mesh::{FacetLabel, Mesh};
use crate::quadrature::{self, QuadRule};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FespaceError {
    #[error("element {0} is degenerate; cannot build a local basis")]
    DegenerateElement(usize),
    #[error("stress basis on element {element}: nullspace dimension {got} != expected {expected}")]
    SigmaDimensionMismatch { element: usize, got: usize, expected: usize },
    #[error("singular local interpolation system on element {0}")]
    SingularLocalSystem(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    Vh,
    VhatH,
    Wh,
    SigmaH,
    Qh,
}

/// Expected dimension of the local stress space: 32 raw coefficients of
/// P¹(T, 𝔻) minus 16 independent facet nt-linearity constraints. The
/// construction measures the dimension and refuses to continue on a mismatch.
pub const SIGMA_LOCAL_DIM: usize = 16;

/// One local dof slot: its global index (None for structurally-zero slots,
/// e.g. facet traces on the Dirichlet boundary) and the orientation sign
/// relating the local outward-normal functional to the global one.
#[derive(Debug, Clone, Copy)]
pub struct LocalDof {
    pub global: Option<usize>,
    pub sign: f64,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub space: SpaceTag,
    pub n_global: usize,
    /// Per element, ordered local dof slots (facet-major for facet spaces).
    pub element_dofs: Vec<Vec<LocalDof>>,
    pub dirichlet_mask: Vec<bool>,
}

/// Deterministic global numbering with per-facet counts 3/2/1 for
/// Vh/VhatH/Wh; VhatH allocates nothing on Dirichlet facets.
pub fn build_dofmap(mesh: &Mesh, space: SpaceTag) -> DofMap {
    match space {
        SpaceTag::Vh => build_facet_dofmap(mesh, space, 3, true),
        SpaceTag::Wh => build_facet_dofmap(mesh, space, 1, true),
        SpaceTag::VhatH => build_vhat_dofmap(mesh),
        SpaceTag::SigmaH => build_element_dofmap(mesh, space, SIGMA_LOCAL_DIM),
        SpaceTag::Qh => build_element_dofmap(mesh, space, 1),
    }
}

fn build_facet_dofmap(mesh: &Mesh, space: SpaceTag, per_facet: usize, signed: bool) -> DofMap {
    let n_global = per_facet * mesh.n_facets();
    let mut dirichlet_mask = vec![false; n_global];
    for (f, label) in mesh.facet_label.iter().enumerate() {
        if *label == FacetLabel::DirichletBoundary {
            for k in 0..per_facet {
                dirichlet_mask[per_facet * f + k] = true;
            }
        }
    }
    let element_dofs = mesh
        .tets
        .iter()
        .enumerate()
        .map(|(t, tet)| {
            let mut dofs = Vec::with_capacity(4 * per_facet);
            for local in 0..4 {
                let f = mesh
                    .facet_id(&crate::mesh::local_facet_vertices(tet, local))
                    .expect("facet exists");
                let sign = if signed { mesh.outward_sign(f, t) } else { 1.0 };
                for k in 0..per_facet {
                    dofs.push(LocalDof { global: Some(per_facet * f + k), sign });
                }
            }
            dofs
        })
        .collect();
    DofMap { space, n_global, element_dofs, dirichlet_mask }
}

fn build_vhat_dofmap(mesh: &Mesh) -> DofMap {
    // Two tangential dofs on interior and Neumann facets only.
    let mut facet_offset = vec![None; mesh.n_facets()];
    let mut next = 0;
    for f in 0..mesh.n_facets() {
        if mesh.facet_label[f] != FacetLabel::DirichletBoundary {
            facet_offset[f] = Some(next);
            next += 2;
        }
    }
    let element_dofs = mesh
        .tets
        .iter()
        .map(|tet| {
            let mut dofs = Vec::with_capacity(8);
            for local in 0..4 {
                let f = mesh
                    .facet_id(&crate::mesh::local_facet_vertices(tet, local))
                    .expect("facet exists");
                for k in 0..2 {
                    dofs.push(LocalDof {
                        global: facet_offset[f].map(|o| o + k),
                        sign: 1.0,
                    });
                }
            }
            dofs
        })
        .collect();
    DofMap {
        space: SpaceTag::VhatH,
        n_global: next,
        element_dofs,
        dirichlet_mask: vec![false; next],
    }
}

fn build_element_dofmap(mesh: &Mesh, space: SpaceTag, per_element: usize) -> DofMap {
    let n_global = per_element * mesh.n_tets();
    let element_dofs = (0..mesh.n_tets())
        .map(|t| {
            (0..per_element)
                .map(|k| LocalDof { global: Some(per_element * t + k), sign: 1.0 })
                .collect()
        })
        .collect();
    DofMap { space, n_global, element_dofs, dirichlet_mask: vec![false; n_global] }
}

/// A linear vector field v(x) = a + B x. Covers BDM1 and RT0 shape functions.
#[derive(Debug, Clone, Copy)]
pub struct P1Vec {
    pub a: Vector3<f64>,
    pub b: Matrix3<f64>,
}

impl P1Vec {
    pub fn zero() -> Self {
        P1Vec { a: Vector3::zeros(), b: Matrix3::zeros() }
    }

    pub fn value(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.a + self.b * x
    }

    /// ∇v, constant, with (∇v)_{ij} = ∂v_i/∂x_j = B_{ij}.
    pub fn grad(&self) -> Matrix3<f64> {
        self.b
    }

    pub fn eps(&self) -> Matrix3<f64> {
        (self.b + self.b.transpose()) * 0.5
    }

    pub fn div(&self) -> f64 {
        self.b.trace()
    }

    pub fn curl(&self) -> Vector3<f64> {
        Vector3::new(
            self.b[(2, 1)] - self.b[(1, 2)],
            self.b[(0, 2)] - self.b[(2, 0)],
            self.b[(1, 0)] - self.b[(0, 1)],
        )
    }

    pub fn axpy(&mut self, c: f64, other: &P1Vec) {
        self.a += c * other.a;
        self.b += c * other.b;
    }
}

/// A linear matrix field τ(x) = c[0] + x c[1] + y c[2] + z c[3].
#[derive(Debug, Clone)]
pub struct P1Mat {
    pub c: [Matrix3<f64>; 4],
}

impl P1Mat {
    pub fn zero() -> Self {
        P1Mat { c: [Matrix3::zeros(); 4] }
    }

    pub fn value(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        self.c[0] + self.c[1] * x.x + self.c[2] * x.y + self.c[3] * x.z
    }

    /// Row-wise divergence, constant.
    pub fn div(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.c[1][(i, 0)] + self.c[2][(i, 1)] + self.c[3][(i, 2)])
    }

    pub fn axpy(&mut self, s: f64, other: &P1Mat) {
        for k in 0..4 {
            self.c[k] += s * other.c[k];
        }
    }
}

/// Quadrature points of a facet rule mapped to the physical facet with the
/// vertex triple `p` (in the mesh's sorted order), paired with physical
/// weights. Reference barycentrics (1-s-t, s, t) correspond to p[0..3].
pub fn facet_quadrature(p: &[Vector3<f64>; 3], rule: &QuadRule) -> Vec<(Vector3<f64>, f64)> {
    let e0 = p[1] - p[0];
    let e1 = p[2] - p[0];
    let jac = e0.cross(&e1).norm(); // 2 * area
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(q, &w)| (p[0] + q[0] * e0 + q[1] * e1, w * jac))
        .collect()
}

/// Quadrature points of a tet rule mapped to element `t`.
pub fn volume_quadrature(mesh: &Mesh, t: usize, rule: &QuadRule) -> Vec<(Vector3<f64>, f64)> {
    let g = mesh.element_geometry(t);
    let det = g.jacobian.determinant();
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(q, &w)| {
            let xi = Vector3::new(q[0], q[1], q[2]);
            (g.v0 + g.jacobian * xi, w * det)
        })
        .collect()
}

/// Area-normalized moment (1/|F|) ∫_F (v·n_F) λ_k ds of a vector field
/// against the barycentric function of the k-th sorted facet vertex,
/// using the facet's stored (global) normal.
pub fn vh_facet_moment<V>(mesh: &Mesh, f: usize, k: usize, degree: usize, field: V) -> f64
where
    V: Fn(&Vector3<f64>) -> Vector3<f64>,
{
    let frame = mesh.facet_frame(f);
    let rule = quadrature::rule_for(2, degree).expect("facet rule");
    let e0 = frame.vertices[1] - frame.vertices[0];
    let e1 = frame.vertices[2] - frame.vertices[0];
    let jac = e0.cross(&e1).norm();
    let mut acc = 0.0;
    for (q, &w) in rule.points.iter().zip(&rule.weights) {
        let lambda = [1.0 - q[0] - q[1], q[0], q[1]];
        let x = frame.vertices[0] + q[0] * e0 + q[1] * e1;
        acc += w * jac * field(&x).dot(&frame.normal) * lambda[k];
    }
    acc / frame.area
}

/// Area-normalized RT0 moment (1/|F|) ∫_F v·n_F ds.
pub fn wh_facet_moment<V>(mesh: &Mesh, f: usize, degree: usize, field: V) -> f64
where
    V: Fn(&Vector3<f64>) -> Vector3<f64>,
{
    let frame = mesh.facet_frame(f);
    let rule = quadrature::rule_for(2, degree).expect("facet rule");
    let mut acc = 0.0;
    for (x, w) in facet_quadrature(&frame.vertices, &rule) {
        acc += w * field(&x).dot(&frame.normal);
    }
    acc / frame.area
}

/// Tangential facet averages ((1/|F|) ∫ v·t₁, (1/|F|) ∫ v·t₂).
pub fn vhat_facet_moments<V>(mesh: &Mesh, f: usize, degree: usize, field: V) -> [f64; 2]
where
    V: Fn(&Vector3<f64>) -> Vector3<f64>,
{
    let frame = mesh.facet_frame(f);
    let rule = quadrature::rule_for(2, degree).expect("facet rule");
    let mut acc = [0.0; 2];
    for (x, w) in facet_quadrature(&frame.vertices, &rule) {
        let v = field(&x);
        acc[0] += w * v.dot(&frame.tangent1);
        acc[1] += w * v.dot(&frame.tangent2);
    }
    [acc[0] / frame.area, acc[1] / frame.area]
}

/// Local basis of a facet-moment vector space (BDM1 or RT0) on one element,
/// dual to the element's outward-normal facet functionals.
#[derive(Debug, Clone)]
pub struct VectorElementBasis {
    pub funcs: Vec<P1Vec>,
}

/// 12 shape functions spanning P¹(T, ℝ³), dual to the three area-normalized
/// facet moments (v·n against P¹(F)) per facet. Their divergences are
/// constant, so div Vh ⊆ Qh elementwise.
pub fn bdm1_local_basis(mesh: &Mesh, t: usize) -> Result<VectorElementBasis, FespaceError> {
    let raw = p1_vector_monomials(mesh, t);
    let funcs = dualize(mesh, t, &raw, &|mesh, t| local_functionals_vh(mesh, t))?;
    Ok(VectorElementBasis { funcs })
}

/// 4 shape functions spanning P⁰(T, ℝ³) + x P⁰(T), dual to the
/// area-normalized net-flux moment per facet.
pub fn rt0_local_basis(mesh: &Mesh, t: usize) -> Result<VectorElementBasis, FespaceError> {
    let g = mesh.element_geometry(t);
    let scale = 1.0 / g.diameter;
    let mut raw = vec![
        P1Vec { a: Vector3::x(), b: Matrix3::zeros() },
        P1Vec { a: Vector3::y(), b: Matrix3::zeros() },
        P1Vec { a: Vector3::z(), b: Matrix3::zeros() },
    ];
    raw.push(P1Vec { a: -g.centroid * scale, b: Matrix3::identity() * scale });
    let funcs = dualize(mesh, t, &raw, &|mesh, t| local_functionals_wh(mesh, t))?;
    Ok(VectorElementBasis { funcs })
}

/// Monomial basis of P¹(T, ℝ³) in element-centered, diameter-scaled
/// coordinates (for conditioning of the dualization system).
fn p1_vector_monomials(mesh: &Mesh, t: usize) -> Vec<P1Vec> {
    let g = mesh.element_geometry(t);
    let s = 1.0 / g.diameter;
    let mut raw = Vec::with_capacity(12);
    for d in 0..3 {
        let mut a = Vector3::zeros();
        a[d] = 1.0;
        raw.push(P1Vec { a, b: Matrix3::zeros() });
    }
    for d in 0..3 {
        for c in 0..3 {
            // component d carries the scaled coordinate (x_c - centroid_c)/h
            let mut b = Matrix3::zeros();
            b[(d, c)] = s;
            let mut a = Vector3::zeros();
            a[d] = -g.centroid[c] * s;
            raw.push(P1Vec { a, b });
        }
    }
    raw
}

type Functional = Box<dyn Fn(&P1Vec) -> f64>;

fn local_functionals_vh(mesh: &Mesh, t: usize) -> Vec<Functional> {
    let rule = quadrature::rule_for(2, 2).expect("facet rule");
    let mut out: Vec<Functional> = Vec::with_capacity(12);
    for local in 0..4 {
        let f = mesh
            .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[t], local))
            .expect("facet exists");
        let frame = mesh.facet_frame(f);
        let n_out = mesh.outward_sign(f, t) * frame.normal;
        let pts = facet_quadrature(&frame.vertices, &rule);
        let bary: Vec<[f64; 3]> = rule
            .points
            .iter()
            .map(|q| [1.0 - q[0] - q[1], q[0], q[1]])
            .collect();
        for k in 0..3 {
            let pts = pts.clone();
            let bary = bary.clone();
            let area = frame.area;
            out.push(Box::new(move |v: &P1Vec| {
                let mut acc = 0.0;
                for ((x, w), lam) in pts.iter().zip(&bary) {
                    acc += w * v.value(x).dot(&n_out) * lam[k];
                }
                acc / area
            }));
        }
    }
    out
}

fn local_functionals_wh(mesh: &Mesh, t: usize) -> Vec<Functional> {
    let rule = quadrature::rule_for(2, 1).expect("facet rule");
    let mut out: Vec<Functional> = Vec::with_capacity(4);
    for local in 0..4 {
        let f = mesh
            .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[t], local))
            .expect("facet exists");
        let frame = mesh.facet_frame(f);
        let n_out = mesh.outward_sign(f, t) * frame.normal;
        let pts = facet_quadrature(&frame.vertices, &rule);
        let area = frame.area;
        out.push(Box::new(move |v: &P1Vec| {
            let mut acc = 0.0;
            for (x, w) in &pts {
                acc += w * v.value(x).dot(&n_out);
            }
            acc / area
        }));
    }
    out
}

fn dualize<FB>(
    mesh: &Mesh,
    t: usize,
    raw: &[P1Vec],
    functionals: &FB,
) -> Result<Vec<P1Vec>, FespaceError>
where
    FB: Fn(&Mesh, usize) -> Vec<Functional>,
{
    let funcs = functionals(mesh, t);
    let n = raw.len();
    debug_assert_eq!(funcs.len(), n);
    let v = DMatrix::from_fn(n, n, |i, j| funcs[i](&raw[j]));
    let lu = v.lu();
    let mut out = Vec::with_capacity(n);
    for l in 0..n {
        let mut e = DVector::zeros(n);
        e[l] = 1.0;
        let coeffs = lu
            .solve(&e)
            .ok_or(FespaceError::DegenerateElement(t))?;
        let mut phi = P1Vec::zero();
        for (j, m) in raw.iter().enumerate() {
            phi.axpy(coeffs[j], m);
        }
        out.push(phi);
    }
    Ok(out)
}

/// Local stress basis: P¹(T, 𝔻) fields with facet-constant nt-trace,
/// built as the nullspace of the nt-linearity constraints in physical
/// coordinates (the space is element-local; no inter-element mapping is
/// required).
#[derive(Debug, Clone)]
pub struct SigmaElementBasis {
    pub funcs: Vec<P1Mat>,
}

/// Orthonormal (Frobenius) basis of the 8-dimensional space of trace-free
/// 3×3 matrices.
pub fn dev_basis() -> [Matrix3<f64>; 8] {
    let mut out = [Matrix3::zeros(); 8];
    let mut idx = 0;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                let mut m = Matrix3::zeros();
                m[(i, j)] = 1.0;
                out[idx] = m;
                idx += 1;
            }
        }
    }
    out[6] = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 0.0)) / 2.0_f64.sqrt();
    out[7] = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -2.0)) / 6.0_f64.sqrt();
    out
}

fn sigma_raw_basis(mesh: &Mesh, t: usize) -> Vec<P1Mat> {
    let g = mesh.element_geometry(t);
    let s = 1.0 / g.diameter;
    let dev = dev_basis();
    let mut raw = Vec::with_capacity(32);
    for e in &dev {
        raw.push(P1Mat { c: [*e, Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros()] });
        for axis in 0..3 {
            let mut c = [Matrix3::zeros(); 4];
            c[0] = -g.centroid[axis] * s * e;
            c[1 + axis] = s * e;
            raw.push(P1Mat { c });
        }
    }
    raw
}

/// Constraint matrix whose nullspace is the local stress space: rows are the
/// zero-mean linear facet moments of (τ n)·t_k for both facet tangents.
fn sigma_constraint_matrix(mesh: &Mesh, t: usize, raw: &[P1Mat]) -> DMatrix<f64> {
    let rule = quadrature::rule_for(2, 2).expect("facet rule");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(16);
    for local in 0..4 {
        let f = mesh
            .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[t], local))
            .expect("facet exists");
        let frame = mesh.facet_frame(f);
        let pts = facet_quadrature(&frame.vertices, &rule);
        let bary: Vec<[f64; 3]> = rule
            .points
            .iter()
            .map(|q| [1.0 - q[0] - q[1], q[0], q[1]])
            .collect();
        for tang in [frame.tangent1, frame.tangent2] {
            for mode in 1..3usize {
                let mut row = Vec::with_capacity(raw.len());
                for tau in raw {
                    let mut acc = 0.0;
                    for ((x, w), lam) in pts.iter().zip(&bary) {
                        // zero-mean linear mode lambda_mode - lambda_0
                        let ell = lam[mode] - lam[0];
                        acc += w * (tau.value(x) * frame.normal).dot(&tang) * ell;
                    }
                    row.push(acc / frame.area);
                }
                rows.push(row);
            }
        }
    }
    DMatrix::from_fn(rows.len(), raw.len(), |i, j| rows[i][j])
}

/// Numerical rank of the nt-linearity constraint system (SVD oracle).
pub fn sigma_constraint_rank(mesh: &Mesh, t: usize) -> usize {
    let raw = sigma_raw_basis(mesh, t);
    let c = sigma_constraint_matrix(mesh, t, &raw);
    let svd = c.svd(false, false);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
}

pub fn sigma_local_basis(mesh: &Mesh, t: usize) -> Result<SigmaElementBasis, FespaceError> {
    let raw = sigma_raw_basis(mesh, t);
    let c = sigma_constraint_matrix(mesh, t, &raw);
    // Nullspace via the spectral decomposition of CᵀC.
    let gram = c.transpose() * &c;
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
    let mut funcs = Vec::new();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        // null eigenvalues of CᵀC are O(machine eps²)·λmax; genuine constraint
        // directions stay many orders above this cut on non-degenerate tets
        if l <= 1e-12 * lmax {
            let col = eig.eigenvectors.column(k);
            let mut tau = P1Mat::zero();
            for (j, m) in raw.iter().enumerate() {
                tau.axpy(col[j], m);
            }
            funcs.push(tau);
        }
    }
    if funcs.len() != SIGMA_LOCAL_DIM {
        return Err(FespaceError::SigmaDimensionMismatch {
            element: t,
            got: funcs.len(),
            expected: SIGMA_LOCAL_DIM,
        });
    }
    Ok(SigmaElementBasis { funcs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_cube, from_raw, CubeFace, FacetLabel};
    use crate::polycalc::MultiPoly;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_tet_mesh() -> Mesh {
        from_raw(
            vec![
                Vector3::zeros(),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
            |_| FacetLabel::DirichletBoundary,
        )
        .unwrap()
    }

    fn random_tet_mesh(rng: &mut ChaCha8Rng) -> Mesh {
        loop {
            let verts: Vec<Vector3<f64>> = (0..4)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let vol = (verts[1] - verts[0])
                .cross(&(verts[2] - verts[0]))
                .dot(&(verts[3] - verts[0]))
                / 6.0;
            if vol.abs() > 0.02 {
                return from_raw(verts, vec![[0, 1, 2, 3]], |_| FacetLabel::DirichletBoundary)
                    .unwrap();
            }
        }
    }

    /// Interpolate a linear field into the local BDM1 basis by evaluating the
    /// element's outward-normal facet functionals.
    fn bdm_interpolate(mesh: &Mesh, t: usize, field: &P1Vec) -> P1Vec {
        let basis = bdm1_local_basis(mesh, t).unwrap();
        let mut out = P1Vec::zero();
        let mut idx = 0;
        for local in 0..4 {
            let f = mesh
                .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[t], local))
                .unwrap();
            let s = mesh.outward_sign(f, t);
            for k in 0..3 {
                let c = s * vh_facet_moment(mesh, f, k, 3, |x| field.value(x));
                out.axpy(c, &basis.funcs[idx]);
                idx += 1;
            }
        }
        out
    }

    #[test]
    fn bdm_reproduces_constants_and_rigid_fields() {
        let mesh = build_structured_cube(2, CubeFace::XMin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let constant = P1Vec { a: Vector3::new(1.0, 0.0, 0.0), b: Matrix3::zeros() };
        // b x x with b = e_z
        let rigid = P1Vec {
            a: Vector3::zeros(),
            b: Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        };
        for field in [constant, rigid] {
            for _ in 0..5 {
                let t = rng.random_range(0..mesh.n_tets());
                let ih = bdm_interpolate(&mesh, t, &field);
                let g = mesh.element_geometry(t);
                for x in [g.centroid, g.vertices[0], g.vertices[3]] {
                    assert!(
                        (ih.value(&x) - field.value(&x)).norm() < 1e-13,
                        "reproduction failed on tet {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn bdm_mass_matrix_matches_exact_polynomial_oracle() {
        let mesh = unit_tet_mesh();
        let basis = bdm1_local_basis(&mesh, 0).unwrap();
        let rule = quadrature::rule_for(3, 4).unwrap();
        let pts = volume_quadrature(&mesh, 0, &rule);
        let verts = mesh.element_geometry(0).vertices;
        for i in 0..12 {
            for j in 0..12 {
                let mut quad = 0.0;
                for (x, w) in &pts {
                    quad += w * basis.funcs[i].value(x).dot(&basis.funcs[j].value(x));
                }
                // independent oracle: exact polynomial integration
                let mut exact = 0.0;
                for comp in 0..3 {
                    let pi = p1_component_poly(&basis.funcs[i], comp);
                    let pj = p1_component_poly(&basis.funcs[j], comp);
                    exact += pi.mul(&pj).integrate_tet_exact(&verts);
                }
                assert!(
                    (quad - exact).abs() < 1e-13,
                    "mass entry ({i},{j}): {quad} vs {exact}"
                );
            }
        }
    }

    fn p1_component_poly(v: &P1Vec, comp: usize) -> MultiPoly {
        let mut p = MultiPoly::constant(v.a[comp]);
        for axis in 0..3 {
            p = p.add(&MultiPoly::var(axis).scale(v.b[(comp, axis)]));
        }
        p
    }

    #[test]
    fn rt0_constants_and_divergence_theorem() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh = random_tet_mesh(&mut rng);
        let basis = rt0_local_basis(&mesh, 0).unwrap();

        // omega = (0,0,2) is exactly representable
        let target = P1Vec { a: Vector3::new(0.0, 0.0, 2.0), b: Matrix3::zeros() };
        let mut interp = P1Vec::zero();
        for (local, phi) in basis.funcs.iter().enumerate() {
            let f = mesh
                .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[0], local))
                .unwrap();
            let s = mesh.outward_sign(f, 0);
            let c = s * wh_facet_moment(&mesh, f, 2, |x| target.value(x));
            interp.axpy(c, phi);
        }
        let g = mesh.element_geometry(0);
        assert!((interp.value(&g.centroid) - target.value(&g.centroid)).norm() < 1e-12);

        // Gauss theorem: ∫_T div φ = net outward flux over ∂T
        for phi in &basis.funcs {
            let vol_int = phi.div() * g.volume;
            let mut flux = 0.0;
            for local in 0..4 {
                let f = mesh
                    .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[0], local))
                    .unwrap();
                let frame = mesh.facet_frame(f);
                let s = mesh.outward_sign(f, 0);
                flux += s * wh_facet_moment(&mesh, f, 2, |x| phi.value(x)) * frame.area;
            }
            assert!((vol_int - flux).abs() < 1e-13);
        }
    }

    #[test]
    fn rt0_mass_matrix_matches_exact_polynomial_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mesh = random_tet_mesh(&mut rng);
        let basis = rt0_local_basis(&mesh, 0).unwrap();
        let rule = quadrature::rule_for(3, 4).unwrap();
        let pts = volume_quadrature(&mesh, 0, &rule);
        let verts = mesh.element_geometry(0).vertices;
        for i in 0..4 {
            for j in 0..4 {
                let mut quad = 0.0;
                for (x, w) in &pts {
                    quad += w * basis.funcs[i].value(x).dot(&basis.funcs[j].value(x));
                }
                let mut exact = 0.0;
                for comp in 0..3 {
                    let pi = p1_component_poly(&basis.funcs[i], comp);
                    let pj = p1_component_poly(&basis.funcs[j], comp);
                    exact += pi.mul(&pj).integrate_tet_exact(&verts);
                }
                assert!((quad - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn sigma_dimension_matches_rank_oracle_on_random_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10 {
            let mesh = random_tet_mesh(&mut rng);
            let rank = sigma_constraint_rank(&mesh, 0);
            assert_eq!(32 - rank, SIGMA_LOCAL_DIM, "trial {trial}");
            let basis = sigma_local_basis(&mesh, 0).unwrap();
            assert_eq!(basis.funcs.len(), SIGMA_LOCAL_DIM);
        }
    }

    #[test]
    fn sigma_basis_is_tracefree_with_constant_nt_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mesh = random_tet_mesh(&mut rng);
        let basis = sigma_local_basis(&mesh, 0).unwrap();
        let rule = quadrature::rule_for(3, 2).unwrap();
        let pts = volume_quadrature(&mesh, 0, &rule);
        for tau in &basis.funcs {
            for (x, _) in &pts {
                assert!(tau.value(x).trace().abs() < 1e-12);
            }
            // nt-trace constant on each facet: variance over the 3 vertices
            for local in 0..4 {
                let f = mesh
                    .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[0], local))
                    .unwrap();
                let frame = mesh.facet_frame(f);
                let nt = |x: &Vector3<f64>| {
                    let tn = tau.value(x) * frame.normal;
                    tn - tn.dot(&frame.normal) * frame.normal
                };
                let vals: Vec<Vector3<f64>> = frame.vertices.iter().map(|v| nt(v)).collect();
                let mean = (vals[0] + vals[1] + vals[2]) / 3.0;
                let var: f64 = vals.iter().map(|v| (v - mean).norm_squared()).sum::<f64>() / 3.0;
                assert!(var < 1e-12, "nt variance {var}");
            }
        }
    }

    #[test]
    fn sigma_contains_all_constant_deviatoric_matrices() {
        // constraints vanish identically on constants, so interpolating any
        // constant dev matrix must reproduce it.
        let mesh = unit_tet_mesh();
        let basis = sigma_local_basis(&mesh, 0).unwrap();
        // Build the 16x16 system of canonical moments and fit the constant.
        let target = dev_basis()[2] + 0.5 * dev_basis()[6];
        let coeffs = fit_sigma(&mesh, 0, &basis, &|_| target);
        let g = mesh.element_geometry(0);
        let mut val = Matrix3::zeros();
        for (k, tau) in basis.funcs.iter().enumerate() {
            val += coeffs[k] * tau.value(&g.centroid);
        }
        assert!((val - target).norm() < 1e-12);
    }

    /// Solve the canonical moment system (facet nt moments + element moments)
    /// for the coefficients representing `field` in the Σ basis.
    fn fit_sigma<F>(mesh: &Mesh, t: usize, basis: &SigmaElementBasis, field: &F) -> Vec<f64>
    where
        F: Fn(&Vector3<f64>) -> Matrix3<f64>,
    {
        let nt_rule = quadrature::rule_for(2, 2).unwrap();
        let vol_rule = quadrature::rule_for(3, 2).unwrap();
        let dev = dev_basis();
        let mut rows: Vec<Box<dyn Fn(&dyn Fn(&Vector3<f64>) -> Matrix3<f64>) -> f64>> = Vec::new();
        for local in 0..4 {
            let f = mesh
                .facet_id(&crate::mesh::local_facet_vertices(&mesh.tets[t], local))
                .unwrap();
            let frame = mesh.facet_frame(f);
            let pts = facet_quadrature(&frame.vertices, &nt_rule);
            for tang in [frame.tangent1, frame.tangent2] {
                let pts = pts.clone();
                let n = frame.normal;
                let area = frame.area;
                rows.push(Box::new(move |tau| {
                    let mut acc = 0.0;
                    for (x, w) in &pts {
                        acc += w * (tau(x) * n).dot(&tang);
                    }
                    acc / area
                }));
            }
        }
        let pts = volume_quadrature(mesh, t, &vol_rule);
        let vol = mesh.element_geometry(t).volume;
        for e in dev {
            let pts = pts.clone();
            rows.push(Box::new(move |tau| {
                let mut acc = 0.0;
                for (x, w) in &pts {
                    acc += w * (tau(x).component_mul(&e)).sum();
                }
                acc / vol
            }));
        }
        let n = basis.funcs.len();
        let m = DMatrix::from_fn(n, n, |i, j| {
            let tau = &basis.funcs[j];
            rows[i](&|x: &Vector3<f64>| tau.value(x))
        });
        let rhs = DVector::from_fn(n, |i, _| rows[i](&|x: &Vector3<f64>| field(x)));
        let sol = m.lu().solve(&rhs).expect("unisolvent moments");
        sol.iter().copied().collect()
    }

    #[test]
    fn dofmap_counts_and_masks() {
        let m1 = build_structured_cube(1, CubeFace::XMin).unwrap();
        assert_eq!(build_dofmap(&m1, SpaceTag::Qh).n_global, 6);
        let wh = build_dofmap(&m1, SpaceTag::Wh);
        assert_eq!(wh.n_global, 18);
        for f in 0..m1.n_facets() {
            let masked = wh.dirichlet_mask[f];
            assert_eq!(masked, m1.facet_label[f] == FacetLabel::DirichletBoundary);
        }

        let m2 = build_structured_cube(2, CubeFace::XMin).unwrap();
        assert_eq!(build_dofmap(&m2, SpaceTag::Vh).n_global, 360);
        // VhatH: no dofs on Dirichlet facets
        let vhat = build_dofmap(&m2, SpaceTag::VhatH);
        let n_dirichlet = m2
            .facet_label
            .iter()
            .filter(|&&l| l == FacetLabel::DirichletBoundary)
            .count();
        assert_eq!(vhat.n_global, 2 * (m2.n_facets() - n_dirichlet));
        for (t, tet) in m2.tets.iter().enumerate() {
            for local in 0..4 {
                let f = m2
                    .facet_id(&crate::mesh::local_facet_vertices(tet, local))
                    .unwrap();
                for k in 0..2 {
                    let dof = vhat.element_dofs[t][2 * local + k];
                    if m2.facet_label[f] == FacetLabel::DirichletBoundary {
                        assert!(dof.global.is_none());
                    } else {
                        assert!(dof.global.is_some());
                    }
                }
            }
        }
    }

    #[test]
    fn vhat_basis_frame_properties() {
        let mesh = build_structured_cube(2, CubeFace::XMin).unwrap();
        for f in 0..mesh.n_facets() {
            let frame = mesh.facet_frame(f);
            assert!(frame.tangent1.dot(&frame.normal).abs() < 1e-13);
            assert!(frame.tangent2.dot(&frame.normal).abs() < 1e-13);
            assert!((frame.tangent1.norm() - 1.0).abs() < 1e-13);
            assert!(frame.tangent1.dot(&frame.tangent2).abs() < 1e-13);
        }
        // projection of a linear tangential field onto the basis equals its
        // facet average
        let f = (0..mesh.n_facets()).find(|&f| !mesh.facet_to_tets[f].is_boundary()).unwrap();
        let frame = mesh.facet_frame(f);
        let field = |x: &Vector3<f64>| {
            let v = Vector3::new(x.y + 0.3, -x.x, 2.0 * x.z);
            v - v.dot(&frame.normal) * frame.normal
        };
        let m = vhat_facet_moments(&mesh, f, 3, field);
        let rule = quadrature::rule_for(2, 3).unwrap();
        let pts = facet_quadrature(&frame.vertices, &rule);
        let mut avg = Vector3::zeros();
        for (x, w) in &pts {
            avg += *w * field(x);
        }
        avg /= frame.area;
        let recon = m[0] * frame.tangent1 + m[1] * frame.tangent2;
        assert!((recon - avg).norm() < 1e-13);
    }

    #[test]
    fn vh_normal_trace_continuity_random_fields() {
        let mesh = build_structured_cube(2, CubeFace::XMin).unwrap();
        let dofmap = build_dofmap(&mesh, SpaceTag::Vh);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let coeffs: Vec<f64> = (0..dofmap.n_global).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rule = quadrature::rule_for(2, 3).unwrap();
        for f in 0..mesh.n_facets() {
            let adj = &mesh.facet_to_tets[f];
            if adj.is_boundary() {
                continue;
            }
            let frame = mesh.facet_frame(f);
            let mut traces: Vec<Vec<f64>> = Vec::new();
            for &(t, _) in &adj.tets {
                let basis = bdm1_local_basis(&mesh, t).unwrap();
                let mut local = P1Vec::zero();
                for (slot, dof) in dofmap.element_dofs[t].iter().enumerate() {
                    let g = dof.global.unwrap();
                    local.axpy(dof.sign * coeffs[g], &basis.funcs[slot]);
                }
                let vals: Vec<f64> = facet_quadrature(&frame.vertices, &rule)
                    .iter()
                    .map(|(x, _)| local.value(x).dot(&frame.normal))
                    .collect();
                traces.push(vals);
            }
            for (a, b) in traces[0].iter().zip(&traces[1]) {
                assert!((a - b).abs() < 1e-12, "normal jump {}", (a - b).abs());
            }
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        let verts = vec![
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        assert!(from_raw(verts, vec![[0, 1, 2, 3]], |_| FacetLabel::DirichletBoundary).is_err());
    }
}
