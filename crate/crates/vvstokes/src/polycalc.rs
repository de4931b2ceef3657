//! Exact multivariate polynomial arithmetic and vector calculus.
//!
//! The manufactured solution is a polynomial velocity/pressure pair whose
//! derived fields (vorticity, viscous stress, body force, boundary data) are
//! obtained here by exact coefficient-level differentiation, so no
//! hand-derivation enters the data pipeline. Polynomials also provide exact
//! integrals over tetrahedra, triangles and the unit cube, which serve as
//! quadrature-free oracles in the studies and tests.

use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fmt;

/// Dense-in-spirit multivariate polynomial in (x, y, z); coefficients are
/// stored sparsely, keyed by exponent triple.
#[derive(Clone, PartialEq)]
pub struct MultiPoly {
    terms: BTreeMap<[u8; 3], f64>,
}

impl fmt::Debug for MultiPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| format!("{c:+.4e} x^{} y^{} z^{}", e[0], e[1], e[2]))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl MultiPoly {
    pub fn zero() -> Self {
        MultiPoly { terms: BTreeMap::new() }
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term([0, 0, 0], c);
        p
    }

    /// The coordinate polynomial x, y or z (`axis` in 0..3).
    pub fn var(axis: usize) -> Self {
        let mut e = [0u8; 3];
        e[axis] = 1;
        Self::monomial(e, 1.0)
    }

    pub fn monomial(exponents: [u8; 3], coeff: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(exponents, coeff);
        p
    }

    fn add_term(&mut self, e: [u8; 3], c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(e).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&e);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest absolute coefficient; zero polynomial gives 0.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Total degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e[0] as usize + e[1] as usize + e[2] as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, *c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(*e, -*c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zero();
        }
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            out.add_term(*e, c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    /// Exact partial derivative along `axis`.
    pub fn diff(&self, axis: usize) -> Self {
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            let mut d = *e;
            d[axis] -= 1;
            out.add_term(d, c * e[axis] as f64);
        }
        out
    }

    pub fn eval(&self, p: &Vector3<f64>) -> f64 {
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            acc += c
                * p.x.powi(e[0] as i32)
                * p.y.powi(e[1] as i32)
                * p.z.powi(e[2] as i32);
        }
        acc
    }

    /// Exact integral over the unit cube (0,1)^3.
    pub fn integrate_unit_cube(&self) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c / ((e[0] as f64 + 1.0) * (e[1] as f64 + 1.0) * (e[2] as f64 + 1.0))
            })
            .sum()
    }

    /// Substitute the affine map x = origin + s*e0 + t*e1 + u*e2, returning
    /// the polynomial in (s, t, u).
    pub fn compose_affine3(
        &self,
        origin: &Vector3<f64>,
        e0: &Vector3<f64>,
        e1: &Vector3<f64>,
        e2: &Vector3<f64>,
    ) -> Self {
        let maps: [MultiPoly; 3] = std::array::from_fn(|axis| {
            let mut m = MultiPoly::constant(origin[axis]);
            m.add_term([1, 0, 0], e0[axis]);
            m.add_term([0, 1, 0], e1[axis]);
            m.add_term([0, 0, 1], e2[axis]);
            m
        });
        self.compose(&maps)
    }

    /// Substitute the affine map x = origin + s*e0 + t*e1, returning a
    /// polynomial in (s, t) (third exponent always zero).
    pub fn compose_affine2(
        &self,
        origin: &Vector3<f64>,
        e0: &Vector3<f64>,
        e1: &Vector3<f64>,
    ) -> Self {
        let maps: [MultiPoly; 3] = std::array::from_fn(|axis| {
            let mut m = MultiPoly::constant(origin[axis]);
            m.add_term([1, 0, 0], e0[axis]);
            m.add_term([0, 1, 0], e1[axis]);
            m
        });
        self.compose(&maps)
    }

    fn compose(&self, maps: &[MultiPoly; 3]) -> Self {
        // Cache powers of each substituted coordinate up to its needed degree.
        let max_e: [usize; 3] = std::array::from_fn(|a| {
            self.terms.keys().map(|e| e[a] as usize).max().unwrap_or(0)
        });
        let mut powers: [Vec<MultiPoly>; 3] =
            std::array::from_fn(|_| vec![MultiPoly::constant(1.0)]);
        for a in 0..3 {
            for k in 1..=max_e[a] {
                let next = powers[a][k - 1].mul(&maps[a]);
                powers[a].push(next);
            }
        }
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            let term = powers[0][e[0] as usize]
                .mul(&powers[1][e[1] as usize])
                .mul(&powers[2][e[2] as usize]);
            out = out.add(&term.scale(*c));
        }
        out
    }

    /// Exact integral over the tetrahedron with the given vertices.
    pub fn integrate_tet_exact(&self, v: &[Vector3<f64>; 4]) -> f64 {
        let e0 = v[1] - v[0];
        let e1 = v[2] - v[0];
        let e2 = v[3] - v[0];
        let det = e0.cross(&e1).dot(&e2);
        let q = self.compose_affine3(&v[0], &e0, &e1, &e2);
        let mut acc = 0.0;
        for (e, c) in &q.terms {
            acc += c * ref_tet_monomial_integral(e[0] as u32, e[1] as u32, e[2] as u32);
        }
        acc * det.abs()
    }

    /// Exact integral over the (planar) triangle with the given vertices.
    pub fn integrate_tri_exact(&self, v: &[Vector3<f64>; 3]) -> f64 {
        let e0 = v[1] - v[0];
        let e1 = v[2] - v[0];
        let jac = e0.cross(&e1).norm(); // = 2 * area
        let q = self.compose_affine2(&v[0], &e0, &e1);
        let mut acc = 0.0;
        for (e, c) in &q.terms {
            debug_assert_eq!(e[2], 0);
            acc += c * ref_tri_monomial_integral(e[0] as u32, e[1] as u32);
        }
        acc * jac
    }
}

/// ∫ x^a y^b z^c over the reference tetrahedron = a! b! c! / (a+b+c+3)!.
pub fn ref_tet_monomial_integral(a: u32, b: u32, c: u32) -> f64 {
    // (a+b+c+3)! / (a! b! c!) is an integer well inside u128 for the degrees
    // used here; compute it exactly and invert once.
    let mut denom: u128 = 1;
    for k in a + 1..=a + b + c + 3 {
        denom *= k as u128;
    }
    denom /= factorial_u128(b);
    denom /= factorial_u128(c);
    1.0 / denom as f64
}

/// ∫ x^a y^b over the reference triangle = a! b! / (a+b+2)!.
pub fn ref_tri_monomial_integral(a: u32, b: u32) -> f64 {
    let mut denom: u128 = 1;
    for k in a + 1..=a + b + 2 {
        denom *= k as u128;
    }
    denom /= factorial_u128(b);
    1.0 / denom as f64
}

fn factorial_u128(n: u32) -> u128 {
    (1..=n as u128).product()
}

/// Polynomial vector field.
pub type VecPoly = [MultiPoly; 3];
/// Polynomial matrix field, row-major: m[i][j] multiplies e_i (x_j-dependence
/// via the entry polynomial).
pub type MatPoly = [[MultiPoly; 3]; 3];

pub fn vec_zero() -> VecPoly {
    std::array::from_fn(|_| MultiPoly::zero())
}

pub fn mat_zero() -> MatPoly {
    std::array::from_fn(|_| vec_zero())
}

pub fn vec_eval(v: &VecPoly, p: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v[0].eval(p), v[1].eval(p), v[2].eval(p))
}

pub fn mat_eval(m: &MatPoly, p: &Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::from_fn(|i, j| m[i][j].eval(p))
}

pub fn vec_max_abs_coeff(v: &VecPoly) -> f64 {
    v.iter().fold(0.0, |m, p| m.max(p.max_abs_coeff()))
}

pub fn vec_degree(v: &VecPoly) -> usize {
    v.iter().map(|p| p.degree()).max().unwrap_or(0)
}

pub fn mat_degree(m: &MatPoly) -> usize {
    m.iter().flatten().map(|p| p.degree()).max().unwrap_or(0)
}

pub fn grad(p: &MultiPoly) -> VecPoly {
    std::array::from_fn(|a| p.diff(a))
}

pub fn div(v: &VecPoly) -> MultiPoly {
    v[0].diff(0).add(&v[1].diff(1)).add(&v[2].diff(2))
}

pub fn curl(v: &VecPoly) -> VecPoly {
    [
        v[2].diff(1).sub(&v[1].diff(2)),
        v[0].diff(2).sub(&v[2].diff(0)),
        v[1].diff(0).sub(&v[0].diff(1)),
    ]
}

/// ∇v with (∇v)_{ij} = ∂v_i/∂x_j.
pub fn grad_vec(v: &VecPoly) -> MatPoly {
    std::array::from_fn(|i| std::array::from_fn(|j| v[i].diff(j)))
}

/// Row-wise divergence of a matrix field.
pub fn div_mat(m: &MatPoly) -> VecPoly {
    std::array::from_fn(|i| m[i][0].diff(0).add(&m[i][1].diff(1)).add(&m[i][2].diff(2)))
}

/// Symmetric gradient ε(v) = (∇v + ∇vᵀ)/2.
pub fn eps(v: &VecPoly) -> MatPoly {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| v[i].diff(j).add(&v[j].diff(i)).scale(0.5))
    })
}

/// Skew matrix κ(v) with 2 κ(v) w = v × w.
pub fn kappa(v: &VecPoly) -> MatPoly {
    let z = MultiPoly::zero;
    [
        [z(), v[2].scale(-0.5), v[1].scale(0.5)],
        [v[2].scale(0.5), z(), v[0].scale(-0.5)],
        [v[1].scale(-0.5), v[0].scale(0.5), z()],
    ]
}

pub fn trace(m: &MatPoly) -> MultiPoly {
    m[0][0].add(&m[1][1]).add(&m[2][2])
}

/// Deviatoric part dev τ = τ − (trace τ / 3) I.
pub fn dev(m: &MatPoly) -> MatPoly {
    let t3 = trace(m).scale(1.0 / 3.0);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| if i == j { m[i][j].sub(&t3) } else { m[i][j].clone() })
    })
}

pub fn mat_add(a: &MatPoly, b: &MatPoly) -> MatPoly {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j].add(&b[i][j])))
}

pub fn mat_sub(a: &MatPoly, b: &MatPoly) -> MatPoly {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j].sub(&b[i][j])))
}

pub fn mat_scale(a: &MatPoly, s: f64) -> MatPoly {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][j].scale(s)))
}

pub fn vec_add(a: &VecPoly, b: &VecPoly) -> VecPoly {
    std::array::from_fn(|i| a[i].add(&b[i]))
}

pub fn vec_sub(a: &VecPoly, b: &VecPoly) -> VecPoly {
    std::array::from_fn(|i| a[i].sub(&b[i]))
}

pub fn vec_scale(a: &VecPoly, s: f64) -> VecPoly {
    std::array::from_fn(|i| a[i].scale(s))
}

/// Smooth polynomial test case: velocity is the curl of the potential
/// (ψ, ψ, ψ) with ψ = x²(x−1)² y²(y−1)² z²(z−1)², which vanishes on the whole
/// boundary of the unit cube, with pressure x⁵ + y⁵ + z⁵ − 1/2.
pub struct ManufacturedSolution {
    pub u: VecPoly,
    pub omega: VecPoly,
    pub sigma: MatPoly,
    pub pressure: MultiPoly,
    pub f: VecPoly,
    pub nu: f64,
}

/// ψ = x²(x−1)² y²(y−1)² z²(z−1)².
pub fn bump_potential() -> MultiPoly {
    let factor = |axis: usize| {
        // t²(t−1)² = t⁴ − 2t³ + t²
        let mut e4 = [0u8; 3];
        e4[axis] = 4;
        let mut e3 = [0u8; 3];
        e3[axis] = 3;
        let mut e2 = [0u8; 3];
        e2[axis] = 2;
        MultiPoly::monomial(e4, 1.0)
            .add(&MultiPoly::monomial(e3, -2.0))
            .add(&MultiPoly::monomial(e2, 1.0))
    };
    factor(0).mul(&factor(1)).mul(&factor(2))
}

impl ManufacturedSolution {
    /// Build the full data set for viscosity `nu`: u = curl(ψ,ψ,ψ),
    /// ω = curl u, σ = ν ε(u), f = −div σ + ∇p.
    pub fn build(nu: f64) -> Self {
        assert!(nu > 0.0, "viscosity must be positive");
        let psi = bump_potential();
        let pot: VecPoly = [psi.clone(), psi.clone(), psi];
        let u = curl(&pot);
        let omega = curl(&u);
        let sigma = mat_scale(&eps(&u), nu);
        let pressure = MultiPoly::monomial([5, 0, 0], 1.0)
            .add(&MultiPoly::monomial([0, 5, 0], 1.0))
            .add(&MultiPoly::monomial([0, 0, 5], 1.0))
            .add(&MultiPoly::constant(-0.5));
        let f = vec_add(&vec_scale(&div_mat(&sigma), -1.0), &grad(&pressure));

        let ms = ManufacturedSolution { u, omega, sigma, pressure, f, nu };
        // Degree audit; these drive the quadrature orders used downstream.
        assert_eq!(vec_degree(&ms.u), 11);
        assert_eq!(mat_degree(&ms.sigma), 10);
        assert_eq!(vec_degree(&ms.f), 9);
        assert_eq!(ms.pressure.degree(), 5);
        assert!(div(&ms.u).is_zero(), "div curl must vanish coefficientwise");
        ms
    }

    /// Boundary data for an outflow facet with unit normal `n`:
    /// g_nn = nᵀσn − p and g_nt = σn − (nᵀσn) n, as global polynomials to be
    /// restricted to the facet.
    pub fn neumann_data(&self, normal: &Vector3<f64>) -> (MultiPoly, VecPoly) {
        let sigma_n: VecPoly = std::array::from_fn(|i| {
            self.sigma[i][0]
                .scale(normal.x)
                .add(&self.sigma[i][1].scale(normal.y))
                .add(&self.sigma[i][2].scale(normal.z))
        });
        let sigma_nn = sigma_n[0]
            .scale(normal.x)
            .add(&sigma_n[1].scale(normal.y))
            .add(&sigma_n[2].scale(normal.z));
        let g_nn = sigma_nn.sub(&self.pressure);
        let g_nt: VecPoly = std::array::from_fn(|i| sigma_n[i].sub(&sigma_nn.scale(normal[i])));
        (g_nn, g_nt)
    }

    /// Same flow driven by f + ∇φ with pressure p + φ; kinematic fields are
    /// unchanged. Used by the pressure-robustness experiments.
    pub fn with_pressure_shift(&self, phi: &MultiPoly) -> Self {
        ManufacturedSolution {
            u: self.u.clone(),
            omega: self.omega.clone(),
            sigma: self.sigma.clone(),
            pressure: self.pressure.add(phi),
            f: vec_add(&self.f, &grad(phi)),
            nu: self.nu,
        }
    }
}
