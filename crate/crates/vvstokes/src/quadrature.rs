//! Quadrature rules on the reference triangle and tetrahedron.
//!
//! Rules are built by a collapsed (Duffy) tensor product of Gauss-Legendre
//! rules, which keeps all weights positive. The Gauss orders are chosen so a
//! requested total polynomial degree is integrated exactly, including the
//! extra powers introduced by the collapsing map.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

/// Highest exactness degree a rule can be requested for. The most demanding
/// integral in the solver is a degree-11 facet integral of manufactured
/// boundary data; 12 leaves headroom.
pub const MAX_DEGREE: usize = 12;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("requested exactness degree {0} exceeds the supported maximum {MAX_DEGREE}")]
    DegreeTooHigh(usize),
    #[error("simplex dimension {0} is not supported (only 2 and 3)")]
    BadDimension(usize),
}

/// Quadrature rule on the reference simplex: the unit triangle
/// {x,y ≥ 0, x+y ≤ 1} or the unit tetrahedron {x,y,z ≥ 0, x+y+z ≤ 1}.
#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Reference coordinates; the third entry is zero for triangle rules.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub exact_degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Return (and cache) a rule exact for all polynomials of total degree
/// ≤ `degree` on the simplex of dimension `simplex_dim`.
pub fn rule_for(simplex_dim: usize, degree: usize) -> Result<Arc<QuadRule>, QuadratureError> {
    if degree > MAX_DEGREE {
        return Err(QuadratureError::DegreeTooHigh(degree));
    }
    if simplex_dim != 2 && simplex_dim != 3 {
        return Err(QuadratureError::BadDimension(simplex_dim));
    }
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<QuadRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    let rule = guard
        .entry((simplex_dim, degree))
        .or_insert_with(|| {
            Arc::new(if simplex_dim == 3 {
                duffy_tet(degree)
            } else {
                duffy_tri(degree)
            })
        })
        .clone();
    Ok(rule)
}

/// Gauss-Legendre nodes/weights on (0,1), exact to degree 2n-1.
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on Legendre polynomials over [-1,1], then map to (0,1).
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        xs[i] = 0.5 * (1.0 - x); // descending cos order; map to (0,1)
        ws[i] = 1.0 / ((1.0 - x * x) * dp * dp); // = w/2 with w the [-1,1] weight
    }
    (xs, ws)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tetrahedron rule via x = a, y = b(1-a), z = c(1-a)(1-b) with Jacobian
/// (1-a)²(1-b). A degree-d integrand has degree ≤ d+2, d+1, d in a, b, c.
fn duffy_tet(degree: usize) -> QuadRule {
    let na = (degree + 2) / 2 + 1;
    let nb = (degree + 1) / 2 + 1;
    let nc = degree / 2 + 1;
    let (xa, wa) = gauss_legendre_unit(na);
    let (xb, wb) = gauss_legendre_unit(nb);
    let (xc, wc) = gauss_legendre_unit(nc);
    let mut points = Vec::with_capacity(na * nb * nc);
    let mut weights = Vec::with_capacity(na * nb * nc);
    for (i, &a) in xa.iter().enumerate() {
        for (j, &b) in xb.iter().enumerate() {
            for (k, &c) in xc.iter().enumerate() {
                let x = a;
                let y = b * (1.0 - a);
                let z = c * (1.0 - a) * (1.0 - b);
                let jac = (1.0 - a) * (1.0 - a) * (1.0 - b);
                points.push([x, y, z]);
                weights.push(wa[i] * wb[j] * wc[k] * jac);
            }
        }
    }
    QuadRule { points, weights, exact_degree: degree }
}

/// Triangle rule via x = a, y = b(1-a) with Jacobian (1-a).
fn duffy_tri(degree: usize) -> QuadRule {
    let na = (degree + 1) / 2 + 1;
    let nb = degree / 2 + 1;
    let (xa, wa) = gauss_legendre_unit(na);
    let (xb, wb) = gauss_legendre_unit(nb);
    let mut points = Vec::with_capacity(na * nb);
    let mut weights = Vec::with_capacity(na * nb);
    for (i, &a) in xa.iter().enumerate() {
        for (j, &b) in xb.iter().enumerate() {
            points.push([a, b * (1.0 - a), 0.0]);
            weights.push(wa[i] * wb[j] * (1.0 - a));
        }
    }
    QuadRule { points, weights, exact_degree: degree }
}
