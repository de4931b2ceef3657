//! Lowest-order divergence-conforming velocity-vorticity discretizations of
//! the stationary Stokes equations on the unit cube.
//!
//! Two methods share the same kinematic unknowns (BDM1 velocity, facet
//! tangential traces, RT0 vorticity) with six coupling dofs per facet:
//!
//! * an HDG scheme built on the symmetric-gradient bilinear form with
//!   tangential-jump stabilization and a normal vorticity penalty
//!   ([`hdg`]), and
//! * a hybridized mass-conserving mixed-stress (MCS) scheme with the
//!   deviatoric viscous stress as an element-local unknown that is statically
//!   condensed ([`mcs`]).
//!
//! Both deliver exactly divergence-free, pressure-robust velocities. The
//! [`study`] module carries the manufactured-solution convergence studies,
//! the discrete Korn / norm-equivalence verification suites, and the
//! condition-number comparison of the two kinematic blocks.

pub mod fespaces;
pub mod hdg;
pub mod interp;
pub mod mcs;
pub mod mesh;
pub mod polycalc;
pub mod quadrature;
pub mod sparsela;
pub mod study;
