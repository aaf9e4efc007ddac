//! Generalized Eshelby tensors for transient and time-harmonic heat conduction.
//!
//! The crate evaluates domain integrals of the transient Green's function (and
//! of the Helmholtz kernel) over polyhedral, spherical and ellipsoidal
//! inclusions with polynomial eigen-fields, and uses them in an
//! equivalent-inclusion solver for a spherical inhomogeneity.
//!
//! Module map:
//! - [`specfun`]: erf, incomplete gamma, hypergeometric families, adaptive quadrature
//! - [`geometry`]: polyhedra, mesh IO, transformed coordinates, materials
//! - [`polyint`]: exact polyhedral moments ∫|x-x'|^p dx' and their derivatives
//! - [`kernels_transient`]: spatial and time Eshelby tensors for polyhedra
//! - [`kernels_harmonic`]: Helmholtz-potential tensors
//! - [`kernels_sphere_ellipsoid`]: closed-form sphere tensors, ellipsoid shell integral
//! - [`oracle`]: brute-force quadrature and Fourier-grid reference values
//! - [`eim`]: equivalent inclusion method for a sphere in a slab

// `!(x > 0.0)` guards are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the tensor notation
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod eim;
pub mod geometry;
pub mod kernels_harmonic;
pub mod kernels_sphere_ellipsoid;
pub mod kernels_transient;
pub mod oracle;
pub mod par;
pub mod polyint;
pub mod specfun;
pub mod tps;

pub use geometry::{Material, Polyhedron};
pub use par::Exec;
pub use tps::{Scalar, Tps};
