//! Numerical laboratory for surfaces of revolution.
//!
//! A surface of revolution is described by its profile: in arclength
//! coordinates the metric is g = dx² + a(x)²dθ², either sphere-type (a
//! vanishes at two poles) or torus-type (a periodic and positive). The
//! crate builds such metrics (including a bridged band-plus-flat torus
//! designed to trap a positive measure of geodesic directions), integrates
//! their geodesic flow, detects geodesic loops, computes Laplace
//! eigenfunctions by separation of variables, and measures spectral
//! statistics: local Weyl remainders, eigenfunction growth exponents, and
//! return-time measures.
//!
//! Modules:
//! - [`geometry`]: profile metrics and their construction/validation.
//! - [`geodesics`]: Hamiltonian flow, loop detection, loopset scans,
//!   Jacobi fields.
//! - [`spectrum`]: per-mode Sturm–Liouville eigensolves, merged spectral
//!   tables, exact analytic spectra for the flat torus and round sphere.
//! - [`weyl`]: local/global Weyl series, sup-norm functionals, growth
//!   fits, return-time measures.
//! - [`lab`]: scenario configuration, caching, report export; drives the
//!   `lab` command-line binary.

pub mod geodesics;
pub mod geometry;
pub mod lab;
pub mod spectrum;
pub mod weyl;
