//! Fixed-point solver library built around the alternating Anderson-Picard
//! (AAP) method, together with Picard iteration, classical and restarted
//! Anderson acceleration, and Jacobian-free Newton-GMRES.
//!
//! The crate is organized as:
//!
//! - [`linalg`]: dense kernels (pivoted-QR least squares, one-sided Jacobi
//!   SVD, Arnoldi-GMRES, Lawson-Hanson NNLS) shared by solvers and
//!   diagnostics.
//! - [`fixedpoint`]: the solver family over a shared [`fixedpoint::FixedPointMap`]
//!   abstraction, exposing the multisecant-GMRES view of the AAP step
//!   (direction, residual, approximate Jacobian inverse).
//! - [`diagnostics`]: per-iteration theoretical quantities (optimization
//!   gain, multisecant error, Jacobian-GMRES gain, Krylov conditioning).
//! - [`problems`]: concrete maps (logistic-regression gradient descent,
//!   NMF via alternating nonnegative least squares, affine and quadratic
//!   synthetic maps with known smoothness constants).
//! - [`ingest`]: LIBSVM parsing, seeded generators, and CSV/JSON trace
//!   persistence.

pub mod diagnostics;
pub mod fixedpoint;
pub mod ingest;
pub mod linalg;
pub mod problems;
