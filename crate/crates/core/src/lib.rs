//! Quasi-copulas built from transformation matrices.
//!
//! A valid matrix carves the unit square (or hypercube) into cells and induces
//! a mass-redistribution operator on quasi-copulas whose unique fixed point
//! this crate evaluates exactly at lattice corners and to controlled floating
//! precision elsewhere. On top of that sit the fractal-support machinery
//! (iterated map enumeration, rasterization) and the dimension solvers
//! (similarity equation, one-parameter family, box counting).

pub mod eval2d;
pub mod ifs_support;
pub mod multi_nd;
pub mod qt_matrix;
pub mod rational;
pub mod render;

pub use eval2d::{
    apply_transform, volume, AffineCoefficients, AxiomReport, CellPath, EvalError, Evaluable,
    FixedPointEvaluator, IteratedTransform, MinCopula, Pi, Rect, WCopula,
};
pub use ifs_support::{
    box_counting_estimate, enumerate_support, family_r_of_s, family_s_of_r, solve_moran,
    BoxCountFit, DimensionError, DimensionReport, OccupancyGrid, SupportApprox, SupportError,
};
pub use multi_nd::{
    apply_transform_nd, apply_transform_nd_exact, lattice_eval, make_cube_matrix,
    make_step_matrix, nd_box_volume, solve_dim_nd, validate_nd, EvaluableNd, LatticeValues,
    MinNd, MultiMatrix, NdError, PiNd, TransformedNd,
};
pub use qt_matrix::{MatrixError, PartitionPair, QtMatrix2};
pub use rational::Rational;
pub use render::{
    encode_pgm, encode_ppm, rasterize_approx, rasterize_support, read_pnm, PixelState,
    PnmImage, RenderError, SignedMask,
};
