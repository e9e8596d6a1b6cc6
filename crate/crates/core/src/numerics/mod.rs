//! Small numerical kernels shared by the solver and the diagnostics.

pub mod interp;
pub mod quad;
pub mod stencil;
