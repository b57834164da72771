//! Counting and equidistribution of divergent geodesics on the modular
//! surface and on the quotient tree `PGL_2(F_q[Y]) \ T_{q+1}`.

pub mod ffpoly;
pub mod modular;
pub mod stats;
pub mod tree;
