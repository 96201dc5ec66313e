//! Minimal fixed-size linear algebra for the 2x2 systems in this crate.
//!
//! Matrices are row-major `[f64; 4]`: `[a11, a12, a21, a22]`. Vectors are
//! `[f64; 2]`. The state spaces here never exceed dimension two, so this
//! beats pulling in a general-purpose linear algebra dependency.

pub type Mat2 = [f64; 4];
pub type Vec2 = [f64; 2];

pub const MAT2_ZERO: Mat2 = [0.0; 4];

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

pub fn mat2_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn mat2_vec(a: &Mat2, v: &Vec2) -> Vec2 {
    [a[0] * v[0] + a[1] * v[1], a[2] * v[0] + a[3] * v[1]]
}

/// Diagonal matrix from two entries.
pub fn diag(d1: f64, d2: f64) -> Mat2 {
    [d1, 0.0, 0.0, d2]
}
