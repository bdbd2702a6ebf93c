//! Real spherical harmonics up to degree 4 (16 coefficients) and their
//! Jacobian with respect to the direction components.

use crate::scalar::Real;

pub const MAX_COEFFS: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_87;
const C4: f64 = 1.092_548_430_592_079_2;
const C6A: f64 = 0.946_174_695_757_559_97;
const C6B: f64 = 0.315_391_565_252_519_99;
const C8: f64 = 0.546_274_215_296_039_59;
const C9: f64 = 0.590_043_589_926_643_52;
const C10: f64 = 2.890_611_442_640_553_8;
const C11: f64 = 0.457_045_799_464_465_72;
const C12: f64 = 0.373_176_332_590_115_4;
const C14: f64 = 1.445_305_721_320_276_9;

/// Number of basis functions for `degree` bands (degree 4 => 16).
pub const fn n_coeffs(degree: usize) -> usize {
    degree * degree
}

pub fn basis<T: Real>(d: [T; 3], out: &mut [T]) {
    let c = T::lit;
    let [x, y, z] = d;
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let all = [
        c(C0),
        -c(C1) * y,
        c(C1) * z,
        -c(C1) * x,
        c(C4) * x * y,
        -c(C4) * y * z,
        c(C6A) * z2 - c(C6B),
        -c(C4) * x * z,
        c(C8) * (x2 - y2),
        c(C9) * y * (y2 - c(3.0) * x2),
        c(C10) * x * y * z,
        c(C11) * y * (T::one() - c(5.0) * z2),
        c(C12) * z * (c(5.0) * z2 - c(3.0)),
        c(C11) * x * (T::one() - c(5.0) * z2),
        c(C14) * z * (x2 - y2),
        c(C9) * x * (c(3.0) * y2 - x2),
    ];
    let n = out.len();
    out.copy_from_slice(&all[..n]);
}

/// Accumulates `sum_k upstream[k] * d basis_k / d d` into a 3-vector.
pub fn basis_vjp<T: Real>(d: [T; 3], upstream: &[T]) -> [T; 3] {
    let c = T::lit;
    let [x, y, z] = d;
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let zero = T::zero();
    let jac: [[T; 3]; 16] = [
        [zero, zero, zero],
        [zero, -c(C1), zero],
        [zero, zero, c(C1)],
        [-c(C1), zero, zero],
        [c(C4) * y, c(C4) * x, zero],
        [zero, -c(C4) * z, -c(C4) * y],
        [zero, zero, c(2.0 * C6A) * z],
        [-c(C4) * z, zero, -c(C4) * x],
        [c(2.0 * C8) * x, -c(2.0 * C8) * y, zero],
        [-c(6.0 * C9) * x * y, c(3.0 * C9) * (y2 - x2), zero],
        [c(C10) * y * z, c(C10) * x * z, c(C10) * x * y],
        [zero, c(C11) * (T::one() - c(5.0) * z2), -c(10.0 * C11) * y * z],
        [zero, zero, c(C12) * (c(15.0) * z2 - c(3.0))],
        [c(C11) * (T::one() - c(5.0) * z2), zero, -c(10.0 * C11) * x * z],
        [c(2.0 * C14) * x * z, -c(2.0 * C14) * y * z, c(C14) * (x2 - y2)],
        [c(3.0 * C9) * (y2 - x2), c(6.0 * C9) * x * y, zero],
    ];
    let mut g = [zero; 3];
    for (row, &u) in jac.iter().zip(upstream) {
        for k in 0..3 {
            g[k] += u * row[k];
        }
    }
    g
}
