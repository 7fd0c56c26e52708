//! Bilinear quadrilateral element matrices for a unit square of unit material.
//!
//! Local node order is counterclockwise from the lower-left corner: LL, LR,
//! UR, UL. Elastic matrices interleave `(ux, uy)` per node.

use crate::grid::{Physics, CONDUCTIVITY, POISSON_RATIO, YOUNGS_MODULUS};

/// Dense symmetric element matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl ElementMatrix {
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `vᵀ K v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.size);
        let n = self.size;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.entries[i * n..(i + 1) * n];
            let kv: f64 = row.iter().zip(v).map(|(k, x)| k * x).sum();
            acc += v[i] * kv;
        }
        acc
    }
}

const NODE_XI: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Shape-function gradients in physical coordinates at `(xi, eta)` for the
/// unit square (the Jacobian is `diag(1/2, 1/2)`).
fn shape_gradients(xi: f64, eta: f64) -> [(f64, f64); 4] {
    let mut g = [(0.0, 0.0); 4];
    for (a, &(xa, ya)) in NODE_XI.iter().enumerate() {
        let dxi = 0.25 * xa * (1.0 + eta * ya);
        let deta = 0.25 * ya * (1.0 + xi * xa);
        g[a] = (2.0 * dxi, 2.0 * deta);
    }
    g
}

/// 2×2 Gauss-integrated element matrix for the given physics.
pub fn element_stiffness(physics: Physics) -> ElementMatrix {
    let gp = 1.0 / 3f64.sqrt();
    let points = [(-gp, -gp), (gp, -gp), (gp, gp), (-gp, gp)];
    // Unit weights times det J.
    let dv = 0.25;
    match physics {
        Physics::Thermal => {
            let mut k = vec![0.0; 16];
            for &(xi, eta) in &points {
                let g = shape_gradients(xi, eta);
                for a in 0..4 {
                    for b in 0..4 {
                        k[a * 4 + b] += CONDUCTIVITY * (g[a].0 * g[b].0 + g[a].1 * g[b].1) * dv;
                    }
                }
            }
            ElementMatrix { size: 4, entries: k }
        }
        Physics::Elastic => {
            let (e, nu) = (YOUNGS_MODULUS, POISSON_RATIO);
            let f = e / (1.0 - nu * nu);
            let d = [[f, f * nu, 0.0], [f * nu, f, 0.0], [0.0, 0.0, f * (1.0 - nu) / 2.0]];
            let mut k = vec![0.0; 64];
            for &(xi, eta) in &points {
                let g = shape_gradients(xi, eta);
                let mut b = [[0.0; 8]; 3];
                for a in 0..4 {
                    b[0][2 * a] = g[a].0;
                    b[1][2 * a + 1] = g[a].1;
                    b[2][2 * a] = g[a].1;
                    b[2][2 * a + 1] = g[a].0;
                }
                for i in 0..8 {
                    for j in 0..8 {
                        let mut s = 0.0;
                        for p in 0..3 {
                            for q in 0..3 {
                                s += b[p][i] * d[p][q] * b[q][j];
                            }
                        }
                        k[i * 8 + j] += s * dv;
                    }
                }
            }
            ElementMatrix { size: 8, entries: k }
        }
    }
}
