//! Dense reference solutions for small meshes.

use fragto::fem::{element_stiffness, interpolated_stiffness};
use fragto::grid::{DensityField, Direction, DomainSpec, LoadSpec, TOProblem};
use fragto::ScalarField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Global DOFs of an element, local node order LL, LR, UR, UL.
pub fn element_dofs(d: &DomainSpec, er: usize, ec: usize, dpn: usize) -> Vec<usize> {
    let nodes = [
        d.node_id(er + 1, ec),
        d.node_id(er + 1, ec + 1),
        d.node_id(er, ec + 1),
        d.node_id(er, ec),
    ];
    nodes.iter().flat_map(|&n| (0..dpn).map(move |k| n * dpn + k)).collect()
}

pub fn dof_of(d: &DomainSpec, row: usize, col: usize, dir: Direction, dpn: usize) -> usize {
    let n = d.node_id(row, col);
    match dir {
        Direction::Vertical => n * dpn + 1,
        _ => n * dpn,
    }
}

/// Dense global stiffness matrix.
pub fn dense_stiffness(p: &TOProblem, x: &DensityField, penal: f64) -> Vec<Vec<f64>> {
    let d = &p.domain;
    let dpn = p.physics.dofs_per_node();
    let n = d.node_count() * dpn;
    let ke = element_stiffness(p.physics);
    let mut k = vec![vec![0.0; n]; n];
    for er in 0..d.height() {
        for ec in 0..d.width() {
            let s = interpolated_stiffness(x.get(er, ec), penal);
            let dofs = element_dofs(d, er, ec, dpn);
            for (a, &i) in dofs.iter().enumerate() {
                for (b, &j) in dofs.iter().enumerate() {
                    k[i][j] += s * ke.get(a, b);
                }
            }
        }
    }
    k
}

pub fn dense_load(p: &TOProblem) -> Vec<f64> {
    let d = &p.domain;
    let dpn = p.physics.dofs_per_node();
    let mut f = vec![0.0; d.node_count() * dpn];
    match &p.loads {
        LoadSpec::Nodal(entries) => {
            for e in entries {
                f[dof_of(d, e.row, e.col, e.direction, dpn)] += e.magnitude;
            }
        }
        LoadSpec::Volumetric(src) => {
            for er in 0..d.height() {
                for ec in 0..d.width() {
                    for i in element_dofs(d, er, ec, dpn) {
                        f[i] += 0.25 * src.get(er, ec);
                    }
                }
            }
        }
    }
    f
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Full nodal vector from the dense reduced system.
pub fn dense_oracle(p: &TOProblem, x: &DensityField, penal: f64) -> Vec<f64> {
    let d = &p.domain;
    let dpn = p.physics.dofs_per_node();
    let k = dense_stiffness(p, x, penal);
    let f = dense_load(p);
    let fixed: Vec<bool> = {
        let mut v = vec![false; f.len()];
        for fd in p.bc.fixed() {
            v[dof_of(d, fd.row, fd.col, fd.direction, dpn)] = true;
        }
        v
    };
    let free: Vec<usize> = (0..f.len()).filter(|&i| !fixed[i]).collect();
    let a = free.iter().map(|&i| free.iter().map(|&j| k[i][j]).collect()).collect();
    let b = free.iter().map(|&i| f[i]).collect();
    let u = gauss_solve(a, b);
    let mut full = vec![0.0; f.len()];
    for (&i, v) in free.iter().zip(u) {
        full[i] = v;
    }
    full
}

/// Relative 2-norm difference of `a` from `b`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn random_density(p: &TOProblem, seed: u64, lo: f64) -> DensityField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &p.domain;
    let values = ScalarField::from_fn(d.height(), d.width(), |r, c| {
        if d.is_passive(r, c) {
            0.0
        } else {
            rng.gen_range(lo..=1.0)
        }
    });
    DensityField::new(d.clone(), values).unwrap()
}

/// Largest interior displacement error when a `w`×`h` solid mesh has its
/// boundary nodes held at a linear field and its interior nodes loaded with
/// `−K_IB·u_B`. A mesh that passes the patch test returns roughly zero.
pub fn patch_test_error(w: usize, h: usize) -> f64 {
    use fragto::fem::assemble_and_solve;
    use fragto::grid::{BoundaryCondition, FixedDof, Physics, PointLoad};

    let domain = DomainSpec::new(w, h).unwrap();
    let u_lin = |r: usize, c: usize| {
        let (x, y) = (c as f64, (h - r) as f64);
        (1e-3 * x - 2e-3 * y + 0.5, 3e-3 * x + 1e-3 * y - 0.25)
    };
    let on_boundary = |r: usize, c: usize| r == 0 || c == 0 || r == h || c == w;
    let mut fixed = Vec::new();
    for r in 0..=h {
        for c in 0..=w {
            if on_boundary(r, c) {
                for direction in [Direction::Horizontal, Direction::Vertical] {
                    fixed.push(FixedDof {
                        row: r,
                        col: c,
                        direction,
                    });
                }
            }
        }
    }
    // Only used to assemble K for the lifted right-hand side.
    let probe = TOProblem::new(
        "patch",
        domain.clone(),
        BoundaryCondition::new(fixed.clone()),
        LoadSpec::Nodal(vec![PointLoad {
            row: 1,
            col: 1,
            direction: Direction::Vertical,
            magnitude: 1.0,
        }]),
        0.5,
        Physics::Elastic,
    )
    .unwrap();
    let solid = DensityField::new(probe.domain.clone(), ScalarField::filled(h, w, 1.0)).unwrap();
    let k = dense_stiffness(&probe, &solid, 3.0);
    let d = &probe.domain;
    let mut boundary_u = vec![0.0; d.node_count() * 2];
    for r in 0..=h {
        for c in 0..=w {
            if on_boundary(r, c) {
                let (ux, uy) = u_lin(r, c);
                boundary_u[d.node_id(r, c) * 2] = ux;
                boundary_u[d.node_id(r, c) * 2 + 1] = uy;
            }
        }
    }
    let mut loads = Vec::new();
    for r in 1..h {
        for c in 1..w {
            for (k_dof, direction) in [(0, Direction::Horizontal), (1, Direction::Vertical)] {
                let i = d.node_id(r, c) * 2 + k_dof;
                let f: f64 = -k[i].iter().zip(&boundary_u).map(|(a, b)| a * b).sum::<f64>();
                loads.push(PointLoad {
                    row: r,
                    col: c,
                    direction,
                    magnitude: f,
                });
            }
        }
    }
    let p = TOProblem::new(
        "patch",
        domain,
        BoundaryCondition::new(fixed),
        LoadSpec::Nodal(loads),
        0.5,
        Physics::Elastic,
    )
    .unwrap();
    let sol = assemble_and_solve(&p, &solid, 3.0).unwrap();
    let mut worst = 0.0f64;
    for r in 1..h {
        for c in 1..w {
            let (ux, uy) = u_lin(r, c);
            let n = d.node_id(r, c);
            worst = worst
                .max((sol.nodal[2 * n] - ux).abs())
                .max((sol.nodal[2 * n + 1] - uy).abs());
        }
    }
    worst
}
