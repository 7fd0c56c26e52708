use fragto::fem::{assemble_and_solve, element_stiffness, interpolated_stiffness};
use fragto::grid::{
    make_problem, uniform_density, BoundaryCondition, DensityField, Direction, DomainSpec, FixedDof, InitialDensity,
    LoadSpec, MirrorAxis, Physics, PointLoad, ProblemKind, TOProblem,
};
use fragto::ScalarField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Global DOFs of an element, local node order LL, LR, UR, UL.
fn element_dofs(d: &DomainSpec, er: usize, ec: usize, dpn: usize) -> Vec<usize> {
    let nodes = [
        d.node_id(er + 1, ec),
        d.node_id(er + 1, ec + 1),
        d.node_id(er, ec + 1),
        d.node_id(er, ec),
    ];
    nodes.iter().flat_map(|&n| (0..dpn).map(move |k| n * dpn + k)).collect()
}

fn dof_of(d: &DomainSpec, row: usize, col: usize, dir: Direction, dpn: usize) -> usize {
    let n = d.node_id(row, col);
    match dir {
        Direction::Vertical => n * dpn + 1,
        _ => n * dpn,
    }
}

/// Dense global stiffness matrix.
fn dense_stiffness(p: &TOProblem, x: &DensityField, penal: f64) -> Vec<Vec<f64>> {
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

fn dense_load(p: &TOProblem) -> Vec<f64> {
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
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
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
fn dense_oracle(p: &TOProblem, x: &DensityField, penal: f64) -> Vec<f64> {
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

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn random_density(p: &TOProblem, seed: u64, lo: f64) -> DensityField {
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

#[test]
fn smallest_mesh_matches_dense_solve() {
    let domain = DomainSpec::new(2, 2).unwrap();
    let bc = BoundaryCondition::new(
        (0..=2)
            .flat_map(|row| {
                [Direction::Horizontal, Direction::Vertical].map(|direction| FixedDof { row, col: 0, direction })
            })
            .collect(),
    );
    let loads = LoadSpec::Nodal(vec![PointLoad {
        row: 0,
        col: 2,
        direction: Direction::Vertical,
        magnitude: -1.0,
    }]);
    let p = TOProblem::new("tip", domain, bc, loads, 0.5, Physics::Elastic).unwrap();
    let x = DensityField::new(p.domain.clone(), ScalarField::filled(2, 2, 1.0)).unwrap();
    let sol = assemble_and_solve(&p, &x, 3.0).unwrap();
    let u = dense_oracle(&p, &x, 3.0);
    assert!(rel_diff(&sol.nodal, &u) < 1e-12);
    let f = dense_load(&p);
    let half_uf = 0.5 * u.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
    assert!((sol.compliance - half_uf).abs() / half_uf < 1e-12);
}

#[test]
fn random_density_cantilever_matches_dense_solve() {
    let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
    for seed in 0..3 {
        let x = random_density(&p, seed, 0.2);
        let sol = assemble_and_solve(&p, &x, 3.0).unwrap();
        let u = dense_oracle(&p, &x, 3.0);
        assert!(rel_diff(&sol.nodal, &u) < 1e-8, "seed {seed}");
    }
}

#[test]
fn sixteen_by_sixteen_meshes_match_dense_solve() {
    for kind in [
        ProblemKind::CantileverSingle,
        ProblemKind::LBeam,
        ProblemKind::ThermalSmallSink,
    ] {
        let p = make_problem(kind, 16, 16, 1).unwrap();
        let x = random_density(&p, 7, 0.3);
        let sol = assemble_and_solve(&p, &x, 3.0).unwrap();
        let u = dense_oracle(&p, &x, 3.0);
        assert!(rel_diff(&sol.nodal, &u) < 1e-8, "{kind}");
        // Compliance convention: half of UᵀF for elasticity, TᵀF for heat.
        let f = dense_load(&p);
        let uf: f64 = u.iter().zip(&f).map(|(a, b)| a * b).sum();
        let expected = if p.physics == Physics::Elastic { 0.5 * uf } else { uf };
        assert!((sol.compliance - expected).abs() / expected < 1e-8, "{kind}");
    }
}

#[test]
fn linear_field_patch_test() {
    let (w, h) = (6, 5);
    let domain = DomainSpec::new(w, h).unwrap();
    let u_lin = |r: usize, c: usize| {
        let (x, y) = (c as f64, (h - r) as f64);
        (1e-3 * x - 2e-3 * y + 0.5, 3e-3 * x + 1e-3 * y - 0.25)
    };
    let on_boundary = |r: usize, c: usize| r == 0 || c == 0 || r == h || c == w;

    // Only used to assemble K for the lifted right-hand side.
    let mut fixed = Vec::new();
    for r in 0..=h {
        for c in 0..=w {
            if on_boundary(r, c) {
                fixed.push(FixedDof {
                    row: r,
                    col: c,
                    direction: Direction::Horizontal,
                });
                fixed.push(FixedDof {
                    row: r,
                    col: c,
                    direction: Direction::Vertical,
                });
            }
        }
    }
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
    // Interior loads -K_IB u_B reproduce the linear field if the mesh passes.
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
    for r in 1..h {
        for c in 1..w {
            let (ux, uy) = u_lin(r, c);
            let n = d.node_id(r, c);
            assert!((sol.nodal[2 * n] - ux).abs() < 1e-10, "ux at ({r},{c})");
            assert!((sol.nodal[2 * n + 1] - uy).abs() < 1e-10, "uy at ({r},{c})");
        }
    }
}

#[test]
fn mirrored_problems_give_mirrored_energy() {
    let cases = [
        (ProblemKind::Bridge, 16, 8, MirrorAxis::LeftRight),
        (ProblemKind::CantileverSingle, 12, 8, MirrorAxis::TopBottom),
    ];
    for (kind, w, h, axis) in cases {
        let p = make_problem(kind, w, h, 1).unwrap().mirror_symmetrized(axis).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        let e = assemble_and_solve(&p, &x, 3.0).unwrap().element_energy;
        let flipped = match axis {
            MirrorAxis::LeftRight => e.flip_horizontal(),
            MirrorAxis::TopBottom => e.flip_vertical(),
        };
        let scale = e.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0, "{kind}");
        assert!(e.max_abs_diff(&flipped) / scale < 1e-8, "{kind}");
    }
}

#[test]
fn adding_material_never_raises_compliance() {
    let p = make_problem(ProblemKind::CantileverSingle, 8, 8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let x = random_density(&p, 100 + trial, 0.2);
        let c0 = assemble_and_solve(&p, &x, 3.0).unwrap().compliance;
        for _ in 0..4 {
            let (r, c) = (rng.gen_range(0..8), rng.gen_range(0..8));
            let mut v = x.values().clone();
            let bumped = (v.get(r, c) + 0.3).min(1.0);
            v.set(r, c, bumped);
            let y = DensityField::new(p.domain.clone(), v).unwrap();
            let c1 = assemble_and_solve(&p, &y, 3.0).unwrap().compliance;
            assert!(c1 <= c0 * (1.0 + 1e-10), "trial {trial} element ({r},{c})");
        }
    }
}
