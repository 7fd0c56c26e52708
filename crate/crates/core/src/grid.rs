//! Design domains, density fields, boundary conditions and the benchmark
//! problem catalog.
//!
//! Node coordinates are `(node_row, node_col)` on the
//! `(height + 1) × (width + 1)` node grid, row 0 at the top. Element `(r, c)`
//! spans nodes `(r, c)` through `(r + 1, c + 1)`. Vertical magnitudes are
//! positive upward.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Young's modulus of solid material.
pub const YOUNGS_MODULUS: f64 = 1.0;
/// Poisson ratio of solid material.
pub const POISSON_RATIO: f64 = 0.3;
/// Conductivity of solid material.
pub const CONDUCTIVITY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    width: usize,
    height: usize,
    passive: Vec<bool>,
}

impl DomainSpec {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_passive(width, height, vec![false; width * height])
    }

    /// `passive` is row-major with `height` rows; `true` marks an element that
    /// is permanently void.
    pub fn with_passive(width: usize, height: usize, passive: Vec<bool>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Config(format!(
                "domain must be at least 2x2 elements, got {width}x{height}"
            )));
        }
        if passive.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} mask entries", width * height),
                got: format!("{}", passive.len()),
            });
        }
        Ok(Self { width, height, passive })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn elements(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_passive(&self, row: usize, col: usize) -> bool {
        self.passive[row * self.width + col]
    }

    pub fn passive_mask(&self) -> &[bool] {
        &self.passive
    }

    pub fn active_count(&self) -> usize {
        self.passive.iter().filter(|p| !**p).count()
    }

    #[inline]
    pub fn node_rows(&self) -> usize {
        self.height + 1
    }

    #[inline]
    pub fn node_cols(&self) -> usize {
        self.width + 1
    }

    #[inline]
    pub fn node_id(&self, row: usize, col: usize) -> usize {
        row * (self.width + 1) + col
    }

    pub fn node_count(&self) -> usize {
        (self.width + 1) * (self.height + 1)
    }

    /// Block-coarsened domain: a coarse element is passive only when every
    /// fine element of its block is.
    pub fn coarsen(&self, ratio: usize) -> Result<DomainSpec> {
        if !self.width.is_multiple_of(ratio) {
            return Err(Error::NotDivisible {
                len: self.width,
                by: ratio,
            });
        }
        if !self.height.is_multiple_of(ratio) {
            return Err(Error::NotDivisible {
                len: self.height,
                by: ratio,
            });
        }
        let (cw, ch) = (self.width / ratio, self.height / ratio);
        let mut passive = Vec::with_capacity(cw * ch);
        for r in 0..ch {
            for c in 0..cw {
                let all = (0..ratio).all(|i| (0..ratio).all(|j| self.is_passive(r * ratio + i, c * ratio + j)));
                passive.push(all);
            }
        }
        DomainSpec::with_passive(cw, ch, passive)
    }
}

/// Elementwise design variable with the owning domain's passive mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    domain: Arc<DomainSpec>,
    values: ScalarField,
}

impl DensityField {
    /// Validates the range `[0, 1]` and that passive elements are exactly 0.
    pub fn new(domain: Arc<DomainSpec>, values: ScalarField) -> Result<Self> {
        values.check_shape(domain.height(), domain.width())?;
        for r in 0..domain.height() {
            for c in 0..domain.width() {
                let v = values.get(r, c);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("density {v} at ({r}, {c}) outside [0, 1]")));
                }
                if domain.is_passive(r, c) && v != 0.0 {
                    return Err(Error::Config(format!("passive element ({r}, {c}) has density {v}")));
                }
            }
        }
        Ok(Self { domain, values })
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_parts(domain: Arc<DomainSpec>, values: ScalarField) -> Self {
        debug_assert_eq!(values.shape(), (domain.height(), domain.width()));
        debug_assert!(values.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        Self { domain, values }
    }

    pub fn domain(&self) -> &Arc<DomainSpec> {
        &self.domain
    }

    pub fn values(&self) -> &ScalarField {
        &self.values
    }

    pub fn into_values(self) -> ScalarField {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values.get(row, col)
    }

    /// Sum of densities over active elements.
    pub fn volume(&self) -> f64 {
        self.values
            .as_slice()
            .iter()
            .zip(self.domain.passive_mask())
            .filter(|(_, p)| !**p)
            .map(|(v, _)| v)
            .sum()
    }

    /// Volume relative to the active element count.
    pub fn volume_fraction(&self) -> f64 {
        self.volume() / self.domain.active_count() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Horizontal,
    Vertical,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FixedDof {
    pub row: usize,
    pub col: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    fixed: Vec<FixedDof>,
}

impl BoundaryCondition {
    pub fn new(mut fixed: Vec<FixedDof>) -> Self {
        fixed.sort();
        fixed.dedup();
        Self { fixed }
    }

    pub fn fixed(&self) -> &[FixedDof] {
        &self.fixed
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLoad {
    pub row: usize,
    pub col: usize,
    pub direction: Direction,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadSpec {
    /// Nodal forces for elasticity.
    Nodal(Vec<PointLoad>),
    /// Per-element volumetric heat source for conduction.
    Volumetric(ScalarField),
}

impl LoadSpec {
    /// Sum of absolute nodal magnitudes, or of the source grid.
    pub fn total_magnitude(&self) -> f64 {
        match self {
            LoadSpec::Nodal(entries) => entries.iter().map(|p| p.magnitude.abs()).sum(),
            LoadSpec::Volumetric(src) => src.as_slice().iter().map(|v| v.abs()).sum(),
        }
    }

    pub fn scaled(&self, factor: f64) -> LoadSpec {
        match self {
            LoadSpec::Nodal(entries) => LoadSpec::Nodal(
                entries
                    .iter()
                    .map(|p| PointLoad {
                        magnitude: p.magnitude * factor,
                        ..*p
                    })
                    .collect(),
            ),
            LoadSpec::Volumetric(src) => LoadSpec::Volumetric(src.map(|v| v * factor)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Physics {
    Elastic,
    Thermal,
}

impl Physics {
    pub fn dofs_per_node(self) -> usize {
        match self {
            Physics::Elastic => 2,
            Physics::Thermal => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TOProblem {
    pub name: String,
    pub domain: Arc<DomainSpec>,
    pub bc: BoundaryCondition,
    pub loads: LoadSpec,
    pub volume_fraction: f64,
    pub physics: Physics,
}

impl TOProblem {
    pub fn new(
        name: impl Into<String>,
        domain: DomainSpec,
        bc: BoundaryCondition,
        loads: LoadSpec,
        volume_fraction: f64,
        physics: Physics,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            domain: Arc::new(domain),
            bc,
            loads,
            volume_fraction,
            physics,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(Error::Config(format!(
                "volume fraction {} outside (0, 1)",
                self.volume_fraction
            )));
        }
        let (nr, nc) = (self.domain.node_rows(), self.domain.node_cols());
        for f in self.bc.fixed() {
            if f.row >= nr || f.col >= nc {
                return Err(Error::Config(format!(
                    "fixed node ({}, {}) outside the {nr}x{nc} node grid",
                    f.row, f.col
                )));
            }
            let ok = match self.physics {
                Physics::Elastic => f.direction != Direction::Temperature,
                Physics::Thermal => f.direction == Direction::Temperature,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "direction {:?} does not match {:?} physics",
                    f.direction, self.physics
                )));
            }
        }
        match (&self.loads, self.physics) {
            (LoadSpec::Nodal(entries), Physics::Elastic) => {
                for p in entries {
                    if p.row >= nr || p.col >= nc || p.direction == Direction::Temperature {
                        return Err(Error::Config(format!("bad load entry at ({}, {})", p.row, p.col)));
                    }
                }
                let total = self.loads.total_magnitude();
                if !(total.is_finite() && total > 0.0) {
                    return Err(Error::Config(format!("total load magnitude {total}")));
                }
            }
            (LoadSpec::Volumetric(src), Physics::Thermal) => {
                src.check_shape(self.domain.height(), self.domain.width())?;
                if src.as_slice().iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::Config("negative heat source".into()));
                }
            }
            _ => return Err(Error::Config("load kind does not match the problem physics".into())),
        }
        Ok(())
    }

    /// Number of active (non-passive) elements times the volume fraction.
    pub fn target_volume(&self) -> f64 {
        self.volume_fraction * self.domain.active_count() as f64
    }

    /// Union of the problem with its mirror image across the given axis, with
    /// loads halved on each side so the total magnitude is unchanged. The
    /// result is invariant under the reflection, so its optimal energy and
    /// density fields are mirror symmetric.
    pub fn mirror_symmetrized(&self, axis: MirrorAxis) -> Result<TOProblem> {
        let d = &self.domain;
        let (h, w) = (d.height(), d.width());
        let reflect_node = |r: usize, c: usize| match axis {
            MirrorAxis::TopBottom => (h - r, c),
            MirrorAxis::LeftRight => (r, w - c),
        };
        let mut passive = d.passive_mask().to_vec();
        for r in 0..h {
            for c in 0..w {
                let (mr, mc) = match axis {
                    MirrorAxis::TopBottom => (h - 1 - r, c),
                    MirrorAxis::LeftRight => (r, w - 1 - c),
                };
                if d.is_passive(mr, mc) {
                    passive[r * w + c] = true;
                }
            }
        }
        let mut fixed = self.bc.fixed().to_vec();
        for f in self.bc.fixed() {
            let (row, col) = reflect_node(f.row, f.col);
            fixed.push(FixedDof { row, col, ..*f });
        }
        let loads = match &self.loads {
            LoadSpec::Nodal(entries) => {
                let mut out = Vec::with_capacity(entries.len() * 2);
                for p in entries {
                    out.push(PointLoad {
                        magnitude: 0.5 * p.magnitude,
                        ..*p
                    });
                    let (row, col) = reflect_node(p.row, p.col);
                    let flips = matches!(
                        (axis, p.direction),
                        (MirrorAxis::TopBottom, Direction::Vertical) | (MirrorAxis::LeftRight, Direction::Horizontal)
                    );
                    let sign = if flips { -1.0 } else { 1.0 };
                    out.push(PointLoad {
                        row,
                        col,
                        direction: p.direction,
                        magnitude: 0.5 * sign * p.magnitude,
                    });
                }
                LoadSpec::Nodal(out)
            }
            LoadSpec::Volumetric(src) => {
                let mirrored = match axis {
                    MirrorAxis::TopBottom => src.flip_vertical(),
                    MirrorAxis::LeftRight => src.flip_horizontal(),
                };
                LoadSpec::Volumetric(ScalarField::from_fn(h, w, |r, c| {
                    0.5 * (src.get(r, c) + mirrored.get(r, c))
                }))
            }
        };
        TOProblem::new(
            format!("{}_mirrored", self.name),
            DomainSpec::with_passive(w, h, passive)?,
            BoundaryCondition::new(fixed),
            loads,
            self.volume_fraction,
            self.physics,
        )
    }

    /// The same problem on a mesh `ratio` times coarser. Supports and nodal
    /// loads move to the nearest coarse node (loads landing on the same node
    /// add up), and heat sources are summed over each block, so total loads
    /// are preserved.
    pub fn coarsened(&self, ratio: usize) -> Result<TOProblem> {
        let domain = self.domain.coarsen(ratio)?;
        let near = |i: usize| (i + ratio / 2) / ratio;
        let fixed = self
            .bc
            .fixed()
            .iter()
            .map(|f| FixedDof {
                row: near(f.row),
                col: near(f.col),
                direction: f.direction,
            })
            .collect();
        let loads = match &self.loads {
            LoadSpec::Nodal(entries) => {
                let mut merged: std::collections::BTreeMap<(usize, usize, Direction), f64> =
                    std::collections::BTreeMap::new();
                for p in entries {
                    *merged.entry((near(p.row), near(p.col), p.direction)).or_insert(0.0) += p.magnitude;
                }
                LoadSpec::Nodal(
                    merged
                        .into_iter()
                        .map(|((row, col, direction), magnitude)| PointLoad {
                            row,
                            col,
                            direction,
                            magnitude,
                        })
                        .collect(),
                )
            }
            LoadSpec::Volumetric(src) => {
                let (ch, cw) = (domain.height(), domain.width());
                let mut sum = ScalarField::zeros(ch, cw);
                for r in 0..src.rows() {
                    for c in 0..src.cols() {
                        let k = (r / ratio, c / ratio);
                        sum.set(k.0, k.1, sum.get(k.0, k.1) + src.get(r, c));
                    }
                }
                LoadSpec::Volumetric(sum)
            }
        };
        TOProblem::new(
            format!("{}_coarse", self.name),
            domain,
            BoundaryCondition::new(fixed),
            loads,
            self.volume_fraction,
            self.physics,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MirrorAxis {
    TopBottom,
    LeftRight,
}

/// Benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    CantileverSingle,
    CantileverMulti,
    LBeam,
    Bridge,
    ThermalSmallSink,
    ThermalLargeSink,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::CantileverSingle,
        ProblemKind::CantileverMulti,
        ProblemKind::LBeam,
        ProblemKind::Bridge,
        ProblemKind::ThermalSmallSink,
        ProblemKind::ThermalLargeSink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::CantileverSingle => "cantilever_single",
            ProblemKind::CantileverMulti => "cantilever_multi",
            ProblemKind::LBeam => "l_beam",
            ProblemKind::Bridge => "bridge",
            ProblemKind::ThermalSmallSink => "thermal_small_sink",
            ProblemKind::ThermalLargeSink => "thermal_large_sink",
        }
    }

    pub fn physics(self) -> Physics {
        match self {
            ProblemKind::ThermalSmallSink | ProblemKind::ThermalLargeSink => Physics::Thermal,
            _ => Physics::Elastic,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

fn check_divisible(len: usize, ratio: usize) -> Result<()> {
    if ratio == 0 || !len.is_multiple_of(ratio) {
        return Err(Error::NotDivisible { len, by: ratio });
    }
    Ok(())
}

/// Equal downward nodal forces over a `side`×`side` node patch, summing to a
/// unit total.
fn downward_patch(row0: usize, col0: usize, side: usize) -> Vec<PointLoad> {
    let each = -1.0 / (side * side) as f64;
    let mut out = Vec::with_capacity(side * side);
    for r in row0..row0 + side {
        for c in col0..col0 + side {
            out.push(PointLoad {
                row: r,
                col: c,
                direction: Direction::Vertical,
                magnitude: each,
            });
        }
    }
    out
}

fn pin(row: usize, cols: impl Iterator<Item = usize>, dirs: &[Direction]) -> Vec<FixedDof> {
    cols.flat_map(|col| dirs.iter().map(move |&direction| FixedDof { row, col, direction }))
        .collect()
}

const BOTH: [Direction; 2] = [Direction::Horizontal, Direction::Vertical];

/// Builds a catalog problem on a `width`×`height` element grid. Both sides
/// must be divisible by `ratio`, the coarsening ratio the problem will be
/// used with (pass 1 when no coarsening is planned).
pub fn make_problem(kind: ProblemKind, width: usize, height: usize, ratio: usize) -> Result<TOProblem> {
    check_divisible(width, ratio)?;
    check_divisible(height, ratio)?;
    let side = (width / 16).max(1);
    let (w, h) = (width, height);
    let left_edge_fixed = || {
        (0..=h)
            .flat_map(|row| pin(row, std::iter::once(0), &BOTH))
            .collect::<Vec<_>>()
    };
    let name = kind.as_str();
    match kind {
        ProblemKind::CantileverSingle => TOProblem::new(
            name,
            DomainSpec::new(w, h)?,
            BoundaryCondition::new(left_edge_fixed()),
            LoadSpec::Nodal(downward_patch(0, w + 1 - side, side)),
            0.4,
            Physics::Elastic,
        ),
        ProblemKind::CantileverMulti => {
            let c0 = (w + 1 - side) / 2;
            let r0 = (h + 1 - side) / 2;
            let mut loads = downward_patch(0, c0, side);
            loads.extend(downward_patch(r0, w + 1 - side, side));
            loads.extend(downward_patch(h + 1 - side, c0, side));
            TOProblem::new(
                name,
                DomainSpec::new(w, h)?,
                BoundaryCondition::new(left_edge_fixed()),
                LoadSpec::Nodal(loads),
                0.4,
                Physics::Elastic,
            )
        }
        ProblemKind::LBeam => {
            if w % 2 != 0 || h % 2 != 0 {
                return Err(Error::Config("l_beam needs even dimensions".into()));
            }
            // Upper-right quadrant void; the left column hangs from its top
            // edge and the lower arm carries the tip load.
            let passive = (0..h)
                .flat_map(|r| (0..w).map(move |c| r < h / 2 && c >= w / 2))
                .collect();
            TOProblem::new(
                name,
                DomainSpec::with_passive(w, h, passive)?,
                BoundaryCondition::new(pin(0, 0..=w / 2, &BOTH)),
                LoadSpec::Nodal(downward_patch(h / 2, w + 1 - side, side)),
                0.4,
                Physics::Elastic,
            )
        }
        ProblemKind::Bridge => {
            let q = (w / 32).max(1);
            let mut fixed = pin(h, 0..q, &BOTH);
            fixed.extend(pin(h, w + 1 - q..=w, &[Direction::Vertical]));
            let each = -1.0 / (w + 1) as f64;
            let loads = (0..=w)
                .map(|col| PointLoad {
                    row: 0,
                    col,
                    direction: Direction::Vertical,
                    magnitude: each,
                })
                .collect();
            TOProblem::new(
                name,
                DomainSpec::new(w, h)?,
                BoundaryCondition::new(fixed),
                LoadSpec::Nodal(loads),
                0.4,
                Physics::Elastic,
            )
        }
        ProblemKind::ThermalSmallSink | ProblemKind::ThermalLargeSink => {
            let (len, vf) = if kind == ProblemKind::ThermalSmallSink {
                ((w / 16).max(1), 0.4)
            } else {
                ((w / 2).max(1), 0.6)
            };
            let c0 = (w - len) / 2;
            TOProblem::new(
                name,
                DomainSpec::new(w, h)?,
                BoundaryCondition::new(pin(0, c0..=c0 + len, &[Direction::Temperature])),
                LoadSpec::Volumetric(ScalarField::filled(h, w, 1.0)),
                vf,
                Physics::Thermal,
            )
        }
    }
}

/// Starting design for an optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialDensity {
    /// Every active element at the target volume fraction.
    Simp,
    /// Every active element fully solid.
    Beso,
}

pub fn uniform_density(problem: &TOProblem, start: InitialDensity) -> DensityField {
    let value = match start {
        InitialDensity::Simp => problem.volume_fraction,
        InitialDensity::Beso => 1.0,
    };
    let d = &problem.domain;
    let values = ScalarField::from_fn(
        d.height(),
        d.width(),
        |r, c| {
            if d.is_passive(r, c) {
                0.0
            } else {
                value
            }
        },
    );
    DensityField::from_parts(problem.domain.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_entries(p: &TOProblem) -> &[PointLoad] {
        match &p.loads {
            LoadSpec::Nodal(e) => e,
            _ => panic!("expected nodal loads"),
        }
    }

    #[test]
    fn cantilever_load_patch_at_full_scale() {
        let p = make_problem(ProblemKind::CantileverSingle, 512, 512, 16).unwrap();
        let loads = load_entries(&p);
        assert_eq!(loads.len(), 32 * 32);
        assert!(loads.iter().all(|l| l.row < 32 && l.col >= 513 - 32));
        let total: f64 = loads.iter().map(|l| l.magnitude).sum();
        assert!((total + 1.0).abs() < 1e-12);
        assert_eq!(p.volume_fraction, 0.4);
        assert_eq!(p.bc.fixed().len(), 2 * 513);
    }

    #[test]
    fn bridge_dimensions_and_top_load() {
        let p = make_problem(ProblemKind::Bridge, 768, 384, 16).unwrap();
        assert_eq!((p.domain.width(), p.domain.height()), (768, 384));
        let loads = load_entries(&p);
        assert_eq!(loads.len(), 769);
        assert!(loads.iter().all(|l| l.row == 0));
    }

    #[test]
    fn large_sink_volume_and_length() {
        let p = make_problem(ProblemKind::ThermalLargeSink, 128, 128, 16).unwrap();
        assert_eq!(p.volume_fraction, 0.6);
        let cols: Vec<usize> = p.bc.fixed().iter().map(|f| f.col).collect();
        assert!(p.bc.fixed().iter().all(|f| f.row == 0));
        // 64 element edges of sink, centered.
        assert_eq!(cols.last().unwrap() - cols[0], 64);
        assert_eq!(cols[0], 128 - cols.last().unwrap());
    }

    #[test]
    fn every_catalog_problem_is_well_posed() {
        for kind in ProblemKind::ALL {
            let (w, h) = if kind == ProblemKind::Bridge {
                (64, 32)
            } else {
                (32, 32)
            };
            let p = make_problem(kind, w, h, 16).unwrap();
            assert!(!p.bc.is_empty(), "{kind}");
            assert!(p.loads.total_magnitude() > 0.0, "{kind}");
        }
    }

    #[test]
    fn l_beam_active_count_is_three_quarters() {
        for n in [16, 32, 64] {
            let p = make_problem(ProblemKind::LBeam, n, n, 16).unwrap();
            assert_eq!(p.domain.active_count() * 4, 3 * n * n);
        }
    }

    #[test]
    fn rejects_unknown_names_and_bad_sizes() {
        assert!(matches!(
            "cantilever".parse::<ProblemKind>(),
            Err(Error::UnknownProblem(_))
        ));
        assert!(matches!(
            make_problem(ProblemKind::CantileverSingle, 100, 128, 16),
            Err(Error::NotDivisible { len: 100, by: 16 })
        ));
    }

    #[test]
    fn coarsening_preserves_total_load() {
        for kind in ProblemKind::ALL {
            let p = make_problem(kind, 128, 128, 16).unwrap();
            let c = p.coarsened(16).unwrap();
            assert_eq!((c.domain.width(), c.domain.height()), (8, 8));
            assert!((c.loads.total_magnitude() - p.loads.total_magnitude()).abs() < 1e-9);
            assert!(!c.bc.is_empty());
        }
        let l = make_problem(ProblemKind::LBeam, 128, 128, 16)
            .unwrap()
            .coarsened(16)
            .unwrap();
        assert_eq!(l.domain.active_count(), 48);
    }

    #[test]
    fn uniform_starts() {
        let p = make_problem(ProblemKind::CantileverSingle, 32, 32, 16).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        assert!(x.values().as_slice().iter().all(|&v| v == 0.4));

        let p = make_problem(ProblemKind::LBeam, 32, 32, 16).unwrap();
        let x = uniform_density(&p, InitialDensity::Simp);
        for r in 0..32 {
            for c in 0..32 {
                let expected = if r < 16 && c >= 16 { 0.0 } else { 0.4 };
                assert_eq!(x.get(r, c), expected);
            }
        }

        let p = make_problem(ProblemKind::Bridge, 64, 32, 16).unwrap();
        let x = uniform_density(&p, InitialDensity::Beso);
        assert!(x.values().as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn density_rejects_nonzero_passive() {
        let p = make_problem(ProblemKind::LBeam, 16, 16, 1).unwrap();
        let values = ScalarField::filled(16, 16, 0.5);
        assert!(DensityField::new(p.domain.clone(), values).is_err());
    }

    #[test]
    fn mirrored_problem_is_reflection_invariant() {
        let p = make_problem(ProblemKind::CantileverSingle, 16, 16, 1).unwrap();
        let m = p.mirror_symmetrized(MirrorAxis::TopBottom).unwrap();
        let loads = load_entries(&m);
        let net: f64 = loads.iter().map(|l| l.magnitude).sum();
        assert!(net.abs() < 1e-12);
        assert!((m.loads.total_magnitude() - 1.0).abs() < 1e-12);
        let again = m.mirror_symmetrized(MirrorAxis::TopBottom).unwrap();
        assert_eq!(again.bc, m.bc);
    }
}
