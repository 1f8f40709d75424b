//! Five-point finite-difference assembly.
//!
//! Rows on the bottom and top lines use ghost nodes and are halved, which
//! keeps the operator symmetric (Hermitian under a lateral phase) and makes
//! the boundary fluxes enter as `flux / dy`. Couplings into Dirichlet nodes
//! are dropped since the Dirichlet data is zero.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dtn::{DtnBlock, DtnKind, DtnSpec};
use super::grid::{Grid, NodeClass};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square sparse complex matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl CsrMatrix {
    fn from_rows(rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.row(r).find(|e| e.0 == c).map_or(ZERO, |e| e.1)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `row col re im` lines, one per stored entry (debugging aid).
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                let _ = writeln!(out, "{r} {c} {:e} {:e}", v.re, v.im);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Laplace,
    Helmholtz { k: f64 },
}

/// Condition on the bottom line `y = 0`, written `-du/dy + c u = g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomCondition {
    Neumann,
    /// `-du/dy + i k gamma u = g`.
    Robin { k: f64, gamma: Complex64 },
}

/// Right-hand-side data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sources {
    /// Volume term `f` per node.
    pub volume: Option<Vec<Complex64>>,
    /// Bottom flux `g` per lateral node in `-du/dy + c u = g`.
    pub bottom_flux: Option<Vec<Complex64>>,
    /// Flux jump `[-du/dy] = value` across the grid line at `height`.
    pub interface_jump: Option<(f64, f64)>,
    /// Top forcing `g` per lateral node in `-du/dy - Lambda u = -g`,
    /// i.e. `du/dy = -Lambda u + g`.
    pub top_forcing: Option<Vec<Complex64>>,
}

/// Assembled system: sparse rows plus the dense closure on the top line.
///
/// The full operator is `matrix + P^T dtn_block P`, where `P` extracts the
/// top-line trace.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub grid: Grid,
    pub tags: Vec<NodeClass>,
    pub matrix: CsrMatrix,
    pub rhs: Vec<Complex64>,
    pub quasi_momentum: f64,
    pub dtn: DtnSpec,
    pub dtn_block: DtnBlock,
}

impl DiscreteSystem {
    pub fn n(&self) -> usize {
        self.matrix.n
    }

    /// Index of the first node on the top line.
    pub fn top_offset(&self) -> usize {
        self.grid.index(0, self.grid.ny - 1)
    }

    /// Applies the full operator.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = self.matrix.mul_vec(x);
        self.add_dtn(x, &mut y);
        y
    }

    pub(crate) fn add_dtn(&self, x: &[Complex64], y: &mut [Complex64]) {
        let off = self.top_offset();
        let nx = self.grid.nx;
        let active: Vec<Complex64> = (0..nx)
            .map(|i| if self.tags[off + i] == NodeClass::TopDtn { x[off + i] } else { ZERO })
            .collect();
        let out = self.dtn_block.apply(&active);
        for (i, v) in out.into_iter().enumerate() {
            if self.tags[off + i] == NodeClass::TopDtn {
                y[off + i] += v;
            }
        }
    }

    /// Full operator with the closure materialized, as `(row, col, value)`.
    pub fn triplets(&self, with_dtn: bool) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::with_capacity(self.matrix.nnz() + self.grid.nx * self.grid.nx);
        for r in 0..self.n() {
            out.extend(self.matrix.row(r).map(|(c, v)| (r, c, v)));
        }
        if with_dtn {
            let off = self.top_offset();
            let nx = self.grid.nx;
            let dense = self.dtn_block.dense();
            for i in 0..nx {
                if self.tags[off + i] != NodeClass::TopDtn {
                    continue;
                }
                for k in 0..nx {
                    if self.tags[off + k] == NodeClass::TopDtn {
                        out.push((off + i, off + k, dense[i * nx + k]));
                    }
                }
            }
        }
        out
    }

    /// Largest diagonal magnitude of the full operator.
    pub fn max_diagonal(&self) -> f64 {
        let off = self.top_offset();
        let dtn_diag = if self.grid.nx > 0 {
            let mut e = vec![ZERO; self.grid.nx];
            e[0] = Complex64::new(1.0, 0.0);
            self.dtn_block.apply(&e)[0]
        } else {
            ZERO
        };
        (0..self.n())
            .map(|r| {
                let mut d = self.matrix.get(r, r);
                if r >= off && self.tags[r] == NodeClass::TopDtn {
                    d += dtn_diag;
                }
                d.norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Assembles the discrete operator for `problem` on `grid`.
pub fn assemble(
    grid: &Grid,
    tags: &[NodeClass],
    problem: ProblemKind,
    bottom: BottomCondition,
    dtn: &DtnSpec,
    quasi_momentum: f64,
    sources: &Sources,
) -> Result<DiscreteSystem> {
    let n = grid.n_nodes();
    if tags.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: tags.len(),
        });
    }
    dtn.validate()?;
    match (dtn.kind, problem) {
        (DtnKind::HelmholtzQuasiperiodic, ProblemKind::Helmholtz { k }) => {
            if (k - dtn.k).abs() > 1e-12 * k.max(1.0) || (quasi_momentum - dtn.k1).abs() > 1e-12 {
                return Err(Error::InvalidDtnSpec(
                    "Helmholtz closure must share k and use k1 as quasi-momentum".into(),
                ));
            }
        }
        (DtnKind::LaplacePeriodic, ProblemKind::Laplace) => {
            if quasi_momentum != 0.0 {
                return Err(Error::InvalidDtnSpec("periodic Laplace closure needs zero quasi-momentum".into()));
            }
        }
        _ => {
            return Err(Error::InvalidDtnSpec("closure kind does not match the problem".into()));
        }
    }
    for (name, len) in [
        ("volume", sources.volume.as_ref().map(Vec::len).map(|l| (l, n))),
        ("bottom_flux", sources.bottom_flux.as_ref().map(Vec::len).map(|l| (l, grid.nx))),
        ("top_forcing", sources.top_forcing.as_ref().map(Vec::len).map(|l| (l, grid.nx))),
    ] {
        if let Some((got, expected)) = len {
            if got != expected {
                let _ = name;
                return Err(Error::ShapeMismatch { expected, got });
            }
        }
    }
    let interface_line = match sources.interface_jump {
        Some((height, value)) => {
            let line = grid
                .line_of(height)
                .filter(|&l| l > 0 && l < grid.ny - 1)
                .ok_or(Error::UnsnappedInterface { height })?;
            Some((line, value))
        }
        None => None,
    };

    let k2 = match problem {
        ProblemKind::Laplace => 0.0,
        ProblemKind::Helmholtz { k } => k * k,
    };
    let cx = 1.0 / (grid.dx * grid.dx);
    let cy = 1.0 / (grid.dy * grid.dy);
    let wrap = Complex64::from_polar(1.0, quasi_momentum * grid.width);
    let (nx, ny) = (grid.nx, grid.ny);
    let dirichlet = |node: usize| tags[node] == NodeClass::ParticleDirichlet;

    let mut rows: Vec<Vec<(usize, Complex64)>> = Vec::with_capacity(n);
    let mut rhs = vec![ZERO; n];
    for j in 0..ny {
        for i in 0..nx {
            let node = grid.index(i, j);
            if dirichlet(node) {
                rows.push(vec![(node, Complex64::new(1.0, 0.0))]);
                continue;
            }
            let on_edge = j == 0 || j == ny - 1;
            let s = if on_edge { 0.5 } else { 1.0 };
            let mut row = Vec::with_capacity(5);
            let mut diag = Complex64::new(s * (2.0 * cx - k2), 0.0);

            let (left, left_phase) = if i == 0 { (nx - 1, wrap.conj()) } else { (i - 1, Complex64::new(1.0, 0.0)) };
            let (right, right_phase) = if i == nx - 1 { (0, wrap) } else { (i + 1, Complex64::new(1.0, 0.0)) };
            for (col, phase) in [(left, left_phase), (right, right_phase)] {
                let other = grid.index(col, j);
                if !dirichlet(other) {
                    row.push((other, -s * cx * phase));
                }
            }

            let vertical = |other: usize, row: &mut Vec<(usize, Complex64)>| {
                if !dirichlet(other) {
                    row.push((other, Complex64::new(-cy, 0.0)));
                }
            };
            if j == 0 {
                diag += cy;
                vertical(grid.index(i, 1), &mut row);
                if let BottomCondition::Robin { k, gamma } = bottom {
                    diag += Complex64::i() * k * gamma / grid.dy;
                }
                if let Some(g) = &sources.bottom_flux {
                    rhs[node] += g[i] / grid.dy;
                }
            } else if j == ny - 1 {
                diag += cy;
                vertical(grid.index(i, j - 1), &mut row);
                if let Some(g) = &sources.top_forcing {
                    rhs[node] += g[i] / grid.dy;
                }
            } else {
                diag += 2.0 * cy;
                vertical(grid.index(i, j - 1), &mut row);
                vertical(grid.index(i, j + 1), &mut row);
                if let Some((line, value)) = interface_line {
                    if line == j {
                        rhs[node] += value / grid.dy;
                    }
                }
            }
            if let Some(f) = &sources.volume {
                rhs[node] += s * f[node];
            }
            row.push((node, diag));
            rows.push(row);
        }
    }

    let dtn_block = DtnBlock::new(dtn, grid, quasi_momentum, 1.0 / grid.dy)?;
    Ok(DiscreteSystem {
        grid: *grid,
        tags: tags.to_vec(),
        matrix: CsrMatrix::from_rows(rows),
        rhs,
        quasi_momentum,
        dtn: *dtn,
        dtn_block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::grid::{build_grid, classify_nodes};
    use crate::geometry::{LayerSpec, ParticleConfiguration, Point};

    fn empty_tags(grid: &Grid) -> Vec<NodeClass> {
        let layer = LayerSpec {
            width: grid.width,
            ..LayerSpec::default()
        };
        let c = ParticleConfiguration::from_centers(vec![], layer).unwrap();
        classify_nodes(grid, &c, 1.0).unwrap()
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let (g, _) = build_grid(6.0, 4.0, 0.2, &[]).unwrap();
        let tags = empty_tags(&g);
        let sys = assemble(
            &g,
            &tags,
            ProblemKind::Laplace,
            BottomCondition::Neumann,
            &DtnSpec::laplace(8, 1e-6),
            0.0,
            &Sources::default(),
        )
        .unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); sys.n()];
        let out = sys.apply(&ones);
        let scale = sys.max_diagonal();
        assert!(out.iter().all(|v| v.norm() <= 1e-12 * scale));
    }

    #[test]
    fn interior_rows_sum_to_zero() {
        let (g, _) = build_grid(6.0, 4.0, 0.2, &[]).unwrap();
        let tags = empty_tags(&g);
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0, &Sources::default()).unwrap();
        for j in 1..g.ny - 1 {
            for i in 0..g.nx {
                let s: Complex64 = sys.matrix.row(g.index(i, j)).map(|e| e.1).sum();
                assert!(s.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn laplace_block_is_hermitian_with_and_without_phase() {
        let (g, _) = build_grid(6.0, 4.0, 0.2, &[]).unwrap();
        let layer = LayerSpec { width: 6.0, ..LayerSpec::default() };
        let c = ParticleConfiguration::from_centers(vec![Point::new(-2.9, 2.0)], layer).unwrap();
        let tags = classify_nodes(&g, &c, 1.0).unwrap();
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0, &Sources::default()).unwrap();
        for r in 0..sys.n() {
            for (c, v) in sys.matrix.row(r) {
                assert!((sys.matrix.get(c, r) - v.conj()).norm() < 1e-12);
            }
        }
        // Same under a lateral phase for the Helmholtz operator with a real shift.
        let spec = DtnSpec::helmholtz(3, 1.0, 0.3, 1e-6);
        let sys = assemble(&g, &tags, ProblemKind::Helmholtz { k: 1.0 }, BottomCondition::Neumann, &spec, 0.3, &Sources::default()).unwrap();
        for r in 0..sys.n() {
            for (c, v) in sys.matrix.row(r) {
                assert!((sys.matrix.get(c, r) - v.conj()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn wrap_entries_carry_the_quasi_periodic_phase() {
        let (g, _) = build_grid(10.0, 4.0, 0.25, &[]).unwrap();
        let k = 1.0;
        let k1 = k * (std::f64::consts::PI / 4.0).sin();
        let spec = DtnSpec::helmholtz(4, k, k1, 1e-6);
        let tags = empty_tags(&g);
        let sys = assemble(&g, &tags, ProblemKind::Helmholtz { k }, BottomCondition::Neumann, &spec, k1, &Sources::default()).unwrap();
        let j = 3;
        let seam = sys.matrix.get(g.index(g.nx - 1, j), g.index(0, j));
        let expected = -Complex64::from_polar(1.0, k1 * g.width) / (g.dx * g.dx);
        assert!((seam - expected).norm() < 1e-9);
        let back = sys.matrix.get(g.index(0, j), g.index(g.nx - 1, j));
        assert!((back - expected.conj()).norm() < 1e-9);
    }

    #[test]
    fn dirichlet_rows_are_identity() {
        let (g, _) = build_grid(6.0, 4.0, 0.2, &[]).unwrap();
        let layer = LayerSpec { width: 6.0, ..LayerSpec::default() };
        let c = ParticleConfiguration::from_centers(vec![Point::new(0.0, 2.0)], layer).unwrap();
        let tags = classify_nodes(&g, &c, 1.0).unwrap();
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0,
            &Sources { interface_jump: Some((3.0, 1.0)), ..Sources::default() }).unwrap();
        let mut seen = 0;
        for (r, t) in tags.iter().enumerate() {
            if *t == NodeClass::ParticleDirichlet {
                let row: Vec<_> = sys.matrix.row(r).collect();
                assert_eq!(row, vec![(r, Complex64::new(1.0, 0.0))]);
                assert_eq!(sys.rhs[r], ZERO);
                seen += 1;
            } else {
                assert!(sys.matrix.row(r).all(|(c, _)| tags[c] != NodeClass::ParticleDirichlet));
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn interface_must_sit_on_a_grid_line() {
        let (g, _) = build_grid(6.0, 4.0, 0.2, &[]).unwrap();
        let tags = empty_tags(&g);
        let err = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0,
            &Sources { interface_jump: Some((2.03, 1.0)), ..Sources::default() }).unwrap_err();
        assert_eq!(err, Error::UnsnappedInterface { height: 2.03 });
        let ok = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0,
            &Sources { interface_jump: Some((2.0, 1.0)), ..Sources::default() }).unwrap();
        let line = g.line_of(2.0).unwrap();
        assert!((ok.rhs[g.index(0, line)].re - 1.0 / g.dy).abs() < 1e-12);
    }

    #[test]
    fn mismatched_closure_is_rejected() {
        let (g, _) = build_grid(6.0, 4.0, 0.2, &[]).unwrap();
        let tags = empty_tags(&g);
        let err = assemble(&g, &tags, ProblemKind::Helmholtz { k: 1.0 }, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0, &Sources::default());
        assert!(matches!(err, Err(Error::InvalidDtnSpec(_))));
        let err = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(3, 1e-6), 0.0,
            &Sources { bottom_flux: Some(vec![ZERO; 3]), ..Sources::default() });
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn coordinate_dump_lists_every_entry() {
        let (g, _) = build_grid(3.0, 1.0, 0.25, &[]).unwrap();
        let tags = empty_tags(&g);
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(1, 1e-6), 0.0, &Sources::default()).unwrap();
        assert_eq!(sys.matrix.to_coordinate_text().lines().count(), sys.matrix.nnz());
    }
}
