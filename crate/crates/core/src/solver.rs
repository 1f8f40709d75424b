//! Linear solvers for assembled systems.
//!
//! `DirectLu` materializes the top closure densely and factors the whole
//! operator with a sparse LU. `Gmres` applies the operator matrix-free and
//! preconditions with an LU of the sparse part plus the closure's diagonal.

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretization::{DiscreteSystem, NodeClass};
use crate::error::{Error, Result};

/// Smallest admissible `1 / ||A^{-1}||` relative to the largest diagonal entry.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    DirectLu,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: SolveMethod,
    /// Relative residual target.
    pub tol: f64,
    /// Cap on inner Krylov steps.
    pub max_iter: usize,
    pub restart: usize,
    /// Iterative-refinement passes after a direct solve.
    pub refine: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: SolveMethod::DirectLu,
            tol: 1e-10,
            max_iter: 2000,
            restart: 60,
            refine: 2,
        }
    }
}

impl SolveOptions {
    pub fn gmres() -> Self {
        Self {
            method: SolveMethod::Gmres,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: SolveMethod,
    /// `||b - A x|| / ||b||` with the matrix-free operator.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the factorization looked close to singular without failing.
    pub singular_flag: bool,
    /// Lower estimate of `max|diag| * ||A^{-1}||`; zero when not computed.
    pub condition_hint: f64,
}

struct Factor {
    lu: Lu<usize, Complex64>,
    n: usize,
}

impl Factor {
    fn new(n: usize, entries: &[(usize, usize, Complex64)]) -> Result<Self> {
        let triplets: Vec<_> = entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<usize, Complex64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::InvalidArgument(format!("sparse assembly failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| Error::SingularSystem(format!("LU factorization failed: {e:?}")))?;
        Ok(Self { lu, n })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut m = Mat::<Complex64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn residual(sys: &DiscreteSystem, x: &[Complex64]) -> Vec<Complex64> {
    let ax = sys.apply(x);
    sys.rhs.iter().zip(ax).map(|(b, a)| b - a).collect()
}

fn finite(v: &[Complex64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Solves `sys`. Returns the nodal field and a report.
pub fn solve(sys: &DiscreteSystem, opts: &SolveOptions) -> Result<(Vec<Complex64>, SolveReport)> {
    faer::set_global_parallelism(Par::Seq);
    if sys.rhs.len() != sys.n() {
        return Err(Error::ShapeMismatch {
            expected: sys.n(),
            got: sys.rhs.len(),
        });
    }
    match opts.method {
        SolveMethod::DirectLu => solve_direct(sys, opts),
        SolveMethod::Gmres => solve_gmres(sys, opts),
    }
}

fn solve_direct(sys: &DiscreteSystem, opts: &SolveOptions) -> Result<(Vec<Complex64>, SolveReport)> {
    let n = sys.n();
    let factor = Factor::new(n, &sys.triplets(true))?;

    // Two steps of inverse iteration bound ||A^{-1}|| from below.
    let mut probe: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.5 * (0.618_033_988_7 * i as f64).sin(), 0.0))
        .collect();
    let mut inv_norm = 0.0;
    for _ in 0..2 {
        let p = norm(&probe);
        let w = factor.solve(&probe.iter().map(|z| z / p).collect::<Vec<_>>());
        if !finite(&w) {
            return Err(Error::SingularSystem("non-finite values in the factorization".into()));
        }
        inv_norm = norm(&w);
        probe = w;
    }
    let max_diag = sys.max_diagonal();
    if inv_norm.is_infinite() || 1.0 / inv_norm < SINGULAR_THRESHOLD * max_diag {
        return Err(Error::SingularSystem(format!(
            "smallest singular value estimate {:.3e} below {SINGULAR_THRESHOLD:e} x max diagonal {max_diag:.3e}",
            1.0 / inv_norm
        )));
    }

    let b_norm = norm(&sys.rhs);
    let mut x = factor.solve(&sys.rhs);
    if !finite(&x) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    let mut r = residual(sys, &x);
    let mut passes = 0;
    while b_norm > 0.0 && norm(&r) > opts.tol * b_norm && passes < opts.refine {
        let d = factor.solve(&r);
        for (xi, di) in x.iter_mut().zip(d) {
            *xi += di;
        }
        r = residual(sys, &x);
        passes += 1;
    }
    let rel = if b_norm > 0.0 { norm(&r) / b_norm } else { norm(&r) };
    let condition_hint = inv_norm * max_diag;
    Ok((
        x,
        SolveReport {
            method: SolveMethod::DirectLu,
            residual: rel,
            iterations: 1 + passes,
            singular_flag: condition_hint > 1e10,
            condition_hint,
        },
    ))
}

fn solve_gmres(sys: &DiscreteSystem, opts: &SolveOptions) -> Result<(Vec<Complex64>, SolveReport)> {
    let n = sys.n();
    // Preconditioner: sparse part plus the diagonal of the top closure.
    let mut entries = sys.triplets(false);
    let off = sys.top_offset();
    let mut e0 = vec![Complex64::new(0.0, 0.0); sys.grid.nx];
    e0[0] = Complex64::new(1.0, 0.0);
    let dtn_diag = sys.dtn_block.apply(&e0)[0];
    for i in 0..sys.grid.nx {
        if sys.tags[off + i] == NodeClass::TopDtn {
            entries.push((off + i, off + i, dtn_diag));
        }
    }
    // A singular preconditioner says nothing about A itself; fall back to none.
    let factor = Factor::new(n, &entries).ok();
    let precond = |v: &[Complex64]| match &factor {
        Some(f) => f.solve(v),
        None => v.to_vec(),
    };

    let b_norm = norm(&sys.rhs);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveReport {
                method: SolveMethod::Gmres,
                residual: 0.0,
                iterations: 0,
                singular_flag: false,
                condition_hint: 0.0,
            },
        ));
    }
    let restart = opts.restart.max(1);
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < opts.max_iter {
        let r = residual(sys, &x);
        let beta = norm(&r);
        rel = beta / b_norm;
        if rel <= opts.tol {
            break;
        }
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|z| z / beta).collect()];
        let mut h: Vec<Vec<Complex64>> = Vec::new();
        let mut cs: Vec<Complex64> = Vec::new();
        let mut sn: Vec<Complex64> = Vec::new();
        let mut g = vec![Complex64::new(beta, 0.0)];
        for j in 0..restart {
            if iterations >= opts.max_iter {
                break;
            }
            iterations += 1;
            let mut w = sys.apply(&precond(&basis[j]));
            let mut col = vec![Complex64::new(0.0, 0.0); j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                col[i] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let wn = norm(&w);
            col[j + 1] = Complex64::new(wn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * col[i] + sn[i].conj() * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let (a, b) = (col[j], col[j + 1]);
            let d = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let (c, s) = if d == 0.0 {
                (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
            } else {
                (a / d, b / d)
            };
            col[j] = Complex64::new(d, 0.0);
            col[j + 1] = Complex64::new(0.0, 0.0);
            g.push(-s * g[j]);
            g[j] = c.conj() * g[j];
            cs.push(c);
            sn.push(s);
            h.push(col);
            rel = g[j + 1].norm() / b_norm;
            if rel <= opts.tol || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|z| z / wn).collect());
        }
        let m = h.len();
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        for i in (0..m).rev() {
            let mut s = g[i];
            for k in i + 1..m {
                s -= h[k][i] * y[k];
            }
            y[i] = if h[i][i].norm() > 0.0 { s / h[i][i] } else { Complex64::new(0.0, 0.0) };
        }
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        for (v, yk) in basis.iter().zip(&y) {
            for (zi, vi) in z.iter_mut().zip(v) {
                *zi += yk * vi;
            }
        }
        for (xi, di) in x.iter_mut().zip(precond(&z)) {
            *xi += di;
        }
        if !finite(&x) {
            return Err(Error::SingularSystem("non-finite Krylov iterate".into()));
        }
    }
    let true_rel = norm(&residual(sys, &x)) / b_norm;
    if true_rel > opts.tol.max(rel) * 10.0 || true_rel > opts.tol * 10.0 {
        return Err(Error::NoConvergence {
            iterations,
            residual: true_rel,
        });
    }
    Ok((
        x,
        SolveReport {
            method: SolveMethod::Gmres,
            residual: true_rel,
            iterations,
            singular_flag: false,
            condition_hint: 0.0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::*;
    use crate::geometry::{LayerSpec, ParticleConfiguration, Point};
    use std::f64::consts::PI;

    fn config(width: f64, centers: Vec<Point>) -> ParticleConfiguration {
        let layer = LayerSpec { width, ..LayerSpec::default() };
        ParticleConfiguration::from_centers(centers, layer).unwrap()
    }

    #[test]
    fn dirichlet_nodes_come_back_zero() {
        let (g, _) = build_grid(8.0, 7.0, 0.2, &[]).unwrap();
        let c = config(8.0, vec![Point::new(0.0, 2.5)]);
        let tags = classify_nodes(&g, &c, 1.0).unwrap();
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(10, 1e-6), 0.0,
            &Sources { interface_jump: Some((5.0, 1.0)), ..Sources::default() }).unwrap();
        let (x, rep) = solve(&sys, &SolveOptions::default()).unwrap();
        assert!(rep.residual < 1e-10);
        for (t, v) in tags.iter().zip(&x) {
            if *t == NodeClass::ParticleDirichlet {
                assert_eq!(*v, Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn empty_cell_with_flux_is_singular() {
        let (g, _) = build_grid(6.0, 7.0, 0.25, &[]).unwrap();
        let c = config(6.0, vec![]);
        let tags = classify_nodes(&g, &c, 1.0).unwrap();
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(5, 1e-6), 0.0,
            &Sources { interface_jump: Some((5.0, 1.0)), ..Sources::default() }).unwrap();
        assert!(matches!(solve(&sys, &SolveOptions::default()), Err(Error::SingularSystem(_))));
    }

    /// `u = cos(2 pi x / W) e^{-2 pi (y - T)/W}` is harmonic, decays upward and
    /// is an exact DtN eigenfunction; with matching bottom flux it is the solution.
    #[test]
    fn manufactured_laplace_solution_converges() {
        let width = 6.0;
        let top = 3.0;
        let kappa = 2.0 * PI / width;
        let exact = |x: f64, y: f64| (kappa * x).cos() * (-kappa * (y - top)).exp();
        let mut errs = vec![];
        for dx in [0.2, 0.1] {
            let (g, _) = build_grid(width, top, dx, &[]).unwrap();
            let tags = classify_nodes(&g, &config(width, vec![]), 1.0).unwrap();
            // Neumann data leaves the mean free; a Robin bottom pins it.
            let bottom: Vec<_> = (0..g.nx)
                .map(|i| Complex64::new(kappa * exact(g.x(i), 0.0), 0.0) + Complex64::new(0.0, 1.0) * exact(g.x(i), 0.0))
                .collect();
            let spec = DtnSpec::laplace(4, 1e-6);
            let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Robin { k: 1.0, gamma: Complex64::new(1.0, 0.0) }, &spec, 0.0,
                &Sources { bottom_flux: Some(bottom), ..Sources::default() }).unwrap();
            let (x, _) = solve(&sys, &SolveOptions::default()).unwrap();
            let mut err: f64 = 0.0;
            for j in 0..g.ny {
                for i in 0..g.nx {
                    err = err.max((x[g.index(i, j)] - exact(g.x(i), g.y(j))).norm());
                }
            }
            errs.push(err / (kappa * top).exp());
        }
        assert!(errs[1] < 2e-3, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn gmres_matches_direct() {
        let (g, _) = build_grid(12.0, 7.0, 0.25, &[]).unwrap();
        let c = config(12.0, vec![Point::new(-3.0, 2.0), Point::new(2.5, 3.2)]);
        let tags = classify_nodes(&g, &c, 1.0).unwrap();
        let k = 0.9;
        let k1 = k * (PI / 5.0).sin();
        let spec = DtnSpec::helmholtz(12, k, k1, 1e-6);
        let forcing: Vec<_> = (0..g.nx).map(|i| Complex64::from_polar(1.0, k1 * g.x(i))).collect();
        let sys = assemble(&g, &tags, ProblemKind::Helmholtz { k }, BottomCondition::Robin { k, gamma: Complex64::new(1.0, 0.2) }, &spec, k1,
            &Sources { top_forcing: Some(forcing), ..Sources::default() }).unwrap();
        let (xd, rd) = solve(&sys, &SolveOptions::default()).unwrap();
        let (xg, rg) = solve(&sys, &SolveOptions::gmres()).unwrap();
        assert!(rd.residual < 1e-10 && rg.residual < 1e-9);
        let diff: f64 = xd.iter().zip(&xg).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale: f64 = xd.iter().map(|a| a.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-7 * scale, "{diff} vs {scale}");
        assert!(rg.iterations > 0);
    }

    #[test]
    fn gmres_reports_no_convergence_on_a_tight_cap() {
        let (g, _) = build_grid(12.0, 7.0, 0.25, &[]).unwrap();
        let c = config(12.0, vec![Point::new(-3.0, 2.0)]);
        let tags = classify_nodes(&g, &c, 1.0).unwrap();
        let sys = assemble(&g, &tags, ProblemKind::Laplace, BottomCondition::Neumann, &DtnSpec::laplace(20, 1e-6), 0.0,
            &Sources { interface_jump: Some((5.0, 1.0)), ..Sources::default() }).unwrap();
        let opts = SolveOptions { max_iter: 1, tol: 1e-14, ..SolveOptions::gmres() };
        assert!(matches!(solve(&sys, &opts), Err(Error::NoConvergence { .. })));
    }
}
