//! Small dense semidefinite programs, handed to Clarabel.
//!
//! ```text
//! minimize   ½ xᵀQx + cᵀx − Σ_k w_k logdet M_k(x)
//! subject to F_j(x) ⪰ 0,  lo ≤ x ≤ hi
//! ```
//!
//! with every `F_j`, `M_k` affine in `x`. Each `logdet` term is lifted to
//! `[[M, Z], [Zᵀ, diag Z]] ⪰ 0` with `Z` lower triangular and
//! `t_i ≤ log Z_ii` through exponential cones.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// `F(x) = F₀ + Σ_i x_i F_i`, each `F_i` stored as its nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock {
    pub f0: DMatrix<f64>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl AffineBlock {
    /// Extracts the affine structure of `f` by probing unit vectors.
    pub fn from_fn(n: usize, f: impl Fn(&DVector<f64>) -> DMatrix<f64>) -> Self {
        let zero = DVector::zeros(n);
        let f0 = linalg::symmetrize(&f(&zero));
        let mut terms = Vec::new();
        for i in 0..n {
            let mut e = zero.clone();
            e[i] = 1.0;
            let fi = linalg::symmetrize(&f(&e)) - &f0;
            let entries: Vec<(usize, usize, f64)> = (0..fi.nrows())
                .flat_map(|r| (0..fi.ncols()).map(move |c| (r, c)))
                .filter_map(|(r, c)| (fi[(r, c)] != 0.0).then(|| (r, c, fi[(r, c)])))
                .collect();
            if !entries.is_empty() {
                terms.push((i, entries));
            }
        }
        Self { f0, terms }
    }

    /// Scalar block `a₀ + aᵀx`.
    pub fn scalar(a0: f64, a: &[(usize, f64)]) -> Self {
        Self {
            f0: DMatrix::from_element(1, 1, a0),
            terms: a.iter().filter(|(_, v)| *v != 0.0).map(|&(i, v)| (i, vec![(0, 0, v)])).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (i, entries) in &self.terms {
            for &(r, c, v) in entries {
                m[(r, c)] += v * x[*i];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub n: usize,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub logdet_terms: Vec<(f64, AffineBlock)>,
    pub constraints: Vec<AffineBlock>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl SdpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            logdet_terms: Vec::new(),
            constraints: Vec::new(),
            lo: DVector::from_element(n, f64::NEG_INFINITY),
            hi: DVector::from_element(n, f64::INFINITY),
        }
    }

    /// Objective value; errors when a `logdet` block is not positive definite.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        let mut f = 0.5 * x.dot(&(&self.q * x)) + self.c.dot(x);
        for (w, b) in &self.logdet_terms {
            f -= w * linalg::logdet_spd(&b.eval(x))?;
        }
        Ok(f)
    }

    /// Smallest eigenvalue over all constraint and `logdet` blocks.
    pub fn min_margin(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .chain(self.logdet_terms.iter().map(|(_, b)| b))
            .map(|b| linalg::min_eigenvalue(&b.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn in_bounds(&self, x: &DVector<f64>) -> bool {
        (0..self.n).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, verbose: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub min_margin: f64,
}

/// Position of `(i, j)`, `i ≤ j`, in the column-wise upper-triangle vectorization.
fn tri_index(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

/// Sparse constraint rows `s = b − A x`, accumulated cone by cone.
#[derive(Default)]
struct Rows {
    ai: Vec<usize>,
    aj: Vec<usize>,
    av: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Rows {
    fn push_entry(&mut self, row: usize, col: usize, v: f64) {
        if v != 0.0 {
            self.ai.push(row);
            self.aj.push(col);
            self.av.push(v);
        }
    }

    /// `s = svec(F(x))` with extra linear terms `(entry (r, c), variable, coefficient)`.
    fn push_psd(&mut self, block: &AffineBlock, dim: usize, extra: &[((usize, usize), usize, f64)]) {
        let r0 = self.b.len();
        let scale = |r: usize, c: usize| if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
        self.b.resize(r0 + dim * (dim + 1) / 2, 0.0);
        for c in 0..block.dim() {
            for r in 0..=c {
                self.b[r0 + tri_index(r, c)] = block.f0[(r, c)] * scale(r, c);
            }
        }
        for (i, entries) in &block.terms {
            for &(r, c, v) in entries.iter().filter(|(r, c, _)| r <= c) {
                self.push_entry(r0 + tri_index(r, c), *i, -v * scale(r, c));
            }
        }
        for &((r, c), i, v) in extra {
            let (r, c) = (r.min(c), r.max(c));
            self.push_entry(r0 + tri_index(r, c), i, -v * scale(r, c));
        }
        self.cones.push(SupportedConeT::PSDTriangleConeT(dim));
    }

    /// `s = b − a x ≥ 0` for one variable.
    fn push_nonneg(&mut self, col: usize, a: f64, b: f64) {
        self.push_entry(self.b.len(), col, a);
        self.b.push(b);
        self.cones.push(SupportedConeT::NonnegativeConeT(1));
    }

    /// `(t, 1, z) ∈ K_exp`, i.e. `t ≤ log z`.
    fn push_exp(&mut self, t: usize, z: usize) {
        let r0 = self.b.len();
        self.push_entry(r0, t, -1.0);
        self.push_entry(r0 + 2, z, -1.0);
        self.b.extend([0.0, 1.0, 0.0]);
        self.cones.push(SupportedConeT::ExponentialConeT());
    }
}

/// Solves `p`. A solution that violates a constraint block by solver
/// round-off is blended toward the deepest interior point until every block
/// is positive semidefinite again.
pub fn solve(p: &SdpProblem, s: &SdpSettings) -> Result<SdpSolution> {
    let mut sol = solve_conic(p, s)?;
    if sol.min_margin < 0.0 || !p.in_bounds(&sol.x) {
        let (anchor, depth) = deepest_point(p, 1.0, s)?;
        if depth <= 0.0 {
            return Err(Error::CertificateInfeasible(format!("no interior point: depth {depth:.3e}")));
        }
        sol.x = pull_inside(p, &sol.x, &anchor);
        sol.objective = p.objective(&sol.x)?;
        sol.min_margin = p.min_margin(&sol.x);
    }
    Ok(sol)
}

/// `argmax t` subject to `F_j(x) ⪰ tI` and `t ≤ cap`; returns `(x, t)`.
pub fn deepest_point(p: &SdpProblem, cap: f64, s: &SdpSettings) -> Result<(DVector<f64>, f64)> {
    let n = p.n;
    let mut aux = SdpProblem::new(n + 1);
    aux.c[n] = -1.0;
    aux.hi[n] = cap;
    aux.lo.rows_mut(0, n).copy_from(&p.lo);
    aux.hi.rows_mut(0, n).copy_from(&p.hi);
    aux.constraints = p
        .constraints
        .iter()
        .chain(p.logdet_terms.iter().map(|(_, b)| b))
        .map(|b| {
            let mut b = b.clone();
            b.terms.push((n, (0..b.dim()).map(|d| (d, d, -1.0)).collect()));
            b
        })
        .collect();
    let sol = solve_conic(&aux, s)?;
    let x = DVector::from_column_slice(&sol.x.as_slice()[..n]);
    let depth = p.min_margin(&x);
    Ok((x, depth))
}

/// The point closest to `x` on the segment toward `anchor` (strictly
/// feasible) whose blocks are all positive semidefinite.
fn pull_inside(p: &SdpProblem, x: &DVector<f64>, anchor: &DVector<f64>) -> DVector<f64> {
    let at = |th: f64| x * (1.0 - th) + anchor * th;
    let ok = |y: &DVector<f64>| p.min_margin(y) >= 0.0 && p.in_bounds(y);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(&at(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    at(hi)
}

fn solve_conic(p: &SdpProblem, s: &SdpSettings) -> Result<SdpSolution> {
    let n = p.n;
    let mut rows = Rows::default();
    let mut nv = n;
    let mut c = p.c.as_slice().to_vec();
    for (w, block) in &p.logdet_terms {
        let k = block.dim();
        let z0 = nv;
        let t0 = z0 + k * (k + 1) / 2;
        nv = t0 + k;
        // Z stored row-major over its lower triangle.
        let zi = |i: usize, j: usize| z0 + i * (i + 1) / 2 + j;
        let mut lifted = AffineBlock { f0: DMatrix::zeros(2 * k, 2 * k), terms: block.terms.clone() };
        lifted.f0.view_mut((0, 0), (k, k)).copy_from(&block.f0);
        let mut extra = Vec::new();
        for i in 0..k {
            for j in 0..=i {
                extra.push(((i, k + j), zi(i, j), 1.0));
            }
            extra.push(((k + i, k + i), zi(i, i), 1.0));
        }
        rows.push_psd(&lifted, 2 * k, &extra);
        c.resize(nv, 0.0);
        for i in 0..k {
            c[t0 + i] = -w;
            rows.push_exp(t0 + i, zi(i, i));
        }
    }
    c.resize(nv, 0.0);
    for block in &p.constraints {
        rows.push_psd(block, block.dim(), &[]);
    }
    for i in 0..n {
        if p.lo[i].is_finite() {
            rows.push_nonneg(i, -1.0, -p.lo[i]);
        }
        if p.hi[i].is_finite() {
            rows.push_nonneg(i, 1.0, p.hi[i]);
        }
    }
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..n {
        for i in 0..=j {
            let v = 0.5 * (p.q[(i, j)] + p.q[(j, i)]);
            if v != 0.0 {
                pi.push(i);
                pj.push(j);
                pv.push(v);
            }
        }
    }
    let pm = CscMatrix::new_from_triplets(nv, nv, pi, pj, pv);
    let am = CscMatrix::new_from_triplets(rows.b.len(), nv, rows.ai, rows.aj, rows.av);
    let settings = DefaultSettingsBuilder::default()
        .verbose(s.verbose)
        .max_iter(s.max_iter)
        .tol_gap_abs(s.tol)
        .tol_gap_rel(s.tol)
        .tol_feas(s.tol)
        .build()
        .map_err(|e| Error::SolverFailure(format!("solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&pm, &c, &am, &rows.b, &rows.cones, settings)
        .map_err(|e| Error::SolverFailure(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::CertificateInfeasible("the constraint set is empty".into()));
        }
        other => return Err(Error::SolverFailure(format!("conic solver stopped with {other:?}"))),
    }
    let x = DVector::from_column_slice(&sol.x[..n]);
    Ok(SdpSolution { objective: p.objective(&x)?, min_margin: p.min_margin(&x), iterations: sol.iterations, x })
}
