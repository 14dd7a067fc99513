//! Dense convex QP by operator splitting (OSQP-style ADMM).
//!
//! ```text
//! minimize   ½ xᵀHx + qᵀx
//! subject to lo ≤ A x ≤ hi,   ‖G x − c‖ ≤ r   (optional)
//! ```
//!
//! Iterates are periodically polished by solving the equality-constrained
//! problem on the active set guessed from the duals; a polished point is
//! accepted only if it passes a full KKT check.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub g: DMatrix<f64>,
    pub center: DVector<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub ball: Option<Ball>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub rho: f64,
    pub sigma: f64,
    pub relax: f64,
    /// Iterations without primal progress before declaring infeasibility.
    pub stall_window: usize,
    pub stall_threshold: f64,
    pub eps_infeasible: f64,
    pub polish_every: usize,
    pub kkt_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            rho: 0.1,
            sigma: 1e-6,
            relax: 1.6,
            stall_window: 2_000,
            stall_threshold: 1e-4,
            eps_infeasible: 1e-6,
            polish_every: 50,
            kkt_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the linear rows; positive on active upper bounds.
    pub y: DVector<f64>,
    /// Multiplier of the ball constraint, `μ (Gx − c)`.
    pub y_ball: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpOutcome {
    Solved(QpSolution),
    Infeasible { iterations: usize },
}

/// Stationarity, primal feasibility and complementarity residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// Dual sign violation (upper multipliers below zero and so on).
    pub dual: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity).max(self.dual)
    }
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.q.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let ok = self.h.ncols() == n
            && self.q.len() == n
            && self.a.ncols() == n
            && self.lo.len() == self.a.nrows()
            && self.hi.len() == self.a.nrows()
            && self.ball.as_ref().is_none_or(|b| b.g.ncols() == n && b.center.len() == b.g.nrows());
        if !ok {
            return Err(Error::InvalidInput("inconsistent QP dimensions".into()));
        }
        Ok(())
    }

    pub fn kkt_residual(&self, x: &DVector<f64>, y: &DVector<f64>, y_ball: &DVector<f64>) -> KktResidual {
        let ax = &self.a * x;
        let mut grad = &self.h * x + &self.q + self.a.transpose() * y;
        let mut primal: f64 = 0.0;
        let mut comp: f64 = 0.0;
        let mut dual: f64 = 0.0;
        for i in 0..ax.len() {
            primal = primal.max(self.lo[i] - ax[i]).max(ax[i] - self.hi[i]);
            if y[i] > 0.0 {
                comp = comp.max(y[i] * (self.hi[i] - ax[i]).abs());
                if self.hi[i].is_infinite() {
                    dual = dual.max(y[i]);
                }
            } else if y[i] < 0.0 {
                comp = comp.max(-y[i] * (ax[i] - self.lo[i]).abs());
                if self.lo[i].is_infinite() {
                    dual = dual.max(-y[i]);
                }
            }
        }
        if let Some(b) = &self.ball {
            grad += b.g.transpose() * y_ball;
            let d = &b.g * x - &b.center;
            let dn = d.norm();
            primal = primal.max(dn - b.radius);
            let yn = y_ball.norm();
            if yn > 0.0 {
                comp = comp.max(yn * (b.radius - dn).abs());
                // The multiplier must point along the outward normal.
                let align = if dn > 0.0 { yn - y_ball.dot(&d) / dn } else { yn };
                dual = dual.max(align);
            }
        }
        KktResidual { stationarity: grad.amax(), primal: primal.max(0.0), complementarity: comp, dual }
    }
}

struct Stacked {
    a: DMatrix<f64>,
    m_box: usize,
}

impl Stacked {
    fn new(p: &QpProblem) -> Self {
        let m_box = p.a.nrows();
        let a = match &p.ball {
            None => p.a.clone(),
            Some(b) => {
                let mut a = DMatrix::zeros(m_box + b.g.nrows(), p.n());
                a.rows_mut(0, m_box).copy_from(&p.a);
                a.rows_mut(m_box, b.g.nrows()).copy_from(&b.g);
                a
            }
        };
        Self { a, m_box }
    }

    fn project(&self, p: &QpProblem, w: &mut DVector<f64>) {
        for i in 0..self.m_box {
            w[i] = w[i].clamp(p.lo[i], p.hi[i]);
        }
        if let Some(b) = &p.ball {
            let mut seg = w.rows_mut(self.m_box, b.g.nrows());
            let d = &seg - &b.center;
            let dn = d.norm();
            if dn > b.radius {
                seg.copy_from(&(&b.center + d * (b.radius / dn)));
            }
        }
    }

    /// Support function of the constraint set, `sup_{w ∈ C} ⟨δy, w⟩`.
    fn support(&self, p: &QpProblem, dy: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..self.m_box {
            let d = dy[i];
            if d > 0.0 {
                s += p.hi[i] * d;
            } else if d < 0.0 {
                s += p.lo[i] * d;
            }
        }
        if let Some(b) = &p.ball {
            let seg = dy.rows(self.m_box, b.g.nrows());
            s += b.center.dot(&seg) + b.radius * seg.norm();
        }
        s
    }
}

fn factor(h: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = h.nrows();
    let mut k = h + DMatrix::identity(n, n) * sigma;
    for (i, row) in a.row_iter().enumerate() {
        k += row.transpose() * row * rho[i];
    }
    k.cholesky().ok_or_else(|| Error::Numeric("ADMM system matrix is not positive definite".into()))
}

pub fn solve(p: &QpProblem, s: &QpSettings) -> Result<QpOutcome> {
    p.validate()?;
    let st = Stacked::new(p);
    let (n, m) = (p.n(), st.a.nrows());
    let at = st.a.transpose();

    let row_rho = |rho: f64| {
        DVector::from_fn(m, |i, _| if i < st.m_box && p.lo[i] == p.hi[i] { 1e3 * rho } else { rho })
    };
    let mut rho_scalar = s.rho;
    let mut rho = row_rho(rho_scalar);
    let mut chol = factor(&p.h, &st.a, &rho, s.sigma)?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    st.project(p, &mut z);
    let mut y = DVector::zeros(m);

    let mut best_prim = f64::INFINITY;
    let mut stall = 0usize;

    for it in 1..=s.max_iter {
        let rhs = &x * s.sigma - &p.q + &at * (rho.component_mul(&z) - &y);
        let xt = chol.solve(&rhs);
        let zt = &st.a * &xt;
        let x_new = &xt * s.relax + &x * (1.0 - s.relax);
        let zr = &zt * s.relax + &z * (1.0 - s.relax);
        let mut z_new = &zr + y.component_div(&rho);
        st.project(p, &mut z_new);
        let y_new = &y + rho.component_mul(&(&zr - &z_new));
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        let ax = &st.a * &x;
        let hx = &p.h * &x;
        let aty = &at * &y;
        let prim = (&ax - &z).amax();
        let dual = (&hx + &p.q + &aty).amax();
        let prim_scale = ax.amax().max(z.amax());
        let dual_scale = hx.amax().max(aty.amax()).max(p.q.amax());

        if prim <= s.eps_abs + s.eps_rel * prim_scale && dual <= s.eps_abs + s.eps_rel * dual_scale {
            let sol = polish(p, &st, &x, &y, s).unwrap_or_else(|| finish(p, &st, &x, &y, it, false));
            return Ok(QpOutcome::Solved(QpSolution { iterations: it, ..sol }));
        }
        if it % s.polish_every == 0 && prim < 1e-3 * (1.0 + prim_scale) {
            if let Some(sol) = polish(p, &st, &x, &y, s) {
                return Ok(QpOutcome::Solved(QpSolution { iterations: it, ..sol }));
            }
        }

        let dyn_ = dy.amax();
        if dyn_ > 1e-12 {
            let certified =
                (&at * &dy).amax() <= s.eps_infeasible * dyn_ && st.support(p, &dy) < -s.eps_infeasible * dyn_;
            if certified {
                return Ok(QpOutcome::Infeasible { iterations: it });
            }
        }
        if prim < best_prim * (1.0 - 1e-3) {
            best_prim = prim;
            stall = 0;
        } else {
            stall += 1;
            if stall >= s.stall_window && best_prim > s.stall_threshold {
                return Ok(QpOutcome::Infeasible { iterations: it });
            }
        }

        if it % 25 == 0 {
            let pr = prim / prim_scale.max(1e-12);
            let du = dual / dual_scale.max(1e-12);
            let ratio = (pr / du.max(1e-300)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                rho_scalar = (rho_scalar * ratio).clamp(1e-6, 1e6);
                rho = row_rho(rho_scalar);
                chol = factor(&p.h, &st.a, &rho, s.sigma)?;
            }
        }
    }
    Err(Error::SolverFailure(format!("ADMM did not converge within {} iterations", s.max_iter)))
}

fn finish(p: &QpProblem, st: &Stacked, x: &DVector<f64>, y: &DVector<f64>, it: usize, polished: bool) -> QpSolution {
    let y_box = y.rows(0, st.m_box).into_owned();
    let y_ball = p.ball.as_ref().map_or_else(|| DVector::zeros(0), |b| y.rows(st.m_box, b.g.nrows()).into_owned());
    QpSolution { x: x.clone(), y: y_box, y_ball, objective: p.objective(x), iterations: it, polished }
}

/// Equality-constrained solve on the guessed active set.
fn polish(p: &QpProblem, st: &Stacked, x: &DVector<f64>, y: &DVector<f64>, s: &QpSettings) -> Option<QpSolution> {
    let n = p.n();
    let ax = &p.a * x;
    let mut act = Vec::new();
    for i in 0..st.m_box {
        if p.lo[i] == p.hi[i] || p.hi[i] - ax[i] < y[i] {
            act.push((i, p.hi[i]));
        } else if ax[i] - p.lo[i] < -y[i] {
            act.push((i, p.lo[i]));
        }
    }
    let ball_active = p.ball.as_ref().is_some_and(|b| {
        let yb = y.rows(st.m_box, b.g.nrows());
        yb.norm() > 1e-10 || ((&b.g * x - &b.center).norm() - b.radius).abs() < 1e-7 * (1.0 + b.radius)
    });

    let k = act.len();
    let solve_mu = |mu: f64| -> Option<(DVector<f64>, DVector<f64>)> {
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        rhs.rows_mut(0, n).copy_from(&(-&p.q));
        if let (Some(b), true) = (&p.ball, mu > 0.0) {
            let gt = b.g.transpose();
            kkt.view_mut((0, 0), (n, n)).add_assign(&(&gt * &b.g * mu));
            rhs.rows_mut(0, n).add_assign(&(gt * &b.center * mu));
        }
        for (j, &(i, v)) in act.iter().enumerate() {
            for c in 0..n {
                kkt[(n + j, c)] = p.a[(i, c)];
                kkt[(c, n + j)] = p.a[(i, c)];
            }
            rhs[n + j] = v;
        }
        let sol = kkt.lu().solve(&rhs)?;
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
    };

    let (xp, lam, mu) = match (&p.ball, ball_active) {
        (Some(b), true) => {
            let excess = |mu: f64| {
                solve_mu(mu).map(|(xv, l)| {
                    let e = (&b.g * &xv - &b.center).norm() - b.radius;
                    (e, xv, l)
                })
            };
            let (e0, x0, l0) = excess(0.0)?;
            if e0 <= 0.0 {
                (x0, l0, 0.0)
            } else {
                let mut lo = 0.0;
                let mut hi = 1.0;
                loop {
                    let (e, _, _) = excess(hi)?;
                    if e <= 0.0 {
                        break;
                    }
                    lo = hi;
                    hi *= 10.0;
                    if hi > 1e14 {
                        return None;
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let (e, _, _) = excess(mid)?;
                    if e > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                let (_, xv, l) = excess(hi)?;
                (xv, l, hi)
            }
        }
        _ => {
            let (xv, l) = solve_mu(0.0)?;
            (xv, l, 0.0)
        }
    };

    let mut y_box = DVector::zeros(st.m_box);
    for (j, &(i, _)) in act.iter().enumerate() {
        y_box[i] = lam[j];
    }
    let y_ball = match &p.ball {
        Some(b) => (&b.g * &xp - &b.center) * mu,
        None => DVector::zeros(0),
    };
    let kkt = p.kkt_residual(&xp, &y_box, &y_ball);
    let scale = 1.0 + p.q.amax() + y_box.amax() + y_ball.amax();
    let ok = kkt.max() <= s.kkt_tol * scale;
    ok.then(|| QpSolution { objective: p.objective(&xp), x: xp, y: y_box, y_ball, iterations: 0, polished: true })
}
