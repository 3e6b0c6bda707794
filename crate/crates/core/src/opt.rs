//! Dense convex programming engine.
//!
//! Solves `min c'x + sum q_j x_j^2` subject to linear rows and variable bounds
//! with a bounded-variable primal simplex. Diagonal quadratic costs are handled
//! exactly by a reduced-gradient extension: variables priced into the interior
//! become superbasic and are moved by Newton steps on the reduced Hessian.
//!
//! Duals follow one convention everywhere: the dual of a row is the derivative
//! of the optimal objective with respect to that row's right-hand side.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

/// Maximum number of binaries accepted by [`solve_with_binaries`].
pub const MAX_BINARIES: usize = 20;

/// Contract tolerance for [`kkt_residual`] at an optimal point.
pub const KKT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
    /// Coefficient of `x^2` in the objective; must be non-negative.
    pub quad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A linear program with optional diagonal convex quadratic costs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub vars: Vec<Variable>,
    pub rows: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    pub x: Vec<f64>,
    /// One dual per row, `d objective / d rhs`.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure: KKT residual {0:e} above tolerance")]
    Numeric(f64),
    #[error("singular basis")]
    Singular,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("{0} binary variables exceed the limit of {MAX_BINARIES}")]
    TooManyBinaries(usize),
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.vars.push(Variable { name: name.into(), lower, upper, cost, quad: 0.0 });
        self.vars.len() - 1
    }

    pub fn set_quad(&mut self, var: usize, quad: f64) {
        self.vars[var].quad = quad;
    }

    pub fn add_row(
        &mut self,
        label: impl Into<String>,
        terms: &[(usize, f64)],
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.rows.push(Constraint { label: label.into(), terms: terms.to_vec(), sense, rhs });
        self.rows.len() - 1
    }

    /// Pins a variable to a value by collapsing its bounds.
    pub fn fix(&mut self, var: usize, value: f64) {
        self.vars[var].lower = value;
        self.vars[var].upper = value;
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.label == label)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.vars.iter().zip(x).map(|(v, &xj)| v.cost * xj + v.quad * xj * xj).sum()
    }

    pub fn activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        for v in &self.vars {
            if v.quad < 0.0 || !v.quad.is_finite() {
                return Err(SolveError::Malformed(format!("variable {} has non-convex quadratic cost", v.name)));
            }
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() || !v.cost.is_finite() {
                return Err(SolveError::Malformed(format!("variable {} has invalid bounds or cost", v.name)));
            }
        }
        for r in &self.rows {
            if !r.rhs.is_finite() {
                return Err(SolveError::Malformed(format!("row {} has non-finite rhs", r.label)));
            }
            if let Some(&(j, _)) = r.terms.iter().find(|&&(j, a)| j >= self.vars.len() || !a.is_finite()) {
                return Err(SolveError::Malformed(format!("row {} references bad variable {j}", r.label)));
            }
        }
        Ok(())
    }

    /// Human-readable LP-style dump, one constraint per line.
    pub fn to_lp_text(&self) -> String {
        let mut out = String::from("minimize\n ");
        for v in &self.vars {
            if v.cost != 0.0 {
                let _ = write!(out, " {:+} {}", v.cost, v.name);
            }
            if v.quad != 0.0 {
                let _ = write!(out, " {:+} {}^2", v.quad, v.name);
            }
        }
        out.push_str("\nsubject to\n");
        for r in &self.rows {
            let _ = write!(out, " {}:", r.label);
            for &(j, a) in &r.terms {
                let _ = write!(out, " {:+} {}", a, self.vars[j].name);
            }
            let _ = writeln!(out, " {} {}", r.sense.symbol(), r.rhs);
        }
        out.push_str("bounds\n");
        for v in &self.vars {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.name, v.upper);
        }
        out.push_str("end\n");
        out
    }
}

impl SolveResult {
    pub fn dual(&self, program: &Program, label: &str) -> Option<f64> {
        program.row_index(label).map(|i| self.duals[i])
    }

    pub fn value(&self, program: &Program, name: &str) -> Option<f64> {
        program.var_index(name).map(|j| self.x[j])
    }
}

/// Max of scaled primal infeasibility, dual infeasibility and complementarity
/// violation of `(result.x, result.duals)` for `program`.
pub fn kkt_residual(program: &Program, result: &SolveResult) -> f64 {
    let x = &result.x;
    let y = &result.duals;
    let cscale = program.vars.iter().map(|v| v.cost.abs()).fold(1.0, f64::max);
    let mut worst = 0.0f64;
    let mut reduced: Vec<f64> = program.vars.iter().zip(x).map(|(v, &xj)| v.cost + 2.0 * v.quad * xj).collect();
    for (i, row) in program.rows.iter().enumerate() {
        let act = program.activity(i, x);
        let gap = row.rhs - act;
        let primal = match row.sense {
            Sense::Eq => gap.abs(),
            Sense::Le => (-gap).max(0.0),
            Sense::Ge => gap.max(0.0),
        };
        worst = worst.max(primal / (1.0 + row.rhs.abs()));
        let sign = match row.sense {
            Sense::Eq => 0.0,
            Sense::Le => y[i].max(0.0),
            Sense::Ge => (-y[i]).max(0.0),
        };
        worst = worst.max(sign / cscale);
        if row.sense != Sense::Eq {
            worst = worst.max((y[i] * gap).abs() / cscale);
        }
        for &(j, a) in &row.terms {
            reduced[j] -= y[i] * a;
        }
    }
    for (j, v) in program.vars.iter().enumerate() {
        let bound = (v.lower - x[j]).max(x[j] - v.upper).max(0.0);
        worst = worst.max(bound / (1.0 + v.lower.abs().min(v.upper.abs())));
        let zl = reduced[j].max(0.0);
        let zu = (-reduced[j]).max(0.0);
        let dual_l = if v.lower.is_finite() { zl * (x[j] - v.lower).abs() } else { zl };
        let dual_u = if v.upper.is_finite() { zu * (v.upper - x[j]).abs() } else { zu };
        worst = worst.max(dual_l / cscale).max(dual_u / cscale);
    }
    worst
}

/// Solves a convex program. Infeasible and unbounded programs return a result
/// with the matching status; a KKT residual above [`KKT_TOL`] is an error.
pub fn solve(program: &Program) -> Result<SolveResult, SolveError> {
    program.validate()?;
    let mut s = Simplex::new(program);
    let phase1 = s.phase_one()?;
    if !phase1 {
        return Ok(s.result(program, Status::Infeasible));
    }
    s.install(program);
    let mut status = s.optimize()?;
    if status == Status::Optimal {
        let mut res = s.result(program, status);
        let mut kkt = kkt_residual(program, &res);
        if kkt > KKT_TOL {
            s.refactor()?;
            status = s.optimize()?;
            res = s.result(program, status);
            kkt = kkt_residual(program, &res);
            if status == Status::Optimal && kkt > KKT_TOL {
                return Err(SolveError::Numeric(kkt));
            }
        }
        return Ok(res);
    }
    Ok(s.result(program, status))
}

/// Enumerates binary assignments with bound-based pruning, then prices the
/// winning assignment from its continuous restriction.
pub fn solve_with_binaries(program: &Program, binaries: &[usize]) -> Result<SolveResult, SolveError> {
    search_binaries(program, binaries, true)
}

/// Same as [`solve_with_binaries`] but visits every assignment.
pub fn solve_with_binaries_exhaustive(program: &Program, binaries: &[usize]) -> Result<SolveResult, SolveError> {
    search_binaries(program, binaries, false)
}

fn search_binaries(program: &Program, binaries: &[usize], prune: bool) -> Result<SolveResult, SolveError> {
    if binaries.len() > MAX_BINARIES {
        return Err(SolveError::TooManyBinaries(binaries.len()));
    }
    let mut work = program.clone();
    for &b in binaries {
        work.vars[b].lower = work.vars[b].lower.max(0.0);
        work.vars[b].upper = work.vars[b].upper.min(1.0);
    }
    let mut best: Option<SolveResult> = None;
    let mut fixed = Vec::with_capacity(binaries.len());
    branch(&mut work, program, binaries, &mut fixed, prune, &mut best)?;
    Ok(best.unwrap_or_else(|| SolveResult {
        status: Status::Infeasible,
        x: vec![0.0; program.vars.len()],
        duals: vec![0.0; program.rows.len()],
        objective: f64::INFINITY,
        iterations: 0,
    }))
}

fn branch(
    work: &mut Program,
    original: &Program,
    binaries: &[usize],
    fixed: &mut Vec<f64>,
    prune: bool,
    best: &mut Option<SolveResult>,
) -> Result<(), SolveError> {
    let depth = fixed.len();
    if prune || depth == binaries.len() {
        let res = solve(work)?;
        match res.status {
            Status::Infeasible => return Ok(()),
            Status::Unbounded => {
                *best = Some(res);
                return Ok(());
            }
            Status::Optimal => {}
        }
        let incumbent = best.as_ref().map_or(f64::INFINITY, |b| b.objective);
        let slack = 1e-9 * (1.0 + incumbent.abs());
        if res.objective >= incumbent - slack {
            return Ok(());
        }
        if depth == binaries.len() {
            *best = Some(res);
            return Ok(());
        }
    }
    let var = binaries[depth];
    let (lo, hi) = (original.vars[var].lower.max(0.0), original.vars[var].upper.min(1.0));
    for value in [1.0, 0.0] {
        if value < lo || value > hi {
            continue;
        }
        work.fix(var, value);
        fixed.push(value);
        branch(work, original, binaries, fixed, prune, best)?;
        fixed.pop();
    }
    work.vars[var].lower = lo;
    work.vars[var].upper = hi;
    Ok(())
}

/// One-sided derivatives of the optimal value with respect to the rhs of
/// `row`, by re-solving at `rhs - eps` and `rhs + eps`. Any value between the
/// two is a valid optimal dual for that row. Infeasible sides give infinities.
pub fn dual_range(program: &Program, row: usize, eps: f64) -> Result<(f64, f64), SolveError> {
    let base = solve(program)?;
    if base.status != Status::Optimal {
        return Ok((f64::NEG_INFINITY, f64::INFINITY));
    }
    let mut shifted = program.clone();
    let rhs = program.rows[row].rhs;
    shifted.rows[row].rhs = rhs - eps;
    let down = solve(&shifted)?;
    shifted.rows[row].rhs = rhs + eps;
    let up = solve(&shifted)?;
    let lo = match down.status {
        Status::Optimal => (base.objective - down.objective) / eps,
        _ => f64::NEG_INFINITY,
    };
    let hi = match up.status {
        Status::Optimal => (up.objective - base.objective) / eps,
        _ => f64::INFINITY,
    };
    Ok((lo.min(hi), hi.max(lo)))
}

/// Map from row labels to row indices, for programs with many lookups.
pub fn label_index(program: &Program) -> HashMap<&str, usize> {
    program.rows.iter().enumerate().map(|(i, r)| (r.label.as_str(), i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    Lower,
    Upper,
    /// Nonbasic away from any bound (free variables, or parked zero-curvature moves).
    Free,
    Super,
}

struct Simplex {
    m: usize,
    n: usize,
    ncol: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    h: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    head: Vec<usize>,
    binv: Vec<f64>,
    supers: Vec<usize>,
    since_refactor: usize,
    iterations: usize,
    degenerate_run: usize,
    tol_d: f64,
}

const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 40;
const BLAND_AFTER: usize = 25;

impl Simplex {
    fn new(p: &Program) -> Self {
        let m = p.rows.len();
        let n = p.vars.len();
        let ncol = n + 2 * m;
        let mut a = vec![0.0; m * ncol];
        let mut lb = vec![0.0; ncol];
        let mut ub = vec![0.0; ncol];
        for (j, v) in p.vars.iter().enumerate() {
            lb[j] = v.lower;
            ub[j] = v.upper;
        }
        let mut b = vec![0.0; m];
        for (i, r) in p.rows.iter().enumerate() {
            for &(j, c) in &r.terms {
                a[i * ncol + j] += c;
            }
            a[i * ncol + n + i] = 1.0;
            b[i] = r.rhs;
            let (l, u) = match r.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lb[n + i] = l;
            ub[n + i] = u;
            lb[n + m + i] = 0.0;
            ub[n + m + i] = f64::INFINITY;
        }
        let mut x = vec![0.0; ncol];
        let mut state = vec![State::Lower; ncol];
        for j in 0..n {
            if lb[j].is_finite() {
                x[j] = lb[j];
                state[j] = State::Lower;
            } else if ub[j].is_finite() {
                x[j] = ub[j];
                state[j] = State::Upper;
            } else {
                x[j] = 0.0;
                state[j] = State::Free;
            }
        }
        let mut head = vec![0; m];
        for i in 0..m {
            let mut r = b[i];
            for j in 0..n {
                r -= a[i * ncol + j] * x[j];
            }
            let s = n + i;
            let art = n + m + i;
            let proj = r.clamp(lb[s], ub[s]);
            if (r - proj).abs() <= FEAS_TOL * (1.0 + b[i].abs()) {
                head[i] = s;
                state[s] = State::Basic;
                x[s] = r;
                state[art] = State::Lower;
                x[art] = 0.0;
            } else {
                let sigma = if r > proj { 1.0 } else { -1.0 };
                a[i * ncol + art] = sigma;
                x[s] = proj;
                state[s] = if proj == lb[s] { State::Lower } else { State::Upper };
                x[art] = (r - proj).abs();
                head[i] = art;
                state[art] = State::Basic;
            }
        }
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0 / a[i * ncol + head[i]];
        }
        Simplex {
            m,
            n,
            ncol,
            a,
            b,
            lb,
            ub,
            cost: vec![0.0; ncol],
            h: vec![0.0; ncol],
            x,
            state,
            head,
            binv,
            supers: Vec::new(),
            since_refactor: 0,
            iterations: 0,
            degenerate_run: 0,
            tol_d: 1e-9,
        }
    }

    fn phase_one(&mut self) -> Result<bool, SolveError> {
        let (n, m) = (self.n, self.m);
        for i in 0..m {
            self.cost[n + m + i] = 1.0;
        }
        self.tol_d = 1e-11;
        let st = self.optimize()?;
        debug_assert_ne!(st, Status::Unbounded);
        let infeas: f64 = (0..m).map(|i| self.x[n + m + i]).sum();
        let scale = 1.0 + self.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..m {
            let art = n + m + i;
            self.cost[art] = 0.0;
            self.ub[art] = 0.0;
            if self.state[art] != State::Basic {
                self.x[art] = 0.0;
                self.state[art] = State::Lower;
            }
        }
        Ok(infeas <= 1e-8 * scale)
    }

    fn install(&mut self, p: &Program) {
        for (j, v) in p.vars.iter().enumerate() {
            self.cost[j] = v.cost;
            self.h[j] = 2.0 * v.quad;
        }
        let cscale = p.vars.iter().map(|v| v.cost.abs()).fold(1.0, f64::max);
        self.tol_d = 1e-10 * cscale;
    }

    fn col(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.a[i * self.ncol + j])
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let col: Vec<f64> = self.col(j).collect();
        let mut w = vec![0.0; m];
        for (k, wk) in w.iter_mut().enumerate() {
            let row = &self.binv[k * m..(k + 1) * m];
            *wk = row.iter().zip(&col).map(|(a, b)| a * b).sum();
        }
        w
    }

    fn gradient(&self, j: usize) -> f64 {
        self.cost[j] + self.h[j] * self.x[j]
    }

    fn prices(&self) -> Vec<f64> {
        let m = self.m;
        let mut pi = vec![0.0; m];
        for k in 0..m {
            let g = self.gradient(self.head[k]);
            if g != 0.0 {
                let row = &self.binv[k * m..(k + 1) * m];
                for (p, r) in pi.iter_mut().zip(row) {
                    *p += g * r;
                }
            }
        }
        pi
    }

    fn reduced(&self, pi: &[f64], j: usize) -> f64 {
        let mut d = self.gradient(j);
        for (i, p) in pi.iter().enumerate() {
            d -= p * self.a[i * self.ncol + j];
        }
        d
    }

    fn refactor(&mut self) -> Result<(), SolveError> {
        let m = self.m;
        let mut bmat = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                bmat[i * m + k] = self.a[i * self.ncol + self.head[k]];
            }
        }
        self.binv = invert(&bmat, m).ok_or(SolveError::Singular)?;
        let mut r = self.b.clone();
        for j in 0..self.ncol {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                for (i, ri) in r.iter_mut().enumerate() {
                    *ri -= self.a[i * self.ncol + j] * self.x[j];
                }
            }
        }
        for k in 0..m {
            let row = &self.binv[k * m..(k + 1) * m];
            self.x[self.head[k]] = row.iter().zip(&r).map(|(a, b)| a * b).sum();
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, pos: usize, entering: usize, w: &[f64]) {
        let m = self.m;
        let piv = w[pos];
        for c in 0..m {
            self.binv[pos * m + c] /= piv;
        }
        for k in 0..m {
            if k != pos && w[k] != 0.0 {
                let f = w[k];
                for c in 0..m {
                    self.binv[k * m + c] -= f * self.binv[pos * m + c];
                }
            }
        }
        self.head[pos] = entering;
        self.state[entering] = State::Basic;
        self.since_refactor += 1;
    }

    fn optimize(&mut self) -> Result<Status, SolveError> {
        let max_iter = 50 * (self.ncol + 10);
        let mut local = 0;
        loop {
            local += 1;
            self.iterations += 1;
            if local > max_iter {
                return Err(SolveError::IterationLimit);
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let pi = self.prices();
            if !self.supers.is_empty() {
                let d: Vec<f64> = self.supers.iter().map(|&j| self.reduced(&pi, j)).collect();
                let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if dmax > self.tol_d {
                    match self.superbasic_step(&d)? {
                        Some(st) => return Ok(st),
                        None => continue,
                    }
                }
            }
            let bland = self.degenerate_run >= BLAND_AFTER;
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.ncol {
                let eligible = match self.state[j] {
                    State::Basic | State::Super => false,
                    _ => self.ub[j] > self.lb[j],
                };
                if !eligible {
                    continue;
                }
                let d = self.reduced(&pi, j);
                let score = match self.state[j] {
                    State::Lower => -d,
                    State::Upper => d,
                    _ => d.abs(),
                };
                if score > self.tol_d {
                    if bland {
                        best = Some((j, score));
                        break;
                    }
                    if best.map_or(true, |(_, s)| score > s) {
                        best = Some((j, score));
                    }
                }
            }
            match best {
                None => return Ok(Status::Optimal),
                Some((j, _)) => {
                    self.state[j] = State::Super;
                    self.supers.push(j);
                }
            }
        }
    }

    /// Moves the superbasic variables. Returns `Some(Unbounded)` when the
    /// objective decreases without limit.
    fn superbasic_step(&mut self, d: &[f64]) -> Result<Option<Status>, SolveError> {
        let m = self.m;
        let ns = self.supers.len();
        let w: Vec<Vec<f64>> = self.supers.iter().map(|&j| self.ftran(j)).collect();
        let hb: Vec<f64> = self.head.iter().map(|&j| self.h[j]).collect();
        let mut r = vec![0.0; ns * ns];
        for a in 0..ns {
            for b in a..ns {
                let mut v: f64 = (0..m).map(|k| hb[k] * w[a][k] * w[b][k]).sum();
                if a == b {
                    v += self.h[self.supers[a]];
                }
                r[a * ns + b] = v;
                r[b * ns + a] = v;
            }
        }
        let scale = (0..ns).map(|a| r[a * ns + a]).fold(1.0, f64::max);
        let (l, fail) = cholesky(&r, ns, 1e-10 * scale);

        let (moving, p, cap) = match fail {
            None => {
                let z = chol_solve(&l, ns, ns, d);
                (ns, z.iter().map(|v| -v).collect::<Vec<_>>(), 1.0)
            }
            Some(k) => {
                let rhs: Vec<f64> = (0..k).map(|a| r[a * ns + k]).collect();
                let z = chol_solve(&l, ns, k, &rhs);
                let mut p: Vec<f64> = z.iter().map(|v| -v).collect();
                p.push(1.0);
                let slope: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
                if slope > 0.0 {
                    p.iter_mut().for_each(|v| *v = -*v);
                }
                (k + 1, p, f64::INFINITY)
            }
        };
        let slope: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();

        let mut delta_b = vec![0.0; m];
        for k in 0..m {
            // Entries below the pivot tolerance are roundoff; the basic
            // variable does not move.
            if (0..moving).all(|a| w[a][k].abs() <= PIVOT_TOL) {
                continue;
            }
            for a in 0..moving {
                delta_b[k] -= p[a] * w[a][k];
            }
        }

        let bland = self.degenerate_run >= BLAND_AFTER;
        let mut t = cap;
        let mut blocker: Option<(usize, bool, f64)> = None; // (column, at upper, |delta|)
        let mut consider = |j: usize, x: f64, dj: f64, lb: f64, ub: f64| {
            if dj.abs() <= 1e-12 {
                return;
            }
            let (room, upper) = if dj < 0.0 {
                if !lb.is_finite() {
                    return;
                }
                ((x - lb).max(0.0) / -dj, false)
            } else {
                if !ub.is_finite() {
                    return;
                }
                ((ub - x).max(0.0) / dj, true)
            };
            let better = match blocker {
                None => room < t,
                Some((bj, _, bd)) => {
                    room < t - 1e-12
                        || (room <= t + 1e-12 && if bland { j < bj } else { dj.abs() > bd })
                }
            };
            if better {
                t = room.min(t);
                blocker = Some((j, upper, dj.abs()));
            }
        };
        for a in 0..moving {
            let j = self.supers[a];
            consider(j, self.x[j], p[a], self.lb[j], self.ub[j]);
        }
        for k in 0..m {
            let j = self.head[k];
            consider(j, self.x[j], delta_b[k], self.lb[j], self.ub[j]);
        }

        if t.is_infinite() {
            if slope < -self.tol_d {
                return Ok(Some(Status::Unbounded));
            }
            // Flat direction with no bound ahead: park the last moving variable.
            let j = self.supers.remove(moving - 1);
            self.state[j] = State::Free;
            return Ok(None);
        }

        if t <= 1e-12 {
            self.degenerate_run += 1;
        } else {
            self.degenerate_run = 0;
        }
        for a in 0..moving {
            let j = self.supers[a];
            self.x[j] += t * p[a];
        }
        for k in 0..m {
            let j = self.head[k];
            self.x[j] += t * delta_b[k];
        }

        let Some((bj, upper, _)) = blocker else {
            return Ok(None);
        };
        let bound_state = if upper { State::Upper } else { State::Lower };
        let bound_val = if upper { self.ub[bj] } else { self.lb[bj] };
        if let Some(pos) = self.supers.iter().position(|&j| j == bj) {
            self.supers.remove(pos);
            self.x[bj] = bound_val;
            self.state[bj] = bound_state;
            return Ok(None);
        }
        let pos = self.head.iter().position(|&j| j == bj).expect("blocker is basic");
        let mut pick: Option<(usize, f64)> = None;
        for (a, col) in w.iter().enumerate() {
            let mag = col[pos].abs();
            let prefer = a < moving;
            let better = match pick {
                None => true,
                Some((pa, pm)) => {
                    let pprefer = pa < moving;
                    (prefer && !pprefer) || (prefer == pprefer && mag > pm)
                }
            };
            if mag > PIVOT_TOL && better {
                pick = Some((a, mag));
            }
        }
        let (a, _) = pick.ok_or(SolveError::Singular)?;
        let entering = self.supers.remove(a);
        self.pivot(pos, entering, &w[a]);
        self.x[bj] = bound_val;
        self.state[bj] = bound_state;
        Ok(None)
    }

    fn result(&mut self, p: &Program, status: Status) -> SolveResult {
        let _ = self.refactor();
        let pi = self.prices();
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let objective = match status {
            Status::Optimal => p.objective(&x),
            Status::Infeasible => f64::INFINITY,
            Status::Unbounded => f64::NEG_INFINITY,
        };
        SolveResult { status, x, duals: pi, objective, iterations: self.iterations }
    }
}

fn invert(mat: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut a = mat.to_vec();
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m + i] = 1.0;
    }
    for c in 0..m {
        let mut piv = c;
        for r in c + 1..m {
            if a[r * m + c].abs() > a[piv * m + c].abs() {
                piv = r;
            }
        }
        if a[piv * m + c].abs() < 1e-12 {
            return None;
        }
        if piv != c {
            for k in 0..m {
                a.swap(c * m + k, piv * m + k);
                inv.swap(c * m + k, piv * m + k);
            }
        }
        let d = a[c * m + c];
        for k in 0..m {
            a[c * m + k] /= d;
            inv[c * m + k] /= d;
        }
        for r in 0..m {
            if r != c {
                let f = a[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Lower Cholesky factor of the leading block; reports the first index whose
/// pivot falls below `tol`.
fn cholesky(r: &[f64], n: usize, tol: f64) -> (Vec<f64>, Option<usize>) {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = r[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if diag <= tol {
            return (l, Some(j));
        }
        let dj = diag.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut v = r[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / dj;
        }
    }
    (l, None)
}

/// Solves `L L' z = b` using the leading `k` block of `l` (stride `n`).
fn chol_solve(l: &[f64], n: usize, k: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut v = b[i];
        for c in 0..i {
            v -= l[i * n + c] * y[c];
        }
        y[i] = v / l[i * n + i];
    }
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let mut v = y[i];
        for c in i + 1..k {
            v -= l[c * n + i] * z[c];
        }
        z[i] = v / l[i * n + i];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn single_bound_row() {
        let mut p = Program::new();
        let x = p.add_var("x", -INF, INF, 1.0);
        p.add_row("floor", &[(x, 1.0)], Sense::Ge, 3.0);
        let r = solve(&p).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[x] - 3.0).abs() < 1e-12);
        assert!((r.duals[0] - 1.0).abs() < 1e-12);
        assert!(kkt_residual(&p, &r) <= KKT_TOL);
        let mut bumped = r.clone();
        bumped.duals[0] += 1.0;
        assert!(kkt_residual(&p, &bumped) >= 1.0 - 1e-7);
    }

    #[test]
    fn capacity_shortfall_is_infeasible() {
        let mut p = Program::new();
        let a = p.add_var("a", 0.0, 50.0, 20.0);
        let b = p.add_var("b", 0.0, 10.0, 35.0);
        p.add_row("bal", &[(a, 1.0), (b, 1.0)], Sense::Eq, 69.0);
        assert_eq!(solve(&p).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn merit_order_dispatch() {
        let caps = [50.0, 10.0, 10.0, 10.0, 10.0];
        let costs = [20.0, 35.0, 50.0, 60.0, 70.0];
        let mut p = Program::new();
        let v: Vec<usize> = (0..5).map(|i| p.add_var(format!("g{i}"), 0.0, caps[i], costs[i])).collect();
        let terms: Vec<(usize, f64)> = v.iter().map(|&j| (j, 1.0)).collect();
        p.add_row("bal", &terms, Sense::Eq, 45.0);
        let r = solve(&p).unwrap();
        assert_eq!(r.x, vec![45.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((r.duals[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_ray() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, INF, -1.0);
        let y = p.add_var("y", 0.0, INF, 0.0);
        p.add_row("r", &[(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert_eq!(solve(&p).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn quadratic_interior_optimum() {
        // min (x-3)^2 + y with x + y >= 5, y >= 0: stationarity 2(x-3) = 1 at x = 3.5.
        let mut p = Program::new();
        let x = p.add_var("x", -INF, INF, -6.0);
        p.set_quad(x, 1.0);
        let y = p.add_var("y", 0.0, INF, 1.0);
        p.add_row("sum", &[(x, 1.0), (y, 1.0)], Sense::Ge, 5.0);
        let r = solve(&p).unwrap();
        assert!((r.x[x] - 3.5).abs() < 1e-9, "{:?}", r.x);
        assert!((r.x[y] - 1.5).abs() < 1e-9);
        assert!((r.duals[0] - 1.0).abs() < 1e-9);
        assert!(kkt_residual(&p, &r) <= KKT_TOL);
    }

    #[test]
    fn quadratic_penalty_prices_unserved() {
        // Supply 10 at cost 5, unserved e priced D1 e + D2 e^2: demand 12 leaves e = 2.
        let mut p = Program::new();
        let g = p.add_var("g", 0.0, 10.0, 5.0);
        let e = p.add_var("e", 0.0, INF, 100.0);
        p.set_quad(e, 3.0);
        p.add_row("bal", &[(g, 1.0), (e, 1.0)], Sense::Eq, 12.0);
        let r = solve(&p).unwrap();
        assert!((r.x[e] - 2.0).abs() < 1e-9);
        assert!((r.duals[0] - 112.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_terms_accumulate() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, INF, 1.0);
        p.add_row("r", &[(x, 1.0), (x, 1.0)], Sense::Ge, 4.0);
        let r = solve(&p).unwrap();
        assert!((r.x[x] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonconvex() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, 1.0, 0.0);
        p.set_quad(x, -1.0);
        assert!(matches!(solve(&p), Err(SolveError::Malformed(_))));
    }

    #[test]
    fn binaries_default_to_on_when_free() {
        let mut p = Program::new();
        let g = p.add_var("g", 0.0, INF, 1.0);
        let u = p.add_var("u", 0.0, 1.0, 0.0);
        p.add_row("cap", &[(g, 1.0), (u, -10.0)], Sense::Le, 0.0);
        p.add_row("bal", &[(g, 1.0)], Sense::Eq, 5.0);
        let r = solve_with_binaries(&p, &[u]).unwrap();
        assert_eq!(r.x[u], 1.0);
        assert!((r.duals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_off_when_cheaper() {
        let mut p = Program::new();
        let u = p.add_var("u", 0.0, 1.0, 7.0);
        let g = p.add_var("g", 0.0, INF, 1.0);
        p.add_row("link", &[(g, 1.0), (u, -4.0)], Sense::Le, 0.0);
        let r = solve_with_binaries(&p, &[u]).unwrap();
        assert_eq!(r.x[u], 0.0);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn too_many_binaries() {
        let mut p = Program::new();
        let v: Vec<usize> = (0..21).map(|i| p.add_var(format!("u{i}"), 0.0, 1.0, 0.0)).collect();
        assert_eq!(solve_with_binaries(&p, &v), Err(SolveError::TooManyBinaries(21)));
    }

    #[test]
    fn dual_range_brackets_degenerate_price() {
        // Generator exactly at capacity: price anywhere between 20 and 35.
        let mut p = Program::new();
        let a = p.add_var("a", 0.0, 50.0, 20.0);
        let b = p.add_var("b", 0.0, 10.0, 35.0);
        let row = p.add_row("bal", &[(a, 1.0), (b, 1.0)], Sense::Eq, 50.0);
        let (lo, hi) = dual_range(&p, row, 1e-5).unwrap();
        assert!((lo - 20.0).abs() < 1e-6 && (hi - 35.0).abs() < 1e-6, "{lo} {hi}");
    }

    #[test]
    fn lp_text_lists_rows() {
        let mut p = Program::new();
        let x = p.add_var("x", 0.0, 1.0, 2.0);
        p.add_row("cap", &[(x, 1.0)], Sense::Le, 1.0);
        let text = p.to_lp_text();
        assert!(text.contains("cap: +1 x <= 1"));
    }
}
