//! Log-barrier interior-point method for the convexified subproblem.
//!
//! Variables are the stacked real/imaginary parts of every active beam
//! followed by one SINR slack `t` per active stream. Constraints are convex
//! quadratics (per-AP power and the linearized SINR constraints), the
//! objective is a smooth convex function of the slacks only. Units are
//! normalized so the noise power and the largest AP budget are both one.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::SolverStatus;

const NEWTON_TOL: f64 = 1e-10;
const GAP_TOL: f64 = 1e-9;
const MU: f64 = 20.0;
const MAX_NEWTON: usize = 600;
const MAX_CENTERING: usize = 80;

/// Real forms of a receiver channel g: Re(gᴴv) = p·x and Im(gᴴv) = q·x.
#[derive(Debug, Clone)]
pub(crate) struct Receiver {
    pub user: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Σ_{s∈quad} |g_rxᴴ v_s|² + constant + alpha·t_stream − lin·x_stream ≤ 0.
#[derive(Debug, Clone)]
pub(crate) struct SinrConstraint {
    pub rx: usize,
    pub stream: usize,
    pub quad: Vec<usize>,
    pub constant: f64,
    pub alpha: f64,
    pub lin: Vec<f64>,
}

/// Σ_s ‖v_{s,ap}‖² ≤ budget.
#[derive(Debug, Clone)]
pub(crate) struct PowerConstraint {
    pub ap: usize,
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StreamKind {
    Private,
    Common,
}

#[derive(Debug, Clone)]
pub(crate) struct StreamInfo {
    pub user: usize,
    pub kind: StreamKind,
    pub anchor_t: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    /// Complex beam length N·L.
    pub dim: usize,
    pub antennas_per_ap: usize,
    pub streams: Vec<StreamInfo>,
    pub receivers: Vec<Receiver>,
    pub sinr: Vec<SinrConstraint>,
    pub power: Vec<PowerConstraint>,
    /// Per user: its active streams and B/(r_des·ln 2).
    pub objective: Vec<(Vec<usize>, f64)>,
}

struct Evaluation {
    /// (Re, Im) of g_rxᴴ v_s, indexed [rx][s].
    proj: Vec<Vec<(f64, f64)>>,
    sinr: Vec<f64>,
    power: Vec<f64>,
}

impl Program {
    fn block(&self) -> usize {
        2 * self.dim
    }

    pub fn n_vars(&self) -> usize {
        self.streams.len() * (self.block() + 1)
    }

    fn t_index(&self, s: usize) -> usize {
        self.streams.len() * self.block() + s
    }

    fn beam<'a>(&self, x: &'a [f64], s: usize) -> &'a [f64] {
        let b = self.block();
        &x[s * b..(s + 1) * b]
    }

    /// Real indices of AP `ap` inside a stream block.
    fn ap_indices(&self, ap: usize) -> impl Iterator<Item = usize> + '_ {
        let l = self.antennas_per_ap;
        (ap * l..(ap + 1) * l).chain(self.dim + ap * l..self.dim + (ap + 1) * l)
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let proj: Vec<Vec<(f64, f64)>> = self
            .receivers
            .iter()
            .map(|r| {
                (0..self.streams.len())
                    .map(|s| {
                        let v = self.beam(x, s);
                        (dot(&r.p, v), dot(&r.q, v))
                    })
                    .collect()
            })
            .collect();
        let sinr = self
            .sinr
            .iter()
            .map(|c| {
                let quad: f64 = c
                    .quad
                    .iter()
                    .map(|&s| {
                        let (a, b) = proj[c.rx][s];
                        a * a + b * b
                    })
                    .sum();
                quad + c.constant + c.alpha * x[self.t_index(c.stream)]
                    - dot(&c.lin, self.beam(x, c.stream))
            })
            .collect();
        let power = self
            .power
            .iter()
            .map(|c| {
                let used: f64 = (0..self.streams.len())
                    .map(|s| {
                        let v = self.beam(x, s);
                        self.ap_indices(c.ap).map(|i| v[i] * v[i]).sum::<f64>()
                    })
                    .sum();
                used - c.budget
            })
            .collect();
        Evaluation { proj, sinr, power }
    }

    fn strictly_feasible(&self, x: &[f64], ev: &Evaluation) -> bool {
        ev.sinr.iter().chain(&ev.power).all(|&v| v < 0.0)
            && (0..self.streams.len()).all(|s| x[self.t_index(s)] > 0.0)
            && x.iter().all(|v| v.is_finite())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective
            .iter()
            .map(|(streams, coef)| {
                let rate: f64 = streams.iter().map(|&s| x[self.t_index(s)].ln_1p()).sum();
                let gap = 1.0 - coef * rate;
                if gap > 0.0 {
                    gap * gap
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn barrier_value(&self, x: &[f64], tau: f64) -> Option<f64> {
        let ev = self.evaluate(x);
        if !self.strictly_feasible(x, &ev) {
            return None;
        }
        let log_sum: f64 = ev.sinr.iter().chain(&ev.power).map(|v| (-v).ln()).sum::<f64>()
            + (0..self.streams.len())
                .map(|s| x[self.t_index(s)].ln())
                .sum::<f64>();
        Some(tau * self.objective(x) - log_sum)
    }

    fn n_constraints(&self) -> usize {
        self.sinr.len() + self.power.len() + self.streams.len()
    }

    fn gradient_hessian(&self, x: &[f64], tau: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n_vars();
        let b = self.block();
        let ev = self.evaluate(x);
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);

        // objective: depends on t only
        for (streams, coef) in &self.objective {
            let rate: f64 = streams.iter().map(|&s| x[self.t_index(s)].ln_1p()).sum();
            let gap = 1.0 - coef * rate;
            if gap <= 0.0 {
                continue;
            }
            for &s in streams {
                let is = self.t_index(s);
                let ds = coef / (1.0 + x[is]);
                grad[is] -= tau * 2.0 * gap * ds;
                hess[(is, is)] += tau * 2.0 * gap * ds / (1.0 + x[is]);
                for &r in streams {
                    let ir = self.t_index(r);
                    let dr = coef / (1.0 + x[ir]);
                    hess[(is, ir)] += tau * 2.0 * ds * dr;
                }
            }
        }

        // slack positivity
        for s in 0..self.streams.len() {
            let i = self.t_index(s);
            grad[i] -= 1.0 / x[i];
            hess[(i, i)] += 1.0 / (x[i] * x[i]);
        }

        // rank-2 curvature per (receiver, stream), weighted by Σ 1/(−f_c)
        let mut curvature = vec![vec![0.0; self.streams.len()]; self.receivers.len()];
        let mut g = DVector::zeros(n);
        for (c, &val) in self.sinr.iter().zip(&ev.sinr) {
            let inv = 1.0 / (-val);
            g.fill(0.0);
            for &s in &c.quad {
                let (a, bb) = ev.proj[c.rx][s];
                let r = &self.receivers[c.rx];
                for j in 0..b {
                    g[s * b + j] += 2.0 * (a * r.p[j] + bb * r.q[j]);
                }
                curvature[c.rx][s] += inv;
            }
            for j in 0..b {
                g[c.stream * b + j] -= c.lin[j];
            }
            g[self.t_index(c.stream)] += c.alpha;
            grad.axpy(inv, &g, 1.0);
            hess.ger(inv * inv, &g, &g, 1.0);
        }
        for (ri, row) in curvature.iter().enumerate() {
            let r = &self.receivers[ri];
            for (s, &wgt) in row.iter().enumerate() {
                if wgt == 0.0 {
                    continue;
                }
                let off = s * b;
                for i in 0..b {
                    let (pi, qi) = (r.p[i], r.q[i]);
                    for j in 0..b {
                        hess[(off + i, off + j)] += 2.0 * wgt * (pi * r.p[j] + qi * r.q[j]);
                    }
                }
            }
        }
        for (c, &val) in self.power.iter().zip(&ev.power) {
            let inv = 1.0 / (-val);
            g.fill(0.0);
            for s in 0..self.streams.len() {
                for i in self.ap_indices(c.ap) {
                    let idx = s * b + i;
                    g[idx] = 2.0 * x[idx];
                    hess[(idx, idx)] += 2.0 * inv;
                }
            }
            grad.axpy(inv, &g, 1.0);
            hess.ger(inv * inv, &g, &g, 1.0);
        }
        (grad, hess)
    }

    fn newton_direction(grad: &DVector<f64>, hess: DMatrix<f64>) -> Option<DVector<f64>> {
        let scale = hess.diagonal().amax().max(1e-300);
        let mut jitter = 0.0;
        for _ in 0..8 {
            let mut m = hess.clone();
            if jitter > 0.0 {
                for i in 0..m.nrows() {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = m.cholesky() {
                let dir = chol.solve(&(-grad));
                if dir.iter().all(|v| v.is_finite()) {
                    return Some(dir);
                }
            }
            jitter = if jitter == 0.0 { scale * 1e-14 } else { jitter * 100.0 };
        }
        None
    }

    /// Minimizes from a strictly feasible `x0`; returns the final iterate.
    pub fn solve(&self, x0: Vec<f64>) -> (Vec<f64>, SolverStatus) {
        let mut x = x0;
        let m = self.n_constraints() as f64;
        let f0 = self.objective(&x);
        let mut tau = (m / f0.max(1e-3)).max(1.0);
        let mut newton_total = 0;
        loop {
            for _ in 0..MAX_CENTERING {
                if newton_total >= MAX_NEWTON {
                    return (x, SolverStatus::MaxIter);
                }
                newton_total += 1;
                let (grad, hess) = self.gradient_hessian(&x, tau);
                let Some(dir) = Self::newton_direction(&grad, hess) else {
                    return (x, SolverStatus::InfeasibleNumeric);
                };
                let decrement = -grad.dot(&dir);
                if decrement / 2.0 <= NEWTON_TOL {
                    break;
                }
                let phi = self.barrier_value(&x, tau).expect("iterate stays interior");
                let mut step = 1.0;
                let mut accepted = None;
                while step > 1e-16 {
                    let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                    if let Some(v) = self.barrier_value(&trial, tau) {
                        if v <= phi - 0.01 * step * decrement {
                            accepted = Some(trial);
                            break;
                        }
                    }
                    step *= 0.5;
                }
                match accepted {
                    Some(next) => x = next,
                    None => break,
                }
            }
            if m / tau < GAP_TOL {
                return (x, SolverStatus::Optimal);
            }
            tau *= MU;
        }
    }

    /// Strictly feasible point near `x` (the anchor): beams shrunk by
    /// `shrink`, each slack set to 90% of its tightest bound.
    pub fn interior_start(&self, anchor: &[f64], shrink: f64) -> Option<Vec<f64>> {
        let mut x: Vec<f64> = anchor.to_vec();
        let beams = self.streams.len() * self.block();
        for v in &mut x[..beams] {
            *v *= shrink;
        }
        for s in 0..self.streams.len() {
            let i = self.t_index(s);
            x[i] = 0.0;
        }
        let ev = self.evaluate(&x);
        let mut bound = vec![f64::INFINITY; self.streams.len()];
        for (c, &v) in self.sinr.iter().zip(&ev.sinr) {
            // v is the value at t = 0
            if v >= 0.0 {
                return None;
            }
            bound[c.stream] = bound[c.stream].min(-v / c.alpha);
        }
        for s in 0..self.streams.len() {
            let i = self.t_index(s);
            x[i] = 0.9 * bound[s];
        }
        let ev = self.evaluate(&x);
        self.strictly_feasible(&x, &ev).then_some(x)
    }

    pub fn slack(&self, x: &[f64], s: usize) -> f64 {
        x[self.t_index(s)]
    }

    pub fn beam_of<'a>(&self, x: &'a [f64], s: usize) -> &'a [f64] {
        self.beam(x, s)
    }

    /// Plain-text rendering for cross-checking with an external solver.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "# cfrs subproblem v1");
        let _ = writeln!(
            out,
            "dims streams {} complex_dim {} antennas_per_ap {} vars {}",
            self.streams.len(),
            self.dim,
            self.antennas_per_ap,
            self.n_vars()
        );
        for (s, info) in self.streams.iter().enumerate() {
            let kind = match info.kind {
                StreamKind::Private => "p",
                StreamKind::Common => "c",
            };
            let _ = writeln!(out, "stream {s} user {} kind {kind} anchor_t {:e}", info.user, info.anchor_t);
        }
        for (i, r) in self.receivers.iter().enumerate() {
            let _ = writeln!(out, "receiver {i} user {} p {} q {}", r.user, fmt(&r.p), fmt(&r.q));
        }
        for c in &self.power {
            let _ = writeln!(out, "power ap {} budget {:e}", c.ap, c.budget);
        }
        for (i, c) in self.sinr.iter().enumerate() {
            let quad = c.quad.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(
                out,
                "sinr {i} rx {} stream {} constant {:e} alpha {:e} quad [{quad}] lin {}",
                c.rx,
                c.stream,
                c.constant,
                c.alpha,
                fmt(&c.lin)
            );
        }
        for (k, (streams, coef)) in self.objective.iter().enumerate() {
            let s = streams.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(out, "objective user {k} coef {coef:e} streams [{s}]");
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
