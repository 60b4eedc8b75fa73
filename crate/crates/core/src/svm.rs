//! Instance-weighted linear SVM.
//!
//! Solves
//!
//! ```text
//! min_{w,b}  1/2 |w|^2 + c * sum_k q_k * max(0, 1 - y_k (w . x_k + b))
//! ```
//!
//! through its dual with a two-variable SMO solver (maximal-violating pair with
//! second-order working set selection). The bias is unregularized, so the dual
//! carries the equality constraint `sum_k a_k y_k = 0` and box `0 <= a_k <= c q_k`.
//! Up to [`GRAM_CACHE_ROWS`] active rows the Gram matrix is precomputed; beyond that
//! `w` is kept explicitly and gradients are updated from the change in `w`.
//!
//! Termination is certified by the duality gap: the returned `(w, b)` has primal
//! objective within `tol * primal` of the dual lower bound. The bias is recovered
//! by minimizing the primal exactly along `b` for the final `w`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::loss::hinge;
use crate::scalar::{all_finite, axpy, dot, norm_squared, Scalar};
use crate::types::{ClassifierModel, Label};

/// `w . x + b`.
pub fn decision_value<T: Scalar>(model: &ClassifierModel<T>, x: &[T]) -> Result<T> {
    if x.len() != model.w.len() {
        return Err(Error::dims("feature vector", model.w.len(), x.len()));
    }
    Ok(dot(&model.w, x) + model.b)
}

#[derive(Debug, Clone, Copy)]
pub struct WeightedRow<'a, T> {
    pub x: &'a [T],
    pub y: Label,
    pub weight: T,
}

/// Borrowed training rows with per-row hinge weights.
#[derive(Debug, Clone, Default)]
pub struct WeightedTrainingSet<'a, T> {
    rows: Vec<WeightedRow<'a, T>>,
}

impl<'a, T: Scalar> WeightedTrainingSet<'a, T> {
    pub fn new() -> Self {
        WeightedTrainingSet { rows: Vec::new() }
    }

    pub fn push(&mut self, x: &'a [T], y: Label, weight: T) {
        self.rows.push(WeightedRow { x, y, weight });
    }

    pub fn rows(&self) -> &[WeightedRow<'a, T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check(&self) -> Result<usize> {
        let dim = self
            .rows
            .first()
            .map(|r| r.x.len())
            .ok_or_else(|| Error::InfeasibleTrainingSet("no rows".into()))?;
        let mut has = [false, false];
        for (k, row) in self.rows.iter().enumerate() {
            if row.x.len() != dim {
                return Err(Error::dims(format!("training row {k}"), dim, row.x.len()));
            }
            if !all_finite(row.x) {
                return Err(Error::NonFinite(format!("features of training row {k}")));
            }
            if !row.weight.is_finite() || row.weight < T::zero() {
                return Err(Error::InvalidConfig(format!(
                    "weight {} of training row {k} must be finite and nonnegative",
                    row.weight
                )));
            }
            if row.weight > T::zero() {
                has[row.y.is_positive() as usize] = true;
            }
        }
        match has {
            [true, true] => Ok(dim),
            [_, false] => Err(Error::InfeasibleTrainingSet(
                "no positive row with nonzero weight".into(),
            )),
            [false, _] => Err(Error::InfeasibleTrainingSet(
                "no negative row with nonzero weight".into(),
            )),
        }
    }
}

/// Solver outcome with the certificate that was reached.
#[derive(Debug, Clone)]
pub struct SvmSolution<T> {
    pub model: ClassifierModel<T>,
    pub primal_objective: T,
    pub dual_objective: T,
    pub iterations: usize,
    /// Whether `primal - dual <= tol * primal` was reached before the iteration cap.
    pub converged: bool,
    /// Minimized dual objective (`1/2 |w|^2 - sum a`) at every certification point.
    pub dual_trace: Vec<T>,
    /// Dual variables in input row order (zero for rows with zero weight).
    pub dual: Vec<T>,
}

impl<T: Scalar> SvmSolution<T> {
    pub fn gap(&self) -> T {
        self.primal_objective - self.dual_objective
    }
}

/// Primal objective of `(w, b)` on a weighted set.
pub fn weighted_svm_objective<T: Scalar>(
    data: &WeightedTrainingSet<'_, T>,
    c: T,
    model: &ClassifierModel<T>,
) -> T {
    let loss: T = data
        .rows
        .iter()
        .filter(|r| r.weight > T::zero())
        .map(|r| r.weight * hinge(r.y.sign::<T>() * (dot(&model.w, r.x) + model.b)))
        .sum();
    norm_squared(&model.w) / T::of(2.0) + c * loss
}

/// Trains the weighted SVM and returns `(w, b)`; see [`solve_weighted_svm`].
pub fn train_weighted_svm<T: Scalar>(
    data: &WeightedTrainingSet<'_, T>,
    c: T,
    tol: T,
) -> Result<ClassifierModel<T>> {
    solve_weighted_svm(data, c, tol).map(|s| s.model)
}

pub fn solve_weighted_svm<T: Scalar>(
    data: &WeightedTrainingSet<'_, T>,
    c: T,
    tol: T,
) -> Result<SvmSolution<T>> {
    if !(c.is_finite() && c > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "svm c = {c} must be positive"
        )));
    }
    if !(tol.is_finite() && tol > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "svm tol = {tol} must be positive"
        )));
    }
    let dim = data.check()?;
    Smo::new(data, c, dim).run(tol)
}

/// Like [`solve_weighted_svm`], starting from the dual variables of a previous
/// solution on a related row set (one entry per row of `data`).
///
/// The start is made feasible by clipping to the new box and scaling down the
/// larger class's dual mass, so the result meets the same certificate as a cold start.
pub fn solve_weighted_svm_warm<T: Scalar>(
    data: &WeightedTrainingSet<'_, T>,
    c: T,
    tol: T,
    initial_dual: &[T],
) -> Result<SvmSolution<T>> {
    if initial_dual.len() != data.len() {
        return Err(Error::dims(
            "warm-start dual",
            data.len(),
            initial_dual.len(),
        ));
    }
    if !(c.is_finite() && c > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "svm c = {c} must be positive"
        )));
    }
    if !(tol.is_finite() && tol > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "svm tol = {tol} must be positive"
        )));
    }
    let dim = data.check()?;
    let mut smo = Smo::new(data, c, dim);
    smo.warm_start(initial_dual);
    smo.run(tol)
}

const TAU: f64 = 1e-12;

/// Largest active row count for which the full Gram matrix is cached.
pub const GRAM_CACHE_ROWS: usize = 3000;

struct Smo<'a, T> {
    rows: usize,
    active_index: Vec<usize>,
    gram: Option<Vec<T>>,
    x: Vec<&'a [T]>,
    y: Vec<T>,
    upper: Vec<T>,
    diag: Vec<T>,
    alpha: Vec<T>,
    grad: Vec<T>,
    w: Vec<T>,
}

impl<'a, T: Scalar> Smo<'a, T> {
    fn new(data: &WeightedTrainingSet<'a, T>, c: T, dim: usize) -> Self {
        let (active_index, active): (Vec<usize>, Vec<&WeightedRow<'_, T>>) = data
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.weight > T::zero())
            .unzip();
        let l = active.len();
        let x: Vec<&[T]> = active.iter().map(|r| r.x).collect();
        let gram = (l <= GRAM_CACHE_ROWS).then(|| {
            let mut g = vec![T::zero(); l * l];
            for a in 0..l {
                for b in a..l {
                    let v = dot(x[a], x[b]);
                    g[a * l + b] = v;
                    g[b * l + a] = v;
                }
            }
            g
        });
        Smo {
            rows: data.rows.len(),
            active_index,
            gram,
            x,
            y: active.iter().map(|r| r.y.sign()).collect(),
            upper: active.iter().map(|r| c * r.weight).collect(),
            diag: active.iter().map(|r| norm_squared(r.x)).collect(),
            alpha: vec![T::zero(); l],
            grad: vec![-T::one(); l],
            w: vec![T::zero(); dim],
        }
    }

    fn warm_start(&mut self, initial: &[T]) {
        let mut mass = [T::zero(), T::zero()];
        for t in 0..self.alpha.len() {
            let a = initial[self.active_index[t]];
            let a = if a.is_finite() {
                a.max(T::zero()).min(self.upper[t])
            } else {
                T::zero()
            };
            self.alpha[t] = a;
            mass[(self.y[t] > T::zero()) as usize] += a;
        }
        let target = mass[0].min(mass[1]);
        for t in 0..self.alpha.len() {
            let m = mass[(self.y[t] > T::zero()) as usize];
            if m > target {
                self.alpha[t] *= target / m;
            }
        }
        self.refresh();
    }

    /// Recomputes `w` from `alpha` and the gradient from `w`; returns `w . x_t` per row.
    fn refresh(&mut self) -> Vec<T> {
        let mut w = vec![T::zero(); self.w.len()];
        for t in 0..self.alpha.len() {
            if self.alpha[t] > T::zero() {
                axpy(self.alpha[t] * self.y[t], self.x[t], &mut w);
            }
        }
        let f: Vec<T> = self.x.iter().map(|x| dot(&w, x)).collect();
        for ((g, &y), &ft) in self.grad.iter_mut().zip(&self.y).zip(&f) {
            *g = y * ft - T::one();
        }
        self.w = w;
        f
    }

    fn full_dual(&self) -> Vec<T> {
        let mut dual = vec![T::zero(); self.rows];
        for (t, &k) in self.active_index.iter().enumerate() {
            dual[k] = self.alpha[t];
        }
        dual
    }

    #[inline]
    fn kernel(&self, a: usize, b: usize) -> T {
        match &self.gram {
            Some(g) => g[a * self.alpha.len() + b],
            None => dot(self.x[a], self.x[b]),
        }
    }

    fn is_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.upper[t]
    }

    fn is_lower(&self, t: usize) -> bool {
        self.alpha[t] <= T::zero()
    }

    /// Second-order working set selection; `None` when no pair violates KKT by more than `eps`.
    fn select(&self, eps: T) -> Option<(usize, usize)> {
        let l = self.alpha.len();
        let mut gmax = T::neg_infinity();
        let mut i = None;
        for t in 0..l {
            let v = -self.y[t] * self.grad[t];
            let eligible = if self.y[t] > T::zero() {
                !self.is_upper(t)
            } else {
                !self.is_lower(t)
            };
            if eligible && v >= gmax {
                gmax = v;
                i = Some(t);
            }
        }
        let i = i?;
        let tau = T::of(TAU);
        let mut gmax2 = T::neg_infinity();
        let mut best = T::infinity();
        let mut j = None;
        for t in 0..l {
            let eligible = if self.y[t] > T::zero() {
                !self.is_lower(t)
            } else {
                !self.is_upper(t)
            };
            if !eligible {
                continue;
            }
            let v = -self.y[t] * self.grad[t];
            // -v is the "low" side score; track the max of -(-y G) over I_low.
            gmax2 = gmax2.max(-v);
            let grad_diff = gmax - v;
            if grad_diff > T::zero() {
                let kit = self.kernel(i, t);
                let mut quad = self.diag[i] + self.diag[t] - (kit + kit);
                if quad <= T::zero() {
                    quad = tau;
                }
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best {
                    best = obj;
                    j = Some(t);
                }
            }
        }
        if gmax + gmax2 < eps {
            return None;
        }
        j.map(|j| (i, j))
    }

    fn update_pair(&mut self, i: usize, j: usize) {
        let (ci, cj) = (self.upper[i], self.upper[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let kij = self.kernel(i, j);
        let qij = self.y[i] * self.y[j] * kij;
        let tau = T::of(TAU);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let mut quad = self.diag[i] + self.diag[j] + qij + qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > T::zero() {
                if aj < T::zero() {
                    aj = T::zero();
                    ai = diff;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = -diff;
            }
            if diff > ci - cj {
                if ai > ci {
                    ai = ci;
                    aj = ci - diff;
                }
            } else if aj > cj {
                aj = cj;
                ai = cj + diff;
            }
        } else {
            let mut quad = self.diag[i] + self.diag[j] - qij - qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > ci {
                if ai > ci {
                    ai = ci;
                    aj = sum - ci;
                }
            } else if aj < T::zero() {
                aj = T::zero();
                ai = sum;
            }
            if sum > cj {
                if aj > cj {
                    aj = cj;
                    ai = sum - cj;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;

        let di = (ai - old_i) * self.y[i];
        let dj = (aj - old_j) * self.y[j];
        if let Some(g) = &self.gram {
            let l = self.alpha.len();
            let (ri, rj) = (&g[i * l..(i + 1) * l], &g[j * l..(j + 1) * l]);
            for t in 0..l {
                self.grad[t] += self.y[t] * (di * ri[t] + dj * rj[t]);
            }
            return;
        }
        let mut dw = vec![T::zero(); self.w.len()];
        axpy(di, self.x[i], &mut dw);
        axpy(dj, self.x[j], &mut dw);
        for (wk, &d) in self.w.iter_mut().zip(&dw) {
            *wk += d;
        }
        for t in 0..self.alpha.len() {
            self.grad[t] += self.y[t] * dot(self.x[t], &dw);
        }
    }

    /// Rebuilds `w` and the gradient from `alpha` and evaluates both objectives.
    fn certify(&mut self) -> (ClassifierModel<T>, T, T) {
        let f = self.refresh();
        let b = optimal_bias(&f, &self.y, &self.upper);
        let half_w2 = norm_squared(&self.w) / T::of(2.0);
        let loss: T = f
            .iter()
            .zip(&self.y)
            .zip(&self.upper)
            .map(|((&fi, &yi), &ui)| ui * hinge(yi * (fi + b)))
            .sum();
        let primal = half_w2 + loss;
        let dual = self.alpha.iter().copied().sum::<T>() - half_w2;
        let model = ClassifierModel {
            w: self.w.clone(),
            b,
        };
        (model, primal, dual)
    }

    fn run(mut self, tol: T) -> Result<SvmSolution<T>> {
        let l = self.alpha.len();
        let tol = tol.max(T::of(100.0) * T::epsilon());
        let stall = T::epsilon() * T::of(16.0);
        let check_every = (l / 2).max(16);
        let max_iter = 200 * l + 200_000;
        let mut trace = Vec::new();
        let mut iter = 0;
        loop {
            let pair = self.select(stall);
            let due = pair.is_none() || iter % check_every == 0 || iter >= max_iter;
            if due {
                let (model, primal, dual) = self.certify();
                trace.push(-dual);
                let converged = primal - dual <= tol * primal;
                if converged || pair.is_none() || iter >= max_iter {
                    return Ok(SvmSolution {
                        model,
                        primal_objective: primal,
                        dual_objective: dual,
                        iterations: iter,
                        converged,
                        dual_trace: trace,
                        dual: self.full_dual(),
                    });
                }
            }
            // Certification refreshed the gradient; reselect so the pair matches it.
            let (i, j) = match (due, pair) {
                (true, _) => match self.select(stall) {
                    Some(p) => p,
                    None => continue,
                },
                (false, Some(p)) => p,
                (false, None) => unreachable!(),
            };
            self.update_pair(i, j);
            iter += 1;
        }
    }
}

/// Exact minimizer over `b` of `sum_k u_k max(0, 1 - y_k (f_k + b))`.
///
/// Every kink (`1 - f_k` for positives, `-1 - f_k` for negatives) raises the slope by
/// `u_k`, starting from `-sum of positive weights`, so the optimum is a weighted
/// median of the kinks. A flat optimal interval resolves to its midpoint.
pub(crate) fn optimal_bias<T: Scalar>(f: &[T], y: &[T], u: &[T]) -> T {
    let mut kinks: Vec<(T, T)> = f
        .iter()
        .zip(y)
        .zip(u)
        .filter(|(_, &ui)| ui > T::zero())
        .map(|((&fi, &yi), &ui)| (yi - fi, ui))
        .collect();
    if kinks.is_empty() {
        return T::zero();
    }
    kinks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let pos_weight: T = y
        .iter()
        .zip(u)
        .filter(|(&yi, _)| yi > T::zero())
        .map(|(_, &ui)| ui)
        .sum();
    let mut cumulative = T::zero();
    for (k, &(kink, weight)) in kinks.iter().enumerate() {
        cumulative += weight;
        match cumulative.partial_cmp(&pos_weight) {
            Some(Ordering::Less) | None => continue,
            Some(Ordering::Greater) => return kink,
            Some(Ordering::Equal) => {
                let next = kinks.get(k + 1).map_or(kink, |n| n.0);
                return (kink + next) / T::of(2.0);
            }
        }
    }
    kinks[kinks.len() - 1].0
}
