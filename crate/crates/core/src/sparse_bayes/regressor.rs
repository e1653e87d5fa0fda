//! Relevance vector machine regression with ARD sparsification.
//!
//! Training runs the fast marginal-likelihood scheme: one basis action per
//! iteration (add, delete, or re-estimate the ARD precision of a column),
//! always the action with the largest exact gain, plus a safeguarded noise
//! re-estimate. The recorded log marginal likelihood is nondecreasing.
//!
//! Multi-output targets share one basis set and one alpha per column; the
//! per-column gain sums the quality factors over output dimensions.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{real, Real};

use super::kernel::{BasisSet, KernelConfig};

#[derive(Debug, Clone, Copy)]
pub struct RvmSettings<T: Real> {
    /// Basis-action iterations for a cold-start fit.
    pub max_outer_iters: usize,
    /// Basis-action iterations for the re-estimation pass after an
    /// incremental update.
    pub max_update_iters: usize,
    /// Stop when the best available action gains less log-ML than this.
    pub tol_delta: T,
    /// ARD precision above which a basis is considered pinned at zero.
    pub prune_threshold: T,
    /// Lower bound on the noise variance.
    pub sigma_floor: T,
    /// Candidate anchor cap for cold-start fits (deterministic stride
    /// subsample when the training set is larger).
    pub max_anchors: usize,
    /// Include a constant bias column.
    pub bias: bool,
    /// When single basis actions stall, try exact delete-one/add-one
    /// transactions before declaring convergence. Escapes the shallow
    /// one-action traps that make warm and cold starts disagree.
    pub swap_refinement: bool,
    /// How many stalled swap candidates get a bounded re-optimization
    /// lookahead (their gain often only shows after the other precisions
    /// adapt). Zero keeps only the exact immediate pairs.
    pub swap_lookahead: usize,
    /// Candidates whose normalized correlation with an active column
    /// exceeds this are never added: near-collinear bases make the design
    /// ill-conditioned and the rank-one gain algebra meaningless.
    pub alignment_max: T,
}

impl<T: Real> Default for RvmSettings<T> {
    fn default() -> Self {
        Self {
            max_outer_iters: 300,
            max_update_iters: 150,
            tol_delta: real(1e-8),
            prune_threshold: real(1e8),
            sigma_floor: real(1e-10),
            max_anchors: 400,
            bias: true,
            swap_refinement: true,
            swap_lookahead: 3,
            alignment_max: real(0.999),
        }
    }
}

/// Outcome of scoring one candidate basis element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlDelta<T: Real> {
    /// Change in log marginal likelihood if the candidate joins at its
    /// optimal ARD precision (0 when the optimum is exclusion).
    pub delta: T,
    /// Candidate coincides with an anchor already active in the model.
    pub duplicate: bool,
}

#[derive(Debug, Clone)]
pub struct RvmRegressor<T: Real> {
    pub kernel: KernelConfig<T>,
    pub basis: BasisSet<T>,
    /// Output weights, one row per output dimension, aligned with
    /// `basis.active_columns()`.
    pub weights: DMatrix<T>,
    /// ARD precisions indexed by column id (meaningful for active columns).
    pub alpha: Vec<T>,
    /// Posterior weight covariance, aligned with the active columns.
    pub sigma: DMatrix<T>,
    /// Noise variance floor of the predictive distribution.
    pub sigma_d: T,
    /// False when the fit stopped on the iteration budget.
    pub converged: bool,
    /// Log marginal likelihood after each accepted change.
    pub log_ml_history: Vec<T>,
    pub settings: RvmSettings<T>,
    train_x: Vec<DVector<T>>,
    train_t: DMatrix<T>,
}

struct Posterior<T: Real> {
    cols: Vec<usize>,
    sigma: DMatrix<T>,
    /// Posterior weight means, `M x D`.
    mu: DMatrix<T>,
    log_ml: T,
}

enum Action<T: Real> {
    Add { col: usize, alpha: T },
    Reestimate { col: usize, alpha: T },
    Delete { col: usize },
}

pub(crate) fn chol_with_jitter<T: Real>(
    mut h: DMatrix<T>,
) -> Result<Cholesky<T, nalgebra::Dyn>> {
    let n = h.nrows();
    let mut jitter = T::zero();
    for attempt in 0..12 {
        if attempt > 0 {
            let scale = h.diagonal().amax();
            let bump = scale * real::<T>(1e-12) * real::<T>(10f64.powi(attempt));
            for i in 0..n {
                h[(i, i)] += bump - jitter;
            }
            jitter = bump;
        }
        if let Some(c) = Cholesky::new(h.clone()) {
            return Ok(c);
        }
    }
    Err(Error::InvalidConfig("posterior precision not positive definite".into()))
}

impl<T: Real> RvmRegressor<T> {
    /// Fits a sparse regressor mapping `inputs[i]` to `targets.row(i)`.
    pub fn fit(
        inputs: &[DVector<T>],
        targets: &DMatrix<T>,
        kernel: KernelConfig<T>,
        settings: RvmSettings<T>,
    ) -> Result<Self> {
        let n = inputs.len();
        if n < 2 {
            return Err(Error::EmptyInput("need at least 2 training samples"));
        }
        if targets.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "rvm targets",
                expected: n,
                got: targets.nrows(),
            });
        }
        if targets.iter().any(|v| !v.finite()) {
            return Err(Error::NonFinite("rvm targets"));
        }

        let mut basis = BasisSet::new(settings.bias);
        let stride = (n + settings.max_anchors - 1) / settings.max_anchors;
        for x in inputs.iter().step_by(stride.max(1)) {
            basis.push_anchor(x.clone());
        }

        let d_out = targets.ncols();
        let variance = {
            let mut acc = T::zero();
            for d in 0..d_out {
                let col = targets.column(d);
                let mean = col.sum() / real::<T>(n as f64);
                acc += col.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>()
                    / real::<T>(n as f64);
            }
            acc / real::<T>(d_out as f64)
        };
        let sigma_d = (real::<T>(0.1) * variance + real::<T>(1e-12)).max(settings.sigma_floor);

        let mut model = Self {
            kernel,
            basis,
            weights: DMatrix::zeros(d_out, 0),
            alpha: Vec::new(),
            sigma: DMatrix::zeros(0, 0),
            sigma_d,
            converged: false,
            log_ml_history: Vec::new(),
            settings,
            train_x: inputs.to_vec(),
            train_t: targets.clone(),
        };
        model.alpha = vec![T::zero(); model.basis.n_columns()];
        model.seed_first_basis()?;
        let converged = model.optimize(settings.max_outer_iters, true)?;
        model.converged = converged;
        Ok(model)
    }

    pub fn n_train(&self) -> usize {
        self.train_x.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.train_t.ncols()
    }

    pub fn active_count(&self) -> usize {
        self.basis.active_count()
    }

    pub fn log_ml(&self) -> T {
        *self.log_ml_history.last().expect("fitted model has history")
    }

    /// Predictive mean and variance: `mean = W phi`, `var = sigma_d +
    /// phi' Sigma phi`. The variance is shared across output dimensions.
    pub fn predict(&self, input: &DVector<T>) -> Result<(DVector<T>, T)> {
        let phi = self.basis.design_row(&self.kernel, input)?;
        let mean = &self.weights * &phi;
        let var = self.sigma_d + (&self.sigma * &phi).dot(&phi);
        Ok((mean, var))
    }

    /// Mean kernel activation of the input against the active anchors
    /// (bias excluded). Near zero means the query is outside the training
    /// hull and the prediction collapses toward the bias/average.
    pub fn mean_activation(&self, input: &DVector<T>) -> Result<T> {
        let phi = self.basis.design_row(&self.kernel, input)?;
        let cols = self.basis.active_columns();
        let mut acc = T::zero();
        let mut count = 0usize;
        for (k, &c) in cols.iter().enumerate() {
            if self.basis.bias && c == 0 {
                continue;
            }
            acc += phi[k];
            count += 1;
        }
        if count == 0 {
            Ok(T::zero())
        } else {
            Ok(acc / real::<T>(count as f64))
        }
    }

    /// Scores a labeled candidate `(input, target)`: the log-ML gain of
    /// adding a kernel column anchored at `input`, with the candidate row
    /// counted as part of the training data.
    pub fn ml_delta(&self, input: &DVector<T>, target: &DVector<T>) -> Result<MlDelta<T>> {
        if target.len() != self.n_outputs() {
            return Err(Error::DimensionMismatch {
                context: "ml_delta target",
                expected: self.n_outputs(),
                got: target.len(),
            });
        }
        let off = usize::from(self.basis.bias);
        if let Some(j) = self.basis.find_duplicate(input) {
            if self.basis.active[j] {
                return Ok(MlDelta {
                    delta: T::zero(),
                    duplicate: true,
                });
            }
        }

        let mut rows = self.train_x.clone();
        rows.push(input.clone());
        let n0 = self.train_t.nrows();
        let mut t = self.train_t.clone().insert_row(n0, T::zero());
        for d in 0..t.ncols() {
            t[(n0, d)] = target[d];
        }

        let cols = self.basis.active_columns();
        let phi_a = self.design_matrix(&rows, &cols);
        let alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
        let post = self.posterior_for(&phi_a, &alpha_active, &t, self.sigma_d, &cols)?;

        let cand: DVector<T> = DVector::from_fn(rows.len(), |i, _| {
            self.kernel.eval(&rows[i], input)
        });
        let (s_f, q_f) = self.candidate_factors(&phi_a, &post, &t, &cand);
        let d_out = real::<T>(self.n_outputs() as f64);
        let theta = q_f.iter().map(|&q| q * q).sum::<T>() - d_out * s_f;
        if s_f <= T::zero() || theta <= T::zero() {
            return Ok(MlDelta {
                delta: T::zero(),
                duplicate: false,
            });
        }
        let u = q_f.iter().map(|&q| q * q).sum::<T>() / d_out;
        let delta = real::<T>(0.5) * d_out * ((u - s_f) / s_f + (s_f / u).ln());
        let _ = off;
        Ok(MlDelta {
            delta,
            duplicate: false,
        })
    }

    /// Incremental update: appends each labeled pair to the training data,
    /// activates its kernel column when the marginal likelihood improves,
    /// prunes pinned bases, then re-optimizes all parameters on the union
    /// data.
    pub fn update_basis(
        &self,
        add: &[(DVector<T>, DVector<T>)],
        prune_threshold: T,
    ) -> Result<Self> {
        let mut model = self.clone();
        if add.is_empty() {
            return Ok(model);
        }
        model.settings.prune_threshold = prune_threshold;
        let off = usize::from(model.basis.bias);

        for (x, t) in add {
            let gain = model.ml_delta(x, t)?;
            model.train_x.push(x.clone());
            let n = model.train_t.nrows();
            model.train_t = model.train_t.clone().insert_row(n, T::zero());
            for d in 0..model.train_t.ncols() {
                model.train_t[(n, d)] = t[d];
            }
            // The anchor joins the candidate pool either way; only positive
            // gains activate it now.
            let col = match model.basis.find_duplicate(x) {
                Some(j) => j + off,
                None => {
                    model.basis.push_anchor(x.clone());
                    model.alpha.push(T::zero());
                    model.basis.anchors.len() - 1 + off
                }
            };
            if gain.duplicate || gain.delta <= T::zero() {
                continue;
            }
            if let Some(alpha) = model.activation_alpha(col)? {
                model.set_active(col, true);
                model.alpha[col] = alpha;
            }
        }

        // Prune pinned bases (keep at least one active column).
        let cols = model.basis.active_columns();
        for &c in &cols {
            if model.alpha[c] > prune_threshold && model.basis.active_count() > 1 {
                model.set_active(c, false);
            }
        }

        let max_iters = model.settings.max_update_iters;
        let converged = model.optimize(max_iters, true)?;
        model.converged = converged;
        Ok(model)
    }

    /// Direct evaluation of the log marginal likelihood of the current
    /// parameters on the current training data.
    pub fn current_log_ml(&self) -> Result<T> {
        let cols = self.basis.active_columns();
        let phi_a = self.design_matrix(&self.train_x, &cols);
        let alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
        let post =
            self.posterior_for(&phi_a, &alpha_active, &self.train_t, self.sigma_d, &cols)?;
        Ok(post.log_ml)
    }

    /// Training root-mean-square error over all output dimensions.
    pub fn train_rmse(&self) -> Result<T> {
        let mut acc = T::zero();
        for (i, x) in self.train_x.iter().enumerate() {
            let (mean, _) = self.predict(x)?;
            for d in 0..self.n_outputs() {
                let e = mean[d] - self.train_t[(i, d)];
                acc += e * e;
            }
        }
        let count = real::<T>((self.train_x.len() * self.n_outputs()) as f64);
        Ok((acc / count).sqrt())
    }

    // ----- internals -------------------------------------------------------

    fn set_active(&mut self, col: usize, on: bool) {
        if self.basis.bias && col == 0 {
            self.basis.bias_active = on;
        } else {
            let off = usize::from(self.basis.bias);
            self.basis.active[col - off] = on;
        }
    }

    fn is_active(&self, col: usize) -> bool {
        if self.basis.bias && col == 0 {
            self.basis.bias_active
        } else {
            let off = usize::from(self.basis.bias);
            self.basis.active[col - off]
        }
    }

    fn column_vector(&self, col: usize, rows: &[DVector<T>]) -> DVector<T> {
        let off = usize::from(self.basis.bias);
        if self.basis.bias && col == 0 {
            DVector::from_element(rows.len(), T::one())
        } else {
            let anchor = &self.basis.anchors[col - off];
            DVector::from_fn(rows.len(), |i, _| self.kernel.eval(&rows[i], anchor))
        }
    }

    fn design_matrix(&self, rows: &[DVector<T>], cols: &[usize]) -> DMatrix<T> {
        let mut phi = DMatrix::zeros(rows.len(), cols.len());
        for (k, &c) in cols.iter().enumerate() {
            phi.set_column(k, &self.column_vector(c, rows));
        }
        phi
    }

    fn full_design(&self) -> DMatrix<T> {
        let k = self.basis.n_columns();
        let mut phi = DMatrix::zeros(self.train_x.len(), k);
        for c in 0..k {
            phi.set_column(c, &self.column_vector(c, &self.train_x));
        }
        phi
    }

    fn posterior_for(
        &self,
        phi_a: &DMatrix<T>,
        alpha: &[T],
        t: &DMatrix<T>,
        sigma2: T,
        cols: &[usize],
    ) -> Result<Posterior<T>> {
        let n = phi_a.nrows();
        let m = phi_a.ncols();
        let d_out = t.ncols();
        let inv_s2 = T::one() / sigma2;

        let mut h = phi_a.tr_mul(phi_a) * inv_s2;
        for i in 0..m {
            h[(i, i)] += alpha[i];
        }
        let chol = chol_with_jitter(h)?;
        let logdet_h = real::<T>(2.0)
            * (0..m)
                .map(|i| chol.l_dirty()[(i, i)].ln())
                .sum::<T>();
        let sigma = chol.inverse();
        let b = phi_a.tr_mul(t) * inv_s2;
        let mu = &sigma * &b;

        let nf = real::<T>(n as f64);
        let df = real::<T>(d_out as f64);
        let two_pi = real::<T>(std::f64::consts::TAU);
        let sum_ln_alpha: T = alpha.iter().map(|&a| a.ln()).sum();
        let mut data_term = T::zero();
        for d in 0..d_out {
            let td = t.column(d);
            data_term += td.dot(&td) * inv_s2 - b.column(d).dot(&mu.column(d));
        }
        let log_ml = -real::<T>(0.5)
            * (df * nf * two_pi.ln()
                + df * (nf * sigma2.ln() + logdet_h - sum_ln_alpha)
                + data_term);

        Ok(Posterior {
            cols: cols.to_vec(),
            sigma,
            mu,
            log_ml,
        })
    }

    /// Capital S and Q factors for one candidate column vector.
    fn candidate_factors(
        &self,
        phi_a: &DMatrix<T>,
        post: &Posterior<T>,
        t: &DMatrix<T>,
        cand: &DVector<T>,
    ) -> (T, Vec<T>) {
        let inv_s2 = T::one() / self.sigma_d;
        let p = phi_a.tr_mul(cand) * inv_s2;
        let sp = &post.sigma * &p;
        let s = cand.dot(cand) * inv_s2 - p.dot(&sp);
        let q: Vec<T> = (0..t.ncols())
            .map(|d| cand.dot(&t.column(d)) * inv_s2 - p.dot(&post.mu.column(d)))
            .collect();
        (s, q)
    }

    /// Optimal activation precision for an inactive column on the current
    /// data, or `None` when inclusion does not improve the marginal
    /// likelihood.
    fn activation_alpha(&self, col: usize) -> Result<Option<T>> {
        let cols = self.basis.active_columns();
        let rows = &self.train_x;
        let phi_a = self.design_matrix(rows, &cols);
        let alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
        let post =
            self.posterior_for(&phi_a, &alpha_active, &self.train_t, self.sigma_d, &cols)?;
        let cand = self.column_vector(col, rows);
        let (s, q) = self.candidate_factors(&phi_a, &post, &self.train_t, &cand);
        let d_out = real::<T>(self.n_outputs() as f64);
        let qsq: T = q.iter().map(|&v| v * v).sum();
        if s <= T::zero() || qsq <= d_out * s {
            return Ok(None);
        }
        let u = qsq / d_out;
        Ok(Some(s * s / (u - s)))
    }

    fn seed_first_basis(&mut self) -> Result<()> {
        let phi_all = self.full_design();
        let inv_s2 = T::one() / self.sigma_d;
        let d_out = real::<T>(self.n_outputs() as f64);
        let mut best: Option<(usize, T, T)> = None; // (col, alpha, delta)
        for c in 0..self.basis.n_columns() {
            let v = phi_all.column(c);
            let s = v.dot(&v) * inv_s2;
            if s <= T::zero() {
                continue;
            }
            let qsq: T = (0..self.train_t.ncols())
                .map(|d| {
                    let q = v.dot(&self.train_t.column(d)) * inv_s2;
                    q * q
                })
                .sum();
            if qsq <= d_out * s {
                continue;
            }
            let u = qsq / d_out;
            let alpha = s * s / (u - s);
            let delta = real::<T>(0.5) * d_out * ((u - s) / s + (s / u).ln());
            if best.map_or(true, |(_, _, bd)| delta > bd) {
                best = Some((c, alpha, delta));
            }
        }
        match best {
            Some((c, alpha, _)) => {
                self.set_active(c, true);
                self.alpha[c] = alpha;
            }
            None => {
                // Degenerate targets (e.g. all zero): keep one pinned basis
                // so the model shape stays valid; weights stay near zero.
                let c = 0;
                self.set_active(c, true);
                self.alpha[c] = self.settings.prune_threshold * real::<T>(0.5);
            }
        }
        Ok(())
    }

    fn refresh_outputs(&mut self, post: &Posterior<T>) {
        self.weights = post.mu.transpose();
        self.sigma = post.sigma.clone();
    }

    /// One-action-per-iteration optimization with safeguarded noise updates.
    /// Returns true when converged within the budget.
    fn optimize(&mut self, max_iters: usize, allow_swaps: bool) -> Result<bool> {
        let d_out = self.n_outputs();
        let df = real::<T>(d_out as f64);
        let n = self.train_x.len();
        let phi_all = self.full_design();
        // Precompute per-column norms and target correlations.
        let vt = phi_all.tr_mul(&self.train_t); // K x D
        let col_sq: Vec<T> = (0..phi_all.ncols())
            .map(|c| phi_all.column(c).norm_squared())
            .collect();

        let mut cols = self.basis.active_columns();
        let mut alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
        let mut phi_a = Self::gather(&phi_all, &cols);
        let mut post =
            self.posterior_for(&phi_a, &alpha_active, &self.train_t, self.sigma_d, &cols)?;
        self.log_ml_history.push(post.log_ml);

        // Columns whose applied action failed the monotonicity check are
        // banned for the rest of this pass (cleared when the noise moves).
        let mut banned = vec![false; phi_all.ncols()];
        let mut converged = false;
        for _ in 0..max_iters {
            let mut improved = false;

            // Score every column.
            let inv_s2 = T::one() / self.sigma_d;
            let p_mat = phi_a.tr_mul(&phi_all) * inv_s2; // M x K
            let sp = &post.sigma * &p_mat; // M x K
            let mut best: Option<(Action<T>, T)> = None;
            for c in 0..phi_all.ncols() {
                if banned[c] {
                    continue;
                }
                let s_cap = col_sq[c] * inv_s2 - p_mat.column(c).dot(&sp.column(c));
                if !s_cap.finite() {
                    continue;
                }
                let q_cap: Vec<T> = (0..d_out)
                    .map(|d| vt[(c, d)] * inv_s2 - p_mat.column(c).dot(&post.mu.column(d)))
                    .collect();
                let active = self.is_active(c);
                let (s, q): (T, Vec<T>) = if active {
                    let a = self.alpha[c];
                    let denom = a - s_cap;
                    if denom > real::<T>(1e-6) * a.max(T::one()) {
                        (
                            a * s_cap / denom,
                            q_cap.iter().map(|&qq| a * qq / denom).collect(),
                        )
                    } else {
                        // Near-duplicate active columns make the rank-one
                        // leave-one-out factors cancel catastrophically;
                        // recompute them against the explicitly downdated
                        // posterior instead.
                        let cols_m: Vec<usize> =
                            cols.iter().copied().filter(|&cc| cc != c).collect();
                        let alpha_m: Vec<T> = cols_m.iter().map(|&cc| self.alpha[cc]).collect();
                        let phi_m = Self::gather(&phi_all, &cols_m);
                        let post_m = self.posterior_for(
                            &phi_m,
                            &alpha_m,
                            &self.train_t,
                            self.sigma_d,
                            &cols_m,
                        )?;
                        let cand = phi_all.column(c).into_owned();
                        let (s_d, q_d) =
                            self.candidate_factors(&phi_m, &post_m, &self.train_t, &cand);
                        (s_d, q_d)
                    }
                } else {
                    (s_cap, q_cap)
                };
                if s <= T::zero() {
                    continue;
                }
                let qsq: T = q.iter().map(|&v| v * v).sum();
                let theta = qsq - df * s;
                let u = qsq / df;

                let l_of = |a: T| -> T {
                    real::<T>(0.5) * (df * (a / (a + s)).ln() + qsq / (a + s))
                };

                if theta > T::zero() {
                    let a_new = s * s / (u - s);
                    if !active {
                        if self.aligned_with_active(&phi_all, &cols, &col_sq, c, inv_s2, &p_mat) {
                            continue;
                        }
                        let delta = real::<T>(0.5) * df * ((u - s) / s + (s / u).ln());
                        if delta.finite() && best.as_ref().map_or(true, |&(_, bd)| delta > bd) {
                            best = Some((Action::Add { col: c, alpha: a_new }, delta));
                        }
                    } else {
                        let delta = l_of(a_new) - l_of(self.alpha[c]);
                        if delta.finite() && best.as_ref().map_or(true, |&(_, bd)| delta > bd) {
                            best = Some((
                                Action::Reestimate { col: c, alpha: a_new },
                                delta,
                            ));
                        }
                    }
                } else if active && self.basis.active_count() > 1 {
                    let delta = -l_of(self.alpha[c]);
                    if delta.finite() && best.as_ref().map_or(true, |&(_, bd)| delta > bd) {
                        best = Some((Action::Delete { col: c }, delta));
                    }
                }
            }

            let tol_eff = self.settings.tol_delta * (T::one() + post.log_ml.abs());
            if let Some((action, delta)) = best {
                if delta > tol_eff {
                    let col = match &action {
                        Action::Add { col, .. }
                        | Action::Reestimate { col, .. }
                        | Action::Delete { col } => *col,
                    };
                    let saved_active = self.is_active(col);
                    let saved_alpha = self.alpha[col];
                    match action {
                        Action::Add { col, alpha } | Action::Reestimate { col, alpha } => {
                            self.set_active(col, true);
                            self.alpha[col] = alpha.min(self.settings.prune_threshold);
                        }
                        Action::Delete { col } => self.set_active(col, false),
                    }
                    // Verify the realized gain; ill-conditioning can make a
                    // predicted improvement a real regression.
                    let cols_v = self.basis.active_columns();
                    let alpha_v: Vec<T> = cols_v.iter().map(|&c| self.alpha[c]).collect();
                    let phi_v = Self::gather(&phi_all, &cols_v);
                    let post_v = self.posterior_for(
                        &phi_v,
                        &alpha_v,
                        &self.train_t,
                        self.sigma_d,
                        &cols_v,
                    )?;
                    if post_v.log_ml >= post.log_ml - real::<T>(1e-12) * (T::one() + post.log_ml.abs()) {
                        if std::env::var("RVM_TRACE").is_ok() {
                            eprintln!(
                                "act col={col} dL_pred={:.3e} dL_real={:.3e} L={:.6} s2={:.3e} M={}",
                                delta.to_f64().unwrap_or(0.0),
                                (post_v.log_ml - post.log_ml).to_f64().unwrap_or(0.0),
                                post_v.log_ml.to_f64().unwrap_or(0.0),
                                self.sigma_d.to_f64().unwrap_or(0.0),
                                self.basis.active_count()
                            );
                        }
                        post = post_v;
                        cols = cols_v;
                        alpha_active = alpha_v;
                        phi_a = phi_v;
                        improved = true;
                    } else {
                        if std::env::var("RVM_TRACE").is_ok() {
                            eprintln!("ban col={col} dL_pred={:.3e}", delta.to_f64().unwrap_or(0.0));
                        }
                        self.set_active(col, saved_active);
                        self.alpha[col] = saved_alpha;
                        banned[col] = true;
                    }
                }
            }

            // Safeguarded noise re-estimate: a damped line search toward the
            // fixed-point update, accepting only marginal-likelihood ascent.
            // Runs when the basis actions stall at the current noise level
            // (collapsing the noise before the basis set stabilizes would let
            // every residual wiggle recruit a column), plus periodically so
            // an endless trickle of micro re-estimates cannot starve it.
            if !improved {
                let mut resid = T::zero();
                for d in 0..d_out {
                    let pred = &phi_a * post.mu.column(d);
                    resid += (self.train_t.column(d) - pred).norm_squared();
                }
                let gamma: T = (0..cols.len())
                    .map(|i| T::one() - alpha_active[i] * post.sigma[(i, i)])
                    .sum();
                let denom = df * (real::<T>(n as f64) - gamma);
                if denom > T::zero() {
                    let target = (resid / denom).max(self.settings.sigma_floor);
                    let full_step = target.ln() - self.sigma_d.ln();
                    if full_step.abs() > real::<T>(1e-10) {
                        let mut frac = T::one();
                        for _ in 0..6 {
                            let cand = (self.sigma_d.ln() + full_step * frac).exp();
                            let trial = self.posterior_for(
                                &phi_a,
                                &alpha_active,
                                &self.train_t,
                                cand,
                                &cols,
                            )?;
                            if trial.log_ml > post.log_ml + real::<T>(1e-12) {
                                if std::env::var("RVM_TRACE").is_ok() {
                                    eprintln!(
                                        "s2 {:.4e} -> {:.4e} dL={:.3e}",
                                        self.sigma_d.to_f64().unwrap_or(0.0),
                                        cand.to_f64().unwrap_or(0.0),
                                        (trial.log_ml - post.log_ml).to_f64().unwrap_or(0.0)
                                    );
                                }
                                self.sigma_d = cand;
                                post = trial;
                                improved = true;
                                banned.fill(false);
                                break;
                            }
                            frac *= real(0.5);
                        }
                    }
                }
            }

            // Swap refinement: delete-one/add-one transactions once
            // everything else has stalled. Immediately-positive pairs are
            // applied directly; otherwise the top stalled pairs get a
            // bounded re-optimization lookahead.
            if !improved && allow_swaps && self.settings.swap_refinement {
                let pairs = self.swap_candidates(&phi_all, &col_sq, post.log_ml)?;
                if let Some(&(out_col, in_col, in_alpha, total)) = pairs.first() {
                    if total > tol_eff {
                        self.set_active(out_col, false);
                        self.set_active(in_col, true);
                        self.alpha[in_col] = in_alpha.min(self.settings.prune_threshold);
                        improved = true;
                    }
                }
                if !improved && self.settings.swap_lookahead > 0 {
                    let mut adopt: Option<Self> = None;
                    for &(out_col, in_col, in_alpha, _) in
                        pairs.iter().take(self.settings.swap_lookahead)
                    {
                        let mut trial = self.clone();
                        trial.set_active(out_col, false);
                        trial.set_active(in_col, true);
                        trial.alpha[in_col] = in_alpha.min(trial.settings.prune_threshold);
                        trial.optimize(60, false)?;
                        let trial_ml = *trial.log_ml_history.last().expect("history");
                        let best_ml = adopt
                            .as_ref()
                            .map(|m: &Self| *m.log_ml_history.last().expect("history"))
                            .unwrap_or(post.log_ml + tol_eff);
                        if trial_ml > best_ml {
                            adopt = Some(trial);
                        }
                    }
                    if let Some(better) = adopt {
                        *self = better;
                        improved = true;
                    }
                }
            }

            if improved {
                // Settle the coupled active precisions, then refresh the
                // posterior for the next scan.
                self.polish_alphas(&phi_all, 200)?;
                cols = self.basis.active_columns();
                alpha_active = cols.iter().map(|&c| self.alpha[c]).collect();
                phi_a = Self::gather(&phi_all, &cols);
                post = self.posterior_for(
                    &phi_a,
                    &alpha_active,
                    &self.train_t,
                    self.sigma_d,
                    &cols,
                )?;
            }

            self.log_ml_history.push(post.log_ml);
            if !improved {
                converged = true;
                break;
            }
        }

        self.refresh_outputs(&post);
        Ok(converged)
    }

    /// True when candidate column `c` is nearly collinear with an active
    /// column.
    fn aligned_with_active(
        &self,
        phi_all: &DMatrix<T>,
        cols: &[usize],
        col_sq: &[T],
        c: usize,
        inv_s2: T,
        p_mat: &DMatrix<T>,
    ) -> bool {
        // p_mat holds (phi_a' phi_all) / sigma^2.
        let norm_c = col_sq[c].sqrt();
        if norm_c <= T::zero() {
            return true;
        }
        for (k, &ac) in cols.iter().enumerate() {
            let dot = p_mat[(k, c)] / inv_s2;
            let denom = norm_c * col_sq[ac].sqrt();
            if denom > T::zero() && (dot / denom).abs() > self.settings.alignment_max {
                return true;
            }
        }
        false
    }

    /// Coordinate ascent on the active precisions only: repeatedly apply
    /// the best re-estimate among active columns until gains die. Correlated
    /// columns couple their optima, which makes one-action-per-scan
    /// convergence crawl; polishing inside one outer iteration avoids
    /// rescoring the whole candidate pool each micro-step.
    fn polish_alphas(&mut self, phi_all: &DMatrix<T>, max_rounds: usize) -> Result<()> {
        let d_out = self.n_outputs();
        let df = real::<T>(d_out as f64);
        let inv_s2 = T::one() / self.sigma_d;
        let mut last_log_ml: Option<T> = None;
        let mut last_change: Option<(usize, T)> = None;
        for _ in 0..max_rounds {
            let cols = self.basis.active_columns();
            let m = cols.len();
            if m == 0 {
                return Ok(());
            }
            let alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
            let phi_a = Self::gather(phi_all, &cols);
            let post = self.posterior_for(
                &phi_a,
                &alpha_active,
                &self.train_t,
                self.sigma_d,
                &cols,
            )?;
            // Verify the previous move actually helped; revert and stop if
            // conditioning made its predicted gain a lie.
            if let (Some(prev), Some((c, old_alpha))) = (last_log_ml, last_change) {
                if post.log_ml < prev {
                    self.alpha[c] = old_alpha;
                    return Ok(());
                }
            }
            last_log_ml = Some(post.log_ml);
            last_change = None;
            let g = phi_a.tr_mul(&phi_a);
            let pt = phi_a.tr_mul(&self.train_t);
            let tol = self.settings.tol_delta * (T::one() + post.log_ml.abs());

            let mut best: Option<(usize, T, T)> = None; // (col, alpha_new, delta)
            for k in 0..m {
                let c = cols[k];
                let p = g.column(k) * inv_s2;
                let sp = &post.sigma * &p;
                let s_cap = g[(k, k)] * inv_s2 - p.dot(&sp);
                let a = self.alpha[c];
                let denom = a - s_cap;
                let (s, qsq): (T, T) = if s_cap.finite()
                    && denom > real::<T>(1e-6) * a.max(T::one())
                {
                    let s = a * s_cap / denom;
                    let qsq = (0..d_out)
                        .map(|d| {
                            let q_cap = pt[(k, d)] * inv_s2 - p.dot(&post.mu.column(d));
                            let q = a * q_cap / denom;
                            q * q
                        })
                        .sum();
                    (s, qsq)
                } else {
                    // Stabilized leave-one-out factors from the explicitly
                    // downdated posterior.
                    let cols_m: Vec<usize> =
                        cols.iter().copied().filter(|&cc| cc != c).collect();
                    if cols_m.is_empty() {
                        continue;
                    }
                    let alpha_m: Vec<T> = cols_m.iter().map(|&cc| self.alpha[cc]).collect();
                    let phi_m = Self::gather(phi_all, &cols_m);
                    let post_m = self.posterior_for(
                        &phi_m,
                        &alpha_m,
                        &self.train_t,
                        self.sigma_d,
                        &cols_m,
                    )?;
                    let cand = phi_all.column(c).into_owned();
                    let (s_d, q_d) =
                        self.candidate_factors(&phi_m, &post_m, &self.train_t, &cand);
                    (s_d, q_d.iter().map(|&q| q * q).sum())
                };
                if s <= T::zero() || qsq <= df * s {
                    continue;
                }
                let u = qsq / df;
                let a_new = s * s / (u - s);
                let l_of = |aa: T| -> T {
                    real::<T>(0.5) * (df * (aa / (aa + s)).ln() + qsq / (aa + s))
                };
                let delta = l_of(a_new.min(self.settings.prune_threshold)) - l_of(a);
                if delta.finite() && best.map_or(true, |(_, _, bd)| delta > bd) {
                    best = Some((c, a_new.min(self.settings.prune_threshold), delta));
                }
            }
            match best {
                Some((c, a_new, delta)) if delta > tol => {
                    last_change = Some((c, self.alpha[c]));
                    self.alpha[c] = a_new;
                }
                _ => return Ok(()),
            }
        }
        Ok(())
    }

    /// Delete-one/add-one transactions ranked by their exact immediate
    /// log-ML change (best first, one per removed column).
    fn swap_candidates(
        &self,
        phi_all: &DMatrix<T>,
        col_sq: &[T],
        current_log_ml: T,
    ) -> Result<Vec<(usize, usize, T, T)>> {
        let cols = self.basis.active_columns();
        let d_out = self.n_outputs();
        let df = real::<T>(d_out as f64);
        let inv_s2 = T::one() / self.sigma_d;
        let mut out: Vec<(usize, usize, T, T)> = Vec::new();

        for &out_col in &cols {
            let cols_m: Vec<usize> = cols.iter().copied().filter(|&c| c != out_col).collect();
            let alpha_m: Vec<T> = cols_m.iter().map(|&c| self.alpha[c]).collect();
            let phi_m = Self::gather(phi_all, &cols_m);
            let post_m =
                self.posterior_for(&phi_m, &alpha_m, &self.train_t, self.sigma_d, &cols_m)?;
            let delta_del = post_m.log_ml - current_log_ml;

            let p_mat = phi_m.tr_mul(phi_all) * inv_s2;
            let sp = &post_m.sigma * &p_mat;
            let mut best: Option<(usize, T, T)> = None;
            for c in 0..phi_all.ncols() {
                if c == out_col || self.is_active(c) {
                    continue;
                }
                let s = col_sq[c] * inv_s2 - p_mat.column(c).dot(&sp.column(c));
                if !s.finite() || s <= T::zero() {
                    continue;
                }
                let qsq: T = (0..d_out)
                    .map(|d| {
                        let q = phi_all.column(c).dot(&self.train_t.column(d)) * inv_s2
                            - p_mat.column(c).dot(&post_m.mu.column(d));
                        q * q
                    })
                    .sum();
                if qsq <= df * s {
                    continue;
                }
                let aligned = cols_m.iter().any(|&ac| {
                    let dot = phi_all.column(c).dot(&phi_all.column(ac));
                    let denom = col_sq[c].sqrt() * col_sq[ac].sqrt();
                    denom > T::zero() && (dot / denom).abs() > self.settings.alignment_max
                });
                if aligned {
                    continue;
                }
                let u = qsq / df;
                let delta_add = real::<T>(0.5) * df * ((u - s) / s + (s / u).ln());
                let total = delta_del + delta_add;
                if total.finite() && best.map_or(true, |(_, _, bt)| total > bt) {
                    best = Some((c, s * s / (u - s), total));
                }
            }
            if let Some((in_col, alpha, total)) = best {
                out.push((out_col, in_col, alpha, total));
            }
        }
        out.sort_by(|a, b| b.3.partial_cmp(&a.3).expect("finite deltas"));
        Ok(out)
    }

    fn gather(phi_all: &DMatrix<T>, cols: &[usize]) -> DMatrix<T> {
        let mut phi = DMatrix::zeros(phi_all.nrows(), cols.len());
        for (k, &c) in cols.iter().enumerate() {
            phi.set_column(k, &phi_all.column(c));
        }
        phi
    }

    /// Drops stale inactive candidate anchors, keeping every active anchor
    /// plus the `keep_inactive` most recent inactive ones. Bounds the cost
    /// of repeated incremental updates; the model's parameters are
    /// untouched.
    pub fn compact_candidates(&mut self, keep_inactive: usize) {
        let n = self.basis.anchors.len();
        let inactive: Vec<usize> = (0..n).filter(|&j| !self.basis.active[j]).collect();
        if inactive.len() <= keep_inactive {
            return;
        }
        let drop_count = inactive.len() - keep_inactive;
        let drop: &[usize] = &inactive[..drop_count];
        let off = usize::from(self.basis.bias);
        let mut anchors = Vec::with_capacity(n - drop_count);
        let mut active = Vec::with_capacity(n - drop_count);
        let mut alpha = Vec::with_capacity(n - drop_count + off);
        if self.basis.bias {
            alpha.push(self.alpha[0]);
        }
        for j in 0..n {
            if drop.binary_search(&j).is_ok() {
                continue;
            }
            anchors.push(self.basis.anchors[j].clone());
            active.push(self.basis.active[j]);
            alpha.push(self.alpha[j + off]);
        }
        self.basis.anchors = anchors;
        self.basis.active = active;
        self.alpha = alpha;
    }

    /// Active anchor inputs (relevance vectors), excluding the bias.
    pub fn relevance_vectors(&self) -> Vec<&DVector<T>> {
        let off = usize::from(self.basis.bias);
        self.basis
            .active_columns()
            .into_iter()
            .filter(|&c| !(self.basis.bias && c == 0))
            .map(|c| &self.basis.anchors[c - off])
            .collect()
    }

    pub fn train_rows(&self) -> (&[DVector<T>], &DMatrix<T>) {
        (&self.train_x, &self.train_t)
    }
}
