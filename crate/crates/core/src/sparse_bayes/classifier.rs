//! Sparse Bayesian softmax classifier.
//!
//! Kernelized multinomial logistic regression trained by IRLS with a
//! Laplace approximation per class and shared ARD precisions across
//! classes, so pruning removes a basis from every class at once. Used for
//! the view and expert gate functions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{real, Real};

use super::kernel::{BasisSet, KernelConfig};
use super::regressor::chol_with_jitter;

#[derive(Debug, Clone, Copy)]
pub struct ClassifierSettings<T: Real> {
    pub max_outer_iters: usize,
    pub max_irls_iters: usize,
    pub prune_threshold: T,
    pub max_anchors: usize,
    /// Anchor columns activated at initialization (ARD prunes from there).
    pub init_active: usize,
}

impl<T: Real> Default for ClassifierSettings<T> {
    fn default() -> Self {
        Self {
            max_outer_iters: 8,
            max_irls_iters: 30,
            prune_threshold: real(1e8),
            max_anchors: 200,
            init_active: 24,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RvmClassifier<T: Real> {
    pub kernel: KernelConfig<T>,
    pub basis: BasisSet<T>,
    /// Class weight vectors, `C x M`, aligned with the active columns.
    pub lambda: DMatrix<T>,
    /// ARD precisions per column id, shared across classes.
    pub alpha: Vec<T>,
    pub n_classes: usize,
    pub converged: bool,
    pub settings: ClassifierSettings<T>,
    train_x: Vec<DVector<T>>,
    train_y: Vec<usize>,
    trivial: bool,
}

impl<T: Real> RvmClassifier<T> {
    /// Gate with a single class: always outputs probability one. Used when
    /// a mixture level has only one expert.
    pub fn constant(kernel: KernelConfig<T>) -> Self {
        Self {
            kernel,
            basis: BasisSet::new(true),
            lambda: DMatrix::zeros(1, 0),
            alpha: Vec::new(),
            n_classes: 1,
            converged: true,
            settings: ClassifierSettings::default(),
            train_x: Vec::new(),
            train_y: Vec::new(),
            trivial: true,
        }
    }

    pub fn fit(
        inputs: &[DVector<T>],
        labels: &[usize],
        n_classes: usize,
        kernel: KernelConfig<T>,
        settings: ClassifierSettings<T>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "classifier labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyInput("classifier training set"));
        }
        if n_classes < 2 {
            return Err(Error::DegenerateLabels { class: 1 });
        }
        for c in 0..n_classes {
            if !labels.contains(&c) {
                return Err(Error::DegenerateLabels { class: c });
            }
        }
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidConfig("label out of range".into()));
        }

        let mut basis = BasisSet::new(true);
        let stride = (inputs.len() + settings.max_anchors - 1) / settings.max_anchors;
        for x in inputs.iter().step_by(stride.max(1)) {
            basis.push_anchor(x.clone());
        }
        basis.bias_active = true;
        let n_anchors = basis.anchors.len();
        let init_stride = (n_anchors / settings.init_active.max(1)).max(1);
        for j in (0..n_anchors).step_by(init_stride) {
            basis.active[j] = true;
        }

        let mut model = Self {
            kernel,
            basis,
            lambda: DMatrix::zeros(n_classes, 0),
            alpha: Vec::new(),
            n_classes,
            converged: false,
            settings,
            train_x: inputs.to_vec(),
            train_y: labels.to_vec(),
            trivial: false,
        };
        model.alpha = vec![real(1e-2); model.basis.n_columns()];
        model.alpha[0] = real(1e-6); // bias stays cheap and unpruned
        model.lambda = DMatrix::zeros(n_classes, model.basis.active_count());
        let converged = model.reestimate(settings.max_outer_iters)?;
        model.converged = converged;
        Ok(model)
    }

    /// Softmax class probabilities for one input.
    pub fn predict_proba(&self, input: &DVector<T>) -> Result<DVector<T>> {
        if self.trivial {
            return Ok(DVector::from_element(1, T::one()));
        }
        let phi = self.basis.design_row(&self.kernel, input)?;
        let logits = &self.lambda * &phi;
        Ok(softmax(&logits))
    }

    pub fn predict(&self, input: &DVector<T>) -> Result<usize> {
        let p = self.predict_proba(input)?;
        Ok(argmax(&p))
    }

    pub fn accuracy(&self, inputs: &[DVector<T>], labels: &[usize]) -> Result<T> {
        let mut hits = 0usize;
        for (x, &y) in inputs.iter().zip(labels) {
            if self.predict(x)? == y {
                hits += 1;
            }
        }
        Ok(real::<T>(hits as f64) / real::<T>(inputs.len() as f64))
    }

    /// Appends labeled rows, activates anchors whose inclusion improves the
    /// (Laplace-linearized) marginal likelihood, prunes pinned columns, and
    /// re-estimates parameters.
    pub fn update_basis(&self, add: &[(DVector<T>, usize)], prune_threshold: T) -> Result<Self> {
        if self.trivial || add.is_empty() {
            return Ok(self.clone());
        }
        let mut model = self.clone();
        model.settings.prune_threshold = prune_threshold;
        let off = usize::from(model.basis.bias);
        for (x, y) in add {
            if *y >= model.n_classes {
                return Err(Error::InvalidConfig("label out of range".into()));
            }
            model.train_x.push(x.clone());
            model.train_y.push(*y);
            let dup = model.basis.find_duplicate(x);
            if let Some(j) = dup {
                if model.basis.active[j] {
                    continue;
                }
            }
            if model.candidate_gain(x)? > T::zero() {
                let j = match dup {
                    Some(j) => j,
                    None => {
                        let j = model
                            .basis
                            .push_anchor(x.clone())
                            .expect("duplicate already handled");
                        model.alpha.push(real(1e-2));
                        j
                    }
                };
                model.basis.active[j] = true;
                model.insert_lambda_column(j + off);
                model.reestimate(1)?;
            }
        }
        // Prune pinned columns (bias always stays).
        for j in 0..model.basis.active.len() {
            if model.basis.active[j] && model.alpha[j + off] > prune_threshold {
                model.basis.active[j] = false;
            }
        }
        let outer = 3.min(model.settings.max_outer_iters);
        model.reestimate(outer)?;
        Ok(model)
    }

    /// Drops stale inactive candidate anchors, keeping the `keep_inactive`
    /// most recent. Parameters are untouched.
    pub fn compact_candidates(&mut self, keep_inactive: usize) {
        if self.trivial {
            return;
        }
        let n = self.basis.anchors.len();
        let inactive: Vec<usize> = (0..n).filter(|&j| !self.basis.active[j]).collect();
        if inactive.len() <= keep_inactive {
            return;
        }
        let drop_count = inactive.len() - keep_inactive;
        let drop: &[usize] = &inactive[..drop_count];
        let off = usize::from(self.basis.bias);
        let mut anchors = Vec::new();
        let mut active = Vec::new();
        let mut alpha = Vec::new();
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

    pub fn train_len(&self) -> usize {
        self.train_x.len()
    }

    pub fn train_rows(&self) -> (&[DVector<T>], &[usize]) {
        (&self.train_x, &self.train_y)
    }

    // ----- internals -------------------------------------------------------

    /// Inserts a zero weight column for a newly activated column id, keeping
    /// `lambda` aligned with `active_columns()` ordering.
    fn insert_lambda_column(&mut self, col_id: usize) {
        let pos = self
            .basis
            .active_columns()
            .iter()
            .position(|&c| c == col_id)
            .expect("column was just activated");
        self.lambda = self.lambda.clone().insert_column(pos, T::zero());
    }

    fn design(&self) -> DMatrix<T> {
        let cols = self.basis.active_columns();
        let mut phi = DMatrix::zeros(self.train_x.len(), cols.len());
        for (i, x) in self.train_x.iter().enumerate() {
            let row = self.basis.design_row(&self.kernel, x).expect("dims fixed");
            for k in 0..cols.len() {
                phi[(i, k)] = row[k];
            }
        }
        phi
    }

    fn penalized_loglik(&self, phi: &DMatrix<T>, lambda: &DMatrix<T>, alpha: &[T]) -> T {
        let mut ll = T::zero();
        for (i, &y) in self.train_y.iter().enumerate() {
            let logits = lambda * phi.row(i).transpose();
            let p = softmax(&logits);
            ll += p[y].max(real(1e-300)).ln();
        }
        for c in 0..lambda.nrows() {
            for (k, &a) in alpha.iter().enumerate() {
                ll -= real::<T>(0.5) * a * lambda[(c, k)] * lambda[(c, k)];
            }
        }
        ll
    }

    /// IRLS + ARD outer loop at the current active set. Returns true when
    /// the weight updates converged.
    fn reestimate(&mut self, max_outer: usize) -> Result<bool> {
        let mut converged = false;
        for _ in 0..max_outer {
            let cols = self.basis.active_columns();
            let m = cols.len();
            let phi = self.design();
            let alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
            let mut lambda = if self.lambda.ncols() == m {
                self.lambda.clone()
            } else {
                DMatrix::zeros(self.n_classes, m)
            };

            // IRLS with step halving on the penalized log likelihood.
            let mut obj = self.penalized_loglik(&phi, &lambda, &alpha_active);
            let mut moved = T::zero();
            for _ in 0..self.settings.max_irls_iters {
                let mut probs = DMatrix::zeros(self.train_x.len(), self.n_classes);
                for i in 0..self.train_x.len() {
                    let logits = &lambda * phi.row(i).transpose();
                    let p = softmax(&logits);
                    for c in 0..self.n_classes {
                        probs[(i, c)] = p[c];
                    }
                }
                let mut proposal = lambda.clone();
                for c in 0..self.n_classes {
                    let mut grad = DVector::zeros(m);
                    let mut h = DMatrix::zeros(m, m);
                    for i in 0..self.train_x.len() {
                        let p = probs[(i, c)];
                        let y = if self.train_y[i] == c { T::one() } else { T::zero() };
                        let r = y - p;
                        let b = (p * (T::one() - p)).max(real(1e-6));
                        for k in 0..m {
                            grad[k] += phi[(i, k)] * r;
                            for l in k..m {
                                h[(k, l)] += phi[(i, k)] * phi[(i, l)] * b;
                            }
                        }
                    }
                    for k in 0..m {
                        for l in 0..k {
                            h[(k, l)] = h[(l, k)];
                        }
                        grad[k] -= alpha_active[k] * lambda[(c, k)];
                        h[(k, k)] += alpha_active[k];
                    }
                    let chol = chol_with_jitter(h)?;
                    let step = chol.solve(&grad);
                    for k in 0..m {
                        proposal[(c, k)] = lambda[(c, k)] + step[k];
                    }
                }
                // Step halving.
                let mut scale = T::one();
                let mut accepted = false;
                for _ in 0..12 {
                    let trial = &lambda + (&proposal - &lambda) * scale;
                    let trial_obj = self.penalized_loglik(&phi, &trial, &alpha_active);
                    if trial_obj >= obj - real::<T>(1e-12) {
                        moved = (&trial - &lambda).amax();
                        lambda = trial;
                        obj = trial_obj;
                        accepted = true;
                        break;
                    }
                    scale *= real(0.5);
                }
                if !accepted || moved < real(1e-8) {
                    break;
                }
            }

            // ARD update from the per-class Laplace Hessians.
            let mut probs = DMatrix::zeros(self.train_x.len(), self.n_classes);
            for i in 0..self.train_x.len() {
                let logits = &lambda * phi.row(i).transpose();
                let p = softmax(&logits);
                for c in 0..self.n_classes {
                    probs[(i, c)] = p[c];
                }
            }
            let mut gamma_sum = vec![T::zero(); m];
            for c in 0..self.n_classes {
                let mut h = DMatrix::zeros(m, m);
                for i in 0..self.train_x.len() {
                    let p = probs[(i, c)];
                    let b = (p * (T::one() - p)).max(real(1e-6));
                    for k in 0..m {
                        for l in k..m {
                            h[(k, l)] += phi[(i, k)] * phi[(i, l)] * b;
                        }
                    }
                }
                for k in 0..m {
                    for l in 0..k {
                        h[(k, l)] = h[(l, k)];
                    }
                    h[(k, k)] += alpha_active[k];
                }
                let sigma = chol_with_jitter(h)?.inverse();
                for k in 0..m {
                    gamma_sum[k] += T::one() - alpha_active[k] * sigma[(k, k)];
                }
            }
            let mut alpha_changed = T::zero();
            for (k, &c) in cols.iter().enumerate() {
                if self.basis.bias && c == 0 {
                    continue;
                }
                let wsq: T = (0..self.n_classes)
                    .map(|cl| lambda[(cl, k)] * lambda[(cl, k)])
                    .sum();
                let new_alpha = if wsq > real(1e-300) {
                    (gamma_sum[k].max(real(1e-12)) / wsq)
                        .max(real(1e-6))
                        .min(real(1e12))
                } else {
                    real(1e12)
                };
                alpha_changed = alpha_changed.max((new_alpha.ln() - self.alpha[c].ln()).abs());
                self.alpha[c] = new_alpha;
            }

            self.lambda = lambda;

            // Prune pinned columns; keep bias.
            let off = usize::from(self.basis.bias);
            let mut pruned = false;
            for (k, &c) in cols.iter().enumerate().rev() {
                if self.basis.bias && c == 0 {
                    continue;
                }
                if self.alpha[c] > self.settings.prune_threshold {
                    self.basis.active[c - off] = false;
                    self.lambda = self.lambda.clone().remove_column(k);
                    pruned = true;
                }
            }

            if !pruned && alpha_changed < real(1e-3) {
                converged = true;
                break;
            }
        }
        Ok(converged)
    }

    /// Laplace-linearized marginal-likelihood gain for activating an anchor
    /// at `input`; positive means inclusion improves the evidence.
    fn candidate_gain(&self, input: &DVector<T>) -> Result<T> {
        let cols = self.basis.active_columns();
        let m = cols.len();
        let phi = self.design();
        let alpha_active: Vec<T> = cols.iter().map(|&c| self.alpha[c]).collect();
        let n = self.train_x.len();
        let cand = DVector::from_fn(n, |i, _| self.kernel.eval(&self.train_x[i], input));

        let mut s_sum = T::zero();
        let mut qsq_sum = T::zero();
        for c in 0..self.n_classes {
            let mut bvec = DVector::zeros(n);
            let mut resid = DVector::zeros(n);
            for i in 0..n {
                let logits = &self.lambda * phi.row(i).transpose();
                let p = softmax(&logits);
                let y = if self.train_y[i] == c { T::one() } else { T::zero() };
                bvec[i] = (p[c] * (T::one() - p[c])).max(real(1e-6));
                resid[i] = y - p[c];
            }
            let mut h = DMatrix::zeros(m, m);
            for i in 0..n {
                for k in 0..m {
                    for l in k..m {
                        h[(k, l)] += phi[(i, k)] * phi[(i, l)] * bvec[i];
                    }
                }
            }
            for k in 0..m {
                for l in 0..k {
                    h[(k, l)] = h[(l, k)];
                }
                h[(k, k)] += alpha_active[k];
            }
            let sigma = chol_with_jitter(h)?.inverse();
            let bphi_v = DVector::from_fn(m, |k, _| {
                (0..n).map(|i| phi[(i, k)] * bvec[i] * cand[i]).sum()
            });
            let s_c = (0..n).map(|i| cand[i] * cand[i] * bvec[i]).sum::<T>()
                - (&sigma * &bphi_v).dot(&bphi_v);
            let q_c = cand.dot(&resid);
            s_sum += s_c.max(real(1e-12));
            qsq_sum += q_c * q_c;
        }
        let cf = real::<T>(self.n_classes as f64);
        let s_bar = s_sum / cf;
        if qsq_sum <= cf * s_bar {
            return Ok(T::zero());
        }
        let u = qsq_sum / cf;
        Ok(real::<T>(0.5) * cf * ((u - s_bar) / s_bar + (s_bar / u).ln()))
    }
}

pub(crate) fn softmax<T: Real>(logits: &DVector<T>) -> DVector<T> {
    let max = logits.iter().copied().fold(logits[0], |a, b| a.max(b));
    let mut out = logits.map(|v| (v - max).exp());
    let sum: T = out.iter().copied().sum();
    out /= sum;
    out
}

pub(crate) fn argmax<T: Real>(v: &DVector<T>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
