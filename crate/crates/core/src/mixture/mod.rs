//! Gated Gaussian-mixture conditional densities.
//!
//! Two models share the machinery: the two-level hierarchical mixture
//! `HbmeModel` (view gate over orientation bins, ambiguity gate over experts
//! within each view) mapping descriptors to states, and the single-level
//! conditional mixture `CbmeModel` over joint (previous state, descriptor)
//! inputs with product kernels.
//!
//! Expert partitioning is residual-driven EM with k-means initialization in
//! the output space: assign each sample to its best-predicting expert,
//! refit, repeat until assignments settle.

use std::collections::VecDeque;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::StateVector;
use crate::multimodality::kmeans_fit;
use crate::sparse_bayes::{ClassifierSettings, KernelConfig, RvmClassifier, RvmRegressor, RvmSettings};
use crate::{real, rng, Real};

/// One Gaussian component of a predictive density.
#[derive(Debug, Clone)]
pub struct DensityComponent<T: Real> {
    pub weight: T,
    pub mean: DVector<T>,
    /// Per-dimension variances (the expert's scalar variance broadcast).
    pub var: DVector<T>,
}

/// Mixture-of-Gaussians conditional density over states.
#[derive(Debug, Clone)]
pub struct PredictiveDensity<T: Real> {
    pub components: Vec<DensityComponent<T>>,
}

impl<T: Real> PredictiveDensity<T> {
    pub fn new(mut components: Vec<DensityComponent<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("density components"));
        }
        let mut total = T::zero();
        for c in &components {
            if c.weight < T::zero() || !c.weight.finite() {
                return Err(Error::NonFinite("component weight"));
            }
            if c.var.iter().any(|&v| v <= T::zero() || !v.finite()) {
                return Err(Error::NonFinite("component variance"));
            }
            total += c.weight;
        }
        if total <= T::zero() {
            return Err(Error::DegenerateWeights);
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Mixture mean.
    pub fn mean(&self) -> DVector<T> {
        let mut acc = DVector::zeros(self.dim());
        for c in &self.components {
            acc += &c.mean * c.weight;
        }
        acc
    }

    /// Ancestral sampling: component by weight, then diagonal Gaussian.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Vec<StateVector<T>> {
        let mut r = rng::stream(rng_seed, "density-sample");
        (0..n).map(|_| self.sample_one(&mut r)).collect()
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> StateVector<T> {
        let mut u = rng::unit_uniform::<T, _>(rng);
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            if u <= c.weight {
                idx = i;
                break;
            }
            u -= c.weight;
        }
        let c = &self.components[idx];
        let mut x = c.mean.clone();
        for d in 0..x.len() {
            x[d] += c.var[d].sqrt() * rng::std_normal::<T, _>(rng);
        }
        StateVector(x)
    }

    /// Mixture density at a point.
    pub fn pdf(&self, x: &StateVector<T>) -> T {
        let mut acc = T::zero();
        for c in &self.components {
            acc += c.weight * diag_gauss_pdf(&c.mean, &c.var, x.as_vector());
        }
        acc
    }

    /// Index and responsibility of the component most responsible for `x`.
    pub fn max_responsibility(&self, x: &StateVector<T>) -> (usize, T) {
        let mut best = 0usize;
        let mut best_r = T::zero();
        let mut total = T::zero();
        for (i, c) in self.components.iter().enumerate() {
            let r = c.weight * diag_gauss_pdf(&c.mean, &c.var, x.as_vector());
            total += r;
            // Strictly-greater keeps ties at the lowest index.
            if r > best_r + real::<T>(1e-9) * best_r.max(T::one()) {
                best_r = r;
                best = i;
            }
        }
        if total > T::zero() {
            (best, best_r / total)
        } else {
            (0, T::zero())
        }
    }
}

fn diag_gauss_pdf<T: Real>(mean: &DVector<T>, var: &DVector<T>, x: &DVector<T>) -> T {
    let mut log_p = T::zero();
    let two_pi = real::<T>(std::f64::consts::TAU);
    for d in 0..mean.len() {
        let diff = x[d] - mean[d];
        log_p -= real::<T>(0.5) * ((two_pi * var[d]).ln() + diff * diff / var[d]);
    }
    log_p.exp()
}

/// Training and adaptation knobs shared by both mixture models.
#[derive(Debug, Clone, Copy)]
pub struct MixtureConfig<T: Real> {
    /// View bins at level one (hBME).
    pub n_views: usize,
    /// Experts per view at level two (hBME).
    pub n_experts: usize,
    /// Experts in the conditional model (cBME).
    pub m_experts: usize,
    /// Descriptor-block inverse kernel width; `None` = median heuristic.
    pub sigma_r: Option<T>,
    /// State-block inverse kernel width (cBME); `None` = median heuristic.
    pub sigma_x: Option<T>,
    pub em_max_iters: usize,
    pub min_cluster: usize,
    pub rvm: RvmSettings<T>,
    pub gate: ClassifierSettings<T>,
    pub seed: u64,
}

impl<T: Real> Default for MixtureConfig<T> {
    fn default() -> Self {
        Self {
            n_views: 8,
            n_experts: 2,
            m_experts: 5,
            sigma_r: None,
            sigma_x: None,
            em_max_iters: 10,
            min_cluster: 5,
            rvm: RvmSettings::default(),
            gate: ClassifierSettings::default(),
            seed: 0,
        }
    }
}

/// Residual-driven EM partition of (input, target) pairs into `k` experts,
/// seeded by k-means in the target space. Returns the fitted experts and
/// final assignments.
fn em_partition<T: Real>(
    inputs: &[DVector<T>],
    targets: &[DVector<T>],
    k: usize,
    kernel: KernelConfig<T>,
    rvm: RvmSettings<T>,
    em_max_iters: usize,
    min_cluster: usize,
    seed: u64,
) -> Result<(Vec<RvmRegressor<T>>, Vec<usize>)> {
    let n = inputs.len();
    let d_out = targets[0].len();
    if k == 1 {
        let t = nalgebra::DMatrix::from_fn(n, d_out, |i, d| targets[i][d]);
        let expert = RvmRegressor::fit(inputs, &t, kernel, rvm)?;
        return Ok((vec![expert], vec![0; n]));
    }

    let km = kmeans_fit(targets, k, seed, 50)?;
    let mut assign: Vec<usize> = targets.iter().map(|t| km.assign(t)).collect();
    rebalance(&mut assign, targets, &km, k, min_cluster);

    // Intermediate EM rounds only steer the assignment; they get a light
    // optimizer budget. The final experts are refit at full quality below.
    let mut light = rvm;
    light.max_outer_iters = 60;
    light.swap_lookahead = 0;
    light.tol_delta = real(1e-6);

    let fit_experts = |assign: &[usize], settings: RvmSettings<T>| -> Result<Vec<RvmRegressor<T>>> {
        (0..k)
            .map(|e| {
                let idx: Vec<usize> = (0..n).filter(|&i| assign[i] == e).collect();
                let xs: Vec<DVector<T>> = idx.iter().map(|&i| inputs[i].clone()).collect();
                let t = nalgebra::DMatrix::from_fn(idx.len(), d_out, |r, d| targets[idx[r]][d]);
                RvmRegressor::fit(&xs, &t, kernel, settings)
            })
            .collect()
    };

    let mut experts: Vec<RvmRegressor<T>> = Vec::new();
    for round in 0..em_max_iters {
        experts = fit_experts(&assign, light)?;

        let mut changed = 0usize;
        let mut proposal = vec![0usize; n];
        for i in 0..n {
            let mut best = 0usize;
            let mut best_err = T::max_value().unwrap_or_else(T::one);
            for (e, model) in experts.iter().enumerate() {
                let (mean, _) = model.predict(&inputs[i])?;
                let err = (&mean - &targets[i]).norm_squared();
                if err < best_err {
                    best_err = err;
                    best = e;
                }
            }
            proposal[i] = best;
            if best != assign[i] {
                changed += 1;
            }
        }
        // Keep every expert populated.
        for e in 0..k {
            let size = proposal.iter().filter(|&&a| a == e).count();
            if size < min_cluster {
                // Pull back the members it held before, preferring current ones.
                let mut needed = min_cluster - size;
                for i in 0..n {
                    if needed == 0 {
                        break;
                    }
                    if assign[i] == e
                        && proposal[i] != e
                        && proposal.iter().filter(|&&a| a == proposal[i]).count() > min_cluster
                    {
                        proposal[i] = e;
                        needed -= 1;
                    }
                }
            }
        }
        let frac_changed = changed as f64 / n as f64;
        assign = proposal;
        if round > 0 && frac_changed < 0.01 {
            break;
        }
    }
    experts = fit_experts(&assign, rvm)?;
    Ok((experts, assign))
}

fn rebalance<T: Real>(
    assign: &mut [usize],
    targets: &[DVector<T>],
    km: &crate::multimodality::ClusterModel<T>,
    k: usize,
    min_cluster: usize,
) {
    for e in 0..k {
        let size = assign.iter().filter(|&&a| a == e).count();
        if size >= min_cluster {
            continue;
        }
        // Move the points nearest to this center from oversized clusters.
        let mut candidates: Vec<(usize, T)> = (0..assign.len())
            .filter(|&i| assign[i] != e)
            .map(|i| (i, (&targets[i] - &km.centers[e]).norm_squared()))
            .collect();
        candidates.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"));
        let mut needed = min_cluster - size;
        for (i, _) in candidates {
            if needed == 0 {
                break;
            }
            let donor = assign[i];
            if assign.iter().filter(|&&a| a == donor).count() > min_cluster {
                assign[i] = e;
                needed -= 1;
            }
        }
    }
}

/// Elite pair routed into the model during online adaptation.
#[derive(Debug, Clone)]
pub struct ElitePair<T: Real> {
    pub descriptor: DVector<T>,
    pub state: StateVector<T>,
    pub weight: T,
}

/// Two-level hierarchical Bayesian mixture of experts `p(x | r)`.
#[derive(Debug, Clone)]
pub struct HbmeModel<T: Real> {
    pub view_gate: RvmClassifier<T>,
    /// Level-two gates, one per view.
    pub expert_gates: Vec<RvmClassifier<T>>,
    /// Experts indexed `[view][expert]`.
    pub experts: Vec<Vec<RvmRegressor<T>>>,
    pub n_views: usize,
    pub n_experts: usize,
    adaptation_buffer: VecDeque<(DVector<T>, DVector<T>)>,
}

/// Adaptation buffer cap (FIFO).
const ADAPT_BUFFER_CAP: usize = 2000;
/// Buffer pairs scored by the adaptation safeguard (most recent first).
const SAFEGUARD_EVAL_CAP: usize = 512;
/// Inactive candidate anchors kept after an online update.
const ONLINE_KEEP_INACTIVE: usize = 128;

/// Online updates run the incremental optimizer on a strict budget; the
/// swap lookahead in particular is a training-time luxury.
fn online_rvm_budget<T: Real>(settings: &mut RvmSettings<T>) {
    settings.max_update_iters = 8;
    settings.swap_refinement = false;
    settings.tol_delta = real(1e-6);
}

impl<T: Real> HbmeModel<T> {
    /// Trains the hierarchy from (descriptor, state, view label) triples.
    pub fn train(
        pairs: &[(DVector<T>, StateVector<T>, usize)],
        cfg: &MixtureConfig<T>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("hbme training pairs"));
        }
        let needed = cfg.n_experts * 5;
        for v in 0..cfg.n_views {
            let count = pairs.iter().filter(|(_, _, view)| *view == v).count();
            if count < needed {
                return Err(Error::InvalidConfig(format!(
                    "view {v} has {count} samples, needs at least {needed}"
                )));
            }
        }

        let descriptors: Vec<DVector<T>> = pairs.iter().map(|(d, _, _)| d.clone()).collect();
        let sigma_r = match cfg.sigma_r {
            Some(s) => s,
            None => crate::sparse_bayes::median_inverse_width(&descriptors),
        };
        let kernel = KernelConfig::rbf(sigma_r)?;

        let view_gate = if cfg.n_views == 1 {
            RvmClassifier::constant(kernel)
        } else {
            let labels: Vec<usize> = pairs.iter().map(|(_, _, v)| *v).collect();
            RvmClassifier::fit(&descriptors, &labels, cfg.n_views, kernel, cfg.gate)?
        };

        let mut expert_gates = Vec::with_capacity(cfg.n_views);
        let mut experts = Vec::with_capacity(cfg.n_views);
        for v in 0..cfg.n_views {
            let idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].2 == v).collect();
            let xs: Vec<DVector<T>> = idx.iter().map(|&i| pairs[i].0.clone()).collect();
            let ts: Vec<DVector<T>> = idx.iter().map(|&i| pairs[i].1 .0.clone()).collect();
            let (view_experts, assign) = em_partition(
                &xs,
                &ts,
                cfg.n_experts,
                kernel,
                cfg.rvm,
                cfg.em_max_iters,
                cfg.min_cluster,
                cfg.seed.wrapping_add(v as u64),
            )?;
            let gate = if cfg.n_experts == 1 {
                RvmClassifier::constant(kernel)
            } else {
                RvmClassifier::fit(&xs, &assign, cfg.n_experts, kernel, cfg.gate)?
            };
            expert_gates.push(gate);
            experts.push(view_experts);
        }

        Ok(Self {
            view_gate,
            expert_gates,
            experts,
            n_views: cfg.n_views,
            n_experts: cfg.n_experts,
            adaptation_buffer: VecDeque::new(),
        })
    }

    /// Mixture conditional `p(x | r)`: one component per (view, expert) with
    /// weight `g_v * g_i`.
    pub fn predict(&self, descriptor: &DVector<T>) -> Result<PredictiveDensity<T>> {
        let g_v = self.view_gate.predict_proba(descriptor)?;
        let mut components = Vec::with_capacity(self.n_views * self.n_experts);
        for v in 0..self.n_views {
            let g_e = self.expert_gates[v].predict_proba(descriptor)?;
            for e in 0..self.n_experts {
                let (mean, var) = self.experts[v][e].predict(descriptor)?;
                let dim = mean.len();
                components.push(DensityComponent {
                    weight: g_v[v] * g_e[e],
                    mean,
                    var: DVector::from_element(dim, var),
                });
            }
        }
        PredictiveDensity::new(components)
    }

    pub fn component_count(&self) -> usize {
        self.n_views * self.n_experts
    }

    /// Mean log-density of (descriptor, state) pairs under the model.
    pub fn mean_log_pdf(&self, pairs: &[(DVector<T>, DVector<T>)]) -> Result<T> {
        if pairs.is_empty() {
            return Ok(T::zero());
        }
        let mut acc = T::zero();
        for (d, s) in pairs {
            let density = self.predict(d)?;
            let p = density.pdf(&StateVector(s.clone()));
            acc += p.max(real(1e-300)).ln();
        }
        Ok(acc / real::<T>(pairs.len() as f64))
    }

    /// Bayesian online adaptation from elite tracked hypotheses.
    ///
    /// Each elite pair is routed to its maximum-responsibility (view,
    /// expert); the expert and both gate levels receive the pair through
    /// their incremental basis updates, then a bounded EM pass re-routes
    /// buffered pairs whose responsibilities moved. The whole update is
    /// discarded if the buffer log-likelihood would decrease.
    pub fn online_update(&self, elite: &[ElitePair<T>], fraction: T) -> Result<Self> {
        if fraction <= T::zero() || fraction > real(0.05) {
            return Err(Error::InvalidConfig(format!(
                "elite fraction {fraction} outside (0, 0.05]"
            )));
        }
        let mut model = self.clone();
        if elite.is_empty() {
            return Ok(model);
        }
        let mut elite: Vec<&ElitePair<T>> = elite.iter().collect();
        elite.sort_by(|a, b| b.weight.partial_cmp(&a.weight).expect("finite weights"));

        for pair in &elite {
            model
                .adaptation_buffer
                .push_back((pair.descriptor.clone(), pair.state.0.clone()));
            while model.adaptation_buffer.len() > ADAPT_BUFFER_CAP {
                model.adaptation_buffer.pop_front();
            }
        }

        let eval_pairs: Vec<(DVector<T>, DVector<T>)> = model
            .adaptation_buffer
            .iter()
            .rev()
            .take(SAFEGUARD_EVAL_CAP)
            .cloned()
            .collect();
        let before = model.mean_log_pdf(&eval_pairs)?;

        let mut candidate = model.clone();
        candidate.apply_elite(&elite)?;
        candidate.refine_routing(2)?;

        let after = candidate.mean_log_pdf(&eval_pairs)?;
        if after >= before - real::<T>(1e-9) {
            Ok(candidate)
        } else {
            // Adaptation would hurt the accumulated evidence; keep the
            // previous parameters (buffer retained).
            Ok(model)
        }
    }

    pub fn buffer_len(&self) -> usize {
        self.adaptation_buffer.len()
    }

    fn route(&self, descriptor: &DVector<T>, state: &StateVector<T>) -> Result<(usize, usize)> {
        let density = self.predict(descriptor)?;
        let (idx, _) = density.max_responsibility(state);
        Ok((idx / self.n_experts, idx % self.n_experts))
    }

    fn apply_elite(&mut self, elite: &[&ElitePair<T>]) -> Result<()> {
        let prune = self.experts[0][0].settings.prune_threshold;
        // Group per routed target so each model sees one batched update.
        let mut per_expert: Vec<Vec<(DVector<T>, DVector<T>)>> =
            vec![Vec::new(); self.n_views * self.n_experts];
        let mut view_labels: Vec<(DVector<T>, usize)> = Vec::new();
        let mut gate_labels: Vec<Vec<(DVector<T>, usize)>> = vec![Vec::new(); self.n_views];
        for pair in elite {
            let (v, e) = self.route(&pair.descriptor, &pair.state)?;
            per_expert[v * self.n_experts + e].push((pair.descriptor.clone(), pair.state.0.clone()));
            view_labels.push((pair.descriptor.clone(), v));
            gate_labels[v].push((pair.descriptor.clone(), e));
        }
        for v in 0..self.n_views {
            for e in 0..self.n_experts {
                let adds = &per_expert[v * self.n_experts + e];
                if adds.is_empty() {
                    continue;
                }
                online_rvm_budget(&mut self.experts[v][e].settings);
                let mut updated = self.experts[v][e].update_basis(adds, prune)?;
                updated.compact_candidates(ONLINE_KEEP_INACTIVE);
                self.experts[v][e] = updated;
            }
            if !gate_labels[v].is_empty() && self.n_experts > 1 {
                let mut gate = self.expert_gates[v].update_basis(&gate_labels[v], prune)?;
                gate.compact_candidates(ONLINE_KEEP_INACTIVE);
                self.expert_gates[v] = gate;
            }
        }
        if self.n_views > 1 && !view_labels.is_empty() {
            let mut gate = self.view_gate.update_basis(&view_labels, prune)?;
            gate.compact_candidates(ONLINE_KEEP_INACTIVE);
            self.view_gate = gate;
        }
        Ok(())
    }

    /// Bounded EM refinement: re-route buffered pairs whose maximum
    /// responsibility moved, feeding them to their new expert.
    fn refine_routing(&mut self, max_rounds: usize) -> Result<()> {
        let prune = self.experts[0][0].settings.prune_threshold;
        let pairs: Vec<(DVector<T>, DVector<T>)> = self
            .adaptation_buffer
            .iter()
            .rev()
            .take(SAFEGUARD_EVAL_CAP)
            .cloned()
            .collect();
        let mut routed: Vec<(usize, usize)> = pairs
            .iter()
            .map(|(d, s)| self.route(d, &StateVector(s.clone())))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..max_rounds {
            let mut moved = false;
            let mut per_expert: Vec<Vec<(DVector<T>, DVector<T>)>> =
                vec![Vec::new(); self.n_views * self.n_experts];
            for (i, (d, s)) in pairs.iter().enumerate() {
                let now = self.route(d, &StateVector(s.clone()))?;
                if now != routed[i] {
                    per_expert[now.0 * self.n_experts + now.1].push((d.clone(), s.clone()));
                    routed[i] = now;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
            for v in 0..self.n_views {
                for e in 0..self.n_experts {
                    let adds = &per_expert[v * self.n_experts + e];
                    if adds.is_empty() {
                        continue;
                    }
                    online_rvm_budget(&mut self.experts[v][e].settings);
                    let mut updated = self.experts[v][e].update_basis(adds, prune)?;
                    updated.compact_candidates(ONLINE_KEEP_INACTIVE);
                    self.experts[v][e] = updated;
                }
            }
        }
        Ok(())
    }
}

/// Single-level conditional mixture `p(x_n | x_{n-1}, r_n)` with product
/// kernels over the joint input.
#[derive(Debug, Clone)]
pub struct CbmeModel<T: Real> {
    pub gate: RvmClassifier<T>,
    pub experts: Vec<RvmRegressor<T>>,
    pub m_experts: usize,
    pub state_dim: usize,
}

impl<T: Real> CbmeModel<T> {
    /// Trains from (previous state, descriptor, next state) triples.
    pub fn train(
        triples: &[(StateVector<T>, DVector<T>, StateVector<T>)],
        cfg: &MixtureConfig<T>,
    ) -> Result<Self> {
        if triples.len() < cfg.m_experts * 10 {
            return Err(Error::EmptyInput("cbme needs at least 10 samples per expert"));
        }
        let state_dim = triples[0].0.dim();
        let joint: Vec<DVector<T>> = triples
            .iter()
            .map(|(x, r, _)| concat(x.as_vector(), r))
            .collect();
        let targets: Vec<DVector<T>> = triples.iter().map(|(_, _, y)| y.0.clone()).collect();

        let states: Vec<DVector<T>> = triples.iter().map(|(x, _, _)| x.0.clone()).collect();
        let descs: Vec<DVector<T>> = triples.iter().map(|(_, r, _)| r.clone()).collect();
        let sigma_x = match cfg.sigma_x {
            Some(s) => s,
            None => crate::sparse_bayes::median_inverse_width(&states),
        };
        let sigma_r = match cfg.sigma_r {
            Some(s) => s,
            None => crate::sparse_bayes::median_inverse_width(&descs),
        };
        let kernel = KernelConfig::product_rbf(sigma_x, sigma_r, state_dim)?;

        let (experts, assign) = em_partition(
            &joint,
            &targets,
            cfg.m_experts,
            kernel,
            cfg.rvm,
            cfg.em_max_iters,
            cfg.min_cluster,
            cfg.seed.wrapping_add(0x5eed),
        )?;
        let gate = if cfg.m_experts == 1 {
            RvmClassifier::constant(kernel)
        } else {
            RvmClassifier::fit(&joint, &assign, cfg.m_experts, kernel, cfg.gate)?
        };
        Ok(Self {
            gate,
            experts,
            m_experts: cfg.m_experts,
            state_dim,
        })
    }

    /// Predictive density plus the mean kernel activation of the query
    /// against the experts' relevance vectors (a collapse diagnostic: near
    /// zero means the query is outside the training hull and predictions
    /// fall back toward the average pose).
    pub fn predict(
        &self,
        prev_state: &StateVector<T>,
        descriptor: &DVector<T>,
    ) -> Result<(PredictiveDensity<T>, T)> {
        if prev_state.dim() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "cbme previous state",
                expected: self.state_dim,
                got: prev_state.dim(),
            });
        }
        let z = concat(prev_state.as_vector(), descriptor);
        let g = self.gate.predict_proba(&z)?;
        let mut components = Vec::with_capacity(self.m_experts);
        let mut activation = T::zero();
        for (e, expert) in self.experts.iter().enumerate() {
            let (mean, var) = expert.predict(&z)?;
            activation += expert.mean_activation(&z)?;
            let dim = mean.len();
            components.push(DensityComponent {
                weight: g[e],
                mean,
                var: DVector::from_element(dim, var),
            });
        }
        activation /= real::<T>(self.m_experts as f64);
        Ok((PredictiveDensity::new(components)?, activation))
    }
}

fn concat<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}
