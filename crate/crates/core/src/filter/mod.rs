//! Tracking algorithms: annealed particle filtering and its three
//! predictive-cue extensions.
//!
//! - `Apf`: baseline annealed particle filter — dynamics proposal, a ladder
//!   of tempered likelihood layers with resampling and diffusion, and a
//!   fresh full-power evaluation for the frame's final weights.
//! - `Opf`: per-particle sampling from the learned conditional
//!   `p(x_n | x_{n-1}, r_n)`; the weight carries the likelihood at the
//!   drawn sample as a single-sample evidence estimate.
//! - `Jpf`: mixture proposal — `ceil(gamma * N)` particles from the
//!   bottom-up predictive density, the rest from dynamics; `gamma` adapts
//!   each frame from the per-origin weight masses.
//! - `Jlm`: every likelihood evaluation geometrically blended with the
//!   bottom-up conditional prior, exponent `beta`.
//!
//! All algorithms are deterministic functions of (bundle, observations,
//! seed): every random draw comes from one sequential per-run stream, and
//! the parallel likelihood region preserves evaluation order.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::latent::{LatentModel, Observation, StateVector};
use crate::mixture::{CbmeModel, ElitePair, HbmeModel, PredictiveDensity};
use crate::multimodality::CoverageContext;
use crate::particle::{Origin, Particle, ParticleSet};
use crate::{real, rng, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Apf,
    Opf,
    Jpf,
    Jlm,
}

impl Algorithm {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "apf" => Ok(Self::Apf),
            "opf" => Ok(Self::Opf),
            "jpf" => Ok(Self::Jpf),
            "jlm" => Ok(Self::Jlm),
            other => Err(Error::InvalidConfig(format!("unknown algorithm '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Apf => "apf",
            Self::Opf => "opf",
            Self::Jpf => "jpf",
            Self::Jlm => "jlm",
        }
    }
}

/// Tempering ladder: exponents strictly increase to 1, per-layer diffusion
/// multipliers strictly decrease.
#[derive(Debug, Clone)]
pub struct AnnealSchedule<T: Real> {
    pub exponents: Vec<T>,
    pub diffusion_scales: Vec<T>,
}

impl<T: Real> AnnealSchedule<T> {
    pub fn new(exponents: Vec<T>, diffusion_scales: Vec<T>) -> Result<Self> {
        if exponents.is_empty() || exponents.len() != diffusion_scales.len() {
            return Err(Error::InvalidConfig(
                "schedule needs matching nonempty exponent and scale lists".into(),
            ));
        }
        for w in exponents.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig("exponents must strictly increase".into()));
            }
        }
        let last = *exponents.last().expect("nonempty");
        if (last - T::one()).abs() > real(1e-12) {
            return Err(Error::InvalidConfig("last exponent must be 1".into()));
        }
        if exponents[0] <= T::zero() {
            return Err(Error::InvalidConfig("exponents must be positive".into()));
        }
        for w in diffusion_scales.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::InvalidConfig("diffusion scales must strictly decrease".into()));
            }
        }
        if diffusion_scales.iter().any(|&s| s < T::zero()) {
            return Err(Error::InvalidConfig("diffusion scales must be nonnegative".into()));
        }
        Ok(Self {
            exponents,
            diffusion_scales,
        })
    }

    /// Geometric ladder: `exponent_m = kappa^(M-m)` with the first layer at
    /// `first_exponent`, diffusion multipliers halving from 1.
    pub fn geometric(layers: usize, first_exponent: T) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidConfig("schedule needs at least one layer".into()));
        }
        if layers == 1 {
            return Self::new(vec![T::one()], vec![T::one()]);
        }
        let kappa = first_exponent.powf(T::one() / real::<T>((layers - 1) as f64));
        let exponents = (0..layers)
            .map(|m| kappa.powi((layers - 1 - m) as i32))
            .collect();
        let scales = (0..layers)
            .map(|m| real::<T>(0.5f64.powi(m as i32)))
            .collect();
        Self::new(exponents, scales)
    }

    pub fn layers(&self) -> usize {
        self.exponents.len()
    }
}

impl<T: Real> Default for AnnealSchedule<T> {
    fn default() -> Self {
        Self::geometric(10, real(0.1)).expect("default schedule is valid")
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig<T: Real> {
    pub algorithm: Algorithm,
    pub n_particles: usize,
    pub gamma0: T,
    pub beta: T,
    pub schedule: AnnealSchedule<T>,
    pub seed: u64,
    /// Inverse-variance fusion for gamma instead of the weight-mass rule.
    /// Kept behind a flag: it reacts to the learned models, not to the
    /// observations, and tracks worse.
    pub clt_gamma: bool,
}

impl<T: Real> FilterConfig<T> {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            n_particles: 200,
            gamma0: real(0.5),
            beta: real(0.35),
            schedule: AnnealSchedule::default(),
            seed: 0,
            clt_gamma: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig("need at least 2 particles".into()));
        }
        for (name, v) in [("gamma0", self.gamma0), ("beta", self.beta)] {
            if v < T::zero() || v > T::one() {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Zero-mean Gaussian random walk in latent space.
#[derive(Debug, Clone)]
pub struct GaussianRandomWalk<T: Real> {
    pub scales: DVector<T>,
}

impl<T: Real> GaussianRandomWalk<T> {
    pub fn new(scales: DVector<T>) -> Self {
        Self { scales }
    }

    /// Per-dimension scale `c * sqrt(eigenvalue)` from the latent model.
    pub fn from_latent(latent: &LatentModel<T>, c: T) -> Self {
        let scales = latent.retained_eigenvalues().map(|v| c * v.sqrt());
        Self { scales }
    }

    pub fn sample_with<R: Rng>(&self, prev: &StateVector<T>, rng_: &mut R) -> StateVector<T> {
        let mut x = prev.0.clone();
        for d in 0..x.len() {
            x[d] += self.scales[d] * rng::std_normal::<T, _>(rng_);
        }
        StateVector(x)
    }

    /// Diagonal Gaussian transition density.
    pub fn pdf(&self, next: &StateVector<T>, prev: &StateVector<T>) -> T {
        let mut log_p = T::zero();
        let two_pi = real::<T>(std::f64::consts::TAU);
        for d in 0..next.dim() {
            let s2 = self.scales[d] * self.scales[d];
            if s2 <= T::zero() {
                return T::zero();
            }
            let diff = next.0[d] - prev.0[d];
            log_p -= real::<T>(0.5) * ((two_pi * s2).ln() + diff * diff / s2);
        }
        log_p.exp()
    }

    pub fn total_variance(&self) -> T {
        self.scales.iter().map(|&s| s * s).sum()
    }
}

pub type LikelihoodFn<T> =
    Arc<dyn Fn(&Observation<T>, &StateVector<T>) -> T + Send + Sync>;
pub type DescriptorFn<T> = Arc<dyn Fn(&Observation<T>) -> DVector<T> + Send + Sync>;

/// Everything a tracker needs: dynamics, likelihood, the bottom-up models,
/// and the descriptor pipeline.
#[derive(Clone)]
pub struct ModelBundle<T: Real> {
    pub dynamics: GaussianRandomWalk<T>,
    pub likelihood: LikelihoodFn<T>,
    pub hbme: HbmeModel<T>,
    pub cbme: Option<CbmeModel<T>>,
    pub descriptor_fn: DescriptorFn<T>,
}

/// Per-frame tracker diagnostics.
#[derive(Debug, Clone)]
pub struct FrameDiagnostics<T: Real> {
    pub ess: T,
    pub gamma: T,
    pub bu_mass: T,
    pub dyn_mass: T,
    /// Annealing layers whose weights degenerated to uniform.
    pub layer_fallbacks: usize,
    /// Mean kernel activation of the learned proposal (OPF only).
    pub proposal_activation: Option<T>,
    pub recovery: bool,
}

#[derive(Debug, Clone)]
pub struct TrackerState<T: Real> {
    pub particles: ParticleSet<T>,
    pub gamma: T,
    pub step: usize,
    pub diagnostics: FrameDiagnostics<T>,
    /// Final full-power weights degenerated; the caller should reinitialize.
    pub needs_recovery: bool,
}

/// Ratio of bottom-up weight mass to total, from pre-resampling weights.
/// Degenerate (all-zero) weights fall back to `gamma0`.
pub fn gamma_update<T: Real>(particles: &ParticleSet<T>, gamma0: T) -> T {
    let mut bu = T::zero();
    let mut dy = T::zero();
    for p in &particles.particles {
        match p.origin {
            Origin::Bu => bu += p.weight,
            Origin::Dyn => dy += p.weight,
        }
    }
    let total = bu + dy;
    if total <= T::zero() {
        gamma0
    } else {
        bu / total
    }
}

/// Geometric blend of the generative likelihood and the discriminative
/// prior density: `p^(1-beta) * q^beta`, computed in log space.
pub fn jlm_weight<T: Real>(likelihood: T, prior_density: T, beta: T) -> T {
    if beta <= T::zero() {
        return likelihood;
    }
    if beta >= T::one() {
        return prior_density;
    }
    if likelihood <= T::zero() && prior_density <= T::zero() {
        return T::zero();
    }
    let log_l = if likelihood > T::zero() {
        likelihood.ln()
    } else {
        return T::zero();
    };
    let log_q = if prior_density > T::zero() {
        prior_density.ln()
    } else {
        return T::zero();
    };
    ((T::one() - beta) * log_l + beta * log_q).exp()
}

/// Initializes the tracker by sampling every particle from the bottom-up
/// predictive density of the first observation.
pub fn init_tracker<T: Real>(
    bundle: &ModelBundle<T>,
    first_obs: &Observation<T>,
    cfg: &FilterConfig<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<TrackerState<T>> {
    cfg.validate()?;
    let descriptor = (bundle.descriptor_fn)(first_obs);
    let density = bundle.hbme.predict(&descriptor)?;
    let uniform = T::one() / real::<T>(cfg.n_particles as f64);
    let particles = (0..cfg.n_particles)
        .map(|_| Particle {
            state: density.sample_one(rng_),
            weight: uniform,
            origin: Origin::Bu,
        })
        .collect();
    let particles = ParticleSet::new(particles, 0)?;
    let ess = particles.effective_sample_size()?;
    Ok(TrackerState {
        particles,
        gamma: cfg.gamma0,
        step: 0,
        diagnostics: FrameDiagnostics {
            ess,
            gamma: cfg.gamma0,
            bu_mass: T::one(),
            dyn_mass: T::zero(),
            layer_fallbacks: 0,
            proposal_activation: None,
            recovery: false,
        },
        needs_recovery: false,
    })
}

/// Scoring function used by the annealing ladder: plain likelihood for
/// APF/OPF/JPF, the blended weight for JLM.
enum Scorer<'a, T: Real> {
    Likelihood(&'a LikelihoodFn<T>, &'a Observation<T>),
    Blended {
        likelihood: &'a LikelihoodFn<T>,
        obs: &'a Observation<T>,
        prior: &'a PredictiveDensity<T>,
        beta: T,
    },
}

impl<'a, T: Real> Scorer<'a, T> {
    fn score(&self, state: &StateVector<T>) -> T {
        match self {
            Scorer::Likelihood(f, obs) => f(obs, state),
            Scorer::Blended {
                likelihood,
                obs,
                prior,
                beta,
            } => jlm_weight(likelihood(obs, state), prior.pdf(state), *beta),
        }
    }

    /// Order-preserving parallel evaluation over the particle set.
    fn score_all(&self, particles: &ParticleSet<T>) -> Vec<T> {
        particles
            .particles
            .par_iter()
            .map(|p| self.score(&p.state))
            .collect()
    }
}

/// Runs the annealing ladder and the fresh full-power evaluation. Carry
/// weights (already folded with any proposal corrections) enter the first
/// layer; each layer weighs by `score^exponent`, resamples, and diffuses.
fn anneal_and_weigh<T: Real>(
    mut particles: ParticleSet<T>,
    carry: Vec<T>,
    scorer: &Scorer<'_, T>,
    cfg: &FilterConfig<T>,
    dynamics: &GaussianRandomWalk<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<(ParticleSet<T>, usize)> {
    let mut fallbacks = 0usize;
    let n = particles.len();
    let uniform = T::one() / real::<T>(n as f64);

    for (layer, (&exp, &scale)) in cfg
        .schedule
        .exponents
        .iter()
        .zip(&cfg.schedule.diffusion_scales)
        .enumerate()
    {
        let scores = scorer.score_all(&particles);
        let mut total = T::zero();
        for (i, p) in particles.particles.iter_mut().enumerate() {
            let base = if layer == 0 { carry[i] } else { uniform };
            p.weight = base * scores[i].powf(exp);
            total += p.weight;
        }
        if total <= T::zero() || !total.finite() {
            for p in &mut particles.particles {
                p.weight = uniform;
            }
            fallbacks += 1;
        }
        particles = particles.systematic_resample_with(rng_)?;
        if scale > T::zero() {
            for p in &mut particles.particles {
                for d in 0..p.state.dim() {
                    p.state.0[d] +=
                        scale * dynamics.scales[d] * rng::std_normal::<T, _>(rng_);
                }
            }
        }
    }

    // Fresh full-power evaluation for the frame's final weights.
    let scores = scorer.score_all(&particles);
    for (i, p) in particles.particles.iter_mut().enumerate() {
        p.weight = scores[i];
    }
    Ok((particles, fallbacks))
}

fn finish_step<T: Real>(
    particles: ParticleSet<T>,
    cfg: &FilterConfig<T>,
    step: usize,
    gamma_for_frame: T,
    update_gamma: bool,
    fallbacks: usize,
    activation: Option<T>,
) -> Result<TrackerState<T>> {
    let bu = gamma_update(&particles, cfg.gamma0);
    let total = particles.weight_sum();
    if total <= T::zero() || !total.finite() {
        // Degenerate full-power weights: hand back for recovery.
        let n = particles.len();
        let uniform = T::one() / real::<T>(n as f64);
        let mut ps = particles;
        for p in &mut ps.particles {
            p.weight = uniform;
        }
        ps.time_index = step;
        return Ok(TrackerState {
            particles: ps,
            gamma: if update_gamma { cfg.gamma0 } else { gamma_for_frame },
            step,
            diagnostics: FrameDiagnostics {
                ess: real(n as f64),
                gamma: gamma_for_frame,
                bu_mass: T::zero(),
                dyn_mass: T::zero(),
                layer_fallbacks: fallbacks,
                proposal_activation: activation,
                recovery: true,
            },
            needs_recovery: true,
        });
    }

    let mut bu_mass = T::zero();
    let mut dyn_mass = T::zero();
    for p in &particles.particles {
        match p.origin {
            Origin::Bu => bu_mass += p.weight,
            Origin::Dyn => dyn_mass += p.weight,
        }
    }
    bu_mass /= total;
    dyn_mass /= total;

    let mut ps = particles.normalize_weights()?;
    ps.time_index = step;
    let ess = ps.effective_sample_size()?;
    let next_gamma = if update_gamma { bu } else { gamma_for_frame };
    Ok(TrackerState {
        particles: ps,
        gamma: next_gamma,
        step,
        diagnostics: FrameDiagnostics {
            ess,
            gamma: gamma_for_frame,
            bu_mass,
            dyn_mass,
            layer_fallbacks: fallbacks,
            proposal_activation: activation,
            recovery: false,
        },
        needs_recovery: false,
    })
}

/// Baseline annealed particle filter step.
pub fn apf_step<T: Real>(
    state: &TrackerState<T>,
    obs: &Observation<T>,
    bundle: &ModelBundle<T>,
    cfg: &FilterConfig<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<TrackerState<T>> {
    let mut particles = state.particles.clone();
    let carry: Vec<T> = particles.particles.iter().map(|p| p.weight).collect();
    for p in &mut particles.particles {
        p.state = bundle.dynamics.sample_with(&p.state, rng_);
        p.origin = Origin::Dyn;
    }
    let scorer = Scorer::Likelihood(&bundle.likelihood, obs);
    let (particles, fallbacks) =
        anneal_and_weigh(particles, carry, &scorer, cfg, &bundle.dynamics, rng_)?;
    finish_step(
        particles,
        cfg,
        state.step + 1,
        state.gamma,
        false,
        fallbacks,
        None,
    )
}

/// Learned-proposal step: each particle is drawn from the conditional
/// mixture; its carry weight picks up the likelihood at the drawn sample as
/// a single-sample estimate of the predictive evidence.
pub fn opf_step<T: Real>(
    state: &TrackerState<T>,
    obs: &Observation<T>,
    bundle: &ModelBundle<T>,
    cfg: &FilterConfig<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<TrackerState<T>> {
    let cbme = bundle
        .cbme
        .as_ref()
        .ok_or(Error::MissingModel("opf requires a trained conditional mixture (cbme)"))?;
    let descriptor = (bundle.descriptor_fn)(obs);
    let mut particles = state.particles.clone();
    let mut carry = Vec::with_capacity(particles.len());
    let mut activation_sum = T::zero();
    for p in &mut particles.particles {
        let (density, activation) = cbme.predict(&p.state, &descriptor)?;
        activation_sum += activation;
        p.state = density.sample_one(rng_);
        p.origin = Origin::Dyn;
        let lik = (bundle.likelihood)(obs, &p.state);
        carry.push(p.weight * lik);
    }
    let activation = activation_sum / real::<T>(particles.len() as f64);
    let scorer = Scorer::Likelihood(&bundle.likelihood, obs);
    let (particles, fallbacks) =
        anneal_and_weigh(particles, carry, &scorer, cfg, &bundle.dynamics, rng_)?;
    finish_step(
        particles,
        cfg,
        state.step + 1,
        state.gamma,
        false,
        fallbacks,
        Some(activation),
    )
}

/// Mixture-proposal step: `ceil(gamma * N)` bottom-up particles, the rest
/// dynamics; gamma for the next frame comes from the per-origin masses of
/// this frame's final (pre-resampling) weights.
pub fn jpf_step<T: Real>(
    state: &TrackerState<T>,
    obs: &Observation<T>,
    bundle: &ModelBundle<T>,
    cfg: &FilterConfig<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<TrackerState<T>> {
    let descriptor = (bundle.descriptor_fn)(obs);
    let gamma = if cfg.clt_gamma {
        clt_gamma(state, bundle, &descriptor)?
    } else {
        state.gamma
    };
    let mut particles = state.particles.clone();
    let n = particles.len();
    let n_bu = if gamma <= T::zero() {
        0
    } else {
        let exact = gamma * real::<T>(n as f64);
        let ceil = exact.to_f64().map(|v| v.ceil() as usize).unwrap_or(0);
        ceil.min(n)
    };
    let density = if n_bu > 0 {
        Some(bundle.hbme.predict(&descriptor)?)
    } else {
        None
    };
    let carry: Vec<T> = particles.particles.iter().map(|p| p.weight).collect();
    for (i, p) in particles.particles.iter_mut().enumerate() {
        if i < n_bu {
            p.state = density.as_ref().expect("density built").sample_one(rng_);
            p.origin = Origin::Bu;
        } else {
            p.state = bundle.dynamics.sample_with(&p.state, rng_);
            p.origin = Origin::Dyn;
        }
    }
    let scorer = Scorer::Likelihood(&bundle.likelihood, obs);
    let (particles, fallbacks) =
        anneal_and_weigh(particles, carry, &scorer, cfg, &bundle.dynamics, rng_)?;
    finish_step(particles, cfg, state.step + 1, gamma, true, fallbacks, None)
}

/// Inverse-variance fusion gamma (flagged alternative to the weight-mass
/// rule).
fn clt_gamma<T: Real>(
    state: &TrackerState<T>,
    bundle: &ModelBundle<T>,
    descriptor: &DVector<T>,
) -> Result<T> {
    let density = bundle.hbme.predict(descriptor)?;
    let mut bu_var = T::zero();
    for c in &density.components {
        bu_var += c.weight * c.var.sum();
    }
    let dyn_var = bundle.dynamics.total_variance();
    let total = dyn_var + bu_var;
    if total <= T::zero() {
        Ok(state.gamma)
    } else {
        Ok(dyn_var / total)
    }
}

/// Blended-likelihood step: the bottom-up density of the frame is computed
/// once and reused for every particle and layer.
pub fn jlm_step<T: Real>(
    state: &TrackerState<T>,
    obs: &Observation<T>,
    bundle: &ModelBundle<T>,
    cfg: &FilterConfig<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<TrackerState<T>> {
    let descriptor = (bundle.descriptor_fn)(obs);
    let prior = bundle.hbme.predict(&descriptor)?;
    let mut particles = state.particles.clone();
    let carry: Vec<T> = particles.particles.iter().map(|p| p.weight).collect();
    for p in &mut particles.particles {
        p.state = bundle.dynamics.sample_with(&p.state, rng_);
        p.origin = Origin::Dyn;
    }
    let scorer = Scorer::Blended {
        likelihood: &bundle.likelihood,
        obs,
        prior: &prior,
        beta: cfg.beta,
    };
    let (particles, fallbacks) =
        anneal_and_weigh(particles, carry, &scorer, cfg, &bundle.dynamics, rng_)?;
    finish_step(
        particles,
        cfg,
        state.step + 1,
        state.gamma,
        false,
        fallbacks,
        None,
    )
}

/// One step of the configured algorithm.
pub fn step<T: Real>(
    state: &TrackerState<T>,
    obs: &Observation<T>,
    bundle: &ModelBundle<T>,
    cfg: &FilterConfig<T>,
    rng_: &mut ChaCha8Rng,
) -> Result<TrackerState<T>> {
    match cfg.algorithm {
        Algorithm::Apf => apf_step(state, obs, bundle, cfg, rng_),
        Algorithm::Opf => opf_step(state, obs, bundle, cfg, rng_),
        Algorithm::Jpf => jpf_step(state, obs, bundle, cfg, rng_),
        Algorithm::Jlm => jlm_step(state, obs, bundle, cfg, rng_),
    }
}

/// Per-run hooks: online adaptation and mode-coverage scoring.
pub struct RunHooks<T: Real> {
    pub online_learning: bool,
    pub elite_fraction: T,
    pub coverage: Option<CoverageContext<T>>,
}

impl<T: Real> Default for RunHooks<T> {
    fn default() -> Self {
        Self {
            online_learning: false,
            elite_fraction: real(0.01),
            coverage: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameRecord<T: Real> {
    pub step: usize,
    pub estimate: StateVector<T>,
    pub map: StateVector<T>,
    pub ess: T,
    pub gamma: T,
    pub coverage: Option<T>,
    pub recovery: bool,
    /// Distance between the bottom-up prediction and the filter estimate
    /// (only recorded when online learning is active).
    pub adaptation_error: Option<T>,
    pub bu_mass: T,
    pub dyn_mass: T,
    pub layer_fallbacks: usize,
    pub proposal_activation: Option<T>,
}

#[derive(Debug, Clone)]
pub struct TrackResult<T: Real> {
    pub frames: Vec<FrameRecord<T>>,
    pub recoveries: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl<T: Real> TrackResult<T> {
    /// Per-frame CSV; estimates and MAP states are expanded per dimension.
    pub fn to_csv(&self) -> String {
        let d = self.frames.first().map_or(0, |f| f.estimate.dim());
        let mut header = String::from("step");
        for i in 0..d {
            header.push_str(&format!(",est_{i}"));
        }
        for i in 0..d {
            header.push_str(&format!(",map_{i}"));
        }
        header.push_str(",ess,gamma,coverage,recovery,bu_mass,dyn_mass,layer_fallbacks,proposal_activation,adaptation_error\n");
        let mut out = header;
        for f in &self.frames {
            out.push_str(&format!("{}", f.step));
            for i in 0..d {
                out.push_str(&format!(",{}", f.estimate.0[i]));
            }
            for i in 0..d {
                out.push_str(&format!(",{}", f.map.0[i]));
            }
            out.push_str(&format!(",{},{}", f.ess, f.gamma));
            match f.coverage {
                Some(c) => out.push_str(&format!(",{c}")),
                None => out.push(','),
            }
            out.push_str(&format!(",{}", u8::from(f.recovery)));
            out.push_str(&format!(",{},{}", f.bu_mass, f.dyn_mass));
            out.push_str(&format!(",{}", f.layer_fallbacks));
            match f.proposal_activation {
                Some(a) => out.push_str(&format!(",{a}")),
                None => out.push(','),
            }
            match f.adaptation_error {
                Some(a) => out.push_str(&format!(",{a}")),
                None => out.push(','),
            }
            out.push('\n');
        }
        out
    }

    pub fn mean_coverage(&self) -> Option<T> {
        let vals: Vec<T> = self.frames.iter().filter_map(|f| f.coverage).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().copied().sum::<T>() / real::<T>(vals.len() as f64))
        }
    }
}

fn record_frame<T: Real>(
    state: &TrackerState<T>,
    hooks: &RunHooks<T>,
    bundle: &ModelBundle<T>,
    obs: &Observation<T>,
    online: bool,
) -> Result<FrameRecord<T>> {
    let estimate = state.particles.weighted_mean();
    let map_idx = state.particles.argmax_weight();
    let map = state.particles.particles[map_idx].state.clone();
    let descriptor = (bundle.descriptor_fn)(obs);
    let coverage = match &hooks.coverage {
        Some(ctx) => Some(ctx.coverage_ratio(&descriptor, &state.particles)?.ratio),
        None => None,
    };
    let adaptation_error = if online {
        let density = bundle.hbme.predict(&descriptor)?;
        Some((density.mean() - &estimate.0).norm())
    } else {
        None
    };
    Ok(FrameRecord {
        step: state.step,
        estimate,
        map,
        ess: state.diagnostics.ess,
        gamma: state.diagnostics.gamma,
        coverage,
        recovery: state.diagnostics.recovery,
        adaptation_error,
        bu_mass: state.diagnostics.bu_mass,
        dyn_mass: state.diagnostics.dyn_mass,
        layer_fallbacks: state.diagnostics.layer_fallbacks,
        proposal_activation: state.diagnostics.proposal_activation,
    })
}

/// Tracks a whole observation sequence. Degenerate frames reinitialize the
/// tracker from the bottom-up model on the current observation and record a
/// recovery event. With online learning, the top elite-fraction particles
/// of each frame adapt the bottom-up mixture between steps.
pub fn run_sequence<T: Real>(
    bundle: &ModelBundle<T>,
    observations: &[Observation<T>],
    cfg: &FilterConfig<T>,
    hooks: &RunHooks<T>,
) -> Result<TrackResult<T>> {
    if observations.is_empty() {
        return Err(Error::EmptyInput("observation sequence"));
    }
    cfg.validate()?;
    if cfg.algorithm == Algorithm::Opf && bundle.cbme.is_none() {
        return Err(Error::MissingModel(
            "opf requires a trained conditional mixture (cbme)",
        ));
    }
    let mut rng_ = rng::stream(cfg.seed, "track");
    let mut live = bundle.clone();
    let mut state = init_tracker(&live, &observations[0], cfg, &mut rng_)?;
    let mut frames = Vec::with_capacity(observations.len());
    let mut recoveries = 0usize;
    frames.push(record_frame(
        &state,
        hooks,
        &live,
        &observations[0],
        hooks.online_learning,
    )?);

    for (t, obs) in observations.iter().enumerate().skip(1) {
        let mut next = step(&state, obs, &live, cfg, &mut rng_)?;
        if next.needs_recovery {
            recoveries += 1;
            let mut reinit = init_tracker(&live, obs, cfg, &mut rng_)?;
            reinit.step = t;
            reinit.diagnostics.recovery = true;
            next = reinit;
        }
        state = next;

        if hooks.online_learning && !state.diagnostics.recovery {
            let n = state.particles.len();
            let count = ((hooks.elite_fraction * real::<T>(n as f64))
                .to_f64()
                .unwrap_or(0.0)
                .round() as usize)
                .max(1)
                .min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                state.particles.particles[b]
                    .weight
                    .partial_cmp(&state.particles.particles[a].weight)
                    .expect("finite weights")
            });
            let descriptor = (live.descriptor_fn)(obs);
            let elites: Vec<ElitePair<T>> = order[..count]
                .iter()
                .map(|&i| ElitePair {
                    descriptor: descriptor.clone(),
                    state: state.particles.particles[i].state.clone(),
                    weight: state.particles.particles[i].weight,
                })
                .collect();
            live.hbme = live.hbme.online_update(&elites, hooks.elite_fraction)?;
        }

        frames.push(record_frame(
            &state,
            hooks,
            &live,
            obs,
            hooks.online_learning,
        )?);
    }

    Ok(TrackResult {
        frames,
        recoveries,
        algorithm: cfg.algorithm,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests;
