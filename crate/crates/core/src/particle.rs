//! Weighted particle sets and resampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::StateVector;
use crate::{real, rng, Real};

/// Which proposal produced a particle in the current time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Sampled from the dynamics model.
    Dyn,
    /// Sampled from the bottom-up predictive density.
    Bu,
}

#[derive(Debug, Clone)]
pub struct Particle<T: Real> {
    pub state: StateVector<T>,
    pub weight: T,
    pub origin: Origin,
}

#[derive(Debug, Clone)]
pub struct ParticleSet<T: Real> {
    pub particles: Vec<Particle<T>>,
    pub time_index: usize,
}

impl<T: Real> ParticleSet<T> {
    pub fn new(particles: Vec<Particle<T>>, time_index: usize) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::EmptyInput("particle set"));
        }
        Ok(Self {
            particles,
            time_index,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weight_sum(&self) -> T {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Rescales weights to sum to one, preserving ratios.
    pub fn normalize_weights(mut self) -> Result<Self> {
        for p in &self.particles {
            if !p.weight.finite() || p.weight < T::zero() {
                return Err(Error::NonFinite("particle weight"));
            }
        }
        let total = self.weight_sum();
        if total <= T::zero() {
            return Err(Error::DegenerateWeights);
        }
        let inv = T::one() / total;
        for p in &mut self.particles {
            p.weight *= inv;
        }
        Ok(self)
    }

    /// `1 / Σ wᵢ²` for normalized weights; ranges over `[1, N]`.
    pub fn effective_sample_size(&self) -> Result<T> {
        let total = self.weight_sum();
        if (total - T::one()).abs() > real::<T>(1e-6) {
            return Err(Error::UnnormalizedWeights {
                sum: total.to_f64().unwrap_or(f64::NAN),
            });
        }
        let sq: T = self.particles.iter().map(|p| p.weight * p.weight).sum();
        Ok(T::one() / sq)
    }

    /// Low-variance systematic resampling. Requires normalized weights.
    /// Draws one uniform offset; expected copy count of particle `i` is
    /// `N wᵢ`. Origin tags are inherited from the ancestor.
    pub fn systematic_resample(&self, rng_seed: u64) -> Result<Self> {
        let mut r = rng::stream(rng_seed, "resample");
        self.systematic_resample_with(&mut r)
    }

    pub fn systematic_resample_with<R: Rng>(&self, rng: &mut R) -> Result<Self> {
        let total = self.weight_sum();
        if total <= T::zero() {
            return Err(Error::DegenerateWeights);
        }
        let n = self.len();
        let n_t = real::<T>(n as f64);
        let step = T::one() / n_t;
        let mut u = rng::unit_uniform::<T, _>(rng) * step;
        let uniform = step;

        let mut out = Vec::with_capacity(n);
        let mut cumulative = T::zero();
        let mut idx = 0usize;
        let inv_total = T::one() / total;
        let mut upper = self.particles[0].weight * inv_total;
        for _ in 0..n {
            while u > upper && idx + 1 < n {
                idx += 1;
                cumulative = upper;
                upper = cumulative + self.particles[idx].weight * inv_total;
            }
            let src = &self.particles[idx];
            out.push(Particle {
                state: src.state.clone(),
                weight: uniform,
                origin: src.origin,
            });
            u += step;
        }
        Ok(Self {
            particles: out,
            time_index: self.time_index,
        })
    }

    /// Index of the highest-weight particle (ties break to lowest index).
    pub fn argmax_weight(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            if p.weight > self.particles[best].weight {
                best = i;
            }
        }
        best
    }

    /// Weighted mean state under the current weights.
    pub fn weighted_mean(&self) -> StateVector<T> {
        let d = self.particles[0].state.dim();
        let mut acc = nalgebra::DVector::<T>::zeros(d);
        let total = self.weight_sum();
        if total <= T::zero() {
            let inv = T::one() / real::<T>(self.len() as f64);
            for p in &self.particles {
                acc += p.state.as_vector() * inv;
            }
        } else {
            let inv = T::one() / total;
            for p in &self.particles {
                acc += p.state.as_vector() * (p.weight * inv);
            }
        }
        StateVector::from_vector(acc)
    }
}
