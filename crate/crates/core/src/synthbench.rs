//! Synthetic depth-ambiguous articulated-chain benchmark.
//!
//! A planar-image camera observes a kinematic chain. Each link has a fixed
//! in-image heading offset from the global orientation and an out-of-plane
//! elevation angle. The observation carries the projected joint coordinates
//! plus the per-link depth magnitude: with `DepthSign` ambiguity the sign of
//! every elevation is unobservable, so the `2^(#bent links)` poses that
//! differ only in elevation signs produce identical noiseless observations.
//! That is the engineered one-to-many pathology the tracking benchmarks
//! score against.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::{AmbientPose, LatentModel, Observation, StateVector};
use crate::multimodality::{kmeans_fit, ClusterModel};
use crate::{real, rng, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ambiguity {
    /// Depth sign discarded: one-to-many observation-to-pose mapping.
    DepthSign,
    /// Fully observed depth: injective forward kinematics on the angle
    /// domain (-pi/2, pi/2).
    None,
}

#[derive(Debug, Clone)]
pub struct ChainSpec<T: Real> {
    pub n_links: usize,
    pub link_lengths: Vec<T>,
    /// Observation noise, in the same length units as the link lengths.
    pub obs_noise: T,
    pub ambiguity: Ambiguity,
    /// Fixed in-image heading offset per link (radians, relative to the
    /// global orientation).
    pub heading_offsets: Vec<T>,
    /// Sinusoid elevation amplitude per link; zero keeps a link in-plane.
    pub bend_amplitudes: Vec<T>,
}

impl<T: Real> ChainSpec<T> {
    /// Four-link chain, every link articulating out of plane.
    pub fn new(n_links: usize, ambiguity: Ambiguity) -> Self {
        let amps = (0..n_links)
            .map(|i| real::<T>(0.7 * 0.85f64.powi(i as i32)))
            .collect();
        Self::with_amplitudes(n_links, ambiguity, amps)
    }

    /// Chain with exactly one out-of-plane link: two ambiguous modes.
    pub fn single_bend(n_links: usize, ambiguity: Ambiguity) -> Self {
        let mut amps = vec![T::zero(); n_links];
        amps[0] = real(0.9);
        Self::with_amplitudes(n_links, ambiguity, amps)
    }

    pub fn with_amplitudes(n_links: usize, ambiguity: Ambiguity, amps: Vec<T>) -> Self {
        assert!(n_links >= 1);
        assert_eq!(amps.len(), n_links);
        let total_len = n_links as f64;
        Self {
            n_links,
            link_lengths: vec![T::one(); n_links],
            obs_noise: real(0.02 * total_len),
            ambiguity,
            heading_offsets: (0..n_links).map(|i| real::<T>(0.4 * i as f64)).collect(),
            bend_amplitudes: amps,
        }
    }

    pub fn d_ambient(&self) -> usize {
        self.n_links + 1
    }

    pub fn total_length(&self) -> T {
        self.link_lengths.iter().copied().sum()
    }

    /// Observation feature length: 2 image coordinates per joint plus one
    /// depth magnitude per link.
    pub fn obs_dim(&self) -> usize {
        3 * self.n_links
    }

    fn check_pose(&self, pose: &AmbientPose<T>) -> Result<()> {
        if pose.dim() != self.d_ambient() {
            return Err(Error::DimensionMismatch {
                context: "chain pose",
                expected: self.d_ambient(),
                got: pose.dim(),
            });
        }
        Ok(())
    }

    /// Noiseless forward projection: per-joint image coordinates plus
    /// per-link depth magnitude (signed depth when ambiguity is `None`).
    pub fn project_noiseless(&self, pose: &AmbientPose<T>) -> Result<Observation<T>> {
        self.check_pose(pose)?;
        let phi = pose.0[0];
        let mut features = DVector::zeros(self.obs_dim());
        let mut x = T::zero();
        let mut y = T::zero();
        for i in 0..self.n_links {
            let theta = pose.0[i + 1];
            let heading = phi + self.heading_offsets[i];
            let len = self.link_lengths[i];
            x += len * theta.cos() * heading.cos();
            y += len * theta.cos() * heading.sin();
            let depth = len * theta.sin();
            features[2 * i] = x;
            features[2 * i + 1] = y;
            features[2 * self.n_links + i] = match self.ambiguity {
                Ambiguity::DepthSign => depth.abs(),
                Ambiguity::None => depth,
            };
        }
        Ok(Observation(features))
    }

    /// Noisy observation of a pose; deterministic per seed.
    pub fn project_observe(&self, pose: &AmbientPose<T>, seed: u64) -> Result<Observation<T>> {
        let mut r = rng::stream(seed, "project");
        self.project_observe_with(pose, &mut r)
    }

    pub fn project_observe_with<R: Rng>(
        &self,
        pose: &AmbientPose<T>,
        rng_: &mut R,
    ) -> Result<Observation<T>> {
        let mut obs = self.project_noiseless(pose)?;
        if self.obs_noise > T::zero() {
            for f in obs.0.iter_mut() {
                *f += self.obs_noise * rng::std_normal::<T, _>(rng_);
            }
        }
        Ok(obs)
    }

    /// Gaussian observation likelihood of a latent state; pure and
    /// reentrant.
    pub fn likelihood(
        &self,
        obs: &Observation<T>,
        state: &StateVector<T>,
        latent: &LatentModel<T>,
    ) -> T {
        let pose = match latent.decode(state) {
            Ok(p) => p,
            Err(_) => return T::zero(),
        };
        let predicted = match self.project_noiseless(&pose) {
            Ok(p) => p,
            Err(_) => return T::zero(),
        };
        let d2 = (&predicted.0 - &obs.0).norm_squared();
        let denom = real::<T>(2.0) * self.obs_noise * self.obs_noise;
        (-d2 / denom).exp()
    }

    /// All poses with identical noiseless observations under depth-sign
    /// ambiguity: every combination of elevation-sign flips on bent links.
    /// Includes the input pose. `None` ambiguity returns the singleton.
    pub fn ambiguity_set(&self, pose: &AmbientPose<T>) -> Result<Vec<AmbientPose<T>>> {
        self.check_pose(pose)?;
        if self.ambiguity == Ambiguity::None {
            return Ok(vec![pose.clone()]);
        }
        let bent: Vec<usize> = (1..self.d_ambient())
            .filter(|&i| pose.0[i].abs() > real(1e-12))
            .collect();
        let mut out = Vec::with_capacity(1 << bent.len());
        for mask in 0..(1u32 << bent.len()) {
            let mut p = pose.clone();
            for (bit, &idx) in bent.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    p.0[idx] = -p.0[idx];
                }
            }
            out.push(p);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Sinusoid,
    RandomWalk,
}

#[derive(Debug, Clone)]
pub struct GroundTruthSequence<T: Real> {
    pub states: Vec<AmbientPose<T>>,
    pub observations: Vec<Observation<T>>,
    /// Orientation bin in [0, 8) per frame.
    pub view_labels: Vec<usize>,
}

impl<T: Real> GroundTruthSequence<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Number of orientation bins used for view labels.
pub const N_VIEW_BINS: usize = 8;

pub fn view_label<T: Real>(orientation: T) -> usize {
    let tau = real::<T>(std::f64::consts::TAU);
    let mut phi = orientation % tau;
    if phi < T::zero() {
        phi += tau;
    }
    let bin = (phi / tau * real::<T>(N_VIEW_BINS as f64))
        .to_f64()
        .unwrap_or(0.0)
        .floor() as usize;
    bin.min(N_VIEW_BINS - 1)
}

/// Generates a smooth ground-truth sequence with its observations.
pub fn generate_sequence<T: Real>(
    spec: &ChainSpec<T>,
    n_frames: usize,
    motion: Motion,
    seed: u64,
) -> Result<GroundTruthSequence<T>> {
    if n_frames < 1 {
        return Err(Error::EmptyInput("sequence needs at least one frame"));
    }
    let mut r = rng::stream(seed, "generate");
    let mut states = Vec::with_capacity(n_frames);
    let tau = real::<T>(std::f64::consts::TAU);

    match motion {
        Motion::Sinusoid => {
            // One orientation revolution per 200 frames; elevation period 80
            // frames so frame 100 sits at an extreme of the first link.
            let phi_rate = tau / real(200.0);
            let omega = tau / real(80.0);
            for t in 0..n_frames {
                let tf = real::<T>(t as f64);
                let mut pose = DVector::zeros(spec.d_ambient());
                pose[0] = phi_rate * tf;
                for i in 0..spec.n_links {
                    let phase = real::<T>(0.9 * i as f64);
                    pose[i + 1] = spec.bend_amplitudes[i] * (omega * tf + phase).sin();
                }
                states.push(AmbientPose(pose));
            }
        }
        Motion::RandomWalk => {
            let phi_step = real::<T>(0.03);
            let theta_step = real::<T>(0.02);
            let mut pose = DVector::zeros(spec.d_ambient());
            for i in 0..spec.n_links {
                pose[i + 1] = spec.bend_amplitudes[i] * real::<T>(0.5);
            }
            for _ in 0..n_frames {
                states.push(AmbientPose(pose.clone()));
                pose[0] += phi_step * rng::std_normal::<T, _>(&mut r);
                for i in 0..spec.n_links {
                    let amp = spec.bend_amplitudes[i];
                    if amp > T::zero() {
                        let step = theta_step * rng::std_normal::<T, _>(&mut r);
                        pose[i + 1] = (pose[i + 1] + step).clamp(-amp, amp);
                    }
                }
            }
        }
    }

    let observations = states
        .iter()
        .map(|p| spec.project_observe_with(p, &mut r))
        .collect::<Result<Vec<_>>>()?;
    let view_labels = states.iter().map(|p| view_label(p.0[0])).collect();
    Ok(GroundTruthSequence {
        states,
        observations,
        view_labels,
    })
}

/// Vector-quantization codebook over observation features.
#[derive(Debug, Clone)]
pub struct Codebook<T: Real> {
    pub prototypes: Vec<DVector<T>>,
}

impl<T: Real> Codebook<T> {
    /// K-means prototypes of raw observation features.
    pub fn build(observations: &[Observation<T>], k: usize, seed: u64) -> Result<Self> {
        let points: Vec<DVector<T>> = observations.iter().map(|o| o.0.clone()).collect();
        let model = kmeans_fit(&points, k, seed, 60)?;
        Ok(Self {
            prototypes: model.centers,
        })
    }

    pub fn k(&self) -> usize {
        self.prototypes.len()
    }

    /// Normalized inverse-distance descriptor; entries sum to one.
    pub fn descriptor(&self, obs: &Observation<T>) -> DVector<T> {
        let eps = real::<T>(1e-8);
        let mut d = DVector::zeros(self.k());
        let mut total = T::zero();
        for (k, proto) in self.prototypes.iter().enumerate() {
            let dist = (proto - &obs.0).norm();
            let inv = T::one() / (dist + eps);
            d[k] = inv;
            total += inv;
        }
        d / total
    }

    pub fn as_cluster_model(&self) -> ClusterModel<T> {
        ClusterModel {
            centers: self.prototypes.clone(),
            inertia_history: Vec::new(),
        }
    }
}
