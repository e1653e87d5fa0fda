//! Latent-space pose model.
//!
//! Joint-angle pose vectors live in an ambient space; filtering and the
//! learned predictors work in a low-dimensional latent space. The mapping is
//! a PCA subspace model: deterministic, closed form, and bi-directional
//! (encode projects, decode reconstructs).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::{real, Real};

/// Point in the latent filtering space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real>(pub DVector<T>);

/// Joint-angle pose in the ambient space (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPose<T: Real>(pub DVector<T>);

/// Observed feature vector for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real>(pub DVector<T>);

macro_rules! vector_newtype {
    ($name:ident, $ctx:literal) => {
        impl<T: Real> $name<T> {
            pub fn new(coords: Vec<T>) -> Result<Self> {
                if coords.iter().any(|v| !v.finite()) {
                    return Err(Error::NonFinite($ctx));
                }
                Ok(Self(DVector::from_vec(coords)))
            }

            pub fn from_vector(v: DVector<T>) -> Self {
                Self(v)
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_vector(&self) -> &DVector<T> {
                &self.0
            }
        }
    };
}

vector_newtype!(StateVector, "state vector");
vector_newtype!(AmbientPose, "ambient pose");
vector_newtype!(Observation, "observation");

/// PCA subspace model mapping between ambient poses and latent states.
#[derive(Debug, Clone)]
pub struct LatentModel<T: Real> {
    /// Training mean in ambient space.
    pub mean: DVector<T>,
    /// Orthonormal basis, `d_ambient x d_latent`, columns sorted by variance.
    pub basis: DMatrix<T>,
    /// All eigenvalues of the sample covariance, sorted descending. The
    /// first `d_latent` belong to the retained directions; the tail is the
    /// reconstruction residual spectrum.
    pub eigenvalues: DVector<T>,
}

impl<T: Real> LatentModel<T> {
    /// Fits the top `d_latent` principal directions of the pose sample.
    pub fn fit(poses: &[AmbientPose<T>], d_latent: usize) -> Result<Self> {
        if d_latent < 1 {
            return Err(Error::InvalidConfig("d_latent must be >= 1".into()));
        }
        let n = poses.len();
        if n < d_latent + 1 {
            return Err(Error::EmptyInput("need at least d_latent + 1 poses"));
        }
        let d = poses[0].dim();
        if d_latent > d {
            return Err(Error::InvalidConfig(format!(
                "d_latent {d_latent} exceeds ambient dimension {d}"
            )));
        }
        for p in poses {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "pca input pose",
                    expected: d,
                    got: p.dim(),
                });
            }
        }

        let inv_n = T::one() / real::<T>(n as f64);
        let mut mean = DVector::zeros(d);
        for p in poses {
            mean += &p.0;
        }
        mean *= inv_n;

        let mut cov = DMatrix::<T>::zeros(d, d);
        for p in poses {
            let c = &p.0 - &mean;
            // Upper triangle only; symmetrized below.
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        let denom = T::one() / real::<T>((n - 1) as f64);
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] * denom;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("eigenvalues are finite")
        });

        let eigenvalues =
            DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i].max(T::zero())));
        let floor = eigenvalues[0] * real::<T>(1e-12);
        if eigenvalues[0] <= T::zero() || eigenvalues[d_latent - 1] <= floor {
            return Err(Error::RankDeficient { wanted: d_latent });
        }

        let mut basis = DMatrix::zeros(d, d_latent);
        for (col, &src) in order.iter().take(d_latent).enumerate() {
            basis.set_column(col, &eig.eigenvectors.column(src));
        }

        Ok(Self {
            mean,
            basis,
            eigenvalues,
        })
    }

    pub fn d_ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn d_latent(&self) -> usize {
        self.basis.ncols()
    }

    /// Projects an ambient pose into the latent space: `x = Bᵀ (y - mean)`.
    pub fn encode(&self, pose: &AmbientPose<T>) -> Result<StateVector<T>> {
        if pose.dim() != self.d_ambient() {
            return Err(Error::DimensionMismatch {
                context: "encode",
                expected: self.d_ambient(),
                got: pose.dim(),
            });
        }
        Ok(StateVector(self.basis.tr_mul(&(&pose.0 - &self.mean))))
    }

    /// Reconstructs an ambient pose: `y = mean + B x`.
    pub fn decode(&self, state: &StateVector<T>) -> Result<AmbientPose<T>> {
        if state.dim() != self.d_latent() {
            return Err(Error::DimensionMismatch {
                context: "decode",
                expected: self.d_latent(),
                got: state.dim(),
            });
        }
        Ok(AmbientPose(&self.mean + &self.basis * &state.0))
    }

    /// Retained eigenvalues (variance along each latent direction).
    pub fn retained_eigenvalues(&self) -> DVector<T> {
        DVector::from_iterator(
            self.d_latent(),
            self.eigenvalues.iter().take(self.d_latent()).copied(),
        )
    }

    /// Number of directions with non-negligible variance.
    pub fn numerical_rank(&self) -> usize {
        let floor = self.eigenvalues[0] * real::<T>(1e-10);
        self.eigenvalues.iter().filter(|&&v| v > floor).count()
    }
}
