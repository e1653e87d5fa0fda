//! RBF kernel bases.
//!
//! The inverse-width convention is used throughout: `K(a, b) = exp(-sigma *
//! ||a - b||^2)`, so larger sigma means narrower kernels. Product kernels
//! over (state, descriptor) pairs score the two blocks with separate widths
//! and multiply, which is the same as a single weighted squared distance.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
    ProductRbf,
}

#[derive(Debug, Clone, Copy)]
pub struct KernelConfig<T: Real> {
    pub kind: KernelKind,
    /// Inverse width for the state block (or the whole input for plain RBF).
    pub sigma_x: T,
    /// Inverse width for the descriptor block (product kernels only).
    pub sigma_r: T,
    /// Leading dimensions belonging to the state block (product kernels only).
    pub x_dim: usize,
}

impl<T: Real> KernelConfig<T> {
    pub fn rbf(sigma: T) -> Result<Self> {
        if sigma <= T::zero() || !sigma.finite() {
            return Err(Error::InvalidConfig("kernel width must be positive".into()));
        }
        Ok(Self {
            kind: KernelKind::Rbf,
            sigma_x: sigma,
            sigma_r: sigma,
            x_dim: 0,
        })
    }

    pub fn product_rbf(sigma_x: T, sigma_r: T, x_dim: usize) -> Result<Self> {
        if sigma_x <= T::zero() || sigma_r <= T::zero() || !sigma_x.finite() || !sigma_r.finite() {
            return Err(Error::InvalidConfig("kernel widths must be positive".into()));
        }
        Ok(Self {
            kind: KernelKind::ProductRbf,
            sigma_x,
            sigma_r,
            x_dim,
        })
    }

    /// Kernel value between two (concatenated) input vectors.
    pub fn eval(&self, a: &DVector<T>, b: &DVector<T>) -> T {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = T::zero();
        match self.kind {
            KernelKind::Rbf => {
                for i in 0..a.len() {
                    let d = a[i] - b[i];
                    acc += d * d;
                }
                acc *= self.sigma_x;
            }
            KernelKind::ProductRbf => {
                for i in 0..self.x_dim {
                    let d = a[i] - b[i];
                    acc += self.sigma_x * d * d;
                }
                for i in self.x_dim..a.len() {
                    let d = a[i] - b[i];
                    acc += self.sigma_r * d * d;
                }
            }
        }
        (-acc).exp()
    }
}

/// Anchor pool plus active mask. Column 0 of the design is a constant bias
/// when `bias` is set; anchor `j` maps to column `j + 1` (or `j` without
/// bias).
#[derive(Debug, Clone)]
pub struct BasisSet<T: Real> {
    pub anchors: Vec<DVector<T>>,
    pub active: Vec<bool>,
    pub bias: bool,
    pub bias_active: bool,
}

impl<T: Real> BasisSet<T> {
    pub fn new(bias: bool) -> Self {
        Self {
            anchors: Vec::new(),
            active: Vec::new(),
            bias,
            bias_active: false,
        }
    }

    /// Adds an anchor unless an identical one (max-abs distance <= 1e-12)
    /// already exists; returns its index, or `None` for duplicates.
    pub fn push_anchor(&mut self, anchor: DVector<T>) -> Option<usize> {
        if self.find_duplicate(&anchor).is_some() {
            return None;
        }
        self.anchors.push(anchor);
        self.active.push(false);
        Some(self.anchors.len() - 1)
    }

    pub fn find_duplicate(&self, anchor: &DVector<T>) -> Option<usize> {
        let tol = real::<T>(1e-12);
        self.anchors.iter().position(|a| {
            a.len() == anchor.len() && (a - anchor).amax() <= tol
        })
    }

    pub fn n_columns(&self) -> usize {
        self.anchors.len() + usize::from(self.bias)
    }

    pub fn active_columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        if self.bias && self.bias_active {
            cols.push(0);
        }
        let off = usize::from(self.bias);
        for (j, &a) in self.active.iter().enumerate() {
            if a {
                cols.push(j + off);
            }
        }
        cols
    }

    pub fn active_count(&self) -> usize {
        usize::from(self.bias && self.bias_active)
            + self.active.iter().filter(|&&a| a).count()
    }

    /// Kernel response of `input` against every active column.
    pub fn design_row(&self, cfg: &KernelConfig<T>, input: &DVector<T>) -> Result<DVector<T>> {
        if let Some(a) = self.anchors.first() {
            if a.len() != input.len() {
                return Err(Error::DimensionMismatch {
                    context: "design row",
                    expected: a.len(),
                    got: input.len(),
                });
            }
        }
        let cols = self.active_columns();
        let off = usize::from(self.bias);
        let mut row = DVector::zeros(cols.len());
        for (k, &c) in cols.iter().enumerate() {
            row[k] = if self.bias && c == 0 {
                T::one()
            } else {
                cfg.eval(input, &self.anchors[c - off])
            };
        }
        Ok(row)
    }

    /// Kernel response of `input` against every column (active or not).
    pub fn full_row(&self, cfg: &KernelConfig<T>, input: &DVector<T>) -> DVector<T> {
        let off = usize::from(self.bias);
        DVector::from_fn(self.n_columns(), |c, _| {
            if self.bias && c == 0 {
                T::one()
            } else {
                cfg.eval(input, &self.anchors[c - off])
            }
        })
    }
}

/// Median-heuristic inverse width: `sigma = 1 / (2 * median ||a - b||^2)`,
/// computed over a deterministic subsample of input pairs.
pub fn median_inverse_width<T: Real>(points: &[DVector<T>]) -> T {
    let cap = 256.min(points.len());
    if cap < 2 {
        return T::one();
    }
    let stride = (points.len() / cap).max(1);
    let sample: Vec<&DVector<T>> = points.iter().step_by(stride).take(cap).collect();
    let mut d2: Vec<T> = Vec::with_capacity(sample.len() * (sample.len() - 1) / 2);
    for i in 0..sample.len() {
        for j in (i + 1)..sample.len() {
            d2.push((sample[i] - sample[j]).norm_squared());
        }
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let med = d2[d2.len() / 2];
    if med <= T::zero() {
        T::one()
    } else {
        T::one() / (real::<T>(2.0) * med)
    }
}
