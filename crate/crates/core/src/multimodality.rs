//! Dataset multimodality measure and tracking-time mode coverage.
//!
//! Paired samples are clustered in the input (descriptor) space and the
//! output (state) space. Each input cluster gets an association table
//! recording which output clusters its members map to; the table weight is
//! `h = N(x) * exp(H) / n` with `H` the natural-log Shannon entropy of the
//! association frequencies. Uniform associations (exp(H) = n) and single-
//! cluster associations both give the maximal weight `N(x)`.
//!
//! During tracking, the coverage ratio of the current input cluster is the
//! count-weighted fraction of its associated output clusters that hold at
//! least one particle.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::particle::ParticleSet;
use crate::{real, rng, Real};

/// K-means model over a point cloud.
#[derive(Debug, Clone)]
pub struct ClusterModel<T: Real> {
    pub centers: Vec<DVector<T>>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia_history: Vec<T>,
}

impl<T: Real> ClusterModel<T> {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Nearest center by squared Euclidean distance; ties break to the
    /// lowest index.
    pub fn assign(&self, point: &DVector<T>) -> usize {
        let mut best = 0usize;
        let mut best_d = (point - &self.centers[0]).norm_squared();
        for (i, c) in self.centers.iter().enumerate().skip(1) {
            let d = (point - c).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Lloyd's algorithm from k-means++ seeding. Assignment is parallel over
/// points; center accumulation is sequential so results are identical to a
/// single-threaded run.
pub fn kmeans_fit<T: Real>(
    points: &[DVector<T>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterModel<T>> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let mut distinct: Vec<&DVector<T>> = Vec::new();
    'outer: for p in points {
        for q in &distinct {
            if (*q - p).amax() <= real(1e-12) {
                continue 'outer;
            }
        }
        distinct.push(p);
        if distinct.len() >= k {
            break;
        }
    }
    if distinct.len() < k {
        return Err(Error::InvalidConfig(format!(
            "k-means needs at least {k} distinct points"
        )));
    }

    let mut rng = rng::stream(seed, "kmeans");
    let mut centers: Vec<DVector<T>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<T> = points
        .iter()
        .map(|p| (p - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: T = d2.iter().copied().sum();
        let next = if total <= T::zero() {
            // All remaining mass at the chosen centers; pick any point
            // distinct from them.
            points
                .iter()
                .position(|p| centers.iter().all(|c| (p - c).amax() > real(1e-12)))
                .unwrap_or(0)
        } else {
            let mut target = rng::unit_uniform::<T, _>(&mut rng) * total;
            let mut idx = 0;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                idx = i;
                if target <= T::zero() {
                    break;
                }
            }
            idx
        };
        let c = points[next].clone();
        for (i, p) in points.iter().enumerate() {
            let d = (p - &c).norm_squared();
            if d < d2[i] {
                d2[i] = d;
            }
        }
        centers.push(c);
    }

    let mut model = ClusterModel {
        centers,
        inertia_history: Vec::new(),
    };
    let mut assignments = vec![0usize; points.len()];
    for _ in 0..max_iters {
        let new_assign: Vec<(usize, T)> = points
            .par_iter()
            .map(|p| {
                let a = model.assign(p);
                (a, (p - &model.centers[a]).norm_squared())
            })
            .collect();
        let inertia: T = new_assign.iter().map(|&(_, d)| d).sum();
        model.inertia_history.push(inertia);
        let changed = new_assign
            .iter()
            .zip(&assignments)
            .any(|(&(a, _), &old)| a != old);
        assignments = new_assign.into_iter().map(|(a, _)| a).collect();

        let dim = points[0].len();
        let mut sums = vec![DVector::<T>::zeros(dim); model.k()];
        let mut counts = vec![0usize; model.k()];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a] += p;
            counts[a] += 1;
        }
        for (i, (s, &c)) in sums.iter().zip(&counts).enumerate() {
            if c > 0 {
                model.centers[i] = s / real::<T>(c as f64);
            }
        }
        if !changed && model.inertia_history.len() > 1 {
            break;
        }
    }
    Ok(model)
}

/// Association record for one input cluster.
#[derive(Debug, Clone)]
pub struct AssociationTable<T: Real> {
    pub input_cluster: usize,
    /// Number of samples in the input cluster.
    pub count: usize,
    /// Output cluster id -> number of members mapping there.
    pub assoc: BTreeMap<usize, usize>,
    /// Entropy-weighted association weight `h`.
    pub weight: T,
}

impl<T: Real> AssociationTable<T> {
    pub fn n_output_clusters(&self) -> usize {
        self.assoc.len()
    }
}

/// `h = N(x) * exp(H) / n` with natural-log entropy of the association
/// frequencies.
pub fn association_weight<T: Real>(counts: &[usize]) -> T {
    let total: usize = counts.iter().sum();
    let n = counts.len();
    debug_assert!(total > 0 && n > 0);
    let total_t = real::<T>(total as f64);
    let mut entropy = T::zero();
    for &c in counts {
        if c == 0 {
            continue;
        }
        let p = real::<T>(c as f64) / total_t;
        entropy -= p * p.ln();
    }
    total_t * entropy.exp() / real::<T>(n as f64)
}

/// Builds one association table per occupied input cluster.
pub fn build_associations<T: Real>(
    inputs: &[DVector<T>],
    outputs: &[DVector<T>],
    in_model: &ClusterModel<T>,
    out_model: &ClusterModel<T>,
) -> Result<Vec<AssociationTable<T>>> {
    if inputs.len() != outputs.len() {
        return Err(Error::DimensionMismatch {
            context: "association pairs",
            expected: inputs.len(),
            got: outputs.len(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::EmptyInput("association pairs"));
    }
    let mut per_cluster: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let pairs: Vec<(usize, usize)> = inputs
        .par_iter()
        .zip(outputs.par_iter())
        .map(|(i, o)| (in_model.assign(i), out_model.assign(o)))
        .collect();
    for (ci, co) in pairs {
        *per_cluster.entry(ci).or_default().entry(co).or_insert(0) += 1;
    }
    Ok(per_cluster
        .into_iter()
        .map(|(input_cluster, assoc)| {
            let counts: Vec<usize> = assoc.values().copied().collect();
            let count = counts.iter().sum();
            AssociationTable {
                input_cluster,
                count,
                assoc,
                weight: association_weight(&counts),
            }
        })
        .collect())
}

/// Histogram over `n` (output clusters per input cluster), weighted by `h`.
#[derive(Debug, Clone, Default)]
pub struct MultimodalityHistogram<T: Real> {
    pub bins: BTreeMap<usize, T>,
}

impl<T: Real> MultimodalityHistogram<T> {
    pub fn total_weight(&self) -> T {
        self.bins.values().copied().sum()
    }

    /// Weight mass in bins with `n >= threshold`.
    pub fn mass_at_least(&self, threshold: usize) -> T {
        self.bins
            .iter()
            .filter(|(&n, _)| n >= threshold)
            .map(|(_, &w)| w)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,n,weight\n");
        for (i, (n, w)) in self.bins.iter().enumerate() {
            out.push_str(&format!("{i},{n},{w}\n"));
        }
        out
    }
}

pub fn histogram<T: Real>(tables: &[AssociationTable<T>]) -> Result<MultimodalityHistogram<T>> {
    if tables.is_empty() {
        return Err(Error::EmptyInput("association tables"));
    }
    let mut bins: BTreeMap<usize, T> = BTreeMap::new();
    for t in tables {
        *bins.entry(t.n_output_clusters()).or_insert(T::zero()) += t.weight;
    }
    Ok(MultimodalityHistogram { bins })
}

/// Coverage of one input cluster's associations by a particle set.
#[derive(Debug, Clone, Copy)]
pub struct Coverage<T: Real> {
    /// Count-weighted fraction of associated output clusters occupied by at
    /// least one particle; 1 when every association is covered.
    pub ratio: T,
    /// The input fell in a cluster with no association table.
    pub vacuous: bool,
}

/// Everything needed to score mode coverage during tracking.
#[derive(Debug, Clone)]
pub struct CoverageContext<T: Real> {
    pub in_model: ClusterModel<T>,
    pub out_model: ClusterModel<T>,
    pub tables: Vec<AssociationTable<T>>,
}

impl<T: Real> CoverageContext<T> {
    pub fn new(
        in_model: ClusterModel<T>,
        out_model: ClusterModel<T>,
        tables: Vec<AssociationTable<T>>,
    ) -> Self {
        Self {
            in_model,
            out_model,
            tables,
        }
    }

    pub fn coverage_ratio(
        &self,
        current_input: &DVector<T>,
        particles: &ParticleSet<T>,
    ) -> Result<Coverage<T>> {
        if particles.is_empty() {
            return Err(Error::EmptyInput("particles"));
        }
        let cluster = self.in_model.assign(current_input);
        let table = match self.tables.iter().find(|t| t.input_cluster == cluster) {
            Some(t) => t,
            None => {
                return Ok(Coverage {
                    ratio: T::one(),
                    vacuous: true,
                })
            }
        };
        let mut occupied: Vec<usize> = particles
            .particles
            .iter()
            .map(|p| self.out_model.assign(p.state.as_vector()))
            .collect();
        occupied.sort_unstable();
        occupied.dedup();
        let mut covered = 0usize;
        for (&out_cluster, &count) in &table.assoc {
            if occupied.binary_search(&out_cluster).is_ok() {
                covered += count;
            }
        }
        Ok(Coverage {
            ratio: real::<T>(covered as f64) / real::<T>(table.count as f64),
            vacuous: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::StateVector;
    use crate::particle::{Origin, Particle};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn v(items: &[f64]) -> DVector<f64> {
        DVector::from_vec(items.to_vec())
    }

    fn blob_points(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = crate::rng::stream(seed, "mm-blobs");
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..per {
                out.push(v(&[
                    c[0] + spread * crate::rng::std_normal::<f64, _>(&mut rng),
                    c[1] + spread * crate::rng::std_normal::<f64, _>(&mut rng),
                ]));
            }
        }
        out
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let points = blob_points(&centers, 50, 0.4, 1);
        let model = kmeans_fit(&points, 3, 7, 100).unwrap();
        let separation = 10.0;
        for c in &centers {
            let target = v(c);
            let best = model
                .centers
                .iter()
                .map(|m| (m - &target).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1 * separation, "center off by {best}");
        }
    }

    #[test]
    fn kmeans_k1_is_the_mean() {
        let points = blob_points(&[[2.0, -1.0]], 40, 1.0, 2);
        let model = kmeans_fit(&points, 1, 3, 50).unwrap();
        let mut mean = DVector::zeros(2);
        for p in &points {
            mean += p;
        }
        mean /= points.len() as f64;
        assert_relative_eq!(model.centers[0], mean, epsilon = 1e-10);
    }

    #[test]
    fn kmeans_k_equals_n_gives_zero_inertia() {
        let points: Vec<DVector<f64>> = (0..8).map(|i| v(&[i as f64, -(i as f64)])).collect();
        let model = kmeans_fit(&points, 8, 5, 100).unwrap();
        assert!(model.inertia_history.last().unwrap() < &1e-18);
    }

    #[test]
    fn kmeans_inertia_is_nonincreasing_and_deterministic() {
        let points = blob_points(&[[0.0, 0.0], [4.0, 1.0], [2.0, 5.0]], 60, 1.2, 9);
        let a = kmeans_fit(&points, 5, 42, 100).unwrap();
        for w in a.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        let b = kmeans_fit(&points, 5, 42, 100).unwrap();
        for (x, y) in a.centers.iter().zip(&b.centers) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn kmeans_rejects_insufficient_distinct_points() {
        let points = vec![v(&[1.0, 1.0]); 10];
        assert!(kmeans_fit(&points, 2, 1, 10).is_err());
    }

    #[test]
    fn association_weight_matches_hand_arithmetic() {
        // Paper's A-case {4,1,1}: H = 0.8676, h = 6 e^H / 3 = 4.762.
        let h_a: f64 = association_weight(&[4, 1, 1]);
        assert!((h_a - 4.762).abs() < 1e-3, "h(A) = {h_a}");
        // Paper's B-case {2,2,2}: uniform, h = N(x) = 6.
        let h_b: f64 = association_weight(&[2, 2, 2]);
        assert!((h_b - 6.0).abs() < 1e-3, "h(B) = {h_b}");
        // n = 1 also maximal.
        let h_single: f64 = association_weight(&[7]);
        assert_relative_eq!(h_single, 7.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_counts_maximize_weight_by_enumeration() {
        // All compositions with N(x) <= 8 into n parts.
        fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
            if parts == 1 {
                return vec![vec![total]];
            }
            let mut out = Vec::new();
            for first in 1..=(total - parts + 1) {
                for mut rest in compositions(total - first, parts - 1) {
                    let mut comp = vec![first];
                    comp.append(&mut rest);
                    out.push(comp);
                }
            }
            out
        }
        for total in 2..=8usize {
            for parts in 2..=total {
                let uniformish: f64 = if total % parts == 0 {
                    association_weight(&vec![total / parts; parts])
                } else {
                    continue;
                };
                for comp in compositions(total, parts) {
                    let w: f64 = association_weight(&comp);
                    assert!(w <= uniformish + 1e-12);
                    assert!(w > 0.0 && w <= total as f64 + 1e-12);
                }
            }
        }
    }

    fn three_cluster_setup() -> (ClusterModel<f64>, ClusterModel<f64>) {
        let in_model = ClusterModel {
            centers: vec![v(&[0.0, 0.0]), v(&[10.0, 0.0])],
            inertia_history: vec![],
        };
        let out_model = ClusterModel {
            centers: vec![v(&[0.0]), v(&[5.0]), v(&[10.0])],
            inertia_history: vec![],
        };
        (in_model, out_model)
    }

    #[test]
    fn associations_reproduce_the_paper_index_lists() {
        let (in_model, out_model) = three_cluster_setup();
        // A = [1,1,1,1,2,3]: six samples in one input cluster.
        let inputs = vec![v(&[0.0, 0.0]); 6];
        let outputs = vec![
            v(&[0.0]),
            v(&[0.1]),
            v(&[-0.1]),
            v(&[0.2]),
            v(&[5.0]),
            v(&[10.0]),
        ];
        let tables = build_associations(&inputs, &outputs, &in_model, &out_model).unwrap();
        assert_eq!(tables.len(), 1);
        let t = &tables[0];
        assert_eq!(t.count, 6);
        assert_eq!(t.n_output_clusters(), 3);
        let counts: Vec<usize> = t.assoc.values().copied().collect();
        assert_eq!(counts, vec![4, 1, 1]);
        assert!((t.weight - 4.762).abs() < 1e-3);

        // B = [1,1,2,2,3,3].
        let outputs_b = vec![v(&[0.0]), v(&[0.1]), v(&[5.0]), v(&[5.1]), v(&[9.9]), v(&[10.0])];
        let tables_b = build_associations(&inputs, &outputs_b, &in_model, &out_model).unwrap();
        let tb = &tables_b[0];
        assert_eq!(
            tb.assoc.values().copied().collect::<Vec<usize>>(),
            vec![2, 2, 2]
        );
        assert!((tb.weight - 6.0).abs() < 1e-3);
    }

    #[test]
    fn single_cluster_association_has_n_one() {
        let (in_model, out_model) = three_cluster_setup();
        let inputs = vec![v(&[0.0, 0.0]); 4];
        let outputs = vec![v(&[0.0]); 4];
        let tables = build_associations(&inputs, &outputs, &in_model, &out_model).unwrap();
        assert_eq!(tables.len(), 1);
        assert_eq!(tables[0].n_output_clusters(), 1);
        assert_relative_eq!(tables[0].weight, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_sums_weights_per_n() {
        let t1 = AssociationTable {
            input_cluster: 0,
            count: 4,
            assoc: BTreeMap::from([(0, 2), (1, 2)]),
            weight: 3.0,
        };
        let t2 = AssociationTable {
            input_cluster: 1,
            count: 6,
            assoc: BTreeMap::from([(1, 3), (2, 3)]),
            weight: 5.0,
        };
        let h = histogram(&[t1, t2]).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert_relative_eq!(h.bins[&2], 8.0);
        assert_relative_eq!(h.total_weight(), 8.0);
    }

    fn particles_at(states: &[f64]) -> ParticleSet<f64> {
        ParticleSet::new(
            states
                .iter()
                .map(|&s| Particle {
                    state: StateVector(v(&[s])),
                    weight: 1.0 / states.len() as f64,
                    origin: Origin::Dyn,
                })
                .collect(),
            0,
        )
        .unwrap()
    }

    #[test]
    fn coverage_ratio_matches_hand_arithmetic() {
        let (in_model, out_model) = three_cluster_setup();
        let inputs = vec![v(&[0.0, 0.0]); 6];
        let outputs = vec![
            v(&[0.0]),
            v(&[0.1]),
            v(&[-0.1]),
            v(&[0.2]),
            v(&[5.0]),
            v(&[10.0]),
        ];
        let tables = build_associations(&inputs, &outputs, &in_model, &out_model).unwrap();
        let ctx = CoverageContext::new(in_model, out_model, tables);

        // All three associated output clusters occupied.
        let full = ctx
            .coverage_ratio(&v(&[0.1, 0.0]), &particles_at(&[0.0, 5.0, 10.0]))
            .unwrap();
        assert_relative_eq!(full.ratio, 1.0);
        assert!(!full.vacuous);

        // Only the count-4 cluster occupied: 4/6.
        let partial = ctx
            .coverage_ratio(&v(&[0.1, 0.0]), &particles_at(&[0.0, 0.2]))
            .unwrap();
        assert!((partial.ratio - 4.0 / 6.0).abs() < 1e-12);

        // No particle in any associated cluster... every particle lands in
        // some output cluster, so park them all in cluster 1 with a table
        // that only references clusters 0 and 2.
        let mut assoc = BTreeMap::new();
        assoc.insert(0usize, 3usize);
        assoc.insert(2usize, 3usize);
        let table = AssociationTable {
            input_cluster: 0,
            count: 6,
            assoc,
            weight: 6.0,
        };
        let (in_model2, out_model2) = three_cluster_setup();
        let ctx2 = CoverageContext::new(in_model2, out_model2, vec![table]);
        let none = ctx2
            .coverage_ratio(&v(&[0.1, 0.0]), &particles_at(&[5.0, 5.1]))
            .unwrap();
        assert_relative_eq!(none.ratio, 0.0);

        // Vacuous: input assigned to a cluster with no table.
        let vac = ctx2
            .coverage_ratio(&v(&[10.0, 0.0]), &particles_at(&[0.0]))
            .unwrap();
        assert!(vac.vacuous);
        assert_relative_eq!(vac.ratio, 1.0);
    }

    #[test]
    fn coverage_is_monotone_in_particles() {
        let (in_model, out_model) = three_cluster_setup();
        let inputs = vec![v(&[0.0, 0.0]); 6];
        let outputs = vec![
            v(&[0.0]),
            v(&[0.1]),
            v(&[-0.1]),
            v(&[0.2]),
            v(&[5.0]),
            v(&[10.0]),
        ];
        let tables = build_associations(&inputs, &outputs, &in_model, &out_model).unwrap();
        let ctx = CoverageContext::new(in_model, out_model, tables);
        let mut rng = crate::rng::stream(4, "cov-mono");
        let mut states: Vec<f64> = vec![rng.gen::<f64>() * 10.0];
        let mut prev = 0.0;
        for _ in 0..30 {
            let c = ctx
                .coverage_ratio(&v(&[0.0, 0.0]), &particles_at(&states))
                .unwrap();
            assert!(c.ratio >= prev - 1e-12);
            prev = c.ratio;
            states.push(rng.gen::<f64>() * 10.0);
        }
    }
}
