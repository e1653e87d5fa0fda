//! Filter oracle tests.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::latent::{AmbientPose, Observation, StateVector};
use crate::mixture::{CbmeModel, HbmeModel, MixtureConfig};
use crate::rng::stream;

fn v(items: &[f64]) -> DVector<f64> {
    DVector::from_vec(items.to_vec())
}

/// Minimal single-view single-expert bottom-up model mapping a 1-d
/// descriptor straight to a 1-d state.
fn identity_hbme(center: f64, spread: f64, seed: u64) -> HbmeModel<f64> {
    let mut rng = stream(seed, "toy-hbme");
    let pairs: Vec<(DVector<f64>, StateVector<f64>, usize)> = (0..40)
        .map(|_| {
            let x = center + spread * crate::rng::std_normal::<f64, _>(&mut rng);
            (v(&[x]), StateVector(v(&[x])), 0usize)
        })
        .collect();
    let mut cfg = MixtureConfig::default();
    cfg.n_views = 1;
    cfg.n_experts = 1;
    HbmeModel::train(&pairs, &cfg).unwrap()
}

/// Bottom-up model whose predictive density is bimodal at +/-`mode`, with
/// optional asymmetric gate mass.
fn bimodal_hbme(mode: f64, bias_toward_positive: bool, seed: u64) -> HbmeModel<f64> {
    let mut rng = stream(seed, "bimodal-hbme");
    let mut pairs = Vec::new();
    let n_pos = if bias_toward_positive { 90 } else { 50 };
    let n_neg = 100 - n_pos;
    for _ in 0..n_pos {
        let d = rng.gen::<f64>() * 0.2;
        pairs.push((v(&[d]), StateVector(v(&[mode + 0.02 * d])), 0usize));
    }
    for _ in 0..n_neg {
        let d = rng.gen::<f64>() * 0.2;
        pairs.push((v(&[d]), StateVector(v(&[-mode - 0.02 * d])), 0usize));
    }
    let mut cfg = MixtureConfig::default();
    cfg.n_views = 1;
    cfg.n_experts = 2;
    HbmeModel::train(&pairs, &cfg).unwrap()
}

fn bundle_with(
    hbme: HbmeModel<f64>,
    likelihood: impl Fn(&Observation<f64>, &StateVector<f64>) -> f64 + Send + Sync + 'static,
    dyn_scale: f64,
) -> ModelBundle<f64> {
    ModelBundle {
        dynamics: GaussianRandomWalk::new(v(&[dyn_scale])),
        likelihood: Arc::new(likelihood),
        hbme,
        cbme: None,
        descriptor_fn: Arc::new(|obs: &Observation<f64>| obs.0.clone()),
    }
}

fn short_cfg(algorithm: Algorithm, n: usize, layers: usize, seed: u64) -> FilterConfig<f64> {
    let mut cfg = FilterConfig::new(algorithm);
    cfg.n_particles = n;
    cfg.schedule = AnnealSchedule::geometric(layers, 0.1).unwrap();
    cfg.seed = seed;
    cfg
}

// ----- arithmetic ops ------------------------------------------------------

#[test]
fn gamma_update_is_exact_mass_ratio() {
    use crate::particle::{Origin, Particle};
    let mk = |specs: &[(f64, Origin)]| {
        ParticleSet::new(
            specs
                .iter()
                .map(|&(w, origin)| Particle {
                    state: StateVector(v(&[0.0])),
                    weight: w,
                    origin,
                })
                .collect(),
            0,
        )
        .unwrap()
    };
    let ps = mk(&[(0.6, Origin::Bu), (0.4, Origin::Dyn)]);
    assert!((gamma_update(&ps, 0.5) - 0.6).abs() < 1e-15);

    let no_bu = mk(&[(0.3, Origin::Dyn), (0.7, Origin::Dyn)]);
    assert_eq!(gamma_update(&no_bu, 0.5), 0.0);

    let zero = mk(&[(0.0, Origin::Bu), (0.0, Origin::Dyn)]);
    assert_eq!(gamma_update(&zero, 0.5), 0.5);
}

#[test]
fn jlm_weight_arithmetic() {
    assert_eq!(jlm_weight(0.73, 0.21, 0.0), 0.73);
    assert_eq!(jlm_weight(0.73, 0.21, 1.0), 0.21);
    let blended: f64 = jlm_weight(0.8, 0.2, 0.35);
    let direct = 0.8f64.powf(0.65) * 0.2f64.powf(0.35);
    assert!((blended - direct).abs() < 1e-15);
    assert!((blended - 0.4925).abs() < 1e-3, "blend {blended}");
    assert_eq!(jlm_weight(0.0, 0.0, 0.35), 0.0);
    assert_eq!(jlm_weight(0.0, 0.5, 0.35), 0.0);
}

#[test]
fn schedule_validation_rejects_bad_ladders() {
    assert!(AnnealSchedule::new(vec![0.5, 0.4, 1.0], vec![1.0, 0.5, 0.25]).is_err());
    assert!(AnnealSchedule::new(vec![0.5, 0.9], vec![1.0, 0.5]).is_err()); // last != 1
    assert!(AnnealSchedule::new(vec![0.5, 1.0], vec![0.5, 1.0]).is_err()); // scales increase
    let sched = AnnealSchedule::<f64>::geometric(10, 0.1).unwrap();
    assert_eq!(sched.layers(), 10);
    assert!((sched.exponents[0] - 0.1).abs() < 1e-12);
    assert!((sched.exponents[9] - 1.0).abs() < 1e-15);
}

// ----- initialization ------------------------------------------------------

#[test]
fn init_concentrates_on_a_near_delta_density() {
    let hbme = identity_hbme(2.0, 0.01, 1);
    let bundle = bundle_with(hbme, |_, _| 1.0, 0.1);
    let cfg = short_cfg(Algorithm::Apf, 200, 3, 7);
    let mut rng = stream(cfg.seed, "track");
    let state = init_tracker(&bundle, &Observation(v(&[2.0])), &cfg, &mut rng).unwrap();
    assert!((state.gamma - 0.5).abs() < 1e-15);
    let sigma = state
        .particles
        .particles
        .iter()
        .map(|p| (p.state.0[0] - 2.0).powi(2))
        .sum::<f64>()
        .sqrt()
        / (state.particles.len() as f64).sqrt();
    for p in &state.particles.particles {
        assert!((p.state.0[0] - 2.0).abs() < 3.0 * sigma.max(0.1));
    }
}

#[test]
fn init_populates_both_modes_of_a_bimodal_density() {
    let hbme = bimodal_hbme(1.5, false, 2);
    let bundle = bundle_with(hbme, |_, _| 1.0, 0.1);
    let cfg = short_cfg(Algorithm::Apf, 200, 3, 11);
    let mut rng = stream(cfg.seed, "track");
    let state = init_tracker(&bundle, &Observation(v(&[0.1])), &cfg, &mut rng).unwrap();
    let pos = state
        .particles
        .particles
        .iter()
        .filter(|p| p.state.0[0] > 0.0)
        .count();
    let frac = pos as f64 / state.particles.len() as f64;
    assert!(frac > 0.2 && frac < 0.8, "positive-mode fraction {frac}");
}

// ----- APF -----------------------------------------------------------------

#[test]
fn flat_likelihood_means_pure_diffusion() {
    let hbme = identity_hbme(0.0, 0.3, 3);
    let bundle = bundle_with(hbme, |_, _| 1.0, 0.2);
    let cfg = short_cfg(Algorithm::Apf, 100, 4, 13);
    let mut rng = stream(cfg.seed, "track");
    let state = init_tracker(&bundle, &Observation(v(&[0.0])), &cfg, &mut rng).unwrap();
    let spread_before: f64 = state
        .particles
        .particles
        .iter()
        .map(|p| p.state.0[0].powi(2))
        .sum::<f64>();
    let next = apf_step(&state, &Observation(v(&[0.0])), &bundle, &cfg, &mut rng).unwrap();
    // Uniform weights: zero weight variance, full ESS.
    let n = next.particles.len() as f64;
    assert!((next.diagnostics.ess - n).abs() < 1e-6);
    let mean_w = 1.0 / n;
    for p in &next.particles.particles {
        assert!((p.weight - mean_w).abs() < 1e-12);
    }
    let spread_after: f64 = next
        .particles
        .particles
        .iter()
        .map(|p| p.state.0[0].powi(2))
        .sum::<f64>();
    assert!(spread_after > spread_before);
}

#[test]
fn apf_locks_onto_a_unimodal_gaussian_peak() {
    // Static truth at 1.3; likelihood a unimodal Gaussian around it.
    let peak = 1.3;
    let sigma = 0.3;
    let hbme = identity_hbme(0.5, 0.5, 4);
    let bundle = bundle_with(
        hbme,
        move |_, s: &StateVector<f64>| (-(s.0[0] - peak).powi(2) / (2.0 * sigma * sigma)).exp(),
        0.05,
    );
    let n = 400;
    let cfg = short_cfg(Algorithm::Apf, n, 5, 17);
    let mut rng = stream(cfg.seed, "track");
    let state = init_tracker(&bundle, &Observation(v(&[0.5])), &cfg, &mut rng).unwrap();
    let next = apf_step(&state, &Observation(v(&[0.5])), &bundle, &cfg, &mut rng).unwrap();
    let est = next.particles.weighted_mean().0[0];
    let tol = 3.0 * sigma / (n as f64).sqrt() + 0.05; // annealing sharpens past the analytic posterior
    assert!((est - peak).abs() < tol, "estimate {est} vs peak {peak}");
}

/// Independent SIR oracle sharing the same random stream: sample dynamics,
/// weigh by likelihood once, systematic-resample (own implementation),
/// roughen, reweigh. One-layer APF must match it bit for bit.
#[test]
fn one_layer_apf_equals_sir_oracle() {
    let peak = 0.7;
    let lik = move |_: &Observation<f64>, s: &StateVector<f64>| {
        (-(s.0[0] - peak).powi(2) / 0.08).exp()
    };
    let hbme = identity_hbme(0.6, 0.2, 5);
    let bundle = bundle_with(hbme, lik, 0.1);
    let mut cfg = short_cfg(Algorithm::Apf, 60, 1, 23);
    cfg.schedule = AnnealSchedule::new(vec![1.0], vec![0.03]).unwrap();

    let obs = Observation(v(&[0.6]));
    let mut rng = stream(cfg.seed, "track");
    let init = init_tracker(&bundle, &obs, &cfg, &mut rng).unwrap();
    let apf = apf_step(&init, &obs, &bundle, &cfg, &mut rng).unwrap();

    // Oracle replay on a fresh stream.
    let mut rng2 = stream(cfg.seed, "track");
    let init2 = init_tracker(&bundle, &obs, &cfg, &mut rng2).unwrap();
    let n = init2.particles.len();
    // 1. propagate through dynamics
    let mut states: Vec<f64> = Vec::new();
    for p in &init2.particles.particles {
        let mut x = p.state.0[0];
        x += 0.1 * crate::rng::std_normal::<f64, _>(&mut rng2);
        states.push(x);
    }
    // 2. importance weights: carry * likelihood
    let mut weights: Vec<f64> = states
        .iter()
        .zip(&init2.particles.particles)
        .map(|(&x, p)| p.weight * lik(&obs, &StateVector(v(&[x]))))
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    // 3. systematic resampling, written independently
    let u0: f64 = crate::rng::unit_uniform::<f64, _>(&mut rng2) / n as f64;
    let mut cumulative = vec![0.0; n + 1];
    for i in 0..n {
        cumulative[i + 1] = cumulative[i] + weights[i];
    }
    let mut resampled = Vec::with_capacity(n);
    for k in 0..n {
        let target = u0 + k as f64 / n as f64;
        let mut idx = 0;
        while idx + 1 < n && cumulative[idx + 1] < target {
            idx += 1;
        }
        resampled.push(states[idx]);
    }
    // 4. roughening
    for x in &mut resampled {
        *x += 0.03 * 0.1 * crate::rng::std_normal::<f64, _>(&mut rng2);
    }
    // 5. final full-power weights
    let final_w: Vec<f64> = resampled
        .iter()
        .map(|&x| lik(&obs, &StateVector(v(&[x]))))
        .collect();
    let total: f64 = final_w.iter().sum();

    for (i, p) in apf.particles.particles.iter().enumerate() {
        assert_eq!(p.state.0[0], resampled[i], "state {i}");
        assert_eq!(p.weight, final_w[i] / total, "weight {i}");
    }
}

// ----- degenerate equivalences --------------------------------------------

fn run_pair(
    a: &FilterConfig<f64>,
    b: &FilterConfig<f64>,
    bundle: &ModelBundle<f64>,
    obs: &[Observation<f64>],
) -> (TrackResult<f64>, TrackResult<f64>) {
    let hooks = RunHooks::default();
    let ra = run_sequence(bundle, obs, a, &hooks).unwrap();
    let rb = run_sequence(bundle, obs, b, &hooks).unwrap();
    (ra, rb)
}

fn assert_bit_equal(a: &TrackResult<f64>, b: &TrackResult<f64>) {
    assert_eq!(a.frames.len(), b.frames.len());
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        assert_eq!(fa.estimate.0, fb.estimate.0);
        assert_eq!(fa.map.0, fb.map.0);
        assert_eq!(fa.ess, fb.ess);
    }
}

#[test]
fn jpf_with_zero_gamma_is_apf() {
    let hbme = identity_hbme(0.0, 0.4, 6);
    let bundle = bundle_with(
        hbme,
        |obs: &Observation<f64>, s: &StateVector<f64>| {
            (-(s.0[0] - obs.0[0]).powi(2) / 0.1).exp()
        },
        0.08,
    );
    let obs: Vec<Observation<f64>> = (0..10)
        .map(|t| Observation(v(&[0.1 * t as f64])))
        .collect();
    let mut apf = short_cfg(Algorithm::Apf, 80, 4, 31);
    apf.gamma0 = 0.0;
    let mut jpf = apf.clone();
    jpf.algorithm = Algorithm::Jpf;
    let (ra, rb) = run_pair(&apf, &jpf, &bundle, &obs);
    assert_bit_equal(&ra, &rb);
    for f in &rb.frames {
        assert_eq!(f.gamma, 0.0);
    }
}

#[test]
fn jlm_with_zero_beta_is_apf() {
    let hbme = identity_hbme(0.0, 0.4, 7);
    let bundle = bundle_with(
        hbme,
        |obs: &Observation<f64>, s: &StateVector<f64>| {
            (-(s.0[0] - obs.0[0]).powi(2) / 0.1).exp()
        },
        0.08,
    );
    let obs: Vec<Observation<f64>> = (0..10)
        .map(|t| Observation(v(&[0.05 * t as f64])))
        .collect();
    let apf = short_cfg(Algorithm::Apf, 80, 4, 37);
    let mut jlm = apf.clone();
    jlm.algorithm = Algorithm::Jlm;
    jlm.beta = 0.0;
    let (ra, rb) = run_pair(&apf, &jlm, &bundle, &obs);
    assert_bit_equal(&ra, &rb);
}

#[test]
fn jpf_with_gamma_one_is_purely_bottom_up() {
    let hbme = identity_hbme(0.0, 0.4, 8);
    let bundle = bundle_with(hbme, |_, _| 1.0, 0.08);
    let obs = vec![Observation(v(&[0.0])), Observation(v(&[0.0]))];
    let mut cfg = short_cfg(Algorithm::Jpf, 50, 2, 41);
    cfg.gamma0 = 1.0;
    let mut rng = stream(cfg.seed, "track");
    let state = init_tracker(&bundle, &obs[0], &cfg, &mut rng).unwrap();
    let next = jpf_step(&state, &obs[1], &bundle, &cfg, &mut rng).unwrap();
    assert!((next.diagnostics.bu_mass - 1.0).abs() < 1e-12);
    assert_eq!(next.diagnostics.dyn_mass, 0.0);
}

// ----- JLM ambiguity resolution -------------------------------------------

#[test]
fn jlm_prior_breaks_a_symmetric_likelihood_tie() {
    // Likelihood has equal peaks at +/-1.5; the bottom-up prior favors +1.5.
    let mode = 1.5;
    let lik = move |_: &Observation<f64>, s: &StateVector<f64>| {
        let a = (-(s.0[0] - mode).powi(2) / 0.05).exp();
        let b = (-(s.0[0] + mode).powi(2) / 0.05).exp();
        a + b
    };
    let hbme = bimodal_hbme(mode, true, 9);
    let bundle = bundle_with(hbme, lik, 0.05);
    let obs: Vec<Observation<f64>> = (0..6).map(|_| Observation(v(&[0.1]))).collect();
    let cfg = short_cfg(Algorithm::Jlm, 300, 5, 43);
    let result = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    let last = result.frames.last().unwrap();
    // Posterior mass on the true (positive) mode using the final estimate's
    // particle cloud is summarized by the weighted mean sign.
    assert!(last.estimate.0[0] > 0.0);

    // Directly check the mass split on a fresh step.
    let mut rng = stream(cfg.seed, "track");
    let state = init_tracker(&bundle, &obs[0], &cfg, &mut rng).unwrap();
    let next = jlm_step(&state, &obs[1], &bundle, &cfg, &mut rng).unwrap();
    let pos_mass: f64 = next
        .particles
        .particles
        .iter()
        .filter(|p| p.state.0[0] > 0.0)
        .map(|p| p.weight)
        .sum();
    assert!(pos_mass > 0.5, "positive-mode mass {pos_mass}");
}

// ----- OPF ------------------------------------------------------------------

fn linear_system_models(seed: u64) -> (HbmeModel<f64>, CbmeModel<f64>) {
    // 2-d latent rotation dynamics, observation = state + noise.
    let a = DMatrix::from_row_slice(2, 2, &[0.95, -0.15, 0.15, 0.95]);
    let mut rng = stream(seed, "linsys");
    let mut triples = Vec::new();
    let mut pairs = Vec::new();
    let mut x = v(&[1.2, 0.0]);
    for _ in 0..400 {
        let next = &a * &x;
        let obs = v(&[
            x[0] + 0.02 * crate::rng::std_normal::<f64, _>(&mut rng),
            x[1] + 0.02 * crate::rng::std_normal::<f64, _>(&mut rng),
        ]);
        triples.push((StateVector(x.clone()), obs.clone(), StateVector(next.clone())));
        pairs.push((obs, StateVector(x.clone()), 0usize));
        x = next;
        if x.norm() < 0.15 {
            x = v(&[
                1.5 * (crate::rng::unit_uniform::<f64, _>(&mut rng) - 0.5) * 2.0,
                1.5 * (crate::rng::unit_uniform::<f64, _>(&mut rng) - 0.5) * 2.0,
            ]);
        }
    }
    let mut cfg = MixtureConfig::default();
    cfg.n_views = 1;
    cfg.n_experts = 1;
    cfg.m_experts = 2;
    let hbme = HbmeModel::train(&pairs, &cfg).unwrap();
    let cbme = CbmeModel::train(&triples, &cfg).unwrap();
    (hbme, cbme)
}

fn linear_system_bundle(seed: u64) -> (ModelBundle<f64>, DMatrix<f64>) {
    let (hbme, cbme) = linear_system_models(seed);
    let a = DMatrix::from_row_slice(2, 2, &[0.95, -0.15, 0.15, 0.95]);
    let bundle = ModelBundle {
        dynamics: GaussianRandomWalk::new(v(&[0.08, 0.08])),
        likelihood: Arc::new(|obs: &Observation<f64>, s: &StateVector<f64>| {
            (-((s.0[0] - obs.0[0]).powi(2) + (s.0[1] - obs.0[1]).powi(2)) / (2.0 * 0.05f64.powi(2)))
                .exp()
        }),
        hbme,
        cbme: Some(cbme),
        descriptor_fn: Arc::new(|obs: &Observation<f64>| obs.0.clone()),
    };
    (bundle, a)
}

fn tracking_rmse(result: &TrackResult<f64>, truth: &[DVector<f64>]) -> f64 {
    let mut acc = 0.0;
    for (f, t) in result.frames.iter().zip(truth) {
        acc += (&f.estimate.0 - t).norm_squared();
    }
    (acc / truth.len() as f64).sqrt()
}

#[test]
fn opf_beats_apf_on_its_own_dynamics() {
    let (bundle, a) = linear_system_bundle(51);

    // 20 paired seeds, median comparison.
    let mut apf_errs = Vec::new();
    let mut opf_errs = Vec::new();
    for seed in 0..20u64 {
        let mut truth = Vec::new();
        let mut obs = Vec::new();
        let mut rng = stream(seed.wrapping_add(900), "linsys-test");
        let mut x = v(&[1.2, 0.1]);
        for _ in 0..15 {
            truth.push(x.clone());
            obs.push(Observation(v(&[
                x[0] + 0.02 * crate::rng::std_normal::<f64, _>(&mut rng),
                x[1] + 0.02 * crate::rng::std_normal::<f64, _>(&mut rng),
            ])));
            x = &a * &x;
        }
        let mut apf_cfg = short_cfg(Algorithm::Apf, 100, 4, seed);
        apf_cfg.schedule = AnnealSchedule::geometric(4, 0.1).unwrap();
        let mut opf_cfg = apf_cfg.clone();
        opf_cfg.algorithm = Algorithm::Opf;
        let ra = run_sequence(&bundle, &obs, &apf_cfg, &RunHooks::default()).unwrap();
        let ro = run_sequence(&bundle, &obs, &opf_cfg, &RunHooks::default()).unwrap();
        apf_errs.push(tracking_rmse(&ra, &truth));
        opf_errs.push(tracking_rmse(&ro, &truth));
    }
    apf_errs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    opf_errs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let med_apf = apf_errs[10];
    let med_opf = opf_errs[10];
    assert!(
        med_opf <= med_apf,
        "opf median {med_opf} vs apf median {med_apf}"
    );
}

#[test]
fn opf_without_cbme_is_a_configuration_error() {
    let hbme = identity_hbme(0.0, 0.3, 10);
    let bundle = bundle_with(hbme, |_, _| 1.0, 0.1);
    let cfg = short_cfg(Algorithm::Opf, 50, 2, 3);
    let obs = vec![Observation(v(&[0.0])); 3];
    match run_sequence(&bundle, &obs, &cfg, &RunHooks::default()) {
        Err(Error::MissingModel(msg)) => assert!(msg.contains("cbme")),
        other => panic!("expected missing model, got {other:?}"),
    }
}

#[test]
fn opf_flags_proposal_collapse_out_of_hull() {
    let (bundle, _) = linear_system_bundle(53);
    let cfg = short_cfg(Algorithm::Opf, 60, 2, 5);
    // Observations far outside the training hull drag the particles into a
    // region where the product kernels die.
    let obs: Vec<Observation<f64>> = (0..8)
        .map(|t| Observation(v(&[40.0 + t as f64, -40.0])))
        .collect();
    let result = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    let activations: Vec<f64> = result
        .frames
        .iter()
        .filter_map(|f| f.proposal_activation)
        .collect();
    assert!(!activations.is_empty());
    let last = activations.last().unwrap();
    assert!(*last < 0.01, "activation {last} did not collapse");
}

#[test]
fn opf_is_deterministic_per_seed() {
    let (bundle, a) = linear_system_bundle(57);
    let mut obs = Vec::new();
    let mut x = v(&[1.0, 0.2]);
    for _ in 0..6 {
        obs.push(Observation(x.clone()));
        x = &a * &x;
    }
    let cfg = short_cfg(Algorithm::Opf, 40, 3, 77);
    let r1 = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    let r2 = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    assert_bit_equal(&r1, &r2);
}

// ----- run_sequence behaviors ----------------------------------------------

#[test]
fn static_truth_converges_within_frames() {
    let truth = 0.8;
    let sigma_obs = 0.1;
    let hbme = identity_hbme(0.3, 0.4, 11);
    let bundle = bundle_with(
        hbme,
        move |obs: &Observation<f64>, s: &StateVector<f64>| {
            (-(s.0[0] - obs.0[0]).powi(2) / (2.0 * sigma_obs * sigma_obs)).exp()
        },
        0.03,
    );
    let n = 300;
    let cfg = short_cfg(Algorithm::Apf, n, 5, 91);
    let obs: Vec<Observation<f64>> = (0..8).map(|_| Observation(v(&[truth]))).collect();
    let result = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    let est = result.frames[5].estimate.0[0];
    let tol = 3.0 * sigma_obs / (n as f64).sqrt() + 0.03;
    assert!((est - truth).abs() < tol, "estimate {est}");
}

#[test]
fn zero_likelihood_frame_triggers_recovery() {
    let hbme = identity_hbme(0.0, 0.3, 12);
    let bundle = bundle_with(
        hbme,
        |obs: &Observation<f64>, s: &StateVector<f64>| {
            if obs.0[0] > 90.0 {
                0.0 // adversarial frame: nothing is plausible
            } else {
                (-(s.0[0] - obs.0[0]).powi(2) / 0.1).exp()
            }
        },
        0.05,
    );
    let cfg = short_cfg(Algorithm::Apf, 60, 3, 97);
    let mut obs: Vec<Observation<f64>> = (0..4).map(|_| Observation(v(&[0.0]))).collect();
    obs.push(Observation(v(&[100.0]))); // poisoned frame
    obs.extend((0..4).map(|_| Observation(v(&[0.0]))));
    let result = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    assert_eq!(result.recoveries, 1);
    assert!(result.frames.iter().any(|f| f.recovery));
    // Tracking resumes after the recovery.
    let last = result.frames.last().unwrap();
    assert!((last.estimate.0[0]).abs() < 0.5);
}

#[test]
fn estimator_error_shrinks_with_particle_count() {
    let truth = 0.4;
    let sigma_obs = 0.2;
    let mut medians = Vec::new();
    for &n in &[50usize, 200, 800] {
        let mut errs = Vec::new();
        for seed in 0..20u64 {
            let hbme = identity_hbme(0.2, 0.4, 13);
            let bundle = bundle_with(
                hbme,
                move |obs: &Observation<f64>, s: &StateVector<f64>| {
                    (-(s.0[0] - obs.0[0]).powi(2) / (2.0 * sigma_obs * sigma_obs)).exp()
                },
                0.05,
            );
            let cfg = short_cfg(Algorithm::Apf, n, 3, seed.wrapping_mul(7919));
            let obs: Vec<Observation<f64>> = (0..6).map(|_| Observation(v(&[truth]))).collect();
            let result = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
            let err: f64 = result.frames[2..]
                .iter()
                .map(|f| (f.estimate.0[0] - truth).abs())
                .sum::<f64>()
                / (result.frames.len() - 2) as f64;
            errs.push(err);
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(errs[10]);
    }
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "medians not monotone: {medians:?}"
    );
}

#[test]
fn gamma_history_matches_bu_mass_fractions() {
    let hbme = bimodal_hbme(1.0, false, 14);
    let bundle = bundle_with(
        hbme,
        |obs: &Observation<f64>, s: &StateVector<f64>| {
            (-(s.0[0] - obs.0[0]).powi(2) / 0.4).exp()
        },
        0.05,
    );
    let cfg = short_cfg(Algorithm::Jpf, 80, 3, 101);
    let obs: Vec<Observation<f64>> = (0..12)
        .map(|t| Observation(v(&[1.0 + 0.01 * t as f64])))
        .collect();
    let result = run_sequence(&bundle, &obs, &cfg, &RunHooks::default()).unwrap();
    for w in result.frames.windows(2) {
        // gamma at frame t+1 equals the BU weight-mass fraction at t.
        let expected = w[0].bu_mass / (w[0].bu_mass + w[0].dyn_mass);
        assert!(
            (w[1].gamma - expected).abs() < 1e-9,
            "gamma {} vs mass fraction {expected}",
            w[1].gamma
        );
        assert!(w[1].gamma >= 0.0 && w[1].gamma <= 1.0);
    }
}

#[test]
fn track_csv_has_coverage_and_adaptation_columns() {
    let hbme = identity_hbme(0.0, 0.3, 15);
    let bundle = bundle_with(
        hbme,
        |obs: &Observation<f64>, s: &StateVector<f64>| {
            (-(s.0[0] - obs.0[0]).powi(2) / 0.1).exp()
        },
        0.05,
    );
    let cfg = short_cfg(Algorithm::Apf, 40, 2, 3);
    let obs: Vec<Observation<f64>> = (0..4).map(|_| Observation(v(&[0.0]))).collect();
    let mut hooks = RunHooks::default();
    hooks.online_learning = true;
    hooks.elite_fraction = 0.05;
    let result = run_sequence(&bundle, &obs, &cfg, &hooks).unwrap();
    let csv = result.to_csv();
    let header = csv.lines().next().unwrap();
    assert!(header.contains("adaptation_error"));
    assert!(header.contains("coverage"));
    // adaptation errors recorded per frame when learning is on
    assert!(result.frames.iter().all(|f| f.adaptation_error.is_some()));
}
