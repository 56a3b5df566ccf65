//! Fixed-step RK4 simulation and seeded ensembles.
//!
//! The integrator is classical RK4 with a uniform step. Control is piecewise
//! constant: within a step the control active at the step's start time is
//! held, and the schedule's contribution adds to whatever control is already
//! baked into the system (models are usually carried at u = 0, analysis
//! snapshots at a fixed u). A trajectory diverges when any state component
//! leaves [−threshold, threshold] or stops being finite; the error carries
//! the samples accumulated up to that point.
//!
//! Ensembles draw initial conditions from an axis-aligned box with a seeded
//! ChaCha8 stream. Generators with a known latent subspace sample the box in
//! latent coordinates, lift, and add Gaussian noise only in the orthogonal
//! complement, so the data exercises both the invariant subspace and the
//! transient decay onto it. All draws happen sequentially before the
//! (parallel) integrations, which keeps ensembles bit-reproducible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::PolySystem;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimOptions {
    /// Integration step.
    pub dt: f64,
    /// Divergence threshold on |state component|.
    pub divergence_threshold: f64,
    /// Record every `sample_stride`-th step (1 = every step). The stored step
    /// stays uniform at stride·dt.
    pub sample_stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 0.01,
            divergence_threshold: 1e8,
            sample_stride: 1,
        }
    }
}

/// Piecewise-constant control signal: (value, duration) segments. When the
/// segments end before the horizon the final value extends to cover it and
/// the produced trajectory carries a warning flag. An empty schedule means
/// zero control with no warning.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    segments: Vec<(DVector<f64>, f64)>,
}

impl PiecewiseControl {
    pub fn none(dim: usize) -> Self {
        let _ = dim;
        PiecewiseControl { segments: Vec::new() }
    }

    pub fn constant(u: DVector<f64>, duration: f64) -> Self {
        PiecewiseControl {
            segments: vec![(u, duration)],
        }
    }

    pub fn from_segments(segments: Vec<(DVector<f64>, f64)>) -> Result<Self> {
        for (u, d) in &segments {
            if !d.is_finite() || *d <= 0.0 {
                return Err(Error::Config(format!("segment duration {d} must be positive")));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("schedule control"));
            }
        }
        Ok(PiecewiseControl { segments })
    }

    pub fn segments(&self) -> &[(DVector<f64>, f64)] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|(_, d)| d).sum()
    }

    /// Active control at time `t` plus whether `t` ran past the last segment.
    fn at(&self, t: f64, dim: usize) -> (DVector<f64>, bool) {
        if self.segments.is_empty() {
            return (DVector::zeros(dim), false);
        }
        let mut acc = 0.0;
        for (u, d) in &self.segments {
            acc += d;
            if t < acc {
                return (u.clone(), false);
            }
        }
        (self.segments.last().unwrap().0.clone(), true)
    }
}

/// Uniformly sampled trajectory. Rows of `states`, `derivs`, and `controls`
/// correspond to entries of `times`; `derivs` holds the exact field value
/// (drift + total control) at each sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub derivs: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    /// Set when the schedule was shorter than the horizon and its final
    /// segment was extended.
    pub schedule_extended: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state(self.len() - 1)
    }

    /// Stored sampling step (stride · dt).
    pub fn stored_dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

/// Integrate `sys` from `x0` for `horizon` time units under `control`.
pub fn integrate(
    sys: &PolySystem,
    x0: &DVector<f64>,
    control: &PiecewiseControl,
    horizon: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!("horizon {horizon} must be positive")));
    }
    if !(opts.dt > 0.0) || !opts.dt.is_finite() {
        return Err(Error::Config(format!("dt {} must be positive", opts.dt)));
    }
    if opts.sample_stride == 0 {
        return Err(Error::Config("sample_stride must be >= 1".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: sys.dim(),
            got: x0.len(),
        });
    }

    let n = sys.dim();
    let dt = opts.dt;
    let steps = ((horizon / dt) + 1e-9).floor() as usize;
    let mut rec_t: Vec<f64> = Vec::with_capacity(steps / opts.sample_stride + 2);
    let mut rec_x: Vec<DVector<f64>> = Vec::new();
    let mut rec_d: Vec<DVector<f64>> = Vec::new();
    let mut rec_u: Vec<DVector<f64>> = Vec::new();

    let mut x = x0.clone();
    let mut extended = false;
    let build = |t: &[f64], xs: &[DVector<f64>], ds: &[DVector<f64>], us: &[DVector<f64>], ext: bool| {
        let rows = xs.len();
        let pack = |vs: &[DVector<f64>]| {
            DMatrix::from_fn(rows, n, |r, c| vs[r][c])
        };
        Trajectory {
            times: t.to_vec(),
            states: pack(xs),
            derivs: pack(ds),
            controls: pack(us),
            schedule_extended: ext,
        }
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        let (sched_u, past_end) = control.at(t, n);
        extended |= past_end;
        let u_total = &sched_u + sys.control();
        let k1 = sys.eval_drift(&x)? + &u_total;
        if k % opts.sample_stride == 0 {
            rec_t.push(t);
            rec_x.push(x.clone());
            rec_d.push(k1.clone());
            rec_u.push(u_total.clone());
        }
        if k == steps {
            break;
        }
        let half = 0.5 * dt;
        let k2 = sys.eval_drift(&(&x + half * &k1))? + &u_total;
        let k3 = sys.eval_drift(&(&x + half * &k2))? + &u_total;
        let k4 = sys.eval_drift(&(&x + dt * &k3))? + &u_total;
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let bad = x
            .iter()
            .any(|v| !v.is_finite() || v.abs() > opts.divergence_threshold);
        if bad {
            return Err(Error::Divergence {
                t: (k + 1) as f64 * dt,
                threshold: opts.divergence_threshold,
                partial: Box::new(build(&rec_t, &rec_x, &rec_d, &rec_u, extended)),
            });
        }
    }

    Ok(build(&rec_t, &rec_x, &rec_d, &rec_u, extended))
}

/// Axis-aligned box sampler for ensemble initial conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSampler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

impl BoxSampler {
    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::Config("sampler box lo/hi lengths differ or are empty".into()));
        }
        if self.count == 0 {
            return Err(Error::Config("sampler count must be >= 1".into()));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l < h) {
                return Err(Error::Config(format!("sampler box side [{l}, {h}] is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub requested: usize,
    pub excluded_divergent: usize,
    pub horizon: f64,
    pub dt: f64,
    pub sample_stride: usize,
    pub latent_sampling: bool,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    pub meta: EnsembleMeta,
}

impl Ensemble {
    pub fn dim(&self) -> usize {
        self.trajectories.first().map(|t| t.dim()).unwrap_or(0)
    }

    pub fn total_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}

/// Latent-subspace sampling instructions for generators whose interesting
/// dynamics live on a known r-dimensional plane.
pub struct LatentSampling<'a> {
    /// Orthonormal n×r basis of the latent plane.
    pub basis: &'a DMatrix<f64>,
    /// Std-dev of the Gaussian component added in the orthogonal complement.
    pub noise_sigma: f64,
}

pub(crate) fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Box-Muller; u1 strictly positive to keep ln finite.
    let u1: f64 = loop {
        let v: f64 = rng.random();
        if v > f64::MIN_POSITIVE {
            break v;
        }
    };
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = std::f64::consts::TAU * u2;
    (r * th.cos(), r * th.sin())
}

/// Integrate `sampler.count` trajectories from seeded box draws. Divergent
/// members are excluded and counted; an ensemble where every member diverged
/// is an error.
pub fn ensemble(
    sys: &PolySystem,
    latent: Option<&LatentSampling>,
    sampler: &BoxSampler,
    horizon: f64,
    opts: &SimOptions,
) -> Result<Ensemble> {
    sampler.validate()?;
    let n = sys.dim();
    let box_dim = sampler.lo.len();
    if let Some(ls) = latent {
        if ls.basis.nrows() != n || ls.basis.ncols() != box_dim {
            return Err(Error::DimensionMismatch {
                context: "latent basis",
                expected: n,
                got: ls.basis.nrows(),
            });
        }
    } else if box_dim != n {
        return Err(Error::DimensionMismatch {
            context: "sampler box",
            expected: n,
            got: box_dim,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut ics = Vec::with_capacity(sampler.count);
    for _ in 0..sampler.count {
        let z = DVector::from_iterator(
            box_dim,
            (0..box_dim).map(|i| rng.random_range(sampler.lo[i]..sampler.hi[i])),
        );
        let x0 = match latent {
            None => z,
            Some(ls) => {
                let mut g = DVector::zeros(n);
                let mut i = 0;
                while i < n {
                    let (a, b) = normal_pair(&mut rng);
                    g[i] = a;
                    if i + 1 < n {
                        g[i + 1] = b;
                    }
                    i += 2;
                }
                let in_plane = ls.basis * &z;
                let perp = &g - ls.basis * (ls.basis.transpose() * &g);
                in_plane + ls.noise_sigma * perp
            }
        };
        ics.push(x0);
    }

    let results: Vec<Result<Trajectory>> = ics
        .par_iter()
        .map(|x0| integrate(sys, x0, &PiecewiseControl::none(n), horizon, opts))
        .collect();

    let mut trajectories = Vec::new();
    let mut excluded = 0usize;
    for r in results {
        match r {
            Ok(t) => trajectories.push(t),
            Err(Error::Divergence { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if trajectories.is_empty() {
        return Err(Error::EmptyEnsemble { count: sampler.count });
    }
    Ok(Ensemble {
        trajectories,
        meta: EnsembleMeta {
            seed: sampler.seed,
            requested: sampler.count,
            excluded_divergent: excluded,
            horizon,
            dt: opts.dt,
            sample_stride: opts.sample_stride,
            latent_sampling: latent.is_some(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::poly::Term;
    use approx::assert_relative_eq;

    fn decay() -> PolySystem {
        // ẋ = −x
        PolySystem::new(1, vec![vec![Term::new(-1.0, vec![1])]]).unwrap()
    }

    #[test]
    fn two_samples_for_single_step() {
        let opts = SimOptions::default();
        let tr = integrate(
            &decay(),
            &DVector::from_column_slice(&[1.0]),
            &PiecewiseControl::none(1),
            opts.dt,
            &opts,
        )
        .unwrap();
        assert_eq!(tr.len(), 2);
        assert_relative_eq!(tr.times[1], 0.01);
    }

    #[test]
    fn rk4_fourth_order_on_exponential_decay() {
        let x0 = DVector::from_column_slice(&[1.0]);
        let horizon = 1.0;
        fn err(dt: f64, x0: &DVector<f64>, horizon: f64) -> f64 {
            let opts = SimOptions {
                dt,
                ..SimOptions::default()
            };
            let tr = integrate(
                &decay(),
                x0,
                &PiecewiseControl::none(1),
                horizon,
                &opts,
            )
            .unwrap();
            (tr.final_state()[0] - (-horizon).exp()).abs()
        }
        let e1 = err(0.01, &x0, horizon);
        let e2 = err(0.005, &x0, horizon);
        // Fourth order: halving dt should shrink the error by ~16; require ≥ 14.
        assert!(e1 / e2 >= 14.0, "order ratio {}", e1 / e2);
    }

    #[test]
    fn derivs_match_field_at_samples() {
        let sys = generators::brusselator();
        let opts = SimOptions::default();
        let u = DVector::from_column_slice(&[0.3, -0.1]);
        let tr = integrate(
            &sys,
            &DVector::from_column_slice(&[1.0, 1.0]),
            &PiecewiseControl::constant(u.clone(), 10.0),
            2.0,
            &opts,
        )
        .unwrap();
        for k in [0, 57, tr.len() - 1] {
            let x = tr.state(k);
            let expect = sys.eval_drift(&x).unwrap() + &u;
            let got = tr.derivs.row(k).transpose();
            assert_relative_eq!((expect - got).norm(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn schedule_switches_and_extends() {
        let sys = decay();
        let opts = SimOptions::default();
        let sched = PiecewiseControl::from_segments(vec![
            (DVector::from_column_slice(&[1.0]), 0.05),
            (DVector::from_column_slice(&[-1.0]), 0.05),
        ])
        .unwrap();
        let tr = integrate(
            &sys,
            &DVector::from_column_slice(&[0.0]),
            &sched,
            0.2,
            &opts,
        )
        .unwrap();
        assert!(tr.schedule_extended);
        assert_relative_eq!(tr.controls[(0, 0)], 1.0);
        assert_relative_eq!(tr.controls[(7, 0)], -1.0);
        assert_relative_eq!(tr.controls[(tr.len() - 1, 0)], -1.0);
    }

    #[test]
    fn baked_control_adds_to_schedule() {
        let sys = decay().with_control(&[2.0]).unwrap();
        let opts = SimOptions::default();
        let tr = integrate(
            &sys,
            &DVector::from_column_slice(&[0.0]),
            &PiecewiseControl::constant(DVector::from_column_slice(&[1.0]), 1.0),
            0.05,
            &opts,
        )
        .unwrap();
        assert_relative_eq!(tr.controls[(0, 0)], 3.0);
        assert_relative_eq!(tr.derivs[(0, 0)], 3.0);
    }

    #[test]
    fn divergence_carries_partial_trajectory() {
        // ẋ = x³ blows up from x0 = 3 quickly.
        let sys = PolySystem::new(1, vec![vec![Term::new(1.0, vec![3])]]).unwrap();
        let opts = SimOptions::default();
        let err = integrate(
            &sys,
            &DVector::from_column_slice(&[3.0]),
            &PiecewiseControl::none(1),
            10.0,
            &opts,
        )
        .unwrap_err();
        match err {
            Error::Divergence { partial, t, .. } => {
                assert!(partial.len() >= 1);
                assert!(t > 0.0);
                assert!(partial.times.last().unwrap() < &t);
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn sample_stride_keeps_uniform_times() {
        let opts = SimOptions {
            sample_stride: 5,
            ..SimOptions::default()
        };
        let tr = integrate(
            &decay(),
            &DVector::from_column_slice(&[1.0]),
            &PiecewiseControl::none(1),
            1.0,
            &opts,
        )
        .unwrap();
        assert_eq!(tr.len(), 21);
        for w in tr.times.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.05, epsilon = 1e-12);
        }
    }

    #[test]
    fn ensemble_deterministic_and_counts_divergent() {
        let sys = generators::bistable_chem();
        let sampler = BoxSampler {
            lo: vec![0.0, 0.0],
            hi: vec![7.0, 6.0],
            count: 16,
            seed: 42,
        };
        let opts = SimOptions::default();
        let a = ensemble(&sys, None, &sampler, 5.0, &opts).unwrap();
        let b = ensemble(&sys, None, &sampler, 5.0, &opts).unwrap();
        assert_eq!(a.trajectories.len(), b.trajectories.len());
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.states, tb.states);
        }
        assert_eq!(a.meta.requested, 16);
    }

    #[test]
    fn bistable_ensemble_lands_on_known_attractors() {
        let sys = generators::bistable_chem();
        let sampler = BoxSampler {
            lo: vec![0.0, 0.0],
            hi: vec![7.0, 6.0],
            count: 100,
            seed: 7,
        };
        let opts = SimOptions::default();
        let ens = ensemble(&sys, None, &sampler, 100.0, &opts).unwrap();
        let attractors = [[0.0, 0.0], [2.0, 0.5], [6.0, 4.5]];
        for tr in &ens.trajectories {
            let x = tr.final_state();
            let near = attractors
                .iter()
                .any(|a| ((x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2)).sqrt() < 1e-2);
            assert!(near, "endpoint {:?} not near any attractor", (x[0], x[1]));
        }
    }
}
