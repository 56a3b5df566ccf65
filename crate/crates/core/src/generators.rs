//! Benchmark system builders.
//!
//! Every builder returns an exact polynomial field together with whatever
//! ground truth the construction guarantees: known fixed points, and for the
//! networked families the planted low-dimensional structure (an orthonormal
//! basis of the active subspace plus the latent field expressed in basis
//! coordinates). Randomized builders are fully determined by a `u64` seed.
//!
//! Families:
//!
//! * `bistable_chem`: planar mass-action style field with two stable states
//!   separated by a saddle, used throughout as the planar workhorse.
//! * `brusselator`: planar oscillator whose only equilibrium is unstable and
//!   is encircled by a stable limit cycle.
//! * `hopfield`: n-dimensional associative memory network with cubic
//!   saturation. Memory patterns are built from Hadamard rows over shuffled
//!   index blocks so they are exactly orthogonal sign vectors, which makes the
//!   stored memories exact fixed points with Jacobian −I and keeps the memory
//!   plane exactly invariant.
//! * `lifted_random`: a random bistable latent field in r variables pushed
//!   through a random orthonormal embedding into n variables, with linear
//!   decay toward the embedded plane. The off-plane component obeys
//!   dw/dt = −w exactly.
//! * `dense_random`: dense random cubic coupling with per-degree coefficient
//!   normalization and odd damping, dissipative outside a modest ball.
//! * `lorenz`: the classic three-variable chaotic quadratic field, used as a
//!   latent template for aperiodic-attractor scenarios.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{monomials, Polynomial, PolySystem, Term};
use crate::sim::{integrate, PiecewiseControl, SimOptions};

/// Splitmix64-style mixing for deriving independent child seeds.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fixed point known from the construction. `exact` marks locations that
/// satisfy F(x) = 0 analytically rather than only to solver tolerance.
#[derive(Debug, Clone)]
pub struct KnownFixedPoint {
    pub location: DVector<f64>,
    pub exact: bool,
    pub label: String,
}

/// Planted low-dimensional structure of a networked system.
#[derive(Debug, Clone)]
pub struct LatentTruth {
    /// Orthonormal basis of the active subspace, one column per latent
    /// coordinate.
    pub basis: DMatrix<f64>,
    /// Latent field in basis coordinates, when the construction provides one
    /// in closed form.
    pub system: Option<PolySystem>,
    pub intrinsic_dim: usize,
}

/// Recommended initial-condition box. When `latent` is set the bounds are in
/// basis coordinates and ensemble sampling should go through the planted
/// basis.
#[derive(Debug, Clone)]
pub struct SampleRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub latent: bool,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub fixed_points: Vec<KnownFixedPoint>,
    pub latent: Option<LatentTruth>,
    pub sample_region: SampleRegion,
}

fn default_gain() -> f64 {
    1.5
}

/// Declarative description of a benchmark system, as it appears in config
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    BistableChem,
    Brusselator,
    Hopfield {
        n: usize,
        pairs: usize,
        #[serde(default = "default_gain")]
        gain: f64,
        seed: u64,
    },
    LiftedRandom {
        n: usize,
        r: usize,
        seed: u64,
    },
    DenseRandom {
        n: usize,
        density: f64,
        seed: u64,
    },
    Lorenz,
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::BistableChem | SystemSpec::Brusselator => 2,
            SystemSpec::Hopfield { n, .. } => *n,
            SystemSpec::LiftedRandom { n, .. } => *n,
            SystemSpec::DenseRandom { n, .. } => *n,
            SystemSpec::Lorenz => 3,
        }
    }

    pub fn build(&self) -> Result<(PolySystem, GroundTruth)> {
        match self {
            SystemSpec::BistableChem => Ok((bistable_chem(), bistable_chem_truth())),
            SystemSpec::Brusselator => Ok((brusselator(), brusselator_truth())),
            SystemSpec::Hopfield {
                n,
                pairs,
                gain,
                seed,
            } => hopfield(*n, *pairs, *gain, *seed),
            SystemSpec::LiftedRandom { n, r, seed } => lifted_random(*n, *r, *seed),
            SystemSpec::DenseRandom { n, density, seed } => {
                let sys = dense_random(*n, *density, *seed)?;
                let truth = GroundTruth {
                    fixed_points: Vec::new(),
                    latent: None,
                    sample_region: SampleRegion {
                        lo: vec![-2.0; *n],
                        hi: vec![2.0; *n],
                        latent: false,
                    },
                };
                Ok((sys, truth))
            }
            SystemSpec::Lorenz => Ok((lorenz(), lorenz_truth())),
        }
    }
}

/// Planar bistable field
///   dx/dt = 16y − x² − xy − 1.5x,  dy/dt = x² − 8y.
/// Fixed points (0,0), (2,1/2), (6,9/2); the outer two are sinks and the
/// middle one is a saddle. The first quadrant is forward invariant.
pub fn bistable_chem() -> PolySystem {
    PolySystem::new(
        2,
        vec![
            vec![
                Term::new(16.0, vec![0, 1]),
                Term::new(-1.0, vec![2, 0]),
                Term::new(-1.0, vec![1, 1]),
                Term::new(-1.5, vec![1, 0]),
            ],
            vec![Term::new(1.0, vec![2, 0]), Term::new(-8.0, vec![0, 1])],
        ],
    )
    .expect("exponent vectors are length 2")
}

fn bistable_chem_truth() -> GroundTruth {
    let fp = |x: f64, y: f64, label: &str| KnownFixedPoint {
        location: DVector::from_column_slice(&[x, y]),
        exact: true,
        label: label.to_string(),
    };
    GroundTruth {
        fixed_points: vec![
            fp(0.0, 0.0, "low sink"),
            fp(2.0, 0.5, "saddle"),
            fp(6.0, 4.5, "high sink"),
        ],
        latent: None,
        sample_region: SampleRegion {
            lo: vec![0.0, 0.0],
            hi: vec![7.0, 6.0],
            latent: false,
        },
    }
}

/// Planar oscillator
///   dx/dt = 1 + x²y − 4x,  dy/dt = 3x − x²y.
/// The equilibrium (1,3) is an unstable spiral surrounded by a stable limit
/// cycle.
pub fn brusselator() -> PolySystem {
    PolySystem::new(
        2,
        vec![
            vec![
                Term::new(1.0, vec![0, 0]),
                Term::new(1.0, vec![2, 1]),
                Term::new(-4.0, vec![1, 0]),
            ],
            vec![Term::new(3.0, vec![1, 0]), Term::new(-1.0, vec![2, 1])],
        ],
    )
    .expect("exponent vectors are length 2")
}

fn brusselator_truth() -> GroundTruth {
    GroundTruth {
        fixed_points: vec![KnownFixedPoint {
            location: DVector::from_column_slice(&[1.0, 3.0]),
            exact: true,
            label: "source inside stable cycle".to_string(),
        }],
        latent: None,
        sample_region: SampleRegion {
            lo: vec![0.0, 0.0],
            hi: vec![4.0, 6.0],
            latent: false,
        },
    }
}

/// Amplitude of the stored memories of the saturating network: the nonzero
/// solution of a = g·a − (g·a)³/3. At the default gain 1.5 this is exactly
/// 2/3, and g·a = 1 makes the cubic saturation flat at the memories.
pub fn memory_amplitude(gain: f64) -> f64 {
    (3.0 * (gain - 1.0) / gain.powi(3)).sqrt()
}

/// Associative memory network with cubic saturation:
///   dx_i/dt = −x_i + Σ_j W_ij (g x_j − (g x_j)³/3),
/// with W = (1/n) Σ_p ξ_p ξ_pᵀ over `pairs` exactly orthogonal random sign
/// patterns ξ_p. Orthogonality comes from assigning indices to four shuffled
/// blocks, giving each pattern the signs of a length-4 Hadamard row over the
/// blocks, and flipping all patterns by one shared random mask. Requires
/// n divisible by 4, n ≥ 4·pairs, pairs ≤ 4, gain > 1.
pub fn hopfield(n: usize, pairs: usize, gain: f64, seed: u64) -> Result<(PolySystem, GroundTruth)> {
    if n == 0 || n % 4 != 0 {
        return Err(Error::InvalidSpec(format!(
            "network size must be a positive multiple of 4, got {n}"
        )));
    }
    if pairs == 0 || pairs > 4 {
        return Err(Error::InvalidSpec(format!(
            "pattern count must be between 1 and 4, got {pairs}"
        )));
    }
    if n < 4 * pairs {
        return Err(Error::InvalidSpec(format!(
            "network size {n} too small for {pairs} orthogonal patterns"
        )));
    }
    if !(gain > 1.0) || !gain.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "gain must exceed 1 for nontrivial memories, got {gain}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x48_4F_50));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut block = vec![0usize; n];
    for (pos, &idx) in perm.iter().enumerate() {
        block[idx] = pos * 4 / n;
    }
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 })
        .collect();
    const HADAMARD: [[f64; 4]; 4] = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    let patterns: Vec<Vec<f64>> = (0..pairs)
        .map(|p| (0..n).map(|i| mask[i] * HADAMARD[p][block[i]]).collect())
        .collect();

    // W row by row; entries are exact multiples of 1/n.
    let inv_n = 1.0 / n as f64;
    let cubic = -gain.powi(3) / 3.0;
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms: Vec<Term> = Vec::new();
        let mut lin = vec![0u32; n];
        lin[i] = 1;
        terms.push(Term::new(-1.0, lin));
        for j in 0..n {
            let dot: f64 = patterns.iter().map(|xi| xi[i] * xi[j]).sum();
            if dot == 0.0 {
                continue;
            }
            let w = dot * inv_n;
            let mut e1 = vec![0u32; n];
            e1[j] = 1;
            terms.push(Term::new(gain * w, e1));
            let mut e3 = vec![0u32; n];
            e3[j] = 3;
            terms.push(Term::new(cubic * w, e3));
        }
        components.push(terms);
    }
    let sys = PolySystem::new(n, components)?;

    let amp = memory_amplitude(gain);
    let mut fixed_points = vec![KnownFixedPoint {
        location: DVector::zeros(n),
        exact: true,
        label: "origin (unstable)".to_string(),
    }];
    for (p, xi) in patterns.iter().enumerate() {
        for sign in [1.0, -1.0] {
            fixed_points.push(KnownFixedPoint {
                location: DVector::from_iterator(n, xi.iter().map(|&s| sign * amp * s)),
                exact: true,
                label: format!(
                    "memory {}{}",
                    if sign > 0.0 { "+" } else { "−" },
                    p
                ),
            });
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    let basis = DMatrix::from_fn(n, pairs, |i, p| patterns[p][i] * scale);
    let half = 1.2 * amp * (n as f64).sqrt();
    let truth = GroundTruth {
        fixed_points,
        latent: Some(LatentTruth {
            basis,
            system: None,
            intrinsic_dim: pairs,
        }),
        sample_region: SampleRegion {
            lo: vec![-half; pairs],
            hi: vec![half; pairs],
            latent: true,
        },
    };
    Ok((sys, truth))
}

/// Random n×r matrix with exactly orthonormal columns (QR of a Gaussian
/// draw), sign-fixed so each column's largest-magnitude entry is positive.
pub fn random_orthonormal(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    if r == 0 || r > n {
        return Err(Error::InvalidSpec(format!(
            "embedding rank {r} out of range for dimension {n}"
        )));
    }
    let mut g = DMatrix::zeros(n, r);
    let mut stash: Option<f64> = None;
    for j in 0..r {
        for i in 0..n {
            g[(i, j)] = match stash.take() {
                Some(v) => v,
                None => {
                    let (a, b) = crate::sim::normal_pair(rng);
                    stash = Some(b);
                    a
                }
            };
        }
    }
    let qr = g.qr();
    let mut q = qr.q();
    for j in 0..r {
        let mut best = 0;
        for i in 0..n {
            if q[(i, j)].abs() > q[(best, j)].abs() {
                best = i;
            }
        }
        if q[(best, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Push an r-dimensional latent field through an orthonormal embedding Q,
/// adding linear decay at rate `gamma` toward the embedded plane:
///   F(x) = Q F_latent(Qᵀ x) − γ (I − QQᵀ) x.
/// On the plane the damping vanishes, and the off-plane component obeys
/// dw/dt = −γw independently of the latent motion.
pub fn lift_system(latent: &PolySystem, basis: &DMatrix<f64>, gamma: f64) -> Result<PolySystem> {
    let (n, r) = (basis.nrows(), basis.ncols());
    if latent.dim() != r {
        return Err(Error::DimensionMismatch {
            context: "latent dimension vs basis columns",
            expected: r,
            got: latent.dim(),
        });
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "plane decay rate must be nonnegative, got {gamma}"
        )));
    }
    let qt = basis.transpose();
    let composed: Vec<Polynomial> = latent
        .components()
        .iter()
        .map(|c| c.compose_linear(&qt, n))
        .collect::<Result<Vec<_>>>()?;
    let proj = basis * basis.transpose();
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut comp = Polynomial::zero(n);
        for k in 0..r {
            let w = basis[(i, k)];
            if w != 0.0 {
                comp = comp.add(&composed[k].scale(w));
            }
        }
        if gamma > 0.0 {
            let mut terms = Vec::with_capacity(n + 1);
            for j in 0..n {
                let mut c = gamma * proj[(i, j)];
                if i == j {
                    c -= gamma;
                }
                if c != 0.0 {
                    let mut e = vec![0u32; n];
                    e[j] = 1;
                    terms.push(Term::new(c, e));
                }
            }
            comp = comp.add(&Polynomial::new(n, terms)?);
        }
        components.push(comp);
    }
    PolySystem::from_polynomials(components)
}

/// Random bistable latent field in r variables: a double-well backbone on the
/// first coordinate, odd linear-plus-cubic decay on the rest, and small
/// random quadratic cross terms. Draws are rejected (deterministically, by
/// reseeding) until two opposite-sign sinks are confirmed by integration.
fn bistable_latent(r: usize, seed: u64) -> Result<PolySystem> {
    if r < 2 {
        return Err(Error::InvalidSpec(format!(
            "latent dimension must be at least 2, got {r}"
        )));
    }
    let quadratics: Vec<Vec<u32>> = monomials(r, 2)
        .into_iter()
        .filter(|e| e.iter().sum::<u32>() == 2)
        .collect();
    for attempt in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x4C_41_54 + attempt));
        let a = rng.random_range(0.6..1.4);
        let mut components = Vec::with_capacity(r);
        for k in 0..r {
            let mut terms: Vec<Term> = Vec::new();
            let mut lin = vec![0u32; r];
            lin[k] = 1;
            let mut cub = vec![0u32; r];
            cub[k] = 3;
            if k == 0 {
                terms.push(Term::new(a, lin));
            } else {
                terms.push(Term::new(-rng.random_range(0.5..1.5), lin));
            }
            terms.push(Term::new(-1.0, cub));
            for e in &quadratics {
                if rng.random::<f64>() < 0.6 {
                    terms.push(Term::new(rng.random_range(-0.1..0.1), e.clone()));
                }
            }
            components.push(terms);
        }
        let sys = PolySystem::new(r, components)?;

        // Confirm two opposite sinks before accepting the draw.
        let opts = SimOptions {
            sample_stride: 100,
            ..SimOptions::default()
        };
        let run = |s: f64| -> Option<DVector<f64>> {
            let mut x0 = DVector::zeros(r);
            x0[0] = 2.0 * s;
            let traj = integrate(&sys, &x0, &PiecewiseControl::none(r), 60.0, &opts).ok()?;
            let end = traj.final_state();
            let drift = sys.eval_drift(&end).ok()?;
            (drift.norm() < 1e-8).then_some(end)
        };
        if let (Some(hi), Some(lo)) = (run(1.0), run(-1.0)) {
            if hi[0] > 0.1 && lo[0] < -0.1 {
                return Ok(sys);
            }
        }
    }
    Err(Error::DegenerateField(
        "no bistable latent draw found in 16 attempts".to_string(),
    ))
}

/// Random networked system with planted two-state structure: a bistable
/// latent field embedded into n variables by a random orthonormal basis, with
/// unit-rate decay toward the plane.
pub fn lifted_random(n: usize, r: usize, seed: u64) -> Result<(PolySystem, GroundTruth)> {
    if r >= n {
        return Err(Error::InvalidSpec(format!(
            "latent dimension {r} must be below network size {n}"
        )));
    }
    let latent = bistable_latent(r, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x42_41_53));
    let basis = random_orthonormal(n, r, &mut rng)?;
    let sys = lift_system(&latent, &basis, 1.0)?;
    let truth = GroundTruth {
        fixed_points: Vec::new(),
        latent: Some(LatentTruth {
            basis,
            system: Some(latent),
            intrinsic_dim: r,
        }),
        sample_region: SampleRegion {
            lo: vec![-2.0; r],
            hi: vec![2.0; r],
            latent: true,
        },
    };
    Ok((sys, truth))
}

/// Dense random cubic network. Every non-constant monomial of degree ≤ 3
/// enters each component with probability `density`; a drawn coefficient is
/// uniform in [−1, 1] scaled by 4^{−deg} / √(count of that degree), which
/// keeps the random part small enough on the ball of radius 10 that the odd
/// damping −x_i³ makes the flow strictly inward there.
pub fn dense_random(n: usize, density: f64, seed: u64) -> Result<PolySystem> {
    if n == 0 {
        return Err(Error::InvalidSpec("network size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidSpec(format!(
            "monomial density must lie in [0, 1], got {density}"
        )));
    }
    let monos: Vec<Vec<u32>> = monomials(n, 3)
        .into_iter()
        .filter(|e| e.iter().sum::<u32>() > 0)
        .collect();
    let mut count_by_degree = [0usize; 4];
    for e in &monos {
        count_by_degree[e.iter().sum::<u32>() as usize] += 1;
    }
    let scale: Vec<f64> = (0..4)
        .map(|k| 0.25f64.powi(k as i32) / (count_by_degree[k].max(1) as f64).sqrt())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x44_4E_53));
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms: Vec<Term> = Vec::new();
        for e in &monos {
            if rng.random::<f64>() < density {
                let deg = e.iter().sum::<u32>() as usize;
                terms.push(Term::new(
                    rng.random_range(-1.0..1.0) * scale[deg],
                    e.clone(),
                ));
            }
        }
        let mut damp = vec![0u32; n];
        damp[i] = 3;
        terms.push(Term::new(-1.0, damp));
        components.push(terms);
    }
    PolySystem::new(n, components)
}

/// The classic three-variable chaotic quadratic field with parameters
/// (10, 28, 8/3).
pub fn lorenz() -> PolySystem {
    PolySystem::new(
        3,
        vec![
            vec![
                Term::new(-10.0, vec![1, 0, 0]),
                Term::new(10.0, vec![0, 1, 0]),
            ],
            vec![
                Term::new(28.0, vec![1, 0, 0]),
                Term::new(-1.0, vec![0, 1, 0]),
                Term::new(-1.0, vec![1, 0, 1]),
            ],
            vec![
                Term::new(1.0, vec![1, 1, 0]),
                Term::new(-8.0 / 3.0, vec![0, 0, 1]),
            ],
        ],
    )
    .expect("exponent vectors are length 3")
}

fn lorenz_truth() -> GroundTruth {
    let c = 72.0f64.sqrt();
    let fp = |x: f64, y: f64, z: f64, label: &str| KnownFixedPoint {
        location: DVector::from_column_slice(&[x, y, z]),
        exact: true,
        label: label.to_string(),
    };
    GroundTruth {
        fixed_points: vec![
            fp(0.0, 0.0, 0.0, "origin saddle"),
            fp(c, c, 27.0, "positive saddle-focus"),
            fp(-c, -c, 27.0, "negative saddle-focus"),
        ],
        latent: None,
        sample_region: SampleRegion {
            lo: vec![-20.0, -25.0, 0.0],
            hi: vec![20.0, 25.0, 50.0],
            latent: false,
        },
    }
}

/// One averaged cumulative-variance curve: entry m−1 holds the mean fraction
/// of ensemble variance captured by the top m modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub n: usize,
    pub density: f64,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VarianceExperimentOptions {
    pub count: usize,
    pub horizon: f64,
    pub dt: f64,
    pub box_halfwidth: f64,
    pub sample_stride: usize,
}

impl Default for VarianceExperimentOptions {
    fn default() -> Self {
        VarianceExperimentOptions {
            count: 6,
            horizon: 4.0,
            dt: 0.02,
            box_halfwidth: 2.0,
            sample_stride: 2,
        }
    }
}

/// Sweep dense random networks over sizes and densities, averaging the
/// cumulative variance spectrum of short transient ensembles over `trials`
/// independent draws per cell. Trials run in parallel; every draw is seeded
/// from (cell, trial), so results are reproducible.
pub fn cumulative_variance_experiment(
    sizes: &[usize],
    densities: &[f64],
    trials: usize,
    seed: u64,
    opts: &VarianceExperimentOptions,
) -> Result<Vec<VarianceCurve>> {
    use rayon::prelude::*;

    if trials == 0 {
        return Err(Error::InvalidSpec("trial count must be positive".into()));
    }
    let sim_opts = SimOptions {
        dt: opts.dt,
        sample_stride: opts.sample_stride,
        ..SimOptions::default()
    };
    let mut curves = Vec::with_capacity(sizes.len() * densities.len());
    for (si, &n) in sizes.iter().enumerate() {
        for (di, &density) in densities.iter().enumerate() {
            let cell = (si * densities.len() + di) as u64;
            let profiles: Vec<Vec<f64>> = (0..trials)
                .into_par_iter()
                .map(|trial| -> Result<Vec<f64>> {
                    let s = mix_seed(seed, cell * 0x1_0000 + trial as u64);
                    let sys = dense_random(n, density, s)?;
                    let sampler = crate::sim::BoxSampler {
                        lo: vec![-opts.box_halfwidth; n],
                        hi: vec![opts.box_halfwidth; n],
                        count: opts.count,
                        seed: mix_seed(s, 0xE5),
                    };
                    let ens =
                        crate::sim::ensemble(&sys, None, &sampler, opts.horizon, &sim_opts)?;
                    crate::reduce::variance_profile(&ens)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut mean = vec![0.0; n];
            for p in &profiles {
                for (m, v) in p.iter().enumerate() {
                    mean[m] += v;
                }
            }
            for v in &mut mean {
                *v /= trials as f64;
            }
            curves.push(VarianceCurve {
                n,
                density,
                cumulative: mean,
            });
        }
    }
    Ok(curves)
}
