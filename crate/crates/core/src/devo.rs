//! Bound-constrained differential evolution (DE/rand/1/bin) and the
//! enhancement-matching objective it is used with.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhance::{EnhanceParams, ALPHA_MAX, ALPHA_MIN, GAMMA_MAX, GAMMA_MIN};
use crate::error::{Error, Result};
use crate::imagekit::{ensure_same_dims, mse, Binning, HistogramReference, Image, SsimReference};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    pub population: usize,
    pub max_iterations: usize,
    /// Stop once the population's fitness spread drops below this.
    pub tolerance: f64,
    pub mutation_factor: f64,
    pub crossover_rate: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 10,
            max_iterations: 30,
            tolerance: 1e-4,
            mutation_factor: 0.8,
            crossover_rate: 0.9,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidParameter(format!(
                "DE population must be >= 4, got {}",
                self.population
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("DE tolerance must be > 0".into()));
        }
        if !(self.crossover_rate > 0.0 && self.crossover_rate <= 1.0) {
            return Err(Error::InvalidParameter("DE crossover rate must be in (0, 1]".into()));
        }
        if !(self.mutation_factor > 0.0) {
            return Err(Error::InvalidParameter("DE mutation factor must be > 0".into()));
        }
        Ok(())
    }
}

/// Axis-aligned search box.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds<T> {
    ranges: Vec<(T, T)>,
}

impl<T: Real> Bounds<T> {
    pub fn new(ranges: Vec<(T, T)>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidParameter("bounds need at least one dimension".into()));
        }
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "dimension {i}: low {lo} must be < high {hi}"
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[(T, T)] {
        &self.ranges
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.ranges)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Pulls an out-of-box coordinate back to the midpoint between the
    /// base vector's coordinate and the violated bound.
    #[inline]
    fn repair(&self, d: usize, v: T, base: T) -> T {
        let (lo, hi) = self.ranges[d];
        let half = T::lit(0.5);
        if v < lo {
            (base + lo) * half
        } else if v > hi {
            (base + hi) * half
        } else {
            v
        }
    }

    /// The `(alpha, gamma)` box of the enhancement search.
    pub fn enhancement() -> Self {
        Self {
            ranges: vec![
                (T::lit(ALPHA_MIN), T::lit(ALPHA_MAX)),
                (T::lit(GAMMA_MIN), T::lit(GAMMA_MAX)),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeOutcome<T> {
    pub best_x: Vec<T>,
    pub best_f: T,
    /// Generations run, not counting initialization.
    pub iterations: usize,
    /// Best fitness after initialization and after every generation.
    pub best_history: Vec<T>,
    pub evaluations: usize,
}

fn evaluate<T: Real, F>(objective: &F, points: &[Vec<T>]) -> Result<Vec<T>>
where
    F: Fn(&[T]) -> T + Sync,
{
    let values: Vec<T> = points.par_iter().map(|x| objective(x)).collect();
    for (x, v) in points.iter().zip(&values) {
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective {
                point: x.iter().map(|c| c.to_f64_lossy()).collect(),
            });
        }
    }
    Ok(values)
}

fn argmin<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Minimizes `objective` over `bounds` with DE/rand/1/bin.
///
/// A mutant coordinate that leaves the box is placed halfway between the
/// base vector and the violated bound. Plain clamping piles members onto
/// the bound, which collapses the fitness spread and trips the tolerance
/// stop while the optimum is still some way inside.
///
/// Trial vectors are generated for the whole generation from one seeded
/// stream before any evaluation, so evaluating them in parallel does not
/// change the trajectory.
pub fn minimize<T: Real, F>(objective: F, bounds: &Bounds<T>, cfg: &DeConfig) -> Result<DeOutcome<T>>
where
    F: Fn(&[T]) -> T + Sync,
{
    cfg.validate()?;
    let np = cfg.population;
    let dim = bounds.dim();
    let f_scale = T::lit(cfg.mutation_factor);
    let tol = T::lit(cfg.tolerance);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop: Vec<Vec<T>> = (0..np)
        .map(|_| {
            bounds
                .ranges()
                .iter()
                .map(|&(lo, hi)| {
                    let u: f64 = rng.gen();
                    (lo + T::lit(u) * (hi - lo)).max(lo).min(hi)
                })
                .collect()
        })
        .collect();
    let mut fit = evaluate(&objective, &pop)?;
    let mut evaluations = np;
    let mut best_history = vec![fit[argmin(&fit)]];
    let mut iterations = 0;

    for gen in 1..=cfg.max_iterations {
        let trials: Vec<Vec<T>> = (0..np)
            .map(|i| {
                let picks: Vec<usize> = sample(&mut rng, np - 1, 3)
                    .into_iter()
                    .map(|k| if k >= i { k + 1 } else { k })
                    .collect();
                let (a, b, c) = (&pop[picks[0]], &pop[picks[1]], &pop[picks[2]]);
                let forced = rng.gen_range(0..dim);
                (0..dim)
                    .map(|d| {
                        let cross: f64 = rng.gen();
                        if d == forced || cross < cfg.crossover_rate {
                            bounds.repair(d, a[d] + f_scale * (b[d] - c[d]), a[d])
                        } else {
                            pop[i][d]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit = evaluate(&objective, &trials)?;
        evaluations += np;
        for (i, (x, fx)) in trials.into_iter().zip(trial_fit).enumerate() {
            if fx <= fit[i] {
                pop[i] = x;
                fit[i] = fx;
            }
        }
        iterations = gen;
        best_history.push(fit[argmin(&fit)]);

        let (lo, hi) = fit
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi - lo < tol {
            break;
        }
    }

    let best = argmin(&fit);
    Ok(DeOutcome {
        best_x: pop[best].clone(),
        best_f: fit[best],
        iterations,
        best_history,
        evaluations,
    })
}

/// Composite loss between an enhanced render and a target anchor:
/// `(mse + (1 - ssim) + (1 - hist_corr)) / 3`.
///
/// The histogram term uses soft binning by default: with hard bins it is
/// piecewise constant in `(alpha, gamma)` and the search stalls on its
/// plateaus long before the other two terms are resolved.
pub struct EnhancementObjective<'a, T: Real> {
    rendered: &'a Image<T>,
    target: &'a Image<T>,
    ssim_ref: SsimReference<T>,
    hist_ref: HistogramReference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<T> {
    pub mse: T,
    pub ssim: T,
    pub hist_correlation: T,
}

impl<T: Real> LossTerms<T> {
    pub fn total(&self) -> T {
        (self.mse + (T::one() - self.ssim) + (T::one() - self.hist_correlation)) / T::lit(3.0)
    }
}

impl<'a, T: Real> EnhancementObjective<'a, T> {
    pub fn new(rendered: &'a Image<T>, target: &'a Image<T>) -> Result<Self> {
        Self::with_binning(rendered, target, Binning::Soft)
    }

    pub fn with_binning(rendered: &'a Image<T>, target: &'a Image<T>, binning: Binning) -> Result<Self> {
        ensure_same_dims(rendered, target)?;
        Ok(Self {
            rendered,
            target,
            ssim_ref: SsimReference::new(target)?,
            hist_ref: HistogramReference::with_binning(target, binning),
        })
    }

    pub fn terms(&self, params: &EnhanceParams<T>) -> Result<LossTerms<T>> {
        let enhanced = self.rendered.map(|v| params.apply(v));
        Ok(LossTerms {
            mse: mse(&enhanced, self.target)?,
            ssim: self.ssim_ref.score(&enhanced)?,
            hist_correlation: T::lit(self.hist_ref.correlation(&enhanced)?),
        })
    }

    /// Loss at `(alpha, gamma)`; parameters are not range checked here so
    /// the optimizer can probe the closed box freely.
    pub fn loss(&self, alpha: T, gamma: T) -> T {
        match self.terms(&EnhanceParams { alpha, gamma }) {
            Ok(t) => t.total(),
            Err(_) => T::nan(),
        }
    }
}

pub fn enhancement_objective<'a, T: Real>(
    rendered: &'a Image<T>,
    target: &'a Image<T>,
) -> Result<impl Fn(T, T) -> T + 'a> {
    let obj = EnhancementObjective::new(rendered, target)?;
    Ok(move |a, g| obj.loss(a, g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome<T: Real> {
    pub params: EnhanceParams<T>,
    pub loss: T,
    pub iterations: usize,
}

/// Finds the `(alpha, gamma)` that best maps `rendered` onto `target`.
pub fn search_params<T: Real>(
    rendered: &Image<T>,
    target: &Image<T>,
    cfg: &DeConfig,
) -> Result<SearchOutcome<T>> {
    let obj = EnhancementObjective::new(rendered, target)?;
    let out = minimize(|x: &[T]| obj.loss(x[0], x[1]), &Bounds::enhancement(), cfg)?;
    Ok(SearchOutcome {
        params: EnhanceParams {
            alpha: out.best_x[0],
            gamma: out.best_x[1],
        },
        loss: out.best_f,
        iterations: out.iterations,
    })
}
