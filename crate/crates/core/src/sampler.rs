//! Finite-volume Gibbs sampler and an exact small-window oracle.
//!
//! The chain targets `P_{W,gamma}(d omega) ∝ exp(-beta H_W(omega gamma)) pi^z_W(d omega)`
//! with birth, death and translation moves and the usual grand-canonical
//! Metropolis-Hastings ratios. `H_W` counts the pairs with at least one point
//! in `W`, so boundary points interact with the interior but not with each other.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dobrushin_grid::BoundaryConfiguration;
use crate::error::{invalid_arg, Error, Result};
use crate::extended::Extended;
use crate::numerics::{box_integral, unit_ball_volume, SphereBreaks};
use crate::potentials::PairPotential;
use crate::{distance, Scalar};

/// Name of the random number generator, for output provenance.
pub const GENERATOR: &str = "ChaCha8Rng(seed, stream)";

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> Window<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return invalid_arg("window corners must have equal, positive dimension");
        }
        if lower.iter().zip(&upper).any(|(&l, &u)| !(u > l) || !l.is_finite() || !u.is_finite()) {
            return invalid_arg("window must have finite corners with upper > lower on every axis");
        }
        Ok(Self { lower, upper })
    }

    /// `[-side/2, side/2]^d`.
    pub fn centered_cube(side: T, d: usize) -> Result<Self> {
        let h = side * T::lit(0.5);
        Self::new(vec![-h; d], vec![h; d])
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> T {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| u - l).fold(T::one(), |acc, w| acc * w)
    }

    pub fn diameter(&self) -> T {
        distance(&self.lower, &self.upper)
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.lower.len()
            && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    /// Distance from `x` to the closed window.
    pub fn distance_to_point(&self, x: &[T]) -> T {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| {
                let g = (l - v).max(v - u).max(T::zero());
                g * g
            })
            .sum::<T>()
            .sqrt()
    }

    /// The window shrunk about its centre by `fraction` along every axis.
    pub fn scaled(&self, fraction: T) -> Result<Self> {
        if !(fraction > T::zero() && fraction <= T::one()) {
            return invalid_arg(format!("sub-window fraction must lie in (0, 1], got {fraction}"));
        }
        let half = T::lit(0.5);
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                let c = (l + u) * half;
                let h = (u - l) * half * fraction;
                (c - h, c + h)
            })
            .unzip();
        Self::new(lower, upper)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<T> {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| l + (u - l) * T::lit(rng.gen::<f64>())).collect()
    }
}

/// Finite simple point configuration inside a window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Configuration<T> {
    points: Vec<Vec<T>>,
}

impl<T: Scalar> Configuration<T> {
    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest distance between two points, or between a point and the boundary; `+inf` if there is no pair.
    pub fn min_pair_distance(&self, boundary: &[Vec<T>]) -> T {
        let mut best = T::infinity();
        for (k, x) in self.points.iter().enumerate() {
            for y in self.points[k + 1..].iter().chain(boundary) {
                best = best.min(distance(x, y));
            }
        }
        best
    }
}

/// Proposal probabilities of the three move types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveMix {
    pub birth: f64,
    pub death: f64,
    pub translate: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        Self { birth: 0.4, death: 0.4, translate: 0.2 }
    }
}

impl MoveMix {
    fn validate(&self) -> Result<()> {
        let all = [self.birth, self.death, self.translate];
        if all.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return invalid_arg("move probabilities must be non-negative");
        }
        if ((self.birth + self.death + self.translate) - 1.0).abs() > 1e-9 {
            return invalid_arg("move probabilities must sum to 1");
        }
        if self.birth == 0.0 || self.death == 0.0 {
            return Err(Error::Ergodicity(
                "birth and death moves both need positive probability; from the empty state nothing else can move"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainSettings<T> {
    pub activity: T,
    pub beta: T,
    pub window: Window<T>,
    pub boundary: BoundaryConfiguration<T>,
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Independent random stream for this chain under the same seed.
    pub stream: u64,
    pub move_mix: MoveMix,
    /// Observables are recorded every `record_every` steps after burn-in.
    pub record_every: usize,
    /// Side fraction of the centred sub-window used for the intensity observable.
    pub center_fraction: T,
}

impl<T: Scalar> ChainSettings<T> {
    /// Empty boundary, default move mix, burn-in of 10% of the steps, every step recorded.
    pub fn new(activity: T, beta: T, window: Window<T>, steps: usize, seed: u64) -> Self {
        Self {
            activity,
            beta,
            window,
            boundary: BoundaryConfiguration::empty(),
            steps,
            burn_in: steps / 10,
            seed,
            stream: 0,
            move_mix: MoveMix::default(),
            record_every: 1,
            center_fraction: T::lit(0.5),
        }
    }

    fn validate(&self, p: &PairPotential<T>) -> Result<()> {
        if !(self.activity >= T::zero() && self.activity.is_finite()) {
            return invalid_arg(format!("activity must be non-negative and finite, got {}", self.activity));
        }
        if !(self.beta > T::zero() && self.beta.is_finite()) {
            return invalid_arg(format!("inverse temperature must be positive and finite, got {}", self.beta));
        }
        if self.window.dimension() != p.dimension() {
            return invalid_arg("window and potential dimensions differ");
        }
        if self.boundary.points().iter().any(|y| y.len() != p.dimension()) {
            return invalid_arg("boundary and potential dimensions differ");
        }
        if self.steps <= self.burn_in {
            return invalid_arg(format!("steps ({}) must exceed burn-in ({})", self.steps, self.burn_in));
        }
        if self.record_every == 0 {
            return invalid_arg("record_every must be at least 1");
        }
        self.window.scaled(self.center_fraction)?;
        self.move_mix.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Birth,
    Death,
    Translate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub kind: Move,
    pub accepted: bool,
}

/// A Metropolis-Hastings chain started from the empty configuration.
pub struct Chain<'a, T> {
    potential: &'a PairPotential<T>,
    settings: &'a ChainSettings<T>,
    /// Boundary points outside the window within interaction reach of it.
    boundary: Vec<Vec<T>>,
    state: Configuration<T>,
    rng: ChaCha8Rng,
    translate_radius: T,
    log_birth_factor: T,
}

impl<'a, T: Scalar> Chain<'a, T> {
    pub fn new(potential: &'a PairPotential<T>, settings: &'a ChainSettings<T>) -> Result<Self> {
        settings.validate(potential)?;
        let w = &settings.window;
        let boundary = settings
            .boundary
            .points()
            .iter()
            .filter(|y| {
                !w.contains(y)
                    && match potential.support_radius() {
                        Extended::Finite(r) => w.distance_to_point(y) <= r,
                        Extended::Infinite => true,
                    }
            })
            .cloned()
            .collect();
        let alpha = potential.hard_core_radius();
        let translate_radius = if alpha > T::zero() {
            alpha * T::lit(0.5)
        } else {
            w.volume().powf(T::one() / T::from_usize_lossy(w.dimension())) * T::lit(0.1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(settings.stream);
        let mix = settings.move_mix;
        // log(p_death / p_birth * z |W|); -inf when z = 0.
        let log_birth_factor = T::lit((mix.death / mix.birth).ln()) + (settings.activity * w.volume()).ln();
        Ok(Self {
            potential,
            settings,
            boundary,
            state: Configuration::empty(),
            rng,
            translate_radius,
            log_birth_factor,
        })
    }

    pub fn state(&self) -> &Configuration<T> {
        &self.state
    }

    /// Interaction energy of `x` with the configuration (minus point `skip`) and the boundary.
    fn energy_of(&self, x: &[T], skip: Option<usize>) -> Extended<T> {
        let mut total = Extended::zero();
        let interior = self.state.points.iter().enumerate().filter(|(k, _)| Some(*k) != skip).map(|(_, y)| y);
        for y in interior.chain(&self.boundary) {
            total = total + self.potential.energy(distance(x, y));
            if total.is_infinite() {
                break;
            }
        }
        total
    }

    fn accept(&mut self, log_ratio: T) -> bool {
        if log_ratio >= T::zero() {
            return true;
        }
        let u: f64 = self.rng.gen();
        T::lit(u).ln() < log_ratio
    }

    pub fn step(&mut self) -> StepOutcome {
        let mix = self.settings.move_mix;
        let beta = self.settings.beta;
        let pick: f64 = self.rng.gen();
        let n = self.state.len();
        if pick < mix.birth {
            let x = self.settings.window.sample(&mut self.rng);
            let accepted = match self.energy_of(&x, None) {
                Extended::Infinite => false,
                Extended::Finite(e) => {
                    let log_ratio = self.log_birth_factor - T::from_usize_lossy(n + 1).ln() - beta * e;
                    self.accept(log_ratio)
                }
            };
            if accepted {
                self.state.points.push(x);
            }
            StepOutcome { kind: Move::Birth, accepted }
        } else if pick < mix.birth + mix.death {
            if n == 0 {
                return StepOutcome { kind: Move::Death, accepted: false };
            }
            let k = self.rng.gen_range(0..n);
            let e = self.energy_of(&self.state.points[k], Some(k)).to_scalar();
            let log_ratio = T::from_usize_lossy(n).ln() - self.log_birth_factor + beta * e;
            let accepted = self.accept(log_ratio);
            if accepted {
                self.state.points.swap_remove(k);
            }
            StepOutcome { kind: Move::Death, accepted }
        } else {
            if n == 0 {
                return StepOutcome { kind: Move::Translate, accepted: false };
            }
            let k = self.rng.gen_range(0..n);
            let offset = self.ball_offset();
            let x: Vec<T> = self.state.points[k].iter().zip(&offset).map(|(&a, &b)| a + b).collect();
            if !self.settings.window.contains(&x) {
                return StepOutcome { kind: Move::Translate, accepted: false };
            }
            let accepted = match self.energy_of(&x, Some(k)) {
                Extended::Infinite => false,
                Extended::Finite(e_new) => {
                    let e_old = self.energy_of(&self.state.points[k], Some(k)).to_scalar();
                    self.accept(-beta * (e_new - e_old))
                }
            };
            if accepted {
                self.state.points[k] = x;
            }
            StepOutcome { kind: Move::Translate, accepted }
        }
    }

    /// Uniform point of the ball of radius `translate_radius`, by rejection from the cube.
    fn ball_offset(&mut self) -> Vec<T> {
        let d = self.settings.window.dimension();
        loop {
            let v: Vec<f64> = (0..d).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
            if v.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
                return v.into_iter().map(|c| T::lit(c) * self.translate_radius).collect();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    Empirical,
}

/// Law of the number of points in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution<T> {
    pub probabilities: Vec<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> CountDistribution<T> {
    /// Relative frequencies of the observed counts.
    pub fn empirical(histogram: &[u64]) -> Result<Self> {
        let total: u64 = histogram.iter().sum();
        if total == 0 {
            return invalid_arg("empty histogram");
        }
        let probabilities = histogram.iter().map(|&c| T::from_u64(c).unwrap() / T::from_u64(total).unwrap()).collect();
        Ok(Self { probabilities, provenance: Provenance::Empirical })
    }

    pub fn mean(&self) -> T {
        self.probabilities.iter().enumerate().map(|(n, &q)| T::from_usize_lossy(n) * q).sum()
    }

    pub fn total_variation(&self, other: &Self) -> T {
        let len = self.probabilities.len().max(other.probabilities.len());
        let at = |v: &[T], k: usize| v.get(k).copied().unwrap_or(T::zero());
        T::lit(0.5) * (0..len).map(|k| (at(&self.probabilities, k) - at(&other.probabilities, k)).abs()).sum::<T>()
    }
}

/// One recorded row of the chain's time series.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSample<T> {
    pub step: usize,
    pub count: usize,
    pub intensity_center: T,
    pub min_pair_distance: T,
}

impl<T: Scalar> ChainSample<T> {
    pub const CSV_HEADER: &'static str = "step,count,intensity_center,min_pair_distance";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.count, self.intensity_center, self.min_pair_distance)
    }
}

/// Mean and batch-means standard error of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub mean: T,
    pub se: T,
}

pub const DEFAULT_BATCHES: usize = 20;

/// Mean with the standard error of `batches` consecutive batch means.
pub fn batch_means<T: Scalar>(series: &[T], batches: usize) -> Result<Estimate<T>> {
    if batches < 2 || series.len() < batches {
        return invalid_arg(format!("batch means need at least {batches} >= 2 values, got {}", series.len()));
    }
    let size = series.len() / batches;
    let means: Vec<T> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().copied().sum::<T>() / T::from_usize_lossy(size))
        .collect();
    let nb = T::from_usize_lossy(batches);
    let grand = means.iter().copied().sum::<T>() / nb;
    let var = means.iter().map(|&m| (m - grand) * (m - grand)).sum::<T>() / (nb - T::one());
    let mean = series.iter().copied().sum::<T>() / T::from_usize_lossy(series.len());
    Ok(Estimate { mean, se: (var / nb).sqrt() })
}

#[derive(Debug, Clone)]
pub struct ChainReport<T> {
    pub samples: Vec<ChainSample<T>>,
    /// Point-count frequencies over every step after burn-in.
    pub count_histogram: Vec<u64>,
    pub count: Estimate<T>,
    pub intensity_center: Estimate<T>,
    /// Accepted / proposed, per move type (birth, death, translate).
    pub acceptance: [f64; 3],
    pub generator: &'static str,
    pub seed: u64,
    pub stream: u64,
}

impl<T: Scalar> ChainReport<T> {
    pub fn count_distribution(&self) -> CountDistribution<T> {
        CountDistribution::empirical(&self.count_histogram).expect("chain ran past burn-in")
    }
}

/// Runs one chain and records the point count, the intensity in the centred
/// sub-window and the minimal pair distance.
pub fn mcmc_sample<T: Scalar>(settings: &ChainSettings<T>, p: &PairPotential<T>) -> Result<ChainReport<T>> {
    let mut chain = Chain::new(p, settings)?;
    let center = settings.window.scaled(settings.center_fraction)?;
    let center_volume = center.volume();
    let mut histogram: Vec<u64> = Vec::new();
    let mut samples = Vec::with_capacity((settings.steps - settings.burn_in) / settings.record_every + 1);
    let mut proposed = [0u64; 3];
    let mut accepted = [0u64; 3];
    for step in 1..=settings.steps {
        let out = chain.step();
        let slot = match out.kind {
            Move::Birth => 0,
            Move::Death => 1,
            Move::Translate => 2,
        };
        proposed[slot] += 1;
        accepted[slot] += out.accepted as u64;
        if step <= settings.burn_in {
            continue;
        }
        let n = chain.state.len();
        if histogram.len() <= n {
            histogram.resize(n + 1, 0);
        }
        histogram[n] += 1;
        if (step - settings.burn_in) % settings.record_every == 0 {
            let inside = chain.state.points.iter().filter(|x| center.contains(x)).count();
            samples.push(ChainSample {
                step,
                count: n,
                intensity_center: T::from_usize_lossy(inside) / center_volume,
                min_pair_distance: chain.state.min_pair_distance(&chain.boundary),
            });
        }
    }
    let batches = DEFAULT_BATCHES.min(samples.len());
    let counts: Vec<T> = samples.iter().map(|s| T::from_usize_lossy(s.count)).collect();
    let intensities: Vec<T> = samples.iter().map(|s| s.intensity_center).collect();
    let (count, intensity_center) = if batches >= 2 {
        (batch_means(&counts, batches)?, batch_means(&intensities, batches)?)
    } else {
        return invalid_arg("too few recorded samples for batch-means errors; lower record_every");
    };
    let rate = |k: usize| if proposed[k] == 0 { 0.0 } else { accepted[k] as f64 / proposed[k] as f64 };
    Ok(ChainReport {
        samples,
        count_histogram: histogram,
        count,
        intensity_center,
        acceptance: [rate(0), rate(1), rate(2)],
        generator: GENERATOR,
        seed: settings.seed,
        stream: settings.stream,
    })
}

/// Largest number of points the hard core allows in the window, if there is a hard core.
fn hard_core_cap<T: Scalar>(p: &PairPotential<T>, window: &Window<T>) -> Result<Option<usize>> {
    let alpha = p.hard_core_radius();
    if !(alpha > T::zero()) {
        return Ok(None);
    }
    if window.diameter() <= alpha {
        return Ok(Some(1));
    }
    // Disjoint balls of radius alpha/2 around the points fit in the window grown by alpha/2.
    let d = window.dimension();
    let grown = window.lower.iter().zip(&window.upper).map(|(&l, &u)| u - l + alpha).fold(T::one(), |a, w| a * w);
    let ball = unit_ball_volume::<T>(d)? * (alpha * T::lit(0.5)).powi(d as i32);
    Ok((grown / ball).floor().to_usize())
}

/// `int_{W^n} exp(-beta H(x_1..x_n | gamma)) dx` by nesting one window integral per point.
fn configuration_integral<T: Scalar>(
    p: &PairPotential<T>,
    beta: T,
    window: &Window<T>,
    boundary: &[Vec<T>],
    placed: &[Vec<T>],
    remaining: usize,
    tol: T,
) -> Result<T> {
    if remaining == 0 {
        return Ok(T::one());
    }
    let mut breaks = SphereBreaks::new();
    for y in boundary.iter().chain(placed) {
        for r in p.breakpoints() {
            breaks.push(y, r);
        }
    }
    let inner_tol = tol / window.volume();
    let failure = std::cell::RefCell::new(None);
    let r = box_integral(
        |x| {
            let mut total = Extended::zero();
            for y in boundary.iter().chain(placed) {
                total = total + p.energy(distance(x, y));
            }
            let w = total.boltzmann(beta);
            if w == T::zero() || remaining == 1 {
                return w;
            }
            let mut next = placed.to_vec();
            next.push(x.to_vec());
            match configuration_integral(p, beta, window, boundary, &next, remaining - 1, inner_tol) {
                Ok(v) => w * v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    T::zero()
                }
            }
        },
        window.lower(),
        window.upper(),
        &breaks,
        tol,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(r?.value.max(T::zero()))
}

/// Law of the point count under the specification on `window` with boundary
/// `boundary`, by direct integration over `0..=n_max` points.
///
/// The truncation at `n_max` is exact when the hard core caps the count;
/// otherwise it is accepted only if the Poisson bound on the dropped weight is below `tol`.
pub fn exact_count_distribution<T: Scalar>(
    p: &PairPotential<T>,
    z: T,
    beta: T,
    window: &Window<T>,
    boundary: &BoundaryConfiguration<T>,
    n_max: usize,
    tol: T,
) -> Result<CountDistribution<T>> {
    if !(z >= T::zero() && z.is_finite()) || !(beta > T::zero() && beta.is_finite()) || !(tol > T::zero()) {
        return invalid_arg("need z >= 0, beta > 0 and a positive tolerance");
    }
    let d = window.dimension();
    if d != p.dimension() {
        return invalid_arg("window and potential dimensions differ");
    }
    let cap = hard_core_cap(p, window)?;
    let n_eff = cap.map_or(n_max, |c| c.min(n_max));
    if n_eff * d > crate::numerics::MAX_CUBATURE_DIMENSION {
        return Err(Error::Unsupported(format!(
            "{n_eff} points in dimension {d} exceed the supported integration dimension"
        )));
    }
    let acting: Vec<Vec<T>> = boundary.points().iter().filter(|y| !window.contains(y)).cloned().collect();
    let volume = window.volume();
    let mut weights = vec![T::one()];
    let mut factorial = T::one();
    for n in 1..=n_eff {
        factorial = factorial * T::from_usize_lossy(n);
        let integral = configuration_integral(p, beta, window, &acting, &[], n, tol * T::lit(0.1))?;
        weights.push(z.powi(n as i32) / factorial * integral);
    }
    let total: T = weights.iter().copied().sum();
    if cap.map_or(true, |c| c > n_max) {
        // exp(-beta H) <= 1, so the weight of n points is at most (z |W|)^n / n!.
        let lambda = z * volume;
        let mut term = lambda.powi(n_max as i32) / factorial;
        let mut tail = T::zero();
        let mut n = n_max;
        loop {
            n += 1;
            term = term * lambda / T::from_usize_lossy(n);
            tail = tail + term;
            if term <= tail * T::epsilon() || term == T::zero() {
                break;
            }
        }
        if tail / total >= tol {
            return Err(Error::TruncationRefused(format!(
                "weight beyond {n_max} points may reach {} (tolerance {tol})",
                tail / total
            )));
        }
    }
    weights.resize(n_max + 1, T::zero());
    Ok(CountDistribution {
        probabilities: weights.into_iter().map(|w| w / total).collect(),
        provenance: Provenance::Exact,
    })
}

/// Greedy packing of the frame `{x not in W : dist(x, W) <= R}` on a square
/// grid of spacing `alpha (1 + 1e-6)` (spacing `R` without a hard core).
pub fn dense_packing_boundary<T: Scalar>(p: &PairPotential<T>, window: &Window<T>) -> Result<BoundaryConfiguration<T>> {
    let reach = match p.support_radius() {
        Extended::Finite(r) => r,
        Extended::Infinite => return Err(Error::Unsupported("dense packing needs a finite interaction range".into())),
    };
    if reach == T::zero() {
        return Ok(BoundaryConfiguration::empty());
    }
    let alpha = p.hard_core_radius();
    let spacing = if alpha > T::zero() { alpha * T::lit(1.0 + 1e-6) } else { reach };
    let d = window.dimension();
    let counts: Vec<usize> = window
        .lower()
        .iter()
        .zip(window.upper())
        .map(|(&l, &u)| ((u - l + reach * T::lit(2.0)) / spacing).floor().to_usize().unwrap_or(0) + 1)
        .collect();
    let mut points: Vec<Vec<T>> = Vec::new();
    let mut idx = vec![0usize; d];
    'outer: loop {
        let x: Vec<T> =
            idx.iter().zip(window.lower()).map(|(&k, &l)| l - reach + T::from_usize_lossy(k) * spacing).collect();
        let gap = window.distance_to_point(&x);
        if gap > T::zero() && gap <= reach && points.iter().all(|q| distance(q, &x) > alpha) {
            points.push(x);
        }
        for axis in 0..d {
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                continue 'outer;
            }
            idx[axis] = 0;
        }
        break;
    }
    BoundaryConfiguration::new(points, p)
}

/// Boundary conditions compared by the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPair {
    /// Empty boundary against a dense packing of the frame.
    EmptyVsDense,
    /// Empty boundary on both sides, independent streams: a control.
    EmptyVsEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Empty,
    Dense,
}

impl fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryKind::Empty => "empty",
            BoundaryKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub move_mix: MoveMix,
    pub record_every: usize,
    pub center_fraction: f64,
    pub pair: BoundaryPair,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            steps: 200_000,
            burn_in: 20_000,
            seed: 0,
            move_mix: MoveMix::default(),
            record_every: 10,
            center_fraction: 0.5,
            pair: BoundaryPair::EmptyVsDense,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow<T> {
    pub window: T,
    pub boundary: BoundaryKind,
    pub intensity: T,
    pub se: T,
    /// `|difference of the two intensities| / combined standard error`, shared by both rows of a window.
    pub metric: T,
}

impl<T: Scalar> ProbeRow<T> {
    pub const CSV_HEADER: &'static str = "window,boundary,intensity,se,metric";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.window, self.boundary, self.intensity, self.se, self.metric)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport<T> {
    pub rows: Vec<ProbeRow<T>>,
}

impl<T: Scalar> ProbeReport<T> {
    /// Disagreement metric at the largest window.
    pub fn largest_window_metric(&self) -> Option<T> {
        self.rows.iter().max_by(|a, b| a.window.partial_cmp(&b.window).unwrap()).map(|r| r.metric)
    }
}

/// Compares centre intensities under two boundary conditions on cubes of the given sides.
///
/// Chain `2k` (first boundary) and `2k + 1` (second) of window `k` use their own streams of `seed`.
pub fn uniqueness_probe<T: Scalar>(
    p: &PairPotential<T>,
    z: T,
    beta: T,
    window_sides: &[T],
    settings: &ProbeSettings,
) -> Result<ProbeReport<T>> {
    if window_sides.is_empty() {
        return invalid_arg("probe needs at least one window size");
    }
    let d = p.dimension();
    let jobs: Vec<(usize, usize)> = (0..window_sides.len()).flat_map(|k| [(k, 0), (k, 1)]).collect();
    let runs: Vec<(BoundaryKind, Estimate<T>)> = jobs
        .par_iter()
        .map(|&(k, side)| {
            let window = Window::centered_cube(window_sides[k], d)?;
            let kind = match (settings.pair, side) {
                (BoundaryPair::EmptyVsDense, 1) => BoundaryKind::Dense,
                _ => BoundaryKind::Empty,
            };
            let boundary = match kind {
                BoundaryKind::Dense => dense_packing_boundary(p, &window)?,
                BoundaryKind::Empty => BoundaryConfiguration::empty(),
            };
            let chain = ChainSettings {
                activity: z,
                beta,
                window,
                boundary,
                steps: settings.steps,
                burn_in: settings.burn_in,
                seed: settings.seed,
                stream: (2 * k + side) as u64,
                move_mix: settings.move_mix,
                record_every: settings.record_every,
                center_fraction: T::lit(settings.center_fraction),
            };
            Ok((kind, mcmc_sample(&chain, p)?.intensity_center))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(runs.len());
    for (k, pair) in runs.chunks(2).enumerate() {
        let (a, b) = (pair[0].1, pair[1].1);
        let combined = (a.se * a.se + b.se * b.se).sqrt();
        let diff = (a.mean - b.mean).abs();
        let metric = if diff == T::zero() { T::zero() } else { diff / combined };
        for &(kind, est) in pair {
            rows.push(ProbeRow { window: window_sides[k], boundary: kind, intensity: est.mean, se: est.se, metric });
        }
    }
    Ok(ProbeReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::HashMap;

    fn hs() -> PairPotential<f64> {
        PairPotential::hard_sphere(1.0, 2).unwrap()
    }

    fn square(side: f64) -> Window<f64> {
        Window::centered_cube(side, 2).unwrap()
    }

    #[test]
    fn window_geometry() {
        let w = Window::new(vec![0.0, 1.0], vec![2.0, 4.0]).unwrap();
        assert_eq!(w.volume(), 6.0);
        assert!(w.contains(&[2.0, 1.0]) && !w.contains(&[2.1, 1.0]));
        assert_abs_diff_eq!(w.distance_to_point(&[5.0, 8.0]), 5.0, epsilon = 1e-15);
        assert_eq!(w.scaled(0.5).unwrap(), Window::new(vec![0.5, 1.75], vec![1.5, 3.25]).unwrap());
        assert!(Window::new(vec![0.0], vec![0.0]).is_err());
        assert!(w.scaled(0.0).is_err());
    }

    #[test]
    fn batch_means_of_known_series() {
        let series: Vec<f64> = (0..40).map(|k| if k < 20 { 0.0 } else { 2.0 }).collect();
        let e = batch_means(&series, 2).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_abs_diff_eq!(e.se, 1.0, epsilon = 1e-15);
        assert!(batch_means(&series[..3], 20).is_err());
    }

    #[test]
    fn exact_single_point_window() {
        let w = square(0.5);
        let z = 3.0;
        let law = exact_count_distribution(&hs(), z, 1.0, &w, &BoundaryConfiguration::empty(), 2, 1e-10).unwrap();
        let zw = z * 0.25;
        assert_abs_diff_eq!(law.probabilities[0], 1.0 / (1.0 + zw), epsilon = 1e-14);
        assert_abs_diff_eq!(law.probabilities[1], zw / (1.0 + zw), epsilon = 1e-14);
        assert_eq!(law.probabilities[2], 0.0);
        assert_eq!(law.provenance, Provenance::Exact);
    }

    #[test]
    fn exact_covered_window_is_empty() {
        let w = square(0.5);
        let gamma = BoundaryConfiguration::new(vec![vec![0.5, 0.4]], &hs()).unwrap();
        let law = exact_count_distribution(&hs(), 3.0, 1.0, &w, &gamma, 1, 1e-10).unwrap();
        assert_eq!(law.probabilities, vec![1.0, 0.0]);
    }

    #[test]
    fn exact_ideal_gas_is_truncated_poisson() {
        let ideal = PairPotential::ideal(2).unwrap();
        let w = Window::centered_cube(0.2, 2).unwrap();
        let lambda: f64 = 0.5 * 0.04;
        let law = exact_count_distribution(&ideal, 0.5, 1.0, &w, &BoundaryConfiguration::empty(), 3, 1e-6).unwrap();
        let raw = [1.0, lambda, lambda * lambda / 2.0, lambda.powi(3) / 6.0];
        let total: f64 = raw.iter().sum();
        for (got, want) in law.probabilities.iter().zip(raw) {
            assert_abs_diff_eq!(*got, want / total, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(law.probabilities.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let refused =
            exact_count_distribution(&ideal, 50.0, 1.0, &square(1.0), &BoundaryConfiguration::empty(), 2, 1e-6);
        assert!(matches!(refused, Err(Error::TruncationRefused(_))));
    }

    #[test]
    fn exact_two_hard_rods() {
        // At most two points fit in [0, 1.5]; P(|X - Y| > 1) = (0.5 / 1.5)^2 for uniform X, Y.
        let rods = PairPotential::hard_sphere(1.0, 1).unwrap();
        let w = Window::new(vec![0.0], vec![1.5]).unwrap();
        let z = 2.0;
        let law = exact_count_distribution(&rods, z, 1.0, &w, &BoundaryConfiguration::empty(), 4, 1e-10).unwrap();
        let raw = [1.0, z * 1.5, z * z / 2.0 * 1.5 * 1.5 / 9.0];
        let total: f64 = raw.iter().sum();
        for k in 0..3 {
            assert_abs_diff_eq!(law.probabilities[k], raw[k] / total, epsilon = 1e-10);
        }
        assert_eq!(&law.probabilities[3..], &[0.0, 0.0]);
    }

    #[test]
    fn settings_are_validated() {
        let mut s = ChainSettings::new(1.0, 1.0, square(1.0), 100, 1);
        s.burn_in = 100;
        assert!(mcmc_sample(&s, &hs()).is_err());
        let mut s = ChainSettings::new(1.0, 1.0, square(1.0), 100, 1);
        s.move_mix = MoveMix { birth: 0.0, death: 0.5, translate: 0.5 };
        assert!(matches!(mcmc_sample(&s, &hs()), Err(Error::Ergodicity(_))));
        s.move_mix = MoveMix { birth: 0.5, death: 0.6, translate: 0.5 };
        assert!(matches!(mcmc_sample(&s, &hs()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn same_seed_same_series() {
        let mut s = ChainSettings::new(1.2, 1.0, square(3.0), 20_000, 42);
        s.boundary = dense_packing_boundary(&hs(), &s.window).unwrap();
        let a = mcmc_sample(&s, &hs()).unwrap();
        let b = mcmc_sample(&s, &hs()).unwrap();
        assert_eq!(a.samples, b.samples);
        s.stream = 1;
        let c = mcmc_sample(&s, &hs()).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn hard_core_is_never_violated() {
        let mut s = ChainSettings::new(2.0, 1.0, square(4.0), 100_000, 3);
        s.boundary = dense_packing_boundary(&hs(), &s.window).unwrap();
        assert!(!s.boundary.is_empty());
        let report = mcmc_sample(&s, &hs()).unwrap();
        assert!(report.count.mean > 1.0);
        assert!(report.samples.iter().all(|r| r.min_pair_distance > 1.0));
    }

    #[test]
    fn dense_packing_lies_in_the_frame() {
        let w = square(2.0);
        let gamma = dense_packing_boundary(&hs(), &w).unwrap();
        for (k, x) in gamma.points().iter().enumerate() {
            let gap = w.distance_to_point(x);
            assert!(gap > 0.0 && gap <= 1.0);
            for y in &gamma.points()[..k] {
                assert!(distance(x, y) > 1.0);
            }
        }
        // A frame of width 1 around a 2x2 square holds well over a handful of points.
        assert!(gamma.len() >= 8, "{}", gamma.len());
        assert!(dense_packing_boundary(&PairPotential::ideal(2).unwrap(), &w).unwrap().is_empty());
    }

    #[test]
    fn ideal_gas_mean_count() {
        let ideal = PairPotential::ideal(2).unwrap();
        let mut s = ChainSettings::new(1.5, 1.0, square(2.0), 300_000, 9);
        s.record_every = 50;
        let report = mcmc_sample(&s, &ideal).unwrap();
        assert!((report.count.mean - 6.0).abs() < 4.0 * report.count.se, "{:?}", report.count);
        let center = report.intensity_center;
        assert!((center.mean - 1.5).abs() < 4.0 * center.se, "{center:?}");
    }

    #[test]
    fn detailed_balance_on_binned_single_point_window() {
        // At most one point fits, so the state is "empty" or the bin of the point.
        let w = square(0.6);
        let mut s = ChainSettings::new(3.0, 1.0, w.clone(), 1_000_000, 5);
        s.boundary = BoundaryConfiguration::new(vec![vec![0.9, 0.0]], &hs()).unwrap();
        let p = hs();
        let mut chain = Chain::new(&p, &s).unwrap();
        let bin = |c: &Configuration<f64>| -> i32 {
            match c.points().first() {
                None => -1,
                Some(x) => {
                    let i = ((x[0] + 0.3) / 0.2).floor().clamp(0.0, 2.0) as i32;
                    let j = ((x[1] + 0.3) / 0.2).floor().clamp(0.0, 2.0) as i32;
                    3 * i + j
                }
            }
        };
        let mut flows: HashMap<(Move, i32, i32), u64> = HashMap::new();
        let mut from = bin(chain.state());
        for _ in 0..s.steps {
            let out = chain.step();
            assert!(chain.state().len() <= 1);
            let to = bin(chain.state());
            if out.accepted && from != to {
                *flows.entry((out.kind, from, to)).or_default() += 1;
            }
            from = to;
        }
        let mut checked = 0;
        for (&(kind, a, b), &n_ab) in &flows {
            let reverse = match kind {
                Move::Birth => Move::Death,
                Move::Death => Move::Birth,
                Move::Translate => Move::Translate,
            };
            let n_ba = flows.get(&(reverse, b, a)).copied().unwrap_or(0);
            let diff = (n_ab as f64 - n_ba as f64).abs();
            assert!(diff <= 4.0 * ((n_ab + n_ba) as f64).sqrt() + 2.0, "{kind:?} {a}->{b}: {n_ab} vs {n_ba}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn probe_at_zero_activity_is_exactly_zero() {
        let settings = ProbeSettings { steps: 2_000, burn_in: 200, record_every: 10, ..ProbeSettings::default() };
        let report = uniqueness_probe(&hs(), 0.0, 1.0, &[2.0, 3.0], &settings).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.intensity == 0.0 && r.metric == 0.0));
        assert_eq!(report.rows[1].boundary, BoundaryKind::Dense);
        assert_eq!(report.rows[0].csv_row(), "2,empty,0,0,0");
        assert_eq!(report.largest_window_metric(), Some(0.0));
    }
}
