//! Radial, non-negative pair potentials and their Mayer function.
//!
//! The hard core is the closed ball of radius `alpha`: `phi(r) = +inf` for
//! `r <= alpha`. The interaction range `R` is the smallest radius beyond which
//! `phi` vanishes; it may be infinite for custom profiles.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid_arg, Error, Result};
use crate::extended::Extended;
use crate::numerics::unit_ball_volume;
use crate::Scalar;

/// Radial energy profile `r -> phi(r)` of a custom potential.
pub type RadialProfile<T> = Arc<dyn Fn(T) -> Extended<T> + Send + Sync>;

/// Power-law envelope `phi(r) <= coefficient * r^(-exponent)` for `r >= from_radius`.
///
/// Certifies the tail of an infinite-range potential; `exponent` must exceed the dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEnvelope<T> {
    pub coefficient: T,
    pub exponent: T,
    pub from_radius: T,
}

impl<T: Scalar> TailEnvelope<T> {
    /// Upper bound on `int_{|y| > radius} (1 - exp(-beta phi(|y| - shift))) dy` in dimension `d`.
    ///
    /// `shift` accounts for lattice cubes whose nearest point is closer than their centre;
    /// `radius` must be at least `max(from_radius, 2 shift)` for the bound to hold.
    pub fn mayer_tail(&self, beta: T, d: usize, radius: T, shift: T) -> T {
        let dt = T::from_usize_lossy(d);
        let p = self.exponent;
        // 1 - e^{-x} <= x, and r - shift >= r / 2 once r >= 2 shift.
        let widen = if shift > T::zero() { T::lit(2.0).powf(p) } else { T::one() };
        widen * beta * self.coefficient * dt * unit_ball_volume::<T>(d).unwrap_or(T::zero()) * radius.powf(dt - p)
            / (p - dt)
    }

    /// Smallest radius (on a doubling ladder) at which the tail bound drops below `budget`.
    pub fn truncation_radius(&self, beta: T, d: usize, budget: T, shift: T) -> T {
        let mut radius = self.from_radius.max(T::lit(2.0) * shift).max(T::lit(1e-3));
        for _ in 0..200 {
            if self.mayer_tail(beta, d, radius, shift) <= budget {
                return radius;
            }
            radius = radius * T::lit(1.25);
        }
        radius
    }
}

/// A user-supplied radial profile with declared metadata.
///
/// The metadata is trusted by the analytic code and spot-checked by [`PairPotential::validate`].
#[derive(Clone)]
pub struct CustomRadial<T> {
    pub profile: RadialProfile<T>,
    pub hard_core_radius: T,
    pub range: Extended<T>,
    pub monotone: bool,
    /// Radii where the profile jumps; quadrature splits there.
    pub breakpoints: Vec<T>,
    pub envelope: Option<TailEnvelope<T>>,
    /// Samples per interval used to take suprema of non-monotone profiles.
    pub sup_samples: Option<usize>,
}

impl<T: fmt::Debug> fmt::Debug for CustomRadial<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRadial")
            .field("hard_core_radius", &self.hard_core_radius)
            .field("range", &self.range)
            .field("monotone", &self.monotone)
            .field("breakpoints", &self.breakpoints)
            .field("envelope", &self.envelope)
            .field("sup_samples", &self.sup_samples)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum PotentialKind<T> {
    /// `+inf` on `[0, radius]`, zero beyond.
    HardSphere {
        radius: T,
    },
    /// `+inf` on `[0, radius]`, `height` on `(radius, range]`, zero beyond.
    HardCoreStep {
        radius: T,
        height: T,
        range: T,
    },
    /// `height` on `[0, range]`, zero beyond. No hard core.
    Strauss {
        height: T,
        range: T,
    },
    CustomRadial(CustomRadial<T>),
}

/// Structural properties relevant to the different uniqueness criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationReport {
    /// A hard core of positive radius exists.
    pub hard_core: bool,
    pub finite_range: bool,
    /// The profile is non-increasing in `r`.
    pub monotone: bool,
}

#[derive(Debug, Clone)]
pub struct PairPotential<T> {
    kind: PotentialKind<T>,
    dimension: usize,
}

fn check_dimension(d: usize) -> Result<()> {
    if d == 0 {
        return invalid_arg("dimension must be at least 1");
    }
    Ok(())
}

fn check_length<T: Scalar>(name: &str, v: T, strictly_positive: bool) -> Result<()> {
    let ok = v.is_finite() && if strictly_positive { v > T::zero() } else { v >= T::zero() };
    if !ok {
        return invalid_arg(format!(
            "{name} must be {} and finite, got {v}",
            if strictly_positive { "> 0" } else { ">= 0" }
        ));
    }
    Ok(())
}

impl<T: Scalar> PairPotential<T> {
    pub fn hard_sphere(radius: T, dimension: usize) -> Result<Self> {
        check_dimension(dimension)?;
        check_length("hard-core radius", radius, true)?;
        Ok(Self { kind: PotentialKind::HardSphere { radius }, dimension })
    }

    pub fn hard_core_step(radius: T, height: T, range: T, dimension: usize) -> Result<Self> {
        check_dimension(dimension)?;
        check_length("hard-core radius", radius, true)?;
        check_length("step height", height, false)?;
        check_length("range", range, true)?;
        if range < radius {
            return invalid_arg(format!("range {range} is smaller than the hard-core radius {radius}"));
        }
        Ok(Self { kind: PotentialKind::HardCoreStep { radius, height, range }, dimension })
    }

    pub fn strauss(height: T, range: T, dimension: usize) -> Result<Self> {
        check_dimension(dimension)?;
        check_length("height", height, false)?;
        check_length("range", range, true)?;
        Ok(Self { kind: PotentialKind::Strauss { height, range }, dimension })
    }

    /// The ideal gas, `phi == 0`.
    pub fn ideal(dimension: usize) -> Result<Self> {
        Self::strauss(T::zero(), T::one(), dimension)
    }

    pub fn custom(custom: CustomRadial<T>, dimension: usize) -> Result<Self> {
        check_dimension(dimension)?;
        check_length("hard-core radius", custom.hard_core_radius, false)?;
        match custom.range {
            Extended::Finite(r) => {
                check_length("range", r, true)?;
                if r < custom.hard_core_radius {
                    return invalid_arg("range is smaller than the hard-core radius");
                }
            }
            Extended::Infinite => {}
        }
        if let Some(env) = &custom.envelope {
            if !(env.exponent > T::from_usize_lossy(dimension)) || env.coefficient < T::zero() {
                return invalid_arg(
                    "tail envelope exponent must exceed the dimension and its coefficient be non-negative",
                );
            }
        }
        Ok(Self { kind: PotentialKind::CustomRadial(custom), dimension })
    }

    pub fn kind(&self) -> &PotentialKind<T> {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            PotentialKind::HardSphere { .. } => "hard-sphere",
            PotentialKind::HardCoreStep { .. } => "hard-core-step",
            PotentialKind::Strauss { .. } => "strauss",
            PotentialKind::CustomRadial(_) => "custom-radial",
        }
    }

    pub fn is_hard_sphere(&self) -> bool {
        matches!(self.kind, PotentialKind::HardSphere { .. })
    }

    pub fn hard_core_radius(&self) -> T {
        match &self.kind {
            PotentialKind::HardSphere { radius } | PotentialKind::HardCoreStep { radius, .. } => *radius,
            PotentialKind::Strauss { .. } => T::zero(),
            PotentialKind::CustomRadial(c) => c.hard_core_radius,
        }
    }

    pub fn interaction_range(&self) -> Extended<T> {
        match &self.kind {
            PotentialKind::HardSphere { radius } => Extended::Finite(*radius),
            PotentialKind::HardCoreStep { range, .. } | PotentialKind::Strauss { range, .. } => {
                Extended::Finite(*range)
            }
            PotentialKind::CustomRadial(c) => c.range,
        }
    }

    /// Radius of the support `{r : phi(r) > 0}`.
    pub fn support_radius(&self) -> Extended<T> {
        match &self.kind {
            PotentialKind::HardSphere { radius } => Extended::Finite(*radius),
            PotentialKind::HardCoreStep { radius, height, range } => {
                Extended::Finite(if height.is_zero() { *radius } else { *range })
            }
            PotentialKind::Strauss { height, range } => {
                Extended::Finite(if height.is_zero() { T::zero() } else { *range })
            }
            PotentialKind::CustomRadial(c) => c.range,
        }
    }

    pub fn is_monotone(&self) -> bool {
        match &self.kind {
            PotentialKind::CustomRadial(c) => c.monotone,
            _ => true,
        }
    }

    pub fn tail_envelope(&self) -> Option<TailEnvelope<T>> {
        match &self.kind {
            PotentialKind::CustomRadial(c) => c.envelope,
            _ => None,
        }
    }

    /// Sorted radii at which `phi` may jump.
    pub fn breakpoints(&self) -> Vec<T> {
        let mut pts = match &self.kind {
            PotentialKind::HardSphere { radius } => vec![*radius],
            PotentialKind::HardCoreStep { radius, range, .. } => vec![*radius, *range],
            PotentialKind::Strauss { range, .. } => vec![*range],
            PotentialKind::CustomRadial(c) => {
                let mut v = c.breakpoints.clone();
                if c.hard_core_radius > T::zero() {
                    v.push(c.hard_core_radius);
                }
                if let Extended::Finite(r) = c.range {
                    v.push(r);
                }
                v
            }
        };
        pts.retain(|r| r.is_finite() && *r > T::zero());
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        pts.dedup();
        pts
    }

    fn profile(&self, r: T) -> Extended<T> {
        match &self.kind {
            PotentialKind::HardSphere { radius } => {
                if r <= *radius {
                    Extended::Infinite
                } else {
                    Extended::zero()
                }
            }
            PotentialKind::HardCoreStep { radius, height, range } => {
                if r <= *radius {
                    Extended::Infinite
                } else if r <= *range {
                    Extended::Finite(*height)
                } else {
                    Extended::zero()
                }
            }
            PotentialKind::Strauss { height, range } => {
                if r <= *range {
                    Extended::Finite(*height)
                } else {
                    Extended::zero()
                }
            }
            PotentialKind::CustomRadial(c) => (c.profile)(r),
        }
    }

    /// `phi(r)` for `r >= 0`.
    pub fn evaluate(&self, r: T) -> Result<Extended<T>> {
        if !(r >= T::zero()) {
            return invalid_arg(format!("distance must be non-negative, got {r}"));
        }
        Ok(self.profile(r))
    }

    /// `phi(r)` without argument checks, for hot loops over known-valid distances.
    #[inline]
    pub fn energy(&self, r: T) -> Extended<T> {
        self.profile(r)
    }

    /// Mayer function `1 - exp(-beta phi(r))`.
    pub fn mayer_value(&self, beta: T, r: T) -> Result<T> {
        if !(beta > T::zero()) {
            return invalid_arg(format!("inverse temperature must be positive, got {beta}"));
        }
        Ok(self.evaluate(r)?.mayer(beta))
    }

    #[inline]
    pub(crate) fn mayer(&self, beta: T, r: T) -> T {
        self.profile(r).mayer(beta)
    }

    /// Supremum of the Mayer function over distances in `[r_min, r_max]`.
    ///
    /// Exact for monotone profiles; otherwise sampled with the declared density,
    /// with both sides of every breakpoint inside the interval probed.
    pub fn mayer_sup_on(&self, beta: T, r_min: T, r_max: T) -> Result<T> {
        if self.is_monotone() {
            return Ok(self.mayer(beta, r_min));
        }
        let samples = match &self.kind {
            PotentialKind::CustomRadial(CustomRadial { sup_samples: Some(n), .. }) if *n >= 2 => *n,
            _ => {
                return Err(Error::Configuration(
                    "non-monotone profile needs a supremum sampling density (sup_samples >= 2)".into(),
                ))
            }
        };
        let mut best = self.mayer(beta, r_min).max(self.mayer(beta, r_max));
        let width = r_max - r_min;
        for k in 1..samples - 1 {
            let r = r_min + width * T::from_usize_lossy(k) / T::from_usize_lossy(samples - 1);
            best = best.max(self.mayer(beta, r));
        }
        let eps = T::lit(1e-9) * (T::one() + r_max);
        for b in self.breakpoints() {
            if b >= r_min && b <= r_max {
                best = best.max(self.mayer(beta, b));
                if b + eps <= r_max {
                    best = best.max(self.mayer(beta, b + eps));
                }
            }
        }
        Ok(best)
    }

    /// Checks the hard-core, range and monotonicity metadata.
    ///
    /// Built-in kinds hold by construction; custom profiles are spot-checked on a grid.
    pub fn validate(&self) -> Result<ValidationReport> {
        let report = ValidationReport {
            hard_core: self.hard_core_radius() > T::zero(),
            finite_range: !self.interaction_range().is_infinite(),
            monotone: self.is_monotone(),
        };
        if let PotentialKind::CustomRadial(c) = &self.kind {
            let top = match c.range {
                Extended::Finite(r) => r * T::lit(2.0),
                Extended::Infinite => c.hard_core_radius.max(T::one()) * T::lit(10.0),
            };
            let n = 2000usize;
            let mut previous: Option<Extended<T>> = None;
            for k in 0..=n {
                let r = top * T::from_usize_lossy(k) / T::from_usize_lossy(n);
                let v = (c.profile)(r);
                if let Extended::Finite(x) = v {
                    if x.is_nan() || x < T::zero() {
                        return Err(Error::InvalidPotential(format!("phi({r}) = {x} is negative or undefined")));
                    }
                }
                if r <= c.hard_core_radius && c.hard_core_radius > T::zero() && !v.is_infinite() {
                    return Err(Error::InvalidPotential(format!(
                        "phi({r}) is finite inside the declared hard core of radius {}",
                        c.hard_core_radius
                    )));
                }
                if let Extended::Finite(range) = c.range {
                    if r > range && !v.is_zero() {
                        return Err(Error::InvalidPotential(format!(
                            "phi({r}) is non-zero beyond the declared range {range}"
                        )));
                    }
                }
                if c.monotone {
                    if let Some(prev) = previous {
                        if v > prev {
                            return Err(Error::InvalidPotential(format!(
                                "profile declared non-increasing but increases at r = {r}"
                            )));
                        }
                    }
                }
                previous = Some(v);
            }
        }
        Ok(report)
    }
}
