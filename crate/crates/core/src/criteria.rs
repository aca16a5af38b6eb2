//! Activity bounds `z_bar(beta)` from each uniqueness criterion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{invalid_arg, Error, Result};
use crate::extended::Extended;
use crate::mayer::{mayer_integral, MayerIntegralResult};
use crate::numerics::unit_ball_volume;
use crate::potentials::PairPotential;
use crate::Scalar;

/// Cluster-expansion constant known for two-dimensional hard discs (replaces `1/e`).
pub const IMPROVED_CLUSTER_CONSTANT: f64 = 0.5107;

/// Measured critical intensity of the planar Poisson Boolean model with unit connection radius.
pub const PERCOLATION_THRESHOLD_2D: f64 = 1.43629;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// `z M(beta) < 1`, proven for potentials with a hard core.
    DobrushinLimit,
    /// The same region for potentials without hard core, where it is only conjectured.
    DobrushinConjecture,
    /// `z M(beta) < 1/e`.
    ClusterExpansion,
    /// `z M(beta) < 0.5107`, two-dimensional hard spheres only.
    ClusterExpansionImproved,
    /// `z < z_c(d) / R^d`.
    DisagreementPercolation,
    /// `z vol(supp phi) < 1`, the fixed-mesh Dobrushin outcome without hard core.
    SupportVolume,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DobrushinLimit,
        Method::DobrushinConjecture,
        Method::ClusterExpansion,
        Method::ClusterExpansionImproved,
        Method::DisagreementPercolation,
        Method::SupportVolume,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::DobrushinLimit => "dobrushin-limit",
            Method::DobrushinConjecture => "dobrushin-conjecture",
            Method::ClusterExpansion => "cluster-expansion",
            Method::ClusterExpansionImproved => "cluster-expansion-improved",
            Method::DisagreementPercolation => "disagreement-percolation",
            Method::SupportVolume => "support-volume",
        }
    }

    /// Whether the bound changes with the inverse temperature.
    pub fn depends_on_beta(&self) -> bool {
        !matches!(self, Method::DisagreementPercolation | Method::SupportVolume)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// One point `(beta, z_bar)` of a uniqueness region frontier.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessBound<T> {
    pub method: Method,
    pub beta: T,
    pub z_bar: Extended<T>,
    /// False for the conjectured Dobrushin region and for the `1/v_d` percolation fallback.
    pub certified: bool,
    pub error_estimate: T,
}

impl<T: Scalar> UniquenessBound<T> {
    /// CSV header matching [`UniquenessBound::csv_row`].
    pub const CSV_HEADER: &'static str = "method,beta,z_bar,certified,error_estimate";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.method, self.beta, self.z_bar, self.certified, self.error_estimate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdProvenance {
    Measured2d,
    LowerBoundOneOverVd,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercolationThreshold<T> {
    pub dimension: usize,
    pub z_c: T,
    pub provenance: ThresholdProvenance,
}

/// Critical intensities `z_c(d)` by dimension.
///
/// Only `d = 2` is built in; other dimensions take a user value or fall back
/// to the lower bound `1/v_d`, which yields an uncertified (conservative) bound.
#[derive(Debug, Clone, Default)]
pub struct PercolationTable<T> {
    user: BTreeMap<usize, T>,
}

impl<T: Scalar> PercolationTable<T> {
    pub fn new() -> Self {
        Self { user: BTreeMap::new() }
    }

    /// Registers a threshold; it must respect `z_c(d) >= 1/v_d`.
    pub fn with_threshold(mut self, dimension: usize, z_c: T) -> Result<Self> {
        let floor = unit_ball_volume::<T>(dimension)?.recip();
        if !(z_c >= floor) || !z_c.is_finite() {
            return invalid_arg(format!("z_c({dimension}) = {z_c} is below the lower bound 1/v_d = {floor}"));
        }
        self.user.insert(dimension, z_c);
        Ok(self)
    }

    pub fn lookup(&self, dimension: usize) -> Result<PercolationThreshold<T>> {
        if let Some(&z_c) = self.user.get(&dimension) {
            return Ok(PercolationThreshold { dimension, z_c, provenance: ThresholdProvenance::UserSupplied });
        }
        if dimension == 2 {
            return Ok(PercolationThreshold {
                dimension,
                z_c: T::lit(PERCOLATION_THRESHOLD_2D),
                provenance: ThresholdProvenance::Measured2d,
            });
        }
        Ok(PercolationThreshold {
            dimension,
            z_c: unit_ball_volume::<T>(dimension)?.recip(),
            provenance: ThresholdProvenance::LowerBoundOneOverVd,
        })
    }
}

/// `1/M` with the propagated error `err_M / M^2`.
fn inverse_mayer<T: Scalar>(m: &MayerIntegralResult<T>) -> (Extended<T>, T) {
    if m.value.is_zero() {
        (Extended::Infinite, T::zero())
    } else {
        (Extended::Finite(m.value.recip()), m.error_estimate / (m.value * m.value))
    }
}

/// Limiting Dobrushin bound from an already computed Mayer integral.
pub fn dobrushin_from_mayer<T: Scalar>(p: &PairPotential<T>, m: &MayerIntegralResult<T>) -> UniquenessBound<T> {
    let (z_bar, error_estimate) = inverse_mayer(m);
    let hard_core = p.hard_core_radius() > T::zero();
    UniquenessBound {
        method: if hard_core { Method::DobrushinLimit } else { Method::DobrushinConjecture },
        beta: m.beta,
        z_bar,
        certified: hard_core,
        error_estimate,
    }
}

/// Cluster-expansion bound `1/(e M)`, computed as the Dobrushin bound divided by `e`.
pub fn cluster_from_mayer<T: Scalar>(m: &MayerIntegralResult<T>) -> UniquenessBound<T> {
    let (z_bar, err) = inverse_mayer(m);
    let e = T::E();
    UniquenessBound {
        method: Method::ClusterExpansion,
        beta: m.beta,
        z_bar: match z_bar {
            Extended::Finite(v) => Extended::Finite(v / e),
            Extended::Infinite => Extended::Infinite,
        },
        certified: true,
        error_estimate: err / e,
    }
}

/// `z_bar = 1 / M(beta)`; certified only when the potential has a hard core.
pub fn dobrushin_bound<T: Scalar>(p: &PairPotential<T>, beta: T, tol: T) -> Result<UniquenessBound<T>> {
    let m = mayer_integral(p, beta, tol)?;
    Ok(dobrushin_from_mayer(p, &m))
}

/// `z_bar = 1/(e M(beta))`, or `0.5107 / M(beta)` for `improved` (2D hard spheres only).
pub fn cluster_expansion_bound<T: Scalar>(
    p: &PairPotential<T>,
    beta: T,
    tol: T,
    improved: bool,
) -> Result<UniquenessBound<T>> {
    if improved && !(p.is_hard_sphere() && p.dimension() == 2) {
        return Err(Error::Unsupported(format!(
            "the improved cluster-expansion constant is only known for 2D hard spheres, not {} in d = {}",
            p.kind_name(),
            p.dimension()
        )));
    }
    let m = mayer_integral(p, beta, tol)?;
    if !improved {
        return Ok(cluster_from_mayer(&m));
    }
    let (z_bar, err) = inverse_mayer(&m);
    let c = T::lit(IMPROVED_CLUSTER_CONSTANT);
    Ok(UniquenessBound {
        method: Method::ClusterExpansionImproved,
        beta,
        z_bar: match z_bar {
            Extended::Finite(v) => Extended::Finite(c * v),
            Extended::Infinite => Extended::Infinite,
        },
        certified: true,
        error_estimate: c * err,
    })
}

/// `z_bar = z_c(d) / R^d`, independent of `beta`. Needs a finite range.
pub fn disagreement_percolation_bound<T: Scalar>(
    p: &PairPotential<T>,
    thresholds: &PercolationTable<T>,
) -> Result<UniquenessBound<T>> {
    let range = match p.interaction_range() {
        Extended::Finite(r) => r,
        Extended::Infinite => {
            return Err(Error::Unsupported("disagreement percolation needs a finite interaction range".into()))
        }
    };
    let t = thresholds.lookup(p.dimension())?;
    Ok(UniquenessBound {
        method: Method::DisagreementPercolation,
        beta: T::nan(),
        z_bar: Extended::Finite(t.z_c / range.powi(p.dimension() as i32)),
        certified: t.provenance != ThresholdProvenance::LowerBoundOneOverVd,
        error_estimate: T::zero(),
    })
}

/// `z_bar = 1 / vol{y : phi(|y|) > 0}`, independent of `beta`.
pub fn support_volume_bound<T: Scalar>(p: &PairPotential<T>) -> Result<UniquenessBound<T>> {
    let radius = match p.support_radius() {
        Extended::Finite(r) => r,
        Extended::Infinite => return Err(Error::Unsupported("support of the potential is unbounded".into())),
    };
    let volume = unit_ball_volume::<T>(p.dimension())? * radius.powi(p.dimension() as i32);
    Ok(UniquenessBound {
        method: Method::SupportVolume,
        beta: T::nan(),
        z_bar: Extended::reciprocal_of(volume),
        certified: true,
        error_estimate: T::zero(),
    })
}

/// The bound of `method` at a single `beta`.
pub fn bound_at<T: Scalar>(
    p: &PairPotential<T>,
    method: Method,
    beta: T,
    tol: T,
    thresholds: &PercolationTable<T>,
) -> Result<UniquenessBound<T>> {
    let mut b = match method {
        Method::DobrushinLimit | Method::DobrushinConjecture => dobrushin_bound(p, beta, tol)?,
        Method::ClusterExpansion => cluster_expansion_bound(p, beta, tol, false)?,
        Method::ClusterExpansionImproved => cluster_expansion_bound(p, beta, tol, true)?,
        Method::DisagreementPercolation => disagreement_percolation_bound(p, thresholds)?,
        Method::SupportVolume => support_volume_bound(p)?,
    };
    b.beta = beta;
    Ok(b)
}

/// Frontier of `method` over `beta_grid`, one bound per grid point, in grid order.
pub fn region_curve<T: Scalar>(
    p: &PairPotential<T>,
    method: Method,
    beta_grid: &[T],
    tol: T,
    thresholds: &PercolationTable<T>,
) -> Result<Vec<UniquenessBound<T>>> {
    if beta_grid.iter().any(|&b| !(b > T::zero())) {
        return invalid_arg("beta grid must be positive");
    }
    if beta_grid.windows(2).any(|w| w[1] < w[0]) {
        return invalid_arg("beta grid must be sorted");
    }
    beta_grid.par_iter().map(|&beta| bound_at(p, method, beta, tol, thresholds)).collect()
}

/// Inverse temperature in `[lo, hi]` where the frontiers of two methods cross, by bisection.
///
/// Requires the difference `z_bar_a - z_bar_b` to change sign on the interval.
pub fn crossing_beta<T: Scalar>(
    p: &PairPotential<T>,
    a: Method,
    b: Method,
    lo: T,
    hi: T,
    tol: T,
    thresholds: &PercolationTable<T>,
) -> Result<T> {
    let quad_tol = (tol * T::lit(1e-4)).max(T::lit(1e-12));
    let diff = |beta: T| -> Result<T> {
        let za = bound_at(p, a, beta, quad_tol, thresholds)?.z_bar;
        let zb = bound_at(p, b, beta, quad_tol, thresholds)?.z_bar;
        match (za, zb) {
            (Extended::Finite(x), Extended::Finite(y)) => Ok(x - y),
            _ => Err(Error::Bisection("infinite bound: frontiers do not cross".into())),
        }
    };
    bisect(diff, lo, hi, tol)
}

/// Root of a continuous function with a sign change on `[lo, hi]`.
pub fn bisect<T: Scalar>(f: impl Fn(T) -> Result<T>, mut lo: T, mut hi: T, tol: T) -> Result<T> {
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == T::zero() {
        return Ok(lo);
    }
    if f_hi == T::zero() {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Bisection(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) * T::lit(0.5);
        let f_mid = f(mid)?;
        if f_mid == T::zero() {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * T::lit(0.5))
}
