//! Dobrushin's criterion at a fixed mesh `a`: single-cube specifications on
//! the lattice `a Z^d`, their total-variation distances, the influence
//! coefficients `k_ij` and the resulting activity bound `z_bar(a)`.
//!
//! With `a sqrt(d) < alpha` a cube holds at most one point of any authorised
//! configuration, so the specification on a cube `Lambda` with boundary `gamma`
//! lives on two strata: the empty configuration, with probability
//! `1 / (1 + z I)`, and one point `x` with density `z w(x) / (1 + z I)`, where
//! `w(x) = exp(-beta H(x | gamma))` and `I = int_Lambda w`.

use std::fmt;

use rayon::prelude::*;

use crate::criteria::bisect;
use crate::error::{invalid_arg, Error, Result};
use crate::extended::Extended;
use crate::mayer::{effective_reach, grid};
use crate::numerics::{cube_integral_with_breaks, cubes_within_range, lattice_index_of, Cube, Integral, SphereBreaks};
use crate::potentials::{PairPotential, PotentialKind};
use crate::{distance, Scalar};

/// Lattice `a Z^d` fine enough for the one-point-per-cube property.
#[derive(Debug, Clone)]
pub struct Discretization<T> {
    mesh: T,
    potential: PairPotential<T>,
}

impl<T: Scalar> Discretization<T> {
    /// Requires `a sqrt(d) < alpha`: two points of one cube are then always
    /// inside each other's hard core.
    pub fn new(potential: PairPotential<T>, mesh: T) -> Result<Self> {
        if !(mesh > T::zero() && mesh.is_finite()) {
            return invalid_arg(format!("mesh must be positive, got {mesh}"));
        }
        let alpha = potential.hard_core_radius();
        let diagonal = mesh * T::from_usize_lossy(potential.dimension()).sqrt();
        if !(diagonal < alpha) {
            return invalid_arg(format!(
                "mesh {mesh} is not admissible: a*sqrt(d) = {diagonal} must be below the hard-core radius {alpha}"
            ));
        }
        Ok(Self { mesh, potential })
    }

    pub fn mesh(&self) -> T {
        self.mesh
    }

    pub fn dimension(&self) -> usize {
        self.potential.dimension()
    }

    pub fn potential(&self) -> &PairPotential<T> {
        &self.potential
    }

    pub fn cube(&self, index: &[i64]) -> Result<Cube<T>> {
        if index.len() != self.dimension() {
            return invalid_arg(format!(
                "lattice index has {} coordinates, expected {}",
                index.len(),
                self.dimension()
            ));
        }
        Cube::lattice(index, self.mesh)
    }
}

/// Finite authorised boundary condition: points pairwise farther apart than the hard core.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryConfiguration<T> {
    points: Vec<Vec<T>>,
}

impl<T: Scalar> BoundaryConfiguration<T> {
    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn new(points: Vec<Vec<T>>, p: &PairPotential<T>) -> Result<Self> {
        let d = p.dimension();
        let alpha = p.hard_core_radius();
        for (k, x) in points.iter().enumerate() {
            if x.len() != d || x.iter().any(|c| !c.is_finite()) {
                return invalid_arg(format!("boundary point {k} must have {d} finite coordinates"));
            }
            for (l, y) in points[..k].iter().enumerate() {
                let r = distance(x, y);
                if !(r > alpha) || r == T::zero() {
                    return invalid_arg(format!(
                        "boundary points {l} and {k} are {r} apart, not authorised for hard core {alpha}"
                    ));
                }
            }
        }
        Ok(Self { points })
    }

    /// `self ∪ {y}`, checked for authorisation.
    pub fn with_point(&self, y: Vec<T>, p: &PairPotential<T>) -> Result<Self> {
        let mut points = self.points.clone();
        points.push(y);
        Self::new(points, p)
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
}

fn check_point<T: Scalar>(p: &PairPotential<T>, x: &[T]) -> Result<()> {
    if x.len() != p.dimension() || x.iter().any(|c| !c.is_finite()) {
        return invalid_arg(format!("point must have {} finite coordinates", p.dimension()));
    }
    Ok(())
}

fn check_parameters<T: Scalar>(z: T, beta: T, tol: T) -> Result<()> {
    if !(z >= T::zero() && z.is_finite()) {
        return invalid_arg(format!("activity must be non-negative and finite, got {z}"));
    }
    if !(beta > T::zero() && beta.is_finite()) {
        return invalid_arg(format!("inverse temperature must be positive and finite, got {beta}"));
    }
    if !(tol > T::zero()) {
        return invalid_arg("tolerance must be positive");
    }
    Ok(())
}

fn energy_against<T: Scalar>(p: &PairPotential<T>, x: &[T], points: &[&[T]]) -> Extended<T> {
    let mut total = Extended::zero();
    for y in points {
        total = total + p.energy(distance(x, y));
        if total.is_infinite() {
            break;
        }
    }
    total
}

/// `H(x ∪ gamma) = sum_{y in gamma} phi(|x - y|)` for a single point `x`.
pub fn one_point_energy<T: Scalar>(
    p: &PairPotential<T>,
    x: &[T],
    gamma: &BoundaryConfiguration<T>,
) -> Result<Extended<T>> {
    check_point(p, x)?;
    if gamma.points.iter().any(|y| y.as_slice() == x) {
        return invalid_arg("x is already a point of the boundary configuration");
    }
    let points: Vec<&[T]> = gamma.points.iter().map(Vec::as_slice).collect();
    Ok(energy_against(p, x, &points))
}

/// Radius beyond which a boundary point cannot affect a cube, and the tail mass dropped there.
fn reach<T: Scalar>(p: &PairPotential<T>, beta: T, budget: T, shift: T) -> Result<(T, T)> {
    match p.support_radius() {
        Extended::Finite(r) => Ok((r, T::zero())),
        Extended::Infinite => effective_reach(p, beta, budget, shift),
    }
}

fn can_reach<T: Scalar>(p: &PairPotential<T>, cube: &Cube<T>, y: &[T]) -> bool {
    match p.support_radius() {
        Extended::Finite(r) => cube.distance_to_point(y) <= r,
        Extended::Infinite => true,
    }
}

/// Boundary points outside the cube that interact with it.
fn acting_points<'a, T: Scalar>(p: &PairPotential<T>, cube: &Cube<T>, points: &'a [Vec<T>]) -> Vec<&'a [T]> {
    points.iter().filter(|y| !cube.contains(y) && can_reach(p, cube, y)).map(Vec::as_slice).collect()
}

fn breaks_around<T: Scalar>(p: &PairPotential<T>, points: &[&[T]]) -> SphereBreaks<T> {
    let radii = p.breakpoints();
    let mut breaks = SphereBreaks::new();
    for y in points {
        for &r in &radii {
            breaks.push(y, r);
        }
    }
    breaks
}

fn covered_by_hard_core<T: Scalar>(p: &PairPotential<T>, cube: &Cube<T>, points: &[&[T]]) -> bool {
    let alpha = p.hard_core_radius();
    alpha > T::zero() && points.iter().any(|y| cube.max_distance_to_point(y) < alpha)
}

/// `I = int_cube exp(-beta H(x ∪ gamma)) dx`.
fn boltzmann_mass<T: Scalar>(
    p: &PairPotential<T>,
    beta: T,
    cube: &Cube<T>,
    points: &[&[T]],
    tol: T,
) -> Result<Integral<T>> {
    if points.is_empty() {
        return Ok(Integral::exact(cube.volume()));
    }
    if covered_by_hard_core(p, cube, points) {
        return Ok(Integral::exact(T::zero()));
    }
    let breaks = breaks_around(p, points);
    let r = cube_integral_with_breaks(|x| energy_against(p, x, points).boltzmann(beta), cube, &breaks, tol)?;
    Ok(Integral { value: r.value.max(T::zero()).min(cube.volume()), error: r.error })
}

/// `Z = exp(-z a^d) (1 + z int_cube exp(-beta H(x ∪ gamma)) dx)`.
///
/// Exact for admissible meshes, where no cube holds two authorised points.
/// Boundary points inside the cube are ignored.
pub fn cube_partition_function<T: Scalar>(
    p: &PairPotential<T>,
    z: T,
    beta: T,
    cube: &Cube<T>,
    gamma: &BoundaryConfiguration<T>,
    tol: T,
) -> Result<Integral<T>> {
    check_parameters(z, beta, tol)?;
    if cube.dimension() != p.dimension() {
        return invalid_arg("cube and potential dimensions differ");
    }
    let q = (-z * cube.volume()).exp();
    if z == T::zero() {
        return Ok(Integral::exact(T::one()));
    }
    let points = acting_points(p, cube, &gamma.points);
    let mass = boltzmann_mass(p, beta, cube, &points, tol / (z * q))?;
    Ok(Integral { value: q * (T::one() + z * mass.value), error: q * z * mass.error })
}

fn lattice_cell<T: Scalar>(cube: &Cube<T>, x: &[T]) -> Vec<i64> {
    let shifted: Vec<T> = x.iter().zip(cube.center()).map(|(&xi, &c)| xi - c).collect();
    lattice_index_of(&shifted, cube.side())
}

/// Points of `a` not in `b`, followed by points of `b` not in `a`.
fn symmetric_difference<'a, T: Scalar>(a: &'a [Vec<T>], b: &'a [Vec<T>]) -> Vec<&'a [T]> {
    let only_a = a.iter().filter(|x| !b.contains(x));
    let only_b = b.iter().filter(|x| !a.contains(x));
    only_a.chain(only_b).map(Vec::as_slice).collect()
}

/// Total-variation distance between the single-cube specifications with
/// boundary conditions `gamma` and `gamma_tilde`, which must differ inside one
/// lattice cube only.
///
/// Computed as half the L1 distance over the empty-configuration atom and the
/// one-point stratum, which needs no ordering of the two partition functions.
pub fn cube_tv_distance<T: Scalar>(
    p: &PairPotential<T>,
    z: T,
    beta: T,
    cube: &Cube<T>,
    gamma: &BoundaryConfiguration<T>,
    gamma_tilde: &BoundaryConfiguration<T>,
    tol: T,
) -> Result<Integral<T>> {
    check_parameters(z, beta, tol)?;
    if cube.dimension() != p.dimension() {
        return invalid_arg("cube and potential dimensions differ");
    }
    let diff = symmetric_difference(&gamma.points, &gamma_tilde.points);
    if let Some(first) = diff.first() {
        let cell = lattice_cell(cube, first);
        if diff.iter().any(|y| lattice_cell(cube, y) != cell) {
            return invalid_arg("boundary conditions differ in more than one lattice cube");
        }
    }
    if z == T::zero() || diff.iter().all(|y| cube.contains(y) || !can_reach(p, cube, y)) {
        return Ok(Integral::exact(T::zero()));
    }

    let points = acting_points(p, cube, &gamma.points);
    let points_tilde = acting_points(p, cube, &gamma_tilde.points);
    let part = tol * T::lit(0.25) / z;
    let mass = boltzmann_mass(p, beta, cube, &points, part)?;
    let mass_tilde = boltzmann_mass(p, beta, cube, &points_tilde, part)?;
    let c = (T::one() + z * mass.value).recip();
    let c_tilde = (T::one() + z * mass_tilde.value).recip();

    let mut union: Vec<&[T]> = points.clone();
    union.extend(points_tilde.iter().filter(|y| !points.contains(y)));
    let breaks = breaks_around(p, &union);
    let stratum = cube_integral_with_breaks(
        |x| {
            let w = energy_against(p, x, &points).boltzmann(beta);
            let w_tilde = energy_against(p, x, &points_tilde).boltzmann(beta);
            (w * c - w_tilde * c_tilde).abs()
        },
        cube,
        &breaks,
        part,
    )?;
    let half = T::lit(0.5);
    let value = half * ((c - c_tilde).abs() + z * stratum.value);
    let mass_error = mass.error + mass_tilde.error;
    let error = half * z * (mass_error + stratum.error + z * cube.volume() * mass_error);
    Ok(Integral { value: value.max(T::zero()).min(T::one()), error })
}

/// Search family for the `k_ij` bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Disagreement points per axis of cube `j`; the point nearest cube `i` is always added.
    pub y_points: usize,
    /// Second pass on a finer grid around the best disagreement point.
    pub refine: bool,
    /// Add greedy packings of the neighbouring cubes to the empty baseline.
    pub packings: bool,
    /// Points per axis when sampling the upper-end supremum of a non-monotone profile.
    pub sup_points: usize,
    /// Largest activity `zbar_of_a` tries before reporting saturation.
    pub z_cap: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { y_points: 2, refine: false, packings: true, sup_points: 5, z_cap: 1e9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KBracket<T> {
    pub lower: T,
    pub upper: T,
}

/// Which end of the `k_ij` bracket the Dobrushin sum adds up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SumMode {
    /// Best boundary pair found by the search: an optimistic estimate.
    BracketLower,
    /// The analytic bound `z sup_y int_{Lambda_i} (1 - exp(-beta phi))`: certified.
    BracketUpper,
}

impl SumMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SumMode::BracketLower => "lower",
            SumMode::BracketUpper => "upper",
        }
    }
}

impl fmt::Display for SumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SumMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" | "bracket-lower" => Ok(SumMode::BracketLower),
            "upper" | "bracket-upper" => Ok(SumMode::BracketUpper),
            other => Err(Error::InvalidArgument(format!("unknown bracket mode '{other}'"))),
        }
    }
}

/// Intervals `(r_{k-1}, r_k]` on which `exp(-beta phi)` is constant, as
/// `(outer radius, level)`; the last interval is unbounded.
fn boltzmann_shells<T: Scalar>(p: &PairPotential<T>, beta: T) -> Option<Vec<(Option<T>, T)>> {
    if matches!(p.kind(), PotentialKind::CustomRadial(_)) {
        return None;
    }
    let radii = p.breakpoints();
    let mut shells = Vec::with_capacity(radii.len() + 1);
    let mut inner = T::zero();
    for &r in &radii {
        shells.push((Some(r), p.energy((inner + r) * T::lit(0.5)).boltzmann(beta)));
        inner = r;
    }
    let last = if radii.is_empty() { T::one() } else { inner * T::lit(2.0) };
    shells.push((None, p.energy(last).boltzmann(beta)));
    Some(shells)
}

/// A boundary pair `(gamma, gamma ∪ {y})`, reduced to what `d_TV(z)` needs.
#[derive(Debug, Clone)]
enum TvCurve<T> {
    /// `(level, mass)` per shell of `y`: `mass = int_{cube ∩ shell} w`, with the total quadrature error.
    Shells {
        shells: Vec<(T, T)>,
        error: T,
    },
    Direct {
        gamma: BoundaryConfiguration<T>,
        tilde: BoundaryConfiguration<T>,
    },
}

impl<T: Scalar> TvCurve<T> {
    fn build(p: &PairPotential<T>, beta: T, cube: &Cube<T>, gamma: Vec<Vec<T>>, y: Vec<T>, tol: T) -> Result<Self> {
        let Some(levels) = boltzmann_shells(p, beta) else {
            let tilde = {
                let mut pts = gamma.clone();
                pts.push(y);
                BoundaryConfiguration { points: pts }
            };
            return Ok(TvCurve::Direct { gamma: BoundaryConfiguration { points: gamma }, tilde });
        };
        let points = acting_points(p, cube, &gamma);
        let part = tol / T::from_usize_lossy(levels.len() + 1);
        let total = boltzmann_mass(p, beta, cube, &points, part)?;
        let mut error = total.error;
        let mut shells = Vec::with_capacity(levels.len());
        let mut below = T::zero();
        for (outer, level) in levels {
            let ball = match outer {
                None => total.value,
                Some(r) => {
                    let b = ball_mass(p, beta, cube, &points, &y, r, total.value, part)?;
                    error = error + b.error;
                    b.value.max(below).min(total.value)
                }
            };
            shells.push((level, ball - below));
            below = ball;
        }
        Ok(TvCurve::Shells { shells, error })
    }

    /// Lower estimate of the TV distance at activity `z` (value minus error, floored at 0).
    fn lower_at(&self, p: &PairPotential<T>, z: T, beta: T, cube: &Cube<T>, tol: T) -> Result<T> {
        match self {
            TvCurve::Shells { shells, error } => {
                let mass: T = shells.iter().map(|s| s.1).sum();
                let mass_tilde: T = shells.iter().map(|s| s.0 * s.1).sum();
                let c = (T::one() + z * mass).recip();
                let c_tilde = (T::one() + z * mass_tilde).recip();
                let stratum: T = shells.iter().map(|&(v, m)| m * (c - v * c_tilde).abs()).sum();
                let value = T::lit(0.5) * ((c - c_tilde).abs() + z * stratum);
                let err = z * *error * (T::lit(2.0) + z * cube.volume());
                Ok((value.min(T::one()) - err).max(T::zero()))
            }
            TvCurve::Direct { gamma, tilde } => {
                let tv = cube_tv_distance(p, z, beta, cube, gamma, tilde, tol)?;
                Ok((tv.value - tv.error).max(T::zero()))
            }
        }
    }
}

/// `int_cube w(x) 1{|x - y| <= r} dx`.
#[allow(clippy::too_many_arguments)]
fn ball_mass<T: Scalar>(
    p: &PairPotential<T>,
    beta: T,
    cube: &Cube<T>,
    points: &[&[T]],
    y: &[T],
    r: T,
    total: T,
    tol: T,
) -> Result<Integral<T>> {
    if cube.distance_to_point(y) >= r || total == T::zero() {
        return Ok(Integral::exact(T::zero()));
    }
    if cube.max_distance_to_point(y) <= r {
        return Ok(Integral::exact(total));
    }
    let mut breaks = breaks_around(p, points);
    breaks.push(y, r);
    let r2 = r * r;
    cube_integral_with_breaks(
        |x| {
            let d2: T = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d2 > r2 {
                T::zero()
            } else {
                energy_against(p, x, points).boltzmann(beta)
            }
        },
        cube,
        &breaks,
        tol,
    )
}

/// Moves a point of the closed cube into the half-open cube.
fn nudge_inside<T: Scalar>(cube: &Cube<T>, x: &[T]) -> Vec<T> {
    let h = cube.side() * T::lit(0.5);
    let eps = cube.side() * T::epsilon().sqrt();
    x.iter().zip(cube.center()).map(|(&xi, &c)| xi.max(c - h + eps).min(c + h)).collect()
}

/// Everything the Dobrushin sum needs about one cube `j`, independent of `z`.
#[derive(Debug, Clone)]
struct Influence<T> {
    /// `sup_{y in Lambda_j} int_{Lambda_i} (1 - exp(-beta phi(|x - y|))) dx`, error included.
    mayer_mass: T,
    /// Boundary pairs searched for the lower end (empty unless requested).
    candidates: Vec<TvCurve<T>>,
}

struct Stencil<T> {
    origin: Cube<T>,
    /// Cubes within interaction reach of the origin cube, nearest first.
    neighbours: Vec<Cube<T>>,
    tail: T,
}

impl<T: Scalar> Stencil<T> {
    fn new(disc: &Discretization<T>, beta: T, budget: T) -> Result<Self> {
        let d = disc.dimension();
        let a = disc.mesh();
        let shift = a * T::from_usize_lossy(d).sqrt();
        let (r, tail) = reach(disc.potential(), beta, budget, shift)?;
        let origin = disc.cube(&vec![0; d])?;
        let mut neighbours: Vec<Cube<T>> =
            cubes_within_range(&origin, r)?.iter().map(|k| Cube::lattice(k, a)).collect::<Result<_>>()?;
        neighbours.sort_by(|u, v| {
            origin.distance_to_cube(u).partial_cmp(&origin.distance_to_cube(v)).expect("finite distances")
        });
        Ok(Self { origin, neighbours, tail })
    }

    /// Greedy authorised packing of the neighbours other than `skip`, around the reserved point `y`.
    fn packing(&self, p: &PairPotential<T>, skip: &Cube<T>, y: &[T], towards_origin: bool) -> Vec<Vec<T>> {
        let alpha = p.hard_core_radius();
        let mut placed: Vec<Vec<T>> = Vec::new();
        for cube in &self.neighbours {
            if cube == skip {
                continue;
            }
            let x = if towards_origin {
                nudge_inside(cube, &cube.nearest_point(self.origin.center()))
            } else {
                cube.center().to_vec()
            };
            if distance(&x, y) > alpha && placed.iter().all(|q| distance(&x, q) > alpha) {
                placed.push(x);
            }
        }
        placed
    }
}

fn mayer_mass<T: Scalar>(p: &PairPotential<T>, beta: T, origin: &Cube<T>, y: &[T], tol: T) -> Result<T> {
    if !can_reach(p, origin, y) {
        return Ok(T::zero());
    }
    let breaks = breaks_around(p, &[y]);
    let r = cube_integral_with_breaks(|x| p.mayer(beta, distance(x, y)), origin, &breaks, tol)?;
    Ok((r.value + r.error).max(T::zero()))
}

fn influence<T: Scalar>(
    disc: &Discretization<T>,
    stencil: &Stencil<T>,
    cube_j: &Cube<T>,
    beta: T,
    lower: Option<T>,
    search: &SearchConfig,
    tol: T,
) -> Result<Influence<T>> {
    let p = disc.potential();
    let origin = &stencil.origin;
    let nearest = cube_j.nearest_point(origin.center());
    let mayer = if p.is_monotone() {
        mayer_mass(p, beta, origin, &nearest, tol)?
    } else {
        let mut best = mayer_mass(p, beta, origin, &nearest, tol)?;
        for y in grid(&cube_j.lower(), &cube_j.upper(), search.sup_points.max(2)) {
            best = best.max(mayer_mass(p, beta, origin, &y, tol)?);
        }
        best
    };

    let Some(z_ref) = lower else {
        return Ok(Influence { mayer_mass: mayer, candidates: Vec::new() });
    };
    let mut ys = vec![nudge_inside(cube_j, &nearest)];
    for y in grid(&cube_j.lower(), &cube_j.upper(), search.y_points.max(1)) {
        let y = nudge_inside(cube_j, &y);
        if !ys.contains(&y) {
            ys.push(y);
        }
    }
    let family = |ys: &[Vec<T>]| -> Result<Vec<TvCurve<T>>> {
        let mut out = Vec::new();
        for y in ys {
            out.push(TvCurve::build(p, beta, origin, Vec::new(), y.clone(), tol)?);
            if search.packings {
                for towards in [true, false] {
                    let gamma = stencil.packing(p, cube_j, y, towards);
                    if !gamma.is_empty() {
                        out.push(TvCurve::build(p, beta, origin, gamma, y.clone(), tol)?);
                    }
                }
            }
        }
        Ok(out)
    };
    let mut candidates = family(&ys)?;
    if search.refine {
        let mut best = (T::zero(), 0);
        for (k, c) in candidates.iter().enumerate() {
            let v = c.lower_at(p, z_ref, beta, origin, tol)?;
            if v > best.0 {
                best = (v, k);
            }
        }
        let per_y = candidates.len() / ys.len();
        let y0 = &ys[best.1 / per_y.max(1)];
        let step = cube_j.side() / T::from_usize_lossy(2 * search.y_points.max(1));
        let lo: Vec<T> = y0.iter().zip(cube_j.lower()).map(|(&c, l)| (c - step).max(l)).collect();
        let hi: Vec<T> = y0.iter().zip(cube_j.upper()).map(|(&c, u)| (c + step).min(u)).collect();
        let fine: Vec<Vec<T>> =
            grid(&lo, &hi, 3).into_iter().map(|y| nudge_inside(cube_j, &y)).filter(|y| !ys.contains(y)).collect();
        candidates.extend(family(&fine)?);
    }
    Ok(Influence { mayer_mass: mayer, candidates })
}

impl<T: Scalar> Influence<T> {
    fn bracket(&self, p: &PairPotential<T>, z: T, beta: T, origin: &Cube<T>, tol: T) -> Result<KBracket<T>> {
        let upper = (z * self.mayer_mass).min(T::one());
        let mut lower = T::zero();
        for c in &self.candidates {
            lower = lower.max(c.lower_at(p, z, beta, origin, tol)?);
        }
        Ok(KBracket { lower: lower.min(upper), upper })
    }
}

fn check_indices(disc: &Discretization<impl Scalar>, i: &[i64], j: &[i64]) -> Result<Vec<i64>> {
    let d = disc.dimension();
    if i.len() != d || j.len() != d {
        return invalid_arg(format!("lattice indices must have {d} coordinates"));
    }
    if i == j {
        return invalid_arg("k_ij needs distinct cubes");
    }
    Ok(j.iter().zip(i).map(|(a, b)| a - b).collect())
}

/// Bracket `lower <= k_ij <= upper` for the influence of cube `j` on cube `i`.
///
/// The upper end is `z sup_{y in Lambda_j} int_{Lambda_i} (1 - exp(-beta phi))`,
/// capped at 1. For monotone profiles the supremum sits at the point of the
/// closed cube `j` nearest the centre of cube `i`; otherwise it is sampled.
/// The lower end is the largest distance found over pairs `(gamma, gamma ∪ {y})`
/// with `gamma` empty or a greedy packing, minus its quadrature error.
#[allow(clippy::too_many_arguments)]
pub fn k_ij<T: Scalar>(
    disc: &Discretization<T>,
    z: T,
    beta: T,
    i: &[i64],
    j: &[i64],
    search: &SearchConfig,
    tol: T,
) -> Result<KBracket<T>> {
    check_parameters(z, beta, tol)?;
    let offset = check_indices(disc, i, j)?;
    let stencil = Stencil::new(disc, beta, tol)?;
    let cube_j = disc.cube(&offset)?;
    if !stencil.neighbours.contains(&cube_j) {
        return Ok(KBracket { lower: T::zero(), upper: T::zero() });
    }
    let inf = influence(disc, &stencil, &cube_j, beta, Some(z), search, tol)?;
    inf.bracket(disc.potential(), z, beta, &stencil.origin, tol)
}

/// Per-cube data of the Dobrushin sum, reusable across activities.
struct SumProfile<T> {
    stencil: Stencil<T>,
    terms: Vec<Influence<T>>,
    mode: SumMode,
    tol: T,
}

impl<T: Scalar> SumProfile<T> {
    fn new(disc: &Discretization<T>, beta: T, mode: SumMode, z_ref: T, search: &SearchConfig, tol: T) -> Result<Self> {
        let stencil = Stencil::new(disc, beta, tol * T::lit(0.1))?;
        let per_cube = tol * T::lit(0.5) / T::from_usize_lossy(stencil.neighbours.len().max(1));
        let lower = (mode == SumMode::BracketLower).then_some(z_ref);
        let terms = stencil
            .neighbours
            .par_iter()
            .map(|cube_j| influence(disc, &stencil, cube_j, beta, lower, search, per_cube))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stencil, terms, mode, tol: per_cube })
    }

    fn sum(&self, p: &PairPotential<T>, z: T, beta: T) -> Result<T> {
        let mut total = T::zero();
        for t in &self.terms {
            let b = t.bracket(p, z, beta, &self.stencil.origin, self.tol)?;
            total = total
                + match self.mode {
                    SumMode::BracketLower => b.lower,
                    SumMode::BracketUpper => b.upper,
                };
        }
        if self.mode == SumMode::BracketUpper {
            total = total + z * self.stencil.tail;
        }
        Ok(total)
    }
}

/// `sum_{j != 0} k_{0j}` at the selected bracket end, with the default search family.
pub fn dobrushin_sum<T: Scalar>(disc: &Discretization<T>, z: T, beta: T, mode: SumMode, tol: T) -> Result<T> {
    dobrushin_sum_with(disc, z, beta, mode, &SearchConfig::default(), tol)
}

pub fn dobrushin_sum_with<T: Scalar>(
    disc: &Discretization<T>,
    z: T,
    beta: T,
    mode: SumMode,
    search: &SearchConfig,
    tol: T,
) -> Result<T> {
    check_parameters(z, beta, tol)?;
    if z == T::zero() {
        return Ok(T::zero());
    }
    SumProfile::new(disc, beta, mode, z, search, tol)?.sum(disc.potential(), z, beta)
}

/// End point of the fixed-mesh uniqueness interval `U_a = [0, z_bar(a)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBar<T> {
    pub mesh: T,
    pub mode: SumMode,
    pub z_bar: T,
    /// The sum stayed below 1 up to the search cap, which is reported instead.
    pub saturated: bool,
}

impl<T: Scalar> ZBar<T> {
    pub const CSV_HEADER: &'static str = "a,mode,z_bar,saturated";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.mesh, self.mode, self.z_bar, self.saturated)
    }
}

/// Root of `dobrushin_sum(z) = 1` by bisection, to within `tol_z`.
pub fn zbar_of_a<T: Scalar>(disc: &Discretization<T>, beta: T, mode: SumMode, tol_z: T) -> Result<ZBar<T>> {
    zbar_of_a_with(disc, beta, mode, &SearchConfig::default(), tol_z)
}

pub fn zbar_of_a_with<T: Scalar>(
    disc: &Discretization<T>,
    beta: T,
    mode: SumMode,
    search: &SearchConfig,
    tol_z: T,
) -> Result<ZBar<T>> {
    check_parameters(T::zero(), beta, tol_z)?;
    let p = disc.potential();
    let cap = T::lit(search.z_cap);
    let sum_tol = tol_z * T::lit(0.1);
    let upper = SumProfile::new(disc, beta, SumMode::BracketUpper, T::zero(), search, sum_tol)?;
    let upper_slope = upper.sum(p, T::one(), beta)?;
    let saturated = |z_bar| ZBar { mesh: disc.mesh(), mode, z_bar, saturated: true };
    if upper_slope == T::zero() {
        return Ok(saturated(cap));
    }
    // Where z * (sum of masses) reaches 1; the capped upper sum can only be smaller.
    let z_linear = upper_slope.recip().min(cap);

    let (profile, start) = match mode {
        SumMode::BracketUpper => (upper, z_linear),
        SumMode::BracketLower => {
            let lower = SumProfile::new(disc, beta, SumMode::BracketLower, z_linear, search, sum_tol)?;
            (lower, z_linear)
        }
    };
    let f = |z: T| profile.sum(p, z, beta).map(|s| s - T::one());
    let mut lo = T::zero();
    let mut hi = start;
    while f(hi)? < T::zero() {
        if hi >= cap {
            return Ok(saturated(cap));
        }
        lo = hi;
        hi = (hi * T::lit(2.0)).min(cap);
    }
    let z_bar = bisect(f, lo, hi, tol_z)?;
    Ok(ZBar { mesh: disc.mesh(), mode, z_bar, saturated: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mayer::psi_integral;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn hs() -> PairPotential<f64> {
        PairPotential::hard_sphere(1.0, 2).unwrap()
    }

    fn step() -> PairPotential<f64> {
        PairPotential::hard_core_step(1.0, 1.0, 3.0, 2).unwrap()
    }

    fn boundary(points: &[[f64; 2]], p: &PairPotential<f64>) -> BoundaryConfiguration<f64> {
        BoundaryConfiguration::new(points.iter().map(|x| x.to_vec()).collect(), p).unwrap()
    }

    /// Area of `{u^2 + v^2 <= r^2, 0 <= u <= x, 0 <= v <= y}` for `x, y >= 0`, extended oddly.
    fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
        if x < 0.0 {
            return -quadrant_area(-x, y, r);
        }
        if y < 0.0 {
            return -quadrant_area(x, -y, r);
        }
        let prim = |u: f64| 0.5 * (u * (r * r - u * u).max(0.0).sqrt() + r * r * (u / r).asin());
        let xm = x.min(r);
        let knee = if y < r { (r * r - y * y).sqrt() } else { 0.0 };
        let flat = knee.min(xm);
        y.min(r) * flat + prim(xm) - prim(flat)
    }

    /// Area of the rectangle `[x0, x1] x [y0, y1]` inside the disc of radius `r` around `c`.
    fn disc_rectangle_area(c: [f64; 2], r: f64, lo: [f64; 2], hi: [f64; 2]) -> f64 {
        let (x0, x1, y0, y1) = (lo[0] - c[0], hi[0] - c[0], lo[1] - c[1], hi[1] - c[1]);
        quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r) + quadrant_area(x0, y0, r)
    }

    #[test]
    fn area_oracle_sanity() {
        assert_abs_diff_eq!(disc_rectangle_area([0.0, 0.0], 1.0, [-2.0, -2.0], [2.0, 2.0]), PI, epsilon = 1e-14);
        assert_abs_diff_eq!(disc_rectangle_area([0.0, 0.0], 1.0, [0.0, 0.0], [2.0, 2.0]), PI / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(disc_rectangle_area([5.0, 0.0], 1.0, [0.0, 0.0], [0.5, 0.5]), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(disc_rectangle_area([0.0, 0.0], 10.0, [0.0, 0.0], [0.5, 0.5]), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn mesh_admissibility() {
        assert!(Discretization::new(hs(), 0.7).is_ok());
        assert!(Discretization::new(hs(), 1.0 / 2f64.sqrt()).is_err());
        assert!(Discretization::new(PairPotential::strauss(1.0, 1.0, 2).unwrap(), 0.1).is_err());
        let d = Discretization::new(hs(), 0.25).unwrap();
        assert!(d.cube(&[1]).is_err());
        assert_eq!(d.cube(&[1, -2]).unwrap().center(), &[0.25, -0.5]);
    }

    #[test]
    fn boundary_must_be_authorised() {
        assert!(BoundaryConfiguration::new(vec![vec![0.0, 0.0], vec![0.9, 0.0]], &hs()).is_err());
        assert!(BoundaryConfiguration::new(vec![vec![0.0, 0.0], vec![1.1, 0.0]], &hs()).is_ok());
        assert!(BoundaryConfiguration::new(vec![vec![0.0, 0.0, 0.0]], &hs()).is_err());
        let g = boundary(&[[0.0, 0.0]], &hs());
        assert!(g.with_point(vec![0.5, 0.5], &hs()).is_err());
        assert_eq!(g.with_point(vec![2.0, 0.0], &hs()).unwrap().len(), 2);
    }

    #[test]
    fn one_point_energy_examples() {
        let empty = BoundaryConfiguration::empty();
        assert!(one_point_energy(&hs(), &[0.0, 0.0], &empty).unwrap().is_zero());
        let g = boundary(&[[0.8, 0.0]], &hs());
        assert!(one_point_energy(&hs(), &[0.0, 0.0], &g).unwrap().is_infinite());
        let g = boundary(&[[2.0, 0.0]], &step());
        assert_eq!(one_point_energy(&step(), &[0.0, 0.0], &g).unwrap(), Extended::Finite(1.0));
        let g = boundary(&[[2.0, 0.0], [0.0, 2.5]], &step());
        assert_eq!(one_point_energy(&step(), &[0.0, 0.0], &g).unwrap(), Extended::Finite(2.0));
        assert!(one_point_energy(&step(), &[2.0, 0.0], &g).is_err());
    }

    #[test]
    fn partition_function_closed_forms() {
        let cube = Cube::new(vec![0.0, 0.0], 0.2).unwrap();
        let (z, a2) = (0.7, 0.04);
        let covering = boundary(&[[0.3, 0.0]], &hs());
        let zf = cube_partition_function(&hs(), z, 1.0, &cube, &covering, 1e-10).unwrap();
        assert_abs_diff_eq!(zf.value, (-z * a2).exp(), epsilon = 1e-15);

        let closed = (-z * a2).exp() * (1.0 + z * a2);
        let empty = cube_partition_function(&hs(), z, 1.0, &cube, &BoundaryConfiguration::empty(), 1e-10).unwrap();
        assert_abs_diff_eq!(empty.value, closed, epsilon = 1e-15);
        let far = boundary(&[[5.0, 0.0], [0.0, -3.2]], &step());
        let far = cube_partition_function(&step(), z, 1.0, &cube, &far, 1e-10).unwrap();
        assert_abs_diff_eq!(far.value, closed, epsilon = 1e-15);
        assert_eq!(cube_partition_function(&hs(), 0.0, 1.0, &cube, &covering, 1e-10).unwrap().value, 1.0);
    }

    #[test]
    fn partition_function_matches_monte_carlo() {
        // The unit disc around y cuts the cube roughly in half along a curve.
        let cube = Cube::new(vec![0.0, 0.0], 0.5).unwrap();
        let y = [1.0, 0.1];
        let gamma = boundary(&[y], &hs());
        let z = 2.0;
        let zf = cube_partition_function(&hs(), z, 1.0, &cube, &gamma, 1e-10).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let x = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
            if (x[0] - y[0]).hypot(x[1] - y[1]) > 1.0 {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        assert!(frac > 0.3 && frac < 0.7);
        let se = (frac * (1.0 - frac) / n as f64).sqrt() * 0.25;
        let mc_mass = frac * 0.25;
        let q = (-z * 0.25f64).exp();
        let mass = (zf.value / q - 1.0) / z;
        assert!((mass - mc_mass).abs() < 3.0 * se, "quadrature {mass} vs MC {mc_mass} +- {se}");
        assert_abs_diff_eq!(mass, 0.25 - disc_rectangle_area(y, 1.0, [-0.25; 2], [0.25; 2]), epsilon = 1e-9);
    }

    #[test]
    fn tv_vanishes_for_equal_or_distant_boundaries() {
        let cube = Cube::new(vec![0.0, 0.0], 0.2).unwrap();
        let g = boundary(&[[1.0, 0.3], [-0.2, -1.0]], &step());
        let same = cube_tv_distance(&step(), 0.5, 1.0, &cube, &g, &g.clone(), 1e-10).unwrap();
        assert_eq!(same.value, 0.0);
        // Beyond the reach R = 3 plus the half diagonal.
        let far = g.with_point(vec![3.2, 0.0], &step()).unwrap();
        let tv = cube_tv_distance(&step(), 0.5, 1.0, &cube, &g, &far, 1e-10).unwrap();
        assert!(tv.value.abs() < 1e-12);
        let two_cubes = far.with_point(vec![-4.0, 0.0], &step()).unwrap();
        assert!(cube_tv_distance(&step(), 0.5, 1.0, &cube, &g, &two_cubes, 1e-10).is_err());
    }

    #[test]
    fn tv_matches_area_oracle() {
        let a = 0.2;
        let cube = Cube::new(vec![0.0, 0.0], a).unwrap();
        for (y, z) in [([0.9, 0.0], 0.5), ([0.9 / 2f64.sqrt(), 0.9 / 2f64.sqrt()], 2.0), ([0.3, 0.84], 1.0)] {
            let tilde = boundary(&[y], &hs());
            let tv = cube_tv_distance(&hs(), z, 1.0, &cube, &BoundaryConfiguration::empty(), &tilde, 1e-10).unwrap();
            let area = disc_rectangle_area(y, 1.0, [-a / 2.0; 2], [a / 2.0; 2]);
            let z_empty = (-z * a * a).exp() * (1.0 + z * a * a);
            let oracle = z * (-z * a * a).exp() * area / z_empty;
            assert_abs_diff_eq!(tv.value, oracle, epsilon = 1e-8);
        }
    }

    /// The positive-part expression with the labels ordered so that `Z_tilde <= Z`.
    fn ordered_positive_part(
        p: &PairPotential<f64>,
        z: f64,
        cube: &Cube<f64>,
        g: &BoundaryConfiguration<f64>,
        h: &BoundaryConfiguration<f64>,
    ) -> f64 {
        let zg = cube_partition_function(p, z, 1.0, cube, g, 1e-12).unwrap().value;
        let zh = cube_partition_function(p, z, 1.0, cube, h, 1e-12).unwrap().value;
        let (g, h, zg, zh) = if zh <= zg { (g, h, zg, zh) } else { (h, g, zh, zg) };
        let q = (-z * cube.volume()).exp();
        let atom = (q * (1.0 / zg - 1.0 / zh)).max(0.0);
        let pg: Vec<&[f64]> = g.points().iter().map(Vec::as_slice).collect();
        let ph: Vec<&[f64]> = h.points().iter().map(Vec::as_slice).collect();
        let mut all = pg.clone();
        all.extend(ph.iter());
        let breaks = breaks_around(p, &all);
        let integral = cube_integral_with_breaks(
            |x| {
                let wg = energy_against(p, x, &pg).boltzmann(1.0);
                let wh = energy_against(p, x, &ph).boltzmann(1.0);
                (wg / zg - wh / zh).max(0.0)
            },
            cube,
            &breaks,
            1e-11,
        )
        .unwrap();
        atom + z * q * integral.value
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn tv_is_order_free_and_agrees_with_positive_part(
            z in 0.05f64..3.0,
            gx in -2.5f64..-1.2, gy in -1.0f64..1.0,
            yx in 0.95f64..1.6, yy in -0.6f64..0.6,
            moved in 0.0f64..0.05,
        ) {
            let p = step();
            let cube = Cube::new(vec![0.0, 0.0], 0.3).unwrap();
            let base = boundary(&[[gx, gy]], &p);
            let g = base.with_point(vec![yx, yy], &p).unwrap();
            let alt = base.with_point(vec![yx + moved, yy - moved], &p).unwrap();
            for h in [&base, &alt] {
                if lattice_cell(&cube, &[yx, yy]) != lattice_cell(&cube, &[yx + moved, yy - moved]) {
                    continue;
                }
                let forward = cube_tv_distance(&p, z, 1.0, &cube, &g, h, 1e-10).unwrap().value;
                let backward = cube_tv_distance(&p, z, 1.0, &cube, h, &g, 1e-10).unwrap().value;
                prop_assert!((forward - backward).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&forward));
                let paper = ordered_positive_part(&p, z, &cube, &g, h);
                prop_assert!((forward - paper).abs() < 1e-7, "{forward} vs {paper}");
            }
        }
    }

    #[test]
    fn k_ij_zero_beyond_reach_and_translation_invariant() {
        let disc = Discretization::new(hs(), 0.25).unwrap();
        let s = SearchConfig::default();
        // Closures 1.25 apart.
        let far = k_ij(&disc, 0.3, 1.0, &[0, 0], &[6, 0], &s, 1e-9).unwrap();
        assert_eq!(far, KBracket { lower: 0.0, upper: 0.0 });
        let k0 = k_ij(&disc, 0.3, 1.0, &[0, 0], &[2, 1], &s, 1e-9).unwrap();
        let k1 = k_ij(&disc, 0.3, 1.0, &[5, -3], &[7, -2], &s, 1e-9).unwrap();
        assert_eq!(k0, k1);
        assert!(k0.lower > 0.0 && k0.lower <= k0.upper);
        assert!(k_ij(&disc, 0.3, 1.0, &[1, 1], &[1, 1], &s, 1e-9).is_err());
    }

    #[test]
    fn k_ij_is_linear_as_z_vanishes() {
        let disc = Discretization::new(step(), 0.3).unwrap();
        let s = SearchConfig::default();
        for j in [[1, 0], [3, 2], [7, 5]] {
            let k4 = k_ij(&disc, 1e-4, 1.0, &[0, 0], &j, &s, 1e-12).unwrap();
            let k5 = k_ij(&disc, 1e-5, 1.0, &[0, 0], &j, &s, 1e-12).unwrap();
            assert!(k4.upper > 0.0 && k4.lower > 0.0);
            assert_abs_diff_eq!(k4.upper / k5.upper, 10.0, epsilon = 1e-9);
            assert_abs_diff_eq!(k4.lower / k5.lower, 10.0, epsilon = 1e-2);
        }
    }

    #[test]
    fn k_ij_bracket_is_ordered() {
        let s = SearchConfig { refine: true, ..SearchConfig::default() };
        for (p, a) in [(hs(), 0.3), (step(), 0.4)] {
            let disc = Discretization::new(p, a).unwrap();
            for j in [[1, 0], [1, 1], [2, -1], [0, 3]] {
                for z in [0.05, 0.5, 5.0] {
                    for beta in [0.3, 2.0] {
                        let k = k_ij(&disc, z, beta, &[0, 0], &j, &s, 1e-9).unwrap();
                        assert!(k.lower <= k.upper && k.upper <= 1.0, "{k:?} at j={j:?} z={z}");
                    }
                }
            }
        }
    }

    #[test]
    fn sum_vanishes_at_zero_and_grows_with_z() {
        let disc = Discretization::new(hs(), 0.3).unwrap();
        for mode in [SumMode::BracketLower, SumMode::BracketUpper] {
            assert_eq!(dobrushin_sum(&disc, 0.0, 1.0, mode, 1e-6).unwrap(), 0.0);
            let sums: Vec<f64> =
                [0.05, 0.1, 0.2, 0.4, 0.8].iter().map(|&z| dobrushin_sum(&disc, z, 1.0, mode, 1e-6).unwrap()).collect();
            assert!(sums.windows(2).all(|w| w[0] < w[1]), "{mode}: {sums:?}");
        }
    }

    #[test]
    fn upper_sum_is_dominated_by_psi() {
        for (p, a, beta) in [(hs(), 0.3, 1.0), (step(), 0.5, 0.7)] {
            let psi = psi_integral(&p, beta, a, 1e-9).unwrap();
            let disc = Discretization::new(p, a).unwrap();
            for z in [0.01, 0.1, 0.3] {
                let upper = dobrushin_sum(&disc, z, beta, SumMode::BracketUpper, 1e-7).unwrap();
                let lower = dobrushin_sum(&disc, z, beta, SumMode::BracketLower, 1e-7).unwrap();
                assert!(lower <= upper);
                assert!(upper <= z * psi.value + 1e-6, "{upper} vs {}", z * psi.value);
            }
        }
    }

    #[test]
    fn zbar_solves_the_sum_equation() {
        let disc = Discretization::new(hs(), 0.3).unwrap();
        let tol_z = 1e-6;
        let up = zbar_of_a(&disc, 1.0, SumMode::BracketUpper, tol_z).unwrap();
        let lo = zbar_of_a(&disc, 1.0, SumMode::BracketLower, tol_z).unwrap();
        assert!(!up.saturated && !lo.saturated);
        assert!(up.z_bar <= 1.0 / PI && lo.z_bar >= up.z_bar);
        for zb in [&up, &lo] {
            let s = dobrushin_sum(&disc, zb.z_bar, 1.0, zb.mode, 1e-8).unwrap();
            // Slope of the sum is about 1/z_bar.
            assert!((s - 1.0).abs() < 2.0 * tol_z / zb.z_bar, "{zb:?}: sum {s}");
        }
        assert_eq!(up.csv_row(), format!("0.3,upper,{},false", up.z_bar));
        assert_eq!("bracket-lower".parse::<SumMode>().unwrap(), SumMode::BracketLower);
    }
}
