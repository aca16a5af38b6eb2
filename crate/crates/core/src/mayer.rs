//! The Mayer integral `M(beta) = int (1 - exp(-beta phi(|y|))) dy` and its
//! cube-wise local-supremum counterpart at mesh `a`.

use rayon::prelude::*;

use crate::error::{invalid_arg, Error, Result};
use crate::extended::Extended;
use crate::numerics::{cubes_within_range, radial_integral, Cube};
use crate::potentials::PairPotential;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MayerIntegralResult<T> {
    pub value: T,
    pub error_estimate: T,
    pub beta: T,
    /// Radius beyond which the integrand was dropped (the range, or a certified cut for infinite range).
    pub truncation_radius: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiIntegralResult<T> {
    pub value: T,
    pub error_estimate: T,
    pub mesh: T,
    /// Sampled point of the fundamental cell where the supremum over `x` was found.
    pub x_argmax: Vec<T>,
}

/// Sampling of the fundamental cell when taking the supremum over `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiSearch {
    /// Grid points per axis (including both faces of the closed cell).
    pub grid_points: usize,
    /// Re-sample a finer grid around the best grid point.
    pub refine: bool,
}

impl PsiSearch {
    pub fn for_dimension(d: usize) -> Self {
        let grid_points = match d {
            1 => 33,
            2 => 9,
            3 => 5,
            _ => 3,
        };
        Self { grid_points, refine: true }
    }
}

fn check_beta<T: Scalar>(beta: T) -> Result<()> {
    if !(beta > T::zero()) || !beta.is_finite() {
        return invalid_arg(format!("inverse temperature must be positive and finite, got {beta}"));
    }
    Ok(())
}

/// Cut-off radius for the Mayer function and the certified tail mass beyond it.
pub(crate) fn effective_reach<T: Scalar>(p: &PairPotential<T>, beta: T, budget: T, shift: T) -> Result<(T, T)> {
    match p.interaction_range() {
        Extended::Finite(r) => Ok((r, T::zero())),
        Extended::Infinite => {
            let env = p.tail_envelope().ok_or_else(|| {
                Error::Integrability("infinite-range potential without a declared tail envelope".into())
            })?;
            let d = p.dimension();
            let r = env.truncation_radius(beta, d, budget, shift);
            Ok((r, env.mayer_tail(beta, d, r, shift)))
        }
    }
}

/// `M(beta)`, the integral of the Mayer function over `R^d`.
///
/// For radial potentials the supremum over the base point is trivial.
pub fn mayer_integral<T: Scalar>(p: &PairPotential<T>, beta: T, tol: T) -> Result<MayerIntegralResult<T>> {
    check_beta(beta)?;
    if !(tol > T::zero()) {
        return invalid_arg("tolerance must be positive");
    }
    let (r_max, tail) = effective_reach(p, beta, tol * T::lit(0.1), T::zero())?;
    let quad_tol = tol - tail;
    let mut breakpoints = p.breakpoints();
    breakpoints.retain(|&b| b < r_max);
    let integral = radial_integral(|r| p.mayer(beta, r), p.dimension(), r_max, &breakpoints, quad_tol)?;
    Ok(MayerIntegralResult {
        value: integral.value.max(T::zero()),
        error_estimate: integral.error + tail,
        beta,
        truncation_radius: r_max,
    })
}

/// Offsets of the lattice cubes that can interact with the fundamental cell.
struct LatticeStencil<T> {
    centers: Vec<Vec<T>>,
    side: T,
}

impl<T: Scalar> LatticeStencil<T> {
    fn new(d: usize, side: T, reach: T) -> Result<Self> {
        let origin = Cube::lattice(&vec![0; d], side)?;
        let mut indices = vec![vec![0i64; d]];
        indices.extend(cubes_within_range(&origin, reach)?);
        let centers = indices
            .iter()
            .map(|idx| idx.iter().map(|&k| T::from_i64(k).expect("index in range") * side).collect())
            .collect();
        Ok(Self { centers, side })
    }

    /// `int Psi_a(x, y) dy = a^d sum_j sup_{y in Lambda_j} m(|x - y|)`.
    fn psi_at(&self, p: &PairPotential<T>, beta: T, x: &[T]) -> Result<T> {
        let h = self.side * T::lit(0.5);
        let mut total = T::zero();
        for c in &self.centers {
            let mut near = T::zero();
            let mut far = T::zero();
            for (&xi, &ci) in x.iter().zip(c) {
                let off = (xi - ci).abs();
                let g = (off - h).max(T::zero());
                near = near + g * g;
                far = far + (off + h) * (off + h);
            }
            total = total + p.mayer_sup_on(beta, near.sqrt(), far.sqrt())?;
        }
        Ok(total * self.side.powi(x.len() as i32))
    }
}

fn axis_points<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n <= 1 {
        return vec![(lo + hi) * T::lit(0.5)];
    }
    (0..n).map(|k| lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1)).collect()
}

pub(crate) fn grid<T: Scalar>(lo: &[T], hi: &[T], n: usize) -> Vec<Vec<T>> {
    let axes: Vec<Vec<T>> = lo.iter().zip(hi).map(|(&l, &h)| axis_points(l, h, n)).collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Evaluates `f` on every point in parallel and returns the first maximiser in input order.
fn argmax_over<T: Scalar>(points: Vec<Vec<T>>, f: impl Fn(&[T]) -> Result<T> + Sync) -> Result<(T, Vec<T>)> {
    let values: Vec<T> = points.par_iter().map(|x| f(x)).collect::<Result<_>>()?;
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    Ok((values[best], points[best].clone()))
}

/// `sup_x int Psi_a(x, y) dy` with the default sampling of the fundamental cell.
pub fn psi_integral<T: Scalar>(p: &PairPotential<T>, beta: T, a: T, tol: T) -> Result<PsiIntegralResult<T>> {
    psi_integral_with(p, beta, a, tol, PsiSearch::for_dimension(p.dimension()))
}

/// `sup_x int Psi_a(x, y) dy`, the supremum taken over a grid of the
/// fundamental cell with an optional refinement pass around the maximiser.
pub fn psi_integral_with<T: Scalar>(
    p: &PairPotential<T>,
    beta: T,
    a: T,
    tol: T,
    search: PsiSearch,
) -> Result<PsiIntegralResult<T>> {
    check_beta(beta)?;
    if !(a > T::zero()) || !a.is_finite() {
        return invalid_arg(format!("mesh must be positive, got {a}"));
    }
    if !(tol > T::zero()) {
        return invalid_arg("tolerance must be positive");
    }
    let d = p.dimension();
    let shift = a * T::from_usize_lossy(d).sqrt();
    let (reach, tail) = effective_reach(p, beta, tol * T::lit(0.1), shift)?;
    let stencil = LatticeStencil::new(d, a, reach)?;

    let h = a * T::lit(0.5);
    let lo = vec![-h; d];
    let hi = vec![h; d];
    let n = search.grid_points.max(2);
    let (mut best, mut argmax) = argmax_over(grid(&lo, &hi, n), |x| stencil.psi_at(p, beta, x))?;
    if search.refine {
        let step = a / T::from_usize_lossy(n - 1);
        let rlo: Vec<T> = argmax.iter().map(|&c| (c - step).max(-h)).collect();
        let rhi: Vec<T> = argmax.iter().map(|&c| (c + step).min(h)).collect();
        let (v, x) = argmax_over(grid(&rlo, &rhi, n), |x| stencil.psi_at(p, beta, x))?;
        if v > best {
            best = v;
            argmax = x;
        }
    }
    Ok(PsiIntegralResult { value: best, error_estimate: tail, mesh: a, x_argmax: argmax })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Converged,
    NotYetConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityRow<T> {
    pub mesh: T,
    pub psi_integral: T,
    pub mayer_integral: T,
    pub gap: T,
}

/// Empirical convergence of `sup_x int Psi_a` towards `M(beta)` along a mesh sequence.
///
/// Only reports what the numbers show; it never claims the limit fails analytically.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport<T> {
    pub rows: Vec<RegularityRow<T>>,
    pub mayer: MayerIntegralResult<T>,
    pub gaps_strictly_decreasing: bool,
    pub verdict: Convergence,
}

pub fn check_regularity_a3<T: Scalar>(
    p: &PairPotential<T>,
    beta: T,
    mesh_sequence: &[T],
    tol: T,
) -> Result<RegularityReport<T>> {
    if mesh_sequence.is_empty() {
        return invalid_arg("mesh sequence is empty");
    }
    if mesh_sequence.iter().any(|&a| !(a > T::zero())) || mesh_sequence.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid_arg("mesh sequence must be positive and strictly decreasing");
    }
    let quad_tol = (tol * T::lit(1e-3)).max(T::lit(1e-12));
    let mayer = mayer_integral(p, beta, quad_tol)?;
    let mut rows = Vec::with_capacity(mesh_sequence.len());
    for &a in mesh_sequence {
        let psi = psi_integral(p, beta, a, quad_tol)?;
        rows.push(RegularityRow {
            mesh: a,
            psi_integral: psi.value,
            mayer_integral: mayer.value,
            gap: (psi.value - mayer.value).abs(),
        });
    }
    let gaps_strictly_decreasing = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let non_increasing = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    let last = rows.last().expect("non-empty").gap;
    let verdict = if non_increasing && last < tol { Convergence::Converged } else { Convergence::NotYetConverged };
    Ok(RegularityReport { rows, mayer, gaps_strictly_decreasing, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{CustomRadial, TailEnvelope};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn hs() -> PairPotential<f64> {
        PairPotential::hard_sphere(1.0, 2).unwrap()
    }

    fn step() -> PairPotential<f64> {
        PairPotential::hard_core_step(1.0, 1.0, 3.0, 2).unwrap()
    }

    #[test]
    fn mayer_examples() {
        for beta in [0.1, 1.0, 7.0] {
            assert_abs_diff_eq!(mayer_integral(&hs(), beta, 1e-10).unwrap().value, PI, epsilon = 1e-9);
        }
        let m = mayer_integral(&step(), 1.0, 1e-10).unwrap();
        assert_abs_diff_eq!(m.value, PI * (1.0 + 8.0 * (1.0 - (-1.0f64).exp())), epsilon = 1e-9);
        assert_abs_diff_eq!(m.value, 19.0285, epsilon = 1e-4);
        let strauss = PairPotential::strauss(1.0, 1.0, 2).unwrap();
        let m = mayer_integral(&strauss, 2.0, 1e-10).unwrap();
        assert_abs_diff_eq!(m.value, PI * (1.0 - (-2.0f64).exp()), epsilon = 1e-9);
        assert_abs_diff_eq!(m.value, 2.71642, epsilon = 1e-5);
    }

    #[test]
    fn mayer_rejects_bad_beta() {
        assert!(mayer_integral(&hs(), 0.0, 1e-8).is_err());
    }

    #[test]
    fn infinite_range_needs_envelope() {
        let custom = |env| {
            PairPotential::custom(
                CustomRadial {
                    profile: Arc::new(
                        |r: f64| if r <= 1.0 { Extended::Infinite } else { Extended::Finite(r.powi(-6)) },
                    ),
                    hard_core_radius: 1.0,
                    range: Extended::Infinite,
                    monotone: true,
                    breakpoints: vec![],
                    envelope: env,
                    sup_samples: None,
                },
                2,
            )
            .unwrap()
        };
        assert!(matches!(mayer_integral(&custom(None), 1.0, 1e-6), Err(Error::Integrability(_))));
        let env = TailEnvelope { coefficient: 1.0, exponent: 6.0, from_radius: 1.0 };
        let m = mayer_integral(&custom(Some(env)), 1.0, 1e-6).unwrap();
        // Between the hard disc and the disc plus the full first-order tail.
        let upper = PI + 2.0 * PI * (1.0f64).powi(-4) / 4.0;
        assert!(m.value > PI && m.value < upper, "{}", m.value);
        // Independent route: 1D trapezoid on a very fine grid out to r = 200.
        let n = 2_000_000;
        let (lo, hi) = (1.0f64, 200.0f64);
        let dr = (hi - lo) / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let r = lo + k as f64 * dr;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            s += w * 2.0 * PI * r * (1.0 - (-r.powi(-6)).exp());
        }
        assert!((m.value - (PI + s * dr)).abs() < 2e-6, "{} vs {}", m.value, PI + s * dr);
    }

    #[test]
    fn psi_examples() {
        let ideal = PairPotential::<f64>::ideal(2).unwrap();
        assert_eq!(psi_integral(&ideal, 1.0, 0.1, 1e-8).unwrap().value, 0.0);
        for (p, beta) in [(hs(), 1.0), (step(), 0.5), (PairPotential::strauss(1.0, 1.0, 2).unwrap(), 2.0)] {
            for a in [0.3, 0.1] {
                let psi = psi_integral(&p, beta, a, 1e-8).unwrap();
                let m = mayer_integral(&p, beta, 1e-10).unwrap();
                assert!(psi.value >= m.value - psi.error_estimate - m.error_estimate);
            }
        }
    }

    #[test]
    fn psi_hard_sphere_fine_mesh() {
        let a = 0.001;
        let psi = psi_integral_with(&hs(), 1.0, a, 1e-8, PsiSearch { grid_points: 3, refine: false }).unwrap();
        let excess_bound = 2.0 * PI * a * 2f64.sqrt() * (1.0 + a);
        assert!(psi.value >= PI && psi.value - PI <= excess_bound, "{}", psi.value);
        assert!((psi.value - PI).abs() < 0.02);
    }

    #[test]
    fn non_monotone_profile_needs_sampling() {
        let bump = |samples| {
            PairPotential::custom(
                CustomRadial {
                    profile: Arc::new(|r: f64| {
                        if r <= 0.5 {
                            Extended::Infinite
                        } else if (1.0..=1.5).contains(&r) {
                            Extended::Finite(1.0)
                        } else {
                            Extended::zero()
                        }
                    }),
                    hard_core_radius: 0.5,
                    range: Extended::Finite(1.5),
                    monotone: false,
                    breakpoints: vec![1.0],
                    envelope: None,
                    sup_samples: samples,
                },
                2,
            )
            .unwrap()
        };
        assert!(matches!(psi_integral(&bump(None), 1.0, 0.2, 1e-8), Err(Error::Configuration(_))));
        let psi = psi_integral(&bump(Some(16)), 1.0, 0.2, 1e-8).unwrap();
        let m = mayer_integral(&bump(Some(16)), 1.0, 1e-10).unwrap();
        assert_abs_diff_eq!(m.value, PI * 0.25 + PI * 1.25 * (1.0 - (-1.0f64).exp()), epsilon = 1e-8);
        assert!(psi.value >= m.value);
    }

    #[test]
    fn regularity_hard_sphere() {
        let report = check_regularity_a3(&hs(), 1.0, &[0.5, 0.25, 0.125, 0.0625], 0.5).unwrap();
        assert!(report.gaps_strictly_decreasing);
        assert!(report.rows.iter().all(|r| r.psi_integral >= PI));
        assert_eq!(report.verdict, Convergence::Converged);
    }

    #[test]
    fn regularity_ideal_gas_has_zero_gap() {
        let report = check_regularity_a3(&PairPotential::<f64>::ideal(2).unwrap(), 1.0, &[0.5, 0.2], 1e-6).unwrap();
        assert!(report.rows.iter().all(|r| r.gap == 0.0));
        assert_eq!(report.verdict, Convergence::Converged);
    }

    #[test]
    fn regularity_step_gaps_shrink_linearly() {
        let meshes = [0.2, 0.1, 0.05];
        let report = check_regularity_a3(&step(), 1.0, &meshes, 1e-3).unwrap();
        // Boundary-layer oracle: cubes straddling the circles r = 1 and r = 3 have total
        // area at most 2 pi r a sqrt(2), each inflated by at most the jump there.
        let c = 1.0 - (-1.0f64).exp();
        for row in &report.rows {
            let layer = 2.0 * PI * row.mesh * 2f64.sqrt() * ((1.0 - c) * (1.0 + row.mesh) + c * (3.0 + row.mesh));
            assert!(row.gap > 0.0 && row.gap <= layer, "a={} gap={} layer={}", row.mesh, row.gap, layer);
        }
        let ratios: Vec<f64> = report.rows.windows(2).map(|w| w[0].gap / w[1].gap).collect();
        for r in ratios {
            assert!((1.5..=2.6).contains(&r), "gap ratio {r} not close to linear scaling");
        }
        assert_eq!(report.verdict, Convergence::NotYetConverged);
    }

    #[test]
    fn rejects_unsorted_meshes() {
        assert!(check_regularity_a3(&hs(), 1.0, &[0.1, 0.2], 1e-3).is_err());
    }
}
