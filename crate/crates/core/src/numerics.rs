//! Quadrature and lattice geometry.
//!
//! All integrals are built on one adaptive Gauss-Kronrod (7/15) rule that
//! refines the worst interval first and is forced to split at declared
//! breakpoints. Box integrals nest it axis by axis; the innermost axis splits
//! exactly at declared sphere crossings, so piecewise-constant integrands
//! bounded by spheres integrate to near machine precision.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid_arg, Error, Result};
use crate::Scalar;

/// Highest dimension the tensor-product cube quadrature accepts.
pub const MAX_CUBATURE_DIMENSION: usize = 6;

/// A quadrature result with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<T> {
    pub value: T,
    pub error: T,
}

impl<T: Scalar> Integral<T> {
    pub fn exact(value: T) -> Self {
        Self { value, error: T::zero() }
    }
}

/// Volume of the unit ball in `R^d`, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn unit_ball_volume<T: Scalar>(d: usize) -> Result<T> {
    if d == 0 {
        return invalid_arg("dimension must be at least 1");
    }
    // v_d = v_{d-2} * 2 pi / d with v_0 = 1, v_1 = 2.
    let two_pi = T::lit(2.0) * T::PI();
    let mut v = if d % 2 == 0 { T::one() } else { T::lit(2.0) };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v = v * two_pi / T::from_usize_lossy(k);
        k += 2;
    }
    Ok(v)
}

/// Half-open axis-aligned cube `center + (-side/2, side/2]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube<T> {
    center: Vec<T>,
    side: T,
}

/// Lattice index `k` of the cube of side `side` containing `x`, i.e. `k a - a/2 < x <= k a + a/2`.
pub fn lattice_index_of<T: Scalar>(x: &[T], side: T) -> Vec<i64> {
    x.iter().map(|&xi| (xi / side - T::lit(0.5)).ceil().to_i64().expect("coordinate in range")).collect()
}

impl<T: Scalar> Cube<T> {
    pub fn new(center: Vec<T>, side: T) -> Result<Self> {
        if center.is_empty() {
            return invalid_arg("cube needs at least one coordinate");
        }
        if !(side > T::zero() && side.is_finite()) {
            return invalid_arg(format!("cube side must be positive, got {side}"));
        }
        Ok(Self { center, side })
    }

    /// The cube `Lambda_{a,i}` of the lattice `a Z^d` with integer index `index`.
    pub fn lattice(index: &[i64], side: T) -> Result<Self> {
        let center = index.iter().map(|&k| T::from_i64(k).expect("index in range") * side).collect();
        Self::new(center, side)
    }

    pub fn center(&self) -> &[T] {
        &self.center
    }

    pub fn side(&self) -> T {
        self.side
    }

    pub fn dimension(&self) -> usize {
        self.center.len()
    }

    pub fn volume(&self) -> T {
        self.side.powi(self.dimension() as i32)
    }

    /// Integer index of this cube in the lattice `side * Z^d`.
    pub fn lattice_index(&self) -> Vec<i64> {
        self.center.iter().map(|&c| (c / self.side).round().to_i64().expect("index in range")).collect()
    }

    pub fn lower(&self) -> Vec<T> {
        let h = self.side * T::lit(0.5);
        self.center.iter().map(|&c| c - h).collect()
    }

    pub fn upper(&self) -> Vec<T> {
        let h = self.side * T::lit(0.5);
        self.center.iter().map(|&c| c + h).collect()
    }

    pub fn contains(&self, x: &[T]) -> bool {
        let h = self.side * T::lit(0.5);
        x.len() == self.center.len() && x.iter().zip(&self.center).all(|(&xi, &c)| xi > c - h && xi <= c + h)
    }

    /// Nearest point of the closed cube to `x`.
    pub fn nearest_point(&self, x: &[T]) -> Vec<T> {
        let h = self.side * T::lit(0.5);
        x.iter().zip(&self.center).map(|(&xi, &c)| xi.max(c - h).min(c + h)).collect()
    }

    /// Distance from `x` to the closed cube.
    pub fn distance_to_point(&self, x: &[T]) -> T {
        let h = self.side * T::lit(0.5);
        x.iter()
            .zip(&self.center)
            .map(|(&xi, &c)| {
                let g = ((xi - c).abs() - h).max(T::zero());
                g * g
            })
            .sum::<T>()
            .sqrt()
    }

    /// Farthest distance from `x` to a point of the closed cube.
    pub fn max_distance_to_point(&self, x: &[T]) -> T {
        let h = self.side * T::lit(0.5);
        x.iter()
            .zip(&self.center)
            .map(|(&xi, &c)| {
                let g = (xi - c).abs() + h;
                g * g
            })
            .sum::<T>()
            .sqrt()
    }

    /// Distance between the closures of two cubes of the same lattice.
    pub fn distance_to_cube(&self, other: &Cube<T>) -> T {
        let hs = (self.side + other.side) * T::lit(0.5);
        self.center
            .iter()
            .zip(&other.center)
            .map(|(&a, &b)| {
                let g = ((a - b).abs() - hs).max(T::zero());
                g * g
            })
            .sum::<T>()
            .sqrt()
    }

    /// The cube of the same lattice shifted by `offset` lattice steps.
    pub fn shifted(&self, offset: &[i64]) -> Cube<T> {
        let center = self
            .center
            .iter()
            .zip(offset)
            .map(|(&c, &k)| c + T::from_i64(k).expect("offset in range") * self.side)
            .collect();
        Cube { center, side: self.side }
    }
}

/// Lattice indices `j != i` with `dist(Lambda_i, Lambda_j) <= reach`, in lexicographic order.
///
/// Indices are absolute, in the lattice `side * Z^d` the cube belongs to. The
/// cube itself is not listed.
pub fn cubes_within_range<T: Scalar>(center_cube: &Cube<T>, reach: T) -> Result<Vec<Vec<i64>>> {
    if reach.is_infinite() {
        return Err(Error::Unsupported("infinite reach: truncate with a tail bound first".into()));
    }
    if !(reach >= T::zero()) {
        return invalid_arg(format!("reach must be non-negative, got {reach}"));
    }
    let a = center_cube.side();
    let d = center_cube.dimension();
    let kmax = (reach / a).floor().to_i64().expect("reach / side in range") + 1;
    let base = center_cube.lattice_index();
    let reach2 = reach * reach;
    let mut out = Vec::new();
    let mut offset = vec![-kmax; d];
    loop {
        if offset.iter().any(|&k| k != 0) {
            let dist2: T = offset
                .iter()
                .map(|&k| {
                    let g = T::from_i64((k.abs() - 1).max(0)).unwrap() * a;
                    g * g
                })
                .sum();
            if dist2 <= reach2 {
                out.push(base.iter().zip(&offset).map(|(b, o)| b + o).collect());
            }
        }
        // Odometer increment, last axis fastest.
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(out);
            }
            axis -= 1;
            if offset[axis] < kmax {
                offset[axis] += 1;
                break;
            }
            offset[axis] = -kmax;
        }
    }
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod<T: Scalar, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> Integral<T> {
    let c = (a + b) * T::lit(0.5);
    let h = (b - a) * T::lit(0.5);
    // Node values left to right: 0..7 mirror 14..8, 7 is the centre.
    let mut vals = [T::zero(); 15];
    vals[7] = f(c);
    let mut kronrod = vals[7] * T::lit(WGK[7]);
    let mut gauss = vals[7] * T::lit(WG[3]);
    for k in 0..7 {
        let dx = h * T::lit(XGK[k]);
        vals[k] = f(c - dx);
        vals[14 - k] = f(c + dx);
        let pair = vals[k] + vals[14 - k];
        kronrod = kronrod + pair * T::lit(WGK[k]);
        if k % 2 == 1 {
            gauss = gauss + pair * T::lit(WG[k / 2]);
        }
    }
    let mut error = ((kronrod - gauss) * h).abs();
    // Probes just inside both ends catch jumps beyond the outermost nodes.
    let inset = 1.0 - 1e-9;
    let mut probe = [T::zero(); 17];
    probe[0] = f(c - h * T::lit(inset));
    probe[1..16].copy_from_slice(&vals);
    probe[16] = f(c + h * T::lit(inset));
    let position = |k: usize| -> f64 {
        match k {
            0 => -inset,
            16 => inset,
            1..=7 => -XGK[k - 1],
            8 => 0.0,
            _ => XGK[15 - k],
        }
    };
    // A single adjacent pair carrying most of the spread signals a jump between
    // those points; bound the error by the jump times their spacing.
    let (lo, hi) = probe.iter().fold((probe[0], probe[0]), |(l, u), &v| (l.min(v), u.max(v)));
    let spread = hi - lo;
    if spread > T::zero() {
        for k in 0..16 {
            let step = (probe[k + 1] - probe[k]).abs();
            if step > spread * T::lit(0.5) {
                error = error.max(step * h * T::lit(position(k + 1) - position(k)));
            }
        }
    }
    Integral { value: kronrod * h, error }
}

/// Heap entry ordered by error, ties broken by creation order.
struct Pending<T, C> {
    error: T,
    id: usize,
    cell: C,
    value: T,
}

impl<T: Scalar, C> PartialEq for Pending<T, C> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar, C> Eq for Pending<T, C> {}
impl<T: Scalar, C> PartialOrd for Pending<T, C> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar, C> Ord for Pending<T, C> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal).then_with(|| other.id.cmp(&self.id))
    }
}

/// Sums heap contents in creation order so results do not depend on heap layout.
fn ordered_total<T: Scalar, C>(heap: BinaryHeap<Pending<T, C>>) -> Integral<T> {
    let mut cells: Vec<_> = heap.into_vec();
    cells.sort_by_key(|p| p.id);
    let value = cells.iter().map(|p| p.value).sum();
    let error = cells.iter().map(|p| p.error).sum();
    Integral { value, error }
}

const MAX_INTERVALS: usize = 20_000;

/// `int_a^b f(r) dr` by adaptive Gauss-Kronrod, splitting at `breakpoints` first.
pub fn integrate_1d<T: Scalar, F: FnMut(T) -> T>(
    mut f: F,
    a: T,
    b: T,
    breakpoints: &[T],
    tol: T,
) -> Result<Integral<T>> {
    if !(tol > T::zero()) {
        return invalid_arg("tolerance must be positive");
    }
    if !(a.is_finite() && b.is_finite()) || b < a {
        return invalid_arg(format!("bad integration interval [{a}, {b}]"));
    }
    if a == b {
        return Ok(Integral::exact(T::zero()));
    }
    let mut edges = vec![a];
    let mut inner: Vec<T> = breakpoints.iter().copied().filter(|&p| p > a && p < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.extend(inner);
    edges.push(b);
    edges.dedup();

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut total_error = T::zero();
    let mut total_value = T::zero();
    for w in edges.windows(2) {
        let r = gauss_kronrod(&mut f, w[0], w[1]);
        total_error = total_error + r.error;
        total_value = total_value + r.value;
        heap.push(Pending { error: r.error, id: next_id, cell: (w[0], w[1]), value: r.value });
        next_id += 1;
    }
    let floor = T::epsilon() * T::lit(50.0);
    while total_error > tol && total_error > floor * total_value.abs() {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureFailure {
                estimate: total_error.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
        let worst = heap.pop().expect("non-empty");
        let (lo, hi) = worst.cell;
        let mid = (lo + hi) * T::lit(0.5);
        if !(mid > lo && mid < hi) {
            return Err(Error::QuadratureFailure {
                estimate: total_error.to_f64_lossy(),
                tolerance: tol.to_f64_lossy(),
            });
        }
        total_error = total_error - worst.error;
        total_value = total_value - worst.value;
        for (l, h) in [(lo, mid), (mid, hi)] {
            let r = gauss_kronrod(&mut f, l, h);
            total_error = total_error + r.error;
            total_value = total_value + r.value;
            heap.push(Pending { error: r.error, id: next_id, cell: (l, h), value: r.value });
            next_id += 1;
        }
        // Guard against cancellation drift in the running totals.
        if total_error < T::zero() {
            total_error = heap.iter().map(|p| p.error).sum();
        }
    }
    Ok(ordered_total(heap))
}

/// `int_{R^d} f(|y|) dy = d v_d int_0^{r_max} r^{d-1} f(r) dr` for `f` vanishing beyond `r_max`.
pub fn radial_integral<T: Scalar, F: Fn(T) -> T>(
    f: F,
    d: usize,
    r_max: T,
    breakpoints: &[T],
    tol: T,
) -> Result<Integral<T>> {
    let vd = unit_ball_volume::<T>(d)?;
    let surface = T::from_usize_lossy(d) * vd;
    if !(r_max >= T::zero()) || !r_max.is_finite() {
        return invalid_arg(format!("radial cutoff must be finite and non-negative, got {r_max}"));
    }
    let powd = (d - 1) as i32;
    let r = integrate_1d(|r: T| r.powi(powd) * f(r), T::zero(), r_max, breakpoints, tol / surface)?;
    Ok(Integral { value: r.value * surface, error: r.error * surface })
}

/// Supplies the jump locations of an integrand along one axis.
///
/// Nested integration calls this for axis `axis` with the coordinates of the
/// outer axes (`axis + 1 ..`) already fixed in `outer`.
pub trait AxisBreaks<T>: Sync {
    fn breaks(&self, axis: usize, outer: &[T], lower: &[T], upper: &[T], out: &mut Vec<T>);
}

/// No declared discontinuities; the 1D adaptivity has to find them.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoBreaks;

impl<T> AxisBreaks<T> for NoBreaks {
    fn breaks(&self, _: usize, _: &[T], _: &[T], _: &[T], _: &mut Vec<T>) {}
}

/// Integrand jumps across the spheres `|x - center| = radius`.
///
/// On the innermost axis the crossings are exact; on outer axes the slice
/// tangencies and the points where a slice crosses a box edge are declared,
/// which are the places where the partial integral loses smoothness.
#[derive(Debug, Clone, Default)]
pub struct SphereBreaks<T> {
    pub spheres: Vec<(Vec<T>, T)>,
}

impl<T: Scalar> SphereBreaks<T> {
    pub fn new() -> Self {
        Self { spheres: Vec::new() }
    }

    pub fn push(&mut self, center: &[T], radius: T) {
        if radius > T::zero() && radius.is_finite() {
            self.spheres.push((center.to_vec(), radius));
        }
    }
}

impl<T: Scalar> AxisBreaks<T> for SphereBreaks<T> {
    fn breaks(&self, axis: usize, outer: &[T], lower: &[T], upper: &[T], out: &mut Vec<T>) {
        for (c, r) in &self.spheres {
            let mut rho2 = *r * *r;
            for (m, &xm) in outer.iter().enumerate() {
                let dm = xm - c[axis + 1 + m];
                rho2 = rho2 - dm * dm;
            }
            if rho2 < T::zero() {
                continue;
            }
            // Every way of pinning a subset of the inner axes to a box edge.
            let combos = 3usize.pow(axis as u32);
            for code in 0..combos {
                let mut rest = rho2;
                let mut k = code;
                for m in 0..axis {
                    let choice = k % 3;
                    k /= 3;
                    let e = match choice {
                        0 => continue,
                        1 => lower[m],
                        _ => upper[m],
                    };
                    rest = rest - (e - c[m]) * (e - c[m]);
                }
                if rest >= T::zero() {
                    let s = rest.sqrt();
                    out.push(c[axis] - s);
                    out.push(c[axis] + s);
                }
            }
        }
    }
}

fn nested<T: Scalar, F: Fn(&[T]) -> T, B: AxisBreaks<T>>(
    f: &F,
    breaks: &B,
    axis: usize,
    point: &[T],
    lower: &[T],
    upper: &[T],
    tol: T,
) -> Result<Integral<T>> {
    let (lo, hi) = (lower[axis], upper[axis]);
    let mut cuts = Vec::new();
    breaks.breaks(axis, &point[axis + 1..], lower, upper, &mut cuts);
    if axis == 0 {
        let mut x = point.to_vec();
        return integrate_1d(
            |t| {
                x[0] = t;
                f(&x)
            },
            lo,
            hi,
            &cuts,
            tol,
        );
    }
    let width = hi - lo;
    let inner_tol = tol * T::lit(0.5) / width;
    let failure: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let worst_inner = std::cell::Cell::new(T::zero());
    let mut x = point.to_vec();
    let outer = integrate_1d(
        |t| {
            x[axis] = t;
            match nested(f, breaks, axis - 1, &x, lower, upper, inner_tol) {
                Ok(r) => {
                    worst_inner.set(worst_inner.get().max(r.error));
                    r.value
                }
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    T::zero()
                }
            }
        },
        lo,
        hi,
        &cuts,
        tol * T::lit(0.5),
    )?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(Integral { value: outer.value, error: outer.error + width * worst_inner.get() })
}

/// `int_box f` over `[lower, upper]` by nested adaptive Gauss-Kronrod,
/// splitting each axis at the jumps reported by `breaks`.
pub fn box_integral<T: Scalar, F: Fn(&[T]) -> T, B: AxisBreaks<T>>(
    f: F,
    lower: &[T],
    upper: &[T],
    breaks: &B,
    tol: T,
) -> Result<Integral<T>> {
    let d = lower.len();
    if d == 0 || d != upper.len() {
        return invalid_arg("box corners must have equal, positive dimension");
    }
    if d > MAX_CUBATURE_DIMENSION {
        return Err(Error::Unsupported(format!(
            "cubature in dimension {d} exceeds the supported maximum {MAX_CUBATURE_DIMENSION}"
        )));
    }
    if !(tol > T::zero()) {
        return invalid_arg("tolerance must be positive");
    }
    if lower.iter().zip(upper).any(|(&l, &u)| !(u >= l) || !l.is_finite() || !u.is_finite()) {
        return invalid_arg("box must have finite corners with upper >= lower");
    }
    if lower.iter().zip(upper).any(|(&l, &u)| u == l) {
        return Ok(Integral::exact(T::zero()));
    }
    let point = lower.to_vec();
    nested(&f, breaks, d - 1, &point, lower, upper, tol)
}

/// `int_cube f`, discontinuities located by adaptive subdivision alone.
pub fn cube_integral<T: Scalar, F: Fn(&[T]) -> T>(f: F, cube: &Cube<T>, tol: T) -> Result<Integral<T>> {
    box_integral(f, &cube.lower(), &cube.upper(), &NoBreaks, tol)
}

/// `int_cube f` for an integrand whose jumps lie on the given spheres.
pub fn cube_integral_with_breaks<T: Scalar, F: Fn(&[T]) -> T>(
    f: F,
    cube: &Cube<T>,
    breaks: &SphereBreaks<T>,
    tol: T,
) -> Result<Integral<T>> {
    box_integral(f, &cube.lower(), &cube.upper(), breaks, tol)
}
