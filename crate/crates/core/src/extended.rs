//! Non-negative extended reals, `[0, +inf]`.

use std::fmt;
use std::ops::Add;

use crate::Scalar;

/// A value in `[0, +inf]` with an explicit infinite variant.
///
/// Used for pair energies (the hard core is `Infinite`) and for activity
/// bounds (`Infinite` when no interaction constrains the activity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Extended<T> {
    pub fn zero() -> Self {
        Extended::Finite(T::zero())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Extended::Infinite)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Extended::Finite(v) if v.is_zero())
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    /// Maps `Infinite` to the float infinity of `T`.
    pub fn to_scalar(self) -> T {
        match self {
            Extended::Finite(v) => v,
            Extended::Infinite => T::infinity(),
        }
    }

    /// Boltzmann weight `exp(-beta * self)`, exactly zero on the hard core.
    pub fn boltzmann(self, beta: T) -> T {
        match self {
            Extended::Finite(v) if v.is_zero() => T::one(),
            Extended::Finite(v) => (-beta * v).exp(),
            Extended::Infinite => T::zero(),
        }
    }

    /// Mayer value `1 - exp(-beta * self)`: exactly 1 on the hard core and 0 where the energy vanishes.
    pub fn mayer(self, beta: T) -> T {
        match self {
            Extended::Finite(v) if v.is_zero() => T::zero(),
            Extended::Finite(v) => -(-beta * v).exp_m1(),
            Extended::Infinite => T::one(),
        }
    }

    pub fn reciprocal_of(value: T) -> Self {
        if value.is_zero() {
            Extended::Infinite
        } else {
            Extended::Finite(value.recip())
        }
    }
}

impl<T: Scalar> Add for Extended<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::Infinite,
        }
    }
}

impl<T: Scalar> PartialOrd for Extended<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering;
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => a.partial_cmp(b),
            (Extended::Finite(_), Extended::Infinite) => Some(Ordering::Less),
            (Extended::Infinite, Extended::Finite(_)) => Some(Ordering::Greater),
            (Extended::Infinite, Extended::Infinite) => Some(Ordering::Equal),
        }
    }
}

/// Formats finite values with `Display` of the scalar and the infinite variant as `+inf`.
impl<T: Scalar> fmt::Display for Extended<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::Infinite => f.write_str("+inf"),
        }
    }
}
