//! Montgomery arithmetic modulo an odd 128-bit prime, with R = 2^128.

use std::fmt;
use std::marker::PhantomData;
use std::ops::{Add, Mul, Neg, Sub};

/// Precomputed Montgomery constants for one modulus.
#[derive(Debug, Clone, Copy)]
pub struct Modulus {
    pub m: u128,
    /// -m^-1 mod 2^128
    m_neg_inv: u128,
    /// R mod m
    r1: u128,
    /// R^2 mod m
    r2: u128,
}

const fn add_mod(a: u128, b: u128, m: u128) -> u128 {
    let (s, carry) = a.overflowing_add(b);
    if carry || s >= m {
        s.wrapping_sub(m)
    } else {
        s
    }
}

/// Full 256-bit product as (low, high).
#[inline]
const fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let (a0, a1) = (a as u64 as u128, a >> 64);
    let (b0, b1) = (b as u64 as u128, b >> 64);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 as u64 as u128) + (p10 as u64 as u128);
    let lo = (p00 as u64 as u128) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (lo, hi)
}

impl Modulus {
    pub const fn new(m: u128) -> Self {
        assert!(m & 1 == 1, "modulus must be odd");
        let mut inv: u128 = 1;
        let mut i = 0;
        while i < 7 {
            inv = inv.wrapping_mul(2u128.wrapping_sub(m.wrapping_mul(inv)));
            i += 1;
        }
        let r1 = (u128::MAX % m + 1) % m;
        let mut r2 = r1;
        let mut i = 0;
        while i < 128 {
            r2 = add_mod(r2, r2, m);
            i += 1;
        }
        Modulus {
            m,
            m_neg_inv: inv.wrapping_neg(),
            r1,
            r2,
        }
    }

    /// Montgomery reduction of `hi:lo`; requires `hi < m`.
    #[inline]
    fn redc(&self, lo: u128, hi: u128) -> u128 {
        let q = lo.wrapping_mul(self.m_neg_inv);
        let (qm_lo, qm_hi) = mul_wide(q, self.m);
        let (_, c0) = lo.overflowing_add(qm_lo);
        let (t, c1) = hi.overflowing_add(qm_hi);
        let (t, c2) = t.overflowing_add(c0 as u128);
        if c1 || c2 || t >= self.m {
            t.wrapping_sub(self.m)
        } else {
            t
        }
    }

    #[inline]
    pub fn mont_mul(&self, a: u128, b: u128) -> u128 {
        let (lo, hi) = mul_wide(a, b);
        self.redc(lo, hi)
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        add_mod(a, b, self.m)
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        let (d, borrow) = a.overflowing_sub(b);
        if borrow {
            d.wrapping_add(self.m)
        } else {
            d
        }
    }

    pub fn to_mont(&self, x: u128) -> u128 {
        self.mont_mul(x % self.m, self.r2)
    }

    pub fn from_mont(&self, x: u128) -> u128 {
        self.redc(x, 0)
    }

    pub fn one(&self) -> u128 {
        self.r1
    }
}

/// Binds a residue type to its modulus.
pub trait ModulusParams: Copy + Eq + fmt::Debug + 'static {
    const MODULUS: Modulus;
}

/// Residue modulo `P::MODULUS`, stored in Montgomery form.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Residue<P: ModulusParams> {
    mont: u128,
    _p: PhantomData<P>,
}

impl<P: ModulusParams> fmt::Debug for Residue<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#034x}", self.to_u128())
    }
}

impl<P: ModulusParams> Residue<P> {
    pub const MODULUS: u128 = P::MODULUS.m;

    const fn raw(mont: u128) -> Self {
        Residue {
            mont,
            _p: PhantomData,
        }
    }

    pub fn zero() -> Self {
        Self::raw(0)
    }

    pub fn one() -> Self {
        Self::raw(P::MODULUS.one())
    }

    /// Reduces `x` modulo the modulus.
    pub fn new(x: u128) -> Self {
        Self::raw(P::MODULUS.to_mont(x))
    }

    pub fn to_u128(self) -> u128 {
        P::MODULUS.from_mont(self.mont)
    }

    pub fn to_be_bytes(self) -> [u8; 16] {
        self.to_u128().to_be_bytes()
    }

    pub fn is_zero(self) -> bool {
        self.mont == 0
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn double(self) -> Self {
        self + self
    }

    pub fn pow(self, mut e: u128) -> Self {
        let mut base = self;
        let mut acc = Self::one();
        while e != 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base.square();
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat; `None` for zero.
    pub fn invert(self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(self.pow(P::MODULUS.m - 2))
        }
    }
}

impl<P: ModulusParams> Add for Residue<P> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::raw(P::MODULUS.add(self.mont, rhs.mont))
    }
}

impl<P: ModulusParams> Sub for Residue<P> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::raw(P::MODULUS.sub(self.mont, rhs.mont))
    }
}

impl<P: ModulusParams> Neg for Residue<P> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::zero() - self
    }
}

impl<P: ModulusParams> Mul for Residue<P> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::raw(P::MODULUS.mont_mul(self.mont, rhs.mont))
    }
}
