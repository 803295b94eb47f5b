//! secp128r1 group law in Jacobian coordinates.

use super::field::{Modulus, ModulusParams, Residue};

/// SEC 2 secp128r1 domain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurveParams {
    pub p: u128,
    pub a: u128,
    pub b: u128,
    pub gx: u128,
    pub gy: u128,
    pub n: u128,
    pub h: u128,
}

pub const SECP128R1: CurveParams = CurveParams {
    p: 0xFFFF_FFFD_FFFF_FFFF_FFFF_FFFF_FFFF_FFFF,
    a: 0xFFFF_FFFD_FFFF_FFFF_FFFF_FFFF_FFFF_FFFC,
    b: 0xE875_79C1_1079_F43D_D824_993C_2CEE_5ED3,
    gx: 0x161F_F752_8B89_9B2D_0C28_607C_A52C_5B86,
    gy: 0xCF5A_C839_5BAF_EB13_C02D_A292_DDED_7A83,
    n: 0xFFFF_FFFE_0000_0000_75A3_0D1B_9038_A115,
    h: 1,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldP;
impl ModulusParams for FieldP {
    const MODULUS: Modulus = Modulus::new(SECP128R1.p);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderN;
impl ModulusParams for OrderN {
    const MODULUS: Modulus = Modulus::new(SECP128R1.n);
}

/// Base field element.
pub type Fe = Residue<FieldP>;
/// Scalar modulo the group order.
pub type Scalar = Residue<OrderN>;

/// Finite affine point (integers in `[0, p)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AffinePoint {
    pub x: u128,
    pub y: u128,
}

impl AffinePoint {
    pub fn generator() -> Self {
        AffinePoint {
            x: SECP128R1.gx,
            y: SECP128R1.gy,
        }
    }

    pub fn is_on_curve(&self) -> bool {
        if self.x >= SECP128R1.p || self.y >= SECP128R1.p {
            return false;
        }
        let x = Fe::new(self.x);
        let y = Fe::new(self.y);
        y.square() == x.square() * x + Fe::new(SECP128R1.a) * x + Fe::new(SECP128R1.b)
    }

    /// Uncompressed SEC1 encoding `04 || X || Y`.
    pub fn to_sec1(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[0] = 0x04;
        out[1..17].copy_from_slice(&self.x.to_be_bytes());
        out[17..].copy_from_slice(&self.y.to_be_bytes());
        out
    }

    /// Parses an uncompressed encoding; the on-curve check is the caller's.
    pub fn from_sec1(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 33 || bytes[0] != 0x04 {
            return None;
        }
        Some(AffinePoint {
            x: u128::from_be_bytes(bytes[1..17].try_into().ok()?),
            y: u128::from_be_bytes(bytes[17..].try_into().ok()?),
        })
    }
}

/// Jacobian point (X/Z^2, Y/Z^3); Z = 0 is the point at infinity.
#[derive(Debug, Clone, Copy)]
pub struct Point {
    x: Fe,
    y: Fe,
    z: Fe,
}

impl From<AffinePoint> for Point {
    fn from(p: AffinePoint) -> Self {
        Point {
            x: Fe::new(p.x),
            y: Fe::new(p.y),
            z: Fe::one(),
        }
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.to_affine() == other.to_affine()
    }
}

impl Point {
    pub fn infinity() -> Self {
        Point {
            x: Fe::one(),
            y: Fe::one(),
            z: Fe::zero(),
        }
    }

    pub fn generator() -> Self {
        AffinePoint::generator().into()
    }

    pub fn is_infinity(&self) -> bool {
        self.z.is_zero()
    }

    pub fn to_affine(&self) -> Option<AffinePoint> {
        let zinv = self.z.invert()?;
        let zinv2 = zinv.square();
        Some(AffinePoint {
            x: (self.x * zinv2).to_u128(),
            y: (self.y * zinv2 * zinv).to_u128(),
        })
    }

    /// Doubling specialised to a = -3.
    pub fn double(&self) -> Self {
        if self.is_infinity() || self.y.is_zero() {
            return Point::infinity();
        }
        let delta = self.z.square();
        let gamma = self.y.square();
        let beta = self.x * gamma;
        let t = (self.x - delta) * (self.x + delta);
        let alpha = t.double() + t;
        let beta4 = beta.double().double();
        let x3 = alpha.square() - beta4.double();
        let z3 = (self.y + self.z).square() - gamma - delta;
        let gamma2 = gamma.square();
        let y3 = alpha * (beta4 - x3) - gamma2.double().double().double();
        Point {
            x: x3,
            y: y3,
            z: z3,
        }
    }

    pub fn add(&self, other: &Point) -> Self {
        if self.is_infinity() {
            return *other;
        }
        if other.is_infinity() {
            return *self;
        }
        let z1z1 = self.z.square();
        let z2z2 = other.z.square();
        let u1 = self.x * z2z2;
        let u2 = other.x * z1z1;
        let s1 = self.y * other.z * z2z2;
        let s2 = other.y * self.z * z1z1;
        let h = u2 - u1;
        let r = (s2 - s1).double();
        if h.is_zero() {
            return if r.is_zero() {
                self.double()
            } else {
                Point::infinity()
            };
        }
        let i = h.double().square();
        let j = h * i;
        let v = u1 * i;
        let x3 = r.square() - j - v.double();
        let y3 = r * (v - x3) - (s1 * j).double();
        let z3 = ((self.z + other.z).square() - z1z1 - z2z2) * h;
        Point {
            x: x3,
            y: y3,
            z: z3,
        }
    }

    pub fn negate(&self) -> Self {
        Point {
            x: self.x,
            y: -self.y,
            z: self.z,
        }
    }

    /// Left-to-right double-and-add. Not constant time.
    pub fn mul(&self, k: u128) -> Self {
        let mut acc = Point::infinity();
        if k == 0 {
            return acc;
        }
        for i in (0..128 - k.leading_zeros()).rev() {
            acc = acc.double();
            if (k >> i) & 1 == 1 {
                acc = acc.add(self);
            }
        }
        acc
    }

    /// u1*G + u2*Q with a shared doubling chain.
    pub fn double_mul(u1: u128, u2: u128, q: &Point) -> Self {
        let g = Point::generator();
        let gq = g.add(q);
        let mut acc = Point::infinity();
        let bits = 128 - (u1 | u2).leading_zeros();
        for i in (0..bits).rev() {
            acc = acc.double();
            match ((u1 >> i) & 1, (u2 >> i) & 1) {
                (1, 1) => acc = acc.add(&gq),
                (1, 0) => acc = acc.add(&g),
                (0, 1) => acc = acc.add(q),
                _ => {}
            }
        }
        acc
    }
}
