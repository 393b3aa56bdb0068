//! Fixed-size 2×2 linear algebra for single-mode phase space.
//!
//! Everything in this crate lives in a two-dimensional (q, p) phase space, so
//! a general matrix library would only add overhead. [`Mat2`] is a general
//! 2×2 matrix, [`Sym2`] stores the three independent entries of a symmetric
//! matrix and [`Vec2`] is a phase-space vector.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub q: f64,
    pub p: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { q: 0.0, p: 0.0 };

    pub const fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.q * other.q + self.p * other.p
    }

    pub fn norm(self) -> f64 {
        self.q.hypot(self.p)
    }

    /// Rotation by +90°.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.p, self.q)
    }

    pub fn is_finite(self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.q + o.q, self.p + o.p)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.q += o.q;
        self.p += o.p;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.q - o.q, self.p - o.p)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.q, -self.p)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.q * s, self.p * s)
    }
}

/// General 2×2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn transpose(&self) -> Mat2 {
        let m = &self.0;
        Mat2::new(m[0][0], m[1][0], m[0][1], m[1][1])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2::new(m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det))
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        let m = &self.0;
        Vec2::new(m[0][0] * v.q + m[0][1] * v.p, m[1][0] * v.q + m[1][1] * v.p)
    }

    /// Symmetric part (M + Mᵀ)/2.
    pub fn symmetrize(&self) -> Sym2 {
        let m = &self.0;
        Sym2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]])
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        let (a, b) = (self.0, o.0);
        Mat2([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        let a = self.0;
        Mat2([[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]])
    }
}

impl Mul<Vec2> for Mat2 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        self.mul_vec(v)
    }
}

/// Symmetric 2×2 matrix stored as its three independent entries.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub qq: f64,
    pub qp: f64,
    pub pp: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { qq: 0.0, qp: 0.0, pp: 0.0 };
    pub const IDENTITY: Sym2 = Sym2 { qq: 1.0, qp: 0.0, pp: 1.0 };

    pub const fn new(qq: f64, qp: f64, pp: f64) -> Self {
        Self { qq, qp, pp }
    }

    pub fn diag(qq: f64, pp: f64) -> Self {
        Self::new(qq, 0.0, pp)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::new(s, 0.0, s)
    }

    pub fn to_mat(self) -> Mat2 {
        Mat2::new(self.qq, self.qp, self.qp, self.pp)
    }

    pub fn det(&self) -> f64 {
        self.qq * self.pp - self.qp * self.qp
    }

    pub fn trace(&self) -> f64 {
        self.qq + self.pp
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Sym2::new(self.pp / det, -self.qp / det, self.qq / det))
    }

    /// Eigenvalues `(min, max)`.
    ///
    /// The smaller eigenvalue is recovered as `det / max` so that strongly
    /// squeezed matrices keep full relative precision.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.qq + self.pp);
        let half_diff = 0.5 * (self.qq - self.pp);
        let radius = half_diff.hypot(self.qp);
        let max = mean + radius;
        let min = if max > 0.0 { self.det() / max } else { mean - radius };
        (min, max)
    }

    /// Quadratic form vᵀ S v.
    pub fn quad(&self, v: Vec2) -> f64 {
        self.qq * v.q * v.q + 2.0 * self.qp * v.q * v.p + self.pp * v.p * v.p
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.qq * v.q + self.qp * v.p, self.qp * v.q + self.pp * v.p)
    }

    /// R S Rᵀ for a general matrix R.
    pub fn congruence(&self, r: &Mat2) -> Sym2 {
        (*r * self.to_mat() * r.transpose()).symmetrize()
    }

    pub fn max_abs(&self) -> f64 {
        self.qq.abs().max(self.qp.abs()).max(self.pp.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.qq.is_finite() && self.qp.is_finite() && self.pp.is_finite()
    }
}

impl Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2::new(self.qq + o.qq, self.qp + o.qp, self.pp + o.pp)
    }
}

impl Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2::new(self.qq - o.qq, self.qp - o.qp, self.pp - o.pp)
    }
}

impl Mul<f64> for Sym2 {
    type Output = Sym2;
    fn mul(self, s: f64) -> Sym2 {
        Sym2::new(self.qq * s, self.qp * s, self.pp * s)
    }
}
