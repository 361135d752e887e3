//! Symmetric 2×2 tensors used for conductivities and effective coefficients.

use serde::{Deserialize, Serialize};

/// A symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// Effective (homogenized) conductivity. Same storage as [`SymTensor`]; the
/// name marks values expected to be symmetric positive definite.
pub type EffectiveTensor = SymTensor;

impl SymTensor {
    pub const IDENTITY: SymTensor = SymTensor { xx: 1.0, xy: 0.0, yy: 1.0 };
    pub const ZERO: SymTensor = SymTensor { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub const fn isotropic(c: f64) -> Self {
        Self { xx: c, xy: 0.0, yy: c }
    }

    /// Symmetric part of a general 2×2 matrix given row-major.
    pub fn symmetrize(m: [[f64; 2]; 2]) -> Self {
        Self { xx: m[0][0], xy: 0.5 * (m[0][1] + m[1][0]), yy: m[1][1] }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// `u · A v`.
    pub fn form(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        let av = self.apply(v);
        u[0] * av[0] + u[1] * av[1]
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        [mean - r, mean + r]
    }

    /// Unit eigenvector for the larger eigenvalue.
    fn major_axis(&self) -> [f64; 2] {
        let theta = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        [theta.cos(), theta.sin()]
    }

    pub fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy).sqrt()
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        let [lo, hi] = self.eigenvalues();
        lo.abs().max(hi.abs())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { xx: c * self.xx, xy: c * self.xy, yy: c * self.yy }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { xx: self.xx + o.xx, xy: self.xy + o.xy, yy: self.yy + o.yy }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { xx: self.xx - o.xx, xy: self.xy - o.xy, yy: self.yy - o.yy }
    }

    /// `Rᵀ A R` for the 2×2 matrix `R` (row-major).
    pub fn congruence(&self, r: [[f64; 2]; 2]) -> Self {
        // (Rᵀ A R)_ij = Σ_kl R_ki A_kl R_lj
        let a = [[self.xx, self.xy], [self.xy, self.yy]];
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        s += r[k][i] * a[k][l] * r[l][j];
                    }
                }
                *cell = s;
            }
        }
        Self::symmetrize(out)
    }

    /// Projects onto `{A : eig(A) ⊂ [floor, ∞)}` by clamping eigenvalues.
    pub fn clamp_eigenvalues(&self, floor: f64) -> Self {
        let [lo, hi] = self.eigenvalues();
        if lo >= floor {
            return *self;
        }
        let [c, s] = self.major_axis();
        let hi = hi.max(floor);
        let lo = lo.max(floor);
        // A = hi·v vᵀ + lo·w wᵀ, v = (c, s), w = (-s, c)
        Self {
            xx: hi * c * c + lo * s * s,
            xy: (hi - lo) * c * s,
            yy: hi * s * s + lo * c * c,
        }
    }

    /// Entries as the row `(xx, xy, yy)`.
    pub fn entries(&self) -> [f64; 3] {
        [self.xx, self.xy, self.yy]
    }
}

/// Rotation matrix `[[cos 2πm, sin 2πm], [−sin 2πm, cos 2πm]]`.
pub fn rotation(turns: f64) -> [[f64; 2]; 2] {
    let (s, c) = (2.0 * std::f64::consts::PI * turns).sin_cos();
    [[c, s], [-s, c]]
}

/// Rotation by an angle in radians, same orientation as [`rotation`].
pub fn rotation_radians(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, s], [-s, c]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal() {
        let t = SymTensor::diag(3.0, 1.0);
        assert_eq!(t.eigenvalues(), [1.0, 3.0]);
    }

    #[test]
    fn congruence_by_quarter_turn_swaps_axes() {
        let t = SymTensor::diag(2.0, 5.0).congruence(rotation(0.25));
        assert!((t.xx - 5.0).abs() < 1e-14);
        assert!((t.yy - 2.0).abs() < 1e-14);
        assert!(t.xy.abs() < 1e-14);
    }

    #[test]
    fn clamp_keeps_eigenvectors() {
        let t = SymTensor::new(1.0, 2.0, 1.0); // eigenvalues -1, 3
        let c = t.clamp_eigenvalues(0.5);
        let [lo, hi] = c.eigenvalues();
        assert!((lo - 0.5).abs() < 1e-12);
        assert!((hi - 3.0).abs() < 1e-12);
        let v = c.apply([1.0, 1.0]);
        assert!((v[0] - 3.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12);
    }
}
