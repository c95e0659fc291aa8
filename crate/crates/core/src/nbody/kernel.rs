//! Pair force kernels and the short/long-range force split.
//!
//! The split uses the S2 particle shape (a sphere of diameter `r_cut` whose
//! density falls linearly to zero at its edge). The long-range force is the
//! force between two such shapes, which equals the Newtonian force once the
//! shapes stop overlapping, so the short-range remainder vanishes exactly
//! beyond `r_cut`. The mesh solve applies the matching filter `S(k)^2`.

use super::particles::Vec3;

/// Fraction of the Newtonian force carried by the short-range part at
/// `xi = 2 r / r_cut`.
pub fn s2_short_range_factor(xi: f64) -> f64 {
    if xi <= 0.0 {
        1.0
    } else if xi <= 1.0 {
        let x2 = xi * xi;
        let x3 = x2 * xi;
        1.0 + x3 * (-8.0 / 5.0 + x2 * (8.0 / 5.0 + xi * (-0.5 + xi * (-12.0 / 35.0 + xi * 3.0 / 20.0))))
    } else if xi < 2.0 {
        let x2 = xi * xi;
        32.0 / 35.0
            + x2 * (8.0 / 5.0
                + xi * (-32.0 / 5.0
                    + xi * (6.0 + xi * (-8.0 / 5.0 + xi * (-0.5 + xi * (12.0 / 35.0 - xi / 20.0))))))
    } else {
        0.0
    }
}

/// Fourier transform of the unit-mass S2 shape of diameter `a` at wavenumber `k`.
pub fn s2_shape_transform(k: f64, a: f64) -> f64 {
    let u = 0.5 * k * a;
    if u < 0.1 {
        // series avoids cancellation in the closed form
        let u2 = u * u;
        1.0 + u2 * (-1.0 / 15.0 + u2 * (1.0 / 560.0 - u2 / 37800.0))
    } else {
        12.0 / u.powi(4) * (2.0 - 2.0 * u.cos() - u * u.sin())
    }
}

/// Acceleration kernel between two point masses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairKernel {
    /// Plummer-softened Newtonian gravity.
    Newton { softening: f64 },
    /// Short-range part of the split force; zero beyond `r_cut`.
    ShortRange { softening: f64, r_cut: f64 },
}

impl PairKernel {
    pub fn range(&self) -> Option<f64> {
        match *self {
            PairKernel::Newton { .. } => None,
            PairKernel::ShortRange { r_cut, .. } => Some(r_cut),
        }
    }

    /// Factor `f` such that the acceleration on a body at separation `d`
    /// (source minus target) from mass `m` is `m * f * d`.
    #[inline]
    pub fn factor(&self, r2: f64) -> f64 {
        match *self {
            PairKernel::Newton { softening } => {
                let s2 = r2 + softening * softening;
                if s2 == 0.0 {
                    return 0.0;
                }
                1.0 / (s2 * s2.sqrt())
            }
            PairKernel::ShortRange { softening, r_cut } => {
                if r2 >= r_cut * r_cut {
                    return 0.0;
                }
                let s2 = r2 + softening * softening;
                if s2 == 0.0 {
                    return 0.0;
                }
                s2_short_range_factor(2.0 * r2.sqrt() / r_cut) / (s2 * s2.sqrt())
            }
        }
    }

    #[inline]
    pub fn accumulate(&self, acc: &mut Vec3, d: Vec3, mass: f64) {
        let f = mass * self.factor(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        acc[0] += f * d[0];
        acc[1] += f * d[1];
        acc[2] += f * d[2];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_range_factor_endpoints_and_continuity() {
        assert_eq!(s2_short_range_factor(0.0), 1.0);
        assert!(s2_short_range_factor(2.0).abs() < 1e-12);
        assert_eq!(s2_short_range_factor(2.5), 0.0);
        let below = s2_short_range_factor(1.0 - 1e-12);
        let above = s2_short_range_factor(1.0 + 1e-12);
        assert!((below - above).abs() < 1e-9);
        // monotone taper
        let mut prev = 1.0;
        for i in 1..=200 {
            let g = s2_short_range_factor(i as f64 * 0.01);
            assert!(g <= prev + 1e-15);
            prev = g;
        }
    }

    /// Long-range force between two S2 shapes, from the radial inverse
    /// transform of `S(k)^2 * 4 pi / k^2`, must equal `(1 - g) / r^2`.
    #[test]
    fn split_matches_shape_transform() {
        let a = 1.0;
        for &r in &[0.2, 0.5, 0.8, 1.3] {
            // F(r) = (2 / pi) * int_0^inf S(k)^2 [sin(kr)/(kr)^2 - cos(kr)/(kr)] k dk ... / r
            // written as d/dr of the potential; integrate with a fine trapezoid.
            let kmax = 400.0;
            let nk = 400_000;
            let dk = kmax / nk as f64;
            let mut sum = 0.0;
            for i in 1..=nk {
                let k = i as f64 * dk;
                let s = s2_shape_transform(k, a);
                let kr = k * r;
                let j1 = kr.sin() / (kr * kr) - kr.cos() / kr;
                let w = if i == nk { 0.5 } else { 1.0 };
                sum += w * s * s * j1 * k * dk;
            }
            let force = 2.0 / std::f64::consts::PI * sum;
            let expected = (1.0 - s2_short_range_factor(2.0 * r / a)) / (r * r);
            assert!(
                (force - expected).abs() < 2e-3 * expected.max(0.1),
                "r={r}: {force} vs {expected}"
            );
        }
    }

    #[test]
    fn shape_transform_limit() {
        assert!((s2_shape_transform(1e-6, 1.0) - 1.0).abs() < 1e-12);
        // continuity across the switch from series to closed form at u = 0.1
        let below = s2_shape_transform(0.2 * (1.0 - 1e-9), 1.0);
        let above = s2_shape_transform(0.2 * (1.0 + 1e-9), 1.0);
        assert!((below - above).abs() < 1e-9);
    }

    #[test]
    fn newton_pair_unit_separation() {
        let k = PairKernel::Newton { softening: 0.0 };
        let mut acc = [0.0; 3];
        k.accumulate(&mut acc, [2.0, 0.0, 0.0], 1.0);
        assert!((acc[0] - 0.25).abs() < 1e-15);
        let k = PairKernel::ShortRange {
            softening: 0.0,
            r_cut: 1.0,
        };
        assert_eq!(k.factor(1.0), 0.0);
    }
}
