//! Independent reference implementations used by the test suites.
//!
//! Everything in here exists to cross-check a production code path from a
//! different route: double-double (~31 significant digits) arithmetic for
//! projection and schedule products, and a whole-frame brute-force support
//! enumeration for the rasterizer. Production code must never call into this
//! module.

/// Double-double arithmetic: an unevaluated sum hi + lo with |lo| <= ulp(hi)/2.
pub mod dd {
    #[derive(Clone, Copy, Debug)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let e = b - (s - a);
        Dd { hi: s, lo: e }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let e = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: e }
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        let e = a.mul_add(b, -p);
        Dd { hi: p, lo: e }
    }

    impl Dd {
        pub fn from_f64(x: f64) -> Dd {
            Dd { hi: x, lo: 0.0 }
        }

        pub fn to_f64(self) -> f64 {
            self.hi + self.lo
        }

        pub fn add(self, other: Dd) -> Dd {
            let s = two_sum(self.hi, other.hi);
            let e = s.lo + self.lo + other.lo;
            quick_two_sum(s.hi, e)
        }

        pub fn sub(self, other: Dd) -> Dd {
            self.add(Dd {
                hi: -other.hi,
                lo: -other.lo,
            })
        }

        pub fn mul(self, other: Dd) -> Dd {
            let p = two_prod(self.hi, other.hi);
            let e = p.lo + self.hi * other.lo + self.lo * other.hi;
            quick_two_sum(p.hi, e)
        }

        pub fn mul_f64(self, other: f64) -> Dd {
            self.mul(Dd::from_f64(other))
        }

        pub fn div(self, other: Dd) -> Dd {
            let q0 = self.hi / other.hi;
            let r = self.sub(other.mul_f64(q0));
            let q1 = r.hi / other.hi;
            let r2 = r.sub(other.mul_f64(q1));
            let q2 = r2.hi / other.hi;
            quick_two_sum(q0, q1).add(Dd::from_f64(q2))
        }
    }

    /// Running product of factors at double-double precision.
    pub fn product_dd(factors: &[f64]) -> f64 {
        let mut acc = Dd::from_f64(1.0);
        for &f in factors {
            acc = acc.mul_f64(f);
        }
        acc.to_f64()
    }

    /// Full-precision pinhole projection: h = K * (R * p + B), (u, v) =
    /// (h0/h2, h1/h2). Returns None when the camera-space depth is <= 1e-6.
    pub fn project_point_dd(
        k: &[[f64; 3]; 3],
        r: &[[f64; 3]; 3],
        b: &[f64; 3],
        p: [f64; 3],
    ) -> Option<[f64; 2]> {
        let mut cam = [Dd::from_f64(0.0); 3];
        for i in 0..3 {
            let mut acc = Dd::from_f64(b[i]);
            for j in 0..3 {
                acc = acc.add(two_prod(r[i][j], p[j]));
            }
            cam[i] = acc;
        }
        if cam[2].to_f64() <= 1e-6 {
            return None;
        }
        let mut h = [Dd::from_f64(0.0); 3];
        for i in 0..3 {
            let mut acc = Dd::from_f64(0.0);
            for j in 0..3 {
                acc = acc.add(Dd::from_f64(k[i][j]).mul(cam[j]));
            }
            h[i] = acc;
        }
        Some([h[0].div(h[2]).to_f64(), h[1].div(h[2]).to_f64()])
    }

    /// Piecewise-linear evaluation of 2D keyframes at double-double precision.
    pub fn lerp_piecewise_dd(times: &[f64], pts: &[[f64; 2]], t: f64) -> [f64; 2] {
        assert!(times.len() >= 2 && times.len() == pts.len());
        assert!(t >= times[0] && t <= *times.last().unwrap());
        let mut i = 0;
        while i + 2 < times.len() && t > times[i + 1] {
            i += 1;
        }
        if t == times[i] {
            return pts[i];
        }
        if t == times[i + 1] {
            return pts[i + 1];
        }
        let w = Dd::from_f64(t)
            .sub(Dd::from_f64(times[i]))
            .div(Dd::from_f64(times[i + 1]).sub(Dd::from_f64(times[i])));
        let mut out = [0.0; 2];
        for c in 0..2 {
            let a = Dd::from_f64(pts[i][c]);
            let d = Dd::from_f64(pts[i + 1][c]).sub(a);
            out[c] = a.add(d.mul(w)).to_f64();
        }
        out
    }
}

/// Brute-force rasterization support oracle.
pub mod raster {
    use crate::geometry::TrajectoryImage;

    /// Subpixel quantization: must match the documented rasterizer contract
    /// (1/16 pixel grid), re-stated here independently.
    const Q: i64 = 16;

    fn quant(v: f64) -> i64 {
        (v * Q as f64).round() as i64
    }

    /// Exact capsule membership: is pixel center `p` within `r` (subpixel
    /// units, inclusive) of segment `a`-`b`?
    fn pixel_in_capsule(p: (i64, i64), a: (i64, i64), b: (i64, i64), r: i64) -> bool {
        let (apx, apy) = (p.0 - a.0, p.1 - a.1);
        let (abx, aby) = (b.0 - a.0, b.1 - a.1);
        let ap2 = (apx * apx + apy * apy) as i128;
        let l2 = (abx * abx + aby * aby) as i128;
        let r2 = (r * r) as i128;
        if l2 == 0 {
            return ap2 <= r2;
        }
        let s = (apx * abx + apy * aby) as i128;
        if s <= 0 {
            return ap2 <= r2;
        }
        if s >= l2 {
            let (bpx, bpy) = (p.0 - b.0, p.1 - b.1);
            return ((bpx * bpx + bpy * bpy) as i128) <= r2;
        }
        ap2 * l2 - s * s <= r2 * l2
    }

    /// Support of frame `frame_index` (1-based): every pixel center within
    /// line_width/2 of any capsule drawn through the visible points of
    /// {p_t, ..., p_T}, testing the whole frame exhaustively.
    pub fn frame_support_oracle(
        traj: &TrajectoryImage,
        frame_index: usize,
        height: usize,
        width: usize,
        line_width: u32,
    ) -> Vec<bool> {
        assert!(frame_index >= 1 && frame_index <= traj.len());
        let t0 = frame_index - 1;
        let n = traj.len();
        let r = line_width as i64 * Q / 2;
        let mut prims: Vec<((i64, i64), (i64, i64))> = Vec::new();
        for i in t0..n {
            if !traj.visible[i] {
                continue;
            }
            let a = (quant(traj.points[i][0]), quant(traj.points[i][1]));
            prims.push((a, a));
            if i + 1 < n && traj.visible[i + 1] {
                let b = (quant(traj.points[i + 1][0]), quant(traj.points[i + 1][1]));
                prims.push((a, b));
            }
        }
        let mut out = vec![false; height * width];
        for y in 0..height {
            for x in 0..width {
                let p = (x as i64 * Q, y as i64 * Q);
                if prims.iter().any(|&(a, b)| pixel_in_capsule(p, a, b, r)) {
                    out[y * width + x] = true;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::dd::{product_dd, Dd};

    #[test]
    fn dd_recovers_lost_precision() {
        // (1 + 2^-30)^2 = 1 + 2^-29 + 2^-60; the 2^-60 term is lost in f64.
        let x = 1.0 + (2.0f64).powi(-30);
        let d = Dd::from_f64(x).mul(Dd::from_f64(x));
        let exact_hi = 1.0 + (2.0f64).powi(-29) + (2.0f64).powi(-60);
        assert!((d.to_f64() - exact_hi).abs() < 1e-18);
        assert!(d.lo != 0.0);
    }

    #[test]
    fn dd_division_inverts_multiplication() {
        let a = Dd::from_f64(std::f64::consts::PI);
        let b = Dd::from_f64(std::f64::consts::E);
        let q = a.mul(b).div(b);
        assert!((q.to_f64() - std::f64::consts::PI).abs() < 1e-30);
    }

    #[test]
    fn product_matches_exact_small_case() {
        assert_eq!(product_dd(&[0.5, 0.5, 0.5]), 0.125);
    }
}
