//! Great-circle geometry and dynamic time warping.

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters between two (lng, lat) pairs in degrees.
pub fn haversine(g1: (f64, f64), g2: (f64, f64)) -> f64 {
    let (lng1, lat1) = (g1.0.to_radians(), g1.1.to_radians());
    let (lng2, lat2) = (g2.0.to_radians(), g2.1.to_radians());
    let dlat = lat2 - lat1;
    let dlng = lng2 - lng1;
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Initial bearing from g1 to g2, radians clockwise from north in [0, 2pi).
pub fn bearing(g1: (f64, f64), g2: (f64, f64)) -> f64 {
    let (lng1, lat1) = (g1.0.to_radians(), g1.1.to_radians());
    let (lng2, lat2) = (g2.0.to_radians(), g2.1.to_radians());
    let dlng = lng2 - lng1;
    let y = dlng.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlng.cos();
    let b = y.atan2(x);
    if b < 0.0 {
        b + std::f64::consts::TAU
    } else {
        b
    }
}

/// Perpendicular (cross-track) deviation of `p` from the great circle
/// through `a` and `b`, in meters. Falls back to point distance when the
/// base segment degenerates.
pub fn cross_track_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let base = haversine(a, b);
    if base < 1e-9 {
        return haversine(a, p);
    }
    let d13 = haversine(a, p) / EARTH_RADIUS_M;
    let t13 = bearing(a, p);
    let t12 = bearing(a, b);
    (d13.sin() * (t13 - t12).sin()).asin().abs() * EARTH_RADIUS_M
}

/// Dynamic time warping with the haversine point metric. Both sequences
/// must be non-empty.
pub fn dtw_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "dtw on empty sequence");
    let (la, lb) = (a.len(), b.len());
    let mut dp = vec![f64::INFINITY; (la + 1) * (lb + 1)];
    let w = lb + 1;
    dp[0] = 0.0;
    for i in 1..=la {
        for j in 1..=lb {
            let cost = haversine(a[i - 1], b[j - 1]);
            let best = dp[(i - 1) * w + j - 1]
                .min(dp[(i - 1) * w + j])
                .min(dp[i * w + j - 1]);
            dp[i * w + j] = cost + best;
        }
    }
    dp[la * w + lb]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haversine_zero_for_same_point() {
        assert_eq!(haversine((104.1, 30.6), (104.1, 30.6)), 0.0);
    }

    #[test]
    fn haversine_one_degree_latitude() {
        // independent oracle: one degree of latitude is pi*R/180 meters
        let oracle = std::f64::consts::PI * EARTH_RADIUS_M / 180.0;
        let d = haversine((0.0, 0.0), (0.0, 1.0));
        assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
    }

    #[test]
    fn haversine_symmetric_on_random_pairs() {
        let mut s = 0xC0FFEEu64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 33) as f64 / (1u64 << 31) as f64
        };
        for _ in 0..100 {
            let a = (next() * 360.0 - 180.0, next() * 170.0 - 85.0);
            let b = (next() * 360.0 - 180.0, next() * 170.0 - 85.0);
            let d1 = haversine(a, b);
            let d2 = haversine(b, a);
            assert!((d1 - d2).abs() < 1e-9);
            assert!(d1 >= 0.0);
        }
    }

    #[test]
    fn dtw_identical_sequences_is_zero() {
        let a = vec![(104.0, 30.6), (104.01, 30.61), (104.02, 30.62)];
        assert_eq!(dtw_distance(&a, &a), 0.0);
    }

    #[test]
    fn dtw_singletons_reduce_to_haversine() {
        let a = [(104.0, 30.6)];
        let b = [(104.02, 30.64)];
        assert_eq!(dtw_distance(&a, &b), haversine(a[0], b[0]));
    }

    /// Exhaustive enumeration over all monotone alignments (paths of a
    /// 3x4 grid), the independent oracle for the DP recurrence.
    #[test]
    fn dtw_matches_exhaustive_alignment_enumeration() {
        let a = vec![(104.0, 30.60), (104.005, 30.612), (104.013, 30.607)];
        let b = vec![
            (104.001, 30.601),
            (104.004, 30.609),
            (104.009, 30.613),
            (104.014, 30.605),
        ];

        fn enumerate(
            a: &[(f64, f64)],
            b: &[(f64, f64)],
            i: usize,
            j: usize,
            acc: f64,
            best: &mut f64,
        ) {
            let acc = acc + haversine(a[i], b[j]);
            if i == a.len() - 1 && j == b.len() - 1 {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() {
                enumerate(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                enumerate(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                enumerate(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        enumerate(&a, &b, 0, 0, 0.0, &mut best);
        let dp = dtw_distance(&a, &b);
        assert!((dp - best).abs() < 1e-9, "dp {dp} vs enumerated {best}");
    }

    #[test]
    fn dtw_symmetric_for_equal_length() {
        let a = vec![(104.0, 30.6), (104.01, 30.61), (104.02, 30.6)];
        let b = vec![(104.0, 30.59), (104.015, 30.62), (104.03, 30.61)];
        assert!((dtw_distance(&a, &b) - dtw_distance(&b, &a)).abs() < 1e-9);
    }
}
