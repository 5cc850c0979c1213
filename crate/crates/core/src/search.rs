/// Maximizer of a concave function on `[lo, hi]` given its derivative, by
/// bisection to interval width `tol`. Boundary points are returned when the
/// derivative does not change sign.
pub(crate) fn maximize_concave(dphi: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    if !(dphi(lo) > 0.0) {
        return lo;
    }
    if dphi(hi) >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if dphi(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_and_boundary_maxima() {
        let x = maximize_concave(|t| 2.0 / (1.0 + 2.0 * t) - 2.0 / (3.0 - 2.0 * t), 0.0, 1.0, 1e-12);
        assert!((x - 0.5).abs() < 1e-11);
        assert_eq!(maximize_concave(|_| -1.0, 0.0, 1.0, 1e-12), 0.0);
        assert_eq!(maximize_concave(|_| 1.0, 0.0, 1.0, 1e-12), 1.0);
    }
}
