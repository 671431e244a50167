/// Orthonormal probabilists' Hermite polynomial `phi_n(x)`, so that
/// `E[phi_m(xi) phi_n(xi)] = delta_mn` for a standard normal `xi`.
pub fn hermite(n: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = x;
    for k in 1..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// `phi_0(x), ..., phi_max(x)` in one pass.
pub fn hermite_table(max: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if max == 0 {
        return;
    }
    out[1] = x;
    for k in 1..max {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpc::quadrature::gauss_hermite_1d;

    #[test]
    fn low_orders() {
        for x in [-2.0, -0.3, 0.0, 1.7] {
            assert_eq!(hermite(0, x), 1.0);
            assert_eq!(hermite(1, x), x);
            let h2 = (x * x - 1.0) / 2f64.sqrt();
            assert!((hermite(2, x) - h2).abs() < 1e-15);
            let h3 = (x * x * x - 3.0 * x) / 6f64.sqrt();
            assert!((hermite(3, x) - h3).abs() < 1e-14);
        }
        assert_eq!(hermite(2, 1.0), 0.0);
    }

    #[test]
    fn table_matches_pointwise() {
        let mut t = [0.0; 8];
        hermite_table(7, 0.83, &mut t);
        for (n, v) in t.iter().enumerate() {
            assert!((v - hermite(n, 0.83)).abs() < 1e-14);
        }
    }

    #[test]
    fn orthonormal_under_ten_point_rule() {
        let (nodes, weights) = gauss_hermite_1d(10);
        for m in 0..=5 {
            for n in 0..=5 {
                let e: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(x, w)| w * hermite(m, *x) * hermite(n, *x))
                    .sum();
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!((e - expect).abs() < 1e-10, "({m},{n}) -> {e}");
            }
        }
    }
}
