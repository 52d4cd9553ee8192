//! Small quadrature helpers shared by the kernel and coarse-graining code.

// 5-point Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree <= 9.
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite Gauss-Legendre quadrature of `f` over `[a, b]` with `panels` panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            s += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * s;
    }
    total
}

/// Integrates over `[a, b]` splitting at the given interior break points.
pub fn piecewise_gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    pts.windows(2).map(|w| gauss_legendre(&f, w[0], w[1], panels)).sum()
}

/// Trapezoid weights for `n` nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n == 1 {
        w[0] = 0.0;
    } else if n > 1 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_degree_nine() {
        let v = gauss_legendre(|x| x.powi(9) + x.powi(8), -1.0, 1.0, 1);
        assert!((v - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn breaks_handle_kinks() {
        let v = piecewise_gauss_legendre(|x: f64| x.abs(), -1.0, 2.0, &[0.0], 1);
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let w = trapezoid_weights(11, 0.1);
        let s: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * 0.1)).sum();
        assert!((s - 0.5).abs() < 1e-14);
    }
}
