//! Gauss–Legendre rules and the small adaptive integrators built on them.

use std::sync::OnceLock;

const MAX_ORDER: usize = 32;

/// Nodes and weights of the `order`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static RULES: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    assert!(
        (1..=MAX_ORDER).contains(&order),
        "Gauss order {order} outside 1..={MAX_ORDER}"
    );
    &RULES.get_or_init(|| (0..=MAX_ORDER).map(compute_rule).collect())[order]
}

fn compute_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    if order == 0 {
        return (Vec::new(), Vec::new());
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss rule on `[a, b]`.
pub fn gauss_1d(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(w)
        .map(|(&xi, &wi)| wi * f(mid + half * xi))
        .sum::<f64>()
        * half
}

/// Tensor Gauss rule on the rectangle `[a0, b0] x [a1, b1]`.
pub fn gauss_2d(
    f: &mut impl FnMut(f64, f64) -> f64,
    a: [f64; 2],
    b: [f64; 2],
    order: usize,
) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h0 = 0.5 * (b[0] - a[0]);
    let h1 = 0.5 * (b[1] - a[1]);
    let m0 = 0.5 * (a[0] + b[0]);
    let m1 = 0.5 * (a[1] + b[1]);
    let mut acc = 0.0;
    for (&xi, &wi) in x.iter().zip(w) {
        let mut row = 0.0;
        for (&yj, &wj) in x.iter().zip(w) {
            row += wj * f(m0 + h0 * xi, m1 + h1 * yj);
        }
        acc += wi * row;
    }
    acc * h0 * h1
}

/// Adaptive 2-D integration: a rectangle is split into four children until
/// the children agree with their parent to `rel_tol` (relative to the
/// children's sum, with `abs_floor` as absolute floor) or `depth` runs out.
pub fn adaptive_2d(
    f: &mut impl FnMut(f64, f64) -> f64,
    a: [f64; 2],
    b: [f64; 2],
    order: usize,
    rel_tol: f64,
    abs_floor: f64,
    depth: usize,
) -> f64 {
    let whole = gauss_2d(f, a, b, order);
    adaptive_2d_rec(f, a, b, whole, order, rel_tol, abs_floor, depth)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_2d_rec(
    f: &mut impl FnMut(f64, f64) -> f64,
    a: [f64; 2],
    b: [f64; 2],
    whole: f64,
    order: usize,
    rel_tol: f64,
    abs_floor: f64,
    depth: usize,
) -> f64 {
    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let quads = [
        ([a[0], a[1]], [m[0], m[1]]),
        ([m[0], a[1]], [b[0], m[1]]),
        ([a[0], m[1]], [m[0], b[1]]),
        ([m[0], m[1]], [b[0], b[1]]),
    ];
    let parts: Vec<f64> = quads
        .iter()
        .map(|&(lo, hi)| gauss_2d(f, lo, hi, order))
        .collect();
    let sum: f64 = parts.iter().sum();
    if depth == 0 || (sum - whole).abs() <= rel_tol * sum.abs() + abs_floor {
        return sum;
    }
    quads
        .iter()
        .zip(&parts)
        .map(|(&(lo, hi), &p)| {
            adaptive_2d_rec(f, lo, hi, p, order, rel_tol, abs_floor * 0.25, depth - 1)
        })
        .sum()
}

/// Integral over `[a, b]` of a function with an integrable endpoint
/// singularity at `a`, by geometric grading toward `a` (ratio 1/2).
pub fn graded_toward_left(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    order: usize,
    levels: usize,
) -> f64 {
    let len = b - a;
    let mut acc = 0.0;
    let mut hi = len;
    for _ in 0..levels {
        let lo = 0.5 * hi;
        acc += gauss_1d(f, a + lo, a + hi, order);
        hi = lo;
    }
    acc + gauss_1d(f, a, a + hi, order)
}

/// Mirror of [`graded_toward_left`] for a singularity at `b`.
pub fn graded_toward_right(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    order: usize,
    levels: usize,
) -> f64 {
    let len = b - a;
    let mut acc = 0.0;
    let mut hi = len;
    for _ in 0..levels {
        let lo = 0.5 * hi;
        acc += gauss_1d(f, b - hi, b - lo, order);
        hi = lo;
    }
    acc + gauss_1d(f, b - hi, b, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for order in 1..=12 {
            let deg = 2 * order - 1;
            let mut f = |x: f64| x.powi(deg as i32) + x.powi(deg as i32 - 1);
            let exact = if (deg - 1) % 2 == 0 {
                2.0 / deg as f64
            } else {
                0.0
            };
            let got = gauss_1d(&mut f, -1.0, 1.0, order);
            assert!((got - exact).abs() < 1e-13, "order {order}: {got} vs {exact}");
        }
        let (_, w) = gauss_legendre(20);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn graded_rule_handles_power_singularity() {
        let got = graded_toward_left(&mut |x: f64| x.powf(-0.3), 0.0, 1.0, 8, 60);
        assert!((got - 1.0 / 0.7).abs() < 1e-9, "{got}");
        let got = graded_toward_left(&mut |x: f64| x.powf(0.4), 0.0, 2.0, 8, 60);
        assert!((got - 2f64.powf(1.4) / 1.4).abs() < 1e-12, "{got}");
        let got = graded_toward_right(&mut |x: f64| (1.0 - x).max(0.0).sqrt(), 0.0, 1.0, 8, 60);
        assert!((got - 2.0 / 3.0).abs() < 1e-13, "{got}");
    }

    #[test]
    fn adaptive_2d_smooth() {
        let got = adaptive_2d(
            &mut |x, y| (x * y).exp(),
            [0.0, 0.0],
            [1.0, 1.0],
            3,
            1e-12,
            0.0,
            8,
        );
        // sum_k 1/(k! (k+1)^2)
        let mut exact = 0.0;
        let mut fact = 1.0;
        for k in 0..30 {
            if k > 0 {
                fact *= k as f64;
            }
            exact += 1.0 / (fact * ((k + 1) as f64).powi(2));
        }
        assert!((got - exact).abs() < 1e-11);
    }
}
