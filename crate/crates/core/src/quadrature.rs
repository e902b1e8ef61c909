//! Gauss-Legendre rules and Legendre expansions on a panel.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`,
/// nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pair(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_pair(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wt;
        w[n - 1 - i] = wt;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))`.
fn legendre_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// `P_0(z), ..., P_{n-1}(z)` written into `out`.
pub fn legendre_values(z: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    out[0] = 1.0;
    if n > 1 {
        out[1] = z;
    }
    for k in 2..n {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * z * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
}

/// A fixed rule reused across panels.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `legendre[j * n + k] = P_k(node_j)`.
    legendre: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        let mut legendre = vec![0.0; n * n];
        for (j, &x) in nodes.iter().enumerate() {
            legendre_values(x, &mut legendre[j * n..(j + 1) * n]);
        }
        Self {
            nodes,
            weights,
            legendre,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Legendre coefficients `a_k` with `g(x) ~ sum a_k P_k(x)` from samples
    /// at the nodes.
    pub fn expansion(&self, samples: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut a = vec![0.0; n];
        for (j, &g) in samples.iter().enumerate() {
            let wg = self.weights[j] * g;
            let row = &self.legendre[j * n..(j + 1) * n];
            for (ak, &pk) in a.iter_mut().zip(row) {
                *ak += wg * pk;
            }
        }
        for (k, ak) in a.iter_mut().enumerate() {
            *ak *= (2 * k + 1) as f64 / 2.0;
        }
        a
    }

    /// Integral over `[-1, 1]` of `sum a_k P_k` restricted to `[-1, x]`.
    pub fn partial_integral(coeffs: &[f64], x: f64) -> f64 {
        let n = coeffs.len();
        let mut p = vec![0.0; n + 1];
        legendre_values(x, &mut p);
        let mut total = coeffs.first().map_or(0.0, |a0| a0 * (x + 1.0));
        for k in 1..n {
            total += coeffs[k] * (p[k + 1] - p[k - 1]) / (2 * k + 1) as f64;
        }
        total
    }

    /// Size of the trailing coefficients relative to the leading ones: a
    /// resolution indicator for the sampled function.
    pub fn tail_ratio(coeffs: &[f64]) -> f64 {
        let n = coeffs.len();
        if n < 4 {
            return 1.0;
        }
        let head = coeffs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let tail = coeffs[n - 3..].iter().map(|x| x.abs()).fold(0.0, f64::max);
        if head == 0.0 {
            0.0
        } else {
            tail / head
        }
    }
}

/// Integrates `f` over `[a, b]` with `panels` equal panels of the rule.
pub fn integrate<F: Fn(f64) -> f64>(rule: &GaussRule, a: f64, b: f64, panels: usize, f: F) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        let mut s = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * s;
    }
    total
}

/// Panel boundaries on `[0, b]` refined geometrically toward 0: `levels`
/// panels with ratio `ratio`, then `uniform` equal panels for the rest.
pub fn graded_breaks(b: f64, levels: usize, ratio: f64, uniform: usize) -> Vec<f64> {
    let first = b / uniform.max(1) as f64;
    let mut breaks = vec![0.0];
    let mut inner: Vec<f64> = (1..=levels).map(|k| first * ratio.powi((levels - k + 1) as i32)).collect();
    breaks.append(&mut inner);
    for k in 1..=uniform.max(1) {
        breaks.push(first * k as f64);
    }
    breaks
}
