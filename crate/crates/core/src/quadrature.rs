//! Gauss-Legendre rules and a globally adaptive composite integrator for
//! integrands that return one value per Monte Carlo path.
//!
//! The per-path layout lets callers integrate each common-random-number path
//! with the same abscissae, so that the integral of every path is available
//! for a paired standard error.

use serde::{Deserialize, Serialize};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
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
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Abscissae and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(z, w)| w * f(z)).sum()
    }
}

/// Value of `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Controls for [`integrate_paths`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveRule {
    /// Gauss-Legendre nodes per panel.
    pub nodes: usize,
    /// Target for the summed panel-doubling error of the path mean.
    pub tolerance: f64,
    /// Upper bound on the number of panels.
    pub max_panels: usize,
}

impl Default for AdaptiveRule {
    fn default() -> Self {
        Self {
            nodes: 16,
            tolerance: 1e-6,
            max_panels: 16,
        }
    }
}

/// Per-path integrals produced by [`integrate_paths`].
#[derive(Clone, Debug, PartialEq)]
pub struct PathIntegral {
    pub per_path: Vec<f64>,
    /// Mean over paths.
    pub mean: f64,
    /// Sum over panels of |coarse - refined|, i.e. the node-doubling estimate.
    pub error: f64,
    /// Number of integrand evaluations.
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    /// Refined estimate (two half-panels), per path.
    fine: Vec<f64>,
    /// Half-panel estimates, kept so a split does not re-evaluate them.
    halves: [Vec<f64>; 2],
    error: f64,
}

fn panel_estimate(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    paths: usize,
    f: &impl Fn(f64) -> Vec<f64>,
) -> Vec<f64> {
    let mut acc = vec![0.0; paths];
    for (z, w) in rule.mapped(a, b) {
        let values = f(z);
        debug_assert_eq!(values.len(), paths);
        for (slot, v) in acc.iter_mut().zip(values) {
            *slot += w * v;
        }
    }
    acc
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn make_panel(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    coarse: Vec<f64>,
    paths: usize,
    f: &impl Fn(f64) -> Vec<f64>,
    evaluations: &mut usize,
) -> Panel {
    let mid = 0.5 * (a + b);
    let left = panel_estimate(rule, a, mid, paths, f);
    let right = panel_estimate(rule, mid, b, paths, f);
    *evaluations += 2 * rule.nodes.len();
    let fine: Vec<f64> = left.iter().zip(&right).map(|(l, r)| l + r).collect();
    let error = (mean(&fine) - mean(&coarse)).abs();
    Panel {
        a,
        b,
        fine,
        halves: [left, right],
        error,
    }
}

/// Integrate a path-vector integrand over `[a, b]`.
///
/// The panel with the largest doubling error is split until the summed error
/// drops below `rule.tolerance` or `rule.max_panels` is reached. `f(z)` must
/// return the same number of path values on every call.
pub fn integrate_paths(
    a: f64,
    b: f64,
    paths: usize,
    rule: AdaptiveRule,
    f: impl Fn(f64) -> Vec<f64>,
) -> PathIntegral {
    if b <= a || paths == 0 {
        return PathIntegral {
            per_path: vec![0.0; paths],
            mean: 0.0,
            error: 0.0,
            evaluations: 0,
        };
    }
    let gl = GaussLegendre::new(rule.nodes.max(1));
    let mut evaluations = gl.nodes.len();
    let coarse = panel_estimate(&gl, a, b, paths, &f);
    let mut panels = vec![make_panel(&gl, a, b, coarse, paths, &f, &mut evaluations)];

    loop {
        let total: f64 = panels.iter().map(|p| p.error).sum();
        if total <= rule.tolerance || panels.len() >= rule.max_panels.max(1) {
            break;
        }
        let (worst, _) =
            panels
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (k, p)| {
                    if p.error > best.1 {
                        (k, p.error)
                    } else {
                        best
                    }
                });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        let [left, right] = p.halves;
        panels.push(make_panel(&gl, p.a, mid, left, paths, &f, &mut evaluations));
        panels.push(make_panel(
            &gl,
            mid,
            p.b,
            right,
            paths,
            &f,
            &mut evaluations,
        ));
    }

    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut per_path = vec![0.0; paths];
    let mut error = 0.0;
    for p in &panels {
        for (slot, v) in per_path.iter_mut().zip(&p.fine) {
            *slot += v;
        }
        error += p.error;
    }
    PathIntegral {
        mean: mean(&per_path),
        per_path,
        error,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_integrate_polynomials() {
        for n in 1..=20 {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
            // exact for degree 2n-1
            let deg = 2 * n - 1;
            let approx = gl.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert!((approx - 1.0 / (deg as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sixteen_point_rule_misses_a_step() {
        // Plain GL-16 on 2*1{z>0.5} over [0, 0.8] overshoots the exact 0.6.
        let gl = GaussLegendre::new(16);
        let v = gl.integrate(0.0, 0.8, |z| if z > 0.5 { 2.0 } else { 0.0 });
        assert!((v - 0.6).abs() > 0.01);
    }

    #[test]
    fn adaptive_rule_resolves_a_step() {
        let out = integrate_paths(0.0, 0.8, 1, AdaptiveRule::default(), |z| {
            vec![if z > 0.5 { 2.0 } else { 0.0 }]
        });
        assert!((out.mean - 0.6).abs() < 1e-6, "{}", out.mean);
        assert!(out.error <= 1e-6);
    }

    #[test]
    fn per_path_values_are_integrated_separately() {
        let out = integrate_paths(0.0, 1.0, 3, AdaptiveRule::default(), |z| {
            vec![1.0, z, z * z]
        });
        assert!((out.per_path[0] - 1.0).abs() < 1e-12);
        assert!((out.per_path[1] - 0.5).abs() < 1e-12);
        assert!((out.per_path[2] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.mean - (1.0 + 0.5 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        let out = integrate_paths(0.5, 0.5, 2, AdaptiveRule::default(), |_| vec![1.0, 1.0]);
        assert_eq!(out.per_path, vec![0.0, 0.0]);
        assert_eq!(out.evaluations, 0);
    }
}
