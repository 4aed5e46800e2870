//! Adaptive Gauss–Legendre panel quadrature.
//!
//! Each panel is integrated with an `n`-point and a `2n`-point Gauss–Legendre
//! rule; the difference is the error estimate. Panels that miss the tolerance
//! are bisected. Semi-infinite integrals of exponentially decaying integrands
//! are handled by marching over panels of growing width until the tail no
//! longer contributes.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_DEPTH: usize = 60;
const MAX_SEMI_INFINITE_SPAN: f64 = 1000.0;

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on Pₙ.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
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

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over [a, b] with this fixed rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, f: &mut F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Adaptive panel integrator built from an `n`/`2n` Gauss–Legendre pair.
#[derive(Debug, Clone)]
pub struct PanelQuadrature {
    coarse: GaussLegendre,
    fine: GaussLegendre,
    rel_tol: f64,
}

impl PanelQuadrature {
    pub fn new(nodes: usize, rel_tol: f64) -> Self {
        Self {
            coarse: GaussLegendre::new(nodes),
            fine: GaussLegendre::new(2 * nodes),
            rel_tol,
        }
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    /// Integrates `f` over the finite interval [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<f64> {
        self.adaptive(&mut f, a, b, 0.0)
    }

    /// Integrates `f` over [a, ∞) for integrands that decay at least like e^(−x).
    pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64) -> Result<f64> {
        let mut total = 0.0_f64;
        let mut lo = a;
        let mut width = 1.0;
        let mut quiet_panels = 0;
        while lo - a < MAX_SEMI_INFINITE_SPAN {
            let hi = lo + width;
            let panel = self.adaptive(&mut f, lo, hi, total.abs())?;
            total += panel;
            if panel.abs() <= 1e-3 * self.rel_tol * total.abs() || (panel == 0.0 && total == 0.0)
            {
                quiet_panels += 1;
                if quiet_panels >= 2 && hi - a >= 4.0 {
                    return Ok(total);
                }
            } else {
                quiet_panels = 0;
            }
            lo = hi;
            width = (width * 2.0).min(8.0);
        }
        Err(Error::Convergence {
            context: format!("semi-infinite integral from {a} did not decay"),
            achieved: f64::NAN,
        })
    }

    /// Bisection driver. `scale` is a magnitude below which relative errors
    /// need not be resolved (running total of surrounding panels).
    fn adaptive<F: FnMut(f64) -> f64>(
        &self,
        f: &mut F,
        a: f64,
        b: f64,
        scale: f64,
    ) -> Result<f64> {
        let top_width = b - a;
        if top_width == 0.0 {
            return Ok(0.0);
        }
        let top = self.fine.integrate(f, a, b);
        let reference = scale.max(top.abs());
        let mut total = 0.0;
        // (lo, hi, depth, fine estimate already computed)
        let mut stack = vec![(a, b, 0usize, top)];
        while let Some((lo, hi, depth, fine)) = stack.pop() {
            let coarse = self.coarse.integrate(f, lo, hi);
            let err = (fine - coarse).abs();
            let share = ((hi - lo) / top_width).abs();
            let tol = self.rel_tol * fine.abs().max(reference * share);
            // panels narrower than the tolerance are accepted as they are
            if err <= tol || err == 0.0 || share <= 1e-3 * self.rel_tol {
                total += fine;
                continue;
            }
            if depth >= MAX_DEPTH {
                return Err(Error::Convergence {
                    context: format!("panel [{lo:e}, {hi:e}] not resolved"),
                    achieved: err / fine.abs().max(f64::MIN_POSITIVE),
                });
            }
            let mid = 0.5 * (lo + hi);
            let left = self.fine.integrate(f, lo, mid);
            let right = self.fine.integrate(f, mid, hi);
            // right pushed first so the left half is summed first
            stack.push((mid, hi, depth + 1, right));
            stack.push((lo, mid, depth + 1, left));
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_weights_and_polynomials() {
        for n in [1, 2, 5, 16, 32] {
            let rule = GaussLegendre::new(n);
            let wsum: f64 = rule.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "n={n}");
            // exact for degree 2n-1
            let deg = 2 * n - 1;
            let got = rule.integrate(&mut |x: f64| x.powi(deg as i32 - 1), 0.0, 1.0);
            assert!((got - 1.0 / (deg as f64)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn finite_interval_with_log_singularity() {
        let q = PanelQuadrature::new(16, 1e-10);
        // ∫₀¹ x ln x dx = −1/4
        let v = q.integrate(|x| if x > 0.0 { x * x.ln() } else { 0.0 }, 0.0, 1.0).unwrap();
        assert!((v + 0.25).abs() < 1e-10);
        // ∫₀¹ ln x dx = −1, integrable endpoint singularity
        let v = q.integrate(|x| if x > 0.0 { x.ln() } else { 0.0 }, 0.0, 1.0).unwrap();
        assert!((v + 1.0).abs() < 1e-8);
    }

    #[test]
    fn semi_infinite_exponentials() {
        let q = PanelQuadrature::new(16, 1e-10);
        // ∫₀^∞ y² e^{−y} dy = 2
        let v = q.integrate_to_infinity(|y| y * y * (-y).exp(), 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        // ∫₃^∞ e^{−y} dy = e^{−3}
        let v = q.integrate_to_infinity(|y| (-y).exp(), 3.0).unwrap();
        assert!((v / (-3.0f64).exp() - 1.0).abs() < 1e-10);
        // ∫₀^∞ y ln(1 − e^{−y}) dy = −ζ(3)
        let v = q
            .integrate_to_infinity(|y| if y > 0.0 { y * (-(-y).exp_m1()).ln() } else { 0.0 }, 0.0)
            .unwrap();
        assert!((v + crate::constants::ZETA3).abs() < 1e-9);
    }

    #[test]
    fn non_decaying_integrand_is_reported() {
        let q = PanelQuadrature::new(8, 1e-8);
        assert!(matches!(
            q.integrate_to_infinity(|_| 1.0, 0.0),
            Err(Error::Convergence { .. })
        ));
    }
}
