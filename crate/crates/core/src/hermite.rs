//! Normalized Hermite functions and Gauss–Hermite quadrature.
//!
//! Everything here works with the oscillator eigenfunctions
//! `phi_n(u) = (2^n n! sqrt(pi))^{-1/2} H_n(u) exp(-u^2/2)` through their
//! stable three-term recurrence, so no raw Hermite polynomial is ever formed.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{invalid, Result};

/// Values `phi_0(u), ..., phi_{n_max}(u)`.
pub fn hermite_functions(n_max: usize, u: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let p0 = PI.powf(-0.25) * (-0.5 * u * u).exp();
    out.push(p0);
    if n_max == 0 {
        return out;
    }
    out.push(2f64.sqrt() * u * p0);
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * u * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Single oscillator eigenfunction `phi_n(u)`.
pub fn hermite_function(n: usize, u: f64) -> f64 {
    hermite_functions(n, u)[n]
}

/// Gauss–Hermite rule for the weight `exp(-u^2)`.
///
/// Weights are stored pre-multiplied by `exp(u^2)`, so that
/// `sum_i weights[i] * g(nodes[i])` approximates `int g(u) du` for integrands
/// that already carry their Gaussian decay (products of `phi_n`).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Largest supported order; beyond this `exp(-u^2/2)` at the outer nodes
/// underflows and the scaled weights lose meaning.
pub const MAX_ORDER: usize = 512;

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(invalid(
                "quadrature_order",
                format!("must be in 1..={MAX_ORDER}, got {order}"),
            ));
        }
        let n = order;
        let nf = n as f64;
        // Bracket the non-negative roots by a sign scan finer than the
        // smallest root spacing (~ pi / sqrt(2n + 1)), then polish each one.
        let top = (2.0 * nf + 1.0).sqrt() + 1.0;
        let scan = (std::f64::consts::PI / (2.0 * nf + 1.0).sqrt()) / 8.0;
        let mut positive = Vec::with_capacity(n / 2 + 1);
        if n % 2 == 1 {
            positive.push(0.0);
        }
        let mut lo = if n % 2 == 1 { 0.5 * scan } else { 0.0 };
        let mut f_lo = top_pair(n, lo).0;
        while lo < top && positive.len() < (n + 1) / 2 {
            let hi = lo + scan;
            let f_hi = top_pair(n, hi).0;
            if f_lo == 0.0 {
                positive.push(lo);
            } else if f_lo.signum() != f_hi.signum() {
                positive.push(polish_root(n, lo, hi));
            }
            lo = hi;
            f_lo = f_hi;
        }
        debug_assert_eq!(positive.len(), (n + 1) / 2);
        let mut nodes: Vec<f64> = positive
            .iter()
            .filter(|&&z| z > 0.0)
            .map(|&z| -z)
            .rev()
            .chain(positive.iter().copied())
            .collect();
        nodes.truncate(n);
        let weights = nodes
            .iter()
            .map(|&z| {
                let (_, pn1) = top_pair(n, z);
                1.0 / (nf * pn1 * pn1)
            })
            .collect();
        Ok(Self { nodes, weights })
    }

    /// Shared rule of the given order, built once per process.
    pub fn cached(order: usize) -> Result<Arc<Self>> {
        static RULES: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let rules = RULES.get_or_init(Default::default);
        if let Some(r) = rules.lock().unwrap().get(&order) {
            return Ok(Arc::clone(r));
        }
        let rule = Arc::new(Self::new(order)?);
        rules.lock().unwrap().entry(order).or_insert_with(|| Arc::clone(&rule));
        Ok(rule)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `int g(u) du` for a Gaussian-decaying integrand.
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * g(u))
            .sum()
    }
}

/// Newton iteration safeguarded by bisection inside `[lo, hi]`.
fn polish_root(n: usize, mut lo: f64, mut hi: f64) -> f64 {
    let scale = (2.0 * n as f64).sqrt();
    let f_lo = top_pair(n, lo).0;
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (p, p1) = top_pair(n, z);
        if p == 0.0 {
            return z;
        }
        if p.signum() == f_lo.signum() {
            lo = z;
        } else {
            hi = z;
        }
        let newton = z - p / (scale * p1);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let moved = (next - z).abs();
        z = next;
        if moved <= 1e-14 * z.abs().max(1.0) || hi - lo <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
            // one more Newton step lands on the root to roundoff
            let (p, p1) = top_pair(n, z);
            let last = z - p / (scale * p1);
            return if last > lo && last < hi { last } else { z };
        }
    }
    z
}

/// `(phi_n(z), phi_{n-1}(z))` via the recurrence.
fn top_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p_prev = 0.0;
    let mut p = PI.powf(-0.25) * (-0.5 * z * z).exp();
    for j in 0..n {
        let jf = j as f64;
        let next = (2.0 / (jf + 1.0)).sqrt() * z * p - (jf / (jf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}
