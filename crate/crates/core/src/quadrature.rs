//! Exact integrals of the discount kernel `λ^{t−τ}` over grid pieces.
//!
//! The objective, the bound audit and the dissipation check all integrate
//! against this kernel; they share these routines so their quadratures agree.

/// `∫_{a}^{a+h} λ^{t−τ} dτ` for a piece ending `lag = t − (a + h)` before `t`.
///
/// Continuous in `λ → 1`, where it tends to `h`.
pub fn piece_weight(lambda: f64, lag: f64, h: f64) -> f64 {
    let l = -lambda.ln();
    let decay = lambda.powf(lag);
    if l == 0.0 {
        return h * decay;
    }
    decay * -(-l * h).exp_m1() / l
}

/// Weights `ω_j` of the `count` pieces of length `h` that end at `t_end`,
/// piece `j` covering `[t_end − (count − j)·h, t_end − (count − j − 1)·h)`.
pub fn piece_weights(lambda: f64, h: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| piece_weight(lambda, h * (count - j - 1) as f64, h)).collect()
}

/// Weights `(α, β)` such that `∫ λ^{t−τ} g(τ) dτ = α·g(a) + β·g(a + h)` for
/// `g` linear on the piece `[a, a + h]`, with `lag = t − (a + h)`.
pub fn linear_piece_weights(lambda: f64, lag: f64, h: f64) -> (f64, f64) {
    let l = -lambda.ln();
    let total = piece_weight(lambda, lag, h);
    let x = l * h;
    // (1 − e^{−x}(1 + x)) / x², with a series for small x.
    let ratio = if x < 1e-4 {
        0.5 - x / 3.0 + x * x / 8.0
    } else {
        (-(-x).exp_m1() - x * (-x).exp()) / (x * x)
    };
    let right = total - lambda.powf(lag) * h * ratio;
    (total - right, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_piece_closed_form() {
        let (lam, dt) = (0.4f64, 0.01);
        assert_relative_eq!(piece_weight(lam, 0.0, dt), (1.0 - lam.powf(dt)) / -lam.ln(), epsilon = 1e-15);
    }

    #[test]
    fn undiscounted_limit() {
        assert_relative_eq!(piece_weight(1.0 - 1e-12, 1.3, 0.01), 0.01, epsilon = 1e-6);
        assert_eq!(piece_weight(1.0, 1.3, 0.01), 0.01);
    }

    #[test]
    fn weights_telescope() {
        let (lam, dt, n) = (0.4f64, 0.01, 200);
        let sum: f64 = piece_weights(lam, dt, n).iter().sum();
        assert_relative_eq!(sum, (1.0 - lam.powf(dt * n as f64)) / -lam.ln(), epsilon = 1e-12);
    }

    #[test]
    fn linear_weights_integrate_constants_and_ramps() {
        let (lam, lag, h) = (0.4f64, 0.3, 0.05);
        let (a, b) = linear_piece_weights(lam, lag, h);
        assert_relative_eq!(a + b, piece_weight(lam, lag, h), epsilon = 1e-15);
        // Ramp g(τ) = τ − a0 on [a0, a0 + h]: midpoint-rule reference with many cells.
        let cells = 20000;
        let t = lag + h;
        let reference: f64 = (0..cells)
            .map(|k| {
                let s = (k as f64 + 0.5) * h / cells as f64;
                lam.powf(t - s) * s * h / cells as f64
            })
            .sum();
        assert_relative_eq!(b * h, reference, epsilon = 1e-12);
        let (a1, b1) = linear_piece_weights(1.0 - 1e-13, 0.0, h);
        assert_relative_eq!(a1, h / 2.0, epsilon = 1e-9);
        assert_relative_eq!(b1, h / 2.0, epsilon = 1e-9);
    }
}
