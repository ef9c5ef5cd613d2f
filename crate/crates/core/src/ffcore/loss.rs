//! Goodness and the per-layer FF losses.

use crate::data::Polarity;
use crate::error::{Error, Result};

/// Per-layer goodness values of one sample, first hidden layer first.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessRecord {
    pub goodness: Vec<f64>,
}

/// Sum of squared activations.
pub fn goodness(y: &[f32]) -> f64 {
    y.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

/// `log(1 + e^z)` without overflow or cancellation.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-log p(positive) = log(1 + exp(-(G - theta)))`.
pub fn loss_pos(g: f64, theta: f64) -> f64 {
    softplus(theta - g)
}

/// `-log p(negative) = log(1 + exp(G - theta))`.
pub fn loss_neg(g: f64, theta: f64) -> f64 {
    softplus(g - theta)
}

pub fn loss(polarity: Polarity, g: f64, theta: f64) -> f64 {
    match polarity {
        Polarity::Positive => loss_pos(g, theta),
        Polarity::Negative => loss_neg(g, theta),
    }
}

/// `dL/dG` for the given polarity.
pub fn loss_slope(polarity: Polarity, g: f64, theta: f64) -> f64 {
    match polarity {
        Polarity::Positive => -sigmoid(theta - g),
        Polarity::Negative => sigmoid(g - theta),
    }
}

/// `L_i + lambda * sum_{j>i} L_j` over one sample's goodness record.
pub fn lookahead_loss(
    record: &GoodnessRecord,
    layer_index: usize,
    lambda: f64,
    theta: f64,
    polarity: Polarity,
) -> Result<f64> {
    let g = &record.goodness;
    if layer_index >= g.len() {
        return Err(Error::IndexOutOfRange {
            index: layer_index,
            layers: g.len(),
        });
    }
    let later: f64 = g[layer_index + 1..].iter().map(|&gj| loss(polarity, gj, theta)).sum();
    Ok(loss(polarity, g[layer_index], theta) + lambda * later)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn goodness_examples() {
        assert_eq!(goodness(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(goodness(&[1.0, 1.0]), 2.0);
        assert_eq!(goodness(&[3.0, 4.0]), 25.0);
    }

    #[test]
    fn losses_at_threshold_are_ln2() {
        assert_abs_diff_eq!(loss_pos(2.0, 2.0), LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_neg(2.0, 2.0), LN_2, epsilon = 1e-12);
    }

    #[test]
    fn loss_reference_values() {
        // log(1 + e^2) and log(1 + e^-2) to 12 digits
        assert_abs_diff_eq!(loss_pos(0.0, 2.0), 2.126_928_011_042_97, epsilon = 1e-12);
        assert_abs_diff_eq!(loss_neg(0.0, 2.0), 0.126_928_011_042_973, epsilon = 1e-12);
        assert!(loss_pos(1000.0, 2.0) < 1e-300);
        assert!(loss_neg(1000.0, 2.0).is_finite());
        assert_abs_diff_eq!(loss_neg(1000.0, 2.0), 998.0, epsilon = 1e-12);
    }

    #[test]
    fn reflection_symmetry() {
        for i in 0..200 {
            let g = -10.0 + 0.1 * i as f64;
            assert_abs_diff_eq!(loss_neg(g, 2.0), loss_pos(4.0 - g, 2.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn strict_monotonicity_on_grid() {
        let grid: Vec<f64> = (0..1000).map(|i| -20.0 + 0.04 * i as f64).collect();
        for w in grid.windows(2) {
            assert!(loss_pos(w[1], 2.0) < loss_pos(w[0], 2.0));
            assert!(loss_neg(w[1], 2.0) > loss_neg(w[0], 2.0));
        }
    }

    #[test]
    fn slopes_match_finite_differences() {
        for &g in &[-3.0, 0.0, 1.9, 2.0, 5.5] {
            for pol in [Polarity::Positive, Polarity::Negative] {
                let h = 1e-6;
                let fd = (loss(pol, g + h, 2.0) - loss(pol, g - h, 2.0)) / (2.0 * h);
                assert_abs_diff_eq!(loss_slope(pol, g, 2.0), fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn lookahead_loss_examples() {
        let rec = GoodnessRecord {
            goodness: vec![2.0, 3.0, 1.0],
        };
        assert_eq!(
            lookahead_loss(&rec, 0, 0.0, 2.0, Polarity::Positive).unwrap(),
            loss_pos(2.0, 2.0)
        );
        let all_theta = GoodnessRecord {
            goodness: vec![2.0; 4],
        };
        assert_abs_diff_eq!(
            lookahead_loss(&all_theta, 1, 0.3, 2.0, Polarity::Negative).unwrap(),
            LN_2 * (1.0 + 0.3 * 2.0),
            epsilon = 1e-12
        );
        // log(1+e^-1) + 0.1 * log(1+e^1)
        let v = lookahead_loss(&rec, 1, 0.1, 2.0, Polarity::Positive).unwrap();
        assert_abs_diff_eq!(v, 0.313_261_687_518_223 + 0.1 * 1.313_261_687_518_22, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.444_588, epsilon = 1e-6);
        assert!(matches!(
            lookahead_loss(&rec, 3, 0.1, 2.0, Polarity::Positive),
            Err(Error::IndexOutOfRange { index: 3, layers: 3 })
        ));
    }
}
