//! Small numerically stable helpers shared by the logistic solvers.

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic loss of one example with margin `z = w·x + b` and label `y ∈ {0,1}`.
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    log1pexp(z) - y * z
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_at_extremes() {
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((log1pexp(800.0) - 800.0).abs() < 1e-12);
        assert!(log1pexp(-800.0).abs() < 1e-300);
        assert!((logistic_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
