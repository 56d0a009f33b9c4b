//! Independent reference implementations used to freeze derived values.
//!
//! Each oracle is written from the defining formula and shares no code with the
//! library: brute-force pair counting for AUC, the two-line NE formula, the
//! one-pass Pearson formula, and cyclic coordinate descent for the Lasso.

#![allow(dead_code)]

/// Population-std standardization; constant columns are only centred.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let p = rows.first().map_or(0, Vec::len);
    let mut out = rows.to_vec();
    for j in 0..p {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
        let sd = if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
        for r in out.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
    out
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(1/n) Σ [softplus(z_i) − y_i z_i] + λ‖β‖₁` with `z = b + βᵀx`.
pub fn lasso_objective(rows: &[Vec<f64>], labels: &[u8], b: f64, beta: &[f64], lambda: f64) -> f64 {
    let n = rows.len() as f64;
    let mut s = 0.0;
    for (x, &y) in rows.iter().zip(labels) {
        let z = b + x.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>();
        s += softplus(z) - f64::from(y) * z;
    }
    s / n + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent with per-coordinate Newton steps, falling back to
/// the `1/4` curvature bound whenever the Newton step fails to decrease the
/// objective. Returns `(intercept, β)`.
#[allow(clippy::needless_range_loop)]
pub fn lasso_coordinate_descent(rows: &[Vec<f64>], labels: &[u8], lambda: f64) -> (f64, Vec<f64>) {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let nf = n as f64;
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let mut b = 0.0;
    let mut beta = vec![0.0; p];
    let mut z = vec![0.0; n];
    // column j as a vector, with j = p meaning the intercept's all-ones column
    let col = |j: usize, i: usize| if j == p { 1.0 } else { rows[i][j] };

    let coord_objective = |z: &[f64], j: usize, delta: f64, new_value: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let zi = z[i] + delta * col(j, i);
            s += softplus(zi) - y[i] * zi;
        }
        s / nf + if j == p { 0.0 } else { lambda * new_value.abs() }
    };

    for _sweep in 0..20_000 {
        let mut max_change: f64 = 0.0;
        for j in 0..=p {
            let current = if j == p { b } else { beta[j] };
            let (mut g, mut h, mut bound) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let x = col(j, i);
                let s = logistic(z[i]);
                g += (s - y[i]) * x;
                h += s * (1.0 - s) * x * x;
                bound += 0.25 * x * x;
            }
            g /= nf;
            h /= nf;
            bound /= nf;
            if bound == 0.0 {
                continue;
            }
            let step_to = |curv: f64| -> f64 {
                let u = current - g / curv;
                if j == p {
                    u
                } else {
                    let t = lambda / curv;
                    u.signum() * (u.abs() - t).max(0.0)
                }
            };
            let before = coord_objective(&z, j, 0.0, current);
            let mut next = step_to(h.max(1e-12));
            if coord_objective(&z, j, next - current, next) > before {
                next = step_to(bound);
            }
            let delta = next - current;
            if delta != 0.0 {
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi += delta * col(j, i);
                }
                if j == p {
                    b = next;
                } else {
                    beta[j] = next;
                }
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < 1e-13 {
            break;
        }
    }
    (b, beta)
}

/// Counts concordant pairs directly; ties contribute one half.
pub fn auc_brute_force(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Mean log-loss over the entropy of the label base rate.
pub fn ne_formula(preds: &[f64], labels: &[u8]) -> f64 {
    let n = labels.len() as f64;
    let p_bar = labels.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let ll = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(1e-15, 1.0 - 1e-15);
            let y = f64::from(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n;
    ll / -(p_bar * p_bar.ln() + (1.0 - p_bar) * (1.0 - p_bar).ln())
}

/// `(nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))`.
pub fn pearson_direct(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// Central difference of `f` along coordinate `j`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, at: &[f64], j: usize, h: f64) -> f64 {
    let mut plus = at.to_vec();
    let mut minus = at.to_vec();
    plus[j] += h;
    minus[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
