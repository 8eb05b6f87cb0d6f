//! Reference implementations written independently of the core crate, for
//! use as test oracles. Everything here favors obviousness over speed.

/// `(gamma·⟨u,v⟩ + coef0)^3`.
pub fn poly3(u: &[f64], v: &[f64], gamma: f64, coef0: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..u.len() {
        s += u[k] * v[k];
    }
    let b = gamma * s + coef0;
    b * b * b
}

pub fn gram(points: &[Vec<f64>], gamma: f64, coef0: f64) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|u| points.iter().map(|v| poly3(u, v, gamma, coef0)).collect())
        .collect()
}

/// ε-SVR dual objective in minimization form for `coef = β⁺ − β⁻` with
/// complementary β (at most one of each pair nonzero):
/// `½ coefᵀ K coef + ε Σ|coef| − tᵀ coef`.
pub fn svr_dual_objective(k: &[Vec<f64>], t: &[f64], coef: &[f64], epsilon: f64) -> f64 {
    let n = t.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += coef[i] * k[i][j] * coef[j];
        }
    }
    let lin: f64 = (0..n).map(|i| epsilon * coef[i].abs() - t[i] * coef[i]).sum();
    0.5 * quad + lin
}

/// Euclidean projection of `v` onto `{x ∈ [0, c]^m : Σ y_s x_s = 0}` with
/// `y_s ∈ {±1}`, by bisection on the multiplier of the equality.
pub fn project_box_hyperplane(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vs, ys)| (vs - lam * ys).clamp(0.0, c)).collect() };
    let g = |x: &[f64]| -> f64 { x.iter().zip(y).map(|(a, b)| a * b).sum() };
    let bound = v.iter().fold(0.0f64, |m, a| m.max(a.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    // g(at(λ)) is nonincreasing in λ with g(lo) ≥ 0 ≥ g(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Solution of the ε-SVR dual by accelerated projected gradient over the
/// `2n` variables `(β⁺, β⁻)`. Returns `coef = β⁺ − β⁻`.
pub fn svr_dual_oracle(k: &[Vec<f64>], t: &[f64], epsilon: f64, c: f64, iterations: usize) -> Vec<f64> {
    let n = t.len();
    let m = 2 * n;
    let y: Vec<f64> = (0..m).map(|s| if s < n { 1.0 } else { -1.0 }).collect();
    // Hessian [[K, −K], [−K, K]] has spectral norm 2·λmax(K) ≤ 2·max row sum
    let row_max = k
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / (2.0 * row_max).max(1e-12);
    let coef_of = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| x[i] - x[i + n]).collect() };
    let grad = |x: &[f64]| -> Vec<f64> {
        let coef = coef_of(x);
        let kc: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * coef[j]).sum()).collect();
        (0..m)
            .map(|s| {
                if s < n {
                    kc[s] + epsilon - t[s]
                } else {
                    -kc[s - n] + epsilon + t[s - n]
                }
            })
            .collect()
    };
    let objective = |x: &[f64]| -> f64 {
        let coef = coef_of(x);
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += coef[i] * k[i][j] * coef[j];
            }
        }
        0.5 * quad + epsilon * x.iter().sum::<f64>() - (0..n).map(|i| t[i] * coef[i]).sum::<f64>()
    };

    let mut x = vec![0.0; m];
    let mut w = x.clone();
    let mut theta = 1.0f64;
    let mut f_prev = objective(&x);
    for _ in 0..iterations {
        let gw = grad(&w);
        let v: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
        let x_new = project_box_hyperplane(&v, &y, c);
        let f_new = objective(&x_new);
        // adaptive restart keeps the sequence monotone
        if f_new > f_prev {
            theta = 1.0;
            w = x.clone();
            continue;
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let mom = (theta - 1.0) / theta_new;
        w = x_new.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = x_new;
        theta = theta_new;
        f_prev = f_new;
    }
    coef_of(&x)
}

/// Worst violation of the ε-SVR optimality conditions for `coef` with
/// decision values `f_i = Σ_j coef_j K_ij + bias`, also covering the box and
/// the equality constraint. Coefficients within `bound_tol` of `0` or `±c`
/// count as being at that bound.
pub fn svr_kkt_residual(
    k: &[Vec<f64>],
    t: &[f64],
    coef: &[f64],
    bias: f64,
    epsilon: f64,
    c: f64,
    bound_tol: f64,
) -> f64 {
    let n = t.len();
    let mut worst = coef.iter().sum::<f64>().abs();
    for i in 0..n {
        let a = coef[i];
        worst = worst.max((a.abs() - c).max(0.0));
        let f = (0..n).map(|j| coef[j] * k[i][j]).sum::<f64>() + bias;
        let r = t[i] - f;
        let v = if a.abs() <= bound_tol {
            (r.abs() - epsilon).max(0.0)
        } else if a >= c - bound_tol {
            (epsilon - r).max(0.0)
        } else if a <= -c + bound_tol {
            (r + epsilon).max(0.0)
        } else if a > 0.0 {
            (r - epsilon).abs()
        } else {
            (r + epsilon).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// KL(N(m1, diag v1) ‖ N(m2, diag v2)).
pub fn kl_diag_gaussian(m1: &[f64], v1: &[f64], m2: &[f64], v2: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..m1.len() {
        s += (v2[d] / v1[d]).ln() + (v1[d] + (m1[d] - m2[d]).powi(2)) / v2[d] - 1.0;
    }
    0.5 * s
}

/// Mean and population variance per column.
pub fn column_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k] / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            var[k] += (r[k] - mean[k]).powi(2) / n;
        }
    }
    (mean, var)
}

/// Cohen's kappa from the four confusion counts.
pub fn kappa_from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> f64 {
    let n = (tp + fp + fn_ + tn) as f64;
    let po = (tp + tn) as f64 / n;
    let pred_pos = (tp + fp) as f64 / n;
    let act_pos = (tp + fn_) as f64 / n;
    let pe = pred_pos * act_pos + (1.0 - pred_pos) * (1.0 - act_pos);
    if pe == 1.0 {
        0.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Weights of a single-layer LSTM with gate blocks ordered i, f, g, o.
/// `wx[k][r]` connects input `k` to gate row `r`; likewise `wh[j][r]`.
pub struct NaiveLstm {
    pub wx: Vec<Vec<f64>>,
    pub wh: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl NaiveLstm {
    /// Final hidden state after reading `xs` from a zero state.
    pub fn run(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let h_dim = self.b.len() / 4;
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for x in xs {
            let pre = |r: usize| -> f64 {
                let mut s = self.b[r];
                for (k, xk) in x.iter().enumerate() {
                    s += self.wx[k][r] * xk;
                }
                for (j, hj) in h.iter().enumerate() {
                    s += self.wh[j][r] * hj;
                }
                s
            };
            let mut h_new = vec![0.0; h_dim];
            for j in 0..h_dim {
                let i = sig(pre(j));
                let f = sig(pre(h_dim + j));
                let g = pre(2 * h_dim + j).tanh();
                let o = sig(pre(3 * h_dim + j));
                c[j] = f * c[j] + i * g;
                h_new[j] = o * c[j].tanh();
            }
            h = h_new;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_the_feasible_set() {
        let v = [0.3, 2.0, -1.0, 0.7, 0.1, 5.0];
        let y = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let x = project_box_hyperplane(&v, &y, 1.0);
        assert!(x.iter().all(|&a| (0.0..=1.0).contains(&a)));
        let s: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!(s.abs() < 1e-9);
    }

    #[test]
    fn oracle_solves_a_two_point_problem_in_closed_form() {
        // K = I, t = (2, -2), eps = 0.5: coef = (a, -a), objective a² + a − 4a
        // minimized at a = 1.5, within C = 10
        let k = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let coef = svr_dual_oracle(&k, &[2.0, -2.0], 0.5, 10.0, 5000);
        assert!((coef[0] - 1.5).abs() < 1e-6 && (coef[1] + 1.5).abs() < 1e-6, "{coef:?}");
        assert!(svr_kkt_residual(&k, &[2.0, -2.0], &coef, 0.0, 0.5, 10.0, 1e-9) < 1e-6);
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(
            kl_diag_gaussian(&[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]),
            0.0
        );
        assert!((kl_diag_gaussian(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kappa_hand_value() {
        assert!((kappa_from_counts(4, 1, 1, 4) - 0.6).abs() < 1e-12);
    }
}
