//! Fixtures and independent numerical oracles shared by unit and integration
//! tests. Kept std-only so integration tests can include it by path.

pub fn desk_doc() -> String {
    include_str!("../scenarios/desk3.json").to_string()
}

pub fn honeynet_doc() -> String {
    include_str!("../scenarios/honeynet13.json").to_string()
}

/// One honeypot plus the absorbing state. Every action leaves for the
/// absorbing state at rate `lambda`; all rewards are zero.
pub fn two_state_doc(lambda: f64, gamma: f64) -> String {
    let rows: String = ["E", "P", "L", "H"]
        .iter()
        .map(|a| format!(r#"{{"state": 0, "action": "{a}", "dist": {{"1": 1.0}}}},"#))
        .collect();
    let rates: String = ["E", "P", "L", "H"]
        .iter()
        .map(|a| format!(r#"{{"state": 0, "action": "{a}", "to": 1, "lambda": {lambda:?}}},"#))
        .collect();
    format!(
        r#"{{
  "gamma": {gamma:?},
  "noise_sigma": 0.0,
  "reward_bound": 10.0,
  "nodes": [
    {{"id": 0, "name": "h", "kind": "honeypot"}},
    {{"id": 1, "name": "end", "kind": "absorbing"}}
  ],
  "edges": [],
  "transitions": [{}],
  "rates": [{}],
  "rewards": [{{"state": 0, "action": "E", "r1": 0.0}}]
}}"#,
        rows.trim_end_matches(','),
        rates.trim_end_matches(',')
    )
}

/// One honeypot whose non-eject actions loop back at rate `lambda` paying
/// `r1` per jump and `r2` per unit time. Eject pays nothing.
pub fn self_loop_doc(lambda: f64, gamma: f64, r1: f64, r2: f64) -> String {
    let bound = 1.0 + r1.abs() + r2.abs() / gamma;
    let mut rows = vec![r#"{"state": 0, "action": "E", "dist": {"1": 1.0}}"#.to_string()];
    let mut rates = vec![format!(r#"{{"state": 0, "action": "E", "to": 1, "lambda": {lambda:?}}}"#)];
    let mut rewards = Vec::new();
    for a in ["P", "L", "H"] {
        rows.push(format!(r#"{{"state": 0, "action": "{a}", "dist": {{"0": 1.0}}}}"#));
        rates.push(format!(r#"{{"state": 0, "action": "{a}", "to": 0, "lambda": {lambda:?}}}"#));
        rewards.push(format!(r#"{{"state": 0, "action": "{a}", "r1": {r1:?}, "r2": {r2:?}}}"#));
    }
    format!(
        r#"{{
  "gamma": {gamma:?},
  "noise_sigma": 0.0,
  "reward_bound": {bound:?},
  "nodes": [
    {{"id": 0, "name": "loop", "kind": "honeypot"}},
    {{"id": 1, "name": "end", "kind": "absorbing"}}
  ],
  "edges": [[0, 0]],
  "transitions": [{}],
  "rates": [{}],
  "rewards": [{}]
}}"#,
        rows.join(", "),
        rates.join(", "),
        rewards.join(", ")
    )
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Integrates the forward equation `dp/dt = p Q` with an adaptive
/// Dormand–Prince 5(4) pair. `rows` is the generator in row-major form.
pub fn rk45_occupancy(rows: &[Vec<f64>], p0: &[f64], t_end: f64, tol: f64) -> Vec<f64> {
    let n = p0.len();
    let deriv = |p: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (i, pi) in p.iter().enumerate() {
            if *pi != 0.0 {
                for (j, q) in rows[i].iter().enumerate() {
                    out[j] += pi * q;
                }
            }
        }
        out
    };
    let axpy = |p: &[f64], terms: &[(f64, &Vec<f64>)], h: f64| -> Vec<f64> {
        let mut out = p.to_vec();
        for (c, k) in terms {
            for j in 0..n {
                out[j] += h * c * k[j];
            }
        }
        out
    };
    let mut p = p0.to_vec();
    let mut t = 0.0;
    if t_end <= 0.0 {
        return p;
    }
    let mut h = (t_end / 100.0).min(0.1);
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let k1 = deriv(&p);
        let k2 = deriv(&axpy(&p, &[(1.0 / 5.0, &k1)], h));
        let k3 = deriv(&axpy(&p, &[(3.0 / 40.0, &k1), (9.0 / 40.0, &k2)], h));
        let k4 = deriv(&axpy(&p, &[(44.0 / 45.0, &k1), (-56.0 / 15.0, &k2), (32.0 / 9.0, &k3)], h));
        let k5 = deriv(&axpy(
            &p,
            &[
                (19372.0 / 6561.0, &k1),
                (-25360.0 / 2187.0, &k2),
                (64448.0 / 6561.0, &k3),
                (-212.0 / 729.0, &k4),
            ],
            h,
        ));
        let k6 = deriv(&axpy(
            &p,
            &[
                (9017.0 / 3168.0, &k1),
                (-355.0 / 33.0, &k2),
                (46732.0 / 5247.0, &k3),
                (49.0 / 176.0, &k4),
                (-5103.0 / 18656.0, &k5),
            ],
            h,
        ));
        let y5 = axpy(
            &p,
            &[
                (35.0 / 384.0, &k1),
                (500.0 / 1113.0, &k3),
                (125.0 / 192.0, &k4),
                (-2187.0 / 6784.0, &k5),
                (11.0 / 84.0, &k6),
            ],
            h,
        );
        let k7 = deriv(&y5);
        let y4 = axpy(
            &p,
            &[
                (5179.0 / 57600.0, &k1),
                (7571.0 / 16695.0, &k3),
                (393.0 / 640.0, &k4),
                (-92097.0 / 339200.0, &k5),
                (187.0 / 2100.0, &k6),
                (1.0 / 40.0, &k7),
            ],
            h,
        );
        let err = (0..n)
            .map(|j| (y5[j] - y4[j]).abs() / (tol + tol * y5[j].abs().max(p[j].abs())))
            .fold(0.0, f64::max);
        if err <= 1.0 {
            t += h;
            p = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    p
}

/// Kolmogorov–Smirnov statistic of sorted samples against a continuous cdf.
pub fn ks_statistic(sorted: &[f64], cdf: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .zip(cdf)
        .enumerate()
        .map(|(i, (_, &f))| (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs()))
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial() {
        let v = adaptive_simpson(&|x: f64| x.powi(3) - 2.0 * x, 0.0, 2.0, 1e-12);
        assert!((v - 0.0).abs() < 1e-12);
        let e = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-13);
        assert!((e - (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn rk45_two_state_decay() {
        let rows = vec![vec![-0.8, 0.8], vec![0.0, 0.0]];
        let p = rk45_occupancy(&rows, &[1.0, 0.0], 3.0, 1e-12);
        assert!((p[0] - (-2.4f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn ks_uniform_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_statistic(&xs, &xs) - 0.005).abs() < 1e-12);
    }
}
