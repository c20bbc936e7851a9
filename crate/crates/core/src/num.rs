//! Small numeric helpers shared across modules.

/// Cumulative composite trapezoid of samples `y` on the uniform grid with
/// spacing `h`. Entry `k` is the integral from the first node to node `k`.
pub fn cumtrapz(y: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..y.len() {
        acc += 0.5 * h * (y[k - 1] + y[k]);
        out.push(acc);
    }
    out
}

/// Composite Simpson rule on a uniform grid (n odd number of nodes preferred;
/// a trapezoid patch covers a trailing even interval).
pub fn simpson(y: &[f64], h: f64) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * h * (y[0] + y[1]);
    }
    let mut acc = 0.0;
    let mut k = 0;
    while k + 2 < n {
        acc += h / 3.0 * (y[k] + 4.0 * y[k + 1] + y[k + 2]);
        k += 2;
    }
    if k + 1 < n {
        acc += 0.5 * h * (y[k] + y[k + 1]);
    }
    acc
}

/// Periodic trapezoid (= rectangle) rule over one period for samples at
/// `n` equally spaced nodes covering `[0, period)`.
pub fn periodic_trapezoid(y: &[f64], period: f64) -> f64 {
    let n = y.len() as f64;
    y.iter().sum::<f64>() * period / n
}

/// One Aitken Δ² step on the last three entries, or the last entry when the
/// acceleration denominator is degenerate.
pub fn aitken_last(seq: &[f64]) -> f64 {
    let n = seq.len();
    if n < 3 {
        return *seq.last().unwrap();
    }
    let (x0, x1, x2) = (seq[n - 3], seq[n - 2], seq[n - 1]);
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    let den = d2 - d1;
    if den.abs() < 1e-300 {
        return x2;
    }
    let acc = x2 - d2 * d2 / den;
    // reject wild extrapolations outside the trust region of the sequence
    if !acc.is_finite() || (acc - x2).abs() > 10.0 * d2.abs().max(d1.abs()) {
        x2
    } else {
        acc
    }
}

/// Bisection refinement of a sign change of `f` on `[a, b]` to width `tol`.
/// Assumes `f(a)` and `f(b)` have opposite signs.
pub fn bisect(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fa > 0.0) != (fm > 0.0) {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// SplitMix64 step; used to derive independent per-sample RNG seeds from a
/// base seed and a sample counter so parallel schedules cannot change results.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub fn seed_for(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w < 0.0 {
        w += two_pi;
    }
    if w >= two_pi {
        w = 0.0;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumtrapz_exact_on_linear() {
        let h = 0.1;
        let y: Vec<f64> = (0..11).map(|k| 2.0 * (k as f64) * h).collect();
        let out = cumtrapz(&y, h);
        for (k, v) in out.iter().enumerate() {
            let r = k as f64 * h;
            assert!((v - r * r).abs() < 1e-14);
        }
    }

    #[test]
    fn simpson_quartic_accuracy() {
        let n = 201;
        let h = 1.0 / (n as f64 - 1.0);
        let y: Vec<f64> = (0..n).map(|k| ((k as f64) * h).exp()).collect();
        let exact = 1f64.exp() - 1.0;
        assert!((simpson(&y, h) - exact).abs() < 1e-11);
    }

    #[test]
    fn aitken_kills_geometric_tails() {
        // x_n = 1/T_n with T doubling is exactly geometric in differences
        let seq = [-1.0 / 5.0, -1.0 / 10.0, -1.0 / 20.0, -1.0 / 40.0];
        assert!(aitken_last(&seq).abs() < 1e-15);
        let seq = [-(5f64).cosh() / 5f64.sinh(), -(10f64).cosh() / 10f64.sinh(), -(20f64).cosh() / 20f64.sinh()];
        assert!((aitken_last(&seq) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisect_locates_roots() {
        let root = bisect(2.0, 4.0, 1e-12, |x| x * x - 9.0);
        assert!((root - 3.0).abs() < 1e-11);
    }

    #[test]
    fn wrap_angle_canonical_range() {
        assert!((wrap_angle(7.0) - (7.0 - std::f64::consts::TAU)).abs() < 1e-15);
        assert!(wrap_angle(-0.5) >= 0.0);
        assert_eq!(wrap_angle(std::f64::consts::TAU), 0.0);
    }
}
