//! Small fitting helpers shared by the experiments.

/// Ordinary least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    LineFit {
        slope,
        intercept: my - slope * mx,
    }
}

/// Centered differences of `y` with respect to `x`, one-sided at the ends.
pub fn centered_slope(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (y[b] - y[a]) / (x[b] - x[a])
        })
        .collect()
}

/// Three-point derivative at `x[i]` on a nonuniform mesh from samples at
/// `i - 1`, `i`, `i + 1`. Second-order accurate.
pub fn three_point(xm: f64, x0: f64, xp: f64, ym: f64, y0: f64, yp: f64) -> f64 {
    let hm = x0 - xm;
    let hp = xp - x0;
    (hm * hm * yp - hp * hp * ym + (hp * hp - hm * hm) * y0) / (hm * hp * (hm + hp))
}

/// Second-order derivative of `y` with respect to `x` at every sample:
/// three-point interior formula, one-sided three-point formulas at the ends.
pub fn derivative_nonuniform(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    match n {
        0 => return Vec::new(),
        1 => return vec![0.0],
        2 => {
            let d = (y[1] - y[0]) / (x[1] - x[0]);
            return vec![d, d];
        }
        _ => {}
    }
    let mut out = Vec::with_capacity(n);
    // one-sided: fit a parabola through the first three samples
    out.push(end_derivative(x[0], x[1], x[2], y[0], y[1], y[2]));
    for i in 1..n - 1 {
        out.push(three_point(x[i - 1], x[i], x[i + 1], y[i - 1], y[i], y[i + 1]));
    }
    out.push(end_derivative(
        x[n - 1],
        x[n - 2],
        x[n - 3],
        y[n - 1],
        y[n - 2],
        y[n - 3],
    ));
    out
}

/// Derivative at `a` of the parabola through `(a, ya)`, `(b, yb)`, `(c, yc)`.
fn end_derivative(a: f64, b: f64, c: f64, ya: f64, yb: f64, yc: f64) -> f64 {
    ya * (2.0 * a - b - c) / ((a - b) * (a - c))
        + yb * (a - c) / ((b - a) * (b - c))
        + yc * (a - b) / ((c - a) * (c - b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-15 && (f.intercept - 2.0).abs() < 1e-15);
    }

    #[test]
    fn centered_differences_of_quadratic() {
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let d = centered_slope(&x, &y);
        for i in 1..4 {
            assert!((d[i] - 2.0 * x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn nonuniform_derivative_exact_on_parabolas() {
        let x = [0.0, 0.3, 0.45, 1.0, 1.7];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v * v - v + 3.0).collect();
        for (d, v) in derivative_nonuniform(&x, &y).iter().zip(x) {
            assert!((d - (4.0 * v - 1.0)).abs() < 1e-12);
        }
    }
}
