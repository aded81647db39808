use crate::error::{Error, Result};

/// Second derivatives of the natural cubic spline through unit-spaced knots.
fn natural_moments(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Tridiagonal system (1, 4, 1) M = 6 * second differences, M[0] = M[n-1] = 0.
    let inner = n - 2;
    let mut c_prime = vec![0.0; inner];
    let mut d_prime = vec![0.0; inner];
    for i in 0..inner {
        let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
        if i == 0 {
            c_prime[0] = 1.0 / 4.0;
            d_prime[0] = rhs / 4.0;
        } else {
            let denom = 4.0 - c_prime[i - 1];
            c_prime[i] = 1.0 / denom;
            d_prime[i] = (rhs - d_prime[i - 1]) / denom;
        }
    }
    for i in (0..inner).rev() {
        let next = if i + 1 < inner { m[i + 2] } else { 0.0 };
        m[i + 1] = d_prime[i] - c_prime[i] * next;
    }
    m
}

/// Natural cubic spline upsampling by an integer factor.
///
/// The output has `(len - 1) * factor + 1` samples; output index `i * factor`
/// is exactly `x[i]`.
pub fn spline_upsample(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::invalid(format!(
            "spline upsampling needs at least 4 points, got {}",
            x.len()
        )));
    }
    if factor < 2 {
        return Err(Error::invalid("upsampling factor must be at least 2"));
    }
    let m = natural_moments(x);
    let mut out = Vec::with_capacity((x.len() - 1) * factor + 1);
    for i in 0..x.len() - 1 {
        out.push(x[i]);
        let (y0, y1, m0, m1) = (x[i], x[i + 1], m[i], m[i + 1]);
        for j in 1..factor {
            let t = j as f64 / factor as f64;
            let u = 1.0 - t;
            let v = u * y0 + t * y1 + ((u * u * u - u) * m0 + (t * t * t - t) * m1) / 6.0;
            out.push(v);
        }
    }
    out.push(x[x.len() - 1]);
    Ok(out)
}
