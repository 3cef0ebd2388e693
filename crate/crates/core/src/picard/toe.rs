use crate::error::{LabError, LabResult};

/// Ordered product integral: the solution `M(t_n)` of `dM/ds = B(s) M`,
/// `M(t_0) = I`, by classical RK4 on the grid `times`.
///
/// `integrand(k, s, out)` writes `B(s)` (row-major `d × d`) for `s` in step
/// `k`, i.e. `[times[k], times[k+1]]`; passing the step index lets piecewise
/// data pick the correct one-sided value at step boundaries.
///
/// The result is checked against `‖M‖ ≤ exp(∫‖B‖)` (spectral norm on the
/// left, Frobenius norm under the integral).
pub fn time_ordered_exp<F>(d: usize, times: &[f64], mut integrand: F) -> LabResult<Vec<f64>>
where
    F: FnMut(usize, f64, &mut [f64]),
{
    if times.len() < 2 {
        return Err(LabError::param("samples", times.len() as f64, "need at least two grid times"));
    }
    let dd = d * d;
    let mut m = vec![0.0; dd];
    (0..d).for_each(|i| m[i * d + i] = 1.0);
    let mut b = [vec![0.0; dd], vec![0.0; dd], vec![0.0; dd]];
    let mut k = [vec![0.0; dd], vec![0.0; dd], vec![0.0; dd], vec![0.0; dd]];
    let mut tmp = vec![0.0; dd];
    let mut integral = 0.0;
    for step in 0..times.len() - 1 {
        let (s0, s1) = (times[step], times[step + 1]);
        let h = s1 - s0;
        integrand(step, s0, &mut b[0]);
        integrand(step, 0.5 * (s0 + s1), &mut b[1]);
        integrand(step, s1, &mut b[2]);
        integral += h / 6.0 * (frob(&b[0]) + 4.0 * frob(&b[1]) + frob(&b[2]));
        mul(d, &b[0], &m, &mut k[0]);
        axpy(&m, 0.5 * h, &k[0], &mut tmp);
        mul(d, &b[1], &tmp, &mut k[1]);
        axpy(&m, 0.5 * h, &k[1], &mut tmp);
        mul(d, &b[1], &tmp, &mut k[2]);
        axpy(&m, h, &k[2], &mut tmp);
        mul(d, &b[2], &tmp, &mut k[3]);
        for i in 0..dd {
            m[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        let n = frob(&m);
        if !(n <= 50f64.exp()) {
            return Err(LabError::ExponentialBlowup { path: 0, norm: n });
        }
    }
    let norm = spectral_norm(d, &m);
    let bound = integral.exp() * (1.0 + 1e-6);
    if norm > bound {
        return Err(LabError::Validation(format!(
            "ordered exponential norm {norm} exceeds exp(integral) bound {bound}"
        )));
    }
    Ok(m)
}

fn mul(d: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
        }
    }
}

fn axpy(x: &[f64], h: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + h * y[i];
    }
}

fn frob(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `MᵀM`.
pub fn spectral_norm(d: usize, m: &[f64]) -> f64 {
    let mut mtm = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            mtm[i * d + j] = (0..d).map(|k| m[k * d + i] * m[k * d + j]).sum();
        }
    }
    let mut v = vec![1.0; d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| mtm[i * d + j] * v[j]).sum()).collect();
        let n = frob(&w);
        if n == 0.0 {
            return 0.0;
        }
        let next = n / frob(&v);
        v = w.into_iter().map(|x| x / n).collect();
        if (next - lambda).abs() <= 1e-15 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| t * k as f64 / n as f64).collect()
    }

    fn expm2(a: [f64; 4], t: f64) -> [f64; 4] {
        // Taylor series to convergence; fine for small 2×2 test matrices.
        let mut term = [1.0, 0.0, 0.0, 1.0];
        let mut sum = term;
        for k in 1..60 {
            let mut next = [0.0; 4];
            mul(2, &term, &a, &mut next);
            for v in next.iter_mut() {
                *v *= t / k as f64;
            }
            term = next;
            for i in 0..4 {
                sum[i] += term[i];
            }
        }
        sum
    }

    #[test]
    fn zero_integrand_gives_identity() {
        let m = time_ordered_exp(3, &grid(1.0, 10), |_, _, out| out.fill(0.0)).unwrap();
        assert_eq!(m, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn diagonal_integrand() {
        let (a, b, t) = (0.7, -1.3, 2.0);
        let m = time_ordered_exp(2, &grid(t, 200), |_, _, out| out.copy_from_slice(&[a, 0.0, 0.0, b])).unwrap();
        assert!((m[0] - (a * t).exp()).abs() < 1e-9);
        assert!((m[3] - (b * t).exp()).abs() < 1e-9);
        assert_eq!((m[1], m[2]), (0.0, 0.0));
    }

    #[test]
    fn non_commuting_pieces_are_ordered() {
        let a = [0.0, 1.0, -0.5, 0.2];
        let b = [0.3, 0.0, 1.0, -0.4];
        let mut ab = [0.0; 4];
        let mut ba = [0.0; 4];
        mul(2, &a, &b, &mut ab);
        mul(2, &b, &a, &mut ba);
        assert!(ab.iter().zip(&ba).any(|(x, y)| (x - y).abs() > 1e-3));
        let t = 1.5;
        let n = 1000;
        let m = time_ordered_exp(2, &grid(t, n), |k, _, out| {
            out.copy_from_slice(if k < n / 2 { &a } else { &b })
        })
        .unwrap();
        let mut want = [0.0; 4];
        mul(2, &expm2(b, t / 2.0), &expm2(a, t / 2.0), &mut want);
        for i in 0..4 {
            assert!((m[i] - want[i]).abs() <= 1e-8, "{m:?} vs {want:?}");
        }
    }

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let (s, c) = 0.3f64.sin_cos();
        assert!((spectral_norm(2, &[c, -s, s, c]) - 1.0).abs() < 1e-12);
        assert!((spectral_norm(2, &[3.0, 0.0, 0.0, -5.0]) - 5.0).abs() < 1e-12);
    }
}
