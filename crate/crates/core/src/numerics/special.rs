//! Scalar special functions used by the evidential head and the network.

use super::{NumericsError, Result, Scalar};

/// `ln(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for strictly positive arguments
/// (Lanczos, g = 7, nine terms; reflection below 1/2).
pub fn lgamma<S: Scalar>(x: S) -> Result<S> {
    if !(x > S::zero()) || !x.is_finite() {
        return Err(NumericsError::Domain {
            op: "lgamma",
            value: x.to_f64_lossy(),
        });
    }
    Ok(lgamma_positive(x))
}

fn lgamma_positive<S: Scalar>(x: S) -> S {
    let half = S::lit(0.5);
    if x < half {
        let pi = S::PI();
        // Γ(x)Γ(1−x) = π / sin(πx)
        return (pi / (pi * x).sin()).ln() - lgamma_positive(S::one() - x);
    }
    let z = x - S::one();
    let mut series = S::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        series = series + S::lit(c) / (z + S::from_usize_lossy(i));
    }
    let t = z + S::lit(LANCZOS_G) + half;
    half * (S::TAU()).ln() + (z + half) * t.ln() - t + series.ln()
}

/// Digamma ψ(x) for strictly positive arguments: upward recurrence until
/// `x > 6`, then the asymptotic Bernoulli series.
pub fn digamma<S: Scalar>(x: S) -> Result<S> {
    if !(x > S::zero()) || !x.is_finite() {
        return Err(NumericsError::Domain {
            op: "digamma",
            value: x.to_f64_lossy(),
        });
    }
    let mut x = x;
    let mut acc = S::zero();
    let six = S::lit(6.0);
    while x <= six {
        acc = acc - S::one() / x;
        x = x + S::one();
    }
    let inv = S::one() / x;
    let inv2 = inv * inv;
    // B2/2, B4/4, ... B12/12
    let tail = inv2
        * (S::lit(1.0 / 12.0)
            - inv2
                * (S::lit(1.0 / 120.0)
                    - inv2
                        * (S::lit(1.0 / 252.0)
                            - inv2
                                * (S::lit(1.0 / 240.0)
                                    - inv2 * (S::lit(1.0 / 132.0) - inv2 * S::lit(691.0 / 32760.0))))));
    Ok(acc + x.ln() - S::lit(0.5) * inv - tail)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU.
#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    let u = S::lit(GELU_C) * (x + S::lit(GELU_A) * x * x * x);
    S::lit(0.5) * x * (S::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::lit(GELU_C);
    let a = S::lit(GELU_A);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (S::one() + S::lit(3.0) * a * x * x);
    S::lit(0.5) * (S::one() + th) + S::lit(0.5) * x * (S::one() - th * th) * du
}
