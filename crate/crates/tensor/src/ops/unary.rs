use crate::Real;

/// Element-wise non-linearities with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    /// Tanh approximation of GELU.
    Gelu,
    Exp,
    Ln,
    Abs,
    Square,
    Sqrt,
    /// `0.5 x²` for `|x| ≤ 1`, `|x| − 0.5` otherwise.
    SmoothL1,
    /// Clamp into `[lo, hi]`; gradient passes inside the closed interval.
    Clamp(f64, f64),
    Neg,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl Unary {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Unary::Relu => x.max(T::zero()),
            Unary::LeakyRelu(s) => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::c(s)
                }
            }
            Unary::Gelu => {
                let inner = T::c(GELU_K) * (x + T::c(GELU_C) * x * x * x);
                T::c(0.5) * x * (T::one() + inner.tanh())
            }
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::SmoothL1 => {
                let a = x.abs();
                if a <= T::one() {
                    T::c(0.5) * x * x
                } else {
                    a - T::c(0.5)
                }
            }
            Unary::Clamp(lo, hi) => x.max(T::c(lo)).min(T::c(hi)),
            Unary::Neg => -x,
        }
    }

    /// d(apply)/dx given the input `x` and output `y`.
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(s) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::c(s)
                }
            }
            Unary::Gelu => {
                let k = T::c(GELU_K);
                let c = T::c(GELU_C);
                let inner = k * (x + c * x * x * x);
                let t = inner.tanh();
                let dinner = k * (T::one() + T::c(3.0) * c * x * x);
                T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * dinner
            }
            Unary::Exp => y,
            Unary::Ln => T::one() / x,
            Unary::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Square => T::c(2.0) * x,
            Unary::Sqrt => T::c(0.5) / y,
            Unary::SmoothL1 => {
                if x.abs() <= T::one() {
                    x
                } else if x > T::zero() {
                    T::one()
                } else {
                    -T::one()
                }
            }
            Unary::Clamp(lo, hi) => {
                if x >= T::c(lo) && x <= T::c(hi) {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Neg => -T::one(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Unary; 12] = [
        Unary::Sigmoid,
        Unary::Relu,
        Unary::LeakyRelu(0.2),
        Unary::Gelu,
        Unary::Exp,
        Unary::Ln,
        Unary::Abs,
        Unary::Square,
        Unary::Sqrt,
        Unary::SmoothL1,
        Unary::Clamp(-0.5, 0.8),
        Unary::Neg,
    ];

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for op in ALL {
            for &x in &[0.3f64, 0.7, 1.6, 2.4, -0.9, -1.7] {
                if matches!(op, Unary::Ln | Unary::Sqrt) && x <= 0.0 {
                    continue;
                }
                let y = op.apply(x);
                let fd = (op.apply(x + h) - op.apply(x - h)) / (2.0 * h);
                let an = op.derivative(x, y);
                assert!((fd - an).abs() < 1e-6 * (1.0 + an.abs()), "{op:?} at {x}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn smooth_l1_is_c1_at_unit_threshold() {
        for s in [1.0f64, -1.0] {
            assert_eq!(Unary::SmoothL1.apply(s), 0.5);
            assert_eq!(Unary::SmoothL1.derivative(s, 0.5), s);
            let above = s * (1.0 + 1e-12);
            assert_eq!(Unary::SmoothL1.derivative(above, 0.0), s);
        }
    }
}
