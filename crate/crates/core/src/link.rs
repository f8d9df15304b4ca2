//! Inverse link functions between logit space and label space.
//!
//! `forward` maps a logit to a label (`f`), `inverse` maps a label back to a
//! logit (`f^-1`) after pulling it a small margin away from the boundary of
//! the label space, where the inverse is infinite.

use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING_EPS: f64 = 1e-6;
pub const DEFAULT_GRID_POINTS: usize = 10_000;

/// Largest logit for which `exp` is finite.
const EXP_OVERFLOW: f64 = 709.782_712_893_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    Identity,
    Sigmoid,
    Exp,
    /// Per-class logits mapped through `exp` and renormalized across classes.
    Softmax,
}

impl LinkKind {
    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Identity => "identity",
            LinkKind::Sigmoid => "sigmoid",
            LinkKind::Exp => "exp",
            LinkKind::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LinkKind::Identity),
            "sigmoid" => Ok(LinkKind::Sigmoid),
            "exp" => Ok(LinkKind::Exp),
            "softmax" => Ok(LinkKind::Softmax),
            other => Err(Error::Config(format!(
                "unknown link '{other}' (expected identity, sigmoid, exp or softmax)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkFunction {
    kind: LinkKind,
    smoothing_eps: f64,
}

impl LinkFunction {
    pub fn new(kind: LinkKind, smoothing_eps: f64) -> Result<Self> {
        if !(smoothing_eps > 0.0 && smoothing_eps <= 1e-3) {
            return Err(Error::InvalidInput(format!(
                "smoothing_eps must lie in (0, 1e-3], got {smoothing_eps}"
            )));
        }
        Ok(Self { kind, smoothing_eps })
    }

    pub fn of(kind: LinkKind) -> Self {
        Self {
            kind,
            smoothing_eps: DEFAULT_SMOOTHING_EPS,
        }
    }

    pub fn identity() -> Self {
        Self::of(LinkKind::Identity)
    }

    pub fn sigmoid() -> Self {
        Self::of(LinkKind::Sigmoid)
    }

    pub fn exp() -> Self {
        Self::of(LinkKind::Exp)
    }

    pub fn softmax() -> Self {
        Self::of(LinkKind::Softmax)
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn smoothing_eps(&self) -> f64 {
        self.smoothing_eps
    }

    /// Scalar `f(z)`. Softmax acts on a single logit as the two-class softmax
    /// with the reference class pinned at zero, i.e. the sigmoid.
    pub fn forward(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::InvalidInput(format!("logit {z} is not finite")));
        }
        Ok(match self.kind {
            LinkKind::Identity => z,
            LinkKind::Sigmoid | LinkKind::Softmax => sigmoid(z),
            LinkKind::Exp => {
                if z > EXP_OVERFLOW {
                    return Err(Error::Overflow { logit: z });
                }
                z.exp()
            }
        })
    }

    /// Scalar `f'(z)`.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        Ok(match self.kind {
            LinkKind::Identity => 1.0,
            LinkKind::Sigmoid | LinkKind::Softmax => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            LinkKind::Exp => self.forward(z)?,
        })
    }

    /// Pulls a label into the region where the inverse is finite.
    pub fn clamp(&self, y: f64) -> Result<f64> {
        let eps = self.smoothing_eps;
        match self.kind {
            LinkKind::Identity => {
                if y.is_finite() {
                    Ok(y)
                } else {
                    Err(Error::InvalidLabel { value: y, reason: "label is not finite" })
                }
            }
            LinkKind::Sigmoid | LinkKind::Softmax => {
                if !(0.0..=1.0).contains(&y) {
                    return Err(Error::InvalidLabel { value: y, reason: "probability outside [0,1]" });
                }
                Ok(y.clamp(eps, 1.0 - eps))
            }
            LinkKind::Exp => {
                if !(y >= 0.0 && y.is_finite()) {
                    return Err(Error::InvalidLabel { value: y, reason: "count must be finite and nonnegative" });
                }
                Ok(y.max(eps))
            }
        }
    }

    /// Scalar `f^-1(y)` applied to the clamped label.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let y = self.clamp(y)?;
        Ok(match self.kind {
            LinkKind::Identity => y,
            LinkKind::Sigmoid | LinkKind::Softmax => y.ln() - (-y).ln_1p(),
            LinkKind::Exp => y.ln(),
        })
    }

    /// Vector `f`: softmax couples the components, the other links act
    /// elementwise.
    pub fn forward_vec(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            LinkKind::Softmax => {
                if let Some(&bad) = z.iter().find(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!("logit {bad} is not finite")));
                }
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let s: f64 = e.iter().sum();
                Ok(e.into_iter().map(|v| v / s).collect())
            }
            _ => z.iter().map(|&v| self.forward(v)).collect(),
        }
    }

    /// Vector clamp. For softmax each class probability is clipped to
    /// `[eps, 1 - eps]` and the row is renormalized, so the result stays on
    /// the simplex and round-trips through [`forward_vec`](Self::forward_vec).
    pub fn clamp_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            LinkKind::Softmax => {
                if y.len() < 2 {
                    return Err(Error::InvalidInput("softmax labels need at least two classes".into()));
                }
                let clipped = y.iter().map(|&v| self.clamp(v)).collect::<Result<Vec<_>>>()?;
                let total: f64 = y.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidLabel { value: total, reason: "class probabilities do not sum to one" });
                }
                let s: f64 = clipped.iter().sum();
                Ok(clipped.into_iter().map(|v| v / s).collect())
            }
            _ => y.iter().map(|&v| self.clamp(v)).collect(),
        }
    }

    /// Vector `f^-1`. For softmax this is the log of the clamped
    /// probabilities, without centering.
    pub fn inverse_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            LinkKind::Softmax => Ok(self.clamp_vec(y)?.into_iter().map(f64::ln).collect()),
            _ => y.iter().map(|&v| self.inverse(v)).collect(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bi-Lipschitz constant of a link over a logit interval: on the interval
/// `(1/L)|z1 - z2| <= |f(z1) - f(z2)| <= L |z1 - z2|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzBound {
    pub l: f64,
    pub domain_lo: f64,
    pub domain_hi: f64,
}

fn grid(lo: f64, hi: f64, points: usize) -> Result<impl Iterator<Item = f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!("invalid logit domain [{lo}, {hi}]")));
    }
    if points < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 grid points, got {points}")));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(move |i| if i == points - 1 { hi } else { lo + step * i as f64 }))
}

/// Grid maximum of `max(f'(z), 1/f'(z))` over `[domain_lo, domain_hi]`,
/// floored at one.
pub fn lipschitz_bound(
    link: &LinkFunction,
    domain_lo: f64,
    domain_hi: f64,
    grid_points: usize,
) -> Result<LipschitzBound> {
    let mut l: f64 = 1.0;
    for z in grid(domain_lo, domain_hi, grid_points)? {
        let d = link
            .derivative(z)
            .map_err(|_| Error::UnboundedDerivative { logit: z })?;
        let inv = 1.0 / d;
        if !(d.is_finite() && inv.is_finite()) {
            return Err(Error::UnboundedDerivative { logit: z });
        }
        l = l.max(d).max(inv);
    }
    Ok(LipschitzBound { l, domain_lo, domain_hi })
}

/// Grid extremes `(min, max)` of `f'(z)` over `[domain_lo, domain_hi]`.
pub fn derivative_range(link: &LinkFunction, domain_lo: f64, domain_hi: f64, grid_points: usize) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for z in grid(domain_lo, domain_hi, grid_points)? {
        let d = link
            .derivative(z)
            .map_err(|_| Error::UnboundedDerivative { logit: z })?;
        if !d.is_finite() {
            return Err(Error::UnboundedDerivative { logit: z });
        }
        lo = lo.min(d);
        hi = hi.max(d);
    }
    Ok((lo, hi))
}

/// Grid maximum of `f'(z)` alone, i.e. the forward Lipschitz constant.
pub fn max_derivative(link: &LinkFunction, domain_lo: f64, domain_hi: f64, grid_points: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for z in grid(domain_lo, domain_hi, grid_points)? {
        let d = link
            .derivative(z)
            .map_err(|_| Error::UnboundedDerivative { logit: z })?;
        if !d.is_finite() {
            return Err(Error::UnboundedDerivative { logit: z });
        }
        best = best.max(d);
    }
    Ok(best)
}
