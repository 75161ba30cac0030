//! Linear-predictor expressions over the unconstrained parameter vector.
//!
//! Model assembly (stage 1 and stage 2) expresses every location a density
//! term needs as a sum of [`Atom`]s. Non-centred random effects, BYM2 fields
//! and the external-field product are atoms, so the engine differentiates
//! them exactly without knowing which model it is running.

/// A mixing weight that is either sampled (on the logit scale) or fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mixing {
    Logit(usize),
    Fixed(f64),
}

/// One additive piece of a linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    /// `coef * x[idx]`
    Param { idx: usize, coef: f64 },
    /// `coef * exp(x[log_scale]) * x[idx]`, a non-centred random effect.
    Scaled { log_scale: usize, idx: usize, coef: f64 },
    /// `coef * x[a] * x[b]`
    Product { a: usize, b: usize, coef: f64 },
    /// `exp(x[log_sigma]) * (x[s] sqrt(rho / kappa) + x[v] sqrt(1 - rho))`
    Bym2 { log_sigma: usize, rho: Mixing, s: usize, v: usize, inv_kappa: f64 },
}

impl Atom {
    fn max_index(&self) -> usize {
        match *self {
            Atom::Param { idx, .. } => idx,
            Atom::Scaled { log_scale, idx, .. } => log_scale.max(idx),
            Atom::Product { a, b, .. } => a.max(b),
            Atom::Bym2 { log_sigma, rho, s, v, .. } => {
                let r = match rho {
                    Mixing::Logit(i) => i,
                    Mixing::Fixed(_) => 0,
                };
                log_sigma.max(r).max(s).max(v)
            }
        }
    }

    #[inline]
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Atom::Param { idx, coef } => coef * x[idx],
            Atom::Scaled { log_scale, idx, coef } => coef * x[log_scale].exp() * x[idx],
            Atom::Product { a, b, coef } => coef * x[a] * x[b],
            Atom::Bym2 { log_sigma, rho, s, v, inv_kappa } => {
                let r = rho_value(rho, x);
                x[log_sigma].exp() * (x[s] * (r * inv_kappa).sqrt() + x[v] * (1.0 - r).sqrt())
            }
        }
    }

    #[inline]
    fn backprop(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        match *self {
            Atom::Param { idx, coef } => grad[idx] += upstream * coef,
            Atom::Scaled { log_scale, idx, coef } => {
                let sc = coef * x[log_scale].exp();
                grad[idx] += upstream * sc;
                grad[log_scale] += upstream * sc * x[idx];
            }
            Atom::Product { a, b, coef } => {
                grad[a] += upstream * coef * x[b];
                grad[b] += upstream * coef * x[a];
            }
            Atom::Bym2 { log_sigma, rho, s, v, inv_kappa } => {
                let r = rho_value(rho, x);
                let sigma = x[log_sigma].exp();
                let a = (r * inv_kappa).sqrt();
                let b = (1.0 - r).sqrt();
                let inner = x[s] * a + x[v] * b;
                grad[log_sigma] += upstream * sigma * inner;
                grad[s] += upstream * sigma * a;
                grad[v] += upstream * sigma * b;
                if let Mixing::Logit(i) = rho {
                    // d rho / d logit = rho (1 - rho)
                    let drho = r * (1.0 - r);
                    let da = if a > 0.0 { 0.5 * inv_kappa / a } else { 0.0 };
                    let db = if b > 0.0 { -0.5 / b } else { 0.0 };
                    grad[i] += upstream * sigma * (x[s] * da + x[v] * db) * drho;
                }
            }
        }
    }
}

#[inline]
fn rho_value(rho: Mixing, x: &[f64]) -> f64 {
    match rho {
        Mixing::Logit(i) => logistic(x[i]),
        Mixing::Fixed(r) => r,
    }
}

#[inline]
pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(v))` without overflow.
#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `offset + sum(atoms)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearPredictor {
    pub offset: f64,
    pub atoms: Vec<Atom>,
}

impl LinearPredictor {
    pub fn constant(offset: f64) -> Self {
        Self { offset, atoms: Vec::new() }
    }

    pub fn param(idx: usize) -> Self {
        Self { offset: 0.0, atoms: vec![Atom::Param { idx, coef: 1.0 }] }
    }

    pub fn with(mut self, atom: Atom) -> Self {
        self.atoms.push(atom);
        self
    }

    pub fn push(&mut self, atom: Atom) {
        self.atoms.push(atom);
    }

    pub fn max_index(&self) -> Option<usize> {
        self.atoms.iter().map(Atom::max_index).max()
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.offset + self.atoms.iter().map(|a| a.value(x)).sum::<f64>()
    }

    #[inline]
    pub fn backprop(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        if upstream != 0.0 {
            for a in &self.atoms {
                a.backprop(x, upstream, grad);
            }
        }
    }
}

/// Location of a Gaussian observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Location {
    Linear(LinearPredictor),
    /// `sum_k c_k logistic(eta_k)`: a population-weighted mean of
    /// probabilities, used by benchmark constraints.
    WeightedInvLogit(Vec<(f64, LinearPredictor)>),
}

impl Location {
    pub fn max_index(&self) -> Option<usize> {
        match self {
            Location::Linear(lp) => lp.max_index(),
            Location::WeightedInvLogit(parts) => parts.iter().filter_map(|(_, lp)| lp.max_index()).max(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Location::Linear(lp) => lp.value(x),
            Location::WeightedInvLogit(parts) => parts.iter().map(|(c, lp)| c * logistic(lp.value(x))).sum(),
        }
    }

    pub fn backprop(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        match self {
            Location::Linear(lp) => lp.backprop(x, upstream, grad),
            Location::WeightedInvLogit(parts) => {
                for (c, lp) in parts {
                    let p = logistic(lp.value(x));
                    lp.backprop(x, upstream * c * p * (1.0 - p), grad);
                }
            }
        }
    }
}
