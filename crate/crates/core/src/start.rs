//! Starting points shared by both engines.

use ndarray::Array2;

use crate::assignment::{max_weight_perfect_matching, Permutation};
use crate::model::{
    feasibility_certificate_restricted, utilities, Allocation, Certificate, MarketInstance, ModelError,
};

/// Big negative weight for pairs a feasible start must avoid.
const FORBIDDEN: f64 = -1e9;

pub(crate) enum Start {
    /// An integral matching with every gain above the threshold.
    Integral(Permutation, Allocation, Vec<f64>),
    /// No integral matching qualifies; the caller must blend toward an interior point.
    NeedsInterior(Permutation, Allocation, Vec<f64>),
}

fn gains_above(instance: &MarketInstance, v: &[f64], eps: f64) -> bool {
    v.iter().zip(instance.disagreement()).all(|(vi, ci)| vi - ci > eps)
}

/// Max-weight matching on the utilities; if some gain is at most `eps`, a
/// matching maximizing the sum of log gains over pairs with gain above `eps`.
pub(crate) fn integral_start(
    instance: &MarketInstance,
    eps: f64,
    keep: &dyn Fn(usize, usize) -> bool,
) -> Result<Start, ModelError> {
    let n = instance.n();
    let c = instance.disagreement();
    let base = Array2::from_shape_fn((n, n), |(i, j)| {
        if !keep(i, j) {
            return FORBIDDEN;
        }
        match instance {
            MarketInstance::TwoSided(m) => m.u()[[i, j]] + m.w()[[i, j]],
            _ => instance.matched_value(i, j),
        }
    });
    let (perm, _) = max_weight_perfect_matching(&base);
    let x = Allocation::from_permutation(instance, &perm);
    let v = utilities(instance, &x)?;
    if gains_above(instance, &v, eps) && perm.as_slice().iter().enumerate().all(|(i, &j)| keep(i, j)) {
        return Ok(Start::Integral(perm, x, v));
    }
    let logw = Array2::from_shape_fn((n, n), |(i, j)| {
        if !keep(i, j) {
            return FORBIDDEN;
        }
        let mut total = 0.0;
        let gains: Vec<f64> = match instance {
            MarketInstance::TwoSided(_) => {
                vec![instance.matched_value(i, j), instance.matched_value(n + j, i)]
            }
            _ => vec![instance.matched_value(i, j) - c[i]],
        };
        for g in gains {
            if g > eps {
                total += g.ln();
            } else {
                return FORBIDDEN;
            }
        }
        total
    });
    let (perm2, _) = max_weight_perfect_matching(&logw);
    let x2 = Allocation::from_permutation(instance, &perm2);
    let v2 = utilities(instance, &x2)?;
    if gains_above(instance, &v2, eps) && perm2.as_slice().iter().enumerate().all(|(i, &j)| keep(i, j)) {
        return Ok(Start::Integral(perm2, x2, v2));
    }
    Ok(Start::NeedsInterior(perm, x, v))
}

/// Lazily computed interior point.
pub(crate) struct Interior<'a> {
    instance: &'a MarketInstance,
    keep: &'a dyn Fn(usize, usize) -> bool,
    cert: Option<Certificate>,
}

impl<'a> Interior<'a> {
    pub fn new(instance: &'a MarketInstance, keep: &'a dyn Fn(usize, usize) -> bool) -> Self {
        Interior {
            instance,
            keep,
            cert: None,
        }
    }

    pub fn get(&mut self) -> Result<&Certificate, ModelError> {
        if self.cert.is_none() {
            self.cert = Some(feasibility_certificate_restricted(self.instance, self.keep)?);
        }
        Ok(self.cert.as_ref().expect("just computed"))
    }

    pub fn computed(&self) -> bool {
        self.cert.is_some()
    }
}
