//! Anti-collapse regularizers on a batch of latents `z` (rows = samples).

use crate::array::Array;
use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Per-dimension standard deviation with `1/(m-1)` normalization (`1/m` when
/// there is a single row), as a `1 x n` row.
pub fn std_per_dim<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let (m, _) = z.shape();
    if m == 0 {
        return Err(Error::Contract("empty latent batch".into()));
    }
    let centered = z.sub_row(z.mean_rows()?)?;
    let denom = (m.max(2) - 1) as f64;
    centered.square().sum_rows().scale(1.0 / denom).sqrt()
}

/// `max(0, 1 - std_d(z))` for every dimension, as a `1 x n` row.
pub fn variance_hinge<'t>(z: Var<'t>) -> Result<Var<'t>> {
    Ok(std_per_dim(z)?.scale(-1.0).offset(1.0).relu())
}

/// Sum over dimensions of the squared off-diagonal covariance entries,
/// divided by the dimension.
pub fn covariance_penalty<'t>(z: Var<'t>) -> Result<Var<'t>> {
    let (m, n) = z.shape();
    if m == 0 {
        return Err(Error::Contract("empty latent batch".into()));
    }
    let centered = z.sub_row(z.mean_rows()?)?;
    let denom = (m.max(2) - 1) as f64;
    let cov = centered.t().matmul(centered)?.scale(1.0 / denom);
    let mut off_mask = Array::ones(n, n);
    for i in 0..n {
        off_mask.set(i, i, 0.0);
    }
    let off = cov.mul(z.tape().constant(off_mask))?;
    Ok(off.square().sum().scale(1.0 / n as f64))
}

/// `(1/m) Σ_i |a_i - b_i|²` over rows.
pub fn mean_sq_row_distance<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let m = a.shape().0;
    if m == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    Ok(a.sub(b)?.square().sum().scale(1.0 / m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use crate::rng::Rng;

    #[test]
    fn collapsed_batch_has_unit_hinge_and_zero_covariance() {
        let tape = Tape::new();
        let z = tape.leaf(Array::filled(5, 3, 0.5));
        assert_eq!(variance_hinge(z).unwrap().value().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(covariance_penalty(z).unwrap().item(), 0.0);
    }

    #[test]
    fn hinge_is_zero_for_spread_batch() {
        let tape = Tape::new();
        let z = tape.leaf(Array::from_rows(&[[-2.0, 3.0], [2.0, -3.0]]).unwrap());
        assert_eq!(variance_hinge(z).unwrap().value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn covariance_penalty_matches_direct_formula() {
        let mut rng = Rng::seeded(17);
        let zs = rng.normal_array(9, 3, 1.0);
        let tape = Tape::new();
        let got = covariance_penalty(tape.leaf(zs.clone())).unwrap().item();
        let mean = zs.mean_rows();
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let c: f64 = (0..9)
                    .map(|r| (zs.get(r, i) - mean.data()[i]) * (zs.get(r, j) - mean.data()[j]))
                    .sum::<f64>()
                    / 8.0;
                want += c * c;
            }
        }
        assert!((got - want / 3.0).abs() < 1e-12);
    }

    #[test]
    fn regularizer_gradients() {
        let mut rng = Rng::seeded(23);
        let z0 = rng.normal_array(6, 3, 0.5);
        let e = grad_check(|z| Ok(variance_hinge(z)?.sum()), &z0, 1e-6).unwrap();
        assert!(e < 1e-5, "{e}");
        let e = grad_check(covariance_penalty, &z0, 1e-6).unwrap();
        assert!(e < 1e-5, "{e}");
    }
}
