//! Task loss, relaxed group-fairness gaps and the endpoint-diversity penalty.
//!
//! Output-space losses return their value together with `dL/dŷ` so they can
//! be fed straight into [`crate::model::backward`]. The fairness gaps are
//! absolute values of signed group-mean differences; where the difference is
//! exactly zero the zero subgradient is used.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub const BCE_CLAMP: f64 = 1e-12;
pub const COSINE_EPS: f64 = 1e-12;

/// Loss value with its derivative with respect to each prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLoss {
    pub value: f64,
    pub grad_yhat: Vec<f64>,
}

/// Squared cosine similarity of the two endpoints and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineReg {
    pub value: f64,
    pub grad_w1: ParamVector,
    pub grad_w2: ParamVector,
}

/// Which relaxed fairness gap to penalise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FairnessMetric {
    /// Demographic parity.
    Dp,
    /// Equal opportunity (gap among true positives).
    Eo,
    /// Equalized odds (positives gap plus negatives gap).
    Eodd,
}

impl FairnessMetric {
    pub fn name(self) -> &'static str {
        match self {
            FairnessMetric::Dp => "dp",
            FairnessMetric::Eo => "eo",
            FairnessMetric::Eodd => "eodd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dp" => Some(FairnessMetric::Dp),
            "eo" => Some(FairnessMetric::Eo),
            "eodd" => Some(FairnessMetric::Eodd),
            _ => None,
        }
    }

    pub fn evaluate(self, yhat: &[f64], y: &[f64], s: &[f64]) -> Result<OutputLoss> {
        match self {
            FairnessMetric::Dp => delta_dp_relaxed(yhat, s),
            FairnessMetric::Eo => delta_eo_relaxed(yhat, y, s),
            FairnessMetric::Eodd => delta_eodd_relaxed(yhat, y, s),
        }
    }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} predictions vs {b} entries")));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce(yhat: &[f64], y: &[f64]) -> Result<OutputLoss> {
    check_len(yhat.len(), y.len(), "bce labels")?;
    if yhat.is_empty() {
        return Err(Error::Shape("bce on an empty batch".into()));
    }
    let b = yhat.len() as f64;
    let mut total = 0.0;
    let grad_yhat = yhat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= t * libm::log(p) + (1.0 - t) * libm::log(1.0 - p);
            (p - t) / (p * (1.0 - p)) / b
        })
        .collect();
    Ok(OutputLoss {
        value: total / b,
        grad_yhat,
    })
}

/// Signed difference `mean(ŷ | mask0) − mean(ŷ | mask1)` and its absolute-value
/// loss, with gradient `sign(Δ)·(1/n0 on mask0, −1/n1 on mask1)`.
fn group_gap(
    yhat: &[f64],
    in0: impl Fn(usize) -> bool,
    in1: impl Fn(usize) -> bool,
    empty: &'static str,
) -> Result<OutputLoss> {
    let (mut sum0, mut n0, mut sum1, mut n1) = (0.0, 0usize, 0.0, 0usize);
    for (i, &p) in yhat.iter().enumerate() {
        if in0(i) {
            sum0 += p;
            n0 += 1;
        } else if in1(i) {
            sum1 += p;
            n1 += 1;
        }
    }
    if n0 == 0 || n1 == 0 {
        return Err(Error::EmptyGroup(empty));
    }
    let delta = sum0 / n0 as f64 - sum1 / n1 as f64;
    let sign = if delta > 0.0 {
        1.0
    } else if delta < 0.0 {
        -1.0
    } else {
        0.0
    };
    let (g0, g1) = (sign / n0 as f64, -sign / n1 as f64);
    let grad_yhat = (0..yhat.len())
        .map(|i| {
            if in0(i) {
                g0
            } else if in1(i) {
                g1
            } else {
                0.0
            }
        })
        .collect();
    Ok(OutputLoss {
        value: libm::fabs(delta),
        grad_yhat,
    })
}

/// `|E[ŷ | s=0] − E[ŷ | s=1]|`.
pub fn delta_dp_relaxed(yhat: &[f64], s: &[f64]) -> Result<OutputLoss> {
    check_len(yhat.len(), s.len(), "sensitive attribute")?;
    group_gap(
        yhat,
        |i| s[i] == 0.0,
        |i| s[i] == 1.0,
        "a sensitive group has no samples",
    )
}

/// `|E[ŷ | s=0, y=1] − E[ŷ | s=1, y=1]|`.
pub fn delta_eo_relaxed(yhat: &[f64], y: &[f64], s: &[f64]) -> Result<OutputLoss> {
    check_len(yhat.len(), y.len(), "labels")?;
    check_len(yhat.len(), s.len(), "sensitive attribute")?;
    group_gap(
        yhat,
        |i| y[i] == 1.0 && s[i] == 0.0,
        |i| y[i] == 1.0 && s[i] == 1.0,
        "a sensitive group has no positive labels",
    )
}

/// Sum of the positive-label and negative-label group gaps.
pub fn delta_eodd_relaxed(yhat: &[f64], y: &[f64], s: &[f64]) -> Result<OutputLoss> {
    let pos = delta_eo_relaxed(yhat, y, s)?;
    let neg = group_gap(
        yhat,
        |i| y[i] == 0.0 && s[i] == 0.0,
        |i| y[i] == 0.0 && s[i] == 1.0,
        "a sensitive group has no negative labels",
    )?;
    Ok(OutputLoss {
        value: pos.value + neg.value,
        grad_yhat: pos.grad_yhat.iter().zip(&neg.grad_yhat).map(|(a, b)| a + b).collect(),
    })
}

/// `⟨ω1, ω2⟩² / ((|ω1|² + ε)(|ω2|² + ε))` over the whole flattened vectors.
pub fn cosine_reg(w1: &ParamVector, w2: &ParamVector) -> Result<CosineReg> {
    check_len(w1.len(), w2.len(), "endpoint lengths")?;
    let c = w1.dot(w2);
    let a = w1.dot(w1) + COSINE_EPS;
    let b = w2.dot(w2) + COSINE_EPS;
    let value = c * c / (a * b);
    // d/dω1 = 2c/(ab)·(ω2 − (c/a)ω1), and symmetrically for ω2.
    let k = 2.0 * c / (a * b);
    let mut grad_w1 = ParamVector::zeros(w1.len());
    let mut grad_w2 = ParamVector::zeros(w2.len());
    for i in 0..w1.len() {
        grad_w1[i] = k * (w2[i] - c / a * w1[i]);
        grad_w2[i] = k * (w1[i] - c / b * w2[i]);
    }
    Ok(CosineReg {
        value,
        grad_w1,
        grad_w2,
    })
}

/// Zero gradient of the right length, for batches whose fairness term is skipped.
pub(crate) fn zero_loss(len: usize) -> OutputLoss {
    OutputLoss {
        value: 0.0,
        grad_yhat: vec![0.0; len],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXACT: f64 = 1e-12;

    #[test]
    fn bce_values() {
        let l = bce(&[0.5], &[1.0]).unwrap();
        assert!((l.value - core::f64::consts::LN_2).abs() < EXACT);
        let l = bce(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l.value <= 1e-11);
        assert!(matches!(bce(&[0.5], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let yhat = [0.3, 0.8, 0.55, 0.02, 0.97];
        let y = [1.0, 0.0, 1.0, 0.0, 1.0];
        let g = bce(&yhat, &y).unwrap().grad_yhat;
        let h = 1e-6;
        for k in 0..yhat.len() {
            let mut p = yhat;
            p[k] += h;
            let mut m = yhat;
            m[k] -= h;
            let fd = (bce(&p, &y).unwrap().value - bce(&m, &y).unwrap().value) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn dp_examples() {
        assert!(delta_dp_relaxed(&[0.8, 0.8], &[0.0, 1.0]).unwrap().value.abs() < EXACT);
        assert!((delta_dp_relaxed(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value - 1.0).abs() < EXACT);
        let l = delta_dp_relaxed(&[0.9, 0.5, 0.3, 0.7], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((l.value - 0.2).abs() < EXACT);
        // Δ = +0.2 > 0: +1/2 for group 0, −1/2 for group 1.
        assert_eq!(l.grad_yhat, vec![0.5, 0.5, -0.5, -0.5]);
        assert!(matches!(
            delta_dp_relaxed(&[0.1, 0.2], &[1.0, 1.0]),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn balanced_groups_use_zero_subgradient() {
        let l = delta_dp_relaxed(&[0.8, 0.8], &[0.0, 1.0]).unwrap();
        assert_eq!(l.grad_yhat, vec![0.0, 0.0]);
    }

    #[test]
    fn eo_examples() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let s = [0.0, 0.0, 1.0, 1.0];
        let l = delta_eo_relaxed(&[0.9, 0.1, 0.6, 0.2], &y, &s).unwrap();
        assert!((l.value - 0.3).abs() < EXACT);
        assert_eq!(l.grad_yhat[1], 0.0);
        assert_eq!(l.grad_yhat[3], 0.0);
        assert!(delta_eo_relaxed(&[0.4, 0.9, 0.4, 0.1], &y, &s).unwrap().value.abs() < EXACT);
        assert!(matches!(
            delta_eo_relaxed(&[0.5; 4], &[1.0, 1.0, 0.0, 0.0], &s),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn eodd_examples() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let s = [0.0, 0.0, 1.0, 1.0];
        assert!((delta_eodd_relaxed(&[1.0, 0.0, 0.0, 1.0], &y, &s).unwrap().value - 2.0).abs() < EXACT);
        assert!(delta_eodd_relaxed(&[0.3; 4], &y, &s).unwrap().value.abs() < EXACT);
        assert!(matches!(
            delta_eodd_relaxed(&[0.5; 4], &[1.0, 1.0, 1.0, 0.0], &s),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let r = cosine_reg(&vec![1.0, 0.0].into(), &vec![0.0, 3.0].into()).unwrap();
        assert_eq!(r.value, 0.0);
        let w: ParamVector = vec![0.3, -2.0, 1.5].into();
        assert!((cosine_reg(&w, &w).unwrap().value - 1.0).abs() < EXACT);
        let r = cosine_reg(&vec![1.0, 1.0].into(), &vec![1.0, 0.0].into()).unwrap();
        assert!((r.value - 0.5).abs() < EXACT);
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let w1: ParamVector = vec![0.4, -1.2, 0.7, 0.05].into();
        let w2: ParamVector = vec![1.1, 0.3, -0.6, 0.9].into();
        let r = cosine_reg(&w1, &w2).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            for which in 0..2 {
                let (mut p1, mut p2, mut m1, mut m2) = (w1.clone(), w2.clone(), w1.clone(), w2.clone());
                if which == 0 {
                    p1[k] += h;
                    m1[k] -= h;
                } else {
                    p2[k] += h;
                    m2[k] -= h;
                }
                let fd = (cosine_reg(&p1, &p2).unwrap().value - cosine_reg(&m1, &m2).unwrap().value) / (2.0 * h);
                let g = if which == 0 { r.grad_w1[k] } else { r.grad_w2[k] };
                assert!(
                    (fd - g).abs() <= (1e-4 * fd.abs()).max(1e-9),
                    "{which}/{k}: {fd} vs {g}"
                );
            }
        }
    }

    fn cells() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        // First four rows cover every (y, s) cell.
        prop::collection::vec((0.0f64..1.0, 0u8..2, 0u8..2), 0..20).prop_map(|rest| {
            let mut yhat = vec![0.2, 0.7, 0.4, 0.9];
            let mut y = vec![1.0, 0.0, 1.0, 0.0];
            let mut s = vec![0.0, 0.0, 1.0, 1.0];
            for (p, a, b) in rest {
                yhat.push(p);
                y.push(a as f64);
                s.push(b as f64);
            }
            (yhat, y, s)
        })
    }

    fn all_metrics(yhat: &[f64], y: &[f64], s: &[f64]) -> [f64; 3] {
        [
            delta_dp_relaxed(yhat, s).unwrap().value,
            delta_eo_relaxed(yhat, y, s).unwrap().value,
            delta_eodd_relaxed(yhat, y, s).unwrap().value,
        ]
    }

    proptest! {
        #[test]
        fn fairness_invariances((yhat, y, s) in cells(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let base = all_metrics(&yhat, &y, &s);
            prop_assert!((0.0..=1.0).contains(&base[0]));
            prop_assert!((0.0..=1.0).contains(&base[1]));
            prop_assert!((0.0..=2.0).contains(&base[2]));

            let mut order: Vec<usize> = (0..yhat.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let permuted = all_metrics(&pick(&yhat), &pick(&y), &pick(&s));
            let swapped_s: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
            let swapped = all_metrics(&yhat, &y, &swapped_s);
            for k in 0..3 {
                prop_assert!((base[k] - permuted[k]).abs() < 1e-12);
                prop_assert!((base[k] - swapped[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn fairness_gradients_match_finite_differences((yhat, y, s) in cells()) {
            let yhat: Vec<f64> = yhat.iter().map(|p| 0.05 + 0.9 * p).collect();
            for metric in [FairnessMetric::Dp, FairnessMetric::Eo, FairnessMetric::Eodd] {
                let l = metric.evaluate(&yhat, &y, &s).unwrap();
                let h = 1e-7;
                for k in 0..yhat.len() {
                    let mut p = yhat.clone();
                    p[k] += h;
                    let mut m = yhat.clone();
                    m[k] -= h;
                    let vp = metric.evaluate(&p, &y, &s).unwrap().value;
                    let vm = metric.evaluate(&m, &y, &s).unwrap().value;
                    // Skip coordinates where the step straddles a kink of |Δ|.
                    let one_sided = ((vp - l.value) - (l.value - vm)).abs() > 1e-9;
                    if one_sided { continue; }
                    let fd = (vp - vm) / (2.0 * h);
                    prop_assert!((fd - l.grad_yhat[k]).abs() <= (1e-4 * fd.abs()).max(1e-6));
                }
            }
        }

        #[test]
        fn cosine_scale_invariant(
            w1 in prop::collection::vec(-3.0f64..3.0, 5),
            w2 in prop::collection::vec(-3.0f64..3.0, 5),
            c in prop_oneof![-10.0f64..-0.5, 0.5f64..10.0],
        ) {
            let w1: ParamVector = w1.into();
            let w2: ParamVector = w2.into();
            prop_assume!(w1.dot(&w1) > 1.0 && w2.dot(&w2) > 1.0);
            let a = cosine_reg(&w1, &w2).unwrap().value;
            let b = cosine_reg(&w1.scaled(c), &w2).unwrap().value;
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
