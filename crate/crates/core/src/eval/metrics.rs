use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of determination about the target mean.
pub fn r2(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    if target.len() < 2 {
        return Err(Error::ZeroVariance("r2 needs at least 2 targets".into()));
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance("r2 targets are constant".into()));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    if target.is_empty() {
        return Err(Error::invalid("rmse of an empty set"));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum::<f64>() / target.len() as f64;
    Ok(mse.sqrt())
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            context: "metric".into(),
            detail: format!("{} predictions for {} targets", pred.len(), target.len()),
        });
    }
    Ok(())
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    /// `sd / √n` with the `n − 1` sample SD; 0 when `n = 1`.
    pub sem: f64,
    pub n: usize,
    /// False when `n = 1` and the SEM is undefined.
    pub sem_defined: bool,
}

pub fn mean_sem(values: &[f64]) -> Result<MeanSem> {
    let n = values.len();
    if n == 0 {
        return Err(Error::invalid("mean of an empty set"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(MeanSem {
            mean,
            sem: 0.0,
            n,
            sem_defined: false,
        });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanSem {
        mean,
        sem: (var / n as f64).sqrt(),
        n,
        sem_defined: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r2_trivial_cases() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(r2(&t, &t).unwrap(), 1.0);
        assert!(r2(&[3.5; 4], &t).unwrap().abs() < 1e-15);
        assert!(r2(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(r2(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn rmse_trivial_cases() {
        let t = [100.0, 250.0, 300.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 10.0).collect();
        assert!((rmse(&shifted, &t).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_value_sem_is_flagged() {
        let m = mean_sem(&[0.4]).unwrap();
        assert_eq!((m.mean, m.sem, m.sem_defined), (0.4, 0.0, false));
        assert_eq!(mean_sem(&[0.3; 5]).unwrap().sem, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn r2_and_rmse_match_oracle(pairs in proptest::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 2..40)) {
            let (pred, target): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let n = target.len() as f64;
            // Mean squared residual over Welford population variance.
            let msr = pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
            let (mut mean, mut m2) = (0.0, 0.0);
            for (i, t) in target.iter().enumerate() {
                let d = t - mean;
                mean += d / (i + 1) as f64;
                m2 += d * (t - mean);
            }
            let var = m2 / n;
            prop_assume!(var > 1e-3);
            let got = r2(&pred, &target).unwrap();
            prop_assert!((got - (1.0 - msr / var)).abs() <= 1e-12 * (1.0 + got.abs()));
            prop_assert!((rmse(&pred, &target).unwrap() - msr.sqrt()).abs() <= 1e-12 * (1.0 + msr.sqrt()));
        }
    }

    proptest! {
        #[test]
        fn sem_matches_direct_formula(v in proptest::collection::vec(-10.0f64..10.0, 2..30)) {
            let m = mean_sem(&v).unwrap();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!((m.sem - sd / n.sqrt()).abs() <= 1e-12 * (1.0 + m.sem));
        }
    }
}
