use std::rc::Rc;

use crate::data::{ObservationSet, TemperatureField};
use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor, Var};

/// Root mean squared error over the observed cells of a `[depth][day]`
/// prediction with `n_days` columns.
pub fn rmse_values(pred: &[f64], n_days: usize, obs: &ObservationSet) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    if n_days == 0 || !pred.len().is_multiple_of(n_days) {
        return Err(Error::Shape(format!("{} predictions do not split into {n_days} days", pred.len())));
    }
    obs.check_bounds(pred.len() / n_days, n_days)?;
    let sse: f64 = obs
        .iter()
        .map(|o| (pred[o.depth * n_days + o.time] - o.temp).powi(2))
        .sum();
    Ok((sse / obs.len() as f64).sqrt())
}

pub fn rmse_loss(pred: &TemperatureField, obs: &ObservationSet) -> Result<f64> {
    rmse_values(pred.values(), pred.n_days(), obs)
}

/// Recorded RMSE of a `[depth x T]` prediction against observations indexed
/// within the same window.
pub fn rmse_tape<'t>(tape: &'t Tape, pred: Var<'t>, obs: &ObservationSet) -> Result<Var<'t>> {
    if obs.is_empty() {
        return Err(Error::EmptyObservations);
    }
    let (n_depths, n_days) = (pred.rows(), pred.cols());
    obs.check_bounds(n_depths, n_days)?;
    let idx: Rc<[usize]> = obs.iter().map(|o| o.depth * n_days + o.time).collect();
    let target = tape.constant(Tensor::vector(obs.iter().map(|o| o.temp).collect()));
    Ok((pred.gather(idx) - target).square().mean().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Observation, Source};

    fn obs(items: &[(usize, usize, f64)]) -> ObservationSet {
        ObservationSet::new(
            items
                .iter()
                .map(|&(depth, time, temp)| Observation { depth, time, temp })
                .collect(),
            Source::Synthetic,
        )
        .unwrap()
    }

    #[test]
    fn hand_values() {
        let pred = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(rmse_values(&pred, 2, &obs(&[(0, 0, 1.0), (1, 1, 4.0)])).unwrap(), 0.0);
        assert_eq!(rmse_values(&pred, 2, &obs(&[(0, 1, 4.0)])).unwrap(), 2.0);
        let r = rmse_values(&pred, 2, &obs(&[(0, 0, 4.0), (1, 0, -1.0)])).unwrap();
        assert_eq!(r, (12.5f64).sqrt());
    }

    #[test]
    fn empty_set_is_an_error_not_zero() {
        let empty = ObservationSet::empty(Source::Real);
        assert!(matches!(rmse_values(&[1.0], 1, &empty), Err(Error::EmptyObservations)));
        assert!(rmse_values(&[1.0], 1, &obs(&[(3, 0, 1.0)])).is_err());
    }

    #[test]
    fn tape_matches_plain() {
        let pred = vec![1.0, 2.5, -3.0, 4.0, 0.5, 7.0];
        let o = obs(&[(0, 2, 1.0), (1, 0, 2.0), (1, 2, 5.5)]);
        let tape = Tape::new();
        let p = tape.param(Tensor::matrix(2, 3, pred.clone()));
        let r = rmse_tape(&tape, p, &o).unwrap();
        assert!((r.item() - rmse_values(&pred, 3, &o).unwrap()).abs() < 1e-15);
    }
}
