//! Recorded versions of the daily energy balance, vectorized over days so a
//! window of predictions costs a handful of tape nodes.

use std::rc::Rc;

use super::{density, svp, PhysicsConstants, SurfaceForcing, KELVIN, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::sim::geometry::LakeGeometry;

/// Residuals for days `0..T-1` of a `[n_depths x T]` prediction, as a
/// `[1 x T-1]` value. `forcing[t]` must describe day `t` of the window.
pub fn energy_residuals_tape<'t>(
    tape: &'t Tape,
    pred: Var<'t>,
    forcing: &[SurfaceForcing],
    geometry: &LakeGeometry,
    consts: &PhysicsConstants,
) -> Result<Var<'t>> {
    let (n_depths, n_days) = (pred.rows(), pred.cols());
    if n_depths != geometry.n_layers() {
        return Err(Error::Shape(format!(
            "prediction has {n_depths} depths, geometry {}",
            geometry.n_layers()
        )));
    }
    if n_days < 2 {
        return Err(Error::InvalidInput("energy residuals need at least two days".into()));
    }
    if forcing.len() < n_days - 1 {
        return Err(Error::Shape(format!(
            "{} forcing days for a {n_days}-day window",
            forcing.len()
        )));
    }
    let m = n_days - 1;
    let weights: Vec<f64> = geometry
        .areas()
        .iter()
        .map(|a| consts.c_w * a * geometry.layer_thickness())
        .collect();
    let weights = tape.constant(Tensor::matrix(1, n_depths, weights));
    let energy = weights.matmul(pred * density(pred));
    let du = energy.slice_cols(1, n_days) - energy.slice_cols(0, m);

    let row = |f: fn(&SurfaceForcing) -> f64| tape.constant(Tensor::matrix(1, m, forcing[..m].iter().map(f).collect()));
    let f_in = row(|f| f.incoming());
    let latent_coeff = row(|f| f.latent_coeff);
    let sensible_coeff = row(|f| f.sensible_coeff);
    let t_air = row(|f| f.air_temp);

    let ts = pred.slice((0, 1), (0, m));
    let lw_out = (ts + KELVIN).powi(4) * (consts.emissivity * consts.stefan_boltzmann);
    let latent = svp(ts) * latent_coeff;
    let sensible = (ts - t_air) * sensible_coeff;
    let f_out = lw_out + latent + sensible;
    Ok(du * (1.0 / (geometry.surface_area() * SECONDS_PER_DAY)) - f_in + f_out)
}

/// Mean of `relu(|r| - tau)` over the ice-free entries of `residuals`.
///
/// Returns `None` when no entry is ice-free.
pub fn ec_loss_tape<'t>(residuals: Var<'t>, ice_free: &[bool], tau: f64) -> Result<Option<Var<'t>>> {
    let n = residuals.value().len();
    if ice_free.len() != n {
        return Err(Error::Shape(format!("{n} residuals vs {} mask entries", ice_free.len())));
    }
    let idx: Rc<[usize]> = ice_free
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let picked = if idx.len() == n { residuals } else { residuals.gather(idx) };
    Ok(Some((picked.abs() - tau).relu().mean()))
}
