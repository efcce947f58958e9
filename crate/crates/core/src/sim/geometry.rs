use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed vertical resolution of every lake grid, in metres.
pub const LAYER_THICKNESS: f64 = 0.5;

/// Surface area of the default Mendota-like lake, m².
pub const DEFAULT_SURFACE_AREA: f64 = 4.0e7;
/// Maximum depth of the default lake, m.
pub const DEFAULT_MAX_DEPTH: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cone,
    Barrel,
    Martini,
    Measured,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Cone => "cone",
            Shape::Barrel => "barrel",
            Shape::Martini => "martini",
            Shape::Measured => "measured",
        })
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cone" => Ok(Shape::Cone),
            "barrel" => Ok(Shape::Barrel),
            "martini" => Ok(Shape::Martini),
            "measured" => Ok(Shape::Measured),
            other => Err(Error::InvalidInput(format!("unknown lake shape '{other}'"))),
        }
    }
}

/// Hypsography on the 0.5 m layer grid.
///
/// Layer `d` spans depths `[d * 0.5, (d + 1) * 0.5)` and `areas[d]` is the
/// cross-sectional area at its top. `max_depth` is the bottom of the deepest
/// layer and is not itself a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LakeGeometry {
    pub shape: Shape,
    pub max_depth: f64,
    areas: Vec<f64>,
}

impl LakeGeometry {
    pub fn from_areas(shape: Shape, areas: Vec<f64>) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::InvalidInput("geometry needs at least one layer".into()));
        }
        if let Some((d, a)) = areas.iter().enumerate().find(|(_, a)| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "layer {d} has non-positive area {a}"
            )));
        }
        Ok(Self {
            shape,
            max_depth: areas.len() as f64 * LAYER_THICKNESS,
            areas,
        })
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn n_layers(&self) -> usize {
        self.areas.len()
    }

    pub fn surface_area(&self) -> f64 {
        self.areas[0]
    }

    pub fn layer_thickness(&self) -> f64 {
        LAYER_THICKNESS
    }

    /// Depth of the top of layer `d`, m.
    pub fn depth(&self, d: usize) -> f64 {
        d as f64 * LAYER_THICKNESS
    }

    pub fn depths(&self) -> Vec<f64> {
        (0..self.n_layers()).map(|d| self.depth(d)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.areas.iter().sum::<f64>() * LAYER_THICKNESS
    }
}

fn layer_count(max_depth: f64) -> Result<usize> {
    let n = max_depth / LAYER_THICKNESS;
    if !(max_depth > 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "max depth {max_depth} m is not a positive multiple of {LAYER_THICKNESS} m"
        )));
    }
    Ok(n.round() as usize)
}

/// Idealized hypsography with the given surface area and depth.
///
/// * cone: area falls linearly from `surface_area` to zero at `max_depth`;
/// * barrel: constant area;
/// * martini: `surface_area * (1 - z / max_depth)^2`.
pub fn make_geometry(shape: Shape, surface_area: f64, max_depth: f64) -> Result<LakeGeometry> {
    if !(surface_area > 0.0) {
        return Err(Error::InvalidInput(format!("surface area {surface_area} must be positive")));
    }
    let n = layer_count(max_depth)?;
    let areas = (0..n)
        .map(|d| {
            let frac = d as f64 * LAYER_THICKNESS / max_depth;
            match shape {
                Shape::Cone => Ok(surface_area * (1.0 - frac)),
                Shape::Barrel => Ok(surface_area),
                Shape::Martini => Ok(surface_area * (1.0 - frac).powi(2)),
                Shape::Measured => Err(Error::InvalidInput(
                    "measured geometry comes from a hypsography file".into(),
                )),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LakeGeometry::from_areas(shape, areas)
}

/// Piecewise-linear interpolation of a depth/area table onto the layer grid.
///
/// `points` must be sorted by strictly increasing depth, start at the surface
/// and reach the lake bottom; the deepest depth becomes `max_depth`.
pub fn interpolate_hypsography(points: &[(f64, f64)]) -> Result<LakeGeometry> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("hypsography needs at least two points".into()));
    }
    if points[0].0 != 0.0 {
        return Err(Error::InvalidInput(format!(
            "hypsography must start at depth 0, starts at {}",
            points[0].0
        )));
    }
    for w in points.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::InvalidInput(format!(
                "hypsography depths must increase strictly ({} then {})",
                w[0].0, w[1].0
            )));
        }
    }
    let max_depth = points[points.len() - 1].0;
    let n = layer_count(max_depth)?;
    let areas = (0..n)
        .map(|d| area_at(points, d as f64 * LAYER_THICKNESS))
        .collect();
    LakeGeometry::from_areas(Shape::Measured, areas)
}

/// Linear interpolation in a sorted depth/area table; exact at table points.
pub fn area_at(points: &[(f64, f64)], depth: f64) -> f64 {
    if depth <= points[0].0 {
        return points[0].1;
    }
    for w in points.windows(2) {
        let ((z0, a0), (z1, a1)) = (w[0], w[1]);
        if depth == z1 {
            return a1;
        }
        if depth < z1 {
            let f = (depth - z0) / (z1 - z0);
            return a0 + f * (a1 - a0);
        }
    }
    points[points.len() - 1].1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrel_is_constant() {
        let g = make_geometry(Shape::Barrel, 1e6, 10.0).unwrap();
        assert_eq!(g.n_layers(), 20);
        assert!(g.areas().iter().all(|&a| a == 1e6));
    }

    #[test]
    fn cone_tapers_to_one_layer_share() {
        let g = make_geometry(Shape::Cone, 4e7, 25.0).unwrap();
        let n = g.n_layers();
        assert_eq!(n, 50);
        assert!(g.areas()[n - 1] <= 4e7 / n as f64 * (1.0 + 1e-12));
        assert!(g.areas().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn martini_midpoint() {
        let g = make_geometry(Shape::Martini, 4e7, 25.0).unwrap();
        // layer 25 starts at 12.5 m
        assert!((g.areas()[25] - 1e7).abs() < 1e-6);
        assert_eq!(g.surface_area(), 4e7);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_geometry(Shape::Cone, 4e7, 25.2).is_err());
        assert!(make_geometry(Shape::Cone, 0.0, 25.0).is_err());
        assert!(make_geometry(Shape::Measured, 1.0, 1.0).is_err());
        assert!("bucket".parse::<Shape>().is_err());
    }

    #[test]
    fn hypsography_interpolation() {
        let pts = [(0.0, 4e7), (12.5, 2e7), (25.0, 1e5)];
        let g = interpolate_hypsography(&pts).unwrap();
        assert_eq!(g.n_layers(), 50);
        assert_eq!(g.areas()[0], 4e7);
        assert_eq!(g.areas()[25], 2e7);
        // 5 m: 4e7 + (5/12.5)(2e7 - 4e7) = 3.2e7
        assert!((g.areas()[10] - 3.2e7).abs() < 1e-6);
        // 20 m: 2e7 + (7.5/12.5)(1e5 - 2e7) = 8.06e6
        assert!((g.areas()[40] - 8.06e6).abs() < 1e-6);
        assert_eq!(area_at(&pts, 25.0), 1e5);
    }
}
