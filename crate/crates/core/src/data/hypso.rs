use std::path::Path;

use super::csvio::{self, CsvTable};
use crate::error::Result;
use crate::sim::geometry::{interpolate_hypsography, LakeGeometry};

/// Reads `depth_m,area_m2` and interpolates it onto the 0.5 m layer grid.
pub fn load_hypsography(path: impl AsRef<Path>) -> Result<LakeGeometry> {
    let table = CsvTable::read(path.as_ref())?;
    table.require("depth_m")?;
    table.require("area_m2")?;
    let points = (0..table.len())
        .map(|r| Ok((table.f64(r, "depth_m")?, table.f64(r, "area_m2")?)))
        .collect::<Result<Vec<_>>>()?;
    interpolate_hypsography(&points)
}

/// Writes the layer grid as `depth_m,area_m2`.
pub fn save_hypsography(geometry: &LakeGeometry, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("depth_m,area_m2\n");
    for (d, a) in geometry.areas().iter().enumerate() {
        out.push_str(&format!("{},{}\n", geometry.depth(d), a));
    }
    // closing point at the bottom so the file reloads onto the same grid
    let last = *geometry.areas().last().expect("non-empty geometry");
    out.push_str(&format!("{},{}\n", geometry.max_depth, last));
    csvio::write_atomic(path.as_ref(), out.as_bytes())
}
