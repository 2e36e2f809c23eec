//! Point-cloud CSV serialization.
//!
//! Format: header row `x0,x1,...,x{D-1}`, one row per point. Values are
//! written with Rust's shortest round-trip float formatting, so read-back is
//! bit-exact (well past 15 significant digits).

use std::path::Path;

use crate::error::{Error, Result};
use crate::manifolds::PointCloud;

/// Write the cloud's coordinates (the clean companion, if any, is not
/// written here; callers persist it as a separate file with the same schema).
pub fn write_point_cloud(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let header: Vec<String> = (0..pc.dim()).map(|j| format!("x{j}")).collect();
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(pc.dim());
    for row in pc.rows() {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a point cloud, validating the `x0..x{D-1}` header.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path_str = path.as_ref().display().to_string();
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let header = r.headers()?.clone();
    let dim = header.len();
    if dim == 0 {
        return Err(Error::Format {
            path: path_str,
            reason: "empty header".into(),
        });
    }
    for (j, name) in header.iter().enumerate() {
        if name != format!("x{j}") {
            return Err(Error::Format {
                path: path_str,
                reason: format!("expected header column x{j}, found {name:?}"),
            });
        }
    }
    let mut coords = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim {
            return Err(Error::Format {
                path: path_str,
                reason: format!("row {line} has {} fields, expected {dim}", rec.len()),
            });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|e| Error::Format {
                path: path_str.clone(),
                reason: format!("row {line}: bad float {field:?}: {e}"),
            })?;
            coords.push(v);
        }
    }
    if coords.is_empty() {
        return Err(Error::Format {
            path: path_str,
            reason: "no data rows".into(),
        });
    }
    PointCloud::from_rows(coords, dim)
}
