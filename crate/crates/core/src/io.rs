//! Deterministic data export and import.
//!
//! Every writer is byte-deterministic for identical inputs: floats are
//! rendered with the shortest representation that parses back to the same
//! bits, map order is row-major, and JSON objects use stable field order.
//! Rerunning a seeded experiment therefore reproduces its output files
//! exactly, which the regression suite relies on.

use crate::fiber::{TmProvenance, TransmissionMatrix};
use crate::optimize::TracePoint;
use crate::quantum::RateMap;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Errors from file export and import.
#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("matrix file declares {rows}×{cols} entries but carries {got} values")]
    MatrixShape {
        rows: usize,
        cols: usize,
        got: usize,
    },
    #[error("map holds {got} values for a {expected}-cell scan")]
    MapShape { got: usize, expected: usize },
}

/// Write a rate map as CSV with header `x_um,y_um,value`, row-major scan
/// order (y outer, x inner).
pub fn write_map_csv(path: &Path, map: &RateMap) -> Result<(), IoError> {
    if map.values.len() != map.scan.len() {
        return Err(IoError::MapShape {
            got: map.values.len(),
            expected: map.scan.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "x_um,y_um,value")?;
    for iy in 0..map.scan.samples {
        for ix in 0..map.scan.samples {
            writeln!(
                out,
                "{:e},{:e},{:e}",
                map.scan.coord_um(ix),
                map.scan.coord_um(iy),
                map.value_at(ix, iy)
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Write a convergence trace as CSV with header
/// `iteration,best_cost,mean_cost`.
pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iteration,best_cost,mean_cost")?;
    for point in trace {
        writeln!(
            out,
            "{},{:e},{:e}",
            point.iteration, point.best_cost, point.mean_cost
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Write a rate map as a binary 8-bit portable graymap (P5), normalized to
/// the map maximum. Rows run from the largest y coordinate downward so the
/// image matches the physical orientation of the scan.
pub fn write_map_pgm(path: &Path, map: &RateMap) -> Result<(), IoError> {
    if map.values.len() != map.scan.len() {
        return Err(IoError::MapShape {
            got: map.values.len(),
            expected: map.scan.len(),
        });
    }
    let n = map.scan.samples;
    let peak = map.max();
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{n} {n}\n255\n")?;
    let mut pixels = Vec::with_capacity(n * n);
    for iy in (0..n).rev() {
        for ix in 0..n {
            let v = if peak > 0.0 {
                (map.value_at(ix, iy) / peak * 255.0)
                    .round()
                    .clamp(0.0, 255.0)
            } else {
                0.0
            };
            pixels.push(v as u8);
        }
    }
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}

/// Write any serializable report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// On-disk form of a transmission matrix: provenance plus row-major
/// interleaved real/imaginary parts.
#[derive(Debug, Serialize, Deserialize)]
struct TmFile {
    provenance: TmProvenance,
    rows: usize,
    cols: usize,
    /// Row-major `[re₀₀, im₀₀, re₀₁, im₀₁, …]`.
    values: Vec<f64>,
}

/// Export a transmission matrix with its provenance as JSON.
pub fn write_transmission_matrix(path: &Path, tm: &TransmissionMatrix) -> Result<(), IoError> {
    let (rows, cols) = (tm.matrix.nrows(), tm.matrix.ncols());
    let mut values = Vec::with_capacity(2 * rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            values.push(tm.matrix[(i, j)].re);
            values.push(tm.matrix[(i, j)].im);
        }
    }
    write_json(
        path,
        &TmFile {
            provenance: tm.provenance.clone(),
            rows,
            cols,
            values,
        },
    )
}

/// Import a transmission matrix written by [`write_transmission_matrix`].
pub fn read_transmission_matrix(path: &Path) -> Result<TransmissionMatrix, IoError> {
    let file: TmFile = serde_json::from_reader(File::open(path)?)?;
    if file.values.len() != 2 * file.rows * file.cols {
        return Err(IoError::MatrixShape {
            rows: file.rows,
            cols: file.cols,
            got: file.values.len() / 2,
        });
    }
    let matrix = DMatrix::from_fn(file.rows, file.cols, |i, j| {
        let base = 2 * (i * file.cols + j);
        Complex64::new(file.values[base], file.values[base + 1])
    });
    Ok(TransmissionMatrix {
        matrix,
        provenance: file.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{Displacements, FiberModel, LossModel};
    use crate::quantum::ScanSpec;

    fn tiny_map() -> RateMap {
        RateMap {
            scan: ScanSpec {
                side_um: 4.0,
                samples: 2,
                detector_radius_um: 1.0,
            },
            values: vec![0.0, 0.25, 0.5, 1.0],
            fixed: None,
        }
    }

    #[test]
    fn map_csv_layout_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        write_map_csv(&path, &tiny_map()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "x_um,y_um,value\n\
             -1e0,-1e0,0e0\n\
             1e0,-1e0,2.5e-1\n\
             -1e0,1e0,5e-1\n\
             1e0,1e0,1e0\n"
        );
    }

    #[test]
    fn map_csv_roundtrips_values_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.csv");
        let mut map = tiny_map();
        map.values = vec![1.0 / 3.0, 2.0f64.sqrt() * 1e-7, 6.02e23, 0.1 + 0.2];
        write_map_csv(&path, &map).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|line| line.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(parsed, map.values, "formatting must preserve bits");
    }

    #[test]
    fn malformed_map_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = tiny_map();
        map.values.pop();
        assert!(matches!(
            write_map_csv(&dir.path().join("bad.csv"), &map),
            Err(IoError::MapShape {
                got: 3,
                expected: 4
            })
        ));
    }

    #[test]
    fn trace_csv_layout_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![
            TracePoint {
                iteration: 0,
                best_cost: 0.5,
                mean_cost: 0.25,
            },
            TracePoint {
                iteration: 1,
                best_cost: 0.75,
                mean_cost: 0.5,
            },
        ];
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "iteration,best_cost,mean_cost\n0,5e-1,2.5e-1\n1,7.5e-1,5e-1\n"
        );
    }

    #[test]
    fn pgm_is_normalized_and_oriented() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        write_map_pgm(&path, &tiny_map()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        // Top image row is the largest y: values (0.5, 1.0) → (128, 255).
        assert_eq!(&bytes[header.len()..], &[128, 255, 0, 64]);
    }

    #[test]
    fn transmission_matrix_roundtrips_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tm.json");
        let model = FiberModel::new(8, 3, 2.5, LossModel::Scalar { beta: 0.03 }, 9);
        let mut rng = crate::seeds::stream(9, "io", 0);
        let tm = model.assemble(&Displacements::random(3, &mut rng)).unwrap();
        write_transmission_matrix(&path, &tm).unwrap();
        let back = read_transmission_matrix(&path).unwrap();
        assert_eq!(back.matrix, tm.matrix, "matrix must survive the roundtrip");
        assert_eq!(back.provenance.seed, tm.provenance.seed);
        assert_eq!(back.provenance.displacements, tm.provenance.displacements);
    }

    #[test]
    fn truncated_matrix_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tm.json");
        let model = FiberModel::new(4, 2, 2.5, LossModel::Lossless, 9);
        let tm = model.assemble(&Displacements::zeros(2)).unwrap();
        write_transmission_matrix(&path, &tm).unwrap();
        let mut file: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        file["values"].as_array_mut().unwrap().pop();
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            read_transmission_matrix(&path),
            Err(IoError::MatrixShape { .. })
        ));
    }
}
