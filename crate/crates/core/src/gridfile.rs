//! Grid-sample files: one JSON header line, then row-major little-endian `f64` values.
//!
//! ```
//! use conflat::gridfile::{GridHeader, read_grid, write_grid};
//!
//! let header = GridHeader { n: 1, ambient_dim: 2, grid_shape: vec![3], lower: vec![0.0], upper: vec![1.0] };
//! let values = vec![0.0, 1.0, 0.5, 2.0, 1.0, 3.0];
//! let mut buf = Vec::new();
//! write_grid(&mut buf, &header, &values).unwrap();
//! let (h, v) = read_grid(&mut buf.as_slice()).unwrap();
//! assert_eq!(h, header);
//! assert_eq!(v, values);
//! ```

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::map::ChartDomain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub n: usize,
    #[serde(rename = "N_amb")]
    pub ambient_dim: usize,
    pub grid_shape: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridHeader {
    pub fn for_domain(domain: &ChartDomain, ambient_dim: usize) -> Self {
        GridHeader {
            n: domain.dim(),
            ambient_dim,
            grid_shape: domain.grid_shape.clone(),
            lower: domain.lower.clone(),
            upper: domain.upper.clone(),
        }
    }

    pub fn value_count(&self) -> usize {
        self.grid_shape.iter().product::<usize>() * self.ambient_dim
    }
}

pub fn write_grid<W: Write>(w: &mut W, header: &GridHeader, values: &[f64]) -> io::Result<()> {
    if values.len() != header.value_count() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} values for a header expecting {}", values.len(), header.value_count()),
        ));
    }
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid<R: Read>(r: &mut R) -> io::Result<(GridHeader, Vec<f64>)> {
    let mut br = io::BufReader::new(r);
    let mut line = String::new();
    br.read_line(&mut line)?;
    let header: GridHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut bytes = Vec::new();
    br.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.value_count() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("expected {} values, found {} bytes", header.value_count(), bytes.len()),
        ));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok((header, values))
}
