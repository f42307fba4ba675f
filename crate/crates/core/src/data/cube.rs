//! Band-sequential rasters: a `<name>.raw` little-endian payload plus a
//! `<name>.hdr` text sidecar of `key=value` lines.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Reflectance cube stored band-sequentially as `[bands, rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    bands: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SpectralCube {
    pub fn new(bands: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if bands < 2 {
            return Err(Error::shape("cube", format!("need at least 2 bands, got {bands}")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::shape("cube", format!("empty spatial extent {rows}x{cols}")));
        }
        if data.len() != bands * rows * cols {
            return Err(Error::shape(
                "cube",
                format!("{bands}x{rows}x{cols} needs {} values, got {}", bands * rows * cols, data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let (b, r, c) = (i / (rows * cols), i / cols % rows, i % cols);
            return Err(Error::NonFinite {
                what: format!("cube value {} at band {b}, row {r}, col {c}", data[i]),
            });
        }
        Ok(Self { bands, rows, cols, data })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data[(band * self.rows + row) * self.cols + col]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.data[band * self.rows * self.cols..][..self.rows * self.cols]
    }

    pub fn pixel(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, row, col)).collect()
    }
}

/// Per-pixel class ids, `0` meaning unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRaster {
    rows: usize,
    cols: usize,
    labels: Vec<u16>,
}

impl LabelRaster {
    pub fn new(rows: usize, cols: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape(
                "labels",
                format!("{rows}x{cols} needs {} labels, got {}", rows * cols, labels.len()),
            ));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.cols + col]
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Pixel count per class id `1..=max_label`, at index `id - 1`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.max_label() as usize];
        for &l in self.labels.iter().filter(|&&l| l != 0) {
            counts[l as usize - 1] += 1;
        }
        counts
    }

    pub fn matches(&self, cube: &SpectralCube) -> Result<()> {
        if (self.rows, self.cols) != (cube.rows(), cube.cols()) {
            return Err(Error::shape(
                "labels",
                format!(
                    "label raster is {}x{} but cube is {}x{}",
                    self.rows,
                    self.cols,
                    cube.rows(),
                    cube.cols()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Float32,
    Uint16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Uint16 => 2,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::Float32 => "float32",
            Dtype::Uint16 => "uint16",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
}

impl Header {
    pub fn payload_len(&self) -> usize {
        self.bands * self.rows * self.cols * self.dtype.size()
    }

    pub fn to_text(&self) -> String {
        format!(
            "bands={}\nrows={}\ncols={}\ndtype={}\ninterleave=bsq\nbyteorder=little\n",
            self.bands, self.rows, self.cols, self.dtype
        )
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let (mut bands, mut rows, mut cols, mut dtype) = (None, None, None, None);
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |msg: String| Error::format(origin, format!("line {}: {msg}", no + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let count = || -> Result<usize> { value.parse().map_err(|_| fail(format!("`{key}` is not a count: `{value}`"))) };
            match key {
                "bands" => bands = Some(count()?),
                "rows" => rows = Some(count()?),
                "cols" => cols = Some(count()?),
                "dtype" => {
                    dtype = Some(match value {
                        "float32" => Dtype::Float32,
                        "uint16" => Dtype::Uint16,
                        other => return Err(fail(format!("unknown dtype `{other}`"))),
                    })
                }
                "interleave" if value != "bsq" => return Err(fail(format!("unsupported interleave `{value}`"))),
                "byteorder" if value != "little" => return Err(fail(format!("unsupported byteorder `{value}`"))),
                _ => {}
            }
        }
        let need = |v: Option<usize>, key: &str| v.ok_or_else(|| Error::format(origin, format!("missing `{key}`")));
        Ok(Self {
            bands: need(bands, "bands")?,
            rows: need(rows, "rows")?,
            cols: need(cols, "cols")?,
            dtype: dtype.ok_or_else(|| Error::format(origin, "missing `dtype`"))?,
        })
    }
}

/// `(raw, hdr)` paths for a stem or either of the two files.
pub fn raster_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("raw") | Some("hdr") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".raw"), with(".hdr"))
}

fn write_raster(path: &Path, header: Header, payload: Vec<u8>) -> Result<(PathBuf, PathBuf)> {
    let (raw, hdr) = raster_paths(path);
    if let Some(dir) = raw.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&hdr, header.to_text()).map_err(|e| Error::io(&hdr, e))?;
    fs::write(&raw, payload).map_err(|e| Error::io(&raw, e))?;
    Ok((raw, hdr))
}

fn read_raster(path: &Path, want: Dtype) -> Result<(Header, Vec<u8>, PathBuf)> {
    let (raw, hdr) = raster_paths(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let header = Header::parse(&text, &hdr)?;
    if header.dtype != want {
        return Err(Error::format(&hdr, format!("expected dtype {want}, header says {}", header.dtype)));
    }
    let payload = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if payload.len() != header.payload_len() {
        return Err(Error::format(
            &raw,
            format!(
                "payload size mismatch: header {}x{}x{} {} expects {} bytes, found {}",
                header.bands,
                header.rows,
                header.cols,
                header.dtype,
                header.payload_len(),
                payload.len()
            ),
        ));
    }
    Ok((header, payload, raw))
}

/// Writes the cube as 32-bit floats. Values not representable in `f32` are
/// rounded.
pub fn save_cube(cube: &SpectralCube, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let header = Header {
        bands: cube.bands,
        rows: cube.rows,
        cols: cube.cols,
        dtype: Dtype::Float32,
    };
    let payload = cube.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_raster(path, header, payload)
}

pub fn load_cube(path: &Path) -> Result<SpectralCube> {
    let (h, payload, raw) = read_raster(path, Dtype::Float32)?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    SpectralCube::new(h.bands, h.rows, h.cols, data).map_err(|e| Error::format(&raw, e.to_string()))
}

pub fn save_labels(labels: &LabelRaster, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let header = Header {
        bands: 1,
        rows: labels.rows,
        cols: labels.cols,
        dtype: Dtype::Uint16,
    };
    let payload = labels.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raster(path, header, payload)
}

pub fn load_labels(path: &Path) -> Result<LabelRaster> {
    let (h, payload, raw) = read_raster(path, Dtype::Uint16)?;
    if h.bands != 1 {
        return Err(Error::format(&raw, format!("label raster must have 1 band, header says {}", h.bands)));
    }
    let labels = payload.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    LabelRaster::new(h.rows, h.cols, labels)
}
