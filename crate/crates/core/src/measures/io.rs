//! File formats: PGM (P2/P5) and CSV density grids, `x,y,mass` CSV measures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{Bounds, DensityGrid, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::point::Point;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Raw contents of a PGM file.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Row-major gray levels, first row at the top.
    pub data: Vec<u32>,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self
            .token()
            .ok_or_else(|| Error::Malformed(format!("PGM: missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::Malformed(format!("PGM: bad {what} `{tok}`")))
    }
}

/// Parses a binary (P5) or plain (P2) PGM image.
pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r
        .token()
        .ok_or_else(|| Error::Malformed("PGM: empty file".into()))?;
    let binary = match magic {
        "P5" => true,
        "P2" => false,
        other => {
            return Err(Error::Malformed(format!(
                "PGM: unsupported magic `{other}`"
            )))
        }
    };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Malformed(format!(
            "PGM: empty image {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Malformed(format!(
            "PGM: maxval {maxval} out of range"
        )));
    }
    let count = width * height;
    let mut data = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = r.pos + 1;
        let bpp = if maxval < 256 { 1 } else { 2 };
        let raster = bytes.get(start..start + count * bpp).ok_or_else(|| {
            Error::Malformed(format!(
                "PGM: raster truncated, expected {} bytes",
                count * bpp
            ))
        })?;
        if bpp == 1 {
            data.extend(raster.iter().map(|&b| b as u32));
        } else {
            data.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32),
            );
        }
    } else {
        for i in 0..count {
            let v = r.number(&format!("pixel {i}"))?;
            data.push(v);
        }
    }
    if let Some(v) = data.iter().find(|&&v| v > maxval) {
        return Err(Error::Malformed(format!(
            "PGM: gray level {v} exceeds maxval {maxval}"
        )));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        data,
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_pgm(&bytes).map_err(|e| match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a binary PGM; 8-bit when `maxval < 256`, 16-bit big-endian otherwise.
pub fn write_pgm(path: &Path, pgm: &Pgm) -> Result<()> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval < 256 {
        out.extend(pgm.data.iter().map(|&v| v.min(pgm.maxval) as u8));
    } else {
        for &v in &pgm.data {
            out.extend_from_slice(&(v.min(pgm.maxval) as u16).to_be_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Where a density grid came from, echoed into run manifests.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySource {
    Pgm(PathBuf),
    Csv {
        values: PathBuf,
        sidecar: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct Sidecar {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads a density grid from a `.pgm` or `.csv` file.
///
/// Gray levels of a PGM are used as density values as-is. When `bounds` is
/// `None`, a CSV grid takes its bounds from the JSON sidecar next to it
/// (`grid.csv` → `grid.json`), and a PGM is placed on [`Bounds::unit_aspect`].
pub fn load_density(path: &Path, bounds: Option<Bounds>) -> Result<(DensityGrid, DensitySource)> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let sidecar = sidecar_path(path);
        let has_sidecar = bounds.is_none() && sidecar.exists();
        let grid = load_density_csv(path, bounds)?;
        let source = DensitySource::Csv {
            values: path.to_path_buf(),
            sidecar: has_sidecar.then_some(sidecar),
        };
        Ok((grid, source))
    } else {
        let pgm = read_pgm(path)?;
        let bounds = bounds.unwrap_or_else(|| Bounds::unit_aspect(pgm.width, pgm.height));
        let values = pgm.data.iter().map(|&v| v as f64).collect();
        let grid = DensityGrid::new(bounds, pgm.width, pgm.height, values)?;
        Ok((grid, DensitySource::Pgm(path.to_path_buf())))
    }
}

/// Loads a CSV density grid: one line per pixel row (top row first).
pub fn load_density_csv(path: &Path, bounds: Option<Bounds>) -> Result<DensityGrid> {
    let bounds = match bounds {
        Some(b) => b,
        None => {
            let sc = sidecar_path(path);
            let text = fs::read_to_string(&sc).map_err(io_err(&sc))?;
            let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
                origin: sc.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
            Bounds::new(s.x_min, s.y_min, s.x_max, s.y_max)?
        }
    };
    let origin = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&origin, e))?;
    let mut values = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&origin, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if nx.is_some_and(|n| n != record.len()) {
            return Err(Error::Parse {
                origin,
                line,
                message: format!(
                    "expected {} values, found {}",
                    nx.unwrap_or(0),
                    record.len()
                ),
            });
        }
        nx = Some(record.len());
        for field in record.iter() {
            let v = field.parse::<f64>().map_err(|_| Error::Parse {
                origin: origin.clone(),
                line,
                message: format!("not a number: `{field}`"),
            })?;
            values.push(v);
        }
        ny += 1;
    }
    DensityGrid::new(bounds, nx.unwrap_or(0), ny, values)
}

/// Writes the grid values as CSV plus a JSON sidecar holding the bounds.
pub fn write_density_csv(path: &Path, grid: &DensityGrid) -> Result<()> {
    let mut out = String::new();
    for row in grid.values().chunks(grid.nx()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))?;
    let sc = sidecar_path(path);
    let b = grid.bounds();
    let json = serde_json::json!({
        "x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max
    });
    fs::write(&sc, format!("{json}\n")).map_err(io_err(&sc))
}

fn csv_error(origin: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        origin: origin.to_string(),
        line,
        message: e.to_string(),
    }
}

/// Parses `x,y,mass` CSV text. With `require_mass = false` the mass column is
/// optional and missing masses default to one.
pub fn parse_measure_csv(text: &str, origin: &str, require_mass: bool) -> Result<DiscreteMeasure> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(origin, e))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing = |name: &str| Error::Parse {
        origin: origin.to_string(),
        line: 1,
        message: format!("header must contain `{name}` (expected `x,y,mass`)"),
    };
    let xi = column("x").ok_or_else(|| missing("x"))?;
    let yi = column("y").ok_or_else(|| missing("y"))?;
    let mi = column("mass");
    if require_mass && mi.is_none() {
        return Err(missing("mass"));
    }
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(origin, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).ok_or_else(|| Error::Parse {
                origin: origin.to_string(),
                line,
                message: format!("missing `{name}` field"),
            })?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                origin: origin.to_string(),
                line,
                message: format!("`{name}` is not a number: `{raw}`"),
            })
        };
        let p = Point::new(field(xi, "x")?, field(yi, "y")?);
        let m = match mi {
            Some(i) => field(i, "mass")?,
            None => 1.0,
        };
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Parse {
                origin: origin.to_string(),
                line,
                message: format!("mass must be positive, got {m}"),
            });
        }
        points.push(p);
        masses.push(m);
    }
    if points.is_empty() {
        return Err(Error::Parse {
            origin: origin.to_string(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    DiscreteMeasure::new(points, masses)
}

pub fn load_measure_csv(path: &Path, require_mass: bool) -> Result<DiscreteMeasure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_measure_csv(&text, &path.display().to_string(), require_mass)
}

pub fn write_measure_csv(path: &Path, nu: &DiscreteMeasure) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut out = String::from("x,y,mass\n");
    for (p, m) in nu.points().iter().zip(nu.masses()) {
        out.push_str(&format!("{},{},{}\n", p.x, p.y, m));
    }
    f.write_all(out.as_bytes()).map_err(io_err(path))
}
