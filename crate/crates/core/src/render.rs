//! Static SVG rendering of a partition.
//!
//! Cells are drawn from the solver's own subpixel raster, embedded as a PNG;
//! sites are discs whose areas are proportional to their masses. When a site
//! lies outside its own cell a gray arrow points from the cell centroid to it.

use std::fmt::Write as _;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NONE;
use crate::measures::Bounds;
use crate::point::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Pixel length of the longer side of the picture.
    pub long_side_px: u32,
    /// Fraction of the domain area covered by all site discs together.
    pub disc_fraction: f64,
    pub arrows: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            long_side_px: 800,
            disc_fraction: 0.05,
            arrows: true,
        }
    }
}

/// A subpixel assignment over `bounds` together with its sites.
#[derive(Debug, Clone, Copy)]
pub struct PartitionView<'a> {
    pub bounds: Bounds,
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first; [`NONE`] marks empty raster cells.
    pub assignment: &'a [u32],
    pub sites: &'a [Point],
    pub masses: &'a [f64],
}

impl PartitionView<'_> {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Malformed("empty raster".into()));
        }
        if self.assignment.len() != self.width * self.height {
            return Err(Error::DimensionMismatch {
                expected: self.width * self.height,
                actual: self.assignment.len(),
            });
        }
        if self.sites.len() != self.masses.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sites.len(),
                actual: self.masses.len(),
            });
        }
        let n = self.sites.len();
        if let Some(bad) = self
            .assignment
            .iter()
            .find(|&&a| a != NONE && a as usize >= n)
        {
            return Err(Error::Malformed(format!(
                "raster refers to site {bad} but only {n} sites are given"
            )));
        }
        Ok(())
    }

    fn cell_size(&self) -> f64 {
        self.bounds.width() / self.width as f64
    }

    fn raster_center(&self, fx: usize, fy: usize) -> Point {
        let s = self.cell_size();
        Point::new(
            self.bounds.x_min + (fx as f64 + 0.5) * s,
            self.bounds.y_max - (fy as f64 + 0.5) * s,
        )
    }

    /// Site owning the raster cell under `p`, if `p` lies in the domain.
    fn owner_at(&self, p: Point) -> Option<u32> {
        if !self.bounds.contains(p) {
            return None;
        }
        let s = self.cell_size();
        let fx = (((p.x - self.bounds.x_min) / s) as usize).min(self.width - 1);
        let fy = (((self.bounds.y_max - p.y) / s) as usize).min(self.height - 1);
        Some(self.assignment[fy * self.width + fx])
    }
}

/// Colour of site `j`: hues spaced by the golden angle, alternating lightness.
pub fn palette(j: usize) -> [u8; 3] {
    let hue = (j as f64 * 0.618_033_988_749_895).fract();
    let light = [0.62, 0.74, 0.54][j % 3];
    hsl_to_rgb(hue, 0.55, light)
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> [u8; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    [r, g, b].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Area centroid of each non-empty cell of the raster.
pub fn cell_centroids(view: &PartitionView<'_>) -> Vec<Option<Point>> {
    let n = view.sites.len();
    let mut sum = vec![(0.0, 0.0, 0usize); n];
    for fy in 0..view.height {
        for fx in 0..view.width {
            let a = view.assignment[fy * view.width + fx];
            if a == NONE {
                continue;
            }
            let c = view.raster_center(fx, fy);
            let e = &mut sum[a as usize];
            e.0 += c.x;
            e.1 += c.y;
            e.2 += 1;
        }
    }
    sum.into_iter()
        .map(|(x, y, k)| (k > 0).then(|| Point::new(x / k as f64, y / k as f64)))
        .collect()
}

/// Sites whose own raster cell belongs to a different site (or that lie outside the domain).
pub fn displaced_sites(view: &PartitionView<'_>) -> Vec<usize> {
    (0..view.sites.len())
        .filter(|&j| view.owner_at(view.sites[j]) != Some(j as u32))
        .collect()
}

fn raster_png(view: &PartitionView<'_>) -> Result<Vec<u8>> {
    let mut rgb = Vec::with_capacity(view.assignment.len() * 3);
    for &a in view.assignment {
        rgb.extend_from_slice(&if a == NONE {
            [255, 255, 255]
        } else {
            palette(a as usize)
        });
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, view.width as u32, view.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::Malformed(format!("PNG encoding: {e}"));
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(&rgb).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(out)
}

/// Renders the partition as a standalone SVG document.
pub fn render_svg(view: &PartitionView<'_>, opts: &RenderOptions) -> Result<String> {
    view.validate()?;
    let b = view.bounds;
    let scale = opts.long_side_px as f64 / b.width().max(b.height());
    let (w_px, h_px) = (b.width() * scale, b.height() * scale);
    let to_svg = |p: Point| ((p.x - b.x_min) * scale, (b.y_max - p.y) * scale);

    let png = base64::engine::general_purpose::STANDARD.encode(raster_png(view)?);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.0}" height="{h_px:.0}" viewBox="0 0 {w_px:.3} {h_px:.3}">"#
    );
    s.push_str(
        r##"<defs><marker id="head" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#666"/></marker></defs>"##,
    );
    s.push('\n');
    let _ = writeln!(
        s,
        r#"<image x="0" y="0" width="{w_px:.3}" height="{h_px:.3}" preserveAspectRatio="none" style="image-rendering:pixelated" href="data:image/png;base64,{png}"/>"#
    );

    if opts.arrows {
        let centroids = cell_centroids(view);
        for j in displaced_sites(view) {
            if let Some(c) = centroids[j] {
                let (x1, y1) = to_svg(c);
                let (x2, y2) = to_svg(view.sites[j]);
                let _ = writeln!(
                    s,
                    r##"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="#666" stroke-width="1.5" marker-end="url(#head)"/>"##
                );
            }
        }
    }

    let total: f64 = view.masses.iter().sum();
    let disc_area = opts.disc_fraction * w_px * h_px;
    s.push_str(r#"<g stroke="black" stroke-width="0.75">"#);
    s.push('\n');
    for (j, (&p, &m)) in view.sites.iter().zip(view.masses).enumerate() {
        let r = (disc_area * m / total / std::f64::consts::PI).sqrt();
        let (cx, cy) = to_svg(p);
        let [cr, cg, cb] = palette(j);
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{r:.3}" fill="rgb({},{},{})"/>"#,
            cr / 2,
            cg / 2,
            cb / 2
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Bounds {
        Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn palette_is_deterministic_and_distinct_for_neighbours() {
        for j in 0..200 {
            assert_eq!(palette(j), palette(j));
            assert_ne!(palette(j), palette(j + 1));
            assert_ne!(palette(j), [255, 255, 255]);
        }
    }

    #[test]
    fn single_site() {
        let assignment = vec![0u32; 16];
        let sites = [Point::new(0.5, 0.5)];
        let view = PartitionView {
            bounds: unit(),
            width: 4,
            height: 4,
            assignment: &assignment,
            sites: &sites,
            masses: &[1.0],
        };
        let svg = render_svg(&view, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<line").count(), 0);
        assert_eq!(svg, render_svg(&view, &RenderOptions::default()).unwrap());
    }

    #[test]
    fn arrow_when_site_outside_its_cell() {
        // left half belongs to site 1, right half to site 0, but site 0 sits on the left
        let assignment: Vec<u32> = (0..16).map(|i| if i % 4 < 2 { 1 } else { 0 }).collect();
        let sites = [Point::new(0.1, 0.5), Point::new(0.3, 0.5)];
        let view = PartitionView {
            bounds: unit(),
            width: 4,
            height: 4,
            assignment: &assignment,
            sites: &sites,
            masses: &[0.5, 0.5],
        };
        assert_eq!(displaced_sites(&view), vec![0]);
        let c = cell_centroids(&view);
        assert_eq!(c[0], Some(Point::new(0.75, 0.5)));
        let svg = render_svg(&view, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches("<line").count(), 1);
        let quiet = render_svg(
            &view,
            &RenderOptions {
                arrows: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(quiet.matches("<line").count(), 0);
    }

    #[test]
    fn disc_areas_follow_masses() {
        let assignment = vec![0, 1, 0, 1];
        let sites = [Point::new(0.25, 0.5), Point::new(0.75, 0.5)];
        let view = PartitionView {
            bounds: unit(),
            width: 2,
            height: 2,
            assignment: &assignment,
            sites: &sites,
            masses: &[1.0, 4.0],
        };
        let svg = render_svg(&view, &RenderOptions::default()).unwrap();
        let radii: Vec<f64> = svg
            .split(" r=\"")
            .skip(1)
            .map(|t| t.split('"').next().unwrap().parse().unwrap())
            .collect();
        assert!((radii[1] / radii[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_inconsistent_views() {
        let sites = [Point::new(0.5, 0.5)];
        let short = PartitionView {
            bounds: unit(),
            width: 2,
            height: 2,
            assignment: &[0, 0, 0],
            sites: &sites,
            masses: &[1.0],
        };
        assert!(render_svg(&short, &RenderOptions::default()).is_err());
        let bad = PartitionView {
            bounds: unit(),
            width: 2,
            height: 2,
            assignment: &[0, 0, 0, 3],
            sites: &sites,
            masses: &[1.0],
        };
        assert!(render_svg(&bad, &RenderOptions::default()).is_err());
    }
}
