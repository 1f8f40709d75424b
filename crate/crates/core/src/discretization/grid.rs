use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ParticleConfiguration;

/// Uniform node grid on `[-width/2, width/2) x [0, top]`, laterally periodic.
///
/// Node `(i, j)` sits at `(-width/2 + i dx, j dy)`; the lateral neighbor of
/// `i = nx - 1` is node `0` shifted by one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: f64,
    pub top: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

/// How far a requested interface height moved to reach a grid line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snap {
    pub requested: f64,
    pub snapped: f64,
    pub line: usize,
    pub distance: f64,
}

impl Grid {
    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.width + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.top * j as f64 / (self.ny - 1) as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    /// Grid line at height `y`, if `y` lies on one.
    pub fn line_of(&self, y: f64) -> Option<usize> {
        let t = y / self.dy;
        let line = t.round();
        if line < 0.0 || line > (self.ny - 1) as f64 || (t - line).abs() > 1e-9 {
            return None;
        }
        Some(line as usize)
    }

    pub fn snap(&self, y: f64) -> Result<Snap> {
        if !(y.is_finite() && y > 0.0 && y < self.top) {
            return Err(Error::InvalidExtent(format!(
                "interface {y} outside (0, {})",
                self.top
            )));
        }
        let line = (y / self.dy).round() as usize;
        if line == 0 || line >= self.ny - 1 {
            return Err(Error::InvalidExtent(format!(
                "interface {y} snaps onto a boundary line"
            )));
        }
        let snapped = self.y(line);
        Ok(Snap {
            requested: y,
            snapped,
            line,
            distance: (y - snapped).abs(),
        })
    }
}

/// Builds a grid with spacing close to `target_dx` and snaps every interface
/// height onto its nearest interior grid line.
pub fn build_grid(
    width: f64,
    top: f64,
    target_dx: f64,
    interface_heights: &[f64],
) -> Result<(Grid, Vec<Snap>)> {
    for (name, v) in [("width", width), ("top", top), ("target_dx", target_dx)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidExtent(format!("{name} = {v} must be positive")));
        }
    }
    let nx = ((width / target_dx).round() as usize).max(3);
    let cells_y = ((top / target_dx).round() as usize).max(2);
    let grid = Grid {
        width,
        top,
        nx,
        ny: cells_y + 1,
        dx: width / nx as f64,
        dy: top / cells_y as f64,
    };
    let aspect = grid.dx / grid.dy;
    if !(0.5..=2.0).contains(&aspect) {
        return Err(Error::InvalidExtent(format!(
            "aspect ratio dx/dy = {aspect:.3} outside [0.5, 2]"
        )));
    }
    let snaps = interface_heights
        .iter()
        .map(|&y| grid.snap(y))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, snaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    ParticleDirichlet,
    BottomBoundary,
    TopDtn,
}

/// Tags every node; nodes strictly inside a disk of radius `scale` centered
/// at `scale * x_n` become Dirichlet nodes. Lateral distances wrap.
pub fn classify_nodes(
    grid: &Grid,
    config: &ParticleConfiguration,
    scale: f64,
) -> Result<Vec<NodeClass>> {
    let mut tags: Vec<NodeClass> = (0..grid.n_nodes())
        .map(|n| match n / grid.nx {
            0 => NodeClass::BottomBoundary,
            j if j == grid.ny - 1 => NodeClass::TopDtn,
            _ => NodeClass::Interior,
        })
        .collect();
    if config.is_empty() {
        return Ok(tags);
    }
    let radius = scale;
    if config.layer.periodic
        && (config.layer.width * scale - grid.width).abs() > 1e-9 * grid.width
    {
        return Err(Error::InvalidExtent(format!(
            "scaled layer width {} differs from grid width {}",
            config.layer.width * scale,
            grid.width
        )));
    }
    let wrap = |d: f64| d - grid.width * (d / grid.width).round();
    for (index, c) in config.centers.iter().enumerate() {
        let (cx, cy) = (c.x * scale, c.y * scale);
        if cy - radius <= 0.0 || cy + radius >= grid.top {
            return Err(Error::ParticleOutOfDomain {
                index,
                reason: format!("disk spans y in [{}, {}], grid is [0, {}]", cy - radius, cy + radius, grid.top),
            });
        }
        if !config.layer.periodic && (cx - radius < -0.5 * grid.width || cx + radius > 0.5 * grid.width) {
            return Err(Error::ParticleOutOfDomain {
                index,
                reason: "disk crosses the lateral edge of a non-periodic cell".into(),
            });
        }
        let j_lo = ((cy - radius) / grid.dy).floor().max(0.0) as usize;
        let j_hi = (((cy + radius) / grid.dy).ceil() as usize).min(grid.ny - 1);
        let i_center = ((cx + 0.5 * grid.width) / grid.dx).round() as isize;
        let reach = (radius / grid.dx).ceil() as isize + 1;
        for j in j_lo..=j_hi {
            let dy = grid.y(j) - cy;
            for di in -reach..=reach {
                let i = (i_center + di).rem_euclid(grid.nx as isize) as usize;
                let dx = wrap(grid.x(i) - cx);
                if dx * dx + dy * dy < radius * radius {
                    tags[grid.index(i, j)] = NodeClass::ParticleDirichlet;
                }
            }
        }
    }
    Ok(tags)
}
