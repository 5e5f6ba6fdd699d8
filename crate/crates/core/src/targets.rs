//! Training targets: per-class center heatmaps, the polar regression grids
//! and the binary center-semantic map.

use ndarray::{Array2, Array3, ArrayViewMut2};

use crate::codec::{encode_polar, quad_to_five, split_cell};
use crate::error::{Error, Result};
use crate::geometry::Quad;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParams {
    /// Output stride between input pixels and grid cells.
    pub stride: u32,
    /// Overlap kept by a box displaced by the Gaussian radius.
    pub min_overlap: f64,
}

impl Default for TargetParams {
    fn default() -> Self {
        TargetParams {
            stride: 4,
            min_overlap: 0.7,
        }
    }
}

/// Target grids for one image; all planes are `(H/stride) x (W/stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub stride: u32,
    /// `C x h x w`, values in [0, 1].
    pub heatmap: Array3<f64>,
    /// `2 x h x w`: sub-cell (dx, dy).
    pub offset: Array3<f64>,
    /// `4 x h x w`, radians.
    pub angles: Array3<f64>,
    /// `1 x h x w`, pixels at input scale.
    pub shorter: Array3<f64>,
    /// `4 x h x w`.
    pub ratios: Array3<f64>,
    /// `C x h x w`, values in {0, 1}.
    pub semantic: Array3<f64>,
    /// Cells carrying regression targets.
    pub valid_mask: Array2<bool>,
    /// Objects dropped because their center fell outside the image.
    pub skipped: usize,
}

impl TargetMaps {
    pub fn zeros(classes: usize, rows: usize, cols: usize, stride: u32) -> Self {
        TargetMaps {
            stride,
            heatmap: Array3::zeros((classes, rows, cols)),
            offset: Array3::zeros((2, rows, cols)),
            angles: Array3::zeros((4, rows, cols)),
            shorter: Array3::zeros((1, rows, cols)),
            ratios: Array3::zeros((4, rows, cols)),
            semantic: Array3::zeros((classes, rows, cols)),
            valid_mask: Array2::from_elem((rows, cols), false),
            skipped: 0,
        }
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.valid_mask.dim()
    }

    /// Maps in dump order with their names.
    pub fn planes(&self) -> [(&'static str, &Array3<f64>); 6] {
        [
            ("heatmap", &self.heatmap),
            ("offset", &self.offset),
            ("angles", &self.angles),
            ("shorter", &self.shorter),
            ("ratios", &self.ratios),
            ("semantic", &self.semantic),
        ]
    }

    /// Row-major little-endian `f32` payload of every map in dump order.
    pub fn to_le_f32_bytes(&self) -> Vec<u8> {
        let total: usize = self.planes().iter().map(|(_, a)| a.len()).sum();
        let mut out = Vec::with_capacity(total * 4);
        for (_, a) in self.planes() {
            for v in a.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }
}

/// Largest displacement of an axis-aligned `h x w` box (in each corner
/// coordinate) that keeps IoU >= `min_overlap` in all three displacement
/// cases: translated, shrunk and grown. Smaller roots of the three
/// quadratics, written in cancellation-free form.
pub fn gaussian_radius(box_h: f64, box_w: f64, min_overlap: f64) -> f64 {
    if !(box_h > 0.0 && box_w > 0.0) {
        return 0.0;
    }
    let o = min_overlap;
    let sum = box_h + box_w;
    let area = box_h * box_w;

    // translated: r² - (w+h) r + wh(1-o)/(1+o) = 0
    let c1 = area * (1.0 - o) / (1.0 + o);
    let r1 = 2.0 * c1 / (sum + (sum * sum - 4.0 * c1).max(0.0).sqrt());

    // shrunk: 4r² - 2(w+h) r + (1-o)wh = 0
    let b2 = 2.0 * sum;
    let c2 = (1.0 - o) * area;
    let r2 = 2.0 * c2 / (b2 + (b2 * b2 - 16.0 * c2).max(0.0).sqrt());

    // grown: 4o r² + 2o(w+h) r - (1-o)wh = 0
    let a3 = 4.0 * o;
    let b3 = 2.0 * o * sum;
    let r3 = 2.0 * c2 / (b3 + (b3 * b3 + 4.0 * a3 * c2).sqrt());

    r1.min(r2).min(r3).max(0.0)
}

/// Gaussian sigma used for a radius.
pub fn sigma_for_radius(radius: f64) -> f64 {
    (2.0 * radius + 1.0) / 6.0
}

/// Max-composites an unnormalized Gaussian centered on cell `(cx, cy)` into
/// `plane`. The kernel is evaluated over a window of `ceil(3σ)` cells.
/// Returns `false` (and draws nothing) when the center lies off the grid.
pub fn draw_gaussian(mut plane: ArrayViewMut2<'_, f64>, cx: i64, cy: i64, sigma: f64) -> bool {
    let (rows, cols) = plane.dim();
    if cx < 0
        || cy < 0
        || cx as usize >= cols
        || cy as usize >= rows
        || sigma.is_nan()
        || sigma <= 0.0
    {
        return false;
    }
    let reach = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let (y0, y1) = ((cy - reach).max(0), (cy + reach).min(rows as i64 - 1));
    let (x0, x1) = ((cx - reach).max(0), (cx + reach).min(cols as i64 - 1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) as f64;
            let v = (-d2 / denom).exp();
            let cell = &mut plane[[y as usize, x as usize]];
            if v > *cell {
                *cell = v;
            }
        }
    }
    true
}

/// Fills a disc of `radius` cells around `(cx, cy)` with 1.
fn fill_disc(mut plane: ArrayViewMut2<'_, f64>, cx: i64, cy: i64, radius: f64) {
    let (rows, cols) = plane.dim();
    let reach = radius.floor() as i64;
    let lim = radius * radius * (1.0 + 1e-9);
    for y in (cy - reach).max(0)..=(cy + reach).min(rows as i64 - 1) {
        for x in (cx - reach).max(0)..=(cx + reach).min(cols as i64 - 1) {
            if (((x - cx) * (x - cx) + (y - cy) * (y - cy)) as f64) <= lim {
                plane[[y as usize, x as usize]] = 1.0;
            }
        }
    }
}

/// Builds all target grids for one image. Objects are processed in the given
/// order; when two share a center cell the later one owns the regression
/// targets while the heatmap keeps the cellwise max.
pub fn build_targets(
    annotations: &[(Quad, usize)],
    width: usize,
    height: usize,
    classes: usize,
    params: &TargetParams,
) -> Result<TargetMaps> {
    let stride = params.stride;
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let st = stride as usize;
    if !width.is_multiple_of(st) || !height.is_multiple_of(st) {
        return Err(Error::invalid(format!(
            "image {width}x{height} not divisible by stride {stride}"
        )));
    }
    let (rows, cols) = (height / st, width / st);
    let mut maps = TargetMaps::zeros(classes, rows, cols, stride);

    for (q, class) in annotations {
        if *class >= classes {
            return Err(Error::invalid(format!(
                "class {class} out of range 0..{classes}"
            )));
        }
        let code = encode_polar(q, stride)?;
        let c = code.center;
        if !(c.x >= 0.0 && c.y >= 0.0 && c.x < width as f64 && c.y < height as f64) {
            maps.skipped += 1;
            continue;
        }
        let (col, dx) = split_cell(c.x, stride);
        let (row, dy) = split_cell(c.y, stride);
        let mbr = quad_to_five(q)?;
        let radius = gaussian_radius(
            mbr.h / stride as f64,
            mbr.w / stride as f64,
            params.min_overlap,
        );
        let sigma = sigma_for_radius(radius);
        use ndarray::Axis;
        if !draw_gaussian(
            maps.heatmap.index_axis_mut(Axis(0), *class),
            col,
            row,
            sigma,
        ) {
            maps.skipped += 1;
            continue;
        }
        // the Gaussian footprint has diameter 2r+1, i.e. radius 3σ
        fill_disc(
            maps.semantic.index_axis_mut(Axis(0), *class),
            col,
            row,
            3.0 * sigma,
        );

        let (r, k) = (row as usize, col as usize);
        maps.offset[[0, r, k]] = dx;
        maps.offset[[1, r, k]] = dy;
        for p in 0..4 {
            maps.angles[[p, r, k]] = code.theta[p];
            maps.ratios[[p, r, k]] = code.r[p];
        }
        maps.shorter[[0, r, k]] = code.s;
        maps.valid_mask[[r, k]] = true;
    }
    if maps.skipped > 0 {
        log::warn!(
            "{} object(s) skipped with centers off the grid",
            maps.skipped
        );
    }
    Ok(maps)
}
