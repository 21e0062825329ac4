//! Loss landscapes over the chosen/rejected probability plane.
//!
//! A [`ContourGrid`] holds one loss evaluated densely over
//! `(p_w, p_l)` with a fixed reference `(r_w, r_l)`. Values are stored
//! row-major with `p_l` as the row axis and `p_w` as the column axis.

mod svg;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fmt::float17;
use crate::losses::{self, LossError, LossKind, LossSpec, PairPoint};

pub use svg::render_svg;

#[derive(Debug, thiserror::Error)]
pub enum ContourError {
    #[error("{kind} is undefined at p_l = 0; the p_l range must start above 0 (got {pl_min})")]
    RejectedRangeIncludesZero { kind: LossKind, pl_min: f64 },
    #[error("the p_w range must start above 0 (got {pw_min})")]
    ChosenRangeIncludesZero { pw_min: f64 },
    #[error("invalid {axis} range [{lo}, {hi}]: {reason}")]
    InvalidRange {
        axis: &'static str,
        lo: f64,
        hi: f64,
        reason: &'static str,
    },
    #[error("resolution must be at least 1 along each axis")]
    EmptyResolution,
    #[error("every grid cell is masked")]
    FullyMasked,
    #[error("grids do not share axes")]
    AxisMismatch,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ContourError>;

/// Axis ranges, resolution and masking for one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub pw_range: (f64, f64),
    pub pl_range: (f64, f64),
    /// Samples along `(p_w, p_l)` before the reference coordinates are added.
    pub resolution: (usize, usize),
    /// Mask cells with `p_w + p_l > 1`.
    pub mask_simplex: bool,
}

impl GridSettings {
    /// Rectangular four-panel comparison domain.
    pub fn figure1() -> Self {
        Self { pw_range: (0.005, 0.995), pl_range: (0.005, 0.5), resolution: (200, 200), mask_simplex: false }
    }

    /// NLL-weight comparison domain, zoomed on small `p_l`.
    pub fn figure2() -> Self {
        Self { pl_range: (0.005, 0.25), ..Self::figure1() }
    }
}

impl Default for GridSettings {
    fn default() -> Self {
        Self::figure1()
    }
}

/// Dense loss values over a `(p_w, p_l)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourGrid {
    pub spec: LossSpec,
    pub reference: (f64, f64),
    pub pw_axis: Vec<f64>,
    pub pl_axis: Vec<f64>,
    /// `values[i * pw_axis.len() + j]` is the loss at `(pw_axis[j], pl_axis[i])`;
    /// `None` marks a masked cell.
    pub values: Vec<Option<f64>>,
    pub mask_simplex: bool,
}

/// Location and value of the smallest unmasked cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridArgmin {
    pub pw: f64,
    pub pl: f64,
    pub loss: f64,
    pub row: usize,
    pub col: usize,
}

// Cells whose coordinates sum to 1 up to rounding are kept.
const SIMPLEX_SLACK: f64 = 1e-12;

/// `n` evenly spaced samples from `lo` to `hi`, plus `extra` when it falls
/// strictly inside and is not already present.
fn axis(lo: f64, hi: f64, n: usize, extra: f64) -> Vec<f64> {
    let mut values: Vec<f64> = if n == 1 {
        vec![lo]
    } else {
        (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * (i as f64 / (n - 1) as f64) })
            .collect()
    };
    if extra >= lo && extra <= hi && !values.contains(&extra) {
        let at = values.partition_point(|v| *v < extra);
        values.insert(at, extra);
    }
    values
}

fn check_range(axis: &'static str, (lo, hi): (f64, f64)) -> Result<()> {
    let bad = |reason| Err(ContourError::InvalidRange { axis, lo, hi, reason });
    if !(lo.is_finite() && hi.is_finite()) {
        return bad("bounds must be finite");
    }
    if lo < 0.0 || hi > 1.0 {
        return bad("bounds must lie in [0, 1]");
    }
    if lo > hi {
        return bad("lower bound exceeds upper bound");
    }
    Ok(())
}

/// Evaluates `spec` on every cell of the grid described by `settings`.
///
/// The reference coordinates are added to the axes when they fall inside
/// the ranges, so the grid always contains the reference cell.
pub fn evaluate_grid(spec: &LossSpec, reference: (f64, f64), settings: &GridSettings) -> Result<ContourGrid> {
    spec.validate()?;
    PairPoint::at_reference(reference.0, reference.1)?;
    check_range("p_w", settings.pw_range)?;
    check_range("p_l", settings.pl_range)?;
    let (n_pw, n_pl) = settings.resolution;
    if n_pw == 0 || n_pl == 0 {
        return Err(ContourError::EmptyResolution);
    }
    if settings.pw_range.0 <= 0.0 {
        return Err(ContourError::ChosenRangeIncludesZero { pw_min: settings.pw_range.0 });
    }
    if settings.pl_range.0 <= 0.0 && !spec.kind.allows_zero_rejected() {
        return Err(ContourError::RejectedRangeIncludesZero { kind: spec.kind, pl_min: settings.pl_range.0 });
    }

    let pw_axis = axis(settings.pw_range.0, settings.pw_range.1, n_pw, reference.0);
    let pl_axis = axis(settings.pl_range.0, settings.pl_range.1, n_pl, reference.1);
    let (r_w, r_l) = reference;
    let rows: Vec<Vec<Option<f64>>> = pl_axis
        .par_iter()
        .map(|&p_l| {
            pw_axis
                .iter()
                .map(|&p_w| {
                    if settings.mask_simplex && p_w + p_l > 1.0 + SIMPLEX_SLACK {
                        Ok(None)
                    } else {
                        losses::loss(&PairPoint { p_w, p_l, r_w, r_l }, spec).map(Some)
                    }
                })
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, _>>()?;

    Ok(ContourGrid {
        spec: *spec,
        reference,
        pw_axis,
        pl_axis,
        values: rows.into_iter().flatten().collect(),
        mask_simplex: settings.mask_simplex,
    })
}

impl ContourGrid {
    pub fn rows(&self) -> usize {
        self.pl_axis.len()
    }

    pub fn cols(&self) -> usize {
        self.pw_axis.len()
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.cols() + col]
    }

    /// Row and column of the cell at exactly `(pw, pl)`, if present.
    pub fn cell_at(&self, pw: f64, pl: f64) -> Option<(usize, usize)> {
        let col = self.pw_axis.iter().position(|v| *v == pw)?;
        let row = self.pl_axis.iter().position(|v| *v == pl)?;
        Some((row, col))
    }

    /// Iterates `(pw, pl, value)` in storage order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, Option<f64>)> + '_ {
        self.pl_axis
            .iter()
            .flat_map(move |&pl| self.pw_axis.iter().map(move |&pw| (pw, pl)))
            .zip(&self.values)
            .map(|((pw, pl), v)| (pw, pl, *v))
    }

    /// Long-format CSV (`pw,pl,loss`), masked cells with an empty loss field.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "pw,pl,loss")?;
        for (pw, pl, v) in self.cells() {
            let loss = v.map(float17).unwrap_or_default();
            writeln!(out, "{},{},{}", float17(pw), float17(pl), loss)?;
        }
        Ok(())
    }

    pub fn sidecar(&self) -> GridSidecar {
        GridSidecar {
            spec: self.spec,
            reference: [self.reference.0, self.reference.1],
            pw_axis: self.pw_axis.clone(),
            pl_axis: self.pl_axis.clone(),
            mask_simplex: self.mask_simplex,
            layout: "row-major; rows follow pl_axis, columns follow pw_axis".to_string(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`, returning both paths.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(&csv, buf)?;
        fs::write(&json, serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(vec![csv, json])
    }
}

/// JSON metadata written next to every grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub spec: LossSpec,
    pub reference: [f64; 2],
    pub pw_axis: Vec<f64>,
    pub pl_axis: Vec<f64>,
    pub mask_simplex: bool,
    pub layout: String,
}

/// Minimal unmasked cell. Ties go to the larger `p_w`, then the smaller `p_l`.
pub fn grid_argmin(grid: &ContourGrid) -> Result<GridArgmin> {
    let mut best: Option<GridArgmin> = None;
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let Some(loss) = grid.value(row, col) else { continue };
            let candidate = GridArgmin { pw: grid.pw_axis[col], pl: grid.pl_axis[row], loss, row, col };
            let better = match &best {
                None => true,
                Some(b) => {
                    loss < b.loss || (loss == b.loss && (candidate.pw > b.pw || (candidate.pw == b.pw && candidate.pl < b.pl)))
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    best.ok_or(ContourError::FullyMasked)
}

/// One DPO+NLL grid per NLL weight, all on shared axes.
pub fn alpha_sweep(
    reference: (f64, f64),
    alphas: &[f64],
    beta: f64,
    settings: &GridSettings,
) -> Result<Vec<ContourGrid>> {
    alphas
        .iter()
        .map(|&alpha| evaluate_grid(&LossSpec::dpo_nll(beta, alpha), reference, settings))
        .collect()
}

/// Cell-wise `a − b` for grids on identical axes; masked where either is.
pub fn grid_difference(a: &ContourGrid, b: &ContourGrid) -> Result<Vec<Option<f64>>> {
    if a.pw_axis != b.pw_axis || a.pl_axis != b.pl_axis {
        return Err(ContourError::AxisMismatch);
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| Some((*x)? - (*y)?)).collect())
}
