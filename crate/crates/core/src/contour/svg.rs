//! Static SVG heatmap with log-spaced contour lines.

use std::fmt::Write;

use super::ContourGrid;

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const LEVELS: usize = 10;

// Brighter = lower loss.
const PALETTE: [(f64, f64, f64); 5] = [
    (253.0, 231.0, 37.0),
    (94.0, 201.0, 98.0),
    (33.0, 145.0, 140.0),
    (59.0, 82.0, 139.0),
    (68.0, 1.0, 84.0),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let f = t - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Cell boundaries: midpoints between samples, clamped to the axis ends.
fn edges(axis: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(axis.len() + 1);
    out.push(axis[0]);
    out.extend(axis.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(axis[axis.len() - 1]);
    out
}

fn log_levels(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.max(1e-12).ln(), hi.max(1e-12).ln());
    (1..=LEVELS).map(|k| (a + (b - a) * k as f64 / (LEVELS + 1) as f64).exp()).collect()
}

/// Renders `grid` as an SVG document.
pub fn render_svg(grid: &ContourGrid) -> String {
    let finite: Vec<f64> = grid.values.iter().flatten().copied().collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (llo, lhi) = (lo.max(1e-12).ln(), hi.max(1e-12).ln());
    let shade = |v: f64| if lhi > llo { (v.max(1e-12).ln() - llo) / (lhi - llo) } else { 0.0 };

    let (pw0, pw1) = (grid.pw_axis[0], grid.pw_axis[grid.cols() - 1]);
    let (pl0, pl1) = (grid.pl_axis[0], grid.pl_axis[grid.rows() - 1]);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |pw: f64| LEFT + if pw1 > pw0 { (pw - pw0) / (pw1 - pw0) * plot_w } else { 0.0 };
    let sy = |pl: f64| TOP + plot_h - if pl1 > pl0 { (pl - pl0) / (pl1 - pl0) * plot_h } else { 0.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let spec = &grid.spec;
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="13">{} loss, β={}, α={}, penalty={}, λ={}; ref=({}, {})</text>"#,
        LEFT + plot_w / 2.0,
        spec.kind,
        spec.beta,
        spec.alpha,
        spec.penalty,
        spec.mixture,
        grid.reference.0,
        grid.reference.1
    );

    let xe = edges(&grid.pw_axis);
    let ye = edges(&grid.pl_axis);
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let fill = match grid.value(row, col) {
                Some(v) => color(shade(v)),
                None => "#cccccc".to_string(),
            };
            let (x0, x1) = (sx(xe[col]), sx(xe[col + 1]));
            let (y0, y1) = (sy(ye[row + 1]), sy(ye[row]));
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                (x1 - x0).max(0.0) + 0.3,
                (y1 - y0).max(0.0) + 0.3
            );
        }
    }

    let levels = if hi > lo { log_levels(lo, hi) } else { Vec::new() };
    for level in &levels {
        let segments = march(grid, *level);
        let mut label_at = None;
        for ((x0, y0), (x1, y1)) in &segments {
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ffffff" stroke-width="0.8" stroke-opacity="0.85"/>"##,
                sx(*x0),
                sy(*y0),
                sx(*x1),
                sy(*y1)
            );
            label_at.get_or_insert((sx(*x0), sy(*y0)));
        }
        if let Some((x, y)) = label_at {
            let _ = writeln!(s, r##"<text x="{x:.2}" y="{y:.2}" fill="#ffffff" font-size="9">{level:.3}</text>"##);
        }
    }

    // Axes and ticks.
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let pw = pw0 + (pw1 - pw0) * f;
        let pl = pl0 + (pl1 - pl0) * f;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{pw:.3}</text>"#, sx(pw), TOP + plot_h + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{pl:.3}</text>"#, LEFT - 6.0, sy(pl) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">π_θ(y_w|x)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">π_θ(y_l|x)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    // Legend.
    let lx = WIDTH - RIGHT + 20.0;
    let _ = writeln!(s, r#"<text x="{lx}" y="{}">loss (log scale)</text>"#, TOP);
    for k in 0..=20 {
        let t = k as f64 / 20.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            TOP + 10.0 + t * 200.0,
            200.0 / 20.0 + 0.5,
            color(t)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{lo:.4}</text>"#, lx + 22.0, TOP + 18.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">{hi:.4}</text>"#, lx + 22.0, TOP + 214.0);
    let _ = writeln!(s, r#"<text x="{lx}" y="{}">levels:</text>"#, TOP + 240.0);
    for (k, level) in levels.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{lx}" y="{}">{level:.4}</text>"#, TOP + 254.0 + 12.0 * k as f64);
    }
    s.push_str("</svg>\n");
    s
}

type Segment = ((f64, f64), (f64, f64));

/// Marching squares over unmasked 2×2 cell blocks, in data coordinates.
fn march(grid: &ContourGrid, level: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    for row in 0..grid.rows().saturating_sub(1) {
        for col in 0..grid.cols().saturating_sub(1) {
            let (Some(a), Some(b), Some(c), Some(d)) = (
                grid.value(row, col),
                grid.value(row, col + 1),
                grid.value(row + 1, col + 1),
                grid.value(row + 1, col),
            ) else {
                continue;
            };
            let (x0, x1) = (grid.pw_axis[col], grid.pw_axis[col + 1]);
            let (y0, y1) = (grid.pl_axis[row], grid.pl_axis[row + 1]);
            let lerp = |p: f64, q: f64| (level - p) / (q - p);
            let mut pts = Vec::with_capacity(4);
            // bottom, right, top, left
            if (a > level) != (b > level) {
                pts.push((x0 + (x1 - x0) * lerp(a, b), y0));
            }
            if (b > level) != (c > level) {
                pts.push((x1, y0 + (y1 - y0) * lerp(b, c)));
            }
            if (d > level) != (c > level) {
                pts.push((x0 + (x1 - x0) * lerp(d, c), y1));
            }
            if (a > level) != (d > level) {
                pts.push((x0, y0 + (y1 - y0) * lerp(a, d)));
            }
            match pts.len() {
                2 => out.push((pts[0], pts[1])),
                4 => {
                    let centre = 0.25 * (a + b + c + d);
                    if (centre > level) == (a > level) {
                        out.push((pts[0], pts[1]));
                        out.push((pts[2], pts[3]));
                    } else {
                        out.push((pts[0], pts[3]));
                        out.push((pts[1], pts[2]));
                    }
                }
                _ => {}
            }
        }
    }
    out
}
