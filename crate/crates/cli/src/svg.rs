//! Plain SVG rendering for contour and sweep plots.

use std::fmt::Write;

use svysens::partial::PartialSweep;
use svysens::summary::ContourGrid;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 52.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn axes(out: &mut String, f: &Frame, xticks: &[f64], yticks: &[f64], xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (f.px(f.x0), f.px(f.x1), f.py(f.y1), f.py(f.y0));
    let _ = writeln!(
        out,
        r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for &x in xticks {
        let p = f.px(x);
        let _ = writeln!(
            out,
            r#"<line x1="{p:.2}" y1="{b:.2}" x2="{p:.2}" y2="{:.2}" stroke="black"/><text x="{p:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            b + 5.0,
            b + 18.0,
            tick(x)
        );
    }
    for &y in yticks {
        let p = f.py(y);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{p:.2}" x2="{l:.2}" y2="{p:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 5.0,
            l - 8.0,
            p + 4.0,
            tick(y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// Line segments where the bilinear surface crosses `level`.
fn marching_squares(xs: &[f64], ys: &[f64], z: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut segs = Vec::new();
    let interp = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        let t = if b.2 == a.2 { 0.5 } else { (level - a.2) / (b.2 - a.2) };
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    for i in 0..ys.len().saturating_sub(1) {
        for j in 0..xs.len().saturating_sub(1) {
            let c = [
                (xs[j], ys[i], z[i][j]),
                (xs[j + 1], ys[i], z[i][j + 1]),
                (xs[j + 1], ys[i + 1], z[i + 1][j + 1]),
                (xs[j], ys[i + 1], z[i + 1][j]),
            ];
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if (a.2 < level) != (b.2 < level) {
                    pts.push(interp(a, b));
                }
            }
            if pts.len() == 2 {
                segs.push([pts[0], pts[1]]);
            } else if pts.len() == 4 {
                segs.push([pts[0], pts[1]]);
                segs.push([pts[2], pts[3]]);
            }
        }
    }
    segs
}

fn contour_levels(grid: &ContourGrid) -> Vec<f64> {
    let max = grid.bias.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let raw = max / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    (-4..=4)
        .filter(|&k| k != 0)
        .map(|k| k as f64 * step)
        .filter(|l| l.abs() < max)
        .collect()
}

pub fn contour_svg(grid: &ContourGrid) -> String {
    let r2_max = *grid.r2_axis.last().unwrap_or(&1.0);
    let f = Frame {
        x0: -1.0,
        x1: 1.0,
        y0: 0.0,
        y1: r2_max,
    };
    let mut out = String::new();
    header(&mut out);

    let dx = (f.px(grid.rho_axis[1]) - f.px(grid.rho_axis[0])) / 2.0;
    let dy = (f.py(grid.r2_axis[0]) - f.py(grid.r2_axis[1])) / 2.0;
    let _ = writeln!(out, r##"<g fill="#f4a6a6" stroke="none">"##);
    for (i, row) in grid.killer.iter().enumerate() {
        let mut j = 0;
        while j < row.len() {
            if !row[j] {
                j += 1;
                continue;
            }
            let start = j;
            while j < row.len() && row[j] {
                j += 1;
            }
            let x = (f.px(grid.rho_axis[start]) - dx).max(f.px(f.x0));
            let x_end = (f.px(grid.rho_axis[j - 1]) + dx).min(f.px(f.x1));
            let y = (f.py(grid.r2_axis[i]) - dy).max(f.py(f.y1));
            let y_end = (f.py(grid.r2_axis[i]) + dy).min(f.py(f.y0));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}"/>"#,
                x_end - x,
                y_end - y
            );
        }
    }
    let _ = writeln!(out, "</g>");

    for level in contour_levels(grid) {
        let segs = marching_squares(&grid.rho_axis, &grid.r2_axis, &grid.bias, level);
        if segs.is_empty() {
            continue;
        }
        let mut d = String::new();
        for [a, b] in &segs {
            let _ = write!(
                d,
                "M{:.2} {:.2}L{:.2} {:.2}",
                f.px(a.0),
                f.py(a.1),
                f.px(b.0),
                f.py(b.1)
            );
        }
        let _ = writeln!(out, r##"<path d="{d}" fill="none" stroke="#555" stroke-width="0.8"/>"##);
        let top = segs
            .iter()
            .flat_map(|s| s.iter())
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
            .expect("non-empty");
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#333">{}</text>"##,
            f.px(top.0) + 2.0,
            f.py(top.1) + 10.0,
            tick(level)
        );
    }

    if grid.boundary.len() > 1 {
        let mut d = String::new();
        for (k, (rho, r2)) in grid.boundary.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if k == 0 { "M" } else { "L" },
                f.px(*rho),
                f.py(*r2)
            );
        }
        let _ = writeln!(out, r##"<path d="{d}" fill="none" stroke="#b00" stroke-width="2"/>"##);
    }

    for p in &grid.benchmark_points {
        if p.r2 > r2_max {
            continue;
        }
        let (x, y) = (f.px(p.rho), f.py(p.r2));
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="black"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 5.0,
            y - 5.0,
            escape(&p.label)
        );
    }
    axes(
        &mut out,
        &f,
        &ticks(-1.0, 1.0, 4),
        &ticks(0.0, r2_max, 5),
        "correlation of weight error with outcome (rho)",
        "R-squared of weight error",
    );
    out.push_str("</svg>\n");
    out
}

pub fn sweep_svg(sweep: &PartialSweep, b_star: Option<f64>) -> String {
    let pts: Vec<(f64, f64, f64)> = sweep
        .points
        .iter()
        .filter(|p| p.feasible && p.converged)
        .filter_map(|p| Some((p.t_v, p.estimate?, p.se.unwrap_or(0.0))))
        .collect();
    let mut out = String::new();
    header(&mut out);
    if pts.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">no feasible sweep points</text>"#,
            W / 2.0 - 60.0,
            H / 2.0
        );
        out.push_str("</svg>\n");
        return out;
    }
    let x0 = pts.first().expect("non-empty").0.min(sweep.baseline_mean_v);
    let x1 = pts.last().expect("non-empty").0.max(sweep.baseline_mean_v);
    let mut y0 = pts.iter().map(|p| p.1 - 1.96 * p.2).fold(f64::INFINITY, f64::min);
    let mut y1 = pts.iter().map(|p| p.1 + 1.96 * p.2).fold(f64::NEG_INFINITY, f64::max);
    if let Some(b) = b_star {
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x1 + 0.5) };
    let f = Frame {
        x0,
        x1,
        y0: y0 - pad,
        y1: y1 + pad,
    };
    let line = |sel: &dyn Fn(&(f64, f64, f64)) -> f64| {
        let mut d = String::new();
        for (k, p) in pts.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if k == 0 { "M" } else { "L" },
                f.px(p.0),
                f.py(sel(p))
            );
        }
        d
    };
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
        line(&|p| p.1 - 1.96 * p.2)
    );
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
        line(&|p| p.1 + 1.96 * p.2)
    );
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="none" stroke="#1f4e9c" stroke-width="2"/>"##,
        line(&|p| p.1)
    );
    if let Some(b) = b_star {
        let y = f.py(b);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#b00"/>"##,
            f.px(f.x0),
            f.px(f.x1)
        );
    }
    let _ = writeln!(
        out,
        r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="black"/><text x="{:.2}" y="{:.2}">baseline</text>"#,
        f.px(sweep.baseline_mean_v),
        f.py(sweep.baseline_estimate),
        f.px(sweep.baseline_mean_v) + 6.0,
        f.py(sweep.baseline_estimate) - 6.0
    );
    axes(
        &mut out,
        &f,
        &ticks(f.x0, f.x1, 4),
        &ticks(f.y0, f.y1, 5),
        &format!("posited population mean of {}", sweep.variable),
        "weighted estimate",
    );
    out.push_str("</svg>\n");
    out
}
