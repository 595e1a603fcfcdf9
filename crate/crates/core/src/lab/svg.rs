use std::fmt::Write;

/// One named line.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, y)`; points with a non-finite coordinate are skipped.
    pub points: Vec<(f64, f64)>,
}

/// One chart of a stacked figure.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Fixed y range; fitted to the data when absent.
    pub y_range: Option<[f64; 2]>,
    pub series: Vec<Series>,
}

pub const WIDTH: f64 = 760.0;
pub const PANEL_HEIGHT: f64 = 300.0;
pub const MARGIN_LEFT: f64 = 64.0;
pub const MARGIN_RIGHT: f64 = 176.0;
pub const MARGIN_TOP: f64 = 34.0;
pub const MARGIN_BOTTOM: f64 = 46.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn finite_points(s: &Series) -> impl Iterator<Item = (f64, f64)> + '_ {
    s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite())
}

fn span(lo: f64, hi: f64) -> [f64; 2] {
    if !(lo.is_finite() && hi.is_finite()) {
        [0.0, 1.0]
    } else if hi - lo < 1e-12 {
        [lo - 0.5, hi + 0.5]
    } else {
        [lo, hi]
    }
}

/// Maps data coordinates of one panel into document space.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub top: f64,
}

impl Frame {
    fn plot_width() -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_height() -> f64 {
        PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN_LEFT + (x - self.x[0]) / (self.x[1] - self.x[0]) * Self::plot_width();
        let py = self.top + MARGIN_TOP + (self.y[1] - y) / (self.y[1] - self.y[0]) * Self::plot_height();
        (px, py)
    }
}

fn frame(panel: &Panel, top: f64) -> Frame {
    let pts: Vec<(f64, f64)> = panel.series.iter().flat_map(finite_points).collect();
    let fold = |f: fn(&(f64, f64)) -> f64| {
        pts.iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = fold(|p| p.0);
    let y = panel.y_range.unwrap_or_else(|| {
        let (y0, y1) = fold(|p| p.1);
        span(y0, y1)
    });
    Frame {
        x: span(x0, x1),
        y,
        top,
    }
}

fn ticks([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn render_panel(out: &mut String, panel: &Panel, top: f64) {
    let f = frame(panel, top);
    let (x_left, y_bottom) = f.map(f.x[0], f.y[0]);
    let (x_right, y_top) = f.map(f.x[1], f.y[1]);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        (x_left + x_right) / 2.0,
        top + 20.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{x_left:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        x_right - x_left,
        y_bottom - y_top
    );
    for v in ticks(f.y, 4) {
        let (_, py) = f.map(f.x[0], v);
        let _ = writeln!(
            out,
            r##"<line x1="{x_left:.2}" y1="{py:.2}" x2="{x_right:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
            x_left - 6.0,
            py + 4.0,
            tick_label(v)
        );
    }
    for v in ticks(f.x, 5) {
        let (px, _) = f.map(v, f.y[0]);
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            y_bottom + 16.0,
            tick_label(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        (x_left + x_right) / 2.0,
        y_bottom + 34.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        x_left - 44.0,
        (y_top + y_bottom) / 2.0,
        x_left - 44.0,
        (y_top + y_bottom) / 2.0,
        escape(&panel.y_label)
    );
    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mapped: Vec<(f64, f64)> = finite_points(s).map(|(x, y)| f.map(x, y)).collect();
        match mapped.len() {
            0 => {}
            1 => {
                let _ = writeln!(
                    out,
                    r#"<circle class="series" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    mapped[0].0, mapped[0].1
                );
            }
            _ => {
                let pts: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
            }
        }
        let ly = y_top + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"##,
            x_right + 12.0,
            x_right + 32.0,
            x_right + 38.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
}

/// Renders the panels stacked vertically into one standalone SVG document.
/// Identical input gives identical bytes.
pub fn render_curves(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        render_panel(&mut out, panel, PANEL_HEIGHT * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

/// Document-space frame `render_curves` uses for panel `index`.
pub fn panel_frame(panel: &Panel, index: usize) -> Frame {
    frame(panel, PANEL_HEIGHT * index as f64)
}
