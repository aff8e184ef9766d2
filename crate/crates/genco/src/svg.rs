//! Standalone SVG charts: multi-series line plots and step histograms.
//! Output is plain text built deterministically, so identical inputs give
//! identical bytes.

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn fmt(v: f64) -> String {
    // fixed precision keeps the byte stream stable
    format!("{v:.4}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// (name, points); non-finite y values are skipped.
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

impl LineChart {
    pub fn render(&self) -> String {
        let finite: Vec<(usize, &str, Vec<(f64, f64)>)> = self
            .series
            .iter()
            .enumerate()
            .map(|(i, (name, pts))| {
                (
                    i,
                    name.as_str(),
                    pts.iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .cloned()
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let all: Vec<(f64, f64)> = finite.iter().flat_map(|(_, _, p)| p.clone()).collect();
        let (x_min, x_max) = span(all.iter().map(|p| p.0));
        let (y_min, y_max) = span(all.iter().map(|p| p.1));
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
        let sy = |y: f64| MARGIN_T + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

        let mut svg = svg_open();
        svg.push_str(&format!(
            r#"<text x="{}" y="24" text-anchor="middle" font-family="monospace" font-size="16">{}</text>"#,
            fmt(WIDTH / 2.0),
            escape(&self.title)
        ));
        svg.push('\n');
        axes(&mut svg, x_min, x_max, y_min, y_max, &sx, &sy);
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{}</text>"#,
            fmt(MARGIN_L + plot_w / 2.0),
            fmt(HEIGHT - 12.0),
            escape(&self.x_label)
        ));
        svg.push('\n');
        svg.push_str(&format!(
            r#"<text x="16" y="{}" text-anchor="middle" font-family="monospace" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            fmt(MARGIN_T + plot_h / 2.0),
            fmt(MARGIN_T + plot_h / 2.0),
            escape(&self.y_label)
        ));
        svg.push('\n');

        for (idx, name, pts) in &finite {
            let color = COLORS[idx % COLORS.len()];
            if !pts.is_empty() {
                let mut d = String::new();
                for (i, (x, y)) in pts.iter().enumerate() {
                    d.push_str(&format!(
                        "{}{} {}",
                        if i == 0 { "M" } else { " L" },
                        fmt(sx(*x)),
                        fmt(sy(*y))
                    ));
                }
                svg.push_str(&format!(
                    r#"<path d="{d}" stroke="{color}" stroke-width="1.5" fill="none"/>"#
                ));
                svg.push('\n');
            }
            legend_entry(&mut svg, *idx, color, name);
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Overlaid step-outline histograms, one per named series of bin counts.
pub struct HistogramChart {
    pub title: String,
    pub x_label: String,
    /// (name, counts); all series share the same bin edges.
    pub series: Vec<(String, Vec<u64>)>,
    pub lo: f64,
    pub hi: f64,
}

impl HistogramChart {
    pub fn render(&self) -> String {
        let n_bins = self.series.first().map(|(_, c)| c.len()).unwrap_or(0);
        let max_count = self
            .series
            .iter()
            .flat_map(|(_, c)| c.iter())
            .copied()
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let plot_w = WIDTH - MARGIN_L - MARGIN_R;
        let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |bin: usize| MARGIN_L + bin as f64 / n_bins as f64 * plot_w;
        let sy = |count: f64| MARGIN_T + plot_h - count / max_count * plot_h;

        let mut svg = svg_open();
        svg.push_str(&format!(
            r#"<text x="{}" y="24" text-anchor="middle" font-family="monospace" font-size="16">{}</text>"#,
            fmt(WIDTH / 2.0),
            escape(&self.title)
        ));
        svg.push('\n');
        axes(&mut svg, self.lo, self.hi, 0.0, max_count, &|x| {
            MARGIN_L + (x - self.lo) / (self.hi - self.lo) * plot_w
        }, &|y| MARGIN_T + plot_h - y / max_count * plot_h);
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{}</text>"#,
            fmt(MARGIN_L + plot_w / 2.0),
            fmt(HEIGHT - 12.0),
            escape(&self.x_label)
        ));
        svg.push('\n');

        for (idx, (name, counts)) in self.series.iter().enumerate() {
            let color = COLORS[idx % COLORS.len()];
            let mut d = format!("M{} {}", fmt(sx(0)), fmt(sy(0.0)));
            for (bin, &count) in counts.iter().enumerate() {
                d.push_str(&format!(" L{} {}", fmt(sx(bin)), fmt(sy(count as f64))));
                d.push_str(&format!(" L{} {}", fmt(sx(bin + 1)), fmt(sy(count as f64))));
            }
            d.push_str(&format!(" L{} {}", fmt(sx(n_bins)), fmt(sy(0.0))));
            svg.push_str(&format!(
                r#"<path d="{d}" stroke="{color}" stroke-width="1.5" fill="{color}" fill-opacity="0.15"/>"#
            ));
            svg.push('\n');
            legend_entry(&mut svg, idx, color, name);
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn svg_open() -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">
<rect width="{}" height="{}" fill="white"/>
"#,
        WIDTH as u32, HEIGHT as u32, WIDTH as u32, HEIGHT as u32, WIDTH as u32, HEIGHT as u32
    )
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(
    svg: &mut String,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    sx: &dyn Fn(f64) -> f64,
    sy: &dyn Fn(f64) -> f64,
) {
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    svg.push_str(&format!(
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(plot_w),
        fmt(plot_h)
    ));
    svg.push('\n');
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="11">{}</text>"#,
            fmt(sx(fx)),
            fmt(HEIGHT - MARGIN_B + 16.0),
            fmt_tick(fx)
        ));
        svg.push('\n');
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="end" font-family="monospace" font-size="11">{}</text>"#,
            fmt(MARGIN_L - 6.0),
            fmt(sy(fy) + 4.0),
            fmt_tick(fy)
        ));
        svg.push('\n');
    }
}

fn legend_entry(svg: &mut String, idx: usize, color: &str, name: &str) {
    let y = MARGIN_T + 8.0 + 18.0 * idx as f64;
    svg.push_str(&format!(
        r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#,
        fmt(MARGIN_L + 8.0),
        fmt(y)
    ));
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-family="monospace" font-size="12">{}</text>"#,
        fmt(MARGIN_L + 26.0),
        fmt(y + 10.0),
        escape(name)
    ));
    svg.push('\n');
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
