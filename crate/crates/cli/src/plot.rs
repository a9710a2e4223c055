//! Loss-trace plots from metrics CSV files.
//!
//! With an `.svg` output path the plot is rendered directly (the built-in
//! backend); any other extension gets a gnuplot-ready columnar data file
//! plus a rendering script next to it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

pub const TERM_COLUMNS: [&str; 6] = ["mse_x", "mse_y", "kld", "mse_da", "ce", "total"];

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Parse a metrics CSV into one series per non-empty loss column.
pub fn parse_metrics_csv(text: &str, origin: &str) -> CliResult<Vec<Series>> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim(),
        None => return Err(CliError::Usage(format!("{origin}: empty file"))),
    };
    let expected = "step,epoch,mse_x,mse_y,kld,mse_da,ce,total";
    if header != expected {
        return Err(CliError::Usage(format!(
            "{origin}:1: unexpected header {header:?}, expected {expected:?}"
        )));
    }
    let mut series: Vec<Series> = TERM_COLUMNS
        .iter()
        .map(|name| Series {
            name: (*name).to_string(),
            points: Vec::new(),
        })
        .collect();
    let mut rows = 0usize;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(CliError::Usage(format!(
                "{origin}:{line_no}: expected 8 columns, got {}",
                fields.len()
            )));
        }
        let step: f64 = fields[0].parse().map_err(|_| {
            CliError::Usage(format!("{origin}:{line_no}: bad step {:?}", fields[0]))
        })?;
        for (k, slot) in series.iter_mut().enumerate() {
            let cell = fields[2 + k].trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Usage(format!(
                    "{origin}:{line_no}: bad {} value {cell:?}",
                    slot.name
                ))
            })?;
            slot.points.push((step, v));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Usage(format!("{origin}: no rows")));
    }
    Ok(series.into_iter().filter(|s| !s.points.is_empty()).collect())
}

pub fn load_metrics(path: &Path) -> CliResult<Vec<Series>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_metrics_csv(&text, &path.display().to_string())
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
    "#bcbd22", "#7f7f7f", "#aec7e8", "#ff9896",
];

/// Render loss series as a simple line chart.
pub fn render_svg(series: &[Series], title: &str) -> String {
    let (width, height) = (860.0, 520.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_min == x_max {
        x_max = x_min + 1.0;
    }
    if y_min == y_max {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let sx = move |x: f64| left + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| top + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
    .expect("string write");
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    write!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        left + plot_w / 2.0,
        xml_escape(title)
    )
    .expect("string write");

    // Axes and ticks.
    write!(
        svg,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>\n"
    )
    .expect("string write");
    for k in 0..=5 {
        let fx = x_min + (x_max - x_min) * k as f64 / 5.0;
        let fy = y_min + (y_max - y_min) * k as f64 / 5.0;
        let px = sx(fx);
        let py = sy(fy);
        write!(
            svg,
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#999\"/>\n",
            top + plot_h,
            top + plot_h + 5.0
        )
        .expect("string write");
        write!(
            svg,
            "<text x=\"{px}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.0}</text>\n",
            top + plot_h + 18.0,
            fx
        )
        .expect("string write");
        write!(
            svg,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{left}\" y2=\"{py}\" stroke=\"#999\"/>\n",
            left - 5.0
        )
        .expect("string write");
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            left - 8.0,
            py + 4.0,
            fy
        )
        .expect("string write");
    }
    write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">minibatch</text>\n",
        left + plot_w / 2.0,
        height - 10.0
    )
    .expect("string write");

    // Series lines and legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            let cmd = if path.is_empty() { 'M' } else { 'L' };
            write!(path, "{cmd}{:.2},{:.2} ", sx(x), sy(y)).expect("string write");
        }
        write!(
            svg,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.trim_end()
        )
        .expect("string write");
        let ly = top + 16.0 * i as f64 + 8.0;
        write!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            width - right + 10.0,
            width - right + 34.0
        )
        .expect("string write");
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            width - right + 40.0,
            ly + 4.0,
            xml_escape(&s.name)
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write plot artifacts for `series`: SVG when the path ends in `.svg`,
/// otherwise a columnar data file plus `<out>.gp`. Returns the written
/// paths.
pub fn write_plot(series: &[Series], out: &Path, title: &str) -> CliResult<Vec<PathBuf>> {
    if series.is_empty() {
        return Err(CliError::Usage("no series to plot".to_string()));
    }
    let io_err = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    if out.extension().is_some_and(|e| e == "svg") {
        std::fs::write(out, render_svg(series, title)).map_err(|e| io_err(out, e))?;
        return Ok(vec![out.to_path_buf()]);
    }

    // Columnar data: union of steps, one column per series, "?" when a
    // series has no value at that step.
    let mut steps: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    steps.sort_by(f64::total_cmp);
    steps.dedup();
    let mut data = String::new();
    write!(data, "# step").expect("string write");
    for s in series {
        write!(data, " {}", s.name).expect("string write");
    }
    data.push('\n');
    for &step in &steps {
        write!(data, "{step}").expect("string write");
        for s in series {
            match s.points.iter().find(|p| p.0 == step) {
                Some(&(_, v)) => write!(data, " {v}").expect("string write"),
                None => write!(data, " ?").expect("string write"),
            }
        }
        data.push('\n');
    }
    std::fs::write(out, data).map_err(|e| io_err(out, e))?;

    let script_path = out.with_extension(format!(
        "{}.gp",
        out.extension().and_then(|e| e.to_str()).unwrap_or("dat")
    ));
    let mut script = String::new();
    writeln!(script, "set datafile missing \"?\"").expect("string write");
    writeln!(script, "set xlabel \"minibatch\"").expect("string write");
    writeln!(script, "set title \"{title}\"").expect("string write");
    writeln!(script, "set key outside").expect("string write");
    write!(script, "plot").expect("string write");
    for (i, s) in series.iter().enumerate() {
        if i > 0 {
            write!(script, ",").expect("string write");
        }
        write!(
            script,
            " \"{}\" using 1:{} with lines title \"{}\"",
            out.display(),
            i + 2,
            s.name
        )
        .expect("string write");
    }
    script.push('\n');
    std::fs::write(&script_path, script).map_err(|e| io_err(&script_path, e))?;
    Ok(vec![out.to_path_buf(), script_path])
}
