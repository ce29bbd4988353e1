//! Atomic file writes and small renderers shared by the subcommands.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialisable");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Fixed-width scientific notation, stable across platforms.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// Builds a CSV in memory.
pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Config(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub err: Option<&'a [f64]>,
}

/// Static line plot with optional error bars.
pub fn line_plot_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let finite = |v: &&f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter()).filter(finite);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let ys = series.iter().flat_map(|s| {
        s.y.iter().enumerate().flat_map(move |(k, &v)| {
            let e = s.err.map_or(0.0, |e| e[k]);
            [v - e, v + e]
        })
    });
    let (y0, y1) = ys.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
    let ((x0, x1), (y0, y1)) = (span(x0, x1), span(y0, y1));
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s += &format!("<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n", W / 2.0);
    s += &format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n", W / 2.0, H - 16.0);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        s += &format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"{anchor}\">{v:.3}</text>\n", px(v), H - PAD + 16.0);
    }
    for v in [y0, y1] {
        s += &format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>\n", PAD - 4.0, py(v) + 4.0);
    }
    for (k, ser) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(ser.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>\n", pts.join(" "));
        if let Some(err) = ser.err {
            for ((&x, &y), &e) in ser.x.iter().zip(ser.y).zip(err) {
                if e > 0.0 && e.is_finite() && y.is_finite() {
                    s += &format!(
                        "<line x1=\"{0:.2}\" x2=\"{0:.2}\" y1=\"{1:.2}\" y2=\"{2:.2}\" stroke=\"{colour}\"/>\n",
                        px(x),
                        py(y - e),
                        py(y + e)
                    );
                }
            }
        }
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{colour}\">{}</text>\n",
            PAD + 8.0,
            PAD + 16.0 * (k + 1) as f64,
            ser.label
        );
    }
    s += "</svg>\n";
    s
}
