//! Table and chart export: CSV files with a metadata comment line and
//! standalone SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

/// Identifies a table parsing failure
#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("empty table text")]
    Empty,
    #[error("line {line}: expected {expected} cells, got {got}")]
    RaggedRow { line: usize, expected: usize, got: usize },
    #[error("line {line}, column {column}: cannot parse `{value}` as a number")]
    BadNumber { line: usize, column: String, value: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("cannot access table file: {0}")]
    Io(#[from] std::io::Error),
}

/// Holds a rectangular table with named columns and a metadata line; cells
/// are stored as text so the same container carries numeric datasets and
/// mixed metric reports
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Formats a float in compact exponent form that parses back exactly
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:e}")
    }
}

impl CsvTable {
    /// Builds an empty table with the given columns
    pub fn new(columns: &[&str]) -> Self {
        CsvTable {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a metadata entry recorded on the `# meta:` line
    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    /// Appends a row of numeric cells
    pub fn push_row_f64(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    /// Appends a row of raw text cells
    pub fn push_row(&mut self, row: &[&str]) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row.iter().map(|c| c.to_string()).collect());
    }

    /// Returns the index of a named column
    pub fn column(&self, name: &str) -> Result<usize, TableError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    /// Returns one column parsed as floats
    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>, TableError> {
        let idx = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(line, row)| parse_cell(&row[idx], line + 3, name))
            .collect()
    }

    /// Returns one cell parsed as a float
    pub fn f64_cell(&self, row: usize, name: &str) -> Result<f64, TableError> {
        let idx = self.column(name)?;
        parse_cell(&self.rows[row][idx], row + 3, name)
    }

    /// Returns a metadata value if present
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Serializes the table: a `# meta:` comment line, the header row, then
    /// one line per row
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let meta = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ");
        let _ = writeln!(out, "# meta: {meta}");
        let _ = writeln!(out, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Parses the serialized form
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines().enumerate();
        let mut out = CsvTable::default();
        let Some((_, first)) = lines.next() else {
            return Err(TableError::Empty);
        };
        let header = if let Some(meta) = first.strip_prefix("# meta:") {
            for item in meta.split(';') {
                let item = item.trim();
                if item.is_empty() {
                    continue;
                }
                match item.split_once('=') {
                    Some((k, v)) => out.meta.push((k.trim().to_string(), v.trim().to_string())),
                    None => out.meta.push((item.to_string(), String::new())),
                }
            }
            let Some((_, header)) = lines.next() else {
                return Err(TableError::Empty);
            };
            header
        } else {
            first
        };
        out.columns = header.split(',').map(|c| c.trim().to_string()).collect();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<String> = line.split(',').map(|c| c.trim().to_string()).collect();
            if row.len() != out.columns.len() {
                return Err(TableError::RaggedRow {
                    line: idx + 1,
                    expected: out.columns.len(),
                    got: row.len(),
                });
            }
            out.rows.push(row);
        }
        Ok(out)
    }

    /// Writes the table to a file
    pub fn save(&self, path: &Path) -> Result<(), TableError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a table from a file
    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64, TableError> {
    match cell {
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    cell.parse().map_err(|_| TableError::BadNumber {
        line,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

/// Holds one polyline series of a chart
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// Builds a labeled series
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.to_string(), points }
    }
}

/// Holds a line chart rendered as a standalone SVG document
#[derive(Clone, Debug)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_y: bool,
}

/// Chart canvas size and margins in SVG user units
const CHART_W: f64 = 800.0;
const CHART_H: f64 = 520.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 52.0;

/// Fixed series palette
const PALETTE: [&str; 6] = ["#1f6fb2", "#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#666666"];

impl LineChart {
    /// Builds an empty chart
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LineChart {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            log_y: false,
        }
    }

    /// Switches the vertical axis to a log10 scale; non-positive values are
    /// dropped from the rendered polylines
    pub fn with_log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    /// Appends one series
    pub fn add(&mut self, series: Series) {
        self.series.push(series);
    }

    fn transformed(&self) -> Vec<(String, Vec<(f64, f64)>)> {
        self.series
            .iter()
            .map(|s| {
                let pts = s
                    .points
                    .iter()
                    .filter(|(_, y)| !self.log_y || *y > 0.0)
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|(x, y)| (*x, if self.log_y { y.log10() } else { *y }))
                    .collect();
                (s.label.clone(), pts)
            })
            .collect()
    }

    /// Renders the chart as an SVG document
    pub fn to_svg(&self) -> String {
        let data = self.transformed();
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (_, pts) in &data {
            for (x, y) in pts {
                xs.push(*x);
                ys.push(*y);
            }
        }
        let (x0, x1) = span(&xs);
        let (y0, y1) = span(&ys);
        let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * (CHART_W - MARGIN_L - MARGIN_R);
        let py = |y: f64| CHART_H - MARGIN_B - (y - y0) / (y1 - y0) * (CHART_H - MARGIN_T - MARGIN_B);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\" font-family=\"sans-serif\" font-size=\"13\">"
        );
        let _ = writeln!(svg, "<rect width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>");
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
            MARGIN_L + (CHART_W - MARGIN_L - MARGIN_R) / 2.0,
            escape(&self.title)
        );
        // axes
        let (bx, by) = (px(x0), py(y0));
        let (tx, ty) = (px(x1), py(y1));
        let _ = writeln!(
            svg,
            "<line x1=\"{bx:.2}\" y1=\"{by:.2}\" x2=\"{tx:.2}\" y2=\"{by:.2}\" stroke=\"black\"/>"
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{bx:.2}\" y1=\"{by:.2}\" x2=\"{bx:.2}\" y2=\"{ty:.2}\" stroke=\"black\"/>"
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                svg,
                "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"black\"/><text x=\"{0:.2}\" y=\"{3:.2}\" text-anchor=\"middle\">{4}</text>",
                px(xv), by, by + 5.0, by + 20.0, tick_label(xv, false)
            );
            let _ = writeln!(
                svg,
                "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{2:.2}\" y2=\"{1:.2}\" stroke=\"black\"/><text x=\"{3:.2}\" y=\"{4:.2}\" text-anchor=\"end\">{5}</text>",
                bx, py(yv), bx - 5.0, bx - 8.0, py(yv) + 4.0, tick_label(yv, self.log_y)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            MARGIN_L + (CHART_W - MARGIN_L - MARGIN_R) / 2.0,
            CHART_H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>",
            (MARGIN_T + CHART_H - MARGIN_B) / 2.0,
            (MARGIN_T + CHART_H - MARGIN_B) / 2.0,
            escape(&if self.log_y { format!("log10 {}", self.y_label) } else { self.y_label.clone() })
        );
        // series and legend
        for (i, (label, pts)) in data.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if !pts.is_empty() {
                let path = pts
                    .iter()
                    .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                    .collect::<Vec<_>>()
                    .join(" ");
                let _ = writeln!(
                    svg,
                    "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>"
                );
            }
            let ly = MARGIN_T + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{2:.2}\" y2=\"{1:.2}\" stroke=\"{color}\" stroke-width=\"3\"/><text x=\"{3:.2}\" y=\"{4:.2}\">{5}</text>",
                CHART_W - MARGIN_R + 10.0,
                ly,
                CHART_W - MARGIN_R + 34.0,
                CHART_W - MARGIN_R + 40.0,
                ly + 4.0,
                escape(label)
            );
        }
        let _ = writeln!(svg, "</svg>");
        svg
    }

    /// Writes the chart to a file
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_svg())
    }
}

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.03 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        return format!("{v:.2}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs();
    if (0.01..10000.0).contains(&mag) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

////////////////////////////////////////////////////////////////////////////////
