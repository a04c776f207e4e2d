//! Presentation of finished runs: comparison tables (plain text and CSV) and
//! PNG figures (confusion heatmap, per-class accuracy bars, accuracy against
//! batch size).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use phyto_core::format::{fixed, percent};
use phyto_core::{ConfusionMatrix, LabelSpace};
use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::runner::{files, AxisValue, RunResult, RunState, RunStatus, SweepAxis, SweepSummary, SWEEP_SUMMARY};
use crate::{Error, Result};

/// Printed in place of a value a run does not have.
pub const MISSING: &str = "n/a";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Run,
    Backbone,
    Strategy,
    LearningRates,
    BatchSize,
    Repeat,
    Accuracy,
    Precision,
    Recall,
    WeightedPrecision,
    WeightedRecall,
    BestValAccuracy,
    TrainingMinutes,
    Status,
}

impl Column {
    pub fn header(self) -> &'static str {
        match self {
            Column::Run => "Run",
            Column::Backbone => "Backbone",
            Column::Strategy => "Strategy",
            Column::LearningRates => "Learning rate",
            Column::BatchSize => "Batch size",
            Column::Repeat => "Repeat",
            Column::Accuracy => "Accuracy (%)",
            Column::Precision => "Precision (%)",
            Column::Recall => "Recall (%)",
            Column::WeightedPrecision => "Weighted precision (%)",
            Column::WeightedRecall => "Weighted recall (%)",
            Column::BestValAccuracy => "Validation accuracy (%)",
            Column::TrainingMinutes => "Training time (min)",
            Column::Status => "Status",
        }
    }

    pub fn csv_name(self) -> &'static str {
        match self {
            Column::Run => "run",
            Column::Backbone => "backbone",
            Column::Strategy => "strategy",
            Column::LearningRates => "learning_rates",
            Column::BatchSize => "batch_size",
            Column::Repeat => "repeat",
            Column::Accuracy => "accuracy",
            Column::Precision => "precision",
            Column::Recall => "recall",
            Column::WeightedPrecision => "weighted_precision",
            Column::WeightedRecall => "weighted_recall",
            Column::BestValAccuracy => "best_val_accuracy",
            Column::TrainingMinutes => "training_minutes",
            Column::Status => "status",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Text(String),
    /// A fraction in `[0, 1]`, printed as a percentage.
    Fraction(f64),
    Minutes(f64),
    Int(u64),
}

impl CellValue {
    fn text(&self) -> String {
        match self {
            CellValue::Text(s) => s.clone(),
            CellValue::Fraction(v) => percent(*v, 2),
            CellValue::Minutes(v) => fixed(*v, 2),
            CellValue::Int(v) => v.to_string(),
        }
    }

    fn csv(&self) -> String {
        match self {
            CellValue::Text(s) => s.clone(),
            CellValue::Fraction(v) | CellValue::Minutes(v) => v.to_string(),
            CellValue::Int(v) => v.to_string(),
        }
    }

    fn number(&self) -> Option<f64> {
        match self {
            CellValue::Fraction(v) | CellValue::Minutes(v) => Some(*v),
            CellValue::Int(v) => Some(*v as f64),
            CellValue::Text(_) => None,
        }
    }

    fn is_numeric(&self) -> bool {
        self.number().is_some()
    }
}

/// One table row; columns without a cell print as [`MISSING`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableRow {
    pub cells: BTreeMap<Column, CellValue>,
    /// Explanation shown as a footnote (e.g. why a run failed).
    pub note: Option<String>,
}

impl TableRow {
    pub fn set(mut self, column: Column, value: CellValue) -> Self {
        self.cells.insert(column, value);
        self
    }

    pub fn from_result(name: &str, r: &RunResult) -> Self {
        let lrs: Vec<String> = r.config.learning_rates.iter().map(|l| format!("{l}")).collect();
        Self::default()
            .set(Column::Run, CellValue::Text(name.into()))
            .set(Column::Backbone, CellValue::Text(r.config.backbone.display_name().into()))
            .set(Column::Strategy, CellValue::Text(r.config.strategy.as_str().into()))
            .set(Column::LearningRates, CellValue::Text(lrs.join("/")))
            .set(Column::BatchSize, CellValue::Int(r.config.batch_size as u64))
            .set(Column::Accuracy, CellValue::Fraction(r.test.accuracy))
            .set(Column::Precision, CellValue::Fraction(r.test.macro_precision))
            .set(Column::Recall, CellValue::Fraction(r.test.macro_recall))
            .set(Column::WeightedPrecision, CellValue::Fraction(r.test.weighted_precision))
            .set(Column::WeightedRecall, CellValue::Fraction(r.test.weighted_recall))
            .set(Column::BestValAccuracy, CellValue::Fraction(r.best.val_accuracy))
            .set(Column::TrainingMinutes, CellValue::Minutes(r.wall_clock_minutes))
            .set(Column::Status, CellValue::Text("completed".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub title: String,
    pub columns: Vec<Column>,
    pub rows: Vec<TableRow>,
    /// Stable sort on this column (ascending), missing values last.
    pub sort: Option<Column>,
    /// The row with the largest value here is marked (first on ties).
    pub highlight: Option<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
}

/// Marker in front of the highlighted row.
pub const HIGHLIGHT: &str = "*";

pub fn render_table(spec: &TableSpec) -> Result<RenderedTable> {
    if spec.columns.is_empty() {
        return Err(Error::Report("table has no columns".into()));
    }
    let mut rows: Vec<&TableRow> = spec.rows.iter().collect();
    if let Some(col) = spec.sort {
        rows.sort_by(|a, b| {
            let (x, y) = (a.cells.get(&col), b.cells.get(&col));
            match (x, y) {
                (None, None) => std::cmp::Ordering::Equal,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (Some(_), None) => std::cmp::Ordering::Less,
                (Some(x), Some(y)) => match (x.number(), y.number()) {
                    (Some(p), Some(q)) => p.total_cmp(&q),
                    _ => x.text().cmp(&y.text()),
                },
            }
        });
    }
    let highlighted = spec.highlight.and_then(|col| {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in rows.iter().enumerate() {
            if let Some(v) = r.cells.get(&col).and_then(CellValue::number) {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
        }
        best.map(|(i, _)| i)
    });

    let mut notes: Vec<String> = Vec::new();
    let mut any_missing = false;
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let mut line = vec![if Some(i) == highlighted { HIGHLIGHT.to_string() } else { String::new() }];
        for c in &spec.columns {
            line.push(match r.cells.get(c) {
                Some(v) => v.text(),
                None => {
                    any_missing = true;
                    MISSING.to_string()
                }
            });
        }
        if let Some(n) = &r.note {
            notes.push(n.clone());
            let mark = format!("[{}]", notes.len());
            let last = line.last_mut().expect("at least one column");
            last.push(' ');
            last.push_str(&mark);
        }
        grid.push(line);
    }

    let headers: Vec<String> =
        std::iter::once(String::new()).chain(spec.columns.iter().map(|c| c.header().to_string())).collect();
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = headers.iter().map(|h| width(h)).collect();
    for line in &grid {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(width(cell));
        }
    }
    let numeric: Vec<bool> = std::iter::once(false)
        .chain(spec.columns.iter().map(|c| rows.iter().any(|r| r.cells.get(c).is_some_and(CellValue::is_numeric))))
        .collect();
    let fmt_line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .zip(&numeric)
            .map(|((c, &w), &num)| {
                let pad = " ".repeat(w - width(c));
                if num {
                    format!("{pad}{c}")
                } else {
                    format!("{c}{pad}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };

    let mut text = String::new();
    if !spec.title.is_empty() {
        text.push_str(&spec.title);
        text.push('\n');
    }
    text.push_str(&fmt_line(&headers));
    text.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    text.push_str(&rule.join("  "));
    text.push('\n');
    for line in &grid {
        text.push_str(&fmt_line(line));
        text.push('\n');
    }
    if let (Some(col), Some(_)) = (spec.highlight, highlighted) {
        text.push_str(&format!("{HIGHLIGHT} highest {}\n", col.header().to_lowercase()));
    }
    if any_missing {
        text.push_str(&format!("{MISSING}: value not available for this run\n"));
    }
    for (i, n) in notes.iter().enumerate() {
        text.push_str(&format!("[{}] {n}\n", i + 1));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = spec.columns.iter().map(|c| c.csv_name()).collect();
    if spec.highlight.is_some() {
        header.push("highlight");
    }
    header.push("note");
    w.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec: Vec<String> =
            spec.columns.iter().map(|c| r.cells.get(c).map(CellValue::csv).unwrap_or_default()).collect();
        if spec.highlight.is_some() {
            rec.push(if Some(i) == highlighted { "1".into() } else { String::new() });
        }
        rec.push(r.note.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Report(e.to_string()))?)
        .expect("csv output is built from strings");
    Ok(RenderedTable { text, csv })
}

pub fn write_table(spec: &TableSpec, text_path: &Path, csv_path: &Path) -> Result<RenderedTable> {
    let t = render_table(spec)?;
    write_atomic(text_path, t.text.as_bytes())?;
    write_atomic(csv_path, t.csv.as_bytes())?;
    Ok(t)
}

/// Comparison of sweep runs in axis order, marking the best validation
/// accuracy.
pub fn sweep_table(summary: &SweepSummary) -> TableSpec {
    let rows = summary
        .entries
        .iter()
        .map(|e| {
            let mut row = TableRow::default()
                .set(Column::Run, CellValue::Text(e.label.clone()))
                .set(Column::Repeat, CellValue::Int(e.repeat as u64))
                .set(Column::Status, CellValue::Text(if e.error.is_some() { "failed" } else { "completed" }.into()));
            if let Some(v) = e.best_val_accuracy {
                row = row.set(Column::BestValAccuracy, CellValue::Fraction(v));
            }
            if let Some(v) = e.test_accuracy {
                row = row.set(Column::Accuracy, CellValue::Fraction(v));
            }
            if let Some(v) = e.wall_clock_minutes {
                row = row.set(Column::TrainingMinutes, CellValue::Minutes(v));
            }
            row.note = e.error.clone();
            row
        })
        .collect();
    TableSpec {
        title: format!("Sweep over {}", summary.axis),
        columns: vec![
            Column::Run,
            Column::Repeat,
            Column::BestValAccuracy,
            Column::Accuracy,
            Column::TrainingMinutes,
            Column::Status,
        ],
        rows,
        sort: None,
        highlight: Some(Column::BestValAccuracy),
    }
}

/// Confusion matrix as CSV: a header of predicted class names, then one row
/// per true class.
pub fn confusion_csv(cm: &ConfusionMatrix, labels: &LabelSpace) -> Result<String> {
    if cm.num_classes() != labels.len() {
        return Err(Error::Report("label count differs from matrix size".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(labels.names().iter().cloned());
    w.write_record(&header)?;
    for (i, row) in cm.rows().enumerate() {
        let mut rec = vec![labels.names()[i].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Report(e.to_string()))?).expect("utf-8 input"))
}

pub fn write_confusion_csv(path: &Path, cm: &ConfusionMatrix, labels: &LabelSpace) -> Result<()> {
    write_atomic(path, confusion_csv(cm, labels)?.as_bytes())
}

pub fn parse_confusion_csv(text: &str) -> Result<(LabelSpace, ConfusionMatrix)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let labels = LabelSpace::new(header.clone())?;
    if labels.names() != header.as_slice() {
        return Err(Error::Report("confusion CSV classes are not in canonical order".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != labels.name(i) {
            return Err(Error::Report(format!("row {} should be class `{}`", i + 1, labels.name(i).unwrap_or("?"))));
        }
        let counts = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<u64>().map_err(|e| Error::Report(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(counts);
    }
    Ok((labels, ConfusionMatrix::from_rows(&rows)?))
}

pub fn read_confusion_csv(path: &Path) -> Result<(LabelSpace, ConfusionMatrix)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_confusion_csv(&text)
}

/// Minimal raster canvas with 8x8 bitmap text.
mod canvas {
    use super::*;

    pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
    pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
    pub const GRAY: Rgb<u8> = Rgb([200, 200, 200]);
    pub const ACCENT: Rgb<u8> = Rgb([31, 119, 180]);

    pub struct Canvas {
        pub img: RgbImage,
    }

    impl Canvas {
        pub fn new(w: u32, h: u32) -> Self {
            Self { img: RgbImage::from_pixel(w, h, WHITE) }
        }

        pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
            if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
                self.img.put_pixel(x as u32, y as u32, c);
            }
        }

        pub fn rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
            for yy in y..y + h {
                for xx in x..x + w {
                    self.put(xx, yy, c);
                }
            }
        }

        pub fn outline(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
            self.line(x, y, x + w - 1, y, c);
            self.line(x, y + h - 1, x + w - 1, y + h - 1, c);
            self.line(x, y, x, y + h - 1, c);
            self.line(x + w - 1, y, x + w - 1, y + h - 1, c);
        }

        pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
            let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
            let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
            let (mut x, mut y, mut err) = (x0, y0, dx + dy);
            loop {
                self.put(x, y, c);
                if x == x1 && y == y1 {
                    break;
                }
                let e2 = 2 * err;
                if e2 >= dy {
                    err += dy;
                    x += sx;
                }
                if e2 <= dx {
                    err += dx;
                    y += sy;
                }
            }
        }

        fn glyph(ch: char) -> [u8; 8] {
            let i = ch as usize;
            if i < 128 {
                font8x8::legacy::BASIC_LEGACY[i]
            } else {
                font8x8::legacy::BASIC_LEGACY[b'?' as usize]
            }
        }

        pub fn text_width(s: &str, scale: i64) -> i64 {
            s.chars().count() as i64 * 8 * scale
        }

        /// Horizontal text with its top-left corner at `(x, y)`.
        pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
            for (k, ch) in s.chars().enumerate() {
                let g = Self::glyph(ch);
                for (row, bits) in g.iter().enumerate() {
                    for col in 0..8 {
                        if bits >> col & 1 == 1 {
                            let px = x + (k as i64 * 8 + col) * scale;
                            let py = y + row as i64 * scale;
                            self.rect(px, py, scale, scale, c);
                        }
                    }
                }
            }
        }

        /// Text centered on `(cx, cy)`.
        pub fn text_centered(&mut self, cx: i64, cy: i64, s: &str, scale: i64, c: Rgb<u8>) {
            self.text(cx - Self::text_width(s, scale) / 2, cy - 4 * scale, s, scale, c);
        }

        /// Text rotated 90 degrees counter-clockwise, reading bottom to top;
        /// `(x, y)` is its bottom-left corner.
        pub fn text_up(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
            for (k, ch) in s.chars().enumerate() {
                let g = Self::glyph(ch);
                for (row, bits) in g.iter().enumerate() {
                    for col in 0..8 {
                        if bits >> col & 1 == 1 {
                            let px = x + row as i64 * scale;
                            let py = y - (k as i64 * 8 + col + 1) * scale;
                            self.rect(px, py, scale, scale, c);
                        }
                    }
                }
            }
        }

        pub fn save(&self, path: &Path) -> Result<()> {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut bytes = Vec::new();
            image::DynamicImage::ImageRgb8(self.img.clone())
                .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                .map_err(|source| Error::Image { id: path.display().to_string(), source })?;
            write_atomic(path, &bytes)
        }
    }
}

use canvas::{Canvas, ACCENT, BLACK, GRAY, WHITE};

/// Fill color of per-class accuracy bars.
pub const BAR_COLOR: Rgb<u8> = ACCENT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    LineBatchSize,
    PerClassBar,
    ConfusionHeatmap,
}

/// Geometry of a rendered confusion heatmap, for tests and callers that
/// post-process the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeatmapLayout {
    pub origin_x: u32,
    pub origin_y: u32,
    pub cell: u32,
}

impl HeatmapLayout {
    /// Pixel at the center of cell `(row, col)`.
    pub fn center(&self, row: usize, col: usize) -> (u32, u32) {
        (self.origin_x + col as u32 * self.cell + self.cell / 2, self.origin_y + row as u32 * self.cell + self.cell / 2)
    }
}

/// Cell color for a share in `[0, 1]` of its row: white to dark blue.
pub fn heat_color(share: f64) -> Rgb<u8> {
    let t = share.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)])
}

/// `k x k` heatmap with true classes on rows, predictions on columns, class
/// names on both axes and counts written in every cell. Shading is the
/// count's share of its row.
pub fn render_confusion_heatmap(cm: &ConfusionMatrix, labels: &LabelSpace, path: &Path) -> Result<HeatmapLayout> {
    let k = cm.num_classes();
    if k != labels.len() {
        return Err(Error::Report("label count differs from matrix size".into()));
    }
    let cell: i64 = 44;
    let longest = labels.names().iter().map(|n| n.chars().count()).max().unwrap_or(1) as i64;
    let label_px = longest * 8 + 12;
    let (ox, oy) = (label_px + 24, 40);
    let w = ox + k as i64 * cell + 20;
    let h = oy + k as i64 * cell + label_px + 24;
    let mut c = Canvas::new(w as u32, h as u32);
    c.text_centered(ox + k as i64 * cell / 2, 16, "Confusion matrix", 2, BLACK);
    for t in 0..k {
        let row_sum = cm.row_sum(t);
        for p in 0..k {
            let v = cm.get(t, p);
            let share = if row_sum > 0 { v as f64 / row_sum as f64 } else { 0.0 };
            let fill = heat_color(share);
            let (x, y) = (ox + p as i64 * cell, oy + t as i64 * cell);
            c.rect(x, y, cell, cell, fill);
            c.outline(x, y, cell + 1, cell + 1, GRAY);
            let ink = if share > 0.5 { WHITE } else { BLACK };
            c.text_centered(x + cell / 2, y + cell / 2, &v.to_string(), 1, ink);
        }
        let name = &labels.names()[t];
        c.text(ox - 6 - Canvas::text_width(name, 1), oy + t as i64 * cell + cell / 2 - 4, name, 1, BLACK);
        c.text_up(
            ox + t as i64 * cell + cell / 2 - 4,
            oy + k as i64 * cell + 6 + Canvas::text_width(name, 1),
            name,
            1,
            BLACK,
        );
    }
    c.text_up(4, oy + k as i64 * cell / 2 + 16, "True", 1, BLACK);
    c.text_centered(ox + k as i64 * cell / 2, h - 10, "Predicted", 1, BLACK);
    c.save(path)?;
    Ok(HeatmapLayout { origin_x: ox as u32, origin_y: oy as u32, cell: cell as u32 })
}

/// Geometry of a bar chart: plot bottom, pixels per percentage point and bar
/// x-centers, so bar heights can be read back from the image.
#[derive(Debug, Clone, PartialEq)]
pub struct BarLayout {
    pub baseline_y: u32,
    pub px_per_percent: f64,
    pub bar_centers: Vec<u32>,
    pub bar_width: u32,
}

/// One bar per class with its accuracy in percent (0 to 100 axis); classes
/// without test samples get no bar and an `n/a` label.
pub fn render_per_class_bars(per_class: &[Option<f64>], labels: &LabelSpace, path: &Path) -> Result<BarLayout> {
    let k = per_class.len();
    if k != labels.len() {
        return Err(Error::Report("label count differs from number of bars".into()));
    }
    let slot: i64 = 56;
    let plot_h: i64 = 300;
    let longest = labels.names().iter().map(|n| n.chars().count()).max().unwrap_or(1) as i64;
    let (ox, top) = (60, 50);
    let base = top + plot_h;
    let w = ox + k as i64 * slot + 20;
    let h = base + longest * 8 + 30;
    let mut c = Canvas::new(w as u32, h as u32);
    c.text_centered(ox + k as i64 * slot / 2, 16, "Per-class accuracy (%)", 2, BLACK);
    for tick in (0..=100).step_by(20) {
        let y = base - tick * plot_h / 100;
        c.line(ox - 4, y, ox + k as i64 * slot, y, if tick == 0 { BLACK } else { GRAY });
        let label = tick.to_string();
        c.text(ox - 8 - Canvas::text_width(&label, 1), y - 4, &label, 1, BLACK);
    }
    c.line(ox, top, ox, base, BLACK);
    let bar_w = slot * 2 / 3;
    let mut centers = Vec::with_capacity(k);
    for (i, acc) in per_class.iter().enumerate() {
        let cx = ox + i as i64 * slot + slot / 2;
        centers.push(cx as u32);
        match acc {
            Some(a) => {
                let pct = (a * 100.0).clamp(0.0, 100.0);
                let bar_h = (pct * plot_h as f64 / 100.0).round() as i64;
                c.rect(cx - bar_w / 2, base - bar_h, bar_w, bar_h, ACCENT);
                c.text_centered(cx, base - bar_h - 10, &percent(*a, 2), 1, BLACK);
            }
            None => c.text_centered(cx, base - 10, "n/a", 1, BLACK),
        }
        let name = &labels.names()[i];
        c.text_up(cx - 4, base + 8 + Canvas::text_width(name, 1), name, 1, BLACK);
    }
    c.save(path)?;
    Ok(BarLayout {
        baseline_y: base as u32,
        px_per_percent: plot_h as f64 / 100.0,
        bar_centers: centers,
        bar_width: bar_w as u32,
    })
}

/// Validation accuracy against batch size, one marker per batch size (x
/// positions evenly spaced in the given order).
pub fn render_batch_size_line(points: &[(usize, f64)], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Report("no points to plot".into()));
    }
    let lo = points.iter().map(|p| p.1 * 100.0).fold(f64::INFINITY, f64::min);
    let y_min = ((lo - 5.0) / 5.0).floor().max(0.0) * 5.0;
    let y_max = 100.0;
    let (ox, top, plot_w, plot_h) = (70i64, 50i64, 420i64, 280i64);
    let base = top + plot_h;
    let mut c = Canvas::new((ox + plot_w + 30) as u32, (base + 60) as u32);
    c.text_centered(ox + plot_w / 2, 16, "Validation accuracy vs batch size", 2, BLACK);
    let ty = |v: f64| base - ((v - y_min) / (y_max - y_min) * plot_h as f64).round() as i64;
    let mut tick = y_min;
    while tick <= y_max + 1e-9 {
        let y = ty(tick);
        c.line(ox, y, ox + plot_w, y, if tick == y_min { BLACK } else { GRAY });
        let label = fixed(tick, 0);
        c.text(ox - 8 - Canvas::text_width(&label, 1), y - 4, &label, 1, BLACK);
        tick += 5.0;
    }
    c.line(ox, top, ox, base, BLACK);
    let n = points.len() as i64;
    let tx = |i: usize| ox + (i as i64 * 2 + 1) * plot_w / (2 * n);
    let mut prev: Option<(i64, i64)> = None;
    for (i, (bs, acc)) in points.iter().enumerate() {
        let (x, y) = (tx(i), ty(acc * 100.0));
        if let Some((px, py)) = prev {
            c.line(px, py, x, y, ACCENT);
        }
        prev = Some((x, y));
        c.text_centered(x, base + 14, &bs.to_string(), 1, BLACK);
    }
    for (i, (_, acc)) in points.iter().enumerate() {
        let (x, y) = (tx(i), ty(acc * 100.0));
        c.rect(x - 3, y - 3, 7, 7, ACCENT);
        c.text_centered(x, y - 14, &percent(*acc, 2), 1, BLACK);
    }
    c.text_centered(ox + plot_w / 2, base + 40, "Batch size", 1, BLACK);
    c.save(path)
}

/// Figure request: the kind, its source runs and where to write the PNG.
#[derive(Debug, Clone)]
pub struct FigureSpec<'a> {
    pub kind: FigureKind,
    pub runs: Vec<&'a RunResult>,
    pub output: PathBuf,
}

pub fn render_figure(spec: &FigureSpec<'_>) -> Result<()> {
    match spec.kind {
        FigureKind::ConfusionHeatmap | FigureKind::PerClassBar => {
            let [run] = spec.runs.as_slice() else {
                return Err(Error::Report(format!("{:?} needs exactly one run", spec.kind)));
            };
            if spec.kind == FigureKind::ConfusionHeatmap {
                render_confusion_heatmap(&run.confusion, &run.labels, &spec.output).map(|_| ())
            } else {
                render_per_class_bars(&run.confusion.per_class_accuracy(), &run.labels, &spec.output).map(|_| ())
            }
        }
        FigureKind::LineBatchSize => render_batch_size_line(&batch_size_points(&spec.runs), &spec.output),
    }
}

/// Mean best validation accuracy per batch size, ascending batch size.
pub fn batch_size_points(runs: &[&RunResult]) -> Vec<(usize, f64)> {
    let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in runs {
        by.entry(r.config.batch_size).or_default().push(r.best.val_accuracy);
    }
    by.into_iter().map(|(bs, v)| (bs, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

/// What `report_runs` produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub completed: usize,
    pub failed: usize,
    pub files: Vec<PathBuf>,
}

fn find_run_dirs(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if root.join(files::STATUS).exists() || root.join(files::RESULT).exists() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        find_run_dirs(&c, out)?;
    }
    Ok(())
}

fn find_sweeps(root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if root.join(SWEEP_SUMMARY).exists() {
        out.push(root.to_path_buf());
    }
    let mut children: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        find_sweeps(&c, out)?;
    }
    Ok(())
}

fn run_name(root: &Path, dir: &Path) -> String {
    let rel = dir.strip_prefix(root).unwrap_or(dir);
    let name = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
    if name.is_empty() {
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| ".".into())
    } else {
        name
    }
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Renders every run under `runs_dir` into `out_dir`: a results table (text
/// and CSV), per-run confusion CSV, heatmap and per-class bars, and one
/// accuracy-vs-batch-size plot and table per batch-size sweep.
pub fn report_runs(runs_dir: &Path, out_dir: &Path) -> Result<ReportSummary> {
    let mut dirs = Vec::new();
    find_run_dirs(runs_dir, &mut dirs)?;
    if dirs.is_empty() {
        return Err(Error::Report(format!("no runs found under {}", runs_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = ReportSummary::default();
    let mut rows = Vec::new();
    let mut results: Vec<(String, RunResult)> = Vec::new();
    for dir in &dirs {
        let name = run_name(runs_dir, dir);
        let result_path = dir.join(files::RESULT);
        if result_path.exists() {
            let r = RunResult::load(&result_path)?;
            rows.push(TableRow::from_result(&name, &r));
            results.push((name, r));
            summary.completed += 1;
        } else {
            let status = RunStatus::read(dir)?;
            let mut row = TableRow::default().set(Column::Run, CellValue::Text(name.clone()));
            let state = match status.state {
                RunState::Failed => "failed",
                RunState::Running => "incomplete",
                RunState::Completed => "completed",
            };
            row = row.set(Column::Status, CellValue::Text(state.into()));
            if let Ok(cfg) = crate::runner::ExperimentConfig::load(&dir.join(files::CONFIG)) {
                let lrs: Vec<String> = cfg.learning_rates.iter().map(|l| format!("{l}")).collect();
                row = row
                    .set(Column::Backbone, CellValue::Text(cfg.backbone.display_name().into()))
                    .set(Column::Strategy, CellValue::Text(cfg.strategy.as_str().into()))
                    .set(Column::LearningRates, CellValue::Text(lrs.join("/")))
                    .set(Column::BatchSize, CellValue::Int(cfg.batch_size as u64));
            }
            let stage = serde_json::to_string(&status.stage)?;
            row.note = Some(match status.error {
                Some(e) => format!("{name}: {state} during {}: {e}", stage.trim_matches('"')),
                None => format!("{name}: {state} during {}", stage.trim_matches('"')),
            });
            rows.push(row);
            summary.failed += 1;
        }
    }
    let spec = TableSpec {
        title: "Test-set comparison".into(),
        columns: vec![
            Column::Run,
            Column::Backbone,
            Column::Strategy,
            Column::LearningRates,
            Column::BatchSize,
            Column::Accuracy,
            Column::Precision,
            Column::Recall,
            Column::BestValAccuracy,
            Column::TrainingMinutes,
        ],
        rows,
        sort: None,
        highlight: Some(Column::Accuracy),
    };
    let (txt, csv_path) = (out_dir.join("results.txt"), out_dir.join("results.csv"));
    write_table(&spec, &txt, &csv_path)?;
    summary.files.extend([txt, csv_path]);

    for (name, r) in &results {
        let dir = out_dir.join("runs").join(file_stem(name));
        let paths = [dir.join(files::CONFUSION), dir.join("confusion_matrix.png"), dir.join("per_class_accuracy.png")];
        write_confusion_csv(&paths[0], &r.confusion, &r.labels)?;
        render_confusion_heatmap(&r.confusion, &r.labels, &paths[1])?;
        render_per_class_bars(&r.confusion.per_class_accuracy(), &r.labels, &paths[2])?;
        summary.files.extend(paths);
    }

    let mut sweeps = Vec::new();
    find_sweeps(runs_dir, &mut sweeps)?;
    for sweep_dir in sweeps {
        let path = sweep_dir.join(SWEEP_SUMMARY);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sweep: SweepSummary = serde_json::from_str(&text)?;
        let stem = file_stem(&run_name(runs_dir, &sweep_dir));
        let (t, c) = (out_dir.join(format!("sweep_{stem}.txt")), out_dir.join(format!("sweep_{stem}.csv")));
        write_table(&sweep_table(&sweep), &t, &c)?;
        summary.files.extend([t, c]);
        if sweep.axis == SweepAxis::BatchSize {
            let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for e in &sweep.entries {
                if let (AxisValue::BatchSize { batch_size }, Some(v)) = (&e.value, e.best_val_accuracy) {
                    by.entry(*batch_size).or_default().push(v);
                }
            }
            let points: Vec<(usize, f64)> =
                by.into_iter().map(|(b, v)| (b, v.iter().sum::<f64>() / v.len() as f64)).collect();
            if !points.is_empty() {
                let p = out_dir.join(format!("sweep_{stem}_batch_size.png"));
                render_batch_size_line(&points, &p)?;
                summary.files.push(p);
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(k: usize) -> LabelSpace {
        LabelSpace::new((0..k).map(|i| format!("class{i}"))).unwrap()
    }

    fn acc_row(name: &str, acc: f64) -> TableRow {
        TableRow::default()
            .set(Column::Run, CellValue::Text(name.into()))
            .set(Column::Accuracy, CellValue::Fraction(acc))
    }

    #[test]
    fn percent_cells_round_half_even() {
        let spec = TableSpec {
            title: String::new(),
            columns: vec![Column::Run, Column::Accuracy],
            rows: vec![acc_row("a", 0.969697)],
            sort: None,
            highlight: None,
        };
        let t = render_table(&spec).unwrap();
        assert!(t.text.contains("96.97"), "{}", t.text);
        assert!(t.csv.contains("0.969697"), "{}", t.csv);
    }

    #[test]
    fn highlight_sort_and_missing() {
        let mut slow = acc_row("b", 0.9);
        slow = slow.set(Column::TrainingMinutes, CellValue::Minutes(1.5));
        let spec = TableSpec {
            title: "T".into(),
            columns: vec![Column::Run, Column::Accuracy, Column::TrainingMinutes],
            rows: vec![slow, acc_row("a", 0.95), acc_row("c", 0.95)],
            sort: Some(Column::Run),
            highlight: Some(Column::Accuracy),
        };
        let t = render_table(&spec).unwrap();
        let lines: Vec<&str> = t.text.lines().collect();
        assert!(lines[3].starts_with('*') && lines[3].contains(" a "), "{}", t.text);
        assert!(!lines[5].starts_with('*'));
        assert!(lines[3].ends_with(MISSING));
        assert!(t.text.contains(&format!("{MISSING}: value not available")));
        assert!(lines[4].ends_with("1.50"));
        let csv: Vec<&str> = t.csv.lines().collect();
        assert_eq!(csv[0], "run,accuracy,training_minutes,highlight,note");
        assert_eq!(csv[1], "a,0.95,,1,");
    }

    #[test]
    fn csv_quotes_fields() {
        let mut row = acc_row("x,y", 0.5);
        row.note = Some("said \"no\"".into());
        let spec = TableSpec {
            title: String::new(),
            columns: vec![Column::Run],
            rows: vec![row],
            sort: None,
            highlight: None,
        };
        let t = render_table(&spec).unwrap();
        assert_eq!(t.csv.lines().nth(1).unwrap(), "\"x,y\",\"said \"\"no\"\"\"");
        assert!(t.text.contains("[1] said \"no\""));
    }

    #[test]
    fn confusion_csv_round_trip() {
        let cm = ConfusionMatrix::from_rows(&[vec![5, 2, 0], vec![1, 9, 0], vec![0, 0, 3]]).unwrap();
        let text = confusion_csv(&cm, &labels(3)).unwrap();
        assert_eq!(text.lines().next().unwrap(), "true\\predicted,class0,class1,class2");
        assert_eq!(parse_confusion_csv(&text).unwrap(), (labels(3), cm));
    }

    #[test]
    fn identity_heatmap_shades_only_the_diagonal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        let cm = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4]]).unwrap();
        let layout = render_confusion_heatmap(&cm, &labels(3), &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        for t in 0..3 {
            for p in 0..3 {
                let (x, y) = layout.center(t, p);
                // corner of the cell, away from the annotation
                let px = img.get_pixel(x - 18, y - 18);
                if t == p {
                    assert_eq!(*px, heat_color(1.0));
                } else {
                    assert_eq!(*px, WHITE);
                }
            }
        }
    }

    #[test]
    fn full_bars_reach_the_top() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.png");
        let layout = render_per_class_bars(&[Some(1.0), Some(0.5), None], &labels(3), &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let top = |i: usize| {
            let x = layout.bar_centers[i] - layout.bar_width / 2 + 2;
            (0..layout.baseline_y).find(|&y| *img.get_pixel(x, y) == ACCENT).map(|y| layout.baseline_y - y)
        };
        assert_eq!(top(0), Some(300));
        assert_eq!(top(1), Some(150));
        assert_eq!(top(2), None);
    }

    #[test]
    fn batch_size_plot_renders() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        render_batch_size_line(&[(4, 0.9), (8, 0.953), (64, 0.8)], &path).unwrap();
        let a = std::fs::read(&path).unwrap();
        render_batch_size_line(&[(4, 0.9), (8, 0.953), (64, 0.8)], &path).unwrap();
        assert_eq!(a, std::fs::read(&path).unwrap());
    }
}
