//! Price and return panels: CSV ingest, gap filling, log returns and
//! date-based subsampling.
//!
//! The interchange format is a wide CSV whose first column is an ISO-8601
//! `date` and whose remaining columns hold one series each, labelled by the
//! series code. Empty cells are missing observations.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    /// Header of the date column.
    pub date_column: String,
    /// Optional subset of series columns to keep, in output order.
    pub series: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date_column: "date".to_string(),
            series: None,
        }
    }
}

/// Date-indexed prices. Missing cells are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<String>,
    /// `T x n`, rows are dates.
    pub values: DMatrix<f64>,
}

/// Date-indexed log returns with no missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<String>,
    /// `T x n`, rows are dates.
    pub values: DMatrix<f64>,
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    for (row, w) in dates.windows(2).enumerate() {
        if w[1] == w[0] {
            return Err(Error::DuplicateDate {
                row: row + 1,
                date: w[1],
            });
        }
        if w[1] < w[0] {
            return Err(Error::UnsortedDate {
                row: row + 1,
                date: w[1],
            });
        }
    }
    Ok(())
}

fn check_labels(labels: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} dates x {} labels vs {}x{} values",
                dates.len(),
                labels.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        if dates.len() < 2 {
            return Err(Error::InsufficientData(
                "a price panel needs at least two dates".into(),
            ));
        }
        check_dates(&dates)?;
        check_labels(&labels)?;
        Ok(Self {
            dates,
            labels,
            values,
        })
    }

    pub fn n_series(&self) -> usize {
        self.labels.len()
    }

    pub fn n_obs(&self) -> usize {
        self.dates.len()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.values[(row, col)].is_nan()
    }

    /// Writes the panel in the wide CSV layout; missing cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_wide(out, &self.dates, &self.labels, &self.values)
    }
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} dates x {} labels vs {}x{} values",
                dates.len(),
                labels.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("return panel"));
        }
        check_dates(&dates)?;
        check_labels(&labels)?;
        Ok(Self {
            dates,
            labels,
            values,
        })
    }

    /// Builds a panel with synthetic consecutive daily dates starting at
    /// 2000-01-01. Handy for simulated data.
    pub fn from_values(labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = start.iter_days().take(values.nrows()).collect();
        Self::new(dates, labels, values)
    }

    pub fn n_series(&self) -> usize {
        self.labels.len()
    }

    pub fn n_obs(&self) -> usize {
        self.dates.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).iter().copied().collect()
    }

    /// Rows `start..end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates[start..end].to_vec(),
            labels: self.labels.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }

    /// Reads a wide CSV of returns. Every cell must be present.
    pub fn read_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<Self> {
        let (dates, labels, values) = read_wide(input, schema)?;
        for (idx, v) in values.iter().enumerate() {
            if v.is_nan() {
                let (row, col) = (idx % values.nrows(), idx / values.nrows());
                return Err(Error::BadNumber {
                    row: row + 1,
                    column: labels[col].clone(),
                    value: String::new(),
                });
            }
        }
        Self::new(dates, labels, values)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_wide(out, &self.dates, &self.labels, &self.values)
    }
}

fn read_wide<R: Read>(
    input: R,
    schema: &CsvSchema,
) -> Result<(Vec<NaiveDate>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let date_idx = headers
        .iter()
        .position(|h| h == &schema.date_column)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("no date column {:?}", schema.date_column))
        })?;
    let series_idx: Vec<usize> = match &schema.series {
        Some(wanted) => wanted
            .iter()
            .map(|w| {
                headers
                    .iter()
                    .position(|h| h == w)
                    .ok_or_else(|| Error::InvalidArgument(format!("no series column {w:?}")))
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != date_idx).collect(),
    };
    let labels: Vec<String> = series_idx.iter().map(|&i| headers[i].clone()).collect();
    check_labels(&labels)?;

    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(date_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|_| Error::BadDate {
            row: row + 1,
            value: raw.to_string(),
        })?;
        dates.push(date);
        for (&ci, label) in series_idx.iter().zip(&labels) {
            let s = rec.get(ci).unwrap_or("");
            let v = if s.is_empty() || s.eq_ignore_ascii_case("na") {
                f64::NAN
            } else {
                let v: f64 = s.parse().map_err(|_| Error::BadNumber {
                    row: row + 1,
                    column: label.clone(),
                    value: s.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::BadNumber {
                        row: row + 1,
                        column: label.clone(),
                        value: s.to_string(),
                    });
                }
                v
            };
            cells.push(v);
        }
    }
    check_dates(&dates)?;
    let values = DMatrix::from_row_slice(dates.len(), labels.len(), &cells);
    Ok((dates, labels, values))
}

fn write_wide<W: Write>(
    out: W,
    dates: &[NaiveDate],
    labels: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (r, d) in dates.iter().enumerate() {
        let mut rec = vec![d.format(DATE_FORMAT).to_string()];
        for c in 0..labels.len() {
            let v = values[(r, c)];
            rec.push(if v.is_nan() { String::new() } else { v.to_string() });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Loads a wide price CSV.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PricePanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (dates, labels, values) = read_wide(file, schema)?;
    PricePanel::new(dates, labels, values)
}

/// Outer-joins several panels on the union of their dates. Cells absent from
/// a source panel become missing.
pub fn align(panels: &[PricePanel]) -> Result<PricePanel> {
    let mut all: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for p in panels {
        for d in &p.dates {
            all.insert(*d, 0);
        }
    }
    for (i, v) in all.values_mut().enumerate() {
        *v = i;
    }
    let labels: Vec<String> = panels.iter().flat_map(|p| p.labels.clone()).collect();
    let mut values = DMatrix::from_element(all.len(), labels.len(), f64::NAN);
    let mut col0 = 0;
    for p in panels {
        for (r, d) in p.dates.iter().enumerate() {
            let row = all[d];
            for c in 0..p.n_series() {
                values[(row, col0 + c)] = p.values[(r, c)];
            }
        }
        col0 += p.n_series();
    }
    PricePanel::new(all.into_keys().collect(), labels, values)
}

/// Fills gaps: each missing cell takes the last prior observation of its
/// series; leading gaps take the first observation.
pub fn clean(panel: &PricePanel) -> Result<PricePanel> {
    let mut values = panel.values.clone();
    for (c, label) in panel.labels.iter().enumerate() {
        let mut col = values.column_mut(c);
        let first = col
            .iter()
            .position(|v| !v.is_nan())
            .ok_or_else(|| Error::EmptySeries(label.clone()))?;
        let fill = col[first];
        for r in 0..first {
            col[r] = fill;
        }
        for r in first + 1..col.len() {
            if col[r].is_nan() {
                col[r] = col[r - 1];
            }
        }
    }
    Ok(PricePanel {
        dates: panel.dates.clone(),
        labels: panel.labels.clone(),
        values,
    })
}

/// `ln(p[t+1] / p[t])` for every series. The first date is dropped.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    let (t, n) = panel.values.shape();
    for r in 0..t {
        for c in 0..n {
            let v = panel.values[(r, c)];
            if v.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "missing price at row {} for {:?}; clean the panel first",
                    r + 1,
                    panel.labels[c]
                )));
            }
            if v <= 0.0 {
                return Err(Error::NonPositivePrice {
                    row: r + 1,
                    label: panel.labels[c].clone(),
                    value: v,
                });
            }
        }
    }
    let values = DMatrix::from_fn(t - 1, n, |r, c| {
        (panel.values[(r + 1, c)] / panel.values[(r, c)]).ln()
    });
    ReturnPanel::new(panel.dates[1..].to_vec(), panel.labels.clone(), values)
}

/// Splits into rows strictly before `break_date` and rows on or after it.
pub fn split(panel: &ReturnPanel, break_date: NaiveDate) -> Result<(ReturnPanel, ReturnPanel)> {
    let (first, last) = match (panel.dates.first(), panel.dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::InsufficientData("empty panel".into())),
    };
    if break_date < first || break_date > last {
        return Err(Error::BreakOutOfRange {
            date: break_date,
            first,
            last,
        });
    }
    let cut = panel.dates.partition_point(|d| *d < break_date);
    Ok((
        panel.slice_rows(0, cut),
        panel.slice_rows(cut, panel.n_obs()),
    ))
}

/// A single dated measure series, e.g. a TCI path.
#[derive(Debug, Clone, PartialEq)]
pub struct DatedSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl DatedSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} dates for {} values",
                dates.len(),
                values.len()
            )));
        }
        for (row, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::UnsortedDate { row: row + 2, date: w[1] });
            }
        }
        Ok(Self { dates, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values strictly before `date` and values on or after it.
    pub fn split_at_date(&self, date: NaiveDate) -> (&[f64], &[f64]) {
        let cut = self.dates.partition_point(|d| *d < date);
        self.values.split_at(cut)
    }
}

pub(crate) fn format_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

pub(crate) fn parse_date(row: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|_| Error::BadDate {
        row,
        value: s.to_string(),
    })
}
