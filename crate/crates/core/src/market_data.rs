//! Price ingestion, grid alignment, resampling and log-returns.
//!
//! Input files are one CSV per asset with header `timestamp,price`, the
//! timestamp in epoch milliseconds. The asset identifier is the file stem.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};

use crate::{Error, Result};

pub const MS_PER_MINUTE: i64 = 60_000;

/// Aligned per-asset prices on a uniform timestamp grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub period_minutes: u32,
    pub timestamps: Vec<i64>,
    pub assets: Vec<String>,
    /// rows = timestamps, columns = assets
    pub prices: Array2<f64>,
}

/// Log-returns at one sampling period. Row `i` is the return ending at
/// `timestamps[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub period_minutes: u32,
    pub timestamps: Vec<i64>,
    pub assets: Vec<String>,
    pub returns: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub base_period_minutes: u32,
    /// Minimum number of aligned rows the common range must contain.
    pub min_overlap_rows: usize,
}

impl LoadOptions {
    pub fn new(base_period_minutes: u32) -> Self {
        LoadOptions {
            base_period_minutes,
            min_overlap_rows: 2,
        }
    }
}

struct AssetSeries {
    asset: String,
    records: Vec<(i64, f64)>,
}

fn read_asset_file(path: &Path, step_ms: i64) -> Result<AssetSeries> {
    let asset = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            message: "file name is not valid UTF-8".into(),
        })?
        .to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "price" {
        return Err(parse_err(format!(
            "expected header `timestamp,price`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let timestamp: i64 = rec[0]
            .parse()
            .map_err(|_| parse_err(format!("row {row}: bad timestamp `{}`", &rec[0])))?;
        let price: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("row {row}: bad price `{}`", &rec[1])))?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::NonPositivePrice {
                asset: asset.clone(),
                row,
                timestamp,
                price,
            });
        }
        if timestamp.rem_euclid(step_ms) != 0 {
            return Err(parse_err(format!(
                "row {row}: timestamp {timestamp} is not on the {} min grid",
                step_ms / MS_PER_MINUTE
            )));
        }
        if let Some(&(prev, _)) = records.last() {
            if timestamp <= prev {
                return Err(parse_err(format!(
                    "row {row}: timestamp {timestamp} not strictly increasing"
                )));
            }
        }
        records.push((timestamp, price));
    }
    if records.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(AssetSeries { asset, records })
}

/// Load one CSV per asset and align them on the common grid.
///
/// The panel covers the intersection of the assets' time ranges. Interior
/// gaps are forward-filled from the last observed price. Assets are sorted
/// lexicographically.
pub fn load_prices<P: AsRef<Path>>(paths: &[P], opts: &LoadOptions) -> Result<PricePanel> {
    if opts.base_period_minutes == 0 {
        return Err(Error::InvalidArgument(
            "base period must be positive".into(),
        ));
    }
    let step_ms = opts.base_period_minutes as i64 * MS_PER_MINUTE;
    let mut series = BTreeMap::new();
    for path in paths {
        let s = read_asset_file(path.as_ref(), step_ms)?;
        if series.contains_key(&s.asset) {
            return Err(Error::InvalidArgument(format!(
                "duplicate asset `{}`",
                s.asset
            )));
        }
        series.insert(s.asset.clone(), s);
    }
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 assets, got {}",
            series.len()
        )));
    }

    let start = series.values().map(|s| s.records[0].0).max().unwrap();
    let end = series
        .values()
        .map(|s| s.records.last().unwrap().0)
        .min()
        .unwrap();
    let rows = if end >= start {
        ((end - start) / step_ms + 1) as usize
    } else {
        0
    };
    let required = opts.min_overlap_rows.max(2);
    if rows < required {
        return Err(Error::InsufficientOverlap { rows, required });
    }

    let timestamps: Vec<i64> = (0..rows).map(|i| start + i as i64 * step_ms).collect();
    let mut prices = Array2::<f64>::zeros((rows, series.len()));
    for (col, s) in series.values().enumerate() {
        // last record at or before `start`
        let mut cursor = s.records.partition_point(|&(t, _)| t <= start) - 1;
        let mut current = s.records[cursor].1;
        for (row, &ts) in timestamps.iter().enumerate() {
            while cursor + 1 < s.records.len() && s.records[cursor + 1].0 <= ts {
                cursor += 1;
                current = s.records[cursor].1;
            }
            prices[[row, col]] = current;
        }
    }

    Ok(PricePanel {
        period_minutes: opts.base_period_minutes,
        timestamps,
        assets: series.into_keys().collect(),
        prices,
    })
}

/// All `*.csv` files in a directory, sorted by name.
pub fn price_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Keep the grid points aligned to multiples of `period_minutes`. Because the
/// panel is forward-filled, the price kept at each point is the last one
/// observed in the bucket that the point closes.
pub fn resample(panel: &PricePanel, period_minutes: u32) -> Result<PricePanel> {
    let base = panel.period_minutes;
    if period_minutes == 0 || !period_minutes.is_multiple_of(base) {
        return Err(Error::InvalidPeriod {
            period: period_minutes,
            base,
        });
    }
    if period_minutes == base {
        return Ok(panel.clone());
    }
    let step_ms = period_minutes as i64 * MS_PER_MINUTE;
    let kept: Vec<usize> = panel
        .timestamps
        .iter()
        .enumerate()
        .filter(|(_, &t)| t.rem_euclid(step_ms) == 0)
        .map(|(i, _)| i)
        .collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientOverlap {
            rows: kept.len(),
            required: 2,
        });
    }
    let prices = panel.prices.select(ndarray::Axis(0), &kept);
    Ok(PricePanel {
        period_minutes,
        timestamps: kept.iter().map(|&i| panel.timestamps[i]).collect(),
        assets: panel.assets.clone(),
        prices,
    })
}

/// Natural-log returns between consecutive grid points.
pub fn log_returns(panel: &PricePanel) -> ReturnMatrix {
    let logs = panel.prices.mapv(f64::ln);
    let returns = &logs.slice(s![1.., ..]) - &logs.slice(s![..-1, ..]);
    ReturnMatrix {
        period_minutes: panel.period_minutes,
        timestamps: panel.timestamps[1..].to_vec(),
        assets: panel.assets.clone(),
        returns,
    }
}

impl PricePanel {
    /// Wide CSV: `timestamp,<asset1>,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_wide(writer, &self.assets, &self.timestamps, self.prices.view())
    }

    pub fn read_csv<R: Read>(reader: R, period_minutes: u32) -> Result<PricePanel> {
        let (assets, timestamps, prices) = read_wide(reader)?;
        if let Some((row, col)) = prices
            .indexed_iter()
            .find(|(_, &p)| !(p > 0.0 && p.is_finite()))
            .map(|(ix, _)| ix)
        {
            return Err(Error::NonPositivePrice {
                asset: assets[col].clone(),
                row,
                timestamp: timestamps[row],
                price: prices[[row, col]],
            });
        }
        Ok(PricePanel {
            period_minutes,
            timestamps,
            assets,
            prices,
        })
    }
}

impl ReturnMatrix {
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    /// The `rows` returns ending exactly at `window_end`, or `None` when the
    /// timestamp is not on the grid or fewer rows precede it.
    pub fn window(&self, window_end: i64, rows: usize) -> Option<ArrayView2<'_, f64>> {
        let end = self.timestamps.binary_search(&window_end).ok()?;
        if rows == 0 || end + 1 < rows {
            return None;
        }
        Some(self.returns.slice(s![end + 1 - rows..=end, ..]))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_wide(writer, &self.assets, &self.timestamps, self.returns.view())
    }
}

fn write_wide<W: Write>(
    writer: W,
    assets: &[String],
    timestamps: &[i64],
    values: ArrayView2<'_, f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(assets.iter().cloned());
    w.write_record(&header)?;
    for (ts, row) in timestamps.iter().zip(values.rows()) {
        let mut rec = vec![ts.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn read_wide<R: Read>(reader: R) -> Result<(Vec<String>, Vec<i64>, Array2<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let bad = |message: String| Error::Parse {
        path: PathBuf::from("<wide csv>"),
        message,
    };
    if headers.len() < 2 || &headers[0] != "timestamp" {
        return Err(bad("expected header `timestamp,<asset>,...`".into()));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        timestamps.push(
            rec[0]
                .parse()
                .map_err(|_| bad(format!("row {row}: bad timestamp")))?,
        );
        for field in rec.iter().skip(1) {
            flat.push(
                field
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {row}: bad value `{field}`")))?,
            );
        }
    }
    let values = Array2::from_shape_vec((timestamps.len(), assets.len()), flat)
        .map_err(|e| bad(e.to_string()))?;
    Ok((assets, timestamps, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_asset(dir: &Path, name: &str, rows: &[(i64, f64)]) -> PathBuf {
        let path = dir.join(format!("{name}.csv"));
        let mut f = File::create(&path).unwrap();
        writeln!(f, "timestamp,price").unwrap();
        for (t, p) in rows {
            writeln!(f, "{t},{p}").unwrap();
        }
        path
    }

    fn minute(i: i64) -> i64 {
        i * MS_PER_MINUTE
    }

    fn panel_1min(prices: &[f64]) -> PricePanel {
        PricePanel {
            period_minutes: 1,
            timestamps: (1..=prices.len() as i64).map(minute).collect(),
            assets: vec!["X".into()],
            prices: Array2::from_shape_vec((prices.len(), 1), prices.to_vec()).unwrap(),
        }
    }

    #[test]
    fn aligned_input_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<_> = (0..10).map(|i| (minute(i), 100.0 + i as f64)).collect();
        let b = write_asset(dir.path(), "BBB", &rows);
        let a = write_asset(dir.path(), "AAA", &rows);
        let panel = load_prices(&[b, a], &LoadOptions::new(1)).unwrap();
        assert_eq!(panel.timestamps.len(), 10);
        assert_eq!(panel.assets, vec!["AAA", "BBB"]);
        assert_eq!(panel.prices[[9, 0]], 109.0);
    }

    #[test]
    fn interior_gap_is_forward_filled() {
        let dir = tempfile::tempdir().unwrap();
        let full: Vec<_> = (0..6).map(|i| (minute(i), 10.0 + i as f64)).collect();
        let gappy: Vec<_> = full
            .iter()
            .copied()
            .filter(|&(t, _)| t != minute(3))
            .collect();
        let a = write_asset(dir.path(), "A", &full);
        let b = write_asset(dir.path(), "B", &gappy);
        let panel = load_prices(&[a, b], &LoadOptions::new(1)).unwrap();
        assert_eq!(panel.timestamps.len(), 6);
        assert_eq!(panel.prices[[3, 1]], 12.0);
        assert_eq!(panel.prices[[4, 1]], 14.0);
    }

    #[test]
    fn ranges_are_intersected() {
        let dir = tempfile::tempdir().unwrap();
        let a: Vec<_> = (0..10).map(|i| (minute(i), 1.0)).collect();
        let b: Vec<_> = (3..12).map(|i| (minute(i), 2.0)).collect();
        let pa = write_asset(dir.path(), "A", &a);
        let pb = write_asset(dir.path(), "B", &b);
        let panel = load_prices(&[pa, pb], &LoadOptions::new(1)).unwrap();
        assert_eq!(panel.timestamps.first(), Some(&minute(3)));
        assert_eq!(panel.timestamps.last(), Some(&minute(9)));
    }

    #[test]
    fn zero_price_names_asset_and_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_asset(dir.path(), "GOOD", &[(0, 1.0), (minute(1), 1.0)]);
        let b = write_asset(dir.path(), "BAD", &[(0, 1.0), (minute(1), 0.0)]);
        let err = load_prices(&[a, b], &LoadOptions::new(1)).unwrap_err();
        match err {
            Error::NonPositivePrice {
                asset,
                timestamp,
                row,
                ..
            } => {
                assert_eq!(asset, "BAD");
                assert_eq!(timestamp, minute(1));
                assert_eq!(row, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_asset(dir.path(), "A", &[(0, 1.0), (minute(1), 1.0)]);
        let b = write_asset(dir.path(), "EMPTY", &[]);
        let err = load_prices(&[a, b], &LoadOptions::new(1)).unwrap_err();
        assert!(matches!(err, Error::EmptyFile { ref path } if path.ends_with("EMPTY.csv")));
    }

    #[test]
    fn short_overlap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_asset(
            dir.path(),
            "A",
            &[(0, 1.0), (minute(1), 1.0), (minute(2), 1.0)],
        );
        let b = write_asset(dir.path(), "B", &[(minute(2), 1.0), (minute(3), 1.0)]);
        let err = load_prices(&[a, b], &LoadOptions::new(1)).unwrap_err();
        assert!(matches!(err, Error::InsufficientOverlap { rows: 1, .. }));

        let opts = LoadOptions {
            base_period_minutes: 1,
            min_overlap_rows: 20,
        };
        let a = write_asset(
            dir.path(),
            "C",
            &(0..10).map(|i| (minute(i), 1.0)).collect::<Vec<_>>(),
        );
        let b = write_asset(
            dir.path(),
            "D",
            &(0..10).map(|i| (minute(i), 1.0)).collect::<Vec<_>>(),
        );
        assert!(load_prices(&[a, b], &opts).is_err());
    }

    #[test]
    fn single_asset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_asset(dir.path(), "A", &[(0, 1.0), (minute(1), 1.0)]);
        assert!(matches!(
            load_prices(&[a], &LoadOptions::new(1)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn resample_identity_and_last_in_bucket() {
        let panel = panel_1min(&(1..=10).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(resample(&panel, 1).unwrap(), panel);
        let five = resample(&panel, 5).unwrap();
        assert_eq!(five.timestamps, vec![minute(5), minute(10)]);
        assert_eq!(five.prices.column(0).to_vec(), vec![5.0, 10.0]);
        assert_eq!(five.period_minutes, 5);
    }

    #[test]
    fn resample_rejects_non_multiples() {
        let mut panel = panel_1min(&[1.0; 20]);
        panel.period_minutes = 5;
        assert!(matches!(
            resample(&panel, 7),
            Err(Error::InvalidPeriod { period: 7, base: 5 })
        ));
        assert!(resample(&panel, 0).is_err());
    }

    #[test]
    fn log_return_examples() {
        let r = log_returns(&panel_1min(&[3.0, 3.0, 3.0]));
        assert!(r.returns.iter().all(|&v| v == 0.0));

        let r = log_returns(&panel_1min(&[100.0, 100.0 * std::f64::consts::E]));
        assert!((r.returns[[0, 0]] - 1.0).abs() < 1e-15);

        let r = log_returns(&panel_1min(&[100.0, 50.0, 100.0]));
        let ln2 = std::f64::consts::LN_2;
        assert!((r.returns[[0, 0]] + ln2).abs() < 1e-15);
        assert!((r.returns[[1, 0]] - ln2).abs() < 1e-15);
        assert!(r.returns.column(0).sum().abs() < 1e-15);
        assert_eq!(r.timestamps, vec![minute(2), minute(3)]);
    }

    #[test]
    fn window_slices_trailing_rows() {
        let r = log_returns(&panel_1min(&[1.0, 2.0, 4.0, 8.0, 16.0]));
        let w = r.window(minute(4), 2).unwrap();
        assert_eq!(w.nrows(), 2);
        assert!(r.window(minute(4), 4).is_none());
        assert!(r.window(minute(4) + 1, 1).is_none());
    }

    #[test]
    fn wide_csv_round_trip() {
        let panel = panel_1min(&[1.5, 2.25, 3.125]);
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("timestamp,X\n"));
        let back = PricePanel::read_csv(buf.as_slice(), 1).unwrap();
        assert_eq!(back, panel);
    }
}
