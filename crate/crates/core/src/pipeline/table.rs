//! CSV curves: `#`-prefixed `key=value` metadata, a header row, then
//! `delay_ps,counts,normalized,stat_err` rows. `delay_ps` is the lower
//! edge of each bin. Derived curves leave `counts` empty.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::correlator::{CorrelationHistogram, NormalizedCurve};
use crate::error::{Error, Result};
use crate::tagfile::write_atomically;

pub const HEADER: &str = "delay_ps,counts,normalized,stat_err";

#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub meta: Vec<(String, String)>,
    pub bin_width_ps: u64,
    pub delay_ps: Vec<i64>,
    pub counts: Vec<Option<u64>>,
    pub normalized: Vec<f64>,
    pub stat_err: Vec<f64>,
}

impl CurveTable {
    /// A raw histogram with its normalized values. Without a curve the
    /// normalized columns are zero and `normalization=undefined` is noted.
    pub fn from_histogram(hist: &CorrelationHistogram, curve: Option<&NormalizedCurve<f64>>) -> Self {
        let n = hist.counts.len();
        let mut meta = vec![
            ("bin_width_ps".to_owned(), hist.bin_width_ps.to_string()),
            ("window_ps".to_owned(), hist.window_ps.to_string()),
            ("n_start".to_owned(), hist.n_start.to_string()),
            ("n_stop".to_owned(), hist.n_stop.to_string()),
            ("span_ps".to_owned(), hist.span_ps.to_string()),
        ];
        if curve.is_none() {
            meta.push(("normalization".to_owned(), "undefined".to_owned()));
        }
        Self {
            meta,
            bin_width_ps: hist.bin_width_ps,
            delay_ps: (0..n).map(|i| hist.lower_edge_ps(i)).collect(),
            counts: hist.counts.iter().map(|&c| Some(c)).collect(),
            normalized: curve.map_or_else(|| vec![0.0; n], |c| c.values.clone()),
            stat_err: curve.map_or_else(|| vec![0.0; n], |c| c.stat_err.clone()),
        }
    }

    /// A derived curve on a regular grid of `bin_width_ps` bins.
    pub fn from_curve(curve: &NormalizedCurve<f64>, bin_width_ps: u64) -> Self {
        let half = bin_width_ps as f64 / 2.0;
        Self {
            meta: vec![("bin_width_ps".to_owned(), bin_width_ps.to_string())],
            bin_width_ps,
            delay_ps: curve.delays.iter().map(|&d| (d * 1e12 - half).round() as i64).collect(),
            counts: vec![None; curve.len()],
            normalized: curve.values.clone(),
            stat_err: curve.stat_err.clone(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_owned(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.delay_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delay_ps.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "{HEADER}");
        for i in 0..self.len() {
            let counts = self.counts[i].map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.delay_ps[i], counts, self.normalized[i], self.stat_err[i]
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_csv();
        write_atomically(path, |w| w.write_all(text.as_bytes()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, reason: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut meta = Vec::new();
        let mut header_seen = false;
        let (mut delay_ps, mut counts, mut normalized, mut stat_err) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(m) = line.strip_prefix('#') {
                if let Some((k, v)) = m.trim().split_once('=') {
                    meta.push((k.trim().to_owned(), v.trim().to_owned()));
                }
                continue;
            }
            if !header_seen {
                if line != HEADER {
                    return Err(bad(line_no, format!("expected header `{HEADER}`")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(bad(line_no, format!("expected 4 columns, found {}", cols.len())));
            }
            delay_ps.push(
                cols[0]
                    .parse::<i64>()
                    .map_err(|_| bad(line_no, format!("bad delay `{}`", cols[0])))?,
            );
            counts.push(if cols[1].is_empty() {
                None
            } else {
                Some(
                    cols[1]
                        .parse::<u64>()
                        .map_err(|_| bad(line_no, format!("bad count `{}`", cols[1])))?,
                )
            });
            let float = |s: &str, what: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(line_no, format!("bad {what} `{s}`")))
            };
            normalized.push(float(cols[2], "value")?);
            stat_err.push(float(cols[3], "error")?);
        }
        if !header_seen {
            return Err(bad(text.lines().count(), "missing header row".to_owned()));
        }
        let bin_width_ps = match meta.iter().find(|(k, _)| k == "bin_width_ps") {
            Some((_, v)) => v
                .parse::<u64>()
                .ok()
                .filter(|&b| b > 0)
                .ok_or_else(|| bad(0, format!("bad bin_width_ps `{v}`")))?,
            None if delay_ps.len() >= 2 => u64::try_from(delay_ps[1] - delay_ps[0])
                .ok()
                .filter(|&b| b > 0)
                .ok_or_else(|| bad(0, "delays are not increasing".to_owned()))?,
            None => return Err(bad(0, "bin_width_ps missing and cannot be inferred".to_owned())),
        };
        Ok(Self {
            meta,
            bin_width_ps,
            delay_ps,
            counts,
            normalized,
            stat_err,
        })
    }

    /// Bin centres in seconds with the normalized values.
    pub fn curve(&self) -> NormalizedCurve<f64> {
        let half = self.bin_width_ps as f64 / 2.0;
        NormalizedCurve {
            delays: self.delay_ps.iter().map(|&d| (d as f64 + half) * 1e-12).collect(),
            values: self.normalized.clone(),
            stat_err: self.stat_err.clone(),
        }
    }

    /// Rebuilds the raw histogram; needs the counts column and a grid that
    /// is symmetric about zero.
    pub fn histogram(&self) -> Result<CorrelationHistogram> {
        let counts: Option<Vec<u64>> = self.counts.iter().copied().collect();
        let counts = counts.ok_or_else(|| Error::invalid("counts", "curve has no raw counts"))?;
        let bw = self.bin_width_ps as i64;
        let n = counts.len() as i64;
        if n == 0 || n % 2 != 0 {
            return Err(Error::invalid("counts", "expected an even, non-zero number of bins"));
        }
        let regular = self
            .delay_ps
            .iter()
            .enumerate()
            .all(|(i, &d)| d == (i as i64 - n / 2) * bw);
        if !regular {
            return Err(Error::invalid("delay_ps", "bins must tile [-window, window)"));
        }
        let num = |key: &'static str| -> Result<u64> {
            self.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::invalid(key, "missing from the CSV metadata"))
        };
        Ok(CorrelationHistogram {
            bin_width_ps: self.bin_width_ps,
            window_ps: (n / 2 * bw) as u64,
            counts,
            n_start: num("n_start")?,
            n_stop: num("n_stop")?,
            span_ps: num("span_ps")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::normalize;

    fn hist() -> CorrelationHistogram {
        CorrelationHistogram {
            bin_width_ps: 500,
            window_ps: 1000,
            counts: vec![1, 0, 7, 2],
            n_start: 10,
            n_stop: 12,
            span_ps: 1_000_000,
        }
    }

    #[test]
    fn histogram_round_trip() {
        let h = hist();
        let c = normalize::<f64>(&h).unwrap();
        let t = CurveTable::from_histogram(&h, Some(&c));
        let text = t.to_csv();
        assert!(text.contains("\ndelay_ps,counts,normalized,stat_err\n-1000,1,"));
        let back = CurveTable::parse(&text, Path::new("h.csv")).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.histogram().unwrap(), h);
        let bc = back.curve();
        assert_eq!(bc.values, c.values);
        assert!(bc.delays.iter().zip(&c.delays).all(|(a, b)| (a - b).abs() < 1e-20));
    }

    #[test]
    fn derived_curves_have_no_counts() {
        let c = normalize::<f64>(&hist()).unwrap();
        let t = CurveTable::from_curve(&c, 500);
        let back = CurveTable::parse(&t.to_csv(), Path::new("d.csv")).unwrap();
        assert_eq!(back.delay_ps, vec![-1000, -500, 0, 500]);
        assert!(back.histogram().is_err());
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let text = "# bin_width_ps=10\ndelay_ps,counts,normalized,stat_err\n0,1,1.0,0.1\n10,x,1,1\n";
        match CurveTable::parse(text, Path::new("bad.csv")).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
    }
}
