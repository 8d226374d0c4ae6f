//! Turbine power curve turning wind speeds into availability fractions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindCurve {
    pub cut_in_mps: f64,
    pub rated_mps: f64,
    pub cut_out_mps: f64,
}

impl Default for WindCurve {
    fn default() -> Self {
        Self {
            cut_in_mps: 3.0,
            rated_mps: 13.0,
            cut_out_mps: 25.0,
        }
    }
}

impl WindCurve {
    pub fn check(&self) -> Result<()> {
        if !(0.0 < self.cut_in_mps && self.cut_in_mps < self.rated_mps && self.rated_mps < self.cut_out_mps) {
            return Err(Error::Validation(format!(
                "wind curve needs 0 < cut_in < rated < cut_out, got {} / {} / {}",
                self.cut_in_mps, self.rated_mps, self.cut_out_mps
            )));
        }
        Ok(())
    }
}

/// Fraction of rated output produced at `speed_mps`.
///
/// Zero below cut-in and from cut-out on, one between rated and cut-out, and
/// `(v³ − v_ci³) / (v_r³ − v_ci³)` in between.
pub fn power_fraction(speed_mps: f64, curve: &WindCurve) -> Result<f64> {
    curve.check()?;
    if !(speed_mps >= 0.0) || !speed_mps.is_finite() {
        return Err(Error::Validation(format!("wind speed must be >= 0, got {speed_mps}")));
    }
    let WindCurve {
        cut_in_mps: ci,
        rated_mps: vr,
        cut_out_mps: co,
    } = *curve;
    Ok(if speed_mps < ci || speed_mps >= co {
        0.0
    } else if speed_mps >= vr {
        1.0
    } else {
        (speed_mps.powi(3) - ci.powi(3)) / (vr.powi(3) - ci.powi(3))
    })
}

/// Reads the column `column` of a headed CSV file of speeds and maps the first
/// `slots` rows through [`power_fraction`]. Extra rows are ignored.
pub fn ingest_speeds(path: &Path, column: &str, slots: usize, curve: &WindCurve) -> Result<Vec<f64>> {
    let shown = path.display().to_string();
    let csv_err = |source| Error::Csv {
        path: shown.clone(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let col = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Parse {
            path: shown.clone(),
            message: format!("missing column `{column}`"),
        })?;
    let mut out = Vec::with_capacity(slots);
    for (row, rec) in rdr.records().enumerate() {
        if out.len() == slots {
            break;
        }
        let rec = rec.map_err(csv_err)?;
        let cell = rec.get(col).unwrap_or("");
        let v: f64 = cell.parse().map_err(|_| Error::Parse {
            path: shown.clone(),
            message: format!("row {}: `{cell}` is not a number", row + 1),
        })?;
        out.push(power_fraction(v, curve).map_err(|e| e.context(format!("{shown} row {}", row + 1)))?);
    }
    if out.len() < slots {
        return Err(Error::Parse {
            path: shown,
            message: format!("expected at least {slots} rows, found {}", out.len()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn frac(v: f64) -> f64 {
        power_fraction(v, &WindCurve::default()).unwrap()
    }

    #[test]
    fn curve_regions() {
        assert_eq!(frac(2.0), 0.0);
        assert_eq!(frac(13.0), 1.0);
        assert_eq!(frac(25.0), 0.0);
        assert_eq!(frac(24.9), 1.0);
        // 8³ − 3³ = 485, 13³ − 3³ = 2170
        assert!((frac(8.0) - 485.0 / 2170.0).abs() < 1e-15);
        assert!((frac(8.0) - 0.22350).abs() < 1e-5);
    }

    #[test]
    fn continuity_at_rated() {
        assert!((frac(13.0 - 1e-9) - frac(13.0)).abs() < 1e-8);
        assert!(frac(3.0 + 1e-9) < 1e-8);
    }

    #[test]
    fn rejects_negative_speed_and_bad_curve() {
        assert!(power_fraction(-1.0, &WindCurve::default()).is_err());
        let bad = WindCurve {
            cut_in_mps: 5.0,
            rated_mps: 4.0,
            cut_out_mps: 25.0,
        };
        assert!(power_fraction(5.0, &bad).is_err());
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_constant_files() {
        let c = WindCurve::default();
        let zeros = write_csv(&format!("speed\n{}", "0\n".repeat(24)));
        assert_eq!(ingest_speeds(zeros.path(), "speed", 24, &c).unwrap(), vec![0.0; 24]);
        let rated = write_csv(&format!("hour,speed\n{}", "1,13.0\n".repeat(30)));
        assert_eq!(ingest_speeds(rated.path(), "speed", 24, &c).unwrap(), vec![1.0; 24]);
    }

    #[test]
    fn ingest_mixed_file_is_elementwise() {
        let speeds = [0.0, 2.5, 3.0, 5.5, 8.0, 12.9, 13.0, 20.0, 25.0, 30.0];
        let body: String = std::iter::once("v\n".to_string())
            .chain(speeds.iter().map(|s| format!("{s}\n")))
            .collect();
        let f = write_csv(&body);
        let got = ingest_speeds(f.path(), "v", speeds.len(), &WindCurve::default()).unwrap();
        for (g, s) in got.iter().zip(speeds) {
            let expect = if (3.0..13.0).contains(&s) {
                (s * s * s - 27.0) / (2197.0 - 27.0)
            } else if (13.0..25.0).contains(&s) {
                1.0
            } else {
                0.0
            };
            assert!((g - expect).abs() < 1e-14, "speed {s}");
        }
    }

    #[test]
    fn ingest_errors() {
        let c = WindCurve::default();
        let f = write_csv("speed\n1\n2\n");
        assert!(matches!(ingest_speeds(f.path(), "wind", 2, &c), Err(Error::Parse { .. })));
        assert!(matches!(ingest_speeds(f.path(), "speed", 3, &c), Err(Error::Parse { .. })));
        let f = write_csv("speed\n1\nfast\n");
        let err = ingest_speeds(f.path(), "speed", 2, &c).unwrap_err();
        assert!(err.to_string().contains("fast"));
    }
}
