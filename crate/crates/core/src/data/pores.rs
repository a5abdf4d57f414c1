use std::path::Path;

use crate::error::{Error, Result};

/// Pore center in pixel coordinates; may be sub-pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pore {
    pub row: f64,
    pub col: f64,
}

impl Pore {
    pub fn new(row: f64, col: f64) -> Self {
        Pore { row, col }
    }

    pub fn distance(&self, other: &Pore) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }

    /// Nearest integer pixel.
    pub fn pixel(&self) -> (usize, usize) {
        (self.row.round() as usize, self.col.round() as usize)
    }
}

/// List of pore coordinates, ground truth or detected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoreSet {
    pub points: Vec<Pore>,
}

impl PoreSet {
    pub fn new(points: Vec<Pore>) -> Self {
        PoreSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pore> {
        self.points.iter()
    }

    /// Checks `0 <= row < h`, `0 <= col < w`, finite values, no exact
    /// duplicates.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        for p in &self.points {
            if !(p.row.is_finite() && p.col.is_finite())
                || p.row < 0.0
                || p.col < 0.0
                || p.row >= h as f64
                || p.col >= w as f64
            {
                return Err(Error::input(format!(
                    "pore ({}, {}) outside {h}x{w} image",
                    p.row, p.col
                )));
            }
        }
        let mut sorted: Vec<(u64, u64)> = self
            .points
            .iter()
            .map(|p| (p.row.to_bits(), p.col.to_bits()))
            .collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("duplicate pore coordinates"));
        }
        Ok(())
    }
}

impl FromIterator<Pore> for PoreSet {
    fn from_iter<I: IntoIterator<Item = Pore>>(iter: I) -> Self {
        PoreSet::new(iter.into_iter().collect())
    }
}

/// Reads a `row,col` CSV.
pub fn read_pore_csv(path: impl AsRef<Path>) -> Result<PoreSet> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let trimmed: Vec<&str> = headers.iter().map(str::trim).collect();
    if trimmed != ["row", "col"] {
        return Err(Error::format(
            path,
            format!("expected header `row,col`, found `{}`", trimmed.join(",")),
        ));
    }
    let mut points = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .map(str::trim)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::format(path, format!("bad value on data line {}", line + 1)))
        };
        points.push(Pore::new(parse(0)?, parse(1)?));
    }
    Ok(PoreSet::new(points))
}

/// Writes a `row,col` CSV using shortest round-trip formatting.
pub fn write_pore_csv(pores: &PoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("row,col\n");
    for p in &pores.points {
        out.push_str(&format!("{},{}\n", p.row, p.col));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = PoreSet::new(vec![Pore::new(1.0, 2.0), Pore::new(3.25, 0.1)]);
        write_pore_csv(&set, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "row,col\n1,2\n3.25,0.1\n");
        assert_eq!(read_pore_csv(&path).unwrap(), set);
    }

    #[test]
    fn empty_and_bad_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "row,col\n").unwrap();
        assert!(read_pore_csv(&path).unwrap().is_empty());
        std::fs::write(&path, "x,y\n1,2\n").unwrap();
        assert!(read_pore_csv(&path).is_err());
        std::fs::write(&path, "row,col\n1,abc\n").unwrap();
        assert!(read_pore_csv(&path).is_err());
    }

    #[test]
    fn validation() {
        let ok = PoreSet::new(vec![Pore::new(0.0, 0.0), Pore::new(9.5, 4.0)]);
        assert!(ok.validate(10, 5).is_ok());
        assert!(PoreSet::new(vec![Pore::new(10.0, 0.0)]).validate(10, 5).is_err());
        assert!(PoreSet::new(vec![Pore::new(-0.5, 0.0)]).validate(10, 5).is_err());
        let dup = PoreSet::new(vec![Pore::new(1.0, 1.0), Pore::new(1.0, 1.0)]);
        assert!(dup.validate(10, 5).is_err());
    }
}
