use std::io::Read;
use std::path::Path;

use super::{BeliefError, InflationBelief};
use crate::scalar::{lit, Scalar};

impl<T: Scalar> InflationBelief<T> {
    /// Reads a discrete grid from a two-column `point,prob` CSV. A header row
    /// is optional.
    pub fn grid_from_csv_reader<R: Read>(reader: R) -> Result<Self, BeliefError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let (mut points, mut probs) = (Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| BeliefError::Grid(e.to_string()))?;
            if rec.len() != 2 {
                return Err(BeliefError::Grid(format!("line {}: expected 2 columns, got {}", line + 1, rec.len())));
            }
            let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
            match parsed {
                (Ok(x), Ok(q)) => {
                    points.push(lit(x));
                    probs.push(lit(q));
                }
                _ if line == 0 => continue,
                _ => return Err(BeliefError::Grid(format!("line {}: non-numeric field", line + 1))),
            }
        }
        Self::discrete_grid(points, probs)
    }

    pub fn grid_from_csv(path: impl AsRef<Path>) -> Result<Self, BeliefError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| BeliefError::Grid(format!("{}: {e}", path.as_ref().display())))?;
        Self::grid_from_csv_reader(file)
    }
}
