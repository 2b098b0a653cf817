use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{DataError, LoanRow, OverdraftRow, YearMonth};

pub const LOAN_COLUMNS: [&str; 16] = [
    "loan_id",
    "bank_id",
    "borrower_id",
    "sector",
    "department",
    "size_class",
    "date",
    "rate_pct",
    "volume_eur",
    "maturity_months",
    "pd",
    "ecb_dfr",
    "gdp_growth",
    "niu",
    "asi",
    "disagreement",
];

/// Required overdraft columns; `volume_eur` and `maturity_months` may also appear.
pub const OVERDRAFT_COLUMNS: [&str; 15] = [
    "loan_id",
    "bank_id",
    "borrower_id",
    "sector",
    "department",
    "size_class",
    "date",
    "rate_pct",
    "benchmark_pct",
    "pd",
    "ecb_dfr",
    "gdp_growth",
    "niu",
    "asi",
    "disagreement",
];

/// Loaded rows plus any columns outside the schema, kept verbatim.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoanFile {
    pub rows: Vec<LoanRow>,
    pub extra_columns: Vec<String>,
    /// One entry per row, aligned with `extra_columns`.
    pub extra_values: Vec<Vec<String>>,
}

struct Record<'a> {
    rec: &'a csv::StringRecord,
    index: &'a HashMap<String, usize>,
    line: u64,
}

impl Record<'_> {
    fn raw(&self, column: &str) -> &str {
        self.index.get(column).and_then(|&i| self.rec.get(i)).unwrap_or("").trim()
    }

    fn parse<T: FromStr>(&self, column: &str) -> Result<T, DataError> {
        let raw = self.raw(column);
        raw.parse().map_err(|_| DataError::Parse { line: self.line, column: column.into(), value: raw.into() })
    }

    fn float(&self, column: &str) -> Result<f64, DataError> {
        let v: f64 = self.parse(column)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DataError::NonFinite { line: self.line, column: column.into() })
        }
    }

    fn optional<T: FromStr>(
        &self,
        column: &str,
        parse: impl Fn(&Self, &str) -> Result<T, DataError>,
    ) -> Result<Option<T>, DataError> {
        if self.index.contains_key(column) && !self.raw(column).is_empty() {
            parse(self, column).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|e| DataError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn header_index<R: Read>(
    rdr: &mut csv::Reader<R>,
    required: &[&str],
) -> Result<(Vec<String>, HashMap<String, usize>), DataError> {
    let headers = rdr.headers().map_err(|e| DataError::Csv { line: 1, message: e.to_string() })?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(DataError::Empty);
    }
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, h)| (h.clone(), i)).collect();
    if let Some(missing) = required.iter().find(|c| !index.contains_key(**c)) {
        return Err(DataError::MissingColumn(missing.to_string()));
    }
    Ok((names, index))
}

fn records<R: Read, T>(
    reader: R,
    required: &[&str],
    mut f: impl FnMut(&Record<'_>) -> Result<T, DataError>,
) -> Result<(Vec<T>, Vec<String>, HashMap<String, usize>, Vec<csv::StringRecord>), DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let (names, index) = header_index(&mut rdr, required)?;
    let mut out = Vec::new();
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| DataError::Csv { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(f(&Record { rec: &rec, index: &index, line })?);
        raw.push(rec);
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok((out, names, index, raw))
}

fn loan_row(r: &Record<'_>) -> Result<LoanRow, DataError> {
    Ok(LoanRow {
        loan_id: r.parse("loan_id")?,
        bank_id: r.parse("bank_id")?,
        borrower_id: r.parse("borrower_id")?,
        sector: r.parse("sector")?,
        department: r.parse("department")?,
        size_class: r.parse("size_class")?,
        date: r.parse::<YearMonth>("date")?,
        rate_pct: r.float("rate_pct")?,
        volume_eur: r.float("volume_eur")?,
        maturity_months: r.parse("maturity_months")?,
        pd: r.float("pd")?,
        ecb_dfr: r.float("ecb_dfr")?,
        gdp_growth: r.float("gdp_growth")?,
        niu: r.float("niu")?,
        asi: r.float("asi")?,
        disagreement: r.float("disagreement")?,
    })
}

pub fn read_loans<R: Read>(reader: R) -> Result<LoanFile, DataError> {
    let (rows, names, _, raw) = records(reader, &LOAN_COLUMNS, loan_row)?;
    let extra: Vec<(usize, String)> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| !LOAN_COLUMNS.contains(&n.as_str()))
        .map(|(i, n)| (i, n.clone()))
        .collect();
    let extra_values = if extra.is_empty() {
        vec![]
    } else {
        raw.iter().map(|rec| extra.iter().map(|(i, _)| rec.get(*i).unwrap_or("").to_string()).collect()).collect()
    };
    Ok(LoanFile { rows, extra_columns: extra.into_iter().map(|(_, n)| n).collect(), extra_values })
}

pub fn load_loans(path: impl AsRef<Path>) -> Result<LoanFile, DataError> {
    read_loans(open(path.as_ref())?)
}

fn overdraft_row(r: &Record<'_>) -> Result<OverdraftRow, DataError> {
    Ok(OverdraftRow {
        loan_id: r.parse("loan_id")?,
        bank_id: r.parse("bank_id")?,
        borrower_id: r.parse("borrower_id")?,
        sector: r.parse("sector")?,
        department: r.parse("department")?,
        size_class: r.parse("size_class")?,
        date: r.parse::<YearMonth>("date")?,
        rate_pct: r.float("rate_pct")?,
        benchmark_pct: r.optional("benchmark_pct", Record::float)?,
        volume_eur: r.optional("volume_eur", Record::float)?,
        maturity_months: r.optional("maturity_months", |r, c| r.parse::<u32>(c))?,
        pd: r.float("pd")?,
        ecb_dfr: r.float("ecb_dfr")?,
        gdp_growth: r.float("gdp_growth")?,
        niu: r.float("niu")?,
        asi: r.float("asi")?,
        disagreement: r.float("disagreement")?,
    })
}

pub fn read_overdrafts<R: Read>(reader: R) -> Result<Vec<OverdraftRow>, DataError> {
    Ok(records(reader, &OVERDRAFT_COLUMNS, overdraft_row)?.0)
}

pub fn load_overdrafts(path: impl AsRef<Path>) -> Result<Vec<OverdraftRow>, DataError> {
    read_overdrafts(open(path.as_ref())?)
}

fn csv_err(e: impl std::fmt::Display) -> DataError {
    DataError::Csv { line: 0, message: e.to_string() }
}

fn loan_fields(r: &LoanRow) -> [String; 16] {
    [
        r.loan_id.to_string(),
        r.bank_id.to_string(),
        r.borrower_id.to_string(),
        r.sector.to_string(),
        r.department.to_string(),
        r.size_class.to_string(),
        r.date.to_string(),
        r.rate_pct.to_string(),
        r.volume_eur.to_string(),
        r.maturity_months.to_string(),
        r.pd.to_string(),
        r.ecb_dfr.to_string(),
        r.gdp_growth.to_string(),
        r.niu.to_string(),
        r.asi.to_string(),
        r.disagreement.to_string(),
    ]
}

/// Writes rows (and any extra columns) in schema order. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_loans<W: Write>(writer: W, file: &LoanFile) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = LOAN_COLUMNS.iter().copied().chain(file.extra_columns.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (i, r) in file.rows.iter().enumerate() {
        let mut fields = loan_fields(r).to_vec();
        if let Some(extra) = file.extra_values.get(i) {
            fields.extend(extra.iter().cloned());
        }
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn write_overdrafts<W: Write>(writer: W, rows: &[OverdraftRow]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = OVERDRAFT_COLUMNS.to_vec();
    header.extend(["volume_eur", "maturity_months"]);
    w.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.loan_id.to_string(),
            r.bank_id.to_string(),
            r.borrower_id.to_string(),
            r.sector.to_string(),
            r.department.to_string(),
            r.size_class.to_string(),
            r.date.to_string(),
            r.rate_pct.to_string(),
            opt(r.benchmark_pct.map(|v| v.to_string())),
            r.pd.to_string(),
            r.ecb_dfr.to_string(),
            r.gdp_growth.to_string(),
            r.niu.to_string(),
            r.asi.to_string(),
            r.disagreement.to_string(),
            opt(r.volume_eur.map(|v| v.to_string())),
            opt(r.maturity_months.map(|v| v.to_string())),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_loans, simulate_overdrafts, GeneratorConfig, OverdraftConfig};

    fn to_string(file: &LoanFile) -> String {
        let mut buf = Vec::new();
        write_loans(&mut buf, file).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn loan_round_trip_is_lossless() {
        let (rows, _) = simulate_loans(&GeneratorConfig { n: 2_000, ..Default::default() }).unwrap();
        let file = LoanFile { rows, ..Default::default() };
        let back = read_loans(to_string(&file).as_bytes()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn extra_columns_are_kept() {
        let (rows, _) = simulate_loans(&GeneratorConfig { n: 5, ..Default::default() }).unwrap();
        let file = LoanFile {
            rows,
            extra_columns: vec!["note".into()],
            extra_values: (0..5).map(|i| vec![format!("x{i}")]).collect(),
        };
        let back = read_loans(to_string(&file).as_bytes()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn missing_column_is_named() {
        let text = "loan_id,bank_id\n1,2\n";
        assert_eq!(read_loans(text.as_bytes()).unwrap_err(), DataError::MissingColumn("borrower_id".into()));
    }

    #[test]
    fn bad_value_reports_line() {
        let (rows, _) = simulate_loans(&GeneratorConfig { n: 3, ..Default::default() }).unwrap();
        let text = to_string(&LoanFile { rows, ..Default::default() });
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let fields: Vec<&str> = lines[2].split(',').collect();
        let mut broken: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
        broken[7] = "abc".into();
        lines[2] = broken.join(",");
        let err = read_loans(lines.join("\n").as_bytes()).unwrap_err();
        assert_eq!(err, DataError::Parse { line: 3, column: "rate_pct".into(), value: "abc".into() });
        broken[7] = "NaN".into();
        lines[2] = broken.join(",");
        let err = read_loans(lines.join("\n").as_bytes()).unwrap_err();
        assert_eq!(err, DataError::NonFinite { line: 3, column: "rate_pct".into() });
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert_eq!(read_loans("".as_bytes()).unwrap_err(), DataError::Empty);
        let header = LOAN_COLUMNS.join(",");
        assert_eq!(read_loans(header.as_bytes()).unwrap_err(), DataError::Empty);
    }

    #[test]
    fn overdraft_round_trip_and_optional_columns() {
        let (rows, _) = simulate_overdrafts(&OverdraftConfig { n_banks: 3, months: 4, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_overdrafts(&mut buf, &rows).unwrap();
        assert_eq!(read_overdrafts(buf.as_slice()).unwrap(), rows);
        // Without the optional columns at all.
        let header = OVERDRAFT_COLUMNS.join(",");
        let line = "1,1,1,0,0,0,2020-01,3.5,,0.01,0.0,1.0,1.0,0.0,0.5";
        let parsed = read_overdrafts(format!("{header}\n{line}\n").as_bytes()).unwrap();
        assert_eq!(parsed[0].benchmark_pct, None);
        assert_eq!(parsed[0].volume_eur, None);
    }
}
