//! CSV ingestion: comma separated, header row required, `.` decimal point.

use std::path::Path;

use semfx::sim::padded_support;
use semfx::{Dataset, FitConfig, SupportDescriptor};

use crate::args::DataArgs;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> CliResult<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| {
                CliError::Parse(format!("no column named `{name}`; available: {}", self.headers.join(", ")))
            })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Parse(format!("cannot open {}: {e}", path.display())))?;
    parse_table(file)
}

pub fn parse_table<R: std::io::Read>(reader: R) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::Parse("empty CSV: no header row".into()));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(e.to_string()))?;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Parse(format!("row {}, column `{}`: `{cell}` is not a number", r + 1, headers[j]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse(format!("row {}, column `{}`: non-finite value", r + 1, headers[j])));
            }
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(CliError::Parse("CSV has a header but no data rows".into()));
    }
    Ok(Table { headers, columns })
}

/// Build the dataset and the fit configuration described by the data flags.
pub fn load(args: &DataArgs) -> CliResult<(Dataset, FitConfig)> {
    let table = read_table(&args.input)?;
    dataset_from(&table, args)
}

pub fn dataset_from(table: &Table, args: &DataArgs) -> CliResult<(Dataset, FitConfig)> {
    let y = table.column(&args.response)?.to_vec();
    let names: Vec<String> = match &args.covariates {
        Some(c) => c.clone(),
        None => table.headers.iter().filter(|h| **h != args.response).cloned().collect(),
    };
    if names.is_empty() {
        return Err(CliError::Usage("no covariate columns".into()));
    }
    if names.contains(&args.response) {
        return Err(CliError::Usage("the response cannot also be a covariate".into()));
    }
    let cols = names.iter().map(|n| table.column(n)).collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = (0..table.rows()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();

    let support = if args.discrete {
        let mut levels = y.clone();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        SupportDescriptor::Discrete { levels }
    } else if let Some((lo, hi)) = args.support {
        SupportDescriptor::continuous(lo, hi)
    } else {
        padded_support(&y)
    };
    let data = Dataset::from_rows(&rows, y, support)?.with_names(names)?;
    let cfg = FitConfig { interior_knots: args.knots, quad_nodes: args.quad_nodes, ..FitConfig::default() };
    Ok((data, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(discrete: bool) -> DataArgs {
        DataArgs {
            input: "unused.csv".into(),
            response: "y".into(),
            covariates: None,
            support: None,
            discrete,
            knots: None,
            quad_nodes: None,
        }
    }

    #[test]
    fn parses_numeric_table() {
        let t = parse_table("y, a,b\n1,2,3\n4, 5,6\n".as_bytes()).unwrap();
        assert_eq!(t.headers, ["y", "a", "b"]);
        assert_eq!(t.column("b").unwrap(), [3.0, 6.0]);
    }

    #[test]
    fn reports_bad_cell_position() {
        let err = parse_table("y,a\n1,2\n3,x\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("`a`"), "{msg}");
    }

    #[test]
    fn empty_and_headerless_inputs_fail() {
        assert!(matches!(parse_table("".as_bytes()), Err(CliError::Parse(_))));
        assert!(matches!(parse_table("y,a\n".as_bytes()), Err(CliError::Parse(_))));
    }

    #[test]
    fn missing_column_is_a_parse_error() {
        let t = parse_table("y,a\n1,2\n".as_bytes()).unwrap();
        assert!(matches!(t.column("z"), Err(CliError::Parse(_))));
    }

    #[test]
    fn discrete_levels_are_observed_values() {
        let t = parse_table("y,a\n2,0\n0,1\n2,2\n5,3\n".as_bytes()).unwrap();
        let (data, _) = dataset_from(&t, &args(true)).unwrap();
        assert_eq!(data.support(), &SupportDescriptor::Discrete { levels: vec![0.0, 2.0, 5.0] });
        let (data, _) = dataset_from(&t, &args(false)).unwrap();
        let SupportDescriptor::Continuous { lo, hi, .. } = data.support() else { panic!() };
        assert!((lo + 0.25).abs() < 1e-12 && (hi - 5.25).abs() < 1e-12);
    }
}
