//! Contingency tables over binary variables: ingestion from delimiter-
//! separated text, marginalization, and empirical conditional proportions.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::subsets::{Subset, VarSet};

/// Reserved column name carrying aggregated frequencies.
pub const COUNT_COLUMN: &str = "count";

/// Expected layout of an input file: which columns are variables and which
/// optional column carries counts. Column-name matching is case-sensitive.
#[derive(Debug, Clone)]
pub struct TableSchema {
    pub variables: Vec<String>,
    pub count_column: Option<String>,
}

/// Nonnegative integer counts over the full 0/1 cross-classification of the
/// observed variables. Cell index bit `i` is the value of variable `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    vars: VarSet,
    counts: Vec<u64>,
    n: u64,
}

/// An empirical conditional proportion together with its stratum size.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalConditional {
    /// Target variables required to equal 1.
    pub event: Subset,
    /// Conditioning variables.
    pub given_vars: Subset,
    /// 0/1 assignment to the conditioning variables (subset of `given_vars`).
    pub given_values: Subset,
    pub rate: f64,
    pub base: u64,
}

impl ContingencyTable {
    pub fn new(vars: VarSet, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != vars.n_cells() {
            return Err(Error::Domain(format!(
                "expected {} cells for {} variables, got {}",
                vars.n_cells(),
                vars.arity(),
                counts.len()
            )));
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::Domain("table holds no observations".into()));
        }
        Ok(ContingencyTable { vars, counts, n })
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, cell: Subset) -> u64 {
        self.counts[cell.index()]
    }

    /// Reads records or pre-aggregated rows; the header row names the
    /// columns. All header columns except the reserved `count` column are
    /// taken as variables, in header order.
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        read_table(reader, None)
    }

    /// Like [`Self::from_csv`], but the caller declares the expected columns.
    pub fn from_csv_with_schema<R: BufRead>(reader: R, schema: &TableSchema) -> Result<Self> {
        read_table(reader, Some(schema))
    }

    /// Sums counts over every variable not in `keep`; the total is preserved.
    pub fn marginal(&self, keep: Subset) -> Result<ContingencyTable> {
        if !keep.is_subset_of(self.vars.full()) {
            return Err(Error::Domain(format!(
                "keep mask {:#b} is not a subset of the table's variables",
                keep.bits()
            )));
        }
        let kept: Vec<usize> = keep.members().collect();
        let new_vars = VarSet::new(kept.iter().map(|&i| self.vars.name(i).to_string()))?;
        let mut counts = vec![0u64; new_vars.n_cells()];
        for cell in self.vars.subsets() {
            let mut new_cell = 0u16;
            for (new_bit, &old_bit) in kept.iter().enumerate() {
                if cell.contains(old_bit) {
                    new_cell |= 1 << new_bit;
                }
            }
            counts[new_cell as usize] += self.counts[cell.index()];
        }
        ContingencyTable::new(new_vars, counts)
    }

    /// Keeps the named variables, resolving them against the table's order.
    pub fn marginal_by_names(&self, keep: &[&str]) -> Result<ContingencyTable> {
        self.marginal(self.vars.subset_of(keep)?)
    }

    /// Empirical proportion of `event` variables all equal to 1 within the
    /// stratum where `given_vars` take the values `given_values`.
    pub fn conditional_proportion(
        &self,
        event: Subset,
        given_vars: Subset,
        given_values: Subset,
    ) -> Result<EmpiricalConditional> {
        let full = self.vars.full();
        if !event.is_subset_of(full) || !given_vars.is_subset_of(full) {
            return Err(Error::Domain(
                "event or conditioning variables outside the table".into(),
            ));
        }
        if !given_values.is_subset_of(given_vars) {
            return Err(Error::Domain(
                "conditioning values assign variables outside the conditioning set".into(),
            ));
        }
        let mut base = 0u64;
        let mut hits = 0u64;
        for cell in self.vars.subsets() {
            if cell.intersect(given_vars) == given_values {
                let c = self.counts[cell.index()];
                base += c;
                if event.is_subset_of(cell) {
                    hits += c;
                }
            }
        }
        if base == 0 {
            return Err(Error::ZeroBase(format!(
                "no observations with {} = {}",
                self.vars.label(given_vars),
                self.vars.label(given_values)
            )));
        }
        Ok(EmpiricalConditional {
            event,
            given_vars,
            given_values,
            rate: hits as f64 / base as f64,
            base,
        })
    }
}

fn split_fields(line: &str) -> Vec<String> {
    line.split(',').map(|f| f.trim().to_string()).collect()
}

fn read_table<R: BufRead>(reader: R, schema: Option<&TableSchema>) -> Result<ContingencyTable> {
    let mut lines = reader.lines().enumerate();

    let header = loop {
        match lines.next() {
            Some((lineno, line)) => {
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                break (lineno + 1, split_fields(trimmed));
            }
            None => return Err(Error::Schema("input has no header row".into())),
        }
    };
    let (_, columns) = header;

    let count_name = schema
        .and_then(|s| s.count_column.clone())
        .unwrap_or_else(|| COUNT_COLUMN.to_string());

    let mut var_cols: Vec<(usize, String)> = Vec::new();
    let mut count_col: Option<usize> = None;
    for (idx, col) in columns.iter().enumerate() {
        if *col == count_name {
            if count_col.is_some() {
                return Err(Error::Schema(format!("duplicate `{count_name}` column")));
            }
            count_col = Some(idx);
        } else {
            var_cols.push((idx, col.clone()));
        }
    }

    if let Some(schema) = schema {
        for (_, name) in &var_cols {
            if !schema.variables.iter().any(|v| v == name) {
                return Err(Error::Schema(format!("unknown column `{name}`")));
            }
        }
        for want in &schema.variables {
            if !var_cols.iter().any(|(_, name)| name == want) {
                return Err(Error::Schema(format!("missing column `{want}`")));
            }
        }
        // reorder to the schema's declared variable order
        var_cols = schema
            .variables
            .iter()
            .map(|want| {
                let idx = columns.iter().position(|c| c == want).unwrap();
                (idx, want.clone())
            })
            .collect();
    }

    let vars = VarSet::new(var_cols.iter().map(|(_, n)| n.clone()))?;
    let mut counts = vec![0u64; vars.n_cells()];
    let mut any_row = false;

    for (lineno, line) in lines {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        if fields.len() != columns.len() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "expected {} fields, found {}",
                    columns.len(),
                    fields.len()
                ),
            });
        }
        let mut cell = Subset::EMPTY;
        for (bit, (idx, name)) in var_cols.iter().enumerate() {
            match fields[*idx].as_str() {
                "0" => {}
                "1" => cell = cell.with(bit),
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("column `{name}` must be 0 or 1, got `{other}`"),
                    })
                }
            }
        }
        let weight = match count_col {
            Some(idx) => fields[idx].parse::<u64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!(
                    "`{count_name}` must be a nonnegative integer, got `{}`",
                    fields[idx]
                ),
            })?,
            None => 1,
        };
        counts[cell.index()] += weight;
        any_row = true;
    }

    if !any_row {
        return Err(Error::Domain("input has a header but no data rows".into()));
    }
    ContingencyTable::new(vars, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    /// Smoking-habits table: header Y,Z,X plus counts.
    pub(crate) const SMOKING_CSV: &str = "\
Y,Z,X,count
0,0,0,221
1,0,0,109
0,1,0,152
1,1,0,186
0,0,1,202
1,0,1,158
0,1,1,196
1,1,1,455
";

    fn smoking() -> ContingencyTable {
        ContingencyTable::from_csv(Cursor::new(SMOKING_CSV)).unwrap()
    }

    #[test]
    fn loads_count_format() {
        let t = smoking();
        assert_eq!(t.n(), 1679);
        assert_eq!(t.vars().names(), ["Y", "Z", "X"]);
        // Y=1,Z=1,X=1 -> mask 0b111
        assert_eq!(t.count(Subset(0b111)), 455);
    }

    #[test]
    fn loads_record_format_and_aggregates() {
        let csv = "a,b,c\n1,0,1\n1,0,1\n0,1,0\n1,1,1\n";
        let t = ContingencyTable::from_csv(Cursor::new(csv)).unwrap();
        assert_eq!(t.n(), 4);
        assert_eq!(t.count(Subset(0b101)), 2);
        assert_eq!(t.count(Subset(0b010)), 1);
        assert_eq!(t.count(Subset(0b111)), 1);
        assert_eq!(t.counts().iter().filter(|&&c| c > 0).count(), 3);
    }

    #[test]
    fn row_order_is_irrelevant() {
        let fwd = "a,b\n1,0\n0,1\n1,1\n";
        let rev = "a,b\n1,1\n0,1\n1,0\n";
        let t1 = ContingencyTable::from_csv(Cursor::new(fwd)).unwrap();
        let t2 = ContingencyTable::from_csv(Cursor::new(rev)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn empty_data_is_an_error() {
        let err = ContingencyTable::from_csv(Cursor::new("a,b\n")).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn non_binary_value_reports_row() {
        let csv = "a,b\n0,1\n2,0\n";
        match ContingencyTable::from_csv(Cursor::new(csv)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn schema_rejects_unknown_column() {
        let schema = TableSchema {
            variables: vec!["a".into(), "b".into()],
            count_column: None,
        };
        let csv = "a,b,z\n0,1,0\n";
        let err =
            ContingencyTable::from_csv_with_schema(Cursor::new(csv), &schema).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn marginal_preserves_total_and_matches_hand_sums() {
        let t = smoking();
        let keep = t.vars().subset_of(&["Y", "X"]).unwrap();
        let m = t.marginal(keep).unwrap();
        assert_eq!(m.n(), 1679);
        // Y=1 within X=0: 109 + 186
        assert_eq!(m.count(Subset(0b01)), 295);
        assert_eq!(m.count(Subset(0b11)), 158 + 455);
    }

    #[test]
    fn marginal_identity_and_total() {
        let t = smoking();
        let all = t.marginal(t.vars().full()).unwrap();
        assert_eq!(all, t);
        let none = t.marginal(Subset::EMPTY).unwrap();
        assert_eq!(none.counts(), [1679]);
    }

    #[test]
    fn conditional_proportions_from_table() {
        let t = smoking();
        let y = t.vars().subset_of(&["Y"]).unwrap();
        let z = t.vars().subset_of(&["Z"]).unwrap();
        let zx = t.vars().subset_of(&["Z", "X"]).unwrap();
        let x = t.vars().subset_of(&["X"]).unwrap();

        let p = t.conditional_proportion(y, zx, Subset::EMPTY).unwrap();
        assert_eq!(p.base, 330);
        assert!((p.rate - 109.0 / 330.0).abs() < 1e-15);

        let p = t.conditional_proportion(z, x, Subset::EMPTY).unwrap();
        assert_eq!(p.base, 668);
        assert!((p.rate - 338.0 / 668.0).abs() < 1e-15);

        // event equals the conditioning stratum
        let p = t.conditional_proportion(y, y, y).unwrap();
        assert_eq!(p.rate, 1.0);

        // rate * base is an integer count
        let p = t.conditional_proportion(y, x, x).unwrap();
        let hits = p.rate * p.base as f64;
        assert!((hits - hits.round()).abs() < 1e-9);
        assert_eq!(hits.round() as u64, 158 + 455);
    }

    #[test]
    fn conditional_rejects_empty_stratum() {
        let csv = "a,b\n0,0\n1,0\n";
        let t = ContingencyTable::from_csv(Cursor::new(csv)).unwrap();
        let a = t.vars().subset_of(&["a"]).unwrap();
        let b = t.vars().subset_of(&["b"]).unwrap();
        let err = t.conditional_proportion(a, b, b).unwrap_err();
        assert!(matches!(err, Error::ZeroBase(_)));
    }
}
