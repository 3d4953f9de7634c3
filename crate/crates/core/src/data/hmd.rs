use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{MortalityDataset, Sex};
use crate::error::{Error, Result};

/// Which quantity an HMD table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmdQuantity {
    Deaths,
    Exposures,
}

impl HmdQuantity {
    fn title(self) -> &'static str {
        match self {
            HmdQuantity::Deaths => "Deaths",
            HmdQuantity::Exposures => "Exposures",
        }
    }
}

struct ParsedTable {
    cells: BTreeMap<(i32, u32), f64>,
    open_ages: BTreeSet<u32>,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_table(text: &str, sex: Sex, source_name: &str) -> Result<ParsedTable> {
    let mut lines = text.lines().enumerate();
    let mut columns: Option<(usize, usize, usize)> = None;
    for (_, line) in lines.by_ref() {
        let fields = split_fields(line);
        let find = |name: &str| fields.iter().position(|f| f.eq_ignore_ascii_case(name));
        if let (Some(y), Some(a), Some(v)) = (find("Year"), find("Age"), find(sex.column())) {
            columns = Some((y, a, v));
            break;
        }
    }
    let (year_col, age_col, value_col) = columns.ok_or_else(|| Error::Parse {
        row: 0,
        message: format!(
            "{source_name}: no header row with Year, Age and {} columns",
            sex.column()
        ),
    })?;

    let mut cells = BTreeMap::new();
    let mut open_ages = BTreeSet::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        let field = |col: usize| {
            fields.get(col).copied().ok_or_else(|| Error::Parse {
                row,
                message: format!("{source_name}: expected at least {} fields", col + 1),
            })
        };
        let year_tok = field(year_col)?;
        let year: i32 = year_tok.parse().map_err(|_| Error::Parse {
            row,
            message: format!("{source_name}: bad year '{year_tok}'"),
        })?;
        let age_tok = field(age_col)?;
        let (digits, open) = match age_tok.strip_suffix('+') {
            Some(d) => (d, true),
            None => (age_tok, false),
        };
        let age: u32 = digits.parse().map_err(|_| Error::Parse {
            row,
            message: format!("{source_name}: bad age '{age_tok}'"),
        })?;
        if open {
            open_ages.insert(age);
        }
        let value_tok = field(value_col)?;
        let value: f64 = value_tok.parse().map_err(|_| Error::Parse {
            row,
            message: format!("{source_name}: non-numeric value '{value_tok}'"),
        })?;
        if cells.insert((year, age), value).is_some() {
            return Err(Error::Parse {
                row,
                message: format!("{source_name}: duplicate entry for year {year}, age {age}"),
            });
        }
    }
    if cells.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: format!("{source_name}: no data rows"),
        });
    }
    Ok(ParsedTable { cells, open_ages })
}

/// Parses a pair of HMD-format period tables (deaths and exposures) into a dataset
/// for one sex. The grid is the intersection of years and ages present in both
/// sources; every cell of that grid must exist in both.
pub fn load_hmd_table(
    deaths_source: &str,
    exposures_source: &str,
    population_label: &str,
    sex: Sex,
) -> Result<MortalityDataset> {
    let deaths = parse_table(deaths_source, sex, "deaths")?;
    let exposures = parse_table(exposures_source, sex, "exposures")?;

    let years_of = |t: &ParsedTable| t.cells.keys().map(|k| k.0).collect::<BTreeSet<_>>();
    let ages_of = |t: &ParsedTable| t.cells.keys().map(|k| k.1).collect::<BTreeSet<_>>();
    let years: Vec<i32> = years_of(&deaths)
        .intersection(&years_of(&exposures))
        .copied()
        .collect();
    let ages: Vec<u32> = ages_of(&deaths)
        .intersection(&ages_of(&exposures))
        .copied()
        .collect();
    if years.is_empty() || ages.is_empty() {
        return Err(Error::invalid("deaths and exposures share no years or ages"));
    }
    if let Some(w) = years.windows(2).find(|w| w[1] != w[0] + 1) {
        let (year, age) = (w[0] + 1, ages[0]);
        return Err(Error::MissingCell {
            source_name: "deaths/exposures".into(),
            year,
            age,
        });
    }

    let (na, ny) = (ages.len(), years.len());
    let mut d = DMatrix::zeros(na, ny);
    let mut e = DMatrix::zeros(na, ny);
    for (j, &year) in years.iter().enumerate() {
        for (i, &age) in ages.iter().enumerate() {
            for (table, out, name) in [(&deaths, &mut d, "deaths"), (&exposures, &mut e, "exposures")] {
                match table.cells.get(&(year, age)) {
                    Some(v) => out[(i, j)] = *v,
                    None => {
                        return Err(Error::MissingCell {
                            source_name: name.into(),
                            year,
                            age,
                        })
                    }
                }
            }
        }
    }
    let top = ages[na - 1];
    let mut ds = MortalityDataset::new(population_label, sex, ages, years, d, e)?;
    ds.open_age = deaths.open_ages.contains(&top) || exposures.open_ages.contains(&top);
    Ok(ds)
}

/// Renders one quantity of a dataset as an HMD-style table. The dataset's own sex
/// column carries the values; the other columns hold `.`.
pub fn write_hmd_table(ds: &MortalityDataset, quantity: HmdQuantity) -> String {
    let values = match quantity {
        HmdQuantity::Deaths => &ds.deaths,
        HmdQuantity::Exposures => &ds.exposures,
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}, {} (period 1x1)", ds.population_label, quantity.title());
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>6}{:>8}{:>16}{:>16}{:>16}",
        "Year", "Age", "Female", "Male", "Total"
    );
    let last = ds.n_ages() - 1;
    for (j, year) in ds.years.iter().enumerate() {
        for (i, age) in ds.ages.iter().enumerate() {
            let age_tok = if i == last && ds.open_age {
                format!("{age}+")
            } else {
                age.to_string()
            };
            let v = values[(i, j)].to_string();
            let cols: [&str; 3] = match ds.sex {
                Sex::Female => [&v, ".", "."],
                Sex::Male => [".", &v, "."],
                Sex::Total => [".", ".", &v],
            };
            let _ = writeln!(
                out,
                "{year:>6}{age_tok:>8} {:>15} {:>15} {:>15}",
                cols[0], cols[1], cols[2]
            );
        }
    }
    out
}

/// Writes female and male data for one population as a single HMD table with
/// a Total column equal to their sum.
pub fn write_hmd_sexes(female: &MortalityDataset, male: &MortalityDataset, quantity: HmdQuantity) -> Result<String> {
    if female.ages != male.ages || female.years != male.years {
        return Err(Error::dims("female and male tables must share ages and years"));
    }
    let pick = |ds: &'_ MortalityDataset| match quantity {
        HmdQuantity::Deaths => ds.deaths.clone(),
        HmdQuantity::Exposures => ds.exposures.clone(),
    };
    let (f, m) = (pick(female), pick(male));
    let mut out = String::new();
    let _ = writeln!(out, "{}, {} (period 1x1)", female.population_label, quantity.title());
    let _ = writeln!(out);
    let _ = writeln!(out, "{:>6}{:>8}{:>16}{:>16}{:>16}", "Year", "Age", "Female", "Male", "Total");
    let last = female.n_ages() - 1;
    for (j, year) in female.years.iter().enumerate() {
        for (i, age) in female.ages.iter().enumerate() {
            let age_tok = if i == last && (female.open_age || male.open_age) {
                format!("{age}+")
            } else {
                age.to_string()
            };
            let (a, b) = (f[(i, j)], m[(i, j)]);
            let _ = writeln!(out, "{year:>6}{age_tok:>8} {a:>15} {b:>15} {:>15}", a + b);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEATHS: &str = "Toyland, Deaths (period 1x1)\n\n  Year  Age  Female  Male  Total\n  2000  0  1  5  6\n  2000  1+  3  5  8\n  2001  0  2  5  7\n  2001  1+  4  5  9\n";
    const EXPOSURES: &str = "Year,Age,Female,Male,Total\n2000,0,10,10,20\n2000,1+,10,10,20\n2001,0,10,10,20\n2001,1+,10,10,20\n";

    #[test]
    fn parses_mixed_delimiters_and_open_age() {
        let ds = load_hmd_table(DEATHS, EXPOSURES, "Toyland", Sex::Female).unwrap();
        assert_eq!(ds.ages, vec![0, 1]);
        assert_eq!(ds.years, vec![2000, 2001]);
        assert!(ds.open_age);
        assert!((ds.rates[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((ds.rates[(0, 1)] - 0.2).abs() < 1e-15);
        assert!((ds.rates[(1, 0)] - 0.3).abs() < 1e-15);
        assert!((ds.rates[(1, 1)] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn open_group_110_plus() {
        let d = "Year Age Female Male Total\n1990 109 1 1 2\n1990 110+ 2 2 4\n";
        let e = "Year Age Female Male Total\n1990 109 5 5 10\n1990 110+ 6 6 12\n";
        let ds = load_hmd_table(d, e, "x", Sex::Male).unwrap();
        assert_eq!(*ds.ages.last().unwrap(), 110);
        assert!(ds.open_age);
    }

    #[test]
    fn non_numeric_reports_row() {
        let d = "Year Age Female Male Total\n1990 60 1 1 2\n1990 61 abc 1 2\n";
        let e = "Year Age Female Male Total\n1990 60 5 5 10\n1990 61 5 5 10\n";
        match load_hmd_table(d, e, "x", Sex::Female) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_named() {
        let d = "Year Age Female Male Total\n1990 60 1 1 2\n1990 61 1 1 2\n1991 60 1 1 2\n1991 61 1 1 2\n";
        let e = "Year Age Female Male Total\n1990 60 5 5 10\n1990 61 5 5 10\n1991 61 5 5 10\n";
        match load_hmd_table(d, e, "x", Sex::Female) {
            Err(Error::MissingCell {
                source_name,
                year,
                age,
            }) => {
                assert_eq!(source_name, "exposures");
                assert_eq!((year, age), (1991, 60));
            }
            other => panic!("expected missing cell, got {other:?}"),
        }
    }

    #[test]
    fn intersection_of_coverage() {
        let d = "Year Age Female Male Total\n1990 60 1 1 2\n1990 61 1 1 2\n1991 60 1 1 2\n1991 61 1 1 2\n";
        let e = "Year Age Female Male Total\n1991 60 5 5 10\n1991 61 5 5 10\n";
        let ds = load_hmd_table(d, e, "x", Sex::Total).unwrap();
        assert_eq!(ds.years, vec![1991]);
    }

    #[test]
    fn write_then_load_round_trips() {
        let ds = load_hmd_table(DEATHS, EXPOSURES, "Toyland", Sex::Female).unwrap();
        let d = write_hmd_table(&ds, HmdQuantity::Deaths);
        let e = write_hmd_table(&ds, HmdQuantity::Exposures);
        let back = load_hmd_table(&d, &e, "Toyland", Sex::Female).unwrap();
        assert_eq!(back.deaths, ds.deaths);
        assert_eq!(back.exposures, ds.exposures);
        assert!(back.open_age);
    }
}
