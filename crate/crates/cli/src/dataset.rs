//! Panel CSV ingestion and emission.
//!
//! Layout: a header naming `unit_id`, `year`, `population` and optionally
//! `group`, in any order; UTF-8, comma-separated by default. Populations are
//! positive integers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use popmaxent::dynamics::PanelRecord;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatOptions {
    pub delimiter: u8,
}

impl Default for FormatOptions {
    fn default() -> Self {
        Self { delimiter: b',' }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub path: String,
    /// Hex SHA-256 of the file bytes.
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Records in file order.
    pub panel: Vec<PanelRecord>,
    pub provenance: Provenance,
    /// Unit to group map, present when the file has a `group` column.
    pub groups: Option<BTreeMap<String, String>>,
}

const REQUIRED: [&str; 3] = ["unit_id", "year", "population"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads and validates a panel file.
pub fn ingest(path: &Path, opts: &FormatOptions) -> CliResult<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let sha256 = sha256_hex(&bytes);
    let (panel, groups) = parse_panel(&bytes, opts)?;
    let provenance = Provenance { path: path.display().to_string(), sha256, records: panel.len() };
    Ok(Dataset { panel, provenance, groups })
}

/// Records with the optional unit to group map.
pub type Panel = (Vec<PanelRecord>, Option<BTreeMap<String, String>>);

/// Parses panel CSV bytes. Problems are collected over the whole file; any
/// malformed field makes the result a parse error, otherwise rule violations
/// make it a validation error.
pub fn parse_panel(bytes: &[u8], opts: &FormatOptions) -> CliResult<Panel> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut rdr = csv::ReaderBuilder::new().delimiter(opts.delimiter).trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| CliError::Parse(vec![format!("header: {e}")]))?.clone();
    let mut col: HashMap<&str, usize> = HashMap::new();
    let mut header_problems = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        match h {
            "unit_id" | "year" | "population" | "group" => {
                if col.insert(h, j).is_some() {
                    header_problems.push(format!("line 1, column {}: duplicate column `{h}`", j + 1));
                }
            }
            other => header_problems.push(format!("line 1, column {}: unknown column `{other}`", j + 1)),
        }
    }
    for r in REQUIRED {
        if !col.contains_key(r) {
            header_problems.push(format!("line 1: missing column `{r}`"));
        }
    }
    if !header_problems.is_empty() {
        return Err(CliError::Parse(header_problems));
    }
    let (ci, cy, cp, cg) = (col["unit_id"], col["year"], col["population"], col.get("group").copied());

    let mut parse = Vec::new();
    let mut invalid = Vec::new();
    let mut panel = Vec::new();
    let mut seen: HashMap<(String, i32), u64> = HashMap::new();
    let mut groups: BTreeMap<String, (String, u64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(ci).unwrap_or("");
        if id.is_empty() {
            invalid.push(format!("line {line}: empty unit_id"));
        }
        let year = match rec.get(cy).unwrap_or("").parse::<i32>() {
            Ok(y) => Some(y),
            Err(_) => {
                parse.push(format!("line {line}, column {}: year `{}` is not an integer", cy + 1, &rec[cy]));
                None
            }
        };
        let raw = rec.get(cp).unwrap_or("");
        let population = match raw.parse::<u64>() {
            Ok(0) => {
                invalid.push(format!("line {line}: population must be positive, got 0"));
                None
            }
            Ok(p) => Some(p),
            Err(_) => match (raw.parse::<i64>(), raw.parse::<f64>()) {
                (Ok(v), _) => {
                    invalid.push(format!("line {line}: population must be positive, got {v}"));
                    None
                }
                (_, Ok(_)) => {
                    invalid.push(format!("line {line}: population `{raw}` is not a whole number"));
                    None
                }
                _ => {
                    parse.push(format!("line {line}, column {}: population `{raw}` is not a number", cp + 1));
                    None
                }
            },
        };
        if let Some(cg) = cg {
            let g = rec.get(cg).unwrap_or("");
            if g.is_empty() {
                invalid.push(format!("line {line}: empty group"));
            } else if !id.is_empty() {
                match groups.get(id) {
                    Some((prev, pl)) if prev != g => invalid.push(format!(
                        "line {line}: unit `{id}` is in group `{g}` but line {pl} puts it in `{prev}`"
                    )),
                    Some(_) => {}
                    None => {
                        groups.insert(id.to_string(), (g.to_string(), line));
                    }
                }
            }
        }
        if let Some(y) = year {
            if !id.is_empty() {
                if let Some(first) = seen.insert((id.to_string(), y), line) {
                    invalid.push(format!("line {line}: duplicate row for unit `{id}`, year {y} (first on line {first})"));
                    seen.insert((id.to_string(), y), first);
                }
            }
        }
        if let (Some(year), Some(population), false) = (year, population, id.is_empty()) {
            panel.push(PanelRecord { unit_id: id.to_string(), year, population });
        }
    }
    if !parse.is_empty() {
        return Err(CliError::Parse(parse));
    }
    if panel.is_empty() && invalid.is_empty() {
        invalid.push("no data rows".into());
    }
    if !invalid.is_empty() {
        return Err(CliError::Validation(invalid));
    }
    let groups = cg.map(|_| groups.into_iter().map(|(u, (g, _))| (u, g)).collect());
    Ok((panel, groups))
}

/// Writes a panel in the ingest layout, adding the `group` column when a map is given.
pub fn write_panel<W: Write>(w: W, panel: &[PanelRecord], groups: Option<&BTreeMap<String, String>>) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CliError::Other(format!("writing panel: {e}"));
    match groups {
        Some(_) => wtr.write_record(["unit_id", "year", "population", "group"]).map_err(err)?,
        None => wtr.write_record(["unit_id", "year", "population"]).map_err(err)?,
    }
    for r in panel {
        let (y, p) = (r.year.to_string(), r.population.to_string());
        match groups {
            Some(g) => {
                let grp = g.get(&r.unit_id).ok_or_else(|| CliError::Other(format!("unit `{}` has no group", r.unit_id)))?;
                wtr.write_record([r.unit_id.as_str(), &y, &p, grp]).map_err(err)?
            }
            None => wtr.write_record([r.unit_id.as_str(), &y, &p]).map_err(err)?,
        }
    }
    wtr.flush().map_err(|e| CliError::Other(format!("writing panel: {e}")))
}

impl Dataset {
    /// Group names in sorted order; empty when the file has no group column.
    pub fn group_names(&self) -> Vec<String> {
        match &self.groups {
            Some(g) => g.values().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            None => Vec::new(),
        }
    }

    fn in_group(&self, rec: &PanelRecord, group: Option<&str>) -> CliResult<bool> {
        match (group, &self.groups) {
            (None, _) => Ok(true),
            (Some(g), Some(map)) => Ok(map.get(&rec.unit_id).map(String::as_str) == Some(g)),
            (Some(g), None) => Err(CliError::Validation(vec![format!("group `{g}` requested but the dataset has no group column")])),
        }
    }

    /// Records of one group (all records when `group` is `None`).
    pub fn group_panel(&self, group: Option<&str>) -> CliResult<Vec<PanelRecord>> {
        let mut out = Vec::new();
        for r in &self.panel {
            if self.in_group(r, group)? {
                out.push(r.clone());
            }
        }
        if out.is_empty() {
            return Err(CliError::Validation(vec![format!("group `{}` has no records", group.unwrap_or("*"))]));
        }
        Ok(out)
    }

    /// Populations of one group in one year.
    pub fn slice(&self, group: Option<&str>, year: i32) -> CliResult<Vec<f64>> {
        let mut out = Vec::new();
        for r in &self.panel {
            if r.year == year && self.in_group(r, group)? {
                out.push(r.population as f64);
            }
        }
        if out.is_empty() {
            return Err(CliError::Validation(vec![format!(
                "no records for group `{}` in year {year}",
                group.unwrap_or("*")
            )]));
        }
        Ok(out)
    }

    pub fn years(&self) -> Vec<i32> {
        self.panel.iter().map(|r| r.year).collect::<BTreeSet<_>>().into_iter().collect()
    }
}
