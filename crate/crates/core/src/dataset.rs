//! Yearly firm snapshots: CSV codec, rank ordering and sector aggregates.
//!
//! Assets, profits, sales and market value are in billions of USD, nominal.
//! A snapshot is immutable once built; ranking by assets is descending with
//! ties broken by firm name (byte-wise ascending).

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the snapshot CSV, in order. The last two may be absent.
pub const CSV_COLUMNS: [&str; 6] = ["name", "industry", "assets", "profits", "sales", "market_value"];

/// Industries counted as financial by default (Forbes Global 2000 naming).
pub const DEFAULT_FINANCIAL_INDUSTRIES: [&str; 13] = [
    "Banking",
    "Diversified Financials",
    "Insurance",
    "Consumer Financial Services",
    "Diversified Insurance",
    "Insurance Brokers",
    "Investment Services",
    "Major Banks",
    "Regional Banks",
    "Rental & Leasing",
    "Life & Health Insurance",
    "Thrifts & Mortgage Finance",
    "Property & Casualty Insurance",
];

/// Forbes Global 2000 industries known to be non-financial. Only strict
/// classification consults this list.
pub const DEFAULT_NON_FINANCIAL_INDUSTRIES: [&str; 27] = [
    "Aerospace & Defense",
    "Business Services & Supplies",
    "Capital Goods",
    "Chemicals",
    "Conglomerates",
    "Construction",
    "Consumer Durables",
    "Drugs & Biotechnology",
    "Food Drink & Tobacco",
    "Food, Drink & Tobacco",
    "Food Markets",
    "Health Care Equipment & Services",
    "Hotels Restaurants & Leisure",
    "Hotels, Restaurants & Leisure",
    "Household & Personal Products",
    "Materials",
    "Media",
    "Oil & Gas Operations",
    "Retailing",
    "Semiconductors",
    "Software & Services",
    "Technology Hardware & Equipment",
    "Telecommunications Services",
    "Trading Companies",
    "Transportation",
    "Utilities",
    "Other",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmRecord {
    pub name: String,
    pub industry: String,
    pub assets: f64,
    pub profits: Option<f64>,
    pub sales: Option<f64>,
    pub market_value: Option<f64>,
}

impl FirmRecord {
    pub fn new(name: impl Into<String>, industry: impl Into<String>, assets: f64) -> Self {
        FirmRecord {
            name: name.into(),
            industry: industry.into(),
            assets,
            profits: None,
            sales: None,
            market_value: None,
        }
    }

    pub fn with_profits(mut self, profits: f64) -> Self {
        self.profits = Some(profits);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.assets.is_finite() && self.assets > 0.0) {
            return Err(Error::InvalidRecord(format!(
                "{:?}: assets must be positive, got {}",
                self.name, self.assets
            )));
        }
        if self.industry.trim().is_empty() {
            return Err(Error::InvalidRecord(format!("{:?}: empty industry", self.name)));
        }
        Ok(())
    }
}

/// Descending by assets, then name ascending.
pub fn rank_order(a: &FirmRecord, b: &FirmRecord) -> Ordering {
    b.assets
        .total_cmp(&a.assets)
        .then_with(|| a.name.as_bytes().cmp(b.name.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    list_year: i32,
    firms: Vec<FirmRecord>,
    ranking: Vec<usize>,
}

impl Snapshot {
    pub fn new(list_year: i32, firms: Vec<FirmRecord>) -> Result<Self> {
        if firms.is_empty() {
            return Err(Error::EmptyInput("snapshot has no firms"));
        }
        for f in &firms {
            f.validate()?;
        }
        let mut ranking: Vec<usize> = (0..firms.len()).collect();
        ranking.sort_by(|&i, &j| rank_order(&firms[i], &firms[j]));
        Ok(Snapshot {
            list_year,
            firms,
            ranking,
        })
    }

    pub fn list_year(&self) -> i32 {
        self.list_year
    }

    /// The fiscal year the list describes.
    pub fn data_year(&self) -> i32 {
        self.list_year - 1
    }

    /// Firms in file order.
    pub fn firms(&self) -> &[FirmRecord] {
        &self.firms
    }

    pub fn len(&self) -> usize {
        self.firms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firms.is_empty()
    }

    /// Firms ordered by rank (largest assets first).
    pub fn ranked(&self) -> impl ExactSizeIterator<Item = &FirmRecord> + '_ {
        self.ranking.iter().map(move |&i| &self.firms[i])
    }

    /// Asset sizes in rank order.
    pub fn sizes_desc(&self) -> Vec<f64> {
        self.ranked().map(|f| f.assets).collect()
    }

    /// Sub-snapshot of the firms satisfying `keep`, or `None` if none do.
    pub fn filter(&self, mut keep: impl FnMut(&FirmRecord) -> bool) -> Option<Snapshot> {
        let firms: Vec<_> = self.firms.iter().filter(|f| keep(f)).cloned().collect();
        Snapshot::new(self.list_year, firms).ok()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.firms {
            w.write_record([
                f.name.clone(),
                f.industry.clone(),
                f.assets.to_string(),
                opt(f.profits),
                opt(f.sales),
                opt(f.market_value),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<snapshot writer>", e))?;
        Ok(())
    }
}

/// A row dropped while loading, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedSnapshot {
    pub snapshot: Snapshot,
    pub rejected: Vec<Rejection>,
}

pub fn load_snapshot(path: impl AsRef<Path>, list_year: i32) -> Result<LoadedSnapshot> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshot(file, list_year)
}

pub fn read_snapshot<R: Read>(input: R, list_year: i32) -> Result<LoadedSnapshot> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let header = rdr.headers()?.clone();
    check_header(&header)?;

    let mut firms = Vec::new();
    let mut rejected = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.iter().all(str::is_empty) {
            continue;
        }
        match parse_row(&row) {
            Ok(f) => firms.push(f),
            Err(reason) => rejected.push(Rejection { line, reason }),
        }
    }
    if firms.is_empty() {
        return Err(Error::ZeroValidRows {
            rejected: rejected.len(),
        });
    }
    let snapshot = Snapshot::new(list_year, firms)?;
    Ok(LoadedSnapshot { snapshot, rejected })
}

fn check_header(header: &csv::StringRecord) -> Result<()> {
    let got: Vec<&str> = header.iter().collect();
    let ok = got.len() >= 4
        && got.len() <= CSV_COLUMNS.len()
        && got
            .iter()
            .zip(CSV_COLUMNS)
            .all(|(g, want)| g.eq_ignore_ascii_case(want));
    if ok {
        Ok(())
    } else {
        Err(Error::MalformedHeader(format!(
            "expected `{}`, got `{}`",
            CSV_COLUMNS.join(","),
            got.join(",")
        )))
    }
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<FirmRecord, String> {
    let field = |i: usize| row.get(i).unwrap_or("");
    let optional = |i: usize| -> std::result::Result<Option<f64>, String> {
        let s = field(i);
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| format!("bad {} value {s:?}", CSV_COLUMNS[i]))
    };

    if row.len() > CSV_COLUMNS.len() {
        return Err(format!("{} fields, expected at most {}", row.len(), CSV_COLUMNS.len()));
    }
    let name = field(0);
    if name.is_empty() {
        return Err("empty name".into());
    }
    let industry = field(1);
    if industry.is_empty() {
        return Err("empty industry".into());
    }
    let assets = match optional(2)? {
        Some(a) if a > 0.0 => a,
        Some(a) => return Err(format!("non-positive assets {a}")),
        None => return Err("missing assets".into()),
    };
    Ok(FirmRecord {
        name: name.to_string(),
        industry: industry.to_string(),
        assets,
        profits: optional(3)?,
        sales: optional(4)?,
        market_value: optional(5)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Financial,
    NonFinancial,
}

/// Maps industry strings to sectors. Matching ignores ASCII case and
/// surrounding whitespace.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorClassifier {
    financial: BTreeSet<String>,
    non_financial: BTreeSet<String>,
}

impl Default for SectorClassifier {
    fn default() -> Self {
        SectorClassifier::new(DEFAULT_FINANCIAL_INDUSTRIES).with_non_financial(DEFAULT_NON_FINANCIAL_INDUSTRIES)
    }
}

fn industry_key(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

impl SectorClassifier {
    pub fn new<I, S>(financial: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        SectorClassifier {
            financial: financial.into_iter().map(|s| industry_key(s.as_ref())).collect(),
            non_financial: BTreeSet::new(),
        }
    }

    /// Registers industries known to be non-financial; only consulted by
    /// [`classify_strict`](Self::classify_strict).
    pub fn with_non_financial<I, S>(mut self, industries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.non_financial
            .extend(industries.into_iter().map(|s| industry_key(s.as_ref())));
        self
    }

    /// Parses a plain-text list, one industry per line. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse_list(text: &str) -> Vec<String> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    }

    /// Financial industries from a list file. The known non-financial list
    /// keeps its default.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(SectorClassifier::new(Self::parse_list(&text)).with_non_financial(DEFAULT_NON_FINANCIAL_INDUSTRIES))
    }

    pub fn financial_industries(&self) -> impl Iterator<Item = &str> {
        self.financial.iter().map(String::as_str)
    }

    /// Total classification: anything not listed as financial is non-financial.
    pub fn classify(&self, industry: &str) -> Sector {
        if self.financial.contains(&industry_key(industry)) {
            Sector::Financial
        } else {
            Sector::NonFinancial
        }
    }

    pub fn classify_strict(&self, industry: &str) -> Result<Sector> {
        let key = industry_key(industry);
        if self.financial.contains(&key) {
            Ok(Sector::Financial)
        } else if self.non_financial.contains(&key) {
            Ok(Sector::NonFinancial)
        } else {
            Err(Error::UnknownIndustry(industry.to_string()))
        }
    }

    pub fn is_financial(&self, firm: &FirmRecord) -> bool {
        self.classify(&firm.industry) == Sector::Financial
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SectorTotals {
    pub count: usize,
    pub assets: f64,
    pub profits: f64,
    pub sales: f64,
    pub market_value: f64,
}

impl SectorTotals {
    fn add(&mut self, f: &FirmRecord) {
        self.count += 1;
        self.assets += f.assets;
        self.profits += f.profits.unwrap_or(0.0);
        self.sales += f.sales.unwrap_or(0.0);
        self.market_value += f.market_value.unwrap_or(0.0);
    }

    fn sum(a: &Self, b: &Self) -> Self {
        SectorTotals {
            count: a.count + b.count,
            assets: a.assets + b.assets,
            profits: a.profits + b.profits,
            sales: a.sales + b.sales,
            market_value: a.market_value + b.market_value,
        }
    }
}

/// Financial shares of each aggregate. A share is `None` when it is not a
/// proportion: zero total, or a sector total below zero (losses).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinancialShares {
    pub count: f64,
    pub assets: f64,
    pub profits: Option<f64>,
    pub sales: Option<f64>,
    pub market_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorSummary {
    pub list_year: i32,
    pub financial: SectorTotals,
    pub non_financial: SectorTotals,
    /// Grand totals, defined as `financial + non_financial`.
    pub total: SectorTotals,
    pub financial_share: FinancialShares,
}

fn share(part: f64, other: f64) -> Option<f64> {
    let total = part + other;
    (part >= 0.0 && other >= 0.0 && total > 0.0).then(|| part / total)
}

pub fn sector_summary(s: &Snapshot, c: &SectorClassifier) -> SectorSummary {
    let mut fin = SectorTotals::default();
    let mut non = SectorTotals::default();
    for f in s.firms() {
        match c.classify(&f.industry) {
            Sector::Financial => fin.add(f),
            Sector::NonFinancial => non.add(f),
        }
    }
    let total = SectorTotals::sum(&fin, &non);
    SectorSummary {
        list_year: s.list_year(),
        financial_share: FinancialShares {
            count: fin.count as f64 / total.count as f64,
            assets: fin.assets / total.assets,
            profits: share(fin.profits, non.profits),
            sales: share(fin.sales, non.sales),
            market_value: share(fin.market_value, non.market_value),
        },
        financial: fin,
        non_financial: non,
        total,
    }
}
