//! Price-panel ingestion and return computation.
//!
//! Input is UTF-8 delimited text with a header row, in one of two shapes:
//!
//! - long: `date,entity,close` — one observation per row;
//! - wide: `date,<entity1>,<entity2>,…` — one date per row.
//!
//! Dates are ISO-8601 `YYYY-MM-DD` and act as opaque ordered keys; there
//! is no timezone or holiday logic. Entities may carry a region tag with
//! the `TICKER@REGION` suffix convention, or regions can be attached
//! afterwards from an `entity,region` side file.
//!
//! Missing observations are explicit: an absent (date, entity) pair, an
//! empty cell, or a non-positive/unparseable close all become missing
//! cells (stored as NaN), never zero. Log returns that touch a missing
//! close are imputed as zero and flagged in the return panel's mask.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::NaiveDate;
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Input layout of a delimited price stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// `date,entity,close` rows.
    Long,
    /// `date` column followed by one close column per entity.
    Wide,
}

impl std::str::FromStr for Schema {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "long" => Ok(Schema::Long),
            "wide" => Ok(Schema::Wide),
            other => Err(format!("unknown schema `{other}` (expected `long` or `wide`)")),
        }
    }
}

/// An instrument identifier plus optional region tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Entity {
    pub ticker: String,
    pub region: Option<String>,
}

impl Entity {
    /// Parses the `TICKER@REGION` convention; a bare ticker has no region.
    pub fn parse(raw: &str) -> Entity {
        match raw.split_once('@') {
            Some((ticker, region)) if !region.is_empty() => Entity {
                ticker: ticker.to_string(),
                region: Some(region.to_string()),
            },
            _ => Entity {
                ticker: raw.to_string(),
                region: None,
            },
        }
    }

    /// Canonical identifier: `TICKER@REGION` when tagged, else the ticker.
    pub fn id(&self) -> String {
        match &self.region {
            Some(r) => format!("{}@{}", self.ticker, r),
            None => self.ticker.clone(),
        }
    }
}

/// Daily closing prices on a shared calendar. Missing cells are NaN.
#[derive(Debug, Clone)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    entities: Vec<Entity>,
    /// rows = dates, cols = entities; missing stored as NaN, present > 0.
    closes: DMatrix<f64>,
}

impl PricePanel {
    /// Builds a panel, checking the type invariants.
    pub fn new(dates: Vec<NaiveDate>, entities: Vec<Entity>, closes: DMatrix<f64>) -> Result<Self> {
        if closes.nrows() != dates.len() || closes.ncols() != entities.len() {
            return Err(Error::Data(format!(
                "closes is {}x{} but panel has {} dates and {} entities",
                closes.nrows(),
                closes.ncols(),
                dates.len(),
                entities.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(
                "dates must be strictly increasing with no duplicates".into(),
            ));
        }
        for v in closes.iter() {
            if !v.is_nan() && *v <= 0.0 {
                return Err(Error::Data(format!("non-positive close {v} stored as present")));
            }
        }
        Ok(PricePanel { dates, entities, closes })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn closes(&self) -> &DMatrix<f64> {
        &self.closes
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Attaches regions from an `entity -> region` map keyed by ticker.
    /// Entities absent from the map keep their current tag.
    pub fn apply_region_map(&mut self, map: &BTreeMap<String, String>) {
        for e in &mut self.entities {
            if let Some(r) = map.get(&e.ticker) {
                e.region = Some(r.clone());
            }
        }
    }

    /// Splits the panel into one panel per region, sorted by region name.
    ///
    /// Every entity must carry a region tag.
    pub fn split_by_region(&self) -> Result<Vec<(String, PricePanel)>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (j, e) in self.entities.iter().enumerate() {
            match &e.region {
                Some(r) => groups.entry(r.clone()).or_default().push(j),
                None => {
                    return Err(Error::Data(format!(
                        "entity {} has no region tag; use TICKER@REGION or a region side file",
                        e.ticker
                    )))
                }
            }
        }
        let mut out = Vec::with_capacity(groups.len());
        for (region, cols) in groups {
            let entities: Vec<Entity> = cols.iter().map(|&j| self.entities[j].clone()).collect();
            let closes = DMatrix::from_fn(self.dates.len(), cols.len(), |i, k| {
                self.closes[(i, cols[k])]
            });
            out.push((
                region,
                PricePanel::new(self.dates.clone(), entities, closes)?,
            ));
        }
        Ok(out)
    }
}

/// Policy for return cells whose source closes are missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Impute a zero log return and flag the cell.
    #[default]
    ZeroImpute,
    /// Drop every return date that would contain an imputed cell.
    Drop,
}

impl std::str::FromStr for MissingPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zero_impute" => Ok(MissingPolicy::ZeroImpute),
            "drop" => Ok(MissingPolicy::Drop),
            other => Err(format!(
                "unknown missing policy `{other}` (expected `zero_impute` or `drop`)"
            )),
        }
    }
}

/// Calendar alignment policy for a return panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignPolicy {
    /// Keep only dates where every entity has a non-imputed return.
    Intersect,
    /// Keep all dates; holes stay zero-filled and flagged.
    #[default]
    UnionZeroFill,
}

impl std::str::FromStr for AlignPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "intersect" => Ok(AlignPolicy::Intersect),
            "union_zero_fill" => Ok(AlignPolicy::UnionZeroFill),
            other => Err(format!(
                "unknown align policy `{other}` (expected `intersect` or `union_zero_fill`)"
            )),
        }
    }
}

/// Log returns on a shared calendar, with imputed cells flagged.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    entities: Vec<Entity>,
    /// rows = dates, cols = entities; imputed cells hold 0.0.
    returns: DMatrix<f64>,
    /// true where the return was imputed rather than observed.
    missing_mask: DMatrix<bool>,
}

impl ReturnPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        entities: Vec<Entity>,
        returns: DMatrix<f64>,
        missing_mask: DMatrix<bool>,
    ) -> Result<Self> {
        if returns.nrows() != dates.len() || returns.ncols() != entities.len() {
            return Err(Error::Data(format!(
                "returns is {}x{} but panel has {} dates and {} entities",
                returns.nrows(),
                returns.ncols(),
                dates.len(),
                entities.len()
            )));
        }
        if returns.shape() != missing_mask.shape() {
            return Err(Error::Data("mask shape differs from returns".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(
                "dates must be strictly increasing with no duplicates".into(),
            ));
        }
        if returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("return panel".into()));
        }
        Ok(ReturnPanel { dates, entities, returns, missing_mask })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity_ids(&self) -> Vec<String> {
        self.entities.iter().map(Entity::id).collect()
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn missing_mask(&self) -> &DMatrix<bool> {
        &self.missing_mask
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Fraction of imputed cells over the whole panel.
    pub fn imputed_fraction(&self) -> f64 {
        if self.missing_mask.is_empty() {
            return 0.0;
        }
        let imputed = self.missing_mask.iter().filter(|&&m| m).count();
        imputed as f64 / self.missing_mask.len() as f64
    }

    fn select_rows(&self, rows: &[usize]) -> Result<ReturnPanel> {
        let dates = rows.iter().map(|&i| self.dates[i]).collect();
        let returns = DMatrix::from_fn(rows.len(), self.n_entities(), |i, j| {
            self.returns[(rows[i], j)]
        });
        let mask = DMatrix::from_fn(rows.len(), self.n_entities(), |i, j| {
            self.missing_mask[(rows[i], j)]
        });
        ReturnPanel::new(dates, self.entities.clone(), returns, mask)
    }

    /// Splits the panel into one panel per region, sorted by region name.
    pub fn split_by_region(&self) -> Result<Vec<(String, ReturnPanel)>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (j, e) in self.entities.iter().enumerate() {
            match &e.region {
                Some(r) => groups.entry(r.clone()).or_default().push(j),
                None => {
                    return Err(Error::Data(format!(
                        "entity {} has no region tag; use TICKER@REGION or a region side file",
                        e.ticker
                    )))
                }
            }
        }
        let mut out = Vec::with_capacity(groups.len());
        for (region, cols) in groups {
            let entities: Vec<Entity> = cols.iter().map(|&j| self.entities[j].clone()).collect();
            let returns =
                DMatrix::from_fn(self.dates.len(), cols.len(), |i, k| self.returns[(i, cols[k])]);
            let mask = DMatrix::from_fn(self.dates.len(), cols.len(), |i, k| {
                self.missing_mask[(i, cols[k])]
            });
            out.push((region, ReturnPanel::new(self.dates.clone(), entities, returns, mask)?));
        }
        Ok(out)
    }
}

fn parse_date(raw: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| Error::Parse {
        line,
        msg: format!("malformed date `{}` (expected YYYY-MM-DD)", raw.trim()),
    })
}

/// Parses a close cell. `None` means missing; warnings are logged for
/// non-positive or unparseable values, silent for empty cells.
fn parse_close(raw: &str, line: usize, entity: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() {
        return None;
    }
    match t.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Some(v),
        Ok(v) => {
            log::warn!("line {line}: non-positive close {v} for {entity} treated as missing");
            None
        }
        Err(_) => {
            log::warn!("line {line}: unparseable close `{t}` for {entity} treated as missing");
            None
        }
    }
}

/// Loads a delimited price stream into a [`PricePanel`].
///
/// Dates are sorted ascending and entities by identifier. Unparseable or
/// non-positive prices become missing cells (with a warning); malformed
/// dates and duplicate (date, entity) pairs abort the load.
pub fn load_price_panel<R: Read>(reader: R, schema: Schema, delimiter: u8) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    match schema {
        Schema::Long => load_long(&mut rdr),
        Schema::Wide => load_wide(&mut rdr),
    }
}

fn load_long<R: Read>(rdr: &mut csv::Reader<R>) -> Result<PricePanel> {
    // (date, entity id) -> close option; BTreeMaps keep output order canonical.
    let mut cells: BTreeMap<(NaiveDate, String), Option<f64>> = BTreeMap::new();
    let mut entities: BTreeMap<String, Entity> = BTreeMap::new();
    let mut line = 1usize; // header consumed by the reader

    for rec in rdr.records() {
        let rec = rec?;
        line += 1;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() < 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields (date,entity,close), got {}", rec.len()),
            });
        }
        let date = parse_date(&rec[0], line)?;
        let raw_entity = rec[1].trim();
        if raw_entity.is_empty() {
            return Err(Error::Parse { line, msg: "empty entity field".into() });
        }
        let entity = Entity::parse(raw_entity);
        let id = entity.id();
        let close = parse_close(&rec[2], line, &id);
        if cells.insert((date, id.clone()), close).is_some() {
            return Err(Error::DuplicateKey { date: date.to_string(), entity: id });
        }
        entities.entry(id).or_insert(entity);
    }

    if cells.is_empty() {
        return Err(Error::EmptyInput);
    }

    let dates: Vec<NaiveDate> = cells
        .keys()
        .map(|(d, _)| *d)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids: Vec<String> = entities.keys().cloned().collect();
    let date_idx: BTreeMap<NaiveDate, usize> =
        dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let ent_idx: BTreeMap<&String, usize> = ids.iter().enumerate().map(|(j, e)| (e, j)).collect();

    let mut closes = DMatrix::from_element(dates.len(), ids.len(), f64::NAN);
    for ((date, id), close) in cells {
        if let Some(v) = close {
            closes[(date_idx[&date], ent_idx[&id])] = v;
        }
    }
    let entity_list = ids.into_iter().map(|id| entities.remove(&id).unwrap()).collect();
    PricePanel::new(dates, entity_list, closes)
}

fn load_wide<R: Read>(rdr: &mut csv::Reader<R>) -> Result<PricePanel> {
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "wide schema needs a date column plus at least one entity column".into(),
        });
    }
    let raw_entities: Vec<Entity> = headers.iter().skip(1).map(|h| Entity::parse(h.trim())).collect();
    {
        let mut seen = BTreeSet::new();
        for e in &raw_entities {
            if e.ticker.is_empty() {
                return Err(Error::Parse { line: 1, msg: "empty entity column name".into() });
            }
            if !seen.insert(e.id()) {
                return Err(Error::DuplicateKey { date: "<header>".into(), entity: e.id() });
            }
        }
    }

    let mut rows: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    let mut line = 1usize;
    for rec in rdr.records() {
        let rec = rec?;
        line += 1;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let date = parse_date(&rec[0], line)?;
        if rows.contains_key(&date) {
            return Err(Error::DuplicateKey {
                date: date.to_string(),
                entity: "<all columns>".into(),
            });
        }
        let mut row = Vec::with_capacity(raw_entities.len());
        for (j, e) in raw_entities.iter().enumerate() {
            let cell = rec.get(j + 1).unwrap_or("");
            row.push(parse_close(cell, line, &e.id()));
        }
        rows.insert(date, row);
    }

    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    // Sort entities by identifier, carrying their original column index.
    let mut order: Vec<usize> = (0..raw_entities.len()).collect();
    order.sort_by_key(|&j| raw_entities[j].id());
    let entities: Vec<Entity> = order.iter().map(|&j| raw_entities[j].clone()).collect();

    let dates: Vec<NaiveDate> = rows.keys().copied().collect();
    let mut closes = DMatrix::from_element(dates.len(), entities.len(), f64::NAN);
    for (i, (_, row)) in rows.iter().enumerate() {
        for (k, &j) in order.iter().enumerate() {
            if let Some(v) = row[j] {
                closes[(i, k)] = v;
            }
        }
    }
    PricePanel::new(dates, entities, closes)
}

/// Loads an `entity,region` side file (header required).
pub fn load_region_map<R: Read>(reader: R, delimiter: u8) -> Result<BTreeMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut map = BTreeMap::new();
    let mut line = 1usize;
    for rec in rdr.records() {
        let rec = rec?;
        line += 1;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 fields (entity,region), got {}", rec.len()),
            });
        }
        let entity = rec[0].trim().to_string();
        let region = rec[1].trim().to_string();
        if entity.is_empty() || region.is_empty() {
            return Err(Error::Parse { line, msg: "empty entity or region field".into() });
        }
        if map.insert(entity.clone(), region).is_some() {
            return Err(Error::DuplicateKey { date: "<region map>".into(), entity });
        }
    }
    Ok(map)
}

/// Computes log returns `ln(close_t / close_{t-1})` per entity.
///
/// Cells touching a missing close are imputed as zero and flagged; under
/// [`MissingPolicy::Drop`] the affected dates are removed instead.
pub fn compute_log_returns(panel: &PricePanel, policy: MissingPolicy) -> Result<ReturnPanel> {
    let t = panel.n_dates();
    if t < 2 {
        return Err(Error::InsufficientData { needed: 2, got: t });
    }
    let n = panel.n_entities();
    let closes = panel.closes();
    let mut returns = DMatrix::zeros(t - 1, n);
    let mut mask = DMatrix::from_element(t - 1, n, false);
    for i in 1..t {
        for j in 0..n {
            let prev = closes[(i - 1, j)];
            let cur = closes[(i, j)];
            if prev.is_nan() || cur.is_nan() {
                mask[(i - 1, j)] = true; // return stays 0.0
            } else {
                returns[(i - 1, j)] = cur.ln() - prev.ln();
            }
        }
    }
    let dates: Vec<NaiveDate> = panel.dates()[1..].to_vec();
    let full = ReturnPanel::new(dates, panel.entities().to_vec(), returns, mask)?;
    match policy {
        MissingPolicy::ZeroImpute => Ok(full),
        MissingPolicy::Drop => {
            let keep: Vec<usize> = (0..full.n_dates())
                .filter(|&i| (0..n).all(|j| !full.missing_mask[(i, j)]))
                .collect();
            full.select_rows(&keep)
        }
    }
}

/// Aligns a return panel onto a common calendar.
pub fn align_calendar(panel: &ReturnPanel, policy: AlignPolicy) -> Result<ReturnPanel> {
    if panel.n_dates() == 0 {
        return Err(Error::EmptyInput);
    }
    match policy {
        AlignPolicy::UnionZeroFill => Ok(panel.clone()),
        AlignPolicy::Intersect => {
            let n = panel.n_entities();
            let keep: Vec<usize> = (0..panel.n_dates())
                .filter(|&i| (0..n).all(|j| !panel.missing_mask[(i, j)]))
                .collect();
            if keep.len() < 2 {
                return Err(Error::InsufficientOverlap { needed: 2, got: keep.len() });
            }
            panel.select_rows(&keep)
        }
    }
}
