//! Explicit-rating ingestion and conversion to the post-click setting.
//!
//! A rated pair is a click; a rating of 4 or 5 is a conversion. Datasets are
//! stored sparsely, sorted by `(user, item)`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Ratings at or above this value count as conversions.
pub const CONVERSION_THRESHOLD: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventTable {
    rows: Vec<Rating>,
    num_users: usize,
    num_items: usize,
}

impl EventTable {
    /// Validates indices, rating range and pair uniqueness. Rows are sorted
    /// by `(user, item)`.
    pub fn new(mut rows: Vec<Rating>, num_users: usize, num_items: usize) -> Result<Self> {
        for r in &rows {
            if r.user as usize >= num_users || r.item as usize >= num_items {
                return Err(Error::Validation(format!(
                    "pair ({}, {}) outside a {num_users}x{num_items} grid",
                    r.user, r.item
                )));
            }
            if !(1..=5).contains(&r.rating) {
                return Err(Error::Validation(format!("rating {} outside 1..5", r.rating)));
            }
        }
        rows.sort_unstable();
        if let Some(w) = rows
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::Validation(format!(
                "duplicate pair ({}, {})",
                w[0].user, w[0].item
            )));
        }
        Ok(Self {
            rows,
            num_users,
            num_items,
        })
    }

    pub fn rows(&self) -> &[Rating] {
        &self.rows
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Grows the index space, e.g. to align an MNAR and a MAR table.
    pub fn with_shape(mut self, num_users: usize, num_items: usize) -> Result<Self> {
        if num_users < self.num_users || num_items < self.num_items {
            return Err(Error::Shape(format!(
                "cannot shrink {}x{} to {num_users}x{num_items}",
                self.num_users, self.num_items
            )));
        }
        self.num_users = num_users;
        self.num_items = num_items;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Whitespace-separated `user item rating`; `one_based` shifts indices.
    Triples { one_based: bool },
    /// MovieLens 100K `u.data`: `user\titem\trating\ttimestamp`, 1-based.
    MovieLens100k,
    /// Dense whitespace-separated rating matrix, 0 = unrated (Coat Shopping).
    DenseMatrix,
    /// Already binarized click logs as written by [`ConversionDataset::save`].
    Conversions,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "triples" | "triple-text" => Ok(Self::Triples { one_based: false }),
            "triples-1" | "triples-one-based" | "yahoo" | "yahoo-r3" => {
                Ok(Self::Triples { one_based: true })
            }
            "ml-100k" | "movielens-100k" | "ml100k" => Ok(Self::MovieLens100k),
            "dense" | "coat" => Ok(Self::DenseMatrix),
            "conversions" => Ok(Self::Conversions),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Triples { one_based: false } => write!(f, "triples"),
            Self::Triples { one_based: true } => write!(f, "triples-1"),
            Self::MovieLens100k => write!(f, "ml-100k"),
            Self::DenseMatrix => write!(f, "dense"),
            Self::Conversions => write!(f, "conversions"),
        }
    }
}

/// What to do when a raw file rates the same pair twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    #[default]
    KeepLast,
    Reject,
}

pub fn load_ratings(path: &Path, format: DatasetFormat) -> Result<EventTable> {
    load_ratings_with(path, format, DuplicatePolicy::default())
}

pub fn load_ratings_with(
    path: &Path,
    format: DatasetFormat,
    duplicates: DuplicatePolicy,
) -> Result<EventTable> {
    if format == DatasetFormat::Conversions {
        return Err(Error::Config(format!(
            "{} holds binarized conversions, not ratings",
            path.display()
        )));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let shown = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: shown.clone(),
        line,
        msg,
    };

    let mut cells: BTreeMap<(u32, u32), u8> = BTreeMap::new();
    let mut num_users = 0usize;
    let mut num_items = 0usize;
    let mut dense_width: Option<usize> = None;
    let mut dense_row = 0u32;

    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match format {
            DatasetFormat::DenseMatrix => {
                let values = trimmed
                    .split_whitespace()
                    .map(|t| parse_rating(t, true).map_err(|m| parse_err(lineno, m)))
                    .collect::<Result<Vec<u8>>>()?;
                match dense_width {
                    None => dense_width = Some(values.len()),
                    Some(w) if w != values.len() => {
                        return Err(parse_err(
                            lineno,
                            format!("row has {} columns, expected {w}", values.len()),
                        ))
                    }
                    _ => {}
                }
                for (item, &r) in values.iter().enumerate() {
                    if r > 0 {
                        cells.insert((dense_row, item as u32), r);
                    }
                }
                dense_row += 1;
                num_users = dense_row as usize;
                num_items = values.len();
            }
            DatasetFormat::Conversions => unreachable!("rejected above"),
            DatasetFormat::Triples { .. } | DatasetFormat::MovieLens100k => {
                let fields: Vec<&str> = if format == DatasetFormat::MovieLens100k {
                    trimmed.split('\t').collect()
                } else {
                    trimmed.split_whitespace().collect()
                };
                let expected = if format == DatasetFormat::MovieLens100k { 4 } else { 3 };
                if fields.len() < expected {
                    return Err(parse_err(
                        lineno,
                        format!("expected {expected} fields, found {}", fields.len()),
                    ));
                }
                let one_based = matches!(
                    format,
                    DatasetFormat::MovieLens100k | DatasetFormat::Triples { one_based: true }
                );
                let user = parse_index(fields[0], one_based).map_err(|m| parse_err(lineno, m))?;
                let item = parse_index(fields[1], one_based).map_err(|m| parse_err(lineno, m))?;
                let rating = parse_rating(fields[2], false).map_err(|m| parse_err(lineno, m))?;
                if cells.insert((user, item), rating).is_some() {
                    match duplicates {
                        DuplicatePolicy::Reject => {
                            return Err(Error::Validation(format!(
                                "{shown}:{lineno}: duplicate pair ({user}, {item})"
                            )))
                        }
                        DuplicatePolicy::KeepLast => {
                            warn!("{shown}:{lineno}: duplicate pair ({user}, {item}), keeping last")
                        }
                    }
                }
                num_users = num_users.max(user as usize + 1);
                num_items = num_items.max(item as usize + 1);
            }
        }
    }

    let rows = cells
        .into_iter()
        .map(|((user, item), rating)| Rating { user, item, rating })
        .collect();
    EventTable::new(rows, num_users, num_items)
}

fn parse_index(token: &str, one_based: bool) -> std::result::Result<u32, String> {
    let v: u64 = token
        .parse()
        .map_err(|_| format!("invalid index '{token}'"))?;
    let v = if one_based {
        v.checked_sub(1)
            .ok_or_else(|| "index 0 in a 1-based file".to_string())?
    } else {
        v
    };
    u32::try_from(v).map_err(|_| format!("index {v} too large"))
}

fn parse_rating(token: &str, allow_zero: bool) -> std::result::Result<u8, String> {
    // Some distributions write ratings as floats ("4.0").
    let v: f64 = token
        .parse()
        .map_err(|_| format!("invalid rating '{token}'"))?;
    if v.fract() != 0.0 {
        return Err(format!("non-integer rating {v}"));
    }
    let lo = if allow_zero { 0.0 } else { 1.0 };
    if !(lo..=5.0).contains(&v) {
        return Err(format!("rating {v} outside {lo}..5"));
    }
    Ok(v as u8)
}

/// One clicked event and its binary conversion label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub converted: bool,
}

/// Click support `O` with conversion labels defined on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionDataset {
    events: Vec<Interaction>,
    user_offsets: Vec<usize>,
    num_users: usize,
    num_items: usize,
}

impl ConversionDataset {
    pub fn new(mut events: Vec<Interaction>, num_users: usize, num_items: usize) -> Result<Self> {
        for e in &events {
            if e.user as usize >= num_users || e.item as usize >= num_items {
                return Err(Error::Validation(format!(
                    "pair ({}, {}) outside a {num_users}x{num_items} grid",
                    e.user, e.item
                )));
            }
        }
        events.sort_unstable();
        if events
            .windows(2)
            .any(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::Validation("duplicate clicked pair".into()));
        }
        let mut user_offsets = vec![0usize; num_users + 1];
        for e in &events {
            user_offsets[e.user as usize + 1] += 1;
        }
        for u in 0..num_users {
            user_offsets[u + 1] += user_offsets[u];
        }
        Ok(Self {
            events,
            user_offsets,
            num_users,
            num_items,
        })
    }

    pub fn events(&self) -> &[Interaction] {
        &self.events
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// `|D| = m · n`.
    pub fn universe_size(&self) -> usize {
        self.num_users * self.num_items
    }

    pub fn num_clicks(&self) -> usize {
        self.events.len()
    }

    pub fn num_conversions(&self) -> usize {
        self.events.iter().filter(|e| e.converted).count()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn click_rate(&self) -> f64 {
        self.num_clicks() as f64 / self.universe_size() as f64
    }

    pub fn user_range(&self, user: usize) -> Range<usize> {
        self.user_offsets[user]..self.user_offsets[user + 1]
    }

    pub fn user_events(&self, user: usize) -> &[Interaction] {
        &self.events[self.user_range(user)]
    }

    /// Conversion label of a clicked pair; `None` if the pair is unclicked.
    pub fn label(&self, user: usize, item: usize) -> Option<bool> {
        if user >= self.num_users {
            return None;
        }
        let row = self.user_events(user);
        row.binary_search_by_key(&(item as u32), |e| e.item)
            .ok()
            .map(|k| row[k].converted)
    }

    pub fn is_clicked(&self, user: usize, item: usize) -> bool {
        self.label(user, item).is_some()
    }

    /// Users with at least one event.
    pub fn active_users(&self) -> usize {
        (0..self.num_users)
            .filter(|&u| !self.user_range(u).is_empty())
            .count()
    }

    pub fn with_shape(self, num_users: usize, num_items: usize) -> Result<Self> {
        if num_users < self.num_users || num_items < self.num_items {
            return Err(Error::Shape("cannot shrink a dataset".into()));
        }
        Self::new(self.events, num_users, num_items)
    }

    /// Text form: a `#` header with the shape, then `user item label` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# users={} items={}", self.num_users, self.num_items).expect("vec write");
        for e in &self.events {
            writeln!(out, "{} {} {}", e.user, e.item, e.converted as u8).expect("vec write");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let shown = path.display().to_string();
        let mut shape: Option<(usize, usize)> = None;
        let mut events = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let kv = parse_kv_tokens(header);
                if let (Some(u), Some(i)) = (kv.get("users"), kv.get("items")) {
                    let parse = |s: &String| {
                        s.parse::<usize>().map_err(|_| Error::Parse {
                            path: shown.clone(),
                            line: k + 1,
                            msg: format!("bad shape value '{s}'"),
                        })
                    };
                    shape = Some((parse(u)?, parse(i)?));
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: String| Error::Parse {
                path: shown.clone(),
                line: k + 1,
                msg,
            };
            if f.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", f.len())));
            }
            let user = f[0].parse().map_err(|_| bad(format!("bad user '{}'", f[0])))?;
            let item = f[1].parse().map_err(|_| bad(format!("bad item '{}'", f[1])))?;
            let converted = match f[2] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("label '{other}' is not binary"))),
            };
            events.push(Interaction {
                user,
                item,
                converted,
            });
        }
        let (m, n) = shape.ok_or_else(|| Error::Parse {
            path: shown,
            line: 1,
            msg: "missing '# users=.. items=..' header".into(),
        })?;
        Self::new(events, m, n)
    }
}

fn parse_kv_tokens(s: &str) -> BTreeMap<String, String> {
    s.split_whitespace()
        .filter_map(|t| t.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Rated pairs become clicks; ratings ≥ 4 become conversions.
pub fn to_conversion_setting(events: &EventTable) -> Result<ConversionDataset> {
    if events.is_empty() {
        return Err(Error::Validation("empty event table".into()));
    }
    let rows = events
        .rows()
        .iter()
        .map(|r| Interaction {
            user: r.user,
            item: r.item,
            converted: r.rating >= CONVERSION_THRESHOLD,
        })
        .collect();
    ConversionDataset::new(rows, events.num_users(), events.num_items())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Seeded uniform partition of the clicked events into train / validation.
///
/// The train half receives `round(n · train_fraction)` events.
pub fn split_mnar(
    ds: &ConversionDataset,
    spec: SplitSpec,
) -> Result<(ConversionDataset, ConversionDataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..ds.num_clicks()).collect();
    order.shuffle(&mut stream_rng(spec.seed, streams::SPLIT));
    let n_train = (ds.num_clicks() as f64 * spec.train_fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&k| ds.events()[k]).collect::<Vec<_>>();
    let train = ConversionDataset::new(pick(&order[..n_train]), ds.num_users(), ds.num_items())?;
    let valid = ConversionDataset::new(pick(&order[n_train..]), ds.num_users(), ds.num_items())?;
    Ok((train, valid))
}

/// Drops users without any conversion. The index space is unchanged.
pub fn filter_test_users(test: &ConversionDataset) -> Result<ConversionDataset> {
    let kept: Vec<Interaction> = (0..test.num_users())
        .filter(|&u| test.user_events(u).iter().any(|e| e.converted))
        .flat_map(|u| test.user_events(u).iter().copied())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyTest);
    }
    ConversionDataset::new(kept, test.num_users(), test.num_items())
}

/// `key=value` description of a real dataset.
///
/// ```text
/// name=coat
/// format=dense
/// train=train.ascii
/// test=test.ascii
/// split_seed=0
/// train_fraction=0.9
/// ```
///
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub format: DatasetFormat,
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub split: SplitSpec,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = crate::experiment::config::parse_key_values(text)?;
        let get = |k: &str| kv.get(k).cloned();
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let format: DatasetFormat = get("format")
            .ok_or_else(|| Error::Config("manifest lacks 'format'".into()))?
            .parse()?;
        let train = get("train")
            .map(resolve)
            .ok_or_else(|| Error::Config("manifest lacks 'train'".into()))?;
        let mut split = SplitSpec::default();
        if let Some(s) = get("split_seed") {
            split.seed = s
                .parse()
                .map_err(|_| Error::Config(format!("bad split_seed '{s}'")))?;
        }
        if let Some(s) = get("train_fraction") {
            split.train_fraction = s
                .parse()
                .map_err(|_| Error::Config(format!("bad train_fraction '{s}'")))?;
        }
        Ok(Self {
            name: get("name").unwrap_or_else(|| "dataset".into()),
            format,
            train,
            test: get("test").map(resolve),
            split,
        })
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("name".to_string(), self.name.clone()),
            ("format".to_string(), self.format.to_string()),
            ("train".to_string(), self.train.display().to_string()),
        ];
        if let Some(t) = &self.test {
            v.push(("test".into(), t.display().to_string()));
        }
        v.push(("split_seed".into(), self.split.seed.to_string()));
        v.push(("train_fraction".into(), self.split.train_fraction.to_string()));
        v
    }
}

/// MNAR train/validation plus filtered MAR test, sharing one index space.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub train: ConversionDataset,
    pub valid: ConversionDataset,
    pub test: ConversionDataset,
}

impl PreparedData {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// All MNAR clicks (train ∪ validation).
    pub fn mnar(&self) -> Result<ConversionDataset> {
        let mut ev = self.train.events().to_vec();
        ev.extend_from_slice(self.valid.events());
        ConversionDataset::new(ev, self.num_users(), self.num_items())
    }
}

pub fn prepare(manifest: &DatasetManifest) -> Result<PreparedData> {
    let require = |p: &Path| -> Result<()> {
        if p.exists() {
            Ok(())
        } else {
            Err(Error::MissingDataset {
                path: p.to_path_buf(),
                hint: format!(
                    "download the '{}' dataset and point the manifest at its files",
                    manifest.name
                ),
            })
        }
    };
    require(&manifest.train)?;
    let test_path = manifest
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("manifest lacks 'test' (the MAR set)".into()))?;
    require(test_path)?;

    let (mnar, mar) = if manifest.format == DatasetFormat::Conversions {
        (
            ConversionDataset::load(&manifest.train)?,
            ConversionDataset::load(test_path)?,
        )
    } else {
        (
            to_conversion_setting(&load_ratings(&manifest.train, manifest.format)?)?,
            to_conversion_setting(&load_ratings(test_path, manifest.format)?)?,
        )
    };
    let m = mnar.num_users().max(mar.num_users());
    let n = mnar.num_items().max(mar.num_items());
    let mnar = mnar.with_shape(m, n)?;
    let mar = mar.with_shape(m, n)?;
    let (train, valid) = split_mnar(&mnar, manifest.split)?;
    let test = filter_test_users(&mar)?;
    log::info!(
        "{}: {}x{} grid, {} MNAR clicks ({} train / {} valid), {} MAR events, {} test users after filtering",
        manifest.name,
        m,
        n,
        mnar.num_clicks(),
        train.num_clicks(),
        valid.num_clicks(),
        mar.num_clicks(),
        test.active_users()
    );
    Ok(PreparedData {
        name: manifest.name.clone(),
        train,
        valid,
        test,
    })
}
