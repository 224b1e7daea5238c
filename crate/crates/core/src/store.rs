//! Date-versioned feature store with two column families per user row:
//! `basic` (52 features) and `embedding` (`dim` values).
//!
//! On disk a store is a directory holding one snapshot file per version and
//! a `MANIFEST`. Publishing writes the snapshot, then rewrites the manifest
//! through a rename, so a version exists exactly when the manifest names it.
//!
//! Snapshot layout: one text header line
//! `titant-snapshot 1 <version_date> <n_rows> <dim>`, then per row a
//! little-endian `u16` user-id length, the UTF-8 user id, and `52 + dim`
//! little-endian `f64` values (basic first).

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::BASIC_FEATURES;

const MANIFEST: &str = "MANIFEST";
const SNAPSHOT_MAGIC: &str = "titant-snapshot 1";

/// One user's row as supplied to [`FeatureStore::publish`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub user: String,
    pub basic: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// An immutable published version.
#[derive(Debug)]
pub struct Version {
    date: NaiveDate,
    dim: usize,
    users: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f64>,
}

impl Version {
    fn width(&self) -> usize {
        BASIC_FEATURES + self.dim
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn row(&self, user: &str) -> Option<RowRef<'_>> {
        let &i = self.index.get(user)?;
        let w = self.width();
        let values = &self.values[i * w..(i + 1) * w];
        Some(RowRef {
            date: self.date,
            basic: &values[..BASIC_FEATURES],
            embedding: &values[BASIC_FEATURES..],
        })
    }

    fn from_rows(date: NaiveDate, dim: usize, rows: &[FeatureRow]) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        let mut users = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * (BASIC_FEATURES + dim));
        for row in rows {
            if row.basic.len() != BASIC_FEATURES {
                return Err(Error::IncompleteRow {
                    user: row.user.clone(),
                    family: "basic",
                });
            }
            if row.embedding.len() != dim {
                return Err(Error::IncompleteRow {
                    user: row.user.clone(),
                    family: "embedding",
                });
            }
            if row.user.len() > usize::from(u16::MAX) {
                return Err(Error::Config(format!("user id too long: {} bytes", row.user.len())));
            }
            if index.insert(row.user.clone(), users.len()).is_some() {
                return Err(Error::Config(format!("duplicate row for user `{}`", row.user)));
            }
            users.push(row.user.clone());
            values.extend_from_slice(&row.basic);
            values.extend_from_slice(&row.embedding);
        }
        Ok(Version {
            date,
            dim,
            users,
            index,
            values,
        })
    }

    fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SNAPSHOT_MAGIC} {} {} {}", self.date, self.len(), self.dim)?;
        let width = self.width();
        for (i, user) in self.users.iter().enumerate() {
            w.write_all(&(user.len() as u16).to_le_bytes())?;
            w.write_all(user.as_bytes())?;
            for v in &self.values[i * width..(i + 1) * width] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let corrupt = |m: &str| Error::corrupt("snapshot", m.to_string());
        let mut header = String::new();
        r.read_line(&mut header)?;
        let rest = header
            .trim_end()
            .strip_prefix(SNAPSHOT_MAGIC)
            .ok_or_else(|| corrupt("bad magic"))?;
        let parts: Vec<&str> = rest.split_whitespace().collect();
        let [date, n, dim] = parts[..] else {
            return Err(corrupt("bad header"));
        };
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| corrupt("bad date"))?;
        let n: usize = n.parse().map_err(|_| corrupt("bad row count"))?;
        let dim: usize = dim.parse().map_err(|_| corrupt("bad dim"))?;
        let width = BASIC_FEATURES + dim;
        let mut users = Vec::with_capacity(n);
        let mut index = HashMap::with_capacity(n);
        let mut values = Vec::with_capacity(n * width);
        let mut len = [0u8; 2];
        let mut buf = vec![0u8; width * 8];
        for i in 0..n {
            r.read_exact(&mut len).map_err(|_| corrupt("truncated"))?;
            let mut name = vec![0u8; usize::from(u16::from_le_bytes(len))];
            r.read_exact(&mut name).map_err(|_| corrupt("truncated"))?;
            let user = String::from_utf8(name).map_err(|_| corrupt("user id is not UTF-8"))?;
            r.read_exact(&mut buf).map_err(|_| corrupt("truncated"))?;
            values.extend(
                buf.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))),
            );
            if index.insert(user.clone(), i).is_some() {
                return Err(corrupt("duplicate user"));
            }
            users.push(user);
        }
        if r.fill_buf()?.is_empty() {
            Ok(Version {
                date,
                dim,
                users,
                index,
                values,
            })
        } else {
            Err(corrupt("trailing bytes"))
        }
    }
}

/// Borrowed view of one row, all from a single version.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowRef<'a> {
    pub date: NaiveDate,
    pub basic: &'a [f64],
    pub embedding: &'a [f64],
}

/// Everything a reader can see at one instant.
#[derive(Debug, Default)]
pub struct StoreState {
    versions: BTreeMap<NaiveDate, Arc<Version>>,
}

impl StoreState {
    pub fn latest(&self) -> Option<&Arc<Version>> {
        self.versions.values().next_back()
    }

    pub fn at(&self, date: NaiveDate) -> Option<&Arc<Version>> {
        self.versions.get(&date)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.versions.keys().copied()
    }
}

pub struct FeatureStore {
    dir: PathBuf,
    state: ArcSwap<StoreState>,
    publish_lock: Mutex<()>,
}

fn snapshot_name(date: NaiveDate) -> String {
    format!("v-{date}.snap")
}

fn write_atomically(dir: &Path, name: &str, write: impl FnOnce(&mut BufWriter<&File>) -> Result<()>) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    let file = File::create(&tmp)?;
    {
        let mut w = BufWriter::new(&file);
        write(&mut w)?;
        w.flush()?;
    }
    file.sync_all()?;
    fs::rename(&tmp, dir.join(name))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

impl FeatureStore {
    /// Opens (creating if needed) the store rooted at `dir` and loads every
    /// version the manifest lists.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut versions = BTreeMap::new();
        let manifest = dir.join(MANIFEST);
        if manifest.exists() {
            let corrupt = |m: String| Error::corrupt("manifest", m);
            let text = fs::read_to_string(&manifest)?;
            let mut latest = None;
            for (i, line) in text.lines().enumerate() {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let date = |s: &str| {
                    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| corrupt(format!("line {}: bad date", i + 1)))
                };
                match parts[..] {
                    ["version", d, file] => {
                        let d = date(d)?;
                        let v = Version::read_from(BufReader::new(File::open(dir.join(file))?))?;
                        if v.date != d {
                            return Err(corrupt(format!("{file} holds {} not {d}", v.date)));
                        }
                        versions.insert(d, Arc::new(v));
                    }
                    ["latest", d] => latest = Some(date(d)?),
                    _ => return Err(corrupt(format!("line {}: unrecognised", i + 1))),
                }
            }
            if latest != versions.keys().next_back().copied() {
                return Err(corrupt("latest pointer disagrees with listed versions".into()));
            }
        }
        Ok(FeatureStore {
            dir,
            state: ArcSwap::from_pointee(StoreState { versions }),
            publish_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Current consistent view; holding it pins every version it contains.
    pub fn snapshot(&self) -> Arc<StoreState> {
        self.state.load_full()
    }

    /// Validates, persists and exposes a new version. On error the store is unchanged.
    pub fn publish(&self, date: NaiveDate, dim: usize, rows: &[FeatureRow]) -> Result<Arc<Version>> {
        let _guard = self.publish_lock.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.state.load_full();
        if current.versions.contains_key(&date) {
            return Err(Error::DuplicateVersion(date));
        }
        let version = Arc::new(Version::from_rows(date, dim, rows)?);
        let name = snapshot_name(date);
        write_atomically(&self.dir, &name, |w| version.write_to(w))?;

        let mut versions = current.versions.clone();
        versions.insert(date, Arc::clone(&version));
        let latest = *versions.keys().next_back().expect("non-empty");
        write_atomically(&self.dir, MANIFEST, |w| {
            for d in versions.keys() {
                writeln!(w, "version {d} {}", snapshot_name(*d))?;
            }
            writeln!(w, "latest {latest}")?;
            Ok(())
        })?;
        self.state.store(Arc::new(StoreState { versions }));
        Ok(version)
    }

    /// Latest version's row for `user`, or `None` if it has none.
    pub fn get_latest(&self, user: &str) -> Result<Option<OwnedRow>> {
        let state = self.state.load();
        let v = state.latest().ok_or(Error::NoVersions)?;
        Ok(v.row(user).map(OwnedRow::from))
    }

    pub fn get_at(&self, date: NaiveDate, user: &str) -> Result<Option<OwnedRow>> {
        let state = self.state.load();
        let v = state.at(date).ok_or(Error::VersionNotFound(date))?;
        Ok(v.row(user).map(OwnedRow::from))
    }

    pub fn latest_date(&self) -> Option<NaiveDate> {
        self.state.load().latest().map(|v| v.date)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwnedRow {
    pub date: NaiveDate,
    pub basic: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl From<RowRef<'_>> for OwnedRow {
    fn from(r: RowRef<'_>) -> Self {
        OwnedRow {
            date: r.date,
            basic: r.basic.to_vec(),
            embedding: r.embedding.to_vec(),
        }
    }
}
