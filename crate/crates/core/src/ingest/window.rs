use std::collections::HashMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{LabelRecord, TransactionRecord};
use crate::error::{Error, Result};

const SECONDS_PER_DAY: i64 = 86_400;

/// UTC calendar day of an epoch timestamp.
pub fn day_of(timestamp: i64) -> NaiveDate {
    let days = timestamp.div_euclid(SECONDS_PER_DAY);
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch") + chrono::Duration::days(days)
}

fn default_network_days() -> u32 {
    90
}

fn default_train_days() -> u32 {
    14
}

/// Three contiguous windows ending at `test_date`: network, train, test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub test_date: NaiveDate,
    #[serde(default = "default_network_days")]
    pub network_days: u32,
    #[serde(default = "default_train_days")]
    pub train_days: u32,
}

impl WindowSpec {
    pub fn new(test_date: NaiveDate) -> Self {
        WindowSpec {
            test_date,
            network_days: default_network_days(),
            train_days: default_train_days(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.network_days == 0 || self.train_days == 0 {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        if self.test_date.checked_sub_days(Days::new(self.span_days())).is_none() {
            return Err(Error::Config("test_date too early for the window lengths".into()));
        }
        Ok(())
    }

    fn span_days(&self) -> u64 {
        u64::from(self.network_days) + u64::from(self.train_days)
    }

    /// Inclusive date range of the network-construction window.
    pub fn network_range(&self) -> (NaiveDate, NaiveDate) {
        let start = self.test_date - Days::new(self.span_days());
        let end = self.test_date - Days::new(u64::from(self.train_days) + 1);
        (start, end)
    }

    /// Inclusive date range of the classifier-training window.
    pub fn train_range(&self) -> (NaiveDate, NaiveDate) {
        (
            self.test_date - Days::new(u64::from(self.train_days)),
            self.test_date - Days::new(1),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LabeledRecord<'a> {
    pub record: &'a TransactionRecord,
    pub is_fraud: bool,
}

/// Output of [`slice_windows`]; borrows the input records.
#[derive(Debug, Default)]
pub struct Windows<'a> {
    pub network: Vec<&'a TransactionRecord>,
    pub train: Vec<LabeledRecord<'a>>,
    pub test: Vec<LabeledRecord<'a>>,
    pub discarded: usize,
}

enum Slot {
    Network,
    Train,
    Test,
    Outside,
}

fn slot(spec: &WindowSpec, day: NaiveDate) -> Slot {
    let (ns, ne) = spec.network_range();
    let (ts, te) = spec.train_range();
    if day == spec.test_date {
        Slot::Test
    } else if ts <= day && day <= te {
        Slot::Train
    } else if ns <= day && day <= ne {
        Slot::Network
    } else {
        Slot::Outside
    }
}

/// Partitions records into network/train/test windows and joins labels.
///
/// Train and test records without a label are treated as not-fraud. A
/// transaction with several labels is fraud if any label says so.
pub fn slice_windows<'a>(
    records: &'a [TransactionRecord],
    labels: &[LabelRecord],
    spec: &WindowSpec,
) -> Result<Windows<'a>> {
    spec.validate()?;
    let mut fraud: HashMap<&str, bool> = HashMap::with_capacity(labels.len());
    for l in labels {
        *fraud.entry(l.txn_id.as_str()).or_default() |= l.is_fraud;
    }
    let label_times: HashMap<&str, i64> = labels.iter().map(|l| (l.txn_id.as_str(), l.report_time)).collect();

    let mut out = Windows::default();
    for rec in records {
        if let Some(&reported) = label_times.get(rec.txn_id.as_str()) {
            if reported < rec.timestamp {
                return Err(Error::Config(format!(
                    "label for {} reported before the transaction",
                    rec.txn_id
                )));
            }
        }
        let is_fraud = fraud.get(rec.txn_id.as_str()).copied().unwrap_or(false);
        match slot(spec, day_of(rec.timestamp)) {
            Slot::Network => out.network.push(rec),
            Slot::Train => out.train.push(LabeledRecord { record: rec, is_fraud }),
            Slot::Test => out.test.push(LabeledRecord { record: rec, is_fraud }),
            Slot::Outside => out.discarded += 1,
        }
    }
    if out.train.is_empty() {
        return Err(Error::Empty("train window"));
    }
    if out.test.is_empty() {
        return Err(Error::Empty("test window"));
    }
    Ok(out)
}
