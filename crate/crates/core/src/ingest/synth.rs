//! Synthetic transfer logs with graph-planted fraud.
//!
//! Users live in communities and mostly transfer within them. A fixed
//! number of fraud "rings" each hunt inside one vulnerable community; a
//! ring operates through one account at a time and, after every successful
//! fraud, keeps the account with probability `repeat_fraud_prob` or burns it
//! for a fresh one. Victims share their ring's account as a 2-hop
//! neighbour, and victims' profile features follow the population
//! distribution, so only the network reveals who is exposed. Fraudulent
//! transfers additionally carry a weak signature in five of the 52 basic
//! features: a mean shift on three and a correlated pair on two.

use chrono::{NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{BasicFeatures, LabelRecord, TransactionRecord, BASIC_FEATURES};
use crate::error::{Error, Result};

/// Columns holding per-user categorical profile codes.
const PROFILE_COLUMNS: usize = 4;
/// Columns shifted upward on fraudulent transfers.
pub const SHIFTED_COLUMNS: [usize; 3] = [4, 5, 6];
/// Column pair that is strongly correlated on fraudulent transfers.
pub const PAIRED_COLUMNS: [usize; 2] = [7, 8];

fn d_fraudsters() -> f64 {
    0.01
}
fn d_repeat() -> f64 {
    0.7
}
fn d_base_rate() -> f64 {
    0.01
}
fn d_noise() -> f64 {
    1.0
}
fn d_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 12, 27).expect("valid date")
}
fn d_community() -> usize {
    20
}
fn d_vulnerable() -> f64 {
    0.1
}
fn d_intra() -> f64 {
    0.8
}
fn d_target() -> f64 {
    0.9
}
fn d_shift() -> f64 {
    1.0
}
fn d_self() -> f64 {
    0.002
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_days: usize,
    pub txns_per_day: usize,
    /// Concurrent fraud rings as a fraction of `n_users`.
    #[serde(default = "d_fraudsters")]
    pub fraudster_fraction: f64,
    #[serde(default = "d_repeat")]
    pub repeat_fraud_prob: f64,
    #[serde(default = "d_base_rate")]
    pub fraud_base_rate: f64,
    #[serde(default = "d_noise")]
    pub feature_noise: f64,
    pub seed: u64,
    /// First calendar day of the generated log.
    #[serde(default = "d_start")]
    pub start_date: NaiveDate,
    #[serde(default = "d_community")]
    pub community_size: usize,
    /// Fraction of communities that fraud rings target.
    #[serde(default = "d_vulnerable")]
    pub vulnerable_fraction: f64,
    /// Probability that a normal transfer stays inside the transferor's community.
    #[serde(default = "d_intra")]
    pub intra_community_prob: f64,
    /// Probability that a ring's victim comes from its target community.
    #[serde(default = "d_target")]
    pub target_prob: f64,
    /// Mean shift (in units of `feature_noise`) of the fraud-signature columns.
    #[serde(default = "d_shift")]
    pub signal_shift: f64,
    #[serde(default = "d_self")]
    pub self_transfer_prob: f64,
}

impl SyntheticConfig {
    pub fn new(n_users: usize, n_days: usize, txns_per_day: usize, seed: u64) -> Self {
        SyntheticConfig {
            n_users,
            n_days,
            txns_per_day,
            fraudster_fraction: d_fraudsters(),
            repeat_fraud_prob: d_repeat(),
            fraud_base_rate: d_base_rate(),
            feature_noise: d_noise(),
            seed,
            start_date: d_start(),
            community_size: d_community(),
            vulnerable_fraction: d_vulnerable(),
            intra_community_prob: d_intra(),
            target_prob: d_target(),
            signal_shift: d_shift(),
            self_transfer_prob: d_self(),
        }
    }

    /// Last generated day.
    pub fn end_date(&self) -> NaiveDate {
        self.start_date + chrono::Days::new(self.n_days.saturating_sub(1) as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let ratios = [
            ("fraudster_fraction", self.fraudster_fraction),
            ("repeat_fraud_prob", self.repeat_fraud_prob),
            ("fraud_base_rate", self.fraud_base_rate),
            ("vulnerable_fraction", self.vulnerable_fraction),
            ("intra_community_prob", self.intra_community_prob),
            ("target_prob", self.target_prob),
            ("self_transfer_prob", self.self_transfer_prob),
        ];
        for (name, v) in ratios {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.n_users < 2 || self.n_days == 0 || self.txns_per_day == 0 || self.community_size < 2 {
            return Err(Error::Config(
                "n_users >= 2, community_size >= 2 and positive day/transaction counts required".into(),
            ));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0 && self.signal_shift.is_finite()) {
            return Err(Error::Config("feature_noise and signal_shift must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub records: Vec<TransactionRecord>,
    pub labels: Vec<LabelRecord>,
}

struct Population {
    ids: Vec<String>,
    community: Vec<usize>,
    members: Vec<Vec<usize>>,
    profile: Vec<[f64; PROFILE_COLUMNS]>,
}

impl Population {
    fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.n_users;
        let ids = (0..n).map(|i| format!("u{i:06}")).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_comm = n.div_ceil(cfg.community_size);
        let mut community = vec![0; n];
        let mut members = vec![Vec::new(); n_comm];
        for (pos, &u) in order.iter().enumerate() {
            let c = pos / cfg.community_size;
            community[u] = c;
            members[c].push(u);
        }
        for m in &mut members {
            m.sort_unstable();
        }
        // Age band, gender, city, account tier: independent of community.
        let profile = (0..n)
            .map(|_| {
                [
                    f64::from(rng.gen_range(0..7u8)),
                    f64::from(rng.gen_range(0..2u8)),
                    f64::from(rng.gen_range(0..10u8)),
                    f64::from(rng.gen_range(0..4u8)),
                ]
            })
            .collect();
        Population {
            ids,
            community,
            members,
            profile,
        }
    }
}

struct Ring {
    target: Option<usize>,
    account: Option<String>,
}

struct Event {
    transferor: String,
    transferee: String,
    amount: f64,
    features: BasicFeatures,
    fraud: bool,
}

fn features(
    profile: &[f64; PROFILE_COLUMNS],
    fraud: bool,
    cfg: &SyntheticConfig,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> BasicFeatures {
    let mut f = [0.0; BASIC_FEATURES];
    f[..PROFILE_COLUMNS].copy_from_slice(profile);
    for v in &mut f[PROFILE_COLUMNS..] {
        *v = noise.sample(rng);
    }
    if fraud {
        let shift = cfg.signal_shift * cfg.feature_noise;
        for &c in &SHIFTED_COLUMNS {
            f[c] += shift;
        }
        // Same marginal spread as the noise, but the pair moves together.
        let [a, b] = PAIRED_COLUMNS;
        let common = noise.sample(rng);
        f[a] = common + 0.15 * noise.sample(rng);
        f[b] = common + 0.15 * noise.sample(rng);
    }
    f
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates a labelled transfer log; a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pop = Population::new(cfg, &mut rng);
    let n_comm = pop.members.len();

    let mut comm_order: Vec<usize> = (0..n_comm).collect();
    comm_order.shuffle(&mut rng);
    let n_vulnerable = (cfg.vulnerable_fraction * n_comm as f64).round() as usize;
    let vulnerable = &comm_order[..n_vulnerable.min(n_comm)];

    let n_rings = (cfg.fraudster_fraction * cfg.n_users as f64).round() as usize;
    let mut rings: Vec<Ring> = (0..n_rings)
        .map(|_| Ring {
            target: vulnerable.choose(&mut rng).copied(),
            account: None,
        })
        .collect();
    let mut next_account = 0usize;

    let noise = Normal::new(0.0, cfg.feature_noise).map_err(|e| Error::Config(e.to_string()))?;
    let normal_amount = LogNormal::new(4.0, 1.0).expect("valid parameters");
    let fraud_amount = LogNormal::new(6.0, 0.8).expect("valid parameters");
    let fraud_count =
        Binomial::new(cfg.txns_per_day as u64, cfg.fraud_base_rate).map_err(|e| Error::Config(e.to_string()))?;

    let mut records = Vec::with_capacity(cfg.n_days * cfg.txns_per_day);
    let mut labels = Vec::new();
    let mut events = Vec::with_capacity(cfg.txns_per_day);
    let mut stamps = Vec::with_capacity(cfg.txns_per_day);

    for day in 0..cfg.n_days {
        let date = cfg.start_date + chrono::Days::new(day as u64);
        let day_start = date.and_time(NaiveTime::MIN).and_utc().timestamp();
        let n_fraud = if rings.is_empty() {
            0
        } else {
            fraud_count.sample(&mut rng) as usize
        };

        events.clear();
        for _ in n_fraud..cfg.txns_per_day {
            let u = rng.gen_range(0..cfg.n_users);
            let v = if rng.gen_bool(cfg.self_transfer_prob) {
                u
            } else if rng.gen_bool(cfg.intra_community_prob) {
                let m = &pop.members[pop.community[u]];
                loop {
                    let v = m[rng.gen_range(0..m.len())];
                    if v != u || m.len() == 1 {
                        break v;
                    }
                }
            } else {
                loop {
                    let v = rng.gen_range(0..cfg.n_users);
                    if v != u {
                        break v;
                    }
                }
            };
            events.push(Event {
                transferor: pop.ids[u].clone(),
                transferee: pop.ids[v].clone(),
                amount: cents(normal_amount.sample(&mut rng)),
                features: features(&pop.profile[u], false, cfg, &noise, &mut rng),
                fraud: false,
            });
        }
        for _ in 0..n_fraud {
            let slot = rng.gen_range(0..rings.len());
            let ring = &mut rings[slot];
            let account = ring
                .account
                .get_or_insert_with(|| {
                    next_account += 1;
                    format!("x{:06}", next_account - 1)
                })
                .clone();
            let victim = match ring.target {
                Some(c) if rng.gen_bool(cfg.target_prob) => pop.members[c][rng.gen_range(0..pop.members[c].len())],
                _ => rng.gen_range(0..cfg.n_users),
            };
            if !rng.gen_bool(cfg.repeat_fraud_prob) {
                ring.account = None;
            }
            events.push(Event {
                transferor: pop.ids[victim].clone(),
                transferee: account,
                amount: cents(fraud_amount.sample(&mut rng)),
                features: features(&pop.profile[victim], true, cfg, &noise, &mut rng),
                fraud: true,
            });
        }

        stamps.clear();
        stamps.extend((0..events.len()).map(|_| day_start + rng.gen_range(0..86_400i64)));
        let mut order: Vec<usize> = (0..events.len()).collect();
        order.sort_by_key(|&i| (stamps[i], i));
        for i in order {
            let ev = &mut events[i];
            let txn_id = format!("t{:09}", records.len());
            let timestamp = stamps[i];
            if ev.fraud {
                labels.push(LabelRecord {
                    txn_id: txn_id.clone(),
                    is_fraud: true,
                    report_time: timestamp + rng.gen_range(600..7 * 86_400),
                });
            } else if rng.gen_bool(0.001) {
                labels.push(LabelRecord {
                    txn_id: txn_id.clone(),
                    is_fraud: false,
                    report_time: timestamp + rng.gen_range(600..7 * 86_400),
                });
            }
            records.push(TransactionRecord {
                txn_id,
                timestamp,
                transferor: std::mem::take(&mut ev.transferor),
                transferee: std::mem::take(&mut ev.transferee),
                amount: ev.amount,
                basic_features: ev.features,
            });
        }
    }
    Ok(SyntheticData { records, labels })
}
