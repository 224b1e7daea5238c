#![allow(dead_code)]

use titant::graph::{build_network, TransactionNetwork};
use titant::ingest::{TransactionRecord, BASIC_FEATURES};

pub fn record(id: &str, from: &str, to: &str, timestamp: i64) -> TransactionRecord {
    TransactionRecord {
        txn_id: id.to_string(),
        timestamp,
        transferor: from.to_string(),
        transferee: to.to_string(),
        amount: 1.0,
        basic_features: [0.0; BASIC_FEATURES],
    }
}

/// Two disjoint 10-cliques: users `a0..a9` and `b0..b9`, node ids 0..10 and 10..20.
pub fn two_cliques() -> TransactionNetwork {
    let mut recs = Vec::new();
    for g in ["a", "b"] {
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    recs.push(record(
                        &format!("{g}{i}-{j}"),
                        &format!("{g}{i}"),
                        &format!("{g}{j}"),
                        0,
                    ));
                }
            }
        }
    }
    build_network(&recs).unwrap()
}

/// Node ids of the two cliques in [`two_cliques`].
pub fn clique_ids(net: &TransactionNetwork) -> (Vec<usize>, Vec<usize>) {
    let ids = |g: &str| -> Vec<usize> {
        (0..10)
            .map(|i| net.nodes().id_of(&format!("{g}{i}")).unwrap())
            .collect()
    };
    (ids("a"), ids("b"))
}

/// Every value of a row encodes its version and position, so a torn read shows up
/// as a value that disagrees with the row's own date.
pub fn stamped_row(user: usize, day: i64, dim: usize) -> titant::store::FeatureRow {
    let v = |c: usize| (day * 1_000_000 + user as i64 * 100 + c as i64) as f64;
    titant::store::FeatureRow {
        user: format!("u{user}"),
        basic: (0..BASIC_FEATURES).map(v).collect(),
        embedding: (BASIC_FEATURES..BASIC_FEATURES + dim).map(v).collect(),
    }
}

pub struct StressReport {
    pub publishes: usize,
    pub reads: usize,
    pub mixed: usize,
}

/// Four readers poll the latest rows while one thread keeps publishing new
/// versions, for `duration`. Counts reads whose values mix versions.
pub fn store_stress(dir: &std::path::Path, duration: std::time::Duration) -> StressReport {
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::Arc;
    use titant::store::FeatureStore;

    const USERS: usize = 64;
    const DIM: usize = 8;
    let epoch = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let store = Arc::new(FeatureStore::open(dir).unwrap());
    let rows = |day: i64| -> Vec<_> { (0..USERS).map(|u| stamped_row(u, day, DIM)).collect() };
    store.publish(epoch, DIM, &rows(0)).unwrap();

    let stop = Arc::new(AtomicBool::new(false));
    let (reads, mixed) = (Arc::new(AtomicUsize::new(0)), Arc::new(AtomicUsize::new(0)));
    let readers: Vec<_> = (0..4)
        .map(|r| {
            let (store, stop, reads, mixed) = (store.clone(), stop.clone(), reads.clone(), mixed.clone());
            std::thread::spawn(move || {
                let mut last = epoch;
                let mut u = r;
                while !stop.load(Ordering::Relaxed) {
                    u = (u + 7) % USERS;
                    let row = store.get_latest(&format!("u{u}")).unwrap().unwrap();
                    let day = (row.date - epoch).num_days();
                    let want = stamped_row(u, day, DIM);
                    if row.basic != want.basic || row.embedding != want.embedding || row.date < last {
                        mixed.fetch_add(1, Ordering::Relaxed);
                    }
                    last = row.date;
                    reads.fetch_add(1, Ordering::Relaxed);
                }
            })
        })
        .collect();

    let start = std::time::Instant::now();
    let mut day = 0;
    while start.elapsed() < duration {
        day += 1;
        store
            .publish(epoch + chrono::Duration::days(day), DIM, &rows(day))
            .unwrap();
    }
    stop.store(true, Ordering::Relaxed);
    for r in readers {
        r.join().unwrap();
    }

    let reopened = FeatureStore::open(dir).unwrap();
    assert_eq!(reopened.latest_date(), Some(epoch + chrono::Duration::days(day)));
    for u in 0..USERS {
        let got = reopened.get_latest(&format!("u{u}")).unwrap().unwrap();
        let want = stamped_row(u, day, DIM);
        assert_eq!((got.basic, got.embedding), (want.basic, want.embedding));
    }
    StressReport {
        publishes: day as usize,
        reads: reads.load(Ordering::Relaxed),
        mixed: mixed.load(Ordering::Relaxed),
    }
}

pub const SERVE_DIM: usize = 8;

pub fn serve_date(day: u32) -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2017, 4, day).unwrap()
}

/// Publishes `users` random rows (`u0`, `u1`, ...) into a store at `dir/store`.
pub fn serving_store(dir: &std::path::Path, users: usize, seed: u64) -> std::sync::Arc<titant::store::FeatureStore> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<_> = (0..users)
        .map(|u| titant::store::FeatureRow {
            user: format!("u{u}"),
            basic: (0..BASIC_FEATURES).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            embedding: (0..SERVE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let store = titant::store::FeatureStore::open(dir.join("store")).unwrap();
    store.publish(serve_date(10), SERVE_DIM, &rows).unwrap();
    std::sync::Arc::new(store)
}

/// A small GBDT over `52 + SERVE_DIM` columns whose output depends on both
/// families; written to `path` with version `date`.
pub fn serving_model(path: &std::path::Path, date: chrono::NaiveDate, seed: u64) -> titant::detect::Model {
    use rand::{Rng, SeedableRng};
    use titant::detect::{DetectorConfig, DetectorKind, FeatureMatrix, Model};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut m = FeatureMatrix::new(BASIC_FEATURES + SERVE_DIM);
    for _ in 0..1500 {
        let mut row: Vec<f64> = (0..BASIC_FEATURES).map(|_| rng.gen_range(-2.0..2.0)).collect();
        row.extend((0..SERVE_DIM).map(|_| rng.gen_range(-1.0..1.0)));
        let y = row[3] + 2.0 * row[BASIC_FEATURES] > 1.5;
        m.push(&row, Some(y)).unwrap();
    }
    let cfg = DetectorConfig {
        gbdt_trees: 40,
        ..DetectorConfig::new(DetectorKind::Gbdt)
    };
    let model = Model::train(&m, &cfg, seed).unwrap().with_version(date);
    model.write(std::fs::File::create(path).unwrap()).unwrap();
    model
}

/// A random request line: mostly known users, some unknown, some with inline basic features.
pub fn random_request(rng: &mut impl rand::Rng, i: usize, users: usize) -> titant::serve::ScoreRequest {
    let transferor = if rng.gen_bool(0.9) {
        format!("u{}", rng.gen_range(0..users))
    } else {
        format!("ghost{i}")
    };
    let basic_features = rng
        .gen_bool(0.1)
        .then(|| (0..BASIC_FEATURES).map(|_| rng.gen_range(-2.0..2.0)).collect());
    titant::serve::ScoreRequest {
        txn_id: format!("t{i}"),
        transferor,
        transferee: format!("u{}", rng.gen_range(0..users)),
        amount: rng.gen_range(1.0..1000.0),
        timestamp: 1_491_782_400 + i as i64,
        basic_features,
    }
}

/// The feature vector scoring should use, built straight from the store.
pub fn expected_vector(store: &titant::store::FeatureStore, req: &titant::serve::ScoreRequest) -> (Vec<f64>, bool) {
    let row = store.get_latest(&req.transferor).unwrap();
    let mut x = match (&req.basic_features, &row) {
        (Some(b), _) => b.clone(),
        (None, Some(r)) => r.basic.clone(),
        (None, None) => vec![0.0; BASIC_FEATURES],
    };
    match &row {
        Some(r) => x.extend_from_slice(&r.embedding),
        None => x.extend(std::iter::repeat_n(0.0, SERVE_DIM)),
    }
    (x, row.is_none())
}

/// Checks `n` random requests against offline prediction; returns the worst gap.
pub fn parity_gap(
    scorer: &titant::serve::Scorer,
    store: &titant::store::FeatureStore,
    model: &titant::detect::Model,
    users: usize,
    n: usize,
    seed: u64,
) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..n {
        let req = random_request(&mut rng, i, users);
        let resp = scorer.score(&req);
        assert_eq!(resp.error_code, None, "{req:?}");
        let (x, cold) = expected_vector(store, &req);
        assert_eq!(resp.cold_start, cold);
        worst = worst.max((resp.fraud_probability - model.predict(&x).unwrap()).abs());
    }
    worst
}

/// Sends `lines` over one connection, one at a time, returning each reply
/// line and its round-trip time.
pub fn round_trips(addr: std::net::SocketAddr, lines: &[String]) -> Vec<(String, std::time::Duration)> {
    use std::io::{BufRead, BufReader, Write};
    let stream = std::net::TcpStream::connect(addr).unwrap();
    stream.set_nodelay(true).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    lines
        .iter()
        .map(|l| {
            let t = std::time::Instant::now();
            writer.write_all(l.as_bytes()).unwrap();
            writer.write_all(b"\n").unwrap();
            let mut reply = String::new();
            reader.read_line(&mut reply).unwrap();
            (reply, t.elapsed())
        })
        .collect()
}

/// A small synthetic dataset with a 10-day network window, 3 training days and one test day.
pub fn small_dataset(seed: u64) -> (titant::ingest::SyntheticData, titant::ingest::WindowSpec) {
    let cfg = titant::ingest::SyntheticConfig::new(150, 14, 300, seed);
    let data = titant::ingest::generate_synthetic(&cfg).unwrap();
    let spec = titant::ingest::WindowSpec {
        test_date: cfg.end_date(),
        network_days: 10,
        train_days: 3,
    };
    (data, spec)
}

/// Runs the pipeline publishing into `dir/store` and returns every artifact's bytes by name.
pub fn pipeline_artifacts(
    data: &titant::ingest::SyntheticData,
    cfg: &titant::pipeline::PipelineConfig,
    dir: &std::path::Path,
) -> Vec<(String, Vec<u8>)> {
    use titant::pipeline::{run_t_plus_1, write_labeled_features};
    let store = titant::store::FeatureStore::open(dir.join("store")).unwrap();
    let run = run_t_plus_1(&data.records, &data.labels, cfg, Some(&store)).unwrap();
    let mut out = vec![("model".to_string(), run.model.to_text().into_bytes())];
    if let Some(e) = &run.embeddings {
        let mut b = Vec::new();
        e.write_text(&mut b).unwrap();
        out.push(("embeddings".into(), b));
    }
    let mut b = Vec::new();
    write_labeled_features(&run.test, &mut b).unwrap();
    out.push(("test_features".into(), b));
    out.push(("report".into(), format!("{:?}", run.report).into_bytes()));
    let mut files: Vec<_> = std::fs::read_dir(dir.join("store"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    for f in files {
        out.push((
            f.file_name().unwrap().to_string_lossy().into_owned(),
            std::fs::read(&f).unwrap(),
        ));
    }
    out
}

const N: usize = 8;

fn patterns() -> impl Iterator<Item = [bool; N]> {
    (0u32..1 << N).map(|bits| std::array::from_fn(|i| bits >> i & 1 == 1))
}

fn scores_from(bits: u32) -> [f64; N] {
    // Distinct scores in a bit-dependent order, plus ties when bit 7 is set.
    std::array::from_fn(|i| {
        let s = ((i as u32 * 5 + bits) % N as u32) as f64 / N as f64;
        if bits & 0x80 != 0 && i % 2 == 1 {
            ((i - 1) as u32 * 5 + bits) as f64 % N as f64 / N as f64
        } else {
            s
        }
    })
}

fn naive_f1(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fneg = 0.0;
    for i in 0..scores.len() {
        let pred = scores[i] >= t;
        if pred && labels[i] {
            tp += 1.0;
        } else if pred {
            fp += 1.0;
        } else if labels[i] {
            fneg += 1.0;
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / (tp + fp);
    let r = tp / (tp + fneg);
    2.0 * p * r / (p + r)
}

fn naive_recall_top(scores: &[f64], labels: &[bool], frac: f64) -> f64 {
    let total = labels.iter().filter(|&&l| l).count();
    if total == 0 {
        return 0.0;
    }
    let k = (frac * scores.len() as f64).ceil() as usize;
    // Selection by repeated argmax, first index wins ties.
    let mut taken = vec![false; scores.len()];
    let mut hits = 0;
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        hits += usize::from(labels[b]);
    }
    hits as f64 / total as f64
}

/// Compares both metrics with brute force over every length-8 label pattern
/// and a family of score vectors; returns the number of disagreements.
pub fn metric_mismatches() -> usize {
    use titant::pipeline::{f1_score, recall_at_top_frac};
    let mut bad = 0;
    for labels in patterns() {
        for bits in 0u32..1 << N {
            let scores = scores_from(bits);
            for t in [0.0, 0.25, 0.5, 0.625, 1.0] {
                bad += usize::from(f1_score(&scores, &labels, t).unwrap().f1 != naive_f1(&scores, &labels, t));
            }
            for frac in [0.125, 0.25, 0.3, 0.5, 1.0] {
                let got = recall_at_top_frac(&scores, &labels, frac).unwrap();
                bad += usize::from(got != naive_recall_top(&scores, &labels, frac));
            }
        }
    }
    bad
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[k] += h;
            minus[k] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Largest relative error between the analytic pair-loss gradient and central
/// differences (step 1e-5) over `cases` random dim-4 cases with two negatives.
pub fn max_gradient_error(cases: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    use titant::embed::{pair_gradient, pair_loss};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let mut v = || (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (c, u, n1, n2) = (v(), v(), v(), v());
        let g = pair_gradient(&c, &u, &[&n1, &n2]);
        let fd_c = central_difference(|x| pair_loss(x, &u, &[&n1, &n2]), &c, h);
        let fd_u = central_difference(|x| pair_loss(&c, x, &[&n1, &n2]), &u, h);
        let fd_n1 = central_difference(|x| pair_loss(&c, &u, &[x, &n2]), &n1, h);
        let fd_n2 = central_difference(|x| pair_loss(&c, &u, &[&n1, x]), &n2, h);
        worst = worst
            .max(rel_err(&g.center, &fd_c))
            .max(rel_err(&g.context, &fd_u))
            .max(rel_err(&g.negatives[0], &fd_n1))
            .max(rel_err(&g.negatives[1], &fd_n2));
    }
    worst
}

/// Walks over [`two_cliques`] plus the ids of each clique.
pub fn clique_corpus(seed: u64) -> (titant::embed::WalkCorpus, Vec<usize>, Vec<usize>) {
    let net = two_cliques();
    let (a, b) = clique_ids(&net);
    let walks = titant::embed::generate_walks(
        &net,
        &titant::embed::WalkConfig {
            walk_length: 20,
            samples_per_node: 20,
            seed,
        },
    )
    .unwrap();
    (walks, a, b)
}

pub fn clique_skipgram(seed: u64) -> titant::embed::SkipGramConfig {
    titant::embed::SkipGramConfig {
        dim: 16,
        seed,
        ..titant::embed::SkipGramConfig::default()
    }
}
