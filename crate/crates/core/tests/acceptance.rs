//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fail.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use fsd_core::channels::{ChannelLimits, Event, FaultConfig, Meter, QueueService};
use fsd_core::cost::{predict, CostReport, PricingConfig};
use fsd_core::partition::{
    build_packs, cut_metrics, derive_comm_maps, partition_model, partition_phase, PartitionPack,
    PhaseHypergraph, Scheme,
};
use fsd_core::runtime::{run_inference, ChannelKind, RunConfig, RunReport};
use fsd_core::sparse::{serial_inference, ModelDef, SparseMatrix};
use fsd_core::workbench::{generate_inputs, generate_model, nonzero_row_indices, GenSpec};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn workload(n: u32, layers: u32, seed: u64) -> (ModelDef, SparseMatrix) {
    let spec = GenSpec {
        n,
        layers,
        nnz_per_row: 8,
        batch: 16,
        input_density: 0.3,
        seed,
    };
    (
        generate_model(&spec).unwrap(),
        generate_inputs(&spec).unwrap(),
    )
}

fn packs_for(model: &ModelDef, p: u32, scheme: Scheme, seed: u64) -> Vec<PartitionPack> {
    let plan = partition_model(model, p, 0.1, scheme, seed).unwrap();
    let maps = derive_comm_maps(&plan, model).unwrap();
    build_packs(model, &plan, &maps).unwrap()
}

struct MatrixRun {
    p: u32,
    channel: ChannelKind,
    scheme: Scheme,
    wall: Duration,
    report: RunReport,
    cost: CostReport,
}

struct Fixture {
    model: ModelDef,
    x0: SparseMatrix,
    want: SparseMatrix,
    runs: Vec<MatrixRun>,
    elapsed: Duration,
}

fn run_matrix() -> Fixture {
    let (model, x0) = workload(256, 8, 5);
    let want = serial_inference(&model, &x0).unwrap();
    let start = Instant::now();
    let mut runs = Vec::new();
    for channel in [ChannelKind::Queue, ChannelKind::Object] {
        for p in [2u32, 4, 8] {
            for scheme in [Scheme::Hgp, Scheme::Random] {
                let t = Instant::now();
                let config = RunConfig::new(p, channel);
                let report = run_inference(&config, packs_for(&model, p, scheme, 5), &x0).unwrap();
                let cost = predict(&config, &report).unwrap();
                runs.push(MatrixRun {
                    p,
                    channel,
                    scheme,
                    wall: t.elapsed(),
                    report,
                    cost,
                });
            }
        }
    }
    Fixture {
        model,
        x0,
        want,
        runs,
        elapsed: start.elapsed(),
    }
}

fn c1_oracle(fx: &Fixture) -> Outcome {
    let want_rows = nonzero_row_indices(&fx.want);
    for r in &fx.runs {
        let tag = format!("{} P={} {}", r.channel, r.p, r.scheme);
        check(
            r.report.output == fx.want,
            format!("{tag}: output differs from serial"),
        )?;
        check(
            nonzero_row_indices(&r.report.output) == want_rows,
            format!("{tag}: nonzero rows differ"),
        )?;
    }
    check(
        fx.elapsed < Duration::from_secs(60),
        format!("matrix took {:?}", fx.elapsed),
    )?;
    let slowest = fx.runs.iter().map(|r| r.wall).max().unwrap();
    Ok(format!(
        "{} runs bit-identical, {} nonzero rows, {:.2?} total, slowest {:.2?}",
        fx.runs.len(),
        want_rows.len(),
        fx.elapsed,
        slowest
    ))
}

fn c2_billing() -> Outcome {
    let ceil_div = |b: usize| b.div_ceil(65536) as u64;
    let limits = ChannelLimits::default();
    let meter = Arc::new(Meter::new());
    let q = QueueService::new(1, limits.clone(), Arc::clone(&meter)).unwrap();
    let mut expect = 0u64;
    for (bytes, units) in [(262_144usize, 4u64), (1, 1)] {
        q.publish_routed(0, &[(0, vec![0u8; bytes])]).unwrap();
        expect += units;
        let s = meter.snapshot().s;
        check(
            s == expect,
            format!("{bytes}-byte publish: S = {s}, expected {expect}"),
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let bytes = rng.gen_range(1..=limits.max_message_bytes);
        let before = meter.snapshot().s;
        q.publish_routed(0, &[(0, vec![7u8; bytes])]).unwrap();
        let got = meter.snapshot().s - before;
        check(
            got == ceil_div(bytes),
            format!("{bytes} bytes billed {got}"),
        )?;
        check(
            limits.billed_units(bytes) == got,
            format!("billed_units({bytes}) disagrees with meter"),
        )?;
    }
    Ok("262144 B -> 4, 1 B -> 1, 1000 random sizes match ceil(bytes/65536)".into())
}

fn c3_reconcile(fx: &Fixture) -> Outcome {
    let mut worst = 0f64;
    for r in &fx.runs {
        let c = &r.cost;
        let gap = (c.predicted.total - c.metered_total).abs()
            / c.metered_total.abs().max(f64::MIN_POSITIVE);
        check(
            gap <= 1e-12,
            format!("{} P={} {}: gap {gap:e}", r.channel, r.p, r.scheme),
        )?;
        worst = worst.max(gap);
    }
    Ok(format!(
        "{} runs, worst relative gap {worst:.2e}",
        fx.runs.len()
    ))
}

fn c4_partition_gain() -> Outcome {
    let mut notes = Vec::new();
    for seed in [1u64, 2, 3] {
        let (model, _) = workload(512, 12, seed);
        let mut vol = [0u64; 2];
        for (i, scheme) in [Scheme::Hgp, Scheme::Random].into_iter().enumerate() {
            let plan = partition_model(&model, 8, 0.1, scheme, seed).unwrap();
            let maps = derive_comm_maps(&plan, &model).unwrap();
            let m = cut_metrics(&plan, &model, &maps);
            vol[i] = m.total_volume_rows;
            if scheme == Scheme::Hgp {
                check(
                    m.per_phase_imbalance.iter().all(|&x| x <= 1.10),
                    format!("seed {seed}: hgp imbalance {:.4}", m.load_imbalance),
                )?;
            }
        }
        let ratio = vol[0] as f64 / vol[1] as f64;
        check(
            ratio <= 0.5,
            format!(
                "seed {seed}: hgp {} vs random {} ({ratio:.3})",
                vol[0], vol[1]
            ),
        )?;
        notes.push(format!("{ratio:.3}"));
    }
    Ok(format!("hgp/random volume {}", notes.join(", ")))
}

/// Connectivity-minus-one cut computed straight from the matrix pattern.
fn pattern_cut(rows: &[Vec<u32>], n_cols: usize, fixed: &[u32], parts: &[u32]) -> u64 {
    let mut touched = vec![BTreeSet::new(); n_cols];
    for (j, &f) in fixed.iter().enumerate() {
        touched[j].insert(f);
    }
    for (i, cols) in rows.iter().enumerate() {
        for &c in cols {
            touched[c as usize].insert(parts[i]);
        }
    }
    touched.iter().map(|s| s.len() as u64 - 1).sum()
}

fn brute_force(rows: &[Vec<u32>], n_cols: usize, fixed: &[u32]) -> u64 {
    let n = rows.len();
    let w: Vec<u64> = rows.iter().map(|r| r.len() as u64).collect();
    let total: u64 = w.iter().sum();
    let cap = ((1.1 * total as f64 / 2.0).floor() as u64).max(total.div_ceil(2));
    let mut best = u64::MAX;
    for mask in 0u32..1 << n {
        let parts: Vec<u32> = (0..n).map(|v| (mask >> v) & 1).collect();
        let w1: u64 = (0..n).filter(|&v| parts[v] == 1).map(|v| w[v]).sum();
        if w1 <= cap && total - w1 <= cap {
            best = best.min(pattern_cut(rows, n_cols, fixed, &parts));
        }
    }
    best
}

fn to_matrix(rows: &[Vec<u32>], n_cols: u32) -> SparseMatrix {
    let t = rows
        .iter()
        .enumerate()
        .flat_map(|(i, cols)| cols.iter().map(move |&c| (i as u32, c, 1.0f32)))
        .collect();
    SparseMatrix::from_triplets(rows.len() as u32, n_cols, t).unwrap()
}

fn c5_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut general, mut separable, mut worst) = (0, 0, 1.0f64);
    for n in 2usize..=8 {
        for _ in 0..300 {
            let n_cols = rng.gen_range(1..=8usize);
            let rows: Vec<Vec<u32>> = (0..n)
                .map(|_| {
                    let mut c: Vec<u32> = (0..rng.gen_range(0..=3))
                        .map(|_| rng.gen_range(0..n_cols as u32))
                        .collect();
                    c.sort_unstable();
                    c.dedup();
                    c
                })
                .collect();
            let fixed: Vec<u32> = (0..n_cols).map(|_| rng.gen_range(0..2)).collect();
            let h = PhaseHypergraph::build(&to_matrix(&rows, n_cols as u32), &fixed).unwrap();
            let r = partition_phase(&h, 2, 0.1, rng.gen()).unwrap();
            let opt = brute_force(&rows, n_cols, &fixed);
            let cut = pattern_cut(&rows, n_cols, &fixed, &r.parts);
            check(
                cut == r.final_cut,
                format!("reported cut {} but pattern gives {cut}", r.final_cut),
            )?;
            check(
                cut as f64 <= 1.5 * opt as f64,
                format!("n={n}: cut {cut} > 1.5 x opt {opt}"),
            )?;
            if opt > 0 {
                worst = worst.max(cut as f64 / opt as f64);
            }
            general += 1;
        }
        // two diagonal blocks, each block's columns fixed to its own part
        if n % 2 == 0 {
            for _ in 0..100 {
                let half = n / 2;
                let per_block = rng.gen_range(1..=4usize);
                let n_cols = 2 * per_block;
                let deg = rng.gen_range(1..=per_block);
                let rows: Vec<Vec<u32>> = (0..n)
                    .map(|i| {
                        let b = i / half;
                        let off = (b * per_block) as u32;
                        let mut c: Vec<u32> = (0..deg)
                            .map(|_| off + rng.gen_range(0..per_block as u32))
                            .collect();
                        c.sort_unstable();
                        c.dedup();
                        while c.len() < deg {
                            let extra = off + rng.gen_range(0..per_block as u32);
                            if !c.contains(&extra) {
                                c.push(extra);
                            }
                        }
                        c.sort_unstable();
                        c
                    })
                    .collect();
                let fixed: Vec<u32> = (0..n_cols).map(|j| (j / per_block) as u32).collect();
                let h = PhaseHypergraph::build(&to_matrix(&rows, n_cols as u32), &fixed).unwrap();
                let r = partition_phase(&h, 2, 0.1, rng.gen()).unwrap();
                let opt = brute_force(&rows, n_cols, &fixed);
                check(opt == 0, format!("separable instance has optimum {opt}"))?;
                check(
                    r.final_cut == opt,
                    format!("separable n={n}: cut {} != {opt}", r.final_cut),
                )?;
                separable += 1;
            }
        }
    }
    Ok(format!(
        "{general} random instances (worst cut/opt {worst:.2}), {separable} separable at optimum"
    ))
}

fn c6_crossover(fx: &Fixture) -> Outcome {
    let mut ratios = Vec::new();
    for p in [2u32, 4, 8] {
        let mut samples = Vec::new();
        for rep in 0..3 {
            let mut totals = [0f64; 2];
            for (i, channel) in [ChannelKind::Object, ChannelKind::Queue]
                .into_iter()
                .enumerate()
            {
                totals[i] = if rep == 0 {
                    fx.runs
                        .iter()
                        .find(|r| r.p == p && r.channel == channel && r.scheme == Scheme::Hgp)
                        .unwrap()
                        .cost
                        .predicted
                        .total
                } else {
                    let config = RunConfig::new(p, channel);
                    let report =
                        run_inference(&config, packs_for(&fx.model, p, Scheme::Hgp, 5), &fx.x0)
                            .unwrap();
                    predict(&config, &report).unwrap().predicted.total
                };
            }
            samples.push(totals[0] / totals[1]);
        }
        samples.sort_by(f64::total_cmp);
        ratios.push(samples[1]);
    }
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    check(
        ratios.windows(2).all(|w| w[0] < w[1]),
        format!("object/queue ratio not increasing: {}", shown.join(", ")),
    )?;
    Ok(format!(
        "object/queue cost ratio over P=2,4,8: {}",
        shown.join(" < ")
    ))
}

fn c7_keys(fx: &Fixture) -> Outcome {
    let re = Regex::new(r"^bucket-(\d+)/(\d+)/(\d+)/(\d+)_(\d+)\.(dat|nul)$").unwrap();
    let (mut puts, mut nul, mut gets) = (0, 0, 0);
    for r in fx.runs.iter().filter(|r| r.channel == ChannelKind::Object) {
        let layers = fx.model.layers.len() as u32;
        let mut written = BTreeSet::new();
        for e in &r.report.meter.events {
            match e {
                Event::Put { bucket, key, bytes } => {
                    let full = format!("{bucket}/{key}");
                    let c = re.captures(&full).ok_or(format!("bad key {full}"))?;
                    let num = |i: usize| c[i].parse::<u32>().unwrap();
                    let (b, k, tgt, src, tgt2) = (num(1), num(2), num(3), num(4), num(5));
                    check(
                        tgt == tgt2 && b == tgt % 10,
                        format!("inconsistent key {full}"),
                    )?;
                    check(
                        k >= 1 && k <= layers + 2 && src < r.p && tgt < r.p && src != tgt,
                        format!("key out of range {full}"),
                    )?;
                    let is_nul = &c[6] == "nul";
                    check(is_nul == (*bytes == 0), format!("{full} has {bytes} bytes"))?;
                    check(
                        written.insert(full.clone()),
                        format!("{full} written twice"),
                    )?;
                    puts += 1;
                    nul += usize::from(is_nul);
                }
                Event::Get { bucket, key } => {
                    check(!key.ends_with(".nul"), format!("GET on {bucket}/{key}"))?;
                    check(
                        written.contains(&format!("{bucket}/{key}")),
                        format!("GET before PUT {bucket}/{key}"),
                    )?;
                    gets += 1;
                }
                _ => {}
            }
        }
    }
    check(nul > 0, "no .nul objects were exercised")?;
    Ok(format!(
        "{puts} keys conform ({nul} .nul), {gets} GETs, none on .nul"
    ))
}

fn c8_robustness(fx: &Fixture) -> Outcome {
    let packs = packs_for(&fx.model, 4, Scheme::Hgp, 5);
    let start = Instant::now();
    let mut dups = 0u64;
    for seed in 0..100u64 {
        let mut config = RunConfig::new(4, ChannelKind::Queue);
        config.faults = Some(FaultConfig {
            seed,
            max_delay: Duration::from_millis(3),
            duplicate_prob: 0.2,
            lost_delete_prob: 0.1,
        });
        config.limits.visibility_timeout = Duration::from_millis(20);
        let report = run_inference(&config, packs.clone(), &fx.x0)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        check(
            report.output == fx.want,
            format!("seed {seed}: output differs"),
        )?;
        dups += report.duplicates_dropped;
    }
    check(dups > 0, "no duplicate deliveries were injected")?;
    Ok(format!(
        "100 faulty runs identical, {dups} duplicates dropped, {:.2?}",
        start.elapsed()
    ))
}

fn poll_scenario(wait: Duration) -> (u64, usize) {
    let meter = Arc::new(Meter::new());
    let q = Arc::new(QueueService::new(1, ChannelLimits::default(), Arc::clone(&meter)).unwrap());
    let producer = {
        let q = Arc::clone(&q);
        thread::spawn(move || {
            for i in 0..20u8 {
                q.publish_routed(0, &[(0, vec![i; 32])]).unwrap();
                thread::sleep(Duration::from_millis(100));
            }
        })
    };
    let mut got = 0;
    let mut polls = 0;
    while got < 20 {
        let batch = q.poll_wait(0, wait).unwrap();
        polls += 1;
        if batch.is_empty() {
            if wait.is_zero() {
                // a client loop that briefly yields between empty short polls
                thread::sleep(Duration::from_millis(1));
            }
            continue;
        }
        got += batch.len();
        let receipts: Vec<u64> = batch.iter().map(|d| d.receipt).collect();
        q.delete_batch(0, &receipts).unwrap();
    }
    producer.join().unwrap();
    let snap = meter.snapshot();
    assert_eq!(snap.polls, polls);
    (snap.q, got)
}

fn c9_long_poll() -> Outcome {
    let (q_long, n_long) = poll_scenario(Duration::from_secs(1));
    let (q_short, n_short) = poll_scenario(Duration::ZERO);
    check(n_long == 20 && n_short == 20, "messages lost")?;
    check(
        q_long <= q_short,
        format!("long Q {q_long} > short Q {q_short}"),
    )?;
    Ok(format!("Q long-poll {q_long} <= short-poll {q_short}"))
}

fn main() {
    let pricing = PricingConfig::default();
    assert!(pricing.c_put > pricing.c_pub, "default profile not loaded");

    let fx = run_matrix();
    let criteria: Vec<Criterion> = vec![
        ("1 oracle equivalence", Box::new(|| c1_oracle(&fx))),
        ("2 billing rule", Box::new(c2_billing)),
        ("3 cost reconciliation", Box::new(|| c3_reconcile(&fx))),
        ("4 partitioning gain", Box::new(c4_partition_gain)),
        ("5 partitioner optimality", Box::new(c5_optimality)),
        ("6 cost crossover", Box::new(|| c6_crossover(&fx))),
        ("7 protocol conformance", Box::new(|| c7_keys(&fx))),
        ("8 robustness", Box::new(|| c8_robustness(&fx))),
        ("9 long-poll efficiency", Box::new(c9_long_poll)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
