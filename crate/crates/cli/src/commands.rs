use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use fsd_core::cost::{predict, CostReport, PricingConfig};
use fsd_core::partition::{
    build_packs, cut_metrics, derive_comm_maps, load_matrix, load_pack, load_packs,
    partition_model, save_matrix, save_pack, save_packs, PartitionPack, Scheme,
};
use fsd_core::runtime::{run_inference, ChannelKind, RunConfig, RunReport};
use fsd_core::sparse::{serial_inference, ActivationSpec, ModelDef, SparseMatrix};
use fsd_core::workbench::{
    generate_inputs, generate_model, graph_challenge_bias, load_model_tsv, nonzero_row_indices,
    GenSpec, Y_MAX,
};

use crate::report::{self, CompareRow};
use crate::{CompareArgs, GenerateArgs, PartitionArgs, RunArgs};

const INPUT_DENSITY: f64 = 0.3;
const REPEATS: usize = 3;

fn model_path(out: &Path) -> PathBuf {
    out.join("model.fsdp")
}

fn inputs_path(out: &Path) -> PathBuf {
    out.join("inputs.fsdm")
}

fn partition_dir(out: &Path, scheme: Scheme, p: u32) -> PathBuf {
    out.join("partitions").join(format!("{scheme}-p{p}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_workload(out: &Path) -> Result<(ModelDef, SparseMatrix)> {
    let model = load_pack(&model_path(out))?.into_model()?;
    let x0 = load_matrix(&inputs_path(out))?;
    if x0.row_dim() != model.n {
        bail!(
            "{} has {} rows but the model has {} neurons",
            inputs_path(out).display(),
            x0.row_dim(),
            model.n
        );
    }
    Ok((model, x0))
}

fn pricing(path: &Option<PathBuf>) -> Result<PricingConfig> {
    Ok(match path {
        Some(p) => PricingConfig::load(p)?,
        None => PricingConfig::default(),
    })
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let tsv = !a.tsv.is_empty();
    // loaded layers bring their own shape; only n and batch shape the inputs
    let spec = GenSpec {
        n: a.n,
        layers: if tsv { a.tsv.len() as u32 } else { a.layers },
        nnz_per_row: if tsv {
            a.nnz_per_row.min(a.n)
        } else {
            a.nnz_per_row
        },
        batch: a.batch,
        input_density: INPUT_DENSITY,
        seed: a.seed,
    };
    let model = if !tsv {
        generate_model(&spec)?
    } else {
        let act = ActivationSpec::new(graph_challenge_bias(a.n), Y_MAX)?;
        load_model_tsv(&a.tsv, a.n, act)?
    };
    let x0 = generate_inputs(&spec)?;
    create_dir(&a.out)?;
    save_pack(&model_path(&a.out), &PartitionPack::whole_model(&model))?;
    save_matrix(&inputs_path(&a.out), &x0)?;
    let source = if !tsv {
        serde_json::Value::String("synthetic".into())
    } else {
        serde_json::json!(a
            .tsv
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>())
    };
    report::write_json(
        &a.out.join("generate.json"),
        &serde_json::json!({
            "spec": spec,
            "layers": model.layers.len(),
            "source": source,
            "weights_nnz": model.layers.iter().map(|w| w.nnz()).sum::<usize>(),
            "inputs_nnz": x0.nnz(),
        }),
    )?;
    println!(
        "wrote {} ({} layers of {}) and {} ({} x {}, {} nonzeros)",
        model_path(&a.out).display(),
        model.layers.len(),
        model.n,
        inputs_path(&a.out).display(),
        x0.row_dim(),
        x0.n_cols(),
        x0.nnz()
    );
    Ok(())
}

pub fn partition(a: &PartitionArgs) -> Result<()> {
    let (model, _) = load_workload(&a.out)?;
    let plan = partition_model(&model, a.workers, a.epsilon, a.scheme, a.seed)?;
    let maps = derive_comm_maps(&plan, &model)?;
    let metrics = cut_metrics(&plan, &model, &maps);
    let dir = partition_dir(&a.out, a.scheme, a.workers);
    save_packs(&dir, &build_packs(&model, &plan, &maps)?)?;
    report::write_json(
        &dir.join("cut_metrics.json"),
        &serde_json::json!({
            "scheme": a.scheme,
            "workers": a.workers,
            "epsilon": a.epsilon,
            "seed": a.seed,
            "metrics": metrics,
        }),
    )?;
    println!(
        "{} packs in {}: total volume {} rows, max send {} rows, load imbalance {:.4}",
        a.workers,
        dir.display(),
        metrics.total_volume_rows,
        metrics.max_send_volume,
        metrics.load_imbalance
    );
    Ok(())
}

/// First row id whose contents differ between `a` and `b`.
fn first_difference(a: &SparseMatrix, b: &SparseMatrix) -> Option<u32> {
    let ids: std::collections::BTreeSet<u32> =
        a.row_ids().iter().chain(b.row_ids()).copied().collect();
    ids.into_iter().find(|&id| {
        let (ra, rb) = (a.get_row(id), b.get_row(id));
        match (ra, rb) {
            (Some(x), Some(y)) => {
                x.cols != y.cols
                    || x.values
                        .iter()
                        .map(|v| v.to_bits())
                        .ne(y.values.iter().map(|v| v.to_bits()))
            }
            _ => true,
        }
    })
}

fn runs_dir(out: &Path, channel: ChannelKind, scheme: Scheme, p: u32) -> PathBuf {
    let name = match channel {
        ChannelKind::Serial => "serial-p1".to_string(),
        _ => format!("{channel}-{scheme}-p{p}"),
    };
    out.join("runs").join(name)
}

fn execute(
    config: &RunConfig,
    packs: Vec<PartitionPack>,
    x0: &SparseMatrix,
) -> Result<(RunReport, CostReport)> {
    let run = run_inference(config, packs, x0)?;
    let cost = predict(config, &run)?;
    Ok((run, cost))
}

pub fn run(a: &RunArgs) -> Result<()> {
    let p = a.workers.unwrap_or(if a.channel == ChannelKind::Serial {
        1
    } else {
        4
    });
    let (model, x0) = load_workload(&a.out)?;
    let packs = match a.channel {
        ChannelKind::Serial => vec![load_pack(&model_path(&a.out))?],
        _ => load_packs(&partition_dir(&a.out, a.scheme, p), p)?,
    };
    let mut config = RunConfig::new(p, a.channel);
    config.branching = a.branching;
    config.pricing = pricing(&a.pricing)?;
    let (run, cost) = execute(&config, packs, &x0)?;

    let dir = runs_dir(&a.out, a.channel, a.scheme, p);
    create_dir(&dir)?;
    save_matrix(&dir.join("output.fsdm"), &run.output)?;
    report::write_json(&dir.join("meter.json"), &report::meter_json(&config, &run))?;
    report::write_json(&dir.join("cost.json"), &serde_json::json!({ "cost": cost }))?;
    println!(
        "{} P={}: {} nonzero rows, wall {:.3}s, T_bar {:.3}s, predicted ${:.4e} (metered ${:.4e}), reports in {}",
        a.channel,
        p,
        nonzero_row_indices(&run.output).len(),
        run.wall_seconds,
        run.t_bar(),
        cost.predicted.total,
        cost.metered_total,
        dir.display()
    );

    if a.verify {
        let want = serial_inference(&model, &x0)?;
        match first_difference(&want, &run.output) {
            None => println!(
                "PASS: output matches the serial oracle ({} nonzero rows)",
                want.n_rows()
            ),
            Some(row) => {
                println!("FAIL: first differing row {row}");
                bail!("verification failed at row {row}");
            }
        }
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn measure(
    variant: ChannelKind,
    config: &RunConfig,
    packs: &[PartitionPack],
    x0: &SparseMatrix,
    want: &SparseMatrix,
) -> Result<CompareRow> {
    let mut samples = Vec::with_capacity(REPEATS);
    for _ in 0..REPEATS {
        let (run, cost) = execute(config, packs.to_vec(), x0)?;
        if let Some(row) = first_difference(want, &run.output) {
            bail!("{variant} P={} differs from serial at row {row}", config.p);
        }
        samples.push((run.wall_seconds, cost.predicted));
    }
    let pick = |f: fn(&fsd_core::cost::PredictedCost) -> f64| {
        median(samples.iter().map(|(_, c)| f(c)).collect())
    };
    Ok(CompareRow {
        variant,
        p: config.p,
        elapsed_s: median(samples.iter().map(|(t, _)| *t).collect()),
        total: pick(|c| c.total),
        c_lambda: pick(|c| c.c_lambda),
        c_coordinator: pick(|c| c.c_coordinator),
        c_sns: pick(|c| c.c_sns),
        c_sqs: pick(|c| c.c_sqs),
        c_s3: pick(|c| c.c_s3),
    })
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    if a.workers.is_empty() {
        bail!("--workers needs at least one count");
    }
    let (model, x0) = load_workload(&a.out)?;
    let want = serial_inference(&model, &x0)?;
    let prices = pricing(&a.pricing)?;
    let configure = |p: u32, channel: ChannelKind| {
        let mut c = RunConfig::new(p, channel);
        c.branching = a.branching;
        c.pricing = prices;
        c
    };

    let mut rows = vec![measure(
        ChannelKind::Serial,
        &configure(1, ChannelKind::Serial),
        &[PartitionPack::whole_model(&model)],
        &x0,
        &want,
    )?];
    for &p in &a.workers {
        let plan = partition_model(&model, p, a.epsilon, a.scheme, a.seed)?;
        let maps = derive_comm_maps(&plan, &model)?;
        let packs = build_packs(&model, &plan, &maps)?;
        for channel in [ChannelKind::Queue, ChannelKind::Object] {
            rows.push(measure(
                channel,
                &configure(p, channel),
                &packs,
                &x0,
                &want,
            )?);
        }
    }

    create_dir(&a.out)?;
    let csv = a.out.join("compare.csv");
    fs::write(&csv, report::compare_csv(&rows))
        .with_context(|| format!("cannot write {}", csv.display()))?;
    let table = report::compare_table(&rows);
    let txt = a.out.join("compare.txt");
    fs::write(&txt, &table).with_context(|| format!("cannot write {}", txt.display()))?;
    report::write_json(
        &a.out.join("compare.json"),
        &serde_json::json!({ "scheme": a.scheme, "repeats": REPEATS, "rows": rows }),
    )?;
    print!("{table}");
    println!(
        "median of {REPEATS} runs; wrote {} and {}",
        csv.display(),
        txt.display()
    );
    Ok(())
}
