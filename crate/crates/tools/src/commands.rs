//! Subcommand implementations. Each writes its human-readable summary to
//! `out` and its files under the run's output directory.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use snn_core::analysis::{linear_cka, linear_probe};
use snn_core::aux::{plan_scopes, ScopePlan};
use snn_core::data::Dataset;
use snn_core::gradcheck::run_suites;
use snn_core::ledger::MemoryLedger;
use snn_core::network::{firing_rates, Network, NetworkSpec};
use snn_core::partition::{greedy_partition, Partition, PartitionBudget};
use snn_core::rng::{streams, Rng};
use snn_core::train::{evaluate, steps_per_epoch, Trainer};
use snn_core::{Scalar, Tensor};

use crate::checkpoint::Checkpoint;
use crate::cli::{CkaArgs, Command, GradcheckArgs, PartitionArgs, ProbeArgs, TraceArgs, TrainArgs};
use crate::config::{Precision, RunConfig};
use crate::error::{io_err, Result, ToolError};
use crate::netfile::{load_spec, NetworkFile};
use crate::report::{self, MetricsRow};

/// Runs one subcommand.
pub fn run(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    let mut text = String::new();
    match cmd {
        Command::Partition(a) => cmd_partition(a, &mut text)?,
        Command::Train(a) => {
            // progress lines go out as epochs finish
            return cmd_train(a, out).map(|_| ());
        }
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut text)?,
        Command::Trace(a) => cmd_trace(a, &mut text)?,
        Command::Probe(a) => cmd_probe(a, &mut text)?,
        Command::Cka(a) => cmd_cka(a, &mut text)?,
    }
    emit(out, &text)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn elem_bytes(p: Precision) -> usize {
    match p {
        Precision::F32 => f32::BYTES,
        Precision::F64 => f64::BYTES,
    }
}

/// The network named by the config, with the step override applied.
fn network_spec(cfg: &RunConfig) -> Result<NetworkSpec> {
    let path = cfg
        .network
        .as_ref()
        .ok_or_else(|| ToolError::Usage("no network file: pass --network or set `network`".into()))?;
    let spec = load_spec(path)?;
    match cfg.timesteps {
        Some(t) => Ok(spec.with_timesteps(t)?),
        None => Ok(spec),
    }
}

fn join_set(v: &[usize]) -> String {
    let items: Vec<String> = v.iter().map(ToString::to_string).collect();
    format!("{{{}}}", items.join(","))
}

fn partition_table(p: &Partition, text: &mut String) {
    writeln!(text, "P={}", join_set(&p.boundaries)).unwrap();
    writeln!(text, "K={}", p.k()).unwrap();
    writeln!(text, "budget_bytes={}", p.budget).unwrap();
    writeln!(text, "subnetwork,first_layer,last_layer,footprint_bytes").unwrap();
    for k in 1..=p.k() {
        let r = p.scope(k);
        writeln!(text, "{k},{},{},{}", r.start + 1, r.end, p.footprints[k - 1]).unwrap();
    }
}

/// Auxiliary `k` as a network description of its own.
pub fn aux_network_file(spec: &NetworkSpec, plan: &ScopePlan, k: usize) -> NetworkFile {
    let aux = &plan.auxiliaries[k - 1];
    NetworkFile {
        input_shape: aux.input_shape.clone(),
        timesteps: spec.timesteps,
        neuron: spec.neuron,
        layers: aux.kinds(),
    }
}

pub fn cmd_partition(args: &PartitionArgs, text: &mut String) -> Result<()> {
    let budget = args
        .budget
        .budget()
        .ok_or_else(|| ToolError::Usage("pass --budget-bytes or --budget-ratio".into()))?;
    budget.validate()?;
    if let Some(fps) = &args.footprints {
        let bytes = match budget {
            PartitionBudget::AbsoluteBytes { bytes } => bytes,
            PartitionBudget::Ratio { rho } => PartitionBudget::Ratio { rho }.resolve(fps.iter().sum()),
        };
        partition_table(&greedy_partition(fps, bytes)?, text);
        return Ok(());
    }
    let cfg = args.run.resolve()?;
    let spec = network_spec(&cfg)?;
    let opts = snn_core::aux::AuxOptions {
        batch: cfg.train.batch_size,
        elem_bytes: elem_bytes(cfg.precision),
        allow_downsample: cfg.train.allow_downsample,
    };
    let plan = plan_scopes(&spec, budget, &opts)?;
    writeln!(
        text,
        "# reference batch {}, {} bytes per element",
        opts.batch, opts.elem_bytes
    )
    .unwrap();
    partition_table(&plan.partition, text);
    writeln!(text, "scope_limit_bytes={}", plan.scope_limit).unwrap();
    writeln!(text, "aux_reserve_bytes={}", plan.reserve).unwrap();
    writeln!(text, "layer,kind,footprint_bytes").unwrap();
    for (i, fp) in spec.footprints(opts.batch, opts.elem_bytes).iter().enumerate() {
        writeln!(text, "{},{},{fp}", i + 1, spec.layers[i].kind.name()).unwrap();
    }
    writeln!(text, "auxiliary,selected,downsample,layers,footprint_bytes").unwrap();
    for a in &plan.auxiliaries {
        let sel: Vec<String> = a.selected.iter().map(ToString::to_string).collect();
        writeln!(
            text,
            "{},{},{},{},{}",
            a.owner,
            sel.join(" "),
            a.downsample,
            a.layers.len(),
            a.footprint
        )
        .unwrap();
    }
    if let Some(dir) = &cfg.output_dir {
        create_dir(dir)?;
        for k in 1..plan.partition.k() {
            aux_network_file(&spec, &plan, k).save(&dir.join(format!("aux_{k}.toml")))?;
        }
        let plan_json = serde_json::to_string_pretty(&plan).unwrap();
        report::write(&dir.join("plan.json"), &plan_json)?;
    }
    Ok(())
}

/// What a finished training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub final_test_acc: f64,
    /// Largest activation peak over all epochs.
    pub peak_bytes: u64,
    pub plan: Option<ScopePlan>,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome> {
    let cfg = args.resolve()?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, out),
        Precision::F64 => train_with::<f64>(cfg, out),
    }
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.shape != spec.input_shape || data.classes != spec.num_classes {
        return Err(ToolError::Usage(format!(
            "dataset samples are {:?} with {} classes but the network expects {:?} with {}",
            data.shape, data.classes, spec.input_shape, spec.num_classes
        )));
    }
    Ok(())
}

fn default_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{}", cfg.train.regime.as_str(), cfg.train.seed))
}

fn train_with<F: Scalar>(mut cfg: RunConfig, out: &mut dyn Write) -> Result<TrainOutcome> {
    let spec = network_spec(&cfg)?;
    cfg.dataset.pin_root()?;
    let (train, test) = cfg.dataset.load()?;
    check_data(&spec, &train)?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| default_dir(&cfg));
    create_dir(&dir)?;

    let steps = steps_per_epoch(train.len(), cfg.train.batch_size);
    let mut trainer = Trainer::<F>::new(&spec, &cfg.train, steps)?;

    // a self-contained copy of everything needed to rerun
    NetworkFile::from_spec(&spec).save(&dir.join("network.toml"))?;
    let mut resolved = cfg.clone();
    resolved.network = Some(PathBuf::from("network.toml"));
    resolved.timesteps = None;
    resolved.output_dir = None;
    report::write(&dir.join("config.toml"), &resolved.to_toml())?;
    let manifest = json!({
        "tool": "snn",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.train.seed,
        "regime": cfg.train.regime,
        "precision": cfg.precision,
        "train_samples": train.len(),
        "test_samples": test.len(),
        "steps_per_epoch": steps,
        "layer_footprints": spec.footprints(cfg.train.batch_size, F::BYTES),
        "static_bytes": trainer.static_bytes(),
        "plan": trainer.plan,
    });
    report::write(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).unwrap(),
    )?;

    let mut rows = Vec::with_capacity(cfg.train.epochs);
    let mut trace = MemoryLedger::new();
    trace.set_static_bytes(trainer.static_bytes());
    let mut overall_peak = 0;
    let mut test_acc = 0.0;
    let head = format!("{}\n", report::METRICS_HEADER);
    emit(out, &head)?;
    for epoch in 0..cfg.train.epochs {
        let started = Instant::now();
        let mut totals = MemoryLedger::totals_only();
        let order = train.epoch_order(cfg.train.seed, epoch as u64);
        let mut loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.train.batch_size) {
            let (x, y) = train.batch::<F>(idx);
            let ledger = if epoch == 0 && batches == 0 {
                &mut trace
            } else {
                &mut totals
            };
            loss += trainer.train_batch(&x, &y, Some(ledger))?.0;
            batches += 1;
        }
        let mut peak = totals.peak_bytes();
        if epoch == 0 {
            peak = peak.max(trace.peak_bytes());
        }
        overall_peak = overall_peak.max(peak);
        test_acc = evaluate(&trainer.net, &test, cfg.eval_batch)?;
        let row = MetricsRow {
            epoch: epoch + 1,
            regime: cfg.train.regime,
            train_loss: loss / batches.max(1) as f64,
            test_acc,
            peak_bytes: peak,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        emit(out, &format!("{}\n", row.line()))?;
        rows.push(row);
        report::write(&dir.join("metrics.csv"), &report::metrics_csv(&rows))?;
    }
    if cfg.train.epochs > 0 {
        report::write_ledger(&dir, &trace)?;
    }
    Checkpoint::from_network(&trainer.net, cfg.train.regime, cfg.train.seed, cfg.train.epochs)
        .save(&dir.join("checkpoint.json"))?;
    Ok(TrainOutcome {
        dir,
        rows,
        final_test_acc: test_acc,
        peak_bytes: overall_peak,
        plan: trainer.plan,
    })
}

pub fn cmd_gradcheck(args: &GradcheckArgs, text: &mut String) -> Result<()> {
    let results = run_suites(args.seed, args.cases)?;
    writeln!(text, "suite,cases,worst,tolerance,status").unwrap();
    for r in &results {
        writeln!(
            text,
            "{},{},{:.3e},{:.0e},{}",
            r.name,
            r.cases,
            r.worst,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        )
        .unwrap();
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(ToolError::CheckFailed(format!(
            "{}\nfailed suites: {}",
            text.trim_end(),
            failed.join(", ")
        )))
    }
}

pub fn cmd_trace(args: &TraceArgs, text: &mut String) -> Result<()> {
    let cfg = args.train.resolve()?;
    match cfg.precision {
        Precision::F32 => trace_with::<f32>(&cfg, text),
        Precision::F64 => trace_with::<f64>(&cfg, text),
    }
}

/// Ledger of one instrumented minibatch of seeded random input.
pub fn trace_ledger<F: Scalar>(spec: &NetworkSpec, cfg: &RunConfig) -> Result<(MemoryLedger, Option<ScopePlan>)> {
    let trainer = Trainer::<F>::new(spec, &cfg.train, 1)?;
    let mut rng = Rng::new(cfg.train.seed).split(streams::DATA);
    let mut shape = vec![cfg.train.batch_size];
    shape.extend_from_slice(&spec.input_shape);
    let x: Tensor<F> = rng.uniform_tensor(&shape, 0.0, 1.0);
    let labels: Vec<usize> = (0..cfg.train.batch_size)
        .map(|_| rng.below(spec.num_classes))
        .collect();
    let mut ledger = MemoryLedger::new();
    ledger.set_static_bytes(trainer.static_bytes());
    trainer.grads(&x, &labels, Some(&mut ledger))?;
    Ok((ledger, trainer.plan))
}

fn trace_with<F: Scalar>(cfg: &RunConfig, text: &mut String) -> Result<()> {
    let spec = network_spec(cfg)?;
    let (ledger, plan) = trace_ledger::<F>(&spec, cfg)?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("trace"));
    create_dir(&dir)?;
    let rep = report::write_ledger(&dir, &ledger)?;
    writeln!(text, "regime={}", cfg.train.regime.as_str()).unwrap();
    writeln!(text, "timesteps={}", spec.timesteps).unwrap();
    writeln!(text, "batch={}", cfg.train.batch_size).unwrap();
    if let Some(p) = &plan {
        writeln!(text, "P={}", join_set(&p.partition.boundaries)).unwrap();
        writeln!(text, "max_scope_footprint_bytes={}", p.max_scope_footprint()).unwrap();
    }
    writeln!(text, "peak_bytes={}", rep.peak_bytes).unwrap();
    if let Some((layer, step)) = rep.peak_at {
        writeln!(text, "peak_at=layer {layer}, step {step}").unwrap();
    }
    writeln!(text, "static_bytes={}", rep.static_bytes).unwrap();
    writeln!(text, "events={}", ledger.records().len()).unwrap();
    writeln!(text, "written to {}", dir.display()).unwrap();
    Ok(())
}

/// Firing rates of every hidden layer over a whole dataset, `[N, D]` each.
pub fn dataset_rates<F: Scalar>(net: &Network<F>, data: &Dataset, batch: usize) -> Result<Vec<Tensor<f64>>> {
    let hidden = net.layers.len() - 1;
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); hidden];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = data.batch::<F>(chunk);
        for (acc, r) in cols.iter_mut().zip(firing_rates(net, &x)?) {
            acc.extend(r.to_f64_vec());
        }
    }
    Ok(cols
        .into_iter()
        .zip(&net.layers)
        .map(|(v, l)| Tensor::from_vec(&[data.len(), l.spec.out_elems()], v).unwrap())
        .collect())
}

fn load_net<F: Scalar>(path: &Path, cfg: &RunConfig) -> Result<Network<F>> {
    let ck = Checkpoint::load(path)?;
    let net = ck.network::<F>()?;
    match cfg.timesteps {
        Some(t) => {
            let spec = net.spec.with_timesteps(t)?;
            Ok(Network::from_params(&spec, net.layers.into_iter().map(|l| l.params).collect())?)
        }
        None => Ok(net),
    }
}

fn analysis_dir(cfg: &RunConfig, checkpoint: &Path) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| {
        checkpoint
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

pub fn cmd_probe(args: &ProbeArgs, text: &mut String) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(e) = args.probe_epochs {
        cfg.probe.epochs = e;
    }
    match cfg.precision {
        Precision::F32 => probe_with::<f32>(args, &cfg, text),
        Precision::F64 => probe_with::<f64>(args, &cfg, text),
    }
}

fn probe_with<F: Scalar>(args: &ProbeArgs, cfg: &RunConfig, text: &mut String) -> Result<()> {
    let net = load_net::<F>(&args.checkpoint, cfg)?;
    let (train, test) = cfg.dataset.load()?;
    check_data(&net.spec, &train)?;
    let tr = dataset_rates(&net, &train, cfg.eval_batch)?;
    let te = dataset_rates(&net, &test, cfg.eval_batch)?;
    writeln!(
        text,
        "# linear probe on firing rates: fit on train split (n={}), scored on test split (n={})",
        train.len(),
        test.len()
    )
    .unwrap();
    writeln!(text, "layer,kind,features,probe_acc").unwrap();
    for (l, (a, b)) in tr.iter().zip(&te).enumerate() {
        let acc = linear_probe(a, &train.labels, b, &test.labels, train.classes, &cfg.probe)?;
        let spec = &net.layers[l].spec;
        writeln!(text, "{},{},{},{acc}", l + 1, spec.kind.name(), spec.out_elems()).unwrap();
    }
    let dir = analysis_dir(cfg, &args.checkpoint);
    create_dir(&dir)?;
    report::write(&dir.join("probe.csv"), text)
}

pub fn cmd_cka(args: &CkaArgs, text: &mut String) -> Result<()> {
    let cfg = args.run.resolve()?;
    match cfg.precision {
        Precision::F32 => cka_with::<f32>(args, &cfg, text),
        Precision::F64 => cka_with::<f64>(args, &cfg, text),
    }
}

fn cka_cell(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<String> {
    match linear_cka(x, y) {
        Ok(v) => Ok(v.to_string()),
        // a silent layer has no defined similarity
        Err(snn_core::Error::ZeroVariance) => Ok("nan".into()),
        Err(e) => Err(e.into()),
    }
}

fn cka_with<F: Scalar>(args: &CkaArgs, cfg: &RunConfig, text: &mut String) -> Result<()> {
    let net = load_net::<F>(&args.checkpoint, cfg)?;
    let (_, test) = cfg.dataset.load()?;
    check_data(&net.spec, &test)?;
    let ra = dataset_rates(&net, &test, cfg.eval_batch)?;
    writeln!(
        text,
        "# linear CKA on firing rates over the test split (n={})",
        test.len()
    )
    .unwrap();
    match &args.against {
        Some(other) => {
            let net_b = load_net::<F>(other, cfg)?;
            check_data(&net_b.spec, &test)?;
            let rb = dataset_rates(&net_b, &test, cfg.eval_batch)?;
            writeln!(text, "layer,kind_a,kind_b,cka").unwrap();
            for (l, (a, b)) in ra.iter().zip(&rb).enumerate() {
                writeln!(
                    text,
                    "{},{},{},{}",
                    l + 1,
                    net.layers[l].spec.kind.name(),
                    net_b.layers[l].spec.kind.name(),
                    cka_cell(a, b)?
                )
                .unwrap();
            }
        }
        None => {
            writeln!(text, "layer_a,layer_b,cka").unwrap();
            for (i, a) in ra.iter().enumerate() {
                for (j, b) in ra.iter().enumerate() {
                    writeln!(text, "{},{},{}", i + 1, j + 1, cka_cell(a, b)?).unwrap();
                }
            }
        }
    }
    let dir = analysis_dir(cfg, &args.checkpoint);
    create_dir(&dir)?;
    report::write(&dir.join("cka.csv"), text)
}

