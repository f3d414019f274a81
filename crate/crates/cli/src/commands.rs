use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use seufi::engine::{
    evaluate, metric_by_name, read_results_csv, scan, seu_flip_probability, write_results_csv, BitFilter, KindFilter,
    LayerFilter, Metric, ProbabilityMode, Provenance, Sampling, ScanOptions, ScanScope, Selector, SeuExposure,
    SsippReport, NS_PER_MONTH,
};
use seufi::model_io::{load_dataset, load_model, manifest_notes, save_model_with_notes, sha256_hex};
use seufi::protection::{
    inject_storage_fault, load_policies, overhead_report, tradeoff_curve, write_tradeoff_csv, LogicCostModel,
    ProtectionMap, StorageFault,
};
use seufi::{BitAddress, Network, ParamKind};

use crate::{
    Command, CostArgs, EvalArgs, InjectArgs, ModelArgs, ProtectArgs, ScanArgs, ScopeArgs, SeuArgs, TradeoffArgs,
};

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if cause.is::<seufi::Error>() {
            return 2;
        }
    }
    3
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Eval(a) => cmd_eval(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Inject(a) => cmd_inject(a),
        Command::SeuProb(a) => cmd_seu_prob(a),
        Command::Protect(a) => cmd_protect(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
    }
}

fn blob_path(m: &ModelArgs) -> PathBuf {
    m.blob.clone().unwrap_or_else(|| m.model.with_extension("bin"))
}

fn load_network(m: &ModelArgs) -> Result<Network> {
    Ok(load_model(&m.model, blob_path(m))?)
}

fn metric(name: &str) -> Result<Box<dyn Metric>> {
    metric_by_name(name).ok_or_else(|| usage(format!("unknown metric `{name}` (available: top1_accuracy)")))
}

fn provenance(config: &impl Serialize, network: Option<&Network>) -> Result<Provenance> {
    let canonical = serde_json::to_vec(config).context("serializing run configuration")?;
    Ok(Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sha256_hex(&canonical),
        network_hash: network.map(Network::fingerprint).unwrap_or_default(),
    })
}

/// Adds provenance and a timestamp to a report body. Everything except
/// `generated_at_unix` is a pure function of the inputs.
fn envelope(command: &str, provenance: &Provenance, body: impl Serialize) -> Result<Value> {
    let mut v = serde_json::to_value(body)?;
    let obj = v.as_object_mut().context("report body is not an object")?;
    obj.insert("command".into(), json!(command));
    obj.insert("provenance".into(), serde_json::to_value(provenance)?);
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    obj.insert("generated_at_unix".into(), json!(now));
    Ok(v)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(report: &Value, out: Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    print!("{text}");
    if let Some(path) = out {
        write_file(&path, text)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let network = load_network(&a.model)?;
    let dataset = load_dataset(&a.dataset)?;
    let m = metric(&a.metric)?;
    let value = evaluate(&network, &dataset, m.as_ref())?;
    let mut body = json!({
        "metric": m.name(),
        "p_original": value,
        "samples": dataset.len(),
    });
    if m.name() == "top1_accuracy" {
        body["accuracy"] = json!(value);
    }
    let report = envelope("eval", &provenance(&a, Some(&network))?, body)?;
    emit(&report, a.out.map(|d| d.join("eval.json")))
}

/// Scope file fields; all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScopeFile {
    layers: Option<String>,
    kinds: Option<String>,
    bits: Option<Vec<String>>,
    sample_fraction: Option<f64>,
    seed: Option<u64>,
}

fn build_scope(a: &ScopeArgs) -> Result<ScanScope> {
    let file: ScopeFile = match &a.scope {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| seufi::Error::File {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text)
                .map_err(|e| seufi::Error::Scope(format!("{}: {}", path.display(), e.message())))?
        }
        None => ScopeFile::default(),
    };
    let layers = match a.layers.as_ref().or(file.layers.as_ref()) {
        Some(s) => s.parse::<LayerFilter>()?,
        None => LayerFilter::All,
    };
    let kinds = match a.kinds.as_ref().or(file.kinds.as_ref()) {
        Some(s) => s.parse::<KindFilter>()?,
        None => KindFilter::Both,
    };
    let bits = match (&a.bits, &file.bits) {
        (Some(s), _) => BitFilter::parse_list([s.as_str()])?,
        (None, Some(list)) => BitFilter::parse_list(list.iter().map(String::as_str))?,
        (None, None) => BitFilter::all(),
    };
    let sampling = match a.sample_fraction.or(file.sample_fraction) {
        Some(fraction) => Sampling::Random {
            fraction,
            seed: a.seed.or(file.seed).unwrap_or(0),
        },
        None => Sampling::Exhaustive,
    };
    Ok(ScanScope {
        selector: Selector { layers, kinds, bits },
        sampling,
    })
}

fn cmd_scan(a: ScanArgs) -> Result<()> {
    let network = load_network(&a.model)?;
    let dataset = load_dataset(&a.dataset)?;
    let m = metric(&a.metric)?;
    let scope = build_scope(&a.scope)?;
    let options = ScanOptions {
        workers: a.workers,
        checkpoint: a.checkpoint.clone(),
        ..ScanOptions::default()
    };
    let results = scan(&network, &dataset, &scope, m.as_ref(), &options)?;

    let mut csv = Vec::new();
    write_results_csv(&mut csv, &results)?;
    write_file(&a.out.join("scan.csv"), csv)?;

    let report = SsippReport::build(&scope.key(), m.name(), &results, Some(a.top))?;
    // The worker count and checkpoint location do not affect results.
    let config = json!({
        "model": a.model,
        "dataset": a.dataset,
        "metric": a.metric,
        "scope": scope.key(),
        "top": a.top,
    });
    let json = envelope("scan", &provenance(&config, Some(&network))?, &report)?;
    write_file(&a.out.join("scan.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    println!(
        "evaluated {} bits; p_original {}; ssipp {} at {} ({})",
        report.evaluated_bits,
        report.p_original,
        report.ssipp,
        fmt_address(&report.argmax),
        report.argmax.bit_class
    );
    println!("wrote {} and {}", a.out.join("scan.csv").display(), a.out.join("scan.json").display());
    Ok(())
}

fn fmt_address(a: &seufi::engine::report::AddressRecord) -> String {
    format!("layer {} {} {} bit {}", a.layer, a.kind, a.element, a.bit)
}

fn cmd_inject(a: InjectArgs) -> Result<()> {
    let mut network = load_network(&a.model)?;
    let kind: ParamKind = a.kind.parse()?;
    let address = BitAddress::new(a.layer, kind, a.element, a.bit)?;
    let before = network.parameter(address.into())?;
    network.flip(address)?;
    let after = network.parameter(address.into())?;
    let manifest = fs::read_to_string(&a.model.model).map_err(|e| seufi::Error::File {
        path: a.model.model.clone(),
        source: e,
    })?;
    let mut notes = manifest_notes(&manifest);
    notes.push(format!("bit flipped by seufi inject: {address}"));
    let blob = a.output.with_extension("bin");
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_model_with_notes(&network, &a.output, &blob, &notes)?;
    println!("{address}: {before:e} -> {after:e}");
    println!("wrote {} and {}", a.output.display(), blob.display());
    Ok(())
}

fn cmd_seu_prob(a: SeuArgs) -> Result<()> {
    let lifetime_ns = match (a.lifetime_ns, a.lifetime_months) {
        (Some(ns), None) => ns,
        (None, Some(months)) => months * NS_PER_MONTH,
        _ => return Err(usage("give exactly one of --lifetime-ns or --lifetime-months")),
    };
    let exposure = SeuExposure {
        parameters: a.parameters,
        width: a.width,
        lifetime_ns,
        interval_ns: a.interval_ns,
        p_single: a.p_single,
    };
    let exact = seu_flip_probability(&exposure, ProbabilityMode::Exact).map_err(|e| usage(e.to_string()))?;
    let approx = seu_flip_probability(&exposure, ProbabilityMode::Approximate)?;
    let body = json!({
        "exposure": {
            "parameters": exposure.parameters,
            "width": exposure.width,
            "lifetime_ns": exposure.lifetime_ns,
            "interval_ns": exposure.interval_ns,
            "p_single": exposure.p_single,
            "trials": exposure.trials(),
        },
        "exact": exact.value,
        "approximate": approx.value,
        "approximation_warning": exact.approximation_warning,
    });
    let report = envelope("seu-prob", &provenance(&a, None)?, body)?;
    emit(&report, a.out.map(|d| d.join("seu_prob.json")))
}

fn cost_model(c: &CostArgs) -> Result<LogicCostModel> {
    let model = LogicCostModel {
        c_vote: c.c_vote,
        c_xor: c.c_xor,
    };
    model.validate().map_err(|e| usage(e.to_string()))?;
    Ok(model)
}

#[derive(Serialize)]
struct MaskingReport {
    injected: usize,
    masked: usize,
    masking_rate: f64,
    protected_injected: usize,
    protected_masked: usize,
    parity_injected: usize,
    parity_masked: usize,
}

fn cmd_protect(a: ProtectArgs) -> Result<()> {
    let network = load_network(&a.model)?;
    let cost = cost_model(&a.cost)?;
    let mut policies = load_policies(&a.policy)?;
    if let Some(name) = &a.name {
        policies.retain(|p| &p.name == name);
        if policies.is_empty() {
            return Err(usage(format!("no policy named `{name}` in {}", a.policy.display())));
        }
    }
    let scope = ScanScope {
        selector: Selector::everything(),
        sampling: match a.sample_fraction {
            Some(fraction) => Sampling::Random { fraction, seed: a.seed },
            None => Sampling::Exhaustive,
        },
    };
    let addresses = scope.enumerate(&network)?;
    let mut entries = Vec::new();
    for policy in &policies {
        let map = ProtectionMap::build(&network, policy)?;
        let mut m = MaskingReport {
            injected: 0,
            masked: 0,
            masking_rate: 0.0,
            protected_injected: 0,
            protected_masked: 0,
            parity_injected: 0,
            parity_masked: 0,
        };
        for &address in &addresses {
            let read = inject_storage_fault(&network, &map, StorageFault::Data { address, copy: 0 })?;
            let masked = read.iter().all(|r| r.recovered == r.original);
            let protected = map.is_protected(&network, address)?;
            m.injected += 1;
            m.masked += masked as usize;
            m.protected_injected += protected as usize;
            m.protected_masked += (protected && masked) as usize;
        }
        for group in map.protected_groups() {
            for index in 0..map.parity_bits_of(group) {
                let read = inject_storage_fault(&network, &map, StorageFault::Parity { group, index })?;
                m.parity_injected += 1;
                m.parity_masked += read.iter().all(|r| r.recovered == r.original) as usize;
            }
        }
        m.masking_rate = if m.injected > 0 { m.masked as f64 / m.injected as f64 } else { 0.0 };
        let overhead = overhead_report(policy, &network, &cost)?;
        println!(
            "{:<24} {:<3} masked {}/{} ({:.2}%), protected {}/{}, storage +{:.2}%, logic {:.1} units",
            policy.name,
            policy.scheme,
            m.masked,
            m.injected,
            100.0 * m.masking_rate,
            m.protected_masked,
            m.protected_injected,
            100.0 * overhead.relative_storage,
            overhead.logic_units
        );
        entries.push(json!({ "policy": policy.name, "masking": m, "overhead": overhead }));
    }
    let body = json!({ "cost_model": cost, "policies": entries });
    let report = envelope("protect", &provenance(&a, Some(&network))?, body)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(dir) = a.out {
        write_file(&dir.join("protect.json"), text)?;
    }
    Ok(())
}

fn cmd_tradeoff(a: TradeoffArgs) -> Result<()> {
    let network = load_network(&a.model)?;
    let cost = cost_model(&a.cost)?;
    let policies = load_policies(&a.policy)?;
    let results = match (&a.results, &a.dataset) {
        (Some(path), _) => {
            let file = fs::File::open(path).map_err(|e| seufi::Error::File {
                path: path.clone(),
                source: e,
            })?;
            let results = read_results_csv(file)?;
            for r in &results {
                network.check_address(r.address)?;
            }
            results
        }
        (None, Some(dataset)) => {
            let dataset = load_dataset(dataset)?;
            let m = metric(&a.metric)?;
            scan(
                &network,
                &dataset,
                &ScanScope::exhaustive(Selector::everything()),
                m.as_ref(),
                &ScanOptions::workers(a.workers),
            )?
        }
        (None, None) => {
            return Err(usage(
                "no scan results: run `seufi scan` over all bits and pass its scan.csv with --results, \
                 or pass --dataset to scan inline",
            ))
        }
    };
    let curve = tradeoff_curve(&network, &results, &policies, &cost)?;
    let mut csv = Vec::new();
    write_tradeoff_csv(&mut csv, &curve)?;
    write_file(&a.out.join("tradeoff.csv"), &csv)?;
    let report = envelope("tradeoff", &provenance(&a, Some(&network))?, &curve)?;
    write_file(&a.out.join("tradeoff.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
