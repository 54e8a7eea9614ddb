use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use lrdk_core::compress::{
    analyze as analyze_model, factored_params, AnalysisReport, CostProfile, CostQuery,
    HardwareSpec, ProcessingStyle,
};
use lrdk_core::design_space::{
    count_configs, enumerate, heuristic_prune, parse_tensor_names, search as search_space,
    space_for, validate, CandidateFile, ConfigDocument, DecompConfig, DivergenceAccuracyProvider,
    EnumFilter, RooflineCostProvider, Violation,
};
use lrdk_core::model::{
    apply_decomposition, logit_divergence, Checkpoint, DivergenceOptions, ModelSpec,
};
use serde::Serialize;

use crate::error::{CliError, Kind};
use crate::manifest::RunManifest;
use crate::{AnalyzeArgs, ConfigArgs, DecomposeArgs, EvalArgs, Format, SearchArgs, SpaceArgs};

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn resolve_spec(name: &str) -> Result<ModelSpec, CliError> {
    Ok(ModelSpec::resolve(name)?)
}

fn hardware(path: Option<&Path>) -> Result<HardwareSpec, CliError> {
    match path {
        None => Ok(HardwareSpec::a100_like()),
        Some(p) => Ok(HardwareSpec::from_toml_str(&read_text(p)?)?),
    }
}

/// Parses `3,9,15` or `2-5,8` into 1-indexed layer ids, checked against `n_layers`.
fn parse_layer_list(text: &str, n_layers: usize) -> Result<Vec<usize>, CliError> {
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| CliError::input(format!("'{part}' is not a layer number or range")))
        };
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            return Err(CliError::input(format!("empty layer range '{part}'")));
        }
        for l in lo..=hi {
            if l == 0 || l > n_layers {
                return Err(CliError::config(format!(
                    "layer-range: layer {l} is outside 1..={n_layers} (layers are 1-indexed)"
                )));
            }
            out.insert(l);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("layer list is empty"));
    }
    Ok(out.into_iter().collect())
}

fn zero_indexed(layers: &[usize]) -> Vec<usize> {
    layers.iter().map(|l| l - 1).collect()
}

/// A violation phrased with 1-indexed layers and role names.
fn describe(v: &Violation, spec: &ModelSpec) -> String {
    let role = |k: &usize| {
        spec.role(*k)
            .map(|r| r.name.clone())
            .unwrap_or_else(|| format!("#{k}"))
    };
    match v {
        Violation::LayerOutOfRange { layer, n_layers } => {
            format!("layer-range: layer {} is outside 1..={n_layers}", layer + 1)
        }
        Violation::TensorOutOfRange { tensor, n_tensors } => {
            format!("tensor-range: tensor id {tensor} is outside 0..{n_tensors}")
        }
        Violation::NonPositiveRank { layer, tensor } => format!(
            "positive-rank: pruned rank for layer {} {} must be positive",
            layer + 1,
            role(tensor)
        ),
        Violation::RankExceedsOriginal {
            layer,
            tensor,
            rank,
            max,
        } => format!(
            "rank-bound: pruned rank {rank} for layer {} {} exceeds its original rank {max}",
            layer + 1,
            role(tensor)
        ),
        Violation::TripleOutsideSelection { layer, tensor } => format!(
            "coverage: rank for layer {} {} lies outside the decomposed layers/tensors",
            layer + 1,
            role(tensor)
        ),
        Violation::MissingPair { layer, tensor } => {
            format!(
                "coverage: no pruned rank for layer {} {}",
                layer + 1,
                role(tensor)
            )
        }
        Violation::DuplicatePair { layer, tensor } => {
            format!(
                "coverage: several pruned ranks for layer {} {}",
                layer + 1,
                role(tensor)
            )
        }
        Violation::HalfEmptySelection => v.to_string(),
    }
}

fn check(cfg: &DecompConfig, spec: &ModelSpec) -> Result<(), CliError> {
    let verdict = validate(cfg, spec);
    if verdict.is_valid() {
        return Ok(());
    }
    let text: Vec<String> = verdict
        .violations
        .iter()
        .map(|v| describe(v, spec))
        .collect();
    Err(CliError::config(text.join("; ")))
}

fn doc_to_config(doc: &ConfigDocument, spec: &ModelSpec) -> Result<DecompConfig, CliError> {
    if doc.layers.is_empty() && doc.tensors.is_empty() {
        return Ok(DecompConfig::empty());
    }
    let layers: Vec<usize> = doc.layers.clone();
    for &l in &layers {
        if l == 0 || l > spec.n_layers {
            return Err(CliError::config(format!(
                "layer-range: layer {l} is outside 1..={} (layers are 1-indexed)",
                spec.n_layers
            )));
        }
    }
    let tensors = parse_tensor_names(&doc.tensors, spec)?;
    let cfg = DecompConfig::uniform(zero_indexed(&layers), tensors, doc.pruned_rank);
    check(&cfg, spec)?;
    Ok(cfg)
}

/// The decomposition selected on the command line, if any, already validated.
fn config_from_args(args: &ConfigArgs, spec: &ModelSpec) -> Result<Option<DecompConfig>, CliError> {
    if let Some(path) = &args.config {
        let doc = ConfigDocument::from_toml_str(&read_text(path)?)?;
        return doc_to_config(&doc, spec).map(Some);
    }
    let Some(pr) = args.pr else {
        return Ok(None);
    };
    let layers = parse_layer_list(args.layers.as_deref().unwrap_or(""), spec.n_layers)?;
    let names: Vec<String> = args
        .tensors
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let doc = ConfigDocument {
        pruned_rank: pr,
        layers,
        tensors: names,
    };
    if doc.tensors.is_empty() {
        return Err(CliError::input("tensor list is empty"));
    }
    doc_to_config(&doc, spec).map(Some)
}

fn config_label(cfg: &DecompConfig, spec: &ModelSpec) -> String {
    if cfg.is_empty() {
        return "none".into();
    }
    let layers: Vec<String> = cfg.layers().iter().map(|l| (l + 1).to_string()).collect();
    let tensors: Vec<String> = if cfg.tensors().len() == spec.n_tensors() {
        vec!["all".into()]
    } else {
        cfg.tensors()
            .iter()
            .map(|&k| spec.roles[k].name.clone())
            .collect()
    };
    let pr = cfg
        .uniform_rank()
        .map(|r| r.to_string())
        .unwrap_or_else(|| "mixed".into());
    format!(
        "pr={pr} layers={} tensors={}",
        layers.join(","),
        tensors.join(",")
    )
}

fn table(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        s.push_str(cells.join("  ").trim_end());
        s.push('\n');
    }
    s
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::new(Kind::Io, format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::new(Kind::Io, format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn json_string<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn human_bytes(b: u64) -> String {
    let b = b as f64;
    if b >= 1e9 {
        format!("{:.2} GB", b / 1e9)
    } else if b >= 1e6 {
        format!("{:.2} MB", b / 1e6)
    } else {
        format!("{:.2} kB", b / 1e3)
    }
}

#[derive(Debug, Serialize)]
struct DecomposeSummary {
    model: String,
    config: String,
    params_before: u64,
    params_after: u64,
    analytic_params_after: u64,
    compression_ratio: f64,
    reduction_fraction: f64,
    output: Option<String>,
}

pub fn decompose(args: &DecomposeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = resolve_spec(&args.model)?;
    let cfg = config_from_args(&args.cfg, &spec)?.ok_or_else(|| {
        CliError::input("no decomposition given: use --config or --pr/--layers/--tensors")
    })?;
    let ckpt = match &args.checkpoint {
        Some(p) => {
            let c = Checkpoint::load(p).map_err(|e| match e {
                lrdk_core::model::ModelError::Io(io) => CliError::io(p, io),
                other => other.into(),
            })?;
            if c.spec() != &spec {
                return Err(CliError::input(format!(
                    "checkpoint binds spec '{}', not '{}'",
                    c.spec().name,
                    spec.name
                )));
            }
            c
        }
        None => Checkpoint::random(&spec, args.precision, args.seed)?,
    };
    let dec = apply_decomposition(&ckpt, &cfg)?;

    // Signed: a large pruned rank can store more than the dense weight.
    let growth: i128 = cfg
        .pruned_ranks()
        .iter()
        .map(|p| {
            let r = &spec.roles[p.tensor];
            factored_params(r.rows as u64, r.cols as u64, p.rank as u64) as i128
                - r.params() as i128
        })
        .sum();
    let before = ckpt.param_count();
    let after = dec.param_count();
    let summary = DecomposeSummary {
        model: spec.name.clone(),
        config: config_label(&cfg, &spec),
        params_before: before,
        params_after: after,
        analytic_params_after: (before as i128 + growth) as u64,
        compression_ratio: before as f64 / after as f64,
        reduction_fraction: 1.0 - after as f64 / before as f64,
        output: args.out.as_ref().map(|p| p.display().to_string()),
    };

    if let Some(path) = &args.out {
        dec.save(path).map_err(|e| CliError::io(path, e))?;
        let mut inputs: Vec<&Path> = Vec::new();
        if let Some(p) = &args.checkpoint {
            inputs.push(p);
        }
        if let Some(p) = &args.cfg.config {
            inputs.push(p);
        }
        let manifest = RunManifest::new(
            "decompose",
            &[
                ("model", spec.name.clone()),
                ("config", config_label(&cfg, &spec)),
                ("precision", args.precision.to_string()),
                ("seed", args.seed.to_string()),
            ],
            &inputs,
            args.seed,
        )?;
        manifest.write(&sidecar(path))?;
    }

    let text = match args.format {
        Format::Json => json_string(&summary),
        Format::Csv => csv_string(&[&summary])?,
        Format::Table => table(&[
            vec!["model".into(), summary.model.clone()],
            vec!["config".into(), summary.config.clone()],
            vec!["params_before".into(), before.to_string()],
            vec!["params_after".into(), after.to_string()],
            vec![
                "analytic_params_after".into(),
                summary.analytic_params_after.to_string(),
            ],
            vec![
                "compression_ratio".into(),
                format!("{:.6}", summary.compression_ratio),
            ],
            vec![
                "reduction".into(),
                format!("{:.4}%", 100.0 * summary.reduction_fraction),
            ],
        ]),
    };
    emit(out, &text)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// One line of the analysis report; the same fields in CSV and JSON.
#[derive(Debug, Clone, Serialize)]
struct AnalyzeRow {
    model: String,
    variant: String,
    config: String,
    batch: u64,
    seq_len: u64,
    precision: String,
    params: u64,
    model_bytes: u64,
    macs: u64,
    compute_to_model: f64,
    oi: f64,
    roofline_latency_s: f64,
    roofline_energy_j: f64,
    bound: String,
    param_reduction: f64,
    ops_increase: f64,
    oi_uplift: f64,
}

fn analyze_rows(report: &AnalysisReport, label: &str) -> Vec<AnalyzeRow> {
    let dense = &report.dense;
    let row = |variant: &str, p: &CostProfile, config: &str| AnalyzeRow {
        model: report.model.clone(),
        variant: variant.into(),
        config: config.into(),
        batch: report.batch,
        seq_len: report.seq_len,
        precision: report.precision.to_string(),
        params: p.params,
        model_bytes: p.model_bytes,
        macs: p.macs,
        compute_to_model: p.compute_to_model,
        oi: p.oi,
        roofline_latency_s: p.roofline_latency_s,
        roofline_energy_j: p.roofline_energy_j,
        bound: serde_json::to_value(p.bound)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        param_reduction: 1.0 - p.params as f64 / dense.params as f64,
        ops_increase: p.macs as f64 / dense.macs as f64 - 1.0,
        oi_uplift: p.oi / dense.oi,
    };
    let mut rows = vec![row("dense", dense, "none")];
    if let Some(d) = &report.decomposed {
        rows.push(row("factored", &d.factored, label));
        rows.push(row("reconstructing", &d.reconstructing, label));
    }
    rows
}

pub fn analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = resolve_spec(&args.model)?;
    let cfg = config_from_args(&args.cfg, &spec)?;
    let hw = hardware(args.hw.as_deref())?;
    let query = CostQuery {
        batch: args.batch,
        seq_len: args.seq,
        precision: args.precision,
        style: ProcessingStyle::Factored,
    };
    let report = analyze_model(&spec, cfg.as_ref(), &query, &hw)?;
    let label = cfg
        .as_ref()
        .map(|c| config_label(c, &spec))
        .unwrap_or_else(|| "none".into());
    let rows = analyze_rows(&report, &label);

    let text = match args.format {
        Format::Json => json_string(&rows),
        Format::Csv => csv_string(&rows)?,
        Format::Table => {
            let mut t = vec![[
                "variant",
                "params",
                "size",
                "MACs",
                "MAC/byte",
                "latency_ms",
                "energy_J",
                "bound",
                "reduction",
                "ops_delta",
                "OI_uplift",
            ]
            .map(String::from)
            .to_vec()];
            for r in &rows {
                t.push(vec![
                    r.variant.clone(),
                    r.params.to_string(),
                    human_bytes(r.model_bytes),
                    format!("{:.4e}", r.macs as f64),
                    format!("{:.2}", r.oi),
                    format!("{:.4}", r.roofline_latency_s * 1e3),
                    format!("{:.4}", r.roofline_energy_j),
                    r.bound.clone(),
                    format!("{:.2}%", 100.0 * r.param_reduction),
                    format!("{:+.3}%", 100.0 * r.ops_increase),
                    format!("{:.3}", r.oi_uplift),
                ]);
            }
            format!(
                "model {}  batch {}  seq {}  precision {}  config {}\nroofline knee {:.1} MAC/byte\n{}",
                spec.name,
                args.batch,
                args.seq,
                args.precision,
                label,
                hw.knee(),
                table(&t)
            )
        }
    };
    emit(out, &text)?;

    if let Some(path) = &args.manifest {
        let mut inputs: Vec<&Path> = Vec::new();
        inputs.extend(args.cfg.config.as_deref());
        inputs.extend(args.hw.as_deref());
        RunManifest::new(
            "analyze",
            &[
                ("model", spec.name.clone()),
                ("config", label),
                ("batch", args.batch.to_string()),
                ("seq", args.seq.to_string()),
                ("precision", args.precision.to_string()),
            ],
            &inputs,
            0,
        )?
        .write(path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CountReport {
    model: String,
    n_layers: usize,
    n_tensors: usize,
    rank: usize,
    size: String,
    log2_size: f64,
    layer_tensor_combinations: String,
    log2_layer_tensor_combinations: f64,
    order: String,
}

#[derive(Debug, Serialize)]
struct EnumRow {
    index: u64,
    pruned_rank: usize,
    layers: String,
    tensors: String,
}

#[derive(Debug, Serialize)]
struct HeuristicReport {
    model: String,
    pruned_rank: usize,
    layers: Vec<usize>,
    tensors: Vec<String>,
    reduction: f64,
}

fn big_log2(text: &str) -> f64 {
    // Decimal string to log2 via its leading digits and length.
    let lead: f64 = text[..text.len().min(17)].parse().unwrap_or(0.0);
    let shift = text.len().saturating_sub(17) as f64;
    lead.log2() + shift * std::f64::consts::LOG2_10
}

fn enum_filter(args: &SpaceArgs, spec: &ModelSpec) -> Result<EnumFilter, CliError> {
    let include = match &args.include_layers {
        Some(s) => zero_indexed(&parse_layer_list(s, spec.n_layers)?)
            .into_iter()
            .collect(),
        None => BTreeSet::new(),
    };
    let within = match &args.within_layers {
        Some(s) => Some(
            zero_indexed(&parse_layer_list(s, spec.n_layers)?)
                .into_iter()
                .collect(),
        ),
        None => None,
    };
    Ok(EnumFilter {
        layers_include: include,
        layers_within: within,
        min_layers: args.min_layers,
        max_layers: args.max_layers,
        ..EnumFilter::default()
    })
}

pub fn space(args: &SpaceArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = resolve_spec(&args.model)?;
    if args.heuristic {
        let target = args.target_reduction.expect("clap requires it");
        let choice = heuristic_prune(&spec, target)?;
        let doc = ConfigDocument::from_config(&choice.config, &spec)?;
        let report = HeuristicReport {
            model: spec.name.clone(),
            pruned_rank: doc.pruned_rank,
            layers: doc.layers.clone(),
            tensors: doc.tensors.clone(),
            reduction: choice.reduction,
        };
        let text = match args.format {
            Format::Json => json_string(&report),
            Format::Csv => csv_string(&[EnumRow {
                index: 0,
                pruned_rank: doc.pruned_rank,
                layers: join(&doc.layers),
                tensors: doc.tensors.join(" "),
            }])?,
            Format::Table => format!(
                "# {} heuristic choice, parameter reduction {:.4}%\n{}",
                spec.name,
                100.0 * choice.reduction,
                doc.to_toml_string()
            ),
        };
        return emit(out, &text);
    }

    if args.enumerate {
        let filter = enum_filter(args, &spec)?;
        let total = count_configs(&spec, &[args.rank], &filter)?;
        let configs = enumerate(&spec, &[args.rank], &filter)?;
        let mut rows = Vec::new();
        if args.format == Format::Table {
            emit(
                out,
                &format!("# {} configs in total, showing up to {}\n", total, args.max),
            )?;
        }
        for (i, cfg) in configs.take(args.max as usize).enumerate() {
            let doc = ConfigDocument::from_config(&cfg, &spec)?;
            let row = EnumRow {
                index: i as u64,
                pruned_rank: doc.pruned_rank,
                layers: join(&doc.layers),
                tensors: doc.tensors.join(" "),
            };
            match args.format {
                Format::Table => emit(out, &format!("{:>6}  {}\n", i, config_label(&cfg, &spec)))?,
                _ => rows.push(row),
            }
        }
        match args.format {
            Format::Json => emit(out, &json_string(&rows))?,
            Format::Csv => emit(out, &csv_string(&rows)?)?,
            Format::Table => {}
        }
        return Ok(());
    }

    let d = space_for(&spec);
    let size = d.size.to_string();
    let combos = d.layer_tensor_combinations().to_string();
    let report = CountReport {
        model: spec.name.clone(),
        n_layers: d.n_layers,
        n_tensors: d.n_tensors,
        rank: d.rank,
        log2_size: big_log2(&size),
        size,
        log2_layer_tensor_combinations: big_log2(&combos),
        layer_tensor_combinations: combos,
        order: format!("O(2^{})", d.order_exponent()),
    };
    let text = match args.format {
        Format::Json => json_string(&report),
        Format::Csv => csv_string(&[&report])?,
        Format::Table => table(&[
            vec!["model".into(), report.model.clone()],
            vec!["layers".into(), report.n_layers.to_string()],
            vec!["tensors".into(), report.n_tensors.to_string()],
            vec!["rank".into(), report.rank.to_string()],
            vec!["size".into(), report.size.clone()],
            vec!["log2(size)".into(), format!("{:.2}", report.log2_size)],
            vec![
                "layer x tensor subsets".into(),
                report.layer_tensor_combinations.clone(),
            ],
            vec![
                "log2(subsets)".into(),
                format!("{:.2}", report.log2_layer_tensor_combinations),
            ],
            vec!["order".into(), report.order.clone()],
        ]),
    };
    emit(out, &text)
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| match e {
        lrdk_core::model::ModelError::Io(io) => CliError::io(path, io),
        other => {
            let mut err = CliError::from(other);
            err.message = format!("{}: {}", path.display(), err.message);
            err
        }
    })
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let a = load_checkpoint(&args.original)?;
    let b = load_checkpoint(&args.decomposed)?;
    let opts = DivergenceOptions {
        n_inputs: args.n_inputs,
        seq_len: args.seq_len,
        seed: args.seed,
    };
    let report = logit_divergence(&a, &b, &opts)?;
    emit(out, &json_string(&report))?;
    if let Some(path) = &args.manifest {
        RunManifest::new(
            "eval",
            &[
                ("n_inputs", args.n_inputs.to_string()),
                ("seq_len", args.seq_len.to_string()),
                ("seed", args.seed.to_string()),
            ],
            &[&args.original, &args.decomposed],
            args.seed,
        )?
        .write(path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SearchRow {
    rank: usize,
    feasible: bool,
    edp: f64,
    latency_s: f64,
    energy_j: f64,
    accuracy_proxy: f64,
    accuracy_drop: f64,
    pruned_rank: usize,
    layers: String,
    tensors: String,
}

pub fn search(args: &SearchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = resolve_spec(&args.model)?;
    if !(args.tau.is_finite() && args.tau >= 0.0) {
        return Err(CliError::input(format!(
            "--tau must be a non-negative number, got {}",
            args.tau
        )));
    }
    let hw = hardware(args.hw.as_deref())?;
    let file = CandidateFile::from_toml_str(&read_text(&args.candidates)?)?;
    let candidates = file
        .candidate
        .iter()
        .map(|d| doc_to_config(d, &spec))
        .collect::<Result<Vec<_>, _>>()?;
    let original = match &args.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => Checkpoint::random(&spec, lrdk_core::precision::Precision::F64, args.seed)?,
    };
    let cost = RooflineCostProvider {
        spec: spec.clone(),
        query: CostQuery {
            batch: args.batch,
            seq_len: args.seq,
            precision: args.precision,
            style: ProcessingStyle::Factored,
        },
        hardware: hw,
    };
    let accuracy = DivergenceAccuracyProvider {
        original,
        options: DivergenceOptions {
            n_inputs: args.n_inputs,
            seq_len: args.seq_len,
            seed: args.seed,
        },
    };
    let result = search_space(&spec, candidates, &cost, &accuracy, args.tau)?;

    let rows = result
        .ranked
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let doc = ConfigDocument::from_config(&o.config, &spec)?;
            Ok(SearchRow {
                rank: i + 1,
                feasible: o.feasible,
                edp: o.edp,
                latency_s: o.latency_s,
                energy_j: o.energy_j,
                accuracy_proxy: o.accuracy_proxy,
                accuracy_drop: o.accuracy_drop,
                pruned_rank: doc.pruned_rank,
                layers: join(&doc.layers),
                tensors: doc.tensors.join(" "),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    emit(out, &csv_string(&rows)?)?;

    let best = ConfigDocument::from_config(&result.best.config, &spec)?;
    if let Some(path) = &args.best {
        let note = if result.any_feasible {
            "# best feasible config\n"
        } else {
            "# no candidate met the accuracy threshold; lowest-EDP infeasible config\n"
        };
        std::fs::write(path, format!("{note}{}", best.to_toml_string()))
            .map_err(|e| CliError::io(path, e))?;
    }
    if !result.any_feasible {
        eprintln!(
            "warning: no candidate met the accuracy threshold {}",
            args.tau
        );
    }
    if let Some(path) = &args.manifest {
        let mut inputs: Vec<&Path> = vec![&args.candidates];
        inputs.extend(args.hw.as_deref());
        inputs.extend(args.checkpoint.as_deref());
        RunManifest::new(
            "search",
            &[
                ("model", spec.name.clone()),
                ("tau", args.tau.to_string()),
                ("batch", args.batch.to_string()),
                ("seq", args.seq.to_string()),
                ("precision", args.precision.to_string()),
                ("n_inputs", args.n_inputs.to_string()),
                ("seq_len", args.seq_len.to_string()),
                ("seed", args.seed.to_string()),
            ],
            &inputs,
            args.seed,
        )?
        .write(path)?;
    }
    Ok(())
}
