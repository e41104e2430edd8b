use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use layersplice::checkpoint::{config_path_for, read_checkpoint, write_checkpoint, LayerNameTemplate};
use layersplice::diagnostics::{
    compare_reports, comparison_table, layerwise_kl_report_with, side_by_side, KlReport,
};
use layersplice::schedule::{ScheduleParams, DEFAULT_CENTER, DEFAULT_STEEPNESS};
use layersplice::splice::{build_plan, splice_checkpoint, MethodChoice, PlanFile, SplicePlan};
use layersplice::toy::{generate_toy_checkpoint_as, ToyModel, ToyModelConfig};
use serde::Serialize;
use serde_json::json;

use crate::input::{parse_probe, parse_tokens, read_text};
use crate::{
    Cli, CliError, CliResult, Command, DiagnoseArgs, EarlyExitArgs, GenmodelArgs, InspectArgs,
    ScheduleArgs, SpliceArgs,
};

pub(crate) fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Splice(a) => cmd_splice(a, cli.json, out, err),
        Command::Schedule(a) => cmd_schedule(a, cli.json, out),
        Command::Inspect(a) => cmd_inspect(a, cli.json, out, err),
        Command::Diagnose(a) => cmd_diagnose(a, cli.json, out),
        Command::Genmodel(a) => cmd_genmodel(a, cli.json, out),
        Command::Earlyexit(a) => cmd_earlyexit(a, cli.json, out),
    }
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    writeln!(out, "{text}").map_err(stdout_error)
}

fn stdout_error(e: std::io::Error) -> CliError {
    CliError::Core(layersplice::Error::Io { path: "<stdout>".into(), source: e })
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_error)?
    };
}

fn template(pattern: &str) -> CliResult<LayerNameTemplate> {
    Ok(LayerNameTemplate::default().with_pattern(pattern)?)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn flags_describe_plan(a: &SpliceArgs) -> bool {
    !a.positions.is_empty()
        || a.method.is_some()
        || !a.methods.is_empty()
        || !a.alpha_overrides.is_empty()
        || a.k.is_some()
        || a.c.is_some()
        || a.scope.is_some()
}

fn plan_from_flags(a: &SpliceArgs, n: usize) -> CliResult<SplicePlan> {
    if a.positions.is_empty() {
        return Err(CliError::usage("EmptyPlan", "--positions (or --plan) is required"));
    }
    let methods = if !a.methods.is_empty() {
        MethodChoice::PerPosition(a.methods.clone())
    } else {
        MethodChoice::Uniform(a.method.unwrap_or(layersplice::InterpolationMethod::Slerp))
    };
    let mut overrides = BTreeMap::new();
    for &(pos, alpha) in &a.alpha_overrides {
        if overrides.insert(pos, alpha).is_some() {
            return Err(CliError::usage("DuplicateOverride", format!("position {pos} overridden twice")));
        }
    }
    let schedule = ScheduleParams::new(a.k.unwrap_or(DEFAULT_STEEPNESS), a.c.unwrap_or(DEFAULT_CENTER), n)?;
    Ok(build_plan(&a.positions, &methods, &overrides, schedule, a.scope.unwrap_or_default())?)
}

fn cmd_splice(a: &SpliceArgs, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    if same_file(&a.input, &a.output) {
        return Err(CliError::usage("OutputIsInput", "refusing to overwrite the input checkpoint"));
    }
    let template = template(&a.layer_pattern)?;
    let ckpt = read_checkpoint(&a.input)?;
    let n = ckpt.validate_layer_count(&template)?;

    let plan = match &a.plan {
        Some(path) => {
            if flags_describe_plan(a) {
                let _ = writeln!(err, "warning: --plan {} takes precedence over plan flags", path.display());
            }
            PlanFile::from_json(&read_text(path)?)?.into_plan(n)?
        }
        None => plan_from_flags(a, n)?,
    };

    let outcome = splice_checkpoint(&ckpt, &plan, &template)?;
    write_checkpoint(&outcome.checkpoint, &a.output)?;
    log::info!("wrote {}", a.output.display());

    let report = &outcome.report;
    if json {
        return emit_json(out, report);
    }
    say!(
        out,
        "spliced {} -> {} blocks ({} scope), wrote {}",
        report.original_blocks,
        report.spliced_blocks,
        report.scope,
        a.output.display()
    );
    say!(
        out,
        "{:>8} {:>9} {:>6} {:>9} {:>9} {:>10} {:>10} {:>10}",
        "position", "new_index", "method", "alpha", "source", "theta_min", "theta_mean", "theta_max"
    );
    for b in &report.inserted {
        let (lo, mean, hi) = match b.theta_stats() {
            Some((lo, mean, hi)) => (format!("{lo:.3e}"), format!("{mean:.3e}"), format!("{hi:.3e}")),
            None => ("-".into(), "-".into(), "-".into()),
        };
        let source = match b.alpha_source {
            layersplice::splice::AlphaSource::Scheduled => "schedule",
            layersplice::splice::AlphaSource::Override => "override",
        };
        say!(
            out,
            "{:>8} {:>9} {:>6} {:>9.5} {:>9} {:>10} {:>10} {:>10}",
            b.position, b.new_index, b.method.as_str(), b.alpha, source, lo, mean, hi
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ScheduleRow {
    position: usize,
    depth: f64,
    alpha: f64,
}

fn cmd_schedule(a: &ScheduleArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let params = ScheduleParams::new(a.k, a.c, a.n)?;
    let rows = a
        .positions
        .iter()
        .map(|&p| {
            Ok(ScheduleRow { position: p, depth: p as f64 / a.n as f64, alpha: params.alpha(p)? })
        })
        .collect::<CliResult<Vec<_>>>()?;
    if json {
        return emit_json(out, &json!({ "n": a.n, "k": a.k, "c": a.c, "rows": rows }));
    }
    say!(out, "N = {}, k = {}, c = {}", a.n, a.k, a.c);
    say!(out, "{:>8} {:>8} {:>10}", "position", "l/N", "alpha");
    for r in &rows {
        say!(out, "{:>8} {:>8.5} {:>10.5}", r.position, r.depth, r.alpha);
    }
    Ok(())
}

#[derive(Serialize)]
struct TensorRow<'a> {
    name: &'a str,
    dtype: &'static str,
    shape: &'a [usize],
}

fn cmd_inspect(a: &InspectArgs, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let template = template(&a.layer_pattern)?;
    let ckpt = read_checkpoint(&a.path)?;
    let indices = ckpt.block_indices(&template);
    let config_layers = ckpt.config.as_ref().map(|c| c.num_hidden_layers);

    let mut problems = Vec::new();
    if let Err(e) = ckpt.block_count(&template) {
        problems.push(e.to_string());
    }
    if let Some(cfg) = config_layers {
        if cfg != indices.len() {
            problems.push(format!("config declares {cfg} layers but tensors describe {}", indices.len()));
        }
    }
    let mut per_block: BTreeMap<usize, usize> = BTreeMap::new();
    for name in ckpt.tensors.keys() {
        if let Some((i, _)) = template.parse(name) {
            *per_block.entry(i).or_default() += 1;
        }
    }
    for &i in &indices {
        let missing: Vec<&String> = template
            .expected_suffixes()
            .iter()
            .filter(|s| !ckpt.tensors.contains_key(&template.render(i, s)))
            .collect();
        if !missing.is_empty() {
            problems.push(format!("block {i} is missing {missing:?}"));
        }
    }

    if json {
        let tensors: Vec<TensorRow> = ckpt
            .tensors
            .iter()
            .map(|(name, t)| TensorRow { name, dtype: t.dtype().as_str(), shape: t.shape() })
            .collect();
        emit_json(
            out,
            &json!({
                "path": a.path,
                "blocks": per_block,
                "block_count": indices.len(),
                "config_layers": config_layers,
                "tensors": tensors,
                "warnings": problems,
            }),
        )?;
    } else {
        say!(out, "{}", a.path.display());
        match config_layers {
            Some(n) => say!(out, "config layers: {n} ({})", config_path_for(&a.path).display()),
            None => say!(out, "config layers: - (no sidecar)"),
        }
        say!(out, "blocks: {}", indices.len());
        for (i, count) in &per_block {
            say!(out, "  block {i:>3}: {count} tensors");
        }
        say!(out, "tensors: {}", ckpt.tensors.len());
        for (name, t) in &ckpt.tensors {
            say!(out, "  {name:<48} {:<5} {:?}", t.dtype().as_str(), t.shape());
        }
    }
    for p in &problems {
        let _ = writeln!(err, "warning: {p}");
    }
    if a.strict && !problems.is_empty() {
        return Err(CliError::usage("InconsistentCheckpoint", problems.join("; ")));
    }
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn report_for(path: &Path, probe: &[Vec<u32>], mode: layersplice::diagnostics::FitMode) -> CliResult<KlReport> {
    let ckpt = read_checkpoint(path)?;
    let model = ToyModel::from_checkpoint(&ckpt, &LayerNameTemplate::default())?;
    Ok(layerwise_kl_report_with(&model, &model_name(path), probe, mode)?)
}

fn cmd_diagnose(a: &DiagnoseArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let probe = parse_probe(&read_text(&a.probe)?)?;

    let (value, text) = if let Some(model) = &a.model {
        let report = report_for(model, &probe, a.mode)?;
        let text = report.to_table();
        (serde_json::to_value(&report).expect("report serializes"), text)
    } else {
        let base = report_for(&a.compare[0], &probe, a.mode)?;
        let mut comparisons = Vec::new();
        for path in &a.compare[1..] {
            let spliced = report_for(path, &probe, a.mode)?;
            comparisons.push(compare_reports(&base, &spliced)?);
        }
        let mut text = comparison_table(&comparisons);
        for c in &comparisons {
            text.push_str(&format!("\n{} vs {}\n", c.base.model, c.spliced.model));
            text.push_str(&side_by_side(c));
        }
        (serde_json::to_value(&comparisons).expect("comparison serializes"), text)
    };

    if let Some(path) = &a.report_out {
        let body = serde_json::to_string_pretty(&value).expect("serializable") + "\n";
        std::fs::write(path, body).map_err(|source| {
            CliError::Core(layersplice::Error::Io { path: path.clone(), source })
        })?;
    }
    if json {
        emit_json(out, &value)
    } else {
        write!(out, "{text}").map_err(stdout_error)
    }
}

fn cmd_genmodel(a: &GenmodelArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let cfg = ToyModelConfig {
        num_layers: a.layers,
        hidden_size: a.hidden,
        num_heads: a.heads,
        intermediate_size: a.intermediate,
        vocab_size: a.vocab,
        rope_theta: a.rope_theta,
        ..Default::default()
    };
    let ckpt = generate_toy_checkpoint_as(&cfg, a.seed, a.dtype)?;
    write_checkpoint(&ckpt, &a.output)?;
    if json {
        return emit_json(
            out,
            &json!({
                "output": a.output,
                "config": config_path_for(&a.output),
                "tensors": ckpt.tensors.len(),
                "seed": a.seed,
            }),
        );
    }
    say!(
        out,
        "wrote {} ({} blocks, {} tensors, seed {}) and {}",
        a.output.display(),
        cfg.num_layers,
        ckpt.tensors.len(),
        a.seed,
        config_path_for(&a.output).display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Ranked {
    rank: usize,
    id: usize,
    logit: f64,
}

fn cmd_earlyexit(a: &EarlyExitArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let tokens = parse_tokens(&a.tokens)?;
    let ckpt = read_checkpoint(&a.model)?;
    let model = ToyModel::from_checkpoint(&ckpt, &LayerNameTemplate::default())?;
    let logits = model.early_exit_logits(&tokens, a.layer)?;
    let position = logits.rows - 1;
    let mut order: Vec<(usize, f64)> = logits.row(position).iter().copied().enumerate().collect();
    // descending by value, ties by id
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let top: Vec<Ranked> = order
        .into_iter()
        .take(a.top_k)
        .enumerate()
        .map(|(i, (id, logit))| Ranked { rank: i + 1, id, logit })
        .collect();
    if json {
        return emit_json(
            out,
            &json!({ "layer": a.layer, "blocks": model.block_count(), "position": position, "top": top }),
        );
    }
    say!(out, "layer {} of {} blocks, position {}", a.layer, model.block_count(), position);
    say!(out, "{:>4} {:>6} {:>24}", "rank", "id", "logit");
    for r in &top {
        say!(out, "{:>4} {:>6} {:>24}", r.rank, r.id, r.logit);
    }
    Ok(())
}
