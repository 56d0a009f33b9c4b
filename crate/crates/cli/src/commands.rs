use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use featsel_core::baselines::{fit_l1_logistic, lasso_top_k, random_select, LassoConfig};
use featsel_core::catalog::{load_catalog, load_dataset, CatalogFormat, FeatureCatalog};
use featsel_core::evaluation::{
    generate_synthetic, group_count, parse_report_csv, render_report, train_eval, EvaluationReport, Metric,
    ReportFormat, SyntheticSpec, LABEL_COLUMN,
};
use featsel_core::llm_client::build_backend;
use featsel_core::pairs::{build_pair_pool, load_signal_table, CorrelationMethod};
use featsel_core::partition::{plan_buckets, run_pipeline, PipelineResult};
use featsel_core::seeding::derive_seed;
use featsel_core::selection::{SelectionConfig, SelectorBackend, StepRecord};
use log::info;
use serde::Serialize;

use crate::args::{
    Command, CorrelationArg, EvaluateArgs, IngestArgs, MethodArg, MetricArg, PairsArgs, ReportArgs, SelectArgs,
    SynthArgs,
};
use crate::error::CliError;
use crate::manifest::ArtifactWriter;
use crate::settings::{resolve, Settings};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(&a),
        Command::Select(a) => select(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Pairs(a) => pairs(&a),
        Command::Report(a) => report(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn open_catalog(path: &Path) -> Result<FeatureCatalog, CliError> {
    Ok(load_catalog(path, CatalogFormat::from_path(path))?)
}

fn ingest(args: &IngestArgs) -> Result<(), CliError> {
    let catalog = open_catalog(&args.catalog)?;
    let groups: BTreeSet<&str> = catalog.iter().filter_map(|r| r.group_id()).collect();
    let mut categories: BTreeMap<&str, usize> = BTreeMap::new();
    for r in catalog.iter() {
        *categories.entry(r.category.map_or("unspecified", |c| c.as_str())).or_default() += 1;
    }
    let summary = serde_json::json!({
        "features": catalog.len(),
        "groups": groups.len(),
        "ungrouped": catalog.iter().filter(|r| r.group_id().is_none()).count(),
        "categories": categories,
    });

    let mut w = ArtifactWriter::create(&args.out, "ingest", serde_json::json!({ "catalog": args.catalog }))?;
    w.add_catalog(&args.catalog)?;
    w.write("catalog.jsonl", catalog.to_jsonl().as_bytes())?;
    w.write_json("summary.json", &summary)?;
    w.finish()?;
    println!("{summary}");
    Ok(())
}

fn require_catalog(settings: &Settings) -> Result<&Path, CliError> {
    settings
        .catalog
        .as_deref()
        .ok_or_else(|| CliError::config("a catalog is required (--catalog or `catalog` in the config file)"))
}

fn check_k(k: usize, catalog: &FeatureCatalog) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::config("k must be at least 1"));
    }
    if k > catalog.len() {
        return Err(CliError::config(format!(
            "k = {k} exceeds the catalog size of {} features",
            catalog.len()
        )));
    }
    Ok(())
}

/// Catches configuration problems that do not need a backend.
fn preflight(config: &SelectionConfig, catalog: &FeatureCatalog) -> Result<(), CliError> {
    check_k(config.target_k, catalog)?;
    config.validate()?;
    plan_buckets(&catalog.names(), config)?;
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    phase: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    bucket: Option<usize>,
    #[serde(flatten)]
    record: &'a StepRecord,
}

fn render_trace(result: &PipelineResult, verbose: bool) -> String {
    let mut out = String::new();
    let mut push = |phase: u8, bucket: Option<usize>, record: &StepRecord| {
        let stripped;
        let record = if verbose {
            record
        } else {
            stripped = StepRecord { raw_response: String::new(), ..record.clone() };
            &stripped
        };
        out.push_str(&serde_json::to_string(&TraceLine { phase, bucket, record }).expect("trace serializes"));
        out.push('\n');
    };
    for (b, state) in result.phase1_states.iter().enumerate() {
        for record in &state.trace {
            push(1, Some(b), record);
        }
    }
    if result.refined {
        for record in &result.final_state.trace {
            push(2, None, record);
        }
    }
    out
}

fn select(args: &SelectArgs) -> Result<(), CliError> {
    let settings = resolve(&args.selection, args.k, args.verbose_trace)?;
    if settings.k.is_none() {
        return Err(CliError::config("k is required (--k or `k` in the config file)"));
    }
    let catalog_path = require_catalog(&settings)?;
    let catalog = open_catalog(catalog_path)?;
    let config = &settings.selection;
    preflight(config, &catalog)?;
    let backend = build_backend(&config.backend)?;

    let mut w = ArtifactWriter::create(&args.out, "select", settings.resolved.clone())?;
    if let Some(path) = &settings.config_path {
        w.set_config_file(path)?;
    }
    w.set_seed(config.seed);
    w.add_catalog(catalog_path)?;
    if let Some(script) = &config.backend.script_path {
        w.add_input(script)?;
    }

    let result = run_pipeline(&catalog, config, backend.as_ref())?;
    w.write_json("selected.json", &result.final_selected)?;
    w.write("trace.jsonl", render_trace(&result, settings.verbose_trace).as_bytes())?;
    w.write_json(
        "plan.json",
        &serde_json::json!({
            "buckets": result.plan.buckets,
            "per_bucket_target": result.plan.per_bucket_target,
            "bucket_targets": result.plan.bucket_targets,
            "refined_pool": result.refined_pool,
        }),
    )?;
    w.finish()?;
    println!("selected {} features -> {}", result.final_selected.len(), args.out.join("selected.json").display());
    Ok(())
}

fn metric(arg: MetricArg) -> Metric {
    match arg {
        MetricArg::Auc => Metric::Auc,
        MetricArg::Ne => Metric::Ne,
    }
}

fn read_selected(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: expected a JSON array of names: {e}", path.display())))
}

fn mofa_selection(
    catalog: &FeatureCatalog,
    config: &SelectionConfig,
    backend: &dyn SelectorBackend,
    k: usize,
) -> Result<Vec<String>, CliError> {
    let config = SelectionConfig { target_k: k, ..config.clone() };
    preflight(&config, catalog)?;
    Ok(run_pipeline(catalog, &config, backend)?.final_selected)
}

fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let settings = resolve(&args.selection, None, false)?;
    let catalog_path = require_catalog(&settings)?;
    let catalog = open_catalog(catalog_path)?;
    let train = load_dataset(&args.train, &args.label_column)?;
    let test = load_dataset(&args.test, &args.label_column)?;
    let metric = metric(args.metric);
    let seed = settings.selection.seed;

    let mut ks = args.k.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut methods = args.methods.clone();
    methods.dedup();
    for &k in &ks {
        check_k(k, &catalog)?;
        if k > train.n_features() {
            return Err(CliError::config(format!(
                "k = {k} exceeds the {} feature columns of the training data",
                train.n_features()
            )));
        }
    }

    let resolved = serde_json::json!({
        "selection": settings.resolved,
        "k": ks,
        "methods": methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "metric": metric,
        "lasso_c": args.lasso_c,
        "task": args.task,
        "label_column": args.label_column,
        "selected": args.selected,
    });
    let mut w = ArtifactWriter::create(&args.out, "evaluate", resolved)?;
    if let Some(path) = &settings.config_path {
        w.set_config_file(path)?;
    }
    w.set_seed(seed);
    w.add_catalog(catalog_path)?;
    w.add_input(&args.train)?;
    w.add_input(&args.test)?;

    let fixed_mofa = match &args.selected {
        Some(path) if methods.contains(&MethodArg::Mofa) => {
            w.add_input(path)?;
            let selected = read_selected(path)?;
            if let Some(&k) = ks.iter().find(|&&k| k != selected.len()) {
                return Err(CliError::config(format!(
                    "{} holds {} features but k = {k} was requested",
                    path.display(),
                    selected.len()
                )));
            }
            Some(selected)
        }
        _ => None,
    };
    let backend = if methods.contains(&MethodArg::Mofa) && fixed_mofa.is_none() {
        Some(build_backend(&settings.selection.backend)?)
    } else {
        None
    };
    let lasso = if methods.contains(&MethodArg::Lasso) {
        let cfg = LassoConfig { c: args.lasso_c, ..LassoConfig::default() };
        Some(fit_l1_logistic(&train, &cfg)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut selections = Vec::new();
    for &k in &ks {
        for &method in &methods {
            let selected = match method {
                MethodArg::Mofa => match (&fixed_mofa, &backend) {
                    (Some(fixed), _) => fixed.clone(),
                    (None, Some(b)) => mofa_selection(&catalog, &settings.selection, b.as_ref(), k)?,
                    (None, None) => unreachable!("backend is built whenever mofa runs"),
                },
                MethodArg::Lasso => lasso_top_k(lasso.as_ref().expect("fitted when requested"), k)?,
                MethodArg::Random => random_select(train.feature_names(), k, derive_seed(seed, "random_baseline"))?,
            };
            info!("{} k={k}: {:?}", method.as_str(), selected);
            let (train_metric, test_metric) = train_eval(&train, &test, &selected, metric)?;
            rows.push(EvaluationReport {
                task: args.task.clone(),
                k,
                method: method.as_str().to_string(),
                group_count: group_count(&selected, &catalog)?,
                train_metric,
                test_metric,
                metric_name: metric,
                selected: selected.clone(),
                config_digest: w.config_digest().to_string(),
            });
            selections.push(serde_json::json!({ "method": method.as_str(), "k": k, "selected": selected }));
        }
    }

    let markdown = render_report(&rows, ReportFormat::Markdown);
    w.write("report.csv", render_report(&rows, ReportFormat::Csv).as_bytes())?;
    w.write("report.md", markdown.as_bytes())?;
    w.write_json("selections.json", &selections)?;
    w.finish()?;
    print!("{markdown}");
    Ok(())
}

fn pairs(args: &PairsArgs) -> Result<(), CliError> {
    let table = load_signal_table(&args.signals)?;
    let method = match args.correlation {
        CorrelationArg::Pearson => CorrelationMethod::Pearson,
        CorrelationArg::Spearman => CorrelationMethod::Spearman,
    };
    let (pool, catalog) = build_pair_pool(&table, method)?;
    let mut w = ArtifactWriter::create(
        &args.out,
        "pairs",
        serde_json::json!({ "signals": args.signals, "correlation": method }),
    )?;
    w.add_input(&args.signals)?;
    let mut lines = String::new();
    for pair in &pool {
        lines.push_str(&serde_json::to_string(pair).expect("pair serializes"));
        lines.push('\n');
    }
    w.write("pairs.jsonl", lines.as_bytes())?;
    w.write("catalog.jsonl", catalog.to_jsonl().as_bytes())?;
    w.finish()?;
    println!(
        "{} signals -> {} pairs -> {}",
        table.signal_names().len(),
        pool.len(),
        args.out.join("catalog.jsonl").display()
    );
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let mut w = ArtifactWriter::create(&args.out, "report", serde_json::json!({ "input": args.input }))?;
    let mut rows = Vec::new();
    for path in &args.input {
        w.add_input(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        rows.extend(parse_report_csv(&text).map_err(|e| CliError::from(e).context(path.display()))?);
    }
    let markdown = render_report(&rows, ReportFormat::Markdown);
    w.write("report.md", markdown.as_bytes())?;
    w.write("report.csv", render_report(&rows, ReportFormat::Csv).as_bytes())?;
    w.finish()?;
    print!("{markdown}");
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        n_features: args.features,
        n_informative: args.informative,
        n_groups: args.groups,
        n_rows_train: args.train_rows,
        n_rows_test: args.test_rows,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let corpus = generate_synthetic(&spec)?;
    let mut w = ArtifactWriter::create(&args.out, "synth", serde_json::to_value(&spec).expect("spec serializes"))?;
    w.set_seed(args.seed);
    w.write("catalog.jsonl", corpus.catalog.to_jsonl().as_bytes())?;
    w.write("train.csv", corpus.train.to_csv_string(LABEL_COLUMN).as_bytes())?;
    w.write("test.csv", corpus.test.to_csv_string(LABEL_COLUMN).as_bytes())?;
    w.write_json("truth.json", &corpus.truth)?;
    w.finish()?;
    println!(
        "{} features ({} informative), {} train / {} test rows -> {}",
        spec.n_features,
        corpus.truth.len(),
        corpus.train.n_rows(),
        corpus.test.n_rows(),
        args.out.display()
    );
    Ok(())
}
