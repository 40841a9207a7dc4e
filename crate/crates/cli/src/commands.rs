use crate::artifacts::*;
use crate::cli::*;
use anyhow::{bail, Context, Result};
use qsor_core::analysis::{
    cooccurrence_embedding_correlation, kde_grid, nearest_neighbors, pca, transfer_ablation, write_projection_csv, z_trim_mask,
    Bandwidth, EmbeddingSource, EmbeddingTable, GridSpec, TransferInputs, CONTOUR_MASS,
};
use qsor_core::baselines::{fit_random_forest_labels, ForestConfig, KnnConfig, KnnModel};
use qsor_core::dataset::{cooccurrence, filter_labels, merge_sources, write_rejects, CooccurrenceOptions, FilterConfig, LabeledDataset};
use qsor_core::datasplit::{iterative_stratify, kfold, random_split, stratification_deviation, Split, SplitAssignment};
use qsor_core::fingerprint::fingerprint;
use qsor_core::gnn::{train as train_network, write_history_csv, GnnConfig, GnnModel, TrainData};
use qsor_core::hashing::derive_seed;
use qsor_core::metrics::{optimize_thresholds, MetricReport};
use qsor_core::molgraph::{canonical_form, parse_smiles};
use qsor_core::synth::{generate, SynthConfig};
use serde::Serialize;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

fn rows<T: Clone>(m: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| m[i].clone()).collect()
}

fn write_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["id", "smiles", "descriptors", "source"])?;
    for r in &ds.records {
        let desc: Vec<&str> = r.labels.iter().map(String::as_str).collect();
        w.write_record([r.id.as_str(), r.canonical.as_str(), &desc.join(";"), r.source.as_deref().unwrap_or("")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse(args: &ParseArgs, run: &RunInfo) -> Result<()> {
    if !args.smiles.is_empty() {
        let mut out = std::io::stdout().lock();
        for s in &args.smiles {
            let g = parse_smiles(s).input_context(|| format!("SMILES `{s}`"))?;
            let summary = json!({
                "input": s,
                "canonical": canonical_form(&g),
                "atoms": g.num_atoms(),
                "bonds": g.num_bonds(),
                "rings": g.rings().len(),
                "aromatic_atoms": g.atoms().iter().filter(|a| a.aromatic).count(),
            });
            writeln!(out, "{summary}")?;
        }
        return Ok(());
    }
    let input = args.input.as_deref().expect("clap requires --input");
    let output = args.output.as_deref().expect("clap requires --output");
    require_output_parent(output)?;
    let mut inputs = vec![input];
    let mut ds = load_dataset(input, args.synonyms.as_deref())?;
    let mut merge_stats = None;
    if let Some(other) = &args.merge {
        inputs.push(other);
        let b = load_dataset(other, args.synonyms.as_deref())?;
        let (merged, stats) = merge_sources(&ds.records, &b.records);
        log::info!("merged: {} only in first, {} only in second, {} shared", stats.only_a, stats.only_b, stats.overlap);
        ds = merged;
        merge_stats = Some(stats);
    }
    if let Some(p) = &args.rejects {
        require_output_parent(p)?;
        let loaded = qsor_core::dataset::load_csv(input, &Default::default(), &Default::default())
            .input_context(|| format!("reading {}", input.display()))?;
        write_rejects(p, &loaded.rejected)?;
    }
    let mut filter_report = None;
    if args.min_count > 0 {
        let cfg = FilterConfig { min_count: args.min_count, keep_unlabeled: args.keep_unlabeled, ..FilterConfig::default() };
        let (filtered, report) = filter_labels(&ds, &cfg).input_context(|| "filtering descriptors".into())?;
        log::info!("kept {} descriptors on {} molecules", filtered.vocabulary.len(), filtered.len());
        ds = filtered;
        filter_report = Some(report);
    }
    write_dataset(output, &ds)?;
    let mut outputs = vec![output.to_path_buf()];
    if let Some(v) = &args.vocabulary {
        require_output_parent(v)?;
        ds.vocabulary_file(args.min_count).save(v)?;
        outputs.push(v.clone());
    }
    println!(
        "{}",
        json!({"molecules": ds.len(), "descriptors": ds.vocabulary.len(), "merge": merge_stats, "filter": filter_report})
    );
    write_manifest(run, args, &inputs, &outputs, output)
}

pub fn fp(args: &FpArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    let cfg = fingerprint_config(&args.features, FeatureKind::MorganCounts)?;
    let ds = load_dataset(&args.input, None)?;
    let graphs = graphs_of(&ds)?;
    let mut w = csv::Writer::from_path(&args.output)?;
    w.write_record(["id", "n_bits", "entries"])?;
    for (r, g) in ds.records.iter().zip(&graphs) {
        let f = fingerprint(g, &cfg)?;
        let entries: Vec<String> = f.nonzero().iter().map(|(i, c)| format!("{i}:{c}")).collect();
        w.write_record([r.id.clone(), cfg.n_bits.to_string(), entries.join(";")])?;
    }
    w.flush()?;
    write_manifest(run, &json!({"args": args, "fingerprint": cfg}), &[&args.input], std::slice::from_ref(&args.output), &args.output)
}

pub fn split(args: &SplitArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    let ds = load_dataset(&args.input, None)?;
    let labels = ds.label_matrix();
    let seed = derive_seed(run.seed, &[STREAM_SPLIT]);
    let stratified = args.method == SplitMethod::Stratified;
    let (assignment, names) = match args.folds {
        Some(k) => {
            let s = kfold(ds.len(), k, stratified.then_some(labels.as_slice()), seed).input_context(|| "fold assignment".into())?;
            (s, (0..k).map(|i| format!("fold{i}")).collect::<Vec<_>>())
        }
        None => {
            let s = if stratified {
                iterative_stratify(&labels, &args.ratios, args.order, seed)
            } else {
                random_split(ds.len(), &args.ratios, seed)
            }
            .input_context(|| "split options".into())?;
            let names = if args.ratios.len() == 3 {
                Split::ALL.iter().map(|s| s.name().to_string()).collect()
            } else {
                (0..args.ratios.len()).map(|i| format!("group{i}")).collect()
            };
            (s, names)
        }
    };
    let method = if stratified { "stratified" } else { "random" };
    let ids = ds.records.iter().map(|r| r.id.clone()).collect();
    write_json(&args.output, &SplitFile::new(method, args.order, ids, &assignment, names))?;
    if !labels.is_empty() && !ds.vocabulary.is_empty() {
        let dev = stratification_deviation(&labels, &assignment, args.order.max(1));
        println!("{}", json!({"sizes": assignment.sizes(), "deviation": dev}));
    }
    write_manifest(run, args, &[&args.input], std::slice::from_ref(&args.output), &args.output)
}

struct Prepared {
    ds: LabeledDataset,
    split: SplitAssignment,
    labels: Vec<Vec<u8>>,
    train: Vec<usize>,
    val: Vec<usize>,
}

fn prepare(input: &Path, split: &Path) -> Result<Prepared> {
    let ds = load_dataset(input, None)?;
    let split = SplitFile::load(split)?.align(&ds)?;
    if split.n_groups() < 2 {
        bail!(InputError("the split needs at least a train and a validation group".into()));
    }
    let labels = ds.label_matrix();
    let train = split.indices(Split::Train.index());
    let val = split.indices(Split::Val.index());
    if train.is_empty() {
        bail!(InputError("the train split is empty".into()));
    }
    Ok(Prepared { ds, split, labels, train, val })
}

fn tuned_thresholds(scores: &[Vec<f64>], labels: &[Vec<u8>], n_labels: usize) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Ok(vec![0.5; n_labels]);
    }
    Ok(optimize_thresholds(scores, labels)?)
}

pub fn train(args: &TrainArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    let p = prepare(&args.input, &args.split)?;
    if p.ds.vocabulary.is_empty() {
        bail!(InputError("the dataset has no descriptors".into()));
    }
    let graphs = graphs_of(&p.ds)?;
    let n_labels = p.ds.vocabulary.len();
    let mut outputs = vec![args.output.clone()];
    let model = match args.model {
        ModelKind::Gcn | ModelKind::Mpnn => {
            let mut cfg = if args.model == ModelKind::Gcn { GnnConfig::gcn(n_labels) } else { GnnConfig::mpnn(n_labels) };
            cfg.train.seed = derive_seed(run.seed, &[STREAM_GNN]);
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = args.batch_size {
                cfg.train.batch_size = b;
            }
            let mut net = GnnModel::new(cfg).input_context(|| "network options".into())?;
            let inputs = featurize(&net, &graphs)?;
            let history = train_network(&mut net, TrainData { inputs: &inputs, labels: &p.labels }, &p.train, &p.val)?;
            if let Some(h) = &args.history {
                require_output_parent(h)?;
                write_history_csv(h, &history)?;
                outputs.push(h.clone());
            }
            let val_scores = net.predict_proba(&rows(&inputs, &p.val))?;
            let thresholds = tuned_thresholds(&val_scores, &rows(&p.labels, &p.val), n_labels)?;
            ModelArtifact {
                format_version: MODEL_FORMAT,
                vocabulary: p.ds.vocabulary.clone(),
                thresholds,
                model: ModelPayload::Gnn { checkpoint: net.to_checkpoint() },
            }
        }
        ModelKind::Rf => {
            let features = fingerprint_config(&args.features, FeatureKind::MorganCounts)?;
            let x = fingerprints(&graphs, &features)?;
            let mut cfg = ForestConfig { seed: derive_seed(run.seed, &[STREAM_FOREST]), ..ForestConfig::default() };
            if let Some(t) = args.trees {
                cfg.n_trees = t;
            }
            cfg.max_depth = args.max_depth.or(cfg.max_depth);
            if let Some(m) = args.min_leaf {
                cfg.min_leaf = m;
            }
            let forest = fit_random_forest_labels(&rows(&x, &p.train), &rows(&p.labels, &p.train), &cfg).input_context(|| "forest options".into())?;
            let val_scores = forest.predict_all(&rows(&x, &p.val))?;
            let thresholds = tuned_thresholds(&val_scores, &rows(&p.labels, &p.val), n_labels)?;
            ModelArtifact {
                format_version: MODEL_FORMAT,
                vocabulary: p.ds.vocabulary.clone(),
                thresholds,
                model: ModelPayload::Rf { features, forest },
            }
        }
        ModelKind::Knn => {
            let features = fingerprint_config(&args.features, FeatureKind::PathBits)?;
            let x = fingerprints(&graphs, &features)?;
            let mut cfg = KnnConfig::default();
            if let Some(k) = args.k {
                cfg.k = k;
            }
            if let Some(m) = args.metric {
                cfg.metric = metric(m);
            }
            let knn = KnnModel::from_labels(rows(&x, &p.train), &rows(&p.labels, &p.train), cfg).input_context(|| "KNN options".into())?;
            let val_scores = knn.predict_all(&rows(&x, &p.val))?;
            let thresholds = tuned_thresholds(&val_scores, &rows(&p.labels, &p.val), n_labels)?;
            ModelArtifact {
                format_version: MODEL_FORMAT,
                vocabulary: p.ds.vocabulary.clone(),
                thresholds,
                model: ModelPayload::Knn { features, knn },
            }
        }
    };
    write_json(&args.output, &model)?;
    log::info!("wrote {} model for {} descriptors", model.kind(), n_labels);
    write_manifest(run, args, &[&args.input, &args.split], &outputs, &args.output)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    model: String,
    subset: SubsetArg,
    n_molecules: usize,
    n_descriptors: usize,
    mean_auroc: Option<f64>,
    metrics: MetricReport,
}

pub fn eval(args: &EvalArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    let model = ModelArtifact::load(&args.model)?;
    let ds = load_dataset(&args.input, None)?;
    let split = SplitFile::load(&args.split)?.align(&ds)?;
    let idx: Vec<usize> = match args.subset {
        SubsetArg::All => (0..ds.len()).collect(),
        SubsetArg::Train => split.indices(Split::Train.index()),
        SubsetArg::Val => split.indices(Split::Val.index()),
        SubsetArg::Test => split.indices(Split::Test.index()),
    };
    if idx.is_empty() {
        bail!(InputError(format!("the {:?} subset is empty", args.subset)));
    }
    let graphs = graphs_of(&ds)?;
    let labels = label_matrix(&ds, &model.vocabulary);
    let subset_graphs = rows(&graphs, &idx);
    let scores = model.predict(&subset_graphs)?;
    let truth = rows(&labels, &idx);
    let metrics = MetricReport::compute(
        &model.vocabulary,
        &scores,
        &truth,
        Some(&model.thresholds),
        args.resamples,
        derive_seed(run.seed, &[STREAM_BOOTSTRAP]),
    )?;
    let report = EvalReport {
        model: model.kind().into(),
        subset: args.subset,
        n_molecules: idx.len(),
        n_descriptors: model.vocabulary.len(),
        mean_auroc: metrics.auroc.mean,
        metrics,
    };
    write_json(&args.output, &report)?;
    let mut outputs = vec![args.output.clone()];
    if let Some(p) = &args.predictions {
        require_output_parent(p)?;
        let mut w = csv::Writer::from_path(p)?;
        let mut header = vec!["id".to_string()];
        header.extend(model.vocabulary.iter().cloned());
        w.write_record(&header)?;
        for (&i, row) in idx.iter().zip(&scores) {
            let mut rec = vec![ds.records[i].id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        outputs.push(p.clone());
    }
    println!("{}", json!({"model": report.model, "subset": args.subset, "mean_auroc": report.mean_auroc}));
    write_manifest(run, args, &[&args.model, &args.input, &args.split], &outputs, &args.output)
}

pub fn embed(args: &EmbedArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    let ds = load_dataset(&args.input, None)?;
    let graphs = graphs_of(&ds)?;
    let ids: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
    let mut inputs: Vec<&Path> = vec![&args.input];
    let table = match &args.model {
        Some(path) => {
            inputs.push(path);
            let artifact = ModelArtifact::load(path)?;
            let Some(net) = artifact.network()? else {
                bail!(InputError(format!("{} is a {} model; embeddings need a network", path.display(), artifact.kind())));
            };
            let rows = net.embed_all(&featurize(&net, &graphs)?)?;
            EmbeddingTable::new(ids, rows, EmbeddingSource::Gnn)?
        }
        None => {
            let cfg = fingerprint_config(&args.features, FeatureKind::MorganBits)?;
            EmbeddingTable::new(ids, fingerprints(&graphs, &cfg)?, EmbeddingSource::Fingerprint)?
        }
    };
    table.write_csv(&args.output)?;
    write_manifest(run, args, &inputs, std::slice::from_ref(&args.output), &args.output)
}

pub fn nn(args: &NnArgs, run: &RunInfo) -> Result<()> {
    require_file(&args.embeddings)?;
    if let Some(o) = &args.output {
        require_output_parent(o)?;
    }
    let table = EmbeddingTable::read_csv(&args.embeddings, EmbeddingSource::Gnn)
        .input_context(|| format!("reading embeddings {}", args.embeddings.display()))?;
    if args.k == 0 || args.k >= table.len() {
        bail!(InputError(format!("--k must lie in 1..{}", table.len())));
    }
    let queries: Vec<String> = if args.query.is_empty() { table.ids.clone() } else { args.query.clone() };
    let mut records = Vec::new();
    for q in &queries {
        let found = nearest_neighbors(&table, q, args.k, metric(args.metric)).input_context(|| format!("query `{q}`"))?;
        for (rank, n) in found.iter().enumerate() {
            records.push([q.clone(), (rank + 1).to_string(), n.id.clone(), format!("{:?}", n.distance)]);
        }
    }
    let write = |w: &mut csv::Writer<Box<dyn Write>>| -> Result<()> {
        w.write_record(["query", "rank", "neighbor", "distance"])?;
        for r in &records {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    };
    match &args.output {
        Some(path) => {
            let file: Box<dyn Write> = Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write(&mut csv::Writer::from_writer(file))?;
            write_manifest(run, args, &[&args.embeddings], std::slice::from_ref(path), path)
        }
        None => write(&mut csv::Writer::from_writer(Box::new(std::io::stdout()))),
    }
}

pub fn transfer(args: &TransferArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    let p = prepare(&args.input, &args.split)?;
    let graphs = graphs_of(&p.ds)?;
    let features = fingerprint_config(&args.features, FeatureKind::MorganCounts)?;
    let fps = fingerprints(&graphs, &features)?;
    let mut cfg = GnnConfig::gcn(p.ds.vocabulary.len().max(1));
    cfg.train.seed = derive_seed(run.seed, &[STREAM_GNN]);
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let inputs = featurize(&GnnModel::new(cfg.clone())?, &graphs)?;
    let rf = ForestConfig {
        n_trees: args.trees.unwrap_or(ForestConfig::default().n_trees),
        seed: derive_seed(run.seed, &[STREAM_FOREST]),
        ..ForestConfig::default()
    };
    let ti = TransferInputs { graphs: &inputs, fingerprints: &fps, labels: &p.labels, vocabulary: &p.ds.vocabulary, split: &p.split };
    let mut reports = Vec::new();
    for label in &args.held_out {
        if !p.ds.vocabulary.contains(label) {
            bail!(InputError(format!("descriptor `{label}` is not in the dataset")));
        }
        let r = transfer_ablation(ti, label, &cfg, &rf, args.full_gnn, args.resamples, derive_seed(run.seed, &[STREAM_TRANSFER]))
            .input_context(|| format!("holding out `{label}`"))?;
        log::info!("{label}: embedding RF {:.4}, fingerprint RF {:.4}", r.embedding_rf.auroc, r.fingerprint_rf.auroc);
        reports.push(r);
    }
    write_json(&args.output, &json!({"fingerprint": feature_name(&features), "reports": reports}))?;
    write_manifest(run, args, &[&args.input, &args.split], std::slice::from_ref(&args.output), &args.output)
}

fn write_matrix(path: &Path, labels: &[String], m: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (l, row) in labels.iter().zip(m) {
        let mut rec = vec![l.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn file_safe(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

pub fn report(args: &ReportArgs, run: &RunInfo) -> Result<()> {
    if !args.out_dir.is_dir() {
        std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    }
    let ds = load_dataset(&args.input, None)?;
    let mut inputs: Vec<&Path> = vec![&args.input];
    let mut outputs: Vec<PathBuf> = Vec::new();
    let out = |name: &str| args.out_dir.join(name);

    let counts_path = out("label_counts.csv");
    let mut w = csv::Writer::from_path(&counts_path)?;
    w.write_record(["label", "count"])?;
    for (l, c) in ds.vocabulary.iter().zip(ds.label_counts()) {
        w.write_record([l.clone(), c.to_string()])?;
    }
    w.flush()?;
    outputs.push(counts_path);

    let opts = CooccurrenceOptions { drop_most_frequent: args.drop_most_frequent, ..CooccurrenceOptions::default() };
    let cooc = match cooccurrence(&ds, &opts) {
        Ok(c) => {
            write_matrix(&out("cooccurrence_counts.csv"), &c.labels, &c.counts)?;
            write_matrix(&out("cooccurrence_normalized.csv"), &c.labels, &c.normalized)?;
            outputs.extend([out("cooccurrence_counts.csv"), out("cooccurrence_normalized.csv")]);
            Some(c)
        }
        Err(e) => {
            log::warn!("skipping co-occurrence: {e}");
            None
        }
    };

    let mut summary = serde_json::Map::new();
    summary.insert("molecules".into(), json!(ds.len()));
    summary.insert("descriptors".into(), json!(ds.vocabulary.len()));
    if let Some(c) = &cooc {
        summary.insert("cooccurrence".into(), json!({"iterations": c.iterations, "converged": c.converged, "excluded": c.excluded}));
    }

    if let Some(path) = &args.embeddings {
        require_file(path)?;
        inputs.push(path);
        let table = EmbeddingTable::read_csv(path, EmbeddingSource::Gnn).input_context(|| format!("reading embeddings {}", path.display()))?;
        let by_id: std::collections::HashMap<&str, &qsor_core::dataset::Record> = ds.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let label_text: Vec<String> = table
            .ids
            .iter()
            .map(|id| by_id.get(id.as_str()).map(|r| r.labels.iter().cloned().collect::<Vec<_>>().join(";")).unwrap_or_default())
            .collect();
        let (fit, projected) = pca(&table.rows, args.components).input_context(|| "projection".into())?;
        let keep = args.max_z.map(|z| z_trim_mask(&projected, z));
        write_projection_csv(&out("projection.csv"), &table.ids, &projected, Some(&label_text), keep.as_deref())?;
        write_json(&out("pca.json"), &fit)?;
        outputs.extend([out("projection.csv"), out("pca.json")]);

        if args.components >= 2 {
            let mut densities = Vec::new();
            for label in &args.kde_labels {
                let members: Vec<(f64, f64)> = table
                    .ids
                    .iter()
                    .enumerate()
                    .filter(|&(i, id)| keep.as_ref().is_none_or(|k| k[i]) && by_id.get(id.as_str()).is_some_and(|r| r.labels.contains(label)))
                    .map(|(i, _)| (projected[i][0], projected[i][1]))
                    .collect();
                if members.is_empty() {
                    bail!(InputError(format!("no embedded molecule carries `{label}`")));
                }
                let spec = GridSpec { nx: args.grid, ny: args.grid, ..GridSpec::default() };
                let g = kde_grid(&members, None, Bandwidth::Scott, &spec, Some(label.clone())).input_context(|| format!("density for `{label}`"))?;
                let name = format!("kde_{}.csv", file_safe(label));
                let mut w = csv::Writer::from_path(out(&name))?;
                w.write_record(["x", "y", "density"])?;
                for iy in 0..g.ny {
                    for ix in 0..g.nx {
                        let (x, y) = g.cell_center(ix, iy);
                        w.write_record([format!("{x:?}"), format!("{y:?}"), format!("{:?}", g.at(ix, iy))])?;
                    }
                }
                w.flush()?;
                outputs.push(out(&name));
                densities.push(json!({"label": label, "file": name, "bandwidth": g.bandwidth, "members": members.len(),
                    "contour_mass": CONTOUR_MASS, "contour_levels": g.contour_levels(&CONTOUR_MASS)}));
            }
            summary.insert("densities".into(), json!(densities));
        }
        summary.insert("explained_variance_ratio".into(), json!(fit.explained_variance_ratio));
        if let Some(c) = &cooc {
            let subset = LabeledDataset {
                records: ds.records.iter().filter(|r| table.index_of(&r.id).is_ok()).cloned().collect(),
                vocabulary: ds.vocabulary.clone(),
            };
            match cooccurrence_embedding_correlation(c, &subset, &table, metric(args.metric)) {
                Ok(r) => {
                    summary.insert("cooccurrence_embedding_pearson".into(), json!(r));
                }
                Err(e) => log::warn!("skipping co-occurrence correlation: {e}"),
            }
        }
    }

    if let Some(path) = &args.eval {
        inputs.push(path);
        let report: serde_json::Value = read_json(path, "evaluation report")?;
        let per_label = report
            .pointer("/metrics/per_label")
            .and_then(|v| v.as_array())
            .ok_or_else(|| input_error(format!("{} has no metrics.per_label table", path.display())))?;
        let counts: std::collections::HashMap<&str, usize> = ds.vocabulary.iter().map(String::as_str).zip(ds.label_counts()).collect();
        let mut w = csv::Writer::from_path(out("per_descriptor.csv"))?;
        let fields = ["auroc", "auprc", "threshold", "precision", "recall", "f1"];
        let mut header = vec!["label", "count"];
        header.extend(fields);
        w.write_record(&header)?;
        for m in per_label {
            let label = m.get("label").and_then(|v| v.as_str()).unwrap_or_default();
            let mut rec = vec![label.to_string(), counts.get(label).map_or(String::new(), |c| c.to_string())];
            rec.extend(fields.iter().map(|f| m.get(*f).and_then(|v| v.as_f64()).map_or(String::new(), |v| format!("{v:?}"))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        outputs.push(out("per_descriptor.csv"));
    }

    write_json(&out("summary.json"), &summary)?;
    outputs.push(out("summary.json"));
    write_manifest(run, args, &inputs, &outputs, &args.out_dir)
}

pub fn synth(args: &SynthArgs, run: &RunInfo) -> Result<()> {
    require_output_parent(&args.output)?;
    if args.n == 0 || args.labels == 0 {
        bail!(InputError("--n and --labels must be positive".into()));
    }
    let corpus = generate(&SynthConfig { n_molecules: args.n, n_labels: args.labels, seed: derive_seed(run.seed, &[STREAM_SYNTH]) });
    std::fs::write(&args.output, corpus.to_csv()).with_context(|| format!("writing {}", args.output.display()))?;
    write_manifest(run, args, &[], std::slice::from_ref(&args.output), &args.output)
}
