use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::path::Path;

use flowsteer::analysis::{
    directions_to_bytes, edit_record, position_alignment_profile, DirectionMethod, DirectionSet,
};
use flowsteer::classify::{auc, binary_score, classify as classify_one, Candidate};
use flowsteer::corpus::{
    read_corpus, synth_corpus, ActivationRecord, Corpus, PlantedOffset, SynthCondition, SynthSpec,
};
use flowsteer::flow::{flow_map, guidance_grid, preset, EditSpec, SolveSpec};
use flowsteer::model::{Condition, ModelConfig, ModelParams, Site};
use flowsteer::numerics::{narrow, norm, widen, sample_standard_gaussian, squared_distance, sub, Rng};
use flowsteer::protocol::{serve, ServerLimits};
use flowsteer::train::{train as run_training, TrainConfig};
use rayon::prelude::*;
use serde::Deserialize;

use crate::args::*;
use crate::{Classify, CmdResult, Failure};

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn load_corpus(path: &Path, flag: &str) -> CmdResult<Corpus> {
    read_corpus(path).usage(&format!("{flag} {}", path.display()))
}

fn load_model(path: &Path) -> CmdResult<ModelParams> {
    ModelParams::load(path).usage(&format!("--model {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, bytes).runtime(&format!("writing {}", path.display()))
}

fn check_compatible(model: &ModelParams, corpus: &Corpus, flag: &str) -> CmdResult {
    let cfg = model.config();
    if cfg.activation_dim != corpus.activation_dim() || cfg.condition_dim != corpus.condition_dim() {
        return usage(format!(
            "{flag}: corpus has activation/condition dims {}/{}, model expects {}/{}",
            corpus.activation_dim(),
            corpus.condition_dim(),
            cfg.activation_dim,
            cfg.condition_dim
        ));
    }
    check_layers(corpus.records(), cfg, flag)
}

fn check_layers(records: &[ActivationRecord], cfg: &ModelConfig, flag: &str) -> CmdResult {
    if let Some(r) = records.iter().find(|r| r.layer as usize >= cfg.max_layers) {
        return usage(format!(
            "{flag}: record at layer {} but the model has {} layer slots",
            r.layer, cfg.max_layers
        ));
    }
    Ok(())
}

fn embedding(corpus: &Corpus, id: u32, flag: &str) -> CmdResult<Vec<f64>> {
    Ok(corpus.condition(id).usage(flag)?.embedding_f64())
}

/// Preset first, then explicit flags on top.
fn edit_spec(solver: &SolverArgs, source: Vec<f64>, target: Vec<f64>) -> CmdResult<EditSpec> {
    let mut spec = EditSpec::new(source, target, 0.5);
    if let Some(name) = solver.preset {
        spec = spec.with_preset(preset(name.as_str()).expect("every preset name is defined"));
    }
    if let Some(s) = solver.strength {
        spec.strength = s;
    }
    if let Some(n) = solver.steps {
        spec.forward.steps = n;
    }
    if let Some(n) = solver.inversion_steps {
        spec.inversion.steps = n;
    }
    if let Some(w) = solver.guidance {
        spec.forward.guidance_scale = w;
    }
    if let Some(w) = solver.inversion_guidance {
        spec.inversion.inversion_guidance = w;
    }
    spec.validate().usage("solver flags")?;
    Ok(spec)
}

fn edit_all(model: &ModelParams, corpus: &Corpus, spec: &EditSpec) -> CmdResult<Vec<Vec<f64>>> {
    corpus
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            edit_record(model, Site::new(r.layer, r.position), &r.activation_f64(), corpus.normalization(), spec)
                .runtime(&format!("record {i}"))
        })
        .collect()
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).usage(&format!("--spec {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text).usage(&format!("--spec {}", path.display()))?
        }
        None => {
            if a.dim == 0 {
                return usage("--dim must be >= 1");
            }
            if a.records == 0 {
                return usage("--records must be >= 1");
            }
            if a.positions == 0 {
                return usage("--positions must be >= 1");
            }
            if !(a.scale >= 0.0 && a.scale.is_finite()) {
                return usage(format!("--scale must be finite and >= 0, got {}", a.scale));
            }
            if !a.separation.is_finite() || !a.planted_offset.is_finite() {
                return usage("--separation and --planted-offset must be finite");
            }
            synth_spec(&a)
        }
    };
    spec.validate().usage("synthesis spec")?;
    let mut corpus = synth_corpus(&spec).usage("synthesis spec")?;
    if a.normalize {
        corpus = corpus.with_normalization();
    }
    write_file(&a.out, corpus.to_bytes())?;
    eprintln!(
        "wrote {} records ({} conditions, dim {}) to {}",
        corpus.records().len(),
        corpus.conditions().len(),
        corpus.activation_dim(),
        a.out.display()
    );
    Ok(())
}

fn synth_spec(a: &SynthArgs) -> SynthSpec {
    let mut spec = SynthSpec::two_clusters(a.dim, a.separation, a.scale, a.records, a.seed);
    spec.positions_per_record = a.positions;
    match a.kind {
        SynthKind::TwoClusters => {}
        SynthKind::PointMass => {
            spec.condition_dim = 1;
            spec.conditions = vec![SynthCondition {
                text: "Point mass.".into(),
                mean: vec![a.separation; a.dim],
                scale: a.scale,
            }];
        }
        SynthKind::Planted => {
            for (c, text) in spec.conditions.iter_mut().zip(["Neutral.", "Planted."]) {
                c.mean = vec![0.0; a.dim];
                c.text = text.into();
            }
            let mut offset = vec![0.0; a.dim];
            offset[0] = a.planted_offset;
            spec.planted = vec![PlantedOffset {
                condition: 1,
                before_position: a.planted_before,
                offset,
            }];
        }
    }
    spec
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    model: ModelOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverrides {
    hidden_dim: Option<usize>,
    num_blocks: Option<usize>,
    time_embed_dim: Option<usize>,
    max_layers: Option<usize>,
    position_buckets: Option<usize>,
    position_bucket_width: Option<usize>,
    learned_null: Option<bool>,
}

impl ModelOverrides {
    fn apply(&self, cfg: &mut ModelConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(hidden_dim, num_blocks, time_embed_dim, max_layers, position_buckets, position_bucket_width, learned_null);
    }
}

pub fn train(a: TrainArgs) -> CmdResult {
    let corpus = load_corpus(&a.corpus, "--corpus")?;
    let file = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).usage(&format!("--config {}", path.display()))?;
            serde_json::from_str::<TrainFile>(&text).usage(&format!("--config {}", path.display()))?
        }
        None => TrainFile::default(),
    };
    let mut tc = file.train.unwrap_or_default();
    macro_rules! flag {
        ($($arg:ident => $field:ident),*) => {$(if let Some(v) = a.$arg { tc.$field = v; })*};
    }
    flag!(epochs => epochs, batch_size => batch_size, lr => peak_lr, p_drop => p_drop, weight_decay => weight_decay, seed => seed);
    if a.warmup_steps.is_some() {
        tc.warmup_steps = a.warmup_steps;
    }
    tc.validate().usage("training config")?;

    let mut mc = ModelConfig::new(corpus.activation_dim(), corpus.condition_dim());
    file.model.apply(&mut mc);
    let cli_model = ModelOverrides {
        hidden_dim: a.hidden_dim,
        num_blocks: a.num_blocks,
        time_embed_dim: a.time_embed_dim,
        max_layers: a.max_layers,
        position_buckets: a.position_buckets,
        position_bucket_width: a.position_bucket_width,
        learned_null: None,
    };
    cli_model.apply(&mut mc);
    mc.validate().usage("model config")?;
    check_layers(corpus.records(), &mc, "--corpus (raise --max-layers)")?;
    if corpus.records().is_empty() {
        return usage("--corpus has no records");
    }

    let (params, report) = run_training(&corpus, &mc, &tc).runtime("training")?;
    for (i, (l, lr)) in report.epoch_losses.iter().zip(&report.epoch_lrs).enumerate() {
        eprintln!("epoch {:>3}  loss {l:.6}  lr {lr:.3e}", i + 1);
    }
    params.save(&a.out).runtime(&format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.loss_csv {
        let mut csv = String::from("epoch,loss,lr\n");
        for (i, (l, lr)) in report.epoch_losses.iter().zip(&report.epoch_lrs).enumerate() {
            writeln!(csv, "{},{l},{lr}", i + 1).unwrap();
        }
        write_file(path, csv)?;
    }
    println!("final loss {}", report.final_loss);
    Ok(())
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let conds = load_corpus(&a.conditions, "--conditions")?;
    check_compatible(&model, &conds, "--conditions")?;
    let e = embedding(&conds, a.condition, "--condition")?;
    if a.layer as usize >= model.config().max_layers {
        return usage(format!("--layer {} outside the model's {} layer slots", a.layer, model.config().max_layers));
    }
    let spec = SolveSpec {
        steps: a.steps,
        guidance_scale: a.guidance,
        inversion_guidance: 1.0,
    };
    spec.validate().usage("solver flags")?;
    let site = Site::new(a.layer, a.position);
    let norm = conds.normalization();
    if let Some(n) = norm {
        n.standardize(a.layer, &mut vec![0.0; conds.activation_dim()]).usage("--layer")?;
    }

    let mut rng = Rng::new(a.seed);
    let noise = (0..a.count)
        .map(|_| sample_standard_gaussian(&mut rng, conds.activation_dim()))
        .collect::<Result<Vec<_>, _>>()
        .runtime("sampling")?;
    let records = noise
        .par_iter()
        .enumerate()
        .map(|(i, a0)| {
            let mut out = flow_map(&model, a0, 0.0, 1.0, Condition::Embedding(&e), site, &spec)
                .runtime(&format!("sample {i}"))?;
            if let Some(n) = norm {
                n.destandardize(a.layer, &mut out).runtime("normalization")?;
            }
            Ok(ActivationRecord {
                layer: a.layer,
                position: a.position,
                condition_id: a.condition,
                activation: narrow(&out),
            })
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let out = conds.with_records(records).runtime("building output")?;
    write_file(&a.out, out.to_bytes())?;
    eprintln!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

pub fn edit(a: EditArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let input = load_corpus(&a.input, "--input")?;
    check_compatible(&model, &input, "--input")?;
    let spec = edit_spec(
        &a.solver,
        embedding(&input, a.source, "--source")?,
        embedding(&input, a.target, "--target")?,
    )?;
    let edited = edit_all(&model, &input, &spec)?;
    let records = input
        .records()
        .iter()
        .zip(&edited)
        .map(|(r, e)| ActivationRecord {
            activation: narrow(e),
            ..r.clone()
        })
        .collect();
    let out = input.with_records(records).runtime("building output")?;
    write_file(&a.out, out.to_bytes())?;
    eprintln!(
        "edited {} records (lambda {}, tau {}) into {}",
        edited.len(),
        spec.strength,
        spec.tau(),
        a.out.display()
    );
    Ok(())
}

pub fn classify(a: ClassifyArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus, "--corpus")?;
    check_compatible(&model, &corpus, "--corpus")?;
    let mut ids = a.candidates.clone();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != a.candidates.len() {
        return usage("--candidates contains duplicates");
    }
    let candidates = ids
        .iter()
        .map(|&id| Ok(Candidate { id, embedding: embedding(&corpus, id, "--candidates")? }))
        .collect::<CmdResult<Vec<_>>>()?;
    if !(0.0..1.0).contains(&a.tau) {
        return usage(format!("--tau must be in [0, 1), got {}", a.tau));
    }
    let spec = SolveSpec {
        steps: a.steps,
        guidance_scale: a.guidance,
        inversion_guidance: a.inversion_guidance,
    };
    spec.validate().usage("solver flags")?;
    let positive = a.positive.unwrap_or(a.candidates[0]);
    if !ids.contains(&positive) {
        return usage(format!("--positive {positive} is not a candidate"));
    }
    let negative = ids.iter().copied().find(|&id| id != positive);
    let has = |id: u32| corpus.records().iter().any(|r| r.condition_id == id);
    let auc_possible = ids.len() == 2 && has(positive) && negative.is_some_and(has);
    if a.auc && !auc_possible {
        return usage("--auc needs exactly two candidates and records labeled with each");
    }

    let norm = corpus.normalization();
    let reports = corpus
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut x = r.activation_f64();
            if let Some(n) = norm {
                n.standardize(r.layer, &mut x).runtime(&format!("record {i}"))?;
            }
            classify_one(&model, &x, &candidates, Site::new(r.layer, r.position), a.tau, &spec)
                .runtime(&format!("record {i}"))
        })
        .collect::<CmdResult<Vec<_>>>()?;

    let mut csv = String::from("index,layer,position,label");
    for id in &ids {
        write!(csv, ",energy_{id}").unwrap();
    }
    csv.push_str(",predicted,score\n");
    let (mut correct, mut labeled) = (0usize, 0usize);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, (r, rep)) in corpus.records().iter().zip(&reports).enumerate() {
        write!(csv, "{i},{},{},{}", r.layer, r.position, r.condition_id).unwrap();
        for (_, e) in &rep.energies {
            write!(csv, ",{e}").unwrap();
        }
        let score = negative.map(|n| binary_score(rep, n, positive)).transpose().ok().flatten();
        match score {
            Some(s) => writeln!(csv, ",{},{s}", rep.predicted).unwrap(),
            None => writeln!(csv, ",{},", rep.predicted).unwrap(),
        }
        if ids.contains(&r.condition_id) {
            labeled += 1;
            correct += usize::from(rep.predicted == r.condition_id);
            if let Some(s) = score {
                scores.push(s);
                labels.push(r.condition_id == positive);
            }
        }
    }
    if let Some(path) = &a.out {
        write_file(path, csv)?;
    }
    if labeled > 0 {
        println!("accuracy {:.4} ({correct}/{labeled})", correct as f64 / labeled as f64);
    } else {
        println!("accuracy n/a (no records labeled with a candidate)");
    }
    if auc_possible {
        println!("auc {:.4}", auc(&scores, &labels).runtime("auc")?);
    }
    Ok(())
}

fn centroid(corpus: &Corpus, id: u32) -> Option<Vec<f64>> {
    let rows: Vec<Vec<f64>> = corpus
        .records()
        .iter()
        .filter(|r| r.condition_id == id)
        .map(|r| r.activation_f64())
        .collect();
    let first = rows.first()?;
    let mut c = vec![0.0; first.len()];
    for r in &rows {
        for (ci, x) in c.iter_mut().zip(r) {
            *ci += x;
        }
    }
    c.iter_mut().for_each(|x| *x /= rows.len() as f64);
    Some(c)
}

fn metric(kind: Metric, sources: &[Vec<f64>], edited: &[Vec<f64>], center: Option<&[f64]>) -> f64 {
    let n = sources.len().max(1) as f64;
    let pairs = sources.iter().zip(edited);
    match (kind, center) {
        (Metric::EditDistance, _) => pairs.map(|(s, e)| norm(&sub(e, s))).sum::<f64>() / n,
        (Metric::TargetDistance, Some(c)) => pairs.map(|(_, e)| squared_distance(e, c).sqrt()).sum::<f64>() / n,
        (Metric::CloserFraction, Some(c)) => {
            pairs.filter(|(s, e)| squared_distance(e, c) < squared_distance(s, c)).count() as f64 / n
        }
        _ => unreachable!("center is resolved before any metric needing it"),
    }
}

pub fn sweep(a: SweepArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let input = load_corpus(&a.input, "--input")?;
    check_compatible(&model, &input, "--input")?;
    let base = edit_spec(
        &a.solver,
        embedding(&input, a.source, "--source")?,
        embedding(&input, a.target, "--target")?,
    )?;
    let (start, end, step) = match (&a.grid, a.solver.preset) {
        (Some(g), _) if g.len() == 3 => (g[0], g[1], g[2]),
        (Some(g), _) => return usage(format!("--grid takes start,end,step; got {} values", g.len())),
        (None, Some(p)) => preset(p.as_str()).expect("every preset name is defined").guidance_grid,
        (None, None) => return usage("--grid or --preset is required"),
    };
    let grid = guidance_grid(start, end, step).usage("--grid")?;
    let center = match a.metric {
        Metric::EditDistance => None,
        _ => {
            let reference = match &a.reference {
                Some(p) => load_corpus(p, "--reference")?,
                None => input.clone(),
            };
            match centroid(&reference, a.target) {
                Some(c) if c.len() == input.activation_dim() => Some(c),
                Some(_) => return usage("--reference activation dim differs from --input"),
                None => return usage(format!("no records with condition {} to form the target centroid", a.target)),
            }
        }
    };
    let sources: Vec<Vec<f64>> = input.records().iter().map(|r| r.activation_f64()).collect();
    let mut csv = format!("w,{}\n", metric_name(a.metric));
    for w in grid {
        let mut spec = base.clone();
        spec.forward.guidance_scale = w;
        spec.validate().usage("--grid")?;
        // Measured on what `edit` would write, i.e. after rounding to f32.
        let edited: Vec<Vec<f64>> = edit_all(&model, &input, &spec)?.iter().map(|e| widen(&narrow(e))).collect();
        let m = metric(a.metric, &sources, &edited, center.as_deref());
        eprintln!("w {w}: {m}");
        writeln!(csv, "{w},{m}").unwrap();
    }
    write_file(&a.out, csv)
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::EditDistance => "edit_distance",
        Metric::TargetDistance => "target_distance",
        Metric::CloserFraction => "closer_fraction",
    }
}

pub fn edit_server(a: EditServerArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let conds = load_corpus(&a.conditions, "--conditions")?;
    let cfg = model.config();
    if cfg.activation_dim != conds.activation_dim() || cfg.condition_dim != conds.condition_dim() {
        return usage("--conditions dims do not match the model");
    }
    let spec = edit_spec(
        &a.solver,
        embedding(&conds, a.source, "--source")?,
        embedding(&conds, a.target, "--target")?,
    )?;
    let limits = ServerLimits {
        dim: cfg.activation_dim,
        max_layers: cfg.max_layers as u32,
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut input = BufReader::new(stdin.lock());
    let mut output = BufWriter::new(stdout.lock());
    let norm = conds.normalization();
    let stats = serve(&mut input, &mut output, limits, |site, x| edit_record(&model, site, x, norm, &spec))
        .runtime("edit-server i/o")?;
    eprintln!("edit-server: {} responses, {} error frames", stats.responses, stats.errors);
    Ok(())
}

pub fn analyze(a: AnalyzeArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus, "--corpus")?;
    check_compatible(&model, &corpus, "--corpus")?;
    let spec = edit_spec(
        &a.solver,
        embedding(&corpus, a.source, "--source")?,
        embedding(&corpus, a.target, "--target")?,
    )?;
    let positive: Vec<&ActivationRecord> = corpus.records().iter().filter(|r| r.condition_id == a.target).collect();
    let negative: Vec<&ActivationRecord> = corpus.records().iter().filter(|r| r.condition_id == a.source).collect();
    if positive.is_empty() || negative.is_empty() {
        return usage("--corpus needs records for both --source and --target");
    }
    let method = match a.method {
        MethodArg::Caa => DirectionMethod::Caa,
        MethodArg::Repe => DirectionMethod::RepE,
    };
    let label = corpus.condition(a.target).usage("--target")?.text.clone();
    let dirs = DirectionSet::from_records(method, label, &positive, &negative).runtime("reference direction")?;
    let sources: Vec<ActivationRecord> = negative.into_iter().cloned().collect();
    let profile = position_alignment_profile(&model, model.config(), &sources, corpus.normalization(), &spec, &dirs)
        .runtime("alignment profile")?;
    if profile.skipped > 0 {
        eprintln!("warning: skipped {} records whose edit was zero", profile.skipped);
    }
    let mut csv = String::from("bucket,mean_cosine,count\n");
    for r in &profile.rows {
        writeln!(csv, "{},{},{}", r.bucket, r.mean_cosine, r.count).unwrap();
    }
    write_file(&a.out, csv)?;
    if let Some(p) = &a.directions_out {
        write_file(p, directions_to_bytes(&dirs))?;
    }
    if let Some(p) = &a.directions_csv {
        let mut csv = String::from("layer,index,value\n");
        for (layer, d) in &dirs.directions {
            for (i, x) in d.iter().enumerate() {
                writeln!(csv, "{layer},{i},{x}").unwrap();
            }
        }
        write_file(p, csv)?;
    }
    for r in &profile.rows {
        println!("bucket {} mean cosine {:.4} (n={})", r.bucket, r.mean_cosine, r.count);
    }
    Ok(())
}
