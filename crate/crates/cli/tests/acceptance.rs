//! Acceptance suite: one PASS/FAIL line per criterion, with the tolerance and
//! the runtime budget it is held to. Exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use flowsteer::analysis::{position_alignment_profile, DirectionMethod, DirectionSet};
use flowsteer::classify::{auc, binary_score, classify, Candidate};
use flowsteer::corpus::{
    synth_corpus, ActivationRecord, ConditionEntry, Corpus, LayerStats, Normalization, PlantedOffset, SynthCondition,
    SynthSpec,
};
use flowsteer::flow::{edit, flow_map, guided_velocity, invert, EditSpec, SolveSpec};
use flowsteer::model::{Condition, ModelConfig, ModelParams, Site, TrainSample, VelocityField};
use flowsteer::numerics::{finite_diff_gradient, sample_standard_gaussian, squared_distance, Rng};
use flowsteer::train::{train, TrainConfig};
use flowsteer::Result;

type Check = std::result::Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
}

fn report(c: &Criterion, elapsed: Duration, outcome: Check) -> bool {
    let in_budget = elapsed <= c.budget;
    let (pass, detail) = match outcome {
        Ok(d) if in_budget => (true, d),
        Ok(d) => (false, format!("{d}; over budget")),
        Err(d) => (false, d),
    };
    println!(
        "{} {}: {} [{:.1} s, budget {} s]",
        if pass { "PASS" } else { "FAIL" },
        c.name,
        detail,
        elapsed.as_secs_f64(),
        c.budget.as_secs()
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn ensure(cond: bool, detail: String) -> Check {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// Fixed fields used as oracles.

struct ConstantField(Vec<f64>);

impl VelocityField for ConstantField {
    fn activation_dim(&self) -> usize {
        self.0.len()
    }
    fn velocity(&self, _a: &[f64], _t: f64, _c: Condition<'_>, _s: Site) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

struct Decay(usize);

impl VelocityField for Decay {
    fn activation_dim(&self) -> usize {
        self.0
    }
    fn velocity(&self, a: &[f64], _t: f64, _c: Condition<'_>, _s: Site) -> Result<Vec<f64>> {
        Ok(a.iter().map(|x| -x).collect())
    }
}

fn random_model(rng: &mut Rng, max_params: usize) -> ModelParams {
    loop {
        let cfg = ModelConfig {
            activation_dim: 1 + rng.below(3),
            condition_dim: 1 + rng.below(2),
            hidden_dim: 2 + rng.below(3),
            num_blocks: 1 + rng.below(2),
            time_embed_dim: 2,
            max_layers: 2,
            position_buckets: 2,
            position_bucket_width: 2,
            learned_null: rng.below(2) == 0,
        };
        let mut p = ModelParams::init(cfg, rng).unwrap();
        if p.len() > max_params {
            continue;
        }
        for v in p.values_mut() {
            *v = 0.5 * rng.gaussian();
        }
        return p;
    }
}

const GRAD_FLOOR: f64 = 1e-3;

fn gradient_correctness() -> Check {
    let mut rng = Rng::new(20);
    let models = 24;
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for _ in 0..models {
        let p = random_model(&mut rng, 500);
        largest = largest.max(p.len());
        let cfg = p.config().clone();
        let embeds: Vec<Vec<f64>> = (0..2).map(|_| (0..cfg.condition_dim).map(|_| rng.gaussian()).collect()).collect();
        let batch: Vec<TrainSample> = (0..3)
            .map(|i| TrainSample {
                a_t: (0..cfg.activation_dim).map(|_| rng.gaussian()).collect(),
                t: rng.uniform(),
                cond: if i == 0 { Condition::Null } else { Condition::Embedding(&embeds[i - 1]) },
                site: Site::new(rng.below(2) as u32, rng.below(6) as u32),
                target: (0..cfg.activation_dim).map(|_| rng.gaussian()).collect(),
            })
            .collect();
        let (_, grad) = p.loss_and_grad(&batch).map_err(|e| e.to_string())?;
        let fd = finite_diff_gradient(
            |v| ModelParams::from_values(cfg.clone(), v.to_vec()).unwrap().loss(&batch).unwrap(),
            p.values(),
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        for (g, f) in grad.iter().zip(&fd) {
            worst = worst.max((g - f).abs() / g.abs().max(f.abs()).max(GRAD_FLOOR));
        }
    }
    ensure(
        worst < 1e-4,
        format!("{models} models (<= {largest} params), max relative error {worst:.2e} (tol 1e-4, floor {GRAD_FLOOR})"),
    )
}

fn solver_exactness() -> Check {
    let mut rng = Rng::new(21);
    let mut worst_const: f64 = 0.0;
    for _ in 0..200 {
        let d = 1 + rng.below(4);
        let k: Vec<f64> = (0..d).map(|_| 3.0 * rng.gaussian()).collect();
        let a: Vec<f64> = (0..d).map(|_| 3.0 * rng.gaussian()).collect();
        let (s, t) = (rng.uniform(), rng.uniform());
        let steps = 1 + rng.below(64);
        let out = flow_map(&ConstantField(k.clone()), &a, s, t, Condition::Null, Site::default(), &SolveSpec::with_steps(steps))
            .map_err(|e| e.to_string())?;
        for i in 0..d {
            let expect = a[i] + (t - s) * k[i];
            // Roundoff bound: one rounding per step on values of size |a| + |k|.
            let bound = 4.0 * f64::EPSILON * steps as f64 * (a[i].abs() + k[i].abs() + 1.0);
            worst_const = worst_const.max((out[i] - expect).abs() / bound);
        }
    }
    let mut worst_affine: f64 = 0.0;
    for n in 1..=100usize {
        let a0 = rng.gaussian() * 5.0;
        let out = flow_map(&Decay(1), &[a0], 0.0, 1.0, Condition::Null, Site::default(), &SolveSpec::with_steps(n))
            .map_err(|e| e.to_string())?;
        let expect = a0 * (1.0 - 1.0 / n as f64).powi(n as i32);
        worst_affine = worst_affine.max((out[0] - expect).abs());
    }
    ensure(
        worst_const <= 1.0 && worst_affine < 1e-12,
        format!(
            "constant fields within {worst_const:.2} of the roundoff bound (<= 1); v = -a max error {worst_affine:.1e} (tol 1e-12)"
        ),
    )
}

fn point_mass_spec() -> SynthSpec {
    SynthSpec {
        activation_dim: 2,
        condition_dim: 1,
        conditions: vec![SynthCondition {
            text: "Point mass.".into(),
            mean: vec![1.0, -0.5],
            scale: 0.0,
        }],
        records_per_condition: 65536,
        layers: vec![0],
        positions_per_record: 1,
        planted: vec![],
        seed: 1,
    }
}

fn point_mass_train() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 128,
        peak_lr: 1e-2,
        p_drop: 0.0,
        weight_decay: 0.0,
        seed: 0,
        ..TrainConfig::default()
    }
}

fn point_mass(model: &ModelParams, final_loss: f64) -> Check {
    let mu = &point_mass_spec().conditions[0].mean;
    let e = [1.0];
    let mut rng = Rng::new(22);
    let draws = 200;
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let a0 = sample_standard_gaussian(&mut rng, 2).map_err(|e| e.to_string())?;
        let out = flow_map(model, &a0, 0.0, 1.0, Condition::Embedding(&e), Site::default(), &SolveSpec::with_steps(30))
            .map_err(|e| e.to_string())?;
        let dist = squared_distance(&out, mu).sqrt();
        worst = worst.max(dist);
        hits += usize::from(dist <= 0.1);
    }
    let frac = hits as f64 / draws as f64;
    ensure(
        final_loss < 1e-2 && frac >= 0.99,
        format!(
            "final loss {final_loss:.4} (tol 1e-2) after 10 epochs; {hits}/{draws} samples within 0.1 of the mean (need 99%), worst {worst:.4}"
        ),
    )
}

fn inversion_identity(model: &ModelParams) -> Check {
    let mut rng = Rng::new(23);
    // Zero strength returns the input bit for bit.
    for _ in 0..200 {
        let a: Vec<f64> = (0..2).map(|_| rng.gaussian() * 10f64.powi(rng.below(9) as i32 - 4)).collect();
        let spec = EditSpec::new(vec![1.0], vec![1.0], 0.0);
        let out = edit(model, &a, &spec, Site::default()).map_err(|e| e.to_string())?;
        if out.iter().zip(&a).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(format!("lambda = 0 changed {a:?} into {out:?}"));
        }
    }
    // Constant fields: invert then regenerate under the same condition.
    let mut worst_const: f64 = 0.0;
    for _ in 0..200 {
        let k: Vec<f64> = (0..3).map(|_| rng.gaussian()).collect();
        let a: Vec<f64> = (0..3).map(|_| rng.gaussian()).collect();
        let tau = rng.uniform();
        let spec = SolveSpec::with_steps(1 + rng.below(50));
        let field = ConstantField(k);
        let z = invert(&field, &a, Condition::Embedding(&[1.0]), Site::default(), tau, &spec).map_err(|e| e.to_string())?;
        let back = flow_map(&field, &z, tau, 1.0, Condition::Embedding(&[1.0]), Site::default(), &spec)
            .map_err(|e| e.to_string())?;
        worst_const = worst_const.max(squared_distance(&back, &a).sqrt());
    }
    // The trained point-mass model, starting from the data point itself.
    let mu = &point_mass_spec().conditions[0].mean;
    let spec = SolveSpec::with_steps(15);
    let mut worst_model: f64 = 0.0;
    for tau in [0.25, 0.5, 0.75] {
        let z = invert(model, mu, Condition::Embedding(&[1.0]), Site::default(), tau, &spec).map_err(|e| e.to_string())?;
        let back = flow_map(model, &z, tau, 1.0, Condition::Embedding(&[1.0]), Site::default(), &spec)
            .map_err(|e| e.to_string())?;
        worst_model = worst_model.max(squared_distance(&back, mu).sqrt());
    }
    ensure(
        worst_const < 1e-12 && worst_model <= 1e-3,
        format!(
            "lambda = 0 bit-identical on 200 inputs; constant-field round trip max error {worst_const:.1e} (tol 1e-12); \
             point-mass model round trip max error {worst_model:.2e} over tau in {{0.25, 0.5, 0.75}}, 15 steps (tol 1e-3)"
        ),
    )
}

fn cluster_train() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 128,
        peak_lr: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn embeddings(corpus: &Corpus) -> Vec<Vec<f64>> {
    corpus.conditions().iter().map(|c| c.embedding_f64()).collect()
}

fn steering(model: &ModelParams, corpus: &Corpus) -> Check {
    let held = synth_corpus(&SynthSpec::two_clusters(2, 1.0, 0.5, 500, 777)).map_err(|e| e.to_string())?;
    let e = embeddings(corpus);
    let target_mean = vec![-1.0; 2];
    let sources: Vec<Vec<f64>> = held.records().iter().filter(|r| r.condition_id == 0).map(|r| r.activation_f64()).collect();
    let mut means = vec![];
    let mut closer_at_one = 0;
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let spec = EditSpec::new(e[0].clone(), e[1].clone(), lambda);
        let mut total = 0.0;
        for a in &sources {
            let out = edit(model, a, &spec, Site::default()).map_err(|e| e.to_string())?;
            total += squared_distance(&out, a).sqrt();
            if lambda == 1.0 && squared_distance(&out, &target_mean) < squared_distance(a, &target_mean) {
                closer_at_one += 1;
            }
        }
        means.push(total / sources.len() as f64);
    }
    let frac = closer_at_one as f64 / sources.len() as f64;
    let monotone = means.windows(2).all(|w| w[1] > w[0]);
    ensure(
        frac >= 0.95 && monotone,
        format!(
            "lambda = 1 moved {closer_at_one}/{} samples nearer the target mean (need 95%); mean edit distance over lambda {:?} ({})",
            sources.len(),
            means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
            if monotone { "increasing" } else { "NOT increasing" }
        ),
    )
}

fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn classification(model: &ModelParams, corpus: &Corpus) -> Check {
    let held = synth_corpus(&SynthSpec::two_clusters(2, 1.0, 0.5, 250, 778)).map_err(|e| e.to_string())?;
    let candidates: Vec<Candidate> = embeddings(corpus)
        .into_iter()
        .enumerate()
        .map(|(i, embedding)| Candidate { id: i as u32, embedding })
        .collect();
    let spec = SolveSpec::with_steps(30);
    let (mut correct, mut scores, mut labels) = (0, vec![], vec![]);
    for r in held.records() {
        let rep = classify(model, &r.activation_f64(), &candidates, Site::default(), 0.5, &spec).map_err(|e| e.to_string())?;
        correct += usize::from(rep.predicted == r.condition_id);
        scores.push(binary_score(&rep, 1, 0).map_err(|e| e.to_string())?);
        labels.push(r.condition_id == 0);
    }
    let n = held.records().len();
    let acc = correct as f64 / n as f64;
    let area = auc(&scores, &labels).map_err(|e| e.to_string())?;

    let mut rng = Rng::new(24);
    let mut mismatches = 0;
    let lists = 300;
    for _ in 0..lists {
        let len = 2 + rng.below(199);
        let levels = 1 + rng.below(12);
        let s: Vec<f64> = (0..len).map(|_| rng.below(levels) as f64 * 0.1).collect();
        let mut l: Vec<bool> = (0..len).map(|_| rng.below(2) == 0).collect();
        l[0] = true;
        l[1] = false;
        if auc(&s, &l).map_err(|e| e.to_string())? != brute_force_auc(&s, &l) {
            mismatches += 1;
        }
    }
    ensure(
        acc >= 0.95 && area >= 0.97 && mismatches == 0,
        format!(
            "accuracy {acc:.3} (need 0.95), AUC {area:.4} (need 0.97) on {n} held-out samples; \
             rank AUC == brute force on {}/{lists} tied lists of length <= 200",
            lists - mismatches
        ),
    )
}

fn planted_spec(records: usize, seed: u64) -> SynthSpec {
    let d = 4;
    let mut offset = vec![0.0; d];
    offset[0] = 3.0;
    SynthSpec {
        activation_dim: d,
        condition_dim: 2,
        conditions: vec![
            SynthCondition {
                text: "Neutral.".into(),
                mean: vec![0.0; d],
                scale: 0.5,
            },
            SynthCondition {
                text: "Planted.".into(),
                mean: vec![0.0; d],
                scale: 0.5,
            },
        ],
        records_per_condition: records,
        layers: vec![0],
        positions_per_record: 16,
        planted: vec![PlantedOffset {
            condition: 1,
            before_position: 4,
            offset,
        }],
        seed,
    }
}

fn alignment() -> Check {
    let corpus = synth_corpus(&planted_spec(8192, 1)).map_err(|e| e.to_string())?;
    let mc = ModelConfig::new(4, 2);
    let (model, _) = train(&corpus, &mc, &cluster_train()).map_err(|e| e.to_string())?;
    let held = synth_corpus(&planted_spec(400, 9)).map_err(|e| e.to_string())?;
    let pos: Vec<&ActivationRecord> = corpus.records().iter().filter(|r| r.condition_id == 1).collect();
    let neg: Vec<&ActivationRecord> = corpus.records().iter().filter(|r| r.condition_id == 0).collect();
    let dirs = DirectionSet::from_records(DirectionMethod::Caa, "planted", &pos, &neg).map_err(|e| e.to_string())?;
    let sources: Vec<ActivationRecord> = held.records().iter().filter(|r| r.condition_id == 0).cloned().collect();
    let e = embeddings(&corpus);
    let spec = EditSpec::new(e[0].clone(), e[1].clone(), 0.5);
    let profile = position_alignment_profile(&model, &mc, &sources, None, &spec, &dirs).map_err(|e| e.to_string())?;
    let first = profile.bucket(0).map(|r| r.mean_cosine).ok_or("no bucket 0")?;
    let others = profile
        .rows
        .iter()
        .filter(|r| r.bucket != 0)
        .map(|r| r.mean_cosine)
        .fold(f64::NEG_INFINITY, f64::max);
    ensure(
        first - others >= 0.2,
        format!(
            "bucket-0 mean cosine {first:.3}, best other bucket {others:.3}, gap {:.3} (need 0.2); profile {:?}",
            first - others,
            profile.rows.iter().map(|r| format!("{}:{:.3}", r.bucket, r.mean_cosine)).collect::<Vec<_>>()
        ),
    )
}

fn random_corpus(rng: &mut Rng) -> Corpus {
    let d = 1 + rng.below(6);
    let e = 1 + rng.below(4);
    let m = 1 + rng.below(4);
    let conditions = (0..m)
        .map(|id| ConditionEntry {
            id: id as u32,
            text: (0..rng.below(20)).map(|_| char::from(b'a' + rng.below(26) as u8)).collect::<String>() + "é",
            embedding: (0..e).map(|_| rng.gaussian() as f32).collect(),
        })
        .collect();
    let records = (0..rng.below(40))
        .map(|_| ActivationRecord {
            layer: rng.below(3) as u32,
            position: rng.below(1000) as u32,
            condition_id: rng.below(m) as u32,
            activation: (0..d).map(|_| (rng.gaussian() * 1e3) as f32).collect(),
        })
        .collect();
    let norm = (rng.below(2) == 0).then(|| Normalization {
        layers: (0..1 + rng.below(3))
            .map(|l| LayerStats {
                layer: l as u32,
                mean: (0..d).map(|_| rng.gaussian() as f32).collect(),
                std: (0..d).map(|_| rng.uniform() as f32 + 0.5).collect(),
            })
            .collect(),
    });
    Corpus::new(d, e, conditions, records, norm).unwrap()
}

fn run_cli(dir: &Path, args: &[&str]) -> std::result::Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_flowsteer"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn formats_and_determinism() -> Check {
    let mut rng = Rng::new(25);
    for i in 0..100 {
        let c = random_corpus(&mut rng);
        let bytes = c.to_bytes();
        let back = Corpus::from_bytes(&bytes).map_err(|e| format!("corpus {i}: {e}"))?;
        if back != c || back.to_bytes() != bytes {
            return Err(format!("corpus {i} did not round-trip"));
        }
    }
    for i in 0..100 {
        let p = random_model(&mut rng, 2000);
        let bytes = p.to_bytes();
        let back = ModelParams::from_bytes(&bytes).map_err(|e| format!("checkpoint {i}: {e}"))?;
        let same = back.config() == p.config()
            && back.values().iter().zip(p.values()).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.to_bytes() == bytes;
        if !same {
            return Err(format!("checkpoint {i} did not round-trip"));
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pipeline: &[&[&str]] = &[
        &["synth", "--out", "c.uafc", "--kind", "planted", "--dim", "2", "--positions", "8", "--records", "150", "--seed", "4"],
        &["train", "--corpus", "c.uafc", "--out", "m.ckpt", "--loss-csv", "l.csv", "--epochs", "2", "--lr", "1e-2", "--hidden-dim", "16"],
        &["generate", "--model", "m.ckpt", "--conditions", "c.uafc", "--condition", "1", "--count", "20", "--seed", "2", "--out", "g.uafc"],
        &["edit", "--model", "m.ckpt", "--input", "c.uafc", "--source", "0", "--target", "1", "--preset", "constraint", "--out", "e.uafc"],
        &["classify", "--model", "m.ckpt", "--corpus", "c.uafc", "--candidates", "0,1", "--steps", "5", "--out", "k.csv"],
        &["sweep", "--model", "m.ckpt", "--input", "c.uafc", "--source", "0", "--target", "1", "--steps", "5", "--inversion-steps", "5", "--grid", "1,3,1", "--out", "s.csv"],
        &["analyze", "--model", "m.ckpt", "--corpus", "c.uafc", "--source", "0", "--target", "1", "--steps", "5", "--inversion-steps", "5", "--out", "p.csv", "--directions-out", "d.uadr"],
    ];
    let outputs = ["c.uafc", "m.ckpt", "l.csv", "g.uafc", "e.uafc", "k.csv", "s.csv", "p.csv", "d.uadr"];
    let mut runs = vec![];
    for round in 0..2 {
        let sub = dir.path().join(format!("run{round}"));
        fs::create_dir(&sub).map_err(|e| e.to_string())?;
        let mut stdout = vec![];
        for args in pipeline {
            stdout.push(run_cli(&sub, args)?);
        }
        let files = outputs
            .iter()
            .map(|f| fs::read(sub.join(f)).map_err(|e| format!("{f}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        runs.push((stdout, files));
    }
    let differing: Vec<&str> = outputs
        .iter()
        .zip(runs[0].1.iter().zip(&runs[1].1))
        .filter(|(_, (a, b))| a != b)
        .map(|(name, _)| *name)
        .collect();
    ensure(
        differing.is_empty() && runs[0].0 == runs[1].0,
        format!(
            "100 corpus and 100 checkpoint round-trips bit-exact; {} CLI commands rerun with {} byte-identical outputs{}",
            pipeline.len(),
            outputs.len() - differing.len(),
            if differing.is_empty() { String::new() } else { format!(", differing: {differing:?}") }
        ),
    )
}

fn cfg_contract() -> Check {
    let mut rng = Rng::new(26);
    let models = 20;
    let mut worst: f64 = 0.0;
    for _ in 0..models {
        let p = random_model(&mut rng, 2000);
        let cfg = p.config().clone();
        let e: Vec<f64> = (0..cfg.condition_dim).map(|_| rng.gaussian()).collect();
        let a: Vec<f64> = (0..cfg.activation_dim).map(|_| rng.gaussian()).collect();
        let (t, site) = (rng.uniform(), Site::new(rng.below(2) as u32, rng.below(8) as u32));
        let v_cond = p.velocity(&a, t, Condition::Embedding(&e), site).map_err(|e| e.to_string())?;
        let v_null = p.velocity(&a, t, Condition::Null, site).map_err(|e| e.to_string())?;
        let at_one = guided_velocity(&p, &a, t, &e, site, 1.0).map_err(|e| e.to_string())?;
        if at_one.iter().zip(&v_cond).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err("w = 1 differs from the conditional velocity".into());
        }
        for w in [0.5, 3.0, 12.0] {
            let g = guided_velocity(&p, &a, t, &e, site, w).map_err(|e| e.to_string())?;
            for i in 0..g.len() {
                let expect = v_null[i] + w * (v_cond[i] - v_null[i]);
                worst = worst.max((g[i] - expect).abs() / (1.0 + expect.abs()));
            }
        }
    }
    ensure(
        worst < 1e-12,
        format!("w = 1 bit-identical to the conditional field on {models} models; affine in w at 0.5, 3, 12 within {worst:.1e} (tol 1e-12)"),
    )
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;
    let mut run = |name, budget, f: &dyn Fn() -> Check| {
        let (outcome, elapsed) = timed(f);
        all &= report(&Criterion { name, budget: secs(budget) }, elapsed, outcome);
    };

    run("gradient correctness", 30, &gradient_correctness);
    run("solver exactness", 5, &solver_exactness);

    let ((pm_model, pm_report), pm_train) = timed(|| {
        train(&synth_corpus(&point_mass_spec()).unwrap(), &ModelConfig::new(2, 1), &point_mass_train()).unwrap()
    });
    run("point-mass training", 180, &|| {
        let start = Instant::now();
        let out = point_mass(&pm_model, pm_report.final_loss);
        // Training happened up front so the inversion check can share the model.
        if pm_train + start.elapsed() > secs(180) {
            return Err(format!("training took {:.1} s, over budget", pm_train.as_secs_f64()));
        }
        out.map(|d| format!("{d}; training {:.1} s", pm_train.as_secs_f64()))
    });
    run("inversion identity", 30, &|| inversion_identity(&pm_model));

    let cluster_corpus = synth_corpus(&SynthSpec::two_clusters(2, 1.0, 0.5, 8192, 1)).unwrap();
    let ((cluster_model, _), cluster_train_time) =
        timed(|| train(&cluster_corpus, &ModelConfig::new(2, 2), &cluster_train()).unwrap());
    run("steering oracle", 300, &|| {
        steering(&cluster_model, &cluster_corpus).map(|d| format!("{d}; training {:.1} s", cluster_train_time.as_secs_f64()))
    });
    run("classification oracle", 300, &|| classification(&cluster_model, &cluster_corpus));
    run("alignment diagnostic", 300, &alignment);
    run("format and determinism", 300, &formats_and_determinism);
    run("CFG contract", 5, &cfg_contract);

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria FAILED");
        ExitCode::FAILURE
    }
}
