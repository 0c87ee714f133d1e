//! End-to-end acceptance checks, one verdict line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers to run a
//! subset (`cargo test --test acceptance -- 4 5 7`). Criteria 1 to 3 need the
//! raw MovieLens-1M release (`users.dat`, `movies.dat`, `ratings.dat`) in the
//! directory named by `GRAPHFM_ML1M_DIR` and report NOT RUN without it.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use graphfm::cli::{cmd_ablate, cmd_train, AblationRow, RunConfig, RunSummary, METRICS_FILE};
use graphfm::data::{movielens, split, Batch, DatasetSchema, FieldKind, FieldSpec, SplitSpec};
use graphfm::diffcore::gradcheck::check_function;
use graphfm::diffcore::{Tape, Tensor, Var};
use graphfm::explain::selection_frequency;
use graphfm::model::{make_variant, Activation, Model, ModelConfig, ModelKind, Variant};
use graphfm::synth::{self, SynthSpec};
use graphfm::train::{auc, fit, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

use Verdict::{Fail, NotRun, Pass};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

fn cat(name: &str, vocab: usize) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind: FieldKind::Categorical,
        vocab_size: Some(vocab),
    }
}

fn num(name: &str) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind: FieldKind::Numeric,
        vocab_size: None,
    }
}

fn random_batch(schema: &DatasetSchema, rows: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut categorical = Vec::new();
    let mut numeric = Vec::new();
    for f in &schema.fields {
        match f.kind {
            FieldKind::Categorical => {
                categorical.push((0..rows).map(|_| rng.random_range(0..f.vocab_size.unwrap())).collect())
            }
            FieldKind::Numeric => numeric.push((0..rows).map(|_| rng.random_range(-2.0..2.0)).collect()),
        }
    }
    Batch {
        categorical,
        numeric,
        labels: (0..rows).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
        rows: (0..rows).collect(),
    }
}

fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("graphfm-acceptance-{}", std::process::id())).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------------------
// Criteria 1-3: MovieLens-1M

fn ml1m() -> Option<&'static (PathBuf, PathBuf)> {
    static PREPARED: OnceLock<Option<(PathBuf, PathBuf)>> = OnceLock::new();
    PREPARED
        .get_or_init(|| {
            let src = PathBuf::from(std::env::var_os("GRAPHFM_ML1M_DIR")?);
            let dir = scratch("ml1m");
            let (csv, schema) = (dir.join("data.csv"), dir.join("schema.json"));
            let stats = movielens::prepare(&src, &csv, &schema).expect("MovieLens-1M preparation");
            eprintln!("prepared MovieLens-1M: {stats:?}");
            Some((csv, schema))
        })
        .as_ref()
}

fn ml1m_config(kind: ModelKind, seed: u64, out: &str) -> Option<RunConfig> {
    let (csv, schema) = ml1m()?;
    Some(RunConfig {
        data: Some(csv.clone()),
        schema: Some(schema.clone()),
        out: Some(scratch(out)),
        seed,
        kind,
        preset: Some("movielens".into()),
        ..RunConfig::default()
    })
}

const ML1M_MISSING: &str = "GRAPHFM_ML1M_DIR is not set; MovieLens-1M is not available";

fn graphfm_ml1m() -> &'static RunSummary {
    static RUN: OnceLock<RunSummary> = OnceLock::new();
    RUN.get_or_init(|| cmd_train(&ml1m_config(ModelKind::GraphFm, 0, "ml1m-graphfm").unwrap()).unwrap())
}

fn criterion_1() -> Verdict {
    if ml1m().is_none() {
        return NotRun(ML1M_MISSING.into());
    }
    let s = graphfm_ml1m();
    verdict(
        s.test_auc >= 0.840 && s.test_logloss <= 0.390,
        format!("GraphFM test AUC {:.4} (>= 0.840), logloss {:.4} (<= 0.390)", s.test_auc, s.test_logloss),
    )
}

fn criterion_2() -> Verdict {
    let Some(config) = ml1m_config(ModelKind::Fm, 0, "ml1m-fm") else {
        return NotRun(ML1M_MISSING.into());
    };
    let fm = cmd_train(&config).unwrap();
    let gfm = graphfm_ml1m();
    let margin = gfm.test_auc - fm.test_auc;
    verdict(
        (0.815..=0.835).contains(&fm.test_auc) && margin >= 0.010,
        format!("FM test AUC {:.4} (in [0.815, 0.835]); GraphFM margin {margin:+.4} (>= 0.010)", fm.test_auc),
    )
}

fn criterion_3() -> Verdict {
    if ml1m().is_none() {
        return NotRun(ML1M_MISSING.into());
    }
    let mut holds = 0;
    let mut details = Vec::new();
    for seed in 0..3 {
        let config = ml1m_config(ModelKind::GraphFm, seed, &format!("ml1m-ablate-{seed}")).unwrap();
        let rows = cmd_ablate(&config).unwrap();
        let get = |v: &str| rows.iter().find(|r: &&AblationRow| r.variant == v).unwrap().summary.test_auc;
        let (full, s, i, m) = (get("full"), get("no_select"), get("no_interact"), get("single_head"));
        let ok = full >= s && full >= m && i < full.min(s).min(m);
        holds += usize::from(ok);
        details.push(format!(
            "seed {seed}: FULL {full:.4} -S {s:.4} -I {i:.4} -M {m:.4} ({})",
            if ok { "ordered" } else { "not ordered" }
        ));
    }
    verdict(holds >= 2, format!("{holds}/3 seeds ordered; {}", details.join("; ")))
}

// ---------------------------------------------------------------------------
// Criterion 4: gradient suite

fn primitive_op_errors() -> BTreeMap<&'static str, f64> {
    type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape<'static>, &[Var]) -> Var>);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let project_seed = 41;
    let project = move |t: &mut Tape<'static>, x: Var| {
        let mut rng = ChaCha8Rng::seed_from_u64(project_seed);
        let w = random_tensor(&mut rng, t.shape(x));
        let y = t.mul_const(x, w).unwrap();
        t.sum(y).unwrap()
    };
    // keep activation inputs away from kinks so central differences are valid
    let mut smooth = random_tensor(&mut rng, &[3, 6]);
    for v in smooth.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let e = random_tensor(&mut rng, &[2, 4, 3]);
    let mask: Vec<bool> = (0..2 * 4 * 4).map(|i| i % 4 != 3).collect();
    let cases: Vec<Case> = vec![
        ("matmul", vec![random_tensor(&mut rng, &[3, 4]), random_tensor(&mut rng, &[4, 2])],
            Box::new(move |t, v| { let y = t.matmul(v[0], v[1]).unwrap(); project(t, y) })),
        ("add", vec![e.clone(), e.clone()], Box::new(move |t, v| { let y = t.add(v[0], v[1]).unwrap(); project(t, y) })),
        ("sub", vec![e.clone(), e.clone()], Box::new(move |t, v| { let y = t.sub(v[0], v[1]).unwrap(); project(t, y) })),
        ("hadamard", vec![e.clone(), random_tensor(&mut rng, &[2, 4, 3])],
            Box::new(move |t, v| { let y = t.hadamard(v[0], v[1]).unwrap(); project(t, y) })),
        ("add_bias", vec![e.clone(), random_tensor(&mut rng, &[3])],
            Box::new(move |t, v| { let y = t.add_bias(v[0], v[1]).unwrap(); project(t, y) })),
        ("scale", vec![e.clone()], Box::new(move |t, v| { let y = t.scale(v[0], -1.7).unwrap(); project(t, y) })),
        ("relu", vec![smooth.clone()], Box::new(move |t, v| { let y = t.relu(v[0]).unwrap(); project(t, y) })),
        ("leaky_relu", vec![smooth.clone()], Box::new(move |t, v| { let y = t.leaky_relu(v[0], 0.2).unwrap(); project(t, y) })),
        ("sigmoid", vec![smooth.clone()], Box::new(move |t, v| { let y = t.sigmoid(v[0]).unwrap(); project(t, y) })),
        ("elu", vec![smooth.clone()], Box::new(move |t, v| { let y = t.elu(v[0]).unwrap(); project(t, y) })),
        ("sum", vec![e.clone()], Box::new(|t, v| t.sum(v[0]).unwrap())),
        ("mean", vec![e.clone()], Box::new(|t, v| t.mean(v[0]).unwrap())),
        ("sum_axis", vec![e.clone()], Box::new(move |t, v| { let y = t.sum_axis(v[0], 1).unwrap(); project(t, y) })),
        ("mean_axis", vec![e.clone()], Box::new(move |t, v| { let y = t.mean_axis(v[0], 2).unwrap(); project(t, y) })),
        ("reshape", vec![e.clone()], Box::new(move |t, v| { let y = t.reshape(v[0], &[8, 3]).unwrap(); project(t, y) })),
        ("concat", vec![e.clone(), random_tensor(&mut rng, &[2, 4, 2])],
            Box::new(move |t, v| { let y = t.concat(&[v[0], v[1]], 2).unwrap(); project(t, y) })),
        ("stack", vec![e.clone(), e.clone()], Box::new(move |t, v| { let y = t.stack(&[v[0], v[1]], 1).unwrap(); project(t, y) })),
        ("gather", vec![random_tensor(&mut rng, &[5, 3])],
            Box::new(move |t, v| { let y = t.gather(v[0], &[4, 0, 4, 2, 1]).unwrap(); project(t, y) })),
        ("outer_const", vec![random_tensor(&mut rng, &[3])],
            Box::new(move |t, v| { let y = t.outer_const(&[2.0, -0.5, 0.25], v[0]).unwrap(); project(t, y) })),
        ("pairwise_product", vec![e.clone()], Box::new(move |t, v| { let y = t.pairwise_product(v[0]).unwrap(); project(t, y) })),
        ("broadcast_neighbors", vec![e.clone()], Box::new(move |t, v| { let y = t.broadcast_neighbors(v[0]).unwrap(); project(t, y) })),
        ("masked_softmax", vec![random_tensor(&mut rng, &[2, 4, 4])],
            Box::new(move |t, v| { let y = t.masked_softmax(v[0], &mask).unwrap(); project(t, y) })),
        ("weighted_sum", vec![random_tensor(&mut rng, &[2, 4, 4]), random_tensor(&mut rng, &[2, 4, 4, 3])],
            Box::new(move |t, v| { let y = t.weighted_sum(v[0], v[1]).unwrap(); project(t, y) })),
        ("logloss", vec![random_tensor(&mut rng, &[6]).clone()],
            Box::new(|t, v| t.logloss(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap())),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| (name, check_function(&inputs, |t, v| f(t, v))))
        .collect()
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let schema = DatasetSchema::new(vec![
        cat("a", 3),
        cat("b", 4),
        num("x"),
        cat("c", 5),
        cat("d", 3),
        num("y"),
    ])
    .unwrap();
    let batch = random_batch(&schema, 8, 44);
    let mut worst_model: (f64, String) = (0.0, String::new());
    let (mut entries, mut refined) = (0, 0);
    let mut models: Vec<(String, Model)> = Variant::ALL
        .iter()
        .map(|&v| {
            let config = make_variant(v, &ModelConfig::graphfm(6));
            (v.label().to_string(), Model::new(config, schema.clone()).unwrap())
        })
        .collect();
    models.push(("FM".into(), Model::new(ModelConfig::fm(16), schema.clone()).unwrap()));
    models.push(("LR".into(), Model::new(ModelConfig::lr(), schema.clone()).unwrap()));
    for (i, (name, model)) in models.iter_mut().enumerate() {
        randomize(model, 400 + i as u64, 0.5);
        let report = model.gradient_check(&batch).unwrap();
        entries += report.entries;
        refined += report.refined;
        if report.worst >= worst_model.0 {
            worst_model = (report.worst, format!("{name} {}", report.worst_at));
        }
    }
    let ops = primitive_op_errors();
    let (worst_op, worst_op_err) = ops
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (*k, *v))
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_model.0 < 1e-4 && worst_op_err < 1e-6 && secs < 60.0,
        format!(
            "{entries} parameter entries over 6 models ({refined} re-checked at smaller steps), worst rel err {:.2e} at {} (< 1e-4); {} ops, worst {:.2e} ({worst_op}) (< 1e-6); {secs:.1}s (< 60s)",
            worst_model.0,
            worst_model.1,
            ops.len(),
            worst_op_err
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 5: oracles

fn fm_identity_error() -> f64 {
    let schema = DatasetSchema::new(vec![cat("a", 4), num("x"), cat("b", 6), cat("c", 3), num("y"), cat("d", 5)]).unwrap();
    let mut model = Model::new(ModelConfig::fm(8), schema.clone()).unwrap();
    randomize(&mut model, 50, 0.7);
    let batch = random_batch(&schema, 64, 51);
    let got = model.logits(&batch).unwrap();
    let layout = model.layout().clone();
    let params = model.params();
    let mut worst: f64 = 0.0;
    for r in 0..64 {
        let (mut ci, mut ni) = (0, 0);
        let mut emb = Vec::new();
        let mut linear = params.get(layout.bias.unwrap()).data()[0];
        for (f, spec) in schema.fields.iter().enumerate() {
            let table = params.get(layout.embeddings[f]).data();
            let lin = params.get(layout.linear[f]).data();
            match spec.kind {
                FieldKind::Categorical => {
                    let v = batch.categorical[ci][r];
                    ci += 1;
                    emb.push(table[v * 8..(v + 1) * 8].to_vec());
                    linear += lin[v];
                }
                FieldKind::Numeric => {
                    let x = batch.numeric[ni][r];
                    ni += 1;
                    emb.push(table.iter().map(|t| t * x).collect::<Vec<_>>());
                    linear += lin[0] * x;
                }
            }
        }
        let mut pairs = 0.0;
        for i in 0..emb.len() {
            for j in i + 1..emb.len() {
                pairs += emb[i].iter().zip(&emb[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        worst = worst.max((got[r] - (linear + pairs)).abs());
    }
    worst
}

/// Masked softmax, edge weighting and neighbour sum on the tape, against a
/// dense loop that sets masked scores to −∞.
fn masked_aggregation_error() -> f64 {
    let (b, n, w) = (16, 7, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let scores = random_tensor(&mut rng, &[b, n, n]);
    let msgs = random_tensor(&mut rng, &[b, n, n, w]);
    let mut mask = vec![false; b * n * n];
    let mut p = vec![0.0; b * n * n];
    for row in 0..b * n {
        let m = rng.random_range(1..=n);
        let mut cols: Vec<usize> = (0..n).collect();
        for k in 0..m {
            let pick = rng.random_range(k..n);
            cols.swap(k, pick);
            mask[row * n + cols[k]] = true;
            p[row * n + cols[k]] = rng.random_range(0.01..1.0);
        }
    }
    let mut tape = Tape::standalone();
    let s = tape.constant(scores.clone());
    let pv = tape.constant(Tensor::new(&[b, n, n], p.clone()).unwrap());
    let mv = tape.constant(msgs.clone());
    let alpha = tape.masked_softmax(s, &mask).unwrap();
    let coef = tape.hadamard(alpha, pv).unwrap();
    let out = tape.weighted_sum(coef, mv).unwrap();
    let got = tape.value(out).data().to_vec();

    let mut worst: f64 = 0.0;
    for row in 0..b * n {
        let c: Vec<f64> = (0..n)
            .map(|j| if mask[row * n + j] { scores.data()[row * n + j] } else { f64::NEG_INFINITY })
            .collect();
        let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = c.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = ex.iter().sum();
        for k in 0..w {
            let want: f64 = (0..n)
                .map(|j| ex[j] / z * p[row * n + j] * msgs.data()[(row * n + j) * w + k])
                .sum();
            worst = worst.max((got[row * w + k] - want).abs());
        }
    }
    worst
}

/// Number of sizes checked and how many of them matched exactly.
fn auc_oracle() -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut sizes: Vec<usize> = vec![2, 3, 4, 5, 10, 50, 100, 250, 499, 500];
    sizes.extend((0..30).map(|_| rng.random_range(2..=500)));
    let mut exact = 0;
    for &size in &sizes {
        let mut labels: Vec<f64> = (0..size).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        // few distinct values, so ties are common
        let scores: Vec<f64> = (0..size).map(|_| f64::from(rng.random_range(0..7u8)) / 7.0).collect();
        let mut twice = 0u64;
        let (mut pos, mut neg) = (0u64, 0u64);
        for i in 0..size {
            if labels[i] == 1.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..size {
                if labels[i] == 1.0 && labels[j] == 0.0 {
                    twice += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
                }
            }
        }
        let oracle = (twice as f64 / 2.0) / (pos as f64 * neg as f64);
        if auc(&scores, &labels).unwrap() == oracle {
            exact += 1;
        }
    }
    (sizes.len(), exact)
}

fn criterion_5() -> Verdict {
    let fm = fm_identity_error();
    let agg = masked_aggregation_error();
    let (sizes, exact) = auc_oracle();
    verdict(
        fm < 1e-10 && agg < 1e-10 && exact == sizes,
        format!(
            "FM O(nd) vs pairwise max diff {fm:.1e} (< 1e-10); masked aggregation vs dense -inf reference {agg:.1e} (< 1e-10); AUC equals pairwise oracle exactly for {exact}/{sizes} sizes N <= 500 with ties"
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 6: planted-pair recovery

fn criterion_6() -> Verdict {
    let mut hits = 0;
    let mut details = Vec::new();
    for seed in 0..5u64 {
        let start = Instant::now();
        let s = synth::generate(&SynthSpec { seed, ..SynthSpec::default() }).unwrap();
        let dir = scratch(&format!("synth-{seed}"));
        let files = s.write(&dir).unwrap();
        let schema = graphfm::data::SchemaFile::load(&files.schema).unwrap();
        let loaded = graphfm::data::load_csv(&files.data, &schema, 1).unwrap();
        let splits = split(&loaded.dataset, &SplitSpec::standard(seed)).unwrap();
        let config = ModelConfig {
            init_seed: seed,
            ..ModelConfig::graphfm(8)
        };
        let model = Model::new(config, loaded.dataset.schema().clone()).unwrap();
        let train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let out = fit(model, loaded.encoder, &splits.train, &splits.val, train, None).unwrap();
        let freq = selection_frequency(&out.best, &splits.test).unwrap();
        let ranked = freq[1].ranked_pairs();
        let rank = ranked.iter().position(|(pair, _)| *pair == (0, 1)).unwrap();
        hits += usize::from(rank < 3);
        eprintln!(
            "  seed {seed}: best epoch {} val AUC {:.4}; planted rank {} rate {:.3}; top-3 {:?} ({:.0}s)",
            out.best_epoch,
            out.best_val_auc,
            rank + 1,
            ranked[rank].1,
            &ranked[..3],
            start.elapsed().as_secs_f64()
        );
        details.push(format!("seed {seed}: rank {}", rank + 1));
    }
    verdict(
        hits >= 4,
        format!("planted (f0, f1) in layer-2 top-3 for {hits}/5 seeds (need 4); {}", details.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// Criterion 7: structural invariants

fn trace_invariants() -> (bool, String) {
    let schema = DatasetSchema::new(vec![
        cat("a", 5),
        num("x"),
        cat("b", 4),
        cat("c", 6),
        cat("d", 3),
        num("y"),
        cat("e", 4),
        cat("f", 7),
    ])
    .unwrap();
    let mut model = Model::new(ModelConfig::graphfm(8), schema.clone()).unwrap();
    randomize(&mut model, 70, 0.6);
    let batch = random_batch(&schema, 32, 71);
    let n = 8;
    let mut tape = Tape::new(model.params());
    let fwd = model.forward(&mut tape, &batch).unwrap();
    let (mut symmetric, mut counts_ok, mut worst_sum) = (true, true, 0.0f64);
    for (trace, &m) in fwd.layers.iter().zip(&model.config().neighbors) {
        let scores = trace.scores.as_ref().unwrap().data();
        for b in 0..32 {
            for i in 0..n {
                for j in 0..n {
                    symmetric &= scores[(b * n + i) * n + j].to_bits() == scores[(b * n + j) * n + i].to_bits();
                }
            }
        }
        for row in trace.masked.data().chunks(n) {
            counts_ok &= row.iter().filter(|&&v| v != 0.0).count() == m;
        }
        for head in &trace.attention {
            for row in head.data().chunks(n) {
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    (
        symmetric && counts_ok && worst_sum <= 1e-9,
        format!(
            "scores symmetric bit-for-bit: {symmetric}; every masked row has m_k nonzeros: {counts_ok}; softmax row sums within {worst_sum:.1e} of 1"
        ),
    )
}

fn permutation_invariance() -> (bool, String) {
    let names = ["a", "b", "c", "d", "e", "f"];
    let vocab = [4, 6, 3, 5, 4, 7];
    let schema = DatasetSchema::new(names.iter().zip(vocab).map(|(n, v)| cat(n, v)).collect()).unwrap();
    let perm = [4, 2, 0, 5, 1, 3];
    let permuted = DatasetSchema::new(perm.iter().map(|&i| cat(names[i], vocab[i])).collect()).unwrap();
    // ReLU outputs and zero biases create exact score ties, which are broken
    // by field index; ELU and random biases make the toy tie-free.
    let config = ModelConfig {
        activation: Activation::Elu,
        ..ModelConfig::graphfm(6)
    };
    let mut model = Model::new(config.clone(), schema.clone()).unwrap();
    randomize(&mut model, 72, 0.6);
    let mut other = Model::new(config, permuted).unwrap();
    for (_, name, t) in model.params().iter() {
        let target = match name.strip_prefix("emb.") {
            Some(i) => {
                let i: usize = i.parse().unwrap();
                format!("emb.{}", perm.iter().position(|&p| p == i).unwrap())
            }
            None => name.to_string(),
        };
        let id = other.params().id(&target).unwrap();
        other.params_mut().set(id, t.clone()).unwrap();
    }
    let batch = random_batch(&schema, 64, 73);
    let mut tape = Tape::new(model.params());
    let mut tie_free = true;
    for t in model.forward(&mut tape, &batch).unwrap().layers {
        for row in t.scores.unwrap().data().chunks(6) {
            let mut r = row.to_vec();
            r.sort_by(f64::total_cmp);
            tie_free &= r.windows(2).all(|w| w[0] != w[1]);
        }
    }
    let mut pbatch = batch.clone();
    pbatch.categorical = perm.iter().map(|&i| batch.categorical[i].clone()).collect();
    let a = model.logits(&batch).unwrap();
    let b = other.logits(&pbatch).unwrap();
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    (
        tie_free && diff < 1e-8,
        format!("tie-free toy: {tie_free}; max logit diff under field permutation {diff:.1e} (< 1e-8)"),
    )
}

fn seed_determinism() -> (bool, String) {
    let s = synth::generate(&SynthSpec {
        n_fields: 6,
        rows: 3000,
        seed: 5,
        ..SynthSpec::default()
    })
    .unwrap();
    let files = s.write(&scratch("determinism-data")).unwrap();
    let run = |name: &str| {
        let out = scratch(name);
        let config = RunConfig {
            data: Some(files.data.clone()),
            schema: Some(files.schema.clone()),
            out: Some(out.clone()),
            seed: 11,
            epochs: 2,
            batch: 256,
            ..RunConfig::default()
        };
        cmd_train(&config).unwrap();
        std::fs::read(out.join(METRICS_FILE)).unwrap()
    };
    let (a, b) = (run("determinism-a"), run("determinism-b"));
    (a == b, format!("metrics.json byte-identical across two seeded runs: {}", a == b))
}

fn criterion_7() -> Verdict {
    let parts = [trace_invariants(), permutation_invariance(), seed_determinism()];
    verdict(
        parts.iter().all(|p| p.0),
        parts.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join("; "),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 7] = [
        (1, "MovieLens-1M GraphFM AUC and logloss", criterion_1),
        (2, "MovieLens-1M FM baseline band and GraphFM margin", criterion_2),
        (3, "MovieLens-1M ablation ordering over 3 seeds", criterion_3),
        (4, "gradient suite on a 6-field toy", criterion_4),
        (5, "FM identity, masked aggregation and AUC oracles", criterion_5),
        (6, "planted-pair recovery in layer-2 selection", criterion_6),
        (7, "structural invariants", criterion_7),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            NotRun(d) => ("NOT RUN", d),
        };
        println!("criterion {id} [{tag}] {name} ({secs:.1}s): {detail}");
    }
    let _ = std::fs::remove_dir_all(scratch_root());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn scratch_root() -> PathBuf {
    let probe: &Path = &std::env::temp_dir();
    probe.join(format!("graphfm-acceptance-{}", std::process::id()))
}
