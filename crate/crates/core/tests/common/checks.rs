//! Randomized invariant checks shared by the property tests and the
//! acceptance run. Each takes a seed and returns a description of the first
//! violation.

#![allow(dead_code)]

use diffcore::{checkpoint, Graph, NdArray, ParamStore};
use ocrl::harness::{train_run, Prepared, RunConfig};
use ocrl::model::{Forward, Model, ModelConfig};
use ocrl::ocrl::{adjacency_matrix, Ablations};
use ocrl::seeds;
use ocrl::video::VideoInput;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, amp: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-amp..amp);
        }
    }
}

/// Random features everywhere, including masked slots; object 0 is null.
pub fn random_video(rng: &mut ChaCha8Rng, c: &ModelConfig, p_live: f64) -> VideoInput {
    let (n, k, t) = (c.objects, c.clips, c.clip_len);
    let mut mask = NdArray::zeros(&[n * k, t]);
    for r in k..n * k {
        for i in 0..t {
            if rng.random_bool(p_live) {
                mask.set(r, i, 1.0);
            }
        }
    }
    let mut fill = |rows: usize, cols: usize| {
        NdArray::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    VideoInput {
        objects: n,
        clips: k,
        clip_len: t,
        appearance: fill(n * k * t, c.d_a),
        spatial: fill(n * k * t, 7),
        mask,
        context: fill(k, c.d_c),
        ids: (0..n).collect(),
    }
}

pub struct Instance {
    pub config: ModelConfig,
    pub model: Model,
    pub store: ParamStore,
    pub video: VideoInput,
    pub tokens: Vec<usize>,
    pub rng: ChaCha8Rng,
}

/// Small random shapes, ablations, parameters, video and question.
pub fn instance(seed: u64) -> Instance {
    let mut rng = seeds::rng(seeds::derive(seed, "instance"));
    let ablations = Ablations {
        no_gating: rng.random_bool(0.2),
        no_temporal_attention: rng.random_bool(0.2),
        no_bilstm: rng.random_bool(0.2),
        no_context: rng.random_bool(0.2),
    };
    let d = 2 * rng.random_range(2..5);
    let config = ModelConfig {
        d,
        d_h: rng.random_range(2..5),
        d_w: rng.random_range(2..6),
        d_a: rng.random_range(2..7),
        d_c: rng.random_range(1..5),
        clips: rng.random_range(1..4),
        clip_len: rng.random_range(1..5),
        objects: rng.random_range(2..6),
        layers: rng.random_range(0..4),
        steps: rng.random_range(1..4),
        vocab: 12,
        answers: rng.random_range(2..7),
        ablations,
    };
    let (model, mut store) = Model::init(config, seeds::derive(seed, "init")).unwrap();
    randomize(&mut store, &mut rng, 0.7);
    let p_live = rng.random_range(0.2..0.9);
    let video = random_video(&mut rng, &config, p_live);
    let len = rng.random_range(1..7);
    let tokens = (0..len).map(|_| rng.random_range(0..config.vocab)).collect();
    Instance {
        config,
        model,
        store,
        video,
        tokens,
        rng,
    }
}

pub fn forward(inst: &Instance, video: &VideoInput) -> (Graph, Forward) {
    let mut g = Graph::new();
    let fw = inst.model.forward(&mut g, &inst.store, &inst.tokens, video).unwrap();
    (g, fw)
}

fn sums_to_one(xs: &[f64], what: &str) -> Check {
    let s: f64 = xs.iter().sum();
    if (s - 1.0).abs() > 1e-9 || xs.iter().any(|&x| x < 0.0) {
        return Err(format!("{what}: {xs:?} sums to {s}"));
    }
    Ok(())
}

/// Word, frame and object attention rows are distributions over their
/// unmasked entries; fully masked rows are zero.
pub fn attention_normalization(seed: u64) -> Check {
    let inst = instance(seed);
    let (g, fw) = forward(&inst, &inst.video);
    sums_to_one(g.value(fw.question.alpha).data(), "word attention")?;
    let alpha = g.value(fw.video.alpha);
    for r in 0..alpha.rows() {
        let m = inst.video.mask.row_slice(r);
        let row = alpha.row_slice(r);
        if m.iter().all(|&x| x == 0.0) {
            if row.iter().any(|&x| x != 0.0) {
                return Err(format!("masked clip row {r} has weights {row:?}"));
            }
            continue;
        }
        sums_to_one(row, "frame attention")?;
        if row.iter().zip(m).any(|(&a, &mm)| mm == 0.0 && a != 0.0) {
            return Err(format!("masked frame got weight in row {r}"));
        }
    }
    let a = g.value(fw.video.attention);
    let (k, n) = (inst.config.clips, inst.config.objects);
    for kk in 0..k {
        let any = (0..n).any(|o| inst.video.clip_present(o, kk));
        let row = a.row_slice(kk);
        if any {
            sums_to_one(row, "object attention")?;
        } else if row.iter().any(|&x| x != 0.0) {
            return Err(format!("empty clip {kk} has object weights {row:?}"));
        }
        for o in 0..n {
            if !inst.video.clip_present(o, kk) && row[o] != 0.0 {
                return Err(format!("absent object {o} weighted in clip {kk}"));
            }
        }
    }
    Ok(())
}

/// Changing features at masked slots leaves every downstream value exactly
/// unchanged.
pub fn mask_soundness(seed: u64) -> Check {
    let mut inst = instance(seed);
    let mut perturbed = inst.video.clone();
    let t = perturbed.clip_len;
    for r in 0..perturbed.mask.rows() {
        for i in 0..t {
            if perturbed.mask.get(r, i) == 0.0 {
                let row = r * t + i;
                for j in 0..perturbed.appearance.cols() {
                    perturbed.appearance.set(row, j, inst.rng.random_range(-50.0..50.0));
                }
                for j in 0..7 {
                    perturbed.spatial.set(row, j, inst.rng.random_range(-50.0..50.0));
                }
            }
        }
    }
    let (g0, f0) = forward(&inst, &inst.video);
    let (g1, f1) = forward(&inst, &perturbed);
    let pairs = [
        ("parts", f0.video.parts, f1.video.parts),
        ("attention", f0.video.attention, f1.video.attention),
        ("nodes", f0.video.nodes, f1.video.nodes),
        ("resumes", f0.video.resumes, f1.video.resumes),
        ("memory", f0.memory, f1.memory),
        ("probs", f0.probs, f1.probs),
    ];
    for (name, a, b) in pairs {
        if g0.value(a).data() != g1.value(b).data() {
            return Err(format!("{name} changed under masked perturbation"));
        }
    }
    Ok(())
}

/// Permuting objects permutes résumés and leaves the answer distribution
/// unchanged, both within 1e-9.
pub fn permutation(seed: u64) -> Check {
    let mut inst = instance(seed);
    let n = inst.config.objects;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut inst.rng);
    let moved = inst.video.permuted(&perm);
    let (g0, f0) = forward(&inst, &inst.video);
    let (g1, f1) = forward(&inst, &moved);
    let r0 = g0.value(f0.video.resumes);
    let r1 = g1.value(f1.video.resumes);
    for (i, &pi) in perm.iter().enumerate() {
        for (a, b) in r1.row_slice(i).iter().zip(r0.row_slice(pi)) {
            if (a - b).abs() > 1e-9 {
                return Err(format!("résumé {i} (was {pi}) differs: {a} vs {b}"));
            }
        }
    }
    for (a, b) in g0.value(f0.probs).data().iter().zip(g1.value(f1.probs).data()) {
        if (a - b).abs() > 1e-9 {
            return Err(format!("answer distribution moved: {a} vs {b}"));
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &NdArray) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|r| a.row_slice(r).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i][i]).collect()
}

/// Every `A_k` is symmetric with second singular value below 1e-9 of the
/// first.
pub fn rank_one(seed: u64) -> Check {
    let inst = instance(seed);
    let (g, fw) = forward(&inst, &inst.video);
    let a = g.value(fw.video.attention);
    for k in 0..a.rows() {
        let big = adjacency_matrix(a, k);
        let n = big.rows();
        for i in 0..n {
            for j in 0..n {
                if big.get(i, j) != big.get(j, i) || big.get(i, j) < 0.0 {
                    return Err(format!("A_{k} not symmetric nonnegative at ({i},{j})"));
                }
            }
        }
        let mut sv: Vec<f64> = symmetric_eigenvalues(&big).iter().map(|x| x.abs()).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        if sv[0] == 0.0 {
            continue;
        }
        if sv.len() > 1 && sv[1] >= 1e-9 * sv[0] {
            return Err(format!("A_{k} singular values {sv:?}"));
        }
    }
    Ok(())
}

/// Save, load and save again gives identical bytes, after optimizer steps
/// so the moment buffers are populated.
pub fn checkpoint_round_trip(seed: u64) -> Check {
    let inst = instance(seed);
    let mut store = inst.store.clone();
    let mut g = Graph::new();
    let (l, _) = inst.model.loss(&mut g, &store, &inst.tokens, &inst.video, 0).unwrap();
    let grads = g.backward(l, &store).unwrap();
    for _ in 0..1 + (seed % 3) {
        store.adam_step(&grads, &diffcore::Adam::default()).unwrap();
    }
    let meta = vec![("seed".to_string(), seed.to_string())];
    let a = checkpoint::encode(&store, &meta).map_err(|e| e.to_string())?;
    let back = checkpoint::decode(&a).map_err(|e| e.to_string())?;
    let b = checkpoint::encode(&back.store, &back.meta).map_err(|e| e.to_string())?;
    if a != b {
        return Err("re-encoded checkpoint differs".into());
    }
    for (x, y) in store.iter().zip(back.store.iter()) {
        if x.0 != y.0 || x.1.data().iter().zip(y.1.data()).any(|(p, q)| p.to_bits() != q.to_bits()) {
            return Err(format!("parameter {} not restored bit-exactly", x.0));
        }
    }
    Ok(())
}

/// A tiny end-to-end config: generation, tracking, training and evaluation.
pub fn tiny_run_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        scenes: 4,
        qa_per_category: 1,
        frames: 6,
        max_objects: 3,
        d: 8,
        d_h: 4,
        d_w: 4,
        d_a: 6,
        d_c: 6,
        clips: 2,
        clip_len: 3,
        objects: 3,
        layers: 1,
        steps: 2,
        batch: 4,
        epochs: 2,
        ..RunConfig::default()
    }
}

/// Two runs from the same seed write identical dataset, checkpoint and
/// report files.
pub fn run_determinism(seed: u64) -> Check {
    let cfg = tiny_run_config(seed);
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let data = dir.path().join("data");
        let out = dir.path().join("run");
        let ds = ocrl::harness::generate(&cfg, &data).map_err(|e| e.to_string())?;
        let prep = Prepared::new(ds, &cfg).map_err(|e| e.to_string())?;
        train_run(&cfg, &prep, Some(&out), false).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for p in [
            data.join("records.jsonl"),
            data.join("scenes.jsonl"),
            data.join("detections.bin"),
            data.join("vocab.txt"),
            out.join("checkpoint.bin"),
            out.join("metrics.jsonl"),
        ] {
            files.push(std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?);
        }
        outputs.push(files);
    }
    if outputs[0] != outputs[1] {
        return Err("repeated run wrote different files".into());
    }
    Ok(())
}

/// Re-answers every record with the template interpreter on the stored
/// scene; returns the number checked.
pub fn reverify(ds: &ocrl::data::Dataset) -> Result<usize, String> {
    for (i, r) in ds.records.iter().enumerate() {
        let spec = &ds.scenes[r.scene].spec;
        let got = ocrl::scenegen::interpret::answer(&r.tokens, spec).map_err(|e| format!("record {i}: {e}"))?;
        if got != r.label || ds.answers.labels[r.answer] != r.label {
            return Err(format!("record {i} `{}`: stored {} got {got}", r.tokens.join(" "), r.label));
        }
    }
    Ok(ds.records.len())
}
