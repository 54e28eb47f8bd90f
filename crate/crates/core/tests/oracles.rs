//! The whole forward pass re-evaluated with plain loops over nested vectors
//! and compared against the tape, for random parameters (biases included),
//! random masks and every ablation switch.

mod common;

use common::checks::{random_video, randomize};
use common::*;
use diffcore::{Graph, NdArray, ParamStore};
use ocrl::model::{Model, ModelConfig};
use ocrl::ocrl::{adjacency_matrix, Ablations};
use ocrl::qencoder::encode_question;
use ocrl::seeds;
use ocrl::video::VideoInput;
use rand::Rng;

const TOL: f64 = 1e-10;

struct Reference {
    e_s: M,
    q_g: Vec<f64>,
    q: Vec<f64>,
    /// `[o][k][i]`
    v_ap: Vec<Vec<Vec<Vec<f64>>>>,
    alpha: Vec<Vec<Vec<f64>>>,
    /// `[o][k]`
    parts: Vec<Vec<Vec<f64>>>,
    /// `[k][o]`
    attention: M,
    /// `[k][o]`
    nodes: Vec<M>,
    resumes: M,
    memory: Vec<f64>,
    probs: Vec<f64>,
}

fn reference(store: &ParamStore, c: &ModelConfig, tokens: &[usize], v: &VideoInput) -> Reference {
    let abl = c.ablations;
    let (n, kk, t) = (c.objects, c.clips, c.clip_len);

    // Question.
    let embed = p(store, "qenc.embed");
    let fw = LstmP::load(store, "qenc.fwd");
    let bw = LstmP::load(store, "qenc.bwd");
    let hd = c.d / 2;
    let s_len = tokens.len();
    let mut fwd = Vec::new();
    let (mut h, mut cc) = (vec![0.0; hd], vec![0.0; hd]);
    for &tok in tokens {
        (h, cc) = fw.step(&embed[tok], &h, &cc);
        fwd.push(h.clone());
    }
    let mut bwd = vec![Vec::new(); s_len];
    let (mut h, mut cc) = (vec![0.0; hd], vec![0.0; hd]);
    for s in (0..s_len).rev() {
        (h, cc) = bw.step(&embed[tokens[s]], &h, &cc);
        bwd[s] = h.clone();
    }
    let e_s: M = (0..s_len).map(|s| cat(&bwd[s], &fwd[s])).collect();
    let q_g = cat(&bwd[0], &fwd[s_len - 1]);
    let wq = flat(&p(store, "qenc.wq"));
    let logits: Vec<f64> = e_s.iter().map(|e| dot(&hadamard(e, &q_g), &wq)).collect();
    let a = softmax(&logits);
    let mut q = vec![0.0; c.d];
    for (e, w) in e_s.iter().zip(&a) {
        q = add(&q, &scale(e, *w));
    }

    // Slots.
    let live = |o: usize, k: usize, i: usize| v.mask.get(o * kk + k, i) != 0.0;
    let slot = |arr: &NdArray, o: usize, k: usize, i: usize| arr.row_slice((o * kk + k) * t + i).to_vec();
    let (app_w, app_b) = (p(store, "ocrl.app.w"), row(store, "ocrl.app.b"));
    let (pos_w, pos_b) = (p(store, "ocrl.pos.w"), row(store, "ocrl.pos.b"));
    let (cat_w, cat_b) = (p(store, "ocrl.concat.w"), row(store, "ocrl.concat.b"));
    let mut v_ap = vec![vec![Vec::new(); kk]; n];
    for o in 0..n {
        for k in 0..kk {
            for i in 0..t {
                let va = slot(&v.appearance, o, k, i);
                let vp = slot(&v.spatial, o, k, i);
                let x = if !live(o, k, i) {
                    vec![0.0; c.d]
                } else if abl.no_gating {
                    affine(&cat(&va, &vp), &cat_w, &cat_b)
                } else {
                    let f: Vec<f64> = affine(&va, &app_w, &app_b).iter().map(|x| x.tanh()).collect();
                    let gte: Vec<f64> = affine(&vp, &pos_w, &pos_b).iter().map(|x| sigmoid(*x)).collect();
                    hadamard(&f, &gte)
                };
                v_ap[o][k].push(x);
            }
        }
    }

    // Temporal parts.
    let qq = affine(&q, &p(store, "ocrl.att_q.w"), &row(store, "ocrl.att_q.b"));
    let (att_v_w, att_v_b) = (p(store, "ocrl.att_v.w"), row(store, "ocrl.att_v.b"));
    let att_w = flat(&p(store, "ocrl.att_w"));
    let mut alpha = vec![vec![Vec::new(); kk]; n];
    let mut parts = vec![vec![Vec::new(); kk]; n];
    for o in 0..n {
        for k in 0..kk {
            let keep: Vec<bool> = (0..t).map(|i| live(o, k, i)).collect();
            let logits: Vec<f64> = if abl.no_temporal_attention {
                vec![0.0; t]
            } else {
                (0..t)
                    .map(|i| dot(&hadamard(&affine(&v_ap[o][k][i], &att_v_w, &att_v_b), &qq), &att_w))
                    .collect()
            };
            let al = softmax_masked(&logits, &keep);
            let mut ck = vec![0.0; c.d];
            for i in 0..t {
                ck = add(&ck, &scale(&v_ap[o][k][i], al[i]));
            }
            alpha[o][k] = al;
            parts[o][k] = ck;
        }
    }
    let present = |o: usize, k: usize| (0..t).any(|i| live(o, k, i));

    // Graphs.
    let adj_w = flat(&p(store, "ocrl.adj_w"));
    let ctx_w = p(store, "ocrl.ctx_w");
    let mut attention = Vec::new();
    let mut nodes = Vec::new();
    for k in 0..kk {
        let logits: Vec<f64> = (0..n)
            .map(|o| dot(&cat(&parts[o][k], &hadamard(&parts[o][k], &q)), &adj_w))
            .collect();
        let keep: Vec<bool> = (0..n).map(|o| present(o, k)).collect();
        let a = softmax_masked(&logits, &keep);
        let mut hk: M = (0..n).map(|o| parts[o][k].clone()).collect();
        if keep.iter().any(|&b| b) {
            let ctx = if abl.no_context {
                vec![0.0; c.d]
            } else {
                vecmat(v.context.row_slice(k), &ctx_w)
            };
            for l in 0..c.layers {
                let w1 = p(store, &format!("ocrl.gcn{l}.w1"));
                let w2 = p(store, &format!("ocrl.gcn{l}.w2"));
                let b = row(store, &format!("ocrl.gcn{l}.b"));
                let hw: M = hk.iter().map(|r| vecmat(r, &w1)).collect();
                // (A H W1)_i = Σ_j a_i a_j (H W1)_j
                let next: M = (0..n)
                    .map(|i| {
                        let mut ah = vec![0.0; c.d];
                        for j in 0..n {
                            ah = add(&ah, &scale(&hw[j], a[i] * a[j]));
                        }
                        let pre = add(&add(&ah, &ctx), &b);
                        let act: Vec<f64> = pre.iter().map(|x| elu(*x)).collect();
                        let f = vecmat(&act, &w2);
                        add(&hk[i], &f).iter().map(|x| elu(*x)).collect()
                    })
                    .collect();
                hk = next;
            }
        }
        attention.push(a);
        nodes.push(hk);
    }

    // Linking.
    let x = |o: usize, k: usize| {
        if present(o, k) {
            nodes[k][o].clone()
        } else {
            vec![0.0; c.d]
        }
    };
    let resumes: M = (0..n)
        .map(|o| {
            if abl.no_bilstm {
                let cnt = (0..kk).filter(|&k| present(o, k)).count().max(1) as f64;
                let mut s = vec![0.0; c.d];
                for k in 0..kk {
                    s = add(&s, &x(o, k));
                }
                let mean = scale(&s, 1.0 / cnt);
                if c.d == 2 * c.d_h {
                    mean
                } else {
                    affine(&mean, &p(store, "ocrl.pool_proj.w"), &row(store, "ocrl.pool_proj.b"))
                }
            } else {
                let lf = LstmP::load(store, "ocrl.link_fwd");
                let lb = LstmP::load(store, "ocrl.link_bwd");
                let mut h = affine(&q, &p(store, "ocrl.init_fwd.w"), &row(store, "ocrl.init_fwd.b"));
                let mut cc = vec![0.0; c.d_h];
                for k in 0..kk {
                    (h, cc) = lf.step(&x(o, k), &h, &cc);
                }
                let last_fwd = h;
                let mut h = affine(&q, &p(store, "ocrl.init_bwd.w"), &row(store, "ocrl.init_bwd.b"));
                let mut cc = vec![0.0; c.d_h];
                for k in (0..kk).rev() {
                    (h, cc) = lb.step(&x(o, k), &h, &cc);
                }
                cat(&h, &last_fwd)
            }
        })
        .collect();
    let valid: Vec<bool> = (0..n).map(|o| (0..kk).any(|k| present(o, k))).collect();

    // Reasoning, unrolled.
    let know: M = resumes.iter().map(|r| vecmat(r, &p(store, "mac.resume_proj"))).collect();
    let (key_w, key_b) = (p(store, "mac.key.w"), row(store, "mac.key.b"));
    let (ctl_w, ctl_b) = (p(store, "mac.control.w"), row(store, "mac.control.b"));
    let (mem_w, mem_b) = (p(store, "mac.memory.w"), row(store, "mac.memory.b"));
    let word_w = flat(&p(store, "mac.word_w"));
    let read_w = flat(&p(store, "mac.read_w"));
    let read_mem = p(store, "mac.read_mem");
    let read_mix = p(store, "mac.read_mix");
    let mut control = vec![0.0; c.d];
    let mut memory = affine(&q_g, &p(store, "mac.memory0.w"), &row(store, "mac.memory0.b"));
    for _ in 0..c.steps {
        let key: Vec<f64> = affine(&cat(&q_g, &control), &key_w, &key_b)
            .iter()
            .map(|x| x.tanh())
            .collect();
        let wl: Vec<f64> = e_s.iter().map(|e| dot(&hadamard(e, &key), &word_w)).collect();
        let gamma = softmax(&wl);
        let mut readout = vec![0.0; c.d];
        for (e, g) in e_s.iter().zip(&gamma) {
            readout = add(&readout, &scale(e, *g));
        }
        control = affine(&cat(&cat(&q_g, &control), &readout), &ctl_w, &ctl_b);
        let mproj = vecmat(&memory, &read_mem);
        let rl: Vec<f64> = know
            .iter()
            .map(|kn| {
                let mixed = vecmat(&cat(&hadamard(kn, &mproj), kn), &read_mix);
                dot(&hadamard(&mixed, &control), &read_w)
            })
            .collect();
        let beta = softmax_masked(&rl, &valid);
        let mut read = vec![0.0; c.d];
        for (kn, b) in know.iter().zip(&beta) {
            read = add(&read, &scale(kn, *b));
        }
        memory = affine(&cat(&memory, &read), &mem_w, &mem_b);
    }

    let hidden: Vec<f64> = affine(&cat(&memory, &q), &p(store, "dec.hidden.w"), &row(store, "dec.hidden.b"))
        .iter()
        .map(|x| elu(*x))
        .collect();
    let probs = softmax(&affine(&hidden, &p(store, "dec.out.w"), &row(store, "dec.out.b")));

    Reference {
        e_s,
        q_g,
        q,
        v_ap,
        alpha,
        parts,
        attention,
        nodes,
        resumes,
        memory,
        probs,
    }
}

fn compare(config: ModelConfig, seed: u64) {
    let mut rng = seeds::rng(seed);
    let (model, mut store) = Model::init(config, seed).unwrap();
    randomize(&mut store, &mut rng, 0.6);
    let video = random_video(&mut rng, &config, 0.6);
    let len = rng.random_range(1..6);
    let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..config.vocab)).collect();

    let mut g = Graph::new();
    let fw = model.forward(&mut g, &store, &tokens, &video).unwrap();
    let r = reference(&store, &config, &tokens, &video);
    let (n, kk, t) = (config.objects, config.clips, config.clip_len);
    let ctx = format!("seed {seed}, {:?}", config.ablations);

    assert!(max_abs_diff(g.value(fw.question.e_s).data(), &flat(&r.e_s)) < TOL, "e_s {ctx}");
    assert!(max_abs_diff(g.value(fw.question.q_g).data(), &r.q_g) < TOL, "q_g {ctx}");
    assert!(max_abs_diff(g.value(fw.question.q).data(), &r.q) < TOL, "q {ctx}");
    let v_ap: Vec<f64> = r.v_ap.iter().flatten().flatten().flatten().copied().collect();
    assert!(max_abs_diff(g.value(fw.video.v_ap).data(), &v_ap) < TOL, "v_ap {ctx}");
    let alpha: Vec<f64> = r.alpha.iter().flatten().flatten().copied().collect();
    assert!(max_abs_diff(g.value(fw.video.alpha).data(), &alpha) < TOL, "alpha {ctx}");
    let parts: Vec<f64> = r.parts.iter().flatten().flatten().copied().collect();
    assert!(max_abs_diff(g.value(fw.video.parts).data(), &parts) < TOL, "parts {ctx}");
    assert!(max_abs_diff(g.value(fw.video.attention).data(), &flat(&r.attention)) < TOL, "a {ctx}");
    let nodes: Vec<f64> = r.nodes.iter().flatten().flatten().copied().collect();
    assert!(max_abs_diff(g.value(fw.video.nodes).data(), &nodes) < TOL, "nodes {ctx}");
    assert!(max_abs_diff(g.value(fw.video.resumes).data(), &flat(&r.resumes)) < TOL, "resumes {ctx}");
    assert!(max_abs_diff(g.value(fw.memory).data(), &r.memory) < TOL, "memory {ctx}");
    assert!(max_abs_diff(g.value(fw.probs).data(), &r.probs) < TOL, "probs {ctx}");

    // A_k from the attention row is the outer product, entry by entry.
    let a = g.value(fw.video.attention);
    for k in 0..kk {
        let big = adjacency_matrix(a, k);
        for i in 0..n {
            for j in 0..n {
                assert!((big.get(i, j) - r.attention[k][i] * r.attention[k][j]).abs() < TOL);
            }
        }
    }
    assert_eq!(g.value(fw.video.alpha).len(), n * kk * t);
}

fn tiny(objects: usize, clips: usize, clip_len: usize, layers: usize, ablations: Ablations) -> ModelConfig {
    ModelConfig {
        objects,
        clips,
        clip_len,
        layers,
        ablations,
        ..ModelConfig::tiny(9, 4)
    }
}

#[test]
fn forward_matches_reference_default() {
    for seed in 0..12 {
        compare(tiny(3, 2, 4, 2, Ablations::default()), seed);
    }
}

#[test]
fn two_node_single_layer_graph_matches_reference() {
    for seed in 100..110 {
        compare(tiny(2, 2, 3, 1, Ablations::default()), seed);
    }
}

#[test]
fn forward_matches_reference_under_each_ablation() {
    let switches = [
        Ablations {
            no_gating: true,
            ..Ablations::default()
        },
        Ablations {
            no_temporal_attention: true,
            ..Ablations::default()
        },
        Ablations {
            no_bilstm: true,
            ..Ablations::default()
        },
        Ablations {
            no_context: true,
            ..Ablations::default()
        },
        Ablations {
            no_gating: true,
            no_temporal_attention: true,
            no_bilstm: true,
            no_context: true,
        },
    ];
    for (i, abl) in switches.into_iter().enumerate() {
        for seed in 0..4 {
            compare(tiny(3, 3, 2, 2, abl), 200 + 10 * i as u64 + seed);
        }
    }
    for layers in [0, 1, 3] {
        compare(tiny(3, 2, 2, layers, Ablations::default()), 300 + layers as u64);
    }
}

#[test]
fn pooled_link_with_projection() {
    // The tiny config has d == 2·d_h; d_h = 3 forces the projection.
    let c = ModelConfig {
        d_h: 3,
        ..tiny(
            3,
            2,
            2,
            1,
            Ablations {
                no_bilstm: true,
                ..Ablations::default()
            },
        )
    };
    for seed in 0..3 {
        compare(c, 400 + seed);
    }
}

/// Reversing the tokens and swapping the forward and backward recurrence
/// weights swaps the two halves of `q_g`.
#[test]
fn question_encoder_directional_symmetry() {
    for seed in 0..20u64 {
        let mut rng = seeds::rng(seed);
        let config = ModelConfig::tiny(11, 3);
        let (model, mut store) = Model::init(config, seed).unwrap();
        randomize(&mut store, &mut rng, 0.8);
        let len = rng.random_range(1..8);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..11)).collect();

        let mut swapped = store.clone();
        for part in ["wx", "wh", "b"] {
            let f = store.by_name(&format!("qenc.fwd.{part}")).unwrap().clone();
            let b = store.by_name(&format!("qenc.bwd.{part}")).unwrap().clone();
            *swapped.get_mut(swapped.id(&format!("qenc.fwd.{part}")).unwrap()) = b;
            *swapped.get_mut(swapped.id(&format!("qenc.bwd.{part}")).unwrap()) = f;
        }
        let reversed: Vec<usize> = tokens.iter().rev().copied().collect();

        // Parameter leaves are cached per graph, so each store gets its own.
        let (mut g1, mut g2) = (Graph::new(), Graph::new());
        let a = encode_question(&mut g1, &store, &model.qenc, &tokens).unwrap();
        let b = encode_question(&mut g2, &swapped, &model.qenc, &reversed).unwrap();
        let (qa, qb) = (g1.value(a.q_g).data().to_vec(), g2.value(b.q_g).data().to_vec());
        let h = qa.len() / 2;
        assert_eq!(&qa[..h], &qb[h..]);
        assert_eq!(&qa[h..], &qb[..h]);
    }
}
