//! Each ablation switch changes only the stage it names.

mod common;

use common::checks::instance;
use diffcore::{Graph, NdArray, ParamStore};
use ocrl::model::{Model, ModelConfig};

fn set(store: &mut ParamStore, name: &str, value: NdArray) {
    let id = store.id(name).unwrap();
    *store.get_mut(id) = value;
}

fn zero(store: &mut ParamStore, name: &str) {
    let z = NdArray::zeros(store.by_name(name).unwrap().shape());
    set(store, name, z);
}

/// Feeds the gated and the concatenating encoder parameters that make
/// their slot features agree exactly; everything downstream must then
/// agree to the bit.
#[test]
fn no_gating_only_replaces_the_slot_encoder() {
    let mut compared = 0;
    for seed in 0..40u64 {
        let mut inst = instance(seed);
        inst.config.ablations.no_gating = false;
        let gated_cfg: ModelConfig = inst.config;
        let mut store = inst.store.clone();
        zero(&mut store, "ocrl.app.w");
        zero(&mut store, "ocrl.pos.w");
        let gated = Model::bind(gated_cfg, &store).unwrap();
        let mut g1 = Graph::new();
        let a = gated.forward(&mut g1, &store, &inst.tokens, &inst.video).unwrap();
        let v_ap = g1.value(a.video.v_ap).clone();
        let Some(live) = (0..v_ap.rows()).find(|&r| inst.video.mask.data()[r] != 0.0) else {
            continue;
        };
        let row = NdArray::matrix(1, v_ap.cols(), v_ap.row_slice(live).to_vec()).unwrap();
        zero(&mut store, "ocrl.concat.w");
        set(&mut store, "ocrl.concat.b", row);

        let mut plain_cfg = gated_cfg;
        plain_cfg.ablations.no_gating = true;
        let plain = Model::bind(plain_cfg, &store).unwrap();
        let mut g1 = Graph::new();
        let a = gated.forward(&mut g1, &store, &inst.tokens, &inst.video).unwrap();
        let mut g2 = Graph::new();
        let b = plain.forward(&mut g2, &store, &inst.tokens, &inst.video).unwrap();
        for (x, y, what) in [
            (a.video.v_ap, b.video.v_ap, "v_ap"),
            (a.video.parts, b.video.parts, "parts"),
            (a.video.attention, b.video.attention, "attention"),
            (a.video.nodes, b.video.nodes, "nodes"),
            (a.video.resumes, b.video.resumes, "resumes"),
            (a.memory, b.memory, "memory"),
            (a.probs, b.probs, "probs"),
        ] {
            assert_eq!(g1.value(x).data(), g2.value(y).data(), "{what} seed {seed}");
        }
        compared += 1;
    }
    assert!(compared > 30);
}

/// Switches never add or drop parameters, so a checkpoint binds under any
/// variant.
#[test]
fn switches_share_one_parameter_set() {
    let base = ModelConfig::tiny(9, 4);
    let (_, store) = Model::init(base, 3).unwrap();
    for flip in 0..4 {
        let mut c = base;
        match flip {
            0 => c.ablations.no_gating = true,
            1 => c.ablations.no_temporal_attention = true,
            2 => c.ablations.no_bilstm = true,
            _ => c.ablations.no_context = true,
        }
        let (_, other) = Model::init(c, 3).unwrap();
        let names = |s: &ParamStore| s.iter().map(|(n, a)| (n.to_string(), a.shape().to_vec())).collect::<Vec<_>>();
        assert_eq!(names(&store), names(&other));
        Model::bind(c, &store).unwrap();
    }
}
