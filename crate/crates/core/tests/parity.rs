//! With one participant, no pooling, a fixed offset and MLP backbones, the
//! social model contains the flat baseline as a special case: identity
//! encoders plus bias corrections for the constant offset code.

use groupcast::encoding::offset_encoding;
use groupcast::model::{Model, ModelConfig, ZChoice};
use groupcast::nn::{Graph, Mat, ParamStore};
use groupcast::synthdata::{generate_glancing_corpus, ContextMode, GlancingTrainStream, MetaSample, SequencePair};
use groupcast::training::elbo_loss;
use ndarray::{s, Array2};

fn micro(variant: &str) -> ModelConfig {
    let mut c = ModelConfig::glancing(variant.parse().unwrap());
    c.obs_len = 2;
    c.fut_len = 2;
    c.embed_dim = 2;
    c.encoder_hidden = vec![4];
    c.width = 3;
    c.decoder_hidden = vec![3];
    c.pool = false;
    c
}

fn tasks() -> Vec<MetaSample> {
    let stream = GlancingTrainStream::new(generate_glancing_corpus(), ContextMode::Mixed, 3);
    (0..4)
        .map(|i| {
            let mut t = stream.sample(i);
            let cut = |p: &SequencePair| {
                SequencePair::new(
                    p.observed.slice(s![8.., .., ..]).to_owned(),
                    p.future.slice(s![..2, .., ..]).to_owned(),
                    p.offset,
                )
                .unwrap()
            };
            t.context = t.context.iter().take(4).map(cut).collect();
            t.target = t.target.iter().take(6).map(cut).collect();
            t
        })
        .collect()
}

fn set(store: &mut ParamStore, name: &str, value: Mat) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    assert_eq!(store.value(id).dim(), value.dim(), "{name}");
    *store.value_mut(id) = value;
}

/// Two-layer ReLU net computing the identity: relu(x) − relu(−x).
fn identity_mlp(store: &mut ParamStore, name: &str, d: usize) {
    let mut w1 = Mat::zeros((d, 2 * d));
    let mut w2 = Mat::zeros((2 * d, d));
    for i in 0..d {
        w1[[i, i]] = 1.0;
        w1[[i, d + i]] = -1.0;
        w2[[i, i]] = 1.0;
        w2[[d + i, i]] = -1.0;
    }
    set(store, &format!("{name}.0.weight"), w1);
    set(store, &format!("{name}.0.bias"), Mat::zeros((1, 2 * d)));
    set(store, &format!("{name}.1.weight"), w2);
    set(store, &format!("{name}.1.bias"), Mat::zeros((1, d)));
}

fn loss(model: &Model, task: &MetaSample, eps: f64) -> f64 {
    let mut g = Graph::new(&model.params);
    let out = model.forward(&mut g, task, &ZChoice::Posterior(Mat::from_elem((1, 1), eps))).unwrap();
    let t = elbo_loss(&mut g, &out, 1.0);
    g.scalar(t.loss)
}

#[test]
fn social_and_flat_latent_models_agree() {
    let np = Model::new(micro("NP-latent"), 21).unwrap();
    let mut sp = Model::new(micro("SP-MLP-latent"), 5).unwrap();
    let p = &mut sp.params;

    for id in np.params.ids() {
        let name = np.params.name(id);
        set(p, name, np.params.value(id).clone());
    }
    identity_mlp(p, "x.self", 2);
    identity_mlp(p, "y", 2);
    let mut fuse = Mat::zeros((4, 2));
    fuse[[0, 0]] = 1.0;
    fuse[[1, 1]] = 1.0;
    set(p, "x.fuse.weight", fuse);

    // e = x + OE(1): fold the constant code into the first biases that see e
    let oe = Array2::from_shape_vec((1, 2), offset_encoding(1, 2).unwrap()).unwrap();
    for layer in ["latent.pair.0", "dec.mlp.0"] {
        let w = np.params.value(np.params.find(&format!("{layer}.weight")).unwrap());
        let b = np.params.value(np.params.find(&format!("{layer}.bias")).unwrap());
        let shift = oe.dot(&w.slice(s![..2, ..]));
        set(p, &format!("{layer}.bias"), b - &shift);
    }

    for (i, task) in tasks().iter().enumerate() {
        for eps in [-1.3, 0.0, 0.7] {
            let (a, b) = (loss(&np, task, eps), loss(&sp, task, eps));
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "task {i}, eps {eps}: NP {a} vs SP {b}");
        }
    }
}
