use fmamba::autodiff::{Ctx, Tape};
use fmamba::fusion::{dfem, dfem_params};
use fmamba::network::{decode, encode, load_state, load_state_for, save_state, STATE_VERSION};
use fmamba::params::{initialize, SpecBuilder};
use fmamba::synthetic::scene_pair;
use fmamba::{Error, Model, ModelConfig, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn init_is_seeded() {
    let a = Model::init(ModelConfig::micro()).unwrap();
    let b = Model::init(ModelConfig::micro()).unwrap();
    let c = Model::init(ModelConfig { seed: 1, ..ModelConfig::micro() }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params, c.params);
    a.verify().unwrap();
}

#[test]
fn fuse_output_is_bounded_and_checks_extents() {
    let model = Model::init(ModelConfig::micro()).unwrap();
    let (a, b) = scene_pair(32, 64, 2);
    let f = model.fuse(&a, &b).unwrap();
    assert_eq!(f.shape(), &[32, 64]);
    assert!(f.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let (c, d) = scene_pair(30, 32, 2);
    assert!(matches!(model.fuse(&c, &d), Err(Error::Indivisible { .. })));
    assert!(model.fuse(&a, &Tensor::zeros(&[32, 32])).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig { depths: vec![1, 1, 1], ..ModelConfig::micro() },
        ModelConfig { base_dim: 0, ..ModelConfig::micro() },
        ModelConfig { state: 0, ..ModelConfig::micro() },
        ModelConfig { patch: 0, ..ModelConfig::micro() },
    ];
    for cfg in bad {
        assert!(Model::init(cfg.clone()).is_err(), "{cfg:?}");
    }
}

#[test]
fn state_round_trip_is_exact() {
    let model = Model::init(ModelConfig { seed: 7, ..ModelConfig::micro() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.state");
    save_state(&model, &path).unwrap();
    let back = load_state(&path).unwrap();
    assert_eq!(back, model);
    let (a, b) = scene_pair(32, 32, 1);
    assert_eq!(back.fuse(&a, &b).unwrap(), model.fuse(&a, &b).unwrap());
}

#[test]
fn corrupted_states_are_rejected() {
    let model = Model::init(ModelConfig::micro()).unwrap();
    let bytes = encode(&model);
    let path = std::path::Path::new("m.state");

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode(&magic, path), Err(Error::Format { offset: 0, .. })));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&(STATE_VERSION + 1).to_le_bytes());
    assert!(matches!(decode(&version, path), Err(Error::Version { .. })));

    let cut = bytes.len() - 3;
    match decode(&bytes[..cut], path) {
        Err(Error::Format { offset, .. }) => assert!(offset <= cut),
        other => panic!("{other:?}"),
    }

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(decode(&trailing, path).is_err());
}

#[test]
fn state_against_other_config_fails() {
    let model = Model::init(ModelConfig::micro()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.state");
    save_state(&model, &path).unwrap();
    let wider = ModelConfig { base_dim: 16, ..ModelConfig::micro() };
    assert!(load_state_for(&path, &wider).is_err());
    let deeper = ModelConfig { depths: vec![1, 2, 1, 1], ..ModelConfig::micro() };
    assert!(matches!(load_state_for(&path, &deeper), Err(Error::NameSet { .. })));
    assert_eq!(load_state_for(&path, &ModelConfig::micro()).unwrap(), model);
}

#[test]
fn missing_parameter_is_reported() {
    let mut model = Model::init(ModelConfig::micro()).unwrap();
    let mut params = ParamStore::new();
    for (name, t) in model.params.iter().skip(1) {
        params.insert(name, t.clone());
    }
    model.params = params;
    assert!(matches!(model.verify(), Err(Error::NameSet { .. })));
}

#[test]
fn dfem_with_tied_weights_is_swap_symmetric() {
    let c = 4;
    let mut b = SpecBuilder::new();
    dfem_params(&mut b, c);
    let mut store = initialize(&b.finish(), 3).unwrap();
    let tied: Vec<(String, Tensor)> = store
        .iter()
        .filter_map(|(n, t)| n.strip_prefix("ldc_a.").map(|rest| (format!("ldc_b.{rest}"), t.clone())))
        .collect();
    for (n, t) in tied {
        store.insert(n, t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f1 = Tensor::from_fn(&[6, 6, c], |_| rng.random_range(-1.0..1.0));
    let f2 = Tensor::from_fn(&[6, 6, c], |_| rng.random_range(-1.0..1.0));
    let tape = Tape::eval();
    let ctx = Ctx::new(&tape, &store);
    let (x1, x2) = (tape.constant(f1), tape.constant(f2));
    let (d1, d2) = dfem(&ctx, &x1, &x2).unwrap();
    let (s1, s2) = dfem(&ctx, &x2, &x1).unwrap();
    assert_eq!(d1.value(), s2.value());
    assert_eq!(d2.value(), s1.value());
}
