use nibkit::autodiff::{OptimizerState, Tensor};
use nibkit::halftone::{train_halftoner, HalftoneLossConfig, TrainOptions};
use nibkit::io::checkpoint::{decode, encode, load_param, save_checkpoint, Checkpoint, Header, MAGIC};
use nibkit::io::corpus::{gen_corpus, CorpusSpec};
use nibkit::models::{build_model, ModelConfig, NibConfig};
use nibkit::Error;

fn nib_checkpoint() -> Checkpoint {
    let model = build_model::<f32>(&ModelConfig::unet(8, Some(NibConfig::default())).with_seed(9)).unwrap();
    let mut opt = OptimizerState::adam(1e-3);
    let mut params = model.params().clone();
    let grads: Vec<_> = params.iter().map(|(_, t)| Some(t.map(|v| v * 0.5 + 0.01))).collect();
    opt.step(&mut params, &grads).unwrap();
    let mut ckpt = Checkpoint::from_model(&model, Some(&opt), 1);
    ckpt.params = params;
    ckpt
}

fn split(bytes: &[u8]) -> (Header, &[u8]) {
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    (header, &bytes[16 + len..])
}

fn join(header: &Header, payload: &[u8]) -> Vec<u8> {
    let h = serde_json::to_vec_pretty(header).unwrap();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(payload);
    out
}

#[test]
fn roundtrip_with_optimizer_state_is_bit_exact() {
    let ckpt = nib_checkpoint();
    let back = decode(&encode(&ckpt).unwrap()).unwrap();
    assert_eq!(back, ckpt);
    let a = ckpt.to_model().unwrap();
    let b = back.to_model().unwrap();
    let x = Tensor::full([1, 1, 64, 64], 0.5);
    assert_eq!(a.infer(&x, 0).unwrap(), b.infer(&x, 0).unwrap());
}

#[test]
fn single_parameter_loads_through_offsets() {
    let ckpt = nib_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    for name in ["nib.f1.weight", "tail.bias", "dec.0.conv2.weight"] {
        let id = ckpt.params.find(name).unwrap_or_else(|| panic!("{name}"));
        assert_eq!(&load_param(&path, name).unwrap(), ckpt.params.get(id));
    }
    assert!(load_param(&path, "nope").is_err());
}

#[test]
fn header_faults_are_detected() {
    let bytes = encode(&nib_checkpoint()).unwrap();
    let (header, payload) = split(&bytes);

    // Shape that disagrees with the architecture.
    let mut h = header.clone();
    let i = h.tensors.iter().position(|t| t.name == "head.weight" || t.name == "nib.f2.weight").unwrap();
    h.tensors[i].shape[0] += 1;
    match decode(&join(&h, payload)) {
        Err(Error::CheckpointInconsistent { name, .. }) => assert!(name.contains("nib.f2") || name.starts_with('<'), "{name}"),
        other => panic!("{other:?}"),
    }

    // Offset pointing past the payload.
    let mut h = header.clone();
    h.tensors[0].offset = h.payload_bytes + 4;
    assert!(matches!(decode(&join(&h, payload)), Err(Error::CheckpointInconsistent { .. } | Error::CheckpointTruncated { .. })));

    // Overlapping offsets.
    let mut h = header.clone();
    h.tensors[1].offset = 0;
    assert!(matches!(decode(&join(&h, payload)), Err(Error::CheckpointInconsistent { .. })));

    // Config for a different architecture.
    let mut h = header.clone();
    h.config = ModelConfig::resnet(8, None);
    assert!(matches!(decode(&join(&h, payload)), Err(Error::CheckpointInconsistent { .. })));

    // Trailing bytes and truncation.
    let mut long = join(&header, payload);
    long.push(0);
    assert!(decode(&long).is_err());
    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::CheckpointTruncated { .. })));

    // Wrong version and magic.
    let mut h = header.clone();
    h.format_version = 7;
    assert!(matches!(decode(&join(&h, payload)), Err(Error::CheckpointVersion { found: 7, .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::CheckpointMagic(_))));

    // The untouched pair still decodes.
    assert!(decode(&join(&header, payload)).is_ok());
}

#[test]
fn identical_seeds_give_identical_training_runs() {
    let corpus = gen_corpus(&CorpusSpec {
        count: 8,
        size: 32,
        flat_fraction: 0.6,
        seed: 3,
        ..CorpusSpec::default()
    })
    .unwrap();
    let opts = TrainOptions {
        steps: 6,
        batch: 4,
        lr: 2e-3,
        crop: 16,
        ..TrainOptions::default()
    };
    let cfg = ModelConfig::resnet(8, Some(NibConfig::default())).with_seed(5);
    let loss = HalftoneLossConfig::default();
    let a = train_halftoner(&cfg, &loss, &corpus, &opts).unwrap();
    let b = train_halftoner(&cfg, &loss, &corpus, &opts).unwrap();
    assert_eq!(encode(&a.checkpoint()).unwrap(), encode(&b.checkpoint()).unwrap());
    assert_eq!(a.log, b.log);
    let c = train_halftoner(&cfg, &loss, &corpus, &TrainOptions { seed: 1, ..opts }).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn corpus_files_are_byte_identical_across_runs() {
    let spec = CorpusSpec {
        count: 6,
        size: 32,
        flat_fraction: 0.5,
        seed: 11,
        ..CorpusSpec::default()
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_corpus(&spec).unwrap().write(d1.path()).unwrap();
    gen_corpus(&spec).unwrap().write(d2.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in names {
        assert_eq!(std::fs::read(d1.path().join(&n)).unwrap(), std::fs::read(d2.path().join(&n)).unwrap(), "{n:?}");
    }
}
