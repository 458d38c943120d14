use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use msno_cli::io::{self, DatasetHeader, IoError, Sample};
use msno_core::field::{ForcingKind, ForcingParams, KleParams};
use msno_core::{DomainKind, GridPair, NodalField};
use msno_neural::ffno::{Ffno, FfnoConfig};
use msno_neural::predictor::{PredictorCheckpoint, TrainingManifest, TypeModel};
use msno_neural::train::{network_input, LossKind, LossSpec, NormStats};

fn header() -> DatasetHeader {
    DatasetHeader {
        n_coarse: 2,
        n_fine: 9,
        kle: KleParams::default(),
        forcing_kind: ForcingKind::Unit,
        forcing: ForcingParams::default(),
        created_unix: 0,
    }
}

/// Values with awkward bit patterns: subnormals, signed zero, extremes.
fn awkward(n: usize, salt: u64) -> Vec<f64> {
    (0..n)
        .map(|i| match (i as u64 + salt) % 7 {
            0 => -0.0,
            1 => f64::MIN_POSITIVE / 3.0,
            2 => f64::MAX,
            3 => -1.0 / 3.0,
            4 => 1e-300 * i as f64,
            5 => std::f64::consts::PI * salt as f64,
            _ => i as f64 + 0.1,
        })
        .collect()
}

fn samples(count: usize) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let mut fields = BTreeMap::new();
            fields.insert("kappa".to_string(), NodalField::new(9, 9, awkward(81, i as u64)).unwrap());
            fields.insert("forcing".to_string(), NodalField::new(9, 9, awkward(81, 100 + i as u64)).unwrap());
            Sample { seed: 1000 + i as u64, fields }
        })
        .collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn dataset_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let written = samples(3);
    io::write_dataset(dir.path(), &header(), &written).unwrap();
    assert!(dir.path().join("00001_kappa.f64le").exists());
    let (m, read) = io::read_dataset(dir.path()).unwrap();
    assert_eq!(m.sample_count, 3);
    assert_eq!(m.seeds, vec![1000, 1001, 1002]);
    for (a, b) in written.iter().zip(&read) {
        assert_eq!(a.seed, b.seed);
        for (name, f) in &a.fields {
            assert_eq!(bits(&f.values), bits(&b.fields[name].values), "field {name}");
        }
    }
}

#[test]
fn array_files_are_little_endian_row_major() {
    let dir = tempfile::tempdir().unwrap();
    let mut fields = BTreeMap::new();
    let f = NodalField::from_fn(9, 9, |ix, iy| (10 * iy + ix) as f64);
    fields.insert("kappa".to_string(), f);
    io::write_dataset(dir.path(), &header(), &[Sample { seed: 7, fields }]).unwrap();
    let bytes = fs::read(dir.path().join("00000_kappa.f64le")).unwrap();
    assert_eq!(bytes.len(), 81 * 8);
    let at = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
    // y outer, x inner
    assert_eq!(at(1), 1.0);
    assert_eq!(at(9), 10.0);
    assert_eq!(at(80), 88.0);
}

#[test]
fn duplicate_seeds_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = samples(2);
    s[1].seed = s[0].seed;
    assert!(io::write_dataset(dir.path(), &header(), &s).is_err());
}

#[test]
fn corrupted_byte_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &header(), &samples(2)).unwrap();
    let path = dir.path().join("00001_forcing.f64le");
    let mut bytes = fs::read(&path).unwrap();
    bytes[17] ^= 0x01;
    fs::write(&path, bytes).unwrap();
    let err = io::read_dataset(dir.path()).unwrap_err();
    assert!(matches!(&err, IoError::Checksum { file } if file.contains("00001_forcing.f64le")), "{err}");
    assert!(err.to_string().contains("00001_forcing.f64le"));
    // Untouched samples still read.
    let m = io::read_dataset_manifest(dir.path()).unwrap();
    assert_eq!(io::read_samples(dir.path(), &m, 0..1).unwrap().len(), 1);
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join(io::MANIFEST);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn unknown_schema_version_is_distinct() {
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &header(), &samples(1)).unwrap();
    edit_manifest(dir.path(), |v| v["schema_version"] = 99.into());
    let err = io::read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, IoError::Schema { found: 99, .. }), "{err}");
}

#[test]
fn missing_file_is_distinct() {
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &header(), &samples(2)).unwrap();
    fs::remove_file(dir.path().join("00000_kappa.f64le")).unwrap();
    let err = io::read_dataset(dir.path()).unwrap_err();
    assert!(matches!(&err, IoError::Missing { file } if file.contains("00000_kappa.f64le")), "{err}");

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(io::read_dataset(empty.path()).unwrap_err(), IoError::Missing { .. }));
}

#[test]
fn train_test_split_by_index_range() {
    // 1000 samples split 800/200 without copying; tiny fields keep it fast.
    let dir = tempfile::tempdir().unwrap();
    let all: Vec<Sample> = (0..1000)
        .map(|i| {
            let mut fields = BTreeMap::new();
            fields.insert("kappa".to_string(), NodalField::constant(9, 9, 1.0 + i as f64));
            Sample { seed: i as u64, fields }
        })
        .collect();
    let m = io::write_dataset(dir.path(), &header(), &all).unwrap();
    let train = io::read_samples(dir.path(), &m, 0..800).unwrap();
    let test = io::read_samples(dir.path(), &m, 800..1000).unwrap();
    assert_eq!((train.len(), test.len()), (800, 200));
    assert_eq!(train.last().unwrap().seed, 799);
    assert_eq!(test[0].seed, 800);
    assert_eq!(test[0].fields["kappa"].values[0], 801.0);
    assert!(io::read_samples(dir.path(), &m, 900..1001).is_err());
}

fn tiny_checkpoint() -> (PredictorCheckpoint, GridPair) {
    let grid = GridPair::new(2, 9).unwrap();
    let mut models = BTreeMap::new();
    for (i, kind) in DomainKind::ALL.into_iter().enumerate() {
        let (nx, ny) = kind.canonical_shape(&grid);
        let config = FfnoConfig { layers: 2, hidden: 4, modes: (3, 3), n_out: 2, patch: (nx, ny) };
        let mut model = Ffno::init(config, 40 + i as u64).unwrap();
        // Nonzero spectral weights so the interleaving is exercised.
        for (j, p) in model.params.iter_mut().enumerate() {
            *p += 1e-3 * ((j * 7919) % 101) as f64;
        }
        models.insert(kind, TypeModel::Ffno { model, stats: NormStats { mean: 0.5, std: 1.5 } });
    }
    (PredictorCheckpoint { n_bf: 2, models, manifest: TrainingManifest::untrained(LossSpec::new(LossKind::Sal)) }, grid)
}

#[test]
fn checkpoint_round_trip_gives_identical_forward_outputs() {
    let (ck, grid) = tiny_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    io::write_checkpoint(dir.path(), &ck).unwrap();
    let back = io::read_checkpoint(dir.path()).unwrap();
    assert_eq!(back.manifest, ck.manifest);
    for kind in DomainKind::ALL {
        let (TypeModel::Ffno { model: a, stats: sa }, TypeModel::Ffno { model: b, stats: sb }) = (&ck.models[&kind], &back.models[&kind]) else {
            panic!("expected learned models");
        };
        assert_eq!(sa, sb);
        assert_eq!(bits(&a.params), bits(&b.params));
        let (nx, ny) = kind.canonical_shape(&grid);
        let x = network_input(&NodalField::from_fn(nx, ny, |i, j| ((i * 3 + j) % 5) as f64), sa);
        let (ya, yb) = (a.forward(&x).unwrap(), b.forward(&x).unwrap());
        assert_eq!(bits(ya.as_slice().unwrap()), bits(yb.as_slice().unwrap()));
    }
}

#[test]
fn spectral_tensors_are_interleaved_on_disk() {
    let (ck, _) = tiny_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    io::write_checkpoint(dir.path(), &ck).unwrap();
    let TypeModel::Ffno { model, .. } = &ck.models[&DomainKind::Full] else { unreachable!() };
    let mut model = model.clone();
    let re = model.spectral_weight_mut(0, false, 1, false)[[1, 2]];
    let im = model.spectral_weight_mut(0, false, 1, true)[[1, 2]];
    let bytes = fs::read(dir.path().join("full_layer0_spec_x.f64le")).unwrap();
    let h = 4;
    // [mode][out][in][re, im]
    let k = ((1 * h + 1) * h + 2) * 2;
    let at = |k: usize| f64::from_le_bytes(bytes[8 * k..8 * k + 8].try_into().unwrap());
    assert_eq!(at(k).to_bits(), re.to_bits());
    assert_eq!(at(k + 1).to_bits(), im.to_bits());
}

#[test]
fn missing_domain_type_names_it() {
    let (ck, _) = tiny_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    io::write_checkpoint(dir.path(), &ck).unwrap();
    edit_manifest(dir.path(), |v| {
        v["models"].as_object_mut().unwrap().remove("corner");
    });
    let err = io::read_checkpoint(dir.path()).unwrap_err();
    assert!(err.to_string().contains("corner"), "{err}");
}

#[test]
fn corrupted_checkpoint_tensor_is_a_checksum_error() {
    let (ck, _) = tiny_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    io::write_checkpoint(dir.path(), &ck).unwrap();
    let path = dir.path().join("half_proj_w.f64le");
    let mut bytes = fs::read(&path).unwrap();
    bytes[3] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    let err = io::read_checkpoint(dir.path()).unwrap_err();
    assert!(matches!(&err, IoError::Checksum { file } if file.contains("half_proj_w")), "{err}");
}

#[test]
fn oracle_checkpoint_round_trips() {
    let ck = PredictorCheckpoint::oracle(3, LossSpec::new(LossKind::Rbfl2));
    let dir = tempfile::tempdir().unwrap();
    io::write_checkpoint(dir.path(), &ck).unwrap();
    let back = io::read_checkpoint(dir.path()).unwrap();
    assert_eq!(back.n_bf, 3);
    assert!(back.models.values().all(|m| matches!(m, TypeModel::Oracle)));
    assert_eq!(back.manifest.loss.kind, LossKind::Rbfl2);
}
