use poisonlab::data::TaskKind;
use poisonlab::dataio::{encode_idx, parse_idx, read_csv, read_csv_file, write_csv, write_csv_file, IdxTensor, ImageSet};
use poisonlab::experiments::{ImageDataset, MnistRecord, RunRecord};
use poisonlab::theory::BoundCheckReport;
use poisonlab::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        match parse_idx(&bytes) {
            Ok(t) => prop_assert_eq!(t.data.len(), t.dims.iter().product::<usize>()),
            Err(Error::BadMagic(_) | Error::UnsupportedType(_) | Error::TruncatedPayload { .. } | Error::Schema(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }

    #[test]
    fn truncated_files_report_truncation(dims in proptest::collection::vec(1usize..5, 1..4), cut in 1usize..10) {
        let n: usize = dims.iter().product();
        let bytes = encode_idx(&IdxTensor { dims, data: vec![7; n] });
        let cut = cut.min(bytes.len() - 4);
        let is_truncation = matches!(parse_idx(&bytes[..bytes.len() - cut]), Err(Error::TruncatedPayload { .. }));
        prop_assert!(is_truncation);
    }

    #[test]
    fn encoded_tensors_round_trip(dims in proptest::collection::vec(0usize..6, 1..4), fill in any::<u8>()) {
        let n: usize = dims.iter().product();
        let t = IdxTensor { dims, data: (0..n).map(|i| fill.wrapping_add(i as u8)).collect() };
        prop_assert_eq!(parse_idx(&encode_idx(&t)).unwrap(), t);
    }

    #[test]
    fn run_records_round_trip(
        seed in any::<u64>(),
        d in 1usize..10_000,
        metric in any::<f64>().prop_filter("finite", |v| v.is_finite()),
        norm in 0.0f64..1e300,
        logistic in any::<bool>(),
    ) {
        let rec = RunRecord {
            seed,
            task: if logistic { TaskKind::Logistic } else { TaskKind::Linear },
            aggregator: "geomed".into(),
            dim: d + 5,
            d,
            honest: 500,
            poisons: 25,
            lambda: 1e3,
            iterations: 2000,
            final_grad_norm: norm,
            metric,
            metric_stderr: norm.sqrt(),
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&rec), &mut buf).unwrap();
        let back: Vec<RunRecord> = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![rec]);
    }
}

#[test]
fn file_round_trips_for_every_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = vec![MnistRecord {
        seed: 42,
        dataset: ImageDataset::Fashion,
        d: 500,
        poisons: 60,
        batch: 1000,
        epochs: 3,
        aggregator: "cwtm".into(),
        val_cross_entropy: 0.456_789_012_345_678_9,
        val_accuracy: 0.8123,
    }];
    let path = dir.path().join("m.csv");
    write_csv_file(&mnist, &path).unwrap();
    assert_eq!(read_csv_file::<MnistRecord>(&path).unwrap(), mnist);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("seed,dataset,d,P,batch,epochs,aggregator,val_cross_entropy,val_accuracy\n"));

    let reports = vec![BoundCheckReport {
        bound_name: "series1".into(),
        theoretical: 6.0,
        empirical: 5.922_220_833_392_705,
        trials: 0,
        stderr: 0.0,
        pass: true,
    }];
    let path = dir.path().join("v.csv");
    write_csv_file(&reports, &path).unwrap();
    assert_eq!(read_csv_file::<BoundCheckReport>(&path).unwrap(), reports);
    assert!(std::fs::read_to_string(&path)
        .unwrap()
        .starts_with("bound_name,theoretical,empirical,trials,stderr,pass\n"));
}

#[test]
fn image_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let images = IdxTensor {
        dims: vec![3, 28, 28],
        data: (0..3 * 784).map(|i| (i % 256) as u8).collect(),
    };
    let labels = IdxTensor {
        dims: vec![3],
        data: vec![0, 4, 9],
    };
    std::fs::write(dir.path().join("train-images-idx3-ubyte"), encode_idx(&images)).unwrap();
    std::fs::write(dir.path().join("train-labels-idx1-ubyte"), encode_idx(&labels)).unwrap();
    let set = ImageSet::load_split(dir.path(), true).unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.input_dim(), 784);
    assert_eq!(set.image(0)[255], 1.0);
    assert_eq!(set.labels(), &[0, 4, 9]);
    assert!(matches!(ImageSet::load_split(dir.path(), false), Err(Error::Io(_))));
}
