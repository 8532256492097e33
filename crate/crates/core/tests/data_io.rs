use std::fs;

use ftls_core::data::{
    gen_gaussian_family, gen_identity_family, gen_small_gaussian, gen_toy_appendix, is_instance_file, load_csv,
    load_instance, save_instance, write_csv, CsvOptions, RESPONSE_SD,
};
use ftls_core::Error;

fn ingestion_position(err: Error) -> (usize, usize) {
    match err {
        Error::Ingestion { line, column, .. } => (line, column),
        other => panic!("expected an ingestion error, got {other}"),
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_small_gaussian(5);
    for header in [false, true] {
        let path = dir.path().join(format!("g{header}.csv"));
        write_csv(&inst, &path, header).unwrap();
        let back = load_csv(&path, 5, &CsvOptions { header, ..Default::default() }).unwrap();
        assert_eq!(back.c().unwrap().to_dense(), inst.c().unwrap().to_dense());
    }
}

#[test]
fn instance_files_round_trip_and_are_recognized() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_toy_appendix();
    let path = dir.path().join("toy.txt");
    save_instance(&inst, &path).unwrap();
    assert!(is_instance_file(&path).unwrap());
    let back = load_instance(&path).unwrap();
    assert_eq!((back.rows(), back.n(), back.d()), (10, 5, 1));
    assert_eq!(back.c().unwrap().to_dense(), inst.c().unwrap().to_dense());

    let csv = dir.path().join("plain.csv");
    write_csv(&inst, &csv, false).unwrap();
    assert!(!is_instance_file(&csv).unwrap());
    assert!(load_instance(&csv).is_err());
}

#[test]
fn truncated_instance_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.txt");
    fs::write(&path, "ftls-instance 3 1 1\n1,2\n3,4\n").unwrap();
    assert!(matches!(load_instance(&path), Err(Error::Ingestion { .. })));
}

#[test]
fn malformed_csv_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");

    fs::write(&path, "1,2,3\n4,five,6\n").unwrap();
    let err = load_csv(&path, 2, &CsvOptions::default()).unwrap_err();
    assert_eq!(ingestion_position(err), (2, 2));

    fs::write(&path, "a,b,y\n1,2,3\n4,5,\n").unwrap();
    let opts = CsvOptions { header: true, ..Default::default() };
    let err = load_csv(&path, 2, &opts).unwrap_err();
    assert_eq!(ingestion_position(err), (3, 3));

    fs::write(&path, "1,2,3\n4,5\n").unwrap();
    assert!(matches!(load_csv(&path, 2, &CsvOptions::default()), Err(Error::Ingestion { line: 2, .. })));

    fs::write(&path, "1,2\n3,4\n").unwrap();
    assert!(matches!(load_csv(&path, 2, &CsvOptions::default()), Err(Error::Ingestion { .. })));

    fs::write(&path, "1,inf,3\n").unwrap();
    assert!(load_csv(&path, 2, &CsvOptions::default()).is_err());

    assert!(matches!(
        load_csv(dir.path().join("missing.csv"), 2, &CsvOptions::default()),
        Err(Error::Io(_))
    ));
}

#[test]
fn explicit_response_columns_and_delimiters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("semi.csv");
    fs::write(&path, "10;1;2\n20;3;4\n30;5;6\n").unwrap();
    let opts = CsvOptions {
        delimiter: b';',
        response_cols: Some(vec![0]),
        ..Default::default()
    };
    let inst = load_csv(&path, 2, &opts).unwrap();
    assert_eq!(inst.b.to_dense().column(0), vec![10.0, 20.0, 30.0]);
    assert_eq!(inst.a.to_dense().row(2), &[5.0, 6.0]);
}

#[test]
fn identity_family_has_the_documented_structure() {
    for k in [1, 4] {
        let inst = gen_identity_family(k).unwrap();
        assert_eq!((inst.rows(), inst.n(), inst.d()), (20 * k, 2 * k, 1));
        assert!(inst.a.is_sparse());
        let b = inst.b.to_dense();
        let nonzero: Vec<usize> = (0..inst.rows()).filter(|&i| b[(i, 0)] != 0.0).collect();
        assert_eq!(nonzero, vec![2 * k]);
        assert_eq!(b[(2 * k, 0)], 3.0);
    }
}

#[test]
fn gaussian_family_moments() {
    let inst = gen_gaussian_family(50, 3).unwrap();
    let moments = |v: Vec<f64>| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };
    let (ma, va) = moments(inst.a.to_dense().as_slice().to_vec());
    let (mb, vb) = moments(inst.b.to_dense().column(0));
    // 100k and 1000 samples respectively
    assert!(ma.abs() < 0.02 && (va - 1.0).abs() < 0.03, "A: mean {ma}, var {va}");
    let sd = RESPONSE_SD;
    assert!(mb.abs() < 0.3 && (vb / (sd * sd) - 1.0).abs() < 0.15, "B: mean {mb}, var {vb}");
    assert_eq!(gen_gaussian_family(2, 9).unwrap().a.to_dense(), gen_gaussian_family(2, 9).unwrap().a.to_dense());
}
