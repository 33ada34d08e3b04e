use ftensor::io::{load_any, load_tns, save_any, save_tns};
use ftensor::Error;
use ftensor_core::{random_coo, CooTensor};

#[test]
fn text_and_binary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let t = random_coo(&[17, 3, 29], 150, seed).unwrap();
        let tns = dir.path().join("t.tns");
        let ftb = dir.path().join("t.ftb");
        save_tns(&t, &tns).unwrap();
        save_any(&t, &ftb).unwrap();
        assert_eq!(load_tns(&tns, Some(t.dims())).unwrap(), t);
        assert_eq!(load_any(&ftb).unwrap(), t);
    }
}

#[test]
fn binary_keeps_declared_extents() {
    let dir = tempfile::tempdir().unwrap();
    let t = CooTensor::from_entries(vec![10, 10, 10], &[([0u32, 0, 0], 2.0)]).unwrap();
    let path = dir.path().join("x.ftb");
    save_any(&t, &path).unwrap();
    assert_eq!(load_any(&path).unwrap().dims(), &[10, 10, 10]);
}

#[test]
fn parse_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tns");
    std::fs::write(&path, "1 1 1 1.0\n1 1 2\n").unwrap();
    let err = load_any(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    let msg = err.to_string();
    assert!(msg.contains("bad.tns") && msg.contains("line 2"), "{msg}");
}

#[test]
fn truncated_binary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = random_coo(&[4, 4, 4], 8, 1).unwrap();
    let path = dir.path().join("x.ftb");
    save_any(&t, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_any(&path), Err(Error::Format { .. })));
}
