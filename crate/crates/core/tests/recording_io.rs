use hopsense::pipeline::{read_recording_file, write_recording_file, RecordingFrame};
use hopsense::quatmath::UnitQuaternion;
use hopsense::scenario::{simulate, Scenario};
use hopsense::Error;
use tempfile::TempDir;

#[test]
fn simulated_recording_survives_the_file_system() {
    let mut sc = Scenario::new("elbow-flexion").with_seed(11);
    sc.session.duration_s = Some(2.0);
    let sim = simulate(&sc).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("recording.csv");
    write_recording_file(&path, &sim.recording).unwrap();
    assert_eq!(read_recording_file(&path).unwrap(), sim.recording);
}

#[test]
fn io_errors_name_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.csv");
    match read_recording_file(&missing) {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected an IO error, got {other:?}"),
    }
    let q = UnitQuaternion::IDENTITY;
    let frames = [RecordingFrame::new(0, 1, 0, q, 3).unwrap()];
    let into_missing_dir = dir.path().join("no/such/dir/out.csv");
    assert!(matches!(write_recording_file(&into_missing_dir, &frames), Err(Error::Io { .. })));
}
