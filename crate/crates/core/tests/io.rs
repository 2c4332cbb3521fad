use stgcn::io::csv::{export_dir, import_dir, read_sample};
use stgcn::io::{read_dataset, write_dataset};
use stgcn::synth::{generate, Family, GeneratorSpec, Primitive};
use stgcn::{Dataset, TopologyKind};

fn f32_dataset() -> Dataset {
    let mut spec = GeneratorSpec::new(Family::A, vec![Primitive::Wave, Primitive::Kick], 2, 5, 1);
    spec.frames = 5;
    let data = generate(&spec).unwrap();
    // Round to f32 first so both formats can be compared exactly.
    let samples = data
        .samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for x in s.coords_mut() {
                *x = f64::from(*x as f32);
            }
            s
        })
        .collect();
    data.with_samples(samples)
}

#[test]
fn container_round_trip() {
    let data = f32_dataset();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    let back = read_dataset(buf.as_slice()).unwrap();
    assert_eq!(back.samples, data.samples);
    assert_eq!(back.class_names, data.class_names);
    let mut again = Vec::new();
    write_dataset(&back, &mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn csv_directory_round_trip() {
    let data = f32_dataset();
    let dir = tempfile::tempdir().unwrap();
    export_dir(&data, dir.path()).unwrap();
    let back = import_dir(dir.path(), Some(TopologyKind::Shared20), data.frame_rate).unwrap();
    assert_eq!(back.samples, data.samples);
    assert_eq!(back.class_names, data.class_names);
}

#[test]
fn malformed_csv_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "frame,joint,x,y\n0,0,1,2\n").unwrap();
    assert!(read_sample(&p, None).is_err());
    std::fs::write(&p, "frame,joint,x,y,z\n0,0,1,2,3\n0,1,1,oops,3\n").unwrap();
    let err = read_sample(&p, None).unwrap_err().to_string();
    assert!(err.contains('3') || err.contains("line"), "{err}");
}
