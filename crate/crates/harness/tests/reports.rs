use kac_ldp_harness::record::{ReplicaOutcome, Table};
use kac_ldp_harness::{emit_report, load_record, ExperimentConfig, Format, Registry, RunRecord};

#[test]
fn empty_record_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&RunRecord::default(), Format::Csv, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    for f in &files {
        assert!(f.file_name().unwrap().to_str().unwrap().starts_with("run_"));
        let text = std::fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().count(), 1, "{}", f.display());
    }
    let estimates = std::fs::read_to_string(dir.path().join("run_estimates.csv")).unwrap();
    assert_eq!(estimates.trim(), "name,value,std_err,lower,upper");
}

#[test]
fn json_round_trip_is_bit_exact() {
    let cfg = ExperimentConfig::from_toml(
        "kind = \"tube\"\nreplicas = 200\n[tube]\nsites_per_block = 20\nshifts = [0.0, 8.0]\ntilted = true",
    )
    .unwrap();
    let mut rec = Registry::builtin().run(&cfg).unwrap();
    // a zero-success target carries infinite estimates
    assert!(rec.estimates.iter().any(|e| !e.upper.is_finite()));
    rec.estimates[0].value = 0.1 + 0.2;
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&rec, Format::Json, dir.path()).unwrap();
    assert_eq!(files, vec![dir.path().join("tube.json")]);
    let back = load_record(&files[0]).unwrap();
    assert_eq!(back, rec);
    assert_eq!(back.content_hash(), rec.content_hash());
    for (a, b) in back.estimates.iter().zip(&rec.estimates) {
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.upper.to_bits(), b.upper.to_bits());
    }
}

#[test]
fn csv_tables_and_outcomes() {
    let mut rec = RunRecord::new("switching", "h".into(), 3, 2);
    rec.outcomes = (0..2)
        .map(|r| ReplicaOutcome {
            replica: r,
            event_a: Some(r == 1),
            event_c: Some(true),
            max_free_energy: Some(0.5),
            front_shift: Some(-0.25),
            ..ReplicaOutcome::default()
        })
        .collect();
    let mut t = Table::new(&["n", "w_n"]);
    t.push(vec![0.0, 12.0]);
    t.push(vec![1.0, 6.0]);
    rec.tables.insert("w_n".into(), t);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&rec, Format::Csv, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    let wn = std::fs::read_to_string(dir.path().join("switching_w_n.csv")).unwrap();
    assert_eq!(wn, "n,w_n\n0,12\n1,6\n");
    let outcomes = std::fs::read_to_string(dir.path().join("switching_outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().nth(2).unwrap(), "1,,,true,true,0.5,-0.25");
}

#[test]
fn unwritable_directory_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = emit_report(&RunRecord::default(), Format::Json, &blocker.join("sub")).unwrap_err();
    assert!(format!("{err:#}").contains("file"), "{err:#}");
}
