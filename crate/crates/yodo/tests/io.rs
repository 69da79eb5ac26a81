use std::fs;

use yodo::io::{emit_report, load_csv, prepare, read_report, read_table, write_table};
use yodo_core::eval::MetricsRecord;
use yodo_core::Schema;

#[test]
fn read_table_handles_quoting_and_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    fs::write(&p, "a,label,group\n\"x, y\",1,m\n\"multi\nline\",0,f\nz,1,f\n").unwrap();
    let t = read_table(&p).unwrap();
    assert_eq!(t.header, ["a", "label", "group"]);
    assert_eq!(t.rows[0].cells[0], "x, y");
    assert_eq!(t.rows[1].cells[0], "multi\nline");
    assert_eq!(t.rows.iter().map(|r| r.line).collect::<Vec<_>>(), [2, 3, 5]);

    let back = dir.path().join("back.csv");
    write_table(&t, &back).unwrap();
    let again = read_table(&back).unwrap();
    assert_eq!(again.header, t.header);
    assert_eq!(
        again.rows.iter().map(|r| &r.cells).collect::<Vec<_>>(),
        t.rows.iter().map(|r| &r.cells).collect::<Vec<_>>()
    );
}

#[test]
fn load_csv_reports_the_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    fs::write(&p, "v,label,group\n1,1,0\n2,0,1\n,1,0\n").unwrap();
    let err = load_csv(&p, &Schema::default()).unwrap_err().to_string();
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn prepare_fits_scaling_on_training_rows_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    let mut text = String::from("v,c,label,group\n");
    for i in 0..40 {
        text.push_str(&format!("{},{},{},{}\n", i * i, ["a", "b"][i % 2], i % 3 % 2, i % 2));
    }
    fs::write(&p, text).unwrap();
    let table = read_table(&p).unwrap();
    let prep = prepare(&table, &Schema::default(), 0.25, 4).unwrap();
    assert_eq!(prep.train.len() + prep.test.len(), 40);
    assert_eq!(prep.test_rows.rows.len(), prep.test.len());
    let col: Vec<f64> = (0..prep.train.len()).map(|r| prep.train.features().get(r, 0)).collect();
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
    assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
    // Indicator columns for the categorical level pass through unscaled.
    assert!(prep.train.features().column(1).iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn report_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    let recs: Vec<MetricsRecord> = (0..5)
        .map(|k| MetricsRecord {
            alpha: None,
            a: Some(k as f64 * 0.25),
            error_rate: 0.1 / (k + 1) as f64,
            dp_relaxed: 1.0 / 3.0,
            dp_hard: 0.0,
            eo_relaxed: None,
            eodd_relaxed: Some(2.0 / 7.0),
            wall_time_s: Some(12.345678912),
            seed: Some(k),
        })
        .collect();
    emit_report(&recs, &p).unwrap();
    let first = fs::read(&p).unwrap();
    emit_report(&recs, &p).unwrap();
    assert_eq!(first, fs::read(&p).unwrap());
    let back = read_report(&p).unwrap();
    for (a, b) in recs.iter().zip(&back) {
        assert_eq!(
            (a.alpha, a.a, a.eo_relaxed, a.seed),
            (b.alpha, b.a, b.eo_relaxed, b.seed)
        );
        assert!((a.error_rate - b.error_rate).abs() < 1e-9);
        assert!((a.dp_relaxed - b.dp_relaxed).abs() < 1e-9);
        assert!((a.eodd_relaxed.unwrap() - b.eodd_relaxed.unwrap()).abs() < 1e-9);
        let t = b.wall_time_s.unwrap();
        assert!((t - 12.345678912).abs() / 12.345678912 < 1e-8);
    }
}
