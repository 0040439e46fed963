//! Figure data for both reference geometries against frozen golden values.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(str::to_string).collect();
    let rows = reader.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn close(actual: f64, expected: f64) -> bool {
    (actual - expected).abs() <= 1e-9 * expected.abs()
}

#[test]
fn figure_csvs_match_schema_and_golden_values() {
    let golden: Value =
        serde_json::from_str(include_str!("golden/reproduce_figures.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("figs");
    let status = Command::new(env!("CARGO_BIN_EXE_waveguide"))
        .args(["reproduce-figures", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");

    for (idx, name) in ["geom1", "geom2"].iter().enumerate() {
        let expect = &golden[name];
        let entry = &summary["geometries"][idx];
        assert_eq!(entry["name"], *name);
        let l_eq = expect["L_eq"].as_f64().unwrap();
        let max_s = expect["max_S"].as_f64().unwrap();
        assert!(close(entry["transport"]["L_eq"].as_f64().unwrap(), l_eq), "{name} L_eq");
        assert!(close(entry["transport"]["max_S"].as_f64().unwrap(), max_s), "{name} max_S");

        let (header, rows) = read_csv(&out.join(format!("coherent_{name}.csv")));
        assert_eq!(header, ["j", "j1", "j2", "S_j", "inv_mu_max", "L_eq"]);
        assert_eq!(rows.len() as u64, expect["N"].as_u64().unwrap());
        for (j, row) in rows.iter().enumerate() {
            assert_eq!(row[0], (j + 1) as f64);
            // The longest mode scattering length bounds the weakest coherent decay length.
            assert!(row[3] > 0.0 && row[4] > 0.0 && row[4] <= row[3] * (1.0 + 1e-12), "{name} row {j}");
            assert!(close(row[5], l_eq));
        }
        let largest = rows.iter().map(|r| r[3]).fold(0.0, f64::max);
        assert!(close(largest, max_s));

        let (header, rows) = read_csv(&out.join(format!("stationary_{name}.csv")));
        assert_eq!(header, ["row", "col", "value"]);
        let size = expect["stationary_size"].as_u64().unwrap() as usize;
        assert_eq!(rows.len(), size * size);
        let values: Vec<f64> = rows.iter().map(|r| r[2]).collect();
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(values.iter().copied().fold(0.0, f64::max), 1.0);
    }
}
