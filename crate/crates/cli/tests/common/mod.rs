#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use popmaxent::dynamics::PanelRecord;
use popmaxent::model::rank_curve_many;
use popmaxent::sampling::sample;
use popmaxent::ModelParams;
use popmaxent_cli::write_panel;

pub fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn write_records(dir: &Path, name: &str, panel: &[PanelRecord], groups: Option<&BTreeMap<String, String>>) -> PathBuf {
    let p = dir.join(name);
    write_panel(std::fs::File::create(&p).unwrap(), panel, groups).unwrap();
    p
}

/// Rounded model sizes for one group and year, with unit ids `<group>-<i>`.
pub fn province(group: &str, params: &ModelParams, n: usize, year: i32, seed: u64) -> Vec<PanelRecord> {
    sample(params, n, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, x)| PanelRecord { unit_id: format!("{group}-{i:04}"), year, population: x.round().max(1.0) as u64 })
        .collect()
}

/// Noise-free province: rounded rank-curve values at the middle-point ranks.
pub fn quantile_province(group: &str, params: &ModelParams, n: usize, year: i32) -> Vec<PanelRecord> {
    let p = (*params).with_units(n).unwrap();
    let ranks: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
    rank_curve_many(&p, &ranks)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, x)| PanelRecord { unit_id: format!("{group}-{i:04}"), year, population: x.round().max(1.0) as u64 })
        .collect()
}

pub fn group_map(panel: &[PanelRecord]) -> BTreeMap<String, String> {
    panel.iter().map(|r| (r.unit_id.clone(), r.unit_id.split('-').next().unwrap().to_string())).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
