//! Validation and bias tables: confusion matrices, floor-area distributions
//! per heritage group, threshold shares per period, threshold sweeps and
//! review sampling.

mod binning;
mod crosstab;
mod reports;
mod table;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessor::FacadeMaterial;
use crate::config::{meets, PipelineConfig};
use crate::heritage::{EpcAssessment, HeritageAssignment, HeritageGroup};
use crate::registry::{Category, EpcRecord, IncomeBand, MatchedBuilding, RegionFlag};

pub use binning::{Bin, Binning};
pub use crosstab::{CrossTab, Normalization, Weight, UNBINNED};
pub use reports::{build_reports, ReportInputs};
pub use table::{export_all, export_report, round_half_up, Cell, ReportFormat, Row, Table};

/// Confusion matrix over a shared binning.
pub fn confusion_matrix(pairs: &[(Option<i64>, Option<i64>)], binning: &Binning) -> CrossTab {
    confusion_matrix_with(pairs, binning, binning)
}

/// Register values on rows, predicted values on columns. Missing or
/// out-of-range values land in the unbinned margins.
pub fn confusion_matrix_with(pairs: &[(Option<i64>, Option<i64>)], rows: &Binning, cols: &Binning) -> CrossTab {
    let mut x = CrossTab::new(rows.labels(), cols.labels(), Weight::Count, Normalization::None)
        .with_unbinned_row()
        .with_unbinned_col();
    for &(r, p) in pairs {
        x.add(r.and_then(|v| rows.bin(v)), p.and_then(|v| cols.bin(v)), 1.0);
    }
    x
}

/// Column order of group distribution tables. Certificates without a usable
/// image are counted under "No assigned heritage value", in the missing row.
pub const REPORT_GROUPS: [HeritageGroup; 5] = [
    HeritageGroup::NationalListed,
    HeritageGroup::PlanProtected,
    HeritageGroup::AgeBased,
    HeritageGroup::Predicted,
    HeritageGroup::None,
];

pub fn report_column(g: HeritageGroup) -> usize {
    match g {
        HeritageGroup::NoImage => 4,
        g => REPORT_GROUPS.iter().position(|x| *x == g).expect("listed group"),
    }
}

/// Floor-area-weighted distribution of a binned feature per heritage group.
/// Certificates with no feature value go to `missing_row` when given and
/// are left out otherwise.
pub fn group_distribution(
    epcs: &[EpcAssessment],
    assignments: &[HeritageAssignment],
    feature: &dyn Fn(&EpcAssessment) -> Option<i64>,
    binning: &Binning,
    missing_row: Option<&str>,
) -> CrossTab {
    let mut rows = binning.labels();
    if let Some(m) = missing_row {
        rows.push(m.to_string());
    }
    let cols = REPORT_GROUPS.iter().map(|g| g.label().to_string()).collect();
    let mut x = CrossTab::new(rows, cols, Weight::FloorAreaM2, Normalization::ColumnPct).with_unbinned_row();
    let group: HashMap<&str, HeritageGroup> = assignments.iter().map(|a| (a.epc_id.as_str(), a.group)).collect();
    let missing_idx = binning.len();
    for e in epcs {
        let Some(&g) = group.get(e.epc_id.as_str()) else { continue };
        let row = match feature(e) {
            Some(v) => binning.bin(v),
            None if missing_row.is_some() => Some(missing_idx),
            None => continue,
        };
        x.add(row, Some(report_column(g)), e.heated_floor_area_m2);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    RegionFlag,
    IncomeBand,
    PredictedFacadeMaterial,
}

impl Dimension {
    pub fn labels(self) -> Vec<String> {
        match self {
            Dimension::RegionFlag => vec![RegionFlag::Other.label().into(), RegionFlag::Stockholm.label().into()],
            Dimension::IncomeBand => IncomeBand::ALL.iter().map(|b| b.label().to_string()).collect(),
            Dimension::PredictedFacadeMaterial => FacadeMaterial::ALL.iter().map(|m| capitalize(m.token())).collect(),
        }
    }

    pub fn index_of(self, e: &EpcAssessment) -> Option<usize> {
        match self {
            Dimension::RegionFlag => e.region_flag.map(|f| match f {
                RegionFlag::Other => 0,
                RegionFlag::Stockholm => 1,
            }),
            Dimension::IncomeBand => e.income_band.and_then(|b| IncomeBand::ALL.iter().position(|x| *x == b)),
            Dimension::PredictedFacadeMaterial => e
                .best_observation
                .as_ref()
                .and_then(|o| FacadeMaterial::ALL.iter().position(|m| *m == o.assessment.facade_material)),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Per (period, dimension value): certificates whose predicted value meets
/// the threshold, over all certificates with a predicted value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareTab {
    pub dimension: Dimension,
    pub qualifying: CrossTab,
    pub observed: CrossTab,
}

impl ShareTab {
    pub fn share(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.observed.cells[row][col];
        (d > 0.0).then(|| 100.0 * self.qualifying.cells[row][col] / d)
    }

    pub fn column_share(&self, col: usize) -> Option<f64> {
        let d = self.observed.col_totals()[col];
        (d > 0.0).then(|| 100.0 * self.qualifying.col_totals()[col] / d)
    }

    fn kept_rows(&self) -> Vec<usize> {
        let totals = self.observed.row_totals();
        let last = self.observed.row_labels.len() - 1;
        (0..self.observed.row_labels.len()).filter(|&r| !(r == last && totals[r] == 0.0)).collect()
    }

    /// Counts, denominators and shares side by side, closed by a grand total.
    pub fn to_detailed_table(&self, name: &str, title: &str, qualifying_label: &str, decimals: usize) -> Table {
        let labels = &self.observed.col_labels;
        let mut columns: Vec<String> = labels.iter().map(|l| format!("{qualifying_label}: {l}")).collect();
        columns.extend(labels.iter().map(|l| format!("All observations: {l}")));
        columns.extend(labels.iter().map(|l| format!("Share: {l}")));
        let mut t = Table::new(name, title, "Construction period", columns);
        let n = labels.len();
        for r in self.kept_rows() {
            let mut cells: Vec<Cell> = (0..n).map(|c| Cell::count(self.qualifying.cells[r][c] as i64)).collect();
            cells.extend((0..n).map(|c| Cell::count(self.observed.cells[r][c] as i64)));
            cells.extend((0..n).map(|c| Cell::percent(self.share(r, c), decimals)));
            t.push(self.observed.row_labels[r].clone(), cells);
        }
        let q = self.qualifying.col_totals();
        let o = self.observed.col_totals();
        let mut cells: Vec<Cell> = q.iter().map(|v| Cell::count(*v as i64)).collect();
        cells.extend(o.iter().map(|v| Cell::count(*v as i64)));
        cells.extend((0..n).map(|c| Cell::percent(self.column_share(c), decimals)));
        t.push("Grand Total", cells);
        t
    }

    /// Shares only, closed by the grand total share and certificate count.
    pub fn to_share_table(&self, name: &str, title: &str, decimals: usize) -> Table {
        let n = self.observed.col_labels.len();
        let mut t = Table::new(name, title, "Construction period", self.observed.col_labels.clone());
        for r in self.kept_rows() {
            t.push(self.observed.row_labels[r].clone(), (0..n).map(|c| Cell::percent(self.share(r, c), decimals)).collect());
        }
        t.push("Grand Total [%]", (0..n).map(|c| Cell::percent(self.column_share(c), decimals)).collect());
        t.push("Grand Total [pc]", self.observed.col_totals().iter().map(|v| Cell::count(*v as i64)).collect());
        t
    }
}

/// Rows are periods of the register construction year. Certificates without
/// a predicted value or without the dimension are excluded.
pub fn share_above_threshold(
    epcs: &[EpcAssessment],
    dimension: Dimension,
    binning: &Binning,
    cfg: &PipelineConfig,
) -> ShareTab {
    let blank = || CrossTab::new(binning.labels(), dimension.labels(), Weight::Count, Normalization::None).with_unbinned_row();
    let mut qualifying = blank();
    let mut observed = blank();
    for e in epcs {
        let (Some(v), Some(c)) = (e.predicted_heritage_value, dimension.index_of(e)) else { continue };
        let r = binning.bin(i64::from(e.construction_year));
        observed.add(r, Some(c), 1.0);
        if cfg.meets_threshold(u32::from(v)) {
            qualifying.add(r, Some(c), 1.0);
        }
    }
    ShareTab { dimension, qualifying, observed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: u32,
    pub count: usize,
    /// Share of scored certificates; `None` when nothing is scored.
    pub count_pct: Option<f64>,
    pub floor_area_m2: f64,
    pub floor_area_pct: Option<f64>,
}

/// Inclusion among scored certificates at each threshold.
pub fn threshold_sweep(epcs: &[EpcAssessment], thresholds: &[u32], inclusive: bool) -> Vec<SweepPoint> {
    let scored: Vec<(u32, f64)> = epcs
        .iter()
        .filter_map(|e| e.predicted_heritage_value.map(|v| (u32::from(v), e.heated_floor_area_m2)))
        .collect();
    let n = scored.len();
    let area: f64 = scored.iter().map(|s| s.1).sum();
    thresholds
        .iter()
        .map(|&t| {
            let inc: Vec<&(u32, f64)> = scored.iter().filter(|(v, _)| meets(*v, t, inclusive)).collect();
            let a: f64 = inc.iter().map(|s| s.1).sum();
            SweepPoint {
                threshold: t,
                count: inc.len(),
                count_pct: (n > 0).then(|| 100.0 * inc.len() as f64 / n as f64),
                floor_area_m2: a,
                floor_area_pct: (area > 0.0).then(|| 100.0 * a / area),
            }
        })
        .collect()
}

pub fn sweep_table(points: &[SweepPoint], name: &str, title: &str, decimals: usize) -> Table {
    let cols = ["Included [pc]", "Included [%]", "Included floor area [m²]", "Included floor area [%]"];
    let mut t = Table::new(name, title, "Threshold", cols.iter().map(|s| s.to_string()).collect());
    for p in points {
        t.push(
            p.threshold.to_string(),
            vec![
                Cell::count(p.count as i64),
                Cell::percent(p.count_pct, decimals),
                Cell::number(p.floor_area_m2, 2),
                Cell::percent(p.floor_area_pct, decimals),
            ],
        );
    }
    t
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub epc_ids: Vec<String>,
    pub warnings: Vec<String>,
}

/// Seeded sample without replacement among certificates whose predicted
/// value is at least `min_score`. With `regions`, the sample is split as
/// evenly as possible over the listed region names in the given order; a
/// short stratum is returned whole.
pub fn sample_for_review(
    epcs: &[EpcAssessment],
    n: usize,
    min_score: u32,
    regions: Option<&[String]>,
    seed: u64,
) -> Sample {
    let mut pool: Vec<&EpcAssessment> =
        epcs.iter().filter(|e| e.predicted_heritage_value.is_some_and(|v| u32::from(v) >= min_score)).collect();
    pool.sort_by(|a, b| a.epc_id.cmp(&b.epc_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut draw = |stratum: Vec<&EpcAssessment>, k: usize, what: &str, warnings: &mut Vec<String>| -> Vec<String> {
        if k >= stratum.len() {
            if k > stratum.len() {
                warnings.push(format!("{what}: requested {k} but only {} eligible; returning all", stratum.len()));
            }
            return stratum.iter().map(|e| e.epc_id.clone()).collect();
        }
        rand::seq::index::sample(&mut rng, stratum.len(), k).into_iter().map(|i| stratum[i].epc_id.clone()).collect()
    };
    let epc_ids = match regions {
        None | Some([]) => draw(pool, n, "pool", &mut warnings),
        Some(regions) => {
            let distinct: BTreeSet<&String> = regions.iter().collect();
            if distinct.len() != regions.len() {
                warnings.push("duplicate region names ignored".into());
            }
            let mut seen = BTreeSet::new();
            let regions: Vec<&String> = regions.iter().filter(|r| seen.insert(*r)).collect();
            let k = regions.len();
            let mut out = Vec::new();
            for (i, region) in regions.iter().enumerate() {
                let quota = n / k + usize::from(i < n % k);
                let stratum: Vec<&EpcAssessment> = pool
                    .iter()
                    .copied()
                    .filter(|e| e.region_name.as_deref().is_some_and(|r| r.eq_ignore_ascii_case(region)))
                    .collect();
                out.extend(draw(stratum, quota, &format!("region {region}"), &mut warnings));
            }
            out
        }
    };
    Sample { epc_ids, warnings }
}

/// Counts per category at each stage from certificates to observed
/// certificates. `total` is counted directly, not summed from categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    pub stages: Vec<String>,
    pub by_category: BTreeMap<Category, Vec<u64>>,
    pub total: Vec<u64>,
}

pub const FUNNEL_STAGES: [&str; 5] = [
    "EPC buildings",
    "Matched footprints",
    "Buildings with a valid viewpoint",
    "Buildings with at least one usable image",
    "Observations of buildings",
];

/// Building stages count footprints linked to a certificate, under that
/// certificate's category.
pub fn funnel(
    epcs: &[EpcRecord],
    buildings: &[MatchedBuilding],
    with_viewpoint: &BTreeSet<String>,
    with_image: &BTreeSet<String>,
    assessed: &[EpcAssessment],
) -> Funnel {
    let category: HashMap<&str, Category> = epcs.iter().map(|e| (e.epc_id.as_str(), e.category)).collect();
    let mut by_category: BTreeMap<Category, Vec<u64>> = Category::ALL.iter().map(|c| (*c, vec![0; 5])).collect();
    let mut total = vec![0u64; 5];
    for e in epcs {
        by_category.get_mut(&e.category).expect("all categories")[0] += 1;
    }
    total[0] = epcs.len() as u64;
    let linked: Vec<(&MatchedBuilding, Category)> = buildings
        .iter()
        .filter_map(|b| b.epc_id.as_deref().and_then(|id| category.get(id)).map(|c| (b, *c)))
        .collect();
    let stage_sets: [Option<&BTreeSet<String>>; 3] = [None, Some(with_viewpoint), Some(with_image)];
    for (i, set) in stage_sets.iter().enumerate() {
        let stage = i + 1;
        let keep = |b: &MatchedBuilding| set.is_none_or(|s| s.contains(&b.building_uuid));
        for (b, c) in &linked {
            if keep(b) {
                by_category.get_mut(c).expect("all categories")[stage] += 1;
            }
        }
        total[stage] = buildings
            .iter()
            .filter(|b| b.epc_id.as_deref().is_some_and(|id| category.contains_key(id)) && keep(b))
            .count() as u64;
    }
    for e in assessed.iter().filter(|e| e.n_observations > 0) {
        by_category.get_mut(&e.category).expect("all categories")[4] += 1;
    }
    total[4] = assessed.iter().filter(|e| e.n_observations > 0).count() as u64;
    Funnel { stages: FUNNEL_STAGES.iter().map(|s| s.to_string()).collect(), by_category, total }
}

impl Funnel {
    /// Whether the category rows add up to the directly counted totals.
    pub fn is_consistent(&self) -> bool {
        (0..self.stages.len()).all(|i| self.by_category.values().map(|v| v[i]).sum::<u64>() == self.total[i])
    }

    pub fn to_table(&self, name: &str, title: &str) -> Table {
        let mut t = Table::new(name, title, "Category", self.stages.clone());
        for (c, v) in &self.by_category {
            t.push(c.label(), v.iter().map(|x| Cell::count(*x as i64)).collect());
        }
        t.push("Total", self.total.iter().map(|x| Cell::count(*x as i64)).collect());
        t
    }
}
