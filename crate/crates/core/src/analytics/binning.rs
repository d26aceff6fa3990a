//! Ordered, first-match integer binnings.

use serde::{Deserialize, Serialize};

/// Half-open integer interval `[lo, hi)` with a display label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    pub lo: i64,
    pub hi: i64,
}

/// Bins are tested in display order and the first match wins, so a narrow
/// bin listed before a wider one carves its values out of the wider one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binning {
    pub bins: Vec<Bin>,
}

/// Upper bound for open-ended period bins.
const OPEN_END: i64 = 10_000;

impl Binning {
    pub fn labels(&self) -> Vec<String> {
        self.bins.iter().map(|b| b.label.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin(&self, v: i64) -> Option<usize> {
        self.bins.iter().position(|b| b.lo <= v && v < b.hi)
    }

    pub fn label_of(&self, v: i64) -> Option<&str> {
        self.bin(v).map(|i| self.bins[i].label.as_str())
    }

    /// Centuries 1000–1800 then decades 1900–2020; the last decade is open.
    pub fn construction_periods() -> Binning {
        let mut bins: Vec<Bin> =
            (10..=18).map(|c| Bin { label: (c * 100).to_string(), lo: c * 100, hi: (c + 1) * 100 }).collect();
        bins.extend((190..=202).map(|d| Bin { label: (d * 10).to_string(), lo: d * 10, hi: (d + 1) * 10 }));
        bins.last_mut().expect("decades").hi = OPEN_END;
        Binning { bins }
    }

    /// Policy periods; 1929 is its own bin ahead of 1920–1944.
    pub fn report_periods() -> Binning {
        let b = |label: &str, lo: i64, hi: i64| Bin { label: label.into(), lo, hi };
        Binning {
            bins: vec![
                b("Before 1900", 1000, 1900),
                b("1900-1919", 1900, 1920),
                b("1929", 1929, 1930),
                b("1920-1944 (excl. 1929)", 1920, 1945),
                b("1945-1959", 1945, 1960),
                b("1960-1974", 1960, 1975),
                b("1975-1989", 1975, 1990),
                b("1990 or after", 1990, OPEN_END),
            ],
        }
    }

    /// Predicted heritage value bins labelled by their lower edge.
    pub fn heritage_value() -> Binning {
        let edges = [1, 5, 10, 20, 30, 40, 50, 60, 65, 70, 75, 80, 85, 90, 95, 101];
        Binning {
            bins: edges.windows(2).map(|w| Bin { label: w[0].to_string(), lo: w[0], hi: w[1] }).collect(),
        }
    }

    /// One bin per distinct value, ascending.
    pub fn distinct(values: impl IntoIterator<Item = i64>) -> Binning {
        let set: std::collections::BTreeSet<i64> = values.into_iter().collect();
        Binning { bins: set.into_iter().map(|v| Bin { label: v.to_string(), lo: v, hi: v + 1 }).collect() }
    }
}
