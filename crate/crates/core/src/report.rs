//! Deterministic text output: CSV tables, matrices and the run manifest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::SelectionFrequencyTable;
use crate::config::strategy_name;
use crate::federation::{FederationConfig, Metrics, RoundRecord};
use crate::selection::Modality;

pub const METRICS_SCHEMA: &str = "# schema: fedmgp.metrics.v1";
pub const SELECTION_SCHEMA: &str = "# schema: fedmgp.selection_trace.v1";
pub const FREQUENCY_SCHEMA: &str = "# schema: fedmgp.selection_frequency.v1";
pub const MATRIX_SCHEMA: &str = "# schema: fedmgp.matrix.v1";
pub const VERIFY_SCHEMA: &str = "# schema: fedmgp.verify.v1";
pub const COMPARE_SCHEMA: &str = "# schema: fedmgp.compare.v1";
pub const SNR_SCHEMA: &str = "# schema: fedmgp.snr.v1";

/// Formats with 9 significant digits so file digests are stable.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" { "0".into() } else { s }
    } else {
        format!("{v:.8e}")
    }
}

/// A CSV document headed by its schema line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &'static str, header: Vec<&'static str>) -> Self {
        Self {
            schema,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(self.schema);
        out.push('\n');
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Parses a rendered table back into header and rows (schema line skipped).
pub fn parse_table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().map(|h| h.split(',').map(str::to_string).collect()).unwrap_or_default();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn metric_cells(m: &Metrics) -> [String; 5] {
    [m.local, m.base, m.novel, m.hm, m.cm].map(fmt_f64)
}

/// One row per client per round, then one `mean` row per round.
pub fn metrics_table(cfg: &FederationConfig, records: &[RoundRecord]) -> Table {
    let mut t = Table::new(
        METRICS_SCHEMA,
        vec![
            "round", "client", "strategy", "loss_ce", "loss_div", "acc_local", "acc_base", "acc_novel", "hm", "cm",
            "min_snr", "alpha_g", "uplink_scalars",
        ],
    );
    let strategy = strategy_name(cfg.strategy);
    for rec in records {
        let uplink = rec.comm.uplink_total().to_string();
        for c in &rec.clients {
            let (ce, div) = match &c.loss {
                Some(l) => (fmt_f64(l.ce), fmt_f64(l.div)),
                None => (String::new(), String::new()),
            };
            let up = if c.loss.is_some() { uplink.clone() } else { "0".into() };
            let [local, base, novel, hm, cm] = metric_cells(&c.metrics);
            t.push(vec![
                rec.round.to_string(),
                c.client.to_string(),
                strategy.into(),
                ce,
                div,
                local,
                base,
                novel,
                hm,
                cm,
                fmt_f64(rec.min_snr),
                fmt_f64(rec.alpha_g),
                up,
            ]);
        }
        let loss = rec.mean_loss();
        let [local, base, novel, hm, cm] = metric_cells(&rec.mean);
        t.push(vec![
            rec.round.to_string(),
            "mean".into(),
            strategy.into(),
            fmt_f64(loss.ce),
            fmt_f64(loss.div),
            local,
            base,
            novel,
            hm,
            cm,
            fmt_f64(rec.min_snr),
            fmt_f64(rec.alpha_g),
            (rec.comm.uplink_total() * rec.participants.len()).to_string(),
        ]);
    }
    t
}

/// Every group of every participant per round and modality.
pub fn selection_trace_table(records: &[RoundRecord]) -> Table {
    let mut t = Table::new(
        SELECTION_SCHEMA,
        vec!["round", "client", "modality", "group", "selected", "rank", "score", "prob"],
    );
    for rec in records {
        for (&client, sel) in rec.participants.iter().zip(&rec.selections) {
            for m in [Modality::Text, Modality::Visual] {
                let out = sel.get(m);
                let ranked = out.ranked();
                for g in 0..out.probs.len() {
                    let rank = ranked.iter().position(|&j| j == g);
                    t.push(vec![
                        rec.round.to_string(),
                        client.to_string(),
                        m.as_str().into(),
                        g.to_string(),
                        u8::from(rank.is_some()).to_string(),
                        rank.map_or(String::new(), |r| r.to_string()),
                        out.scores.as_ref().map_or(String::new(), |s| fmt_f64(s[g])),
                        fmt_f64(out.probs[g]),
                    ]);
                }
            }
        }
    }
    t
}

pub fn frequency_table(freq: &SelectionFrequencyTable) -> Table {
    let mut t = Table::new(
        FREQUENCY_SCHEMA,
        vec!["round", "modality", "group", "count", "fraction", "never_selected"],
    );
    for r in &freq.rows {
        let never = freq.never_selected.contains(&(r.modality, r.group));
        t.push(vec![
            r.round.to_string(),
            r.modality.as_str().into(),
            r.group.to_string(),
            r.count.to_string(),
            fmt_f64(r.fraction),
            u8::from(never).to_string(),
        ]);
    }
    t
}

pub fn snr_table(records: &[RoundRecord]) -> Table {
    let mut t = Table::new(SNR_SCHEMA, vec!["round", "modality", "slot", "beta", "phi", "snr", "infinite"]);
    for rec in records {
        for (m, rep) in [(Modality::Text, &rec.text_snr), (Modality::Visual, &rec.visual_snr)] {
            for s in rep.iter().flat_map(|r| &r.per_slot) {
                t.push(vec![
                    rec.round.to_string(),
                    m.as_str().into(),
                    s.slot.to_string(),
                    fmt_f64(s.beta),
                    fmt_f64(s.phi),
                    fmt_f64(s.snr),
                    u8::from(s.infinite).to_string(),
                ]);
            }
        }
    }
    t
}

/// Dense square matrix with no header row beyond the schema.
pub fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut out = String::from(MATRIX_SCHEMA);
    out.push('\n');
    for row in m {
        out.push_str(&row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// The effective config in the parser's format.
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileDigest>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_f64(-1234.5678912345), "-1234.56789");
        assert_eq!(fmt_f64(1.5e-7), "1.50000000e-7");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        let back: f64 = fmt_f64(std::f64::consts::PI).parse().unwrap();
        assert!((back - std::f64::consts::PI).abs() < 1e-8);
    }

    #[test]
    fn tables_round_trip() {
        let mut t = Table::new(MATRIX_SCHEMA, vec!["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        let text = t.render();
        assert!(text.starts_with("# schema:"));
        let (h, rows) = parse_table(&text);
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "x".to_string()]]);
    }

    #[test]
    fn matrix_rows() {
        let text = matrix_csv(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        assert_eq!(text, format!("{MATRIX_SCHEMA}\n1,0.5\n0.5,1\n"));
    }
}
