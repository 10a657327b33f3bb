use std::path::Path;

use serde::{Deserialize, Serialize};

/// One row per delivered signaling message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRow {
    pub time_ms: String,
    pub tx_id: u64,
    pub kind: String,
    pub src: String,
    pub dst: String,
}

/// One row per rule, written when the rule takes effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRow {
    pub time_ms: String,
    pub tx_id: u64,
    pub rule_kind: String,
    pub subject_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRow {
    pub time_ms: String,
    pub entity_id: String,
    pub load_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRow {
    pub tx_id: u64,
    pub reason: String,
    pub subject: String,
    pub started_ms: String,
    /// Empty when the run ended first.
    pub completed_ms: String,
    pub messages: usize,
    pub rules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub mn_id: String,
    pub open_ms: String,
    pub close_ms: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub time_ms: String,
    pub kind: String,
    pub subject: String,
    pub detail: String,
}

/// Every path a flow has had; `tx_id` is 0 outside transactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub time_ms: String,
    pub flow_id: String,
    pub tx_id: u64,
    pub cause: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLogs {
    pub messages: Vec<MessageRow>,
    pub rules: Vec<RuleRow>,
    pub load: Vec<LoadRow>,
    pub transactions: Vec<TransactionRow>,
    pub instances: Vec<InstanceRow>,
    pub events: Vec<EventRow>,
    pub paths: Vec<PathRow>,
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

impl RunLogs {
    pub const FILES: [&'static str; 7] =
        ["messages.csv", "rules.csv", "load.csv", "transactions.csv", "instances.csv", "events.csv", "paths.csv"];

    /// The CSV text of one log file by name.
    pub fn csv(&self, file: &str) -> Option<String> {
        Some(match file {
            "messages.csv" => to_csv(&self.messages, &["time_ms", "tx_id", "kind", "src", "dst"]),
            "rules.csv" => to_csv(&self.rules, &["time_ms", "tx_id", "rule_kind", "subject_id", "detail"]),
            "load.csv" => to_csv(&self.load, &["time_ms", "entity_id", "load_fraction"]),
            "transactions.csv" => to_csv(
                &self.transactions,
                &["tx_id", "reason", "subject", "started_ms", "completed_ms", "messages", "rules"],
            ),
            "instances.csv" => to_csv(&self.instances, &["mn_id", "open_ms", "close_ms", "weight"]),
            "events.csv" => to_csv(&self.events, &["time_ms", "kind", "subject", "detail"]),
            "paths.csv" => to_csv(&self.paths, &["time_ms", "flow_id", "tx_id", "cause", "path"]),
            _ => return None,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in Self::FILES {
            std::fs::write(dir.join(f), self.csv(f).unwrap())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_header_is_fixed() {
        let logs = RunLogs {
            messages: vec![MessageRow {
                time_ms: "3".into(),
                tx_id: 1,
                kind: "ParamEnquiry".into(),
                src: "ctrl".into(),
                dst: "AR2".into(),
            }],
            ..Default::default()
        };
        assert_eq!(logs.csv("messages.csv").unwrap(), "time_ms,tx_id,kind,src,dst\n3,1,ParamEnquiry,ctrl,AR2\n");
        assert_eq!(logs.csv("load.csv").unwrap(), "time_ms,entity_id,load_fraction\n");
    }
}
