//! Line-oriented JSON logging on stderr.

use serde_json::{json, Map, Value};

pub fn info(cmd: &str, event: &str, fields: Value) {
    emit("info", cmd, event, fields);
}

pub fn warn(cmd: &str, event: &str, fields: Value) {
    emit("warn", cmd, event, fields);
}

/// The single machine-readable line printed before a nonzero exit.
pub fn error(kind: &str, message: &str) {
    let line = json!({"level": "error", "kind": kind, "message": message.trim_end()});
    eprintln!("{line}");
}

fn emit(level: &str, cmd: &str, event: &str, fields: Value) {
    let mut obj = Map::new();
    obj.insert("level".into(), level.into());
    obj.insert("cmd".into(), cmd.into());
    obj.insert("event".into(), event.into());
    if let Value::Object(extra) = fields {
        obj.extend(extra);
    }
    eprintln!("{}", Value::Object(obj));
}
