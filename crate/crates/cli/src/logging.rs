//! Line-delimited JSON log records on standard error.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};

struct JsonLogger {
    level: LevelFilter,
}

impl Log for JsonLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= self.level
    }

    fn log(&self, r: &Record) {
        if !self.enabled(r.metadata()) {
            return;
        }
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        let line = serde_json::json!({
            "ts": (ts * 1000.0).round() / 1000.0,
            "level": r.level().as_str().to_ascii_lowercase(),
            "target": r.target(),
            "msg": r.args().to_string(),
        });
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

pub fn init(level: &str) -> Result<(), String> {
    let level: LevelFilter = match level {
        "off" => LevelFilter::Off,
        l => l
            .parse::<Level>()
            .map(|l| l.to_level_filter())
            .map_err(|_| format!("unknown log level {l:?}"))?,
    };
    log::set_boxed_logger(Box::new(JsonLogger { level })).map_err(|e| e.to_string())?;
    log::set_max_level(level);
    Ok(())
}
