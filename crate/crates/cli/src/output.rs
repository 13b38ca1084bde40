use std::fs;
use std::path::Path;

use serde::Serialize;

/// One file produced by a run, held in memory until the run succeeds.
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct Outputs {
    pub files: Vec<OutputFile>,
    /// Set when a configured z-score gate was exceeded.
    pub gate_failed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs { files: Vec::new(), gate_failed: false }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), String> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| e.to_string())?;
        bytes.push(b'\n');
        self.files.push(OutputFile { name: name.to_string(), bytes });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: Table) -> Result<(), String> {
        self.files.push(OutputFile { name: name.to_string(), bytes: table.into_bytes()? });
        Ok(())
    }

    pub fn write_all(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for f in &self.files {
            fs::write(dir.join(&f.name), &f.bytes)?;
        }
        Ok(())
    }
}

/// CSV table preceded by a `# schema vN` line.
pub struct Table {
    schema: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, header: Vec<String>) -> Self {
        Table { schema: schema.to_string(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn into_bytes(self) -> Result<Vec<u8>, String> {
        let mut buf = format!("# {}\n", self.schema).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header).map_err(|e| e.to_string())?;
            for r in &self.rows {
                w.write_record(r).map_err(|e| e.to_string())?;
            }
            w.flush().map_err(|e| e.to_string())?;
        }
        Ok(buf)
    }
}

/// Shortest round-trip representation, so output bytes are stable.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
